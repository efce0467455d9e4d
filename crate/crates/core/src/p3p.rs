//! Calibrated perspective-three-point minimal solver.
//!
//! The solver follows the classical three-ray distance formulation: the law of
//! cosines couples the three unknown depths, elimination yields a quartic in
//! the depth ratio, and each admissible root is refined with Gauss-Newton
//! before the rigid alignment recovers the pose. Every returned pose is
//! checked against the three input correspondences; candidates whose residual
//! exceeds [`P3P_REPROJECTION_TOL`] pixels are discarded.

use crate::geometry::{Correspondence, Intrinsics, Pose};
use nalgebra::{DMatrix, Matrix3, Vector3};
use thiserror::Error;

/// Maximum reprojection residual (pixels) any returned pose may have on the
/// three input points.
pub const P3P_REPROJECTION_TOL: f64 = 1e-6;

/// Minimum triangle altitude (meters) below which the three world points are
/// treated as collinear.
pub const COLLINEARITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PoseSolveError {
    #[error("solver requires exactly 3 correspondences, got {0}")]
    WrongSampleSize(usize),
    #[error("world points are collinear (smallest triangle altitude {0:.3e} m)")]
    CollinearPoints(f64),
    #[error("two pixel rays coincide")]
    CoincidentRays,
    #[error("no real solution satisfies the reprojection contract")]
    NoRealSolution,
}

/// Solve the calibrated P3P problem. Returns up to four poses, each of which
/// reprojects the inputs with residual below [`P3P_REPROJECTION_TOL`].
pub fn solve_p3p(
    corrs: &[Correspondence],
    intrinsics: &Intrinsics,
) -> Result<Vec<Pose>, PoseSolveError> {
    if corrs.len() != 3 {
        return Err(PoseSolveError::WrongSampleSize(corrs.len()));
    }
    let p1 = corrs[0].point;
    let p2 = corrs[1].point;
    let p3 = corrs[2].point;

    let altitude = smallest_altitude(&p1, &p2, &p3);
    if altitude <= COLLINEARITY_TOL {
        return Err(PoseSolveError::CollinearPoints(altitude));
    }

    let f1 = intrinsics.bearing(corrs[0].pixel);
    let f2 = intrinsics.bearing(corrs[1].pixel);
    let f3 = intrinsics.bearing(corrs[2].pixel);
    for (u, v) in [(&f1, &f2), (&f1, &f3), (&f2, &f3)] {
        if u.cross(v).norm() < 1e-9 {
            return Err(PoseSolveError::CoincidentRays);
        }
    }

    // Side lengths opposite each vertex and ray-pair cosines.
    let a = (p2 - p3).norm(); // between points 2 and 3
    let b = (p1 - p3).norm(); // between points 1 and 3
    let c = (p1 - p2).norm(); // between points 1 and 2
    let cos_alpha = f2.dot(&f3);
    let cos_beta = f1.dot(&f3);
    let cos_gamma = f1.dot(&f2);

    let n = (a * a) / (b * b);
    let m = (c * c) / (b * b);

    // With depths s2 = u*s1, s3 = v*s1, eliminating u between the two
    // depth-ratio equations leaves u = num(v) / den(v) and a quartic in v:
    //   num^2 - 2*cos_gamma*num*den + den^2*q = 0
    let num = [n - m + 1.0, -2.0 * (n - m) * cos_beta, n - m - 1.0];
    let den = [2.0 * cos_gamma, -2.0 * cos_alpha];
    let q = [1.0 - m, 2.0 * m * cos_beta, -m];

    let num_sq = poly_mul(&num, &num);
    let num_den = poly_mul(&num, &den);
    let den_sq_q = poly_mul(&poly_mul(&den, &den), &q);
    let mut quartic = [0.0f64; 5];
    for i in 0..5 {
        let nd = if i < num_den.len() { num_den[i] } else { 0.0 };
        let dq = if i < den_sq_q.len() { den_sq_q[i] } else { 0.0 };
        quartic[i] = num_sq[i] - 2.0 * cos_gamma * nd + dq;
    }

    let mut candidates: Vec<(f64, f64)> = Vec::new(); // (u, v)
    for v in real_roots(&quartic) {
        if v <= 0.0 {
            continue;
        }
        let w2 = 1.0 + v * v - 2.0 * v * cos_beta;
        if w2 <= 0.0 {
            continue;
        }
        let num_v = num[0] + num[1] * v + num[2] * v * v;
        let den_v = den[0] + den[1] * v;
        if den_v.abs() > 1e-9 * (1.0 + num_v.abs()) {
            candidates.push((num_v / den_v, v));
        } else {
            // Degenerate elimination; fall back to the quadratic in u.
            let disc = cos_gamma * cos_gamma - (1.0 - m * w2);
            if disc >= 0.0 {
                let root = disc.sqrt();
                candidates.push((cos_gamma + root, v));
                candidates.push((cos_gamma - root, v));
            }
        }
    }

    let mut poses: Vec<(f64, Pose)> = Vec::new();
    for (u, v) in candidates {
        if u <= 0.0 {
            continue;
        }
        let w2 = 1.0 + v * v - 2.0 * v * cos_beta;
        let s1 = b / w2.sqrt();
        let depths = refine_depths(
            [s1, u * s1, v * s1],
            [a, b, c],
            [cos_alpha, cos_beta, cos_gamma],
        );
        if depths.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            continue;
        }
        let cam = [depths[0] * f1, depths[1] * f2, depths[2] * f3];
        let Some(pose) = align_rigid(&[p1, p2, p3], &cam) else {
            continue;
        };
        let residual = corrs
            .iter()
            .map(|corrr| crate::geometry::reprojection_error(&pose, intrinsics, corrr))
            .fold(0.0f64, f64::max);
        if residual < P3P_REPROJECTION_TOL {
            // Drop duplicates arising from repeated quartic roots.
            let dup = poses.iter().any(|(_, kept)| {
                (kept.center - pose.center).norm() < 1e-7
                    && (kept.rotation - pose.rotation).abs().max() < 1e-7
            });
            if !dup {
                poses.push((residual, pose));
            }
        }
    }

    if poses.is_empty() {
        return Err(PoseSolveError::NoRealSolution);
    }
    poses.sort_by(|x, y| x.0.total_cmp(&y.0));
    poses.truncate(4);
    Ok(poses.into_iter().map(|(_, p)| p).collect())
}

fn smallest_altitude(p1: &Vector3<f64>, p2: &Vector3<f64>, p3: &Vector3<f64>) -> f64 {
    let area2 = (p2 - p1).cross(&(p3 - p1)).norm(); // twice the triangle area
    let longest = (p2 - p1)
        .norm()
        .max((p3 - p1).norm())
        .max((p3 - p2).norm());
    if longest == 0.0 {
        return 0.0;
    }
    area2 / longest
}

/// Ascending-coefficient polynomial product.
fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Real roots of a polynomial with ascending coefficients (degree <= 4),
/// via companion-matrix eigenvalues plus Newton polishing.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let max_mag = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max_mag == 0.0 {
        return Vec::new();
    }
    // Trim numerically-vanishing leading coefficients.
    let mut degree = coeffs.len() - 1;
    while degree > 0 && coeffs[degree].abs() < 1e-13 * max_mag {
        degree -= 1;
    }
    if degree == 0 {
        return Vec::new();
    }
    let lead = coeffs[degree];
    if degree == 1 {
        return vec![polish_root(coeffs, -coeffs[0] / lead)];
    }

    let mut companion = DMatrix::<f64>::zeros(degree, degree);
    for row in 1..degree {
        companion[(row, row - 1)] = 1.0;
    }
    for row in 0..degree {
        companion[(row, degree - 1)] = -coeffs[row] / lead;
    }
    let eigen = companion.complex_eigenvalues();

    let mut roots: Vec<f64> = Vec::new();
    for e in eigen.iter() {
        // Keep near-real eigenvalues generously: close double roots surface
        // as complex pairs with small imaginary parts, and spurious picks
        // are rejected later by the reprojection contract.
        if e.im.abs() > 1e-3 * (1.0 + e.re.abs()) {
            continue;
        }
        let r = polish_root(coeffs, e.re);
        if roots.iter().all(|&k| (k - r).abs() > 1e-10 * (1.0 + r.abs())) {
            roots.push(r);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

fn polish_root(coeffs: &[f64], mut x: f64) -> f64 {
    for _ in 0..8 {
        let mut value = 0.0;
        let mut deriv = 0.0;
        for &c in coeffs.iter().rev() {
            deriv = deriv * x + value;
            value = value * x + c;
        }
        if deriv.abs() < 1e-300 {
            break;
        }
        let step = value / deriv;
        if !step.is_finite() {
            break;
        }
        x -= step;
        if step.abs() < 1e-14 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// Gauss-Newton on the three law-of-cosines residuals that the depths must
/// satisfy; a handful of steps takes quartic-root accuracy down to machine
/// precision.
fn refine_depths(mut s: [f64; 3], sides: [f64; 3], cosines: [f64; 3]) -> [f64; 3] {
    let [a, b, c] = sides;
    let [cos_alpha, cos_beta, cos_gamma] = cosines;
    for _ in 0..12 {
        let r = Vector3::new(
            s[0] * s[0] + s[1] * s[1] - 2.0 * s[0] * s[1] * cos_gamma - c * c,
            s[0] * s[0] + s[2] * s[2] - 2.0 * s[0] * s[2] * cos_beta - b * b,
            s[1] * s[1] + s[2] * s[2] - 2.0 * s[1] * s[2] * cos_alpha - a * a,
        );
        if r.abs().max() < 1e-14 * (1.0 + a * a + b * b + c * c) {
            break;
        }
        let jac = Matrix3::new(
            2.0 * s[0] - 2.0 * s[1] * cos_gamma,
            2.0 * s[1] - 2.0 * s[0] * cos_gamma,
            0.0,
            2.0 * s[0] - 2.0 * s[2] * cos_beta,
            0.0,
            2.0 * s[2] - 2.0 * s[0] * cos_beta,
            0.0,
            2.0 * s[1] - 2.0 * s[2] * cos_alpha,
            2.0 * s[2] - 2.0 * s[1] * cos_alpha,
        );
        let Some(delta) = jac.lu().solve(&r) else {
            break;
        };
        s[0] -= delta.x;
        s[1] -= delta.y;
        s[2] -= delta.z;
    }
    s
}

/// Rigid alignment `x_cam = R (x_world - C)` from three paired points.
fn align_rigid(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Option<Pose> {
    let cw = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (world[i] - cw) * (cam[i] - cc).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut rotation = v_t.transpose() * u.transpose();
    if rotation.determinant() < 0.0 {
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        rotation = v_t.transpose() * flip * u.transpose();
    }
    let center = cw - rotation.transpose() * cc;
    let pose = Pose::new(rotation, center);
    pose.validate().ok()?;
    Some(pose)
}
