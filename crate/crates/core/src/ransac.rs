//! Robust pose estimation over hybrid match sets.
//!
//! Hypotheses are generated only from unique matches, sampled with a
//! co-visibility prior: after a uniformly drawn first match, every further
//! candidate must share at least one observing camera with the first point.
//! All matches, including multi-matches, score each hypothesis; a
//! multi-match contributes at most one inlier per feature, with the pose
//! disambiguating among its candidate points.

use crate::geometry::{Intrinsics, Pose};
use crate::hybrid::HybridModel;
use crate::matcher::MatchSet;
use crate::p3p::solve_p3p;
use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// RANSAC parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Minimal sample size; the calibrated solver needs exactly 3.
    pub sample_size: usize,
    /// Max failed co-visibility draws before a sample is dropped (F).
    pub max_sample_trials: u32,
    /// Max iterations (T), counting dropped samples.
    pub max_iterations: u32,
    /// Inlier reprojection threshold in pixels.
    pub sigma_px: f64,
    /// Inliers required for a query to count as registered.
    pub min_inliers: u32,
    /// Early-exit confidence for the adaptive iteration bound.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            sample_size: 3,
            max_sample_trials: 10,
            max_iterations: 5000,
            sigma_px: 4.0,
            min_inliers: 12,
            confidence: 0.99,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.sample_size != 3 {
            return Err(format!(
                "sample_size must be 3 for the calibrated solver, got {}",
                self.sample_size
            ));
        }
        if self.max_sample_trials < 1 || self.max_iterations < 1 {
            return Err("max_sample_trials and max_iterations must be >= 1".into());
        }
        if !(self.sigma_px > 0.0) {
            return Err(format!("sigma_px must be positive, got {}", self.sigma_px));
        }
        if self.min_inliers < self.sample_size as u32 + 1 {
            return Err(format!(
                "min_inliers must be at least sample_size + 1, got {}",
                self.min_inliers
            ));
        }
        if !(0.0 < self.confidence && self.confidence < 1.0) {
            return Err(format!(
                "confidence must be in (0, 1), got {}",
                self.confidence
            ));
        }
        Ok(())
    }
}

/// A unique match resolved to its 3D data, ready for sampling and scoring.
#[derive(Debug, Clone)]
pub struct UniqueCorr {
    pub feature_index: usize,
    pub pixel: Vector2<f64>,
    pub point_id: u32,
    pub position: Vector3<f64>,
    /// Sorted camera ids observing the point (from the full-point record).
    pub cameras: Vec<u32>,
}

/// A multi-match resolved to candidate 3D positions.
#[derive(Debug, Clone)]
pub struct MultiCorr {
    pub feature_index: usize,
    pub pixel: Vector2<f64>,
    pub candidates: Vec<(u32, Vector3<f64>)>,
}

/// Match set resolved against a model.
#[derive(Debug, Clone, Default)]
pub struct CorrSet {
    pub unique: Vec<UniqueCorr>,
    pub multi: Vec<MultiCorr>,
}

impl CorrSet {
    pub fn from_matches(matches: &MatchSet, model: &HybridModel) -> CorrSet {
        let unique = matches
            .unique
            .iter()
            .filter_map(|m| {
                let point = model.full_by_id(m.point_id)?;
                Some(UniqueCorr {
                    feature_index: m.feature_index,
                    pixel: m.pixel,
                    point_id: m.point_id,
                    position: point.position,
                    cameras: point.cameras.clone(),
                })
            })
            .collect();
        let multi = matches
            .multi
            .iter()
            .filter_map(|m| {
                let candidates: Vec<(u32, Vector3<f64>)> = m
                    .point_ids
                    .iter()
                    .filter_map(|&id| Some((id, model.compressed_by_id(id)?.position)))
                    .collect();
                (!candidates.is_empty()).then_some(MultiCorr {
                    feature_index: m.feature_index,
                    pixel: m.pixel,
                    candidates,
                })
            })
            .collect();
        CorrSet { unique, multi }
    }
}

/// Inlier tally of one pose, with unique and multi contributions separated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InlierCount {
    pub unique: u32,
    pub multi: u32,
}

impl InlierCount {
    pub fn total(&self) -> u32 {
        self.unique + self.multi
    }
}

/// Result of one RANSAC run.
#[derive(Debug, Clone)]
pub struct RansacResult {
    pub pose: Option<Pose>,
    pub inliers: InlierCount,
    /// Iteration (1-based) that produced the best pose.
    pub best_iteration: Option<u32>,
    /// Iterations executed, including ones whose sample was dropped.
    pub iterations: u32,
    /// Samples dropped because no co-visible candidate was found within F.
    pub samples_dropped: u32,
    /// Multi-match correspondences evaluated across all hypotheses.
    pub multi_evaluations: u64,
    pub registered: bool,
}

impl RansacResult {
    fn not_registered(iterations: u32, samples_dropped: u32, multi_evaluations: u64) -> Self {
        RansacResult {
            pose: None,
            inliers: InlierCount::default(),
            best_iteration: None,
            iterations,
            samples_dropped,
            multi_evaluations,
            registered: false,
        }
    }
}

fn sorted_slices_intersect(a: &[u32], b: &[u32]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Draw a co-visible minimal sample from the unique matches.
///
/// The first match is uniform over all of `unique`; each later candidate is
/// uniform over the matches not yet in the sample and is accepted iff its
/// point shares at least one camera with the first point. After `max_trials`
/// rejected candidates the whole sample is dropped (`None`).
pub fn sample_covisible(
    unique: &[UniqueCorr],
    sample_size: usize,
    max_trials: u32,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    debug_assert!(unique.len() >= sample_size);
    let mut sample: Vec<usize> = Vec::with_capacity(sample_size);
    sample.push(rng.random_range(0..unique.len()));
    let anchor_cameras = &unique[sample[0]].cameras;

    let mut failures = 0u32;
    while sample.len() < sample_size && failures < max_trials {
        // Uniform over the not-yet-sampled matches: draw an index in the
        // reduced range and shift it past the already-taken positions.
        let mut draw = rng.random_range(0..unique.len() - sample.len());
        let mut taken: Vec<usize> = sample.clone();
        taken.sort_unstable();
        for &t in &taken {
            if draw >= t {
                draw += 1;
            }
        }
        if sorted_slices_intersect(&unique[draw].cameras, anchor_cameras) {
            sample.push(draw);
        } else {
            failures += 1;
        }
    }
    (sample.len() == sample_size).then_some(sample)
}

/// Count inliers of `pose` over the match set. Each unique match votes once
/// when its reprojection error is below sigma; each multi-match votes once
/// when any of its candidates is.
pub fn evaluate_pose(
    pose: &Pose,
    corrs: &CorrSet,
    sigma_px: f64,
    intrinsics: &Intrinsics,
) -> InlierCount {
    let sigma_sq = sigma_px * sigma_px;
    let within = |pixel: &Vector2<f64>, position: &Vector3<f64>| -> bool {
        match pose.project(intrinsics, position) {
            Some(proj) => (proj - pixel).norm_squared() < sigma_sq,
            None => false,
        }
    };
    let mut count = InlierCount::default();
    for m in &corrs.unique {
        if within(&m.pixel, &m.position) {
            count.unique += 1;
        }
    }
    for m in &corrs.multi {
        if m.candidates.iter().any(|(_, p)| within(&m.pixel, p)) {
            count.multi += 1;
        }
    }
    count
}

/// Run the modified RANSAC loop over a resolved match set.
///
/// Minimal samples come only from unique matches via [`sample_covisible`];
/// every P3P solution of a sample is scored against the whole set within the
/// same iteration. The best pose is the one with the most total inliers
/// (earlier iteration wins ties). The adaptive exit bound uses the best
/// unique-only inlier ratio, which keeps the iteration count independent of
/// whether multi-matches participate in scoring.
pub fn run_ransac(
    corrs: &CorrSet,
    intrinsics: &Intrinsics,
    config: &RansacConfig,
    seed: u64,
) -> RansacResult {
    debug_assert!(config.validate().is_ok(), "invalid RANSAC config");
    let n = config.sample_size;
    if corrs.unique.len() < n {
        log::debug!(
            "not enough unique matches to sample: {} < {}",
            corrs.unique.len(),
            n
        );
        return RansacResult::not_registered(0, 0, 0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(InlierCount, Pose, u32)> = None;
    let mut best_unique: u32 = 0;
    let mut iterations = 0u32;
    let mut samples_dropped = 0u32;
    let mut multi_evaluations = 0u64;

    while iterations < config.max_iterations {
        iterations += 1;

        let Some(sample) = sample_covisible(&corrs.unique, n, config.max_sample_trials, &mut rng)
        else {
            samples_dropped += 1;
            continue;
        };
        let minimal: Vec<crate::geometry::Correspondence> = sample
            .iter()
            .map(|&i| crate::geometry::Correspondence {
                pixel: corrs.unique[i].pixel,
                point: corrs.unique[i].position,
                point_id: corrs.unique[i].point_id,
            })
            .collect();
        let Ok(poses) = solve_p3p(&minimal, intrinsics) else {
            continue;
        };

        for pose in poses {
            let count = evaluate_pose(&pose, corrs, config.sigma_px, intrinsics);
            multi_evaluations += corrs.multi.len() as u64;
            if count.unique > best_unique {
                best_unique = count.unique;
            }
            let improves = match &best {
                None => true,
                Some((best_count, _, _)) => count.total() > best_count.total(),
            };
            if improves {
                best = Some((count, pose, iterations));
            }
        }

        // Adaptive exit on the unique-only inlier ratio.
        let rho = best_unique as f64 / corrs.unique.len() as f64;
        if rho > 0.0 {
            let miss = (1.0 - rho.powi(n as i32)).max(0.0);
            if miss.powi(iterations as i32) < 1.0 - config.confidence {
                break;
            }
        }
    }

    match best {
        Some((inliers, pose, best_iteration)) => {
            let registered = inliers.total() >= config.min_inliers;
            RansacResult {
                pose: Some(pose),
                inliers,
                best_iteration: Some(best_iteration),
                iterations,
                samples_dropped,
                multi_evaluations,
                registered,
            }
        }
        None => {
            log::debug!("no sample completed within {iterations} iterations");
            RansacResult::not_registered(iterations, samples_dropped, multi_evaluations)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pose_error;
    use rand::Rng;

    fn intr() -> Intrinsics {
        Intrinsics {
            focal: 800.0,
            cx: 512.0,
            cy: 384.0,
            width: 1024,
            height: 768,
        }
    }

    /// Ground-truth pose plus unique matches, `n_inliers` of them exact and
    /// the rest corrupted.
    fn synthetic_corrs(
        seed: u64,
        n_inliers: usize,
        n_outliers: usize,
        cameras: &[u32],
    ) -> (Pose, CorrSet) {
        let intr = intr();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = Pose::look_at(
            Vector3::new(8.0, -3.0, 2.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::z(),
        );
        let mut unique = Vec::new();
        for i in 0..(n_inliers + n_outliers) {
            let pixel = Vector2::new(rng.random_range(50.0..974.0), rng.random_range(50.0..718.0));
            let depth = rng.random_range(3.0..12.0);
            let position = pose.center + pose.rotation.transpose() * (depth * intr.bearing(pixel));
            let (pixel, position) = if i < n_inliers {
                (pixel, position)
            } else {
                // Corrupt the 3D position so the match is geometrically wrong.
                (
                    pixel,
                    position + Vector3::new(rng.random_range(1.0..3.0), rng.random_range(1.0..3.0), 0.7),
                )
            };
            unique.push(UniqueCorr {
                feature_index: i,
                pixel,
                point_id: i as u32,
                position,
                cameras: cameras.to_vec(),
            });
        }
        (pose, CorrSet { unique, multi: Vec::new() })
    }

    #[test]
    fn universal_covisibility_never_drops_samples() {
        let (_, corrs) = synthetic_corrs(1, 20, 0, &[5]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            assert!(sample_covisible(&corrs.unique, 3, 10, &mut rng).is_some());
        }
    }

    #[test]
    fn disjoint_clusters_never_mix_in_a_sample() {
        let (_, a) = synthetic_corrs(3, 10, 0, &[1]);
        let (_, b) = synthetic_corrs(4, 10, 0, &[2]);
        let mut unique = a.unique;
        for (off, mut m) in b.unique.into_iter().enumerate() {
            m.feature_index = 10 + off;
            unique.push(m);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut completed = 0;
        for _ in 0..1000 {
            if let Some(sample) = sample_covisible(&unique, 3, 10, &mut rng) {
                completed += 1;
                let clusters: Vec<&[u32]> =
                    sample.iter().map(|&i| unique[i].cameras.as_slice()).collect();
                assert!(clusters.windows(2).all(|w| w[0] == w[1]));
            }
        }
        assert!(completed > 0);
    }

    #[test]
    fn accepted_samples_always_share_a_camera_with_the_anchor() {
        let (_, corrs) = synthetic_corrs(6, 40, 0, &[1, 4, 9]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            if let Some(sample) = sample_covisible(&corrs.unique, 3, 10, &mut rng) {
                let anchor = &corrs.unique[sample[0]].cameras;
                for &i in &sample[1..] {
                    assert!(sorted_slices_intersect(&corrs.unique[i].cameras, anchor));
                }
                // Distinct features and points within the sample.
                let mut s = sample.clone();
                s.sort_unstable();
                s.dedup();
                assert_eq!(s.len(), 3);
            }
        }
    }

    #[test]
    fn evaluate_pose_counts_unique_and_multi_votes() {
        let (pose, mut corrs) = synthetic_corrs(8, 5, 0, &[1]);
        assert_eq!(evaluate_pose(&pose, &CorrSet::default(), 4.0, &intr()), InlierCount::default());

        // Multi-match with two candidates inside sigma still votes once.
        let good = corrs.unique[0].position;
        corrs.multi.push(MultiCorr {
            feature_index: 100,
            pixel: corrs.unique[0].pixel,
            candidates: vec![(50, good), (51, good + Vector3::new(1e-6, 0.0, 0.0)), (52, good + Vector3::new(5.0, 5.0, 0.0))],
        });
        let count = evaluate_pose(&pose, &corrs, 4.0, &intr());
        assert_eq!(count.unique, 5);
        assert_eq!(count.multi, 1);

        // Adding matches never decreases the tally for a fixed pose.
        let base = evaluate_pose(&pose, &CorrSet { unique: corrs.unique.clone(), multi: vec![] }, 4.0, &intr());
        assert!(count.total() >= base.total());
    }

    #[test]
    fn recovers_pose_with_sixty_percent_outliers() {
        let (gt, corrs) = synthetic_corrs(9, 20, 30, &[1]);
        let config = RansacConfig::default();
        let result = run_ransac(&corrs, &intr(), &config, 42);
        assert!(result.registered);
        assert_eq!(result.inliers.unique, 20);
        let (pos, rot) = pose_error(result.pose.as_ref().unwrap(), &gt);
        assert!(pos < 1e-6, "position error {pos:.3e}");
        assert!(rot < 1e-6, "rotation error {rot:.3e}");
    }

    #[test]
    fn three_matches_give_exact_pose_in_one_iteration() {
        let (gt, corrs) = synthetic_corrs(10, 3, 0, &[1]);
        let config = RansacConfig::default();
        let result = run_ransac(&corrs, &intr(), &config, 3);
        // Not registered (3 < min_inliers) but the pose itself is exact.
        assert!(!result.registered);
        assert_eq!(result.best_iteration, Some(1));
        let (pos, rot) = pose_error(result.pose.as_ref().unwrap(), &gt);
        assert!(pos < 1e-6 && rot < 1e-6);
    }

    #[test]
    fn too_few_unique_matches_is_not_registered() {
        let (_, corrs) = synthetic_corrs(11, 2, 0, &[1]);
        let result = run_ransac(&corrs, &intr(), &RansacConfig::default(), 1);
        assert!(!result.registered);
        assert!(result.pose.is_none());
        assert_eq!(result.iterations, 0);
    }

    #[test]
    fn identical_seeds_give_identical_results() {
        let (_, corrs) = synthetic_corrs(12, 15, 25, &[1]);
        let config = RansacConfig::default();
        let a = run_ransac(&corrs, &intr(), &config, 77);
        let b = run_ransac(&corrs, &intr(), &config, 77);
        assert_eq!(a.inliers, b.inliers);
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.samples_dropped, b.samples_dropped);
        assert_eq!(a.best_iteration, b.best_iteration);
        match (a.pose, b.pose) {
            (Some(pa), Some(pb)) => {
                assert_eq!(pa.center, pb.center);
                assert_eq!(pa.rotation, pb.rotation);
            }
            (None, None) => {}
            _ => panic!("pose presence differs"),
        }
    }

    #[test]
    fn multi_matches_never_reduce_registration() {
        // With multi evaluation on, the same seeds must register whenever the
        // unique-only run registers: iteration counts are unchanged and the
        // best total only grows.
        let (gt, mut corrs) = synthetic_corrs(13, 14, 20, &[1]);
        let config = RansacConfig::default();
        let unique_only = run_ransac(&corrs, &intr(), &config, 5);

        corrs.multi = (0..6)
            .map(|i| {
                let base = &corrs.unique[i];
                MultiCorr {
                    feature_index: 200 + i,
                    pixel: base.pixel,
                    candidates: vec![(900 + i as u32, base.position)],
                }
            })
            .collect();
        let with_multi = run_ransac(&corrs, &intr(), &config, 5);
        assert_eq!(unique_only.iterations, with_multi.iterations);
        assert!(with_multi.inliers.total() >= unique_only.inliers.total());
        assert!(!unique_only.registered || with_multi.registered);
        let _ = gt;
    }
}
