//! Scene serialization: the `HSC1` little-endian binary format and a JSON
//! mirror for fixtures and debugging.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! header   : magic "HSC1" | version u32 | camera_count u64 | point_count u64   (24 bytes)
//! camera   : id u32 | width u32 | height u32 | focal f64 | cx f64 | cy f64
//!          | rotation 9xf64 row-major | center 3xf64                            (132 bytes)
//! point    : id u32 | position 3xf64 | descriptor 128 raw bytes
//!          | obs_count u32 | obs_count x (camera_id u32 | x f64 | y f64)        (160 + 20n bytes)
//! ```
//!
//! The JSON mirror is one object with `cameras`, `points`, and `queries`
//! arrays. Query files reuse the `queries` array as their top-level field.

use crate::descriptor::Descriptor;
use crate::geometry::{Intrinsics, Pose};
use crate::scene::{
    CameraRecord, Observation, PointRecord, QueryFeature, QueryImage, SceneError, SceneModel,
};
use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const SCENE_MAGIC: [u8; 4] = *b"HSC1";
pub const SCENE_VERSION: u32 = 1;

/// On-disk representation of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneFormat {
    Binary,
    Json,
}

impl SceneFormat {
    /// Sniff the format from the file's first bytes.
    pub fn detect(path: &Path) -> Result<SceneFormat, SceneError> {
        let mut file = File::open(path)?;
        let mut magic = [0u8; 4];
        let n = file.read(&mut magic)?;
        if n == 4 && magic == SCENE_MAGIC {
            Ok(SceneFormat::Binary)
        } else {
            Ok(SceneFormat::Json)
        }
    }
}

/// Exact size in bytes of `model` under the binary layout.
pub fn binary_scene_size(model: &SceneModel) -> u64 {
    let mut total = 24u64;
    total += 132 * model.cameras().len() as u64;
    for point in model.points() {
        total += 160 + 20 * point.observations.len() as u64;
    }
    total
}

/// Serialize `model` to `path`; returns the number of bytes written.
pub fn save_scene(model: &SceneModel, path: &Path, format: SceneFormat) -> Result<u64, SceneError> {
    match format {
        SceneFormat::Binary => save_binary(model, path),
        SceneFormat::Json => save_json(model, &[], path),
    }
}

/// Parse a scene from `path`, validating all invariants.
pub fn load_scene(path: &Path, format: SceneFormat) -> Result<SceneModel, SceneError> {
    match format {
        SceneFormat::Binary => load_binary(path),
        SceneFormat::Json => Ok(load_json(path)?.0),
    }
}

/// Serialize scene plus query fixtures as one JSON document.
pub fn save_scene_json_with_queries(
    model: &SceneModel,
    queries: &[QueryImage],
    path: &Path,
) -> Result<u64, SceneError> {
    save_json(model, queries, path)
}

/// Write a standalone query file (JSON object with a `queries` array).
pub fn save_queries(queries: &[QueryImage], path: &Path) -> Result<u64, SceneError> {
    for q in queries {
        q.validate()?;
    }
    let doc = QueriesDoc {
        queries: queries.iter().map(QueryDto::from).collect(),
    };
    let bytes = serde_json::to_vec_pretty(&doc)?;
    let mut file = File::create(path)?;
    file.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

/// Read queries from a standalone query file or a full JSON scene document.
pub fn load_queries(path: &Path) -> Result<Vec<QueryImage>, SceneError> {
    let bytes = std::fs::read(path)?;
    let doc: QueriesDoc = serde_json::from_slice(&bytes)?;
    let queries: Vec<QueryImage> = doc.queries.iter().map(QueryDto::to_query).collect();
    for q in &queries {
        q.validate()?;
    }
    Ok(queries)
}

fn save_binary(model: &SceneModel, path: &Path) -> Result<u64, SceneError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&SCENE_MAGIC)?;
    w.write_u32::<LE>(SCENE_VERSION)?;
    w.write_u64::<LE>(model.cameras().len() as u64)?;
    w.write_u64::<LE>(model.points().len() as u64)?;
    for cam in model.cameras() {
        w.write_u32::<LE>(cam.id)?;
        w.write_u32::<LE>(cam.intrinsics.width)?;
        w.write_u32::<LE>(cam.intrinsics.height)?;
        w.write_f64::<LE>(cam.intrinsics.focal)?;
        w.write_f64::<LE>(cam.intrinsics.cx)?;
        w.write_f64::<LE>(cam.intrinsics.cy)?;
        for r in 0..3 {
            for c in 0..3 {
                w.write_f64::<LE>(cam.pose.rotation[(r, c)])?;
            }
        }
        for v in cam.pose.center.iter() {
            w.write_f64::<LE>(*v)?;
        }
    }
    for point in model.points() {
        w.write_u32::<LE>(point.id)?;
        for v in point.position.iter() {
            w.write_f64::<LE>(*v)?;
        }
        w.write_all(point.mean_descriptor.as_bytes())?;
        w.write_u32::<LE>(point.observations.len() as u32)?;
        for obs in &point.observations {
            w.write_u32::<LE>(obs.camera_id)?;
            w.write_f64::<LE>(obs.pixel.x)?;
            w.write_f64::<LE>(obs.pixel.y)?;
        }
    }
    w.flush()?;
    Ok(binary_scene_size(model))
}

fn load_binary(path: &Path) -> Result<SceneModel, SceneError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| SceneError::Truncated { context: "header" })?;
    if magic != SCENE_MAGIC {
        return Err(SceneError::BadMagic {
            expected: SCENE_MAGIC,
            found: magic,
        });
    }
    let version = r.read_u32::<LE>()?;
    if version != SCENE_VERSION {
        return Err(SceneError::UnsupportedVersion(version));
    }
    let n_cameras = r.read_u64::<LE>()? as usize;
    let n_points = r.read_u64::<LE>()? as usize;

    let mut cameras = Vec::with_capacity(n_cameras);
    for _ in 0..n_cameras {
        let id = r.read_u32::<LE>()?;
        let width = r.read_u32::<LE>()?;
        let height = r.read_u32::<LE>()?;
        let focal = r.read_f64::<LE>()?;
        let cx = r.read_f64::<LE>()?;
        let cy = r.read_f64::<LE>()?;
        let mut rotation = Matrix3::zeros();
        for row in 0..3 {
            for col in 0..3 {
                rotation[(row, col)] = r.read_f64::<LE>()?;
            }
        }
        let mut center = Vector3::zeros();
        for v in center.iter_mut() {
            *v = r.read_f64::<LE>()?;
        }
        cameras.push(CameraRecord {
            id,
            intrinsics: Intrinsics {
                focal,
                cx,
                cy,
                width,
                height,
            },
            pose: Pose::new(rotation, center),
        });
    }

    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let id = r.read_u32::<LE>()?;
        let mut position = Vector3::zeros();
        for v in position.iter_mut() {
            *v = r.read_f64::<LE>()?;
        }
        let mut desc = [0u8; crate::descriptor::DESCRIPTOR_DIM];
        r.read_exact(&mut desc)
            .map_err(|_| SceneError::Truncated { context: "descriptor" })?;
        let n_obs = r.read_u32::<LE>()? as usize;
        let mut observations = Vec::with_capacity(n_obs);
        for _ in 0..n_obs {
            let camera_id = r.read_u32::<LE>()?;
            let x = r.read_f64::<LE>()?;
            let y = r.read_f64::<LE>()?;
            observations.push(Observation {
                camera_id,
                pixel: Vector2::new(x, y),
            });
        }
        points.push(PointRecord {
            id,
            position,
            mean_descriptor: Descriptor(desc),
            observations,
        });
    }

    SceneModel::new(cameras, points)
}

// ---------------------------------------------------------------------------
// JSON mirror
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    cameras: Vec<CameraDto>,
    points: Vec<PointDto>,
    #[serde(default)]
    queries: Vec<QueryDto>,
}

#[derive(Serialize, Deserialize)]
struct QueriesDoc {
    queries: Vec<QueryDto>,
}

#[derive(Serialize, Deserialize)]
struct CameraDto {
    id: u32,
    width: u32,
    height: u32,
    focal: f64,
    cx: f64,
    cy: f64,
    rotation: [f64; 9],
    center: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct PointDto {
    id: u32,
    position: [f64; 3],
    descriptor: Descriptor,
    observations: Vec<ObservationDto>,
}

#[derive(Serialize, Deserialize)]
struct ObservationDto {
    camera: u32,
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct QueryDto {
    id: u32,
    width: u32,
    height: u32,
    focal: f64,
    cx: f64,
    cy: f64,
    features: Vec<FeatureDto>,
    #[serde(default)]
    gt_rotation: Option<[f64; 9]>,
    #[serde(default)]
    gt_center: Option<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct FeatureDto {
    x: f64,
    y: f64,
    descriptor: Descriptor,
    #[serde(default)]
    point: Option<u32>,
}

fn rotation_to_array(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for row in 0..3 {
        for col in 0..3 {
            out[row * 3 + col] = m[(row, col)];
        }
    }
    out
}

fn rotation_from_array(a: &[f64; 9]) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for row in 0..3 {
        for col in 0..3 {
            m[(row, col)] = a[row * 3 + col];
        }
    }
    m
}

impl From<&CameraRecord> for CameraDto {
    fn from(cam: &CameraRecord) -> Self {
        CameraDto {
            id: cam.id,
            width: cam.intrinsics.width,
            height: cam.intrinsics.height,
            focal: cam.intrinsics.focal,
            cx: cam.intrinsics.cx,
            cy: cam.intrinsics.cy,
            rotation: rotation_to_array(&cam.pose.rotation),
            center: cam.pose.center.into(),
        }
    }
}

impl CameraDto {
    fn to_camera(&self) -> CameraRecord {
        CameraRecord {
            id: self.id,
            intrinsics: Intrinsics {
                focal: self.focal,
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            },
            pose: Pose::new(rotation_from_array(&self.rotation), Vector3::from(self.center)),
        }
    }
}

impl From<&QueryImage> for QueryDto {
    fn from(q: &QueryImage) -> Self {
        QueryDto {
            id: q.id,
            width: q.intrinsics.width,
            height: q.intrinsics.height,
            focal: q.intrinsics.focal,
            cx: q.intrinsics.cx,
            cy: q.intrinsics.cy,
            features: q
                .features
                .iter()
                .map(|f| FeatureDto {
                    x: f.pixel.x,
                    y: f.pixel.y,
                    descriptor: f.descriptor.clone(),
                    point: f.true_point,
                })
                .collect(),
            gt_rotation: q.ground_truth.as_ref().map(|p| rotation_to_array(&p.rotation)),
            gt_center: q.ground_truth.as_ref().map(|p| p.center.into()),
        }
    }
}

impl QueryDto {
    fn to_query(&self) -> QueryImage {
        let ground_truth = match (&self.gt_rotation, &self.gt_center) {
            (Some(r), Some(c)) => Some(Pose::new(rotation_from_array(r), Vector3::from(*c))),
            _ => None,
        };
        QueryImage {
            id: self.id,
            intrinsics: Intrinsics {
                focal: self.focal,
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            },
            features: self
                .features
                .iter()
                .map(|f| QueryFeature {
                    pixel: Vector2::new(f.x, f.y),
                    descriptor: f.descriptor.clone(),
                    true_point: f.point,
                })
                .collect(),
            ground_truth,
        }
    }
}

fn save_json(model: &SceneModel, queries: &[QueryImage], path: &Path) -> Result<u64, SceneError> {
    let doc = SceneDoc {
        cameras: model.cameras().iter().map(CameraDto::from).collect(),
        points: model
            .points()
            .iter()
            .map(|p| PointDto {
                id: p.id,
                position: p.position.into(),
                descriptor: p.mean_descriptor.clone(),
                observations: p
                    .observations
                    .iter()
                    .map(|o| ObservationDto {
                        camera: o.camera_id,
                        x: o.pixel.x,
                        y: o.pixel.y,
                    })
                    .collect(),
            })
            .collect(),
        queries: queries.iter().map(QueryDto::from).collect(),
    };
    let bytes = serde_json::to_vec_pretty(&doc)?;
    let mut file = File::create(path)?;
    file.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

/// Load a JSON scene document; returns the scene and any bundled queries.
pub fn load_json(path: &Path) -> Result<(SceneModel, Vec<QueryImage>), SceneError> {
    let bytes = std::fs::read(path)?;
    let doc: SceneDoc = serde_json::from_slice(&bytes)?;
    let cameras = doc.cameras.iter().map(CameraDto::to_camera).collect();
    let points = doc
        .points
        .iter()
        .map(|p| PointRecord {
            id: p.id,
            position: Vector3::from(p.position),
            mean_descriptor: p.descriptor.clone(),
            observations: p
                .observations
                .iter()
                .map(|o| Observation {
                    camera_id: o.camera,
                    pixel: Vector2::new(o.x, o.y),
                })
                .collect(),
        })
        .collect();
    let scene = SceneModel::new(cameras, points)?;
    let queries: Vec<QueryImage> = doc.queries.iter().map(QueryDto::to_query).collect();
    for q in &queries {
        q.validate()?;
    }
    Ok((scene, queries))
}
