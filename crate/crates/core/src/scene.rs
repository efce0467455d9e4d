//! Scene data model: cameras, points with observations, query images, and the
//! observation-derived visibility graph.
//!
//! A [`SceneModel`] is validated once at construction and immutable afterwards,
//! so it can be shared freely across worker threads.

use crate::descriptor::Descriptor;
use crate::geometry::{GeometryError, Intrinsics, Pose};
use nalgebra::Vector2;
use nalgebra::Vector3;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated while reading {context}")]
    Truncated { context: &'static str },
    #[error("duplicate camera id {0}")]
    DuplicateCameraId(u32),
    #[error("duplicate point id {0}")]
    DuplicatePointId(u32),
    #[error("camera {camera_id}: {source}")]
    BadCamera {
        camera_id: u32,
        source: GeometryError,
    },
    #[error("point {point_id} has no observations")]
    EmptyObservations { point_id: u32 },
    #[error("point {point_id} observation {obs_index} references unknown camera {camera_id}")]
    DanglingCamera {
        point_id: u32,
        obs_index: usize,
        camera_id: u32,
    },
    #[error(
        "point {point_id} observation {obs_index} pixel ({x}, {y}) is outside camera {camera_id} bounds"
    )]
    PixelOutOfBounds {
        point_id: u32,
        obs_index: usize,
        camera_id: u32,
        x: f64,
        y: f64,
    },
    #[error("query {query_id} feature {feature_index} pixel is outside image bounds")]
    FeatureOutOfBounds { query_id: u32, feature_index: usize },
    #[error("query {query_id}: {source}")]
    BadQuery {
        query_id: u32,
        source: GeometryError,
    },
}

/// One pixel observation of a 3D point by a database camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub camera_id: u32,
    pub pixel: Vector2<f64>,
}

/// A database camera with calibrated intrinsics and a known pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRecord {
    pub id: u32,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

/// A reconstructed 3D point with its averaged appearance descriptor and the
/// pixel observations it was triangulated from.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRecord {
    pub id: u32,
    pub position: Vector3<f64>,
    pub mean_descriptor: Descriptor,
    pub observations: Vec<Observation>,
}

/// One feature of a query image. `true_point` is generator provenance used by
/// evaluation fixtures; matching never reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryFeature {
    pub pixel: Vector2<f64>,
    pub descriptor: Descriptor,
    pub true_point: Option<u32>,
}

/// A query image to localize: intrinsics, extracted features, and an optional
/// ground-truth pose for error reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryImage {
    pub id: u32,
    pub intrinsics: Intrinsics,
    pub features: Vec<QueryFeature>,
    pub ground_truth: Option<Pose>,
}

impl QueryImage {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.intrinsics.validate().map_err(|source| SceneError::BadQuery {
            query_id: self.id,
            source,
        })?;
        if let Some(gt) = &self.ground_truth {
            gt.validate().map_err(|source| SceneError::BadQuery {
                query_id: self.id,
                source,
            })?;
        }
        for (feature_index, f) in self.features.iter().enumerate() {
            if !self.intrinsics.contains(f.pixel) {
                return Err(SceneError::FeatureOutOfBounds {
                    query_id: self.id,
                    feature_index,
                });
            }
        }
        Ok(())
    }
}

/// Bipartite point/camera adjacency derived from the observation lists.
#[derive(Debug, Clone, Default)]
pub struct VisibilityGraph {
    /// Sorted, deduplicated camera ids per point (indexed like `points`).
    point_cameras: Vec<Vec<u32>>,
    /// Point ids per camera (indexed like `cameras`), in point order.
    camera_points: Vec<Vec<u32>>,
}

impl VisibilityGraph {
    pub fn cameras_of_point(&self, point_index: usize) -> &[u32] {
        &self.point_cameras[point_index]
    }

    pub fn points_of_camera(&self, camera_index: usize) -> &[u32] {
        &self.camera_points[camera_index]
    }

    /// True when camera `camera_id` observes the point at `point_index`.
    pub fn observes(&self, point_index: usize, camera_id: u32) -> bool {
        self.point_cameras[point_index].binary_search(&camera_id).is_ok()
    }
}

/// An immutable, validated SfM scene.
#[derive(Debug, Clone)]
pub struct SceneModel {
    cameras: Vec<CameraRecord>,
    points: Vec<PointRecord>,
    camera_index: BTreeMap<u32, usize>,
    point_index: BTreeMap<u32, usize>,
    visibility: VisibilityGraph,
}

impl SceneModel {
    /// Validate every type invariant and derive the visibility graph.
    pub fn new(cameras: Vec<CameraRecord>, points: Vec<PointRecord>) -> Result<Self, SceneError> {
        let mut camera_index = BTreeMap::new();
        for (idx, cam) in cameras.iter().enumerate() {
            if camera_index.insert(cam.id, idx).is_some() {
                return Err(SceneError::DuplicateCameraId(cam.id));
            }
            cam.intrinsics
                .validate()
                .map_err(|source| SceneError::BadCamera {
                    camera_id: cam.id,
                    source,
                })?;
            cam.pose.validate().map_err(|source| SceneError::BadCamera {
                camera_id: cam.id,
                source,
            })?;
        }

        let mut point_index = BTreeMap::new();
        let mut point_cameras = Vec::with_capacity(points.len());
        let mut camera_points: Vec<Vec<u32>> = vec![Vec::new(); cameras.len()];
        for (idx, point) in points.iter().enumerate() {
            if point_index.insert(point.id, idx).is_some() {
                return Err(SceneError::DuplicatePointId(point.id));
            }
            if point.observations.is_empty() {
                return Err(SceneError::EmptyObservations { point_id: point.id });
            }
            let mut cams: Vec<u32> = Vec::with_capacity(point.observations.len());
            for (obs_index, obs) in point.observations.iter().enumerate() {
                let Some(&cam_idx) = camera_index.get(&obs.camera_id) else {
                    return Err(SceneError::DanglingCamera {
                        point_id: point.id,
                        obs_index,
                        camera_id: obs.camera_id,
                    });
                };
                if !cameras[cam_idx].intrinsics.contains(obs.pixel) {
                    return Err(SceneError::PixelOutOfBounds {
                        point_id: point.id,
                        obs_index,
                        camera_id: obs.camera_id,
                        x: obs.pixel.x,
                        y: obs.pixel.y,
                    });
                }
                cams.push(obs.camera_id);
            }
            cams.sort_unstable();
            cams.dedup();
            for &cam_id in &cams {
                camera_points[camera_index[&cam_id]].push(point.id);
            }
            point_cameras.push(cams);
        }

        Ok(SceneModel {
            cameras,
            points,
            camera_index,
            point_index,
            visibility: VisibilityGraph {
                point_cameras,
                camera_points,
            },
        })
    }

    pub fn cameras(&self) -> &[CameraRecord] {
        &self.cameras
    }

    pub fn points(&self) -> &[PointRecord] {
        &self.points
    }

    pub fn visibility(&self) -> &VisibilityGraph {
        &self.visibility
    }

    pub fn camera_by_id(&self, id: u32) -> Option<&CameraRecord> {
        self.camera_index.get(&id).map(|&i| &self.cameras[i])
    }

    pub fn point_by_id(&self, id: u32) -> Option<&PointRecord> {
        self.point_index.get(&id).map(|&i| &self.points[i])
    }

    pub fn camera_index_of(&self, id: u32) -> Option<usize> {
        self.camera_index.get(&id).copied()
    }

    pub fn point_index_of(&self, id: u32) -> Option<usize> {
        self.point_index.get(&id).copied()
    }

    /// Stable content hash covering every camera, point, and observation.
    pub fn content_hash(&self) -> u64 {
        use fnv::FnvHasher;
        use std::hash::Hasher;
        let mut h = FnvHasher::default();
        h.write_u64(self.cameras.len() as u64);
        h.write_u64(self.points.len() as u64);
        for cam in &self.cameras {
            h.write_u32(cam.id);
            h.write_u64(cam.intrinsics.focal.to_bits());
            h.write_u64(cam.intrinsics.cx.to_bits());
            h.write_u64(cam.intrinsics.cy.to_bits());
            h.write_u32(cam.intrinsics.width);
            h.write_u32(cam.intrinsics.height);
            for v in cam.pose.rotation.iter() {
                h.write_u64(v.to_bits());
            }
            for v in cam.pose.center.iter() {
                h.write_u64(v.to_bits());
            }
        }
        for point in &self.points {
            h.write_u32(point.id);
            for v in point.position.iter() {
                h.write_u64(v.to_bits());
            }
            h.write(point.mean_descriptor.as_bytes());
            h.write_u64(point.observations.len() as u64);
            for obs in &point.observations {
                h.write_u32(obs.camera_id);
                h.write_u64(obs.pixel.x.to_bits());
                h.write_u64(obs.pixel.y.to_bits());
            }
        }
        h.finish()
    }
}
