//! Scene data model: point cloud, instance annotations and the JSON scene file.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Box3, Vec3};

/// Instance identifier as it appears in scene files and grounded markup.
pub type ObjectId = u32;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scene JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("invalid instance {id}: {reason}")]
    InvalidInstance { id: ObjectId, reason: String },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("empty mask")]
    EmptyMask,
    #[error("point index {0} out of range")]
    IndexOutOfRange(usize),
}

/// Sorted, duplicate-free set of point indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<usize>", into = "Vec<usize>")]
pub struct PointSet(Vec<usize>);

impl PointSet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        PointSet(indices)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn union(&self, other: &PointSet) -> PointSet {
        let mut v = Vec::with_capacity(self.len() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        PointSet::new(v)
    }

    pub fn iou(&self, other: &PointSet) -> f64 {
        geometry::mask_iou(&self.0, &other.0)
    }

    pub fn intersection_len(&self, other: &PointSet) -> usize {
        geometry::sorted_intersection_len(&self.0, &other.0)
    }
}

impl From<Vec<usize>> for PointSet {
    fn from(v: Vec<usize>) -> Self {
        PointSet::new(v)
    }
}

impl From<PointSet> for Vec<usize> {
    fn from(p: PointSet) -> Self {
        p.0
    }
}

impl FromIterator<usize> for PointSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        PointSet::new(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub colors: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAnnotation {
    pub id: ObjectId,
    pub label: String,
    pub mask: PointSet,
}

/// An annotated scan. Construction validates every invariant, so a `Scene`
/// value is always internally consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    scene_id: String,
    cloud: PointCloud,
    instances: Vec<InstanceAnnotation>,
    boxes: Vec<Box3>,
    by_id: BTreeMap<ObjectId, usize>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    scene_id: String,
    points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    colors: Option<Vec<[f64; 3]>>,
    instances: Vec<InstanceFile>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    id: ObjectId,
    label: String,
    point_indices: Vec<usize>,
}

impl Scene {
    pub fn new(
        scene_id: impl Into<String>,
        cloud: PointCloud,
        instances: Vec<InstanceAnnotation>,
    ) -> Result<Self, SceneError> {
        let scene_id = scene_id.into();
        if cloud.points.is_empty() {
            return Err(SceneError::Invalid("point cloud is empty".into()));
        }
        if let Some(i) = cloud.points.iter().position(|p| !p.is_finite()) {
            return Err(SceneError::Invalid(format!("point {i} is not finite")));
        }
        if let Some(colors) = &cloud.colors {
            if colors.len() != cloud.points.len() {
                return Err(SceneError::Invalid(format!(
                    "{} colors for {} points",
                    colors.len(),
                    cloud.points.len()
                )));
            }
        }
        let mut by_id = BTreeMap::new();
        let mut owner: HashSet<usize> = HashSet::new();
        for (slot, inst) in instances.iter().enumerate() {
            if by_id.insert(inst.id, slot).is_some() {
                return Err(SceneError::InvalidInstance {
                    id: inst.id,
                    reason: "duplicate id".into(),
                });
            }
            if inst.mask.is_empty() {
                return Err(SceneError::InvalidInstance {
                    id: inst.id,
                    reason: "empty mask".into(),
                });
            }
            for idx in inst.mask.iter() {
                if idx >= cloud.points.len() {
                    return Err(SceneError::InvalidInstance {
                        id: inst.id,
                        reason: format!(
                            "point index {idx} out of range for {} points",
                            cloud.points.len()
                        ),
                    });
                }
                if !owner.insert(idx) {
                    return Err(SceneError::InvalidInstance {
                        id: inst.id,
                        reason: format!("point {idx} already belongs to another instance"),
                    });
                }
            }
        }
        let boxes = instances
            .iter()
            .map(|inst| {
                Box3::enclosing(inst.mask.iter().map(|i| &cloud.points[i]))
                    .expect("mask checked non-empty")
            })
            .collect();
        Ok(Scene {
            scene_id,
            cloud,
            instances,
            boxes,
            by_id,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn points(&self) -> &[Vec3] {
        &self.cloud.points
    }

    pub fn instances(&self) -> &[InstanceAnnotation] {
        &self.instances
    }

    pub fn instance(&self, id: ObjectId) -> Option<&InstanceAnnotation> {
        self.by_id.get(&id).map(|&slot| &self.instances[slot])
    }

    pub fn contains_id(&self, id: ObjectId) -> bool {
        self.by_id.contains_key(&id)
    }

    /// Instance ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.by_id.keys().copied()
    }

    /// Tight box of an instance mask.
    pub fn instance_box(&self, id: ObjectId) -> Option<Box3> {
        self.by_id.get(&id).map(|&slot| self.boxes[slot])
    }

    pub fn instance_center(&self, id: ObjectId) -> Option<Vec3> {
        self.instance_box(id).map(|b| b.center())
    }

    pub fn label(&self, id: ObjectId) -> Option<&str> {
        self.instance(id).map(|i| i.label.as_str())
    }

    pub fn labels(&self) -> BTreeMap<ObjectId, String> {
        self.instances
            .iter()
            .map(|i| (i.id, i.label.clone()))
            .collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(text).map_err(|e| SceneError::Parse {
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })?;
        let cloud = PointCloud {
            points: file.points.into_iter().map(Vec3::from).collect(),
            colors: file.colors,
        };
        let instances = file
            .instances
            .into_iter()
            .map(|i| {
                let mask = PointSet::new(i.point_indices.clone());
                if mask.len() != i.point_indices.len() {
                    return Err(SceneError::InvalidInstance {
                        id: i.id,
                        reason: "duplicate point index".into(),
                    });
                }
                Ok(InstanceAnnotation {
                    id: i.id,
                    label: i.label,
                    mask,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Scene::new(file.scene_id, cloud, instances)
    }

    pub fn to_json_string(&self) -> String {
        let file = SceneFile {
            scene_id: self.scene_id.clone(),
            points: self.cloud.points.iter().map(|p| p.to_array()).collect(),
            colors: self.cloud.colors.clone(),
            instances: self
                .instances
                .iter()
                .map(|i| InstanceFile {
                    id: i.id,
                    label: i.label.clone(),
                    point_indices: i.mask.as_slice().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("scene serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, self.to_json_string()).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} points, {} instances)",
            self.scene_id,
            self.cloud.points.len(),
            self.instances.len()
        )
    }
}

/// serde_json reports 1-based line and byte column; convert to a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn load_scene(path: &Path) -> Result<Scene, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scene::from_json_str(&text)
}

/// Loads every `*.json` scene in a directory, ordered by scene id.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<Scene>, SceneError> {
    let io_err = |source| SceneError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut scenes = paths
        .iter()
        .map(|p| load_scene(p))
        .collect::<Result<Vec<_>, _>>()?;
    scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    Ok(scenes)
}

/// Componentwise min/max box of the masked points.
pub fn box_from_mask(scene: &Scene, mask: &PointSet) -> Result<Box3, SceneError> {
    if mask.is_empty() {
        return Err(SceneError::EmptyMask);
    }
    let points = scene.points();
    if let Some(bad) = mask.iter().find(|&i| i >= points.len()) {
        return Err(SceneError::IndexOutOfRange(bad));
    }
    Ok(Box3::enclosing(mask.iter().map(|i| &points[i])).expect("non-empty"))
}

pub fn mask_iou(a: &PointSet, b: &PointSet) -> f64 {
    a.iou(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE: &str = r#"{"scene_id":"cube","points":[[0.0,0.0,0.0],[1.0,0.0,0.0],[0.0,1.0,0.0],[1.0,1.0,0.0],[0.0,0.0,1.0],[1.0,0.0,1.0],[0.0,1.0,1.0],[1.0,1.0,1.0]],"instances":[{"id":1,"label":"bottom","point_indices":[0,1,2,3]},{"id":2,"label":"top","point_indices":[4,5,6,7]}]}"#;

    #[test]
    fn minimal_scene() {
        let s = Scene::from_json_str(r#"{"scene_id":"a","points":[[0,0,0]],"instances":[]}"#)
            .unwrap();
        assert_eq!(s.points().len(), 1);
        assert!(s.instances().is_empty());
    }

    #[test]
    fn cube_round_trips() {
        let s = Scene::from_json_str(CUBE).unwrap();
        assert_eq!(s.instances().len(), 2);
        assert_eq!(s.to_json_string(), CUBE);
        let again = Scene::from_json_str(&s.to_json_string()).unwrap();
        assert_eq!(again, s);
        let top = s.instance_box(2).unwrap();
        assert_eq!(top.min, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(top.max, Vec3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn out_of_range_index_names_instance() {
        let err = Scene::from_json_str(
            r#"{"scene_id":"a","points":[[0,0,0]],"instances":[{"id":7,"label":"x","point_indices":[3]}]}"#,
        )
        .unwrap_err();
        match err {
            SceneError::InvalidInstance { id, .. } => assert_eq!(id, 7),
            other => panic!("unexpected {other}"),
        }
        assert!(err_text(r#"{"scene_id":"a","points":[[0,0,0]],"instances":[{"id":7,"label":"x","point_indices":[3]}]}"#).contains("instance 7"));
    }

    fn err_text(s: &str) -> String {
        Scene::from_json_str(s).unwrap_err().to_string()
    }

    #[test]
    fn overlapping_masks_rejected() {
        let e = err_text(
            r#"{"scene_id":"a","points":[[0,0,0],[1,1,1]],"instances":[{"id":1,"label":"x","point_indices":[0,1]},{"id":2,"label":"y","point_indices":[1]}]}"#,
        );
        assert!(e.contains("instance 2"), "{e}");
    }

    #[test]
    fn duplicate_ids_and_colors() {
        let e = err_text(
            r#"{"scene_id":"a","points":[[0,0,0],[1,1,1]],"instances":[{"id":1,"label":"x","point_indices":[0]},{"id":1,"label":"y","point_indices":[1]}]}"#,
        );
        assert!(e.contains("duplicate id"));
        let e = err_text(r#"{"scene_id":"a","points":[[0,0,0]],"colors":[],"instances":[]}"#);
        assert!(e.contains("colors"));
        let e = err_text(r#"{"scene_id":"a","points":[],"instances":[]}"#);
        assert!(e.contains("empty"));
    }

    #[test]
    fn parse_error_reports_byte_offset() {
        let text = "{\"scene_id\": \"a\",\n \"points\": [[0,0,0]], oops}";
        match Scene::from_json_str(text).unwrap_err() {
            SceneError::Parse { offset, .. } => {
                assert_eq!(&text[offset..offset + 1], "o");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn box_from_mask_cases() {
        let s = Scene::from_json_str(
            r#"{"scene_id":"a","points":[[0,0,0],[1,2,3],[5,5,5]],"instances":[]}"#,
        )
        .unwrap();
        let b = box_from_mask(&s, &PointSet::new(vec![1])).unwrap();
        assert_eq!(b.min, b.max);
        assert_eq!(b.min, Vec3::new(1.0, 2.0, 3.0));
        let b = box_from_mask(&s, &PointSet::new(vec![0, 1])).unwrap();
        assert_eq!(b.min, Vec3::new(0.0, 0.0, 0.0));
        assert_eq!(b.max, Vec3::new(1.0, 2.0, 3.0));
        assert!(matches!(
            box_from_mask(&s, &PointSet::default()),
            Err(SceneError::EmptyMask)
        ));
        assert!(matches!(
            box_from_mask(&s, &PointSet::new(vec![9])),
            Err(SceneError::IndexOutOfRange(9))
        ));
    }
}
