//! Rule-based spatial relations between annotated instances.
//!
//! Every relation is a deterministic predicate over instance boxes. Distances
//! are measured between box centers.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scene::{ObjectId, Scene};

#[derive(Debug, Error, PartialEq)]
pub enum RelationError {
    #[error("unknown object id {0}")]
    UnknownId(ObjectId),
    #[error("object ids must be distinct, got {0:?}")]
    DuplicateIds(Vec<ObjectId>),
    #[error("object {id} has label {actual:?}, expected {expected:?}")]
    LabelMismatch {
        id: ObjectId,
        actual: String,
        expected: String,
    },
    #[error("no label for object {0}")]
    MissingLabel(ObjectId),
    #[error("label {0:?} cannot be rendered inside grounded markup")]
    UnrenderableLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Nearest,
    Farthest,
    Between,
    Supporting,
    SupportedBy,
    Above,
    Below,
    Near,
}

impl RelationKind {
    pub const ALL: [RelationKind; 8] = [
        RelationKind::Nearest,
        RelationKind::Farthest,
        RelationKind::Between,
        RelationKind::Supporting,
        RelationKind::SupportedBy,
        RelationKind::Above,
        RelationKind::Below,
        RelationKind::Near,
    ];

    pub fn arity(self) -> usize {
        match self {
            RelationKind::Between => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RelationKind::Nearest => "nearest",
            RelationKind::Farthest => "farthest",
            RelationKind::Between => "between",
            RelationKind::Supporting => "supporting",
            RelationKind::SupportedBy => "supported_by",
            RelationKind::Above => "above",
            RelationKind::Below => "below",
            RelationKind::Near => "near",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationStatement {
    pub kind: RelationKind,
    pub target_id: ObjectId,
    pub anchor_ids: Vec<ObjectId>,
}

impl RelationStatement {
    pub fn new(kind: RelationKind, target_id: ObjectId, anchor_ids: Vec<ObjectId>) -> Self {
        debug_assert_eq!(anchor_ids.len(), kind.arity());
        debug_assert!(!anchor_ids.contains(&target_id));
        Self {
            kind,
            target_id,
            anchor_ids,
        }
    }

    /// The same fact stated from the anchor's side, for the directed kinds.
    pub fn converse(&self) -> Option<RelationStatement> {
        let kind = match self.kind {
            RelationKind::Supporting => RelationKind::SupportedBy,
            RelationKind::SupportedBy => RelationKind::Supporting,
            RelationKind::Above => RelationKind::Below,
            RelationKind::Below => RelationKind::Above,
            RelationKind::Near => RelationKind::Near,
            _ => return None,
        };
        Some(RelationStatement::new(
            kind,
            self.anchor_ids[0],
            vec![self.target_id],
        ))
    }

    pub fn ids(&self) -> impl Iterator<Item = ObjectId> + '_ {
        std::iter::once(self.target_id).chain(self.anchor_ids.iter().copied())
    }
}

/// Geometric tolerances of the relation predicates, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationParams {
    pub tie_margin: f64,
    pub between_lateral_tolerance: f64,
    pub support_z_tolerance: f64,
    pub support_min_overlap: f64,
    pub above_min_overlap: f64,
    pub near_distance: f64,
    pub max_relations_per_caption: usize,
}

impl Default for RelationParams {
    fn default() -> Self {
        Self {
            tie_margin: 0.01,
            between_lateral_tolerance: 0.5,
            support_z_tolerance: 0.05,
            support_min_overlap: 0.5,
            above_min_overlap: 0.2,
            near_distance: 1.5,
            max_relations_per_caption: 3,
        }
    }
}

fn center(scene: &Scene, id: ObjectId) -> Result<Vec3, RelationError> {
    scene
        .instance_center(id)
        .ok_or(RelationError::UnknownId(id))
}

fn require_distinct(ids: &[ObjectId]) -> Result<(), RelationError> {
    for (i, a) in ids.iter().enumerate() {
        if ids[i + 1..].contains(a) {
            return Err(RelationError::DuplicateIds(ids.to_vec()));
        }
    }
    Ok(())
}

/// Extremal-distance test shared by `nearest` and `farthest`: among all
/// instances sharing the target's label, is the target strictly (by the tie
/// margin) the closest or farthest one from the anchor?
fn extremal_to(
    scene: &Scene,
    target_id: ObjectId,
    anchor_id: ObjectId,
    kind: RelationKind,
    params: &RelationParams,
) -> Result<Option<RelationStatement>, RelationError> {
    require_distinct(&[target_id, anchor_id])?;
    let anchor = center(scene, anchor_id)?;
    let target_center = center(scene, target_id)?;
    let label = scene.label(target_id).expect("target exists");
    let d_target = target_center.distance(&anchor);
    let mut distractors = 0;
    for inst in scene.instances() {
        if inst.id == target_id || inst.id == anchor_id || inst.label != label {
            continue;
        }
        distractors += 1;
        let d = center(scene, inst.id)?.distance(&anchor);
        let beaten = match kind {
            RelationKind::Nearest => d <= d_target + params.tie_margin,
            _ => d >= d_target - params.tie_margin,
        };
        if beaten {
            return Ok(None);
        }
    }
    if distractors == 0 {
        return Ok(None);
    }
    Ok(Some(RelationStatement::new(kind, target_id, vec![anchor_id])))
}

/// `nearest` with an explicit anchor.
pub fn nearest_to(
    scene: &Scene,
    target_id: ObjectId,
    anchor_id: ObjectId,
    params: &RelationParams,
) -> Result<Option<RelationStatement>, RelationError> {
    extremal_to(scene, target_id, anchor_id, RelationKind::Nearest, params)
}

pub fn farthest_from(
    scene: &Scene,
    target_id: ObjectId,
    anchor_id: ObjectId,
    params: &RelationParams,
) -> Result<Option<RelationStatement>, RelationError> {
    extremal_to(scene, target_id, anchor_id, RelationKind::Farthest, params)
}

/// Is the target the nearest `label` instance to its reference object?
///
/// The reference (anchor) is the instance with a different label whose center
/// is closest to the target, lowest id first on exact ties.
pub fn nearest_relation(
    scene: &Scene,
    target_id: ObjectId,
    label: &str,
    params: &RelationParams,
) -> Result<Option<RelationStatement>, RelationError> {
    let target_center = center(scene, target_id)?;
    let actual = scene.label(target_id).expect("target exists");
    if actual != label {
        return Err(RelationError::LabelMismatch {
            id: target_id,
            actual: actual.to_string(),
            expected: label.to_string(),
        });
    }
    let mut anchor: Option<(f64, ObjectId)> = None;
    for inst in scene.instances() {
        if inst.label == label {
            continue;
        }
        let d = center(scene, inst.id)?.distance(&target_center);
        let better = match anchor {
            None => true,
            Some((best, best_id)) => d < best || (d == best && inst.id < best_id),
        };
        if better {
            anchor = Some((d, inst.id));
        }
    }
    match anchor {
        Some((_, anchor_id)) => nearest_to(scene, target_id, anchor_id, params),
        None => Ok(None),
    }
}

/// Target center projects strictly inside the anchor-center segment and sits
/// within the lateral tolerance of it.
pub fn between_relation(
    scene: &Scene,
    target_id: ObjectId,
    anchor_a: ObjectId,
    anchor_b: ObjectId,
    params: &RelationParams,
) -> Result<Option<RelationStatement>, RelationError> {
    require_distinct(&[target_id, anchor_a, anchor_b])?;
    let t = center(scene, target_id)?;
    let a = center(scene, anchor_a)?;
    let b = center(scene, anchor_b)?;
    let ab = b - a;
    let len2 = ab.dot(&ab);
    if len2 <= 0.0 {
        return Ok(None);
    }
    let s = (t - a).dot(&ab) / len2;
    if s <= 0.0 || s >= 1.0 {
        return Ok(None);
    }
    let lateral = (t - (a + ab * s)).norm();
    if lateral >= params.between_lateral_tolerance {
        return Ok(None);
    }
    let (lo, hi) = if anchor_a <= anchor_b {
        (anchor_a, anchor_b)
    } else {
        (anchor_b, anchor_a)
    };
    Ok(Some(RelationStatement::new(
        RelationKind::Between,
        target_id,
        vec![lo, hi],
    )))
}

/// `supported_by(upper; lower)`: the upper box bottom rests on the lower box
/// top within the z tolerance and at least half of the upper footprint
/// overlaps the lower one.
pub fn support_relation(
    scene: &Scene,
    upper_id: ObjectId,
    lower_id: ObjectId,
    params: &RelationParams,
) -> Result<Option<RelationStatement>, RelationError> {
    require_distinct(&[upper_id, lower_id])?;
    let upper = scene
        .instance_box(upper_id)
        .ok_or(RelationError::UnknownId(upper_id))?;
    let lower = scene
        .instance_box(lower_id)
        .ok_or(RelationError::UnknownId(lower_id))?;
    let gap = upper.min.z - lower.max.z;
    if gap.abs() > params.support_z_tolerance {
        return Ok(None);
    }
    let area = upper.footprint_area();
    if area <= 0.0 || upper.footprint_overlap(&lower) / area < params.support_min_overlap {
        return Ok(None);
    }
    Ok(Some(RelationStatement::new(
        RelationKind::SupportedBy,
        upper_id,
        vec![lower_id],
    )))
}

/// `supporting(lower; upper)`, the converse of [`support_relation`].
pub fn supporting_relation(
    scene: &Scene,
    lower_id: ObjectId,
    upper_id: ObjectId,
    params: &RelationParams,
) -> Result<Option<RelationStatement>, RelationError> {
    Ok(support_relation(scene, upper_id, lower_id, params)?.and_then(|s| s.converse()))
}

/// `above(target; anchor)`: the target box is entirely higher than the anchor
/// box and their footprints overlap by at least the configured fraction of
/// the smaller footprint.
pub fn above_relation(
    scene: &Scene,
    target_id: ObjectId,
    anchor_id: ObjectId,
    params: &RelationParams,
) -> Result<Option<RelationStatement>, RelationError> {
    vertical(scene, target_id, anchor_id, RelationKind::Above, params)
}

pub fn below_relation(
    scene: &Scene,
    target_id: ObjectId,
    anchor_id: ObjectId,
    params: &RelationParams,
) -> Result<Option<RelationStatement>, RelationError> {
    vertical(scene, target_id, anchor_id, RelationKind::Below, params)
}

fn vertical(
    scene: &Scene,
    target_id: ObjectId,
    anchor_id: ObjectId,
    kind: RelationKind,
    params: &RelationParams,
) -> Result<Option<RelationStatement>, RelationError> {
    require_distinct(&[target_id, anchor_id])?;
    let t = scene
        .instance_box(target_id)
        .ok_or(RelationError::UnknownId(target_id))?;
    let a = scene
        .instance_box(anchor_id)
        .ok_or(RelationError::UnknownId(anchor_id))?;
    let (upper, lower) = if kind == RelationKind::Above {
        (t, a)
    } else {
        (a, t)
    };
    if upper.min.z - lower.max.z <= 0.0 {
        return Ok(None);
    }
    let smaller = upper.footprint_area().min(lower.footprint_area());
    if smaller <= 0.0 || upper.footprint_overlap(&lower) / smaller < params.above_min_overlap {
        return Ok(None);
    }
    Ok(Some(RelationStatement::new(kind, target_id, vec![anchor_id])))
}

pub fn near_relation(
    scene: &Scene,
    target_id: ObjectId,
    anchor_id: ObjectId,
    params: &RelationParams,
) -> Result<Option<RelationStatement>, RelationError> {
    require_distinct(&[target_id, anchor_id])?;
    let d = center(scene, target_id)?.distance(&center(scene, anchor_id)?);
    Ok((d <= params.near_distance)
        .then(|| RelationStatement::new(RelationKind::Near, target_id, vec![anchor_id])))
}

/// Re-evaluates the predicate behind a statement.
pub fn holds(
    scene: &Scene,
    statement: &RelationStatement,
    params: &RelationParams,
) -> Result<bool, RelationError> {
    if statement.anchor_ids.len() != statement.kind.arity() {
        return Ok(false);
    }
    let t = statement.target_id;
    let a = statement.anchor_ids[0];
    let found = match statement.kind {
        RelationKind::Nearest => nearest_to(scene, t, a, params)?,
        RelationKind::Farthest => farthest_from(scene, t, a, params)?,
        RelationKind::Between => between_relation(scene, t, a, statement.anchor_ids[1], params)?,
        RelationKind::SupportedBy => support_relation(scene, t, a, params)?,
        RelationKind::Supporting => supporting_relation(scene, t, a, params)?,
        RelationKind::Above => above_relation(scene, t, a, params)?,
        RelationKind::Below => below_relation(scene, t, a, params)?,
        RelationKind::Near => near_relation(scene, t, a, params)?,
    };
    Ok(found.is_some())
}

/// Every true statement whose ids all lie in `object_ids`, in a fixed order.
pub fn candidate_relations(
    scene: &Scene,
    object_ids: &[ObjectId],
    params: &RelationParams,
) -> Result<Vec<RelationStatement>, RelationError> {
    let mut ids = object_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    for &id in &ids {
        if !scene.contains_id(id) {
            return Err(RelationError::UnknownId(id));
        }
    }
    let mut out = Vec::new();
    for &t in &ids {
        for &a in &ids {
            if a == t {
                continue;
            }
            if scene.label(t) != scene.label(a) {
                out.extend(nearest_to(scene, t, a, params)?);
                out.extend(farthest_from(scene, t, a, params)?);
            }
            out.extend(support_relation(scene, t, a, params)?);
            out.extend(supporting_relation(scene, t, a, params)?);
            out.extend(above_relation(scene, t, a, params)?);
            out.extend(below_relation(scene, t, a, params)?);
            if t < a {
                out.extend(near_relation(scene, t, a, params)?);
            }
        }
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if a != t && b != t {
                    out.extend(between_relation(scene, t, a, b, params)?);
                }
            }
        }
    }
    Ok(out)
}

/// Samples at most `max_relations_per_caption` true statements among the given
/// objects. Identical inputs and seed give identical output.
pub fn generate_relations(
    scene: &Scene,
    object_ids: &[ObjectId],
    seed: u64,
    params: &RelationParams,
) -> Result<Vec<RelationStatement>, RelationError> {
    let candidates = candidate_relations(scene, object_ids, params)?;
    let k = params.max_relations_per_caption.min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, candidates.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| candidates[i].clone()).collect())
}

fn markup(labels: &BTreeMap<ObjectId, String>, id: ObjectId) -> Result<String, RelationError> {
    let label = labels.get(&id).ok_or(RelationError::MissingLabel(id))?;
    let trimmed = label.trim();
    let ends_numeric = trimmed
        .rsplit(char::is_whitespace)
        .next()
        .is_some_and(|t| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()));
    if trimmed.is_empty() || trimmed.contains(['[', ']']) || ends_numeric {
        return Err(RelationError::UnrenderableLabel(label.clone()));
    }
    Ok(format!("[{trimmed} {id}]"))
}

/// Grounded-markup sentence fragment for a statement, e.g.
/// `the [lamp 4] is supported by the [desk 2]`.
pub fn render_relation_phrase(
    statement: &RelationStatement,
    labels: &BTreeMap<ObjectId, String>,
) -> Result<String, RelationError> {
    let t = markup(labels, statement.target_id)?;
    let a = markup(labels, statement.anchor_ids[0])?;
    let target_label = labels[&statement.target_id].trim();
    Ok(match statement.kind {
        RelationKind::Nearest => format!("the {t} is the closest {target_label} to the {a}"),
        RelationKind::Farthest => format!("the {t} is the farthest {target_label} from the {a}"),
        RelationKind::Between => {
            let b = markup(labels, statement.anchor_ids[1])?;
            format!("the {t} is between the {a} and the {b}")
        }
        RelationKind::Supporting => format!("the {t} is supporting the {a}"),
        RelationKind::SupportedBy => format!("the {t} is supported by the {a}"),
        RelationKind::Above => format!("the {t} is above the {a}"),
        RelationKind::Below => format!("the {t} is below the {a}"),
        RelationKind::Near => format!("the {t} is near the {a}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3;
    use crate::scene::{InstanceAnnotation, PointCloud, PointSet};

    /// Builds a scene where each object is the 8 corners of a box.
    pub(crate) fn box_scene(objects: &[(ObjectId, &str, Box3)]) -> Scene {
        let mut points = Vec::new();
        let mut instances = Vec::new();
        for (id, label, b) in objects {
            let start = points.len();
            for &x in &[b.min.x, b.max.x] {
                for &y in &[b.min.y, b.max.y] {
                    for &z in &[b.min.z, b.max.z] {
                        points.push(Vec3::new(x, y, z));
                    }
                }
            }
            instances.push(InstanceAnnotation {
                id: *id,
                label: label.to_string(),
                mask: PointSet::new((start..points.len()).collect()),
            });
        }
        Scene::new(
            "test",
            PointCloud {
                points,
                colors: None,
            },
            instances,
        )
        .unwrap()
    }

    fn cube(c: [f64; 3], half: f64) -> Box3 {
        Box3::new(
            Vec3::new(c[0] - half, c[1] - half, c[2] - half),
            Vec3::new(c[0] + half, c[1] + half, c[2] + half),
        )
        .unwrap()
    }

    fn bx(a: [f64; 3], b: [f64; 3]) -> Box3 {
        Box3::new(a.into(), b.into()).unwrap()
    }

    #[test]
    fn nearest_tie_yields_nothing() {
        let s = box_scene(&[
            (1, "table", cube([0.0, 0.0, 0.0], 0.1)),
            (2, "chair", cube([1.0, 0.0, 0.0], 0.1)),
            (3, "chair", cube([-1.0, 0.0, 0.0], 0.1)),
        ]);
        let p = RelationParams::default();
        assert_eq!(nearest_relation(&s, 2, "chair", &p).unwrap(), None);
        assert_eq!(nearest_to(&s, 3, 1, &p).unwrap(), None);
    }

    #[test]
    fn nearest_picks_the_closer_chair() {
        let s = box_scene(&[
            (1, "table", cube([0.0, 0.0, 0.0], 0.1)),
            (2, "chair", cube([1.0, 0.0, 0.0], 0.1)),
            (3, "chair", cube([0.0, 2.0, 0.0], 0.1)),
        ]);
        let p = RelationParams::default();
        // exhaustive scan of chair distances to the table
        let table = s.instance_center(1).unwrap();
        let closest = [2, 3]
            .into_iter()
            .min_by(|a, b| {
                let da = s.instance_center(*a).unwrap().distance(&table);
                let db = s.instance_center(*b).unwrap().distance(&table);
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        assert_eq!(closest, 2);
        let st = nearest_relation(&s, 2, "chair", &p).unwrap().unwrap();
        assert_eq!(st, RelationStatement::new(RelationKind::Nearest, 2, vec![1]));
        assert_eq!(nearest_to(&s, 3, 1, &p).unwrap(), None);
        assert!(farthest_from(&s, 3, 1, &p).unwrap().is_some());
    }

    #[test]
    fn nearest_vacuous_with_single_instance() {
        let s = box_scene(&[
            (1, "table", cube([0.0, 0.0, 0.0], 0.1)),
            (2, "chair", cube([1.0, 0.0, 0.0], 0.1)),
        ]);
        let p = RelationParams::default();
        assert_eq!(nearest_relation(&s, 2, "chair", &p).unwrap(), None);
        assert_eq!(
            nearest_relation(&s, 9, "chair", &p).unwrap_err(),
            RelationError::UnknownId(9)
        );
    }

    #[test]
    fn between_cases() {
        let p = RelationParams::default();
        let s = box_scene(&[
            (1, "sofa", cube([0.0, 0.0, 0.0], 0.1)),
            (2, "table", cube([4.0, 0.0, 0.0], 0.1)),
            (3, "chair", cube([2.0, 0.0, 0.0], 0.1)),
            (4, "lamp", cube([5.0, 0.0, 0.0], 0.1)),
            // 40% along, lateral 0.2
            (5, "box", cube([1.6, 0.2, 0.0], 0.1)),
        ]);
        assert!(between_relation(&s, 3, 1, 2, &p).unwrap().is_some());
        assert!(between_relation(&s, 4, 1, 2, &p).unwrap().is_none());
        // analytic projection: s = 1.6/4 = 0.4, lateral = 0.2 < 0.5
        let st = between_relation(&s, 5, 1, 2, &p).unwrap().unwrap();
        assert_eq!(st.anchor_ids, vec![1, 2]);
        assert_eq!(
            between_relation(&s, 3, 2, 1, &p).unwrap(),
            between_relation(&s, 3, 1, 2, &p).unwrap()
        );
        assert!(matches!(
            between_relation(&s, 3, 3, 2, &p),
            Err(RelationError::DuplicateIds(_))
        ));
    }

    #[test]
    fn support_cases() {
        let p = RelationParams::default();
        let s = box_scene(&[
            (2, "desk", bx([0.0, 0.0, 0.0], [2.0, 1.0, 0.75])),
            (4, "lamp", bx([0.5, 0.2, 0.75], [0.8, 0.5, 1.2])),
            (5, "shelf", bx([0.0, 0.0, 1.75], [1.0, 1.0, 2.0])),
            // gap 0.02, footprint [1.7,2.2]x[0,1]: overlap 0.3/0.5 = 0.6
            (6, "box", bx([1.7, 0.0, 0.77], [2.2, 1.0, 1.0])),
        ]);
        assert_eq!(
            support_relation(&s, 4, 2, &p).unwrap(),
            Some(RelationStatement::new(RelationKind::SupportedBy, 4, vec![2]))
        );
        assert_eq!(
            supporting_relation(&s, 2, 4, &p).unwrap(),
            Some(RelationStatement::new(RelationKind::Supporting, 2, vec![4]))
        );
        assert_eq!(support_relation(&s, 5, 2, &p).unwrap(), None);
        assert!(support_relation(&s, 6, 2, &p).unwrap().is_some());
        let strict = RelationParams {
            support_min_overlap: 0.61,
            ..p
        };
        assert!(support_relation(&s, 6, 2, &strict).unwrap().is_none());
        assert!(above_relation(&s, 5, 2, &p).unwrap().is_some());
        assert!(below_relation(&s, 2, 5, &p).unwrap().is_some());
        assert!(above_relation(&s, 4, 2, &p).unwrap().is_none());
    }

    #[test]
    fn render_phrases() {
        let labels: BTreeMap<ObjectId, String> = [
            (1, "sofa"),
            (2, "desk"),
            (3, "chair"),
            (4, "lamp"),
            (5, "table"),
        ]
        .into_iter()
        .map(|(k, v)| (k, v.to_string()))
        .collect();
        let st = RelationStatement::new(RelationKind::SupportedBy, 4, vec![2]);
        assert_eq!(
            render_relation_phrase(&st, &labels).unwrap(),
            "the [lamp 4] is supported by the [desk 2]"
        );
        let mut labels2 = labels.clone();
        labels2.insert(2, "table".into());
        let st = RelationStatement::new(RelationKind::Between, 3, vec![1, 2]);
        assert_eq!(
            render_relation_phrase(&st, &labels2).unwrap(),
            "the [chair 3] is between the [sofa 1] and the [table 2]"
        );
        let st = RelationStatement::new(RelationKind::Near, 3, vec![9]);
        assert_eq!(
            render_relation_phrase(&st, &labels),
            Err(RelationError::MissingLabel(9))
        );
        labels2.insert(9, "room 101".into());
        assert!(matches!(
            render_relation_phrase(&st, &labels2),
            Err(RelationError::UnrenderableLabel(_))
        ));
    }

    #[test]
    fn generation_is_deterministic_and_sound() {
        let p = RelationParams::default();
        let s = box_scene(&[
            (1, "table", bx([0.0, 0.0, 0.0], [1.0, 1.0, 0.7])),
            (2, "cup", bx([0.2, 0.2, 0.7], [0.3, 0.3, 0.8])),
            (3, "chair", cube([1.5, 0.5, 0.4], 0.3)),
            (4, "chair", cube([-1.0, 0.5, 0.4], 0.3)),
            (5, "lamp", bx([0.6, 0.6, 0.7], [0.8, 0.8, 1.1])),
        ]);
        let ids = [1, 2, 3, 4, 5];
        let a = generate_relations(&s, &ids, 7, &p).unwrap();
        let b = generate_relations(&s, &ids, 7, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for st in candidate_relations(&s, &ids, &p).unwrap() {
            assert!(holds(&s, &st, &p).unwrap(), "{st:?}");
        }
        assert!(generate_relations(&s, &[1], 7, &p).unwrap().is_empty());
    }
}
