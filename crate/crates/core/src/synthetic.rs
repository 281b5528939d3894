//! Deterministic synthetic indoor scenes and annotation records, for tests,
//! demos and end-to-end runs without real scan data.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::caption::{
    detection_caption, label_phrase, parse_grounded_markup, referring_caption, GroundedCaption, Provenance,
};
use crate::geometry::{Box3, Vec3};
use crate::relations::{nearest_relation, render_relation_phrase, RelationParams};
use crate::scene::{InstanceAnnotation, ObjectId, PointCloud, PointSet, Scene};

/// Derives a sub-seed from a base seed and a list of labels.
pub fn mix_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Label, nominal size (x, y, z) in meters, and for small objects the labels
/// they may stand on.
const FURNITURE: [(&str, [f64; 3]); 10] = [
    ("chair", [0.5, 0.5, 0.9]),
    ("table", [1.2, 0.8, 0.75]),
    ("desk", [1.4, 0.7, 0.75]),
    ("bed", [2.0, 1.6, 0.5]),
    ("sofa", [2.0, 0.9, 0.8]),
    ("cabinet", [0.8, 0.5, 1.2]),
    ("bookshelf", [1.0, 0.35, 1.8]),
    ("trash can", [0.35, 0.35, 0.5]),
    ("armchair", [0.8, 0.8, 0.9]),
    ("nightstand", [0.5, 0.4, 0.55]),
];

const SMALL: [(&str, [f64; 3], &[&str]); 5] = [
    ("lamp", [0.3, 0.3, 0.5], &["desk", "nightstand", "table"]),
    ("monitor", [0.6, 0.2, 0.4], &["desk"]),
    ("pillow", [0.5, 0.35, 0.15], &["bed", "sofa", "armchair"]),
    ("cup", [0.1, 0.1, 0.12], &["table", "desk"]),
    ("book", [0.22, 0.16, 0.05], &["table", "desk", "nightstand"]),
];

/// Label used for "nothing of this kind" records; never generated.
pub const ABSENT_LABEL: &str = "refrigerator";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub min_furniture: usize,
    pub max_furniture: usize,
    pub max_small: usize,
    pub room_size: f64,
    /// Extra surface points per object besides its 8 box corners.
    pub surface_points: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            min_furniture: 4,
            max_furniture: 10,
            max_small: 5,
            room_size: 6.0,
            surface_points: 12,
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, size: [f64; 3]) -> Vec3 {
    Vec3::new(
        size[0] * rng.gen_range(0.85..1.15),
        size[1] * rng.gen_range(0.85..1.15),
        size[2] * rng.gen_range(0.85..1.15),
    )
}

fn footprints_overlap(a: &Box3, b: &Box3) -> bool {
    a.min.x < b.max.x && b.min.x < a.max.x && a.min.y < b.max.y && b.min.y < a.max.y
}

fn box_points(rng: &mut ChaCha8Rng, b: &Box3, extra: usize) -> Vec<Vec3> {
    let mut pts = Vec::with_capacity(8 + extra);
    for &x in &[b.min.x, b.max.x] {
        for &y in &[b.min.y, b.max.y] {
            for &z in &[b.min.z, b.max.z] {
                pts.push(Vec3::new(x, y, z));
            }
        }
    }
    for _ in 0..extra {
        let mut p = [
            rng.gen_range(b.min.x..=b.max.x),
            rng.gen_range(b.min.y..=b.max.y),
            rng.gen_range(b.min.z..=b.max.z),
        ];
        // snap one coordinate to a face so points lie on the surface
        let axis = rng.gen_range(0..3);
        let (lo, hi) = match axis {
            0 => (b.min.x, b.max.x),
            1 => (b.min.y, b.max.y),
            _ => (b.min.z, b.max.z),
        };
        p[axis] = if rng.gen_bool(0.5) { lo } else { hi };
        pts.push(Vec3::from(p));
    }
    pts
}

/// A room with furniture on the floor and small objects resting on top of
/// suitable furniture. Instance ids start at 1.
pub fn synthetic_scene(scene_id: &str, seed: u64, params: &SyntheticParams) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &["scene", scene_id]));
    let mut placed: Vec<(&str, Box3)> = Vec::new();
    let n_furniture = rng.gen_range(params.min_furniture..=params.max_furniture.max(params.min_furniture));
    for _ in 0..n_furniture {
        // chairs are common, so several scenes hold repeated labels
        let (label, size) = if rng.gen_bool(0.3) {
            FURNITURE[0]
        } else {
            FURNITURE[rng.gen_range(0..FURNITURE.len())]
        };
        let ext = jitter(&mut rng, size);
        for _ in 0..30 {
            let x = rng.gen_range(0.0..(params.room_size - ext.x).max(0.01));
            let y = rng.gen_range(0.0..(params.room_size - ext.y).max(0.01));
            let b = Box3::new(Vec3::new(x, y, 0.0), Vec3::new(x + ext.x, y + ext.y, ext.z)).expect("ordered");
            if placed.iter().all(|(_, o)| !footprints_overlap(o, &b)) {
                placed.push((label, b));
                break;
            }
        }
    }
    let n_small = rng.gen_range(0..=params.max_small);
    for _ in 0..n_small {
        let (label, size, hosts) = SMALL[rng.gen_range(0..SMALL.len())];
        let candidates: Vec<Box3> = placed
            .iter()
            .filter(|(l, _)| hosts.contains(l))
            .map(|(_, b)| *b)
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let host = candidates[rng.gen_range(0..candidates.len())];
        let ext = jitter(&mut rng, size);
        let ext = Vec3::new(ext.x.min(host.extent().x), ext.y.min(host.extent().y), ext.z);
        let x = rng.gen_range(host.min.x..=host.max.x - ext.x);
        let y = rng.gen_range(host.min.y..=host.max.y - ext.y);
        let z = host.max.z;
        let b = Box3::new(Vec3::new(x, y, z), Vec3::new(x + ext.x, y + ext.y, z + ext.z)).expect("ordered");
        placed.push((label, b));
    }

    let mut points = Vec::new();
    let mut colors = Vec::new();
    let mut instances = Vec::new();
    for (i, (label, b)) in placed.iter().enumerate() {
        let start = points.len();
        let color = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        for p in box_points(&mut rng, b, params.surface_points) {
            points.push(p);
            colors.push(color);
        }
        instances.push(InstanceAnnotation {
            id: i as ObjectId + 1,
            label: label.to_string(),
            mask: PointSet::new((start..points.len()).collect()),
        });
    }
    Scene::new(
        scene_id,
        PointCloud {
            points,
            colors: Some(colors),
        },
        instances,
    )
    .expect("synthetic scenes are valid")
}

/// `count` scenes named `synthetic_0000`, `synthetic_0001`, ….
pub fn synthetic_corpus(count: usize, seed: u64, params: &SyntheticParams) -> Vec<Scene> {
    (0..count)
        .map(|i| synthetic_scene(&format!("synthetic_{i:04}"), seed, params))
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn parsed(scene_id: &str, markup: &str, provenance: Provenance) -> GroundedCaption {
    let (text, correspondences) = parse_grounded_markup(markup).expect("generated markup parses");
    GroundedCaption {
        scene_id: scene_id.to_string(),
        text,
        correspondences,
        provenance,
    }
}

fn nearest_other(scene: &Scene, id: ObjectId) -> Option<ObjectId> {
    let c = scene.instance_center(id)?;
    let label = scene.label(id)?;
    scene
        .instances()
        .iter()
        .filter(|i| i.label != label)
        .map(|i| (scene.instance_center(i.id).unwrap().distance(&c), i.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// Stand-ins for the existing annotation types of a scene: per-category
/// detection records, referring expressions (single, multiple and zero
/// targets), per-object descriptions and simple questions.
pub fn synthetic_annotations(scene: &Scene, params: &RelationParams) -> Vec<GroundedCaption> {
    let sid = scene.scene_id();
    let labels = scene.labels();
    let mut by_label: BTreeMap<&str, Vec<ObjectId>> = BTreeMap::new();
    for inst in scene.instances() {
        by_label.entry(inst.label.as_str()).or_default().push(inst.id);
    }
    let mut out = Vec::new();

    for label in by_label.keys() {
        out.push(detection_caption(scene, label));
    }
    out.push(detection_caption(scene, ABSENT_LABEL));

    for inst in scene.instances() {
        let markup = match nearest_relation(scene, inst.id, &inst.label, params) {
            Ok(Some(stmt)) if by_label[inst.label.as_str()].len() > 1 => {
                render_relation_phrase(&stmt, &labels).expect("synthetic labels render")
            }
            _ => format!("the [{} {}] in the room", inst.label, inst.id),
        };
        let c = parsed(sid, &markup, Provenance::default());
        out.push(referring_caption(
            sid,
            &c.text,
            Some(c.correspondences[0].span),
            &[inst.id],
            Some(&inst.label),
        ));
    }
    for (label, ids) in &by_label {
        if ids.len() > 1 {
            let id_list: Vec<String> = ids.iter().map(ToString::to_string).collect();
            let c = parsed(sid, &format!("every [{label} {}] in the room", id_list.join(" ")), Provenance::default());
            out.push(referring_caption(sid, &c.text, Some(c.correspondences[0].span), ids, Some(label)));
        }
    }
    out.push(referring_caption(
        sid,
        &format!("every {ABSENT_LABEL} in the room"),
        None,
        &[],
        Some(ABSENT_LABEL),
    ));

    for inst in scene.instances() {
        let phrase = capitalize(&label_phrase(&inst.label));
        let markup = match nearest_other(scene, inst.id) {
            Some(o) => format!("[{phrase} {}] stands near [the {} {o}].", inst.id, labels[&o]),
            None => format!("[{phrase} {}] is in the room.", inst.id),
        };
        out.push(parsed(
            sid,
            &markup,
            Provenance {
                source: Some("dense".into()),
                category: Some(inst.label.clone()),
                target_ids: Some(vec![inst.id]),
                ..Provenance::default()
            },
        ));
    }

    for (label, ids) in &by_label {
        if ids.len() != 1 {
            continue;
        }
        if let Some(o) = nearest_other(scene, ids[0]) {
            let other = &labels[&o];
            out.push(parsed(
                sid,
                &format!("[the {other} {o}] is next to [the {label} {}]", ids[0]),
                Provenance {
                    source: Some("qa".into()),
                    question: Some(format!("What is next to the {label}?")),
                    answer: Some(format!("the {other}")),
                    ..Provenance::default()
                },
            ));
        }
    }
    out
}

const WORDS: [&str; 24] = [
    "the", "a", "small", "wooden", "chair", "table", "lamp", "near", "café", "naïve", "x-ray", "over",
    "2nd", "blue", "sofa", "with", "four", "legs", "on", "left", "it's", "window", "tall", "grey",
];

/// A random grounded caption over ids 1..=40: words from a small vocabulary
/// (some non-ASCII) with disjoint phrase spans in text order.
pub fn random_caption(rng: &mut impl Rng, scene_id: &str) -> GroundedCaption {
    let n = rng.gen_range(1..16);
    let words: Vec<&str> = (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
    let mut text = String::new();
    let mut starts = Vec::with_capacity(n);
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            text.push(' ');
        }
        starts.push(text.chars().count());
        text.push_str(w);
    }
    if rng.gen_bool(0.5) {
        text.push('.');
    }
    let mut correspondences = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.gen_bool(0.35) {
            let len = rng.gen_range(1..=3).min(n - i);
            let start = starts[i];
            let end = starts[i + len - 1] + words[i + len - 1].chars().count();
            let k = rng.gen_range(1..=3);
            let mut ids: Vec<ObjectId> = (0..k).map(|_| rng.gen_range(1..=40)).collect();
            ids.sort_unstable();
            ids.dedup();
            correspondences.push(crate::caption::PhraseCorrespondence {
                span: crate::caption::Span::new(start, end),
                ids,
            });
            i += len + 1;
        } else {
            i += 1;
        }
    }
    let mut provenance = Provenance::default();
    if rng.gen_bool(0.5) {
        provenance.category = Some(WORDS[rng.gen_range(0..WORDS.len())].to_string());
    }
    if rng.gen_bool(0.5) {
        provenance.target_ids = Some(vec![rng.gen_range(1..=40)]);
    }
    if rng.gen_bool(0.3) {
        provenance.question = Some("what is there?".into());
        provenance.answer = Some(words[0].to_string());
    }
    GroundedCaption {
        scene_id: scene_id.to_string(),
        text,
        correspondences,
        provenance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relations::{support_relation, RelationKind};

    #[test]
    fn deterministic_and_valid() {
        let p = SyntheticParams::default();
        let a = synthetic_scene("s0", 7, &p);
        let b = synthetic_scene("s0", 7, &p);
        assert_eq!(a, b);
        assert_ne!(a, synthetic_scene("s1", 7, &p));
        assert!(a.instances().len() >= 2);
        assert_eq!(Scene::from_json_str(&a.to_json_string()).unwrap(), a);
    }

    #[test]
    fn small_objects_rest_on_furniture() {
        let p = SyntheticParams::default();
        let mut supported = 0;
        for scene in synthetic_corpus(20, 1, &p) {
            for inst in scene.instances() {
                if SMALL.iter().any(|s| s.0 == inst.label) {
                    let found = scene.ids().filter(|&o| o != inst.id).any(|o| {
                        support_relation(&scene, inst.id, o, &RelationParams::default())
                            .unwrap()
                            .is_some_and(|s| s.kind == RelationKind::SupportedBy)
                    });
                    assert!(found, "{} {} floats", scene.scene_id(), inst.id);
                    supported += 1;
                }
            }
        }
        assert!(supported > 0);
    }

    #[test]
    fn annotations_reference_real_objects() {
        let scene = synthetic_scene("s", 3, &SyntheticParams::default());
        let anns = synthetic_annotations(&scene, &RelationParams::default());
        for a in &anns {
            for id in a.referenced_ids() {
                assert!(scene.contains_id(id));
            }
        }
        assert!(anns.iter().any(|a| a.provenance.category.as_deref() == Some(ABSENT_LABEL)
            && a.correspondences.is_empty()));
    }

    #[test]
    fn mixed_seeds_differ() {
        assert_ne!(mix_seed(1, &["a", "b"]), mix_seed(1, &["ab"]));
        assert_eq!(mix_seed(5, &["x"]), mix_seed(5, &["x"]));
    }
}
