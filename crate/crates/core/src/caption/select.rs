use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CaptionError, LocalSelection};
use crate::scene::{ObjectId, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    /// Starting search radius around the anchor center, meters.
    pub radius: f64,
    pub shrink_step: f64,
    /// Upper bound on members (anchor included) before sampling.
    pub max_objects: usize,
    /// Range of the per-label keep probability.
    pub keep_prob: (f64, f64),
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            radius: 2.0,
            shrink_step: 0.1,
            max_objects: 15,
            keep_prob: (0.6, 0.9),
        }
    }
}

/// Picks the objects around `anchor_id` that a local caption will describe.
///
/// All instances whose center lies within the radius of the anchor center are
/// counted; while there are more than `max_objects` the radius shrinks by
/// `shrink_step`. Each label present among the non-anchor members then gets one
/// keep probability drawn uniformly from `keep_prob`, and every non-anchor
/// member is kept independently with its label's probability. The anchor is
/// always kept.
pub fn select_local_scene(
    scene: &Scene,
    anchor_id: ObjectId,
    seed: u64,
    params: &SelectionParams,
) -> Result<LocalSelection, CaptionError> {
    let anchor = scene
        .instance_center(anchor_id)
        .ok_or(CaptionError::UnknownAnchor(anchor_id))?;
    let mut by_distance: Vec<(f64, ObjectId)> = scene
        .ids()
        .filter(|&id| id != anchor_id)
        .map(|id| (scene.instance_center(id).unwrap().distance(&anchor), id))
        .collect();
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let max_others = params.max_objects.max(1) - 1;
    let mut step = 0u32;
    let (radius, mut others) = loop {
        let radius = params.radius - f64::from(step) * params.shrink_step;
        if radius <= 0.0 || params.shrink_step <= 0.0 {
            // Co-located objects: keep the closest ones.
            let r = radius.max(0.0);
            let n = by_distance.iter().take_while(|(d, _)| *d <= r).count();
            break (r, by_distance[..n.min(max_others)].to_vec());
        }
        let n = by_distance.partition_point(|(d, _)| *d <= radius);
        if n <= max_others {
            break (radius, by_distance[..n].to_vec());
        }
        step += 1;
    };
    others.sort_by_key(|&(_, id)| id);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep_prob: BTreeMap<&str, f64> = BTreeMap::new();
    for (_, id) in &others {
        keep_prob.insert(scene.label(*id).unwrap(), 0.0);
    }
    let (lo, hi) = params.keep_prob;
    for p in keep_prob.values_mut() {
        *p = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    }
    let mut members = vec![anchor_id];
    for (_, id) in others {
        let p = keep_prob[scene.label(id).unwrap()];
        if rng.gen::<f64>() < p {
            members.push(id);
        }
    }
    members.sort_unstable();
    Ok(LocalSelection {
        scene_id: scene.scene_id().to_string(),
        anchor_id,
        member_ids: members,
        radius_used: radius,
    })
}
