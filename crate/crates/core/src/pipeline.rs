//! Scene-level drivers shared by the command-line tool and the end-to-end
//! tests: caption generation, instruction conversion and self-evaluation.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::caption::{
    compose_caption, condense_object_caption, inject_relations, select_local_scene, validate_caption,
    CaptionCandidate, CaptionError, CaptionPrompts, GroundedCaption, SelectionParams,
};
use crate::eval::{
    detection_ap, grounding_accuracy, iou_gated_caption_metrics, multi_grounding_f1, CaptionGt, CaptionPrediction,
    DetectedMask, EvalError, GroundingGt, GroundingPrediction, GtMask, MetricReport, SceneDetections, SceneGt,
    ScoredBox,
};
use crate::geometry::Vec3;
use crate::instruct::{convert_embodied, convert_task, GroupingMode, InstructError, InstructionSample, TaskKind, TemplateLibrary};
use crate::llm::{LlmClient, PromptSpec};
use crate::relations::{generate_relations, RelationParams};
use crate::scene::{ObjectId, Scene};
use crate::synthetic::{mix_seed, synthetic_annotations};

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub seed: u64,
    pub selection: SelectionParams,
    pub relations: RelationParams,
    pub word_cap: usize,
    pub anchors_per_scene: Option<usize>,
    /// Also emit the stand-in detection, referring, dense and QA records.
    pub annotations: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneCaptions {
    pub captions: Vec<GroundedCaption>,
    /// One line per discarded candidate: anchor and reason.
    pub rejected: Vec<String>,
}

fn anchors(scene: &Scene, opts: &GenerateOptions) -> Vec<ObjectId> {
    let ids: Vec<ObjectId> = scene.ids().collect();
    match opts.anchors_per_scene {
        Some(k) if k < ids.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, &["anchors", scene.scene_id()]));
            let mut picked: Vec<ObjectId> = index::sample(&mut rng, ids.len(), k).into_iter().map(|i| ids[i]).collect();
            picked.sort_unstable();
            picked
        }
        _ => ids,
    }
}

/// Runs select, condense, compose, relation sampling, relation merge and
/// validation for every anchor of a scene. Rejected candidates are counted,
/// not fatal; model or replay failures are.
pub fn generate_scene_captions(
    scene: &Scene,
    client: &LlmClient,
    prompts: &CaptionPrompts,
    opts: &GenerateOptions,
) -> Result<SceneCaptions, CaptionError> {
    let sid = scene.scene_id();
    let labels = scene.labels();
    let coords: BTreeMap<ObjectId, Vec3> = scene
        .ids()
        .map(|id| (id, scene.instance_center(id).expect("known id")))
        .collect();
    let mut out = SceneCaptions::default();
    for anchor in anchors(scene, opts) {
        let a = anchor.to_string();
        let selection = select_local_scene(scene, anchor, mix_seed(opts.seed, &["select", sid, &a]), &opts.selection)?;
        let object_captions = selection
            .member_ids
            .iter()
            .map(|&id| {
                let label = &labels[&id];
                condense_object_caption(id, label, &format!("A {label}."), client, prompts)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let reject = |out: &mut SceneCaptions, e: CaptionError| match e {
            CaptionError::Rejected(r) => {
                out.rejected.push(format!("{sid} anchor {anchor}: {r}"));
                Ok(())
            }
            e => Err(e),
        };
        let base = match compose_caption(&selection, &object_captions, &coords, client, prompts, opts.word_cap) {
            Ok(c) => c,
            Err(e) => {
                reject(&mut out, e)?;
                continue;
            }
        };
        let statements = generate_relations(
            scene,
            &selection.member_ids,
            mix_seed(opts.seed, &["relations", sid, &a]),
            &opts.relations,
        )?;
        let merged = match inject_relations(&base, &statements, &labels, client, prompts, opts.word_cap) {
            Ok(c) => c,
            Err(e) => {
                reject(&mut out, e)?;
                continue;
            }
        };
        match validate_caption(CaptionCandidate::Structured(merged), scene, opts.word_cap) {
            Ok(c) => out.captions.push(c),
            Err(r) => out.rejected.push(format!("{sid} anchor {anchor}: {r}")),
        }
    }
    if opts.annotations {
        out.captions.extend(synthetic_annotations(scene, &opts.relations));
    }
    Ok(out)
}

/// Instruction tasks a caption feeds, decided by its source.
pub fn tasks_for(caption: &GroundedCaption) -> Vec<TaskKind> {
    let prov = &caption.provenance;
    match prov.source.as_deref() {
        Some("detection") => vec![TaskKind::Detection],
        Some("referring") => match prov.target_ids.as_deref() {
            Some([_]) => vec![TaskKind::SingleGrounding],
            _ => vec![TaskKind::MultiGrounding],
        },
        Some("dense") => vec![TaskKind::DenseCaptioning],
        Some("qa") => vec![TaskKind::Qa],
        Some("scene_caption") => vec![
            TaskKind::SceneCaptioning,
            TaskKind::EmbodiedDialogue,
            TaskKind::EmbodiedPlanning,
        ],
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvertOptions {
    pub seed: u64,
    pub grounding_rate: f64,
    pub grouping: GroupingMode,
}

pub struct EmbodiedPrompts {
    pub dialogue: PromptSpec,
    pub planning: PromptSpec,
}

/// Converts the captions of one scene, in input order, task order within a
/// caption. Each sample gets its own seed from the caption's position.
pub fn convert_scene_captions(
    captions: &[GroundedCaption],
    templates: &TemplateLibrary,
    prompts: &EmbodiedPrompts,
    client: &LlmClient,
    opts: &ConvertOptions,
) -> Result<Vec<InstructionSample>, InstructError> {
    let mut out = Vec::new();
    for (i, caption) in captions.iter().enumerate() {
        let idx = i.to_string();
        for task in tasks_for(caption) {
            let seed = mix_seed(opts.seed, &["convert", &caption.scene_id, &idx, task.as_str()]);
            let sample = if task.is_embodied() {
                let prompt = if task == TaskKind::EmbodiedDialogue {
                    &prompts.dialogue
                } else {
                    &prompts.planning
                };
                convert_embodied(caption, task, templates, prompt, client, seed)?
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &["grounding"]));
                let requested = rng.gen_bool(opts.grounding_rate.clamp(0.0, 1.0));
                convert_task(caption, task, templates, requested, seed)?
            };
            out.push(match opts.grouping {
                GroupingMode::OneToOne => sample.regroup(GroupingMode::OneToOne),
                GroupingMode::OneToMany => sample,
            });
        }
    }
    Ok(out)
}

/// Ground-truth and prediction files for every benchmark, built from scenes
/// and the annotation records in a caption corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalInputs {
    pub grounding_gt: Vec<GroundingGt>,
    pub multi_gt: Vec<GroundingGt>,
    pub detection_gt: Vec<SceneGt>,
    pub caption_gt: Vec<CaptionGt>,
}

pub fn eval_inputs(scenes: &[Scene], captions: &[GroundedCaption]) -> EvalInputs {
    let by_id: BTreeMap<&str, &Scene> = scenes.iter().map(|s| (s.scene_id(), s)).collect();
    let mut inputs = EvalInputs::default();
    let mut counter: BTreeMap<&str, usize> = BTreeMap::new();
    for c in captions {
        let Some(scene) = by_id.get(c.scene_id.as_str()) else { continue };
        let n = counter.entry(&c.scene_id).or_default();
        let query_id = format!("{}/{n}", c.scene_id);
        *n += 1;
        let targets = c.provenance.target_ids.clone().unwrap_or_default();
        let boxes: Vec<_> = targets.iter().filter_map(|&id| scene.instance_box(id)).collect();
        match c.provenance.source.as_deref() {
            Some("referring") => {
                if boxes.len() == 1 {
                    inputs.grounding_gt.push(GroundingGt {
                        query_id: query_id.clone(),
                        boxes: boxes.clone(),
                    });
                }
                inputs.multi_gt.push(GroundingGt { query_id, boxes });
            }
            Some("dense") if boxes.len() == 1 => inputs.caption_gt.push(CaptionGt {
                // caption ground truth is keyed by object id, which must stay
                // unique across scenes
                object_id: inputs.caption_gt.len() as ObjectId,
                bbox: boxes[0],
                references: vec![c.text.clone()],
            }),
            _ => {}
        }
    }
    for scene in scenes {
        inputs.detection_gt.push(SceneGt {
            scene_id: scene.scene_id().to_string(),
            instances: scene
                .instances()
                .iter()
                .map(|i| GtMask {
                    label: i.label.clone(),
                    mask: i.mask.clone(),
                })
                .collect(),
        });
    }
    inputs
}

/// Scores predictions that equal the ground truth: every metric must reach
/// its maximum.
pub fn self_evaluate(scenes: &[Scene], captions: &[GroundedCaption], thresholds: &[f64], score_filter: f64) -> Result<MetricReport, EvalError> {
    let inputs = eval_inputs(scenes, captions);
    let as_pred = |g: &GroundingGt| GroundingPrediction {
        query_id: g.query_id.clone(),
        boxes: g.boxes.iter().map(|&bbox| ScoredBox { bbox, score: 1.0 }).collect(),
    };
    let mut report = MetricReport::default();
    let grounding: Vec<_> = inputs.grounding_gt.iter().map(as_pred).collect();
    report.extend_prefixed("grounding/", &grounding_accuracy(&grounding, &inputs.grounding_gt, thresholds)?);
    let multi: Vec<_> = inputs.multi_gt.iter().map(as_pred).collect();
    report.extend_prefixed("multi/", &multi_grounding_f1(&multi, &inputs.multi_gt, score_filter, thresholds)?);
    let detections: Vec<_> = inputs
        .detection_gt
        .iter()
        .map(|g| SceneDetections {
            scene_id: g.scene_id.clone(),
            instances: g
                .instances
                .iter()
                .map(|i| DetectedMask {
                    label: i.label.clone(),
                    mask: i.mask.clone(),
                    score: 1.0,
                })
                .collect(),
        })
        .collect();
    report.extend_prefixed("detection/", &detection_ap(&detections, &inputs.detection_gt)?);
    let caps: Vec<_> = inputs
        .caption_gt
        .iter()
        .map(|g| CaptionPrediction {
            object_id: g.object_id,
            bbox: g.bbox,
            caption: g.references[0].clone(),
        })
        .collect();
    report.extend_prefixed("caption/", &iou_gated_caption_metrics(&caps, &inputs.caption_gt, thresholds)?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{synthetic_scene, SyntheticParams};

    fn opts() -> GenerateOptions {
        GenerateOptions {
            seed: 11,
            selection: SelectionParams::default(),
            relations: RelationParams::default(),
            word_cap: 256,
            anchors_per_scene: Some(3),
            annotations: true,
        }
    }

    #[test]
    fn generate_and_self_evaluate() {
        let scene = synthetic_scene("s", 2, &SyntheticParams::default());
        let client = LlmClient::fallback();
        let out = generate_scene_captions(&scene, &client, &CaptionPrompts::builtin(), &opts()).unwrap();
        let again = generate_scene_captions(&scene, &client, &CaptionPrompts::builtin(), &opts()).unwrap();
        assert_eq!(out, again);
        assert!(out.captions.iter().any(|c| c.provenance.source.as_deref() == Some("scene_caption")));
        let r = self_evaluate(&[scene], &out.captions, &[0.25, 0.5], 0.3).unwrap();
        for key in ["grounding/Acc@0.5", "multi/F1@0.5", "detection/AP", "caption/B-4@0.5"] {
            assert_eq!(r.get(key), Some(1.0), "{key}");
        }
    }

    #[test]
    fn converts_every_record() {
        let scene = synthetic_scene("s", 4, &SyntheticParams::default());
        let client = LlmClient::fallback();
        let out = generate_scene_captions(&scene, &client, &CaptionPrompts::builtin(), &opts()).unwrap();
        let prompts = EmbodiedPrompts {
            dialogue: PromptSpec::load(None, "embodied_dialogue").unwrap(),
            planning: PromptSpec::load(None, "embodied_planning").unwrap(),
        };
        let copts = ConvertOptions {
            seed: 1,
            grounding_rate: 0.5,
            grouping: GroupingMode::OneToMany,
        };
        let samples =
            convert_scene_captions(&out.captions, &TemplateLibrary::builtin(), &prompts, &client, &copts).unwrap();
        let expected: usize = out.captions.iter().map(|c| tasks_for(c).len()).sum();
        assert_eq!(samples.len(), expected);
        for s in &samples {
            assert!(crate::instruct::check_sample(s).is_empty(), "{s:?}");
        }
    }
}
