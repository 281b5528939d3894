//! Toolkit for grounded 3D scene-text data.
//!
//! The crate covers the non-neural side of referent-token grounding:
//!
//! * [`scene`] and [`geometry`]: scenes, instance masks, boxes and IoU.
//! * [`relations`]: rule-based spatial relations between instances.
//! * [`caption`]: grounded scene-caption generation and the `[phrase id]` markup.
//! * [`instruct`]: conversion of grounded text into `<p>…</p> <ref>` dialogues.
//! * [`align`]: similarity matrices, bipartite matching and the focal/dice losses.
//! * [`eval`]: grounding accuracy, multi-object F1, mask AP, BLEU-4 and CIDEr.
//! * [`llm`]: prompt rendering and a record/replay text-completion client.

pub mod align;
pub mod caption;
pub mod config;
pub mod eval;
pub mod geometry;
pub mod instruct;
pub mod llm;
pub mod pipeline;
pub mod relations;
pub mod scene;
pub mod selfcheck;
pub mod synthetic;
pub mod tokenize;

pub use geometry::{box_iou, Box3, Vec3};
pub use scene::{load_scene, ObjectId, PointSet, Scene};
