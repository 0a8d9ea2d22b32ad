//! Few-shot evaluation of frozen or fine-tuned encoders and attention analysis.

mod attention;
mod encode;
mod probe;
mod report;
mod split;

pub use attention::{attention_distance, distance_from_maps, AttnRow};
pub use encode::{encode_dataset, encode_image_features, image_tokens};
pub use probe::{argmax, probe, probe_features, ProbeConfig, ProbeMode};
pub use report::{evaluate_few_shot, FewShotReport, ProbeRun, ShotSummary};
pub use split::{make_few_shot_split, FewShotSplit};
