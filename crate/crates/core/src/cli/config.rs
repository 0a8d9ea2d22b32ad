use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::args::{FeatureArgs, MaskArgs, ProbeArgs};
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::imagery::CorpusSpec;
use crate::model::ModelConfig;
use crate::trainer::PretrainConfig;

const MODEL_KEYS: [&str; 9] = [
    "patch_side",
    "embed_dim",
    "encoder_depth",
    "predictor_depth",
    "heads",
    "mlp_ratio",
    "target_dim",
    "window_side",
    "paper_faithful",
];

pub(crate) fn read_config(path: Option<&Path>) -> Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::config(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(Error::config(format!("{}: {e}", path.display()))),
    }
}

/// `base` with the keys of `overlay` replaced; unknown keys are rejected by
/// the target type.
pub(crate) fn overlay<T: Serialize + DeserializeOwned>(base: &T, overlay: Map<String, Value>) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    if let Value::Object(m) = &mut v {
        m.extend(overlay);
    }
    serde_json::from_value(v).map_err(|e| Error::config(format!("config: {e}")))
}

fn take<T: DeserializeOwned>(map: &mut Map<String, Value>, key: &str) -> Result<Option<T>> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|e| Error::config(format!("config key '{key}': {e}"))),
    }
}

fn split_model_keys(map: &mut Map<String, Value>) -> Map<String, Value> {
    let mut model = Map::new();
    for k in MODEL_KEYS {
        if let Some(v) = map.remove(k) {
            model.insert(k.to_string(), v);
        }
    }
    model
}

/// Parses `"5,9,13,17"`.
pub fn parse_csv_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::config(format!("--{what}: '{t}' is not a non-negative integer")))
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(Error::config(format!("--{what} must list at least one value")))
            } else {
                Ok(v)
            }
        })
}

/// Model config for `target_dim`, with file keys and the faithful flag applied.
pub(crate) fn resolve_model(
    model_keys: Map<String, Value>,
    target_dim: impl Fn(usize) -> usize,
    paper_faithful: bool,
) -> Result<ModelConfig> {
    let explicit_dim = model_keys.get("target_dim").cloned();
    let mut model: ModelConfig = overlay(&ModelConfig::desk_default(0), model_keys)?;
    let want = target_dim(model.patch_side);
    match explicit_dim {
        Some(_) if model.target_dim != want => {
            return Err(Error::config(format!(
                "target_dim {} does not match the target feature dimension {want}",
                model.target_dim
            )))
        }
        _ => model.target_dim = want,
    }
    if paper_faithful || model.paper_faithful {
        model = model.with_paper_faithful();
    }
    model.validate()?;
    Ok(model)
}

/// Everything a pretraining run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRun {
    pub train: PretrainConfig,
    pub model: ModelConfig,
    /// Synthetic corpus used when `data` is absent.
    pub corpus: CorpusSpec,
    pub data: Option<PathBuf>,
    pub split: String,
}

pub(crate) fn apply_feature_flags(train: &mut PretrainConfig, feature: &FeatureArgs) -> Result<()> {
    if let Some(k) = feature.feature {
        train.target_feature = k;
    }
    if let Some(s) = &feature.scales {
        train.scales = parse_csv_list(s, "scales")?;
    }
    if let Some(e) = feature.epsilon {
        train.epsilon = e;
    }
    Ok(())
}

pub(crate) fn apply_mask_flags(train: &mut PretrainConfig, mask: &MaskArgs) {
    if let Some(m) = mask.mask {
        train.mask_mode = m;
    }
    if let Some(r) = mask.mask_ratio {
        train.mask_ratio = r;
    }
}

/// Splits a flat pretraining config object into trainer, model and corpus
/// parts and applies the flags.
pub fn resolve_pretrain(
    mut map: Map<String, Value>,
    feature: &FeatureArgs,
    mask: &MaskArgs,
    seed: Option<u64>,
    data: Option<PathBuf>,
    paper_faithful: bool,
) -> Result<PretrainRun> {
    let corpus = match take::<Map<String, Value>>(&mut map, "corpus")? {
        Some(m) => overlay(&CorpusSpec::default(), m)?,
        None => CorpusSpec::default(),
    };
    let file_data: Option<PathBuf> = take(&mut map, "data")?;
    let split: Option<String> = take(&mut map, "split")?;
    let model_keys = split_model_keys(&mut map);
    let faithful = paper_faithful || model_keys.get("paper_faithful").and_then(Value::as_bool).unwrap_or(false);
    let base = if faithful {
        PretrainConfig::default().paper_faithful()
    } else {
        PretrainConfig::default()
    };
    let mut train: PretrainConfig = overlay(&base, map)?;
    apply_feature_flags(&mut train, feature)?;
    apply_mask_flags(&mut train, mask);
    if let Some(s) = seed {
        train.seed = s;
    }
    train.validate()?;
    let spec = train.target_spec();
    let model = resolve_model(model_keys, |p| spec.dim(p), faithful)?;
    corpus.validate()?;
    Ok(PretrainRun {
        train,
        model,
        corpus,
        data: data.or(file_data),
        split: split.unwrap_or_else(|| "pretrain".into()),
    })
}

/// Everything a probing run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRunConfig {
    pub probe: ProbeConfig,
    pub shots: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    /// Labelled synthetic set used when `data` is absent.
    pub corpus: CorpusSpec,
    pub data: Option<PathBuf>,
    pub split: String,
    pub checkpoint: Option<PathBuf>,
    /// Architecture of the random encoder used without a checkpoint.
    pub model: ModelConfig,
}

pub(crate) fn default_labelled_corpus() -> CorpusSpec {
    CorpusSpec {
        images: 500,
        ..CorpusSpec::default()
    }
}

pub fn resolve_probe(
    mut map: Map<String, Value>,
    args: &ProbeArgs,
    seed: Option<u64>,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    split: Option<String>,
) -> Result<ProbeRunConfig> {
    let corpus = match take::<Map<String, Value>>(&mut map, "corpus")? {
        Some(m) => overlay(&default_labelled_corpus(), m)?,
        None => default_labelled_corpus(),
    };
    let file_data: Option<PathBuf> = take(&mut map, "data")?;
    let file_split: Option<String> = take(&mut map, "split")?;
    let file_ckpt: Option<PathBuf> = take(&mut map, "checkpoint")?;
    let file_shots: Option<Vec<usize>> = take(&mut map, "shots")?;
    let file_repeats: Option<usize> = take(&mut map, "repeats")?;
    let file_seed: Option<u64> = take(&mut map, "seed")?;
    let model_keys = split_model_keys(&mut map);
    let mut probe: ProbeConfig = overlay(&ProbeConfig::default(), map)?;
    if let Some(m) = args.mode {
        probe.mode = m;
    }
    probe.validate()?;
    let shots = match &args.shots {
        Some(s) => parse_csv_list(s, "shots")?,
        None => file_shots.unwrap_or_else(|| vec![10]),
    };
    if shots.is_empty() || shots.contains(&0) {
        return Err(Error::config("shots must list positive counts"));
    }
    let repeats = args.repeats.or(file_repeats).unwrap_or(10);
    if repeats == 0 {
        return Err(Error::config("repeats must be >= 1"));
    }
    let model = resolve_model(model_keys, |p| crate::features::TargetSpec::default().dim(p), false)?;
    corpus.validate()?;
    Ok(ProbeRunConfig {
        probe,
        shots,
        repeats,
        seed: seed.or(file_seed).unwrap_or(0),
        corpus,
        data: data.or(file_data),
        split: split.or(file_split).unwrap_or_else(|| "labeled".into()),
        checkpoint: checkpoint.or(file_ckpt),
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::TargetKind;
    use serde_json::json;

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file = obj(json!({"epochs": 9, "warmup_epochs": 2, "mask_ratio": 0.5, "embed_dim": 64, "heads": 2}));
        let feature = FeatureArgs {
            feature: Some(TargetKind::Pixel),
            ..FeatureArgs::default()
        };
        let mask = MaskArgs {
            mask: None,
            mask_ratio: Some(0.25),
        };
        let run = resolve_pretrain(file, &feature, &mask, Some(3), None, false).unwrap();
        assert_eq!(run.train.epochs, 9);
        assert_eq!(run.train.mask_ratio, 0.25);
        assert_eq!(run.train.seed, 3);
        assert_eq!(run.train.batch_size, 32);
        assert_eq!(run.model.embed_dim, 64);
        assert_eq!(run.model.target_dim, 64);
        assert_eq!(run.split, "pretrain");
    }

    #[test]
    fn errors_name_the_field() {
        let bad = obj(json!({"epochs": 5, "warmup_epochs": 5}));
        let err = resolve_pretrain(bad, &FeatureArgs::default(), &MaskArgs::default(), None, None, false).unwrap_err();
        assert!(err.to_string().contains("warmup_epochs"), "{err}");
        let bad = obj(json!({"epoch": 5}));
        let err = resolve_pretrain(bad, &FeatureArgs::default(), &MaskArgs::default(), None, None, false).unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
        let bad = obj(json!({"target_dim": 7}));
        let err = resolve_pretrain(bad, &FeatureArgs::default(), &MaskArgs::default(), None, None, false).unwrap_err();
        assert!(err.to_string().contains("target_dim"), "{err}");
    }

    #[test]
    fn paper_faithful_switches_schedule_and_predictor() {
        let run = resolve_pretrain(Map::new(), &FeatureArgs::default(), &MaskArgs::default(), None, None, true).unwrap();
        assert_eq!((run.train.epochs, run.train.warmup_epochs, run.train.batch_size), (200, 20, 300));
        assert_eq!(run.model.predictor_depth, 8);
    }

    #[test]
    fn csv_lists() {
        assert_eq!(parse_csv_list("5, 9,13", "scales").unwrap(), vec![5, 9, 13]);
        assert!(parse_csv_list("5,x", "scales").is_err());
        assert!(parse_csv_list("", "shots").is_err());
    }

    #[test]
    fn probe_resolution() {
        let file = obj(json!({"shots": [1, 5], "repeats": 3, "epochs": 4, "warmup_epochs": 1}));
        let args = ProbeArgs {
            shots: Some("10".into()),
            ..ProbeArgs::default()
        };
        let run = resolve_probe(file, &args, Some(8), None, None, None).unwrap();
        assert_eq!(run.shots, vec![10]);
        assert_eq!(run.repeats, 3);
        assert_eq!(run.probe.epochs, 4);
        assert_eq!(run.seed, 8);
        assert_eq!(run.split, "labeled");
    }
}
