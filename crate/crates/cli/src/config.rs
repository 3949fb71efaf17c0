//! Flat `key = value` run configuration.
//!
//! Resolution order, later layers winning: built-in defaults, the config
//! file, command-line flags. Blank lines and lines starting with `#` are
//! ignored; a `#` after a value starts a trailing comment. Unknown keys and
//! repeated keys are errors. Relative paths are taken relative to the
//! working directory.
//!
//! | key | default |
//! |-----|---------|
//! | `manifest` | none |
//! | `out_dir` | `out` |
//! | `seed` | `42` |
//! | `threshold` | `0.5` |
//! | `split.test_fraction` | `0.2` |
//! | `split.validation_fraction` | `0.1` |
//! | `split.max_reseeds` | `10` |
//! | `preprocess.smoothing` | `none` (`mean3`, `median3`) |
//! | `model.input` | `3x8x8` |
//! | `train.epochs` | `50` |
//! | `train.batch_size` | `32` |
//! | `train.learning_rate` | `0.0001` |
//! | `train.beta1` / `train.beta2` / `train.epsilon` | `0.9` / `0.999` / `1e-8` |
//! | `train.loss` | `bce` (`softmax`) |
//! | `train.select` | `val_loss` (`val_error`) |
//! | `inception.*` | `stem`, `head`, `modules`, `pool`, `<i>.branches`, `<i>.factorized` |
//! | `densenet.*` | `stem`, `head`, `layers`, `growth`, `kernel`, `transition` |
//! | `fusion.weights` | `0.45,0.55` |
//! | `fusion.sweep` | `false` |
//! | `fusion.sweep_step` | `0.05` |
//! | `demo.samples` | `200` |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dermfuse_core::data::{PreprocessConfig, SmoothKind, SplitConfig};
use dermfuse_core::fusion::FusionWeights;
use dermfuse_core::nn::{ArchKind, InputShape, ModelSpec, Network};
use dermfuse_core::optim::AdamConfig;
use dermfuse_core::train::{LossKind, Selection, TrainConfig};

use crate::error::CliError;

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Drives the split, weight init, batch order and synthetic data.
    pub seed: u64,
    pub threshold: f64,
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub max_reseeds: u32,
    pub smoothing: SmoothKind,
    pub input: InputShape,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossKind,
    pub selection: Selection,
    pub inception: ModelSpec,
    pub densenet: ModelSpec,
    pub weights: FusionWeights,
    pub sweep: bool,
    pub sweep_step: f64,
    pub demo_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_entries(BTreeMap::new()).expect("defaults are valid")
    }
}

/// Values given on the command line; `None` leaves the lower layer alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub loss: Option<LossKind>,
    pub threshold: Option<f64>,
    pub weights: Option<Vec<f64>>,
    pub sweep: bool,
}

impl Overrides {
    fn apply(&self, kv: &mut BTreeMap<String, String>) {
        let mut set = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        if let Some(p) = &self.manifest {
            set("manifest", p.display().to_string());
        }
        if let Some(p) = &self.out_dir {
            set("out_dir", p.display().to_string());
        }
        if let Some(s) = self.seed {
            set("seed", s.to_string());
        }
        if let Some(l) = self.loss {
            set("train.loss", loss_name(l).to_string());
        }
        if let Some(t) = self.threshold {
            set("threshold", t.to_string());
        }
        if let Some(w) = &self.weights {
            set("fusion.weights", w.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
            set("fusion.sweep", "false".into());
        }
        if self.sweep {
            set("fusion.sweep", "true".into());
        }
    }
}

pub fn loss_name(l: LossKind) -> &'static str {
    match l {
        LossKind::BinaryCrossEntropy => "bce",
        LossKind::CategoricalCrossEntropy => "softmax",
    }
}

pub fn parse_loss(s: &str) -> Result<LossKind, String> {
    match s.trim() {
        "bce" => Ok(LossKind::BinaryCrossEntropy),
        "softmax" | "cce" => Ok(LossKind::CategoricalCrossEntropy),
        other => Err(format!("unknown loss {other:?} (bce, softmax)")),
    }
}

/// Splits config text into entries, rejecting malformed and repeated lines.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut kv = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", n + 1)));
        }
        if kv.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: key {k:?} given twice", n + 1)));
        }
    }
    Ok(kv)
}

/// Defaults, then `path` if given, then `overrides`.
pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut kv = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            parse_entries(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                other => other,
            })?
        }
        None => BTreeMap::new(),
    };
    overrides.apply(&mut kv);
    RunConfig::from_entries(kv)
}

fn parse<T: FromStr>(kv: &mut BTreeMap<String, String>, key: &str, default: T) -> Result<T, CliError> {
    match kv.remove(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| CliError::Config(format!("{key} = {v:?} is not valid"))),
    }
}

fn parse_bool(kv: &mut BTreeMap<String, String>, key: &str, default: bool) -> Result<bool, CliError> {
    match kv.remove(key).as_deref() {
        None => Ok(default),
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        Some(v) => Err(CliError::Config(format!("{key} = {v:?} is not true or false"))),
    }
}

fn fraction(key: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{key} = {v} must lie strictly between 0 and 1")))
    }
}

fn is_inception_key(sub: &str) -> bool {
    match sub {
        "stem" | "head" | "modules" | "pool" => true,
        _ => sub
            .split_once('.')
            .is_some_and(|(i, k)| i.parse::<usize>().is_ok() && matches!(k, "branches" | "factorized")),
    }
}

fn is_dense_key(sub: &str) -> bool {
    matches!(sub, "stem" | "head" | "layers" | "growth" | "kernel" | "transition")
}

/// Applies `prefix.*` entries on top of `base` via the canonical spec text.
fn model_spec(kv: &mut BTreeMap<String, String>, prefix: &str, base: ModelSpec) -> Result<ModelSpec, CliError> {
    let mut canonical = parse_entries(&base.to_text()).expect("canonical spec text parses");
    let keys: Vec<String> = kv.keys().filter(|k| k.starts_with(&format!("{prefix}."))).cloned().collect();
    for key in keys {
        let sub = &key[prefix.len() + 1..];
        let target = match (prefix, sub) {
            (_, "stem" | "head") => sub.to_string(),
            ("inception", s) if is_inception_key(s) => format!("inception.{s}"),
            ("densenet", s) if is_dense_key(s) => format!("dense.{s}"),
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        };
        let value = kv.remove(&key).expect("listed above");
        canonical.insert(target, value);
    }
    let text: String = canonical.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let spec = ModelSpec::from_text(&text).map_err(|e| CliError::Config(format!("{prefix}: {e}")))?;
    Network::compile(&spec).map_err(|e| CliError::Config(format!("{prefix}: {e}")))?;
    Ok(spec)
}

impl RunConfig {
    /// Interprets raw entries; every key must be consumed.
    pub fn from_entries(mut kv: BTreeMap<String, String>) -> Result<Self, CliError> {
        let kv = &mut kv;
        let manifest = kv.remove("manifest").map(PathBuf::from);
        let out_dir = PathBuf::from(kv.remove("out_dir").unwrap_or_else(|| "out".into()));
        let seed = parse(kv, "seed", 42u64)?;
        let threshold = parse(kv, "threshold", 0.5f64)?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(CliError::Config(format!("threshold = {threshold} must lie in [0, 1]")));
        }
        let test_fraction = fraction("split.test_fraction", parse(kv, "split.test_fraction", 0.2)?)?;
        let validation_fraction = fraction("split.validation_fraction", parse(kv, "split.validation_fraction", 0.1)?)?;
        let max_reseeds = parse(kv, "split.max_reseeds", 10u32)?;
        let smoothing = match kv.remove("preprocess.smoothing") {
            None => SmoothKind::None,
            Some(v) => v.parse().map_err(CliError::Config)?,
        };
        let input: InputShape = match kv.remove("model.input") {
            None => InputShape {
                channels: 3,
                height: 8,
                width: 8,
            },
            Some(v) => v.parse().map_err(|e| CliError::Config(format!("model.input: {e}")))?,
        };
        let epochs = parse(kv, "train.epochs", 50usize)?;
        let batch_size = parse(kv, "train.batch_size", 32usize)?;
        let d = AdamConfig::default();
        let adam = AdamConfig {
            learning_rate: parse(kv, "train.learning_rate", d.learning_rate)?,
            beta1: parse(kv, "train.beta1", d.beta1)?,
            beta2: parse(kv, "train.beta2", d.beta2)?,
            epsilon: parse(kv, "train.epsilon", d.epsilon)?,
        };
        let loss = match kv.remove("train.loss") {
            None => LossKind::BinaryCrossEntropy,
            Some(v) => parse_loss(&v).map_err(CliError::Config)?,
        };
        let selection = match kv.remove("train.select").as_deref() {
            None | Some("val_loss") => Selection::ValLoss,
            Some("val_error") => Selection::ValError,
            Some(v) => return Err(CliError::Config(format!("train.select = {v:?} (val_loss, val_error)"))),
        };
        let output = loss.output_kind();
        let inception = model_spec(
            kv,
            "inception",
            ModelSpec {
                output,
                ..ModelSpec::mini_inception(input)
            },
        )?;
        let densenet = model_spec(
            kv,
            "densenet",
            ModelSpec {
                output,
                ..ModelSpec::mini_densenet(input)
            },
        )?;
        let weights = match kv.remove("fusion.weights") {
            None => FusionWeights::default_pair(),
            Some(v) => {
                let raw: Vec<f64> = v
                    .split(',')
                    .map(|w| w.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| CliError::Config(format!("fusion.weights = {v:?} is not a number list")))?;
                if raw.len() != 2 {
                    return Err(CliError::Config(format!("fusion.weights needs 2 values, got {}", raw.len())));
                }
                FusionWeights::new(&raw).map_err(|e| CliError::Config(e.to_string()))?
            }
        };
        let sweep = parse_bool(kv, "fusion.sweep", false)?;
        let sweep_step = parse(kv, "fusion.sweep_step", 0.05f64)?;
        if !(sweep_step > 0.0 && sweep_step <= 1.0) {
            return Err(CliError::Config(format!("fusion.sweep_step = {sweep_step} must lie in (0, 1]")));
        }
        let demo_samples = parse(kv, "demo.samples", 200usize)?;
        if let Some(k) = kv.keys().next() {
            return Err(CliError::Config(format!("unknown key {k:?}")));
        }
        let config = Self {
            manifest,
            out_dir,
            seed,
            threshold,
            test_fraction,
            validation_fraction,
            max_reseeds,
            smoothing,
            input,
            epochs,
            batch_size,
            adam,
            loss,
            selection,
            inception,
            densenet,
            weights,
            sweep,
            sweep_step,
            demo_samples,
        };
        config.train_config().validate()?;
        Ok(config)
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            test_fraction: self.test_fraction,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            loss: self.loss,
            validation_fraction: self.validation_fraction,
            adam: self.adam,
            selection: self.selection,
            threshold: self.threshold,
        }
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            smoothing: self.smoothing,
            target: Some((self.input.channels, self.input.height, self.input.width)),
        }
    }

    pub fn spec(&self, arch: ArchKind) -> &ModelSpec {
        match arch {
            ArchKind::MiniInception => &self.inception,
            ArchKind::MiniDensenet => &self.densenet,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dermfuse_core::nn::{Backbone, OutputKind};

    fn from_text(text: &str) -> Result<RunConfig, CliError> {
        RunConfig::from_entries(parse_entries(text)?)
    }

    #[test]
    fn defaults_match_the_training_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.train_config(), TrainConfig::default());
        assert_eq!(c.split_config(), SplitConfig::default());
        assert_eq!(c.weights, FusionWeights::default_pair());
        assert!(!c.sweep);
        assert_eq!(c.out_dir, PathBuf::from("out"));
        assert_eq!(c.demo_samples, 200);
        assert_eq!(c.inception, ModelSpec::mini_inception(c.input));
        assert_eq!(c.densenet, ModelSpec::mini_densenet(c.input));
    }

    #[test]
    fn spelling_out_the_defaults_changes_nothing() {
        let text = "seed = 42\nout_dir = out\nthreshold = 0.5\nsplit.test_fraction = 0.2\nsplit.validation_fraction = 0.1\n\
            split.max_reseeds = 10\npreprocess.smoothing = none\nmodel.input = 3x8x8\ntrain.epochs = 50\ntrain.batch_size = 32\n\
            train.learning_rate = 0.0001\ntrain.beta1 = 0.9\ntrain.beta2 = 0.999\ntrain.epsilon = 1e-8\ntrain.loss = bce\n\
            train.select = val_loss\ninception.stem = 8@3x3\ninception.modules = 2\n\
            inception.0.branches = 8@1x1 | 8@1x1 16@3x3 | 4@1x1 8@5x5 | pool3 8@1x1\ninception.1.factorized = true\n\
            inception.pool = 2\ninception.head = 64,16\ndensenet.stem = 8@3x3\ndensenet.layers = 4\ndensenet.growth = 8\n\
            densenet.kernel = 3\ndensenet.transition = 16\ndensenet.head = 32,16,8\nfusion.weights = 0.45,0.55\n\
            fusion.sweep = false\nfusion.sweep_step = 0.05\ndemo.samples = 200\n";
        assert_eq!(from_text(text).unwrap(), RunConfig::default());
    }

    #[test]
    fn comments_and_whitespace() {
        let c = from_text("# run\n\n  seed = 7   # trailing\ntrain.epochs=3\n").unwrap();
        assert_eq!((c.seed, c.epochs), (7, 3));
    }

    #[test]
    fn rejects_bad_lines() {
        for text in ["seed 7", "seed = x", "seed = 1\nseed = 2", "colour = red", "densenet.modules = 2", "= 3"] {
            assert_eq!(from_text(text).unwrap_err().exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "split.test_fraction = 1.0",
            "threshold = 1.5",
            "train.epochs = 0",
            "train.learning_rate = 0",
            "fusion.weights = 1,2,3",
            "fusion.weights = -1,2",
            "fusion.sweep = maybe",
            "train.loss = hinge",
            "model.input = 3x8",
            "densenet.head = 4,,2",
            "inception.modules = 3",
        ] {
            assert!(matches!(from_text(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn model_keys_reach_the_specs() {
        let c = from_text("model.input = 1x12x12\ndensenet.growth = 4\ndensenet.layers = 2\ninception.head = 32,8\ninception.1.factorized = false\ntrain.loss = softmax\n").unwrap();
        assert_eq!(c.input.channels, 1);
        assert_eq!(c.densenet.input, c.input);
        assert!(matches!(c.densenet.backbone, Backbone::Dense { block, .. } if block.growth == 4 && block.layers == 2));
        assert_eq!(c.inception.head, vec![32, 8]);
        match &c.inception.backbone {
            Backbone::Inception { modules, .. } => assert!(modules.iter().all(|m| !m.factorized)),
            _ => unreachable!(),
        }
        assert_eq!(c.inception.output, OutputKind::Softmax);
        assert_eq!(c.train_config().loss, LossKind::CategoricalCrossEntropy);
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "seed = 1\nfusion.sweep = true\nthreshold = 0.3\nout_dir = a\n").unwrap();
        let file_only = load(Some(&path), &Overrides::default()).unwrap();
        assert_eq!((file_only.seed, file_only.sweep, file_only.threshold), (1, true, 0.3));
        let o = Overrides {
            seed: Some(9),
            weights: Some(vec![1.0, 3.0]),
            out_dir: Some("b".into()),
            loss: Some(LossKind::CategoricalCrossEntropy),
            ..Overrides::default()
        };
        let c = load(Some(&path), &o).unwrap();
        assert_eq!(c.seed, 9);
        assert!(!c.sweep);
        assert_eq!(c.weights.as_slice(), &[0.25, 0.75]);
        assert_eq!(c.threshold, 0.3);
        assert_eq!(c.out_dir, PathBuf::from("b"));
        assert_eq!(c.densenet.output, OutputKind::Softmax);
    }

    #[test]
    fn missing_config_file_is_a_config_error() {
        let err = load(Some(Path::new("/nonexistent/run.cfg")), &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("/nonexistent/run.cfg"));
    }
}
