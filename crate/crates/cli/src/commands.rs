//! The subcommands. Each one computes every artifact in memory and only
//! touches the output directory once nothing can fail but the writes.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dermfuse_core::checkpoint::{load_checkpoint, Checkpoint};
use dermfuse_core::data::{load_dataset, load_manifest, split_covering_classes, synthetic, Dataset, Manifest, PreprocessConfig};
use dermfuse_core::fusion::{
    decide, fuse_all, fused_to_csv, join_scores, parse_fused_csv, parse_scores_csv, weight_sweep, FusionError, FusionWeights, ScoreRecord,
};
use dermfuse_core::metrics::{roc, MetricsError, MetricsReport};
use dermfuse_core::nn::{build_model, ArchKind};
use dermfuse_core::train::{evaluate, train, TrainHistory};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::svg;

/// Files a command wrote plus lines for the user.
#[derive(Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub messages: Vec<String>,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn absorb(&mut self, other: Outcome) {
        self.written.extend(other.written);
        self.messages.extend(other.messages);
        self.warnings.extend(other.warnings);
    }
}

/// Artifacts staged for writing into one directory.
struct Staged {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    fn commit(self, outcome: &mut Outcome) -> Result<(), CliError> {
        fs::create_dir_all(&self.dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", self.dir.display())))?;
        for (name, bytes) in self.files {
            let path = self.dir.join(name);
            fs::write(&path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
            outcome.written.push(path);
        }
        Ok(())
    }
}

/// File-name form of an architecture: `inception` or `densenet`.
pub fn arch_slug(arch: ArchKind) -> &'static str {
    match arch {
        ArchKind::MiniInception => "inception",
        ArchKind::MiniDensenet => "densenet",
    }
}

fn manifest(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let path = cfg
        .manifest
        .as_deref()
        .ok_or_else(|| CliError::Config("no manifest given (set `manifest = <path>` or pass --manifest)".into()))?;
    Ok(load_manifest(path)?)
}

/// Reads one id per line and maps the ids onto manifest rows.
pub fn read_index(path: &Path, manifest: &Manifest) -> Result<Vec<usize>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e} (run `dermfuse split` first?)", path.display())))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() {
            continue;
        }
        let ix = manifest
            .position(id)
            .ok_or_else(|| CliError::Data(format!("{} line {}: id {id:?} is not in the manifest", path.display(), n + 1)))?;
        if !seen.insert(ix) {
            return Err(CliError::Data(format!("{} line {}: id {id:?} listed twice", path.display(), n + 1)));
        }
        out.push(ix);
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{} lists no ids", path.display())));
    }
    Ok(out)
}

fn index_text(manifest: &Manifest, indices: &[usize]) -> String {
    indices.iter().map(|&i| format!("{}\n", manifest.records[i].id)).collect()
}

pub fn cmd_split(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let manifest = manifest(cfg)?;
    let (split, seed) = split_covering_classes(&manifest.labels(), &cfg.split_config(), cfg.max_reseeds)?;
    let mut staged = Staged::new(&cfg.out_dir);
    staged.add("train.idx", index_text(&manifest, &split.train));
    staged.add("val.idx", index_text(&manifest, &split.validation));
    staged.add("test.idx", index_text(&manifest, &split.test));
    let mut outcome = Outcome::default();
    if seed != cfg.seed {
        outcome
            .warnings
            .push(format!("seed {} left a subset with one class; used seed {seed}", cfg.seed));
    }
    outcome.messages.push(format!(
        "split {} samples with seed {seed}: train {}, validation {}, test {}",
        manifest.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    ));
    staged.commit(&mut outcome)?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub arch: ArchKind,
    pub history: TrainHistory,
    /// Accuracy of the final-epoch weights on the whole training set.
    pub final_train_accuracy: f64,
    pub checkpoint: Checkpoint,
}

fn subset(manifest: &Manifest, cfg: &RunConfig, name: &str, preprocess: &PreprocessConfig) -> Result<Dataset, CliError> {
    let indices = read_index(&cfg.out_dir.join(name), manifest)?;
    Ok(load_dataset(manifest, &indices, preprocess)?)
}

pub fn cmd_train(cfg: &RunConfig, arch: ArchKind) -> Result<(Outcome, TrainSummary), CliError> {
    let manifest = manifest(cfg)?;
    let pre = cfg.preprocess();
    let train_set = subset(&manifest, cfg, "train.idx", &pre)?;
    let val_set = subset(&manifest, cfg, "val.idx", &pre)?;
    let tc = cfg.train_config();
    let mut model = build_model(cfg.spec(arch), cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
    let (history, checkpoint) = train(&mut model, &train_set, &val_set, &tc)?;
    let (_, final_train_accuracy) = evaluate(&model, &train_set, &tc)?;

    let slug = arch_slug(arch);
    let mut staged = Staged::new(&cfg.out_dir);
    staged.add(format!("model_{slug}.ckpt"), checkpoint.to_bytes());
    staged.add(format!("history_{slug}.csv"), history.to_csv());
    staged.add(
        format!("history_{slug}.svg"),
        svg::history_chart(&history, &format!("{arch}: accuracy and loss")),
    );
    let best = &history.epochs[history.best_epoch];
    let mut outcome = Outcome::default();
    outcome.messages.push(format!(
        "{slug}: {} epochs, {} parameters; best epoch {} (val loss {:.4}, val accuracy {:.4}); final train accuracy {:.4}",
        history.epochs.len(),
        model.parameter_count(),
        history.best_epoch,
        best.val_loss,
        best.val_accuracy,
        final_train_accuracy
    ));
    staged.commit(&mut outcome)?;
    Ok((
        outcome,
        TrainSummary {
            arch,
            history,
            final_train_accuracy,
            checkpoint,
        },
    ))
}

/// Name of the scores file `predict` writes for `split_file`.
pub fn scores_file_name(arch: ArchKind, split_file: &Path) -> String {
    let stem = split_file.file_stem().and_then(|s| s.to_str()).unwrap_or("scores");
    format!("scores_{}_{stem}.csv", arch_slug(arch))
}

pub fn cmd_predict(cfg: &RunConfig, arch: ArchKind, checkpoint: Option<&Path>, split_file: Option<&Path>) -> Result<Outcome, CliError> {
    let ckpt_path = checkpoint.map_or_else(|| cfg.out_dir.join(format!("model_{}.ckpt", arch_slug(arch))), Path::to_path_buf);
    let ckpt = load_checkpoint(&ckpt_path)?;
    if ckpt.spec.arch() != arch {
        return Err(CliError::Checkpoint(format!(
            "{} holds a {} model but --arch asks for {arch}",
            ckpt_path.display(),
            ckpt.spec.arch()
        )));
    }
    let split_path = split_file.map_or_else(|| cfg.out_dir.join("test.idx"), Path::to_path_buf);
    let manifest = manifest(cfg)?;
    let indices = read_index(&split_path, &manifest)?;
    let input = ckpt.spec.input;
    let pre = PreprocessConfig {
        smoothing: cfg.smoothing,
        target: Some((input.channels, input.height, input.width)),
    };
    let set = load_dataset(&manifest, &indices, &pre)?;
    let model = ckpt.into_model().map_err(|e| CliError::Checkpoint(e.to_string()))?;

    let mut csv = String::from("id,score,label\n");
    let order: Vec<usize> = (0..set.len()).collect();
    for chunk in order.chunks(cfg.batch_size) {
        let (batch, labels) = set.batch(chunk).map_err(|e| CliError::Data(e.to_string()))?;
        let scores = model.forward(&batch).map_err(|e| CliError::Data(e.to_string()))?;
        for ((&i, s), y) in chunk.iter().zip(scores).zip(labels) {
            let _ = writeln!(csv, "{},{s},{y}", set.samples[i].id);
        }
    }
    let name = scores_file_name(arch, &split_path);
    let mut staged = Staged::new(&cfg.out_dir);
    staged.add(name.clone(), csv);
    let mut outcome = Outcome::default();
    outcome
        .messages
        .push(format!("{}: scored {} samples into {name}", arch_slug(arch), set.len()));
    staged.commit(&mut outcome)?;
    Ok(outcome)
}

fn fusion_err(e: FusionError) -> CliError {
    CliError::FusionInput(e.to_string())
}

fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::FusionInput(format!("{}: {e}", path.display())))?;
    parse_scores_csv(&text).map_err(|e| CliError::FusionInput(format!("{}: {e}", path.display())))
}

fn read_pair(a: &Path, b: &Path) -> Result<Vec<ScoreRecord>, CliError> {
    let (ra, rb) = (read_scores(a)?, read_scores(b)?);
    for (path, recs) in [(a, &ra), (b, &rb)] {
        if recs.is_empty() {
            return Err(CliError::FusionInput(format!("{} has no rows", path.display())));
        }
        if recs[0].scores.len() != 1 {
            return Err(CliError::FusionInput(format!("{} must hold one score column", path.display())));
        }
    }
    join_scores(&ra, &rb).map_err(|e| CliError::FusionInput(format!("{} vs {}: {e}", a.display(), b.display())))
}

/// Fuses two score files. With `cfg.sweep` the weights come from a grid
/// search on `sweep_on` (or on the inputs themselves when absent).
pub fn cmd_fuse(cfg: &RunConfig, a: &Path, b: &Path, sweep_on: Option<(&Path, &Path)>) -> Result<(Outcome, FusionWeights), CliError> {
    let records = read_pair(a, b)?;
    let mut staged = Staged::new(&cfg.out_dir);
    let mut outcome = Outcome::default();
    let weights = if cfg.sweep {
        let tuning = match sweep_on {
            Some((va, vb)) => read_pair(va, vb)?,
            None => records.clone(),
        };
        let sweep = weight_sweep(&tuning, cfg.sweep_step, cfg.threshold).map_err(fusion_err)?;
        let best = &sweep.table[sweep.best_row];
        outcome.messages.push(format!(
            "sweep over {} records picked w1 = {}, w2 = {} (accuracy {:.4})",
            tuning.len(),
            best.w1,
            best.w2,
            best.accuracy
        ));
        staged.add("sweep.csv", sweep.to_csv());
        sweep.best
    } else {
        if sweep_on.is_some() {
            return Err(CliError::Config("--sweep-on needs --sweep".into()));
        }
        cfg.weights.clone()
    };
    let fused = fuse_all(&weights, &records, cfg.threshold).map_err(fusion_err)?;
    staged.add("fused.csv", fused_to_csv(&fused));
    let w = weights.as_slice();
    outcome
        .messages
        .push(format!("fused {} records with weights {}/{}", fused.len(), w[0], w[1]));
    staged.commit(&mut outcome)?;
    Ok((outcome, weights))
}

/// Scores, hard decisions and labels, index-aligned.
type Labeled = (Vec<f64>, Vec<u8>, Vec<u8>);

/// Reads a fused or single-model CSV.
fn read_eval_input(path: &Path, threshold: f64) -> Result<Labeled, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let bad = |e: FusionError| CliError::Data(format!("{}: {e}", path.display()));
    let unlabeled = |id: &str| CliError::Data(format!("{}: record {id:?} has no label", path.display()));
    let header = text.lines().next().unwrap_or_default();
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    if header.split(',').any(|c| c.trim() == "fused_score") {
        for r in parse_fused_csv(&text).map_err(bad)? {
            out.0.push(r.fused);
            out.1.push(r.decision);
            out.2.push(r.label.ok_or_else(|| unlabeled(&r.id))?);
        }
    } else {
        for r in parse_scores_csv(&text).map_err(bad)? {
            if r.scores.len() != 1 {
                return Err(CliError::Data(format!("{}: expected one score column", path.display())));
            }
            out.0.push(r.scores[0]);
            out.1.push(decide(r.scores[0], threshold));
            out.2.push(r.label.ok_or_else(|| unlabeled(&r.id))?);
        }
    }
    if out.0.is_empty() {
        return Err(CliError::Data(format!("{} has no rows", path.display())));
    }
    Ok(out)
}

/// Metrics for a labeled scores file. Outputs carry a `_<name>` suffix when
/// `name` is given.
pub fn cmd_eval(cfg: &RunConfig, input: Option<&Path>, name: Option<&str>) -> Result<(Outcome, MetricsReport), CliError> {
    let path = input.map_or_else(|| cfg.out_dir.join("fused.csv"), Path::to_path_buf);
    let (scores, preds, labels) = read_eval_input(&path, cfg.threshold)?;
    let report = MetricsReport::evaluate(&scores, &preds, &labels).map_err(|e| CliError::Data(e.to_string()))?;
    let suffix = name.map_or_else(String::new, |n| format!("_{n}"));
    let title = name.unwrap_or("fused");
    let mut staged = Staged::new(&cfg.out_dir);
    let mut outcome = Outcome::default();
    staged.add(format!("metrics{suffix}.txt"), report.to_text());
    staged.add(format!("metrics{suffix}.csv"), report.to_csv());
    staged.add(
        format!("confusion{suffix}.svg"),
        svg::confusion_heatmap(&report.counts, &format!("{title}: confusion matrix")),
    );
    match roc(&scores, &labels) {
        Ok(curve) => {
            staged.add(format!("roc{suffix}.csv"), curve.to_csv());
            staged.add(format!("roc{suffix}.svg"), svg::roc_chart(&curve, &format!("{title}: ROC")));
        }
        Err(MetricsError::SingleClass(c)) => {
            outcome
                .warnings
                .push(format!("{}: every label is {c}; ROC curve and AUC omitted", path.display()));
        }
        Err(e) => return Err(CliError::Data(e.to_string())),
    }
    let auc = report.auc.map_or_else(|| "N/A".to_string(), |a| format!("{a:.4}"));
    outcome.messages.push(format!(
        "{title}: {} samples, accuracy {:.4}, auc {auc}",
        report.counts.total(),
        report.accuracy
    ));
    staged.commit(&mut outcome)?;
    Ok((outcome, report))
}

#[derive(Debug, Clone)]
pub struct ModelResult {
    pub arch: ArchKind,
    pub final_train_accuracy: f64,
    pub best_epoch: usize,
    pub test: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct DemoSummary {
    pub models: Vec<ModelResult>,
    pub weights: FusionWeights,
    pub fused: MetricsReport,
}

fn na4(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.4}"))
}

impl DemoSummary {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>9} {:>9} {:>9} {:>11} {:>11} {:>9} {:>9}",
            "model", "train_acc", "test_acc", "precision", "sensitivity", "specificity", "f1", "auc"
        );
        let rows = self
            .models
            .iter()
            .map(|m| (arch_slug(m.arch), Some(m.final_train_accuracy), &m.test))
            .chain([("fused", None, &self.fused)]);
        for (name, train_acc, r) in rows {
            let _ = writeln!(
                out,
                "{:<10} {:>9} {:>9.4} {:>9} {:>11} {:>11} {:>9} {:>9}",
                name,
                na4(train_acc),
                r.accuracy,
                na4(r.precision),
                na4(r.sensitivity),
                na4(r.specificity),
                na4(r.f1),
                na4(r.auc)
            );
        }
        let w = self.weights.as_slice();
        let _ = writeln!(out, "\nfusion weights: inception {}, densenet {}", w[0], w[1]);
        out
    }
}

/// Synthetic end to end run: data, split, both backbones, scores, fusion, metrics.
pub fn cmd_demo(cfg: &RunConfig) -> Result<(Outcome, DemoSummary), CliError> {
    let mut outcome = Outcome::default();
    let data_dir = cfg.out_dir.join("data");
    let input = cfg.input;
    eprintln!("demo: writing {} synthetic {input} images to {}", cfg.demo_samples, data_dir.display());
    let manifest = synthetic::write_dataset(&data_dir, cfg.demo_samples, input.channels, input.height, input.width, cfg.seed)?;
    let cfg = RunConfig {
        manifest: Some(manifest),
        ..cfg.clone()
    };
    outcome.absorb(cmd_split(&cfg)?);

    let mut models = Vec::new();
    for arch in [ArchKind::MiniInception, ArchKind::MiniDensenet] {
        eprintln!("demo: training {arch} for {} epochs", cfg.epochs);
        let (o, t) = cmd_train(&cfg, arch)?;
        outcome.absorb(o);
        for split in ["val.idx", "test.idx"] {
            outcome.absorb(cmd_predict(&cfg, arch, None, Some(&cfg.out_dir.join(split)))?);
        }
        let slug = arch_slug(arch);
        let scores = cfg.out_dir.join(scores_file_name(arch, Path::new("test.idx")));
        let (o, test) = cmd_eval(&cfg, Some(&scores), Some(slug))?;
        outcome.absorb(o);
        models.push(ModelResult {
            arch,
            final_train_accuracy: t.final_train_accuracy,
            best_epoch: t.history.best_epoch,
            test,
        });
    }

    let file = |arch, split: &str| cfg.out_dir.join(scores_file_name(arch, Path::new(split)));
    let (a_val, b_val) = (file(ArchKind::MiniInception, "val.idx"), file(ArchKind::MiniDensenet, "val.idx"));
    let (o, weights) = cmd_fuse(
        &cfg,
        &file(ArchKind::MiniInception, "test.idx"),
        &file(ArchKind::MiniDensenet, "test.idx"),
        cfg.sweep.then_some((a_val.as_path(), b_val.as_path())),
    )?;
    outcome.absorb(o);
    let (o, fused) = cmd_eval(&cfg, None, None)?;
    outcome.absorb(o);

    let summary = DemoSummary { models, weights, fused };
    let text = summary.to_text();
    let mut staged = Staged::new(&cfg.out_dir);
    staged.add("summary.txt", text.clone());
    outcome.messages.push(text);
    staged.commit(&mut outcome)?;
    Ok((outcome, summary))
}
