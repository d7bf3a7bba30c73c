//! Run configuration, the two training loops and the commands built on
//! them: autoencoder training, feature extraction, classifier training,
//! cross-validation, candidate ranking and reporting.
//!
//! Every random draw comes from a stream of the run seed keyed by
//! `(repeat, fold, stage, ...)`, see [`crate::rng`]. Stand-alone commands use
//! repeat and fold zero.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, digest, Checkpoint};
use crate::data::{self, Dataset, FoldStrategy, Format, Orientation, ScalingRecord};
use crate::error::{Error, Result};
use crate::metrics::{self, aggregate, EvalReport, FoldMetrics, ScoredLabels};
use crate::models::{
    ae_batch, build_frnet1, build_frnet2, clf_batch, extract_features, reconstruction_accuracy, ModelConfig,
    ModelKind, Network,
};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{derive, stream_rng, Stream};
use crate::tensor::Tensor;

pub const OUTPUT_DIR_ENV: &str = "FRNET_OUTPUT_DIR";
pub const RUN_SUMMARY: &str = "run.json";
pub const METRICS_TABLE: &str = "metrics.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AeMode {
    /// Scaling and FRnet-1 are fit on the training folds of every split.
    #[default]
    PerFold,
    /// Scaling and FRnet-1 are fit once on the whole dataset.
    Global,
}

impl AeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AeMode::PerFold => "per-fold",
            AeMode::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// Detected from the extension when absent.
    pub format: Option<Format>,
    pub width: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            format: None,
            width: data::FEATURE_COUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs_ae: usize,
    pub epochs_clf: usize,
    pub lr: f64,
    pub clip_eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            seed: 0,
            batch_size: 64,
            epochs_ae: 50,
            epochs_clf: 50,
            lr: 0.001,
            clip_eps: crate::models::CLIP_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    pub repeats: usize,
    pub stratified: bool,
    pub ae_mode: AeMode,
    pub threshold: f64,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            folds: 5,
            repeats: 10,
            stratified: true,
            ae_mode: AeMode::PerFold,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Everything a run depends on. Serialises to TOML with the sections
/// `[data]`, `[model]`, `[train]`, `[cv]` and `[output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub cv: CvSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Epoch counts may be zero (no training); every other count must be
    /// positive.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.data.width == 0 {
            return bad("data width must be positive");
        }
        if self.train.batch_size == 0 {
            return bad("batch-size must be positive");
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.train.clip_eps > 0.0 && self.train.clip_eps < 0.5) {
            return bad("clip-eps must be in (0, 0.5)");
        }
        if self.cv.folds < 2 {
            return bad("folds must be at least 2");
        }
        if self.cv.repeats == 0 {
            return bad("repeats must be positive");
        }
        if !(0.0..=1.0).contains(&self.cv.threshold) {
            return bad("threshold must be in [0, 1]");
        }
        Ok(())
    }

    /// Hash of everything that affects results; paths are left out so the
    /// same run in another directory carries the same digest.
    pub fn digest(&self) -> u64 {
        let mut c = self.clone();
        c.output.dir = None;
        c.data.path = None;
        digest(c.to_toml().unwrap_or_default().as_bytes())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.train.lr,
            ..AdamConfig::default()
        }
    }

    pub fn fold_strategy(&self) -> FoldStrategy {
        if self.cv.stratified {
            FoldStrategy::Stratified
        } else {
            FoldStrategy::Shuffled
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let path = self
            .data
            .path
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset path given".into()))?;
        let format = self.data.format.unwrap_or_else(|| Format::detect(path));
        data::load_dataset(path, format, self.data.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total objective (cross-entropy plus penalty) over the epoch's
    /// batches, weighted by batch size.
    pub loss: f64,
    /// Reconstruction accuracy (FRnet-1) or label accuracy (FRnet-2) of the
    /// training-mode outputs seen during the epoch.
    pub accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy,seconds\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{:.3}", r.epoch, r.loss, r.accuracy, r.seconds);
        }
        s
    }
}

/// Which network a training stream belongs to.
#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Ae = 0,
    Clf = 1,
}

/// Coordinates of one model fit inside a run.
#[derive(Debug, Clone, Copy)]
pub struct FitKey {
    pub repeat: u64,
    pub fold: u64,
    pub stage: Stage,
}

impl FitKey {
    pub fn standalone(stage: Stage) -> Self {
        FitKey {
            repeat: 0,
            fold: 0,
            stage,
        }
    }

    fn indices(&self) -> [u64; 3] {
        [self.repeat, self.fold, self.stage as u64]
    }

    pub fn init_seed(&self, seed: u64) -> u64 {
        derive(seed, Stream::Init, &self.indices())
    }
}

/// Mini-batch Adam over `n` instances. `batch` turns a list of instance
/// indices into `(input, target)`; `accuracy` scores training outputs
/// against targets.
#[allow(clippy::too_many_arguments)]
pub fn train_loop(
    net: &mut Network,
    n: usize,
    epochs: usize,
    batch_size: usize,
    adam: &mut AdamState,
    seed: u64,
    key: FitKey,
    batch: impl Fn(&[usize]) -> Result<(Tensor, Tensor)>,
    accuracy: impl Fn(&Tensor, &Tensor) -> Result<f64>,
) -> Result<TrainLog> {
    if n == 0 {
        return Err(Error::Empty("no training instances".into()));
    }
    let [r, f, s] = key.indices();
    let mut log = TrainLog::default();
    for epoch in 0..epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[r, f, s, epoch as u64]));
        let (mut loss, mut acc) = (0.0, 0.0);
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let (x, y) = batch(idx)?;
            let dropout = derive(seed, Stream::Dropout, &[r, f, s, epoch as u64, b as u64]);
            let (stats, out) = net.train_step(x, y.clone(), dropout, adam)?;
            if !stats.total_loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            let w = idx.len() as f64 / n as f64;
            loss += w * stats.total_loss;
            acc += w * accuracy(&out, &y)?;
        }
        let rec = EpochRecord {
            epoch,
            loss,
            accuracy: acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "{:?} epoch {epoch}: loss {:.5} accuracy {:.4} ({:.1}s)",
            key.stage, rec.loss, rec.accuracy, rec.seconds
        );
        log.records.push(rec);
    }
    Ok(log)
}

fn label_accuracy(out: &Tensor, y: &Tensor) -> Result<f64> {
    reconstruction_accuracy(out, y)
}

pub struct Fit {
    pub net: Network,
    pub log: TrainLog,
    pub adam: AdamState,
}

/// Trains FRnet-1 to reconstruct scaled feature rows.
pub fn train_ae(scaled: &Dataset, cfg: &RunConfig, key: FitKey) -> Result<Fit> {
    if scaled.width != data::FEATURE_COUNT {
        return Err(Error::Config(format!(
            "the autoencoder needs {} features per instance, dataset has {}",
            data::FEATURE_COUNT,
            scaled.width
        )));
    }
    let spec = build_frnet1(&cfg.model)?;
    let mut net = Network::new(spec, key.init_seed(cfg.train.seed))?;
    let mut adam = net.new_optimizer(cfg.adam());
    let rows = scaled.rows();
    let orientation = cfg.model.orientation;
    let log = train_loop(
        &mut net,
        scaled.len(),
        cfg.train.epochs_ae,
        cfg.train.batch_size,
        &mut adam,
        cfg.train.seed,
        key,
        |idx| {
            let picked: Vec<&[f32]> = idx.iter().map(|&i| rows[i]).collect();
            let target: Vec<f32> = picked.concat();
            Ok((
                ae_batch(&picked, orientation)?,
                Tensor::from_vec([idx.len(), data::FEATURE_COUNT], target)?,
            ))
        },
        reconstruction_accuracy,
    )?;
    Ok(Fit { net, log, adam })
}

/// Trains FRnet-2 on representation rows (`features.width` must be the
/// square of the classifier grid side).
pub fn train_clf(features: &Dataset, cfg: &RunConfig, key: FitKey) -> Result<Fit> {
    let model = ModelConfig {
        ae_hidden: vec![features.width],
        ..cfg.model.clone()
    };
    let spec = build_frnet2(&model)?;
    let mut net = Network::new(spec.clone(), key.init_seed(cfg.train.seed))?;
    let mut adam = net.new_optimizer(cfg.adam());
    let rows = features.rows();
    let log = train_loop(
        &mut net,
        features.len(),
        cfg.train.epochs_clf,
        cfg.train.batch_size,
        &mut adam,
        cfg.train.seed,
        key,
        |idx| {
            let picked: Vec<&[f32]> = idx.iter().map(|&i| rows[i]).collect();
            let y: Vec<f32> = idx.iter().map(|&i| features.labels[i] as f32).collect();
            Ok((clf_batch(&picked, &spec)?, Tensor::from_vec([idx.len(), 1], y)?))
        },
        label_accuracy,
    )?;
    Ok(Fit { net, log, adam })
}

/// Orientation an FRnet-1 network was built for.
pub fn orientation_of(net: &Network) -> Result<Orientation> {
    let input = &net.spec().input;
    [Orientation::Tall, Orientation::Wide]
        .into_iter()
        .find(|o| input[..2] == [o.grid().0, o.grid().1])
        .ok_or_else(|| Error::CheckpointMismatch(format!("no orientation has input {input:?}")))
}

/// Deep-feature dataset (same ids and labels) of already scaled rows.
pub fn extract_dataset(ae: &mut Network, scaled: &Dataset, batch_size: usize) -> Result<Dataset> {
    if scaled.is_empty() {
        return Err(Error::Empty("no instances to extract".into()));
    }
    let orientation = orientation_of(ae)?;
    let feats = extract_features(ae, &scaled.rows(), orientation, batch_size)?;
    let width = feats[0].len();
    let mut out = Dataset::new(scaled.name.clone(), width);
    for (i, row) in feats.iter().enumerate() {
        out.push(scaled.drug_ids[i].clone(), scaled.target_ids[i].clone(), row, scaled.labels[i]);
    }
    Ok(out)
}

/// Classifier probabilities for representation rows.
pub fn score(clf: &mut Network, features: &Dataset, batch_size: usize) -> Result<Vec<f64>> {
    if clf.kind() != ModelKind::Frnet2 {
        return Err(Error::CheckpointMismatch("scoring needs an FRnet-2 network".into()));
    }
    let spec = clf.spec().clone();
    let rows = features.rows();
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(batch_size.max(1)) {
        let p = clf.predict(clf_batch(chunk, &spec)?)?;
        out.extend(p.data().iter().map(|&v| v as f64));
    }
    Ok(out)
}

/// Applies the scaling stored with an autoencoder checkpoint.
pub fn scale_with(ckpt: &Checkpoint, d: &Dataset) -> Result<Dataset> {
    ckpt.scaling
        .as_ref()
        .ok_or_else(|| Error::CheckpointMismatch("autoencoder checkpoint carries no scaling record".into()))?
        .apply(d)
}

/// Outcome of a cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub ae_mode: AeMode,
    pub orientation: Orientation,
    pub stratified: bool,
    pub folds: usize,
    pub repeats: usize,
    pub config_digest: String,
    pub evaluation: EvalReport,
    /// One diagnostic per aborted repeat.
    pub failures: Vec<String>,
}

struct FoldArtifacts<'a> {
    dir: Option<&'a Path>,
}

impl FoldArtifacts<'_> {
    fn write(&self, name: &str, contents: &[u8]) -> Result<()> {
        if let Some(dir) = self.dir {
            let p = dir.join(name);
            fs::write(&p, contents).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
        }
        Ok(())
    }

    fn checkpoint(&self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        match self.dir {
            Some(dir) => checkpoint::save(ckpt, &dir.join(name)),
            None => Ok(()),
        }
    }
}

pub fn fold_prefix(repeat: usize, fold: usize) -> String {
    format!("r{repeat}_f{fold}")
}

struct Encoder {
    net: Network,
    scaling: ScalingRecord,
}

fn fit_encoder(d: &Dataset, train: &[usize], cfg: &RunConfig, key: FitKey, out: &FoldArtifacts, prefix: &str) -> Result<Encoder> {
    let scaling = ScalingRecord::fit(d, train)?;
    let scaled_train = scaling.apply(&d.subset(train))?;
    let fit = train_ae(&scaled_train, cfg, key)?;
    let ckpt = Checkpoint::from_network(&fit.net, cfg.train.seed, cfg.digest(), Some(scaling.clone()), Some(&fit.adam));
    out.checkpoint(&format!("{prefix}_ae.frnt"), &ckpt)?;
    out.write(&format!("{prefix}_ae_log.csv"), fit.log.to_csv().as_bytes())?;
    Ok(Encoder { net: fit.net, scaling })
}

fn run_fold(
    d: &Dataset,
    plan: &data::FoldPlan,
    fold: usize,
    encoder: &mut Option<Encoder>,
    cfg: &RunConfig,
    out: &FoldArtifacts,
) -> Result<FoldMetrics> {
    let repeat = plan.repeat;
    let prefix = fold_prefix(repeat, fold);
    let train = plan.train_indices(fold);
    let test = plan.test_indices(fold);
    let key = |stage| FitKey {
        repeat: repeat as u64,
        fold: fold as u64,
        stage,
    };
    let mut local;
    let enc = match (cfg.cv.ae_mode, encoder.as_mut()) {
        (AeMode::Global, Some(e)) => e,
        _ => {
            local = fit_encoder(d, &train, cfg, key(Stage::Ae), out, &prefix)?;
            &mut local
        }
    };
    let bs = cfg.train.batch_size;
    let train_feats = extract_dataset(&mut enc.net, &enc.scaling.apply(&d.subset(&train))?, bs)?;
    let test_feats = extract_dataset(&mut enc.net, &enc.scaling.apply(&d.subset(&test))?, bs)?;

    let mut fit = train_clf(&train_feats, cfg, key(Stage::Clf))?;
    let ckpt = Checkpoint::from_network(&fit.net, cfg.train.seed, cfg.digest(), None, Some(&fit.adam));
    out.checkpoint(&format!("{prefix}_clf.frnt"), &ckpt)?;
    out.write(&format!("{prefix}_clf_log.csv"), fit.log.to_csv().as_bytes())?;

    let scores = score(&mut fit.net, &test_feats, bs)?;
    let s = ScoredLabels::new(scores, test_feats.labels.clone())?;
    if let Some(dir) = out.dir {
        metrics::write_curves(dir, &d.name, repeat, fold, &s)?;
    }
    FoldMetrics::evaluate(&s, repeat, fold, cfg.cv.threshold)
}

/// Repeated `k`-fold cross-validation of the two-stage pipeline on raw
/// (unscaled) data. With an output directory, every fold leaves its two
/// checkpoints, training logs and curve files there, next to `run.json` and
/// `metrics.csv`.
pub fn cv_run(d: &Dataset, cfg: &RunConfig, out_dir: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::Empty(format!("dataset `{}` has no instances", d.name)));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let out = FoldArtifacts { dir: out_dir };
    let mut encoder = None;
    if cfg.cv.ae_mode == AeMode::Global {
        let all: Vec<usize> = (0..d.len()).collect();
        let key = FitKey {
            repeat: u64::MAX,
            fold: u64::MAX,
            stage: Stage::Ae,
        };
        encoder = Some(fit_encoder(d, &all, cfg, key, &out, "global")?);
    }
    let mut folds = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for repeat in 0..cfg.cv.repeats {
        let plan = data::make_folds(&d.labels, cfg.cv.folds, cfg.train.seed, repeat, cfg.fold_strategy())?;
        let mut done = Vec::new();
        let mut failed = None;
        for fold in 0..cfg.cv.folds {
            info!("repeat {repeat} fold {fold}");
            match run_fold(d, &plan, fold, &mut encoder, cfg, &out) {
                Ok(m) => done.push(m),
                Err(e) => {
                    failed = Some(Error::Fold {
                        repeat,
                        fold,
                        source: Box::new(e),
                    });
                    break;
                }
            }
        }
        match failed {
            Some(e) => {
                warn!("aborting repeat {repeat}: {e}");
                failures.push(e.to_string());
                first_error.get_or_insert(e);
            }
            None => folds.extend(done),
        }
    }
    if folds.is_empty() {
        return Err(first_error.expect("a repeat ran"));
    }
    let summary = RunSummary {
        dataset: d.name.clone(),
        ae_mode: cfg.cv.ae_mode,
        orientation: cfg.model.orientation,
        stratified: cfg.cv.stratified,
        folds: cfg.cv.folds,
        repeats: cfg.cv.repeats,
        config_digest: format!("{:016x}", cfg.digest()),
        evaluation: aggregate(folds)?,
        failures,
    };
    if out_dir.is_some() {
        let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Serde(e.to_string()))?;
        out.write(RUN_SUMMARY, json.as_bytes())?;
        out.write(METRICS_TABLE, metrics_table(&summary).as_bytes())?;
        out.write("config.toml", cfg.to_toml()?.as_bytes())?;
    }
    Ok(summary)
}

const TABLE_METRICS: [&str; 7] = ["auroc", "aupr", "sensitivity", "specificity", "precision", "fpr", "accuracy"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-fold metric rows; undefined rates are left empty.
pub fn metrics_table(s: &RunSummary) -> String {
    let mut t = format!("dataset,repeat,fold,{}\n", TABLE_METRICS.join(","));
    for f in &s.evaluation.folds {
        let r = &f.rates;
        let _ = writeln!(
            t,
            "{},{},{},{},{},{},{},{},{},{}",
            s.dataset,
            f.repeat,
            f.fold,
            f.auroc,
            f.aupr,
            opt(r.sensitivity),
            opt(r.specificity),
            opt(r.precision),
            opt(r.fpr),
            r.accuracy
        );
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub drug_id: String,
    pub target_id: String,
    pub score: f64,
}

/// Scores every label-0 pair and returns the `k` highest, ties broken by
/// `(drug id, target id)`.
pub fn rank_candidates(ae: &Checkpoint, clf: &Checkpoint, raw: &Dataset, k: usize, batch_size: usize) -> Result<Vec<Candidate>> {
    if ae.kind() != ModelKind::Frnet1 || clf.kind() != ModelKind::Frnet2 {
        return Err(Error::CheckpointMismatch("rank needs an FRnet-1 and an FRnet-2 checkpoint".into()));
    }
    let negatives: Vec<usize> = (0..raw.len()).filter(|&i| raw.labels[i] == 0).collect();
    if k > negatives.len() {
        warn!("asked for {k} candidates, only {} unlabelled pairs exist", negatives.len());
    }
    if k == 0 || negatives.is_empty() {
        return Ok(Vec::new());
    }
    let scaled = scale_with(ae, &raw.subset(&negatives))?;
    let feats = extract_dataset(&mut ae.network()?, &scaled, batch_size)?;
    let scores = score(&mut clf.network()?, &feats, batch_size)?;
    let mut ranked: Vec<Candidate> = scores
        .into_iter()
        .zip(feats.drug_ids.into_iter().zip(feats.target_ids))
        .map(|(score, (drug_id, target_id))| Candidate {
            drug_id,
            target_id,
            score,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.drug_id.cmp(&b.drug_id))
            .then_with(|| a.target_id.cmp(&b.target_id))
    });
    ranked.truncate(k);
    Ok(ranked)
}

/// Rendered report of one or more run directories.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub csv: String,
}

fn run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(RUN_SUMMARY).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let entries = fs::read_dir(root).map_err(|e| Error::io(format!("reading {}", root.display()), e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RUN_SUMMARY).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::MissingArtifacts(vec![root.join(RUN_SUMMARY)]));
    }
    Ok(dirs)
}

fn expected_artifacts(dir: &Path, s: &RunSummary) -> Vec<PathBuf> {
    let mut want = vec![dir.join(METRICS_TABLE)];
    let seen: BTreeSet<(usize, usize)> = s.evaluation.folds.iter().map(|f| (f.repeat, f.fold)).collect();
    for (r, f) in seen {
        let stem = metrics::curve_stem(&s.dataset, r, f);
        want.push(dir.join(format!("{stem}_roc.csv")));
        want.push(dir.join(format!("{stem}_pr.csv")));
    }
    want
}

/// Reads completed run directories (`root` itself or its immediate
/// subdirectories holding a `run.json`) and tabulates auROC and auPR.
pub fn report(root: &Path) -> Result<Report> {
    let mut rows = Vec::new();
    for dir in run_dirs(root)? {
        let path = dir.join(RUN_SUMMARY);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let s: RunSummary = serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        let missing: Vec<PathBuf> = expected_artifacts(&dir, &s).into_iter().filter(|p| !p.is_file()).collect();
        if !missing.is_empty() {
            return Err(Error::MissingArtifacts(missing));
        }
        rows.push(s);
    }
    let mut text = format!(
        "{:<20} {:<9} {:<6} {:>4}  {:>17}  {:>17}\n",
        "dataset", "ae-mode", "input", "n", "auROC", "auPR"
    );
    let mut csv = String::from("dataset,ae_mode,orientation,folds,repeats,auroc_mean,auroc_sd,aupr_mean,aupr_sd\n");
    for s in &rows {
        let get = |m: &str| s.evaluation.summary.get(m).copied();
        let (roc, pr) = (get("auroc"), get("aupr"));
        let fmt = |m: Option<metrics::Summary>| match m {
            Some(m) => format!("{:.4} +/- {:.4}", m.mean, m.sd),
            None => "n/a".into(),
        };
        let _ = writeln!(
            text,
            "{:<20} {:<9} {:<6} {:>4}  {:>17}  {:>17}",
            s.dataset,
            s.ae_mode.as_str(),
            s.orientation.as_str(),
            s.evaluation.folds.len(),
            fmt(roc),
            fmt(pr)
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            s.dataset,
            s.ae_mode.as_str(),
            s.orientation.as_str(),
            s.folds,
            s.repeats,
            opt(roc.map(|m| m.mean)),
            opt(roc.map(|m| m.sd)),
            opt(pr.map(|m| m.mean)),
            opt(pr.map(|m| m.sd))
        );
        for f in &s.failures {
            let _ = writeln!(text, "  aborted: {f}");
        }
    }
    Ok(Report { text, csv })
}
