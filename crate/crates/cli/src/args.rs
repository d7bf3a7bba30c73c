//! Command-line surface. Run flags mirror the `RunConfig` fields and are
//! applied on top of `--config`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use frnet::data::{Format, Orientation};
use frnet::pipeline::{AeMode, RunConfig, OUTPUT_DIR_ENV};
use frnet::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "frnet", version, about = "Two-stage convolutional drug-target interaction pipeline")]
pub struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate a dataset, print its statistics.
    Ingest {
        #[command(flatten)]
        run: RunArgs,
        /// Also write the parsed rows as a delimited feature file.
        #[arg(long, value_name = "PATH")]
        write: Option<PathBuf>,
    },
    /// Fit scaling and the autoencoder on a whole dataset.
    TrainAe {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to write [default: <output>/ae.frnt].
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Encode a dataset into the learned representation.
    Extract {
        #[command(flatten)]
        run: RunArgs,
        /// Autoencoder checkpoint [default: <output>/ae.frnt].
        #[arg(long, value_name = "PATH")]
        ae: Option<PathBuf>,
        /// Feature file to write [default: <output>/features.csv].
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Train the classifier on an extracted feature file.
    TrainClf {
        #[command(flatten)]
        run: RunArgs,
        /// Feature file [default: <output>/features.csv].
        #[arg(long, value_name = "PATH")]
        features: Option<PathBuf>,
        /// Checkpoint to write [default: <output>/clf.frnt].
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Repeated k-fold cross-validation of the full pipeline.
    CvRun {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Top-k unlabelled pairs by predicted interaction probability.
    Rank {
        #[command(flatten)]
        run: RunArgs,
        /// Autoencoder checkpoint [default: <output>/ae.frnt].
        #[arg(long, value_name = "PATH")]
        ae: Option<PathBuf>,
        /// Classifier checkpoint [default: <output>/clf.frnt].
        #[arg(long, value_name = "PATH")]
        clf: Option<PathBuf>,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
    },
    /// Tabulate auROC and auPR of completed runs.
    Report {
        /// A run directory or a directory of run directories [default: the output directory].
        dir: Option<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Dataset file (delimited or sparse).
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<Format>,
    /// Features per instance.
    #[arg(long)]
    pub width: Option<usize>,

    #[arg(long, value_parser = parse_orientation)]
    pub orientation: Option<Orientation>,
    /// Autoencoder bottleneck channels.
    #[arg(long)]
    pub bottleneck: Option<usize>,
    /// Autoencoder hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ae_hidden: Option<Vec<usize>>,
    /// Classifier hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub clf_hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub keep_prob: Option<f64>,
    #[arg(long)]
    pub l2_scale: Option<f64>,

    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs_ae: Option<usize>,
    #[arg(long)]
    pub epochs_clf: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip_eps: Option<f64>,

    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long, value_name = "BOOL")]
    pub stratified: Option<bool>,
    #[arg(long, value_parser = parse_ae_mode)]
    pub ae_mode: Option<AeMode>,
    /// Decision threshold for the confusion rates.
    #[arg(long)]
    pub threshold: Option<f64>,

    /// Output directory; falls back to the config file, then $FRNET_OUTPUT_DIR, then `.`.
    #[arg(long, value_name = "DIR")]
    pub output: Option<PathBuf>,
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_orientation(s: &str) -> std::result::Result<Orientation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_ae_mode(s: &str) -> std::result::Result<AeMode, String> {
    match s {
        "per-fold" => Ok(AeMode::PerFold),
        "global" => Ok(AeMode::Global),
        other => Err(format!("ae-mode must be per-fold or global, got `{other}`")),
    }
}

macro_rules! set {
    ($($dst:expr => $src:expr),* $(,)?) => {
        $(if let Some(v) = $src {
            $dst = v;
        })*
    };
}

impl RunArgs {
    /// Config file (or defaults) with every given flag applied, validated.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.data {
            c.data.path = Some(p.clone());
        }
        if let Some(f) = self.format {
            c.data.format = Some(f);
        }
        if let Some(p) = &self.output {
            c.output.dir = Some(p.clone());
        }
        set! {
            c.data.width => self.width,
            c.model.orientation => self.orientation,
            c.model.bottleneck => self.bottleneck,
            c.model.ae_hidden => self.ae_hidden.clone(),
            c.model.clf_hidden => self.clf_hidden.clone(),
            c.model.keep_prob => self.keep_prob,
            c.model.l2_scale => self.l2_scale,
            c.train.seed => self.seed,
            c.train.batch_size => self.batch_size,
            c.train.epochs_ae => self.epochs_ae,
            c.train.epochs_clf => self.epochs_clf,
            c.train.lr => self.lr,
            c.train.clip_eps => self.clip_eps,
            c.cv.folds => self.folds,
            c.cv.repeats => self.repeats,
            c.cv.stratified => self.stratified,
            c.cv.ae_mode => self.ae_mode,
            c.cv.threshold => self.threshold,
        }
        c.validate()?;
        Ok(c)
    }
}

/// Output directory of a resolved config, falling back on the environment.
pub fn output_dir(c: &RunConfig) -> PathBuf {
    c.output
        .dir
        .clone()
        .or_else(env_output_dir)
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn env_output_dir() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

pub fn or_in(path: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| dir.join(name))
}
