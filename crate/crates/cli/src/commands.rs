use std::fs;
use std::path::{Path, PathBuf};

use frnet::checkpoint::{self, Checkpoint};
use frnet::data::{self, ScalingRecord};
use frnet::models::ModelKind;
use frnet::pipeline::{self, FitKey, RunConfig, Stage, TrainLog};
use frnet::{Error, Result};
use log::info;

use crate::args::{env_output_dir, or_in, output_dir, Command};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { run, write } => ingest(&run.resolve()?, write.as_deref()),
        Command::TrainAe { run, checkpoint } => {
            let cfg = run.resolve()?;
            let path = or_in(&checkpoint, &output_dir(&cfg), "ae.frnt");
            train_ae(&cfg, &path)
        }
        Command::Extract { run, ae, out } => {
            let cfg = run.resolve()?;
            let dir = output_dir(&cfg);
            extract(&cfg, &or_in(&ae, &dir, "ae.frnt"), &or_in(&out, &dir, "features.csv"))
        }
        Command::TrainClf {
            run,
            features,
            checkpoint,
        } => {
            let cfg = run.resolve()?;
            let dir = output_dir(&cfg);
            train_clf(&cfg, &or_in(&features, &dir, "features.csv"), &or_in(&checkpoint, &dir, "clf.frnt"))
        }
        Command::CvRun { run } => cv_run(&run.resolve()?),
        Command::Rank { run, ae, clf, k } => {
            let cfg = run.resolve()?;
            let dir = output_dir(&cfg);
            rank(&cfg, &or_in(&ae, &dir, "ae.frnt"), &or_in(&clf, &dir, "clf.frnt"), k)
        }
        Command::Report { dir, csv } => {
            let dir = dir.or_else(env_output_dir).unwrap_or_else(|| PathBuf::from("."));
            report(&dir, csv.as_deref())
        }
    }
}

fn io(context: String) -> impl FnOnce(std::io::Error) -> Error {
    move |source| Error::Io { context, source }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(io(format!("creating {}", dir.display()))),
        None => Ok(()),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(io(format!("writing {}", path.display())))
}

/// `ae.frnt` logs to `ae_log.csv` in the same directory.
fn log_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    checkpoint.with_file_name(format!("{stem}_log.csv"))
}

fn save_fit(ckpt: &Checkpoint, log: &TrainLog, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    checkpoint::save(ckpt, path)?;
    write_file(&log_path(path), log.to_csv().as_bytes())?;
    if let Some(last) = log.records.last() {
        info!("epoch {}: loss {:.6}, accuracy {:.4}", last.epoch, last.loss, last.accuracy);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn load_kind(path: &Path, kind: ModelKind) -> Result<Checkpoint> {
    let ckpt = checkpoint::load(path)?;
    if ckpt.kind() != kind {
        return Err(Error::CheckpointMismatch(format!(
            "{} holds a {:?} network, expected {:?}",
            path.display(),
            ckpt.kind(),
            kind
        )));
    }
    Ok(ckpt)
}

fn ingest(cfg: &RunConfig, write: Option<&Path>) -> Result<()> {
    let d = cfg.load_dataset()?;
    let stats = data::dataset_stats(&d)?;
    println!("{}: width {}  {stats}", d.name, d.width);
    if let Some(path) = write {
        ensure_parent(path)?;
        data::write_features(path, &d)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn train_ae(cfg: &RunConfig, path: &Path) -> Result<()> {
    let d = cfg.load_dataset()?;
    let all: Vec<usize> = (0..d.len()).collect();
    let scaling = ScalingRecord::fit(&d, &all)?;
    let fit = pipeline::train_ae(&scaling.apply(&d)?, cfg, FitKey::standalone(Stage::Ae))?;
    let ckpt = Checkpoint::from_network(&fit.net, cfg.train.seed, cfg.digest(), Some(scaling), Some(&fit.adam));
    save_fit(&ckpt, &fit.log, path)
}

fn extract(cfg: &RunConfig, ae: &Path, out: &Path) -> Result<()> {
    let ckpt = load_kind(ae, ModelKind::Frnet1)?;
    let d = cfg.load_dataset()?;
    let scaled = pipeline::scale_with(&ckpt, &d)?;
    let feats = pipeline::extract_dataset(&mut ckpt.network()?, &scaled, cfg.train.batch_size)?;
    ensure_parent(out)?;
    data::write_features(out, &feats)?;
    println!("wrote {} ({} rows x {} features)", out.display(), feats.len(), feats.width);
    Ok(())
}

fn train_clf(cfg: &RunConfig, features: &Path, path: &Path) -> Result<()> {
    let feats = data::read_features(features)?;
    let fit = pipeline::train_clf(&feats, cfg, FitKey::standalone(Stage::Clf))?;
    let ckpt = Checkpoint::from_network(&fit.net, cfg.train.seed, cfg.digest(), None, Some(&fit.adam));
    save_fit(&ckpt, &fit.log, path)
}

fn cv_run(cfg: &RunConfig) -> Result<()> {
    let d = cfg.load_dataset()?;
    let dir = output_dir(cfg);
    let s = pipeline::cv_run(&d, cfg, Some(&dir))?;
    let mean = |m: &str| s.evaluation.mean(m).map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{}: {} folds x {} repeats ({})  auROC {}  auPR {}",
        s.dataset,
        s.folds,
        s.repeats,
        s.ae_mode.as_str(),
        mean("auroc"),
        mean("aupr")
    );
    for f in &s.failures {
        println!("aborted: {f}");
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn rank(cfg: &RunConfig, ae: &Path, clf: &Path, k: usize) -> Result<()> {
    let ae = load_kind(ae, ModelKind::Frnet1)?;
    let clf = load_kind(clf, ModelKind::Frnet2)?;
    let d = cfg.load_dataset()?;
    println!("drug_id\ttarget_id\tscore");
    for c in pipeline::rank_candidates(&ae, &clf, &d, k, cfg.train.batch_size)? {
        println!("{}\t{}\t{:.6}", c.drug_id, c.target_id, c.score);
    }
    Ok(())
}

fn report(dir: &Path, csv: Option<&Path>) -> Result<()> {
    let r = pipeline::report(dir)?;
    print!("{}", r.text);
    if let Some(path) = csv {
        write_file(path, r.csv.as_bytes())?;
    }
    Ok(())
}
