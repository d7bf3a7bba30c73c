//! Shared helpers for the integration tests and the acceptance target.
#![allow(dead_code)]

pub mod golden;
pub mod gradcheck;
pub mod oracles;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

use frnet::pipeline::RunConfig;

/// Narrow layers and few epochs so that a full cross-validation run takes
/// seconds to minutes on one core.
pub fn reduced_config(epochs_ae: usize, epochs_clf: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model.ae_hidden = vec![64];
    cfg.model.clf_hidden = vec![32, 16];
    cfg.train.epochs_ae = epochs_ae;
    cfg.train.epochs_clf = epochs_clf;
    cfg.train.batch_size = 32;
    cfg.cv.repeats = 1;
    cfg
}

/// Files below `dir` whose contents must be reproducible, with their bytes.
/// Training logs are left out because they record wall time.
pub fn reproducible_artifacts(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with("_log.csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}
