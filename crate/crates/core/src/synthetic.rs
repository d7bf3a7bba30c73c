//! Generated datasets for tests and smoke runs. All draw from the data
//! stream of the given seed.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::rng::{stream_rng, Stream};

fn ids(i: usize) -> (String, String) {
    (format!("D{:04}", i / 26), format!("T{:03}", i % 26))
}

/// `x = u . V + e` with `u ~ U(0,1)^rank` per instance, `V ~ U(-1,1)` and
/// noise `e ~ U(-noise, noise)`. The label is `u_0 > 0.5`.
pub fn low_rank(n: usize, width: usize, rank: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Data, &[0]);
    let v: Vec<f64> = (0..rank * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut d = Dataset::new("low-rank", width);
    let mut row = vec![0.0f32; width];
    for i in 0..n {
        let u: Vec<f64> = (0..rank).map(|_| rng.random::<f64>()).collect();
        for (j, x) in row.iter_mut().enumerate() {
            let signal: f64 = (0..rank).map(|r| u[r] * v[r * width + j]).sum();
            let e = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
            *x = (signal + e) as f32;
        }
        let (drug, target) = ids(i);
        d.push(drug, target, &row, (u[0] > 0.5) as u8);
    }
    d
}

/// Two isotropic Gaussian blobs of standard deviation `spread` around
/// class centres drawn uniformly from `[0, 1)^width`. Exactly
/// `round(n * positive_fraction)` positives, placed at random rows.
pub fn blobs(n: usize, width: usize, positive_fraction: f64, spread: f64, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Data, &[1]);
    let centres: [Vec<f64>; 2] = std::array::from_fn(|_| (0..width).map(|_| rng.random::<f64>()).collect());
    let positives = (n as f64 * positive_fraction).round() as usize;
    let mut labels: Vec<u8> = (0..n).map(|i| (i < positives) as u8).collect();
    labels.shuffle(&mut rng);
    let normal = Normal::new(0.0, spread).expect("finite spread");
    let mut d = Dataset::new("blobs", width);
    let mut row = vec![0.0f32; width];
    for (i, &y) in labels.iter().enumerate() {
        let centre = &centres[y as usize];
        for (x, c) in row.iter_mut().zip(centre) {
            *x = (c + normal.sample(&mut rng)) as f32;
        }
        let (drug, target) = ids(i);
        d.push(drug, target, &row, y);
    }
    d
}

/// Uniform `[0, 1)` features with balanced random labels.
pub fn uniform(n: usize, width: usize, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Data, &[2]);
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    labels.shuffle(&mut rng);
    let mut d = Dataset::new("uniform", width);
    let mut row = vec![0.0f32; width];
    for (i, &y) in labels.iter().enumerate() {
        for x in row.iter_mut() {
            *x = rng.random::<f32>();
        }
        let (drug, target) = ids(i);
        d.push(drug, target, &row, y);
    }
    d
}

/// Copy with labels permuted by the data stream of `seed`.
pub fn permute_labels(d: &Dataset, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Data, &[3]);
    let mut out = d.clone();
    out.labels.shuffle(&mut rng);
    out.name = format!("{}-permuted", d.name);
    out
}
