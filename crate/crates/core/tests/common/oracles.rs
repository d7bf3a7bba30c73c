//! Brute-force reference implementations for the ranking metrics.

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Counts at threshold `t` from scratch: `(tp, fp, tn, fn)`.
pub fn counts_at(scores: &[f64], labels: &[u8], t: f64) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= t, y == 1) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}

fn thresholds(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

/// Step-wise area under precision/recall: every distinct score is a
/// threshold and each recall increment is weighted by the precision there.
pub fn threshold_aupr(scores: &[f64], labels: &[u8]) -> f64 {
    let positives = labels.iter().filter(|&&y| y == 1).count() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds(scores) {
        let (tp, fp, _, _) = counts_at(scores, labels, t);
        let recall = tp as f64 / positives;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    area
}

/// The (fpr, tpr) point set obtained by sweeping every distinct score as a
/// threshold, plus the origin.
pub fn threshold_roc_points(scores: &[f64], labels: &[u8]) -> Vec<(f64, f64)> {
    let p = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n = labels.len() as f64 - p;
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds(scores) {
        let (tp, fp, _, _) = counts_at(scores, labels, t);
        pts.push((fp as f64 / n, tp as f64 / p));
    }
    pts
}

/// Random scored labels of length 2..=300 with both classes present. About
/// half the instances draw scores from a handful of levels so that large
/// tie blocks occur.
pub fn random_scored(rng: &mut rand_chacha::ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    use rand::Rng;
    let n = rng.random_range(2..=300);
    let levels = match rng.random_range(0..4) {
        0 => 2,
        1 => rng.random_range(3..10),
        _ => 0,
    };
    let prevalence = rng.random_range(0.02..0.98);
    let scores: Vec<f64> = (0..n)
        .map(|_| {
            if levels > 0 {
                rng.random_range(0..levels) as f64 / levels as f64
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(prevalence) as u8).collect();
    labels[0] = 1;
    labels[1] = 0;
    (scores, labels)
}

/// Largest deviation of `auroc` and `aupr` from the brute-force oracles over
/// `count` random instances.
pub fn metric_deviation(seed: u64, count: usize) -> (f64, f64) {
    use frnet::metrics::{aupr, auroc, ScoredLabels};
    let mut rng = super::rng(seed);
    let (mut roc_err, mut pr_err) = (0.0f64, 0.0f64);
    for _ in 0..count {
        let (scores, labels) = random_scored(&mut rng);
        let s = ScoredLabels::new(scores.clone(), labels.clone()).unwrap();
        roc_err = roc_err.max((auroc(&s).unwrap() - pairwise_auroc(&scores, &labels)).abs());
        pr_err = pr_err.max((aupr(&s).unwrap() - threshold_aupr(&scores, &labels)).abs());
    }
    (roc_err, pr_err)
}

/// Every label/prediction pattern of length 1..=6 against a hand count of
/// the 2x2 table. Returns the number of patterns whose rates differ.
pub fn confusion_mismatches() -> (usize, usize) {
    use frnet::metrics::{confusion_rates, ScoredLabels};
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let (mut checked, mut wrong) = (0, 0);
    for len in 1..=6u32 {
        for lab in 0..1u32 << len {
            for pred in 0..1u32 << len {
                let labels: Vec<u8> = (0..len).map(|i| (lab >> i & 1) as u8).collect();
                let scores: Vec<f64> = (0..len).map(|i| if pred >> i & 1 == 1 { 0.75 } else { 0.25 }).collect();
                let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
                for i in 0..len {
                    match (pred >> i & 1, lab >> i & 1) {
                        (1, 1) => tp += 1,
                        (1, 0) => fp += 1,
                        (0, 0) => tn += 1,
                        _ => fn_ += 1,
                    }
                }
                let r = confusion_rates(&ScoredLabels::new(scores, labels).unwrap(), 0.5).unwrap();
                let specificity = ratio(tn, tn + fp);
                let expected = (
                    ratio(tp, tp + fn_),
                    ratio(tp, tp + fp),
                    specificity,
                    ratio(fp, tn + fp),
                    (tp + tn) as f64 / len as f64,
                );
                checked += 1;
                // FPR = 1 - specificity up to one rounding step.
                let identity = match (r.fpr, specificity) {
                    (Some(f), Some(s)) => (f - (1.0 - s)).abs() <= f64::EPSILON,
                    (f, s) => f.is_none() && s.is_none(),
                };
                if (r.sensitivity, r.precision, r.specificity, r.fpr, r.accuracy) != expected || !identity {
                    wrong += 1;
                }
            }
        }
    }
    (checked, wrong)
}

/// Textbook scalar Adam, entirely in `f64`.
pub struct ScalarAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: i32,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl ScalarAdam {
    pub fn new(c: frnet::optim::AdamConfig, n: usize) -> Self {
        ScalarAdam {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, p: &mut [f64], g: &[f64]) {
        self.t += 1;
        for i in 0..p.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / (1.0 - self.beta1.powi(self.t));
            let v_hat = self.v[i] / (1.0 - self.beta2.powi(self.t));
            p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Runs `adam_step` and the scalar reference side by side for `steps`
/// random gradients. Returns the largest relative parameter deviation.
pub fn adam_deviation(seed: u64, steps: usize) -> f64 {
    use frnet::optim::{adam_step, AdamConfig, AdamState};
    use frnet::tensor::Tensor;
    use rand::Rng;
    let mut rng = super::rng(seed);
    let config = AdamConfig {
        lr: rng.random_range(1e-4..1e-2),
        ..AdamConfig::default()
    };
    let dims = [vec![3, 4], vec![5], vec![2, 2, 1, 3]];
    let mut params: Vec<Tensor> = dims
        .iter()
        .map(|d| {
            let n: usize = d.iter().product();
            // Magnitudes away from zero keep the relative error meaningful.
            let vals = (0..n)
                .map(|_| rng.random_range(0.5f32..2.0) * if rng.random() { 1.0 } else { -1.0 })
                .collect();
            Tensor::from_vec(d.clone(), vals).unwrap()
        })
        .collect();
    let mut state = AdamState::new(config, params.iter().map(|p| p.shape()));
    let mut flat: Vec<f64> = params.iter().flat_map(|p| p.data().iter().map(|&v| v as f64)).collect();
    let mut reference = ScalarAdam::new(config, flat.len());
    let mut worst = 0.0f64;
    for _ in 0..steps {
        let scale = 10f32.powf(rng.random_range(-3.0..1.0));
        let grads: Vec<Tensor> = params
            .iter()
            .map(|p| {
                let vals = (0..p.len()).map(|_| scale * rng.random_range(-1.0f32..1.0)).collect();
                Tensor::from_vec(p.dims().to_vec(), vals).unwrap()
            })
            .collect();
        let g: Vec<f64> = grads.iter().flat_map(|t| t.data().iter().map(|&v| v as f64)).collect();
        adam_step(&mut params, &grads, &mut state).unwrap();
        reference.step(&mut flat, &g);
        let got = params.iter().flat_map(|p| p.data().iter().map(|&v| v as f64));
        for (a, b) in got.zip(&flat) {
            worst = worst.max((a - b).abs() / b.abs());
        }
    }
    worst
}

/// Magnitude of the first update for unit gradients, as a multiple of lr
/// minus one. Parameters start at zero so the stored value is the step
/// itself rather than a difference of two rounded numbers.
pub fn adam_first_step_error() -> f64 {
    use frnet::optim::{adam_step, AdamConfig, AdamState};
    use frnet::tensor::Tensor;
    let config = AdamConfig::default();
    let mut worst = 0.0f64;
    for sign in [1.0f32, -1.0] {
        let mut params = vec![Tensor::zeros(vec![4]).unwrap()];
        let before = params[0].clone();
        let grads = vec![params[0].map(|_| sign)];
        let mut state = AdamState::new(config, params.iter().map(|p| p.shape()));
        adam_step(&mut params, &grads, &mut state).unwrap();
        for (a, b) in params[0].data().iter().zip(before.data()) {
            let moved = (*b as f64 - *a as f64) * sign as f64;
            worst = worst.max((moved / config.lr - 1.0).abs());
        }
    }
    worst
}
