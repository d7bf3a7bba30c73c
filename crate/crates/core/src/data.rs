//! Datasets of labelled drug-target pairs: loading, statistics, min-max
//! scaling, padding to the convolutional grid and cross-validation folds.
//!
//! # Input formats
//!
//! *Delimited text*: comma- or tab-separated rows (the first data line
//! decides). Each row holds the feature values followed by the 0/1 label,
//! optionally preceded by a drug id and a target id column. A first line
//! whose label field is not numeric is taken as a header.
//!
//! ```text
//! drug,target,f0,f1,...,f1475,label
//! D00001,hsa:1234,0.31,0.02,...,0.77,1
//! ```
//!
//! *Sparse*: one instance per line, `label idx:value idx:value ...` with
//! 1-based feature indices; absent features are zero. Labels may be `0/1` or
//! `-1/+1`. A trailing `# drug target` comment supplies the ids.
//!
//! Rows without ids get the drug id `row<N>` (1-based line number) and the
//! target id `-`.
//!
//! # Extracted-feature files
//!
//! Comma-separated with header `drug_id,target_id,label,f0,...`; values are
//! printed with the shortest representation that parses back to the same
//! `f32`.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Features per instance in the benchmark datasets.
pub const FEATURE_COUNT: usize = 1476;
/// One zero is appended so the vector fills a 211 x 7 grid.
pub const PADDED_COUNT: usize = 1477;
const GRID: (usize, usize) = (211, 7);

/// Layout of the padded vector on the FRnet-1 input grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Orientation {
    /// `[211, 7]`, filled row-major.
    #[default]
    #[serde(rename = "211x7")]
    Tall,
    /// `[7, 211]`, the transpose of the tall grid.
    #[serde(rename = "7x211")]
    Wide,
}

impl Orientation {
    pub fn grid(self) -> (usize, usize) {
        match self {
            Orientation::Tall => GRID,
            Orientation::Wide => (GRID.1, GRID.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Tall => "211x7",
            Orientation::Wide => "7x211",
        }
    }
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "211x7" => Ok(Orientation::Tall),
            "7x211" => Ok(Orientation::Wide),
            other => Err(Error::Config(format!(
                "orientation must be 211x7 or 7x211, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Delimited,
    Sparse,
}

impl Format {
    /// `.svm`, `.libsvm` and `.sparse` files are sparse, everything else is
    /// delimited.
    pub fn detect(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("svm" | "libsvm" | "sparse") => Format::Sparse,
            _ => Format::Delimited,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delimited" | "csv" | "tsv" => Ok(Format::Delimited),
            "sparse" | "svm" | "libsvm" => Ok(Format::Sparse),
            other => Err(Error::Config(format!(
                "format must be delimited or sparse, got `{other}`"
            ))),
        }
    }
}

/// Instances stored column-wise; features are a flat row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub width: usize,
    pub drug_ids: Vec<String>,
    pub target_ids: Vec<String>,
    pub features: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, width: usize) -> Self {
        Dataset {
            name: name.into(),
            width,
            drug_ids: Vec::new(),
            target_ids: Vec::new(),
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, drug: impl Into<String>, target: impl Into<String>, features: &[f32], label: u8) {
        assert_eq!(features.len(), self.width, "instance width");
        assert!(label <= 1, "binary label");
        self.drug_ids.push(drug.into());
        self.target_ids.push(target.into());
        self.features.extend_from_slice(features);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> Vec<&[f32]> {
        if self.width == 0 {
            return vec![&[]; self.len()];
        }
        self.features.chunks_exact(self.width).collect()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.name.clone(), self.width);
        for &i in indices {
            out.push(
                self.drug_ids[i].clone(),
                self.target_ids[i].clone(),
                self.row(i),
                self.labels[i],
            );
        }
        out
    }
}

fn parse_label(raw: &str, signed: bool, path: &str, line: usize) -> Result<u8> {
    let bad = || Error::NonBinaryLabel {
        path: path.to_string(),
        line,
        label: raw.to_string(),
    };
    let v: f64 = raw.trim().parse().map_err(|_| bad())?;
    match v {
        1.0 => Ok(1),
        0.0 => Ok(0),
        v if signed && v == -1.0 => Ok(0),
        _ => Err(bad()),
    }
}

fn parse_value(raw: &str, path: &str, line: usize) -> Result<f32> {
    let v: f32 = raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_string(),
        line,
        msg: format!("`{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_string(),
            line,
            msg: format!("non-finite value `{raw}`"),
        });
    }
    Ok(v)
}

/// Parses delimited text; `path` only labels error messages.
pub fn parse_delimited(text: &str, path: &str, width: usize) -> Result<Dataset> {
    let mut d = Dataset::new(dataset_name(path), width);
    let mut delim = None;
    let mut first = true;
    let mut buf = Vec::with_capacity(width);
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let delim = *delim.get_or_insert(if raw.contains('\t') { '\t' } else { ',' });
        let fields: Vec<&str> = raw.split(delim).collect();
        if std::mem::take(&mut first) {
            let label = fields.last().map(|s| s.trim()).unwrap_or("");
            if label.parse::<f64>().is_err() {
                continue;
            }
        }
        let has_ids = fields[0].trim().parse::<f64>().is_err();
        let skip = if has_ids { 2 } else { 0 };
        let found = fields.len().saturating_sub(skip + 1);
        if found != width || fields.len() < skip + 1 {
            return Err(Error::WrongWidth {
                path: path.to_string(),
                line,
                expected: width,
                found,
            });
        }
        buf.clear();
        for f in &fields[skip..skip + width] {
            buf.push(parse_value(f, path, line)?);
        }
        let label = parse_label(fields[skip + width], false, path, line)?;
        let (drug, target) = if has_ids {
            (fields[0].trim().to_string(), fields[1].trim().to_string())
        } else {
            (format!("row{line}"), "-".to_string())
        };
        d.push(drug, target, &buf, label);
    }
    if d.is_empty() {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 0,
            msg: "no instances".into(),
        });
    }
    Ok(d)
}

/// Parses `label idx:value ...` rows with 1-based indices.
pub fn parse_sparse(text: &str, path: &str, width: usize) -> Result<Dataset> {
    let mut d = Dataset::new(dataset_name(path), width);
    let mut buf = vec![0.0f32; width];
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let (body, comment) = match raw.split_once('#') {
            Some((b, c)) => (b, Some(c)),
            None => (raw, None),
        };
        let mut tokens = body.split_whitespace();
        let Some(label) = tokens.next() else { continue };
        let label = parse_label(label, true, path, line)?;
        buf.iter_mut().for_each(|v| *v = 0.0);
        for tok in tokens {
            let err = |msg: String| Error::Parse {
                path: path.to_string(),
                line,
                msg,
            };
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected index:value, got `{tok}`")))?;
            let i: usize = i.parse().map_err(|_| err(format!("bad index `{i}`")))?;
            if i == 0 || i > width {
                return Err(Error::WrongWidth {
                    path: path.to_string(),
                    line,
                    expected: width,
                    found: i,
                });
            }
            buf[i - 1] = parse_value(v, path, line)?;
        }
        let mut ids = comment.into_iter().flat_map(|c| c.split_whitespace());
        let drug = ids.next().map_or_else(|| format!("row{line}"), str::to_string);
        let target = ids.next().unwrap_or("-").to_string();
        d.push(drug, target, &buf, label);
    }
    if d.is_empty() {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 0,
            msg: "no instances".into(),
        });
    }
    Ok(d)
}

fn dataset_name(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

pub fn load_dataset(path: &Path, format: Format, width: usize) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let label = path.display().to_string();
    match format {
        Format::Delimited => parse_delimited(&text, &label, width),
        Format::Sparse => parse_sparse(&text, &label, width),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetStats {
    pub pairs: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Negatives per positive.
    pub imbalance_ratio: f64,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pairs {}  positives {}  negatives {}  imbalance {:.2}",
            self.pairs, self.positives, self.negatives, self.imbalance_ratio
        )
    }
}

pub fn dataset_stats(d: &Dataset) -> Result<DatasetStats> {
    let positives = d.positives();
    if positives == 0 {
        return Err(Error::NoPositives(d.name.clone()));
    }
    let negatives = d.len() - positives;
    Ok(DatasetStats {
        pairs: d.len(),
        positives,
        negatives,
        imbalance_ratio: negatives as f64 / positives as f64,
    })
}

/// Per-feature minimum and maximum of the instances a scaler was fit on.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRecord {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl ScalingRecord {
    /// Fits on the rows listed in `indices` only.
    pub fn fit(d: &Dataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("scaling needs at least one instance".into()));
        }
        let mut min = d.row(indices[0]).to_vec();
        let mut max = min.clone();
        for &i in &indices[1..] {
            for ((lo, hi), &v) in min.iter_mut().zip(max.iter_mut()).zip(d.row(i)) {
                *lo = lo.min(v);
                *hi = hi.max(v);
            }
        }
        Ok(ScalingRecord { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// `(x - min) / (max - min)` clamped to `[0, 1]`; constant features map
    /// to zero.
    pub fn scale_value(&self, j: usize, x: f32) -> f32 {
        let (lo, hi) = (self.min[j] as f64, self.max[j] as f64);
        if hi <= lo {
            return 0.0;
        }
        (((x as f64 - lo) / (hi - lo)) as f32).clamp(0.0, 1.0)
    }

    pub fn apply_row(&self, row: &[f32]) -> Vec<f32> {
        row.iter().enumerate().map(|(j, &x)| self.scale_value(j, x)).collect()
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if d.width != self.width() {
            return Err(Error::ShapeMismatch(format!(
                "scaling record has {} features, dataset {}",
                self.width(),
                d.width
            )));
        }
        let mut out = d.clone();
        for (k, v) in out.features.iter_mut().enumerate() {
            *v = self.scale_value(k % self.width(), *v);
        }
        Ok(out)
    }

    /// Little-endian `min` values followed by `max` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.min
            .iter()
            .chain(&self.max)
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::Malformed(format!(
                "scaling record of {} bytes",
                bytes.len()
            )));
        }
        let vals: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let (min, max) = vals.split_at(vals.len() / 2);
        Ok(ScalingRecord {
            min: min.to_vec(),
            max: max.to_vec(),
        })
    }
}

/// Fits on every instance and scales the dataset in place of a copy.
pub fn scale_minmax(d: &Dataset) -> Result<(Dataset, ScalingRecord)> {
    let all: Vec<usize> = (0..d.len()).collect();
    let rec = ScalingRecord::fit(d, &all)?;
    Ok((rec.apply(d)?, rec))
}

/// Appends the zero pad and lays the 1477 values out as `[1, h, w, 1]`.
pub fn pad_and_reshape(row: &[f32], orientation: Orientation) -> Result<Tensor> {
    if row.len() != FEATURE_COUNT {
        return Err(Error::WrongWidth {
            path: "<instance>".into(),
            line: 0,
            expected: FEATURE_COUNT,
            found: row.len(),
        });
    }
    let mut padded = row.to_vec();
    padded.push(0.0);
    let (h, w) = orientation.grid();
    let data = match orientation {
        Orientation::Tall => padded,
        Orientation::Wide => {
            // wide[r][c] = tall[c][r]
            let mut out = vec![0.0; PADDED_COUNT];
            for r in 0..h {
                for c in 0..w {
                    out[r * w + c] = padded[c * h + r];
                }
            }
            out
        }
    };
    Tensor::from_vec([1, h, w, 1], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FoldStrategy {
    /// Positives and negatives are shuffled separately and dealt round-robin,
    /// so each fold gets its share of both classes.
    #[default]
    Stratified,
    /// One shuffle of all instances, dealt round-robin.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub repeat: usize,
    /// Fold id of every instance.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffled `k`-fold assignment drawn from the fold stream of
/// `(seed, repeat)`.
pub fn make_folds(labels: &[u8], k: usize, seed: u64, repeat: usize, strategy: FoldStrategy) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    if positives.len() < k {
        return Err(Error::TooFewPositives {
            needed: k,
            found: positives.len(),
        });
    }
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    let mut rng = stream_rng(seed, Stream::Folds, &[repeat as u64]);
    let order = match strategy {
        FoldStrategy::Stratified => {
            let (mut p, mut n) = (positives, negatives);
            p.shuffle(&mut rng);
            n.shuffle(&mut rng);
            p.into_iter().chain(n).collect::<Vec<_>>()
        }
        FoldStrategy::Shuffled => {
            let mut all: Vec<usize> = (0..labels.len()).collect();
            all.shuffle(&mut rng);
            all
        }
    };
    let mut assignments = vec![0; labels.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % k;
    }
    Ok(FoldPlan {
        k,
        seed,
        repeat,
        assignments,
    })
}

/// Writes an extracted-feature file atomically; nothing is written for an
/// empty dataset.
pub fn write_features(path: &Path, d: &Dataset) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Empty(format!("no instances to write to {}", path.display())));
    }
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let ctx = || format!("writing {}", path.display());
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(ctx(), e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        let mut header = String::from("drug_id,target_id,label");
        for j in 0..d.width {
            header.push_str(&format!(",f{j}"));
        }
        writeln!(w, "{header}").map_err(|e| Error::io(ctx(), e))?;
        for i in 0..d.len() {
            let mut line = format!("{},{},{}", d.drug_ids[i], d.target_ids[i], d.labels[i]);
            for v in d.row(i) {
                line.push(',');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}").map_err(|e| Error::io(ctx(), e))?;
        }
        w.flush().map_err(|e| Error::io(ctx(), e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(ctx(), e.error))?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let label = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    if !header.starts_with("drug_id,target_id,label") {
        return Err(Error::Parse {
            path: label,
            line: 1,
            msg: "missing drug_id,target_id,label header".into(),
        });
    }
    let width = header.split(',').count() - 3;
    let mut d = Dataset::new(dataset_name(&label), width);
    let mut buf = Vec::with_capacity(width);
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != width + 3 {
            return Err(Error::WrongWidth {
                path: label,
                line,
                expected: width,
                found: fields.len().saturating_sub(3),
            });
        }
        let y = parse_label(fields[2], false, &label, line)?;
        buf.clear();
        for f in &fields[3..] {
            buf.push(parse_value(f, &label, line)?);
        }
        d.push(fields[0], fields[1], &buf, y);
    }
    if d.is_empty() {
        return Err(Error::Empty(format!("{label} has no rows")));
    }
    Ok(d)
}
