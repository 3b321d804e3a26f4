//! Dataset handling: the synthetic two-moons generator, schema-driven CSV
//! ingestion, label balancing, feature standardization, and train/test
//! splitting.
//!
//! Sensitive attributes are never part of the feature matrix; they only
//! determine group membership. Multiple sensitive columns combine into
//! product groups (one id per observed value combination), so pairwise
//! fairness terms cover every combination.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, STREAM_BALANCE, STREAM_DATA, STREAM_SPLIT};

/// Probability of sensitive value 1 among positive-label moon points.
pub const MOON_Z1_GIVEN_Y1: f64 = 0.35;
/// Probability of sensitive value 1 among negative-label moon points.
pub const MOON_Z1_GIVEN_Y0: f64 = 0.65;
/// Coordinate noise applied to moon points unless configured otherwise.
/// Calibrated so an unconstrained two-hidden-layer classifier at the
/// benchmark scale tops out near 0.97 test accuracy instead of separating
/// the arcs almost perfectly.
pub const DEFAULT_MOON_NOISE_SD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Full,
    Train,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Full => "full",
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        }
    }
}

/// Immutable sample collection: flat row-major features plus aligned binary
/// labels and contiguous group ids. Construction validates shape, finiteness
/// and that every group id in [0, G) actually occurs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    width: usize,
    labels: Vec<bool>,
    groups: Vec<usize>,
    n_groups: usize,
    split_tag: SplitTag,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        width: usize,
        labels: Vec<bool>,
        groups: Vec<usize>,
        split_tag: SplitTag,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("dataset has no rows".to_string()));
        }
        if width == 0 {
            return Err(Error::Data("dataset has no feature columns".to_string()));
        }
        if features.len() != labels.len() * width || labels.len() != groups.len() {
            return Err(Error::shape(format!(
                "dataset pieces disagree: {} feature values for width {}, {} labels, {} groups",
                features.len(),
                width,
                labels.len(),
                groups.len()
            )));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite feature value {v}")));
        }
        let n_groups = groups.iter().max().unwrap() + 1;
        let mut seen = vec![false; n_groups];
        for &g in &groups {
            seen[g] = true;
        }
        if let Some(g) = seen.iter().position(|&s| !s) {
            return Err(Error::Data(format!(
                "group ids must be contiguous from 0: id {g} is absent but {} is present",
                n_groups - 1
            )));
        }
        Ok(Dataset { features, width, labels, groups, n_groups, split_tag })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split_tag
    }

    /// Flat row-major feature matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, idx: usize) -> &[f64] {
        &self.features[idx * self.width..(idx + 1) * self.width]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_groups];
        for &g in &self.groups {
            counts[g] += 1;
        }
        counts
    }

    /// (negative, positive) label counts.
    pub fn label_counts(&self) -> (usize, usize) {
        let positive = self.labels.iter().filter(|&&y| y).count();
        (self.len() - positive, positive)
    }

    /// Rows at the given indices, in the given order. The subset keeps the
    /// parent's group-id space even when some group does not appear in it,
    /// so splits of a dataset always agree on the group count.
    pub(crate) fn subset(&self, indices: &[usize], split_tag: SplitTag) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.width);
        let mut labels = Vec::with_capacity(indices.len());
        let mut groups = Vec::with_capacity(indices.len());
        for &idx in indices {
            features.extend_from_slice(self.row(idx));
            labels.push(self.labels[idx]);
            groups.push(self.groups[idx]);
        }
        Dataset {
            features,
            width: self.width,
            labels,
            groups,
            n_groups: self.n_groups,
            split_tag,
        }
    }

    /// Writes the dataset as CSV with columns x0..x{d-1}, label, group.
    /// Feature values round-trip bit-exactly through the shortest-exact
    /// float formatting.
    pub fn export_csv(&self, out: impl Write) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.width).map(|c| format!("x{c}")).collect();
        header.push("label".to_string());
        header.push("group".to_string());
        writer.write_record(&header)?;
        let mut record = Vec::with_capacity(self.width + 2);
        for idx in 0..self.len() {
            record.clear();
            record.extend(self.row(idx).iter().map(|v| v.to_string()));
            record.push(if self.labels[idx] { "1" } else { "0" }.to_string());
            record.push(self.groups[idx].to_string());
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Two interleaving half circles: class 0 on (cos t, sin t) and class 1 on
/// (1 - cos t, 0.5 - sin t) for t uniform over [0, pi], with Gaussian
/// coordinate noise. The sensitive attribute is drawn per point so that
/// P(Z=1 | Y=1) = 0.35 and P(Z=1 | Y=0) = 0.65, which with the balanced
/// class split makes P(Y=1 | Z=1) approach 0.35 and P(Y=1 | Z=0) approach
/// 0.65.
pub fn generate_moons(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Data(format!("moon generation needs at least 2 points, got {n}")));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::Data(format!("moon noise must be a non-negative real, got {noise_sd}")));
    }
    let mut rng = seeded(seed, STREAM_DATA);
    let n0 = n / 2;
    let mut features = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for idx in 0..n {
        let label = idx >= n0;
        let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let nx: f64 = rng.sample::<f64, _>(StandardNormal) * noise_sd;
        let ny: f64 = rng.sample::<f64, _>(StandardNormal) * noise_sd;
        let (x, y) = if label {
            (1.0 - t.cos() + nx, 0.5 - t.sin() + ny)
        } else {
            (t.cos() + nx, t.sin() + ny)
        };
        let z1_prob = if label { MOON_Z1_GIVEN_Y1 } else { MOON_Z1_GIVEN_Y0 };
        let z = rng.gen::<f64>() < z1_prob;
        features.push(x);
        features.push(y);
        labels.push(label);
        groups.push(z as usize);
    }
    Dataset::new(features, 2, labels, groups, SplitTag::Full)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub column: String,
    /// Cell value counted as the positive label; everything else is
    /// negative.
    pub positive: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveSpec {
    pub column: String,
    /// Admissible values in dictionary order; a cell outside this list is an
    /// ingestion error.
    pub values: Vec<String>,
}

/// Column roles for CSV ingestion. Numeric feature columns parse as reals;
/// categorical ones are one-hot encoded over their observed values (sorted
/// for determinism). Sensitive columns never enter the feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub label: LabelSpec,
    pub sensitive: Vec<SensitiveSpec>,
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
}

impl ColumnSchema {
    pub fn validate(&self) -> Result<()> {
        if self.sensitive.is_empty() {
            return Err(Error::config("schema needs at least one sensitive column".to_string()));
        }
        if self.numeric.is_empty() && self.categorical.is_empty() {
            return Err(Error::config("schema needs at least one feature column".to_string()));
        }
        for spec in &self.sensitive {
            if spec.values.len() < 2 {
                return Err(Error::config(format!(
                    "sensitive column {:?} needs at least two values, got {:?}",
                    spec.column, spec.values
                )));
            }
            let mut sorted = spec.values.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != spec.values.len() {
                return Err(Error::config(format!(
                    "sensitive column {:?} lists duplicate values",
                    spec.column
                )));
            }
        }
        let mut all: Vec<&str> = Vec::new();
        all.push(&self.label.column);
        all.extend(self.sensitive.iter().map(|s| s.column.as_str()));
        all.extend(self.numeric.iter().map(String::as_str));
        all.extend(self.categorical.iter().map(String::as_str));
        let mut sorted = all.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(format!("column {:?} has more than one role", w[0])));
        }
        Ok(())
    }
}

/// Reads a CSV file according to the schema. See [`load_csv_reader`].
pub fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    load_csv_reader(file, schema)
}

/// Reads headered CSV data according to the schema: numeric features parse
/// as reals, categorical features one-hot over their sorted observed values,
/// the label binarizes against the schema's positive value, and sensitive
/// columns map rows to product group ids. Observed sensitive combinations
/// are renumbered densely in dictionary-product order so group ids stay
/// contiguous.
pub fn load_csv_reader(input: impl Read, schema: &ColumnSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();
    {
        let mut sorted: Vec<&str> = headers.iter().collect();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("duplicate header column {:?}", w[0])));
        }
    }
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column {name:?} missing from header")))
    };
    let label_idx = col_index(&schema.label.column)?;
    let sensitive_idx: Vec<usize> = schema
        .sensitive
        .iter()
        .map(|s| col_index(&s.column))
        .collect::<Result<_>>()?;
    let numeric_idx: Vec<usize> =
        schema.numeric.iter().map(|c| col_index(c)).collect::<Result<_>>()?;
    let categorical_idx: Vec<usize> =
        schema.categorical.iter().map(|c| col_index(c)).collect::<Result<_>>()?;

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for record in reader.records() {
        rows.push(record?);
    }
    if rows.is_empty() {
        return Err(Error::Data("CSV contains no data rows".to_string()));
    }

    // Discover categorical feature vocabularies; sorted order keeps the
    // encoding independent of row order.
    let mut vocabularies: Vec<Vec<String>> = Vec::with_capacity(categorical_idx.len());
    for &c in &categorical_idx {
        let mut values: Vec<String> = rows.iter().map(|r| r[c].to_string()).collect();
        values.sort();
        values.dedup();
        vocabularies.push(values);
    }
    let width = numeric_idx.len() + vocabularies.iter().map(Vec::len).sum::<usize>();

    // First pass over sensitive columns: map each row to its product rank,
    // then renumber the observed ranks densely.
    let mut product_ranks = Vec::with_capacity(rows.len());
    for (row_no, record) in rows.iter().enumerate() {
        let mut rank = 0usize;
        for (spec, &c) in schema.sensitive.iter().zip(&sensitive_idx) {
            let cell = &record[c];
            let pos = spec.values.iter().position(|v| v == cell).ok_or_else(|| {
                Error::Data(format!(
                    "row {}: unknown value {cell:?} in sensitive column {:?} \
                     (expected one of {:?})",
                    row_no + 1,
                    spec.column,
                    spec.values
                ))
            })?;
            rank = rank * spec.values.len() + pos;
        }
        product_ranks.push(rank);
    }
    let mut rank_to_id = BTreeMap::new();
    {
        let mut observed: Vec<usize> = product_ranks.clone();
        observed.sort_unstable();
        observed.dedup();
        for (id, rank) in observed.into_iter().enumerate() {
            rank_to_id.insert(rank, id);
        }
    }

    let mut features = Vec::with_capacity(rows.len() * width);
    let mut labels = Vec::with_capacity(rows.len());
    for (row_no, record) in rows.iter().enumerate() {
        for (name, &c) in schema.numeric.iter().zip(&numeric_idx) {
            let cell = &record[c];
            let value: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "row {}: cannot parse {cell:?} in numeric column {name:?}",
                    row_no + 1
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Data(format!(
                    "row {}: non-finite value {cell:?} in numeric column {name:?}",
                    row_no + 1
                )));
            }
            features.push(value);
        }
        for (vocabulary, &c) in vocabularies.iter().zip(&categorical_idx) {
            let cell = &record[c];
            let hot = vocabulary.iter().position(|v| v == cell).unwrap();
            for k in 0..vocabulary.len() {
                features.push(if k == hot { 1.0 } else { 0.0 });
            }
        }
        labels.push(record[label_idx] == schema.label.positive);
    }
    let groups: Vec<usize> = product_ranks.iter().map(|r| rank_to_id[r]).collect();
    Dataset::new(features, width, labels, groups, SplitTag::Full)
}

/// Undersamples the majority label class down to the minority count; the
/// minority class is untouched and surviving rows keep their original
/// order.
pub fn balance_undersample(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let (negatives, positives) = ds.label_counts();
    if negatives == 0 || positives == 0 {
        return Err(Error::Data(format!(
            "balancing needs both label classes, got {negatives} negative and {positives} positive"
        )));
    }
    let majority_label = positives > negatives;
    let keep = positives.min(negatives);
    let mut majority: Vec<usize> =
        (0..ds.len()).filter(|&i| ds.labels()[i] == majority_label).collect();
    majority.shuffle(&mut seeded(seed, STREAM_BALANCE));
    majority.truncate(keep);
    let mut indices: Vec<usize> =
        (0..ds.len()).filter(|&i| ds.labels()[i] != majority_label).collect();
    indices.extend(majority);
    indices.sort_unstable();
    Ok(ds.subset(&indices, ds.split_tag()))
}

/// Per-feature centering and scaling parameters fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Population standard deviation (divide by N, not N-1).
    pub sd: Vec<f64>,
}

impl FeatureStats {
    /// Columns whose spread is indistinguishable from rounding noise around
    /// the mean are treated as constant and mapped to zero.
    fn effective_sd(&self, col: usize) -> Option<f64> {
        let sd = self.sd[col];
        if sd <= 1e-9 * (1.0 + self.mean[col].abs()) {
            None
        } else {
            Some(sd)
        }
    }

    /// Applies the fitted z-score transform to a dataset of matching width.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.width() != self.mean.len() {
            return Err(Error::shape(format!(
                "dataset width {} does not match {} fitted columns",
                ds.width(),
                self.mean.len()
            )));
        }
        let mut features = Vec::with_capacity(ds.features().len());
        for idx in 0..ds.len() {
            for (col, &v) in ds.row(idx).iter().enumerate() {
                features.push(match self.effective_sd(col) {
                    Some(sd) => (v - self.mean[col]) / sd,
                    None => 0.0,
                });
            }
        }
        Dataset::new(features, ds.width(), ds.labels().to_vec(), ds.groups().to_vec(), ds.split_tag())
    }
}

/// Z-scores both splits using the training split's mean and population
/// standard deviation; constant training columns become zero everywhere.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, FeatureStats)> {
    if train.width() != test.width() {
        return Err(Error::shape(format!(
            "train width {} does not match test width {}",
            train.width(),
            test.width()
        )));
    }
    let n = train.len() as f64;
    let width = train.width();
    let mut mean = vec![0.0; width];
    for idx in 0..train.len() {
        for (col, &v) in train.row(idx).iter().enumerate() {
            mean[col] += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut variance = vec![0.0; width];
    for idx in 0..train.len() {
        for (col, &v) in train.row(idx).iter().enumerate() {
            variance[col] += (v - mean[col]) * (v - mean[col]);
        }
    }
    let sd: Vec<f64> = variance.iter().map(|v| (v / n).sqrt()).collect();
    let stats = FeatureStats { mean, sd };
    let train_std = stats.apply(train)?;
    let test_std = stats.apply(test)?;
    Ok((train_std, test_std, stats))
}

/// Seeded shuffle followed by a fractional partition; row order within each
/// split follows the original dataset.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction.is_finite() && 0.0 < train_fraction && train_fraction < 1.0) {
        return Err(Error::Data(format!(
            "train fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let n_train = ((ds.len() as f64 * train_fraction).round() as usize).clamp(1, ds.len() - 1);
    split_fixed(ds, n_train, ds.len() - n_train, seed)
}

/// Seeded shuffle followed by an exact-count partition.
pub fn split_fixed(
    ds: &Dataset,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_test == 0 || n_train + n_test != ds.len() {
        return Err(Error::Data(format!(
            "split counts {n_train} + {n_test} do not partition {} rows",
            ds.len()
        )));
    }
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    indices.shuffle(&mut seeded(seed, STREAM_SPLIT));
    let mut train_idx = indices[..n_train].to_vec();
    let mut test_idx = indices[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.subset(&train_idx, SplitTag::Train), ds.subset(&test_idx, SplitTag::Test)))
}
