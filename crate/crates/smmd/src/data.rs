//! Dataset ingestion and the vertical federated split.
//!
//! CSV files are parsed against a small schema (label column, categorical
//! columns, columns to drop); categoricals are one-hot expanded and labels
//! normalized to {-1, +1}. The feature space is then divided into two
//! disjoint column sets — the source view (labeled) and the target view
//! (labels held out for evaluation only) — and a co-occurrence subset of
//! sample rows is selected as the linked pairs entering the joint loss.
//!
//! Target-view labels and training features sit behind counting accessors;
//! the harness asserts that the source-only baseline never touched them.

use crate::error::{Error, Result};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Column schema for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub name: String,
    pub label_column: String,
    /// Label value mapped to +1; everything else maps to -1.
    pub positive_label: String,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    #[serde(default)]
    pub drop_columns: Vec<String>,
    /// Skip unparseable rows instead of failing the load.
    #[serde(default)]
    pub skip_bad_rows: bool,
}

impl SchemaConfig {
    /// UCI credit-card default schema: 30,000 rows, 23 raw features after
    /// dropping the ID column.
    pub fn credit() -> Self {
        SchemaConfig {
            name: "credit".into(),
            label_column: "default.payment.next.month".into(),
            positive_label: "1".into(),
            categorical_columns: vec!["SEX".into(), "EDUCATION".into(), "MARRIAGE".into()],
            drop_columns: vec!["ID".into()],
            skip_bad_rows: false,
        }
    }

    /// UCI census-income (adult) schema; "?" is kept as its own category
    /// level.
    pub fn census() -> Self {
        SchemaConfig {
            name: "census".into(),
            label_column: "income".into(),
            positive_label: ">50K".into(),
            categorical_columns: vec![
                "workclass".into(),
                "education".into(),
                "marital-status".into(),
                "occupation".into(),
                "relationship".into(),
                "race".into(),
                "sex".into(),
                "native-country".into(),
            ],
            drop_columns: vec![],
            skip_bad_rows: false,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "credit" => Some(SchemaConfig::credit()),
            "census" => Some(SchemaConfig::census()),
            _ => None,
        }
    }
}

/// A fully numeric dataset: one-hot expanded features and {-1,+1} labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
    pub columns: Vec<String>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }
}

/// Per-column mean/std captured on the training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Loads a CSV with a header row, expanding categoricals to one-hot columns
/// (levels sorted for determinism) and mapping the label column to {-1,+1}.
pub fn load_csv(path: &Path, schema: &SchemaConfig) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::Data(format!("missing file: {}", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();

    let label_idx = headers
        .iter()
        .position(|h| h == &schema.label_column)
        .ok_or_else(|| Error::Data(format!("unknown label column {:?}", schema.label_column)))?;
    for col in schema.categorical_columns.iter().chain(&schema.drop_columns) {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Data(format!("unknown column {col:?} in schema")));
        }
    }
    let dropped: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| schema.drop_columns.contains(h))
        .map(|(i, _)| i)
        .collect();
    let categorical: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| schema.categorical_columns.contains(h))
        .map(|(i, _)| i)
        .collect();

    // First pass: buffer records, collect category levels.
    let mut records: Vec<csv::StringRecord> = Vec::new();
    let mut levels: BTreeMap<usize, Vec<String>> =
        categorical.iter().map(|&i| (i, Vec::new())).collect();
    for (row_no, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            if schema.skip_bad_rows {
                continue;
            }
            return Err(Error::Data(format!(
                "line {}: {} fields, header has {}",
                row_no + 2,
                rec.len(),
                headers.len()
            )));
        }
        for &ci in &categorical {
            let v = rec[ci].to_string();
            let lv = levels.get_mut(&ci).unwrap();
            if !lv.contains(&v) {
                lv.push(v);
            }
        }
        records.push(rec);
    }
    for lv in levels.values_mut() {
        lv.sort();
    }

    // Column layout: numerics in header order, then one-hot blocks.
    let mut columns: Vec<String> = Vec::new();
    let mut numeric_cols: Vec<usize> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i == label_idx || dropped.contains(&i) || categorical.contains(&i) {
            continue;
        }
        numeric_cols.push(i);
        columns.push(h.clone());
    }
    for &ci in &categorical {
        for level in &levels[&ci] {
            columns.push(format!("{}={}", headers[ci], level));
        }
    }

    let width = columns.len();
    let mut rows: Vec<f64> = Vec::with_capacity(records.len() * width);
    let mut labels = Vec::with_capacity(records.len());
    let mut kept = 0usize;
    'rows: for (row_no, rec) in records.iter().enumerate() {
        let mut row = Vec::with_capacity(width);
        for &i in &numeric_cols {
            match rec[i].parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    if schema.skip_bad_rows {
                        continue 'rows;
                    }
                    return Err(Error::Data(format!(
                        "line {}: cannot parse {:?} in column {:?} as a number",
                        row_no + 2,
                        &rec[i],
                        headers[i]
                    )));
                }
            }
        }
        for &ci in &categorical {
            let v = &rec[ci];
            for level in &levels[&ci] {
                row.push(if level == v { 1.0 } else { 0.0 });
            }
        }
        // Census test files write labels with a trailing period.
        let raw_label = rec[label_idx].trim_end_matches('.');
        labels.push(if raw_label == schema.positive_label { 1.0 } else { -1.0 });
        rows.extend(row);
        kept += 1;
    }
    if kept == 0 {
        return Err(Error::Data("no usable rows".into()));
    }
    let features = Array2::from_shape_vec((kept, width), rows)
        .map_err(|e| Error::Data(format!("shape error: {e}")))?;
    Ok(Dataset { features, labels, columns })
}

/// Z-scores each column in place, returning the stats; zero-variance columns
/// map to all zeros.
pub fn normalize(dataset: &Dataset) -> (Dataset, ColumnStats) {
    let n = dataset.n_samples() as f64;
    let mut mean = Vec::with_capacity(dataset.n_features());
    let mut std = Vec::with_capacity(dataset.n_features());
    for col in dataset.features.axis_iter(Axis(1)) {
        let m = col.sum() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean.push(m);
        std.push(var.sqrt());
    }
    let stats = ColumnStats { mean, std };
    (apply_stats(dataset, &stats), stats)
}

/// Applies previously captured stats (train-split stats applied to test).
pub fn apply_stats(dataset: &Dataset, stats: &ColumnStats) -> Dataset {
    let mut features = dataset.features.clone();
    for (j, mut col) in features.axis_iter_mut(Axis(1)).enumerate() {
        let (m, s) = (stats.mean[j], stats.std[j]);
        if s > 0.0 {
            col.mapv_inplace(|v| (v - m) / s);
        } else {
            col.fill(0.0);
        }
    }
    Dataset { features, labels: dataset.labels.clone(), columns: dataset.columns.clone() }
}

/// Counting accessors guarding data that the training path must not touch.
#[derive(Debug, Clone, Default)]
pub struct FirewallCounters {
    target_label_reads: Arc<AtomicUsize>,
    target_feature_reads: Arc<AtomicUsize>,
}

impl FirewallCounters {
    pub fn target_label_reads(&self) -> usize {
        self.target_label_reads.load(Ordering::Relaxed)
    }

    pub fn target_feature_reads(&self) -> usize {
        self.target_feature_reads.load(Ordering::Relaxed)
    }
}

/// One party's view: a disjoint subset of feature columns over the shared
/// sample rows.
#[derive(Debug, Clone)]
pub struct SourceView {
    pub features: Array2<f64>,
    pub labels: Vec<f64>,
    pub columns: Vec<String>,
}

/// The target party's view. Training-path feature access and label access
/// are counted; labels are for evaluation only.
#[derive(Debug, Clone)]
pub struct TargetView {
    features: Array2<f64>,
    labels: Vec<f64>,
    pub columns: Vec<String>,
    counters: FirewallCounters,
}

impl TargetView {
    /// Training-path access to target features (counted).
    pub fn train_features(&self) -> &Array2<f64> {
        self.counters.target_feature_reads.fetch_add(1, Ordering::Relaxed);
        &self.features
    }

    /// Evaluation-only access to the held-out labels (counted).
    pub fn labels_for_eval(&self) -> &[f64] {
        self.counters.target_label_reads.fetch_add(1, Ordering::Relaxed);
        &self.labels
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }
}

/// The vertical split: disjoint source/target column sets over index-aligned
/// rows, plus the co-occurrence subset entering the joint objective.
#[derive(Debug, Clone)]
pub struct FederatedSplit {
    pub source: SourceView,
    pub target: TargetView,
    /// Row positions (valid in both views) of the linked sample pairs.
    pub co_indices: Vec<usize>,
    pub source_columns: Vec<String>,
    pub target_columns: Vec<String>,
    counters: FirewallCounters,
}

impl FederatedSplit {
    pub fn counters(&self) -> &FirewallCounters {
        &self.counters
    }

    pub fn n_samples(&self) -> usize {
        self.source.features.nrows()
    }

    pub fn n_co_occurrence(&self) -> usize {
        self.co_indices.len()
    }

    fn assert_invariants(&self) -> Result<()> {
        for c in &self.source_columns {
            if self.target_columns.contains(c) {
                return Err(Error::Data(format!("column {c:?} appears in both views")));
            }
        }
        let n = self.n_samples();
        if self.target.features.nrows() != n {
            return Err(Error::Data("views disagree on sample count".into()));
        }
        if self.co_indices.iter().any(|&i| i >= n) {
            return Err(Error::Data("co-occurrence index out of range".into()));
        }
        Ok(())
    }
}

/// Splits the feature space into two disjoint column sets (a deterministic
/// shuffle under `seed`) and draws the co-occurrence subset of rows.
pub fn vertical_split(
    dataset: &Dataset,
    source_fraction: f64,
    overlap_fraction: f64,
    seed: u64,
) -> Result<FederatedSplit> {
    if !(0.0 < source_fraction && source_fraction < 1.0) {
        return Err(Error::Config(format!(
            "source_fraction must lie in (0, 1), got {source_fraction}"
        )));
    }
    if !(0.0 < overlap_fraction && overlap_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "overlap_fraction must lie in (0, 1], got {overlap_fraction}"
        )));
    }
    let n_cols = dataset.n_features();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut col_order: Vec<usize> = (0..n_cols).collect();
    col_order.shuffle(&mut rng);
    let n_source = ((n_cols as f64 * source_fraction).round() as usize).clamp(1, n_cols - 1);
    let mut source_cols: Vec<usize> = col_order[..n_source].to_vec();
    let mut target_cols: Vec<usize> = col_order[n_source..].to_vec();
    source_cols.sort_unstable();
    target_cols.sort_unstable();
    if source_cols.is_empty() || target_cols.is_empty() {
        return Err(Error::Config("a view ended up with zero columns".into()));
    }

    let n = dataset.n_samples();
    let mut row_order: Vec<usize> = (0..n).collect();
    row_order.shuffle(&mut rng);
    let n_co = ((n as f64 * overlap_fraction).round() as usize).clamp(1, n);
    let mut co_indices: Vec<usize> = row_order[..n_co].to_vec();
    co_indices.sort_unstable();

    let take = |cols: &[usize]| -> (Array2<f64>, Vec<String>) {
        let mut out = Array2::zeros((n, cols.len()));
        for (jj, &j) in cols.iter().enumerate() {
            out.column_mut(jj).assign(&dataset.features.column(j));
        }
        (out, cols.iter().map(|&j| dataset.columns[j].clone()).collect())
    };
    let (source_features, source_columns) = take(&source_cols);
    let (target_features, target_columns) = take(&target_cols);

    let counters = FirewallCounters::default();
    let split = FederatedSplit {
        source: SourceView {
            features: source_features,
            labels: dataset.labels.clone(),
            columns: source_columns.clone(),
        },
        target: TargetView {
            features: target_features,
            labels: dataset.labels.clone(),
            columns: target_columns.clone(),
            counters: counters.clone(),
        },
        co_indices,
        source_columns,
        target_columns,
        counters,
    };
    split.assert_invariants()?;
    Ok(split)
}

/// Held-out test views with labels reserved for evaluation.
#[derive(Debug, Clone)]
pub struct TestViews {
    pub source_features: Array2<f64>,
    pub target_features: Array2<f64>,
    labels: Vec<f64>,
}

impl TestViews {
    pub fn labels_for_eval(&self) -> &[f64] {
        &self.labels
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }
}

/// Label-stratified sample split of a federated split; co-occurrence indices
/// are restricted to (and re-indexed into) the training rows.
pub fn train_test_split(
    split: &FederatedSplit,
    test_fraction: f64,
    seed: u64,
) -> Result<(FederatedSplit, TestViews)> {
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let labels = &split.source.labels;
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, y) in labels.iter().enumerate() {
        if *y > 0.0 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Data("stratified split needs both classes present".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let take_test = |v: &[usize]| -> usize { (v.len() as f64 * test_fraction).round() as usize };
    let (pt, nt) = (take_test(&pos), take_test(&neg));
    let mut test_ids: Vec<usize> = pos[..pt].iter().chain(neg[..nt].iter()).copied().collect();
    let mut train_ids: Vec<usize> = pos[pt..].iter().chain(neg[nt..].iter()).copied().collect();
    test_ids.sort_unstable();
    train_ids.sort_unstable();
    if train_ids.is_empty() || test_ids.is_empty() {
        return Err(Error::Config("split produced an empty side".into()));
    }

    let select_rows = |m: &Array2<f64>, ids: &[usize]| -> Array2<f64> {
        let mut out = Array2::zeros((ids.len(), m.ncols()));
        for (ii, &i) in ids.iter().enumerate() {
            out.row_mut(ii).assign(&m.row(i));
        }
        out
    };
    let select_labels =
        |ls: &[f64], ids: &[usize]| -> Vec<f64> { ids.iter().map(|&i| ls[i]).collect() };

    // old row id -> new train position
    let mut new_pos = vec![usize::MAX; labels.len()];
    for (ii, &i) in train_ids.iter().enumerate() {
        new_pos[i] = ii;
    }
    let co_indices: Vec<usize> = split
        .co_indices
        .iter()
        .filter(|&&i| new_pos[i] != usize::MAX)
        .map(|&i| new_pos[i])
        .collect();
    if co_indices.is_empty() {
        return Err(Error::Data("no co-occurrence rows left in the training split".into()));
    }

    let counters = FirewallCounters::default();
    let train = FederatedSplit {
        source: SourceView {
            features: select_rows(&split.source.features, &train_ids),
            labels: select_labels(&split.source.labels, &train_ids),
            columns: split.source.columns.clone(),
        },
        target: TargetView {
            features: select_rows(&split.target.features, &train_ids),
            labels: select_labels(&split.target.labels, &train_ids),
            columns: split.target.columns.clone(),
            counters: counters.clone(),
        },
        co_indices,
        source_columns: split.source_columns.clone(),
        target_columns: split.target_columns.clone(),
        counters,
    };
    train.assert_invariants()?;
    let test = TestViews {
        source_features: select_rows(&split.source.features, &test_ids),
        target_features: select_rows(&split.target.features, &test_ids),
        labels: select_labels(labels, &test_ids),
    };
    Ok((train, test))
}

/// Z-scores both views with train-split stats and applies the same stats to
/// the test views. Returns the normalized pair plus the per-view stats.
pub fn normalize_split(
    train: &FederatedSplit,
    test: &TestViews,
) -> (FederatedSplit, TestViews, (ColumnStats, ColumnStats)) {
    let as_dataset = |features: &Array2<f64>, columns: &[String]| Dataset {
        features: features.clone(),
        labels: vec![0.0; features.nrows()],
        columns: columns.to_vec(),
    };
    let (src_norm, src_stats) = normalize(&as_dataset(&train.source.features, &train.source.columns));
    let (tgt_norm, tgt_stats) = normalize(&as_dataset(&train.target.features, &train.target.columns));
    let counters = FirewallCounters::default();
    let norm_train = FederatedSplit {
        source: SourceView {
            features: src_norm.features,
            labels: train.source.labels.clone(),
            columns: train.source.columns.clone(),
        },
        target: TargetView {
            features: tgt_norm.features,
            labels: train.target.labels.clone(),
            columns: train.target.columns.clone(),
            counters: counters.clone(),
        },
        co_indices: train.co_indices.clone(),
        source_columns: train.source_columns.clone(),
        target_columns: train.target_columns.clone(),
        counters,
    };
    let norm_test = TestViews {
        source_features: apply_stats(
            &as_dataset(&test.source_features, &train.source.columns),
            &src_stats,
        )
        .features,
        target_features: apply_stats(
            &as_dataset(&test.target_features, &train.target.columns),
            &tgt_stats,
        )
        .features,
        labels: test.labels.clone(),
    };
    (norm_train, norm_test, (src_stats, tgt_stats))
}

/// Sidecar manifest describing how a cached split was produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub source_fraction: f64,
    pub overlap_fraction: f64,
    pub test_fraction: Option<f64>,
    pub source_columns: Vec<String>,
    pub target_columns: Vec<String>,
    pub n_samples: usize,
    pub n_co_occurrence: usize,
}

impl SplitManifest {
    pub fn describe(
        split: &FederatedSplit,
        seed: u64,
        source_fraction: f64,
        overlap_fraction: f64,
        test_fraction: Option<f64>,
    ) -> Self {
        SplitManifest {
            seed,
            source_fraction,
            overlap_fraction,
            test_fraction,
            source_columns: split.source_columns.clone(),
            target_columns: split.target_columns.clone(),
            n_samples: split.n_samples(),
            n_co_occurrence: split.n_co_occurrence(),
        }
    }
}

/// Writes a view back out in the same CSV dialect (header row + rows).
pub fn write_view_csv(path: &Path, columns: &[String], features: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(columns)?;
    for row in features.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Two shifted Gaussian classes over `dim` features; every feature carries
/// signal so both vertical views stay informative. The demo/test stand-in
/// when no real CSV is supplied.
pub fn synthetic_two_gaussians(n: usize, dim: usize, shift: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut rows = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        labels.push(y);
        for j in 0..dim {
            let z: f64 = rng.sample(normal);
            // alternate the signal direction per coordinate
            let mu = shift * y * if j % 2 == 0 { 1.0 } else { -1.0 };
            rows.push(mu + z);
        }
    }
    Dataset {
        features: Array2::from_shape_vec((n, dim), rows).expect("shape"),
        labels,
        columns: (0..dim).map(|j| format!("f{j}")).collect(),
    }
}

/// Credit-like synthetic stand-in: 23 features with mixed signal strength
/// and a ~22% positive rate, used when the real UCI file is not on disk.
pub fn synthetic_credit_like(n: usize, seed: u64) -> Dataset {
    let dim = 23;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    // fixed signal profile: some strong, some weak, some dead columns
    let signal: Vec<f64> = (0..dim)
        .map(|j| match j % 5 {
            0 => 0.9,
            1 => 0.6,
            2 => 0.4,
            3 => 0.2,
            _ => 0.0,
        })
        .collect();
    let mut rows = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = if rng.random::<f64>() < 0.22 { 1.0 } else { -1.0 };
        labels.push(y);
        for s in &signal {
            let z: f64 = rng.sample(normal);
            rows.push(s * y + z);
        }
    }
    Dataset {
        features: Array2::from_shape_vec((n, dim), rows).expect("shape"),
        labels,
        columns: (0..dim).map(|j| format!("x{j}")).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn one_hot_expansion_widths() {
        let f = write_tmp("a,cat,label\n1.0,x,1\n2.0,y,0\n3.0,x,1\n");
        let schema = SchemaConfig {
            name: "toy".into(),
            label_column: "label".into(),
            positive_label: "1".into(),
            categorical_columns: vec!["cat".into()],
            drop_columns: vec![],
            skip_bad_rows: false,
        };
        let ds = load_csv(f.path(), &schema).unwrap();
        // 1 numeric + 2 one-hot levels
        assert_eq!(ds.n_features(), 3);
        assert_eq!(ds.columns, vec!["a", "cat=x", "cat=y"]);
        assert_eq!(ds.labels, vec![1.0, -1.0, 1.0]);
        assert_eq!(ds.features.row(1).to_vec(), vec![2.0, 0.0, 1.0]);
    }

    #[test]
    fn all_positive_labels_map_to_plus_one() {
        let f = write_tmp("a,label\n1.0,1\n2.0,1\n");
        let schema = SchemaConfig {
            name: "toy".into(),
            label_column: "label".into(),
            positive_label: "1".into(),
            categorical_columns: vec![],
            drop_columns: vec![],
            skip_bad_rows: false,
        };
        let ds = load_csv(f.path(), &schema).unwrap();
        assert!(ds.labels.iter().all(|y| *y == 1.0));
    }

    #[test]
    fn bad_rows_error_with_line_number_or_skip() {
        let content = "a,label\n1.0,1\nnot_a_number,0\n3.0,1\n";
        let f = write_tmp(content);
        let mut schema = SchemaConfig {
            name: "toy".into(),
            label_column: "label".into(),
            positive_label: "1".into(),
            categorical_columns: vec![],
            drop_columns: vec![],
            skip_bad_rows: false,
        };
        let err = load_csv(f.path(), &schema).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        schema.skip_bad_rows = true;
        let ds = load_csv(f.path(), &schema).unwrap();
        assert_eq!(ds.n_samples(), 2);
    }

    #[test]
    fn missing_file_and_unknown_columns_error() {
        assert!(load_csv(Path::new("/nonexistent.csv"), &SchemaConfig::credit()).is_err());
        let f = write_tmp("a,label\n1.0,1\n");
        let schema = SchemaConfig {
            name: "toy".into(),
            label_column: "nope".into(),
            positive_label: "1".into(),
            categorical_columns: vec![],
            drop_columns: vec![],
            skip_bad_rows: false,
        };
        assert!(load_csv(f.path(), &schema).is_err());
    }

    #[test]
    fn normalization_zero_means_and_constant_columns() {
        let ds = synthetic_two_gaussians(500, 6, 0.8, 3);
        let (normed, stats) = normalize(&ds);
        for col in normed.features.axis_iter(Axis(1)) {
            let m = col.sum() / 500.0;
            assert!(m.abs() < 1e-9, "column mean {m}");
        }
        // already-standardized column is unchanged
        let again = apply_stats(&normed, &ColumnStats {
            mean: vec![0.0; 6],
            std: vec![1.0; 6],
        });
        let diff = (&again.features - &normed.features).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
        assert_eq!(stats.mean.len(), 6);

        // constant column maps to zeros
        let mut ds2 = ds.clone();
        ds2.features.column_mut(0).fill(7.0);
        let (n2, _) = normalize(&ds2);
        assert!(n2.features.column(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn vertical_split_is_disjoint_and_deterministic() {
        let ds = synthetic_two_gaussians(100, 10, 0.5, 1);
        let a = vertical_split(&ds, 0.5, 0.6, 9).unwrap();
        let b = vertical_split(&ds, 0.5, 0.6, 9).unwrap();
        assert_eq!(a.source_columns, b.source_columns);
        assert_eq!(a.co_indices, b.co_indices);
        assert_eq!(a.source_columns.len(), 5);
        assert_eq!(a.target_columns.len(), 5);
        for c in &a.source_columns {
            assert!(!a.target_columns.contains(c));
        }
        assert_eq!(a.n_co_occurrence(), 60);

        let c = vertical_split(&ds, 0.5, 0.6, 10).unwrap();
        assert_ne!(a.co_indices, c.co_indices);

        // overlap 1.0 links every row
        let full = vertical_split(&ds, 0.3, 1.0, 2).unwrap();
        assert_eq!(full.n_co_occurrence(), 100);
    }

    #[test]
    fn vertical_split_rejects_bad_fractions() {
        let ds = synthetic_two_gaussians(10, 4, 0.5, 1);
        assert!(vertical_split(&ds, 0.0, 0.5, 1).is_err());
        assert!(vertical_split(&ds, 1.0, 0.5, 1).is_err());
        assert!(vertical_split(&ds, 0.5, 0.0, 1).is_err());
    }

    #[test]
    fn train_test_split_is_stratified_and_disjoint() {
        let ds = synthetic_two_gaussians(1000, 6, 0.5, 4);
        let split = vertical_split(&ds, 0.5, 0.5, 5).unwrap();
        let (train, test) = train_test_split(&split, 0.2, 6).unwrap();
        assert_eq!(train.n_samples() + test.n_samples(), 1000);
        assert!((test.n_samples() as i64 - 200).abs() <= 1);

        let ratio = |ls: &[f64]| ls.iter().filter(|y| **y > 0.0).count() as f64 / ls.len() as f64;
        let r_train = ratio(&train.source.labels);
        let r_test = ratio(test.labels_for_eval());
        assert!((r_train - r_test).abs() < 0.01, "train {r_train} test {r_test}");

        // co-occurrence indices are valid positions in the train views
        assert!(train.co_indices.iter().all(|&i| i < train.n_samples()));

        // single-class data fails stratification
        let mut one_class = ds.clone();
        one_class.labels.iter_mut().for_each(|y| *y = 1.0);
        let s = vertical_split(&one_class, 0.5, 0.5, 5).unwrap();
        assert!(train_test_split(&s, 0.2, 6).is_err());
    }

    #[test]
    fn firewall_counters_track_guarded_access() {
        let ds = synthetic_two_gaussians(50, 4, 0.5, 7);
        let split = vertical_split(&ds, 0.5, 0.5, 8).unwrap();
        assert_eq!(split.counters().target_feature_reads(), 0);
        assert_eq!(split.counters().target_label_reads(), 0);
        let _ = split.target.train_features();
        let _ = split.target.labels_for_eval();
        assert_eq!(split.counters().target_feature_reads(), 1);
        assert_eq!(split.counters().target_label_reads(), 1);
    }

    #[test]
    fn synthetic_generators_are_deterministic() {
        let a = synthetic_credit_like(100, 1);
        let b = synthetic_credit_like(100, 1);
        assert_eq!(a.features, b.features);
        assert_eq!(a.n_features(), 23);
        let pos = a.labels.iter().filter(|y| **y > 0.0).count();
        assert!(pos > 5 && pos < 50, "positive count {pos}");
    }
}
