//! Market data ingestion and preparation: CSV loading, fixed-horizon
//! labeling, chronological splits, class balancing, and the seeded
//! synthetic workloads used throughout the test suite.
//!
//! Storage is columnar (one `Array2` of features plus parallel vectors for
//! timestamps, prices, and labels); [`FeatureRecord`] is the row-level view
//! used for construction and inspection.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// One observation: a timestamp (epoch milliseconds), the last trade price,
/// and a precomputed feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub timestamp: i64,
    pub price: f64,
    pub features: Vec<f64>,
}

/// Direction of the labeling rule applied to the forward return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Label 1 when the return exceeds the threshold.
    Long,
    /// Label 1 when the return falls below the negated threshold.
    Short,
    /// Label 1 when the absolute return exceeds the threshold.
    Magnitude,
}

/// Fixed-horizon labeling rule: compare the `horizon_steps`-ahead return
/// against `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelSpec {
    pub mode: LabelMode,
    pub horizon_steps: usize,
    pub threshold: f64,
}

impl LabelSpec {
    fn validate(&self) -> Result<()> {
        if self.horizon_steps < 1 {
            return Err(Error::param("horizon_steps", "must be at least 1"));
        }
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::param("threshold", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Timestamp boundaries for a train / validation / test split. Records with
/// timestamp exactly on a boundary go to the earlier partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_end: i64,
    pub valid_end: i64,
}

/// Result of a chronological split. Empty partitions are legal; each one is
/// reported in `warnings` rather than treated as an error.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub warnings: Vec<String>,
}

/// A time-ordered feature matrix with prices and optional binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    timestamps: Vec<i64>,
    prices: Vec<f64>,
    features: Array2<f64>,
    labels: Option<Vec<u8>>,
}

impl Dataset {
    /// Builds a dataset from parallel columns, validating every invariant:
    /// matching lengths, non-decreasing timestamps, positive finite prices,
    /// finite features, and binary labels.
    pub fn from_parts(
        timestamps: Vec<i64>,
        prices: Vec<f64>,
        features: Array2<f64>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if prices.len() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: prices.len(),
            });
        }
        if features.nrows() != n {
            return Err(Error::LengthMismatch {
                left: n,
                right: features.nrows(),
            });
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: labels.len(),
                });
            }
            if labels.iter().any(|&l| l > 1) {
                return Err(Error::param("labels", "labels must be 0 or 1"));
            }
        }
        for row in 1..n {
            if timestamps[row] < timestamps[row - 1] {
                return Err(Error::TimestampOrder { row });
            }
        }
        for (row, &p) in prices.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFiniteValue {
                    row,
                    column: "price".into(),
                });
            }
            if p <= 0.0 {
                return Err(Error::NonPositivePrice { row, value: p });
            }
        }
        for ((row, col), &v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    row,
                    column: format!("f{col}"),
                });
            }
        }
        Ok(Dataset {
            timestamps,
            prices,
            features,
            labels,
        })
    }

    /// Builds a dataset from row records, all of which must share one
    /// feature dimension.
    pub fn from_records(records: Vec<FeatureRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput { context: "dataset records" });
        }
        let dim = records[0].features.len();
        let mut timestamps = Vec::with_capacity(records.len());
        let mut prices = Vec::with_capacity(records.len());
        let mut flat = Vec::with_capacity(records.len() * dim);
        for rec in &records {
            if rec.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: rec.features.len(),
                });
            }
            timestamps.push(rec.timestamp);
            prices.push(rec.price);
            flat.extend_from_slice(&rec.features);
        }
        let features = Array2::from_shape_vec((records.len(), dim), flat)
            .expect("shape follows from construction");
        Self::from_parts(timestamps, prices, features, None)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Labels, or an error when the dataset has not been labeled yet.
    pub fn label_slice(&self) -> Result<&[u8]> {
        self.labels.as_deref().ok_or(Error::Unlabeled)
    }

    pub fn record(&self, index: usize) -> FeatureRecord {
        FeatureRecord {
            timestamp: self.timestamps[index],
            price: self.prices[index],
            features: self.features.row(index).to_vec(),
        }
    }

    /// Returns a copy with the given labels attached.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        Self::from_parts(
            self.timestamps.clone(),
            self.prices.clone(),
            self.features.clone(),
            Some(labels),
        )
    }

    /// Row subset in the given index order. Indices must be in range.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let timestamps = indices.iter().map(|&i| self.timestamps[i]).collect();
        let prices = indices.iter().map(|&i| self.prices[i]).collect();
        let features = self.features.select(ndarray::Axis(0), indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Dataset {
            timestamps,
            prices,
            features,
            labels,
        }
    }

    fn slice_rows(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            timestamps: self.timestamps[range.clone()].to_vec(),
            prices: self.prices[range.clone()].to_vec(),
            features: self
                .features
                .slice(ndarray::s![range.clone(), ..])
                .to_owned(),
            labels: self.labels.as_ref().map(|l| l[range].to_vec()),
        }
    }

    /// Positive-label fraction; `None` when unlabeled or empty.
    pub fn positive_ratio(&self) -> Option<f64> {
        let labels = self.labels.as_deref()?;
        if labels.is_empty() {
            return None;
        }
        let pos = labels.iter().filter(|&&l| l == 1).count();
        Some(pos as f64 / labels.len() as f64)
    }
}

fn expected_header(dim: usize, with_label: bool) -> Vec<String> {
    let mut cols = Vec::with_capacity(dim + 3);
    cols.push("timestamp".to_string());
    cols.push("price".to_string());
    for f in 0..dim {
        cols.push(format!("f{f}"));
    }
    if with_label {
        cols.push("label".to_string());
    }
    cols
}

/// Loads a dataset from CSV with header `timestamp,price,f0,...,f{dim-1}`
/// and an optional trailing `label` column (written by [`write_csv`] for
/// labeled data). Row numbers in errors are 1-based data rows.
pub fn load_csv(path: impl AsRef<Path>, dim: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(format!("open `{}`", path.display()), io),
            other => Error::numeric(format!("csv reader: {other:?}")),
        })?;
    let path_str = path.display().to_string();

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::numeric(format!("csv header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let plain = expected_header(dim, false);
    let labeled = expected_header(dim, true);
    let has_label = if header == plain {
        false
    } else if header == labeled {
        true
    } else {
        // Report the first missing expected column; otherwise the first
        // column we did not ask for.
        if let Some(missing) = plain.iter().find(|c| !header.contains(c)) {
            return Err(Error::MissingColumn {
                path: path_str,
                column: missing.clone(),
            });
        }
        let unexpected = header
            .iter()
            .find(|c| !labeled.contains(c))
            .cloned()
            .unwrap_or_else(|| "<column order>".to_string());
        return Err(Error::UnexpectedColumn {
            path: path_str,
            column: unexpected,
        });
    };
    let columns = if has_label { &labeled } else { &plain };

    let mut timestamps = Vec::new();
    let mut prices = Vec::new();
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(format!("read `{path_str}`"), io),
            other => Error::numeric(format!("csv row {row}: {other:?}")),
        })?;
        if record.len() != columns.len() {
            return Err(Error::ParseCell {
                row,
                column: "<row width>".into(),
                value: format!("{} fields", record.len()),
            });
        }
        let cell = |col: usize| -> &str { record.get(col).unwrap_or("").trim() };
        let parse_f64 = |col: usize| -> Result<f64> {
            cell(col).parse::<f64>().map_err(|_| Error::ParseCell {
                row,
                column: columns[col].clone(),
                value: cell(col).to_string(),
            })
        };

        let ts: i64 = cell(0).parse().map_err(|_| Error::ParseCell {
            row,
            column: "timestamp".into(),
            value: cell(0).to_string(),
        })?;
        if let Some(&prev) = timestamps.last() {
            if ts < prev {
                return Err(Error::TimestampOrder { row });
            }
        }
        timestamps.push(ts);

        let price = parse_f64(1)?;
        if !price.is_finite() {
            return Err(Error::NonFiniteValue {
                row,
                column: "price".into(),
            });
        }
        if price <= 0.0 {
            return Err(Error::NonPositivePrice { row, value: price });
        }
        prices.push(price);

        for f in 0..dim {
            let v = parse_f64(2 + f)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    row,
                    column: format!("f{f}"),
                });
            }
            flat.push(v);
        }
        if has_label {
            let raw = cell(2 + dim);
            match raw {
                "0" => labels.push(0),
                "1" => labels.push(1),
                _ => {
                    return Err(Error::ParseCell {
                        row,
                        column: "label".into(),
                        value: raw.to_string(),
                    })
                }
            }
        }
    }

    let n = timestamps.len();
    let features = Array2::from_shape_vec((n, dim), flat).expect("shape follows from parsing");
    Dataset::from_parts(
        timestamps,
        prices,
        features,
        if has_label { Some(labels) } else { None },
    )
}

/// Writes a dataset as CSV (the inverse of [`load_csv`]); a `label` column
/// is appended when labels are present. Floats use the shortest
/// round-trippable decimal form.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(format!("create `{}`", path.display()), io),
            other => Error::numeric(format!("csv writer: {other:?}")),
        })?;
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(format!("write `{}`", path.display()), io),
        other => Error::numeric(format!("csv write: {other:?}")),
    };

    let header = expected_header(ds.dim(), ds.labels().is_some());
    writer.write_record(&header).map_err(io_err)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..ds.len() {
        record.clear();
        record.push(ds.timestamps[i].to_string());
        record.push(ds.prices[i].to_string());
        for &v in ds.features.row(i) {
            record.push(v.to_string());
        }
        if let Some(labels) = &ds.labels {
            record.push(labels[i].to_string());
        }
        writer.write_record(&record).map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::io(format!("flush `{}`", path.display()), e))
}

/// Applies the fixed-horizon labeling rule: the forward return
/// `r_t = price[t+Δ]/price[t] − 1` is compared against the threshold
/// under the requested mode. The trailing Δ records have no defined label
/// and are dropped from the result.
pub fn generate_labels(ds: &Dataset, spec: &LabelSpec) -> Result<Dataset> {
    spec.validate()?;
    let delta = spec.horizon_steps;
    if ds.len() < delta + 1 {
        return Err(Error::InsufficientData {
            needed: delta + 1,
            got: ds.len(),
        });
    }
    let kept = ds.len() - delta;
    let mut labels = Vec::with_capacity(kept);
    for t in 0..kept {
        let r = ds.prices[t + delta] / ds.prices[t] - 1.0;
        let hit = match spec.mode {
            LabelMode::Magnitude => r.abs() > spec.threshold,
            LabelMode::Long => r > spec.threshold,
            LabelMode::Short => r < -spec.threshold,
        };
        labels.push(u8::from(hit));
    }
    let head = ds.slice_rows(0..kept);
    head.with_labels(labels)
}

/// Splits by timestamp into train (≤ train_end), validation (≤ valid_end),
/// and test (the rest). Empty partitions produce warnings, not errors.
pub fn chronological_split(ds: &Dataset, spec: &SplitSpec) -> Result<SplitOutcome> {
    if spec.train_end >= spec.valid_end {
        return Err(Error::param(
            "valid_end",
            format!("must exceed train_end ({} >= {})", spec.train_end, spec.valid_end),
        ));
    }
    let train_len = ds.timestamps.partition_point(|&t| t <= spec.train_end);
    let valid_len = ds.timestamps.partition_point(|&t| t <= spec.valid_end) - train_len;
    let train = ds.slice_rows(0..train_len);
    let valid = ds.slice_rows(train_len..train_len + valid_len);
    let test = ds.slice_rows(train_len + valid_len..ds.len());
    let mut warnings = Vec::new();
    for (name, part) in [("train", &train), ("valid", &valid), ("test", &test)] {
        if part.is_empty() {
            warnings.push(format!("{name} partition is empty"));
        }
    }
    Ok(SplitOutcome {
        train,
        valid,
        test,
        warnings,
    })
}

/// Downsamples each class without replacement to the minority-class count.
/// Survivors keep their chronological order; the subsample is deterministic
/// for a fixed seed.
pub fn balance_classes(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let labels = ds.label_slice()?;
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if pos.is_empty() {
        return Err(Error::ClassMissing { class: 1 });
    }
    if neg.is_empty() {
        return Err(Error::ClassMissing { class: 0 });
    }
    let keep = pos.len().min(neg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::with_capacity(2 * keep);
    for class in [&pos, &neg] {
        if class.len() == keep {
            kept.extend_from_slice(class);
        } else {
            let chosen = rand::seq::index::sample(&mut rng, class.len(), keep);
            kept.extend(chosen.iter().map(|i| class[i]));
        }
    }
    kept.sort_unstable();
    Ok(ds.subset(&kept))
}

/// Two-class isotropic Gaussian workload: class 1 from
/// `N(mean_pos, cov_scale·I₂)`, class 0 from `N(mean_neg, cov_scale·I₂)`,
/// interleaved 1,0,1,0,… with synthetic timestamps 0..N−1 and prices fixed
/// at 1.0.
pub fn synth_gaussian(
    n_per_class: usize,
    mean_pos: [f64; 2],
    mean_neg: [f64; 2],
    cov_scale: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class < 1 {
        return Err(Error::param("n_per_class", "must be at least 1"));
    }
    if !(cov_scale > 0.0) || !cov_scale.is_finite() {
        return Err(Error::param("cov_scale", "must be positive and finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal is valid");
    let sigma = cov_scale.sqrt();
    let n = 2 * n_per_class;
    let mut flat = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_per_class {
        for (mean, label) in [(mean_pos, 1u8), (mean_neg, 0u8)] {
            flat.push(mean[0] + sigma * std.sample(&mut rng));
            flat.push(mean[1] + sigma * std.sample(&mut rng));
            labels.push(label);
        }
    }
    let features = Array2::from_shape_vec((n, 2), flat).expect("shape follows from construction");
    Dataset::from_parts(
        (0..n as i64).collect(),
        vec![1.0; n],
        features,
        Some(labels),
    )
}

/// Dimensionality of the correlated workload from [`synth_correlated`].
pub const CORRELATED_DIM: usize = 6;

/// Two-class workload with a minority positive class, two informative
/// dimensions, and four correlated high-variance noise dimensions.
///
/// Dims 0–1 are unit-variance Gaussians whose mean separates the classes;
/// dims 2–5 share a latent factor (`noise ≈ scale·(0.8·z + 0.6·w_j)`) and
/// carry no class information, so a plain Euclidean neighborhood is
/// dominated by noise while a metric that downweights dims 2–5 recovers
/// class-coherent neighborhoods. Positives are spread evenly through the
/// sequence; timestamps are 0..n−1 and prices fixed at 1.0.
pub fn synth_correlated(n: usize, positive_ratio: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::param("n", "must be at least 2"));
    }
    if !(positive_ratio > 0.0 && positive_ratio < 1.0) {
        return Err(Error::param("positive_ratio", "must lie strictly in (0,1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal is valid");
    // Class separation on the informative dims and the noise magnitude are
    // balanced so that Euclidean neighborhoods retain a little class signal
    // and metric-shaped neighborhoods retain a lot.
    const SEPARATION: f64 = 2.2;
    const NOISE_SCALE: f64 = 5.0;
    let mut flat = Vec::with_capacity(n * CORRELATED_DIM);
    let mut labels = Vec::with_capacity(n);
    let mut positives = 0usize;
    for i in 0..n {
        // Evenly spread positives: label 1 whenever the cumulative target
        // count advances past another integer.
        let quota_next = ((i + 1) as f64 * positive_ratio).floor() as usize;
        let label = u8::from(quota_next > positives);
        positives += usize::from(label == 1);
        let mean = if label == 1 { SEPARATION } else { 0.0 };
        flat.push(mean + std.sample(&mut rng));
        flat.push(mean + std.sample(&mut rng));
        let z: f64 = std.sample(&mut rng);
        for _ in 2..CORRELATED_DIM {
            let w: f64 = std.sample(&mut rng);
            flat.push(NOISE_SCALE * (0.8 * z + 0.6 * w));
        }
        labels.push(label);
    }
    if positives == 0 || positives == n {
        return Err(Error::param(
            "positive_ratio",
            "too extreme for n: one class is empty",
        ));
    }
    let features =
        Array2::from_shape_vec((n, CORRELATED_DIM), flat).expect("shape follows from construction");
    Dataset::from_parts(
        (0..n as i64).collect(),
        vec![1.0; n],
        features,
        Some(labels),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy_dataset(prices: &[f64]) -> Dataset {
        let n = prices.len();
        let features = Array2::zeros((n, 1));
        Dataset::from_parts((0..n as i64).collect(), prices.to_vec(), features, None).unwrap()
    }

    #[test]
    fn from_parts_rejects_decreasing_timestamps() {
        let features = Array2::zeros((2, 1));
        let err = Dataset::from_parts(vec![5, 4], vec![1.0, 1.0], features, None).unwrap_err();
        assert!(matches!(err, Error::TimestampOrder { row: 1 }));
    }

    #[test]
    fn load_csv_parses_two_rows() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "timestamp,price,f0,f1").unwrap();
        writeln!(file, "1,100.0,0.5,-1.5").unwrap();
        writeln!(file, "2,101.0,0.25,2.0").unwrap();
        let ds = load_csv(file.path(), 2).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.record(1).features, vec![0.25, 2.0]);
        assert!(ds.labels().is_none());
    }

    #[test]
    fn load_csv_missing_price_column_is_schema_error() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "timestamp,f0,f1").unwrap();
        writeln!(file, "1,0.5,-1.5").unwrap();
        let err = load_csv(file.path(), 2).unwrap_err();
        match err {
            Error::MissingColumn { column, .. } => assert_eq!(column, "price"),
            other => panic!("expected missing column, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_reports_bad_cell_with_row() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "timestamp,price,f0").unwrap();
        writeln!(file, "1,100.0,0.5").unwrap();
        writeln!(file, "2,100.0,abc").unwrap();
        let err = load_csv(file.path(), 1).unwrap_err();
        match err {
            Error::ParseCell { row, column, value } => {
                assert_eq!(row, 2);
                assert_eq!(column, "f0");
                assert_eq!(value, "abc");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_decreasing_timestamp_is_order_error() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "timestamp,price,f0").unwrap();
        writeln!(file, "5,100.0,0.5").unwrap();
        writeln!(file, "4,100.0,0.5").unwrap();
        let err = load_csv(file.path(), 1).unwrap_err();
        assert!(matches!(err, Error::TimestampOrder { row: 2 }));
    }

    #[test]
    fn load_csv_accepts_forty_feature_schema() {
        let dim = 40;
        let mut file = tempfile::NamedTempFile::new().unwrap();
        let header = expected_header(dim, false).join(",");
        writeln!(file, "{header}").unwrap();
        let row: Vec<String> = (0..dim).map(|f| (f as f64 * 0.1).to_string()).collect();
        writeln!(file, "1,100.0,{}", row.join(",")).unwrap();
        let ds = load_csv(file.path(), dim).unwrap();
        assert_eq!(ds.dim(), 40);
    }

    #[test]
    fn csv_round_trip_preserves_values_and_labels() {
        let ds = synth_gaussian(5, [-2.0, 2.0], [2.0, -2.0], 8.0, 3).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, file.path()).unwrap();
        let back = load_csv(file.path(), 2).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn magnitude_label_fires_above_threshold() {
        let ds = toy_dataset(&[100.0, 100.2]);
        let spec = LabelSpec {
            mode: LabelMode::Magnitude,
            horizon_steps: 1,
            threshold: 0.001,
        };
        let labeled = generate_labels(&ds, &spec).unwrap();
        assert_eq!(labeled.len(), 1);
        assert_eq!(labeled.labels(), Some(&[1u8][..]));
    }

    #[test]
    fn long_label_ignores_down_move() {
        let ds = toy_dataset(&[100.0, 99.8]);
        let spec = LabelSpec {
            mode: LabelMode::Long,
            horizon_steps: 1,
            threshold: 0.001,
        };
        let labeled = generate_labels(&ds, &spec).unwrap();
        assert_eq!(labeled.labels(), Some(&[0u8][..]));
        let spec = LabelSpec {
            mode: LabelMode::Short,
            ..spec
        };
        let labeled = generate_labels(&ds, &spec).unwrap();
        assert_eq!(labeled.labels(), Some(&[1u8][..]));
    }

    #[test]
    fn generate_labels_needs_horizon_plus_one_records() {
        let ds = toy_dataset(&[100.0, 101.0]);
        let spec = LabelSpec {
            mode: LabelMode::Magnitude,
            horizon_steps: 2,
            threshold: 0.001,
        };
        let err = generate_labels(&ds, &spec).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { needed: 3, got: 2 }));
    }

    #[test]
    fn labels_invariant_under_price_scaling() {
        let prices: Vec<f64> = (0..50)
            .map(|i| 100.0 * (1.0 + 0.01 * ((i * 37 % 11) as f64 - 5.0) / 5.0))
            .collect();
        let spec = LabelSpec {
            mode: LabelMode::Magnitude,
            horizon_steps: 3,
            threshold: 0.004,
        };
        let base = generate_labels(&toy_dataset(&prices), &spec).unwrap();
        for scale in [0.5, 3.0, 1e6] {
            let scaled: Vec<f64> = prices.iter().map(|p| p * scale).collect();
            let relabeled = generate_labels(&toy_dataset(&scaled), &spec).unwrap();
            assert_eq!(base.labels(), relabeled.labels(), "scale {scale}");
        }
    }

    #[test]
    fn split_counts_and_order_preserved() {
        let ds = toy_dataset(&[1.0; 10]);
        let out = chronological_split(
            &ds,
            &SplitSpec {
                train_end: 5,
                valid_end: 7,
            },
        )
        .unwrap();
        assert_eq!(
            (out.train.len(), out.valid.len(), out.test.len()),
            (6, 2, 2)
        );
        assert!(out.warnings.is_empty());
        let mut all: Vec<i64> = out.train.timestamps().to_vec();
        all.extend_from_slice(out.valid.timestamps());
        all.extend_from_slice(out.test.timestamps());
        assert_eq!(all, ds.timestamps());
    }

    #[test]
    fn split_before_all_timestamps_warns() {
        let ds = toy_dataset(&[1.0; 10]);
        let out = chronological_split(
            &ds,
            &SplitSpec {
                train_end: -10,
                valid_end: -5,
            },
        )
        .unwrap();
        assert_eq!(
            (out.train.len(), out.valid.len(), out.test.len()),
            (0, 0, 10)
        );
        assert_eq!(out.warnings.len(), 2);
    }

    #[test]
    fn split_matches_etf_style_boundaries() {
        // Daily records spanning 2020-01-02 .. 2020-07-06 with the period
        // boundaries 2020-04-17 and 2020-05-29 expressed in epoch ms.
        let day = 86_400_000i64;
        let start = 1_577_923_200_000i64; // 2020-01-02
        let n = 187; // through 2020-07-06
        let features = Array2::zeros((n, 1));
        let ds = Dataset::from_parts(
            (0..n as i64).map(|i| start + i * day).collect(),
            vec![1.0; n],
            features,
            None,
        )
        .unwrap();
        let out = chronological_split(
            &ds,
            &SplitSpec {
                train_end: 1_587_081_600_000,  // 2020-04-17
                valid_end: 1_590_710_400_000,  // 2020-05-29
            },
        )
        .unwrap();
        assert!(out.train.len() > 0 && out.valid.len() > 0 && out.test.len() > 0);
        assert!(out.warnings.is_empty());
        assert_eq!(out.train.len() + out.valid.len() + out.test.len(), n);
    }

    #[test]
    fn balance_downsamples_majority_only() {
        let n = 1000;
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 10 < 3)).collect();
        let ds = toy_dataset(&vec![1.0; n]).with_labels(labels).unwrap();
        let balanced = balance_classes(&ds, 11).unwrap();
        let kept = balanced.labels().unwrap();
        let pos = kept.iter().filter(|&&l| l == 1).count();
        assert_eq!(pos, 300);
        assert_eq!(kept.len(), 600);
        // Survivors keep chronological order.
        let ts = balanced.timestamps();
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn balance_is_identity_on_balanced_input() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let ds = toy_dataset(&vec![1.0; 100]).with_labels(labels).unwrap();
        let balanced = balance_classes(&ds, 5).unwrap();
        assert_eq!(&balanced, &ds);
    }

    #[test]
    fn balance_differs_across_seeds_but_not_sizes() {
        let labels: Vec<u8> = (0..1000).map(|i| u8::from(i < 300)).collect();
        let ds = toy_dataset(&vec![1.0; 1000]).with_labels(labels).unwrap();
        let a = balance_classes(&ds, 1).unwrap();
        let b = balance_classes(&ds, 2).unwrap();
        assert_eq!(a.len(), b.len());
        assert_ne!(a.timestamps(), b.timestamps());
    }

    #[test]
    fn balance_requires_both_classes() {
        let ds = toy_dataset(&[1.0, 1.0]).with_labels(vec![1, 1]).unwrap();
        let err = balance_classes(&ds, 0).unwrap_err();
        assert!(matches!(err, Error::ClassMissing { class: 0 }));
    }

    #[test]
    fn synth_gaussian_shapes_and_labels() {
        let ds = synth_gaussian(400, [-2.0, 2.0], [2.0, -2.0], 8.0, 7).unwrap();
        assert_eq!(ds.len(), 800);
        assert_eq!(ds.positive_ratio(), Some(0.5));
        assert!(ds.prices().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn synth_gaussian_single_pair() {
        let ds = synth_gaussian(1, [-2.0, 2.0], [2.0, -2.0], 8.0, 7).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels(), Some(&[1u8, 0u8][..]));
    }

    #[test]
    fn synth_gaussian_reproducible_and_seed_sensitive() {
        let a = synth_gaussian(50, [-2.0, 2.0], [2.0, -2.0], 8.0, 9).unwrap();
        let b = synth_gaussian(50, [-2.0, 2.0], [2.0, -2.0], 8.0, 9).unwrap();
        assert_eq!(a, b);
        let c = synth_gaussian(50, [-2.0, 2.0], [2.0, -2.0], 8.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_gaussian_class_mean_converges() {
        let n = 10_000;
        let cov_scale = 8.0;
        let ds = synth_gaussian(n, [-2.0, 2.0], [2.0, -2.0], cov_scale, 21).unwrap();
        let labels = ds.labels().unwrap();
        let mut sum = [0.0f64; 2];
        let mut count = 0usize;
        for i in 0..ds.len() {
            if labels[i] == 1 {
                sum[0] += ds.features()[[i, 0]];
                sum[1] += ds.features()[[i, 1]];
                count += 1;
            }
        }
        let bound = 4.0 * (cov_scale / n as f64).sqrt();
        assert!((sum[0] / count as f64 - -2.0).abs() < bound);
        assert!((sum[1] / count as f64 - 2.0).abs() < bound);
    }

    #[test]
    fn synth_correlated_ratio_and_determinism() {
        let ds = synth_correlated(1000, 0.2, 3).unwrap();
        assert_eq!(ds.dim(), CORRELATED_DIM);
        assert_eq!(ds.positive_ratio(), Some(0.2));
        let again = synth_correlated(1000, 0.2, 3).unwrap();
        assert_eq!(ds, again);
    }
}
