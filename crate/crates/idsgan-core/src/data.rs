//! Dataset ingestion and preprocessing: CSV loading, dedupe, label encoding,
//! min-max scaling, stratified splitting, label taxonomies, variance-based
//! feature selection, and synthetic augmentation.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class names for the 5-way KDD task, in label-index order.
pub const KDD_CLASS_NAMES: [&str; 5] = ["normal", "dos", "u2r", "probe", "r2l"];

/// Class names for the binarized CICIDS task.
pub const CICIDS_CLASS_NAMES: [&str; 2] = ["benign", "attack"];

static KDD_ATTACK_MAP: &str = include_str!("../assets/kdd_attack_categories.txt");

/// A parsed delimited-text table: header names plus string cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }
}

/// Read a comma-delimited file. Without a header, columns are named
/// `c0..c{n-1}`. Ragged rows and empty files are parse errors.
pub fn load_csv(path: &Path, has_header: bool) -> Result<RawTable> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("cannot open {display}: {e}"),
            )),
            _ => Error::Parse {
                path: display.clone(),
                line: None,
                msg: e.to_string(),
            },
        })?;

    let mut columns: Vec<String> = Vec::new();
    if has_header {
        let headers = reader.headers().map_err(|e| Error::Parse {
            path: display.clone(),
            line: Some(1),
            msg: e.to_string(),
        })?;
        columns = headers.iter().map(|s| s.to_string()).collect();
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + if has_header { 2 } else { 1 };
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            line: Some(line),
            msg: e.to_string(),
        })?;
        let row: Vec<String> = record.iter().map(|s| s.to_string()).collect();
        if columns.is_empty() {
            columns = (0..row.len()).map(|c| format!("c{c}")).collect();
        }
        if row.len() != columns.len() {
            return Err(Error::Parse {
                path: display,
                line: Some(line),
                msg: format!("expected {} fields, found {}", columns.len(), row.len()),
            });
        }
        rows.push(row);
    }
    if columns.is_empty() {
        return Err(Error::Parse {
            path: display,
            line: None,
            msg: "empty file".into(),
        });
    }
    Ok(RawTable { columns, rows })
}

/// Drop exact-duplicate rows, keeping first occurrences in original order.
pub fn dedupe(table: &RawTable) -> RawTable {
    let mut seen: HashSet<&[String]> = HashSet::with_capacity(table.rows.len());
    let mut keep = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        if seen.insert(row.as_slice()) {
            keep.push(i);
        }
    }
    RawTable {
        columns: table.columns.clone(),
        rows: keep.into_iter().map(|i| table.rows[i].clone()).collect(),
    }
}

/// Per-column category vocabularies. Codes follow lexicographic category
/// order: sorted position == integer code.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderState {
    maps: BTreeMap<usize, Vec<String>>,
}

impl EncoderState {
    pub fn columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.maps.keys().copied()
    }

    pub fn code(&self, col: usize, value: &str) -> Option<usize> {
        self.maps
            .get(&col)
            .and_then(|cats| cats.binary_search_by(|c| c.as_str().cmp(value)).ok())
    }

    /// Inverse of [`EncoderState::code`].
    pub fn category(&self, col: usize, code: usize) -> Option<&str> {
        self.maps
            .get(&col)
            .and_then(|c| c.get(code))
            .map(|s| s.as_str())
    }
}

pub fn fit_label_encoders(table: &RawTable, categorical_cols: &[usize]) -> Result<EncoderState> {
    let mut maps = BTreeMap::new();
    for &col in categorical_cols {
        if col >= table.n_cols() {
            return Err(Error::Usage(format!(
                "categorical column {col} out of range ({} columns)",
                table.n_cols()
            )));
        }
        let mut cats: Vec<String> = table
            .rows
            .iter()
            .map(|r| r[col].clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        cats.sort();
        maps.insert(col, cats);
    }
    Ok(EncoderState { maps })
}

/// Replace categorical cells with their integer codes (as decimal strings).
/// An unseen category is an error naming the column and value.
pub fn apply_encoders(table: &RawTable, state: &EncoderState) -> Result<RawTable> {
    let mut rows = table.rows.clone();
    for row in &mut rows {
        for &col in state.maps.keys() {
            let code = state.code(col, &row[col]).ok_or_else(|| {
                Error::Domain(format!(
                    "unseen category {:?} in column {} ({})",
                    row[col], col, table.columns[col]
                ))
            })?;
            row[col] = code.to_string();
        }
    }
    Ok(RawTable {
        columns: table.columns.clone(),
        rows,
    })
}

/// Per-feature (min, max) fitted on the training split only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl ScalerState {
    pub fn width(&self) -> usize {
        self.mins.len()
    }

    pub fn bounds(&self, feature: usize) -> (f64, f64) {
        (self.mins[feature], self.maxs[feature])
    }
}

/// Fit column-wise min/max over an `[N, L]` matrix.
pub fn fit_minmax(train_x: &Tensor) -> Result<ScalerState> {
    let shape = train_x.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Usage(format!(
            "fit_minmax expects a nonempty [N, L] matrix, got {shape:?}"
        )));
    }
    let (n, l) = (shape[0], shape[1]);
    let mut mins = vec![f64::INFINITY; l];
    let mut maxs = vec![f64::NEG_INFINITY; l];
    for r in 0..n {
        let row = train_x.row(r, l);
        for (c, &v) in row.iter().enumerate() {
            mins[c] = mins[c].min(v);
            maxs[c] = maxs[c].max(v);
        }
    }
    Ok(ScalerState { mins, maxs })
}

/// `x' = (x - min) / (max - min)`; a constant feature maps to 0. Values from
/// outside the fitted range (test split) are not clipped.
pub fn apply_minmax(x: &Tensor, state: &ScalerState) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != state.width() {
        return Err(Error::Shape(format!(
            "apply_minmax: matrix {shape:?} vs scaler width {}",
            state.width()
        )));
    }
    let l = state.width();
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(l) {
        for (c, v) in row.iter_mut().enumerate() {
            let range = state.maxs[c] - state.mins[c];
            *v = if range == 0.0 {
                0.0
            } else {
                (*v - state.mins[c]) / range
            };
        }
    }
    Tensor::new(shape.to_vec(), data)
}

/// Indices (ascending) of the columns kept by variance-ranked selection.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionState {
    kept: Vec<usize>,
}

impl SelectionState {
    pub fn identity(width: usize) -> Self {
        SelectionState {
            kept: (0..width).collect(),
        }
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }
}

/// Keep the `target_dim` highest-variance columns of a training `[N, L]`
/// matrix; ties break toward the lower column index.
pub fn fit_selection(train_x: &Tensor, target_dim: usize) -> Result<SelectionState> {
    let shape = train_x.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Usage(format!(
            "fit_selection expects a nonempty [N, L] matrix, got {shape:?}"
        )));
    }
    let (n, l) = (shape[0], shape[1]);
    if target_dim > l {
        return Err(Error::Usage(format!(
            "target_dim {target_dim} exceeds available feature count {l}"
        )));
    }
    let mut mean = vec![0.0; l];
    for r in 0..n {
        for (c, &v) in train_x.row(r, l).iter().enumerate() {
            mean[c] += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; l];
    for r in 0..n {
        for (c, &v) in train_x.row(r, l).iter().enumerate() {
            let d = v - mean[c];
            var[c] += d * d;
        }
    }
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| var[b].partial_cmp(&var[a]).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = order[..target_dim].to_vec();
    kept.sort_unstable();
    Ok(SelectionState { kept })
}

pub fn apply_selection(x: &Tensor, state: &SelectionState) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(Error::Shape(format!(
            "apply_selection expects [N, L], got {shape:?}"
        )));
    }
    let (n, l) = (shape[0], shape[1]);
    if let Some(&bad) = state.kept.iter().find(|&&c| c >= l) {
        return Err(Error::Shape(format!(
            "selection references column {bad}, matrix has {l}"
        )));
    }
    let mut data = Vec::with_capacity(n * state.kept.len());
    for r in 0..n {
        let row = x.row(r, l);
        for &c in &state.kept {
            data.push(row[c]);
        }
    }
    Tensor::new(vec![n, state.kept.len()], data)
}

/// Whether a row came from the source corpus or a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Synthetic,
}

/// Provenance of a whole dataset, summarizing its rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceMix {
    Real,
    Synthetic,
    Mixed,
}

/// Scaled feature matrix plus integer class labels and per-row provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Tensor,
    y: Vec<usize>,
    class_names: Vec<String>,
    provenance: Vec<Provenance>,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let n = y.len();
        Self::with_provenance(x, y, class_names, vec![Provenance::Real; n])
    }

    pub fn with_provenance(
        x: Tensor,
        y: Vec<usize>,
        class_names: Vec<String>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        let shape = x.shape();
        if shape.len() != 2 {
            return Err(Error::Shape(format!(
                "dataset X must be [N, L], got {shape:?}"
            )));
        }
        if shape[0] != y.len() || y.len() != provenance.len() {
            return Err(Error::Shape(format!(
                "dataset sizes disagree: {} rows, {} labels, {} provenance tags",
                shape[0],
                y.len(),
                provenance.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= class_names.len()) {
            return Err(Error::Domain(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Dataset {
            x,
            y,
            class_names,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn features(&self) -> &Tensor {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    pub fn provenance_mix(&self) -> ProvenanceMix {
        let (_, synth) = self.provenance_counts();
        if synth == 0 {
            ProvenanceMix::Real
        } else if synth == self.len() {
            ProvenanceMix::Synthetic
        } else {
            ProvenanceMix::Mixed
        }
    }

    /// Count of (real, synthetic) rows.
    pub fn provenance_counts(&self) -> (usize, usize) {
        let synth = self
            .provenance
            .iter()
            .filter(|p| **p == Provenance::Synthetic)
            .count();
        (self.len() - synth, synth)
    }

    /// Rows selected by index as a `[B, L, 1]` batch tensor.
    pub fn batch_features(&self, idxs: &[usize]) -> Tensor {
        let l = self.width();
        let mut data = Vec::with_capacity(idxs.len() * l);
        for &i in idxs {
            data.extend_from_slice(self.x.row(i, l));
        }
        Tensor::new(vec![idxs.len(), l, 1], data).expect("batch shape is consistent")
    }

    pub fn batch_labels(&self, idxs: &[usize]) -> Vec<usize> {
        idxs.iter().map(|&i| self.y[i]).collect()
    }

    /// Same rows and labels with a transformed feature matrix (scaling,
    /// selection). Row count must be unchanged.
    pub fn with_features(&self, x: Tensor) -> Result<Dataset> {
        Dataset::with_provenance(
            x,
            self.y.clone(),
            self.class_names.clone(),
            self.provenance.clone(),
        )
    }

    /// New dataset containing the given rows, in the given order.
    pub fn gather(&self, idxs: &[usize]) -> Dataset {
        let l = self.width();
        let mut data = Vec::with_capacity(idxs.len() * l);
        for &i in idxs {
            data.extend_from_slice(self.x.row(i, l));
        }
        Dataset {
            x: Tensor::new(vec![idxs.len(), l], data).expect("gather shape is consistent"),
            y: idxs.iter().map(|&i| self.y[i]).collect(),
            class_names: self.class_names.clone(),
            provenance: idxs.iter().map(|&i| self.provenance[i]).collect(),
        }
    }
}

/// Outcome of a stratified split, including any degenerate-class warnings.
#[derive(Debug)]
pub struct SplitOutcome {
    pub train: Dataset,
    pub test: Dataset,
    pub warnings: Vec<String>,
}

/// Stratified train/test split. Per class, `round(ratio * n_c)` rows go to
/// train (clamped so neither side is empty when the class has >= 2 rows);
/// a single-row class goes to train with a warning.
pub fn split(dataset: &Dataset, ratio: f64, seed: u64) -> Result<SplitOutcome> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::Usage(format!("split ratio {ratio} outside (0, 1)")));
    }
    if dataset.is_empty() {
        return Err(Error::Usage("cannot split an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..dataset.class_count() {
        let mut idxs: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.y[i] == class)
            .collect();
        if idxs.is_empty() {
            continue;
        }
        if idxs.len() < 2 {
            warnings.push(format!(
                "class {} ({}) has {} row(s); kept in train",
                class,
                dataset.class_names[class],
                idxs.len()
            ));
            train_idx.extend_from_slice(&idxs);
            continue;
        }
        idxs.shuffle(&mut rng);
        let n = idxs.len();
        let take = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
        train_idx.extend_from_slice(&idxs[..take]);
        test_idx.extend_from_slice(&idxs[take..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(SplitOutcome {
        train: dataset.gather(&train_idx),
        test: dataset.gather(&test_idx),
        warnings,
    })
}

/// Stratified subsample of at most `max_rows`, preserving class proportions.
pub fn stratified_cap(dataset: &Dataset, max_rows: usize, seed: u64) -> Dataset {
    if max_rows == 0 || dataset.len() <= max_rows {
        return dataset.clone();
    }
    let keep_ratio = max_rows as f64 / dataset.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(max_rows);
    for class in 0..dataset.class_count() {
        let mut idxs: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.y[i] == class)
            .collect();
        if idxs.is_empty() {
            continue;
        }
        idxs.shuffle(&mut rng);
        let take = ((keep_ratio * idxs.len() as f64).round() as usize).clamp(1, idxs.len());
        keep.extend_from_slice(&idxs[..take]);
    }
    keep.sort_unstable();
    keep.truncate(max_rows);
    dataset.gather(&keep)
}

fn kdd_map() -> &'static BTreeMap<&'static str, usize> {
    static MAP: OnceLock<BTreeMap<&'static str, usize>> = OnceLock::new();
    MAP.get_or_init(|| {
        let category_index = |cat: &str| match cat {
            "normal" => 0,
            "dos" => 1,
            "u2r" => 2,
            "probe" => 3,
            "r2l" => 4,
            other => panic!("bad category {other} in bundled KDD map"),
        };
        KDD_ATTACK_MAP
            .lines()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let mut parts = l.split_whitespace();
                let name = parts.next().expect("attack name");
                let cat = parts.next().expect("category");
                (name, category_index(cat))
            })
            .collect()
    })
}

/// Map a raw KDD label (with or without trailing period) to its class index:
/// normal=0, dos=1, u2r=2, probe=3, r2l=4.
pub fn map_kdd_labels(raw_label: &str) -> Result<usize> {
    let name = raw_label.trim().trim_end_matches('.');
    kdd_map()
        .get(name)
        .copied()
        .ok_or_else(|| Error::Domain(format!("unknown KDD attack name {name:?}")))
}

/// Benign -> 0, anything else -> 1. Case-insensitive, whitespace-trimmed.
pub fn binarize_cicids_label(raw_label: &str) -> usize {
    if raw_label.trim().eq_ignore_ascii_case("benign") {
        0
    } else {
        1
    }
}

/// Feature matrix parsed out of an (encoded) table, with surviving raw labels.
pub struct MatrixOutcome {
    pub x: Tensor,
    pub labels: Vec<String>,
    /// Rows dropped because a feature cell was not a finite number.
    pub dropped_rows: usize,
}

/// Parse all non-label columns into an `[N, L]` matrix. Rows with
/// non-numeric or non-finite cells are dropped and counted.
pub fn to_matrix(table: &RawTable, label_col: usize) -> Result<MatrixOutcome> {
    if label_col >= table.n_cols() {
        return Err(Error::Usage(format!(
            "label column {label_col} out of range ({} columns)",
            table.n_cols()
        )));
    }
    let feature_cols: Vec<usize> = (0..table.n_cols()).filter(|&c| c != label_col).collect();
    let mut data = Vec::with_capacity(table.n_rows() * feature_cols.len());
    let mut labels = Vec::with_capacity(table.n_rows());
    let mut dropped = 0usize;
    'rows: for row in &table.rows {
        let start = data.len();
        for &c in &feature_cols {
            match row[c].trim().parse::<f64>() {
                Ok(v) if v.is_finite() => data.push(v),
                _ => {
                    data.truncate(start);
                    dropped += 1;
                    continue 'rows;
                }
            }
        }
        labels.push(row[label_col].clone());
    }
    let n = labels.len();
    Ok(MatrixOutcome {
        x: Tensor::new(vec![n, feature_cols.len()], data)?,
        labels,
        dropped_rows: dropped,
    })
}

/// Append synthetic rows (`class -> [n, L] or [n, L, 1]` samples) to a
/// training set. Original rows are untouched; new rows carry
/// `Provenance::Synthetic` and the class label of their source generator.
pub fn augment(train: &Dataset, synthetic_per_class: &BTreeMap<usize, Tensor>) -> Result<Dataset> {
    let l = train.width();
    let mut x = train.x.data().to_vec();
    let mut y = train.y.clone();
    let mut provenance = train.provenance.clone();
    for (&class, samples) in synthetic_per_class {
        if class >= train.class_count() {
            return Err(Error::Domain(format!(
                "synthetic class {class} out of range for {} classes",
                train.class_count()
            )));
        }
        let shape = samples.shape();
        let ok = (shape.len() == 2 && shape[1] == l)
            || (shape.len() == 3 && shape[1] == l && shape[2] == 1);
        if !ok {
            return Err(Error::Shape(format!(
                "synthetic samples for class {class} have shape {shape:?}, expected [n, {l}]"
            )));
        }
        let n = shape[0];
        x.extend_from_slice(samples.data());
        y.extend(std::iter::repeat_n(class, n));
        provenance.extend(std::iter::repeat_n(Provenance::Synthetic, n));
    }
    let total = y.len();
    Dataset::with_provenance(
        Tensor::new(vec![total, l], x)?,
        y,
        train.class_names.clone(),
        provenance,
    )
}
