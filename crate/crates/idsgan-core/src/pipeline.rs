//! End-to-end orchestration: prepare data, train the baseline classifier,
//! train per-class GANs, synthesize and augment, retrain, evaluate both
//! models on the same held-out test split, and render comparison reports.
//!
//! Every stage is independently re-runnable: it loads its prerequisites from
//! the output directory, computes, and rewrites its own artifacts. `run_all`
//! chains the same stage entry points, so partial and full runs produce
//! identical files. All randomness derives from the master seed through
//! fixed tags (see [`crate::seeds`]).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, EncoderState, Provenance, ScalerState, SelectionState};
use crate::error::{Error, Result};
use crate::gan::{self, GanBundle, GanConfig};
use crate::metrics::{render_comparison, render_report, EvaluationReport, ProvenanceCounts};
use crate::nn::{
    self, build_cnn_attention_with, AttentionMode, AttentionPosition, CnnAttentionOptions, Model,
    MulticlassHead, TrainConfig, TrainHistory,
};
use crate::seeds::{self, tag};
use crate::tensor::{AdamHyper, LossKind, Tensor};

/// Which corpus schema a run ingests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Headerless 42-column records; categorical columns 1-3; labels with
    /// trailing periods mapped onto 5 classes.
    Kdd,
    /// Headered flow records; a `Label` column binarized to benign/attack.
    Cicids,
    /// Generic numeric CSV with a header; the last column is the label.
    Csv,
}

/// How the post-augmentation model starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RetrainMode {
    /// Fresh weights from a derived seed (architecturally identical).
    #[default]
    Reinit,
    /// Continue from the trained baseline weights.
    Continue,
}

/// `[train]` section of the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub multiclass_head: MulticlassHead,
    pub attention: AttentionMode,
    pub attention_position: AttentionPosition,
    pub dropout: f64,
    pub retrain: RetrainMode,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let adam = AdamHyper::default();
        TrainSettings {
            epochs: 10,
            batch_size: 128,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            multiclass_head: MulticlassHead::Softmax,
            attention: AttentionMode::ScaledDot,
            attention_position: AttentionPosition::PostPool,
            dropout: 0.5,
            retrain: RetrainMode::Reinit,
        }
    }
}

impl TrainSettings {
    fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// `[gan]` section of the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanSettings {
    pub noise_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for GanSettings {
    fn default() -> Self {
        let adam = AdamHyper::default();
        GanSettings {
            noise_dim: 30,
            epochs: 200,
            batch_size: 128,
            alpha: 0.01,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
        }
    }
}

impl GanSettings {
    fn config(&self, seed: u64) -> GanConfig {
        GanConfig {
            noise_dim: self.noise_dim,
            epochs: self.epochs,
            batch_size: self.batch_size,
            alpha: self.alpha,
            adam: AdamHyper {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            seed,
        }
    }
}

/// Declarative description of a full pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset: DatasetKind,
    /// One or more delimited input files, concatenated in order.
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    /// Master seed; every stage stream derives from it.
    pub seed: u64,
    pub split_ratio: f64,
    /// Model input width. Defaults: kdd 30, cicids 78, csv all features.
    pub feature_width: Option<usize>,
    /// Stratified row cap applied after dedupe (None = use everything).
    pub max_rows: Option<usize>,
    /// Synthetic rows to add per class index; missing entries mean 0.
    pub synthetic_per_class: Vec<usize>,
    pub train: TrainSettings,
    pub gan: GanSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: DatasetKind::Csv,
            inputs: Vec::new(),
            out_dir: PathBuf::new(),
            seed: 42,
            split_ratio: 0.8,
            feature_width: None,
            max_rows: None,
            synthetic_per_class: Vec::new(),
            train: TrainSettings::default(),
            gan: GanSettings::default(),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| {
            Error::Usage(format!("invalid config {}: {e}", path.display()))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Usage("config has no input files".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Usage("config has no output directory".into()));
        }
        if !(0.0 < self.split_ratio && self.split_ratio < 1.0) {
            return Err(Error::Usage(format!(
                "split_ratio {} outside (0, 1)",
                self.split_ratio
            )));
        }
        for input in &self.inputs {
            if !input.exists() {
                return Err(Error::Usage(format!(
                    "input file {} does not exist",
                    input.display()
                )));
            }
        }
        Ok(())
    }

    /// Digest of the scientific configuration (everything except file
    /// locations), so reports are byte-identical across output directories.
    pub fn science_digest(&self) -> String {
        #[derive(Serialize)]
        struct Science<'a> {
            dataset: DatasetKind,
            seed: u64,
            split_ratio: f64,
            feature_width: Option<usize>,
            max_rows: Option<usize>,
            synthetic_per_class: &'a [usize],
            train: &'a TrainSettings,
            gan: &'a GanSettings,
        }
        let canonical = serde_json::to_string(&Science {
            dataset: self.dataset,
            seed: self.seed,
            split_ratio: self.split_ratio,
            feature_width: self.feature_width,
            max_rows: self.max_rows,
            synthetic_per_class: &self.synthetic_per_class,
            train: &self.train,
            gan: &self.gan,
        })
        .expect("config serializes");
        format!("{:016x}", fnv1a(canonical.as_bytes()))
    }

    fn synth_count(&self, class: usize) -> usize {
        self.synthetic_per_class.get(class).copied().unwrap_or(0)
    }

    fn has_header(&self) -> bool {
        !matches!(self.dataset, DatasetKind::Kdd)
    }

    fn default_width(&self, available: usize) -> usize {
        match self.dataset {
            DatasetKind::Kdd => 30,
            DatasetKind::Cicids => 78,
            DatasetKind::Csv => available,
        }
    }
}

/// Fitted preprocessing state plus the two splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub encoder: EncoderState,
    pub scaler: ScalerState,
    pub selection: SelectionState,
    pub audit: Vec<String>,
}

// ── checkpoints ─────────────────────────────────────────────────────

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned container for trained state: classifier and/or GAN bundles,
/// plus the fitted preprocessing required to reproduce predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_digest: String,
    pub class_names: Vec<String>,
    pub encoder: Option<EncoderState>,
    pub scaler: Option<ScalerState>,
    pub selection: Option<SelectionState>,
    pub model: Option<Model>,
    #[serde(default)]
    pub gans: BTreeMap<usize, GanBundle>,
    #[serde(default)]
    pub provenance: ProvenanceCounts,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut json = serde_json::to_string(checkpoint)
        .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Checkpoint(format!("cannot read {}: {e}", path.display()))
    })?;
    let checkpoint: Checkpoint = serde_json::from_str(&text).map_err(|e| {
        Error::Checkpoint(format!("corrupt checkpoint {}: {e}", path.display()))
    })?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            checkpoint.version
        )));
    }
    Ok(checkpoint)
}

// ── artifact paths ──────────────────────────────────────────────────

struct Paths {
    out: PathBuf,
}

impl Paths {
    fn new(cfg: &PipelineConfig) -> Paths {
        Paths {
            out: cfg.out_dir.clone(),
        }
    }

    fn effective_config(&self) -> PathBuf {
        self.out.join("effective_config.toml")
    }
    fn prepared_dir(&self) -> PathBuf {
        self.out.join("prepared")
    }
    fn prepared_states(&self) -> PathBuf {
        self.prepared_dir().join("states.json")
    }
    fn prepared_split(&self, which: &str) -> PathBuf {
        self.prepared_dir().join(format!("{which}.csv"))
    }
    fn checkpoint(&self, which: &str) -> PathBuf {
        self.out.join("checkpoints").join(format!("{which}.json"))
    }
    fn history(&self, which: &str) -> PathBuf {
        self.out.join("histories").join(format!("{which}.json"))
    }
    fn synthetic(&self) -> PathBuf {
        self.out.join("synthetic.json")
    }
    fn evaluation(&self) -> PathBuf {
        self.out.join("evaluation.json")
    }
    fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }
    fn comparison(&self) -> PathBuf {
        self.reports_dir().join("comparison.csv")
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut json =
        serde_json::to_string(value).map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, missing_hint: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|_| {
        Error::Usage(format!(
            "missing artifact {}; run `{missing_hint}` first",
            path.display()
        ))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("corrupt artifact {}: {e}", path.display())))
}

fn write_dataset_csv(ds: &Dataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let l = ds.width();
    let mut text = String::new();
    for c in 0..l {
        write!(text, "f{c},").unwrap();
    }
    text.push_str("label,provenance\n");
    for r in 0..ds.len() {
        for v in ds.features().row(r, l) {
            write!(text, "{v},").unwrap();
        }
        let prov = match ds.provenance()[r] {
            Provenance::Real => "real",
            Provenance::Synthetic => "synthetic",
        };
        writeln!(text, "{},{prov}", ds.labels()[r]).unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn read_dataset_csv(path: &Path, class_names: &[String]) -> Result<Dataset> {
    let table = data::load_csv(path, true)?;
    let cols = table.n_cols();
    if cols < 3 {
        return Err(Error::Checkpoint(format!(
            "prepared split {} has too few columns",
            path.display()
        )));
    }
    let l = cols - 2;
    let mut x = Vec::with_capacity(table.n_rows() * l);
    let mut y = Vec::with_capacity(table.n_rows());
    let mut provenance = Vec::with_capacity(table.n_rows());
    for row in &table.rows {
        for cell in &row[..l] {
            x.push(cell.parse::<f64>().map_err(|e| {
                Error::Checkpoint(format!("bad float in {}: {e}", path.display()))
            })?);
        }
        y.push(row[l].parse::<usize>().map_err(|e| {
            Error::Checkpoint(format!("bad label in {}: {e}", path.display()))
        })?);
        provenance.push(match row[l + 1].as_str() {
            "real" => Provenance::Real,
            "synthetic" => Provenance::Synthetic,
            other => {
                return Err(Error::Checkpoint(format!(
                    "bad provenance {other:?} in {}",
                    path.display()
                )))
            }
        });
    }
    let n = y.len();
    Dataset::with_provenance(
        Tensor::new(vec![n, l], x)?,
        y,
        class_names.to_vec(),
        provenance,
    )
}

#[derive(Serialize, Deserialize)]
struct PreparedStates {
    version: u32,
    config_digest: String,
    class_names: Vec<String>,
    encoder: EncoderState,
    scaler: ScalerState,
    selection: SelectionState,
    audit: Vec<String>,
}

// ── preparation ─────────────────────────────────────────────────────

fn load_and_concat(cfg: &PipelineConfig, audit: &mut Vec<String>) -> Result<data::RawTable> {
    let mut combined: Option<data::RawTable> = None;
    for input in &cfg.inputs {
        let table = data::load_csv(input, cfg.has_header())?;
        audit.push(format!("read {} rows from {}", table.n_rows(), input.display()));
        combined = Some(match combined {
            None => table,
            Some(mut acc) => {
                if acc.n_cols() != table.n_cols() {
                    return Err(Error::Parse {
                        path: input.display().to_string(),
                        line: None,
                        msg: format!(
                            "column count {} differs from earlier inputs ({})",
                            table.n_cols(),
                            acc.n_cols()
                        ),
                    });
                }
                acc.rows.extend(table.rows);
                acc
            }
        });
    }
    combined.ok_or_else(|| Error::Usage("no input files".into()))
}

fn find_cicids_label_col(table: &data::RawTable) -> Result<usize> {
    table
        .columns
        .iter()
        .position(|c| c.trim().eq_ignore_ascii_case("label"))
        .ok_or_else(|| Error::Parse {
            path: "<cicids input>".into(),
            line: Some(1),
            msg: "no `Label` column in header".into(),
        })
}

/// Run the full preprocessing recipe: load, dedupe, encode labels and
/// categorical features, drop malformed rows, stratified-cap, split, fit the
/// scaler and feature selection on the training split only, and apply both
/// to the two splits.
pub fn prepare_dataset(cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let mut audit = Vec::new();
    let raw = load_and_concat(cfg, &mut audit)?;
    let table = data::dedupe(&raw);
    audit.push(format!(
        "dedupe: {} -> {} rows ({} duplicates removed)",
        raw.n_rows(),
        table.n_rows(),
        raw.n_rows() - table.n_rows()
    ));

    let (encoder, matrix, y, class_names) = match cfg.dataset {
        DatasetKind::Kdd => {
            let label_col = table.n_cols() - 1;
            if table.n_cols() < 5 {
                return Err(Error::Parse {
                    path: "<kdd input>".into(),
                    line: None,
                    msg: format!("expected KDD-style records, got {} columns", table.n_cols()),
                });
            }
            let encoder = data::fit_label_encoders(&table, &[1, 2, 3])?;
            let encoded = data::apply_encoders(&table, &encoder)?;
            let matrix = data::to_matrix(&encoded, label_col)?;
            let y = matrix
                .labels
                .iter()
                .map(|l| data::map_kdd_labels(l))
                .collect::<Result<Vec<_>>>()?;
            let names = data::KDD_CLASS_NAMES.iter().map(|s| s.to_string()).collect();
            (encoder, matrix, y, names)
        }
        DatasetKind::Cicids => {
            let label_col = find_cicids_label_col(&table)?;
            let matrix = data::to_matrix(&table, label_col)?;
            let y = matrix
                .labels
                .iter()
                .map(|l| data::binarize_cicids_label(l))
                .collect();
            let names = data::CICIDS_CLASS_NAMES.iter().map(|s| s.to_string()).collect();
            (EncoderState::default(), matrix, y, names)
        }
        DatasetKind::Csv => {
            let label_col = table.n_cols() - 1;
            let matrix = data::to_matrix(&table, label_col)?;
            let mut names: Vec<String> = matrix.labels.clone();
            names.sort();
            names.dedup();
            let y = matrix
                .labels
                .iter()
                .map(|l| names.binary_search(l).expect("label from the same table"))
                .collect();
            (EncoderState::default(), matrix, y, names)
        }
    };
    if matrix.dropped_rows > 0 {
        audit.push(format!(
            "dropped {} rows with non-numeric feature cells",
            matrix.dropped_rows
        ));
    }

    let mut dataset = Dataset::new(matrix.x, y, class_names)?;
    if let Some(max) = cfg.max_rows {
        let before = dataset.len();
        dataset = data::stratified_cap(&dataset, max, seeds::derive(cfg.seed, tag::SUBSAMPLE));
        audit.push(format!(
            "stratified cap: {before} -> {} rows (max_rows = {max})",
            dataset.len()
        ));
    }

    let split = data::split(&dataset, cfg.split_ratio, seeds::derive(cfg.seed, tag::PREPARE))?;
    audit.extend(split.warnings.iter().cloned());
    audit.push(format!(
        "split {:.2}: {} train / {} test rows",
        cfg.split_ratio,
        split.train.len(),
        split.test.len()
    ));

    let scaler = data::fit_minmax(split.train.features())?;
    audit.push(format!(
        "min-max scaler fitted on the {}-row training split only",
        split.train.len()
    ));
    let train_scaled = data::apply_minmax(split.train.features(), &scaler)?;
    let test_scaled = data::apply_minmax(split.test.features(), &scaler)?;

    let available = train_scaled.shape()[1];
    let width = cfg.feature_width.unwrap_or(cfg.default_width(available));
    if width > available {
        return Err(Error::Usage(format!(
            "feature_width {width} exceeds the {available} available features"
        )));
    }
    let selection = if width == available {
        SelectionState::identity(available)
    } else {
        let s = data::fit_selection(&train_scaled, width)?;
        audit.push(format!(
            "variance selection fitted on the training split only: {available} -> {width} features"
        ));
        s
    };
    let train = split
        .train
        .with_features(data::apply_selection(&train_scaled, &selection)?)?;
    let test = split
        .test
        .with_features(data::apply_selection(&test_scaled, &selection)?)?;

    Ok(Prepared {
        train,
        test,
        encoder,
        scaler,
        selection,
        audit,
    })
}

// ── model construction and training ─────────────────────────────────

/// Head width for a label space: 1 (sigmoid) for binary tasks, K otherwise.
fn head_width(n_classes: usize) -> usize {
    if n_classes <= 2 {
        1
    } else {
        n_classes
    }
}

fn loss_kind(class_count: usize, head: MulticlassHead) -> LossKind {
    if class_count == 1 {
        LossKind::BinaryCe
    } else {
        match head {
            MulticlassHead::Softmax => LossKind::CategoricalCe,
            MulticlassHead::Sigmoid => LossKind::BinaryCe,
        }
    }
}

fn build_classifier(cfg: &PipelineConfig, width: usize, n_classes: usize, seed: u64) -> Result<Model> {
    let opts = CnnAttentionOptions {
        attention_mode: cfg.train.attention,
        attention_position: cfg.train.attention_position,
        multiclass_head: cfg.train.multiclass_head,
        dropout_rate: cfg.train.dropout,
    };
    build_cnn_attention_with(width, head_width(n_classes), opts, seed)
}

fn train_config(cfg: &PipelineConfig, class_count: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        adam: cfg.train.adam(),
        seed,
        loss: loss_kind(class_count, cfg.train.multiclass_head),
    }
}

/// Train a fresh baseline classifier on the prepared training split,
/// validating on the held-out test split.
pub fn train_baseline(cfg: &PipelineConfig, prepared: &Prepared) -> Result<(Model, TrainHistory)> {
    let n_classes = prepared.train.class_count();
    let mut model = build_classifier(
        cfg,
        prepared.train.width(),
        n_classes,
        seeds::derive(cfg.seed, tag::TRAIN_INIT),
    )?;
    let tc = train_config(cfg, model.class_count(), seeds::derive(cfg.seed, tag::TRAIN_LOOP));
    let history = nn::train_classifier(&mut model, &prepared.train, &prepared.test, &tc)?;
    Ok((model, history))
}

/// Train one GAN per class that has a nonzero synthetic count, each on that
/// class's real training rows only.
pub fn train_gans(cfg: &PipelineConfig, prepared: &Prepared) -> Result<BTreeMap<usize, GanBundle>> {
    let mut gans = BTreeMap::new();
    for class in 0..prepared.train.class_count() {
        let count = cfg.synth_count(class);
        if count == 0 {
            continue;
        }
        let idxs: Vec<usize> = (0..prepared.train.len())
            .filter(|&i| prepared.train.labels()[i] == class)
            .collect();
        if idxs.is_empty() {
            return Err(Error::Usage(format!(
                "synthetic rows requested for class {class} but the training split has none"
            )));
        }
        let real = prepared.train.batch_features(&idxs);
        let gc = cfg
            .gan
            .config(seeds::derive(cfg.seed, tag::GAN_BASE + class as u64));
        gans.insert(class, gan::train_gan(&real, &gc)?);
    }
    Ok(gans)
}

/// Draw the configured number of synthetic rows from each trained GAN.
/// Count entries beyond `n_classes` are ignored (the uniform CLI flag pads).
pub fn synthesize(
    cfg: &PipelineConfig,
    gans: &BTreeMap<usize, GanBundle>,
    n_classes: usize,
) -> Result<BTreeMap<usize, Tensor>> {
    let mut synth = BTreeMap::new();
    for class in 0..n_classes {
        let count = cfg.synth_count(class);
        if count == 0 {
            continue;
        }
        let bundle = gans.get(&class).ok_or_else(|| {
            Error::Usage(format!("no trained GAN for class {class}; run `gan` first"))
        })?;
        synth.insert(
            class,
            gan::generate_synthetic(
                bundle,
                count,
                seeds::derive(cfg.seed, tag::SYNTH_BASE + class as u64),
            )?,
        );
    }
    Ok(synth)
}

/// Augment the training split and train the post-augmentation model (fresh
/// weights by default, continuing from the baseline when configured).
pub fn train_augmented(
    cfg: &PipelineConfig,
    prepared: &Prepared,
    synth: &BTreeMap<usize, Tensor>,
    baseline: Option<&Model>,
) -> Result<(Model, TrainHistory, ProvenanceCounts)> {
    let augmented = data::augment(&prepared.train, synth)?;
    let (real, synthetic) = augmented.provenance_counts();
    let mut model = match cfg.train.retrain {
        RetrainMode::Reinit => build_classifier(
            cfg,
            prepared.train.width(),
            prepared.train.class_count(),
            seeds::derive(cfg.seed, tag::RETRAIN_INIT),
        )?,
        RetrainMode::Continue => baseline
            .cloned()
            .ok_or_else(|| Error::Usage("retrain = \"continue\" needs a baseline model".into()))?,
    };
    let tc = train_config(cfg, model.class_count(), seeds::derive(cfg.seed, tag::RETRAIN_LOOP));
    let history = nn::train_classifier(&mut model, &augmented, &prepared.test, &tc)?;
    Ok((model, history, ProvenanceCounts { real, synthetic }))
}

/// Evaluate a trained model on the held-out test split.
pub fn evaluate_model(
    label: &str,
    model: &Model,
    test: &Dataset,
    history: TrainHistory,
    config_digest: &str,
    provenance: ProvenanceCounts,
) -> Result<EvaluationReport> {
    if model.input_len() != test.width() {
        return Err(Error::Shape(format!(
            "checkpoint expects width {} but the test split has width {}",
            model.input_len(),
            test.width()
        )));
    }
    let y_pred = nn::predict_dataset(model, test, 256)?;
    EvaluationReport::from_predictions(
        label,
        test.labels(),
        &y_pred,
        test.class_names(),
        history,
        config_digest,
        provenance,
    )
}

/// The two evaluation reports a full run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub baseline: EvaluationReport,
    pub augmented: Option<EvaluationReport>,
}

/// Result of `run_all`: both reports plus where the comparison was written.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub baseline: EvaluationReport,
    pub augmented: EvaluationReport,
    pub comparison_path: PathBuf,
    pub report_files: Vec<PathBuf>,
}

// ── stages ──────────────────────────────────────────────────────────

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prepare,
    Train,
    Gan,
    Synth,
    Retrain,
    Evaluate,
    Report,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Train => "train",
            Stage::Gan => "gan",
            Stage::Synth => "synth",
            Stage::Retrain => "retrain",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

fn echo_config(cfg: &PipelineConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Usage(format!("cannot serialize config: {e}")))?;
    std::fs::write(Paths::new(cfg).effective_config(), text)?;
    Ok(())
}

/// `prepare`: ingest, preprocess, split; persist the splits and fitted states.
pub fn stage_prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    echo_config(cfg)?;
    let prepared = prepare_dataset(cfg)?;
    let paths = Paths::new(cfg);
    write_dataset_csv(&prepared.train, &paths.prepared_split("train"))?;
    write_dataset_csv(&prepared.test, &paths.prepared_split("test"))?;
    write_json(
        &PreparedStates {
            version: CHECKPOINT_VERSION,
            config_digest: cfg.science_digest(),
            class_names: prepared.train.class_names().to_vec(),
            encoder: prepared.encoder.clone(),
            scaler: prepared.scaler.clone(),
            selection: prepared.selection.clone(),
            audit: prepared.audit.clone(),
        },
        &paths.prepared_states(),
    )?;
    Ok(prepared)
}

/// Reload the `prepare` artifacts.
pub fn load_prepared(cfg: &PipelineConfig) -> Result<Prepared> {
    let paths = Paths::new(cfg);
    let states: PreparedStates = read_json(&paths.prepared_states(), "prepare")?;
    let train = read_dataset_csv(&paths.prepared_split("train"), &states.class_names)?;
    let test = read_dataset_csv(&paths.prepared_split("test"), &states.class_names)?;
    Ok(Prepared {
        train,
        test,
        encoder: states.encoder,
        scaler: states.scaler,
        selection: states.selection,
        audit: states.audit,
    })
}

fn classifier_checkpoint(
    cfg: &PipelineConfig,
    prepared: &Prepared,
    model: Model,
    provenance: ProvenanceCounts,
) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        config_digest: cfg.science_digest(),
        class_names: prepared.train.class_names().to_vec(),
        encoder: Some(prepared.encoder.clone()),
        scaler: Some(prepared.scaler.clone()),
        selection: Some(prepared.selection.clone()),
        model: Some(model),
        gans: BTreeMap::new(),
        provenance,
    }
}

/// `train`: baseline classifier on the prepared training split.
pub fn stage_train(cfg: &PipelineConfig) -> Result<()> {
    let prepared = load_prepared(cfg)?;
    let (model, history) = train_baseline(cfg, &prepared)?;
    let paths = Paths::new(cfg);
    let (real, _) = prepared.train.provenance_counts();
    save_checkpoint(
        &classifier_checkpoint(cfg, &prepared, model, ProvenanceCounts { real, synthetic: 0 }),
        &paths.checkpoint("baseline"),
    )?;
    write_json(&history, &paths.history("baseline"))?;
    Ok(())
}

/// `gan`: per-class adversarial training for classes with synthetic counts.
pub fn stage_gan(cfg: &PipelineConfig) -> Result<()> {
    let prepared = load_prepared(cfg)?;
    let gans = train_gans(cfg, &prepared)?;
    let paths = Paths::new(cfg);
    save_checkpoint(
        &Checkpoint {
            version: CHECKPOINT_VERSION,
            config_digest: cfg.science_digest(),
            class_names: prepared.train.class_names().to_vec(),
            encoder: Some(prepared.encoder.clone()),
            scaler: Some(prepared.scaler.clone()),
            selection: Some(prepared.selection.clone()),
            model: None,
            gans,
            provenance: ProvenanceCounts::default(),
        },
        &paths.checkpoint("gans"),
    )?;
    Ok(())
}

/// `synth`: sample the configured synthetic rows from the trained GANs.
pub fn stage_synth(cfg: &PipelineConfig) -> Result<()> {
    let paths = Paths::new(cfg);
    let gans_path = paths.checkpoint("gans");
    if !gans_path.exists() {
        return Err(Error::Usage(format!(
            "missing artifact {}; run `gan` first",
            gans_path.display()
        )));
    }
    let checkpoint = load_checkpoint(&gans_path)?;
    let synth = synthesize(cfg, &checkpoint.gans, checkpoint.class_names.len())?;
    write_json(&synth, &paths.synthetic())?;
    Ok(())
}

/// `retrain`: augment the training split and train the comparison model.
pub fn stage_retrain(cfg: &PipelineConfig) -> Result<()> {
    let prepared = load_prepared(cfg)?;
    let paths = Paths::new(cfg);
    let synth: BTreeMap<usize, Tensor> = read_json(&paths.synthetic(), "synth")?;
    let baseline = match cfg.train.retrain {
        RetrainMode::Continue => Some(
            load_checkpoint(&paths.checkpoint("baseline"))?
                .model
                .ok_or_else(|| Error::Checkpoint("baseline checkpoint has no model".into()))?,
        ),
        RetrainMode::Reinit => None,
    };
    let (model, history, provenance) =
        train_augmented(cfg, &prepared, &synth, baseline.as_ref())?;
    save_checkpoint(
        &classifier_checkpoint(cfg, &prepared, model, provenance),
        &paths.checkpoint("augmented"),
    )?;
    write_json(&history, &paths.history("augmented"))?;
    Ok(())
}

/// `evaluate`: score saved models on the saved test split.
pub fn stage_evaluate(cfg: &PipelineConfig) -> Result<Evaluation> {
    let prepared = load_prepared(cfg)?;
    let paths = Paths::new(cfg);
    let digest = cfg.science_digest();

    let baseline_ckpt = {
        let p = paths.checkpoint("baseline");
        if !p.exists() {
            return Err(Error::Usage(format!(
                "missing artifact {}; run `train` first",
                p.display()
            )));
        }
        load_checkpoint(&p)?
    };
    let baseline_model = baseline_ckpt
        .model
        .ok_or_else(|| Error::Checkpoint("baseline checkpoint has no model".into()))?;
    let baseline_history: TrainHistory = read_json(&paths.history("baseline"), "train")?;
    let baseline = evaluate_model(
        "baseline",
        &baseline_model,
        &prepared.test,
        baseline_history,
        &digest,
        baseline_ckpt.provenance,
    )?;

    let augmented_path = paths.checkpoint("augmented");
    let augmented = if augmented_path.exists() {
        let ckpt = load_checkpoint(&augmented_path)?;
        let model = ckpt
            .model
            .ok_or_else(|| Error::Checkpoint("augmented checkpoint has no model".into()))?;
        let history: TrainHistory = read_json(&paths.history("augmented"), "retrain")?;
        Some(evaluate_model(
            "augmented",
            &model,
            &prepared.test,
            history,
            &digest,
            ckpt.provenance,
        )?)
    } else {
        None
    };

    let evaluation = Evaluation { baseline, augmented };
    write_json(&evaluation, &paths.evaluation())?;
    Ok(evaluation)
}

/// `report`: render evaluation artifacts to delimited/structured text files.
pub fn stage_report(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let paths = Paths::new(cfg);
    let evaluation: Evaluation = read_json(&paths.evaluation(), "evaluate")?;
    let mut files = render_report(&evaluation.baseline, &paths.reports_dir().join("baseline"))?;
    if let Some(augmented) = &evaluation.augmented {
        files.extend(render_report(augmented, &paths.reports_dir().join("augmented"))?);
        render_comparison(&evaluation.baseline, augmented, &paths.comparison())?;
        files.push(paths.comparison());
    }
    Ok(files)
}

/// Run a single stage, wrapping failures with the stage name.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<()> {
    let result = match stage {
        Stage::Prepare => stage_prepare(cfg).map(|_| ()),
        Stage::Train => stage_train(cfg),
        Stage::Gan => stage_gan(cfg),
        Stage::Synth => stage_synth(cfg),
        Stage::Retrain => stage_retrain(cfg),
        Stage::Evaluate => stage_evaluate(cfg).map(|_| ()),
        Stage::Report => stage_report(cfg).map(|_| ()),
    };
    result.map_err(|e| e.in_stage(stage.name()))
}

/// Execute every stage in order and return both reports plus the rendered
/// comparison. The whole run is a pure function of (config, inputs, seed).
pub fn run_all(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    for stage in [
        Stage::Prepare,
        Stage::Train,
        Stage::Gan,
        Stage::Synth,
        Stage::Retrain,
        Stage::Evaluate,
    ] {
        run_stage(cfg, stage)?;
    }
    let paths = Paths::new(cfg);
    let evaluation: Evaluation = read_json(&paths.evaluation(), "evaluate")?;
    let report_files = stage_report(cfg).map_err(|e| e.in_stage("report"))?;
    let augmented = evaluation
        .augmented
        .ok_or_else(|| Error::Usage("full run produced no augmented report".into()))?;
    Ok(PipelineOutcome {
        baseline: evaluation.baseline,
        augmented,
        comparison_path: paths.comparison(),
        report_files,
    })
}
