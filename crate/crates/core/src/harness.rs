//! Experiment orchestration: split, augment the training partition only,
//! train, evaluate on the untouched test partition, and collect report rows.
//!
//! A grid cell is one `(method, multiple, repetition)` training run. Cells
//! are identified by `(environment, regime, multiple, method, seed)`; a run
//! that finds a sidecar from an earlier run with the same resolved config
//! reuses its completed cells, so interrupted experiments resume and
//! finished ones reproduce their report files byte for byte.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentMethod, AugmentPlan};
use crate::channel::{apply_nonideality, synthesize_dataset, NonidealityProfile, Scenario};
use crate::csi::Dataset;
use crate::io::{self, ReportRow};
use crate::mlp::{self, Encoded, MlpModel, Optimizer, Standardizer, TrainConfig};
use crate::rng::{derive_seed, substream, Purpose};
use crate::{Error, Result};

/// Name of the built-in preset that augments the small regime tenfold.
pub const PRESET_TEN_PERCENT: &str = "preset-ten-percent";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RegimeRepr", into = "String")]
pub enum Regime {
    Small,
    Medium,
    Large,
    Custom(usize),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RegimeRepr {
    Size(usize),
    Name(String),
}

impl TryFrom<RegimeRepr> for Regime {
    type Error = Error;

    fn try_from(r: RegimeRepr) -> Result<Self> {
        match r {
            RegimeRepr::Size(n) if n > 0 => Ok(Regime::Custom(n)),
            RegimeRepr::Size(_) => Err(Error::Config("regime size must be positive".into())),
            RegimeRepr::Name(s) => s.parse(),
        }
    }
}

impl From<Regime> for String {
    fn from(r: Regime) -> String {
        r.to_string()
    }
}

impl Regime {
    /// Number of original training samples.
    pub fn size(self) -> usize {
        match self {
            Regime::Small => 4_000,
            Regime::Medium => 20_000,
            Regime::Large => 40_000,
            Regime::Custom(n) => n,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Small => f.write_str("small"),
            Regime::Medium => f.write_str("medium"),
            Regime::Large => f.write_str("large"),
            Regime::Custom(n) => write!(f, "custom-{n}"),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Regime::Small),
            "medium" => Ok(Regime::Medium),
            "large" => Ok(Regime::Large),
            other => other
                .strip_prefix("custom-")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n > 0)
                .map(Regime::Custom)
                .ok_or_else(|| Error::Config(format!("unknown regime {other:?}"))),
        }
    }
}

/// Training-set treatment of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Originals only, repeated cyclically when the multiple exceeds 1.
    None,
    Phase,
    Amplitude,
    Noise,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Phase => "phase",
            Method::Amplitude => "amplitude",
            Method::Noise => "noise",
        }
    }

    pub fn augment_method(self) -> Option<AugmentMethod> {
        match self {
            Method::None => None,
            Method::Phase => Some(AugmentMethod::Phase),
            Method::Amplitude => Some(AugmentMethod::Amplitude),
            Method::Noise => Some(AugmentMethod::Noise),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Method::None),
            other => other.parse::<AugmentMethod>().map(|m| match m {
                AugmentMethod::Phase => Method::Phase,
                AugmentMethod::Amplitude => Method::Amplitude,
                AugmentMethod::Noise => Method::Noise,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subsample {
    /// Seeded random draw from the training pool.
    #[default]
    Random,
    /// The lowest source indices in the training pool.
    Prefix,
}

/// `P★` in dB per regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PStarMap {
    pub small: f64,
    pub medium: f64,
    pub large: f64,
    pub custom: f64,
}

impl Default for PStarMap {
    fn default() -> Self {
        Self { small: 1.5, medium: 1.5, large: 0.75, custom: 1.5 }
    }
}

impl PStarMap {
    pub fn get(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Small => self.small,
            Regime::Medium => self.medium,
            Regime::Large => self.large,
            Regime::Custom(_) => self.custom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpochMap {
    pub none: usize,
    pub phase: usize,
    pub amplitude: usize,
    pub noise: usize,
}

impl Default for EpochMap {
    fn default() -> Self {
        Self { none: 300, phase: 300, amplitude: 150, noise: 150 }
    }
}

impl EpochMap {
    pub fn get(&self, method: Method) -> usize {
        match method {
            Method::None => self.none,
            Method::Phase => self.phase,
            Method::Amplitude => self.amplitude,
            Method::Noise => self.noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub epochs: EpochMap,
    /// Fit a per-feature standardizer on the (augmented) training set.
    pub standardize: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            optimizer: base.optimizer,
            epochs: EpochMap::default(),
            standardize: true,
        }
    }
}

impl TrainSettings {
    pub fn config_for(&self, method: Method, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.get(method),
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            shuffle_seed: seed,
            init_seed: seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.2, seed: 0 }
    }
}

fn default_multiples() -> Vec<f64> {
    vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
}
fn default_methods() -> Vec<Method> {
    vec![Method::Phase]
}
fn default_repetitions() -> usize {
    5
}
fn default_noise_variance() -> f64 {
    augment::DEFAULT_NOISE_VARIANCE
}

/// Fully resolved experiment description.
///
/// Read from TOML. Exactly one of `dataset` (a `.csid` path) or `scenario`
/// (an inline synthetic scenario) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Report label; defaults to the dataset's env tag.
    #[serde(default)]
    pub environment: Option<String>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    /// Samples to synthesize; defaults to just enough for the regime and test split.
    #[serde(default)]
    pub n_samples: Option<usize>,
    /// Overrides the scenario noise variance to reach this average SNR.
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default = "default_regime")]
    pub regime: Regime,
    #[serde(default)]
    pub subsample: Subsample,
    #[serde(default = "default_multiples")]
    pub multiples: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub p_star_db: PStarMap,
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Base seed; repetition `r` uses a seed derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub nonideality_test: Option<NonidealityProfile>,
}

fn default_regime() -> Regime {
    Regime::Small
}

fn preset_table(name: &str) -> Result<toml::Table> {
    let text = match name {
        PRESET_TEN_PERCENT => "regime = \"small\"\nmethods = [\"phase\"]\nmultiples = [10.0]\n",
        other => return Err(Error::Config(format!("unknown preset {other:?}"))),
    };
    Ok(text.parse::<toml::Table>().expect("preset parses"))
}

impl ExperimentConfig {
    /// Config for a `.csid` source with every other field at its default.
    pub fn for_dataset(path: impl Into<PathBuf>) -> ExperimentConfig {
        let mut c: ExperimentConfig = toml::from_str("").expect("defaults");
        c.dataset = Some(path.into());
        c
    }

    pub fn for_scenario(scenario: Scenario) -> ExperimentConfig {
        let mut c: ExperimentConfig = toml::from_str("").expect("defaults");
        c.scenario = Some(scenario);
        c
    }

    /// Parses a TOML document. A `preset` key supplies defaults that the
    /// document's own keys override.
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let user: toml::Table = text.parse().map_err(|e| Error::Config(format!("config: {e}")))?;
        let mut merged = match user.get("preset").and_then(|v| v.as_str()) {
            Some(name) => preset_table(name)?,
            None => toml::Table::new(),
        };
        for (k, v) in user {
            merged.insert(k, v);
        }
        let config: ExperimentConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.scenario) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Config("give exactly one of `dataset` or `scenario`".into())),
        }
        if let Some(s) = &self.scenario {
            s.validate()?;
        }
        if self.multiples.is_empty() || self.multiples.iter().any(|&m| !(m >= 1.0) || !m.is_finite()) {
            return Err(Error::Config("multiples must be nonempty and each ≥ 1".into()));
        }
        if self.multiples.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("multiples must be sorted ascending without repeats".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be ≥ 1".into()));
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(Error::Config(format!("test fraction {} not in (0, 1)", self.split.test_fraction)));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::Config("noise variance must be ≥ 0".into()));
        }
        for p in [self.p_star_db.small, self.p_star_db.medium, self.p_star_db.large, self.p_star_db.custom] {
            if !(p >= 0.0) {
                return Err(Error::Config("P★ values must be ≥ 0 dB".into()));
            }
        }
        if let Some(p) = &self.nonideality_test {
            p.validate()?;
        }
        self.train.config_for(Method::Phase, 0).validate()?;
        Ok(())
    }

    /// Samples to synthesize when the source is a scenario.
    pub fn synthetic_size(&self) -> usize {
        self.n_samples.unwrap_or_else(|| {
            (self.regime.size() as f64 / (1.0 - self.split.test_fraction)).ceil() as usize
        })
    }
}

/// Test partition size for `n` samples.
pub fn test_count(n: usize, test_fraction: f64) -> usize {
    ((test_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Shuffled disjoint `(train, test)` index lists.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Precondition(format!("need at least 2 samples to split, got {n}")));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Precondition(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, Purpose::Split, 0));
    let n_test = test_count(n, test_fraction);
    let test = order[..n_test].to_vec();
    let train = order[n_test..].to_vec();
    Ok((train, test))
}

pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.len(), test_fraction, seed)?;
    Ok((dataset.select(&train), dataset.select(&test)))
}

/// Everything that defines one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub environment: String,
    pub regime: Regime,
    pub method: Method,
    pub multiple: f64,
    pub p_star_db: f64,
    pub noise_variance: f64,
    pub train: TrainConfig,
    pub standardize: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub row: ReportRow,
    pub rmse: f64,
    pub train_size: usize,
    pub wall_seconds: f64,
    /// For each training sample, the index of the original it came from.
    pub provenance: Vec<usize>,
    pub loss_trace: Vec<f64>,
}

/// Builds the training set for a cell and returns it with its provenance.
pub fn build_training_set(train: &Dataset, spec: &CellSpec) -> Result<(Dataset, Vec<usize>)> {
    let n = train.len();
    let target = AugmentPlan::target_for_multiple(spec.multiple, n)?;
    let provenance: Vec<usize> = (0..n).chain((0..target - n).map(|a| augment::source_index(a, n))).collect();
    let set = match spec.method.augment_method() {
        None => {
            let idx: Vec<usize> = provenance.clone();
            train.select(&idx)
        }
        Some(method) => {
            let plan = AugmentPlan {
                method,
                target_size: target,
                p_star_db: Some(spec.p_star_db),
                noise_variance: spec.noise_variance,
                seed: spec.seed,
            };
            augment::augment(train, &plan)?
        }
    };
    Ok((set, provenance))
}

/// Augment (train partition only), standardize on the training set, train,
/// and score on `test`.
pub fn run_cell(train: &Dataset, test: &Dataset, spec: &CellSpec) -> Result<CellResult> {
    let started = Instant::now();
    if train.dims() != test.dims() {
        return Err(Error::Dimension(format!("train dims {} vs test dims {}", train.dims(), test.dims())));
    }
    let (train_set, provenance) = build_training_set(train, spec)?;
    let mut train_enc = mlp::encode_dataset(&train_set);
    drop(train_set);
    let mut test_enc: Encoded = mlp::encode_dataset(test);
    if spec.standardize {
        let st = Standardizer::fit(train_enc.features.view())?;
        st.apply(&mut train_enc.features)?;
        st.apply(&mut test_enc.features)?;
    }
    let sizes = MlpModel::default_sizes(train_enc.features.ncols());
    let model = MlpModel::new(&sizes, spec.train.init_seed)?;
    let outcome = mlp::train(model, &train_enc, &spec.train)?;
    let mse = mlp::evaluate_mse(&outcome.model, &test_enc)?;
    Ok(CellResult {
        row: ReportRow {
            environment: spec.environment.clone(),
            regime: spec.regime.to_string(),
            multiple: spec.multiple,
            method: spec.method.to_string(),
            test_mse: mse,
            seed: spec.seed,
        },
        rmse: mse.sqrt(),
        train_size: train_enc.len(),
        wall_seconds: started.elapsed().as_secs_f64(),
        provenance,
        loss_trace: outcome.loss_trace,
    })
}

/// One grid cell as recorded in the report sidecar; failed cells keep their error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub environment: String,
    pub regime: String,
    pub multiple: f64,
    pub method: String,
    pub seed: u64,
    pub repetition: usize,
    pub test_mse: Option<f64>,
    pub rmse: Option<f64>,
    pub train_size: Option<usize>,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

impl CellRecord {
    fn key(&self) -> (String, String, u64, String, u64) {
        (self.environment.clone(), self.regime.clone(), self.multiple.to_bits(), self.method.clone(), self.seed)
    }

    pub fn row(&self) -> Option<ReportRow> {
        self.test_mse.map(|mse| ReportRow {
            environment: self.environment.clone(),
            regime: self.regime.clone(),
            multiple: self.multiple,
            method: self.method.clone(),
            test_mse: mse,
            seed: self.seed,
        })
    }
}

/// Median, min and max of the repetitions of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub environment: String,
    pub regime: String,
    pub multiple: f64,
    pub method: String,
    pub runs: usize,
    pub median_mse: f64,
    pub min_mse: f64,
    pub max_mse: f64,
    pub median_rmse: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

type GroupKey = (String, String, u64, String);

pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<(GroupKey, Vec<f64>)> = Vec::new();
    for r in rows {
        let key = (r.environment.clone(), r.regime.clone(), r.multiple.to_bits(), r.method.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.test_mse),
            None => groups.push((key, vec![r.test_mse])),
        }
    }
    groups
        .into_iter()
        .map(|((environment, regime, multiple, method), v)| {
            let med = median(&v);
            SummaryRow {
                environment,
                regime,
                multiple: f64::from_bits(multiple),
                method,
                runs: v.len(),
                median_mse: med,
                min_mse: v.iter().copied().fold(f64::INFINITY, f64::min),
                max_mse: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                median_rmse: med.sqrt(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Successful cells, in grid order.
    pub rows: Vec<ReportRow>,
    /// Every cell including failures, with RMSE, training size and wall time.
    pub cells: Vec<CellRecord>,
    pub summary: Vec<SummaryRow>,
    pub config_echo: ExperimentConfig,
    /// Perturbation applied to the test set, for robustness runs.
    pub test_profile: Option<NonidealityProfile>,
}

/// Sidecar path holding the full report next to the table file.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

impl ExperimentReport {
    /// Writes the table (CSV or JSON by extension) and the JSON sidecar.
    pub fn write(&self, out: &Path) -> Result<()> {
        if !self.rows.is_empty() {
            io::write_report_file(&self.rows, out)?;
        }
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(sidecar_path(out), json + "\n")?;
        Ok(())
    }

    pub fn read_sidecar(out: &Path) -> Result<Option<ExperimentReport>> {
        let path = sidecar_path(out);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map(Some).map_err(|e| Error::Format(format!("report sidecar: {e}")))
    }
}

/// Source dataset, train pool and test indices for a config.
struct Prepared {
    environment: String,
    train: Dataset,
    test: Dataset,
    train_ids: Vec<usize>,
    test_ids: Vec<usize>,
}

fn load_source(config: &ExperimentConfig) -> Result<Dataset> {
    match (&config.dataset, &config.scenario) {
        (Some(path), None) => io::read_csid_file(path),
        (None, Some(scenario)) => {
            let scenario = match config.snr_db {
                Some(snr) => scenario.clone().with_snr_db(snr),
                None => scenario.clone(),
            };
            synthesize_dataset(&scenario, config.synthetic_size())
        }
        _ => Err(Error::Config("give exactly one of `dataset` or `scenario`".into())),
    }
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let source = load_source(config)?;
    source.check()?;
    let (pool, test_ids) = split_indices(source.len(), config.split.test_fraction, config.split.seed)?;
    let n_train = config.regime.size();
    if n_train > pool.len() {
        return Err(Error::Precondition(format!(
            "regime {} needs {n_train} training samples but only {} remain after holding out {} for test",
            config.regime,
            pool.len(),
            test_ids.len()
        )));
    }
    let train_ids: Vec<usize> = match config.subsample {
        Subsample::Random => {
            let mut p = pool;
            p.shuffle(&mut substream(config.split.seed, Purpose::Subsample, 0));
            p.truncate(n_train);
            p
        }
        Subsample::Prefix => {
            let mut p = pool;
            p.sort_unstable();
            p.truncate(n_train);
            p
        }
    };
    let environment = config.environment.clone().unwrap_or_else(|| source.env_tag().to_string());
    Ok(Prepared {
        environment,
        train: source.select(&train_ids),
        test: source.select(&test_ids),
        train_ids,
        test_ids,
    })
}

/// Fails if any training sample (original or augmented) traces back to a test index.
pub fn check_hygiene(train_ids: &[usize], test_ids: &[usize], provenance: &[usize]) -> Result<()> {
    let test: HashSet<usize> = test_ids.iter().copied().collect();
    if let Some(&p) = provenance.iter().find(|&&p| test.contains(&train_ids[p])) {
        return Err(Error::Invalid(format!("training sample derived from test index {}", train_ids[p])));
    }
    Ok(())
}

struct GridCell {
    spec: CellSpec,
    repetition: usize,
}

fn grid(config: &ExperimentConfig, environment: &str, baseline_single: bool) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for &method in &config.methods {
        let multiples: Vec<f64> = if baseline_single && method == Method::None {
            vec![1.0]
        } else {
            config.multiples.clone()
        };
        for multiple in multiples {
            for repetition in 0..config.repetitions {
                let seed = derive_seed(config.seed, Purpose::Repetition, repetition as u64);
                cells.push(GridCell {
                    spec: CellSpec {
                        environment: environment.to_string(),
                        regime: config.regime,
                        method,
                        multiple,
                        p_star_db: config.p_star_db.get(config.regime),
                        noise_variance: config.noise_variance,
                        train: config.train.config_for(method, seed),
                        standardize: config.train.standardize,
                        seed,
                    },
                    repetition,
                });
            }
        }
    }
    cells
}

fn run_grid(
    config: &ExperimentConfig,
    prepared: &Prepared,
    test: &Dataset,
    cells: Vec<GridCell>,
    test_profile: Option<NonidealityProfile>,
    out: Option<&Path>,
) -> Result<ExperimentReport> {
    let previous = match out {
        Some(path) => match ExperimentReport::read_sidecar(path)? {
            Some(prev) if prev.config_echo == *config && prev.test_profile == test_profile => Some(prev),
            Some(_) => {
                log::warn!("existing report at {} has a different config; starting over", path.display());
                None
            }
            None => None,
        },
        None => None,
    };
    let done: BTreeMap<_, CellRecord> = previous
        .map(|p| p.cells.into_iter().filter(|c| c.error.is_none()).map(|c| (c.key(), c)).collect())
        .unwrap_or_default();

    let mut report = ExperimentReport {
        rows: Vec::new(),
        cells: Vec::new(),
        summary: Vec::new(),
        config_echo: config.clone(),
        test_profile,
    };
    let total = cells.len();
    for (i, cell) in cells.into_iter().enumerate() {
        let spec = &cell.spec;
        let key = (
            spec.environment.clone(),
            spec.regime.to_string(),
            spec.multiple.to_bits(),
            spec.method.to_string(),
            spec.seed,
        );
        let record = match done.get(&key) {
            Some(rec) => rec.clone(),
            None => {
                log::info!(
                    "cell {}/{total}: {} {} x{} rep {}",
                    i + 1,
                    spec.regime,
                    spec.method,
                    spec.multiple,
                    cell.repetition
                );
                let started = Instant::now();
                let result = run_cell(&prepared.train, test, spec).and_then(|r| {
                    check_hygiene(&prepared.train_ids, &prepared.test_ids, &r.provenance)?;
                    Ok(r)
                });
                match result {
                    Ok(r) => CellRecord {
                        environment: spec.environment.clone(),
                        regime: spec.regime.to_string(),
                        multiple: spec.multiple,
                        method: spec.method.to_string(),
                        seed: spec.seed,
                        repetition: cell.repetition,
                        test_mse: Some(r.row.test_mse),
                        rmse: Some(r.rmse),
                        train_size: Some(r.train_size),
                        wall_seconds: r.wall_seconds,
                        error: None,
                    },
                    Err(e) => {
                        log::error!("cell failed: {e}");
                        CellRecord {
                            environment: spec.environment.clone(),
                            regime: spec.regime.to_string(),
                            multiple: spec.multiple,
                            method: spec.method.to_string(),
                            seed: spec.seed,
                            repetition: cell.repetition,
                            test_mse: None,
                            rmse: None,
                            train_size: None,
                            wall_seconds: started.elapsed().as_secs_f64(),
                            error: Some(e.to_string()),
                        }
                    }
                }
            }
        };
        report.rows.extend(record.row());
        report.cells.push(record);
        report.summary = summarize(&report.rows);
        if let Some(path) = out {
            report.write(path)?;
        }
    }
    Ok(report)
}

/// Runs the `methods × multiples × repetitions` grid. With `out`, the table
/// and sidecar are rewritten after every cell.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    let prepared = prepare(config)?;
    let cells = grid(config, &prepared.environment, false);
    run_grid(config, &prepared, &prepared.test, cells, None, out)
}

/// Trains on clean data and scores every model on one perturbed test set.
///
/// `none` runs at multiple 1 only; the other methods run at each multiple.
/// Rows are tagged `<environment>/<profile>`.
pub fn run_robustness(config: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentReport> {
    let profile = config
        .nonideality_test
        .ok_or_else(|| Error::Precondition("robustness runs need `nonideality_test`".into()))?;
    if config.scenario.is_none() {
        return Err(Error::Precondition("robustness runs need a synthetic `scenario` source".into()));
    }
    let prepared = prepare(config)?;
    let perturb_seed = derive_seed(config.split.seed, Purpose::Nonideality, 0);
    let perturbed = apply_nonideality(&prepared.test, &profile, perturb_seed)?;
    let environment = format!("{}/{}", prepared.environment, profile.tag());
    let cells = grid(config, &environment, true);
    run_grid(config, &prepared, &perturbed, cells, Some(profile), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi::TensorDims;

    #[test]
    fn regime_names() {
        for r in [Regime::Small, Regime::Medium, Regime::Large, Regime::Custom(2000)] {
            assert_eq!(r.to_string().parse::<Regime>().unwrap(), r);
        }
        assert_eq!(Regime::Medium.size(), 20_000);
        assert!("huge".parse::<Regime>().is_err());
        assert!("custom-0".parse::<Regime>().is_err());
    }

    #[test]
    fn split_counts_and_disjointness() {
        let (train, test) = split_indices(10, 0.2, 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert!(test.iter().all(|t| !train.contains(t)));
        assert_eq!(split_indices(10, 0.2, 1).unwrap(), (train, test));
        assert!(split_indices(1, 0.2, 1).is_err());
        assert!(split_indices(10, 0.0, 1).is_err());
        assert!(split_indices(10, 1.0, 1).is_err());
    }

    #[test]
    fn hygiene_detects_leaks() {
        assert!(check_hygiene(&[3, 4], &[0, 1], &[0, 1, 0]).is_ok());
        assert!(check_hygiene(&[3, 1], &[0, 1], &[0, 1, 0]).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn defaults_and_preset() {
        let c = ExperimentConfig::from_toml_str("dataset = \"x.csid\"").unwrap();
        assert_eq!(c.regime, Regime::Small);
        assert_eq!(c.multiples, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(c.p_star_db.get(Regime::Large), 0.75);
        assert_eq!(c.p_star_db.get(Regime::Small), 1.5);
        assert_eq!(c.train.epochs.get(Method::Phase), 300);
        assert_eq!(c.train.epochs.get(Method::Amplitude), 150);
        assert_eq!(c.train.epochs.get(Method::Noise), 150);
        assert_eq!(c.split.test_fraction, 0.2);
        assert_eq!(c.repetitions, 5);
        assert_eq!(c.noise_variance, 1.0);

        let p = ExperimentConfig::from_toml_str("preset = \"preset-ten-percent\"\ndataset = \"x.csid\"").unwrap();
        assert_eq!((p.regime, p.methods.clone(), p.multiples.clone()), (Regime::Small, vec![Method::Phase], vec![10.0]));
        let o = ExperimentConfig::from_toml_str("preset = \"preset-ten-percent\"\ndataset = \"x.csid\"\nregime = \"medium\"").unwrap();
        assert_eq!(o.regime, Regime::Medium);
        assert!(ExperimentConfig::from_toml_str("preset = \"nope\"\ndataset = \"x.csid\"").is_err());
    }

    #[test]
    fn invalid_configs() {
        for text in [
            "",
            "dataset = \"a\"\nmultiples = [2.0, 1.0]",
            "dataset = \"a\"\nmultiples = [0.5]",
            "dataset = \"a\"\nmethods = []",
            "dataset = \"a\"\nrepetitions = 0",
            "dataset = \"a\"\nsplit = { test_fraction = 1.5 }",
            "dataset = \"a\"\nunknown_key = 1",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn config_echo_round_trips_through_json() {
        let mut c = ExperimentConfig::for_scenario(Scenario::room(TensorDims::new(4, 1, 2).unwrap(), 5.0, 3));
        c.nonideality_test = Some(NonidealityProfile::phase());
        let json = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn training_set_sizes_follow_multiple() {
        let s = Scenario::room(TensorDims::new(2, 1, 2).unwrap(), 5.0, 3);
        let train = synthesize_dataset(&s, 7).unwrap();
        for (method, multiple, expected) in
            [(Method::None, 1.0, 7), (Method::None, 2.0, 14), (Method::Phase, 2.5, 18), (Method::Noise, 6.0, 42)]
        {
            let spec = CellSpec {
                environment: "e".into(),
                regime: Regime::Custom(7),
                method,
                multiple,
                p_star_db: 1.5,
                noise_variance: 1.0,
                train: TrainConfig::default(),
                standardize: true,
                seed: 1,
            };
            let (set, prov) = build_training_set(&train, &spec).unwrap();
            assert_eq!(set.len(), expected);
            assert_eq!(prov.len(), expected);
            assert_eq!(&set.samples()[..7], train.samples());
        }
    }
}
