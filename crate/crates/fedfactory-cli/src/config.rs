//! TOML run configuration: schema, validation, and materialization into
//! library types. Structural problems are config errors (exit 2) with the
//! offending key in the message; I/O failures while loading data are runtime
//! errors (exit 1). The file format is documented in `configs/SCHEMA.md`.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedfactory::data::{
    generate_blobs, load_csv, partition, MixtureComponent, PartitionMode, PartitionSpec,
};
use fedfactory::factory::InitMethod;
use fedfactory::protocols::hash_config;
use fedfactory::{
    BlobSpec, FedConfig, GmmConfig, LabeledDataset, Partition, PoEConfig, Rng, TrainConfig,
};

use crate::{CliError, CliResult};

/// Seed-stream offsets. One top-level seed pins the whole experiment; each
/// consumer draws from `seed + offset` so adding a consumer never shifts the
/// streams of the others.
pub const STREAM_DATA: u64 = 0;
pub const STREAM_PARTITION: u64 = 100;
pub const STREAM_FEDAVG: u64 = 200;
pub const STREAM_FEDPROX: u64 = 300;
pub const STREAM_PROTOCOL_A: u64 = 400;
pub const STREAM_PROTOCOL_B: u64 = 500;
pub const STREAM_UNLEARN_SYNTH: u64 = 800;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    ProtocolA,
    ProtocolB,
    Fedavg,
    Fedprox,
    Centralized,
}

impl ProtocolKind {
    pub fn needs_n_target(self) -> bool {
        matches!(self, ProtocolKind::ProtocolA | ProtocolKind::ProtocolB)
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ProtocolKind::ProtocolA => "protocol_a",
            ProtocolKind::ProtocolB => "protocol_b",
            ProtocolKind::Fedavg => "fedavg",
            ProtocolKind::Fedprox => "fedprox",
            ProtocolKind::Centralized => "centralized",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    Csv,
}

/// Dataset source. `kind = "blobs"` takes either the isotropic shorthand
/// (`means` + `sigma`) or explicit `class_mixtures`; `kind = "csv"` takes
/// `path` + `test_path`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_mixtures: Option<Vec<Vec<MixtureComponent>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
}

impl DatasetSection {
    fn validate(&self) -> CliResult<()> {
        match self.kind {
            DatasetKind::Blobs => {
                for key in [
                    ("dataset.path", self.path.is_some()),
                    ("dataset.test_path", self.test_path.is_some()),
                ] {
                    if key.1 {
                        return Err(config_err(format!("{}: not a blobs key", key.0)));
                    }
                }
                let per_class = self
                    .train_per_class
                    .ok_or_else(|| config_err("dataset.train_per_class: required for blobs"))?;
                let test = self
                    .test_per_class
                    .ok_or_else(|| config_err("dataset.test_per_class: required for blobs"))?;
                if per_class == 0 || test == 0 {
                    return Err(config_err(
                        "dataset.train_per_class / test_per_class: must be >= 1",
                    ));
                }
                match (&self.means, self.sigma, &self.class_mixtures) {
                    (Some(means), Some(sigma), None) => {
                        if means.is_empty() {
                            return Err(config_err("dataset.means: needs at least one class"));
                        }
                        let d = means[0].len();
                        if d == 0 || means.iter().any(|m| m.len() != d) {
                            return Err(config_err(
                                "dataset.means: rows must share one nonzero dimension",
                            ));
                        }
                        if !(sigma > 0.0) || !sigma.is_finite() {
                            return Err(config_err(format!(
                                "dataset.sigma: must be finite and > 0, got {sigma}"
                            )));
                        }
                        Ok(())
                    }
                    (None, None, Some(mixtures)) => {
                        if mixtures.is_empty() {
                            return Err(config_err(
                                "dataset.class_mixtures: needs at least one class",
                            ));
                        }
                        Ok(())
                    }
                    _ => Err(config_err(
                        "dataset: blobs takes exactly one of (means + sigma) or class_mixtures",
                    )),
                }
            }
            DatasetKind::Csv => {
                for key in [
                    ("dataset.means", self.means.is_some()),
                    ("dataset.sigma", self.sigma.is_some()),
                    ("dataset.class_mixtures", self.class_mixtures.is_some()),
                    ("dataset.train_per_class", self.train_per_class.is_some()),
                    ("dataset.test_per_class", self.test_per_class.is_some()),
                ] {
                    if key.1 {
                        return Err(config_err(format!("{}: not a csv key", key.0)));
                    }
                }
                if self.path.is_none() {
                    return Err(config_err("dataset.path: required for csv"));
                }
                if self.test_path.is_none() {
                    return Err(config_err("dataset.test_path: required for csv"));
                }
                Ok(())
            }
        }
    }

    fn blob_spec(&self) -> Option<BlobSpec> {
        match self.kind {
            DatasetKind::Csv => None,
            DatasetKind::Blobs => Some(match (&self.means, self.sigma, &self.class_mixtures) {
                (Some(means), Some(sigma), None) => BlobSpec::isotropic(
                    means,
                    sigma,
                    self.train_per_class.unwrap(),
                    self.test_per_class.unwrap(),
                ),
                (_, _, Some(mixtures)) => BlobSpec {
                    class_mixtures: mixtures.clone(),
                    samples_per_class: self.train_per_class.unwrap(),
                    test_per_class: self.test_per_class.unwrap(),
                },
                _ => unreachable!("validated"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionModeName {
    Uniform,
    Dirichlet,
    Silo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub mode: PartitionModeName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub clients: usize,
}

impl PartitionSection {
    fn validate(&self) -> CliResult<()> {
        if self.clients == 0 {
            return Err(config_err("partition.clients: must be >= 1"));
        }
        match (self.mode, self.alpha) {
            (PartitionModeName::Dirichlet, Some(a)) if a > 0.0 && a.is_finite() => Ok(()),
            (PartitionModeName::Dirichlet, Some(a)) => Err(config_err(format!(
                "partition.alpha: must be finite and > 0, got {a}"
            ))),
            (PartitionModeName::Dirichlet, None) => {
                Err(config_err("partition.alpha: required for dirichlet"))
            }
            (_, Some(_)) => Err(config_err(
                "partition.alpha: only valid with mode = \"dirichlet\"",
            )),
            (_, None) => Ok(()),
        }
    }

    pub fn to_spec(&self) -> PartitionSpec {
        let mode = match self.mode {
            PartitionModeName::Uniform => PartitionMode::Uniform,
            PartitionModeName::Dirichlet => PartitionMode::Dirichlet(self.alpha.unwrap()),
            PartitionModeName::Silo => PartitionMode::SingleClassSilo,
        };
        PartitionSpec {
            mode,
            clients: self.clients,
        }
    }

    /// Human-readable label used in results lines and report tables.
    pub fn descriptor(&self) -> String {
        match self.mode {
            PartitionModeName::Uniform => "uniform".into(),
            PartitionModeName::Dirichlet => format!("dirichlet({})", self.alpha.unwrap()),
            PartitionModeName::Silo => "silo".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorySection {
    pub n_components: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub covariance_floor: f64,
}

impl Default for FactorySection {
    fn default() -> Self {
        let g = GmmConfig::default();
        Self {
            n_components: g.n_components,
            max_iters: g.max_iters,
            rel_tol: g.rel_tol,
            covariance_floor: g.covariance_floor,
        }
    }
}

impl FactorySection {
    pub fn to_config(&self) -> GmmConfig {
        GmmConfig {
            n_components: self.n_components,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            covariance_floor: self.covariance_floor,
            init: InitMethod::KMeansPlusPlus,
        }
    }
}

/// SGD settings shared by every trained model. The seed is always the
/// top-level experiment seed, never a key here. `epochs` is ignored by the
/// iterative baselines, which train `fed.local_epochs` per round instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr0: t.lr0,
            weight_decay: t.weight_decay,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr0,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedSection {
    pub rounds: usize,
    pub local_epochs: usize,
    pub client_fraction: f64,
    pub mu_prox: f64,
}

impl Default for FedSection {
    fn default() -> Self {
        let f = FedConfig::default();
        Self {
            rounds: f.rounds,
            local_epochs: f.local_epochs,
            client_fraction: f.client_fraction,
            mu_prox: f.mu_prox,
        }
    }
}

impl FedSection {
    pub fn to_config(&self, train: TrainConfig) -> FedConfig {
        FedConfig {
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            client_fraction: self.client_fraction,
            mu_prox: self.mu_prox,
            train,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoESection {
    pub p_floor: f64,
}

impl Default for PoESection {
    fn default() -> Self {
        Self {
            p_floor: PoEConfig::default().p_floor,
        }
    }
}

impl PoESection {
    pub fn to_config(&self) -> PoEConfig {
        PoEConfig {
            p_floor: self.p_floor,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: ProtocolKind,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_target: Option<usize>,
    pub dataset: DatasetSection,
    pub partition: PartitionSection,
    #[serde(default)]
    pub factory: FactorySection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub fed: FedSection,
    #[serde(default)]
    pub poe: PoESection,
}

/// The fields that determine experiment semantics; `out_dir` is plumbing and
/// stays out of the hash. Serialization order is fixed by this struct, so
/// TOML key order never affects the hash.
#[derive(Serialize)]
struct HashView<'a> {
    protocol: ProtocolKind,
    seed: u64,
    n_target: Option<usize>,
    dataset: &'a DatasetSection,
    partition: &'a PartitionSection,
    factory: &'a FactorySection,
    train: &'a TrainSection,
    fed: &'a FedSection,
    poe: &'a PoESection,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.dataset.validate()?;
        self.partition.validate()?;
        if self.protocol.needs_n_target() {
            match self.n_target {
                Some(n) if n >= 1 => {}
                Some(_) => return Err(config_err("n_target: must be >= 1")),
                None => {
                    return Err(config_err(format!(
                        "n_target: required for protocol \"{}\"",
                        self.protocol
                    )))
                }
            }
        }
        let train = self.train.to_config(self.seed);
        match self.protocol {
            ProtocolKind::Fedavg | ProtocolKind::Fedprox => {
                self.fed
                    .to_config(train)
                    .validate()
                    .map_err(|e| config_err(format!("fed: {e}")))?;
            }
            _ => {
                train
                    .validate()
                    .map_err(|e| config_err(format!("train: {e}")))?;
            }
        }
        Ok(())
    }

    /// Consistency checks that need the materialized class count.
    pub fn validate_against_classes(&self, n_classes: usize) -> CliResult<()> {
        if self.partition.mode == PartitionModeName::Silo && self.partition.clients != n_classes {
            return Err(config_err(format!(
                "partition.clients: single-class silo requires K == C, got K={} with C={n_classes}",
                self.partition.clients
            )));
        }
        if self.protocol == ProtocolKind::ProtocolB {
            self.poe
                .to_config()
                .validate(n_classes)
                .map_err(|e| config_err(format!("poe.p_floor: {e}")))?;
        }
        Ok(())
    }

    /// Stable identifier: SHA-256 over the canonical JSON of the semantic
    /// fields. Equal for semantically identical files regardless of TOML key
    /// order.
    pub fn run_id(&self) -> String {
        hash_config(&HashView {
            protocol: self.protocol,
            seed: self.seed,
            n_target: self.n_target,
            dataset: &self.dataset,
            partition: &self.partition,
            factory: &self.factory,
            train: &self.train,
            fed: &self.fed,
            poe: &self.poe,
        })
    }

    pub fn out_dir(&self) -> CliResult<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| config_err("out_dir: set it in the config file or pass --out"))
    }
}

pub fn load_config(
    path: &Path,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: RunConfig =
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    if let Some(out) = out_override {
        cfg.out_dir = Some(out.to_path_buf());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Materialized experiment inputs.
pub struct World {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub part: Partition,
    pub n_classes: usize,
}

pub fn build_world(cfg: &RunConfig) -> CliResult<World> {
    let (train, test) = match cfg.dataset.kind {
        DatasetKind::Blobs => {
            let spec = cfg.dataset.blob_spec().expect("validated as blobs");
            let (train, test, _) = generate_blobs(&spec, &mut Rng::new(cfg.seed + STREAM_DATA))
                .map_err(|e| config_err(format!("dataset: {e}")))?;
            (train, test)
        }
        DatasetKind::Csv => {
            let path = cfg.dataset.path.as_ref().expect("validated as csv");
            let test_path = cfg.dataset.test_path.as_ref().expect("validated as csv");
            let train = load_csv(path)
                .map_err(|e| CliError::runtime(format!("loading {}: {e}", path.display())))?;
            let test = load_csv(test_path)
                .map_err(|e| CliError::runtime(format!("loading {}: {e}", test_path.display())))?;
            (train, test)
        }
    };
    let n_classes = train.n_classes().max(test.n_classes());
    cfg.validate_against_classes(n_classes)?;
    let part = partition(
        &train,
        &cfg.partition.to_spec(),
        &mut Rng::new(cfg.seed + STREAM_PARTITION),
    )
    .map_err(|e| CliError::runtime(format!("partitioning: {e}")))?;
    Ok(World {
        train,
        test,
        part,
        n_classes,
    })
}
