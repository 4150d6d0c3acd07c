//! Iterative federated baselines: FedAvg and FedProx with full or partial
//! client participation, dataset-size-weighted aggregation, and per-round
//! communication accounting.

use ndarray::{Array1, Array2};

use crate::core::{BoundedLoss, Error, Result, Rng};
use crate::data::{LabeledDataset, Partition};
use crate::learner::{sgd_fit, ClassifierModel, SgdOptions, TrainConfig};
use crate::protocols::{
    evaluate_model, hash_config, model_payload_bytes, sgd_flops, CostLedger, ExperimentResult,
};

/// Settings for the iterative baselines. `train.epochs` is ignored; the
/// per-round work is `local_epochs`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub client_fraction: f64,
    pub mu_prox: f64,
    pub train: TrainConfig,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            rounds: 200,
            local_epochs: 5,
            client_fraction: 1.0,
            mu_prox: 0.01,
            train: TrainConfig::default(),
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 {
            return Err(Error::InvalidInput(
                "rounds and local_epochs must be ≥ 1".into(),
            ));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "client_fraction must be in (0, 1], got {}",
                self.client_fraction
            )));
        }
        if !(self.mu_prox >= 0.0 && self.mu_prox.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "mu_prox must be finite and ≥ 0, got {}",
                self.mu_prox
            )));
        }
        self.train.validate()
    }
}

/// FedAvg: local SGD on each selected client followed by dataset-size
/// weighted averaging, for `cfg.rounds` rounds.
pub fn run_fedavg(
    train: &LabeledDataset,
    partition: &Partition,
    test: &LabeledDataset,
    cfg: &FedConfig,
    loss: &BoundedLoss,
    rng: &Rng,
) -> Result<(ClassifierModel, ExperimentResult)> {
    run_federated(train, partition, test, cfg, 0.0, "fedavg", loss, rng)
}

/// FedProx: FedAvg with every local step pulled toward the round's global
/// model with strength `cfg.mu_prox`. At μ=0 the update path is identical
/// to FedAvg.
pub fn run_fedprox(
    train: &LabeledDataset,
    partition: &Partition,
    test: &LabeledDataset,
    cfg: &FedConfig,
    loss: &BoundedLoss,
    rng: &Rng,
) -> Result<(ClassifierModel, ExperimentResult)> {
    run_federated(
        train,
        partition,
        test,
        cfg,
        cfg.mu_prox,
        "fedprox",
        loss,
        rng,
    )
}

#[derive(serde::Serialize)]
struct FedConfigSnapshot<'a> {
    protocol: &'a str,
    cfg: &'a FedConfig,
    mu: f64,
    p_min: f64,
    seed: u64,
}

#[allow(clippy::too_many_arguments)]
fn run_federated(
    train: &LabeledDataset,
    partition: &Partition,
    test: &LabeledDataset,
    cfg: &FedConfig,
    mu: f64,
    protocol: &str,
    loss: &BoundedLoss,
    rng: &Rng,
) -> Result<(ClassifierModel, ExperimentResult)> {
    cfg.validate()?;
    let k_total = partition.n_clients();
    let c_total = partition.n_classes();
    let d = train.dim();
    let client_data: Vec<LabeledDataset> = (0..k_total)
        .map(|k| partition.client_dataset(train, k))
        .collect();
    if client_data.iter().all(|ds| ds.is_empty()) {
        return Err(Error::InvalidInput("every client is empty".into()));
    }

    let mut global = ClassifierModel::zero_init(c_total, d);
    let payload = model_payload_bytes(&global);
    let mut ledger = CostLedger::new(k_total);
    // Shuffle streams are keyed off the training seed so two runs with the
    // same config replay the same batches regardless of the experiment rng.
    let shuffle_base = Rng::new(cfg.train.seed);

    for round in 0..cfg.rounds {
        let selected = select_clients(k_total, cfg.client_fraction, round, rng);
        let mut locals: Vec<(usize, ClassifierModel)> = Vec::new();
        for &k in &selected {
            let data = &client_data[k];
            if data.is_empty() {
                log::warn!("round {round}: client {k} has no data, skipped");
                continue;
            }
            let mut local = global.clone();
            let mut fit_rng = shuffle_base.spawn("fed/local", (round * k_total + k) as u64);
            sgd_fit(
                &mut local,
                data,
                &SgdOptions {
                    epochs: cfg.local_epochs,
                    batch_size: cfg.train.batch_size,
                    lr0: cfg.train.lr0,
                    weight_decay: cfg.train.weight_decay,
                    prox: (mu > 0.0).then_some((mu, &global)),
                },
                loss,
                &mut fit_rng,
            )?;
            ledger.flops_proxy += sgd_flops(cfg.local_epochs, data.len(), c_total, d);
            // One model down, one model up, per participating client.
            ledger.downlink_bytes += payload;
            ledger.uplink_bytes += payload;
            ledger.uplink_rounds[k] += 1;
            locals.push((data.len(), local));
        }
        if locals.is_empty() {
            log::warn!("round {round}: no participating clients, global unchanged");
            continue;
        }
        global = aggregate(&locals)?;
    }

    let config_hash = hash_config(&FedConfigSnapshot {
        protocol,
        cfg,
        mu,
        p_min: loss.p_min(),
        seed: rng.seed(),
    });
    let result = evaluate_model(protocol, &global, test, ledger, config_hash, rng.seed())?;
    Ok((global, result))
}

/// Participating clients for one round, ascending. Full participation skips
/// sampling entirely; otherwise ⌈fraction·K⌉ clients are drawn without
/// replacement from a per-round stream.
fn select_clients(k_total: usize, fraction: f64, round: usize, rng: &Rng) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..k_total).collect();
    }
    let take = ((fraction * k_total as f64).ceil() as usize).clamp(1, k_total);
    let mut pool: Vec<usize> = (0..k_total).collect();
    let mut round_rng = rng.spawn("fed/select", round as u64);
    crate::data::shuffle(&mut pool, &mut round_rng);
    let mut chosen: Vec<usize> = pool.into_iter().take(take).collect();
    chosen.sort_unstable();
    chosen
}

/// Dataset-size-weighted mean of client models: w ← Σ_k (n_k/Σn)·w_k.
fn aggregate(locals: &[(usize, ClassifierModel)]) -> Result<ClassifierModel> {
    let (_, first) = &locals[0];
    let total: f64 = locals.iter().map(|&(n, _)| n as f64).sum();
    let mut weights = Array2::<f64>::zeros((first.n_classes(), first.dim()));
    let mut bias = Array1::<f64>::zeros(first.n_classes());
    for (n, model) in locals {
        let alpha = *n as f64 / total;
        weights.scaled_add(alpha, model.weights());
        bias.scaled_add(alpha, model.bias());
    }
    ClassifierModel::from_parts(weights, bias)
}
