//! End-to-end orchestration: Protocol A (one-shot centralized synthesis),
//! Protocol B (peer broadcast, local experts, product-of-experts inference),
//! the centralized upper-bound baseline, and communication/compute
//! accounting.

use ndarray::{Array2, ArrayView1};
use sha2::{Digest, Sha256};

use crate::core::{BoundedLoss, ClassId, Error, Result, Rng};
use crate::data::{LabeledDataset, Partition};
use crate::factory::{serialize_factory, train_factory_traced, FactoryParams, GmmConfig};
use crate::genmatrix::{
    allocate_quotas, build_matrix, largest_remainder_split, synthesize_global, GenerativeMatrix,
    QuotaPlan,
};
use crate::learner::{sgd_fit, train_classifier, ClassifierModel, SgdOptions, TrainConfig};
use crate::metrics::{accuracy, macro_ovr_auroc, per_class_accuracy};

/// Analytic multiply-add proxy per (sample × component × dim) EM iteration.
pub const EM_FLOPS_PER_TERM: u64 = 10;
/// Analytic multiply-add proxy per (sample × class × dim) SGD epoch.
pub const SGD_FLOPS_PER_TERM: u64 = 6;
/// Analytic multiply-add proxy per sampled coordinate during synthesis.
pub const SYNTH_FLOPS_PER_TERM: u64 = 4;

pub fn em_flops(iterations: usize, n: usize, components: usize, dim: usize) -> u64 {
    iterations.max(1) as u64 * n as u64 * components as u64 * dim as u64 * EM_FLOPS_PER_TERM
}

pub fn sgd_flops(epochs: usize, n: usize, classes: usize, dim: usize) -> u64 {
    epochs as u64 * n as u64 * classes as u64 * dim as u64 * SGD_FLOPS_PER_TERM
}

pub fn synth_flops(n: usize, dim: usize) -> u64 {
    n as u64 * dim as u64 * SYNTH_FLOPS_PER_TERM
}

/// Communication and compute counters for one run. All counters only ever
/// increase while a run executes.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CostLedger {
    /// Per-client count of upstream communication rounds.
    pub uplink_rounds: Vec<u32>,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub broadcast_bytes: u64,
    pub flops_proxy: u64,
}

impl CostLedger {
    pub fn new(n_clients: usize) -> Self {
        Self {
            uplink_rounds: vec![0; n_clients],
            uplink_bytes: 0,
            downlink_bytes: 0,
            broadcast_bytes: 0,
            flops_proxy: 0,
        }
    }

    pub fn max_rounds(&self) -> u32 {
        self.uplink_rounds.iter().copied().max().unwrap_or(0)
    }
}

/// Product-of-experts inference settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoEConfig {
    pub p_floor: f64,
}

impl Default for PoEConfig {
    fn default() -> Self {
        Self { p_floor: 1e-6 }
    }
}

impl PoEConfig {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if !(self.p_floor > 0.0) || self.p_floor >= 1.0 / n_classes as f64 {
            return Err(Error::InvalidInput(format!(
                "p_floor must satisfy 0 < p_floor < 1/C, got {} for C={n_classes}",
                self.p_floor
            )));
        }
        Ok(())
    }
}

/// Held-out evaluation plus the run's accounting snapshot.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentResult {
    pub protocol: String,
    pub accuracy: f64,
    pub auroc: f64,
    /// Indexed by class; `None` where the test set has no samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub ledger: CostLedger,
    pub config_hash: String,
    pub seed: u64,
}

/// SHA-256 over the canonical JSON encoding; struct fields serialize in
/// declaration order, so the hash is stable across runs and processes.
pub fn hash_config<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Byte length of one model checkpoint on the wire.
pub fn model_payload_bytes(model: &ClassifierModel) -> u64 {
    model.to_bytes().len() as u64
}

fn argmax_lowest(probs: &[f64]) -> ClassId {
    let mut best = 0;
    for (c, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = c;
        }
    }
    best
}

/// Product-of-experts consensus: clamp each expert's probabilities at
/// `p_floor`, sum the logs, subtract the max for stability, exponentiate and
/// renormalize. Output sums to 1 within 1e-12.
pub fn poe_inference(
    experts: &[ClassifierModel],
    x: ArrayView1<'_, f64>,
    cfg: &PoEConfig,
) -> Result<Vec<f64>> {
    let Some(first) = experts.first() else {
        return Err(Error::InvalidInput(
            "product of experts needs ≥ 1 expert".into(),
        ));
    };
    let (c, d) = (first.n_classes(), first.dim());
    if experts.iter().any(|e| e.n_classes() != c || e.dim() != d) {
        return Err(Error::InvalidInput(
            "experts disagree on model shape".into(),
        ));
    }
    cfg.validate(c)?;
    let mut log_product = vec![0.0; c];
    for expert in experts {
        let probs = expert.predict_proba(x)?;
        for (acc, &p) in log_product.iter_mut().zip(&probs) {
            *acc += p.max(cfg.p_floor).ln();
        }
    }
    let max = log_product
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = log_product.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    Ok(out)
}

/// Phase I shared by both protocols: one factory per occupied (class,
/// client) cell, each on its own spawned stream. Returns the factories in
/// (class, client) order plus the accumulated EM compute.
fn train_all_factories(
    train: &LabeledDataset,
    partition: &Partition,
    gmm: &GmmConfig,
    rng: &Rng,
) -> Result<(Vec<FactoryParams>, u64)> {
    let c_total = partition.n_classes();
    let k_total = partition.n_clients();
    let mut factories = Vec::new();
    let mut flops = 0u64;
    for class in 0..c_total {
        for client in 0..k_total {
            let n = partition.count(class, client);
            if n == 0 {
                continue;
            }
            let shard_indices: Vec<usize> = partition
                .client_indices(client)
                .into_iter()
                .filter(|&i| train.labels()[i] == class)
                .collect();
            let shard = train.subset(&shard_indices).owned_by(client);
            let mut cell_rng = rng.spawn("factory", (class * k_total + client) as u64);
            let (params, trace) =
                train_factory_traced(&shard, gmm, &mut cell_rng).map_err(|e| {
                    Error::InvalidInput(format!("factory for cell ({class}, {client}): {e}"))
                })?;
            flops += em_flops(trace.iterations(), n, gmm.n_components, train.dim());
            factories.push(params);
        }
    }
    Ok((factories, flops))
}

pub(crate) fn evaluate_model(
    protocol: &str,
    model: &ClassifierModel,
    test: &LabeledDataset,
    ledger: CostLedger,
    config_hash: String,
    seed: u64,
) -> Result<ExperimentResult> {
    let scores = model.predict_proba_batch(test)?;
    let auroc = macro_ovr_auroc(scores.view(), test.labels())?;
    Ok(ExperimentResult {
        protocol: protocol.to_string(),
        accuracy: accuracy(model, test)?,
        auroc: auroc.value,
        per_class_accuracy: per_class_accuracy(model, test)?,
        ledger,
        config_hash,
        seed,
    })
}

#[derive(serde::Serialize)]
struct ProtocolConfigSnapshot<'a> {
    protocol: &'a str,
    gmm: &'a GmmConfig,
    n_target: usize,
    train: &'a TrainConfig,
    p_min: f64,
    p_floor: Option<f64>,
    seed: u64,
}

/// Everything Protocol A produced, for audits and unlearning flows.
#[derive(Debug, Clone)]
pub struct ProtocolAOutput {
    pub model: ClassifierModel,
    pub result: ExperimentResult,
    pub matrix: GenerativeMatrix,
    pub quota_plan: QuotaPlan,
    pub synthetic: LabeledDataset,
}

/// Protocol A: every client trains factories locally (Phase I), uploads
/// them exactly once (Phase II), and the server synthesizes a class-balanced
/// dataset and trains the global classifier on synthetic data only, then
/// evaluates on real held-out data (Phase III).
#[allow(clippy::too_many_arguments)]
pub fn run_protocol_a(
    train: &LabeledDataset,
    partition: &Partition,
    test: &LabeledDataset,
    gmm: &GmmConfig,
    n_target: usize,
    train_cfg: &TrainConfig,
    loss: &BoundedLoss,
    rng: &Rng,
) -> Result<ProtocolAOutput> {
    let k_total = partition.n_clients();
    let c_total = partition.n_classes();
    let mut ledger = CostLedger::new(k_total);

    let (factories, em) = train_all_factories(train, partition, gmm, rng)?;
    ledger.flops_proxy += em;

    // Phase II: one upstream transmission per client, bytes counted.
    for params in &factories {
        ledger.uplink_bytes += serialize_factory(params)?.len() as u64;
    }
    for r in ledger.uplink_rounds.iter_mut() {
        *r = 1;
    }
    let matrix = build_matrix(c_total, k_total, factories)?;
    let plan = allocate_quotas(&matrix, n_target);
    let synthetic = synthesize_global(&matrix, &plan, rng)?;
    ledger.flops_proxy += synth_flops(synthetic.len(), train.dim());

    let model =
        crate::learner::train_classifier_with_classes(&synthetic, c_total, train_cfg, loss)?;
    ledger.flops_proxy += sgd_flops(train_cfg.epochs, synthetic.len(), c_total, train.dim());

    let config_hash = hash_config(&ProtocolConfigSnapshot {
        protocol: "protocol_a",
        gmm,
        n_target,
        train: train_cfg,
        p_min: loss.p_min(),
        p_floor: None,
        seed: rng.seed(),
    });
    let result = evaluate_model("protocol_a", &model, test, ledger, config_hash, rng.seed())?;
    Ok(ProtocolAOutput {
        model,
        result,
        matrix,
        quota_plan: plan,
        synthetic,
    })
}

/// Everything Protocol B produced.
#[derive(Debug, Clone)]
pub struct ProtocolBOutput {
    pub experts: Vec<ClassifierModel>,
    pub result: ExperimentResult,
    pub matrix: GenerativeMatrix,
}

/// Protocol B: every client broadcasts its factories to the other K−1
/// peers, builds a mixed dataset of its real shard plus synthetic
/// complements up to `n_target` per class, and trains a local expert;
/// inference is the product of experts.
#[allow(clippy::too_many_arguments)]
pub fn run_protocol_b(
    train: &LabeledDataset,
    partition: &Partition,
    test: &LabeledDataset,
    gmm: &GmmConfig,
    n_target: usize,
    train_cfg: &TrainConfig,
    poe: &PoEConfig,
    loss: &BoundedLoss,
    rng: &Rng,
) -> Result<ProtocolBOutput> {
    let k_total = partition.n_clients();
    let c_total = partition.n_classes();
    poe.validate(c_total)?;
    let mut ledger = CostLedger::new(k_total);

    let (factories, em) = train_all_factories(train, partition, gmm, rng)?;
    ledger.flops_proxy += em;
    for params in &factories {
        ledger.broadcast_bytes += serialize_factory(params)?.len() as u64 * (k_total as u64 - 1);
    }
    for r in ledger.uplink_rounds.iter_mut() {
        *r = 1;
    }
    let matrix = build_matrix(c_total, k_total, factories)?;

    let shuffle_base = Rng::new(train_cfg.seed);
    let mut experts = Vec::with_capacity(k_total);
    for client in 0..k_total {
        let real = partition.client_dataset(train, client);
        let mut parts: Vec<LabeledDataset> = vec![real];
        for class in 0..c_total {
            let have = partition.count(class, client);
            let need = n_target.saturating_sub(have);
            if need == 0 {
                continue;
            }
            let providers: Vec<(usize, usize)> = matrix
                .providers_of(class)
                .into_iter()
                .filter(|&(j, _)| j != client)
                .collect();
            if providers.is_empty() {
                if have == 0 {
                    log::warn!("protocol B: client {client} has no source for class {class}");
                }
                continue;
            }
            for (provider, quota) in largest_remainder_split(&providers, need) {
                if quota == 0 {
                    continue;
                }
                let stream_id = ((client * c_total + class) * k_total + provider) as u64;
                let mut mix_rng = rng.spawn("protoB/mix", stream_id);
                let params = matrix.get(class, provider).expect("provider occupied");
                parts.push(crate::factory::sample_factory(params, quota, &mut mix_rng)?);
                ledger.flops_proxy += synth_flops(quota, train.dim());
            }
        }
        let refs: Vec<&LabeledDataset> = parts.iter().collect();
        let mix = LabeledDataset::concat(&refs)?;
        if mix.is_empty() {
            return Err(Error::InvalidInput(format!(
                "protocol B: client {client} has an empty mixed dataset"
            )));
        }
        let mut expert = ClassifierModel::zero_init(c_total, train.dim());
        let mut fit_rng = shuffle_base.spawn("protoB/expert", client as u64);
        sgd_fit(
            &mut expert,
            &mix,
            &SgdOptions {
                epochs: train_cfg.epochs,
                batch_size: train_cfg.batch_size,
                lr0: train_cfg.lr0,
                weight_decay: train_cfg.weight_decay,
                prox: None,
            },
            loss,
            &mut fit_rng,
        )?;
        ledger.flops_proxy += sgd_flops(train_cfg.epochs, mix.len(), c_total, train.dim());
        experts.push(expert);
    }

    // PoE evaluation on the held-out test set.
    let mut scores = Array2::zeros((test.len(), c_total));
    let mut correct = 0usize;
    let mut per_class_hits = vec![0usize; c_total];
    let mut per_class_totals = vec![0usize; c_total];
    for i in 0..test.len() {
        let probs = poe_inference(&experts, test.sample(i), poe)?;
        for (c, &p) in probs.iter().enumerate() {
            scores[(i, c)] = p;
        }
        let label = test.labels()[i];
        per_class_totals[label] += 1;
        if argmax_lowest(&probs) == label {
            correct += 1;
            per_class_hits[label] += 1;
        }
    }
    let auroc = macro_ovr_auroc(scores.view(), test.labels())?;
    let config_hash = hash_config(&ProtocolConfigSnapshot {
        protocol: "protocol_b",
        gmm,
        n_target,
        train: train_cfg,
        p_min: loss.p_min(),
        p_floor: Some(poe.p_floor),
        seed: rng.seed(),
    });
    let result = ExperimentResult {
        protocol: "protocol_b".into(),
        accuracy: correct as f64 / test.len() as f64,
        auroc: auroc.value,
        per_class_accuracy: (0..c_total)
            .map(|c| {
                (per_class_totals[c] > 0)
                    .then(|| per_class_hits[c] as f64 / per_class_totals[c] as f64)
            })
            .collect(),
        ledger,
        config_hash,
        seed: rng.seed(),
    };
    Ok(ProtocolBOutput {
        experts,
        result,
        matrix,
    })
}

#[derive(serde::Serialize)]
struct CentralizedConfigSnapshot<'a> {
    protocol: &'a str,
    train: &'a TrainConfig,
    p_min: f64,
    seed: u64,
}

/// Centralized upper bound: plain training on the pooled real data. The
/// model equals `train_classifier` exactly for the same config, and the
/// ledger records zero communication.
pub fn run_centralized_baseline(
    train: &LabeledDataset,
    test: &LabeledDataset,
    train_cfg: &TrainConfig,
    loss: &BoundedLoss,
) -> Result<(ClassifierModel, ExperimentResult)> {
    let model = train_classifier(train, train_cfg, loss)?;
    let mut ledger = CostLedger::new(0);
    ledger.flops_proxy = sgd_flops(
        train_cfg.epochs,
        train.len(),
        train.n_classes(),
        train.dim(),
    );
    let config_hash = hash_config(&CentralizedConfigSnapshot {
        protocol: "centralized",
        train: train_cfg,
        p_min: loss.p_min(),
        seed: train_cfg.seed,
    });
    let result = evaluate_model(
        "centralized",
        &model,
        test,
        ledger,
        config_hash,
        train_cfg.seed,
    )?;
    Ok((model, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs, partition, BlobSpec, PartitionMode, PartitionSpec};
    use ndarray::array;
    use rand::Rng as _;

    fn bias_expert(log_probs: &[f64]) -> ClassifierModel {
        // Bias-only model: softmax(bias) returns exp(bias)/Σ, so passing
        // ln(p) as bias yields exactly p when p sums to 1.
        let c = log_probs.len();
        ClassifierModel::from_parts(
            Array2::zeros((c, 1)),
            ndarray::Array1::from_vec(log_probs.to_vec()),
        )
        .unwrap()
    }

    fn silo_world(
        n_classes: usize,
        per_class: usize,
        seed: u64,
    ) -> (LabeledDataset, Partition, LabeledDataset) {
        let means: Vec<Vec<f64>> = (0..n_classes)
            .map(|c| {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / n_classes as f64;
                vec![4.0 * angle.cos(), 4.0 * angle.sin()]
            })
            .collect();
        let spec = BlobSpec::isotropic(&means, 0.7, per_class, 50);
        let (train, test, _) = generate_blobs(&spec, &mut Rng::new(seed)).unwrap();
        let part = partition(
            &train,
            &PartitionSpec {
                mode: PartitionMode::SingleClassSilo,
                clients: n_classes,
            },
            &mut Rng::new(seed + 1),
        )
        .unwrap();
        (train, part, test)
    }

    #[test]
    fn poe_uniform_and_symmetric_examples() {
        let cfg = PoEConfig::default();
        let x = array![0.0];

        let uniform = vec![bias_expert(&[0.5f64.ln(), 0.5f64.ln()]); 3];
        let out = poe_inference(&uniform, x.view(), &cfg).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-12 && (out[1] - 0.5).abs() < 1e-12);

        let a = bias_expert(&[0.9f64.ln(), 0.1f64.ln()]);
        let b = bias_expert(&[0.1f64.ln(), 0.9f64.ln()]);
        let out = poe_inference(&[a, b], x.view(), &cfg).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-12, "symmetric product {out:?}");
    }

    #[test]
    fn poe_floor_veto() {
        let cfg = PoEConfig::default();
        let x = array![0.0];
        // One expert drives class 0 below the floor; two peers stay at 0.5.
        let tiny = 2e-9f64;
        let confident = bias_expert(&[tiny.ln(), (1.0 - tiny).ln()]);
        let neutral = bias_expert(&[0.5f64.ln(), 0.5f64.ln()]);
        let out = poe_inference(&[confident, neutral.clone(), neutral], x.view(), &cfg).unwrap();
        // Pre-normalization masses: (p_floor·0.25, (1−2e-9)·0.25).
        let expected_ratio = cfg.p_floor / (1.0 - tiny);
        let ratio = out[0] / out[1];
        assert!(
            (ratio - expected_ratio).abs() / expected_ratio < 1e-9,
            "ratio {ratio} vs {expected_ratio}"
        );
    }

    #[test]
    fn poe_single_expert_is_its_softmax() {
        let expert = bias_expert(&[0.3f64.ln(), 0.25f64.ln(), 0.45f64.ln()]);
        let x = array![0.0];
        let direct = expert.predict_proba(x.view()).unwrap();
        let poe = poe_inference(&[expert], x.view(), &PoEConfig::default()).unwrap();
        for (a, b) in direct.iter().zip(&poe) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn poe_normalizes_over_random_expert_sets() {
        let mut rng = Rng::new(80);
        let cfg = PoEConfig::default();
        for _ in 0..1000 {
            let c = rng.gen_range(2..5usize);
            let d = rng.gen_range(1..4usize);
            let k = rng.gen_range(1..5usize);
            let experts: Vec<ClassifierModel> = (0..k)
                .map(|_| {
                    ClassifierModel::from_parts(
                        Array2::from_shape_fn((c, d), |_| rng.gen_range(-20.0..20.0)),
                        ndarray::Array1::from_shape_fn(c, |_| rng.gen_range(-20.0..20.0)),
                    )
                    .unwrap()
                })
                .collect();
            let x = ndarray::Array1::from_shape_fn(d, |_| rng.gen_range(-3.0..3.0));
            let out = poe_inference(&experts, x.view(), &cfg).unwrap();
            let sum: f64 = out.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
        }
    }

    #[test]
    fn poe_validates_shapes_and_floor() {
        let a = bias_expert(&[0.5f64.ln(), 0.5f64.ln()]);
        let b = bias_expert(&[0.3f64.ln(), 0.3f64.ln(), 0.4f64.ln()]);
        let x = array![0.0];
        assert!(poe_inference(&[a.clone(), b], x.view(), &PoEConfig::default()).is_err());
        assert!(poe_inference(&[], x.view(), &PoEConfig::default()).is_err());
        let bad_floor = PoEConfig { p_floor: 0.6 };
        assert!(poe_inference(&[a], x.view(), &bad_floor).is_err());
    }

    #[test]
    fn protocol_a_one_shot_accounting_and_balance() {
        let (train, part, test) = silo_world(3, 60, 90);
        let gmm = GmmConfig {
            n_components: 2,
            ..GmmConfig::default()
        };
        let cfg = TrainConfig {
            epochs: 30,
            seed: 5,
            ..TrainConfig::default()
        };
        let rng = Rng::new(91);
        let out = run_protocol_a(
            &train,
            &part,
            &test,
            &gmm,
            100,
            &cfg,
            &BoundedLoss::default(),
            &rng,
        )
        .unwrap();

        assert_eq!(out.result.ledger.uplink_rounds, vec![1, 1, 1]);
        assert_eq!(out.result.ledger.downlink_bytes, 0);
        assert!(out.result.ledger.uplink_bytes > 0);
        assert_eq!(out.synthetic.class_counts(), vec![100, 100, 100]);
        assert!(
            out.result.accuracy > 0.8,
            "accuracy {}",
            out.result.accuracy
        );
        assert_eq!(out.matrix.n_occupied(), 3);

        // Determinism: identical inputs reproduce the identical run.
        let again = run_protocol_a(
            &train,
            &part,
            &test,
            &gmm,
            100,
            &cfg,
            &BoundedLoss::default(),
            &rng,
        )
        .unwrap();
        assert_eq!(out.model, again.model);
        assert_eq!(out.result, again.result);
    }

    #[test]
    fn protocol_a_single_client_runs() {
        let spec = BlobSpec::isotropic(&[vec![-4.0, 0.0], vec![4.0, 0.0]], 0.7, 60, 40);
        let (train, test, _) = generate_blobs(&spec, &mut Rng::new(92)).unwrap();
        let part = partition(
            &train,
            &PartitionSpec {
                mode: PartitionMode::Uniform,
                clients: 1,
            },
            &mut Rng::new(93),
        )
        .unwrap();
        let gmm = GmmConfig {
            n_components: 2,
            ..GmmConfig::default()
        };
        let cfg = TrainConfig {
            epochs: 30,
            seed: 6,
            ..TrainConfig::default()
        };
        let out = run_protocol_a(
            &train,
            &part,
            &test,
            &gmm,
            80,
            &cfg,
            &BoundedLoss::default(),
            &Rng::new(94),
        )
        .unwrap();
        assert_eq!(out.result.ledger.uplink_rounds, vec![1]);
        assert!(out.result.accuracy > 0.9);
    }

    #[test]
    fn protocol_b_broadcast_matches_protocol_a_uplink() {
        let (train, part, test) = silo_world(3, 60, 95);
        let gmm = GmmConfig {
            n_components: 2,
            ..GmmConfig::default()
        };
        let cfg = TrainConfig {
            epochs: 30,
            seed: 7,
            ..TrainConfig::default()
        };
        let loss = BoundedLoss::default();
        let rng = Rng::new(96);
        let a = run_protocol_a(&train, &part, &test, &gmm, 100, &cfg, &loss, &rng).unwrap();
        let b = run_protocol_b(
            &train,
            &part,
            &test,
            &gmm,
            100,
            &cfg,
            &PoEConfig::default(),
            &loss,
            &rng,
        )
        .unwrap();
        let k = part.n_clients() as u64;
        assert_eq!(
            b.result.ledger.broadcast_bytes,
            a.result.ledger.uplink_bytes * (k - 1)
        );
        assert_eq!(b.experts.len(), 3);
        assert_eq!(b.result.ledger.uplink_rounds, vec![1, 1, 1]);
        assert!(b.result.accuracy > 0.8, "accuracy {}", b.result.accuracy);
        assert_ne!(a.result.config_hash, b.result.config_hash);
    }

    #[test]
    fn centralized_baseline_is_a_thin_wrapper() {
        let spec = BlobSpec::isotropic(&[vec![-4.0, 0.0], vec![4.0, 0.0]], 0.5, 100, 60);
        let (train, test, _) = generate_blobs(&spec, &mut Rng::new(97)).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            seed: 8,
            ..TrainConfig::default()
        };
        let loss = BoundedLoss::default();
        let (model, result) = run_centralized_baseline(&train, &test, &cfg, &loss).unwrap();
        let direct = train_classifier(&train, &cfg, &loss).unwrap();
        assert_eq!(model, direct);
        assert!(result.accuracy >= 0.99);
        assert_eq!(result.ledger.uplink_bytes, 0);
        assert_eq!(result.ledger.broadcast_bytes, 0);
        assert_eq!(result.ledger.downlink_bytes, 0);
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let cfg = TrainConfig::default();
        let a = hash_config(&cfg);
        let b = hash_config(&cfg);
        assert_eq!(a, b);
        let other = TrainConfig {
            epochs: cfg.epochs + 1,
            ..cfg
        };
        assert_ne!(a, hash_config(&other));
    }
}
