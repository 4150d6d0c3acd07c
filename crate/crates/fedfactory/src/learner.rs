//! Multinomial linear classifier under the bounded clipped log-loss, trained
//! with mini-batch SGD and cosine-annealed learning rate.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng as _;

use crate::core::{BoundedLoss, ClassId, Error, Result, Rng};
use crate::data::{shuffle, LabeledDataset};

const CHECKPOINT_MAGIC: &[u8; 4] = b"FFCK";
const CHECKPOINT_VERSION: u16 = 1;

/// Linear softmax classifier: logits = `W x + b` with `W` of shape C×d.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl ClassifierModel {
    pub fn zero_init(n_classes: usize, dim: usize) -> Self {
        Self {
            weights: Array2::zeros((n_classes, dim)),
            bias: Array1::zeros(n_classes),
        }
    }

    pub fn from_parts(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::InvalidInput(format!(
                "weights have {} rows but bias has {} entries",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite model parameter".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn predict_logits(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.weights.dot(&x) + &self.bias)
    }

    /// Softmax of the logits, max-subtracted for stability; sums to 1 within
    /// 1e-12.
    pub fn predict_proba(&self, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        let logits = self.predict_logits(x)?;
        Ok(softmax(logits.as_slice().expect("contiguous")))
    }

    /// Argmax class; exact probability ties resolve to the lowest class id.
    pub fn predict_class(&self, x: ArrayView1<'_, f64>) -> Result<ClassId> {
        let logits = self.predict_logits(x)?;
        let mut best = 0;
        for (c, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// N×C probability matrix over a dataset, for AUROC scoring.
    pub fn predict_proba_batch(&self, data: &LabeledDataset) -> Result<Array2<f64>> {
        let mut scores = Array2::zeros((data.len(), self.n_classes()));
        for i in 0..data.len() {
            let probs = self.predict_proba(data.sample(i))?;
            for (c, &p) in probs.iter().enumerate() {
                scores[(i, c)] = p;
            }
        }
        Ok(scores)
    }

    /// Versioned binary checkpoint: magic, version, shape, row-major weights,
    /// bias, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.n_classes();
        let d = self.dim();
        let mut out = Vec::with_capacity(10 + 8 * (c * d + c));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(
            &u16::try_from(c)
                .expect("class count fits u16")
                .to_le_bytes(),
        );
        out.extend_from_slice(&u16::try_from(d).expect("dimension fits u16").to_le_bytes());
        for row in self.weights.rows() {
            for &v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for &v in &self.bias {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, message: &str| Error::Format {
            offset,
            message: message.to_string(),
        };
        if bytes.len() < 10 {
            return Err(fail(0, "checkpoint shorter than its 10-byte header"));
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(fail(0, "bad magic, expected FFCK"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(fail(
                4,
                &format!("unsupported checkpoint version {version}"),
            ));
        }
        let c = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let d = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let expected = 10 + 8 * (c * d + c);
        if bytes.len() != expected {
            return Err(fail(
                10,
                &format!(
                    "expected {expected} bytes for shape {c}x{d}, got {}",
                    bytes.len()
                ),
            ));
        }
        let read = |i: usize| {
            let start = 10 + 8 * i;
            f64::from_le_bytes(bytes[start..start + 8].try_into().expect("8 bytes"))
        };
        let weights = Array2::from_shape_fn((c, d), |(r, col)| read(r * d + col));
        let bias = Array1::from_shape_fn(c, |r| read(c * d + r));
        Self::from_parts(weights, bias)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// SGD hyperparameters; the schedule is cosine annealing from `lr0` to 0
/// across `epochs`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr0: 0.1,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lr0 must be positive, got {}",
                self.lr0
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::InvalidInput(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Cosine schedule: `lr(g) = lr0 · 0.5 · (1 + cos(π g / G))` for epoch g of G.
pub fn cosine_lr(lr0: f64, epoch: usize, total_epochs: usize) -> f64 {
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos())
}

pub(crate) struct SgdOptions<'a> {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    /// `(μ, reference model)`. The μ-term is integrated with a backward
    /// (proximal) step so that large μ pins parameters to the reference
    /// instead of diverging; at μ=0 this branch is skipped entirely.
    pub prox: Option<(f64, &'a ClassifierModel)>,
}

/// Runs `epochs` of mini-batch SGD in place, with a fresh cosine schedule
/// across exactly these epochs. Shuffle order is drawn from `rng` only.
pub(crate) fn sgd_fit(
    model: &mut ClassifierModel,
    data: &LabeledDataset,
    opts: &SgdOptions<'_>,
    loss: &BoundedLoss,
    rng: &mut Rng,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "cannot train on an empty dataset".into(),
        ));
    }
    if data.n_classes() > model.n_classes() {
        return Err(Error::InvalidInput(format!(
            "data has labels up to {} but model has {} classes",
            data.n_classes() - 1,
            model.n_classes()
        )));
    }
    if data.dim() != model.dim() {
        return Err(Error::InvalidInput(format!(
            "data dimension {} does not match model dimension {}",
            data.dim(),
            model.dim()
        )));
    }
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..opts.epochs {
        let lr = cosine_lr(opts.lr0, epoch, opts.epochs);
        shuffle(&mut order, rng);
        for batch in order.chunks(opts.batch_size) {
            let (gw, gb) = batch_gradient(model, data, batch, loss, opts.weight_decay);
            match opts.prox {
                Some((mu, reference)) if mu > 0.0 => {
                    let scale = 1.0 + lr * mu;
                    let new_w =
                        (&model.weights - &(lr * &gw) + lr * mu * reference.weights()) / scale;
                    let new_b = (&model.bias - &(lr * &gb) + lr * mu * reference.bias()) / scale;
                    model.weights = new_w;
                    model.bias = new_b;
                }
                _ => {
                    model.weights = &model.weights - &(lr * &gw);
                    model.bias = &model.bias - &(lr * &gb);
                }
            }
        }
    }
    Ok(())
}

/// Mean clipped-cross-entropy gradient over `batch` plus weight decay on the
/// weight matrix. Samples inside the clipped region (`p_label ≤ p_min`)
/// contribute zero gradient but still count in the mean.
fn batch_gradient(
    model: &ClassifierModel,
    data: &LabeledDataset,
    batch: &[usize],
    loss: &BoundedLoss,
    weight_decay: f64,
) -> (Array2<f64>, Array1<f64>) {
    let c = model.n_classes();
    let d = model.dim();
    let mut gw = Array2::zeros((c, d));
    let mut gb = Array1::zeros(c);
    let scale = 1.0 / batch.len() as f64;
    for &i in batch {
        let x = data.sample(i);
        let probs = model.predict_proba(x).expect("dims checked");
        let label = data.labels()[i];
        if probs[label] <= loss.p_min() {
            continue;
        }
        for cls in 0..c {
            let delta = scale * (probs[cls] - f64::from(u8::from(cls == label)));
            gb[cls] += delta;
            for j in 0..d {
                gw[(cls, j)] += delta * x[j];
            }
        }
    }
    if weight_decay > 0.0 {
        gw += &(weight_decay * &model.weights);
    }
    (gw, gb)
}

/// Full-batch analytic gradient of `evaluate_risk + (wd/2)·‖W‖²`.
pub(crate) fn full_gradient(
    model: &ClassifierModel,
    data: &LabeledDataset,
    loss: &BoundedLoss,
    weight_decay: f64,
) -> (Array2<f64>, Array1<f64>) {
    let all: Vec<usize> = (0..data.len()).collect();
    batch_gradient(model, data, &all, loss, weight_decay)
}

/// Trains a fresh zero-initialized model; the class count is inferred from
/// the labels. Deterministic given `cfg.seed`.
pub fn train_classifier(
    data: &LabeledDataset,
    cfg: &TrainConfig,
    loss: &BoundedLoss,
) -> Result<ClassifierModel> {
    train_classifier_with_classes(data, data.n_classes(), cfg, loss)
}

/// As [`train_classifier`] but with an explicit class count, so models stay
/// full-width even when the training shard is missing classes.
pub fn train_classifier_with_classes(
    data: &LabeledDataset,
    n_classes: usize,
    cfg: &TrainConfig,
    loss: &BoundedLoss,
) -> Result<ClassifierModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "cannot train on an empty dataset".into(),
        ));
    }
    let mut model = ClassifierModel::zero_init(n_classes, data.dim());
    let mut rng = Rng::new(cfg.seed);
    sgd_fit(
        &mut model,
        data,
        &SgdOptions {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr0: cfg.lr0,
            weight_decay: cfg.weight_decay,
            prox: None,
        },
        loss,
        &mut rng,
    )?;
    Ok(model)
}

/// Mean clipped cross-entropy over `data`; always in `[0, M]`.
pub fn evaluate_risk(
    model: &ClassifierModel,
    data: &LabeledDataset,
    loss: &BoundedLoss,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        let probs = model.predict_proba(data.sample(i))?;
        total += loss.clipped_cross_entropy(&probs, data.labels()[i])?;
    }
    // Every term lies in [0, M], so the true mean does too; clamp away the
    // up-to-1-ulp summation error so the invariant holds exactly.
    Ok((total / data.len() as f64).clamp(0.0, loss.bound()))
}

/// Compares the analytic gradient of `evaluate_risk + (wd/2)·‖W‖²` against
/// central finite differences (h = 1e-5) at 20 random coordinates; returns
/// the maximum relative error with denominator `max(|a|, |f|, 1e-6)`.
pub fn finite_difference_grad_check(
    model: &ClassifierModel,
    data: &LabeledDataset,
    loss: &BoundedLoss,
    weight_decay: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("gradient check needs data".into()));
    }
    const H: f64 = 1e-5;
    const N_COORDS: usize = 20;
    let c = model.n_classes();
    let d = model.dim();
    let total = c * d + c;
    let (gw, gb) = full_gradient(model, data, loss, weight_decay);

    let objective = |m: &ClassifierModel| -> f64 {
        let risk = evaluate_risk(m, data, loss).expect("non-empty");
        risk + 0.5 * weight_decay * m.weights.iter().map(|w| w * w).sum::<f64>()
    };

    let mut max_rel = 0.0f64;
    for _ in 0..N_COORDS.min(total) {
        let coord = rng.gen_range(0..total);
        let mut plus = model.clone();
        let mut minus = model.clone();
        let analytic = if coord < c * d {
            let (r, col) = (coord / d, coord % d);
            plus.weights[(r, col)] += H;
            minus.weights[(r, col)] -= H;
            gw[(r, col)]
        } else {
            let r = coord - c * d;
            plus.bias[r] += H;
            minus.bias[r] -= H;
            gb[r]
        };
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * H);
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs, BlobSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn separable_blobs(seed: u64) -> (LabeledDataset, LabeledDataset) {
        let spec = BlobSpec::isotropic(&[vec![-4.0, 0.0], vec![4.0, 0.0]], 0.5, 200, 100);
        let (train, test, _) = generate_blobs(&spec, &mut Rng::new(seed)).unwrap();
        (train, test)
    }

    #[test]
    fn zero_model_is_uniform_and_risk_is_log_c() {
        let model = ClassifierModel::zero_init(4, 3);
        let probs = model.predict_proba(array![1.0, -2.0, 0.5].view()).unwrap();
        for p in &probs {
            assert_abs_diff_eq!(*p, 0.25, epsilon = 1e-15);
        }
        assert_eq!(
            model.predict_class(array![1.0, -2.0, 0.5].view()).unwrap(),
            0
        );

        let (train, _) = separable_blobs(1);
        let zero = ClassifierModel::zero_init(2, 2);
        let risk = evaluate_risk(&zero, &train, &BoundedLoss::default()).unwrap();
        assert_abs_diff_eq!(risk, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn epochs_zero_returns_zero_model() {
        let (train, _) = separable_blobs(2);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let model = train_classifier(&train, &cfg, &BoundedLoss::default()).unwrap();
        assert!(model.weights().iter().all(|&w| w == 0.0));
        assert!(model.bias().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn saturated_logits_probability() {
        let model = ClassifierModel::from_parts(array![[1.0], [-1.0]], array![0.0, 0.0]).unwrap();
        let probs = model.predict_proba(array![10.0].view()).unwrap();
        // Logits (10, -10): second prob is 1/(1+e^20) ≈ 2.061e-9.
        let expected = 1.0 / (1.0 + (20.0f64).exp());
        assert_abs_diff_eq!(probs[1], expected, epsilon = 1e-18);
        assert_abs_diff_eq!(probs[0], 1.0 - expected, epsilon = 1e-15);
    }

    #[test]
    fn probabilities_normalize_over_random_models() {
        let mut rng = Rng::new(9);
        for _ in 0..10_000 {
            let c = rng.gen_range(2..6usize);
            let d = rng.gen_range(1..5usize);
            let weights = Array2::from_shape_fn((c, d), |_| rng.gen_range(-30.0..30.0));
            let bias = Array1::from_shape_fn(c, |_| rng.gen_range(-30.0..30.0));
            let model = ClassifierModel::from_parts(weights, bias).unwrap();
            let x = Array1::from_shape_fn(d, |_| rng.gen_range(-5.0..5.0));
            let probs = model.predict_proba(x.view()).unwrap();
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
        }
    }

    #[test]
    fn separable_blobs_reach_high_train_accuracy() {
        let (train, _) = separable_blobs(3);
        let cfg = TrainConfig {
            epochs: 50,
            seed: 7,
            ..TrainConfig::default()
        };
        let model = train_classifier(&train, &cfg, &BoundedLoss::default()).unwrap();
        let correct = (0..train.len())
            .filter(|&i| model.predict_class(train.sample(i)).unwrap() == train.labels()[i])
            .count();
        let acc = correct as f64 / train.len() as f64;
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic_in_seed() {
        let (train, _) = separable_blobs(4);
        let cfg = TrainConfig {
            epochs: 5,
            seed: 11,
            ..TrainConfig::default()
        };
        let loss = BoundedLoss::default();
        let a = train_classifier(&train, &cfg, &loss).unwrap();
        let b = train_classifier(&train, &cfg, &loss).unwrap();
        assert_eq!(a, b);
        let other = TrainConfig { seed: 12, ..cfg };
        let c = train_classifier(&train, &other, &loss).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn risk_bounded_by_m() {
        let mut rng = Rng::new(14);
        let (train, _) = separable_blobs(5);
        let loss = BoundedLoss::default();
        for _ in 0..20 {
            let weights = Array2::from_shape_fn((2, 2), |_| rng.gen_range(-50.0..50.0));
            let bias = Array1::from_shape_fn(2, |_| rng.gen_range(-50.0..50.0));
            let model = ClassifierModel::from_parts(weights, bias).unwrap();
            let risk = evaluate_risk(&model, &train, &loss).unwrap();
            assert!(risk >= 0.0 && risk <= loss.bound());
        }
    }

    #[test]
    fn gradient_check_small_error() {
        let mut rng = Rng::new(21);
        let (train, _) = separable_blobs(6);
        let subset: Vec<usize> = (0..32).collect();
        let batch = train.subset(&subset);
        let weights = Array2::from_shape_fn((2, 2), |_| rng.gen_range(-0.5..0.5));
        let bias = Array1::from_shape_fn(2, |_| rng.gen_range(-0.5..0.5));
        let model = ClassifierModel::from_parts(weights, bias).unwrap();
        let err =
            finite_difference_grad_check(&model, &batch, &BoundedLoss::default(), 1e-4, &mut rng)
                .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn weight_decay_only_gradient_is_exact() {
        // All-zero features silence the data term on the weights, leaving
        // exactly weight_decay · W.
        let features = Array2::zeros((4, 3));
        let labels = vec![0, 1, 0, 1];
        let provenance = vec![crate::core::Provenance::Real(None); 4];
        let data = LabeledDataset::new(features, labels, provenance).unwrap();
        let model = ClassifierModel::from_parts(
            array![[1.0, -2.0, 3.0], [0.5, 0.0, -1.0]],
            array![0.0, 0.0],
        )
        .unwrap();
        let wd = 0.01;
        let (gw, _) = full_gradient(&model, &data, &BoundedLoss::default(), wd);
        for (g, w) in gw.iter().zip(model.weights().iter()) {
            assert_abs_diff_eq!(*g, wd * *w, epsilon = 1e-15);
        }
    }

    #[test]
    fn duplicated_sample_gradient_matches_single() {
        let features = ndarray::arr2(&[[1.5, -0.5]]);
        let data1 = LabeledDataset::new(
            features.clone(),
            vec![1],
            vec![crate::core::Provenance::Real(None)],
        )
        .unwrap();
        let data4 = LabeledDataset::concat(&[&data1, &data1, &data1, &data1]).unwrap();
        let model = ClassifierModel::from_parts(array![[0.2, 0.1], [-0.3, 0.4]], array![0.1, -0.1])
            .unwrap();
        let loss = BoundedLoss::default();
        let (gw1, gb1) = full_gradient(&model, &data1, &loss, 0.0);
        let (gw4, gb4) = full_gradient(&model, &data4, &loss, 0.0);
        for (a, b) in gw1.iter().zip(gw4.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
        for (a, b) in gb1.iter().zip(gb4.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_length() {
        let model = ClassifierModel::from_parts(
            Array2::from_shape_fn((5, 2), |(r, c)| (r * 2 + c) as f64 / 7.0),
            Array1::from_shape_fn(5, |r| -(r as f64)),
        )
        .unwrap();
        let bytes = model.to_bytes();
        assert_eq!(bytes.len(), 10 + 8 * (5 * 2 + 5));
        let back = ClassifierModel::from_bytes(&bytes).unwrap();
        assert_eq!(model, back);

        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(matches!(
            ClassifierModel::from_bytes(&corrupt),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            ClassifierModel::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format { offset: 10, .. })
        ));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_abs_diff_eq!(cosine_lr(0.1, 0, 10), 0.1, epsilon = 1e-15);
        assert!(cosine_lr(0.1, 9, 10) > 0.0);
        assert!(cosine_lr(0.1, 9, 10) < 0.01);
    }
}
