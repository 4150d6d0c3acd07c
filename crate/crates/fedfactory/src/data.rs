//! Ground-truth blob distributions, CSV ingestion, and client partitioning.

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::core::{ClassId, ClientId, Error, Provenance, Result, Rng};

/// Feature matrix with labels and per-sample provenance tags.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<ClassId>,
    provenance: Vec<Provenance>,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<ClassId>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() || labels.len() != provenance.len() {
            return Err(Error::InvalidInput(format!(
                "row mismatch: {} features, {} labels, {} provenance tags",
                features.nrows(),
                labels.len(),
                provenance.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            provenance,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            features: Array2::zeros((0, dim)),
            labels: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// `max label + 1`, or 0 for an empty dataset.
    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn sample(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let provenance = indices.iter().map(|&i| self.provenance[i]).collect();
        Self {
            features,
            labels,
            provenance,
        }
    }

    /// Re-tags every sample as real data owned by `client`.
    pub fn owned_by(mut self, client: ClientId) -> Self {
        for tag in &mut self.provenance {
            *tag = Provenance::Real(Some(client));
        }
        self
    }

    pub fn concat(parts: &[&LabeledDataset]) -> Result<Self> {
        let dim = parts
            .iter()
            .find(|p| !p.is_empty())
            .map_or_else(|| parts.first().map_or(0, |p| p.dim()), |p| p.dim());
        if parts.iter().any(|p| !p.is_empty() && p.dim() != dim) {
            return Err(Error::InvalidInput("dimension mismatch in concat".into()));
        }
        let total: usize = parts.iter().map(|p| p.len()).sum();
        let mut features = Array2::zeros((total, dim));
        let mut labels = Vec::with_capacity(total);
        let mut provenance = Vec::with_capacity(total);
        let mut row = 0;
        for part in parts {
            for i in 0..part.len() {
                features.row_mut(row).assign(&part.features.row(i));
                row += 1;
            }
            labels.extend_from_slice(&part.labels);
            provenance.extend_from_slice(&part.provenance);
        }
        Ok(Self {
            features,
            labels,
            provenance,
        })
    }
}

/// One mixture component: a diagonal-covariance Gaussian.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Per-coordinate variances (diagonal of the covariance).
    pub var: Vec<f64>,
}

/// A known Gaussian mixture per class; the simulator's ground truth.
///
/// Exposing the exact mixture makes `log p_c(x)` computable, so local model
/// error `KL(p_c ∥ p_θ)` is Monte-Carlo estimable.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlobSpec {
    /// Index = class id; each class is a list of mixture components.
    pub class_mixtures: Vec<Vec<MixtureComponent>>,
    pub samples_per_class: usize,
    pub test_per_class: usize,
}

impl BlobSpec {
    /// Single isotropic Gaussian per class.
    pub fn isotropic(
        means: &[Vec<f64>],
        sigma: f64,
        samples_per_class: usize,
        test_per_class: usize,
    ) -> Self {
        let class_mixtures = means
            .iter()
            .map(|m| {
                vec![MixtureComponent {
                    weight: 1.0,
                    mean: m.clone(),
                    var: vec![sigma * sigma; m.len()],
                }]
            })
            .collect();
        Self {
            class_mixtures,
            samples_per_class,
            test_per_class,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_mixtures.len()
    }

    pub fn dim(&self) -> usize {
        self.class_mixtures
            .first()
            .and_then(|c| c.first())
            .map_or(0, |comp| comp.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_mixtures.is_empty() {
            return Err(Error::InvalidInput("blob spec has no classes".into()));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidInput("blob spec has zero dimension".into()));
        }
        for (c, mixture) in self.class_mixtures.iter().enumerate() {
            if mixture.is_empty() {
                return Err(Error::InvalidInput(format!("class {c} has no components")));
            }
            let weight_sum: f64 = mixture.iter().map(|comp| comp.weight).sum();
            if (weight_sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "class {c} mixture weights sum to {weight_sum}, expected 1"
                )));
            }
            for comp in mixture {
                if comp.mean.len() != d || comp.var.len() != d {
                    return Err(Error::InvalidInput(format!(
                        "class {c} component dimension mismatch"
                    )));
                }
                if comp.weight <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "class {c} has a non-positive component weight"
                    )));
                }
                if comp.var.iter().any(|&v| v <= 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "class {c} has a degenerate covariance entry"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Exact log-density handle for the generating mixtures of a [`BlobSpec`].
#[derive(Debug, Clone)]
pub struct BlobDensity {
    class_mixtures: Vec<Vec<MixtureComponent>>,
}

/// Log-density of a diagonal Gaussian at `x`.
pub(crate) fn diag_gaussian_log_density(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    const LN_2PI: f64 = 1.837_877_066_409_345_5;
    let mut acc = 0.0;
    for i in 0..x.len() {
        let diff = x[i] - mean[i];
        acc += diff * diff / var[i] + var[i].ln() + LN_2PI;
    }
    -0.5 * acc
}

pub(crate) fn mixture_log_density(x: &[f64], components: &[MixtureComponent]) -> f64 {
    let logs: Vec<f64> = components
        .iter()
        .map(|c| c.weight.ln() + diag_gaussian_log_density(x, &c.mean, &c.var))
        .collect();
    log_sum_exp(&logs)
}

pub(crate) fn log_sum_exp(logs: &[f64]) -> f64 {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Draws one sample from a mixture: pick a component by weight, then map
/// standard normal noise through `mean + sqrt(var) ⊙ z`.
pub(crate) fn sample_mixture(components: &[MixtureComponent], rng: &mut Rng) -> Vec<f64> {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    let mut chosen = components.len() - 1;
    for (j, comp) in components.iter().enumerate() {
        acc += comp.weight;
        if u < acc {
            chosen = j;
            break;
        }
    }
    let comp = &components[chosen];
    comp.mean
        .iter()
        .zip(&comp.var)
        .map(|(&m, &v)| {
            let z: f64 = StandardNormal.sample(rng);
            m + v.sqrt() * z
        })
        .collect()
}

impl BlobDensity {
    pub fn n_classes(&self) -> usize {
        self.class_mixtures.len()
    }

    pub fn dim(&self) -> usize {
        self.class_mixtures
            .first()
            .and_then(|c| c.first())
            .map_or(0, |comp| comp.mean.len())
    }

    /// Exact `log p_c(x)`.
    pub fn log_density(&self, class: ClassId, x: &[f64]) -> Result<f64> {
        let mixture = self
            .class_mixtures
            .get(class)
            .ok_or_else(|| Error::InvalidInput(format!("class {class} out of range")))?;
        Ok(mixture_log_density(x, mixture))
    }

    /// Draws `n` fresh samples from class `c`'s true mixture.
    pub fn sample_class(&self, class: ClassId, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        let mixture = self
            .class_mixtures
            .get(class)
            .ok_or_else(|| Error::InvalidInput(format!("class {class} out of range")))?;
        Ok((0..n).map(|_| sample_mixture(mixture, rng)).collect())
    }
}

/// Draws disjoint train/test sets from the spec's mixtures, plus the exact
/// density handle.
pub fn generate_blobs(
    spec: &BlobSpec,
    rng: &mut Rng,
) -> Result<(LabeledDataset, LabeledDataset, BlobDensity)> {
    spec.validate()?;
    let d = spec.dim();
    let draw = |count: usize, rng: &mut Rng| -> Result<LabeledDataset> {
        let n = count * spec.n_classes();
        let mut features = Array2::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for (c, mixture) in spec.class_mixtures.iter().enumerate() {
            for _ in 0..count {
                let x = sample_mixture(mixture, rng);
                for (j, v) in x.iter().enumerate() {
                    features[(row, j)] = *v;
                }
                labels.push(c);
                row += 1;
            }
        }
        let provenance = vec![Provenance::Real(None); n];
        LabeledDataset::new(features, labels, provenance)
    };
    let train = draw(spec.samples_per_class, rng)?;
    let test = draw(spec.test_per_class, rng)?;
    Ok((
        train,
        test,
        BlobDensity {
            class_mixtures: spec.class_mixtures.clone(),
        },
    ))
}

/// Label-skew regime for splitting data across clients.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "alpha")]
pub enum PartitionMode {
    /// Each class split evenly (±1) across all clients.
    Uniform,
    /// Per class, client proportions drawn from `Dir(α)`, samples assigned
    /// multinomially.
    Dirichlet(f64),
    /// All samples of class `c` go to client `c`; label supports are
    /// pairwise disjoint. Requires `K == C`.
    SingleClassSilo,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    /// Client count K.
    pub clients: usize,
}

/// Assignment of every sample to exactly one client.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    assignment: Vec<ClientId>,
    /// `n_{c,k}`: rows are classes, columns clients.
    per_client_counts: Array2<usize>,
}

impl Partition {
    /// Builds a partition from an explicit per-sample client assignment.
    pub fn from_assignment(
        data: &LabeledDataset,
        assignment: &[ClientId],
        n_clients: usize,
    ) -> Result<Self> {
        if assignment.len() != data.len() {
            return Err(Error::InvalidInput(format!(
                "assignment covers {} samples but the dataset has {}",
                assignment.len(),
                data.len()
            )));
        }
        if n_clients == 0 {
            return Err(Error::InvalidInput("need at least one client".into()));
        }
        let mut per_client_counts = Array2::zeros((data.n_classes(), n_clients));
        for (i, &k) in assignment.iter().enumerate() {
            if k >= n_clients {
                return Err(Error::InvalidInput(format!(
                    "sample {i} assigned to client {k}, but K={n_clients}"
                )));
            }
            per_client_counts[(data.labels()[i], k)] += 1;
        }
        Ok(Self {
            assignment: assignment.to_vec(),
            per_client_counts,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.per_client_counts.nrows()
    }

    pub fn n_clients(&self) -> usize {
        self.per_client_counts.ncols()
    }

    pub fn assignment(&self) -> &[ClientId] {
        &self.assignment
    }

    pub fn per_client_counts(&self) -> ArrayView2<'_, usize> {
        self.per_client_counts.view()
    }

    pub fn count(&self, class: ClassId, client: ClientId) -> usize {
        self.per_client_counts[(class, client)]
    }

    pub fn client_size(&self, client: ClientId) -> usize {
        self.per_client_counts.column(client).sum()
    }

    pub fn client_indices(&self, client: ClientId) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == client)
            .map(|(i, _)| i)
            .collect()
    }

    /// Materializes client `k`'s shard, tagged `Real(Some(k))`.
    pub fn client_dataset(&self, data: &LabeledDataset, client: ClientId) -> LabeledDataset {
        data.subset(&self.client_indices(client)).owned_by(client)
    }
}

/// `Dir(α)` draw over `K` entries via `K` independent `Gamma(α, 1)` draws,
/// normalized.
///
/// For `α < 1` the gamma draws are taken in log space through the boost
/// `Gamma(α) = Gamma(α+1) · U^{1/α}`, which survives the underflow that a
/// direct draw hits as `α → 0`.
pub fn dirichlet_sample(alpha: f64, k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!(
            "dirichlet alpha must be positive, got {alpha}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidInput(
            "dirichlet needs at least 1 entry".into(),
        ));
    }
    let log_draws: Vec<f64> = if alpha < 1.0 {
        let gamma = Gamma::new(alpha + 1.0, 1.0).expect("valid shape");
        (0..k)
            .map(|_| {
                let g: f64 = gamma.sample(rng);
                let u: f64 = rng.gen_range(0.0..1.0);
                g.ln() + u.ln() / alpha
            })
            .collect()
    } else {
        let gamma = Gamma::new(alpha, 1.0).expect("valid shape");
        (0..k).map(|_| gamma.sample(rng)).map(f64::ln).collect()
    };
    let lse = log_sum_exp(&log_draws);
    debug_assert!(lse.is_finite(), "all gamma draws vanished");
    let mut weights: Vec<f64> = log_draws.iter().map(|l| (l - lse).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Splits `data` across clients according to `spec`.
pub fn partition(data: &LabeledDataset, spec: &PartitionSpec, rng: &mut Rng) -> Result<Partition> {
    let k = spec.clients;
    if k == 0 {
        return Err(Error::InvalidInput(
            "partition needs at least 1 client".into(),
        ));
    }
    let c = data.n_classes();
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "cannot partition an empty dataset".into(),
        ));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &label) in data.labels().iter().enumerate() {
        by_class[label].push(i);
    }

    let mut assignment = vec![0 as ClientId; data.len()];
    match spec.mode {
        PartitionMode::SingleClassSilo => {
            if k != c {
                return Err(Error::InvalidInput(format!(
                    "single-class silo requires K == C, got K={k}, C={c}"
                )));
            }
            if by_class.iter().any(Vec::is_empty) {
                return Err(Error::InvalidInput(
                    "single-class silo requires every class non-empty".into(),
                ));
            }
            for (class, indices) in by_class.iter().enumerate() {
                for &i in indices {
                    assignment[i] = class;
                }
            }
        }
        PartitionMode::Uniform => {
            for indices in &by_class {
                let mut shuffled = indices.clone();
                shuffle(&mut shuffled, rng);
                let n = shuffled.len();
                let base = n / k;
                let extra = n % k;
                let mut cursor = 0;
                for client in 0..k {
                    let take = base + usize::from(client < extra);
                    for &i in &shuffled[cursor..cursor + take] {
                        assignment[i] = client;
                    }
                    cursor += take;
                }
            }
        }
        PartitionMode::Dirichlet(alpha) => {
            for indices in &by_class {
                let weights = dirichlet_sample(alpha, k, rng)?;
                for &i in indices {
                    let u: f64 = rng.gen_range(0.0..1.0);
                    let mut acc = 0.0;
                    let mut client = k - 1;
                    for (j, &w) in weights.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            client = j;
                            break;
                        }
                    }
                    assignment[i] = client;
                }
            }
        }
    }

    let mut per_client_counts = Array2::zeros((c, k));
    for (i, &label) in data.labels().iter().enumerate() {
        per_client_counts[(label, assignment[i])] += 1;
    }
    Ok(Partition {
        assignment,
        per_client_counts,
    })
}

/// Fisher-Yates shuffle driven by our deterministic [`Rng`].
pub(crate) fn shuffle<T>(items: &mut [T], rng: &mut Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Loads a `label,f0,...,f{d-1}` CSV into a dataset with unassigned-real
/// provenance. Labels must cover `0..=max` contiguously.
pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;

    let mut rows: Vec<(ClassId, Vec<f64>)> = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if line == 1 {
            validate_csv_header(&record)?;
            dim = Some(record.len() - 1);
            continue;
        }
        let d = dim.expect("header parsed first");
        if record.len() != d + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", d + 1, record.len()),
            });
        }
        let label: ClassId = record[0].parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid label {:?}", &record[0]),
        })?;
        let mut feats = Vec::with_capacity(d);
        for j in 0..d {
            let v: f64 = record[j + 1].parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid float {:?} in column f{j}", &record[j + 1]),
            })?;
            feats.push(v);
        }
        rows.push((label, feats));
    }

    let Some(d) = dim else {
        return Err(Error::Parse {
            line: 1,
            message: "empty file: missing header".into(),
        });
    };
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }

    let c = rows.iter().map(|(l, _)| l + 1).max().unwrap_or(0);
    let mut seen = vec![false; c];
    for (l, _) in &rows {
        seen[*l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidInput(format!(
            "non-contiguous labels: class {missing} absent but max label is {}",
            c - 1
        )));
    }

    let mut features = Array2::zeros((rows.len(), d));
    let mut labels = Vec::with_capacity(rows.len());
    for (i, (label, feats)) in rows.iter().enumerate() {
        for (j, v) in feats.iter().enumerate() {
            features[(i, j)] = *v;
        }
        labels.push(*label);
    }
    let provenance = vec![Provenance::Real(None); labels.len()];
    LabeledDataset::new(features, labels, provenance)
}

fn validate_csv_header(record: &csv::StringRecord) -> Result<()> {
    if record.len() < 2 || &record[0] != "label" {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must start with `label,f0,...`, got {record:?}"),
        });
    }
    for j in 1..record.len() {
        let expected = format!("f{}", j - 1);
        if &record[j] != expected.as_str() {
            return Err(Error::Parse {
                line: 1,
                message: format!("header column {j} must be {expected}, got {:?}", &record[j]),
            });
        }
    }
    Ok(())
}
