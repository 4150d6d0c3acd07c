//! The localized generative prior: a diagonal-covariance Gaussian mixture
//! fitted by EM on one client's class-conditional shard, sampled from latent
//! noise, and serialized to the fixed uplink payload format.

use crate::core::{ClassId, ClientId, Error, Provenance, Result, Rng};
use crate::data::{
    diag_gaussian_log_density, log_sum_exp, mixture_log_density, sample_mixture, BlobDensity,
    LabeledDataset, MixtureComponent,
};
use ndarray::Array2;
use rand::Rng as _;

const PAYLOAD_MAGIC: &[u8; 4] = b"FFAC";
const PAYLOAD_VERSION: u16 = 1;
/// Fixed header: magic(4) version(2) client(2) class(2) d(2) n_components(2)
/// n_local(4) reserved(14).
const HEADER_LEN: usize = 32;

/// A trained factory: the mixture itself plus the cell coordinates and the
/// training-set size that drives quota allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoryParams {
    pub client: ClientId,
    pub class: ClassId,
    pub components: Vec<MixtureComponent>,
    /// n_{c,k}: number of local samples this factory was trained on.
    pub n_local: usize,
}

impl FactoryParams {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidInput("factory has no components".into()));
        }
        if self.n_local == 0 {
            return Err(Error::InvalidInput("factory n_local must be ≥ 1".into()));
        }
        let d = self.dim();
        let weight_sum: f64 = self.components.iter().map(|c| c.weight).sum();
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "factory weights sum to {weight_sum}, expected 1 within 1e-9"
            )));
        }
        for comp in &self.components {
            if comp.mean.len() != d || comp.var.len() != d {
                return Err(Error::InvalidInput(
                    "factory component dimension mismatch".into(),
                ));
            }
            if comp.weight <= 0.0 || comp.var.iter().any(|&v| v <= 0.0) {
                return Err(Error::InvalidInput(
                    "factory weights and variances must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// Exact log-density of the fitted mixture at `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "point has dimension {}, factory expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(mixture_log_density(x, &self.components))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    KMeansPlusPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GmmConfig {
    pub n_components: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub covariance_floor: f64,
    pub init: InitMethod,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            n_components: 3,
            max_iters: 200,
            rel_tol: 1e-6,
            covariance_floor: 1e-6,
            init: InitMethod::KMeansPlusPlus,
        }
    }
}

impl GmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::InvalidInput("n_components must be ≥ 1".into()));
        }
        if !(self.rel_tol > 0.0) || !(self.covariance_floor > 0.0) {
            return Err(Error::InvalidInput(
                "rel_tol and covariance_floor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-iteration log-likelihoods of one EM run; used for monotonicity checks
/// and compute accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    pub log_likelihoods: Vec<f64>,
}

impl EmTrace {
    pub fn iterations(&self) -> usize {
        self.log_likelihoods.len()
    }
}

/// Fits a factory on a shard that must belong to exactly one (client, class)
/// cell. See [`train_factory_traced`] for the log-likelihood trace.
pub fn train_factory(
    data: &LabeledDataset,
    cfg: &GmmConfig,
    rng: &mut Rng,
) -> Result<FactoryParams> {
    train_factory_traced(data, cfg, rng).map(|(params, _)| params)
}

/// As [`train_factory`], also returning the EM trace. The log-likelihood is
/// non-decreasing across iterations; training stops when its relative change
/// drops below `rel_tol` or after `max_iters`.
pub fn train_factory_traced(
    data: &LabeledDataset,
    cfg: &GmmConfig,
    rng: &mut Rng,
) -> Result<(FactoryParams, EmTrace)> {
    cfg.validate()?;
    let (client, class) = single_cell_of(data)?;
    let n = data.len();
    if n < cfg.n_components {
        return Err(Error::InvalidInput(format!(
            "{n} samples cannot support {} components",
            cfg.n_components
        )));
    }
    let d = data.dim();
    let x = data.features();

    // Degenerate shard: every sample identical. One component at the point
    // with floored covariance; EM would hit a singularity here.
    let first = x.row(0);
    if (0..n).all(|i| x.row(i) == first) {
        let params = FactoryParams {
            client,
            class,
            components: vec![MixtureComponent {
                weight: 1.0,
                mean: first.to_vec(),
                var: vec![cfg.covariance_floor; d],
            }],
            n_local: n,
        };
        return Ok((
            params,
            EmTrace {
                log_likelihoods: vec![],
            },
        ));
    }

    let k = cfg.n_components;
    let centers = kmeans_pp_centers(data, k, rng);

    // Global per-coordinate variance as the shared initial spread.
    let mut global_mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            global_mean[j] += x[(i, j)];
        }
    }
    for m in &mut global_mean {
        *m /= n as f64;
    }
    let mut global_var = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let diff = x[(i, j)] - global_mean[j];
            global_var[j] += diff * diff;
        }
    }
    for v in &mut global_var {
        *v = (*v / n as f64).max(cfg.covariance_floor);
    }

    let mut weights = vec![1.0 / k as f64; k];
    let mut means = centers;
    let mut vars = vec![global_var.clone(); k];

    let mut trace = Vec::new();
    let mut resp = Array2::zeros((n, k));
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..cfg.max_iters {
        // E-step in log space.
        let mut ll = 0.0;
        for i in 0..n {
            let xi: Vec<f64> = x.row(i).to_vec();
            let logs: Vec<f64> = (0..k)
                .map(|c| weights[c].ln() + diag_gaussian_log_density(&xi, &means[c], &vars[c]))
                .collect();
            let lse = log_sum_exp(&logs);
            ll += lse;
            for c in 0..k {
                resp[(i, c)] = (logs[c] - lse).exp();
            }
        }
        trace.push(ll);

        // M-step.
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[(i, c)]).sum();
            weights[c] = nk / n as f64;
            if nk < 1e-10 {
                // Responsibility underflow: freeze this component's shape.
                continue;
            }
            let mut mean = vec![0.0; d];
            for i in 0..n {
                let r = resp[(i, c)];
                for j in 0..d {
                    mean[j] += r * x[(i, j)];
                }
            }
            for m in &mut mean {
                *m /= nk;
            }
            let mut var = vec![0.0; d];
            for i in 0..n {
                let r = resp[(i, c)];
                for j in 0..d {
                    let diff = x[(i, j)] - mean[j];
                    var[j] += r * diff * diff;
                }
            }
            for v in &mut var {
                *v = (*v / nk).max(cfg.covariance_floor);
            }
            means[c] = mean;
            vars[c] = var;
        }

        let rel_change = (ll - prev_ll).abs() / prev_ll.abs().max(1.0);
        if prev_ll.is_finite() && rel_change <= cfg.rel_tol {
            break;
        }
        prev_ll = ll;
    }

    let components = (0..k)
        .filter(|&c| weights[c] > 0.0)
        .map(|c| MixtureComponent {
            weight: weights[c],
            mean: means[c].clone(),
            var: vars[c].clone(),
        })
        .collect();
    let params = FactoryParams {
        client,
        class,
        components,
        n_local: n,
    };
    params.validate()?;
    Ok((
        params,
        EmTrace {
            log_likelihoods: trace,
        },
    ))
}

/// The shard's unique (client, class); errors unless both are unanimous.
fn single_cell_of(data: &LabeledDataset) -> Result<(ClientId, ClassId)> {
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "cannot train a factory on an empty shard".into(),
        ));
    }
    let class = data.labels()[0];
    if data.labels().iter().any(|&l| l != class) {
        return Err(Error::InvalidInput(
            "factory shard must contain exactly one class".into(),
        ));
    }
    let client = match data.provenance()[0] {
        Provenance::Real(Some(k)) => k,
        _ => {
            return Err(Error::InvalidInput(
                "factory shard must be real data owned by one client".into(),
            ))
        }
    };
    if data
        .provenance()
        .iter()
        .any(|&p| p != Provenance::Real(Some(client)))
    {
        return Err(Error::InvalidInput(
            "factory shard must belong to exactly one client".into(),
        ));
    }
    Ok((client, class))
}

/// k-means++ seeding: first center uniform, then D²-weighted picks.
fn kmeans_pp_centers(data: &LabeledDataset, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let x = data.features();
    let first = rng.gen_range(0..n);
    let mut centers: Vec<Vec<f64>> = vec![x.row(first).to_vec()];
    let mut d2 = vec![0.0f64; n];
    while centers.len() < k {
        let last = centers.last().expect("non-empty");
        let mut total = 0.0;
        for i in 0..n {
            let dist2: f64 = x
                .row(i)
                .iter()
                .zip(last)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            d2[i] = if centers.len() == 1 {
                dist2
            } else {
                d2[i].min(dist2)
            };
            total += d2[i];
        }
        let next = if total > 0.0 {
            let mut u = rng.gen_range(0.0..1.0) * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(x.row(next).to_vec());
    }
    centers
}

/// Draws `n` samples from the factory: pick a component by weight, then map
/// standard normal noise through `mean + sqrt(cov) ⊙ z`. All samples carry
/// the factory's class label and `Synthetic(client, class)` provenance.
pub fn sample_factory(params: &FactoryParams, n: usize, rng: &mut Rng) -> Result<LabeledDataset> {
    params.validate()?;
    let d = params.dim();
    let mut features = Array2::zeros((n, d));
    for i in 0..n {
        let sample = sample_mixture(&params.components, rng);
        for (j, v) in sample.iter().enumerate() {
            features[(i, j)] = *v;
        }
    }
    LabeledDataset::new(
        features,
        vec![params.class; n],
        vec![
            Provenance::Synthetic {
                client: params.client,
                class: params.class,
            };
            n
        ],
    )
}

/// Monte-Carlo estimate of `KL(p_class ∥ p_factory)` using `n_mc` fresh
/// draws from the true density; clamped at 0 since sampling noise can dip
/// below zero when the fit is near-perfect. Only blob datasets carry a true
/// density; CSV-ingested data has none, so callers without a handle must
/// surface an unsupported-operation error instead.
pub fn estimate_local_kl(
    true_density: &BlobDensity,
    class: ClassId,
    params: &FactoryParams,
    n_mc: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n_mc < 1000 {
        return Err(Error::InvalidInput(format!(
            "KL estimation needs n_mc ≥ 1000, got {n_mc}"
        )));
    }
    if true_density.dim() != params.dim() {
        return Err(Error::InvalidInput(format!(
            "density dimension {} does not match factory dimension {}",
            true_density.dim(),
            params.dim()
        )));
    }
    let draws = true_density.sample_class(class, n_mc, rng)?;
    let mut acc = 0.0;
    for x in &draws {
        acc += true_density.log_density(class, x)? - params.log_density(x)?;
    }
    Ok((acc / n_mc as f64).max(0.0))
}

/// Serializes to the uplink payload format. The payload holds only mixture
/// parameters, never raw samples, so its length depends on (d, components)
/// alone.
pub fn serialize_factory(params: &FactoryParams) -> Result<Vec<u8>> {
    params.validate()?;
    let client = u16::try_from(params.client)
        .map_err(|_| Error::InvalidInput(format!("client id {} exceeds u16", params.client)))?;
    let class = u16::try_from(params.class)
        .map_err(|_| Error::InvalidInput(format!("class id {} exceeds u16", params.class)))?;
    let d = u16::try_from(params.dim())
        .map_err(|_| Error::InvalidInput("dimension exceeds u16".into()))?;
    let k = u16::try_from(params.n_components())
        .map_err(|_| Error::InvalidInput("component count exceeds u16".into()))?;
    let n_local = u32::try_from(params.n_local)
        .map_err(|_| Error::InvalidInput("n_local exceeds u32".into()))?;

    let mut out = Vec::with_capacity(HEADER_LEN + params.n_components() * (8 + 16 * params.dim()));
    out.extend_from_slice(PAYLOAD_MAGIC);
    out.extend_from_slice(&PAYLOAD_VERSION.to_le_bytes());
    out.extend_from_slice(&client.to_le_bytes());
    out.extend_from_slice(&class.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    out.extend_from_slice(&n_local.to_le_bytes());
    out.extend_from_slice(&[0u8; 14]);
    debug_assert_eq!(out.len(), HEADER_LEN);
    for comp in &params.components {
        out.extend_from_slice(&comp.weight.to_le_bytes());
        for &m in &comp.mean {
            out.extend_from_slice(&m.to_le_bytes());
        }
        for &v in &comp.var {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Exact inverse of [`serialize_factory`].
pub fn deserialize_factory(bytes: &[u8]) -> Result<FactoryParams> {
    let fail = |offset: usize, message: String| Error::Format { offset, message };
    if bytes.len() < HEADER_LEN {
        return Err(fail(
            0,
            format!("payload shorter than its {HEADER_LEN}-byte header"),
        ));
    }
    if &bytes[0..4] != PAYLOAD_MAGIC {
        return Err(fail(0, "bad magic, expected FFAC".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != PAYLOAD_VERSION {
        return Err(fail(4, format!("unsupported payload version {version}")));
    }
    let client = u16::from_le_bytes([bytes[6], bytes[7]]) as ClientId;
    let class = u16::from_le_bytes([bytes[8], bytes[9]]) as ClassId;
    let d = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
    let k = u16::from_le_bytes([bytes[12], bytes[13]]) as usize;
    let n_local = u32::from_le_bytes([bytes[14], bytes[15], bytes[16], bytes[17]]) as usize;
    if bytes[18..HEADER_LEN].iter().any(|&b| b != 0) {
        return Err(fail(18, "reserved header bytes must be zero".into()));
    }
    let expected = HEADER_LEN + k * (8 + 16 * d);
    if bytes.len() != expected {
        return Err(fail(
            HEADER_LEN,
            format!(
                "expected {expected} bytes for {k} components of dimension {d}, got {}",
                bytes.len()
            ),
        ));
    }
    let mut offset = HEADER_LEN;
    let read_f64 = |offset: &mut usize| {
        let v = f64::from_le_bytes(bytes[*offset..*offset + 8].try_into().expect("8 bytes"));
        *offset += 8;
        v
    };
    let mut components = Vec::with_capacity(k);
    for _ in 0..k {
        let weight = read_f64(&mut offset);
        let mean = (0..d).map(|_| read_f64(&mut offset)).collect();
        let var = (0..d).map(|_| read_f64(&mut offset)).collect();
        components.push(MixtureComponent { weight, mean, var });
    }
    let params = FactoryParams {
        client,
        class,
        components,
        n_local,
    };
    params.validate()?;
    Ok(params)
}
