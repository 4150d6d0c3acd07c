//! Numerical verification of the risk-bound machinery on finite instances:
//! exact KL and TV, Pinsker's inequality, the mixture decomposition identity,
//! and the 2Mε̄ excess-risk bound checked by brute-force hypothesis search.

use rand::Rng as _;

use crate::core::{BoundedLoss, ClassId, Error, Result, Rng};

/// A probability vector over a shared finite feature support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

impl DiscreteDist {
    /// Entries must be non-negative and sum to 1 within 1e-12.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput(
                "negative or non-finite probability".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1 within 1e-12"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(support: usize) -> Self {
        Self {
            probs: vec![1.0 / support as f64; support],
        }
    }

    pub fn support_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// One finite federated instance: K clients with shared feature support,
/// mixture weights π, true and model distributions, and one distinct label
/// per client.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteInstance {
    /// π_k; strictly positive, sum to 1.
    pub weights: Vec<f64>,
    /// True per-client feature distributions p_k.
    pub true_dists: Vec<DiscreteDist>,
    /// Model per-client feature distributions q_k.
    pub model_dists: Vec<DiscreteDist>,
    /// y_k; pairwise distinct.
    pub labels: Vec<ClassId>,
}

impl DiscreteInstance {
    pub fn n_clients(&self) -> usize {
        self.weights.len()
    }

    pub fn support_size(&self) -> usize {
        self.true_dists
            .first()
            .map_or(0, DiscreteDist::support_size)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::InvalidInput("instance has no clients".into()));
        }
        if self.true_dists.len() != k || self.model_dists.len() != k || self.labels.len() != k {
            return Err(Error::InvalidInput(
                "instance field lengths disagree".into(),
            ));
        }
        let s = self.support_size();
        if self
            .true_dists
            .iter()
            .chain(&self.model_dists)
            .any(|d| d.support_size() != s)
        {
            return Err(Error::InvalidInput(
                "distributions have mixed supports".into(),
            ));
        }
        if self.weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidInput(
                "mixture weights must be positive".into(),
            ));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        let mut sorted = self.labels.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(
                "duplicate client labels violate the disjoint-support premise".into(),
            ));
        }
        Ok(())
    }
}

/// KL on raw aligned slices; `0·log(0/·) = 0`, and mass where the second
/// argument is zero yields the `+∞` sentinel rather than an error.
fn kl_slices(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return f64::INFINITY;
        }
        acc += pi * (pi / qi).ln();
    }
    acc.max(0.0)
}

/// `Σ p_i log(p_i / q_i)`; returns the `+∞` sentinel when absolute
/// continuity fails.
pub fn kl_divergence(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    if p.support_size() != q.support_size() {
        return Err(Error::InvalidInput(format!(
            "support mismatch: {} vs {}",
            p.support_size(),
            q.support_size()
        )));
    }
    Ok(kl_slices(p.probs(), q.probs()))
}

/// Total variation distance `0.5 Σ |p_i − q_i|`.
pub fn tv_distance(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    if p.support_size() != q.support_size() {
        return Err(Error::InvalidInput(format!(
            "support mismatch: {} vs {}",
            p.support_size(),
            q.support_size()
        )));
    }
    Ok(p.probs()
        .iter()
        .zip(q.probs())
        .map(|(&a, &b)| (a - b).abs())
        .sum::<f64>()
        / 2.0)
}

/// Checks `TV(p, q) ≤ √(KL(p ∥ q) / 2) + 1e-12`.
pub fn verify_pinsker(p: &DiscreteDist, q: &DiscreteDist) -> Result<bool> {
    let tv = tv_distance(p, q)?;
    let kl = kl_divergence(p, q)?;
    if kl.is_infinite() {
        return Ok(true);
    }
    Ok(tv <= (kl / 2.0).sqrt() + 1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Report {
    /// KL between the joint (x, y) mixtures.
    pub lhs: f64,
    /// Weighted sum of per-client KLs, `Σ π_k KL(p_k ∥ q_k)`.
    pub rhs: f64,
    pub holds: bool,
}

/// Verifies the mixture decomposition: with pairwise distinct labels the
/// joint-mixture KL collapses to the weighted sum of per-client KLs, so the
/// two sides agree exactly (up to 1e-9 numerically).
///
/// Both sides are built literally: the joints are laid out as length `S·K`
/// vectors over (x, y_k) pairs and fed through the same KL kernel.
pub fn verify_lemma1(inst: &DiscreteInstance) -> Result<Lemma1Report> {
    inst.validate()?;
    let s = inst.support_size();
    let k = inst.n_clients();

    let mut joint_p = Vec::with_capacity(s * k);
    let mut joint_q = Vec::with_capacity(s * k);
    for ki in 0..k {
        let w = inst.weights[ki];
        for si in 0..s {
            joint_p.push(w * inst.true_dists[ki].probs()[si]);
            joint_q.push(w * inst.model_dists[ki].probs()[si]);
        }
    }
    let lhs = kl_slices(&joint_p, &joint_q);

    let mut rhs = 0.0;
    for ki in 0..k {
        rhs +=
            inst.weights[ki] * kl_slices(inst.true_dists[ki].probs(), inst.model_dists[ki].probs());
    }

    let holds = lhs.is_infinite() && rhs.is_infinite() || lhs <= rhs + 1e-9;
    Ok(Lemma1Report { lhs, rhs, holds })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem1Report {
    /// `L_true(w_syn) − L_true(w*)`.
    pub excess: f64,
    /// `2 M ε̄` with `ε̄ = √(0.5 Σ π_k KL_k)`.
    pub bound: f64,
    pub holds: bool,
}

const MAX_HYPOTHESES: u64 = 65_536;

/// Brute-force check of the excess-risk bound: enumerate every deterministic
/// map from the feature support to the label set, pick the true-risk and
/// synthetic-risk minimizers (first minimum in lexicographic enumeration
/// order wins ties), and compare the excess true risk against `2Mε̄`.
///
/// A hypothesis predicts class `h(x)` via the induced probability vector
/// with `1 − (C−1)·p_min` on the predicted class and `p_min` elsewhere, so
/// every per-sample loss is exactly `−log(1−(C−1)p_min)` or `M`.
pub fn verify_theorem1(inst: &DiscreteInstance, loss: &BoundedLoss) -> Result<Theorem1Report> {
    inst.validate()?;
    let s = inst.support_size();
    let k = inst.n_clients();
    let n_hypotheses = (k as u64).checked_pow(s as u32).unwrap_or(u64::MAX);
    if n_hypotheses > MAX_HYPOTHESES {
        return Err(Error::Unsupported(format!(
            "hypothesis enumeration K^S = {k}^{s} exceeds the {MAX_HYPOTHESES} limit (S ≤ 8, K ≤ 4)"
        )));
    }

    let mut labels = inst.labels.clone();
    labels.sort_unstable();
    let c = labels.len();
    let hit_loss = -(1.0 - (c as f64 - 1.0) * loss.p_min())
        .max(loss.p_min())
        .ln();
    let miss_loss = loss.bound();

    // per_x_label_mass[dist][x][label slot] with labels in ascending order.
    let label_slot: Vec<usize> = inst
        .labels
        .iter()
        .map(|y| labels.binary_search(y).expect("label present"))
        .collect();
    let mut true_mass = vec![vec![0.0; c]; s];
    let mut syn_mass = vec![vec![0.0; c]; s];
    for ki in 0..k {
        let slot = label_slot[ki];
        for (si, row) in true_mass.iter_mut().enumerate() {
            row[slot] += inst.weights[ki] * inst.true_dists[ki].probs()[si];
        }
        for (si, row) in syn_mass.iter_mut().enumerate() {
            row[slot] += inst.weights[ki] * inst.model_dists[ki].probs()[si];
        }
    }

    // Risk of hypothesis h under mass m: Σ_x Σ_y m[x][y] · ℓ(h(x), y).
    let risk = |h: &[usize], mass: &[Vec<f64>]| -> f64 {
        let mut acc = 0.0;
        for (si, row) in mass.iter().enumerate() {
            for (slot, &m) in row.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                acc += m * if h[si] == slot { hit_loss } else { miss_loss };
            }
        }
        acc
    };

    // Lexicographic enumeration over label slots; first strict minimum wins.
    let mut hypothesis = vec![0usize; s];
    let mut best_true = f64::INFINITY;
    let mut best_true_h = hypothesis.clone();
    let mut best_syn = f64::INFINITY;
    let mut best_syn_h = hypothesis.clone();
    loop {
        let rt = risk(&hypothesis, &true_mass);
        if rt < best_true {
            best_true = rt;
            best_true_h.copy_from_slice(&hypothesis);
        }
        let rs = risk(&hypothesis, &syn_mass);
        if rs < best_syn {
            best_syn = rs;
            best_syn_h.copy_from_slice(&hypothesis);
        }
        // Odometer increment with the last coordinate fastest.
        let mut pos = s;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            hypothesis[pos] += 1;
            if hypothesis[pos] < c {
                break;
            }
            hypothesis[pos] = 0;
        }
        if hypothesis.iter().all(|&v| v == 0) {
            break;
        }
    }

    let excess = risk(&best_syn_h, &true_mass) - risk(&best_true_h, &true_mass);
    let mut weighted_kl = 0.0;
    for ki in 0..k {
        weighted_kl +=
            inst.weights[ki] * kl_slices(inst.true_dists[ki].probs(), inst.model_dists[ki].probs());
    }
    let eps_bar = (0.5 * weighted_kl).sqrt();
    let bound = 2.0 * loss.bound() * eps_bar;
    let holds = bound.is_infinite() || excess <= bound + 1e-9;
    Ok(Theorem1Report {
        excess,
        bound,
        holds,
    })
}

/// Random instance with strictly positive distributions, so every KL is
/// finite and the verification sweeps never hit the infinity sentinel.
pub fn random_instance(support: usize, clients: usize, rng: &mut Rng) -> Result<DiscreteInstance> {
    if support == 0 || clients == 0 {
        return Err(Error::InvalidInput(
            "instance needs support and clients".into(),
        ));
    }
    let draw_dist = |rng: &mut Rng| -> DiscreteDist {
        let mut probs: Vec<f64> = (0..support).map(|_| rng.gen_range(0.05..1.0)).collect();
        normalize(&mut probs);
        DiscreteDist::new(probs).expect("normalized")
    };
    let mut weights: Vec<f64> = (0..clients).map(|_| rng.gen_range(0.2..1.0)).collect();
    normalize(&mut weights);
    let true_dists = (0..clients).map(|_| draw_dist(rng)).collect();
    let model_dists = (0..clients).map(|_| draw_dist(rng)).collect();
    let inst = DiscreteInstance {
        weights,
        true_dists,
        model_dists,
        labels: (0..clients).collect(),
    };
    inst.validate()?;
    Ok(inst)
}

/// Normalizes in place and absorbs the rounding residual into the largest
/// entry so the sum is exactly 1.
fn normalize(values: &mut [f64]) {
    let sum: f64 = values.iter().sum();
    for v in values.iter_mut() {
        *v /= sum;
    }
    let residual = 1.0 - values.iter().sum::<f64>();
    let argmax = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty");
    values[argmax] += residual;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dist(probs: &[f64]) -> DiscreteDist {
        DiscreteDist::new(probs.to_vec()).unwrap()
    }

    #[test]
    fn kl_known_values() {
        let p = dist(&[1.0, 0.0]);
        let q = dist(&[0.5, 0.5]);
        assert_abs_diff_eq!(
            kl_divergence(&p, &q).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert!(kl_divergence(&q, &p).unwrap().is_infinite());
        assert!(kl_divergence(&p, &dist(&[1.0])).is_err());
    }

    #[test]
    fn tv_known_values() {
        let p = dist(&[1.0, 0.0]);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(tv_distance(&p, &dist(&[0.0, 1.0])).unwrap(), 1.0);
        assert_abs_diff_eq!(
            tv_distance(&p, &dist(&[0.5, 0.5])).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn pinsker_known_and_random() {
        let p = dist(&[1.0, 0.0]);
        let q = dist(&[0.5, 0.5]);
        assert!(verify_pinsker(&p, &q).unwrap());
        assert!(verify_pinsker(&p, &p).unwrap());

        let mut rng = Rng::new(21);
        for _ in 0..2000 {
            let s = rng.gen_range(2..=8usize);
            let a = random_instance(s, 1, &mut rng).unwrap();
            let b = random_instance(s, 1, &mut rng).unwrap();
            assert!(verify_pinsker(&a.true_dists[0], &b.true_dists[0]).unwrap());
        }
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = Rng::new(7);
        for _ in 0..1000 {
            let s = rng.gen_range(2..=8usize);
            let a = random_instance(s, 1, &mut rng).unwrap();
            let b = random_instance(s, 1, &mut rng).unwrap();
            let kl = kl_divergence(&a.true_dists[0], &b.model_dists[0]).unwrap();
            assert!(kl >= 0.0);
            assert_eq!(
                kl_divergence(&a.true_dists[0], &a.true_dists[0]).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn dist_validation() {
        assert!(DiscreteDist::new(vec![0.5, 0.5]).is_ok());
        assert!(DiscreteDist::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteDist::new(vec![-0.1, 1.1]).is_err());
        assert!(DiscreteDist::new(vec![]).is_err());
    }

    #[test]
    fn lemma1_identity_cases() {
        // q_k = p_k everywhere: both sides zero.
        let p1 = dist(&[0.7, 0.3]);
        let p2 = dist(&[0.2, 0.8]);
        let inst = DiscreteInstance {
            weights: vec![0.5, 0.5],
            true_dists: vec![p1.clone(), p2.clone()],
            model_dists: vec![p1.clone(), p2.clone()],
            labels: vec![0, 1],
        };
        let rep = verify_lemma1(&inst).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert_eq!(rep.rhs, 0.0);
        assert!(rep.holds);

        // Per-client KLs log 2 and 0 with π = (0.5, 0.5): joint KL = 0.3466.
        let inst = DiscreteInstance {
            weights: vec![0.5, 0.5],
            true_dists: vec![dist(&[1.0, 0.0]), p2.clone()],
            model_dists: vec![dist(&[0.5, 0.5]), p2],
            labels: vec![0, 1],
        };
        let rep = verify_lemma1(&inst).unwrap();
        assert_abs_diff_eq!(rep.lhs, 0.5 * std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.lhs, rep.rhs, epsilon = 1e-12);
    }

    #[test]
    fn lemma1_rejects_duplicate_labels() {
        let p = dist(&[0.5, 0.5]);
        let inst = DiscreteInstance {
            weights: vec![0.5, 0.5],
            true_dists: vec![p.clone(), p.clone()],
            model_dists: vec![p.clone(), p],
            labels: vec![3, 3],
        };
        assert!(verify_lemma1(&inst).is_err());
    }

    #[test]
    fn lemma1_equality_on_random_instances() {
        let mut rng = Rng::new(33);
        for _ in 0..200 {
            let s = rng.gen_range(2..=6usize);
            let k = rng.gen_range(2..=4usize);
            let inst = random_instance(s, k, &mut rng).unwrap();
            let rep = verify_lemma1(&inst).unwrap();
            assert!(
                (rep.lhs - rep.rhs).abs() <= 1e-9,
                "gap {} on lhs {} rhs {}",
                (rep.lhs - rep.rhs).abs(),
                rep.lhs,
                rep.rhs
            );
            assert!(rep.holds);
        }
    }

    #[test]
    fn theorem1_identical_dists_zero_excess() {
        let mut rng = Rng::new(40);
        let mut inst = random_instance(4, 3, &mut rng).unwrap();
        inst.model_dists = inst.true_dists.clone();
        let loss = BoundedLoss::default();
        let rep = verify_theorem1(&inst, &loss).unwrap();
        assert_eq!(rep.bound, 0.0);
        assert!(rep.excess.abs() <= 1e-12);
        assert!(rep.holds);
    }

    #[test]
    fn theorem1_adversarial_shift_within_bound() {
        // Models swap the classes' mass: the synthetic minimizer mislabels
        // every point, yet the excess stays under 2Mε̄.
        let inst = DiscreteInstance {
            weights: vec![0.5, 0.5],
            true_dists: vec![dist(&[0.9, 0.1]), dist(&[0.1, 0.9])],
            model_dists: vec![dist(&[0.1, 0.9]), dist(&[0.9, 0.1])],
            labels: vec![0, 1],
        };
        let loss = BoundedLoss::default();
        let rep = verify_theorem1(&inst, &loss).unwrap();
        assert!(rep.excess > 0.0, "excess {}", rep.excess);
        assert!(rep.holds, "excess {} bound {}", rep.excess, rep.bound);
    }

    #[test]
    fn theorem1_rejects_oversized_enumeration() {
        let mut rng = Rng::new(41);
        let inst = random_instance(9, 4, &mut rng).unwrap();
        assert!(matches!(
            verify_theorem1(&inst, &BoundedLoss::default()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn theorem1_holds_on_random_instances() {
        let mut rng = Rng::new(42);
        let loss = BoundedLoss::default();
        for _ in 0..100 {
            let inst = random_instance(6, 3, &mut rng).unwrap();
            let rep = verify_theorem1(&inst, &loss).unwrap();
            assert!(rep.holds, "excess {} bound {}", rep.excess, rep.bound);
            assert!(rep.excess >= -1e-12);
        }
    }
}
