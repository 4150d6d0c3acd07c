//! Evaluation metrics: accuracy, macro one-vs-rest AUROC, and
//! fidelity/diversity ECDF curves over L2 distances.

use ndarray::ArrayView2;

use crate::core::{ClassId, Error, Result};
use crate::data::LabeledDataset;
use crate::learner::ClassifierModel;

/// Fraction of argmax-correct predictions; argmax ties go to the lowest
/// class id.
pub fn accuracy(model: &ClassifierModel, test: &LabeledDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidInput(
            "accuracy needs a non-empty test set".into(),
        ));
    }
    let mut correct = 0usize;
    for i in 0..test.len() {
        if model.predict_class(test.sample(i))? == test.labels()[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Per-class accuracy; `None` for classes with no test samples.
pub fn per_class_accuracy(
    model: &ClassifierModel,
    test: &LabeledDataset,
) -> Result<Vec<Option<f64>>> {
    if test.is_empty() {
        return Err(Error::InvalidInput(
            "accuracy needs a non-empty test set".into(),
        ));
    }
    let c = model.n_classes().max(test.n_classes());
    let mut correct = vec![0usize; c];
    let mut total = vec![0usize; c];
    for i in 0..test.len() {
        let label = test.labels()[i];
        total[label] += 1;
        if model.predict_class(test.sample(i))? == label {
            correct[label] += 1;
        }
    }
    Ok((0..c)
        .map(|cls| {
            if total[cls] == 0 {
                None
            } else {
                Some(correct[cls] as f64 / total[cls] as f64)
            }
        })
        .collect())
}

/// Macro OvR AUROC plus the classes that had to be skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroAuroc {
    pub value: f64,
    /// Score columns with no positive labels, excluded from the macro mean.
    pub skipped_classes: Vec<ClassId>,
}

/// Macro one-vs-rest AUROC from an N×C score matrix via the mid-rank
/// Mann-Whitney statistic. Classes absent from `labels` are skipped with a
/// warning; fewer than two distinct labels is an undefined metric.
pub fn macro_ovr_auroc(scores: ArrayView2<'_, f64>, labels: &[ClassId]) -> Result<MacroAuroc> {
    let n = scores.nrows();
    let c = scores.ncols();
    if n != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{n} score rows but {} labels",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty score matrix".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {c} score columns"
        )));
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::UndefinedMetric(
            "macro OvR AUROC needs at least two classes in the labels".into(),
        ));
    }

    let mut total = 0.0;
    let mut included = 0usize;
    let mut skipped = Vec::new();
    for class in 0..c {
        let n_pos = labels.iter().filter(|&&l| l == class).count();
        if n_pos == 0 {
            log::warn!("macro OvR AUROC: class {class} absent from labels, skipping");
            skipped.push(class);
            continue;
        }
        let n_neg = n - n_pos;
        total += auroc_one_vs_rest(scores, labels, class, n_pos, n_neg);
        included += 1;
    }
    Ok(MacroAuroc {
        value: total / included as f64,
        skipped_classes: skipped,
    })
}

/// Mann-Whitney AUC with mid-ranks: `(Σ ranks of positives − n⁺(n⁺+1)/2) /
/// (n⁺ n⁻)`.
fn auroc_one_vs_rest(
    scores: ArrayView2<'_, f64>,
    labels: &[ClassId],
    class: ClassId,
    n_pos: usize,
    n_neg: usize,
) -> f64 {
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[(a, class)].total_cmp(&scores[(b, class)]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[(order[j + 1], class)] == scores[(order[i], class)] {
            j += 1;
        }
        // 1-based positions i+1..=j+1 share the mid-rank.
        let mid_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == class {
                rank_sum_pos += mid_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}

/// Empirical CDF with one step per distinct value.
#[derive(Debug, Clone, PartialEq)]
pub struct EcdfCurve {
    values: Vec<f64>,
    fractions: Vec<f64>,
}

impl EcdfCurve {
    pub fn from_values(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("ECDF needs at least one value".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite ECDF value".into()));
        }
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let mut values = Vec::new();
        let mut fractions = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && samples[j + 1] == samples[i] {
                j += 1;
            }
            values.push(samples[i]);
            fractions.push((j + 1) as f64 / n as f64);
            i = j + 1;
        }
        Ok(Self { values, fractions })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Cumulative fraction of mass at or below `x`.
    pub fn fraction_at_or_below(&self, x: f64) -> f64 {
        match self.values.partition_point(|&v| v <= x) {
            0 => 0.0,
            i => self.fractions[i - 1],
        }
    }

    /// Two-column CSV (`distance,cumulative_fraction`) for external plotting.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("distance,cumulative_fraction\n");
        for (v, f) in self.values.iter().zip(&self.fractions) {
            out.push_str(&format!("{v},{f}\n"));
        }
        out
    }
}

fn l2(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// ECDF over each synthetic sample's distance to its nearest real neighbor.
pub fn fidelity_ecdf(synthetic: &LabeledDataset, real: &LabeledDataset) -> Result<EcdfCurve> {
    if synthetic.is_empty() || real.is_empty() {
        return Err(Error::InvalidInput(
            "fidelity ECDF needs non-empty datasets".into(),
        ));
    }
    if synthetic.dim() != real.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: synthetic {} vs real {}",
            synthetic.dim(),
            real.dim()
        )));
    }
    let minima: Vec<f64> = (0..synthetic.len())
        .map(|i| {
            let s = synthetic.sample(i);
            (0..real.len())
                .map(|j| l2(s, real.sample(j)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    EcdfCurve::from_values(minima)
}

/// ECDF over all pairwise distances (i < j) among the synthetic samples.
pub fn diversity_ecdf(synthetic: &LabeledDataset) -> Result<EcdfCurve> {
    if synthetic.len() < 2 {
        return Err(Error::InvalidInput(
            "diversity ECDF needs at least 2 samples".into(),
        ));
    }
    let n = synthetic.len();
    let mut distances = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            distances.push(l2(synthetic.sample(i), synthetic.sample(j)));
        }
    }
    EcdfCurve::from_values(distances)
}

/// Per-class curves for classes present in both datasets; absent pairs are
/// skipped with a warning.
pub fn fidelity_ecdf_per_class(
    synthetic: &LabeledDataset,
    real: &LabeledDataset,
) -> Result<Vec<(ClassId, EcdfCurve)>> {
    let c = synthetic.n_classes().max(real.n_classes());
    let mut curves = Vec::new();
    for class in 0..c {
        let syn_idx: Vec<usize> = (0..synthetic.len())
            .filter(|&i| synthetic.labels()[i] == class)
            .collect();
        let real_idx: Vec<usize> = (0..real.len())
            .filter(|&i| real.labels()[i] == class)
            .collect();
        if syn_idx.is_empty() || real_idx.is_empty() {
            log::warn!("fidelity ECDF: class {class} missing on one side, skipping");
            continue;
        }
        curves.push((
            class,
            fidelity_ecdf(&synthetic.subset(&syn_idx), &real.subset(&real_idx))?,
        ));
    }
    Ok(curves)
}

/// Per-class diversity for classes with at least two synthetic samples.
pub fn diversity_ecdf_per_class(synthetic: &LabeledDataset) -> Result<Vec<(ClassId, EcdfCurve)>> {
    let mut curves = Vec::new();
    for class in 0..synthetic.n_classes() {
        let idx: Vec<usize> = (0..synthetic.len())
            .filter(|&i| synthetic.labels()[i] == class)
            .collect();
        if idx.len() < 2 {
            log::warn!("diversity ECDF: class {class} has fewer than 2 samples, skipping");
            continue;
        }
        curves.push((class, diversity_ecdf(&synthetic.subset(&idx))?));
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{Provenance, Rng};
    use approx::assert_abs_diff_eq;
    use ndarray::{arr2, Array2};
    use rand::Rng as _;

    fn dataset(points: &[(f64, f64)], labels: &[ClassId]) -> LabeledDataset {
        let features = Array2::from_shape_fn((points.len(), 2), |(i, j)| {
            if j == 0 {
                points[i].0
            } else {
                points[i].1
            }
        });
        LabeledDataset::new(
            features,
            labels.to_vec(),
            vec![Provenance::Real(None); points.len()],
        )
        .unwrap()
    }

    /// O(n⁺·n⁻) pairwise-comparison oracle.
    fn auroc_brute_force(scores: &Array2<f64>, labels: &[ClassId], class: ClassId) -> f64 {
        let pos: Vec<f64> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| scores[(i, class)])
            .collect();
        let neg: Vec<f64> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != class)
            .map(|(i, _)| scores[(i, class)])
            .collect();
        let mut acc = 0.0;
        for &p in &pos {
            for &q in &neg {
                acc += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        acc / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn auroc_perfect_and_tied() {
        let scores = arr2(&[[0.9, 0.1], [0.8, 0.2], [0.2, 0.8], [0.1, 0.9]]);
        let labels = [0, 0, 1, 1];
        let out = macro_ovr_auroc(scores.view(), &labels).unwrap();
        assert_eq!(out.value, 1.0);
        assert!(out.skipped_classes.is_empty());

        let flat = Array2::from_elem((6, 2), 0.5);
        let labels = [0, 1, 0, 1, 0, 1];
        let out = macro_ovr_auroc(flat.view(), &labels).unwrap();
        assert_abs_diff_eq!(out.value, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        let mut rng = Rng::new(51);
        for _ in 0..100 {
            let n = rng.gen_range(5..20usize);
            let c = rng.gen_range(2..4usize);
            // Coarse grid scores force plenty of ties.
            let scores = Array2::from_shape_fn((n, c), |_| (rng.gen_range(0..5) as f64) / 4.0);
            let mut labels: Vec<ClassId> = (0..n).map(|i| i % c).collect();
            for l in labels.iter_mut() {
                if rng.gen_range(0.0..1.0) < 0.3 {
                    *l = rng.gen_range(0..c);
                }
            }
            if labels
                .iter()
                .collect::<std::collections::HashSet<_>>()
                .len()
                < 2
            {
                continue;
            }
            let out = macro_ovr_auroc(scores.view(), &labels).unwrap();
            let mut expected = 0.0;
            let mut count = 0;
            for class in 0..c {
                if labels.iter().any(|&l| l == class) {
                    expected += auroc_brute_force(&scores, &labels, class);
                    count += 1;
                }
            }
            expected /= count as f64;
            assert!(
                (out.value - expected).abs() <= 1e-12,
                "mid-rank {} vs oracle {expected}",
                out.value
            );
        }
    }

    #[test]
    fn auroc_skips_absent_class_and_rejects_single_class() {
        let scores = arr2(&[[0.7, 0.2, 0.1], [0.3, 0.6, 0.1], [0.5, 0.4, 0.1]]);
        let labels = [0, 1, 0];
        let out = macro_ovr_auroc(scores.view(), &labels).unwrap();
        assert_eq!(out.skipped_classes, vec![2]);

        let labels = [1, 1, 1];
        assert!(matches!(
            macro_ovr_auroc(scores.view(), &labels),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn accuracy_tie_break_picks_class_zero() {
        let model = ClassifierModel::zero_init(2, 2);
        let test = dataset(
            &[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)],
            &[0, 0, 1, 1],
        );
        // Uniform predictions always pick class 0.
        assert_abs_diff_eq!(accuracy(&model, &test).unwrap(), 0.5, epsilon = 1e-15);
        let per = per_class_accuracy(&model, &test).unwrap();
        assert_eq!(per, vec![Some(1.0), Some(0.0)]);
    }

    #[test]
    fn ecdf_shapes_and_invariants() {
        let single = EcdfCurve::from_values(vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(single.values(), &[0.0]);
        assert_eq!(single.fractions(), &[1.0]);

        let mut rng = Rng::new(60);
        let samples: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..10.0)).collect();
        let curve = EcdfCurve::from_values(samples).unwrap();
        for w in curve.values().windows(2) {
            assert!(w[0] < w[1]);
        }
        for w in curve.fractions().windows(2) {
            assert!(w[0] < w[1]);
        }
        assert_eq!(*curve.fractions().last().unwrap(), 1.0);
        assert_eq!(curve.fraction_at_or_below(-1.0), 0.0);
        assert_eq!(curve.fraction_at_or_below(10.0), 1.0);
    }

    #[test]
    fn fidelity_self_match_is_zero() {
        let data = dataset(&[(0.0, 0.0), (1.0, 2.0), (3.0, -1.0)], &[0, 0, 0]);
        let curve = fidelity_ecdf(&data, &data).unwrap();
        assert_eq!(curve.values(), &[0.0]);
        assert_eq!(curve.fractions(), &[1.0]);
    }

    #[test]
    fn fidelity_single_pair_distance() {
        let synth = dataset(&[(5.0, 0.0)], &[0]);
        let real = dataset(&[(0.0, 0.0)], &[0]);
        let curve = fidelity_ecdf(&synth, &real).unwrap();
        assert_eq!(curve.values(), &[5.0]);

        let wrong_dim =
            LabeledDataset::new(Array2::zeros((1, 3)), vec![0], vec![Provenance::Real(None)])
                .unwrap();
        assert!(fidelity_ecdf(&synth, &wrong_dim).is_err());
    }

    #[test]
    fn fidelity_matches_independent_scan() {
        // Loop order swapped relative to the implementation.
        let mut rng = Rng::new(61);
        let synth_pts: Vec<(f64, f64)> = (0..50)
            .map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
            .collect();
        let real_pts: Vec<(f64, f64)> = (0..70)
            .map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
            .collect();
        let synth = dataset(&synth_pts, &vec![0; 50]);
        let real = dataset(&real_pts, &vec![0; 70]);
        let curve = fidelity_ecdf(&synth, &real).unwrap();

        let mut minima = vec![f64::INFINITY; 50];
        for (j, r) in real_pts.iter().enumerate() {
            let _ = j;
            for (i, s) in synth_pts.iter().enumerate() {
                let d = ((s.0 - r.0).powi(2) + (s.1 - r.1).powi(2)).sqrt();
                minima[i] = minima[i].min(d);
            }
        }
        let oracle = EcdfCurve::from_values(minima).unwrap();
        assert_eq!(curve, oracle);
    }

    #[test]
    fn diversity_counts_and_edge_cases() {
        let two = dataset(&[(0.0, 0.0), (3.0, 0.0)], &[0, 0]);
        let curve = diversity_ecdf(&two).unwrap();
        assert_eq!(curve.values(), &[3.0]);

        let one = dataset(&[(0.0, 0.0)], &[0]);
        assert!(diversity_ecdf(&one).is_err());

        let mut rng = Rng::new(62);
        let pts: Vec<(f64, f64)> = (0..50)
            .map(|_| (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
            .collect();
        let data = dataset(&pts, &vec![0; 50]);
        let curve = diversity_ecdf(&data).unwrap();
        // Random reals are pairwise distinct, so every pair is one step.
        assert_eq!(curve.len(), 50 * 49 / 2);

        let identical = dataset(&[(1.0, 1.0); 10], &[0; 10]);
        let collapsed = diversity_ecdf(&identical).unwrap();
        assert_eq!(collapsed.values(), &[0.0]);
    }

    #[test]
    fn per_class_curves_skip_missing() {
        let synth = dataset(&[(0.0, 0.0), (0.1, 0.0), (5.0, 5.0)], &[0, 0, 1]);
        let real = dataset(&[(0.0, 0.0), (1.0, 1.0)], &[0, 0]);
        let fid = fidelity_ecdf_per_class(&synth, &real).unwrap();
        assert_eq!(fid.len(), 1);
        assert_eq!(fid[0].0, 0);
        let div = diversity_ecdf_per_class(&synth).unwrap();
        assert_eq!(div.len(), 1);
        assert_eq!(div[0].0, 0);
    }

    #[test]
    fn ecdf_csv_format() {
        let curve = EcdfCurve::from_values(vec![1.0, 2.0]).unwrap();
        let csv = curve.to_csv_string();
        assert_eq!(csv, "distance,cumulative_fraction\n1,0.5\n2,1\n");
    }
}
