//! Numerical verification sweeps over the decomposition identity, the excess
//! risk bound, and the Pinsker inequality. The report is deterministic for a
//! fixed seed; any violation turns into a runtime error after the report is
//! written, so scripts see a nonzero exit.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use fedfactory::theory::{
    kl_divergence, random_instance, tv_distance, verify_lemma1, verify_pinsker, verify_theorem1,
    DiscreteDist,
};
use fedfactory::{BoundedLoss, Rng};

use crate::{CliError, CliResult};

pub struct TheoryOptions {
    pub lemma1_count: usize,
    pub theorem1_count: usize,
    pub pinsker_count: usize,
    pub seed: u64,
    /// Test hook: adds a fixed offset to the decomposition's left side so
    /// the violation path is exercisable end to end.
    pub inject_kl_error: bool,
}

const LEMMA1_TOL: f64 = 1e-9;

struct CheckRow {
    check: &'static str,
    count: usize,
    max_deviation: f64,
    violations: usize,
}

/// Draws a random distribution with occasional zero entries, exercising the
/// infinite-KL branch of the inequality check.
fn sparse_dist(support: usize, rng: &mut Rng) -> DiscreteDist {
    let mut v: Vec<f64> = (0..support)
        .map(|_| {
            if rng.gen_range(0.0..1.0) < 0.1 {
                0.0
            } else {
                rng.gen_range(0.01..1.0)
            }
        })
        .collect();
    let total: f64 = v.iter().sum();
    if total == 0.0 {
        v[0] = 1.0;
    } else {
        for x in v.iter_mut() {
            *x /= total;
        }
        let residual = 1.0 - v.iter().sum::<f64>();
        let argmax = (0..support).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        v[argmax] += residual;
    }
    DiscreteDist::new(v).expect("normalized by construction")
}

pub fn run_verify_theory(opts: &TheoryOptions, out_dir: &Path) -> CliResult<PathBuf> {
    for (name, count) in [
        ("--lemma1-count", opts.lemma1_count),
        ("--theorem1-count", opts.theorem1_count),
        ("--pinsker-count", opts.pinsker_count),
    ] {
        if count == 0 {
            return Err(CliError::Config(format!("{name}: must be >= 1")));
        }
    }
    let loss = BoundedLoss::default();
    let mut rows = Vec::new();

    let mut rng = Rng::new(opts.seed);
    let mut max_dev = 0.0f64;
    let mut violations = 0usize;
    for _ in 0..opts.lemma1_count {
        let s = rng.gen_range(2..=10usize);
        let k = rng.gen_range(1..=5usize);
        let inst = random_instance(s, k, &mut rng).map_err(CliError::runtime)?;
        let report = verify_lemma1(&inst).map_err(CliError::runtime)?;
        let lhs = report.lhs + if opts.inject_kl_error { 1e-6 } else { 0.0 };
        let dev = (lhs - report.rhs).abs();
        max_dev = max_dev.max(dev);
        if dev > LEMMA1_TOL {
            violations += 1;
        }
    }
    rows.push(CheckRow {
        check: "lemma1_decomposition",
        count: opts.lemma1_count,
        max_deviation: max_dev,
        violations,
    });

    let mut max_excess_over_bound = f64::NEG_INFINITY;
    let mut violations = 0usize;
    for _ in 0..opts.theorem1_count {
        let inst = random_instance(6, 3, &mut rng).map_err(CliError::runtime)?;
        let report = verify_theorem1(&inst, &loss).map_err(CliError::runtime)?;
        max_excess_over_bound = max_excess_over_bound.max(report.excess - report.bound);
        if !report.holds {
            violations += 1;
        }
    }
    rows.push(CheckRow {
        check: "theorem1_excess_risk",
        count: opts.theorem1_count,
        max_deviation: max_excess_over_bound,
        violations,
    });

    let mut max_gap = f64::NEG_INFINITY;
    let mut violations = 0usize;
    for _ in 0..opts.pinsker_count {
        let s = rng.gen_range(2..=12usize);
        let p = sparse_dist(s, &mut rng);
        let q = sparse_dist(s, &mut rng);
        let kl = kl_divergence(&p, &q).map_err(CliError::runtime)?;
        if kl.is_finite() {
            let tv = tv_distance(&p, &q).map_err(CliError::runtime)?;
            max_gap = max_gap.max(tv - (kl / 2.0).sqrt());
        }
        if !verify_pinsker(&p, &q).map_err(CliError::runtime)? {
            violations += 1;
        }
    }
    rows.push(CheckRow {
        check: "pinsker_inequality",
        count: opts.pinsker_count,
        max_deviation: max_gap,
        violations,
    });

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", out_dir.display())))?;
    let path = out_dir.join("theory_report.csv");
    let mut out = String::from("check,count,max_deviation,violations,status\n");
    let mut total_violations = 0usize;
    for row in &rows {
        total_violations += row.violations;
        out.push_str(&format!(
            "{},{},{:.6e},{},{}\n",
            row.check,
            row.count,
            row.max_deviation,
            row.violations,
            if row.violations == 0 {
                "ok"
            } else {
                "violated"
            }
        ));
        println!(
            "{}: {} instances, max deviation {:.3e}, {} violations",
            row.check, row.count, row.max_deviation, row.violations
        );
    }
    fs::write(&path, &out)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))?;
    if total_violations > 0 {
        return Err(CliError::runtime(format!(
            "{total_violations} violations; see {}",
            path.display()
        )));
    }
    Ok(path)
}
