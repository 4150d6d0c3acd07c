//! Experiment execution and artifact plumbing: one directory per run holding
//! the checkpoint, result JSON, matrix manifest and ECDF curves, a content
//! hash manifest over all of them, and one line appended to the shared
//! results file.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fedfactory::baselines::{run_fedavg, run_fedprox};
use fedfactory::genmatrix::{flush_and_resynthesize, read_manifest, unlearn, write_manifest};
use fedfactory::learner::train_classifier_with_classes;
use fedfactory::metrics::{
    accuracy, diversity_ecdf, diversity_ecdf_per_class, fidelity_ecdf, fidelity_ecdf_per_class,
    macro_ovr_auroc,
};
use fedfactory::protocols::{run_centralized_baseline, run_protocol_a, run_protocol_b};
use fedfactory::{
    BoundedLoss, ClassifierModel, ExperimentResult, LabeledDataset, Provenance, Rng, UnlearnRequest,
};

use crate::config::{
    build_world, PartitionModeName, ProtocolKind, RunConfig, STREAM_FEDAVG, STREAM_FEDPROX,
    STREAM_PROTOCOL_A, STREAM_PROTOCOL_B, STREAM_UNLEARN_SYNTH,
};
use crate::{CliError, CliResult};

/// One row of the shared results file; field order is the column order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsLine {
    pub run_id: String,
    pub protocol: String,
    pub partition: String,
    pub seed: u64,
    pub accuracy: f64,
    pub auroc: f64,
    pub uplink_bytes: u64,
    pub broadcast_bytes: u64,
    pub rounds: u32,
    pub flops_proxy: u64,
    pub timestamp_ns: u64,
}

pub struct RunOutput {
    pub line: ResultsLine,
    pub run_dir: PathBuf,
}

fn now_ns() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock before 1970")
        .as_nanos() as u64
}

fn io_err(context: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{context} {}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| io_err("writing", path, e))
}

/// Executes the configured protocol and writes every per-run artifact. The
/// caller appends the returned results line; sweeps run many of these
/// concurrently and merge lines afterwards.
pub fn execute_run(cfg: &RunConfig) -> CliResult<RunOutput> {
    let world = build_world(cfg)?;
    let loss = BoundedLoss::default();
    let seed = cfg.seed;
    let train_cfg = cfg.train.to_config(seed);

    enum Trained {
        Single(ClassifierModel),
        Experts(Vec<ClassifierModel>),
    }
    let mut matrix = None;
    let mut synthetic = None;

    let (trained, result): (Trained, ExperimentResult) = match cfg.protocol {
        ProtocolKind::Fedavg => {
            let fed = cfg.fed.to_config(train_cfg);
            let (model, result) = run_fedavg(
                &world.train,
                &world.part,
                &world.test,
                &fed,
                &loss,
                &Rng::new(seed + STREAM_FEDAVG),
            )
            .map_err(CliError::runtime)?;
            (Trained::Single(model), result)
        }
        ProtocolKind::Fedprox => {
            let fed = cfg.fed.to_config(train_cfg);
            let (model, result) = run_fedprox(
                &world.train,
                &world.part,
                &world.test,
                &fed,
                &loss,
                &Rng::new(seed + STREAM_FEDPROX),
            )
            .map_err(CliError::runtime)?;
            (Trained::Single(model), result)
        }
        ProtocolKind::Centralized => {
            let (model, result) =
                run_centralized_baseline(&world.train, &world.test, &train_cfg, &loss)
                    .map_err(CliError::runtime)?;
            (Trained::Single(model), result)
        }
        ProtocolKind::ProtocolA => {
            let out = run_protocol_a(
                &world.train,
                &world.part,
                &world.test,
                &cfg.factory.to_config(),
                cfg.n_target.expect("validated"),
                &train_cfg,
                &loss,
                &Rng::new(seed + STREAM_PROTOCOL_A),
            )
            .map_err(CliError::runtime)?;
            matrix = Some(out.matrix);
            synthetic = Some(out.synthetic);
            (Trained::Single(out.model), out.result)
        }
        ProtocolKind::ProtocolB => {
            let out = run_protocol_b(
                &world.train,
                &world.part,
                &world.test,
                &cfg.factory.to_config(),
                cfg.n_target.expect("validated"),
                &train_cfg,
                &cfg.poe.to_config(),
                &loss,
                &Rng::new(seed + STREAM_PROTOCOL_B),
            )
            .map_err(CliError::runtime)?;
            matrix = Some(out.matrix);
            (Trained::Experts(out.experts), out.result)
        }
    };

    let run_id = cfg.run_id();
    let run_dir = cfg
        .out_dir()?
        .join(format!("{}-seed{}-{}", cfg.protocol, seed, &run_id[..12]));
    fs::create_dir_all(&run_dir).map_err(|e| io_err("creating", &run_dir, e))?;

    write_file(
        &run_dir.join("result.json"),
        serde_json::to_string_pretty(&result)
            .map_err(|e| CliError::runtime(format!("serializing result: {e}")))?
            .as_bytes(),
    )?;
    match &trained {
        Trained::Single(model) => write_file(&run_dir.join("model.ffck"), &model.to_bytes())?,
        Trained::Experts(experts) => {
            for (k, expert) in experts.iter().enumerate() {
                write_file(
                    &run_dir.join(format!("expert-{k}.ffck")),
                    &expert.to_bytes(),
                )?;
            }
        }
    }
    if let Some(matrix) = &matrix {
        let dir = run_dir.join("matrix");
        fs::create_dir_all(&dir).map_err(|e| io_err("creating", &dir, e))?;
        write_manifest(matrix, &dir).map_err(CliError::runtime)?;
    }
    if let Some(synthetic) = &synthetic {
        write_ecdfs(&run_dir, synthetic, &world.train)?;
    }
    write_run_manifest(&run_dir)?;

    let line = ResultsLine {
        run_id,
        protocol: result.protocol.clone(),
        partition: cfg.partition.descriptor(),
        seed,
        accuracy: result.accuracy,
        auroc: result.auroc,
        uplink_bytes: result.ledger.uplink_bytes,
        broadcast_bytes: result.ledger.broadcast_bytes,
        rounds: result.ledger.max_rounds(),
        flops_proxy: result.ledger.flops_proxy,
        timestamp_ns: now_ns(),
    };
    Ok(RunOutput { line, run_dir })
}

/// Fidelity and diversity curves for the synthetic buffer, pooled and per
/// class, each as a two-column CSV.
fn write_ecdfs(run_dir: &Path, synthetic: &LabeledDataset, real: &LabeledDataset) -> CliResult<()> {
    let dir = run_dir.join("ecdf");
    fs::create_dir_all(&dir).map_err(|e| io_err("creating", &dir, e))?;
    let fid = fidelity_ecdf(synthetic, real).map_err(CliError::runtime)?;
    write_file(
        &dir.join("fidelity_pooled.csv"),
        fid.to_csv_string().as_bytes(),
    )?;
    let div = diversity_ecdf(synthetic).map_err(CliError::runtime)?;
    write_file(
        &dir.join("diversity_pooled.csv"),
        div.to_csv_string().as_bytes(),
    )?;
    for (class, curve) in fidelity_ecdf_per_class(synthetic, real).map_err(CliError::runtime)? {
        write_file(
            &dir.join(format!("fidelity_class_{class}.csv")),
            curve.to_csv_string().as_bytes(),
        )?;
    }
    for (class, curve) in diversity_ecdf_per_class(synthetic).map_err(CliError::runtime)? {
        write_file(
            &dir.join(format!("diversity_class_{class}.csv")),
            curve.to_csv_string().as_bytes(),
        )?;
    }
    Ok(())
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| io_err("hashing", path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    for entry in fs::read_dir(dir).map_err(|e| io_err("listing", dir, e))? {
        let path = entry.map_err(|e| io_err("listing", dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Lists every artifact in the run directory with its SHA-256, so a consumer
/// can verify integrity. The manifest itself is excluded.
fn write_run_manifest(run_dir: &Path) -> CliResult<()> {
    let mut files = Vec::new();
    collect_files(run_dir, &mut files)?;
    files.sort();
    let mut out = String::from("path,sha256\n");
    for path in files {
        let rel = path.strip_prefix(run_dir).expect("under run_dir");
        out.push_str(&format!("{},{}\n", rel.display(), sha256_file(&path)?));
    }
    write_file(&run_dir.join("manifest.csv"), out.as_bytes())
}

/// Appends lines to `<out_dir>/results.csv`, creating it with a header first.
pub fn append_results(out_dir: &Path, lines: &[ResultsLine]) -> CliResult<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| io_err("creating", out_dir, e))?;
    let path = out_dir.join("results.csv");
    let fresh = !path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| io_err("opening", &path, e))?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    for line in lines {
        writer
            .serialize(line)
            .map_err(|e| CliError::runtime(format!("writing results line: {e}")))?;
    }
    writer.flush().map_err(|e| io_err("flushing", &path, e))?;
    Ok(path)
}

pub enum SweepAxis {
    /// Partition α values; the string "silo" selects the silo endpoint.
    Alphas(Vec<String>),
    Seeds(Vec<u64>),
}

/// Expands the axis into per-arm configs, labeled by axis value.
fn expand_axis(base: &RunConfig, axis: &SweepAxis) -> CliResult<Vec<(String, RunConfig)>> {
    let mut arms = Vec::new();
    match axis {
        SweepAxis::Alphas(values) => {
            if values.is_empty() {
                return Err(CliError::Config("sweep: --alphas is empty".into()));
            }
            for value in values {
                let mut cfg = base.clone();
                if value == "silo" {
                    cfg.partition.mode = PartitionModeName::Silo;
                    cfg.partition.alpha = None;
                } else {
                    let alpha: f64 = value.parse().map_err(|_| {
                        CliError::Config(format!(
                            "sweep: alpha \"{value}\" is neither a number nor \"silo\""
                        ))
                    })?;
                    if !(alpha > 0.0) || !alpha.is_finite() {
                        return Err(CliError::Config(format!(
                            "sweep: alpha must be finite and > 0, got {alpha}"
                        )));
                    }
                    cfg.partition.mode = PartitionModeName::Dirichlet;
                    cfg.partition.alpha = Some(alpha);
                }
                arms.push((value.clone(), cfg));
            }
        }
        SweepAxis::Seeds(seeds) => {
            if seeds.is_empty() {
                return Err(CliError::Config("sweep: --seeds is empty".into()));
            }
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.seed = seed;
                arms.push((seed.to_string(), cfg));
            }
        }
    }
    Ok(arms)
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    axis: &'static str,
    value: String,
    n_runs: usize,
    accuracy_mean: f64,
    accuracy_std: f64,
    auroc_mean: f64,
    auroc_std: f64,
    uplink_bytes_mean: f64,
    broadcast_bytes_mean: f64,
    flops_mean: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(axis: &'static str, value: String, lines: &[&ResultsLine]) -> SummaryRow {
    let acc: Vec<f64> = lines.iter().map(|l| l.accuracy).collect();
    let auc: Vec<f64> = lines.iter().map(|l| l.auroc).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&acc);
    let (auroc_mean, auroc_std) = mean_std(&auc);
    let n = lines.len() as f64;
    SummaryRow {
        axis,
        value,
        n_runs: lines.len(),
        accuracy_mean,
        accuracy_std,
        auroc_mean,
        auroc_std,
        uplink_bytes_mean: lines.iter().map(|l| l.uplink_bytes as f64).sum::<f64>() / n,
        broadcast_bytes_mean: lines.iter().map(|l| l.broadcast_bytes as f64).sum::<f64>() / n,
        flops_mean: lines.iter().map(|l| l.flops_proxy as f64).sum::<f64>() / n,
    }
}

/// Runs one config per axis value (concurrently up to the rayon pool size),
/// appends all results lines in axis order, and writes `summary.csv` with
/// mean and standard deviation per metric.
pub fn run_sweep(base: &RunConfig, axis: &SweepAxis) -> CliResult<(PathBuf, Vec<ResultsLine>)> {
    let arms = expand_axis(base, axis)?;
    for (_, cfg) in &arms {
        cfg.validate()?;
    }
    let out_dir = base.out_dir()?.to_path_buf();

    use rayon::prelude::*;
    let outputs: Vec<CliResult<RunOutput>> =
        arms.par_iter().map(|(_, cfg)| execute_run(cfg)).collect();
    let mut lines = Vec::new();
    for output in outputs {
        lines.push(output?.line);
    }
    append_results(&out_dir, &lines)?;

    let rows: Vec<SummaryRow> = match axis {
        // Seed sweeps aggregate into one mean-and-spread row.
        SweepAxis::Seeds(seeds) => {
            let all: Vec<&ResultsLine> = lines.iter().collect();
            let label = seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join("|");
            vec![summarize("seeds", label, &all)]
        }
        // Alpha sweeps keep one row per skew level so the trend is readable.
        SweepAxis::Alphas(_) => arms
            .iter()
            .zip(&lines)
            .map(|((value, _), line)| summarize("alpha", value.clone(), &[line]))
            .collect(),
    };
    let path = out_dir.join("summary.csv");
    let mut writer = csv::Writer::from_path(&path)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))?;
    for row in &rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::runtime(format!("writing summary row: {e}")))?;
    }
    writer.flush().map_err(|e| io_err("flushing", &path, e))?;
    Ok((path, lines))
}

/// Parses `vertical:K`, `horizontal:C`, or `targeted:C,K`.
pub fn parse_request(text: &str) -> CliResult<UnlearnRequest> {
    let bad = || {
        CliError::Config(format!(
            "request \"{text}\": expected vertical:K, horizontal:C, or targeted:C,K"
        ))
    };
    let (kind, args) = text.split_once(':').ok_or_else(bad)?;
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    match kind {
        "vertical" => Ok(UnlearnRequest::Vertical {
            client: parse(args)?,
        }),
        "horizontal" => Ok(UnlearnRequest::Horizontal {
            class: parse(args)?,
        }),
        "targeted" => {
            let (c, k) = args.split_once(',').ok_or_else(bad)?;
            Ok(UnlearnRequest::Targeted {
                class: parse(c)?,
                client: parse(k)?,
            })
        }
        _ => Err(bad()),
    }
}

/// Per-cell sample counts of a synthetic buffer, by provenance tag.
fn provenance_counts(data: &LabeledDataset, n_classes: usize, n_clients: usize) -> Array2<usize> {
    let mut counts = Array2::zeros((n_classes, n_clients));
    for tag in data.provenance() {
        if let Provenance::Synthetic { client, class } = tag {
            counts[(*class, *client)] += 1;
        }
    }
    counts
}

#[derive(Serialize)]
pub struct UnlearnReport {
    pub request: UnlearnRequest,
    pub deleted_cells: Vec<(usize, usize)>,
    pub surviving_cells: usize,
    pub accuracy: f64,
    pub auroc: f64,
    pub skipped_classes: Vec<usize>,
}

/// Applies the request to a stored matrix: audits provenance before and
/// after the flush, retrains on the resynthesized buffer, and re-evaluates.
/// A horizontal deletion removes the class from the evaluation set too; the
/// AUROC then skips that score column (no positives remain).
pub fn run_unlearn(
    cfg: &RunConfig,
    matrix_dir: &Path,
    request: UnlearnRequest,
) -> CliResult<(PathBuf, UnlearnReport)> {
    let n_target = cfg
        .n_target
        .ok_or_else(|| CliError::Config("n_target: required for unlearn".into()))?;
    let before = read_manifest(matrix_dir)
        .map_err(|e| CliError::Config(format!("matrix manifest {}: {e}", matrix_dir.display())))?;
    let after = unlearn(&before, request).map_err(|e| CliError::Config(e.to_string()))?;

    let synth_rng = Rng::new(cfg.seed + STREAM_UNLEARN_SYNTH);
    let buffer_before =
        flush_and_resynthesize(&before, n_target, &synth_rng).map_err(CliError::runtime)?;
    let buffer_after =
        flush_and_resynthesize(&after, n_target, &synth_rng).map_err(CliError::runtime)?;

    let out_dir = cfg.out_dir()?;
    fs::create_dir_all(out_dir).map_err(|e| io_err("creating", out_dir, e))?;

    // Audit: per-cell counts before and after; deleted cells must hit zero.
    let (c, k) = (before.n_classes(), before.n_clients());
    let counts_before = provenance_counts(&buffer_before, c, k);
    let counts_after = provenance_counts(&buffer_after, c, k);
    let deleted_cells: Vec<(usize, usize)> = before
        .occupied_cells()
        .into_iter()
        .filter(|&cell| after.get(cell.0, cell.1).is_none())
        .collect();
    let mut audit = String::from("class,client,deleted,samples_before,samples_after\n");
    for class in 0..c {
        for client in 0..k {
            audit.push_str(&format!(
                "{class},{client},{},{},{}\n",
                deleted_cells.contains(&(class, client)),
                counts_before[(class, client)],
                counts_after[(class, client)]
            ));
        }
    }
    let audit_path = out_dir.join("unlearn_audit.csv");
    write_file(&audit_path, audit.as_bytes())?;

    // Retrain on the post-deletion buffer and re-evaluate.
    let world = build_world(cfg)?;
    let loss = BoundedLoss::default();
    let model = train_classifier_with_classes(
        &buffer_after,
        world.n_classes,
        &cfg.train.to_config(cfg.seed),
        &loss,
    )
    .map_err(CliError::runtime)?;
    let eval_set = match request {
        UnlearnRequest::Horizontal { class } => exclude_class(&world.test, class),
        _ => world.test,
    };
    let acc = accuracy(&model, &eval_set).map_err(CliError::runtime)?;
    let scores = model
        .predict_proba_batch(&eval_set)
        .map_err(CliError::runtime)?;
    let auroc = macro_ovr_auroc(scores.view(), eval_set.labels()).map_err(CliError::runtime)?;

    let report = UnlearnReport {
        request,
        deleted_cells,
        surviving_cells: after.n_occupied(),
        accuracy: acc,
        auroc: auroc.value,
        skipped_classes: auroc.skipped_classes,
    };
    write_file(
        &out_dir.join("unlearn_result.json"),
        serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::runtime(format!("serializing report: {e}")))?
            .as_bytes(),
    )?;
    let matrix_out = out_dir.join("matrix-after");
    fs::create_dir_all(&matrix_out).map_err(|e| io_err("creating", &matrix_out, e))?;
    write_manifest(&after, &matrix_out).map_err(CliError::runtime)?;
    Ok((audit_path, report))
}

fn exclude_class(data: &LabeledDataset, class: usize) -> LabeledDataset {
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels()[i] != class)
        .collect();
    let features = data.features();
    let rows = Array2::from_shape_fn((keep.len(), data.dim()), |(i, j)| features[(keep[i], j)]);
    let labels = keep.iter().map(|&i| data.labels()[i]).collect();
    let provenance = keep.iter().map(|&i| data.provenance()[i]).collect();
    LabeledDataset::new(rows, labels, provenance).expect("filtered rows stay consistent")
}
