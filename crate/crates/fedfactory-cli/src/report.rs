//! Pivots a results file into two summary tables: quality per method and
//! communication/compute cost per method, with the byte ratio against the
//! one-shot uplink baseline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::runner::ResultsLine;
use crate::{CliError, CliResult};

#[derive(Serialize)]
struct Table1Row {
    method: String,
    partition: String,
    n_runs: usize,
    accuracy_mean: f64,
    accuracy_std: f64,
    auroc_mean: f64,
    auroc_std: f64,
}

#[derive(Serialize)]
struct Table2Row {
    method: String,
    partition: String,
    n_runs: usize,
    rounds: u32,
    uplink_bytes_mean: f64,
    broadcast_bytes_mean: f64,
    total_bytes_mean: f64,
    flops_mean: f64,
    /// Total bytes relative to the protocol_a uplink mean; empty when the
    /// results hold no protocol_a runs.
    bytes_vs_protocol_a: String,
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

fn read_lines(path: &Path) -> CliResult<Vec<ResultsLine>> {
    let file = fs::File::open(path)
        .map_err(|e| CliError::runtime(format!("opening {}: {e}", path.display())))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut lines = Vec::new();
    for record in reader.deserialize::<ResultsLine>() {
        match record {
            Ok(line) => lines.push(line),
            Err(e) => {
                let line_no = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(CliError::runtime(format!(
                    "{} line {line_no}: {e}",
                    path.display()
                )));
            }
        }
    }
    Ok(lines)
}

fn write_table<T: Serialize>(path: &Path, rows: &[T], header: &str) -> CliResult<()> {
    if rows.is_empty() {
        // Header-only file so downstream tooling still sees the schema.
        return fs::write(path, format!("{header}\n"))
            .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())));
    }
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::runtime(format!("writing table row: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| CliError::runtime(format!("flushing {}: {e}", path.display())))
}

/// Groups results by (protocol, partition) and writes `table1.csv`
/// (quality) and `table2.csv` (cost) next to the output directory.
pub fn run_report(results: &Path, out_dir: &Path) -> CliResult<(PathBuf, PathBuf)> {
    let lines = read_lines(results)?;
    let mut groups: BTreeMap<(String, String), Vec<&ResultsLine>> = BTreeMap::new();
    for line in &lines {
        groups
            .entry((line.protocol.clone(), line.partition.clone()))
            .or_default()
            .push(line);
    }

    // Denominator for the communication ratio: mean uplink of protocol_a runs.
    let a_uplinks: Vec<f64> = lines
        .iter()
        .filter(|l| l.protocol == "protocol_a")
        .map(|l| l.uplink_bytes as f64)
        .collect();
    let a_uplink_mean =
        (!a_uplinks.is_empty()).then(|| a_uplinks.iter().sum::<f64>() / a_uplinks.len() as f64);

    let mut table1 = Vec::new();
    let mut table2 = Vec::new();
    for ((protocol, partition), group) in &groups {
        let acc: Vec<f64> = group.iter().map(|l| l.accuracy).collect();
        let auc: Vec<f64> = group.iter().map(|l| l.auroc).collect();
        let (accuracy_mean, accuracy_std) = mean_std(&acc);
        let (auroc_mean, auroc_std) = mean_std(&auc);
        table1.push(Table1Row {
            method: protocol.clone(),
            partition: partition.clone(),
            n_runs: group.len(),
            accuracy_mean,
            accuracy_std,
            auroc_mean,
            auroc_std,
        });
        let n = group.len() as f64;
        let uplink = group.iter().map(|l| l.uplink_bytes as f64).sum::<f64>() / n;
        let broadcast = group.iter().map(|l| l.broadcast_bytes as f64).sum::<f64>() / n;
        let total = uplink + broadcast;
        table2.push(Table2Row {
            method: protocol.clone(),
            partition: partition.clone(),
            n_runs: group.len(),
            rounds: group.iter().map(|l| l.rounds).max().unwrap_or(0),
            uplink_bytes_mean: uplink,
            broadcast_bytes_mean: broadcast,
            total_bytes_mean: total,
            flops_mean: group.iter().map(|l| l.flops_proxy as f64).sum::<f64>() / n,
            bytes_vs_protocol_a: a_uplink_mean
                .map(|a| format!("{:.3}", total / a))
                .unwrap_or_default(),
        });
    }

    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", out_dir.display())))?;
    let t1 = out_dir.join("table1.csv");
    let t2 = out_dir.join("table2.csv");
    write_table(
        &t1,
        &table1,
        "method,partition,n_runs,accuracy_mean,accuracy_std,auroc_mean,auroc_std",
    )?;
    write_table(
        &t2,
        &table2,
        "method,partition,n_runs,rounds,uplink_bytes_mean,broadcast_bytes_mean,total_bytes_mean,flops_mean,bytes_vs_protocol_a",
    )?;
    Ok((t1, t2))
}
