//! The Generative Matrix: a sparse class×client store of factories with
//! quota-proportional synthesis and three exact-unlearning modes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::core::{ClassId, ClientId, Error, Result, Rng};
use crate::data::LabeledDataset;
use crate::factory::{deserialize_factory, sample_factory, serialize_factory, FactoryParams};

/// Sparse C×K matrix of factories; a cell is occupied iff a factory was
/// trained for that (class, client) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeMatrix {
    n_classes: usize,
    n_clients: usize,
    cells: BTreeMap<(ClassId, ClientId), FactoryParams>,
}

impl GenerativeMatrix {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    pub fn n_occupied(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, class: ClassId, client: ClientId) -> Option<&FactoryParams> {
        self.cells.get(&(class, client))
    }

    /// Occupied cells in (class, client) order.
    pub fn occupied_cells(&self) -> Vec<(ClassId, ClientId)> {
        self.cells.keys().copied().collect()
    }

    /// Providers of `class` with their local counts, in client order.
    pub fn providers_of(&self, class: ClassId) -> Vec<(ClientId, usize)> {
        self.cells
            .range((class, 0)..=(class, usize::MAX))
            .map(|(&(_, k), params)| (k, params.n_local))
            .collect()
    }

    /// Classes that still have at least one provider.
    pub fn surviving_classes(&self) -> Vec<ClassId> {
        let mut classes: Vec<ClassId> = self.cells.keys().map(|&(c, _)| c).collect();
        classes.dedup();
        classes
    }
}

/// Assembles a matrix from trained factories; every (class, client) pair
/// must be unique and within range.
pub fn build_matrix(
    n_classes: usize,
    n_clients: usize,
    factories: Vec<FactoryParams>,
) -> Result<GenerativeMatrix> {
    let mut cells = BTreeMap::new();
    for params in factories {
        params.validate()?;
        if params.class >= n_classes || params.client >= n_clients {
            return Err(Error::InvalidInput(format!(
                "cell ({}, {}) out of range for a {n_classes}x{n_clients} matrix",
                params.class, params.client
            )));
        }
        let key = (params.class, params.client);
        if cells.insert(key, params).is_some() {
            return Err(Error::InvalidInput(format!(
                "duplicate factory for cell ({}, {})",
                key.0, key.1
            )));
        }
    }
    Ok(GenerativeMatrix {
        n_classes,
        n_clients,
        cells,
    })
}

/// Integer generation quotas per occupied cell; per-class sums equal
/// `n_target` exactly for every class that has a provider.
#[derive(Debug, Clone, PartialEq)]
pub struct QuotaPlan {
    pub n_target: usize,
    pub quotas: BTreeMap<(ClassId, ClientId), usize>,
    /// One entry per class that has no provider.
    pub warnings: Vec<String>,
}

impl QuotaPlan {
    pub fn total(&self) -> usize {
        self.quotas.values().sum()
    }

    pub fn class_total(&self, class: ClassId) -> usize {
        self.quotas
            .range((class, 0)..=(class, usize::MAX))
            .map(|(_, &q)| q)
            .sum()
    }
}

/// Splits `n_target` per class across providers proportionally to their
/// local counts, rounded by the largest-remainder method with ties broken by
/// ascending client id. Classes without providers get a recorded warning.
pub fn allocate_quotas(matrix: &GenerativeMatrix, n_target: usize) -> QuotaPlan {
    let mut quotas = BTreeMap::new();
    let mut warnings = Vec::new();
    for class in 0..matrix.n_classes() {
        let providers = matrix.providers_of(class);
        if providers.is_empty() {
            let message = format!("class {class} has no provider; zero synthetic samples");
            log::warn!("{message}");
            warnings.push(message);
            continue;
        }
        for (k, quota) in largest_remainder_split(&providers, n_target) {
            quotas.insert((class, k), quota);
        }
    }
    QuotaPlan {
        n_target,
        quotas,
        warnings,
    }
}

/// Splits `n_target` among providers proportionally to their counts using
/// the largest-remainder method. Quotas are exact rationals n_target·n_k/Σn
/// floored, with remainders ranked as integers so ties are exact; ties break
/// by ascending client id. Requires a non-empty provider list.
pub(crate) fn largest_remainder_split(
    providers: &[(ClientId, usize)],
    n_target: usize,
) -> Vec<(ClientId, usize)> {
    let total: u128 = providers.iter().map(|&(_, n)| n as u128).sum();
    let mut rows: Vec<(ClientId, usize, u128)> = providers
        .iter()
        .map(|&(k, n)| {
            let numer = n_target as u128 * n as u128;
            (k, (numer / total) as usize, numer % total)
        })
        .collect();
    let assigned: usize = rows.iter().map(|&(_, base, _)| base).sum();
    let mut leftover = n_target - assigned;
    rows.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    for row in rows.iter_mut() {
        if leftover == 0 {
            break;
        }
        row.1 += 1;
        leftover -= 1;
    }
    rows.sort_by_key(|&(k, _, _)| k);
    rows.into_iter().map(|(k, quota, _)| (k, quota)).collect()
}

/// Samples every cell's quota into one class-balanced synthetic dataset.
/// Each cell draws from its own spawned stream, so the result is independent
/// of evaluation order; assembly is ordered by (class, client).
pub fn synthesize_global(
    matrix: &GenerativeMatrix,
    plan: &QuotaPlan,
    rng: &Rng,
) -> Result<LabeledDataset> {
    let mut parts = Vec::new();
    for (&(class, client), &quota) in &plan.quotas {
        let Some(params) = matrix.get(class, client) else {
            return Err(Error::InvalidInput(format!(
                "quota plan references empty cell ({class}, {client})"
            )));
        };
        if quota == 0 {
            continue;
        }
        let stream_id = (class * matrix.n_clients() + client) as u64;
        let mut cell_rng = rng.spawn("genmatrix/synthesize", stream_id);
        parts.push(sample_factory(params, quota, &mut cell_rng)?);
    }
    if parts.is_empty() {
        let dim = matrix.cells.values().next().map_or(0, FactoryParams::dim);
        return Ok(LabeledDataset::empty(dim));
    }
    let refs: Vec<&LabeledDataset> = parts.iter().collect();
    LabeledDataset::concat(&refs)
}

/// The three exact-unlearning modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlearnRequest {
    /// Remove one client's column.
    Vertical { client: ClientId },
    /// Remove one class's row, consortium-wide.
    Horizontal { class: ClassId },
    /// Remove exactly one cell.
    Targeted { class: ClassId, client: ClientId },
}

impl UnlearnRequest {
    fn matches(&self, cell: (ClassId, ClientId)) -> bool {
        match *self {
            UnlearnRequest::Vertical { client } => cell.1 == client,
            UnlearnRequest::Horizontal { class } => cell.0 == class,
            UnlearnRequest::Targeted { class, client } => cell == (class, client),
        }
    }
}

/// Returns a new matrix with the requested cells removed; every other cell
/// is carried over untouched, so survivors are byte-identical. Idempotent:
/// if no targeted cell is occupied the input is returned as-is with a
/// warning.
pub fn unlearn(matrix: &GenerativeMatrix, request: UnlearnRequest) -> Result<GenerativeMatrix> {
    let in_range = match request {
        UnlearnRequest::Vertical { client } => client < matrix.n_clients(),
        UnlearnRequest::Horizontal { class } => class < matrix.n_classes(),
        UnlearnRequest::Targeted { class, client } => {
            class < matrix.n_classes() && client < matrix.n_clients()
        }
    };
    if !in_range {
        return Err(Error::InvalidInput(format!(
            "unlearn request {request:?} out of range for a {}x{} matrix",
            matrix.n_classes(),
            matrix.n_clients()
        )));
    }
    if !matrix.cells.keys().any(|&cell| request.matches(cell)) {
        log::warn!("unlearn request {request:?} targets no occupied cell; no-op");
        return Ok(matrix.clone());
    }
    let cells = matrix
        .cells
        .iter()
        .filter(|(&cell, _)| !request.matches(cell))
        .map(|(&cell, params)| (cell, params.clone()))
        .collect();
    Ok(GenerativeMatrix {
        n_classes: matrix.n_classes,
        n_clients: matrix.n_clients,
        cells,
    })
}

/// Clears the synthetic buffer and synthesizes afresh from the post-deletion
/// matrix. No sample in the result can name a deleted cell, because deleted
/// cells no longer exist to be sampled.
pub fn flush_and_resynthesize(
    matrix_after: &GenerativeMatrix,
    n_target: usize,
    rng: &Rng,
) -> Result<LabeledDataset> {
    let plan = allocate_quotas(matrix_after, n_target);
    synthesize_global(matrix_after, &plan, rng)
}

/// Writes `manifest.csv` plus one payload file per occupied cell into `dir`
/// for audit: `class,client,n_local,payload_path,payload_sha256`. Matrix
/// dimensions ride along as `#`-prefixed comment lines.
pub fn write_manifest(matrix: &GenerativeMatrix, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let manifest_path = dir.join("manifest.csv");
    let mut out = std::fs::File::create(&manifest_path)?;
    writeln!(out, "# n_classes={}", matrix.n_classes())?;
    writeln!(out, "# n_clients={}", matrix.n_clients())?;
    writeln!(out, "class,client,n_local,payload_path,payload_sha256")?;
    for (&(class, client), params) in &matrix.cells {
        let bytes = serialize_factory(params)?;
        let name = format!("payload_c{class}_k{client}.bin");
        std::fs::write(dir.join(&name), &bytes)?;
        let digest = hex::encode(Sha256::digest(&bytes));
        writeln!(out, "{class},{client},{},{name},{digest}", params.n_local)?;
    }
    Ok(manifest_path)
}

/// Reads a manifest written by [`write_manifest`], verifying every payload
/// against its recorded digest.
pub fn read_manifest(dir: &Path) -> Result<GenerativeMatrix> {
    let manifest_path = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&manifest_path)?;
    let mut n_classes = None;
    let mut n_clients = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        if let Some(v) = body.strip_prefix("n_classes=") {
            n_classes = v.parse::<usize>().ok();
        } else if let Some(v) = body.strip_prefix("n_clients=") {
            n_clients = v.parse::<usize>().ok();
        }
    }
    let (Some(n_classes), Some(n_clients)) = (n_classes, n_clients) else {
        return Err(Error::Parse {
            line: 1,
            message: "manifest missing n_classes/n_clients comments".into(),
        });
    };

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut factories = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 4;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let parse_field = |i: usize| -> Result<usize> {
            record[i].parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad integer {:?}", &record[i]),
            })
        };
        let (class, client, n_local) = (parse_field(0)?, parse_field(1)?, parse_field(2)?);
        let bytes = std::fs::read(dir.join(&record[3]))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != record[4] {
            return Err(Error::InvalidInput(format!(
                "payload {} digest mismatch: manifest {} vs actual {digest}",
                &record[3], &record[4]
            )));
        }
        let params = deserialize_factory(&bytes)?;
        if (params.class, params.client, params.n_local) != (class, client, n_local) {
            return Err(Error::InvalidInput(format!(
                "payload {} disagrees with its manifest row",
                &record[3]
            )));
        }
        factories.push(params);
    }
    build_matrix(n_classes, n_clients, factories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Provenance;
    use crate::data::MixtureComponent;
    use rand::Rng as _;

    fn factory(class: ClassId, client: ClientId, n_local: usize) -> FactoryParams {
        FactoryParams {
            client,
            class,
            components: vec![MixtureComponent {
                weight: 1.0,
                mean: vec![class as f64 * 10.0, client as f64 * 10.0],
                var: vec![0.01, 0.01],
            }],
            n_local,
        }
    }

    fn diagonal_matrix(n: usize, n_local: usize) -> GenerativeMatrix {
        let factories = (0..n).map(|i| factory(i, i, n_local)).collect();
        build_matrix(n, n, factories).unwrap()
    }

    #[test]
    fn build_diagonal_and_duplicates() {
        let m = diagonal_matrix(3, 50);
        assert_eq!(m.occupied_cells(), vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(m.providers_of(1), vec![(1, 50)]);

        let empty = build_matrix(3, 3, vec![]).unwrap();
        assert!(empty.is_empty());

        let dup = build_matrix(3, 3, vec![factory(0, 0, 5), factory(0, 0, 5)]);
        assert!(dup.is_err());

        let shared = build_matrix(1, 2, vec![factory(0, 0, 5), factory(0, 1, 5)]).unwrap();
        assert_eq!(shared.providers_of(0).len(), 2);

        let out_of_range = build_matrix(2, 2, vec![factory(2, 0, 5)]);
        assert!(out_of_range.is_err());
    }

    #[test]
    fn quota_exact_proportions_and_ties() {
        let m = build_matrix(1, 3, vec![factory(0, 1, 30), factory(0, 2, 70)]).unwrap();
        let plan = allocate_quotas(&m, 100);
        assert_eq!(plan.quotas[&(0, 1)], 30);
        assert_eq!(plan.quotas[&(0, 2)], 70);

        let m = build_matrix(1, 3, (0..3).map(|k| factory(0, k, 1)).collect()).unwrap();
        let plan = allocate_quotas(&m, 100);
        assert_eq!(plan.quotas[&(0, 0)], 34);
        assert_eq!(plan.quotas[&(0, 1)], 33);
        assert_eq!(plan.quotas[&(0, 2)], 33);
        assert_eq!(plan.class_total(0), 100);

        let single = build_matrix(1, 1, vec![factory(0, 0, 7)]).unwrap();
        assert_eq!(allocate_quotas(&single, 42).quotas[&(0, 0)], 42);
    }

    #[test]
    fn quota_missing_class_records_warning() {
        let m = build_matrix(3, 2, vec![factory(0, 0, 5), factory(2, 1, 5)]).unwrap();
        let plan = allocate_quotas(&m, 10);
        assert_eq!(plan.warnings.len(), 1);
        assert!(plan.warnings[0].contains("class 1"));
        assert_eq!(plan.class_total(1), 0);
        assert_eq!(plan.total(), 20);
    }

    #[test]
    fn quota_conservation_and_proportionality_random() {
        let mut rng = Rng::new(70);
        for _ in 0..200 {
            let providers = rng.gen_range(1..6usize);
            let n_target = rng.gen_range(1..500usize);
            let counts: Vec<usize> = (0..providers).map(|_| rng.gen_range(1..1000)).collect();
            let m = build_matrix(
                1,
                providers,
                counts
                    .iter()
                    .enumerate()
                    .map(|(k, &n)| factory(0, k, n))
                    .collect(),
            )
            .unwrap();
            let plan = allocate_quotas(&m, n_target);
            assert_eq!(plan.class_total(0), n_target);
            let total: usize = counts.iter().sum();
            for (k, &n) in counts.iter().enumerate() {
                let q = plan.quotas[&(0, k)];
                let gap = (q as f64 / n_target as f64 - n as f64 / total as f64).abs();
                assert!(gap <= 1.0 / n_target as f64, "gap {gap}");
            }
        }
    }

    #[test]
    fn synthesize_balanced_and_tagged() {
        let m = diagonal_matrix(3, 50);
        let plan = allocate_quotas(&m, 200);
        let rng = Rng::new(71);
        let data = synthesize_global(&m, &plan, &rng).unwrap();
        assert_eq!(data.len(), 600);
        assert_eq!(data.class_counts(), vec![200, 200, 200]);
        for (i, &label) in data.labels().iter().enumerate() {
            assert_eq!(
                data.provenance()[i],
                Provenance::Synthetic {
                    client: label,
                    class: label
                }
            );
        }

        let zero = allocate_quotas(&m, 0);
        assert!(synthesize_global(&m, &zero, &rng).unwrap().is_empty());
    }

    #[test]
    fn synthesize_is_deterministic_and_split_by_counts() {
        let m = build_matrix(1, 2, vec![factory(0, 0, 900), factory(0, 1, 100)]).unwrap();
        let plan = allocate_quotas(&m, 1000);
        assert_eq!(plan.quotas[&(0, 0)], 900);
        assert_eq!(plan.quotas[&(0, 1)], 100);
        let rng = Rng::new(72);
        let a = synthesize_global(&m, &plan, &rng).unwrap();
        let b = synthesize_global(&m, &plan, &rng).unwrap();
        assert_eq!(a, b);
        let from_zero = a
            .provenance()
            .iter()
            .filter(|p| matches!(p, Provenance::Synthetic { client: 0, .. }))
            .count();
        assert_eq!(from_zero, 900);
    }

    #[test]
    fn synthesize_rejects_plan_for_empty_cell() {
        let m = diagonal_matrix(2, 10);
        let mut plan = allocate_quotas(&m, 10);
        plan.quotas.insert((0, 1), 5);
        assert!(synthesize_global(&m, &plan, &Rng::new(73)).is_err());
    }

    #[test]
    fn unlearn_modes_remove_expected_cells() {
        let m = diagonal_matrix(3, 10);

        let vertical = unlearn(&m, UnlearnRequest::Vertical { client: 1 }).unwrap();
        assert_eq!(vertical.occupied_cells(), vec![(0, 0), (2, 2)]);

        let horizontal = unlearn(&m, UnlearnRequest::Horizontal { class: 2 }).unwrap();
        assert_eq!(horizontal.occupied_cells(), vec![(0, 0), (1, 1)]);
        assert_eq!(horizontal.surviving_classes(), vec![0, 1]);

        let targeted = unlearn(
            &m,
            UnlearnRequest::Targeted {
                class: 0,
                client: 0,
            },
        )
        .unwrap();
        assert_eq!(targeted.occupied_cells(), vec![(1, 1), (2, 2)]);
    }

    #[test]
    fn unlearn_is_idempotent_and_checks_ranges() {
        let m = diagonal_matrix(3, 10);
        let once = unlearn(&m, UnlearnRequest::Vertical { client: 0 }).unwrap();
        let twice = unlearn(&once, UnlearnRequest::Vertical { client: 0 }).unwrap();
        assert_eq!(once, twice);

        assert!(unlearn(&m, UnlearnRequest::Vertical { client: 3 }).is_err());
        assert!(unlearn(&m, UnlearnRequest::Horizontal { class: 9 }).is_err());

        // Off-diagonal cell is unoccupied: warning plus unchanged matrix.
        let noop = unlearn(
            &m,
            UnlearnRequest::Targeted {
                class: 0,
                client: 1,
            },
        )
        .unwrap();
        assert_eq!(noop, m);
    }

    #[test]
    fn unlearn_keeps_survivors_byte_identical() {
        let m = diagonal_matrix(4, 25);
        let after = unlearn(&m, UnlearnRequest::Vertical { client: 2 }).unwrap();
        for (class, client) in after.occupied_cells() {
            let before_bytes = serialize_factory(m.get(class, client).unwrap()).unwrap();
            let after_bytes = serialize_factory(after.get(class, client).unwrap()).unwrap();
            assert_eq!(before_bytes, after_bytes);
        }
    }

    #[test]
    fn resynthesis_is_exact_erasure() {
        let m = diagonal_matrix(3, 10);
        let rng = Rng::new(74);

        let after = unlearn(&m, UnlearnRequest::Vertical { client: 1 }).unwrap();
        let data = flush_and_resynthesize(&after, 50, &rng).unwrap();
        assert!(data
            .provenance()
            .iter()
            .all(|p| !matches!(p, Provenance::Synthetic { client: 1, .. })));

        let after = unlearn(&m, UnlearnRequest::Horizontal { class: 0 }).unwrap();
        let data = flush_and_resynthesize(&after, 50, &rng).unwrap();
        assert!(data.labels().iter().all(|&l| l != 0));

        // No deletion: same per-class counts as the original plan.
        let untouched = flush_and_resynthesize(&m, 50, &rng).unwrap();
        assert_eq!(untouched.class_counts(), vec![50, 50, 50]);
    }

    #[test]
    fn manifest_roundtrip_and_digest_check() {
        let m = build_matrix(
            3,
            2,
            vec![factory(0, 0, 5), factory(1, 1, 9), factory(2, 0, 3)],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(&m, dir.path()).unwrap();
        assert!(path.ends_with("manifest.csv"));
        let back = read_manifest(dir.path()).unwrap();
        assert_eq!(m, back);

        // Corrupt one payload byte: digest verification must fail.
        let payload = dir.path().join("payload_c1_k1.bin");
        let mut bytes = std::fs::read(&payload).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&payload, &bytes).unwrap();
        assert!(read_manifest(dir.path()).is_err());
    }
}
