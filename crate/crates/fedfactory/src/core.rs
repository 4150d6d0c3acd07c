//! Shared domain types, deterministic pseudo-randomness, and the bounded loss.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Class index in `[0, C)`.
pub type ClassId = usize;

/// Client index in `[0, K)`.
pub type ClientId = usize;

/// Error taxonomy shared by every module.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Error::Parse {
            line,
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Origin tag carried by every sample.
///
/// Synthetic samples name the factory cell that generated them; this is what
/// makes the exact-unlearning guarantee testable as a set assertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    /// Raw sample owned by a client, or by no client yet (CSV ingestion).
    Real(Option<ClientId>),
    /// Sample drawn from the factory trained by `client` on `class`.
    Synthetic { client: ClientId, class: ClassId },
}

/// Deterministic RNG with named independent streams.
///
/// Identical `(seed, stream)` pairs produce identical draw sequences. Child
/// streams derived via [`Rng::spawn`] keep the parent seed and hash the
/// `(parent stream, purpose, id)` triple into a new stream id, so concurrent
/// tasks never share a stream.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Derives a child stream for `(purpose, id)`. Same inputs, same child.
    pub fn spawn(&self, purpose: &str, id: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(self.stream.to_le_bytes());
        hasher.update((purpose.len() as u64).to_le_bytes());
        hasher.update(purpose.as_bytes());
        hasher.update(id.to_le_bytes());
        let digest = hasher.finalize();
        let stream = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        Self::with_stream(self.seed, stream)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Clipped cross-entropy: `ℓ = −log(max(p_label, p_min))`, so `0 ≤ ℓ ≤ M`
/// with `M = −log(p_min)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundedLoss {
    p_min: f64,
}

impl Default for BoundedLoss {
    fn default() -> Self {
        Self { p_min: 1e-6 }
    }
}

impl BoundedLoss {
    pub fn new(p_min: f64) -> Result<Self> {
        if !(p_min > 0.0 && p_min < 1.0) {
            return Err(Error::InvalidInput(format!(
                "p_min must lie in (0, 1), got {p_min}"
            )));
        }
        Ok(Self { p_min })
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    /// The loss bound `M = −log(p_min)`.
    pub fn bound(&self) -> f64 {
        -self.p_min.ln()
    }

    /// `−log(max(probs[label], p_min))`.
    ///
    /// `probs` must be a probability vector (entries in `[0,1]`, summing to 1
    /// within 1e-9) and `label` must index into it.
    pub fn clipped_cross_entropy(&self, probs: &[f64], label: ClassId) -> Result<f64> {
        if label >= probs.len() {
            return Err(Error::InvalidInput(format!(
                "label {label} out of range for {} classes",
                probs.len()
            )));
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probs is not a probability vector (sum {sum})"
            )));
        }
        Ok(-probs[label].max(self.p_min).ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng as _;

    #[test]
    fn clipped_ce_certain_correct_is_zero() {
        let loss = BoundedLoss::default();
        assert_eq!(
            loss.clipped_cross_entropy(&[1.0, 0.0, 0.0], 0).unwrap(),
            0.0
        );
    }

    #[test]
    fn clipped_ce_floor_engaged() {
        let loss = BoundedLoss::default();
        let v = loss.clipped_cross_entropy(&[0.0, 1.0, 0.0], 0).unwrap();
        assert_relative_eq!(v, -(1e-6f64).ln(), max_relative = 1e-12);
        assert_relative_eq!(v, 13.815_510_557_964_274, max_relative = 1e-12);
        assert_eq!(v, loss.bound());
    }

    #[test]
    fn clipped_ce_half() {
        let loss = BoundedLoss::default();
        let v = loss.clipped_cross_entropy(&[0.5, 0.5], 1).unwrap();
        assert_relative_eq!(v, 2f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn clipped_ce_rejects_bad_label_and_bad_probs() {
        let loss = BoundedLoss::default();
        assert!(loss.clipped_cross_entropy(&[0.5, 0.5], 2).is_err());
        assert!(loss.clipped_cross_entropy(&[0.9, 0.3], 0).is_err());
    }

    #[test]
    fn loss_bounded_on_random_vectors() {
        let loss = BoundedLoss::default();
        let m = loss.bound();
        let mut rng = Rng::new(7);
        for _ in 0..100_000 {
            let c = rng.gen_range(2..6usize);
            let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let label = rng.gen_range(0..c);
            let l = loss.clipped_cross_entropy(&probs, label).unwrap();
            assert!((0.0..=m).contains(&l), "loss {l} outside [0, {m}]");
        }
    }

    #[test]
    fn spawn_is_deterministic_and_separated() {
        let a = Rng::new(1);
        let mut c1 = a.spawn("client", 0);
        let mut c2 = a.spawn("client", 0);
        assert_eq!(c1.next_u64(), c2.next_u64());

        let mut other_id = a.spawn("client", 1);
        let mut other_seed = Rng::new(2).spawn("client", 0);
        let mut base = a.spawn("client", 0);
        let first = base.next_u64();
        assert_ne!(first, other_id.next_u64());
        assert_ne!(first, other_seed.next_u64());
    }

    #[test]
    fn spawn_purpose_separates_streams() {
        let a = Rng::new(1);
        let mut p1 = a.spawn("shuffle", 3);
        let mut p2 = a.spawn("noise", 3);
        assert_ne!(p1.next_u64(), p2.next_u64());
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Rng::with_stream(42, 9);
        let mut b = Rng::with_stream(42, 9);
        let sa: Vec<u64> = (0..32).map(|_| a.next_u64()).collect();
        let sb: Vec<u64> = (0..32).map(|_| b.next_u64()).collect();
        assert_eq!(sa, sb);
    }
}
