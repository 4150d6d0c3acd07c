//! Measures the systematic accuracy gap between Dirichlet α=1e6 and α=1.0
//! FedAvg arms across many stream realizations, for the sweep's client-count
//! and participation choices.
//! Usage: spectrum <cx> <r> <sigma> <clients> <realizations> <fraction>

use fedfactory::baselines::{run_fedavg, FedConfig};
use fedfactory::data::{generate_blobs, partition, PartitionMode, PartitionSpec};
use fedfactory::{BlobSpec, BoundedLoss, Rng, TrainConfig};

const C: usize = 5;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cx: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(16.0);
    let radius: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let sigma: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2.4);
    let clients: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(10);
    let reps: u64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(6);
    let fraction: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let rounds: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(200);

    let means: Vec<Vec<f64>> = (0..C)
        .map(|c| {
            let a = 2.0 * std::f64::consts::PI * c as f64 / C as f64;
            vec![cx + radius * a.cos(), radius * a.sin()]
        })
        .collect();
    let spec = BlobSpec::isotropic(&means, sigma, 500, 200);
    let loss = BoundedLoss::default();
    println!(
        "cx={cx} r={radius} sigma={sigma} K={clients} reps={reps} fraction={fraction} rounds={rounds} (5 seeds each)"
    );

    let arm = |mode: PartitionMode, k: usize, seed: u64, part_stream: u64| -> f64 {
        let (train, test, _) = generate_blobs(&spec, &mut Rng::new(seed)).unwrap();
        let part = partition(
            &train,
            &PartitionSpec { mode, clients: k },
            &mut Rng::new(part_stream),
        )
        .unwrap();
        let cfg = FedConfig {
            rounds,
            client_fraction: fraction,
            train: TrainConfig {
                epochs: 0,
                seed,
                ..TrainConfig::default()
            },
            ..FedConfig::default()
        };
        run_fedavg(&train, &part, &test, &cfg, &loss, &Rng::new(seed + 9000))
            .unwrap()
            .1
            .accuracy
    };

    let mut gaps = Vec::new();
    let (mut hi_all, mut mid_all, mut low_all, mut silo_all) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rep in 0..reps {
        let (mut hi, mut mid, mut low, mut silo) = (0.0, 0.0, 0.0, 0.0);
        for s in 0..5u64 {
            let seed = rep * 5 + s;
            hi += arm(PartitionMode::Dirichlet(1e6), clients, seed, 7_000 + seed) / 5.0;
            mid += arm(PartitionMode::Dirichlet(1.0), clients, seed, 8_000 + seed) / 5.0;
            low += arm(PartitionMode::Dirichlet(0.1), clients, seed, 8_500 + seed) / 5.0;
            silo += arm(PartitionMode::SingleClassSilo, C, seed, 9_500 + seed) / 5.0;
        }
        println!(
            "rep {rep}: 1e6={hi:.4} 1.0={mid:.4} 0.1={low:.4} silo={silo:.4} gap={:+.4}",
            hi - mid
        );
        gaps.push(hi - mid);
        hi_all.push(hi);
        mid_all.push(mid);
        low_all.push(low);
        silo_all.push(silo);
    }
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| {
        let mu = m(v);
        (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    println!(
        "E[1e6]={:.4} E[1.0]={:.4} E[0.1]={:.4} E[silo]={:.4}  E[gap]={:+.4} sd={:.4}  P(gap<0)={}/{}",
        m(&hi_all),
        m(&mid_all),
        m(&low_all),
        m(&silo_all),
        m(&gaps),
        sd(&gaps),
        gaps.iter().filter(|&&g| g < 0.0).count(),
        gaps.len()
    );
}
