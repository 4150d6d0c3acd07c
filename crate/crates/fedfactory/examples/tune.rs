//! Geometry measurement harness for the acceptance constants. Runs the full
//! acceptance-style sweep (silo FedAvg/FedProx, centralized, Protocols A/B,
//! Dirichlet spectrum) over 5 seeds and prints per-arm means and timings.
//! Not part of the test suite; run with `cargo run --release --example tune`.

use std::time::Instant;

use fedfactory::baselines::{run_fedavg, run_fedprox, FedConfig};
use fedfactory::data::{generate_blobs, partition, PartitionMode, PartitionSpec};
use fedfactory::protocols::{
    model_payload_bytes, run_centralized_baseline, run_protocol_a, run_protocol_b, PoEConfig,
};
use fedfactory::{BlobSpec, BoundedLoss, GmmConfig, Rng, TrainConfig};

const C: usize = 5;
const TRAIN_PER_CLASS: usize = 500;
const TEST_PER_CLASS: usize = 200;
const N_TARGET: usize = 500;
const SEEDS: u64 = 5;

fn ring_spec(cx: f64, radius: f64, sigma: f64) -> BlobSpec {
    let means: Vec<Vec<f64>> = (0..C)
        .map(|c| {
            let a = 2.0 * std::f64::consts::PI * c as f64 / C as f64;
            vec![cx + radius * a.cos(), radius * a.sin()]
        })
        .collect();
    BlobSpec::isotropic(&means, sigma, TRAIN_PER_CLASS, TEST_PER_CLASS)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cx: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(14.0);
    let radius: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let sigma: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let seed_base: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    println!("geometry: center=({cx},0) radius={radius} sigma={sigma} seed_base={seed_base}");

    let spec = ring_spec(cx, radius, sigma);
    let loss = BoundedLoss::default();
    let gmm = GmmConfig::default();

    let acc = |name: &str, xs: &[f64], secs: f64| {
        println!(
            "{name:<12} mean={:.4}  per-arm runtime={secs:.1}s  {xs:.3?}",
            mean(xs)
        );
    };

    let (mut silo_avg, mut silo_prox, mut central, mut proto_a, mut proto_b) =
        (vec![], vec![], vec![], vec![], vec![]);
    let mut dirichlet: Vec<Vec<f64>> = vec![vec![], vec![], vec![]];
    let alphas = [1e6, 1.0, 0.1];
    let mut times = [0.0f64; 6];
    let mut ratio_min = f64::INFINITY;

    for idx in 0..SEEDS {
        let seed = seed_base + idx;
        let (train, test, _) = generate_blobs(&spec, &mut Rng::new(seed)).unwrap();
        let silo = partition(
            &train,
            &PartitionSpec {
                mode: PartitionMode::SingleClassSilo,
                clients: C,
            },
            &mut Rng::new(seed + 100),
        )
        .unwrap();
        let fed_cfg = FedConfig {
            train: TrainConfig {
                epochs: 0,
                seed,
                ..TrainConfig::default()
            },
            ..FedConfig::default()
        };
        let train_cfg = TrainConfig {
            epochs: 100,
            seed,
            ..TrainConfig::default()
        };

        let t = Instant::now();
        let (_, r) =
            run_fedavg(&train, &silo, &test, &fed_cfg, &loss, &Rng::new(seed + 200)).unwrap();
        times[0] += t.elapsed().as_secs_f64();
        let fedavg_bytes = r.ledger.uplink_bytes + r.ledger.downlink_bytes;
        silo_avg.push(r.accuracy);

        let t = Instant::now();
        let (_, r) =
            run_fedprox(&train, &silo, &test, &fed_cfg, &loss, &Rng::new(seed + 300)).unwrap();
        times[1] += t.elapsed().as_secs_f64();
        silo_prox.push(r.accuracy);

        let t = Instant::now();
        let (_, r) = run_centralized_baseline(&train, &test, &train_cfg, &loss).unwrap();
        times[2] += t.elapsed().as_secs_f64();
        central.push(r.accuracy);

        let t = Instant::now();
        let a = run_protocol_a(
            &train,
            &silo,
            &test,
            &gmm,
            N_TARGET,
            &train_cfg,
            &loss,
            &Rng::new(seed + 400),
        )
        .unwrap();
        times[3] += t.elapsed().as_secs_f64();
        ratio_min = ratio_min.min(fedavg_bytes as f64 / a.result.ledger.uplink_bytes as f64);
        proto_a.push(a.result.accuracy);

        let t = Instant::now();
        let b = run_protocol_b(
            &train,
            &silo,
            &test,
            &gmm,
            N_TARGET,
            &train_cfg,
            &PoEConfig::default(),
            &loss,
            &Rng::new(seed + 500),
        )
        .unwrap();
        times[4] += t.elapsed().as_secs_f64();
        proto_b.push(b.result.accuracy);

        let t = Instant::now();
        for (i, &alpha) in alphas.iter().enumerate() {
            let part = partition(
                &train,
                &PartitionSpec {
                    mode: PartitionMode::Dirichlet(alpha),
                    clients: C,
                },
                &mut Rng::new(seed + 600 + i as u64),
            )
            .unwrap();
            let (_, r) =
                run_fedavg(&train, &part, &test, &fed_cfg, &loss, &Rng::new(seed + 700)).unwrap();
            dirichlet[i].push(r.accuracy);
        }
        times[5] += t.elapsed().as_secs_f64();

        let _ = model_payload_bytes;
        println!(
            "seed {seed}: silo_avg={:.3} prox={:.3} cent={:.3} A={:.3} B={:.3} dir={:.3}/{:.3}/{:.3}",
            silo_avg[idx as usize],
            silo_prox[idx as usize],
            central[idx as usize],
            proto_a[idx as usize],
            proto_b[idx as usize],
            dirichlet[0][idx as usize],
            dirichlet[1][idx as usize],
            dirichlet[2][idx as usize],
        );
    }

    println!("\n== means over {SEEDS} seeds ==");
    acc("silo fedavg", &silo_avg, times[0]);
    acc("silo fedprox", &silo_prox, times[1]);
    acc("centralized", &central, times[2]);
    acc("protocol A", &proto_a, times[3]);
    acc("protocol B", &proto_b, times[4]);
    for (i, &alpha) in alphas.iter().enumerate() {
        acc(&format!("dir {alpha:>7}"), &dirichlet[i], times[5] / 3.0);
    }
    println!(
        "\nprox gap        = {:+.4}",
        mean(&silo_prox) - mean(&silo_avg)
    );
    println!("A / centralized = {:.4}", mean(&proto_a) / mean(&central));
    println!("B / centralized = {:.4}", mean(&proto_b) / mean(&central));
    println!("bytes ratio min = {ratio_min:.1}");
    let chain = [
        mean(&dirichlet[0]),
        mean(&dirichlet[1]),
        mean(&dirichlet[2]),
        mean(&silo_avg),
    ];
    println!(
        "spectrum        = {chain:.4?}  monotone={}",
        chain.windows(2).all(|w| w[0] >= w[1])
    );
}
