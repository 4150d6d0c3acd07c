//! Deterministic fixtures shared by the criterion benchmarks. Everything is
//! seeded so consecutive bench runs measure identical work.

use fedfactory::core::Rng;
use fedfactory::data::{generate_blobs, partition, PartitionMode};
use fedfactory::factory::train_factory;
use fedfactory::genmatrix::build_matrix;
use fedfactory::learner::train_classifier_with_classes;
use fedfactory::{
    BlobSpec, BoundedLoss, ClassifierModel, GenerativeMatrix, GmmConfig, LabeledDataset,
    PartitionSpec, TrainConfig,
};

pub const N_CLASSES: usize = 5;

/// Pentagon of isotropic blobs, matching the example configs.
pub fn blob_spec(train_per_class: usize, test_per_class: usize) -> BlobSpec {
    let means: Vec<Vec<f64>> = (0..N_CLASSES)
        .map(|c| {
            let theta = c as f64 * std::f64::consts::TAU / N_CLASSES as f64;
            vec![16.0 + 3.0 * theta.cos(), 3.0 * theta.sin()]
        })
        .collect();
    BlobSpec::isotropic(&means, 2.4, train_per_class, test_per_class)
}

pub struct World {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// One single-class shard per client, client k owning class k.
    pub shards: Vec<LabeledDataset>,
}

pub fn silo_world(train_per_class: usize, test_per_class: usize) -> World {
    let spec = blob_spec(train_per_class, test_per_class);
    let (train, test, _) = generate_blobs(&spec, &mut Rng::new(0)).expect("blob fixture");
    let spec = PartitionSpec {
        mode: PartitionMode::SingleClassSilo,
        clients: N_CLASSES,
    };
    let part = partition(&train, &spec, &mut Rng::new(100)).expect("silo partition");
    let shards = (0..N_CLASSES)
        .map(|k| part.client_dataset(&train, k))
        .collect();
    World {
        train,
        test,
        shards,
    }
}

/// One EM-trained factory per silo shard, assembled into a diagonal matrix.
pub fn trained_matrix(world: &World) -> GenerativeMatrix {
    let cfg = GmmConfig::default();
    let factories = world
        .shards
        .iter()
        .enumerate()
        .map(|(k, shard)| {
            train_factory(shard, &cfg, &mut Rng::new(1_000 + k as u64)).expect("factory fit")
        })
        .collect();
    build_matrix(N_CLASSES, N_CLASSES, factories).expect("matrix")
}

/// Short-budget training config for benches that need a fitted model.
pub fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 128,
        seed: 0,
        ..TrainConfig::default()
    }
}

/// One full-width expert per shard, as the mesh protocol produces.
pub fn trained_experts(world: &World) -> Vec<ClassifierModel> {
    let loss = BoundedLoss::default();
    world
        .shards
        .iter()
        .map(|shard| {
            train_classifier_with_classes(shard, N_CLASSES, &quick_train(5), &loss)
                .expect("expert fit")
        })
        .collect()
}
