#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redcore::datagen::Presence;
use redcore::model::{ArchConfig, ModelParams};
use redcore::Tensor;

pub struct Fixture {
    pub model: ModelParams,
    pub features: Vec<Tensor>,
    pub presence: Presence,
    pub labels: Vec<usize>,
    pub noise: Vec<Tensor>,
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// A small random network and batch. `full` makes every modality present.
pub fn fixture(seed: u64, full: bool) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 3;
    let d = rng.random_range(2..=8);
    let batch = rng.random_range(2..=8);
    let arch = ArchConfig {
        modality_dims: (0..m).map(|_| rng.random_range(2..=5)).collect(),
        n_classes: rng.random_range(2..=4),
        repr_dim: d,
        senc_hidden: rng.random_range(3..=6),
        xenc_blocks: vec![rng.random_range(3..=6), rng.random_range(2..=4)],
        dec_hidden: rng.random_range(2..=5),
    };
    let model = ModelParams::init(&arch, rng.random()).unwrap();
    let features = arch.modality_dims.iter().map(|&dm| random_tensor(&mut rng, batch, dm)).collect();
    let mut cells = Vec::with_capacity(batch * m);
    for _ in 0..batch {
        let mut row: Vec<bool> = (0..m).map(|_| full || rng.random_bool(0.6)).collect();
        if !row.iter().any(|&c| c) {
            row[rng.random_range(0..m)] = true;
        }
        cells.extend(row);
    }
    let presence = Presence::new(m, cells).unwrap();
    let labels = (0..batch).map(|_| rng.random_range(0..arch.n_classes)).collect();
    let noise = (0..m).map(|_| random_tensor(&mut rng, batch, d)).collect();
    Fixture {
        model,
        features,
        presence,
        labels,
        noise,
    }
}
