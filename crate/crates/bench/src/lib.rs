//! Seeded fixtures for the benchmarks under `benches/`.

use mgdpr_core::graph_generation::MultiRelAdjacency;
use mgdpr_core::model::{Mgdpr, ModelConfig};
use mgdpr_core::training::Example;
use mgdpr_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches")
}

/// A positive `n × tau` window, row-major.
pub fn window(seed: u64, n: usize, tau: usize) -> Vec<f64> {
    uniform(seed, &[n, tau], 1.0, 100.0).into_data()
}

/// A model and one trading day of matching inputs.
pub fn model_day(n: usize, tau: usize, layers: usize, k: usize, d: usize) -> (Mgdpr, Example) {
    let cfg = ModelConfig {
        num_stocks: n,
        tau,
        layers,
        expansion_steps: k,
        embed_dim: d,
        ..ModelConfig::default()
    };
    let model = Mgdpr::new(cfg, 0).expect("valid config");
    let r = model.config.num_relations;
    let graphs = MultiRelAdjacency::from_raw_window(&uniform(1, &[r, n, tau], 1.0, 100.0), 0, None)
        .expect("positive window");
    let example = Example {
        t_index: 0,
        features: uniform(2, &[r, n, tau], -2.0, 2.0),
        adjacency: model.adjacency_input(&graphs),
        labels: (0..n).map(|i| (i % 2) as u8).collect(),
    };
    (model, example)
}
