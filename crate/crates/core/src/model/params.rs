use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::tensor::{Graph, Tensor, Var};

/// Learnables of one diffusion + retention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// `[relation, step]`, softmaxed over steps into the mixture weights.
    pub raw_gamma: T,
    /// `[relation, step, N, N]`, softmaxed down each column into transitions.
    pub raw_transition: T,
    /// Per-relation feature maps, each `[d, d]`.
    pub relation_maps: Vec<T>,
    /// 1×1 convolution across relation channels: `[relations, 1]` and `[1]`.
    pub conv_weight: T,
    pub conv_bias: T,
    pub query: T,
    pub key: T,
    pub value: T,
    /// Skip branch `H'·W1 + b1`.
    pub skip_weight: T,
    pub skip_bias: T,
    /// Output map `[2d, d]` applied to the concatenation.
    pub update_weight: T,
    pub update_bias: T,
}

/// All learnables, generic over storage so the same layout serves plain
/// tensors, recorded variables and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub embed_weight: T,
    pub embed_bias: T,
    pub layers: Vec<LayerParams<T>>,
    pub readout_hidden_weight: T,
    pub readout_hidden_bias: T,
    pub readout_out_weight: T,
    pub readout_out_bias: T,
}

impl<T> ModelParams<T> {
    /// Every entry in canonical order (the order of [`ModelParams::names`]).
    pub fn flatten(&self) -> Vec<&T> {
        let mut out = vec![&self.embed_weight, &self.embed_bias];
        for l in &self.layers {
            out.extend([&l.raw_gamma, &l.raw_transition]);
            out.extend(l.relation_maps.iter());
            out.extend([
                &l.conv_weight,
                &l.conv_bias,
                &l.query,
                &l.key,
                &l.value,
                &l.skip_weight,
                &l.skip_bias,
                &l.update_weight,
                &l.update_bias,
            ]);
        }
        out.extend([
            &self.readout_hidden_weight,
            &self.readout_hidden_bias,
            &self.readout_out_weight,
            &self.readout_out_bias,
        ]);
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["embed.weight".to_string(), "embed.bias".to_string()];
        for (i, l) in self.layers.iter().enumerate() {
            out.push(format!("layers.{i}.raw_gamma"));
            out.push(format!("layers.{i}.raw_transition"));
            for r in 0..l.relation_maps.len() {
                out.push(format!("layers.{i}.relation_maps.{r}"));
            }
            for name in [
                "conv.weight",
                "conv.bias",
                "retention.query",
                "retention.key",
                "retention.value",
                "update.skip_weight",
                "update.skip_bias",
                "update.weight",
                "update.bias",
            ] {
                out.push(format!("layers.{i}.{name}"));
            }
        }
        out.extend(
            ["readout.hidden.weight", "readout.hidden.bias", "readout.out.weight", "readout.out.bias"]
                .map(String::from),
        );
        out
    }

    /// Same layout, new entries taken in canonical order.
    pub fn rebuild<U>(&self, items: impl IntoIterator<Item = U>) -> ModelParams<U> {
        let mut it = items.into_iter();
        let mut next = || it.next().expect("one item per parameter");
        let embed_weight = next();
        let embed_bias = next();
        let layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                raw_gamma: next(),
                raw_transition: next(),
                relation_maps: l.relation_maps.iter().map(|_| next()).collect(),
                conv_weight: next(),
                conv_bias: next(),
                query: next(),
                key: next(),
                value: next(),
                skip_weight: next(),
                skip_bias: next(),
                update_weight: next(),
                update_bias: next(),
            })
            .collect();
        ModelParams {
            embed_weight,
            embed_bias,
            layers,
            readout_hidden_weight: next(),
            readout_hidden_bias: next(),
            readout_out_weight: next(),
            readout_out_bias: next(),
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> ModelParams<U> {
        self.rebuild(self.flatten().into_iter().map(f).collect::<Vec<_>>())
    }
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(&[rows, cols], data).expect("positive extents")
}

impl ModelParams<Tensor> {
    /// Seeded initialization: Glorot-uniform weights, zero biases, zero raw
    /// mixture weights, and raw transitions drawn from `U(-0.5, 0.5)`.
    ///
    /// Identical transitions across steps would receive identical gradients
    /// forever and leave the mixture weights without any gradient, so the
    /// transitions start slightly apart.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, r, k, d) = (
            config.num_stocks,
            config.num_relations,
            config.expansion_steps,
            config.embed_dim,
        );
        let embed_weight = glorot(&mut rng, r, d);
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                raw_gamma: Tensor::zeros(&[r, k]),
                raw_transition: Tensor::new(
                    &[r, k, n, n],
                    (0..r * k * n * n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                )
                .expect("positive extents"),
                relation_maps: (0..r).map(|_| glorot(&mut rng, d, d)).collect(),
                conv_weight: glorot(&mut rng, r, 1),
                conv_bias: Tensor::zeros(&[1]),
                query: glorot(&mut rng, d, d),
                key: glorot(&mut rng, d, d),
                value: glorot(&mut rng, d, d),
                skip_weight: glorot(&mut rng, d, d),
                skip_bias: Tensor::zeros(&[d]),
                update_weight: glorot(&mut rng, 2 * d, d),
                update_bias: Tensor::zeros(&[d]),
            })
            .collect();
        Self {
            embed_weight,
            embed_bias: Tensor::zeros(&[d]),
            layers,
            readout_hidden_weight: glorot(&mut rng, d, d),
            readout_hidden_bias: Tensor::zeros(&[d]),
            readout_out_weight: glorot(&mut rng, d, 2),
            readout_out_bias: Tensor::zeros(&[2]),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.flatten().iter().map(|t| t.numel()).sum()
    }

    /// Registers every tensor on `graph`, as trainable leaves or constants.
    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> ModelParams<Var<'g>> {
        self.map(|t| {
            if trainable {
                graph.param(t.clone())
            } else {
                graph.constant(t.clone())
            }
        })
    }
}
