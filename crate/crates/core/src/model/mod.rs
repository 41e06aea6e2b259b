//! The graph diffusion + parallel retention network.
//!
//! A forward pass embeds the normalized indicator window into
//! `H_0 = H'_0: [N, tau, d]`, then runs `L` layers of
//!
//! 1. multi-relational diffusion `H_l = σ(conv1x1(stack_r(S_r H_{l-1} W_r)))`
//!    with `S_r = (Σ_k γ_rk T_rk) ⊙ A_r`, and
//! 2. the decoupled update `H'_l = σ((η(H_l) || H'_{l-1} W1 + b1) W2 + b2)`
//!    where `η` is causal parallel retention along the time axis,
//!
//! and finally mean-pools `H'_L` over time into a two-layer MLP that emits
//! two logits per stock.
//!
//! The mixture weights `γ` and transitions `T` are stored unconstrained and
//! materialized through softmaxes, so `Σ_k γ_rk = 1` and every column of
//! `T_rk` sums to one after any parameter update.

mod config;
pub mod layers;
mod params;

pub use config::{AdjacencyMode, ModelConfig};
pub use params::{LayerParams, ModelParams};

use thiserror::Error;

use crate::graph_generation::MultiRelAdjacency;
use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct Mgdpr {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Materialized mixture weights (`[R, K]`) and transitions (`[R, K, N, N]`)
/// of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionWeights {
    pub gamma: Tensor,
    pub transition: Tensor,
}

impl Mgdpr {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, seed);
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking every shape against `config`.
    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let template = ModelParams::init(&config, 0);
        if template.layers.len() != params.layers.len() {
            return Err(ModelError::Shape(format!(
                "config has {} layers, parameters have {}",
                template.layers.len(),
                params.layers.len()
            )));
        }
        let names = template.names();
        for ((name, want), got) in names.iter().zip(template.flatten()).zip(params.flatten()) {
            if want.shape() != got.shape() {
                return Err(ModelError::Shape(format!(
                    "{name}: expected {:?}, got {:?}",
                    want.shape(),
                    got.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    /// The adjacency stack fed to diffusion, per [`AdjacencyMode`].
    pub fn adjacency_input(&self, graphs: &MultiRelAdjacency) -> Tensor {
        match self.config.adjacency {
            AdjacencyMode::Normalized => graphs.normalized(),
            AdjacencyMode::Raw => graphs.matrices.clone(),
        }
    }

    fn check_inputs(&self, features: &Tensor, adjacency: &Tensor) -> Result<()> {
        let c = &self.config;
        if features.shape() != [c.num_relations, c.num_stocks, c.tau] {
            return Err(ModelError::Shape(format!(
                "features {:?}, expected [{}, {}, {}]",
                features.shape(),
                c.num_relations,
                c.num_stocks,
                c.tau
            )));
        }
        if adjacency.shape() != [c.num_relations, c.num_stocks, c.num_stocks] {
            return Err(ModelError::Shape(format!(
                "adjacency {:?}, expected [{}, {}, {}]",
                adjacency.shape(),
                c.num_relations,
                c.num_stocks,
                c.num_stocks
            )));
        }
        Ok(())
    }

    /// Records one forward pass on `graph` and returns logits `[N, 2]`.
    ///
    /// `features` are the normalized `[R, N, tau]` window and `adjacency`
    /// the `[R, N, N]` stack chosen by [`Mgdpr::adjacency_input`].
    pub fn forward<'g>(
        &self,
        graph: &'g Graph,
        params: &ModelParams<Var<'g>>,
        features: &Tensor,
        adjacency: &Tensor,
    ) -> Result<Var<'g>> {
        self.check_inputs(features, adjacency)?;
        let c = &self.config;
        let adjacency = graph.constant(adjacency.clone());
        let mask = graph.constant(layers::batched_decay_mask(c.num_stocks, c.tau, c.decay)?);

        let mut hidden = layers::init_state(graph, features, params.embed_weight, params.embed_bias)?;
        let mut retained = hidden;
        for layer in &params.layers {
            let gamma = layers::materialize_gamma(layer.raw_gamma)?;
            let transition = layers::materialize_transition(layer.raw_transition)?;
            let diffusion = layers::diffusion_matrices(gamma, transition, adjacency)?;
            hidden = layers::diffuse_layer(
                graph,
                hidden,
                diffusion,
                &layer.relation_maps,
                layer.conv_weight,
                layer.conv_bias,
                c.slope,
            )?;
            retained = layers::layer_update(graph, hidden, retained, layer, mask, c.num_groups, c.norm_eps, c.slope)?;
        }
        layers::readout(
            retained,
            params.readout_hidden_weight,
            params.readout_hidden_bias,
            params.readout_out_weight,
            params.readout_out_bias,
            c.slope,
        )
    }

    /// Inference-only logits `[N, 2]`.
    pub fn logits(&self, features: &Tensor, adjacency: &Tensor) -> Result<Tensor> {
        let graph = Graph::new();
        let params = self.params.bind(&graph, false);
        Ok(self.forward(&graph, &params, features, adjacency)?.value())
    }

    /// Per-stock argmax class (0 = down/flat, 1 = up); ties go to class 0.
    pub fn predict(&self, features: &Tensor, adjacency: &Tensor) -> Result<Vec<u8>> {
        let logits = self.logits(features, adjacency)?;
        Ok(logits.data().chunks(2).map(|z| u8::from(z[1] > z[0])).collect())
    }

    /// The same network with stocks relabeled so that new stock `i` is old
    /// stock `perm[i]`.
    pub fn permute_stocks(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.config.num_stocks)?;
        let mut params = self.params.clone();
        for l in &mut params.layers {
            l.raw_transition = relabel_stocks(&l.raw_transition, &[2, 3], perm)?;
        }
        Ok(Self {
            config: self.config.clone(),
            params,
        })
    }

    /// Materialized `γ` and `T` for every layer.
    pub fn diffusion_weights(&self) -> Result<Vec<DiffusionWeights>> {
        let graph = Graph::new();
        self.params
            .layers
            .iter()
            .map(|l| {
                let gamma = layers::materialize_gamma(graph.constant(l.raw_gamma.clone()))?.value();
                let transition = layers::materialize_transition(graph.constant(l.raw_transition.clone()))?.value();
                Ok(DiffusionWeights { gamma, transition })
            })
            .collect()
    }
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
        return Err(ModelError::Shape(format!("{perm:?} is not a permutation of {n} stocks")));
    }
    Ok(())
}

/// Reorders `t` along every axis in `axes` so that index `i` takes the old
/// index `perm[i]`.
pub fn relabel_stocks(t: &Tensor, axes: &[usize], perm: &[usize]) -> Result<Tensor> {
    let shape = t.shape();
    for &a in axes {
        if a >= shape.len() {
            return Err(ModelError::Shape(format!("axis {a} out of range for {shape:?}")));
        }
        check_permutation(perm, shape[a])?;
    }
    let mut strides = vec![1; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }
    let mut index = vec![0; shape.len()];
    let mut out = Vec::with_capacity(t.numel());
    for _ in 0..t.numel() {
        let src: usize = index
            .iter()
            .enumerate()
            .map(|(a, &i)| strides[a] * if axes.contains(&a) { perm[i] } else { i })
            .sum();
        out.push(t.data()[src]);
        for a in (0..shape.len()).rev() {
            index[a] += 1;
            if index[a] < shape[a] {
                break;
            }
            index[a] = 0;
        }
    }
    Ok(Tensor::new(shape, out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relabel_rows_and_columns() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]);
        let p = relabel_stocks(&a, &[0, 1], &[2, 0, 1]).unwrap();
        assert_eq!(p.data(), &[9.0, 7.0, 8.0, 3.0, 1.0, 2.0, 6.0, 4.0, 5.0]);
        let rows = relabel_stocks(&a, &[0], &[1, 0, 2]).unwrap();
        assert_eq!(&rows.data()[..3], &[4.0, 5.0, 6.0]);
        assert!(relabel_stocks(&a, &[0], &[0, 0, 1]).is_err());
    }
}
