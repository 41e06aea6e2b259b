//! Building blocks of the forward pass, expressed on recorded variables.
//!
//! Hidden states are `[N, tau, d]`: diffusion mixes the stock axis
//! independently for every time step, retention mixes the time axis
//! independently for every stock.

use super::{LayerParams, ModelError};
use crate::tensor::{Graph, Tensor, Var};

type Result<T> = std::result::Result<T, ModelError>;

/// Mixture weights over expansion steps: softmax of `[R, K]` over `K`.
pub fn materialize_gamma<'g>(raw_gamma: Var<'g>) -> Result<Var<'g>> {
    Ok(raw_gamma.softmax(1)?)
}

/// Column-stochastic transitions: softmax of `[R, K, N, N]` over the row
/// index, so every column sums to one.
pub fn materialize_transition<'g>(raw_transition: Var<'g>) -> Result<Var<'g>> {
    Ok(raw_transition.softmax(2)?)
}

/// `S_r = (Σ_k γ_rk T_rk) ⊙ A_r` for every relation: `[R, N, N]`.
pub fn diffusion_matrices<'g>(gamma: Var<'g>, transition: Var<'g>, adjacency: Var<'g>) -> Result<Var<'g>> {
    let t_shape = transition.shape();
    let &[r, k, n, _] = t_shape.as_slice() else {
        return Err(ModelError::Shape(format!("transition must be [R, K, N, N], got {t_shape:?}")));
    };
    if gamma.shape() != [r, k] || adjacency.shape() != [r, n, n] {
        return Err(ModelError::Shape(format!(
            "gamma {:?} / adjacency {:?} do not match transition {t_shape:?}",
            gamma.shape(),
            adjacency.shape()
        )));
    }
    let mixed = gamma
        .reshape(&[r, 1, k])?
        .bmm(transition.reshape(&[r, k, n * n])?)?
        .reshape(&[r, n, n])?;
    Ok(mixed.hadamard(adjacency)?)
}

/// `H_l = σ(conv1x1(stack_r(S_r · H_{l-1} · W_r)))`.
pub fn diffuse_layer<'g>(
    graph: &'g Graph,
    hidden: Var<'g>,
    diffusion: Var<'g>,
    relation_maps: &[Var<'g>],
    conv_weight: Var<'g>,
    conv_bias: Var<'g>,
    slope: f64,
) -> Result<Var<'g>> {
    let h_shape = hidden.shape();
    let &[n, tau, d] = h_shape.as_slice() else {
        return Err(ModelError::Shape(format!("hidden state must be [N, tau, d], got {h_shape:?}")));
    };
    let flat = hidden.reshape(&[n, tau * d])?;
    let mut channels = Vec::with_capacity(relation_maps.len());
    for (r, &w) in relation_maps.iter().enumerate() {
        let spread = diffusion.select(r)?.matmul(flat)?;
        let mapped = spread.reshape(&[n * tau, d])?.matmul(w)?;
        let d_out = mapped.shape()[1];
        channels.push(mapped.reshape(&[n * tau * d_out, 1])?);
    }
    let d_out = relation_maps
        .first()
        .map(|w| w.shape()[1])
        .ok_or_else(|| ModelError::Shape("no relation maps".into()))?;
    let stacked = graph.concat(&channels, 1)?;
    let mixed = stacked.affine(conv_weight, conv_bias)?;
    Ok(mixed.reshape(&[n, tau, d_out])?.leaky_relu(slope)?)
}

/// `D[i][j] = decay^(i-j)` for `i >= j`, else 0.
pub fn decay_mask(tau: usize, decay: f64) -> Result<Tensor> {
    if decay.is_nan() || decay <= 0.0 {
        return Err(ModelError::Config(format!("decay must be positive, got {decay}")));
    }
    let mut d = vec![0.0; tau * tau];
    for i in 0..tau {
        for j in 0..=i {
            d[i * tau + j] = decay.powi((i - j) as i32);
        }
    }
    Tensor::new(&[tau, tau], d).map_err(ModelError::Tensor)
}

/// The decay mask repeated once per stock: `[N, tau, tau]`.
pub fn batched_decay_mask(n: usize, tau: usize, decay: f64) -> Result<Tensor> {
    let mask = decay_mask(tau, decay)?;
    let data = mask.data().repeat(n);
    Ok(Tensor::new(&[n, tau, tau], data)?)
}

/// `φ((Q Kᵀ / √d ⊙ D) V)` over the time axis of every stock, with
/// `Q = Z W_Q`, `K = Z W_K`, `V = Z W_V` and `φ` group normalization.
pub fn parallel_retention<'g>(
    z: Var<'g>,
    query: Var<'g>,
    key: Var<'g>,
    value: Var<'g>,
    mask: Var<'g>,
    num_groups: usize,
    eps: f64,
) -> Result<Var<'g>> {
    let z_shape = z.shape();
    let &[n, tau, d] = z_shape.as_slice() else {
        return Err(ModelError::Shape(format!("retention input must be [N, tau, d], got {z_shape:?}")));
    };
    if mask.shape() != [n, tau, tau] {
        return Err(ModelError::Shape(format!("mask {:?} for input {z_shape:?}", mask.shape())));
    }
    let flat = z.reshape(&[n * tau, d])?;
    let project = |w: Var<'g>| -> Result<Var<'g>> {
        let out = flat.matmul(w)?;
        let width = out.shape()[1];
        Ok(out.reshape(&[n, tau, width])?)
    };
    let (q, k, v) = (project(query)?, project(key)?, project(value)?);
    let scale = 1.0 / (q.shape()[2] as f64).sqrt();
    let scores = q.bmm(k.transpose()?)?.scale(scale)?.hadamard(mask)?;
    Ok(scores.bmm(v)?.group_normalize(num_groups, eps)?)
}

/// `H'_l = σ((η(H_l) || (H'_{l-1} W1 + b1)) W2 + b2)`.
#[allow(clippy::too_many_arguments)]
pub fn layer_update<'g>(
    graph: &'g Graph,
    hidden: Var<'g>,
    retained: Var<'g>,
    params: &LayerParams<Var<'g>>,
    mask: Var<'g>,
    num_groups: usize,
    eps: f64,
    slope: f64,
) -> Result<Var<'g>> {
    let shape = hidden.shape();
    if retained.shape() != shape {
        return Err(ModelError::Shape(format!(
            "diffusion state {shape:?} and retained state {:?} differ",
            retained.shape()
        )));
    }
    let (n, tau, d) = (shape[0], shape[1], shape[2]);
    let eta = parallel_retention(hidden, params.query, params.key, params.value, mask, num_groups, eps)?
        .reshape(&[n * tau, d])?;
    let skip = retained
        .reshape(&[n * tau, d])?
        .affine(params.skip_weight, params.skip_bias)?;
    let joined = graph.concat(&[eta, skip], 1)?;
    let out = joined.affine(params.update_weight, params.update_bias)?;
    let d_out = out.shape()[1];
    Ok(out.leaky_relu(slope)?.reshape(&[n, tau, d_out])?)
}

/// Per-time-step linear embedding of the `R` indicator values of each stock:
/// features `[R, N, tau]` to `H_0: [N, tau, d]`.
pub fn init_state<'g>(graph: &'g Graph, features: &Tensor, weight: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
    let &[r, n, tau] = features.shape() else {
        return Err(ModelError::Shape(format!("features must be [R, N, tau], got {:?}", features.shape())));
    };
    let mut per_step = Vec::with_capacity(features.numel());
    for i in 0..n {
        for t in 0..tau {
            for rel in 0..r {
                per_step.push(features.data()[(rel * n + i) * tau + t]);
            }
        }
    }
    let x = graph.constant(Tensor::new(&[n * tau, r], per_step)?);
    let h = x.affine(weight, bias)?;
    let d = h.shape()[1];
    Ok(h.reshape(&[n, tau, d])?)
}

/// Temporal mean-pool followed by a two-layer MLP: `[N, tau, d]` to `[N, 2]`.
pub fn readout<'g>(
    retained: Var<'g>,
    hidden_weight: Var<'g>,
    hidden_bias: Var<'g>,
    out_weight: Var<'g>,
    out_bias: Var<'g>,
    slope: f64,
) -> Result<Var<'g>> {
    let pooled = retained.mean_axis(1)?;
    let h = pooled.affine(hidden_weight, hidden_bias)?.leaky_relu(slope)?;
    Ok(h.affine(out_weight, out_bias)?)
}
