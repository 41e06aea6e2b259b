//! Central finite differences for checking analytic gradients.
//!
//! Only forward evaluations are used here, so the estimates are independent
//! of the backward rules in [`crate::tensor`].

use crate::model::{layers, Mgdpr, ModelParams};
use crate::tensor::{Graph, Tensor, Var};
use crate::training::{objective, Example, TrainError};

/// Central-difference gradient of a scalar function with respect to every
/// entry of every input tensor.
pub fn central_difference<F>(inputs: &[Tensor], step: f64, mut f: F) -> Vec<Tensor>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut work = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = vec![0.0; inputs[t].numel()];
        for (i, gi) in g.iter_mut().enumerate() {
            let original = inputs[t].data()[i];
            work[t] = perturbed(&inputs[t], i, original + step);
            let plus = f(&work);
            work[t] = perturbed(&inputs[t], i, original - step);
            let minus = f(&work);
            *gi = (plus - minus) / (2.0 * step);
        }
        work[t] = inputs[t].clone();
        grads.push(Tensor::new(inputs[t].shape(), g).expect("same shape as input"));
    }
    grads
}

fn perturbed(t: &Tensor, index: usize, value: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[index] = value;
    Tensor::new(t.shape(), data).expect("same shape")
}

/// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`, or the absolute
/// difference norm when both gradients are below `1e-8` in norm.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let norm = |xs: &mut dyn Iterator<Item = f64>| xs.map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.data().iter().zip(numeric.data()).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.data().iter().copied()).max(norm(&mut numeric.data().iter().copied()));
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}fn recorded_objective<'g>(
    model: &Mgdpr,
    graph: &'g Graph,
    vars: &ModelParams<Var<'g>>,
    examples: &[Example],
) -> Result<Var<'g>, TrainError> {
    let logits = examples
        .iter()
        .map(|ex| model.forward(graph, vars, &ex.features, &ex.adjacency))
        .collect::<Result<Vec<_>, _>>()?;
    let gammas = vars
        .layers
        .iter()
        .map(|l| layers::materialize_gamma(l.raw_gamma))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<&[u8]> = examples.iter().map(|ex| ex.labels.as_slice()).collect();
    Ok(objective(graph, &logits, &labels, &gammas)?.loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// Relative error per named parameter.
    pub errors: Vec<(String, f64)>,
    /// Distance of the nearest activation input from the leaky ReLU kink at
    /// the unperturbed parameters.
    pub kink_margin: f64,
}

impl GradientCheck {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

/// Relative error of the training objective's analytic gradient against
/// central differences, for every named parameter of `model`.
pub fn model_gradient_check(model: &Mgdpr, examples: &[Example], step: f64) -> Result<GradientCheck, TrainError> {
    let graph = Graph::new();
    let vars = model.params.bind(&graph, true);
    let loss = recorded_objective(model, &graph, &vars, examples)?;
    let kink_margin = graph.kink_margin().unwrap_or(f64::INFINITY);
    let grads = graph.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .flatten()
        .into_iter()
        .map(|v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape())))
        .collect();

    let inputs: Vec<Tensor> = model.params.flatten().into_iter().cloned().collect();
    let mut failure = None;
    let numeric = central_difference(&inputs, step, |xs| {
        let g = Graph::new();
        let vs = model.params.rebuild(xs.iter().map(|t| g.constant(t.clone())).collect::<Vec<_>>());
        match recorded_objective(model, &g, &vs, examples) {
            Ok(v) => v.value().item(),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let errors = model
        .params
        .names()
        .into_iter()
        .zip(analytic.iter().zip(&numeric))
        .map(|(name, (a, n))| (name, relative_error(a, n)))
        .collect();
    Ok(GradientCheck { errors, kink_margin })
}


