use super::TrainError;
use crate::tensor::{Graph, Tensor, Var};

/// Largest tolerated magnitude of the mixture-weight constraint term.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-9;

/// A recorded objective and its two parts.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'g> {
    pub loss: Var<'g>,
    pub cross_entropy: f64,
    pub constraint: f64,
}

/// `Σ_l Σ_r (Σ_k γ_lrk − 1)` over materialized `[R, K]` mixture weights.
pub fn constraint_term<'g>(graph: &'g Graph, gammas: &[Var<'g>]) -> Result<Var<'g>, TrainError> {
    let mut total = graph.constant(Tensor::scalar(0.0));
    for &gamma in gammas {
        let slices = gamma.shape()[0] as f64;
        let deviation = gamma.sum()?.sub(graph.constant(Tensor::scalar(slices)))?;
        total = total.add(deviation)?;
    }
    Ok(total)
}

/// Mean cross-entropy over `B` days (each itself a mean over stocks) plus the
/// constraint term.
pub fn objective<'g>(
    graph: &'g Graph,
    logits: &[Var<'g>],
    labels: &[&[u8]],
    gammas: &[Var<'g>],
) -> Result<Objective<'g>, TrainError> {
    assert_eq!(logits.len(), labels.len(), "one label vector per day");
    assert!(!logits.is_empty(), "objective over an empty batch");
    let mut ce = graph.constant(Tensor::scalar(0.0));
    for (&z, day) in logits.iter().zip(labels) {
        let classes = day
            .iter()
            .map(|&l| match l {
                0 | 1 => Ok(l as usize),
                other => Err(TrainError::Label(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        ce = ce.add(z.cross_entropy(&classes)?)?;
    }
    let ce = ce.scale(1.0 / logits.len() as f64)?;
    let constraint = constraint_term(graph, gammas)?;
    let constraint_value = constraint.value().item();
    if constraint_value.abs() >= CONSTRAINT_TOLERANCE {
        return Err(TrainError::Constraint(constraint_value));
    }
    Ok(Objective {
        cross_entropy: ce.value().item(),
        constraint: constraint_value,
        loss: ce.add(constraint)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::materialize_gamma;

    #[test]
    fn saturated_correct_prediction_costs_nothing() {
        let g = Graph::new();
        let z = g.constant(Tensor::from_rows(&[vec![10.0, -10.0]]));
        let obj = objective(&g, &[z], &[&[0]], &[]).unwrap();
        assert!(obj.cross_entropy < 1e-4);
    }

    #[test]
    fn uniform_prediction_costs_ln2() {
        for label in [0u8, 1] {
            let g = Graph::new();
            let z = g.constant(Tensor::zeros(&[3, 2]));
            let obj = objective(&g, &[z], &[&[label; 3]], &[]).unwrap();
            assert!((obj.cross_entropy - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn constraint_vanishes_for_softmax_gamma() {
        let g = Graph::new();
        let raw = Tensor::new(&[3, 4], (0..12).map(|i| (i as f64 * 1.7).sin() * 3.0).collect()).unwrap();
        let gamma = materialize_gamma(g.param(raw)).unwrap();
        let z = g.constant(Tensor::zeros(&[1, 2]));
        let obj = objective(&g, &[z], &[&[1]], &[gamma, gamma]).unwrap();
        assert!(obj.constraint.abs() < CONSTRAINT_TOLERANCE);
    }

    #[test]
    fn unconstrained_gamma_is_rejected() {
        let g = Graph::new();
        let z = g.constant(Tensor::zeros(&[1, 2]));
        let err = objective(&g, &[z], &[&[1]], &[g.constant(Tensor::ones(&[1, 3]))]).unwrap_err();
        assert!(matches!(err, TrainError::Constraint(v) if v == 2.0));
    }

    #[test]
    fn label_outside_binary_is_rejected() {
        let g = Graph::new();
        let z = g.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(objective(&g, &[z], &[&[0, 2]], &[]), Err(TrainError::Label(2))));
    }

    #[test]
    fn days_are_averaged() {
        let g = Graph::new();
        let sure = g.constant(Tensor::from_rows(&[vec![30.0, -30.0]]));
        let unsure = g.constant(Tensor::zeros(&[1, 2]));
        let obj = objective(&g, &[sure, unsure], &[&[0], &[0]], &[]).unwrap();
        assert!((obj.cross_entropy - 2f64.ln() / 2.0).abs() < 1e-12);
    }
}
