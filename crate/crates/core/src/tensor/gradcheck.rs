//! Central finite-difference check of analytic gradients.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Relative error used by the gradient checks:
/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<F>(build: &F, point: &[Tensor], track: bool) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point
        .iter()
        .map(|t| {
            if track {
                g.param(t)
            } else {
                g.input(t)
            }
        })
        .collect();
    let out = build(&mut g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::NonScalarLoss(g.shape(out).to_vec()));
    }
    if !v[0].is_finite() {
        return Err(Error::NonFinite(format!("subgraph value {}", v[0])));
    }
    Ok((g, vars, out))
}

/// Maximum relative error between the analytic gradient of the scalar
/// subgraph built by `build` and central differences with step `epsilon`,
/// taken over every element of every input in `point`.
pub fn grad_check<F>(build: F, point: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (mut g, vars, out) = evaluate(&build, point, true)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(point)
        .map(|(v, t)| {
            g.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = point.to_vec();
    for (ti, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("analytic gradient {a}")));
            }
            let orig = probe[ti].data()[i];
            probe[ti].data_mut()[i] = orig + epsilon;
            let (gp, _, op) = evaluate(&build, &probe, false)?;
            probe[ti].data_mut()[i] = orig - epsilon;
            let (gm, _, om) = evaluate(&build, &probe, false)?;
            probe[ti].data_mut()[i] = orig;
            let numeric = (gp.scalar(op) - gm.scalar(om)) / (2.0 * epsilon);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}
