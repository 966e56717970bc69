use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error over every entry of every parameter.
    pub max_rel_error: f64,
    /// Per-tensor maxima, in parameter order.
    pub per_tensor: Vec<f64>,
}

/// Central difference of a scalar function of one parameter entry.
pub fn central_difference<F>(f: &F, params: &mut [Tensor], tensor: usize, entry: usize, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let orig = params[tensor].data[entry];
    params[tensor].data[entry] = orig + eps;
    let plus = evaluate(f, params)?;
    params[tensor].data[entry] = orig - eps;
    let minus = evaluate(f, params)?;
    params[tensor].data[entry] = orig;
    Ok((plus - minus) / (2.0 * eps))
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.leaf(t)).collect();
    let out = f(&mut g, &vars)?;
    let v = g.scalar(out);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// Error per entry is `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
/// `f` sees one graph leaf per tensor of `params`, in order.
pub fn grad_check<F>(f: F, params: &mut [Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_against(&f, &f, params, eps)
}

/// Like [`grad_check`], but finite differences are taken of `numeric`
/// instead of `analytic`. Used when the analytic objective contains a
/// stop-gradient and the oracle must freeze the detached factor.
pub fn grad_check_against<F, G>(analytic: &F, numeric: &G, params: &mut [Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    G: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("epsilon {eps} outside [1e-7, 1e-3]")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|t| g.leaf(&t.clone().requiring_grad()))
        .collect();
    let loss = analytic(&mut g, &vars)?;
    if !g.scalar(loss).is_finite() {
        return Err(Error::NonFinite(format!("objective evaluated to {}", g.scalar(loss))));
    }
    g.backward(loss)?;
    let analytic_grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(params.iter())
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let mut per_tensor = Vec::with_capacity(params.len());
    for (ti, grads) in analytic_grads.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (e, &a) in grads.iter().enumerate() {
            let n = central_difference(numeric, params, ti, e, eps)?;
            let err = (a - n).abs() / 1f64.max(a.abs()).max(n.abs());
            worst = worst.max(err);
        }
        per_tensor.push(worst);
    }
    Ok(GradCheckReport {
        max_rel_error: per_tensor.iter().copied().fold(0.0, f64::max),
        per_tensor,
    })
}
