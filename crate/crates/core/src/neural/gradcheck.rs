use super::graph::{Graph, Var};
use super::store::{ParamId, ParamStore};
use crate::error::Result;

/// Largest relative disagreement between backprop and central differences
/// over every scalar in `ids`:
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
///
/// `f` must rebuild the scalar objective from scratch on the graph it is
/// given, reading parameters only through `store`.
pub fn grad_check<F>(store: &ParamStore, ids: &[ParamId], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    Ok(grad_check_report(store, ids, eps, f)?.iter().map(|r| r.max_rel_error).fold(0.0, f64::max))
}

/// Per-tensor outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub id: ParamId,
    pub max_rel_error: f64,
    /// Largest analytic gradient magnitude in the tensor.
    pub max_grad: f64,
    /// Element index of the worst disagreement.
    pub worst_index: usize,
    /// Analytic and numeric derivative at the worst element.
    pub worst_pair: (f64, f64),
}

/// Like [`grad_check`], reporting the worst element of every tensor.
pub fn grad_check_report<F>(store: &ParamStore, ids: &[ParamId], eps: f64, f: F) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    grad_check_subset(store, ids, eps, usize::MAX, f)
}

/// Like [`grad_check_report`], probing at most `per_tensor` evenly spaced
/// elements of each tensor.
pub fn grad_check_subset<F>(store: &ParamStore, ids: &[ParamId], eps: f64, per_tensor: usize, f: F) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let grads = g.backward(out)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        Ok(g.scalar_value(out))
    };

    let mut work = store.clone();
    let mut report = Vec::with_capacity(ids.len());
    for &id in ids {
        let analytic = grads.param(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; store.tensor(id).len()]);
        let mut check = ParamCheck {
            id,
            max_rel_error: 0.0,
            max_grad: analytic.iter().fold(0.0, |m, g| m.max(g.abs())),
            worst_index: 0,
            worst_pair: (0.0, 0.0),
        };
        let len = store.tensor(id).len();
        let step = len.div_ceil(per_tensor.max(1)).max(1);
        for k in (0..len).step_by(step) {
            let orig = store.tensor(id).data[k];
            work.tensor_mut(id).data[k] = orig + eps;
            let plus = eval(&work)?;
            work.tensor_mut(id).data[k] = orig - eps;
            let minus = eval(&work)?;
            work.tensor_mut(id).data[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[k], numeric);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = k;
                check.worst_pair = (analytic[k], numeric);
            }
        }
        report.push(check);
    }
    Ok(report)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}
