use alloc::string::String;
use alloc::vec::Vec;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

/// `|a − b| / (|a| + |b| + 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-8)
}

/// Compares the reverse-mode gradient of a scalar function of one input
/// tensor against central differences, returning the largest relative
/// error over all coordinates. `f` must be deterministic.
pub fn finite_diff_gradcheck<F>(mut f: F, point: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut eval = |p: Tensor<f64>, grad: bool| -> Result<(f64, Option<Vec<f64>>)> {
        let mut g = Graph::new();
        let x = g.leaf(p, grad);
        let y = f(&mut g, x)?;
        let value = g.value(y).item();
        if !grad {
            return Ok((value, None));
        }
        let grads = g.backward(y)?;
        let n = g.value(x).len();
        let dx = grads.wrt(x).map(|s| s.to_vec()).unwrap_or_else(|| alloc::vec![0.0; n]);
        Ok((value, Some(dx)))
    };
    let (_, analytic) = eval(point.clone(), true)?;
    let analytic = analytic.unwrap_or_default();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = point.clone();
        plus.data_mut()[i] += eps;
        let mut minus = point.clone();
        minus.data_mut()[i] -= eps;
        let cd = (eval(plus, false)?.0 - eval(minus, false)?.0) / (2.0 * eps);
        worst = worst.max(relative_error(a, cd));
    }
    Ok(worst)
}

/// Gradient check over the trainable parameters of a store. `f` builds the
/// scalar from a fresh copy of the store on every call, so batch-norm
/// running-stat updates do not leak between evaluations. At most
/// `max_coords` evenly spaced coordinates are probed per parameter.
/// Returns the worst relative error per parameter name.
pub fn gradcheck_params<F>(
    store: &ParamStore<f64>,
    mut f: F,
    eps: f64,
    max_coords: usize,
) -> Result<Vec<(String, f64)>>
where
    F: FnMut(&mut Graph<f64>, &mut ParamStore<f64>) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grad();
    let mut g = Graph::new();
    let y = f(&mut g, &mut work)?;
    let mut analytic = store.clone();
    analytic.zero_grad();
    g.backward(y)?.accumulate_into(&mut analytic);

    let mut eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut s = s.clone();
        let mut g = Graph::new();
        let y = f(&mut g, &mut s)?;
        Ok(g.value(y).item())
    };
    let mut report = Vec::new();
    for (id, p) in store.iter() {
        if !p.trainable {
            continue;
        }
        let n = p.value.len();
        let probes = n.min(max_coords.max(1));
        let mut worst = 0.0f64;
        for j in 0..probes {
            let i = j * n / probes;
            let mut plus = store.clone();
            plus.get_mut(id).value.data_mut()[i] += eps;
            let mut minus = store.clone();
            minus.get_mut(id).value.data_mut()[i] -= eps;
            let cd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.grad(id).data()[i], cd));
        }
        report.push((p.name.clone(), worst));
    }
    Ok(report)
}
