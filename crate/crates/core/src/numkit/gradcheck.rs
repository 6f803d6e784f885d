use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;

/// Gradient magnitude below which errors are measured absolutely, so exact
/// zeros are not judged against difference-quotient round-off.
pub const ABS_FLOOR: f64 = 1e-6;

/// Outcome of a finite-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Worst coordinate: (parameter, index, analytic, numeric).
    pub worst: Option<(String, usize, f64, f64)>,
}

fn eval<F>(f: &F, store: &ParamStore<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let v = g.scalar(loss);
    if !v.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Compares analytic gradients of `f` with central differences on every
/// coordinate of every trainable tensor. Returns the maximum relative error.
pub fn grad_check<F>(f: F, store: &ParamStore<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    grad_check_sampled(f, store, eps, usize::MAX, 0).map(|r| r.max_rel_err)
}

/// Like [`grad_check`] but probes at most `per_tensor` coordinates of each
/// tensor, chosen with a seeded generator.
pub fn grad_check_sampled<F>(
    f: F,
    store: &ParamStore<f64>,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let mut analytic = store.clone();
    analytic.clear_grads();
    {
        let mut g = Graph::new();
        let loss = f(&mut g, &analytic)?;
        g.backward_into(loss, &mut analytic)?;
    }
    let mut rng = rng::seeded(seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for id in store.ids() {
        if store.is_frozen(id) {
            continue;
        }
        let n = store.get(id).numel();
        let coords: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let grad = analytic
            .get(id)
            .grad()
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        for j in coords {
            let orig = probe.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + eps;
            let plus = eval(&f, &probe)?;
            probe.get_mut(id).data_mut()[j] = orig - eps;
            let minus = eval(&f, &probe)?;
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((store.name(id).to_string(), j, a, numeric));
            }
        }
    }
    Ok(report)
}
