use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Anything that owns trainable tensors in a fixed declaration order.
pub trait Parameters {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;
}

impl Parameters for Vec<Tensor> {
    fn parameters(&self) -> Vec<&Tensor> {
        self.iter().collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().collect()
    }
}

/// Compares autodiff gradients against central finite differences.
///
/// `f` records a scalar loss on a fresh graph and returns it together with
/// the leaf handles of `state.parameters()` in the same order. Every
/// coordinate of every parameter is perturbed by `±step`. The returned value
/// is the largest `|g - g_fd| / max(|g|, |g_fd|, 1e-8)`.
pub fn finite_diff_check<S, F>(state: &mut S, step: f64, mut f: F) -> Result<f64>
where
    S: Parameters,
    F: FnMut(&S, &mut Graph) -> Result<(Var, Vec<Var>)>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::Domain(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let mut graph = Graph::new();
    let (loss, leaves) = f(state, &mut graph)?;
    let n_params = state.parameters().len();
    if leaves.len() != n_params {
        return Err(Error::Contract(format!(
            "loss function returned {} leaves for {} parameters",
            leaves.len(),
            n_params
        )));
    }
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|&v| graph.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let mut eval = |s: &S| -> Result<f64> {
        let mut g = Graph::new();
        let (l, _) = f(s, &mut g)?;
        Ok(g.value(l).item())
    };

    let mut worst = 0.0_f64;
    for (p, grad) in analytic.iter().enumerate() {
        for (i, &analytic_i) in grad.iter().enumerate() {
            let orig = state.parameters()[p].data()[i];
            state.parameters_mut()[p].data_mut()[i] = orig + step;
            let plus = eval(state);
            state.parameters_mut()[p].data_mut()[i] = orig - step;
            let minus = eval(state);
            state.parameters_mut()[p].data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * step);
            worst = worst.max(relative_error(analytic_i, numeric));
        }
    }
    Ok(worst)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}
