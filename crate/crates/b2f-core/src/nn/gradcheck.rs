use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// The tensors a gradient check perturbs. The build closure binds whichever
/// of them it uses by name; `grad_check` then compares the tape gradient of
/// every bound tensor against central finite differences.
pub struct ParamSet<'a> {
    entries: &'a [(String, Tensor)],
}

impl ParamSet<'_> {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::invalid(format!("grad_check: no parameter named `{name}`")))
    }

    pub fn bind(&self, g: &mut Graph, name: &str) -> Result<Var> {
        let t = self.get(name)?.clone();
        g.param(name, &t)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (param name, flat element index, analytic, numeric) for the worst
    /// element, if any element was checked.
    pub worst: Option<(String, usize, f64, f64)>,
    pub elements_checked: usize,
}

/// Compare tape gradients against central finite differences.
///
/// `build` must construct the scalar loss from scratch on the graph it is
/// given, binding parameters through the [`ParamSet`]; it is called many
/// times, so any randomness inside must be re-seeded per call or pre-sampled
/// outside. Only tensors that are both listed and bound get checked, so a
/// build may bind extra parameters (checking a subset of a large model) or
/// ignore listed ones; `elements_checked` in the report says how much was
/// actually compared. The relative error per element is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
pub fn grad_check(
    params: &[(String, Tensor)],
    eps: f64,
    build: &mut dyn FnMut(&mut Graph, &ParamSet) -> Result<Var>,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!(
            "grad_check: eps must be positive and finite, got {eps}"
        )));
    }

    // Analytic pass.
    let mut g = Graph::training();
    let loss = build(&mut g, &ParamSet { entries: params })?;
    let base = g.scalar_value(loss)?;
    if !base.is_finite() {
        return Err(Error::invalid(format!(
            "grad_check: loss is not finite at the base point ({base})"
        )));
    }
    g.backward(loss)?;
    let analytic: Vec<(String, Vec<f64>)> = g.param_grads();

    let mut eval = |entries: &[(String, Tensor)]| -> Result<f64> {
        // Values only; inference mode skips the tape.
        let mut g = Graph::inference();
        let loss = build(&mut g, &ParamSet { entries })?;
        g.scalar_value(loss)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        elements_checked: 0,
    };
    let mut work: Vec<(String, Tensor)> = params.to_vec();
    for (name, grad) in &analytic {
        let Some(pi) = work.iter().position(|(n, _)| n == name) else {
            continue;
        };
        for j in 0..grad.len() {
            let orig = work[pi].1.data[j];
            work[pi].1.data[j] = orig + eps;
            let up = eval(&work)?;
            work[pi].1.data[j] = orig - eps;
            let down = eval(&work)?;
            work[pi].1.data[j] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::invalid(format!(
                    "grad_check: non-finite loss while perturbing `{name}`[{j}]"
                )));
            }
            let numeric = (up - down) / (2.0 * eps);
            let a = grad[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.elements_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), j, a, numeric));
            }
        }
    }
    Ok(report)
}
