//! Central finite-difference checks of analytic gradients.
//!
//! The numerical side only ever runs forward passes, so it stays independent
//! of the backward rules it validates.

use crate::error::Result;
use crate::model::NmtModel;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
/// Differences below this are treated as agreement regardless of scale.
pub const DEFAULT_ABS_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    /// Largest relative error among entries above the absolute floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Where `max_rel_error` was found: (tensor label, flat index).
    pub worst: Option<(String, usize)>,
    pub rel_tol: f64,
}

impl GradCheckReport {
    fn new(rel_tol: f64) -> Self {
        GradCheckReport {
            checked: 0,
            failures: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst: None,
            rel_tol,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    fn record(&mut self, label: &str, index: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        self.max_abs_error = self.max_abs_error.max(diff);
        if diff <= DEFAULT_ABS_FLOOR {
            return;
        }
        let rel = diff / analytic.abs().max(numeric.abs());
        if rel > self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = Some((label.to_string(), index));
        }
        if rel >= self.rel_tol {
            self.failures += 1;
        }
    }
}

/// Checks `d f / d inputs` where `f` builds a scalar from leaf inputs.
pub fn check_inputs<F>(inputs: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check_inputs_in(Graph::new, inputs, f)
}

/// [`check_inputs`] on graphs made by `new_graph`, e.g. seeded dropout
/// graphs that draw the same mask every time.
pub fn check_inputs_in<G, F>(new_graph: G, inputs: &[Tensor], f: F) -> Result<GradCheckReport>
where
    G: Fn() -> Graph,
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = new_graph();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = new_graph();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradCheckReport::new(DEFAULT_REL_TOL);
    let mut probe = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[k].shape());
        let analytic = grads.wrt(*var).unwrap_or(&zeros).clone();
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + DEFAULT_EPS;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - DEFAULT_EPS;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * DEFAULT_EPS);
            report.record(&format!("input{k}"), i, analytic.data()[i], numeric);
        }
    }
    Ok(report)
}

/// Checks gradients of a loss with respect to parameters in a store.
///
/// `max_per_param` bounds how many entries of each tensor are probed (evenly
/// strided); `None` probes all of them.
pub fn check_params<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    max_per_param: Option<usize>,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    check_owned(store, |s| s, |s| s, ids, max_per_param, f)
}

/// [`check_params`] over a whole model's parameters, with `f` building the
/// loss from the model.
pub fn check_model<F>(
    model: &mut NmtModel,
    ids: &[ParamId],
    max_per_param: Option<usize>,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &NmtModel) -> Result<Var>,
{
    check_owned(model, NmtModel::params, NmtModel::params_mut, ids, max_per_param, f)
}

fn check_owned<T, F>(
    owner: &mut T,
    store: fn(&T) -> &ParamStore,
    store_mut: fn(&mut T) -> &mut ParamStore,
    ids: &[ParamId],
    max_per_param: Option<usize>,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &T) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, owner)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| {
            grads
                .params()
                .find(|(p, _)| *p == id)
                .map(|(_, t)| t.clone())
                .unwrap_or_else(|| Tensor::zeros(store(owner).value(id).shape()))
        })
        .collect();
    drop(g);

    let eval = |owner: &T| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(&mut g, owner)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradCheckReport::new(DEFAULT_REL_TOL);
    for (&id, grad) in ids.iter().zip(&analytic) {
        let len = store(owner).value(id).len();
        let stride = max_per_param.map_or(1, |m| len.div_ceil(m.max(1)));
        let label = store(owner).name(id).to_string();
        for i in (0..len).step_by(stride) {
            let orig = store(owner).value(id).data()[i];
            store_mut(owner).value_mut(id).data_mut()[i] = orig + DEFAULT_EPS;
            let up = eval(owner)?;
            store_mut(owner).value_mut(id).data_mut()[i] = orig - DEFAULT_EPS;
            let down = eval(owner)?;
            store_mut(owner).value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * DEFAULT_EPS);
            report.record(&label, i, grad.data()[i], numeric);
        }
    }
    Ok(report)
}
