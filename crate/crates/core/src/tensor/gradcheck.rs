use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{LealError, Result};

/// Outcome of a parameter-wide finite-difference check.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |analytic|)` over all checked coordinates.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    /// L2 norm of the analytic gradient of each checked parameter.
    pub grad_norms: Vec<(String, f64)>,
}

fn eval_scalar(out: &Tape, v: Var) -> Result<f64> {
    let t = out.value(v);
    if t.numel() != 1 {
        return Err(LealError::NotScalar(t.shape().to_vec()));
    }
    let y = t.item();
    if !y.is_finite() {
        return Err(LealError::NonFinite("objective is not finite near the check point".into()));
    }
    Ok(y)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(LealError::Config(format!("eps must lie in (0, 1e-3], got {eps}")));
    }
    Ok(())
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares the tape gradient of scalar `f` at `x` against central differences.
/// Returns the maximum relative error over coordinates.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check_eps(eps)?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let out = f(&mut tape, xv)?;
    eval_scalar(&tape, out)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |pt: Tensor| -> Result<f64> {
        let mut t = Tape::no_grad();
        let v = t.leaf(pt, false);
        let o = f(&mut t, v)?;
        eval_scalar(&t, o)
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Finite-difference check of `f` with respect to every parameter in `ids`
/// (all parameters when `None`).
pub fn grad_check_params<F>(
    store: &ParamStore,
    f: F,
    eps: f64,
    ids: Option<&[ParamId]>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    check_eps(eps)?;
    let ids: Vec<ParamId> = match ids {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    eval_scalar(&tape, out)?;
    tape.backward(out)?;
    let grads = tape.param_grads();
    let analytic = |id: ParamId| {
        grads
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    };

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        grad_norms: Vec::new(),
    };
    for id in ids {
        let a = analytic(id);
        report.grad_norms.push((
            store.name(id).to_string(),
            a.data().iter().map(|v| v * v).sum::<f64>().sqrt(),
        ));
        for i in 0..a.numel() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let mut t = Tape::no_grad();
            let o = f(&mut t, &work)?;
            let up = eval_scalar(&t, o)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let mut t = Tape::no_grad();
            let o = f(&mut t, &work)?;
            let down = eval_scalar(&t, o)?;
            work.get_mut(id).data_mut()[i] = orig;

            let e = rel_err(a.data()[i], (up - down) / (2.0 * eps));
            report.checked += 1;
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst_param = store.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
