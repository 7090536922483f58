use super::ops::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Worst relative error per named parameter.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Compares `analytic` gradients with central differences of `f`.
///
/// The error of one coordinate is `|analytic - numeric| / max(1, |numeric|)`.
/// `store` is perturbed in place and restored before returning.
pub fn grad_check_report<F>(
    store: &mut ParamStore,
    analytic: &[Tensor],
    h: f64,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    if analytic.len() != store.len() {
        return Err(Error::dim(
            "grad_check",
            format!("{} gradients for {} parameters", analytic.len(), store.len()),
        ));
    }
    let mut per_param = Vec::with_capacity(store.len());
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let grad = &analytic[id.index()];
        if grad.shape() != store.get(id).shape() {
            return Err(Error::dim(
                "grad_check",
                format!("gradient shape {:?} for {}", grad.shape(), store.name(id)),
            ));
        }
        let mut worst: f64 = 0.0;
        for k in 0..grad.len() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let plus = f(store);
            store.get_mut(id).data_mut()[k] = orig - h;
            let minus = f(store);
            store.get_mut(id).data_mut()[k] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective at {}[{k}] +/- {h}",
                    store.name(id)
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = (grad.data()[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
        per_param.push((store.name(id).to_string(), worst));
    }
    Ok(GradCheckReport { per_param })
}

/// Maximum relative error over every parameter coordinate.
pub fn grad_check<F>(store: &mut ParamStore, analytic: &[Tensor], h: f64, f: F) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    grad_check_report(store, analytic, h, f).map(|r| r.max_rel_error())
}
