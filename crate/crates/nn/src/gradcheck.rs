use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shtrans_core::Result;

use crate::model::{PreparedExample, TtNet};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Gradient magnitude below which errors are measured absolutely. Central
/// differences of an O(1) loss in f64 resolve gradients to about 1e-11, so
/// relative errors of smaller entries measure round-off, not the backward pass.
pub const GRAD_FLOOR: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the backward pass against central differences of the loss for
/// `count` parameters drawn with `seed`.
pub fn grad_check(model: &TtNet, ex: &PreparedExample, count: usize, linear: bool, seed: u64) -> Result<Vec<GradCheck>> {
    let (_, grad) = model.loss_and_grad(ex, linear)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, model.params.len(), count.min(model.params.len()));
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(picks.len());
    for i in picks {
        let orig = probe.params.values()[i];
        let mut eval = |v: f64| -> Result<f64> {
            probe.params.values_mut()[i] = v;
            Ok(probe.loss_and_grad(ex, linear)?.0)
        };
        let plus = eval(orig + FD_STEP)?;
        let minus = eval(orig - FD_STEP)?;
        probe.params.values_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        out.push(GradCheck {
            index: i,
            analytic: grad[i],
            numeric,
            rel_err: relative_error(grad[i], numeric, GRAD_FLOOR),
        });
    }
    Ok(out)
}

pub fn max_rel_err(checks: &[GradCheck]) -> f64 {
    checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
}
