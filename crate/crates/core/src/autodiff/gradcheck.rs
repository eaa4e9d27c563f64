//! Central finite-difference verification of reverse-mode gradients.

use rand::Rng as _;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct FdSample {
    pub index: usize,
    pub segment: String,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
    /// Central differences at `h` and `h/2` disagree at better than second
    /// order, i.e. the loss is not smooth around this coordinate.
    pub kink: bool,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    /// Max over every sampled coordinate.
    pub max_relative_error: f64,
    /// Max over coordinates not flagged as kinks.
    pub max_relative_error_smooth: f64,
    pub samples: Vec<FdSample>,
}

impl FdReport {
    pub fn kink_count(&self) -> usize {
        self.samples.iter().filter(|s| s.kink).count()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, 1e-12)
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients against central differences on
/// `sample_count` coordinates.
///
/// `loss_fn(params, with_grad)` returns the loss; when `with_grad` is true it
/// must also leave `d loss / d params` in `params.grads()`. Coordinates are
/// drawn by first picking a segment uniformly, then an entry within it.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &mut ParamStore,
    sample_count: usize,
    h: f64,
    rng: &mut Rng,
) -> Result<FdReport>
where
    F: FnMut(&mut ParamStore, bool) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let base = loss_fn(params, true)?;
    let analytic = params.grads().to_vec();
    let again = loss_fn(params, false)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministicLoss {
            first: base,
            second: again,
        });
    }

    let indices = pick_indices(params, sample_count, rng);
    let roundoff = 1e3 * f64::EPSILON * base.abs().max(1.0);
    // Roundoff in a central difference is ~eps*|L|/h; a relative error of
    // 1e-4 is only meaningful for derivatives 1e4 times above that.
    let noise_floor = 1e4 * f64::EPSILON * base.abs().max(1.0) / h;
    let mut central = |params: &mut ParamStore, i: usize, step: f64| -> Result<f64> {
        let orig = params.values()[i];
        params.values_mut()[i] = orig + step;
        let up = loss_fn(params, false)?;
        params.values_mut()[i] = orig - step;
        let down = loss_fn(params, false)?;
        params.values_mut()[i] = orig;
        Ok((up - down) / (2.0 * step))
    };

    let mut samples = Vec::with_capacity(indices.len());
    for i in indices {
        let numeric = central(params, i, h)?;
        let half = central(params, i, 0.5 * h)?;
        let d1 = (numeric - half).abs();
        let kink = if d1 > roundoff / h {
            // Smooth losses shrink the gap fourfold per halving.
            let quarter = central(params, i, 0.25 * h)?;
            let d2 = (half - quarter).abs();
            d1 < 3.0 * d2
        } else {
            false
        };
        let segment = params
            .segment_of(i)
            .map(|s| s.name.clone())
            .unwrap_or_default();
        samples.push(FdSample {
            index: i,
            segment,
            analytic: analytic[i],
            numeric,
            relative_error: relative_error_floored(analytic[i], numeric, noise_floor),
            kink,
        });
    }
    let max_relative_error = samples.iter().map(|s| s.relative_error).fold(0.0, f64::max);
    let max_relative_error_smooth = samples
        .iter()
        .filter(|s| !s.kink)
        .map(|s| s.relative_error)
        .fold(0.0, f64::max);
    // restore the analytic gradients for the caller
    params.grads_mut().copy_from_slice(&analytic);
    Ok(FdReport {
        max_relative_error,
        max_relative_error_smooth,
        samples,
    })
}

fn pick_indices(params: &ParamStore, count: usize, rng: &mut Rng) -> Vec<usize> {
    let total = params.len();
    if count >= total {
        return (0..total).collect();
    }
    let segs: Vec<_> = params.segments().iter().filter(|s| s.len > 0).collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < count * 100 {
        attempts += 1;
        let seg = segs[rng.random_range(0..segs.len())];
        let i = seg.offset + rng.random_range(0..seg.len);
        if seen.insert(i) {
            out.push(i);
        }
    }
    out
}
