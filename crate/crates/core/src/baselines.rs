//! Reference receivers: centralized linear MMSE detection on pilot-based
//! channel estimates, and the pilot-only channel estimate.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CVec;
use crate::metrics::{nmse, weak_link_filter};
use crate::pilot::ChannelPrior;
use crate::scenario::{Constellation, Scenario};

/// Stacks per-AP `N x T` blocks into one `LN x T` matrix.
pub fn stack_observations(blocks: &[DMatrix<Complex64>]) -> DMatrix<Complex64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Stacks channel means `l * K + k` into the `LN x K` matrix.
pub fn stack_channels(means: &[CVec], num_ues: usize) -> DMatrix<Complex64> {
    let n = means.first().map_or(0, CVec::len);
    let num_aps = if num_ues == 0 { 0 } else { means.len() / num_ues };
    DMatrix::from_fn(num_aps * n, num_ues, |r, k| means[(r / n) * num_ues + k][r % n])
}

/// Soft estimates `p H^H (p H H^H + sigma^2 I)^-1 Y`, computed in the
/// equivalent K x K form `(H^H H + sigma^2/p I)^-1 H^H Y`.
pub fn lmmse_filter_output(
    y: &DMatrix<Complex64>,
    h: &DMatrix<Complex64>,
    noise_var: f64,
    tx_power: f64,
) -> Result<DMatrix<Complex64>> {
    if y.nrows() != h.nrows() {
        return Err(Error::Contract(format!(
            "observations have {} rows, channel has {}",
            y.nrows(),
            h.nrows()
        )));
    }
    if !(tx_power > 0.0) {
        return Err(Error::Contract("transmit power must be positive".into()));
    }
    let k = h.ncols();
    let hh = h.adjoint();
    let gram = &hh * h + DMatrix::<Complex64>::identity(k, k).scale(noise_var / tx_power);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Contract("LMMSE system is singular; noise variance must be positive".into()))?;
    Ok(chol.solve(&(&hh * y)))
}

/// Hard decisions, indexed `k * T + t`.
pub fn centralized_lmmse_detect(
    y: &DMatrix<Complex64>,
    h: &DMatrix<Complex64>,
    noise_var: f64,
    tx_power: f64,
    constellation: &Constellation,
) -> Result<Vec<usize>> {
    let soft = lmmse_filter_output(y, h, noise_var, tx_power)?;
    let (k, t) = soft.shape();
    Ok((0..k * t).map(|i| constellation.nearest(soft[(i / t, i % t)])).collect())
}

/// NMSE of the pilot-only channel estimate per link `l * K + k`; weak links
/// give `None`.
pub fn pilot_only_nmse_reference(scenario: &Scenario, priors: &ChannelPrior, truth: &[CVec]) -> Vec<Option<f64>> {
    priors
        .entries
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (e, h))| {
            let (l, k) = (i / priors.num_ues, i % priors.num_ues);
            if weak_link_filter(scenario, l, k) {
                None
            } else {
                nmse(&e.mean, h)
            }
        })
        .collect()
}
