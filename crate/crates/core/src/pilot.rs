//! Pilot-based Bayesian MMSE channel estimation.
//!
//! The per-user posterior blocks become the constant channel prior messages of
//! the JCD factor graph.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gaussian::GaussianMessage;
use crate::linalg::{CMat, CVec};
use crate::scenario::{Scenario, TransmissionBatch};

/// Posterior of one `h_lk` given the pilots.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorEntry {
    pub mean: CVec,
    pub cov: CMat,
}

/// Per-(AP, UE) channel posteriors, indexed `l * K + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelPrior {
    pub num_ues: usize,
    pub entries: Vec<PriorEntry>,
}

impl ChannelPrior {
    /// Estimates every AP's channels from its pilot block.
    pub fn estimate(scenario: &Scenario, batch: &TransmissionBatch) -> Result<Self> {
        let mut entries = Vec::with_capacity(scenario.num_aps * scenario.num_ues);
        for l in 0..scenario.num_aps {
            entries.extend(orthogonal_fast_path(
                &batch.pilot_obs[l],
                &scenario.pilots,
                &scenario.dense_covariance(l),
                scenario.noise_var,
            )?);
        }
        Ok(Self { num_ues: scenario.num_ues, entries })
    }

    /// Near-delta priors at the true channel, used by the perfect-CSI receiver.
    pub fn perfect(truth: &[CVec], num_ues: usize, variance: f64) -> Self {
        let entries = truth
            .iter()
            .map(|h| PriorEntry { mean: h.clone(), cov: CMat::scaled_identity(h.len(), variance) })
            .collect();
        Self { num_ues, entries }
    }

    pub fn entry(&self, l: usize, k: usize) -> &PriorEntry {
        &self.entries[l * self.num_ues + k]
    }

    /// Precision-form messages for the factor graph.
    pub fn to_messages(&self) -> Result<Vec<GaussianMessage>> {
        self.entries.iter().map(|e| GaussianMessage::from_moments(&e.mean, &e.cov)).collect()
    }
}

/// `C = (Xi^-1 + A^H A / sigma^2)^-1`, `mu = C A^H vec(Y_p) / sigma^2` with
/// `A = X_p^T kron I_N`, returned as per-user diagonal blocks.
///
/// `y_p` is N x P, `pilots` is K x P and `xi` is the NK x NK channel covariance.
pub fn mmse_estimate(
    y_p: &DMatrix<Complex64>,
    pilots: &DMatrix<Complex64>,
    xi: &DMatrix<Complex64>,
    noise_var: f64,
) -> Result<Vec<PriorEntry>> {
    let (n, p, k) = check_shapes(y_p, pilots, xi, noise_var)?;
    let nk = n * k;
    let a = DMatrix::from_fn(n * p, nk, |row, col| {
        let (pp, nn) = (row / n, row % n);
        let (kk, mm) = (col / n, col % n);
        if nn == mm {
            pilots[(kk, pp)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let xi_inv = xi
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Contract("mmse_estimate: channel covariance is not positive definite".into()))?
        .inverse();
    let inv_s2 = 1.0 / noise_var;
    let a_h = a.adjoint();
    let info = xi_inv + (&a_h * &a) * Complex64::new(inv_s2, 0.0);
    let info = (&info + info.adjoint()) * Complex64::new(0.5, 0.0);
    let chol = info
        .cholesky()
        .ok_or_else(|| Error::Contract("mmse_estimate: posterior information matrix is singular".into()))?;
    let cov = chol.inverse();
    let vec_y = DMatrix::from_fn(n * p, 1, |row, _| y_p[(row % n, row / n)]);
    let mean = chol.solve(&(&a_h * vec_y)) * Complex64::new(inv_s2, 0.0);
    Ok((0..k)
        .map(|kk| PriorEntry {
            mean: CVec::from_fn(n, |i| mean[(kk * n + i, 0)]),
            cov: CMat::from_fn(n, |i, j| cov[(kk * n + i, kk * n + j)]).hermitian_part(),
        })
        .collect())
}

/// Same output as [`mmse_estimate`], solving one N x N system per user when
/// `X_p X_p^H` is diagonal and `Xi` block-diagonal; otherwise falls back.
pub fn orthogonal_fast_path(
    y_p: &DMatrix<Complex64>,
    pilots: &DMatrix<Complex64>,
    xi: &DMatrix<Complex64>,
    noise_var: f64,
) -> Result<Vec<PriorEntry>> {
    let (n, p, k) = check_shapes(y_p, pilots, xi, noise_var)?;
    let gram = pilots * pilots.adjoint();
    let max_diag = (0..k).map(|i| gram[(i, i)].re).fold(0.0, f64::max);
    let off_diag = (0..k).any(|i| (0..k).any(|j| i != j && gram[(i, j)].norm() > 1e-12 * max_diag));
    let off_block = (0..n * k).any(|r| (0..n * k).any(|c| r / n != c / n && xi[(r, c)].norm() != 0.0));
    if off_diag || off_block {
        return mmse_estimate(y_p, pilots, xi, noise_var);
    }
    let inv_s2 = 1.0 / noise_var;
    let mut out = Vec::with_capacity(k);
    for kk in 0..k {
        let block = CMat::from_fn(n, |i, j| xi[(kk * n + i, kk * n + j)]);
        let block_inv = block
            .cholesky(0.0)
            .ok_or_else(|| Error::Contract("mmse_estimate: channel covariance is not positive definite".into()))?
            .inverse();
        let info = &block_inv + &CMat::scaled_identity(n, gram[(kk, kk)].re * inv_s2);
        let chol = info
            .cholesky(0.0)
            .ok_or_else(|| Error::Contract("mmse_estimate: posterior information matrix is singular".into()))?;
        let matched = CVec::from_fn(n, |i| (0..p).map(|pp| pilots[(kk, pp)].conj() * y_p[(i, pp)]).sum());
        out.push(PriorEntry { mean: chol.solve(&matched).scale_real(inv_s2), cov: chol.inverse() });
    }
    Ok(out)
}

fn check_shapes(
    y_p: &DMatrix<Complex64>,
    pilots: &DMatrix<Complex64>,
    xi: &DMatrix<Complex64>,
    noise_var: f64,
) -> Result<(usize, usize, usize)> {
    let (n, p) = y_p.shape();
    let k = pilots.nrows();
    if p == 0 || pilots.ncols() != p || xi.shape() != (n * k, n * k) {
        return Err(Error::Contract(format!(
            "mmse_estimate: shapes Y_p {:?}, X_p {:?}, Xi {:?} are inconsistent",
            y_p.shape(),
            pilots.shape(),
            xi.shape()
        )));
    }
    if !(noise_var > 0.0) {
        return Err(Error::Contract("mmse_estimate: noise variance must be positive".into()));
    }
    Ok((n, p, k))
}
