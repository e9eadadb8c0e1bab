//! Exponential-family message algebra.
//!
//! Gaussian messages live in precision form `(Lambda, gamma = Lambda mu)` so an
//! uninformative message is exactly `Lambda = 0, gamma = 0`. Categorical
//! messages are normalized probability vectors indexed in constellation order.

use std::ops::AddAssign;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, Cholesky};

/// Weight floor applied before categorical division and to emitted symbol messages.
pub const CAT_FLOOR: f64 = 1e-30;

/// Relative PD threshold: a precision matrix counts as positive definite when
/// its Cholesky pivots exceed `PD_REL_EPS * trace / N`.
pub const PD_REL_EPS: f64 = 1e-12;

/// Eigenvalues at or below this fraction of the operand scale are treated as zero
/// when repairing a quotient precision.
const CLIP_REL_EPS: f64 = 1e-12;

/// Counters for numerical repairs. They never abort a computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Quotient precisions that had negative eigenvalues zeroed.
    pub psd_clips: u64,
    /// Moment-matched covariances regularized before inversion.
    pub degenerate_covariances: u64,
    /// Categorical products or likelihoods that vanished and fell back to uniform.
    pub categorical_underflows: u64,
}

impl AddAssign for Diagnostics {
    fn add_assign(&mut self, rhs: Self) {
        self.psd_clips += rhs.psd_clips;
        self.degenerate_covariances += rhs.degenerate_covariances;
        self.categorical_underflows += rhs.categorical_underflows;
    }
}

/// Complex Gaussian message in precision form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMessage {
    pub precision: CMat,
    pub shift: CVec,
}

impl GaussianMessage {
    pub fn uninformative(dim: usize) -> Self {
        Self { precision: CMat::zeros(dim), shift: CVec::zeros(dim) }
    }

    pub fn new(precision: CMat, shift: CVec) -> Self {
        assert_eq!(precision.dim(), shift.len(), "precision/shift dimension mismatch");
        Self { precision, shift }
    }

    /// Builds the message from moments; `cov` must be Hermitian positive definite.
    pub fn from_moments(mean: &CVec, cov: &CMat) -> Result<Self> {
        let chol = cov.cholesky(pd_threshold(cov)).ok_or(Error::UnboundedCovariance)?;
        let precision = chol.inverse();
        let shift = precision.mul_vec(mean);
        Ok(Self { precision, shift })
    }

    /// One-dimensional message with real precision `lam` and shift `gamma`.
    pub fn scalar(lam: f64, gamma: Complex64) -> Self {
        Self { precision: CMat::from_real_diag(&[lam]), shift: CVec::from_slice(&[gamma]) }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn is_uninformative(&self) -> bool {
        self.precision.is_zero() && self.shift.iter().all(|v| *v == Complex64::new(0.0, 0.0))
    }

    /// Checks Hermitian symmetry, positive semi-definiteness and that the
    /// shift lies in the range of the precision.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let lam = &self.precision;
        if !lam.is_finite() || !self.shift.is_finite() {
            return Err("non-finite parameters".into());
        }
        if lam.hermitian_defect() > 1e-10 {
            return Err(format!("precision not Hermitian (defect {:e})", lam.hermitian_defect()));
        }
        let scale = lam.frobenius();
        let eig = lam.hermitian_eigen();
        if eig.min_value() < -1e-10 * scale {
            return Err(format!("precision indefinite (min eigenvalue {:e})", eig.min_value()));
        }
        let gnorm = self.shift.norm_sqr().sqrt();
        if gnorm > 0.0 {
            let range_tol = CLIP_REL_EPS * scale.max(f64::MIN_POSITIVE);
            let in_range = eig.project(&self.shift, |v| v > range_tol);
            let off = (&self.shift - &in_range).norm_sqr().sqrt();
            if off > 1e-8 * gnorm {
                return Err(format!("shift outside precision range (residual {:e})", off / gnorm));
            }
        }
        Ok(())
    }
}

/// Cholesky pivot threshold used for "strictly positive definite" decisions.
pub fn pd_threshold(m: &CMat) -> f64 {
    let n = m.dim().max(1) as f64;
    PD_REL_EPS * (m.trace_re() / n).max(0.0)
}

/// Product of two Gaussian messages: precisions and shifts add.
///
/// # Panics
/// On dimension mismatch.
pub fn multiply(a: &GaussianMessage, b: &GaussianMessage) -> GaussianMessage {
    assert_eq!(a.dim(), b.dim(), "multiply: dimension mismatch");
    GaussianMessage { precision: &a.precision + &b.precision, shift: &a.shift + &b.shift }
}

/// Quotient `num / den` with the precision repaired to be PSD and the shift
/// projected onto the range of the repaired precision.
///
/// # Panics
/// On dimension mismatch.
pub fn divide(num: &GaussianMessage, den: &GaussianMessage, diag: &mut Diagnostics) -> GaussianMessage {
    assert_eq!(num.dim(), den.dim(), "divide: dimension mismatch");
    let precision = &num.precision - &den.precision;
    let shift = &num.shift - &den.shift;
    let scale = num.precision.frobenius().max(den.precision.frobenius());
    repair_quotient(precision, shift, scale, diag)
}

fn repair_quotient(precision: CMat, shift: CVec, scale: f64, diag: &mut Diagnostics) -> GaussianMessage {
    let n = precision.dim();
    let tol = CLIP_REL_EPS * scale;
    if n == 1 {
        let (lam, gamma) = repair_scalar(precision[(0, 0)].re, shift[0], tol, diag);
        return GaussianMessage::scalar(lam, gamma);
    }
    let precision = precision.hermitian_part();
    if precision.cholesky(tol).is_some() {
        return GaussianMessage { precision, shift };
    }
    let eig = precision.hermitian_eigen();
    if eig.min_value() < -tol {
        diag.psd_clips += 1;
    }
    let clipped = eig.reconstruct_with(|v| if v > tol { v } else { 0.0 });
    let projected = eig.project(&shift, |v| v > tol);
    GaussianMessage { precision: clipped, shift: projected }
}

/// Scalar quotient `(lam, gamma)` repaired like [`divide`]: a precision at or
/// below `tol` becomes uninformative.
pub(crate) fn repair_scalar(lam: f64, gamma: Complex64, tol: f64, diag: &mut Diagnostics) -> (f64, Complex64) {
    if lam > tol {
        return (lam, gamma);
    }
    if lam < -tol {
        diag.psd_clips += 1;
    }
    (0.0, Complex64::new(0.0, 0.0))
}

/// Scalar form of [`divide`].
pub(crate) fn divide_scalar(
    num: (f64, Complex64),
    den: (f64, Complex64),
    diag: &mut Diagnostics,
) -> (f64, Complex64) {
    let tol = CLIP_REL_EPS * num.0.abs().max(den.0.abs());
    repair_scalar(num.0 - den.0, num.1 - den.1, tol, diag)
}

/// Projects a Hermitian matrix onto the PSD cone by zeroing negative eigenvalues.
pub fn clip_psd(m: &CMat) -> Result<CMat> {
    if m.hermitian_defect() > 1e-10 {
        return Err(Error::Contract(format!(
            "clip_psd: input not Hermitian (defect {:e})",
            m.hermitian_defect()
        )));
    }
    let eig = m.hermitian_eigen();
    Ok(eig.reconstruct_with(|v| v.max(0.0)))
}

/// Mean and covariance of a message with strictly positive definite precision.
pub fn mean_cov(m: &GaussianMessage) -> Result<(CVec, CMat)> {
    let chol = precision_cholesky(&m.precision).ok_or(Error::UnboundedCovariance)?;
    Ok((chol.solve(&m.shift), chol.inverse()))
}

pub(crate) fn precision_cholesky(precision: &CMat) -> Option<Cholesky> {
    let thr = pd_threshold(precision);
    if thr <= 0.0 {
        return None;
    }
    precision.cholesky(thr)
}

/// How [`gaussian_density_at_zero`] treats a singular covariance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SingularPolicy {
    Reject,
    /// Infinite-variance limit: the density is a constant, reported as 1.
    UninformativeLimit,
}

/// Natural log of `CN(0; mean, cov) = exp(-mean^H cov^-1 mean) / (pi^N det cov)`.
pub fn log_gaussian_density_at_zero(mean: &CVec, cov: &CMat, policy: SingularPolicy) -> Result<f64> {
    assert_eq!(mean.len(), cov.dim(), "density: dimension mismatch");
    match cov.cholesky(pd_threshold(cov)) {
        Some(chol) => {
            let n = mean.len() as f64;
            let quad = mean.dot(&chol.solve(mean)).re;
            Ok(-quad - n * std::f64::consts::PI.ln() - chol.log_det())
        }
        None => match policy {
            SingularPolicy::UninformativeLimit => Ok(0.0),
            SingularPolicy::Reject => Err(Error::UnboundedCovariance),
        },
    }
}

pub fn gaussian_density_at_zero(mean: &CVec, cov: &CMat, policy: SingularPolicy) -> Result<f64> {
    log_gaussian_density_at_zero(mean, cov, policy).map(f64::exp)
}

/// One weighted component of a complex Gaussian mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: CVec,
    pub cov: CMat,
}

/// Moment-matched Gaussian of a mixture with normalized weights.
///
/// The covariance is accumulated in centered form, which is algebraically the
/// same as `sum w (mu mu^H + C) - zhat zhat^H` and stays PSD in floating point.
pub fn mixture_moment_match(components: &[MixtureComponent]) -> Result<(CVec, CMat)> {
    let first = components
        .first()
        .ok_or_else(|| Error::Contract("mixture_moment_match: empty mixture".into()))?;
    let n = first.mean.len();
    let mut mean = CVec::zeros(n);
    for c in components {
        mean += &c.mean.scale_real(c.weight);
    }
    let mut cov = CMat::zeros(n);
    for c in components {
        if c.weight == 0.0 {
            continue;
        }
        let d = &c.mean - &mean;
        cov += &(&c.cov + &d.outer()).scale_real(c.weight);
    }
    Ok((mean, cov.hermitian_part()))
}

pub type Weights = SmallVec<[f64; 16]>;

/// Normalized probability vector over an ordered constellation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalMessage {
    weights: Weights,
}

impl CategoricalMessage {
    pub fn uniform(size: usize) -> Self {
        assert!(size > 0, "empty support");
        Self { weights: smallvec::smallvec![1.0 / size as f64; size] }
    }

    /// Normalizes nonnegative weights. A vanishing or non-finite total yields
    /// uniform and bumps the underflow counter.
    pub fn from_weights(weights: &[f64], diag: &mut Diagnostics) -> Self {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            diag.categorical_underflows += 1;
            return Self::uniform(weights.len());
        }
        Self { weights: weights.iter().map(|w| w / total).collect() }
    }

    /// Normalizes weights given in the log domain.
    pub fn from_log_weights(log_weights: &[f64], diag: &mut Diagnostics) -> Self {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            diag.categorical_underflows += 1;
            return Self::uniform(log_weights.len());
        }
        let w: Weights = log_weights.iter().map(|l| (l - max).exp()).collect();
        Self::from_weights(&w, diag)
    }

    /// Adopts already-normalized weights verbatim, rejecting anything that is
    /// not a probability vector.
    pub fn from_normalized(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Contract("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { weights: weights.iter().copied().collect() })
    }

    /// Raises every weight to at least [`CAT_FLOOR`] and renormalizes.
    pub fn floored(mut self) -> Self {
        if self.weights.iter().any(|&w| w < CAT_FLOOR) {
            for w in self.weights.iter_mut() {
                *w = w.max(CAT_FLOOR);
            }
            let total: f64 = self.weights.iter().sum();
            for w in self.weights.iter_mut() {
                *w /= total;
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    pub fn l1_distance(&self, other: &CategoricalMessage) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Normalized elementwise product.
///
/// Intermediate products are rescaled by their maximum after every factor so
/// long products of small weights do not underflow.
pub fn cat_multiply<'a, I>(msgs: I, diag: &mut Diagnostics) -> CategoricalMessage
where
    I: IntoIterator<Item = &'a CategoricalMessage>,
{
    let mut iter = msgs.into_iter();
    let first = iter.next().expect("cat_multiply: no messages");
    let mut acc: Weights = first.weights.clone();
    for m in iter {
        assert_eq!(m.len(), acc.len(), "cat_multiply: support mismatch");
        for (a, b) in acc.iter_mut().zip(&m.weights) {
            *a *= b;
        }
        let max = acc.iter().copied().fold(0.0, f64::max);
        if max > 0.0 && max.is_finite() {
            for a in acc.iter_mut() {
                *a /= max;
            }
        }
    }
    CategoricalMessage::from_weights(&acc, diag)
}

/// Normalized elementwise quotient with the denominator floored at [`CAT_FLOOR`].
pub fn cat_divide(num: &CategoricalMessage, den: &CategoricalMessage, diag: &mut Diagnostics) -> CategoricalMessage {
    assert_eq!(num.len(), den.len(), "cat_divide: support mismatch");
    let q: Weights = num.weights.iter().zip(&den.weights).map(|(n, d)| n / d.max(CAT_FLOOR)).collect();
    CategoricalMessage::from_weights(&q, diag)
}
