//! Single-antenna specializations of the kernels in `kernels`.
//!
//! Same formulas on plain scalars; results agree with the matrix path to
//! rounding. A message is `(lambda, gamma)` with real precision `lambda`.

use num_complex::Complex64;
use smallvec::SmallVec;

use crate::gaussian::{divide_scalar, CategoricalMessage, Diagnostics, GaussianMessage, Weights, PD_REL_EPS};
use crate::scenario::Constellation;

pub(crate) type Scalar = (f64, Complex64);

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub(crate) fn parts(m: &GaussianMessage) -> Scalar {
    (m.precision[(0, 0)].re, m.shift[0])
}

pub(crate) fn message(s: Scalar) -> GaussianMessage {
    GaussianMessage::scalar(s.0, s.1)
}

/// `v` if strictly positive, else the floor used for regularized matrices.
fn regularized(v: f64, diag: &mut Diagnostics) -> f64 {
    if v > PD_REL_EPS * v.max(0.0) {
        v
    } else {
        diag.degenerate_covariances += 1;
        f64::MIN_POSITIVE.sqrt()
    }
}

struct Terms {
    means: SmallVec<[Complex64; 16]>,
    covs: Weights,
    log_w: Weights,
}

fn terms(constellation: &Constellation, h: Scalar, z: Scalar, diag: &mut Diagnostics) -> Terms {
    let z_flat = z.0 == 0.0 && z.1 == ZERO;
    // Per amplitude `a`: (C_tilde, ln a + ln det P).
    let mut per_amp: SmallVec<[(f64, f64); 4]> = SmallVec::new();
    for &a in constellation.amplitudes() {
        let info = regularized(z.0 + h.0 * (1.0 / a), diag);
        per_amp.push((1.0 / info, if z_flat { 0.0 } else { a.ln() + info.ln() }));
    }
    let mut out = Terms { means: SmallVec::new(), covs: Weights::new(), log_w: Weights::new() };
    for (s, inv) in constellation.inverse_conjugates().iter().enumerate() {
        let (cov, offset) = per_amp[constellation.amplitude_index(s)];
        let b = z.1 + h.1 * inv;
        out.means.push(b * cov);
        out.covs.push(cov);
        out.log_w.push(if z_flat { 0.0 } else { b.norm_sqr() * cov - offset });
    }
    out
}

/// Mixture weights `omega ∝ m_x(x) w(x)`. Falls back to the log domain when
/// the direct product underflows.
fn omega(x_in: &CategoricalMessage, log_w: &[f64], diag: &mut Diagnostics) -> CategoricalMessage {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        let w: Weights = x_in.weights().iter().zip(log_w).map(|(q, lw)| q * (lw - max).exp()).collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 && total.is_finite() {
            return CategoricalMessage::from_weights(&w, diag);
        }
    }
    let logs: Weights = x_in.weights().iter().zip(log_w).map(|(q, lw)| q.ln() + lw).collect();
    CategoricalMessage::from_log_weights(&logs, diag)
}

/// Moment-matched `(mean, var)` of a scalar Gaussian mixture, in precision form.
fn project(weights: &[f64], means: impl Iterator<Item = (Complex64, f64)> + Clone, diag: &mut Diagnostics) -> Scalar {
    let mean: Complex64 = weights.iter().zip(means.clone()).map(|(w, (m, _))| m * *w).sum();
    let var: f64 = weights
        .iter()
        .zip(means)
        .filter(|(w, _)| **w != 0.0)
        .map(|(w, (m, c))| (c + (m - mean).norm_sqr()) * w)
        .sum();
    let lam = 1.0 / regularized(var, diag);
    (lam, mean * lam)
}

pub(crate) fn psi1_to_z(
    constellation: &Constellation,
    h: Scalar,
    z: Scalar,
    x_in: &CategoricalMessage,
    diag: &mut Diagnostics,
) -> Scalar {
    let t = terms(constellation, h, z, diag);
    let w = omega(x_in, &t.log_w, diag);
    let proj = project(w.weights(), t.means.iter().copied().zip(t.covs.iter().copied()), diag);
    divide_scalar(proj, z, diag)
}

pub(crate) fn psi1_to_h(
    constellation: &Constellation,
    h: Scalar,
    z: Scalar,
    x_in: &CategoricalMessage,
    diag: &mut Diagnostics,
) -> Scalar {
    let t = terms(constellation, h, z, diag);
    let w = omega(x_in, &t.log_w, diag);
    let comps = constellation
        .points()
        .iter()
        .zip(t.means.iter().zip(&t.covs))
        .map(|(x, (m, c))| (m / x, c / x.norm_sqr()));
    let proj = project(w.weights(), comps, diag);
    divide_scalar(proj, h, diag)
}

pub(crate) fn psi1_to_x(constellation: &Constellation, h: Scalar, z: Scalar, diag: &mut Diagnostics) -> CategoricalMessage {
    if z.0 == 0.0 && z.1 == ZERO {
        return CategoricalMessage::uniform(constellation.len());
    }
    let t = terms(constellation, h, z, diag);
    CategoricalMessage::from_log_weights(&t.log_w, diag).floored()
}

/// Scalar interference cancellation; see `kernels::psi0_to_z`.
pub(crate) fn psi0_to_z(y: Complex64, inputs: &[Scalar], noise_var: f64, diag: &mut Diagnostics) -> Vec<GaussianMessage> {
    // (mean sum, variance sum, unbounded count)
    type Acc = (Complex64, f64, usize);
    let push = |acc: Acc, m: &Scalar| -> Acc {
        if m.0 > PD_REL_EPS * m.0 {
            (acc.0 + m.1 / m.0, acc.1 + 1.0 / m.0, acc.2)
        } else {
            (acc.0, acc.1, acc.2 + 1)
        }
    };
    let k = inputs.len();
    let mut suffix = vec![(ZERO, 0.0, 0); k + 1];
    for j in (0..k).rev() {
        suffix[j] = push(suffix[j + 1], &inputs[j]);
    }
    let mut prefix: Acc = (ZERO, 0.0, 0);
    let mut out = Vec::with_capacity(k);
    for (kk, m) in inputs.iter().enumerate() {
        let b = suffix[kk + 1];
        out.push(if prefix.2 + b.2 > 0 {
            GaussianMessage::uninformative(1)
        } else {
            let var = noise_var + prefix.1 + b.1;
            let mean = y - prefix.0 - b.0;
            if var > PD_REL_EPS * var {
                message((1.0 / var, mean / var))
            } else {
                diag.degenerate_covariances += 1;
                GaussianMessage::uninformative(1)
            }
        });
        prefix = push(prefix, m);
    }
    out
}

/// Leave-one-out sums `prior + sum_{s != t} msgs[s]` for every `t`.
pub(crate) fn leave_one_out(prior: Scalar, msgs: &[GaussianMessage]) -> Vec<GaussianMessage> {
    let t_len = msgs.len();
    let mut suffix = vec![(0.0, ZERO); t_len + 1];
    for t in (0..t_len).rev() {
        let m = parts(&msgs[t]);
        suffix[t] = (m.0 + suffix[t + 1].0, m.1 + suffix[t + 1].1);
    }
    let mut prefix = prior;
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        out.push(message((prefix.0 + suffix[t + 1].0, prefix.1 + suffix[t + 1].1)));
        let m = parts(&msgs[t]);
        prefix = (prefix.0 + m.0, prefix.1 + m.1);
    }
    out
}
