//! Factor-to-variable update rules at a single bilinear factor `z = x h`.
//!
//! Every rule here is undamped and stateless: it maps the variable-to-factor
//! messages arriving at the factor to a fresh outgoing message.

use num_complex::Complex64;
use smallvec::SmallVec;

use crate::gaussian::{
    divide, mixture_moment_match, pd_threshold, CategoricalMessage, Diagnostics, GaussianMessage,
    MixtureComponent, Weights, PD_REL_EPS,
};
use crate::linalg::{CMat, CVec, Cholesky};
use crate::scenario::Constellation;

use super::scalar;

/// Per-symbol pieces of the product `m_z(z) * CN(z; x mu_h, |x|^2 C_h)`.
///
/// For symbol `x` with `a = |x|^2` the product is proportional to
/// `CN(z; mu_tilde(x), C_tilde(a)) * w(x)` where
/// `C_tilde(a) = (Lambda_z + Lambda_h / a)^-1`,
/// `mu_tilde(x) = C_tilde(a) (gamma_z + gamma_h / conj(x))` and `w(x)` is
/// `CN(0; mu_z - x mu_h, C_z + a C_h)` up to a factor independent of `x`.
/// Working in canonical form keeps `w` defined when `Lambda_z` is singular;
/// an uninformative z-message makes `w` exactly constant.
pub(crate) struct SymbolTerms {
    pub means: SmallVec<[CVec; 16]>,
    /// `C_tilde` per symbol, shared between symbols of equal amplitude.
    pub covs: SmallVec<[CMat; 16]>,
    pub log_w: Weights,
}

pub(crate) fn symbol_terms(
    constellation: &Constellation,
    h_in: &GaussianMessage,
    z_in: &GaussianMessage,
    group_by_amplitude: bool,
    diag: &mut Diagnostics,
) -> SymbolTerms {
    let points = constellation.points();
    let n = h_in.dim() as f64;
    let z_flat = z_in.is_uninformative();
    let mut cache: SmallVec<[Option<(Cholesky, CMat, f64)>; 4]> =
        SmallVec::from_elem(None, constellation.amplitudes().len());

    let mut means = SmallVec::new();
    let mut covs = SmallVec::new();
    let mut log_w = Weights::new();
    for (s, x) in points.iter().enumerate() {
        let a = x.norm_sqr();
        let g = constellation.amplitude_index(s);
        if !group_by_amplitude || cache[g].is_none() {
            let info = &z_in.precision + &h_in.precision.scale_real(1.0 / a);
            let chol = regularized_cholesky(&info, diag);
            let cov = chol.inverse();
            let log_det = chol.log_det();
            cache[g] = Some((chol, cov, log_det));
        }
        let (chol, cov, log_det) = cache[g].as_ref().expect("filled above");
        let b = &z_in.shift + &h_in.shift.scale(Complex64::new(1.0, 0.0) / x.conj());
        let mean = chol.solve(&b);
        let lw = if z_flat { 0.0 } else { -n * a.ln() - log_det + b.dot(&mean).re };
        means.push(mean);
        covs.push(cov.clone());
        log_w.push(lw);
    }
    SymbolTerms { means, covs, log_w }
}

/// Cholesky of a Hermitian matrix that should be PD; on failure the spectrum
/// is floored at the PD threshold and the repair is counted.
fn regularized_cholesky(m: &CMat, diag: &mut Diagnostics) -> Cholesky {
    let thr = pd_threshold(m);
    if let Some(c) = m.cholesky(thr) {
        return c;
    }
    diag.degenerate_covariances += 1;
    let eig = m.hermitian_eigen();
    let scale = eig.values.iter().copied().fold(0.0, f64::max);
    let floor = (PD_REL_EPS * scale).max(f64::MIN_POSITIVE.sqrt());
    eig.reconstruct_with(|v| v.max(floor))
        .cholesky(0.0)
        .expect("spectrum floored above zero")
}

/// Moment-matched Gaussian `(mean, cov)` converted to precision form, with a
/// degenerate covariance floored before inversion.
fn project(mean: &CVec, cov: &CMat, diag: &mut Diagnostics) -> GaussianMessage {
    let chol = regularized_cholesky(cov, diag);
    let precision = chol.inverse();
    let shift = precision.mul_vec(mean);
    GaussianMessage { precision, shift }
}

/// Normalized mixture weights `omega(x) ∝ m_x(x) w(x)`.
fn mixture_weights(x_in: &CategoricalMessage, log_w: &[f64], diag: &mut Diagnostics) -> Weights {
    let logs: Weights = x_in.weights().iter().zip(log_w).map(|(q, lw)| q.ln() + lw).collect();
    CategoricalMessage::from_log_weights(&logs, diag).weights().iter().copied().collect()
}

/// New `m_{Psi1 -> z}`: project the symbol mixture onto a Gaussian and divide
/// out the incoming z-message.
pub(crate) fn psi1_to_z(
    constellation: &Constellation,
    h_in: &GaussianMessage,
    z_in: &GaussianMessage,
    x_in: &CategoricalMessage,
    group_by_amplitude: bool,
    diag: &mut Diagnostics,
) -> GaussianMessage {
    if group_by_amplitude && h_in.dim() == 1 {
        return scalar::message(scalar::psi1_to_z(
            constellation,
            scalar::parts(h_in),
            scalar::parts(z_in),
            x_in,
            diag,
        ));
    }
    let terms = symbol_terms(constellation, h_in, z_in, group_by_amplitude, diag);
    let omega = mixture_weights(x_in, &terms.log_w, diag);
    let components: SmallVec<[MixtureComponent; 16]> = omega
        .iter()
        .zip(terms.means.iter().zip(&terms.covs))
        .map(|(&w, (m, c))| MixtureComponent { weight: w, mean: m.clone(), cov: c.clone() })
        .collect();
    let (zhat, sigma) = mixture_moment_match(&components).expect("constellation is nonempty");
    divide(&project(&zhat, &sigma, diag), z_in, diag)
}

/// New `m_{Psi1 -> h}`: conditioned on `x`, `h = z / x`, so the mixture
/// components are `(mu_tilde(x) / x, C_tilde / |x|^2)`.
pub(crate) fn psi1_to_h(
    constellation: &Constellation,
    h_in: &GaussianMessage,
    z_in: &GaussianMessage,
    x_in: &CategoricalMessage,
    group_by_amplitude: bool,
    diag: &mut Diagnostics,
) -> GaussianMessage {
    if group_by_amplitude && h_in.dim() == 1 {
        return scalar::message(scalar::psi1_to_h(
            constellation,
            scalar::parts(h_in),
            scalar::parts(z_in),
            x_in,
            diag,
        ));
    }
    let terms = symbol_terms(constellation, h_in, z_in, group_by_amplitude, diag);
    let omega = mixture_weights(x_in, &terms.log_w, diag);
    let points = constellation.points();
    let components: SmallVec<[MixtureComponent; 16]> = omega
        .iter()
        .enumerate()
        .map(|(s, &w)| {
            let x = points[s];
            MixtureComponent {
                weight: w,
                mean: terms.means[s].scale(Complex64::new(1.0, 0.0) / x),
                cov: terms.covs[s].scale_real(1.0 / x.norm_sqr()),
            }
        })
        .collect();
    let (hhat, sigma) = mixture_moment_match(&components).expect("constellation is nonempty");
    divide(&project(&hhat, &sigma, diag), h_in, diag)
}

/// New `m_{Psi1 -> x}`, proportional to `CN(0; mu_z - x mu_h, C_z + |x|^2 C_h)`.
pub(crate) fn psi1_to_x(
    constellation: &Constellation,
    h_in: &GaussianMessage,
    z_in: &GaussianMessage,
    group_by_amplitude: bool,
    diag: &mut Diagnostics,
) -> CategoricalMessage {
    if z_in.is_uninformative() {
        return CategoricalMessage::uniform(constellation.len());
    }
    if group_by_amplitude && h_in.dim() == 1 {
        return scalar::psi1_to_x(constellation, scalar::parts(h_in), scalar::parts(z_in), diag);
    }
    let terms = symbol_terms(constellation, h_in, z_in, group_by_amplitude, diag);
    CategoricalMessage::from_log_weights(&terms.log_w, diag).floored()
}

/// `m_{Psi0 -> z}` for every user at one (AP, channel use): interference
/// cancellation with `C = sigma^2 I + sum_{j != k} C_j`, `mu = y - sum_{j != k} mu_j`.
///
/// Leave-one-out sums use prefix and suffix accumulation, so no large term
/// is ever subtracted back out. A user whose interferers include an unbounded
/// message receives an uninformative message.
pub(crate) fn psi0_to_z(
    y: &CVec,
    psi1_to_z: &[&GaussianMessage],
    noise_var: f64,
    diag: &mut Diagnostics,
) -> Vec<GaussianMessage> {
    let k = psi1_to_z.len();
    let n = y.len();
    let moments: Vec<Option<(CVec, CMat)>> =
        psi1_to_z.iter().map(|m| crate::gaussian::mean_cov(m).ok()).collect();

    #[derive(Clone)]
    struct Acc {
        mean: CVec,
        cov: CMat,
        unbounded: usize,
    }
    let zero = Acc { mean: CVec::zeros(n), cov: CMat::zeros(n), unbounded: 0 };
    let push = |acc: &Acc, m: &Option<(CVec, CMat)>| match m {
        Some((mu, c)) => Acc { mean: &acc.mean + mu, cov: &acc.cov + c, unbounded: acc.unbounded },
        None => Acc { unbounded: acc.unbounded + 1, ..acc.clone() },
    };
    let mut prefix = Vec::with_capacity(k + 1);
    prefix.push(zero.clone());
    for m in &moments {
        let next = push(prefix.last().expect("nonempty"), m);
        prefix.push(next);
    }
    let mut suffix = vec![zero; k + 1];
    for j in (0..k).rev() {
        suffix[j] = push(&suffix[j + 1], &moments[j]);
    }

    (0..k)
        .map(|kk| {
            let (a, b) = (&prefix[kk], &suffix[kk + 1]);
            if a.unbounded + b.unbounded > 0 {
                return GaussianMessage::uninformative(n);
            }
            let cov = &(&CMat::scaled_identity(n, noise_var) + &a.cov) + &b.cov;
            let mean = &(y - &a.mean) - &b.mean;
            match GaussianMessage::from_moments(&mean, &cov) {
                Ok(m) => m,
                Err(_) => {
                    diag.degenerate_covariances += 1;
                    GaussianMessage::uninformative(n)
                }
            }
        })
        .collect()
}

/// Damped update `eta * new + (1 - eta) * old` on precision-form parameters.
pub fn soft_update_gaussian(new: &GaussianMessage, old: &GaussianMessage, eta: f64) -> GaussianMessage {
    if eta == 1.0 {
        return new.clone();
    }
    if new.dim() == 1 {
        let (n, o) = (scalar::parts(new), scalar::parts(old));
        return scalar::message((eta * n.0 + (1.0 - eta) * o.0, n.1 * eta + o.1 * (1.0 - eta)));
    }
    GaussianMessage {
        precision: new.precision.lincomb(eta, &old.precision, 1.0 - eta),
        shift: new.shift.lincomb(eta, &old.shift, 1.0 - eta),
    }
}

/// Damped update on categorical weights, renormalized.
pub fn soft_update_categorical(
    new: &CategoricalMessage,
    old: &CategoricalMessage,
    eta: f64,
    diag: &mut Diagnostics,
) -> CategoricalMessage {
    if eta == 1.0 {
        return new.clone();
    }
    let w: Weights = new.weights().iter().zip(old.weights()).map(|(a, b)| eta * a + (1.0 - eta) * b).collect();
    CategoricalMessage::from_weights(&w, diag)
}
