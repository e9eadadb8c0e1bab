//! Generators, state builders and independent oracles shared by the
//! integration tests.
#![allow(dead_code)]

use cellfree_ep::gaussian::{CategoricalMessage, Diagnostics, GaussianMessage};
use cellfree_ep::jcd::{FactorGraphState, JcdParams};
use cellfree_ep::linalg::{CMat, CVec};
use cellfree_ep::pilot::ChannelPrior;
use cellfree_ep::scenario::{
    generate_transmission, sample_channel, ChannelRealization, Constellation, Scenario, TransmissionBatch,
};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn random_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_| random_complex(rng))
}

/// `G G^H + floor I` with uniform entries in `G`.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> CMat {
    let g = CMat::from_fn(n, |_, _| random_complex(rng));
    &g.matmul(&g.adjoint()) + &CMat::scaled_identity(n, floor)
}

pub fn random_pmf(rng: &mut ChaCha8Rng, n: usize) -> CategoricalMessage {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
    CategoricalMessage::from_weights(&w, &mut Diagnostics::default())
}

pub fn random_message(rng: &mut ChaCha8Rng, n: usize) -> GaussianMessage {
    GaussianMessage::from_moments(&random_vec(rng, n), &random_pd(rng, n, 0.2)).unwrap()
}

pub fn one_hot(size: usize, at: usize) -> CategoricalMessage {
    let w: Vec<f64> = (0..size).map(|i| if i == at { 1.0 } else { 0.0 }).collect();
    CategoricalMessage::from_normalized(&w).unwrap()
}

pub fn to_dense(m: &CMat) -> DMatrix<Complex64> {
    DMatrix::from_fn(m.dim(), m.dim(), |i, j| m[(i, j)])
}

pub fn to_dense_vec(v: &CVec) -> DMatrix<Complex64> {
    DMatrix::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn inverse(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    m.clone().try_inverse().expect("invertible")
}

/// Max absolute entry difference relative to the larger operand's max entry.
pub fn rel_err(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let scale = a.iter().chain(b.iter()).map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}

pub fn message_rel_err(a: &GaussianMessage, b: &GaussianMessage) -> f64 {
    rel_err(&to_dense(&a.precision), &to_dense(&b.precision))
        .max(rel_err(&to_dense_vec(&a.shift), &to_dense_vec(&b.shift)))
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// A one-AP, one-UE, one-channel-use state whose factor sees exactly the given
/// channel, z and symbol inputs.
pub fn single_factor_state(
    constellation: &Constellation,
    h_in: GaussianMessage,
    z_in: GaussianMessage,
    x_in: CategoricalMessage,
    params: JcdParams,
) -> FactorGraphState {
    let n = h_in.dim();
    let mut state =
        FactorGraphState::from_parts(constellation.clone(), 0.01, 1, vec![vec![h_in]], vec![vec![CVec::zeros(n)]], params)
            .unwrap();
    state.aps[0].psi0_to_z[0] = z_in;
    state.aps[0].x_to_psi1[0] = x_in;
    state
}

pub fn undamped() -> JcdParams {
    JcdParams { eta: 1.0, ..JcdParams::default() }
}

/// Draws of one coherence interval on a geometry-free scenario.
pub struct Trial {
    pub scenario: Scenario,
    pub channel: ChannelRealization,
    pub batch: TransmissionBatch,
    pub priors: ChannelPrior,
}

pub fn trial(rng: &mut ChaCha8Rng, scenario: &Scenario) -> Trial {
    let channel = sample_channel(rng, scenario);
    let batch = generate_transmission(rng, scenario, &channel);
    let priors = ChannelPrior::estimate(scenario, &batch).unwrap();
    Trial { scenario: scenario.clone(), channel, batch, priors }
}

/// State with random but model-consistent observations and priors near the
/// truth, advanced by `iterations` full iterations.
pub fn random_state(
    rng: &mut ChaCha8Rng,
    dims: (usize, usize, usize, usize),
    constellation: &Constellation,
    params: JcdParams,
    iterations: usize,
) -> FactorGraphState {
    let (l, k, t, n) = dims;
    let noise_var: f64 = 0.05;
    let truth: Vec<Vec<CVec>> = (0..l).map(|_| (0..k).map(|_| random_vec(rng, n).scale_real(2.0)).collect()).collect();
    let pts = constellation.points();
    let symbols: Vec<Complex64> = (0..k * t).map(|_| pts[rng.random_range(0..pts.len())]).collect();
    let observations = truth
        .iter()
        .map(|h| {
            (0..t)
                .map(|tt| {
                    let mut y = random_vec(rng, n).scale_real(noise_var.sqrt());
                    for (kk, hk) in h.iter().enumerate() {
                        y += &hk.scale(symbols[kk * t + tt]);
                    }
                    y
                })
                .collect()
        })
        .collect();
    let priors = truth
        .iter()
        .map(|h| {
            h.iter()
                .map(|hk| {
                    let mean = hk + &random_vec(rng, n).scale_real(0.3);
                    GaussianMessage::from_moments(&mean, &random_pd(rng, n, 0.05).scale_real(0.2)).unwrap()
                })
                .collect()
        })
        .collect();
    let mut state =
        FactorGraphState::from_parts(constellation.clone(), noise_var, k, priors, observations, params).unwrap();
    cellfree_ep::jcd::run_schedule(&mut state, iterations);
    state
}

/// Exact log posterior of every symbol matrix for single-antenna links, up to
/// a common constant, with independent `CN(mean, var)` channel priors and a
/// uniform symbol prior. Integrates the channels out in closed form:
/// `y_l ~ CN(A mu_l, A diag(c_l) A^H + sigma^2 I)` with `A = X^T`.
///
/// `priors[l][k] = (mean, var)`, `obs[l][t] = y_lt`. Configuration `c` assigns
/// symbol `(c / M^i) % M` to position `i = k * T + t`.
pub fn exact_log_posteriors(
    constellation: &Constellation,
    priors: &[Vec<(Complex64, f64)>],
    obs: &[Vec<Complex64>],
    noise_var: f64,
) -> Vec<f64> {
    let m = constellation.len();
    let k = priors[0].len();
    let t = obs[0].len();
    let count = m.pow((k * t) as u32);
    (0..count)
        .map(|cfg| {
            let x = DMatrix::from_fn(k, t, |kk, tt| constellation.points()[(cfg / m.pow((kk * t + tt) as u32)) % m]);
            let a = x.transpose();
            priors
                .iter()
                .zip(obs)
                .map(|(pr, y)| {
                    let mean = &a * DMatrix::from_fn(k, 1, |kk, _| pr[kk].0);
                    let c_h = DMatrix::from_fn(k, k, |i, j| if i == j { c(pr[i].1, 0.0) } else { c(0.0, 0.0) });
                    let cov = &a * c_h * a.adjoint() + DMatrix::identity(t, t) * c(noise_var, 0.0);
                    let r = DMatrix::from_fn(t, 1, |tt, _| y[tt]) - mean;
                    let chol = cov.cholesky().expect("positive definite");
                    let log_det: f64 = (0..t).map(|i| 2.0 * chol.l()[(i, i)].re.ln()).sum();
                    let quad = (r.adjoint() * chol.solve(&r))[(0, 0)].re;
                    -log_det - quad
                })
                .sum()
        })
        .collect()
}

/// Normalized probabilities from log weights.
pub fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Per-position marginal PMFs of a joint distribution over configurations.
pub fn marginals(joint: &[f64], support: usize, positions: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; support]; positions];
    for (cfg, p) in joint.iter().enumerate() {
        for (i, row) in out.iter_mut().enumerate() {
            row[(cfg / support.pow(i as u32)) % support] += p;
        }
    }
    out
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(p: &[f64]) -> usize {
    p.iter().enumerate().fold(0, |best, (i, &v)| if v > p[best] { i } else { best })
}

/// Symbol indices of the most probable configuration.
pub fn joint_map(log_post: &[f64], support: usize, positions: usize) -> Vec<usize> {
    let best = log_post
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0;
    (0..positions).map(|i| (best / support.pow(i as u32)) % support).collect()
}

/// Mean and `E|z - mean|^2` of the density `exp(log_f(z))` on the complex
/// plane, by the trapezoid rule on a square grid centred at `center`.
/// Accurate to near machine precision for Gaussian-like integrands when the
/// step is a small fraction of the narrowest width and the box is wide.
pub fn grid_moments(log_f: impl Fn(Complex64) -> f64, center: Complex64, half_width: f64, step: f64) -> (Complex64, f64) {
    let n = (half_width / step).ceil() as i64;
    let mut pts = Vec::with_capacity(((2 * n + 1) * (2 * n + 1)) as usize);
    for i in -n..=n {
        for j in -n..=n {
            let z = center + c(i as f64 * step, j as f64 * step);
            pts.push((z, log_f(z)));
        }
    }
    let max = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mut mass = 0.0;
    let mut first = c(0.0, 0.0);
    for (z, lf) in &pts {
        let w = (lf - max).exp();
        mass += w;
        first += z * w;
    }
    let mean = first / mass;
    let var = pts.iter().map(|(z, lf)| (lf - max).exp() * (z - mean).norm_sqr()).sum::<f64>() / mass;
    (mean, var)
}

/// Log of an unnormalized scalar precision-form message at `v`.
pub fn log_message(m: &GaussianMessage, v: Complex64) -> f64 {
    let (lam, gamma) = (m.precision[(0, 0)].re, m.shift[0]);
    -lam * v.norm_sqr() + 2.0 * (gamma.conj() * v).re
}

/// Scalar `(mean, var)` of a precision-form message.
pub fn scalar_moments(m: &GaussianMessage) -> (Complex64, f64) {
    let lam = m.precision[(0, 0)].re;
    (m.shift[0] / lam, 1.0 / lam)
}
