//! Bilinear EP engine for semi-blind joint channel estimation and detection.
//!
//! Each AP `l` sees `y_lt = sum_k z_lkt + n_lt` with `z_lkt = x_kt h_lk`. The
//! factor graph has per-(l,k,t) bilinear factors `Psi1`, per-(l,t) observation
//! factors `Psi0`, constant channel priors `Psi2` from the pilot phase and
//! constant uniform symbol priors `Psi3`.
//!
//! One iteration runs four phases, each over every `(l,k,t)`:
//! `Psi1 -> z`, `Psi0 -> z`, `Psi1 -> h`, `Psi1 -> x`, followed by the
//! symbol-message exchange between APs. Every phase reads only values committed
//! by earlier phases, so the order of updates within a phase is irrelevant and
//! sequential and parallel execution agree bit for bit.

pub(crate) mod kernels;
mod scalar;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fronthaul::{ap_extract, cpu_aggregate};
use crate::gaussian::{cat_multiply, mean_cov, CategoricalMessage, Diagnostics, GaussianMessage};
use crate::linalg::{CMat, CVec};
use crate::pilot::ChannelPrior;
use crate::scenario::{Constellation, Scenario};

pub use kernels::{soft_update_categorical, soft_update_gaussian};

/// Engine tunables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JcdParams {
    /// Damping weight on the new message; 1 disables damping.
    pub eta: f64,
    /// Run the per-AP work of each phase on the rayon pool.
    pub parallel: bool,
    /// Share one factorization between symbols of equal amplitude.
    pub amplitude_grouping: bool,
}

impl Default for JcdParams {
    fn default() -> Self {
        Self { eta: 0.7, parallel: false, amplitude_grouping: true }
    }
}

impl JcdParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }
}

/// Immutable data shared by every AP.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub constellation: Constellation,
    pub noise_var: f64,
    pub num_ues: usize,
    pub data_len: usize,
    pub antennas: usize,
    pub params: JcdParams,
}

impl Model {
    /// Single-antenna messages take the scalar fast path unless the general
    /// per-symbol path is requested.
    fn fast_scalar(&self) -> bool {
        self.antennas == 1 && self.params.amplitude_grouping
    }
}

/// The messages owned by one AP, indexed `k * T + t` unless noted.
#[derive(Clone, Debug, PartialEq)]
pub struct ApState {
    /// `y_lt`, indexed by `t`.
    pub observations: Vec<CVec>,
    /// Constant `m_{Psi2 -> h}`, indexed by `k`.
    pub channel_prior: Vec<GaussianMessage>,
    pub psi1_to_z: Vec<GaussianMessage>,
    pub psi0_to_z: Vec<GaussianMessage>,
    pub psi1_to_h: Vec<GaussianMessage>,
    pub psi1_to_x: Vec<CategoricalMessage>,
    /// Extrinsic `m_{x -> Psi1}`: prior times every other AP's symbol message.
    pub x_to_psi1: Vec<CategoricalMessage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorGraphState {
    pub model: Model,
    /// Constant `m_{Psi3 -> x}`, indexed `k * T + t`.
    pub symbol_prior: Vec<CategoricalMessage>,
    pub aps: Vec<ApState>,
    pub iteration: usize,
    pub diagnostics: Diagnostics,
}

/// The four message phases of one iteration, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Psi1ToZ,
    Psi0ToZ,
    Psi1ToH,
    /// Includes the symbol-message exchange between APs.
    Psi1ToX,
}

/// Decisions, symbol posteriors and channel posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct JcdResult {
    pub num_ues: usize,
    pub data_len: usize,
    /// Indexed `k * T + t`.
    pub symbol_pmfs: Vec<CategoricalMessage>,
    /// Constellation indices, `k * T + t`.
    pub decisions: Vec<usize>,
    /// Indexed `l * K + k`.
    pub channel_means: Vec<CVec>,
    pub channel_covs: Vec<CMat>,
    pub diagnostics: Diagnostics,
}

impl JcdResult {
    pub fn decision(&self, k: usize, t: usize) -> usize {
        self.decisions[k * self.data_len + t]
    }

    pub fn channel_mean(&self, l: usize, k: usize) -> &CVec {
        &self.channel_means[l * self.num_ues + k]
    }
}

/// Builds the initial state from a scenario, its pilot-based channel priors
/// and the per-AP N x T data observations.
pub fn init_state(
    scenario: &Scenario,
    priors: &ChannelPrior,
    observations: &[DMatrix<Complex64>],
    params: &JcdParams,
) -> Result<FactorGraphState> {
    let (l, k) = (scenario.num_aps, scenario.num_ues);
    if priors.entries.len() != l * k || priors.num_ues != k {
        return Err(Error::Contract(format!(
            "priors cover {} links, scenario has {}",
            priors.entries.len(),
            l * k
        )));
    }
    if observations.len() != l {
        return Err(Error::Contract(format!("{} observation blocks for {l} APs", observations.len())));
    }
    let prior_msgs = priors.to_messages()?;
    let obs = observations
        .iter()
        .map(|y| {
            if y.nrows() != scenario.antennas || y.ncols() != scenario.data_len {
                return Err(Error::Contract(format!(
                    "observation block is {}x{}, expected {}x{}",
                    y.nrows(),
                    y.ncols(),
                    scenario.antennas,
                    scenario.data_len
                )));
            }
            Ok((0..y.ncols()).map(|t| CVec::from_fn(y.nrows(), |i| y[(i, t)])).collect())
        })
        .collect::<Result<Vec<Vec<CVec>>>>()?;
    let per_ap = prior_msgs.chunks(k.max(1)).map(|c| c.to_vec()).take(l).collect();
    FactorGraphState::from_parts(
        scenario.constellation.clone(),
        scenario.noise_var,
        k,
        per_ap,
        obs,
        params.clone(),
    )
}

impl FactorGraphState {
    /// `priors[l][k]` and `observations[l][t]`.
    pub fn from_parts(
        constellation: Constellation,
        noise_var: f64,
        num_ues: usize,
        priors: Vec<Vec<GaussianMessage>>,
        observations: Vec<Vec<CVec>>,
        params: JcdParams,
    ) -> Result<Self> {
        params.validate()?;
        if constellation.is_empty() {
            return Err(Error::Contract("empty constellation".into()));
        }
        if !(noise_var >= 0.0) || !noise_var.is_finite() {
            return Err(Error::Contract(format!("noise variance must be finite and nonnegative, got {noise_var}")));
        }
        if priors.len() != observations.len() {
            return Err(Error::Contract("priors and observations disagree on the AP count".into()));
        }
        let data_len = observations.first().map_or(0, Vec::len);
        let antennas = priors.first().and_then(|p| p.first()).map_or(1, GaussianMessage::dim);
        for (p, y) in priors.iter().zip(&observations) {
            if p.len() != num_ues || y.len() != data_len {
                return Err(Error::Contract("ragged priors or observations".into()));
            }
            if p.iter().any(|m| m.dim() != antennas) || y.iter().any(|v| v.len() != antennas) {
                return Err(Error::Contract("antenna count mismatch".into()));
            }
        }
        let m = constellation.len();
        let kt = num_ues * data_len;
        let aps = priors
            .into_iter()
            .zip(observations)
            .map(|(channel_prior, observations)| ApState {
                observations,
                channel_prior,
                psi1_to_z: vec![GaussianMessage::uninformative(antennas); kt],
                psi0_to_z: vec![GaussianMessage::uninformative(antennas); kt],
                psi1_to_h: vec![GaussianMessage::uninformative(antennas); kt],
                psi1_to_x: vec![CategoricalMessage::uniform(m); kt],
                x_to_psi1: vec![CategoricalMessage::uniform(m); kt],
            })
            .collect();
        Ok(Self {
            model: Model { constellation, noise_var, num_ues, data_len, antennas, params },
            symbol_prior: vec![CategoricalMessage::uniform(m); kt],
            aps,
            iteration: 0,
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn num_aps(&self) -> usize {
        self.aps.len()
    }

    fn index(&self, k: usize, t: usize) -> usize {
        k * self.model.data_len + t
    }

    /// Refreshes every AP's extrinsic symbol messages from the current
    /// `Psi1 -> x` messages of all APs.
    pub(crate) fn exchange_symbol_messages(&mut self) {
        let kt = self.symbol_prior.len();
        let mut diag = Diagnostics::default();
        for i in 0..kt {
            let total = cpu_aggregate(self.aps.iter().map(|ap| &ap.psi1_to_x[i]), &mut diag);
            for ap in self.aps.iter_mut() {
                ap.x_to_psi1[i] = extrinsic(&self.symbol_prior[i], &total, &ap.psi1_to_x[i], &mut diag);
            }
        }
        self.diagnostics += diag;
    }
}

/// `m_{x -> Psi1}` at one AP: the prior times the aggregate with the AP's own
/// contribution removed.
pub(crate) fn extrinsic(
    prior: &CategoricalMessage,
    total: &CategoricalMessage,
    own: &CategoricalMessage,
    diag: &mut Diagnostics,
) -> CategoricalMessage {
    let others = ap_extract(total, own, diag);
    cat_multiply([prior, &others], diag)
}

impl ApState {
    /// Leave-one-out channel messages `m_{h -> Psi1}` for user `k`, one per `t`:
    /// the prior plus every other channel use's `Psi1 -> h` message.
    pub fn h_inputs(&self, model: &Model, k: usize) -> Vec<GaussianMessage> {
        let t_len = model.data_len;
        let n = model.antennas;
        let msgs = &self.psi1_to_h[k * t_len..(k + 1) * t_len];
        if model.fast_scalar() {
            return scalar::leave_one_out(scalar::parts(&self.channel_prior[k]), msgs);
        }
        let add = |a: &GaussianMessage, b: &GaussianMessage| GaussianMessage {
            precision: &a.precision + &b.precision,
            shift: &a.shift + &b.shift,
        };
        let mut suffix = vec![GaussianMessage::uninformative(n); t_len + 1];
        for t in (0..t_len).rev() {
            suffix[t] = add(&msgs[t], &suffix[t + 1]);
        }
        let mut prefix = self.channel_prior[k].clone();
        let mut out = Vec::with_capacity(t_len);
        for t in 0..t_len {
            out.push(add(&prefix, &suffix[t + 1]));
            prefix = add(&prefix, &msgs[t]);
        }
        out
    }

    fn phase_psi1_to_z(&self, model: &Model, diag: &mut Diagnostics) -> Vec<GaussianMessage> {
        let mut out = Vec::with_capacity(self.psi1_to_z.len());
        for k in 0..model.num_ues {
            for (t, h_in) in self.h_inputs(model, k).iter().enumerate() {
                out.push(self.next_psi1_to_z(model, k * model.data_len + t, h_in, diag));
            }
        }
        out
    }

    fn next_psi1_to_z(&self, model: &Model, i: usize, h_in: &GaussianMessage, diag: &mut Diagnostics) -> GaussianMessage {
        let new = kernels::psi1_to_z(
            &model.constellation,
            h_in,
            &self.psi0_to_z[i],
            &self.x_to_psi1[i],
            model.params.amplitude_grouping,
            diag,
        );
        soft_update_gaussian(&new, &self.psi1_to_z[i], model.params.eta)
    }

    fn phase_psi0_to_z(&self, model: &Model, diag: &mut Diagnostics) -> Vec<GaussianMessage> {
        let t_len = model.data_len;
        let mut out = self.psi0_to_z.clone();
        for t in 0..t_len {
            for (k, m) in self.next_psi0_to_z(model, t, diag).into_iter().enumerate() {
                out[k * t_len + t] = m;
            }
        }
        out
    }

    /// Damped `Psi0 -> z` messages for every user at channel use `t`.
    fn next_psi0_to_z(&self, model: &Model, t: usize, diag: &mut Diagnostics) -> Vec<GaussianMessage> {
        let t_len = model.data_len;
        let fresh = if model.fast_scalar() {
            let inputs: Vec<scalar::Scalar> =
                (0..model.num_ues).map(|k| scalar::parts(&self.psi1_to_z[k * t_len + t])).collect();
            scalar::psi0_to_z(self.observations[t][0], &inputs, model.noise_var, diag)
        } else {
            let inputs: Vec<&GaussianMessage> = (0..model.num_ues).map(|k| &self.psi1_to_z[k * t_len + t]).collect();
            kernels::psi0_to_z(&self.observations[t], &inputs, model.noise_var, diag)
        };
        fresh
            .into_iter()
            .enumerate()
            .map(|(k, new)| soft_update_gaussian(&new, &self.psi0_to_z[k * t_len + t], model.params.eta))
            .collect()
    }

    fn phase_psi1_to_h(&self, model: &Model, diag: &mut Diagnostics) -> Vec<GaussianMessage> {
        let mut out = Vec::with_capacity(self.psi1_to_h.len());
        for k in 0..model.num_ues {
            for (t, h_in) in self.h_inputs(model, k).iter().enumerate() {
                out.push(self.next_psi1_to_h(model, k * model.data_len + t, h_in, diag));
            }
        }
        out
    }

    fn next_psi1_to_h(&self, model: &Model, i: usize, h_in: &GaussianMessage, diag: &mut Diagnostics) -> GaussianMessage {
        let new = kernels::psi1_to_h(
            &model.constellation,
            h_in,
            &self.psi0_to_z[i],
            &self.x_to_psi1[i],
            model.params.amplitude_grouping,
            diag,
        );
        soft_update_gaussian(&new, &self.psi1_to_h[i], model.params.eta)
    }

    fn phase_psi1_to_x(&self, model: &Model, diag: &mut Diagnostics) -> Vec<CategoricalMessage> {
        let mut out = Vec::with_capacity(self.psi1_to_x.len());
        for k in 0..model.num_ues {
            for (t, h_in) in self.h_inputs(model, k).iter().enumerate() {
                out.push(self.next_psi1_to_x(model, k * model.data_len + t, h_in, diag));
            }
        }
        out
    }

    fn next_psi1_to_x(&self, model: &Model, i: usize, h_in: &GaussianMessage, diag: &mut Diagnostics) -> CategoricalMessage {
        let new = kernels::psi1_to_x(
            &model.constellation,
            h_in,
            &self.psi0_to_z[i],
            model.params.amplitude_grouping,
            diag,
        );
        soft_update_categorical(&new, &self.psi1_to_x[i], model.params.eta, diag).floored()
    }

    /// Runs one phase on this AP and commits the result.
    pub(crate) fn run_phase(&mut self, model: &Model, phase: Phase, diag: &mut Diagnostics) {
        match phase {
            Phase::Psi1ToZ => self.psi1_to_z = self.phase_psi1_to_z(model, diag),
            Phase::Psi0ToZ => self.psi0_to_z = self.phase_psi0_to_z(model, diag),
            Phase::Psi1ToH => self.psi1_to_h = self.phase_psi1_to_h(model, diag),
            Phase::Psi1ToX => self.psi1_to_x = self.phase_psi1_to_x(model, diag),
        }
    }

    /// Channel posterior `(mean, cov)` for user `k`: prior times every
    /// `Psi1 -> h` message.
    pub fn channel_posterior(&self, model: &Model, k: usize) -> (CVec, CMat) {
        let t_len = model.data_len;
        let mut total = self.channel_prior[k].clone();
        for m in &self.psi1_to_h[k * t_len..(k + 1) * t_len] {
            total.precision += &m.precision;
            total.shift += &m.shift;
        }
        mean_cov(&total)
            .or_else(|_| mean_cov(&self.channel_prior[k]))
            .expect("channel prior is positive definite")
    }
}

pub const PHASES: [Phase; 4] = [Phase::Psi1ToZ, Phase::Psi0ToZ, Phase::Psi1ToH, Phase::Psi1ToX];

/// Runs `iterations` full iterations.
pub fn run_schedule(state: &mut FactorGraphState, iterations: usize) {
    run_schedule_observed(state, iterations, |_, _| {});
}

/// As [`run_schedule`], calling `observer` after every committed phase.
pub fn run_schedule_observed(
    state: &mut FactorGraphState,
    iterations: usize,
    mut observer: impl FnMut(Phase, &FactorGraphState),
) {
    for _ in 0..iterations {
        for phase in PHASES {
            let model = &state.model;
            let diags: Vec<Diagnostics> = if model.params.parallel {
                state
                    .aps
                    .par_iter_mut()
                    .map(|ap| {
                        let mut d = Diagnostics::default();
                        ap.run_phase(model, phase, &mut d);
                        d
                    })
                    .collect()
            } else {
                state
                    .aps
                    .iter_mut()
                    .map(|ap| {
                        let mut d = Diagnostics::default();
                        ap.run_phase(model, phase, &mut d);
                        d
                    })
                    .collect()
            };
            for d in diags {
                state.diagnostics += d;
            }
            if phase == Phase::Psi1ToX {
                state.exchange_symbol_messages();
            }
            observer(phase, state);
        }
        state.iteration += 1;
    }
}

/// Symbol posteriors `Psi3 * prod_l m_{Psi1,l -> x}` for every `(k,t)`.
pub(crate) fn symbol_posteriors<'a>(
    prior: &[CategoricalMessage],
    per_ap: impl Fn(usize) -> Vec<&'a CategoricalMessage>,
    diag: &mut Diagnostics,
) -> Vec<CategoricalMessage> {
    prior
        .iter()
        .enumerate()
        .map(|(i, p)| cat_multiply(std::iter::once(p).chain(per_ap(i)), diag))
        .collect()
}

/// Posterior symbol PMFs, hard decisions and channel estimates.
pub fn infer(state: &FactorGraphState) -> JcdResult {
    let mut diag = state.diagnostics;
    let pmfs = symbol_posteriors(
        &state.symbol_prior,
        |i| state.aps.iter().map(|ap| &ap.psi1_to_x[i]).collect(),
        &mut diag,
    );
    let mut channel_means = Vec::new();
    let mut channel_covs = Vec::new();
    for ap in &state.aps {
        for k in 0..state.model.num_ues {
            let (m, c) = ap.channel_posterior(&state.model, k);
            channel_means.push(m);
            channel_covs.push(c);
        }
    }
    JcdResult {
        num_ues: state.model.num_ues,
        data_len: state.model.data_len,
        decisions: pmfs.iter().map(CategoricalMessage::argmax).collect(),
        symbol_pmfs: pmfs,
        channel_means,
        channel_covs,
        diagnostics: diag,
    }
}

/// `m_{h -> Psi1}` at `(l,k,t)`.
pub fn var_to_factor_h(state: &FactorGraphState, l: usize, k: usize, t: usize) -> GaussianMessage {
    state.aps[l].h_inputs(&state.model, k).swap_remove(t)
}

/// `m_{z -> Psi1}` at `(l,k,t)`: `z` has only two neighbours, so this is the
/// stored `Psi0 -> z` message.
pub fn var_to_factor_z(state: &FactorGraphState, l: usize, k: usize, t: usize) -> GaussianMessage {
    state.aps[l].psi0_to_z[state.index(k, t)].clone()
}

/// `m_{x -> Psi1}` at `(l,k,t)` as the direct normalized product of the prior
/// and every other AP's symbol message.
pub fn var_to_factor_x(
    state: &FactorGraphState,
    l: usize,
    k: usize,
    t: usize,
    diag: &mut Diagnostics,
) -> CategoricalMessage {
    let i = state.index(k, t);
    let others = state.aps.iter().enumerate().filter(|&(j, _)| j != l).map(|(_, ap)| &ap.psi1_to_x[i]);
    cat_multiply(std::iter::once(&state.symbol_prior[i]).chain(others), diag)
}

/// Damped `Psi1 -> z` update at `(l,k,t)` from the current state.
pub fn update_psi1_to_z(state: &FactorGraphState, l: usize, k: usize, t: usize, diag: &mut Diagnostics) -> GaussianMessage {
    let h_in = var_to_factor_h(state, l, k, t);
    state.aps[l].next_psi1_to_z(&state.model, state.index(k, t), &h_in, diag)
}

/// Damped `Psi0 -> z` update at `(l,t)` towards user `k`.
pub fn update_psi0_to_z(state: &FactorGraphState, l: usize, t: usize, k: usize, diag: &mut Diagnostics) -> GaussianMessage {
    state.aps[l].next_psi0_to_z(&state.model, t, diag).swap_remove(k)
}

/// Damped `Psi1 -> h` update at `(l,k,t)`.
pub fn update_psi1_to_h(state: &FactorGraphState, l: usize, k: usize, t: usize, diag: &mut Diagnostics) -> GaussianMessage {
    let h_in = var_to_factor_h(state, l, k, t);
    state.aps[l].next_psi1_to_h(&state.model, state.index(k, t), &h_in, diag)
}

/// Damped `Psi1 -> x` update at `(l,k,t)`.
pub fn update_psi1_to_x(state: &FactorGraphState, l: usize, k: usize, t: usize, diag: &mut Diagnostics) -> CategoricalMessage {
    let h_in = var_to_factor_h(state, l, k, t);
    state.aps[l].next_psi1_to_x(&state.model, state.index(k, t), &h_in, diag)
}
