//! AP/CPU execution split of the JCD engine.
//!
//! Only categorical symbol messages cross the fronthaul. Each AP runs all four
//! message phases on its own state and uplinks its `Psi1 -> x` messages; the
//! CPU multiplies them into `m_tot` per `(k,t)` and downlinks `m_tot` to every
//! AP, which divides out its own contribution.
//!
//! Wire frame: `l`, `k`, `t` as little-endian `u32`, then `|S|` little-endian
//! `f64` weights in constellation order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{cat_divide, cat_multiply, CategoricalMessage, Diagnostics};
use crate::jcd::{extrinsic, symbol_posteriors, ApState, FactorGraphState, JcdResult, Model, PHASES};

const HEADER_BYTES: usize = 12;

/// `m_tot ∝ prod_l m_{Psi1,l -> x}`.
pub fn cpu_aggregate<'a, I>(messages: I, diag: &mut Diagnostics) -> CategoricalMessage
where
    I: IntoIterator<Item = &'a CategoricalMessage>,
{
    cat_multiply(messages, diag)
}

/// `m_tot / own`, floored and renormalized: the product of every other AP's message.
pub fn ap_extract(total: &CategoricalMessage, own: &CategoricalMessage, diag: &mut Diagnostics) -> CategoricalMessage {
    cat_divide(total, own, diag).floored()
}

/// Bytes in one frame carrying `support` weights.
pub fn frame_len(support: usize) -> usize {
    HEADER_BYTES + 8 * support
}

pub fn encode_frame(l: usize, k: usize, t: usize, msg: &CategoricalMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(frame_len(msg.len()));
    for idx in [l, k, t] {
        let idx = u32::try_from(idx).expect("index fits the 32-bit wire field");
        out.extend_from_slice(&idx.to_le_bytes());
    }
    for w in msg.weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_frame`]; returns `((l, k, t), message)`.
pub fn decode_frame(bytes: &[u8], support: usize) -> Result<((usize, usize, usize), CategoricalMessage)> {
    if bytes.len() != frame_len(support) {
        return Err(Error::Contract(format!(
            "frame has {} bytes, expected {}",
            bytes.len(),
            frame_len(support)
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let weights: Vec<f64> = bytes[HEADER_BYTES..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(((word(0), word(1), word(2)), CategoricalMessage::from_normalized(&weights)?))
}

/// Messages and bytes exchanged in one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationLoad {
    pub uplink_count: usize,
    pub downlink_count: usize,
    pub uplink_bytes: usize,
    pub downlink_bytes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FronthaulLedger {
    pub iterations: Vec<IterationLoad>,
}

impl FronthaulLedger {
    pub fn total(&self) -> IterationLoad {
        self.iterations.iter().fold(IterationLoad::default(), |a, b| IterationLoad {
            uplink_count: a.uplink_count + b.uplink_count,
            downlink_count: a.downlink_count + b.downlink_count,
            uplink_bytes: a.uplink_bytes + b.uplink_bytes,
            downlink_bytes: a.downlink_bytes + b.downlink_bytes,
        })
    }

    /// Checks `L*K*T` messages in each direction in every iteration.
    pub fn check(&self, num_aps: usize, num_ues: usize, data_len: usize, support: usize) -> Result<()> {
        let count = num_aps * num_ues * data_len;
        let expected = IterationLoad {
            uplink_count: count,
            downlink_count: count,
            uplink_bytes: count * frame_len(support),
            downlink_bytes: count * frame_len(support),
        };
        match self.iterations.iter().position(|it| *it != expected) {
            None => Ok(()),
            Some(i) => Err(Error::Contract(format!(
                "iteration {i}: load {:?}, expected {expected:?}",
                self.iterations[i]
            ))),
        }
    }
}

/// Outcome of a split execution.
#[derive(Clone, Debug)]
pub struct SplitRun {
    pub result: JcdResult,
    pub ledger: FronthaulLedger,
    /// The AP states reassembled into one factor-graph state.
    pub state: FactorGraphState,
}

struct ApNode {
    index: usize,
    state: ApState,
    diag: Diagnostics,
}

impl ApNode {
    fn local_iteration(&mut self, model: &Model) {
        for phase in PHASES {
            self.state.run_phase(model, phase, &mut self.diag);
        }
    }

    fn uplink(&self, model: &Model) -> Vec<Vec<u8>> {
        let t_len = model.data_len;
        self.state
            .psi1_to_x
            .iter()
            .enumerate()
            .map(|(i, m)| encode_frame(self.index, i / t_len, i % t_len, m))
            .collect()
    }

    fn receive(&mut self, model: &Model, prior: &[CategoricalMessage], frames: &[Vec<u8>]) -> Result<()> {
        for frame in frames {
            let ((l, k, t), total) = decode_frame(frame, model.constellation.len())?;
            if l != self.index {
                return Err(Error::Contract(format!("AP {} received a frame addressed to AP {l}", self.index)));
            }
            let i = k * model.data_len + t;
            self.state.x_to_psi1[i] = extrinsic(&prior[i], &total, &self.state.psi1_to_x[i], &mut self.diag);
        }
        Ok(())
    }
}

/// Runs `iterations` iterations as isolated AP nodes plus a CPU that only
/// ever sees serialized symbol messages.
pub fn run_split(state: FactorGraphState, iterations: usize) -> Result<SplitRun> {
    let FactorGraphState { model, symbol_prior, aps, iteration, diagnostics } = state;
    let support = model.constellation.len();
    let kt = symbol_prior.len();
    let mut nodes: Vec<ApNode> = aps
        .into_iter()
        .enumerate()
        .map(|(index, state)| ApNode { index, state, diag: Diagnostics::default() })
        .collect();
    // CPU copy of every AP's latest uplinked message, `[l][k * T + t]`.
    let mut received: Vec<Vec<CategoricalMessage>> = nodes.iter().map(|n| n.state.psi1_to_x.clone()).collect();
    let mut cpu_diag = Diagnostics::default();
    let mut ledger = FronthaulLedger::default();

    for _ in 0..iterations {
        let mut load = IterationLoad::default();
        for node in nodes.iter_mut() {
            node.local_iteration(&model);
        }
        for node in &nodes {
            for frame in node.uplink(&model) {
                load.uplink_count += 1;
                load.uplink_bytes += frame.len();
                let ((l, k, t), msg) = decode_frame(&frame, support)?;
                received[l][k * model.data_len + t] = msg;
            }
        }
        let totals: Vec<CategoricalMessage> = (0..kt)
            .map(|i| cpu_aggregate(received.iter().map(|r| &r[i]), &mut cpu_diag))
            .collect();
        for node in nodes.iter_mut() {
            let frames: Vec<Vec<u8>> = totals
                .iter()
                .enumerate()
                .map(|(i, m)| encode_frame(node.index, i / model.data_len, i % model.data_len, m))
                .collect();
            load.downlink_count += frames.len();
            load.downlink_bytes += frames.iter().map(Vec::len).sum::<usize>();
            node.receive(&model, &symbol_prior, &frames)?;
        }
        ledger.iterations.push(load);
    }

    let mut diag = diagnostics;
    diag += cpu_diag;
    for node in &nodes {
        diag += node.diag;
    }
    let mut result_diag = diag;
    let symbol_pmfs = symbol_posteriors(
        &symbol_prior,
        |i| received.iter().map(|r| &r[i]).collect(),
        &mut result_diag,
    );
    let mut channel_means = Vec::new();
    let mut channel_covs = Vec::new();
    for node in &nodes {
        for k in 0..model.num_ues {
            let (m, c) = node.state.channel_posterior(&model, k);
            channel_means.push(m);
            channel_covs.push(c);
        }
    }
    let result = JcdResult {
        num_ues: model.num_ues,
        data_len: model.data_len,
        decisions: symbol_pmfs.iter().map(CategoricalMessage::argmax).collect(),
        symbol_pmfs,
        channel_means,
        channel_covs,
        diagnostics: result_diag,
    };
    let state = FactorGraphState {
        model,
        symbol_prior,
        aps: nodes.into_iter().map(|n| n.state).collect(),
        iteration: iteration + iterations,
        diagnostics: diag,
    };
    Ok(SplitRun { result, ledger, state })
}
