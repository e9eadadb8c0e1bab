//! Monte Carlo experiment driver.
//!
//! UE positions are drawn once per position index; every fading of a position
//! draws a fresh channel, symbol block and noise. All selected receivers see
//! the same draws. Each `(position, fading)` task owns the ChaCha stream
//! `(position << 32) | fading` of the master seed, so results do not depend
//! on scheduling.

mod config;
mod output;

pub use config::{Algorithm, ExperimentConfig};
pub use output::{write_outputs, AlgoSummary, ExperimentSummary, MetricSummary};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{centralized_lmmse_detect, stack_channels, stack_observations};
use crate::error::Result;
use crate::gaussian::Diagnostics;
use crate::jcd::{infer, init_state, run_schedule, JcdParams, JcdResult};
use crate::linalg::CVec;
use crate::metrics::{nmse, ser, weak_link_filter};
use crate::pilot::ChannelPrior;
use crate::scenario::{generate_transmission, sample_channel, Scenario, TransmissionBatch};

/// One output sample: a per-(position, UE) SER or a per-(position, AP, UE) NMSE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub algo: Algorithm,
    pub position_id: usize,
    pub ue_id: usize,
    pub ap_id: Option<usize>,
    pub ser: Option<f64>,
    pub nmse: Option<f64>,
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub records: Vec<MetricsRecord>,
    pub summary: ExperimentSummary,
}

/// Per-algorithm metrics of one fading.
#[derive(Clone, Debug, Default)]
struct FadingOutcome {
    /// Per UE.
    ser: Vec<Option<Vec<f64>>>,
    /// Per link `l * K + k`.
    nmse: Vec<Option<Vec<Option<f64>>>>,
    diagnostics: Diagnostics,
}

fn task_rng(seed: u64, position: usize, fading: Option<usize>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stream 0 of each position places the UEs; fading f uses stream f + 1.
    let sub = fading.map_or(0, |f| f as u64 + 1);
    rng.set_stream(((position as u64) << 32) | sub);
    rng
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let params = config.scenario_params();
    let mut algos = config.algorithms.clone();
    algos.sort();
    algos.dedup();

    let mut records = Vec::new();
    let mut diagnostics = Diagnostics::default();
    for position in 0..config.positions {
        let scenario = Scenario::from_params(&params, &mut task_rng(config.seed, position, None))?;
        let run = |f: usize| evaluate_fading(&scenario, config, &algos, &mut task_rng(config.seed, position, Some(f)));
        let outcomes: Vec<FadingOutcome> = if config.parallel {
            (0..config.fadings).into_par_iter().map(run).collect::<Result<_>>()?
        } else {
            (0..config.fadings).map(run).collect::<Result<_>>()?
        };
        for o in &outcomes {
            diagnostics += o.diagnostics;
        }
        records.extend(aggregate_position(&scenario, &algos, position, &outcomes));
    }
    let summary = ExperimentSummary::new(config.clone(), &algos, &records, diagnostics);
    Ok(ExperimentReport { records, summary })
}

/// Averages per-fading metrics into the position's records.
fn aggregate_position(
    scenario: &Scenario,
    algos: &[Algorithm],
    position: usize,
    outcomes: &[FadingOutcome],
) -> Vec<MetricsRecord> {
    let (l_count, k_count) = (scenario.num_aps, scenario.num_ues);
    let n = outcomes.len() as f64;
    let mut out = Vec::new();
    for (a, &algo) in algos.iter().enumerate() {
        if algo.reports_ser() {
            for k in 0..k_count {
                let total: f64 = outcomes.iter().map(|o| o.ser[a].as_ref().expect("SER computed")[k]).sum();
                out.push(MetricsRecord {
                    algo,
                    position_id: position,
                    ue_id: k,
                    ap_id: None,
                    ser: Some(total / n),
                    nmse: None,
                    excluded: false,
                });
            }
        }
        if algo.reports_nmse() {
            for l in 0..l_count {
                for k in 0..k_count {
                    let excluded = weak_link_filter(scenario, l, k);
                    let value = if excluded {
                        None
                    } else {
                        let vals: Vec<f64> = outcomes
                            .iter()
                            .filter_map(|o| o.nmse[a].as_ref().expect("NMSE computed")[l * k_count + k])
                            .collect();
                        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                    };
                    out.push(MetricsRecord {
                        algo,
                        position_id: position,
                        ue_id: k,
                        ap_id: Some(l),
                        ser: None,
                        nmse: value,
                        excluded,
                    });
                }
            }
        }
    }
    out
}

fn per_ue_ser(result_decisions: &[usize], batch: &TransmissionBatch, num_ues: usize, data_len: usize) -> Result<Vec<f64>> {
    (0..num_ues)
        .map(|k| {
            let r = k * data_len..(k + 1) * data_len;
            ser(&result_decisions[r.clone()], &batch.symbol_indices[r])
        })
        .collect()
}

fn per_link_nmse(means: &[CVec], truth: &[CVec]) -> Vec<Option<f64>> {
    means.iter().zip(truth).map(|(m, h)| nmse(m, h)).collect()
}

/// Runs bilinear EP from the given channel priors.
pub fn run_bilinear_ep(
    scenario: &Scenario,
    priors: &ChannelPrior,
    batch: &TransmissionBatch,
    params: &JcdParams,
    iterations: usize,
) -> Result<JcdResult> {
    let mut state = init_state(scenario, priors, &batch.data_obs, params)?;
    run_schedule(&mut state, iterations);
    Ok(infer(&state))
}

/// Perfect-CSI prior variance: `rel_var` times the mean large-scale gain.
pub fn perfect_csi_variance(scenario: &Scenario, rel_var: f64) -> f64 {
    let (l, k) = (scenario.num_aps, scenario.num_ues);
    let mean_gain =
        (0..l).flat_map(|a| (0..k).map(move |u| (a, u))).map(|(a, u)| scenario.large_scale(a, u)).sum::<f64>()
            / (l * k) as f64;
    rel_var * mean_gain
}

fn evaluate_fading(
    scenario: &Scenario,
    config: &ExperimentConfig,
    algos: &[Algorithm],
    rng: &mut ChaCha8Rng,
) -> Result<FadingOutcome> {
    let (k, t) = (scenario.num_ues, scenario.data_len);
    let channel = sample_channel(rng, scenario);
    let batch = generate_transmission(rng, scenario, &channel);
    let truth: Vec<CVec> = (0..scenario.num_aps)
        .flat_map(|l| (0..k).map(move |kk| (l, kk)))
        .map(|(l, kk)| channel.column(l, kk).clone())
        .collect();
    let priors = ChannelPrior::estimate(scenario, &batch)?;
    let params = config.jcd_params();

    let mut outcome = FadingOutcome {
        ser: vec![None; algos.len()],
        nmse: vec![None; algos.len()],
        diagnostics: Diagnostics::default(),
    };
    for (a, algo) in algos.iter().enumerate() {
        match algo {
            Algorithm::BilinearEp | Algorithm::EpPerfectCsi => {
                let result = if *algo == Algorithm::BilinearEp {
                    run_bilinear_ep(scenario, &priors, &batch, &params, config.iterations)?
                } else {
                    let var = perfect_csi_variance(scenario, config.perfect_csi_rel_var);
                    let perfect = ChannelPrior::perfect(&truth, k, var);
                    run_bilinear_ep(scenario, &perfect, &batch, &params, config.iterations)?
                };
                outcome.diagnostics += result.diagnostics;
                outcome.ser[a] = Some(per_ue_ser(&result.decisions, &batch, k, t)?);
                outcome.nmse[a] = Some(per_link_nmse(&result.channel_means, &truth));
            }
            Algorithm::Lmmse => {
                let means: Vec<CVec> = priors.entries.iter().map(|e| e.mean.clone()).collect();
                let decisions = centralized_lmmse_detect(
                    &stack_observations(&batch.data_obs),
                    &stack_channels(&means, k),
                    scenario.noise_var,
                    scenario.tx_power,
                    &scenario.constellation,
                )?;
                outcome.ser[a] = Some(per_ue_ser(&decisions, &batch, k, t)?);
            }
            Algorithm::PilotOnly => {
                let means: Vec<CVec> = priors.entries.iter().map(|e| e.mean.clone()).collect();
                outcome.nmse[a] = Some(per_link_nmse(&means, &truth));
            }
        }
    }
    Ok(outcome)
}
