use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jcd::JcdParams;
use crate::metrics::dbm_to_mw;
use crate::scenario::ScenarioParams;

/// Receivers the harness can evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Semi-blind bilinear EP initialized from pilot-based estimates.
    BilinearEp,
    /// Centralized linear MMSE detection on pilot-based estimates.
    Lmmse,
    /// Bilinear EP with near-exact channel priors at the true channel.
    EpPerfectCsi,
    /// Channel estimates from the pilots alone.
    PilotOnly,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::BilinearEp, Self::Lmmse, Self::EpPerfectCsi, Self::PilotOnly];

    pub fn name(self) -> &'static str {
        match self {
            Self::BilinearEp => "bilinear-ep",
            Self::Lmmse => "lmmse",
            Self::EpPerfectCsi => "ep-perfect-csi",
            Self::PilotOnly => "pilot-only",
        }
    }

    pub fn reports_ser(self) -> bool {
        self != Self::PilotOnly
    }

    pub fn reports_nmse(self) -> bool {
        self != Self::Lmmse
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

/// Everything that defines one Monte Carlo experiment. Powers are in dBm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub side_m: f64,
    pub ap_grid: usize,
    pub num_ues: usize,
    pub antennas: usize,
    /// Defaults to the number of UEs.
    pub pilot_len: Option<usize>,
    pub pilot_unit_energy: bool,
    pub pilot_matrix: Option<Vec<Vec<[f64; 2]>>>,
    pub data_len: usize,
    pub tx_power_dbm: f64,
    pub noise_var_dbm: f64,
    pub algorithms: Vec<Algorithm>,
    pub iterations: usize,
    pub eta: f64,
    pub positions: usize,
    pub fadings: usize,
    pub seed: u64,
    /// Perfect-CSI prior variance relative to the mean large-scale gain.
    pub perfect_csi_rel_var: f64,
    /// Run fadings of a position on the rayon pool.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk(10)
    }
}

impl ExperimentConfig {
    /// Reduced protocol: 20 positions with 500 fadings each.
    pub fn desk(data_len: usize) -> Self {
        Self {
            side_m: 400.0,
            ap_grid: 4,
            num_ues: 8,
            antennas: 1,
            pilot_len: None,
            pilot_unit_energy: false,
            pilot_matrix: None,
            data_len,
            tx_power_dbm: 14.0,
            noise_var_dbm: -96.0,
            algorithms: Algorithm::ALL.to_vec(),
            iterations: 10,
            eta: 0.7,
            positions: 20,
            fadings: 500,
            seed: 1,
            perfect_csi_rel_var: 1e-12,
            parallel: true,
        }
    }

    /// Full protocol: 300 positions with 10^4 fadings each.
    pub fn full_scale(data_len: usize) -> Self {
        Self { positions: 300, fadings: 10_000, ..Self::desk(data_len) }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ap_grid", self.ap_grid),
            ("num_ues", self.num_ues),
            ("antennas", self.antennas),
            ("data_len", self.data_len),
            ("positions", self.positions),
            ("fadings", self.fadings),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms selected".into()));
        }
        if !(self.side_m > 0.0) {
            return Err(Error::Config("side_m must be positive".into()));
        }
        if !self.tx_power_dbm.is_finite() || !self.noise_var_dbm.is_finite() {
            return Err(Error::Config("powers must be finite".into()));
        }
        if !(self.perfect_csi_rel_var > 0.0) {
            return Err(Error::Config("perfect_csi_rel_var must be positive".into()));
        }
        self.jcd_params().validate()
    }

    pub fn scenario_params(&self) -> ScenarioParams {
        ScenarioParams {
            side_m: self.side_m,
            ap_grid: self.ap_grid,
            num_ues: self.num_ues,
            antennas: self.antennas,
            pilot_len: self.pilot_len,
            data_len: self.data_len,
            tx_power_mw: dbm_to_mw(self.tx_power_dbm),
            noise_var_mw: dbm_to_mw(self.noise_var_dbm),
            pilot_unit_energy: self.pilot_unit_energy,
            pilot_matrix: self.pilot_matrix.clone(),
            ap_positions: None,
            ue_positions: None,
        }
    }

    pub fn jcd_params(&self) -> JcdParams {
        JcdParams { eta: self.eta, ..JcdParams::default() }
    }
}
