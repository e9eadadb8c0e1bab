//! Deployment geometry, large-scale fading, and uplink transmission sampling.
//!
//! All powers are linear (mW). A [`Scenario`] is one realization of UE
//! positions; small-scale fading and noise are drawn per transmission.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};

pub type Point = [f64; 2];

/// Ordered symbol alphabet with its distinct-amplitude grouping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Complex64>", into = "Vec<Complex64>")]
pub struct Constellation {
    points: Vec<Complex64>,
    /// Distinct squared magnitudes `|x|^2`.
    amplitudes: Vec<f64>,
    /// For each point, the index into `amplitudes`.
    amplitude_of: Vec<usize>,
    /// `1 / conj(x)` per point.
    inv_conj: Vec<Complex64>,
}

impl From<Vec<Complex64>> for Constellation {
    fn from(points: Vec<Complex64>) -> Self {
        Self::new(points)
    }
}

impl From<Constellation> for Vec<Complex64> {
    fn from(c: Constellation) -> Self {
        c.points
    }
}

impl Constellation {
    /// # Panics
    /// If `points` is empty or contains zero (the bilinear factor needs `x != 0`).
    pub fn new(points: Vec<Complex64>) -> Self {
        assert!(!points.is_empty(), "empty constellation");
        assert!(points.iter().all(|p| p.norm_sqr() > 0.0), "constellation contains the origin");
        let mut amplitudes: Vec<f64> = Vec::new();
        let mut amplitude_of = Vec::with_capacity(points.len());
        for p in &points {
            let a = p.norm_sqr();
            let pos = amplitudes.iter().position(|&b| (a - b).abs() <= 1e-12 * a.max(b));
            let idx = match pos {
                Some(i) => i,
                None => {
                    amplitudes.push(a);
                    amplitudes.len() - 1
                }
            };
            amplitude_of.push(idx);
        }
        let inv_conj = points.iter().map(|p| p.conj().inv()).collect();
        Self { points, amplitudes, amplitude_of, inv_conj }
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn amplitude_index(&self, symbol: usize) -> usize {
        self.amplitude_of[symbol]
    }

    /// `1 / conj(x)` for every point, in order.
    pub fn inverse_conjugates(&self) -> &[Complex64] {
        &self.inv_conj
    }

    pub fn average_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }

    /// Index of the closest point; ties go to the lowest index.
    pub fn nearest(&self, value: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (p - value).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// `{±sqrt(p/2) ± j sqrt(p/2)}`.
pub fn qam4_constellation(power: f64) -> Constellation {
    assert!(power > 0.0, "symbol power must be positive");
    let a = (power / 2.0).sqrt();
    Constellation::new(vec![
        Complex64::new(a, a),
        Complex64::new(-a, a),
        Complex64::new(a, -a),
        Complex64::new(-a, -a),
    ])
}

/// Square M-QAM scaled to average energy `power`.
pub fn square_qam(order: usize, power: f64) -> Constellation {
    let side = (order as f64).sqrt().round() as usize;
    assert!(side * side == order && side >= 2, "order must be a perfect square >= 4");
    let mut points = Vec::with_capacity(order);
    for i in 0..side {
        for q in 0..side {
            let re = 2.0 * i as f64 - (side as f64 - 1.0);
            let im = 2.0 * q as f64 - (side as f64 - 1.0);
            points.push(Complex64::new(re, im));
        }
    }
    let energy = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / order as f64;
    let s = (power / energy).sqrt();
    Constellation::new(points.into_iter().map(|p| p * s).collect())
}

/// Large-scale gain in dB at distance `d_m` meters: `-30.5 - 36.7 log10(d)`.
pub fn pathloss_db(d_m: f64) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::Contract(format!("pathloss_db: distance must be positive, got {d_m}")));
    }
    Ok(-30.5 - 36.7 * d_m.log10())
}

/// `grid x grid` access points evenly spaced over `[0, side]^2`.
pub fn place_aps_grid(side_m: f64, grid: usize) -> Vec<Point> {
    assert!(grid >= 1, "grid must be at least 1");
    if grid == 1 {
        return vec![[0.0, 0.0]];
    }
    let step = side_m / (grid - 1) as f64;
    let mut out = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            out.push([i as f64 * step, j as f64 * step]);
        }
    }
    out
}

pub fn sample_ue_positions<R: Rng + ?Sized>(rng: &mut R, count: usize, side_m: f64) -> Vec<Point> {
    (0..count).map(|_| [rng.random::<f64>() * side_m, rng.random::<f64>() * side_m]).collect()
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Per-(AP, UE) covariance blocks `Xi_kl = beta_kl I_N`, indexed `l * K + k`.
pub fn build_covariance(aps: &[Point], ues: &[Point], antennas: usize) -> Result<Vec<CMat>> {
    let mut blocks = Vec::with_capacity(aps.len() * ues.len());
    for &ap in aps {
        for &ue in ues {
            let beta = 10f64.powf(pathloss_db(distance(ap, ue))? / 10.0);
            blocks.push(CMat::scaled_identity(antennas, beta));
        }
    }
    Ok(blocks)
}

/// Circularly-symmetric complex normal with variance `var`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Parameters that define a deployment. Positions are regenerated from the
/// RNG when absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub side_m: f64,
    pub ap_grid: usize,
    pub num_ues: usize,
    pub antennas: usize,
    /// Defaults to `num_ues` (orthogonal identity pilots).
    #[serde(default)]
    pub pilot_len: Option<usize>,
    pub data_len: usize,
    pub tx_power_mw: f64,
    pub noise_var_mw: f64,
    /// Use the literal `X_p = I` rather than scaling pilots to the data power.
    #[serde(default)]
    pub pilot_unit_energy: bool,
    /// Custom K x P pilot matrix as `[re, im]` pairs, row per UE.
    #[serde(default)]
    pub pilot_matrix: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    pub ap_positions: Option<Vec<Point>>,
    #[serde(default)]
    pub ue_positions: Option<Vec<Point>>,
}

impl ScenarioParams {
    /// 16 APs on a 4x4 grid over a 400 m square, 8 single-antenna UEs,
    /// 14 dBm transmit power and -96 dBm noise.
    pub fn default_deployment(data_len: usize) -> Self {
        Self {
            side_m: 400.0,
            ap_grid: 4,
            num_ues: 8,
            antennas: 1,
            pilot_len: None,
            data_len,
            tx_power_mw: 10f64.powf(14.0 / 10.0),
            noise_var_mw: 10f64.powf(-96.0 / 10.0),
            pilot_unit_energy: false,
            pilot_matrix: None,
            ap_positions: None,
            ue_positions: None,
        }
    }
}

/// One deployment: geometry, powers, channel statistics, pilots and alphabet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub num_aps: usize,
    pub num_ues: usize,
    pub antennas: usize,
    pub pilot_len: usize,
    pub data_len: usize,
    pub ap_positions: Vec<Point>,
    pub ue_positions: Vec<Point>,
    pub tx_power: f64,
    pub noise_var: f64,
    /// K x P.
    pub pilots: DMatrix<Complex64>,
    pub constellation: Constellation,
    /// N x N blocks of the per-AP channel covariance, indexed `l * K + k`.
    pub channel_cov: Vec<CMat>,
}

impl Scenario {
    pub fn from_params<R: Rng + ?Sized>(params: &ScenarioParams, rng: &mut R) -> Result<Self> {
        if params.num_ues == 0 || params.antennas == 0 || params.ap_grid == 0 {
            return Err(Error::Config("ap_grid, num_ues and antennas must be positive".into()));
        }
        if !(params.tx_power_mw > 0.0) || !(params.noise_var_mw >= 0.0) {
            return Err(Error::Config("tx power must be positive and noise variance nonnegative".into()));
        }
        let aps = match &params.ap_positions {
            Some(p) => p.clone(),
            None => place_aps_grid(params.side_m, params.ap_grid),
        };
        let ues = match &params.ue_positions {
            Some(p) if p.len() == params.num_ues => p.clone(),
            Some(p) => {
                return Err(Error::Config(format!(
                    "ue_positions has {} entries, expected {}",
                    p.len(),
                    params.num_ues
                )))
            }
            None => sample_ue_positions(rng, params.num_ues, params.side_m),
        };
        let pilots = build_pilots(params)?;
        let channel_cov = build_covariance(&aps, &ues, params.antennas)?;
        Ok(Self {
            num_aps: aps.len(),
            num_ues: params.num_ues,
            antennas: params.antennas,
            pilot_len: pilots.ncols(),
            data_len: params.data_len,
            ap_positions: aps,
            ue_positions: ues,
            tx_power: params.tx_power_mw,
            noise_var: params.noise_var_mw,
            pilots,
            constellation: qam4_constellation(params.tx_power_mw),
            channel_cov,
        })
    }

    /// Scenario with explicit large-scale gains `betas[l][k]` and no geometry.
    pub fn from_large_scale(
        betas: &[Vec<f64>],
        antennas: usize,
        data_len: usize,
        tx_power: f64,
        noise_var: f64,
        constellation: Constellation,
    ) -> Self {
        let num_aps = betas.len();
        let num_ues = betas.first().map_or(0, Vec::len);
        let channel_cov = betas
            .iter()
            .flat_map(|row| {
                assert_eq!(row.len(), num_ues, "ragged large-scale matrix");
                row.iter().map(|&b| CMat::scaled_identity(antennas, b))
            })
            .collect();
        let s = Complex64::new(tx_power.sqrt(), 0.0);
        Self {
            num_aps,
            num_ues,
            antennas,
            pilot_len: num_ues,
            data_len,
            ap_positions: Vec::new(),
            ue_positions: Vec::new(),
            tx_power,
            noise_var,
            pilots: DMatrix::identity(num_ues, num_ues) * s,
            constellation,
            channel_cov,
        }
    }

    pub fn cov_block(&self, l: usize, k: usize) -> &CMat {
        &self.channel_cov[l * self.num_ues + k]
    }

    /// `beta_kl`, the mean per-antenna channel gain.
    pub fn large_scale(&self, l: usize, k: usize) -> f64 {
        self.cov_block(l, k).trace_re() / self.antennas as f64
    }

    /// Full `NK x NK` covariance of `vec(H_l)`.
    pub fn dense_covariance(&self, l: usize) -> DMatrix<Complex64> {
        let n = self.antennas;
        let mut xi = DMatrix::zeros(n * self.num_ues, n * self.num_ues);
        for k in 0..self.num_ues {
            let block = self.cov_block(l, k);
            for i in 0..n {
                for j in 0..n {
                    xi[(k * n + i, k * n + j)] = block[(i, j)];
                }
            }
        }
        xi
    }
}

fn build_pilots(params: &ScenarioParams) -> Result<DMatrix<Complex64>> {
    let k = params.num_ues;
    if let Some(rows) = &params.pilot_matrix {
        let p = rows.first().map_or(0, Vec::len);
        if rows.len() != k || p == 0 || rows.iter().any(|r| r.len() != p) {
            return Err(Error::Config(format!("pilot_matrix must be {k} x P with P >= 1")));
        }
        if params.pilot_len.is_some_and(|pl| pl != p) {
            return Err(Error::Config("pilot_len disagrees with pilot_matrix".into()));
        }
        return Ok(DMatrix::from_fn(k, p, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])));
    }
    let p = params.pilot_len.unwrap_or(k);
    if p != k {
        return Err(Error::Config(format!(
            "pilot_len {p} != num_ues {k} requires an explicit pilot_matrix"
        )));
    }
    let amp = if params.pilot_unit_energy { 1.0 } else { params.tx_power_mw.sqrt() };
    Ok(DMatrix::identity(k, k) * Complex64::new(amp, 0.0))
}

/// Small-scale fading: `h_lk`, indexed `l * K + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub num_ues: usize,
    pub columns: Vec<CVec>,
}

impl ChannelRealization {
    pub fn column(&self, l: usize, k: usize) -> &CVec {
        &self.columns[l * self.num_ues + k]
    }

    /// `H_l`, N x K.
    pub fn matrix(&self, l: usize) -> DMatrix<Complex64> {
        let cols = &self.columns[l * self.num_ues..(l + 1) * self.num_ues];
        let n = cols[0].len();
        DMatrix::from_fn(n, self.num_ues, |i, k| cols[k][i])
    }
}

/// Draws `vec(H_l) ~ CN(0, Xi_l)` independently over APs and UEs.
pub fn sample_channel<R: Rng + ?Sized>(rng: &mut R, scenario: &Scenario) -> ChannelRealization {
    let n = scenario.antennas;
    let columns = scenario
        .channel_cov
        .iter()
        .map(|block| {
            let w = CVec::from_fn(n, |_| complex_normal(rng, 1.0));
            covariance_sqrt(block).mul_vec(&w)
        })
        .collect();
    ChannelRealization { num_ues: scenario.num_ues, columns }
}

/// A square root `S` with `S S^H = block`; diagonal blocks take the fast path.
fn covariance_sqrt(block: &CMat) -> CMat {
    let n = block.dim();
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || block[(i, j)].norm() == 0.0));
    if diagonal {
        let d: Vec<f64> = (0..n).map(|i| block[(i, i)].re.max(0.0).sqrt()).collect();
        return CMat::from_real_diag(&d);
    }
    let eig = block.hermitian_eigen();
    let v = &eig.vectors;
    CMat::from_fn(n, |i, j| v[(i, j)] * eig.values[j].max(0.0).sqrt())
}

/// `N x (P + T)` noise per AP with i.i.d. `CN(0, sigma^2)` entries.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, scenario: &Scenario) -> Vec<DMatrix<Complex64>> {
    let cols = scenario.pilot_len + scenario.data_len;
    (0..scenario.num_aps)
        .map(|_| DMatrix::from_fn(scenario.antennas, cols, |_, _| complex_normal(rng, scenario.noise_var)))
        .collect()
}

/// Data symbols and received pilot/data blocks for one coherence interval.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionBatch {
    /// Constellation indices, `k * T + t`.
    pub symbol_indices: Vec<usize>,
    /// K x T symbol values.
    pub data: DMatrix<Complex64>,
    /// Per AP, N x P.
    pub pilot_obs: Vec<DMatrix<Complex64>>,
    /// Per AP, N x T.
    pub data_obs: Vec<DMatrix<Complex64>>,
}

impl TransmissionBatch {
    pub fn symbol(&self, k: usize, t: usize) -> usize {
        self.symbol_indices[k * self.data.ncols() + t]
    }

    /// `y_lt`.
    pub fn observation(&self, l: usize, t: usize) -> CVec {
        let y = &self.data_obs[l];
        CVec::from_fn(y.nrows(), |i| y[(i, t)])
    }
}

/// Draws uniform symbols and noise, then forms `[Y_p, Y] = H [X_p, X] + N`.
pub fn generate_transmission<R: Rng + ?Sized>(
    rng: &mut R,
    scenario: &Scenario,
    channel: &ChannelRealization,
) -> TransmissionBatch {
    let (k, t) = (scenario.num_ues, scenario.data_len);
    let m = scenario.constellation.len();
    let symbol_indices: Vec<usize> = (0..k * t).map(|_| rng.random_range(0..m)).collect();
    let pts = scenario.constellation.points();
    let data = DMatrix::from_fn(k, t, |i, j| pts[symbol_indices[i * t + j]]);
    let noise = sample_noise(rng, scenario);
    let p = scenario.pilot_len;
    let mut pilot_obs = Vec::with_capacity(scenario.num_aps);
    let mut data_obs = Vec::with_capacity(scenario.num_aps);
    for (l, n_l) in noise.iter().enumerate() {
        let h = channel.matrix(l);
        pilot_obs.push(&h * &scenario.pilots + n_l.columns(0, p));
        data_obs.push(&h * &data + n_l.columns(p, t));
    }
    TransmissionBatch { symbol_indices, data, pilot_obs, data_obs }
}
