//! Link metrics, weak-link filtering, empirical CDFs and power units.

use crate::error::{Error, Result};
use crate::linalg::CVec;
use crate::scenario::Scenario;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Fraction of mismatching symbol decisions.
pub fn ser(decisions: &[usize], truth: &[usize]) -> Result<f64> {
    if decisions.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} decisions for {} symbols",
            decisions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Contract("SER of an empty block".into()));
    }
    let wrong = decisions.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// `||h_hat - h||^2 / ||h||^2`; `None` for a zero channel.
pub fn nmse(estimate: &CVec, truth: &CVec) -> Option<f64> {
    let power = truth.norm_sqr();
    if power > 0.0 {
        Some((estimate - truth).norm_sqr() / power)
    } else {
        None
    }
}

/// True when link `(l, k)` is excluded: mean received power `p * beta` below
/// the noise variance.
pub fn weak_link_filter(scenario: &Scenario, l: usize, k: usize) -> bool {
    scenario.tx_power * scenario.large_scale(l, k) < scenario.noise_var
}

/// Right-continuous empirical CDF as `(value, F(value))` at each distinct value.
pub fn empirical_cdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::Contract("empirical CDF of no samples".into()));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::Contract("NaN sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = f,
            _ => out.push((*v, f)),
        }
    }
    Ok(out)
}

/// Linear-interpolated quantile of the sorted samples, `q` in `[0, 1]`.
pub fn quantile(samples: &[f64], q: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn ser_examples() {
        assert_eq!(ser(&[0, 1, 2], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(ser(&[1, 2, 3], &[0, 1, 2]).unwrap(), 1.0);
        let truth = [0usize; 12];
        let mut dec = [0usize; 12];
        dec[..3].fill(1);
        assert_eq!(ser(&dec, &truth).unwrap(), 0.25);
        assert!(ser(&[], &[]).is_err());
        assert!(ser(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn nmse_examples() {
        let h = CVec::from_slice(&[Complex64::new(1.0, -2.0), Complex64::new(0.5, 0.0)]);
        assert_eq!(nmse(&h, &h), Some(0.0));
        assert_eq!(nmse(&CVec::zeros(2), &h), Some(1.0));
        assert!((nmse(&h.scale_real(2.0), &h).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmse(&h, &CVec::zeros(2)), None);
    }

    #[test]
    fn cdf_examples() {
        let c = empirical_cdf(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(c[1], (2.0, 2.0 / 3.0));
        let d = empirical_cdf(&[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(d, vec![(1.0, 0.25), (2.0, 0.75), (3.0, 1.0)]);
        assert!(empirical_cdf(&[]).is_err());
    }

    #[test]
    fn units_round_trip() {
        assert!((dbm_to_mw(14.0) - 25.118864315095795).abs() < 1e-12);
        assert!((dbm_to_mw(-96.0) - 2.5118864315095823e-10).abs() < 1e-22);
        assert!((mw_to_dbm(dbm_to_mw(-37.5)) + 37.5).abs() < 1e-12);
    }

    #[test]
    fn quantile_median() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), Some(2.0));
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), Some(2.5));
        assert_eq!(quantile(&[], 0.5), None);
    }
}
