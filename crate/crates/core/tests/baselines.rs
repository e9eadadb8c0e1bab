mod common;

use cellfree_ep::baselines::{
    centralized_lmmse_detect, lmmse_filter_output, pilot_only_nmse_reference, stack_channels, stack_observations,
};
use cellfree_ep::linalg::CVec;
use cellfree_ep::pilot::ChannelPrior;
use cellfree_ep::scenario::{complex_normal, generate_transmission, qam4_constellation, sample_channel, Scenario};
use common::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows, cols, |_, _| complex_normal(rng, 1.0))
}

fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let scale = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}

/// A random unitary from the QR factor of a Gaussian matrix.
fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<Complex64> {
    random_dense(rng, n, n).qr().q()
}

#[test]
fn lmmse_matches_the_observation_domain_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (ln, k, t, s2, p) in [(4, 2, 3, 0.1, 1.0), (16, 8, 10, 0.5, 2.5), (3, 3, 1, 1e-3, 0.7)] {
        let h = random_dense(&mut rng, ln, k);
        let y = random_dense(&mut rng, ln, t);
        let got = lmmse_filter_output(&y, &h, s2, p).unwrap();
        let cov = &h * h.adjoint() * Complex64::new(p, 0.0) + DMatrix::identity(ln, ln) * Complex64::new(s2, 0.0);
        let want = h.adjoint() * Complex64::new(p, 0.0) * inverse(&cov) * &y;
        assert!(max_abs_diff(&want, &got) < 1e-10, "L*N={ln} K={k}");

        // Regularized least squares: (H^H H + s2/p I) x = H^H y.
        let reg = h.adjoint() * &h + DMatrix::identity(k, k) * Complex64::new(s2 / p, 0.0);
        assert!(max_abs_diff(&(h.adjoint() * &y), &(reg * &got)) < 1e-10);
    }
}

#[test]
fn lmmse_is_invariant_to_a_common_unitary_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, y) = (random_dense(&mut rng, 6, 3), random_dense(&mut rng, 6, 4));
    let u = random_unitary(&mut rng, 6);
    let a = lmmse_filter_output(&y, &h, 0.2, 1.0).unwrap();
    let b = lmmse_filter_output(&(&u * &y), &(&u * &h), 0.2, 1.0).unwrap();
    assert!(max_abs_diff(&a, &b) < 1e-10);
}

#[test]
fn lmmse_trivial_channel_shrinks_the_observation() {
    let y = DMatrix::from_row_slice(1, 2, &[c(2.0, -1.0), c(0.0, 3.0)]);
    let h = DMatrix::from_element(1, 1, c(1.0, 0.0));
    let got = lmmse_filter_output(&y, &h, 0.5, 2.0).unwrap();
    // p / (p + s2) = 0.8
    assert!((got[(0, 0)] - c(1.6, -0.8)).norm() < 1e-14);
    assert!((got[(0, 1)] - c(0.0, 2.4)).norm() < 1e-14);
}

#[test]
fn lmmse_detects_exactly_on_orthogonal_noiseless_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cons = qam4_constellation(1.0);
    let h = random_unitary(&mut rng, 4).columns(0, 3).into_owned() * Complex64::new(3.0, 0.0);
    let truth: Vec<usize> = (0..3 * 5).map(|i| (i * 7) % 4).collect();
    let x = DMatrix::from_fn(3, 5, |k, t| cons.points()[truth[k * 5 + t]]);
    let y = &h * &x;
    let soft = lmmse_filter_output(&y, &h, 1e-12, 1.0).unwrap();
    assert!(max_abs_diff(&x, &soft) < 1e-10);
    assert_eq!(centralized_lmmse_detect(&y, &h, 1e-12, 1.0, &cons).unwrap(), truth);
}

#[test]
fn lmmse_rejects_bad_inputs() {
    let h = DMatrix::from_element(2, 1, c(1.0, 0.0));
    let y = DMatrix::from_element(3, 1, c(1.0, 0.0));
    assert!(lmmse_filter_output(&y, &h, 0.1, 1.0).is_err());
    assert!(lmmse_filter_output(&y.rows(0, 2).into_owned(), &h, 0.1, 0.0).is_err());
}

#[test]
fn stacking_orders_aps_then_antennas() {
    let blocks = vec![
        DMatrix::from_row_slice(2, 1, &[c(1.0, 0.0), c(2.0, 0.0)]),
        DMatrix::from_row_slice(2, 1, &[c(3.0, 0.0), c(4.0, 0.0)]),
    ];
    let y = stack_observations(&blocks);
    assert_eq!(y.iter().map(|v| v.re).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0, 4.0]);

    // Means indexed l * K + k with N = 2, K = 2, L = 2.
    let means: Vec<CVec> = (0..4).map(|i| CVec::from_slice(&[c(i as f64, 0.0), c(i as f64, 1.0)])).collect();
    let h = stack_channels(&means, 2);
    assert_eq!(h.shape(), (4, 2));
    assert_eq!(h[(0, 1)], c(1.0, 0.0));
    assert_eq!(h[(3, 0)], c(2.0, 1.0));
}

/// Per-link pilot-only NMSE pooled over draws as total error over total
/// power, which converges to `sigma^2 / (p beta + sigma^2)`.
#[test]
fn pilot_only_estimate_has_the_wiener_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (beta, s2) = (2.0, 0.5);
    let scenario = Scenario::from_large_scale(&[vec![beta]], 1, 1, 1.0, s2, qam4_constellation(1.0));
    let (mut err, mut power) = (0.0, 0.0);
    for _ in 0..10_000 {
        let ch = sample_channel(&mut rng, &scenario);
        let batch = generate_transmission(&mut rng, &scenario, &ch);
        let prior = ChannelPrior::estimate(&scenario, &batch).unwrap();
        err += (&prior.entries[0].mean - &ch.columns[0]).norm_sqr();
        power += ch.columns[0].norm_sqr();
    }
    let want = s2 / (beta + s2);
    assert!((err / power / want - 1.0).abs() < 0.05, "got {}, want {want}", err / power);
}

#[test]
fn pilot_only_error_vanishes_without_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scenario = Scenario::from_large_scale(&[vec![1.0, 0.3]], 2, 1, 1.0, 1e-14, qam4_constellation(1.0));
    for _ in 0..100 {
        let ch = sample_channel(&mut rng, &scenario);
        let batch = generate_transmission(&mut rng, &scenario, &ch);
        let prior = ChannelPrior::estimate(&scenario, &batch).unwrap();
        for v in pilot_only_nmse_reference(&scenario, &prior, &ch.columns) {
            assert!(v.unwrap() < 1e-10);
        }
    }
}

#[test]
fn pilot_only_reference_excludes_weak_links() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scenario = Scenario::from_large_scale(&[vec![1.0, 0.0], vec![0.05, 2.0]], 1, 1, 1.0, 0.1, qam4_constellation(1.0));
    let ch = sample_channel(&mut rng, &scenario);
    let batch = generate_transmission(&mut rng, &scenario, &ch);
    // A zero-gain link has a singular channel covariance, which the estimator rejects.
    assert!(ChannelPrior::estimate(&scenario, &batch).is_err());
    let scenario = Scenario::from_large_scale(&[vec![1.0, 1e-6], vec![0.05, 2.0]], 1, 1, 1.0, 0.1, qam4_constellation(1.0));
    let ch = sample_channel(&mut rng, &scenario);
    let batch = generate_transmission(&mut rng, &scenario, &ch);
    let prior = ChannelPrior::estimate(&scenario, &batch).unwrap();
    let got = pilot_only_nmse_reference(&scenario, &prior, &ch.columns);
    assert!(got[0].is_some() && got[3].is_some());
    assert!(got[1].is_none() && got[2].is_none());
}
