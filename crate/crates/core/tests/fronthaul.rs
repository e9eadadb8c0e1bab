mod common;

use cellfree_ep::fronthaul::{ap_extract, cpu_aggregate, decode_frame, encode_frame, frame_len, run_split};
use cellfree_ep::gaussian::{cat_multiply, CategoricalMessage, Diagnostics};
use cellfree_ep::jcd::{infer, init_state, run_schedule, var_to_factor_x, JcdParams};
use cellfree_ep::scenario::{qam4_constellation, square_qam, Scenario};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn split_ledger(l: usize, k: usize, t: usize, iterations: usize) -> cellfree_ep::fronthaul::FronthaulLedger {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let betas = vec![vec![1.0; k]; l];
    let scenario = Scenario::from_large_scale(&betas, 1, t, 1.0, 0.1, qam4_constellation(1.0));
    let tr = trial(&mut rng, &scenario);
    let state = init_state(&scenario, &tr.priors, &tr.batch.data_obs, &JcdParams::default()).unwrap();
    run_split(state, iterations).unwrap().ledger
}

#[test]
fn ledger_counts_one_message_per_link_and_channel_use() {
    let ledger = split_ledger(16, 8, 10, 1);
    assert_eq!(ledger.iterations.len(), 1);
    let it = ledger.iterations[0];
    assert_eq!((it.uplink_count, it.downlink_count), (1280, 1280));
    assert_eq!(it.uplink_bytes, 1280 * frame_len(4));
    assert_eq!(it.downlink_bytes, 1280 * frame_len(4));
    ledger.check(16, 8, 10, 4).unwrap();
    assert!(ledger.check(16, 8, 9, 4).is_err());
}

#[test]
fn ledger_totals_scale_with_iterations() {
    let ledger = split_ledger(3, 2, 4, 10);
    ledger.check(3, 2, 4, 4).unwrap();
    let total = ledger.total();
    assert_eq!((total.uplink_count, total.downlink_count), (240, 240));
    assert_eq!(total.uplink_bytes, 240 * frame_len(4));

    let single = split_ledger(1, 3, 5, 2);
    single.check(1, 3, 5, 4).unwrap();
    assert_eq!(single.iterations[0].uplink_count, 15);
}

#[test]
fn frame_layout_is_pinned() {
    let msg = CategoricalMessage::from_normalized(&[0.125, 0.375, 0.5, 0.0]).unwrap();
    let frame = encode_frame(7, 2, 65_537, &msg);
    assert_eq!(frame.len(), frame_len(4));
    assert_eq!(frame_len(16), 140);
    assert_eq!(&frame[..12], &[7, 0, 0, 0, 2, 0, 0, 0, 1, 0, 1, 0]);
    assert_eq!(&frame[12..20], &0.125f64.to_le_bytes());
    assert_eq!(&frame[36..44], &0.0f64.to_le_bytes());

    let ((l, k, t), back) = decode_frame(&frame, 4).unwrap();
    assert_eq!((l, k, t), (7, 2, 65_537));
    assert_eq!(back, msg);
    assert!(decode_frame(&frame[..frame.len() - 1], 4).is_err());
    assert!(decode_frame(&frame, 3).is_err());
}

#[test]
fn frames_round_trip_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let msg = random_pmf(&mut rng, 16);
        let (_, back) = decode_frame(&encode_frame(1, 2, 3, &msg), 16).unwrap();
        assert_eq!(back, msg);
    }
}

#[test]
fn cpu_aggregate_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut diag = Diagnostics::default();
    let m = random_pmf(&mut rng, 4);
    assert_eq!(cpu_aggregate([&m], &mut diag), m);

    let u = CategoricalMessage::uniform(4);
    assert_eq!(cpu_aggregate([&u, &u, &u], &mut diag), u);

    let msgs: Vec<_> = (0..4).map(|_| random_pmf(&mut rng, 4)).collect();
    let agg = cpu_aggregate(&msgs, &mut diag);
    let direct: Vec<f64> = (0..4).map(|s| msgs.iter().map(|m| m.weights()[s]).product()).collect();
    let total: f64 = direct.iter().sum();
    for (a, d) in agg.weights().iter().zip(&direct) {
        assert!((a - d / total).abs() < 1e-12);
    }
}

#[test]
fn ap_extract_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut diag = Diagnostics::default();
    let own = random_pmf(&mut rng, 16);
    let flat = ap_extract(&own, &own, &mut diag);
    assert!(flat.weights().iter().all(|w| (w - 1.0 / 16.0).abs() < 1e-12));

    let total = random_pmf(&mut rng, 16);
    let got = ap_extract(&total, &CategoricalMessage::uniform(16), &mut diag);
    assert!(l1(got.weights(), total.weights()) < 1e-12);
}

#[test]
fn ap_extract_matches_the_direct_product_of_other_aps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cons = square_qam(16, 1.0);
    let state = random_state(&mut rng, (3, 2, 2, 1), &cons, JcdParams::default(), 2);
    let mut diag = Diagnostics::default();
    for i in 0..4 {
        let (k, t) = (i / 2, i % 2);
        let total = cpu_aggregate(state.aps.iter().map(|ap| &ap.psi1_to_x[i]), &mut diag);
        for l in 0..3 {
            let extracted = ap_extract(&total, &state.aps[l].psi1_to_x[i], &mut diag);
            let with_prior = cat_multiply([&state.symbol_prior[i], &extracted], &mut diag);
            let direct = var_to_factor_x(&state, l, k, t, &mut diag);
            assert!(l1(with_prior.weights(), direct.weights()) < 1e-10);
        }
    }
}

#[test]
fn split_execution_is_bit_identical_to_monolithic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (dims, cons) in [((3, 2, 3, 1), qam4_constellation(1.0)), ((2, 3, 2, 2), square_qam(16, 1.0))] {
        let initial = random_state(&mut rng, dims, &cons, JcdParams::default(), 0);
        let mut mono = initial.clone();
        run_schedule(&mut mono, 6);
        let split = run_split(initial, 6).unwrap();
        assert_eq!(split.state, mono);
        assert_eq!(split.result, infer(&mono));
        split.ledger.check(dims.0, dims.1, dims.2, cons.len()).unwrap();
    }
}
