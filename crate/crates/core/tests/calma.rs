mod common;

use common::{lp_min_max, TestRng};
use omnipred::calma::{
    calma_boost, calma_game, solve_inner, AuxiliaryClass, BoostConfig, CalmaGamePredictor, CalmaGameState, CalmaPredictor,
    FnClass, InitialScore, LossDerivativeClass, MAX_GAME_GRID,
};
use omnipred::dataio::gen_simulated;
use omnipred::eval::{ece, ma_error};
use omnipred::losses::ThetaGrid;
use omnipred::predictors::{enumerate_linear_candidates, fit_base, Dataset, Forecaster, Predictor};
use proptest::prelude::*;

fn smooth_class() -> FnClass {
    FnClass::new(vec![
        Box::new(|x: &[f64]| 2.0 * x[0] - 1.0),
        Box::new(|x: &[f64]| (6.0 * x[0]).sin()),
        Box::new(|x: &[f64]| if x[0] > 0.3 { 1.0 } else { -1.0 }),
        Box::new(|x: &[f64]| (x[0] * x[0]).min(1.0)),
    ])
}

fn curved_data(n: usize, seed: u64) -> Dataset {
    let mut rng = TestRng::new(seed);
    let mut data = Dataset::new(1);
    for _ in 0..n {
        // Coarse covariates so that cells repeat.
        let x = (rng.unit() * 40.0).floor() / 40.0;
        let p = 0.1 + 0.8 * x * x;
        data.push(&[x], rng.unit() < p).unwrap();
    }
    data
}

#[test]
fn boost_reaches_its_targets() {
    for seed in 0..5 {
        let data = curved_data(2000, seed);
        for alpha in [0.01, 0.03, 0.1] {
            let model = calma_boost(smooth_class(), &data, BoostConfig::new(alpha, 10)).unwrap();
            let trace = model.trace();
            assert!(trace.converged, "seed {seed} alpha {alpha}");
            let ma = ma_error(&model, model.aux(), &data).unwrap();
            assert!(ma <= alpha + 1e-12, "ma {ma} > {alpha}");
            assert!((ma - trace.final_ma_error).abs() < 1e-9);
            // The last step is a calibration, so every value is its bucket mean.
            assert!(ece(&model, &data).unwrap() < 1e-9);
        }
    }
}

#[test]
fn boost_takes_no_steps_when_already_multiaccurate() {
    let data = curved_data(500, 3);
    let constant = FnClass::new(vec![Box::new(|_: &[f64]| 1.0)]);
    let model = calma_boost(constant, &data, BoostConfig::new(0.01, 10)).unwrap();
    let t = model.trace();
    assert_eq!(t.ma_steps, 0);
    assert_eq!(t.calibration_steps, 1);
    assert!(t.converged);
    let empty = FnClass::new(vec![]);
    let model = calma_boost(empty, &data, BoostConfig::new(0.01, 10)).unwrap();
    assert_eq!(model.trace().ma_steps, 0);
    assert_eq!(ma_error(&model, model.aux(), &data).unwrap(), 0.0);
}

#[test]
fn boost_cap_keeps_best_iterate() {
    let data = curved_data(2000, 9);
    let config = BoostConfig {
        max_iters: 3,
        init: InitialScore::Constant(0.0),
        ..BoostConfig::new(0.001, 10)
    };
    let model = calma_boost(smooth_class(), &data, config).unwrap();
    let t = model.trace();
    assert!(t.ma_steps <= 3);
    let ma = ma_error(&model, model.aux(), &data).unwrap();
    assert!((ma - t.final_ma_error).abs() < 1e-9);
}

#[test]
fn boost_state_round_trip() {
    let data = curved_data(800, 4);
    let model = calma_boost(smooth_class(), &data, BoostConfig::new(0.02, 8)).unwrap();
    let json = serde_json::to_string(model.state()).unwrap();
    let back = CalmaPredictor::from_state(smooth_class(), serde_json::from_str(&json).unwrap()).unwrap();
    for (x, _) in data.iter() {
        assert_eq!(model.predict(x).unwrap(), back.predict(x).unwrap());
    }
    let short = FnClass::new(vec![Box::new(|_: &[f64]| 0.0)]);
    assert!(CalmaPredictor::from_state(short, model.state().clone()).is_err());
}

#[test]
fn boost_on_loss_derivatives() {
    let fit = gen_simulated(400, 5);
    let pool = enumerate_linear_candidates(&fit).unwrap();
    let base = fit_base(&pool, &fit, &ThetaGrid::new(8).unwrap()).unwrap();
    let data = gen_simulated(1000, 6);
    let model = calma_boost(LossDerivativeClass::new(base), &data, BoostConfig::new(0.02, 8)).unwrap();
    assert!(model.trace().converged);
    assert!(ma_error(&model, model.aux(), &data).unwrap() <= 0.02);
}

proptest! {
    #[test]
    fn inner_solution_matches_lp(seed: u64, m in 1usize..12) {
        let mut rng = TestRng::new(seed);
        let c: Vec<f64> = (0..m).map(|_| 2.0 * rng.unit() - 1.0).collect();
        let (atoms, value) = solve_inner(&c);
        let v = |j: usize| j as f64 / m as f64;
        let f0: Vec<f64> = (1..=m).map(|j| -v(j) * c[j - 1]).collect();
        let f1: Vec<f64> = (1..=m).map(|j| (1.0 - v(j)) * c[j - 1]).collect();
        prop_assert!((value - lp_min_max(&f0, &f1)).abs() < 1e-12);
        prop_assert!(value <= 1.0 / m as f64 + 1e-12);
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let a0: f64 = atoms.iter().map(|&(j, w)| w * f0[j - 1]).sum();
        let a1: f64 = atoms.iter().map(|&(j, w)| w * f1[j - 1]).sum();
        prop_assert!((a0.max(a1) - value).abs() < 1e-12);
    }
}

fn log_two_cosh(z: f64) -> f64 {
    z.abs() + (-2.0 * z.abs()).exp().ln_1p()
}

/// Replays the game with the sign-function weights in product form:
/// `Σ_b exp(η G_b) = Π_j 2cosh(η W_j)` and the level bias at `j` is the
/// sign-function share times `tanh(η W_j)`.
fn factorized_rounds<A: AuxiliaryClass>(aux: &A, data: &Dataset, m: usize, eta: f64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let k_len = aux.len();
    let mut aux_gain = vec![0.0; k_len];
    let mut level = vec![0.0; m];
    let mut out = Vec::new();
    let mut g = Vec::new();
    for (x, y) in data.iter() {
        let log_signs: f64 = level.iter().map(|w| log_two_cosh(eta * w)).sum();
        let mut logits: Vec<f64> = aux_gain.iter().flat_map(|&s| [eta * s, -eta * s]).collect();
        logits.push(log_signs);
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = top + logits.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        let share = (log_signs - log_z).exp();
        let aux_signed: Vec<f64> = aux_gain
            .iter()
            .map(|&s| (eta * s - log_z).exp() - (-eta * s - log_z).exp())
            .collect();
        let bias: Vec<f64> = level.iter().map(|w| share * (eta * w).tanh()).collect();

        aux.eval(x, &mut g).unwrap();
        let shift: f64 = aux_signed.iter().zip(&g).map(|(a, b)| a * b).sum();
        let c: Vec<f64> = bias.iter().map(|b| shift + b).collect();
        let (atoms, _) = solve_inner(&c);
        let yv = y as u8 as f64;
        let mean: f64 = atoms.iter().map(|&(j, w)| w * j as f64 / m as f64).sum();
        for (s, gv) in aux_gain.iter_mut().zip(&g) {
            *s += gv * (yv - mean);
        }
        for &(j, w) in &atoms {
            level[j - 1] += w * (yv - j as f64 / m as f64);
        }
        out.push((aux_signed, bias));
    }
    out
}

#[test]
fn game_weights_match_product_form() {
    for (m, eta) in [(3usize, 0.2), (6, 0.05), (10, 0.5)] {
        let data = curved_data(300, m as u64);
        let model = calma_game(smooth_class(), &data, m, eta).unwrap();
        let oracle = factorized_rounds(&smooth_class(), &data, m, eta);
        for (r, (aux_signed, bias)) in model.state().rounds.iter().zip(&oracle) {
            for (a, b) in r.aux_signed.iter().zip(aux_signed) {
                assert!((a - b).abs() < 1e-9, "m {m}: {a} vs {b}");
            }
            for (a, b) in r.level_bias.iter().zip(bias) {
                assert!((a - b).abs() < 1e-9, "m {m}: {a} vs {b}");
            }
        }
        assert!(model.max_inner_value() <= 1.0 / m as f64 + 1e-12);
    }
}

#[test]
fn game_prediction_is_a_distribution_and_round_trips() {
    let data = curved_data(400, 8);
    let model = calma_game(smooth_class(), &data, 5, 0.1).unwrap();
    let json = serde_json::to_string(model.state()).unwrap();
    let state: CalmaGameState = serde_json::from_str(&json).unwrap();
    let back = CalmaGamePredictor::from_state(smooth_class(), state).unwrap();
    for x in [[0.0], [0.25], [0.9]] {
        let d = model.distribution(&x).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(d, back.distribution(&x).unwrap());
        let f = model.forecast(&x).unwrap();
        assert!(f.atoms().iter().all(|&(v, _)| v > 0.0 && v <= 1.0));
    }
    assert!(calma_game(smooth_class(), &data, MAX_GAME_GRID + 1, 0.1).is_err());
    assert!(calma_game(smooth_class(), &data, 4, 0.0).is_err());
}
