mod common;

use common::TestRng;
use omnipred::dataio::{gen_simulated, FiniteDistribution};
use omnipred::eval::{best_base_model, ece, ma_error, omni_error, omni_error_population, prop1_sandwich};
use omnipred::game::run_two_player;
use omnipred::losses::{expected_weighted_loss, weighted_loss, ThetaGrid};
use omnipred::predictors::{
    enumerate_linear_candidates, erm_fit, fit_base, BasePredictorSet, Competitor, Dataset, FnPredictor, Forecaster,
    Predictor,
};
use omnipred::calma::FnClass;

/// The simulated distribution written out as 100 rows with exact frequencies.
fn population_rows() -> Dataset {
    let mut d = Dataset::new(1);
    for (x, rows, pos) in [(0.05, 10, 3), (0.45, 60, 54), (0.85, 30, 12)] {
        for r in 0..rows {
            d.push(&[x], r < pos).unwrap();
        }
    }
    d
}

fn population_risk(f: impl Fn(f64) -> f64, theta: f64) -> f64 {
    let dist = FiniteDistribution::simulated();
    dist.support
        .iter()
        .zip(dist.px.iter().zip(&dist.py_given_x))
        .map(|(&x, (&px, &py))| px * expected_weighted_loss(theta, f(x), py).unwrap())
        .sum()
}

#[test]
fn population_optima_disagree_at_the_low_point() {
    // Brute force over a grid of affine functions, independent of the
    // candidate enumeration.
    let best_at = |theta: f64| {
        let mut best = (f64::INFINITY, Vec::new());
        for a in -80..=80 {
            for b in -80..=80 {
                let (b0, b1) = (a as f64 / 16.0, b as f64 / 8.0);
                let f = |x: f64| (b0 + b1 * x).clamp(0.0, 1.0);
                let r = population_risk(f, theta);
                if r < best.0 - 1e-12 {
                    best = (r, vec![f(0.05)]);
                } else if (r - best.0).abs() <= 1e-12 {
                    best.1.push(f(0.05));
                }
            }
        }
        best
    };
    let (_, low) = best_at(0.35);
    assert!(low.iter().all(|&v| v <= 0.35));
    let (_, high) = best_at(0.75);
    assert!(high.iter().all(|&v| v > 0.75));

    // Same conclusion through the library's candidates and ERM.
    let pop = population_rows();
    let cands = enumerate_linear_candidates(&pop).unwrap();
    let f35 = &cands[erm_fit(&cands, &pop, 0.35).unwrap().index];
    let f75 = &cands[erm_fit(&cands, &pop, 0.75).unwrap().index];
    assert!(f35.predict(&[0.05]).unwrap() <= 0.35);
    assert!(f75.predict(&[0.05]).unwrap() > 0.75);
}

#[test]
fn candidates_realize_every_affine_pattern() {
    let pts = [0.05, 0.45, 0.85];
    let data = Dataset::from_parts(1, pts.to_vec(), vec![false; 3]).unwrap();
    let cands = enumerate_linear_candidates(&data).unwrap();
    assert_eq!(cands.len(), 8);
    for theta in [0.1, 0.35, 0.5, 0.75, 0.95] {
        let pattern = |f: &dyn Fn(f64) -> f64| pts.iter().map(|&x| f(x) > theta).collect::<Vec<_>>();
        let ours: Vec<Vec<bool>> = cands.iter().map(|c| pattern(&|x| c.predict(&[x]).unwrap())).collect();
        let mut brute = std::collections::BTreeSet::new();
        for a in -100..=100 {
            for b in -100..=100 {
                let (b0, b1) = (a as f64 / 20.0, b as f64 / 5.0);
                brute.insert(pattern(&|x| (b0 + b1 * x).clamp(0.0, 1.0)));
            }
        }
        // 4 up-thresholds and 4 down-thresholds share the all/none patterns.
        assert_eq!(brute.len(), 6);
        for p in &brute {
            assert!(ours.contains(p), "θ {theta}: pattern {p:?} missing");
        }
    }
    let dup = Dataset::from_parts(1, vec![0.05, 0.05, 0.45, 0.85, 0.85], vec![true; 5]).unwrap();
    assert_eq!(enumerate_linear_candidates(&dup).unwrap().len(), 8);
    let one = Dataset::from_parts(1, vec![0.3], vec![true]).unwrap();
    assert!(enumerate_linear_candidates(&one).unwrap().len() >= 2);
    let two_d = Dataset::from_parts(2, vec![0.1, 0.2], vec![true]).unwrap();
    assert!(enumerate_linear_candidates(&two_d).is_err());
}

#[test]
fn erm_is_optimal_and_excess_risk_shrinks() {
    let pop = population_rows();
    let cands = enumerate_linear_candidates(&pop).unwrap();
    let grid = ThetaGrid::new(16).unwrap();
    let best: Vec<f64> = grid
        .thetas()
        .iter()
        .map(|&t| cands.iter().map(|c| population_risk(|x| c.predict(&[x]).unwrap(), t)).fold(f64::INFINITY, f64::min))
        .collect();
    let reps = 60;
    let mut means = Vec::new();
    for n in [100, 400, 1600] {
        let mut total = 0.0;
        for r in 0..reps {
            let data = gen_simulated(n, 1000 * n as u64 + r);
            let mut worst: f64 = 0.0;
            for (i, &t) in grid.thetas().iter().enumerate() {
                let fit = erm_fit(&cands, &data, t).unwrap();
                // No candidate beats the returned one on the sample.
                for c in &cands {
                    let risk: f64 = data.iter().map(|(x, y)| weighted_loss(t, c.predict(x).unwrap(), y).unwrap()).sum::<f64>()
                        / n as f64;
                    assert!(risk >= fit.risk - 1e-12);
                }
                let pop_risk = population_risk(|x| cands[fit.index].predict(&[x]).unwrap(), t);
                worst = worst.max(pop_risk - best[i]);
            }
            total += worst;
        }
        means.push(total / reps as f64);
    }
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
}

fn simulated_base(m: usize) -> BasePredictorSet {
    let fit = gen_simulated(400, 77);
    let pool = enumerate_linear_candidates(&fit).unwrap();
    fit_base(&pool, &fit, &ThetaGrid::new(m).unwrap()).unwrap()
}

#[test]
fn omni_error_matches_naive_loop() {
    let base = simulated_base(8);
    let test = gen_simulated(700, 5);
    let grid = base.grid();
    let train = gen_simulated(200, 6);
    let game = run_two_player(&train, &base, 0.3).unwrap();
    let point = FnPredictor(|x: &[f64]| (0.2 + x[0] * 0.7).min(1.0));
    for model in [&game as &dyn Forecaster, &point as &dyn Forecaster] {
        let report = omni_error(model, &base, &test).unwrap();
        for i in 0..8 {
            let theta = grid.theta(i);
            let mut gap = 0.0;
            for (x, y) in test.iter() {
                let ours: f64 = model
                    .forecast(x)
                    .unwrap()
                    .atoms()
                    .iter()
                    .map(|&(v, w)| w * weighted_loss(theta, v, y).unwrap())
                    .sum();
                let theirs = weighted_loss(theta, base.member_output(i, x).unwrap() as f64 / 8.0, y).unwrap();
                gap += ours - theirs;
            }
            assert!((report.per_theta_gaps[i] - gap / 700.0).abs() < 1e-12);
        }
        let sup = report.per_theta_gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(report.sup_gap, sup);
        assert_eq!(report.argmax_theta, grid.theta(report.argmax_index));
    }
}

#[test]
fn randomized_expectation_matches_sampling() {
    let base = simulated_base(8);
    let game = run_two_player(&gen_simulated(300, 1), &base, 0.5).unwrap();
    let test = gen_simulated(50, 2);
    let exact = omni_error(&game, &base, &test).unwrap();
    let mut rng = TestRng::new(3);
    let draws = 4000;
    let grid = base.grid();
    let forecasts: Vec<_> = test.iter().map(|(x, _)| game.forecast(x).unwrap()).collect();
    for i in [0usize, 3, 7] {
        let theta = grid.theta(i);
        let mut total = 0.0;
        for _ in 0..draws {
            for ((x, y), f) in test.iter().zip(&forecasts) {
                let mut u = rng.unit();
                let mut v = f.atoms().last().unwrap().0;
                for &(val, w) in f.atoms() {
                    if u < w {
                        v = val;
                        break;
                    }
                    u -= w;
                }
                total += weighted_loss(theta, v, y).unwrap()
                    - grid.loss_at(i, base.member_output(i, x).unwrap(), y);
            }
        }
        let mc = total / (draws * test.len()) as f64;
        // Losses are bounded by 1, so 5/sqrt(N) is a generous band.
        let band = 5.0 / ((draws * test.len()) as f64).sqrt();
        assert!((mc - exact.per_theta_gaps[i]).abs() < band, "θ_{i}: {mc} vs {}", exact.per_theta_gaps[i]);
    }
}

#[test]
fn self_comparison_and_rounded_truth() {
    let base = simulated_base(8);
    let test = gen_simulated(300, 12);
    for i in 0..8 {
        let member = FnPredictor(|x: &[f64]| base.member_output(i, x).unwrap() as f64 / 8.0);
        assert_eq!(omni_error(&member, &base, &test).unwrap().per_theta_gaps[i], 0.0);
    }
    // Rounding p* to the grid keeps it on the right side of every θ_i.
    let dist = FiniteDistribution::simulated();
    let truth = |x: &[f64]| {
        let k = dist.support.iter().position(|&s| s == x[0]).unwrap();
        omnipred::losses::round_to_grid(dist.py_given_x[k], 8).unwrap()
    };
    let report = omni_error_population(&FnPredictor(truth), &base, &dist).unwrap();
    assert!(report.sup_gap <= 1e-12, "{:?}", report.per_theta_gaps);
}

#[test]
fn best_base_prefers_truth_and_breaks_ties_low() {
    let base = simulated_base(8);
    let data = gen_simulated(3000, 4);
    let dist = FiniteDistribution::simulated();
    let truth = Competitor::lookup("truth", dist.support.iter().cloned().zip(dist.py_given_x.iter().cloned()).collect()).unwrap();
    let pool = vec![
        Competitor::Constant { value: 0.5 },
        Competitor::Constant { value: 0.0 },
        truth.clone(),
        Competitor::Constant { value: 1.0 },
    ];
    assert_eq!(best_base_model(&pool, &base, &data).unwrap(), 2);
    let twins = vec![Competitor::Constant { value: 0.9 }, truth.clone(), truth];
    assert_eq!(best_base_model(&twins, &base, &data).unwrap(), 1);
    let empty: Vec<Competitor> = Vec::new();
    assert!(best_base_model(&empty, &base, &data).is_err());
    let m1 = simulated_base(1);
    let own = vec![m1.members()[0].competitor.clone()];
    assert_eq!(best_base_model(&own, &m1, &data).unwrap(), 0);
}

#[test]
fn sandwich_examples() {
    let dist = FiniteDistribution::simulated();
    let truth = |x: &[f64]| dist.py_given_x[dist.support.iter().position(|&s| s == x[0]).unwrap()];
    let s = prop1_sandwich(&FnPredictor(truth), &dist, 500).unwrap();
    assert_eq!((s.lower, s.upper), (0.0, 0.0));
    assert!(s.middle.abs() <= 1e-12);

    let point = FiniteDistribution::new(vec![0.5], vec![1.0], vec![1.0]).unwrap();
    let s = prop1_sandwich(&FnPredictor(|_: &[f64]| 0.0), &point, 1000).unwrap();
    assert!((s.middle - 1.0).abs() < 1e-12);
    assert_eq!(s.upper, 2.0);
    assert!((s.lower - 1.0 / 210.0).abs() < 1e-15);
    assert!(s.holds());
}

#[test]
fn ma_error_and_ece_match_naive_sums() {
    let data = gen_simulated(500, 8);
    let p = FnPredictor(|x: &[f64]| if x[0] < 0.5 { 0.6 } else { 0.3 });
    let aux = FnClass::new(vec![Box::new(|x: &[f64]| x[0]), Box::new(|x: &[f64]| -1.0 + x[0])]);
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let (mut n6, mut y6, mut n3, mut y3) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in data.iter() {
        let pv = p.predict(x).unwrap();
        let r = y as u8 as f64 - pv;
        s0 += x[0] * r;
        s1 += (x[0] - 1.0) * r;
        if pv == 0.6 {
            n6 += 1.0;
            y6 += y as u8 as f64;
        } else {
            n3 += 1.0;
            y3 += y as u8 as f64;
        }
    }
    let n = data.len() as f64;
    let ma = (s0 / n).abs().max((s1 / n).abs());
    assert!((ma_error(&p, &aux, &data).unwrap() - ma).abs() < 1e-12);
    let e = n6 / n * (0.6 - y6 / n6).abs() + n3 / n * (0.3 - y3 / n3).abs();
    assert!((ece(&p, &data).unwrap() - e).abs() < 1e-12);
}
