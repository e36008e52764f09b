//! Omniprediction error, multiaccuracy error, calibration error and the
//! squared-error sandwich check.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::calma::AuxiliaryClass;
use crate::dataio::FiniteDistribution;
use crate::error::{OmniError, Result};
use crate::losses::expected_weighted_loss_raw;
use crate::predictors::{BasePredictorSet, Dataset, Forecast, Forecaster, Predictor};

/// Per-parameter gaps `Ê[ℓ_{θ_i}(p̂)] − Ê[ℓ_{θ_i}(f̂_{θ_i})]` and their sup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmniReport {
    pub per_theta_gaps: Vec<f64>,
    pub sup_gap: f64,
    pub argmax_index: usize,
    pub argmax_theta: f64,
}

impl OmniReport {
    fn from_gaps(base: &BasePredictorSet, gaps: Vec<f64>) -> Self {
        let (argmax_index, sup_gap) = gaps
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        OmniReport {
            argmax_theta: base.grid().theta(argmax_index),
            per_theta_gaps: gaps,
            sup_gap,
            argmax_index,
        }
    }
}

/// Evaluates a forecaster and the base outputs once per distinct covariate.
struct Memo<'a, F: ?Sized> {
    predictor: &'a F,
    base: &'a BasePredictorSet,
    cache: HashMap<Vec<u64>, (Forecast, Vec<usize>)>,
}

impl<'a, F: Forecaster + ?Sized> Memo<'a, F> {
    fn new(predictor: &'a F, base: &'a BasePredictorSet) -> Self {
        Memo {
            predictor,
            base,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, x: &[f64]) -> Result<&(Forecast, Vec<usize>)> {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if !self.cache.contains_key(&key) {
            let entry = (self.predictor.forecast(x)?, self.base.outputs(x)?);
            self.cache.insert(key.clone(), entry);
        }
        Ok(&self.cache[&key])
    }
}

/// Empirical omniprediction gaps of `predictor` against the base members.
/// Randomized predictions are integrated exactly.
pub fn omni_error<F: Forecaster + ?Sized>(predictor: &F, base: &BasePredictorSet, test: &Dataset) -> Result<OmniReport> {
    if test.is_empty() {
        return Err(OmniError::EmptyData("test data"));
    }
    let grid = base.grid();
    let m = base.m();
    let mut gaps = vec![0.0; m];
    let mut memo = Memo::new(predictor, base);
    for (x, y) in test.iter() {
        let (forecast, outputs) = memo.get(x)?;
        for (i, gap) in gaps.iter_mut().enumerate() {
            *gap += forecast.expected_loss(grid.theta(i), y) - grid.loss_at(i, outputs[i], y);
        }
    }
    let n = test.len() as f64;
    gaps.iter_mut().for_each(|g| *g /= n);
    Ok(OmniReport::from_gaps(base, gaps))
}

/// Population omniprediction gaps under a finite distribution.
pub fn omni_error_population<F: Forecaster + ?Sized>(
    predictor: &F,
    base: &BasePredictorSet,
    dist: &FiniteDistribution,
) -> Result<OmniReport> {
    let grid = base.grid();
    let mut gaps = vec![0.0; base.m()];
    for (&x, (&px, &py)) in dist.support.iter().zip(dist.px.iter().zip(&dist.py_given_x)) {
        let forecast = predictor.forecast(&[x])?;
        let outputs = base.outputs(&[x])?;
        for (i, gap) in gaps.iter_mut().enumerate() {
            let theta = grid.theta(i);
            let ours: f64 = forecast
                .atoms()
                .iter()
                .map(|&(v, w)| w * expected_weighted_loss_raw(theta, v, py))
                .sum();
            let theirs = expected_weighted_loss_raw(theta, grid.point(outputs[i]), py);
            *gap += px * (ours - theirs);
        }
    }
    Ok(OmniReport::from_gaps(base, gaps))
}

/// `max_g |Ê[g(X)(Y − p(X))]|`, with `p(X)` replaced by its mean for
/// randomized predictors. Zero for an empty class.
pub fn ma_error<F: Forecaster + ?Sized, A: AuxiliaryClass + ?Sized>(predictor: &F, aux: &A, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(OmniError::EmptyData("data"));
    }
    let mut sums = vec![0.0; aux.len()];
    let mut g = Vec::with_capacity(aux.len());
    for (x, y) in data.iter() {
        let resid = y as u8 as f64 - predictor.forecast(x)?.mean();
        aux.eval(x, &mut g)?;
        for (s, gv) in sums.iter_mut().zip(&g) {
            *s += gv * resid;
        }
    }
    let n = data.len() as f64;
    Ok(sums.iter().map(|s| (s / n).abs()).fold(0.0, f64::max))
}

/// `Σ_v P̂(p = v)·|v − Ê[Y | p = v]|`, grouping by exact prediction value.
pub fn ece<F: Forecaster + ?Sized>(predictor: &F, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(OmniError::EmptyData("data"));
    }
    let mut groups: HashMap<u64, (f64, f64)> = HashMap::new();
    for (x, y) in data.iter() {
        for &(v, w) in predictor.forecast(x)?.atoms() {
            let e = groups.entry(v.to_bits()).or_insert((0.0, 0.0));
            e.0 += w;
            e.1 += w * y as u8 as f64;
        }
    }
    let n = data.len() as f64;
    Ok(groups
        .iter()
        .filter(|(_, (mass, _))| *mass > 0.0)
        .map(|(&bits, &(mass, pos))| mass / n * (f64::from_bits(bits) - pos / mass).abs())
        .sum())
}

/// Index of the pool member with the smallest sup gap; ties go to the
/// lowest index.
pub fn best_base_model<F: Forecaster>(pool: &[F], base: &BasePredictorSet, data: &Dataset) -> Result<usize> {
    if pool.is_empty() {
        return Err(OmniError::EmptyData("model pool"));
    }
    let mut best = (0, f64::INFINITY);
    for (k, model) in pool.iter().enumerate() {
        let sup = omni_error(model, base, data)?.sup_gap;
        if sup < best.1 {
            best = (k, sup);
        }
    }
    Ok(best.0)
}

/// Bounds around the worst weighted-loss regret over a `K`-point grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sandwich {
    pub lower: f64,
    pub middle: f64,
    pub upper: f64,
    pub tol: f64,
}

impl Sandwich {
    pub fn holds(&self) -> bool {
        self.lower - self.tol <= self.middle && self.middle <= self.upper + self.tol
    }
}

/// `E|p − p*|²/210 ≤ max_k (E ℓ_{θ_k}(p) − E ℓ_{θ_k}(p*)) ≤ 2·E|p − p*|`
/// with `θ_k = k/K` and slack `2/K`; `p*` is the distribution's
/// conditional mean.
pub fn prop1_sandwich<P: Predictor + ?Sized>(p: &P, dist: &FiniteDistribution, k: usize) -> Result<Sandwich> {
    if k == 0 {
        return Err(OmniError::InvalidInput("K must be positive".into()));
    }
    let preds: Vec<f64> = dist
        .support
        .iter()
        .map(|&x| p.predict(&[x]))
        .collect::<Result<_>>()?;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for ((&pv, &px), &py) in preds.iter().zip(&dist.px).zip(&dist.py_given_x) {
        l1 += px * (pv - py).abs();
        l2 += px * (pv - py).powi(2);
    }
    let middle = (0..k)
        .map(|j| {
            let theta = j as f64 / k as f64;
            preds
                .iter()
                .zip(&dist.px)
                .zip(&dist.py_given_x)
                .map(|((&pv, &px), &py)| {
                    px * (expected_weighted_loss_raw(theta, pv, py) - expected_weighted_loss_raw(theta, py, py))
                })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let s = Sandwich {
        lower: l2 / 210.0,
        middle,
        upper: 2.0 * l1,
        tol: 2.0 / k as f64,
    };
    if s.holds() {
        Ok(s)
    } else {
        Err(OmniError::Numeric(format!("sandwich violated: {s:?}")))
    }
}
