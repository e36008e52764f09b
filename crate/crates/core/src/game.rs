//! The two-player game: a Hedge adversary over grid parameters against a
//! closed-form minimax learner.

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::losses::ThetaGrid;
use crate::predictors::{BasePredictorSet, Dataset, Forecast, Forecaster, GridDistribution};

/// A probability vector over the `m` grid parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixtureWeights {
    q: Vec<f64>,
}

impl MixtureWeights {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(OmniError::EmptyData("mixture weights"));
        }
        if let Some(&bad) = q.iter().find(|&&w| !(w >= 0.0 && w.is_finite())) {
            return Err(OmniError::OutOfRange {
                field: "mixture weight",
                value: bad,
                expected: "[0, inf)",
            });
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(OmniError::Numeric(format!("mixture weights sum to {total}")));
        }
        Ok(MixtureWeights { q })
    }

    pub fn uniform(m: usize) -> Self {
        MixtureWeights {
            q: vec![1.0 / m as f64; m],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    /// Normalized `exp(logits)`, computed stably.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut q: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|w| *w /= total);
        MixtureWeights { q }
    }
}

/// Best response `(1 − ρ)·δ_{j/m} + ρ·δ_{(j+1)/m}` with `j = lower`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saddle {
    pub lower: usize,
    pub rho: f64,
}

impl Saddle {
    pub fn distribution(&self, m: usize) -> GridDistribution {
        let mut probs = vec![0.0; m + 1];
        self.accumulate(&mut probs, 1.0);
        GridDistribution::from_raw(probs)
    }

    fn accumulate(&self, probs: &mut [f64], weight: f64) {
        probs[self.lower] += weight * (1.0 - self.rho);
        if self.rho > 0.0 {
            probs[self.lower + 1] += weight * self.rho;
        }
    }

    /// `(grid index, probability)` pairs with positive mass.
    pub fn atoms(&self) -> impl Iterator<Item = (usize, f64)> {
        let first = (self.lower, 1.0 - self.rho);
        let second = (self.lower + 1, self.rho);
        [first, second].into_iter().filter(|a| a.1 > 0.0)
    }
}

fn check_outputs(base_outputs: &[usize]) -> Result<()> {
    for (i, &j) in base_outputs.iter().enumerate() {
        if j != i && j != i + 1 {
            return Err(OmniError::InvalidInput(format!(
                "base output {j} for parameter {i} is not a flanking grid point"
            )));
        }
    }
    Ok(())
}

/// Closed-form solution of `min_P max_{p_y} Σ_i q_i E_P[ℓ_{θ_i}(p, p_y) − ℓ_{θ_i}(f̂_i(x), p_y)]`.
///
/// `base_outputs[i]` is the grid index of `f̂_{θ_i}(x)`.
pub fn solve_minmax(q: &MixtureWeights, base_outputs: &[usize]) -> Result<Saddle> {
    let q = q.as_slice();
    if q.len() != base_outputs.len() {
        return Err(OmniError::InvalidInput(format!(
            "{} weights for {} base outputs",
            q.len(),
            base_outputs.len()
        )));
    }
    check_outputs(base_outputs)?;
    let m = q.len();
    // Suffix masses C[j] = Σ_{i ≥ j} q_i and the low-side mass, both
    // accumulated from the top so that equal index sets give equal sums.
    let mut suffix = vec![0.0; m + 1];
    let mut low_mass = 0.0;
    for i in (0..m).rev() {
        suffix[i] = q[i] + suffix[i + 1];
        if base_outputs[i] == i {
            low_mass += q[i];
        }
    }
    let lower = (0..=m).rev().find(|&j| suffix[j] >= low_mass).unwrap_or(0);
    if lower == m {
        return Ok(Saddle { lower, rho: 0.0 });
    }
    let num = suffix[lower] - low_mass;
    let rho = if q[lower] > 0.0 {
        (num / q[lower]).clamp(0.0, 1.0)
    } else {
        if num > 1e-12 {
            return Err(OmniError::Numeric(format!(
                "zero weight at the saddle point with residual {num}"
            )));
        }
        0.0
    };
    Ok(Saddle { lower, rho })
}

/// `Σ_j P_j Σ_i q_i (p_y − θ_i)(1{j/m ≤ θ_i} − 1{f̂_i(x) ≤ θ_i})`.
pub fn mixture_objective(
    grid: &ThetaGrid,
    q: &MixtureWeights,
    base_outputs: &[usize],
    dist: &GridDistribution,
    p_y: f64,
) -> f64 {
    let q = q.as_slice();
    dist.probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(j, &pj)| {
            let inner: f64 = (0..q.len())
                .map(|i| {
                    let ours = (j <= i) as i32 as f64;
                    let theirs = (base_outputs[i] == i) as i32 as f64;
                    q[i] * (p_y - grid.theta(i)) * (ours - theirs)
                })
                .sum();
            pj * inner
        })
        .sum()
}

/// Per-parameter Hedge gains `E_{p~P}ℓ_{θ_i}(p, y) − ℓ_{θ_i}(f̂_i(x), y)`.
pub fn round_payoffs(grid: &ThetaGrid, saddle: &Saddle, base_outputs: &[usize], y: bool) -> Vec<f64> {
    (0..grid.m())
        .map(|i| {
            let ours: f64 = saddle.atoms().map(|(j, w)| w * grid.loss_at(i, j, y)).sum();
            ours - grid.loss_at(i, base_outputs[i], y)
        })
        .collect()
}

/// One multiplicative-weights step `q'_i ∝ q_i·exp(η·payoff_i)`.
pub fn hedge_update(q: &MixtureWeights, payoffs: &[f64], eta: f64) -> Result<MixtureWeights> {
    if payoffs.len() != q.as_slice().len() {
        return Err(OmniError::InvalidInput("payoff length differs from weight length".into()));
    }
    check_eta(eta)?;
    let logits: Vec<f64> = q
        .as_slice()
        .iter()
        .zip(payoffs)
        .map(|(&w, &g)| w.ln() + eta * g)
        .collect();
    Ok(MixtureWeights::softmax(&logits))
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(OmniError::OutOfRange {
            field: "eta",
            value: eta,
            expected: "(0, inf)",
        })
    }
}

/// `η = c·sqrt(ln m / n)`.
pub fn default_eta(c: f64, m: usize, n: usize) -> f64 {
    c * ((m as f64).ln() / n as f64).sqrt()
}

/// `2^⌊log₂ √n⌋`, at least 1.
pub fn sqrt_grid_size(n: usize) -> usize {
    let root = (n as f64).sqrt();
    if root < 2.0 {
        return 1;
    }
    1usize << (root.log2().floor() as u32)
}

/// Hedge's realized regret against the best fixed parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub regret: f64,
    pub bound: f64,
    pub max_round_value: f64,
}

/// Output of the game: the adversary's weights for every round.
#[derive(Debug, Clone)]
pub struct GamePredictor {
    base: BasePredictorSet,
    eta: f64,
    stride: usize,
    weights: Vec<MixtureWeights>,
    trace: RegretTrace,
}

/// JSON form of a [`GamePredictor`]; the base set is stored separately.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameArtifact {
    pub m: usize,
    pub eta: f64,
    pub stride: usize,
    pub weight_history: Vec<MixtureWeights>,
    pub base_ref: String,
    pub regret: RegretTrace,
}

/// Plays the game over `data` in order and returns the averaged learner.
pub fn run_two_player(data: &Dataset, base: &BasePredictorSet, eta: f64) -> Result<GamePredictor> {
    check_eta(eta)?;
    if data.is_empty() {
        return Err(OmniError::EmptyData("training data"));
    }
    let grid = base.grid();
    let m = grid.m();
    let mut cumulative = vec![0.0; m];
    let mut hedge_gain = 0.0;
    let mut max_round_value = f64::NEG_INFINITY;
    let mut weights = Vec::with_capacity(data.len());
    let mut logits = vec![0.0; m];

    for (x, y) in data.iter() {
        for (l, g) in logits.iter_mut().zip(&cumulative) {
            *l = eta * g;
        }
        let q = MixtureWeights::softmax(&logits);
        let outputs = base.outputs(x)?;
        let saddle = solve_minmax(&q, &outputs)?;
        let payoffs = round_payoffs(grid, &saddle, &outputs, y);
        let round_value: f64 = q.as_slice().iter().zip(&payoffs).map(|(w, g)| w * g).sum();
        max_round_value = max_round_value.max(round_value);
        hedge_gain += round_value;
        for (c, g) in cumulative.iter_mut().zip(&payoffs) {
            *c += g;
        }
        weights.push(q);
    }

    if max_round_value > 1e-9 {
        return Err(OmniError::Numeric(format!(
            "minimax round value {max_round_value} is positive"
        )));
    }
    let n = data.len() as f64;
    let best = cumulative.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let regret = best - hedge_gain;
    let bound = eta * n + (m as f64).ln() / eta;
    if regret > bound {
        return Err(OmniError::Numeric(format!(
            "Hedge regret {regret} exceeds its bound {bound}"
        )));
    }
    Ok(GamePredictor {
        base: base.clone(),
        eta,
        stride: 1,
        weights,
        trace: RegretTrace {
            regret,
            bound,
            max_round_value,
        },
    })
}

impl GamePredictor {
    /// Average over every `stride`-th round only.
    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(OmniError::InvalidInput("stride must be positive".into()));
        }
        self.stride = stride;
        Ok(self)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn rounds(&self) -> usize {
        self.weights.len()
    }

    pub fn weight_history(&self) -> &[MixtureWeights] {
        &self.weights
    }

    pub fn regret(&self) -> RegretTrace {
        self.trace
    }

    pub fn base(&self) -> &BasePredictorSet {
        &self.base
    }

    pub fn to_artifact(&self, base_ref: impl Into<String>) -> GameArtifact {
        GameArtifact {
            m: self.base.m(),
            eta: self.eta,
            stride: self.stride,
            weight_history: self.weights.clone(),
            base_ref: base_ref.into(),
            regret: self.trace,
        }
    }

    pub fn from_artifact(art: GameArtifact, base: BasePredictorSet) -> Result<Self> {
        if art.m != base.m() {
            return Err(OmniError::InvalidInput(format!(
                "artifact has m = {} but base set has m = {}",
                art.m,
                base.m()
            )));
        }
        if art.weight_history.iter().any(|q| q.as_slice().len() != art.m) {
            return Err(OmniError::InvalidInput("weight vector of the wrong length".into()));
        }
        if art.weight_history.is_empty() {
            return Err(OmniError::EmptyData("weight history"));
        }
        GamePredictor {
            base,
            eta: art.eta,
            stride: 1,
            weights: art.weight_history,
            trace: art.regret,
        }
        .with_stride(art.stride)
    }
}

/// `(1/T)·Σ_t P*_t(x)` over the retained rounds.
pub fn predict_game(gp: &GamePredictor, x: &[f64]) -> Result<GridDistribution> {
    let outputs = gp.base.outputs(x)?;
    let m = gp.base.m();
    let mut probs = vec![0.0; m + 1];
    let mut count = 0usize;
    for q in gp.weights.iter().step_by(gp.stride) {
        solve_minmax(q, &outputs)?.accumulate(&mut probs, 1.0);
        count += 1;
    }
    let scale = 1.0 / count as f64;
    probs.iter_mut().for_each(|p| *p *= scale);
    Ok(GridDistribution::from_raw(probs))
}

impl Forecaster for GamePredictor {
    fn forecast(&self, x: &[f64]) -> Result<Forecast> {
        predict_game(self, x).map(|d| d.to_forecast())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minmax_examples() {
        let q = MixtureWeights::new(vec![0.5, 0.5]).unwrap();
        // f̂_{1/4}(x) = 1/2 (high), f̂_{3/4}(x) = 1/2 (low).
        let s = solve_minmax(&q, &[1, 1]).unwrap();
        assert_eq!((s.lower, s.rho), (1, 0.0));
        let all_low = solve_minmax(&MixtureWeights::uniform(4), &[0, 1, 2, 3]).unwrap();
        assert_eq!((all_low.lower, all_low.rho), (0, 0.0));
        let all_high = solve_minmax(&MixtureWeights::uniform(4), &[1, 2, 3, 4]).unwrap();
        assert_eq!((all_high.lower, all_high.rho), (4, 0.0));
    }

    #[test]
    fn minmax_rejects_bad_outputs() {
        let q = MixtureWeights::uniform(2);
        assert!(solve_minmax(&q, &[2, 1]).is_err());
        assert!(solve_minmax(&q, &[0]).is_err());
    }

    #[test]
    fn hedge_example() {
        let q = MixtureWeights::new(vec![0.5, 0.5]).unwrap();
        let next = hedge_update(&q, &[1.0, 0.0], std::f64::consts::LN_2).unwrap();
        assert!((next.as_slice()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((next.as_slice()[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(hedge_update(&q, &[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn grid_size_rule() {
        assert_eq!(sqrt_grid_size(100), 8);
        assert_eq!(sqrt_grid_size(256), 16);
        assert_eq!(sqrt_grid_size(1600), 32);
        assert_eq!(sqrt_grid_size(3), 1);
    }
}
