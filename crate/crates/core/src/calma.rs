//! Calibrated multiaccuracy baselines: an iterative boosting procedure and
//! an online game over auxiliary functions and level-set sign functions.
//!
//! Both predictors depend on `x` only through the auxiliary vector
//! `(g_1(x), ..., g_K(x))`, so training aggregates samples by that vector.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::game::MixtureWeights;
use crate::predictors::{BasePredictorSet, Dataset, Forecast, Forecaster};

/// A finite class of functions `g: X → [-1, 1]`.
pub trait AuxiliaryClass: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `g_k(x)` for every member into `out`.
    fn eval(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()>;
}

/// `g_i(x) = ℓ_{θ_i}(f̂_i(x), 1) − ℓ_{θ_i}(f̂_i(x), 0)` for each base member.
#[derive(Debug, Clone, PartialEq)]
pub struct LossDerivativeClass {
    base: BasePredictorSet,
}

impl LossDerivativeClass {
    pub fn new(base: BasePredictorSet) -> Self {
        LossDerivativeClass { base }
    }

    pub fn base(&self) -> &BasePredictorSet {
        &self.base
    }
}

impl AuxiliaryClass for LossDerivativeClass {
    fn len(&self) -> usize {
        self.base.m()
    }

    fn eval(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        let grid = self.base.grid();
        for i in 0..self.base.m() {
            let j = self.base.member_output(i, x)?;
            out.push(grid.loss_at(i, j, true) - grid.loss_at(i, j, false));
        }
        Ok(())
    }
}

type AuxFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// An auxiliary class given by closures.
pub struct FnClass {
    members: Vec<AuxFn>,
}

impl FnClass {
    pub fn new(members: Vec<AuxFn>) -> Self {
        FnClass { members }
    }
}

impl AuxiliaryClass for FnClass {
    fn len(&self) -> usize {
        self.members.len()
    }

    fn eval(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        for g in &self.members {
            let v = g(x);
            if !(-1.0..=1.0).contains(&v) {
                return Err(OmniError::OutOfRange {
                    field: "auxiliary value",
                    value: v,
                    expected: "[-1, 1]",
                });
            }
            out.push(v);
        }
        Ok(())
    }
}

/// Samples grouped by identical auxiliary vectors.
struct Cells {
    values: Vec<Vec<f64>>,
    counts: Vec<f64>,
    positives: Vec<f64>,
    n: f64,
}

impl Cells {
    fn build<A: AuxiliaryClass + ?Sized>(aux: &A, data: &Dataset) -> Result<Self> {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut cells = Cells {
            values: Vec::new(),
            counts: Vec::new(),
            positives: Vec::new(),
            n: data.len() as f64,
        };
        let mut g = Vec::with_capacity(aux.len());
        for (x, y) in data.iter() {
            aux.eval(x, &mut g)?;
            let key: Vec<u64> = g.iter().map(|v| v.to_bits()).collect();
            let c = *index.entry(key).or_insert_with(|| {
                cells.values.push(g.clone());
                cells.counts.push(0.0);
                cells.positives.push(0.0);
                cells.values.len() - 1
            });
            cells.counts[c] += 1.0;
            cells.positives[c] += y as u8 as f64;
        }
        Ok(cells)
    }

    /// `Ê[g_k (Y − p)]` for every member, given per-cell predictions.
    fn correlations(&self, p: &[f64], k_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; k_len];
        for (c, g) in self.values.iter().enumerate() {
            let resid = self.positives[c] - self.counts[c] * p[c];
            for (o, gv) in out.iter_mut().zip(g) {
                *o += gv * resid;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.n);
        out
    }

    fn squared_error(&self, p: &[f64]) -> f64 {
        (0..p.len())
            .map(|c| {
                let pos = self.positives[c];
                let neg = self.counts[c] - pos;
                pos * (1.0 - p[c]).powi(2) + neg * p[c].powi(2)
            })
            .sum::<f64>()
            / self.n
    }
}

fn argmax_abs(v: &[f64]) -> Option<(usize, f64)> {
    v.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (k, &c)| match best {
            Some((_, b)) if b.abs() >= c.abs() => best,
            _ => Some((k, c)),
        })
}

fn bucket(p: f64, m: usize) -> usize {
    ((p * m as f64).floor() as usize).min(m - 1)
}

/// One step of the boosted predictor, replayed at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostOp {
    /// `p ← clip(p + step·sign·g_member(x))`.
    Shift { member: usize, sign: f64 },
    /// `p ← table[bucket(p)]`; empty buckets map to their midpoint.
    Calibrate { table: Vec<Option<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialScore {
    MeanLabel,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostConfig {
    pub alpha: f64,
    pub buckets: usize,
    pub max_iters: usize,
    pub init: InitialScore,
}

impl BoostConfig {
    pub fn new(alpha: f64, buckets: usize) -> Self {
        BoostConfig {
            alpha,
            buckets,
            max_iters: 200_000,
            init: InitialScore::MeanLabel,
        }
    }
}

/// `α = c·sqrt(ln m / n)`.
pub fn default_alpha(c: f64, m: usize, n: usize) -> f64 {
    c * ((m as f64).ln() / n as f64).sqrt()
}

/// Training statistics of [`calma_boost`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostTrace {
    pub ma_steps: usize,
    pub calibration_steps: usize,
    pub converged: bool,
    pub final_ma_error: f64,
}

/// Boosted deterministic predictor.
#[derive(Debug, Clone)]
pub struct CalmaPredictor<A> {
    aux: A,
    state: BoostState,
}

/// Serializable part of a [`CalmaPredictor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostState {
    pub init: f64,
    pub step: f64,
    pub buckets: usize,
    pub ops: Vec<BoostOp>,
    pub trace: BoostTrace,
}

impl<A: AuxiliaryClass> CalmaPredictor<A> {
    pub fn from_state(aux: A, state: BoostState) -> Result<Self> {
        for op in &state.ops {
            match op {
                BoostOp::Shift { member, .. } if *member >= aux.len() => {
                    return Err(OmniError::InvalidInput(format!("shift uses unknown member {member}")));
                }
                BoostOp::Calibrate { table } if table.len() != state.buckets => {
                    return Err(OmniError::InvalidInput("calibration table of the wrong size".into()));
                }
                _ => {}
            }
        }
        Ok(CalmaPredictor { aux, state })
    }

    pub fn state(&self) -> &BoostState {
        &self.state
    }

    pub fn trace(&self) -> BoostTrace {
        self.state.trace
    }

    pub fn aux(&self) -> &A {
        &self.aux
    }

    fn score(&self, g: &[f64]) -> f64 {
        let s = &self.state;
        let mut p = s.init;
        for op in &s.ops {
            p = match op {
                BoostOp::Shift { member, sign } => (p + s.step * sign * g[*member]).clamp(0.0, 1.0),
                BoostOp::Calibrate { table } => {
                    let b = bucket(p, s.buckets);
                    table[b].unwrap_or((b as f64 + 0.5) / s.buckets as f64)
                }
            };
        }
        p
    }
}

impl<A: AuxiliaryClass> crate::predictors::Predictor for CalmaPredictor<A> {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        let mut g = Vec::with_capacity(self.aux.len());
        self.aux.eval(x, &mut g)?;
        Ok(self.score(&g))
    }
}

/// Alternates multiaccuracy updates with bucket calibration until no
/// auxiliary function has correlation above `alpha` right after a
/// calibration step.
pub fn calma_boost<A: AuxiliaryClass>(aux: A, data: &Dataset, config: BoostConfig) -> Result<CalmaPredictor<A>> {
    let BoostConfig {
        alpha,
        buckets,
        max_iters,
        init,
    } = config;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(OmniError::OutOfRange {
            field: "alpha",
            value: alpha,
            expected: "(0, inf)",
        });
    }
    if buckets == 0 {
        return Err(OmniError::InvalidInput("need at least one bucket".into()));
    }
    if data.is_empty() {
        return Err(OmniError::EmptyData("training data"));
    }
    let init = match init {
        InitialScore::MeanLabel => data.mean_label()?,
        InitialScore::Constant(v) => {
            crate::error::check_unit("initial score", v)?;
            v
        }
    };
    let cells = Cells::build(&aux, data)?;
    let k_len = aux.len();
    let step = alpha / 2.0;
    let progress = step * alpha - step * step;

    let mut p = vec![init; cells.counts.len()];
    let mut ops = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut ma_steps = 0usize;
    let mut calibration_steps = 0usize;
    let mut converged = false;

    loop {
        // Multiaccuracy phase; each step lowers the squared error by at
        // least `progress`.
        let budget = (cells.squared_error(&p) / progress).ceil() as usize;
        let mut phase_steps = 0usize;
        let mut capped = false;
        while let Some((k, corr)) = argmax_abs(&cells.correlations(&p, k_len)) {
            if corr.abs() <= alpha {
                break;
            }
            if ma_steps >= max_iters {
                capped = true;
                break;
            }
            let sign = corr.signum();
            for (pc, g) in p.iter_mut().zip(&cells.values) {
                *pc = (*pc + step * sign * g[k]).clamp(0.0, 1.0);
            }
            ops.push(BoostOp::Shift { member: k, sign });
            ma_steps += 1;
            phase_steps += 1;
            if phase_steps > budget {
                return Err(OmniError::Numeric(format!(
                    "multiaccuracy phase exceeded its bound of {budget} steps"
                )));
            }
        }

        // Calibration phase.
        let mut mass = vec![0.0; buckets];
        let mut pos = vec![0.0; buckets];
        for ((&pc, &cnt), &ps) in p.iter().zip(&cells.counts).zip(&cells.positives) {
            let b = bucket(pc, buckets);
            mass[b] += cnt;
            pos[b] += ps;
        }
        let table: Vec<Option<f64>> = mass
            .iter()
            .zip(&pos)
            .map(|(&w, &s)| (w > 0.0).then(|| s / w))
            .collect();
        for pc in p.iter_mut() {
            *pc = table[bucket(*pc, buckets)].expect("occupied bucket");
        }
        ops.push(BoostOp::Calibrate { table });
        calibration_steps += 1;

        let err = argmax_abs(&cells.correlations(&p, k_len)).map_or(0.0, |(_, c)| c.abs());
        if best.is_none_or(|(b, _)| err < b) {
            best = Some((err, ops.len()));
        }
        if err <= alpha {
            converged = true;
            break;
        }
        if capped || ma_steps >= max_iters {
            break;
        }
    }

    let (final_ma_error, keep) = best.expect("at least one calibration step");
    ops.truncate(keep);
    Ok(CalmaPredictor {
        aux,
        state: BoostState {
            init,
            step,
            buckets,
            ops,
            trace: BoostTrace {
                ma_steps,
                calibration_steps,
                converged,
                final_ma_error,
            },
        },
    })
}

/// Minimizes `max(Σ_j P_j·(0 − v_j)·c_j, Σ_j P_j·(1 − v_j)·c_j)` over
/// distributions `P` on `v_j = j/m`, `j = 1..m`. Returns the optimal atoms
/// `(j, P_j)` and the value.
pub fn solve_inner(c: &[f64]) -> (Vec<(usize, f64)>, f64) {
    let m = c.len();
    let v = |j: usize| (j + 1) as f64 / m as f64;
    let f0 = |j: usize| -v(j) * c[j];
    let f1 = |j: usize| (1.0 - v(j)) * c[j];
    let mut best_atoms = vec![(1, 1.0)];
    let mut best = f64::INFINITY;
    for j in 0..m {
        let val = f0(j).max(f1(j));
        if val < best {
            best = val;
            best_atoms = vec![(j + 1, 1.0)];
        }
    }
    // Edge points where the two objectives are equal: f0 − f1 = −c.
    for a in 0..m {
        for b in (a + 1)..m {
            let (da, db) = (-c[a], -c[b]);
            if !((da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0)) {
                continue;
            }
            let lam = db / (db - da);
            let val = lam * f0(a) + (1.0 - lam) * f0(b);
            if val < best {
                best = val;
                best_atoms = vec![(a + 1, lam), (b + 1, 1.0 - lam)];
            }
        }
    }
    (best_atoms, best)
}

/// Weights the adversary held in one round, in compressed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRound {
    /// `q(g_k) − q(−g_k)` for each auxiliary member.
    pub aux_signed: Vec<f64>,
    /// `Σ_b q_b·s_b(j/m)` over the sign functions, for `j = 1..m`.
    pub level_bias: Vec<f64>,
}

/// Serializable part of a [`CalmaGamePredictor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalmaGameState {
    pub m: usize,
    pub eta: f64,
    pub rounds: Vec<GameRound>,
    pub max_inner_value: f64,
}

/// Averaged randomized predictor on `{1/m, ..., 1}`.
#[derive(Debug, Clone)]
pub struct CalmaGamePredictor<A> {
    aux: A,
    state: CalmaGameState,
}

/// Largest grid for which the sign-function class is enumerated.
pub const MAX_GAME_GRID: usize = 20;

/// `η = c·sqrt((ln|G±| + m)/n)`.
pub fn default_game_eta(c: f64, aux_len: usize, m: usize, n: usize) -> f64 {
    let g = (2 * aux_len).max(1) as f64;
    c * ((g.ln() + m as f64) / n as f64).sqrt()
}

/// Hedge over `G± ∪ G_m` against a per-sample minimax learner.
pub fn calma_game<A: AuxiliaryClass>(aux: A, data: &Dataset, m: usize, eta: f64) -> Result<CalmaGamePredictor<A>> {
    if m == 0 || m > MAX_GAME_GRID {
        return Err(OmniError::InvalidInput(format!(
            "grid size {m} outside 1..={MAX_GAME_GRID}"
        )));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(OmniError::OutOfRange {
            field: "eta",
            value: eta,
            expected: "(0, inf)",
        });
    }
    if data.is_empty() {
        return Err(OmniError::EmptyData("training data"));
    }
    let k_len = aux.len();
    let n_signs = 1usize << m;
    let n_experts = 2 * k_len + n_signs;
    // Cumulative gains; expert order is +g_1..+g_K, −g_1..−g_K, sign functions.
    let mut gains = vec![0.0; n_experts];
    let mut logits = vec![0.0; n_experts];
    let mut rounds = Vec::with_capacity(data.len());
    let mut max_inner_value = f64::NEG_INFINITY;
    let mut g = Vec::with_capacity(k_len);

    for (x, y) in data.iter() {
        for (l, s) in logits.iter_mut().zip(&gains) {
            *l = eta * s;
        }
        let q = MixtureWeights::softmax(&logits);
        let q = q.as_slice();
        aux.eval(x, &mut g)?;
        let aux_signed: Vec<f64> = (0..k_len).map(|k| q[k] - q[k_len + k]).collect();
        // Paired differences keep symmetric weights at exactly zero bias.
        let signs = &q[2 * k_len..];
        let level_bias: Vec<f64> = (0..m)
            .map(|j| {
                let bit = 1usize << j;
                (0..n_signs).filter(|b| b & bit != 0).map(|b| signs[b] - signs[b ^ bit]).sum()
            })
            .collect();
        let shift: f64 = aux_signed.iter().zip(&g).map(|(a, gv)| a * gv).sum();
        let c: Vec<f64> = level_bias.iter().map(|lb| shift + lb).collect();
        let (atoms, value) = solve_inner(&c);
        max_inner_value = max_inner_value.max(value);
        if value > 1.0 / m as f64 + 1e-12 {
            return Err(OmniError::Numeric(format!(
                "inner game value {value} exceeds 1/m"
            )));
        }

        let yv = y as u8 as f64;
        let mean: f64 = atoms.iter().map(|&(j, w)| w * j as f64 / m as f64).sum();
        for k in 0..k_len {
            gains[k] += g[k] * (yv - mean);
            gains[k_len + k] -= g[k] * (yv - mean);
        }
        let w: Vec<(usize, f64)> = atoms
            .iter()
            .map(|&(j, p)| (j - 1, p * (yv - j as f64 / m as f64)))
            .collect();
        for (b, gain) in gains[2 * k_len..].iter_mut().enumerate() {
            for &(bit, wj) in &w {
                *gain += if b >> bit & 1 == 1 { wj } else { -wj };
            }
        }
        rounds.push(GameRound {
            aux_signed,
            level_bias,
        });
    }

    Ok(CalmaGamePredictor {
        aux,
        state: CalmaGameState {
            m,
            eta,
            rounds,
            max_inner_value,
        },
    })
}

impl<A: AuxiliaryClass> CalmaGamePredictor<A> {
    pub fn from_state(aux: A, state: CalmaGameState) -> Result<Self> {
        let ok = state
            .rounds
            .iter()
            .all(|r| r.aux_signed.len() == aux.len() && r.level_bias.len() == state.m);
        if !ok || state.rounds.is_empty() {
            return Err(OmniError::InvalidInput("game rounds do not match the auxiliary class".into()));
        }
        Ok(CalmaGamePredictor { aux, state })
    }

    pub fn state(&self) -> &CalmaGameState {
        &self.state
    }

    pub fn max_inner_value(&self) -> f64 {
        self.state.max_inner_value
    }

    /// Round-averaged distribution over `{1/m, ..., 1}`; entry `j − 1`
    /// holds the mass on `j/m`.
    pub fn distribution(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = Vec::with_capacity(self.aux.len());
        self.aux.eval(x, &mut g)?;
        let m = self.state.m;
        let mut probs = vec![0.0; m];
        for r in &self.state.rounds {
            let shift: f64 = r.aux_signed.iter().zip(&g).map(|(a, gv)| a * gv).sum();
            let c: Vec<f64> = r.level_bias.iter().map(|lb| shift + lb).collect();
            for (j, w) in solve_inner(&c).0 {
                probs[j - 1] += w;
            }
        }
        let t = self.state.rounds.len() as f64;
        probs.iter_mut().for_each(|p| *p /= t);
        Ok(probs)
    }
}

impl<A: AuxiliaryClass> Forecaster for CalmaGamePredictor<A> {
    fn forecast(&self, x: &[f64]) -> Result<Forecast> {
        let m = self.state.m as f64;
        let probs = self.distribution(x)?;
        Ok(Forecast::from_atoms(
            probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(j, &p)| ((j + 1) as f64 / m, p))
                .collect(),
        ))
    }
}
