//! Datasets, competitor functions, grid-valued distributions and the base
//! predictor set built by per-parameter empirical risk minimization.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{check_unit, OmniError, Result};
use crate::losses::{weighted_loss_raw, ThetaGrid};

/// Labelled samples with fixed covariate dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<bool>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Dataset {
            dim,
            xs: Vec::new(),
            ys: Vec::new(),
        }
    }

    pub fn from_parts(dim: usize, xs: Vec<f64>, ys: Vec<bool>) -> Result<Self> {
        if xs.len() != dim * ys.len() {
            return Err(OmniError::InvalidInput(format!(
                "{} covariate values do not fill {} rows of dimension {dim}",
                xs.len(),
                ys.len()
            )));
        }
        if let Some(bad) = xs.iter().find(|v| !v.is_finite()) {
            return Err(OmniError::InvalidInput(format!("non-finite covariate {bad}")));
        }
        Ok(Dataset { dim, xs, ys })
    }

    pub fn push(&mut self, x: &[f64], y: bool) -> Result<()> {
        if x.len() != self.dim {
            return Err(OmniError::UnsupportedDimension {
                got: x.len(),
                expected: self.dim,
            });
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(OmniError::InvalidInput(format!("non-finite covariate {bad}")));
        }
        self.xs.extend_from_slice(x);
        self.ys.push(y);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> bool {
        self.ys[i]
    }

    pub fn labels(&self) -> &[bool] {
        &self.ys
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], bool)> + '_ {
        (0..self.len()).map(move |i| (self.x(i), self.y(i)))
    }

    pub fn mean_label(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(OmniError::EmptyData("dataset"));
        }
        Ok(self.ys.iter().filter(|&&y| y).count() as f64 / self.len() as f64)
    }

    /// Rows `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            dim: self.dim,
            xs: self.xs[start * self.dim..end * self.dim].to_vec(),
            ys: self.ys[start..end].to_vec(),
        }
    }

    /// Contiguous folds of near-equal size, in row order.
    pub fn folds(&self, k: usize) -> Result<Vec<Dataset>> {
        if k == 0 || k > self.len() {
            return Err(OmniError::InvalidInput(format!(
                "cannot split {} rows into {k} folds",
                self.len()
            )));
        }
        let n = self.len();
        Ok((0..k)
            .map(|f| self.slice(f * n / k, (f + 1) * n / k))
            .collect())
    }
}

/// A deterministic map from covariates to `[0, 1]`.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &[f64]) -> Result<f64>;
}

/// Adapter turning a closure into a [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Predictor for FnPredictor<F> {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        let p = (self.0)(x);
        check_unit("prediction", p)?;
        Ok(p)
    }
}

/// Serializable competitor functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Competitor {
    Constant {
        value: f64,
    },
    /// `clamp(intercept + slope·x, 0, 1)` on one-dimensional covariates.
    /// Clamping does not move the value across any `θ ∈ [0, 1)`.
    Affine {
        intercept: f64,
        slope: f64,
    },
    /// Table indexed by the first covariate (a sample id); `keys` sorted.
    Lookup {
        name: String,
        keys: Vec<f64>,
        values: Vec<f64>,
    },
}

impl Competitor {
    pub fn lookup(name: impl Into<String>, mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(OmniError::InvalidInput(format!("duplicate key {}", w[0].0)));
            }
        }
        for &(_, v) in &pairs {
            check_unit("forecast", v)?;
        }
        let (keys, values) = pairs.into_iter().unzip();
        Ok(Competitor::Lookup {
            name: name.into(),
            keys,
            values,
        })
    }

    pub fn name(&self) -> String {
        match self {
            Competitor::Constant { value } => format!("const({value})"),
            Competitor::Affine { intercept, slope } => format!("affine({intercept},{slope})"),
            Competitor::Lookup { name, .. } => name.clone(),
        }
    }
}

impl Predictor for Competitor {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            Competitor::Constant { value } => Ok(*value),
            Competitor::Affine { intercept, slope } => {
                if x.len() != 1 {
                    return Err(OmniError::UnsupportedDimension {
                        got: x.len(),
                        expected: 1,
                    });
                }
                Ok((intercept + slope * x[0]).clamp(0.0, 1.0))
            }
            Competitor::Lookup { keys, values, .. } => {
                let key = *x.first().ok_or(OmniError::UnsupportedDimension {
                    got: 0,
                    expected: 1,
                })?;
                keys.binary_search_by(|k| k.total_cmp(&key))
                    .map(|i| values[i])
                    .map_err(|_| OmniError::UnseenCovariate(x.to_vec()))
            }
        }
    }
}

/// A finitely supported distribution over predictions: `(value, prob)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    atoms: Vec<(f64, f64)>,
}

impl Forecast {
    pub fn point(p: f64) -> Self {
        Forecast {
            atoms: vec![(p, 1.0)],
        }
    }

    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Self {
        Forecast { atoms }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(v, w)| v * w).sum()
    }

    /// `E_{p ~ self} ℓ_θ(p, y)`, exact over the atoms.
    pub fn expected_loss(&self, theta: f64, y: bool) -> f64 {
        self.atoms
            .iter()
            .map(|&(v, w)| w * weighted_loss_raw(theta, v, y))
            .sum()
    }
}

/// Anything that outputs a (possibly randomized) prediction.
pub trait Forecaster: Send + Sync {
    fn forecast(&self, x: &[f64]) -> Result<Forecast>;
}

impl<P: Predictor> Forecaster for P {
    fn forecast(&self, x: &[f64]) -> Result<Forecast> {
        self.predict(x).map(Forecast::point)
    }
}

/// Probability vector over the prediction grid `{0, 1/m, ..., 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDistribution {
    probs: Vec<f64>,
}

impl GridDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(OmniError::InvalidInput("grid distribution needs m + 1 >= 2 entries".into()));
        }
        if let Some(&bad) = probs.iter().find(|&&p| !(p >= 0.0)) {
            return Err(OmniError::OutOfRange {
                field: "probability",
                value: bad,
                expected: "[0, inf)",
            });
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(OmniError::Numeric(format!("grid distribution sums to {total}")));
        }
        Ok(GridDistribution { probs })
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        GridDistribution { probs }
    }

    pub fn point_mass(m: usize, j: usize) -> Self {
        let mut probs = vec![0.0; m + 1];
        probs[j] = 1.0;
        GridDistribution { probs }
    }

    pub fn m(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        let m = self.m() as f64;
        self.probs
            .iter()
            .enumerate()
            .map(|(j, &p)| p * j as f64 / m)
            .sum()
    }

    /// `E_{p ~ self} ℓ_{θ_i}(p, y)` with exact grid comparisons.
    pub fn expected_loss(&self, grid: &ThetaGrid, i: usize, y: bool) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(j, &p)| p * grid.loss_at(i, j, y))
            .sum()
    }

    pub fn to_forecast(&self) -> Forecast {
        let m = self.m() as f64;
        Forecast::from_atoms(
            self.probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(j, &p)| (j as f64 / m, p))
                .collect(),
        )
    }
}

/// Recodes a raw prediction for parameter `θ_i` onto the two grid points
/// flanking it: `i` when `raw ≤ θ_i`, `i + 1` otherwise.
pub fn recode(grid: &ThetaGrid, i: usize, raw: f64) -> usize {
    if raw <= grid.theta(i) {
        i
    } else {
        i + 1
    }
}

/// The ERM solution for one grid parameter, stored with its recoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMember {
    pub theta_index: usize,
    pub competitor: Competitor,
}

/// `{f̂_{θ_i}}`: one recoded competitor per grid parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePredictorSet {
    grid: ThetaGrid,
    members: Vec<BaseMember>,
}

impl BasePredictorSet {
    pub fn new(grid: ThetaGrid, members: Vec<BaseMember>) -> Result<Self> {
        if members.len() != grid.m() {
            return Err(OmniError::InvalidInput(format!(
                "{} base members for a grid of size {}",
                members.len(),
                grid.m()
            )));
        }
        for (i, member) in members.iter().enumerate() {
            if member.theta_index != i {
                return Err(OmniError::InvalidInput(format!(
                    "member {i} is tagged with parameter index {}",
                    member.theta_index
                )));
            }
        }
        Ok(BasePredictorSet { grid, members })
    }

    pub fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    pub fn m(&self) -> usize {
        self.grid.m()
    }

    pub fn members(&self) -> &[BaseMember] {
        &self.members
    }

    /// Grid index of `f̂_{θ_i}(x)`, either `i` or `i + 1`.
    pub fn member_output(&self, i: usize, x: &[f64]) -> Result<usize> {
        let raw = self.members[i].competitor.predict(x)?;
        check_unit("competitor prediction", raw)?;
        Ok(recode(&self.grid, i, raw))
    }

    /// Grid indices of every member at `x`.
    pub fn outputs(&self, x: &[f64]) -> Result<Vec<usize>> {
        (0..self.m()).map(|i| self.member_output(i, x)).collect()
    }

    /// Grid-index outputs for every row, row-major `n × m`.
    pub fn output_matrix(&self, data: &Dataset) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(data.len() * self.m());
        for (x, _) in data.iter() {
            for i in 0..self.m() {
                out.push(self.member_output(i, x)?);
            }
        }
        Ok(out)
    }
}

/// Result of a single-parameter ERM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErmFit {
    pub index: usize,
    pub risk: f64,
}

/// Empirical risk minimizer of `ℓ_θ` over `candidates`; ties go to the
/// lowest index.
pub fn erm_fit<P: Predictor>(candidates: &[P], data: &Dataset, theta: f64) -> Result<ErmFit> {
    check_unit("theta", theta)?;
    let preds = candidate_predictions(candidates, data)?;
    Ok(erm_from_predictions(&preds, data, theta))
}

fn candidate_predictions<P: Predictor>(candidates: &[P], data: &Dataset) -> Result<Vec<Vec<f64>>> {
    if candidates.is_empty() {
        return Err(OmniError::EmptyData("candidate set"));
    }
    if data.is_empty() {
        return Err(OmniError::EmptyData("training data"));
    }
    candidates
        .iter()
        .map(|c| {
            data.iter()
                .map(|(x, _)| {
                    let p = c.predict(x)?;
                    check_unit("candidate prediction", p)?;
                    Ok(p)
                })
                .collect()
        })
        .collect()
}

fn erm_from_predictions(preds: &[Vec<f64>], data: &Dataset, theta: f64) -> ErmFit {
    let n = data.len() as f64;
    let mut best = ErmFit {
        index: 0,
        risk: f64::INFINITY,
    };
    for (index, row) in preds.iter().enumerate() {
        let risk = row
            .iter()
            .zip(data.labels())
            .map(|(&p, &y)| weighted_loss_raw(theta, p, y))
            .sum::<f64>()
            / n;
        if risk < best.risk {
            best = ErmFit { index, risk };
        }
    }
    best
}

/// Fits one recoded ERM solution per grid parameter.
pub fn fit_base(candidates: &[Competitor], data: &Dataset, grid: &ThetaGrid) -> Result<BasePredictorSet> {
    let preds = candidate_predictions(candidates, data)?;
    let members = (0..grid.m())
        .map(|i| {
            let fit = erm_from_predictions(&preds, data, grid.theta(i));
            BaseMember {
                theta_index: i,
                competitor: candidates[fit.index].clone(),
            }
        })
        .collect();
    BasePredictorSet::new(grid.clone(), members)
}

/// Competitors that realize every above/below pattern an affine function
/// of a scalar covariate can induce on the data, at every `θ ∈ (0, 1)`.
///
/// For distinct sorted values `u_1 < ... < u_k` this yields the `k + 1`
/// patterns `{x > c}` and the `k + 1` patterns `{x < c}` (the all/none
/// patterns appear in both lists).
pub fn enumerate_linear_candidates(data: &Dataset) -> Result<Vec<Competitor>> {
    if data.dim() != 1 {
        return Err(OmniError::UnsupportedDimension {
            got: data.dim(),
            expected: 1,
        });
    }
    if data.is_empty() {
        return Err(OmniError::EmptyData("training data"));
    }
    let mut us: Vec<f64> = data.iter().map(|(x, _)| x[0]).collect();
    us.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    us.dedup();
    let min_gap = us
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    // Steep enough that every sample lands on 0 or 1 after clamping.
    let slope = if min_gap.is_finite() { 2.0 / min_gap } else { 1.0 };
    let cuts: Vec<f64> = us.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();

    let mut out = Vec::with_capacity(2 * (us.len() + 1));
    out.push(Competitor::Constant { value: 1.0 });
    for &c in &cuts {
        out.push(Competitor::Affine {
            intercept: 0.5 - slope * c,
            slope,
        });
    }
    out.push(Competitor::Constant { value: 0.0 });
    out.push(Competitor::Constant { value: 0.0 });
    for &c in &cuts {
        out.push(Competitor::Affine {
            intercept: 0.5 + slope * c,
            slope: -slope,
        });
    }
    out.push(Competitor::Constant { value: 1.0 });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(xs: &[f64], ys: &[bool]) -> Dataset {
        Dataset::from_parts(1, xs.to_vec(), ys.to_vec()).unwrap()
    }

    #[test]
    fn recode_flanks_theta() {
        let g = ThetaGrid::new(4).unwrap();
        for i in 0..4 {
            assert_eq!(recode(&g, i, g.theta(i)), i);
            assert_eq!(recode(&g, i, 0.0), i);
            assert_eq!(recode(&g, i, 1.0), i + 1);
        }
        // Identity competitor at x = θ_i stays on the low side.
        let id = FnPredictor(|x: &[f64]| x[0]);
        let raw = id.predict(&[g.theta(2)]).unwrap();
        assert_eq!(recode(&g, 2, raw), 2);
    }

    #[test]
    fn erm_ties_go_to_lowest_index() {
        let data = toy(&[0.1, 0.9], &[false, true]);
        let cands = vec![
            Competitor::Constant { value: 0.2 },
            Competitor::Constant { value: 0.3 },
        ];
        let fit = erm_fit(&cands, &data, 0.5).unwrap();
        assert_eq!(fit.index, 0);
        assert!(erm_fit(&cands, &Dataset::new(1), 0.5).is_err());
        let none: Vec<Competitor> = Vec::new();
        assert!(erm_fit(&none, &data, 0.5).is_err());
    }

    #[test]
    fn candidate_counts() {
        let data = toy(&[0.1, 0.5, 0.9], &[true, false, true]);
        let cands = enumerate_linear_candidates(&data).unwrap();
        assert_eq!(cands.len(), 8);
        let one = toy(&[0.3], &[true]);
        assert!(enumerate_linear_candidates(&one).unwrap().len() >= 2);
        let two_d = Dataset::from_parts(2, vec![0.1, 0.2], vec![true]).unwrap();
        assert!(enumerate_linear_candidates(&two_d).is_err());
    }

    #[test]
    fn steep_candidates_hit_zero_and_one_on_data() {
        let data = toy(&[0.05, 0.45, 0.85, 0.45], &[true, false, true, true]);
        for c in enumerate_linear_candidates(&data).unwrap() {
            for (x, _) in data.iter() {
                let p = c.predict(x).unwrap();
                assert!(p == 0.0 || p == 1.0, "{c:?} gives {p} at {x:?}");
            }
        }
    }

    #[test]
    fn lookup_rejects_unseen() {
        let c = Competitor::lookup("f", vec![(2.0, 0.4), (1.0, 0.1)]).unwrap();
        assert_eq!(c.predict(&[1.0]).unwrap(), 0.1);
        assert_eq!(c.predict(&[2.0]).unwrap(), 0.4);
        assert!(matches!(c.predict(&[3.0]), Err(OmniError::UnseenCovariate(_))));
        assert!(Competitor::lookup("f", vec![(1.0, 0.1), (1.0, 0.2)]).is_err());
    }

    #[test]
    fn folds_cover_rows() {
        let data = toy(&[0.0, 0.1, 0.2, 0.3, 0.4], &[true; 5]);
        let folds = data.folds(2).unwrap();
        assert_eq!(folds.iter().map(Dataset::len).sum::<usize>(), 5);
        assert!(data.folds(6).is_err());
    }

    #[test]
    fn grid_distribution_checks() {
        assert!(GridDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(GridDistribution::new(vec![-0.1, 1.1]).is_err());
        let d = GridDistribution::new(vec![0.25, 0.5, 0.25]).unwrap();
        assert!((d.mean() - 0.5).abs() < 1e-15);
    }
}
