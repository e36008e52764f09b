//! Weighted 0-1 losses, the discretized parameter grid, and finite mixtures
//! of the loss family.
//!
//! Grid parameters are `θ_i = (2i+1)/(2m)` for `i = 0..m` and grid
//! predictions are `j/m` for `j = 0..=m`. Comparisons between the two are
//! done on integer numerators: `j/m > θ_i` exactly when `j > i`.

use serde::{Deserialize, Serialize};

use crate::error::{check_unit, OmniError, Result};

/// Parameter grid and matching prediction grid at resolution `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct ThetaGrid {
    m: usize,
    thetas: Vec<f64>,
    points: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    m: usize,
}

impl TryFrom<GridSpec> for ThetaGrid {
    type Error = OmniError;
    fn try_from(spec: GridSpec) -> Result<Self> {
        ThetaGrid::new(spec.m)
    }
}

impl From<ThetaGrid> for GridSpec {
    fn from(grid: ThetaGrid) -> Self {
        GridSpec { m: grid.m }
    }
}

impl ThetaGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(OmniError::InvalidInput("grid size m must be at least 1".into()));
        }
        let denom = (2 * m) as f64;
        let thetas = (0..m).map(|i| (2 * i + 1) as f64 / denom).collect();
        let points = (0..=m).map(|j| j as f64 / m as f64).collect();
        Ok(ThetaGrid { m, thetas, points })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    /// The prediction grid `{0, 1/m, ..., 1}`.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.thetas[i]
    }

    pub fn point(&self, j: usize) -> f64 {
        self.points[j]
    }

    /// Whether grid point `j/m` lies strictly above `θ_i`.
    #[inline]
    pub fn above(j: usize, i: usize) -> bool {
        j > i
    }

    /// `ℓ_{θ_i}(j/m, y)` with the side of `θ_i` decided exactly.
    #[inline]
    pub fn loss_at(&self, i: usize, j: usize, y: bool) -> f64 {
        match (Self::above(j, i), y) {
            (true, false) => self.thetas[i],
            (false, true) => 1.0 - self.thetas[i],
            _ => 0.0,
        }
    }

    /// Index of the grid parameter nearest to `theta`. Ties between two
    /// parameters go to the upper one, so that grid predictions fall on
    /// the same side of `theta` and of the returned parameter.
    pub fn nearest_theta(&self, theta: f64) -> Result<usize> {
        check_unit("theta", theta)?;
        let i = (theta * self.m as f64).floor() as usize;
        Ok(i.min(self.m - 1))
    }
}

/// `ℓ_θ(p, y) = θ·1{p > θ, y = 0} + (1 − θ)·1{p ≤ θ, y = 1}`.
pub fn weighted_loss(theta: f64, p: f64, y: bool) -> Result<f64> {
    check_unit("theta", theta)?;
    check_unit("p", p)?;
    Ok(weighted_loss_raw(theta, p, y))
}

#[inline]
pub(crate) fn weighted_loss_raw(theta: f64, p: f64, y: bool) -> f64 {
    if p > theta {
        if y {
            0.0
        } else {
            theta
        }
    } else if y {
        1.0 - theta
    } else {
        0.0
    }
}

/// `E_{Y ~ Ber(p_true)} ℓ_θ(p, Y)`.
pub fn expected_weighted_loss(theta: f64, p: f64, p_true: f64) -> Result<f64> {
    check_unit("theta", theta)?;
    check_unit("p", p)?;
    check_unit("p_true", p_true)?;
    Ok(expected_weighted_loss_raw(theta, p, p_true))
}

#[inline]
pub(crate) fn expected_weighted_loss_raw(theta: f64, p: f64, p_true: f64) -> f64 {
    if p > theta {
        theta * (1.0 - p_true)
    } else {
        p_true * (1.0 - theta)
    }
}

/// Index of the nearest grid point `j/m`, ties rounded down.
pub fn round_to_grid_index(p: f64, m: usize) -> Result<usize> {
    check_unit("p", p)?;
    if m == 0 {
        return Err(OmniError::InvalidInput("grid size m must be at least 1".into()));
    }
    let j = (p * m as f64 - 0.5).ceil();
    Ok((j.max(0.0) as usize).min(m))
}

pub fn round_to_grid(p: f64, m: usize) -> Result<f64> {
    Ok(round_to_grid_index(p, m)? as f64 / m as f64)
}

/// A finite non-negative measure over `[0, 1]`, read as the loss
/// `Σ w·ℓ_θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMeasure {
    atoms: Vec<(f64, f64)>,
}

impl MixtureMeasure {
    /// Atoms are `(θ, weight)` pairs.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        for &(theta, w) in &atoms {
            check_unit("theta", theta)?;
            if !(w >= 0.0 && w.is_finite()) {
                return Err(OmniError::OutOfRange {
                    field: "weight",
                    value: w,
                    expected: "[0, inf)",
                });
            }
        }
        Ok(MixtureMeasure { atoms })
    }

    /// Midpoint discretization of a constant density on `[0, 1]` with `k`
    /// atoms.
    pub fn uniform_density(k: usize, density: f64) -> Result<Self> {
        if k == 0 {
            return Err(OmniError::InvalidInput("need at least one atom".into()));
        }
        let w = density / k as f64;
        Self::new((0..k).map(|i| ((i as f64 + 0.5) / k as f64, w)).collect())
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }
}

pub fn mixture_loss(measure: &MixtureMeasure, p: f64, y: bool) -> Result<f64> {
    check_unit("p", p)?;
    Ok(measure
        .atoms
        .iter()
        .map(|&(theta, w)| w * weighted_loss_raw(theta, p, y))
        .sum())
}
