//! Reference implementations used as independent oracles.

#![allow(dead_code)]

use omnipred::losses::ThetaGrid;

/// `Σ_i q_i (p_y − θ_i)(1{j/m ≤ θ_i} − 1{f̂_i ≤ θ_i})` for a point mass at
/// `j/m`, written from the definition with float comparisons.
pub fn point_objective(q: &[f64], outputs: &[usize], j: usize, p_y: f64) -> f64 {
    let m = q.len();
    let grid = ThetaGrid::new(m).unwrap();
    let v = j as f64 / m as f64;
    (0..m)
        .map(|i| {
            let theta = grid.theta(i);
            let ours = if v <= theta { 1.0 } else { 0.0 };
            let base = outputs[i] as f64 / m as f64;
            let theirs = if base <= theta { 1.0 } else { 0.0 };
            q[i] * (p_y - theta) * (ours - theirs)
        })
        .sum()
}

/// Minimum over the simplex on `0..k` of `max(f0·P, f1·P)`, by checking
/// every vertex and every edge crossing.
pub fn lp_min_max(f0: &[f64], f1: &[f64]) -> f64 {
    let k = f0.len();
    let mut best = f64::INFINITY;
    for a in 0..k {
        best = best.min(f0[a].max(f1[a]));
        for b in 0..k {
            if a == b {
                continue;
            }
            let da = f0[a] - f1[a];
            let db = f0[b] - f1[b];
            if da * db < 0.0 {
                let lam = db / (db - da);
                let v0 = lam * f0[a] + (1.0 - lam) * f0[b];
                best = best.min(v0);
            }
        }
    }
    best
}

/// Saddle value of the per-sample game by brute force over the grid.
pub fn minmax_oracle(q: &[f64], outputs: &[usize]) -> f64 {
    let m = q.len();
    let f0: Vec<f64> = (0..=m).map(|j| point_objective(q, outputs, j, 0.0)).collect();
    let f1: Vec<f64> = (0..=m).map(|j| point_objective(q, outputs, j, 1.0)).collect();
    lp_min_max(&f0, &f1)
}

/// Small deterministic generator for test inputs (xorshift64*).
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn below(&mut self, k: usize) -> usize {
        (self.next_u64() % k as u64) as usize
    }

    pub fn simplex(&mut self, k: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..k).map(|_| -(self.unit() + 1e-12).ln()).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|r| r / total).collect()
    }
}
