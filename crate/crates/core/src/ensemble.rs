//! Direct ensembling: pairwise merges of grid-valued predictors along a
//! binary tree over the parameter grid.
//!
//! Every predictor here is a function of the base outputs at `x`, so nodes
//! are evaluated on a row of leaf outputs (grid indices, one per parameter).

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};
use crate::losses::ThetaGrid;
use crate::predictors::{BasePredictorSet, Dataset, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Low,
    High,
}

/// A node of the merge tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// The recoded base member for `θ_{theta_index}`.
    Leaf { theta_index: usize },
    Merge(Box<MergeNode>),
}

/// Result of merging a high-parameter child with a low-parameter child.
///
/// `use_low[a][b]` says whether the pair `(support_high[a], support_low[b])`
/// of child outputs takes the low child's value. Parameter sets, supports
/// and switch points are indices: parameters into the `θ` grid, supports
/// into the prediction grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeNode {
    pub theta_high: Vec<usize>,
    pub theta_low: Vec<usize>,
    pub support_high: Vec<usize>,
    pub support_low: Vec<usize>,
    pub use_low: Vec<Vec<bool>>,
    pub switch_high: Vec<usize>,
    pub switch_low: Vec<usize>,
    pub final_direction: Direction,
    pub iterations: usize,
    pub high: Node,
    pub low: Node,
}

impl Node {
    /// Parameters covered by this node, ascending.
    pub fn theta_set(&self) -> Vec<usize> {
        match self {
            Node::Leaf { theta_index } => vec![*theta_index],
            Node::Merge(node) => {
                let mut set = node.theta_low.clone();
                set.extend_from_slice(&node.theta_high);
                set
            }
        }
    }

    /// Grid indices the node can output, ascending.
    pub fn support(&self) -> Vec<usize> {
        match self {
            Node::Leaf { theta_index } => vec![*theta_index, theta_index + 1],
            Node::Merge(node) => {
                let mut s = node.support_low.clone();
                s.extend_from_slice(&node.support_high);
                s.sort_unstable();
                s.dedup();
                s
            }
        }
    }

    /// Output grid index given the leaf outputs `row`.
    pub fn eval(&self, row: &[usize]) -> Result<usize> {
        match self {
            Node::Leaf { theta_index } => row.get(*theta_index).copied().ok_or_else(|| {
                OmniError::InvalidInput(format!("row has no output for parameter {theta_index}"))
            }),
            Node::Merge(node) => {
                let vh = node.high.eval(row)?;
                let vl = node.low.eval(row)?;
                let a = locate(&node.support_high, vh)?;
                let b = locate(&node.support_low, vl)?;
                Ok(if node.use_low[a][b] { vl } else { vh })
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Merge(node) => 1 + node.high.depth().max(node.low.depth()),
        }
    }

    /// Merge nodes in pre-order.
    pub fn merges(&self) -> Vec<&MergeNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            if let Node::Merge(m) = node {
                out.push(m.as_ref());
                stack.push(&m.low);
                stack.push(&m.high);
            }
        }
        out
    }
}

fn locate(support: &[usize], v: usize) -> Result<usize> {
    support
        .binary_search(&v)
        .map_err(|_| OmniError::Precondition(format!("child output {v} is outside its declared support")))
}

/// Leaf-output rows (`n × m`, row-major) with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafRows {
    m: usize,
    rows: Vec<usize>,
    labels: Vec<bool>,
}

impl LeafRows {
    pub fn new(m: usize, rows: Vec<usize>, labels: Vec<bool>) -> Result<Self> {
        if rows.len() != m * labels.len() {
            return Err(OmniError::InvalidInput("leaf rows do not match label count".into()));
        }
        Ok(LeafRows { m, rows, labels })
    }

    pub fn from_data(base: &BasePredictorSet, data: &Dataset) -> Result<Self> {
        Self::new(base.m(), base.output_matrix(data)?, data.labels().to_vec())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i * self.m..(i + 1) * self.m]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn slice(&self, start: usize, end: usize) -> LeafRows {
        LeafRows {
            m: self.m,
            rows: self.rows[start * self.m..end * self.m].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    /// Empirical `ℓ_{θ_i}` loss of `node`.
    pub fn loss(&self, grid: &ThetaGrid, node: &Node, i: usize) -> Result<f64> {
        let mut total = 0.0;
        for (k, &y) in self.labels.iter().enumerate() {
            total += grid.loss_at(i, node.eval(self.row(k))?, y);
        }
        Ok(total / self.len() as f64)
    }
}

/// Merges `high` (larger parameters) with `low` on the sample `data`.
///
/// The scan starts at the top of `Θ_l` with the high threshold at a
/// sentinel below every parameter, so the first low-side test covers the
/// whole region where the low child sits at or below its parameter.
pub fn merge(grid: &ThetaGrid, high: Node, low: Node, data: &LeafRows, epsilon: f64) -> Result<Node> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(OmniError::OutOfRange {
            field: "epsilon",
            value: epsilon,
            expected: "[0, inf)",
        });
    }
    if data.is_empty() {
        return Err(OmniError::EmptyData("merge data"));
    }
    let theta_high = high.theta_set();
    let theta_low = low.theta_set();
    let max_low = *theta_low.last().expect("non-empty parameter set");
    let min_high = theta_high[0];
    if max_low >= min_high {
        return Err(OmniError::Precondition(format!(
            "low parameters reach index {max_low} but high parameters start at {min_high}"
        )));
    }
    let support_high = high.support();
    let support_low = low.support();
    if let Some(&j) = support_high.iter().find(|&&j| !ThetaGrid::above(j, max_low)) {
        return Err(OmniError::Precondition(format!(
            "high child can output {j}/m, not above the largest low parameter"
        )));
    }
    if let Some(&j) = support_low.iter().find(|&&j| ThetaGrid::above(j, min_high)) {
        return Err(OmniError::Precondition(format!(
            "low child can output {j}/m, above the smallest high parameter"
        )));
    }

    // Contingency table of (count, positives) per pair of child outputs.
    let (na, nb) = (support_high.len(), support_low.len());
    let mut counts = vec![vec![(0u64, 0u64); nb]; na];
    for k in 0..data.len() {
        let row = data.row(k);
        let a = locate(&support_high, high.eval(row)?)?;
        let b = locate(&support_low, low.eval(row)?)?;
        counts[a][b].0 += 1;
        counts[a][b].1 += data.labels()[k] as u64;
    }

    let n = data.len() as f64;
    let two_m = (2 * grid.m()) as i64;
    // Σ_E (Y − θ_i) in units of 1/(2m), exact. `h_thr = None` is the
    // sentinel below every parameter.
    let region_sum = |h_thr: Option<usize>, l_thr: usize, i: usize| -> i64 {
        let mut total = 0i64;
        for (a, &vh) in support_high.iter().enumerate() {
            if h_thr.is_some_and(|t| !ThetaGrid::above(vh, t)) {
                continue;
            }
            for (b, &vl) in support_low.iter().enumerate() {
                if ThetaGrid::above(vl, l_thr) {
                    continue;
                }
                let (cnt, pos) = counts[a][b];
                total += two_m * pos as i64 - (2 * i as i64 + 1) * cnt as i64;
            }
        }
        total
    };
    let scale = 1.0 / (two_m as f64 * n);

    let mut use_low = vec![vec![false; nb]; na];
    let mut assign = |h_thr: Option<usize>, l_thr: usize, to_low: bool| {
        for (a, &vh) in support_high.iter().enumerate() {
            if h_thr.is_some_and(|t| !ThetaGrid::above(vh, t)) {
                continue;
            }
            for (b, &vl) in support_low.iter().enumerate() {
                if !ThetaGrid::above(vl, l_thr) {
                    use_low[a][b] = to_low;
                }
            }
        }
    };

    let mut dir = Direction::Low;
    // Positions into the parameter lists; `h_pos = None` is the sentinel.
    let mut h_pos: Option<usize> = None;
    let mut l_pos: usize = theta_low.len() - 1;
    let mut h_done = false;
    let mut l_done = false;
    let mut switch_high = Vec::new();
    let mut switch_low = Vec::new();
    let mut iterations = 0usize;

    while !h_done && !l_done {
        iterations += 1;
        let theta_l = theta_low[l_pos];
        let h_thr = h_pos.map(|k| theta_high[k]);
        match dir {
            Direction::Low => {
                let stat = region_sum(h_thr, theta_l, theta_l) as f64 * scale;
                if stat < -epsilon {
                    assign(h_thr, theta_l, true);
                    switch_low.push(theta_l);
                    let next = h_pos.map_or(0, |k| k + 1);
                    if next < theta_high.len() {
                        h_pos = Some(next);
                    } else {
                        h_done = true;
                    }
                    dir = Direction::High;
                } else if l_pos == 0 {
                    l_done = true;
                } else {
                    l_pos -= 1;
                }
            }
            Direction::High => {
                let k = h_pos.expect("high scan starts after a low switch");
                let theta_h = theta_high[k];
                // Σ_E (θ_h − Y) is the negation of the low-side sum.
                let stat = -(region_sum(Some(theta_h), theta_l, theta_h) as f64) * scale;
                if stat < -epsilon {
                    assign(Some(theta_h), theta_l, false);
                    switch_high.push(theta_h);
                    if l_pos == 0 {
                        l_done = true;
                    } else {
                        l_pos -= 1;
                    }
                    dir = Direction::Low;
                } else if k + 1 < theta_high.len() {
                    h_pos = Some(k + 1);
                } else {
                    h_done = true;
                }
            }
        }
    }

    let node = MergeNode {
        theta_high,
        theta_low,
        support_high,
        support_low,
        use_low,
        switch_high,
        switch_low,
        final_direction: dir,
        iterations,
        high,
        low,
    };
    if node.iterations > node.theta_high.len() + node.theta_low.len() {
        return Err(OmniError::Numeric(format!(
            "merge ran {} iterations for {} parameters",
            node.iterations,
            node.theta_high.len() + node.theta_low.len()
        )));
    }
    if reconstruct_use_low(&node)? != node.use_low {
        return Err(OmniError::Numeric("merge table is not the switch-point staircase".into()));
    }
    Ok(Node::Merge(Box::new(node)))
}

/// Rebuilds the low-child region from the recorded switch points.
///
/// With `h_0` below every value and `l_0` above every value, the region
/// is `∪_{i=1..c_l} {l_i < p_l ≤ l_{i−1}, p_h ≤ h_{i−1}}` together with
/// `{p_h ≤ h_{c_h}, p_l ≤ l_{c_l}}` when the scan ended looking low, or
/// `{p_l ≤ l_{c_l}}` when it ended looking high.
pub fn reconstruct_use_low(node: &MergeNode) -> Result<Vec<Vec<bool>>> {
    let c_h = node.switch_high.len();
    let c_l = node.switch_low.len();
    let consistent = match node.final_direction {
        Direction::Low => c_l == c_h,
        Direction::High => c_l == c_h + 1,
    };
    if !consistent {
        return Err(OmniError::Numeric(format!(
            "{c_l} low and {c_h} high switches cannot end in direction {:?}",
            node.final_direction
        )));
    }
    // Index 0 is the sentinel in both lists.
    let h = |i: usize| if i == 0 { None } else { Some(node.switch_high[i - 1]) };
    let l = |i: usize| if i == 0 { None } else { Some(node.switch_low[i - 1]) };
    let ph_le = |vh: usize, t: Option<usize>| t.is_some_and(|t| !ThetaGrid::above(vh, t));
    let pl_le = |vl: usize, t: Option<usize>| t.is_none_or(|t| !ThetaGrid::above(vl, t));

    let mut table = vec![vec![false; node.support_low.len()]; node.support_high.len()];
    for (a, &vh) in node.support_high.iter().enumerate() {
        for (b, &vl) in node.support_low.iter().enumerate() {
            let band = (1..=c_l).any(|i| !pl_le(vl, l(i)) && pl_le(vl, l(i - 1)) && ph_le(vh, h(i - 1)));
            let tail = match node.final_direction {
                Direction::Low => ph_le(vh, h(c_h)) && pl_le(vl, l(c_l)),
                Direction::High => pl_le(vl, l(c_l)),
            };
            table[a][b] = band || tail;
        }
    }
    Ok(table)
}

/// Grid-valued predictor produced by the ensemble scheme.
#[derive(Debug, Clone)]
pub struct MergedPredictor {
    base: BasePredictorSet,
    root: Node,
}

/// JSON form of a [`MergedPredictor`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergedArtifact {
    pub m: usize,
    pub root: Node,
    pub base_ref: String,
}

impl MergedPredictor {
    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn base(&self) -> &BasePredictorSet {
        &self.base
    }

    pub fn to_artifact(&self, base_ref: impl Into<String>) -> MergedArtifact {
        MergedArtifact {
            m: self.base.m(),
            root: self.root.clone(),
            base_ref: base_ref.into(),
        }
    }

    pub fn from_artifact(art: MergedArtifact, base: BasePredictorSet) -> Result<Self> {
        let expected: Vec<usize> = (0..base.m()).collect();
        if art.m != base.m() || art.root.theta_set() != expected {
            return Err(OmniError::InvalidInput("merge tree does not cover the base grid".into()));
        }
        for node in art.root.merges() {
            if reconstruct_use_low(node)? != node.use_low {
                return Err(OmniError::InvalidInput("stored merge table is inconsistent".into()));
            }
        }
        Ok(MergedPredictor { base, root: art.root })
    }
}

/// Grid index output at `x`.
pub fn evaluate_merged(mp: &MergedPredictor, x: &[f64]) -> Result<usize> {
    mp.root.eval(&mp.base.outputs(x)?)
}

impl Predictor for MergedPredictor {
    fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(evaluate_merged(self, x)? as f64 / self.base.m() as f64)
    }
}

/// Merges adjacent pairs for `log₂ m` rounds. With `split`, round `t`
/// uses the `t`-th contiguous fold of the data; otherwise all of it.
pub fn ensemble_scheme(base: &BasePredictorSet, data: &Dataset, epsilon: f64, split: bool) -> Result<MergedPredictor> {
    if !base.m().is_power_of_two() {
        return Err(OmniError::InvalidInput(format!(
            "grid size {} is not a power of two",
            base.m()
        )));
    }
    build_tree(base, data, epsilon, split)
}

/// As [`ensemble_scheme`] for any `m`: a node left without a partner in
/// some round is carried to the next round unchanged.
pub fn ensemble_scheme_padded(base: &BasePredictorSet, data: &Dataset, epsilon: f64, split: bool) -> Result<MergedPredictor> {
    build_tree(base, data, epsilon, split)
}

fn build_tree(base: &BasePredictorSet, data: &Dataset, epsilon: f64, split: bool) -> Result<MergedPredictor> {
    if data.is_empty() {
        return Err(OmniError::EmptyData("training data"));
    }
    let m = base.m();
    let rounds = m.next_power_of_two().trailing_zeros() as usize;
    let all = LeafRows::from_data(base, data)?;
    if split && rounds > all.len() {
        return Err(OmniError::InvalidInput(format!(
            "cannot split {} rows into {rounds} folds",
            all.len()
        )));
    }
    let mut nodes: Vec<Node> = (0..m).map(|theta_index| Node::Leaf { theta_index }).collect();
    for t in 0..rounds {
        let fold = if split {
            let n = all.len();
            all.slice(t * n / rounds, (t + 1) * n / rounds)
        } else {
            all.clone()
        };
        let mut next = Vec::with_capacity(nodes.len().div_ceil(2));
        let mut it = nodes.into_iter();
        while let Some(low) = it.next() {
            match it.next() {
                Some(high) => next.push(merge(base.grid(), high, low, &fold, epsilon)?),
                None => next.push(low),
            }
        }
        nodes = next;
    }
    let root = nodes.pop().expect("one node remains");
    Ok(MergedPredictor {
        base: base.clone(),
        root,
    })
}
