//! Method dispatch, model artifacts, and replicated sweeps on simulated
//! data.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calma::{
    calma_boost, calma_game, default_alpha, default_game_eta, BoostConfig, BoostState, CalmaGamePredictor,
    CalmaGameState, CalmaPredictor, LossDerivativeClass,
};
use crate::dataio::{derive_seed, FiniteDistribution};
use crate::ensemble::{ensemble_scheme_padded, MergedArtifact, MergedPredictor};
use crate::error::{OmniError, Result};
use crate::eval::{best_base_model, omni_error, OmniReport};
use crate::game::{default_eta, run_two_player, sqrt_grid_size, GameArtifact, GamePredictor};
use crate::losses::ThetaGrid;
use crate::predictors::{enumerate_linear_candidates, fit_base, BasePredictorSet, Competitor, Dataset, Forecast, Forecaster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TwoPlayer,
    Direct,
    CalmaBoost,
    CalmaGame,
    BestBase,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::TwoPlayer,
        Method::Direct,
        Method::CalmaBoost,
        Method::CalmaGame,
        Method::BestBase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::TwoPlayer => "two-player",
            Method::Direct => "direct",
            Method::CalmaBoost => "calma-boost",
            Method::CalmaGame => "calma-game",
            Method::BestBase => "best-base",
        }
    }

    /// Default scale of the method's rate or tolerance.
    pub fn default_c(self) -> f64 {
        match self {
            Method::TwoPlayer => 32.0,
            Method::Direct => 0.0,
            Method::CalmaBoost => 0.5,
            Method::CalmaGame => 1.0,
            Method::BestBase => 0.0,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = OmniError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| OmniError::InvalidInput(format!("unknown method {s:?}")))
    }
}

/// Knobs shared by every method; `c` scales the method's own rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub c: f64,
    pub stride: usize,
    pub split: bool,
}

impl TrainOptions {
    pub fn for_method(method: Method) -> Self {
        TrainOptions {
            c: method.default_c(),
            stride: 1,
            split: false,
        }
    }
}

/// A fitted model of any method.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    TwoPlayer(GamePredictor),
    Direct(MergedPredictor),
    CalmaBoost(CalmaPredictor<LossDerivativeClass>),
    CalmaGame(CalmaGamePredictor<LossDerivativeClass>),
    BestBase(Competitor),
}

impl Forecaster for TrainedModel {
    fn forecast(&self, x: &[f64]) -> Result<Forecast> {
        match self {
            TrainedModel::TwoPlayer(p) => p.forecast(x),
            TrainedModel::Direct(p) => p.forecast(x),
            TrainedModel::CalmaBoost(p) => p.forecast(x),
            TrainedModel::CalmaGame(p) => p.forecast(x),
            TrainedModel::BestBase(p) => p.forecast(x),
        }
    }
}

/// Fits `method` on `train`. `pool` is only used by the best-base method.
pub fn train(
    method: Method,
    base: &BasePredictorSet,
    train: &Dataset,
    pool: &[Competitor],
    opts: TrainOptions,
) -> Result<TrainedModel> {
    let m = base.m();
    let n = train.len();
    if n == 0 {
        return Err(OmniError::EmptyData("training data"));
    }
    Ok(match method {
        Method::TwoPlayer => {
            let eta = default_eta(opts.c, m, n);
            TrainedModel::TwoPlayer(run_two_player(train, base, eta)?.with_stride(opts.stride)?)
        }
        Method::Direct => {
            let eps = opts.c * ((m as f64).ln() / n as f64).sqrt();
            TrainedModel::Direct(ensemble_scheme_padded(base, train, eps, opts.split)?)
        }
        Method::CalmaBoost => {
            let alpha = default_alpha(opts.c, m, n);
            let aux = LossDerivativeClass::new(base.clone());
            TrainedModel::CalmaBoost(calma_boost(aux, train, BoostConfig::new(alpha, m))?)
        }
        Method::CalmaGame => {
            let eta = default_game_eta(opts.c, m, m, n);
            let aux = LossDerivativeClass::new(base.clone());
            TrainedModel::CalmaGame(calma_game(aux, train, m, eta)?)
        }
        Method::BestBase => {
            let k = best_base_model(pool, base, train)?;
            TrainedModel::BestBase(pool[k].clone())
        }
    })
}

/// JSON form of a [`TrainedModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum ModelArtifact {
    TwoPlayer(GameArtifact),
    Direct(MergedArtifact),
    CalmaBoost { base_ref: String, state: BoostState },
    CalmaGame { base_ref: String, state: CalmaGameState },
    BestBase { competitor: Competitor },
}

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            TrainedModel::TwoPlayer(_) => Method::TwoPlayer,
            TrainedModel::Direct(_) => Method::Direct,
            TrainedModel::CalmaBoost(_) => Method::CalmaBoost,
            TrainedModel::CalmaGame(_) => Method::CalmaGame,
            TrainedModel::BestBase(_) => Method::BestBase,
        }
    }

    pub fn to_artifact(&self, base_ref: &str) -> ModelArtifact {
        match self {
            TrainedModel::TwoPlayer(p) => ModelArtifact::TwoPlayer(p.to_artifact(base_ref)),
            TrainedModel::Direct(p) => ModelArtifact::Direct(p.to_artifact(base_ref)),
            TrainedModel::CalmaBoost(p) => ModelArtifact::CalmaBoost {
                base_ref: base_ref.into(),
                state: p.state().clone(),
            },
            TrainedModel::CalmaGame(p) => ModelArtifact::CalmaGame {
                base_ref: base_ref.into(),
                state: p.state().clone(),
            },
            TrainedModel::BestBase(c) => ModelArtifact::BestBase { competitor: c.clone() },
        }
    }

    pub fn from_artifact(art: ModelArtifact, base: &BasePredictorSet) -> Result<Self> {
        let aux = || LossDerivativeClass::new(base.clone());
        Ok(match art {
            ModelArtifact::TwoPlayer(a) => TrainedModel::TwoPlayer(GamePredictor::from_artifact(a, base.clone())?),
            ModelArtifact::Direct(a) => TrainedModel::Direct(MergedPredictor::from_artifact(a, base.clone())?),
            ModelArtifact::CalmaBoost { state, .. } => TrainedModel::CalmaBoost(CalmaPredictor::from_state(aux(), state)?),
            ModelArtifact::CalmaGame { state, .. } => {
                TrainedModel::CalmaGame(CalmaGamePredictor::from_state(aux(), state)?)
            }
            ModelArtifact::BestBase { competitor } => TrainedModel::BestBase(competitor),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    #[default]
    Fixed,
    Sqrt,
}

fn default_m() -> usize {
    16
}
fn default_replicates() -> usize {
    1
}
fn default_fit_size() -> usize {
    500
}
fn default_test_size() -> usize {
    2000
}
fn default_stride() -> usize {
    1
}

/// Sweep over methods, training sizes and rate scales on the simulated
/// distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n_list: Vec<usize>,
    #[serde(default)]
    pub m_mode: GridMode,
    #[serde(default = "default_m")]
    pub m: usize,
    /// Scales per method; methods without an entry use their default.
    #[serde(default)]
    pub c_list: BTreeMap<Method, Vec<f64>>,
    pub methods: Vec<Method>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fit_size")]
    pub fit_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default)]
    pub split: bool,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(OmniError::InvalidInput("n_list needs positive sizes".into()));
        }
        if self.methods.is_empty() {
            return Err(OmniError::InvalidInput("no methods selected".into()));
        }
        if self.replicates == 0 || self.fit_size == 0 || self.test_size == 0 || self.stride == 0 {
            return Err(OmniError::InvalidInput(
                "replicates, fit_size, test_size and stride must be positive".into(),
            ));
        }
        for &n in &self.n_list {
            if self.grid_size(n) < 2 {
                return Err(OmniError::InvalidInput(format!("grid size for n = {n} is below 2")));
            }
        }
        Ok(())
    }

    pub fn grid_size(&self, n: usize) -> usize {
        match self.m_mode {
            GridMode::Fixed => self.m,
            GridMode::Sqrt => sqrt_grid_size(n),
        }
    }

    pub fn scales(&self, method: Method) -> Vec<f64> {
        self.c_list
            .get(&method)
            .cloned()
            .unwrap_or_else(|| vec![method.default_c()])
    }
}

/// One replicate of one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub n: usize,
    pub m: usize,
    pub c: f64,
    pub replicate: usize,
    pub sup_gap: f64,
    pub argmax_theta: f64,
    pub status: String,
}

/// Mean and standard error of `sup_gap` over a cell's successful
/// replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub n: usize,
    pub m: usize,
    pub c: f64,
    pub count: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// `sqrt(se_a² + se_b²)`.
pub fn pooled_se(a: &CellSummary, b: &CellSummary) -> f64 {
    (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
}

/// The data drawn for one `(n, replicate)`; shared by every method and
/// scale so that comparisons use common random numbers.
pub struct ReplicateData {
    pub fit: Dataset,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn replicate_data(cfg: &SweepConfig, n: usize, replicate: usize) -> ReplicateData {
    let dist = FiniteDistribution::simulated();
    let (n_s, r_s) = (n.to_string(), replicate.to_string());
    let key = |part: &str| derive_seed(cfg.seed, &[part, &n_s, &r_s]);
    ReplicateData {
        fit: dist.sample(cfg.fit_size, key("fit")),
        train: dist.sample(n, key("train")),
        test: dist.sample(cfg.test_size, key("test")),
    }
}

/// Fits and evaluates one cell replicate.
pub fn run_cell(cfg: &SweepConfig, method: Method, n: usize, c: f64, replicate: usize) -> Result<OmniReport> {
    let m = cfg.grid_size(n);
    let data = replicate_data(cfg, n, replicate);
    let pool = enumerate_linear_candidates(&data.fit)?;
    let base = fit_base(&pool, &data.fit, &ThetaGrid::new(m)?)?;
    let opts = TrainOptions {
        c,
        stride: cfg.stride,
        split: cfg.split,
    };
    let model = train(method, &base, &data.train, &pool, opts)?;
    omni_error(&model, &base, &data.test)
}

/// Number of worker threads: `OMNI_WORKERS` if set, else all cores.
pub fn worker_count() -> usize {
    std::env::var("OMNI_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every cell replicate. Failures are recorded in the row status.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for &method in &cfg.methods {
        for &n in &cfg.n_list {
            for c in cfg.scales(method) {
                for r in 0..cfg.replicates {
                    jobs.push((method, n, c, r));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| OmniError::InvalidInput(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        jobs.par_iter()
            .map(|&(method, n, c, replicate)| {
                let m = cfg.grid_size(n);
                let (sup_gap, argmax_theta, status) = match run_cell(cfg, method, n, c, replicate) {
                    Ok(rep) => (rep.sup_gap, rep.argmax_theta, "ok".to_string()),
                    Err(e) => (f64::NAN, f64::NAN, e.to_string()),
                };
                SweepRow {
                    method,
                    n,
                    m,
                    c,
                    replicate,
                    sup_gap,
                    argmax_theta,
                    status,
                }
            })
            .collect()
    });
    Ok(rows)
}

fn cell_key(r: &SweepRow) -> (Method, usize, usize, u64) {
    (r.method, r.n, r.m, r.c.to_bits())
}

/// Per-cell summaries in row order of first appearance.
pub fn summarize(rows: &[SweepRow]) -> Vec<CellSummary> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<(Method, usize, usize, u64), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = cell_key(r);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        let g = groups.entry(key).or_default();
        if r.status == "ok" {
            g.push(r.sup_gap);
        }
    }
    order
        .into_iter()
        .map(|key| {
            let vals = &groups[&key];
            let count = vals.len();
            let mean = vals.iter().sum::<f64>() / count as f64;
            let stderr = if count > 1 {
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
                (var / count as f64).sqrt()
            } else {
                f64::NAN
            };
            CellSummary {
                method: key.0,
                n: key.1,
                m: key.2,
                c: f64::from_bits(key.3),
                count,
                mean,
                stderr,
            }
        })
        .collect()
}

/// Finds the summary of one cell.
pub fn find_cell(summaries: &[CellSummary], method: Method, n: usize, c: f64) -> Option<&CellSummary> {
    summaries.iter().find(|s| s.method == method && s.n == n && s.c == c)
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// CSV with one row per replicate plus the cell's mean and standard error.
pub fn write_sweep<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let summaries = summarize(rows);
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "method",
        "n",
        "m",
        "c",
        "replicate",
        "sup_gap",
        "argmax_theta",
        "status",
        "cell_mean",
        "cell_stderr",
    ])?;
    for r in rows {
        let s = summaries
            .iter()
            .find(|s| (s.method, s.n, s.m, s.c.to_bits()) == cell_key(r))
            .expect("every row has a cell");
        wtr.write_record([
            r.method.name().to_string(),
            r.n.to_string(),
            r.m.to_string(),
            r.c.to_string(),
            r.replicate.to_string(),
            fmt_num(r.sup_gap),
            fmt_num(r.argmax_theta),
            r.status.clone(),
            fmt_num(s.mean),
            fmt_num(s.stderr),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
