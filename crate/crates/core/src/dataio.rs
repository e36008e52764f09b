//! Simulated data, CSV readers and writers, and quantile-forecast
//! conversion.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit, OmniError, Result};
use crate::predictors::{Competitor, Dataset};

/// A distribution over finitely many scalar covariates with Bernoulli
/// labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    pub support: Vec<f64>,
    pub px: Vec<f64>,
    pub py_given_x: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(support: Vec<f64>, px: Vec<f64>, py_given_x: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != px.len() || px.len() != py_given_x.len() {
            return Err(OmniError::InvalidInput("support, px and py must have equal non-zero length".into()));
        }
        for &p in &px {
            check_unit("px", p)?;
        }
        for &p in &py_given_x {
            check_unit("py_given_x", p)?;
        }
        let total: f64 = px.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(OmniError::Numeric(format!("px sums to {total}")));
        }
        Ok(FiniteDistribution {
            support,
            px,
            py_given_x,
        })
    }

    /// Three covariate values with a non-monotone conditional mean.
    pub fn simulated() -> Self {
        FiniteDistribution {
            support: vec![0.05, 0.45, 0.85],
            px: vec![0.1, 0.6, 0.3],
            py_given_x: vec![0.3, 0.9, 0.4],
        }
    }

    /// `n` i.i.d. draws from a ChaCha stream keyed by `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut k = self.support.len() - 1;
            for (idx, &p) in self.px.iter().enumerate() {
                acc += p;
                if u < acc {
                    k = idx;
                    break;
                }
            }
            xs.push(self.support[k]);
            ys.push(rng.gen::<f64>() < self.py_given_x[k]);
        }
        Dataset::from_parts(1, xs, ys).expect("finite covariates")
    }
}

/// `n` draws from [`FiniteDistribution::simulated`].
pub fn gen_simulated(n: usize, seed: u64) -> Dataset {
    FiniteDistribution::simulated().sample(n, seed)
}

/// Stable 64-bit key for a tuple of labelled parts (FNV-1a folded through
/// a SplitMix64 finalizer).
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for part in parts {
        for b in part.bytes().chain(std::iter::once(0x1f)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| OmniError::Parse {
        line,
        msg: format!("{field:?} is not a number"),
    })
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r)
}

/// Reads `x_1,...,x_d,y` with a header row.
pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let mut rdr = reader(r);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(OmniError::Parse {
            line: 1,
            msg: "need at least one covariate column and a label column".into(),
        });
    }
    let mut data = Dataset::new(width - 1);
    let mut x = Vec::with_capacity(width - 1);
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        if rec.len() != width {
            return Err(OmniError::Parse {
                line,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        x.clear();
        for field in rec.iter().take(width - 1) {
            x.push(parse_f64(field, line)?);
        }
        let y = match rec[width - 1].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(OmniError::Parse {
                    line,
                    msg: format!("label {other:?} is not 0 or 1"),
                })
            }
        };
        data.push(&x, y).map_err(|e| OmniError::Parse {
            line,
            msg: e.to_string(),
        })?;
    }
    if data.is_empty() {
        return Err(OmniError::EmptyData("dataset file"));
    }
    Ok(data)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?)
}

pub fn write_dataset<W: Write>(w: W, data: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=data.dim()).map(|k| format!("x{k}")).collect();
    header.push("y".into());
    wtr.write_record(&header)?;
    for (x, y) in data.iter() {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push((y as u8).to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

fn group_lookups(rows: Vec<(String, f64, f64)>) -> Result<Vec<Competitor>> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (id, key, p) in rows {
        if !by_id.contains_key(&id) {
            order.push(id.clone());
        }
        by_id.entry(id).or_default().push((key, p));
    }
    order
        .into_iter()
        .map(|id| {
            let pairs = by_id.remove(&id).expect("grouped id");
            Competitor::lookup(id, pairs)
        })
        .collect()
}

/// Reads `sample_id,forecaster_id,p` rows into one lookup competitor per
/// forecaster, in order of first appearance. Sample ids must be numeric
/// and match the dataset's single covariate.
pub fn read_forecasts<R: Read>(r: R) -> Result<Vec<Competitor>> {
    let mut rdr = reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != ["sample_id", "forecaster_id", "p"] {
        return Err(OmniError::Parse {
            line: 1,
            msg: format!("unexpected forecast header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        let sample = parse_f64(&rec[0], line)?;
        let p = parse_f64(&rec[2], line)?;
        check_unit("forecast", p).map_err(|e| OmniError::Parse {
            line,
            msg: e.to_string(),
        })?;
        rows.push((rec[1].to_string(), sample, p));
    }
    if rows.is_empty() {
        return Err(OmniError::EmptyData("forecast file"));
    }
    group_lookups(rows)
}

pub fn load_forecasts(path: &Path) -> Result<Vec<Competitor>> {
    read_forecasts(std::fs::File::open(path)?)
}

/// Quantile levels and values of one forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    taus: Vec<f64>,
    quantiles: Vec<f64>,
}

impl QuantileForecast {
    /// `taus` strictly increasing in `(0, 1)`, `quantiles` non-decreasing.
    pub fn new(taus: Vec<f64>, quantiles: Vec<f64>) -> Result<Self> {
        if taus.is_empty() || taus.len() != quantiles.len() {
            return Err(OmniError::InvalidInput("need equal, non-zero numbers of levels and quantiles".into()));
        }
        if taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(OmniError::InvalidInput("quantile levels must lie in (0, 1)".into()));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(OmniError::InvalidInput("quantile levels must be strictly increasing".into()));
        }
        if quantiles.iter().any(|q| !q.is_finite()) || quantiles.windows(2).any(|w| w[1] < w[0]) {
            return Err(OmniError::InvalidInput("quantiles must be finite and non-decreasing".into()));
        }
        Ok(QuantileForecast { taus, quantiles })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }
}

/// Piecewise-linear CDF through the quantile knots: 0 below the first
/// quantile, 1 at or above the last, and right-continuous at repeated
/// quantiles.
pub fn interpolate_cdf(qf: &QuantileForecast, x: f64) -> f64 {
    let (t, q) = (&qf.taus, &qf.quantiles);
    let k = q.len();
    if x < q[0] {
        return 0.0;
    }
    if x >= q[k - 1] {
        return 1.0;
    }
    // Last knot with q_i ≤ x; then q_i ≤ x < q_{i+1}.
    let i = q.partition_point(|&v| v <= x) - 1;
    t[i] + (t[i + 1] - t[i]) / (q[i + 1] - q[i]) * (x - q[i])
}

/// `lim_{z ↑ x} F̂(z)`.
pub fn cdf_left_limit(qf: &QuantileForecast, x: f64) -> f64 {
    let (t, q) = (&qf.taus, &qf.quantiles);
    let k = q.len();
    if x <= q[0] {
        return 0.0;
    }
    if x > q[k - 1] {
        return 1.0;
    }
    // First knot with q_i ≥ x; then q_{i−1} < x ≤ q_i.
    let i = q.partition_point(|&v| v < x);
    t[i - 1] + (t[i] - t[i - 1]) / (q[i] - q[i - 1]) * (x - q[i - 1])
}

/// Which point of the CDF defines a non-zero sale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SaleEvent {
    /// `P(sales > 0) = 1 − F̂(0)`.
    #[default]
    AboveZero,
    /// `P(sales ≥ 1) = 1 − F̂(1⁻)`.
    AtLeastOne,
}

pub fn prob_nonzero_sale(qf: &QuantileForecast, event: SaleEvent) -> f64 {
    let f = match event {
        SaleEvent::AboveZero => interpolate_cdf(qf, 0.0),
        SaleEvent::AtLeastOne => cdf_left_limit(qf, 1.0),
    };
    (1.0 - f).clamp(0.0, 1.0)
}

/// Reads `item_id,forecaster_id,tau,quantile` rows and converts every
/// forecast to a non-zero-sale probability, one lookup competitor per
/// forecaster.
pub fn read_quantile_forecasts<R: Read>(r: R, event: SaleEvent) -> Result<Vec<Competitor>> {
    let mut rdr = reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != ["item_id", "forecaster_id", "tau", "quantile"] {
        return Err(OmniError::Parse {
            line: 1,
            msg: format!("unexpected quantile header {header:?}"),
        });
    }
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, u64), (f64, Vec<(f64, f64)>)> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        let item = parse_f64(&rec[0], line)?;
        let tau = parse_f64(&rec[2], line)?;
        let quantile = parse_f64(&rec[3], line)?;
        let key = (rec[1].to_string(), item.to_bits());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_insert((item, Vec::new())).1.push((tau, quantile));
    }
    if order.is_empty() {
        return Err(OmniError::EmptyData("quantile file"));
    }
    let mut rows = Vec::with_capacity(order.len());
    for key in order {
        let (item, mut pairs) = groups.remove(&key).expect("grouped key");
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (taus, quantiles) = pairs.into_iter().unzip();
        let qf = QuantileForecast::new(taus, quantiles).map_err(|e| OmniError::Parse {
            line: 0,
            msg: format!("forecaster {} item {item}: {e}", key.0),
        })?;
        rows.push((key.0, item, prob_nonzero_sale(&qf, event)));
    }
    group_lookups(rows)
}

pub fn load_quantile_forecasts(path: &Path, event: SaleEvent) -> Result<Vec<Competitor>> {
    read_quantile_forecasts(std::fs::File::open(path)?, event)
}
