//! Action impact: exact neighbourhood and knowledge impacts, their cheap
//! size-based estimates, and the time-summarised quality matrix that turns an
//! agent's quality history into exploration pressure.

use std::collections::VecDeque;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActionCategory, AgentId, AtomicTask};
use crate::quality::{allhoods, oq, AllocationMap, OracleError, QualityModel, SizeBound};

/// Transformation at the midpoint when the history cannot support it.
pub const IT_FALLBACK: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImpactError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("need 0 < |N| <= |K| <= |G|, got |G|={g} |N|={n} |K|={k}")]
    InvalidSizes { g: u64, n: u64, k: u64 },
    #[error("{0} populated rows, at least 2 needed")]
    InsufficientHistory(usize),
}

/// Change in locally-optimal quality from moving `tasks` from `n_old` to `n_new`.
pub fn ni(
    model: &QualityModel,
    tasks: &[AtomicTask],
    n_old: &[AgentId],
    n_new: &[AgentId],
    fixed: &AllocationMap,
    budget: u64,
) -> Result<f64, ImpactError> {
    Ok(oq(model, tasks, n_new, fixed, budget)? - oq(model, tasks, n_old, fixed, budget)?)
}

/// Largest neighbourhood impact between any two subsets of `pool`. Subsets
/// that cannot complete the tasks have no defined quality and are skipped;
/// the identical pair keeps the result non-negative.
pub fn mni(
    model: &QualityModel,
    tasks: &[AtomicTask],
    pool: &[AgentId],
    fixed: &AllocationMap,
    budget: u64,
) -> Result<f64, ImpactError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for subset in allhoods(pool.len(), pool, SizeBound::Inclusive, budget)? {
        match oq(model, tasks, &subset, fixed, budget) {
            Ok(q) => {
                lo = lo.min(q);
                hi = hi.max(q);
            }
            Err(OracleError::NonAllocable) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(if hi >= lo { hi - lo } else { 0.0 })
}

/// Change in maximum neighbourhood impact from growing knowledge `k_old` to `k_new`.
pub fn ki(
    model: &QualityModel,
    tasks: &[AtomicTask],
    k_old: &[AgentId],
    k_new: &[AgentId],
    fixed: &AllocationMap,
    budget: u64,
) -> Result<f64, ImpactError> {
    Ok(mni(model, tasks, k_new, fixed, budget)? - mni(model, tasks, k_old, fixed, budget)?)
}

/// Expected impact of an action that changes the neighbourhood with
/// probability `p_n` and the knowledge with probability `p_k`.
#[allow(clippy::too_many_arguments)]
pub fn ai(
    model: &QualityModel,
    tasks: &[AtomicTask],
    n_old: &[AgentId],
    n_new: &[AgentId],
    k_old: &[AgentId],
    k_new: &[AgentId],
    fixed: &AllocationMap,
    p_n: f64,
    p_k: f64,
    budget: u64,
) -> Result<f64, ImpactError> {
    let n = if p_n == 0.0 {
        0.0
    } else {
        ni(model, tasks, n_old, n_new, fixed, budget)?
    };
    let k = if p_k == 0.0 {
        0.0
    } else {
        ki(model, tasks, k_old, k_new, fixed, budget)?
    };
    Ok(p_n * n + p_k * k)
}

/// Per-category impact weights. Only LINK and INFO carry weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactWeights {
    pub link: f64,
    pub info: f64,
}

impl ImpactWeights {
    pub fn new(link: f64, info: f64) -> Self {
        Self { link, info }
    }

    pub fn get(&self, category: ActionCategory) -> f64 {
        match category {
            ActionCategory::Link => self.link,
            ActionCategory::Info => self.info,
            _ => 0.0,
        }
    }
}

/// Size-based weight estimates in exact arithmetic, as `(link, info)`.
pub fn estimate_w_exact(g: u64, n: u64, k: u64) -> Result<(Ratio<u64>, Ratio<u64>), ImpactError> {
    if !(0 < n && n <= k && k <= g) {
        return Err(ImpactError::InvalidSizes { g, n, k });
    }
    let one = Ratio::from_integer(1u64);
    let half = Ratio::new(1u64, 2);
    let nk = Ratio::new(n, k);
    let kg = Ratio::new(k, g);
    let link = half * nk * (one - nk);
    let info = (one - half * nk) * (one - kg);
    Ok((link, info))
}

pub fn estimate_w(g: u64, n: u64, k: u64) -> Result<ImpactWeights, ImpactError> {
    let (link, info) = estimate_w_exact(g, n, k)?;
    let f = |r: Ratio<u64>| *r.numer() as f64 / *r.denom() as f64;
    Ok(ImpactWeights::new(f(link), f(info)))
}

/// Time-summarised quality matrix: row 0 holds the latest qualities, and
/// every `n` values pushed into a row send that row's average one row down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tsqm {
    rows: Vec<VecDeque<Option<f64>>>,
    pending: Vec<usize>,
    width: usize,
}

impl Tsqm {
    pub fn new(m: usize, n: usize) -> Self {
        assert!(m > 0 && n > 0, "TSQM shape must be positive");
        Self {
            rows: vec![VecDeque::from(vec![None; n]); m],
            pending: vec![0; m],
            width: n,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.width)
    }

    pub fn row(&self, i: usize) -> Vec<Option<f64>> {
        self.rows[i].iter().copied().collect()
    }

    /// Mean of the non-null slots of row `i`.
    pub fn row_average(&self, i: usize) -> Option<f64> {
        let vals: Vec<f64> = self.rows[i].iter().flatten().copied().collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Values pushed into row `i` since it last rolled up.
    pub fn pending(&self, i: usize) -> usize {
        self.pending[i]
    }

    pub fn update(&mut self, quality: f64) {
        let mut value = quality;
        for i in 0..self.rows.len() {
            let row = &mut self.rows[i];
            row.pop_back();
            row.push_front(Some(value));
            self.pending[i] += 1;
            if self.pending[i] < self.width {
                break;
            }
            self.pending[i] = 0;
            value = self.row_average(i).expect("row just received a value");
        }
    }

    /// Averages of the populated rows, most recent first.
    fn knots(&self) -> Vec<f64> {
        (0..self.rows.len())
            .filter_map(|i| self.row_average(i))
            .collect()
    }
}

pub fn tsqm_update(t: &mut Tsqm, quality: f64) {
    t.update(quality);
}

/// Knots `(i / (R-1), average_i * δ^i)` over the R populated rows.
fn interpolation_points(t: &Tsqm, decay: f64) -> Result<Vec<(f64, f64)>, ImpactError> {
    let knots = t.knots();
    let r = knots.len();
    if r < 2 {
        return Err(ImpactError::InsufficientHistory(r));
    }
    Ok(knots
        .iter()
        .enumerate()
        .map(|(i, avg)| (i as f64 / (r - 1) as f64, avg * decay.powi(i as i32)))
        .collect())
}

fn eval_linear(points: &[(f64, f64)], x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    points.last().unwrap().1
}

/// Exact integral of the interpolant from 0 to `x`.
fn integrate_linear(points: &[(f64, f64)], x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    let mut area = 0.0;
    for w in points.windows(2) {
        let ((x0, y0), (x1, _)) = (w[0], w[1]);
        if x <= x0 {
            break;
        }
        let end = x.min(x1);
        area += 0.5 * (y0 + eval_linear(points, end)) * (end - x0);
    }
    area
}

/// Impact interpolation: quality trend at time-scale `x` (0 = most recent).
pub fn impact_interpolate(t: &Tsqm, decay: f64, x: f64) -> Result<f64, ImpactError> {
    Ok(eval_linear(&interpolation_points(t, decay)?, x))
}

/// Impact transformation: one minus the share of the interpolant's mass that
/// lies before `x`.
///
/// Without usable history (fewer than two populated rows, or no mass) the
/// interpolant is treated as flat, giving `1 - x`: the endpoints stay exact
/// and the midpoint is [`IT_FALLBACK`].
pub fn impact_transform(t: &Tsqm, decay: f64, x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x == 0.0 {
        return 1.0;
    }
    if x == 1.0 {
        return 0.0;
    }
    let flat = 1.0 - x;
    let Ok(points) = interpolation_points(t, decay) else {
        return flat;
    };
    let total = integrate_linear(&points, 1.0);
    if !(total > 0.0) {
        return flat;
    }
    (1.0 - integrate_linear(&points, x) / total).clamp(0.0, 1.0)
}

pub fn impact_exploration_factor(t: &Tsqm, decay: f64) -> f64 {
    impact_transform(t, decay, 0.5)
}
