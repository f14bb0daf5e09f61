//! Task-completion quality under concurrency and the exhaustive optimality
//! oracles built on it.
//!
//! Everything here is brute force on purpose. The oracles enumerate every
//! assignment (or every neighbourhood) and are the ground truth the learning
//! algorithms are measured against, so they must stay obviously correct.
//! Enumeration is capped by an explicit budget instead of silently running
//! for hours.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, AtomicTask, TaskTypeId};

/// Default cap on the number of candidates any oracle may enumerate.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("{agent} is not capable of {task_type}")]
    Incapable {
        agent: AgentId,
        task_type: TaskTypeId,
    },
    #[error("task {0:?} is not allocated")]
    UnallocatedTask(AtomicTask),
    #[error("enumeration of {needed} candidates exceeds budget {budget}")]
    BudgetExceeded { needed: u64, budget: u64 },
    #[error("no candidate agent set can complete every task")]
    NonAllocable,
}

/// How completion quality degrades with the number of concurrent tasks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum ConcurrencyLaw {
    /// `base / k`: resources split evenly over concurrent tasks.
    #[default]
    EvenSplit,
    /// `base * k^-p` with `p >= 0`.
    Power(f64),
}

impl ConcurrencyLaw {
    pub fn apply(self, base: f64, k: u32) -> f64 {
        debug_assert!(k >= 1);
        match self {
            ConcurrencyLaw::EvenSplit => base / k as f64,
            ConcurrencyLaw::Power(p) => {
                if k == 1 {
                    base
                } else {
                    base * (k as f64).powf(-p)
                }
            }
        }
    }
}

/// Base completion quality per (agent, task type). Absent pairs mean the
/// agent is incapable of that type.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityModel {
    base: BTreeMap<(AgentId, TaskTypeId), f64>,
    pub law: ConcurrencyLaw,
}

impl QualityModel {
    pub fn new(law: ConcurrencyLaw) -> Self {
        Self {
            base: BTreeMap::new(),
            law,
        }
    }

    /// Sets a base quality, which must lie in `(0, 1]`.
    pub fn set_base(&mut self, agent: AgentId, task_type: TaskTypeId, q: f64) {
        assert!(q > 0.0 && q <= 1.0, "base quality {q} outside (0, 1]");
        self.base.insert((agent, task_type), q);
    }

    pub fn base(&self, agent: AgentId, task_type: TaskTypeId) -> Option<f64> {
        self.base.get(&(agent, task_type)).copied()
    }

    pub fn is_capable(&self, agent: AgentId, task_type: TaskTypeId) -> bool {
        self.base.contains_key(&(agent, task_type))
    }

    /// Every agent with at least one capability.
    pub fn agents(&self) -> BTreeSet<AgentId> {
        self.base.keys().map(|(a, _)| *a).collect()
    }

    /// Best isolated quality any agent achieves on `task_type`.
    pub fn best_base(&self, task_type: TaskTypeId) -> Option<f64> {
        self.base
            .iter()
            .filter(|((_, t), _)| *t == task_type)
            .map(|(_, &q)| q)
            .fold(None, |acc: Option<f64>, q| {
                Some(acc.map_or(q, |a| a.max(q)))
            })
    }

    /// Best isolated quality over `agents` only, with the agent achieving it
    /// (lowest id on ties).
    pub fn best_among(
        &self,
        task_type: TaskTypeId,
        agents: impl IntoIterator<Item = AgentId>,
    ) -> Option<(AgentId, f64)> {
        let mut best: Option<(AgentId, f64)> = None;
        for a in agents {
            if let Some(q) = self.base(a, task_type) {
                match best {
                    Some((b, bq)) if bq > q || (bq == q && b < a) => {}
                    _ => best = Some((a, q)),
                }
            }
        }
        best
    }
}

/// Atomic task quality of `agent` on `task_type` with `k` concurrent tasks.
pub fn omega(
    model: &QualityModel,
    agent: AgentId,
    task_type: TaskTypeId,
    k: u32,
) -> Result<f64, OracleError> {
    let base = model
        .base(agent, task_type)
        .ok_or(OracleError::Incapable { agent, task_type })?;
    Ok(model.law.apply(base, k.max(1)))
}

/// An assignment of atomic tasks to agents; each task at most once.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationMap {
    pairs: BTreeMap<AtomicTask, AgentId>,
}

impl AllocationMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (AtomicTask, AgentId)>) -> Self {
        let mut m = Self::new();
        for (t, a) in pairs {
            m.insert(t, a);
        }
        m
    }

    /// Assigns `task`, replacing any earlier assignment of the same task.
    pub fn insert(&mut self, task: AtomicTask, agent: AgentId) {
        self.pairs.insert(task, agent);
    }

    pub fn get(&self, task: &AtomicTask) -> Option<AgentId> {
        self.pairs.get(task).copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AtomicTask, &AgentId)> {
        self.pairs.iter()
    }

    pub fn tasks(&self) -> Vec<AtomicTask> {
        self.pairs.keys().copied().collect()
    }

    /// `self ∪ other`; on conflict `other` wins.
    pub fn union(&self, other: &AllocationMap) -> AllocationMap {
        let mut m = self.clone();
        for (t, a) in other.iter() {
            m.insert(*t, *a);
        }
        m
    }

    /// Copy without the given tasks.
    pub fn without(&self, tasks: &[AtomicTask]) -> AllocationMap {
        let mut m = self.clone();
        for t in tasks {
            m.pairs.remove(t);
        }
        m
    }

    fn load(&self) -> BTreeMap<AgentId, u32> {
        let mut load = BTreeMap::new();
        for a in self.pairs.values() {
            *load.entry(*a).or_insert(0) += 1;
        }
        load
    }
}

/// Tasks paired with `agent`.
pub fn concurrent(alloc: &AllocationMap, agent: AgentId) -> BTreeSet<AtomicTask> {
    alloc
        .iter()
        .filter(|(_, a)| **a == agent)
        .map(|(t, _)| *t)
        .collect()
}

/// Allocation quality of `tasks` under `alloc`: each task contributes its
/// allocatee's quality at the allocatee's concurrent count in `alloc`.
pub fn ql(
    model: &QualityModel,
    tasks: &[AtomicTask],
    alloc: &AllocationMap,
) -> Result<f64, OracleError> {
    let load = alloc.load();
    let mut sum = 0.0;
    for task in tasks {
        let agent = alloc.get(task).ok_or(OracleError::UnallocatedTask(*task))?;
        sum += omega(model, agent, task.task_type, load[&agent])?;
    }
    Ok(sum)
}

fn check_budget(needed: u64, budget: u64) -> Result<(), OracleError> {
    if needed > budget {
        Err(OracleError::BudgetExceeded { needed, budget })
    } else {
        Ok(())
    }
}

fn pow_saturating(base: usize, exp: usize) -> u64 {
    (0..exp).fold(1u64, |acc, _| acc.saturating_mul(base as u64))
}

/// Lazy enumeration of every total assignment of `tasks` to `agents`, in
/// odometer order (the last task varies fastest).
pub struct Permutations {
    tasks: Vec<AtomicTask>,
    agents: Vec<AgentId>,
    digits: Vec<usize>,
    done: bool,
}

impl Iterator for Permutations {
    type Item = AllocationMap;

    fn next(&mut self) -> Option<AllocationMap> {
        if self.done {
            return None;
        }
        let map = AllocationMap::from_pairs(
            self.tasks
                .iter()
                .zip(&self.digits)
                .map(|(t, &d)| (*t, self.agents[d])),
        );
        self.done = !advance(&mut self.digits, self.agents.len());
        Some(map)
    }
}

/// Odometer increment; false once every combination has been produced.
fn advance(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

/// All `|agents|^|tasks|` assignments.
pub fn permutations(
    tasks: &[AtomicTask],
    agents: &[AgentId],
    budget: u64,
) -> Result<Permutations, OracleError> {
    check_budget(pow_saturating(agents.len(), tasks.len()), budget)?;
    Ok(Permutations {
        tasks: tasks.to_vec(),
        agents: agents.to_vec(),
        digits: vec![0; tasks.len()],
        done: agents.is_empty() && !tasks.is_empty(),
    })
}

/// Locally-optimal allocation of `tasks` to `agents` given the fixed
/// allocation of other tasks. Ties go to the first candidate in enumeration
/// order.
pub fn ol(
    model: &QualityModel,
    tasks: &[AtomicTask],
    agents: &[AgentId],
    fixed: &AllocationMap,
    budget: u64,
) -> Result<AllocationMap, OracleError> {
    best_assignment(model, tasks, agents, fixed, budget).map(|(m, _)| m)
}

/// Quality of the locally-optimal allocation.
pub fn oq(
    model: &QualityModel,
    tasks: &[AtomicTask],
    agents: &[AgentId],
    fixed: &AllocationMap,
    budget: u64,
) -> Result<f64, OracleError> {
    best_assignment(model, tasks, agents, fixed, budget).map(|(_, q)| q)
}

/// Exhaustive argmax. Evaluates candidates with the same arithmetic as
/// [`ql`] (same summation order, same concurrent counts) so the reported
/// maximum equals `ql` of the returned map bit for bit.
fn best_assignment(
    model: &QualityModel,
    tasks: &[AtomicTask],
    agents: &[AgentId],
    fixed: &AllocationMap,
    budget: u64,
) -> Result<(AllocationMap, f64), OracleError> {
    check_budget(pow_saturating(agents.len(), tasks.len()), budget)?;
    let fixed = fixed.without(tasks);
    if tasks.is_empty() {
        return Ok((AllocationMap::new(), 0.0));
    }
    for t in tasks {
        if !agents.iter().any(|a| model.is_capable(*a, t.task_type)) {
            return Err(OracleError::NonAllocable);
        }
    }
    let fixed_load = fixed.load();
    let base_load: Vec<u32> = agents
        .iter()
        .map(|a| fixed_load.get(a).copied().unwrap_or(0))
        .collect();
    // Per (task, agent index) base quality, None when incapable.
    let bases: Vec<Vec<Option<f64>>> = tasks
        .iter()
        .map(|t| agents.iter().map(|a| model.base(*a, t.task_type)).collect())
        .collect();

    let mut digits = vec![0usize; tasks.len()];
    let mut load = vec![0u32; agents.len()];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        load.copy_from_slice(&base_load);
        for &d in &digits {
            load[d] += 1;
        }
        let mut sum = 0.0;
        let mut feasible = true;
        for (ti, &d) in digits.iter().enumerate() {
            match bases[ti][d] {
                Some(b) => sum += model.law.apply(b, load[d]),
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if feasible && best.as_ref().is_none_or(|(_, q)| sum > *q) {
            best = Some((digits.clone(), sum));
        }
        if !advance(&mut digits, agents.len()) {
            break;
        }
    }
    let (digits, q) = best.ok_or(OracleError::NonAllocable)?;
    let map = AllocationMap::from_pairs(tasks.iter().zip(&digits).map(|(t, &d)| (*t, agents[d])));
    Ok((map, q))
}

/// Whether candidate neighbourhoods must be strictly smaller than `delta_n`
/// (as the neighbourhood enumeration is defined) or may reach it (as agents
/// actually hold them).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeBound {
    #[default]
    Strict,
    Inclusive,
}

impl SizeBound {
    fn max_size(self, delta_n: usize) -> Option<usize> {
        match self {
            SizeBound::Strict => delta_n.checked_sub(1),
            SizeBound::Inclusive => Some(delta_n),
        }
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Lazy enumeration of subsets of a pool, by size then lexicographically.
pub struct Subsets {
    pool: Vec<AgentId>,
    max_size: usize,
    size: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Iterator for Subsets {
    type Item = Vec<AgentId>;

    fn next(&mut self) -> Option<Vec<AgentId>> {
        if self.done {
            return None;
        }
        let out = self.idx.iter().map(|&i| self.pool[i]).collect();
        // Next combination of the current size, else move to the next size.
        let n = self.pool.len();
        let k = self.size;
        let mut i = k;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if self.idx[i] < n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            self.size += 1;
            if self.size > self.max_size || self.size > n {
                self.done = true;
            } else {
                self.idx = (0..self.size).collect();
            }
        }
        Some(out)
    }
}

fn subsets(pool: &[AgentId], max_size: Option<usize>) -> Subsets {
    let mut pool = pool.to_vec();
    pool.sort();
    pool.dedup();
    Subsets {
        pool,
        max_size: max_size.unwrap_or(0),
        size: 0,
        idx: Vec::new(),
        done: max_size.is_none(),
    }
}

fn count_subsets(n: usize, max_size: Option<usize>) -> u64 {
    match max_size {
        None => 0,
        Some(m) => (0..=m.min(n)).fold(0u64, |acc, k| acc.saturating_add(binomial(n, k))),
    }
}

/// Every neighbourhood `agent` could hold drawn from `pool`.
pub fn allhoods(
    delta_n: usize,
    pool: &[AgentId],
    bound: SizeBound,
    budget: u64,
) -> Result<Subsets, OracleError> {
    let max = bound.max_size(delta_n);
    check_budget(count_subsets(pool.len(), max), budget)?;
    Ok(subsets(pool, max))
}

/// Optimal neighbourhood: the candidate whose locally-optimal allocation has
/// the highest quality. Candidates that cannot complete the tasks are skipped.
pub fn on(
    model: &QualityModel,
    tasks: &[AtomicTask],
    delta_n: usize,
    pool: &[AgentId],
    fixed: &AllocationMap,
    bound: SizeBound,
    budget: u64,
) -> Result<Vec<AgentId>, OracleError> {
    system_optimum(model, tasks, delta_n, pool, fixed, bound, budget).map(|(n, _, _)| n)
}

/// System-optimal allocation: the locally-optimal allocation to the optimal
/// neighbourhood.
pub fn os(
    model: &QualityModel,
    tasks: &[AtomicTask],
    delta_n: usize,
    pool: &[AgentId],
    fixed: &AllocationMap,
    bound: SizeBound,
    budget: u64,
) -> Result<AllocationMap, OracleError> {
    system_optimum(model, tasks, delta_n, pool, fixed, bound, budget).map(|(_, m, _)| m)
}

/// Quality of the system-optimal allocation.
pub fn osq(
    model: &QualityModel,
    tasks: &[AtomicTask],
    delta_n: usize,
    pool: &[AgentId],
    fixed: &AllocationMap,
    bound: SizeBound,
    budget: u64,
) -> Result<f64, OracleError> {
    system_optimum(model, tasks, delta_n, pool, fixed, bound, budget).map(|(_, _, q)| q)
}

fn system_optimum(
    model: &QualityModel,
    tasks: &[AtomicTask],
    delta_n: usize,
    pool: &[AgentId],
    fixed: &AllocationMap,
    bound: SizeBound,
    budget: u64,
) -> Result<(Vec<AgentId>, AllocationMap, f64), OracleError> {
    let hoods = allhoods(delta_n, pool, bound, budget)?;
    let mut best: Option<(Vec<AgentId>, AllocationMap, f64)> = None;
    for hood in hoods {
        match best_assignment(model, tasks, &hood, fixed, budget) {
            Ok((m, q)) => {
                if best.as_ref().is_none_or(|(_, _, bq)| q > *bq) {
                    best = Some((hood, m, q));
                }
            }
            Err(OracleError::NonAllocable) => {}
            Err(e) => return Err(e),
        }
    }
    best.ok_or(OracleError::NonAllocable)
}

/// Joint-optimal allocation of all `tasks` across all `agents`.
pub fn joq(
    model: &QualityModel,
    tasks: &[AtomicTask],
    agents: &[AgentId],
    budget: u64,
) -> Result<AllocationMap, OracleError> {
    ol(model, tasks, agents, &AllocationMap::new(), budget)
}

/// System utility: the summed allocation quality of every completed
/// allocation over a window of snapshots.
pub fn utility(model: &QualityModel, snapshots: &[AllocationMap]) -> Result<f64, OracleError> {
    snapshots.iter().map(|al| ql(model, &al.tasks(), al)).sum()
}

/// Theoretical optimal utility: every task completed in isolation by the best
/// capable agent in the system.
pub fn theoretical_utility(model: &QualityModel, snapshots: &[AllocationMap]) -> f64 {
    snapshots
        .iter()
        .flat_map(|al| al.tasks())
        .map(|t| model.best_base(t.task_type).unwrap_or(0.0))
        .sum()
}

/// How far the current allocation of `tasks` is from the locally-optimal one
/// within `neighbourhood`.
pub fn d_loc(
    model: &QualityModel,
    tasks: &[AtomicTask],
    neighbourhood: &[AgentId],
    alloc: &AllocationMap,
    budget: u64,
) -> Result<f64, OracleError> {
    let best = oq(model, tasks, neighbourhood, alloc, budget)?;
    Ok(best - ql(model, tasks, alloc)?)
}

/// How far the current allocation is from the system-optimal one.
#[allow(clippy::too_many_arguments)]
pub fn d_sys(
    model: &QualityModel,
    tasks: &[AtomicTask],
    delta_n: usize,
    pool: &[AgentId],
    alloc: &AllocationMap,
    bound: SizeBound,
    budget: u64,
) -> Result<f64, OracleError> {
    let best = osq(model, tasks, delta_n, pool, alloc, bound, budget)?;
    Ok(best - ql(model, tasks, alloc)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(i: u16, ty: u16) -> AtomicTask {
        AtomicTask {
            task_type: TaskTypeId(ty),
            origin: 0,
            index: i,
            creation_time: 0,
        }
    }

    fn g(i: u32) -> AgentId {
        AgentId(i)
    }

    /// `bases[t][a]` is agent `a`'s base quality on type `t` (0 = incapable).
    fn model(bases: &[&[f64]]) -> QualityModel {
        let mut m = QualityModel::new(ConcurrencyLaw::EvenSplit);
        for (t, row) in bases.iter().enumerate() {
            for (a, &q) in row.iter().enumerate() {
                if q > 0.0 {
                    m.set_base(g(a as u32), TaskTypeId(t as u16), q);
                }
            }
        }
        m
    }

    #[test]
    fn omega_identity_and_even_split() {
        let m = model(&[&[0.8]]);
        assert_eq!(omega(&m, g(0), TaskTypeId(0), 1).unwrap(), 0.8);
        assert_eq!(omega(&m, g(0), TaskTypeId(0), 2).unwrap(), 0.4);
        assert!(matches!(
            omega(&m, g(1), TaskTypeId(0), 1),
            Err(OracleError::Incapable { .. })
        ));
    }

    #[test]
    fn power_law_bounds() {
        let law = ConcurrencyLaw::Power(0.5);
        assert_eq!(law.apply(0.9, 1), 0.9);
        let mut prev = 0.9;
        for k in 2..10 {
            let q = law.apply(0.9, k);
            assert!(q <= prev && q >= 0.0);
            prev = q;
        }
        assert_eq!(ConcurrencyLaw::Power(0.0).apply(0.7, 5), 0.7);
    }

    #[test]
    fn separate_beats_concurrent() {
        let m = model(&[&[0.8], &[0.6]]);
        let (a, b) = (task(0, 0), task(1, 1));
        let alone_a = ql(&m, &[a], &AllocationMap::from_pairs([(a, g(0))])).unwrap();
        let alone_b = ql(&m, &[b], &AllocationMap::from_pairs([(b, g(0))])).unwrap();
        let both = ql(
            &m,
            &[a, b],
            &AllocationMap::from_pairs([(a, g(0)), (b, g(0))]),
        )
        .unwrap();
        assert!(alone_a + alone_b > both);
    }

    #[test]
    fn concurrent_sets() {
        let al =
            AllocationMap::from_pairs([(task(0, 0), g(1)), (task(1, 0), g(1)), (task(2, 0), g(2))]);
        assert_eq!(concurrent(&al, g(1)).len(), 2);
        assert!(concurrent(&al, g(9)).is_empty());
        assert!(concurrent(&AllocationMap::new(), g(1)).is_empty());
    }

    #[test]
    fn ql_hand_sums() {
        let m = model(&[&[0.6, 0.8], &[0.8, 0.6]]);
        let (a, b) = (task(0, 0), task(1, 1));
        assert_eq!(ql(&m, &[], &AllocationMap::new()).unwrap(), 0.0);
        let split = AllocationMap::from_pairs([(a, g(0)), (b, g(1))]);
        assert!((ql(&m, &[a, b], &split).unwrap() - 1.2).abs() < 1e-12);
        let m2 = model(&[&[0.6], &[0.8]]);
        let split2 = AllocationMap::from_pairs([(a, g(0)), (b, g(0))]);
        assert!((ql(&m2, &[a, b], &split2).unwrap() - 0.7).abs() < 1e-12);
        assert!(matches!(
            ql(&m, &[a], &AllocationMap::new()),
            Err(OracleError::UnallocatedTask(_))
        ));
    }

    #[test]
    fn ql_on_distinct_idle_agents() {
        // bases 0.6 and 0.8 on two distinct idle agents
        let m = model(&[&[0.6, 0.0], &[0.0, 0.8]]);
        let (a, b) = (task(0, 0), task(1, 1));
        let al = AllocationMap::from_pairs([(a, g(0)), (b, g(1))]);
        assert!((ql(&m, &[a, b], &al).unwrap() - 1.4).abs() < 1e-12);
    }

    #[test]
    fn permutation_counts() {
        let tasks = [task(0, 0), task(1, 0)];
        let agents = [g(0), g(1), g(2)];
        assert_eq!(
            permutations(&tasks, &agents, DEFAULT_BUDGET)
                .unwrap()
                .count(),
            9
        );
        let none: Vec<_> = permutations(&[], &agents, DEFAULT_BUDGET)
            .unwrap()
            .collect();
        assert_eq!(none, vec![AllocationMap::new()]);
        let three = [task(0, 0), task(1, 0), task(2, 0)];
        let four = [g(0), g(1), g(2), g(3)];
        let all: Vec<_> = permutations(&three, &four, DEFAULT_BUDGET)
            .unwrap()
            .collect();
        assert_eq!(all.len(), 64);
        for (i, x) in all.iter().enumerate() {
            assert!(all[i + 1..].iter().all(|y| y != x));
        }
        assert!(matches!(
            permutations(&three, &four, 63),
            Err(OracleError::BudgetExceeded { needed: 64, .. })
        ));
    }

    #[test]
    fn ol_single_task_goes_to_dominant_agent() {
        let m = model(&[&[0.9, 0.4]]);
        let t = task(0, 0);
        let best = ol(
            &m,
            &[t],
            &[g(0), g(1)],
            &AllocationMap::new(),
            DEFAULT_BUDGET,
        )
        .unwrap();
        assert_eq!(best.get(&t), Some(g(0)));
    }

    #[test]
    fn ol_two_by_two_splits() {
        // Hand brute force over the 4 maps with law base/k:
        //   (0,0): 0.45+0.2=0.65  (0,1): 0.9+0.8=1.7  (1,0): 0.5+0.4=0.9  (1,1): 0.25+0.4=0.65
        let m = model(&[&[0.9, 0.5], &[0.4, 0.8]]);
        let (a, b) = (task(0, 0), task(1, 1));
        let agents = [g(0), g(1)];
        let best = ol(&m, &[a, b], &agents, &AllocationMap::new(), DEFAULT_BUDGET).unwrap();
        assert_eq!(best.get(&a), Some(g(0)));
        assert_eq!(best.get(&b), Some(g(1)));
        let q = oq(&m, &[a, b], &agents, &AllocationMap::new(), DEFAULT_BUDGET).unwrap();
        assert!((q - 1.7).abs() < 1e-12);
    }

    #[test]
    fn fixed_load_shifts_the_optimum() {
        let m = model(&[&[0.9, 0.6]]);
        let t = task(0, 0);
        let other = task(1, 0);
        let agents = [g(0), g(1)];
        let free = ol(&m, &[t], &agents, &AllocationMap::new(), DEFAULT_BUDGET).unwrap();
        assert_eq!(free.get(&t), Some(g(0)));
        // Agent 0 already busy: 0.9/2 = 0.45 < 0.6.
        let fixed = AllocationMap::from_pairs([(other, g(0))]);
        let loaded = ol(&m, &[t], &agents, &fixed, DEFAULT_BUDGET).unwrap();
        assert_eq!(loaded.get(&t), Some(g(1)));
    }

    #[test]
    fn non_allocable_is_an_error() {
        let m = model(&[&[0.9, 0.0]]);
        assert_eq!(
            ol(
                &m,
                &[task(0, 0)],
                &[g(1)],
                &AllocationMap::new(),
                DEFAULT_BUDGET
            ),
            Err(OracleError::NonAllocable)
        );
        assert_eq!(
            oq(
                &m,
                &[task(0, 0)],
                &[],
                &AllocationMap::new(),
                DEFAULT_BUDGET
            ),
            Err(OracleError::NonAllocable)
        );
    }

    #[test]
    fn allhoods_counts() {
        let pool = [g(0), g(1), g(2)];
        let all: Vec<_> = allhoods(2, &pool, SizeBound::Strict, DEFAULT_BUDGET)
            .unwrap()
            .collect();
        assert_eq!(all.len(), 4);
        assert_eq!(all[0], Vec::<AgentId>::new());
        let one: Vec<_> = allhoods(1, &pool, SizeBound::Strict, DEFAULT_BUDGET)
            .unwrap()
            .collect();
        assert_eq!(one, vec![Vec::<AgentId>::new()]);
        let empty: Vec<_> = allhoods(3, &[], SizeBound::Strict, DEFAULT_BUDGET)
            .unwrap()
            .collect();
        assert_eq!(empty, vec![Vec::<AgentId>::new()]);
        let incl: Vec<_> = allhoods(2, &pool, SizeBound::Inclusive, DEFAULT_BUDGET)
            .unwrap()
            .collect();
        assert_eq!(incl.len(), 7);
        assert!(allhoods(0, &pool, SizeBound::Strict, DEFAULT_BUDGET)
            .unwrap()
            .next()
            .is_none());
    }

    #[test]
    fn subsets_are_distinct_and_bounded() {
        let pool: Vec<_> = (0..6).map(g).collect();
        let all: Vec<_> = allhoods(4, &pool, SizeBound::Inclusive, DEFAULT_BUDGET)
            .unwrap()
            .collect();
        // 1 + 6 + 15 + 20 + 15
        assert_eq!(all.len(), 57);
        let set: BTreeSet<_> = all.iter().cloned().collect();
        assert_eq!(set.len(), 57);
        assert!(all.iter().all(|s| s.len() <= 4));
    }

    /// Four children, two task types. With N1 = {c0, c1} the best split gives
    /// 0.6 + 0.5; N2 = {c1, c2} reaches 0.5 + 0.9 (c2 is best at type 0 in
    /// the whole system).
    fn neighbourhood_instance() -> (QualityModel, Vec<AtomicTask>) {
        let m = model(&[&[0.6, 0.3, 0.9, 0.2], &[0.4, 0.5, 0.3, 0.2]]);
        (m, vec![task(0, 0), task(1, 1)])
    }

    #[test]
    fn switching_neighbourhood_improves_quality() {
        let (m, tasks) = neighbourhood_instance();
        let pool = [g(0), g(1), g(2), g(3)];
        let n1 = oq(
            &m,
            &tasks,
            &[g(0), g(1)],
            &AllocationMap::new(),
            DEFAULT_BUDGET,
        )
        .unwrap();
        let n2 = oq(
            &m,
            &tasks,
            &[g(1), g(2)],
            &AllocationMap::new(),
            DEFAULT_BUDGET,
        )
        .unwrap();
        assert!((n1 - 1.1).abs() < 1e-12);
        assert!((n2 - 1.4).abs() < 1e-12);
        let best = on(
            &m,
            &tasks,
            3,
            &pool,
            &AllocationMap::new(),
            SizeBound::Strict,
            DEFAULT_BUDGET,
        )
        .unwrap();
        assert_eq!(best, vec![g(1), g(2)]);
        let q = osq(
            &m,
            &tasks,
            3,
            &pool,
            &AllocationMap::new(),
            SizeBound::Strict,
            DEFAULT_BUDGET,
        )
        .unwrap();
        assert!((q - 1.4).abs() < 1e-12);
        for hood in allhoods(3, &pool, SizeBound::Strict, DEFAULT_BUDGET).unwrap() {
            if let Ok(x) = oq(&m, &tasks, &hood, &AllocationMap::new(), DEFAULT_BUDGET) {
                assert!(q >= x);
            }
        }
    }

    #[test]
    fn second_parent_load_changes_the_argmax() {
        let (m, tasks) = neighbourhood_instance();
        let pool = [g(0), g(1), g(2), g(3)];
        // Another parent's type-0 task already sits on c2: 0.9/2 = 0.45 < 0.6.
        let other = AtomicTask {
            origin: 1,
            ..task(0, 0)
        };
        let fixed = AllocationMap::from_pairs([(other, g(2))]);
        let alloc = os(
            &m,
            &tasks,
            3,
            &pool,
            &fixed,
            SizeBound::Strict,
            DEFAULT_BUDGET,
        )
        .unwrap();
        assert_eq!(alloc.get(&tasks[0]), Some(g(0)));
        assert_eq!(alloc.get(&tasks[1]), Some(g(1)));
        // The joint optimum over all three tasks keeps c2 for the other parent.
        let all = [tasks[0], tasks[1], other];
        let joint = joq(&m, &all, &pool, DEFAULT_BUDGET).unwrap();
        let jq = ql(&m, &all, &joint).unwrap();
        assert!((jq - (0.6 + 0.5 + 0.9)).abs() < 1e-12);
    }

    #[test]
    fn utility_and_theoretical_utility() {
        let m = model(&[&[0.5, 0.9], &[0.4, 0.0], &[0.3, 0.7]]);
        assert_eq!(utility(&m, &[]).unwrap(), 0.0);
        let one = AllocationMap::from_pairs([(task(0, 0), g(0))]);
        assert_eq!(utility(&m, std::slice::from_ref(&one)).unwrap(), 0.5);
        assert_eq!(theoretical_utility(&m, std::slice::from_ref(&one)), 0.9);
        // Episode 2: two type-2 tasks on agent 1 (0.35 each) and a type-1 task
        // on agent 0 (0.4 / 1).
        let two =
            AllocationMap::from_pairs([(task(0, 2), g(1)), (task(1, 2), g(1)), (task(2, 1), g(0))]);
        let u = utility(&m, &[one.clone(), two.clone()]).unwrap();
        assert!((u - (0.5 + 0.35 + 0.35 + 0.4)).abs() < 1e-12);
        // u*: 0.9 + (0.7 + 0.7 + 0.4)
        let us = theoretical_utility(&m, &[one, two]);
        assert!((us - 2.7).abs() < 1e-12);
        assert!(us >= u);
    }

    #[test]
    fn locally_optimal_metrics() {
        let m = model(&[&[0.9, 0.5], &[0.4, 0.8]]);
        let (a, b) = (task(0, 0), task(1, 1));
        let hood = [g(0), g(1)];
        let best = ol(&m, &[a, b], &hood, &AllocationMap::new(), DEFAULT_BUDGET).unwrap();
        assert_eq!(
            d_loc(&m, &[a, b], &hood, &best, DEFAULT_BUDGET).unwrap(),
            0.0
        );
        // Both on agent 0: 0.45 + 0.2 = 0.65, optimum 1.7.
        let both = AllocationMap::from_pairs([(a, g(0)), (b, g(0))]);
        let d = d_loc(&m, &[a, b], &hood, &both, DEFAULT_BUDGET).unwrap();
        assert!((d - 1.05).abs() < 1e-12);
    }

    #[test]
    fn d_loc_hand_instance() {
        // Single task; current on agent 1 (0.6), best agent 0 (0.9): gap 0.3.
        let m = model(&[&[0.9, 0.6]]);
        let t = task(0, 0);
        let cur = AllocationMap::from_pairs([(t, g(1))]);
        let d = d_loc(&m, &[t], &[g(0), g(1)], &cur, DEFAULT_BUDGET).unwrap();
        assert!((d - 0.3).abs() < 1e-12);
        let ds = d_sys(
            &m,
            &[t],
            3,
            &[g(0), g(1)],
            &cur,
            SizeBound::Strict,
            DEFAULT_BUDGET,
        )
        .unwrap();
        assert!(ds >= d);
    }
}
