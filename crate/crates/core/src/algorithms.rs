//! The per-agent learning procedures: ATA-RIA orchestration, RT-ARP action
//! selection, SAS-KR knowledge retention and N-Prune neighbourhood pruning.
//!
//! An [`AgentRuntime`] holds the learned state of one parent agent. Its
//! knowledge and neighbourhood live in the shared [`SystemState`] so every
//! change goes through the action rules of the model.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::impact::{
    impact_exploration_factor, impact_transform, ImpactWeights, Tsqm, IT_FALLBACK,
};
use crate::learning::{
    available, boltzmann_select, is_available, max_select, mv, nval, rl_remove, rl_update, sumnorm,
    ActionSample, ActionSampleStore, LearningError, QState, QTable, DEFAULT_Q,
};
use crate::model::{
    apply_alloc, apply_exec, apply_info_exchange, apply_link, apply_remove_info, apply_remove_link,
    Action, AgentId, AgentState, AtomicTask, ProvideInfoSource, SystemState, TaskTypeId, Tick,
    TransitionError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgorithmError {
    #[error("{0} has no available action")]
    NoAvailableAction(AgentId),
    #[error("{0} has no unallocated task")]
    NothingToDo(AgentId),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Learning(#[from] LearningError),
}

/// What the simulated world says about agents at resolution time.
pub trait Environment {
    /// Whether `agent` is currently reachable.
    fn is_up(&self, agent: AgentId) -> bool;
    /// Completion quality of `agent` on `task_type` at concurrent count `k`,
    /// or `None` when the agent is incapable.
    fn quality(&self, agent: AgentId, task_type: TaskTypeId, k: u32) -> Option<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_base: f64,
    /// Boltzmann temperature of the RT-ARP explore branch.
    pub tau: f64,
    /// Retention threshold μ̂_min in samples per tick.
    pub mv_threshold: f64,
    /// TSQM row decay δ.
    pub decay: f64,
    pub info_reward: f64,
    pub link_reward: f64,
    pub default_q: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.0,
            epsilon_base: 1.0,
            tau: 1.0,
            mv_threshold: 0.1,
            decay: 1.0,
            info_reward: -0.05,
            link_reward: -0.05,
            default_q: DEFAULT_Q,
        }
    }
}

impl LearningParams {
    pub fn validate(&self) -> Result<(), LearningError> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("epsilon_base", self.epsilon_base),
            ("decay", self.decay),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(LearningError::ParameterOutOfRange { name, value: v });
            }
        }
        if !(self.tau > 0.0) {
            return Err(LearningError::NonPositiveTemperature(self.tau));
        }
        if !(self.mv_threshold >= 0.0) {
            return Err(LearningError::ParameterOutOfRange {
                name: "mv_threshold",
                value: self.mv_threshold,
            });
        }
        Ok(())
    }
}

/// Which parts of ATA-RIA are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub rt_arp: bool,
    pub sas_kr: bool,
}

impl Features {
    pub const FULL: Features = Features {
        rt_arp: true,
        sas_kr: true,
    };
}

/// Learned state of one agent.
#[derive(Clone, Debug)]
pub struct AgentRuntime {
    pub id: AgentId,
    pub q: QTable,
    pub samples: ActionSampleStore,
    pub tsqm: Tsqm,
    pub weights: ImpactWeights,
    pub params: LearningParams,
    pub features: Features,
    /// Agent-local step counter used to time-stamp samples.
    pub clock: Tick,
}

impl AgentRuntime {
    pub fn new(
        id: AgentId,
        weights: ImpactWeights,
        params: LearningParams,
        features: Features,
        tsqm_shape: (usize, usize),
    ) -> Self {
        Self {
            id,
            q: QTable::new(params.default_q),
            samples: ActionSampleStore::new(),
            tsqm: Tsqm::new(tsqm_shape.0, tsqm_shape.1),
            weights,
            params,
            features,
            clock: 0,
        }
    }

    /// Exploitation probability ε of the next selection.
    pub fn epsilon(&self) -> f64 {
        let factor = if self.features.rt_arp {
            impact_exploration_factor(&self.tsqm, self.params.decay)
        } else {
            IT_FALLBACK
        };
        self.params.epsilon_base * factor
    }
}

pub fn state_of(tasks: &[AtomicTask]) -> QState {
    QState::new(tasks.iter().map(|t| t.task_type))
}

/// The candidate values RT-ARP chooses between: available actions scaled by
/// the impact transformation of their category weight, then sum-normalised.
/// Without RT-ARP the values are only normalised.
pub fn rt_arp_values(rt: &AgentRuntime, agent: &AgentState, state: &QState) -> Vec<(Action, f64)> {
    let mut aq = available(&rt.q, rt.id, state, agent);
    if rt.features.rt_arp {
        for (a, v) in aq.iter_mut() {
            *v *= impact_transform(&rt.tsqm, rt.params.decay, rt.weights.get(a.category()));
        }
    }
    // A non-positive total cannot be normalised; keep the raw scale then.
    sumnorm(&aq).unwrap_or(aq)
}

/// RT-ARP: with probability ε the best value, otherwise a Boltzmann draw.
pub fn rt_arp_select<R: Rng + ?Sized>(
    rt: &AgentRuntime,
    agent: &AgentState,
    state: &QState,
    rng: &mut R,
) -> Result<Action, AlgorithmError> {
    let aq = rt_arp_values(rt, agent, state);
    if aq.is_empty() {
        return Err(AlgorithmError::NoAvailableAction(rt.id));
    }
    let u: f64 = rng.random();
    if u < rt.epsilon() {
        Ok(max_select(&aq, rng)?)
    } else {
        Ok(boltzmann_select(&aq, rt.params.tau, rng)?)
    }
}

/// SAS-KR: forgets stale knowledge about actions the agent cannot take now,
/// then trims the knowledge base to `delta_k` by random removal of
/// non-neighbours. Returns the agents forgotten.
pub fn sas_kr<R: Rng + ?Sized>(
    rt: &mut AgentRuntime,
    system: &mut SystemState,
    rng: &mut R,
) -> Result<Vec<AgentId>, AlgorithmError> {
    let actor = rt.id;
    let agent = system.agent_state(actor)?.clone();
    let now = rt.clock;
    let stale: BTreeSet<Action> =
        rt.q.iter()
            .map(|(_, a, _)| *a)
            .filter(|a| a.target().is_some() && !is_available(a, &agent))
            .filter(|a| mv(&rt.samples, a, now) < rt.params.mv_threshold)
            .collect();
    let mut forgotten = Vec::new();
    if !stale.is_empty() {
        rt.samples.remove_actions(&stale);
        rl_remove(&mut rt.q, &stale);
        let still_targeted: BTreeSet<AgentId> =
            rt.q.iter().filter_map(|(_, a, _)| a.target()).collect();
        let candidates: BTreeSet<AgentId> = stale.iter().filter_map(Action::target).collect();
        for a in candidates {
            if agent.knowledge.contains(&a)
                && !agent.neighbourhood.contains(&a)
                && !still_targeted.contains(&a)
            {
                *system = apply_remove_info(system, actor, a)?;
                forgotten.push(a);
            }
        }
    }
    forgotten.extend(trim_knowledge(system, actor, rng)?);
    Ok(forgotten)
}

/// Removes random non-neighbours until `|K| <= delta_k`.
pub fn trim_knowledge<R: Rng + ?Sized>(
    system: &mut SystemState,
    actor: AgentId,
    rng: &mut R,
) -> Result<Vec<AgentId>, AlgorithmError> {
    let delta_k = system.spec(actor)?.delta_k;
    let mut removed = Vec::new();
    loop {
        let st = system.agent_state(actor)?;
        if st.knowledge.len() <= delta_k {
            break;
        }
        let pool: Vec<AgentId> = st.known_only().collect();
        let Some(&victim) = pool.choose(rng) else {
            break;
        };
        *system = apply_remove_info(system, actor, victim)?;
        removed.push(victim);
    }
    Ok(removed)
}

/// N-Prune: while the neighbourhood is over its bound, drop the neighbour
/// with the lowest summed returns among those that have returned any
/// quality; a random neighbour when none has. Returns the agents unlinked.
pub fn n_prune<R: Rng + ?Sized>(
    rt: &AgentRuntime,
    system: &mut SystemState,
    rng: &mut R,
) -> Result<Vec<AgentId>, AlgorithmError> {
    let actor = rt.id;
    let delta_n = system.spec(actor)?.delta_n;
    let mut removed = Vec::new();
    loop {
        let n = &system.agent_state(actor)?.neighbourhood;
        if n.len() <= delta_n {
            break;
        }
        let judged: BTreeSet<AgentId> = n
            .iter()
            .copied()
            .filter(|a| rt.samples.has_returns(*a))
            .collect();
        let victim = if judged.is_empty() {
            **n.iter().collect::<Vec<_>>().choose(rng).unwrap()
        } else {
            lowest_value(&rt.samples, &judged)
        };
        *system = apply_remove_link(system, actor, victim)?;
        removed.push(victim);
    }
    Ok(removed)
}

fn lowest_value(store: &ActionSampleStore, group: &BTreeSet<AgentId>) -> AgentId {
    let mut best: Option<(AgentId, f64)> = None;
    for &a in group {
        let v = nval(store, &BTreeSet::from([a]));
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((a, v));
        }
    }
    best.expect("group is non-empty").0
}

/// Removes random neighbours until `|N| <= delta_n`.
pub fn trim_neighbourhood<R: Rng + ?Sized>(
    system: &mut SystemState,
    actor: AgentId,
    rng: &mut R,
) -> Result<Vec<AgentId>, AlgorithmError> {
    let delta_n = system.spec(actor)?.delta_n;
    let mut removed = Vec::new();
    loop {
        let n: Vec<AgentId> = system
            .agent_state(actor)?
            .neighbourhood
            .iter()
            .copied()
            .collect();
        if n.len() <= delta_n {
            break;
        }
        let victim = *n.choose(rng).unwrap();
        *system = apply_remove_link(system, actor, victim)?;
        removed.push(victim);
    }
    Ok(removed)
}

/// Result of carrying out one action.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub action: Action,
    /// Completion quality; zero for everything but a successful ALLOC or EXEC.
    pub quality: f64,
    /// Learning signal.
    pub reward: f64,
    /// The task completed by this action, if any.
    pub completed: Option<AtomicTask>,
    /// The target rejected the action (incapable or unreachable).
    pub failed: bool,
    /// Agent learned about through INFO.
    pub discovered: Option<AgentId>,
}

impl Outcome {
    fn new(action: Action, reward: f64) -> Self {
        Self {
            action,
            quality: 0.0,
            reward,
            completed: None,
            failed: false,
            discovered: None,
        }
    }
}

/// Carries out `action` for its actor against the shared state. A completed
/// task is removed from `unallocated`. Constraint restoration after INFO or
/// LINK is left to the caller.
pub fn resolve<E: Environment, R: Rng + ?Sized>(
    system: &mut SystemState,
    env: &E,
    action: Action,
    unallocated: &mut Vec<AtomicTask>,
    params: &LearningParams,
    rng: &mut R,
) -> Result<Outcome, AlgorithmError> {
    let actor = action.actor();
    match action {
        Action::Exec { task_type, .. } => {
            let idx = position_of(unallocated, task_type, actor)?;
            let task = unallocated[idx];
            let (next, q) = apply_exec(system, actor, &task, |a, t, k| {
                env.quality(a, t, k).unwrap_or(0.0)
            })?;
            *system = next;
            unallocated.remove(idx);
            let mut out = Outcome::new(action, 0.0);
            out.quality = q;
            out.completed = Some(task);
            Ok(out)
        }
        Action::Alloc {
            task_type, target, ..
        } => {
            let idx = position_of(unallocated, task_type, actor)?;
            let task = unallocated[idx];
            let capable = system.spec(target)?.is_capable(task_type);
            if !capable || !env.is_up(target) {
                let mut out = Outcome::new(action, 0.0);
                out.failed = true;
                return Ok(out);
            }
            let allocated = apply_alloc(system, actor, &task, target)?;
            let (next, q) = apply_exec(&allocated, target, &task, |a, t, k| {
                env.quality(a, t, k).unwrap_or(0.0)
            })?;
            *system = next;
            unallocated.remove(idx);
            let mut out = Outcome::new(action, q);
            out.quality = q;
            out.completed = Some(task);
            Ok(out)
        }
        Action::Info { target, .. } => {
            let mut out = Outcome::new(action, params.info_reward);
            if !env.is_up(target) {
                out.failed = true;
                return Ok(out);
            }
            let (next, subject) =
                apply_info_exchange(system, actor, target, ProvideInfoSource::Knowledge, rng)?;
            *system = next;
            // Being told about oneself adds nothing.
            if subject == actor {
                system.agent_state_mut(actor)?.knowledge.remove(&actor);
            } else {
                out.discovered = Some(subject);
            }
            Ok(out)
        }
        Action::Link { known, .. } => {
            let mut out = Outcome::new(action, params.link_reward);
            if !env.is_up(known) {
                out.failed = true;
                return Ok(out);
            }
            *system = apply_link(system, actor, known)?;
            Ok(out)
        }
        Action::ProvideInfo { .. } | Action::RemoveInfo { .. } | Action::RemoveLink { .. } => {
            Err(AlgorithmError::NoAvailableAction(actor))
        }
    }
}

fn position_of(
    tasks: &[AtomicTask],
    task_type: TaskTypeId,
    actor: AgentId,
) -> Result<usize, AlgorithmError> {
    tasks
        .iter()
        .position(|t| t.task_type == task_type)
        .ok_or(AlgorithmError::NothingToDo(actor))
}

/// Q update, TSQM update and sample append for one resolved action.
pub fn learn(
    rt: &mut AgentRuntime,
    state: &QState,
    outcome: &Outcome,
    next_state: &QState,
) -> Result<(), AlgorithmError> {
    rl_update(
        &mut rt.q,
        state,
        outcome.action,
        outcome.reward,
        next_state,
        rt.params.alpha,
        rt.params.gamma,
    )?;
    let learned_quality = match outcome.action {
        Action::Alloc { .. } => outcome.quality,
        _ => 0.0,
    };
    rt.tsqm.update(learned_quality);
    rt.samples.push(ActionSample {
        action: outcome.action,
        time: rt.clock,
        quality: learned_quality,
    })?;
    rt.clock += 1;
    Ok(())
}

/// One iteration of ATA-RIA for the agent owning `rt`: execute a task it is
/// capable of, otherwise let RT-ARP pick among ALLOC, INFO and LINK; restore
/// the knowledge and neighbourhood bounds; then learn from the outcome.
pub fn ata_ria_step<E: Environment, R: Rng + ?Sized>(
    rt: &mut AgentRuntime,
    system: &mut SystemState,
    env: &E,
    unallocated: &mut Vec<AtomicTask>,
    rng: &mut R,
) -> Result<Outcome, AlgorithmError> {
    let actor = rt.id;
    if unallocated.is_empty() {
        return Err(AlgorithmError::NothingToDo(actor));
    }
    let state = state_of(unallocated);
    let spec = system.spec(actor)?;
    let action = match unallocated.iter().find(|t| spec.is_capable(t.task_type)) {
        Some(t) => Action::Exec {
            actor,
            task_type: t.task_type,
        },
        None => rt_arp_select(rt, system.agent_state(actor)?, &state, rng)?,
    };
    let outcome = resolve(system, env, action, unallocated, &rt.params, rng)?;
    match action {
        Action::Info { .. } => {
            if rt.features.sas_kr {
                sas_kr(rt, system, rng)?;
            } else {
                trim_knowledge(system, actor, rng)?;
            }
        }
        Action::Link { .. } => {
            n_prune(rt, system, rng)?;
        }
        _ => {}
    }
    let next_state = state_of(unallocated);
    learn(rt, &state, &outcome, &next_state)?;
    Ok(outcome)
}
