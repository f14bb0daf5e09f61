//! Simulation harness: builds worlds from a scenario configuration, drives
//! episodes for every algorithm variant and records utility against the
//! theoretical optimum.
//!
//! One episode hands every parent its composite task. Parents then act in
//! rounds: each parent with work left takes one action, in a freshly shuffled
//! order, and the concurrency window closes at the end of the round. A
//! parent gets at most `step_budget` rounds per episode.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithms::{
    ata_ria_step, resolve, state_of, trim_knowledge, trim_neighbourhood, AgentRuntime,
    AlgorithmError, Environment, Features, LearningParams,
};
use crate::impact::ImpactWeights;
use crate::learning::{available, boltzmann_select, rl_update, QTable};
use crate::model::{
    apply_requirement, Action, AgentId, AgentSpec, AgentState, AtomicTask, CompositeTask,
    CompositeTypeId, ExternalId, SystemState, TaskTypeId,
};
use crate::quality::{ConcurrencyLaw, QualityModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
    #[error(transparent)]
    Algorithm(#[from] AlgorithmError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Stable,
    Exploration,
    Volatile,
    Large,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Stable,
        Scenario::Exploration,
        Scenario::Volatile,
        Scenario::Large,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Stable => "stable",
            Scenario::Exploration => "exploration",
            Scenario::Volatile => "volatile",
            Scenario::Large => "large",
        }
    }

    pub fn parse(s: &str) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Weights used by the large system at a given child count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizedWeights {
    pub children: usize,
    pub link: f64,
    pub info: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub parents: usize,
    pub children: usize,
    pub task_types: usize,
    pub composite_types: usize,
    pub tasks_per_composite: usize,
    pub knowledge_cap: usize,
    pub neighbourhood_cap: usize,
    pub episodes: usize,
    pub runs: usize,
    pub seed: u64,
    /// Per-agent, per-episode chance of being unreachable.
    pub p_unavailable: f64,
    /// Volatile system: per-agent, per-episode chance of a parent's neighbour
    /// leaving, or of a departed agent rejoining, inside the disruption
    /// window. Everyone still away rejoins when it closes.
    pub p_leave: f64,
    pub window_start: usize,
    pub window_end: usize,
    pub link_weight: f64,
    pub info_weight: f64,
    pub tsqm_rows: usize,
    pub tsqm_cols: usize,
    pub quality_mean: f64,
    pub quality_sd: f64,
    /// Chance that a child is capable of a given task type.
    pub capability_prob: f64,
    pub step_budget: usize,
    /// Share of δn seeded from the best or worst agents in the exploration system.
    pub seed_fraction: f64,
    /// Child counts and weights of the large system.
    pub large_sizes: Vec<SizedWeights>,
    pub learning: LearningParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::for_scenario(Scenario::Stable)
    }
}

impl ScenarioConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let mut cfg = Self {
            scenario,
            parents: 3,
            children: 10,
            task_types: 20,
            composite_types: 10,
            tasks_per_composite: 5,
            knowledge_cap: 7,
            neighbourhood_cap: 5,
            episodes: 100,
            runs: 100,
            seed: 0,
            p_unavailable: 0.001,
            p_leave: 0.0,
            window_start: 25,
            window_end: 75,
            link_weight: 0.1,
            info_weight: 0.2,
            tsqm_rows: 10,
            tsqm_cols: 10,
            quality_mean: 0.5,
            quality_sd: 0.2,
            capability_prob: 0.5,
            step_budget: 50,
            seed_fraction: 0.75,
            large_sizes: vec![
                SizedWeights {
                    children: 10,
                    link: 0.1,
                    info: 0.2,
                },
                SizedWeights {
                    children: 25,
                    link: 0.1,
                    info: 0.2,
                },
                SizedWeights {
                    children: 50,
                    link: 0.1,
                    info: 0.55,
                },
                SizedWeights {
                    children: 100,
                    link: 0.1,
                    info: 0.6,
                },
            ],
            learning: LearningParams::default(),
        };
        match scenario {
            Scenario::Stable => {}
            Scenario::Exploration => cfg.episodes = 500,
            Scenario::Volatile => cfg.p_leave = 0.01,
            Scenario::Large => cfg.parents = 10,
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InfeasibleConfig(m));
        for (name, p) in [
            ("p_unavailable", self.p_unavailable),
            ("p_leave", self.p_leave),
            ("capability_prob", self.capability_prob),
            ("seed_fraction", self.seed_fraction),
            ("link_weight", self.link_weight),
            ("info_weight", self.info_weight),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        for (name, v) in [
            ("parents", self.parents),
            ("children", self.children),
            ("task_types", self.task_types),
            ("composite_types", self.composite_types),
            ("tasks_per_composite", self.tasks_per_composite),
            ("knowledge_cap", self.knowledge_cap),
            ("neighbourhood_cap", self.neighbourhood_cap),
            ("episodes", self.episodes),
            ("runs", self.runs),
            ("tsqm_rows", self.tsqm_rows),
            ("tsqm_cols", self.tsqm_cols),
            ("step_budget", self.step_budget),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.neighbourhood_cap > self.knowledge_cap {
            return bad("neighbourhood_cap exceeds knowledge_cap".into());
        }
        if self.window_start > self.window_end {
            return bad("volatile window is reversed".into());
        }
        if !(self.quality_sd >= 0.0) || !(self.quality_mean > 0.0) {
            return bad("quality distribution is degenerate".into());
        }
        if self.scenario == Scenario::Large && self.large_sizes.is_empty() {
            return bad("large system needs at least one size".into());
        }
        for s in &self.large_sizes {
            if s.children == 0 {
                return bad("large system sizes must be positive".into());
            }
        }
        self.learning
            .validate()
            .map_err(|e| SimError::InfeasibleConfig(e.to_string()))
    }
}

/// How a parent's initial neighbourhood is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMode {
    Random,
    /// Seeded from the agents of the optimal neighbourhood.
    Best,
    /// Seeded from the least useful agents.
    Worst,
    /// Exactly the optimal neighbourhood.
    Optimal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Optimal,
    Ql,
    QlReset,
    AtaRia(Features),
}

/// One labelled algorithm configuration within a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub policy: Policy,
    pub init: InitMode,
    pub volatile: bool,
    pub children: usize,
    pub weights: ImpactWeights,
}

pub fn scenario_variants(cfg: &ScenarioConfig) -> Vec<Variant> {
    let w = ImpactWeights::new(cfg.link_weight, cfg.info_weight);
    let v = |label: &str, policy, init, volatile| Variant {
        label: label.to_string(),
        policy,
        init,
        volatile,
        children: cfg.children,
        weights: w,
    };
    let no_rt_arp = Features {
        rt_arp: false,
        sas_kr: true,
    };
    let bare = Features {
        rt_arp: false,
        sas_kr: false,
    };
    match cfg.scenario {
        Scenario::Stable => vec![
            v("OPT", Policy::Optimal, InitMode::Optimal, false),
            v("QL", Policy::Ql, InitMode::Random, false),
            v("QL-RESET", Policy::QlReset, InitMode::Random, false),
            v(
                "ATARIA",
                Policy::AtaRia(Features::FULL),
                InitMode::Random,
                false,
            ),
        ],
        Scenario::Exploration => vec![
            v(
                "ATARIA0",
                Policy::AtaRia(no_rt_arp),
                InitMode::Random,
                false,
            ),
            v(
                "ATARIA+",
                Policy::AtaRia(Features::FULL),
                InitMode::Best,
                false,
            ),
            v(
                "ATARIA-",
                Policy::AtaRia(Features::FULL),
                InitMode::Worst,
                false,
            ),
        ],
        Scenario::Volatile => vec![
            v(
                "ATARIA-NODROP",
                Policy::AtaRia(Features::FULL),
                InitMode::Random,
                false,
            ),
            v(
                "ATARIA-DROP",
                Policy::AtaRia(Features::FULL),
                InitMode::Random,
                true,
            ),
            v(
                "ATARIA-NOSASKR",
                Policy::AtaRia(bare),
                InitMode::Random,
                true,
            ),
        ],
        Scenario::Large => cfg
            .large_sizes
            .iter()
            .map(|s| Variant {
                label: format!("ATARIA-{}", s.children),
                policy: Policy::AtaRia(Features::FULL),
                init: InitMode::Random,
                volatile: false,
                children: s.children,
                weights: ImpactWeights::new(s.link, s.info),
            })
            .collect(),
    }
}

/// A generated system: initial state, child qualities and each parent's
/// recurring composite task.
#[derive(Clone, Debug)]
pub struct World {
    pub system: SystemState,
    pub model: QualityModel,
    pub parents: Vec<AgentId>,
    pub children: Vec<AgentId>,
    pub composites: BTreeMap<AgentId, CompositeTask>,
}

impl World {
    /// Theoretical optimal utility of one episode.
    pub fn theoretical_utility(&self) -> f64 {
        self.composites
            .values()
            .flat_map(|c| &c.tasks)
            .map(|t| self.model.best_base(t.task_type).unwrap_or(0.0))
            .sum()
    }

    /// Best child per distinct task type of the parent's composite, ignoring
    /// concurrency with other parents.
    pub fn optimal_neighbourhood(&self, parent: AgentId) -> Vec<AgentId> {
        let mut out = Vec::new();
        for t in distinct_types(&self.composites[&parent]) {
            if let Some((a, _)) = self.model.best_among(t, self.children.iter().copied()) {
                if !out.contains(&a) {
                    out.push(a);
                }
            }
        }
        out
    }

    /// Children ordered from most to least useful for the parent's composite:
    /// optimal-neighbourhood members first, the rest by summed base quality.
    pub fn ranked_children(&self, parent: AgentId) -> Vec<AgentId> {
        let types = &self.composites[&parent].tasks;
        let score = |c: AgentId| -> f64 {
            types
                .iter()
                .map(|t| self.model.base(c, t.task_type).unwrap_or(0.0))
                .sum()
        };
        let best = self.optimal_neighbourhood(parent);
        let mut rest: Vec<AgentId> = self
            .children
            .iter()
            .copied()
            .filter(|c| !best.contains(c))
            .collect();
        rest.sort_by(|a, b| score(*b).total_cmp(&score(*a)).then(a.cmp(b)));
        best.into_iter().chain(rest).collect()
    }
}

fn distinct_types(c: &CompositeTask) -> Vec<TaskTypeId> {
    let mut v: Vec<TaskTypeId> = c.tasks.iter().map(|t| t.task_type).collect();
    v.sort();
    v.dedup();
    v
}

fn sample_quality<R: Rng + ?Sized>(dist: &Normal<f64>, rng: &mut R) -> f64 {
    loop {
        let q = dist.sample(rng);
        if q > 0.0 && q <= 1.0 {
            return q;
        }
    }
}

/// Generates a world with `n_children` children. Every task type gets at
/// least one capable child.
pub fn build_system<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    n_children: usize,
    rng: &mut R,
) -> Result<World, SimError> {
    cfg.validate()?;
    if n_children == 0 {
        return Err(SimError::InfeasibleConfig(
            "no children to cover task types".into(),
        ));
    }
    let dist = Normal::new(cfg.quality_mean, cfg.quality_sd)
        .map_err(|e| SimError::InfeasibleConfig(e.to_string()))?;
    let parents: Vec<AgentId> = (0..cfg.parents as u32).map(AgentId).collect();
    let children: Vec<AgentId> = (0..n_children as u32)
        .map(|i| AgentId(cfg.parents as u32 + i))
        .collect();
    let types: Vec<TaskTypeId> = (0..cfg.task_types as u16).map(TaskTypeId).collect();

    let mut caps: BTreeMap<AgentId, BTreeSet<TaskTypeId>> = BTreeMap::new();
    for &c in &children {
        let set = types
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < cfg.capability_prob)
            .collect();
        caps.insert(c, set);
    }
    for &t in &types {
        if !caps.values().any(|s| s.contains(&t)) {
            let c = *children.choose(rng).unwrap();
            caps.get_mut(&c).unwrap().insert(t);
        }
    }
    let mut model = QualityModel::new(ConcurrencyLaw::EvenSplit);
    for (&c, set) in &caps {
        for &t in set {
            model.set_base(c, t, sample_quality(&dist, rng));
        }
    }

    let composite_types: Vec<Vec<TaskTypeId>> = (0..cfg.composite_types)
        .map(|_| {
            (0..cfg.tasks_per_composite)
                .map(|_| *types.choose(rng).unwrap())
                .collect()
        })
        .collect();

    let mut specs = Vec::new();
    let mut states = BTreeMap::new();
    let mut composites = BTreeMap::new();
    for (i, &p) in parents.iter().enumerate() {
        let ct = CompositeTypeId((i % cfg.composite_types) as u16);
        specs.push(AgentSpec {
            id: p,
            capabilities: BTreeSet::new(),
            responsibilities: BTreeSet::from([ct]),
            delta_n: cfg.neighbourhood_cap,
            delta_k: cfg.knowledge_cap,
        });
        composites.insert(
            p,
            CompositeTask::new(ct, &composite_types[ct.0 as usize], 0),
        );
        states.insert(p, random_state(&children, cfg, rng));
    }
    for &c in &children {
        specs.push(AgentSpec {
            id: c,
            capabilities: caps[&c].clone(),
            responsibilities: BTreeSet::new(),
            delta_n: cfg.neighbourhood_cap,
            delta_k: cfg.knowledge_cap,
        });
        let others: Vec<AgentId> = children.iter().copied().filter(|x| *x != c).collect();
        states.insert(c, random_state(&others, cfg, rng));
    }
    Ok(World {
        system: SystemState::new(specs, states),
        model,
        parents,
        children,
        composites,
    })
}

fn random_state<R: Rng + ?Sized>(
    pool: &[AgentId],
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> AgentState {
    let knowledge: Vec<AgentId> = pool
        .choose_multiple(rng, cfg.knowledge_cap.min(pool.len()))
        .copied()
        .collect();
    let neighbourhood: BTreeSet<AgentId> = knowledge
        .choose_multiple(rng, cfg.neighbourhood_cap.min(knowledge.len()))
        .copied()
        .collect();
    AgentState::new(knowledge.into_iter().collect(), neighbourhood)
}

/// Replaces the parents' initial states according to `mode`.
pub fn seed_neighbourhoods<R: Rng + ?Sized>(
    world: &mut World,
    cfg: &ScenarioConfig,
    mode: InitMode,
    rng: &mut R,
) {
    if mode == InitMode::Random {
        return;
    }
    let seeded = (cfg.seed_fraction * cfg.neighbourhood_cap as f64).ceil() as usize;
    for &p in &world.parents.clone() {
        let ranked = world.ranked_children(p);
        let core: Vec<AgentId> = match mode {
            InitMode::Optimal => {
                let mut best = world.optimal_neighbourhood(p);
                best.truncate(cfg.neighbourhood_cap);
                best
            }
            InitMode::Best => ranked.iter().take(seeded).copied().collect(),
            InitMode::Worst => ranked.iter().rev().take(seeded).copied().collect(),
            InitMode::Random => unreachable!(),
        };
        let mut rest: Vec<AgentId> = world
            .children
            .iter()
            .copied()
            .filter(|c| !core.contains(c))
            .collect();
        rest.shuffle(rng);
        let mut n: BTreeSet<AgentId> = core.iter().copied().collect();
        let mut extra = rest.into_iter();
        if mode != InitMode::Optimal {
            while n.len() < cfg.neighbourhood_cap.min(world.children.len()) {
                n.insert(extra.next().unwrap());
            }
        }
        let mut k = n.clone();
        while k.len() < cfg.knowledge_cap.min(world.children.len()) {
            match extra.next() {
                Some(a) => k.insert(a),
                None => break,
            };
        }
        world.system.agent_states.insert(p, AgentState::new(k, n));
    }
}

struct WorldEnv<'a> {
    model: &'a QualityModel,
    down: &'a BTreeSet<AgentId>,
}

impl Environment for WorldEnv<'_> {
    fn is_up(&self, agent: AgentId) -> bool {
        !self.down.contains(&agent)
    }

    fn quality(&self, agent: AgentId, task_type: TaskTypeId, k: u32) -> Option<f64> {
        crate::quality::omega(self.model, agent, task_type, k).ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: usize,
    pub utility: f64,
    pub optimal_utility: f64,
    pub failed_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub run: usize,
    pub episodes: Vec<EpisodeResult>,
}

/// Per-parent learner for the baselines and ATA-RIA variants.
enum Learner {
    Optimal,
    Ql { q: QTable, reset: bool },
    AtaRia(Box<AgentRuntime>),
}

/// Mutable state of one simulated run of one variant.
pub struct Simulation {
    world: World,
    learners: BTreeMap<AgentId, Learner>,
    variant: Variant,
    cfg: ScenarioConfig,
    departed: BTreeSet<AgentId>,
    episode: usize,
    rng: ChaCha8Rng,
}

impl Simulation {
    pub fn new(world: World, variant: Variant, cfg: ScenarioConfig, rng: ChaCha8Rng) -> Self {
        let learners = world
            .parents
            .iter()
            .map(|&p| {
                let l = match variant.policy {
                    Policy::Optimal => Learner::Optimal,
                    Policy::Ql => Learner::Ql {
                        q: QTable::new(cfg.learning.default_q),
                        reset: false,
                    },
                    Policy::QlReset => Learner::Ql {
                        q: QTable::new(cfg.learning.default_q),
                        reset: true,
                    },
                    Policy::AtaRia(features) => Learner::AtaRia(Box::new(AgentRuntime::new(
                        p,
                        variant.weights,
                        cfg.learning,
                        features,
                        (cfg.tsqm_rows, cfg.tsqm_cols),
                    ))),
                };
                (p, l)
            })
            .collect();
        Self {
            world,
            learners,
            variant,
            cfg,
            departed: BTreeSet::new(),
            episode: 0,
            rng,
        }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn runtime(&self, parent: AgentId) -> Option<&AgentRuntime> {
        match self.learners.get(&parent) {
            Some(Learner::AtaRia(rt)) => Some(rt),
            _ => None,
        }
    }

    /// Agents that left during the disruption window and have not rejoined.
    pub fn departed(&self) -> &BTreeSet<AgentId> {
        &self.departed
    }

    fn in_window(&self, episode: usize) -> bool {
        self.variant.volatile && episode >= self.cfg.window_start && episode <= self.cfg.window_end
    }

    /// Draws this episode's unreachable agents.
    fn sample_downtime(&mut self, episode: usize) -> BTreeSet<AgentId> {
        if self.variant.volatile && episode > self.cfg.window_end {
            self.departed.clear();
        }
        if self.in_window(episode) {
            let p_leave = self.cfg.p_leave;
            let rng = &mut self.rng;
            self.departed.retain(|_| rng.random::<f64>() >= p_leave);
            for &p in &self.world.parents {
                let n = &self.world.system.agent_state(p).unwrap().neighbourhood;
                for &a in n {
                    if self.rng.random::<f64>() < self.cfg.p_leave {
                        self.departed.insert(a);
                    }
                }
            }
        }
        let mut down = self.departed.clone();
        for &c in &self.world.children {
            if self.rng.random::<f64>() < self.cfg.p_unavailable {
                down.insert(c);
            }
        }
        down
    }

    /// Runs the next episode (episodes are numbered from 1).
    pub fn run_episode(&mut self) -> Result<EpisodeResult, SimError> {
        self.episode += 1;
        let episode = self.episode;
        let down = self.sample_downtime(episode);
        let mut unallocated: BTreeMap<AgentId, Vec<AtomicTask>> = BTreeMap::new();
        for &p in &self.world.parents.clone() {
            let composite = self.world.composites[&p].clone();
            let (next, holder) =
                apply_requirement(&self.world.system, &composite, ExternalId(0), &mut self.rng)
                    .map_err(AlgorithmError::from)?;
            debug_assert_eq!(holder, p);
            self.world.system = next;
            let tasks = self.world.system.allocations.last().unwrap().tasks.clone();
            unallocated.insert(p, tasks);
        }

        let mut utility = 0.0;
        let mut attempts = 0usize;
        let mut failures = 0usize;
        for _ in 0..self.cfg.step_budget {
            let mut order: Vec<AgentId> = unallocated
                .iter()
                .filter(|(_, t)| !t.is_empty())
                .map(|(p, _)| *p)
                .collect();
            if order.is_empty() {
                break;
            }
            order.shuffle(&mut self.rng);
            for p in order {
                let tasks = unallocated.get_mut(&p).unwrap();
                let env = WorldEnv {
                    model: &self.world.model,
                    down: &down,
                };
                let outcome = step(
                    self.learners.get_mut(&p).unwrap(),
                    p,
                    &mut self.world.system,
                    &self.world.model,
                    &env,
                    tasks,
                    episode,
                    &self.cfg.learning,
                    &mut self.rng,
                )?;
                if let Action::Alloc { .. } = outcome.action {
                    attempts += 1;
                    failures += outcome.failed as usize;
                }
                utility += outcome.quality;
            }
            self.world.system.close_window();
        }
        // Unfinished tasks expire with the episode.
        self.world.system.allocations.clear();
        self.world.system.close_window();
        for l in self.learners.values_mut() {
            if let Learner::Ql { q, reset: true } = l {
                partial_reset(q);
            }
        }
        Ok(EpisodeResult {
            episode,
            utility,
            optimal_utility: self.world.theoretical_utility(),
            failed_fraction: if attempts == 0 {
                0.0
            } else {
                failures as f64 / attempts as f64
            },
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn step<E: Environment, R: Rng + ?Sized>(
    learner: &mut Learner,
    parent: AgentId,
    system: &mut SystemState,
    model: &QualityModel,
    env: &E,
    tasks: &mut Vec<AtomicTask>,
    episode: usize,
    params: &LearningParams,
    rng: &mut R,
) -> Result<crate::algorithms::Outcome, SimError> {
    match learner {
        Learner::AtaRia(rt) => Ok(ata_ria_step(rt, system, env, tasks, rng)?),
        Learner::Optimal => {
            let task_type = tasks[0].task_type;
            let n = &system
                .agent_state(parent)
                .map_err(AlgorithmError::from)?
                .neighbourhood;
            let target = model
                .best_among(task_type, n.iter().copied())
                .map(|(a, _)| a)
                .or_else(|| n.iter().next().copied())
                .ok_or(AlgorithmError::NoAvailableAction(parent))?;
            let action = Action::Alloc {
                actor: parent,
                task_type,
                target,
            };
            Ok(resolve(system, env, action, tasks, params, rng)?)
        }
        Learner::Ql { q, .. } => {
            let state = state_of(tasks);
            let agent = system.agent_state(parent).map_err(AlgorithmError::from)?;
            let values = available(q, parent, &state, agent);
            let action = boltzmann_select(&values, episode as f64, rng)
                .map_err(|_| AlgorithmError::NoAvailableAction(parent))?;
            let outcome = resolve(system, env, action, tasks, params, rng)?;
            match action {
                Action::Info { .. } => {
                    trim_knowledge(system, parent, rng)?;
                }
                Action::Link { .. } => {
                    trim_neighbourhood(system, parent, rng)?;
                }
                _ => {}
            }
            rl_update(
                q,
                &state,
                action,
                outcome.reward,
                &state_of(tasks),
                params.alpha,
                params.gamma,
            )
            .map_err(AlgorithmError::from)?;
            Ok(outcome)
        }
    }
}

/// Moves every entry halfway towards the mean of its state.
pub fn partial_reset(q: &mut QTable) {
    for (_, entries) in q.iter_mut() {
        let mean = entries.values().sum::<f64>() / entries.len() as f64;
        for v in entries.values_mut() {
            *v += (mean - *v) / 2.0;
        }
    }
}

/// Random stream for the world of `run` (shared by every variant of a run
/// so that variants are compared on the same systems).
pub fn world_rng(seed: u64, run: usize, children: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((run as u64) << 20) | children as u64);
    rng
}

/// Random stream driving the policy of one variant in one run.
pub fn policy_rng(seed: u64, run: usize, variant: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0005_eed0_fa11_u64);
    rng.set_stream(((run as u64) << 20) | variant as u64);
    rng
}

/// Builds the world for one run of one variant.
pub fn prepare(cfg: &ScenarioConfig, variant: &Variant, run: usize) -> Result<World, SimError> {
    let mut rng = world_rng(cfg.seed, run, variant.children);
    let mut world = build_system(cfg, variant.children, &mut rng)?;
    seed_neighbourhoods(&mut world, cfg, variant.init, &mut rng);
    Ok(world)
}

pub fn run_variant(
    cfg: &ScenarioConfig,
    variant: &Variant,
    variant_index: usize,
    run: usize,
) -> Result<RunResult, SimError> {
    let world = prepare(cfg, variant, run)?;
    let mut sim = Simulation::new(
        world,
        variant.clone(),
        cfg.clone(),
        policy_rng(cfg.seed, run, variant_index),
    );
    let episodes = (0..cfg.episodes)
        .map(|_| sim.run_episode())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunResult {
        label: variant.label.clone(),
        run,
        episodes,
    })
}

/// Every (variant, run) pair of the scenario, run in parallel. The result
/// is ordered by variant then run and does not depend on scheduling.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Vec<RunResult>, SimError> {
    run_labels(cfg, None)
}

/// As [`run_scenario`], restricted to the given labels when present.
pub fn run_labels(
    cfg: &ScenarioConfig,
    labels: Option<&[String]>,
) -> Result<Vec<RunResult>, SimError> {
    cfg.validate()?;
    let variants = scenario_variants(cfg);
    let jobs: Vec<(usize, &Variant, usize)> = variants
        .iter()
        .enumerate()
        .filter(|(_, v)| labels.is_none_or(|ls| ls.contains(&v.label)))
        .flat_map(|(i, v)| (0..cfg.runs).map(move |r| (i, v, r)))
        .collect();
    jobs.par_iter()
        .map(|&(i, v, r)| run_variant(cfg, v, i, r))
        .collect()
}
