//! Property suites shared by the `properties` and `acceptance` targets.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use dtas_core::algorithms::{
    ata_ria_step, AgentRuntime, AlgorithmError, Environment, Features, LearningParams,
};
use dtas_core::impact::{impact_transform, ImpactWeights, Tsqm};
use dtas_core::learning::{rl_update, softmax, sumnorm, QState, QTable};
use dtas_core::model::{apply_requirement, Action, AgentId, AtomicTask, ExternalId, TaskTypeId};
use dtas_core::quality::{omega, QualityModel};
use dtas_core::report::{rows_from_runs, write_rows};
use dtas_core::sim::{build_system, run_scenario, Scenario, ScenarioConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Env<'a> {
    model: &'a QualityModel,
    down: BTreeSet<AgentId>,
}

impl Environment for Env<'_> {
    fn is_up(&self, agent: AgentId) -> bool {
        !self.down.contains(&agent)
    }
    fn quality(&self, agent: AgentId, task_type: TaskTypeId, k: u32) -> Option<f64> {
        omega(self.model, agent, task_type, k).ok()
    }
}

/// Drives `steps` ATA-RIA steps over a random world and checks the
/// knowledge and neighbourhood bounds of every agent after each one.
fn run_steps(seed: u64, children: usize, cap_prob: f64, features: Features, steps: usize) {
    let cfg = ScenarioConfig {
        capability_prob: cap_prob,
        ..ScenarioConfig::for_scenario(Scenario::Stable)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = build_system(&cfg, children, &mut rng).unwrap();
    let weights = ImpactWeights::new(cfg.link_weight, cfg.info_weight);
    let mut rts: BTreeMap<AgentId, AgentRuntime> = world
        .parents
        .iter()
        .map(|&p| {
            (
                p,
                AgentRuntime::new(p, weights, LearningParams::default(), features, (10, 10)),
            )
        })
        .collect();
    let mut todo: BTreeMap<AgentId, Vec<AtomicTask>> = BTreeMap::new();
    let mut env_down = BTreeSet::new();
    for step in 0..steps {
        if step % 50 == 0 {
            env_down = world
                .children
                .iter()
                .copied()
                .filter(|_| rng.random::<f64>() < 0.05)
                .collect();
            world.system.allocations.clear();
            todo.clear();
        }
        let p = world.parents[rng.random_range(0..world.parents.len())];
        let tasks = todo.entry(p).or_default();
        if tasks.is_empty() {
            let (next, holder) = apply_requirement(
                &world.system,
                &world.composites[&p],
                ExternalId(step as u32),
                &mut rng,
            )
            .unwrap();
            assert_eq!(holder, p);
            world.system = next;
            *tasks = world.system.allocations.last().unwrap().tasks.clone();
        }
        let env = Env {
            model: &world.model,
            down: env_down.clone(),
        };
        let rt = rts.get_mut(&p).unwrap();
        match ata_ria_step(rt, &mut world.system, &env, tasks, &mut rng) {
            Ok(_) | Err(AlgorithmError::NoAvailableAction(_)) => {}
            Err(e) => panic!("step {step}: {e}"),
        }
        for (id, st) in &world.system.agent_states {
            let spec = world.system.spec(*id).unwrap();
            assert!(
                st.neighbourhood.len() <= spec.delta_n,
                "step {step}: |N| of {id:?}"
            );
            assert!(
                st.knowledge.len() <= spec.delta_k,
                "step {step}: |K| of {id:?}"
            );
            assert!(
                st.neighbourhood.is_subset(&st.knowledge),
                "step {step}: N ⊄ K of {id:?}"
            );
        }
        if step % 3 == 2 {
            world.system.close_window();
        }
    }
}

/// 10^5 randomized steps over five world and feature configurations.
pub fn constraint_invariants_over_100k_steps() {
    let configs = [
        (1, 10, 0.5, Features::FULL),
        (2, 10, 0.1, Features::FULL),
        (
            3,
            25,
            0.3,
            Features {
                rt_arp: false,
                sas_kr: true,
            },
        ),
        (
            4,
            10,
            0.5,
            Features {
                rt_arp: false,
                sas_kr: false,
            },
        ),
        (5, 50, 0.2, Features::FULL),
    ];
    for (seed, children, cap, features) in configs {
        run_steps(seed, children, cap, features, 20_000);
    }
}

fn random_tsqm(values: &[f64], shape: (usize, usize)) -> Tsqm {
    let mut t = Tsqm::new(shape.0, shape.1);
    for &v in values {
        t.update(v);
    }
    t
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

/// IT stays in [0, 1], is non-increasing in x and hits both endpoints, over
/// 10^3 random TSQMs.
pub fn impact_transform_bounded_and_non_increasing() {
    let strategy = (
        prop::collection::vec(0.0f64..=1.0, 0..400),
        1usize..6,
        1usize..6,
        0.0f64..=1.0,
        prop::collection::vec(0.0f64..=1.0, 2..8),
    );
    runner(1000)
        .run(&strategy, |(values, m, n, decay, mut xs)| {
            let t = random_tsqm(&values, (m, n));
            xs.sort_by(f64::total_cmp);
            let its: Vec<f64> = xs.iter().map(|&x| impact_transform(&t, decay, x)).collect();
            for &it in &its {
                prop_assert!((0.0..=1.0).contains(&it), "IT = {it}");
            }
            for w in its.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", its);
            }
            prop_assert_eq!(impact_transform(&t, decay, 0.0), 1.0);
            prop_assert_eq!(impact_transform(&t, decay, 1.0), 0.0);
            Ok(())
        })
        .unwrap();
}

/// Row i of a TSQM receives one value per n^i inserts.
pub fn tsqm_rollup_counting() {
    let strategy = (
        prop::collection::vec(0.0f64..=1.0, 0..600),
        1usize..5,
        1usize..6,
    );
    runner(500)
        .run(&strategy, |(values, m, n)| {
            let t = random_tsqm(&values, (m, n));
            for i in 0..m {
                let received = values.len() / n.pow(i as u32);
                prop_assert_eq!(t.pending(i), received % n, "row {}", i);
                let filled = t.row(i).iter().filter(|v| v.is_some()).count();
                prop_assert_eq!(filled, received.min(n), "row {}", i);
            }
            Ok(())
        })
        .unwrap();
}

fn argmax(v: &[(usize, f64)]) -> usize {
    v.iter()
        .fold((usize::MAX, f64::NEG_INFINITY), |b, &(i, x)| {
            if x > b.1 {
                (i, x)
            } else {
                b
            }
        })
        .0
}

/// Sum-normalisation and softmax keep the argmax and the value order.
pub fn sumnorm_and_softmax_keep_the_argmax() {
    runner(500)
        .run(&prop::collection::vec(0.001f64..10.0, 1..20), |values| {
            let pairs: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
            let s = sumnorm(&pairs).unwrap();
            let total: f64 = s.iter().map(|p| p.1).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert_eq!(argmax(&s), argmax(&pairs));
            let sm = softmax(&pairs);
            prop_assert_eq!(argmax(&sm), argmax(&pairs));
            for (a, b) in pairs.iter().zip(&sm) {
                for (c, d) in pairs.iter().zip(&sm) {
                    if a.1 < c.1 {
                        prop_assert!(b.1 <= d.1);
                    }
                }
            }
            Ok(())
        })
        .unwrap();
}

/// 10^4 updates with α = 0.1, γ = 0 settle within 10^-2 of a stationary
/// mean reward.
pub fn q_update_converges_to_stationary_mean() {
    let strategy = (-1.0f64..1.0, 0.0f64..0.02, any::<u64>());
    runner(64)
        .run(&strategy, |(mean, noise, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut q = QTable::new(0.5);
            let s = QState::new([TaskTypeId(0)]);
            let a = Action::Link {
                actor: AgentId(0),
                known: AgentId(1),
            };
            for _ in 0..10_000 {
                let r = mean + noise * (2.0 * rng.random::<f64>() - 1.0);
                rl_update(&mut q, &s, a, r, &QState::new([]), 0.1, 0.0).unwrap();
            }
            prop_assert!((q.get(&s, &a) - mean).abs() < 1e-2);
            Ok(())
        })
        .unwrap();
}

fn csv_bytes(cfg: &ScenarioConfig) -> Vec<u8> {
    let runs = run_scenario(cfg).unwrap();
    let mut out = Vec::new();
    write_rows(&mut out, &rows_from_runs(cfg.scenario, cfg.seed, &runs)).unwrap();
    out
}

/// Two runs with one seed give byte-identical CSV; another seed differs.
pub fn full_run_determinism() {
    for scenario in Scenario::ALL {
        let cfg = ScenarioConfig {
            runs: 4,
            episodes: 15,
            seed: 2024,
            ..ScenarioConfig::for_scenario(scenario)
        };
        let a = csv_bytes(&cfg);
        assert_eq!(a, csv_bytes(&cfg), "{scenario:?}");
        let other = ScenarioConfig { seed: 2025, ..cfg };
        assert_ne!(a, csv_bytes(&other), "{scenario:?}");
    }
}

/// Every suite, by name.
pub const SUITES: [(&str, fn()); 6] = [
    (
        "constraint invariants over 1e5 steps",
        constraint_invariants_over_100k_steps,
    ),
    (
        "IT bounds and monotonicity over 1e3 TSQMs",
        impact_transform_bounded_and_non_increasing,
    ),
    (
        "sumnorm/softmax argmax preservation",
        sumnorm_and_softmax_keep_the_argmax,
    ),
    ("TSQM roll-up counting", tsqm_rollup_counting),
    (
        "Q-update bandit convergence",
        q_update_converges_to_stationary_mean,
    ),
    ("full-run seed determinism", full_run_determinism),
];
