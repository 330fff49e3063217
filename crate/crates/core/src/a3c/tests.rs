use proptest::prelude::*;

use super::*;
use crate::envs::{Action, ActionSpace, Corridor};
use crate::numcore::check_gradient;
use crate::policy::{make_repetition_set, ActionHeadKind, RepetitionSet, RepetitionVariant};

fn range(k: usize) -> RepetitionSet {
    make_repetition_set(&RepetitionVariant::Range(k), 0).unwrap()
}

fn transition(reward: f64, elapsed: usize, terminal: bool) -> MacroTransition {
    MacroTransition {
        state: vec![0.0; 4],
        action: Action::Discrete(0),
        repetition: elapsed,
        macro_reward: reward,
        elapsed,
        next_state: vec![0.0; 4],
        terminal,
        truncated: false,
        primitive_rewards: vec![],
    }
}

/// Discounts every primitive reward by its absolute primitive time index.
fn brute_force(primitive: &[Vec<f64>], bootstrap: f64, gamma: f64) -> Vec<f64> {
    (0..primitive.len())
        .map(|j| {
            let mut t = 0;
            let mut total = 0.0;
            for rewards in &primitive[j..] {
                for r in rewards {
                    total += gamma.powi(t) * r;
                    t += 1;
                }
            }
            total + gamma.powi(t) * bootstrap
        })
        .collect()
}

fn macro_segment(primitive: &[Vec<f64>], gamma: f64, bootstrap: f64, terminal: bool) -> RolloutSegment {
    let n = primitive.len();
    let ts = primitive
        .iter()
        .enumerate()
        .map(|(i, rs)| {
            let r = rs.iter().enumerate().map(|(k, r)| gamma.powi(k as i32) * r).sum();
            let mut t = transition(r, rs.len(), terminal && i == n - 1);
            t.primitive_rewards = rs.clone();
            t
        })
        .collect();
    RolloutSegment::new(ts, bootstrap).unwrap()
}

#[test]
fn single_terminal_transition() {
    let seg = RolloutSegment::new(vec![transition(5.0, 3, true)], 0.0).unwrap();
    assert_eq!(smdp_return_targets(&seg, 0.9, ReturnTargets::Exact), vec![5.0]);
}

#[test]
fn undiscounted_targets_are_plain_sums() {
    let seg = RolloutSegment::new(vec![transition(1.0, 2, false), transition(2.0, 4, false)], 3.0).unwrap();
    assert_eq!(smdp_return_targets(&seg, 1.0, ReturnTargets::Exact), vec![6.0, 5.0]);
    assert_eq!(smdp_return_targets(&seg, 1.0, ReturnTargets::Literal), vec![6.0, 5.0]);
}

#[test]
fn two_macro_example() {
    let primitive = vec![vec![1.0, 1.0], vec![1.0, 1.0, 1.0]];
    let seg = macro_segment(&primitive, 0.5, 0.0, true);
    assert_eq!(seg.transitions[0].macro_reward, 1.5);
    assert_eq!(seg.transitions[1].macro_reward, 1.75);
    let v = smdp_return_targets(&seg, 0.5, ReturnTargets::Exact);
    assert_eq!(v[0], 1.9375);
    assert_eq!(brute_force(&primitive, 0.0, 0.5)[0], 1.9375);
    // The literal recurrence discounts r_1 by x_1 = 3 instead of x_0 = 2.
    let lit = smdp_return_targets(&seg, 0.5, ReturnTargets::Literal);
    assert_eq!(lit[0], 1.5 + 0.125 * 1.75);
}

#[test]
fn unit_durations_give_textbook_n_step_returns() {
    let rewards = [0.3, -1.0, 2.5, 0.0, 4.0];
    let gamma = 0.97;
    let bootstrap = 1.7;
    let seg = RolloutSegment::new(rewards.iter().map(|&r| transition(r, 1, false)).collect(), bootstrap).unwrap();
    let mut ret = bootstrap;
    let mut expected = vec![0.0; rewards.len()];
    for t in (0..rewards.len()).rev() {
        ret = rewards[t] + gamma * ret;
        expected[t] = ret;
    }
    assert_eq!(smdp_return_targets(&seg, gamma, ReturnTargets::Exact), expected);
}

#[test]
fn segment_validation() {
    assert!(RolloutSegment::new(vec![], 0.0).is_err());
    assert!(RolloutSegment::new(vec![transition(1.0, 1, true)], 2.0).is_err());
    assert!(RolloutSegment::new(vec![transition(1.0, 1, true), transition(1.0, 1, false)], 0.0).is_err());
}

fn policy(set: RepetitionSet, shared: bool, seed: u64) -> FactoredPolicy<f64> {
    let mut arch = PolicyArch::new(vec![8], Activation::Tanh);
    arch.shared_trunk = shared;
    FactoredPolicy::new(4, &ActionSpace::Discrete(2), ActionHeadKind::Categorical, set, &arch, seed).unwrap()
}

fn random_segment(seed: u64, len: usize, k: usize) -> RolloutSegment {
    use rand::Rng;
    let mut rng = rng::stream(seed, "segment", 0);
    let ts = (0..len)
        .map(|i| {
            let x = rng.random_range(1..=k);
            let mut t = transition(rng.random_range(-2.0..2.0), x, i == len - 1);
            t.state = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            t.action = Action::Discrete(rng.random_range(0..2));
            t
        })
        .collect();
    RolloutSegment::new(ts, 0.0).unwrap()
}

#[test]
fn zero_advantage_and_beta_give_zero_gradient() {
    let p = policy(range(5), false, 1);
    let seg = random_segment(2, 6, 5);
    let values = vec![0.4; 6];
    let (_, g) = joint_actor_loss(&p, &seg, &values, &values, 0.0, true).unwrap();
    assert!(g.values().iter().all(|&v| v == 0.0));
}

#[test]
fn actor_gradient_matches_finite_differences() {
    for shared in [false, true] {
        for seed in 0..3 {
            let p = policy(range(5), shared, seed);
            let seg = random_segment(seed + 10, 7, 5);
            let targets: Vec<f64> = (0..7).map(|i| i as f64 * 0.3 - 1.0).collect();
            let values = vec![0.2; 7];
            let (_, g) = joint_actor_loss(&p, &seg, &targets, &values, 0.02, true).unwrap();
            let f = |v: &[f64]| {
                joint_actor_loss(&p.with_params(v).unwrap(), &seg, &targets, &values, 0.02, true)
                    .unwrap()
                    .0
            };
            let err = check_gradient(f, p.params().values(), g.values(), 1e-6).unwrap();
            assert!(err < 1e-6, "shared={shared} err={err}");
        }
    }
}

#[test]
fn warmup_drops_repetition_gradient() {
    let p = policy(range(5), false, 3);
    let seg = random_segment(4, 5, 1);
    let targets = vec![1.0; 5];
    let values = vec![0.0; 5];
    let (_, g) = joint_actor_loss(&p, &seg, &targets, &values, 0.02, false).unwrap();
    assert!(g.values()[p.repetition_range()].iter().all(|&v| v == 0.0));
    assert!(g.values()[p.action_range()].iter().any(|&v| v != 0.0));
}

#[test]
fn singleton_loss_is_action_only() {
    let p = policy(range(1), false, 5);
    let seg = random_segment(6, 5, 1);
    let targets = vec![1.5; 5];
    let values = vec![0.5; 5];
    let (loss, g) = joint_actor_loss(&p, &seg, &targets, &values, 0.02, true).unwrap();
    let mut expected = 0.0;
    for t in &seg.transitions {
        let e = p.evaluate(&t.state).unwrap();
        expected -= action_logprob(&e.action, &t.action).unwrap() * 1.0 + 0.02 * action_entropy(&e.action);
    }
    assert!((loss - expected).abs() < 1e-12);
    assert!(g.values()[p.repetition_range()].iter().all(|&v| v == 0.0));
}

#[test]
fn critic_loss_cases() {
    let mut critic = value_network(4, &[6], Activation::Tanh, 1).unwrap();
    let seg = random_segment(1, 4, 3);
    let values: Vec<f64> = seg.transitions.iter().map(|t| critic.forward(&t.state).unwrap()[0]).collect();
    let (loss, g) = critic_loss(&critic, &seg, &values).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.values().iter().all(|&v| v == 0.0));

    let (l, g) = critic_loss(&critic, &seg, &[0.3, -0.2, 1.0, 0.5]).unwrap();
    assert!(l > 0.0);
    let f = |v: &[f64]| {
        let mut c = critic.clone();
        c.params_mut().assign(v).unwrap();
        critic_loss(&c, &seg, &[0.3, -0.2, 1.0, 0.5]).unwrap().0
    };
    assert!(check_gradient(f, critic.params().values(), g.values(), 1e-6).unwrap() < 1e-6);

    let n = critic.params().len();
    critic.params_mut().assign(&vec![0.0; n]).unwrap();
    let one = RolloutSegment::new(vec![transition(0.0, 1, true)], 0.0).unwrap();
    assert_eq!(critic_loss(&critic, &one, &[2.0]).unwrap().0, 4.0);
}

fn corridor_setup(k: usize, seed: u64, config: &A3cConfig) -> (Corridor, FactoredPolicy<f64>, Mlp<f64>) {
    let env = Corridor::deterministic(10, 0.99).unwrap();
    let p = FactoredPolicy::new(
        11,
        &ActionSpace::Discrete(2),
        ActionHeadKind::Categorical,
        range(k),
        &config.policy,
        seed,
    )
    .unwrap();
    let c = value_network(11, &config.critic_hidden, config.policy.activation, seed).unwrap();
    (env, p, c)
}

fn small_config(budget: u64) -> A3cConfig {
    A3cConfig {
        total_decision_steps: budget,
        policy: PolicyArch::new(vec![16], Activation::Tanh),
        critic_hidden: vec![16],
        log_interval: 500,
        ..A3cConfig::default()
    }
}

#[test]
fn single_worker_runs_are_bitwise_reproducible() {
    let cfg = small_config(3000);
    let (env, p, c) = corridor_setup(10, 4, &cfg);
    let a = train(&cfg, &env, p.clone(), c.clone(), 4).unwrap();
    let b = train(&cfg, &env, p, c, 4).unwrap();
    assert_eq!(a.log.to_csv_string().unwrap(), b.log.to_csv_string().unwrap());
    assert_eq!(a.policy.params(), b.policy.params());
    assert_eq!(a.log.decision_steps, 3000);
    assert_eq!(a.log.rows.last().unwrap().decision_step, 3000);
}

#[test]
fn warmup_freezes_repetition_head() {
    let cfg = A3cConfig {
        warmup_fraction: 0.5,
        ..small_config(2000)
    };
    let (env, p, c) = corridor_setup(10, 5, &cfg);
    let range = p.repetition_range();
    let before = p.params().values()[range.clone()].to_vec();
    let out = train_recording(&cfg, &env, p, c, 5).unwrap();
    let mut changed_at = None;
    for (i, params) in out.trajectory.iter().enumerate() {
        if params[range.clone()] != before[..] {
            changed_at = Some(i);
            break;
        }
    }
    let changed_at = changed_at.expect("repetition head trains after warmup");
    // Segments hold at most 20 decisions, so the first 50 updates all start in warmup.
    assert!(changed_at >= 50, "{changed_at}");
}

#[test]
fn zero_warmup_trains_repetition_from_the_start() {
    let cfg = A3cConfig {
        warmup_fraction: 0.0,
        ..small_config(200)
    };
    let (env, p, c) = corridor_setup(10, 6, &cfg);
    let range = p.repetition_range();
    let before = p.params().values()[range.clone()].to_vec();
    let out = train_recording(&cfg, &env, p, c, 6).unwrap();
    assert_ne!(out.trajectory[0][range], before[..]);
}

#[test]
fn multiple_workers_share_the_budget() {
    let cfg = A3cConfig {
        num_workers: 3,
        ..small_config(3000)
    };
    let (env, p, c) = corridor_setup(10, 7, &cfg);
    let out = train(&cfg, &env, p, c, 7).unwrap();
    assert_eq!(out.log.decision_steps, 3000);
    assert!(out.policy.params().is_finite());
}

#[test]
fn singleton_matches_plain_a3c() {
    let cfg = small_config(4000);
    let (env, p, c) = corridor_setup(1, 8, &cfg);
    let figar = train_recording(&cfg, &env, p.clone(), c.clone(), 8).unwrap();
    let actor = plain_actor(11, 2, &cfg.policy, 8).unwrap();
    assert_eq!(actor.params().values(), p.action_head().params().values());
    let plain = train_plain(&cfg, &env, actor, c, 8).unwrap();
    assert_eq!(figar.trajectory.len(), plain.trajectory.len());
    let a = p.action_range();
    let r = p.repetition_range();
    for (f, q) in figar.trajectory.iter().zip(&plain.trajectory) {
        assert_eq!(f[a.clone()], q[..a.len()]);
        assert_eq!(f[r.end..], q[a.len()..]);
        assert_eq!(f[r.clone()], p.params().values()[r.clone()]);
    }
    assert_eq!(figar.log.episode_returns, plain.episode_returns);
}

#[test]
fn config_validation() {
    assert!(A3cConfig { n: 0, ..A3cConfig::default() }.validate().is_err());
    assert!(A3cConfig {
        warmup_fraction: 1.0,
        ..A3cConfig::default()
    }
    .validate()
    .is_err());
    let parsed: A3cConfig = toml::from_str("n = 5\nentropy_beta = 0.01").unwrap();
    assert_eq!(parsed.n, 5);
    assert!(toml::from_str::<A3cConfig>("nn = 5").is_err());
}

#[test]
fn warmup_repetition_must_belong_to_w() {
    let cfg = A3cConfig {
        warmup_fixed_repetition: Some(40),
        ..small_config(100)
    };
    let (env, p, c) = corridor_setup(10, 1, &cfg);
    assert!(matches!(train(&cfg, &env, p, c, 1), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn exact_targets_match_primitive_discounting(
        primitive in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 1..=10), 1..20),
        gamma in 0.5f64..1.0,
        bootstrap in -3.0f64..3.0,
        terminal in any::<bool>(),
    ) {
        let b = if terminal { 0.0 } else { bootstrap };
        let seg = macro_segment(&primitive, gamma, b, terminal);
        let got = smdp_return_targets(&seg, gamma, ReturnTargets::Exact);
        let want = brute_force(&primitive, b, gamma);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
        }
    }
}
