//! Acceptance suite: one pass/fail line per criterion, non-zero exit if any fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use figar::a3c::{self, smdp_return_targets, value_network, A3cConfig, ReturnTargets, RolloutSegment};
use figar::ddpg::{self, actor_loss, critic_loss, one_hot, Critic, DdpgConfig, ReplayEntry};
use figar::envs::{Action, ActionSpace, Corridor, EnvConfig, Environment, MacroTransition, PointMass};
use figar::experiment::{self, Algorithm, ExperimentConfig, RunManifest, TRAINING_LOG_FILE};
use figar::numcore::{check_gradient, Activation};
use figar::oracle::{evaluate_policy, expand_smdp, smdp_value_iteration};
use figar::policy::{
    make_repetition_set, repetition_histogram, ActionHeadKind, FactoredPolicy, PolicyArch, RepetitionSet,
    RepetitionVariant, SamplingMode,
};
use figar::reporting::{ablate_repetition_head, improvement, sign_test};
use figar::rng::{self, StreamRng};
use figar::trpo::{self, combined_kl, combined_kl_grad, factored_surrogate, KSchedule, SurrogateBatch, SurrogateForm, TrpoConfig};
use rand::Rng;

const GRAD_TOL: f64 = 1e-4;
const FD_EPS: f64 = 1e-6;
const POINTS: u64 = 10;
const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn set(variant: &str, seed: u64) -> RepetitionSet {
    make_repetition_set(&RepetitionVariant::parse(variant).unwrap(), seed).unwrap()
}

fn perturb(policy: &FactoredPolicy<f64>, scale: f64, r: &mut StreamRng) -> FactoredPolicy<f64> {
    let p: Vec<f64> = policy.params().values().iter().map(|v| v + r.random_range(-scale..scale)).collect();
    policy.with_params(&p).unwrap()
}

fn random_obs(r: &mut StreamRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()
}

// ---------------------------------------------------------------- criterion 1

fn a3c_segment(r: &mut StreamRng, len: usize, k: usize) -> RolloutSegment {
    let ts = (0..len)
        .map(|i| {
            let x = r.random_range(1..=k);
            MacroTransition {
                state: random_obs(r, 4),
                action: Action::Discrete(r.random_range(0..3)),
                repetition: x,
                macro_reward: r.random_range(-2.0..2.0),
                elapsed: x,
                next_state: random_obs(r, 4),
                terminal: i == len - 1,
                truncated: false,
                primitive_rewards: vec![],
            }
        })
        .collect();
    RolloutSegment::new(ts, 0.0).unwrap()
}

fn trpo_batch(behaviour: &FactoredPolicy<f64>, r: &mut StreamRng, len: usize) -> SurrogateBatch {
    let mut b = SurrogateBatch::default();
    for _ in 0..len {
        let obs = random_obs(r, 4);
        let eval = behaviour.evaluate(&obs).unwrap();
        let d = behaviour.decide_from(&eval, SamplingMode::Stochastic, r, None).unwrap();
        b.observations.push(obs);
        b.actions.push(d.action);
        b.repetitions.push(d.repetition);
        b.repetition_indices.push(d.repetition_index);
        b.q.push(r.random_range(0.5..2.0));
        b.old_logprob_a.push(d.logprob_a);
        b.old_logprob_x.push(d.logprob_x);
        b.old_action.push(eval.action);
        b.old_repetition.push(eval.repetition);
    }
    b.episode_returns.push(0.0);
    b
}

fn ddpg_entries(r: &mut StreamRng, n: usize, w: usize) -> Vec<ReplayEntry> {
    (0..n)
        .map(|_| ReplayEntry {
            state: random_obs(r, 3),
            action: random_obs(r, 2),
            repetition: one_hot(w, r.random_range(0..w)).unwrap(),
            reward: r.random_range(-1.0..1.0),
            elapsed: r.random_range(1..=w),
            next_state: random_obs(r, 3),
            terminal: false,
        })
        .collect()
}

fn continuous(dim: usize) -> ActionSpace {
    ActionSpace::Continuous {
        low: vec![-1.0; dim],
        high: vec![1.0; dim],
    }
}

fn gradient_errors() -> Vec<(&'static str, f64)> {
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(e) => e.1 = e.1.max(err),
        None => worst.push((name, err)),
    };
    for seed in 0..POINTS {
        let mut r = rng::stream(seed, "acceptance.grad", 0);
        let mut arch = PolicyArch::new(vec![8, 6], Activation::Tanh);
        arch.shared_trunk = seed % 2 == 1;

        // FiGAR-A3C joint actor loss and critic loss.
        let base = FactoredPolicy::new(4, &ActionSpace::Discrete(3), ActionHeadKind::Categorical, set("figar-5", 0), &arch, seed)
            .unwrap();
        let p = perturb(&base, 0.3, &mut r);
        let seg = a3c_segment(&mut r, 7, 5);
        let targets: Vec<f64> = (0..7).map(|_| r.random_range(-2.0..2.0)).collect();
        let values: Vec<f64> = (0..7).map(|_| r.random_range(-1.0..1.0)).collect();
        let (_, g) = a3c::joint_actor_loss(&p, &seg, &targets, &values, 0.02, true).unwrap();
        let f = |v: &[f64]| a3c::joint_actor_loss(&p.with_params(v).unwrap(), &seg, &targets, &values, 0.02, true).unwrap().0;
        record("a3c joint loss", check_gradient(f, p.params().values(), g.values(), FD_EPS).unwrap());
        let critic = value_network(4, &[6], Activation::Tanh, seed).unwrap();
        let (_, g) = a3c::critic_loss(&critic, &seg, &targets).unwrap();
        let f = |v: &[f64]| {
            let mut c = critic.clone();
            c.params_mut().assign(v).unwrap();
            a3c::critic_loss(&c, &seg, &targets).unwrap().0
        };
        record("a3c critic loss", check_gradient(f, critic.params().values(), g.values(), FD_EPS).unwrap());

        // FiGAR-TRPO surrogate (both forms) and combined KL, discrete and Gaussian heads.
        let behaviours = [
            base.clone(),
            FactoredPolicy::new(4, &continuous(2), ActionHeadKind::Gaussian, set("figar-5", 0), &arch, seed).unwrap(),
        ];
        for old in &behaviours {
            let batch = trpo_batch(old, &mut r, 12);
            let new = perturb(old, 0.05, &mut r);
            for form in [SurrogateForm::Product, SurrogateForm::Additive] {
                let s = factored_surrogate(&new, &batch, 1.28, form).unwrap();
                let f = |v: &[f64]| factored_surrogate(&new.with_params(v).unwrap(), &batch, 1.28, form).unwrap().value;
                record("trpo surrogate", check_gradient(f, new.params().values(), s.grad.values(), FD_EPS).unwrap());
            }
            let g = combined_kl_grad(&new, &batch, 0.64).unwrap();
            let f = |v: &[f64]| combined_kl(&new.with_params(v).unwrap(), &batch, 0.64).unwrap().0;
            record("trpo combined kl", check_gradient(f, new.params().values(), g.values(), FD_EPS).unwrap());
        }

        // FiGAR-DDPG critic and actor objectives.
        let actor = FactoredPolicy::new(3, &continuous(2), ActionHeadKind::Deterministic, set("figar-4", 0), &arch, seed).unwrap();
        let actor = perturb(&actor, 0.3, &mut r);
        let critic = Critic::new(3, 2, 4, &[8, 6], Activation::Tanh, seed + 50).unwrap();
        let entries = ddpg_entries(&mut r, 6, 4);
        let batch: Vec<&ReplayEntry> = entries.iter().collect();
        let ys: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
        let (_, g) = critic_loss(&critic, &batch, &ys).unwrap();
        let f = |v: &[f64]| critic_loss(&critic.with_params(v).unwrap(), &batch, &ys).unwrap().0;
        record("ddpg critic loss", check_gradient(f, critic.params().values(), g.values(), FD_EPS).unwrap());
        let states: Vec<&[f64]> = entries.iter().map(|e| e.state.as_slice()).collect();
        let (_, g) = actor_loss(&actor, &critic, &states).unwrap();
        let f = |v: &[f64]| actor_loss(&actor.with_params(v).unwrap(), &critic, &states).unwrap().0;
        record("ddpg actor objective", check_gradient(f, actor.params().values(), g.values(), FD_EPS).unwrap());
    }
    worst
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let worst = gradient_errors();
    let secs = start.elapsed().as_secs_f64();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let parts: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    verdict(
        max < GRAD_TOL && secs < 60.0,
        format!("{POINTS} points each; max rel err {}; {secs:.1}s", parts.join(", ")),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Verdict {
    let mut r = rng::stream(2, "acceptance.smdp", 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let gamma: f64 = r.random_range(0.5..1.0);
        let len = r.random_range(1..=8);
        let terminal = r.random_bool(0.5);
        let bootstrap = if terminal { 0.0 } else { r.random_range(-5.0..5.0) };
        let primitive: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..r.random_range(1..=10)).map(|_| r.random_range(-3.0..3.0)).collect())
            .collect();
        let ts: Vec<MacroTransition> = primitive
            .iter()
            .enumerate()
            .map(|(i, rs)| MacroTransition {
                state: vec![0.0],
                action: Action::Discrete(0),
                repetition: rs.len(),
                macro_reward: rs.iter().enumerate().map(|(k, v)| gamma.powi(k as i32) * v).sum(),
                elapsed: rs.len(),
                next_state: vec![0.0],
                terminal: terminal && i == len - 1,
                truncated: false,
                primitive_rewards: rs.clone(),
            })
            .collect();
        let seg = RolloutSegment::new(ts, bootstrap).unwrap();
        let got = smdp_return_targets(&seg, gamma, ReturnTargets::Exact);
        // Flatten to primitive time and discount each reward by its offset from the decision.
        let flat: Vec<f64> = primitive.iter().flatten().copied().collect();
        let mut offset = 0;
        for (j, rs) in primitive.iter().enumerate() {
            let mut expected = 0.0;
            for (t, v) in flat[offset..].iter().enumerate() {
                expected += gamma.powi(t as i32) * v;
            }
            expected += gamma.powi((flat.len() - offset) as i32) * bootstrap;
            worst = worst.max((got[j] - expected).abs());
            offset += rs.len();
        }
    }
    verdict(worst <= 1e-12, format!("1000 cases, max abs err {worst:.1e}"))
}

// ---------------------------------------------------------------- criterion 3

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_3() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;

    // A3C, Corridor(10), one worker.
    let cfg = A3cConfig {
        total_decision_steps: 20_000,
        policy: PolicyArch::new(vec![16], Activation::Tanh),
        critic_hidden: vec![16],
        ..A3cConfig::default()
    };
    let env = Corridor::deterministic(10, 0.99).unwrap();
    let p = FactoredPolicy::new(11, &ActionSpace::Discrete(2), ActionHeadKind::Categorical, set("singleton-1", 0), &cfg.policy, 8)
        .unwrap();
    let c = value_network(11, &cfg.critic_hidden, cfg.policy.activation, 8).unwrap();
    let figar = a3c::train_recording(&cfg, &env, p.clone(), c.clone(), 8).unwrap();
    let plain = a3c::train_plain(&cfg, &env, a3c::plain_actor(11, 2, &cfg.policy, 8).unwrap(), c, 8).unwrap();
    let (a, rr) = (p.action_range(), p.repetition_range());
    let mut diff = 0.0f64;
    for (f, q) in figar.trajectory.iter().zip(&plain.trajectory) {
        let mut squeezed = f[a.clone()].to_vec();
        squeezed.extend_from_slice(&f[rr.end..]);
        diff = diff.max(max_abs_diff(&squeezed, q));
    }
    let n = figar.trajectory.len();
    pass &= n >= 1000 && n == plain.trajectory.len() && diff == 0.0;
    notes.push(format!("a3c {n} updates diff {diff:e}"));

    // TRPO, Corridor(5).
    let cfg = TrpoConfig {
        improvement_steps: 1000,
        k_schedule: KSchedule { k_min: 2, k_max: 4 },
        policy: PolicyArch::new(vec![16], Activation::Tanh),
        ..TrpoConfig::default()
    };
    let env = Corridor::deterministic(5, 0.99).unwrap();
    let p = FactoredPolicy::new(6, &ActionSpace::Discrete(2), ActionHeadKind::Categorical, set("singleton-1", 0), &cfg.policy, 5)
        .unwrap();
    let figar = trpo::train_recording(&cfg, &env, p, 5).unwrap();
    let plain = trpo::train_plain(&cfg, &env, a3c::plain_actor(6, 2, &cfg.policy, 5).unwrap(), 5).unwrap();
    let na = plain.actor.params().len();
    let mut diff = 0.0f64;
    for (f, q) in figar.trajectory.iter().zip(&plain.trajectory) {
        diff = diff.max(max_abs_diff(&f[..na], q));
    }
    let n = figar.trajectory.len();
    let accepted = figar.steps.iter().filter(|s| s.accepted).count();
    pass &= n >= 1000 && n == plain.trajectory.len() && diff == 0.0 && accepted > 0;
    notes.push(format!("trpo {n} updates ({accepted} accepted) diff {diff:e}"));

    // DDPG, PointMass.
    let cfg = DdpgConfig {
        total_train_steps: 1100,
        batch_size: 16,
        replay_capacity: 500,
        policy: PolicyArch::new(vec![16, 16], Activation::Relu),
        critic_hidden: vec![16, 16],
        ..DdpgConfig::default()
    };
    let env = PointMass::new(0.99, 100).unwrap();
    let space = env.spec().action_space.clone();
    let actor = FactoredPolicy::new(4, &space, ActionHeadKind::Deterministic, set("singleton-1", 0), &cfg.policy, 4).unwrap();
    let critic = Critic::new(4, 1, 0, &cfg.critic_hidden, cfg.policy.activation, 4).unwrap();
    let rep = actor.repetition_range().len();
    let figar = ddpg::train_recording(&cfg, &env, actor, critic.clone(), 4).unwrap();
    let plain = ddpg::train_plain(&cfg, &env, ddpg::plain_actor(4, &space, &cfg.policy, 4).unwrap(), critic, 4).unwrap();
    let na = plain.actor.params().len();
    let mut diff = 0.0f64;
    for (f, q) in figar.trajectory.iter().zip(&plain.trajectory) {
        diff = diff.max(max_abs_diff(&f[..na], &q[..na]));
        diff = diff.max(max_abs_diff(&f[na + rep..], &q[na..]));
    }
    let n = figar.trajectory.len();
    pass &= n >= 1000 && n == plain.trajectory.len() && diff == 0.0;
    notes.push(format!("ddpg {n} updates diff {diff:e}"));

    verdict(pass, notes.join("; "))
}

// ------------------------------------------------------- criteria 4, 7 and 8

struct CorridorRun {
    policy: FactoredPolicy<f64>,
    greedy_discounted: f64,
    greedy_repetition: f64,
    v_star: f64,
}

fn corridor_run(variant: &str, seed: u64) -> CorridorRun {
    let cfg = A3cConfig::default();
    let env = Corridor::deterministic(10, 0.99).unwrap();
    let w = set(variant, seed);
    let p = FactoredPolicy::new(11, &ActionSpace::Discrete(2), ActionHeadKind::Categorical, w.clone(), &cfg.policy, seed).unwrap();
    let c = value_network(11, &cfg.critic_hidden, cfg.policy.activation, seed).unwrap();
    let out = a3c::train(&cfg, &env, p, c, seed).unwrap();
    let mut e = env.clone();
    let ev = evaluate_policy(&out.policy, &mut e, 100, SamplingMode::Greedy, seed).unwrap();
    let model = expand_smdp::<f64>(&env, &w, 0.99).unwrap();
    let v_star = smdp_value_iteration(&model, 1e-10).unwrap().values[0];
    CorridorRun {
        policy: out.policy,
        greedy_discounted: ev.mean_discounted_return,
        greedy_repetition: ev.mean_repetition,
        v_star,
    }
}

fn full_range_runs() -> &'static Vec<CorridorRun> {
    static RUNS: OnceLock<Vec<CorridorRun>> = OnceLock::new();
    RUNS.get_or_init(|| SEEDS.iter().map(|&s| corridor_run("figar-10", s)).collect())
}

fn criterion_4() -> Verdict {
    let mut pass = true;
    let mut notes = Vec::new();
    for (seed, run) in SEEDS.iter().zip(full_range_runs()) {
        let within = (run.greedy_discounted - run.v_star).abs() <= 0.05 * run.v_star.abs();
        pass &= within && run.greedy_repetition > 2.0;
        notes.push(format!(
            "seed {seed}: return {:.4} vs V* {:.4}, repetition {:.2}",
            run.greedy_discounted, run.v_star, run.greedy_repetition
        ));
    }
    verdict(pass, notes.join("; "))
}

fn criterion_7() -> Verdict {
    let mut pass = true;
    let mut notes = Vec::new();
    for variant in ["figar-20", "figar-30", "figar-50", "figar-20-30", "figar-p"] {
        let run = corridor_run(variant, 0);
        let ok = run.greedy_discounted >= run.v_star - 0.1 * run.v_star.abs();
        pass &= ok;
        notes.push(format!("{variant} {:.4}/{:.4}", run.greedy_discounted, run.v_star));
    }
    verdict(pass, notes.join("; "))
}

fn criterion_8() -> Verdict {
    let env = Corridor::deterministic(10, 0.99).unwrap();
    let v = |w: &RepetitionSet| smdp_value_iteration(&expand_smdp::<f64>(&env, w, 0.99).unwrap(), 1e-10).unwrap().values[0];
    let gap = v(&set("figar-10", 0)) - v(&set("singleton-1", 0));
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    let mut notes = Vec::new();
    for (seed, run) in SEEDS.iter().zip(full_range_runs()) {
        let mut e = env.clone();
        let ab = ablate_repetition_head(&run.policy, &mut e, 100, rng::derive_seed(*seed, "acceptance.ablation", 0)).unwrap();
        let (f, a) = (ab.full_score(), ab.ablated_score());
        match f.partial_cmp(&a).unwrap() {
            std::cmp::Ordering::Greater => wins += 1,
            std::cmp::Ordering::Less => losses += 1,
            std::cmp::Ordering::Equal => ties += 1,
        }
        notes.push(format!("seed {seed} full {f:.3} ablated {a:.3}"));
    }
    let p = sign_test(wins, losses);
    let pass = gap > 1e-9 && wins == SEEDS.len();
    verdict(
        pass,
        format!(
            "oracle gap {gap:.3e}; {}; wins {wins} losses {losses} ties {ties}, sign-test p {p:.3}",
            notes.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Verdict {
    let config = TrpoConfig {
        improvement_steps: 100,
        k_schedule: KSchedule { k_min: 5, k_max: 10 },
        ..TrpoConfig::default()
    };
    let envs: [(&str, Box<dyn Environment>, ActionHeadKind); 2] = [
        ("corridor", Box::new(Corridor::deterministic(10, 0.99).unwrap()), ActionHeadKind::Categorical),
        ("pointmass", Box::new(PointMass::new(0.99, 200).unwrap()), ActionHeadKind::Gaussian),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, env, kind) in envs {
        let spec = env.spec().clone();
        let p = FactoredPolicy::new(spec.observation_dim, &spec.action_space, kind, set("figar-10", 0), &config.policy, 0).unwrap();
        let out = trpo::train(&config, env.as_ref(), p, 0).unwrap();
        let accepted: Vec<_> = out.steps.iter().filter(|s| s.accepted).collect();
        let violations = accepted
            .iter()
            .filter(|s| !(s.kl_after <= config.delta && s.surrogate_after >= s.surrogate_before))
            .count();
        let rejection = 1.0 - accepted.len() as f64 / out.steps.len() as f64;
        let max_kl = accepted.iter().map(|s| s.kl_after).fold(0.0, f64::max);
        pass &= out.steps.len() == 100 && violations == 0 && rejection < 0.2;
        notes.push(format!(
            "{name}: {} steps, rejection {:.0}%, violations {violations}, max kl {max_kl:.4}",
            out.steps.len(),
            100.0 * rejection
        ));
    }
    verdict(pass, notes.join("; "))
}

// ---------------------------------------------------------------- criterion 6

fn repetition_gradient_error() -> (f64, f64) {
    let mut worst = 0.0f64;
    let mut smallest_norm = f64::INFINITY;
    for seed in 0..POINTS {
        let mut r = rng::stream(seed, "acceptance.ddpg", 0);
        let arch = PolicyArch::new(vec![8, 6], Activation::Tanh);
        let actor = FactoredPolicy::new(3, &continuous(2), ActionHeadKind::Deterministic, set("figar-4", 0), &arch, seed).unwrap();
        let actor = perturb(&actor, 0.3, &mut r);
        let critic = Critic::new(3, 2, 4, &[8, 6], Activation::Tanh, seed + 50).unwrap();
        let entries = ddpg_entries(&mut r, 8, 4);
        let states: Vec<&[f64]> = entries.iter().map(|e| e.state.as_slice()).collect();
        let (_, g) = actor_loss(&actor, &critic, &states).unwrap();
        let range = actor.repetition_range();
        let chained: Vec<f64> = g.values()[range.clone()].iter().map(|v| -v).collect();
        let full = actor.params().into_values();
        let expected_q = |sub: &[f64]| {
            let mut p = full.clone();
            p[range.clone()].copy_from_slice(sub);
            -actor_loss(&actor.with_params(&p).unwrap(), &critic, &states).unwrap().0
        };
        worst = worst.max(check_gradient(expected_q, &full[range.clone()], &chained, FD_EPS).unwrap());
        smallest_norm = smallest_norm.min(chained.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    (worst, smallest_norm)
}

fn criterion_6() -> Verdict {
    let (err, norm) = repetition_gradient_error();
    let grad_ok = err < GRAD_TOL && norm > 0.0;
    let config = DdpgConfig {
        eval_interval: 5000,
        eval_episodes: 100,
        stop_at_success: Some(0.9),
        ..DdpgConfig::default()
    };
    let env = PointMass::new(0.99, 200).unwrap();
    let spec = env.spec().clone();
    let w = set("figar-10", 0);
    let actor = FactoredPolicy::new(spec.observation_dim, &spec.action_space, ActionHeadKind::Deterministic, w.clone(), &config.policy, 0)
        .unwrap();
    let critic = Critic::new(
        spec.observation_dim,
        spec.action_space.dim(),
        w.len(),
        &config.critic_hidden,
        config.policy.activation,
        0,
    )
    .unwrap();
    let out = ddpg::train(&config, &env, actor, critic, 0).unwrap();
    let best = out
        .log
        .evaluations
        .iter()
        .map(|e| e.success_rate)
        .fold(0.0, f64::max);
    let reached = out.log.evaluations.iter().find(|e| e.success_rate >= 0.9).map(|e| e.decision_step);
    let curve: Vec<String> = out
        .log
        .evaluations
        .iter()
        .map(|e| format!("{}:{:.2}", e.decision_step, e.success_rate))
        .collect();
    verdict(
        grad_ok && reached.is_some_and(|s| s <= 40_000),
        format!(
            "repetition-head grad rel err {err:.1e}, min norm {norm:.2e}; success by step {} (best {best:.2}; {})",
            reached.map_or("never".into(), |s| s.to_string()),
            curve.join(" ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Verdict {
    let i = improvement(707.80, 0.77);
    let improvement_ok = !i.undefined && (i.value - 918.22).abs() <= 0.01;
    let labels: Vec<String> = repetition_histogram(&[1, 30], 3, 30).unwrap().iter().map(|b| b.label()).collect();
    let expected: Vec<String> = (0..10).map(|k| format!("{}-{}", 3 * k + 1, 3 * k + 3)).collect();
    let mut r = rng::stream(9, "acceptance.hist", 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let xs: Vec<usize> = (0..r.random_range(1..500)).map(|_| r.random_range(1..=30)).collect();
        let total: f64 = repetition_histogram(&xs, 3, 30).unwrap().iter().map(|b| b.fraction).sum();
        worst = worst.max((total - 1.0).abs());
    }
    let examples = repetition_histogram(&[1, 5, 9, 29], 3, 30).unwrap();
    let quarters = [0, 1, 2, 9].iter().all(|&k| examples[k].fraction == 0.25);
    verdict(
        improvement_ok && labels == expected && worst < 1e-12 && quarters,
        format!("improvement {:.4}; bins {}..{}; max |sum-1| {worst:.1e}", i.value, labels[0], labels[9]),
    )
}

// --------------------------------------------------------------- criterion 10

fn criterion_10() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let mut configs = Vec::new();
    let corridor = EnvConfig::Corridor {
        length: 6,
        discount: 0.99,
        max_steps: 200,
    };
    let mut a = ExperimentConfig::new(Algorithm::FigarA3c, corridor.clone());
    a.a3c = Some(A3cConfig {
        total_decision_steps: 5000,
        log_interval: 250,
        ..A3cConfig::default()
    });
    configs.push(a);
    let mut t = ExperimentConfig::new(Algorithm::FigarTrpo, corridor);
    t.trpo = Some(TrpoConfig {
        improvement_steps: 30,
        k_schedule: KSchedule { k_min: 2, k_max: 5 },
        ..TrpoConfig::default()
    });
    configs.push(t);
    let mut d = ExperimentConfig::new(
        Algorithm::FigarDdpg,
        EnvConfig::PointMass {
            discount: 0.99,
            max_steps: 100,
        },
    );
    d.ddpg = Some(DdpgConfig {
        total_train_steps: 1500,
        log_interval: 100,
        ..DdpgConfig::default()
    });
    configs.push(d);
    let mut pass = true;
    let mut notes = Vec::new();
    for mut c in configs {
        c.master_seed = 11;
        c.eval_episodes = 10;
        let first = experiment::run_to_dir(&c, root.path()).unwrap();
        let manifest = RunManifest::load(&first).unwrap();
        let second = experiment::run_to_dir(&manifest.config, root.path()).unwrap();
        let (x, y) = (fs::read(first.join(TRAINING_LOG_FILE)).unwrap(), fs::read(second.join(TRAINING_LOG_FILE)).unwrap());
        let same = x == y && RunManifest::load(&second).unwrap().metrics == manifest.metrics;
        pass &= same && x.len() > 100;
        notes.push(format!("{} {} log bytes {}", c.algorithm.name(), x.len(), if same { "identical" } else { "differ" }));
    }
    verdict(pass, notes.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Verdict); 10] = [
        (1, "gradient correctness", criterion_1),
        (2, "SMDP discounting exactness", criterion_2),
        (3, "baseline reduction", criterion_3),
        (4, "oracle learning check", criterion_4),
        (5, "trust-region guarantee", criterion_5),
        (6, "DDPG repetition-gradient flow", criterion_6),
        (7, "variant robustness", criterion_7),
        (8, "ablation direction", criterion_8),
        (9, "reporting fidelity", criterion_9),
        (10, "reproducibility", criterion_10),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!(
            "criterion {n:>2} {:<30} {} [{:.1}s] {}",
            name,
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
