use figar::envs::EnvConfig;
use figar::experiment::{self, Algorithm, ExperimentConfig};
use figar::oracle::{evaluate_policy, OraclePolicy};
use figar::policy::{make_repetition_set, RepetitionVariant, SamplingMode};
use figar::a3c::A3cConfig;

fn corridor() -> EnvConfig {
    EnvConfig::Corridor {
        length: 6,
        discount: 0.99,
        max_steps: 200,
    }
}

#[test]
fn oracle_policy_attains_its_value() {
    let set = make_repetition_set(&RepetitionVariant::Range(4), 0).unwrap();
    let env = corridor();
    let (model, solution) = experiment::solve_oracle(&env, &set).unwrap();
    let tabular = env.tabular().unwrap();
    let oracle = OraclePolicy::new(&solution, &model, &tabular);
    let mut live = env.build().unwrap();
    let ev = evaluate_policy(&oracle, live.as_mut(), 3, SamplingMode::Greedy, 0).unwrap();
    assert!((ev.mean_discounted_return - solution.values[0]).abs() < 1e-9);
    assert_eq!(ev.success_rate(), 1.0);
}

#[test]
fn figar_and_baseline_runs_share_the_evaluation_protocol() {
    let mut figar = ExperimentConfig::new(Algorithm::FigarA3c, corridor());
    figar.repetition_set = "figar-4".into();
    figar.eval_episodes = 8;
    figar.a3c = Some(A3cConfig {
        total_decision_steps: 3000,
        ..A3cConfig::default()
    });
    let mut baseline = figar.clone();
    baseline.algorithm = Algorithm::BaselineA3c;

    let f = experiment::execute(&figar).unwrap();
    let b = experiment::execute(&baseline).unwrap();
    assert_eq!(f.set.values(), &[1, 2, 3, 4]);
    assert_eq!(b.set.values(), &[1]);
    assert_eq!(f.evaluation.episodes(), 8);
    assert_eq!(b.evaluation.episodes(), 8);
    assert_eq!(b.metrics.mean_repetition, 1.0);
    assert!(f.metrics.oracle_start_value.unwrap() >= b.metrics.oracle_start_value.unwrap() - 1e-9);
}
