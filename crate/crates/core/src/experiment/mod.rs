//! Config-driven experiment runs: build environment, repetition set and
//! trainer from one TOML file, train, evaluate, and write a run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::a3c::{self, A3cConfig};
use crate::ddpg::{self, Critic, DdpgConfig};
use crate::envs::{ActionSpace, EnvConfig, EnvSpec};
use crate::error::{Error, Result};
use crate::oracle::{evaluate_policy, expand_smdp, smdp_value_iteration, Evaluation, OracleSolution, TabularSmdp};
use crate::policy::{make_repetition_set, ActionHeadKind, FactoredPolicy, RepetitionSet, RepetitionVariant, SamplingMode};
use crate::reporting::{self, confidence_interval, ComparisonRow, EVAL_EPSILON};
use crate::rng;
use crate::trainlog::TrainingLog;
use crate::trpo::{self, TrpoConfig};

/// Value-iteration tolerance used for oracle reference values.
pub const ORACLE_TOL: f64 = 1e-10;

const MANIFEST_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    FigarA3c,
    FigarTrpo,
    FigarDdpg,
    BaselineA3c,
    BaselineTrpo,
    BaselineDdpg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainer {
    A3c,
    Trpo,
    Ddpg,
}

impl Algorithm {
    pub fn trainer(self) -> Trainer {
        match self {
            Self::FigarA3c | Self::BaselineA3c => Trainer::A3c,
            Self::FigarTrpo | Self::BaselineTrpo => Trainer::Trpo,
            Self::FigarDdpg | Self::BaselineDdpg => Trainer::Ddpg,
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Self::BaselineA3c | Self::BaselineTrpo | Self::BaselineDdpg)
    }

    /// The baseline trained by the same learner.
    pub fn baseline(self) -> Self {
        match self.trainer() {
            Trainer::A3c => Self::BaselineA3c,
            Trainer::Trpo => Self::BaselineTrpo,
            Trainer::Ddpg => Self::BaselineDdpg,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::FigarA3c => "figar-a3c",
            Self::FigarTrpo => "figar-trpo",
            Self::FigarDdpg => "figar-ddpg",
            Self::BaselineA3c => "baseline-a3c",
            Self::BaselineTrpo => "baseline-trpo",
            Self::BaselineDdpg => "baseline-ddpg",
        }
    }
}

const BASELINE_VARIANT: &str = "singleton-1";

fn default_variant() -> String {
    "figar-10".into()
}

fn default_eval_episodes() -> usize {
    100
}

/// One experiment. Only the block of the selected trainer may be present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub env: EnvConfig,
    #[serde(default = "default_variant")]
    pub repetition_set: String,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a3c: Option<A3cConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trpo: Option<TrpoConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ddpg: Option<DdpgConfig>,
}

impl ExperimentConfig {
    pub fn new(algorithm: Algorithm, env: EnvConfig) -> Self {
        Self {
            algorithm,
            env,
            repetition_set: default_variant(),
            master_seed: 0,
            eval_episodes: default_eval_episodes(),
            a3c: None,
            trpo: None,
            ddpg: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Validates every field and materializes defaults: the trainer block
    /// is filled in and baselines get `W = {1}`.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        let trainer = c.algorithm.trainer();
        let stray = match trainer {
            Trainer::A3c => c.trpo.is_some() || c.ddpg.is_some(),
            Trainer::Trpo => c.a3c.is_some() || c.ddpg.is_some(),
            Trainer::Ddpg => c.a3c.is_some() || c.trpo.is_some(),
        };
        if stray {
            return Err(Error::Config(format!(
                "only the block of the {} trainer may be given",
                c.algorithm.name()
            )));
        }
        match trainer {
            Trainer::A3c => c.a3c.get_or_insert_with(A3cConfig::default).validate()?,
            Trainer::Trpo => c.trpo.get_or_insert_with(TrpoConfig::default).validate()?,
            Trainer::Ddpg => c.ddpg.get_or_insert_with(DdpgConfig::default).validate()?,
        }
        if c.algorithm.is_baseline() {
            c.repetition_set = BASELINE_VARIANT.into();
        }
        RepetitionVariant::parse(&c.repetition_set)?;
        if c.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        let env = c.env.build()?;
        let continuous = matches!(env.spec().action_space, ActionSpace::Continuous { .. });
        if trainer == Trainer::Ddpg && !continuous {
            return Err(Error::Config(format!("{} needs a continuous-action environment", c.algorithm.name())));
        }
        Ok(c)
    }

    pub fn variant(&self) -> Result<RepetitionVariant> {
        RepetitionVariant::parse(&self.repetition_set)
    }

    pub fn repetition(&self) -> Result<RepetitionSet> {
        make_repetition_set(&self.variant()?, self.master_seed)
    }

    fn policy_arch(&self) -> Result<&crate::policy::PolicyArch> {
        let missing = || Error::Usage("config is not resolved".into());
        Ok(match self.algorithm.trainer() {
            Trainer::A3c => &self.a3c.as_ref().ok_or_else(missing)?.policy,
            Trainer::Trpo => &self.trpo.as_ref().ok_or_else(missing)?.policy,
            Trainer::Ddpg => &self.ddpg.as_ref().ok_or_else(missing)?.policy,
        })
    }

    /// Fresh policy for this config, initialized from the master seed.
    pub fn build_policy(&self, spec: &EnvSpec, set: RepetitionSet) -> Result<FactoredPolicy<f64>> {
        let kind = match (self.algorithm.trainer(), &spec.action_space) {
            (Trainer::Ddpg, _) => ActionHeadKind::Deterministic,
            (_, ActionSpace::Discrete(_)) => ActionHeadKind::Categorical,
            (_, ActionSpace::Continuous { .. }) => ActionHeadKind::Gaussian,
        };
        FactoredPolicy::new(
            spec.observation_dim,
            &spec.action_space,
            kind,
            set,
            self.policy_arch()?,
            self.master_seed,
        )
    }

    /// Short label of the repetition set, safe for file names.
    pub fn variant_label(&self) -> Result<String> {
        Ok(self.variant()?.label().replace(',', "+"))
    }
}

/// Optimal SMDP solution for a tabular environment under `set`.
pub fn solve_oracle(env: &EnvConfig, set: &RepetitionSet) -> Result<(TabularSmdp<f64>, OracleSolution<f64>)> {
    let tabular = env.tabular()?;
    let model = expand_smdp::<f64>(&tabular, set, env.discount())?;
    let solution = smdp_value_iteration(&model, ORACLE_TOL)?;
    Ok((model, solution))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub mean_discounted_return: f64,
    pub mean_repetition: f64,
    pub success_rate: f64,
    pub decision_steps: u64,
    pub primitive_steps: u64,
    /// Oracle `V*` of the start state, for tabular environments.
    pub oracle_start_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub figar: String,
    pub manifest_format: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Fully resolved config; re-running it reproduces the metrics.
    pub config: ExperimentConfig,
    pub repetition_set: Vec<usize>,
    pub artifacts: Vec<String>,
    pub versions: Versions,
    pub wallclock_seconds: f64,
    pub metrics: FinalMetrics,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }
}

/// Trained parameters as stored in `parameters.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredParameters {
    pub policy: Vec<f64>,
    pub critic: Vec<f64>,
}

/// In-memory result of [`execute`].
#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub set: RepetitionSet,
    pub policy: FactoredPolicy<f64>,
    pub critic: Vec<f64>,
    pub log: TrainingLog,
    pub evaluation: Evaluation,
    pub metrics: FinalMetrics,
    pub wallclock_seconds: f64,
}

/// Trains and evaluates without touching the file system.
pub fn execute(config: &ExperimentConfig) -> Result<RunResult> {
    let config = config.resolved()?;
    let start = Instant::now();
    let set = config.repetition()?;
    let env = config.env.build()?;
    let spec = env.spec().clone();
    let policy = config.build_policy(&spec, set.clone())?;
    let seed = config.master_seed;
    let (policy, critic, log) = match config.algorithm.trainer() {
        Trainer::A3c => {
            let c = config.a3c.as_ref().expect("resolved");
            let critic = a3c::value_network(spec.observation_dim, &c.critic_hidden, c.policy.activation, seed)?;
            let out = a3c::train(c, env.as_ref(), policy, critic, seed)?;
            (out.policy, out.critic.params().values().to_vec(), out.log)
        }
        Trainer::Trpo => {
            let c = config.trpo.as_ref().expect("resolved");
            let out = trpo::train(c, env.as_ref(), policy, seed)?;
            (out.best_policy, Vec::new(), out.log)
        }
        Trainer::Ddpg => {
            let c = config.ddpg.as_ref().expect("resolved");
            let rep_dim = if set.len() == 1 { 0 } else { set.len() };
            let critic = Critic::new(
                spec.observation_dim,
                spec.action_space.dim(),
                rep_dim,
                &c.critic_hidden,
                c.policy.activation,
                seed,
            )?;
            let out = ddpg::train(c, env.as_ref(), policy, critic, seed)?;
            (out.actor, out.critic.params().into_values(), out.log)
        }
    };
    let mut eval_env = env.boxed_clone();
    let evaluation = evaluate_policy(
        &policy,
        eval_env.as_mut(),
        config.eval_episodes,
        SamplingMode::EpsGreedy(EVAL_EPSILON),
        rng::derive_seed(seed, "experiment.eval", 0),
    )?;
    let ci = confidence_interval(&evaluation.returns)?;
    let oracle_start_value = match config.env.tabular() {
        Ok(_) => Some(solve_oracle(&config.env, &set)?.1.values[0]),
        Err(_) => None,
    };
    let metrics = FinalMetrics {
        episodes: evaluation.episodes(),
        mean_return: evaluation.mean_return,
        std_return: evaluation.std_return,
        ci_lower: ci.lower,
        ci_upper: ci.upper,
        mean_discounted_return: evaluation.mean_discounted_return,
        mean_repetition: evaluation.mean_repetition,
        success_rate: evaluation.success_rate(),
        decision_steps: log.decision_steps,
        primitive_steps: log.primitive_steps,
        oracle_start_value,
    };
    Ok(RunResult {
        config,
        set,
        policy,
        critic,
        log,
        evaluation,
        metrics,
        wallclock_seconds: start.elapsed().as_secs_f64(),
    })
}

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMETERS_FILE: &str = "parameters.json";
pub const EVAL_FILE: &str = "eval.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const TRAINING_LOG_FILE: &str = "training_log.csv";
pub const TRAINING_EVAL_FILE: &str = "training_evaluations.csv";

pub const EVAL_CSV_HEADER: [&str; 3] = ["episode", "return", "discounted_return"];

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Creates `<algorithm>_<env>_<variant>_<seed>_<timestamp>` under `root`,
/// appending a counter when the name is taken.
pub fn create_run_dir(root: &Path, config: &ExperimentConfig) -> Result<PathBuf> {
    let base = format!(
        "{}_{}_{}_{}_{}",
        config.algorithm.name(),
        config.env.label(),
        config.variant_label()?,
        config.master_seed,
        unix_seconds()
    );
    fs::create_dir_all(root)?;
    let mut dir = root.join(&base);
    let mut n = 1;
    loop {
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                dir = root.join(format!("{base}-{n}"));
                n += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn write_eval_csv(ev: &Evaluation, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(EVAL_CSV_HEADER)?;
    for (i, (r, d)) in ev.returns.iter().zip(&ev.discounted_returns).enumerate() {
        w.serialize((i, r, d))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `config` and writes every artifact into a fresh run directory.
/// The resolved config is written first so a failed run still leaves it behind.
pub fn run_to_dir(config: &ExperimentConfig, output_root: &Path) -> Result<PathBuf> {
    let resolved = config.resolved()?;
    let dir = create_run_dir(output_root, &resolved)?;
    fs::write(dir.join(CONFIG_FILE), resolved.to_toml()?)?;
    let result = execute(&resolved)?;
    write_run(&result, &dir)?;
    Ok(dir)
}

fn write_run(result: &RunResult, dir: &Path) -> Result<()> {
    result.log.save(dir)?;
    write_eval_csv(&result.evaluation, &dir.join(EVAL_FILE))?;
    reporting::write_histogram_csv(&result.evaluation.histogram, fs::File::create(dir.join(HISTOGRAM_FILE))?)?;
    let params = StoredParameters {
        policy: result.policy.params().into_values(),
        critic: result.critic.clone(),
    };
    fs::write(dir.join(PARAMETERS_FILE), serde_json::to_string(&params)?)?;
    let manifest = RunManifest {
        config: result.config.clone(),
        repetition_set: result.set.values().to_vec(),
        artifacts: [
            CONFIG_FILE,
            TRAINING_LOG_FILE,
            TRAINING_EVAL_FILE,
            EVAL_FILE,
            HISTOGRAM_FILE,
            PARAMETERS_FILE,
            MANIFEST_FILE,
        ]
        .map(String::from)
        .to_vec(),
        versions: Versions {
            figar: env!("CARGO_PKG_VERSION").into(),
            manifest_format: MANIFEST_FORMAT,
        },
        wallclock_seconds: result.wallclock_seconds,
        metrics: result.metrics.clone(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Per-episode undiscounted returns from a run's `eval.csv`.
pub fn read_eval_returns(dir: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(dir.join(EVAL_FILE))?;
    r.deserialize::<(usize, f64, f64)>()
        .map(|row| Ok(row?.1))
        .collect()
}

/// Compares a figar run against a baseline run on the same task.
pub fn compare(figar_dir: &Path, baseline_dir: &Path) -> Result<ComparisonRow> {
    let f = RunManifest::load(figar_dir)?;
    let b = RunManifest::load(baseline_dir)?;
    if f.config.env != b.config.env {
        return Err(Error::Config(format!(
            "runs use different environments: {} vs {}",
            f.config.env.label(),
            b.config.env.label()
        )));
    }
    if f.config.eval_episodes != b.config.eval_episodes {
        return Err(Error::Config("runs use different evaluation protocols".into()));
    }
    ComparisonRow::from_scores(f.config.env.label(), &read_eval_returns(figar_dir)?, &read_eval_returns(baseline_dir)?)
}

/// Rebuilds the trained policy of a run directory.
pub fn load_policy(dir: &Path) -> Result<(RunManifest, FactoredPolicy<f64>)> {
    let manifest = RunManifest::load(dir)?;
    let params: StoredParameters = serde_json::from_str(&fs::read_to_string(dir.join(PARAMETERS_FILE))?)?;
    let env = manifest.config.env.build()?;
    let set = manifest.config.repetition()?;
    let mut policy = manifest.config.build_policy(env.spec(), set)?;
    policy.set_params(&params.policy)?;
    Ok((manifest, policy))
}

pub const SWEEP_REPORT_FILE: &str = "sweep.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const STOCHASTIC_HISTOGRAM_FILE: &str = "histogram_stochastic.csv";

/// Writes the sampling sweep, the ablation and the fully stochastic
/// histogram of a finished run into its directory.
pub fn report(dir: &Path, episodes: usize, ps: &[f64]) -> Result<Vec<PathBuf>> {
    let (manifest, policy) = load_policy(dir)?;
    let mut env = manifest.config.env.build()?;
    let seed = rng::derive_seed(manifest.config.master_seed, "experiment.report", 0);
    let points = reporting::greedy_stochastic_sweep(&policy, env.as_mut(), ps, episodes, seed)?;
    let ablation = reporting::ablate_repetition_head(&policy, env.as_mut(), episodes, seed)?;
    let stochastic = evaluate_policy(&policy, env.as_mut(), episodes, SamplingMode::Stochastic, seed)?;
    let paths = [SWEEP_REPORT_FILE, ABLATION_FILE, STOCHASTIC_HISTOGRAM_FILE].map(|f| dir.join(f));
    reporting::write_sweep_csv(&points, fs::File::create(&paths[0])?)?;
    reporting::write_ablation_csv(&ablation, fs::File::create(&paths[1])?)?;
    reporting::write_histogram_csv(&stochastic.histogram, fs::File::create(&paths[2])?)?;
    Ok(paths.to_vec())
}

/// One row of a variant sweep summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantRow {
    pub variant: String,
    pub algorithm: String,
    pub set_size: usize,
    pub mean_return: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub mean_repetition: f64,
    pub improvement: f64,
    pub oracle_start_value: Option<f64>,
    pub run_dir: String,
}

pub const VARIANT_HEADER: [&str; 10] = [
    "variant",
    "algorithm",
    "set_size",
    "mean_return",
    "ci_lower",
    "ci_upper",
    "mean_repetition",
    "improvement",
    "oracle_start_value",
    "run_dir",
];

pub const SUMMARY_FILE: &str = "summary.csv";

/// Runs the baseline and then every variant with the base hyperparameters.
/// Returns the sweep directory and its rows, baseline first.
pub fn sweep_variants(base: &ExperimentConfig, variants: &[String], output_root: &Path) -> Result<(PathBuf, Vec<VariantRow>)> {
    let base = base.resolved()?;
    for v in variants {
        RepetitionVariant::parse(v)?;
    }
    let root = output_root.join(format!(
        "sweep_{}_{}_{}_{}",
        base.algorithm.trainer_label(),
        base.env.label(),
        base.master_seed,
        unix_seconds()
    ));
    fs::create_dir_all(&root)?;

    let mut baseline_cfg = base.clone();
    baseline_cfg.algorithm = base.algorithm.baseline();
    let mut configs = vec![baseline_cfg];
    for v in variants {
        let mut c = base.clone();
        if c.algorithm.is_baseline() {
            c.algorithm = match c.algorithm.trainer() {
                Trainer::A3c => Algorithm::FigarA3c,
                Trainer::Trpo => Algorithm::FigarTrpo,
                Trainer::Ddpg => Algorithm::FigarDdpg,
            };
        }
        c.repetition_set = v.clone();
        configs.push(c);
    }

    let mut rows: Vec<VariantRow> = Vec::new();
    let mut baseline_score = 0.0;
    for (i, c) in configs.iter().enumerate() {
        let dir = run_to_dir(c, &root)?;
        let m = RunManifest::load(&dir)?;
        if i == 0 {
            baseline_score = m.metrics.mean_return;
        }
        rows.push(VariantRow {
            variant: if i == 0 { "baseline".into() } else { c.repetition_set.clone() },
            algorithm: c.algorithm.name().into(),
            set_size: m.repetition_set.len(),
            mean_return: m.metrics.mean_return,
            ci_lower: m.metrics.ci_lower,
            ci_upper: m.metrics.ci_upper,
            mean_repetition: m.metrics.mean_repetition,
            improvement: reporting::improvement(m.metrics.mean_return, baseline_score).value,
            oracle_start_value: m.metrics.oracle_start_value,
            run_dir: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        });
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(root.join(SUMMARY_FILE))?;
    w.write_record(VARIANT_HEADER)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok((root, rows))
}

impl Algorithm {
    fn trainer_label(self) -> &'static str {
        match self.trainer() {
            Trainer::A3c => "a3c",
            Trainer::Trpo => "trpo",
            Trainer::Ddpg => "ddpg",
        }
    }
}
