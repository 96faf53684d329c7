//! Experiment plumbing: configuration, treatment wiring, training drivers,
//! evaluation runs, replays and the analyses run over them.

mod analysis;
mod export;
mod replay;

pub use analysis::{
    exclude_low_productivity, paired_ttest, paired_ttest_diffs, per_skill_breakdown, tax_gaming_report,
    AnalysisError, SkillRow, TTest, TaxGamingReport, HUMAN_MIN_PRODUCTIVITY,
};
pub use export::{export_metrics, write_breakdown_csv, write_tick_series, write_training_csv, ExportError, SUMMARY_HEADER, TRAINING_HEADER};
pub use replay::{
    read_replay, replay_actions, verify_replay, write_replay, EpisodeReplay, ReplayError, ReplayHeader, TickRecord,
    REPLAY_VERSION,
};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{Env, EnvConfig, EnvError, TaxController, AGENT_ACTIONS};
use crate::learn::{ActorCritic, Checkpoint, CheckpointError, CheckpointInfo, IterStats, TrainConfig, TrainError, Trainer};
use crate::metrics::{self, WelfareWeights};
use crate::tax::{fixed_schedule, FixedScheduleName, SaezConfig, SaezController, TaxError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown treatment {0:?}")]
    UnknownTreatment(String),
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("the learned treatment needs a checkpoint with a planner model")]
    MissingCheckpoint,
    #[error("checkpoint was trained under config {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Tax(#[from] TaxError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Tax models compared in experiments. `RandomRates` is the control used to
/// check that the learned planner does better than chance.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    Free,
    UsFederal,
    Saez,
    Learned,
    Camelback,
    RandomRates,
}

impl Treatment {
    pub const ALL: [Treatment; 6] = [
        Treatment::Free,
        Treatment::UsFederal,
        Treatment::Saez,
        Treatment::Learned,
        Treatment::Camelback,
        Treatment::RandomRates,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Treatment::Free => "free",
            Treatment::UsFederal => "us_federal",
            Treatment::Saez => "saez",
            Treatment::Learned => "learned",
            Treatment::Camelback => "camelback",
            Treatment::RandomRates => "random_rates",
        }
    }

    pub fn is_taxed(self) -> bool {
        self != Treatment::Free
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Treatment {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Treatment::ALL
            .into_iter()
            .find(|t| t.name() == s.replace('-', "_"))
            .ok_or_else(|| ExperimentError::UnknownTreatment(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub treatment: Treatment,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Evaluation episodes per seed.
    pub eval_episodes: usize,
    /// Act by argmax instead of sampling during evaluation.
    pub greedy: bool,
    pub welfare_weights: WelfareWeights,
    /// Drop evaluation episodes below this productivity (human-mode cleaning).
    pub min_productivity: Option<f64>,
    /// Required for the camelback treatment; one rate per bracket.
    pub camelback_rates: Option<Vec<f64>>,
    pub saez: SaezConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            treatment: Treatment::Free,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            eval_episodes: 10,
            greedy: false,
            welfare_weights: WelfareWeights::InverseIncome,
            min_productivity: None,
            camelback_rates: None,
            saez: SaezConfig::default(),
            env: EnvConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = toml::from_str(&text).map_err(|source| ExperimentError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::NoSeeds);
        }
        self.env.validate()?;
        self.train.validate(&self.env)?;
        self.controller()?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the environment and training
    /// settings (the parts that determine what a checkpoint means).
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(&(&self.env, &self.train)).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn controller(&self) -> Result<TaxController, ExperimentError> {
        self.controller_for(self.treatment)
    }

    pub fn controller_for(&self, treatment: Treatment) -> Result<TaxController, ExperimentError> {
        let edges = &self.env.tax_cutoffs;
        Ok(match treatment {
            Treatment::Free => TaxController::Free,
            Treatment::UsFederal => TaxController::Fixed(fixed_schedule(FixedScheduleName::UsFederal, edges, None)?),
            Treatment::Camelback => TaxController::Fixed(fixed_schedule(
                FixedScheduleName::Camelback,
                edges,
                self.camelback_rates.as_deref(),
            )?),
            Treatment::Saez => TaxController::Saez(Box::new(SaezController::new(self.saez.clone()))),
            Treatment::Learned => TaxController::Planner,
            Treatment::RandomRates => TaxController::RandomRates,
        })
    }

    pub fn with_treatment(&self, treatment: Treatment) -> Self {
        Self {
            treatment,
            ..self.clone()
        }
    }
}

fn checkpoint_of(trainer: &Trainer, cfg: &ExperimentConfig, seed: u64) -> Checkpoint {
    Checkpoint {
        info: CheckpointInfo {
            config_hash: cfg.config_hash(),
            phase: trainer.phase,
            iteration: trainer.iteration,
            samples: trainer.samples,
            seed,
        },
        agents: trainer.agents.model.clone(),
        planner: trainer.planner.as_ref().map(|p| p.model.clone()),
    }
}

/// Phase one: agents learn in a free market.
pub fn train_phase1(
    cfg: &ExperimentConfig,
    seed: u64,
    on_iter: impl FnMut(&IterStats),
) -> Result<(Checkpoint, Vec<IterStats>), ExperimentError> {
    let mut trainer = Trainer::new(cfg.env.clone(), cfg.train.clone(), TaxController::Free, None, 1, seed)?;
    let history = trainer.run(on_iter)?;
    Ok((checkpoint_of(&trainer, cfg, seed), history))
}

/// Phase two: resume the phase-one agents under the configured treatment,
/// with the rate cap annealed in (and a planner trained jointly for the
/// learned treatment).
pub fn train_phase2(
    cfg: &ExperimentConfig,
    phase1: &Checkpoint,
    seed: u64,
    on_iter: impl FnMut(&IterStats),
) -> Result<(Checkpoint, Vec<IterStats>), ExperimentError> {
    let expected = cfg.config_hash();
    if phase1.info.config_hash != expected {
        return Err(ExperimentError::ConfigMismatch {
            expected,
            found: phase1.info.config_hash.clone(),
        });
    }
    let mut trainer = Trainer::new(
        cfg.env.clone(),
        cfg.train.clone(),
        cfg.controller()?,
        Some(phase1.agents.clone()),
        2,
        seed,
    )?;
    let history = trainer.run(on_iter)?;
    Ok((checkpoint_of(&trainer, cfg, seed), history))
}

/// Outcome metrics of one evaluation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub treatment: Treatment,
    pub seed: u64,
    pub episode: usize,
    pub productivity: f64,
    pub equality: f64,
    pub eq_times_prod: f64,
    pub weighted_swf: f64,
    pub total_tax: f64,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub mean: f64,
    /// Unbiased sample variance (0 for fewer than two values).
    pub variance: f64,
}

impl MeanVar {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        if xs.is_empty() {
            return Self { mean: f64::NAN, variance: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let variance = if xs.len() < 2 {
            0.0
        } else {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        };
        Self { mean, variance }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub treatment: Treatment,
    pub episodes: Vec<EpisodeMetrics>,
    /// Episodes dropped by the productivity filter.
    pub excluded: usize,
    pub productivity: MeanVar,
    pub equality: MeanVar,
    pub eq_times_prod: MeanVar,
    pub weighted_swf: MeanVar,
}

impl EvalSummary {
    pub fn from_episodes(treatment: Treatment, episodes: Vec<EpisodeMetrics>, excluded: usize) -> Self {
        Self {
            treatment,
            productivity: MeanVar::of(episodes.iter().map(|e| e.productivity)),
            equality: MeanVar::of(episodes.iter().map(|e| e.equality)),
            eq_times_prod: MeanVar::of(episodes.iter().map(|e| e.eq_times_prod)),
            weighted_swf: MeanVar::of(episodes.iter().map(|e| e.weighted_swf)),
            episodes,
            excluded,
        }
    }
}

pub struct EvalRun {
    pub summary: EvalSummary,
    pub replays: Vec<EpisodeReplay>,
}

/// Stateful policy over one episode: agent and planner recurrent states.
pub struct ModelPolicy<'a> {
    agents: &'a ActorCritic,
    planner: Option<&'a ActorCritic>,
    greedy: bool,
    state: [Vec<f64>; 4],
}

impl<'a> ModelPolicy<'a> {
    pub fn new(agents: &'a ActorCritic, planner: Option<&'a ActorCritic>, n_agents: usize, greedy: bool) -> Self {
        let state = [
            agents.policy.zero_state(n_agents),
            agents.value.zero_state(n_agents),
            planner.map(|p| p.policy.zero_state(1)).unwrap_or_default(),
            planner.map(|p| p.value.zero_state(1)).unwrap_or_default(),
        ];
        Self { agents, planner, greedy, state }
    }

    pub fn act<R: Rng + ?Sized>(&mut self, env: &Env, rng: &mut R) -> (Vec<usize>, Option<Vec<usize>>) {
        let n = env.config().n_agents;
        let (mut spatial, mut vector, mut masks) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            let o = env.agent_obs(i);
            spatial.extend(o.spatial);
            vector.extend(o.vector);
            masks.extend(env.agent_mask(i));
        }
        let [ps, vs, pps, pvs] = &mut self.state;
        let out = self.agents.act(n, &spatial, &vector, &masks, ps, vs, self.greedy, rng);
        *ps = out.policy_state;
        *vs = out.value_state;
        let planner = match self.planner.filter(|_| env.controller().uses_planner()) {
            Some(p) => {
                let o = env.planner_obs();
                let mk: Vec<bool> = env.planner_mask().into_iter().flatten().collect();
                let po = p.act(1, &o.spatial, &o.vector, &mk, pps, pvs, self.greedy, rng);
                *pps = po.policy_state;
                *pvs = po.value_state;
                Some(po.actions)
            }
            None => None,
        };
        (out.actions, planner)
    }
}

const POLICY_STREAM: u64 = 0x5eed_0f_a11;

/// Evaluate a treatment: for every seed, `eval_episodes` consecutive
/// episodes in one environment (so a Saez controller keeps its elasticity
/// buffer across them). Seeds run in parallel; results are deterministic.
pub fn run_eval(cfg: &ExperimentConfig, checkpoint: Option<&Checkpoint>) -> Result<EvalRun, ExperimentError> {
    cfg.validate()?;
    let planner = match (cfg.treatment, checkpoint) {
        (Treatment::Learned, Some(Checkpoint { planner: Some(p), .. })) => Some(p),
        (Treatment::Learned, _) => return Err(ExperimentError::MissingCheckpoint),
        _ => None,
    };
    let hash = cfg.config_hash();
    let per_seed: Vec<Result<Vec<(EpisodeMetrics, EpisodeReplay)>, ExperimentError>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut seeds = ChaCha8Rng::seed_from_u64(seed);
            let mut env = Env::new(cfg.env.clone(), cfg.controller()?, seeds.random())?;
            let fresh;
            let agents = match checkpoint {
                Some(c) => &c.agents,
                None => {
                    fresh = ActorCritic::new(&cfg.train.agent_arch, env.agent_layout(), vec![AGENT_ACTIONS], seed);
                    &fresh
                }
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ POLICY_STREAM);
            let mut out = Vec::with_capacity(cfg.eval_episodes);
            for episode in 0..cfg.eval_episodes {
                let episode_seed = seeds.random();
                env.reset(episode_seed)?;
                let header = ReplayHeader::new(&env, &hash, episode_seed, cfg.treatment);
                let mut policy = ModelPolicy::new(agents, planner, cfg.env.n_agents, cfg.greedy);
                let rep = EpisodeReplay::record(&mut env, header, |e| policy.act(e, &mut rng));
                out.push((episode_metrics(cfg, seed, episode, &rep), rep));
            }
            Ok(out)
        })
        .collect();

    let mut episodes = Vec::new();
    let mut replays = Vec::new();
    for r in per_seed {
        for (m, rep) in r? {
            episodes.push(m);
            replays.push(rep);
        }
    }
    let before = episodes.len();
    let episodes = match cfg.min_productivity {
        Some(min) => exclude_low_productivity(episodes, min),
        None => episodes,
    };
    let excluded = before - episodes.len();
    Ok(EvalRun {
        summary: EvalSummary::from_episodes(cfg.treatment, episodes, excluded),
        replays,
    })
}

fn episode_metrics(cfg: &ExperimentConfig, seed: u64, episode: usize, rep: &EpisodeReplay) -> EpisodeMetrics {
    let s = &rep.summary;
    EpisodeMetrics {
        treatment: cfg.treatment,
        seed,
        episode,
        productivity: s.productivity,
        equality: s.equality,
        eq_times_prod: s.eq_times_prod,
        weighted_swf: metrics::swf_weighted(&s.coin, &s.labor, cfg.welfare_weights, cfg.env.eta),
        total_tax: s.total_tax,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.env.horizon = 40;
        cfg.env.tax_period = 10;
        cfg.train.horizon = 40;
        cfg.train.seq_len = 10;
        cfg.train.agent_arch.conv_channels = vec![2];
        cfg.train.agent_arch.fc_dim = 8;
        cfg.train.agent_arch.cell_size = 8;
        cfg.eval_episodes = 2;
        cfg.seeds = vec![3, 4];
        cfg
    }

    #[test]
    fn treatment_names_round_trip() {
        for t in Treatment::ALL {
            assert_eq!(t.name().parse::<Treatment>().unwrap(), t);
        }
        assert_eq!("us-federal".parse::<Treatment>().unwrap(), Treatment::UsFederal);
        assert!(matches!("flat".parse::<Treatment>(), Err(ExperimentError::UnknownTreatment(_))));
    }

    #[test]
    fn config_parses_and_rejects_unknown_keys() {
        let cfg = ExperimentConfig::from_toml("treatment = \"saez\"\nseeds = [1, 2]\n[env]\nhorizon = 500\ntax_period = 50\n")
            .unwrap();
        assert_eq!(cfg.treatment, Treatment::Saez);
        assert_eq!(cfg.env.horizon, 500);
        assert!(ExperimentConfig::from_toml("treatmnet = \"saez\"").is_err());
        assert!(ExperimentConfig::from_toml("treatment = \"flat\"").is_err());
        assert!(matches!(ExperimentConfig::from_toml("seeds = []"), Err(ExperimentError::NoSeeds)));
        assert!(matches!(
            ExperimentConfig::from_toml("treatment = \"camelback\""),
            Err(ExperimentError::Tax(TaxError::CamelbackRatesRequired))
        ));
    }

    #[test]
    fn config_hash_tracks_env_and_training_settings() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.treatment = Treatment::Saez;
        b.seeds = vec![9];
        assert_eq!(a.config_hash(), b.config_hash());
        b.env.horizon = 2000;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn learned_eval_needs_a_checkpoint() {
        let cfg = tiny().with_treatment(Treatment::Learned);
        assert!(matches!(run_eval(&cfg, None), Err(ExperimentError::MissingCheckpoint)));
    }

    #[test]
    fn free_eval_collects_no_tax_and_is_consistent() {
        let run = run_eval(&tiny(), None).unwrap();
        assert_eq!(run.summary.episodes.len(), 4);
        assert_eq!(run.replays.len(), 4);
        for (m, rep) in run.summary.episodes.iter().zip(&run.replays) {
            assert_eq!(m.total_tax, 0.0);
            assert_eq!(m.eq_times_prod, m.equality * m.productivity);
            for t in &rep.ticks {
                if let Some(l) = &t.info.settlement {
                    assert!(l.taxes.iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let cfg = tiny().with_treatment(Treatment::RandomRates);
        let a = run_eval(&cfg, None).unwrap();
        let b = run_eval(&cfg, None).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.replays, b.replays);
    }

    #[test]
    fn short_training_round_trip() {
        let mut cfg = tiny();
        cfg.train.replicas = 2;
        cfg.train.agent_minibatch = 80;
        cfg.train.agent_updates = 1;
        cfg.train.planner_minibatch = 20;
        cfg.train.planner_updates = 1;
        cfg.train.phase1_samples = 80;
        cfg.train.phase2_samples = 80;
        cfg.train.planner_arch = cfg.train.agent_arch.clone();
        let (p1, h1) = train_phase1(&cfg, 1, |_| {}).unwrap();
        assert_eq!(p1.info.phase, 1);
        assert_eq!(h1.len(), 1);
        let learned = cfg.with_treatment(Treatment::Learned);
        let (p2, _) = train_phase2(&learned, &p1, 1, |_| {}).unwrap();
        assert!(p2.planner.is_some());
        let run = run_eval(&learned, Some(&p2)).unwrap();
        assert_eq!(run.summary.episodes.len(), 4);

        let mut other = cfg.clone();
        other.env.horizon = 80;
        assert!(matches!(
            train_phase2(&other, &p1, 1, |_| {}),
            Err(ExperimentError::ConfigMismatch { .. })
        ));
    }
}
