//! Two-level PPO training loop: agents (shared weights) and, when the tax
//! controller is the learned planner, the planner policy are updated
//! together after every sampling horizon.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::gae::gae;
use super::ppo::{ActorCritic, LearnError, Learner, LossStats, NetArch, PpoParams, SeqBatch};
use crate::env::{Env, EnvConfig, EnvError, StepOutcome, TaxController, AGENT_ACTIONS, PLANNER_HEAD_ACTIONS};
use crate::metrics;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub replicas: usize,
    /// Environment steps per replica between updates.
    pub horizon: usize,
    pub seq_len: usize,
    /// Transitions per minibatch.
    pub agent_minibatch: usize,
    pub planner_minibatch: usize,
    pub agent_updates: usize,
    pub planner_updates: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub agent_ppo: PpoParams,
    pub planner_ppo: PpoParams,
    pub agent_arch: NetArch,
    pub planner_arch: NetArch,
    /// Budgets in environment steps summed over replicas.
    pub phase1_samples: u64,
    pub phase2_samples: u64,
    pub anneal_samples: u64,
    pub initial_rate_cap: f64,
    /// Stop a phase after this many iterations without a new best mean
    /// episode reward.
    pub patience: Option<usize>,
    pub standardize_advantages: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            replicas: 60,
            horizon: 200,
            seq_len: 50,
            agent_minibatch: 3000,
            planner_minibatch: 3000,
            agent_updates: 16,
            planner_updates: 4,
            gamma: 0.998,
            gae_lambda: 0.98,
            agent_ppo: PpoParams::agent(),
            planner_ppo: PpoParams::planner(),
            agent_arch: NetArch::agent(),
            planner_arch: NetArch::planner(),
            // paper budgets of 50M / 400M / 54M steps scaled down 100x
            phase1_samples: 500_000,
            phase2_samples: 4_000_000,
            anneal_samples: 540_000,
            initial_rate_cap: 0.1,
            patience: None,
            standardize_advantages: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("diverged at iteration {iteration}: {source}")]
    Diverged {
        iteration: usize,
        #[source]
        source: LearnError,
    },
    #[error("observation layout does not match the model")]
    ModelMismatch,
}

impl TrainConfig {
    pub fn validate(&self, env: &EnvConfig) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.replicas == 0 || self.horizon == 0 || self.seq_len == 0 {
            return bad("replicas, horizon and sequence length must be positive");
        }
        if self.horizon % self.seq_len != 0 || env.horizon % self.seq_len != 0 {
            return bad("the sequence length must divide both the sampling horizon and the episode length");
        }
        if !(0.0..=1.0).contains(&self.initial_rate_cap) {
            return bad("initial rate cap outside [0, 1]");
        }
        Ok(())
    }

    /// Linear rate-cap schedule over phase-two samples.
    pub fn rate_cap(&self, phase2_samples: u64) -> f64 {
        if self.anneal_samples == 0 {
            return 1.0;
        }
        let frac = (phase2_samples as f64 / self.anneal_samples as f64).min(1.0);
        self.initial_rate_cap + (1.0 - self.initial_rate_cap) * frac
    }
}

/// End-of-episode outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub utility: Vec<f64>,
    pub coin: Vec<f64>,
    pub labor: Vec<f64>,
    pub building_skill: Vec<f64>,
    pub productivity: f64,
    pub equality: f64,
    pub eq_times_prod: f64,
    pub total_tax: f64,
}

impl EpisodeSummary {
    pub fn of(env: &Env) -> Self {
        let coin = env.coin();
        Self {
            utility: env.utilities(),
            labor: env.labor(),
            building_skill: env.world().agents.iter().map(|a| a.building_skill).collect(),
            productivity: metrics::productivity(&coin),
            equality: metrics::equality(&coin),
            eq_times_prod: metrics::swf_eq_times_prod(&coin),
            total_tax: env.ledgers().iter().flat_map(|l| &l.taxes).sum(),
            coin,
        }
    }

    pub fn mean_utility(&self) -> f64 {
        self.utility.iter().sum::<f64>() / self.utility.len() as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterStats {
    pub iteration: usize,
    pub phase: u8,
    pub samples: u64,
    pub rate_cap: f64,
    pub mean_agent_reward: f64,
    pub mean_planner_reward: f64,
    pub episodes: usize,
    /// Per agent index, over episodes completed this iteration (NaN if none).
    pub mean_utility: Vec<f64>,
    pub mean_eq_times_prod: f64,
    pub agent: LossStats,
    pub planner: Option<LossStats>,
}

#[derive(Clone, Debug, Default)]
struct Traj {
    spatial: Vec<f32>,
    vector: Vec<f64>,
    masks: Vec<bool>,
    actions: Vec<usize>,
    logp: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    chunk_states: Vec<(Vec<f64>, Vec<f64>)>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

impl Traj {
    fn clear(&mut self) {
        *self = Traj::default();
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub env_cfg: EnvConfig,
    envs: Vec<Env>,
    pub agents: Learner,
    pub planner: Option<Learner>,
    pub train_agents: bool,
    anneal: bool,
    agent_pstate: Vec<f64>,
    agent_vstate: Vec<f64>,
    planner_pstate: Vec<f64>,
    planner_vstate: Vec<f64>,
    rng: ChaCha8Rng,
    pub samples: u64,
    pub iteration: usize,
    pub phase: u8,
    phase_samples: u64,
    pub completed: Vec<EpisodeSummary>,
    agent_trajs: Vec<Traj>,
    planner_trajs: Vec<Traj>,
}

impl Trainer {
    /// `agents` resumes from an existing model (phase two); otherwise a new
    /// one is initialized from the seed. A learned planner is created when
    /// the controller asks for one.
    pub fn new(
        env_cfg: EnvConfig,
        cfg: TrainConfig,
        controller: TaxController,
        agents: Option<ActorCritic>,
        phase: u8,
        seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate(&env_cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let envs = (0..cfg.replicas)
            .map(|_| Env::new(env_cfg.clone(), controller.clone(), rng.random()))
            .collect::<Result<Vec<_>, _>>()?;
        let a_layout = envs[0].agent_layout();
        let p_layout = envs[0].planner_layout();
        let agent_model = match agents {
            Some(m) => {
                let spec = &m.policy.spec;
                if spec.vector != a_layout.vector || spec.spatial != [a_layout.height, a_layout.width, a_layout.channels] {
                    return Err(TrainError::ModelMismatch);
                }
                m
            }
            None => ActorCritic::new(&cfg.agent_arch, a_layout, vec![AGENT_ACTIONS], rng.random()),
        };
        let planner = controller.uses_planner().then(|| {
            let heads = vec![PLANNER_HEAD_ACTIONS; env_cfg.brackets()];
            Learner::new(
                ActorCritic::new(&cfg.planner_arch, p_layout, heads, rng.random()),
                cfg.planner_ppo.clone(),
            )
        });
        let n = env_cfg.n_agents;
        let r = cfg.replicas;
        let agent_pstate = vec![0.0; r * n * agent_model.policy_state_len()];
        let agent_vstate = vec![0.0; r * n * agent_model.value_state_len()];
        let (planner_pstate, planner_vstate) = match &planner {
            Some(p) => (
                vec![0.0; r * p.model.policy_state_len()],
                vec![0.0; r * p.model.value_state_len()],
            ),
            None => (Vec::new(), Vec::new()),
        };
        let anneal = phase == 2;
        let mut t = Self {
            agents: Learner::new(agent_model, cfg.agent_ppo.clone()),
            planner,
            train_agents: true,
            anneal,
            agent_pstate,
            agent_vstate,
            planner_pstate,
            planner_vstate,
            rng,
            samples: 0,
            iteration: 0,
            phase,
            phase_samples: 0,
            completed: Vec::new(),
            agent_trajs: vec![Traj::default(); r * n],
            planner_trajs: vec![Traj::default(); r],
            envs,
            env_cfg,
            cfg,
        };
        t.apply_rate_cap();
        Ok(t)
    }

    pub fn envs(&self) -> &[Env] {
        &self.envs
    }

    fn budget(&self) -> u64 {
        if self.phase == 1 {
            self.cfg.phase1_samples
        } else {
            self.cfg.phase2_samples
        }
    }

    fn apply_rate_cap(&mut self) {
        let cap = if self.anneal { self.cfg.rate_cap(self.phase_samples) } else { 1.0 };
        for e in &mut self.envs {
            e.set_rate_cap(cap);
        }
    }

    /// Train until the phase budget is spent (or patience runs out),
    /// calling `on_iter` after every iteration.
    pub fn run(&mut self, mut on_iter: impl FnMut(&IterStats)) -> Result<Vec<IterStats>, TrainError> {
        let mut history = Vec::new();
        let mut best = f64::NEG_INFINITY;
        let mut stale = 0;
        while self.phase_samples < self.budget() {
            let st = self.iterate()?;
            on_iter(&st);
            let score = if self.planner.is_some() { st.mean_planner_reward } else { st.mean_agent_reward };
            if score > best {
                best = score;
                stale = 0;
            } else {
                stale += 1;
            }
            history.push(st);
            if self.cfg.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
        Ok(history)
    }

    /// One sampling horizon followed by the PPO updates.
    pub fn iterate(&mut self) -> Result<IterStats, TrainError> {
        self.apply_rate_cap();
        let cap = self.envs[0].rate_cap();
        let first_done = self.completed.len();
        self.rollout();
        let n_steps = (self.cfg.replicas * self.cfg.horizon) as u64;
        self.samples += n_steps;
        self.phase_samples += n_steps;
        self.iteration += 1;
        self.share_saez_observations();

        let mut st = IterStats {
            iteration: self.iteration,
            phase: self.phase,
            samples: self.samples,
            rate_cap: cap,
            ..IterStats::default()
        };
        let nr: usize = self.agent_trajs.iter().map(|t| t.rewards.len()).sum();
        st.mean_agent_reward = self.agent_trajs.iter().flat_map(|t| &t.rewards).sum::<f64>() / nr as f64;
        if self.planner.is_some() {
            let np: usize = self.planner_trajs.iter().map(|t| t.rewards.len()).sum();
            st.mean_planner_reward = self.planner_trajs.iter().flat_map(|t| &t.rewards).sum::<f64>() / np as f64;
        }
        let eps = &self.completed[first_done..];
        st.episodes = eps.len();
        st.mean_utility = (0..self.env_cfg.n_agents)
            .map(|i| eps.iter().map(|e| e.utility[i]).sum::<f64>() / eps.len() as f64)
            .collect();
        st.mean_eq_times_prod = eps.iter().map(|e| e.eq_times_prod).sum::<f64>() / eps.len() as f64;

        let (gamma, lambda, std_adv) = (self.cfg.gamma, self.cfg.gae_lambda, self.cfg.standardize_advantages);
        finish_trajs(&mut self.agent_trajs, gamma, lambda, std_adv);
        if self.train_agents {
            st.agent = update(
                &mut self.agents,
                &self.agent_trajs,
                self.cfg.seq_len,
                self.cfg.agent_minibatch,
                self.cfg.agent_updates,
                &mut self.rng,
            )
            .map_err(|source| TrainError::Diverged {
                iteration: self.iteration,
                source,
            })?;
        }
        if let Some(planner) = &mut self.planner {
            finish_trajs(&mut self.planner_trajs, gamma, lambda, std_adv);
            st.planner = Some(
                update(
                    planner,
                    &self.planner_trajs,
                    self.cfg.seq_len,
                    self.cfg.planner_minibatch,
                    self.cfg.planner_updates,
                    &mut self.rng,
                )
                .map_err(|source| TrainError::Diverged {
                    iteration: self.iteration,
                    source,
                })?,
            );
        }
        Ok(st)
    }

    fn rollout(&mut self) {
        let n = self.env_cfg.n_agents;
        let r = self.cfg.replicas;
        let a_layout = self.envs[0].agent_layout();
        let p_layout = self.envs[0].planner_layout();
        let (asl, avl) = (a_layout.spatial_len(), a_layout.vector);
        let (psl, pvl) = (p_layout.spatial_len(), p_layout.vector);
        let aps = self.agents.model.policy_state_len();
        let avs = self.agents.model.value_state_len();
        for t in &mut self.agent_trajs {
            t.clear();
        }
        for t in &mut self.planner_trajs {
            t.clear();
        }

        for step in 0..self.cfg.horizon {
            if step % self.cfg.seq_len == 0 {
                for (k, tr) in self.agent_trajs.iter_mut().enumerate() {
                    tr.chunk_states.push((
                        self.agent_pstate[k * aps..(k + 1) * aps].to_vec(),
                        self.agent_vstate[k * avs..(k + 1) * avs].to_vec(),
                    ));
                }
                if let Some(p) = &self.planner {
                    let (ps, vs) = (p.model.policy_state_len(), p.model.value_state_len());
                    for (k, tr) in self.planner_trajs.iter_mut().enumerate() {
                        tr.chunk_states.push((
                            self.planner_pstate[k * ps..(k + 1) * ps].to_vec(),
                            self.planner_vstate[k * vs..(k + 1) * vs].to_vec(),
                        ));
                    }
                }
            }

            // agents, batched over replicas
            let mut spatial = Vec::with_capacity(r * n * asl);
            let mut vector = Vec::with_capacity(r * n * avl);
            let mut masks = Vec::with_capacity(r * n * AGENT_ACTIONS);
            for e in &self.envs {
                for i in 0..n {
                    let o = e.agent_obs(i);
                    spatial.extend_from_slice(&o.spatial);
                    vector.extend_from_slice(&o.vector);
                    masks.extend(e.agent_mask(i));
                }
            }
            let out = self.agents.model.act(
                r * n,
                &spatial,
                &vector,
                &masks,
                &self.agent_pstate,
                &self.agent_vstate,
                false,
                &mut self.rng,
            );
            for (k, tr) in self.agent_trajs.iter_mut().enumerate() {
                tr.spatial.extend(spatial[k * asl..(k + 1) * asl].iter().map(|&v| v as f32));
                tr.vector.extend_from_slice(&vector[k * avl..(k + 1) * avl]);
                tr.masks.extend_from_slice(&masks[k * AGENT_ACTIONS..(k + 1) * AGENT_ACTIONS]);
                tr.actions.push(out.actions[k]);
                tr.logp.push(out.logp[k]);
                tr.values.push(out.values[k]);
            }
            self.agent_pstate = out.policy_state;
            self.agent_vstate = out.value_state;

            // planner
            let mut planner_actions: Vec<Option<Vec<usize>>> = vec![None; r];
            if let Some(p) = &self.planner {
                let heads = p.model.heads.len();
                let total = p.model.total_actions();
                let mut sp = Vec::with_capacity(r * psl);
                let mut vc = Vec::with_capacity(r * pvl);
                let mut mk = Vec::with_capacity(r * total);
                for e in &self.envs {
                    let o = e.planner_obs();
                    sp.extend_from_slice(&o.spatial);
                    vc.extend_from_slice(&o.vector);
                    mk.extend(e.planner_mask().into_iter().flatten());
                }
                let po = p.model.act(r, &sp, &vc, &mk, &self.planner_pstate, &self.planner_vstate, false, &mut self.rng);
                for (k, tr) in self.planner_trajs.iter_mut().enumerate() {
                    tr.spatial.extend(sp[k * psl..(k + 1) * psl].iter().map(|&v| v as f32));
                    tr.vector.extend_from_slice(&vc[k * pvl..(k + 1) * pvl]);
                    tr.masks.extend_from_slice(&mk[k * total..(k + 1) * total]);
                    tr.actions.extend_from_slice(&po.actions[k * heads..(k + 1) * heads]);
                    tr.logp.push(po.logp[k]);
                    tr.values.push(po.values[k]);
                    planner_actions[k] = Some(po.actions[k * heads..(k + 1) * heads].to_vec());
                }
                self.planner_pstate = po.policy_state;
                self.planner_vstate = po.value_state;
            }

            let actions = &out.actions;
            let outcomes: Vec<StepOutcome> = self
                .envs
                .par_iter_mut()
                .zip(planner_actions.par_iter())
                .enumerate()
                .map(|(k, (e, pa))| e.step(&actions[k * n..(k + 1) * n], pa.as_deref()))
                .collect();

            for (k, o) in outcomes.iter().enumerate() {
                for i in 0..n {
                    let tr = &mut self.agent_trajs[k * n + i];
                    tr.rewards.push(o.rewards[i]);
                    tr.dones.push(o.done);
                }
                if self.planner.is_some() {
                    let tr = &mut self.planner_trajs[k];
                    tr.rewards.push(o.planner_reward);
                    tr.dones.push(o.done);
                }
                if o.done {
                    self.completed.push(EpisodeSummary::of(&self.envs[k]));
                    let seed = self.rng.random();
                    self.envs[k].reset(seed).expect("configuration validated at construction");
                    self.agent_pstate[k * n * aps..(k + 1) * n * aps].fill(0.0);
                    self.agent_vstate[k * n * avs..(k + 1) * n * avs].fill(0.0);
                    if let Some(p) = &self.planner {
                        let (ps, vs) = (p.model.policy_state_len(), p.model.value_state_len());
                        self.planner_pstate[k * ps..(k + 1) * ps].fill(0.0);
                        self.planner_vstate[k * vs..(k + 1) * vs].fill(0.0);
                    }
                }
            }
        }

        // bootstrap values for segments cut mid-episode
        let mut spatial = Vec::with_capacity(r * n * asl);
        let mut vector = Vec::with_capacity(r * n * avl);
        for e in &self.envs {
            for i in 0..n {
                let o = e.agent_obs(i);
                spatial.extend_from_slice(&o.spatial);
                vector.extend_from_slice(&o.vector);
            }
        }
        let last = self.agents.model.values(r * n, &spatial, &vector, &self.agent_vstate);
        for (tr, v) in self.agent_trajs.iter_mut().zip(last) {
            tr.returns = vec![v];
        }
        if let Some(p) = &self.planner {
            let mut sp = Vec::with_capacity(r * psl);
            let mut vc = Vec::with_capacity(r * pvl);
            for e in &self.envs {
                let o = e.planner_obs();
                sp.extend_from_slice(&o.spatial);
                vc.extend_from_slice(&o.vector);
            }
            let last = p.model.values(r, &sp, &vc, &self.planner_vstate);
            for (tr, v) in self.planner_trajs.iter_mut().zip(last) {
                tr.returns = vec![v];
            }
        }
    }

    /// Pool the period observations of every replica's Saez controller so
    /// all replicas fit on one shared buffer.
    fn share_saez_observations(&mut self) {
        let pending: Vec<Vec<(f64, f64)>> = self
            .envs
            .iter_mut()
            .map(|e| match e.controller_mut() {
                TaxController::Saez(c) => c.take_pending(),
                _ => Vec::new(),
            })
            .collect();
        for (k, e) in self.envs.iter_mut().enumerate() {
            if let TaxController::Saez(c) = e.controller_mut() {
                for (j, pairs) in pending.iter().enumerate() {
                    if j != k {
                        c.buffer.extend(pairs.iter().copied());
                    }
                }
            }
        }
    }
}

/// GAE per trajectory, then optional standardization across all of them.
/// `returns` holds the bootstrap value on entry.
fn finish_trajs(trajs: &mut [Traj], gamma: f64, lambda: f64, standardize: bool) {
    for tr in trajs.iter_mut() {
        let last = tr.returns.first().copied().unwrap_or(0.0);
        let (adv, ret) = gae(&tr.rewards, &tr.values, &tr.dones, last, gamma, lambda);
        tr.advantages = adv;
        tr.returns = ret;
    }
    if standardize {
        let all: Vec<f64> = trajs.iter().flat_map(|t| t.advantages.iter().copied()).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let sd = (all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
        for tr in trajs.iter_mut() {
            tr.advantages.iter_mut().for_each(|a| *a = (*a - mean) / sd);
        }
    }
}

fn gather_batch(trajs: &[Traj], seqs: &[(usize, usize)], seq_len: usize, model: &ActorCritic) -> SeqBatch {
    let heads = model.heads.len();
    let total = model.total_actions();
    let spec = &model.policy.spec;
    let (sl, vl) = (spec.spatial_len(), spec.vector);
    let mut b = SeqBatch {
        batch: seqs.len(),
        steps: seq_len,
        ..SeqBatch::default()
    };
    for &(ti, c) in seqs {
        let tr = &trajs[ti];
        let (lo, hi) = (c * seq_len, (c + 1) * seq_len);
        b.spatial.extend(tr.spatial[lo * sl..hi * sl].iter().map(|&v| f64::from(v)));
        b.vector.extend_from_slice(&tr.vector[lo * vl..hi * vl]);
        b.masks.extend_from_slice(&tr.masks[lo * total..hi * total]);
        b.actions.extend_from_slice(&tr.actions[lo * heads..hi * heads]);
        b.old_logp.extend_from_slice(&tr.logp[lo..hi]);
        b.advantages.extend_from_slice(&tr.advantages[lo..hi]);
        b.returns.extend_from_slice(&tr.returns[lo..hi]);
        b.policy_state.extend_from_slice(&tr.chunk_states[c].0);
        b.value_state.extend_from_slice(&tr.chunk_states[c].1);
    }
    b
}

/// `updates` minibatch steps over a shuffled, cycled list of sequences.
/// Returns the loss statistics averaged over the steps.
fn update<R: Rng + ?Sized>(
    learner: &mut Learner,
    trajs: &[Traj],
    seq_len: usize,
    minibatch: usize,
    updates: usize,
    rng: &mut R,
) -> Result<LossStats, LearnError> {
    let chunks = trajs.first().map_or(0, |t| t.rewards.len() / seq_len);
    let all: Vec<(usize, usize)> = (0..trajs.len()).flat_map(|t| (0..chunks).map(move |c| (t, c))).collect();
    let per_batch = (minibatch / seq_len).clamp(1, all.len().max(1));
    let mut order = all.clone();
    order.shuffle(rng);
    let mut cursor = 0;
    let mut acc = LossStats::default();
    for _ in 0..updates {
        if cursor + per_batch > order.len() {
            order.shuffle(rng);
            cursor = 0;
        }
        let batch = gather_batch(trajs, &order[cursor..cursor + per_batch], seq_len, &learner.model);
        cursor += per_batch;
        let s = learner.update(&batch)?;
        acc.total += s.total;
        acc.policy_loss += s.policy_loss;
        acc.value_loss += s.value_loss;
        acc.entropy += s.entropy;
        acc.approx_kl += s.approx_kl;
        acc.clip_fraction += s.clip_fraction;
        acc.policy_grad_norm += s.policy_grad_norm;
        acc.value_grad_norm += s.value_grad_norm;
    }
    let k = updates.max(1) as f64;
    for v in [
        &mut acc.total,
        &mut acc.policy_loss,
        &mut acc.value_loss,
        &mut acc.entropy,
        &mut acc.approx_kl,
        &mut acc.clip_fraction,
        &mut acc.policy_grad_norm,
        &mut acc.value_grad_norm,
    ] {
        *v /= k;
    }
    Ok(acc)
}

/// Play one episode with the given models (agents always; the planner only
/// when the env's controller is the learned planner). Returns the summary
/// and every step outcome along with the actions taken.
pub struct EpisodeRun {
    pub summary: EpisodeSummary,
    pub agent_actions: Vec<Vec<usize>>,
    pub planner_actions: Vec<Option<Vec<usize>>>,
    pub outcomes: Vec<StepOutcome>,
}

pub fn play_episode<R: Rng + ?Sized>(
    env: &mut Env,
    agents: &ActorCritic,
    planner: Option<&ActorCritic>,
    greedy: bool,
    rng: &mut R,
) -> EpisodeRun {
    let n = env.config().n_agents;
    let mut ps = agents.policy.zero_state(n);
    let mut vs = agents.value.zero_state(n);
    let mut pps = planner.map(|p| p.policy.zero_state(1)).unwrap_or_default();
    let mut pvs = planner.map(|p| p.value.zero_state(1)).unwrap_or_default();
    let mut run = EpisodeRun {
        summary: EpisodeSummary::of(env),
        agent_actions: Vec::new(),
        planner_actions: Vec::new(),
        outcomes: Vec::new(),
    };
    while !env.done() {
        let mut spatial = Vec::new();
        let mut vector = Vec::new();
        let mut masks = Vec::new();
        for i in 0..n {
            let o = env.agent_obs(i);
            spatial.extend(o.spatial);
            vector.extend(o.vector);
            masks.extend(env.agent_mask(i));
        }
        let out = agents.act(n, &spatial, &vector, &masks, &ps, &vs, greedy, rng);
        ps = out.policy_state;
        vs = out.value_state;
        let pa = match planner.filter(|_| env.controller().uses_planner()) {
            Some(p) => {
                let o = env.planner_obs();
                let mk: Vec<bool> = env.planner_mask().into_iter().flatten().collect();
                let po = p.act(1, &o.spatial, &o.vector, &mk, &pps, &pvs, greedy, rng);
                pps = po.policy_state;
                pvs = po.value_state;
                Some(po.actions)
            }
            None => None,
        };
        let outcome = env.step(&out.actions, pa.as_deref());
        run.agent_actions.push(out.actions);
        run.planner_actions.push(pa);
        run.outcomes.push(outcome);
    }
    run.summary = EpisodeSummary::of(env);
    run
}
