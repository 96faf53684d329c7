//! Actor-critic pair (separate policy and value networks) with the clipped
//! PPO objective and its analytic gradient.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adam::{clip_grad_norm, Adam};
use super::dist::{argmax, entropy, masked_log_softmax, sample};
use super::nn::{CellKind, Net, NetSpec, SeqInput};
use crate::env::ObsLayout;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetArch {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub fc_layers: usize,
    pub fc_dim: usize,
    pub cell: CellKind,
    pub cell_size: usize,
}

impl Default for NetArch {
    fn default() -> Self {
        Self::agent()
    }
}

impl NetArch {
    pub fn agent() -> Self {
        Self {
            conv_channels: vec![16, 32],
            kernel: 3,
            fc_layers: 2,
            fc_dim: 128,
            cell: CellKind::Lstm,
            cell_size: 128,
        }
    }

    pub fn planner() -> Self {
        Self {
            fc_dim: 256,
            cell_size: 256,
            ..Self::agent()
        }
    }

    pub fn spec(&self, layout: ObsLayout, outputs: usize, output_init: f64) -> NetSpec {
        NetSpec {
            spatial: [layout.height, layout.width, layout.channels],
            vector: layout.vector,
            conv_channels: self.conv_channels.clone(),
            kernel: self.kernel,
            fc: vec![self.fc_dim; self.fc_layers],
            cell: self.cell,
            hidden: self.cell_size,
            outputs,
            output_init,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub policy: Net,
    pub value: Net,
    /// Action count per independent categorical head.
    pub heads: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    /// `batch * heads.len()`.
    pub actions: Vec<usize>,
    /// Joint log-probability (sum over heads) per actor.
    pub logp: Vec<f64>,
    pub values: Vec<f64>,
    pub policy_state: Vec<f64>,
    pub value_state: Vec<f64>,
    /// Per-actor entropy of the masked distribution (sum over heads).
    pub entropy: Vec<f64>,
}

impl ActorCritic {
    pub fn new(arch: &NetArch, layout: ObsLayout, heads: Vec<usize>, seed: u64) -> Self {
        let total = heads.iter().sum();
        Self {
            policy: Net::new(arch.spec(layout, total, 0.01), seed),
            value: Net::new(arch.spec(layout, 1, 1.0 / (arch.cell_size as f64).sqrt()), seed ^ 0x9e37_79b9_7f4a_7c15),
            heads,
        }
    }

    pub fn total_actions(&self) -> usize {
        self.heads.iter().sum()
    }

    pub fn policy_state_len(&self) -> usize {
        self.policy.spec.state_len()
    }

    pub fn value_state_len(&self) -> usize {
        self.value.spec.state_len()
    }

    /// One step for `batch` actors. `masks` is `batch * total_actions`.
    #[allow(clippy::too_many_arguments)]
    pub fn act<R: Rng + ?Sized>(
        &self,
        batch: usize,
        spatial: &[f64],
        vector: &[f64],
        masks: &[bool],
        policy_state: &[f64],
        value_state: &[f64],
        greedy: bool,
        rng: &mut R,
    ) -> ActOutput {
        let input = |state| SeqInput {
            batch,
            steps: 1,
            spatial,
            vector,
            state,
        };
        let pf = self.policy.forward(input(policy_state));
        let vf = self.value.forward(input(value_state));
        let total = self.total_actions();
        let nh = self.heads.len();
        let mut actions = vec![0; batch * nh];
        let mut logp = vec![0.0; batch];
        let mut ent = vec![0.0; batch];
        let mut lp = vec![0.0; total];
        for b in 0..batch {
            let logits = pf.out.row(b);
            let logits = logits.as_slice().expect("contiguous");
            let mut off = 0;
            for (h, &k) in self.heads.iter().enumerate() {
                let range = off..off + k;
                masked_log_softmax(&logits[range.clone()], &masks[b * total + off..b * total + off + k], &mut lp[range.clone()]);
                let a = if greedy { argmax(&lp[range.clone()]) } else { sample(&lp[range.clone()], rng) };
                actions[b * nh + h] = a;
                logp[b] += lp[off + a];
                ent[b] += entropy(&lp[range]);
                off += k;
            }
        }
        ActOutput {
            actions,
            logp,
            values: vf.out.column(0).to_vec(),
            policy_state: pf.final_state,
            value_state: vf.final_state,
            entropy: ent,
        }
    }

    /// State values only (used to bootstrap a truncated segment).
    pub fn values(&self, batch: usize, spatial: &[f64], vector: &[f64], value_state: &[f64]) -> Vec<f64> {
        let vf = self.value.forward(SeqInput {
            batch,
            steps: 1,
            spatial,
            vector,
            state: value_state,
        });
        vf.out.column(0).to_vec()
    }
}

/// Training sequences with the recurrent states stored at their starts.
/// Per-frame arrays are ordered `b * steps + t`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeqBatch {
    pub batch: usize,
    pub steps: usize,
    pub spatial: Vec<f64>,
    pub vector: Vec<f64>,
    pub masks: Vec<bool>,
    pub actions: Vec<usize>,
    pub old_logp: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub policy_state: Vec<f64>,
    pub value_state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoParams {
    pub clip: f64,
    pub vf_coeff: f64,
    pub entropy_coeff: f64,
    pub lr: f64,
    pub grad_clip: f64,
}

impl PpoParams {
    pub fn agent() -> Self {
        Self {
            clip: 0.2,
            vf_coeff: 0.05,
            entropy_coeff: 0.025,
            lr: 3e-4,
            grad_clip: 10.0,
        }
    }

    pub fn planner() -> Self {
        Self {
            entropy_coeff: 0.1,
            lr: 1e-4,
            ..Self::agent()
        }
    }
}

impl Default for PpoParams {
    fn default() -> Self {
        Self::agent()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub policy_grad_norm: f64,
    pub value_grad_norm: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("non-finite loss ({0:?})")]
    NonFinite(LossStats),
}

pub struct PpoGradients {
    pub stats: LossStats,
    pub policy: Vec<f64>,
    pub value: Vec<f64>,
    /// `d loss / d logits`, `[frames, total_actions]`.
    pub d_logits: Array2<f64>,
}

/// Clipped-surrogate loss `-mean(min(rA, clip(r)A)) + c_v mean((V - R)^2)
/// - c_e mean(H)` and, when requested, its gradient with respect to both
/// networks' parameters.
pub fn ppo_loss(ac: &ActorCritic, b: &SeqBatch, p: &PpoParams, with_grad: bool) -> PpoGradients {
    fn input<'a>(b: &'a SeqBatch, state: &'a [f64]) -> SeqInput<'a> {
        SeqInput {
            batch: b.batch,
            steps: b.steps,
            spatial: &b.spatial,
            vector: &b.vector,
            state,
        }
    }
    let pf = ac.policy.forward(input(b, &b.policy_state));
    let vf = ac.value.forward(input(b, &b.value_state));
    let n = b.batch * b.steps;
    let nf = n as f64;
    let total = ac.total_actions();
    let nh = ac.heads.len();

    let mut d_logits = Array2::zeros((n, total));
    let mut d_values = Array2::zeros((n, 1));
    let mut st = LossStats::default();
    let mut lp = vec![0.0; total];
    for i in 0..n {
        let logits = pf.out.row(i);
        let logits = logits.as_slice().expect("contiguous");
        let mask = &b.masks[i * total..(i + 1) * total];
        let mut off = 0;
        let mut logp = 0.0;
        let mut ent = 0.0;
        for (h, &k) in ac.heads.iter().enumerate() {
            masked_log_softmax(&logits[off..off + k], &mask[off..off + k], &mut lp[off..off + k]);
            logp += lp[off + b.actions[i * nh + h]];
            ent += entropy(&lp[off..off + k]);
            off += k;
        }
        let adv = b.advantages[i];
        let log_ratio = logp - b.old_logp[i];
        let ratio = log_ratio.exp();
        let clipped = ratio.clamp(1.0 - p.clip, 1.0 + p.clip);
        let surr = (ratio * adv).min(clipped * adv);
        // the unclipped branch carries the gradient unless clipping binds
        let active = !((adv >= 0.0 && ratio > 1.0 + p.clip) || (adv < 0.0 && ratio < 1.0 - p.clip));
        if !active {
            st.clip_fraction += 1.0;
        }
        st.policy_loss -= surr;
        st.entropy += ent;
        st.approx_kl += (ratio - 1.0) - log_ratio;
        let v = vf.out[[i, 0]];
        let err = v - b.returns[i];
        st.value_loss += err * err;

        if with_grad {
            let g_surr = if active { ratio * adv } else { 0.0 };
            let mut off = 0;
            for (h, &k) in ac.heads.iter().enumerate() {
                let a = b.actions[i * nh + h];
                let head_ent = entropy(&lp[off..off + k]);
                for j in 0..k {
                    let l = lp[off + j];
                    if !l.is_finite() {
                        continue;
                    }
                    let pj = l.exp();
                    let onehot = if j == a { 1.0 } else { 0.0 };
                    d_logits[[i, off + j]] =
                        (-g_surr * (onehot - pj) + p.entropy_coeff * pj * (l + head_ent)) / nf;
                }
                off += k;
            }
            d_values[[i, 0]] = 2.0 * p.vf_coeff * err / nf;
        }
    }
    st.policy_loss /= nf;
    st.value_loss /= nf;
    st.entropy /= nf;
    st.approx_kl /= nf;
    st.clip_fraction /= nf;
    st.total = st.policy_loss + p.vf_coeff * st.value_loss - p.entropy_coeff * st.entropy;

    let mut gp = Vec::new();
    let mut gv = Vec::new();
    if with_grad {
        gp = vec![0.0; ac.policy.param_count()];
        gv = vec![0.0; ac.value.param_count()];
        ac.policy.backward(&pf, &d_logits, &mut gp);
        ac.value.backward(&vf, &d_values, &mut gv);
    }
    PpoGradients {
        stats: st,
        policy: gp,
        value: gv,
        d_logits,
    }
}

/// Actor-critic with its two optimizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub model: ActorCritic,
    pub params: PpoParams,
    policy_opt: Adam,
    value_opt: Adam,
}

impl Learner {
    pub fn new(model: ActorCritic, params: PpoParams) -> Self {
        Self {
            policy_opt: Adam::new(model.policy.param_count(), params.lr),
            value_opt: Adam::new(model.value.param_count(), params.lr),
            model,
            params,
        }
    }

    /// One gradient step on a minibatch. Each network's gradient is clipped
    /// to the configured global norm. A non-finite loss leaves the
    /// parameters untouched.
    pub fn update(&mut self, batch: &SeqBatch) -> Result<LossStats, LearnError> {
        let mut g = ppo_loss(&self.model, batch, &self.params, true);
        let finite = g.stats.total.is_finite()
            && g.policy.iter().all(|v| v.is_finite())
            && g.value.iter().all(|v| v.is_finite());
        if !finite {
            return Err(LearnError::NonFinite(g.stats));
        }
        g.stats.policy_grad_norm = clip_grad_norm(&mut g.policy, self.params.grad_clip);
        g.stats.value_grad_norm = clip_grad_norm(&mut g.value, self.params.grad_clip);
        self.policy_opt.step(&mut self.model.policy.params, &g.policy);
        self.value_opt.step(&mut self.model.value.params, &g.value);
        Ok(g.stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(heads: Vec<usize>) -> ActorCritic {
        let arch = NetArch {
            conv_channels: vec![2],
            kernel: 2,
            fc_layers: 1,
            fc_dim: 5,
            cell: CellKind::Gru,
            cell_size: 4,
        };
        let layout = ObsLayout {
            height: 3,
            width: 3,
            channels: 2,
            vector: 2,
        };
        ActorCritic::new(&arch, layout, heads, 4)
    }

    #[test]
    fn initial_policy_is_near_uniform() {
        let ac = tiny(vec![5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sp = vec![0.3; 18];
        let v = vec![0.1, -0.2];
        let mut counts = [0usize; 5];
        let ps = ac.policy.zero_state(1);
        let vs = ac.value.zero_state(1);
        let n = 10_000;
        for _ in 0..n {
            let out = ac.act(1, &sp, &v, &[true; 5], &ps, &vs, false, &mut rng);
            counts[out.actions[0]] += 1;
        }
        let p = 0.2;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma + 0.02 * n as f64 * p, "{counts:?}");
        }
    }

    #[test]
    fn zero_advantages_give_zero_policy_gradient() {
        let ac = tiny(vec![3, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 4;
        let b = SeqBatch {
            batch: 2,
            steps: 2,
            spatial: (0..n * 18).map(|_| rng.random_range(-1.0..1.0)).collect(),
            vector: (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect(),
            masks: vec![true; n * 5],
            actions: vec![0, 1, 2, 0, 1, 1, 0, 0],
            old_logp: vec![-1.5; n],
            advantages: vec![0.0; n],
            returns: vec![1.0; n],
            policy_state: ac.policy.zero_state(2),
            value_state: ac.value.zero_state(2),
        };
        let params = PpoParams {
            entropy_coeff: 0.0,
            ..PpoParams::agent()
        };
        let g = ppo_loss(&ac, &b, &params, true);
        assert!(g.policy.iter().all(|&x| x == 0.0));
        assert!(g.value.iter().any(|&x| x != 0.0));
    }
}
