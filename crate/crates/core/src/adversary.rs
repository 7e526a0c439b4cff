//! Soft actor-critic adversary.
//!
//! The adversary watches clean observations and picks the acceleration it
//! wants the agent to execute; BIM then turns that choice into an
//! observation perturbation. Its reward is the collision indicator.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attack::{bim_perturb, AttackConfig};
use crate::error::{Error, Result};
use crate::nn::{standard_sizes, Activation, Adam, DeterministicPolicy, GaussianHead, Mlp, SquashedSample, ACTION_BOUND};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{standard_normal, train_episode_seed, Rng};
use crate::sim::{self, adversary_reward, agent_reward, observe, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    /// Entropy temperature (fixed).
    pub alpha: f64,
    /// Polyak factor for the target critics.
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    /// Buffer size before updates start; actions are uniform until then.
    pub warmup: usize,
    pub buffer_capacity: usize,
    /// Gradient steps per environment step once updates begin.
    pub updates_per_step: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.1,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            batch_size: 128,
            warmup: 1000,
            buffer_capacity: 1_000_000,
            updates_per_step: 1,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(self.alpha >= 0.0) || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config("need gamma, tau in [0, 1] and alpha >= 0".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config("batch size must be positive and fit in the buffer".into()));
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.updates_per_step == 0 {
            return Err(Error::Config("updates_per_step must be at least 1".into()));
        }
        Ok(())
    }

    /// Buffer size at which updates begin.
    pub fn update_threshold(&self) -> usize {
        self.warmup.max(self.batch_size)
    }
}

/// Stacks `(obs, action / ACTION_BOUND)` rows for a critic.
pub fn critic_inputs<'a>(obs: impl IntoIterator<Item = &'a [f64]>, actions: &[f64]) -> Array2<f64> {
    let rows: Vec<&[f64]> = obs.into_iter().collect();
    let dim = rows.first().map_or(0, |r| r.len());
    let mut x = Array2::zeros((rows.len(), dim + 1));
    for (i, (row, a)) in rows.iter().zip(actions).enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[[i, j]] = *v;
        }
        x[[i, dim]] = a / ACTION_BOUND;
    }
    x
}

pub fn obs_matrix<'a>(obs: impl IntoIterator<Item = &'a [f64]>) -> Array2<f64> {
    let rows: Vec<&[f64]> = obs.into_iter().collect();
    let dim = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), dim), |(i, j)| rows[i][j])
}

fn heads(out: &Array2<f64>) -> Vec<GaussianHead> {
    out.rows().into_iter().map(|r| GaussianHead::new(r[0], r[1])).collect()
}

fn column(a: &Array2<f64>) -> Vec<f64> {
    a.column(0).to_vec()
}

fn ensure_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

/// Policy, twin soft critics with slow copies, and the state-value net.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryNets {
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub value: Mlp,
    pub alpha: f64,
}

impl AdversaryNets {
    pub fn new(obs_dim: usize, alpha: f64, rng: &mut Rng) -> Result<Self> {
        let mut policy = Mlp::random(&standard_sizes(obs_dim, 2), Activation::Tanh, rng)?;
        policy.scale_output_layer(0.1);
        let q1 = Mlp::random(&standard_sizes(obs_dim + 1, 1), Activation::Tanh, rng)?;
        let q2 = Mlp::random(&standard_sizes(obs_dim + 1, 1), Activation::Tanh, rng)?;
        let value = Mlp::random(&standard_sizes(obs_dim, 1), Activation::Tanh, rng)?;
        Ok(Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            value,
            alpha,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn head(&self, obs: &[f64]) -> Result<GaussianHead> {
        let out = self.policy.forward(obs)?;
        Ok(GaussianHead::new(out[0], out[1]))
    }

    /// Stochastic adversary action.
    pub fn act(&self, obs: &[f64], rng: &mut Rng) -> Result<f64> {
        Ok(self.head(obs)?.sample(standard_normal(rng)).action)
    }

    /// Action for a given standard-normal draw; `noise = 0` is the mean action.
    pub fn act_with_noise(&self, obs: &[f64], noise: f64) -> Result<f64> {
        Ok(self.head(obs)?.sample(noise).action)
    }

    pub fn deterministic_action(&self, obs: &[f64]) -> Result<f64> {
        self.act_with_noise(obs, 0.0)
    }

    /// `min(Q1, Q2)` of the live critics.
    pub fn min_q(&self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let x = critic_inputs(obs.chunks(self.obs_dim()), action);
        let a = self.q1.forward_batch(x.view())?;
        let b = self.q2.forward_batch(x.view())?;
        Ok(a.iter().zip(b.iter()).map(|(p, q)| p.min(*q)).collect())
    }

    /// Bootstrapped soft target for one transition, with `noise` driving the
    /// next-action draw. Terminal transitions return the reward exactly.
    pub fn q_target(&self, t: &Transition, gamma: f64, noise: f64) -> Result<f64> {
        if t.terminal {
            return Ok(t.adversary_reward);
        }
        let s = self.head(t.next_obs.as_slice())?.sample(noise);
        let x = critic_inputs([t.next_obs.as_slice()], &[s.action]);
        let q1 = self.q1_target.forward_batch(x.view())?[[0, 0]];
        let q2 = self.q2_target.forward_batch(x.view())?[[0, 0]];
        Ok(t.adversary_reward + gamma * (q1.min(q2) - self.alpha * s.log_prob))
    }

    /// Policy surrogate `mean(α·log π(a|o) − min Q(o, a))` for fixed draws,
    /// with its gradient w.r.t. the policy parameters.
    pub fn policy_loss_and_grad(&self, obs: ArrayView2<'_, f64>, noises: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = obs.nrows();
        let trace = self.policy.forward_trace(obs)?;
        let samples: Vec<SquashedSample> = heads(trace.output())
            .iter()
            .zip(noises)
            .map(|(h, e)| h.sample(*e))
            .collect();
        let actions: Vec<f64> = samples.iter().map(|s| s.action).collect();
        let x = critic_inputs(obs.rows().into_iter().map(|r| r.to_slice().unwrap()), &actions);
        let t1 = self.q1.forward_trace(x.view())?;
        let t2 = self.q2.forward_trace(x.view())?;
        let (q1, q2) = (column(t1.output()), column(t2.output()));

        let mut up1 = Array2::zeros((n, 1));
        let mut up2 = Array2::zeros((n, 1));
        let mut loss = 0.0;
        for i in 0..n {
            loss += self.alpha * samples[i].log_prob - q1[i].min(q2[i]);
            // dLoss/dQmin = -1/n routed to the smaller critic
            if q1[i] <= q2[i] {
                up1[[i, 0]] = -1.0 / n as f64;
            } else {
                up2[[i, 0]] = -1.0 / n as f64;
            }
        }
        loss /= n as f64;
        let g1 = self.q1.backward(&t1, up1.view(), false)?.input;
        let g2 = self.q2.backward(&t2, up2.view(), false)?.input;
        let a_col = self.obs_dim();
        let mut upstream = Array2::zeros((n, 2));
        for i in 0..n {
            let s = &samples[i];
            let dl_da = (g1[[i, a_col]] + g2[[i, a_col]]) / ACTION_BOUND;
            let scale = self.alpha / n as f64;
            upstream[[i, 0]] = scale * s.d_log_prob_d_mean + dl_da * s.d_action_d_mean;
            upstream[[i, 1]] = scale * s.d_log_prob_d_log_std + dl_da * s.d_action_d_log_std;
        }
        let grads = self.policy.backward(&trace, upstream.view(), true)?;
        Ok((loss, grads.params))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SacStats {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

/// Adversary networks together with their optimizers.
#[derive(Debug, Clone)]
pub struct SacAdversary {
    pub nets: AdversaryNets,
    pub cfg: SacConfig,
    opt_policy: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    opt_value: Adam,
}

impl SacAdversary {
    pub fn new(obs_dim: usize, cfg: SacConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let nets = AdversaryNets::new(obs_dim, cfg.alpha, rng)?;
        Ok(Self::from_nets(nets, cfg))
    }

    pub fn from_nets(nets: AdversaryNets, cfg: SacConfig) -> Self {
        Self {
            opt_policy: Adam::new(nets.policy.params().len(), cfg.actor_lr),
            opt_q1: Adam::new(nets.q1.params().len(), cfg.critic_lr),
            opt_q2: Adam::new(nets.q2.params().len(), cfg.critic_lr),
            opt_value: Adam::new(nets.value.params().len(), cfg.critic_lr),
            nets,
            cfg,
        }
    }

    /// Soft targets for a batch; terminal entries equal their reward.
    pub fn targets(&self, batch: &[&Transition], rng: &mut Rng) -> Result<Vec<f64>> {
        let noises: Vec<f64> = batch.iter().map(|_| standard_normal(rng)).collect();
        let next = obs_matrix(batch.iter().map(|t| t.next_obs.as_slice()));
        let samples: Vec<SquashedSample> = heads(&self.nets.policy.forward_batch(next.view())?)
            .iter()
            .zip(&noises)
            .map(|(h, e)| h.sample(*e))
            .collect();
        let actions: Vec<f64> = samples.iter().map(|s| s.action).collect();
        let x = critic_inputs(batch.iter().map(|t| t.next_obs.as_slice()), &actions);
        let q1 = self.nets.q1_target.forward_batch(x.view())?;
        let q2 = self.nets.q2_target.forward_batch(x.view())?;
        let gamma = self.cfg.gamma;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if t.terminal {
                    t.adversary_reward
                } else {
                    let soft = q1[[i, 0]].min(q2[[i, 0]]) - self.nets.alpha * samples[i].log_prob;
                    t.adversary_reward + gamma * soft
                }
            })
            .collect())
    }

    /// One Adam step per critic on `½·mean (Q_i − y)²`; targets are computed
    /// before either critic moves.
    pub fn update_critics(&mut self, batch: &[&Transition], rng: &mut Rng) -> Result<(f64, f64)> {
        let y = self.targets(batch, rng)?;
        let actions: Vec<f64> = batch.iter().map(|t| t.adversary_action).collect();
        let x = critic_inputs(batch.iter().map(|t| t.obs.as_slice()), &actions);
        let n = batch.len() as f64;
        let mut losses = [0.0; 2];
        for (k, (net, opt)) in [(&mut self.nets.q1, &mut self.opt_q1), (&mut self.nets.q2, &mut self.opt_q2)]
            .into_iter()
            .enumerate()
        {
            let trace = net.forward_trace(x.view())?;
            let q = column(trace.output());
            let resid: Vec<f64> = q.iter().zip(&y).map(|(q, y)| q - y).collect();
            losses[k] = ensure_finite("adversary critic loss", 0.5 * resid.iter().map(|r| r * r).sum::<f64>() / n)?;
            let up = Array2::from_shape_fn((batch.len(), 1), |(i, _)| resid[i] / n);
            let grads = net.backward(&trace, up.view(), true)?;
            opt.step(net.params_mut(), &grads.params)?;
        }
        Ok((losses[0], losses[1]))
    }

    /// One Adam step on the reparameterized policy surrogate.
    pub fn update_policy(&mut self, batch: &[&Transition], rng: &mut Rng) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let obs = obs_matrix(batch.iter().map(|t| t.obs.as_slice()));
        let noises: Vec<f64> = batch.iter().map(|_| standard_normal(rng)).collect();
        let (loss, grad) = self.nets.policy_loss_and_grad(obs.view(), &noises)?;
        ensure_finite("adversary policy loss", loss)?;
        self.opt_policy.step(self.nets.policy.params_mut(), &grad)?;
        Ok(loss)
    }

    /// One Adam step on `½·mean (V(o) − [min Q(o, a) − α·log π(a|o)])²`
    /// with a fresh `a` and the bracket held fixed.
    pub fn update_value(&mut self, batch: &[&Transition], rng: &mut Rng) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let noises: Vec<f64> = batch.iter().map(|_| standard_normal(rng)).collect();
        let y = self.value_targets(batch, &noises)?;
        let obs = obs_matrix(batch.iter().map(|t| t.obs.as_slice()));
        let trace = self.nets.value.forward_trace(obs.view())?;
        let v = column(trace.output());
        let n = batch.len() as f64;
        let resid: Vec<f64> = v.iter().zip(&y).map(|(v, y)| v - y).collect();
        let loss = ensure_finite("adversary value loss", 0.5 * resid.iter().map(|r| r * r).sum::<f64>() / n)?;
        let up = Array2::from_shape_fn((batch.len(), 1), |(i, _)| resid[i] / n);
        let grads = self.nets.value.backward(&trace, up.view(), true)?;
        self.opt_value.step(self.nets.value.params_mut(), &grads.params)?;
        Ok(loss)
    }

    pub fn value_targets(&self, batch: &[&Transition], noises: &[f64]) -> Result<Vec<f64>> {
        let obs = obs_matrix(batch.iter().map(|t| t.obs.as_slice()));
        let samples: Vec<SquashedSample> = heads(&self.nets.policy.forward_batch(obs.view())?)
            .iter()
            .zip(noises)
            .map(|(h, e)| h.sample(*e))
            .collect();
        let actions: Vec<f64> = samples.iter().map(|s| s.action).collect();
        let flat: Vec<f64> = batch.iter().flat_map(|t| t.obs.as_slice().iter().copied()).collect();
        let q = self.nets.min_q(&flat, &actions)?;
        Ok(q.iter().zip(&samples).map(|(q, s)| q - self.nets.alpha * s.log_prob).collect())
    }

    pub fn update_targets(&mut self) -> Result<()> {
        let tau = self.cfg.tau;
        self.nets.q1_target.polyak_from(&self.nets.q1, tau)?;
        self.nets.q2_target.polyak_from(&self.nets.q2, tau)?;
        Ok(())
    }

    /// Critics, policy and value each take one step on a fresh batch, then
    /// the target critics move.
    pub fn train_step(&mut self, buffer: &ReplayBuffer<Transition>, rng: &mut Rng) -> Result<SacStats> {
        let batch = buffer.sample(self.cfg.batch_size, rng)?;
        let (q1_loss, q2_loss) = self.update_critics(&batch, rng)?;
        let policy_loss = self.update_policy(&batch, rng)?;
        let value_loss = self.update_value(&batch, rng)?;
        self.update_targets()?;
        Ok(SacStats {
            q1_loss,
            q2_loss,
            policy_loss,
            value_loss,
        })
    }

    /// Exploration action: uniform before updates begin, then the policy.
    pub fn explore(&self, obs: &[f64], buffer_len: usize, rng: &mut Rng) -> Result<f64> {
        if buffer_len < self.cfg.update_threshold() {
            Ok(rng.random_range(-ACTION_BOUND..=ACTION_BOUND))
        } else {
            self.nets.act(obs, rng)
        }
    }
}

/// One row of the adversary training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryLogRow {
    pub episode: u64,
    pub adversary_return: f64,
    pub collision: bool,
    pub buffer_size: usize,
    pub q_loss_mean: f64,
    pub policy_loss: f64,
}

/// Trains the adversary against a frozen agent that acts on `o + δ` with
/// its mean action. `episodes` indexes training-episode seeds under
/// `run_seed`.
#[allow(clippy::too_many_arguments)]
pub fn train_adversary(
    adversary: &mut SacAdversary,
    buffer: &mut ReplayBuffer<Transition>,
    agent: &impl DeterministicPolicy,
    sim_cfg: &SimConfig,
    attack: &AttackConfig,
    episodes: std::ops::Range<u64>,
    run_seed: u64,
    rng: &mut Rng,
) -> Result<Vec<AdversaryLogRow>> {
    let mut log = Vec::with_capacity(episodes.end.saturating_sub(episodes.start) as usize);
    for episode in episodes {
        let mut state = sim::reset(sim_cfg, train_episode_seed(run_seed, episode))?;
        let mut obs = observe(&state, sim_cfg);
        let (mut ret, mut collided) = (0.0, false);
        let (mut q_loss, mut pi_loss, mut updates) = (0.0, 0.0, 0usize);
        while !state.done {
            let adv_action = adversary.explore(obs.as_slice(), buffer.len(), rng)?;
            let delta = bim_perturb(agent, obs.as_slice(), adv_action, attack)?;
            let perturbed = obs.perturbed(&delta);
            let action = agent.mean_action(perturbed.as_slice())?;
            let outcome = state.step(sim_cfg, action)?;
            let next_obs = observe(&state, sim_cfg);
            let r_adv = adversary_reward(&outcome);
            buffer.push(Transition {
                obs,
                perturbed_obs: perturbed,
                action,
                adversary_action: adv_action,
                reward: agent_reward(&outcome, sim_cfg),
                adversary_reward: r_adv,
                next_obs,
                terminal: outcome.collision || outcome.reached_goal,
            });
            ret += r_adv;
            collided |= outcome.collision;
            if buffer.len() >= adversary.cfg.update_threshold() {
                for _ in 0..adversary.cfg.updates_per_step {
                    let s = adversary.train_step(buffer, rng)?;
                    q_loss += 0.5 * (s.q1_loss + s.q2_loss);
                    pi_loss += s.policy_loss;
                    updates += 1;
                }
            }
            obs = next_obs;
        }
        let denom = updates.max(1) as f64;
        log.push(AdversaryLogRow {
            episode,
            adversary_return: ret,
            collision: collided,
            buffer_size: buffer.len(),
            q_loss_mean: q_loss / denom,
            policy_loss: pi_loss / denom,
        });
    }
    Ok(log)
}
