//! Constrained robust driving agent.
//!
//! One actor and twin critics. The actor maximizes the critics' value of the
//! action it takes on the observation it actually sees, minus two Lagrangian
//! penalties: the adversary's Q-value of its clean-observation action
//! (collision risk, C1) and the squared gap between its clean and perturbed
//! actions (policy consistency, C2). Multipliers follow projected dual
//! ascent.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::adversary::{critic_inputs, obs_matrix, AdversaryNets};
use crate::attack::{bim_perturb, AttackConfig};
use crate::error::{Error, Result};
use crate::nn::{squash, squash_derivative, standard_sizes, Activation, Adam, DeterministicPolicy, Mlp, ACTION_BOUND};
use crate::replay::{ReplayBuffer, Transition};
use crate::rng::{standard_normal, train_episode_seed, Rng};
use crate::sim::{self, adversary_reward, agent_reward, observe, SimConfig};

/// Which observation the critic-value term feeds the actor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorInput {
    /// `a = μ(o′)`, the action actually executed.
    #[default]
    Perturbed,
    /// `a = μ(o)`.
    Clean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LagrangeMode {
    /// Projected dual ascent every training step.
    #[default]
    Dual,
    /// Multipliers stay at their initial values.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub warmup: usize,
    pub buffer_capacity: usize,
    /// Gradient steps per environment step once updates begin.
    pub updates_per_step: usize,
    /// Std of the Gaussian exploration noise, in pre-tanh units.
    pub explore_std: f64,
    /// Weight of the `mean pre²` term that keeps the actor out of tanh
    /// saturation.
    pub preact_penalty: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub alpha_lambda: f64,
    pub lambda1_init: f64,
    pub lambda2_init: f64,
    pub lagrange: LagrangeMode,
    pub actor_input: ActorInput,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            batch_size: 128,
            warmup: 1000,
            buffer_capacity: 1_000_000,
            updates_per_step: 1,
            explore_std: 0.5,
            preact_penalty: 1e-3,
            eps1: 0.01,
            eps2: 0.01,
            alpha_lambda: 5e-5,
            lambda1_init: 0.0,
            lambda2_init: 0.0,
            lagrange: LagrangeMode::Dual,
            actor_input: ActorInput::Perturbed,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config("gamma and tau must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config("batch size must be positive and fit in the buffer".into()));
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) || !(self.explore_std >= 0.0) || !(self.preact_penalty >= 0.0) {
            return Err(Error::Config("learning rates must be positive; explore_std, preact_penalty >= 0".into()));
        }
        if self.updates_per_step == 0 {
            return Err(Error::Config("updates_per_step must be at least 1".into()));
        }
        if !(self.alpha_lambda >= 0.0) || !(self.lambda1_init >= 0.0) || !(self.lambda2_init >= 0.0) {
            return Err(Error::Config("dual step and initial multipliers must be >= 0".into()));
        }
        Ok(())
    }

    pub fn update_threshold(&self) -> usize {
        self.warmup.max(self.batch_size)
    }
}

/// Lagrange multipliers with their thresholds and dual step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub lambda1: f64,
    pub lambda2: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub alpha_lambda: f64,
}

impl LagrangeState {
    pub fn from_config(cfg: &AgentConfig) -> Self {
        Self {
            lambda1: cfg.lambda1_init,
            lambda2: cfg.lambda2_init,
            eps1: cfg.eps1,
            eps2: cfg.eps2,
            alpha_lambda: cfg.alpha_lambda,
        }
    }

    /// `λ_k ← max(λ_k + α_λ·(C_k − ε_k), 0)`.
    pub fn dual_update(&self, c1: f64, c2: f64) -> LagrangeState {
        LagrangeState {
            lambda1: (self.lambda1 + self.alpha_lambda * (c1 - self.eps1)).max(0.0),
            lambda2: (self.lambda2 + self.alpha_lambda * (c2 - self.eps2)).max(0.0),
            ..*self
        }
    }
}

/// Frozen copy of the adversary's twin critics, used to score C1.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryCritics {
    pub q1: Mlp,
    pub q2: Mlp,
}

impl AdversaryCritics {
    pub fn snapshot(nets: &AdversaryNets) -> Self {
        Self {
            q1: nets.q1.clone(),
            q2: nets.q2.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    /// Single output: the pre-tanh mean acceleration.
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
}

impl AgentNets {
    pub fn new(obs_dim: usize, rng: &mut Rng) -> Result<Self> {
        let mut actor = Mlp::random(&standard_sizes(obs_dim, 1), Activation::Tanh, rng)?;
        actor.scale_output_layer(0.1);
        let q1 = Mlp::random(&standard_sizes(obs_dim + 1, 1), Activation::Tanh, rng)?;
        let q2 = Mlp::random(&standard_sizes(obs_dim + 1, 1), Activation::Tanh, rng)?;
        Ok(Self {
            actor,
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    /// Mean actions for each row.
    pub fn mean_actions(&self, obs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.actor.forward_batch(obs)?.column(0).iter().map(|p| squash(*p)).collect())
    }
}

impl DeterministicPolicy for AgentNets {
    fn mean_action(&self, obs: &[f64]) -> Result<f64> {
        self.actor.mean_action(obs)
    }

    fn mean_action_and_grad(&self, obs: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.actor.mean_action_and_grad(obs)
    }
}

fn min_critic_with_action_grad(q1: &Mlp, q2: &Mlp, x: &Array2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.nrows();
    let a_col = x.ncols() - 1;
    let t1 = q1.forward_trace(x.view())?;
    let t2 = q2.forward_trace(x.view())?;
    let mut up1 = Array2::zeros((n, 1));
    let mut up2 = Array2::zeros((n, 1));
    let mut vals = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (t1.output()[[i, 0]], t2.output()[[i, 0]]);
        if a <= b {
            up1[[i, 0]] = 1.0;
            vals.push(a);
        } else {
            up2[[i, 0]] = 1.0;
            vals.push(b);
        }
    }
    let g1 = q1.backward(&t1, up1.view(), false)?.input;
    let g2 = q2.backward(&t2, up2.view(), false)?.input;
    let grads = (0..n).map(|i| (g1[[i, a_col]] + g2[[i, a_col]]) / ACTION_BOUND).collect();
    Ok((vals, grads))
}

/// Actor objective pieces for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorStep {
    /// Unconstrained objective minus `λ1(C1 − ε1) + λ2(C2 − ε2)`; terms with
    /// λ = 0 or no C1 snapshot are dropped.
    pub objective: f64,
    pub c1: Option<f64>,
    pub c2: f64,
    /// Gradient of `−J` w.r.t. actor parameters.
    pub loss_grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentStats {
    pub critic_loss: f64,
    pub objective: f64,
    pub c1: Option<f64>,
    pub c2: f64,
}

#[derive(Debug, Clone)]
pub struct ConstrainedAgent {
    pub nets: AgentNets,
    pub cfg: AgentConfig,
    pub lagrange: LagrangeState,
    opt_actor: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
}

impl ConstrainedAgent {
    pub fn new(obs_dim: usize, cfg: AgentConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let nets = AgentNets::new(obs_dim, rng)?;
        Ok(Self::from_nets(nets, cfg))
    }

    pub fn from_nets(nets: AgentNets, cfg: AgentConfig) -> Self {
        Self {
            lagrange: LagrangeState::from_config(&cfg),
            opt_actor: Adam::new(nets.actor.params().len(), cfg.actor_lr),
            opt_q1: Adam::new(nets.q1.params().len(), cfg.critic_lr),
            opt_q2: Adam::new(nets.q2.params().len(), cfg.critic_lr),
            nets,
            cfg,
        }
    }

    /// Training-time action on the observation the agent sees.
    pub fn explore(&self, seen: &[f64], buffer_len: usize, rng: &mut Rng) -> Result<f64> {
        if buffer_len < self.cfg.update_threshold() {
            return Ok(rng.random_range(-ACTION_BOUND..=ACTION_BOUND));
        }
        let pre = self.nets.actor.forward(seen)?[0];
        Ok(squash(pre + self.cfg.explore_std * standard_normal(rng)))
    }

    /// `mean_i min_k Q^adv_k(o_i, μ(o_i))`.
    pub fn constraint_c1(&self, critics: Option<&AdversaryCritics>, obs: ArrayView2<'_, f64>) -> Result<f64> {
        let critics = critics.ok_or_else(|| Error::Config("C1 needs an adversary critic snapshot".into()))?;
        let actions = self.nets.mean_actions(obs)?;
        let x = critic_inputs(obs.rows().into_iter().map(|r| r.to_slice().unwrap()), &actions);
        let (vals, _) = min_critic_with_action_grad(&critics.q1, &critics.q2, &x)?;
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// `mean_i (μ(o_i) − μ(o′_i))²`.
    pub fn constraint_c2(&self, obs: ArrayView2<'_, f64>, perturbed: ArrayView2<'_, f64>) -> Result<f64> {
        if obs.dim() != perturbed.dim() {
            return Err(Error::Usage("clean and perturbed batches differ in shape".into()));
        }
        let a = self.nets.mean_actions(obs)?;
        let b = self.nets.mean_actions(perturbed)?;
        Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
    }

    /// Targets `r + γ·min_j Q_j^target(o_next, μ(o_next))`; terminal rows
    /// return `r` exactly.
    pub fn critic_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let next = obs_matrix(batch.iter().map(|t| t.next_obs.as_slice()));
        let a_next = self.nets.mean_actions(next.view())?;
        let x = critic_inputs(batch.iter().map(|t| t.next_obs.as_slice()), &a_next);
        let q1 = self.nets.q1_target.forward_batch(x.view())?;
        let q2 = self.nets.q2_target.forward_batch(x.view())?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if t.terminal {
                    t.reward
                } else {
                    t.reward + self.cfg.gamma * q1[[i, 0]].min(q2[[i, 0]])
                }
            })
            .collect())
    }

    /// One Adam step per critic on `mean (Q_i(o, a) − y)²`. Returns the two
    /// losses measured before the step.
    pub fn critic_update(&mut self, batch: &[&Transition]) -> Result<(f64, f64)> {
        let y = self.critic_targets(batch)?;
        let actions: Vec<f64> = batch.iter().map(|t| t.action).collect();
        let x = critic_inputs(batch.iter().map(|t| t.obs.as_slice()), &actions);
        let n = batch.len() as f64;
        let mut losses = [0.0; 2];
        for (k, (net, opt)) in [(&mut self.nets.q1, &mut self.opt_q1), (&mut self.nets.q2, &mut self.opt_q2)]
            .into_iter()
            .enumerate()
        {
            let trace = net.forward_trace(x.view())?;
            let resid: Vec<f64> = trace.output().column(0).iter().zip(&y).map(|(q, y)| q - y).collect();
            losses[k] = resid.iter().map(|r| r * r).sum::<f64>() / n;
            if !losses[k].is_finite() {
                return Err(Error::NonFinite(format!("agent critic loss {}", losses[k])));
            }
            let up = Array2::from_shape_fn((batch.len(), 1), |(i, _)| 2.0 * resid[i] / n);
            let grads = net.backward(&trace, up.view(), true)?;
            opt.step(net.params_mut(), &grads.params)?;
        }
        Ok((losses[0], losses[1]))
    }

    fn actor_rows(&self, batch: &[&Transition]) -> (Array2<f64>, Array2<f64>) {
        (
            obs_matrix(batch.iter().map(|t| t.obs.as_slice())),
            obs_matrix(batch.iter().map(|t| t.perturbed_obs.as_slice())),
        )
    }

    /// Unconstrained actor objective `mean min Q(o, μ(x)) − c·mean pre(x)²`
    /// and the gradient of its negation, where `x` is chosen by
    /// `actor_input` and `pre` is the actor output before the tanh squash.
    pub fn unconstrained_grad(&self, batch: &[&Transition]) -> Result<(f64, Vec<f64>)> {
        let (clean, perturbed) = self.actor_rows(batch);
        let seen = match self.cfg.actor_input {
            ActorInput::Perturbed => &perturbed,
            ActorInput::Clean => &clean,
        };
        let n = batch.len() as f64;
        let c = self.cfg.preact_penalty;
        let trace = self.nets.actor.forward_trace(seen.view())?;
        let pre: Vec<f64> = trace.output().column(0).to_vec();
        let actions: Vec<f64> = pre.iter().map(|p| squash(*p)).collect();
        let x = critic_inputs(batch.iter().map(|t| t.obs.as_slice()), &actions);
        let (q, dq_da) = min_critic_with_action_grad(&self.nets.q1, &self.nets.q2, &x)?;
        let up = Array2::from_shape_fn((batch.len(), 1), |(i, _)| {
            (-dq_da[i] * squash_derivative(pre[i]) + 2.0 * c * pre[i]) / n
        });
        let grads = self.nets.actor.backward(&trace, up.view(), true)?;
        let objective = (q.iter().sum::<f64>() - c * pre.iter().map(|p| p * p).sum::<f64>()) / n;
        Ok((objective, grads.params))
    }

    /// Full Lagrangian objective and the gradient of its negation.
    pub fn actor_objective(
        &self,
        batch: &[&Transition],
        critics: Option<&AdversaryCritics>,
        lagrange: &LagrangeState,
    ) -> Result<ActorStep> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let (q_mean, mut grad) = self.unconstrained_grad(batch)?;
        let (clean, perturbed) = self.actor_rows(batch);
        let n = batch.len() as f64;

        let clean_trace = self.nets.actor.forward_trace(clean.view())?;
        let pert_trace = self.nets.actor.forward_trace(perturbed.view())?;
        let pre_c: Vec<f64> = clean_trace.output().column(0).to_vec();
        let pre_p: Vec<f64> = pert_trace.output().column(0).to_vec();
        let mu_c: Vec<f64> = pre_c.iter().map(|p| squash(*p)).collect();
        let mu_p: Vec<f64> = pre_p.iter().map(|p| squash(*p)).collect();
        let c2 = mu_c.iter().zip(&mu_p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;

        let c1_parts = match critics {
            Some(c) => {
                let x = critic_inputs(batch.iter().map(|t| t.obs.as_slice()), &mu_c);
                Some(min_critic_with_action_grad(&c.q1, &c.q2, &x)?)
            }
            None => None,
        };
        let c1 = c1_parts.as_ref().map(|(v, _)| v.iter().sum::<f64>() / n);

        let mut objective = q_mean;
        let use_c1 = lagrange.lambda1 != 0.0 && c1.is_some();
        let use_c2 = lagrange.lambda2 != 0.0;
        if use_c1 {
            objective -= lagrange.lambda1 * (c1.unwrap() - lagrange.eps1);
        }
        if use_c2 {
            objective -= lagrange.lambda2 * (c2 - lagrange.eps2);
        }

        if use_c1 || use_c2 {
            // d(−J)/dμ(o_i) and d(−J)/dμ(o′_i)
            let mut up_c = Array2::zeros((batch.len(), 1));
            let mut up_p = Array2::zeros((batch.len(), 1));
            for i in 0..batch.len() {
                let mut d_clean = 0.0;
                let mut d_pert = 0.0;
                if use_c1 {
                    d_clean += lagrange.lambda1 * c1_parts.as_ref().unwrap().1[i] / n;
                }
                if use_c2 {
                    let gap = mu_c[i] - mu_p[i];
                    d_clean += lagrange.lambda2 * 2.0 * gap / n;
                    d_pert -= lagrange.lambda2 * 2.0 * gap / n;
                }
                up_c[[i, 0]] = d_clean * squash_derivative(pre_c[i]);
                up_p[[i, 0]] = d_pert * squash_derivative(pre_p[i]);
            }
            let gc = self.nets.actor.backward(&clean_trace, up_c.view(), true)?.params;
            for (g, d) in grad.iter_mut().zip(&gc) {
                *g += d;
            }
            if use_c2 {
                let gp = self.nets.actor.backward(&pert_trace, up_p.view(), true)?.params;
                for (g, d) in grad.iter_mut().zip(&gp) {
                    *g += d;
                }
            }
        }
        if !objective.is_finite() {
            return Err(Error::NonFinite(format!("agent actor objective {objective}")));
        }
        Ok(ActorStep {
            objective,
            c1,
            c2,
            loss_grad: grad,
        })
    }

    /// One Adam step ascending the Lagrangian objective.
    pub fn actor_update(&mut self, batch: &[&Transition], critics: Option<&AdversaryCritics>) -> Result<ActorStep> {
        let step = self.actor_objective(batch, critics, &self.lagrange)?;
        self.opt_actor.step(self.nets.actor.params_mut(), &step.loss_grad)?;
        Ok(step)
    }

    pub fn update_targets(&mut self) -> Result<()> {
        let tau = self.cfg.tau;
        self.nets.q1_target.polyak_from(&self.nets.q1, tau)?;
        self.nets.q2_target.polyak_from(&self.nets.q2, tau)?;
        Ok(())
    }

    /// Critic step, actor step, dual step (when an adversary snapshot is
    /// present and multipliers are live), target update.
    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer<Transition>,
        critics: Option<&AdversaryCritics>,
        rng: &mut Rng,
    ) -> Result<AgentStats> {
        let batch = buffer.sample(self.cfg.batch_size, rng)?;
        let (l1, l2) = self.critic_update(&batch)?;
        let step = self.actor_update(&batch, critics)?;
        if self.cfg.lagrange == LagrangeMode::Dual {
            if let Some(c1) = step.c1 {
                self.lagrange = self.lagrange.dual_update(c1, step.c2);
            }
        }
        self.update_targets()?;
        Ok(AgentStats {
            critic_loss: 0.5 * (l1 + l2),
            objective: step.objective,
            c1: step.c1,
            c2: step.c2,
        })
    }
}

/// One row of the agent training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentLogRow {
    pub episode: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub collision: bool,
    pub success: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Episode mean of the batch estimates; empty without an adversary.
    pub c1: Option<f64>,
    pub c2: f64,
}

/// A frozen adversary: its policy picks targets and its critics score C1.
#[derive(Debug, Clone)]
pub struct FrozenAdversary<'a> {
    pub nets: &'a AdversaryNets,
    pub critics: AdversaryCritics,
    pub attack: &'a AttackConfig,
}

impl<'a> FrozenAdversary<'a> {
    pub fn new(nets: &'a AdversaryNets, attack: &'a AttackConfig) -> Self {
        Self {
            nets,
            critics: AdversaryCritics::snapshot(nets),
            attack,
        }
    }
}

/// Trains the agent for `episodes`, under attack when an adversary is given.
pub fn train_agent(
    agent: &mut ConstrainedAgent,
    buffer: &mut ReplayBuffer<Transition>,
    adversary: Option<&FrozenAdversary<'_>>,
    sim_cfg: &SimConfig,
    episodes: std::ops::Range<u64>,
    run_seed: u64,
    rng: &mut Rng,
) -> Result<Vec<AgentLogRow>> {
    let critics = adversary.map(|a| &a.critics);
    let mut log = Vec::new();
    for episode in episodes {
        let mut state = sim::reset(sim_cfg, train_episode_seed(run_seed, episode))?;
        let mut obs = observe(&state, sim_cfg);
        let (mut ret, mut collision, mut success) = (0.0, false, false);
        let (mut c1_sum, mut c2_sum, mut updates) = (0.0, 0.0, 0usize);
        while !state.done {
            let (adv_action, perturbed) = match adversary {
                Some(adv) => {
                    let a_adv = adv.nets.act(obs.as_slice(), rng)?;
                    let delta = bim_perturb(&agent.nets, obs.as_slice(), a_adv, adv.attack)?;
                    (a_adv, obs.perturbed(&delta))
                }
                None => (0.0, obs),
            };
            let action = agent.explore(perturbed.as_slice(), buffer.len(), rng)?;
            let outcome = state.step(sim_cfg, action)?;
            let next_obs = observe(&state, sim_cfg);
            let reward = agent_reward(&outcome, sim_cfg);
            buffer.push(Transition {
                obs,
                perturbed_obs: perturbed,
                action,
                adversary_action: adv_action,
                reward,
                adversary_reward: adversary_reward(&outcome),
                next_obs,
                terminal: outcome.collision || outcome.reached_goal,
            });
            ret += reward;
            collision |= outcome.collision;
            success |= outcome.reached_goal;
            if buffer.len() >= agent.cfg.update_threshold() {
                for _ in 0..agent.cfg.updates_per_step {
                    let s = agent.train_step(buffer, critics, rng)?;
                    c1_sum += s.c1.unwrap_or(0.0);
                    c2_sum += s.c2;
                    updates += 1;
                }
            }
            obs = next_obs;
        }
        let denom = updates.max(1) as f64;
        log.push(AgentLogRow {
            episode,
            episode_return: ret,
            collision,
            success,
            lambda1: agent.lagrange.lambda1,
            lambda2: agent.lagrange.lambda2,
            c1: critics.map(|_| c1_sum / denom),
            c2: c2_sum / denom,
        });
    }
    Ok(log)
}
