//! Twin-delayed deep deterministic policy gradient (TD3) for a scalar action
//! in `[-1, 1]`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::neural::{Activation, Adam, Mlp};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Terminal for bootstrapping purposes (crash), not mere truncation.
    pub done: bool,
}

impl Transition {
    fn validate(&self) -> Result<()> {
        let in_box = |v: &[f64]| v.iter().all(|x| x.is_finite() && (-1.0..=1.0).contains(x));
        if !in_box(&self.state) || !in_box(&self.next_state) {
            return Err(Error::validation("transition states must be finite and scaled to [-1, 1]"));
        }
        if !(self.action.is_finite() && (-1.0..=1.0).contains(&self.action)) {
            return Err(Error::validation("transition action must lie in [-1, 1]"));
        }
        if !self.reward.is_finite() {
            return Err(Error::validation("transition reward must be finite"));
        }
        if self.state.len() != self.next_state.len() {
            return Err(Error::validation("state and next state differ in length"));
        }
        Ok(())
    }
}

/// Fixed-capacity ring of transitions with a seeded uniform sampler.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::validation("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    /// Appends, overwriting the oldest transition once full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Uniform sample of `n` indices, with replacement.
    pub fn sample_indices(&mut self, n: usize) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::validation("cannot sample from an empty replay buffer"));
        }
        let len = self.items.len();
        Ok((0..n).map(|_| self.rng.gen_range(0..len)).collect())
    }

    pub fn sample(&mut self, n: usize) -> Result<Vec<&Transition>> {
        let idx = self.sample_indices(n)?;
        Ok(idx.into_iter().map(|i| &self.items[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: u64,
    pub exploration_noise: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    /// Environment steps with uniformly random actions before training starts.
    pub warmup_steps: u64,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            exploration_noise: 0.1,
            batch_size: 100,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            hidden: vec![300, 300],
            buffer_capacity: 100_000,
            warmup_steps: 1000,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::validation("gamma must lie in (0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::validation("tau must lie in (0, 1]"));
        }
        for (name, v) in [
            ("policy_noise", self.policy_noise),
            ("noise_clip", self.noise_clip),
            ("exploration_noise", self.exploration_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!("{name} must be non-negative")));
            }
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::validation("learning rates must be positive"));
        }
        if self.policy_delay == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::validation("policy_delay, batch_size and buffer_capacity must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::validation("hidden layer sizes must be positive"));
        }
        Ok(())
    }
}

/// `y = r + gamma * (1 - done) * min(q1', q2')`.
pub fn clipped_double_q_target(reward: f64, done: bool, gamma: f64, q1: f64, q2: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q1.min(q2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub critic_loss: f64,
    /// Present on delayed policy-update steps.
    pub actor_loss: Option<f64>,
    pub mean_target: f64,
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub cfg: Td3Config,
    state_dim: usize,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    rng: ChaCha8Rng,
}

impl Td3Agent {
    pub fn new(state_dim: usize, cfg: Td3Config, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if state_dim == 0 {
            return Err(Error::validation("state dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(1);
        let mut critic_sizes = actor_sizes.clone();
        critic_sizes[0] = state_dim + 1;

        let actor = Mlp::new(&actor_sizes, Activation::Relu, Activation::Tanh, &mut rng)?;
        let critic1 = Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, &mut rng)?;
        let critic2 = Mlp::new(&critic_sizes, Activation::Relu, Activation::Identity, &mut rng)?;
        Ok(Self {
            actor_opt: Adam::new(&actor, cfg.actor_lr),
            critic1_opt: Adam::new(&critic1, cfg.critic_lr),
            critic2_opt: Adam::new(&critic2, cfg.critic_lr),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            cfg,
            state_dim,
            rng,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Deterministic policy output.
    pub fn policy_action(&self, state: &[f64]) -> Result<f64> {
        Ok(self.actor.forward(state)?[0])
    }

    /// Policy output, plus clipped Gaussian exploration noise when `explore`.
    pub fn select_action(&mut self, state: &[f64], explore: bool) -> Result<f64> {
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("state must be finite"));
        }
        let a = self.policy_action(state)?;
        if !explore {
            return Ok(a);
        }
        let noise = Normal::new(0.0, self.cfg.exploration_noise)
            .map_err(|e| Error::validation(e.to_string()))?
            .sample(&mut self.rng);
        Ok((a + noise).clamp(-1.0, 1.0))
    }

    /// Uniform action in `[-1, 1]` drawn from the agent's generator (warm-up).
    pub fn random_action(&mut self) -> f64 {
        self.rng.gen_range(-1.0..=1.0)
    }

    fn critic_inputs(&self, states: &[f64], actions: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(actions.len() * (self.state_dim + 1));
        for (s, a) in states.chunks_exact(self.state_dim).zip(actions) {
            x.extend_from_slice(s);
            x.push(*a);
        }
        x
    }

    /// One TD3 update from a sampled minibatch. Returns `Ok(None)` without
    /// touching anything when the buffer holds fewer than `batch_size` items.
    pub fn train_step(&mut self, buffer: &mut ReplayBuffer, step_index: u64) -> Result<Option<TrainStats>> {
        let n = self.cfg.batch_size;
        if buffer.len() < n {
            return Ok(None);
        }
        let idx = buffer.sample_indices(n)?;
        let d = self.state_dim;
        let mut states = Vec::with_capacity(n * d);
        let mut next_states = Vec::with_capacity(n * d);
        let mut actions = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        for &i in &idx {
            let t = &buffer.items()[i];
            if t.state.len() != d {
                return Err(Error::validation("transition state dimension does not match agent"));
            }
            states.extend_from_slice(&t.state);
            next_states.extend_from_slice(&t.next_state);
            actions.push(t.action);
            rewards.push(t.reward);
            dones.push(t.done);
        }

        // Target policy smoothing.
        let noise = Normal::new(0.0, self.cfg.policy_noise).map_err(|e| Error::validation(e.to_string()))?;
        let next_actions: Vec<f64> = self
            .actor_target
            .forward_batch(&next_states, n)?
            .output()
            .iter()
            .map(|a| {
                let eps = noise
                    .sample(&mut self.rng)
                    .clamp(-self.cfg.noise_clip, self.cfg.noise_clip);
                (a + eps).clamp(-1.0, 1.0)
            })
            .collect();
        let next_inputs = self.critic_inputs(&next_states, &next_actions);
        let q1_next = self.critic1_target.forward_batch(&next_inputs, n)?;
        let q2_next = self.critic2_target.forward_batch(&next_inputs, n)?;
        let targets: Vec<f64> = (0..n)
            .map(|i| {
                clipped_double_q_target(rewards[i], dones[i], self.cfg.gamma, q1_next.output()[i], q2_next.output()[i])
            })
            .collect();

        let inputs = self.critic_inputs(&states, &actions);
        let mut critic_loss = 0.0;
        for (critic, opt) in [
            (&mut self.critic1, &mut self.critic1_opt),
            (&mut self.critic2, &mut self.critic2_opt),
        ] {
            let cache = critic.forward_batch(&inputs, n)?;
            let q = cache.output();
            let err: Vec<f64> = q.iter().zip(&targets).map(|(q, y)| q - y).collect();
            critic_loss += err.iter().map(|e| e * e).sum::<f64>() / n as f64;
            let d_out: Vec<f64> = err.iter().map(|e| 2.0 * e / n as f64).collect();
            let (grads, _) = critic.backward_batch(&cache, &d_out)?;
            opt.step(critic, &grads)?;
        }
        if !critic_loss.is_finite() {
            return Err(Error::Diverged(format!("critic loss {critic_loss}")));
        }

        let mut actor_loss = None;
        if step_index.is_multiple_of(self.cfg.policy_delay) {
            let actor_cache = self.actor.forward_batch(&states, n)?;
            let pi = actor_cache.output().to_vec();
            let q_inputs = self.critic_inputs(&states, &pi);
            let q_cache = self.critic1.forward_batch(&q_inputs, n)?;
            let loss = -q_cache.output().iter().sum::<f64>() / n as f64;
            let (_, d_in) = self.critic1.backward_batch(&q_cache, &vec![-1.0 / n as f64; n])?;
            let d_action: Vec<f64> = d_in.chunks_exact(d + 1).map(|row| row[d]).collect();
            let (grads, _) = self.actor.backward_batch(&actor_cache, &d_action)?;
            self.actor_opt.step(&mut self.actor, &grads)?;

            let tau = self.cfg.tau;
            self.actor_target.soft_update_from(&self.actor, tau)?;
            self.critic1_target.soft_update_from(&self.critic1, tau)?;
            self.critic2_target.soft_update_from(&self.critic2, tau)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("actor loss {loss}")));
            }
            actor_loss = Some(loss);
        }

        Ok(Some(TrainStats {
            critic_loss,
            actor_loss,
            mean_target: targets.iter().sum::<f64>() / n as f64,
        }))
    }

    /// Writes all six networks plus a plain-text manifest into `dir`.
    pub fn save_checkpoint(&self, dir: &Path, extra_manifest: &[(String, String)]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, net) in self.networks() {
            net.save(&dir.join(format!("{name}.bin")))?;
        }
        let mut manifest = String::new();
        let c = &self.cfg;
        let _ = writeln!(manifest, "state_dim = {}", self.state_dim);
        let _ = writeln!(manifest, "gamma = {}", c.gamma);
        let _ = writeln!(manifest, "tau = {}", c.tau);
        let _ = writeln!(manifest, "policy_noise = {}", c.policy_noise);
        let _ = writeln!(manifest, "noise_clip = {}", c.noise_clip);
        let _ = writeln!(manifest, "policy_delay = {}", c.policy_delay);
        let _ = writeln!(manifest, "exploration_noise = {}", c.exploration_noise);
        let _ = writeln!(manifest, "batch_size = {}", c.batch_size);
        let _ = writeln!(manifest, "actor_lr = {}", c.actor_lr);
        let _ = writeln!(manifest, "critic_lr = {}", c.critic_lr);
        let hidden: Vec<String> = c.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(manifest, "hidden = {}", hidden.join(","));
        for (k, v) in extra_manifest {
            let _ = writeln!(manifest, "{k} = {v}");
        }
        let path = dir.join("manifest.txt");
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn networks(&self) -> [(&'static str, &Mlp); 6] {
        [
            ("actor", &self.actor),
            ("actor_target", &self.actor_target),
            ("critic1", &self.critic1),
            ("critic2", &self.critic2),
            ("critic1_target", &self.critic1_target),
            ("critic2_target", &self.critic2_target),
        ]
    }
}

/// Loads the policy network from a checkpoint directory.
pub fn load_actor(dir: &Path) -> Result<Mlp> {
    let path = dir.join("actor.bin");
    if !path.exists() {
        return Err(Error::validation(format!("missing checkpoint {}", path.display())));
    }
    Mlp::load(&path)
}
