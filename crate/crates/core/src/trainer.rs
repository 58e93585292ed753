//! Training loop: random-policy pretraining, then epochs of model learning,
//! policy learning in imagination and data collection, with periodic greedy
//! evaluation, CSV metrics and resumable checkpoints.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{critic_loss_var, policy_objective, ActionScale, Agent, CriticBatch};
use crate::checkpoint::Archive;
use crate::config::RunConfig;
use crate::error::{LvmError, Result};
use crate::imagination::{imagine_var, rollout_noise};
use crate::lane_sim::{Action, EnvConfig, LaneEnv};
use crate::latent_model::{sequence_noise, LatentBatch, LatentState, Rssm, SequenceInputs};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::nn::{Adam, AdamConfig, Tape};
use crate::replay::ReplayBuffer;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    /// Random-policy episodes collected before training.
    pub seed_episodes: usize,
    /// Model updates on the seed episodes before the first epoch.
    pub pretrain_steps: usize,
    pub max_epochs: usize,
    /// Model and policy updates per epoch.
    pub train_freq: usize,
    /// Episodes collected per epoch.
    pub data_collect_freq: usize,
    pub batch: usize,
    pub seq_len: usize,
    pub horizon: usize,
    pub traj_num: usize,
    pub model_lr: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub clip_norm: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Stop once this many environment steps were taken; 0 disables the cap.
    pub max_env_steps: u64,
    pub buffer_capacity: usize,
    pub single_critic: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            seed_episodes: 5,
            pretrain_steps: 100,
            max_epochs: 300,
            train_freq: 100,
            data_collect_freq: 1,
            batch: 50,
            seq_len: 50,
            horizon: 15,
            traj_num: 3,
            model_lr: 1e-3,
            critic_lr: 1e-4,
            actor_lr: 1e-4,
            clip_norm: 100.0,
            eval_every: 10,
            eval_episodes: 20,
            max_env_steps: 0,
            buffer_capacity: crate::replay::DEFAULT_CAPACITY,
            single_critic: false,
        }
    }
}

impl TrainerConfig {
    pub fn desk() -> Self {
        TrainerConfig {
            batch: 16,
            seq_len: 16,
            horizon: 10,
            traj_num: 2,
            critic_lr: 1e-3,
            ..TrainerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("trainer.seed_episodes", self.seed_episodes),
            ("trainer.max_epochs", self.max_epochs),
            ("trainer.train_freq", self.train_freq),
            ("trainer.data_collect_freq", self.data_collect_freq),
            ("trainer.batch", self.batch),
            ("trainer.horizon", self.horizon),
            ("trainer.traj_num", self.traj_num),
            ("trainer.eval_every", self.eval_every),
            ("trainer.eval_episodes", self.eval_episodes),
            ("trainer.buffer_capacity", self.buffer_capacity),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(LvmError::config(field, "must be >= 1"));
            }
        }
        if self.seq_len < 2 {
            return Err(LvmError::config("trainer.seq_len", "must be >= 2"));
        }
        for (field, v) in [
            ("trainer.model_lr", self.model_lr),
            ("trainer.critic_lr", self.critic_lr),
            ("trainer.actor_lr", self.actor_lr),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LvmError::config(field, "must be a finite value >= 0"));
            }
        }
        if !(self.clip_norm > 0.0) {
            return Err(LvmError::config("trainer.clip_norm", "must be > 0"));
        }
        Ok(())
    }
}

/// Summary of greedy evaluation episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mean_return: f64,
    pub std_return: f64,
    /// Mean of |y| over every step of every episode [m].
    pub mean_abs_lateral_error: f64,
    pub mean_episode_length: f64,
    pub episodes: usize,
    /// Mean of (critic estimate − empirical discounted return) over the
    /// visited states; only for learned policies.
    pub value_bias: Option<f64>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "episodes={}\nmean_return={}\nstd_return={}\nmean_abs_lateral_error={}\nmean_episode_length={}\n",
            self.episodes, self.mean_return, self.std_return, self.mean_abs_lateral_error, self.mean_episode_length
        );
        if let Some(b) = self.value_bias {
            s.push_str(&format!("value_bias={b}\n"));
        }
        s
    }
}

/// One evaluation episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub episode_return: f64,
    /// |y| after every step.
    pub lateral: Vec<f64>,
    /// Critic estimate at each visited state (learned policies only).
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
}

/// Policy used for evaluation rollouts.
#[derive(Clone, Copy)]
pub enum EvalPolicy<'a> {
    /// Uniform actions within the limits.
    Random,
    /// Greedy actions through the latent filter.
    Learned { model: &'a Rssm<f32>, agent: &'a Agent<f32> },
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Episode seeds used for training-time collection.
pub fn train_episode_seed(run_seed: u64, index: u64) -> u64 {
    splitmix(splitmix(run_seed) ^ index)
}

/// Fixed evaluation seeds of a run, disjoint in practice from training seeds.
pub fn eval_seeds(run_seed: u64, episodes: usize) -> Vec<u64> {
    let base = splitmix(run_seed ^ 0x5eed_e7a1_0000_0000);
    (0..episodes as u64).map(|i| splitmix(base ^ i)).collect()
}

fn uniform_action(env: &EnvConfig, rng: &mut impl Rng) -> Action {
    Action::new(
        rng.random_range(env.accel_min..=env.accel_max),
        rng.random_range(-env.steer_max..=env.steer_max),
    )
}

fn to_f32(a: Action) -> [f32; 2] {
    [a.accel as f32, a.steer as f32]
}

/// Runs noise-free episodes on the given seeds.
pub fn evaluate_policy(
    env_cfg: &EnvConfig,
    policy: EvalPolicy<'_>,
    seeds: &[u64],
    gamma: f64,
) -> Result<(EvalReport, Vec<EpisodeTrace>)> {
    if seeds.is_empty() {
        return Err(LvmError::InsufficientData("evaluation needs at least one episode".into()));
    }
    let scale = ActionScale::from_env(env_cfg);
    let mut traces = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut env = LaneEnv::new(env_cfg.clone())?;
        let (mut obs, _) = env.reset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed));
        let mut trace = EpisodeTrace {
            seed,
            episode_return: 0.0,
            lateral: Vec::new(),
            values: Vec::new(),
            rewards: Vec::new(),
        };
        let mut z = None;
        let mut prev_u = vec![0.0f32; 2];
        loop {
            let action = match policy {
                EvalPolicy::Random => uniform_action(env_cfg, &mut rng),
                EvalPolicy::Learned { model, agent } => {
                    let prev = z.take().unwrap_or_else(|| LatentState::zeros(&model.cfg));
                    let next = model.filter_step(&prev, &prev_u, &obs.pixels)?;
                    trace.values.push(agent.value(&next));
                    let a = agent.actor.act(&next);
                    z = Some(next);
                    a
                }
            };
            let out = env.step(action)?;
            let stored = to_f32(env_cfg.clamp_action(action));
            prev_u = scale.normalize(&stored).iter().map(|&v| v as f32).collect();
            trace.episode_return += out.reward;
            trace.rewards.push(out.reward);
            trace.lateral.push(out.info.y.abs());
            obs = out.obs;
            if out.done {
                break;
            }
        }
        traces.push(trace);
    }
    let n = traces.len() as f64;
    let mean_return = traces.iter().map(|t| t.episode_return).sum::<f64>() / n;
    let var = traces.iter().map(|t| (t.episode_return - mean_return).powi(2)).sum::<f64>() / n;
    let steps: usize = traces.iter().map(|t| t.lateral.len()).sum();
    let lat = traces.iter().flat_map(|t| t.lateral.iter()).sum::<f64>() / steps as f64;
    let value_bias = match policy {
        EvalPolicy::Random => None,
        EvalPolicy::Learned { .. } => {
            let mut total = 0.0;
            for t in &traces {
                let mut g = 0.0;
                for i in (0..t.rewards.len()).rev() {
                    g = t.rewards[i] + gamma * g;
                    total += t.values[i] - g;
                }
            }
            Some(total / steps as f64)
        }
    };
    Ok((
        EvalReport {
            mean_return,
            std_return: var.sqrt(),
            mean_abs_lateral_error: lat,
            mean_episode_length: steps as f64 / n,
            episodes: traces.len(),
            value_bias,
        },
        traces,
    ))
}

/// Scalar results of one model-and-policy update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub j_rssm: f64,
    pub j_o: f64,
    pub j_r: f64,
    pub j_d: f64,
    pub kl: f64,
    pub j_v1: f64,
    pub j_v2: Option<f64>,
    pub j_pi: f64,
    pub value_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectSummary {
    pub episodes: usize,
    pub steps: usize,
    pub mean_return: f64,
}

/// Owns the environment, buffer, networks, optimisers and random stream of
/// one run.
pub struct Trainer {
    cfg: RunConfig,
    env: LaneEnv,
    pub buffer: ReplayBuffer,
    pub model: Rssm<f32>,
    pub agent: Agent<f32>,
    model_opt: Adam<f32>,
    actor_opt: Adam<f32>,
    critic1_opt: Adam<f32>,
    critic2_opt: Option<Adam<f32>>,
    rng: ChaCha8Rng,
    scale: ActionScale,
    pub epoch: usize,
    pub grad_steps: u64,
    pub env_steps: u64,
    episodes_started: u64,
    pretrained: bool,
}

/// Reads the run configuration echoed into a checkpoint manifest.
pub fn checkpoint_config(dir: &Path) -> Result<RunConfig> {
    let a = Archive::<f32>::load(dir)?;
    let mut cfg = RunConfig::desk();
    for (k, v) in &a.meta {
        if let Some(key) = k.strip_prefix("config.") {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

/// Config keys that may change between a checkpoint and its resumption.
const RESUMABLE_KEYS: &[&str] = &["out", "trainer.max_epochs", "trainer.max_env_steps"];

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let env = LaneEnv::new(cfg.env.clone())?;
        let model_cfg = cfg.model_config();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scale = ActionScale::from_env(&cfg.env);
        let model = Rssm::new(model_cfg.clone(), &mut rng)?;
        let agent = Agent::new(cfg.agent.clone(), &model_cfg, scale.clone(), !cfg.trainer.single_critic, &mut rng)?;
        let t = &cfg.trainer;
        let adam = |lr: f64| AdamConfig {
            lr,
            clip_norm: Some(t.clip_norm),
            ..AdamConfig::default()
        };
        let model_opt = Adam::new(&model.params, adam(t.model_lr));
        let actor_opt = Adam::new(&agent.actor.params, adam(t.actor_lr));
        let critic1_opt = Adam::new(&agent.critic1.params, adam(t.critic_lr));
        let critic2_opt = agent.critic2.as_ref().map(|c| Adam::new(&c.params, adam(t.critic_lr)));
        let buffer = ReplayBuffer::new(t.buffer_capacity, cfg.env.img_channels, cfg.env.img_size, 2);
        Ok(Trainer {
            cfg,
            env,
            buffer,
            model,
            agent,
            model_opt,
            actor_opt,
            critic1_opt,
            critic2_opt,
            rng,
            scale,
            epoch: 0,
            grad_steps: 0,
            env_steps: 0,
            episodes_started: 0,
            pretrained: false,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    fn next_episode_seed(&mut self) -> u64 {
        let s = train_episode_seed(self.cfg.seed, self.episodes_started);
        self.episodes_started += 1;
        s
    }

    fn collect_random_episode(&mut self) -> Result<(usize, f64)> {
        let seed = self.next_episode_seed();
        let (mut obs, _) = self.env.reset(seed);
        let (mut steps, mut ret) = (0, 0.0);
        loop {
            let action = uniform_action(&self.cfg.env, &mut self.rng);
            let out = self.env.step(action)?;
            let stored = to_f32(self.cfg.env.clamp_action(action));
            self.buffer
                .append_step(&obs.pixels, &stored, out.reward as f32, &out.obs.pixels, out.done)?;
            steps += 1;
            ret += out.reward;
            obs = out.obs;
            if out.done {
                break;
            }
        }
        self.env_steps += steps as u64;
        Ok((steps, ret))
    }

    /// Collects the seed episodes with uniform random actions and fits the
    /// model on them for `pretrain_steps` updates.
    pub fn pretrain(&mut self) -> Result<()> {
        if self.pretrained || self.buffer.num_episodes() > 0 {
            return Err(LvmError::InvalidState("pretraining needs a fresh buffer".into()));
        }
        for _ in 0..self.cfg.trainer.seed_episodes {
            self.collect_random_episode()?;
        }
        for _ in 0..self.cfg.trainer.pretrain_steps {
            self.model_step()?;
        }
        self.pretrained = true;
        Ok(())
    }

    fn sample_inputs(&mut self) -> Result<SequenceInputs<f32>> {
        let t = &self.cfg.trainer;
        let batch = self.buffer.sample_sequences(t.batch, t.seq_len, &mut self.rng)?;
        let scale = &self.scale;
        SequenceInputs::from_batch(&batch, &self.model.cfg, |a| scale.normalize(a))
    }

    /// One ascent step on the ELBO. Returns the scalar terms and the
    /// posterior samples usable as imagination starts.
    fn model_step(&mut self) -> Result<(StepMetrics, LatentBatch<f32>)> {
        let inputs = self.sample_inputs()?;
        let noise = sequence_noise(&self.model.cfg, inputs.batch, inputs.len, &mut self.rng);
        let tape = Tape::new();
        let p = self.model.bind(&tape, true);
        let elbo = self.model.elbo_var(&p, &tape, &inputs, &noise);
        let f = |v: crate::nn::Var<'_, f32>| v.value().item() as f64;
        let m = StepMetrics {
            j_rssm: f(elbo.j_rssm),
            j_o: f(elbo.j_o),
            j_r: f(elbo.j_r),
            j_d: f(elbo.j_d),
            kl: f(elbo.kl),
            ..StepMetrics::default()
        };
        // every index but the last of each sequence starts a rollout
        let z = elbo.observed.stacked().value();
        let n = (inputs.len - 1) * inputs.batch;
        let starts = LatentBatch {
            h: z.h.slice_rows(0, n),
            s: z.s.slice_rows(0, n),
        };
        let mut grads = tape.backward(-elbo.j_rssm);
        let g = p.grads(&mut grads);
        drop(grads);
        drop(p);
        self.model_opt.step(&mut self.model.params, g);
        if !self.model.params.is_finite() {
            return Err(LvmError::InvalidState("model parameters became non-finite".into()));
        }
        self.grad_steps += 1;
        Ok((m, starts))
    }

    /// Actor and critic updates from imagined rollouts of `starts`.
    fn policy_step(&mut self, starts: &LatentBatch<f32>, m: &mut StepMetrics) -> Result<()> {
        let t = self.cfg.trainer.clone();
        let a = self.cfg.agent.clone();
        let noise = rollout_noise(self.model.cfg.stoch, starts.len() * t.traj_num, t.horizon, &mut self.rng);

        let (actor_grads, batch) = {
            let tape = Tape::new();
            let mp = self.model.bind(&tape, false);
            let ap = self.agent.actor.bind(&tape, true);
            let c1 = self.agent.critic1.bind(&tape, false);
            let c2 = self.agent.critic2.as_ref().map(|c| (c, c.bind(&tape, false)));
            let image = imagine_var(
                &tape,
                &self.model,
                &mp,
                &self.agent.actor,
                &ap,
                starts,
                t.horizon,
                t.traj_num,
                &noise,
            )?;
            let mut critics = vec![(&self.agent.critic1, &c1)];
            if let Some((c, p)) = &c2 {
                critics.push((*c, p));
            }
            let obj = policy_objective(&image, &critics, a.gamma, a.lambda, a.objective);
            m.j_pi = obj.j_pi.value().item() as f64;
            m.value_mean = obj.value_mean;
            let batch = CriticBatch::from_objective(&image, &obj);
            let mut grads = tape.backward(-obj.j_pi);
            (ap.grads(&mut grads), batch)
        };

        {
            let tape = Tape::new();
            let p = self.agent.critic1.bind(&tape, true);
            let loss = critic_loss_var(&tape, &self.agent.critic1, &p, &batch);
            m.j_v1 = loss.value().item() as f64;
            let mut grads = tape.backward(loss);
            let g = p.grads(&mut grads);
            drop(grads);
            drop(p);
            self.critic1_opt.step(&mut self.agent.critic1.params, g);
        }
        if let (Some(critic), Some(opt)) = (self.agent.critic2.as_mut(), self.critic2_opt.as_mut()) {
            let tape = Tape::new();
            let p = critic.bind(&tape, true);
            let loss = critic_loss_var(&tape, critic, &p, &batch);
            m.j_v2 = Some(loss.value().item() as f64);
            let mut grads = tape.backward(loss);
            let g = p.grads(&mut grads);
            drop(grads);
            drop(p);
            opt.step(&mut critic.params, g);
        }
        self.actor_opt.step(&mut self.agent.actor.params, actor_grads);
        let finite = self.agent.actor.params.is_finite()
            && self.agent.critics().iter().all(|c| c.params.is_finite());
        if !finite {
            return Err(LvmError::InvalidState("agent parameters became non-finite".into()));
        }
        Ok(())
    }

    /// One round: model update, imagination, critic updates, actor update.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let (mut m, starts) = self.model_step()?;
        self.policy_step(&starts, &mut m)?;
        Ok(m)
    }

    /// Runs full exploration episodes, feeding each step through the latent
    /// filter, and appends every transition to the buffer.
    pub fn collect_data(&mut self, episodes: usize, sigma: f64) -> Result<CollectSummary> {
        let (mut steps, mut total) = (0, 0.0);
        for _ in 0..episodes {
            let seed = self.next_episode_seed();
            let (mut obs, _) = self.env.reset(seed);
            let mut z = LatentState::zeros(&self.model.cfg);
            let mut prev_u = vec![0.0f32; 2];
            loop {
                z = self.model.filter_step(&z, &prev_u, &obs.pixels)?;
                let u = self.agent.actor.explore_normalized(&z, sigma, &mut self.rng);
                let action = self.scale.to_env(&u);
                let out = self.env.step(action)?;
                let stored = to_f32(action);
                self.buffer
                    .append_step(&obs.pixels, &stored, out.reward as f32, &out.obs.pixels, out.done)?;
                prev_u = self.scale.normalize(&stored).iter().map(|&v| v as f32).collect();
                steps += 1;
                total += out.reward;
                obs = out.obs;
                if out.done {
                    break;
                }
            }
        }
        self.env_steps += steps as u64;
        Ok(CollectSummary {
            episodes,
            steps,
            mean_return: if episodes > 0 { total / episodes as f64 } else { 0.0 },
        })
    }

    /// Greedy evaluation on the run's fixed evaluation seeds.
    pub fn evaluate(&self, episodes: usize) -> Result<(EvalReport, Vec<EpisodeTrace>)> {
        let policy = EvalPolicy::Learned {
            model: &self.model,
            agent: &self.agent,
        };
        evaluate_policy(&self.cfg.env, policy, &eval_seeds(self.cfg.seed, episodes), self.cfg.agent.gamma)
    }

    /// The uniform-random baseline on the same evaluation seeds.
    pub fn evaluate_random(&self, episodes: usize) -> Result<EvalReport> {
        Ok(evaluate_policy(&self.cfg.env, EvalPolicy::Random, &eval_seeds(self.cfg.seed, episodes), self.cfg.agent.gamma)?.0)
    }

    /// One epoch: `train_freq` update rounds, then `data_collect_freq`
    /// exploration episodes, then an evaluation every `eval_every` epochs.
    pub fn train_iteration(&mut self) -> Result<MetricsRow> {
        if !self.pretrained {
            return Err(LvmError::InvalidState("pretrain() must run before training".into()));
        }
        let t = self.cfg.trainer.clone();
        let mut sum = StepMetrics::default();
        let mut v2 = 0.0;
        for _ in 0..t.train_freq {
            let m = self.train_step()?;
            sum.j_rssm += m.j_rssm;
            sum.j_o += m.j_o;
            sum.j_r += m.j_r;
            sum.j_d += m.j_d;
            sum.j_v1 += m.j_v1;
            sum.j_pi += m.j_pi;
            v2 += m.j_v2.unwrap_or(0.0);
        }
        let n = t.train_freq as f64;
        let collect = self.collect_data(t.data_collect_freq, self.cfg.agent.sigma)?;
        self.epoch += 1;
        let mut row = MetricsRow {
            epoch: self.epoch,
            env_steps: self.env_steps,
            grad_steps: self.grad_steps,
            j_rssm: sum.j_rssm / n,
            j_o: sum.j_o / n,
            j_r: sum.j_r / n,
            j_d: sum.j_d / n,
            j_v1: sum.j_v1 / n,
            j_v2: self.agent.critic2.as_ref().map(|_| v2 / n),
            j_pi: sum.j_pi / n,
            collect_return: collect.mean_return,
            ..MetricsRow::default()
        };
        if self.epoch % t.eval_every == 0 {
            let (report, _) = self.evaluate(t.eval_episodes)?;
            row.eval_return = Some(report.mean_return);
            row.eval_lat_err = Some(report.mean_abs_lateral_error);
            row.eval_length = Some(report.mean_episode_length);
            row.value_bias = report.value_bias;
        }
        if !row.is_finite() {
            return Err(LvmError::InvalidState(format!("non-finite metrics at epoch {}", self.epoch)));
        }
        Ok(row)
    }

    /// Whether another epoch is allowed by `max_epochs` and `max_env_steps`.
    pub fn can_continue(&self) -> bool {
        let t = &self.cfg.trainer;
        self.epoch < t.max_epochs && (t.max_env_steps == 0 || self.env_steps < t.max_env_steps)
    }

    /// Pretrains if needed, then runs epochs until the budget is spent or
    /// `stop_at_epoch` is reached, appending each row to `log`.
    pub fn run(&mut self, log: &mut MetricsLog, stop_at_epoch: Option<usize>) -> Result<()> {
        if !self.pretrained {
            self.pretrain()?;
        }
        while self.can_continue() && stop_at_epoch.is_none_or(|s| self.epoch < s) {
            let row = self.train_iteration()?;
            log.append(&row)?;
        }
        Ok(())
    }

    /// Parameters, optimiser moments, random stream, counters and the
    /// replay buffer.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        let mut a = Archive::<f32>::new();
        for (k, v) in self.cfg.entries() {
            a.set_meta(format!("config.{k}"), v);
        }
        a.set_meta("state.epoch", self.epoch);
        a.set_meta("state.grad_steps", self.grad_steps);
        a.set_meta("state.env_steps", self.env_steps);
        a.set_meta("state.episodes_started", self.episodes_started);
        a.set_meta("state.pretrained", self.pretrained);
        let seed: String = self.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        a.set_meta("rng.seed", seed);
        a.set_meta("rng.stream", self.rng.get_stream());
        a.set_meta("rng.word_pos", self.rng.get_word_pos());
        a.push_params("model", &self.model.params);
        a.push_params("actor", &self.agent.actor.params);
        a.push_params("critic1", &self.agent.critic1.params);
        a.push_adam("model_opt", &self.model.params, &self.model_opt);
        a.push_adam("actor_opt", &self.agent.actor.params, &self.actor_opt);
        a.push_adam("critic1_opt", &self.agent.critic1.params, &self.critic1_opt);
        if let (Some(c), Some(o)) = (&self.agent.critic2, &self.critic2_opt) {
            a.push_params("critic2", &c.params);
            a.push_adam("critic2_opt", &c.params, o);
        }
        a.save(dir)?;
        self.buffer.save(&dir.join("replay"))
    }

    /// Rebuilds a trainer from a checkpoint, rejecting configuration
    /// differences other than the run budget and output location.
    pub fn load_checkpoint(dir: &Path, cfg: RunConfig) -> Result<Self> {
        let a = Archive::<f32>::load(dir)?;
        let path = dir.join(crate::checkpoint::MANIFEST);
        for (k, v) in cfg.entries() {
            if RESUMABLE_KEYS.contains(&k.as_str()) {
                continue;
            }
            match a.meta(&format!("config.{k}")) {
                Some(found) if found == v => {}
                found => {
                    return Err(LvmError::CheckpointMismatch {
                        field: k,
                        expected: v,
                        found: found.unwrap_or("<missing>").to_string(),
                    })
                }
            }
        }
        let mut t = Trainer::new(cfg)?;
        let corrupt = |what: &str| LvmError::CorruptCheckpoint {
            path: path.clone(),
            reason: format!("missing or invalid `{what}`"),
        };
        let get = |k: &str| a.meta(k).ok_or_else(|| corrupt(k));
        let num = |k: &str| get(k).and_then(|v| v.parse::<u64>().map_err(|_| corrupt(k)));
        t.epoch = num("state.epoch")? as usize;
        t.grad_steps = num("state.grad_steps")?;
        t.env_steps = num("state.env_steps")?;
        t.episodes_started = num("state.episodes_started")?;
        t.pretrained = get("state.pretrained")?.parse().map_err(|_| corrupt("state.pretrained"))?;
        let seed_hex = get("rng.seed")?;
        let mut seed = [0u8; 32];
        if seed_hex.len() != 64 {
            return Err(corrupt("rng.seed"));
        }
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| corrupt("rng.seed"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(num("rng.stream")?);
        rng.set_word_pos(get("rng.word_pos")?.parse::<u128>().map_err(|_| corrupt("rng.word_pos"))?);
        t.rng = rng;

        a.restore_params("model", &mut t.model.params, &path)?;
        a.restore_params("actor", &mut t.agent.actor.params, &path)?;
        a.restore_params("critic1", &mut t.agent.critic1.params, &path)?;
        a.restore_adam("model_opt", &t.model.params, &mut t.model_opt, &path)?;
        a.restore_adam("actor_opt", &t.agent.actor.params, &mut t.actor_opt, &path)?;
        a.restore_adam("critic1_opt", &t.agent.critic1.params, &mut t.critic1_opt, &path)?;
        if let (Some(c), Some(o)) = (t.agent.critic2.as_mut(), t.critic2_opt.as_mut()) {
            a.restore_params("critic2", &mut c.params, &path)?;
            a.restore_adam("critic2_opt", &c.params, o, &path)?;
        }
        t.buffer.load(&dir.join("replay"))?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_run() -> RunConfig {
        let mut cfg = RunConfig::desk();
        cfg.env.max_steps = 60;
        cfg.model.deter = 8;
        cfg.model.stoch = 4;
        cfg.model.embed = 8;
        cfg.model.hidden = 8;
        cfg.model.cnn_depth = 2;
        cfg.agent.units = 8;
        let t = &mut cfg.trainer;
        t.seed_episodes = 3;
        t.pretrain_steps = 2;
        t.train_freq = 2;
        t.batch = 3;
        t.seq_len = 4;
        t.horizon = 3;
        t.eval_every = 2;
        t.eval_episodes = 2;
        cfg
    }

    #[test]
    fn pretraining_fills_exactly_the_seed_episodes() {
        let mut t = Trainer::new(tiny_run()).unwrap();
        t.pretrain().unwrap();
        assert_eq!(t.buffer.num_episodes(), 3);
        assert_eq!(t.buffer.total_steps() as u64, t.env_steps);
        assert!(t.pretrain().is_err());
    }

    #[test]
    fn training_requires_pretraining() {
        let mut t = Trainer::new(tiny_run()).unwrap();
        assert!(t.train_iteration().is_err());
    }

    #[test]
    fn iterations_produce_finite_metrics_and_grow_buffer() {
        let mut t = Trainer::new(tiny_run()).unwrap();
        t.pretrain().unwrap();
        let before = t.buffer.total_steps();
        let r1 = t.train_iteration().unwrap();
        assert!(r1.is_finite() && r1.eval_return.is_none() && r1.j_v2.is_some());
        assert_eq!(t.buffer.num_episodes(), 4);
        assert_eq!(t.buffer.total_steps() as u64, t.env_steps);
        assert!(t.buffer.total_steps() > before);
        let r2 = t.train_iteration().unwrap();
        assert!(r2.eval_return.is_some() && r2.value_bias.is_some());
        assert_eq!(r2.grad_steps, 2 + 4);
    }

    #[test]
    fn single_critic_has_no_second_loss() {
        let mut cfg = tiny_run();
        cfg.trainer.single_critic = true;
        let mut t = Trainer::new(cfg).unwrap();
        assert!(t.agent.critic2.is_none());
        t.pretrain().unwrap();
        assert!(t.train_iteration().unwrap().j_v2.is_none());
    }

    #[test]
    fn same_seed_same_pretrained_parameters() {
        let mut a = Trainer::new(tiny_run()).unwrap();
        let mut b = Trainer::new(tiny_run()).unwrap();
        a.pretrain().unwrap();
        b.pretrain().unwrap();
        assert_eq!(a.model.params.tensors().collect::<Vec<_>>(), b.model.params.tensors().collect::<Vec<_>>());
    }

    #[test]
    fn greedy_collection_matches_evaluation_on_same_seed() {
        let mut t = Trainer::new(tiny_run()).unwrap();
        t.pretrain().unwrap();
        let seed = train_episode_seed(t.cfg.seed, t.episodes_started);
        let c = t.collect_data(1, 0.0).unwrap();
        let policy = EvalPolicy::Learned {
            model: &t.model,
            agent: &t.agent,
        };
        let (r, _) = evaluate_policy(&t.cfg.env, policy, &[seed], 0.99).unwrap();
        assert!((c.mean_return - r.mean_return).abs() < 1e-9, "{} vs {}", c.mean_return, r.mean_return);
    }

    #[test]
    fn checkpoint_mismatch_names_the_field() {
        let mut t = Trainer::new(tiny_run()).unwrap();
        t.pretrain().unwrap();
        let dir = std::env::temp_dir().join(format!("lvm_trainer_ckpt_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        t.save_checkpoint(&dir).unwrap();
        let mut other = tiny_run();
        other.trainer.horizon = 4;
        let err = Trainer::load_checkpoint(&dir, other).err().unwrap().to_string();
        assert!(err.contains("trainer.horizon"), "{err}");
        assert_eq!(checkpoint_config(&dir).unwrap(), tiny_run());
        let back = Trainer::load_checkpoint(&dir, tiny_run()).unwrap();
        assert_eq!(back.buffer.total_steps(), t.buffer.total_steps());
        std::fs::remove_dir_all(dir).ok();
    }
}
