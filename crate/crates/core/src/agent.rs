//! Actor and twin critics operating on latent features `[s, h]`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LvmError, Result};
use crate::imagination::ImaginedVar;
use crate::lane_sim::{Action, EnvConfig};
use crate::latent_model::{LatentState, LatentVar, RssmConfig};
use crate::nn::{Activation, Bound, Mlp, ParamSet, Scalar, Tape, Tensor, Var};

/// Affine map between normalised actions in [−1, 1]^d and environment units.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionScale {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionScale {
    pub fn from_env(cfg: &EnvConfig) -> Self {
        let b = cfg.action_bounds();
        ActionScale {
            low: b.iter().map(|x| x.0).collect(),
            high: b.iter().map(|x| x.1).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn to_env(&self, u: &[f64]) -> Action {
        let v: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let mid = 0.5 * (self.low[i] + self.high[i]);
                let half = 0.5 * (self.high[i] - self.low[i]);
                (mid + half * x).clamp(self.low[i], self.high[i])
            })
            .collect();
        Action::from_slice(&v)
    }

    pub fn normalize(&self, a: &[f32]) -> Vec<f64> {
        a.iter()
            .enumerate()
            .map(|(i, &x)| {
                let mid = 0.5 * (self.low[i] + self.high[i]);
                let half = 0.5 * (self.high[i] - self.low[i]);
                ((x as f64 - mid) / half).clamp(-1.0, 1.0)
            })
            .collect()
    }
}

/// Which horizon entries of the value target enter the actor objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActorObjective {
    /// Sum of the value target over every imagined offset.
    HorizonSum,
    /// Value target at the start state only.
    StartOnly,
}

impl ActorObjective {
    pub fn as_str(self) -> &'static str {
        match self {
            ActorObjective::HorizonSum => "horizon_sum",
            ActorObjective::StartOnly => "start_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "horizon_sum" => Some(ActorObjective::HorizonSum),
            "start_only" => Some(ActorObjective::StartOnly),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    /// Hidden units of each of the two hidden layers.
    pub units: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// Exploration noise in normalised action units.
    pub sigma: f64,
    pub objective: ActorObjective,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            units: 256,
            gamma: 0.99,
            lambda: 0.95,
            sigma: 0.3,
            objective: ActorObjective::HorizonSum,
        }
    }
}

impl AgentConfig {
    pub fn desk() -> Self {
        AgentConfig {
            units: 64,
            ..AgentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.units == 0 {
            return Err(LvmError::config("agent.units", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(LvmError::config("agent.gamma", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(LvmError::config("agent.lambda", "must lie in [0, 1]"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(LvmError::config("agent.sigma", "must be >= 0"));
        }
        Ok(())
    }
}

fn feature_tensor<T: Scalar>(z: &LatentState<T>) -> Tensor<T> {
    let f = z.features();
    Tensor::new(1, f.len(), f)
}

/// Deterministic policy `tanh(MLP([s, h]))`, scaled to the action limits.
#[derive(Clone, Debug)]
pub struct Actor<T: Scalar> {
    pub params: ParamSet<T>,
    net: Mlp,
    pub scale: ActionScale,
}

impl<T: Scalar> Actor<T> {
    pub fn new(model: &RssmConfig, units: usize, scale: ActionScale, rng: &mut impl Rng) -> Self {
        let mut ps = ParamSet::new();
        let net = Mlp::new(
            &mut ps,
            "actor",
            model.feature_len(),
            &[units, units],
            scale.dim(),
            Activation::Elu,
            rng,
        );
        Actor { params: ps, net, scale }
    }

    pub fn with_params(&self, params: ParamSet<T>) -> Self {
        assert_eq!(params.names(), self.params.names());
        Actor { params, ..self.clone() }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        self.params.bind(tape, trainable)
    }

    /// Normalised action in [−1, 1]^d for each row of `z`.
    pub fn forward_var<'t>(&self, p: &Bound<'t, T>, z: LatentVar<'t, T>) -> Var<'t, T> {
        self.net.forward(p, z.features()).tanh()
    }

    pub fn act_normalized(&self, z: &LatentState<T>) -> Vec<f64> {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let x = tape.constant(feature_tensor(z));
        let u = self.net.forward(&p, x).tanh().value();
        u.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    pub fn act(&self, z: &LatentState<T>) -> Action {
        self.scale.to_env(&self.act_normalized(z))
    }

    /// Greedy action plus Gaussian noise of std `sigma` in normalised
    /// coordinates, clamped to [−1, 1].
    pub fn explore_normalized(&self, z: &LatentState<T>, sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
        let mut u = self.act_normalized(z);
        if sigma > 0.0 {
            for x in &mut u {
                let xi: f64 = rng.sample(StandardNormal);
                *x = (*x + sigma * xi).clamp(-1.0, 1.0);
            }
        }
        u
    }

    pub fn explore_action(&self, z: &LatentState<T>, sigma: f64, rng: &mut impl Rng) -> Action {
        self.scale.to_env(&self.explore_normalized(z, sigma, rng))
    }
}

/// State-value network `MLP([s, h]) → ℝ`.
#[derive(Clone, Debug)]
pub struct Critic<T: Scalar> {
    pub params: ParamSet<T>,
    net: Mlp,
}

impl<T: Scalar> Critic<T> {
    pub fn new(model: &RssmConfig, units: usize, name: &str, rng: &mut impl Rng) -> Self {
        let mut ps = ParamSet::new();
        let net = Mlp::new(&mut ps, name, model.feature_len(), &[units, units], 1, Activation::Elu, rng);
        Critic { params: ps, net }
    }

    pub fn with_params(&self, params: ParamSet<T>) -> Self {
        assert_eq!(params.names(), self.params.names());
        Critic { params, ..self.clone() }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        self.params.bind(tape, trainable)
    }

    pub fn value_var<'t>(&self, p: &Bound<'t, T>, features: Var<'t, T>) -> Var<'t, T> {
        self.net.forward(p, features)
    }

    pub fn value(&self, z: &LatentState<T>) -> T {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        self.value_var(&p, tape.constant(feature_tensor(z))).value().item()
    }
}

/// Policy with one or two critics.
#[derive(Clone, Debug)]
pub struct Agent<T: Scalar> {
    pub cfg: AgentConfig,
    pub actor: Actor<T>,
    pub critic1: Critic<T>,
    /// Absent in the single-critic ablation.
    pub critic2: Option<Critic<T>>,
}

impl<T: Scalar> Agent<T> {
    pub fn new(
        cfg: AgentConfig,
        model: &RssmConfig,
        scale: ActionScale,
        double_critic: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let actor = Actor::new(model, cfg.units, scale, rng);
        let critic1 = Critic::new(model, cfg.units, "critic1", rng);
        let critic2 = double_critic.then(|| Critic::new(model, cfg.units, "critic2", rng));
        Ok(Agent {
            cfg,
            actor,
            critic1,
            critic2,
        })
    }

    pub fn critics(&self) -> Vec<&Critic<T>> {
        std::iter::once(&self.critic1).chain(self.critic2.as_ref()).collect()
    }

    /// Critic estimate of a state: the minimum over the available critics.
    pub fn value(&self, z: &LatentState<T>) -> f64 {
        self.critics()
            .iter()
            .map(|c| c.value(z).to_f64().unwrap_or(f64::NAN))
            .fold(f64::INFINITY, f64::min)
    }
}

/// TD(λ) returns over a horizon of `H` steps.
///
/// `boot[k]` is the critic value of the state reached after step `k`, so the
/// `n`-step estimate from offset `t` is
/// `Σ_{τ<n} γ^τ r[t+τ] + γ^n boot[t+n−1]`. The backward recursion below is
/// algebraically identical to the weighted sum of those estimates.
pub fn lambda_return(rewards: &[f64], boot: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if rewards.len() != boot.len() {
        return Err(LvmError::LengthMismatch {
            expected: rewards.len(),
            got: boot.len(),
        });
    }
    let h = rewards.len();
    let mut out = vec![0.0; h];
    let mut next = 0.0;
    for t in (0..h).rev() {
        out[t] = if t + 1 == h {
            rewards[t] + gamma * boot[t]
        } else {
            rewards[t] + gamma * ((1.0 - lambda) * boot[t] + lambda * next)
        };
        next = out[t];
    }
    Ok(out)
}

/// [`lambda_return`] over columns of a tape, one entry per time step.
pub fn lambda_return_var<'t, T: Scalar>(
    rewards: &[Var<'t, T>],
    boot: &[Var<'t, T>],
    gamma: f64,
    lambda: f64,
) -> Vec<Var<'t, T>> {
    assert_eq!(rewards.len(), boot.len(), "rewards and bootstrap lengths differ");
    let h = rewards.len();
    let g = T::from_f64_lossy(gamma);
    let gl = T::from_f64_lossy(gamma * lambda);
    let g1l = T::from_f64_lossy(gamma * (1.0 - lambda));
    let mut out: Vec<Option<Var<'t, T>>> = vec![None; h];
    for t in (0..h).rev() {
        let v = match out.get(t + 1).copied().flatten() {
            None => rewards[t] + boot[t].scale(g),
            Some(next) => rewards[t] + boot[t].scale(g1l) + next.scale(gl),
        };
        out[t] = Some(v);
    }
    out.into_iter().map(Option::unwrap).collect()
}

/// Elementwise minimum of the per-critic λ-returns.
pub fn min_target(returns: &[Vec<f64>]) -> Vec<f64> {
    let mut out = returns[0].clone();
    for r in &returns[1..] {
        for (o, &v) in out.iter_mut().zip(r) {
            *o = o.min(v);
        }
    }
    out
}

/// The actor objective and value targets of an imagined batch.
pub struct PolicyObjective<'t, T: Scalar> {
    /// To be maximised; gradient flows into the actor through the rollout.
    pub j_pi: Var<'t, T>,
    /// `H` columns of `M×1` targets.
    pub targets: Vec<Var<'t, T>>,
    /// Mean value estimate over all imagined starts.
    pub value_mean: f64,
}

/// Computes the min-of-critics λ-return targets along an imagined batch and
/// the resulting actor objective. `critics` are bound on the same tape as the
/// rollout, normally as constants.
pub fn policy_objective<'t, T: Scalar>(
    image: &ImaginedVar<'t, T>,
    critics: &[(&Critic<T>, &Bound<'t, T>)],
    gamma: f64,
    lambda: f64,
    objective: ActorObjective,
) -> PolicyObjective<'t, T> {
    let tape = image.rewards[0].tape();
    let h = image.horizon();
    let m = image.len();
    let future: Vec<_> = image.latents[1..].iter().map(|z| z.features()).collect();
    let future = tape.concat_rows(&future);
    let mut targets: Option<Vec<Var<'t, T>>> = None;
    for (critic, p) in critics {
        let values = critic.value_var(p, future);
        let boot: Vec<_> = (0..h).map(|t| values.slice_rows(t * m, m)).collect();
        let ret = lambda_return_var(&image.rewards, &boot, gamma, lambda);
        targets = Some(match targets {
            None => ret,
            Some(prev) => prev.iter().zip(&ret).map(|(a, b)| a.minimum(*b)).collect(),
        });
    }
    let targets = targets.expect("at least one critic");
    let j_pi = match objective {
        ActorObjective::HorizonSum => {
            let mut acc = targets[0].mean();
            for t in &targets[1..] {
                acc = acc + t.mean();
            }
            acc
        }
        ActorObjective::StartOnly => targets[0].mean(),
    };
    let value_mean = targets[0].value().mean().to_f64().unwrap_or(f64::NAN);
    PolicyObjective {
        j_pi,
        targets,
        value_mean,
    }
}

/// Critic regression batch: imagined features and fixed targets, one row per
/// (trajectory, offset).
#[derive(Clone, Debug)]
pub struct CriticBatch<T> {
    pub features: Tensor<T>,
    pub targets: Tensor<T>,
}

impl<T: Scalar> CriticBatch<T> {
    /// Detached snapshot of `latents[0..H]` and the targets.
    pub fn from_objective(image: &ImaginedVar<'_, T>, objective: &PolicyObjective<'_, T>) -> Self {
        let tape = image.rewards[0].tape();
        let feats: Vec<_> = image.latents[..image.horizon()].iter().map(|z| z.features()).collect();
        let features = tape.concat_rows(&feats).value().as_ref().clone();
        let targets = tape.concat_rows(&objective.targets).value().as_ref().clone();
        CriticBatch { features, targets }
    }
}

/// `½·mean (V(z) − target)²` for one critic.
pub fn critic_loss_var<'t, T: Scalar>(
    tape: &'t Tape<T>,
    critic: &Critic<T>,
    p: &Bound<'t, T>,
    batch: &CriticBatch<T>,
) -> Var<'t, T> {
    let v = critic.value_var(p, tape.constant(batch.features.clone()));
    (v - tape.constant(batch.targets.clone()))
        .square()
        .mean()
        .scale(T::from_f64_lossy(0.5))
}

/// Critic losses `(J_V1, J_V2)`; the second is `None` without a second critic.
pub fn critic_loss<T: Scalar>(agent: &Agent<T>, batch: &CriticBatch<T>) -> (f64, Option<f64>) {
    let eval = |c: &Critic<T>| {
        let tape = Tape::new();
        let p = c.bind(&tape, false);
        critic_loss_var(&tape, c, &p, batch).value().item().to_f64().unwrap_or(f64::NAN)
    };
    (eval(&agent.critic1), agent.critic2.as_ref().map(eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn agent(seed: u64) -> Agent<f64> {
        let scale = ActionScale::from_env(&EnvConfig::desk());
        Agent::new(AgentConfig::desk(), &RssmConfig::desk(), scale, true, &mut rng(seed)).unwrap()
    }

    fn random_latent(r: &mut ChaCha8Rng) -> LatentState<f64> {
        LatentState {
            h: (0..64).map(|_| r.random_range(-1.0..1.0)).collect(),
            s: (0..16).map(|_| r.random_range(-5.0..5.0)).collect(),
        }
    }

    #[test]
    fn spec_lambda_example() {
        let v = lambda_return(&[1.0, 2.0], &[10.0, 20.0], 1.0, 0.5).unwrap();
        assert_eq!(v[0], 17.0);
        assert_eq!(v[1], 22.0);
        assert!(lambda_return(&[1.0], &[1.0, 2.0], 1.0, 0.5).is_err());
    }

    #[test]
    fn tape_lambda_matches_scalar_version() {
        let tape = Tape::<f64>::new();
        let r = [0.5, -1.0, 2.0, 0.25];
        let b = [3.0, 1.0, -2.0, 4.0];
        let rv: Vec<_> = r.iter().map(|&x| tape.constant(Tensor::scalar(x))).collect();
        let bv: Vec<_> = b.iter().map(|&x| tape.constant(Tensor::scalar(x))).collect();
        let got: Vec<f64> = lambda_return_var(&rv, &bv, 0.9, 0.7).iter().map(|v| v.value().item()).collect();
        let want = lambda_return(&r, &b, 0.9, 0.7).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn min_target_example() {
        assert_eq!(min_target(&[vec![17.0, 5.0], vec![15.0, 9.0]]), vec![15.0, 5.0]);
    }

    #[test]
    fn zero_output_maps_to_midpoint() {
        let scale = ActionScale {
            low: vec![-2.0, 0.0],
            high: vec![2.0, 1.0],
        };
        assert_eq!(scale.to_env(&[0.0, 0.0]).to_array(), [0.0, 0.5]);
        assert_eq!(scale.normalize(&[2.0, 0.25]), vec![1.0, -0.5]);
    }

    #[test]
    fn actions_stay_within_limits_and_are_deterministic() {
        let a = agent(1);
        let env = EnvConfig::desk();
        let [(al, ah), (sl, sh)] = env.action_bounds();
        let mut r = rng(2);
        for _ in 0..2000 {
            let mut z = random_latent(&mut r);
            z.s.iter_mut().for_each(|v| *v *= 20.0);
            let act = a.actor.act(&z);
            assert!((al..=ah).contains(&act.accel) && (sl..=sh).contains(&act.steer));
            assert_eq!(act, a.actor.act(&z));
            let noisy = a.actor.explore_action(&z, 1.0, &mut r);
            assert!((al..=ah).contains(&noisy.accel) && (sl..=sh).contains(&noisy.steer));
        }
    }

    #[test]
    fn zero_sigma_is_greedy() {
        let a = agent(3);
        let z = random_latent(&mut rng(4));
        assert_eq!(a.actor.explore_action(&z, 0.0, &mut rng(5)), a.actor.act(&z));
    }

    #[test]
    fn exploration_noise_has_requested_std() {
        // a latent whose greedy action sits near the middle keeps clamping rare
        let a = agent(6);
        let z = LatentState::zeros(&RssmConfig::desk());
        let greedy = a.actor.act_normalized(&z);
        let sigma = 0.05;
        let mut r = rng(7);
        let n = 100_000;
        let d: Vec<f64> = (0..n).map(|_| {
            let u = a.actor.explore_normalized(&z, sigma, &mut r);
            u[0] - greedy[0]
        }).collect();
        assert!(greedy[0].abs() < 0.8);
        let mean = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // standard error of the sample std is about σ/√(2n)
        let se = sigma / (2.0 * n as f64).sqrt();
        assert!((var.sqrt() - sigma).abs() < 3.0 * se, "{} vs {sigma}", var.sqrt());
    }

    #[test]
    fn single_critic_ablation_has_no_second_critic() {
        let scale = ActionScale::from_env(&EnvConfig::desk());
        let a = Agent::<f64>::new(AgentConfig::desk(), &RssmConfig::desk(), scale, false, &mut rng(8)).unwrap();
        assert!(a.critic2.is_none());
        assert_eq!(a.critics().len(), 1);
    }

    #[test]
    fn critic_loss_hand_value() {
        let a = agent(9);
        let z = LatentState::zeros(&RssmConfig::desk());
        let v = a.critic1.value(&z);
        let batch = CriticBatch {
            features: Tensor::new(1, 80, z.features()),
            targets: Tensor::scalar(v - 2.0),
        };
        let (j1, _) = critic_loss(&a, &batch);
        assert!((j1 - 2.0).abs() < 1e-12);
        let exact = CriticBatch {
            features: batch.features.clone(),
            targets: Tensor::scalar(v),
        };
        assert_eq!(critic_loss(&a, &exact).0, 0.0);
    }

    #[test]
    fn critic1_loss_has_no_gradient_for_critic2() {
        let a = agent(10);
        let batch = CriticBatch {
            features: Tensor::full(3, 80, 0.3),
            targets: Tensor::full(3, 1, 1.0),
        };
        let tape = Tape::new();
        let p1 = a.critic1.bind(&tape, true);
        let c2 = a.critic2.as_ref().unwrap();
        let p2 = c2.bind(&tape, true);
        let loss = critic_loss_var(&tape, &a.critic1, &p1, &batch);
        let mut g = tape.backward(loss);
        for t in p2.grads(&mut g) {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn config_validation_names_fields() {
        let cfg = AgentConfig {
            lambda: 1.5,
            ..AgentConfig::desk()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("agent.lambda"));
    }

    proptest! {
        #[test]
        fn lambda_collapse_identities(
            r in prop::collection::vec(-10.0..10.0f64, 1..10),
            seed in 0u64..1000,
            gamma in 0.0..=1.0f64,
        ) {
            let mut g = rng(seed);
            let b: Vec<f64> = r.iter().map(|_| g.random_range(-10.0..10.0)).collect();
            let h = r.len();
            let one = lambda_return(&r, &b, gamma, 0.0).unwrap();
            for t in 0..h {
                prop_assert_eq!(one[t], r[t] + gamma * b[t]);
            }
            // λ = 1: Monte-Carlo to the end of the horizon plus one bootstrap
            let mc = lambda_return(&r, &b, gamma, 1.0).unwrap();
            for t in 0..h {
                let mut want = 0.0;
                let mut disc = 1.0;
                for tau in t..h {
                    want += disc * r[tau];
                    disc *= gamma;
                }
                want += disc * b[h - 1];
                prop_assert!((mc[t] - want).abs() < 1e-9);
            }
        }

        #[test]
        fn min_target_is_below_each_return(a in prop::collection::vec(-50.0..50.0f64, 1..12), seed in 0u64..1000) {
            let mut g = rng(seed);
            let b: Vec<f64> = a.iter().map(|_| g.random_range(-50.0..50.0)).collect();
            let m = min_target(&[a.clone(), b.clone()]);
            for i in 0..a.len() {
                prop_assert!(m[i] <= a[i] && m[i] <= b[i]);
                prop_assert!(m[i] == a[i] || m[i] == b[i]);
            }
        }
    }
}
