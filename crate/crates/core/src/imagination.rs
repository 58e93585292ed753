//! Latent rollouts under the current policy.
//!
//! Each start state is replicated `K` times; replica `k` of start `i` lives
//! in row `k·N + i` of every batched tensor. All rows evolve by the prior
//! transition with reparameterised samples, so gradients flow from later
//! rewards and values back into the actor.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::agent::Actor;
use crate::error::{LvmError, Result};
use crate::latent_model::{LatentBatch, LatentState, LatentVar, Rssm};
use crate::nn::{Bound, Scalar, Tape, Tensor, Var};

/// A rollout recorded on a tape.
pub struct ImaginedVar<'t, T: Scalar> {
    /// `H + 1` latent batches; entry 0 holds the (detached) starts.
    pub latents: Vec<LatentVar<'t, T>>,
    /// `H` batches of normalised actions.
    pub actions: Vec<Var<'t, T>>,
    /// `H` columns of predicted rewards; `rewards[τ]` decodes `latents[τ + 1]`.
    pub rewards: Vec<Var<'t, T>>,
    /// Source start index of each row.
    pub start_ids: Vec<usize>,
}

impl<'t, T: Scalar> ImaginedVar<'t, T> {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Number of trajectories.
    pub fn len(&self) -> usize {
        self.start_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start_ids.is_empty()
    }

    pub fn trajectories(&self) -> Vec<ImaginedTrajectory<T>> {
        let latents: Vec<_> = self.latents.iter().map(|z| z.value()).collect();
        let actions: Vec<_> = self.actions.iter().map(|a| a.value()).collect();
        let rewards: Vec<_> = self.rewards.iter().map(|r| r.value()).collect();
        (0..self.len())
            .map(|row| ImaginedTrajectory {
                latents: latents.iter().map(|z| z.get(row)).collect(),
                actions: actions.iter().map(|a| a.row(row).to_vec()).collect(),
                rewards: rewards.iter().map(|r| r.get(row, 0)).collect(),
                start_id: self.start_ids[row],
            })
            .collect()
    }
}

/// One imagined trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ImaginedTrajectory<T> {
    pub latents: Vec<LatentState<T>>,
    pub actions: Vec<Vec<T>>,
    pub rewards: Vec<T>,
    pub start_id: usize,
}

/// Standard-normal noise for a rollout: `H` blocks of `N·K` rows.
pub fn rollout_noise<T: Scalar>(stoch: usize, rows: usize, horizon: usize, rng: &mut impl Rng) -> Tensor<T> {
    let n = horizon * rows * stoch;
    Tensor::new(
        horizon * rows,
        stoch,
        (0..n).map(|_| T::from_f64_lossy(rng.sample(StandardNormal))).collect(),
    )
}

/// Rolls `starts` forward `horizon` steps with `k` replicas each. `noise`
/// must be `horizon·N·k × stoch`.
#[allow(clippy::too_many_arguments)]
pub fn imagine_var<'t, T: Scalar>(
    tape: &'t Tape<T>,
    model: &Rssm<T>,
    model_p: &Bound<'t, T>,
    actor: &Actor<T>,
    actor_p: &Bound<'t, T>,
    starts: &LatentBatch<T>,
    horizon: usize,
    k: usize,
    noise: &Tensor<T>,
) -> Result<ImaginedVar<'t, T>> {
    if horizon == 0 {
        return Err(LvmError::config("trainer.horizon", "must be >= 1"));
    }
    if k == 0 {
        return Err(LvmError::config("trainer.traj_num", "must be >= 1"));
    }
    let n = starts.len();
    if n == 0 {
        return Err(LvmError::InsufficientData("no imagination starts".into()));
    }
    let rows = n * k;
    if noise.shape() != (horizon * rows, model.cfg.stoch) {
        return Err(LvmError::Shape(format!(
            "rollout noise is {:?}, expected {:?}",
            noise.shape(),
            (horizon * rows, model.cfg.stoch)
        )));
    }
    let replicated = LatentBatch {
        h: Tensor::vstack(&vec![&starts.h; k]),
        s: Tensor::vstack(&vec![&starts.s; k]),
    };
    let noise = tape.constant(noise.clone());
    let mut z = LatentVar::constant(tape, &replicated);
    let mut latents = vec![z];
    let mut actions = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let a = actor.forward_var(actor_p, z);
        let (h, prior) = model.prior_step_var(model_p, z, a);
        let s = prior.sample(noise.slice_rows(step * rows, rows));
        if !h.value().is_finite() || !s.value().is_finite() {
            return Err(LvmError::DivergedImagination { step: step + 1 });
        }
        z = LatentVar { h, s };
        latents.push(z);
        actions.push(a);
    }
    let future = LatentVar {
        h: tape.concat_rows(&latents[1..].iter().map(|z| z.h).collect::<Vec<_>>()),
        s: tape.concat_rows(&latents[1..].iter().map(|z| z.s).collect::<Vec<_>>()),
    };
    let all_rewards = model.decode_reward_var(model_p, future);
    let rewards = (0..horizon).map(|t| all_rewards.slice_rows(t * rows, rows)).collect();
    Ok(ImaginedVar {
        latents,
        actions,
        rewards,
        start_ids: (0..rows).map(|r| r % n).collect(),
    })
}

/// Off-tape rollout returning `N·K` trajectories.
pub fn imagine<T: Scalar>(
    model: &Rssm<T>,
    actor: &Actor<T>,
    starts: &[LatentState<T>],
    horizon: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ImaginedTrajectory<T>>> {
    let tape = Tape::new();
    let mp = model.bind(&tape, false);
    let ap = actor.bind(&tape, false);
    let noise = rollout_noise(model.cfg.stoch, starts.len() * k, horizon, rng);
    let image = imagine_var(&tape, model, &mp, actor, &ap, &LatentBatch::from_states(starts), horizon, k, &noise)?;
    Ok(image.trajectories())
}
