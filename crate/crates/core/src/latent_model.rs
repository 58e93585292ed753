//! Recurrent state-space model.
//!
//! ```text
//! h_t ← GRU(ELU(W·[s_{t−1}, a_{t−1}]), h_{t−1})     deterministic path
//! s_t ~ N(prior(h_t))                              prior
//! s_t ~ N(posterior(h_t, encode(o_t)))             posterior (filtering)
//! o_t ~ N(decode_obs(h_t, s_t), 1)                 observation model
//! r_t ~ N(decode_reward(h_t, s_t), 1)              reward model
//! ```
//!
//! Images enter as channel-major arrays in [0, 1] and are converted to the
//! HWC row layout used by the convolution kernels. Actions are expected
//! normalised to [−1, 1].

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LvmError, Result};
use crate::nn::{
    Activation, Bound, ConvGeometry, ConvLayer, ConvTransposeLayer, Gru, Linear, Mlp, ParamSet, Scalar, Tape, Tensor,
    Var,
};
use crate::replay::SequenceBatch;

const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;
/// Spatial size at the bottom of the encoder.
const BOTTOM: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct RssmConfig {
    pub obs_channels: usize,
    pub img_size: usize,
    pub action_dim: usize,
    /// Deterministic state size D_h.
    pub deter: usize,
    /// Stochastic state size D_s.
    pub stoch: usize,
    /// Observation embedding size E.
    pub embed: usize,
    /// Hidden units of the prior, posterior and reward heads.
    pub hidden: usize,
    /// Channels of the first convolution; doubled at every stage.
    pub cnn_depth: usize,
    pub min_std: f64,
    /// Per-step KL floor; 0 disables it.
    pub free_nats: f64,
}

impl Default for RssmConfig {
    fn default() -> Self {
        RssmConfig::paper()
    }
}

impl RssmConfig {
    /// 3×64×64 images, D_h = 256, D_s = 60.
    pub fn paper() -> Self {
        RssmConfig {
            obs_channels: 3,
            img_size: 64,
            action_dim: 2,
            deter: 256,
            stoch: 60,
            embed: 256,
            hidden: 256,
            cnn_depth: 32,
            min_std: 0.1,
            free_nats: 3.0,
        }
    }

    /// 1×16×16 images, D_h = 64, D_s = 16.
    pub fn desk() -> Self {
        RssmConfig {
            obs_channels: 1,
            img_size: 16,
            deter: 64,
            stoch: 16,
            embed: 64,
            hidden: 64,
            cnn_depth: 8,
            ..RssmConfig::paper()
        }
    }

    /// A model small enough for exhaustive finite-difference checks.
    pub fn tiny() -> Self {
        RssmConfig {
            obs_channels: 1,
            img_size: 8,
            action_dim: 2,
            deter: 3,
            stoch: 2,
            embed: 3,
            hidden: 3,
            cnn_depth: 1,
            min_std: 0.1,
            free_nats: 0.0,
        }
    }

    pub fn obs_len(&self) -> usize {
        self.obs_channels * self.img_size * self.img_size
    }

    pub fn feature_len(&self) -> usize {
        self.deter + self.stoch
    }

    fn stages(&self) -> usize {
        (self.img_size / BOTTOM).trailing_zeros() as usize
    }

    fn channels(&self, stage: usize) -> usize {
        self.cnn_depth << stage
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.img_size;
        if s < 8 || s % BOTTOM != 0 || !(s / BOTTOM).is_power_of_two() {
            return Err(LvmError::config("model.img_size", "must be 4·2^k with k ≥ 1"));
        }
        for (field, v) in [
            ("model.obs_channels", self.obs_channels),
            ("model.action_dim", self.action_dim),
            ("model.deter", self.deter),
            ("model.stoch", self.stoch),
            ("model.embed", self.embed),
            ("model.hidden", self.hidden),
            ("model.cnn_depth", self.cnn_depth),
        ] {
            if v == 0 {
                return Err(LvmError::config(field, "must be >= 1"));
            }
        }
        if !(self.min_std > 0.0) {
            return Err(LvmError::config("model.min_std", "must be > 0"));
        }
        if !(self.free_nats >= 0.0) {
            return Err(LvmError::config("model.free_nats", "must be >= 0"));
        }
        Ok(())
    }
}

/// Diagonal Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDiag<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> GaussianDiag<T> {
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<T> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(&m, &s)| m + s * T::from_f64_lossy(rng.sample(StandardNormal)))
            .collect()
    }
}

/// Closed-form `KL(q ‖ p)` of diagonal Gaussians, summed over dimensions.
pub fn kl_divergence<T: Scalar>(q: &GaussianDiag<T>, p: &GaussianDiag<T>) -> Result<f64> {
    let n = q.mean.len();
    for len in [q.std.len(), p.mean.len(), p.std.len()] {
        if len != n {
            return Err(LvmError::LengthMismatch { expected: n, got: len });
        }
    }
    let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
    let mut kl = 0.0;
    for i in 0..n {
        let (mq, sq, mp, sp) = (f(q.mean[i]), f(q.std[i]), f(p.mean[i]), f(p.std[i]));
        let d = mq - mp;
        kl += (sp / sq).ln() + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5;
    }
    Ok(kl.max(0.0))
}

/// A diagonal Gaussian recorded on a tape, one distribution per row.
#[derive(Clone, Copy)]
pub struct GaussVar<'t, T: Scalar> {
    pub mean: Var<'t, T>,
    pub std: Var<'t, T>,
}

impl<'t, T: Scalar> GaussVar<'t, T> {
    /// Reparameterised sample `mean + std ⊙ eps`.
    pub fn sample(&self, eps: Var<'t, T>) -> Var<'t, T> {
        self.mean + self.std * eps
    }

    /// Per-row `KL(self ‖ other)` as an `n×1` column.
    pub fn kl(&self, other: &GaussVar<'t, T>) -> Var<'t, T> {
        let half = T::from_f64_lossy(0.5);
        let log_ratio = other.std.ln() - self.std.ln();
        let d = self.mean - other.mean;
        let quad = (self.std.square() + d.square()).div(other.std.square().scale(T::one() + T::one()));
        (log_ratio + quad).add_scalar(-half).sum_cols()
    }

    pub fn to_rows(&self) -> Vec<GaussianDiag<T>> {
        let (m, s) = (self.mean.value(), self.std.value());
        (0..m.rows())
            .map(|r| GaussianDiag {
                mean: m.row(r).to_vec(),
                std: s.row(r).to_vec(),
            })
            .collect()
    }
}

/// Pair of deterministic and stochastic state.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState<T> {
    pub h: Vec<T>,
    pub s: Vec<T>,
}

impl<T: Scalar> LatentState<T> {
    pub fn zeros(cfg: &RssmConfig) -> Self {
        LatentState {
            h: vec![T::zero(); cfg.deter],
            s: vec![T::zero(); cfg.stoch],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.s).all(|v| v.is_finite())
    }

    /// `[s, h]`, the input layout of the actor and critics.
    pub fn features(&self) -> Vec<T> {
        self.s.iter().chain(&self.h).copied().collect()
    }
}

/// Batch of latent states, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch<T> {
    pub h: Tensor<T>,
    pub s: Tensor<T>,
}

impl<T: Scalar> LatentBatch<T> {
    pub fn zeros(cfg: &RssmConfig, n: usize) -> Self {
        LatentBatch {
            h: Tensor::zeros(n, cfg.deter),
            s: Tensor::zeros(n, cfg.stoch),
        }
    }

    pub fn len(&self) -> usize {
        self.h.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> LatentState<T> {
        LatentState {
            h: self.h.row(i).to_vec(),
            s: self.s.row(i).to_vec(),
        }
    }

    pub fn from_states(states: &[LatentState<T>]) -> Self {
        let n = states.len();
        let dh = states.first().map_or(0, |s| s.h.len());
        let ds = states.first().map_or(0, |s| s.s.len());
        LatentBatch {
            h: Tensor::new(n, dh, states.iter().flat_map(|s| s.h.iter().copied()).collect()),
            s: Tensor::new(n, ds, states.iter().flat_map(|s| s.s.iter().copied()).collect()),
        }
    }
}

/// Latent pair recorded on a tape.
#[derive(Clone, Copy)]
pub struct LatentVar<'t, T: Scalar> {
    pub h: Var<'t, T>,
    pub s: Var<'t, T>,
}

impl<'t, T: Scalar> LatentVar<'t, T> {
    pub fn constant(tape: &'t Tape<T>, batch: &LatentBatch<T>) -> Self {
        LatentVar {
            h: tape.constant(batch.h.clone()),
            s: tape.constant(batch.s.clone()),
        }
    }

    /// `[s, h]` concatenated.
    pub fn features(&self) -> Var<'t, T> {
        self.h.tape().concat_cols(&[self.s, self.h])
    }

    pub fn detach(&self) -> Self {
        LatentVar {
            h: self.h.detach(),
            s: self.s.detach(),
        }
    }

    pub fn value(&self) -> LatentBatch<T> {
        LatentBatch {
            h: self.h.value().as_ref().clone(),
            s: self.s.value().as_ref().clone(),
        }
    }
}

/// Converts channel-major images to HWC rows.
pub fn chw_to_hwc<T: Copy>(chw: &[T], channels: usize, size: usize) -> Vec<T> {
    if channels == 1 {
        return chw.to_vec();
    }
    let plane = size * size;
    let mut out = Vec::with_capacity(chw.len());
    for px in 0..plane {
        for c in 0..channels {
            out.push(chw[c * plane + px]);
        }
    }
    out
}

pub fn hwc_to_chw<T: Copy + Default>(hwc: &[T], channels: usize, size: usize) -> Vec<T> {
    if channels == 1 {
        return hwc.to_vec();
    }
    let plane = size * size;
    let mut out = vec![T::default(); hwc.len()];
    for px in 0..plane {
        for c in 0..channels {
            out[c * plane + px] = hwc[px * channels + c];
        }
    }
    out
}

/// Time-major model inputs built from a [`SequenceBatch`]: row `t·B + b`
/// holds step `t` of sequence `b`.
#[derive(Clone, Debug)]
pub struct SequenceInputs<T> {
    pub batch: usize,
    pub len: usize,
    /// HWC images in [0, 1].
    pub observations: Tensor<T>,
    /// Normalised actions that led to each observation.
    pub actions: Tensor<T>,
    pub rewards: Tensor<T>,
}

impl<T: Scalar> SequenceInputs<T> {
    /// `normalize` maps an environment action to [−1, 1]^d.
    pub fn from_batch(batch: &SequenceBatch, cfg: &RssmConfig, normalize: impl Fn(&[f32]) -> Vec<f64>) -> Result<Self> {
        if batch.obs_len != cfg.obs_len() {
            return Err(LvmError::Shape(format!(
                "batch observation length {} does not match model {}",
                batch.obs_len,
                cfg.obs_len()
            )));
        }
        if batch.action_dim != cfg.action_dim {
            return Err(LvmError::Shape(format!(
                "batch action dim {} does not match model {}",
                batch.action_dim, cfg.action_dim
            )));
        }
        let (b_n, l_n) = (batch.batch, batch.len);
        let rows = b_n * l_n;
        let mut obs = Vec::with_capacity(rows * cfg.obs_len());
        let mut actions = Vec::with_capacity(rows * cfg.action_dim);
        let mut rewards = Vec::with_capacity(rows);
        for t in 0..l_n {
            for b in 0..b_n {
                let hwc = chw_to_hwc(batch.obs(b, t), cfg.obs_channels, cfg.img_size);
                obs.extend(hwc.iter().map(|&v| T::from_f32(v).unwrap()));
                actions.extend(normalize(batch.action(b, t)).iter().map(|&v| T::from_f64_lossy(v)));
                rewards.push(T::from_f32(batch.reward(b, t)).unwrap());
            }
        }
        Ok(SequenceInputs {
            batch: b_n,
            len: l_n,
            observations: Tensor::new(rows, cfg.obs_len(), obs),
            actions: Tensor::new(rows, cfg.action_dim, actions),
            rewards: Tensor::new(rows, 1, rewards),
        })
    }
}

/// Standard-normal noise for the reparameterised samples of a filtering
/// pass, `len·batch × stoch`, time-major.
pub fn sequence_noise<T: Scalar>(cfg: &RssmConfig, batch: usize, len: usize, rng: &mut impl Rng) -> Tensor<T> {
    let n = batch * len * cfg.stoch;
    Tensor::new(
        batch * len,
        cfg.stoch,
        (0..n).map(|_| T::from_f64_lossy(rng.sample(StandardNormal))).collect(),
    )
}

/// Output of a filtering pass, one entry per time step.
pub struct Observed<'t, T: Scalar> {
    pub states: Vec<LatentVar<'t, T>>,
    pub priors: Vec<GaussVar<'t, T>>,
    pub posteriors: Vec<GaussVar<'t, T>>,
}

impl<'t, T: Scalar> Observed<'t, T> {
    /// Posterior samples stacked time-major (`L·B` rows).
    pub fn stacked(&self) -> LatentVar<'t, T> {
        let tape = self.states[0].h.tape();
        let hs: Vec<_> = self.states.iter().map(|z| z.h).collect();
        let ss: Vec<_> = self.states.iter().map(|z| z.s).collect();
        LatentVar {
            h: tape.concat_rows(&hs),
            s: tape.concat_rows(&ss),
        }
    }
}

/// ELBO terms, each averaged over batch and time.
pub struct Elbo<'t, T: Scalar> {
    /// `J_o + J_r + J_D`, to be maximised.
    pub j_rssm: Var<'t, T>,
    pub j_o: Var<'t, T>,
    pub j_r: Var<'t, T>,
    pub j_d: Var<'t, T>,
    /// Mean KL before the free-nats floor.
    pub kl: Var<'t, T>,
    pub observed: Observed<'t, T>,
}

#[derive(Clone, Debug)]
struct Encoder {
    convs: Vec<ConvLayer>,
    proj: Linear,
}

#[derive(Clone, Debug)]
struct Decoder {
    proj: Linear,
    deconvs: Vec<ConvTransposeLayer>,
}

#[derive(Clone, Debug)]
pub struct Rssm<T: Scalar> {
    pub cfg: RssmConfig,
    pub params: ParamSet<T>,
    encoder: Encoder,
    decoder: Decoder,
    gru_input: Linear,
    gru: Gru,
    prior_head: Mlp,
    posterior_head: Mlp,
    reward_head: Mlp,
}

impl<T: Scalar> Rssm<T> {
    pub fn new(cfg: RssmConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();

        let stages = cfg.stages();
        let mut convs = Vec::with_capacity(stages);
        let (mut size, mut ch) = (cfg.img_size, cfg.obs_channels);
        for i in 0..stages {
            let geom = ConvGeometry::new(size, size, ch, cfg.channels(i), KERNEL, STRIDE, PAD);
            convs.push(ConvLayer::new(&mut ps, &format!("encoder.conv{i}"), geom, rng));
            size = geom.out_h;
            ch = geom.out_c;
        }
        let bottom = size * size * ch;
        let proj = Linear::new(&mut ps, "encoder.proj", bottom, cfg.embed, rng);
        let encoder = Encoder { convs, proj };

        let gru_input = Linear::new(&mut ps, "dynamics.input", cfg.stoch + cfg.action_dim, cfg.deter, rng);
        let gru = Gru::new(&mut ps, "dynamics.gru", cfg.deter, cfg.deter, rng);
        let prior_head = Mlp::new(&mut ps, "prior", cfg.deter, &[cfg.hidden], 2 * cfg.stoch, Activation::Elu, rng);
        let posterior_head = Mlp::new(
            &mut ps,
            "posterior",
            cfg.deter + cfg.embed,
            &[cfg.hidden],
            2 * cfg.stoch,
            Activation::Elu,
            rng,
        );

        let dec_proj = Linear::new(&mut ps, "decoder.proj", cfg.feature_len(), bottom, rng);
        let mut deconvs = Vec::with_capacity(stages);
        for i in (0..stages).rev() {
            let out_ch = if i == 0 { cfg.obs_channels } else { cfg.channels(i - 1) };
            let s = cfg.img_size >> i;
            let geom = ConvGeometry::new(s, s, out_ch, cfg.channels(i), KERNEL, STRIDE, PAD);
            deconvs.push(ConvTransposeLayer::new(&mut ps, &format!("decoder.deconv{i}"), geom, rng));
        }
        let decoder = Decoder {
            proj: dec_proj,
            deconvs,
        };
        let reward_head = Mlp::new(
            &mut ps,
            "reward",
            cfg.feature_len(),
            &[cfg.hidden, cfg.hidden],
            1,
            Activation::Elu,
            rng,
        );

        Ok(Rssm {
            cfg,
            params: ps,
            encoder,
            decoder,
            gru_input,
            gru,
            prior_head,
            posterior_head,
            reward_head,
        })
    }

    pub fn with_params(&self, params: ParamSet<T>) -> Self {
        assert_eq!(params.names(), self.params.names());
        Rssm { params, ..self.clone() }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        self.params.bind(tape, trainable)
    }

    fn gaussian<'t>(&self, raw: Var<'t, T>) -> GaussVar<'t, T> {
        let d = self.cfg.stoch;
        GaussVar {
            mean: raw.slice_cols(0, d),
            std: raw
                .slice_cols(d, d)
                .softplus()
                .add_scalar(T::from_f64_lossy(self.cfg.min_std)),
        }
    }

    /// `obs` holds HWC images in [0, 1], one per row.
    pub fn encode_var<'t>(&self, p: &Bound<'t, T>, obs: Var<'t, T>) -> Var<'t, T> {
        let mut x = obs.add_scalar(T::from_f64_lossy(-0.5));
        for conv in &self.encoder.convs {
            x = conv.forward(p, x).elu();
        }
        self.encoder.proj.forward(p, x)
    }

    pub fn prior_step_var<'t>(
        &self,
        p: &Bound<'t, T>,
        prev: LatentVar<'t, T>,
        action: Var<'t, T>,
    ) -> (Var<'t, T>, GaussVar<'t, T>) {
        let tape = action.tape();
        let x = self.gru_input.forward(p, tape.concat_cols(&[prev.s, action])).elu();
        let h = self.gru.forward(p, x, prev.h);
        (h, self.gaussian(self.prior_head.forward(p, h)))
    }

    pub fn posterior_var<'t>(&self, p: &Bound<'t, T>, h: Var<'t, T>, embedding: Var<'t, T>) -> GaussVar<'t, T> {
        let x = h.tape().concat_cols(&[h, embedding]);
        self.gaussian(self.posterior_head.forward(p, x))
    }

    /// Mean image in HWC layout.
    pub fn decode_obs_var<'t>(&self, p: &Bound<'t, T>, z: LatentVar<'t, T>) -> Var<'t, T> {
        let x = z.h.tape().concat_cols(&[z.h, z.s]);
        let mut x = self.decoder.proj.forward(p, x).elu();
        let last = self.decoder.deconvs.len() - 1;
        for (i, deconv) in self.decoder.deconvs.iter().enumerate() {
            x = deconv.forward(p, x);
            if i < last {
                x = x.elu();
            }
        }
        x
    }

    pub fn decode_reward_var<'t>(&self, p: &Bound<'t, T>, z: LatentVar<'t, T>) -> Var<'t, T> {
        let x = z.h.tape().concat_cols(&[z.h, z.s]);
        self.reward_head.forward(p, x)
    }

    /// Filtering pass: at each step a prior transition from the previous
    /// posterior sample, then a posterior correction with the step's
    /// embedding, then a reparameterised sample with `noise`.
    pub fn observe_var<'t>(
        &self,
        p: &Bound<'t, T>,
        tape: &'t Tape<T>,
        inputs: &SequenceInputs<T>,
        init: &LatentBatch<T>,
        noise: &Tensor<T>,
    ) -> Observed<'t, T> {
        let (b, l) = (inputs.batch, inputs.len);
        assert_eq!(init.len(), b, "one initial state per sequence");
        assert_eq!(noise.shape(), (b * l, self.cfg.stoch), "noise shape");
        let embeddings = self.encode_var(p, tape.constant(inputs.observations.clone()));
        let actions = tape.constant(inputs.actions.clone());
        let noise = tape.constant(noise.clone());
        let mut z = LatentVar::constant(tape, init);
        let mut out = Observed {
            states: Vec::with_capacity(l),
            priors: Vec::with_capacity(l),
            posteriors: Vec::with_capacity(l),
        };
        for t in 0..l {
            let (h, prior) = self.prior_step_var(p, z, actions.slice_rows(t * b, b));
            let post = self.posterior_var(p, h, embeddings.slice_rows(t * b, b));
            z = LatentVar {
                h,
                s: post.sample(noise.slice_rows(t * b, b)),
            };
            out.states.push(z);
            out.priors.push(prior);
            out.posteriors.push(post);
        }
        out
    }

    /// Evidence lower bound of a sequence batch starting from zero states.
    pub fn elbo_var<'t>(
        &self,
        p: &Bound<'t, T>,
        tape: &'t Tape<T>,
        inputs: &SequenceInputs<T>,
        noise: &Tensor<T>,
    ) -> Elbo<'t, T> {
        let init = LatentBatch::zeros(&self.cfg, inputs.batch);
        let observed = self.observe_var(p, tape, inputs, &init, noise);
        let half = T::from_f64_lossy(0.5);
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();

        let z = observed.stacked();
        let target = tape.constant(inputs.observations.clone());
        let pixels = self.cfg.obs_len() as f64;
        let j_o = (self.decode_obs_var(p, z) - target)
            .square()
            .sum_cols()
            .scale(-half)
            .add_scalar(T::from_f64_lossy(-0.5 * pixels * ln_2pi))
            .mean();
        let rewards = tape.constant(inputs.rewards.clone());
        let j_r = (self.decode_reward_var(p, z) - rewards)
            .square()
            .scale(-half)
            .add_scalar(T::from_f64_lossy(-0.5 * ln_2pi))
            .mean();
        let kls: Vec<_> = observed
            .posteriors
            .iter()
            .zip(&observed.priors)
            .map(|(q, prior)| q.kl(prior))
            .collect();
        let kl = tape.concat_rows(&kls);
        let j_d = -kl.clamp_min(T::from_f64_lossy(self.cfg.free_nats)).mean();
        let j_rssm = j_o + j_r + j_d;
        Elbo {
            j_rssm,
            j_o,
            j_r,
            j_d,
            kl: kl.mean(),
            observed,
        }
    }

    // Single-sample convenience wrappers.

    pub fn encode(&self, obs_chw: &[f32]) -> Result<Vec<T>> {
        if obs_chw.len() != self.cfg.obs_len() {
            return Err(LvmError::Shape(format!(
                "observation has {} values, model expects {}",
                obs_chw.len(),
                self.cfg.obs_len()
            )));
        }
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let hwc = chw_to_hwc(obs_chw, self.cfg.obs_channels, self.cfg.img_size);
        let x = tape.constant(Tensor::new(1, hwc.len(), hwc.iter().map(|&v| T::from_f32(v).unwrap()).collect()));
        Ok(self.encode_var(&p, x).value().data().to_vec())
    }

    pub fn prior_step(&self, prev: &LatentState<T>, action: &[T]) -> (Vec<T>, GaussianDiag<T>) {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let z = LatentVar::constant(&tape, &LatentBatch::from_states(std::slice::from_ref(prev)));
        let a = tape.constant(Tensor::new(1, action.len(), action.to_vec()));
        let (h, prior) = self.prior_step_var(&p, z, a);
        (h.value().data().to_vec(), prior.to_rows().remove(0))
    }

    pub fn posterior(&self, h: &[T], embedding: &[T]) -> GaussianDiag<T> {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let h = tape.constant(Tensor::new(1, h.len(), h.to_vec()));
        let e = tape.constant(Tensor::new(1, embedding.len(), embedding.to_vec()));
        self.posterior_var(&p, h, e).to_rows().remove(0)
    }

    /// Mean image, channel-major.
    pub fn decode_obs(&self, z: &LatentState<T>) -> Vec<T> {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let zv = LatentVar::constant(&tape, &LatentBatch::from_states(std::slice::from_ref(z)));
        let hwc = self.decode_obs_var(&p, zv).value();
        hwc_to_chw(hwc.data(), self.cfg.obs_channels, self.cfg.img_size)
    }

    pub fn decode_reward(&self, z: &LatentState<T>) -> T {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let zv = LatentVar::constant(&tape, &LatentBatch::from_states(std::slice::from_ref(z)));
        self.decode_reward_var(&p, zv).value().item()
    }

    /// One filtering step on a single observation, as used while acting in
    /// the real environment: prior transition with `action`, posterior
    /// correction with `obs`, then the posterior mean (or a sample when
    /// `rng` is given).
    pub fn filter_step(&self, prev: &LatentState<T>, action: &[T], obs_chw: &[f32]) -> Result<LatentState<T>> {
        let e = self.encode(obs_chw)?;
        let (h, _) = self.prior_step(prev, action);
        let post = self.posterior(&h, &e);
        Ok(LatentState { h, s: post.mean })
    }

    /// Off-tape filtering pass returning posterior samples, priors and
    /// posteriors indexed `[b][t]`.
    #[allow(clippy::type_complexity)]
    pub fn observe_sequence(
        &self,
        inputs: &SequenceInputs<T>,
        init: &LatentBatch<T>,
        noise: &Tensor<T>,
    ) -> (Vec<Vec<LatentState<T>>>, Vec<Vec<GaussianDiag<T>>>, Vec<Vec<GaussianDiag<T>>>) {
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let obs = self.observe_var(&p, &tape, inputs, init, noise);
        let b = inputs.batch;
        let mut states = vec![Vec::with_capacity(inputs.len); b];
        let mut priors = vec![Vec::with_capacity(inputs.len); b];
        let mut posts = vec![Vec::with_capacity(inputs.len); b];
        for t in 0..inputs.len {
            let z = obs.states[t].value();
            for (i, (pr, po)) in obs.priors[t].to_rows().into_iter().zip(obs.posteriors[t].to_rows()).enumerate() {
                states[i].push(z.get(i));
                priors[i].push(pr);
                posts[i].push(po);
            }
        }
        (states, priors, posts)
    }
}
