//! Desk-scale lane keeping: a kinematic bicycle on a circular ring road,
//! observed through a rasterised, vehicle-centred top-down camera.
//!
//! Road-relative (Frenet) coordinates are used throughout: `station` is the
//! arc length along the centreline and `y` the signed lateral offset, with
//! positive `y` towards the inside of the ring (the road curves left).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LvmError, Result};

/// Ground-truth vehicle state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleState {
    /// Lateral offset from the lane centreline [m].
    pub y: f64,
    /// Heading error w.r.t. the road tangent [rad], wrapped to (−π, π].
    pub phi_err: f64,
    /// Longitudinal speed [m/s].
    pub v: f64,
    /// Yaw rate [rad/s].
    pub omega: f64,
    /// Body side-slip angle [rad].
    pub beta: f64,
    /// Arc-length progress along the centreline [m].
    pub station: f64,
    /// Step index within the episode.
    pub t: u32,
}

impl VehicleState {
    pub fn is_finite(&self) -> bool {
        [self.y, self.phi_err, self.v, self.omega, self.beta, self.station]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Action {
    /// Longitudinal acceleration [m/s²].
    pub accel: f64,
    /// Front steering angle δ [rad].
    pub steer: f64,
}

impl Action {
    pub const DIM: usize = 2;

    pub fn new(accel: f64, steer: f64) -> Self {
        Action { accel, steer }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.accel, self.steer]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Action {
            accel: v[0],
            steer: v[1],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    /// Centreline radius [m]; `f64::INFINITY` gives a straight road.
    pub road_radius: f64,
    pub lane_half_width: f64,
    pub dt: f64,
    /// Target speed [m/s].
    pub v0: f64,
    /// Speed cap [m/s].
    pub v_max: f64,
    /// Penalty coefficients for y², φ², ω², β², (v−v0)², δ², a².
    pub reward_coefs: [f64; 7],
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_max: f64,
    pub img_channels: usize,
    pub img_size: usize,
    pub max_steps: u32,
    /// Distance from the centre of mass to the front axle [m].
    pub lf: f64,
    /// Distance from the centre of mass to the rear axle [m].
    pub lr: f64,
    pub offroad_threshold: f64,
    /// Forward extent of the camera window [m].
    pub view_range: f64,
    /// Half of the lateral extent of the camera window [m].
    pub view_half_width: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::desk()
    }
}

impl EnvConfig {
    /// 1×16×16 observations.
    pub fn desk() -> Self {
        let lane_half_width = 1.75;
        EnvConfig {
            road_radius: 50.0,
            lane_half_width,
            dt: 0.05,
            v0: 5.0,
            v_max: 10.0,
            reward_coefs: [-1.0, -0.5, -0.1, -0.1, -0.05, -0.1, -0.05],
            accel_min: -2.0,
            accel_max: 2.0,
            steer_max: 0.35,
            img_channels: 1,
            img_size: 16,
            max_steps: 500,
            lf: 1.2,
            lr: 1.5,
            offroad_threshold: lane_half_width + 0.5,
            view_range: 8.0,
            view_half_width: 4.0,
        }
    }

    /// 3×64×64 observations, same road and vehicle.
    pub fn paper_shape() -> Self {
        EnvConfig {
            img_channels: 3,
            img_size: 64,
            ..EnvConfig::desk()
        }
    }

    pub fn obs_len(&self) -> usize {
        self.img_channels * self.img_size * self.img_size
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(LvmError::config(format!("env.{field}"), reason))
            }
        };
        check(self.road_radius > 0.0 && !self.road_radius.is_nan(), "road_radius", "must be > 0")?;
        check(self.lane_half_width > 0.0 && self.lane_half_width.is_finite(), "lane_half_width", "must be > 0")?;
        check(self.dt > 0.0 && self.dt.is_finite(), "dt", "must be > 0")?;
        check(self.v0 >= 0.0 && self.v0.is_finite(), "v0", "must be >= 0")?;
        check(self.v_max >= self.v0 && self.v_max.is_finite(), "v_max", "must be >= v0")?;
        for (i, c) in self.reward_coefs.iter().enumerate() {
            check(*c <= 0.0 && c.is_finite(), &format!("c{}", i + 1), "reward coefficients must be <= 0")?;
        }
        check(self.accel_min <= self.accel_max, "accel_min", "must be <= accel_max")?;
        check(self.steer_max > 0.0 && self.steer_max < PI / 2.0, "steer_max", "must be in (0, pi/2)")?;
        check(self.img_channels == 1 || self.img_channels == 3, "img_channels", "must be 1 or 3")?;
        check(self.img_size >= 8, "img_size", "must be >= 8")?;
        check(self.max_steps >= 1, "max_steps", "must be >= 1")?;
        check(self.lf > 0.0 && self.lr > 0.0, "lr", "axle distances must be > 0")?;
        check(
            self.offroad_threshold > 0.0 && self.offroad_threshold <= 2.0 * self.lane_half_width,
            "offroad_threshold",
            "must be in (0, 2*lane_half_width]",
        )?;
        check(self.view_range > 0.0 && self.view_half_width > 0.0, "view_range", "camera window must be non-empty")?;
        Ok(())
    }

    pub fn curvature(&self) -> f64 {
        if self.road_radius.is_finite() {
            1.0 / self.road_radius
        } else {
            0.0
        }
    }

    /// Clamps an action into the configured box.
    pub fn clamp_action(&self, a: Action) -> Action {
        Action {
            accel: a.accel.clamp(self.accel_min, self.accel_max),
            steer: a.steer.clamp(-self.steer_max, self.steer_max),
        }
    }

    /// Lower and upper bounds of each action dimension.
    pub fn action_bounds(&self) -> [(f64, f64); 2] {
        [
            (self.accel_min, self.accel_max),
            (-self.steer_max, self.steer_max),
        ]
    }
}

/// Channel-major image with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub channels: usize,
    pub size: usize,
    pub pixels: Vec<f32>,
}

impl Observation {
    pub fn at(&self, c: usize, row: usize, col: usize) -> f32 {
        self.pixels[(c * self.size + row) * self.size + col]
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// One explicit-Euler step of the kinematic bicycle in road coordinates.
pub fn dynamics_step(cfg: &EnvConfig, state: &VehicleState, action: Action, dt: f64) -> Result<VehicleState> {
    if !state.is_finite() || !action.accel.is_finite() || !action.steer.is_finite() || !(dt > 0.0) {
        return Err(LvmError::InvalidState(format!("non-finite input: {state:?}, {action:?}, dt={dt}")));
    }
    // a stationary vehicle has no defined velocity direction: nothing moves
    if state.v <= 0.0 && action.accel <= 0.0 {
        return Ok(VehicleState {
            t: state.t + 1,
            ..*state
        });
    }

    let beta = (cfg.lr / (cfg.lf + cfg.lr) * action.steer.tan()).atan();
    let omega = state.v * beta.sin() / cfg.lr;
    let kappa = cfg.curvature();
    let course = state.phi_err + beta;
    let station_rate = state.v * course.cos() / (1.0 - kappa * state.y);
    let y_rate = state.v * course.sin();
    let phi_rate = omega - kappa * station_rate;

    let mut station = state.station + station_rate * dt;
    if cfg.road_radius.is_finite() {
        station = station.rem_euclid(2.0 * PI * cfg.road_radius);
    } else {
        station = station.max(0.0);
    }

    Ok(VehicleState {
        y: state.y + y_rate * dt,
        phi_err: wrap_angle(state.phi_err + phi_rate * dt),
        v: (state.v + action.accel * dt).clamp(0.0, cfg.v_max),
        omega,
        beta,
        station,
        t: state.t + 1,
    })
}

/// Quadratic penalty on deviations and control effort; always ≤ 0.
pub fn compute_reward(cfg: &EnvConfig, state: &VehicleState, action: Action) -> f64 {
    let c = &cfg.reward_coefs;
    let dv = state.v - cfg.v0;
    c[0] * state.y * state.y
        + c[1] * state.phi_err * state.phi_err
        + c[2] * state.omega * state.omega
        + c[3] * state.beta * state.beta
        + c[4] * dv * dv
        + c[5] * action.steer * action.steer
        + c[6] * action.accel * action.accel
}

const LINE_HALF_WIDTH: f64 = 0.12;

struct Palette {
    offroad: [f32; 3],
    road: [f32; 3],
    centerline: [f32; 3],
    boundary: [f32; 3],
}

const GREY: Palette = Palette {
    offroad: [0.0; 3],
    road: [0.35; 3],
    centerline: [0.65; 3],
    boundary: [1.0; 3],
};

const COLOUR: Palette = Palette {
    offroad: [0.15, 0.45, 0.15],
    road: [0.35, 0.35, 0.35],
    centerline: [0.95, 0.85, 0.2],
    boundary: [1.0, 1.0, 1.0],
};

/// Signed lateral offset from the centreline and arc-length position along
/// it of a point given in the vehicle frame (`forward`, `left`).
fn point_offset(cfg: &EnvConfig, state: &VehicleState, forward: f64, left: f64) -> (f64, f64) {
    let (s, c) = state.phi_err.sin_cos();
    let along = forward * c - left * s;
    let across = forward * s + left * c;
    if cfg.road_radius.is_finite() {
        let r = cfg.road_radius;
        let radial = r - state.y - across;
        let offset = r - (along * along + radial * radial).sqrt();
        (offset, state.station + r * along.atan2(radial))
    } else {
        (state.y + across, state.station + along)
    }
}

/// Period of the centreline intensity pattern [m]. The pattern moves through
/// the view as the vehicle advances, which makes speed observable.
pub const DASH_PERIOD: f64 = 2.0;

/// Rasterises the heading-aligned top-down window in front of the vehicle.
/// The vehicle sits at the bottom centre; the top row is `view_range` ahead.
pub fn render(cfg: &EnvConfig, state: &VehicleState) -> Observation {
    let n = cfg.img_size;
    let palette = if cfg.img_channels == 3 { &COLOUR } else { &GREY };
    let pixel_width = 2.0 * cfg.view_half_width / n as f64;
    let soft = LINE_HALF_WIDTH + 0.5 * pixel_width;
    let coverage = |off: f64, at: f64| (1.0 - (off - at).abs() / soft).max(0.0) as f32;
    let w = cfg.lane_half_width;

    let mut pixels = vec![0.0f32; cfg.obs_len()];
    for row in 0..n {
        let forward = cfg.view_range * (1.0 - (row as f64 + 0.5) / n as f64);
        for col in 0..n {
            let left = cfg.view_half_width * (1.0 - 2.0 * (col as f64 + 0.5) / n as f64);
            let (off, arc) = point_offset(cfg, state, forward, left);
            let base = if off.abs() <= w { palette.road } else { palette.offroad };
            let dash = 0.5 + 0.5 * (2.0 * PI * arc / DASH_PERIOD).cos() as f32;
            let centre = coverage(off, 0.0) * dash;
            let edge = coverage(off, w).max(coverage(off, -w));
            for ch in 0..cfg.img_channels {
                let mut v = base[ch];
                v += (palette.centerline[ch] - v) * centre;
                v += (palette.boundary[ch] - v) * edge;
                pixels[(ch * n + row) * n + col] = v.clamp(0.0, 1.0);
            }
        }
    }
    Observation {
        channels: cfg.img_channels,
        size: n,
        pixels,
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: VehicleState,
}

/// Episodic lane-keeping environment.
#[derive(Clone, Debug)]
pub struct LaneEnv {
    cfg: EnvConfig,
    state: Option<VehicleState>,
    done: bool,
}

impl LaneEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LaneEnv {
            cfg,
            state: None,
            done: true,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> Option<&VehicleState> {
        self.state.as_ref()
    }

    pub fn reset(&mut self, seed: u64) -> (Observation, VehicleState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lap = if self.cfg.road_radius.is_finite() {
            2.0 * PI * self.cfg.road_radius
        } else {
            1000.0
        };
        let y_lim = 0.3 * self.cfg.lane_half_width;
        let state = VehicleState {
            station: rng.random_range(0.0..lap),
            y: rng.random_range(-y_lim..=y_lim),
            phi_err: rng.random_range(-0.1..=0.1),
            v: self.cfg.v0,
            omega: 0.0,
            beta: 0.0,
            t: 0,
        };
        self.state = Some(state);
        self.done = false;
        (render(&self.cfg, &state), state)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        let state = match self.state {
            Some(s) if !self.done => s,
            _ => return Err(LvmError::EpisodeDone),
        };
        let action = self.cfg.clamp_action(action);
        let next = dynamics_step(&self.cfg, &state, action, self.cfg.dt)?;
        let reward = compute_reward(&self.cfg, &next, action);
        let done = next.y.abs() > self.cfg.offroad_threshold || next.t >= self.cfg.max_steps;
        self.state = Some(next);
        self.done = done;
        Ok(StepOutcome {
            obs: render(&self.cfg, &next),
            reward,
            done,
            info: next,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn straight() -> EnvConfig {
        EnvConfig {
            road_radius: f64::INFINITY,
            ..EnvConfig::desk()
        }
    }

    fn centred(v: f64) -> VehicleState {
        VehicleState {
            y: 0.0,
            phi_err: 0.0,
            v,
            omega: 0.0,
            beta: 0.0,
            station: 10.0,
            t: 0,
        }
    }

    #[test]
    fn default_time_step_is_50ms() {
        assert_eq!(EnvConfig::desk().dt, 0.05);
        assert_eq!(EnvConfig::paper_shape().dt, 0.05);
    }

    #[test]
    fn reset_is_seeded_and_within_bounds() {
        let mut env = LaneEnv::new(EnvConfig::desk()).unwrap();
        let a = env.reset(7);
        let b = env.reset(7);
        assert_eq!(a, b);
        let (_, s1) = env.reset(1);
        let (_, s0) = env.reset(0);
        assert_ne!(s0.station, s1.station);
        for seed in 0..200 {
            let (obs, s) = env.reset(seed);
            assert!(s.y.abs() <= 0.3 * env.config().lane_half_width);
            assert!(s.phi_err.abs() <= 0.1);
            assert_eq!((s.v, s.t), (env.config().v0, 0));
            assert_eq!(obs, render(env.config(), &s));
        }
    }

    #[test]
    fn zero_velocity_leaves_state_unchanged() {
        let cfg = EnvConfig::desk();
        let mut s = centred(0.0);
        s.y = 0.4;
        s.phi_err = 0.05;
        for steer in [-0.3, 0.0, 0.2] {
            let next = dynamics_step(&cfg, &s, Action::new(0.0, steer), cfg.dt).unwrap();
            assert_eq!(next, VehicleState { t: 1, ..s });
        }
    }

    #[test]
    fn straight_road_lateral_update_matches_hand_euler_step() {
        let cfg = straight();
        let mut s = centred(5.0);
        s.phi_err = 0.2;
        s.y = 0.1;
        let next = dynamics_step(&cfg, &s, Action::new(0.0, 0.0), 0.05).unwrap();
        // hand evaluation: δ=0 ⇒ β=0, ω=0; y' = y + 5·sin(0.2)·0.05
        assert!((next.y - (0.1 + 5.0 * 0.2f64.sin() * 0.05)).abs() < 1e-15);
        assert!((next.station - (10.0 + 5.0 * 0.2f64.cos() * 0.05)).abs() < 1e-12);
        assert_eq!(next.phi_err, 0.2);
        assert_eq!(next.v, 5.0);
    }

    #[test]
    fn steering_produces_kinematic_slip_and_yaw_rate() {
        let cfg = straight();
        let s = centred(5.0);
        let next = dynamics_step(&cfg, &s, Action::new(0.0, 0.1), cfg.dt).unwrap();
        let beta = (cfg.lr / (cfg.lf + cfg.lr) * 0.1f64.tan()).atan();
        assert!((next.beta - beta).abs() < 1e-15);
        assert!((next.omega - 5.0 * beta.sin() / cfg.lr).abs() < 1e-15);
        assert!((next.phi_err - next.omega * cfg.dt).abs() < 1e-15);
    }

    #[test]
    fn ring_road_drifts_outward_when_driving_straight() {
        let cfg = EnvConfig::desk();
        let mut s = centred(5.0);
        for _ in 0..40 {
            s = dynamics_step(&cfg, &s, Action::default(), cfg.dt).unwrap();
        }
        assert!(s.phi_err < 0.0 && s.y < 0.0, "{s:?}");
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let cfg = EnvConfig::desk();
        let mut s = centred(5.0);
        s.y = f64::NAN;
        let err = dynamics_step(&cfg, &s, Action::default(), cfg.dt).unwrap_err();
        assert!(err.to_string().contains("invalid state"));
    }

    #[test]
    fn reward_hand_values() {
        let cfg = EnvConfig::desk();
        let s = centred(cfg.v0);
        assert_eq!(compute_reward(&cfg, &s, Action::default()), 0.0);
        let mut off = s;
        off.y = 0.5;
        assert_eq!(cfg.reward_coefs[0], -1.0);
        assert!((compute_reward(&cfg, &off, Action::default()) + 0.25).abs() < 1e-15);
        let mut flipped = off;
        flipped.y = -0.5;
        assert_eq!(
            compute_reward(&cfg, &off, Action::default()),
            compute_reward(&cfg, &flipped, Action::default())
        );
    }

    fn flip(obs: &Observation) -> Vec<f32> {
        let n = obs.size;
        let mut out = obs.pixels.clone();
        for c in 0..obs.channels {
            for r in 0..n {
                for col in 0..n {
                    out[(c * n + r) * n + col] = obs.at(c, r, n - 1 - col);
                }
            }
        }
        out
    }

    #[test]
    fn centred_straight_view_is_symmetric() {
        for cfg in [straight(), EnvConfig { img_size: 64, img_channels: 3, ..straight() }] {
            let obs = render(&cfg, &centred(5.0));
            assert_eq!(obs, render(&cfg, &centred(5.0)));
            assert_eq!(obs.pixels, flip(&obs));
            assert!(obs.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn opposite_offsets_render_as_mirror_images() {
        let cfg = straight();
        let mut left = centred(5.0);
        left.y = cfg.lane_half_width;
        let mut right = left;
        right.y = -cfg.lane_half_width;
        let a = render(&cfg, &left);
        let b = render(&cfg, &right);
        assert_ne!(a.pixels, b.pixels);
        assert_eq!(flip(&a), b.pixels);
    }

    #[test]
    fn centreline_pattern_moves_with_station() {
        let cfg = EnvConfig::desk();
        let mut s = centred(5.0);
        let a = render(&cfg, &s);
        s.station += 0.25 * DASH_PERIOD;
        assert_ne!(a, render(&cfg, &s));
        s.station += 0.75 * DASH_PERIOD;
        let back = render(&cfg, &s);
        for (x, y) in a.pixels.iter().zip(&back.pixels) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn render_depends_on_lateral_offset() {
        let cfg = EnvConfig::desk();
        let mut s = centred(5.0);
        let a = render(&cfg, &s);
        s.y = 0.5;
        assert_ne!(a, render(&cfg, &s));
    }

    #[test]
    fn step_cap_and_offroad_terminate() {
        let cfg = EnvConfig { max_steps: 3, ..EnvConfig::desk() };
        let mut env = LaneEnv::new(cfg.clone()).unwrap();
        env.reset(3);
        assert!(!env.step(Action::default()).unwrap().done);
        assert!(!env.step(Action::default()).unwrap().done);
        let last = env.step(Action::default()).unwrap();
        assert!(last.done && last.info.t == 3);
        let err = env.step(Action::default()).unwrap_err();
        assert!(err.to_string().contains("episode done"));

        let mut env = LaneEnv::new(EnvConfig::desk()).unwrap();
        env.reset(3);
        let mut steps = 0;
        loop {
            let out = env.step(Action::new(0.0, -0.35)).unwrap();
            steps += 1;
            if out.done {
                assert!(out.info.y.abs() > cfg.offroad_threshold);
                break;
            }
        }
        assert!(steps < 500);
    }

    #[test]
    fn stepping_before_reset_fails() {
        let mut env = LaneEnv::new(EnvConfig::desk()).unwrap();
        assert!(matches!(env.step(Action::default()), Err(LvmError::EpisodeDone)));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = EnvConfig::desk();
        cfg.reward_coefs[2] = 0.5;
        assert!(LaneEnv::new(cfg).unwrap_err().to_string().contains("env.c3"));
        let cfg = EnvConfig { img_size: 4, ..EnvConfig::desk() };
        assert!(LaneEnv::new(cfg).is_err());
    }

    fn trace(seed: u64, actions: &[(f64, f64)]) -> Vec<(f64, bool)> {
        let mut env = LaneEnv::new(EnvConfig::desk()).unwrap();
        env.reset(seed);
        let mut out = Vec::new();
        for &(a, d) in actions {
            let step = env.step(Action::new(a, d)).unwrap();
            out.push((step.reward, step.done));
            if step.done {
                break;
            }
        }
        out
    }

    proptest! {
        #[test]
        fn reward_is_never_positive(y in -5.0..5.0f64, phi in -3.0..3.0f64, v in 0.0..10.0f64,
                                    omega in -2.0..2.0f64, beta in -0.5..0.5f64,
                                    a in -2.0..2.0f64, d in -0.35..0.35f64) {
            let cfg = EnvConfig::desk();
            let s = VehicleState { y, phi_err: phi, v, omega, beta, station: 0.0, t: 0 };
            let r = compute_reward(&cfg, &s, Action::new(a, d));
            prop_assert!(r <= 0.0);
            let ideal = y == 0.0 && phi == 0.0 && v == cfg.v0 && omega == 0.0 && beta == 0.0 && a == 0.0 && d == 0.0;
            prop_assert_eq!(r == 0.0, ideal);
        }

        #[test]
        fn coasting_keeps_speed_and_state_valid(y in -2.0..2.0f64, phi in -1.0..1.0f64, v in 0.1..10.0f64,
                                                d in -0.35..0.35f64) {
            let cfg = EnvConfig::desk();
            let s = VehicleState { y, phi_err: phi, v, omega: 0.0, beta: 0.0, station: 5.0, t: 0 };
            let next = dynamics_step(&cfg, &s, Action::new(0.0, d), cfg.dt).unwrap();
            prop_assert_eq!(next.v, v);
            prop_assert!(next.is_finite());
            prop_assert!(next.station >= 0.0);
            prop_assert!(next.phi_err > -PI && next.phi_err <= PI);
        }

        #[test]
        fn episodes_are_deterministic_and_capped(seed in 0u64..1000,
                                                 actions in prop::collection::vec((-3.0..3.0f64, -0.5..0.5f64), 1..600)) {
            let a = trace(seed, &actions);
            prop_assert_eq!(&a, &trace(seed, &actions));
            prop_assert!(a.len() <= 500);
        }
    }
}
