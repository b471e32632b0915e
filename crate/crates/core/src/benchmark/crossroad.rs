//! Pedestrian crossroad: a robot drives from start to goal while pedestrians
//! cross its path. The robot uses a clearance-keeping heuristic controller
//! (proportional navigation, braking and a short-range repulsion term).

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::logic::TimeInterval;
use crate::robustness::Episode;
use crate::rng::stream_rng;
use crate::{Error, Result};

pub const PREDICATE_NAMES: [&str; 7] = [
    "p_clear",
    "p_f",
    "p_l",
    "p_r",
    "p_front_margin",
    "p_goal",
    "p_speed",
];

/// Indices into the robot part of the state vector.
const RX: usize = 0;
const RY: usize = 1;
const VX: usize = 2;
const VY: usize = 3;
const HEADING: usize = 4;
const ROBOT_DIM: usize = 5;
const PED_DIM: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossroadConfig {
    pub arena_half_width: f64,
    pub robot_start: [f64; 2],
    pub goal: [f64; 2],
    pub ped_starts: Vec<[f64; 2]>,
    /// Nominal walking speed of each pedestrian (m/s); paths cross the x axis.
    pub ped_speeds: Vec<f64>,
    /// Relative per-episode speed perturbation (standard deviation).
    pub ped_speed_noise: f64,
    /// Per-episode start position jitter (m, standard deviation).
    pub start_jitter: f64,
    pub d_safe: f64,
    pub sector_half_angle_deg: f64,
    pub sector_max: f64,
    pub goal_radius: f64,
    pub v_max: f64,
    /// Controller braking starts when a pedestrian ahead is within this range.
    pub activation_radius: f64,
    /// Deceleration assumed by the front-margin predicate (m/s²).
    pub brake_decel: f64,
    pub lane_half_width: f64,
    pub dt: f64,
    /// Final time index `T`; episodes have `T + 1` steps.
    pub steps: usize,
    /// Standard deviation of the velocity disturbance (m/s per step).
    pub process_noise: f64,
    /// Dictionary intervals recorded with generated datasets.
    pub intervals: Vec<[usize; 2]>,
    pub seed: u64,
}

impl Default for CrossroadConfig {
    fn default() -> Self {
        Self {
            arena_half_width: 10.0,
            robot_start: [-6.0, 0.0],
            goal: [6.0, 0.0],
            ped_starts: vec![[-1.5, -5.0], [0.5, 5.5], [2.5, -6.0]],
            ped_speeds: vec![0.9, 1.0, 1.1],
            ped_speed_noise: 0.15,
            start_jitter: 0.6,
            d_safe: 1.0,
            sector_half_angle_deg: 45.0,
            sector_max: 10.0,
            goal_radius: 0.5,
            v_max: 1.5,
            activation_radius: 3.0,
            brake_decel: 2.0,
            lane_half_width: 1.0,
            dt: 0.1,
            steps: 80,
            process_noise: 0.03,
            intervals: vec![[0, 1], [0, 2], [0, 4], [0, 8], [0, 16]],
            seed: 0,
        }
    }
}

impl CrossroadConfig {
    /// Reads a key-value (TOML) file; missing keys take their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.d_safe > 0.0) {
            return bad(format!("d_safe must be positive, got {}", self.d_safe));
        }
        if self.ped_starts.len() != self.ped_speeds.len() {
            return bad("ped_starts and ped_speeds differ in length".into());
        }
        if self.ped_speeds.iter().any(|s| !(*s >= 0.0)) {
            return bad("pedestrian speeds must be nonnegative".into());
        }
        if !(self.dt > 0.0) || !(self.v_max > 0.0) || !(self.brake_decel > 0.0) {
            return bad("dt, v_max and brake_decel must be positive".into());
        }
        if !(self.sector_half_angle_deg > 0.0 && self.sector_half_angle_deg <= 90.0) {
            return bad("sector_half_angle_deg must be in (0, 90]".into());
        }
        if !(self.sector_max > self.d_safe) {
            return bad("sector_max must exceed d_safe".into());
        }
        if self.ped_speed_noise < 0.0 || self.start_jitter < 0.0 || self.process_noise < 0.0 {
            return bad("noise scales must be nonnegative".into());
        }
        let intervals = self.time_intervals()?;
        if intervals.is_empty() {
            return bad("at least one dictionary interval is required".into());
        }
        let k_max = self.k_max();
        if self.steps < k_max {
            return bad(format!("steps {} shorter than K_max {k_max}", self.steps));
        }
        Ok(())
    }

    pub fn time_intervals(&self) -> Result<Vec<TimeInterval>> {
        self.intervals.iter().map(|[a, b]| TimeInterval::new(*a, *b)).collect()
    }

    pub fn k_max(&self) -> usize {
        self.intervals.iter().map(|[_, b]| *b).max().unwrap_or(0)
    }

    pub fn num_pedestrians(&self) -> usize {
        self.ped_starts.len()
    }

    pub fn predicates(&self) -> CrossroadPredicates {
        CrossroadPredicates {
            d_safe: self.d_safe,
            half_angle: self.sector_half_angle_deg.to_radians(),
            sector_max: self.sector_max,
            goal: self.goal,
            goal_radius: self.goal_radius,
            v_max: self.v_max,
            lane_half_width: self.lane_half_width,
            brake_decel: self.brake_decel,
            num_pedestrians: self.num_pedestrians(),
        }
    }
}

/// The seven crossroad predicates as functions of the simulator state.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossroadPredicates {
    pub d_safe: f64,
    /// Sector half-angle in radians.
    pub half_angle: f64,
    pub sector_max: f64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub v_max: f64,
    pub lane_half_width: f64,
    pub brake_decel: f64,
    pub num_pedestrians: usize,
}

pub fn crossroad_predicates(cfg: &CrossroadConfig) -> CrossroadPredicates {
    cfg.predicates()
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI) % (2.0 * PI);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    a - PI
}

impl CrossroadPredicates {
    pub fn names(&self) -> Vec<String> {
        PREDICATE_NAMES.iter().map(|s| s.to_string()).collect()
    }

    pub fn state_dim(&self) -> usize {
        ROBOT_DIM + PED_DIM * self.num_pedestrians
    }

    /// Human-readable definitions, recorded in dataset manifests.
    pub fn definitions(&self) -> Vec<String> {
        vec![
            "p_clear = min pedestrian distance - d_safe".into(),
            "p_f = min distance in the front cone (heading ± half-angle), capped at sector_max, - d_safe".into(),
            "p_l = same for the left cone (heading + 90°)".into(),
            "p_r = same for the right cone (heading - 90°)".into(),
            "p_front_margin = min longitudinal gap to pedestrians in the lane ahead (capped at sector_max) - d_safe - v²/(2·brake_decel)".into(),
            "p_goal = goal_radius - distance to goal".into(),
            "p_speed = v_max - speed".into(),
        ]
    }

    fn sector(&self, offsets: &[(f64, f64)], heading: f64, center: f64) -> f64 {
        let nearest = offsets
            .iter()
            .filter(|(dx, dy)| wrap_angle(dy.atan2(*dx) - heading - center).abs() <= self.half_angle)
            .map(|(dx, dy)| dx.hypot(*dy))
            .fold(self.sector_max, f64::min);
        nearest - self.d_safe
    }

    pub fn eval(&self, state: &[f64]) -> [f64; 7] {
        let (rx, ry, heading) = (state[RX], state[RY], state[HEADING]);
        let speed = state[VX].hypot(state[VY]);
        let offsets: Vec<(f64, f64)> = (0..self.num_pedestrians)
            .map(|i| {
                let base = ROBOT_DIM + PED_DIM * i;
                (state[base] - rx, state[base + 1] - ry)
            })
            .collect();

        let clear = offsets
            .iter()
            .map(|(dx, dy)| dx.hypot(*dy))
            .reduce(f64::min)
            .unwrap_or(self.sector_max)
            - self.d_safe;

        let (c, s) = (heading.cos(), heading.sin());
        let gap = offsets
            .iter()
            .map(|(dx, dy)| (dx * c + dy * s, -dx * s + dy * c))
            .filter(|(lon, lat)| *lon > 0.0 && lat.abs() <= self.lane_half_width)
            .map(|(lon, _)| lon)
            .fold(self.sector_max, f64::min);
        let front_margin = gap - self.d_safe - speed * speed / (2.0 * self.brake_decel);

        let goal_dist = (self.goal[0] - rx).hypot(self.goal[1] - ry);
        [
            clear,
            self.sector(&offsets, heading, 0.0),
            self.sector(&offsets, heading, PI / 2.0),
            self.sector(&offsets, heading, -PI / 2.0),
            front_margin,
            self.goal_radius - goal_dist,
            self.v_max - speed,
        ]
    }
}

/// Simulates one episode; the episode id is the seed.
pub fn simulate_episode(cfg: &CrossroadConfig, seed: u64) -> Result<Episode> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, 0x5EED);
    let jitter = Normal::new(0.0, cfg.start_jitter.max(f64::MIN_POSITIVE)).expect("valid normal");
    let process = Normal::new(0.0, cfg.process_noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let draw = |d: &Normal<f64>, scale: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        if scale > 0.0 {
            d.sample(rng)
        } else {
            0.0
        }
    };

    let mut state = vec![0.0; ROBOT_DIM + PED_DIM * cfg.num_pedestrians()];
    state[RX] = cfg.robot_start[0] + draw(&jitter, cfg.start_jitter, &mut rng);
    state[RY] = cfg.robot_start[1] + draw(&jitter, cfg.start_jitter, &mut rng);
    state[HEADING] = (cfg.goal[1] - state[RY]).atan2(cfg.goal[0] - state[RX]);
    for (i, (start, speed)) in cfg.ped_starts.iter().zip(&cfg.ped_speeds).enumerate() {
        let base = ROBOT_DIM + PED_DIM * i;
        let factor = if cfg.ped_speed_noise > 0.0 {
            (1.0 + cfg.ped_speed_noise * rng.sample::<f64, _>(rand_distr::StandardNormal)).max(0.0)
        } else {
            1.0
        };
        state[base] = start[0] + draw(&jitter, cfg.start_jitter, &mut rng);
        state[base + 1] = start[1] + draw(&jitter, cfg.start_jitter, &mut rng);
        let direction = if start[1] > 0.0 { -1.0 } else { 1.0 };
        state[base + 3] = direction * speed * factor;
    }

    let predicates = cfg.predicates();
    let mut states = Vec::with_capacity(cfg.steps + 1);
    let mut rows = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..=cfg.steps {
        rows.push(predicates.eval(&state).to_vec());
        states.push(state.clone());
        step(cfg, &mut state, &mut rng, &process);
    }
    Episode::from_rows(seed, cfg.dt, &rows)?.with_states(states)
}

fn step(cfg: &CrossroadConfig, state: &mut [f64], rng: &mut rand_chacha::ChaCha8Rng, process: &Normal<f64>) {
    let (rx, ry) = (state[RX], state[RY]);
    let (gx, gy) = (cfg.goal[0] - rx, cfg.goal[1] - ry);
    let goal_dist = gx.hypot(gy);
    let desired_speed = cfg.v_max.min(goal_dist);
    let (ux, uy) = if goal_dist > 1e-9 { (gx / goal_dist, gy / goal_dist) } else { (0.0, 0.0) };

    let mut brake: f64 = 1.0;
    let (mut rep_x, mut rep_y) = (0.0, 0.0);
    for i in 0..cfg.num_pedestrians() {
        let base = ROBOT_DIM + PED_DIM * i;
        let (dx, dy) = (state[base] - rx, state[base + 1] - ry);
        let dist = dx.hypot(dy).max(1e-6);
        if dist >= cfg.activation_radius {
            continue;
        }
        let ahead = (dx * ux + dy * uy) / dist;
        if ahead > 0.5 {
            brake = brake.min(((dist - cfg.d_safe) / (cfg.activation_radius - cfg.d_safe)).clamp(0.0, 1.0));
        }
        let push = 0.8 * (1.0 / dist - 1.0 / cfg.activation_radius);
        rep_x -= push * dx / dist;
        rep_y -= push * dy / dist;
    }

    let mut vx = desired_speed * brake * ux + rep_x;
    let mut vy = desired_speed * brake * uy + rep_y;
    let speed = vx.hypot(vy);
    if speed > cfg.v_max {
        vx *= cfg.v_max / speed;
        vy *= cfg.v_max / speed;
    }
    let lag = (cfg.dt / 0.3).min(1.0);
    let noise = |rng: &mut rand_chacha::ChaCha8Rng| {
        if cfg.process_noise > 0.0 {
            process.sample(rng)
        } else {
            0.0
        }
    };
    state[VX] += (vx - state[VX]) * lag + noise(rng);
    state[VY] += (vy - state[VY]) * lag + noise(rng);
    let speed = state[VX].hypot(state[VY]);
    if speed > cfg.v_max {
        state[VX] *= cfg.v_max / speed;
        state[VY] *= cfg.v_max / speed;
    }
    if speed > 1e-3 {
        state[HEADING] = state[VY].atan2(state[VX]);
    }
    let limit = cfg.arena_half_width;
    state[RX] = (state[RX] + state[VX] * cfg.dt).clamp(-limit, limit);
    state[RY] = (state[RY] + state[VY] * cfg.dt).clamp(-limit, limit);
    for i in 0..cfg.num_pedestrians() {
        let base = ROBOT_DIM + PED_DIM * i;
        state[base] += state[base + 2] * cfg.dt;
        state[base + 1] += state[base + 3] * cfg.dt;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ped_state(peds: &[[f64; 2]], heading: f64, v: [f64; 2]) -> Vec<f64> {
        let mut s = vec![0.0, 0.0, v[0], v[1], heading];
        for p in peds {
            s.extend([p[0], p[1], 0.0, 0.0]);
        }
        s
    }

    fn preds(n: usize) -> CrossroadPredicates {
        CrossroadPredicates {
            num_pedestrians: n,
            ..CrossroadConfig::default().predicates()
        }
    }

    #[test]
    fn front_sector_clearance() {
        let p = preds(1).eval(&ped_state(&[[1.5, 0.0]], 0.0, [0.0, 0.0]));
        assert!((p[1] - 0.5).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert_eq!(p[2], 10.0 - 1.0);
        assert_eq!(p[3], 10.0 - 1.0);
    }

    #[test]
    fn side_sectors_follow_heading() {
        let p = preds(1).eval(&ped_state(&[[0.0, 2.0]], 0.0, [0.0, 0.0]));
        assert!((p[2] - 1.0).abs() < 1e-12);
        assert_eq!(p[1], 9.0);
        let turned = preds(1).eval(&ped_state(&[[0.0, 2.0]], PI / 2.0, [0.0, 0.0]));
        assert!((turned[1] - 1.0).abs() < 1e-12);
        assert!((turned[3] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn goal_speed_and_front_margin() {
        let mut p = preds(1);
        p.goal = [0.0, 0.0];
        let v = p.eval(&ped_state(&[[3.0, 0.5]], 0.0, [1.0, 0.0]));
        assert_eq!(v[5], p.goal_radius);
        assert!((v[6] - 0.5).abs() < 1e-12);
        assert!((v[4] - (3.0 - 1.0 - 1.0 / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn static_scene_is_constant() {
        let cfg = CrossroadConfig {
            robot_start: [6.0, 0.0],
            ped_speeds: vec![0.0; 3],
            ped_speed_noise: 0.0,
            start_jitter: 0.0,
            process_noise: 0.0,
            ..CrossroadConfig::default()
        };
        let ep = simulate_episode(&cfg, 3).unwrap();
        let clear = ep.predicate(0);
        assert!(clear.iter().all(|&v| v == clear[0] && v > 0.0));
    }

    #[test]
    fn deterministic_and_consistent() {
        let cfg = CrossroadConfig::default();
        let a = simulate_episode(&cfg, 11).unwrap();
        let b = simulate_episode(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate_episode(&cfg, 12).unwrap());
        let p = cfg.predicates();
        for (t, s) in a.states().unwrap().iter().enumerate() {
            assert_eq!(p.eval(s).to_vec(), a.row(t));
        }
        assert_eq!(a.len(), cfg.steps + 1);
    }

    #[test]
    fn pedestrian_inside_safety_radius() {
        let cfg = CrossroadConfig {
            ped_starts: vec![[-5.5, 0.2]],
            ped_speeds: vec![0.0],
            start_jitter: 0.0,
            ..CrossroadConfig::default()
        };
        let ep = simulate_episode(&cfg, 0).unwrap();
        assert!(ep.value(0, 0) < 0.0);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            CrossroadConfig {
                d_safe: 0.0,
                ..Default::default()
            },
            CrossroadConfig {
                ped_speeds: vec![-1.0, 1.0, 1.0],
                ..Default::default()
            },
            CrossroadConfig {
                steps: 10,
                ..Default::default()
            },
            CrossroadConfig {
                intervals: vec![[3, 1]],
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(simulate_episode(&cfg, 0).is_err());
        }
    }

    #[test]
    fn toml_config_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "d_safe = 1.5\nsteps = 40\nped_starts = [[0.0, -4.0]]\nped_speeds = [1.0]\n").unwrap();
        let cfg = CrossroadConfig::from_file(&path).unwrap();
        assert_eq!((cfg.d_safe, cfg.steps, cfg.num_pedestrians()), (1.5, 40, 1));
        std::fs::write(&path, "bogus_key = 1\n").unwrap();
        assert!(matches!(CrossroadConfig::from_file(&path), Err(Error::InvalidConfig(_))));
    }
}
