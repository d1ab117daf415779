//! Randomized match scenarios: initial conditions, broadcast-style camera
//! draws and frame timestamp grids, with rejection sampling against
//! per-scenario predicates and on-screen visibility.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{simulate_with_events, BallState, PhysicsError, PhysicsParams, Trajectory};
use crate::camera::{project, table_keypoints_3d, CameraModel};
use crate::table;

/// Margin (px) required of the dense 2D track so that any timestamp on the
/// continuous path stays inside the image, not just the checked grid points.
const VISIBILITY_MARGIN_PX: f64 = 8.0;

/// Dense event-analysis resolution (s).
const DENSE_DT: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("no acceptable trajectory found in {0} attempts")]
    SamplingExhausted(usize),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// Kind of match situation to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    RallyLeft,
    RallyRight,
    Serve,
    FaultNet,
    FaultLong,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::RallyLeft,
        ScenarioKind::RallyRight,
        ScenarioKind::Serve,
        ScenarioKind::FaultNet,
        ScenarioKind::FaultLong,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::RallyLeft => "rally-left",
            ScenarioKind::RallyRight => "rally-right",
            ScenarioKind::Serve => "serve",
            ScenarioKind::FaultNet => "fault-net",
            ScenarioKind::FaultLong => "fault-long",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Closed sampling interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * rng.random::<f64>()
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn check(&self, name: &str) -> Result<(), ScenarioError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(ScenarioError::InvalidConfig(format!(
                "range {name} must satisfy lo <= hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Broadcast-style camera randomization ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRanges {
    /// Horizontal distance from the table center (m).
    pub distance_m: Range,
    /// Camera height above the floor (m).
    pub height_m: Range,
    /// Azimuth around the table (rad).
    pub azimuth_rad: Range,
    /// Focal length (px).
    pub focal_px: Range,
    /// Maximum look-at jitter away from the table center (deg).
    pub look_jitter_deg: f64,
    /// Principal point offset as a fraction of image width/height.
    pub principal_offset_frac: f64,
    pub image_w: u32,
    pub image_h: u32,
}

impl Default for CameraRanges {
    fn default() -> Self {
        Self {
            distance_m: Range::new(5.0, 12.0),
            height_m: Range::new(1.5, 4.0),
            azimuth_rad: Range::new(0.0, std::f64::consts::TAU),
            focal_px: Range::new(1000.0, 3000.0),
            look_jitter_deg: 5.0,
            principal_offset_frac: 0.05,
            image_w: 1920,
            image_h: 1080,
        }
    }
}

/// Sampling ranges for one scenario kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub physics: PhysicsParams,
    /// Launch distance from the table center along x, on the launching side
    /// (m, positive values; the side sign is applied by the sampler).
    pub start_long_m: Range,
    /// Launch y position (m).
    pub start_lat_m: Range,
    /// Launch height above the table surface (m).
    pub start_height_m: Range,
    /// Launch speed (m/s).
    pub speed_m_s: Range,
    /// Launch elevation above the horizontal (deg).
    pub elevation_deg: Range,
    /// Lateral launch deviation from straight-ahead (deg).
    pub azimuth_deg: Range,
    /// Spin magnitude (rad/s).
    pub spin_rad_s: Range,
    /// Spin axis mixture in the launch frame: component along the travel
    /// direction (roll).
    pub spin_axis_roll: Range,
    /// Component along the lateral axis; the sign is drawn separately so
    /// topspin and backspin are equally likely.
    pub spin_axis_top: Range,
    /// Component along the vertical axis (sidespin).
    pub spin_axis_side: Range,
    /// Frame rate (Hz).
    pub fps_hz: Range,
    /// Trajectory duration (s).
    pub duration_s: Range,
    pub camera: CameraRanges,
    pub max_attempts: usize,
}

impl ScenarioConfig {
    /// Default sampling ranges for the given scenario kind.
    pub fn preset(kind: ScenarioKind) -> Self {
        let base = Self {
            kind,
            physics: PhysicsParams::default(),
            start_long_m: Range::new(0.3, 1.9),
            start_lat_m: Range::new(-0.5, 0.5),
            start_height_m: Range::new(0.15, 0.65),
            speed_m_s: Range::new(4.0, 13.0),
            elevation_deg: Range::new(-5.0, 22.0),
            azimuth_deg: Range::new(-14.0, 14.0),
            spin_rad_s: Range::new(0.0, 500.0),
            spin_axis_roll: Range::new(-0.35, 0.35),
            spin_axis_top: Range::new(0.35, 1.0),
            spin_axis_side: Range::new(-0.7, 0.7),
            fps_hz: Range::new(20.0, 60.0),
            duration_s: Range::new(0.5, 1.2),
            camera: CameraRanges::default(),
            max_attempts: 100,
        };
        match kind {
            ScenarioKind::RallyLeft | ScenarioKind::RallyRight => base,
            ScenarioKind::Serve => Self {
                start_long_m: Range::new(1.2, 1.9),
                start_height_m: Range::new(0.25, 0.75),
                speed_m_s: Range::new(3.5, 7.5),
                elevation_deg: Range::new(-14.0, 4.0),
                azimuth_deg: Range::new(-10.0, 10.0),
                duration_s: Range::new(0.6, 1.3),
                ..base
            },
            ScenarioKind::FaultNet => Self {
                speed_m_s: Range::new(3.0, 9.0),
                elevation_deg: Range::new(-10.0, 10.0),
                ..base
            },
            ScenarioKind::FaultLong => Self {
                speed_m_s: Range::new(9.0, 18.0),
                elevation_deg: Range::new(0.0, 18.0),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.physics
            .validate()
            .map_err(|e| ScenarioError::InvalidConfig(e.to_string()))?;
        for (r, name) in [
            (self.start_long_m, "start_long_m"),
            (self.start_lat_m, "start_lat_m"),
            (self.start_height_m, "start_height_m"),
            (self.speed_m_s, "speed_m_s"),
            (self.elevation_deg, "elevation_deg"),
            (self.azimuth_deg, "azimuth_deg"),
            (self.spin_rad_s, "spin_rad_s"),
            (self.spin_axis_roll, "spin_axis_roll"),
            (self.spin_axis_top, "spin_axis_top"),
            (self.spin_axis_side, "spin_axis_side"),
            (self.fps_hz, "fps_hz"),
            (self.duration_s, "duration_s"),
            (self.camera.distance_m, "camera.distance_m"),
            (self.camera.height_m, "camera.height_m"),
            (self.camera.azimuth_rad, "camera.azimuth_rad"),
            (self.camera.focal_px, "camera.focal_px"),
        ] {
            r.check(name)?;
        }
        if self.spin_rad_s.lo < 0.0 {
            return Err(ScenarioError::InvalidConfig(
                "spin magnitude must be >= 0".into(),
            ));
        }
        if self.fps_hz.lo <= 0.0 || self.duration_s.lo <= 0.0 {
            return Err(ScenarioError::InvalidConfig(
                "fps and duration must be positive".into(),
            ));
        }
        if self.max_attempts == 0 {
            return Err(ScenarioError::InvalidConfig(
                "max_attempts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Geometric events extracted from a densely sampled trajectory.
#[derive(Debug, Clone, Default)]
pub(crate) struct TrackEvents {
    /// First time the ball crosses the net plane within the net span below
    /// the top band.
    pub net_hit_s: Option<f64>,
    /// First descent through table height outside the footprint: (time, x).
    pub out_descent: Option<(f64, f64)>,
}

pub(crate) fn analyze_track(traj: &Trajectory, params: &PhysicsParams, dt: f64) -> TrackEvents {
    let mut events = TrackEvents::default();
    let contact_z = params.contact_height();
    let net_span = params.table_width / 2.0 + table::NET_OVERHANG;
    let net_top = params.table_height + params.net_height + params.ball_radius;
    for (i, pair) in traj.states.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let t0 = i as f64 * dt;
        if events.net_hit_s.is_none() && a.r.x.signum() != b.r.x.signum() && a.r.x != 0.0 {
            let s = a.r.x / (a.r.x - b.r.x);
            let y = a.r.y + s * (b.r.y - a.r.y);
            let z = a.r.z + s * (b.r.z - a.r.z);
            if y.abs() <= net_span && z <= net_top {
                events.net_hit_s = Some(t0 + s * dt);
            }
        }
        if events.out_descent.is_none() && a.r.z > contact_z && b.r.z <= contact_z {
            let s = (a.r.z - contact_z) / (a.r.z - b.r.z);
            let x = a.r.x + s * (b.r.x - a.r.x);
            let y = a.r.y + s * (b.r.y - a.r.y);
            if !params.in_footprint(x, y) {
                events.out_descent = Some((t0 + s * dt, x));
            }
        }
    }
    events
}

fn draw_initial_state<R: Rng>(rng: &mut R, cfg: &ScenarioConfig, side: f64) -> BallState {
    let x = side * cfg.start_long_m.sample(rng);
    let y = cfg.start_lat_m.sample(rng);
    let z = cfg.physics.table_height + cfg.start_height_m.sample(rng);

    let speed = cfg.speed_m_s.sample(rng);
    let elevation = cfg.elevation_deg.sample(rng).to_radians();
    let azimuth = cfg.azimuth_deg.sample(rng).to_radians();
    // Travel is toward the opposite side.
    let dir_x = -side;
    let v = Vector3::new(
        speed * elevation.cos() * azimuth.cos() * dir_x,
        speed * elevation.cos() * azimuth.sin(),
        speed * elevation.sin(),
    );

    let magnitude = cfg.spin_rad_s.sample(rng);
    let roll = cfg.spin_axis_roll.sample(rng);
    let top = cfg.spin_axis_top.sample(rng);
    let top_sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let side_c = cfg.spin_axis_side.sample(rng);

    // Local launch frame: x along horizontal travel, z up, y = z × x.
    let horiz = Vector3::new(v.x, v.y, 0.0);
    let x_loc = if horiz.norm() > 1e-9 {
        horiz.normalize()
    } else {
        Vector3::new(dir_x, 0.0, 0.0)
    };
    let z_loc = Vector3::z();
    let y_loc = z_loc.cross(&x_loc);
    let axis = roll * x_loc + top_sign * top * y_loc + side_c * z_loc;
    let omega = if axis.norm() > 1e-9 {
        axis.normalize() * magnitude
    } else {
        Vector3::zeros()
    };

    BallState::new(Vector3::new(x, y, z), v, omega)
}

fn draw_camera<R: Rng>(rng: &mut R, ranges: &CameraRanges) -> CameraModel {
    let azimuth = ranges.azimuth_rad.sample(rng);
    let distance = ranges.distance_m.sample(rng);
    let height = ranges.height_m.sample(rng);
    let position = Vector3::new(
        distance * azimuth.cos(),
        distance * azimuth.sin(),
        height,
    );
    let target = Vector3::new(0.0, 0.0, table::HEIGHT);
    let mut forward = (target - position).normalize();

    // Disk-uniform jitter of the viewing direction.
    let jitter = ranges.look_jitter_deg.to_radians() * rng.random::<f64>().sqrt();
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    let e1 = forward.cross(&Vector3::z()).normalize();
    let e2 = forward.cross(&e1).normalize();
    forward = (forward * jitter.cos() + (e1 * phi.cos() + e2 * phi.sin()) * jitter.sin()).normalize();

    let focal = ranges.focal_px.sample(rng);
    let w = ranges.image_w as f64;
    let h = ranges.image_h as f64;
    let off = ranges.principal_offset_frac;
    let cx = w / 2.0 + (2.0 * rng.random::<f64>() - 1.0) * off * w;
    let cy = h / 2.0 + (2.0 * rng.random::<f64>() - 1.0) * off * h;

    CameraModel::from_pose_axis(position, forward, focal, [cx, cy])
}

fn point_visible(camera: &CameraModel, p: Vector3<f64>, w: f64, h: f64, margin: f64) -> bool {
    match project(camera, p) {
        Ok(px) => {
            px[0] >= margin && px[0] <= w - 1.0 - margin && px[1] >= margin && px[1] <= h - 1.0 - margin
        }
        Err(_) => false,
    }
}

/// Draws an initial state, camera and frame timestamp grid consistent with
/// the scenario kind, resampling until the scenario predicate holds and the
/// whole 2D track (plus all 13 keypoints) is visible in the image.
pub fn sample_scenario<R: Rng>(
    rng: &mut R,
    cfg: &ScenarioConfig,
) -> Result<(BallState, CameraModel, Vec<f64>), ScenarioError> {
    cfg.validate()?;
    let keypoints = table_keypoints_3d();
    let w = cfg.camera.image_w as f64;
    let h = cfg.camera.image_h as f64;

    for _ in 0..cfg.max_attempts {
        let fps = cfg.fps_hz.sample(rng);
        let duration = cfg.duration_s.sample(rng);
        let side = match cfg.kind {
            ScenarioKind::RallyLeft => -1.0,
            ScenarioKind::RallyRight => 1.0,
            _ => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        let init = draw_initial_state(rng, cfg, side);
        let camera = draw_camera(rng, &cfg.camera);

        let n_dense = (duration / DENSE_DT).floor() as usize;
        let dense_times: Vec<f64> = (0..=n_dense).map(|i| i as f64 * DENSE_DT).collect();
        let traj = simulate_with_events(&init, &cfg.physics, &dense_times)?;
        let full = traj.states.len() == dense_times.len();
        let events = analyze_track(&traj, &cfg.physics, DENSE_DT);

        let Some(t_end) = scenario_window(cfg.kind, side, &traj, &events, duration, full) else {
            continue;
        };

        let n_frames = (t_end * fps + 1e-9).floor() as usize;
        if n_frames < 1 {
            continue;
        }
        let times: Vec<f64> = (0..=n_frames).map(|i| i as f64 / fps).collect();

        let dense_end = ((t_end / DENSE_DT).floor() as usize).min(traj.states.len() - 1);
        let track_ok = traj.states[..=dense_end]
            .iter()
            .all(|s| point_visible(&camera, s.r, w, h, VISIBILITY_MARGIN_PX));
        if !track_ok {
            continue;
        }
        let keypoints_ok = keypoints
            .iter()
            .all(|p| point_visible(&camera, *p, w, h, 0.0));
        if !keypoints_ok {
            continue;
        }

        return Ok((init, camera, times));
    }
    Err(ScenarioError::SamplingExhausted(cfg.max_attempts))
}

/// Applies the per-kind predicate and returns the usable time window, or
/// None when the draw does not realize the scenario.
fn scenario_window(
    kind: ScenarioKind,
    side: f64,
    traj: &Trajectory,
    events: &TrackEvents,
    duration: f64,
    full: bool,
) -> Option<f64> {
    match kind {
        ScenarioKind::RallyLeft | ScenarioKind::RallyRight => {
            if !full || events.net_hit_s.is_some() {
                return None;
            }
            let first = traj.contacts.first()?;
            // The rally shot must land on the opposite half.
            if first.position.x * side >= 0.0 {
                return None;
            }
            Some(duration)
        }
        ScenarioKind::Serve => {
            if !full || events.net_hit_s.is_some() {
                return None;
            }
            if traj.contacts.len() < 2 {
                return None;
            }
            let own = traj.contacts[0].position.x * side > 0.0;
            let opposite = traj.contacts[1].position.x * side < 0.0;
            (own && opposite).then_some(duration)
        }
        ScenarioKind::FaultNet => {
            let t_hit = events.net_hit_s?;
            if t_hit > duration || t_hit < 0.1 {
                return None;
            }
            Some(t_hit)
        }
        ScenarioKind::FaultLong => {
            if events.net_hit_s.is_some_and(|t| t <= duration) {
                return None;
            }
            let (t_out, x_out) = events.out_descent?;
            if x_out * side >= 0.0 || t_out > duration {
                return None;
            }
            // No table contact before going long.
            if traj.contacts.iter().any(|c| c.time_s < t_out) {
                return None;
            }
            let last_t = (traj.states.len() - 1) as f64 * DENSE_DT;
            Some((t_out + 0.15).min(duration).min(last_t))
        }
    }
}
