//! Ball flight and bounce physics plus synthetic dataset generation.
//!
//! Flight model between contacts:
//!
//! ```text
//! a = g − k_D·‖v‖·v + k_M·(ω × v)
//! ```
//!
//! with constant spin during flight. Table contacts use a linear
//! restitution/friction model with a spin-to-tangential coupling, guarded so
//! that effective kinetic energy never increases.

mod dataset;
mod scenario;

pub use dataset::{
    derive_seed, generate_dataset, read_jsonl, write_jsonl, DatasetError, SynthSample,
    SCHEMA_FIELDS,
};
pub use scenario::{
    sample_scenario, CameraRanges, Range, ScenarioConfig, ScenarioError, ScenarioKind,
};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table;

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("invalid physics parameter: {0}")]
    InvalidParams(String),
    #[error("bounce precondition violated: {0}")]
    BadContact(String),
    #[error("sample times must be strictly increasing and start at 0 (index {0})")]
    BadSampleTimes(usize),
    #[error("state is not finite")]
    NonFiniteState,
}

/// Instantaneous ball state: position (m), velocity (m/s) and angular
/// velocity (rad/s), all in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl BallState {
    pub fn new(r: Vector3<f64>, v: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self { r, v, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
    }
}

/// Aerodynamic, bounce and table parameters.
///
/// The defaults assume a standard 40 mm, 2.7 g ball at sea-level air
/// density: the lumped drag factor k_D = ρ·C_D·A/(2m) ≈ 0.112 m⁻¹ and a
/// lumped Magnus factor of 4.0e−4 per (rad/s)·(m/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub gravity: Vector3<f64>,
    /// Lumped drag coefficient k_D (1/m).
    pub drag: f64,
    /// Lumped Magnus coefficient k_M (s·rad⁻¹).
    pub magnus: f64,
    /// Normal restitution e_z ∈ (0, 1].
    pub restitution: f64,
    /// Tangential velocity retention κ_v ∈ [0, 1].
    pub tangential_retention: f64,
    /// Spin-to-tangential-velocity coupling κ_w (m).
    pub spin_surface_coupling: f64,
    /// Spin retention at bounce μ_w.
    pub spin_retention: f64,
    /// Ball radius (m).
    pub ball_radius: f64,
    /// Table surface height above the floor (m).
    pub table_height: f64,
    /// Playing surface length along x (m).
    pub table_length: f64,
    /// Playing surface width along y (m).
    pub table_width: f64,
    /// Net height above the surface (m).
    pub net_height: f64,
    /// Internal integration step (s).
    pub integration_dt: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            gravity: Vector3::new(0.0, 0.0, -9.81),
            drag: 0.112,
            magnus: 4.0e-4,
            restitution: 0.9,
            tangential_retention: 0.75,
            spin_surface_coupling: 0.0075,
            spin_retention: 0.8,
            ball_radius: 0.02,
            table_height: table::HEIGHT,
            table_length: table::LENGTH,
            table_width: table::WIDTH,
            net_height: table::NET_HEIGHT,
            integration_dt: 1e-3,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        if self.drag < 0.0 {
            return Err(PhysicsError::InvalidParams("drag must be >= 0".into()));
        }
        if self.magnus < 0.0 {
            return Err(PhysicsError::InvalidParams("magnus must be >= 0".into()));
        }
        if !(self.restitution > 0.0 && self.restitution <= 1.0) {
            return Err(PhysicsError::InvalidParams(
                "restitution must be in (0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tangential_retention) {
            return Err(PhysicsError::InvalidParams(
                "tangential_retention must be in [0, 1]".into(),
            ));
        }
        if self.ball_radius <= 0.0 || self.integration_dt <= 0.0 {
            return Err(PhysicsError::InvalidParams(
                "ball_radius and integration_dt must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Height of the ball center at table contact (m).
    pub fn contact_height(&self) -> f64 {
        self.table_height + self.ball_radius
    }

    /// Effective moment-of-inertia factor used in the energy bookkeeping,
    /// (2/5)·r² for a solid-sphere approximation.
    pub fn inertia_factor(&self) -> f64 {
        0.4 * self.ball_radius * self.ball_radius
    }

    pub fn in_footprint(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.table_length / 2.0 && y.abs() <= self.table_width / 2.0
    }
}

/// Acceleration of the ball in flight: gravity, quadratic drag and Magnus
/// lift.
pub fn flight_derivative(state: &BallState, params: &PhysicsParams) -> Vector3<f64> {
    let speed = state.v.norm();
    params.gravity - params.drag * speed * state.v + params.magnus * state.omega.cross(&state.v)
}

/// Classical fourth-order Runge–Kutta step of (r, v); spin is constant in
/// flight.
pub fn step_rk4(state: &BallState, params: &PhysicsParams, dt: f64) -> BallState {
    let accel = |r: Vector3<f64>, v: Vector3<f64>| {
        let s = BallState::new(r, v, state.omega);
        flight_derivative(&s, params)
    };
    let (r0, v0) = (state.r, state.v);
    let k1_r = v0;
    let k1_v = accel(r0, v0);
    let k2_r = v0 + 0.5 * dt * k1_v;
    let k2_v = accel(r0 + 0.5 * dt * k1_r, v0 + 0.5 * dt * k1_v);
    let k3_r = v0 + 0.5 * dt * k2_v;
    let k3_v = accel(r0 + 0.5 * dt * k2_r, v0 + 0.5 * dt * k2_v);
    let k4_r = v0 + dt * k3_v;
    let k4_v = accel(r0 + dt * k3_r, v0 + dt * k3_v);
    BallState::new(
        r0 + dt / 6.0 * (k1_r + 2.0 * k2_r + 2.0 * k3_r + k4_r),
        v0 + dt / 6.0 * (k1_v + 2.0 * k2_v + 2.0 * k3_v + k4_v),
        state.omega,
    )
}

/// Effective kinetic energy measure ‖v‖² + I_eff·‖ω‖² (mass factored out).
pub fn effective_energy(state: &BallState, params: &PhysicsParams) -> f64 {
    state.v.norm_squared() + params.inertia_factor() * state.omega.norm_squared()
}

/// Applies the table bounce model.
///
/// Preconditions: ball center at contact height, descending, and above the
/// table footprint. The tangential response is
/// v'_t = κ_v·v_t + κ_w·(ω × n̂)_t with n̂ the table normal, then rescaled if
/// necessary so the effective kinetic energy never increases.
pub fn bounce(state: &BallState, params: &PhysicsParams) -> Result<BallState, PhysicsError> {
    if !state.is_finite() {
        return Err(PhysicsError::NonFiniteState);
    }
    if state.v.z >= 0.0 {
        return Err(PhysicsError::BadContact(format!(
            "vertical velocity must be negative, got {}",
            state.v.z
        )));
    }
    if (state.r.z - params.contact_height()).abs() > 1e-3 {
        return Err(PhysicsError::BadContact(format!(
            "ball center z = {} is not at contact height {}",
            state.r.z,
            params.contact_height()
        )));
    }
    if !params.in_footprint(state.r.x, state.r.y) {
        return Err(PhysicsError::BadContact(format!(
            "contact point ({}, {}) outside the table footprint",
            state.r.x, state.r.y
        )));
    }

    let normal = Vector3::z();
    let spin_kick = state.omega.cross(&normal);
    let v_t = Vector3::new(state.v.x, state.v.y, 0.0);
    let mut v_t_out = params.tangential_retention * v_t
        + params.spin_surface_coupling * Vector3::new(spin_kick.x, spin_kick.y, 0.0);
    let v_z_out = -params.restitution * state.v.z;
    let omega_out = params.spin_retention * state.omega;

    // Energy guard: the coupling term can inject energy for extreme aligned
    // spins; rescale the tangential component so the budget is never
    // exceeded.
    let inertia = params.inertia_factor();
    let budget = state.v.norm_squared() + inertia * state.omega.norm_squared()
        - v_z_out * v_z_out
        - inertia * omega_out.norm_squared();
    let t_sq = v_t_out.norm_squared();
    if t_sq > budget {
        v_t_out *= (budget.max(0.0) / t_sq).sqrt();
    }

    Ok(BallState::new(
        state.r,
        Vector3::new(v_t_out.x, v_t_out.y, v_z_out),
        omega_out,
    ))
}

/// A resolved table contact produced during simulation.
#[derive(Debug, Clone, Copy)]
pub struct ContactEvent {
    pub time_s: f64,
    pub position: Vector3<f64>,
    pub incoming_velocity: Vector3<f64>,
    pub outgoing_velocity: Vector3<f64>,
}

/// Result of integrating a trajectory over requested sample times.
///
/// `states` holds one entry per requested time for the longest prefix the
/// ball stays airborne and above the floor; if the ball drops below the
/// floor (center z < 0) or settles on the table, the output is truncated at
/// that point.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<BallState>,
    pub contacts: Vec<ContactEvent>,
}

const CONTACT_TIME_TOL: f64 = 1e-6;
const SETTLE_SPEED: f64 = 1e-3;

/// Integrates flight with contact detection and returns the state at each
/// requested timestamp. Contacts inside a step are refined by bisection to
/// 1e−6 s before the bounce model is applied.
pub fn simulate_trajectory(
    init: &BallState,
    params: &PhysicsParams,
    sample_times: &[f64],
) -> Result<Vec<BallState>, PhysicsError> {
    simulate_with_events(init, params, sample_times).map(|t| t.states)
}

/// Like [`simulate_trajectory`] but also reports resolved table contacts.
pub fn simulate_with_events(
    init: &BallState,
    params: &PhysicsParams,
    sample_times: &[f64],
) -> Result<Trajectory, PhysicsError> {
    params.validate()?;
    if !init.is_finite() {
        return Err(PhysicsError::NonFiniteState);
    }
    if sample_times.is_empty() || sample_times[0] != 0.0 {
        return Err(PhysicsError::BadSampleTimes(0));
    }
    for i in 1..sample_times.len() {
        if sample_times[i] <= sample_times[i - 1] {
            return Err(PhysicsError::BadSampleTimes(i));
        }
    }

    let mut out = Trajectory {
        states: Vec::with_capacity(sample_times.len()),
        contacts: Vec::new(),
    };
    let mut state = *init;
    let mut t = 0.0;
    out.states.push(state);

    'samples: for window in sample_times.windows(2) {
        let target = window[1];
        let span = target - t;
        let n_sub = (span / params.integration_dt).ceil().max(1.0) as usize;
        let h = span / n_sub as f64;
        for _ in 0..n_sub {
            match advance_step(&mut state, params, t, h, &mut out.contacts)? {
                StepOutcome::Ok => t += h,
                StepOutcome::Terminated => break 'samples,
            }
        }
        t = target;
        out.states.push(state);
    }
    Ok(out)
}

enum StepOutcome {
    Ok,
    Terminated,
}

fn advance_step(
    state: &mut BallState,
    params: &PhysicsParams,
    t: f64,
    h: f64,
    contacts: &mut Vec<ContactEvent>,
) -> Result<StepOutcome, PhysicsError> {
    let contact_z = params.contact_height();
    let mut remaining = h;
    let mut local_t = t;
    // A single step may contain several contacts for very low bounces; the
    // settle guard below keeps this loop finite.
    for _ in 0..8 {
        let next = step_rk4(state, params, remaining);
        let crossed = state.r.z > contact_z && next.r.z <= contact_z;
        if !crossed {
            if next.r.z < 0.0 {
                return Ok(StepOutcome::Terminated);
            }
            *state = next;
            return Ok(StepOutcome::Ok);
        }

        // Bisection refinement of the crossing time inside (0, remaining].
        let mut lo = 0.0;
        let mut hi = remaining;
        while hi - lo > CONTACT_TIME_TOL {
            let mid = 0.5 * (lo + hi);
            let probe = step_rk4(state, params, mid);
            if probe.r.z > contact_z {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut at_contact = step_rk4(state, params, hi);
        at_contact.r.z = contact_z;

        if !params.in_footprint(at_contact.r.x, at_contact.r.y) || at_contact.v.z >= 0.0 {
            // The ball passes table height beside the table (or grazes
            // upward); no bounce, keep flying.
            if next.r.z < 0.0 {
                return Ok(StepOutcome::Terminated);
            }
            *state = next;
            return Ok(StepOutcome::Ok);
        }

        let rebound = bounce(&at_contact, params)?;
        contacts.push(ContactEvent {
            time_s: local_t + hi,
            position: at_contact.r,
            incoming_velocity: at_contact.v,
            outgoing_velocity: rebound.v,
        });
        if rebound.v.z < SETTLE_SPEED {
            return Ok(StepOutcome::Terminated);
        }
        *state = rebound;
        local_t += hi;
        remaining -= hi;
        if remaining <= 0.0 {
            return Ok(StepOutcome::Ok);
        }
    }
    Ok(StepOutcome::Terminated)
}
