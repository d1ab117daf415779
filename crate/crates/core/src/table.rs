//! ITTF table geometry constants shared by the simulator, the keypoint chart
//! and the scenario sampler.
//!
//! World frame: origin at the table center on the playing surface, x along
//! the long axis, z up, y = z × x (right-handed).

/// Playing surface length along x (m).
pub const LENGTH: f64 = 2.74;

/// Playing surface width along y (m).
pub const WIDTH: f64 = 1.525;

/// Height of the playing surface above the floor (m).
pub const HEIGHT: f64 = 0.76;

/// Net height above the playing surface (m).
pub const NET_HEIGHT: f64 = 0.1525;

/// How far the net assembly extends beyond each side line (m). The posts sit
/// at y = ±(WIDTH / 2 + NET_OVERHANG).
pub const NET_OVERHANG: f64 = 0.1525;

/// Half length along x (m).
pub const HALF_LENGTH: f64 = LENGTH / 2.0;

/// Half width along y (m).
pub const HALF_WIDTH: f64 = WIDTH / 2.0;

/// z coordinate of the net top band (m).
pub const NET_TOP_Z: f64 = HEIGHT + NET_HEIGHT;

/// Returns true when the (x, y) point lies on the playing surface footprint
/// (boundary included).
pub fn in_footprint(x: f64, y: f64) -> bool {
    x.abs() <= HALF_LENGTH && y.abs() <= HALF_WIDTH
}
