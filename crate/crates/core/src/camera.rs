//! Pinhole camera model, the canonical 13-keypoint table chart, and
//! DLT/RANSAC calibration from 2D–3D correspondences.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use thiserror::Error;

use crate::table;

/// Number of table keypoints in the canonical chart.
pub const NUM_KEYPOINTS: usize = 13;

/// Canonical names of the 13 keypoints, in index order.
pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "corner_left_near",
    "corner_left_far",
    "corner_right_far",
    "corner_right_near",
    "end_line_mid_left",
    "end_line_mid_right",
    "net_base_near",
    "net_base_far",
    "net_top_near",
    "net_top_far",
    "net_top_center",
    "table_center",
    "center_line_mid_left",
];

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("point has non-positive homogeneous depth {0}")]
    BehindCamera(f64),
    #[error("need at least 6 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("degenerate correspondence configuration (solution not unique)")]
    DegenerateConfiguration,
    #[error("no consensus set of size >= 6 found in {0} iterations")]
    NoConsensus(usize),
}

/// Homogeneous 3×4 projection matrix mapping world meters to pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub p: Matrix3x4<f64>,
}

impl CameraModel {
    pub fn new(p: Matrix3x4<f64>) -> Self {
        Self { p }
    }

    /// Builds the model from 12 row-major entries (the JSONL `camera_P`
    /// layout).
    pub fn from_rows(rows: &[f64; 12]) -> Self {
        let mut p = Matrix3x4::zeros();
        for r in 0..3 {
            for c in 0..4 {
                p[(r, c)] = rows[r * 4 + c];
            }
        }
        Self { p }
    }

    /// Serializes the projection matrix as 12 row-major numbers.
    pub fn to_rows(&self) -> [f64; 12] {
        let mut rows = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                rows[r * 4 + c] = self.p[(r, c)];
            }
        }
        rows
    }

    /// Constructs a camera at `position` looking at `target` with the image
    /// x axis horizontal (world z is up) and the image y axis pointing down.
    ///
    /// `focal_px` is the focal length in pixels, `principal` the principal
    /// point (px).
    pub fn look_at(
        position: Vector3<f64>,
        target: Vector3<f64>,
        focal_px: f64,
        principal: [f64; 2],
    ) -> Self {
        let forward = (target - position).normalize();
        Self::from_pose_axis(position, forward, focal_px, principal)
    }

    /// Same as [`CameraModel::look_at`] but takes the viewing direction
    /// directly.
    pub fn from_pose_axis(
        position: Vector3<f64>,
        forward: Vector3<f64>,
        focal_px: f64,
        principal: [f64; 2],
    ) -> Self {
        let forward = forward.normalize();
        let up_world = Vector3::z();
        let right = forward.cross(&up_world).normalize();
        let down = forward.cross(&right).normalize();
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -rot * position;
        let k = Matrix3::new(
            focal_px,
            0.0,
            principal[0],
            0.0,
            focal_px,
            principal[1],
            0.0,
            0.0,
            1.0,
        );
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&(k * rot));
        p.fixed_view_mut::<3, 1>(0, 3).copy_from(&(k * t));
        Self { p }
    }

    /// Homogeneous depth of a world point (third row of P applied to it).
    pub fn depth(&self, x: Vector3<f64>) -> f64 {
        let h = Vector4::new(x.x, x.y, x.z, 1.0);
        self.p.row(2).transpose().dot(&h)
    }
}

/// Projects a world point (m) to pixel coordinates.
///
/// Fails when the point has non-positive homogeneous depth.
pub fn project(camera: &CameraModel, x: Vector3<f64>) -> Result<[f64; 2], CameraError> {
    let h = camera.p * Vector4::new(x.x, x.y, x.z, 1.0);
    if h.z <= 0.0 {
        return Err(CameraError::BehindCamera(h.z));
    }
    Ok([h.x / h.z, h.y / h.z])
}

/// Up to 13 named 2D keypoints with per-point availability.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TableKeypointSet {
    pub points: [Option<[f64; 2]>; NUM_KEYPOINTS],
}

impl TableKeypointSet {
    pub fn all_invalid() -> Self {
        Self::default()
    }

    pub fn available(&self) -> impl Iterator<Item = (usize, [f64; 2])> + '_ {
        self.points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| (i, p)))
    }

    pub fn num_available(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }
}

/// Canonical 3D positions (m, world frame) of the 13 table keypoints.
///
/// Indices 0–3: surface corners; 4–5: end line midpoints; 6–7: points where
/// the net plane meets the side lines; 8–9: net top at the posts (the net
/// assembly overhangs the side lines); 10: net top center; 11: table center
/// (center line × net line); 12: midpoint of the left-half center line.
pub fn table_keypoints_3d() -> [Vector3<f64>; NUM_KEYPOINTS] {
    let hl = table::HALF_LENGTH;
    let hw = table::HALF_WIDTH;
    let h = table::HEIGHT;
    let post = hw + table::NET_OVERHANG;
    let top = table::NET_TOP_Z;
    [
        Vector3::new(-hl, -hw, h),
        Vector3::new(-hl, hw, h),
        Vector3::new(hl, hw, h),
        Vector3::new(hl, -hw, h),
        Vector3::new(-hl, 0.0, h),
        Vector3::new(hl, 0.0, h),
        Vector3::new(0.0, -hw, h),
        Vector3::new(0.0, hw, h),
        Vector3::new(0.0, -post, top),
        Vector3::new(0.0, post, top),
        Vector3::new(0.0, 0.0, top),
        Vector3::new(0.0, 0.0, h),
        Vector3::new(-hl / 2.0, 0.0, h),
    ]
}

/// Projects the canonical keypoints through a camera; points behind the
/// camera come back unavailable.
pub fn project_table_keypoints(camera: &CameraModel) -> TableKeypointSet {
    let mut set = TableKeypointSet::default();
    for (i, x) in table_keypoints_3d().iter().enumerate() {
        set.points[i] = project(camera, *x).ok();
    }
    set
}

struct Normalization2d {
    t: Matrix3<f64>,
}

struct Normalization3d {
    t: Matrix4<f64>,
}

fn normalize_2d(points: &[[f64; 2]]) -> (Vec<[f64; 2]>, Normalization2d) {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let rms = (points
        .iter()
        .map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let s = if rms > 1e-12 { 2.0f64.sqrt() / rms } else { 1.0 };
    let norm = points
        .iter()
        .map(|p| [(p[0] - cx) * s, (p[1] - cy) * s])
        .collect();
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    (norm, Normalization2d { t })
}

fn normalize_3d(points: &[[f64; 3]]) -> (Vec<[f64; 3]>, Normalization3d) {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    let rms = (points
        .iter()
        .map(|p| (0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n)
        .sqrt();
    let s = if rms > 1e-12 { 3.0f64.sqrt() / rms } else { 1.0 };
    let norm = points
        .iter()
        .map(|p| [(p[0] - c[0]) * s, (p[1] - c[1]) * s, (p[2] - c[2]) * s])
        .collect();
    let mut t = Matrix4::identity();
    for k in 0..3 {
        t[(k, k)] = s;
        t[(k, 3)] = -s * c[k];
    }
    (norm, Normalization3d { t })
}

/// Least-squares DLT estimate of the 3×4 projection matrix from 2D–3D
/// correspondences (Hartley-normalized, smallest-singular-vector solution).
///
/// Requires at least 6 correspondences in a non-degenerate configuration
/// (not all coplanar, no rank-deficient layout).
pub fn dlt_calibrate(corr: &[([f64; 3], [f64; 2])]) -> Result<CameraModel, CameraError> {
    let n = corr.len();
    if n < 6 {
        return Err(CameraError::TooFewCorrespondences(n));
    }
    let world: Vec<[f64; 3]> = corr.iter().map(|c| c.0).collect();
    let image: Vec<[f64; 2]> = corr.iter().map(|c| c.1).collect();
    let (wn, t3) = normalize_3d(&world);
    let (im, t2) = normalize_2d(&image);

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for i in 0..n {
        let [x, y, z] = wn[i];
        let [u, v] = im[i];
        let r0 = 2 * i;
        let r1 = 2 * i + 1;
        for (c, val) in [x, y, z, 1.0].iter().enumerate() {
            a[(r0, c)] = *val;
            a[(r0, 8 + c)] = -u * val;
            a[(r1, 4 + c)] = *val;
            a[(r1, 8 + c)] = -v * val;
        }
    }

    let svd = a.svd(false, true);
    let sv = &svd.singular_values;
    let v_t = svd.v_t.as_ref().expect("svd requested v_t");
    // Singular values sorted by magnitude: find the two smallest to test for
    // solution uniqueness before extracting the null vector.
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].partial_cmp(&sv[j]).unwrap());
    let smallest = order[0];
    let second = order[1];
    let largest = *order.last().unwrap();
    if sv[largest] <= 0.0 || sv[second] / sv[largest] < 1e-9 {
        return Err(CameraError::DegenerateConfiguration);
    }

    let p_vec = v_t.row(smallest);
    let mut pn = Matrix3x4::zeros();
    for r in 0..3 {
        for c in 0..4 {
            pn[(r, c)] = p_vec[r * 4 + c];
        }
    }

    let t2_inv = t2.t.try_inverse().ok_or(CameraError::DegenerateConfiguration)?;
    let mut p = t2_inv * pn * t3.t;

    // Fix the overall sign so that the majority of the input points sit in
    // front of the camera.
    let cam = CameraModel::new(p);
    let front = world
        .iter()
        .filter(|w| cam.depth(Vector3::new(w[0], w[1], w[2])) > 0.0)
        .count();
    if front * 2 < n {
        p = -p;
    }
    let scale = p.norm();
    if !scale.is_finite() || scale <= 0.0 {
        return Err(CameraError::DegenerateConfiguration);
    }
    Ok(CameraModel::new(p / scale))
}

fn reprojection_error(cam: &CameraModel, w: [f64; 3], px: [f64; 2]) -> Option<f64> {
    project(cam, Vector3::new(w[0], w[1], w[2]))
        .ok()
        .map(|p| ((p[0] - px[0]).powi(2) + (p[1] - px[1]).powi(2)).sqrt())
}

/// RANSAC calibration: repeatedly fits DLT on random minimal samples of 6
/// correspondences, keeps the largest consensus set (reprojection error
/// ≤ `tau_px`), then refits on that set.
///
/// Returns the refit model and the per-correspondence inlier mask measured
/// against it. Deterministic given the generator state.
pub fn ransac_calibrate<R: Rng>(
    corr: &[([f64; 3], [f64; 2])],
    tau_px: f64,
    n_iters: usize,
    rng: &mut R,
) -> Result<(CameraModel, Vec<bool>), CameraError> {
    let n = corr.len();
    if n < 6 {
        return Err(CameraError::TooFewCorrespondences(n));
    }

    let mut best: Option<(usize, Vec<bool>)> = None;
    for _ in 0..n_iters {
        let idx = sample_indices(rng, n, 6);
        let subset: Vec<_> = idx.iter().map(|i| corr[i]).collect();
        let Ok(cam) = dlt_calibrate(&subset) else {
            continue;
        };
        let mask: Vec<bool> = corr
            .iter()
            .map(|&(w, px)| reprojection_error(&cam, w, px).is_some_and(|e| e <= tau_px))
            .collect();
        let count = mask.iter().filter(|&&m| m).count();
        if count >= 6 && best.as_ref().is_none_or(|(bc, _)| count > *bc) {
            best = Some((count, mask));
        }
    }

    let (_, consensus) = best.ok_or(CameraError::NoConsensus(n_iters))?;
    let subset: Vec<_> = corr
        .iter()
        .zip(&consensus)
        .filter(|(_, &m)| m)
        .map(|(c, _)| *c)
        .collect();
    let model = dlt_calibrate(&subset)?;
    let mask: Vec<bool> = corr
        .iter()
        .map(|&(w, px)| reprojection_error(&model, w, px).is_some_and(|e| e <= tau_px))
        .collect();
    Ok((model, mask))
}
