//! Post-processing downstream of heatmap detectors: synthesis for tests,
//! sub-pixel peak extraction, two-model agreement filtering and DBSCAN-based
//! keypoint consolidation.

use nalgebra::DMatrix;
use ndarray::Array2;
use thiserror::Error;

use crate::camera::{TableKeypointSet, NUM_KEYPOINTS};

/// Heatmap sigma (px) used when synthesizing ground-truth-style maps.
pub const DEFAULT_SIGMA_PX: f64 = 6.0;

/// Agreement threshold (px) for ball detections.
pub const BALL_AGREEMENT_PX: f64 = 20.0;

/// Agreement threshold (px) for table keypoint detections.
pub const KEYPOINT_AGREEMENT_PX: f64 = 10.0;

/// Default peak confidence threshold.
pub const DEFAULT_MIN_CONF: f64 = 0.1;

/// Default DBSCAN radius (px).
pub const DEFAULT_EPS_PX: f64 = 5.0;

/// Default DBSCAN core-point threshold given the number of frames:
/// max(4, 5% of frames).
pub fn default_min_pts(n_frames: usize) -> usize {
    4.max((n_frames as f64 * 0.05).ceil() as usize)
}

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("tracks do not share timestamps (index {0})")]
    TimestampMismatch(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Scalar confidence field over a W×H pixel grid.
#[derive(Debug, Clone)]
pub struct Heatmap {
    /// Row-major grid indexed as `[y, x]`.
    pub grid: Array2<f64>,
}

impl Heatmap {
    pub fn width(&self) -> usize {
        self.grid.ncols()
    }

    pub fn height(&self) -> usize {
        self.grid.nrows()
    }
}

/// Synthesizes an isotropic Gaussian heatmap with unit peak:
/// v(p) = exp(−‖p − center‖² / (2σ²)).
pub fn gaussian_heatmap(center: [f64; 2], sigma: f64, size: (usize, usize)) -> Heatmap {
    assert!(sigma > 0.0, "sigma must be positive");
    let (w, h) = size;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut grid = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - center[0];
            let dy = y as f64 - center[1];
            grid[(y, x)] = (-(dx * dx + dy * dy) * inv).exp();
        }
    }
    Heatmap { grid }
}

/// Finds the heatmap peak and refines it to sub-pixel accuracy.
///
/// Returns `None` when the maximum falls below `min_conf`. Refinement fits a
/// log-domain paraboloid over the 5×5 neighborhood of the argmax and clamps
/// the offset to ±1 px.
pub fn extract_peak(h: &Heatmap, min_conf: f64) -> Option<([f64; 2], f64)> {
    let (rows, cols) = h.grid.dim();
    if rows == 0 || cols == 0 {
        return None;
    }
    let mut best = (0usize, 0usize);
    let mut best_v = f64::NEG_INFINITY;
    for y in 0..rows {
        for x in 0..cols {
            let v = h.grid[(y, x)];
            if v > best_v {
                best_v = v;
                best = (y, x);
            }
        }
    }
    if best_v < min_conf {
        return None;
    }

    let (py, px) = best;
    let offset = fit_log_paraboloid(&h.grid, py, px).unwrap_or([0.0, 0.0]);
    let refined = [
        px as f64 + offset[0].clamp(-1.0, 1.0),
        py as f64 + offset[1].clamp(-1.0, 1.0),
    ];
    Some((refined, best_v))
}

/// Least-squares fit of log v ≈ a + b·dx + c·dy + d·dx² + e·dy² on the 5×5
/// window; the peak offset is (−b/2d, −c/2e).
fn fit_log_paraboloid(grid: &Array2<f64>, py: usize, px: usize) -> Option<[f64; 2]> {
    let (rows, cols) = grid.dim();
    let mut xs = Vec::with_capacity(25);
    let mut rhs = Vec::with_capacity(25);
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            let y = py as i64 + dy;
            let x = px as i64 + dx;
            if y < 0 || x < 0 || y >= rows as i64 || x >= cols as i64 {
                continue;
            }
            let v = grid[(y as usize, x as usize)];
            if v <= 1e-12 {
                continue;
            }
            xs.push([1.0, dx as f64, dy as f64, (dx * dx) as f64, (dy * dy) as f64]);
            rhs.push(v.ln());
        }
    }
    if xs.len() < 6 {
        return None;
    }
    let a = DMatrix::from_fn(xs.len(), 5, |r, c| xs[r][c]);
    let b = DMatrix::from_fn(rhs.len(), 1, |r, _| rhs[r]);
    let coef = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let (b1, c1, d1, e1) = (coef[(1, 0)], coef[(2, 0)], coef[(3, 0)], coef[(4, 0)]);
    if d1 >= -1e-12 || e1 >= -1e-12 {
        // Not concave around the peak; keep the integer argmax.
        return None;
    }
    Some([-b1 / (2.0 * d1), -c1 / (2.0 * e1)])
}

/// A per-frame stream of optional detections with timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTrack {
    pub times_s: Vec<f64>,
    pub points: Vec<Option<[f64; 2]>>,
}

impl DetectionTrack {
    pub fn new(times_s: Vec<f64>, points: Vec<Option<[f64; 2]>>) -> Self {
        assert_eq!(times_s.len(), points.len());
        Self { times_s, points }
    }

    pub fn n_detections(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }
}

/// Keeps a frame only when both tracks detect and the two detections agree
/// within `threshold_px` (inclusive); the kept value is always the primary
/// detection.
pub fn agreement_filter(
    primary: &DetectionTrack,
    auxiliary: &DetectionTrack,
    threshold_px: f64,
) -> Result<DetectionTrack, PerceptionError> {
    if primary.times_s.len() != auxiliary.times_s.len() {
        return Err(PerceptionError::TimestampMismatch(
            primary.times_s.len().min(auxiliary.times_s.len()),
        ));
    }
    for (i, (a, b)) in primary.times_s.iter().zip(&auxiliary.times_s).enumerate() {
        if a != b {
            return Err(PerceptionError::TimestampMismatch(i));
        }
    }
    let points = primary
        .points
        .iter()
        .zip(&auxiliary.points)
        .map(|(p, a)| match (p, a) {
            (Some(p), Some(a)) => {
                let d = ((p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2)).sqrt();
                (d <= threshold_px).then_some(*p)
            }
            _ => None,
        })
        .collect();
    Ok(DetectionTrack {
        times_s: primary.times_s.clone(),
        points,
    })
}

/// Density-based clustering of 2D points.
///
/// Returns `(clusters, noise)` as index lists. Neighborhoods are inclusive
/// (distance ≤ eps) and a point counts toward its own neighborhood, so every
/// cluster has at least `min_pts` members. Deterministic given input order.
pub fn dbscan(points: &[[f64; 2]], eps_px: f64, min_pts: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    assert!(eps_px > 0.0, "eps must be positive");
    assert!(min_pts >= 1, "min_pts must be >= 1");
    let n = points.len();
    let eps_sq = eps_px * eps_px;
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                dx * dx + dy * dy <= eps_sq
            })
            .collect()
    };

    const UNVISITED: i64 = -2;
    const NOISE: i64 = -1;
    let mut label = vec![UNVISITED; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();

    for i in 0..n {
        if label[i] != UNVISITED {
            continue;
        }
        let nbrs = neighbors(i);
        if nbrs.len() < min_pts {
            label[i] = NOISE;
            continue;
        }
        let cluster_id = clusters.len() as i64;
        clusters.push(Vec::new());
        label[i] = cluster_id;
        clusters[cluster_id as usize].push(i);
        let mut queue: std::collections::VecDeque<usize> = nbrs.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if label[j] == NOISE {
                label[j] = cluster_id;
                clusters[cluster_id as usize].push(j);
                continue;
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = cluster_id;
            clusters[cluster_id as usize].push(j);
            let jn = neighbors(j);
            if jn.len() >= min_pts {
                queue.extend(jn);
            }
        }
    }

    let noise = (0..n).filter(|&i| label[i] == NOISE).collect();
    (clusters, noise)
}

/// Consolidates per-frame keypoint detections into a single set: for every
/// keypoint index, cluster the valid detections across frames and take the
/// centroid of the largest cluster (ties break toward the lower cluster
/// index). Keypoints with no cluster come back unavailable.
pub fn consolidate_keypoints(
    per_frame: &[TableKeypointSet],
    eps_px: f64,
    min_pts: usize,
) -> TableKeypointSet {
    let mut out = TableKeypointSet::default();
    for k in 0..NUM_KEYPOINTS {
        let mut detections: Vec<[f64; 2]> = per_frame
            .iter()
            .filter_map(|set| set.points[k])
            .collect();
        // Value ordering makes the clustering independent of frame order.
        detections.sort_by(|a, b| {
            a[0].partial_cmp(&b[0])
                .unwrap()
                .then(a[1].partial_cmp(&b[1]).unwrap())
        });
        if detections.is_empty() {
            continue;
        }
        let (clusters, _) = dbscan(&detections, eps_px, min_pts);
        let Some(max_len) = clusters.iter().map(|c| c.len()).max() else {
            continue;
        };
        // Ties break toward the lower cluster index.
        let best = clusters
            .iter()
            .find(|c| c.len() == max_len)
            .expect("non-empty cluster list");
        let n = best.len() as f64;
        let cx = best.iter().map(|&i| detections[i][0]).sum::<f64>() / n;
        let cy = best.iter().map(|&i| detections[i][1]).sum::<f64>() / n;
        out.points[k] = Some([cx, cy]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gaussian_peak_is_one_at_integral_center() {
        let h = gaussian_heatmap([40.0, 25.0], DEFAULT_SIGMA_PX, (80, 60));
        assert_eq!(h.grid[(25, 40)], 1.0);
    }

    #[test]
    fn gaussian_value_at_one_sigma() {
        let h = gaussian_heatmap([40.0, 25.0], 6.0, (80, 60));
        assert_abs_diff_eq!(h.grid[(25, 46)], (-0.5f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn peak_extraction_recovers_integral_center() {
        let h = gaussian_heatmap([100.0, 200.0], 6.0, (320, 320));
        let (p, conf) = extract_peak(&h, 0.1).unwrap();
        assert!((p[0] - 100.0).abs() < 0.05);
        assert!((p[1] - 200.0).abs() < 0.05);
        assert_abs_diff_eq!(conf, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn peak_extraction_recovers_subpixel_center() {
        let h = gaussian_heatmap([100.3, 200.7], 6.0, (320, 320));
        let (p, _) = extract_peak(&h, 0.1).unwrap();
        assert!((p[0] - 100.3).abs() < 0.05, "x off by {}", p[0] - 100.3);
        assert!((p[1] - 200.7).abs() < 0.05, "y off by {}", p[1] - 200.7);
    }

    #[test]
    fn all_zero_heatmap_yields_no_detection() {
        let h = Heatmap {
            grid: Array2::zeros((32, 32)),
        };
        assert!(extract_peak(&h, 0.1).is_none());
    }

    #[test]
    fn agreement_keeps_identical_tracks() {
        let times: Vec<f64> = (0..5).map(|i| i as f64 * 0.02).collect();
        let pts: Vec<Option<[f64; 2]>> = (0..5).map(|i| Some([i as f64, 2.0 * i as f64])).collect();
        let a = DetectionTrack::new(times.clone(), pts.clone());
        let b = DetectionTrack::new(times, pts.clone());
        let out = agreement_filter(&a, &b, BALL_AGREEMENT_PX).unwrap();
        assert_eq!(out.points, pts);
    }

    #[test]
    fn agreement_boundary_is_inclusive() {
        let times = vec![0.0, 0.1];
        let primary = DetectionTrack::new(times.clone(), vec![Some([0.0, 0.0]), Some([0.0, 0.0])]);
        let at = DetectionTrack::new(times.clone(), vec![Some([20.0, 0.0]), Some([20.0 + 1e-9, 0.0])]);
        let out = agreement_filter(&primary, &at, 20.0).unwrap();
        assert!(out.points[0].is_some(), "distance exactly at threshold kept");
        assert!(out.points[1].is_none(), "distance beyond threshold dropped");
    }

    #[test]
    fn agreement_requires_shared_timestamps() {
        let a = DetectionTrack::new(vec![0.0, 0.1], vec![None, None]);
        let b = DetectionTrack::new(vec![0.0, 0.2], vec![None, None]);
        assert!(matches!(
            agreement_filter(&a, &b, 20.0),
            Err(PerceptionError::TimestampMismatch(1))
        ));
    }

    #[test]
    fn agreement_output_is_subset_of_primary() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.02).collect();
        let primary: Vec<Option<[f64; 2]>> = (0..50)
            .map(|i| (i % 3 != 0).then(|| [i as f64, i as f64]))
            .collect();
        let aux: Vec<Option<[f64; 2]>> = (0..50)
            .map(|i| (i % 4 != 0).then(|| [i as f64 + 30.0 * ((i % 5) as f64 / 4.0), i as f64]))
            .collect();
        let a = DetectionTrack::new(times.clone(), primary.clone());
        let b = DetectionTrack::new(times, aux);
        let out = agreement_filter(&a, &b, 20.0).unwrap();
        for (o, p) in out.points.iter().zip(&primary) {
            if let Some(op) = o {
                assert_eq!(Some(*op), *p);
            }
        }
    }

    #[test]
    fn dbscan_groups_identical_points() {
        let pts = vec![[5.0, 5.0]; 12];
        let (clusters, noise) = dbscan(&pts, 1.0, 4);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].len(), 12);
        assert!(noise.is_empty());
    }

    #[test]
    fn dbscan_separates_two_blobs() {
        let mut pts = Vec::new();
        for i in 0..20 {
            pts.push([(i % 5) as f64 * 0.5, (i / 5) as f64 * 0.5]);
        }
        for i in 0..20 {
            pts.push([100.0 + (i % 5) as f64 * 0.5, (i / 5) as f64 * 0.5]);
        }
        let (clusters, noise) = dbscan(&pts, 5.0, 4);
        assert_eq!(clusters.len(), 2);
        assert!(noise.is_empty());
        assert_eq!(clusters[0].len(), 20);
        assert_eq!(clusters[1].len(), 20);
    }

    #[test]
    fn dbscan_all_noise_when_sparse() {
        let pts: Vec<[f64; 2]> = (0..10).map(|i| [i as f64 * 100.0, 0.0]).collect();
        let (clusters, noise) = dbscan(&pts, 5.0, 3);
        assert!(clusters.is_empty());
        assert_eq!(noise.len(), 10);
    }

    #[test]
    fn consolidation_returns_constant_position() {
        let mut frames = Vec::new();
        for _ in 0..30 {
            let mut set = TableKeypointSet::default();
            set.points[3] = Some([150.0, 220.0]);
            frames.push(set);
        }
        let out = consolidate_keypoints(&frames, DEFAULT_EPS_PX, default_min_pts(30));
        assert_eq!(out.points[3], Some([150.0, 220.0]));
        assert_eq!(out.num_available(), 1);
    }

    #[test]
    fn consolidation_rejects_scattered_outliers() {
        // 60% of frames near the true point, 40% scattered far apart.
        let mut frames = Vec::new();
        for i in 0..60 {
            let mut set = TableKeypointSet::default();
            let jitter = ((i % 3) as f64 - 1.0) * 0.8;
            set.points[0] = Some([400.0 + jitter, 300.0 - jitter]);
            frames.push(set);
        }
        for i in 0..40 {
            let mut set = TableKeypointSet::default();
            set.points[0] = Some([i as f64 * 57.0, 900.0 + i as f64 * 61.0]);
            frames.push(set);
        }
        let out = consolidate_keypoints(&frames, DEFAULT_EPS_PX, default_min_pts(100));
        let p = out.points[0].expect("keypoint resolved");
        assert!((p[0] - 400.0).abs() < 1.0);
        assert!((p[1] - 300.0).abs() < 1.0);
    }

    #[test]
    fn consolidation_marks_missing_keypoints_undetectable() {
        let frames = vec![TableKeypointSet::default(); 20];
        let out = consolidate_keypoints(&frames, DEFAULT_EPS_PX, 4);
        assert_eq!(out.num_available(), 0);
    }

    #[test]
    fn consolidation_is_frame_order_invariant() {
        let mut frames = Vec::new();
        for i in 0..40 {
            let mut set = TableKeypointSet::default();
            set.points[5] = Some([10.0 + (i % 7) as f64, 20.0 - (i % 4) as f64]);
            if i % 2 == 0 {
                set.points[6] = Some([500.0, 400.0 + (i % 5) as f64]);
            }
            frames.push(set);
        }
        let forward = consolidate_keypoints(&frames, DEFAULT_EPS_PX, 4);
        frames.reverse();
        let backward = consolidate_keypoints(&frames, DEFAULT_EPS_PX, 4);
        assert_eq!(forward, backward);
    }
}
