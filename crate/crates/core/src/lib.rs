//! ttlift — monocular table tennis trajectory and spin analysis, desk scale.
//!
//! The crate implements the back-end half of a broadcast analysis pipeline
//! together with everything needed to exercise it without real video:
//!
//! 1. **ballistics** – physically correct flight + bounce simulation and
//!    synthetic dataset generation (drag, Magnus lift, restitution bounces).
//! 2. **camera** – pinhole projection, the canonical 13-point table chart,
//!    and DLT/RANSAC calibration from 2D–3D correspondences.
//! 3. **perception** – post-processing for heatmap detectors: sub-pixel peak
//!    extraction, two-model agreement filtering, DBSCAN keypoint
//!    consolidation.
//! 4. **uplift** – the 2D-to-3D uplifting transformer with a keypoint-aware
//!    embedding module, a learnable spin token, and time-proportional rotary
//!    attention. Includes a self-contained reverse-mode tape so gradients are
//!    exact and testable.
//! 5. **training** – augmented training loop (frame-rate resampling, random
//!    detection drops) with deterministic seeding and F1/m2DRE model
//!    selection.
//! 6. **metrics** – ACC@Xpx, 2D reprojection error, binary spin
//!    classification with accuracy/macro-F1, and evaluation-time robustness
//!    transforms.
//!
//! All randomness flows through explicitly seeded ChaCha generators; every
//! public operation is deterministic given its inputs and seed.

pub mod ballistics;
pub mod camera;
pub mod metrics;
pub mod perception;
pub mod table;
pub mod training;
pub mod uplift;

pub use ballistics::{BallState, PhysicsParams, ScenarioConfig, ScenarioKind, SynthSample};
pub use camera::{CameraModel, TableKeypointSet, NUM_KEYPOINTS};
pub use metrics::{EvalTransform, SpinClass};
pub use training::{TrainConfig, TrainHistory};
pub use uplift::{ModelConfig, RopeConfig, UpliftModel};
