//! Tracking-by-segmentation on spatio-temporal superpixel graphs.
//!
//! A target given as a mask in the first frame is tracked by segmenting it in
//! every following frame. Each frame pair is partitioned into superpixels
//! (SLIC), superpixels become nodes of a two-frame graph whose spatial edges
//! weight color similarity and whose temporal edges come from optical-flow
//! overlap, and a mixed Laplacian smoothing/sharpening convolution feeds an
//! alternating closed-form solver that scores every node's target membership.
//! Thresholded scores give the next mask and bounding box.
//!
//! Pipeline modules:
//!
//! | Module | Role |
//! |--------|------|
//! | [`superpixel`] | SLIC partition of a candidate region |
//! | [`features`] | LAB conversion, per-superpixel mean color |
//! | [`flow`] | Horn-Schunck estimation, `.flo` ingestion, temporal links |
//! | [`graph`] | Two-frame graph assembly, smoothing/sharpening operators |
//! | [`solver`] | Alternating closed-form label propagation |
//! | [`tracker`] | Per-frame orchestration and state hand-off |
//! | [`eval`] | IoU / precision / success-AUC metrics and reports |
//! | [`dataset`] | Sequence ingestion and synthetic sequence generation |
//!
//! ```
//! use segtrack::{dataset, eval, tracker};
//!
//! // A deterministic synthetic sequence with exact ground truth.
//! let spec = dataset::SynthSpec {
//!     width: 40,
//!     height: 40,
//!     frames: 3,
//!     size: 10,
//!     start: (4.0, 12.0),
//!     velocity: (1.5, 0.5),
//!     ..dataset::SynthSpec::default()
//! };
//! let seq = dataset::synth_sequence(&spec)?;
//!
//! // Seed from the first frame's mask, then track.
//! let config = tracker::TrackerConfig::default();
//! let mut state = tracker::init(&seq.frames[0], seq.initial_mask(), &config)?;
//! for frame in &seq.frames[1..] {
//!     state = tracker::step(&state, frame, &config, None)?;
//! }
//!
//! let gt = seq.masks.last().unwrap().as_ref().unwrap();
//! assert!(eval::mask_iou(&state.mask, gt)? > 0.5);
//! # Ok::<(), segtrack::Error>(())
//! ```

pub mod common;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod graph;
pub mod solver;
pub mod superpixel;
pub mod tracker;

#[doc(hidden)]
pub mod testsupport;

pub use error::{Error, Result};
