//! Per-frame tracking: candidate region, graph and problem assembly, solve,
//! mask thresholding, box extraction and state hand-off.

use std::path::PathBuf;
use std::str::FromStr;

use image::RgbImage;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::common::{GrayFrame, Mask, Rect};
use crate::error::{Error, Result};
use crate::features::{self, FeatureMatrix};
use crate::flow::{self, FlowField};
use crate::graph::{self, PropagationMode};
use crate::solver::{self, Fidelity, SolverConfig};
use crate::superpixel::{self, SuperpixelMap};

/// Within-frame edge topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialTopology {
    /// Superpixels whose pixel regions touch under 8-connectivity.
    Adjacency,
    /// Every superpixel pair within the frame.
    Full,
}

impl FromStr for SpatialTopology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacency" => Ok(SpatialTopology::Adjacency),
            "full" => Ok(SpatialTopology::Full),
            other => Err(Error::InvalidParameter {
                name: "spatial_topology",
                reason: format!("unknown topology {other:?}"),
            }),
        }
    }
}

/// Full pipeline configuration. Defaults are the operating values
/// (sigma 10, lambda1 0.01, lambda2 0.07, alpha 0.001, beta 50,
/// min_error 1e-4, ~600 superpixels).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub sigma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub min_error: f64,
    pub max_iter: usize,
    pub target_superpixels: usize,
    /// Candidate region scale about the previous box.
    pub region_expand: f64,
    /// Cut on min-max normalized scores.
    pub mask_threshold: f64,
    pub mode: PropagationMode,
    pub fidelity: Fidelity,
    pub spatial_topology: SpatialTopology,
    pub slic_compactness: f64,
    pub slic_iters: usize,
    pub flow_smoothness: f64,
    pub flow_iters: usize,
    /// Lower bound on pixels per superpixel; caps the effective superpixel
    /// count on small candidate regions.
    pub min_superpixel_px: usize,
    /// When set, dump per-frame A, A_m, A_h matrices as text files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump_dir: Option<PathBuf>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            sigma: 10.0,
            lambda1: 0.01,
            lambda2: 0.07,
            alpha: 0.001,
            beta: 50.0,
            min_error: 1e-4,
            max_iter: 100,
            target_superpixels: 600,
            region_expand: 1.5,
            mask_threshold: 0.5,
            mode: PropagationMode::Mixed,
            fidelity: Fidelity::ExactMinimizer,
            spatial_topology: SpatialTopology::Adjacency,
            slic_compactness: 10.0,
            slic_iters: 10,
            flow_smoothness: 15.0,
            flow_iters: 200,
            min_superpixel_px: 16,
            dump_dir: None,
        }
    }
}

impl TrackerConfig {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            alpha: self.alpha,
            beta: self.beta,
            min_error: self.min_error,
            max_iter: self.max_iter,
            mode: self.mode,
            fidelity: self.fidelity,
            ..SolverConfig::default()
        }
    }

    fn effective_superpixels(&self, region_pixels: u64) -> usize {
        let by_area = (region_pixels as usize / self.min_superpixel_px.max(1)).max(1);
        self.target_superpixels
            .min(by_area)
            .min(region_pixels as usize)
            .max(1)
    }
}

/// Solver and graph statistics for one processed frame.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub n_prev: usize,
    pub n_curr: usize,
    pub iterations: usize,
    pub final_loss: f64,
    pub converged: bool,
    pub fallback: bool,
}

/// Everything carried from one frame to the next.
#[derive(Debug, Clone)]
pub struct TrackState {
    pub frame_index: usize,
    /// Current full-frame target mask (empty after a lost frame).
    pub mask: Mask,
    /// Current box; retained from the previous frame when the mask is empty.
    pub bbox: Rect,
    /// Target indicator over the previous region's superpixels.
    pub f: Vec<bool>,
    /// Previous frame's region segmentation (origin set to the region).
    pub map: SuperpixelMap,
    /// Previous frame's superpixel features.
    pub features: FeatureMatrix,
    /// Previous frame as grayscale, for the flow estimator.
    pub prev_gray: GrayFrame,
    /// Consecutive lost frames; widens the candidate region.
    pub lost_streak: u32,
    pub diagnostics: StepDiagnostics,
}

/// Scale `bbox` by `expand` about its center and clamp it into the frame.
pub fn candidate_region(bbox: Rect, frame_w: u32, frame_h: u32, expand: f64) -> Rect {
    let w = ((bbox.w as f64 * expand).round() as u32).clamp(1, frame_w);
    let h = ((bbox.h as f64 * expand).round() as u32).clamp(1, frame_h);
    let (cx, cy) = bbox.center();
    let x = (cx - w as f64 / 2.0).round() as i64;
    let y = (cy - h as f64 / 2.0).round() as i64;
    Rect::new(
        x.clamp(0, (frame_w - w) as i64) as u32,
        y.clamp(0, (frame_h - h) as i64) as u32,
        w,
        h,
    )
}

/// Indicator over superpixels: set when at least half of the superpixel's
/// pixels lie inside the full-frame mask.
pub fn derive_indicator(map: &SuperpixelMap, mask: &Mask) -> Vec<bool> {
    let (ox, oy) = map.origin();
    let mut inside = vec![0usize; map.k()];
    let mut total = vec![0usize; map.k()];
    for y in 0..map.height() {
        for x in 0..map.width() {
            let l = map.label(x, y) as usize;
            total[l] += 1;
            if mask.get(ox + x, oy + y) {
                inside[l] += 1;
            }
        }
    }
    (0..map.k()).map(|l| 2 * inside[l] >= total[l]).collect()
}

/// Threshold per-superpixel scores into a full-frame mask.
///
/// Scores are min-max normalized and superpixels at or above `cut` are
/// rasterized. A constant score vector selects everything when positive and
/// nothing otherwise.
pub fn threshold_mask(
    scores: &[f64],
    map: &SuperpixelMap,
    cut: f64,
    frame_w: u32,
    frame_h: u32,
) -> Result<Mask> {
    if scores.len() != map.k() {
        return Err(Error::DimensionMismatch {
            context: "threshold_mask",
            expected: map.k().to_string(),
            got: scores.len().to_string(),
        });
    }
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let selected: Vec<bool> = if max > min {
        scores
            .iter()
            .map(|&s| (s - min) / (max - min) >= cut)
            .collect()
    } else {
        scores.iter().map(|&s| s > 0.0).collect()
    };

    let (ox, oy) = map.origin();
    let mut mask = Mask::new(frame_w, frame_h);
    for y in 0..map.height() {
        for x in 0..map.width() {
            if selected[map.label(x, y) as usize] {
                mask.set(ox + x, oy + y, true);
            }
        }
    }
    Ok(mask)
}

/// Tight bounding box of a mask, `None` when empty.
pub fn mask_to_box(mask: &Mask) -> Option<Rect> {
    mask.tight_box()
}

fn segment_region(
    frame: &RgbImage,
    region: Rect,
    config: &TrackerConfig,
) -> Result<(SuperpixelMap, FeatureMatrix)> {
    let lab = features::lab_from_rgb_region(frame, region);
    let k = config.effective_superpixels(region.area());
    let map = superpixel::slic_segment(&lab, k, config.slic_compactness, config.slic_iters)?
        .with_origin((region.x, region.y));
    let feats = features::mean_features(&lab, &map);
    Ok((map, feats))
}

/// Seed tracking from a ground-truth mask on frame 0.
pub fn init(frame: &RgbImage, ground_truth: &Mask, config: &TrackerConfig) -> Result<TrackState> {
    if (ground_truth.width(), ground_truth.height()) != frame.dimensions() {
        return Err(Error::DimensionMismatch {
            context: "init mask",
            expected: format!("{:?}", frame.dimensions()),
            got: format!("{}x{}", ground_truth.width(), ground_truth.height()),
        });
    }
    let bbox = ground_truth
        .tight_box()
        .ok_or_else(|| Error::InvalidInput("ground-truth mask is empty".into()))?;
    let (fw, fh) = frame.dimensions();
    let region = candidate_region(bbox, fw, fh, config.region_expand);
    let (map, feats) = segment_region(frame, region, config)?;
    let f = derive_indicator(&map, ground_truth);
    Ok(TrackState {
        frame_index: 0,
        mask: ground_truth.clone(),
        bbox,
        f,
        map,
        features: feats,
        prev_gray: GrayFrame::from_rgb(frame),
        lost_streak: 0,
        diagnostics: StepDiagnostics::default(),
    })
}

fn region_of(map: &SuperpixelMap) -> Rect {
    let (ox, oy) = map.origin();
    Rect::new(ox, oy, map.width(), map.height())
}

fn resolve_flow(
    provided: Option<&FlowField>,
    state: &TrackState,
    curr_gray: &GrayFrame,
    region_prev: Rect,
    config: &TrackerConfig,
) -> Result<FlowField> {
    match provided {
        Some(f) => {
            if (f.width(), f.height()) == (region_prev.w, region_prev.h) {
                Ok(f.clone())
            } else if (f.width(), f.height()) == (curr_gray.width(), curr_gray.height()) {
                Ok(f.crop(region_prev))
            } else {
                Err(Error::DimensionMismatch {
                    context: "precomputed flow",
                    expected: format!(
                        "{}x{} (region) or {}x{} (frame)",
                        region_prev.w,
                        region_prev.h,
                        curr_gray.width(),
                        curr_gray.height()
                    ),
                    got: format!("{}x{}", f.width(), f.height()),
                })
            }
        }
        None => flow::estimate_flow(
            &state.prev_gray.crop(region_prev),
            &curr_gray.crop(region_prev),
            config.flow_smoothness,
            config.flow_iters,
        ),
    }
}

fn spatial_pairs(map: &SuperpixelMap, topology: SpatialTopology) -> Vec<(u32, u32)> {
    match topology {
        SpatialTopology::Adjacency => superpixel::adjacency_pairs(map).into_iter().collect(),
        SpatialTopology::Full => {
            let k = map.k() as u32;
            let mut pairs = Vec::with_capacity((k * (k - 1) / 2) as usize);
            for i in 0..k {
                for j in (i + 1)..k {
                    pairs.push((i, j));
                }
            }
            pairs
        }
    }
}

/// Track the target into the next frame.
///
/// Builds the frame-pair graph, solves the labeling problem, thresholds the
/// current frame's scores into a mask and hands the segmentation forward.
/// An empty mask keeps the previous box and indicator and widens the search
/// region for the following frame.
pub fn step(
    state: &TrackState,
    frame: &RgbImage,
    config: &TrackerConfig,
    provided_flow: Option<&FlowField>,
) -> Result<TrackState> {
    let (fw, fh) = frame.dimensions();
    if (fw, fh) != (state.prev_gray.width(), state.prev_gray.height()) {
        return Err(Error::DimensionMismatch {
            context: "step frame",
            expected: format!("{}x{}", state.prev_gray.width(), state.prev_gray.height()),
            got: format!("{fw}x{fh}"),
        });
    }

    // Lost frames widen the search region multiplicatively.
    let expand = config.region_expand * 1.5f64.powi(state.lost_streak.min(6) as i32);
    let region_curr = candidate_region(state.bbox, fw, fh, expand);
    let (map_curr, feats_curr) = segment_region(frame, region_curr, config)?;

    let curr_gray = GrayFrame::from_rgb(frame);
    let region_prev = region_of(&state.map);
    let flow_field = resolve_flow(provided_flow, state, &curr_gray, region_prev, config)?;

    let temporal = flow::temporal_links(&state.map, &map_curr, &flow_field)?;
    let a_prev = graph::build_spatial_adjacency(
        &state.features,
        &spatial_pairs(&state.map, config.spatial_topology),
        config.sigma,
    )?;
    let a_curr = graph::build_spatial_adjacency(
        &feats_curr,
        &spatial_pairs(&map_curr, config.spatial_topology),
        config.sigma,
    )?;
    let mut g = graph::assemble(a_prev, a_curr, temporal)?;
    g.repair_zero_degrees();

    let op = graph::propagation_operator(&g, config.mode, config.lambda1, config.lambda2)?;
    if let Some(dir) = &config.dump_dir {
        std::fs::create_dir_all(dir)?;
        let idx = state.frame_index + 1;
        graph::dump_matrix(&dir.join(format!("A_{idx:05}.txt")), g.adjacency())?;
        graph::dump_matrix(
            &dir.join(format!("Am_{idx:05}.txt")),
            &graph::smoothing_operator(&g, config.lambda1)?,
        )?;
        graph::dump_matrix(
            &dir.join(format!("Ah_{idx:05}.txt")),
            &graph::sharpening_operator(&g, config.lambda2)?,
        )?;
    }

    let x = FeatureMatrix::stack(&state.features, &feats_curr);
    let s = solver::propagate(&op, &x)?;
    let laplacian = graph::combinatorial_laplacian(&g);
    let f_vec = DVector::from_fn(state.f.len(), |i, _| if state.f[i] { 1.0 } else { 0.0 });
    let problem = solver::Problem::new(s, laplacian, f_vec, g.n_prev(), g.n_curr())?;
    let solved = solver::solve(&problem, &config.solver_config())?;

    let y_curr: Vec<f64> = solved.y.rows(g.n_prev(), g.n_curr()).iter().copied().collect();
    let mask = threshold_mask(&y_curr, &map_curr, config.mask_threshold, fw, fh)?;

    let diagnostics = StepDiagnostics {
        n_prev: g.n_prev(),
        n_curr: g.n_curr(),
        iterations: solved.iterations(),
        final_loss: solved.final_loss(),
        converged: solved.converged,
        fallback: mask.is_empty(),
    };

    match mask.tight_box() {
        Some(bbox) => {
            let f = derive_indicator(&map_curr, &mask);
            Ok(TrackState {
                frame_index: state.frame_index + 1,
                mask,
                bbox,
                f,
                map: map_curr,
                features: feats_curr,
                prev_gray: curr_gray,
                lost_streak: 0,
                diagnostics,
            })
        }
        None => {
            // Target lost: carry the previous state forward unchanged and
            // search wider next time.
            Ok(TrackState {
                frame_index: state.frame_index + 1,
                mask,
                bbox: state.bbox,
                f: state.f.clone(),
                map: state.map.clone(),
                features: state.features.clone(),
                prev_gray: state.prev_gray.clone(),
                lost_streak: state.lost_streak + 1,
                diagnostics,
            })
        }
    }
}
