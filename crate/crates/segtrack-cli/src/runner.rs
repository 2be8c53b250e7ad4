//! Shared pipeline plumbing behind the subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use segtrack::common::{Mask, Rect};
use segtrack::dataset::{self, Sequence, SynthSpec};
use segtrack::error::{Error, Result};
use segtrack::eval::{self, EvalReport, FrameData, SequenceResult};
use segtrack::flow::{self, FlowField};
use segtrack::tracker::{self, StepDiagnostics, TrackerConfig};

/// Per-frame record written to result.json.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub bbox: Rect,
    #[serde(flatten)]
    pub diagnostics: StepDiagnostics,
}

/// Tracking output for one sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackResult {
    pub sequence: String,
    pub config: TrackerConfig,
    pub frames: Vec<FrameRecord>,
}

/// Flow file for the step into frame `t`: `<t-1>.flo`, zero-padded or bare.
fn flow_for_step(dir: &Path, t: usize) -> Result<FlowField> {
    let padded = dir.join(format!("{:05}.flo", t - 1));
    let bare = dir.join(format!("{}.flo", t - 1));
    let path = if padded.is_file() {
        padded
    } else if bare.is_file() {
        bare
    } else {
        return Err(Error::InvalidInput(format!(
            "no flow file for step into frame {t} under {}",
            dir.display()
        )));
    };
    flow::read_flo(&path)
}

/// Track a whole sequence in memory, returning per-frame masks and records.
pub fn track_sequence(
    seq: &Sequence,
    config: &TrackerConfig,
    flow_dir: Option<&Path>,
) -> Result<(Vec<Mask>, Vec<FrameRecord>)> {
    let mut state = tracker::init(&seq.frames[0], seq.initial_mask(), config)?;
    let mut masks = vec![state.mask.clone()];
    let mut records = vec![FrameRecord {
        frame: 0,
        bbox: state.bbox,
        diagnostics: state.diagnostics.clone(),
    }];
    for t in 1..seq.len() {
        let provided = match flow_dir {
            Some(dir) => Some(flow_for_step(dir, t)?),
            None => None,
        };
        state = tracker::step(&state, &seq.frames[t], config, provided.as_ref())?;
        masks.push(state.mask.clone());
        records.push(FrameRecord {
            frame: t,
            bbox: state.bbox,
            diagnostics: state.diagnostics.clone(),
        });
    }
    Ok((masks, records))
}

/// Track and write masks plus result.json under `out_dir/<sequence>/`.
pub fn track_to_dir(
    seq: &Sequence,
    config: &TrackerConfig,
    flow_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<TrackResult> {
    let (masks, frames) = track_sequence(seq, config, flow_dir)?;

    let seq_dir = out_dir.join(&seq.name);
    let masks_dir = seq_dir.join("masks");
    std::fs::create_dir_all(&masks_dir)?;
    for (i, mask) in masks.iter().enumerate() {
        mask.save_png(&masks_dir.join(format!("{i:05}.png")))?;
    }
    let result = TrackResult {
        sequence: seq.name.clone(),
        config: config.clone(),
        frames,
    };
    let file = std::fs::File::create(seq_dir.join("result.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &result)?;
    Ok(result)
}

fn indexed_masks(dir: &Path) -> Result<BTreeMap<usize, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        if let Some(idx) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<usize>().ok())
        {
            out.insert(idx, path);
        }
    }
    Ok(out)
}

fn masks_dir_of(dir: &Path) -> PathBuf {
    let sub = dir.join("masks");
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

/// Pair predicted masks with ground truth and score them.
///
/// `pred_dir` is a `track` output directory (or a bare directory of mask
/// PNGs); `gt_dir` is a sequence directory (or a bare mask directory). Every
/// ground-truth frame must have a predicted mask.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, name: &str) -> Result<EvalReport> {
    let gt_masks = indexed_masks(&masks_dir_of(gt_dir))?;
    if gt_masks.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no ground-truth masks under {}",
            gt_dir.display()
        )));
    }
    let pred_masks = indexed_masks(&masks_dir_of(pred_dir))?;

    // Boxes from result.json when available (they survive lost frames);
    // otherwise tight boxes of the predicted masks.
    let mut recorded_boxes: BTreeMap<usize, Rect> = BTreeMap::new();
    let result_json = pred_dir.join("result.json");
    if result_json.is_file() {
        let text = std::fs::read_to_string(&result_json)?;
        let result: TrackResult = serde_json::from_str(&text)?;
        for fr in result.frames {
            recorded_boxes.insert(fr.frame, fr.bbox);
        }
    }

    let mut frames = Vec::new();
    for (&idx, gt_path) in &gt_masks {
        let gt_mask = Mask::load_png(gt_path)?;
        let pred_path = pred_masks.get(&idx).ok_or_else(|| {
            Error::InvalidInput(format!("missing prediction for frame {idx}"))
        })?;
        let pred_mask = Mask::load_png(pred_path)?;
        let pred_box = recorded_boxes
            .get(&idx)
            .copied()
            .or_else(|| pred_mask.tight_box());
        frames.push(FrameData {
            frame: idx,
            gt_box: gt_mask.tight_box(),
            pred_box,
            pred_mask: Some(pred_mask),
            gt_mask,
        });
    }

    eval::evaluate(&SequenceResult {
        name: name.to_string(),
        frames,
    })
}

/// Score an in-memory tracking run against its sequence's ground truth.
pub fn evaluate_in_memory(
    seq: &Sequence,
    masks: &[Mask],
    records: &[FrameRecord],
) -> Result<EvalReport> {
    let mut frames = Vec::new();
    for (idx, gt) in seq.masks.iter().enumerate() {
        let Some(gt_mask) = gt else { continue };
        frames.push(FrameData {
            frame: idx,
            gt_box: gt_mask.tight_box(),
            pred_box: Some(records[idx].bbox),
            pred_mask: Some(masks[idx].clone()),
            gt_mask: gt_mask.clone(),
        });
    }
    eval::evaluate(&SequenceResult {
        name: seq.name.clone(),
        frames,
    })
}

/// The built-in synthetic suite for the ablation harness: three seeded
/// moving-target sequences with different directions and shapes.
pub fn ablation_suite() -> Vec<SynthSpec> {
    vec![
        SynthSpec {
            name: "synth-right".into(),
            velocity: (1.6, 0.4),
            start: (4.0, 10.0),
            seed: 101,
            ..SynthSpec::default()
        },
        SynthSpec {
            name: "synth-diag".into(),
            velocity: (1.2, 1.3),
            start: (4.0, 4.0),
            seed: 102,
            ..SynthSpec::default()
        },
        SynthSpec {
            name: "synth-disc".into(),
            shape: dataset::ShapeKind::Disc,
            velocity: (0.8, 1.5),
            start: (20.0, 4.0),
            seed: 103,
            ..SynthSpec::default()
        },
    ]
}
