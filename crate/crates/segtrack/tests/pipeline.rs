//! End-to-end tracker behavior on synthetic sequences.

use segtrack::common::Rect;
use segtrack::dataset::{synth_sequence, SynthSpec};
use segtrack::eval;
use segtrack::flow::FlowField;
use segtrack::tracker::{self, TrackerConfig};

fn desk_config() -> TrackerConfig {
    TrackerConfig::default()
}

#[test]
fn static_scene_keeps_mask() {
    let spec = SynthSpec {
        width: 48,
        height: 48,
        frames: 2,
        size: 12,
        start: (16.0, 16.0),
        velocity: (0.0, 0.0),
        seed: 21,
        ..SynthSpec::default()
    };
    let seq = synth_sequence(&spec).unwrap();
    let config = desk_config();
    let state = tracker::init(&seq.frames[0], seq.initial_mask(), &config).unwrap();
    let next = tracker::step(&state, &seq.frames[1], &config, None).unwrap();
    let iou = eval::mask_iou(&next.mask, seq.masks[1].as_ref().unwrap()).unwrap();
    assert!(iou >= 0.9, "static-scene IoU {iou}");
    assert!(!next.diagnostics.fallback);
}

#[test]
fn moving_square_tracked_per_frame() {
    let spec = SynthSpec {
        width: 48,
        height: 48,
        frames: 8,
        size: 12,
        start: (4.0, 18.0),
        velocity: (2.0, 0.0),
        seed: 22,
        ..SynthSpec::default()
    };
    let seq = synth_sequence(&spec).unwrap();
    let config = desk_config();
    let mut state = tracker::init(&seq.frames[0], seq.initial_mask(), &config).unwrap();
    for t in 1..seq.len() {
        state = tracker::step(&state, &seq.frames[t], &config, None).unwrap();
        let gt = seq.masks[t].as_ref().unwrap();
        let iou = eval::mask_iou(&state.mask, gt).unwrap();
        assert!(iou >= 0.7, "frame {t}: IoU {iou}");

        // The mask must stay inside the candidate region the step searched.
        let region = Rect::new(
            state.map.origin().0,
            state.map.origin().1,
            state.map.width(),
            state.map.height(),
        );
        for y in 0..state.mask.height() {
            for x in 0..state.mask.width() {
                if state.mask.get(x, y) {
                    assert!(region.contains(x, y), "mask pixel ({x},{y}) outside region");
                }
            }
        }

        // Box is the tight box of the mask, inside the frame.
        assert_eq!(state.mask.tight_box(), Some(state.bbox));
        assert!(state.bbox.inside_frame(48, 48));

        // Indicator hand-off equals the majority rule on the step's own mask.
        assert_eq!(state.f, tracker::derive_indicator(&state.map, &state.mask));
    }
}

#[test]
fn lost_target_falls_back_to_previous_box() {
    let spec = SynthSpec {
        width: 48,
        height: 48,
        frames: 2,
        size: 12,
        start: (16.0, 16.0),
        velocity: (0.0, 0.0),
        seed: 23,
        ..SynthSpec::default()
    };
    let seq = synth_sequence(&spec).unwrap();
    let config = desk_config();
    let mut state = tracker::init(&seq.frames[0], seq.initial_mask(), &config).unwrap();
    // Wipe the indicator: with f = 0 the solver's fixed point is y = 0 and
    // the mask comes out empty.
    for v in state.f.iter_mut() {
        *v = false;
    }
    let before = state.bbox;
    let next = tracker::step(&state, &seq.frames[1], &config, None).unwrap();
    assert!(next.mask.is_empty());
    assert!(next.diagnostics.fallback);
    assert_eq!(next.bbox, before);
    assert_eq!(next.lost_streak, 1);
    assert_eq!(next.f, state.f);
}

#[test]
fn deterministic_given_identical_inputs() {
    let spec = SynthSpec {
        width: 40,
        height: 40,
        frames: 4,
        size: 10,
        start: (4.0, 4.0),
        velocity: (1.5, 1.5),
        seed: 24,
        ..SynthSpec::default()
    };
    let seq = synth_sequence(&spec).unwrap();
    let config = desk_config();
    let run = || {
        let mut state = tracker::init(&seq.frames[0], seq.initial_mask(), &config).unwrap();
        let mut boxes = Vec::new();
        for t in 1..seq.len() {
            state = tracker::step(&state, &seq.frames[t], &config, None).unwrap();
            boxes.push((state.bbox, state.mask.clone()));
        }
        boxes
    };
    assert_eq!(run(), run());
}

#[test]
fn provided_zero_flow_matches_estimated_on_static_scene() {
    let spec = SynthSpec {
        width: 40,
        height: 40,
        frames: 2,
        size: 10,
        start: (14.0, 14.0),
        velocity: (0.0, 0.0),
        seed: 25,
        ..SynthSpec::default()
    };
    let seq = synth_sequence(&spec).unwrap();
    let config = desk_config();
    let state = tracker::init(&seq.frames[0], seq.initial_mask(), &config).unwrap();

    // Region-sized zero flow.
    let region_flow = FlowField::zeros(state.map.width(), state.map.height());
    let with_region = tracker::step(&state, &seq.frames[1], &config, Some(&region_flow)).unwrap();

    // Full-frame zero flow is cropped internally.
    let frame_flow = FlowField::zeros(40, 40);
    let with_frame = tracker::step(&state, &seq.frames[1], &config, Some(&frame_flow)).unwrap();

    assert_eq!(with_region.mask, with_frame.mask);
    assert_eq!(with_region.bbox, with_frame.bbox);

    // Estimated flow on identical frames is exactly zero, so the estimate
    // path agrees too.
    let estimated = tracker::step(&state, &seq.frames[1], &config, None).unwrap();
    assert_eq!(estimated.mask, with_region.mask);

    // Wrong-sized flow is an input error.
    let bad = FlowField::zeros(7, 3);
    assert!(tracker::step(&state, &seq.frames[1], &config, Some(&bad)).is_err());
}

#[test]
fn ablation_modes_all_run() {
    use segtrack::graph::PropagationMode;
    let spec = SynthSpec {
        width: 40,
        height: 40,
        frames: 3,
        size: 10,
        start: (6.0, 6.0),
        velocity: (1.0, 1.0),
        seed: 26,
        ..SynthSpec::default()
    };
    let seq = synth_sequence(&spec).unwrap();
    for mode in [
        PropagationMode::Mixed,
        PropagationMode::OnlySmoothing,
        PropagationMode::None,
    ] {
        let config = TrackerConfig {
            mode,
            ..desk_config()
        };
        let mut state = tracker::init(&seq.frames[0], seq.initial_mask(), &config).unwrap();
        for t in 1..seq.len() {
            state = tracker::step(&state, &seq.frames[t], &config, None).unwrap();
        }
        let iou = eval::mask_iou(&state.mask, seq.masks[2].as_ref().unwrap()).unwrap();
        assert!(iou > 0.3, "{mode:?} lost the target entirely: IoU {iou}");
    }
}
