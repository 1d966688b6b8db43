//! Built-in scenario suites.

use crate::sim::scenario::{Scenario, ScenarioObject};
use crate::sim::{DetectorModel, GridDims, ImageSize, MotionNoise};

fn object(id: u64, start: [f64; 4], velocity: [f64; 2], c_bar: f64, jitter: f64, ood: bool) -> ScenarioObject {
    ScenarioObject {
        id,
        start: Some(start),
        velocity: Some(velocity),
        trajectory: None,
        c_bar,
        jitter,
        ood,
        first_frame: 0,
        last_frame: None,
    }
}

/// Three in-distribution objects (`c̄ 0.92`, jitter 0.04) and three OOD
/// objects (`c̄ 0.70`, jitter 0.02) moving slowly for 100 frames, with one
/// clutter box per frame on average.
pub fn ood_suite() -> Scenario {
    let (id_c, id_j) = (0.92, 0.04);
    let (ood_c, ood_j) = (0.70, 0.02);
    Scenario {
        image: ImageSize { w: 960.0, h: 640.0 },
        frames: 100,
        seed: 0,
        objects: vec![
            object(1, [120.0, 120.0, 60.0, 40.0], [2.0, 0.5], id_c, id_j, false),
            object(2, [820.0, 140.0, 50.0, 50.0], [-2.0, 1.0], ood_c, ood_j, true),
            object(3, [200.0, 480.0, 70.0, 45.0], [1.5, -1.0], ood_c, ood_j, true),
            object(4, [700.0, 500.0, 45.0, 60.0], [-1.0, -1.5], id_c, id_j, false),
            object(5, [480.0, 80.0, 55.0, 35.0], [0.5, 2.0], ood_c, ood_j, true),
            object(6, [480.0, 560.0, 40.0, 40.0], [1.0, -2.0], id_c, id_j, false),
        ],
        detector: DetectorModel {
            box_jitter: 2.0,
            clutter_rate: 1.0,
            clutter_conf: [0.3, 0.9],
            clutter_size: [20.0, 100.0],
            meas_noise: 2.0,
            background_p: 0.05,
            id_p: 0.95,
            ood_p: 0.6,
            p_noise: 0.0,
            grid: GridDims { cells_w: 480, cells_h: 320 },
        },
        motion_noise: MotionNoise { pos: 0.3, size: 0.0 },
        margin: 0.0,
    }
}

/// The same world with perfectly confident, noise-free detections.
pub fn clean_suite() -> Scenario {
    let mut s = ood_suite();
    for o in &mut s.objects {
        o.c_bar = 1.0;
        o.jitter = 0.0;
        o.ood = false;
    }
    s.detector.clutter_rate = 0.0;
    s.detector.box_jitter = 0.0;
    s
}

pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "ood" => Some(ood_suite()),
        "clean" => Some(clean_suite()),
        _ => None,
    }
}
