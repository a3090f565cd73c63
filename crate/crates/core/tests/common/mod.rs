//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sof_lab::basis::{ShConfig, TemporalBasis, TemporalKind, TemporalSpec};
use sof_lab::fitlab::{catalog, DesignSpec, Scenario};
use sof_lab::opg::StageSolver;
use sof_lab::render::render_clean;
use sof_lab::scene::{
    make_full_design, make_trajectory_design, synth_scene, AgentMotion, AgentRecipe, Appearance, CameraRig,
    EventRecipe, EventShape, GaussianGeometry, Intrinsics, ObservationDesign, Primitive, PrimitiveCloud, SceneGraph,
    SceneRecipe, TrajectoryPath,
};

pub fn small_intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 8.0,
        fy: 8.0,
        cx: 5.0,
        cy: 4.0,
        width: 10,
        height: 8,
    }
}

pub fn small_rig() -> CameraRig {
    CameraRig {
        intrinsics: small_intrinsics(),
        pixel_stride: 1,
        camera_spacing_deg: 35.0,
    }
}

fn cloud(count: usize, lo: [f64; 3], hi: [f64; 3]) -> PrimitiveCloud {
    PrimitiveCloud {
        count,
        region_min: lo,
        region_max: hi,
        scale_range: [0.2, 0.45],
        opacity_range: [0.3, 0.95],
        dc_range: [0.2, 1.5],
        view_dependent_std: 0.4,
    }
}

/// A random scene (statics plus one parked or moving agent) and a random
/// trajectory or full-manifold design looking at it.
pub fn random_pair(seed: u64) -> (SceneGraph, ObservationDesign) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let temporal = if rng.random_bool(0.5) {
        TemporalSpec {
            kind: TemporalKind::Fourier,
            count: rng.random_range(2..6),
            horizon: 1.0,
        }
    } else {
        TemporalSpec {
            kind: TemporalKind::BSpline {
                order: rng.random_range(2..5),
            },
            count: 5,
            horizon: 1.0,
        }
    };
    let linear = TrajectoryPath::Linear {
        start: [-1.0, -1.2, 0.1],
        end: [1.0, -1.2, 0.1],
        target: [0.0, 0.0, 0.0],
    };
    let motion = if rng.random_bool(0.5) {
        AgentMotion::Parked {
            position: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.1],
            yaw_deg: rng.random_range(-90.0..90.0),
        }
    } else {
        AgentMotion::FollowPath {
            path: linear,
            offset: [0.0, 1.0],
            keyframes: 6,
        }
    };
    let recipe = SceneRecipe {
        name: format!("random-{seed}"),
        horizon: 1.0,
        sh_degree: rng.random_range(0..3),
        temporal,
        statics: cloud(rng.random_range(1..4), [-1.0, -1.0, -0.3], [1.0, 1.0, 0.4]),
        agents: vec![AgentRecipe {
            name: "agent".into(),
            motion,
            cloud: cloud(2, [-0.3, -0.2, 0.0], [0.3, 0.2, 0.3]),
            events: vec![EventRecipe {
                primitive: 0,
                shape: EventShape::Bump { start: 0.2, end: 0.7 },
                delta_rgb: [0.3, 0.1, -0.1],
                peak_time: 0.45,
                rest_time: 0.9,
            }],
        }],
    };
    let (scene, _) = synth_scene(&recipe, seed).expect("random recipe is valid");
    let rig = small_rig();
    let design = if rng.random_bool(0.5) {
        let path = TrajectoryPath::Circular {
            center: [0.0, 0.0, 0.0],
            radius: rng.random_range(3.5..5.0),
            height: 0.8,
            undulation: rng.random_range(0.0..0.8),
            undulation_cycles: 2.0,
            revolutions: 1.0,
        };
        make_trajectory_design(1.0, rng.random_range(1..3), 4, path, &rig, None).unwrap()
    } else {
        make_full_design(1.0, 3, rng.random_range(2..4), [0.0, 0.0, 0.0], 4.0, &rig).unwrap()
    };
    (scene, design)
}

/// Central finite differences of the renderer, one θ entry at a time.
pub fn renderer_fd(scene: &SceneGraph, design: &ObservationDesign, h: f64) -> DMatrix<f64> {
    let theta = scene.parameters();
    let rows = design.entries();
    let mut out = DMatrix::zeros(rows, theta.len());
    for j in 0..theta.len() {
        let mut plus = theta.clone();
        plus[j] += h;
        let mut minus = theta.clone();
        minus[j] -= h;
        let a = render_clean(&scene.with_parameters(&plus).unwrap(), design).unwrap();
        let b = render_clean(&scene.with_parameters(&minus).unwrap(), design).unwrap();
        for i in 0..rows {
            out[(i, j)] = (a[i] - b[i]) / (2.0 * h);
        }
    }
    out
}

/// Largest relative column error ‖a_j − f_j‖ / ‖f_j‖; a column that is zero
/// in the reference must be zero (below 1e-12) in the candidate.
pub fn max_column_error(candidate: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    assert_eq!(candidate.shape(), reference.shape());
    let mut worst: f64 = 0.0;
    for j in 0..reference.ncols() {
        let r = reference.column(j).norm();
        let d = (candidate.column(j) - reference.column(j)).norm();
        let e = if r > 0.0 {
            d / r
        } else if d < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(e);
    }
    worst
}

/// Scene of isotropic static primitives `(mean, scale, opacity)` with
/// nonzero appearance, SH degree 1 and a 3-term Fourier basis.
pub fn hand_scene(prims: &[([f64; 3], f64, f64)]) -> SceneGraph {
    hand_scene_with(prims, 1, 3)
}

pub fn hand_scene_with(prims: &[([f64; 3], f64, f64)], sh_degree: usize, fourier_count: usize) -> SceneGraph {
    let sh = ShConfig::new(sh_degree).unwrap();
    let temporal = TemporalBasis::fourier(fourier_count, 1.0).unwrap();
    let (terms, varying) = (sh.term_count(), temporal.varying_count());
    let statics = prims
        .iter()
        .map(|&(mean, scale, opacity)| {
            let mut appearance = Appearance::zeros(terms, varying);
            for ch in 0..3 {
                appearance.spatial[ch][0] = 1.0 + ch as f64;
                if terms > 1 {
                    appearance.spatial[ch][1] = 0.2;
                }
                if varying > 0 {
                    appearance.temporal[ch][0] = 0.3;
                }
            }
            Primitive {
                geometry: GaussianGeometry {
                    mean,
                    rotation: [1.0, 0.0, 0.0, 0.0],
                    scale: [scale; 3],
                    opacity,
                },
                appearance,
            }
        })
        .collect();
    SceneGraph {
        horizon: 1.0,
        sh,
        temporal,
        statics,
        agents: vec![],
    }
}

/// Taillight scenario shrunk to run in a few seconds.
pub fn tiny_scenario() -> Scenario {
    let mut sc = catalog("taillight-sof").unwrap();
    sc.name = "tiny-sof".into();
    sc.recipe.temporal.count = 5;
    sc.recipe.statics.count = 2;
    sc.rig.intrinsics = small_intrinsics();
    if let DesignSpec::Trajectory { path, .. } = sc.design {
        sc.design = DesignSpec::Trajectory {
            timesteps: 16,
            cameras: 1,
            path,
        };
    }
    sc.schedule.stage2 = StageSolver::gradient(40);
    sc.schedule.joint = StageSolver::gradient(60);
    sc.schedule.tv.nodes = 64;
    let event = &mut sc.recipe.agents[0].events[0];
    event.shape = EventShape::Pulses {
        cycles: 1.0,
        start: 0.0,
        end: 1.0,
    };
    event.peak_time = 0.25;
    event.rest_time = 0.75;
    sc
}
