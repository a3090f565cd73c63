mod common;

use common::{max_column_error, random_pair, renderer_fd};
use sof_lab::jacobians::{jacobian_appearance, jacobian_fd};
use sof_lab::render::render_clean;

#[test]
fn analytic_jacobian_matches_central_differences_on_random_pairs() {
    for seed in 0..24 {
        let (scene, design) = random_pair(seed);
        let analytic = jacobian_appearance(&scene, &design).unwrap().expand();
        let fd = renderer_fd(&scene, &design, 1e-5);
        assert!(fd.norm() > 0.0, "pair {seed} renders nothing");
        let err = max_column_error(&analytic, &fd);
        assert!(err < 1e-6, "pair {seed}: max relative column error {err:e}");
    }
}

#[test]
fn library_fd_agrees_with_independent_fd() {
    let (scene, design) = random_pair(100);
    let lib = jacobian_fd(&scene, &design, 1e-5).unwrap();
    let ours = renderer_fd(&scene, &design, 1e-5);
    assert!(max_column_error(&lib, &ours) < 1e-12);
}

#[test]
fn perturbing_one_parameter_moves_the_render_along_its_column() {
    let (scene, design) = random_pair(7);
    let j = jacobian_appearance(&scene, &design).unwrap().expand();
    let theta = scene.parameters();
    let base = render_clean(&scene, &design).unwrap();
    let delta = 0.37;
    for col in (0..theta.len()).step_by(5) {
        let mut moved = theta.clone();
        moved[col] += delta;
        let out = render_clean(&scene.with_parameters(&moved).unwrap(), &design).unwrap();
        for (row, (a, b)) in out.iter().zip(&base).enumerate() {
            assert!((a - b - j[(row, col)] * delta).abs() < 1e-12, "column {col} row {row}");
        }
    }
}
