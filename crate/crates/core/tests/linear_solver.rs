mod common;

use common::*;
use discal::camera::reprojection_residual;
use discal::solver::{huber_cost, imu_residual};

#[test]
fn bordered_solve_matches_dense() {
    let s = sparse_vs_dense(100, 31);
    assert!(s.max_rel <= 1e-8, "{s:?}");
    assert!(s.max_matrix_rel <= 1e-10, "{s:?}");
}

#[test]
fn two_frame_normal_equations_match_dense_assembly() {
    for (seed, stereo) in [(32, true), (33, false)] {
        let problem = small_problem(seed, 2, stereo);
        assert_eq!(problem.dimension(), 39);
        let (h, g) = dense_normal_equations(&problem);
        let (hs, gs) = problem.build_normal_equations().unwrap().system.to_dense();
        assert_eq!(hs.shape(), (39, 39));
        assert!((&hs - &h).amax() <= 1e-10 * h.amax(), "{}", (&hs - &h).amax());
        assert!((&gs - &g).amax() <= 1e-10 * g.amax());
    }
}

#[test]
fn robust_cost_matches_direct_evaluation() {
    let problem = small_problem(34, 15, true);
    let delta = problem.options.huber_delta_px;
    let mut camera = 0.0;
    let mut outside = 0;
    for (i, (state, data)) in problem.frames.iter().zip(&problem.frame_data).enumerate() {
        let gyro = problem.frame_rate(i, &problem.calib);
        for o in &data.observations {
            let cam = &problem.cameras[o.camera];
            let r = reprojection_residual(state, &problem.calib, &o.point, &o.pixel, cam, &gyro).unwrap().residual;
            let s = (r / cam.pixel_sigma).norm_squared();
            outside += usize::from(s > delta * delta);
            camera += huber_cost(s, delta);
        }
    }
    let mut imu = 0.0;
    for (i, f) in problem.imu_factors.iter().enumerate() {
        imu += imu_residual(&problem.frames[i], &problem.frames[i + 1], &problem.calib, &f.preint, &f.sqrt_info)
            .residual
            .norm_squared();
    }
    let eval = problem.evaluate(&problem.frames, &problem.calib).unwrap();
    assert!(outside > 0, "no residual reaches the robust branch");
    assert!((eval.camera_cost - camera).abs() <= 1e-10 * camera);
    assert!((eval.imu_cost - imu).abs() <= 1e-10 * imu);
    assert!((eval.cost - camera - imu).abs() <= 1e-10 * eval.cost);
}
