use super::*;
use crate::testing::{config, quad, random_state, random_vec3};
use crate::verify::{local_fd_jacobian, relative_error};
use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_4;

fn hover_state(q: Quaternion) -> State {
    quad().hover_state(Vec3::new(1.0, -2.0, 3.0), q).unwrap()
}

/// Target on the optical axis at distance `range` from the body origin.
fn on_axis_target(state: &State, range: f64) -> TargetSample {
    TargetSample {
        position: state.p + quat::quat_to_rot(&state.q) * Vec3::new(range, 0.0, 0.0),
        velocity: Vec3::zeros(),
    }
}

#[test]
fn trim_with_target_on_axis_has_zero_residual() {
    let cfg = config(10);
    let q = Quaternion::from_yaw(0.7);
    let state = hover_state(q);
    let target = on_axis_target(&state, cfg.standoff);
    let y = output_map(&cfg, &state, &ControlRate::zeros(4), &target, &q).unwrap();
    let reference = ReferencePoint::hover(state.p, q, cfg.standoff);
    let r = output_residual(&y, &reference);
    assert!(r.amax() < 1e-12, "{r}");
    assert!(stage_cost(&cfg.weights, &y, &reference, &[0.0, 0.0]) < 1e-20);
}

#[test]
fn free_fall_acceleration_appears_in_output() {
    let cfg = config(10);
    let mut state = hover_state(Quaternion::identity());
    state.speeds.fill(0.0);
    let target = on_axis_target(&state, 2.0);
    let y = output_map(&cfg, &state, &ControlRate::zeros(4), &target, &state.q).unwrap();
    assert_relative_eq!(y.v_dot, Vec3::new(0.0, 0.0, -9.84), epsilon = 1e-12);
}

#[test]
fn distance_matches_brute_force() {
    let cfg = config(10);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let state = random_state(&mut rng);
        let target = TargetSample { position: random_vec3(&mut rng, 5.0), velocity: Vec3::zeros() };
        let y = output_map(&cfg, &state, &ControlRate::zeros(4), &target, &state.q).unwrap();
        let d = state.p - target.position;
        let brute = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        assert!((y.distance - brute).abs() < 1e-12);
    }
}

fn zero_residual_pair() -> (OutputVector, ReferencePoint) {
    let reference = ReferencePoint::hover(Vec3::new(1.0, 2.0, 3.0), Quaternion::identity(), 1.0);
    let y = OutputVector {
        p: reference.p,
        attitude_error: Vec3::zeros(),
        v: Vec3::zeros(),
        omega: Vec3::zeros(),
        v_dot: Vec3::zeros(),
        omega_dot: Vec3::zeros(),
        cos_beta: 1.0,
        cos_beta_rate: 0.0,
        distance: 1.0,
    };
    (y, reference)
}

#[test]
fn stage_cost_single_terms() {
    let w = Weights::default();
    let (mut y, reference) = zero_residual_pair();
    assert_eq!(stage_cost(&w, &y, &reference, &[0.0]), 0.0);
    assert_relative_eq!(stage_cost(&w, &y, &reference, &[0.01]), 1.0, epsilon = 1e-12);
    y.distance = 2.0;
    assert_relative_eq!(stage_cost(&w, &y, &reference, &[0.0]), 10.0, epsilon = 1e-12);
}

#[test]
fn attitude_contributes_squared_error_norm() {
    let w = Weights::default();
    let (mut y, reference) = zero_residual_pair();
    y.attitude_error = Vec3::new(0.1, -0.2, 0.3);
    assert_relative_eq!(stage_cost(&w, &y, &reference, &[]), 0.14, epsilon = 1e-12);
}

#[test]
fn hover_box_residuals() {
    let cfg = config(10);
    let state = hover_state(Quaternion::identity());
    let target = on_axis_target(&state, 1.0);
    let res = hard_constraints(&cfg, &state, Some(&ControlRate::zeros(4)), &target.position);
    for v in res.speed_lower.iter().chain(res.speed_upper.iter()) {
        assert_relative_eq!(*v, 25.0, epsilon = 1e-9);
    }
    assert_eq!(res.rate_lower, DVector::from_element(4, 110.0));
    assert_eq!(res.rate_upper, DVector::from_element(4, 200.0));
    let terminal = hard_constraints(&cfg, &state, None, &target.position);
    assert!(terminal.rate_lower.is_empty() && terminal.rate_upper.is_empty());
}

#[test]
fn speed_at_upper_bound_is_active() {
    let cfg = config(10);
    let mut state = hover_state(Quaternion::identity());
    state.speeds[2] = 90.0;
    let target = on_axis_target(&state, 1.0);
    let res = hard_constraints(&cfg, &state, None, &target.position);
    assert_eq!(res.speed_upper[2], 0.0);
    assert_eq!(res.min(), 0.0);
}

#[test]
fn on_axis_target_is_strictly_inside_narrow_fov() {
    let mut cfg = config(10);
    cfg.camera.half_angle_h = FRAC_PI_4;
    cfg.camera.half_angle_v = FRAC_PI_4;
    let state = hover_state(Quaternion::from_yaw(-1.2));
    let target = on_axis_target(&state, 1.0);
    let res = hard_constraints(&cfg, &state, None, &target.position);
    assert_eq!(res.fov.len(), 5);
    assert!(res.fov.iter().all(|v| *v > 0.0));
}

fn obstacle_at(p: Vec3) -> Vec<ObstacleTrack> {
    vec![ObstacleTrack { positions: vec![p; 3], safety_radius: 1.0 }]
}

#[test]
fn obstacle_residual_examples() {
    let obs = obstacle_at(Vec3::zeros());
    assert_relative_eq!(obstacle_constraints(&Vec3::new(2.0, 0.0, 0.0), &obs, 1, &[0.0])[0], 3.0);
    assert_eq!(obstacle_constraints(&Vec3::new(0.0, 1.0, 0.0), &obs, 2, &[0.0])[0], 0.0);
    let inside = Vec3::new(0.0, 0.0, 0.8);
    assert!(obstacle_constraints(&inside, &obs, 0, &[0.0])[0] < 0.0);
    assert!(obstacle_constraints(&inside, &obs, 0, &[0.5999])[0] < 0.0);
    assert!(obstacle_constraints(&inside, &obs, 0, &[0.6])[0] >= -1e-15);
}

#[test]
fn obstacle_gradient_is_finite_at_coincidence() {
    let g = obstacle_gradient(&Vec3::new(1.0, 2.0, 3.0), &Vec3::new(1.0, 2.0, 3.0));
    assert_eq!(g, Vec3::zeros());
}

#[test]
fn obstacle_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let p = random_vec3(&mut rng, 3.0);
        let o = random_vec3(&mut rng, 3.0);
        let obs = obstacle_at(o);
        let g = obstacle_gradient(&p, &o);
        for i in 0..3 {
            let mut e = Vec3::zeros();
            e[i] = 1e-6;
            let fd = (obstacle_constraints(&(p + e), &obs, 0, &[0.0])[0]
                - obstacle_constraints(&(p - e), &obs, 0, &[0.0])[0])
                / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6);
        }
    }
}

#[test]
fn assemble_counts_variables() {
    let cfg = config(1);
    let x0 = hover_state(Quaternion::identity());
    let refs = vec![ReferencePoint::hover(Vec3::zeros(), Quaternion::identity(), 1.0); 2];
    let targets = vec![on_axis_target(&x0, 1.0); 2];
    let inst = assemble_ocp(&cfg, x0.clone(), refs, targets, Vec::new()).unwrap();
    assert_eq!(inst.dims.state_vars, 34);
    assert_eq!(inst.dims.control_vars, 4);
    assert_eq!(inst.dims.slack_vars, 0);

    let cfg = config(50);
    let refs = vec![ReferencePoint::hover(Vec3::zeros(), Quaternion::identity(), 1.0); 51];
    let targets = vec![on_axis_target(&x0, 1.0); 51];
    let obstacles = vec![
        ObstacleTrack { positions: vec![Vec3::new(2.0, 6.0, 0.0); 51], safety_radius: 1.0 },
        ObstacleTrack { positions: vec![Vec3::new(10.0, 6.0, 2.0); 51], safety_radius: 1.0 },
    ];
    let inst = assemble_ocp(&cfg, x0.clone(), refs.clone(), targets.clone(), obstacles).unwrap();
    assert_eq!(inst.dims.slack_vars, 102);

    assert!(matches!(
        assemble_ocp(&cfg, x0, refs[..50].to_vec(), targets, Vec::new()),
        Err(Error::Dimension(_))
    ));
}

fn output_vector_of(cfg: &OcpConfig, state: &State, target: &TargetSample, q_d: &Quaternion) -> DVector<f64> {
    let y = output_map(cfg, state, &ControlRate::zeros(4), target, q_d).unwrap();
    DVector::from_column_slice(y.to_array().as_slice())
}

#[test]
fn output_jacobian_matches_finite_differences() {
    let mut cfg = config(10);
    cfg.camera.position = Vec3::new(0.1, -0.05, 0.02);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let state = random_state(&mut rng);
        let target = TargetSample {
            position: state.p + random_vec3(&mut rng, 3.0) + Vec3::new(0.0, 0.0, 0.5),
            velocity: random_vec3(&mut rng, 1.0),
        };
        // Keep the attitude error well inside the half-angle branch.
        let q_d = quat::retract(&state.q, &random_vec3(&mut rng, 1.0));
        let (y, jac) = output_jacobian(&cfg, &state, &target, &q_d).unwrap();
        let direct = output_map(&cfg, &state, &ControlRate::zeros(4), &target, &q_d).unwrap();
        assert!((y.to_array() - direct.to_array()).amax() < 1e-12);
        let fd = local_fd_jacobian(&state, 1e-6, |s| output_vector_of(&cfg, s, &target, &q_d));
        let err = relative_error(&jac, &fd, 1e-12);
        assert!(err < 1e-5, "relative error {err}");
    }
}

#[test]
fn output_does_not_depend_on_rate() {
    let cfg = config(10);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let state = random_state(&mut rng);
    let target = TargetSample { position: state.p + Vec3::new(1.0, 1.0, 1.0), velocity: Vec3::zeros() };
    let a = output_map(&cfg, &state, &ControlRate::zeros(4), &target, &state.q).unwrap();
    let rate = ControlRate(DVector::from_fn(4, |_, _| rng.random_range(-100.0..100.0)));
    let b = output_map(&cfg, &state, &rate, &target, &state.q).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn stage_cost_zero_iff_residuals_zero(
        idx in 0usize..OUTPUT_DIM,
        delta in prop_oneof![Just(0.0), -2.0f64..2.0],
        slack in prop_oneof![Just(0.0), 0.0f64..1.0],
    ) {
        let w = Weights::default();
        let (y, reference) = zero_residual_pair();
        let mut arr = y.to_array();
        arr[idx] += delta;
        let y = OutputVector {
            p: arr.fixed_rows::<3>(Y_P).into(),
            attitude_error: arr.fixed_rows::<3>(Y_ATT).into(),
            v: arr.fixed_rows::<3>(Y_V).into(),
            omega: arr.fixed_rows::<3>(Y_W).into(),
            v_dot: arr.fixed_rows::<3>(Y_VDOT).into(),
            omega_dot: arr.fixed_rows::<3>(Y_WDOT).into(),
            cos_beta: arr[Y_COS_BETA],
            cos_beta_rate: arr[Y_COS_BETA_RATE],
            distance: arr[Y_DIST],
        };
        let cost = stage_cost(&w, &y, &reference, &[slack]);
        prop_assert!(cost >= 0.0);
        prop_assert_eq!(cost == 0.0, delta == 0.0 && slack == 0.0);
    }

    #[test]
    fn obstacle_feasibility_is_monotone_in_slack(
        px in -3.0f64..3.0, py in -3.0f64..3.0, pz in -3.0f64..3.0, s in 0.0f64..2.0,
    ) {
        let obs = obstacle_at(Vec3::zeros());
        let p = Vec3::new(px, py, pz);
        let without = obstacle_constraints(&p, &obs, 0, &[0.0])[0];
        let with = obstacle_constraints(&p, &obs, 0, &[s])[0];
        prop_assert!(with >= without);
        if without >= 0.0 {
            prop_assert!(with >= 0.0);
        }
    }
}
