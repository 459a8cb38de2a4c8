mod support;

use cadp_core::baselines::{min_intervention_filter, NaiveCbfController, NaiveGains};
use cadp_core::robot::*;
use cadp_core::sim::{run_closed_loop, SimConfig};
use cadp_core::solver::ConstraintTerms;
use cadp_core::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{active_set_qp, uniform};

fn random_case(rng: &mut ChaCha8Rng) -> (Vector<2>, ConstraintTerms<3>, f64) {
    let desired = uniform::<2, 1>(rng, 5.0);
    let terms = ConstraintTerms {
        a: rng.random_range(-5.0..5.0),
        b: uniform::<3, 1>(rng, 2.0),
    };
    (desired, terms, 10f64.powf(rng.random_range(-2.0..4.0)))
}

#[test]
fn filter_matches_kkt_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let (desired, terms, r_delta) = random_case(&mut rng);
        let (v, delta) = min_intervention_filter(&desired, &terms, r_delta).unwrap();
        // ‖v − v_d‖² + r_δδ² = ½uᵀHu + cᵀu + const
        let h = Matrix::<3, 3>::from_diagonal(&Vector::<3>::new(2.0, 2.0, 2.0 * r_delta));
        let c = Vector::<3>::new(-2.0 * desired[0], -2.0 * desired[1], 0.0);
        let oracle = active_set_qp(&h, &c, terms.a, &terms.b);
        let got = Vector::<3>::new(v[0], v[1], delta);
        assert!((got - oracle).norm() <= 1e-8 * (1.0 + oracle.norm()), "{got} vs {oracle}");
    }
}

#[test]
fn no_feasible_point_does_better() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let (desired, terms, r_delta) = random_case(&mut rng);
        let (v, delta) = min_intervention_filter(&desired, &terms, r_delta).unwrap();
        let cost = |v: &Vector<2>, d: f64| (v - desired).norm_squared() + r_delta * d * d;
        let best = cost(&v, delta);
        assert!(terms.value(&Vector::<3>::new(v[0], v[1], delta)) >= -1e-9);
        for _ in 0..200 {
            let u = Vector::<3>::new(v[0], v[1], delta) + uniform::<3, 1>(&mut rng, 0.5);
            if terms.value(&u) >= 0.0 {
                assert!(cost(&u.fixed_rows::<2>(0).into_owned(), u[2]) >= best - 1e-9);
            }
        }
    }
}

#[test]
fn filtered_robot_stays_safe() {
    let params = RobotParams::default();
    let map = ObstacleMap::new(
        vec![Circle {
            center: Vector::<2>::new(3.0, 0.1),
            radius: 0.8,
        }],
        None,
    )
    .unwrap();
    let limits = ScenarioLimits {
        goal: Vector::<2>::new(6.0, 0.0),
        ..ScenarioLimits::default()
    };
    let (_, chain) = assemble_safe_set(&map, &limits, &params).unwrap();
    let mut controller = NaiveCbfController {
        constraint: &chain,
        params,
        goal: limits.goal,
        gains: NaiveGains::default(),
        slack_weight: 0.2e10,
        update_period: 0.05,
    };
    let sim = SimConfig {
        duration: 30.0,
        ..SimConfig::default()
    };
    let log = run_closed_loop(&RobotPlant::new(params), &mut controller, &chain, &Vector::<5>::zeros(), &sim, &())
        .map_err(|a| a.error)
        .unwrap();
    assert!(log.min_psi0() >= 0.0);
    assert!(log.rows.iter().all(|r| r.constraint >= -1e-10));
}
