use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavegauge::connection::{gluing_residuals, StiefelConnection};
use wavegauge::crossed_module::{horizontal_compose, vertical_compose, vertical_inverse, Arrow2, CrossedModule};
use wavegauge::grassmann::{best_chart, random_projector, random_projector_near, Projector};
use wavegauge::linalg::{dist, eye, gaussian, mat_exp, mat_log};
use wavegauge::two_space::{compose, wave_operator, weak_inverse, Skeleton};
use wavegauge::{Exec, C64};

fn arrow(cm: &CrossedModule, rng: &mut ChaCha8Rng) -> Arrow2 {
    Arrow2::new(cm.random_h(rng), cm.random_g(rng))
}

fn modules() -> impl Strategy<Value = CrossedModule> {
    prop_oneof![
        (1usize..4).prop_map(CrossedModule::gl_adj),
        (1usize..4).prop_map(CrossedModule::central),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn horizontal_composition_is_associative(cm in modules(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (arrow(&cm, &mut rng), arrow(&cm, &mut rng), arrow(&cm, &mut rng));
        let left = horizontal_compose(&cm, &horizontal_compose(&cm, &a, &b).unwrap(), &c).unwrap();
        let right = horizontal_compose(&cm, &a, &horizontal_compose(&cm, &b, &c).unwrap()).unwrap();
        prop_assert!(left.distance(&right) < 1e-10);
        // source and target are multiplicative
        let ab = horizontal_compose(&cm, &a, &b).unwrap();
        prop_assert!(dist(&ab.target(&cm), &(a.target(&cm) * b.target(&cm))) < 1e-9 * ab.target(&cm).norm().max(1.0));
    }

    #[test]
    fn vertical_inverse_cancels(cm in modules(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = arrow(&cm, &mut rng);
        let inv = vertical_inverse(&cm, &a).unwrap();
        let unit = vertical_compose(&cm, &inv, &a, 1e-8).unwrap();
        prop_assert!(unit.distance(&Arrow2::unit_on(a.g.clone())) < 1e-10);
    }

    #[test]
    fn log_inverts_exp_near_identity(m in 1usize..5, seed in any::<u64>(), scale in 0.01f64..0.8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(m, m, &mut rng) * C64::new(scale / (m as f64).sqrt(), 0.0);
        prop_assert!(dist(&mat_log(&mat_exp(&x)).unwrap(), &x) < 1e-10);
    }

    #[test]
    fn chart_coordinates_round_trip(n in 2usize..6, seed in any::<u64>()) {
        let m = 1 + (seed as usize) % (n - 1);
        let p = random_projector(n, m, seed);
        let ch = best_chart(&p);
        let back = ch.projector_at(&ch.coordinates(&p).unwrap()).unwrap();
        prop_assert!(dist(back.matrix(), p.matrix()) < 1e-10);
        prop_assert!(dist(&(p.matrix() * p.matrix()), p.matrix()) < 1e-12);
    }

    #[test]
    fn wave_operators_compose(n in 2usize..6, seed in any::<u64>(), r in 0.05f64..0.5) {
        let m = 1 + (seed as usize) % (n - 1);
        let p0 = random_projector(n, m, seed);
        let p1 = random_projector_near(&p0, r, seed ^ 1);
        let p2 = random_projector_near(&p1, r, seed ^ 2);
        let w1 = wave_operator(&Skeleton::pair(p1.clone(), p0.clone())).unwrap();
        let w2 = wave_operator(&Skeleton::pair(p2.clone(), p1.clone())).unwrap();
        prop_assert!(dist(&(&w1.value * &w1.value), &w1.value) < 1e-9);
        prop_assert!(dist(&(weak_inverse(&w1).unwrap() * &w1.value), p0.matrix()) < 1e-9);
        let both = compose(&w2, &w1).unwrap();
        prop_assert!(dist(&both.value, &(&w2.value * &w1.value)) < 1e-12);
        prop_assert!(dist(&(p2.matrix() * &both.value), &both.value) < 1e-9);
    }
}

#[test]
fn frames_span_their_projector() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = gaussian(5, 2, &mut rng);
    let p = Projector::from_frame(&z).unwrap();
    assert!(dist(&(p.frame().adjoint() * p.frame()), &eye(2)) < 1e-12);
    assert!(dist(&(p.matrix() * &z), &z) < 1e-12);
}

#[test]
fn parallel_and_sequential_agree_bitwise() {
    let conn = StiefelConnection::new(4, 2);
    let a = gluing_residuals(&conn, None, 30, 5, Exec::Parallel);
    let b = gluing_residuals(&conn, None, 30, 5, Exec::Sequential);
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}
