mod common;

use common::{random_stable_continuous, rk4, rng, Vector};
use proptest::prelude::*;
use rand::Rng;
use secure_platoon::lti::{discretize_zoh, step_plant, DiscretePlant, PlantState};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn zoh_semigroup(seed in any::<u64>(), n in 1usize..=6) {
        let mut r = rng(seed);
        let sys = random_stable_continuous(&mut r, n, 1);
        let one = discretize_zoh(&sys, 0.1).unwrap();
        let two = discretize_zoh(&sys, 0.2).unwrap();
        let diff = (&one.a * &one.a - &two.a).amax();
        prop_assert!(diff < 1e-8, "semigroup error {diff}");
    }

    #[test]
    fn zoh_matches_rk4(seed in any::<u64>(), n in 1usize..=6, m in 1usize..=2) {
        let mut r = rng(seed);
        let sys = random_stable_continuous(&mut r, n, m);
        let zoh = discretize_zoh(&sys, 0.1).unwrap();
        let x0 = Vector::from_fn(n, |_, _| r.random_range(-3.0..3.0));
        let u = Vector::from_fn(m, |_, _| r.random_range(-3.0..3.0));
        let exact = &zoh.a * &x0 + &zoh.b_blocks[0] * &u;
        let oracle = rk4(&sys.a_c, &sys.b_c_blocks[0], &x0, &u, 0.1, 200);
        let rel = (&exact - &oracle).norm() / oracle.norm().max(1e-12);
        prop_assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn step_plant_superposition(seed in any::<u64>(), n in 1usize..=6) {
        let mut r = rng(seed);
        let sys = random_stable_continuous(&mut r, n, 2);
        let c = common::random_matrix(&mut r, 2, n);
        let plant = DiscretePlant::new(discretize_zoh(&sys, 0.1).unwrap(), c, 0.1, 0.0, 0.0).unwrap();
        let rand_vec = |r: &mut rand_chacha::ChaCha8Rng, k: usize| Vector::from_fn(k, |_, _| r.random_range(-5.0..5.0));
        let (x1, x2) = (rand_vec(&mut r, n), rand_vec(&mut r, n));
        let (u1, u2) = (rand_vec(&mut r, 2), rand_vec(&mut r, 2));
        let (w1, w2) = (rand_vec(&mut r, n), rand_vec(&mut r, n));
        let (a1, a2) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let s1 = step_plant(&plant, &PlantState::new(x1.clone()), std::slice::from_ref(&u1), &w1).unwrap();
        let s2 = step_plant(&plant, &PlantState::new(x2.clone()), std::slice::from_ref(&u2), &w2).unwrap();
        let combo = step_plant(
            &plant,
            &PlantState::new(&x1 * a1 + &x2 * a2),
            &[&u1 * a1 + &u2 * a2],
            &(&w1 * a1 + &w2 * a2),
        )
        .unwrap();
        let expected = &s1.x * a1 + &s2.x * a2;
        let err = (&combo.x - &expected).amax();
        prop_assert!(err <= 1e-12 * expected.amax().max(1.0), "superposition error {err}");
    }
}
