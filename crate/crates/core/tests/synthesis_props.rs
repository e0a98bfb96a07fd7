mod common;

use common::{bank_systems, check_lyapunov_decrease, platoon_system, BETA_GRID};
use secure_platoon::synthesis::verify_gains;

#[test]
fn platoon_gains_verify_all_inequalities() {
    let sys = platoon_system();
    let report = verify_gains(&sys.plant.a, &sys.d, &sys.catalog, &sys.gains).unwrap();
    assert_eq!(report.entries.len(), 19);
    assert!(report.passed);
    assert!(report.holds_with_relative_margin(1e-8));
    assert!(report.p_min_eig > 0.0);
}

#[test]
fn lyapunov_decrease_on_grid() {
    check_lyapunov_decrease(&platoon_system(), &BETA_GRID, 0).unwrap();
    let (systems, _) = bank_systems(23, 50);
    for (i, sys) in systems.iter().enumerate() {
        check_lyapunov_decrease(sys, &BETA_GRID, i as u64).unwrap_or_else(|e| panic!("system {i}: {e}"));
    }
}

#[test]
fn recovered_gains_reproduce_schur_form() {
    let sys = platoon_system();
    let p = &sys.gains.p_mat;
    let n = p.nrows();
    let rho2 = sys.gains.decay_rate.powi(2);
    for (s, l) in sys.catalog.subsets.iter().zip(&sys.gains.gains) {
        let z = (p * l).transpose();
        for am in [sys.plant.a.clone(), &sys.plant.a - &sys.d] {
            let off = p * &am - z.transpose() * &s.c_sub;
            let direct = p * (&am - l * &s.c_sub);
            assert!((&off - &direct).amax() < 1e-8 * p.amax());
            let mut f = common::Mat::zeros(2 * n, 2 * n);
            f.view_mut((0, 0), (n, n)).copy_from(&(p * -rho2));
            f.view_mut((0, n), (n, n)).copy_from(&off);
            f.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
            f.view_mut((n, n), (n, n)).copy_from(&(-p));
            assert!(f.symmetric_eigen().eigenvalues.max() < 0.0);
        }
    }
}
