//! Oracles and random-system generators shared by the property suites and the
//! acceptance target.

#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use secure_platoon::attacks::{sample_attack, AttackKind, AttackSpec};
use secure_platoon::bank::{classification_ratio, classifier_terms, design_reference_params, init_bank, BankState, ReferenceModel};
use secure_platoon::catalog::{build_catalog, SubsetCatalog};
use secure_platoon::lti::{ContinuousLti, DiscretePlant, ZohMatrices};
use secure_platoon::platoon::{build_closed_loop, CaccParams};
use secure_platoon::synthesis::{build_d_matrix, synthesize_gains, GainSet, SynthesisOptions};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Sum of uniforms is close enough to normal for test matrices.
    (0..6).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() / 2.0
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| gaussian(rng))
}

/// Random Hurwitz system with `m` inputs in one block.
pub fn random_stable_continuous(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ContinuousLti {
    let raw = random_matrix(rng, n, n);
    let abscissa = raw.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let shift = abscissa + rng.random_range(0.1..1.0);
    let a_c = raw - Mat::identity(n, n) * shift;
    ContinuousLti::new(a_c, vec![random_matrix(rng, n, m)]).unwrap()
}

fn deriv(a: &Mat, b: &Mat, x: &Vector, u: &Vector) -> Vector {
    a * x + b * u
}

/// Classical fourth-order Runge-Kutta over `[0, ts]` with constant input.
pub fn rk4(a: &Mat, b: &Mat, x0: &Vector, u: &Vector, ts: f64, substeps: usize) -> Vector {
    let h = ts / substeps as f64;
    let mut x = x0.clone();
    for _ in 0..substeps {
        let k1 = deriv(a, b, &x, u);
        let k2 = deriv(a, b, &(&x + &k1 * (h / 2.0)), u);
        let k3 = deriv(a, b, &(&x + &k2 * (h / 2.0)), u);
        let k4 = deriv(a, b, &(&x + &k3 * h), u);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// Orthonormal basis of `ker m` for a tall `m` with `n` columns.
fn orthonormal_null(m: &Mat, n: usize) -> Mat {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.unwrap();
    let smax = svd.singular_values.max();
    let tol = 1e-9 * smax.max(1.0);
    let mut cols = Vec::new();
    for i in 0..n {
        if svd.singular_values[i] <= tol {
            cols.push(v_t.row(i).transpose());
        }
    }
    if cols.is_empty() {
        Mat::zeros(n, 0)
    } else {
        Mat::from_columns(&cols)
    }
}

/// Detectability through the unobservable subspace: the restriction of `a` to
/// `ker O` must be Schur stable.
pub fn oracle_detectable(a: &Mat, c: &Mat) -> bool {
    let n = a.nrows();
    let mut obs = Mat::zeros(c.nrows() * n, n);
    let mut power = Mat::identity(n, n);
    for i in 0..n {
        obs.view_mut((i * c.nrows(), 0), (c.nrows(), n)).copy_from(&(c * &power));
        power = &power * a;
    }
    let basis = orthonormal_null(&obs, n);
    if basis.ncols() == 0 {
        return true;
    }
    let restricted = basis.transpose() * a * &basis;
    restricted.complex_eigenvalues().iter().all(|l: &Complex<f64>| l.norm() < 1.0 - 1e-6)
}

/// Minimal detectable subsets by exhaustive enumeration, ordered by size then
/// lexicographically.
pub fn oracle_catalog(a: &Mat, c: &Mat) -> Vec<Vec<usize>> {
    let p = c.nrows();
    let mut detectable: Vec<Vec<usize>> = Vec::new();
    for mask in 1u32..(1 << p) {
        let idx: Vec<usize> = (0..p).filter(|i| mask & (1 << i) != 0).collect();
        let rows: Vec<_> = idx.iter().map(|&i| c.row(i).into_owned()).collect();
        if oracle_detectable(a, &Mat::from_rows(&rows)) {
            detectable.push(idx.iter().map(|i| i + 1).collect());
        }
    }
    let subset_of = |x: &Vec<usize>, y: &Vec<usize>| x.len() < y.len() && x.iter().all(|i| y.contains(i));
    let mut minimal: Vec<Vec<usize>> =
        detectable.iter().filter(|s| !detectable.iter().any(|t| subset_of(t, s))).cloned().collect();
    minimal.sort_by(|x, y| x.len().cmp(&y.len()).then_with(|| x.cmp(y)));
    minimal
}

/// Modal construction `a = T diag(l) T^-1`, `c = C_m T^-1` with sparse `C_m`,
/// so that subset detectability is decided by structure rather than rounding.
pub fn random_modal_system(rng: &mut ChaCha8Rng, n: usize, p: usize, modes: &[f64], density: f64) -> (Mat, Mat) {
    let t = loop {
        let t = random_matrix(rng, n, n);
        let svd = t.clone().svd(false, false);
        if svd.singular_values.min() > 0.2 {
            break t;
        }
    };
    let t_inv = t.clone().try_inverse().unwrap();
    let lambda = Mat::from_diagonal(&Vector::from_column_slice(modes));
    let a = &t * lambda * &t_inv;
    let mut cm = Mat::zeros(p, n);
    for i in 0..p {
        while cm.row(i).iter().all(|v| *v == 0.0) {
            for j in 0..n {
                if rng.random_bool(density) {
                    let mag = rng.random_range(0.5..2.0);
                    cm[(i, j)] = if rng.random_bool(0.5) { mag } else { -mag };
                }
            }
        }
    }
    (a, cm * t_inv)
}

pub fn random_catalog_system(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (Mat, Mat) {
    let modes: Vec<f64> = (0..n)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            if rng.random_bool(0.5) {
                sign * rng.random_range(1.1..1.6)
            } else {
                sign * rng.random_range(0.1..0.85)
            }
        })
        .collect();
    random_modal_system(rng, n, p, &modes, 0.45)
}

/// A plant with its catalog, shift matrix and verified gains.
#[derive(Clone, Debug)]
pub struct BankSystem {
    pub plant: DiscretePlant,
    pub catalog: SubsetCatalog,
    pub d: Mat,
    pub gains: GainSet,
    pub reference: ReferenceModel,
}

impl BankSystem {
    pub fn n(&self) -> usize {
        self.plant.n()
    }

    pub fn p(&self) -> usize {
        self.plant.sensor_count()
    }

    pub fn bank(&self, x_hat: &[Vector]) -> BankState {
        init_bank(&self.catalog, &self.gains, &self.d, 1000.0, self.reference.clone(), x_hat, 0.5).unwrap()
    }
}

fn reference(ts: f64) -> ReferenceModel {
    let (k_r, c_r) = design_reference_params(-1.0, -2.0).unwrap();
    ReferenceModel::new(k_r, c_r, ts).unwrap()
}

/// Random small system (n in 2..=4, p in 2..=5) with modes inside the unit
/// disc and sometimes one exactly on it. `None` when no gains exist.
pub fn random_bank_system(rng: &mut ChaCha8Rng) -> Option<BankSystem> {
    let n = rng.random_range(2..=4);
    let p = rng.random_range(2..=5);
    let mut modes: Vec<f64> = (0..n).map(|_| rng.random_range(-0.9..0.95)).collect();
    if rng.random_bool(0.5) {
        modes[0] = 1.0;
    }
    let (a, c) = random_modal_system(rng, n, p, &modes, 0.6);
    let b = random_matrix(rng, n, 1);
    let plant = DiscretePlant::new(ZohMatrices { a, b_blocks: vec![b] }, c, 0.1, 0.0, 1e-3).ok()?;
    let catalog = build_catalog(&plant.a, &plant.c_rows).ok()?;
    if catalog.len() < 2 {
        return None;
    }
    let d = build_d_matrix(&plant.a);
    // Draws that need many iterations are rejected rather than waited on.
    let opts = SynthesisOptions { max_iter: 3000, restarts: 0, ..SynthesisOptions::default() };
    let gains = synthesize_gains(&plant.a, &d, &catalog, &opts).ok()?;
    Some(BankSystem { plant, catalog, d, gains, reference: reference(0.1) })
}

/// Deterministic sequence of `count` random bank systems, skipping infeasible draws.
pub fn bank_systems(seed: u64, count: usize) -> (Vec<BankSystem>, usize) {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(count);
    let mut rejected = 0;
    while out.len() < count {
        match random_bank_system(&mut r) {
            Some(s) => out.push(s),
            None => rejected += 1,
        }
    }
    (out, rejected)
}

pub fn platoon_system() -> BankSystem {
    let params = CaccParams::default();
    let plant = build_closed_loop(&params, 0.0, 1e-3).unwrap();
    let catalog = build_catalog(&plant.a, &plant.c_rows).unwrap();
    let d = build_d_matrix(&plant.a);
    let gains = synthesize_gains(&plant.a, &d, &catalog, &SynthesisOptions::default()).unwrap();
    BankSystem { plant, catalog, d, gains, reference: reference(params.ts) }
}

fn random_inputs(rng: &mut ChaCha8Rng, plant: &DiscretePlant, scale: f64) -> Vec<Vector> {
    plant.b_blocks.iter().map(|b| Vector::from_fn(b.ncols(), |_, _| scale * rng.random_range(-1.0..1.0))).collect()
}

fn spread(rng: &mut ChaCha8Rng, x: &Vector, count: usize, radius: f64) -> Vec<Vector> {
    (0..count)
        .map(|_| {
            let dir = Vector::from_fn(x.len(), |_, _| rng.random_range(-1.0..1.0));
            let dir = if dir.norm() > 0.0 { dir.normalize() } else { dir };
            x + dir * (radius * rng.random_range(0.0..1.0))
        })
        .collect()
}

fn initial_state(rng: &mut ChaCha8Rng, sys: &BankSystem) -> Vector {
    if sys.n() == 5 {
        Vector::from_column_slice(&[0.1, 30.0, 0.0, 0.5, 0.0])
    } else {
        Vector::from_fn(sys.n(), |_, _| rng.random_range(-5.0..5.0))
    }
}

/// Attack-free run; every observer error must fall below `tol` after `steps`.
pub fn check_convergence(sys: &BankSystem, seed: u64, steps: usize, tol: f64) -> Result<(), String> {
    let mut r = rng(seed);
    let mut x = initial_state(&mut r, sys);
    let mut bank = sys.bank(&spread(&mut r, &x, sys.catalog.len(), 10.0));
    let scale = if sys.n() == 5 { 0.0 } else { 1.0 };
    for _ in 0..steps {
        let u = random_inputs(&mut r, &sys.plant, scale);
        let y = sys.plant.outputs(&x);
        bank.step(&sys.plant, &y, &u).map_err(|e| e.to_string())?;
        x = sys.plant.propagate(&x, &u).unwrap();
        check_beta_range(&bank)?;
    }
    let worst = bank.observers.iter().map(|o| (&o.x_hat - &x).amax()).fold(0.0, f64::max);
    if worst < tol {
        Ok(())
    } else {
        Err(format!("max observer error {worst:.3e} after {steps} steps"))
    }
}

pub fn check_beta_range(bank: &BankState) -> Result<(), String> {
    for (j, o) in bank.observers.iter().enumerate() {
        if !(o.beta > 0.0 && o.beta < 1.0) {
            return Err(format!("beta_{} = {} outside (0,1)", j + 1, o.beta));
        }
        if o.beta_eta == bank.beta_bar_eta && o.beta != 0.5 {
            return Err(format!("beta_{} = {} at the neutral term", j + 1, o.beta));
        }
    }
    let best = bank.betas().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if bank.observers[bank.selected_j - 1].beta != best || bank.x_bar != bank.observers[bank.selected_j - 1].x_hat {
        return Err("published estimate is not the max-beta observer".into());
    }
    Ok(())
}

/// Outcome of a single-sensor attack run.
#[derive(Clone, Debug)]
pub struct DominanceOutcome {
    pub clean_selected_fraction: f64,
    pub ordering_violations: usize,
    pub scored_steps: usize,
}

/// White attack of unit RMS on one sensor that leaves a clean subset, switched
/// on once the attack-free bank has converged. Scoring starts 5 s after onset.
pub fn check_dominance(sys: &BankSystem, seed: u64) -> Result<DominanceOutcome, String> {
    let mut r = rng(seed);
    let candidates: Vec<usize> = (1..=sys.p())
        .filter(|&s| sys.catalog.subsets.iter().any(|sub| sub.contains(s)))
        .filter(|&s| sys.catalog.subsets.iter().any(|sub| !sub.contains(s)))
        .collect();
    if candidates.is_empty() {
        return Err("no sensor leaves a clean subset".into());
    }
    let target = candidates[r.random_range(0..candidates.len())];
    let (onset, settle, steps) = (300usize, 50usize, 900usize);
    let ts = sys.plant.ts;
    let window = [onset as f64 * ts, 1e9];
    let spec = AttackSpec { targets: vec![target], kind: AttackKind::White, rms: 1.0, window, seed: 0 };
    let mut x = initial_state(&mut r, sys);
    let mut bank = sys.bank(&spread(&mut r, &x, sys.catalog.len(), 1.0));
    let scale = if sys.n() == 5 { 0.0 } else { 1.0 };
    let (mut clean, mut violations) = (0, 0);
    for k in 0..steps {
        let u = random_inputs(&mut r, &sys.plant, scale);
        let mut y = sys.plant.outputs(&x);
        y[target - 1] += sample_attack(&spec, target, k as u64, ts, seed, 0);
        bank.step(&sys.plant, &y, &u).map_err(|e| e.to_string())?;
        x = sys.plant.propagate(&x, &u).unwrap();
        check_beta_range(&bank)?;
        if k >= onset + settle {
            let (mut worst_attacked, mut best_clean_min) = (f64::NEG_INFINITY, f64::INFINITY);
            for (s, o) in sys.catalog.subsets.iter().zip(&bank.observers) {
                if s.contains(target) {
                    worst_attacked = worst_attacked.max(o.beta);
                } else {
                    best_clean_min = best_clean_min.min(o.beta);
                }
            }
            if worst_attacked >= best_clean_min {
                violations += 1;
            }
            if !sys.catalog.subsets[bank.selected_j - 1].contains(target) {
                clean += 1;
            }
        }
    }
    let scored = steps - onset - settle;
    Ok(DominanceOutcome {
        clean_selected_fraction: clean as f64 / scored as f64,
        ordering_violations: violations,
        scored_steps: scored,
    })
}

/// Classifier outputs are unchanged when every `eta + floor` is scaled.
pub fn check_scale_invariance(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let count = r.random_range(2..=9);
    let etas: Vec<f64> = (0..count).map(|_| r.random_range(0.0..5.0)).collect();
    let floor = r.random_range(0.0..0.01);
    let scale = 10f64.powf(r.random_range(-3.0..3.0));
    let scaled: Vec<f64> = etas.iter().map(|e| (e + floor) * scale - floor * scale).collect();
    let t1 = classifier_terms(&etas, floor);
    let t2 = classifier_terms(&scaled, floor * scale);
    let bar = 1.0 - 1.0 / count as f64;
    let b1: Vec<f64> = t1.iter().map(|t| classification_ratio(*t, bar, 1000.0)).collect();
    let b2: Vec<f64> = t2.iter().map(|t| classification_ratio(*t, bar, 1000.0)).collect();
    for (x, y) in t1.iter().zip(&t2) {
        if (x - y).abs() > 1e-12 {
            return Err(format!("term changed under scaling: {x} vs {y}"));
        }
    }
    let argmax = |v: &[f64]| secure_platoon::bank::argmax_lowest(v);
    if argmax(&b1) != argmax(&b2) {
        return Err("selection changed under scaling".into());
    }
    Ok(())
}

/// With every beta forced to 1 the bank step is a plain Luenberger update.
pub fn check_decoupling(sys: &BankSystem, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let x = initial_state(&mut r, sys);
    let mut bank = sys.bank(&spread(&mut r, &x, sys.catalog.len(), 3.0));
    for o in bank.observers.iter_mut() {
        o.beta = 1.0;
    }
    bank.x_bar = Vector::from_fn(sys.n(), |_, _| r.random_range(-50.0..50.0));
    let u = random_inputs(&mut r, &sys.plant, 1.0);
    let y = sys.plant.outputs(&x) + Vector::from_fn(sys.p(), |_, _| r.random_range(-1.0..1.0));
    let before: Vec<Vector> = bank.observers.iter().map(|o| o.x_hat.clone()).collect();
    bank.step(&sys.plant, &y, &u).map_err(|e| e.to_string())?;
    for (j, (s, x_hat)) in sys.catalog.subsets.iter().zip(&before).enumerate() {
        let expected = sys.plant.propagate(x_hat, &u).unwrap() + &sys.gains.gains[j] * (s.pick(&y) - &s.c_sub * x_hat);
        let err = (&bank.observers[j].x_hat - &expected).amax();
        if err > 1e-9 * expected.amax().max(1.0) {
            return Err(format!("observer {} deviates by {err:.3e}", j + 1));
        }
    }
    Ok(())
}

/// `V(e+) - V(e) <= -margin |e|^2` along the shifted error dynamics, and the
/// stacked two-observer system is Schur, at each beta in `betas`.
pub fn check_lyapunov_decrease(sys: &BankSystem, betas: &[f64], seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let p = &sys.gains.p_mat;
    let margin = sys.gains.margin;
    if margin.is_nan() || margin <= 0.0 {
        return Err(format!("non-positive margin {margin}"));
    }
    for &beta in betas {
        for (j, (s, l)) in sys.catalog.subsets.iter().zip(&sys.gains.gains).enumerate() {
            let m = &sys.plant.a - &sys.d * (1.0 - beta) - l * &s.c_sub;
            let lhs = m.transpose() * p * &m - p;
            let top = lhs.clone().symmetric_eigen().eigenvalues.max();
            if top > -margin * (1.0 - 1e-9) {
                return Err(format!("subset {} beta {beta}: max eigenvalue {top:.3e} above -margin {margin:.3e}", j + 1));
            }
            for _ in 0..20 {
                let e = Vector::from_fn(sys.n(), |_, _| r.random_range(-1.0..1.0));
                let next = &m * &e;
                let dv = (next.transpose() * p * &next)[0] - (e.transpose() * p * &e)[0];
                if dv > -margin * e.norm_squared() * (1.0 - 1e-9) {
                    return Err(format!("subset {} beta {beta}: V decreased by only {dv:.3e}", j + 1));
                }
            }
            for j_max in 1..=sys.catalog.len() {
                let stacked = secure_platoon::synthesis::assemble_stacked_error(
                    &sys.plant.a,
                    &sys.d,
                    &sys.catalog,
                    &sys.gains,
                    j + 1,
                    j_max,
                    beta,
                )
                .map_err(|e| e.to_string())?;
                let radius = stacked.a_big.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
                if radius >= 1.0 {
                    return Err(format!("stacked ({}, {j_max}) at beta {beta} has radius {radius}", j + 1));
                }
            }
        }
    }
    Ok(())
}

pub const BETA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
