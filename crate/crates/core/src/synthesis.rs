//! Offline design of the common Lyapunov matrix and the per-subset observer
//! gains, and independent verification of the resulting error dynamics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::SubsetCatalog;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Diagonal shift matrix with ones on the states carried by unit eigenvalues.
///
/// The eigenvectors of `a` for eigenvalue 1 span the null space of `a - I`.
/// Each basis vector is associated with the state index of its dominant
/// component; the basis is first reduced (max-abs pivoting, lowest index on
/// ties) so that every eigenvector claims a distinct state.
pub fn build_d_matrix(a: &Mat) -> Mat {
    const UNIT_TOL: f64 = 1e-6;
    let n = a.nrows();
    let mut d = Mat::zeros(n, n);
    if n == 0 || !linalg::all_finite(a) {
        return d;
    }
    let shifted = a - Mat::identity(n, n);
    let mut basis = linalg::null_space(&shifted, UNIT_TOL);
    let mut used = vec![false; n];
    for c in 0..basis.ncols() {
        let mut pivot = None;
        let mut best = 0.0;
        for z in 0..n {
            let v = basis[(z, c)].abs();
            if !used[z] && v > best + 1e-12 {
                best = v;
                pivot = Some(z);
            }
        }
        let Some(z) = pivot else { continue };
        used[z] = true;
        d[(z, z)] = 1.0;
        let pv = basis[(z, c)];
        for other in (c + 1)..basis.ncols() {
            let f = basis[(z, other)] / pv;
            for r in 0..n {
                basis[(r, other)] -= f * basis[(r, c)];
            }
        }
    }
    d
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainSet {
    #[serde(with = "linalg::serde_mat")]
    pub p_mat: Mat,
    #[serde(with = "linalg::serde_mats")]
    pub gains: Vec<Mat>,
    /// Smallest decrease margin: `min_i -lambda_max((A_i - L C)^T P (A_i - L C) - P)`.
    pub margin: f64,
    /// Contraction target used by the solver (1.0 means plain feasibility).
    pub decay_rate: f64,
}

impl GainSet {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: GainSet = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.p_mat.nrows();
        if !self.p_mat.is_square() || n == 0 {
            return Err(Error::invalid("P must be square and non-empty"));
        }
        linalg::ensure_finite(&self.p_mat, "P")?;
        if (&self.p_mat - self.p_mat.transpose()).amax() > 1e-10 * self.p_mat.amax().max(1.0) {
            return Err(Error::invalid("P is not symmetric"));
        }
        if linalg::sym_min_eigenvalue(&self.p_mat) <= 0.0 {
            return Err(Error::invalid("P is not positive definite"));
        }
        for l in &self.gains {
            if l.nrows() != n {
                return Err(Error::invalid("gain row count must equal state dimension"));
            }
            linalg::ensure_finite(l, "gain")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisOptions {
    /// Required relative margin: every Lyapunov LHS must be below `-epsilon * ||P||`.
    pub epsilon: f64,
    /// Target contraction `rho`; constraints are `(A_i - L C)^T P (A_i - L C) < rho^2 P`.
    pub decay_rate: f64,
    /// Extra slack added to each eigenvalue constraint inside the solver.
    pub slack: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { epsilon: 1e-6, decay_rate: 0.9, slack: 1e-3, max_iter: 20_000, restarts: 4, seed: 7 }
    }
}

impl SynthesisOptions {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::invalid("decay rate must lie in (0, 1]"));
        }
        if !(self.slack >= 0.0) {
            return Err(Error::invalid("slack must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InequalityEntry {
    /// 1-based subset index, or 0 for the positivity condition on P.
    pub subset: usize,
    /// Whether the shifted dynamics `a - d` were used.
    pub shifted: bool,
    /// Largest eigenvalue of the Lyapunov LHS (or of `-P` for the positivity entry).
    pub max_eig: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub entries: Vec<InequalityEntry>,
    pub p_min_eig: f64,
    pub p_norm: f64,
    /// Spectral radii of `a - L_j c_j` and `a - d - L_j c_j`, per subset.
    pub schur_radii: Vec<[f64; 2]>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn worst_lhs(&self) -> f64 {
        self.entries.iter().filter(|e| e.subset > 0).map(|e| e.max_eig).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn margin(&self) -> f64 {
        -self.worst_lhs()
    }

    /// Whether every Lyapunov entry sits below `-rel * ||P||`.
    pub fn holds_with_relative_margin(&self, rel: f64) -> bool {
        self.passed && self.worst_lhs() < -rel * self.p_norm
    }
}

fn lyapunov_lhs(acl: &Mat, p: &Mat) -> Mat {
    linalg::symmetrize(&(acl.transpose() * p * acl - p))
}

fn check_dims(a: &Mat, d: &Mat, catalog: &SubsetCatalog) -> Result<()> {
    let n = a.nrows();
    if !a.is_square() || d.shape() != (n, n) {
        return Err(Error::invalid("a and d must be square of equal size"));
    }
    if catalog.subsets.iter().any(|s| s.c_sub.ncols() != n) {
        return Err(Error::invalid("catalog output rows do not match state dimension"));
    }
    Ok(())
}

pub fn verify_gains(a: &Mat, d: &Mat, catalog: &SubsetCatalog, gains: &GainSet) -> Result<VerificationReport> {
    check_dims(a, d, catalog)?;
    if gains.gains.len() != catalog.len() {
        return Err(Error::invalid(format!(
            "gain set has {} gains for {} subsets",
            gains.gains.len(),
            catalog.len()
        )));
    }
    let p = &gains.p_mat;
    let p_min_eig = linalg::sym_min_eigenvalue(p);
    let mut entries = Vec::with_capacity(2 * catalog.len() + 1);
    let mut schur_radii = Vec::with_capacity(catalog.len());
    let mut passed = p_min_eig > 0.0;
    for (j, (s, l)) in catalog.subsets.iter().zip(&gains.gains).enumerate() {
        if l.shape() != (a.nrows(), s.card()) {
            return Err(Error::invalid(format!("gain {} has wrong shape", j + 1)));
        }
        let lc = l * &s.c_sub;
        let plain = a - &lc;
        let shifted = a - d - &lc;
        let mut radii = [0.0; 2];
        for (k, (acl, is_shifted)) in [(&plain, false), (&shifted, true)].into_iter().enumerate() {
            let max_eig = linalg::sym_max_eigenvalue(&lyapunov_lhs(acl, p));
            passed &= max_eig < 0.0 && max_eig.is_finite();
            radii[k] = linalg::spectral_radius(acl);
            entries.push(InequalityEntry { subset: j + 1, shifted: is_shifted, max_eig });
        }
        passed &= radii[0] < 1.0 && radii[1] < 1.0;
        schur_radii.push(radii);
    }
    entries.push(InequalityEntry { subset: 0, shifted: false, max_eig: -p_min_eig });
    Ok(VerificationReport { entries, p_min_eig, p_norm: linalg::spectral_norm(p), schur_radii, passed })
}

struct Problem<'a> {
    dyns: [Mat; 2],
    cs: Vec<&'a Mat>,
    rho2: f64,
    slack: f64,
}

struct Step {
    violation: f64,
    gp: Mat,
    gz: Vec<Mat>,
}

impl Problem<'_> {
    fn lmi(&self, p: &Mat, z: &Mat, am: &Mat, c: &Mat) -> Mat {
        let n = p.nrows();
        let off = p * am - z.transpose() * c;
        let mut f = Mat::zeros(2 * n, 2 * n);
        f.view_mut((0, 0), (n, n)).copy_from(&(p * -self.rho2));
        f.view_mut((0, n), (n, n)).copy_from(&off);
        f.view_mut((n, 0), (n, n)).copy_from(&off.transpose());
        f.view_mut((n, n), (n, n)).copy_from(&(-p));
        f
    }

    /// Aggregated violation and its subgradient at `(p, zs)`.
    fn evaluate(&self, p: &Mat, zs: &[Mat]) -> Step {
        let n = p.nrows();
        let mut violation = 0.0;
        let mut gp = Mat::zeros(n, n);
        let mut gz: Vec<Mat> = zs.iter().map(|z| Mat::zeros(z.nrows(), z.ncols())).collect();
        for (j, c) in self.cs.iter().enumerate() {
            for am in &self.dyns {
                let (lam, v) = linalg::sym_max_eigenpair(&self.lmi(p, &zs[j], am, c));
                let val = lam + self.slack;
                if val > 0.0 {
                    violation += val;
                    let v1 = v.rows(0, n).into_owned();
                    let v2 = v.rows(n, n).into_owned();
                    let av2 = am * &v2;
                    gp += &v1 * v1.transpose() * -self.rho2 + &v1 * av2.transpose() + &av2 * v1.transpose()
                        - &v2 * v2.transpose();
                    gz[j] -= (*c * &v2) * v1.transpose() * 2.0;
                }
            }
        }
        let (lam, v) = linalg::sym_max_eigenpair(&(Mat::identity(n, n) - p));
        if lam > 0.0 {
            violation += lam;
            gp -= &v * v.transpose();
        }
        Step { violation, gp, gz }
    }

    /// Polyak subgradient descent; returns the final iterate and whether it is feasible.
    fn solve(&self, mut p: Mat, mut zs: Vec<Mat>, max_iter: usize) -> (Mat, Vec<Mat>, bool, usize, f64) {
        let mut best = f64::INFINITY;
        for it in 0..max_iter {
            let step = self.evaluate(&p, &zs);
            if step.violation <= 0.0 {
                return (p, zs, true, it, 0.0);
            }
            best = best.min(step.violation);
            let norm2 = step.gp.norm_squared() + step.gz.iter().map(|g| g.norm_squared()).sum::<f64>();
            if !(norm2 > 0.0) || !norm2.is_finite() {
                break;
            }
            let t = step.violation / norm2;
            p = linalg::symmetrize(&(p - step.gp * t));
            for (z, g) in zs.iter_mut().zip(&step.gz) {
                *z -= g * t;
            }
            if !linalg::all_finite(&p) {
                break;
            }
        }
        (p, zs, false, max_iter, best)
    }
}

/// Solve `a^T X a - X + q = 0` by vectorization.
pub fn discrete_lyapunov(a: &Mat, q: &Mat) -> Option<Mat> {
    let n = a.nrows();
    let at = a.transpose();
    let kron = at.kronecker(&at);
    let lhs = Mat::identity(n * n, n * n) - kron;
    let rhs = linalg::Vector::from_iterator(n * n, q.iter().copied());
    let sol = lhs.lu().solve(&rhs)?;
    Some(linalg::symmetrize(&Mat::from_column_slice(n, n, sol.as_slice())))
}

/// Steady-state Kalman-style observer gain from the filtering Riccati recursion.
pub fn riccati_observer_gain(a: &Mat, c: &Mat) -> Option<Mat> {
    let n = a.nrows();
    let q = Mat::identity(n, n);
    let r = Mat::identity(c.nrows(), c.nrows());
    let mut x = Mat::identity(n, n);
    for _ in 0..10_000 {
        let s = c * &x * c.transpose() + &r;
        let k = &x * c.transpose() * s.clone().try_inverse()?;
        let next = linalg::symmetrize(&(a * (&x - &k * c * &x) * a.transpose() + &q));
        let diff = (&next - &x).amax();
        x = next;
        if !linalg::all_finite(&x) {
            return None;
        }
        if diff < 1e-12 * x.amax().max(1.0) {
            break;
        }
    }
    let s = c * &x * c.transpose() + &r;
    Some(a * &x * c.transpose() * s.try_inverse()?)
}

/// Riccati gains per subset with a common P averaged from the individual
/// Lyapunov solutions of every stable closed loop.
fn riccati_start(a: &Mat, d: &Mat, catalog: &SubsetCatalog) -> Option<(Mat, Vec<Mat>)> {
    let n = a.nrows();
    let mut ls = Vec::with_capacity(catalog.len());
    let mut p_sum = Mat::zeros(n, n);
    let mut count = 0usize;
    for s in &catalog.subsets {
        let l = riccati_observer_gain(a, &s.c_sub)?;
        for acl in [a - &l * &s.c_sub, a - d - &l * &s.c_sub] {
            if linalg::spectral_radius(&acl) < 1.0 {
                if let Some(x) = discrete_lyapunov(&acl, &Mat::identity(n, n)) {
                    p_sum += x;
                    count += 1;
                }
            }
        }
        ls.push(l);
    }
    if count == 0 {
        return None;
    }
    let mut p = p_sum / count as f64;
    let lmin = linalg::sym_min_eigenvalue(&p);
    if !(lmin > 0.0) {
        return None;
    }
    p /= lmin;
    let zs = ls.iter().map(|l| (&p * l).transpose()).collect();
    Some((p, zs))
}

pub fn synthesize_gains(a: &Mat, d: &Mat, catalog: &SubsetCatalog, opts: &SynthesisOptions) -> Result<GainSet> {
    opts.validate()?;
    check_dims(a, d, catalog)?;
    linalg::ensure_finite(a, "a")?;
    linalg::ensure_finite(d, "d")?;
    if catalog.is_empty() {
        return Err(Error::SynthesisImpossible);
    }
    let n = a.nrows();
    let problem = Problem {
        dyns: [a.clone(), a - d],
        cs: catalog.subsets.iter().map(|s| &s.c_sub).collect(),
        rho2: opts.decay_rate * opts.decay_rate,
        slack: opts.slack,
    };

    let mut starts: Vec<(Mat, Vec<Mat>)> = Vec::new();
    starts.push((Mat::identity(n, n), catalog.subsets.iter().map(|s| Mat::zeros(s.card(), n)).collect()));
    if let Some(s) = riccati_start(a, d, catalog) {
        starts.push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.restarts {
        let noise = Mat::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let p = Mat::identity(n, n) * 2.0 + linalg::symmetrize(&noise);
        let zs = catalog.subsets.iter().map(|s| Mat::from_fn(s.card(), n, |_, _| rng.random_range(-1.0..1.0))).collect();
        starts.push((p, zs));
    }

    let mut total_iter = 0;
    let mut best_violation = f64::INFINITY;
    for (p0, z0) in starts {
        let (p, zs, feasible, iters, viol) = problem.solve(p0, z0, opts.max_iter);
        total_iter += iters;
        best_violation = best_violation.min(viol);
        if !feasible {
            continue;
        }
        let Some(p_inv) = p.clone().try_inverse() else { continue };
        let gains: Vec<Mat> = zs.iter().map(|z| &p_inv * z.transpose()).collect();
        let mut set = GainSet { p_mat: p, gains, margin: 0.0, decay_rate: opts.decay_rate };
        let report = verify_gains(a, d, catalog, &set)?;
        if report.holds_with_relative_margin(opts.epsilon) && report.p_min_eig >= opts.epsilon {
            set.margin = report.margin();
            return Ok(set);
        }
        best_violation = best_violation.min(report.worst_lhs().max(0.0));
    }
    Err(Error::SynthesisFailure { iterations: total_iter, best_violation })
}

/// Two-observer error system: the selected observer `j` and the currently
/// published observer `j_max`, coupled through the shifted D term.
#[derive(Clone, Debug)]
pub struct StackedErrorSystem {
    pub a_big: Mat,
    pub l_big: Mat,
}

pub fn assemble_stacked_error(
    a: &Mat,
    d: &Mat,
    catalog: &SubsetCatalog,
    gains: &GainSet,
    j: usize,
    j_max: usize,
    beta: f64,
) -> Result<StackedErrorSystem> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid("beta must lie in [0, 1]"));
    }
    let count = catalog.len();
    if j == 0 || j > count || j_max == 0 || j_max > count || gains.gains.len() != count {
        return Err(Error::invalid("subset index out of range"));
    }
    let n = a.nrows();
    let (sj, sm) = (&catalog.subsets[j - 1], &catalog.subsets[j_max - 1]);
    let (lj, lm) = (&gains.gains[j - 1], &gains.gains[j_max - 1]);
    let coupling = d * (1.0 - beta);
    let mut a_big = Mat::zeros(2 * n, 2 * n);
    a_big.view_mut((0, 0), (n, n)).copy_from(&(a - &coupling - lj * &sj.c_sub));
    a_big.view_mut((0, n), (n, n)).copy_from(&coupling);
    a_big.view_mut((n, n), (n, n)).copy_from(&(a - lm * &sm.c_sub));
    let (cj, cm) = (sj.card(), sm.card());
    let mut l_big = Mat::zeros(2 * n, cj + cm);
    l_big.view_mut((0, 0), (n, cj)).copy_from(lj);
    l_big.view_mut((n, cj), (n, cm)).copy_from(lm);
    Ok(StackedErrorSystem { a_big, l_big })
}
