//! Exact zero-order-hold discretization and stepping of LTI systems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, ensure_finite, Mat, Vector};

/// Continuous-time system `x' = a_c x + sum_i b_c[i] u_i`.
#[derive(Clone, Debug)]
pub struct ContinuousLti {
    pub a_c: Mat,
    pub b_c_blocks: Vec<Mat>,
}

impl ContinuousLti {
    pub fn new(a_c: Mat, b_c_blocks: Vec<Mat>) -> Result<Self> {
        if !a_c.is_square() {
            return Err(Error::invalid("a_c must be square"));
        }
        ensure_finite(&a_c, "a_c")?;
        for b in &b_c_blocks {
            if b.nrows() != a_c.nrows() {
                return Err(Error::invalid(format!(
                    "input block has {} rows, expected {}",
                    b.nrows(),
                    a_c.nrows()
                )));
            }
            ensure_finite(b, "b_c block")?;
        }
        Ok(Self { a_c, b_c_blocks })
    }

    pub fn n(&self) -> usize {
        self.a_c.nrows()
    }
}

/// The `a` and per-input `b` matrices of a discretized system.
#[derive(Clone, Debug)]
pub struct ZohMatrices {
    pub a: Mat,
    pub b_blocks: Vec<Mat>,
}

/// Exact ZOH discretization: exponentiates `[[a_c*ts, b_c*ts], [0, 0]]` once,
/// so `a` and every `b` block come out of the same matrix exponential.
pub fn discretize_zoh(sys: &ContinuousLti, ts: f64) -> Result<ZohMatrices> {
    if !(ts > 0.0) || !ts.is_finite() {
        return Err(Error::invalid(format!("step size must be positive, got {ts}")));
    }
    ensure_finite(&sys.a_c, "a_c")?;
    let n = sys.n();
    let m: usize = sys.b_c_blocks.iter().map(|b| b.ncols()).sum();
    let mut aug = Mat::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&sys.a_c * ts));
    let mut col = n;
    for b in &sys.b_c_blocks {
        ensure_finite(b, "b_c block")?;
        aug.view_mut((0, col), (n, b.ncols())).copy_from(&(b * ts));
        col += b.ncols();
    }
    let e = aug.exp();
    if !linalg::all_finite(&e) {
        return Err(Error::Numeric("matrix exponential overflowed".into()));
    }
    let a = e.view((0, 0), (n, n)).into_owned();
    let mut b_blocks = Vec::with_capacity(sys.b_c_blocks.len());
    let mut col = n;
    for b in &sys.b_c_blocks {
        b_blocks.push(e.view((0, col), (n, b.ncols())).into_owned());
        col += b.ncols();
    }
    Ok(ZohMatrices { a, b_blocks })
}

/// Discrete plant `x(k+1) = a x + sum b_i u_i + w`, `y = c x + gamma + delta`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscretePlant {
    #[serde(with = "linalg::serde_mat")]
    pub a: Mat,
    #[serde(with = "linalg::serde_mats")]
    pub b_blocks: Vec<Mat>,
    #[serde(with = "linalg::serde_mat")]
    pub c_rows: Mat,
    pub ts: f64,
    pub noise_bound_w: f64,
    pub noise_bound_gamma: f64,
}

impl DiscretePlant {
    pub fn new(
        zoh: ZohMatrices,
        c_rows: Mat,
        ts: f64,
        noise_bound_w: f64,
        noise_bound_gamma: f64,
    ) -> Result<Self> {
        if !(ts > 0.0) {
            return Err(Error::invalid("ts must be positive"));
        }
        if noise_bound_w < 0.0 || noise_bound_gamma < 0.0 {
            return Err(Error::invalid("noise bounds must be non-negative"));
        }
        if c_rows.ncols() != zoh.a.nrows() {
            return Err(Error::invalid("sensor matrix column count must equal state dimension"));
        }
        ensure_finite(&c_rows, "c_rows")?;
        Ok(Self {
            a: zoh.a,
            b_blocks: zoh.b_blocks,
            c_rows,
            ts,
            noise_bound_w,
            noise_bound_gamma,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn sensor_count(&self) -> usize {
        self.c_rows.nrows()
    }

    /// `a x + sum b_i u_i` without noise.
    pub fn propagate(&self, x: &Vector, inputs: &[Vector]) -> Result<Vector> {
        if x.len() != self.n() {
            return Err(Error::invalid(format!("state has length {}, expected {}", x.len(), self.n())));
        }
        if inputs.len() != self.b_blocks.len() {
            return Err(Error::invalid(format!(
                "expected {} input vectors, got {}",
                self.b_blocks.len(),
                inputs.len()
            )));
        }
        let mut next = &self.a * x;
        for (b, u) in self.b_blocks.iter().zip(inputs) {
            if u.len() != b.ncols() {
                return Err(Error::invalid("input vector length does not match its block"));
            }
            next += b * u;
        }
        Ok(next)
    }

    pub fn outputs(&self, x: &Vector) -> Vector {
        &self.c_rows * x
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    pub x: Vector,
    pub k: u64,
}

impl PlantState {
    pub fn new(x: Vector) -> Self {
        Self { x, k: 0 }
    }
}

pub fn step_plant(plant: &DiscretePlant, state: &PlantState, inputs: &[Vector], w: &Vector) -> Result<PlantState> {
    if w.len() != plant.n() {
        return Err(Error::invalid("process noise has wrong length"));
    }
    let x = plant.propagate(&state.x, inputs)? + w;
    Ok(PlantState { x, k: state.k + 1 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchurCheck {
    pub stable: bool,
    pub radius: f64,
}

pub fn is_schur_stable(m: &Mat) -> Result<SchurCheck> {
    if !m.is_square() {
        return Err(Error::invalid("matrix must be square"));
    }
    ensure_finite(m, "matrix")?;
    let radius = linalg::spectral_radius(m);
    Ok(SchurCheck { stable: radius < 1.0, radius })
}
