//! Bank of coupled observers with residual reference models, classification
//! ratios and selection of the most reliable estimate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::catalog::SubsetCatalog;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::lti::{discretize_zoh, ContinuousLti, DiscretePlant};
use crate::synthesis::GainSet;

const DENOM_FLOOR: f64 = 1e-15;

/// Stiffness and damping `(K_r, C_r)` placing the reference-model poles at
/// two distinct negative reals.
pub fn design_reference_params(lambda1: f64, lambda2: f64) -> Result<(f64, f64)> {
    if !(lambda1 < 0.0 && lambda2 < 0.0) || !lambda1.is_finite() || !lambda2.is_finite() {
        return Err(Error::invalid("reference poles must be finite and negative"));
    }
    if lambda1 == lambda2 {
        return Err(Error::invalid("reference poles must be distinct"));
    }
    Ok((lambda1 * lambda2, -(lambda1 + lambda2)))
}

/// Discretized unit-mass spring-damper driven by the residual norm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub k_r: f64,
    pub c_r: f64,
    #[serde(with = "linalg::serde_mat")]
    pub a: Mat,
    pub b: Vec<f64>,
}

impl ReferenceModel {
    pub fn new(k_r: f64, c_r: f64, ts: f64) -> Result<Self> {
        if !(k_r > 0.0 && c_r > 0.0) {
            return Err(Error::invalid("reference stiffness and damping must be positive"));
        }
        let a_c = Mat::from_row_slice(2, 2, &[0.0, 1.0, -k_r, -c_r]);
        let b_c = Mat::from_row_slice(2, 1, &[0.0, k_r]);
        let zoh = discretize_zoh(&ContinuousLti::new(a_c, vec![b_c])?, ts)?;
        let b = zoh.b_blocks[0].column(0).iter().copied().collect();
        Ok(Self { k_r, c_r, a: zoh.a, b })
    }
}

pub fn step_reference_model(state: &[f64; 2], model: &ReferenceModel, r_norm: f64) -> [f64; 2] {
    let a = &model.a;
    [
        a[(0, 0)] * state[0] + a[(0, 1)] * state[1] + model.b[0] * r_norm,
        a[(1, 0)] * state[0] + a[(1, 1)] * state[1] + model.b[1] * r_norm,
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObserverState {
    pub x_hat: Vector,
    pub residual: Vector,
    /// `[eta, eta_dot]`.
    pub ref_state: [f64; 2],
    pub beta_eta: f64,
    pub beta: f64,
}

impl ObserverState {
    pub fn eta(&self) -> f64 {
        self.ref_state[0]
    }
}

#[derive(Clone, Debug)]
pub struct BankState {
    pub observers: Vec<ObserverState>,
    /// 1-based index of the published observer.
    pub selected_j: usize,
    pub x_bar: Vector,
    pub a_beta: f64,
    pub beta_bar_eta: f64,
    pub reference: ReferenceModel,
    pub d_mat: Mat,
    pub catalog: SubsetCatalog,
    pub gains: GainSet,
}

#[allow(clippy::too_many_arguments)]
pub fn init_bank(
    catalog: &SubsetCatalog,
    gains: &GainSet,
    d_mat: &Mat,
    a_beta: f64,
    reference: ReferenceModel,
    x_hat_init: &[Vector],
    beta_init: f64,
) -> Result<BankState> {
    let count = catalog.len();
    if count == 0 {
        return Err(Error::invalid("observer bank needs at least one subset"));
    }
    if !(beta_init > 0.0 && beta_init < 1.0) {
        return Err(Error::invalid("initial beta must lie in (0, 1)"));
    }
    if !(a_beta > 0.0) || !a_beta.is_finite() {
        return Err(Error::invalid("a_beta must be positive"));
    }
    if gains.gains.len() != count || x_hat_init.len() != count {
        return Err(Error::invalid("one gain and one initial estimate per subset are required"));
    }
    let n = gains.p_mat.nrows();
    if d_mat.shape() != (n, n) || x_hat_init.iter().any(|x| x.len() != n) {
        return Err(Error::invalid("observer dimensions do not match"));
    }
    for (s, l) in catalog.subsets.iter().zip(&gains.gains) {
        if l.shape() != (n, s.card()) {
            return Err(Error::invalid("gain shape does not match its subset"));
        }
    }
    let beta_bar_eta = 1.0 - 1.0 / count as f64;
    let observers = catalog
        .subsets
        .iter()
        .zip(x_hat_init)
        .map(|(s, x)| ObserverState {
            x_hat: x.clone(),
            residual: Vector::zeros(s.card()),
            ref_state: [0.0, 0.0],
            beta_eta: beta_bar_eta,
            beta: beta_init,
        })
        .collect();
    Ok(BankState {
        observers,
        selected_j: 1,
        x_bar: x_hat_init[0].clone(),
        a_beta,
        beta_bar_eta,
        reference,
        d_mat: d_mat.clone(),
        catalog: catalog.clone(),
        gains: gains.clone(),
    })
}

/// Classifier terms for a set of residual-model positions.
pub fn classifier_terms(etas: &[f64], noise_floor: f64) -> Vec<f64> {
    let count = etas.len();
    let beta_bar = 1.0 - 1.0 / count as f64;
    let denom: f64 = etas.iter().map(|e| e + noise_floor).sum();
    if denom.abs() < DENOM_FLOOR {
        return vec![beta_bar; count];
    }
    etas.iter().map(|e| 1.0 - (e + noise_floor) / denom).collect()
}

/// Classification ratio from the classifier term.
pub fn classification_ratio(beta_eta: f64, beta_bar_eta: f64, a_beta: f64) -> f64 {
    ((beta_eta - beta_bar_eta) * a_beta).atan() / PI + 0.5
}

/// First index holding the maximum value (1-based).
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best + 1
}

impl BankState {
    pub fn len(&self) -> usize {
        self.observers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observers.is_empty()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.observers.iter().map(|o| o.beta).collect()
    }

    pub fn etas(&self) -> Vec<f64> {
        self.observers.iter().map(|o| o.eta()).collect()
    }

    /// One bank step. `inputs` are the plant inputs applied over the step.
    pub fn step(&mut self, plant: &DiscretePlant, y: &Vector, inputs: &[Vector]) -> Result<()> {
        if y.len() != plant.sensor_count() {
            return Err(Error::invalid("sensor vector has wrong length"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite sensor reading".into()));
        }
        let x_bar_prev = self.x_bar.clone();
        let driven = plant.propagate(&Vector::zeros(plant.n()), inputs)?;
        for (j, obs) in self.observers.iter_mut().enumerate() {
            let subset = &self.catalog.subsets[j];
            let residual = subset.pick(y) - &subset.c_sub * &obs.x_hat;
            let coupling = &self.d_mat * (&x_bar_prev - &obs.x_hat) * (1.0 - obs.beta);
            let next = &plant.a * &obs.x_hat + &driven + &self.gains.gains[j] * &residual + coupling;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("observer {} diverged", j + 1)));
            }
            obs.ref_state = step_reference_model(&obs.ref_state, &self.reference, residual.norm());
            obs.x_hat = next;
            obs.residual = residual;
        }
        let floor = plant.noise_bound_w + plant.noise_bound_gamma;
        let terms = classifier_terms(&self.etas(), floor);
        for (obs, t) in self.observers.iter_mut().zip(terms) {
            obs.beta_eta = t;
            obs.beta = classification_ratio(t, self.beta_bar_eta, self.a_beta);
        }
        self.selected_j = argmax_lowest(&self.betas());
        self.x_bar = self.observers[self.selected_j - 1].x_hat.clone();
        Ok(())
    }
}

pub fn step_bank(bank: &BankState, plant: &DiscretePlant, y: &Vector, inputs: &[Vector]) -> Result<BankState> {
    let mut next = bank.clone();
    next.step(plant, y, inputs)?;
    Ok(next)
}
