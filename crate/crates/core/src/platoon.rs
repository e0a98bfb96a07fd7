//! CACC closed-loop vehicle model, sensor suite, lead-vehicle profiles and
//! chain stepping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::lti::{discretize_zoh, ContinuousLti, DiscretePlant};

/// Number of states per follower: `[e, v, a, dv, a_lead]`.
pub const STATES: usize = 5;
/// Number of sensors per follower.
pub const SENSORS: usize = 9;
/// State index each sensor measures (0-based).
pub const SENSOR_STATE: [usize; SENSORS] = [0, 1, 2, 3, 4, 0, 1, 0, 1];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaccParams {
    /// Time headway, s.
    pub h: f64,
    /// Driveline time constant, s.
    pub tau: f64,
    pub kp: f64,
    pub kd: f64,
    pub kdd: f64,
    /// Standstill distance, m.
    pub s_standstill: f64,
    /// Sampling step, s.
    pub ts: f64,
}

impl Default for CaccParams {
    fn default() -> Self {
        Self { h: 0.5, tau: 0.1, kp: 0.2, kd: 0.7, kdd: 0.5, s_standstill: 1.0, ts: 0.1 }
    }
}

impl CaccParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.h, self.tau, self.kp, self.kd, self.kdd, self.s_standstill, self.ts];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("controller parameters must be finite".into()));
        }
        if self.h <= 0.0 || self.tau <= 0.0 || self.ts <= 0.0 {
            return Err(Error::InvalidConfig("h, tau and ts must be positive".into()));
        }
        if self.kp <= 0.0 || self.kd <= 0.0 || self.kdd <= -1.0 {
            return Err(Error::InvalidConfig("gains require kp > 0, kd > 0, kdd > -1".into()));
        }
        if (1.0 + self.kdd) * self.kd <= self.tau * self.kp {
            return Err(Error::InvalidConfig(format!(
                "(1 + kdd) kd = {} must exceed tau kp = {}",
                (1.0 + self.kdd) * self.kd,
                self.tau * self.kp
            )));
        }
        Ok(())
    }

    /// Pole of the controller's first-order filter.
    pub fn filter_pole(&self) -> f64 {
        (-self.ts / self.h).exp()
    }

    /// Continuous model with input blocks `[predecessor command, own command]`.
    pub fn continuous_model(&self) -> Result<ContinuousLti> {
        let (h, tau) = (self.h, self.tau);
        #[rustfmt::skip]
        let a_c = Mat::from_row_slice(5, 5, &[
            0.0, 0.0, -h, 1.0, 0.0,
            0.0, 0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, -1.0 / tau, 0.0, 0.0,
            0.0, 0.0, -1.0, 0.0, 1.0,
            0.0, 0.0, 0.0, 0.0, -1.0 / tau,
        ]);
        let mut b1 = Mat::zeros(5, 1);
        b1[(4, 0)] = 1.0 / tau;
        let mut b2 = Mat::zeros(5, 1);
        b2[(2, 0)] = 1.0 / tau;
        ContinuousLti::new(a_c, vec![b1, b2])
    }
}

/// The 9x5 sensor matrix.
pub fn sensor_matrix() -> Mat {
    let mut c = Mat::zeros(SENSORS, STATES);
    for (row, &col) in SENSOR_STATE.iter().enumerate() {
        c[(row, col)] = 1.0;
    }
    c
}

/// Discretized closed-loop follower plant.
pub fn build_closed_loop(params: &CaccParams, noise_bound_w: f64, noise_bound_gamma: f64) -> Result<DiscretePlant> {
    params.validate()?;
    let zoh = discretize_zoh(&params.continuous_model()?, params.ts)?;
    DiscretePlant::new(zoh, sensor_matrix(), params.ts, noise_bound_w, noise_bound_gamma)
}

/// Controller signal `xi` and the next filter output `u_l(k+1)`.
pub fn controller_update(u_l: f64, x_bar: &Vector, u_prev_vehicle: f64, params: &CaccParams) -> (f64, f64) {
    let r = params.h / params.tau;
    let xi = params.kp * x_bar[0]
        + params.kd * (x_bar[3] - params.h * x_bar[2])
        + params.kdd * (x_bar[4] + (r - 1.0) * x_bar[2] - r * u_l)
        + u_prev_vehicle;
    let pole = params.filter_pole();
    (xi, pole * u_l + (1.0 - pole) * xi)
}

/// Pseudo-state built by averaging redundant raw sensors.
pub fn sensor_average_fallback(y: &Vector) -> Vector {
    Vector::from_vec(vec![
        (y[0] + y[5] + y[7]) / 3.0,
        (y[1] + y[6] + y[8]) / 3.0,
        y[2],
        y[3],
        y[4],
    ])
}

/// Following distance `d = e + s + h v`.
pub fn following_distance(x: &Vector, params: &CaccParams) -> f64 {
    x[0] + params.s_standstill + params.h * x[1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleNode {
    pub x: Vector,
    /// Controller filter state `u_l`, m/s^2.
    pub u: f64,
    /// Last controller signal `xi_l`, m/s^2.
    pub xi: f64,
}

impl VehicleNode {
    pub fn new(x: Vector) -> Self {
        Self { x, u: 0.0, xi: 0.0 }
    }
}

/// Speed-tracking braking events for the lead vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrakingProfile {
    /// Event start times, s.
    pub events: Vec<f64>,
    pub low_speed: f64,
    pub hold: f64,
    pub high_speed: f64,
    /// Proportional speed-tracking gain, 1/s.
    pub gain: f64,
    /// Command saturation, m/s^2.
    pub max_accel: f64,
    /// Speed band that counts as having reached a target, m/s.
    pub speed_tol: f64,
}

impl Default for BrakingProfile {
    fn default() -> Self {
        Self {
            events: vec![300.0, 900.0, 1500.0],
            low_speed: 30.0,
            hold: 100.0,
            high_speed: 50.4,
            gain: 1.0,
            max_accel: 0.75,
            speed_tol: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LeadProfile {
    /// `amplitude * exp(-rate * k)`.
    ExpDecay { amplitude: f64, rate: f64 },
    /// Exponential-decay baseline with superimposed braking events.
    Braking { amplitude: f64, rate: f64, braking: BrakingProfile },
}

impl Default for LeadProfile {
    fn default() -> Self {
        LeadProfile::ExpDecay { amplitude: 2.0, rate: 0.01 }
    }
}

impl LeadProfile {
    pub fn baseline(&self, k: u64) -> f64 {
        match self {
            LeadProfile::ExpDecay { amplitude, rate } | LeadProfile::Braking { amplitude, rate, .. } => {
                amplitude * (-rate * k as f64).exp()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BrakingPhase {
    Cruise,
    Braking,
    Holding { until_k: u64 },
    Recovering,
}

/// Lead vehicle modelled as `[v, a]` with the same driveline lag as the followers.
#[derive(Clone, Debug)]
pub struct LeadVehicle {
    pub v: f64,
    pub a: f64,
    pub profile: LeadProfile,
    pub phase: BrakingPhase,
    next_event: usize,
    a_d: Mat,
    b_d: Mat,
    ts: f64,
}

impl LeadVehicle {
    pub fn new(v0: f64, profile: LeadProfile, params: &CaccParams) -> Result<Self> {
        let a_c = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0 / params.tau]);
        let b_c = Mat::from_row_slice(2, 1, &[0.0, 1.0 / params.tau]);
        let zoh = discretize_zoh(&ContinuousLti::new(a_c, vec![b_c])?, params.ts)?;
        if let LeadProfile::Braking { braking, .. } = &profile {
            if braking.gain <= 0.0 || braking.max_accel <= 0.0 || braking.hold < 0.0 || braking.speed_tol <= 0.0 {
                return Err(Error::InvalidConfig("braking gain, saturation, hold and tolerance must be positive".into()));
            }
        }
        Ok(Self {
            v: v0,
            a: 0.0,
            profile,
            phase: BrakingPhase::Cruise,
            next_event: 0,
            a_d: zoh.a,
            b_d: zoh.b_blocks.into_iter().next().expect("one input block"),
            ts: params.ts,
        })
    }

    fn track(&self, target: f64, b: &BrakingProfile) -> f64 {
        (b.gain * (target - self.v)).clamp(-b.max_accel, b.max_accel)
    }

    /// Command `u_1(k)`; advances the braking state machine.
    pub fn command(&mut self, k: u64) -> f64 {
        let base = self.profile.baseline(k);
        let LeadProfile::Braking { braking, .. } = &self.profile else {
            return base;
        };
        let b = braking.clone();
        let t = k as f64 * self.ts;
        if self.phase == BrakingPhase::Cruise && self.next_event < b.events.len() && t + 1e-9 >= b.events[self.next_event] {
            self.next_event += 1;
            self.phase = BrakingPhase::Braking;
        }
        loop {
            match self.phase {
                BrakingPhase::Cruise => return base,
                BrakingPhase::Braking => {
                    if (self.v - b.low_speed).abs() <= b.speed_tol {
                        let until_k = k + (b.hold / self.ts).round() as u64;
                        self.phase = BrakingPhase::Holding { until_k };
                        continue;
                    }
                    return self.track(b.low_speed, &b);
                }
                BrakingPhase::Holding { until_k } => {
                    if k >= until_k {
                        self.phase = BrakingPhase::Recovering;
                        continue;
                    }
                    return self.track(b.low_speed, &b);
                }
                BrakingPhase::Recovering => {
                    if (self.v - b.high_speed).abs() <= b.speed_tol {
                        self.phase = BrakingPhase::Cruise;
                        continue;
                    }
                    return self.track(b.high_speed, &b);
                }
            }
        }
    }

    pub fn step(&mut self, u1: f64) {
        let x = Vector::from_vec(vec![self.v, self.a]);
        let next = &self.a_d * x + &self.b_d * u1;
        self.v = next[0];
        self.a = next[1];
    }
}

/// Estimation hook for each follower: produces the state estimate fed to the
/// controller and observes the inputs that were applied over the step.
pub trait FollowerSensing {
    /// Estimate for follower `idx` (0 = vehicle 2) at step `k`.
    fn estimate(&mut self, idx: usize, k: u64, node: &VehicleNode) -> Result<Vector>;

    /// Inputs `[predecessor command, own command]` applied over step `k`.
    fn advance(&mut self, idx: usize, k: u64, inputs: &[Vector]) -> Result<()>;
}

/// Controller driven by the exact state (no sensors).
pub struct PerfectSensing;

impl FollowerSensing for PerfectSensing {
    fn estimate(&mut self, _: usize, _: u64, node: &VehicleNode) -> Result<Vector> {
        Ok(node.x.clone())
    }

    fn advance(&mut self, _: usize, _: u64, _: &[Vector]) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlatoonConfig {
    /// Total vehicles including the lead.
    pub m_vehicles: usize,
    pub params: CaccParams,
    pub lead_profile: LeadProfile,
    /// Initial state of vehicle 2; later followers start on the equilibrium
    /// `[0, v, 0, 0, 0]` with the same speed.
    pub initial: [f64; STATES],
}

impl Default for PlatoonConfig {
    fn default() -> Self {
        Self {
            m_vehicles: 2,
            params: CaccParams::default(),
            lead_profile: LeadProfile::default(),
            initial: [0.1, 30.0, 0.0, 0.5, 0.0],
        }
    }
}

impl PlatoonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_vehicles < 2 {
            return Err(Error::InvalidConfig("a platoon needs at least two vehicles".into()));
        }
        if self.initial.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("initial state must be finite".into()));
        }
        self.params.validate()
    }

    pub fn initial_states(&self) -> Vec<Vector> {
        let first = Vector::from_row_slice(&self.initial);
        let mut out = vec![first];
        for _ in 2..self.m_vehicles {
            out.push(Vector::from_vec(vec![0.0, self.initial[1], 0.0, 0.0, 0.0]));
        }
        out
    }
}

/// Multi-vehicle chain: a lead vehicle plus `m - 1` followers sharing one plant model.
#[derive(Clone, Debug)]
pub struct Platoon {
    pub params: CaccParams,
    pub plant: DiscretePlant,
    pub lead: LeadVehicle,
    pub followers: Vec<VehicleNode>,
    pub k: u64,
}

/// Commands exchanged during one chain step.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainStep {
    /// Lead command `u_1(k)`.
    pub lead_cmd: f64,
    /// Command each follower applied over the step.
    pub applied: Vec<f64>,
}

impl Platoon {
    pub fn new(config: &PlatoonConfig, plant: DiscretePlant) -> Result<Self> {
        config.validate()?;
        if plant.n() != STATES || plant.b_blocks.len() != 2 {
            return Err(Error::invalid("plant is not a follower closed loop"));
        }
        let states = config.initial_states();
        let v_lead = config.initial[1] + config.initial[3];
        Ok(Self {
            params: config.params,
            plant,
            lead: LeadVehicle::new(v_lead, config.lead_profile.clone(), &config.params)?,
            followers: states.into_iter().map(VehicleNode::new).collect(),
            k: 0,
        })
    }

    /// Advance every vehicle by one step, front to back.
    pub fn step_chain<S: FollowerSensing + ?Sized>(&mut self, sensing: &mut S) -> Result<ChainStep> {
        let k = self.k;
        let lead_cmd = self.lead.command(k);
        let mut prev = lead_cmd;
        let mut applied = Vec::with_capacity(self.followers.len());
        for idx in 0..self.followers.len() {
            let node = &self.followers[idx];
            let x_bar = sensing.estimate(idx, k, node)?;
            if x_bar.len() != STATES || x_bar.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite estimate for vehicle {} at step {k}", idx + 2)));
            }
            let (xi, u_next) = controller_update(node.u, &x_bar, prev, &self.params);
            let inputs = [Vector::from_element(1, prev), Vector::from_element(1, u_next)];
            sensing.advance(idx, k, &inputs)?;
            let x_next = self.plant.propagate(&node.x, &inputs)?;
            if x_next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("plant state diverged at step {k}")));
            }
            let node = &mut self.followers[idx];
            node.x = x_next;
            node.u = u_next;
            node.xi = xi;
            applied.push(u_next);
            prev = u_next;
        }
        self.lead.step(lead_cmd);
        self.k += 1;
        Ok(ChainStep { lead_cmd, applied })
    }
}
