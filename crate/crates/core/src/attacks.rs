//! False-data-injection attack signals, measurement noise and their schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    White,
    WhiteOnoff,
    Step,
    StepOnoff,
}

impl AttackKind {
    pub fn is_gated(self) -> bool {
        matches!(self, AttackKind::WhiteOnoff | AttackKind::StepOnoff)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    /// 1-based sensor indices.
    pub targets: Vec<usize>,
    pub kind: AttackKind,
    /// Per-sensor RMS in the sensor's own units.
    pub rms: f64,
    /// `[t_start, t_end)` in seconds.
    pub window: [f64; 2],
    /// Stream offset mixed into the run seed.
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    pub fn validate(&self, sensors: usize) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::InvalidConfig("attack targets must be non-empty".into()));
        }
        if self.targets.iter().any(|&t| t == 0 || t > sensors) {
            return Err(Error::InvalidConfig(format!("attack target outside 1..={sensors}")));
        }
        if !(self.rms >= 0.0) || !self.rms.is_finite() {
            return Err(Error::InvalidConfig("attack rms must be finite and non-negative".into()));
        }
        if !(self.window[0] < self.window[1]) {
            return Err(Error::InvalidConfig("attack window must satisfy start < end".into()));
        }
        Ok(())
    }

    /// Whether the attack is scheduled at `k`; a zero-RMS attack never is.
    pub fn in_window(&self, k: u64, ts: f64) -> bool {
        self.rms > 0.0 && in_interval(self.window, k, ts)
    }

    /// Bound on `|delta|` for this spec.
    pub fn bound(&self) -> f64 {
        match self.kind {
            AttackKind::White | AttackKind::WhiteOnoff => 3f64.sqrt() * self.rms,
            AttackKind::Step | AttackKind::StepOnoff => self.rms,
        }
    }
}

fn in_interval(w: [f64; 2], k: u64, ts: f64) -> bool {
    let t = k as f64 * ts;
    t + TIME_EPS >= w[0] && t + TIME_EPS < w[1]
}

/// On-off activation: active during odd seconds.
pub fn gate_active(k: u64, ts: f64) -> bool {
    ((k as f64 * ts + TIME_EPS).floor() as u64) % 2 == 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stream {
    Attack = 1,
    Noise = 2,
}

/// Counter-based uniform sample on `[-1, 1)` keyed by `(seed, stream, vehicle, slot, sensor, k)`.
fn keyed_uniform(seed: u64, stream: Stream, vehicle: usize, slot: usize, sensor: usize, k: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = ((stream as u64) << 56) | ((vehicle as u64 & 0xff) << 48) | ((slot as u64 & 0xffff) << 32) | sensor as u64;
    rng.set_stream(id);
    rng.set_word_pos(u128::from(k) * 2);
    rng.random_range(-1.0..1.0)
}

fn mix(seed: u64, offset: u64) -> u64 {
    seed ^ offset.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Attack value on `sensor` at step `k` (0 outside the window or gate).
pub fn sample_attack(spec: &AttackSpec, sensor: usize, k: u64, ts: f64, seed: u64, vehicle: usize) -> f64 {
    if !spec.in_window(k, ts) || !spec.targets.contains(&sensor) {
        return 0.0;
    }
    if spec.kind.is_gated() && !gate_active(k, ts) {
        return 0.0;
    }
    match spec.kind {
        AttackKind::Step | AttackKind::StepOnoff => spec.rms,
        AttackKind::White | AttackKind::WhiteOnoff => {
            let u = keyed_uniform(mix(seed, spec.seed), Stream::Attack, vehicle, 0, sensor, k);
            3f64.sqrt() * spec.rms * u
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackTimeline {
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    /// Intervals `[start, end)` in which measurement noise is injected.
    #[serde(default)]
    pub noise_windows: Vec<[f64; 2]>,
    /// Per-sensor noise amplitude inside the windows.
    #[serde(default)]
    pub noise_bound: f64,
    /// Follower (0 = vehicle 2) whose sensors are attacked.
    #[serde(default)]
    pub target_vehicle: usize,
    #[serde(default)]
    pub noise_scope: NoiseScope,
}

/// Which followers receive the sensor noise of the timeline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScope {
    /// Only the attacked follower.
    #[default]
    Target,
    /// Every follower, each with its own realization.
    All,
}

impl AttackTimeline {
    pub fn validate(&self, sensors: usize) -> Result<()> {
        for a in &self.attacks {
            a.validate(sensors)?;
        }
        for (i, a) in self.attacks.iter().enumerate() {
            for b in &self.attacks[i + 1..] {
                let overlap = a.window[0] < b.window[1] && b.window[0] < a.window[1];
                if overlap && a.targets.iter().any(|t| b.targets.contains(t)) {
                    return Err(Error::InvalidConfig("attacks overlap on the same sensor".into()));
                }
            }
        }
        if !(self.noise_bound >= 0.0) {
            return Err(Error::InvalidConfig("noise bound must be non-negative".into()));
        }
        if self.noise_windows.iter().any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidConfig("noise window must satisfy start < end".into()));
        }
        Ok(())
    }

    pub fn noise_active(&self, k: u64, ts: f64) -> bool {
        self.noise_windows.iter().any(|w| in_interval(*w, k, ts))
    }

    /// Scheduled attacked sensors (gate state ignored), sorted.
    pub fn scheduled(&self, k: u64, ts: f64) -> Vec<usize> {
        let mut psi: Vec<usize> =
            self.attacks.iter().filter(|a| a.in_window(k, ts)).flat_map(|a| a.targets.iter().copied()).collect();
        psi.sort_unstable();
        psi.dedup();
        psi
    }

    /// Sensors whose attack signal is switched on at `k`, sorted.
    pub fn active(&self, k: u64, ts: f64) -> Vec<usize> {
        let mut psi: Vec<usize> = self
            .attacks
            .iter()
            .filter(|a| a.in_window(k, ts) && (!a.kind.is_gated() || gate_active(k, ts)))
            .flat_map(|a| a.targets.iter().copied())
            .collect();
        psi.sort_unstable();
        psi.dedup();
        psi
    }

    /// Copy with every attack RMS replaced by `rms`.
    pub fn with_rms(&self, rms: f64) -> Self {
        let mut t = self.clone();
        for a in &mut t.attacks {
            a.rms = rms;
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub y: Vector,
    pub gamma: Vector,
    pub delta: Vector,
    /// Scheduled attacked set (ground truth for metrics only).
    pub psi: Vec<usize>,
}

/// Corrupt clean sensor values of follower `vehicle` at step `k`.
pub fn apply_timeline(timeline: &AttackTimeline, k: u64, ts: f64, y_clean: &Vector, seed: u64, vehicle: usize) -> Measurement {
    let p = y_clean.len();
    let mut gamma = Vector::zeros(p);
    let noisy = timeline.noise_scope == NoiseScope::All || vehicle == timeline.target_vehicle;
    if noisy && timeline.noise_bound > 0.0 && timeline.noise_active(k, ts) {
        for i in 0..p {
            gamma[i] = timeline.noise_bound * keyed_uniform(seed, Stream::Noise, vehicle, 0, i + 1, k);
        }
    }
    let mut delta = Vector::zeros(p);
    let mut psi = Vec::new();
    if vehicle == timeline.target_vehicle {
        for spec in &timeline.attacks {
            for &s in &spec.targets {
                if s <= p {
                    delta[s - 1] += sample_attack(spec, s, k, ts, seed, vehicle);
                }
            }
        }
        psi = timeline.scheduled(k, ts);
    }
    Measurement { y: y_clean + &gamma + &delta, gamma, delta, psi }
}
