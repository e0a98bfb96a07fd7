//! Safety, comfort, spectral and detector-reliability summaries of traces.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::catalog::SubsetCatalog;
use crate::error::{Error, Result};

/// Minimum duration for which the weighting filters are considered settled, s.
pub const SETTLING_TIME: f64 = 10.0;
const Q_BAND: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Horizontal whole-body weighting used for ride comfort.
    RideComfort,
    /// Low-frequency weighting used for the motion-sickness dose.
    MotionSickness,
}

/// Analog second-order section `(b2 s^2 + b1 s + b0) / (a2 s^2 + a1 s + a0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalogSection {
    pub num: [f64; 3],
    pub den: [f64; 3],
}

impl AnalogSection {
    pub fn response(&self, f: f64) -> Complex<f64> {
        let s = Complex::new(0.0, 2.0 * PI * f);
        let poly = |c: &[f64; 3]| s * s * c[0] + s * c[1] + c[2];
        poly(&self.num) / poly(&self.den)
    }

    /// Bilinear transform at sampling rate `fs`.
    pub fn bilinear(&self, fs: f64) -> Biquad {
        let k = 2.0 * fs;
        let map = |c: &[f64; 3]| {
            let k2 = c[0] * k * k;
            [k2 + c[1] * k + c[2], 2.0 * (c[2] - k2), k2 - c[1] * k + c[2]]
        };
        let b = map(&self.num);
        let a = map(&self.den);
        Biquad { b: [b[0] / a[0], b[1] / a[0], b[2] / a[0]], a: [1.0, a[1] / a[0], a[2] / a[0]] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Direct-form II transposed filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let (mut z1, mut z2) = (0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b[0] * v + z1;
                z1 = self.b[1] * v - self.a[1] * y + z2;
                z2 = self.b[2] * v - self.a[2] * y;
                y
            })
            .collect()
    }
}

fn w(f: f64) -> f64 {
    2.0 * PI * f
}

fn high_pass(f: f64) -> AnalogSection {
    AnalogSection { num: [1.0, 0.0, 0.0], den: [1.0, w(f) / Q_BAND, w(f) * w(f)] }
}

fn low_pass(f: f64) -> AnalogSection {
    AnalogSection { num: [0.0, 0.0, w(f) * w(f)], den: [1.0, w(f) / Q_BAND, w(f) * w(f)] }
}

/// Analog prototype sections of a weighting.
pub fn analog_sections(weighting: Weighting) -> Vec<AnalogSection> {
    match weighting {
        Weighting::RideComfort => {
            let (f3, f4, q4) = (2.0, 2.0, 0.63);
            vec![
                high_pass(0.4),
                low_pass(100.0),
                AnalogSection {
                    num: [0.0, 1.0 / w(f3), 1.0],
                    den: [1.0 / (w(f4) * w(f4)), 1.0 / (q4 * w(f4)), 1.0],
                },
            ]
        }
        Weighting::MotionSickness => {
            let (f4, q4) = (0.25, 0.86);
            let (f5, q5, f6, q6) = (0.0625, 0.80, 0.1, 0.80);
            vec![
                high_pass(0.08),
                low_pass(0.63),
                AnalogSection { num: [0.0, 0.0, 1.0], den: [1.0 / (w(f4) * w(f4)), 1.0 / (q4 * w(f4)), 1.0] },
                AnalogSection {
                    num: [1.0, w(f5) / q5, w(f5) * w(f5)],
                    den: [1.0, w(f6) / q6, w(f6) * w(f6)],
                },
            ]
        }
    }
}

/// Magnitude of the analog weighting at frequency `f` (Hz).
pub fn analog_gain(weighting: Weighting, f: f64) -> f64 {
    analog_sections(weighting).iter().map(|s| s.response(f)).product::<Complex<f64>>().norm()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSeries {
    pub values: Vec<f64>,
    /// Set when the series is shorter than the filter settling time.
    pub short_series: bool,
}

pub fn weight_acceleration(a_x: &[f64], ts: f64, weighting: Weighting) -> Result<WeightedSeries> {
    if !(ts > 0.0) {
        return Err(Error::invalid("ts must be positive"));
    }
    let mut values = a_x.to_vec();
    for s in analog_sections(weighting) {
        values = s.bilinear(1.0 / ts).filter(&values);
    }
    Ok(WeightedSeries { values, short_series: (a_x.len() as f64) * ts < SETTLING_TIME })
}

/// RMS of a weighted series.
pub fn ride_comfort(weighted: &[f64], _ts: f64) -> f64 {
    rms(weighted)
}

/// Square root of the time integral of the squared weighted series.
pub fn msdv(weighted: &[f64], ts: f64) -> f64 {
    (weighted.iter().map(|v| v * v).sum::<f64>() * ts).sqrt()
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComfortReport {
    /// Axis-weighted ride-comfort value `k_x * RMS(a_wd)`, m/s^2.
    pub rc: f64,
    /// Motion-sickness dose, m/s^1.5.
    pub msdv_x: f64,
    pub k_x: f64,
    pub short_series: bool,
    #[serde(skip)]
    pub weighted_accel_trace: Vec<f64>,
}

pub fn comfort_report(a_x: &[f64], ts: f64, k_x: f64) -> Result<ComfortReport> {
    if !(k_x >= 0.0) {
        return Err(Error::invalid("axis factor must be non-negative"));
    }
    let wd = weight_acceleration(a_x, ts, Weighting::RideComfort)?;
    let wf = weight_acceleration(a_x, ts, Weighting::MotionSickness)?;
    Ok(ComfortReport {
        rc: k_x * ride_comfort(&wd.values, ts),
        msdv_x: msdv(&wf.values, ts),
        k_x,
        short_series: wd.short_series,
        weighted_accel_trace: wd.values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub nc: usize,
    pub rms_e: f64,
    pub min_distance: f64,
}

/// Number of separate excursions of `d` below zero.
pub fn count_collisions(d: &[f64]) -> usize {
    let mut count = 0;
    let mut below = false;
    for &v in d {
        if v < 0.0 && !below {
            count += 1;
        }
        below = v < 0.0;
    }
    count
}

pub fn safety_summary(e: &[f64], d: &[f64]) -> SafetyReport {
    SafetyReport {
        nc: count_collisions(d),
        rms_e: rms(e),
        min_distance: d.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
    /// False positives with no grace window applied.
    pub fp_raw: usize,
    /// Number of on/off transitions of the active attack set.
    pub edges: usize,
    pub grace_steps: usize,
}

impl ReliabilityReport {
    pub fn fp_per_edge(&self) -> f64 {
        if self.edges == 0 {
            0.0
        } else {
            self.fp_raw as f64 / self.edges as f64
        }
    }
}

fn selection_is_compromised(selected: usize, psi: &[usize], catalog: &SubsetCatalog) -> bool {
    if psi.is_empty() || selected == 0 || selected > catalog.len() {
        return false;
    }
    let clean_exists = catalog.subsets.iter().any(|s| s.is_disjoint_from(psi));
    clean_exists && !catalog.subsets[selected - 1].is_disjoint_from(psi)
}

/// Interval-level detector scores.
///
/// `scheduled` is the ground-truth attacked set per step and `active` the set
/// whose signal is switched on; steps within `grace` steps of a change in
/// either are not scored.
pub fn reliability_summary(
    selected: &[usize],
    scheduled: &[Vec<usize>],
    active: &[Vec<usize>],
    catalog: &SubsetCatalog,
    grace: usize,
) -> Result<ReliabilityReport> {
    if selected.len() != scheduled.len() || selected.len() != active.len() {
        return Err(Error::invalid("reliability traces are not aligned"));
    }
    let (mut tp, mut fp, mut fp_raw, mut edges) = (0, 0, 0, 0);
    let mut since_change = usize::MAX;
    for k in 0..selected.len() {
        if k > 0 && (scheduled[k] != scheduled[k - 1] || active[k] != active[k - 1]) {
            since_change = 0;
            if active[k] != active[k - 1] {
                edges += 1;
            }
        }
        let bad = selection_is_compromised(selected[k], &scheduled[k], catalog);
        if bad {
            fp_raw += 1;
        }
        if since_change >= grace {
            if bad {
                fp += 1;
            } else {
                tp += 1;
            }
        }
        since_change = since_change.saturating_add(1);
    }
    let f1 = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp as f64 + fp as f64) };
    Ok(ReliabilityReport { tp, tn: tp, fp, fn_: fp, f1, fp_raw, edges, grace_steps: grace })
}

/// Steps from `onset` until the selected subset is disjoint from the attacked set.
pub fn detection_latency(selected: &[usize], scheduled: &[Vec<usize>], catalog: &SubsetCatalog, onset: usize) -> Option<usize> {
    (onset..selected.len())
        .find(|&k| !selection_is_compromised(selected[k], &scheduled[k], catalog))
        .map(|k| k - onset)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freq: Vec<f64>,
    pub amp: Vec<f64>,
}

impl Spectrum {
    pub fn peak(&self) -> f64 {
        self.amp.iter().copied().fold(0.0, f64::max)
    }
}

/// Hann-windowed single-sided amplitude spectrum.
pub fn amplitude_spectrum(x: &[f64], ts: f64) -> Result<Spectrum> {
    let n = x.len();
    if n < 256 {
        return Err(Error::invalid(format!("spectrum needs at least 256 samples, got {n}")));
    }
    if !(ts > 0.0) {
        return Err(Error::invalid("ts must be positive"));
    }
    let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
    let wsum: f64 = window.iter().sum();
    let mut buf: Vec<Complex<f64>> = x.iter().zip(&window).map(|(v, w)| Complex::new(v * w, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bins = n / 2 + 1;
    let freq = (0..bins).map(|i| i as f64 / (n as f64 * ts)).collect();
    let amp = (0..bins)
        .map(|i| {
            let scale = if i == 0 || (n.is_multiple_of(2) && i == n / 2) { 1.0 } else { 2.0 };
            scale * buf[i].norm() / wsum
        })
        .collect();
    Ok(Spectrum { freq, amp })
}
