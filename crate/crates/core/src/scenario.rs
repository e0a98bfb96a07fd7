//! Configuration-driven scenario runs: plant, catalog, gains, observer bank,
//! attacks and metrics wired together.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{apply_timeline, AttackTimeline, Measurement};
use crate::bank::{design_reference_params, init_bank, BankState, ReferenceModel};
use crate::catalog::{build_catalog, CatalogSummary, SubsetCatalog};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::lti::DiscretePlant;
use crate::metrics::{
    amplitude_spectrum, comfort_report, reliability_summary, safety_summary, weight_acceleration, ComfortReport,
    ReliabilityReport, SafetyReport, Spectrum, Weighting,
};
use crate::platoon::{build_closed_loop, following_distance, sensor_average_fallback, FollowerSensing, Platoon, PlatoonConfig, VehicleNode};
use crate::synthesis::{build_d_matrix, synthesize_gains, verify_gains, GainSet, SynthesisOptions, VerificationReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// Averaged raw sensors, attacks removed.
    InsecureNoAttack,
    /// Averaged raw sensors under the configured attacks.
    InsecureWithAttack,
    /// Observer-bank estimate, attacks removed.
    SecuredNoAttack,
    /// Observer-bank estimate under the configured attacks.
    SecuredWithAttack,
}

impl Condition {
    pub fn is_secured(self) -> bool {
        matches!(self, Condition::SecuredNoAttack | Condition::SecuredWithAttack)
    }

    pub fn has_attack(self) -> bool {
        matches!(self, Condition::InsecureWithAttack | Condition::SecuredWithAttack)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Critical,
    VeryUncomfortable,
    Uncomfortable,
}

impl Severity {
    pub fn rms(self) -> f64 {
        match self {
            Severity::Critical => 300.0,
            Severity::VeryUncomfortable => 150.0,
            Severity::Uncomfortable => 15.0,
        }
    }

    pub const ALL: [Severity; 3] = [Severity::Critical, Severity::VeryUncomfortable, Severity::Uncomfortable];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverConfig {
    pub a_beta: f64,
    pub beta_init: f64,
    /// Continuous poles of the residual reference model.
    pub ref_poles: [f64; 2],
    pub noise_bound_w: f64,
    pub noise_bound_gamma: f64,
    /// Half-width of the uniform spread of initial observer states around the true state.
    pub init_spread: f64,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self { a_beta: 1000.0, beta_init: 0.5, ref_poles: [-1.0, -2.0], noise_bound_w: 0.0, noise_bound_gamma: 1e-3, init_spread: 0.1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub condition: Condition,
    /// Overrides every attack RMS when set.
    #[serde(default)]
    pub severity: Option<Severity>,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gains_path: Option<String>,
    /// Axis factor applied to the ride-comfort RMS.
    #[serde(default = "default_k_x")]
    pub k_x: f64,
    /// Steps after each attack transition excluded from reliability scoring.
    #[serde(default = "default_grace")]
    pub grace_steps: usize,
    #[serde(default)]
    pub platoon: PlatoonConfig,
    #[serde(default)]
    pub observer: ObserverConfig,
    #[serde(default)]
    pub synthesis: SynthesisOptions,
    #[serde(default)]
    pub timeline: AttackTimeline,
}

fn default_k_x() -> f64 {
    1.4
}

fn default_grace() -> usize {
    2
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: ScenarioConfig = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::InvalidConfig("duration must be positive".into()));
        }
        self.platoon.validate()?;
        if self.timeline.target_vehicle + 1 >= self.platoon.m_vehicles {
            return Err(Error::InvalidConfig("attack target vehicle is not a follower".into()));
        }
        self.timeline.validate(crate::platoon::SENSORS)?;
        let o = &self.observer;
        if !(o.a_beta > 0.0) || !(o.beta_init > 0.0 && o.beta_init < 1.0) || !(o.init_spread >= 0.0) {
            return Err(Error::InvalidConfig("observer a_beta > 0, beta_init in (0,1), init_spread >= 0 required".into()));
        }
        if !(o.noise_bound_w >= 0.0 && o.noise_bound_gamma >= 0.0) {
            return Err(Error::InvalidConfig("observer noise bounds must be non-negative".into()));
        }
        design_reference_params(o.ref_poles[0], o.ref_poles[1]).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if !(self.k_x >= 0.0) {
            return Err(Error::InvalidConfig("k_x must be non-negative".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        (self.duration / self.platoon.params.ts).round() as u64
    }

    /// Timeline actually applied: attacks dropped for no-attack conditions and
    /// RMS overridden by the severity level.
    pub fn effective_timeline(&self) -> AttackTimeline {
        let mut t = self.timeline.clone();
        if !self.condition.has_attack() {
            t.attacks.clear();
        } else if let Some(s) = self.severity {
            t = t.with_rms(s.rms());
        }
        t
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// Offline design shared by every run of a configuration.
#[derive(Clone, Debug)]
pub struct Design {
    pub plant: DiscretePlant,
    pub catalog: SubsetCatalog,
    pub d_mat: Mat,
    pub gains: GainSet,
    pub verification: VerificationReport,
}

pub fn build_plant(config: &ScenarioConfig) -> Result<DiscretePlant> {
    build_closed_loop(&config.platoon.params, config.observer.noise_bound_w, config.observer.noise_bound_gamma)
}

/// Build the design, synthesizing gains when none are supplied.
pub fn prepare_design(config: &ScenarioConfig, gains: Option<GainSet>) -> Result<Design> {
    let plant = build_plant(config)?;
    let catalog = build_catalog(&plant.a, &plant.c_rows)?;
    let d_mat = build_d_matrix(&plant.a);
    let gains = match gains {
        Some(g) => g,
        None => synthesize_gains(&plant.a, &d_mat, &catalog, &config.synthesis)?,
    };
    gains.validate()?;
    let verification = verify_gains(&plant.a, &d_mat, &catalog, &gains)?;
    if !verification.passed {
        return Err(Error::Numeric("supplied gains fail verification for this plant".into()));
    }
    Ok(Design { plant, catalog, d_mat, gains, verification })
}

/// Persisted gains with the audit trail.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GainFile {
    #[serde(flatten)]
    pub gains: GainSet,
    pub catalog: CatalogSummary,
    pub verification: VerificationReport,
}

pub fn synth_command(config: &ScenarioConfig) -> Result<GainFile> {
    let design = prepare_design(config, None)?;
    Ok(GainFile { gains: design.gains, catalog: design.catalog.summary(), verification: design.verification })
}

pub fn load_gains(path: impl AsRef<Path>) -> Result<GainSet> {
    let text = std::fs::read_to_string(path.as_ref())?;
    GainSet::from_json(&text)
}

/// Per-step trace of one follower.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub x: Vec<[f64; 5]>,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub x_bar: Vec<[f64; 5]>,
    pub selected_j: Vec<usize>,
    pub beta: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub psi: Vec<Vec<usize>>,
    pub active: Vec<Vec<usize>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn column(&self, state: usize) -> Vec<f64> {
        self.x.iter().map(|x| x[state]).collect()
    }

    pub fn spacing_error(&self) -> Vec<f64> {
        self.column(0)
    }

    pub fn acceleration(&self) -> Vec<f64> {
        self.column(2)
    }
}

/// Spacing error, acceleration and distance of every follower.
#[derive(Clone, Debug, Default)]
pub struct VehicleSeries {
    pub e: Vec<f64>,
    pub a: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub name: String,
    pub condition: Condition,
    pub severity: Option<Severity>,
    pub seed: u64,
    pub config_hash: String,
    pub steps: u64,
    pub wall_time_s: f64,
    pub catalog: Option<CatalogSummary>,
    pub gain_margin: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub safety: SafetyReport,
    pub comfort: ComfortReport,
    pub reliability: Option<ReliabilityReport>,
    /// Safety per follower, vehicle 2 first.
    pub vehicle_safety: Vec<SafetyReport>,
    pub metadata: RunMetadata,
}

#[derive(Clone, Debug)]
pub struct ScenarioResult {
    /// Trace of the attacked follower.
    pub trace: Trace,
    pub vehicles: Vec<VehicleSeries>,
    pub summary: Summary,
    pub ts: f64,
    pub traced_vehicle: usize,
}

enum Estimation {
    Averaging,
    Bank { banks: Vec<BankState>, pending_y: Vec<Vector> },
}

struct ScenarioSensing<'a> {
    plant: &'a DiscretePlant,
    timeline: &'a AttackTimeline,
    seed: u64,
    ts: f64,
    traced: usize,
    estimation: Estimation,
    last: Option<(Measurement, Vector)>,
}

impl FollowerSensing for ScenarioSensing<'_> {
    fn estimate(&mut self, idx: usize, k: u64, node: &VehicleNode) -> Result<Vector> {
        let clean = self.plant.outputs(&node.x);
        let m = apply_timeline(self.timeline, k, self.ts, &clean, self.seed, idx);
        let x_bar = match &mut self.estimation {
            Estimation::Averaging => sensor_average_fallback(&m.y),
            Estimation::Bank { banks, pending_y } => {
                pending_y[idx] = m.y.clone();
                banks[idx].x_bar.clone()
            }
        };
        if idx == self.traced {
            self.last = Some((m, x_bar.clone()));
        }
        Ok(x_bar)
    }

    fn advance(&mut self, idx: usize, _k: u64, inputs: &[Vector]) -> Result<()> {
        if let Estimation::Bank { banks, pending_y } = &mut self.estimation {
            banks[idx].step(self.plant, &pending_y[idx], inputs)?;
        }
        Ok(())
    }
}

fn initial_estimates(x0: &Vector, count: usize, spread: f64, seed: u64, vehicle: usize) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b5e_7e00);
    rng.set_stream(vehicle as u64);
    (0..count)
        .map(|_| x0 + Vector::from_fn(x0.len(), |_, _| if spread > 0.0 { rng.random_range(-spread..=spread) } else { 0.0 }))
        .collect()
}

fn to5(v: &Vector) -> [f64; 5] {
    [v[0], v[1], v[2], v[3], v[4]]
}

/// Simulate one configuration. `design` is required for secured conditions.
pub fn run_condition(config: &ScenarioConfig, design: Option<&Design>) -> Result<ScenarioResult> {
    config.validate()?;
    let started = Instant::now();
    let plant = match design {
        Some(d) => d.plant.clone(),
        None => build_plant(config)?,
    };
    let timeline = config.effective_timeline();
    let traced = timeline.target_vehicle;
    let mut chain = Platoon::new(&config.platoon, plant.clone())?;
    let followers = chain.followers.len();

    let estimation = if config.condition.is_secured() {
        let design = design.ok_or_else(|| {
            Error::InvalidConfig(
                "secured condition needs gains: run `secure-platoon synth --config <file> --out gains.json` and pass --gains".into(),
            )
        })?;
        let o = &config.observer;
        let (k_r, c_r) = design_reference_params(o.ref_poles[0], o.ref_poles[1])?;
        let reference = ReferenceModel::new(k_r, c_r, config.platoon.params.ts)?;
        let banks = chain
            .followers
            .iter()
            .enumerate()
            .map(|(v, node)| {
                let init = initial_estimates(&node.x, design.catalog.len(), o.init_spread, config.seed, v);
                init_bank(&design.catalog, &design.gains, &design.d_mat, o.a_beta, reference.clone(), &init, o.beta_init)
            })
            .collect::<Result<Vec<_>>>()?;
        Estimation::Bank { banks, pending_y: vec![Vector::zeros(plant.sensor_count()); followers] }
    } else {
        Estimation::Averaging
    };
    let mut sensing = ScenarioSensing {
        plant: &plant,
        timeline: &timeline,
        seed: config.seed,
        ts: config.platoon.params.ts,
        traced,
        estimation,
        last: None,
    };

    let steps = config.steps();
    let params = config.platoon.params;
    let mut trace = Trace::default();
    let mut vehicles = vec![VehicleSeries::default(); followers];
    for k in 0..=steps {
        let node = chain.followers[traced].clone();
        let (selected, betas, etas) = match &sensing.estimation {
            Estimation::Bank { banks, .. } => (banks[traced].selected_j, banks[traced].betas(), banks[traced].etas()),
            Estimation::Averaging => (0, Vec::new(), Vec::new()),
        };
        for (series, n) in vehicles.iter_mut().zip(&chain.followers) {
            series.e.push(n.x[0]);
            series.a.push(n.x[2]);
            series.d.push(following_distance(&n.x, &params));
        }
        if k < steps {
            chain.step_chain(&mut sensing)?;
        } else {
            sensing.estimate(traced, k, &node)?;
        }
        let (m, x_bar) = sensing.last.take().expect("traced vehicle was sensed");
        trace.x.push(to5(&node.x));
        trace.u.push(node.u);
        trace.d.push(following_distance(&node.x, &params));
        trace.y.push(m.y.iter().copied().collect());
        trace.delta.push(m.delta.iter().copied().collect());
        trace.gamma.push(m.gamma.iter().copied().collect());
        trace.x_bar.push(to5(&x_bar));
        trace.selected_j.push(selected);
        trace.beta.push(betas);
        trace.eta.push(etas);
        trace.psi.push(m.psi);
        trace.active.push(if traced == timeline.target_vehicle { timeline.active(k, params.ts) } else { Vec::new() });
    }

    let safety = safety_summary(&trace.spacing_error(), &trace.d);
    let comfort = comfort_report(&trace.acceleration(), params.ts, config.k_x)?;
    let reliability = match (design, config.condition.is_secured()) {
        (Some(d), true) => Some(reliability_summary(&trace.selected_j, &trace.psi, &trace.active, &d.catalog, config.grace_steps)?),
        _ => None,
    };
    let vehicle_safety = vehicles.iter().map(|v| safety_summary(&v.e, &v.d)).collect();
    let metadata = RunMetadata {
        name: config.name.clone(),
        condition: config.condition,
        severity: config.severity,
        seed: config.seed,
        config_hash: config.hash(),
        steps,
        wall_time_s: started.elapsed().as_secs_f64(),
        catalog: design.filter(|_| config.condition.is_secured()).map(|d| d.catalog.summary()),
        gain_margin: design.filter(|_| config.condition.is_secured()).map(|d| d.gains.margin),
    };
    Ok(ScenarioResult {
        trace,
        vehicles,
        summary: Summary { safety, comfort, reliability, vehicle_safety, metadata },
        ts: params.ts,
        traced_vehicle: traced,
    })
}

impl ScenarioResult {
    /// Weighted-acceleration spectrum of follower `idx` (0 = vehicle 2).
    pub fn weighted_spectrum(&self, idx: usize) -> Result<Spectrum> {
        let series = self.vehicles.get(idx).ok_or_else(|| Error::invalid("no such follower"))?;
        let w = weight_acceleration(&series.a, self.ts, Weighting::RideComfort)?;
        amplitude_spectrum(&w.values, self.ts)
    }

    pub fn csv_header(&self) -> String {
        let n = self.trace.beta.first().map_or(0, |b| b.len());
        let mut cols: Vec<String> = ["k", "t", "e", "v", "a", "dv", "a_lead", "u", "d"].iter().map(|s| s.to_string()).collect();
        for prefix in ["y", "delta", "gamma"] {
            cols.extend((1..=9).map(|i| format!("{prefix}{i}")));
        }
        cols.extend((1..=5).map(|i| format!("xbar{i}")));
        cols.push("selected_j".into());
        cols.extend((1..=n).map(|i| format!("beta{i}")));
        cols.extend((1..=n).map(|i| format!("eta{i}")));
        cols.join(",")
    }

    pub fn write_trace_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "{}", self.csv_header())?;
        let t = &self.trace;
        for k in 0..t.len() {
            let mut row = format!("{k},{}", k as f64 * self.ts);
            let mut push = |v: f64| {
                row.push(',');
                let _ = write!(row, "{v}");
            };
            t.x[k].iter().take(5).for_each(|v| push(*v));
            push(t.u[k]);
            push(t.d[k]);
            t.y[k].iter().for_each(|v| push(*v));
            t.delta[k].iter().for_each(|v| push(*v));
            t.gamma[k].iter().for_each(|v| push(*v));
            t.x_bar[k].iter().for_each(|v| push(*v));
            let _ = write!(row, ",{}", t.selected_j[k]);
            let mut push = |v: f64| {
                row.push(',');
                let _ = write!(row, "{v}");
            };
            t.beta[k].iter().for_each(|v| push(*v));
            t.eta[k].iter().for_each(|v| push(*v));
            writeln!(out, "{row}")?;
        }
        Ok(())
    }

    /// Write `trace.csv`, `summary.json` and `spectrum.csv` into `dir`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("trace.csv"))?);
        self.write_trace_csv(&mut f)?;
        f.flush()?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)?)?;
        if self.trace.len() >= 256 {
            let spec = self.weighted_spectrum(self.traced_vehicle)?;
            let mut s = String::from("freq,amp\n");
            for (f, a) in spec.freq.iter().zip(&spec.amp) {
                let _ = writeln!(s, "{f},{a}");
            }
            std::fs::write(dir.join("spectrum.csv"), s)?;
        }
        Ok(())
    }
}

/// Seed of replication `rep` derived from the master seed.
pub fn rep_seed(master: u64, rep: u64) -> u64 {
    let mut z = master.wrapping_add(rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub amplitude: f64,
    pub reps: usize,
    pub mean_fp: f64,
    pub mean_fp_raw: f64,
    pub mean_f1: f64,
    pub min_f1: f64,
}

/// Secured runs at each attack amplitude, `reps` seeds per amplitude.
pub fn run_reliability_sweep(base: &ScenarioConfig, design: &Design, amplitudes: &[f64], reps: usize) -> Result<Vec<SweepRow>> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    if amplitudes.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
        return Err(Error::invalid("amplitudes must be finite and non-negative"));
    }
    let jobs: Vec<(usize, u64)> = (0..amplitudes.len()).flat_map(|i| (0..reps as u64).map(move |r| (i, r))).collect();
    let results = jobs
        .par_iter()
        .map(|&(i, r)| {
            let mut cfg = base.clone();
            cfg.condition = Condition::SecuredWithAttack;
            cfg.severity = None;
            cfg.timeline = cfg.timeline.with_rms(amplitudes[i]);
            cfg.seed = rep_seed(base.seed, r);
            let res = run_condition(&cfg, Some(design))?;
            Ok((i, res.summary.reliability.expect("secured run reports reliability")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(amplitudes
        .iter()
        .enumerate()
        .map(|(i, &amplitude)| {
            let rows: Vec<&ReliabilityReport> = results.iter().filter(|(j, _)| *j == i).map(|(_, r)| r).collect();
            let n = rows.len() as f64;
            SweepRow {
                amplitude,
                reps: rows.len(),
                mean_fp: rows.iter().map(|r| r.fp as f64).sum::<f64>() / n,
                mean_fp_raw: rows.iter().map(|r| r.fp_raw as f64).sum::<f64>() / n,
                mean_f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
                min_f1: rows.iter().map(|r| r.f1).fold(f64::INFINITY, f64::min),
            }
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("amplitude,reps,mean_fp,mean_fp_raw,mean_f1,min_f1\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.amplitude, r.reps, r.mean_fp, r.mean_fp_raw, r.mean_f1, r.min_f1);
    }
    s
}
