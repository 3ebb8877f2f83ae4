//! Closed-loop assessment: loop-gain reports, the acceleration trade summary,
//! and fixed-step time-domain simulation of the decoupled architecture.
//!
//! The simulation discretizes each modal block exactly under zero-order hold
//! and each controller by the bilinear transform, so the only approximation
//! in the linear loop is the hold itself.

use crate::control::{
    loop_gain_at, margins, ChannelController, LoopSign, RationalTf, TuningResult,
};
use crate::error::{Error, Result};
use crate::freq::FrequencyResponse;
use crate::plant::{ChannelPlant, DecouplingPair, PlantModel};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

const TAU: f64 = std::f64::consts::TAU;

pub const DEFAULT_FORCE_BUDGET_N: f64 = 40.0;

/// Peak acceleration from a per-axis force budget.
pub fn acceleration_capability(mass_kg: f64, force_budget_n: f64) -> Result<f64> {
    if !(mass_kg > 0.0) {
        return Err(Error::Plant(format!(
            "acceleration needs positive mass, got {mass_kg}"
        )));
    }
    Ok(force_budget_n / mass_kg)
}

// --- jerk-limited scan profile ---

/// Symmetric 7-segment s-curve: piecewise-constant jerk, rest to rest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SCurve {
    pub distance: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub j_max: f64,
    /// (duration, jerk) segments; jerk carries the sign of `distance`.
    segments: Vec<(f64, f64)>,
}

impl SCurve {
    pub fn new(distance: f64, v_max: f64, a_max: f64, j_max: f64) -> Result<Self> {
        if !(v_max > 0.0 && a_max > 0.0 && j_max > 0.0) {
            return Err(Error::Config(format!(
                "s-curve limits must be positive, got v={v_max}, a={a_max}, j={j_max}"
            )));
        }
        if distance == 0.0 {
            return Ok(SCurve {
                distance,
                v_max,
                a_max,
                j_max,
                segments: vec![],
            });
        }
        let d = distance.abs();

        // shrink the cruise velocity until the move fits
        let mut tj = a_max / j_max;
        let mut v = v_max;
        if v < a_max * tj {
            // velocity reached before full acceleration builds
            tj = (v / j_max).sqrt();
        }
        let mut ta = (v / (j_max * tj) - tj).max(0.0);
        let d_ramp = v * (2.0 * tj + ta); // both ramps combined
        if d_ramp > d {
            // no cruise; solve for the peak velocity that lands exactly
            tj = a_max / j_max;
            let disc = tj * tj + 4.0 * d / (j_max * tj);
            v = 0.5 * j_max * tj * (-tj + disc.sqrt());
            if v < j_max * tj * tj {
                // acceleration never saturates either
                v = (0.5 * d).powf(2.0 / 3.0) * j_max.powf(1.0 / 3.0);
                tj = (v / j_max).sqrt();
            }
            ta = (v / (j_max * tj) - tj).max(0.0);
        }
        let tv = ((d - v * (2.0 * tj + ta)) / v).max(0.0);
        let s = distance.signum() * j_max;
        let segments = vec![
            (tj, s),
            (ta, 0.0),
            (tj, -s),
            (tv, 0.0),
            (tj, -s),
            (ta, 0.0),
            (tj, s),
        ];
        Ok(SCurve {
            distance,
            v_max,
            a_max,
            j_max,
            segments,
        })
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|(t, _)| t).sum()
    }

    /// (position, velocity, acceleration) at time t; clamps outside the move.
    pub fn sample(&self, t: f64) -> (f64, f64, f64) {
        let (mut p, mut v, mut a) = (0.0, 0.0, 0.0);
        if t <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let mut remaining = t;
        for (dur, j) in &self.segments {
            let h = remaining.min(*dur);
            p += v * h + 0.5 * a * h * h + j * h * h * h / 6.0;
            v += a * h + 0.5 * j * h * h;
            a += j * h;
            remaining -= h;
            if remaining <= 0.0 {
                return (p, v, a);
            }
        }
        (self.distance, 0.0, 0.0)
    }

    pub fn position(&self, t: f64) -> f64 {
        self.sample(t).0
    }
}

// --- references ---

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum RefShape {
    Step { amplitude: f64, t_start: f64 },
    Sine { amplitude: f64, freq_hz: f64 },
    Scan(SCurve),
}

impl RefShape {
    fn at(&self, t: f64) -> f64 {
        match self {
            RefShape::Step { amplitude, t_start } => {
                if t >= *t_start {
                    *amplitude
                } else {
                    0.0
                }
            }
            RefShape::Sine { amplitude, freq_hz } => amplitude * (TAU * freq_hz * t).sin(),
            RefShape::Scan(sc) => sc.position(t),
        }
    }

    fn fastest_hz(&self) -> f64 {
        match self {
            RefShape::Step { .. } => 0.0,
            RefShape::Sine { freq_hz, .. } => *freq_hz,
            RefShape::Scan(_) => 0.0,
        }
    }
}

// --- discrete controller ---

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// (z + k)^n, coefficients descending.
fn binom(k: f64, n: usize) -> Vec<f64> {
    let mut p = vec![1.0];
    for _ in 0..n {
        p = poly_mul(&p, &[1.0, k]);
    }
    p
}

/// Discrete transfer function, descending z powers, a[0] = 1.
#[derive(Debug, Clone)]
pub struct DiscreteTf {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

/// Bilinear (Tustin) transform at fixed step dt.
pub fn tustin(tf: &RationalTf, dt: f64) -> Result<DiscreteTf> {
    let dn = tf.den.len() - 1;
    let nn = tf.num.len() - 1;
    if nn > dn {
        return Err(Error::Control(
            "improper transfer function cannot be discretized".to_string(),
        ));
    }
    let c = 2.0 / dt;
    let mut num_z = vec![0.0; dn + 1];
    let mut den_z = vec![0.0; dn + 1];
    let acc = |out: &mut Vec<f64>, coeff: f64, pow: usize| {
        let term = poly_mul(&binom(-1.0, pow), &binom(1.0, dn - pow));
        for (o, t) in out.iter_mut().zip(term) {
            *o += coeff * t;
        }
    };
    for (i, n) in tf.num.iter().enumerate() {
        let p = nn - i;
        acc(&mut num_z, n * c.powi(p as i32), p);
    }
    for (i, d) in tf.den.iter().enumerate() {
        let p = dn - i;
        acc(&mut den_z, d * c.powi(p as i32), p);
    }
    let lead = den_z[0];
    if lead == 0.0 {
        return Err(Error::Control(
            "bilinear transform produced a singular leading coefficient".to_string(),
        ));
    }
    Ok(DiscreteTf {
        b: num_z.iter().map(|x| x / lead).collect(),
        a: den_z.iter().map(|x| x / lead).collect(),
    })
}

/// Direct form II transposed realization.
#[derive(Debug, Clone)]
pub struct Filter {
    tf: DiscreteTf,
    w: Vec<f64>,
}

impl Filter {
    pub fn new(tf: DiscreteTf) -> Self {
        let n = tf.a.len() - 1;
        Filter {
            tf,
            w: vec![0.0; n],
        }
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let b = &self.tf.b;
        let a = &self.tf.a;
        let n = self.w.len();
        let y = b[0] * x + self.w[0];
        for i in 0..n - 1 {
            self.w[i] = b[i + 1] * x + self.w[i + 1] - a[i + 1] * y;
        }
        self.w[n - 1] = b[n] * x - a[n] * y;
        y
    }
}

// --- exact modal hold ---

struct BlockZoh {
    /// State transition [q, v] -> [q, v].
    m: [[f64; 2]; 2],
    /// Force injection per unit generalized force.
    g: [f64; 2],
}

impl BlockZoh {
    fn rigid(dt: f64) -> Self {
        BlockZoh {
            m: [[1.0, dt], [0.0, 1.0]],
            g: [0.5 * dt * dt, dt],
        }
    }

    fn flexible(omega: f64, zeta: f64, dt: f64) -> Self {
        let wd = omega * (1.0 - zeta * zeta).sqrt();
        let e = (-zeta * omega * dt).exp();
        let (sn, cs) = ((wd * dt).sin(), (wd * dt).cos());
        let m00 = e * (cs + zeta * omega * sn / wd);
        let m01 = e * sn / wd;
        let m10 = -omega * omega * e * sn / wd;
        let m11 = e * (cs - zeta * omega * sn / wd);
        // A^{-1} (Ad - I) B with B = [0, 1]^T
        let g0 = -2.0 * zeta / omega * m01 - (m11 - 1.0) / (omega * omega);
        let g1 = m01;
        BlockZoh {
            m: [[m00, m01], [m10, m11]],
            g: [g0, g1],
        }
    }

    fn advance(&self, q: f64, v: f64, f: f64) -> (f64, f64) {
        (
            self.m[0][0] * q + self.m[0][1] * v + self.g[0] * f,
            self.m[1][0] * q + self.m[1][1] * v + self.g[1] * f,
        )
    }
}

// --- simulation ---

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub rms_error: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub dt: f64,
    pub time: Vec<f64>,
    pub labels: Vec<String>,
    /// Indexed [channel][step].
    pub reference: Vec<Vec<f64>>,
    pub measurement: Vec<Vec<f64>>,
    pub command: Vec<Vec<f64>>,
    /// Indexed [actuator][step].
    pub forces: Vec<Vec<f64>>,
    pub metrics: Vec<TrackingMetrics>,
}

impl SimulationTrace {
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["time_s".to_string()];
        for l in &self.labels {
            header.push(format!("{l}_ref"));
            header.push(format!("{l}_meas"));
            header.push(format!("{l}_cmd"));
        }
        for j in 0..self.forces.len() {
            header.push(format!("act{j}_force_n"));
        }
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.time.len() {
            let mut row = Vec::with_capacity(header.len());
            row.push(format!("{:.9e}", self.time[k]));
            for c in 0..self.labels.len() {
                row.push(format!("{:.9e}", self.reference[c][k]));
                row.push(format!("{:.9e}", self.measurement[c][k]));
                row.push(format!("{:.9e}", self.command[c][k]));
            }
            for f in &self.forces {
                row.push(format!("{:.9e}", f[k]));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Complex amplitude of one recorded signal at a probe frequency,
    /// correlated over complete periods inside [t_from, end].
    pub fn tone_amplitude(&self, signal: &[f64], freq_hz: f64, t_from: f64) -> f64 {
        let period = 1.0 / freq_hz;
        let start = self.time.iter().position(|t| *t >= t_from).unwrap_or(0);
        let avail = self.time.len() - start;
        let per_period = (period / self.dt).round() as usize;
        let n = (avail / per_period.max(1)) * per_period.max(1);
        if n == 0 {
            return 0.0;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for k in start..start + n {
            let ph = TAU * freq_hz * self.time[k];
            acc += signal[k] * Complex64::new(ph.cos(), -ph.sin());
        }
        2.0 * acc.norm() / n as f64
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub duration: f64,
    /// None picks 1/max(20 f_modes, 400 f_probe).
    pub dt: Option<f64>,
    pub sign: LoopSign,
    /// White measurement noise RMS added to each sensor reading.
    pub noise_rms: f64,
    pub seed: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            duration: 1.0,
            dt: None,
            sign: LoopSign::Negative,
            noise_rms: 0.0,
            seed: 7,
        }
    }
}

fn auto_step(plant: &PlantModel, controllers: &[Option<ChannelController>], refs: &[(usize, RefShape)]) -> f64 {
    let mut f_max: f64 = 1.0;
    for fd in &plant.flexible {
        f_max = f_max.max(fd.omega / TAU);
    }
    for c in controllers.iter().flatten() {
        f_max = f_max.max(c.omega_lp / TAU);
    }
    let mut f_probe: f64 = 0.0;
    for (_, shape) in refs {
        f_probe = f_probe.max(shape.fastest_hz());
    }
    1.0 / (20.0 * f_max).max(400.0 * f_probe)
}

/// Fixed-step closed-loop simulation of the decoupled architecture:
/// channel errors feed per-channel controllers, T_u spreads commands to
/// actuators, the modal plant advances exactly under the held forces.
pub fn simulate_closed_loop(
    plant: &PlantModel,
    pair: &DecouplingPair,
    controllers: &[Option<ChannelController>],
    references: &[(usize, RefShape)],
    opts: &SimOptions,
) -> Result<SimulationTrace> {
    let nc = pair.n_channels();
    if controllers.len() != nc {
        return Err(Error::Control(format!(
            "{} controllers supplied for {nc} channels",
            controllers.len()
        )));
    }
    for (ch, _) in references {
        if *ch >= nc {
            return Err(Error::Config(format!(
                "reference targets channel {ch} of {nc}"
            )));
        }
    }
    let dt = opts.dt.unwrap_or_else(|| auto_step(plant, controllers, references));
    if !(dt > 0.0 && dt < opts.duration) {
        return Err(Error::Config(format!(
            "step {dt} does not fit duration {}",
            opts.duration
        )));
    }
    let steps = (opts.duration / dt).ceil() as usize;

    let ng = 6 + plant.flexible.len();
    let mut blocks = Vec::with_capacity(ng);
    for g in 0..ng {
        blocks.push(if g < 6 {
            BlockZoh::rigid(dt)
        } else {
            let fd = &plant.flexible[g - 6];
            BlockZoh::flexible(fd.omega, fd.zeta, dt)
        });
    }

    let mut filters: Vec<Option<Filter>> = controllers
        .iter()
        .map(|c| {
            c.as_ref()
                .map(|ctl| tustin(&ctl.rational(), dt).map(Filter::new))
                .transpose()
        })
        .collect::<Result<_>>()?;

    let t_y = pair.t_y_matrix();
    let t_u = pair.t_u_matrix();
    let na = plant.n_inputs;
    let mut q = vec![0.0; ng];
    let mut v = vec![0.0; ng];

    let mut rng = noise_source(opts.seed);
    let sign = match opts.sign {
        LoopSign::Negative => 1.0,
        LoopSign::Positive => -1.0,
    };

    let mut trace = SimulationTrace {
        dt,
        time: Vec::with_capacity(steps),
        labels: pair.channel_labels.clone(),
        reference: vec![Vec::with_capacity(steps); nc],
        measurement: vec![Vec::with_capacity(steps); nc],
        command: vec![Vec::with_capacity(steps); nc],
        forces: vec![Vec::with_capacity(steps); na],
        metrics: Vec::new(),
    };

    let norm_bound = 1e12;
    for k in 0..steps {
        let t = k as f64 * dt;

        // sensors read positions; channels read through T_y
        let mut y_sens = vec![0.0; plant.n_outputs];
        for (i, ys) in y_sens.iter_mut().enumerate() {
            let mut acc = 0.0;
            for g in 0..ng {
                acc += plant.c_s[(i, g)] * q[g];
            }
            if opts.noise_rms > 0.0 {
                acc += opts.noise_rms * rng.normal();
            }
            *ys = acc;
        }
        let mut y_chan = vec![0.0; nc];
        for (c, yc) in y_chan.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..plant.n_outputs {
                acc += t_y[(c, i)] * y_sens[i];
            }
            *yc = acc;
        }

        let mut r = vec![0.0; nc];
        for (ch, shape) in references {
            r[*ch] += shape.at(t);
        }

        let mut u_chan = vec![0.0; nc];
        for c in 0..nc {
            if let Some(f) = filters[c].as_mut() {
                u_chan[c] = sign * f.step(r[c] - y_chan[c]);
            }
        }

        let mut u_act = vec![0.0; na];
        for (j, ua) in u_act.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..nc {
                acc += t_u[(j, c)] * u_chan[c];
            }
            *ua = acc;
        }

        trace.time.push(t);
        for c in 0..nc {
            trace.reference[c].push(r[c]);
            trace.measurement[c].push(y_chan[c]);
            trace.command[c].push(u_chan[c]);
        }
        for (j, col) in trace.forces.iter_mut().enumerate() {
            col.push(u_act[j]);
        }

        // generalized forces, then the exact hold advance
        let mut norm = 0.0;
        for g in 0..ng {
            let mut fg = 0.0;
            for j in 0..na {
                fg += plant.b_a[(g, j)] * u_act[j];
            }
            let (qn, vn) = blocks[g].advance(q[g], v[g], fg);
            q[g] = qn;
            v[g] = vn;
            norm += qn * qn + vn * vn;
        }
        if !norm.is_finite() || norm.sqrt() > norm_bound {
            return Err(Error::SimulationDiverged {
                t,
                norm: norm.sqrt(),
            });
        }
    }

    for c in 0..nc {
        let mut sum2 = 0.0;
        let mut mx: f64 = 0.0;
        for k in 0..steps {
            let e = trace.reference[c][k] - trace.measurement[c][k];
            sum2 += e * e;
            mx = mx.max(e.abs());
        }
        trace.metrics.push(TrackingMetrics {
            rms_error: (sum2 / steps as f64).sqrt(),
            max_error: mx,
        });
    }
    Ok(trace)
}

/// Deterministic Gaussian noise from a seeded counter RNG.
struct NoiseSource {
    rng: rand_chacha::ChaCha8Rng,
    spare: Option<f64>,
}

fn noise_source(seed: u64) -> NoiseSource {
    use rand::SeedableRng;
    NoiseSource {
        rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        spare: None,
    }
}

impl NoiseSource {
    fn normal(&mut self) -> f64 {
        use rand::Rng;
        if let Some(s) = self.spare.take() {
            return s;
        }
        // Box-Muller on (0,1] uniforms
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        self.spare = Some(r * (TAU * u2).sin());
        r * (TAU * u2).cos()
    }
}

// --- loop-gain report ---

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelLoopData {
    pub label: String,
    pub bandwidth_hz: f64,
    pub sensitivity_peak: f64,
    pub gain_margin: f64,
    pub phase_margin: f64,
    #[serde(skip)]
    pub loop_frf: Option<FrequencyResponse>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopGainReport {
    pub design: String,
    pub channels: Vec<ChannelLoopData>,
    /// Channels with no tuned controller.
    pub missing: Vec<String>,
}

/// Compose loop FRFs and margin rows for every tuned channel of one design.
pub fn loop_gain_report(
    design: &str,
    chans: &[ChannelPlant],
    tunes: &[Option<TuningResult>],
    freqs_hz: &[f64],
    sign: LoopSign,
) -> Result<LoopGainReport> {
    if chans.len() != tunes.len() {
        return Err(Error::Control(format!(
            "{} channels but {} tuning slots",
            chans.len(),
            tunes.len()
        )));
    }
    let mut channels = Vec::new();
    let mut missing = Vec::new();
    for (chan, tune) in chans.iter().zip(tunes) {
        match tune {
            None => missing.push(chan.label.clone()),
            Some(t) => {
                let values = freqs_hz
                    .iter()
                    .map(|f| loop_gain_at(chan, &t.controller, sign, TAU * f))
                    .collect();
                let m = margins(chan, &t.controller, sign)?;
                channels.push(ChannelLoopData {
                    label: chan.label.clone(),
                    bandwidth_hz: t.achieved_crossover / TAU,
                    sensitivity_peak: t.sensitivity_peak,
                    gain_margin: m.gain_margin,
                    phase_margin: m.phase_margin,
                    loop_frf: Some(FrequencyResponse::new(freqs_hz.to_vec(), values)?),
                });
            }
        }
    }
    Ok(LoopGainReport {
        design: design.to_string(),
        channels,
        missing,
    })
}

/// Aligned text table comparing designs channel by channel.
pub fn comparison_table(reports: &[LoopGainReport]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<12} {:<8} {:>12} {:>10} {:>8} {:>8}\n",
        "design", "channel", "bandwidth_hz", "peak|S|", "GM", "PM_deg"
    ));
    for rep in reports {
        for ch in &rep.channels {
            let gm = if ch.gain_margin.is_infinite() {
                "inf".to_string()
            } else {
                format!("{:.2}", ch.gain_margin)
            };
            s.push_str(&format!(
                "{:<12} {:<8} {:>12.3} {:>10.4} {:>8} {:>8.2}\n",
                rep.design, ch.label, ch.bandwidth_hz, ch.sensitivity_peak, gm, ch.phase_margin
            ));
        }
        for label in &rep.missing {
            s.push_str(&format!(
                "{:<12} {:<8} {:>12} {:>10} {:>8} {:>8}\n",
                rep.design, label, "missing", "-", "-", "-"
            ));
        }
    }
    s
}

// --- trade study ---

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub label: String,
    pub bandwidth_hz: f64,
    pub sensitivity_peak: f64,
    pub gain_margin: f64,
    pub phase_margin: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSummary {
    pub name: String,
    pub mass_kg: f64,
    pub channels: Vec<ChannelSummary>,
    pub force_budget_n: f64,
    /// Model-derived capability, not a measurement.
    pub peak_acceleration: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeStudyReport {
    pub designs: Vec<DesignSummary>,
    /// Content hashes of every input that fed the numbers, keyed by role.
    pub provenance: std::collections::BTreeMap<String, String>,
    pub seed: u64,
}

pub fn design_summary(
    name: &str,
    mass_kg: f64,
    tunes: &[(String, TuningResult)],
    force_budget_n: f64,
) -> Result<DesignSummary> {
    let peak_acceleration = acceleration_capability(mass_kg, force_budget_n)?;
    Ok(DesignSummary {
        name: name.to_string(),
        mass_kg,
        channels: tunes
            .iter()
            .map(|(label, t)| ChannelSummary {
                label: label.clone(),
                bandwidth_hz: t.achieved_crossover / TAU,
                sensitivity_peak: t.sensitivity_peak,
                gain_margin: t.gain_margin,
                phase_margin: t.phase_margin,
                feasible: t.feasible,
            })
            .collect(),
        force_budget_n,
        peak_acceleration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{evaluate_bandwidth, tune_channel, TuneOptions};
    use crate::eigen::EigenOptions;
    use crate::geometry::{Material, PointMass, StageGeometry};
    use crate::modal::{solve_modes, DampingPolicy};
    use crate::placement::{Axis, Rect, Transducer};
    use crate::plant::{assemble_plant, channel_plants, decoupling_matrices};

    #[test]
    fn acceleration_is_force_over_mass() {
        assert_eq!(acceleration_capability(2.0, 10.0).unwrap(), 5.0);
        assert!(acceleration_capability(0.0, 10.0).is_err());
        let ratio = acceleration_capability(1.68, 40.0).unwrap()
            / acceleration_capability(2.21, 40.0).unwrap();
        assert!((ratio - 2.21 / 1.68).abs() < 1e-12);
    }

    #[test]
    fn s_curve_honors_limits_and_lands_exactly() {
        let sc = SCurve::new(0.1, 0.5, 5.0, 500.0).unwrap();
        let t_end = sc.duration();
        let n = 20_000;
        let mut v_pk: f64 = 0.0;
        let mut a_pk: f64 = 0.0;
        for i in 0..=n {
            let (_, v, a) = sc.sample(t_end * i as f64 / n as f64);
            v_pk = v_pk.max(v.abs());
            a_pk = a_pk.max(a.abs());
        }
        assert!(v_pk <= 0.5 + 1e-9);
        assert!(a_pk <= 5.0 + 1e-9);
        assert!((sc.position(t_end) - 0.1).abs() < 1e-9);
        assert!((sc.position(t_end + 1.0) - 0.1).abs() < 1e-12);
        let (_, v_end, a_end) = sc.sample(t_end);
        assert!(v_end.abs() < 1e-9 && a_end.abs() < 1e-9);
    }

    #[test]
    fn short_s_curve_degenerates_gracefully() {
        // too short to reach either limit
        let sc = SCurve::new(1e-4, 0.5, 5.0, 500.0).unwrap();
        assert!((sc.position(sc.duration()) - 1e-4).abs() < 1e-12);
        // negative moves mirror
        let sc = SCurve::new(-0.02, 0.5, 5.0, 500.0).unwrap();
        assert!((sc.position(sc.duration()) + 0.02).abs() < 1e-10);
    }

    fn desk_setup() -> (
        crate::plant::PlantModel,
        crate::plant::DecouplingPair,
        Vec<ChannelPlant>,
    ) {
        let mat = Material::aluminum_7075();
        let pms = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .iter()
            .map(|(sx, sy)| PointMass {
                x: 0.15 + sx * 0.115,
                y: 0.15 + sy * 0.115,
                kg: 0.2334,
            })
            .collect();
        let geom = StageGeometry::uniform(0.3, 0.3, 8, 8, 0.006, (0.001, 0.02), pms);
        let model = solve_modes(&geom, &mat, 4, None, &EigenOptions::default()).unwrap();
        let z = |x: f64, y: f64| Transducer {
            x,
            y,
            z_offset: -0.004,
            axis: Axis::Z,
            authority: 1.0,
        };
        let h = |x: f64, y: f64, axis: Axis| Transducer {
            x,
            y,
            z_offset: -0.004,
            axis,
            authority: 1.0,
        };
        let actuators = vec![
            z(0.0375, 0.0375),
            z(0.2625, 0.0375),
            z(0.0375, 0.2625),
            z(0.2625, 0.2625),
            z(0.15, 0.075),
            z(0.15, 0.225),
            h(0.075, 0.075, Axis::X),
            h(0.225, 0.225, Axis::X),
            h(0.075, 0.225, Axis::Y),
            h(0.225, 0.075, Axis::Y),
        ];
        let full = Rect {
            x_min: 0.0,
            y_min: 0.0,
            x_max: 0.3,
            y_max: 0.3,
        };
        let placement = crate::placement::PlacementConfig {
            sensors: actuators.clone(),
            actuators,
            domain_a: vec![full],
            domain_s: vec![full],
            gamma: 1.0,
            actuator_objective: 0.0,
            sensor_objective: 0.0,
        };
        let plant = assemble_plant(&model, &placement, &DampingPolicy::Uniform(0.005), 1).unwrap();
        let pair = decoupling_matrices(&plant).unwrap();
        let chans = channel_plants(&plant, &pair);
        (plant, pair, chans)
    }

    // rigid channels tuck under the first mode; the flexible channel must
    // cross over beyond the mode it controls to be stabilizable at all
    fn ranges_for(ch: &ChannelPlant) -> TuneOptions {
        match ch.kind {
            crate::plant::ChannelKind::Rigid => TuneOptions {
                omega_lo: TAU * 2.0,
                omega_hi: TAU * 30.0,
                ..TuneOptions::default()
            },
            crate::plant::ChannelKind::Flexible { .. } => TuneOptions {
                omega_lo: TAU * 40.0,
                omega_hi: TAU * 300.0,
                ..TuneOptions::default()
            },
        }
    }

    fn tuned_controllers(
        chans: &[ChannelPlant],
    ) -> (Vec<Option<ChannelController>>, Vec<TuningResult>) {
        let mut ctls = Vec::new();
        let mut tr = Vec::new();
        for ch in chans {
            let r = tune_channel(ch, &ranges_for(ch)).unwrap();
            ctls.push(Some(r.controller));
            tr.push(r);
        }
        (ctls, tr)
    }

    #[test]
    fn zero_reference_stays_at_rest() {
        let (plant, pair, chans) = desk_setup();
        let (ctls, _) = tuned_controllers(&chans);
        let trace = simulate_closed_loop(
            &plant,
            &pair,
            &ctls,
            &[],
            &SimOptions {
                duration: 0.05,
                ..SimOptions::default()
            },
        )
        .unwrap();
        for c in 0..pair.n_channels() {
            assert!(trace.measurement[c].iter().all(|x| *x == 0.0));
            assert!(trace.command[c].iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn step_error_vanishes_through_integral_action() {
        let (plant, pair, chans) = desk_setup();
        let (ctls, trs) = tuned_controllers(&chans);
        let wbw = trs[2].achieved_crossover;
        // the slow closed-loop pole sits near w_bw/alpha^2, so reaching 1e-6
        // of the step takes roughly 9 ln(1e6)/w_bw plus discretization slack
        let horizon = 140.0 / wbw;
        let step = 1e-4;
        let trace = simulate_closed_loop(
            &plant,
            &pair,
            &ctls,
            &[(
                2,
                RefShape::Step {
                    amplitude: step,
                    t_start: 0.0,
                },
            )],
            &SimOptions {
                duration: horizon,
                ..SimOptions::default()
            },
        )
        .unwrap();
        let last = trace.time.len() - 1;
        let err = (trace.reference[2][last] - trace.measurement[2][last]).abs();
        assert!(err < 1e-6 * step, "residual error {err:.3e}");
    }

    #[test]
    fn sinusoid_steady_state_matches_the_frequency_domain() {
        let (plant, pair, chans) = desk_setup();
        let (ctls, _) = tuned_controllers(&chans);
        let chan_idx = 2;
        let ctl = ctls[chan_idx].unwrap();
        for f_probe in [1.0, 3.0, 7.0, 13.0, 29.0] {
            let settle = 60.0 / (TAU * 1.0);
            let trace = simulate_closed_loop(
                &plant,
                &pair,
                &ctls,
                &[(
                    chan_idx,
                    RefShape::Sine {
                        amplitude: 1e-4,
                        freq_hz: f_probe,
                    },
                )],
                &SimOptions {
                    duration: settle + 2.0,
                    ..SimOptions::default()
                },
            )
            .unwrap();
            let amp = trace.tone_amplitude(&trace.measurement[chan_idx], f_probe, settle);
            let t_mag = crate::control::complementary_at(
                &chans[chan_idx],
                &ctl,
                LoopSign::Negative,
                TAU * f_probe,
            )
            .norm();
            let expect = 1e-4 * t_mag;
            assert!(
                (amp - expect).abs() <= 0.01 * expect,
                "probe {f_probe} Hz: {amp:.6e} vs {expect:.6e}"
            );
        }
    }

    #[test]
    fn halving_the_step_barely_moves_tracking_error() {
        let (plant, pair, chans) = desk_setup();
        let (ctls, _) = tuned_controllers(&chans);
        let scan = RefShape::Scan(SCurve::new(0.05, 0.25, 5.0, 400.0).unwrap());
        let run = |dt: f64| {
            simulate_closed_loop(
                &plant,
                &pair,
                &ctls,
                &[(0, scan.clone())],
                &SimOptions {
                    duration: 0.6,
                    dt: Some(dt),
                    ..SimOptions::default()
                },
            )
            .unwrap()
            .metrics[0]
                .rms_error
        };
        let base = auto_step(&plant, &ctls, &[]);
        let (a, b) = (run(base), run(base / 2.0));
        assert!(
            (a - b).abs() <= 0.005 * a,
            "rms moved {a:.6e} -> {b:.6e}"
        );
    }

    #[test]
    fn scan_does_not_ring_the_controlled_mode() {
        let (plant, pair, chans) = desk_setup();
        let (ctls, _) = tuned_controllers(&chans);
        let scan = RefShape::Scan(SCurve::new(0.05, 0.25, 5.0, 400.0).unwrap());
        let trace = simulate_closed_loop(
            &plant,
            &pair,
            &ctls,
            &[(1, scan)],
            &SimOptions {
                duration: 0.8,
                ..SimOptions::default()
            },
        )
        .unwrap();
        // the flexible channel is regulated: its excursion stays far below
        // the scan amplitude and decays after the move
        let flex_peak = trace.measurement[6]
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(flex_peak < 5e-4 * 0.05, "flex excursion {flex_peak:.3e}");
        let tail = trace.time.len() - trace.time.len() / 10;
        let tail_peak = trace.measurement[6][tail..]
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(tail_peak <= 0.2 * flex_peak.max(1e-18));
        for c in 0..pair.n_channels() {
            assert!(trace.measurement[c].iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn unstable_sign_flip_diverges_with_diagnostic() {
        let (plant, pair, chans) = desk_setup();
        let (ctls, _) = tuned_controllers(&chans);
        let r = simulate_closed_loop(
            &plant,
            &pair,
            &ctls,
            &[(
                2,
                RefShape::Step {
                    amplitude: 1e-3,
                    t_start: 0.0,
                },
            )],
            &SimOptions {
                duration: 3.0,
                sign: LoopSign::Positive,
                ..SimOptions::default()
            },
        );
        match r {
            Err(Error::SimulationDiverged { t, norm }) => {
                assert!(t > 0.0 && norm > 1e11);
            }
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn tustin_filter_tracks_the_analog_response() {
        let ctl = ChannelController::from_bandwidth(TAU * 10.0, 3.0, 0.7)
            .unwrap()
            .with_gain(2.5);
        let dt = 1e-4;
        let dtf = tustin(&ctl.rational(), dt).unwrap();
        for f in [0.5, 2.0, 10.0, 60.0] {
            let mut filt = Filter::new(dtf.clone());
            let n = ((40.0 / f) / dt) as usize;
            let mut y = Vec::with_capacity(n);
            for k in 0..n {
                let t = k as f64 * dt;
                y.push(filt.step((TAU * f * t).sin()));
            }
            // correlate the settled half against the probe
            let start = n / 2;
            let m = ((n - start) as f64 * dt * f).floor() / (dt * f);
            let m = m as usize;
            let mut acc = Complex64::new(0.0, 0.0);
            for k in start..start + m {
                let ph = TAU * f * (k as f64 * dt);
                acc += y[k] * Complex64::new(ph.cos(), -ph.sin());
            }
            let amp = 2.0 * acc.norm() / m as f64;
            let expect = ctl.frf_at(TAU * f).norm();
            assert!(
                (amp - expect).abs() < 0.01 * expect,
                "f = {f}: {amp:.5} vs {expect:.5}"
            );
        }
    }

    #[test]
    fn report_composes_the_channel_quantities() {
        let (_, _, chans) = desk_setup();
        let opts = ranges_for(&chans[0]);
        let mut tunes: Vec<Option<TuningResult>> = chans
            .iter()
            .map(|ch| Some(tune_channel(ch, &ranges_for(ch)).unwrap()))
            .collect();
        tunes[3] = None;
        let grid = crate::freq::log_grid_hz(0.1, 2000.0, 40).unwrap();
        let rep = loop_gain_report("desk", &chans, &tunes, &grid, LoopSign::Negative).unwrap();
        assert_eq!(rep.missing, vec!["rx".to_string()]);
        assert_eq!(rep.channels.len(), chans.len() - 1);
        let ch0 = &rep.channels[0];
        let t0 = tunes[0].as_ref().unwrap();
        let frf = ch0.loop_frf.as_ref().unwrap();
        let direct = loop_gain_at(&chans[0], &t0.controller, LoopSign::Negative, frf.omega(3));
        assert_eq!(frf.values[3], direct);
        assert_eq!(ch0.sensitivity_peak, t0.sensitivity_peak);
        // maximality witness survives composition
        let probe = evaluate_bandwidth(
            &chans[0],
            t0.achieved_crossover * 1.05,
            &opts,
        );
        if t0.infeasible_above.is_some() {
            assert!(!probe.unwrap().feasible(opts.ms_bound));
        }
        let table = comparison_table(&[rep]);
        assert!(table.contains("missing"));
        assert!(table.lines().count() >= chans.len());
    }
}
