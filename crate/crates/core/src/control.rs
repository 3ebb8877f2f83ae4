//! Fixed-structure channel controllers and bandwidth maximization.
//!
//! C(s) = K_p ((s + w_I)/s) ((s/w_d) + 1) (w_lp^2/(s^2 + 2 z_lp w_lp s + w_lp^2))
//! with the whole schedule hanging off one knob: w_I = w_bw/alpha^2,
//! w_d = w_bw/alpha, w_lp = alpha w_bw. Tuning maximizes w_bw subject to
//! closed-loop stability and a sensitivity-peak bound, with the gain set so
//! the loop crosses over at w_bw.

use crate::error::{Error, Result};
use crate::freq::FrequencyResponse;
use crate::plant::ChannelPlant;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use std::f64::consts::PI;
const TAU: f64 = std::f64::consts::TAU;

pub const DEFAULT_ALPHA: f64 = 3.0;
pub const DEFAULT_Z_LP: f64 = 0.7;
pub const DEFAULT_MS_BOUND: f64 = 2.0;
/// Relative bisection resolution on the returned bandwidth.
pub const BANDWIDTH_RESOLUTION: f64 = 0.005;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChannelController {
    pub k_p: f64,
    /// Design crossover, rad/s. Every corner frequency is slaved to it.
    pub omega_bw: f64,
    pub alpha: f64,
    pub omega_i: f64,
    pub omega_d: f64,
    pub omega_lp: f64,
    pub z_lp: f64,
}

impl ChannelController {
    /// Unit-gain controller with the one-parameter schedule.
    pub fn from_bandwidth(omega_bw: f64, alpha: f64, z_lp: f64) -> Result<Self> {
        if !(omega_bw > 0.0 && omega_bw.is_finite()) {
            return Err(Error::Control(format!(
                "bandwidth must be positive and finite, got {omega_bw}"
            )));
        }
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::Control(format!(
                "frequency ratio must exceed 1 so the corners order, got {alpha}"
            )));
        }
        if !(z_lp > 0.0 && z_lp.is_finite()) {
            return Err(Error::Control(format!(
                "low-pass damping must be positive, got {z_lp}"
            )));
        }
        Ok(ChannelController {
            k_p: 1.0,
            omega_bw,
            alpha,
            omega_i: omega_bw / (alpha * alpha),
            omega_d: omega_bw / alpha,
            omega_lp: alpha * omega_bw,
            z_lp,
        })
    }

    pub fn with_gain(mut self, k_p: f64) -> Self {
        self.k_p = k_p;
        self
    }

    /// C(j omega). The integrator makes omega = 0 a pole; callers stay on
    /// positive grids.
    pub fn frf_at(&self, omega: f64) -> Complex64 {
        assert!(omega > 0.0, "controller evaluated at the integrator pole");
        let s = Complex64::new(0.0, omega);
        let integ = (s + self.omega_i) / s;
        let lead = s / self.omega_d + 1.0;
        let wlp2 = self.omega_lp * self.omega_lp;
        let lp = wlp2 / (s * s + 2.0 * self.z_lp * self.omega_lp * s + wlp2);
        self.k_p * integ * lead * lp
    }

    /// Expanded coefficient form, descending powers of s.
    pub fn rational(&self) -> RationalTf {
        let wlp2 = self.omega_lp * self.omega_lp;
        let g = self.k_p * wlp2;
        RationalTf {
            num: vec![
                g / self.omega_d,
                g * (1.0 + self.omega_i / self.omega_d),
                g * self.omega_i,
            ],
            den: vec![1.0, 2.0 * self.z_lp * self.omega_lp, wlp2, 0.0],
        }
    }
}

/// Polynomial ratio in s, coefficients in descending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalTf {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl RationalTf {
    pub fn eval(&self, s: Complex64) -> Complex64 {
        let horner = |c: &[f64]| {
            c.iter()
                .fold(Complex64::new(0.0, 0.0), |acc, k| acc * s + k)
        };
        horner(&self.num) / horner(&self.den)
    }
}

/// Loop-sign convention: Negative closes S = 1/(1 + GC), Positive flips the
/// loop gain's sign before closing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LoopSign {
    #[default]
    Negative,
    Positive,
}

impl LoopSign {
    fn factor(self) -> f64 {
        match self {
            LoopSign::Negative => 1.0,
            LoopSign::Positive => -1.0,
        }
    }
}

pub fn loop_gain_at(
    chan: &ChannelPlant,
    ctl: &ChannelController,
    sign: LoopSign,
    omega: f64,
) -> Complex64 {
    sign.factor() * chan.frf_at(omega) * ctl.frf_at(omega)
}

pub fn sensitivity_at(
    chan: &ChannelPlant,
    ctl: &ChannelController,
    sign: LoopSign,
    omega: f64,
) -> Complex64 {
    (loop_gain_at(chan, ctl, sign, omega) + 1.0).inv()
}

pub fn complementary_at(
    chan: &ChannelPlant,
    ctl: &ChannelController,
    sign: LoopSign,
    omega: f64,
) -> Complex64 {
    let l = loop_gain_at(chan, ctl, sign, omega);
    l / (l + 1.0)
}

/// Controller frequency response over a Hz grid.
pub fn controller_frf(ctl: &ChannelController, freqs_hz: &[f64]) -> Result<FrequencyResponse> {
    if freqs_hz.iter().any(|f| *f <= 0.0) {
        return Err(Error::Control(
            "controller grid must exclude the integrator pole at 0".to_string(),
        ));
    }
    let values = freqs_hz.iter().map(|f| ctl.frf_at(TAU * f)).collect();
    FrequencyResponse::new(freqs_hz.to_vec(), values)
}

fn wrap_pi(x: f64) -> f64 {
    let mut y = x % TAU;
    if y > PI {
        y -= TAU;
    } else if y <= -PI {
        y += TAU;
    }
    y
}

/// Open-loop poles at the origin: the integrator always contributes one, a
/// rigid-body plant path two more.
fn origin_poles(chan: &ChannelPlant) -> usize {
    if chan.rigid_residue != 0.0 {
        3
    } else {
        1
    }
}

/// Log grid spanning every corner of the loop, with extra clusters across
/// each lightly damped resonance so the fast phase transit is sampled.
fn winding_grid(chan: &ChannelPlant, ctl: &ChannelController, per_decade: usize) -> Vec<f64> {
    let mut lo = ctl.omega_i;
    let mut hi = ctl.omega_lp;
    for (w, _, r) in &chan.flex_residues {
        if *r != 0.0 {
            lo = lo.min(*w);
            hi = hi.max(*w);
        }
    }
    lo /= 1e3;
    hi *= 1e3;
    let decades = (hi / lo).log10();
    let n = (decades * per_decade as f64).ceil() as usize + 1;
    let mut grid: Vec<f64> = (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect();
    for (w, z, r) in &chan.flex_residues {
        if *r == 0.0 {
            continue;
        }
        for k in -8i32..=8 {
            let wk = w * (1.0 + k as f64 * z);
            if wk > lo && wk < hi {
                grid.push(wk);
            }
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

fn winding_count(
    chan: &ChannelPlant,
    ctl: &ChannelController,
    sign: LoopSign,
    per_decade: usize,
) -> i64 {
    let grid = winding_grid(chan, ctl, per_decade);
    let mut delta = 0.0;
    let mut prev = (loop_gain_at(chan, ctl, sign, grid[0]) + 1.0).arg();
    for w in &grid[1..] {
        let cur = (loop_gain_at(chan, ctl, sign, *w) + 1.0).arg();
        delta += wrap_pi(cur - prev);
        prev = cur;
    }
    let q = origin_poles(chan) as f64;
    ((2.0 * delta - q * PI) / TAU).round() as i64
}

/// Closed-loop stability via the Nyquist winding count, densifying the grid
/// until the count stops moving.
pub fn nyquist_stable(
    chan: &ChannelPlant,
    ctl: &ChannelController,
    sign: LoopSign,
) -> Result<bool> {
    if ctl.k_p == 0.0 {
        return Ok(true);
    }
    let mut per_decade = 200;
    let mut prev: Option<i64> = None;
    while per_decade <= 3200 {
        let n = winding_count(chan, ctl, sign, per_decade);
        if prev == Some(n) {
            return Ok(n == 0);
        }
        prev = Some(n);
        per_decade *= 2;
    }
    Err(Error::Control(
        "winding count kept changing under grid refinement".to_string(),
    ))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SensitivityPeak {
    pub value: f64,
    /// Frequency of the peak, rad/s. Meaningless when unstable.
    pub omega: f64,
    pub stable: bool,
}

fn golden_max<F: Fn(f64) -> f64>(mut a: f64, mut b: f64, f: F) -> (f64, f64) {
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > 1e-7 * a.abs().max(1e-30) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Assessment grid: 400 points per decade over [w_bw/100, 100 w_bw], plus
/// clusters straddling each resonance at half-linewidth steps so narrow |S|
/// spikes cannot slip between grid points.
fn sensitivity_grid(chan: &ChannelPlant, ctl: &ChannelController) -> Vec<f64> {
    let lo = ctl.omega_bw / 100.0;
    let hi = ctl.omega_bw * 100.0;
    let n = 4 * 400 + 1;
    let mut grid: Vec<f64> = (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect();
    for (w, z, r) in &chan.flex_residues {
        if *r == 0.0 {
            continue;
        }
        for k in -16i32..=16 {
            let wk = w * (1.0 + 0.5 * k as f64 * z);
            if wk > lo && wk < hi {
                grid.push(wk);
            }
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Peak |S| over [w_bw/100, 100 w_bw], golden-refined around the grid max.
/// Stability is settled first: an unstable loop reports an infinite peak
/// rather than a meaningless grid maximum.
pub fn sensitivity_peak(
    chan: &ChannelPlant,
    ctl: &ChannelController,
    sign: LoopSign,
) -> Result<SensitivityPeak> {
    if ctl.k_p == 0.0 {
        return Ok(SensitivityPeak {
            value: 1.0,
            omega: ctl.omega_bw,
            stable: true,
        });
    }
    if !nyquist_stable(chan, ctl, sign)? {
        return Ok(SensitivityPeak {
            value: f64::INFINITY,
            omega: ctl.omega_bw,
            stable: false,
        });
    }
    let grid = sensitivity_grid(chan, ctl);
    let s_mag = |w: f64| sensitivity_at(chan, ctl, sign, w).norm();
    let (mut best_i, mut best) = (0usize, 0.0f64);
    for (i, w) in grid.iter().enumerate() {
        let m = s_mag(*w);
        if m > best {
            best = m;
            best_i = i;
        }
    }
    let a = grid[best_i.saturating_sub(1)];
    let b = grid[(best_i + 1).min(grid.len() - 1)];
    let (w_ref, m_ref) = golden_max(a, b, s_mag);
    let (omega, value) = if m_ref > best {
        (w_ref, m_ref)
    } else {
        (grid[best_i], best)
    };
    Ok(SensitivityPeak {
        value,
        omega,
        stable: true,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Margins {
    /// Gain increase to instability: min 1/|L| over negative-real-axis
    /// crossings left of the unit circle; infinite when there is none.
    pub gain_margin: f64,
    /// Smallest absolute phase distance to the critical axis over all
    /// unit-gain crossings, degrees; infinite when the loop never crosses
    /// unit gain. Absolute because a loop may cross over on either side.
    pub phase_margin: f64,
}

/// Classical margins from crossing detection on the sensitivity grid plus
/// bisection on each bracket.
pub fn margins(chan: &ChannelPlant, ctl: &ChannelController, sign: LoopSign) -> Result<Margins> {
    if ctl.k_p == 0.0 {
        return Ok(Margins {
            gain_margin: f64::INFINITY,
            phase_margin: f64::INFINITY,
        });
    }
    let grid = sensitivity_grid(chan, ctl);
    let l_at = |w: f64| loop_gain_at(chan, ctl, sign, w);

    let bisect = |mut a: f64, mut b: f64, f: &dyn Fn(f64) -> f64| {
        let mut fa = f(a);
        for _ in 0..200 {
            let m = (a * b).sqrt();
            let fm = f(m);
            if fa * fm <= 0.0 {
                b = m;
            } else {
                a = m;
                fa = fm;
            }
            if (b - a) < 1e-12 * a {
                break;
            }
        }
        (a * b).sqrt()
    };

    let mut phase_margin = f64::INFINITY;
    let gain_err = |w: f64| l_at(w).norm().ln();
    let mut prev_g = gain_err(grid[0]);
    for pair in grid.windows(2) {
        let cur_g = gain_err(pair[1]);
        if prev_g * cur_g <= 0.0 && prev_g != cur_g {
            let wc = bisect(pair[0], pair[1], &gain_err);
            let pm = wrap_pi(PI + l_at(wc).arg()).abs().to_degrees();
            phase_margin = phase_margin.min(pm);
        }
        prev_g = cur_g;
    }

    // upward margin only: crossings of the negative real axis left of -1
    // bound gain reduction, not the classical gain-increase margin
    let mut gain_margin = f64::INFINITY;
    let phase_dist = |w: f64| wrap_pi(l_at(w).arg() + PI);
    let mut prev_d = phase_dist(grid[0]);
    for pair in grid.windows(2) {
        let cur_d = phase_dist(pair[1]);
        if prev_d * cur_d <= 0.0 && (cur_d - prev_d).abs() < PI && prev_d != cur_d {
            let wc = bisect(pair[0], pair[1], &phase_dist);
            let mag = l_at(wc).norm();
            if mag < 1.0 {
                gain_margin = gain_margin.min(1.0 / mag);
            }
        }
        prev_d = cur_d;
    }

    Ok(Margins {
        gain_margin,
        phase_margin,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TuneOptions {
    pub alpha: f64,
    pub z_lp: f64,
    /// Bandwidth search range, rad/s.
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub ms_bound: f64,
    pub sign: LoopSign,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            alpha: DEFAULT_ALPHA,
            z_lp: DEFAULT_Z_LP,
            omega_lo: TAU * 0.5,
            omega_hi: TAU * 200.0,
            ms_bound: DEFAULT_MS_BOUND,
            sign: LoopSign::Negative,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CandidateOutcome {
    pub k_p: f64,
    pub stable: bool,
    pub peak: f64,
}

impl CandidateOutcome {
    pub fn feasible(&self, ms_bound: f64) -> bool {
        self.stable && self.peak <= ms_bound
    }
}

/// Apply the gain rule at a candidate bandwidth and measure the loop.
pub fn evaluate_bandwidth(
    chan: &ChannelPlant,
    omega_bw: f64,
    opts: &TuneOptions,
) -> Result<CandidateOutcome> {
    let c1 = ChannelController::from_bandwidth(omega_bw, opts.alpha, opts.z_lp)?;
    let open = (c1.frf_at(omega_bw) * chan.frf_at(omega_bw)).norm();
    if !(open > 0.0 && open.is_finite()) {
        return Err(Error::Control(format!(
            "plant response vanishes at candidate crossover {omega_bw} rad/s"
        )));
    }
    let ctl = c1.with_gain(1.0 / open);
    let peak = sensitivity_peak(chan, &ctl, opts.sign)?;
    Ok(CandidateOutcome {
        k_p: ctl.k_p,
        stable: peak.stable,
        peak: peak.value,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningResult {
    pub controller: ChannelController,
    /// Bandwidth actually returned by the search, rad/s.
    pub achieved_crossover: f64,
    pub sensitivity_peak: f64,
    pub gain_margin: f64,
    /// Degrees.
    pub phase_margin: f64,
    pub feasible: bool,
    /// Nearest probed bandwidth found infeasible, if the search was not
    /// stopped by the range cap.
    pub infeasible_above: Option<f64>,
}

/// Maximize bandwidth subject to stability and the sensitivity bound.
/// Feasible at the range cap returns the cap; otherwise a descending scan
/// brackets the boundary and bisection tightens it to 0.5% relative,
/// returning the last strictly feasible bandwidth.
pub fn tune_channel(chan: &ChannelPlant, opts: &TuneOptions) -> Result<TuningResult> {
    if !(opts.omega_lo > 0.0 && opts.omega_hi > opts.omega_lo) {
        return Err(Error::Control(format!(
            "bandwidth search range [{}, {}] is not an increasing positive interval",
            opts.omega_lo, opts.omega_hi
        )));
    }
    if opts.ms_bound < 1.0 {
        return Err(Error::Control(format!(
            "sensitivity bound below 1 is unreachable for loops with integral action, got {}",
            opts.ms_bound
        )));
    }

    let top = evaluate_bandwidth(chan, opts.omega_hi, opts)?;
    if top.feasible(opts.ms_bound) {
        return finalize(chan, opts, opts.omega_hi, top, None);
    }

    let mut candidates = Vec::new();
    let mut w = opts.omega_hi / 1.3;
    while w > opts.omega_lo {
        candidates.push(w);
        w /= 1.3;
    }
    candidates.push(opts.omega_lo);

    let mut infeasible_above = opts.omega_hi;
    let mut best_attempt = (opts.omega_hi, top.peak);
    let mut feasible_at = None;
    for cand in candidates {
        let out = evaluate_bandwidth(chan, cand, opts)?;
        if out.peak < best_attempt.1 {
            best_attempt = (cand, out.peak);
        }
        if out.feasible(opts.ms_bound) {
            feasible_at = Some((cand, out));
            break;
        }
        infeasible_above = cand;
    }
    let (mut lo, mut lo_out) = feasible_at.ok_or_else(|| {
        Error::Infeasible(format!(
            "no bandwidth in [{:.4}, {:.4}] rad/s meets peak <= {} (best attempt {:.4} rad/s, peak {:.4})",
            opts.omega_lo, opts.omega_hi, opts.ms_bound, best_attempt.0, best_attempt.1
        ))
    })?;

    let mut hi = infeasible_above;
    while (hi - lo) / lo > BANDWIDTH_RESOLUTION {
        let mid = (lo * hi).sqrt();
        let out = evaluate_bandwidth(chan, mid, opts)?;
        if out.feasible(opts.ms_bound) {
            lo = mid;
            lo_out = out;
        } else {
            hi = mid;
        }
    }
    finalize(chan, opts, lo, lo_out, Some(hi))
}

fn finalize(
    chan: &ChannelPlant,
    opts: &TuneOptions,
    omega_bw: f64,
    out: CandidateOutcome,
    infeasible_above: Option<f64>,
) -> Result<TuningResult> {
    let controller =
        ChannelController::from_bandwidth(omega_bw, opts.alpha, opts.z_lp)?.with_gain(out.k_p);
    let m = margins(chan, &controller, opts.sign)?;
    debug_assert!(out.peak <= opts.ms_bound + 1e-6);
    Ok(TuningResult {
        controller,
        achieved_crossover: omega_bw,
        sensitivity_peak: out.peak,
        gain_margin: m.gain_margin,
        phase_margin: m.phase_margin,
        feasible: true,
        infeasible_above,
    })
}
