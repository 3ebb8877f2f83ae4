//! Mass minimization over region thicknesses subject to modal frequency
//! constraints: controlled flexible modes capped at omega_low, the next
//! uncontrolled modes floored at omega_high, thicknesses boxed.
//!
//! The search is derivative-free: deterministic multistart compass search
//! with a feasibility-first merit order, warm-starting the eigensolver from
//! the previous candidate's basis. An exhaustive grid mode doubles as the
//! oracle for low-dimensional instances.

use crate::eigen::EigenOptions;
use crate::error::{Error, Result};
use crate::geometry::{Material, StageGeometry};
use crate::modal::flexible_frequencies;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const TAU: f64 = std::f64::consts::TAU;
/// Relative feasibility tolerance on constraint slacks.
pub const SLACK_TOL_REL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FrequencyConstraintSpec {
    /// Upper bound for controlled-mode frequencies (rad/s).
    pub omega_low: f64,
    /// Lower bound for the constrained uncontrolled modes (rad/s).
    pub omega_high: f64,
    pub n_controlled: usize,
    pub n_constrained_uncontrolled: usize,
}

impl FrequencyConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_low > 0.0 && self.omega_low < self.omega_high) {
            return Err(Error::Config(format!(
                "need 0 < omega_low < omega_high, got {} and {}",
                self.omega_low, self.omega_high
            )));
        }
        if self.n_controlled < 1 {
            return Err(Error::Config("need at least one controlled mode".into()));
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        self.n_controlled + self.n_constrained_uncontrolled
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationResult {
    /// Region thicknesses at the returned point (m).
    pub theta_p_star: Vec<f64>,
    pub mass: f64,
    /// Slack per constraint (rad/s); nonnegative means satisfied.
    pub constraint_values: Vec<f64>,
    /// Number of eigensolve evaluations spent.
    pub iterations: usize,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizeOptions {
    pub max_evaluations: usize,
    /// Step tolerance relative to each region's box width.
    pub step_tol_rel: f64,
    pub n_random_starts: usize,
    /// Samples for the uniform-fraction coarse feasibility sweep.
    pub coarse_sweep: usize,
    pub seed: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_evaluations: 3000,
            step_tol_rel: 1e-4,
            n_random_starts: 3,
            coarse_sweep: 12,
            seed: 1,
        }
    }
}

/// What the frequencies must satisfy.
#[derive(Clone, Copy)]
enum Goal<'a> {
    Band(&'a FrequencyConstraintSpec),
    MinFirstResonance(f64),
}

impl Goal<'_> {
    fn n_freqs(&self) -> usize {
        match self {
            Goal::Band(s) => s.n_modes(),
            Goal::MinFirstResonance(_) => 1,
        }
    }

    /// Slack (rad/s) and normalization scale per constraint.
    fn slacks(&self, freqs_hz: &[f64]) -> Vec<(f64, f64)> {
        match self {
            Goal::Band(s) => {
                let mut out = Vec::with_capacity(s.n_modes());
                for f in &freqs_hz[..s.n_controlled] {
                    out.push((s.omega_low - TAU * f, s.omega_low));
                }
                for f in &freqs_hz[s.n_controlled..s.n_modes()] {
                    out.push((TAU * f - s.omega_high, s.omega_high));
                }
                out
            }
            Goal::MinFirstResonance(bound) => {
                vec![(TAU * freqs_hz[0] - bound, bound.max(1.0))]
            }
        }
    }
}

#[derive(Clone)]
struct Candidate {
    theta: Vec<f64>,
    mass: f64,
    slacks: Vec<f64>,
    violation: f64,
    feasible: bool,
}

/// Feasibility first, then mass, then violation. Strict improvement only.
fn better(a: &Candidate, b: &Candidate) -> bool {
    match (a.feasible, b.feasible) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.mass < b.mass * (1.0 - 1e-12),
        (false, false) => {
            a.violation < b.violation * (1.0 - 1e-12)
                || (a.violation <= b.violation && a.mass < b.mass * (1.0 - 1e-12))
        }
    }
}

struct Evaluator<'a> {
    template: &'a StageGeometry,
    material: &'a Material,
    goal: Goal<'a>,
    eigen: EigenOptions,
    warm: Option<DMatrix<f64>>,
    evals: usize,
}

impl Evaluator<'_> {
    /// One eigensolve at theta. Convergence failures rank as unusable rather
    /// than aborting the whole search.
    fn eval(&mut self, theta: &[f64]) -> Result<Candidate> {
        self.evals += 1;
        let geom = self.template.with_thickness(theta);
        let mass = geom.total_mass(self.material);
        let solved = flexible_frequencies(
            &geom,
            self.material,
            self.goal.n_freqs(),
            self.warm.as_ref(),
            &self.eigen,
        );
        match solved {
            Ok((freqs, basis)) => {
                self.warm = Some(basis);
                let pairs = self.goal.slacks(&freqs);
                let violation: f64 = pairs
                    .iter()
                    .map(|(s, scale)| (-s / scale).max(0.0))
                    .sum();
                let feasible = pairs.iter().all(|(s, scale)| *s >= -SLACK_TOL_REL * scale);
                Ok(Candidate {
                    theta: theta.to_vec(),
                    mass,
                    slacks: pairs.into_iter().map(|(s, _)| s).collect(),
                    violation,
                    feasible,
                })
            }
            Err(Error::EigenConvergence { .. }) => Ok(Candidate {
                theta: theta.to_vec(),
                mass,
                slacks: vec![],
                violation: f64::INFINITY,
                feasible: false,
            }),
            Err(e) => Err(e),
        }
    }
}

fn clamp_box(theta: &mut [f64], bounds: &[(f64, f64)]) {
    for (t, (lo, hi)) in theta.iter_mut().zip(bounds) {
        *t = t.clamp(*lo, *hi);
    }
}

/// Compass search from one start; best-of-poll acceptance, halving steps.
fn compass_search(
    ev: &mut Evaluator,
    start: &[f64],
    opts: &OptimizeOptions,
) -> Result<Candidate> {
    let bounds = &ev.template.bounds;
    let widths: Vec<f64> = bounds.iter().map(|(lo, hi)| hi - lo).collect();
    let mut step: Vec<f64> = widths.iter().map(|w| 0.25 * w).collect();
    let mut theta = start.to_vec();
    clamp_box(&mut theta, bounds);
    let mut cur = ev.eval(&theta)?;

    loop {
        if ev.evals >= opts.max_evaluations {
            return Ok(cur);
        }
        let mut moved = false;
        let mut best: Option<Candidate> = None;
        for r in 0..theta.len() {
            if step[r] <= 0.0 {
                continue;
            }
            for dir in [1.0, -1.0] {
                let mut th = cur.theta.clone();
                th[r] = (th[r] + dir * step[r]).clamp(bounds[r].0, bounds[r].1);
                if th[r] == cur.theta[r] {
                    continue;
                }
                let cand = ev.eval(&th)?;
                let reference = best.as_ref().unwrap_or(&cur);
                if better(&cand, reference) {
                    best = Some(cand);
                }
                if ev.evals >= opts.max_evaluations {
                    break;
                }
            }
        }
        if let Some(b) = best {
            cur = b;
            moved = true;
        }
        if !moved {
            for s in step.iter_mut() {
                *s *= 0.5;
            }
            let done = step
                .iter()
                .zip(&widths)
                .all(|(s, w)| *w == 0.0 || *s < opts.step_tol_rel * w);
            if done {
                return Ok(cur);
            }
        }
    }
}

fn run_search(
    template: &StageGeometry,
    material: &Material,
    goal: Goal,
    opts: &OptimizeOptions,
) -> Result<OptimizationResult> {
    template.validate()?;
    material.validate()?;
    let bounds = &template.bounds;
    let nr = bounds.len();
    let mut ev = Evaluator {
        template,
        material,
        goal,
        eigen: EigenOptions::default(),
        warm: None,
        evals: 0,
    };

    // coarse feasibility sweep along the uniform fraction, thick to thin so
    // the warm basis tracks smoothly
    let mut best: Option<Candidate> = None;
    let sweep = opts.coarse_sweep.max(2);
    let mut sweep_best: Option<Candidate> = None;
    for k in (0..sweep).rev() {
        let s = k as f64 / (sweep - 1) as f64;
        let theta: Vec<f64> = bounds.iter().map(|(lo, hi)| lo + s * (hi - lo)).collect();
        let cand = ev.eval(&theta)?;
        if sweep_best.as_ref().is_none_or(|b| better(&cand, b)) {
            sweep_best = Some(cand);
        }
    }

    let mut starts: Vec<Vec<f64>> = Vec::new();
    starts.push(bounds.iter().map(|(_, hi)| *hi).collect());
    if let Some(sb) = &sweep_best {
        starts.push(sb.theta.clone());
    }
    starts.push(bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.n_random_starts {
        starts.push(
            bounds
                .iter()
                .map(|(lo, hi)| lo + rng.random::<f64>() * (hi - lo))
                .collect(),
        );
    }
    starts.dedup();

    if let Some(sb) = sweep_best {
        best = Some(sb);
    }
    for start in &starts {
        if ev.evals >= opts.max_evaluations {
            break;
        }
        let found = compass_search(&mut ev, start, opts)?;
        if best.as_ref().is_none_or(|b| better(&found, b)) {
            best = Some(found);
        }
    }

    let best = best.ok_or_else(|| Error::Infeasible("no candidate evaluated".into()))?;
    let _ = nr;
    Ok(OptimizationResult {
        theta_p_star: best.theta,
        mass: best.mass,
        constraint_values: best.slacks,
        iterations: ev.evals,
        feasible: best.feasible,
    })
}

/// Constraint slacks (rad/s) at one thickness vector: positive slack means
/// satisfied. First the controlled-mode caps, then the uncontrolled floors.
pub fn evaluate_constraints(
    template: &StageGeometry,
    material: &Material,
    theta_p: &[f64],
    spec: &FrequencyConstraintSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let geom = template.with_thickness(theta_p);
    geom.validate()?;
    let (freqs, _) = flexible_frequencies(
        &geom,
        material,
        spec.n_modes(),
        None,
        &EigenOptions::default(),
    )?;
    Ok(Goal::Band(spec)
        .slacks(&freqs)
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

/// Minimize mass subject to the frequency band constraints.
pub fn optimize_structure(
    template: &StageGeometry,
    material: &Material,
    spec: &FrequencyConstraintSpec,
    opts: &OptimizeOptions,
) -> Result<OptimizationResult> {
    spec.validate()?;
    run_search(template, material, Goal::Band(spec), opts)
}

/// Minimize mass subject to the first flexible resonance staying above
/// `min_first_resonance` (rad/s). The conventional stiff-design comparator.
pub fn design_baseline(
    template: &StageGeometry,
    material: &Material,
    min_first_resonance: f64,
    opts: &OptimizeOptions,
) -> Result<OptimizationResult> {
    if min_first_resonance < 0.0 {
        return Err(Error::Config("resonance bound must be nonnegative".into()));
    }
    run_search(
        template,
        material,
        Goal::MinFirstResonance(min_first_resonance),
        opts,
    )
}

/// Exhaustive grid search, intended as the oracle for instances with 1 or 2
/// regions. Grid includes the box endpoints.
pub fn exhaustive_search(
    template: &StageGeometry,
    material: &Material,
    spec: &FrequencyConstraintSpec,
    samples_per_axis: usize,
) -> Result<OptimizationResult> {
    spec.validate()?;
    exhaustive_goal(template, material, Goal::Band(spec), samples_per_axis)
}

/// Exhaustive oracle for the baseline goal.
pub fn exhaustive_baseline(
    template: &StageGeometry,
    material: &Material,
    min_first_resonance: f64,
    samples_per_axis: usize,
) -> Result<OptimizationResult> {
    exhaustive_goal(
        template,
        material,
        Goal::MinFirstResonance(min_first_resonance),
        samples_per_axis,
    )
}

fn exhaustive_goal(
    template: &StageGeometry,
    material: &Material,
    goal: Goal,
    samples_per_axis: usize,
) -> Result<OptimizationResult> {
    template.validate()?;
    let nr = template.bounds.len();
    if samples_per_axis < 2 {
        return Err(Error::Config("need at least 2 samples per axis".into()));
    }
    let total = samples_per_axis.checked_pow(nr as u32).ok_or_else(|| {
        Error::Config(format!("grid of {samples_per_axis}^{nr} points overflows"))
    })?;
    if total > 200_000 {
        return Err(Error::Config(format!(
            "exhaustive grid of {total} points is too large; use optimize_structure"
        )));
    }
    let mut ev = Evaluator {
        template,
        material,
        goal,
        eigen: EigenOptions::default(),
        warm: None,
        evals: 0,
    };
    let mut best: Option<Candidate> = None;
    for flat in 0..total {
        let mut idx = flat;
        let theta: Vec<f64> = template
            .bounds
            .iter()
            .map(|(lo, hi)| {
                let k = idx % samples_per_axis;
                idx /= samples_per_axis;
                lo + (hi - lo) * k as f64 / (samples_per_axis - 1) as f64
            })
            .collect();
        let cand = ev.eval(&theta)?;
        if best.as_ref().is_none_or(|b| better(&cand, b)) {
            best = Some(cand);
        }
    }
    let best = best.expect("grid has at least one point");
    Ok(OptimizationResult {
        theta_p_star: best.theta,
        mass: best.mass,
        constraint_values: best.slacks,
        iterations: ev.evals,
        feasible: best.feasible,
    })
}
