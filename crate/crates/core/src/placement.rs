//! Actuator and sensor placement: modal grammians, the placement objectives,
//! exhaustive grid optimization over feasible domains, and a Lyapunov-equation
//! oracle used to validate the light-damping closed forms.
//!
//! Generalized coordinate order everywhere in this module (and in the plant):
//! [x, y, z, Rx, Ry, Rz, flexible 1..]. All shapes are mass-normalized, so a
//! transducer sample is both the force-to-mode gain (actuation) and the
//! mode-to-reading gain (sensing).

use crate::error::{Error, Result};
use crate::fe::ShapeComponent;
use crate::modal::{DampingPolicy, ModalModel};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::Write;

const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// A point transducer: force injector (actuator) or displacement pickup
/// (sensor) acting along `axis` at height `z_offset` above the midplane.
/// `authority` scales force (actuator) or reading gain (sensor).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Transducer {
    pub x: f64,
    pub y: f64,
    pub z_offset: f64,
    pub axis: Axis,
    pub authority: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let tol = 1e-12;
        x >= self.x_min - tol && x <= self.x_max + tol && y >= self.y_min - tol
            && y <= self.y_max + tol
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(Error::Config(format!(
                "empty domain rectangle [{}, {}] x [{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        Ok(())
    }
}

fn in_domains(domains: &[Rect], x: f64, y: f64) -> bool {
    domains.iter().any(|r| r.contains(x, y))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacementConfig {
    pub actuators: Vec<Transducer>,
    pub sensors: Vec<Transducer>,
    pub domain_a: Vec<Rect>,
    pub domain_s: Vec<Rect>,
    pub gamma: f64,
    /// Objective values at the returned placement.
    pub actuator_objective: f64,
    pub sensor_objective: f64,
}

impl PlacementConfig {
    /// Over-actuation check: both sets must cover 6 rigid DOFs plus the
    /// controlled flexible modes, and every transducer must sit inside its
    /// feasible domain.
    pub fn validate(&self, n_controlled: usize) -> Result<()> {
        let need = 6 + n_controlled;
        if self.actuators.len() < need {
            return Err(Error::Placement(format!(
                "{} actuators cannot command 6 rigid DOFs + {n_controlled} modes",
                self.actuators.len()
            )));
        }
        if self.sensors.len() < need {
            return Err(Error::Placement(format!(
                "{} sensors cannot observe 6 rigid DOFs + {n_controlled} modes",
                self.sensors.len()
            )));
        }
        for t in &self.actuators {
            if !in_domains(&self.domain_a, t.x, t.y) {
                return Err(Error::OutOfDomain { x: t.x, y: t.y });
            }
        }
        for t in &self.sensors {
            if !in_domains(&self.domain_s, t.x, t.y) {
                return Err(Error::OutOfDomain { x: t.x, y: t.y });
            }
        }
        Ok(())
    }
}

/// Number of generalized coordinates: 6 rigid + retained flexible.
pub fn n_generalized(model: &ModalModel) -> usize {
    6 + model.n_flexible
}

/// Mass-normalized modal displacement of the attachment point along the
/// transducer axis, for generalized coordinate `gi` (module ordering).
///
/// A point at height h above the midplane moves in-plane by -h * grad(w)
/// when the plate bends, and rigid rotations move it by the usual cross
/// products about the mass center; both effects are what couples horizontal
/// transducers to rotations and bending.
pub fn sample_mode(model: &ModalModel, gi: usize, t: &Transducer) -> Result<f64> {
    let rb = &model.rigid_body;
    let (xc, yc) = rb.center;
    let inv_m = 1.0 / rb.mass.sqrt();
    let [ix, iy, iz] = rb.inertia;
    let h = t.z_offset;
    let raw = match t.axis {
        Axis::X => match gi {
            0 => inv_m,
            4 => h / iy.sqrt(),
            5 => -(t.y - yc) / iz.sqrt(),
            1 | 2 | 3 => 0.0,
            _ => -h * model.shape_at(gi - 3, t.x, t.y, ShapeComponent::DwDx)?,
        },
        Axis::Y => match gi {
            1 => inv_m,
            3 => -h / ix.sqrt(),
            5 => (t.x - xc) / iz.sqrt(),
            0 | 2 | 4 => 0.0,
            _ => -h * model.shape_at(gi - 3, t.x, t.y, ShapeComponent::DwDy)?,
        },
        Axis::Z => match gi {
            2 => inv_m,
            3 => (t.y - yc) / ix.sqrt(),
            4 => -(t.x - xc) / iy.sqrt(),
            0 | 1 | 5 => 0.0,
            _ => model.shape_at(gi - 3, t.x, t.y, ShapeComponent::W)?,
        },
    };
    Ok(raw * t.authority)
}

/// B_a: generalized force per unit actuator command, (6 + n_flex) x n_act.
pub fn actuation_map(model: &ModalModel, actuators: &[Transducer]) -> Result<DMatrix<f64>> {
    let ng = n_generalized(model);
    let mut b = DMatrix::zeros(ng, actuators.len());
    for (j, t) in actuators.iter().enumerate() {
        for gi in 0..ng {
            b[(gi, j)] = sample_mode(model, gi, t)?;
        }
    }
    Ok(b)
}

/// C_s: sensor reading per unit generalized coordinate, n_sens x (6 + n_flex).
pub fn sensing_map(model: &ModalModel, sensors: &[Transducer]) -> Result<DMatrix<f64>> {
    let ng = n_generalized(model);
    let mut c = DMatrix::zeros(sensors.len(), ng);
    for (i, t) in sensors.iter().enumerate() {
        for gi in 0..ng {
            c[(i, gi)] = sample_mode(model, gi, t)?;
        }
    }
    Ok(c)
}

fn grammian_weight(model: &ModalModel, damping: &DampingPolicy, flex_index: usize) -> Result<f64> {
    let f = model
        .flexible()
        .get(flex_index)
        .ok_or_else(|| Error::Placement(format!("flexible mode {flex_index} not retained")))?
        .frequency_hz;
    let omega = TAU * f;
    let zeta = damping.ratio(flex_index);
    if omega <= 0.0 || zeta <= 0.0 {
        return Err(Error::SingularGrammian(format!(
            "mode {flex_index}: omega = {omega}, zeta = {zeta}"
        )));
    }
    Ok(1.0 / (4.0 * zeta * omega))
}

/// Light-damping modal controllability grammian of one flexible mode.
pub fn controllability_grammian(
    model: &ModalModel,
    damping: &DampingPolicy,
    actuators: &[Transducer],
    flex_index: usize,
) -> Result<f64> {
    let w = grammian_weight(model, damping, flex_index)?;
    let mut sum = 0.0;
    for t in actuators {
        let s = sample_mode(model, 6 + flex_index, t)?;
        sum += s * s;
    }
    Ok(sum * w)
}

/// Dual of `controllability_grammian` for sensors.
pub fn observability_grammian(
    model: &ModalModel,
    damping: &DampingPolicy,
    sensors: &[Transducer],
    flex_index: usize,
) -> Result<f64> {
    controllability_grammian(model, damping, sensors, flex_index)
}

fn objective(
    model: &ModalModel,
    damping: &DampingPolicy,
    set: &[Transducer],
    n: usize,
    m: usize,
    gamma: f64,
) -> Result<f64> {
    // n = 0 is pure spillover avoidance, used by designs without mode control
    if n >= m || m > model.n_flexible {
        return Err(Error::Placement(format!(
            "need n < m <= {} retained modes, got n = {n}, m = {m}",
            model.n_flexible
        )));
    }
    if gamma < 0.0 {
        return Err(Error::Placement(format!("gamma must be >= 0, got {gamma}")));
    }
    let mut j = 0.0;
    for i in 0..n {
        j += controllability_grammian(model, damping, set, i)?;
    }
    for i in n..m {
        j -= gamma * controllability_grammian(model, damping, set, i)?;
    }
    Ok(j)
}

/// J_a: controlled-mode authority minus gamma-weighted spillover.
pub fn actuator_objective(
    model: &ModalModel,
    damping: &DampingPolicy,
    actuators: &[Transducer],
    n: usize,
    m: usize,
    gamma: f64,
) -> Result<f64> {
    objective(model, damping, actuators, n, m, gamma)
}

/// J_o: dual observability objective.
pub fn sensor_objective(
    model: &ModalModel,
    damping: &DampingPolicy,
    sensors: &[Transducer],
    n: usize,
    m: usize,
    gamma: f64,
) -> Result<f64> {
    objective(model, damping, sensors, n, m, gamma)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub x: f64,
    pub y: f64,
    pub objective: f64,
}

/// Single-transducer objective sampled over the feasible grid, for plotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Landscape {
    pub points: Vec<LandscapePoint>,
}

impl Landscape {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x_m,y_m,objective")?;
        for p in &self.points {
            writeln!(out, "{:.17e},{:.17e},{:.17e}", p.x, p.y, p.objective)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlacementOptions {
    pub domain_a: Vec<Rect>,
    pub domain_s: Vec<Rect>,
    pub gamma: f64,
    /// Grid intervals per axis inside each domain rectangle; points per axis
    /// is resolution + 1, so doubling the resolution nests the grids.
    pub resolution: usize,
    /// Place 4-fold mirror-symmetric groups instead of single points.
    pub symmetric: bool,
    pub n_controlled: usize,
    pub n_weighted: usize,
    /// Optimized placements per side (symmetric groups or single points).
    pub actuator_slots: usize,
    pub sensor_slots: usize,
    pub z_offset_a: f64,
    pub z_offset_s: f64,
    pub authority: f64,
    /// Transducers kept at user-fixed positions (in-plane drives and pickups).
    pub fixed_actuators: Vec<Transducer>,
    pub fixed_sensors: Vec<Transducer>,
    pub damping: DampingPolicy,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        PlacementOptions {
            domain_a: vec![],
            domain_s: vec![],
            gamma: 1.0,
            resolution: 8,
            symmetric: true,
            n_controlled: 1,
            n_weighted: 4,
            actuator_slots: 1,
            sensor_slots: 1,
            z_offset_a: 0.0,
            z_offset_s: 0.0,
            authority: 1.0,
            fixed_actuators: vec![],
            fixed_sensors: vec![],
            damping: DampingPolicy::Uniform(0.005),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlacementOutcome {
    pub config: PlacementConfig,
    pub actuator_landscape: Landscape,
    pub sensor_landscape: Landscape,
}

/// Mirror images of a base point under the plate's two midline reflections.
/// Points on a symmetry axis fold onto themselves and are deduplicated.
fn symmetry_group(model: &ModalModel, x: f64, y: f64) -> Vec<(f64, f64)> {
    let lx = model.geometry.length_x;
    let ly = model.geometry.length_y;
    let mut pts = vec![(x, y), (lx - x, y), (x, ly - y), (lx - x, ly - y)];
    pts.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    let mut unique: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        if !unique
            .iter()
            .any(|q| (p.0 - q.0).abs() < 1e-12 && (p.1 - q.1).abs() < 1e-12)
        {
            unique.push(p);
        }
    }
    unique
}

/// Candidate grid in documented scan order: domain rectangles in listed
/// order, then rows (y), then columns (x). Ties in the objective go to the
/// first candidate in this order.
fn candidate_grid(domains: &[Rect], resolution: usize) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    for r in domains {
        for iy in 0..=resolution {
            let y = r.y_min + (r.y_max - r.y_min) * iy as f64 / resolution as f64;
            for ix in 0..=resolution {
                let x = r.x_min + (r.x_max - r.x_min) * ix as f64 / resolution as f64;
                pts.push((x, y));
            }
        }
    }
    pts
}

struct SideSpec<'a> {
    domains: &'a [Rect],
    slots: usize,
    z_offset: f64,
    fixed: &'a [Transducer],
}

/// Grid argmax for one side. The set objective is a sum of independent
/// per-placement terms, so the optimal k distinct placements are exactly the
/// k best grid candidates.
fn optimize_side(
    model: &ModalModel,
    opts: &PlacementOptions,
    side: &SideSpec,
) -> Result<(Vec<Transducer>, f64, Landscape)> {
    for r in side.domains {
        r.validate()?;
    }
    if side.domains.is_empty() {
        return Err(Error::Placement("no feasible domain rectangles".into()));
    }
    if opts.resolution < 2 {
        return Err(Error::Placement(format!(
            "grid resolution must be >= 2, got {}",
            opts.resolution
        )));
    }

    let single = |x: f64, y: f64| Transducer {
        x,
        y,
        z_offset: side.z_offset,
        axis: Axis::Z,
        authority: opts.authority,
    };

    let mut landscape = Vec::new();
    let mut scored: Vec<(usize, f64, Vec<Transducer>)> = Vec::new();
    let mut any_controllable = false;
    for (idx, (x, y)) in candidate_grid(side.domains, opts.resolution).iter().enumerate() {
        let group: Vec<Transducer> = if opts.symmetric {
            let pts = symmetry_group(model, *x, *y);
            if !pts.iter().all(|(px, py)| in_domains(side.domains, *px, *py)) {
                continue;
            }
            pts.into_iter().map(|(px, py)| single(px, py)).collect()
        } else {
            vec![single(*x, *y)]
        };
        let j = objective(
            model,
            &opts.damping,
            &group,
            opts.n_controlled,
            opts.n_weighted,
            opts.gamma,
        )?;
        let controlled: f64 = (0..opts.n_controlled)
            .map(|i| controllability_grammian(model, &opts.damping, &group, i))
            .sum::<Result<f64>>()?;
        if controlled > 0.0 {
            any_controllable = true;
        }
        landscape.push(LandscapePoint {
            x: *x,
            y: *y,
            objective: j,
        });
        scored.push((idx, j, group));
    }
    if scored.len() < side.slots {
        return Err(Error::Placement(format!(
            "{} feasible grid candidates cannot fill {} slots",
            scored.len(),
            side.slots
        )));
    }
    if !any_controllable && opts.n_controlled > 0 {
        return Err(Error::Placement(
            "no grid placement couples to the controlled modes".into(),
        ));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut chosen = side.fixed.to_vec();
    let mut total = 0.0;
    for (_, j, group) in scored.into_iter().take(side.slots) {
        total += j;
        chosen.extend(group);
    }
    Ok((chosen, total, Landscape { points: landscape }))
}

/// Optimize actuator and sensor placements independently over their domains.
pub fn optimize_placement(model: &ModalModel, opts: &PlacementOptions) -> Result<PlacementOutcome> {
    if opts.n_weighted > model.n_flexible {
        return Err(Error::Placement(format!(
            "objective weights {} modes but only {} are retained",
            opts.n_weighted, model.n_flexible
        )));
    }
    let (actuators, j_a, lands_a) = optimize_side(
        model,
        opts,
        &SideSpec {
            domains: &opts.domain_a,
            slots: opts.actuator_slots,
            z_offset: opts.z_offset_a,
            fixed: &opts.fixed_actuators,
        },
    )?;
    let (sensors, j_o, lands_s) = optimize_side(
        model,
        opts,
        &SideSpec {
            domains: &opts.domain_s,
            slots: opts.sensor_slots,
            z_offset: opts.z_offset_s,
            fixed: &opts.fixed_sensors,
        },
    )?;
    Ok(PlacementOutcome {
        config: PlacementConfig {
            actuators,
            sensors,
            domain_a: opts.domain_a.clone(),
            domain_s: opts.domain_s.clone(),
            gamma: opts.gamma,
            actuator_objective: j_a,
            sensor_objective: j_o,
        },
        actuator_landscape: lands_a,
        sensor_landscape: lands_s,
    })
}

/// Continuous Lyapunov equation A W + W A^T + Q = 0 by Kronecker
/// vectorization. A must be Hurwitz. Intended for small oracle systems.
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Placement("lyapunov inputs must be square and conformal".into()));
    }
    let max_re = a
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_re >= 0.0 {
        return Err(Error::NotHurwitz(max_re));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let big = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = nalgebra::DVector::from_column_slice(q.as_slice());
    let sol = big
        .lu()
        .solve(&(-rhs))
        .ok_or_else(|| Error::Placement("lyapunov system singular".into()))?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// 2-state balanced modal realization (omega q, qdot) of one damped mode
/// driven with input gain b. Its controllability grammian diagonal is the
/// light-damping closed form b^2 / (4 zeta omega).
pub fn balanced_mode_state_matrices(omega: f64, zeta: f64, b: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, omega, -omega, -2.0 * zeta * omega]);
    let bb = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, b * b]);
    (a, bb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Material, StageGeometry};
    use crate::modal::{Mode, ModeKind, RigidBody};
    use nalgebra::DVector;

    /// Synthetic model on a 2x2 mesh whose single flexible "mode" is the
    /// exactly-representable bilinear field w = (x - cx)(y - cy).
    fn synthetic_model(extra: Vec<(f64, Vec<f64>)>) -> ModalModel {
        let geom = StageGeometry::uniform(0.4, 0.4, 2, 2, 0.005, (0.001, 0.02), vec![]);
        let nn = geom.n_nodes();
        let mut twist = DVector::zeros(3 * nn);
        for node in 0..nn {
            let (x, y) = geom.node_coords(node);
            twist[3 * node] = (x - 0.2) * (y - 0.2);
            twist[3 * node + 1] = y - 0.2;
            twist[3 * node + 2] = x - 0.2;
        }
        let mut modes = vec![
            Mode { kind: ModeKind::Heave, frequency_hz: 0.0, shape: DVector::zeros(3 * nn) },
            Mode { kind: ModeKind::RollX, frequency_hz: 0.0, shape: DVector::zeros(3 * nn) },
            Mode { kind: ModeKind::RollY, frequency_hz: 0.0, shape: DVector::zeros(3 * nn) },
            Mode { kind: ModeKind::Flexible, frequency_hz: 50.0, shape: twist },
        ];
        for (f, nodal_w) in extra {
            let mut s = DVector::zeros(3 * nn);
            for (node, w) in nodal_w.iter().enumerate() {
                s[3 * node] = *w;
            }
            modes.push(Mode { kind: ModeKind::Flexible, frequency_hz: f, shape: s });
        }
        let n_flexible = modes.len() - 3;
        ModalModel {
            geometry: geom,
            material: Material::aluminum_7075(),
            modes,
            rigid_body: RigidBody { mass: 2.0, inertia: [0.03, 0.03, 0.06], center: (0.2, 0.2) },
            n_flexible,
            eigen_iterations: 0,
        }
    }

    fn z_at(x: f64, y: f64) -> Transducer {
        Transducer { x, y, z_offset: 0.0, axis: Axis::Z, authority: 1.0 }
    }

    #[test]
    fn nodal_line_placement_is_uncontrollable() {
        let model = synthetic_model(vec![]);
        let damping = DampingPolicy::Uniform(0.005);
        // the bilinear twist vanishes on both centerlines
        for t in [z_at(0.2, 0.31), z_at(0.07, 0.2)] {
            let w = controllability_grammian(&model, &damping, &[t], 0).unwrap();
            assert!(w.abs() < 1e-18);
        }
    }

    #[test]
    fn unit_sample_grammian_arithmetic() {
        // uniform w = 1 flexible shape: sample is exactly 1 anywhere
        let model = synthetic_model(vec![(50.0, vec![1.0; 9])]);
        let damping = DampingPolicy::Uniform(0.005);
        let w = controllability_grammian(&model, &damping, &[z_at(0.1, 0.3)], 1).unwrap();
        let expect = 1.0 / (4.0 * 0.005 * TAU * 50.0);
        assert!((w - expect).abs() < 1e-12 * expect);
        assert!((expect - 0.159_154_94).abs() < 1e-7);
        let dual = observability_grammian(&model, &damping, &[z_at(0.1, 0.3)], 1).unwrap();
        assert_eq!(w, dual);
    }

    #[test]
    fn authority_scales_grammian_quadratically() {
        let model = synthetic_model(vec![]);
        let damping = DampingPolicy::Uniform(0.005);
        let mut t = z_at(0.1, 0.1);
        let w1 = controllability_grammian(&model, &damping, &[t], 0).unwrap();
        t.authority = 3.0;
        let w3 = controllability_grammian(&model, &damping, &[t], 0).unwrap();
        assert!((w3 - 9.0 * w1).abs() < 1e-12 * w3.abs());
    }

    #[test]
    fn objective_is_affine_in_gamma() {
        let model = synthetic_model(vec![(120.0, vec![0.3; 9]), (260.0, vec![-0.9; 9])]);
        let damping = DampingPolicy::Uniform(0.005);
        let set = [z_at(0.1, 0.15), z_at(0.32, 0.3)];
        let j0 = actuator_objective(&model, &damping, &set, 1, 3, 0.0).unwrap();
        let j1 = actuator_objective(&model, &damping, &set, 1, 3, 1.0).unwrap();
        let j2 = actuator_objective(&model, &damping, &set, 1, 3, 2.0).unwrap();
        let w_unc: f64 = (1..3)
            .map(|i| controllability_grammian(&model, &damping, &set, i).unwrap())
            .sum();
        assert!(w_unc > 0.0);
        assert!(((j0 - j1) - w_unc).abs() < 1e-12 * w_unc);
        assert!(((j1 - j2) - w_unc).abs() < 1e-12 * w_unc);
        assert!(j2 < j1 && j1 < j0);
    }

    #[test]
    fn rigid_rows_follow_cross_products() {
        let model = synthetic_model(vec![]);
        let rb = model.rigid_body;
        let tx = Transducer { x: 0.3, y: 0.1, z_offset: 0.02, axis: Axis::X, authority: 1.0 };
        assert!((sample_mode(&model, 0, &tx).unwrap() - 1.0 / rb.mass.sqrt()).abs() < 1e-15);
        assert!((sample_mode(&model, 4, &tx).unwrap() - 0.02 / rb.inertia[1].sqrt()).abs() < 1e-15);
        assert!(
            (sample_mode(&model, 5, &tx).unwrap() - (-(0.1 - 0.2) / rb.inertia[2].sqrt())).abs()
                < 1e-15
        );
        let tz = z_at(0.3, 0.1);
        assert!(
            (sample_mode(&model, 3, &tz).unwrap() - (0.1 - 0.2) / rb.inertia[0].sqrt()).abs()
                < 1e-15
        );
        assert!(
            (sample_mode(&model, 4, &tz).unwrap() - (-(0.3 - 0.2) / rb.inertia[1].sqrt())).abs()
                < 1e-15
        );
        // horizontal pickup at height h sees bending through -h * slope
        let s = Transducer { x: 0.31, y: 0.13, z_offset: 0.015, axis: Axis::Y, authority: 1.0 };
        let slope = model.shape_at(3, 0.31, 0.13, ShapeComponent::DwDy).unwrap();
        assert!((sample_mode(&model, 6, &s).unwrap() + 0.015 * slope).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_matches_closed_form_at_light_damping() {
        for zeta in [1e-3, 1e-2] {
            let omega = TAU * 80.0;
            let b = 0.7;
            let (a, q) = balanced_mode_state_matrices(omega, zeta, b);
            let w = lyapunov_solve(&a, &q).unwrap();
            let closed = b * b / (4.0 * zeta * omega);
            for d in 0..2 {
                let rel = (w[(d, d)] - closed).abs() / closed;
                assert!(rel <= 10.0 * zeta, "zeta {zeta} diag {d}: rel {rel}");
            }
            // residual check: A W + W A^T + Q = 0
            let res = &a * &w + &w * a.transpose() + &q;
            assert!(res.amax() < 1e-10 * q.amax());
        }
    }

    #[test]
    fn unstable_lyapunov_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.1]);
        let q = DMatrix::identity(2, 2);
        match lyapunov_solve(&a, &q) {
            Err(Error::NotHurwitz(re)) => assert!(re > 0.0),
            other => panic!("expected NotHurwitz, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn refinement_never_decreases_objective() {
        let model = synthetic_model(vec![(150.0, vec![0.0, 0.2, 0.0, 0.2, 1.0, 0.2, 0.0, 0.2, 0.0])]);
        let domain = vec![Rect { x_min: 0.0, y_min: 0.0, x_max: 0.4, y_max: 0.4 }];
        let mut opts = PlacementOptions {
            domain_a: domain.clone(),
            domain_s: domain,
            symmetric: false,
            n_controlled: 1,
            n_weighted: 2,
            resolution: 2,
            ..PlacementOptions::default()
        };
        let coarse = optimize_placement(&model, &opts).unwrap();
        opts.resolution = 4;
        let fine = optimize_placement(&model, &opts).unwrap();
        assert!(fine.config.actuator_objective >= coarse.config.actuator_objective - 1e-15);
        opts.resolution = 8;
        let finer = optimize_placement(&model, &opts).unwrap();
        assert!(finer.config.actuator_objective >= fine.config.actuator_objective - 1e-15);
    }

    #[test]
    fn symmetric_groups_land_in_domain_and_dedup() {
        let model = synthetic_model(vec![]);
        let pts = symmetry_group(&model, 0.1, 0.1);
        assert_eq!(pts.len(), 4);
        let center = symmetry_group(&model, 0.2, 0.2);
        assert_eq!(center.len(), 1);
        let axis = symmetry_group(&model, 0.2, 0.1);
        assert_eq!(axis.len(), 2);
    }
}
