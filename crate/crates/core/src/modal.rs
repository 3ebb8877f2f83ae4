//! Modal model of the stage: three rigid-body modes (z, Rx, Ry) built in
//! closed form plus the lowest flexible modes from subspace iteration, all
//! M-orthonormal. In-plane rigid motion (x, y, Rz) has no out-of-plane
//! stiffness coupling and is carried analytically by mass and Iz.

use crate::band::SymBand;
use crate::eigen::{lowest_flexible_modes, EigenOptions};
use crate::error::{Error, Result};
use crate::fe::{self, ShapeComponent};
use crate::geometry::{Material, StageGeometry};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModeKind {
    /// Out-of-plane translation.
    Heave,
    /// Rotation about x (w varies with y).
    RollX,
    /// Rotation about y (w varies with x).
    RollY,
    Flexible,
}

#[derive(Debug, Clone)]
pub struct Mode {
    pub kind: ModeKind,
    pub frequency_hz: f64,
    /// M-orthonormal nodal shape (w, wx, wy per node); generalized mass 1.
    pub shape: DVector<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RigidBody {
    pub mass: f64,
    /// Principal-ish inertias about the mass center [Ix, Iy, Iz]. Ix and Iy
    /// are the generalized masses of the unit-slope rigid shapes (they include
    /// the plate's consistent rotary inertia); Iz is analytic.
    pub inertia: [f64; 3],
    pub center: (f64, f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum DampingPolicy {
    /// Same modal damping ratio for every flexible mode.
    Uniform(f64),
}

impl DampingPolicy {
    pub fn ratio(&self, _mode_index: usize) -> f64 {
        match self {
            DampingPolicy::Uniform(z) => *z,
        }
    }
}

/// Out-of-plane modal basis plus the rigid-body data needed for the in-plane
/// channels. Shapes are M-orthonormal so every generalized mass is one.
pub struct ModalModel {
    pub geometry: StageGeometry,
    pub material: Material,
    /// z, Rx, Ry first, then flexible modes ascending in frequency.
    pub modes: Vec<Mode>,
    pub rigid_body: RigidBody,
    pub n_flexible: usize,
    pub eigen_iterations: usize,
}

impl ModalModel {
    pub fn flexible(&self) -> &[Mode] {
        &self.modes[3..]
    }

    pub fn flexible_frequencies_hz(&self) -> Vec<f64> {
        self.flexible().iter().map(|m| m.frequency_hz).collect()
    }

    /// Evaluate one mode's deflection (or slope) at a point.
    pub fn shape_at(
        &self,
        mode_index: usize,
        x: f64,
        y: f64,
        component: ShapeComponent,
    ) -> Result<f64> {
        let mode = self
            .modes
            .get(mode_index)
            .ok_or_else(|| Error::Geometry(format!("mode index {mode_index} out of range")))?;
        fe::interpolate(&self.geometry, &mode.shape, x, y, component)
    }
}

/// Rigid shapes with exact nodal slopes, M-orthonormalized. The mass center
/// is derived from M itself so heave and the two rolls are orthogonal to
/// machine precision even for asymmetric thickness maps.
fn rigid_basis(
    geometry: &StageGeometry,
    material: &Material,
    m: &SymBand,
) -> (Vec<DVector<f64>>, RigidBody) {
    let nd = geometry.n_dofs();
    let nn = geometry.n_nodes();

    let mut heave = DVector::zeros(nd);
    let mut wy = DVector::zeros(nd); // w = y (roll about x), w_y = 1
    let mut wx = DVector::zeros(nd); // w = x (roll about y), w_x = 1
    for node in 0..nn {
        let (x, y) = geometry.node_coords(node);
        heave[3 * node] = 1.0;
        wy[3 * node] = y;
        wy[3 * node + 2] = 1.0;
        wx[3 * node] = x;
        wx[3 * node + 1] = 1.0;
    }

    let mass = m.quad(&heave, &heave);
    let yc = m.quad(&heave, &wy) / mass;
    let xc = m.quad(&heave, &wx) / mass;
    let ry_shape = &wy - yc * &heave;
    let mut rx_shape = &wx - xc * &heave;
    // product-of-inertia cross term, nonzero only for asymmetric layouts
    let cross = m.quad(&ry_shape, &rx_shape) / m.quad(&ry_shape, &ry_shape);
    rx_shape -= cross * &ry_shape;

    let ix = m.quad(&ry_shape, &ry_shape);
    let iy = m.quad(&rx_shape, &rx_shape);
    let heave_n = &heave / mass.sqrt();
    let rx_n = ry_shape / ix.sqrt();
    let ry_n = rx_shape / iy.sqrt();

    let body = RigidBody {
        mass,
        inertia: [ix, iy, geometry.inertia_z(material)],
        center: (xc, yc),
    };
    (vec![heave_n, rx_n, ry_n], body)
}

/// Assemble the plate model and solve for the lowest `n_flexible` modes.
pub fn solve_modes(
    geometry: &StageGeometry,
    material: &Material,
    n_flexible: usize,
    warm_start: Option<&DMatrix<f64>>,
    opts: &EigenOptions,
) -> Result<ModalModel> {
    geometry.validate()?;
    material.validate()?;
    let (k, m) = fe::build_model(geometry, material)?;
    // a consistent mass matrix with nonnegative point masses must be SPD
    m.cholesky()
        .map_err(|_| Error::Geometry("mass matrix not positive definite".into()))?;

    let (rigid, body) = rigid_basis(geometry, material, &m);
    let flex = lowest_flexible_modes(&k, &m, n_flexible, &rigid, warm_start, opts)?;

    let mut modes = Vec::with_capacity(3 + n_flexible);
    for (kind, shape) in [
        (ModeKind::Heave, &rigid[0]),
        (ModeKind::RollX, &rigid[1]),
        (ModeKind::RollY, &rigid[2]),
    ] {
        modes.push(Mode {
            kind,
            frequency_hz: 0.0,
            shape: shape.clone(),
        });
    }
    for (lam, shape) in flex.lambdas.iter().zip(flex.shapes) {
        modes.push(Mode {
            kind: ModeKind::Flexible,
            frequency_hz: lam.max(0.0).sqrt() / (2.0 * std::f64::consts::PI),
            shape,
        });
    }

    Ok(ModalModel {
        geometry: geometry.clone(),
        material: *material,
        modes,
        rigid_body: body,
        n_flexible,
        eigen_iterations: flex.iterations,
    })
}

/// Flexible frequencies only, plus the converged shape block for warm-starting
/// the next solve. This is the cheap path for optimizer inner loops; it skips
/// the mass-definiteness check and geometry cloning done by `solve_modes`.
pub fn flexible_frequencies(
    geometry: &StageGeometry,
    material: &Material,
    count: usize,
    warm_start: Option<&DMatrix<f64>>,
    opts: &EigenOptions,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (k, m) = fe::build_model(geometry, material)?;
    let (rigid, _) = rigid_basis(geometry, material, &m);
    let flex = lowest_flexible_modes(&k, &m, count, &rigid, warm_start, opts)?;
    let freqs = flex
        .lambdas
        .iter()
        .map(|l| l.max(0.0).sqrt() / (2.0 * std::f64::consts::PI))
        .collect();
    let mut basis = DMatrix::zeros(k.n(), count);
    for (c, s) in flex.shapes.iter().enumerate() {
        basis.set_column(c, s);
    }
    Ok((freqs, basis))
}

/// Nondimensional frequency parameter lam = omega * L^2 * sqrt(rho t / D)
/// for a square plate of side `l`. Used by convergence tests.
pub fn plate_lambda(frequency_hz: f64, l: f64, t: f64, material: &Material) -> f64 {
    let d = material.youngs_modulus * t.powi(3)
        / (12.0 * (1.0 - material.poisson_ratio * material.poisson_ratio));
    2.0 * std::f64::consts::PI * frequency_hz * l * l * (material.density * t / d).sqrt()
}
