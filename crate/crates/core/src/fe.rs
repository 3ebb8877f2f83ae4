//! 4-node rectangular Kirchhoff bending element (the classical 12-DOF ACM
//! element) and banded assembly of free-free stiffness and mass matrices.
//!
//! Nodal DOFs are [w, dw/dx, dw/dy]. The element is nonconforming but
//! convergent; mesh-refinement accuracy is pinned by tests against a frozen
//! high-resolution run.

use crate::band::SymBand;
use crate::error::{Error, Result};
use crate::geometry::{Material, StageGeometry};
use nalgebra::{DMatrix, DVector, Matrix3};

/// 12-term polynomial basis on [-1, 1]^2:
/// [1, x, e, x^2, xe, e^2, x^3, x^2 e, x e^2, e^3, x^3 e, x e^3].
#[inline]
fn basis(xi: f64, eta: f64) -> [f64; 12] {
    [
        1.0,
        xi,
        eta,
        xi * xi,
        xi * eta,
        eta * eta,
        xi * xi * xi,
        xi * xi * eta,
        xi * eta * eta,
        eta * eta * eta,
        xi * xi * xi * eta,
        xi * eta * eta * eta,
    ]
}

#[inline]
fn basis_dxi(xi: f64, eta: f64) -> [f64; 12] {
    [
        0.0,
        1.0,
        0.0,
        2.0 * xi,
        eta,
        0.0,
        3.0 * xi * xi,
        2.0 * xi * eta,
        eta * eta,
        0.0,
        3.0 * xi * xi * eta,
        eta * eta * eta,
    ]
}

#[inline]
fn basis_deta(xi: f64, eta: f64) -> [f64; 12] {
    [
        0.0,
        0.0,
        1.0,
        0.0,
        xi,
        2.0 * eta,
        0.0,
        xi * xi,
        2.0 * xi * eta,
        3.0 * eta * eta,
        xi * xi * xi,
        3.0 * xi * eta * eta,
    ]
}

#[inline]
fn basis_dxixi(xi: f64, eta: f64) -> [f64; 12] {
    [
        0.0,
        0.0,
        0.0,
        2.0,
        0.0,
        0.0,
        6.0 * xi,
        2.0 * eta,
        0.0,
        0.0,
        6.0 * xi * eta,
        0.0,
    ]
}

#[inline]
fn basis_detaeta(xi: f64, eta: f64) -> [f64; 12] {
    [
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        2.0,
        0.0,
        0.0,
        2.0 * xi,
        6.0 * eta,
        0.0,
        6.0 * xi * eta,
    ]
}

#[inline]
fn basis_dxieta(xi: f64, eta: f64) -> [f64; 12] {
    [
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        0.0,
        2.0 * xi,
        2.0 * eta,
        0.0,
        3.0 * xi * xi,
        3.0 * eta * eta,
    ]
}

/// 4-point Gauss-Legendre nodes and weights (exact for the degree-6 products
/// appearing in both integrands).
const GP: [f64; 4] = [
    -0.8611363115940526,
    -0.33998104358485626,
    0.33998104358485626,
    0.8611363115940526,
];
const GW: [f64; 4] = [
    0.34785484513745385,
    0.6521451548625461,
    0.6521451548625461,
    0.34785484513745385,
];

/// Maps polynomial coefficients to nodal DOFs [w, w_x, w_y] at the four
/// corners (-1,-1), (1,-1), (1,1), (-1,1); a, b are element half-widths.
fn dof_transform(a: f64, b: f64) -> DMatrix<f64> {
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let mut c = DMatrix::zeros(12, 12);
    for (k, &(xi, eta)) in corners.iter().enumerate() {
        let p = basis(xi, eta);
        let px = basis_dxi(xi, eta);
        let pe = basis_deta(xi, eta);
        for col in 0..12 {
            c[(3 * k, col)] = p[col];
            c[(3 * k + 1, col)] = px[col] / a;
            c[(3 * k + 2, col)] = pe[col] / b;
        }
    }
    c
}

/// Element stiffness and consistent mass (12x12) for half-widths a, b and
/// thickness t.
pub fn element_matrices(
    a: f64,
    b: f64,
    t: f64,
    material: &Material,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(a > 0.0 && b > 0.0 && t > 0.0) {
        return Err(Error::Geometry(format!(
            "degenerate element: half-widths ({a}, {b}), thickness {t}"
        )));
    }
    let e = material.youngs_modulus;
    let nu = material.poisson_ratio;
    let rho = material.density;
    let d0 = e * t * t * t / (12.0 * (1.0 - nu * nu));
    let dmat = Matrix3::new(
        d0,
        d0 * nu,
        0.0,
        d0 * nu,
        d0,
        0.0,
        0.0,
        0.0,
        d0 * (1.0 - nu) / 2.0,
    );
    let mut kq = DMatrix::<f64>::zeros(12, 12);
    let mut mq = DMatrix::<f64>::zeros(12, 12);
    for (i, &xi) in GP.iter().enumerate() {
        for (j, &eta) in GP.iter().enumerate() {
            let wgt = GW[i] * GW[j] * a * b;
            let bxx = basis_dxixi(xi, eta);
            let bee = basis_detaeta(xi, eta);
            let bxe = basis_dxieta(xi, eta);
            // curvature rows: w_xx, w_yy, 2 w_xy
            let mut bm = DMatrix::<f64>::zeros(3, 12);
            for col in 0..12 {
                bm[(0, col)] = bxx[col] / (a * a);
                bm[(1, col)] = bee[col] / (b * b);
                bm[(2, col)] = 2.0 * bxe[col] / (a * b);
            }
            kq += wgt * bm.transpose() * dmat * &bm;
            let p = basis(xi, eta);
            for r in 0..12 {
                for c in 0..12 {
                    mq[(r, c)] += wgt * rho * t * p[r] * p[c];
                }
            }
        }
    }
    let c = dof_transform(a, b);
    let ci = c
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Geometry("singular DOF transform".into()))?;
    let ke = ci.transpose() * kq * &ci;
    let me = ci.transpose() * mq * &ci;
    Ok((ke, me))
}

/// Assembled free-free stiffness and mass in banded storage. Point masses are
/// added to the translational DOF of their nearest node.
pub fn build_model(geometry: &StageGeometry, material: &Material) -> Result<(SymBand, SymBand)> {
    geometry.validate()?;
    material.validate()?;
    let n = geometry.n_dofs();
    let hb = 3 * (geometry.nx + 2) + 2;
    let mut k_mat = SymBand::zeros(n, hb);
    let mut m_mat = SymBand::zeros(n, hb);
    let a = geometry.dx() / 2.0;
    let b = geometry.dy() / 2.0;

    // One (Ke, Me) pair per region; thickness is constant within a region.
    let mut cache: Vec<Option<(DMatrix<f64>, DMatrix<f64>)>> =
        vec![None; geometry.n_regions()];
    for ey in 0..geometry.ny {
        for ex in 0..geometry.nx {
            let region = geometry.region_map[ey * geometry.nx + ex];
            if cache[region].is_none() {
                let t = geometry.thickness[region];
                let pair = element_matrices(a, b, t, material).map_err(|_| {
                    Error::DegenerateElement {
                        index: ey * geometry.nx + ex,
                        reason: format!("thickness {t}"),
                    }
                })?;
                cache[region] = Some(pair);
            }
            let (ke, me) = cache[region].as_ref().unwrap();
            let nodes = geometry.element_nodes(ex, ey);
            let mut dofs = [0usize; 12];
            for (k, &node) in nodes.iter().enumerate() {
                dofs[3 * k] = 3 * node;
                dofs[3 * k + 1] = 3 * node + 1;
                dofs[3 * k + 2] = 3 * node + 2;
            }
            for r in 0..12 {
                for c in r..12 {
                    let (i, j) = (dofs[r], dofs[c]);
                    if i <= j {
                        k_mat.add(i, j, ke[(r, c)]);
                        m_mat.add(i, j, me[(r, c)]);
                    } else {
                        k_mat.add(j, i, ke[(r, c)]);
                        m_mat.add(j, i, me[(r, c)]);
                    }
                }
            }
        }
    }
    for pm in &geometry.point_masses {
        let node = geometry.nearest_node(pm.x, pm.y);
        m_mat.add(3 * node, 3 * node, pm.kg);
    }
    Ok((k_mat, m_mat))
}

/// Evaluate w (or a slope) of a nodal displacement field inside an element
/// with the element's own shape functions; exact at nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeComponent {
    W,
    DwDx,
    DwDy,
}

pub fn interpolate(
    geometry: &StageGeometry,
    nodal: &DVector<f64>,
    x: f64,
    y: f64,
    component: ShapeComponent,
) -> Result<f64> {
    let (ex, ey) = geometry.containing_element(x, y)?;
    let a = geometry.dx() / 2.0;
    let b = geometry.dy() / 2.0;
    let xc = (ex as f64 + 0.5) * geometry.dx();
    let yc = (ey as f64 + 0.5) * geometry.dy();
    let xi = (x - xc) / a;
    let eta = (y - yc) / b;
    let c = dof_transform(a, b);
    let ci = c
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Geometry("singular DOF transform".into()))?;
    let nodes = geometry.element_nodes(ex, ey);
    let mut q = DVector::zeros(12);
    for (k, &node) in nodes.iter().enumerate() {
        q[3 * k] = nodal[3 * node];
        q[3 * k + 1] = nodal[3 * node + 1];
        q[3 * k + 2] = nodal[3 * node + 2];
    }
    let coeffs = ci * q;
    let p = match component {
        ShapeComponent::W => basis(xi, eta),
        ShapeComponent::DwDx => basis_dxi(xi, eta),
        ShapeComponent::DwDy => basis_deta(xi, eta),
    };
    let mut v: f64 = (0..12).map(|i| p[i] * coeffs[i]).sum();
    match component {
        ShapeComponent::W => {}
        ShapeComponent::DwDx => v /= a,
        ShapeComponent::DwDy => v /= b,
    }
    Ok(v)
}
