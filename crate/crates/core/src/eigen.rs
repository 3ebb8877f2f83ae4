//! Subspace iteration for the lowest flexible modes of (K, M) with exact
//! deflation of supplied rigid-body vectors.
//!
//! The operator is (K + sigma*M)^-1 M with a small positive shift so the
//! factorization is positive definite despite K's rigid nullspace. Rigid
//! vectors are projected out of the block every iteration, so the iteration
//! converges to the smallest flexible eigenpairs.

use crate::band::{BandCholesky, SymBand};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct EigenOptions {
    pub max_iterations: usize,
    pub residual_tol: f64,
    /// Extra Ritz vectors beyond the requested count.
    pub buffer: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            max_iterations: 250,
            residual_tol: 1e-6,
            buffer: 4,
            seed: 0x5eed,
        }
    }
}

pub struct FlexibleModes {
    /// Eigenvalues lambda = omega^2, ascending.
    pub lambdas: Vec<f64>,
    /// M-orthonormal shapes, one column each.
    pub shapes: Vec<DVector<f64>>,
    pub iterations: usize,
    pub worst_residual: f64,
}

/// M-inner-product Gram-Schmidt of `x` columns against `basis` (assumed
/// M-orthonormal), in place.
fn deflate(x: &mut DMatrix<f64>, basis: &[DVector<f64>], m: &SymBand) {
    for b in basis {
        let mb = m.matvec(b);
        for c in 0..x.ncols() {
            let col = x.column(c).clone_owned();
            let proj = mb.dot(&col);
            let mut view = x.column_mut(c);
            view.axpy(-proj, b, 1.0);
        }
    }
}

/// Two-pass modified Gram-Schmidt making columns M-orthonormal. Columns that
/// collapse are replaced with fresh random vectors and re-orthogonalized.
fn m_orthonormalize(
    x: &mut DMatrix<f64>,
    m: &SymBand,
    rigid: &[DVector<f64>],
    rng: &mut ChaCha8Rng,
) {
    let n = x.nrows();
    let q = x.ncols();
    for c in 0..q {
        for _attempt in 0..3 {
            for _pass in 0..2 {
                // orthogonalize against rigid basis and earlier columns
                for b in rigid {
                    let mb = m.matvec(b);
                    let proj = mb.dot(&x.column(c).clone_owned());
                    x.column_mut(c).axpy(-proj, b, 1.0);
                }
                for p in 0..c {
                    let cp = x.column(p).clone_owned();
                    let mcp = m.matvec(&cp);
                    let proj = mcp.dot(&x.column(c).clone_owned());
                    x.column_mut(c).axpy(-proj, &cp, 1.0);
                }
            }
            let col = x.column(c).clone_owned();
            let norm2 = m.quad(&col, &col);
            if norm2 > 1e-24 {
                x.column_mut(c).scale_mut(1.0 / norm2.sqrt());
                break;
            }
            // degenerate column: replace and retry
            for i in 0..n {
                x[(i, c)] = rng.random::<f64>() - 0.5;
            }
        }
    }
}

/// Smallest `count` flexible eigenpairs of K phi = lambda M phi, with `rigid`
/// (M-orthonormal) deflated exactly. `warm_start` columns seed the block.
pub fn lowest_flexible_modes(
    k: &SymBand,
    m: &SymBand,
    count: usize,
    rigid: &[DVector<f64>],
    warm_start: Option<&DMatrix<f64>>,
    opts: &EigenOptions,
) -> Result<FlexibleModes> {
    let n = k.n();
    let free = n - rigid.len();
    if count == 0 || count > free {
        return Err(Error::Geometry(format!(
            "requested {count} flexible modes from {free} free DOFs"
        )));
    }
    let q = (count + opts.buffer.max(count / 2)).min(free);

    let sigma = 1e-8 * k.max_abs_diag() / m.max_abs_diag().max(1e-300);
    let shifted = k.add_scaled(m, sigma);
    let chol: BandCholesky = shifted.cholesky()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = DMatrix::<f64>::zeros(n, q);
    if let Some(ws) = warm_start {
        let copy = ws.ncols().min(q);
        x.columns_mut(0, copy).copy_from(&ws.columns(0, copy));
    }
    for c in 0..q {
        if x.column(c).amax() == 0.0 {
            for i in 0..n {
                x[(i, c)] = rng.random::<f64>() - 0.5;
            }
        }
    }
    m_orthonormalize(&mut x, m, rigid, &mut rng);

    let mut lambdas = vec![0.0; q];
    let mut worst = f64::INFINITY;
    for iter in 1..=opts.max_iterations {
        // X <- (K + sigma M)^-1 M X, deflated and re-orthonormalized
        let mut xn = DMatrix::<f64>::zeros(n, q);
        for c in 0..q {
            let col = x.column(c).clone_owned();
            let rhs = m.matvec(&col);
            xn.set_column(c, &chol.solve(&rhs));
        }
        deflate(&mut xn, rigid, m);
        m_orthonormalize(&mut xn, m, rigid, &mut rng);

        // Rayleigh-Ritz on the M-orthonormal block: K_bar = X^T K X
        let mut kx = DMatrix::<f64>::zeros(n, q);
        for c in 0..q {
            let col = xn.column(c).clone_owned();
            kx.set_column(c, &k.matvec(&col));
        }
        let mut kbar = xn.transpose() * &kx;
        // enforce symmetry lost to roundoff
        for i in 0..q {
            for j in (i + 1)..q {
                let s = 0.5 * (kbar[(i, j)] + kbar[(j, i)]);
                kbar[(i, j)] = s;
                kbar[(j, i)] = s;
            }
        }
        let eig = nalgebra::SymmetricEigen::new(kbar);
        let mut order: Vec<usize> = (0..q).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut v = DMatrix::<f64>::zeros(q, q);
        for (dst, &src) in order.iter().enumerate() {
            v.set_column(dst, &eig.eigenvectors.column(src));
            lambdas[dst] = eig.eigenvalues[src];
        }
        x = &xn * &v;
        let kxv = kx * v;

        // residuals of the leading `count` pairs
        worst = 0.0;
        for c in 0..count {
            let xc = x.column(c).clone_owned();
            let kphi = kxv.column(c).clone_owned();
            let mphi = m.matvec(&xc);
            let r = (&kphi - lambdas[c] * mphi).norm() / kphi.norm().max(1e-300);
            worst = worst.max(r);
        }
        if worst <= opts.residual_tol {
            return Ok(FlexibleModes {
                lambdas: lambdas[..count].to_vec(),
                shapes: (0..count).map(|c| x.column(c).clone_owned()).collect(),
                iterations: iter,
                worst_residual: worst,
            });
        }
    }
    Err(Error::EigenConvergence {
        iterations: opts.max_iterations,
        worst_residual: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1-D chain: K tridiagonal [-1, 2, -1] minus free ends, M identity-ish.
    /// One rigid translation vector; flexible eigenvalues are
    /// 2 - 2cos(pi k / n) for the free-free chain.
    #[test]
    fn free_chain_spectrum() {
        let n = 40;
        let mut k = SymBand::zeros(n, 1);
        let mut m = SymBand::zeros(n, 1);
        for i in 0..n {
            let deg = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
            k.add(i, i, deg);
            if i + 1 < n {
                k.add(i, i + 1, -1.0);
            }
            m.add(i, i, 1.0);
        }
        let rigid = vec![DVector::from_element(n, 1.0 / (n as f64).sqrt())];
        let sol = lowest_flexible_modes(&k, &m, 4, &rigid, None, &EigenOptions::default())
            .unwrap();
        for (idx, lam) in sol.lambdas.iter().enumerate() {
            let exact = 2.0 - 2.0 * (std::f64::consts::PI * (idx + 1) as f64 / n as f64).cos();
            assert!(
                (lam - exact).abs() < 1e-9 * exact,
                "mode {idx}: {lam} vs {exact}"
            );
        }
        // M-orthonormality across the block
        for a in 0..4 {
            for b in 0..4 {
                let d = m.quad(&sol.shapes[a], &sol.shapes[b]);
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-10);
            }
        }
        // deflation: no rigid content
        for s in &sol.shapes {
            assert!(m.quad(&rigid[0], s).abs() < 1e-10);
        }
    }

    #[test]
    fn warm_start_converges_faster() {
        let n = 60;
        let mut k = SymBand::zeros(n, 1);
        let mut m = SymBand::zeros(n, 1);
        for i in 0..n {
            let deg = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
            k.add(i, i, deg);
            if i + 1 < n {
                k.add(i, i + 1, -1.0);
            }
            m.add(i, i, 1.0 + 0.01 * (i as f64));
        }
        let mut heave = DVector::from_element(n, 1.0);
        let nrm = m.quad(&heave, &heave).sqrt();
        heave /= nrm;
        let rigid = vec![heave];
        let opts = EigenOptions::default();
        let cold = lowest_flexible_modes(&k, &m, 3, &rigid, None, &opts).unwrap();
        let mut ws = DMatrix::zeros(n, 3);
        for (c, s) in cold.shapes.iter().enumerate() {
            ws.set_column(c, s);
        }
        let warm = lowest_flexible_modes(&k, &m, 3, &rigid, Some(&ws), &opts).unwrap();
        assert!(warm.iterations <= cold.iterations);
        for (a, b) in cold.lambdas.iter().zip(&warm.lambdas) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }
}
