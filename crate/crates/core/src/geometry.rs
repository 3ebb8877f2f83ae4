//! Plate planform, mesh, thickness regions, and material data.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Material {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
}

impl Material {
    /// 7075-T6 aluminum.
    pub fn aluminum_7075() -> Self {
        Material {
            youngs_modulus: 71.7e9,
            poisson_ratio: 0.33,
            density: 2810.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0) {
            return Err(Error::Geometry(format!(
                "youngs_modulus must be positive, got {}",
                self.youngs_modulus
            )));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(Error::Geometry(format!(
                "poisson_ratio must be in [0, 0.5), got {}",
                self.poisson_ratio
            )));
        }
        if !(self.density > 0.0) {
            return Err(Error::Geometry(format!(
                "density must be positive, got {}",
                self.density
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PointMass {
    pub x: f64,
    pub y: f64,
    pub kg: f64,
}

/// Rectangular plate meshed into nx * ny equal elements. Every element belongs
/// to one thickness region; region thicknesses are the structural design
/// variables. Point masses model the magnet arrays (mass only, no stiffness).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageGeometry {
    pub length_x: f64,
    pub length_y: f64,
    pub nx: usize,
    pub ny: usize,
    /// Region index per element, row-major, length nx * ny.
    pub region_map: Vec<usize>,
    /// Current thickness per region (m).
    pub thickness: Vec<f64>,
    /// Box bounds (min, max) per region (m).
    pub bounds: Vec<(f64, f64)>,
    pub point_masses: Vec<PointMass>,
}

impl StageGeometry {
    /// Single-region uniform plate.
    pub fn uniform(
        length_x: f64,
        length_y: f64,
        nx: usize,
        ny: usize,
        thickness: f64,
        bounds: (f64, f64),
        point_masses: Vec<PointMass>,
    ) -> Self {
        StageGeometry {
            length_x,
            length_y,
            nx,
            ny,
            region_map: vec![0; nx * ny],
            thickness: vec![thickness],
            bounds: vec![bounds],
            point_masses,
        }
    }

    /// Regions as y-bands mirrored about the horizontal centerline, counted
    /// from the center outward. `rows[k]` element rows on each side of center
    /// belong to region k; ny must be even and rows must sum to ny / 2.
    pub fn mirrored_bands(
        length_x: f64,
        length_y: f64,
        nx: usize,
        ny: usize,
        rows: &[usize],
        thickness: Vec<f64>,
        bounds: Vec<(f64, f64)>,
        point_masses: Vec<PointMass>,
    ) -> Result<Self> {
        if ny % 2 != 0 {
            return Err(Error::Geometry(format!(
                "mirrored bands need even ny, got {ny}"
            )));
        }
        if rows.iter().sum::<usize>() != ny / 2 {
            return Err(Error::Geometry(format!(
                "band rows {:?} must sum to ny/2 = {}",
                rows,
                ny / 2
            )));
        }
        let mut region_of_dist = Vec::with_capacity(ny / 2);
        for (k, &r) in rows.iter().enumerate() {
            region_of_dist.extend(std::iter::repeat(k).take(r));
        }
        let mut region_map = vec![0usize; nx * ny];
        for ey in 0..ny {
            let dist = if ey < ny / 2 {
                ny / 2 - 1 - ey
            } else {
                ey - ny / 2
            };
            for ex in 0..nx {
                region_map[ey * nx + ex] = region_of_dist[dist];
            }
        }
        let g = StageGeometry {
            length_x,
            length_y,
            nx,
            ny,
            region_map,
            thickness,
            bounds,
            point_masses,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_x > 0.0 && self.length_y > 0.0) {
            return Err(Error::Geometry("plan dimensions must be positive".into()));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::Geometry("element grid must be nonempty".into()));
        }
        if self.region_map.len() != self.nx * self.ny {
            return Err(Error::Geometry(format!(
                "region map has {} entries for {} elements",
                self.region_map.len(),
                self.nx * self.ny
            )));
        }
        let nr = self.thickness.len();
        if nr == 0 || self.bounds.len() != nr {
            return Err(Error::Geometry(format!(
                "{} thicknesses vs {} bounds",
                nr,
                self.bounds.len()
            )));
        }
        if let Some((e, &r)) = self
            .region_map
            .iter()
            .enumerate()
            .find(|&(_, &r)| r >= nr)
        {
            return Err(Error::Geometry(format!(
                "element {e} maps to region {r}, only {nr} regions defined"
            )));
        }
        for (k, (&t, &(lo, hi))) in self.thickness.iter().zip(&self.bounds).enumerate() {
            if !(t > 0.0) {
                return Err(Error::DegenerateElement {
                    index: self.region_map.iter().position(|&r| r == k).unwrap_or(0),
                    reason: format!("region {k} thickness {t} not positive"),
                });
            }
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::Geometry(format!(
                    "region {k} bounds ({lo}, {hi}) invalid"
                )));
            }
            if t < lo - 1e-12 || t > hi + 1e-12 {
                return Err(Error::Geometry(format!(
                    "region {k} thickness {t} outside bounds ({lo}, {hi})"
                )));
            }
        }
        for pm in &self.point_masses {
            if pm.kg < 0.0 {
                return Err(Error::Geometry(format!("negative point mass {}", pm.kg)));
            }
            if pm.x < 0.0 || pm.x > self.length_x || pm.y < 0.0 || pm.y > self.length_y {
                return Err(Error::OutOfDomain { x: pm.x, y: pm.y });
            }
        }
        Ok(())
    }

    pub fn with_thickness(&self, theta: &[f64]) -> Self {
        let mut g = self.clone();
        g.thickness = theta.to_vec();
        g
    }

    pub fn n_regions(&self) -> usize {
        self.thickness.len()
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    /// Three DOFs per node: w, dw/dx, dw/dy.
    pub fn n_dofs(&self) -> usize {
        3 * self.n_nodes()
    }

    pub fn dx(&self) -> f64 {
        self.length_x / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.length_y / self.ny as f64
    }

    #[inline]
    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let ix = node % (self.nx + 1);
        let iy = node / (self.nx + 1);
        (ix as f64 * self.dx(), iy as f64 * self.dy())
    }

    /// Counter-clockwise element nodes: (0,0), (1,0), (1,1), (0,1) corners.
    pub fn element_nodes(&self, ex: usize, ey: usize) -> [usize; 4] {
        [
            self.node_index(ex, ey),
            self.node_index(ex + 1, ey),
            self.node_index(ex + 1, ey + 1),
            self.node_index(ex, ey + 1),
        ]
    }

    pub fn nearest_node(&self, x: f64, y: f64) -> usize {
        let ix = ((x / self.dx()).round() as isize).clamp(0, self.nx as isize) as usize;
        let iy = ((y / self.dy()).round() as isize).clamp(0, self.ny as isize) as usize;
        self.node_index(ix, iy)
    }

    /// Element containing (x, y), with points on shared edges assigned to the
    /// higher-index element and the far boundary clamped inward.
    pub fn containing_element(&self, x: f64, y: f64) -> Result<(usize, usize)> {
        if x < -1e-12 || x > self.length_x + 1e-12 || y < -1e-12 || y > self.length_y + 1e-12 {
            return Err(Error::OutOfDomain { x, y });
        }
        let ex = ((x / self.dx()) as usize).min(self.nx - 1);
        let ey = ((y / self.dy()) as usize).min(self.ny - 1);
        Ok((ex, ey))
    }

    pub fn element_thickness(&self, ex: usize, ey: usize) -> f64 {
        self.thickness[self.region_map[ey * self.nx + ex]]
    }

    /// Structural mass plus point masses. Strictly increasing in every region
    /// thickness (element areas are fixed).
    pub fn total_mass(&self, material: &Material) -> f64 {
        let cell = self.dx() * self.dy() * material.density;
        let structural: f64 = self
            .region_map
            .iter()
            .map(|&r| cell * self.thickness[r])
            .sum();
        structural + self.point_masses.iter().map(|p| p.kg).sum::<f64>()
    }

    /// In-plane rigid inertia about the vertical axis through the mass center,
    /// for the Rz channel (the FE model covers only out-of-plane motion).
    pub fn inertia_z(&self, material: &Material) -> f64 {
        let (xc, yc) = self.mass_center(material);
        let cell = self.dx() * self.dy() * material.density;
        let mut iz = 0.0;
        for ey in 0..self.ny {
            for ex in 0..self.nx {
                let x = (ex as f64 + 0.5) * self.dx() - xc;
                let y = (ey as f64 + 0.5) * self.dy() - yc;
                let dm = cell * self.element_thickness(ex, ey);
                // element own inertia + parallel axis
                iz += dm * (x * x + y * y)
                    + dm * (self.dx() * self.dx() + self.dy() * self.dy()) / 12.0;
            }
        }
        for pm in &self.point_masses {
            iz += pm.kg * ((pm.x - xc).powi(2) + (pm.y - yc).powi(2));
        }
        iz
    }

    pub fn mass_center(&self, material: &Material) -> (f64, f64) {
        let cell = self.dx() * self.dy() * material.density;
        let mut m = 0.0;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for ey in 0..self.ny {
            for ex in 0..self.nx {
                let dm = cell * self.element_thickness(ex, ey);
                m += dm;
                sx += dm * (ex as f64 + 0.5) * self.dx();
                sy += dm * (ey as f64 + 0.5) * self.dy();
            }
        }
        for pm in &self.point_masses {
            m += pm.kg;
            sx += pm.kg * pm.x;
            sy += pm.kg * pm.y;
        }
        (sx / m, sy / m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_mass_is_rho_a_t_plus_points() {
        let g = StageGeometry::uniform(
            2.0,
            1.0,
            4,
            2,
            0.01,
            (0.001, 0.1),
            vec![PointMass {
                x: 0.5,
                y: 0.5,
                kg: 3.0,
            }],
        );
        let m = Material {
            youngs_modulus: 1.0,
            poisson_ratio: 0.3,
            density: 1000.0,
        };
        assert_relative_eq!(g.total_mass(&m), 2.0 * 0.01 * 1000.0 + 3.0);
    }

    #[test]
    fn unit_case_half() {
        let g = StageGeometry::uniform(1.0, 1.0, 2, 2, 0.5, (0.1, 1.0), vec![]);
        let m = Material {
            youngs_modulus: 1.0,
            poisson_ratio: 0.0,
            density: 1.0,
        };
        assert_relative_eq!(g.total_mass(&m), 0.5);
    }

    #[test]
    fn doubling_thickness_doubles_structural_mass() {
        let g = StageGeometry::uniform(0.3, 0.3, 3, 3, 0.004, (0.001, 0.1), vec![]);
        let m = Material::aluminum_7075();
        let g2 = g.with_thickness(&[0.008]);
        assert_relative_eq!(g2.total_mass(&m), 2.0 * g.total_mass(&m), epsilon = 1e-12);
    }

    #[test]
    fn mirrored_bands_layout() {
        let g = StageGeometry::mirrored_bands(
            0.3,
            0.3,
            4,
            6,
            &[1, 2],
            vec![0.001, 0.01],
            vec![(0.0005, 0.02); 2],
            vec![],
        )
        .unwrap();
        // rows 2 and 3 are the center pair -> region 0; rows 0,1,4,5 -> region 1
        assert_eq!(g.region_map[2 * 4], 0);
        assert_eq!(g.region_map[3 * 4], 0);
        assert_eq!(g.region_map[0], 1);
        assert_eq!(g.region_map[5 * 4], 1);
    }

    #[test]
    fn bad_region_map_rejected() {
        let mut g = StageGeometry::uniform(1.0, 1.0, 2, 2, 0.01, (0.001, 0.1), vec![]);
        g.region_map[3] = 7;
        assert!(matches!(g.validate(), Err(Error::Geometry(_))));
    }

    #[test]
    fn containing_element_edges() {
        let g = StageGeometry::uniform(1.0, 1.0, 4, 4, 0.01, (0.001, 0.1), vec![]);
        assert_eq!(g.containing_element(0.0, 0.0).unwrap(), (0, 0));
        assert_eq!(g.containing_element(1.0, 1.0).unwrap(), (3, 3));
        assert!(g.containing_element(1.5, 0.2).is_err());
    }
}
