//! MIMO plant assembly: rigid-body double integrators plus damped flexible
//! modes, mapped through the placement's actuation and sensing matrices, with
//! static decoupling into near-SISO channels.
//!
//! Transfer matrix: P(s) = sum_r (c_r b_r^T)/s^2 + sum_i (c_i b_i^T)/(s^2 +
//! 2 zeta_i omega_i s + omega_i^2), all shapes mass-normalized. The modal
//! closed form is the primary evaluation path; the state-space resolvent is
//! kept as a cross-check oracle.

use crate::error::{Error, Result};
use crate::freq::FrequencyResponse;
use crate::modal::{DampingPolicy, ModalModel};
use crate::placement::{actuation_map, sensing_map, PlacementConfig};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

const TAU: f64 = std::f64::consts::TAU;
/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_TOL_REL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct FlexibleDynamics {
    pub omega: f64,
    pub zeta: f64,
    /// phi_i^T B_a: generalized force per actuator command.
    pub input_row: DVector<f64>,
    /// C_s phi_i: sensor reading per unit modal coordinate.
    pub output_col: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct PlantModel {
    pub rigid: crate::modal::RigidBody,
    pub flexible: Vec<FlexibleDynamics>,
    /// Full actuation map, (6 + n_flex) x n_inputs.
    pub b_a: DMatrix<f64>,
    /// Full sensing map, n_outputs x (6 + n_flex).
    pub c_s: DMatrix<f64>,
    pub state_space: StateSpace,
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub n_controlled: usize,
}

fn rank_check(mat: &DMatrix<f64>, need: usize, context: &str) -> Result<()> {
    let svd = mat.clone().svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|s| **s > PINV_TOL_REL * smax).count();
    if rank < need {
        return Err(Error::RankDeficient {
            context: context.to_string(),
            singular_values: sv,
        });
    }
    Ok(())
}

/// Build the plant for a placement. Rejects placements that cannot actuate
/// or observe all six rigid DOFs.
pub fn assemble_plant(
    model: &ModalModel,
    placement: &PlacementConfig,
    damping: &DampingPolicy,
    n_controlled: usize,
) -> Result<PlantModel> {
    placement.validate(n_controlled)?;
    if n_controlled > model.n_flexible {
        return Err(Error::Plant(format!(
            "{n_controlled} controlled modes but only {} retained",
            model.n_flexible
        )));
    }
    let b_a = actuation_map(model, &placement.actuators)?;
    let c_s = sensing_map(model, &placement.sensors)?;
    rank_check(&b_a.rows(0, 6).clone_owned(), 6, "rigid actuation map")?;
    rank_check(&c_s.columns(0, 6).clone_owned(), 6, "rigid sensing map")?;

    let nf = model.n_flexible;
    let mut flexible = Vec::with_capacity(nf);
    for i in 0..nf {
        let omega = TAU * model.flexible()[i].frequency_hz;
        let zeta = damping.ratio(i);
        if omega <= 0.0 || zeta <= 0.0 {
            return Err(Error::Plant(format!(
                "flexible mode {i} needs positive omega and zeta, got {omega}, {zeta}"
            )));
        }
        flexible.push(FlexibleDynamics {
            omega,
            zeta,
            input_row: b_a.row(6 + i).transpose(),
            output_col: c_s.column(6 + i).clone_owned(),
        });
    }

    let na = b_a.ncols();
    let ns = c_s.nrows();
    let ng = 6 + nf;
    let nx = 2 * ng;
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, na);
    let mut c = DMatrix::zeros(ns, nx);
    for g in 0..ng {
        let p = 2 * g;
        a[(p, p + 1)] = 1.0;
        if g >= 6 {
            let fd = &flexible[g - 6];
            a[(p + 1, p)] = -fd.omega * fd.omega;
            a[(p + 1, p + 1)] = -2.0 * fd.zeta * fd.omega;
        }
        for j in 0..na {
            b[(p + 1, j)] = b_a[(g, j)];
        }
        for i in 0..ns {
            c[(i, p)] = c_s[(i, g)];
        }
    }

    Ok(PlantModel {
        rigid: model.rigid_body,
        flexible,
        b_a,
        c_s,
        state_space: StateSpace { a, b, c },
        n_inputs: na,
        n_outputs: ns,
        n_controlled,
    })
}

/// Full transfer matrix at s = j omega via the modal closed form.
pub fn mimo_frf(plant: &PlantModel, omega: f64) -> Result<DMatrix<Complex64>> {
    if omega <= 0.0 {
        return Err(Error::Plant(format!(
            "frequency response needs omega > 0, got {omega}"
        )));
    }
    let ns = plant.n_outputs;
    let na = plant.n_inputs;
    let mut g = DMatrix::<Complex64>::zeros(ns, na);
    let rigid_gain = Complex64::new(-1.0 / (omega * omega), 0.0);
    for r in 0..6 {
        let col = plant.c_s.column(r);
        let row = plant.b_a.row(r);
        for i in 0..ns {
            if col[i] == 0.0 {
                continue;
            }
            for j in 0..na {
                g[(i, j)] += rigid_gain * (col[i] * row[j]);
            }
        }
    }
    for fd in &plant.flexible {
        let den = Complex64::new(
            fd.omega * fd.omega - omega * omega,
            2.0 * fd.zeta * fd.omega * omega,
        );
        let gain = den.inv();
        for i in 0..ns {
            if fd.output_col[i] == 0.0 {
                continue;
            }
            for j in 0..na {
                g[(i, j)] += gain * (fd.output_col[i] * fd.input_row[j]);
            }
        }
    }
    Ok(g)
}

/// Same transfer matrix via C (j omega I - A)^-1 B, the cross-check path.
pub fn resolvent_frf(plant: &PlantModel, omega: f64) -> Result<DMatrix<Complex64>> {
    let ss = &plant.state_space;
    let nx = ss.a.nrows();
    let mut m = DMatrix::<Complex64>::zeros(nx, nx);
    for i in 0..nx {
        for j in 0..nx {
            m[(i, j)] = Complex64::new(-ss.a[(i, j)], if i == j { omega } else { 0.0 });
        }
    }
    let b: DMatrix<Complex64> = ss.b.map(|v| Complex64::new(v, 0.0));
    let sol = m
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Plant(format!("resolvent singular at omega = {omega}")))?;
    let c: DMatrix<Complex64> = ss.c.map(|v| Complex64::new(v, 0.0));
    Ok(c * sol)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecouplingPair {
    /// Channel commands -> actuator commands, n_inputs x n_channels.
    pub t_u: Vec<Vec<f64>>,
    /// Sensor readings -> channel coordinates, n_channels x n_outputs.
    pub t_y: Vec<Vec<f64>>,
    pub channel_labels: Vec<String>,
}

impl DecouplingPair {
    pub fn t_u_matrix(&self) -> DMatrix<f64> {
        let rows = self.t_u.len();
        let cols = self.t_u.first().map_or(0, Vec::len);
        DMatrix::from_fn(rows, cols, |i, j| self.t_u[i][j])
    }

    pub fn t_y_matrix(&self) -> DMatrix<f64> {
        let rows = self.t_y.len();
        let cols = self.t_y.first().map_or(0, Vec::len);
        DMatrix::from_fn(rows, cols, |i, j| self.t_y[i][j])
    }

    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }
}

pub fn channel_labels(n_controlled: usize) -> Vec<String> {
    let mut labels: Vec<String> = ["x", "y", "z", "rx", "ry", "rz"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for i in 0..n_controlled {
        labels.push(format!("flex{}", i + 1));
    }
    labels
}

fn pinv(mat: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let svd = mat.clone().svd(true, true);
    let smax = svd
        .singular_values
        .iter()
        .copied()
        .fold(0.0f64, f64::max);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    svd.pseudo_inverse(PINV_TOL_REL * smax).map_err(|_| Error::RankDeficient {
        context: context.to_string(),
        singular_values: sv,
    })
}

/// Static decoupling transforms for the 6 rigid channels plus the first
/// n_controlled flexible channels. T_y left-inverts the selected sensing
/// columns; T_u right-inverts the selected actuation rows.
pub fn decoupling_matrices(plant: &PlantModel) -> Result<DecouplingPair> {
    let nc = 6 + plant.n_controlled;
    let ng = 6 + plant.flexible.len();
    // selected generalized coordinates: all rigid, then controlled flex
    let mut csel = DMatrix::zeros(plant.n_outputs, nc);
    let mut bsel = DMatrix::zeros(nc, plant.n_inputs);
    for k in 0..nc {
        let g = if k < 6 { k } else { 6 + (k - 6) };
        debug_assert!(g < ng);
        csel.set_column(k, &plant.c_s.column(g));
        bsel.set_row(k, &plant.b_a.row(g));
    }
    let t_y = pinv(&csel, "sensing decoupling")?;
    let t_u = pinv(&bsel, "actuation recoupling")?;

    let iy = &t_y * &csel;
    let iu = &bsel * &t_u;
    for k in 0..nc {
        for l in 0..nc {
            let want = if k == l { 1.0 } else { 0.0 };
            if (iy[(k, l)] - want).abs() > 1e-8 || (iu[(k, l)] - want).abs() > 1e-8 {
                let mut sv: Vec<f64> = csel.clone().svd(false, false).singular_values.iter().copied().collect();
                sv.sort_by(|a, b| b.total_cmp(a));
                return Err(Error::RankDeficient {
                    context: "decoupling identity".to_string(),
                    singular_values: sv,
                });
            }
        }
    }

    Ok(DecouplingPair {
        t_u: (0..t_u.nrows())
            .map(|i| t_u.row(i).iter().copied().collect())
            .collect(),
        t_y: (0..t_y.nrows())
            .map(|i| t_y.row(i).iter().copied().collect())
            .collect(),
        channel_labels: channel_labels(plant.n_controlled),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChannelKind {
    Rigid,
    Flexible { omega: f64, zeta: f64 },
}

/// One decoupled SISO channel: its own dynamics plus residual coupling into
/// every retained mode, as residues over the shared modal denominators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelPlant {
    pub label: String,
    pub kind: ChannelKind,
    /// Residue on 1/s^2 (all six rigid coordinates lumped).
    pub rigid_residue: f64,
    /// (omega, zeta, residue) per retained flexible mode.
    pub flex_residues: Vec<(f64, f64, f64)>,
}

impl ChannelPlant {
    pub fn frf_at(&self, omega: f64) -> Complex64 {
        let mut g = Complex64::new(-self.rigid_residue / (omega * omega), 0.0);
        for (w, z, r) in &self.flex_residues {
            let den = Complex64::new(w * w - omega * omega, 2.0 * z * w * omega);
            g += Complex64::new(*r, 0.0) / den;
        }
        g
    }

    pub fn frf(&self, freqs_hz: &[f64]) -> Result<FrequencyResponse> {
        let values = freqs_hz.iter().map(|f| self.frf_at(TAU * f)).collect();
        FrequencyResponse::new(freqs_hz.to_vec(), values)
    }
}

/// Project the plant through the decoupling pair into per-channel residue
/// form. Residues below 1e-9 of the channel's largest are zeroed: they are
/// pseudo-inverse roundoff, and keeping them would fake rigid content in
/// flexible channels.
pub fn channel_plants(plant: &PlantModel, pair: &DecouplingPair) -> Vec<ChannelPlant> {
    let t_y = pair.t_y_matrix();
    let t_u = pair.t_u_matrix();
    let nc = pair.n_channels();
    let mut out = Vec::with_capacity(nc);
    for k in 0..nc {
        let ty_k = t_y.row(k);
        let tu_k = t_u.column(k);
        let mut rigid = 0.0;
        for r in 0..6 {
            let cy: f64 = ty_k.dot(&plant.c_s.column(r).transpose());
            let bu: f64 = plant.b_a.row(r).transpose().dot(&tu_k);
            rigid += cy * bu;
        }
        let mut flex: Vec<(f64, f64, f64)> = plant
            .flexible
            .iter()
            .map(|fd| {
                let cy: f64 = ty_k.dot(&fd.output_col.transpose());
                let bu: f64 = fd.input_row.dot(&tu_k);
                (fd.omega, fd.zeta, cy * bu)
            })
            .collect();
        let scale = flex
            .iter()
            .map(|(_, _, r)| r.abs())
            .fold(rigid.abs(), f64::max);
        if rigid.abs() < 1e-9 * scale {
            rigid = 0.0;
        }
        for fr in flex.iter_mut() {
            if fr.2.abs() < 1e-9 * scale {
                fr.2 = 0.0;
            }
        }
        let kind = if k < 6 {
            ChannelKind::Rigid
        } else {
            let fd = &plant.flexible[k - 6];
            ChannelKind::Flexible {
                omega: fd.omega,
                zeta: fd.zeta,
            }
        };
        out.push(ChannelPlant {
            label: pair.channel_labels[k].clone(),
            kind,
            rigid_residue: rigid,
            flex_residues: flex,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::EigenOptions;
    use crate::geometry::{Material, PointMass, StageGeometry};
    use crate::modal::solve_modes;
    use crate::placement::{Axis, Rect, Transducer};

    fn desk_model() -> ModalModel {
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
        solve_modes(&geom, &mat, 4, None, &EigenOptions::default()).unwrap()
    }

    fn desk_placement() -> PlacementConfig {
        let z = |x: f64, y: f64| Transducer {
            x,
            y,
            z_offset: -0.004,
            axis: Axis::Z,
            authority: 1.0,
        };
        let horiz = |x: f64, y: f64, axis: Axis| Transducer {
            x,
            y,
            z_offset: -0.004,
            axis,
            authority: 1.0,
        };
        let mut actuators = vec![
            z(0.0375, 0.0375),
            z(0.2625, 0.0375),
            z(0.0375, 0.2625),
            z(0.2625, 0.2625),
            z(0.15, 0.075),
            z(0.15, 0.225),
        ];
        actuators.push(horiz(0.075, 0.075, Axis::X));
        actuators.push(horiz(0.225, 0.225, Axis::X));
        actuators.push(horiz(0.075, 0.225, Axis::Y));
        actuators.push(horiz(0.225, 0.075, Axis::Y));
        let sensors = actuators.clone();
        let full = Rect {
            x_min: 0.0,
            y_min: 0.0,
            x_max: 0.3,
            y_max: 0.3,
        };
        PlacementConfig {
            actuators,
            sensors,
            domain_a: vec![full],
            domain_s: vec![full],
            gamma: 1.0,
            actuator_objective: 0.0,
            sensor_objective: 0.0,
        }
    }

    #[test]
    fn point_mass_plant_is_a_double_integrator() {
        use crate::modal::{Mode, ModeKind, RigidBody};
        use nalgebra::DVector;
        let geom = StageGeometry::uniform(0.4, 0.4, 2, 2, 0.005, (0.001, 0.02), vec![]);
        let nn = geom.n_nodes();
        let zero = DVector::zeros(3 * nn);
        let model = ModalModel {
            geometry: geom,
            material: Material::aluminum_7075(),
            modes: vec![
                Mode { kind: ModeKind::Heave, frequency_hz: 0.0, shape: zero.clone() },
                Mode { kind: ModeKind::RollX, frequency_hz: 0.0, shape: zero.clone() },
                Mode { kind: ModeKind::RollY, frequency_hz: 0.0, shape: zero },
            ],
            rigid_body: RigidBody {
                mass: 1.0,
                inertia: [0.02, 0.02, 0.04],
                center: (0.2, 0.2),
            },
            n_flexible: 0,
            eigen_iterations: 0,
        };
        // collocated transducer at the mass center: pure 1/(m s^2) in z
        let t = Transducer { x: 0.2, y: 0.2, z_offset: 0.0, axis: Axis::Z, authority: 1.0 };
        let b = actuation_map(&model, &[t]).unwrap();
        let c = sensing_map(&model, &[t]).unwrap();
        let g_z: f64 = (0..6).map(|r| c[(0, r)] * b[(r, 0)]).sum();
        let frf = Complex64::new(-g_z / 1.0, 0.0);
        assert!((frf.re + 1.0).abs() < 1e-14 && frf.im.abs() < 1e-14);
    }

    #[test]
    fn modal_sum_matches_resolvent() {
        let model = desk_model();
        let placement = desk_placement();
        let plant =
            assemble_plant(&model, &placement, &DampingPolicy::Uniform(0.005), 1).unwrap();
        for f_hz in [0.3, 7.0, 80.0, 333.0, 1500.0] {
            let omega = TAU * f_hz;
            let g1 = mimo_frf(&plant, omega).unwrap();
            let g2 = resolvent_frf(&plant, omega).unwrap();
            let scale = g1.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let diff = (&g1 - &g2).iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!(diff <= 1e-9 * scale, "f = {f_hz}: rel diff {}", diff / scale);
        }
    }

    #[test]
    fn state_matrix_eigenvalues_are_stable_or_origin() {
        let model = desk_model();
        let plant = assemble_plant(
            &model,
            &desk_placement(),
            &DampingPolicy::Uniform(0.005),
            1,
        )
        .unwrap();
        for ev in plant.state_space.a.clone().complex_eigenvalues().iter() {
            assert!(
                ev.re < 1e-9,
                "eigenvalue {ev} in the right half plane"
            );
        }
        let near_origin = plant
            .state_space
            .a
            .clone()
            .complex_eigenvalues()
            .iter()
            .filter(|ev| ev.norm() < 1e-9)
            .count();
        assert_eq!(near_origin, 12);
    }

    #[test]
    fn decoupling_identity_and_spillover_structure() {
        let model = desk_model();
        let plant = assemble_plant(
            &model,
            &desk_placement(),
            &DampingPolicy::Uniform(0.005),
            1,
        )
        .unwrap();
        let pair = decoupling_matrices(&plant).unwrap();
        assert_eq!(pair.channel_labels.len(), 7);
        assert_eq!(pair.channel_labels[6], "flex1");

        let chans = channel_plants(&plant, &pair);
        // selected channels own exactly their coordinate
        for (k, ch) in chans.iter().enumerate() {
            if k < 6 {
                assert!((ch.rigid_residue - 1.0).abs() < 1e-7, "{}: {}", ch.label, ch.rigid_residue);
                assert!((ch.flex_residues[0].2).abs() < 1e-7);
            } else {
                assert_eq!(ch.rigid_residue, 0.0);
                assert!((ch.flex_residues[0].2 - 1.0).abs() < 1e-7);
            }
        }

        // low-frequency decoupled response is diagonal-dominant
        let omega = TAU * 0.1;
        let g = mimo_frf(&plant, omega).unwrap();
        let ty = pair.t_y_matrix().map(|v| Complex64::new(v, 0.0));
        let tu = pair.t_u_matrix().map(|v| Complex64::new(v, 0.0));
        let dec = &ty * &g * &tu;
        for i in 0..6 {
            for j in 0..7 {
                if i == j {
                    continue;
                }
                assert!(
                    dec[(i, j)].norm() <= 1e-6 * dec[(i, i)].norm(),
                    "({i},{j}): {} vs {}",
                    dec[(i, j)].norm(),
                    dec[(i, i)].norm()
                );
            }
        }
    }

    #[test]
    fn channel_frf_matches_projected_mimo() {
        let model = desk_model();
        let plant = assemble_plant(
            &model,
            &desk_placement(),
            &DampingPolicy::Uniform(0.005),
            1,
        )
        .unwrap();
        let pair = decoupling_matrices(&plant).unwrap();
        let chans = channel_plants(&plant, &pair);
        let ty = pair.t_y_matrix().map(|v| Complex64::new(v, 0.0));
        let tu = pair.t_u_matrix().map(|v| Complex64::new(v, 0.0));
        for f_hz in [1.0, 45.0, 300.0] {
            let omega = TAU * f_hz;
            let dec = &ty * mimo_frf(&plant, omega).unwrap() * &tu;
            for (k, ch) in chans.iter().enumerate() {
                let direct = ch.frf_at(omega);
                let projected = dec[(k, k)];
                assert!(
                    (direct - projected).norm() <= 1e-7 * projected.norm().max(1e-12),
                    "{} at {f_hz} Hz: {direct} vs {projected}",
                    ch.label
                );
            }
        }
    }

    #[test]
    fn resonance_peak_location_and_height() {
        let model = desk_model();
        let plant = assemble_plant(
            &model,
            &desk_placement(),
            &DampingPolicy::Uniform(0.005),
            1,
        )
        .unwrap();
        let pair = decoupling_matrices(&plant).unwrap();
        let ch = &channel_plants(&plant, &pair)[6];
        let (omega_1, zeta_1, res_1) = ch.flex_residues[0];
        // fine linear grid around the mode
        let mut best = (0.0, 0.0);
        let n = 4000;
        for i in 0..n {
            let w = omega_1 * (0.98 + 0.04 * i as f64 / (n - 1) as f64);
            let m = ch.frf_at(w).norm();
            if m > best.1 {
                best = (w, m);
            }
        }
        let expect_peak_at = omega_1 * (1.0 - 2.0 * zeta_1 * zeta_1).sqrt();
        assert!((best.0 - expect_peak_at).abs() < omega_1 * 0.04 / (n as f64 - 1.0) * 2.0);
        let analytic = res_1.abs() / (2.0 * zeta_1 * omega_1 * omega_1);
        assert!((best.1 - analytic).abs() < 0.01 * analytic);
    }

    #[test]
    fn collocated_plant_is_reciprocal() {
        let model = desk_model();
        let plant = assemble_plant(
            &model,
            &desk_placement(),
            &DampingPolicy::Uniform(0.005),
            1,
        )
        .unwrap();
        let g = mimo_frf(&plant, TAU * 33.0).unwrap();
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let d = (g[(i, j)] - g[(j, i)]).norm();
                assert!(d <= 1e-10 * g[(i, j)].norm().max(1e-12));
            }
        }
    }

    #[test]
    fn starved_rigid_actuation_is_rejected() {
        let model = desk_model();
        let mut placement = desk_placement();
        // drop the in-plane drives: x, y, Rz become unactuated
        placement.actuators.retain(|t| t.axis == Axis::Z);
        placement.actuators.push(placement.actuators[0]);
        match assemble_plant(&model, &placement, &DampingPolicy::Uniform(0.005), 1) {
            Err(Error::RankDeficient { context, singular_values }) => {
                assert!(context.contains("actuation"));
                assert!(singular_values.len() == 6);
            }
            other => panic!("expected rank deficiency, got {:?}", other.map(|_| ())),
        }
    }
}
