//! Declarative project configuration. One TOML document drives the whole
//! pipeline; every physical key carries an explicit unit suffix and unknown
//! keys are rejected, so a typo fails loudly instead of silently defaulting.

use crate::analysis::{SCurve, DEFAULT_FORCE_BUDGET_N};
use crate::control::{LoopSign, TuneOptions, DEFAULT_ALPHA, DEFAULT_MS_BOUND, DEFAULT_Z_LP};
use crate::error::{Error, Result};
use crate::geometry::{Material, PointMass, StageGeometry};
use crate::modal::DampingPolicy;
use crate::placement::{Axis, PlacementOptions, Rect, Transducer};
use crate::plant::{channel_labels, ChannelKind};
use crate::structure::{FrequencyConstraintSpec, OptimizeOptions};
use serde::{Deserialize, Serialize};
use std::path::Path;

const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    /// Design name used in reports and comparison tables.
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub modal: ModalConfig,
    pub structure: StructureConfig,
    pub placement: PlacementBlock,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub length_x_m: f64,
    pub length_y_m: f64,
    pub nx: usize,
    pub ny: usize,
    /// Thickness box searched by the structure stage.
    pub thickness_min_m: f64,
    pub thickness_max_m: f64,
    /// Starting thickness; defaults to the stiff end of the box.
    pub thickness_m: Option<f64>,
    /// Mirrored y-band regions, center outward. Empty means one region.
    #[serde(default)]
    pub band: Vec<BandConfig>,
    #[serde(default)]
    pub point_mass: Vec<PointMassConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    /// Element rows on each side of the horizontal centerline.
    pub rows: usize,
    pub thickness_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassConfig {
    pub x_m: f64,
    pub y_m: f64,
    pub kg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub youngs_modulus_pa: f64,
    pub poisson_ratio: f64,
    pub density_kg_m3: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        let m = Material::aluminum_7075();
        MaterialConfig {
            youngs_modulus_pa: m.youngs_modulus,
            poisson_ratio: m.poisson_ratio,
            density_kg_m3: m.density,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalConfig {
    /// Flexible modes retained in the model.
    pub n_flexible: usize,
    pub damping_ratio: f64,
}

impl Default for ModalConfig {
    fn default() -> Self {
        ModalConfig {
            n_flexible: 8,
            damping_ratio: 0.005,
        }
    }
}

/// What the structure stage minimizes mass against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureGoal {
    /// Controlled modes below omega_low, the next ones above omega_high.
    Band,
    /// Conventional practice: first resonance above a floor, no mode control.
    Stiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureConfig {
    pub goal: StructureGoal,
    pub omega_low_hz: Option<f64>,
    pub omega_high_hz: Option<f64>,
    /// Floor for goal = "stiff".
    pub min_first_resonance_hz: Option<f64>,
    #[serde(default = "default_n_controlled")]
    pub n_controlled: usize,
    /// Uncontrolled modes held above omega_high.
    #[serde(default = "default_n_constrained")]
    pub n_constrained: usize,
    #[serde(default = "default_max_evaluations")]
    pub max_evaluations: usize,
    #[serde(default = "default_random_starts")]
    pub random_starts: usize,
    #[serde(default = "default_coarse_sweep")]
    pub coarse_sweep: usize,
}

fn default_n_controlled() -> usize {
    1
}

fn default_n_constrained() -> usize {
    3
}

fn default_max_evaluations() -> usize {
    3000
}

fn default_random_starts() -> usize {
    3
}

fn default_coarse_sweep() -> usize {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementBlock {
    /// Grid intervals per domain axis; points per axis is resolution + 1.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_true")]
    pub symmetric: bool,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Flexible modes entering the placement objective.
    #[serde(default = "default_n_weighted")]
    pub n_weighted: usize,
    #[serde(default = "default_one")]
    pub actuator_slots: usize,
    #[serde(default = "default_one")]
    pub sensor_slots: usize,
    #[serde(default)]
    pub actuator_z_offset_m: f64,
    #[serde(default)]
    pub sensor_z_offset_m: f64,
    /// Relative authority of the optimized vertical transducers.
    #[serde(default = "default_authority")]
    pub authority: f64,
    pub actuator_domain: Vec<RectConfig>,
    pub sensor_domain: Vec<RectConfig>,
    /// User-fixed transducers, e.g. the in-plane drives.
    #[serde(default)]
    pub fixed_actuator: Vec<TransducerConfig>,
    #[serde(default)]
    pub fixed_sensor: Vec<TransducerConfig>,
}

fn default_resolution() -> usize {
    8
}

fn default_true() -> bool {
    true
}

fn default_gamma() -> f64 {
    1.0
}

fn default_n_weighted() -> usize {
    4
}

fn default_one() -> usize {
    1
}

fn default_authority() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectConfig {
    pub x_min_m: f64,
    pub y_min_m: f64,
    pub x_max_m: f64,
    pub y_max_m: f64,
}

impl RectConfig {
    pub fn to_rect(&self) -> Rect {
        Rect {
            x_min: self.x_min_m,
            y_min: self.y_min_m,
            x_max: self.x_max_m,
            y_max: self.y_max_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransducerConfig {
    pub x_m: f64,
    pub y_m: f64,
    #[serde(default)]
    pub z_offset_m: f64,
    pub axis: Axis,
    #[serde(default = "default_authority")]
    pub authority: f64,
}

impl TransducerConfig {
    pub fn to_transducer(&self) -> Transducer {
        Transducer {
            x: self.x_m,
            y: self.y_m,
            z_offset: self.z_offset_m,
            axis: self.axis,
            authority: self.authority,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_z_lp")]
    pub z_lp: f64,
    #[serde(default = "default_ms_bound")]
    pub ms_bound: f64,
    /// Flip the loop-sign convention.
    #[serde(default)]
    pub positive_feedback: bool,
    /// Bandwidth search range for the six rigid channels.
    #[serde(default = "default_rigid_range")]
    pub rigid_bandwidth_hz: [f64; 2],
    /// Flexible channels only stabilize crossing over beyond their mode, so
    /// they search a separate, higher range.
    #[serde(default = "default_flex_range")]
    pub flex_bandwidth_hz: [f64; 2],
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_z_lp() -> f64 {
    DEFAULT_Z_LP
}

fn default_ms_bound() -> f64 {
    DEFAULT_MS_BOUND
}

fn default_rigid_range() -> [f64; 2] {
    [0.5, 200.0]
}

fn default_flex_range() -> [f64; 2] {
    [40.0, 1000.0]
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            alpha: default_alpha(),
            z_lp: default_z_lp(),
            ms_bound: default_ms_bound(),
            positive_feedback: false,
            rigid_bandwidth_hz: default_rigid_range(),
            flex_bandwidth_hz: default_flex_range(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_force_budget")]
    pub force_budget_n: f64,
    #[serde(default = "default_frf_lo")]
    pub frf_lo_hz: f64,
    #[serde(default = "default_frf_hi")]
    pub frf_hi_hz: f64,
    #[serde(default = "default_ppd")]
    pub frf_points_per_decade: usize,
    #[serde(default = "default_sim_duration")]
    pub sim_duration_s: f64,
    /// White measurement noise RMS per sensor; zero disables it.
    #[serde(default)]
    pub noise_rms_m: f64,
    #[serde(default)]
    pub scan: ScanConfig,
}

fn default_force_budget() -> f64 {
    DEFAULT_FORCE_BUDGET_N
}

fn default_frf_lo() -> f64 {
    1.0
}

fn default_frf_hi() -> f64 {
    2000.0
}

fn default_ppd() -> usize {
    200
}

fn default_sim_duration() -> f64 {
    1.0
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            force_budget_n: default_force_budget(),
            frf_lo_hz: default_frf_lo(),
            frf_hi_hz: default_frf_hi(),
            frf_points_per_decade: default_ppd(),
            sim_duration_s: default_sim_duration(),
            noise_rms_m: 0.0,
            scan: ScanConfig::default(),
        }
    }
}

/// Rest-to-rest scan simulated in the analysis stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub channel: String,
    pub distance_m: f64,
    pub v_max_m_s: f64,
    pub a_max_m_s2: f64,
    pub j_max_m_s3: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            channel: "y".into(),
            distance_m: 0.05,
            v_max_m_s: 0.25,
            a_max_m_s2: 5.0,
            j_max_m_s3: 400.0,
        }
    }
}

impl ProjectConfig {
    pub fn from_toml(text: &str) -> Result<ProjectConfig> {
        let cfg: ProjectConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<ProjectConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("name must not be empty".into()));
        }
        // surfaces mesh, band, bound, and point-mass errors with their
        // geometry-level messages
        self.template()?;

        let s = &self.structure;
        match s.goal {
            StructureGoal::Band => {
                let lo = require(s.omega_low_hz, "structure.omega_low_hz")?;
                let hi = require(s.omega_high_hz, "structure.omega_high_hz")?;
                if !(lo > 0.0 && lo < hi) {
                    return Err(Error::Config(format!(
                        "need 0 < omega_low_hz < omega_high_hz, got {lo} and {hi}"
                    )));
                }
                if s.n_controlled < 1 {
                    return Err(Error::Config(
                        "structure.n_controlled must be at least 1 for goal = \"band\"".into(),
                    ));
                }
            }
            // a stiff design controls no mode, so n_controlled = 0 is legal
            StructureGoal::Stiff => {
                let floor = require(s.min_first_resonance_hz, "structure.min_first_resonance_hz")?;
                if !(floor > 0.0) {
                    return Err(Error::Config(format!(
                        "structure.min_first_resonance_hz must be positive, got {floor}"
                    )));
                }
            }
        }
        if self.modal.n_flexible < s.n_controlled + s.n_constrained {
            return Err(Error::Config(format!(
                "modal.n_flexible = {} cannot cover {} controlled + {} constrained modes",
                self.modal.n_flexible, s.n_controlled, s.n_constrained
            )));
        }
        if !(self.modal.damping_ratio > 0.0 && self.modal.damping_ratio < 1.0) {
            return Err(Error::Config(format!(
                "modal.damping_ratio must lie in (0, 1), got {}",
                self.modal.damping_ratio
            )));
        }

        let p = &self.placement;
        if p.resolution < 2 {
            return Err(Error::Config("placement.resolution must be at least 2".into()));
        }
        if !(p.gamma > 0.0) {
            return Err(Error::Config("placement.gamma must be positive".into()));
        }
        for r in p.actuator_domain.iter().chain(&p.sensor_domain) {
            r.to_rect().validate()?;
        }
        for t in p.fixed_actuator.iter().chain(&p.fixed_sensor) {
            if !(t.authority > 0.0) {
                return Err(Error::Config(format!(
                    "transducer authority must be positive, got {}",
                    t.authority
                )));
            }
        }

        let c = &self.control;
        if !(c.alpha > 1.0) {
            return Err(Error::Config(format!(
                "control.alpha must exceed 1, got {}",
                c.alpha
            )));
        }
        if !(c.ms_bound >= 1.0) {
            return Err(Error::Config(format!(
                "control.ms_bound must be at least 1, got {}",
                c.ms_bound
            )));
        }
        for (range, key) in [
            (c.rigid_bandwidth_hz, "control.rigid_bandwidth_hz"),
            (c.flex_bandwidth_hz, "control.flex_bandwidth_hz"),
        ] {
            if !(range[0] > 0.0 && range[0] <= range[1]) {
                return Err(Error::Config(format!(
                    "{key} must satisfy 0 < lo <= hi, got [{}, {}]",
                    range[0], range[1]
                )));
            }
        }

        let a = &self.analysis;
        if !(a.force_budget_n > 0.0) {
            return Err(Error::Config("analysis.force_budget_n must be positive".into()));
        }
        if !(a.frf_lo_hz > 0.0 && a.frf_lo_hz < a.frf_hi_hz) {
            return Err(Error::Config(format!(
                "need 0 < frf_lo_hz < frf_hi_hz, got {} and {}",
                a.frf_lo_hz, a.frf_hi_hz
            )));
        }
        if a.frf_points_per_decade < 1 {
            return Err(Error::Config(
                "analysis.frf_points_per_decade must be at least 1".into(),
            ));
        }
        if !(a.sim_duration_s > 0.0) {
            return Err(Error::Config("analysis.sim_duration_s must be positive".into()));
        }
        let labels = channel_labels(s.n_controlled);
        if !labels.contains(&a.scan.channel) {
            return Err(Error::Config(format!(
                "analysis.scan.channel {:?} is not one of {labels:?}",
                a.scan.channel
            )));
        }
        // constructor revalidates, but fail at load time, not mid-pipeline
        self.scan_curve()?;
        Ok(())
    }

    pub fn material(&self) -> Material {
        Material {
            youngs_modulus: self.material.youngs_modulus_pa,
            poisson_ratio: self.material.poisson_ratio,
            density: self.material.density_kg_m3,
        }
    }

    /// Geometry template at the starting thickness.
    pub fn template(&self) -> Result<StageGeometry> {
        let g = &self.geometry;
        let start = g.thickness_m.unwrap_or(g.thickness_max_m);
        let masses: Vec<PointMass> = g
            .point_mass
            .iter()
            .map(|p| PointMass {
                x: p.x_m,
                y: p.y_m,
                kg: p.kg,
            })
            .collect();
        let bounds = (g.thickness_min_m, g.thickness_max_m);
        let built = if g.band.is_empty() {
            StageGeometry::uniform(g.length_x_m, g.length_y_m, g.nx, g.ny, start, bounds, masses)
        } else {
            let rows: Vec<usize> = g.band.iter().map(|b| b.rows).collect();
            let thickness: Vec<f64> = g
                .band
                .iter()
                .map(|b| b.thickness_m.unwrap_or(start))
                .collect();
            StageGeometry::mirrored_bands(
                g.length_x_m,
                g.length_y_m,
                g.nx,
                g.ny,
                &rows,
                thickness,
                vec![bounds; g.band.len()],
                masses,
            )?
        };
        built.validate()?;
        Ok(built)
    }

    /// Band-goal constraint spec in rad/s; None for the stiff goal.
    pub fn constraint_spec(&self) -> Option<FrequencyConstraintSpec> {
        match self.structure.goal {
            StructureGoal::Band => Some(FrequencyConstraintSpec {
                omega_low: TAU * self.structure.omega_low_hz.unwrap_or(0.0),
                omega_high: TAU * self.structure.omega_high_hz.unwrap_or(0.0),
                n_controlled: self.structure.n_controlled,
                n_constrained_uncontrolled: self.structure.n_constrained,
            }),
            StructureGoal::Stiff => None,
        }
    }

    pub fn optimize_options(&self) -> OptimizeOptions {
        OptimizeOptions {
            max_evaluations: self.structure.max_evaluations,
            n_random_starts: self.structure.random_starts,
            coarse_sweep: self.structure.coarse_sweep,
            seed: self.seed,
            ..OptimizeOptions::default()
        }
    }

    pub fn damping(&self) -> DampingPolicy {
        DampingPolicy::Uniform(self.modal.damping_ratio)
    }

    pub fn placement_options(&self) -> PlacementOptions {
        let p = &self.placement;
        PlacementOptions {
            domain_a: p.actuator_domain.iter().map(RectConfig::to_rect).collect(),
            domain_s: p.sensor_domain.iter().map(RectConfig::to_rect).collect(),
            gamma: p.gamma,
            resolution: p.resolution,
            symmetric: p.symmetric,
            n_controlled: self.structure.n_controlled,
            n_weighted: p.n_weighted,
            actuator_slots: p.actuator_slots,
            sensor_slots: p.sensor_slots,
            z_offset_a: p.actuator_z_offset_m,
            z_offset_s: p.sensor_z_offset_m,
            authority: p.authority,
            fixed_actuators: p
                .fixed_actuator
                .iter()
                .map(TransducerConfig::to_transducer)
                .collect(),
            fixed_sensors: p
                .fixed_sensor
                .iter()
                .map(TransducerConfig::to_transducer)
                .collect(),
            damping: self.damping(),
        }
    }

    pub fn loop_sign(&self) -> LoopSign {
        if self.control.positive_feedback {
            LoopSign::Positive
        } else {
            LoopSign::Negative
        }
    }

    /// Tuning options for one channel; flexible channels search their own
    /// range because they cannot cross over below the mode they control.
    pub fn tune_options(&self, kind: &ChannelKind) -> TuneOptions {
        let range = match kind {
            ChannelKind::Rigid => self.control.rigid_bandwidth_hz,
            ChannelKind::Flexible { .. } => self.control.flex_bandwidth_hz,
        };
        TuneOptions {
            alpha: self.control.alpha,
            z_lp: self.control.z_lp,
            omega_lo: TAU * range[0],
            omega_hi: TAU * range[1],
            ms_bound: self.control.ms_bound,
            sign: self.loop_sign(),
        }
    }

    pub fn scan_curve(&self) -> Result<SCurve> {
        let s = &self.analysis.scan;
        SCurve::new(s.distance_m, s.v_max_m_s, s.a_max_m_s2, s.j_max_m_s3)
    }
}

fn require(value: Option<f64>, key: &str) -> Result<f64> {
    value.ok_or_else(|| Error::Config(format!("missing required key {key}")))
}
