//! Stage-ordered pipeline over one project config. Every stage writes its
//! artifacts into its own subdirectory of the run directory and records
//! content hashes in manifest.json, so re-running with unchanged inputs
//! skips cleanly. Result files are byte-reproducible; wall-clock timestamps
//! go only to the run.log sidecar.

use crate::analysis::{
    comparison_table, design_summary, loop_gain_report, simulate_closed_loop, DesignSummary,
    LoopGainReport, RefShape, SimOptions, TradeStudyReport,
};
use crate::config::{ProjectConfig, StructureGoal};
use crate::control::{tune_channel, ChannelController, TuningResult};
use crate::eigen::EigenOptions;
use crate::error::{Error, Result};
use crate::freq::{log_grid_hz, FrequencyResponse};
use crate::geometry::StageGeometry;
use crate::modal::{solve_modes, ModalModel};
use crate::placement::{optimize_placement, PlacementConfig};
use crate::plant::{
    assemble_plant, channel_labels, channel_plants, decoupling_matrices, ChannelPlant,
    DecouplingPair, PlantModel,
};
use crate::structure::{design_baseline, optimize_structure, OptimizationResult};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

const TAU: f64 = std::f64::consts::TAU;

/// Bumped when any artifact schema changes; stale records then re-run.
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Modes,
    Structure,
    Placement,
    Assembly,
    Tune,
    Analysis,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Modes,
        Stage::Structure,
        Stage::Placement,
        Stage::Assembly,
        Stage::Tune,
        Stage::Analysis,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Modes => "modes",
            Stage::Structure => "structure",
            Stage::Placement => "placement",
            Stage::Assembly => "assembly",
            Stage::Tune => "tune",
            Stage::Analysis => "analysis",
            Stage::Report => "report",
        }
    }

    fn prev(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|s| *s == self).expect("member");
        i.checked_sub(1).map(|j| Stage::ALL[j])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown stage {s:?}; expected one of modes, structure, placement, \
                     assembly, tune, analysis, report"
                ))
            })
    }
}

// --- manifest ---

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Manifest {
    config_sha256: String,
    stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageRecord {
    inputs_sha256: String,
    /// Relative artifact path -> content sha256.
    outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

// --- artifacts ---

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModesArtifact {
    version: u32,
    mass_kg: f64,
    inertia_kg_m2: [f64; 3],
    flexible_frequencies_hz: Vec<f64>,
    eigen_iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StructureArtifact {
    version: u32,
    goal: StructureGoal,
    mass_kg: f64,
    thickness_m: Vec<f64>,
    flexible_frequencies_hz: Vec<f64>,
    result: OptimizationResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PlacementArtifact {
    version: u32,
    placement: PlacementConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AssemblyArtifact {
    version: u32,
    n_actuators: usize,
    n_sensors: usize,
    decoupling: DecouplingPair,
    channels: Vec<ChannelPlant>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TunedChannel {
    pub label: String,
    pub tuning: TuningResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TuneArtifact {
    version: u32,
    channels: Vec<TunedChannel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabeledMetrics {
    label: String,
    rms_error_m: f64,
    max_error_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnalysisArtifact {
    version: u32,
    /// Loop FRFs live in the per-channel CSVs, not here.
    report: LoopGainReport,
    summary: DesignSummary,
    scan_channel: String,
    scan_metrics: Vec<LabeledMetrics>,
    sim_dt_s: f64,
    sim_duration_s: f64,
}

// --- run context ---

struct RunLog {
    out: BufWriter<File>,
}

impl RunLog {
    fn open(path: &Path) -> Result<RunLog> {
        let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RunLog {
            out: BufWriter::new(file),
        })
    }

    fn line(&mut self, msg: &str) {
        let t = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        let _ = writeln!(self.out, "[{t:.3}] {msg}");
        let _ = self.out.flush();
        log::info!("{msg}");
    }
}

struct Ctx {
    out: PathBuf,
    cfg_toml: String,
    manifest: Manifest,
    log: RunLog,
}

impl Ctx {
    fn open(out: &Path, cfg_toml: &str) -> Result<Ctx> {
        let manifest_path = out.join("manifest.json");
        let config_hash = sha256_hex(cfg_toml.as_bytes());
        let manifest = if manifest_path.exists() {
            let loaded: Manifest = read_json(&manifest_path)?;
            if loaded.config_sha256 == config_hash {
                loaded
            } else {
                Manifest {
                    config_sha256: config_hash,
                    stages: BTreeMap::new(),
                }
            }
        } else {
            Manifest {
                config_sha256: config_hash,
                stages: BTreeMap::new(),
            }
        };
        Ok(Ctx {
            out: out.to_path_buf(),
            cfg_toml: cfg_toml.to_string(),
            manifest,
            log: RunLog::open(&out.join("run.log"))?,
        })
    }

    fn stage_dir(&self, stage: Stage) -> Result<PathBuf> {
        let dir = self.out.join(stage.name());
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn path(&self, stage: Stage, name: &str) -> PathBuf {
        self.out.join(stage.name()).join(name)
    }

    /// Chained over the predecessor's record, so any upstream change
    /// invalidates everything downstream.
    fn inputs_hash(&self, stage: Stage) -> String {
        let mut h = Sha256::new();
        h.update(b"flexstage-stage\0");
        h.update(ARTIFACT_VERSION.to_le_bytes());
        h.update(stage.name().as_bytes());
        h.update([0]);
        h.update(self.cfg_toml.as_bytes());
        h.update([0]);
        if let Some(prev) = stage.prev() {
            if let Some(rec) = self.manifest.stages.get(prev.name()) {
                h.update(rec.inputs_sha256.as_bytes());
                for (rel, hash) in &rec.outputs {
                    h.update(rel.as_bytes());
                    h.update(hash.as_bytes());
                }
            }
        }
        let digest = h.finalize();
        let mut s = String::with_capacity(64);
        for b in digest {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    fn is_fresh(&self, stage: Stage, inputs: &str) -> bool {
        let Some(rec) = self.manifest.stages.get(stage.name()) else {
            return false;
        };
        if rec.inputs_sha256 != inputs {
            return false;
        }
        rec.outputs.iter().all(|(rel, want)| {
            hash_file(&self.out.join(rel))
                .map(|have| have == *want)
                .unwrap_or(false)
        })
    }

    fn record(&mut self, stage: Stage, inputs: String, files: &[String]) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for name in files {
            let rel = format!("{}/{name}", stage.name());
            let hash = hash_file(&self.out.join(&rel))?;
            outputs.insert(rel, hash);
        }
        self.manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                inputs_sha256: inputs,
                outputs,
            },
        );
        write_json(&self.out.join("manifest.json"), &self.manifest)
    }

    fn recorded_hash(&self, stage: Stage, name: &str) -> Option<&str> {
        self.manifest
            .stages
            .get(stage.name())?
            .outputs
            .get(&format!("{}/{name}", stage.name()))
            .map(String::as_str)
    }
}

// --- pipeline state ---

#[derive(Debug, Clone, Copy)]
pub struct StageStatus {
    pub stage: Stage,
    pub skipped: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub through: Stage,
    /// Replaces the config seed when set (CLI flag wins).
    pub seed: Option<u64>,
}

impl RunOptions {
    pub fn new<P: Into<PathBuf>>(out_dir: P) -> RunOptions {
        RunOptions {
            out_dir: out_dir.into(),
            through: Stage::Report,
            seed: None,
        }
    }
}

pub struct PipelineRun {
    pub config: ProjectConfig,
    pub out_dir: PathBuf,
    pub statuses: Vec<StageStatus>,
    pub template_modes_hz: Vec<f64>,
    pub optimized_geometry: Option<StageGeometry>,
    pub optimization: Option<OptimizationResult>,
    pub placement: Option<PlacementConfig>,
    pub decoupling: Option<DecouplingPair>,
    pub channels: Option<Vec<ChannelPlant>>,
    pub tunings: Option<Vec<TunedChannel>>,
    pub loop_report: Option<LoopGainReport>,
    pub summary: Option<DesignSummary>,
    optimized_model: Option<ModalModel>,
    plant: Option<PlantModel>,
}

impl PipelineRun {
    fn new(config: ProjectConfig, out_dir: PathBuf) -> PipelineRun {
        PipelineRun {
            config,
            out_dir,
            statuses: Vec::new(),
            template_modes_hz: Vec::new(),
            optimized_geometry: None,
            optimization: None,
            placement: None,
            decoupling: None,
            channels: None,
            tunings: None,
            loop_report: None,
            summary: None,
            optimized_model: None,
            plant: None,
        }
    }

    /// Modal model of the optimized geometry, recomputed after a skip. The
    /// eigensolve is deterministic, so this matches what the fresh run saw.
    fn ensure_model(&mut self) -> Result<&ModalModel> {
        if self.optimized_model.is_none() {
            let geometry = self
                .optimized_geometry
                .as_ref()
                .expect("structure stage precedes model consumers");
            let model = solve_modes(
                geometry,
                &self.config.material(),
                self.config.modal.n_flexible,
                None,
                &EigenOptions::default(),
            )?;
            self.optimized_model = Some(model);
        }
        Ok(self.optimized_model.as_ref().expect("just set"))
    }

    fn ensure_plant(&mut self) -> Result<&PlantModel> {
        if self.plant.is_none() {
            let placement = self
                .placement
                .clone()
                .expect("placement stage precedes plant consumers");
            let damping = self.config.damping();
            let n_controlled = self.config.structure.n_controlled;
            let plant = {
                let model = self.ensure_model()?;
                assemble_plant(model, &placement, &damping, n_controlled)?
            };
            self.plant = Some(plant);
        }
        Ok(self.plant.as_ref().expect("just set"))
    }
}

/// Run stages in order through `opts.through`, skipping fresh ones.
pub fn run_pipeline(cfg: &ProjectConfig, opts: &RunOptions) -> Result<PipelineRun> {
    let mut effective = cfg.clone();
    if let Some(seed) = opts.seed {
        effective.seed = seed;
    }
    effective.validate()?;
    fs::create_dir_all(&opts.out_dir)?;
    let cfg_toml = effective.to_toml()?;
    fs::write(opts.out_dir.join("config.resolved.toml"), &cfg_toml)?;

    let mut ctx = Ctx::open(&opts.out_dir, &cfg_toml)?;
    let mut run = PipelineRun::new(effective, opts.out_dir.clone());
    ctx.log.line(&format!(
        "run {} through {}",
        run.config.name, opts.through
    ));
    for stage in Stage::ALL {
        let started = Instant::now();
        let skipped = match stage {
            Stage::Modes => stage_modes(&mut run, &mut ctx)?,
            Stage::Structure => stage_structure(&mut run, &mut ctx)?,
            Stage::Placement => stage_placement(&mut run, &mut ctx)?,
            Stage::Assembly => stage_assembly(&mut run, &mut ctx)?,
            Stage::Tune => stage_tune(&mut run, &mut ctx)?,
            Stage::Analysis => stage_analysis(&mut run, &mut ctx)?,
            Stage::Report => stage_report(&mut run, &mut ctx)?,
        };
        let seconds = started.elapsed().as_secs_f64();
        ctx.log.line(&format!(
            "stage {stage}: {} ({seconds:.2} s)",
            if skipped { "fresh, skipped" } else { "ran" }
        ));
        run.statuses.push(StageStatus {
            stage,
            skipped,
            seconds,
        });
        if stage == opts.through {
            break;
        }
    }
    Ok(run)
}

fn stage_modes(run: &mut PipelineRun, ctx: &mut Ctx) -> Result<bool> {
    let stage = Stage::Modes;
    let inputs = ctx.inputs_hash(stage);
    if ctx.is_fresh(stage, &inputs) {
        let art: ModesArtifact = read_json(&ctx.path(stage, "modes.json"))?;
        run.template_modes_hz = art.flexible_frequencies_hz;
        return Ok(true);
    }
    let dir = ctx.stage_dir(stage)?;
    let cfg = &run.config;
    let template = cfg.template()?;
    let model = solve_modes(
        &template,
        &cfg.material(),
        cfg.modal.n_flexible,
        None,
        &EigenOptions::default(),
    )?;
    let art = ModesArtifact {
        version: ARTIFACT_VERSION,
        mass_kg: model.rigid_body.mass,
        inertia_kg_m2: model.rigid_body.inertia,
        flexible_frequencies_hz: model.flexible_frequencies_hz(),
        eigen_iterations: model.eigen_iterations,
    };
    write_json(&dir.join("modes.json"), &art)?;
    write_modes_csv(&dir.join("modes.csv"), &model)?;
    ctx.record(stage, inputs, &["modes.json".into(), "modes.csv".into()])?;
    ctx.log.line(&format!(
        "modes: template mass {:.4} kg, first flexible {:.2} Hz",
        art.mass_kg,
        art.flexible_frequencies_hz.first().copied().unwrap_or(f64::NAN)
    ));
    run.template_modes_hz = art.flexible_frequencies_hz;
    Ok(false)
}

fn write_modes_csv(path: &Path, model: &ModalModel) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "index,kind,frequency_hz")?;
    for (i, mode) in model.modes.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{:.17e}",
            format!("{:?}", mode.kind).to_lowercase(),
            mode.frequency_hz
        )?;
    }
    Ok(())
}

fn stage_structure(run: &mut PipelineRun, ctx: &mut Ctx) -> Result<bool> {
    let stage = Stage::Structure;
    let inputs = ctx.inputs_hash(stage);
    if ctx.is_fresh(stage, &inputs) {
        let art: StructureArtifact = read_json(&ctx.path(stage, "result.json"))?;
        let geometry: StageGeometry = read_json(&ctx.path(stage, "geometry.json"))?;
        run.optimized_geometry = Some(geometry);
        run.optimization = Some(art.result);
        return Ok(true);
    }
    let dir = ctx.stage_dir(stage)?;
    let cfg = &run.config;
    let template = cfg.template()?;
    let material = cfg.material();
    let opt_opts = cfg.optimize_options();
    let result = match cfg.structure.goal {
        StructureGoal::Band => {
            let spec = cfg.constraint_spec().expect("band goal has a spec");
            optimize_structure(&template, &material, &spec, &opt_opts)?
        }
        StructureGoal::Stiff => {
            let floor = cfg
                .structure
                .min_first_resonance_hz
                .expect("checked by ProjectConfig::validate");
            design_baseline(&template, &material, TAU * floor, &opt_opts)?
        }
    };
    if !result.feasible {
        return Err(Error::Infeasible(format!(
            "structure: no thickness in the box meets the frequency constraints \
             (best attempt {:.4} kg, worst slack {:.4e} rad/s)",
            result.mass,
            result
                .constraint_values
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
        )));
    }
    let geometry = template.with_thickness(&result.theta_p_star);
    let model = solve_modes(
        &geometry,
        &material,
        cfg.modal.n_flexible,
        None,
        &EigenOptions::default(),
    )?;
    let art = StructureArtifact {
        version: ARTIFACT_VERSION,
        goal: cfg.structure.goal,
        mass_kg: result.mass,
        thickness_m: result.theta_p_star.clone(),
        flexible_frequencies_hz: model.flexible_frequencies_hz(),
        result,
    };
    write_json(&dir.join("result.json"), &art)?;
    write_json(&dir.join("geometry.json"), &geometry)?;
    ctx.record(stage, inputs, &["result.json".into(), "geometry.json".into()])?;
    ctx.log.line(&format!(
        "structure: mass {:.4} kg, thickness {:?} m, flexible modes {:?} Hz",
        art.mass_kg,
        art.thickness_m,
        art.flexible_frequencies_hz
            .iter()
            .map(|f| (f * 100.0).round() / 100.0)
            .collect::<Vec<_>>()
    ));
    run.optimized_geometry = Some(geometry);
    run.optimization = Some(art.result.clone());
    run.optimized_model = Some(model);
    Ok(false)
}

fn stage_placement(run: &mut PipelineRun, ctx: &mut Ctx) -> Result<bool> {
    let stage = Stage::Placement;
    let inputs = ctx.inputs_hash(stage);
    if ctx.is_fresh(stage, &inputs) {
        let art: PlacementArtifact = read_json(&ctx.path(stage, "placement.json"))?;
        run.placement = Some(art.placement);
        return Ok(true);
    }
    let dir = ctx.stage_dir(stage)?;
    let opts = run.config.placement_options();
    let outcome = {
        let model = run.ensure_model()?;
        optimize_placement(model, &opts)?
    };
    let art = PlacementArtifact {
        version: ARTIFACT_VERSION,
        placement: outcome.config.clone(),
    };
    write_json(&dir.join("placement.json"), &art)?;
    outcome
        .actuator_landscape
        .write_csv(BufWriter::new(File::create(
            dir.join("actuator_landscape.csv"),
        )?))?;
    outcome
        .sensor_landscape
        .write_csv(BufWriter::new(File::create(
            dir.join("sensor_landscape.csv"),
        )?))?;
    ctx.record(
        stage,
        inputs,
        &[
            "placement.json".into(),
            "actuator_landscape.csv".into(),
            "sensor_landscape.csv".into(),
        ],
    )?;
    ctx.log.line(&format!(
        "placement: {} actuators, {} sensors, objectives {:.4e} / {:.4e}",
        outcome.config.actuators.len(),
        outcome.config.sensors.len(),
        outcome.config.actuator_objective,
        outcome.config.sensor_objective
    ));
    run.placement = Some(outcome.config);
    Ok(false)
}

fn stage_assembly(run: &mut PipelineRun, ctx: &mut Ctx) -> Result<bool> {
    let stage = Stage::Assembly;
    let inputs = ctx.inputs_hash(stage);
    if ctx.is_fresh(stage, &inputs) {
        let art: AssemblyArtifact = read_json(&ctx.path(stage, "assembly.json"))?;
        run.decoupling = Some(art.decoupling);
        run.channels = Some(art.channels);
        return Ok(true);
    }
    let dir = ctx.stage_dir(stage)?;
    let placement = run
        .placement
        .clone()
        .expect("placement stage precedes assembly");
    let damping = run.config.damping();
    let n_controlled = run.config.structure.n_controlled;
    let plant = {
        let model = run.ensure_model()?;
        assemble_plant(model, &placement, &damping, n_controlled)?
    };
    let pair = decoupling_matrices(&plant)?;
    let chans = channel_plants(&plant, &pair);
    let art = AssemblyArtifact {
        version: ARTIFACT_VERSION,
        n_actuators: plant.n_inputs,
        n_sensors: plant.n_outputs,
        decoupling: pair.clone(),
        channels: chans.clone(),
    };
    write_json(&dir.join("assembly.json"), &art)?;
    ctx.record(stage, inputs, &["assembly.json".into()])?;
    ctx.log.line(&format!(
        "assembly: {} channels from {} actuators and {} sensors",
        chans.len(),
        plant.n_inputs,
        plant.n_outputs
    ));
    run.plant = Some(plant);
    run.decoupling = Some(pair);
    run.channels = Some(chans);
    Ok(false)
}

fn stage_tune(run: &mut PipelineRun, ctx: &mut Ctx) -> Result<bool> {
    let stage = Stage::Tune;
    let inputs = ctx.inputs_hash(stage);
    if ctx.is_fresh(stage, &inputs) {
        let art: TuneArtifact = read_json(&ctx.path(stage, "tuning.json"))?;
        run.tunings = Some(art.channels);
        return Ok(true);
    }
    let dir = ctx.stage_dir(stage)?;
    let chans = run.channels.as_ref().expect("assembly precedes tune");
    let cfg = &run.config;
    let tunings = chans
        .par_iter()
        .map(|ch| -> Result<TunedChannel> {
            let tuning = tune_channel(ch, &cfg.tune_options(&ch.kind))
                .map_err(|e| label_channel_error(&ch.label, e))?;
            Ok(TunedChannel {
                label: ch.label.clone(),
                tuning,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let art = TuneArtifact {
        version: ARTIFACT_VERSION,
        channels: tunings.clone(),
    };
    write_json(&dir.join("tuning.json"), &art)?;
    ctx.record(stage, inputs, &["tuning.json".into()])?;
    for t in &tunings {
        ctx.log.line(&format!(
            "tune {}: bandwidth {:.2} Hz, peak |S| {:.4}, GM {:.2}, PM {:.1} deg",
            t.label,
            t.tuning.achieved_crossover / TAU,
            t.tuning.sensitivity_peak,
            t.tuning.gain_margin,
            t.tuning.phase_margin
        ));
    }
    run.tunings = Some(tunings);
    Ok(false)
}

fn label_channel_error(label: &str, e: Error) -> Error {
    match e {
        Error::Infeasible(m) => Error::Infeasible(format!("channel {label}: {m}")),
        Error::Control(m) => Error::Control(format!("channel {label}: {m}")),
        other => other,
    }
}

fn loop_gain_name(label: &str) -> String {
    format!("loop_gain_{label}.csv")
}

fn stage_analysis(run: &mut PipelineRun, ctx: &mut Ctx) -> Result<bool> {
    let stage = Stage::Analysis;
    let inputs = ctx.inputs_hash(stage);
    if ctx.is_fresh(stage, &inputs) {
        let art: AnalysisArtifact = read_json(&ctx.path(stage, "analysis.json"))?;
        let mut report = art.report;
        for ch in &mut report.channels {
            let path = ctx.path(stage, &loop_gain_name(&ch.label));
            let frf = FrequencyResponse::read_csv(BufReader::new(File::open(&path)?))
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            ch.loop_frf = Some(frf);
        }
        run.loop_report = Some(report);
        run.summary = Some(art.summary);
        return Ok(true);
    }
    let dir = ctx.stage_dir(stage)?;
    let cfg = run.config.clone();
    let chans = run.channels.clone().expect("assembly precedes analysis");
    let tunings = run.tunings.clone().expect("tune precedes analysis");

    let freqs = log_grid_hz(
        cfg.analysis.frf_lo_hz,
        cfg.analysis.frf_hi_hz,
        cfg.analysis.frf_points_per_decade,
    )?;
    let tunes_opt: Vec<Option<TuningResult>> =
        tunings.iter().map(|t| Some(t.tuning.clone())).collect();
    let report = loop_gain_report(&cfg.name, &chans, &tunes_opt, &freqs, cfg.loop_sign())?;
    let mut files: Vec<String> = vec!["analysis.json".into(), "scan.csv".into()];
    for ch in &report.channels {
        let name = loop_gain_name(&ch.label);
        let frf = ch.loop_frf.as_ref().expect("fresh report carries FRFs");
        frf.write_csv(BufWriter::new(File::create(dir.join(&name))?))?;
        files.push(name);
    }

    let curve = cfg.scan_curve()?;
    // leave decay room after the move so settling is visible in the trace
    let duration = cfg.analysis.sim_duration_s.max(1.2 * curve.duration());
    let labels = channel_labels(cfg.structure.n_controlled);
    let scan_idx = labels
        .iter()
        .position(|l| *l == cfg.analysis.scan.channel)
        .expect("checked by ProjectConfig::validate");
    let controllers: Vec<Option<ChannelController>> =
        tunings.iter().map(|t| Some(t.tuning.controller)).collect();
    let sim_opts = SimOptions {
        duration,
        dt: None,
        sign: cfg.loop_sign(),
        noise_rms: cfg.analysis.noise_rms_m,
        seed: cfg.seed,
    };
    let trace = {
        run.ensure_plant()?;
        let plant = run.plant.as_ref().expect("just ensured");
        let pair = run.decoupling.as_ref().expect("assembly precedes analysis");
        simulate_closed_loop(
            plant,
            pair,
            &controllers,
            &[(scan_idx, RefShape::Scan(curve))],
            &sim_opts,
        )?
    };
    trace.write_csv(dir.join("scan.csv"))?;
    let scan_metrics: Vec<LabeledMetrics> = trace
        .labels
        .iter()
        .zip(&trace.metrics)
        .map(|(label, m)| LabeledMetrics {
            label: label.clone(),
            rms_error_m: m.rms_error,
            max_error_m: m.max_error,
        })
        .collect();

    let mass = run
        .optimization
        .as_ref()
        .expect("structure precedes analysis")
        .mass;
    let tune_pairs: Vec<(String, TuningResult)> = tunings
        .iter()
        .map(|t| (t.label.clone(), t.tuning.clone()))
        .collect();
    let summary = design_summary(&cfg.name, mass, &tune_pairs, cfg.analysis.force_budget_n)?;

    let art = AnalysisArtifact {
        version: ARTIFACT_VERSION,
        report: report.clone(),
        summary: summary.clone(),
        scan_channel: cfg.analysis.scan.channel.clone(),
        scan_metrics,
        sim_dt_s: trace.dt,
        sim_duration_s: duration,
    };
    write_json(&dir.join("analysis.json"), &art)?;
    ctx.record(stage, inputs, &files)?;
    ctx.log.line(&format!(
        "analysis: scan on {} at dt {:.2e} s, worst tracking rms {:.3e} m",
        art.scan_channel,
        art.sim_dt_s,
        art.scan_metrics
            .iter()
            .map(|m| m.rms_error_m)
            .fold(0.0, f64::max)
    ));
    run.loop_report = Some(report);
    run.summary = Some(summary);
    Ok(false)
}

fn stage_report(run: &mut PipelineRun, ctx: &mut Ctx) -> Result<bool> {
    let stage = Stage::Report;
    let inputs = ctx.inputs_hash(stage);
    if ctx.is_fresh(stage, &inputs) {
        return Ok(true);
    }
    let dir = ctx.stage_dir(stage)?;
    let report = run.loop_report.as_ref().expect("analysis precedes report");
    let summary = run.summary.as_ref().expect("analysis precedes report");

    let mut files: Vec<String> = vec!["summary.txt".into(), "trade.json".into()];
    for ch in &report.channels {
        let frf = ch.loop_frf.as_ref().expect("analysis populates FRFs");
        let (csv_name, svg_name) = (
            format!("bode_{}.csv", ch.label),
            format!("bode_{}.svg", ch.label),
        );
        write_bode_csv(frf, BufWriter::new(File::create(dir.join(&csv_name))?))?;
        fs::write(
            dir.join(&svg_name),
            bode_svg(&format!("{} loop gain", ch.label), frf),
        )?;
        files.push(csv_name);
        files.push(svg_name);
    }

    let mut text = comparison_table(std::slice::from_ref(report));
    text.push('\n');
    text.push_str(&format!("design {}\n", summary.name));
    text.push_str(&format!("  mass: {:.4} kg\n", summary.mass_kg));
    text.push_str(&format!(
        "  peak acceleration: {:.3} m/s^2 at {:.1} N per axis\n",
        summary.peak_acceleration, summary.force_budget_n
    ));
    fs::write(dir.join("summary.txt"), text)?;

    let mut provenance = BTreeMap::new();
    provenance.insert("config".to_string(), ctx.manifest.config_sha256.clone());
    for (stage_key, name) in [
        (Stage::Structure, "result.json"),
        (Stage::Placement, "placement.json"),
        (Stage::Tune, "tuning.json"),
        (Stage::Analysis, "analysis.json"),
    ] {
        if let Some(hash) = ctx.recorded_hash(stage_key, name) {
            provenance.insert(format!("{}/{name}", stage_key.name()), hash.to_string());
        }
    }
    let trade = TradeStudyReport {
        designs: vec![summary.clone()],
        provenance,
        seed: run.config.seed,
    };
    write_json(&dir.join("trade.json"), &trade)?;
    ctx.record(stage, inputs, &files)?;
    Ok(false)
}

// --- bode emission ---

/// Columns: frequency_hz, magnitude_db, phase_deg (phase unwrapped).
pub fn write_bode_csv<W: Write>(frf: &FrequencyResponse, mut out: W) -> Result<()> {
    let mag = frf.magnitude_db();
    let phase = frf.phase_deg_unwrapped();
    writeln!(out, "frequency_hz,magnitude_db,phase_deg")?;
    for i in 0..frf.len() {
        writeln!(
            out,
            "{:.9e},{:.9e},{:.9e}",
            frf.freqs_hz[i], mag[i], phase[i]
        )?;
    }
    Ok(())
}

/// Render a raw FRF file to its plottable CSV and SVG forms.
pub fn emit_bode_data(frf_csv: &Path, out_dir: &Path, label: &str) -> Result<(PathBuf, PathBuf)> {
    let frf = FrequencyResponse::read_csv(BufReader::new(File::open(frf_csv)?))
        .map_err(|e| Error::Format(format!("{}: {e}", frf_csv.display())))?;
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("bode_{label}.csv"));
    write_bode_csv(&frf, BufWriter::new(File::create(&csv_path)?))?;
    let svg_path = out_dir.join(format!("bode_{label}.svg"));
    fs::write(&svg_path, bode_svg(label, &frf))?;
    Ok((csv_path, svg_path))
}

/// Standalone magnitude plot over log frequency. Static output, no deps.
pub fn bode_svg(title: &str, frf: &FrequencyResponse) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const L: f64 = 64.0;
    const R: f64 = 20.0;
    const T: f64 = 34.0;
    const B: f64 = 46.0;
    let pw = W - L - R;
    let ph = H - T - B;

    let mag = frf.magnitude_db();
    let x0 = frf.freqs_hz.first().copied().unwrap_or(1.0).log10();
    let x1 = frf.freqs_hz.last().copied().unwrap_or(10.0).log10();
    let span = (x1 - x0).max(1e-9);
    let mut lo = mag.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = mag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    lo = (lo / 20.0).floor() * 20.0;
    hi = (hi / 20.0).ceil() * 20.0;
    if hi - lo < 1.0 {
        lo -= 20.0;
        hi += 20.0;
    }

    let x_at = |f: f64| L + pw * (f.log10() - x0) / span;
    let y_at = |db: f64| T + ph * (hi - db) / (hi - lo);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"#ffffff\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{L}\" y=\"20\" font-size=\"14\">{title}</text>\n"
    ));

    // decade gridlines
    let mut k = x0.ceil() as i64;
    while (k as f64) <= x1 {
        let x = x_at(10f64.powi(k as i32));
        s.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{T}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>\n",
            T + ph
        ));
        s.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">1e{k}</text>\n",
            H - 26.0
        ));
        k += 1;
    }
    // 20 dB gridlines
    let mut db = lo;
    while db <= hi + 1e-9 {
        let y = y_at(db);
        s.push_str(&format!(
            "<line x1=\"{L}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n",
            L + pw
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{db:.0}</text>\n",
            L - 6.0,
            y + 4.0
        ));
        db += 20.0;
    }
    s.push_str(&format!(
        "<rect x=\"{L}\" y=\"{T}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444444\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">frequency (Hz)</text>\n",
        L + pw / 2.0,
        H - 8.0
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" transform=\"rotate(-90 14 {:.1})\" \
         text-anchor=\"middle\">magnitude (dB)</text>\n",
        T + ph / 2.0,
        T + ph / 2.0
    ));

    let mut points = String::new();
    for (f, db) in frf.freqs_hz.iter().zip(&mag) {
        points.push_str(&format!("{:.1},{:.1} ", x_at(*f), y_at(db.clamp(lo, hi))));
    }
    s.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"1.5\"/>\n",
        points.trim_end()
    ));
    s.push_str("</svg>\n");
    s
}

// --- omega_high sweep ---

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub omega_high_hz: f64,
    /// None when no feasible thickness exists at this corner.
    pub mass_kg: Option<f64>,
    pub feasible: bool,
    pub evaluations: usize,
    pub thickness_m: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepArtifact {
    pub version: u32,
    pub omega_low_hz: f64,
    pub points: Vec<SweepPoint>,
}

/// Mass-versus-omega_high trade curve: re-run the structure optimization at
/// evenly spaced constraint corners. Infeasible corners are recorded, not
/// fatal; the curve is the point of the study.
pub fn sweep_omega_high(
    cfg: &ProjectConfig,
    from_hz: f64,
    to_hz: f64,
    steps: usize,
    out_dir: &Path,
) -> Result<SweepArtifact> {
    let spec0 = cfg.constraint_spec().ok_or_else(|| {
        Error::Config("sweep-omega-high needs a config with structure.goal = \"band\"".into())
    })?;
    if steps < 2 {
        return Err(Error::Config(format!("need at least 2 steps, got {steps}")));
    }
    let omega_low_hz = spec0.omega_low / TAU;
    if !(from_hz > omega_low_hz && from_hz < to_hz) {
        return Err(Error::Config(format!(
            "sweep range [{from_hz}, {to_hz}] Hz must be increasing and sit above \
             omega_low = {omega_low_hz} Hz"
        )));
    }
    let template = cfg.template()?;
    let material = cfg.material();
    let opt_opts = cfg.optimize_options();

    let corners: Vec<f64> = (0..steps)
        .map(|i| from_hz + (to_hz - from_hz) * i as f64 / (steps - 1) as f64)
        .collect();
    let points = corners
        .par_iter()
        .map(|&omega_high_hz| -> Result<SweepPoint> {
            let spec = crate::structure::FrequencyConstraintSpec {
                omega_high: TAU * omega_high_hz,
                ..spec0
            };
            let r = optimize_structure(&template, &material, &spec, &opt_opts)?;
            Ok(SweepPoint {
                omega_high_hz,
                mass_kg: r.feasible.then_some(r.mass),
                feasible: r.feasible,
                evaluations: r.iterations,
                thickness_m: r.theta_p_star,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let artifact = SweepArtifact {
        version: ARTIFACT_VERSION,
        omega_low_hz,
        points,
    };
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("sweep.json"), &artifact)?;
    let mut csv = BufWriter::new(File::create(out_dir.join("omega_high_sweep.csv"))?);
    writeln!(csv, "omega_high_hz,mass_kg,feasible,evaluations")?;
    for p in &artifact.points {
        writeln!(
            csv,
            "{:.9e},{},{},{}",
            p.omega_high_hz,
            p.mass_kg.map_or("nan".to_string(), |m| format!("{m:.9e}")),
            p.feasible,
            p.evaluations
        )?;
    }
    Ok(artifact)
}

// --- design comparison ---

pub struct CompareOutcome {
    pub runs: Vec<PipelineRun>,
    pub trade: TradeStudyReport,
    pub table: String,
}

/// Full pipeline per design (each in its own subdirectory), then one trade
/// table and report over all of them.
pub fn compare_designs(cfgs: &[ProjectConfig], opts: &RunOptions) -> Result<CompareOutcome> {
    if cfgs.len() < 2 {
        return Err(Error::Config("compare needs at least two designs".into()));
    }
    for (i, a) in cfgs.iter().enumerate() {
        if cfgs[..i].iter().any(|b| b.name == a.name) {
            return Err(Error::Config(format!(
                "designs must have distinct names, {:?} repeats",
                a.name
            )));
        }
    }
    let mut runs = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        let sub = RunOptions {
            out_dir: opts.out_dir.join(&cfg.name),
            through: Stage::Report,
            seed: opts.seed,
        };
        runs.push(run_pipeline(cfg, &sub)?);
    }

    let reports: Vec<LoopGainReport> = runs
        .iter()
        .map(|r| r.loop_report.clone().expect("report stage ran"))
        .collect();
    let table = comparison_table(&reports);

    let mut provenance = BTreeMap::new();
    for run in &runs {
        let cfg_toml = run.config.to_toml()?;
        provenance.insert(
            format!("config/{}", run.config.name),
            sha256_hex(cfg_toml.as_bytes()),
        );
    }
    let trade = TradeStudyReport {
        designs: runs
            .iter()
            .map(|r| r.summary.clone().expect("report stage ran"))
            .collect(),
        provenance,
        seed: opts.seed.unwrap_or(cfgs[0].seed),
    };

    let dir = opts.out_dir.join("compare");
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("trade.json"), &trade)?;
    fs::write(dir.join("trade_table.txt"), &table)?;
    Ok(CompareOutcome { runs, trade, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn stage_names_round_trip_and_order() {
        for stage in Stage::ALL {
            assert_eq!(stage.name().parse::<Stage>().unwrap(), stage);
        }
        assert!(Stage::Modes < Stage::Structure && Stage::Analysis < Stage::Report);
        let err = "polish".parse::<Stage>().unwrap_err();
        assert!(err.to_string().contains("report"), "{err}");
        assert_eq!(Stage::Modes.prev(), None);
        assert_eq!(Stage::Report.prev(), Some(Stage::Analysis));
    }

    #[test]
    fn sha256_of_empty_input_is_the_known_constant() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    fn unit_frf() -> FrequencyResponse {
        let freqs: Vec<f64> = (0..50).map(|i| 10f64.powf(i as f64 / 10.0)).collect();
        let values = vec![Complex64::new(1.0, 0.0); 50];
        FrequencyResponse::new(freqs, values).unwrap()
    }

    #[test]
    fn bode_csv_maps_unit_gain_to_zero_db() {
        let mut buf = Vec::new();
        write_bode_csv(&unit_frf(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("frequency_hz,magnitude_db,phase_deg"));
        for line in lines {
            let fields: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(fields.len(), 3);
            assert_eq!(fields[1], 0.0);
            assert_eq!(fields[2], 0.0);
        }
    }

    #[test]
    fn bode_phase_column_is_unwrapped() {
        // two-turn delay phase: raw arg wraps, the emitted column must not
        let freqs: Vec<f64> = (1..=400).map(|i| i as f64).collect();
        let values: Vec<Complex64> = freqs
            .iter()
            .map(|f| Complex64::from_polar(1.0, -TAU * f / 100.0))
            .collect();
        let frf = FrequencyResponse::new(freqs, values).unwrap();
        let mut buf = Vec::new();
        write_bode_csv(&frf, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let phases: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        for w in phases.windows(2) {
            assert!((w[1] - w[0]).abs() < 180.0, "jump {} -> {}", w[0], w[1]);
        }
        let total = phases.last().unwrap() - phases.first().unwrap();
        assert!((total + 360.0 * 399.0 / 100.0).abs() < 4.0, "total {total}");
    }

    #[test]
    fn bode_svg_is_a_plot() {
        let svg = bode_svg("x loop gain", &unit_frf());
        assert!(svg.starts_with("<svg "));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("x loop gain"));
        assert!(svg.contains("frequency (Hz)"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
