//! End-to-end workflow: sample the model, colorize the scan, register it
//! coarse-to-fine, transfer labels and aggregate per-class statistics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lodtherm::coarse::{fgr_register, FgrParams};
use lodtherm::enrichment::{class_statistics, ClassStatistics, LabelSource, TransferParams};
use lodtherm::fine::{register_fine, IcpParams, RansacParams, Rectification};
use lodtherm::geometry::{PointCloud, RigidTransform, SemanticClass};
use lodtherm::metrics::{evaluate_registration, RegistrationMetrics, RegistrationReport};
use lodtherm::projection::{colorize_cloud, OcclusionParams};
use lodtherm::sampling::{sample_model, SamplingParams};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result, StageExt};
use crate::io;

/// Parameters of the coarse-to-fine registration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub fgr: FgrParams,
    pub ransac: RansacParams,
    pub icp: IcpParams,
    /// Distance threshold for the reported fitness / RMSE of both stages.
    pub evaluation_threshold: f64,
    /// Overrides the seeds of the randomized stages.
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            fgr: FgrParams::default(),
            ransac: RansacParams::default(),
            icp: IcpParams::default(),
            evaluation_threshold: 2.0,
            seed: 42,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.fgr.validate()?;
        self.ransac.validate()?;
        self.icp.validate()?;
        if !(self.evaluation_threshold > 0.0) {
            return Err(PipelineError::Config("evaluation_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// What a registration run reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationSummary {
    /// Source → target after both stages.
    pub transform: RigidTransform,
    pub fitness: f64,
    pub rmse: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Both stages evaluated at the evaluation threshold.
    pub coarse_metrics: RegistrationMetrics,
    pub fine_metrics: RegistrationMetrics,
    pub coarse: RegistrationReport,
    pub fine: RegistrationReport,
    pub correspondences: usize,
    pub rectification: Rectification,
    pub params: RegistrationConfig,
    pub seed: u64,
}

/// Coarse (FGR) then fine (rectification + ICP) registration of `source`
/// onto `target`.
pub fn register(source: &PointCloud, target: &PointCloud, config: &RegistrationConfig) -> Result<RegistrationSummary> {
    config.validate()?;
    let mut fgr = config.fgr.clone();
    fgr.seed = config.seed;
    fgr.evaluation_threshold = config.evaluation_threshold;
    let mut ransac = config.ransac.clone();
    ransac.seed = config.seed;

    let coarse = fgr_register(source, target, &fgr).stage("coarse-registration")?;
    let fine =
        register_fine(source, target, &coarse.report.transform, &ransac, &config.icp).stage("fine-registration")?;
    let coarse_metrics = RegistrationMetrics {
        fitness: coarse.report.fitness,
        rmse: coarse.report.rmse,
        inlier_count: coarse.report.inlier_count,
    };
    let fine_metrics = evaluate_registration(source, target, &fine.report.transform, config.evaluation_threshold)
        .stage("fine-registration")?;
    let mut params = config.clone();
    params.fgr = fgr;
    params.ransac = ransac;
    Ok(RegistrationSummary {
        transform: fine.report.transform,
        fitness: fine_metrics.fitness,
        rmse: fine_metrics.rmse,
        iterations: fine.report.iterations,
        converged: fine.report.converged,
        coarse_metrics,
        fine_metrics,
        coarse: coarse.report,
        fine: fine.report,
        correspondences: coarse.correspondences.len(),
        rectification: fine.rectification,
        params,
        seed: config.seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSet {
    pub camera: PathBuf,
    pub poses: PathBuf,
}

/// Full run configuration. Relative paths are resolved against the
/// directory of the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: PathBuf,
    pub scan: PathBuf,
    /// Thermal frames; without them the scan must already carry
    /// intensities for the statistics.
    pub frames: Option<FrameSet>,
    pub output_dir: PathBuf,
    pub sampling_rate: f64,
    pub occlusion: OcclusionParams,
    pub registration: RegistrationConfig,
    pub transfer: TransferParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: PathBuf::from("model.json"),
            scan: PathBuf::from("scan.ply"),
            frames: None,
            output_dir: PathBuf::from("out"),
            sampling_rate: 0.1,
            occlusion: OcclusionParams::default(),
            registration: RegistrationConfig::default(),
            transfer: TransferParams::for_sampling_rate(0.1),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: PipelineConfig = io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(cfg.resolved(base))
    }

    /// Joins relative paths onto `base`.
    pub fn resolved(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.model);
        fix(&mut self.scan);
        fix(&mut self.output_dir);
        if let Some(f) = &mut self.frames {
            fix(&mut f.camera);
            fix(&mut f.poses);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate > 0.0 && self.sampling_rate.is_finite()) {
            return Err(PipelineError::Config(format!(
                "sampling_rate must be positive, got {}",
                self.sampling_rate
            )));
        }
        if !(self.transfer.max_distance > 0.0) {
            return Err(PipelineError::Config("transfer max_distance must be positive".into()));
        }
        self.registration.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outputs {
    pub model_cloud: PathBuf,
    pub colorized: PathBuf,
    pub enriched: PathBuf,
    pub statistics: PathBuf,
    pub report: PathBuf,
    pub transform: PathBuf,
    pub manifest: PathBuf,
}

impl Outputs {
    fn in_dir(dir: &Path) -> Self {
        Self {
            model_cloud: dir.join("model_cloud.ply"),
            colorized: dir.join("colorized.ply"),
            enriched: dir.join("enriched.ply"),
            statistics: dir.join("statistics.csv"),
            report: dir.join("registration.json"),
            transform: dir.join("transform.json"),
            manifest: dir.join("manifest.json"),
        }
    }
}

/// Numbers that depend only on inputs and parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub model_points: usize,
    pub scan_points: usize,
    pub colorized_points: usize,
    pub transform: RigidTransform,
    pub coarse_transform: RigidTransform,
    pub coarse: RegistrationMetrics,
    pub fine: RegistrationMetrics,
    pub coarse_iterations: usize,
    pub fine_iterations: usize,
    pub converged: bool,
    pub correspondences: usize,
    pub rectification_skipped: bool,
    pub statistics: ClassStatistics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Resolved configuration; enough to repeat the run.
    pub config: PipelineConfig,
    pub outputs: Outputs,
    pub metrics: RunMetrics,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

struct Timer {
    start: Instant,
    timings: BTreeMap<String, f64>,
}

impl Timer {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            timings: BTreeMap::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.insert(stage.to_string(), (now - self.start).as_secs_f64());
        self.start = now;
    }
}

/// Runs every stage and writes all artifacts plus the manifest.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest> {
    config.validate()?;
    let outputs = Outputs::in_dir(&config.output_dir);
    let mut timer = Timer::new();

    let model = io::read_model(&config.model).stage("sample")?;
    let model_cloud = sample_model(
        &model,
        &SamplingParams {
            rate: config.sampling_rate,
        },
    )
    .stage("sample")?;
    io::write_ply(&outputs.model_cloud, &model_cloud).stage("sample")?;
    timer.lap("sample");

    let scan = io::read_ply(&config.scan).stage("input")?;
    let colorized = match &config.frames {
        Some(set) => {
            let camera = io::read_camera(&set.camera).stage("projection")?;
            let frames = io::read_frames(&set.poses).stage("projection")?;
            colorize_cloud(&scan, &camera, &frames, &config.occlusion).stage("projection")?
        }
        None => scan,
    };
    io::write_ply(&outputs.colorized, &colorized).stage("projection")?;
    timer.lap("projection");

    let summary = register(&colorized, &model_cloud, &config.registration)?;
    timer.lap("registration");

    let source = LabelSource::new(&model_cloud).stage("enrichment")?;
    let enriched = source
        .transfer(&colorized, &summary.transform, &config.transfer)
        .stage("enrichment")?;
    let statistics = class_statistics(&enriched).stage("enrichment")?;
    timer.lap("enrichment");

    io::write_ply(&outputs.enriched, &enriched).stage("output")?;
    io::write_stats_csv(&outputs.statistics, &statistics).stage("output")?;
    io::write_json(&outputs.report, &summary).stage("output")?;
    io::write_json(&outputs.transform, &summary.transform).stage("output")?;
    timer.lap("output");

    let metrics = RunMetrics {
        model_points: model_cloud.len(),
        scan_points: colorized.len(),
        colorized_points: colorized.intensity().iter().filter(|v| v.is_some()).count(),
        transform: summary.transform,
        coarse_transform: summary.coarse.transform,
        coarse: summary.coarse_metrics.clone(),
        fine: summary.fine_metrics.clone(),
        coarse_iterations: summary.coarse.iterations,
        fine_iterations: summary.fine.iterations,
        converged: summary.converged,
        correspondences: summary.correspondences,
        rectification_skipped: summary.rectification.skipped,
        statistics,
    };
    let manifest = Manifest {
        tool: "lodtherm".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        outputs: outputs.clone(),
        metrics,
        timings: timer.timings,
    };
    io::write_json(&outputs.manifest, &manifest).stage("output")?;
    Ok(manifest)
}

/// Label counts of a cloud in [`SemanticClass::ALL`] order.
pub fn label_counts(cloud: &PointCloud) -> Vec<(SemanticClass, usize)> {
    SemanticClass::ALL
        .iter()
        .map(|&c| (c, cloud.labels().iter().filter(|&&l| l == c).count()))
        .collect()
}
