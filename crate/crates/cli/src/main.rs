use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lodtherm::enrichment::{class_statistics, transfer_labels, TransferParams};
use lodtherm::projection::{back_project_labels, colorize_cloud, Image, OcclusionParams};
use lodtherm::sampling::{sample_model, SamplingParams};
use lodtherm_pipeline::error::StageExt;
use lodtherm_pipeline::synth::{generate, write_scene, SyntheticSceneSpec};
use lodtherm_pipeline::{io, register, run_pipeline, PipelineConfig, PipelineError, RegistrationConfig, Result};

/// Thread count override for the parallel stages.
const THREADS_ENV: &str = "LODTHERM_THREADS";

#[derive(Parser)]
#[command(
    name = "lodtherm",
    version,
    about = "Thermal point clouds enriched with building-model semantics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a building model (JSON) into a labeled point cloud (PLY).
    Sample {
        model: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        rate: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Colorize a point cloud from thermal frames.
    Colorize {
        cloud: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Disable the z-buffer visibility test.
        #[arg(long)]
        no_occlusion: bool,
        #[arg(long, default_value_t = 0.1)]
        depth_tolerance: f64,
    },
    /// Render the labels of a cloud into one frame (8-bit PGM, class code
    /// plus one, 0 for background).
    Backproject {
        cloud: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Register a source cloud onto a target cloud, coarse to fine.
    Register {
        source: PathBuf,
        target: PathBuf,
        /// Registration parameters (JSON); defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report (JSON).
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the final transform (JSON).
        #[arg(long)]
        transform_out: Option<PathBuf>,
    },
    /// Transfer model labels onto a thermal cloud and compute statistics.
    Enrich {
        thermal: PathBuf,
        model: PathBuf,
        /// Thermal → model transform (JSON).
        transform: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        max_distance: f64,
        /// Write model-frame coordinates instead of the original ones.
        #[arg(long)]
        georeference: bool,
    },
    /// Generate a synthetic facade scene with ground truth.
    Synth {
        /// Scene spec (JSON); defaults when omitted.
        spec: Option<PathBuf>,
        #[arg(long)]
        out_prefix: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full workflow from a configuration file.
    Pipeline {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Sample { model, rate, output } => {
            let model = io::read_model(&model).stage("sample")?;
            let cloud = sample_model(&model, &SamplingParams { rate }).stage("sample")?;
            io::write_ply(&output, &cloud)?;
            log::info!("{} points written to {}", cloud.len(), output.display());
        }
        Command::Colorize {
            cloud,
            camera,
            poses,
            output,
            no_occlusion,
            depth_tolerance,
        } => {
            let cloud = io::read_ply(&cloud)?;
            let camera = io::read_camera(&camera).stage("projection")?;
            let frames = io::read_frames(&poses).stage("projection")?;
            let params = OcclusionParams {
                enabled: !no_occlusion,
                depth_tolerance,
                ..Default::default()
            };
            let out = colorize_cloud(&cloud, &camera, &frames, &params).stage("projection")?;
            io::write_ply(&output, &out)?;
        }
        Command::Backproject {
            cloud,
            camera,
            poses,
            frame,
            output,
        } => {
            let cloud = io::read_ply(&cloud)?;
            let camera = io::read_camera(&camera).stage("projection")?;
            let frames = io::read_frames(&poses).stage("projection")?;
            let pose = frames.get(frame).ok_or_else(|| {
                PipelineError::Config(format!("frame {frame} out of range ({} frames)", frames.len()))
            })?;
            let labels = back_project_labels(&cloud, &camera, &pose.transform).stage("projection")?;
            let data = labels
                .pixels
                .iter()
                .map(|p| p.map_or(0.0, |c| (c.code() + 1) as f64 / 255.0))
                .collect();
            let image = Image::new(labels.width, labels.height, data)?;
            io::write_pgm(&output, &image, false)?;
        }
        Command::Register {
            source,
            target,
            params,
            seed,
            output,
            transform_out,
        } => {
            let mut config: RegistrationConfig = match params {
                Some(p) => io::read_json(&p)?,
                None => RegistrationConfig::default(),
            };
            if let Some(s) = seed {
                config.seed = s;
            }
            let source = io::read_ply(&source)?;
            let target = io::read_ply(&target)?;
            let summary = register(&source, &target, &config)?;
            io::write_json(&output, &summary)?;
            if let Some(t) = transform_out {
                io::write_json(&t, &summary.transform)?;
            }
        }
        Command::Enrich {
            thermal,
            model,
            transform,
            output,
            stats,
            max_distance,
            georeference,
        } => {
            let thermal = io::read_ply(&thermal)?;
            let model = io::read_ply(&model)?;
            let t = io::read_transform(&transform)?;
            let params = TransferParams {
                max_distance,
                georeference,
            };
            let enriched = transfer_labels(&thermal, &model, &t, &params).stage("enrichment")?;
            let statistics = class_statistics(&enriched).stage("enrichment")?;
            io::write_ply(&output, &enriched)?;
            io::write_stats_csv(&stats, &statistics)?;
        }
        Command::Synth { spec, out_prefix, seed } => {
            let mut spec: SyntheticSceneSpec = match spec {
                Some(p) => io::read_json(&p)?,
                None => SyntheticSceneSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let scene = generate(&spec).stage("synth")?;
            write_scene(&scene, &out_prefix)?;
        }
        Command::Pipeline { config, seed } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.registration.seed = s;
            }
            let manifest = run_pipeline(&cfg)?;
            println!("{}", manifest.outputs.manifest.display());
        }
    }
    Ok(())
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("lodtherm: {msg}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lodtherm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
