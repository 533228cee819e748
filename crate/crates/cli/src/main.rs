//! Command-line front end: simulate scenes, image recordings, localize
//! sources, and score predictions.

mod config;
mod pipeline;
mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use sphericam_core::doa::{aggregate_bands, DoaFrame};
use sphericam_core::geometry::azimuth_elevation_deg;
use sphericam_core::metrics::{evaluate, write_json_report, write_text_report};
use sphericam_core::simulator::{
    read_annotations, simulate, to_doa_frames, write_annotations, write_predictions,
    AnnotationRow,
};
use sphericam_core::wav::{read_wav, write_wav};

use config::{parse_scene, PipelineConfig};
use pipeline::{write_sim_dump, Chain, OutputGuard};
use render::Renderer;

#[derive(Parser)]
#[command(
    name = "sphericam",
    version,
    about = "Spherical acoustic imaging and sound source localization"
)]
struct Cli {
    /// Pipeline configuration file ("key = value" lines, "#" comments).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the scene seed when simulating.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads; 0 picks the machine default. Absent, the
    /// SPHERICAM_THREADS environment variable is consulted.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Render each frame as an equirectangular PGM image.
    #[arg(long, global = true)]
    render: bool,

    /// Treat the recording as a 4-channel capture and upsample its
    /// covariances to the full array before imaging.
    #[arg(long, global = true)]
    upsample: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene to multichannel audio plus ground truth.
    Simulate {
        /// Scene description file.
        #[arg(long, value_name = "PATH")]
        scene: PathBuf,
        /// Output directory; receives audio.wav and annotations.csv.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Compute per-frame spherical intensity maps from a recording.
    Image {
        /// Input WAV recording.
        input: Option<PathBuf>,
        /// Output directory; receives intensity.sim and, with --render,
        /// one PGM per frame.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Ground-truth CSV stamped onto rendered frames as dots.
        #[arg(long, value_name = "PATH")]
        annotations: Option<PathBuf>,
    },
    /// Estimate per-frame directions of arrival from a recording.
    Localize {
        /// Input WAV recording.
        input: Option<PathBuf>,
        /// Output directory; receives predictions.csv.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Score a prediction CSV against a ground-truth CSV.
    Evaluate {
        /// Prediction CSV.
        #[arg(long, value_name = "PATH")]
        pred: PathBuf,
        /// Ground-truth CSV.
        #[arg(long, value_name = "PATH")]
        gt: PathBuf,
        /// Association threshold in degrees; defaults to the config value.
        #[arg(long, value_name = "DEG")]
        threshold: Option<f64>,
        /// Output directory; receives report.txt and report.json.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    init_threads(cli.threads).context("threads")?;
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path).context("config")?,
        None => PipelineConfig::default(),
    };
    match &cli.command {
        Command::Simulate { scene, out } => cmd_simulate(&cli, &cfg, scene, out.as_deref()),
        Command::Image {
            input,
            out,
            annotations,
        } => cmd_image(&cli, &cfg, input.as_deref(), out.as_deref(), annotations.as_deref()),
        Command::Localize { input, out } => {
            cmd_localize(&cli, &cfg, input.as_deref(), out.as_deref())
        }
        Command::Evaluate {
            pred,
            gt,
            threshold,
            out,
        } => cmd_evaluate(&cfg, pred, gt, *threshold, out.as_deref()),
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("SPHERICAM_THREADS") {
            Ok(raw) => raw
                .trim()
                .parse()
                .with_context(|| format!("SPHERICAM_THREADS {raw:?}"))?,
            Err(std::env::VarError::NotPresent) => 0,
            Err(e) => return Err(e).context("SPHERICAM_THREADS"),
        },
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")?;
    }
    Ok(())
}

fn resolve_out(flag: Option<&Path>, cfg: &PipelineConfig) -> Result<PathBuf> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| anyhow!("no output directory; pass --out or set output in the config"))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn resolve_input(flag: Option<&Path>, cfg: &PipelineConfig) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.input.clone())
        .ok_or_else(|| anyhow!("no input recording; pass a path or set input in the config"))
}

fn cmd_simulate(
    cli: &Cli,
    cfg: &PipelineConfig,
    scene_path: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let out = resolve_out(out, cfg).context("simulate")?;
    let text = fs::read_to_string(scene_path)
        .with_context(|| format!("scene: reading {}", scene_path.display()))?;
    let mut scene = parse_scene(&text).context("scene")?;
    if let Some(seed) = cli.seed {
        scene.seed = seed;
    }
    let geom = cfg.geometry().context("geometry")?;
    let (channels, rows) = simulate(&scene, &geom).context("simulate")?;

    let mut guard = OutputGuard::new();
    write_wav(
        guard.track(&out.join("audio.wav")),
        scene.sample_rate as u32,
        &channels,
    )
    .context("simulate: audio.wav")?;
    write_annotations(&rows, guard.track(&out.join("annotations.csv")))
        .context("simulate: annotations.csv")?;
    guard.commit();
    println!(
        "wrote {} channels x {:.2} s and {} annotation rows to {}",
        channels.len(),
        scene.duration,
        rows.len(),
        out.display()
    );
    Ok(())
}

fn cmd_image(
    cli: &Cli,
    cfg: &PipelineConfig,
    input: Option<&Path>,
    out: Option<&Path>,
    annotations: Option<&Path>,
) -> Result<()> {
    let out = resolve_out(out, cfg).context("image")?;
    let input = resolve_input(input, cfg).context("image")?;
    let audio = read_wav(&input).context("audio")?;
    let chain = Chain::new(cfg, audio.sample_rate as f64, cfg.upsample || cli.upsample)
        .context("pipeline")?;
    let frames = chain.covariances(&audio)?;
    let maps = chain.intensity_maps(&frames)?;
    let gt_rows = match annotations {
        Some(path) => read_annotations(path).context("annotations")?,
        None => Vec::new(),
    };

    let mut guard = OutputGuard::new();
    write_sim_dump(
        guard.track(&out.join("intensity.sim")),
        &maps,
        chain.plan.band_count(),
        chain.tess.len(),
    )
    .context("image: intensity.sim")?;
    if cli.render {
        let renderer = Renderer::new(&chain.tess, cfg.render_width).context("render")?;
        for map in &maps {
            let agg = aggregate_bands(map);
            let gt: Vec<(f64, f64)> = gt_rows
                .iter()
                .filter(|r| r.frame_index == map.frame_index)
                .map(|r| (r.azimuth_deg, r.elevation_deg))
                .collect();
            let name = format!("frame_{:06}.pgm", map.frame_index);
            fs::write(guard.track(&out.join(&name)), renderer.render(&agg, &gt))
                .with_context(|| format!("render: {name}"))?;
        }
    }
    guard.commit();
    println!("wrote {} frames to {}", maps.len(), out.display());
    Ok(())
}

fn cmd_localize(
    cli: &Cli,
    cfg: &PipelineConfig,
    input: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let out = resolve_out(out, cfg).context("localize")?;
    let input = resolve_input(input, cfg).context("localize")?;
    let audio = read_wav(&input).context("audio")?;
    let chain = Chain::new(cfg, audio.sample_rate as f64, cfg.upsample || cli.upsample)
        .context("pipeline")?;
    let frames = chain.covariances(&audio)?;
    let doa = chain.localize(&frames, cfg)?;
    let rows = prediction_rows(&doa);

    let mut guard = OutputGuard::new();
    write_predictions(&rows, guard.track(&out.join("predictions.csv")))
        .context("localize: predictions.csv")?;
    guard.commit();
    println!(
        "wrote {} estimates over {} frames to {}",
        rows.len(),
        doa.len(),
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(
    cfg: &PipelineConfig,
    pred: &Path,
    gt: &Path,
    threshold: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let out = resolve_out(out, cfg).context("evaluate")?;
    let pred_rows = read_annotations(pred).context("predictions")?;
    let gt_rows = read_annotations(gt).context("ground truth")?;
    let report = evaluate(
        &to_doa_frames(&pred_rows),
        &to_doa_frames(&gt_rows),
        threshold.unwrap_or(cfg.threshold_deg),
    )
    .context("metrics")?;

    let mut guard = OutputGuard::new();
    write_text_report(&report, guard.track(&out.join("report.txt")))
        .context("evaluate: report.txt")?;
    write_json_report(&report, guard.track(&out.join("report.json")))
        .context("evaluate: report.json")?;
    guard.commit();
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2}"));
    println!(
        "recall {} %, error {} deg at {} deg threshold over {} frames",
        fmt(report.localization_recall_pct),
        fmt(report.localization_error_deg),
        report.threshold_deg,
        report.frame_count
    );
    Ok(())
}

fn prediction_rows(frames: &[DoaFrame]) -> Vec<AnnotationRow> {
    let mut rows = Vec::new();
    for frame in frames {
        for (i, est) in frame.estimates.iter().enumerate() {
            let (azimuth_deg, elevation_deg) = azimuth_elevation_deg(est.direction);
            rows.push(AnnotationRow {
                frame_index: frame.frame_index,
                source_id: i,
                azimuth_deg,
                elevation_deg,
                confidence: est.confidence,
            });
        }
    }
    rows
}
