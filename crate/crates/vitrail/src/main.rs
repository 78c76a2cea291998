use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vitrail::harness::{self, Algorithm, RenderOptions, SweepConfig};
use vitrail::scene_file::load_scene;
use vitrail::scenes::{self, NaveParams};
use vitrail::vitrail_core::scene::Scene;

#[derive(Parser)]
#[command(name = "vitrail", version, about = "Spectral ray tracer with domain-decomposed parallel rendering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene to PFM and PNG.
    Render(RenderArgs),
    /// Time a grid of thread and sub-domain counts.
    Sweep(SweepArgs),
    /// Load and validate a scene file.
    SceneCheck {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Write the procedural nave benchmark scene.
    GenNave(GenNaveArgs),
    /// Write the Cornell-style validation scene.
    GenCornell {
        #[arg(long, default_value = "cornell")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 256)]
        resolution: u32,
    },
}

#[derive(Args)]
struct SceneArgs {
    /// Scene file; the built-in nave when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "scanline")]
    algorithm: Algorithm,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scene's photon count.
    #[arg(long)]
    photons: Option<u64>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 32)]
    tile_size: u32,
    #[arg(long, default_value_t = 81)]
    spectral_group_size: usize,
    #[arg(long, default_value_t = 1)]
    subdomains: u32,
    #[arg(long)]
    memory_budget: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    watermark_low: f64,
    #[arg(long, default_value_t = 0.10)]
    watermark_high: f64,
    #[arg(long, default_value = "out.pfm")]
    out: PathBuf,
    /// Also write direct, specular, caustic and indirect images.
    #[arg(long)]
    emit_channels: bool,
    /// Raw 81-band dump.
    #[arg(long)]
    spectral_out: Option<PathBuf>,
    /// Scheduler event log (CSV) for decomposed renders.
    #[arg(long)]
    event_log: Option<PathBuf>,
    /// Per-job timing log (CSV) for tiled renders.
    #[arg(long)]
    job_log: Option<PathBuf>,
    /// Binary dump of the photon maps.
    #[arg(long)]
    photon_dump: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    threads: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    subdomains: Vec<u32>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long)]
    memory_budget: Option<usize>,
    #[arg(long)]
    no_warmup: bool,
    /// Directory for sweep.csv and sweep.md.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct GenNaveArgs {
    #[arg(long, default_value = "nave")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    bays: usize,
    #[arg(long, default_value_t = 3)]
    divisions: usize,
    /// Pick the pane subdivision to reach at least this many triangles.
    #[arg(long)]
    triangles: Option<usize>,
    #[arg(long, default_value_t = 256)]
    resolution: u32,
}

enum Failure {
    Scene(String),
    Other(anyhow::Error),
}

fn scene(args: &SceneArgs) -> Result<Scene, Failure> {
    let mut scene = match &args.scene {
        Some(p) => load_scene(p).map_err(|e| Failure::Scene(e.to_string()))?,
        None => scenes::nave(NaveParams::default()).build().map_err(|e| Failure::Scene(e.to_string()))?,
    };
    if let Some(seed) = args.seed {
        scene.settings.seed = seed;
    }
    if let Some(n) = args.photons {
        scene.settings.photon_count = n;
    }
    Ok(scene)
}

fn run_render(a: RenderArgs) -> Result<(), Failure> {
    let scene = scene(&a.scene)?;
    let opts = RenderOptions {
        algorithm: a.scene.algorithm,
        threads: a.threads,
        tile_size: a.tile_size,
        group_size: a.spectral_group_size,
        subdomains: a.subdomains,
        memory_budget: a.memory_budget,
        watermark_low: a.watermark_low,
        watermark_high: a.watermark_high,
        audit: false,
    };
    let out = harness::render(&scene, &opts).map_err(Failure::Other)?;
    harness::write_outputs(&out.image, &a.out).map_err(Failure::Other)?;
    if a.emit_channels {
        match &out.channels {
            Some(ch) => harness::write_channels(ch, &a.out).map_err(Failure::Other)?,
            None => eprintln!("warning: channels are only produced by tiled photon-mapped renders"),
        }
    }
    if let Some(p) = &a.spectral_out {
        harness::write_raw(&out.image, p).map_err(Failure::Other)?;
    }
    if let (Some(p), Some(ddm)) = (&a.event_log, &out.ddm) {
        harness::write_events(ddm, p).map_err(Failure::Other)?;
    }
    if let (Some(p), Some(maps)) = (&a.photon_dump, &out.photons) {
        vitrail::io::write_photon_dump(maps, p).map_err(|e| Failure::Other(e.into()))?;
    }
    if let (Some(p), Some(jobs)) = (&a.job_log, &out.jobs) {
        jobs.write_csv(p).map_err(|e| Failure::Other(e.into()))?;
    }
    println!(
        "rendered {}x{} ({}, {} threads, {} sub-domains) in {:.1} ms, photons {:.1} ms",
        scene.camera.width,
        scene.camera.height,
        out.mode,
        a.threads,
        a.subdomains,
        out.render_time.as_secs_f64() * 1e3,
        out.photon_time.as_secs_f64() * 1e3
    );
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<(), Failure> {
    let scene = scene(&a.scene)?;
    let cfg = SweepConfig {
        threads: a.threads,
        subdomains: a.subdomains,
        repetitions: a.repetitions,
        algorithm: a.scene.algorithm,
        warmup: !a.no_warmup,
        memory_budget: a.memory_budget,
    };
    let result = harness::run_sweep(&scene, &cfg, |m| eprintln!("{m}")).map_err(Failure::Other)?;
    let (csv, md) = harness::write_sweep(&result, &a.out).map_err(Failure::Other)?;
    print!("{}", harness::sweep_markdown(&result));
    println!("wrote {} and {}", csv.display(), md.display());
    if !result.all_valid() {
        return Err(Failure::Other(anyhow::anyhow!("some cells differ from the serial reference")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Render(a) => run_render(a),
        Command::Sweep(a) => run_sweep(a),
        Command::SceneCheck { scene } => load_scene(&scene).map_err(|e| Failure::Scene(e.to_string())).map(|s| {
            println!(
                "ok: {} objects, {} triangles, {} materials, {} lights, {}x{}",
                s.objects.len(),
                s.geometry.triangles.len(),
                s.materials.len(),
                s.lights.len(),
                s.camera.width,
                s.camera.height
            );
        }),
        Command::GenNave(a) => {
            let p = match a.triangles {
                Some(n) => NaveParams::with_triangles(a.bays, n, a.resolution),
                None => NaveParams { bays: a.bays, divisions: a.divisions, resolution: a.resolution },
            };
            scenes::nave(p).write(&a.out_dir, "nave").map_err(Failure::Other).map(|path| {
                println!("wrote {} ({} triangles)", path.display(), p.triangle_count());
            })
        }
        Command::GenCornell { out_dir, resolution } => {
            scenes::cornell_file(resolution).write(&out_dir, "cornell").map_err(Failure::Other).map(|path| {
                println!("wrote {}", path.display());
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Scene(msg)) => {
            eprintln!("scene error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
