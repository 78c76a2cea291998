//! Render driver and the speedup sweep.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use vitrail_core::render_global::{Channels, PhotonMaps};
use vitrail_core::render_local::Framebuffer;
use vitrail_core::scene::Scene;

use crate::ddm_runtime::{run_ddm, write_event_log, DdmConfig, DdmOutput};
use crate::io::{write_pfm, write_png, write_spectral_raw};
use crate::scheduler::{run_global_tiled, run_photon_jobs, run_spectral_groups, run_tiled, JobReport, DEFAULT_TILE_SIZE};

/// Relative per-band tolerance between decomposed and serial renders.
pub const DDM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Algorithm {
    Scanline,
    Photonmap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub algorithm: Algorithm,
    pub threads: usize,
    pub tile_size: u32,
    pub group_size: usize,
    pub subdomains: u32,
    /// Defaults to `subdomains`.
    pub memory_budget: Option<usize>,
    pub watermark_low: f64,
    pub watermark_high: f64,
    pub audit: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        let d = DdmConfig::default();
        RenderOptions {
            algorithm: Algorithm::Scanline,
            threads: 1,
            tile_size: DEFAULT_TILE_SIZE,
            group_size: 81,
            subdomains: 1,
            memory_budget: None,
            watermark_low: d.watermark_low,
            watermark_high: d.watermark_high,
            audit: false,
        }
    }
}

impl RenderOptions {
    pub fn uses_ddm(&self) -> bool {
        self.subdomains > 1 || self.memory_budget.is_some()
    }

    pub fn ddm_config(&self) -> DdmConfig {
        DdmConfig {
            subdomains: self.subdomains,
            workers: self.threads,
            memory_budget: self.memory_budget.unwrap_or(self.subdomains as usize),
            watermark_low: self.watermark_low,
            watermark_high: self.watermark_high,
            audit: self.audit,
            ..DdmConfig::default()
        }
    }
}

#[derive(Debug)]
pub struct RenderOutcome {
    pub image: Framebuffer,
    pub channels: Option<Channels>,
    pub jobs: Option<JobReport>,
    pub ddm: Option<DdmOutput>,
    pub photons: Option<PhotonMaps>,
    pub photon_time: Duration,
    pub render_time: Duration,
    pub mode: &'static str,
}

/// Photon maps for `scene` with its own seed and photon count.
pub fn photon_maps(scene: &Scene, threads: usize) -> anyhow::Result<PhotonMaps> {
    let s = &scene.settings;
    Ok(run_photon_jobs(scene, s.photon_count, threads, s.seed)?.0)
}

/// Renders with the mode implied by `opts`.
pub fn render(scene: &Scene, opts: &RenderOptions) -> anyhow::Result<RenderOutcome> {
    if opts.threads == 0 {
        bail!("--threads must be at least 1");
    }
    let t0 = Instant::now();
    let maps = match opts.algorithm {
        Algorithm::Photonmap => Some(photon_maps(scene, opts.threads)?),
        Algorithm::Scanline => None,
    };
    let photon_time = t0.elapsed();
    let t1 = Instant::now();
    let mut out = RenderOutcome {
        image: Framebuffer::new(0, 0),
        channels: None,
        jobs: None,
        ddm: None,
        photons: None,
        photon_time,
        render_time: Duration::ZERO,
        mode: "",
    };
    if opts.uses_ddm() {
        let ddm = run_ddm(scene, &opts.ddm_config(), maps.as_ref())?;
        out.image = ddm.image.clone();
        out.ddm = Some(ddm);
        out.mode = "ddm";
    } else if let Some(maps) = &maps {
        if opts.group_size != 81 {
            bail!("spectral groups are only supported with the scanline algorithm");
        }
        let (ch, jobs) = run_global_tiled(scene, maps, opts.tile_size, opts.threads)?;
        out.image = ch.total.clone();
        out.channels = Some(ch);
        out.jobs = Some(jobs);
        out.mode = "tiled";
    } else if opts.group_size != 81 {
        let (fb, jobs) = run_spectral_groups(scene, opts.group_size, opts.threads)?;
        out.image = fb;
        out.jobs = Some(jobs);
        out.mode = "spectral-groups";
    } else {
        let (fb, jobs) = run_tiled(scene, opts.tile_size, opts.threads)?;
        out.image = fb;
        out.jobs = Some(jobs);
        out.mode = "tiled";
    }
    out.render_time = t1.elapsed();
    out.photons = maps;
    Ok(out)
}

/// Writes `path` as PFM and a PNG next to it.
pub fn write_outputs(fb: &Framebuffer, path: &Path) -> anyhow::Result<()> {
    write_pfm(fb, path).with_context(|| format!("writing {}", path.display()))?;
    let png = path.with_extension("png");
    write_png(fb, &png).with_context(|| format!("writing {}", png.display()))?;
    Ok(())
}

pub fn write_channels(ch: &Channels, path: &Path) -> anyhow::Result<()> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    for (name, fb) in [("direct", &ch.direct), ("specular", &ch.specular), ("caustic", &ch.caustic), ("indirect", &ch.indirect)] {
        write_outputs(fb, &path.with_file_name(format!("{stem}_{name}.pfm")))?;
    }
    Ok(())
}

pub fn write_raw(fb: &Framebuffer, path: &Path) -> anyhow::Result<()> {
    write_spectral_raw(fb, path).with_context(|| format!("writing {}", path.display()))
}

pub fn write_events(ddm: &DdmOutput, path: &Path) -> anyhow::Result<()> {
    write_event_log(&ddm.events, path).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub threads: Vec<usize>,
    pub subdomains: Vec<u32>,
    pub repetitions: usize,
    pub algorithm: Algorithm,
    pub warmup: bool,
    /// Memory budget per cell; `None` keeps every sub-domain resident.
    pub memory_budget: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            threads: vec![1, 2, 4, 8],
            subdomains: vec![1, 2, 4, 8],
            repetitions: 5,
            algorithm: Algorithm::Scanline,
            warmup: true,
            memory_budget: None,
        }
    }
}

/// One timed run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepRun {
    pub subdomains: u32,
    pub threads: usize,
    pub run_index: usize,
    pub wall_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub runs: Vec<SweepRun>,
    /// Median of the single-thread, single-sub-domain runs.
    pub baseline_ns: u64,
    /// `[subdomain row][thread column]` median wall times.
    pub median_ns: Vec<Vec<u64>>,
    pub speedup: Vec<Vec<f64>>,
    pub deviation: Vec<Vec<f64>>,
}

impl SweepResult {
    pub fn valid(&self, s: usize, t: usize) -> bool {
        self.deviation[s][t] <= DDM_TOLERANCE
    }

    pub fn all_valid(&self) -> bool {
        (0..self.median_ns.len()).all(|s| (0..self.median_ns[s].len()).all(|t| self.valid(s, t)))
    }
}

/// Middle sample; repetitions are odd by default so this is an actual run.
pub fn median(xs: &[u64]) -> u64 {
    let mut v = xs.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

fn timed(scene: &Scene, config: &DdmConfig, maps: Option<&PhotonMaps>) -> anyhow::Result<(u64, Framebuffer)> {
    let t = Instant::now();
    let out = run_ddm(scene, config, maps)?;
    Ok((t.elapsed().as_nanos().max(1) as u64, out.image))
}

/// Times every (sub-domains, threads) cell against the serial baseline and
/// checks each cell's image against it.
pub fn run_sweep(scene: &Scene, cfg: &SweepConfig, mut progress: impl FnMut(&str)) -> anyhow::Result<SweepResult> {
    if cfg.threads.is_empty() || cfg.subdomains.is_empty() || cfg.repetitions == 0 {
        bail!("sweep needs at least one thread count, one sub-domain count and one repetition");
    }
    if cfg.threads.contains(&0) || cfg.subdomains.contains(&0) {
        bail!("thread and sub-domain counts must be at least 1");
    }
    let maps = match cfg.algorithm {
        Algorithm::Photonmap => Some(photon_maps(scene, 1)?),
        Algorithm::Scanline => None,
    };
    let base_cfg = DdmConfig::default();
    let (_, reference) = timed(scene, &base_cfg, maps.as_ref())?;
    if cfg.warmup {
        timed(scene, &base_cfg, maps.as_ref())?;
    }
    let mut runs = Vec::new();
    let mut baseline = Vec::new();
    for r in 0..cfg.repetitions {
        let (ns, _) = timed(scene, &base_cfg, maps.as_ref())?;
        baseline.push(ns);
        runs.push(SweepRun { subdomains: 1, threads: 1, run_index: r, wall_ns: ns });
    }
    let baseline_ns = median(&baseline);
    progress(&format!("baseline {:.3} ms", baseline_ns as f64 / 1e6));

    let mut median_ns = Vec::new();
    let mut speedup = Vec::new();
    let mut deviation = Vec::new();
    for &s in &cfg.subdomains {
        let (mut mrow, mut srow, mut drow) = (Vec::new(), Vec::new(), Vec::new());
        for &t in &cfg.threads {
            let config = DdmConfig {
                subdomains: s,
                workers: t,
                memory_budget: cfg.memory_budget.unwrap_or(s as usize).min(s as usize),
                ..DdmConfig::default()
            };
            let (mut times, mut dev) = (Vec::new(), 0f64);
            if (s, t) == (1, 1) {
                times = baseline.clone();
            } else {
                for r in 0..cfg.repetitions {
                    let (ns, img) = timed(scene, &config, maps.as_ref())?;
                    dev = dev.max(img.max_relative_deviation(&reference));
                    times.push(ns);
                    runs.push(SweepRun { subdomains: s, threads: t, run_index: r, wall_ns: ns });
                }
            }
            let m = median(&times);
            progress(&format!("{s} sub-domains x {t} threads: {:.3} ms, deviation {dev:.2e}", m as f64 / 1e6));
            mrow.push(m);
            srow.push(baseline_ns as f64 / m as f64);
            drow.push(dev);
        }
        median_ns.push(mrow);
        speedup.push(srow);
        deviation.push(drow);
    }
    Ok(SweepResult { config: cfg.clone(), runs, baseline_ns, median_ns, speedup, deviation })
}

/// Columns `s, t, run_index, wall_ns`.
pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["s", "t", "run_index", "wall_ns"])?;
    for r in &result.runs {
        w.write_record(&[r.subdomains.to_string(), r.threads.to_string(), r.run_index.to_string(), r.wall_ns.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Speedup table with sub-domains as rows and threads as columns.
pub fn sweep_markdown(result: &SweepResult) -> String {
    let cfg = &result.config;
    let mut s = String::from("| Sub-domains \\ Threads |");
    for t in &cfg.threads {
        s += &format!(" {t} |");
    }
    s += "\n|---|";
    s += &"---:|".repeat(cfg.threads.len());
    s += "\n";
    for (i, sd) in cfg.subdomains.iter().enumerate() {
        s += &format!("| {sd} |");
        for j in 0..cfg.threads.len() {
            if result.valid(i, j) {
                s += &format!(" {:.2} |", result.speedup[i][j]);
            } else {
                s += " INVALID |";
            }
        }
        s += "\n";
    }
    s += &format!("\nBaseline (1 sub-domain, 1 thread): {:.3} ms, median of {}.\n", result.baseline_ns as f64 / 1e6, cfg.repetitions);
    s
}

/// Reads back `sweep.csv` and recomputes the speedup matrix.
pub fn speedup_from_csv(path: &Path, subdomains: &[u32], threads: &[usize]) -> anyhow::Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut cells: std::collections::BTreeMap<(u32, usize), Vec<u64>> = Default::default();
    for rec in rdr.records() {
        let rec = rec?;
        let s: u32 = rec[0].parse()?;
        let t: usize = rec[1].parse()?;
        cells.entry((s, t)).or_default().push(rec[3].parse()?);
    }
    let base = median(cells.get(&(1, 1)).context("no baseline rows")?);
    subdomains
        .iter()
        .map(|&s| {
            threads
                .iter()
                .map(|&t| Ok(base as f64 / median(cells.get(&(s, t)).context("missing cell")?) as f64))
                .collect()
        })
        .collect()
}

pub fn write_sweep(result: &SweepResult, dir: &Path) -> anyhow::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join("sweep.csv");
    let md = dir.join("sweep.md");
    write_sweep_csv(result, &csv)?;
    std::fs::write(&md, sweep_markdown(result))?;
    Ok((csv, md))
}
