//! Shared-memory parallel rendering: image tiles, spectral groups and photon
//! index ranges handed out from a single claim cursor.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use vitrail_core::render_global::{
    render_global_tile, shoot_range, Channels, EmissionPlan, PhotonMaps, PhotonOptions,
};
use vitrail_core::render_local::{render_local_bands, Diagnostics, Framebuffer, Tile};
use vitrail_core::scene::Scene;
use vitrail_core::spectral::split_groups;
use vitrail_core::{Bands, Result};

pub const DEFAULT_TILE_SIZE: u32 = 32;
/// Photons per photon job.
pub const PHOTON_BATCH: u64 = 4096;

/// Jobs claimed in order through one atomic cursor.
pub struct JobQueue<J> {
    jobs: Vec<J>,
    cursor: AtomicUsize,
    completed: AtomicUsize,
}

impl<J> JobQueue<J> {
    pub fn new(jobs: Vec<J>) -> Self {
        JobQueue { jobs, cursor: AtomicUsize::new(0), completed: AtomicUsize::new(0) }
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn claim(&self) -> Option<(usize, &J)> {
        let id = self.cursor.fetch_add(1, Ordering::Relaxed);
        self.jobs.get(id).map(|j| (id, j))
    }

    pub fn complete(&self) {
        self.completed.fetch_add(1, Ordering::Release);
    }

    pub fn completed(&self) -> usize {
        self.completed.load(Ordering::Acquire)
    }
}

/// One claimed job, in nanoseconds since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobRecord {
    pub job_id: usize,
    pub worker_id: usize,
    pub claim_ns: u64,
    pub finish_ns: u64,
}

#[derive(Debug, Clone, Default)]
pub struct JobReport {
    pub records: Vec<JobRecord>,
    pub diagnostics: Diagnostics,
}

impl JobReport {
    /// Jobs completed by each worker.
    pub fn per_worker(&self, workers: usize) -> Vec<usize> {
        let mut counts = vec![0; workers];
        for r in &self.records {
            counts[r.worker_id] += 1;
        }
        counts
    }

    /// Columns `job_id, worker_id, claim_ns, finish_ns`.
    pub fn write_csv(&self, path: &Path) -> csv::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["job_id", "worker_id", "claim_ns", "finish_ns"])?;
        for r in &self.records {
            w.write_record(&[r.job_id.to_string(), r.worker_id.to_string(), r.claim_ns.to_string(), r.finish_ns.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `work` over every job on `workers` threads; results come back in job order.
pub fn run_jobs<J: Sync, R: Send>(
    jobs: Vec<J>,
    workers: usize,
    work: impl Fn(&J, &mut Diagnostics) -> Result<R> + Sync,
) -> Result<(Vec<R>, JobReport)> {
    assert!(workers >= 1, "at least one worker");
    let queue = JobQueue::new(jobs);
    let start = Instant::now();
    let ns = || start.elapsed().as_nanos() as u64;
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..queue.len()).map(|_| None).collect());
    let outcome = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|worker_id| {
                let (queue, results, work) = (&queue, &results, &work);
                s.spawn(move || -> Result<(Vec<JobRecord>, Diagnostics)> {
                    let mut records = Vec::new();
                    let mut diag = Diagnostics::default();
                    while let Some((job_id, job)) = queue.claim() {
                        let claim_ns = ns();
                        let r = work(job, &mut diag)?;
                        results.lock().unwrap()[job_id] = Some(r);
                        queue.complete();
                        records.push(JobRecord { job_id, worker_id, claim_ns, finish_ns: ns() });
                    }
                    Ok((records, diag))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect::<Vec<_>>()
    });
    let mut report = JobReport::default();
    for r in outcome {
        let (records, diag) = r?;
        report.records.extend(records);
        report.diagnostics.merge(&diag);
    }
    report.records.sort_by_key(|r| r.job_id);
    let results = results.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect();
    Ok((results, report))
}

/// Tile-parallel local-illumination render.
pub fn run_tiled(scene: &Scene, tile_size: u32, workers: usize) -> Result<(Framebuffer, JobReport)> {
    let cam = &scene.camera;
    let tiles = Tile::grid(cam.width, cam.height, tile_size.max(1));
    let (fragments, report) = run_jobs(tiles, workers, |&tile, diag| render_local_bands(scene, tile, Bands::ALL, diag))?;
    let mut fb = Framebuffer::new(cam.width, cam.height);
    for f in &fragments {
        fb.write_fragment(f);
    }
    Ok((fb, report))
}

/// One full-image job per spectral group, merged band-wise.
pub fn run_spectral_groups(scene: &Scene, group_size: usize, workers: usize) -> Result<(Framebuffer, JobReport)> {
    let cam = &scene.camera;
    let groups = split_groups(group_size)?;
    let full = Tile::full(cam);
    let (fragments, report) = run_jobs(groups.clone(), workers, |g, diag| render_local_bands(scene, full, g.bands, diag))?;
    let mut fb = Framebuffer::new(cam.width, cam.height);
    for (g, f) in groups.iter().zip(&fragments) {
        let mut part = Framebuffer::new(cam.width, cam.height);
        part.write_fragment(f);
        fb.merge_bands(&part, g.bands);
    }
    fb.written.iter_mut().for_each(|w| *w = true);
    Ok((fb, report))
}

/// Photon shooting over dynamically claimed index ranges.
pub fn run_photon_jobs(scene: &Scene, emit_count: u64, workers: usize, seed: u64) -> Result<(PhotonMaps, JobReport)> {
    let plan = EmissionPlan::new(scene, emit_count)?;
    let options = PhotonOptions { seed, ..PhotonOptions::from_scene(scene) };
    let ranges: Vec<_> = (0..emit_count).step_by(PHOTON_BATCH as usize).map(|s| s..(s + PHOTON_BATCH).min(emit_count)).collect();
    let (batches, report) = run_jobs(ranges, workers, |r, _| Ok(shoot_range(scene, &plan, r.clone(), options)))?;
    Ok((PhotonMaps::from_photons(batches.into_iter().flatten().collect(), emit_count), report))
}

/// Tile-parallel photon-mapped render with prepared maps.
pub fn run_global_tiled(scene: &Scene, maps: &PhotonMaps, tile_size: u32, workers: usize) -> Result<(Channels, JobReport)> {
    let cam = &scene.camera;
    let tiles = Tile::grid(cam.width, cam.height, tile_size.max(1));
    let (samples, report) =
        run_jobs(tiles.clone(), workers, |&tile, diag| render_global_tile(scene, maps, tile, Bands::ALL, diag))?;
    let mut ch = Channels::new(cam.width, cam.height);
    for (tile, s) in tiles.into_iter().zip(&samples) {
        ch.write(tile, s);
    }
    Ok((ch, report))
}
