use std::collections::BTreeMap;

use vitrail::scene_file::{CameraDef, LightDef, MaterialDef, ObjectDef, RenderDef, SceneFile, SpectrumDef};
use vitrail::scenes::{self, NaveParams};
use vitrail::scheduler::{run_jobs, run_photon_jobs, run_spectral_groups, run_tiled, JobReport, PHOTON_BATCH};
use vitrail_core::render_global::{shoot_photons, EmissionPlan};
use vitrail_core::render_local::render_image;
use vitrail_core::scene::Scene;

fn nave(res: u32) -> Scene {
    scenes::nave(NaveParams { resolution: res, ..Default::default() }).build().unwrap()
}

fn claimed_once(report: &JobReport, jobs: usize) {
    let ids: Vec<usize> = report.records.iter().map(|r| r.job_id).collect();
    assert_eq!(ids, (0..jobs).collect::<Vec<_>>());
}

#[test]
fn tiles_match_serial_render() {
    let scene = scenes::cornell(40);
    let serial = render_image(&scene);
    for workers in [1, 3, 8] {
        for tile in [1, 7, 32, 64] {
            let (fb, report) = run_tiled(&scene, tile, workers).unwrap();
            assert_eq!(fb.pixels, serial.pixels, "workers={workers} tile={tile}");
            assert!(fb.is_complete());
            let n = 40usize.div_ceil(tile as usize).pow(2);
            claimed_once(&report, n);
            assert_eq!(report.per_worker(workers).iter().sum::<usize>(), n);
        }
    }
}

#[test]
fn spectral_groups_match_serial_render() {
    let scene = nave(24);
    let serial = render_image(&scene);
    for (group, jobs) in [(81, 1), (3, 27), (4, 21), (1, 81)] {
        for workers in [1, 4] {
            let (fb, report) = run_spectral_groups(&scene, group, workers).unwrap();
            assert_eq!(fb.pixels, serial.pixels, "group={group} workers={workers}");
            claimed_once(&report, jobs);
        }
    }
    assert!(run_spectral_groups(&scene, 0, 1).is_err());
    assert!(run_spectral_groups(&scene, 82, 1).is_err());
}

#[test]
fn workers_never_idle_while_jobs_remain() {
    // one expensive corner: the glass cube and mirror sit in the lower left
    let scene = scenes::cornell(96);
    let workers = 2;
    let (_, report) = run_tiled(&scene, 16, workers).unwrap();
    let longest = report.records.iter().map(|r| r.finish_ns - r.claim_ns).max().unwrap();
    let last_claim = report.records.iter().map(|r| r.claim_ns).max().unwrap();
    let mut last_finish = Vec::new();
    for w in 0..workers {
        let mut mine: Vec<_> = report.records.iter().filter(|r| r.worker_id == w).collect();
        mine.sort_by_key(|r| r.claim_ns);
        for pair in mine.windows(2) {
            // the gap between two of this worker's jobs while the queue was non-empty
            if pair[1].claim_ns <= last_claim {
                let gap = pair[1].claim_ns.saturating_sub(pair[0].finish_ns);
                assert!(gap <= longest, "worker {w} idle for {gap} ns, longest job {longest} ns");
            }
        }
        last_finish.push(mine.last().map_or(0, |r| r.finish_ns));
    }
    let end = *last_finish.iter().max().unwrap();
    for (w, f) in last_finish.iter().enumerate() {
        assert!(end - f <= longest, "worker {w} stopped {} ns before the last", end - f);
    }
}

#[test]
fn run_jobs_returns_results_in_job_order() {
    let (out, report) = run_jobs((0..100u64).collect(), 4, |&j, _| Ok(j * j)).unwrap();
    assert_eq!(out, (0..100u64).map(|j| j * j).collect::<Vec<_>>());
    claimed_once(&report, 100);
    let failing = run_jobs(vec![1, 2, 3], 2, |&j, _| if j == 2 { Err(vitrail_core::Error::InvalidArgument("job 2".into())) } else { Ok(j) });
    assert!(failing.is_err());
}

#[test]
fn photon_jobs_match_single_worker_shooting() {
    let scene = scenes::cornell(8);
    let n = 3 * PHOTON_BATCH + 17;
    let reference = shoot_photons(&scene, n).unwrap();
    for workers in [1, 4] {
        let (maps, report) = run_photon_jobs(&scene, n, workers, scene.settings.seed).unwrap();
        assert_eq!(maps, reference, "workers={workers}");
        claimed_once(&report, 4);
    }
    let (other, _) = run_photon_jobs(&scene, n, 1, scene.settings.seed + 1).unwrap();
    assert_ne!(other, reference);
}

#[test]
fn emission_follows_light_power() {
    let point = |x: f64, i: f64| LightDef::Point { position: [x, 0.5, 0.5], intensity: SpectrumDef::Constant(i) };
    let mut materials = BTreeMap::new();
    materials.insert("white".to_string(), MaterialDef::Diffuse { reflectance: SpectrumDef::Constant(0.5) });
    let file = SceneFile {
        camera: CameraDef::Orthographic { center: [0.5, 0.5, 2.0], view: [0.0, 0.0, -1.0], up: [0.0, 1.0, 0.0], plane: [1.0, 1.0], resolution: [4, 4] },
        lights: vec![point(0.2, 3.0), point(0.8, 1.0)],
        materials,
        spectra: BTreeMap::new(),
        objects: vec![ObjectDef {
            name: "floor".into(),
            material: "white".into(),
            mesh: None,
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            faces: vec![[0, 1, 2], [0, 2, 3]],
            uvs: vec![],
        }],
        render: RenderDef::default(),
    };
    let scene = vitrail::scene_file::build_scene(&file, std::path::Path::new(".")).unwrap();
    for total in [4u64, 10, 1001, 100_000] {
        let plan = EmissionPlan::new(&scene, total).unwrap();
        assert_eq!(plan.counts.iter().sum::<u64>(), total);
        let exact = 0.75 * total as f64;
        assert!((plan.counts[0] as f64 - exact).abs() <= 1.0, "{total}: {:?}", plan.counts);
        let first = (0..total).filter(|&i| plan.light_of(i) == 0).count() as u64;
        assert_eq!(first, plan.counts[0]);
    }
}

#[test]
fn job_log_has_one_row_per_job() {
    let scene = scenes::cornell(16);
    let (_, report) = run_tiled(&scene, 8, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("jobs.csv");
    report.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("job_id,worker_id,claim_ns,finish_ns"));
    assert_eq!(lines.count(), 4);
}
