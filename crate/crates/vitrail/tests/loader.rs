use std::fs;
use std::path::Path;

use proptest::prelude::*;
use vitrail::io::LoadError;
use vitrail::scene_file::{build_scene, load_scene, parse_scene};
use vitrail::scenes::{self, NaveParams};
use vitrail_core::render_local::render_image;
use vitrail_core::spectral::wavelength_nm;

const MINIMAL: &str = r#"{
  "camera": {"type": "orthographic", "center": [0, 0, 1], "view": [0, 0, -1], "plane": [2, 2], "resolution": [4, 4]},
  "lights": [{"type": "point", "position": [0, 0, 2], "intensity": 1.0}],
  "materials": {"white": {"type": "diffuse", "reflectance": 0.8}},
  "objects": [{"name": "tri", "material": "white", "vertices": [[-1, -1, 0], [1, -1, 0], [0, 1, 0]], "faces": [[0, 1, 2]]}]
}"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn minimal_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let scene = load_scene(&write(dir.path(), "s.json", MINIMAL)).unwrap();
    assert_eq!(scene.objects.len(), 1);
    assert_eq!(scene.lights.len(), 1);
    assert_eq!(scene.geometry.triangles.len(), 1);
    assert_eq!((scene.camera.width, scene.camera.height), (4, 4));
}

#[test]
fn undeclared_material_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace(r#""material": "white""#, r#""material": "glass_blue""#);
    match load_scene(&write(dir.path(), "s.json", &text)) {
        Err(LoadError::Dangling(id)) => assert_eq!(id, "glass_blue"),
        other => panic!("{other:?}"),
    }
    let text = MINIMAL.replace(r#""reflectance": 0.8"#, r#""reflectance": "stone""#);
    let err = load_scene(&write(dir.path(), "s.json", &text)).unwrap_err();
    assert!(err.to_string().contains("stone"), "{err}");
}

#[test]
fn negative_light_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace(r#""intensity": 1.0"#, r#""intensity": [[380, 1.0], [500, -0.5], [780, 1.0]]"#);
    let err = load_scene(&write(dir.path(), "s.json", &text)).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("lights[0]"), "{msg}");
}

#[test]
fn unknown_keys_and_syntax_errors_report_position() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace(r#""name": "tri","#, r#""name": "tri", "colour": 3,"#);
    match load_scene(&write(dir.path(), "s.json", &text)) {
        Err(LoadError::Parse { line, message, .. }) => {
            assert_eq!(line, 5);
            assert!(message.contains("colour"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    let text = MINIMAL.replace(r#""view": [0, 0, -1],"#, r#""view": [0, 0, -1]"#);
    match load_scene(&write(dir.path(), "s.json", &text)) {
        Err(LoadError::Parse { line: 2, column, .. }) => assert!(column > 0),
        other => panic!("{other:?}"),
    }
}

#[test]
fn settings_out_of_range_are_rejected() {
    let text = MINIMAL.replace(r#""objects""#, r#""render": {"spectral_group_size": 0}, "objects""#);
    let file = parse_scene(&text, Path::new("s.json")).unwrap();
    let err = build_scene(&file, Path::new(".")).unwrap_err();
    assert!(err.to_string().contains("spectral_group_size"), "{err}");
}

#[test]
fn spectra_files_and_obj_meshes_resolve_relative_to_the_scene() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("assets")).unwrap();
    write(dir.path(), "assets/red.spd", "# wavelength value\n380 0.1\n600 0.1\n620 0.9\n780 0.9\n");
    write(dir.path(), "assets/quad.obj", "v -1 -1 0\nv 1 -1 0\nv 1 1 0\nv -1 1 0\nf 1 2 3 4\n");
    let text = r#"{
      "camera": {"type": "orthographic", "center": [0, 0, 1], "view": [0, 0, -1], "plane": [1, 1], "resolution": [2, 2]},
      "lights": [{"type": "directional", "direction": [0, 0, -2], "irradiance": 1.0}],
      "spectra": {"red": "assets/red.spd"},
      "materials": {"paint": {"type": "diffuse", "reflectance": "red"}},
      "objects": [{"name": "quad", "material": "paint", "mesh": "assets/quad.obj"}]
    }"#;
    let scene = load_scene(&write(dir.path(), "s.json", text)).unwrap();
    assert_eq!(scene.geometry.triangles.len(), 2);
    let rho = scene.materials[0].diffuse_reflectance;
    assert_eq!(rho[0], 0.1);
    assert_eq!(rho[80], 0.9);
    // directional light straight down onto a flat patch: (rho/pi) * E
    let img = render_image(&scene);
    for j in [0, 40, 80] {
        let want = rho[j] / std::f64::consts::PI;
        assert!((img.get(0, 0)[j] - want).abs() < 1e-12, "band {j} ({} nm)", wavelength_nm(j));
    }
    let missing = text.replace("assets/red.spd", "assets/blue.spd");
    match load_scene(&write(dir.path(), "s.json", &missing)) {
        Err(LoadError::Io { path, .. }) => assert!(path.ends_with("assets/blue.spd")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn written_scene_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let proc = scenes::nave(NaveParams { bays: 2, divisions: 2, resolution: 24 });
    let path = proc.write(dir.path(), "nave").unwrap();
    assert!(dir.path().join("maps/mosaic_index.png").exists());
    let from_disk = load_scene(&path).unwrap();
    let in_memory = proc.build().unwrap();
    assert_eq!(from_disk.geometry.triangles, in_memory.geometry.triangles);
    assert_eq!(from_disk.materials, in_memory.materials);
    assert_eq!(render_image(&from_disk).pixels, render_image(&in_memory).pixels);
}

#[test]
fn bundled_scenes_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes");
    for rel in ["nave/nave.json", "cornell/cornell.json"] {
        let scene = load_scene(&root.join(rel)).unwrap();
        assert!(scene.geometry.triangles.len() > 100, "{rel}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Every prefix of a valid file either loads or fails with a diagnostic.
    #[test]
    fn truncated_files_never_panic(cut in 0usize..MINIMAL.len()) {
        let file = parse_scene(&MINIMAL[..cut], Path::new("s.json"));
        prop_assert!(file.is_err());
    }

    #[test]
    fn perturbed_values_load_or_diagnose(intensity in -2.0f64..2.0, group in 0usize..100, res in 0u32..3) {
        let text = MINIMAL
            .replace(r#""intensity": 1.0"#, &format!(r#""intensity": {intensity}"#))
            .replace(r#""resolution": [4, 4]"#, &format!(r#""resolution": [{res}, 4]"#))
            .replace(r#""objects""#, &format!(r#""render": {{"spectral_group_size": {group}}}, "objects""#));
        let file = parse_scene(&text, Path::new("s.json")).unwrap();
        let valid = intensity >= 0.0 && (1..=81).contains(&group) && res > 0;
        prop_assert_eq!(build_scene(&file, Path::new(".")).is_ok(), valid);
    }
}
