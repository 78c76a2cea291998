//! Procedural test and benchmark scenes.
//!
//! Each builder returns a [`Procedural`]: a scene file plus the map images it
//! references, so the same description can be rendered directly or written
//! to disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use vitrail_core::scene::Scene;
use vitrail_core::spectral::{wavelength_nm, BANDS};
use vitrail_core::Vec3;

use crate::io::LoadError;
use crate::scene_file::{
    build_scene_with, CameraDef, GrayMap, LightDef, MapDef, MaterialDef, ObjectDef, RenderDef, SceneFile, SpectrumDef,
};

pub struct Procedural {
    pub file: SceneFile,
    pub images: BTreeMap<String, GrayMap>,
}

impl Procedural {
    pub fn build(&self) -> Result<Scene, LoadError> {
        build_scene_with(&self.file, Path::new("."), &self.images)
    }

    /// Writes `<stem>.json` and its map images into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> anyhow::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        for (rel, (w, h, levels)) in &self.images {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(*w as u32, *h as u32, levels.clone())
                .ok_or_else(|| anyhow::anyhow!("map `{rel}` has the wrong size"))?;
            img.save(&path)?;
        }
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&self.file)?)?;
        Ok(path)
    }
}

fn curve(f: impl Fn(f64) -> f64) -> SpectrumDef {
    SpectrumDef::Table((0..BANDS).map(|j| [wavelength_nm(j), f(wavelength_nm(j))]).collect())
}

fn bump(l: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((l - center) / width).powi(2)).exp()
}

fn cauchy(l: f64) -> f64 {
    1.50 + 4200.0 / (l * l)
}

fn a3(v: Vec3) -> [f64; 3] {
    v.to_array()
}

#[derive(Default)]
struct MeshBuilder {
    vertices: Vec<[f64; 3]>,
    uvs: Vec<[f64; 2]>,
    faces: Vec<[usize; 3]>,
}

impl MeshBuilder {
    /// Rectangle `origin + s·u + t·v`, split into `nu × nv` cells; uv spans [0, 1]².
    fn grid(&mut self, origin: Vec3, u: Vec3, v: Vec3, nu: usize, nv: usize) -> &mut Self {
        let base = self.vertices.len();
        for j in 0..=nv {
            for i in 0..=nu {
                let (s, t) = (i as f64 / nu as f64, j as f64 / nv as f64);
                self.vertices.push(a3(origin + u * s + v * t));
                self.uvs.push([s, t]);
            }
        }
        let at = |i: usize, j: usize| base + j * (nu + 1) + i;
        for j in 0..nv {
            for i in 0..nu {
                self.faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
                self.faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
            }
        }
        self
    }

    fn quad(&mut self, origin: Vec3, u: Vec3, v: Vec3) -> &mut Self {
        self.grid(origin, u, v, 1, 1)
    }

    fn cuboid(&mut self, lo: Vec3, hi: Vec3) -> &mut Self {
        let d = hi - lo;
        let (x, y, z) = (Vec3::new(d.x, 0.0, 0.0), Vec3::new(0.0, d.y, 0.0), Vec3::new(0.0, 0.0, d.z));
        self.quad(lo, x, y).quad(lo + z, x, y).quad(lo, x, z).quad(lo + y, x, z).quad(lo, y, z).quad(lo + x, y, z)
    }

    fn object(&mut self, name: &str, material: &str) -> ObjectDef {
        let b = std::mem::take(self);
        ObjectDef { name: name.into(), material: material.into(), mesh: None, vertices: b.vertices, faces: b.faces, uvs: b.uvs }
    }
}

fn glass(k: SpectrumDef, thin: bool, thickness: f64, map: Option<MapDef>) -> MaterialDef {
    MaterialDef::Glass { n: curve(cauchy), k: Some(k), diffuse: None, thin, thickness, map }
}

/// Size of the benchmark nave.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NaveParams {
    /// Window bays along each side wall.
    pub bays: usize,
    /// Each window pane is split into `divisions²` quads.
    pub divisions: usize,
    /// Square image size in pixels.
    pub resolution: u32,
}

impl Default for NaveParams {
    fn default() -> Self {
        NaveParams { bays: 4, divisions: 3, resolution: 256 }
    }
}

impl NaveParams {
    /// Smallest `divisions` giving at least `triangles` triangles for `bays`.
    pub fn with_triangles(bays: usize, triangles: usize, resolution: u32) -> Self {
        let mut p = NaveParams { bays, divisions: 1, resolution };
        while p.triangle_count() < triangles {
            p.divisions += 1;
        }
        p
    }

    pub fn triangle_count(&self) -> usize {
        let b = self.bays;
        let floor = 2 * 2 * b * 2;
        let walls = 2 * b * (4 * 2 + 2 * self.divisions * self.divisions);
        let ends = 2 * 2;
        let columns = 2 * b.saturating_sub(1) * 12;
        floor + walls + ends + columns
    }
}

/// Long roofless hall with stained-glass windows in both side walls and
/// directional sun and sky light from outside.
pub fn nave(p: NaveParams) -> Procedural {
    let b = p.bays.max(1);
    let (len, width, height) = (4.0 * b as f64, 6.0, 8.0);
    let x = |v: f64| Vec3::new(v, 0.0, 0.0);
    let y = |v: f64| Vec3::new(0.0, v, 0.0);
    let z = |v: f64| Vec3::new(0.0, 0.0, v);

    let mut objects = Vec::new();
    let mut m = MeshBuilder::default();
    m.grid(Vec3::ZERO, x(len), y(width), 2 * b, 2);
    objects.push(m.object("floor", "floor"));
    m.quad(Vec3::ZERO, y(width), z(height)).quad(x(len), y(width), z(height));
    objects.push(m.object("end_walls", "stone"));
    let panes = ["ruby", "cobalt", "emerald", "mosaic"];
    for (side, wall_y) in [(0usize, 0.0), (1, width)] {
        for i in 0..b {
            let o = Vec3::new(4.0 * i as f64, wall_y, 0.0);
            m.quad(o, x(4.0), z(2.0))
                .quad(o + z(6.0), x(4.0), z(height - 6.0))
                .quad(o + z(2.0), x(1.0), z(4.0))
                .quad(o + x(3.0) + z(2.0), x(1.0), z(4.0));
            objects.push(m.object(&format!("wall_{side}_{i}"), "stone"));
            m.grid(o + x(1.0) + z(2.0), x(2.0), z(4.0), p.divisions, p.divisions);
            objects.push(m.object(&format!("window_{side}_{i}"), panes[(i + 2 * side) % panes.len()]));
        }
    }
    for i in 1..b {
        for cy in [1.0, width - 1.0] {
            let c = Vec3::new(4.0 * i as f64, cy, 0.0);
            m.cuboid(c - Vec3::new(0.2, 0.2, 0.0), c + Vec3::new(0.2, 0.2, 0.9 * height));
        }
    }
    if b > 1 {
        objects.push(m.object("columns", "stone"));
    }

    let mut materials = BTreeMap::new();
    materials.insert("floor".into(), MaterialDef::Diffuse { reflectance: curve(|l| 0.35 + 0.2 * bump(l, 600.0, 120.0)) });
    materials.insert("stone".into(), MaterialDef::Diffuse { reflectance: curve(|l| 0.5 + 0.15 * (l - 380.0) / 400.0) });
    let tint = |center: f64, w: f64| curve(move |l| 2e-5 * (1.0 - 0.95 * bump(l, center, w)));
    materials.insert("ruby".into(), glass(tint(660.0, 35.0), true, 0.004, None));
    materials.insert("cobalt".into(), glass(tint(450.0, 30.0), true, 0.004, None));
    materials.insert("emerald".into(), glass(tint(530.0, 30.0), true, 0.004, None));
    let map = MapDef {
        index: "maps/mosaic_index.png".into(),
        palette: vec!["ruby".into(), "cobalt".into(), "emerald".into()],
        thickness: Some("maps/mosaic_thickness.png".into()),
        thickness_scale: 1e-5,
    };
    materials.insert("mosaic".into(), glass(tint(560.0, 80.0), true, 0.004, Some(map)));

    let (mw, mh) = (8usize, 16usize);
    let index: Vec<u16> = (0..mw * mh).map(|i| (((i % mw) / 2 + (i / mw) / 2) % 3) as u16).collect();
    let thick: Vec<u16> = (0..mw * mh).map(|i| 250 + 30 * ((i * 7) % 11) as u16).collect();
    let mut images = BTreeMap::new();
    images.insert("maps/mosaic_index.png".to_string(), (mw, mh, index));
    images.insert("maps/mosaic_thickness.png".to_string(), (mw, mh, thick));

    let lights = vec![
        LightDef::Directional {
            direction: [0.35, 0.5, -0.8],
            irradiance: curve(|l| 1.0 + 0.3 * (l - 560.0) / 200.0),
        },
        LightDef::Directional { direction: [-0.3, -0.4, -0.87], irradiance: curve(|l| 0.25 + 0.1 * bump(l, 450.0, 60.0)) },
    ];

    let view = Vec3::new(0.25, 0.35, -0.9).normalized();
    let centre = Vec3::new(len / 2.0, width / 2.0, height / 2.0);
    let plane = (len + 4.0).max(14.0);
    let camera = CameraDef::Orthographic {
        center: a3(centre - view * (2.0 * plane)),
        view: a3(view),
        up: [0.0, 1.0, 0.0],
        plane: [plane, plane],
        resolution: [p.resolution, p.resolution],
    };

    Procedural {
        file: SceneFile { camera, lights, materials, spectra: BTreeMap::new(), objects, render: RenderDef::default() },
        images,
    }
}

/// Open-fronted box with coloured side walls, a white block, a glass cube
/// and a mirror panel, lit by a point light and a weak directional light.
pub fn cornell(resolution: u32) -> Scene {
    cornell_file(resolution).build().expect("cornell scene is valid")
}

pub fn cornell_file(resolution: u32) -> Procedural {
    let x = |v: f64| Vec3::new(v, 0.0, 0.0);
    let y = |v: f64| Vec3::new(0.0, v, 0.0);
    let z = |v: f64| Vec3::new(0.0, 0.0, v);
    let mut m = MeshBuilder::default();
    let mut objects = Vec::new();
    m.grid(Vec3::ZERO, x(1.0), z(1.0), 4, 4).grid(y(1.0), x(1.0), z(1.0), 4, 4).grid(z(1.0), x(1.0), y(1.0), 4, 4);
    objects.push(m.object("shell", "white"));
    m.grid(Vec3::ZERO, y(1.0), z(1.0), 4, 4);
    objects.push(m.object("left", "red"));
    m.grid(x(1.0), y(1.0), z(1.0), 4, 4);
    objects.push(m.object("right", "green"));
    m.cuboid(Vec3::new(0.55, 0.0, 0.5), Vec3::new(0.85, 0.6, 0.8));
    objects.push(m.object("tall_block", "white"));
    m.cuboid(Vec3::new(0.15, 0.0, 0.2), Vec3::new(0.45, 0.3, 0.5));
    objects.push(m.object("glass_cube", "glass"));
    m.quad(Vec3::new(0.1, 0.5, 0.99), x(0.3), y(0.4));
    objects.push(m.object("mirror", "mirror"));

    let mut materials = BTreeMap::new();
    materials.insert("white".into(), MaterialDef::Diffuse { reflectance: SpectrumDef::Constant(0.75) });
    materials.insert("red".into(), MaterialDef::Diffuse { reflectance: curve(|l| 0.05 + 0.6 / (1.0 + (-(l - 590.0) / 15.0).exp())) });
    materials.insert("green".into(), MaterialDef::Diffuse { reflectance: curve(|l| 0.05 + 0.55 * bump(l, 540.0, 40.0)) });
    materials.insert("glass".into(), glass(SpectrumDef::Constant(0.0), false, 0.0, None));
    materials.insert("mirror".into(), MaterialDef::Mirror { reflectance: SpectrumDef::Constant(0.9) });

    let lights = vec![
        LightDef::Point { position: [0.5, 0.9, 0.4], intensity: SpectrumDef::Constant(0.8) },
        LightDef::Directional { direction: [0.2, -0.3, 1.0], irradiance: SpectrumDef::Constant(0.2) },
    ];
    let camera = CameraDef::Orthographic {
        center: [0.5, 0.5, -1.0],
        view: [0.0, 0.0, 1.0],
        up: [0.0, 1.0, 0.0],
        plane: [1.0, 1.0],
        resolution: [resolution, resolution],
    };
    Procedural {
        file: SceneFile { camera, lights, materials, spectra: BTreeMap::new(), objects, render: RenderDef::default() },
        images: BTreeMap::new(),
    }
}

fn icosphere(subdivisions: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(a, b, c)| Vec3::new(a, b, c).normalized())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid = BTreeMap::new();
        let mut midpoint = |a: usize, b: usize, v: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a] + v[b]) * 0.5).normalized());
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    (v, f)
}

/// Closed unit icosphere with uniform Lambertian walls of albedo `rho` and an
/// isotropic point light at its centre. The camera looks at the inside.
pub fn furnace_file(rho: f64, photons: u64, knn_k: usize, resolution: u32) -> Procedural {
    let (v, f) = icosphere(3);
    let objects = vec![ObjectDef {
        name: "sphere".into(),
        material: "wall".into(),
        mesh: None,
        vertices: v.iter().map(|p| p.to_array()).collect(),
        faces: f,
        uvs: Vec::new(),
    }];
    let mut materials = BTreeMap::new();
    materials.insert("wall".into(), MaterialDef::Diffuse { reflectance: SpectrumDef::Constant(rho) });
    let lights = vec![LightDef::Point { position: [0.0, 0.0, 0.0], intensity: SpectrumDef::Constant(1.0) }];
    let camera = CameraDef::Orthographic {
        center: [0.0, 0.0, 0.0],
        view: [0.0, 0.0, 1.0],
        up: [0.0, 1.0, 0.0],
        plane: [1.0, 1.0],
        resolution: [resolution, resolution],
    };
    let render = RenderDef { photon_count: photons, knn_k, knn_radius: Some(1.0), ..RenderDef::default() };
    Procedural {
        file: SceneFile { camera, lights, materials, spectra: BTreeMap::new(), objects, render },
        images: BTreeMap::new(),
    }
}

pub fn furnace(rho: f64, photons: u64, knn_k: usize, resolution: u32) -> Scene {
    furnace_file(rho, photons, knn_k, resolution).build().expect("furnace scene is valid")
}
