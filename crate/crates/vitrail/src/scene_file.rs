//! JSON scene files. See the format reference in the README.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vitrail_core::geometry::TriangleMesh;
use vitrail_core::optics::{Behavior, ComplexIOR, DistributionMap, MapBinding, Material, Texel};
use vitrail_core::scene::{Camera, Light, Projection, RenderSettings, Scene};
use vitrail_core::{SpectralDistribution, Vec3};

use crate::io::{load_gray_png, load_obj, load_spectrum, LoadError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub camera: CameraDef,
    #[serde(default)]
    pub lights: Vec<LightDef>,
    #[serde(default)]
    pub materials: BTreeMap<String, MaterialDef>,
    /// Name → tabulated spectral file.
    #[serde(default)]
    pub spectra: BTreeMap<String, String>,
    pub objects: Vec<ObjectDef>,
    #[serde(default)]
    pub render: RenderDef,
}

/// A constant, a name from `spectra`, or inline `[wavelength, value]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpectrumDef {
    Constant(f64),
    Named(String),
    Table(Vec<[f64; 2]>),
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum CameraDef {
    Orthographic {
        center: [f64; 3],
        view: [f64; 3],
        #[serde(default = "default_up")]
        up: [f64; 3],
        /// Image-plane width and height in metres.
        plane: [f64; 2],
        resolution: [u32; 2],
    },
    Pinhole {
        position: [f64; 3],
        look_at: [f64; 3],
        #[serde(default = "default_up")]
        up: [f64; 3],
        fov_deg: f64,
        resolution: [u32; 2],
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LightDef {
    Point { position: [f64; 3], intensity: SpectrumDef },
    /// `direction` is the travel direction of the light; it is normalised on load.
    Directional { direction: [f64; 3], irradiance: SpectrumDef },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum MaterialDef {
    Diffuse {
        reflectance: SpectrumDef,
    },
    Mirror {
        reflectance: SpectrumDef,
    },
    Glass {
        n: SpectrumDef,
        #[serde(default)]
        k: Option<SpectrumDef>,
        /// Optional Lambertian base under the Fresnel lobes.
        #[serde(default)]
        diffuse: Option<SpectrumDef>,
        #[serde(default)]
        thin: bool,
        #[serde(default)]
        thickness: f64,
        #[serde(default)]
        map: Option<MapDef>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDef {
    /// Greyscale PNG of palette indices.
    pub index: String,
    /// Material names selected by index value.
    pub palette: Vec<String>,
    /// Optional greyscale PNG of thicknesses, same size as `index`.
    #[serde(default)]
    pub thickness: Option<String>,
    /// Metres per grey level of the thickness map.
    #[serde(default)]
    pub thickness_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDef {
    pub name: String,
    pub material: String,
    /// OBJ file, relative to the scene file.
    #[serde(default)]
    pub mesh: Option<String>,
    /// Inline geometry when `mesh` is absent.
    #[serde(default)]
    pub vertices: Vec<[f64; 3]>,
    #[serde(default)]
    pub faces: Vec<[usize; 3]>,
    #[serde(default)]
    pub uvs: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderDef {
    pub max_bounces: u16,
    pub throughput_threshold: f64,
    pub spectral_group_size: usize,
    pub photon_count: u64,
    pub knn_k: usize,
    pub knn_radius: Option<f64>,
    pub seed: u64,
    pub ray_offset: f64,
    pub max_photon_depth: u16,
    pub bvh_leaf_size: usize,
}

impl Default for RenderDef {
    fn default() -> Self {
        RenderDef::from(RenderSettings::default())
    }
}

impl From<RenderSettings> for RenderDef {
    fn from(s: RenderSettings) -> Self {
        RenderDef {
            max_bounces: s.max_bounces,
            throughput_threshold: s.throughput_threshold,
            spectral_group_size: s.spectral_group_size,
            photon_count: s.photon_count,
            knn_k: s.knn_k,
            knn_radius: s.knn_radius,
            seed: s.seed,
            ray_offset: s.ray_offset,
            max_photon_depth: s.max_photon_depth,
            bvh_leaf_size: s.bvh_leaf_size,
        }
    }
}

impl From<&RenderDef> for RenderSettings {
    fn from(r: &RenderDef) -> Self {
        RenderSettings {
            max_bounces: r.max_bounces,
            throughput_threshold: r.throughput_threshold,
            spectral_group_size: r.spectral_group_size,
            photon_count: r.photon_count,
            knn_k: r.knn_k,
            knn_radius: r.knn_radius,
            seed: r.seed,
            ray_offset: r.ray_offset,
            max_photon_depth: r.max_photon_depth,
            bvh_leaf_size: r.bvh_leaf_size,
        }
    }
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn invariant(field: impl Into<String>, reason: impl Into<String>) -> LoadError {
    LoadError::Invariant { field: field.into(), reason: reason.into() }
}

/// Parses and validates a scene file. Asset paths are relative to it.
pub fn load_scene(path: &Path) -> Result<Scene, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|e| LoadError::io(path, e))?;
    let file = parse_scene(&text, path)?;
    build_scene(&file, path.parent().unwrap_or(Path::new(".")))
}

pub fn parse_scene(text: &str, path: &Path) -> Result<SceneFile, LoadError> {
    serde_json::from_str(text).map_err(|e| LoadError::Parse {
        path: path.into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Greyscale image held in memory: width, height, row-major levels.
pub type GrayMap = (usize, usize, Vec<u16>);

struct Resolver<'a> {
    base: &'a Path,
    spectra: BTreeMap<&'a str, SpectralDistribution>,
    images: &'a BTreeMap<String, GrayMap>,
}

impl Resolver<'_> {
    fn spectrum(&self, def: &SpectrumDef, field: &str) -> Result<SpectralDistribution, LoadError> {
        let sd = match def {
            SpectrumDef::Constant(c) => SpectralDistribution::constant(*c),
            SpectrumDef::Named(name) => *self.spectra.get(name.as_str()).ok_or_else(|| LoadError::Dangling(name.clone()))?,
            SpectrumDef::Table(rows) => {
                let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
                if pairs.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(invariant(field, "tabulated wavelengths must be strictly ascending"));
                }
                vitrail_core::spectral::resample_tabulated(&pairs)?
            }
        };
        if !sd.is_finite() {
            return Err(invariant(field, "spectrum must be finite"));
        }
        Ok(sd)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.base.join(rel)
    }

    fn image(&self, rel: &str) -> Result<GrayMap, LoadError> {
        match self.images.get(rel) {
            Some(img) => Ok(img.clone()),
            None => load_gray_png(&self.path(rel)),
        }
    }
}

pub fn build_scene(file: &SceneFile, base: &Path) -> Result<Scene, LoadError> {
    build_scene_with(file, base, &BTreeMap::new())
}

/// Like [`build_scene`], taking map images from `images` before the disk.
pub fn build_scene_with(file: &SceneFile, base: &Path, images: &BTreeMap<String, GrayMap>) -> Result<Scene, LoadError> {
    let mut resolver = Resolver { base, spectra: BTreeMap::new(), images };
    for (name, rel) in &file.spectra {
        let p = resolver.path(rel);
        let sd = load_spectrum(&p)?;
        resolver.spectra.insert(name.as_str(), sd);
    }

    let material_ids: BTreeMap<&str, usize> = file.materials.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let mut materials = Vec::with_capacity(file.materials.len());
    for (name, def) in &file.materials {
        let field = |f: &str| format!("materials.{name}.{f}");
        let m = match def {
            MaterialDef::Diffuse { reflectance } => Material::diffuse(name, resolver.spectrum(reflectance, &field("reflectance"))?),
            MaterialDef::Mirror { reflectance } => Material::mirror(name, resolver.spectrum(reflectance, &field("reflectance"))?),
            MaterialDef::Glass { n, k, diffuse, thin, thickness, map } => {
                let n = resolver.spectrum(n, &field("n"))?;
                let k = match k {
                    Some(k) => resolver.spectrum(k, &field("k"))?,
                    None => SpectralDistribution::zero(),
                };
                let mut m = Material::glass(name, ComplexIOR { n, k });
                if let Some(d) = diffuse {
                    m.diffuse_reflectance = resolver.spectrum(d, &field("diffuse"))?;
                    m.behavior = Behavior { diffuse: true, ..Behavior::GLASS };
                }
                m.thin = *thin;
                m.thickness = *thickness;
                if let Some(map) = map {
                    m.map = Some(load_map(map, &resolver, &material_ids, *thickness, &field("map"))?);
                }
                m
            }
        };
        materials.push(m);
    }

    let mut lights = Vec::with_capacity(file.lights.len());
    for (i, l) in file.lights.iter().enumerate() {
        let field = |f: &str| format!("lights[{i}].{f}");
        lights.push(match l {
            LightDef::Point { position, intensity } => {
                Light::Point { position: v3(*position), intensity: resolver.spectrum(intensity, &field("intensity"))? }
            }
            LightDef::Directional { direction, irradiance } => {
                let d = v3(*direction);
                if !(d.length() > 0.0) {
                    return Err(invariant(field("direction"), "direction must be non-zero"));
                }
                Light::Directional { direction: d.normalized(), irradiance: resolver.spectrum(irradiance, &field("irradiance"))? }
            }
        });
    }

    let camera = match &file.camera {
        CameraDef::Orthographic { center, view, up, plane, resolution } => Camera {
            projection: Projection::Orthographic {
                center: v3(*center),
                view: v3(*view).normalized(),
                up: v3(*up),
                plane_width: plane[0],
                plane_height: plane[1],
            },
            width: resolution[0],
            height: resolution[1],
        },
        CameraDef::Pinhole { position, look_at, up, fov_deg, resolution } => Camera {
            projection: Projection::Pinhole {
                position: v3(*position),
                look_at: v3(*look_at),
                up: v3(*up),
                fov: fov_deg.to_radians(),
            },
            width: resolution[0],
            height: resolution[1],
        },
    };

    let mut meshes = Vec::with_capacity(file.objects.len());
    for (i, o) in file.objects.iter().enumerate() {
        let material = *material_ids.get(o.material.as_str()).ok_or_else(|| LoadError::Dangling(o.material.clone()))?;
        let mesh = match &o.mesh {
            Some(rel) => {
                if !o.vertices.is_empty() || !o.faces.is_empty() {
                    return Err(invariant(format!("objects[{i}]"), "give either `mesh` or inline `vertices`/`faces`, not both"));
                }
                load_obj(&resolver.path(rel), &o.name, material)?
            }
            None => {
                let positions = o.vertices.iter().map(|&v| v3(v)).collect();
                let uvs: Vec<(f64, f64)> = o.uvs.iter().map(|t| (t[0], t[1])).collect();
                let face_uvs = if uvs.is_empty() { Vec::new() } else { o.faces.clone() };
                TriangleMesh::new(&o.name, positions, uvs, o.faces.clone(), face_uvs, material)?.0
            }
        };
        meshes.push(mesh);
    }

    Ok(Scene::new(meshes, materials, lights, camera, RenderSettings::from(&file.render))?)
}

fn load_map(
    def: &MapDef,
    resolver: &Resolver,
    ids: &BTreeMap<&str, usize>,
    default_thickness: f64,
    field: &str,
) -> Result<MapBinding, LoadError> {
    let (w, h, index) = resolver.image(&def.index)?;
    let thickness = match &def.thickness {
        Some(rel) => {
            let (tw, th, t) = resolver.image(rel)?;
            if (tw, th) != (w, h) {
                return Err(invariant(format!("{field}.thickness"), "thickness map size differs from the index map"));
            }
            if !(def.thickness_scale > 0.0 && def.thickness_scale.is_finite()) {
                return Err(invariant(format!("{field}.thickness_scale"), "must be positive and finite"));
            }
            t.into_iter().map(|v| v as f64 * def.thickness_scale).collect()
        }
        None => vec![default_thickness; w * h],
    };
    let texels = index.into_iter().zip(thickness).map(|(i, t)| Texel { material_index: i as u32, thickness: t }).collect();
    let palette = def
        .palette
        .iter()
        .map(|n| ids.get(n.as_str()).copied().ok_or_else(|| LoadError::Dangling(n.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MapBinding { map: DistributionMap::new(w, h, texels)?, palette })
}
