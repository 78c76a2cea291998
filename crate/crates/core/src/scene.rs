//! Lights, cameras, render settings and the validated immutable scene.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{build_accel_with, Geometry, TriangleMesh};
use crate::math::{self, Aabb, Vec3, PI};
use crate::optics::{sample_map, Material};
use crate::spectral::SpectralDistribution;

#[derive(Debug, Clone, PartialEq)]
pub enum Light {
    /// Radiant intensity in W·sr⁻¹·nm⁻¹.
    Point { position: Vec3, intensity: SpectralDistribution },
    /// Irradiance in W·m⁻²·nm⁻¹ on a surface facing the light. `direction`
    /// is the direction light travels.
    Directional { direction: Vec3, irradiance: SpectralDistribution },
}

/// Direction towards a light, the incident factor and the distance.
#[derive(Debug, Clone, PartialEq)]
pub struct LightSample {
    pub direction: Vec3,
    pub factor: SpectralDistribution,
    pub distance: f64,
}

impl Light {
    pub fn spectrum(&self) -> &SpectralDistribution {
        match self {
            Light::Point { intensity, .. } => intensity,
            Light::Directional { irradiance, .. } => irradiance,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let s = self.spectrum();
        if !s.is_finite() || !s.is_non_negative() {
            return Err(Error::InvariantViolation {
                field: format!("lights[{index}]"),
                reason: "emission spectrum must be finite and >= 0".into(),
            });
        }
        match self {
            Light::Point { position, .. } if !position.is_finite() => Err(Error::InvariantViolation {
                field: format!("lights[{index}].position"),
                reason: "position must be finite".into(),
            }),
            Light::Directional { direction, .. } if !direction.is_unit(1e-9) => Err(Error::InvariantViolation {
                field: format!("lights[{index}].direction"),
                reason: "direction must be a unit vector".into(),
            }),
            _ => Ok(()),
        }
    }
}

/// Direction, incident factor and distance of `light` seen from `p`.
pub fn light_sample(light: &Light, p: Vec3, light_index: usize) -> Result<LightSample> {
    match light {
        Light::Point { position, intensity } => {
            let d = *position - p;
            let distance = d.length();
            if distance < 1e-9 {
                return Err(Error::DegenerateLight { light: light_index });
            }
            let inv_d2 = 1.0 / (distance * distance);
            Ok(LightSample { direction: d / distance, factor: *intensity * inv_d2, distance })
        }
        Light::Directional { direction, irradiance } => {
            Ok(LightSample { direction: -*direction, factor: *irradiance, distance: f64::INFINITY })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Rays leave the rectangle `plane_width × plane_height` centred on
    /// `center`, all along `view`.
    Orthographic { center: Vec3, view: Vec3, up: Vec3, plane_width: f64, plane_height: f64 },
    /// Vertical field of view `fov` in radians; aspect follows the resolution.
    Pinhole { position: Vec3, look_at: Vec3, up: Vec3, fov: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub projection: Projection,
    pub width: u32,
    pub height: u32,
}

/// Orthonormal camera frame: right, up, forward.
fn frame(forward: Vec3, up: Vec3) -> (Vec3, Vec3, Vec3) {
    let f = forward.normalized();
    let r = f.cross(up).normalized();
    let u = r.cross(f);
    (r, u, f)
}

impl Camera {
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::InvariantViolation { field: format!("camera.{field}"), reason: reason.into() });
        if self.width == 0 || self.height == 0 {
            return bad("resolution", "width and height must be positive");
        }
        let (forward, up) = match self.projection {
            Projection::Orthographic { center, view, up, plane_width, plane_height } => {
                if !center.is_finite() {
                    return bad("center", "must be finite");
                }
                if !(plane_width > 0.0 && plane_height > 0.0 && plane_width.is_finite() && plane_height.is_finite()) {
                    return bad("plane", "image plane size must be positive and finite");
                }
                (view, up)
            }
            Projection::Pinhole { position, look_at, up, fov } => {
                if !position.is_finite() || !look_at.is_finite() {
                    return bad("position", "must be finite");
                }
                if !(fov > 0.0 && fov < PI) {
                    return bad("fov", "field of view must lie in (0, pi)");
                }
                (look_at - position, up)
            }
        };
        if !(forward.length() > 1e-12) || !forward.is_finite() {
            return bad("view", "view direction must be non-zero");
        }
        if !(forward.normalized().cross(up).length() > 1e-9) {
            return bad("up", "up vector must not be parallel to the view direction");
        }
        Ok(())
    }
}

/// Tunables shared by every renderer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub max_bounces: u16,
    /// Child rays drop bands whose throughput falls below this value.
    pub throughput_threshold: f64,
    pub spectral_group_size: usize,
    pub photon_count: u64,
    pub knn_k: usize,
    /// Photon search radius in metres; `None` means 5% of the scene diagonal.
    pub knn_radius: Option<f64>,
    pub seed: u64,
    /// Secondary-ray offset as a fraction of the scene diagonal.
    pub ray_offset: f64,
    pub max_photon_depth: u16,
    pub bvh_leaf_size: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            max_bounces: 8,
            throughput_threshold: 1e-4,
            spectral_group_size: 81,
            photon_count: 100_000,
            knn_k: 50,
            knn_radius: None,
            seed: 0,
            ray_offset: 1e-4,
            max_photon_depth: 64,
            bvh_leaf_size: 4,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::InvariantViolation { field: format!("render.{field}"), reason: reason.into() });
        if self.max_bounces > 64 {
            return bad("max_bounces", "must be at most 64");
        }
        if !(self.throughput_threshold >= 0.0) {
            return bad("throughput_threshold", "must be >= 0");
        }
        if !(1..=81).contains(&self.spectral_group_size) {
            return bad("spectral_group_size", "must lie in [1, 81]");
        }
        if self.knn_k == 0 {
            return bad("knn_k", "must be >= 1");
        }
        if let Some(r) = self.knn_radius {
            if !(r > 0.0 && r.is_finite()) {
                return bad("knn_radius", "must be positive and finite");
            }
        }
        if !(self.ray_offset > 0.0 && self.ray_offset <= 1e-2) {
            return bad("ray_offset", "must lie in (0, 0.01]");
        }
        if self.max_photon_depth == 0 {
            return bad("max_photon_depth", "must be >= 1");
        }
        if self.bvh_leaf_size == 0 {
            return bad("bvh_leaf_size", "must be >= 1");
        }
        Ok(())
    }
}

/// Name and triangle range of one input mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInfo {
    pub name: String,
    pub material: usize,
    pub first_triangle: usize,
    pub triangle_count: usize,
}

/// Validated, immutable scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub geometry: Geometry,
    pub objects: Vec<ObjectInfo>,
    pub materials: Vec<Material>,
    pub lights: Vec<Light>,
    pub camera: Camera,
    pub settings: RenderSettings,
    bounds: Aabb,
    diagonal: f64,
}

/// Material and thickness in effect at a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceMaterial {
    pub index: usize,
    pub thickness: f64,
}

impl Scene {
    pub fn new(
        meshes: Vec<TriangleMesh>,
        materials: Vec<Material>,
        lights: Vec<Light>,
        camera: Camera,
        settings: RenderSettings,
    ) -> Result<Scene> {
        settings.validate()?;
        camera.validate()?;
        for m in &materials {
            m.validate(materials.len())?;
        }
        for (i, l) in lights.iter().enumerate() {
            l.validate(i)?;
        }
        let mut objects = Vec::with_capacity(meshes.len());
        let mut first = 0;
        for mesh in &meshes {
            if mesh.material >= materials.len() {
                return Err(Error::DanglingReference(format!("material #{} of object `{}`", mesh.material, mesh.name)));
            }
            objects.push(ObjectInfo {
                name: mesh.name.clone(),
                material: mesh.material,
                first_triangle: first,
                triangle_count: mesh.faces.len(),
            });
            first += mesh.faces.len();
        }
        let geometry = build_accel_with(&meshes, settings.bvh_leaf_size);
        let bounds = geometry.bounds();
        let diagonal = if bounds.is_empty() || bounds.diagonal() == 0.0 { 1.0 } else { bounds.diagonal() };
        Ok(Scene { geometry, objects, materials, lights, camera, settings, bounds, diagonal })
    }

    /// Bounds of all triangles (empty for an empty scene).
    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    /// Scene diagonal, 1 for empty or point-like scenes.
    pub fn diagonal(&self) -> f64 {
        self.diagonal
    }

    /// Absolute offset applied to secondary ray origins and shadow segments.
    pub fn ray_epsilon(&self) -> f64 {
        self.settings.ray_offset * self.diagonal
    }

    pub fn knn_radius(&self) -> f64 {
        self.settings.knn_radius.unwrap_or(0.05 * self.diagonal)
    }

    /// Bounding sphere of the geometry used to emit directional photons.
    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        if self.bounds.is_empty() {
            (Vec3::ZERO, 0.5)
        } else {
            (self.bounds.center(), (0.5 * self.bounds.diagonal()).max(1e-9))
        }
    }

    /// Emitted power used to split photons between lights.
    pub fn light_power(&self, light: &Light) -> f64 {
        match light {
            Light::Point { intensity, .. } => 4.0 * PI * intensity.sum(),
            Light::Directional { irradiance, .. } => {
                let r = self.bounding_sphere().1;
                irradiance.sum() * PI * r * r
            }
        }
    }

    /// Resolves distribution maps: the palette entry and thickness at `uv`.
    pub fn surface_material(&self, material: usize, uv: (f64, f64)) -> SurfaceMaterial {
        let m = &self.materials[material];
        match &m.map {
            Some(binding) => {
                let texel = sample_map(&binding.map, uv);
                SurfaceMaterial { index: binding.palette[texel.material_index as usize], thickness: texel.thickness }
            }
            None => SurfaceMaterial { index: material, thickness: m.thickness },
        }
    }

    /// Far end of a shadow segment from `p` towards a light.
    pub fn shadow_target(&self, p: Vec3, sample: &LightSample) -> Vec3 {
        if sample.distance.is_finite() {
            p + sample.direction * sample.distance
        } else {
            let reach = 2.0 * self.diagonal + self.bounds.distance(p);
            p + sample.direction * reach
        }
    }
}

/// Tangent of half the field of view, used by pinhole rays.
pub(crate) fn half_fov_tan(fov: f64) -> f64 {
    math::tan(0.5 * fov)
}

/// Camera basis exposed for ray generation.
pub(crate) fn camera_frame(forward: Vec3, up: Vec3) -> (Vec3, Vec3, Vec3) {
    frame(forward, up)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{DistributionMap, MapBinding, Texel};

    fn ortho() -> Camera {
        Camera {
            projection: Projection::Orthographic {
                center: Vec3::new(0.0, 0.0, 5.0),
                view: Vec3::new(0.0, 0.0, -1.0),
                up: Vec3::new(0.0, 1.0, 0.0),
                plane_width: 2.0,
                plane_height: 2.0,
            },
            width: 4,
            height: 4,
        }
    }

    fn flat(v: f64) -> SpectralDistribution {
        SpectralDistribution::constant(v)
    }

    #[test]
    fn directional_sample_is_translation_invariant() {
        let l = Light::Directional { direction: Vec3::new(0.0, 0.0, -1.0), irradiance: flat(2.0) };
        let a = light_sample(&l, Vec3::ZERO, 0).unwrap();
        let b = light_sample(&l, Vec3::new(5.0, -3.0, 1.0), 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.direction, Vec3::new(0.0, 0.0, 1.0));
        assert!(a.distance.is_infinite());
    }

    #[test]
    fn point_light_inverse_square() {
        let l = Light::Point { position: Vec3::ZERO, intensity: SpectralDistribution::from_fn(|j| 1.0 + j as f64) };
        let near = light_sample(&l, Vec3::new(1.0, 0.0, 0.0), 0).unwrap();
        let far = light_sample(&l, Vec3::new(2.0, 0.0, 0.0), 0).unwrap();
        for j in 0..81 {
            assert_eq!(near.factor[j] / far.factor[j], 4.0);
        }
        assert_eq!(near.direction, Vec3::new(-1.0, 0.0, 0.0));
        assert!(matches!(light_sample(&l, Vec3::ZERO, 3), Err(Error::DegenerateLight { light: 3 })));
    }

    #[test]
    fn minimal_scene_builds() {
        let (mesh, _) = TriangleMesh::new(
            "tri",
            alloc::vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            Vec::new(),
            alloc::vec![[0, 1, 2]],
            Vec::new(),
            0,
        )
        .unwrap();
        let scene = Scene::new(
            alloc::vec![mesh.clone()],
            alloc::vec![Material::diffuse("white", flat(0.5))],
            alloc::vec![Light::Point { position: Vec3::new(0.0, 0.0, 1.0), intensity: flat(1.0) }],
            ortho(),
            RenderSettings::default(),
        )
        .unwrap();
        assert_eq!(scene.objects.len(), 1);
        assert_eq!(scene.lights.len(), 1);
        assert!((scene.diagonal() - 2f64.sqrt()).abs() < 1e-15);

        let dangling = Scene::new(alloc::vec![TriangleMesh { material: 4, ..mesh }], alloc::vec![], alloc::vec![], ortho(), RenderSettings::default());
        assert!(matches!(dangling, Err(Error::DanglingReference(_))));
    }

    #[test]
    fn negative_light_is_rejected() {
        let mut s = flat(1.0);
        s[10] = -0.1;
        let r = Scene::new(
            Vec::new(),
            Vec::new(),
            alloc::vec![Light::Point { position: Vec3::ZERO, intensity: s }],
            ortho(),
            RenderSettings::default(),
        );
        assert!(matches!(r, Err(Error::InvariantViolation { .. })));
    }

    #[test]
    fn camera_validation() {
        let mut c = ortho();
        c.width = 0;
        assert!(c.validate().is_err());
        let p = Camera {
            projection: Projection::Pinhole {
                position: Vec3::ZERO,
                look_at: Vec3::new(0.0, 0.0, -1.0),
                up: Vec3::new(0.0, 1.0, 0.0),
                fov: PI,
            },
            width: 2,
            height: 2,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn map_resolves_palette() {
        let mut glass = Material::glass("tiles", crate::optics::ComplexIOR::dielectric(1.5));
        glass.map = Some(MapBinding {
            map: DistributionMap::new(
                2,
                1,
                alloc::vec![Texel { material_index: 0, thickness: 0.002 }, Texel { material_index: 1, thickness: 0.004 }],
            )
            .unwrap(),
            palette: alloc::vec![1, 2],
        });
        let blue = Material::glass("blue", crate::optics::ComplexIOR::dielectric(1.52));
        let red = Material::glass("red", crate::optics::ComplexIOR::dielectric(1.53));
        let scene = Scene::new(Vec::new(), alloc::vec![glass, blue, red], Vec::new(), ortho(), RenderSettings::default()).unwrap();
        assert_eq!(scene.surface_material(0, (0.1, 0.5)), SurfaceMaterial { index: 1, thickness: 0.002 });
        assert_eq!(scene.surface_material(0, (0.9, 0.5)), SurfaceMaterial { index: 2, thickness: 0.004 });
        assert_eq!(scene.surface_material(1, (0.9, 0.5)), SurfaceMaterial { index: 1, thickness: 0.0 });
    }
}
