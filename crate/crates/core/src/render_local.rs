//! Local illumination: inverse ray tracing from the camera with direct
//! lighting from point and directional sources and deterministic specular
//! reflection and refraction.
//!
//! The per-hit logic lives in [`Tracer`] so the serial renderer, the photon
//! mapper and the domain-decomposed tracer share one implementation.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{Hit, Ray};
use crate::math::{self, Vec3, INV_PI};
use crate::optics::{fresnel_reflectance, reflect_unchecked, refract_unchecked, Refraction, REPRESENTATIVE_BAND};
use crate::scene::{camera_frame, half_fov_tan, light_sample, Camera, Projection, Scene};
use crate::spectral::{wavelength_nm, Bands, SpectralDistribution};

/// Counters for numerical anomalies clamped to zero during tracing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub anomalies: u64,
    pub rays: u64,
}

impl Diagnostics {
    pub fn merge(&mut self, o: &Diagnostics) {
        self.anomalies += o.anomalies;
        self.rays += o.rays;
    }
}

/// Pixel rectangle `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Tile {
    pub fn full(camera: &Camera) -> Self {
        Tile { x: 0, y: 0, width: camera.width, height: camera.height }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (self.y..self.y + self.height).flat_map(move |y| (self.x..self.x + self.width).map(move |x| (x, y)))
    }

    /// Row-major tiles of at most `size × size` covering the image.
    pub fn grid(width: u32, height: u32, size: u32) -> Vec<Tile> {
        let size = size.max(1);
        let mut tiles = Vec::new();
        let mut y = 0;
        while y < height {
            let mut x = 0;
            while x < width {
                tiles.push(Tile { x, y, width: size.min(width - x), height: size.min(height - y) });
                x += size;
            }
            y += size;
        }
        tiles
    }
}

/// Pixels of one tile, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    pub tile: Tile,
    pub pixels: Vec<SpectralDistribution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Framebuffer {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<SpectralDistribution>,
    pub written: Vec<bool>,
}

impl Framebuffer {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Framebuffer { width, height, pixels: alloc::vec![SpectralDistribution::zero(); n], written: alloc::vec![false; n] }
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> &SpectralDistribution {
        &self.pixels[self.index(x, y)]
    }

    pub fn write_fragment(&mut self, f: &Fragment) {
        for ((x, y), v) in f.tile.pixels().zip(&f.pixels) {
            let i = self.index(x, y);
            self.pixels[i] = *v;
            self.written[i] = true;
        }
    }

    /// Copies `bands` of `other` into this buffer.
    pub fn merge_bands(&mut self, other: &Framebuffer, bands: Bands) {
        for (dst, src) in self.pixels.iter_mut().zip(&other.pixels) {
            for j in bands.range() {
                dst[j] = src[j];
            }
        }
        for (w, o) in self.written.iter_mut().zip(&other.written) {
            *w |= *o;
        }
    }

    pub fn is_complete(&self) -> bool {
        self.written.iter().all(|&w| w)
    }

    /// Largest per-band relative deviation `|a − b| / max(|a|, |b|)` (0 when both are 0).
    pub fn max_relative_deviation(&self, other: &Framebuffer) -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in self.pixels.iter().zip(&other.pixels) {
            for j in 0..a.0.len() {
                let (x, y) = (a[j], b[j]);
                let scale = x.abs().max(y.abs());
                if scale > 0.0 {
                    worst = worst.max((x - y).abs() / scale);
                } else if x != y {
                    worst = f64::INFINITY;
                }
            }
        }
        worst
    }
}

/// Camera ray through the centre of pixel `(x, y)`; row 0 is the top row.
pub fn generate_primary_ray(camera: &Camera, pixel: (u32, u32)) -> Result<Ray> {
    let (x, y) = pixel;
    if x >= camera.width || y >= camera.height {
        return Err(Error::InvalidArgument(alloc::format!(
            "pixel ({x}, {y}) outside {}x{} image",
            camera.width, camera.height
        )));
    }
    let (w, h) = (camera.width as f64, camera.height as f64);
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut ray = match camera.projection {
        Projection::Orthographic { center, view, up, plane_width, plane_height } => {
            let (r, u, f) = camera_frame(view, up);
            let sx = px * (plane_width / w) - 0.5 * plane_width;
            let sy = 0.5 * plane_height - py * (plane_height / h);
            Ray::new(center + r * sx + u * sy, f)
        }
        Projection::Pinhole { position, look_at, up, fov } => {
            let (r, u, f) = camera_frame(look_at - position, up);
            let t = half_fov_tan(fov);
            let nx = (2.0 * px / w - 1.0) * t * camera.aspect();
            let ny = (1.0 - 2.0 * py / h) * t;
            Ray::new(position, (f + r * nx + u * ny).normalized())
        }
    };
    ray.pixel_id = y * camera.width + x;
    Ok(ray)
}

/// A deferred direct-lighting term: recorded if nothing blocks `from → to`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowQuery {
    pub light: usize,
    pub from: Vec3,
    pub to: Vec3,
    /// Throughput-weighted contribution to add when the segment is clear.
    pub contribution: SpectralDistribution,
}

/// What a hit produces: shadow queries in light order, then the reflected
/// and refracted children.
#[derive(Debug, Default)]
pub struct Interaction {
    pub shadows: Vec<ShadowQuery>,
    pub reflected: Option<Ray>,
    pub refracted: Option<Ray>,
    /// Diffuse surface at a camera-path vertex: resolved material index.
    pub diffuse_material: Option<usize>,
}

impl Interaction {
    pub fn clear(&mut self) {
        self.shadows.clear();
        self.reflected = None;
        self.refracted = None;
        self.diffuse_material = None;
    }
}

/// Per-hit shading shared by every renderer, restricted to one band range.
#[derive(Debug, Clone, Copy)]
pub struct Tracer<'a> {
    pub scene: &'a Scene,
    pub bands: Bands,
    pub epsilon: f64,
}

fn sanitize(v: &mut SpectralDistribution, bands: Bands, diag: &mut Diagnostics) {
    for j in bands.range() {
        if !v[j].is_finite() {
            v[j] = 0.0;
            diag.anomalies += 1;
        }
    }
}

impl<'a> Tracer<'a> {
    pub fn new(scene: &'a Scene, bands: Bands) -> Self {
        Tracer { scene, bands, epsilon: scene.ray_epsilon() }
    }

    /// Beer-Lambert attenuation of a ray crossing `length` metres of its medium.
    pub fn attenuate(&self, ray: &mut Ray, length: f64) {
        if let Some(m) = ray.medium {
            let k = &self.scene.materials[m as usize].ior.k;
            for j in self.bands.range() {
                if k[j] != 0.0 {
                    let lambda_m = wavelength_nm(j) * 1e-9;
                    ray.throughput[j] *= math::exp(-4.0 * math::PI * k[j] * length / lambda_m);
                }
            }
        }
    }

    /// Zeroes bands below the threshold. Returns false when nothing is left.
    pub fn mask(&self, throughput: &mut SpectralDistribution) -> bool {
        let threshold = self.scene.settings.throughput_threshold;
        let mut alive = false;
        for j in self.bands.range() {
            if !(throughput[j] >= threshold) {
                throughput[j] = 0.0;
            } else if throughput[j] > 0.0 {
                alive = true;
            }
        }
        alive
    }

    /// Whether a secondary ray still carries energy in some band.
    pub fn survives(&self, ray: &mut Ray) -> bool {
        ray.bounce_count == 0 || self.mask(&mut ray.throughput)
    }

    /// `(ρ/π)·factor·cos` for one light, or `None` when the light is behind
    /// the surface. The direction and far end of the shadow segment are
    /// returned alongside.
    pub fn direct_term(
        &self,
        hit: &Hit,
        rho: &SpectralDistribution,
        light: usize,
    ) -> Result<Option<(SpectralDistribution, Vec3)>> {
        let sample = light_sample(&self.scene.lights[light], hit.point, light)?;
        let cos = hit.normal.dot(sample.direction);
        if !(cos > 0.0) {
            return Ok(None);
        }
        let mut term = SpectralDistribution::zero();
        for j in self.bands.range() {
            term[j] = rho[j] * INV_PI * sample.factor[j] * cos;
        }
        Ok(Some((term, self.scene.shadow_target(hit.point, &sample))))
    }

    /// Computes everything a hit spawns. `ray.throughput` must already
    /// include attenuation up to the hit.
    pub fn interact(&self, ray: &Ray, hit: &Hit, out: &mut Interaction, diag: &mut Diagnostics) {
        out.clear();
        let scene = self.scene;
        let surface = scene.surface_material(hit.material_index, hit.uv);
        let mat = &scene.materials[surface.index];

        if mat.behavior.diffuse {
            out.diffuse_material = Some(surface.index);
            for light in 0..scene.lights.len() {
                match self.direct_term(hit, &mat.diffuse_reflectance, light) {
                    Ok(Some((term, to))) => {
                        let mut contribution = SpectralDistribution::zero();
                        for j in self.bands.range() {
                            contribution[j] = ray.throughput[j] * term[j];
                        }
                        sanitize(&mut contribution, self.bands, diag);
                        out.shadows.push(ShadowQuery { light, from: hit.point, to, contribution });
                    }
                    Ok(None) => {}
                    Err(_) => diag.anomalies += 1,
                }
            }
        }

        if !mat.behavior.is_specular() || ray.bounce_count >= scene.settings.max_bounces {
            return;
        }
        let cos_i = -ray.direction.dot(hit.normal);
        if !(cos_i > 0.0) {
            return;
        }
        let cos_i = cos_i.min(1.0);
        let inside = ray.medium.is_some() && !mat.thin;
        let outer = |j: usize| -> f64 {
            match ray.medium {
                Some(m) if inside => scene.materials[m as usize].ior.n[j],
                _ => 1.0,
            }
        };
        let n_i_t = |j: usize| -> (f64, f64) { if inside { (outer(j), 1.0) } else { (1.0, mat.ior.n[j]) } };

        let mut reflect_w = SpectralDistribution::zero();
        let mut refract_w = SpectralDistribution::zero();
        let mut refracted_dir = None;
        let mut tir = false;

        if mat.thin {
            for j in self.bands.range() {
                let (a, b) = n_i_t(j);
                reflect_w[j] = fresnel_reflectance(cos_i, a, b);
            }
            if mat.behavior.specular_transmit {
                let sin2_i = 1.0 - cos_i * cos_i;
                for j in self.bands.range() {
                    let (a, b) = n_i_t(j);
                    let t = 1.0 - reflect_w[j];
                    let sin2_t = (a / b) * (a / b) * sin2_i;
                    if t <= 0.0 || sin2_t >= 1.0 {
                        continue;
                    }
                    let cos_t = math::sqrt(1.0 - sin2_t);
                    let path = surface.thickness / cos_t;
                    let lambda_m = wavelength_nm(j) * 1e-9;
                    let absorb = math::exp(-4.0 * math::PI * mat.ior.k[j] * path / lambda_m);
                    refract_w[j] = t * absorb * t;
                }
                refracted_dir = Some(ray.direction);
            }
        } else {
            let (a, b) = n_i_t(REPRESENTATIVE_BAND);
            match refract_unchecked(ray.direction, hit.normal, cos_i, a / b) {
                Refraction::TotalInternalReflection => {
                    tir = true;
                    reflect_w = SpectralDistribution::constant(1.0);
                }
                Refraction::Refracted(t) => {
                    for j in self.bands.range() {
                        let (a, b) = n_i_t(j);
                        let r = fresnel_reflectance(cos_i, a, b);
                        reflect_w[j] = r;
                        refract_w[j] = 1.0 - r;
                    }
                    if mat.behavior.specular_transmit {
                        refracted_dir = Some(t);
                    }
                }
            }
        }
        if let Some(m) = &mat.mirror_reflectance {
            if !tir {
                reflect_w = *m;
            }
        }

        if mat.behavior.specular_reflect || tir {
            let dir = reflect_unchecked(ray.direction, hit.normal).normalized();
            out.reflected = self.child(ray, hit, dir, &reflect_w, ray.medium, ray.inside, diag);
        }
        if let Some(dir) = refracted_dir {
            let (medium, flag) = if mat.thin {
                (ray.medium, ray.inside)
            } else if inside {
                (None, false)
            } else {
                (Some(surface.index as u32), true)
            };
            out.refracted = self.child(ray, hit, dir, &refract_w, medium, flag, diag);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn child(
        &self,
        parent: &Ray,
        hit: &Hit,
        dir: Vec3,
        weight: &SpectralDistribution,
        medium: Option<u32>,
        inside: bool,
        diag: &mut Diagnostics,
    ) -> Option<Ray> {
        let mut throughput = SpectralDistribution::zero();
        for j in self.bands.range() {
            throughput[j] = parent.throughput[j] * weight[j];
        }
        sanitize(&mut throughput, self.bands, diag);
        if !self.mask(&mut throughput) {
            return None;
        }
        Some(Ray {
            origin: hit.point + dir * self.epsilon,
            direction: dir,
            throughput,
            bounce_count: parent.bounce_count + 1,
            pixel_id: parent.pixel_id,
            group_id: parent.group_id,
            t_min: 0.0,
            t_max: f64::INFINITY,
            inside,
            medium,
        })
    }
}

/// Sum over the lights of `(ρ/π)·factor·cos`, skipping occluded lights.
pub fn shade_direct(hit: &Hit, view_dir: Vec3, scene: &Scene) -> SpectralDistribution {
    let _ = view_dir;
    let tracer = Tracer::new(scene, Bands::ALL);
    let surface = scene.surface_material(hit.material_index, hit.uv);
    let mat = &scene.materials[surface.index];
    let mut acc = SpectralDistribution::zero();
    if !mat.behavior.diffuse {
        return acc;
    }
    for light in 0..scene.lights.len() {
        if let Ok(Some((term, to))) = tracer.direct_term(hit, &mat.diffuse_reflectance, light) {
            if !scene.geometry.occluded(hit.point, to, tracer.epsilon) {
                acc += term;
            }
        }
    }
    acc
}

/// Receives contributions as they are resolved during a trace.
pub trait Sink {
    fn add(&mut self, bounce: u16, value: &SpectralDistribution, bands: Bands);
    /// Called once per diffuse camera-path hit.
    fn diffuse_hit(&mut self, _ray: &Ray, _hit: &Hit, _material: usize) {}
}

impl Sink for SpectralDistribution {
    fn add(&mut self, _bounce: u16, value: &SpectralDistribution, bands: Bands) {
        self.add_assign_in(value, bands);
    }
}

/// Depth-first trace of one camera ray and all its specular descendants.
/// Reflected subtrees are resolved before refracted ones.
pub fn trace_into(tracer: &Tracer, ray: Ray, sink: &mut impl Sink, diag: &mut Diagnostics) {
    let scene = tracer.scene;
    let mut stack = alloc::vec![ray];
    let mut inter = Interaction::default();
    while let Some(mut ray) = stack.pop() {
        diag.rays += 1;
        let Some(hit) = scene.geometry.intersect(&ray) else { continue };
        tracer.attenuate(&mut ray, hit.t);
        if !tracer.survives(&mut ray) {
            continue;
        }
        tracer.interact(&ray, &hit, &mut inter, diag);
        for q in &inter.shadows {
            if !scene.geometry.occluded(q.from, q.to, tracer.epsilon) {
                sink.add(ray.bounce_count, &q.contribution, tracer.bands);
            }
        }
        if let Some(m) = inter.diffuse_material {
            sink.diffuse_hit(&ray, &hit, m);
        }
        if let Some(r) = inter.refracted.take() {
            stack.push(r);
        }
        if let Some(r) = inter.reflected.take() {
            stack.push(r);
        }
    }
}

/// Radiance carried back along `ray`.
pub fn trace(ray: Ray, scene: &Scene) -> SpectralDistribution {
    let mut diag = Diagnostics::default();
    trace_with(ray, scene, Bands::ALL, &mut diag)
}

pub fn trace_with(ray: Ray, scene: &Scene, bands: Bands, diag: &mut Diagnostics) -> SpectralDistribution {
    let tracer = Tracer::new(scene, bands);
    let mut acc = SpectralDistribution::zero();
    trace_into(&tracer, ray, &mut acc, diag);
    acc
}

/// Renders `tile` restricted to `bands`; other bands stay zero.
pub fn render_local_bands(scene: &Scene, tile: Tile, bands: Bands, diag: &mut Diagnostics) -> Result<Fragment> {
    check_tile(&scene.camera, &tile)?;
    let tracer = Tracer::new(scene, bands);
    let mut pixels = Vec::with_capacity(tile.pixel_count());
    for p in tile.pixels() {
        let ray = generate_primary_ray(&scene.camera, p)?;
        let mut acc = SpectralDistribution::zero();
        trace_into(&tracer, ray, &mut acc, diag);
        pixels.push(acc);
    }
    Ok(Fragment { tile, pixels })
}

pub fn render_local(scene: &Scene, tile: Tile) -> Result<Fragment> {
    render_local_bands(scene, tile, Bands::ALL, &mut Diagnostics::default())
}

/// Serial full-image render.
pub fn render_image(scene: &Scene) -> Framebuffer {
    let mut fb = Framebuffer::new(scene.camera.width, scene.camera.height);
    let frag = render_local(scene, Tile::full(&scene.camera)).expect("full tile is in range");
    fb.write_fragment(&frag);
    fb
}

pub(crate) fn check_tile(camera: &Camera, tile: &Tile) -> Result<()> {
    if tile.x as u64 + tile.width as u64 > camera.width as u64 || tile.y as u64 + tile.height as u64 > camera.height as u64 {
        return Err(Error::InvalidArgument(alloc::format!("tile {tile:?} exceeds the image")));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::TriangleMesh;
    use crate::optics::{ComplexIOR, Material};
    use crate::scene::{Light, RenderSettings};
    use alloc::vec;

    pub(crate) fn flat(v: f64) -> SpectralDistribution {
        SpectralDistribution::constant(v)
    }

    pub(crate) fn quad(name: &str, c: [Vec3; 4], material: usize) -> TriangleMesh {
        TriangleMesh::new(name, c.to_vec(), vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)], vec![[0, 1, 2], [0, 2, 3]], vec![[0, 1, 2], [0, 2, 3]], material)
            .unwrap()
            .0
    }

    pub(crate) fn ortho(center: Vec3, size: f64, res: u32) -> Camera {
        Camera {
            projection: Projection::Orthographic {
                center,
                view: Vec3::new(0.0, 0.0, -1.0),
                up: Vec3::new(0.0, 1.0, 0.0),
                plane_width: size,
                plane_height: size,
            },
            width: res,
            height: res,
        }
    }

    /// Floor quad z = 0 over [-1, 1]², lit from straight above.
    fn floor_scene(lights: Vec<Light>, settings: RenderSettings) -> Scene {
        let floor = quad(
            "floor",
            [Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(-1.0, 1.0, 0.0)],
            0,
        );
        Scene::new(vec![floor], vec![Material::diffuse("white", flat(0.5))], lights, ortho(Vec3::new(0.0, 0.0, 2.0), 1.0, 4), settings).unwrap()
    }

    #[test]
    fn orthographic_rays_are_parallel_and_pitched() {
        let cam = ortho(Vec3::new(0.0, 0.0, 2.0), 1.0, 4);
        let a = generate_primary_ray(&cam, (0, 0)).unwrap();
        let b = generate_primary_ray(&cam, (3, 3)).unwrap();
        assert_eq!(a.direction, b.direction);
        let c = generate_primary_ray(&cam, (1, 0)).unwrap();
        let d = generate_primary_ray(&cam, (0, 1)).unwrap();
        assert!(((c.origin - a.origin) - Vec3::new(0.25, 0.0, 0.0)).length() < 1e-15);
        assert!(((d.origin - a.origin) - Vec3::new(0.0, -0.25, 0.0)).length() < 1e-15);
        assert_eq!(a.origin, Vec3::new(-0.375, 0.375, 2.0));
        assert!(generate_primary_ray(&cam, (4, 0)).is_err());
    }

    #[test]
    fn pinhole_center_ray_looks_at_target() {
        let cam = Camera {
            projection: Projection::Pinhole {
                position: Vec3::new(1.0, 2.0, 3.0),
                look_at: Vec3::new(0.0, 0.5, -1.0),
                up: Vec3::new(0.0, 1.0, 0.0),
                fov: 0.8,
            },
            width: 5,
            height: 3,
        };
        let r = generate_primary_ray(&cam, (2, 1)).unwrap();
        let expected = (Vec3::new(0.0, 0.5, -1.0) - Vec3::new(1.0, 2.0, 3.0)).normalized();
        assert!((r.direction - expected).length() < 1e-15);
    }

    fn primary_hit(scene: &Scene) -> Hit {
        scene.geometry.intersect(&Ray::new(Vec3::new(0.1, 0.2, 1.0), Vec3::new(0.0, 0.0, -1.0))).unwrap()
    }

    #[test]
    fn shade_direct_examples() {
        let none = floor_scene(vec![], RenderSettings::default());
        assert_eq!(shade_direct(&primary_hit(&none), Vec3::new(0.0, 0.0, 1.0), &none), SpectralDistribution::zero());

        let grazing = floor_scene(vec![Light::Directional { direction: Vec3::new(1.0, 0.0, 0.0), irradiance: flat(1.0) }], RenderSettings::default());
        assert_eq!(shade_direct(&primary_hit(&grazing), Vec3::new(0.0, 0.0, 1.0), &grazing), SpectralDistribution::zero());

        let normal = floor_scene(vec![Light::Directional { direction: Vec3::new(0.0, 0.0, -1.0), irradiance: flat(1.0) }], RenderSettings::default());
        let l = shade_direct(&primary_hit(&normal), Vec3::new(0.0, 0.0, 1.0), &normal);
        for j in 0..81 {
            assert!((l[j] - 0.5 / core::f64::consts::PI).abs() < 1e-16);
        }
    }

    #[test]
    fn no_bounce_and_infinite_threshold_match_direct() {
        let lights = vec![Light::Point { position: Vec3::new(0.3, 0.0, 1.0), intensity: flat(2.0) }];
        let s0 = floor_scene(lights.clone(), RenderSettings { max_bounces: 0, ..Default::default() });
        let ray = Ray::new(Vec3::new(0.1, 0.2, 1.0), Vec3::new(0.0, 0.0, -1.0));
        let direct = shade_direct(&primary_hit(&s0), -ray.direction, &s0);
        assert_eq!(trace(ray.clone(), &s0), direct);
        let sinf = floor_scene(lights, RenderSettings { throughput_threshold: f64::INFINITY, ..Default::default() });
        assert_eq!(trace(ray, &sinf), direct);
    }

    #[test]
    fn mirror_reflects_wall() {
        // Mirror at z = 0 seen from above; wall at x = 2 facing -x, lit along +x.
        let mirror = quad(
            "mirror",
            [Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(-1.0, 1.0, 0.0)],
            0,
        );
        let wall = quad(
            "wall",
            [Vec3::new(2.0, -5.0, -5.0), Vec3::new(2.0, 5.0, -5.0), Vec3::new(2.0, 5.0, 5.0), Vec3::new(2.0, -5.0, 5.0)],
            1,
        );
        let r_mirror = SpectralDistribution::from_fn(|j| 0.5 + j as f64 / 200.0);
        let scene = Scene::new(
            vec![mirror, wall],
            vec![Material::mirror("mirror", r_mirror), Material::diffuse("wall", flat(0.8))],
            vec![Light::Directional { direction: Vec3::new(1.0, 0.0, 0.0), irradiance: flat(1.0) }],
            ortho(Vec3::new(0.0, 0.0, 2.0), 1.0, 4),
            RenderSettings::default(),
        )
        .unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let ray = Ray::new(Vec3::new(-0.5, 0.0, 0.5), Vec3::new(s, 0.0, -s));
        let got = trace(ray, &scene);
        // wall hit point and its direct term, independently
        let wall_point = Vec3::new(2.0, 0.0, 2.0);
        for j in 0..81 {
            let wall_l = 0.8 / core::f64::consts::PI * 1.0 * 1.0;
            let expected = r_mirror[j] * wall_l;
            assert!((got[j] - expected).abs() <= 1e-12 * expected, "{j}: {} vs {}", got[j], expected);
        }
        let _ = wall_point;
    }

    #[test]
    fn tiles_match_full_frame() {
        let scene = floor_scene(
            vec![Light::Point { position: Vec3::new(0.3, 0.0, 1.0), intensity: flat(2.0) }],
            RenderSettings::default(),
        );
        let full = render_image(&scene);
        let mut tiled = Framebuffer::new(4, 4);
        for t in Tile::grid(4, 4, 1) {
            tiled.write_fragment(&render_local(&scene, t).unwrap());
        }
        assert_eq!(full, tiled);
        assert!(tiled.is_complete());
    }

    #[test]
    fn glass_slab_group_invariance() {
        let floor = quad(
            "floor",
            [Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(-1.0, 1.0, 0.0)],
            0,
        );
        let pane = quad(
            "pane",
            [Vec3::new(-0.6, -0.6, 0.5), Vec3::new(0.6, -0.6, 0.5), Vec3::new(0.6, 0.6, 0.7), Vec3::new(-0.6, 0.6, 0.7)],
            1,
        );
        let mut glass = Material::glass(
            "glass",
            ComplexIOR::new(SpectralDistribution::from_fn(|j| 1.55 - 0.001 * j as f64), SpectralDistribution::from_fn(|j| 1e-7 * j as f64)).unwrap(),
        );
        glass.thin = true;
        glass.thickness = 0.004;
        let scene = Scene::new(
            vec![floor, pane],
            vec![Material::diffuse("floor", SpectralDistribution::from_fn(|j| j as f64 / 100.0)), glass],
            vec![
                Light::Directional { direction: Vec3::new(0.2, 0.1, -1.0).normalized(), irradiance: flat(1.0) },
                Light::Point { position: Vec3::new(0.0, 0.0, 1.5), intensity: flat(0.5) },
            ],
            ortho(Vec3::new(0.0, 0.0, 2.0), 2.0, 12),
            RenderSettings::default(),
        )
        .unwrap();
        let full = render_image(&scene);
        let mut merged = Framebuffer::new(12, 12);
        for g in crate::spectral::split_groups(4).unwrap() {
            let frag = render_local_bands(&scene, Tile::full(&scene.camera), g.bands, &mut Diagnostics::default()).unwrap();
            let mut fb = Framebuffer::new(12, 12);
            fb.write_fragment(&frag);
            merged.merge_bands(&fb, g.bands);
        }
        assert_eq!(full.pixels, merged.pixels);
        assert!(full.pixels.iter().any(|p| p.max_value() > 0.0));
    }

    #[test]
    fn empty_scene_is_black() {
        let scene = Scene::new(vec![], vec![], vec![], ortho(Vec3::ZERO, 1.0, 3), RenderSettings::default()).unwrap();
        let fb = render_image(&scene);
        assert!(fb.pixels.iter().all(|p| *p == SpectralDistribution::zero()));
    }
}
