//! Two-map photon mapping: photons are shot from the lights into a global
//! and a caustic map, then read back with a k-nearest-neighbour density
//! estimate at the first diffuse camera hit.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::geometry::{Hit, Ray};
use crate::math::{self, Aabb, Vec3, INV_PI, PI};
use crate::optics::{fresnel_reflectance, reflect_unchecked, refract_unchecked, Refraction, REPRESENTATIVE_BAND};
use crate::render_local::{
    check_tile, generate_primary_ray, trace_into, Diagnostics, Fragment, Framebuffer, Sink, Tile, Tracer,
};
use crate::rng;
use crate::scene::{Light, Scene};
use crate::spectral::{wavelength_nm, Bands, SpectralDistribution, BANDS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    pub position: Vec3,
    /// Direction of travel when the photon arrived.
    pub incident_direction: Vec3,
    pub power: SpectralDistribution,
    pub has_specular_bounce: bool,
    /// Set once the path has scattered diffusely before this hit.
    pub has_diffuse_bounce: bool,
    /// Emission index of the path.
    pub path: u64,
    /// Surface interactions before this hit.
    pub depth: u16,
}

impl Photon {
    /// `L S+ D` paths go to the caustic map, everything else to the global map.
    pub fn is_caustic(&self) -> bool {
        self.has_specular_bounce && !self.has_diffuse_bounce
    }

    fn key(&self) -> (u64, u16) {
        (self.path, self.depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct KdNode {
    photon: u32,
    axis: u8,
    left: u32,
    right: u32,
}

const NIL: u32 = u32::MAX;

/// Balanced kd-tree over photons in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonMap {
    photons: Vec<Photon>,
    nodes: Vec<KdNode>,
    root: u32,
}

impl Default for PhotonMap {
    fn default() -> Self {
        PhotonMap { photons: Vec::new(), nodes: Vec::new(), root: NIL }
    }
}

impl PhotonMap {
    pub fn build(photons: Vec<Photon>) -> Self {
        let mut map = PhotonMap { photons, nodes: Vec::new(), root: NIL };
        let mut order: Vec<u32> = (0..map.photons.len() as u32).collect();
        map.nodes.reserve(order.len());
        map.root = map.build_node(&mut order);
        map
    }

    fn build_node(&mut self, items: &mut [u32]) -> u32 {
        if items.is_empty() {
            return NIL;
        }
        let bounds = items.iter().fold(Aabb::EMPTY, |b, &i| b.grow(self.photons[i as usize].position));
        let axis = bounds.longest_axis();
        let photons = &self.photons;
        items.sort_unstable_by(|&a, &b| {
            photons[a as usize].position.axis(axis).total_cmp(&photons[b as usize].position.axis(axis)).then(a.cmp(&b))
        });
        let mid = items.len() / 2;
        let id = self.nodes.len() as u32;
        self.nodes.push(KdNode { photon: items[mid], axis: axis as u8, left: NIL, right: NIL });
        let (lo, rest) = items.split_at_mut(mid);
        let left = self.build_node(lo);
        let right = self.build_node(&mut rest[1..]);
        self.nodes[id as usize].left = left;
        self.nodes[id as usize].right = right;
        id
    }

    pub fn len(&self) -> usize {
        self.photons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.photons.is_empty()
    }

    pub fn photons(&self) -> &[Photon] {
        &self.photons
    }

    pub fn total_power(&self) -> SpectralDistribution {
        let mut s = SpectralDistribution::zero();
        for p in &self.photons {
            s += p.power;
        }
        s
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: u32,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.index.cmp(&other.index))
    }
}

/// The `k` nearest photons within `r_max`, ordered by (distance, insertion
/// index). Returns `(photon index, distance)` pairs.
pub fn knn_query(map: &PhotonMap, point: Vec3, k: usize, r_max: f64) -> Vec<(usize, f64)> {
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    if k == 0 || map.root == NIL {
        return Vec::new();
    }
    let r2 = r_max * r_max;
    let mut stack: Vec<u32> = alloc::vec![map.root];
    while let Some(n) = stack.pop() {
        let node = map.nodes[n as usize];
        let p = map.photons[node.photon as usize].position;
        let d2 = (p - point).length_squared();
        let worst = |heap: &BinaryHeap<Candidate>| if heap.len() == k { heap.peek().map_or(r2, |c| c.d2) } else { r2 };
        if d2 <= r2 {
            let c = Candidate { d2, index: node.photon };
            if heap.len() < k {
                heap.push(c);
            } else if c < *heap.peek().expect("heap is full") {
                heap.pop();
                heap.push(c);
            }
        }
        let delta = point.axis(node.axis as usize) - p.axis(node.axis as usize);
        let (near, far) = if delta < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        if far != NIL && delta * delta <= worst(&heap) {
            stack.push(far);
        }
        if near != NIL {
            stack.push(near);
        }
    }
    let mut out: Vec<Candidate> = heap.into_vec();
    out.sort_unstable();
    out.into_iter().map(|c| (c.index as usize, math::sqrt(c.d2))).collect()
}

/// Which photons a density estimate sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhotonFilter {
    All,
    /// Only photons that scattered diffusely before (indirect light).
    AfterDiffuse,
}

/// `Σ (ρ/π)·power / (π r²)` over the k nearest photons arriving from the
/// side `normal` faces; `r` is the k-th distance, or `r_max` when fewer
/// than `k` photons are in range.
#[allow(clippy::too_many_arguments)]
pub fn radiance_estimate(
    map: &PhotonMap,
    point: Vec3,
    normal: Vec3,
    rho: &SpectralDistribution,
    k: usize,
    r_max: f64,
    filter: PhotonFilter,
    bands: Bands,
) -> SpectralDistribution {
    let mut out = SpectralDistribution::zero();
    let found = knn_query(map, point, k, r_max);
    if found.is_empty() {
        return out;
    }
    let r = if found.len() == k { found[k - 1].1 } else { r_max };
    if !(r > 0.0) {
        return out;
    }
    let mut flux = SpectralDistribution::zero();
    for &(i, _) in &found {
        let p = &map.photons[i];
        if p.incident_direction.dot(normal) >= 0.0 {
            continue;
        }
        if filter == PhotonFilter::AfterDiffuse && !p.has_diffuse_bounce {
            continue;
        }
        flux.add_assign_in(&p.power, bands);
    }
    let scale = 1.0 / (PI * r * r);
    for j in bands.range() {
        out[j] = rho[j] * INV_PI * flux[j] * scale;
    }
    out
}

/// The two maps plus the number of emitted photons.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhotonMaps {
    pub global: PhotonMap,
    pub caustic: PhotonMap,
    pub emitted: u64,
}

impl PhotonMaps {
    /// Sorts by (path, depth) so the maps do not depend on shooting order.
    pub fn from_photons(mut photons: Vec<Photon>, emitted: u64) -> Self {
        photons.sort_by_key(Photon::key);
        let (caustic, global): (Vec<Photon>, Vec<Photon>) = photons.into_iter().partition(Photon::is_caustic);
        PhotonMaps { global: PhotonMap::build(global), caustic: PhotonMap::build(caustic), emitted }
    }
}

/// Photon counts per light by largest remainder on emitted power.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionPlan {
    pub counts: Vec<u64>,
    pub total: u64,
    starts: Vec<u64>,
}

impl EmissionPlan {
    pub fn new(scene: &Scene, emit_count: u64) -> Result<Self> {
        if scene.lights.is_empty() {
            return Err(Error::InvalidScene("photon mapping needs at least one light".into()));
        }
        let powers: Vec<f64> = scene.lights.iter().map(|l| scene.light_power(l)).collect();
        let counts = largest_remainder(&powers, emit_count);
        let mut starts = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for &c in &counts {
            starts.push(acc);
            acc += c;
        }
        Ok(EmissionPlan { counts, total: emit_count, starts })
    }

    /// Light emitting photon `index`.
    pub fn light_of(&self, index: u64) -> usize {
        match self.starts.binary_search(&index) {
            Ok(mut i) => {
                while self.counts[i] == 0 {
                    i += 1;
                }
                i
            }
            Err(i) => i - 1,
        }
    }
}

/// Splits `total` proportionally to `weights`; remainders go to the largest
/// fractional parts, ties to the lower index.
pub fn largest_remainder(weights: &[f64], total: u64) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        let mut even = alloc::vec![total / weights.len() as u64; weights.len()];
        for c in even.iter_mut().take((total % weights.len() as u64) as usize) {
            *c += 1;
        }
        return even;
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| math::floor(*q) as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - math::floor(quotas[a]);
        let fb = quotas[b] - math::floor(quotas[b]);
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

/// Photon tracing knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonOptions {
    pub max_depth: u16,
    /// With roulette off every path continues (with its full weight) up to `max_depth`.
    pub roulette: bool,
    pub seed: u64,
}

impl PhotonOptions {
    pub fn from_scene(scene: &Scene) -> Self {
        PhotonOptions { max_depth: scene.settings.max_photon_depth, roulette: true, seed: scene.settings.seed }
    }
}

fn cosine_hemisphere(n: Vec3, u1: f64, u2: f64) -> Vec3 {
    let (t, s) = n.orthonormal_basis();
    let r = math::sqrt(u1);
    let phi = 2.0 * PI * u2;
    let z = math::sqrt((1.0 - u1).max(0.0));
    (t * (r * math::cos(phi)) + s * (r * math::sin(phi)) + n * z).normalized()
}

fn emit(scene: &Scene, plan: &EmissionPlan, index: u64, rng: &mut rng::Rng) -> Ray {
    let li = plan.light_of(index);
    let n = plan.counts[li] as f64;
    let mut u = || rng::uniform(rng);
    let (origin, dir, power) = match &scene.lights[li] {
        Light::Point { position, intensity } => {
            let z = 1.0 - 2.0 * u();
            let phi = 2.0 * PI * u();
            let r = math::sqrt((1.0 - z * z).max(0.0));
            (*position, Vec3::new(r * math::cos(phi), r * math::sin(phi), z), *intensity * (4.0 * PI / n))
        }
        Light::Directional { direction, irradiance } => {
            let (center, radius) = scene.bounding_sphere();
            let (t, s) = direction.orthonormal_basis();
            let rr = radius * math::sqrt(u());
            let phi = 2.0 * PI * u();
            let o = center - *direction * (2.0 * radius) + t * (rr * math::cos(phi)) + s * (rr * math::sin(phi));
            (o, *direction, *irradiance * (PI * radius * radius / n))
        }
    };
    let mut ray = Ray::new(origin, dir);
    ray.throughput = power;
    ray
}

/// Traces photons `range` of the plan and returns every stored photon.
pub fn shoot_range(scene: &Scene, plan: &EmissionPlan, range: Range<u64>, options: PhotonOptions) -> Vec<Photon> {
    let mut out = Vec::new();
    let eps = scene.ray_epsilon();
    for index in range {
        let mut rng = rng::stream(options.seed, index);
        let mut ray = emit(scene, plan, index, &mut rng);
        let mut has_specular = false;
        let mut has_diffuse = false;
        for depth in 0..options.max_depth {
            let Some(hit) = scene.geometry.intersect(&ray) else { break };
            attenuate(scene, &mut ray, hit.t);
            let surface = scene.surface_material(hit.material_index, hit.uv);
            let mat = &scene.materials[surface.index];
            if mat.behavior.diffuse {
                out.push(Photon {
                    position: hit.point,
                    incident_direction: ray.direction,
                    power: ray.throughput,
                    has_specular_bounce: has_specular,
                    has_diffuse_bounce: has_diffuse,
                    path: index,
                    depth,
                });
            }
            let Some((event, weight)) = choose_event(scene, &ray, &hit, surface.index, surface.thickness, &mut rng, options)
            else {
                break;
            };
            let dir = match event {
                Event::Diffuse => {
                    has_diffuse = true;
                    let u1 = rng::uniform(&mut rng);
                    let u2 = rng::uniform(&mut rng);
                    cosine_hemisphere(hit.normal, u1, u2)
                }
                Event::Reflect => {
                    has_specular = true;
                    reflect_unchecked(ray.direction, hit.normal).normalized()
                }
                Event::Refract(d, medium, inside) => {
                    has_specular = true;
                    ray.medium = medium;
                    ray.inside = inside;
                    d
                }
            };
            for j in 0..BANDS {
                ray.throughput[j] *= weight[j];
                if !ray.throughput[j].is_finite() {
                    ray.throughput[j] = 0.0;
                }
            }
            if ray.throughput.max_value() <= 0.0 {
                break;
            }
            ray.origin = hit.point + dir * eps;
            ray.direction = dir;
            ray.bounce_count = ray.bounce_count.saturating_add(1);
        }
    }
    out
}

fn attenuate(scene: &Scene, ray: &mut Ray, length: f64) {
    if let Some(m) = ray.medium {
        let k = &scene.materials[m as usize].ior.k;
        for j in 0..BANDS {
            if k[j] != 0.0 {
                ray.throughput[j] *= math::exp(-4.0 * PI * k[j] * length / (wavelength_nm(j) * 1e-9));
            }
        }
    }
}

enum Event {
    Diffuse,
    Reflect,
    Refract(Vec3, Option<u32>, bool),
}

/// Russian roulette over the material lobes. Returns the event and the
/// per-band power multiplier `w / P(event)`.
fn choose_event(
    scene: &Scene,
    ray: &Ray,
    hit: &Hit,
    material: usize,
    thickness: f64,
    rng: &mut rng::Rng,
    options: PhotonOptions,
) -> Option<(Event, SpectralDistribution)> {
    let mat = &scene.materials[material];
    let cos_i = (-ray.direction.dot(hit.normal)).min(1.0);
    let inside = ray.medium.is_some() && !mat.thin;
    let n_i_t = |j: usize| -> (f64, f64) {
        match ray.medium {
            Some(m) if inside => (scene.materials[m as usize].ior.n[j], 1.0),
            _ => (1.0, mat.ior.n[j]),
        }
    };

    let mut lobes: [(Option<Event>, SpectralDistribution); 3] =
        [(None, SpectralDistribution::zero()), (None, SpectralDistribution::zero()), (None, SpectralDistribution::zero())];
    if mat.behavior.diffuse {
        lobes[0] = (Some(Event::Diffuse), mat.diffuse_reflectance);
    }
    if mat.behavior.is_specular() && cos_i > 0.0 {
        let mut r = SpectralDistribution::zero();
        let mut t = SpectralDistribution::zero();
        let mut tir = false;
        let mut refracted = None;
        if mat.thin {
            let sin2_i = 1.0 - cos_i * cos_i;
            for j in 0..BANDS {
                let (a, b) = n_i_t(j);
                r[j] = fresnel_reflectance(cos_i, a, b);
                let sin2_t = (a / b) * (a / b) * sin2_i;
                if mat.behavior.specular_transmit && sin2_t < 1.0 {
                    let tt = 1.0 - r[j];
                    let path = thickness / math::sqrt(1.0 - sin2_t);
                    t[j] = tt * math::exp(-4.0 * PI * mat.ior.k[j] * path / (wavelength_nm(j) * 1e-9)) * tt;
                }
            }
            if mat.behavior.specular_transmit {
                refracted = Some(Event::Refract(ray.direction, ray.medium, ray.inside));
            }
        } else {
            let (a, b) = n_i_t(REPRESENTATIVE_BAND);
            match refract_unchecked(ray.direction, hit.normal, cos_i, a / b) {
                Refraction::TotalInternalReflection => {
                    tir = true;
                    r = SpectralDistribution::constant(1.0);
                }
                Refraction::Refracted(d) => {
                    for j in 0..BANDS {
                        let (a, b) = n_i_t(j);
                        r[j] = fresnel_reflectance(cos_i, a, b);
                        t[j] = 1.0 - r[j];
                    }
                    if mat.behavior.specular_transmit {
                        let (medium, flag) = if inside { (None, false) } else { (Some(material as u32), true) };
                        refracted = Some(Event::Refract(d, medium, flag));
                    }
                }
            }
        }
        if let (Some(m), false) = (&mat.mirror_reflectance, tir) {
            r = *m;
        }
        if mat.behavior.specular_reflect || tir {
            lobes[1] = (Some(Event::Reflect), r);
        }
        if let Some(e) = refracted {
            lobes[2] = (Some(e), t);
        }
    }

    let p: [f64; 3] = core::array::from_fn(|i| if lobes[i].0.is_some() { lobes[i].1.max_value() } else { 0.0 });
    let sum: f64 = p.iter().sum();
    if !(sum > 0.0) {
        return None;
    }
    let survival = if options.roulette {
        let albedo = SpectralDistribution::from_fn(|j| (0..3).filter(|&i| lobes[i].0.is_some()).map(|i| lobes[i].1[j]).sum());
        albedo.max_value().min(1.0)
    } else {
        1.0
    };
    let mut xi = rng::uniform(rng);
    if xi >= survival {
        return None;
    }
    xi /= survival;
    let mut acc = 0.0;
    let mut chosen = 2;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi / sum;
        if pi > 0.0 {
            chosen = i;
            if xi < acc {
                break;
            }
        }
    }
    let prob = survival * p[chosen] / sum;
    let (event, w) = core::mem::take(&mut lobes[chosen]);
    Some((event?, w * (1.0 / prob)))
}

/// Shoots `emit_count` photons on one thread.
pub fn shoot_photons(scene: &Scene, emit_count: u64) -> Result<PhotonMaps> {
    let plan = EmissionPlan::new(scene, emit_count)?;
    let photons = shoot_range(scene, &plan, 0..emit_count, PhotonOptions::from_scene(scene));
    Ok(PhotonMaps::from_photons(photons, emit_count))
}

/// The four contributions of a photon-mapped render.
#[derive(Debug, Clone, PartialEq)]
pub struct Channels {
    pub total: Framebuffer,
    pub direct: Framebuffer,
    pub specular: Framebuffer,
    pub caustic: Framebuffer,
    pub indirect: Framebuffer,
}

/// Per-pixel accumulator for the four channels and their running sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ChannelSample {
    pub total: SpectralDistribution,
    pub direct: SpectralDistribution,
    pub specular: SpectralDistribution,
    pub caustic: SpectralDistribution,
    pub indirect: SpectralDistribution,
}

/// Sink adding the photon estimates at the first diffuse camera hit.
pub struct GlobalSink<'a> {
    pub maps: &'a PhotonMaps,
    pub scene: &'a Scene,
    pub bands: Bands,
    pub sample: ChannelSample,
}

impl GlobalSink<'_> {
    /// Caustic and indirect estimates for a camera ray at a diffuse hit.
    pub fn estimates(
        maps: &PhotonMaps,
        scene: &Scene,
        bands: Bands,
        ray: &Ray,
        hit: &Hit,
        material: usize,
    ) -> (SpectralDistribution, SpectralDistribution) {
        let rho = &scene.materials[material].diffuse_reflectance;
        let k = scene.settings.knn_k;
        let r = scene.knn_radius();
        let mut c = radiance_estimate(&maps.caustic, hit.point, hit.normal, rho, k, r, PhotonFilter::All, bands);
        let mut i = radiance_estimate(&maps.global, hit.point, hit.normal, rho, k, r, PhotonFilter::AfterDiffuse, bands);
        for j in bands.range() {
            c[j] *= ray.throughput[j];
            i[j] *= ray.throughput[j];
        }
        (c, i)
    }
}

impl Sink for GlobalSink<'_> {
    fn add(&mut self, bounce: u16, value: &SpectralDistribution, bands: Bands) {
        self.sample.total.add_assign_in(value, bands);
        if bounce == 0 {
            self.sample.direct.add_assign_in(value, bands);
        } else {
            self.sample.specular.add_assign_in(value, bands);
        }
    }

    fn diffuse_hit(&mut self, ray: &Ray, hit: &Hit, material: usize) {
        if ray.bounce_count != 0 {
            return;
        }
        let (c, i) = Self::estimates(self.maps, self.scene, self.bands, ray, hit, material);
        self.sample.total.add_assign_in(&c, self.bands);
        self.sample.total.add_assign_in(&i, self.bands);
        self.sample.caustic.add_assign_in(&c, self.bands);
        self.sample.indirect.add_assign_in(&i, self.bands);
    }
}

/// Photon-mapped render of one tile.
pub fn render_global_tile(
    scene: &Scene,
    maps: &PhotonMaps,
    tile: Tile,
    bands: Bands,
    diag: &mut Diagnostics,
) -> Result<Vec<ChannelSample>> {
    check_tile(&scene.camera, &tile)?;
    let tracer = Tracer::new(scene, bands);
    let mut out = Vec::with_capacity(tile.pixel_count());
    for p in tile.pixels() {
        let ray = generate_primary_ray(&scene.camera, p)?;
        let mut sink = GlobalSink { maps, scene, bands, sample: ChannelSample::default() };
        trace_into(&tracer, ray, &mut sink, diag);
        out.push(sink.sample);
    }
    Ok(out)
}

impl Channels {
    pub fn new(width: u32, height: u32) -> Self {
        let fb = Framebuffer::new(width, height);
        Channels { total: fb.clone(), direct: fb.clone(), specular: fb.clone(), caustic: fb.clone(), indirect: fb }
    }

    pub fn write(&mut self, tile: Tile, samples: &[ChannelSample]) {
        let pick = |f: fn(&ChannelSample) -> SpectralDistribution| Fragment { tile, pixels: samples.iter().map(f).collect() };
        self.total.write_fragment(&pick(|s| s.total));
        self.direct.write_fragment(&pick(|s| s.direct));
        self.specular.write_fragment(&pick(|s| s.specular));
        self.caustic.write_fragment(&pick(|s| s.caustic));
        self.indirect.write_fragment(&pick(|s| s.indirect));
    }
}

/// Serial photon-mapped render with the given maps.
pub fn render_global(scene: &Scene, maps: &PhotonMaps) -> Channels {
    let tile = Tile::full(&scene.camera);
    let mut ch = Channels::new(scene.camera.width, scene.camera.height);
    let samples = render_global_tile(scene, maps, tile, Bands::ALL, &mut Diagnostics::default()).expect("full tile");
    ch.write(tile, &samples);
    ch
}
