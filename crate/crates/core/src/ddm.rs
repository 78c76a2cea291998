//! Ray-tracing domain decomposition.
//!
//! The scene box is cut into `k` boxes by recursive median bisection. Each
//! sub-domain traces rays against its own triangles only; a ray that leaves
//! the box without an owned hit continues in the neighbour as a
//! [`BoundaryRay`] carrying its full state. Shadow segments cross boxes the
//! same way until a blocker or the light is reached. Contributions land in
//! per-sub-domain ledgers that are gathered into the image.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{AccelTree, Ray, Triangle};
use crate::math::{inverse_direction, Aabb, Vec3};
use crate::render_global::{GlobalSink, PhotonMaps};
use crate::render_local::{Diagnostics, Framebuffer, Interaction, ShadowQuery, Tracer};
use crate::scene::Scene;
use crate::spectral::{Bands, SpectralDistribution, BANDS};

/// Root box padding as a fraction of the scene diagonal.
pub const ROOT_PADDING: f64 = 1e-3;
/// Ownership slack of a sub-domain box as a fraction of the scene diagonal.
pub const OWNERSHIP_EPSILON: f64 = 1e-7;
/// Step used to pick the box a ray enters, as a fraction of the scene diagonal.
pub const ROUTE_EPSILON: f64 = 1e-6;

/// Exact separating-axis test between a triangle and a box.
pub fn triangle_overlaps_box(v: &[Vec3; 3], b: &Aabb) -> bool {
    let c = b.center();
    let h = b.extent() * 0.5;
    let p = [v[0] - c, v[1] - c, v[2] - c];
    for axis in 0..3 {
        let lo = p[0].axis(axis).min(p[1].axis(axis)).min(p[2].axis(axis));
        let hi = p[0].axis(axis).max(p[1].axis(axis)).max(p[2].axis(axis));
        if lo > h.axis(axis) || hi < -h.axis(axis) {
            return false;
        }
    }
    let radius = |a: Vec3| h.x * a.x.abs() + h.y * a.y.abs() + h.z * a.z.abs();
    let separated = |a: Vec3| {
        let d = [p[0].dot(a), p[1].dot(a), p[2].dot(a)];
        let lo = d[0].min(d[1]).min(d[2]);
        let hi = d[0].max(d[1]).max(d[2]);
        let r = radius(a);
        lo > r || hi < -r
    };
    let edges = [p[1] - p[0], p[2] - p[1], p[0] - p[2]];
    let units = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)];
    for e in edges {
        for u in units {
            if separated(u.cross(e)) {
                return false;
            }
        }
    }
    !separated(edges[0].cross(edges[1]))
}

/// Sub-domain description. Geometry is loaded separately.
#[derive(Debug, Clone, PartialEq)]
pub struct SubDomain {
    pub id: u32,
    pub bounds: Aabb,
    /// Indices of the scene triangles overlapping the (slightly expanded) box.
    pub triangles: Vec<u32>,
    pub interfaces: Vec<usize>,
}

/// Shared face of two adjacent sub-domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interface {
    pub left_id: u32,
    pub right_id: u32,
    pub axis: usize,
    /// Degenerate along `axis`.
    pub rect: Aabb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub root: Aabb,
    pub subdomains: Vec<SubDomain>,
    pub interfaces: Vec<Interface>,
    /// Absolute ownership slack.
    pub own_epsilon: f64,
    /// Absolute routing step.
    pub route_epsilon: f64,
}

/// Where a ray goes after leaving a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    To(u32),
    /// Left the scene box.
    Background,
}

/// Splits the scene into `k` boxes (`k` a power of two).
pub fn partition(scene: &Scene, k: u32) -> Result<Partition> {
    if k == 0 || !k.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("sub-domain count must be a power of two, got {k}")));
    }
    let tris = &scene.geometry.triangles;
    if tris.is_empty() {
        return Err(Error::InvalidScene("cannot partition an empty scene".into()));
    }
    let diag = scene.diagonal();
    let root = scene.bounds().expanded(ROOT_PADDING * diag);
    let own_epsilon = OWNERSHIP_EPSILON * diag;
    let centroids: Vec<Vec3> = tris.iter().map(Triangle::centroid).collect();
    let mut boxes = Vec::with_capacity(k as usize);
    let all: Vec<u32> = (0..tris.len() as u32).collect();
    split(root, all, k.trailing_zeros(), &centroids, &mut boxes);

    let mut subdomains: Vec<SubDomain> = boxes
        .iter()
        .enumerate()
        .map(|(id, b)| {
            let grown = b.expanded(own_epsilon);
            let triangles = (0..tris.len() as u32).filter(|&i| triangle_overlaps_box(&tris[i as usize].v, &grown)).collect();
            SubDomain { id: id as u32, bounds: *b, triangles, interfaces: Vec::new() }
        })
        .collect();

    let mut interfaces = Vec::new();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            if let Some((axis, rect)) = shared_face(&boxes[i], &boxes[j]) {
                subdomains[i].interfaces.push(interfaces.len());
                subdomains[j].interfaces.push(interfaces.len());
                interfaces.push(Interface { left_id: i as u32, right_id: j as u32, axis, rect });
            }
        }
    }
    Ok(Partition { root, subdomains, interfaces, own_epsilon, route_epsilon: ROUTE_EPSILON * diag })
}

fn split(b: Aabb, mut items: Vec<u32>, levels: u32, centroids: &[Vec3], out: &mut Vec<Aabb>) {
    if levels == 0 {
        out.push(b);
        return;
    }
    let axis = b.longest_axis();
    items.sort_unstable_by(|&x, &y| centroids[x as usize].axis(axis).total_cmp(&centroids[y as usize].axis(axis)).then(x.cmp(&y)));
    let lo = b.min.axis(axis);
    let hi = b.max.axis(axis);
    let mut plane = if items.is_empty() { f64::NAN } else { centroids[items[(items.len() - 1) / 2] as usize].axis(axis) };
    if !(plane > lo && plane < hi) {
        plane = 0.5 * (lo + hi);
    }
    let (left, right): (Vec<u32>, Vec<u32>) = items.into_iter().partition(|&i| centroids[i as usize].axis(axis) <= plane);
    let lb = Aabb::new(b.min, b.max.with_axis(axis, plane));
    let rb = Aabb::new(b.min.with_axis(axis, plane), b.max);
    split(lb, left, levels - 1, centroids, out);
    split(rb, right, levels - 1, centroids, out);
}

fn shared_face(a: &Aabb, b: &Aabb) -> Option<(usize, Aabb)> {
    for axis in 0..3 {
        let plane = if a.max.axis(axis) == b.min.axis(axis) {
            a.max.axis(axis)
        } else if b.max.axis(axis) == a.min.axis(axis) {
            a.min.axis(axis)
        } else {
            continue;
        };
        let mut min = a.min.max(b.min);
        let mut max = a.max.min(b.max);
        let others = [(axis + 1) % 3, (axis + 2) % 3];
        if others.iter().all(|&o| max.axis(o) > min.axis(o)) {
            min = min.with_axis(axis, plane);
            max = max.with_axis(axis, plane);
            return Some((axis, Aabb::new(min, max)));
        }
    }
    None
}

impl Partition {
    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    /// Lowest-id box containing `p`, skipping `exclude`.
    pub fn locate(&self, p: Vec3, exclude: Option<u32>) -> Option<u32> {
        self.subdomains.iter().find(|s| Some(s.id) != exclude && s.bounds.contains(p)).map(|s| s.id)
    }

    /// Box entered by a ray leaving `from` at `q` along `d`.
    pub fn route(&self, q: Vec3, d: Vec3, from: Option<u32>) -> Result<Route> {
        let mut step = self.route_epsilon;
        for _ in 0..40 {
            let probe = q + d * step;
            if !self.root.contains(probe) {
                return Ok(Route::Background);
            }
            if let Some(id) = self.locate(probe, from) {
                return Ok(Route::To(id));
            }
            step *= 2.0;
        }
        Err(Error::Routing(format!("ray at {q:?} along {d:?} cannot leave sub-domain {from:?}")))
    }

    /// Destination of a freshly spawned or injected ray. Rays starting
    /// outside the scene box keep their origin and go to the box they enter.
    pub fn dispatch(&self, origin: Vec3, d: Vec3) -> Result<Route> {
        if self.root.contains(origin) {
            return Ok(self.locate(origin, None).map_or(Route::Background, Route::To));
        }
        match self.root.ray_interval(origin, inverse_direction(d), 0.0, f64::INFINITY) {
            None => Ok(Route::Background),
            Some((t0, _)) => self.route(origin + d * t0, d, None),
        }
    }

    pub fn owns(&self, id: u32, p: Vec3) -> bool {
        self.subdomains[id as usize].bounds.expanded(self.own_epsilon).contains(p)
    }

    /// Builds the acceleration tree of one sub-domain.
    pub fn load(&self, scene: &Scene, id: u32) -> LoadedSubdomain {
        let sub = &self.subdomains[id as usize];
        LoadedSubdomain {
            id,
            bounds: sub.bounds,
            owned: sub.bounds.expanded(self.own_epsilon),
            tree: AccelTree::build_subset(&scene.geometry.triangles, sub.triangles.clone(), scene.settings.bvh_leaf_size),
        }
    }
}

/// Hook for simplified stand-ins of neighbouring geometry. Nothing uses
/// proxies yet; they would change the image.
pub trait NeighborProxy {
    fn proxy(&self, _subdomain: u32) -> Option<&AccelTree> {
        None
    }
}

/// The default hook: no proxies.
pub struct NoProxy;

impl NeighborProxy for NoProxy {}

/// Resident geometry of one sub-domain.
#[derive(Debug, Clone)]
pub struct LoadedSubdomain {
    pub id: u32,
    pub bounds: Aabb,
    pub owned: Aabb,
    pub tree: AccelTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RayKind {
    Radiance = 0,
    ShadowSegment = 1,
    Photon = 2,
}

/// Remaining part of a shadow segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub end: Vec3,
    pub light: u32,
}

/// Ray state crossing from one sub-domain to another.
///
/// For shadow segments `ray.throughput` holds the pending contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRay {
    pub kind: RayKind,
    pub destination: u32,
    pub ray: Ray,
    pub segment: Option<Segment>,
    /// Unique per message; `(sender << 40) | counter`.
    pub seq: u64,
    /// Shadow query id.
    pub query: u64,
}

const NO_MEDIUM: u32 = u32::MAX;

fn bad(msg: &str) -> Error {
    Error::Decode(msg.into())
}

impl BoundaryRay {
    /// Little-endian record: kind u8, destination u32, pixel u32, group u16,
    /// bounce u16, inside u8, origin 3×f64, direction 3×f64, band start u8,
    /// band count u8, throughput count×f64, then for shadow segments end
    /// 3×f64 and light u32, then seq u64, medium u32, query u64.
    pub fn encode(&self, bands: Bands, out: &mut Vec<u8>) {
        out.push(self.kind as u8);
        out.extend_from_slice(&self.destination.to_le_bytes());
        out.extend_from_slice(&self.ray.pixel_id.to_le_bytes());
        out.extend_from_slice(&self.ray.group_id.to_le_bytes());
        out.extend_from_slice(&self.ray.bounce_count.to_le_bytes());
        out.push(self.ray.inside as u8);
        for v in self.ray.origin.to_array().into_iter().chain(self.ray.direction.to_array()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(bands.start as u8);
        out.push(bands.len() as u8);
        for j in bands.range() {
            out.extend_from_slice(&self.ray.throughput[j].to_le_bytes());
        }
        if let Some(s) = &self.segment {
            for v in s.end.to_array() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&s.light.to_le_bytes());
        }
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.ray.medium.unwrap_or(NO_MEDIUM).to_le_bytes());
        out.extend_from_slice(&self.query.to_le_bytes());
    }

    /// Parses one record; returns it and the bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(BoundaryRay, usize)> {
        let mut r = Reader { buf, at: 0 };
        let kind = match r.u8()? {
            0 => RayKind::Radiance,
            1 => RayKind::ShadowSegment,
            2 => RayKind::Photon,
            other => return Err(Error::Decode(format!("unknown ray kind {other}"))),
        };
        let destination = r.u32()?;
        let pixel_id = r.u32()?;
        let group_id = r.u16()?;
        let bounce_count = r.u16()?;
        let inside = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(bad("inside flag must be 0 or 1")),
        };
        let origin = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
        let direction = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
        let start = r.u8()? as usize;
        let count = r.u8()? as usize;
        if start + count > BANDS {
            return Err(bad("band range exceeds the spectral grid"));
        }
        let mut throughput = SpectralDistribution::zero();
        for j in start..start + count {
            throughput[j] = r.f64()?;
        }
        let segment = if kind == RayKind::ShadowSegment {
            let end = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
            Some(Segment { end, light: r.u32()? })
        } else {
            None
        };
        let seq = r.u64()?;
        let medium = match r.u32()? {
            NO_MEDIUM => None,
            m => Some(m),
        };
        let query = r.u64()?;
        let ray = Ray {
            origin,
            direction,
            throughput,
            bounce_count,
            pixel_id,
            group_id,
            t_min: 0.0,
            t_max: f64::INFINITY,
            inside,
            medium,
        };
        Ok((BoundaryRay { kind, destination, ray, segment, seq, query }, r.at))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.at + N;
        let bytes = self.buf.get(self.at..end).ok_or_else(|| bad("truncated record"))?;
        self.at = end;
        Ok(bytes.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

/// Per-pixel partial sums of one sub-domain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ledger {
    pub entries: BTreeMap<u32, SpectralDistribution>,
}

impl Ledger {
    pub fn add(&mut self, pixel: u32, value: &SpectralDistribution, bands: Bands) {
        self.entries.entry(pixel).or_default().add_assign_in(value, bands);
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn take(&mut self) -> Ledger {
        core::mem::take(self)
    }
}

/// A flushed ledger: immutable once handed to the gatherer.
#[derive(Debug, Clone, PartialEq)]
pub struct Partial {
    pub subdomain: u32,
    /// Flush number within the sub-domain, from 0.
    pub flush: u32,
    pub ledger: Ledger,
}

/// Accumulates partials into an image.
#[derive(Debug, Clone)]
pub struct Gatherer {
    image: Framebuffer,
    bands: Bands,
    received: Vec<Vec<u32>>,
}

impl Gatherer {
    pub fn new(width: u32, height: u32, subdomains: usize, bands: Bands) -> Self {
        Gatherer { image: Framebuffer::new(width, height), bands, received: alloc::vec![Vec::new(); subdomains] }
    }

    pub fn gather(&mut self, partial: &Partial) {
        for (&pixel, value) in &partial.ledger.entries {
            self.image.pixels[pixel as usize].add_assign_in(value, self.bands);
        }
        self.received[partial.subdomain as usize].push(partial.flush);
    }

    /// Final image once every sub-domain has delivered `flushes[id]` partials.
    pub fn finish(mut self, flushes: &[u32]) -> Result<Framebuffer> {
        for (id, got) in self.received.iter_mut().enumerate() {
            got.sort_unstable();
            let expected = flushes.get(id).copied().unwrap_or(0);
            if got.len() != expected as usize || got.iter().enumerate().any(|(i, &f)| f != i as u32) {
                return Err(Error::IncompleteGather(format!(
                    "sub-domain {id}: expected {expected} flushes, received {:?}",
                    got
                )));
            }
        }
        self.image.written.iter_mut().for_each(|w| *w = true);
        Ok(self.image)
    }
}

/// Ray and message accounting for the conservation audit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub primary: u64,
    pub spawned: u64,
    /// Rays ended at an owned hit.
    pub terminated: u64,
    pub background: u64,
    /// Rays discarded by the throughput threshold.
    pub dropped: u64,
    pub emitted: u64,
    pub consumed: u64,
    pub shadow_created: u64,
    pub shadow_resolved: u64,
}

impl Counters {
    pub fn merge(&mut self, o: &Counters) {
        self.primary += o.primary;
        self.spawned += o.spawned;
        self.terminated += o.terminated;
        self.background += o.background;
        self.dropped += o.dropped;
        self.emitted += o.emitted;
        self.consumed += o.consumed;
        self.shadow_created += o.shadow_created;
        self.shadow_resolved += o.shadow_resolved;
    }

    /// Every ray ended exactly once and every message was consumed.
    pub fn balanced(&self) -> bool {
        self.primary + self.spawned == self.terminated + self.background + self.dropped
            && self.emitted == self.consumed
            && self.shadow_created == self.shadow_resolved
    }
}

/// Shadow bookkeeping recorded in audit mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShadowAudit {
    Created { query: u64, from: Vec3, to: Vec3 },
    Verdict { query: u64, occluded: bool },
}

/// Persistent per-sub-domain id counters (survive unload).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdCounters {
    pub seq: u64,
    pub query: u64,
}

/// Everything a sub-domain produces while tracing.
#[derive(Debug, Default)]
pub struct TraceOutput {
    pub ledger: Ledger,
    pub outbound: Vec<BoundaryRay>,
    pub counters: Counters,
    pub diagnostics: Diagnostics,
    pub shadow_audit: Vec<ShadowAudit>,
}

/// Read-only state shared by all sub-domain tracers of a run.
pub struct DdmContext<'a> {
    pub scene: &'a Scene,
    pub partition: &'a Partition,
    pub tracer: Tracer<'a>,
    pub photons: Option<&'a PhotonMaps>,
    pub audit: bool,
    /// Added to segment ends inside a box so blockers on a cut plane are not missed.
    pub slack: f64,
}

impl<'a> DdmContext<'a> {
    pub fn new(scene: &'a Scene, partition: &'a Partition, bands: Bands, photons: Option<&'a PhotonMaps>, audit: bool) -> Self {
        DdmContext {
            scene,
            partition,
            tracer: Tracer::new(scene, bands),
            photons,
            audit,
            slack: 1e-9 * scene.diagonal(),
        }
    }

    /// Boundary rays for the camera rays of `pixels`, or `None` for rays
    /// that miss the scene box. Counts primaries and background misses.
    pub fn inject(&self, ray: Ray, counters: &mut Counters) -> Result<Option<BoundaryRay>> {
        counters.primary += 1;
        match self.partition.dispatch(ray.origin, ray.direction)? {
            Route::Background => {
                counters.background += 1;
                Ok(None)
            }
            Route::To(destination) => Ok(Some(BoundaryRay { kind: RayKind::Radiance, destination, ray, segment: None, seq: 0, query: 0 })),
        }
    }
}

enum Work {
    Radiance(Ray),
    Shadow { ray: Ray, t0: f64, segment: Segment, query: u64 },
}

/// Traces inbound rays of one resident sub-domain to completion locally,
/// emitting boundary rays for everything that leaves it.
pub fn trace_subdomain(
    ctx: &DdmContext,
    sub: &LoadedSubdomain,
    inbound: impl IntoIterator<Item = BoundaryRay>,
    ids: &mut IdCounters,
    out: &mut TraceOutput,
) -> Result<()> {
    let mut stack: Vec<Work> = Vec::new();
    let mut inter = Interaction::default();
    for msg in inbound {
        if msg.destination != sub.id {
            return Err(Error::Routing(format!("ray for sub-domain {} delivered to {}", msg.destination, sub.id)));
        }
        if msg.seq != 0 {
            out.counters.consumed += 1;
        }
        match (msg.kind, msg.segment) {
            (RayKind::Radiance, _) => stack.push(Work::Radiance(msg.ray)),
            (RayKind::ShadowSegment, Some(segment)) => stack.push(Work::Shadow { ray: msg.ray, t0: 0.0, segment, query: msg.query }),
            (RayKind::ShadowSegment, None) => return Err(Error::Routing("shadow segment without an end point".into())),
            (RayKind::Photon, _) => return Err(Error::Routing("photon rays are not traced by sub-domains".into())),
        }
        while let Some(work) = stack.pop() {
            match work {
                Work::Radiance(ray) => radiance(ctx, sub, ray, ids, out, &mut stack, &mut inter)?,
                Work::Shadow { ray, t0, segment, query } => shadow(ctx, sub, ray, t0, segment, query, ids, out)?,
            }
        }
    }
    Ok(())
}

fn next_seq(sub: u32, ids: &mut IdCounters) -> u64 {
    ids.seq += 1;
    ((sub as u64) << 40) | ids.seq
}

fn radiance(
    ctx: &DdmContext,
    sub: &LoadedSubdomain,
    mut ray: Ray,
    ids: &mut IdCounters,
    out: &mut TraceOutput,
    stack: &mut Vec<Work>,
    inter: &mut Interaction,
) -> Result<()> {
    let tracer = &ctx.tracer;
    if !tracer.survives(&mut ray) {
        out.counters.dropped += 1;
        return Ok(());
    }
    out.diagnostics.rays += 1;
    let tris = &ctx.scene.geometry.triangles;
    let hit = sub.tree.intersect(tris, ray.origin, ray.direction, 0.0, f64::INFINITY);
    let hit = hit.filter(|h| sub.owned.contains(h.point));
    let Some(mut hit) = hit else {
        // leave through the far side of the box
        let inv = inverse_direction(ray.direction);
        let t_exit = sub.bounds.ray_interval(ray.origin, inv, 0.0, f64::INFINITY).map_or(0.0, |(_, t1)| t1);
        tracer.attenuate(&mut ray, t_exit);
        let q = ray.origin + ray.direction * t_exit;
        match ctx.partition.route(q, ray.direction, Some(sub.id))? {
            Route::Background => out.counters.background += 1,
            Route::To(destination) => {
                ray.origin = q;
                out.counters.emitted += 1;
                let seq = next_seq(sub.id, ids);
                out.outbound.push(BoundaryRay { kind: RayKind::Radiance, destination, ray, segment: None, seq, query: 0 });
            }
        }
        return Ok(());
    };
    hit.subdomain_id = sub.id;
    tracer.attenuate(&mut ray, hit.t);
    if !tracer.survives(&mut ray) {
        out.counters.dropped += 1;
        return Ok(());
    }
    out.counters.terminated += 1;
    tracer.interact(&ray, &hit, inter, &mut out.diagnostics);
    let shadows = core::mem::take(&mut inter.shadows);
    for q in &shadows {
        start_shadow(ctx, sub, &ray, q, ids, out)?;
    }
    inter.shadows = shadows;
    if let (Some(m), Some(maps)) = (inter.diffuse_material, ctx.photons) {
        if ray.bounce_count == 0 {
            let (c, i) = GlobalSink::estimates(maps, ctx.scene, tracer.bands, &ray, &hit, m);
            out.ledger.add(ray.pixel_id, &c, tracer.bands);
            out.ledger.add(ray.pixel_id, &i, tracer.bands);
        }
    }
    let children = [inter.refracted.take(), inter.reflected.take()];
    for child in children.into_iter().flatten() {
        out.counters.spawned += 1;
        match ctx.partition.dispatch(child.origin, child.direction)? {
            Route::To(id) if id == sub.id => stack.push(Work::Radiance(child)),
            Route::To(destination) => {
                out.counters.emitted += 1;
                let seq = next_seq(sub.id, ids);
                out.outbound.push(BoundaryRay { kind: RayKind::Radiance, destination, ray: child, segment: None, seq, query: 0 });
            }
            Route::Background => out.counters.background += 1,
        }
    }
    Ok(())
}

fn start_shadow(
    ctx: &DdmContext,
    sub: &LoadedSubdomain,
    parent: &Ray,
    q: &ShadowQuery,
    ids: &mut IdCounters,
    out: &mut TraceOutput,
) -> Result<()> {
    ids.query += 1;
    let query = ((sub.id as u64) << 40) | ids.query;
    out.counters.shadow_created += 1;
    if ctx.audit {
        out.shadow_audit.push(ShadowAudit::Created { query, from: q.from, to: q.to });
    }
    let d = q.to - q.from;
    let len = d.length();
    let eps = ctx.tracer.epsilon;
    if len <= 2.0 * eps {
        return resolve_shadow(ctx, parent.pixel_id, &q.contribution, query, false, out);
    }
    let mut ray = Ray::new(q.from, d / len);
    ray.throughput = q.contribution;
    ray.pixel_id = parent.pixel_id;
    ray.group_id = parent.group_id;
    ray.bounce_count = parent.bounce_count;
    shadow(ctx, sub, ray, eps, Segment { end: q.to, light: q.light as u32 }, query, ids, out)
}

#[allow(clippy::too_many_arguments)]
fn shadow(
    ctx: &DdmContext,
    sub: &LoadedSubdomain,
    mut ray: Ray,
    t0: f64,
    segment: Segment,
    query: u64,
    ids: &mut IdCounters,
    out: &mut TraceOutput,
) -> Result<()> {
    let tris = &ctx.scene.geometry.triangles;
    let eps = ctx.tracer.epsilon;
    let t1 = (segment.end - ray.origin).length() - eps;
    if t0 > t1 {
        return resolve_shadow(ctx, ray.pixel_id, &ray.throughput, query, false, out);
    }
    let inv = inverse_direction(ray.direction);
    let t_exit = sub.bounds.ray_interval(ray.origin, inv, 0.0, f64::INFINITY).map_or(t0, |(_, t)| t.max(t0));
    let local_end = t1.min(t_exit + ctx.slack);
    if sub.tree.any_hit(tris, ray.origin, ray.direction, t0, local_end) {
        return resolve_shadow(ctx, ray.pixel_id, &ray.throughput, query, true, out);
    }
    if t1 <= t_exit {
        return resolve_shadow(ctx, ray.pixel_id, &ray.throughput, query, false, out);
    }
    let q = ray.origin + ray.direction * t_exit.max(t0);
    match ctx.partition.route(q, ray.direction, Some(sub.id))? {
        Route::Background => resolve_shadow(ctx, ray.pixel_id, &ray.throughput, query, false, out),
        Route::To(destination) => {
            ray.origin = q;
            out.counters.emitted += 1;
            let seq = next_seq(sub.id, ids);
            out.outbound.push(BoundaryRay { kind: RayKind::ShadowSegment, destination, ray, segment: Some(segment), seq, query });
            Ok(())
        }
    }
}

fn resolve_shadow(
    ctx: &DdmContext,
    pixel: u32,
    contribution: &SpectralDistribution,
    query: u64,
    occluded: bool,
    out: &mut TraceOutput,
) -> Result<()> {
    out.counters.shadow_resolved += 1;
    if ctx.audit {
        out.shadow_audit.push(ShadowAudit::Verdict { query, occluded });
    }
    if !occluded {
        out.ledger.add(pixel, contribution, ctx.tracer.bands);
    }
    Ok(())
}
