//! Triangle meshes, rays, hit records and a median-split bounding volume
//! hierarchy.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{inverse_direction, Aabb, Vec3};
use crate::spectral::SpectralDistribution;

/// Barycentric tolerance of the ray-triangle test.
pub const BARYCENTRIC_EPSILON: f64 = 1e-7;
/// Hits closer than this in `t` count as ties and go to the lowest triangle index.
pub const TIE_EPSILON: f64 = 1e-12;
pub const DEFAULT_MAX_LEAF: usize = 4;

/// A light ray and the state it carries between bounces.
#[derive(Debug, Clone, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub throughput: SpectralDistribution,
    pub bounce_count: u16,
    pub pixel_id: u32,
    pub group_id: u16,
    pub t_min: f64,
    pub t_max: f64,
    /// Parity flag: the ray travels inside a refracting solid.
    pub inside: bool,
    /// Material whose interior the ray is crossing, if any.
    pub medium: Option<u32>,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Ray {
            origin,
            direction,
            throughput: SpectralDistribution::constant(1.0),
            bounce_count: 0,
            pixel_id: 0,
            group_id: 0,
            t_min: 0.0,
            t_max: f64::INFINITY,
            inside: false,
            medium: None,
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    pub fn validate(&self) -> Result<()> {
        if !self.origin.is_finite() || !self.direction.is_unit(1e-9) {
            return Err(Error::InvalidArgument("ray needs a finite origin and a unit direction".into()));
        }
        if !(self.t_min >= 0.0 && self.t_min < self.t_max) {
            return Err(Error::InvalidArgument("ray clip range must satisfy 0 <= t_min < t_max".into()));
        }
        if !self.throughput.is_finite() || !self.throughput.is_non_negative() {
            return Err(Error::InvalidArgument("ray throughput must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Closest-hit record. The normal is geometric and faces the incoming ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
    pub uv: (f64, f64),
    pub material_index: usize,
    pub triangle: u32,
    pub subdomain_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub v: [Vec3; 3],
    pub uv: [(f64, f64); 3],
    pub material: usize,
}

impl Triangle {
    pub fn new(v: [Vec3; 3], material: usize) -> Self {
        Triangle { v, uv: [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], material }
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.v)
    }

    pub fn centroid(&self) -> Vec3 {
        (self.v[0] + self.v[1] + self.v[2]) / 3.0
    }

    pub fn area(&self) -> f64 {
        0.5 * (self.v[1] - self.v[0]).cross(self.v[2] - self.v[0]).length()
    }

    pub fn geometric_normal(&self) -> Vec3 {
        (self.v[1] - self.v[0]).cross(self.v[2] - self.v[0]).normalized()
    }

    /// Möller-Trumbore. Returns `(t, b1, b2)` for `t` in `[t_min, t_max]`.
    #[inline]
    pub fn intersect(&self, origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> Option<(f64, f64, f64)> {
        let e1 = self.v[1] - self.v[0];
        let e2 = self.v[2] - self.v[0];
        let p = dir.cross(e2);
        let det = e1.dot(p);
        if det.abs() <= 1e-12 * e1.cross(e2).length() || det == 0.0 {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - self.v[0];
        let b1 = s.dot(p) * inv;
        if !(-BARYCENTRIC_EPSILON..=1.0 + BARYCENTRIC_EPSILON).contains(&b1) {
            return None;
        }
        let q = s.cross(e1);
        let b2 = dir.dot(q) * inv;
        if b2 < -BARYCENTRIC_EPSILON || b1 + b2 > 1.0 + BARYCENTRIC_EPSILON {
            return None;
        }
        let t = e2.dot(q) * inv;
        if t >= t_min && t <= t_max {
            Some((t, b1, b2))
        } else {
            None
        }
    }

    fn hit_record(&self, index: u32, origin: Vec3, dir: Vec3, (t, b1, b2): (f64, f64, f64)) -> Hit {
        let b0 = 1.0 - b1 - b2;
        let mut normal = self.geometric_normal();
        if normal.dot(dir) > 0.0 {
            normal = -normal;
        }
        Hit {
            t,
            point: origin + dir * t,
            normal,
            uv: (
                b0 * self.uv[0].0 + b1 * self.uv[1].0 + b2 * self.uv[2].0,
                b0 * self.uv[0].1 + b1 * self.uv[1].1 + b2 * self.uv[2].1,
            ),
            material_index: self.material,
            triangle: index,
            subdomain_id: 0,
        }
    }
}

/// Indexed triangle mesh bound to one material.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub name: String,
    pub positions: Vec<Vec3>,
    pub uvs: Vec<(f64, f64)>,
    pub faces: Vec<[usize; 3]>,
    /// Per-corner indices into `uvs`; empty when the mesh has no uv.
    pub face_uvs: Vec<[usize; 3]>,
    pub material: usize,
}

impl TriangleMesh {
    /// Validates indices and drops zero-area faces. Returns the mesh and the
    /// number of faces removed.
    pub fn new(
        name: &str,
        positions: Vec<Vec3>,
        uvs: Vec<(f64, f64)>,
        faces: Vec<[usize; 3]>,
        face_uvs: Vec<[usize; 3]>,
        material: usize,
    ) -> Result<(Self, usize)> {
        if !face_uvs.is_empty() && face_uvs.len() != faces.len() {
            return Err(Error::InvalidGeometry(alloc::format!("mesh `{name}`: uv faces do not match faces")));
        }
        if let Some(p) = positions.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry(alloc::format!("mesh `{name}`: non-finite vertex {p:?}")));
        }
        for f in &faces {
            if f.iter().any(|&i| i >= positions.len()) {
                return Err(Error::InvalidGeometry(alloc::format!("mesh `{name}`: vertex index out of range")));
            }
        }
        for f in &face_uvs {
            if f.iter().any(|&i| i >= uvs.len()) {
                return Err(Error::InvalidGeometry(alloc::format!("mesh `{name}`: uv index out of range")));
            }
        }
        let mut kept = Vec::with_capacity(faces.len());
        let mut kept_uv = Vec::new();
        for (k, f) in faces.iter().enumerate() {
            let [a, b, c] = f.map(|i| positions[i]);
            if (b - a).cross(c - a).length() > 0.0 {
                kept.push(*f);
                if !face_uvs.is_empty() {
                    kept_uv.push(face_uvs[k]);
                }
            }
        }
        let dropped = faces.len() - kept.len();
        Ok((
            TriangleMesh { name: name.into(), positions, uvs, faces: kept, face_uvs: kept_uv, material },
            dropped,
        ))
    }

    pub fn triangles(&self) -> impl Iterator<Item = Triangle> + '_ {
        self.faces.iter().enumerate().map(move |(k, f)| {
            let mut t = Triangle::new(f.map(|i| self.positions[i]), self.material);
            if let Some(fu) = self.face_uvs.get(k) {
                t.uv = fu.map(|i| self.uvs[i]);
            }
            t
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NodeKind {
    Leaf { start: u32, count: u32 },
    Inner { left: u32, right: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

/// Bounding volume hierarchy over a subset of a triangle slice. Leaves store
/// indices into that slice, so several trees can share one triangle array.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccelTree {
    nodes: Vec<Node>,
    indices: Vec<u32>,
    max_leaf: usize,
}

const STACK: usize = 96;

/// Up to this many equal-`t` candidates are tracked exactly.
const TIE_SLOTS: usize = 16;

struct Closest {
    t_best: f64,
    slots: [(f64, u32, f64, f64); TIE_SLOTS],
    len: usize,
}

impl Closest {
    fn new() -> Self {
        Closest { t_best: f64::INFINITY, slots: [(0.0, 0, 0.0, 0.0); TIE_SLOTS], len: 0 }
    }

    #[inline]
    fn limit(&self) -> f64 {
        self.t_best + TIE_EPSILON
    }

    /// Order-independent: the answer is the lowest index among hits whose
    /// `t` is within the tie window of the smallest `t`.
    fn offer(&mut self, t: f64, index: u32, b1: f64, b2: f64) {
        if t > self.limit() {
            return;
        }
        if t < self.t_best {
            self.t_best = t;
            let limit = self.limit();
            let mut w = 0;
            for r in 0..self.len {
                if self.slots[r].0 <= limit {
                    self.slots[w] = self.slots[r];
                    w += 1;
                }
            }
            self.len = w;
        }
        if self.len < TIE_SLOTS {
            self.slots[self.len] = (t, index, b1, b2);
            self.len += 1;
        } else if let Some(worst) = (0..self.len).max_by_key(|&k| self.slots[k].1) {
            if index < self.slots[worst].1 {
                self.slots[worst] = (t, index, b1, b2);
            }
        }
    }

    fn best(&self) -> Option<(f64, u32, f64, f64)> {
        self.slots[..self.len].iter().copied().min_by_key(|s| s.1)
    }
}

impl AccelTree {
    /// Tree over all of `triangles`.
    pub fn build(triangles: &[Triangle], max_leaf: usize) -> Self {
        let all: Vec<u32> = (0..triangles.len() as u32).collect();
        Self::build_subset(triangles, all, max_leaf)
    }

    /// Tree over `subset` (indices into `triangles`).
    pub fn build_subset(triangles: &[Triangle], mut subset: Vec<u32>, max_leaf: usize) -> Self {
        let max_leaf = max_leaf.max(1);
        subset.sort_unstable();
        subset.dedup();
        let mut tree = AccelTree { nodes: Vec::new(), indices: Vec::with_capacity(subset.len()), max_leaf };
        if !subset.is_empty() {
            let centroids: Vec<Vec3> = triangles.iter().map(Triangle::centroid).collect();
            tree.build_node(triangles, &centroids, &mut subset);
        }
        tree
    }

    fn build_node(&mut self, triangles: &[Triangle], centroids: &[Vec3], items: &mut [u32]) -> u32 {
        let bounds = items.iter().fold(Aabb::EMPTY, |b, &i| b.union(triangles[i as usize].bounds()));
        let id = self.nodes.len() as u32;
        if items.len() <= self.max_leaf {
            let start = self.indices.len() as u32;
            self.indices.extend_from_slice(items);
            self.nodes.push(Node { bounds, kind: NodeKind::Leaf { start, count: items.len() as u32 } });
            return id;
        }
        let axis = bounds.longest_axis();
        items.sort_unstable_by(|&a, &b| {
            centroids[a as usize]
                .axis(axis)
                .total_cmp(&centroids[b as usize].axis(axis))
                .then(a.cmp(&b))
        });
        self.nodes.push(Node { bounds, kind: NodeKind::Leaf { start: 0, count: 0 } });
        let mid = items.len() / 2;
        let (lo, hi) = items.split_at_mut(mid);
        let left = self.build_node(triangles, centroids, lo);
        let right = self.build_node(triangles, centroids, hi);
        self.nodes[id as usize].kind = NodeKind::Inner { left, right };
        id
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map_or(Aabb::EMPTY, |n| n.bounds)
    }

    pub fn triangle_count(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Checks containment and single-leaf membership; used by tests.
    pub fn check_invariants(&self, triangles: &[Triangle]) -> bool {
        if self.nodes.is_empty() {
            return self.indices.is_empty();
        }
        let mut seen = Vec::new();
        let mut stack = alloc::vec![0u32];
        while let Some(n) = stack.pop() {
            let node = self.nodes[n as usize];
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    if count as usize > self.max_leaf {
                        return false;
                    }
                    for &i in &self.indices[start as usize..(start + count) as usize] {
                        if !node.bounds.contains_box(&triangles[i as usize].bounds()) {
                            return false;
                        }
                        seen.push(i);
                    }
                }
                NodeKind::Inner { left, right } => {
                    for c in [left, right] {
                        if !node.bounds.contains_box(&self.nodes[c as usize].bounds) {
                            return false;
                        }
                        stack.push(c);
                    }
                }
            }
        }
        let n = seen.len();
        seen.sort_unstable();
        seen.dedup();
        n == seen.len() && n == self.indices.len()
    }

    /// Closest hit in `[t_min, t_max]`.
    pub fn intersect(&self, triangles: &[Triangle], origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = inverse_direction(dir);
        let mut closest = Closest::new();
        let mut stack = [0u32; STACK];
        let mut sp = 1;
        while sp > 0 {
            sp -= 1;
            let node = self.nodes[stack[sp] as usize];
            let limit = closest.limit().min(t_max);
            if node.bounds.ray_interval(origin, inv, t_min, limit).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &i in &self.indices[start as usize..(start + count) as usize] {
                        let limit = closest.limit().min(t_max);
                        if let Some((t, b1, b2)) = triangles[i as usize].intersect(origin, dir, t_min, limit) {
                            closest.offer(t, i, b1, b2);
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let near_l = self.nodes[left as usize].bounds.ray_interval(origin, inv, t_min, limit);
                    let near_r = self.nodes[right as usize].bounds.ray_interval(origin, inv, t_min, limit);
                    let (first, second) = match (near_l, near_r) {
                        (Some(a), Some(b)) if b.0 < a.0 => (Some(right), Some(left)),
                        (a, b) => (a.map(|_| left), b.map(|_| right)),
                    };
                    // push the farther child first so the nearer one pops next
                    if let Some(s) = second {
                        stack[sp] = s;
                        sp += 1;
                    }
                    if let Some(f) = first {
                        stack[sp] = f;
                        sp += 1;
                    }
                }
            }
        }
        closest
            .best()
            .map(|(t, i, b1, b2)| triangles[i as usize].hit_record(i, origin, dir, (t, b1, b2)))
    }

    /// Any hit with `t` in `[t_min, t_max]`.
    pub fn any_hit(&self, triangles: &[Triangle], origin: Vec3, dir: Vec3, t_min: f64, t_max: f64) -> bool {
        if self.nodes.is_empty() || !(t_min <= t_max) {
            return false;
        }
        let inv = inverse_direction(dir);
        let mut stack = [0u32; STACK];
        let mut sp = 1;
        while sp > 0 {
            sp -= 1;
            let node = self.nodes[stack[sp] as usize];
            if node.bounds.ray_interval(origin, inv, t_min, t_max).is_none() {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &i in &self.indices[start as usize..(start + count) as usize] {
                        if triangles[i as usize].intersect(origin, dir, t_min, t_max).is_some() {
                            return true;
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack[sp] = right;
                    stack[sp + 1] = left;
                    sp += 2;
                }
            }
        }
        false
    }

    /// Whether anything blocks the segment `a → b` shrunk by `epsilon` at both ends.
    pub fn occluded(&self, triangles: &[Triangle], a: Vec3, b: Vec3, epsilon: f64) -> bool {
        let d = b - a;
        let len = d.length();
        if len <= 2.0 * epsilon {
            return false;
        }
        self.any_hit(triangles, a, d / len, epsilon, len - epsilon)
    }
}

/// Triangles of all meshes in one array, plus the tree over them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Geometry {
    pub triangles: Vec<Triangle>,
    pub tree: AccelTree,
}

impl Geometry {
    pub fn from_triangles(triangles: Vec<Triangle>, max_leaf: usize) -> Self {
        let tree = AccelTree::build(&triangles, max_leaf);
        Geometry { triangles, tree }
    }

    pub fn bounds(&self) -> Aabb {
        self.tree.bounds()
    }

    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        self.tree.intersect(&self.triangles, ray.origin, ray.direction, ray.t_min, ray.t_max)
    }

    pub fn occluded(&self, a: Vec3, b: Vec3, epsilon: f64) -> bool {
        self.tree.occluded(&self.triangles, a, b, epsilon)
    }
}

/// Concatenates the meshes (in order) and builds the hierarchy.
pub fn build_accel(meshes: &[TriangleMesh]) -> Geometry {
    build_accel_with(meshes, DEFAULT_MAX_LEAF)
}

pub fn build_accel_with(meshes: &[TriangleMesh], max_leaf: usize) -> Geometry {
    let triangles = meshes.iter().flat_map(|m| m.triangles()).collect();
    Geometry::from_triangles(triangles, max_leaf)
}
