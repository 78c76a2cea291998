use proptest::prelude::*;
use vitrail_core::ddm::{partition, triangle_overlaps_box, Route};
use vitrail_core::geometry::TriangleMesh;
use vitrail_core::optics::{fresnel_reflectance, refract_direction, volume_transmittance, ComplexIOR, Material, Refraction};
use vitrail_core::scene::{Camera, Light, Projection, RenderSettings, Scene};
use vitrail_core::spectral::{merge_groups, spectrum_to_xyz, split_groups, split_values};
use vitrail_core::{SpectralDistribution, Vec3, BANDS};

fn soup(points: &[(f64, f64, f64)]) -> Scene {
    let positions: Vec<Vec3> = points.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
    let faces: Vec<[usize; 3]> = (0..positions.len() / 3).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
    let mesh = TriangleMesh::new("soup", positions, vec![], faces, vec![], 0).unwrap().0;
    let camera = Camera {
        projection: Projection::Orthographic {
            center: Vec3::new(0.0, 0.0, 20.0),
            view: Vec3::new(0.0, 0.0, -1.0),
            up: Vec3::new(0.0, 1.0, 0.0),
            plane_width: 10.0,
            plane_height: 10.0,
        },
        width: 4,
        height: 4,
    };
    let light = Light::Point { position: Vec3::new(0.0, 0.0, 15.0), intensity: SpectralDistribution::constant(1.0) };
    Scene::new(vec![mesh], vec![Material::diffuse("d", SpectralDistribution::constant(0.5))], vec![light], camera, RenderSettings::default()).unwrap()
}

fn volume(b: &vitrail_core::math::Aabb) -> f64 {
    let e = b.extent();
    e.x * e.y * e.z
}

fn direction() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_filter_map("non-zero", |(x, y, z)| {
        let v = Vec3::new(x, y, z);
        (v.length() > 1e-3).then(|| v.normalized())
    })
}

proptest! {
    #[test]
    fn fresnel_is_reciprocal(theta in 0.0f64..1.5, n1 in 1.0f64..2.5, n2 in 1.0f64..2.5) {
        let r = fresnel_reflectance(theta.cos(), n1, n2);
        prop_assert!((0.0..=1.0).contains(&r));
        let sin_t = n1 / n2 * theta.sin();
        if sin_t < 1.0 {
            let back = fresnel_reflectance(sin_t.asin().cos(), n2, n1);
            prop_assert!((r - back).abs() <= 1e-12, "{} vs {}", r, back);
        } else {
            prop_assert_eq!(r, 1.0);
        }
    }

    #[test]
    fn refraction_obeys_snell(d in direction(), n1 in 1.0f64..2.5, n2 in 1.0f64..2.5) {
        let normal = Vec3::new(0.0, 0.0, 1.0);
        let d = if d.z > 0.0 { Vec3::new(d.x, d.y, -d.z) } else { d };
        prop_assume!(d.z < -1e-6);
        let sin_i = (1.0 - d.z * d.z).max(0.0).sqrt();
        match refract_direction(d, normal, n1 / n2).unwrap() {
            Refraction::Refracted(t) => {
                let sin_t = (1.0 - t.z * t.z).max(0.0).sqrt();
                prop_assert!((n1 * sin_i - n2 * sin_t).abs() <= 1e-9);
                prop_assert!(t.z < 0.0);
                // stays in the plane of incidence
                prop_assert!(d.cross(normal).dot(t).abs() <= 1e-9);
            }
            Refraction::TotalInternalReflection => prop_assert!(n1 * sin_i >= n2 * (1.0 - 1e-12)),
        }
    }

    #[test]
    fn transmittance_multiplies(k in proptest::collection::vec(0.0f64..1e-5, BANDS), d1 in 0.0f64..0.01, d2 in 0.0f64..0.01) {
        let ior = ComplexIOR::new(SpectralDistribution::constant(1.5), SpectralDistribution::from_fn(|j| k[j])).unwrap();
        let a = volume_transmittance(&ior, d1).unwrap();
        let b = volume_transmittance(&ior, d2).unwrap();
        let ab = volume_transmittance(&ior, d1 + d2).unwrap();
        for j in 0..BANDS {
            prop_assert!((ab[j] - a[j] * b[j]).abs() <= 1e-12 * ab[j].max(1e-300));
            prop_assert!(ab[j] <= a[j] + 1e-15);
        }
    }

    #[test]
    fn spectral_groups_round_trip(size in 1usize..=81, values in proptest::collection::vec(-5.0f64..5.0, BANDS)) {
        let sd = SpectralDistribution::from_fn(|j| values[j]);
        let groups = split_groups(size).unwrap();
        prop_assert_eq!(groups.len(), BANDS.div_ceil(size));
        let parts = split_values(&sd, &groups);
        let borrowed: Vec<_> = parts.iter().rev().map(|(g, v)| (*g, v.as_slice())).collect();
        prop_assert_eq!(merge_groups(&borrowed).unwrap(), sd);
        prop_assert!(merge_groups(&borrowed[1..]).is_err() || groups.len() == 1);
    }

    #[test]
    fn xyz_is_linear(values in proptest::collection::vec(0.0f64..2.0, BANDS), s in 0.0f64..10.0) {
        let sd = SpectralDistribution::from_fn(|j| values[j]);
        let a = spectrum_to_xyz(&sd.scaled(s));
        let b = spectrum_to_xyz(&sd);
        for c in 0..3 {
            prop_assert!((a[c] - s * b[c]).abs() <= 1e-12 * (1.0 + a[c].abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partitions_tile_the_root_box(
        points in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 3..90),
        level in 0u32..4,
    ) {
        let n = points.len() / 3 * 3;
        let scene = soup(&points[..n]);
        prop_assume!(!scene.geometry.triangles.is_empty());
        let k = 1 << level;
        let p = partition(&scene, k).unwrap();
        prop_assert_eq!(p.len(), k as usize);
        let total: f64 = p.subdomains.iter().map(|s| volume(&s.bounds)).sum();
        prop_assert!((total - volume(&p.root)).abs() <= 1e-9 * volume(&p.root));
        let mut union = p.subdomains[0].bounds;
        for s in &p.subdomains {
            union = union.union(s.bounds);
            for &t in &s.triangles {
                let tri = &scene.geometry.triangles[t as usize];
                prop_assert!(triangle_overlaps_box(&tri.v, &s.bounds.expanded(p.own_epsilon)));
            }
        }
        prop_assert_eq!(union, p.root);
        for t in 0..scene.geometry.triangles.len() as u32 {
            prop_assert!(p.subdomains.iter().any(|s| s.triangles.contains(&t)), "triangle {} unassigned", t);
        }
        for i in &p.interfaces {
            prop_assert!(i.left_id < i.right_id);
        }
    }

    #[test]
    fn routing_picks_the_box_ahead(
        points in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 30..60),
        u in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
        d in direction(),
    ) {
        let n = points.len() / 3 * 3;
        let scene = soup(&points[..n]);
        prop_assume!(!scene.geometry.triangles.is_empty());
        let p = partition(&scene, 8).unwrap();
        let e = p.root.extent();
        let q = p.root.min + Vec3::new(u.0 * e.x, u.1 * e.y, u.2 * e.z);
        match p.route(q, d, None).unwrap() {
            Route::To(id) => prop_assert!(p.subdomains[id as usize].bounds.contains(q + d * p.route_epsilon) || p.subdomains[id as usize].bounds.contains(q)),
            Route::Background => prop_assert!(!p.root.contains(q + d * p.route_epsilon)),
        }
    }
}
