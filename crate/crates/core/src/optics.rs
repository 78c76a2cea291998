//! Intrinsic material model: complex index of refraction, dielectric
//! Fresnel terms, Snell refraction, Beer-Lambert volume absorption and
//! per-texel distribution maps of material identity and glass thickness.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Vec3, PI};
use crate::spectral::{wavelength_nm, Bands, SpectralDistribution, BANDS};

/// Tolerance on unit-length inputs to the direction functions.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Band whose optical index decides refracted ray directions (580 nm).
/// All bands follow one geometric path; Fresnel weights stay per band.
pub const REPRESENTATIVE_BAND: usize = 40;

/// Wavelength-resolved optical constants `ñ = n + ik = n(1 + iκ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexIOR {
    pub n: SpectralDistribution,
    pub k: SpectralDistribution,
}

impl ComplexIOR {
    pub fn new(n: SpectralDistribution, k: SpectralDistribution) -> Result<Self> {
        if let Some(j) = (0..BANDS).find(|&j| !(n[j] > 0.0 && n[j].is_finite())) {
            return Err(Error::InvariantViolation {
                field: "n".into(),
                reason: alloc::format!("optical index must be > 0 and finite (band {j} = {})", n[j]),
            });
        }
        if let Some(j) = (0..BANDS).find(|&j| !(k[j] >= 0.0 && k[j].is_finite())) {
            return Err(Error::InvariantViolation {
                field: "k".into(),
                reason: alloc::format!("absorption index must be >= 0 and finite (band {j} = {})", k[j]),
            });
        }
        Ok(ComplexIOR { n, k })
    }

    /// Non-absorbing constant index.
    pub fn dielectric(n: f64) -> Self {
        ComplexIOR { n: SpectralDistribution::constant(n), k: SpectralDistribution::zero() }
    }

    /// Vacuum / air.
    pub fn vacuum() -> Self {
        Self::dielectric(1.0)
    }

    /// Extinction ratio `κ = k / n`.
    pub fn kappa(&self) -> SpectralDistribution {
        SpectralDistribution::from_fn(|j| self.k[j] / self.n[j])
    }
}

/// Reflected and transmitted fractions at an interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FresnelTerms {
    pub reflectance: SpectralDistribution,
    pub transmittance: SpectralDistribution,
}

/// Unpolarised reflectance of one band. `cos_i` in `(0, 1]`.
#[inline]
pub fn fresnel_reflectance(cos_i: f64, n_i: f64, n_t: f64) -> f64 {
    let sin2_i = (1.0 - cos_i * cos_i).max(0.0);
    let eta = n_i / n_t;
    let sin2_t = eta * eta * sin2_i;
    if sin2_t >= 1.0 {
        return 1.0;
    }
    let cos_t = math::sqrt(1.0 - sin2_t);
    let r_s = (n_i * cos_i - n_t * cos_t) / (n_i * cos_i + n_t * cos_t);
    let r_p = (n_t * cos_i - n_i * cos_t) / (n_t * cos_i + n_i * cos_t);
    0.5 * (r_s * r_s + r_p * r_p)
}

fn check_cos(cos_theta_i: f64) -> Result<f64> {
    if !(cos_theta_i > 0.0) {
        return Err(Error::InvalidGeometry(alloc::format!(
            "cos(theta_i) must be in (0, 1], got {cos_theta_i}; orient the normal towards the incident side"
        )));
    }
    Ok(cos_theta_i.min(1.0))
}

/// Dielectric Fresnel terms per band, `R = (r_s² + r_p²)/2`, `T = 1 − R`.
/// Absorption is ignored at the interface.
pub fn fresnel_dielectric(
    cos_theta_i: f64,
    n_i: &SpectralDistribution,
    n_t: &SpectralDistribution,
) -> Result<FresnelTerms> {
    fresnel_dielectric_in(cos_theta_i, n_i, n_t, Bands::ALL)
}

/// [`fresnel_dielectric`] evaluated on `bands` only; other bands are zero.
pub fn fresnel_dielectric_in(
    cos_theta_i: f64,
    n_i: &SpectralDistribution,
    n_t: &SpectralDistribution,
    bands: Bands,
) -> Result<FresnelTerms> {
    let cos_i = check_cos(cos_theta_i)?;
    let mut reflectance = SpectralDistribution::zero();
    let mut transmittance = SpectralDistribution::zero();
    for j in bands.range() {
        let r = fresnel_reflectance(cos_i, n_i[j], n_t[j]);
        reflectance[j] = r;
        transmittance[j] = 1.0 - r;
    }
    Ok(FresnelTerms { reflectance, transmittance })
}

/// Result of [`refract_direction`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Refraction {
    Refracted(Vec3),
    TotalInternalReflection,
}

fn check_unit(v: Vec3, what: &str) -> Result<()> {
    if !v.is_finite() || !v.is_unit(UNIT_TOLERANCE) {
        return Err(Error::InvalidArgument(alloc::format!("{what} must be unit length (|v| = {})", v.length())));
    }
    Ok(())
}

/// Snell refraction of `incident` through a surface with `normal` facing the
/// incident side, `eta_ratio = n_i / n_t`.
pub fn refract_direction(incident: Vec3, normal: Vec3, eta_ratio: f64) -> Result<Refraction> {
    check_unit(incident, "incident direction")?;
    check_unit(normal, "normal")?;
    let cos_i = -incident.dot(normal);
    if cos_i < 0.0 {
        return Err(Error::InvalidArgument("incident direction must point towards the surface".into()));
    }
    Ok(refract_unchecked(incident, normal, cos_i, eta_ratio))
}

#[inline]
pub(crate) fn refract_unchecked(incident: Vec3, normal: Vec3, cos_i: f64, eta: f64) -> Refraction {
    let sin2_t = eta * eta * (1.0 - cos_i * cos_i).max(0.0);
    if sin2_t > 1.0 {
        return Refraction::TotalInternalReflection;
    }
    let cos_t = math::sqrt(1.0 - sin2_t);
    Refraction::Refracted((incident * eta + normal * (eta * cos_i - cos_t)).normalized())
}

/// Mirror reflection `r = d − 2(d·n)n`.
pub fn reflect_direction(incident: Vec3, normal: Vec3) -> Result<Vec3> {
    check_unit(incident, "incident direction")?;
    check_unit(normal, "normal")?;
    Ok(reflect_unchecked(incident, normal))
}

#[inline]
pub(crate) fn reflect_unchecked(incident: Vec3, normal: Vec3) -> Vec3 {
    incident - normal * (2.0 * incident.dot(normal))
}

/// Beer-Lambert transmittance over `path_length` metres:
/// `t_j = exp(−4π k_j d / λ_j)`.
pub fn volume_transmittance(ior: &ComplexIOR, path_length: f64) -> Result<SpectralDistribution> {
    volume_transmittance_in(ior, path_length, Bands::ALL)
}

pub fn volume_transmittance_in(ior: &ComplexIOR, path_length: f64, bands: Bands) -> Result<SpectralDistribution> {
    if !(path_length >= 0.0) || !path_length.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!(
            "path length must be finite and >= 0, got {path_length}"
        )));
    }
    let mut t = SpectralDistribution::zero();
    for j in bands.range() {
        let lambda_m = wavelength_nm(j) * 1e-9;
        t[j] = math::exp(-4.0 * PI * ior.k[j] * path_length / lambda_m);
    }
    Ok(t)
}

/// Per-texel record of a distribution map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texel {
    /// Index into the owning material's palette.
    pub material_index: u32,
    /// Glass thickness in metres.
    pub thickness: f64,
}

/// A raster mapping surface `uv` to a material index and a thickness.
///
/// Row 0 is `v = 0`; addressing clamps to the edge texels.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionMap {
    width: usize,
    height: usize,
    texels: Vec<Texel>,
}

impl DistributionMap {
    pub fn new(width: usize, height: usize, texels: Vec<Texel>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("distribution map must have positive size".into()));
        }
        if texels.len() != width * height {
            return Err(Error::InvalidArgument(alloc::format!(
                "distribution map {width}x{height} needs {} texels, got {}",
                width * height,
                texels.len()
            )));
        }
        if let Some(t) = texels.iter().find(|t| !(t.thickness >= 0.0 && t.thickness.is_finite())) {
            return Err(Error::InvariantViolation {
                field: "thickness".into(),
                reason: alloc::format!("thickness must be finite and >= 0, got {}", t.thickness),
            });
        }
        Ok(DistributionMap { width, height, texels })
    }

    pub fn uniform(texel: Texel) -> Self {
        DistributionMap { width: 1, height: 1, texels: alloc::vec![texel] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn texels(&self) -> &[Texel] {
        &self.texels
    }

    pub fn texel(&self, x: usize, y: usize) -> Texel {
        self.texels[y * self.width + x]
    }

    pub fn max_material_index(&self) -> u32 {
        self.texels.iter().map(|t| t.material_index).max().unwrap_or(0)
    }
}

/// Nearest-texel lookup with clamp addressing.
pub fn sample_map(map: &DistributionMap, uv: (f64, f64)) -> Texel {
    let coord = |c: f64, n: usize| -> usize {
        let i = math::floor(c * n as f64);
        if i.is_nan() || i < 0.0 {
            0
        } else {
            (i as usize).min(n - 1)
        }
    };
    map.texel(coord(uv.0, map.width), coord(uv.1, map.height))
}

/// Which scattering lobes a material has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Behavior {
    pub diffuse: bool,
    pub specular_reflect: bool,
    pub specular_transmit: bool,
}

impl Behavior {
    pub const DIFFUSE: Behavior = Behavior { diffuse: true, specular_reflect: false, specular_transmit: false };
    pub const GLASS: Behavior = Behavior { diffuse: false, specular_reflect: true, specular_transmit: true };
    pub const MIRROR: Behavior = Behavior { diffuse: false, specular_reflect: true, specular_transmit: false };

    pub fn any(&self) -> bool {
        self.diffuse || self.specular_reflect || self.specular_transmit
    }

    pub fn is_specular(&self) -> bool {
        self.specular_reflect || self.specular_transmit
    }
}

/// A distribution map together with the palette that resolves its indices
/// to scene material ids.
#[derive(Debug, Clone, PartialEq)]
pub struct MapBinding {
    pub map: DistributionMap,
    pub palette: Vec<usize>,
}

/// Surface material: Lambertian base `ρ` plus Fresnel-weighted specular
/// lobes driven by the optical constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    pub ior: ComplexIOR,
    pub diffuse_reflectance: SpectralDistribution,
    pub behavior: Behavior,
    /// Replaces the Fresnel reflectance of the reflected lobe (ideal mirrors).
    pub mirror_reflectance: Option<SpectralDistribution>,
    /// Thin-tile mode: a single surface stands for a slab of `thickness`.
    pub thin: bool,
    /// Slab thickness in metres for thin tiles without a thickness map.
    pub thickness: f64,
    pub map: Option<MapBinding>,
}

impl Material {
    pub fn diffuse(name: &str, rho: SpectralDistribution) -> Self {
        Material {
            name: name.into(),
            ior: ComplexIOR::dielectric(1.5),
            diffuse_reflectance: rho,
            behavior: Behavior::DIFFUSE,
            mirror_reflectance: None,
            thin: false,
            thickness: 0.0,
            map: None,
        }
    }

    pub fn glass(name: &str, ior: ComplexIOR) -> Self {
        Material {
            name: name.into(),
            ior,
            diffuse_reflectance: SpectralDistribution::zero(),
            behavior: Behavior::GLASS,
            mirror_reflectance: None,
            thin: false,
            thickness: 0.0,
            map: None,
        }
    }

    pub fn mirror(name: &str, reflectance: SpectralDistribution) -> Self {
        Material {
            name: name.into(),
            ior: ComplexIOR::dielectric(1.5),
            diffuse_reflectance: SpectralDistribution::zero(),
            behavior: Behavior::MIRROR,
            mirror_reflectance: Some(reflectance),
            thin: false,
            thickness: 0.0,
            map: None,
        }
    }

    pub fn validate(&self, material_count: usize) -> Result<()> {
        let field = |f: &str| alloc::format!("materials.{}.{}", self.name, f);
        if !self.behavior.any() {
            return Err(Error::InvariantViolation {
                field: field("behavior"),
                reason: "at least one behaviour flag must be set".into(),
            });
        }
        if !self.diffuse_reflectance.is_unit_interval() {
            return Err(Error::InvariantViolation {
                field: field("diffuse"),
                reason: "diffuse reflectance must lie in [0, 1] in every band".into(),
            });
        }
        if let Some(m) = &self.mirror_reflectance {
            if !m.is_unit_interval() {
                return Err(Error::InvariantViolation {
                    field: field("mirror"),
                    reason: "mirror reflectance must lie in [0, 1] in every band".into(),
                });
            }
        }
        if !(self.thickness >= 0.0 && self.thickness.is_finite()) {
            return Err(Error::InvariantViolation {
                field: field("thickness"),
                reason: "thickness must be finite and >= 0".into(),
            });
        }
        ComplexIOR::new(self.ior.n, self.ior.k).map_err(|e| match e {
            Error::InvariantViolation { field: f, reason } => Error::InvariantViolation { field: field(&f), reason },
            other => other,
        })?;
        if let Some(binding) = &self.map {
            let max = binding.map.max_material_index() as usize;
            if max >= binding.palette.len() {
                return Err(Error::InvariantViolation {
                    field: field("palette"),
                    reason: alloc::format!(
                        "map uses material index {max} but the palette has {} entries",
                        binding.palette.len()
                    ),
                });
            }
            if let Some(&bad) = binding.palette.iter().find(|&&m| m >= material_count) {
                return Err(Error::InvariantViolation {
                    field: field("palette"),
                    reason: alloc::format!("palette entry {bad} is not a declared material"),
                });
            }
        }
        Ok(())
    }
}
