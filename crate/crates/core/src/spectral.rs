//! The 81-band spectral value type, its wavelength grid, colorimetric output
//! and the decomposition of the band array into contiguous groups.

use alloc::vec::Vec;
use core::ops::{Add, AddAssign, Index, IndexMut, Mul, Range};

use crate::error::{Error, Result};

/// Number of spectral samples: 380 nm to 780 nm every 5 nm.
pub const BANDS: usize = 81;
pub const LAMBDA_MIN_NM: f64 = 380.0;
pub const LAMBDA_MAX_NM: f64 = 780.0;
pub const LAMBDA_STEP_NM: f64 = 5.0;

/// Wavelength in nanometres of band `j`.
#[inline]
pub fn wavelength_nm(j: usize) -> f64 {
    LAMBDA_MIN_NM + LAMBDA_STEP_NM * j as f64
}

/// A radiometric quantity sampled on the fixed 81-point grid.
///
/// The unit depends on the role: radiance, intensity, irradiance and power
/// spectra use their physical units per nanometre, reflectance and
/// transmittance are dimensionless.
#[derive(Clone, Copy, PartialEq)]
pub struct SpectralDistribution(pub [f64; BANDS]);

impl core::fmt::Debug for SpectralDistribution {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl Default for SpectralDistribution {
    fn default() -> Self {
        Self::zero()
    }
}

impl SpectralDistribution {
    #[inline]
    pub const fn zero() -> Self {
        SpectralDistribution([0.0; BANDS])
    }

    #[inline]
    pub const fn constant(v: f64) -> Self {
        SpectralDistribution([v; BANDS])
    }

    pub fn from_fn(mut f: impl FnMut(usize) -> f64) -> Self {
        let mut out = [0.0; BANDS];
        for (j, v) in out.iter_mut().enumerate() {
            *v = f(j);
        }
        SpectralDistribution(out)
    }

    #[inline]
    pub fn values(&self) -> &[f64; BANDS] {
        &self.0
    }

    pub fn max_value(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest value inside `bands`.
    pub fn max_in(&self, bands: Bands) -> f64 {
        self.0[bands.range()].iter().copied().fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn is_non_negative(&self) -> bool {
        self.0.iter().all(|&v| v >= 0.0)
    }

    /// Valid reflectance / transmittance: every band in `[0, 1]`.
    pub fn is_unit_interval(&self) -> bool {
        self.0.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_fn(|j| self.0[j] * s)
    }

    /// Copy of `self` with every band outside `bands` set to zero.
    pub fn restricted(&self, bands: Bands) -> Self {
        let mut out = Self::zero();
        out.0[bands.range()].copy_from_slice(&self.0[bands.range()]);
        out
    }

    /// `self += other` on `bands` only.
    #[inline]
    pub fn add_assign_in(&mut self, other: &Self, bands: Bands) {
        for j in bands.range() {
            self.0[j] += other.0[j];
        }
    }
}

impl Index<usize> for SpectralDistribution {
    type Output = f64;
    #[inline]
    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

impl IndexMut<usize> for SpectralDistribution {
    #[inline]
    fn index_mut(&mut self, j: usize) -> &mut f64 {
        &mut self.0[j]
    }
}

impl Add for SpectralDistribution {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::from_fn(|j| self.0[j] + o.0[j])
    }
}

impl AddAssign for SpectralDistribution {
    fn add_assign(&mut self, o: Self) {
        for j in 0..BANDS {
            self.0[j] += o.0[j];
        }
    }
}

impl Mul for SpectralDistribution {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::from_fn(|j| self.0[j] * o.0[j])
    }
}

impl Mul<f64> for SpectralDistribution {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        self.scaled(s)
    }
}

/// A half-open run of band indices that a computation is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bands {
    pub start: usize,
    pub end: usize,
}

impl Bands {
    pub const ALL: Bands = Bands { start: 0, end: BANDS };

    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end || end > BANDS {
            return Err(Error::InvalidArgument(alloc::format!("band range [{start}, {end}) is not within [0, {BANDS})")));
        }
        Ok(Bands { start, end })
    }

    #[inline]
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Linear interpolation of tabulated `(wavelength_nm, value)` samples onto
/// the 81-point grid, clamping to the end values outside the table.
pub fn resample_tabulated(samples: &[(f64, f64)]) -> Result<SpectralDistribution> {
    if samples.len() < 2 {
        return Err(Error::InvalidData(alloc::format!(
            "need at least 2 tabulated samples, got {}",
            samples.len()
        )));
    }
    for (i, &(w, v)) in samples.iter().enumerate() {
        if !w.is_finite() || !v.is_finite() {
            return Err(Error::InvalidData(alloc::format!("non-finite sample at row {i}")));
        }
        if i > 0 && w <= samples[i - 1].0 {
            return Err(Error::InvalidData(alloc::format!(
                "wavelengths must be strictly increasing (row {i}: {w} after {})",
                samples[i - 1].0
            )));
        }
    }
    let first = samples[0];
    let last = samples[samples.len() - 1];
    let mut seg = 0;
    Ok(SpectralDistribution::from_fn(|j| {
        let w = wavelength_nm(j);
        if w <= first.0 {
            return first.1;
        }
        if w >= last.0 {
            return last.1;
        }
        while samples[seg + 1].0 < w {
            seg += 1;
        }
        let (w0, v0) = samples[seg];
        let (w1, v1) = samples[seg + 1];
        if w == w1 {
            return v1;
        }
        let f = (w - w0) / (w1 - w0);
        v0 + f * (v1 - v0)
    }))
}

/// CIE 1931 2° colour matching functions on the 81-point grid.
pub static CIE_1931_XYZ: [[f64; 3]; BANDS] = [
    [0.001368, 0.000039, 0.006450001], // 380
    [0.002236, 0.000064, 0.01054999], // 385
    [0.004243, 0.00012, 0.02005001], // 390
    [0.00765, 0.000217, 0.03621], // 395
    [0.01431, 0.000396, 0.06785001], // 400
    [0.02319, 0.00064, 0.1102], // 405
    [0.04351, 0.00121, 0.2074], // 410
    [0.07763, 0.00218, 0.3713], // 415
    [0.13438, 0.004, 0.6456], // 420
    [0.21477, 0.0073, 1.0390501], // 425
    [0.2839, 0.0116, 1.3856], // 430
    [0.3285, 0.01684, 1.62296], // 435
    [0.34828, 0.023, 1.74706], // 440
    [0.34806, 0.0298, 1.7826], // 445
    [0.3362, 0.038, 1.77211], // 450
    [0.3187, 0.048, 1.7441], // 455
    [0.2908, 0.06, 1.6692], // 460
    [0.2511, 0.0739, 1.5281], // 465
    [0.19536, 0.09098, 1.28764], // 470
    [0.1421, 0.1126, 1.0419], // 475
    [0.09564, 0.13902, 0.8129501], // 480
    [0.05795001, 0.1693, 0.6162], // 485
    [0.03201, 0.20802, 0.46518], // 490
    [0.0147, 0.2586, 0.3533], // 495
    [0.0049, 0.323, 0.272], // 500
    [0.0024, 0.4073, 0.2123], // 505
    [0.0093, 0.503, 0.1582], // 510
    [0.0291, 0.6082, 0.1117], // 515
    [0.06327, 0.71, 0.07824999], // 520
    [0.1096, 0.7932, 0.05725001], // 525
    [0.1655, 0.862, 0.04216], // 530
    [0.2257499, 0.9148501, 0.02984], // 535
    [0.2904, 0.954, 0.0203], // 540
    [0.3597, 0.9803, 0.0134], // 545
    [0.4334499, 0.9949501, 0.008749999], // 550
    [0.5120501, 1.0, 0.005749999], // 555
    [0.5945, 0.995, 0.0039], // 560
    [0.6784, 0.9786, 0.002749999], // 565
    [0.7621, 0.952, 0.0021], // 570
    [0.8425, 0.9154, 0.0018], // 575
    [0.9163, 0.87, 0.001650001], // 580
    [0.9786, 0.8163, 0.0014], // 585
    [1.0263, 0.757, 0.0011], // 590
    [1.0567, 0.6949, 0.001], // 595
    [1.0622, 0.631, 0.0008], // 600
    [1.0456, 0.5668, 0.0006], // 605
    [1.0026, 0.503, 0.00034], // 610
    [0.9384, 0.4412, 0.00024], // 615
    [0.8544499, 0.381, 0.00019], // 620
    [0.7514, 0.321, 0.0001], // 625
    [0.6424, 0.265, 0.00005], // 630
    [0.5419, 0.217, 0.00003], // 635
    [0.4479, 0.175, 0.00002], // 640
    [0.3608, 0.1382, 0.00001], // 645
    [0.2835, 0.107, 0.0], // 650
    [0.2187, 0.0816, 0.0], // 655
    [0.1649, 0.061, 0.0], // 660
    [0.1212, 0.04458, 0.0], // 665
    [0.0874, 0.032, 0.0], // 670
    [0.0636, 0.0232, 0.0], // 675
    [0.04677, 0.017, 0.0], // 680
    [0.0329, 0.01192, 0.0], // 685
    [0.0227, 0.00821, 0.0], // 690
    [0.01584, 0.005723, 0.0], // 695
    [0.01135916, 0.004102, 0.0], // 700
    [0.008110916, 0.002929, 0.0], // 705
    [0.005790346, 0.002091, 0.0], // 710
    [0.004109457, 0.001484, 0.0], // 715
    [0.002899327, 0.001047, 0.0], // 720
    [0.00204919, 0.00074, 0.0], // 725
    [0.001439971, 0.00052, 0.0], // 730
    [0.0009999493, 0.0003611, 0.0], // 735
    [0.0006900786, 0.0002492, 0.0], // 740
    [0.0004760213, 0.0001719, 0.0], // 745
    [0.0003323011, 0.00012, 0.0], // 750
    [0.0002348261, 0.0000848, 0.0], // 755
    [0.0001661505, 0.00006, 0.0], // 760
    [0.000117413, 0.0000424, 0.0], // 765
    [0.0000830753, 0.00003, 0.0], // 770
    [0.0000587065, 0.0000212, 0.0], // 775
    [0.0000415099, 0.00001499, 0.0], // 780
];

/// Standard linear sRGB (D65) matrix from CIE XYZ.
pub const XYZ_TO_LINEAR_SRGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

/// Tristimulus values, normalised so that the all-ones spectrum has `Y = 1`.
pub fn spectrum_to_xyz(sd: &SpectralDistribution) -> [f64; 3] {
    let mut xyz = [0.0; 3];
    let mut y_norm = 0.0;
    for (j, cmf) in CIE_1931_XYZ.iter().enumerate() {
        let v = sd.0[j] * LAMBDA_STEP_NM;
        xyz[0] += v * cmf[0];
        xyz[1] += v * cmf[1];
        xyz[2] += v * cmf[2];
        y_norm += cmf[1] * LAMBDA_STEP_NM;
    }
    let k = 1.0 / y_norm;
    [xyz[0] * k, xyz[1] * k, xyz[2] * k]
}

fn apply_matrix(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Linear sRGB of the equal-energy (all-ones) spectrum under the plain D65 matrix.
fn equal_energy_rgb() -> [f64; 3] {
    apply_matrix(&XYZ_TO_LINEAR_SRGB, spectrum_to_xyz(&SpectralDistribution::constant(1.0)))
}

/// Linear sRGB with white calibration: the standard matrix followed by a
/// per-channel gain that maps the equal-energy spectrum to `(1, 1, 1)`.
/// No clamping, no transfer function.
pub fn xyz_to_linear_srgb(xyz: [f64; 3]) -> [f64; 3] {
    let rgb = apply_matrix(&XYZ_TO_LINEAR_SRGB, xyz);
    let white = equal_energy_rgb();
    [rgb[0] / white[0], rgb[1] / white[1], rgb[2] / white[2]]
}

/// sRGB opto-electronic transfer function on a value in `[0, 1]`.
pub fn srgb_encode(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * crate::math::powf(c, 1.0 / 2.4) - 0.055
    }
}

/// 8-bit sRGB: calibrated matrix, clamp to `[0, 1]`, transfer function,
/// round-half-up quantisation.
pub fn xyz_to_srgb8(xyz: [f64; 3]) -> [u8; 3] {
    let rgb = xyz_to_linear_srgb(xyz);
    let q = |c: f64| {
        let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
        crate::math::floor(srgb_encode(c) * 255.0 + 0.5) as u8
    };
    [q(rgb[0]), q(rgb[1]), q(rgb[2])]
}

/// One contiguous run of bands in a grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpectralGroup {
    pub group_index: usize,
    pub bands: Bands,
}

/// Cut the band array into `ceil(81 / group_size)` contiguous groups.
pub fn split_groups(group_size: usize) -> Result<Vec<SpectralGroup>> {
    if group_size == 0 || group_size > BANDS {
        return Err(Error::InvalidArgument(alloc::format!(
            "spectral group size must be in 1..={BANDS}, got {group_size}"
        )));
    }
    Ok((0..BANDS)
        .step_by(group_size)
        .enumerate()
        .map(|(group_index, start)| SpectralGroup {
            group_index,
            bands: Bands { start, end: (start + group_size).min(BANDS) },
        })
        .collect())
}

/// Values of `sd` on each group, in group order.
pub fn split_values(sd: &SpectralDistribution, groups: &[SpectralGroup]) -> Vec<(SpectralGroup, Vec<f64>)> {
    groups.iter().map(|g| (*g, sd.0[g.bands.range()].to_vec())).collect()
}

/// Reassemble a full distribution from per-group partial values.
pub fn merge_groups(partials: &[(SpectralGroup, &[f64])]) -> Result<SpectralDistribution> {
    let mut out = SpectralDistribution::zero();
    let mut covered = [false; BANDS];
    for (group, values) in partials {
        let b = group.bands;
        if b.start >= b.end || b.end > BANDS {
            return Err(Error::InconsistentGrouping(alloc::format!("group {} has invalid range", group.group_index)));
        }
        if values.len() != b.len() {
            return Err(Error::InconsistentGrouping(alloc::format!(
                "group {} supplies {} values for {} bands",
                group.group_index,
                values.len(),
                b.len()
            )));
        }
        for (offset, j) in b.range().enumerate() {
            if covered[j] {
                return Err(Error::InconsistentGrouping(alloc::format!("band {j} covered twice")));
            }
            covered[j] = true;
            out.0[j] = values[offset];
        }
    }
    if let Some(j) = covered.iter().position(|c| !c) {
        return Err(Error::InconsistentGrouping(alloc::format!("band {j} not covered by any group")));
    }
    Ok(out)
}
