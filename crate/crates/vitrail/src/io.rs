//! File formats: tabulated spectra, OBJ meshes, PNG distribution maps and
//! image output (PFM, PNG, raw spectral dump).

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::DynamicImage;
use vitrail_core::geometry::TriangleMesh;
use vitrail_core::render_global::{Photon, PhotonMaps};
use vitrail_core::render_local::Framebuffer;
use vitrail_core::spectral::{resample_tabulated, spectrum_to_xyz, xyz_to_linear_srgb, xyz_to_srgb8, BANDS};
use vitrail_core::{SpectralDistribution, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("dangling reference: `{0}` is not declared")]
    Dangling(String),
    #[error("invariant violation in `{field}`: {reason}")]
    Invariant { field: String, reason: String },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] vitrail_core::Error),
}

impl LoadError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LoadError::Io { path: path.into(), source }
    }
}

fn read_text(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|e| LoadError::io(path, e))
}

/// Parses `wavelength value` lines; `#` starts a comment.
pub fn parse_tabulated(text: &str, path: &Path) -> Result<Vec<(f64, f64)>, LoadError> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let err = |column: usize, message: &str| LoadError::Parse {
            path: path.into(),
            line: i + 1,
            column,
            message: message.into(),
        };
        let col = |s: &str| s.as_ptr() as usize - raw.as_ptr() as usize + 1;
        let mut fields = line.split_whitespace();
        let (Some(w), Some(v)) = (fields.next(), fields.next()) else {
            return Err(err(1, "expected `wavelength value`"));
        };
        if let Some(extra) = fields.next() {
            return Err(err(col(extra), "unexpected trailing field"));
        }
        let w: f64 = w.parse().map_err(|_| err(col(w), "wavelength is not a number"))?;
        let v: f64 = v.parse().map_err(|_| err(col(v), "value is not a number"))?;
        if out.last().is_some_and(|&(prev, _)| w <= prev) {
            return Err(err(1, "wavelengths must be strictly ascending"));
        }
        out.push((w, v));
    }
    if out.is_empty() {
        return Err(LoadError::Parse { path: path.into(), line: 1, column: 1, message: "no samples".into() });
    }
    Ok(out)
}

/// Loads a tabulated spectral file and resamples it onto the band grid.
pub fn load_spectrum(path: &Path) -> Result<SpectralDistribution, LoadError> {
    let samples = parse_tabulated(&read_text(path)?, path)?;
    Ok(resample_tabulated(&samples)?)
}

/// Loads every object of an OBJ file as one mesh; polygons are fan-triangulated.
pub fn load_obj(path: &Path, name: &str, material: usize) -> Result<TriangleMesh, LoadError> {
    let file = fs::File::open(path).map_err(|e| LoadError::io(path, e))?;
    let opts = tobj::LoadOptions { triangulate: true, single_index: false, ignore_points: true, ignore_lines: true };
    let (models, _) = tobj::load_obj_buf(&mut BufReader::new(file), &opts, |_| Err(tobj::LoadError::OpenFileFailed))
        .map_err(|e| LoadError::Format { path: path.into(), message: format!("OBJ: {e}") })?;
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    let mut face_uvs = Vec::new();
    let mut any_uv = false;
    for m in &models {
        let mesh = &m.mesh;
        let (p0, t0) = (positions.len(), uvs.len());
        positions.extend(mesh.positions.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])));
        uvs.extend(mesh.texcoords.chunks_exact(2).map(|c| (c[0], c[1])));
        for (fi, f) in mesh.indices.chunks_exact(3).enumerate() {
            faces.push([p0 + f[0] as usize, p0 + f[1] as usize, p0 + f[2] as usize]);
            if let Some(t) = mesh.texcoord_indices.get(3 * fi..3 * fi + 3) {
                any_uv = true;
                face_uvs.push([t0 + t[0] as usize, t0 + t[1] as usize, t0 + t[2] as usize]);
            } else {
                face_uvs.push([usize::MAX; 3]);
            }
        }
    }
    if any_uv && face_uvs.iter().any(|f| f[0] == usize::MAX) {
        return Err(LoadError::Format { path: path.into(), message: "OBJ mixes faces with and without texture coordinates".into() });
    }
    if !any_uv {
        face_uvs.clear();
    }
    let (mesh, _dropped) = TriangleMesh::new(name, positions, uvs, faces, face_uvs, material)?;
    Ok(mesh)
}

/// Raw grey levels of an 8- or 16-bit greyscale PNG, row 0 first.
pub fn load_gray_png(path: &Path) -> Result<(usize, usize, Vec<u16>), LoadError> {
    let img = image::open(path).map_err(|e| LoadError::Format { path: path.into(), message: e.to_string() })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(u16::from).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw(),
        _ => return Err(LoadError::Format { path: path.into(), message: "distribution maps must be greyscale".into() }),
    };
    Ok((w, h, values))
}

/// Linear sRGB of every pixel, row 0 (top) first.
pub fn to_linear_rgb(fb: &Framebuffer) -> Vec<[f64; 3]> {
    fb.pixels.iter().map(|sd| xyz_to_linear_srgb(spectrum_to_xyz(sd))).collect()
}

fn create(path: &Path) -> std::io::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Portable float map, little-endian, bottom row first as the format requires.
pub fn encode_pfm(fb: &Framebuffer) -> Vec<u8> {
    let rgb = to_linear_rgb(fb);
    let (w, h) = (fb.width as usize, fb.height as usize);
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for px in &rgb[y * w..(y + 1) * w] {
            for c in px {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn write_pfm(fb: &Framebuffer, path: &Path) -> std::io::Result<()> {
    fs::write(path, encode_pfm(fb))
}

/// Reads a little-endian RGB PFM back; rows are returned top first.
pub fn read_pfm(bytes: &[u8]) -> Option<(usize, usize, Vec<[f32; 3]>)> {
    let mut lines = 0;
    let mut header_end = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            lines += 1;
            if lines == 3 {
                header_end = i + 1;
                break;
            }
        }
    }
    let header = std::str::from_utf8(&bytes[..header_end]).ok()?;
    let mut it = header.split_whitespace();
    if it.next()? != "PF" {
        return None;
    }
    let w: usize = it.next()?.parse().ok()?;
    let h: usize = it.next()?.parse().ok()?;
    let scale: f64 = it.next()?.parse().ok()?;
    if scale >= 0.0 {
        return None;
    }
    let body = &bytes[header_end..];
    if body.len() != w * h * 12 {
        return None;
    }
    let mut rows = vec![[0f32; 3]; w * h];
    for (i, c) in body.chunks_exact(12).enumerate() {
        let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap());
        let (x, y) = (i % w, h - 1 - i / w);
        rows[y * w + x] = [f(0), f(1), f(2)];
    }
    Some((w, h, rows))
}

/// 8-bit sRGB PNG.
pub fn write_png(fb: &Framebuffer, path: &Path) -> Result<(), image::ImageError> {
    let data: Vec<u8> = fb.pixels.iter().flat_map(|sd| xyz_to_srgb8(spectrum_to_xyz(sd))).collect();
    image::save_buffer(path, &data, fb.width, fb.height, image::ExtendedColorType::Rgb8)
}

/// Header `width height 81` as u32, then row-major f32 bands.
pub fn write_spectral_raw(fb: &Framebuffer, path: &Path) -> std::io::Result<()> {
    let mut w = create(path)?;
    for v in [fb.width, fb.height, BANDS as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for sd in &fb.pixels {
        for v in sd.values() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

/// Header `count emitted` as u64, then one record per photon (global map
/// first, then caustic): position and incident direction as 6×f64, 81×f64
/// power, flags u8 (1 specular, 2 diffuse), path u64, depth u16.
pub fn encode_photons(maps: &PhotonMaps) -> Vec<u8> {
    let all: Vec<&Photon> = maps.global.photons().iter().chain(maps.caustic.photons()).collect();
    let mut out = Vec::with_capacity(16 + all.len() * (48 + 8 * BANDS + 11));
    out.extend((all.len() as u64).to_le_bytes());
    out.extend(maps.emitted.to_le_bytes());
    for p in all {
        for v in p.position.to_array().into_iter().chain(p.incident_direction.to_array()).chain(p.power.values().iter().copied()) {
            out.extend(v.to_le_bytes());
        }
        out.push(p.has_specular_bounce as u8 | (p.has_diffuse_bounce as u8) << 1);
        out.extend(p.path.to_le_bytes());
        out.extend(p.depth.to_le_bytes());
    }
    out
}

pub fn write_photon_dump(maps: &PhotonMaps, path: &Path) -> std::io::Result<()> {
    fs::write(path, encode_photons(maps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabulated_comments_and_errors() {
        let p = Path::new("t.txt");
        let s = parse_tabulated("# n of glass\n380 1.5\n\n780 1.6 # red end\n", p).unwrap();
        assert_eq!(s, vec![(380.0, 1.5), (780.0, 1.6)]);
        match parse_tabulated("400 1\n390 2\n", p) {
            Err(LoadError::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_tabulated("400 x\n", p) {
            Err(LoadError::Parse { line: 1, column: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pfm_round_trip_keeps_orientation() {
        let mut fb = Framebuffer::new(2, 2);
        fb.pixels[1] = SpectralDistribution::constant(1.0);
        let bytes = encode_pfm(&fb);
        let (w, h, px) = read_pfm(&bytes).unwrap();
        assert_eq!((w, h), (2, 2));
        // equal-energy white maps to (1, 1, 1)
        for c in px[1] {
            assert!((c - 1.0).abs() < 1e-6);
        }
        assert_eq!(px[0], [0.0; 3]);
        assert_eq!(px[2], [0.0; 3]);
    }
}
