//! File formats.
//!
//! * Images: 8/16-bit grayscale PNG or PGM, scaled to `[0, 1]` by the
//!   largest code value, or raw little-endian `f64` (row-major) with a text
//!   sidecar `<file>.dims` holding `width W` and `height H`. Raw values are
//!   taken verbatim.
//! * Sinograms: raw little-endian `f64`, one detector row per angle, with a
//!   text sidecar `<file>.sino` holding `bins B` and `angles a0 a1 ...` in
//!   degrees.
//! * Priors: `EPRI`, version, width, height and component count as `u32`
//!   little-endian, then the eigenvalues, the mean image and each
//!   eigenvector as little-endian `f64`.
//! * Dictionaries: the `PDCT` layout of [`PatchDictionary::to_bytes`].

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageReader, Luma};
use tomoprior::{AngleSet, EigenPrior, Image, PatchDictionary, Sinogram};

use crate::error::{invalid, HarnessError, Result};

const PRIOR_MAGIC: &[u8; 4] = b"EPRI";
const PRIOR_VERSION: u32 = 1;

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

/// `<path>.<ext>` without dropping the existing extension.
pub fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn bytes_to_f64s(path: &Path, bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(io_err(path, "length is not a multiple of 8 bytes"));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Looks up `key value...` lines of a sidecar.
fn sidecar_field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| {
        let l = l.trim();
        let rest = l.strip_prefix(key)?;
        rest.starts_with(char::is_whitespace).then(|| rest.trim())
    })
}

fn parse_field<T: std::str::FromStr>(path: &Path, text: &str, key: &str) -> Result<T> {
    sidecar_field(text, key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| io_err(path, format!("missing or malformed '{key}'")))
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

pub fn is_image_file(path: &Path) -> bool {
    matches!(extension(path).as_str(), "png" | "pgm" | "pnm" | "f64")
}

pub fn load_image(path: &Path) -> Result<Image> {
    match extension(path).as_str() {
        "f64" => load_raw_image(path),
        "png" | "pgm" | "pnm" => {
            let img = ImageReader::open(path)
                .map_err(|e| io_err(path, e))?
                .with_guessed_format()
                .map_err(|e| io_err(path, e))?
                .decode()
                .map_err(|e| io_err(path, e))?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            let data: Vec<f64> = match img {
                DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
                DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
                _ => return Err(io_err(path, "only 8/16-bit grayscale images are supported")),
            };
            Ok(Image::new(w, h, data)?)
        }
        other => invalid(format!("unsupported image format '{other}' for {}", path.display())),
    }
}

fn load_raw_image(path: &Path) -> Result<Image> {
    let dims = sidecar(path, "dims");
    let text = read_text(&dims)?;
    let w: usize = parse_field(&dims, &text, "width")?;
    let h: usize = parse_field(&dims, &text, "height")?;
    let data = bytes_to_f64s(path, &read(path)?)?;
    if data.len() != w * h {
        return Err(io_err(path, format!("{} values for a {w}x{h} image", data.len())));
    }
    Ok(Image::new(w, h, data)?)
}

pub fn save_raw_image(path: &Path, x: &Image) -> Result<()> {
    write_atomic(&sidecar(path, "dims"), format!("width {}\nheight {}\n", x.width(), x.height()).as_bytes())?;
    write_atomic(path, &f64s_to_bytes(x.data()))
}

/// 16-bit grayscale PNG of `x` clamped to `[0, 1]`.
pub fn save_png(path: &Path, x: &Image) -> Result<()> {
    let px: Vec<u16> = x.data().iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(x.width() as u32, x.height() as u32, px).expect("buffer matches dimensions");
    let mut bytes = Vec::new();
    DynamicImage::ImageLuma16(buf)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| io_err(path, e))?;
    write_atomic(path, &bytes)
}

/// Image files of a directory in file-name order; sidecars are skipped.
pub fn load_templates(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| io_err(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(io_err(dir, "no template images"));
    }
    paths.iter().map(|p| load_image(p)).collect()
}

pub fn save_sinogram(path: &Path, s: &Sinogram) -> Result<()> {
    let angles: Vec<String> = s.angles().degrees().iter().map(|a| a.to_string()).collect();
    let text = format!("bins {}\nangles {}\n", s.bins(), angles.join(" "));
    write_atomic(&sidecar(path, "sino"), text.as_bytes())?;
    write_atomic(path, &f64s_to_bytes(s.data()))
}

pub fn load_sinogram(path: &Path) -> Result<Sinogram> {
    let side = sidecar(path, "sino");
    let text = read_text(&side)?;
    let bins: usize = parse_field(&side, &text, "bins")?;
    let angles = sidecar_field(&text, "angles")
        .ok_or_else(|| io_err(&side, "missing 'angles'"))?
        .split_whitespace()
        .map(|a| a.parse::<f64>().map_err(|_| io_err(&side, format!("bad angle '{a}'"))))
        .collect::<Result<Vec<_>>>()?;
    let data = bytes_to_f64s(path, &read(path)?)?;
    Ok(Sinogram::new(AngleSet::explicit(angles)?, bins, data)?)
}

pub fn prior_to_bytes(prior: &EigenPrior) -> Vec<u8> {
    let (w, h) = prior.dims();
    let k = prior.component_count();
    let mut out = PRIOR_MAGIC.to_vec();
    for v in [PRIOR_VERSION, w as u32, h as u32, k as u32] {
        out.extend(v.to_le_bytes());
    }
    out.extend(f64s_to_bytes(prior.eigenvalues()));
    out.extend(f64s_to_bytes(prior.mean().data()));
    for i in 0..k {
        out.extend(f64s_to_bytes(prior.eigenvector(i)));
    }
    out
}

pub fn prior_from_bytes(bytes: &[u8]) -> Result<EigenPrior> {
    let bad = |m: &str| HarnessError::Io(format!("prior file: {m}"));
    if bytes.len() < 20 || &bytes[..4] != PRIOR_MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != PRIOR_VERSION as usize {
        return Err(bad("unsupported version"));
    }
    let (w, h, k) = (word(1), word(2), word(3));
    let n = w.checked_mul(h).ok_or_else(|| bad("dimensions overflow"))?;
    let expected = k.checked_add(n * (k + 1)).and_then(|c| c.checked_mul(8)).ok_or_else(|| bad("size overflow"))?;
    let body = &bytes[20..];
    if body.len() != expected {
        return Err(bad("truncated or oversized"));
    }
    let values = bytes_to_f64s(Path::new("prior"), body)?;
    let eigenvalues = values[..k].to_vec();
    let mean = Image::new(w, h, values[k..k + n].to_vec())?;
    let vectors = values[k + n..].chunks_exact(n.max(1)).take(k).map(<[f64]>::to_vec).collect();
    Ok(EigenPrior::from_parts(mean, vectors, eigenvalues)?)
}

pub fn save_prior(path: &Path, prior: &EigenPrior) -> Result<()> {
    write_atomic(path, &prior_to_bytes(prior))
}

pub fn load_prior(path: &Path) -> Result<EigenPrior> {
    prior_from_bytes(&read(path)?)
}

pub fn save_dictionary(path: &Path, dict: &PatchDictionary) -> Result<()> {
    write_atomic(path, &dict.to_bytes())
}

pub fn load_dictionary(path: &Path) -> Result<PatchDictionary> {
    Ok(PatchDictionary::from_bytes(&read(path)?)?)
}
