//! Binary interchange formats.
//!
//! * `HSC1` cubes: magic, `u32` height, width and band count (31), then
//!   `f32` band-major planes, all little-endian.
//! * PFM colour images (`PF`), rows stored bottom to top.
//! * 8-bit PPM previews and PGM label maps.

use anyhow::{bail, ensure, Context, Result};
use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use spectrapipe_core::{LabelMap, RgbImage, SpectralCube, N_BANDS};
use std::io::Cursor;
use std::path::Path;

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";

pub fn encode_cube(cube: &SpectralCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + cube.data().len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    for v in [cube.height(), cube.width(), N_BANDS] {
        out.write_u32::<LittleEndian>(v as u32).unwrap();
    }
    for v in cube.data() {
        out.write_f32::<LittleEndian>(*v as f32).unwrap();
    }
    out
}

pub fn decode_cube(bytes: &[u8]) -> Result<SpectralCube> {
    ensure!(bytes.len() >= 16, "cube header: file is only {} bytes", bytes.len());
    ensure!(&bytes[..4] == CUBE_MAGIC, "cube magic: expected HSC1, found {:?}", &bytes[..4]);
    let mut r = Cursor::new(&bytes[4..16]);
    let height = r.read_u32::<LittleEndian>()? as usize;
    let width = r.read_u32::<LittleEndian>()? as usize;
    let bands = r.read_u32::<LittleEndian>()? as usize;
    ensure!(bands == N_BANDS, "cube bands: expected {N_BANDS}, found {bands}");
    let expected = height * width * N_BANDS * 4;
    let payload = &bytes[16..];
    ensure!(
        payload.len() == expected,
        "cube payload: {height}x{width}x{N_BANDS} needs {expected} bytes, found {}",
        payload.len()
    );
    let mut r = Cursor::new(payload);
    let mut data = Vec::with_capacity(height * width * N_BANDS);
    for _ in 0..height * width * N_BANDS {
        data.push(r.read_f32::<LittleEndian>()? as f64);
    }
    Ok(SpectralCube::new(height, width, data)?)
}

pub fn read_cube(path: &Path) -> Result<SpectralCube> {
    let bytes = std::fs::read(path).with_context(|| format!("reading cube {}", path.display()))?;
    decode_cube(&bytes).with_context(|| format!("in {}", path.display()))
}

pub fn write_cube(path: &Path, cube: &SpectralCube) -> Result<()> {
    std::fs::write(path, encode_cube(cube)).with_context(|| format!("writing {}", path.display()))
}

/// Splits a netpbm-style header into `count` whitespace-separated tokens
/// (skipping `#` comments) and returns them with the payload offset.
fn header_tokens(bytes: &[u8], count: usize, what: &str) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            bail!("{what} header: truncated after {} fields", tokens.len());
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the payload
    ensure!(i < bytes.len(), "{what} header: missing payload");
    Ok((tokens, i + 1))
}

fn dimension(token: &str, field: &str) -> Result<usize> {
    let v: usize = token.parse().with_context(|| format!("{field}: `{token}` is not a size"))?;
    ensure!(v > 0, "{field}: must be positive");
    Ok(v)
}

/// PFM with a negative scale (little-endian).
pub fn encode_pfm(img: &RgbImage) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    for r in (0..h).rev() {
        for c in 0..w {
            for ch in 0..3 {
                out.write_f32::<LittleEndian>(img.get(ch, r, c) as f32).unwrap();
            }
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<RgbImage> {
    let (t, offset) = header_tokens(bytes, 4, "pfm")?;
    match t[0].as_str() {
        "PF" => {}
        "Pf" => bail!("pfm magic: greyscale `Pf` images are not supported"),
        other => bail!("pfm magic: expected PF, found `{other}`"),
    }
    let width = dimension(&t[1], "pfm width")?;
    let height = dimension(&t[2], "pfm height")?;
    let scale: f64 = t[3].parse().with_context(|| format!("pfm scale: `{}` is not a number", t[3]))?;
    ensure!(scale != 0.0 && scale.is_finite(), "pfm scale: must be non-zero");
    let payload = &bytes[offset.min(bytes.len())..];
    let expected = width * height * 3 * 4;
    ensure!(
        payload.len() == expected,
        "pfm payload: {width}x{height} needs {expected} bytes, found {}",
        payload.len()
    );
    let plane = width * height;
    let mut data = vec![0.0; 3 * plane];
    let mut r = Cursor::new(payload);
    for row in (0..height).rev() {
        for col in 0..width {
            for ch in 0..3 {
                let v = if scale < 0.0 {
                    r.read_f32::<LittleEndian>()?
                } else {
                    r.read_f32::<BigEndian>()?
                };
                data[ch * plane + row * width + col] = v as f64;
            }
        }
    }
    Ok(RgbImage::new(height, width, data)?)
}

pub fn read_pfm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).with_context(|| format!("reading image {}", path.display()))?;
    decode_pfm(&bytes).with_context(|| format!("in {}", path.display()))
}

pub fn write_pfm(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_pfm(img)).with_context(|| format!("writing {}", path.display()))
}

/// Rounds `[0, 1]` values to 8 bits.
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                out.push(quantize(img.get(ch, r, c)));
            }
        }
    }
    out
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).with_context(|| format!("writing {}", path.display()))
}

/// Label map as an 8-bit PGM; 255 marks unlabeled pixels.
pub fn encode_pgm(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend_from_slice(labels.labels());
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMap> {
    let (t, offset) = header_tokens(bytes, 4, "pgm")?;
    ensure!(t[0] == "P5", "pgm magic: expected P5, found `{}`", t[0]);
    let width = dimension(&t[1], "pgm width")?;
    let height = dimension(&t[2], "pgm height")?;
    ensure!(t[3] == "255", "pgm maxval: expected 255, found `{}`", t[3]);
    let payload = &bytes[offset.min(bytes.len())..];
    ensure!(
        payload.len() == width * height,
        "pgm payload: {width}x{height} needs {} bytes, found {}",
        width * height,
        payload.len()
    );
    Ok(LabelMap::new(height, width, payload.to_vec())?)
}

pub fn read_pgm(path: &Path) -> Result<LabelMap> {
    let bytes = std::fs::read(path).with_context(|| format!("reading label map {}", path.display()))?;
    decode_pgm(&bytes).with_context(|| format!("in {}", path.display()))
}

pub fn write_pgm(path: &Path, labels: &LabelMap) -> Result<()> {
    std::fs::write(path, encode_pgm(labels)).with_context(|| format!("writing {}", path.display()))
}
