//! 8-bit RGB image files as `1x3xHxW` tensors in `[0, 1]`.
//!
//! PPM (binary `P6`, maxval 255) is read and written exactly; PNG is read in
//! any 8/16-bit gray or RGB(A) layout and written as 8-bit RGB.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Largest accepted width or height.
pub const MAX_DIM: usize = 1 << 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("ppm") => Ok(Self::Ppm),
            Some("png") => Ok(Self::Png),
            _ => Err(image_err(path, "unsupported extension (expected .ppm or .png)")),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Ppm => "ppm",
            Self::Png => "png",
        }
    }
}

fn image_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved RGB bytes from a `1x3xHxW` or `1x1xHxW` (replicated) tensor.
pub fn to_rgb8(img: &Tensor) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.n != 1 || !(s.c == 1 || s.c == 3) {
        return Err(Error::InvalidArgument(format!("expected a 1x3xHxW or 1x1xHxW image, got {s}")));
    }
    let hw = s.plane();
    let d = img.data();
    let mut out = Vec::with_capacity(3 * hw);
    for i in 0..hw {
        for c in 0..3 {
            let ch = if s.c == 1 { 0 } else { c };
            out.push(to_byte(d[ch * hw + i]));
        }
    }
    Ok(out)
}

pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Tensor> {
    let hw = width * height;
    if bytes.len() != 3 * hw {
        return Err(Error::Format(format!("expected {} RGB bytes, got {}", 3 * hw, bytes.len())));
    }
    let mut data = vec![0.0f32; 3 * hw];
    for (i, px) in bytes.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * hw + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(Shape::new(1, 3, height, width), data)
}

pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let s = img.shape();
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    out.extend(to_rgb8(img)?);
    Ok(out)
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if bytes.get(*pos) == Some(&b'#') {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    if header_token(bytes, &mut pos) != Some(b"P6".as_slice()) {
        return Err(Error::Format("not a binary PPM (missing P6 magic)".into()));
    }
    let mut number = |what: &str| -> Result<usize> {
        let tok = header_token(bytes, &mut pos).ok_or_else(|| Error::Format(format!("PPM header ends before {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format(format!("PPM {what} is not a number")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("PPM maxval {maxval} unsupported (expected 255)")));
    }
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(Error::Format(format!("PPM dimensions {width}x{height} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("PPM header is not terminated".into()));
    }
    let raster = &bytes[pos + 1..];
    let need = 3 * width * height;
    if raster.len() < need {
        return Err(Error::Format(format!("PPM payload truncated: {} of {need} bytes", raster.len())));
    }
    from_rgb8(width, height, &raster[..need])
}

pub fn encode_png(img: &Tensor) -> Result<Vec<u8>> {
    let s = img.shape();
    let rgb = to_rgb8(img)?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), s.w as u32, s.h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        w.write_image_data(&rgb).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let mut dec = png::Decoder::new(std::io::Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    if w > MAX_DIM || h > MAX_DIM {
        return Err(Error::Format(format!("PNG dimensions {w}x{h} out of range")));
    }
    let buf = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf.to_vec(),
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&v| [v; 3]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0]; 3]).collect(),
        png::ColorType::Indexed => return Err(Error::Format("indexed PNG was not expanded".into())),
    };
    from_rgb8(w, h, &rgb)
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    let format = ImageFormat::from_path(path)?;
    let bytes = fs::read(path).map_err(|e| image_err(path, e.to_string()))?;
    match format {
        ImageFormat::Ppm => decode_ppm(&bytes),
        ImageFormat::Png => decode_png(&bytes),
    }
    .map_err(|e| image_err(path, e.to_string()))
}

/// Writes a `1x3xHxW` (or replicated `1x1xHxW`) image, clipping to `[0, 1]`.
pub fn save_image(path: &Path, img: &Tensor) -> Result<()> {
    let bytes = match ImageFormat::from_path(path)? {
        ImageFormat::Ppm => encode_ppm(img)?,
        ImageFormat::Png => encode_png(img)?,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).map_err(|e| image_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn lattice_image(w: usize, h: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = (0..3 * w * h).map(|_| rng.random::<u8>() as f32 / 255.0).collect();
        Tensor::new(Shape::new(1, 3, h, w), data).unwrap()
    }

    #[test]
    fn ppm_header_is_exact() {
        let bytes = encode_ppm(&Tensor::full(Shape::new(1, 3, 2, 3), 1.0)).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        assert!(bytes[11..].iter().all(|&b| b == 255));
    }

    #[test]
    fn ppm_round_trip_is_exact_on_lattice() {
        let img = lattice_image(7, 5);
        assert_eq!(decode_ppm(&encode_ppm(&img).unwrap()).unwrap().data(), img.data());
    }

    #[test]
    fn png_round_trip_is_exact_on_lattice() {
        let img = lattice_image(6, 4);
        assert_eq!(decode_png(&encode_png(&img).unwrap()).unwrap().data(), img.data());
    }

    #[test]
    fn ppm_comments_are_skipped() {
        let mut bytes = b"P6 # made by hand\n1 1\n# max\n255\n".to_vec();
        bytes.extend([255, 0, 51]);
        assert_eq!(decode_ppm(&bytes).unwrap().data(), &[1.0, 0.0, 0.2]);
    }

    #[test]
    fn truncated_and_malformed_ppm_are_errors() {
        let bytes = encode_ppm(&lattice_image(4, 4)).unwrap();
        let err = decode_ppm(&bytes[..bytes.len() - 1]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(decode_ppm(b"P6\n1 x\n255\n").is_err());
        assert!(decode_ppm(b"P6\n99999999 1\n255\n").is_err());
    }

    #[test]
    fn saving_clips_to_unit_range() {
        let img = Tensor::new(Shape::new(1, 1, 1, 2), vec![-0.5, 1.5]).unwrap();
        let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        assert_eq!(back.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }
}
