//! Image container, resampling helpers and Netpbm (PGM/PPM) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A point in original-image pixel coordinates. Sub-pixel values are allowed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_integral(self) -> bool {
        self.x.fract() == 0.0 && self.y.fract() == 0.0
    }
}

/// Row-major image with values in `[0, 1]`, one or three interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("image contains non-finite values".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    /// Grayscale image filled by `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Channel `c` of pixel `(x, y)`.
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Grayscale value with coordinates clamped into the image (replicate border).
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[(cy * self.width + cx) * self.channels]
    }

    /// Bilinear sample of the first channel with replicate border handling.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let top = self.get(x0, y0, 0) * (1.0 - fx) + self.get(x1, y0, 0) * fx;
        let bottom = self.get(x0, y1, 0) * (1.0 - fx) + self.get(x1, y1, 0) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Luma conversion with ITU-R BT.601 weights. Grayscale input is returned unchanged.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

/// Box-filter downsampling. Rows and columns not covered by a full block are dropped.
pub fn downsample(img: &Image, factor: usize) -> Result<Image> {
    if factor == 0 {
        return Err(Error::InvalidConfig("downsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width / factor, img.height / factor);
    if w == 0 || h == 0 {
        return Err(Error::EmptyOutput {
            width: img.width,
            height: img.height,
            factor,
        });
    }
    let ch = img.channels;
    let area = (factor * factor) as f64;
    let mut data = vec![0.0; w * h * ch];
    for oy in 0..h {
        for ox in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for sy in oy * factor..(oy + 1) * factor {
                    for sx in ox * factor..(ox + 1) * factor {
                        acc += img.get(sx, sy, c);
                    }
                }
                data[(oy * w + ox) * ch + c] = acc / area;
            }
        }
    }
    Ok(Image {
        width: w,
        height: h,
        channels: ch,
        data,
    })
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Decodes a binary 8-bit PGM (P5) or PPM (P6) buffer, scaling values by 1/255.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let channels = match next_token(bytes, &mut pos) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::BadMagic { expected: "P5/P6" }),
    };
    let mut header = [0usize; 3];
    for (i, slot) in header.iter_mut().enumerate() {
        let tok = next_token(bytes, &mut pos).ok_or(Error::TruncatedFile {
            expected: pos as u64 + 1,
            found: bytes.len() as u64,
        })?;
        *slot = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("bad header field {i}"),
            })?;
    }
    let [width, height, maxval] = header;
    if maxval != 255 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("only 8-bit images are supported (maxval {maxval})"),
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or(Error::DimOverflow)?;
    let available = bytes.len().saturating_sub(pos);
    if available < n {
        return Err(Error::TruncatedFile {
            expected: (pos + n) as u64,
            found: bytes.len() as u64,
        });
    }
    let data = bytes[pos..pos + n]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Image::new(width, height, channels, data)
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(
        img.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

pub fn write_pnm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_coefficients() {
        let img = Image::new(2, 1, 3, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let g = to_grayscale(&img);
        assert_eq!(g.channels(), 1);
        assert!((g.get(0, 0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(g.get(1, 0, 0), 0.299);
    }

    #[test]
    fn grayscale_passthrough() {
        let img = Image::gray(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(to_grayscale(&img), img);
    }

    #[test]
    fn box_downsample() {
        let img = Image::gray(2, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let d = downsample(&img, 2).unwrap();
        assert_eq!((d.width(), d.height()), (1, 1));
        assert_eq!(d.data(), &[4.0]);
        assert_eq!(downsample(&img, 1).unwrap(), img);
    }

    #[test]
    fn downsample_crops_partial_blocks() {
        let img = Image::from_fn(5, 5, |x, y| (x + 5 * y) as f64 / 25.0);
        let d = downsample(&img, 4).unwrap();
        assert_eq!((d.width(), d.height()), (1, 1));
        let mut acc = 0.0;
        for y in 0..4 {
            for x in 0..4 {
                acc += img.get(x, y, 0);
            }
        }
        assert!((d.data()[0] - acc / 16.0).abs() < 1e-15);
        assert!(matches!(downsample(&img, 6), Err(Error::EmptyOutput { .. })));
    }

    #[test]
    fn rejects_bad_images() {
        assert!(Image::gray(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, 2, vec![0.0; 2]).is_err());
        assert!(Image::gray(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn pnm_round_trip_and_comments() {
        let img = Image::from_fn(3, 2, |x, y| ((x * 40 + y * 70) as f64) / 255.0);
        let bytes = encode_pnm(&img);
        assert_eq!(decode_pnm(&bytes).unwrap(), img);

        let mut commented = b"P5\n# a comment\n3 2\n255\n".to_vec();
        commented.extend_from_slice(&bytes[bytes.len() - 6..]);
        assert_eq!(decode_pnm(&commented).unwrap(), img);

        assert!(matches!(decode_pnm(b"P2\n1 1\n255\n0"), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode_pnm(b"P5\n4 4\n255\n\x00\x00"),
            Err(Error::TruncatedFile { .. })
        ));
    }
}
