//! Planar images and the 16-bit PGM writer used for DRR output.

use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};

/// Single-channel 2D image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    rows: usize,
    cols: usize,
    pixel_spacing: f64,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(rows: usize, cols: usize, pixel_spacing: f64, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!("image must be at least 1x1, got {rows}x{cols}")));
        }
        if !(pixel_spacing.is_finite() && pixel_spacing > 0.0) {
            return Err(invalid(format!("pixel spacing must be > 0, got {pixel_spacing}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} image needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Image2D {
            rows,
            cols,
            pixel_spacing,
            data,
        })
    }

    pub fn filled(rows: usize, cols: usize, pixel_spacing: f64, value: f64) -> Result<Self> {
        Self::new(rows, cols, pixel_spacing, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn pixel_spacing(&self) -> f64 {
        self.pixel_spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Bilinear sample at continuous `(row, col)`; zero off the detector.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> f64 {
        bilinear(&self.data, self.rows, self.cols, u, v)
    }

    /// Writes a binary PGM (P5, maxval 65535, big-endian samples).
    ///
    /// Values are mapped linearly from `[0, max]` onto `[0, 65535]`; negatives
    /// clamp to 0. Returns the scale in value units per count, so that
    /// `value ≈ count * scale`.
    pub fn write_pgm<W: Write>(&self, w: &mut W) -> Result<f64> {
        let max = self.max().max(0.0);
        let scale = if max > 0.0 { max / 65535.0 } else { 0.0 };
        let mut out = format!("P5\n{} {}\n65535\n", self.cols, self.rows).into_bytes();
        out.reserve(self.data.len() * 2);
        for &x in &self.data {
            let count = if scale > 0.0 {
                (x / scale).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            };
            out.extend_from_slice(&count.to_be_bytes());
        }
        w.write_all(&out)?;
        Ok(scale)
    }

    /// Reads a P5 PGM written by [`Image2D::write_pgm`], applying `scale`.
    pub fn read_pgm<R: Read>(r: &mut R, scale: f64, pixel_spacing: f64) -> Result<Self> {
        let fmt = |reason: String| Error::Format {
            format: "PGM",
            reason,
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut pos = 0;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(fmt("truncated header".into()));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if tokens[0] != "P5" {
            return Err(fmt(format!("expected P5, got {}", tokens[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| fmt(format!("{s}: {e}")));
        let (cols, rows, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 65535 {
            return Err(fmt(format!("expected maxval 65535, got {maxval}")));
        }
        let raster = bytes
            .get(pos..pos + rows * cols * 2)
            .ok_or_else(|| fmt("truncated raster".into()))?;
        let data = raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect();
        Image2D::new(rows, cols, pixel_spacing, data)
    }
}

/// Bilinear interpolation on a row-major grid.
///
/// Positions outside `[0, rows-1] x [0, cols-1]` return 0.
pub(crate) fn bilinear(data: &[f64], rows: usize, cols: usize, u: f64, v: f64) -> f64 {
    if !(u >= 0.0 && v >= 0.0 && u <= (rows - 1) as f64 && v <= (cols - 1) as f64) {
        return 0.0;
    }
    let r0 = (u.floor() as usize).min(rows - 1);
    let c0 = (v.floor() as usize).min(cols - 1);
    let r1 = (r0 + 1).min(rows - 1);
    let c1 = (c0 + 1).min(cols - 1);
    let tu = u - r0 as f64;
    let tv = v - c0 as f64;
    let at = |r: usize, c: usize| data[r * cols + c];
    (1.0 - tu) * ((1.0 - tv) * at(r0, c0) + tv * at(r0, c1)) + tu * ((1.0 - tv) * at(r1, c0) + tv * at(r1, c1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_interpolates_and_zeroes_outside() {
        let img = Image2D::new(2, 2, 1.0, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(img.sample_bilinear(0.0, 0.0), 0.0);
        assert_eq!(img.sample_bilinear(1.0, 1.0), 3.0);
        assert!((img.sample_bilinear(0.5, 0.5) - 1.5).abs() < 1e-12);
        assert!((img.sample_bilinear(0.25, 1.0) - 1.5).abs() < 1e-12);
        assert_eq!(img.sample_bilinear(-0.01, 0.5), 0.0);
        assert_eq!(img.sample_bilinear(0.5, 1.01), 0.0);
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.37).collect();
        let img = Image2D::new(3, 4, 0.5, data).unwrap();
        let mut buf = Vec::new();
        let scale = img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n4 3\n65535\n"));
        assert_eq!(buf.len(), 13 + 24);
        // max maps to full scale
        assert_eq!(&buf[buf.len() - 2..], &65535u16.to_be_bytes());
        let back = Image2D::read_pgm(&mut buf.as_slice(), scale, 0.5).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= scale * 0.5 + 1e-12);
        }
    }

    #[test]
    fn zero_image_writes_zero_scale() {
        let img = Image2D::filled(2, 2, 1.0, 0.0).unwrap();
        let mut buf = Vec::new();
        assert_eq!(img.write_pgm(&mut buf).unwrap(), 0.0);
        assert!(buf[buf.len() - 8..].iter().all(|&b| b == 0));
    }
}
