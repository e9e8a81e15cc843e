//! Binary PGM (P5) and PPM (P6) images, 8 or 16 bits per sample.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmFormat {
    /// P5, one channel.
    Gray,
    /// P6, three interleaved channels.
    Rgb,
}

impl PnmFormat {
    pub fn channels(self) -> usize {
        match self {
            PnmFormat::Gray => 1,
            PnmFormat::Rgb => 3,
        }
    }

    fn magic(self) -> &'static str {
        match self {
            PnmFormat::Gray => "P5",
            PnmFormat::Rgb => "P6",
        }
    }
}

/// Decoded image. Samples are stored interleaved in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub format: PnmFormat,
    pub width: usize,
    pub height: usize,
    /// 255 or 65535.
    pub maxval: u16,
    pub samples: Vec<u16>,
}

fn err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Pnm {
        offset,
        reason: reason.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    /// Skips whitespace and `#` comments.
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                None => err(start, format!("header ends before {what}")),
                Some(&b) => err(start, format!("expected {what}, found byte {b:#04x}")),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| err(start, format!("{what} out of range")))
    }
}

impl PnmImage {
    pub fn new(format: PnmFormat, width: usize, height: usize, maxval: u16, samples: Vec<u16>) -> Result<Self> {
        if maxval != 255 && maxval != 65535 {
            return Err(Error::Config(format!("unsupported maxval {maxval}, expected 255 or 65535")));
        }
        if samples.len() != width * height * format.channels() {
            return Err(Error::Config(format!(
                "{} samples for a {width}x{height} {} image",
                samples.len(),
                format.magic()
            )));
        }
        if let Some(&v) = samples.iter().find(|&&v| v > maxval) {
            return Err(Error::Config(format!("sample {v} exceeds maxval {maxval}")));
        }
        Ok(PnmImage {
            format,
            width,
            height,
            maxval,
            samples,
        })
    }

    pub fn channels(&self) -> usize {
        self.format.channels()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let format = match bytes.get(..2) {
            Some(b"P5") => PnmFormat::Gray,
            Some(b"P6") => PnmFormat::Rgb,
            _ => return Err(err(0, "expected magic P5 or P6")),
        };
        let mut h = Header { bytes, pos: 2 };
        if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
            return Err(err(2, "expected whitespace after magic"));
        }
        let width = h.number("width")?;
        let height = h.number("height")?;
        let at = {
            h.skip_space();
            h.pos
        };
        let maxval = h.number("maxval")?;
        if maxval != 255 && maxval != 65535 {
            return Err(err(at, format!("unsupported maxval {maxval}, expected 255 or 65535")));
        }
        match bytes.get(h.pos) {
            Some(b) if b.is_ascii_whitespace() => h.pos += 1,
            Some(_) => return Err(err(h.pos, "expected a single whitespace byte before the raster")),
            None => return Err(err(h.pos, "header ends before raster")),
        }
        let width_bytes = if maxval > 255 { 2 } else { 1 };
        let count = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(format.channels()))
            .ok_or_else(|| err(h.pos, "image dimensions overflow"))?;
        let need = count * width_bytes;
        let raster = &bytes[h.pos..];
        if raster.len() < need {
            return Err(err(
                h.pos + raster.len(),
                format!("truncated raster: {} of {need} bytes present", raster.len()),
            ));
        }
        let samples: Vec<u16> = if width_bytes == 2 {
            raster[..need]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        } else {
            raster[..need].iter().map(|&b| b as u16).collect()
        };
        if let Some(i) = samples.iter().position(|&v| v as usize > maxval) {
            return Err(err(h.pos + i * width_bytes, format!("sample exceeds maxval {maxval}")));
        }
        Ok(PnmImage {
            format,
            width,
            height,
            maxval: maxval as u16,
            samples,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = format!("{}\n{} {}\n{}\n", self.format.magic(), self.width, self.height, self.maxval);
        let mut out = header.into_bytes();
        if self.maxval > 255 {
            for &v in &self.samples {
                out.extend_from_slice(&v.to_be_bytes());
            }
        } else {
            out.extend(self.samples.iter().map(|&v| v as u8));
        }
        out
    }

    /// Converts to a `1×C×H×W` tensor scaled to `[0, 1]`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let c = self.channels();
        let scale = 1.0 / self.maxval as f64;
        Tensor::from_fn(Shape::new(1, c, self.height, self.width), |_, ch, y, x| {
            T::from_f64(self.samples[(y * self.width + x) * c + ch] as f64 * scale)
        })
    }

    /// Quantizes batch item 0 of a 1- or 3-channel tensor, clamping to
    /// `[0, 1]` and rounding to the nearest level.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, maxval: u16) -> Result<Self> {
        let s = t.shape();
        let format = match s.c {
            1 => PnmFormat::Gray,
            3 => PnmFormat::Rgb,
            c => return Err(Error::Config(format!("cannot store {c} channels as PNM"))),
        };
        let m = maxval as f64;
        let mut samples = Vec::with_capacity(s.c * s.h * s.w);
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..s.c {
                    let v = t.at(0, c, y, x).as_f64();
                    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                    samples.push((v * m).round() as u16);
                }
            }
        }
        PnmImage::new(format, s.w, s.h, maxval, samples)
    }
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<PnmImage> {
    PnmImage::parse(&read_file(path.as_ref())?)
}

pub fn write_pnm(img: &PnmImage, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &img.encode())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_gray_normalizes() {
        let bytes = b"P5\n2 2\n255\n\x00\x80\xff\x40";
        let img = PnmImage::parse(bytes).unwrap();
        let t: Tensor<f64> = img.to_tensor();
        let want = [0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0];
        for (a, b) in t.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(img.encode(), bytes);
    }

    #[test]
    fn comments_between_tokens() {
        let plain = PnmImage::parse(b"P6\n1 1\n65535\n\x01\x02\x03\x04\x05\x06").unwrap();
        let commented =
            PnmImage::parse(b"P6 # rgb\n# size follows\n1\n#w\n 1 # h\n65535\n\x01\x02\x03\x04\x05\x06").unwrap();
        assert_eq!(plain, commented);
        assert_eq!(plain.samples, vec![0x0102, 0x0304, 0x0506]);
    }

    #[test]
    fn errors_carry_offsets() {
        let e = PnmImage::parse(b"P5\n2 2\n1000\n....").unwrap_err();
        assert!(matches!(e, Error::Pnm { offset: 7, .. }), "{e}");
        let e = PnmImage::parse(b"P5\n2 2\n255\n\x00\x01").unwrap_err();
        assert!(matches!(e, Error::Pnm { offset: 13, .. }), "{e}");
        let e = PnmImage::parse(b"P3\n2 2\n255\n").unwrap_err();
        assert!(matches!(e, Error::Pnm { offset: 0, .. }));
        let e = PnmImage::parse(b"P5\n2 x\n255\n").unwrap_err();
        assert!(matches!(e, Error::Pnm { offset: 5, .. }));
    }

    #[test]
    fn quantize_round_trip() {
        let img = PnmImage::new(PnmFormat::Gray, 3, 1, 65535, vec![0, 1234, 65535]).unwrap();
        let back = PnmImage::from_tensor(&img.to_tensor::<f32>(), 65535).unwrap();
        assert_eq!(back, img);
    }
}
