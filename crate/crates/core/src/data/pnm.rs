//! Binary PPM (P6) color images and PGM (P5) single-channel maps.
//!
//! Color is stored as 8-bit and read back in `[0, 1]`. Single-channel maps
//! hold disparities in pixels and are stored as 16-bit big-endian values
//! scaled by 256.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Fixed-point scale of 16-bit disparity maps.
pub const DISPARITY_SCALE: f64 = 256.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmKind {
    /// P5, one channel.
    Gray,
    /// P6, three channels.
    Color,
}

/// A decoded file before scaling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub kind: PnmKind,
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Interleaved samples, row-major.
    pub samples: Vec<u16>,
}

impl Pnm {
    pub fn channels(&self) -> usize {
        match self.kind {
            PnmKind::Gray => 1,
            PnmKind::Color => 3,
        }
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format("pnm", format!("expected {what} at byte {start}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::format("pnm", format!("{what} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Pnm> {
    let kind = match bytes.get(..2) {
        Some(b"P5") => PnmKind::Gray,
        Some(b"P6") => PnmKind::Color,
        _ => return Err(Error::format("pnm", "expected P5 or P6 magic")),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format("pnm", format!("empty image {width}x{height}")));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(Error::format("pnm", format!("maxval {maxval} outside 1..=65535")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format("pnm", "missing whitespace after maxval"));
    }
    let raster = &bytes[h.pos + 1..];
    let channels = if kind == PnmKind::Gray { 1 } else { 3 };
    let wide = maxval > 255;
    let count = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Error::format("pnm", "image extents overflow"))?;
    let need = count.checked_mul(if wide { 2 } else { 1 }).ok_or_else(|| Error::format("pnm", "image extents overflow"))?;
    if raster.len() < need {
        return Err(Error::format(
            "pnm",
            format!("truncated raster: {width}x{height} needs {need} bytes, found {}", raster.len()),
        ));
    }
    let samples: Vec<u16> = if wide {
        raster[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        raster[..need].iter().map(|&b| b as u16).collect()
    };
    if let Some(&s) = samples.iter().find(|&&s| s > maxval as u16) {
        return Err(Error::format("pnm", format!("sample {s} exceeds maxval {maxval}")));
    }
    Ok(Pnm {
        kind,
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode(pnm: &Pnm) -> Vec<u8> {
    let magic = match pnm.kind {
        PnmKind::Gray => "P5",
        PnmKind::Color => "P6",
    };
    let mut out = format!("{magic}\n{} {}\n{}\n", pnm.width, pnm.height, pnm.maxval).into_bytes();
    if pnm.maxval > 255 {
        out.extend(pnm.samples.iter().flat_map(|s| s.to_be_bytes()));
    } else {
        out.extend(pnm.samples.iter().map(|&s| s as u8));
    }
    out
}

/// Converts a 1x3xHxW image in `[0, 1]` or a 1x1xHxW disparity map.
pub fn from_tensor(t: &Tensor) -> Result<Pnm> {
    let s = t.shape();
    if s.n() != 1 || !(s.c() == 1 || s.c() == 3) {
        return Err(Error::shape("write_image", format!("expected 1x3xHxW or 1x1xHxW, got {s}")));
    }
    let (kind, maxval, scale) = if s.c() == 3 {
        (PnmKind::Color, 255u16, 255.0)
    } else {
        (PnmKind::Gray, u16::MAX, DISPARITY_SCALE)
    };
    let mut samples = Vec::with_capacity(t.numel());
    for y in 0..s.h() {
        for x in 0..s.w() {
            for c in 0..s.c() {
                let v = t.at(0, c, y, x);
                if !v.is_finite() {
                    return Err(Error::NonFinite { op: "write_image" });
                }
                samples.push((v * scale).round().clamp(0.0, maxval as f64) as u16);
            }
        }
    }
    Ok(Pnm {
        kind,
        width: s.w(),
        height: s.h(),
        maxval,
        samples,
    })
}

/// Color samples divide by maxval; 16-bit gray samples are disparities and
/// divide by 256; 8-bit gray samples divide by maxval.
pub fn to_tensor(pnm: &Pnm) -> Tensor {
    let c = pnm.channels();
    let scale = if pnm.kind == PnmKind::Gray && pnm.maxval > 255 {
        DISPARITY_SCALE
    } else {
        pnm.maxval as f64
    };
    Tensor::from_fn(Shape::new(1, c, pnm.height, pnm.width), |_, ch, y, x| {
        pnm.samples[(y * pnm.width + x) * c + ch] as f64 / scale
    })
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map(|p| to_tensor(&p)).map_err(|e| match e {
        Error::Format { what, detail } => Error::Format {
            what,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

pub fn write_image(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode(&from_tensor(t)?)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn p6_header_layout() {
        let t = Tensor::zeros(Shape::new(1, 3, 48, 64));
        let bytes = encode(&from_tensor(&t).unwrap());
        assert!(bytes.starts_with(b"P6\n64 48\n255\n"));
        assert_eq!(bytes.len(), 13 + 64 * 48 * 3);
    }

    #[test]
    fn disparity_four_is_exact() {
        let t = Tensor::full(Shape::new(1, 1, 2, 3), 4.0);
        let p = from_tensor(&t).unwrap();
        assert!(p.samples.iter().all(|&s| s == 1024));
        assert_eq!(to_tensor(&decode(&encode(&p)).unwrap()), t);
    }

    #[test]
    fn tolerates_header_comments() {
        let mut bytes = b"P5 # gray\n2 # w\n1\n# max\n255\n".to_vec();
        bytes.extend([0, 255]);
        let p = decode(&bytes).unwrap();
        assert_eq!((p.width, p.height, p.samples.clone()), (2, 1, vec![0, 255]));
    }

    #[test]
    fn rejects_malformed_input() {
        let cases: [&[u8]; 6] = [
            b"P3\n1 1\n255\n\0",
            b"P6\n1\n",
            b"P6\n0 1\n255\n",
            b"P6\n1 1\n70000\n\0\0\0",
            b"P6\n2 2\n255\n\0\0\0",
            b"P5\n1 1\n10\n\x0b",
        ];
        for bytes in cases {
            assert!(matches!(decode(bytes), Err(Error::Format { .. })), "{:?}", String::from_utf8_lossy(bytes));
        }
        let err = decode(b"P6\n2 2\n255\n\0\0\0").unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    proptest! {
        #[test]
        fn color_round_trip_within_quantization(values in prop::collection::vec(0.0f64..=1.0, 3 * 5 * 4)) {
            let t = Tensor::new(Shape::new(1, 3, 5, 4), values).unwrap();
            let back = to_tensor(&decode(&encode(&from_tensor(&t).unwrap())).unwrap());
            prop_assert!(t.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-15);
        }

        #[test]
        fn disparity_round_trip_within_quantization(values in prop::collection::vec(0.0f64..200.0, 6 * 7)) {
            let t = Tensor::new(Shape::new(1, 1, 6, 7), values).unwrap();
            let back = to_tensor(&decode(&encode(&from_tensor(&t).unwrap())).unwrap());
            prop_assert!(t.max_abs_diff(&back) <= 0.5 / 256.0 + 1e-15);
        }
    }
}
