//! Binary Netpbm: P5 (gray) and P6 (RGB), maxval 255.
//!
//! The reader accepts any header whitespace and `#` comments; the writer
//! always emits the canonical `P5\n<w> <h>\n255\n` form.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Decoded raster with interleaved 8-bit samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    pub data: Vec<u8>,
}

fn perr(offset: usize, reason: impl Into<String>) -> Error {
    Error::Netpbm {
        offset,
        reason: reason.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
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
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                None => perr(self.pos, format!("truncated header, expected {what}")),
                Some(_) => perr(self.pos, format!("expected decimal {what}")),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| perr(start, format!("{what} out of range")))
    }
}

pub fn decode_netpbm(bytes: &[u8]) -> Result<PnmImage> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some(m) => return Err(perr(0, format!("unsupported magic {:?}", String::from_utf8_lossy(m)))),
        None => return Err(perr(0, "file too short for a magic number")),
    };
    let mut h = Header { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(perr(2, "expected whitespace after magic"));
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let max_at = {
        h.skip_space();
        h.pos
    };
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(perr(max_at, format!("maxval {maxval} unsupported, only 255")));
    }
    if width == 0 || height == 0 {
        return Err(perr(max_at, format!("zero image extent {width}x{height}")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        Some(_) => return Err(perr(h.pos, "expected one whitespace byte before the raster")),
        None => return Err(perr(h.pos, "truncated header")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| perr(h.pos, "image extent overflows"))?;
    let payload = &bytes[h.pos..];
    if payload.len() < need {
        return Err(perr(
            bytes.len(),
            format!("truncated raster: {} of {need} bytes", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(perr(h.pos + need, "unexpected bytes after the raster"));
    }
    Ok(PnmImage {
        width,
        height,
        channels,
        data: payload.to_vec(),
    })
}

pub fn encode_netpbm(img: &PnmImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

impl PnmImage {
    /// Planar `(1, C, H, W)` tensor with values `v / 255`.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor4<T>> {
        let scale = T::lit(255.0);
        Tensor4::from_fn(Shape4::new(1, self.channels, self.height, self.width)?, |_, c, y, x| {
            T::from_u8(self.data[(y * self.width + x) * self.channels + c]).expect("u8") / scale
        })
    }

    /// Inverse of [`Self::to_tensor`]: clamps to [0, 1] and rounds to the
    /// nearest 8-bit level.
    pub fn from_tensor<T: Scalar>(t: &Tensor4<T>) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || (s.c != 1 && s.c != 3) {
            return Err(Error::InvalidShape {
                op: "write_netpbm",
                detail: format!("need (1, 1|3, H, W), got {s}"),
            });
        }
        let mut data = vec![0u8; s.c * s.plane()];
        for c in 0..s.c {
            for (i, &v) in t.plane(0, c).iter().enumerate() {
                let v = v.as_f64().clamp(0.0, 1.0);
                data[i * s.c + c] = (v * 255.0).round() as u8;
            }
        }
        Ok(PnmImage {
            width: s.w,
            height: s.h,
            channels: s.c,
            data,
        })
    }
}

pub fn read_netpbm<T: Scalar>(path: &Path) -> Result<Tensor4<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_netpbm(&bytes)?.to_tensor()
}

pub fn write_netpbm<T: Scalar>(path: &Path, img: &Tensor4<T>) -> Result<()> {
    let bytes = encode_netpbm(&PnmImage::from_tensor(img)?);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Single-channel mask, binarised as `v > 127`.
pub fn read_mask<T: Scalar>(path: &Path) -> Result<Tensor4<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = decode_netpbm(&bytes)?;
    if img.channels != 1 {
        return Err(perr(0, "masks must be P5 (single channel)"));
    }
    let data = img
        .data
        .iter()
        .map(|&v| if v > 127 { T::one() } else { T::zero() })
        .collect();
    Tensor4::from_vec(Shape4::new(1, 1, img.height, img.width)?, data)
}

/// Writes a binary mask as a P5 file with levels 0 and 255.
pub fn write_mask<T: Scalar>(path: &Path, mask: &Tensor4<T>) -> Result<()> {
    let s = mask.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::InvalidShape {
            op: "write_mask",
            detail: format!("need (1, 1, H, W), got {s}"),
        });
    }
    let half = T::lit(0.5);
    let img = PnmImage {
        width: s.w,
        height: s.h,
        channels: 1,
        data: mask.data().iter().map(|&v| if v >= half { 255 } else { 0 }).collect(),
    };
    std::fs::write(path, encode_netpbm(&img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p5(w: usize, h: usize, data: &[u8]) -> Vec<u8> {
        let mut b = format!("P5\n{w} {h}\n255\n").into_bytes();
        b.extend_from_slice(data);
        b
    }

    #[test]
    fn gray_values() {
        let t: Tensor4<f64> = decode_netpbm(&p5(2, 2, &[0, 255, 128, 64]))
            .unwrap()
            .to_tensor()
            .unwrap();
        assert_eq!(t.shape(), Shape4::new(1, 1, 2, 2).unwrap());
        let want = [0.0, 1.0, 0.50196, 0.25098];
        for (g, w) in t.data().iter().zip(want) {
            assert!((g - w).abs() < 1e-5);
        }
    }

    #[test]
    fn rgb_unpacks_channels() {
        let mut b = b"P6 1 1 255\n".to_vec();
        b.extend_from_slice(&[255, 0, 0]);
        let t: Tensor4<f32> = decode_netpbm(&b).unwrap().to_tensor().unwrap();
        assert_eq!(t.shape().c, 3);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn header_comments_and_whitespace() {
        let mut b = b"P5 # made by hand\n 3\t1 # width height\n255\n".to_vec();
        b.extend_from_slice(&[1, 2, 3]);
        let img = decode_netpbm(&b).unwrap();
        assert_eq!((img.width, img.height, img.data.as_slice()), (3, 1, &[1u8, 2, 3][..]));
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let bad = |b: &[u8]| match decode_netpbm(b) {
            Err(Error::Netpbm { offset, .. }) => offset,
            other => panic!("{other:?}"),
        };
        assert_eq!(bad(b"P4\n1 1\n255\n\0"), 0);
        assert_eq!(bad(b"P5\n1 1\n65535\n\0\0"), 7);
        assert_eq!(bad(&p5(2, 2, &[1, 2, 3])), 14);
        assert_eq!(bad(b"P5\nx 1\n255\n"), 3);
        assert_eq!(bad(&p5(1, 1, &[1, 2])), 12);
        assert_eq!(bad(b"P"), 0);
    }

    #[test]
    fn mask_binarises_above_127() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        std::fs::write(&path, p5(4, 1, &[0, 127, 128, 255])).unwrap();
        let m: Tensor4<f32> = read_mask(&path).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 1.0, 1.0]);
        write_mask(&path, &m).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), p5(4, 1, &[0, 0, 255, 255]));
    }

    proptest! {
        #[test]
        fn file_round_trip_is_byte_identical(
            w in 1usize..9, h in 1usize..9, rgb in any::<bool>(), seed in any::<u64>()
        ) {
            let c = if rgb { 3 } else { 1 };
            let data: Vec<u8> = (0..w * h * c).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 13) as u8).collect();
            let img = PnmImage { width: w, height: h, channels: c, data };
            let bytes = encode_netpbm(&img);
            let dir = tempfile::tempdir().unwrap();
            let (a, b) = (dir.path().join("a"), dir.path().join("b"));
            std::fs::write(&a, &bytes).unwrap();
            write_netpbm(&b, &read_netpbm::<f32>(&a).unwrap()).unwrap();
            prop_assert_eq!(std::fs::read(&b).unwrap(), bytes.clone());
            write_netpbm(&b, &read_netpbm::<f64>(&a).unwrap()).unwrap();
            prop_assert_eq!(std::fs::read(&b).unwrap(), bytes);
        }
    }
}
