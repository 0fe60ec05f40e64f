//! 64-bit DCT perceptual hash.
//!
//! Pipeline, fixed because hash bits depend on every step:
//!
//! 1. luma `0.299 R + 0.587 G + 0.114 B` (ITU-R BT.601) in `f64`, alpha ignored;
//! 2. bilinear resize to 32x32 with pixel-centre alignment
//!    (`src = (dst + 0.5) * scale - 0.5`, clamped to the edge);
//! 3. orthonormal 2-D DCT-II;
//! 4. the top-left 8x8 block, DC included, each coefficient rounded to a
//!    multiple of 2^-20 so that floating-point residue on flat images reads
//!    as exactly zero;
//! 5. bit set iff coefficient > median of the 64 values (mean of the two
//!    middle values), packed row-major with coefficient (0, 0) in the most
//!    significant bit.

use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const RESIZE: usize = 32;
pub const BLOCK: usize = 8;
const SNAP: f64 = 1_048_576.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PerceptualHash(pub u64);

impl PerceptualHash {
    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn hamming(self, other: PerceptualHash) -> u32 {
        hamming(self, other)
    }

    /// 16 lowercase hex digits.
    pub fn to_hex(self) -> alloc::string::String {
        alloc::format!("{:016x}", self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 16 {
            return Err(Error::InvalidParameter(alloc::format!(
                "bad hash hex {s:?}"
            )));
        }
        u64::from_str_radix(s, 16)
            .map(PerceptualHash)
            .map_err(|_| Error::InvalidParameter(alloc::format!("bad hash hex {s:?}")))
    }
}

/// Number of differing bits.
#[inline]
pub fn hamming(a: PerceptualHash, b: PerceptualHash) -> u32 {
    (a.0 ^ b.0).count_ones()
}

/// Borrowed 8-bit raster, interleaved channels: 1 = gray, 2 = gray+alpha,
/// 3 = RGB, 4 = RGBA.
#[derive(Debug, Clone, Copy)]
pub struct Raster<'a> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: &'a [u8],
}

impl<'a> Raster<'a> {
    pub fn new(width: usize, height: usize, channels: usize, data: &'a [u8]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty);
        }
        if !(1..=4).contains(&channels) {
            return Err(Error::InvalidParameter(alloc::format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::LengthMismatch {
                what: "raster bytes vs width*height*channels",
                left: data.len(),
                right: width * height * channels,
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// BT.601 luma, row-major.
    pub fn luma(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.channels)
            .map(|px| match self.channels {
                1 | 2 => px[0] as f64,
                _ => 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64,
            })
            .collect()
    }
}

/// Bilinear resize of a `w x h` plane to `RESIZE x RESIZE`.
pub fn resize_bilinear(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let sample = |dst: usize, src_len: usize| -> (usize, usize, f64) {
        let scale = src_len as f64 / RESIZE as f64;
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let lo = libm::floor(pos) as usize;
        let hi = (lo + 1).min(src_len - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(RESIZE * RESIZE);
    for y in 0..RESIZE {
        let (y0, y1, fy) = sample(y, h);
        for x in 0..RESIZE {
            let (x0, x1, fx) = sample(x, w);
            let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
            let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// `basis[u * RESIZE + x] = c(u) cos(pi (2x + 1) u / 2N)` with orthonormal
/// scaling.
fn dct_basis() -> Vec<f64> {
    let n = RESIZE as f64;
    let mut basis = Vec::with_capacity(RESIZE * RESIZE);
    for u in 0..RESIZE {
        let c = if u == 0 {
            libm::sqrt(1.0 / n)
        } else {
            libm::sqrt(2.0 / n)
        };
        for x in 0..RESIZE {
            basis.push(
                c * libm::cos(core::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2.0 * n)),
            );
        }
    }
    basis
}

/// Separable orthonormal 2-D DCT-II of a 32x32 plane; `out[u * 32 + v]` with
/// `u` the vertical frequency.
pub fn dct2_32(input: &[f64]) -> Vec<f64> {
    assert_eq!(input.len(), RESIZE * RESIZE);
    let basis = dct_basis();
    // rows first: tmp[y][v] = sum_x input[y][x] basis[v][x]
    let mut tmp = alloc::vec![0.0; RESIZE * RESIZE];
    for y in 0..RESIZE {
        let row = &input[y * RESIZE..(y + 1) * RESIZE];
        for v in 0..RESIZE {
            let b = &basis[v * RESIZE..(v + 1) * RESIZE];
            tmp[y * RESIZE + v] = row.iter().zip(b).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = alloc::vec![0.0; RESIZE * RESIZE];
    for u in 0..RESIZE {
        let b = &basis[u * RESIZE..(u + 1) * RESIZE];
        for v in 0..RESIZE {
            out[u * RESIZE + v] = (0..RESIZE).map(|y| b[y] * tmp[y * RESIZE + v]).sum();
        }
    }
    out
}

/// Hash of a 32x32 plane that has already been reduced.
pub fn hash_reduced(plane: &[f64]) -> PerceptualHash {
    let dct = dct2_32(plane);
    let mut block = [0.0f64; BLOCK * BLOCK];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            block[u * BLOCK + v] = libm::round(dct[u * RESIZE + v] * SNAP) / SNAP;
        }
    }
    let mut sorted = block;
    sorted.sort_unstable_by(f64::total_cmp);
    let median = (sorted[31] + sorted[32]) / 2.0;
    let bits = block
        .iter()
        .fold(0u64, |acc, &c| (acc << 1) | u64::from(c > median));
    PerceptualHash(bits)
}

pub fn phash(image: &Raster<'_>) -> PerceptualHash {
    let luma = image.luma();
    hash_reduced(&resize_bilinear(&luma, image.width, image.height))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn hand_popcounts() {
        let h = PerceptualHash(0x0123_4567_89ab_cdef);
        assert_eq!(hamming(h, h), 0);
        assert_eq!(hamming(h, PerceptualHash(!h.0)), 64);
        assert_eq!(hamming(PerceptualHash(0x0F), PerceptualHash(0x03)), 2);
    }

    #[test]
    fn constant_gray_sets_only_dc() {
        let data = vec![128u8; 7 * 5 * 3];
        let h = phash(&Raster::new(7, 5, 3, &data).unwrap());
        assert_eq!(h.0.count_ones(), 1);
        assert_eq!(h.0, 1 << 63);
    }

    #[test]
    fn hex_round_trip() {
        let h = PerceptualHash(0xdead_beef_0000_0001);
        assert_eq!(h.to_hex(), "deadbeef00000001");
        assert_eq!(PerceptualHash::from_hex(&h.to_hex()).unwrap(), h);
        assert!(PerceptualHash::from_hex("xyz").is_err());
    }

    #[test]
    fn resize_of_identity_size_is_exact() {
        let plane: Vec<f64> = (0..RESIZE * RESIZE).map(|i| i as f64).collect();
        assert_eq!(resize_bilinear(&plane, RESIZE, RESIZE), plane);
    }

    #[test]
    fn raster_validation() {
        assert!(Raster::new(2, 2, 3, &[0; 11]).is_err());
        assert!(Raster::new(2, 2, 5, &[0; 20]).is_err());
        assert!(Raster::new(0, 2, 1, &[]).is_err());
    }
}
