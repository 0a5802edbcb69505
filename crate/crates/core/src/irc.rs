//! In-band resolution coding.
//!
//! `(H, W)` is written as an L-bit word (L/2 bits each, MSB first, H then W)
//! and broadcast as ±1 over L horizontal stripes of a map living at the
//! cover's DWT resolution. Decoding takes the sign of each stripe mean, so
//! zero-mean distortion cancels as stripes get larger.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_BITS: usize = 32;

/// Resolution bits, MSB first, height half then width half.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolutionWord {
    bits: Vec<bool>,
}

impl ResolutionWord {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        check_bit_count(bits.len())?;
        Ok(ResolutionWord { bits })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Reads the word back as `(H, W)`.
    pub fn dims(&self) -> (usize, usize) {
        let half = self.bits.len() / 2;
        let read = |bits: &[bool]| bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        (read(&self.bits[..half]), read(&self.bits[half..]))
    }
}

fn check_bit_count(bits: usize) -> Result<()> {
    if bits < 2 || !bits.is_multiple_of(2) || bits / 2 > 32 {
        return Err(Error::invalid(
            "resolution code",
            format!("bit count must be even and in 2..=64, got {bits}"),
        ));
    }
    Ok(())
}

/// Largest dimension representable with `bits` total bits.
pub fn max_dimension(bits: usize) -> usize {
    (1usize << (bits / 2)) - 1
}

pub fn quantize_resolution(height: usize, width: usize, bits: usize) -> Result<ResolutionWord> {
    check_bit_count(bits)?;
    let max = max_dimension(bits);
    for (name, v) in [("height", height), ("width", width)] {
        if v == 0 || v > max {
            return Err(Error::invalid(
                "resolution code",
                format!("{name} {v} outside representable range 1..={max} for {bits} bits"),
            ));
        }
    }
    let half = bits / 2;
    let mut out = Vec::with_capacity(bits);
    for v in [height, width] {
        out.extend((0..half).rev().map(|i| (v >> i) & 1 == 1));
    }
    Ok(ResolutionWord { bits: out })
}

/// Row ranges of the `bits` stripes; the first `rows % bits` stripes get one extra row.
pub fn stripe_ranges(rows: usize, bits: usize) -> Result<Vec<Range<usize>>> {
    if bits == 0 || rows < bits {
        return Err(Error::invalid(
            "resolution map",
            format!("{rows} rows cannot hold {bits} stripes of at least one row"),
        ));
    }
    let base = rows / bits;
    let rem = rows % bits;
    Ok((0..bits)
        .map(|k| {
            let start = k * base + k.min(rem);
            let len = base + usize::from(k < rem);
            start..start + len
        })
        .collect())
}

/// `[rows, cols]` map with stripe `k` filled by `2·b_k − 1`.
pub fn encode_map(word: &ResolutionWord, dims: (usize, usize)) -> Result<Tensor<f64>> {
    let (rows, cols) = dims;
    if cols == 0 {
        return Err(Error::invalid("resolution map", "map needs at least one column"));
    }
    let mut data = vec![0.0; rows * cols];
    for (range, &bit) in stripe_ranges(rows, word.len())?.into_iter().zip(word.bits()) {
        let v = if bit { 1.0 } else { -1.0 };
        data[range.start * cols..range.end * cols].fill(v);
    }
    Tensor::new([rows, cols], data)
}

/// Per-stripe means of a `[rows, cols]` map.
fn stripe_means<T: Real>(map: &[T], dims: (usize, usize), bits: usize) -> Result<Vec<f64>> {
    check_bit_count(bits)?;
    let (rows, cols) = dims;
    if map.len() != rows * cols || cols == 0 {
        return Err(Error::shape("resolution map", &[map.len()], &[rows, cols]));
    }
    Ok(stripe_ranges(rows, bits)?
        .into_iter()
        .map(|r| {
            let vals = &map[r.start * cols..r.end * cols];
            vals.iter().map(|v| v.as_f64()).sum::<f64>() / vals.len() as f64
        })
        .collect())
}

/// Outcome of voting over a received resolution map.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolutionDecode {
    pub height: usize,
    pub width: usize,
    pub word: ResolutionWord,
    /// `|stripe mean|` per bit.
    pub margins: Vec<f64>,
    /// Stripes whose mean was exactly zero (decoded as 0).
    pub ties: usize,
}

impl ResolutionDecode {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Smallest per-bit margin.
    pub fn margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// A human-readable warning when the vote was weak or degenerate.
    pub fn warning(&self, threshold: f64) -> Option<String> {
        if self.ties > 0 {
            Some(format!(
                "resolution decode: {} of {} stripes had zero mean and were read as 0",
                self.ties,
                self.margins.len()
            ))
        } else if self.margin() < threshold {
            Some(format!(
                "resolution decode margin {:.4} is below {threshold}",
                self.margin()
            ))
        } else if self.height == 0 || self.width == 0 {
            Some(format!("decoded resolution {}x{} is empty", self.height, self.width))
        } else {
            None
        }
    }
}

/// Majority-vote decoding: bit `k` is 1 iff the mean over stripe `k` is > 0.
pub fn decode_map<T: Real>(map: &[T], dims: (usize, usize), bits: usize) -> Result<ResolutionDecode> {
    let means = stripe_means(map, dims, bits)?;
    let word = ResolutionWord {
        bits: means.iter().map(|&m| m > 0.0).collect(),
    };
    let (height, width) = word.dims();
    Ok(ResolutionDecode {
        height,
        width,
        ties: means.iter().filter(|&&m| m == 0.0).count(),
        margins: means.iter().map(|m| m.abs()).collect(),
        word,
    })
}

/// `|mean|` of every stripe; the minimum is the decode margin.
pub fn stripe_margin<T: Real>(map: &[T], dims: (usize, usize), bits: usize) -> Result<Vec<f64>> {
    Ok(stripe_means(map, dims, bits)?.into_iter().map(f64::abs).collect())
}
