//! 4-bit NormalFloat storage with double-quantized block scales.
//!
//! Weights are split into blocks of 64 values. Each block keeps its absolute
//! maximum as scale and every value as the index of the nearest of the 16
//! NF4 levels (two indices per byte). The per-block scales are themselves
//! quantized: the mean is subtracted and the residuals are stored as
//! symmetric int8 codes in groups of 256 with one `f32` scale per group.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;

pub const BLOCK_SIZE: usize = 64;
pub const SCALE_GROUP: usize = 256;

/// Quantiles of a standard normal, rescaled to [-1, 1], with an exact zero.
pub const NF4_LEVELS: [f32; 16] = [
    -1.0,
    -0.696_192_8,
    -0.525_073_05,
    -0.394_917_5,
    -0.284_441_38,
    -0.184_773_43,
    -0.091_050_036,
    0.0,
    0.079_580_3,
    0.160_930_2,
    0.246_112_3,
    0.337_915_24,
    0.440_709_83,
    0.562_617,
    0.722_956_84,
    1.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nf4Matrix {
    pub rows: usize,
    pub cols: usize,
    packed: Vec<u8>,
    scale_codes: Vec<i8>,
    group_scales: Vec<f32>,
    scale_offset: f32,
}

fn nearest_level(x: f32) -> u8 {
    // Levels are sorted: binary search on the midpoints.
    let mut lo = 0usize;
    let mut hi = NF4_LEVELS.len() - 1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        let midpoint = 0.5 * (NF4_LEVELS[mid] + NF4_LEVELS[mid + 1]);
        if x > midpoint {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo as u8
}

impl Nf4Matrix {
    pub fn quantize(m: &Matrix) -> Self {
        let n = m.data.len();
        let absmax: Vec<f32> = m
            .data
            .chunks(BLOCK_SIZE)
            .map(|b| b.iter().fold(0.0f32, |acc, x| acc.max(x.abs())))
            .collect();

        let scale_offset = if absmax.is_empty() {
            0.0
        } else {
            absmax.iter().map(|&a| a as f64).sum::<f64>() as f32 / absmax.len() as f32
        };
        let mut scale_codes = Vec::with_capacity(absmax.len());
        let mut group_scales = Vec::new();
        for group in absmax.chunks(SCALE_GROUP) {
            let g = group.iter().fold(0.0f32, |acc, a| acc.max((a - scale_offset).abs()));
            group_scales.push(g);
            for a in group {
                let code = if g > 0.0 { ((a - scale_offset) / g * 127.0).round() } else { 0.0 };
                scale_codes.push(code.clamp(-127.0, 127.0) as i8);
            }
        }

        let mut out = Self {
            rows: m.rows,
            cols: m.cols,
            packed: vec![0u8; n.div_ceil(2)],
            scale_codes,
            group_scales,
            scale_offset,
        };
        // Quantize values against the scale that dequantization will see.
        for (b, block) in m.data.chunks(BLOCK_SIZE).enumerate() {
            let scale = out.block_scale(b);
            for (j, &x) in block.iter().enumerate() {
                let code = if scale > 0.0 { nearest_level(x / scale) } else { 7 };
                let idx = b * BLOCK_SIZE + j;
                out.packed[idx / 2] |= if idx % 2 == 0 { code } else { code << 4 };
            }
        }
        out
    }

    fn block_scale(&self, block: usize) -> f32 {
        let g = self.group_scales[block / SCALE_GROUP];
        self.scale_codes[block] as f32 / 127.0 * g + self.scale_offset
    }

    fn code(&self, idx: usize) -> u8 {
        let byte = self.packed[idx / 2];
        if idx % 2 == 0 {
            byte & 0x0f
        } else {
            byte >> 4
        }
    }

    pub fn dequantize(&self) -> Matrix {
        let n = self.rows * self.cols;
        let mut data = Vec::with_capacity(n);
        for idx in 0..n {
            let scale = self.block_scale(idx / BLOCK_SIZE);
            data.push(NF4_LEVELS[self.code(idx) as usize] * scale);
        }
        Matrix::from_vec(self.rows, self.cols, data)
    }

    /// Bytes used by codes, scale codes, group scales and the offset.
    pub fn storage_bytes(&self) -> usize {
        self.packed.len() + self.scale_codes.len() + 4 * self.group_scales.len() + 4
    }
}
