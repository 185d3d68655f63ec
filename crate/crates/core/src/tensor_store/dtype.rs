use std::fmt;
use std::str::FromStr;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};

/// Storage element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    F16,
    BF16,
}

impl Dtype {
    pub const ALL: [Dtype; 3] = [Dtype::F32, Dtype::F16, Dtype::BF16];

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 | Dtype::BF16 => 2,
        }
    }

    /// Widens little-endian elements to f64. Exact for all three types.
    pub fn decode(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            Dtype::F16 => bytes
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
            Dtype::BF16 => bytes
                .chunks_exact(2)
                .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
        }
    }

    /// Narrows f64 values with round-to-nearest-even.
    pub fn encode(self, values: &[f64]) -> Vec<u8> {
        let mut out = vec![0u8; values.len() * self.size()];
        self.encode_into(values, &mut out);
        out
    }

    /// Writes encoded `values` into `out`, which must hold exactly
    /// `values.len() * self.size()` bytes.
    pub fn encode_into(self, values: &[f64], out: &mut [u8]) {
        assert_eq!(
            out.len(),
            values.len() * self.size(),
            "encode buffer length"
        );
        match self {
            // `as f32` rounds to nearest, ties to even
            Dtype::F32 => {
                for (c, &v) in out.chunks_exact_mut(4).zip(values) {
                    c.copy_from_slice(&(v as f32).to_le_bytes());
                }
            }
            Dtype::F16 => {
                for (c, &v) in out.chunks_exact_mut(2).zip(values) {
                    c.copy_from_slice(&f16::from_f64(v).to_le_bytes());
                }
            }
            Dtype::BF16 => {
                for (c, &v) in out.chunks_exact_mut(2).zip(values) {
                    c.copy_from_slice(&bf16::from_f64(v).to_le_bytes());
                }
            }
        }
    }

    /// Spacing between adjacent representable values at `x` (one unit in the last place).
    pub fn ulp(self, x: f64) -> f64 {
        let ax = x.abs();
        let (mant_bits, min_exp) = match self {
            Dtype::F32 => (23, -126),
            Dtype::F16 => (10, -14),
            Dtype::BF16 => (7, -126),
        };
        let exp = if ax == 0.0 {
            min_exp
        } else {
            (ax.log2().floor() as i32).max(min_exp)
        };
        2f64.powi(exp - mant_bits)
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
        })
    }
}

impl FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "F32" => Ok(Dtype::F32),
            "F16" => Ok(Dtype::F16),
            "BF16" => Ok(Dtype::BF16),
            other => Err(format!("unsupported dtype {other:?}")),
        }
    }
}

pub fn decode_row(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    dtype.decode(bytes)
}

pub fn encode_row(values: &[f64], dtype: Dtype) -> Vec<u8> {
    dtype.encode(values)
}
