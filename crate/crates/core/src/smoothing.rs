//! Risk → scale-factor mapping and the softmax effect of scaling one logit.
//!
//! The scale factor is
//!
//! ```text
//! S = 1 - (1 - min_scale) * ln(1 + (smoothness - 1) * risk) / ln(smoothness)
//! ```
//!
//! so `S(0) = 1` and `S(1) = min_scale`. Larger `smoothness` bends the curve
//! down faster for moderate risks. At `smoothness = 1` the ratio is 0/0 and
//! the limit `S = 1 - (1 - min_scale) * risk` is used instead.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Within this distance of 1, `smoothness` uses the linear limit.
pub const LINEAR_LIMIT_EPS: f64 = 1e-6;

pub const DEFAULT_MIN_SCALE: f64 = 0.5;
pub const DEFAULT_SMOOTHNESS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    min_scale: f64,
    smoothness: f64,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        SmoothingParams {
            min_scale: DEFAULT_MIN_SCALE,
            smoothness: DEFAULT_SMOOTHNESS,
        }
    }
}

impl SmoothingParams {
    pub fn new(min_scale: f64, smoothness: f64) -> Result<Self> {
        if !(min_scale > 0.0 && min_scale <= 1.0) {
            return Err(Error::SmoothingParams(format!(
                "min_scale must be in (0, 1], got {min_scale}"
            )));
        }
        if !(smoothness > 0.0 && smoothness.is_finite()) {
            return Err(Error::SmoothingParams(format!(
                "smoothness must be positive and finite, got {smoothness}"
            )));
        }
        Ok(SmoothingParams {
            min_scale,
            smoothness,
        })
    }

    pub fn min_scale(&self) -> f64 {
        self.min_scale
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }
}

pub fn scale_factor(risk: f64, params: &SmoothingParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&risk) {
        return Err(Error::Domain(format!(
            "risk score must lie in [0, 1], got {risk}"
        )));
    }
    let depth = 1.0 - params.min_scale;
    let k = params.smoothness;
    let shape = if (k - 1.0).abs() < LINEAR_LIMIT_EPS {
        risk
    } else {
        // ln_1p keeps precision for small (k - 1) * risk
        ((k - 1.0) * risk).ln_1p() / (k - 1.0).ln_1p()
    };
    if shape == 0.0 {
        return Ok(1.0);
    }
    // written around min_scale so that shape = 1 lands on it exactly
    Ok((params.min_scale + depth * (1.0 - shape)).clamp(params.min_scale, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub risk: f64,
    pub scale: f64,
}

/// `steps` evenly spaced risks over [0, 1] with their scale factors.
pub fn emit_curve(params: &SmoothingParams, steps: usize) -> Result<Vec<CurvePoint>> {
    if steps < 2 {
        return Err(Error::Validation(format!(
            "curve needs at least 2 steps, got {steps}"
        )));
    }
    let last = (steps - 1) as f64;
    (0..steps)
        .map(|i| {
            // exact endpoints regardless of rounding in i / last
            let risk = if i == steps - 1 { 1.0 } else { i as f64 / last };
            Ok(CurvePoint {
                risk,
                scale: scale_factor(risk, params)?,
            })
        })
        .collect()
}

/// CSV with header `risk,scale`.
pub fn write_curve_csv<W: Write>(mut out: W, points: &[CurvePoint]) -> std::io::Result<()> {
    writeln!(out, "risk,scale")?;
    for p in points {
        writeln!(out, "{},{}", p.risk, p.scale)?;
    }
    Ok(())
}

fn softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    (logits[index] - max).exp() / denom
}

/// Probability of `logits[index]` before and after multiplying that one
/// logit by `scale`.
pub fn softmax_shift(logits: &[f64], index: usize, scale: f64) -> Result<(f64, f64)> {
    if index >= logits.len() {
        return Err(Error::Domain(format!(
            "index {index} out of range for {} logits",
            logits.len()
        )));
    }
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Domain(format!(
            "scale must be in (0, 1], got {scale}"
        )));
    }
    if let Some(bad) = logits.iter().find(|l| !l.is_finite()) {
        return Err(Error::Domain(format!("non-finite logit {bad}")));
    }
    let before = softmax_at(logits, index);
    if scale == 1.0 {
        return Ok((before, before));
    }
    let mut scaled = logits.to_vec();
    scaled[index] *= scale;
    Ok((before, softmax_at(&scaled, index)))
}
