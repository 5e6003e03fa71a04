//! Temperature smoothing and finite-difference derivative targets.
//!
//! Derivatives are taken per phase segment so that no difference stencil
//! mixes the heating and cooling regimes: each segment's interior samples
//! get central differences, its endpoint samples get one-sided estimates
//! that are computed but masked invalid (they are first-order accurate and
//! would bias the fit). Smoothing likewise operates on one segment at a
//! time via [`smooth_segmented`].

use crate::error::{Error, Result};
use crate::timeseries::PhaseTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothMethod {
    None,
    MovingAverage,
}

/// Smoother selection; the default is a centered moving average of width 5
/// applied to temperature channels only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmootherConfig {
    pub method: SmoothMethod,
    /// Window width; must be odd.
    pub window: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            method: SmoothMethod::MovingAverage,
            window: 5,
        }
    }
}

impl SmootherConfig {
    pub fn none() -> Self {
        Self {
            method: SmoothMethod::None,
            window: 1,
        }
    }
}

/// Centered moving average with the window shrinking symmetrically at the
/// boundaries; `SmoothMethod::None` is the identity.
pub fn smooth(series: &[f64], config: SmootherConfig) -> Result<Vec<f64>> {
    match config.method {
        SmoothMethod::None => Ok(series.to_vec()),
        SmoothMethod::MovingAverage => {
            if config.window % 2 == 0 {
                return Err(Error::Config(format!(
                    "moving-average window must be odd, got {}",
                    config.window
                )));
            }
            if config.window > series.len() {
                return Err(Error::Config(format!(
                    "moving-average window {} exceeds series length {}",
                    config.window,
                    series.len()
                )));
            }
            let half = config.window / 2;
            let n = series.len();
            let out = (0..n)
                .map(|i| {
                    let w = half.min(i).min(n - 1 - i);
                    let slice = &series[i - w..=i + w];
                    slice.iter().sum::<f64>() / slice.len() as f64
                })
                .collect();
            Ok(out)
        }
    }
}

/// Apply [`smooth`] independently to each phase segment.
pub fn smooth_segmented(
    series: &[f64],
    tags: &[PhaseTag],
    config: SmootherConfig,
) -> Result<Vec<f64>> {
    if series.len() != tags.len() {
        return Err(Error::Config(format!(
            "series length {} does not match tag count {}",
            series.len(),
            tags.len()
        )));
    }
    if matches!(config.method, SmoothMethod::None) {
        return Ok(series.to_vec());
    }
    let mut out = Vec::with_capacity(series.len());
    for (start, end) in segment_ranges(tags) {
        let seg = &series[start..end];
        // Shrink the window for segments shorter than it.
        let mut cfg = config;
        if cfg.window > seg.len() {
            cfg.window = if seg.len() % 2 == 0 {
                seg.len().saturating_sub(1).max(1)
            } else {
                seg.len()
            };
        }
        out.extend(smooth(seg, cfg)?);
    }
    Ok(out)
}

/// Per-sample derivative values plus a validity mask. Masked samples
/// (segment endpoints, too-short segments) are excluded from regression.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSeries {
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DerivativeSeries {
    pub fn new(values: Vec<f64>, valid: Vec<bool>) -> Self {
        assert_eq!(values.len(), valid.len());
        Self { values, valid }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

fn segment_ranges(tags: &[PhaseTag]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=tags.len() {
        if i == tags.len() || tags[i] != tags[start] {
            out.push((start, i));
            start = i;
        }
    }
    out
}

/// Finite-difference time derivative, segment by segment.
///
/// Interior samples get the central difference
/// `(x[i+1] - x[i-1]) / (t[i+1] - t[i-1])`; segment endpoints get one-sided
/// differences that are masked invalid. Segments shorter than three samples
/// are masked entirely (with a warning).
pub fn differentiate(series: &[f64], t: &[f64], tags: &[PhaseTag]) -> Result<DerivativeSeries> {
    let n = series.len();
    if t.len() != n || tags.len() != n {
        return Err(Error::Config(format!(
            "differentiate: series ({n}), timestamps ({}), and tags ({}) must align",
            t.len(),
            tags.len()
        )));
    }
    for i in 1..n {
        if t[i] <= t[i - 1] {
            return Err(Error::Data(format!(
                "timestamps not strictly increasing at sample {i}"
            )));
        }
    }

    let mut values = vec![0.0; n];
    let mut valid = vec![false; n];
    for (start, end) in segment_ranges(tags) {
        let len = end - start;
        if len < 3 {
            log::warn!(
                "phase segment of {len} sample(s) at index {start} is too short to differentiate; masked"
            );
            if len == 2 {
                let d = (series[start + 1] - series[start]) / (t[start + 1] - t[start]);
                values[start] = d;
                values[start + 1] = d;
            }
            continue;
        }
        for i in start + 1..end - 1 {
            values[i] = (series[i + 1] - series[i - 1]) / (t[i + 1] - t[i - 1]);
            valid[i] = true;
        }
        // One-sided endpoint estimates, kept for inspection but not for
        // fitting.
        values[start] = (series[start + 1] - series[start]) / (t[start + 1] - t[start]);
        values[end - 1] = (series[end - 1] - series[end - 2]) / (t[end - 1] - t[end - 2]);
    }

    Ok(DerivativeSeries::new(values, valid))
}
