//! Per-frame, per-band covariance estimation from multichannel audio.

use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::C64;

pub const DEFAULT_FRAME_SECONDS: f64 = 0.1;
pub const STFT_WINDOW: usize = 1024;
pub const STFT_HOP: usize = 512;
pub const DEFAULT_BAND_COUNT: usize = 9;
pub const DEFAULT_BAND_LOW_HZ: f64 = 1500.0;
pub const DEFAULT_BAND_HIGH_HZ: f64 = 4500.0;

/// Linearly spaced analysis bands with edges at midpoints between centers.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPlan {
    sample_rate: f64,
    frame_seconds: f64,
    centers: Vec<f64>,
    edges: Vec<(f64, f64)>,
}

impl BandPlan {
    pub fn linear(low_hz: f64, high_hz: f64, bands: usize, sample_rate: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if bands < 2 {
            return Err(Error::InvalidInput(format!(
                "band plan needs at least 2 bands, got {bands}"
            )));
        }
        if !(low_hz.is_finite() && high_hz.is_finite() && low_hz > 0.0 && high_hz > low_hz) {
            return Err(Error::InvalidInput(format!(
                "band range [{low_hz}, {high_hz}] Hz is not ascending and positive"
            )));
        }
        let step = (high_hz - low_hz) / (bands - 1) as f64;
        let centers: Vec<f64> = (0..bands).map(|i| low_hz + step * i as f64).collect();
        let edges: Vec<(f64, f64)> = centers
            .iter()
            .map(|&c| (c - step / 2.0, c + step / 2.0))
            .collect();
        let nyquist = sample_rate / 2.0;
        let (_, top_edge) = *edges.last().expect("bands >= 2");
        if top_edge >= nyquist {
            return Err(Error::BandAboveNyquist {
                centre_hz: *centers.last().expect("bands >= 2"),
                edge_hz: top_edge,
                nyquist_hz: nyquist,
            });
        }
        if edges[0].0 <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "lowest band edge {} Hz must be positive",
                edges[0].0
            )));
        }
        let plan = BandPlan {
            sample_rate,
            frame_seconds: DEFAULT_FRAME_SECONDS,
            centers,
            edges,
        };
        if plan.frame_samples() < STFT_WINDOW {
            return Err(Error::InvalidInput(format!(
                "frame of {} samples at {sample_rate} Hz is shorter than the {STFT_WINDOW}-sample analysis window",
                plan.frame_samples()
            )));
        }
        Ok(plan)
    }

    pub fn band_count(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn edges(&self) -> &[(f64, f64)] {
        &self.edges
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn frame_seconds(&self) -> f64 {
        self.frame_seconds
    }

    pub fn frame_samples(&self) -> usize {
        (self.frame_seconds * self.sample_rate).round() as usize
    }

    /// FFT bin indices (of a `STFT_WINDOW`-point transform) whose center
    /// frequency falls inside band `band`'s half-open [low, high) range.
    pub fn band_bins(&self, band: usize) -> Vec<usize> {
        let (lo, hi) = self.edges[band];
        let df = self.sample_rate / STFT_WINDOW as f64;
        (0..=STFT_WINDOW / 2)
            .filter(|&k| {
                let f = k as f64 * df;
                f >= lo && f < hi
            })
            .collect()
    }
}

/// Nine linearly spaced bands, 1.5 kHz to 4.5 kHz.
pub fn default_band_plan(sample_rate: f64) -> Result<BandPlan> {
    BandPlan::linear(
        DEFAULT_BAND_LOW_HZ,
        DEFAULT_BAND_HIGH_HZ,
        DEFAULT_BAND_COUNT,
        sample_rate,
    )
}

/// Per-band Hermitian covariance matrices of one 100 ms frame.
#[derive(Debug, Clone)]
pub struct CovarianceFrame {
    pub frame_index: usize,
    matrices: Vec<Array2<C64>>,
    plan: Arc<BandPlan>,
}

impl CovarianceFrame {
    pub fn new(frame_index: usize, matrices: Vec<Array2<C64>>, plan: Arc<BandPlan>) -> Result<Self> {
        if matrices.len() != plan.band_count() {
            return Err(Error::dims(
                "CovarianceFrame",
                format!("{} band matrices", plan.band_count()),
                format!("{}", matrices.len()),
            ));
        }
        let m = matrices.first().map(|a| a.nrows()).unwrap_or(0);
        for a in &matrices {
            if a.nrows() != m || a.ncols() != m {
                return Err(Error::dims(
                    "CovarianceFrame",
                    format!("{m}x{m}"),
                    format!("{}x{}", a.nrows(), a.ncols()),
                ));
            }
        }
        Ok(CovarianceFrame {
            frame_index,
            matrices,
            plan,
        })
    }

    pub fn band_count(&self) -> usize {
        self.matrices.len()
    }

    pub fn channel_count(&self) -> usize {
        self.matrices.first().map(|a| a.nrows()).unwrap_or(0)
    }

    pub fn matrix(&self, band: usize) -> &Array2<C64> {
        &self.matrices[band]
    }

    pub fn matrices(&self) -> &[Array2<C64>] {
        &self.matrices
    }

    pub fn plan(&self) -> &Arc<BandPlan> {
        &self.plan
    }

    /// Same frame with each band matrix rescaled to unit trace (bands with
    /// nonpositive trace are left untouched). Imaging works on relative
    /// inter-channel structure, so this makes the downstream map contrast
    /// independent of absolute signal level.
    pub fn trace_normalized(&self) -> CovarianceFrame {
        let matrices = self
            .matrices
            .iter()
            .map(|sigma| {
                let trace: f64 = sigma.diag().iter().map(|z| z.re).sum();
                if trace > 0.0 {
                    sigma.mapv(|z| z / trace)
                } else {
                    sigma.clone()
                }
            })
            .collect();
        CovarianceFrame {
            frame_index: self.frame_index,
            matrices,
            plan: Arc::clone(&self.plan),
        }
    }
}

/// Splits audio into 100 ms frames and estimates a covariance matrix per band
/// by averaging outer products of STFT snapshot vectors (1024-sample periodic
/// Hann window, hop 512). The trailing partial frame is dropped; audio shorter
/// than one frame yields an empty sequence.
pub fn band_covariances(channels: &[Vec<f64>], plan: &Arc<BandPlan>) -> Result<Vec<CovarianceFrame>> {
    let m = channels.len();
    if m < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 channels, got {m}"
        )));
    }
    let samples = channels[0].len();
    for (i, ch) in channels.iter().enumerate() {
        if ch.len() != samples {
            return Err(Error::dims(
                "band_covariances",
                format!("{samples} samples per channel"),
                format!("{} samples in channel {}", ch.len(), i + 1),
            ));
        }
    }
    let frame_len = plan.frame_samples();
    let n_frames = samples / frame_len;
    if n_frames == 0 {
        return Ok(Vec::new());
    }

    let window: Vec<f64> = (0..STFT_WINDOW)
        .map(|t| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * t as f64 / STFT_WINDOW as f64).cos())
        .collect();
    let bins: Vec<Vec<usize>> = (0..plan.band_count()).map(|f| plan.band_bins(f)).collect();
    let offsets: Vec<usize> = (0..=frame_len - STFT_WINDOW).step_by(STFT_HOP).collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(STFT_WINDOW);

    let frames: Vec<CovarianceFrame> = (0..n_frames)
        .into_par_iter()
        .map(|frame_index| {
            covariance_of_frame(
                channels,
                frame_index,
                frame_len,
                &offsets,
                &window,
                &bins,
                fft.as_ref(),
                plan,
            )
        })
        .collect();
    Ok(frames)
}

#[allow(clippy::too_many_arguments)]
fn covariance_of_frame(
    channels: &[Vec<f64>],
    frame_index: usize,
    frame_len: usize,
    offsets: &[usize],
    window: &[f64],
    bins: &[Vec<usize>],
    fft: &dyn Fft<f64>,
    plan: &Arc<BandPlan>,
) -> CovarianceFrame {
    let m = channels.len();
    let half = STFT_WINDOW / 2 + 1;
    let start = frame_index * frame_len;
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![C64::new(0.0, 0.0); STFT_WINDOW];

    // Spectra of every snapshot: [snapshot][channel * half + bin].
    let mut spectra = vec![C64::new(0.0, 0.0); offsets.len() * m * half];
    for (s, &off) in offsets.iter().enumerate() {
        for ch in 0..m {
            let src = &channels[ch][start + off..start + off + STFT_WINDOW];
            for ((b, &x), &w) in buf.iter_mut().zip(src).zip(window) {
                *b = C64::new(x * w, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            let dst = &mut spectra[(s * m + ch) * half..(s * m + ch + 1) * half];
            dst.copy_from_slice(&buf[..half]);
        }
    }

    let mut matrices = Vec::with_capacity(bins.len());
    for band_bins in bins {
        let mut acc = Array2::<C64>::zeros((m, m));
        for s in 0..offsets.len() {
            for &k in band_bins {
                for i in 0..m {
                    let si = spectra[(s * m + i) * half + k];
                    for j in 0..m {
                        let sj = spectra[(s * m + j) * half + k];
                        acc[[i, j]] += si * sj.conj();
                    }
                }
            }
        }
        let count = offsets.len() * band_bins.len();
        if count > 0 {
            let inv = 1.0 / count as f64;
            acc.mapv_inplace(|z| z * inv);
        }
        matrices.push(acc);
    }
    CovarianceFrame {
        frame_index,
        matrices,
        plan: Arc::clone(plan),
    }
}
