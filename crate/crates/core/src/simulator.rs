//! Free-field scene simulator: renders moving sources onto an array by
//! per-frame frequency-domain phasing and emits exact ground-truth
//! annotations on the same 100 ms frame grid.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::doa::{DoaEstimate, DoaFrame};
use crate::error::{Error, Result};
use crate::geometry::{direction_from_deg, dot3, wrap_azimuth_deg, ArrayGeometry};
use crate::sigproc::DEFAULT_FRAME_SECONDS;
use crate::wav::read_wav;

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSignal {
    /// Gaussian white noise at unit RMS.
    White,
    /// Pink (1/f) noise at unit RMS.
    Pink,
    /// Sine at the given frequency, unit RMS.
    Tone(f64),
    /// First channel of a WAV file at the scene sample rate; silence past its
    /// end.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub signal: SourceSignal,
    /// (time s, azimuth deg, elevation deg), strictly increasing in time.
    pub trajectory: Vec<(f64, f64, f64)>,
    /// Active span; the source is rendered in frames whose start time t
    /// satisfies onset <= t < offset.
    pub onset: f64,
    pub offset: f64,
    pub level_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub duration: f64,
    pub sample_rate: f64,
    pub sources: Vec<SourceSpec>,
    /// White noise per channel at this SNR relative to the mean per-channel
    /// summed source power; none = noiseless.
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
}

/// One ground-truth row: a source active in a frame, with its interpolated
/// direction at the frame start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotationRow {
    pub frame_index: usize,
    pub source_id: usize,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub confidence: f64,
}

fn validate(spec: &SceneSpec) -> Result<usize> {
    if !(spec.duration > 0.0 && spec.duration.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "duration {} must be positive",
            spec.duration
        )));
    }
    if !(spec.sample_rate > 0.0 && spec.sample_rate.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "sample rate {} must be positive",
            spec.sample_rate
        )));
    }
    for (s, src) in spec.sources.iter().enumerate() {
        if src.trajectory.is_empty() {
            return Err(Error::InvalidInput(format!(
                "source {s}: empty trajectory"
            )));
        }
        let mut last = f64::NEG_INFINITY;
        for &(t, _az, el) in &src.trajectory {
            if t < 0.0 || t > spec.duration {
                return Err(Error::InvalidInput(format!(
                    "source {s}: breakpoint time {t} outside 0..{}",
                    spec.duration
                )));
            }
            if t <= last {
                return Err(Error::InvalidInput(format!(
                    "source {s}: breakpoint times not strictly increasing at {t}"
                )));
            }
            last = t;
            if !(-90.0..=90.0).contains(&el) {
                return Err(Error::InvalidInput(format!(
                    "source {s}: elevation {el} outside [-90, 90]"
                )));
            }
        }
        if !(src.onset >= 0.0 && src.onset < src.offset && src.offset <= spec.duration) {
            return Err(Error::InvalidInput(format!(
                "source {s}: activity span {}..{} invalid for duration {}",
                src.onset, src.offset, spec.duration
            )));
        }
        if let SourceSignal::Tone(f) = src.signal {
            if !(f > 0.0 && f < spec.sample_rate / 2.0) {
                return Err(Error::InvalidInput(format!(
                    "source {s}: tone frequency {f} outside (0, Nyquist)"
                )));
            }
        }
    }
    let frame_samples = (DEFAULT_FRAME_SECONDS * spec.sample_rate).round() as usize;
    if frame_samples == 0 {
        return Err(Error::InvalidInput("frame shorter than one sample".into()));
    }
    Ok(frame_samples)
}

/// Azimuth course with the shorter way around at each leg, so interpolation
/// crosses the -180/180 seam instead of sweeping the long way.
fn unwrap_azimuths(trajectory: &[(f64, f64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(trajectory.len());
    let mut prev = wrap_azimuth_deg(trajectory[0].1);
    out.push(prev);
    for &(_, az, _) in &trajectory[1..] {
        let mut delta = (wrap_azimuth_deg(az) - wrap_azimuth_deg(prev)) % 360.0;
        if delta > 180.0 {
            delta -= 360.0;
        } else if delta < -180.0 {
            delta += 360.0;
        }
        prev += delta;
        out.push(prev);
    }
    out
}

/// Direction at time t: linear in unwrapped azimuth and elevation, clamped to
/// the first/last breakpoint outside the covered span.
fn interpolate(trajectory: &[(f64, f64, f64)], unwrapped_az: &[f64], t: f64) -> (f64, f64) {
    let first = trajectory[0];
    if t <= first.0 {
        return (wrap_azimuth_deg(unwrapped_az[0]), first.2);
    }
    let last_i = trajectory.len() - 1;
    if t >= trajectory[last_i].0 {
        return (wrap_azimuth_deg(unwrapped_az[last_i]), trajectory[last_i].2);
    }
    let hi = trajectory.partition_point(|&(bt, _, _)| bt <= t);
    let lo = hi - 1;
    let (t0, _, el0) = trajectory[lo];
    let (t1, _, el1) = trajectory[hi];
    let w = (t - t0) / (t1 - t0);
    let az = unwrapped_az[lo] + w * (unwrapped_az[hi] - unwrapped_az[lo]);
    (wrap_azimuth_deg(az), el0 + w * (el1 - el0))
}

fn unit_rms_white(rng: &mut ChaCha8Rng, samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|_| {
            // Box-Muller; u1 in (0, 1] keeps the log finite.
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

fn normalize_rms(signal: &mut [f64]) {
    let power: f64 = signal.iter().map(|s| s * s).sum::<f64>() / signal.len().max(1) as f64;
    if power > 0.0 {
        let scale = 1.0 / power.sqrt();
        for s in signal {
            *s *= scale;
        }
    }
}

/// Pink noise by the Kellet filter cascade over white noise, renormalized to
/// unit RMS.
fn unit_rms_pink(rng: &mut ChaCha8Rng, samples: usize) -> Vec<f64> {
    let white = unit_rms_white(rng, samples);
    let mut b = [0.0f64; 7];
    let mut out: Vec<f64> = white
        .iter()
        .map(|&w| {
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let pink = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            pink
        })
        .collect();
    normalize_rms(&mut out);
    out
}

fn source_samples(
    spec: &SceneSpec,
    source_id: usize,
    src: &SourceSpec,
    samples: usize,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(
        spec.seed ^ (source_id as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15),
    );
    let gain = 10f64.powf(src.level_db / 20.0);
    let mut signal = match &src.signal {
        SourceSignal::White => unit_rms_white(&mut rng, samples),
        SourceSignal::Pink => unit_rms_pink(&mut rng, samples),
        SourceSignal::Tone(f) => {
            let w = 2.0 * std::f64::consts::PI * f / spec.sample_rate;
            // sin has RMS 1/sqrt(2); scale up to unit RMS.
            (0..samples)
                .map(|t| (w * t as f64).sin() * std::f64::consts::SQRT_2)
                .collect()
        }
        SourceSignal::File(path) => {
            let audio = read_wav(path)?;
            if (audio.sample_rate as f64 - spec.sample_rate).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "{}: sample rate {} does not match scene rate {}",
                    path.display(),
                    audio.sample_rate,
                    spec.sample_rate
                )));
            }
            let mut s = audio.channels.into_iter().next().unwrap_or_default();
            s.resize(samples, 0.0);
            s
        }
    };
    for s in &mut signal {
        *s *= gain;
    }
    Ok(signal)
}

/// Renders the scene on `geom`. Each source is phased in the frequency
/// domain per 100 ms frame with the direction sampled at the frame start,
/// matching the emitted annotations exactly; the channel phase convention is
/// the one the imaging steering vectors assume. Deterministic given the seed.
pub fn simulate(spec: &SceneSpec, geom: &ArrayGeometry) -> Result<(Vec<Vec<f64>>, Vec<AnnotationRow>)> {
    let frame_samples = validate(spec)?;
    let m = geom.channel_count();
    let total_samples = (spec.duration * spec.sample_rate).round() as usize;
    let frame_count = total_samples / frame_samples;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frame_samples);
    let ifft = planner.plan_fft_inverse(frame_samples);
    let kappa_per_hz = 2.0 * std::f64::consts::PI / geom.speed_of_sound();
    let bin_hz = spec.sample_rate / frame_samples as f64;

    let mut audio = vec![vec![0.0f64; total_samples]; m];
    let mut annotations = Vec::new();

    for (source_id, src) in spec.sources.iter().enumerate() {
        let signal = source_samples(spec, source_id, src, total_samples)?;
        let unwrapped = unwrap_azimuths(&src.trajectory);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); frame_samples];
        let mut phased = vec![Complex64::new(0.0, 0.0); frame_samples];

        for frame in 0..frame_count {
            let t0 = frame as f64 * DEFAULT_FRAME_SECONDS;
            if !(src.onset <= t0 && t0 < src.offset) {
                continue;
            }
            let (az, el) = interpolate(&src.trajectory, &unwrapped, t0);
            annotations.push(AnnotationRow {
                frame_index: frame,
                source_id,
                azimuth_deg: az,
                elevation_deg: el,
                confidence: 1.0,
            });
            let dir = direction_from_deg(az, el);

            let start = frame * frame_samples;
            for (s, &x) in spectrum.iter_mut().zip(&signal[start..start + frame_samples]) {
                *s = Complex64::new(x, 0.0);
            }
            fft.process(&mut spectrum);

            for (ch, buffer) in audio.iter_mut().enumerate() {
                let delay = dot3(geom.positions()[ch], dir);
                phased.copy_from_slice(&spectrum);
                for (k, value) in phased.iter_mut().enumerate() {
                    // Signed bin frequency keeps the phased spectrum
                    // conjugate-symmetric, so the inverse transform is real.
                    let f = if 2 * k <= frame_samples {
                        k as f64 * bin_hz
                    } else {
                        (k as f64 - frame_samples as f64) * bin_hz
                    };
                    if frame_samples % 2 == 0 && 2 * k == frame_samples {
                        // The Nyquist bin has no conjugate partner; a phase
                        // there would break realness.
                        *value = Complex64::new(0.0, 0.0);
                        continue;
                    }
                    *value *= Complex64::from_polar(1.0, kappa_per_hz * f * delay);
                }
                ifft.process(&mut phased);
                let scale = 1.0 / frame_samples as f64;
                for (out, v) in buffer[start..start + frame_samples].iter_mut().zip(&phased) {
                    *out += v.re * scale;
                }
            }
        }
    }

    if let Some(snr_db) = spec.noise_snr_db {
        let signal_power: f64 = audio
            .iter()
            .map(|ch| ch.iter().map(|s| s * s).sum::<f64>() / total_samples.max(1) as f64)
            .sum::<f64>()
            / m as f64;
        let noise_power = signal_power / 10f64.powf(snr_db / 10.0);
        let sigma = noise_power.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xa5a5_5a5a_c3c3_3c3c);
        for channel in &mut audio {
            for (sample, n) in channel
                .iter_mut()
                .zip(unit_rms_white(&mut rng, total_samples))
            {
                *sample += sigma * n;
            }
        }
    }

    Ok((audio, annotations))
}

/// Groups annotation rows into per-frame DoA frames (for scoring).
pub fn to_doa_frames(rows: &[AnnotationRow]) -> Vec<DoaFrame> {
    let mut frames: Vec<DoaFrame> = Vec::new();
    for row in rows {
        let direction = direction_from_deg(row.azimuth_deg, row.elevation_deg);
        let estimate = DoaEstimate {
            direction,
            confidence: row.confidence,
        };
        match frames.iter_mut().find(|f| f.frame_index == row.frame_index) {
            Some(f) => f.estimates.push(estimate),
            None => frames.push(DoaFrame {
                frame_index: row.frame_index,
                estimates: vec![estimate],
            }),
        }
    }
    frames.sort_by_key(|f| f.frame_index);
    frames
}

pub const ANNOTATION_HEADER: &str = "frame,source_id,azimuth_deg,elevation_deg";
pub const PREDICTION_HEADER: &str = "frame,source_id,azimuth_deg,elevation_deg,confidence";

fn write_rows(rows: &[AnnotationRow], path: &Path, with_confidence: bool) -> Result<()> {
    let mut body = String::new();
    body.push_str(if with_confidence {
        PREDICTION_HEADER
    } else {
        ANNOTATION_HEADER
    });
    body.push('\n');
    for r in rows {
        if with_confidence {
            body.push_str(&format!(
                "{},{},{},{},{}\n",
                r.frame_index, r.source_id, r.azimuth_deg, r.elevation_deg, r.confidence
            ));
        } else {
            body.push_str(&format!(
                "{},{},{},{}\n",
                r.frame_index, r.source_id, r.azimuth_deg, r.elevation_deg
            ));
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Ground-truth CSV: `frame,source_id,azimuth_deg,elevation_deg`, LF endings.
pub fn write_annotations(rows: &[AnnotationRow], path: impl AsRef<Path>) -> Result<()> {
    write_rows(rows, path.as_ref(), false)
}

/// Prediction CSV: the annotation schema with a confidence column appended.
pub fn write_predictions(rows: &[AnnotationRow], path: impl AsRef<Path>) -> Result<()> {
    write_rows(rows, path.as_ref(), true)
}

/// Reads either CSV flavor; malformed rows report their 1-based line number.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let with_confidence = match lines.next() {
        Some((_, header)) if header.trim_end() == ANNOTATION_HEADER => false,
        Some((_, header)) if header.trim_end() == PREDICTION_HEADER => true,
        Some((_, header)) => {
            return Err(Error::parse(1, format!("unrecognized header {header:?}")));
        }
        None => return Err(Error::parse(1, "empty file".to_string())),
    };
    let want_fields = if with_confidence { 5 } else { 4 };
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != want_fields {
            return Err(Error::parse(
                line_no,
                format!("expected {want_fields} fields, found {}", fields.len()),
            ));
        }
        let frame_index: usize = fields[0]
            .parse()
            .map_err(|e| Error::parse(line_no, format!("frame: {e}")))?;
        let source_id: usize = fields[1]
            .parse()
            .map_err(|e| Error::parse(line_no, format!("source_id: {e}")))?;
        let azimuth_deg: f64 = fields[2]
            .parse()
            .map_err(|e| Error::parse(line_no, format!("azimuth: {e}")))?;
        let elevation_deg: f64 = fields[3]
            .parse()
            .map_err(|e| Error::parse(line_no, format!("elevation: {e}")))?;
        let confidence: f64 = if with_confidence {
            fields[4]
                .parse()
                .map_err(|e| Error::parse(line_no, format!("confidence: {e}")))?
        } else {
            1.0
        };
        if !(-180.0..180.0).contains(&azimuth_deg) {
            return Err(Error::parse(
                line_no,
                format!("azimuth {azimuth_deg} outside [-180, 180)"),
            ));
        }
        if !(-90.0..=90.0).contains(&elevation_deg) {
            return Err(Error::parse(
                line_no,
                format!("elevation {elevation_deg} outside [-90, 90]"),
            ));
        }
        rows.push(AnnotationRow {
            frame_index,
            source_id,
            azimuth_deg,
            elevation_deg,
            confidence,
        });
    }
    Ok(rows)
}
