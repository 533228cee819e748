//! Flat "key = value" configuration files: the pipeline config shared by the
//! imaging commands and the scene description consumed by `simulate`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use sphericam_core::doa::ExtractorConfig;
use sphericam_core::geometry::{
    eigenmike_geometry, load_capsule_table, subset_geometry, tetrahedral_subset, ArrayGeometry,
    DEFAULT_TESSELLATION_POINTS,
};
use sphericam_core::imaging::DEFAULT_BACKGROUND_QUANTILE;
use sphericam_core::metrics::DEFAULT_THRESHOLD_DEG;
use sphericam_core::sigproc::{DEFAULT_BAND_COUNT, DEFAULT_BAND_HIGH_HZ, DEFAULT_BAND_LOW_HZ};
use sphericam_core::simulator::{SceneSpec, SourceSignal, SourceSpec};

/// Which microphone array the pipeline images with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArraySource {
    /// Built-in 32-channel EigenMike layout.
    Eigenmike,
    /// Built-in 4-channel tetrahedral subset of the EigenMike.
    Tetra,
    /// Capsule coordinate table on disk.
    File(PathBuf),
}

/// Where the imaging parameters come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamsSource {
    /// Analytic beamformer initialization.
    Default,
    /// Saved parameter file.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub array: ArraySource,
    /// Optional 1-based channel subset applied to the array.
    pub array_subset: Option<Vec<usize>>,
    pub bands: usize,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub tessellation: usize,
    pub params: ParamsSource,
    pub upsample: bool,
    pub clusters: usize,
    pub top_pixels: usize,
    pub taper_factor: f64,
    pub reject_radius_deg: f64,
    pub merge_radius_deg: f64,
    pub threshold_deg: f64,
    /// Quantile of the aggregated map subtracted before peak extraction.
    pub background_quantile: f64,
    /// Width of rendered equirectangular images; height is half of it.
    pub render_width: usize,
    /// Fallback recording path when the command line omits one.
    pub input: Option<PathBuf>,
    /// Fallback output directory when the command line omits one.
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let extractor = ExtractorConfig::default();
        PipelineConfig {
            array: ArraySource::Eigenmike,
            array_subset: None,
            bands: DEFAULT_BAND_COUNT,
            band_low_hz: DEFAULT_BAND_LOW_HZ,
            band_high_hz: DEFAULT_BAND_HIGH_HZ,
            tessellation: DEFAULT_TESSELLATION_POINTS,
            params: ParamsSource::Default,
            upsample: false,
            clusters: extractor.k,
            top_pixels: extractor.top_pixels,
            taper_factor: extractor.taper_factor,
            reject_radius_deg: extractor.reject_radius_deg,
            merge_radius_deg: extractor.merge_radius_deg,
            threshold_deg: DEFAULT_THRESHOLD_DEG,
            background_quantile: DEFAULT_BACKGROUND_QUANTILE,
            render_width: 360,
            input: None,
            output: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = PipelineConfig::default();
        for (line_no, key, value) in parse_kv(&text)? {
            cfg.apply(&key, &value)
                .with_context(|| format!("line {line_no}"))?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "array" => {
                self.array = match value.to_ascii_lowercase().as_str() {
                    "eigenmike" => ArraySource::Eigenmike,
                    "tetra" | "tetrahedral" => ArraySource::Tetra,
                    _ => ArraySource::File(PathBuf::from(value)),
                }
            }
            "array_subset" => {
                let indices = value
                    .split(',')
                    .map(|s| parse_num::<usize>("channel index", s.trim()))
                    .collect::<Result<Vec<_>>>()?;
                self.array_subset = (!indices.is_empty()).then_some(indices);
            }
            "bands" => self.bands = parse_num(key, value)?,
            "band_low_hz" => self.band_low_hz = parse_num(key, value)?,
            "band_high_hz" => self.band_high_hz = parse_num(key, value)?,
            "tessellation" => self.tessellation = parse_num(key, value)?,
            "params" => {
                self.params = if value.eq_ignore_ascii_case("default") {
                    ParamsSource::Default
                } else {
                    ParamsSource::File(PathBuf::from(value))
                }
            }
            "upsample" => self.upsample = parse_bool(key, value)?,
            "clusters" => self.clusters = parse_num(key, value)?,
            "top_pixels" => self.top_pixels = parse_num(key, value)?,
            "taper_factor" => self.taper_factor = parse_num(key, value)?,
            "reject_radius_deg" => self.reject_radius_deg = parse_num(key, value)?,
            "merge_radius_deg" => self.merge_radius_deg = parse_num(key, value)?,
            "threshold_deg" => self.threshold_deg = parse_num(key, value)?,
            "background_quantile" => self.background_quantile = parse_num(key, value)?,
            "render_width" => self.render_width = parse_num(key, value)?,
            "input" => self.input = Some(PathBuf::from(value)),
            "output" => self.output = Some(PathBuf::from(value)),
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    /// Array geometry per the config, with any channel subset applied.
    pub fn geometry(&self) -> Result<ArrayGeometry> {
        let base = match &self.array {
            ArraySource::Eigenmike => eigenmike_geometry(),
            ArraySource::Tetra => tetrahedral_subset(&eigenmike_geometry())?,
            ArraySource::File(path) => load_capsule_table(path)?,
        };
        match &self.array_subset {
            Some(indices) => Ok(subset_geometry(&base, indices)?),
            None => Ok(base),
        }
    }

    pub fn extractor(&self) -> ExtractorConfig {
        ExtractorConfig {
            k: self.clusters,
            top_pixels: self.top_pixels,
            taper_factor: self.taper_factor,
            reject_radius_deg: self.reject_radius_deg,
            merge_radius_deg: self.merge_radius_deg,
        }
    }
}

/// Splits a config file into (1-based line, key, value) triples. Text from
/// the first '#' on a line is a comment; blank lines are skipped.
fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {line_no}: expected key = value, got {line:?}"))?;
        let key = key.trim();
        if key.is_empty() {
            bail!("line {line_no}: empty key");
        }
        entries.push((line_no, key.to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| anyhow!("{key}: {e} in {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => bail!("{key}: expected a boolean, got {value:?}"),
    }
}

/// Partially parsed `source.N.*` block of a scene file.
#[derive(Default)]
struct SourceDraft {
    signal: Option<SourceSignal>,
    trajectory: Option<Vec<(f64, f64, f64)>>,
    onset: Option<f64>,
    offset: Option<f64>,
    level_db: Option<f64>,
}

/// Parses a scene description. Scene keys are `duration`, `sample_rate`,
/// `seed`, `noise_snr_db`, plus `source.N.signal|trajectory|onset|offset|
/// level_db` blocks with N counting from 0.
pub fn parse_scene(text: &str) -> Result<SceneSpec> {
    let mut duration: Option<f64> = None;
    let mut sample_rate: f64 = 24000.0;
    let mut seed: u64 = 0;
    let mut noise_snr_db: Option<f64> = None;
    let mut drafts: BTreeMap<usize, SourceDraft> = BTreeMap::new();

    for (line_no, key, value) in parse_kv(text)? {
        let result = match key.as_str() {
            "duration" => parse_num(&key, &value).map(|v| duration = Some(v)),
            "sample_rate" => parse_num(&key, &value).map(|v| sample_rate = v),
            "seed" => parse_num(&key, &value).map(|v| seed = v),
            "noise_snr_db" => parse_num(&key, &value).map(|v| noise_snr_db = Some(v)),
            _ => split_source_key(&key).and_then(|(index, field)| {
                apply_source_field(drafts.entry(index).or_default(), field, &value)
            }),
        };
        result.with_context(|| format!("line {line_no}"))?;
    }

    let duration = duration.ok_or_else(|| anyhow!("missing required key \"duration\""))?;
    if !(sample_rate > 0.0 && sample_rate.fract() == 0.0) {
        bail!("sample_rate must be a positive integer, got {sample_rate}");
    }
    if drafts.is_empty() {
        bail!("scene declares no sources");
    }
    let mut sources = Vec::with_capacity(drafts.len());
    for (expected, (index, draft)) in drafts.into_iter().enumerate() {
        if index != expected {
            bail!("source indices must be contiguous from 0; missing source.{expected}");
        }
        let signal = draft
            .signal
            .ok_or_else(|| anyhow!("source.{index}: missing signal"))?;
        let trajectory = draft
            .trajectory
            .ok_or_else(|| anyhow!("source.{index}: missing trajectory"))?;
        sources.push(SourceSpec {
            signal,
            trajectory,
            onset: draft.onset.unwrap_or(0.0),
            offset: draft.offset.unwrap_or(duration),
            level_db: draft.level_db.unwrap_or(0.0),
        });
    }
    Ok(SceneSpec {
        duration,
        sample_rate,
        sources,
        noise_snr_db,
        seed,
    })
}

fn split_source_key(key: &str) -> Result<(usize, &str)> {
    let rest = key
        .strip_prefix("source.")
        .ok_or_else(|| anyhow!("unknown key {key:?}"))?;
    let (index, field) = rest
        .split_once('.')
        .ok_or_else(|| anyhow!("expected source.N.field, got {key:?}"))?;
    let index = parse_num::<usize>("source index", index)?;
    Ok((index, field))
}

fn apply_source_field(draft: &mut SourceDraft, field: &str, value: &str) -> Result<()> {
    match field {
        "signal" => draft.signal = Some(parse_signal(value)?),
        "trajectory" => draft.trajectory = Some(parse_trajectory(value)?),
        "onset" => draft.onset = Some(parse_num(field, value)?),
        "offset" => draft.offset = Some(parse_num(field, value)?),
        "level_db" => draft.level_db = Some(parse_num(field, value)?),
        _ => bail!("unknown source field {field:?}"),
    }
    Ok(())
}

/// `white`, `pink`, `tone <hz>`, or `file <wav path>`.
fn parse_signal(value: &str) -> Result<SourceSignal> {
    let mut parts = value.splitn(2, char::is_whitespace);
    let kind = parts.next().unwrap_or("");
    let rest = parts.next().map(str::trim).unwrap_or("");
    match (kind.to_ascii_lowercase().as_str(), rest.is_empty()) {
        ("white", true) => Ok(SourceSignal::White),
        ("pink", true) => Ok(SourceSignal::Pink),
        ("tone", false) => Ok(SourceSignal::Tone(parse_num("tone frequency", rest)?)),
        ("file", false) => Ok(SourceSignal::File(PathBuf::from(rest))),
        _ => bail!("bad signal {value:?}; expected white, pink, tone <hz>, or file <path>"),
    }
}

/// Semicolon-separated `time azimuth elevation` triples; commas also accepted
/// as separators within a triple.
fn parse_trajectory(value: &str) -> Result<Vec<(f64, f64, f64)>> {
    let mut points = Vec::new();
    for part in value.split(';') {
        let fields: Vec<&str> = part
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 3 {
            bail!("trajectory point {part:?}: expected 3 numbers");
        }
        points.push((
            parse_num("time", fields[0])?,
            parse_num("azimuth", fields[1])?,
            parse_num("elevation", fields[2])?,
        ));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_module_constants() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.bands, 9);
        assert_eq!(cfg.tessellation, 242);
        assert_eq!(cfg.clusters, 3);
        assert_eq!(cfg.top_pixels, 15);
        assert_eq!(cfg.threshold_deg, 20.0);
        assert!(!cfg.upsample);
        assert_eq!(cfg.geometry().unwrap().channel_count(), 32);
    }

    #[test]
    fn pipeline_keys_round_trip() {
        let text = "\
# comment line
array = tetra
bands = 5            # trailing comment
band_low_hz = 1000
band_high_hz = 3000
tessellation = 162
upsample = on
clusters = 2
top_pixels = 10
taper_factor = 0.5
reject_radius_deg = 12
merge_radius_deg = 18
threshold_deg = 25
background_quantile = 0.9
render_width = 180
params = weights.bin
input = in.wav
output = out
";
        let path = std::env::temp_dir().join("sphericam_cfg_round_trip.txt");
        std::fs::write(&path, text).unwrap();
        let cfg = PipelineConfig::from_file(&path).unwrap();
        std::fs::remove_file(&path).unwrap();
        assert_eq!(cfg.array, ArraySource::Tetra);
        assert_eq!(cfg.bands, 5);
        assert_eq!(cfg.band_low_hz, 1000.0);
        assert_eq!(cfg.tessellation, 162);
        assert!(cfg.upsample);
        assert_eq!(cfg.clusters, 2);
        assert_eq!(cfg.top_pixels, 10);
        assert_eq!(cfg.taper_factor, 0.5);
        assert_eq!(cfg.threshold_deg, 25.0);
        assert_eq!(cfg.background_quantile, 0.9);
        assert_eq!(cfg.render_width, 180);
        assert_eq!(cfg.params, ParamsSource::File(PathBuf::from("weights.bin")));
        assert_eq!(cfg.input.as_deref(), Some(Path::new("in.wav")));
        assert_eq!(cfg.output.as_deref(), Some(Path::new("out")));
        assert_eq!(cfg.geometry().unwrap().channel_count(), 4);
    }

    #[test]
    fn unknown_keys_and_malformed_lines_are_rejected() {
        assert!(parse_kv("key_without_equals\n").is_err());
        assert!(parse_kv("= value\n").is_err());
        let mut cfg = PipelineConfig::default();
        assert!(cfg.apply("frobnicate", "1").is_err());
        assert!(cfg.apply("bands", "many").is_err());
        assert!(cfg.apply("upsample", "maybe").is_err());
    }

    #[test]
    fn scene_parses_sources_and_defaults() {
        let scene = parse_scene(
            "duration = 2.0\n\
             seed = 7\n\
             noise_snr_db = 20\n\
             source.0.signal = white\n\
             source.0.trajectory = 0 45 -10; 1.5, 60, 0\n\
             source.1.signal = tone 950\n\
             source.1.trajectory = 0 -90 30\n\
             source.1.onset = 0.5\n\
             source.1.offset = 1.5\n\
             source.1.level_db = -6\n",
        )
        .unwrap();
        assert_eq!(scene.duration, 2.0);
        assert_eq!(scene.sample_rate, 24000.0);
        assert_eq!(scene.seed, 7);
        assert_eq!(scene.noise_snr_db, Some(20.0));
        assert_eq!(scene.sources.len(), 2);
        assert_eq!(scene.sources[0].signal, SourceSignal::White);
        assert_eq!(
            scene.sources[0].trajectory,
            vec![(0.0, 45.0, -10.0), (1.5, 60.0, 0.0)]
        );
        assert_eq!(scene.sources[0].offset, 2.0);
        assert_eq!(scene.sources[1].signal, SourceSignal::Tone(950.0));
        assert_eq!(scene.sources[1].onset, 0.5);
        assert_eq!(scene.sources[1].level_db, -6.0);
    }

    #[test]
    fn scene_rejects_gaps_and_missing_fields() {
        assert!(parse_scene("source.0.signal = white\n").is_err());
        assert!(parse_scene("duration = 1\n").is_err());
        let gap = "duration = 1\n\
                   source.1.signal = white\n\
                   source.1.trajectory = 0 0 0\n";
        assert!(parse_scene(gap).is_err());
        let missing_traj = "duration = 1\nsource.0.signal = white\n";
        assert!(parse_scene(missing_traj).is_err());
        assert!(parse_scene("duration = 1\nsample_rate = 8000.5\nsource.0.signal = white\nsource.0.trajectory = 0 0 0\n").is_err());
    }
}
