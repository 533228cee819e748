//! Pipeline assembly shared by the imaging commands, plus the binary
//! intensity dump and cleanup of partial outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use rayon::prelude::*;
use sphericam_core::doa::{aggregate_bands, localize_recording, DoaFrame};
use sphericam_core::geometry::{
    build_graph_laplacian, build_tessellation, tetrahedral_subset, ArrayGeometry, GraphLaplacian,
    Tessellation, DEFAULT_KNN,
};
use sphericam_core::imaging::{
    deepwave_forward, default_params, load_params, subtract_background, DeepWaveParams,
    IntensityMap,
};
use sphericam_core::sigproc::{band_covariances, BandPlan, CovarianceFrame};
use sphericam_core::upsampler::{upsample_covariance, UpsampleRequest};
use sphericam_core::wav::WavAudio;

use crate::config::{ParamsSource, PipelineConfig};

/// Everything derived from the config plus the recording's sample rate.
pub struct Chain {
    /// Geometry the intensity maps are computed on.
    pub geom: ArrayGeometry,
    /// Capture geometry when the 4-to-32 upsampling path is active.
    pub low_geom: Option<ArrayGeometry>,
    pub tess: Arc<Tessellation>,
    pub plan: Arc<BandPlan>,
    lap: GraphLaplacian,
    params: DeepWaveParams,
    background_quantile: f64,
}

impl Chain {
    pub fn new(cfg: &PipelineConfig, sample_rate: f64, upsample: bool) -> Result<Chain> {
        let geom = cfg.geometry().context("array geometry")?;
        let low_geom = upsample
            .then(|| tetrahedral_subset(&geom))
            .transpose()
            .context("upsampling capture geometry")?;
        let tess = Arc::new(build_tessellation(cfg.tessellation).context("tessellation")?);
        let plan = Arc::new(
            BandPlan::linear(cfg.band_low_hz, cfg.band_high_hz, cfg.bands, sample_rate)
                .context("band plan")?,
        );
        let lap = build_graph_laplacian(&tess, DEFAULT_KNN).context("graph laplacian")?;
        let params = match &cfg.params {
            ParamsSource::Default => default_params(&geom, &tess, &plan),
            ParamsSource::File(path) => load_params(path),
        }
        .context("imaging parameters")?;
        if params.band_count() != plan.band_count()
            || params.channel_count() != geom.channel_count()
            || params.node_count() != tess.len()
        {
            bail!(
                "imaging parameters are {} bands x {} channels x {} nodes, \
                 pipeline needs {} x {} x {}",
                params.band_count(),
                params.channel_count(),
                params.node_count(),
                plan.band_count(),
                geom.channel_count(),
                tess.len()
            );
        }
        Ok(Chain {
            geom,
            low_geom,
            tess,
            plan,
            lap,
            params,
            background_quantile: cfg.background_quantile,
        })
    }

    /// Channel count the input recording must carry.
    pub fn capture_channels(&self) -> usize {
        self.low_geom
            .as_ref()
            .unwrap_or(&self.geom)
            .channel_count()
    }

    /// Recording to per-frame covariances, upsampled to the imaging geometry
    /// when a capture geometry is set.
    pub fn covariances(&self, audio: &WavAudio) -> Result<Vec<CovarianceFrame>> {
        if audio.channel_count() != self.capture_channels() {
            bail!(
                "recording has {} channels, array expects {}",
                audio.channel_count(),
                self.capture_channels()
            );
        }
        let frames = band_covariances(&audio.channels, &self.plan).context("covariance")?;
        let Some(low) = &self.low_geom else {
            return Ok(frames);
        };
        frames
            .par_iter()
            .map(|fr| {
                let req = UpsampleRequest {
                    low_res: fr.matrices().to_vec(),
                    low_geom: low.clone(),
                    target_geom: self.geom.clone(),
                    tess: Arc::clone(&self.tess),
                    plan: Arc::clone(&self.plan),
                };
                let out = upsample_covariance(&req)?;
                CovarianceFrame::new(fr.frame_index, out.covariances, Arc::clone(&self.plan))
            })
            .collect::<sphericam_core::Result<Vec<_>>>()
            .context("upsampling")
    }

    /// Per-band intensity maps, one per frame.
    pub fn intensity_maps(&self, frames: &[CovarianceFrame]) -> Result<Vec<IntensityMap>> {
        frames
            .iter()
            .map(|fr| deepwave_forward(&fr.trace_normalized(), &self.params, &self.lap, &self.tess))
            .collect::<sphericam_core::Result<Vec<_>>>()
            .context("imaging")
    }

    /// Direction estimates per frame. Bands are aggregated and the broad
    /// positive background is subtracted so only lobe cores feed the
    /// extractor.
    pub fn localize(&self, frames: &[CovarianceFrame], cfg: &PipelineConfig) -> Result<Vec<DoaFrame>> {
        let maps = self.intensity_maps(frames)?;
        let sparse = maps
            .iter()
            .map(|map| {
                let agg = aggregate_bands(map);
                let row = Array2::from_shape_vec((1, agg.len()), agg).expect("1 x n row");
                let one = IntensityMap::new(map.frame_index, row, Arc::clone(&self.tess))?;
                subtract_background(&one, self.background_quantile)
            })
            .collect::<sphericam_core::Result<Vec<_>>>()
            .context("background subtraction")?;
        localize_recording(&sparse, &cfg.extractor()).context("extraction")
    }
}

/// Writes the binary intensity dump: magic "SIMD", then little-endian u32
/// version, frame count, band count, and node count, followed by frame-major
/// (band-major within a frame) float32 intensities.
pub fn write_sim_dump(
    path: &Path,
    maps: &[IntensityMap],
    band_count: usize,
    node_count: usize,
) -> Result<()> {
    let mut body = Vec::with_capacity(20 + maps.len() * band_count * node_count * 4);
    body.extend_from_slice(b"SIMD");
    for header in [1u32, u32::try_from(maps.len())?, u32::try_from(band_count)?, u32::try_from(node_count)?] {
        body.extend_from_slice(&header.to_le_bytes());
    }
    for map in maps {
        debug_assert_eq!((map.band_count(), map.node_count()), (band_count, node_count));
        for value in map.bands().iter() {
            body.extend_from_slice(&(*value as f32).to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).with_context(|| path.display().to_string())?;
    file.write_all(&body)
        .with_context(|| path.display().to_string())
}

/// Removes everything registered with it unless the command commits, so a
/// failed run leaves no partial outputs behind.
pub struct OutputGuard {
    files: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub fn new() -> OutputGuard {
        OutputGuard {
            files: Vec::new(),
            committed: false,
        }
    }

    /// Registers a path about to be written.
    pub fn track<'a>(&mut self, path: &'a Path) -> &'a Path {
        self.files.push(path.to_path_buf());
        path
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for path in &self.files {
                let _ = fs::remove_file(path);
            }
        }
    }
}
