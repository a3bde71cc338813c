//! Sentinel-1 channel preparation.
//!
//! Raw VV/VH backscatter arrives in dB. Channels are saturated at global
//! quantile bounds (estimated from a cumulative histogram pooled over every
//! image), mapped to `[0, 1]`, and optionally extended with the VV − VH
//! difference channel, which is the polarization ratio in linear scale.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FeatureVector;
use crate::io::write_atomic;

pub const HISTOGRAM_BINS: usize = 4096;
pub const DEFAULT_LOWER_QUANTILE: f64 = 0.01;
pub const DEFAULT_UPPER_QUANTILE: f64 = 0.99;
const DEGENERATE_SPAN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "dB")]
    Decibel,
    #[serde(rename = "unitless")]
    Unitless,
}

/// Multi-channel image, interleaved row-major: `data[(y * width + x) * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    units: Units,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        units: Units,
        data: Vec<f32>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidParameter(
                "raster dimensions must be positive".into(),
            ));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                what: "raster data",
                expected,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("raster"));
        }
        Ok(Raster {
            width,
            height,
            channels,
            units,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = f32> + '_ {
        self.data.iter().skip(c).step_by(self.channels).copied()
    }

    /// Copies one channel out as a single-channel raster.
    pub fn extract_channel(&self, c: usize) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            units: self.units,
            data: self.channel(c).collect(),
        }
    }

    /// Interleaves rasters of equal size and units into one multi-channel raster.
    pub fn stack(parts: &[&Raster]) -> Result<Raster> {
        let first = parts.first().ok_or(Error::EmptyInput("raster stack"))?;
        for p in parts {
            if p.width != first.width || p.height != first.height {
                return Err(Error::InvalidParameter("raster shape mismatch".into()));
            }
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(first.pixels() * channels);
        for px in 0..first.pixels() {
            for p in parts {
                data.extend_from_slice(&p.data[px * p.channels..(px + 1) * p.channels]);
            }
        }
        Ok(Raster {
            width: first.width,
            height: first.height,
            channels,
            units: first.units,
            data,
        })
    }

    fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Per-channel saturation interval `(lo, hi)` with `lo < hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationBounds {
    channels: Vec<(f64, f64)>,
}

impl SaturationBounds {
    pub fn new(channels: Vec<(f64, f64)>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::EmptyInput("saturation bounds"));
        }
        if channels
            .iter()
            .any(|&(lo, hi)| !lo.is_finite() || !hi.is_finite() || lo >= hi)
        {
            return Err(Error::InvalidParameter(
                "saturation bounds need finite lo < hi".into(),
            ));
        }
        Ok(SaturationBounds { channels })
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn get(&self, c: usize) -> (f64, f64) {
        self.channels[c]
    }

    pub fn as_slice(&self) -> &[(f64, f64)] {
        &self.channels
    }

    fn subset(&self, n: usize) -> SaturationBounds {
        SaturationBounds {
            channels: self.channels[..n].to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
struct ChannelHistogram {
    min: f64,
    width: f64,
    counts: Vec<u64>,
}

impl ChannelHistogram {
    fn new(min: f64, max: f64) -> Self {
        ChannelHistogram {
            min,
            width: (max - min) / HISTOGRAM_BINS as f64,
            counts: vec![0; HISTOGRAM_BINS],
        }
    }

    fn bin(&self, v: f64) -> usize {
        if self.width == 0.0 {
            return 0;
        }
        (((v - self.min) / self.width) as usize).min(HISTOGRAM_BINS - 1)
    }

    fn merge(mut self, other: &ChannelHistogram) -> Self {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self
    }

    /// First bin whose cumulative count reaches the 1-based `rank`.
    fn bin_of_rank(&self, rank: u64) -> usize {
        let mut acc = 0;
        for (b, &c) in self.counts.iter().enumerate() {
            acc += c;
            if acc >= rank {
                return b;
            }
        }
        HISTOGRAM_BINS - 1
    }
}

/// 1-based nearest rank of quantile `q` among `n` sorted values.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    ((q * n as f64).ceil() as usize).clamp(1, n)
}

/// Nearest-rank quantile of an already sorted slice.
pub fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[nearest_rank(q, sorted.len()) - 1]
}

/// Global per-channel quantile bounds over all pixels of all images.
///
/// The lower bound is the lower edge and the upper bound the upper edge of
/// the histogram bin holding the requested nearest-rank value, so both are
/// within one bin width of the exact quantile and `(0, 1)` yields `(min, max)`.
pub fn compute_saturation_bounds(
    images: &[Raster],
    lower_q: f64,
    upper_q: f64,
) -> Result<SaturationBounds> {
    if !(0.0 <= lower_q && lower_q < upper_q && upper_q <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "quantiles must satisfy 0 <= lower < upper <= 1, got ({lower_q}, {upper_q})"
        )));
    }
    let first = images.first().ok_or(Error::EmptyInput("image stream"))?;
    let channels = first.channels;
    if let Some(r) = images.iter().find(|r| r.channels != channels) {
        return Err(Error::LengthMismatch {
            what: "raster channels",
            expected: channels,
            found: r.channels,
        });
    }
    if images.iter().any(|r| r.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("raster"));
    }

    let extent = |r: &Raster| -> Vec<(f64, f64)> {
        (0..channels)
            .map(|c| {
                r.channel(c).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v as f64), hi.max(v as f64))
                })
            })
            .collect()
    };
    let ranges = images.par_iter().map(extent).reduce(
        || vec![(f64::INFINITY, f64::NEG_INFINITY); channels],
        |a, b| {
            a.iter()
                .zip(&b)
                .map(|(x, y)| (x.0.min(y.0), x.1.max(y.1)))
                .collect()
        },
    );

    let empty: Vec<ChannelHistogram> = ranges
        .iter()
        .map(|&(lo, hi)| ChannelHistogram::new(lo, hi))
        .collect();
    let hists = images
        .par_iter()
        .map(|r| {
            let mut h = empty.clone();
            for (c, hc) in h.iter_mut().enumerate() {
                for v in r.channel(c) {
                    let b = hc.bin(v as f64);
                    hc.counts[b] += 1;
                }
            }
            h
        })
        .reduce(
            || empty.clone(),
            |a, b| a.into_iter().zip(&b).map(|(x, y)| x.merge(y)).collect(),
        );

    let n: usize = images.iter().map(Raster::pixels).sum();
    let lo_rank = nearest_rank(lower_q, n) as u64;
    let hi_rank = nearest_rank(upper_q, n) as u64;
    let bounds = hists
        .iter()
        .zip(&ranges)
        .map(|(h, &(min, max))| {
            let lo = min + h.bin_of_rank(lo_rank) as f64 * h.width;
            let hb = h.bin_of_rank(hi_rank);
            let mut hi = if hb == HISTOGRAM_BINS - 1 {
                max
            } else {
                min + (hb + 1) as f64 * h.width
            };
            if hi <= lo {
                hi = lo + DEGENERATE_SPAN;
            }
            (lo, hi)
        })
        .collect();
    SaturationBounds::new(bounds)
}

/// Clips each channel to its bounds and maps it affinely onto `[0, 1]`.
pub fn normalize_channel(r: &Raster, b: &SaturationBounds) -> Result<Raster> {
    if b.len() != r.channels {
        return Err(Error::LengthMismatch {
            what: "saturation bounds",
            expected: r.channels,
            found: b.len(),
        });
    }
    let data = r
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (lo, hi) = b.get(i % r.channels);
            (((v as f64).clamp(lo, hi) - lo) / (hi - lo)).clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(Raster {
        data,
        units: Units::Unitless,
        ..*r
    })
}

/// Pixelwise VV − VH in dB.
pub fn make_ratio_channel(vv: &Raster, vh: &Raster) -> Result<Raster> {
    if vv.channels != 1 || vh.channels != 1 || !vv.same_shape(vh) {
        return Err(Error::InvalidParameter(
            "ratio channel needs two single-channel rasters of equal shape".into(),
        ));
    }
    let data = vv.data.iter().zip(&vh.data).map(|(a, b)| a - b).collect();
    Ok(Raster {
        data,
        units: Units::Decibel,
        ..*vv
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SarMode {
    #[serde(rename = "2ch")]
    TwoChannel,
    #[serde(rename = "3ch")]
    ThreeChannel,
}

impl SarMode {
    pub fn channels(self) -> usize {
        match self {
            SarMode::TwoChannel => 2,
            SarMode::ThreeChannel => 3,
        }
    }
}

impl FromStr for SarMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "2ch" | "two_ch" | "2" => Ok(SarMode::TwoChannel),
            "3ch" | "three_ch" | "3" => Ok(SarMode::ThreeChannel),
            other => Err(Error::Config(format!("unknown SAR mode `{other}`"))),
        }
    }
}

/// Raw `[VV, VH, VV − VH]` dB stack, the input for bound estimation.
pub fn raw_sar_stack(vv: &Raster, vh: &Raster) -> Result<Raster> {
    let ratio = make_ratio_channel(vv, vh)?;
    Raster::stack(&[vv, vh, &ratio])
}

/// Normalized network input: `[VV, VH]` or `[VV, VH, VV − VH]`.
///
/// The difference is taken on raw dB values and then normalized with its own
/// (third) bounds entry. Two-channel mode accepts 2 or 3 bounds so both modes
/// can share one bounds file.
pub fn assemble_sar_input(
    vv: &Raster,
    vh: &Raster,
    mode: SarMode,
    bounds: &SaturationBounds,
) -> Result<Raster> {
    let ok = match mode {
        SarMode::TwoChannel => bounds.len() == 2 || bounds.len() == 3,
        SarMode::ThreeChannel => bounds.len() == 3,
    };
    if !ok {
        return Err(Error::LengthMismatch {
            what: "saturation bounds",
            expected: mode.channels(),
            found: bounds.len(),
        });
    }
    let raw = match mode {
        SarMode::TwoChannel => {
            if vv.channels != 1 || vh.channels != 1 || !vv.same_shape(vh) {
                return Err(Error::InvalidParameter(
                    "SAR input needs two single-channel rasters of equal shape".into(),
                ));
            }
            Raster::stack(&[vv, vh])?
        }
        SarMode::ThreeChannel => raw_sar_stack(vv, vh)?,
    };
    normalize_channel(&raw, &bounds.subset(mode.channels()))
}

/// Per channel: mean, population standard deviation and the requested
/// nearest-rank quantiles, concatenated in channel order.
pub fn summarize_features(r: &Raster, quantiles: &[f64]) -> Result<FeatureVector> {
    if quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) || !quantiles.is_sorted() {
        return Err(Error::InvalidParameter(
            "quantiles must be sorted and within [0, 1]".into(),
        ));
    }
    let mut out = Vec::with_capacity(r.channels * (2 + quantiles.len()));
    let n = r.pixels() as f64;
    for c in 0..r.channels {
        let mut vals: Vec<f64> = r.channel(c).map(f64::from).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out.push(mean);
        out.push(var.sqrt());
        vals.sort_by(f64::total_cmp);
        out.extend(quantiles.iter().map(|&q| sorted_quantile(&vals, q)));
    }
    FeatureVector::new(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    width: usize,
    height: usize,
    channels: usize,
    units: Units,
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<base>.bin` (little-endian f32) and `<base>.json`.
pub fn write_raster(base: impl AsRef<Path>, r: &Raster) -> Result<()> {
    let base = base.as_ref();
    let bytes: Vec<u8> = r.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(with_ext(base, "bin"), &bytes)?;
    let side = Sidecar {
        width: r.width,
        height: r.height,
        channels: r.channels,
        units: r.units,
    };
    write_atomic(with_ext(base, "json"), serde_json::to_string(&side)?.as_bytes())
}

/// Paths a raster at `base` consists of.
pub fn raster_files(base: impl AsRef<Path>) -> [PathBuf; 2] {
    let base = base.as_ref();
    [with_ext(base, "bin"), with_ext(base, "json")]
}

pub fn read_raster(base: impl AsRef<Path>) -> Result<Raster> {
    let [bin, json] = raster_files(base);
    let side: Sidecar = serde_json::from_str(&fs::read_to_string(json)?)?;
    let bytes = fs::read(bin)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format("raster payload is not a whole number of f32".into()));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Raster::new(side.width, side.height, side.channels, side.units, data)
}
