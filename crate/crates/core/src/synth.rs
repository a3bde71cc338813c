//! Seeded synthetic multimodal datasets.
//!
//! Each sample gets independent Bernoulli class bits (closed under the
//! hierarchy afterwards) and one feature vector per modality:
//!
//! ```text
//! x_m = signal_scale · Σ_j bit_j · d[j][m] · e_{m,j} + N(0, noise_sigma² I)
//! ```
//!
//! where `e_{m,·}` are orthonormal directions drawn from the seed and
//! `d[j][m]` is the detectability of class `j` in modality `m`. The test
//! split can be displaced by `domain_shift` along a unit direction inside
//! the class subspace.
//!
//! Randomness is counter based: every (purpose, index) pair keys its own
//! ChaCha stream, so any sample can be regenerated on its own.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FeatureVector;
use crate::io::{write_atomic, Matrix};
use crate::sarprep::{Raster, Units};
use crate::taxonomy::{hierarchy_closure, LabelSet, Nomenclature};

const PURPOSE_LABELS: u64 = 1;
const PURPOSE_FEATURES: u64 = 2;
const PURPOSE_DIRECTIONS: u64 = 3;
const PURPOSE_SHIFT: u64 = 4;
const PURPOSE_RASTER: u64 = 5;

/// Sensor modality. Index 0 is SAR (Sentinel-1), index 1 optical (Sentinel-2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Sar,
    Optical,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Sar, Modality::Optical];

    pub fn index(self) -> usize {
        match self {
            Modality::Sar => 0,
            Modality::Optical => 1,
        }
    }

    /// File tag used in dataset exports.
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Sar => "s1",
            Modality::Optical => "s2",
        }
    }
}

/// Per-class detectability in each modality, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detectability {
    pub sar: f64,
    pub optical: f64,
}

impl Detectability {
    pub fn get(&self, m: Modality) -> f64 {
        match m {
            Modality::Sar => self.sar,
            Modality::Optical => self.optical,
        }
    }
}

/// Synthetic VV/VH raster parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SarSynthConfig {
    /// Class whose bit raises the VV−VH variance.
    pub volume_class: usize,
    /// Ratio of VV−VH variance with and without the volume bit.
    pub variance_factor: f64,
    pub vv_db: f64,
    pub vh_db: f64,
    pub pixel_sigma_db: f64,
    /// VV/VH pixel correlation without the volume bit.
    pub base_correlation: f64,
    /// dB offset (both channels) per unit SAR detectability of any other set class.
    pub class_offset_db: f64,
}

impl Default for SarSynthConfig {
    fn default() -> Self {
        SarSynthConfig {
            volume_class: 0,
            variance_factor: 4.0,
            vv_db: -10.0,
            vh_db: -17.0,
            pixel_sigma_db: 1.5,
            base_correlation: 0.9,
            class_offset_db: 3.0,
        }
    }
}

impl SarSynthConfig {
    /// Correlation that multiplies the difference variance by `variance_factor`.
    pub fn volume_correlation(&self) -> f64 {
        1.0 - self.variance_factor * (1.0 - self.base_correlation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub nomenclature: Nomenclature,
    pub n_samples: usize,
    pub seed: u64,
    pub class_freqs: Vec<f64>,
    pub detectability: Vec<Detectability>,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_signal_scale")]
    pub signal_scale: f64,
    #[serde(default)]
    pub domain_shift: f64,
    #[serde(default = "default_split_fractions")]
    pub split_fractions: [f64; 3],
    pub feature_dim: usize,
    #[serde(default)]
    pub sar: SarSynthConfig,
}

fn default_noise_sigma() -> f64 {
    0.5
}

fn default_signal_scale() -> f64 {
    2.0
}

fn default_split_fractions() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

impl SynthConfig {
    /// Defaults around a nomenclature: every class at frequency 0.2 and
    /// detectability 0.9 in both modalities, feature dimension `N`.
    pub fn new(nomenclature: Nomenclature, n_samples: usize, seed: u64) -> Self {
        let n = nomenclature.len();
        SynthConfig {
            nomenclature,
            n_samples,
            seed,
            class_freqs: vec![0.2; n],
            detectability: vec![
                Detectability {
                    sar: 0.9,
                    optical: 0.9
                };
                n
            ],
            noise_sigma: default_noise_sigma(),
            signal_scale: default_signal_scale(),
            domain_shift: 0.0,
            split_fractions: default_split_fractions(),
            feature_dim: n,
            sar: SarSynthConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nomenclature.len();
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if n == 0 {
            return bad("empty nomenclature");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be positive");
        }
        if self.class_freqs.len() != n {
            return Err(Error::LengthMismatch {
                what: "class_freqs",
                expected: n,
                found: self.class_freqs.len(),
            });
        }
        if self.detectability.len() != n {
            return Err(Error::LengthMismatch {
                what: "detectability",
                expected: n,
                found: self.detectability.len(),
            });
        }
        if self.class_freqs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return bad("class frequencies must lie in (0, 1)");
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.detectability.iter().any(|d| !unit(d.sar) || !unit(d.optical)) {
            return bad("detectability must lie in [0, 1]");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return bad("noise_sigma must be positive");
        }
        if !(self.signal_scale.is_finite() && self.signal_scale > 0.0) {
            return bad("signal_scale must be positive");
        }
        if !(self.domain_shift.is_finite() && self.domain_shift >= 0.0) {
            return bad("domain_shift must be non-negative");
        }
        if self.split_fractions.iter().any(|f| f.is_nan() || *f <= 0.0)
            || (self.split_fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad("split fractions must be positive and sum to 1");
        }
        if self.feature_dim < n {
            return Err(Error::InvalidParameter(format!(
                "feature_dim {} is smaller than the class count {n}",
                self.feature_dim
            )));
        }
        let s = &self.sar;
        if s.volume_class >= n {
            return bad("sar.volume_class out of range");
        }
        if !(s.pixel_sigma_db > 0.0 && s.variance_factor > 0.0) {
            return bad("sar pixel sigma and variance factor must be positive");
        }
        let rho = s.volume_correlation();
        if !(-1.0..=1.0).contains(&s.base_correlation) || !(-1.0..=1.0).contains(&rho) {
            return bad("sar correlations must stay within [-1, 1]");
        }
        Ok(())
    }

    /// Sample counts of (train, val, test); train and val are rounded, test
    /// takes the remainder.
    pub fn split_sizes(&self) -> [usize; 3] {
        let n = self.n_samples as f64;
        let train = (n * self.split_fractions[0]).round() as usize;
        let val = ((n * self.split_fractions[1]).round() as usize).min(self.n_samples - train);
        [train, val, self.n_samples - train - val]
    }
}

/// Three class groups by index thirds: SAR-favored, optical-favored with
/// some SAR signal, and optical-only. Frequencies 0.2, feature dimension `N`.
pub fn complementary_preset(nom: &Nomenclature) -> Result<SynthConfig> {
    let n = nom.len();
    if n < 6 {
        return Err(Error::NotEnoughClasses {
            needed: 6,
            available: n,
        });
    }
    let mut cfg = SynthConfig::new(nom.clone(), 5000, 0);
    cfg.detectability = (0..n)
        .map(|j| match complementary_group(j, n) {
            0 => Detectability { sar: 0.9, optical: 0.3 },
            1 => Detectability { sar: 0.5, optical: 0.9 },
            _ => Detectability { sar: 0.05, optical: 0.9 },
        })
        .collect();
    Ok(cfg)
}

/// Group (0, 1 or 2) of class `j` under [`complementary_preset`].
pub fn complementary_group(j: usize, n: usize) -> usize {
    (3 * j / n).min(2)
}

/// `n` frequencies decaying geometrically from `high` to `low`.
pub fn geometric_frequencies(n: usize, high: f64, low: f64) -> Vec<f64> {
    if n == 1 {
        return vec![high];
    }
    (0..n)
        .map(|j| high * (low / high).powf(j as f64 / (n - 1) as f64))
        .collect()
}

/// Generator keyed by `(seed, purpose, index)`.
fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&purpose.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `count` orthonormal vectors in `R^dim` (Gram–Schmidt on Gaussian draws).
fn orthonormal_directions(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        // twice for numerical orthogonality
        for _ in 0..2 {
            for u in &out {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= norm);
            out.push(v);
        }
    }
    out
}

/// The class directions of every modality, plus the test-split shift direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Directions {
    /// `[modality][class]` unit vectors.
    pub class: [Vec<Vec<f64>>; 2],
    /// Unit shift direction per modality.
    pub shift: [Vec<f64>; 2],
}

pub fn directions(cfg: &SynthConfig) -> Directions {
    let n = cfg.nomenclature.len();
    let d = cfg.feature_dim;
    let class = Modality::ALL.map(|m| {
        orthonormal_directions(&mut stream(cfg.seed, PURPOSE_DIRECTIONS, m.index() as u64), n, d)
    });
    let shift = Modality::ALL.map(|m| {
        let mut rng = stream(cfg.seed, PURPOSE_SHIFT, m.index() as u64);
        let mut v = vec![0.0; d];
        for e in &class[m.index()] {
            let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            v.iter_mut().zip(e).for_each(|(a, b)| *a += s * b);
        }
        let norm = (n as f64).sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        v
    });
    Directions { class, shift }
}

/// One split of a multimodal dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub ids: Vec<String>,
    /// `[modality][sample]`.
    pub features: [Vec<FeatureVector>; 2],
    pub labels: Vec<LabelSet>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, m: Modality) -> &[FeatureVector] {
        &self.features[m.index()]
    }

    fn check(&self, what: &'static str) -> Result<()> {
        for f in &self.features {
            if f.len() != self.labels.len() {
                return Err(Error::LengthMismatch {
                    what,
                    expected: self.labels.len(),
                    found: f.len(),
                });
            }
        }
        if self.ids.len() != self.labels.len() {
            return Err(Error::LengthMismatch {
                what,
                expected: self.labels.len(),
                found: self.ids.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub nomenclature: Nomenclature,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    pub fn split(&self, s: SplitName) -> &Split {
        match s {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub data: Dataset,
}

/// Label set of sample `i`, hierarchy-closed.
pub fn sample_labels(cfg: &SynthConfig, i: usize) -> LabelSet {
    labels_from(cfg, i, true)
}

fn labels_from(cfg: &SynthConfig, i: usize, close: bool) -> LabelSet {
    let mut rng = stream(cfg.seed, PURPOSE_LABELS, i as u64);
    let bits = cfg.class_freqs.iter().map(|&f| rng.random::<f64>() < f).collect();
    let l = LabelSet::from_bits(bits);
    if close {
        hierarchy_closure(&l, &cfg.nomenclature)
    } else {
        l
    }
}

/// Label draws of sample `i` before hierarchy closure.
pub fn raw_sample_labels(cfg: &SynthConfig, i: usize) -> LabelSet {
    labels_from(cfg, i, false)
}

fn sample_features(
    cfg: &SynthConfig,
    dirs: &Directions,
    labels: &LabelSet,
    i: usize,
    m: Modality,
    shifted: bool,
) -> FeatureVector {
    let mut rng = stream(cfg.seed, PURPOSE_FEATURES, ((i as u64) << 1) | m.index() as u64);
    let mut x: Vec<f64> = (0..cfg.feature_dim)
        .map(|_| cfg.noise_sigma * gaussian(&mut rng))
        .collect();
    for j in labels.indices() {
        let a = cfg.signal_scale * cfg.detectability[j].get(m);
        x.iter_mut()
            .zip(&dirs.class[m.index()][j])
            .for_each(|(v, e)| *v += a * e);
    }
    if shifted {
        x.iter_mut()
            .zip(&dirs.shift[m.index()])
            .for_each(|(v, u)| *v += cfg.domain_shift * u);
    }
    FeatureVector::new(x).expect("finite by construction")
}

/// Draws the dataset; splits are contiguous index ranges train, val, test.
pub fn gen_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let dirs = directions(cfg);
    let [n_train, n_val, _] = cfg.split_sizes();
    let samples: Vec<(LabelSet, FeatureVector, FeatureVector)> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let l = sample_labels(cfg, i);
            let shifted = i >= n_train + n_val;
            let s1 = sample_features(cfg, &dirs, &l, i, Modality::Sar, shifted);
            let s2 = sample_features(cfg, &dirs, &l, i, Modality::Optical, shifted);
            (l, s1, s2)
        })
        .collect();
    let mut splits = [Split::default(), Split::default(), Split::default()];
    for (i, (l, s1, s2)) in samples.into_iter().enumerate() {
        let k = if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        };
        let s = &mut splits[k];
        s.ids.push(i.to_string());
        s.features[0].push(s1);
        s.features[1].push(s2);
        s.labels.push(l);
    }
    let [train, val, test] = splits;
    Ok(SynthDataset {
        config: cfg.clone(),
        data: Dataset {
            nomenclature: cfg.nomenclature.clone(),
            train,
            val,
            test,
        },
    })
}

/// Square VV and VH dB rasters for one sample.
///
/// Pixels are bivariate Gaussian with standard deviation `pixel_sigma_db`;
/// the volume bit lowers the VV/VH correlation so the difference variance
/// grows by `variance_factor` while each channel's marginal is unchanged.
/// Other set classes shift both channels by the same dB offset.
pub fn gen_sar_pair(labels: &LabelSet, cfg: &SynthConfig, size: usize, index: u64) -> Result<(Raster, Raster)> {
    if size < 8 {
        return Err(Error::InvalidParameter("raster size must be at least 8".into()));
    }
    cfg.nomenclature.check_labels(labels)?;
    let s = &cfg.sar;
    let rho = if labels.get(s.volume_class) {
        s.volume_correlation()
    } else {
        s.base_correlation
    };
    let offset: f64 = labels
        .indices()
        .filter(|&j| j != s.volume_class)
        .map(|j| s.class_offset_db * cfg.detectability[j].sar)
        .sum();
    let mut rng = stream(cfg.seed, PURPOSE_RASTER, index);
    let c = (1.0 - rho * rho).max(0.0).sqrt();
    let n = size * size;
    let mut vv = Vec::with_capacity(n);
    let mut vh = Vec::with_capacity(n);
    for _ in 0..n {
        let z1 = gaussian(&mut rng);
        let z2 = gaussian(&mut rng);
        vv.push((s.vv_db + offset + s.pixel_sigma_db * z1) as f32);
        vh.push((s.vh_db + offset + s.pixel_sigma_db * (rho * z1 + c * z2)) as f32);
    }
    Ok((
        Raster::new(size, size, 1, Units::Decibel, vv)?,
        Raster::new(size, size, 1, Units::Decibel, vh)?,
    ))
}

fn split_file(dir: &Path, split: SplitName, what: &str) -> std::path::PathBuf {
    dir.join(format!("{}_{what}.csv", split.as_str()))
}

/// Writes `{split}_s1.csv`, `{split}_s2.csv`, `{split}_labels.csv` for
/// every split, plus `nomenclature.json`.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for name in SplitName::ALL {
        let s = ds.split(name);
        s.check("split")?;
        for m in Modality::ALL {
            let rows = s.features(m).iter().map(|f| f.as_slice().to_vec()).collect();
            Matrix::new(s.ids.clone(), rows).write(split_file(dir, name, m.tag()))?;
        }
        let rows = s
            .labels
            .iter()
            .map(|l| l.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            .collect();
        Matrix::new(s.ids.clone(), rows).write(split_file(dir, name, "labels"))?;
    }
    write_atomic(dir.join("nomenclature.json"), ds.nomenclature.to_json().as_bytes())
}

/// Writes the dataset and the generating config (`config.json`).
pub fn write_synth_dataset(dir: impl AsRef<Path>, ds: &SynthDataset) -> Result<()> {
    write_dataset(dir.as_ref(), &ds.data)?;
    write_atomic(
        dir.as_ref().join("config.json"),
        serde_json::to_string_pretty(&ds.config)?.as_bytes(),
    )
}

/// Parses a 0/1 label matrix.
pub fn labels_from_matrix(m: &Matrix, n_classes: usize) -> Result<Vec<LabelSet>> {
    m.rows
        .iter()
        .map(|r| {
            if r.len() != n_classes {
                return Err(Error::WrongClassCount {
                    kind: "label row".into(),
                    expected: n_classes,
                    found: r.len(),
                });
            }
            r.iter()
                .map(|&v| match v {
                    0.0 => Ok(false),
                    1.0 => Ok(true),
                    _ => Err(Error::Format(format!("label value {v} is not 0 or 1"))),
                })
                .collect::<Result<Vec<_>>>()
                .map(LabelSet::from_bits)
        })
        .collect()
}

fn read_split(dir: &Path, name: SplitName, nom: &Nomenclature) -> Result<Split> {
    let labels_m = Matrix::read(split_file(dir, name, "labels"))?;
    let labels = labels_from_matrix(&labels_m, nom.len())?;
    let mut features: [Vec<FeatureVector>; 2] = Default::default();
    for m in Modality::ALL {
        let mat = Matrix::read(split_file(dir, name, m.tag()))?;
        if mat.ids != labels_m.ids {
            return Err(Error::Format(format!(
                "{} features and labels of split `{}` list different sample ids",
                m.tag(),
                name.as_str()
            )));
        }
        features[m.index()] = mat
            .rows
            .into_iter()
            .map(FeatureVector::new)
            .collect::<Result<_>>()?;
    }
    for l in &labels {
        nom.check_labels(l)?;
    }
    Ok(Split {
        ids: labels_m.ids,
        features,
        labels,
    })
}

/// Reads the layout produced by [`write_dataset`]; feature files may come
/// from any external model as long as ids and row order match the labels.
pub fn read_dataset(dir: impl AsRef<Path>, nom: &Nomenclature) -> Result<Dataset> {
    let dir = dir.as_ref();
    Ok(Dataset {
        nomenclature: nom.clone(),
        train: read_split(dir, SplitName::Train, nom)?,
        val: read_split(dir, SplitName::Val, nom)?,
        test: read_split(dir, SplitName::Test, nom)?,
    })
}
