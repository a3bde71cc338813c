//! End-to-end runs: data → per-modality heads → fusion → thresholds →
//! label sets → questions → metrics.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    apply_thresholds, early_fuse_predict, early_fuse_train, late_fuse_predict, late_fuse_train,
    late_fusion_hidden_width, optimize_global_threshold, optimize_thresholds, predict_probs,
    train_classifier, FeatureVector, MlpModel, ProbVector, ThresholdMode, ThresholdVector,
    TrainConfig,
};
use crate::io::read_jsonl;
use crate::metrics::{MetricReport, VqaAccuracy};
use crate::questions::{evaluate_vqa, generate_questions, QaRecord, QuestionMix};
use crate::sarprep::{
    assemble_sar_input, compute_saturation_bounds, raw_sar_stack, summarize_features, SarMode,
    SaturationBounds, DEFAULT_LOWER_QUANTILE, DEFAULT_UPPER_QUANTILE,
};
use crate::synth::{
    complementary_preset, gen_dataset, gen_sar_pair, geometric_frequencies, read_dataset, Dataset,
    Detectability, Modality, SarSynthConfig, Split, SynthConfig,
};
use crate::taxonomy::{
    class_frequencies, inverse_frequency_weights, load_nomenclature, ClassWeights, LabelSet,
    Nomenclature, NomenclatureKind,
};

/// Pixel quantiles summarized per SAR channel when rasters are simulated.
pub const RASTER_SUMMARY_QUANTILES: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Step {
    A,
    B,
    C,
    #[default]
    #[serde(rename = "custom")]
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRegime {
    #[default]
    Random,
    Shifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    NoneS1,
    NoneS2,
    Early,
    #[default]
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthPreset {
    /// Three SAR/optical detectability groups.
    #[default]
    Complementary,
    /// Complementary groups with frequencies decaying from 0.35 to 0.01.
    Imbalanced,
    /// Detectability 0.9 in both modalities.
    Uniform,
}

/// Synthetic data description; unset fields come from the preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub preset: SynthPreset,
    pub n_samples: usize,
    pub feature_dim: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub signal_scale: Option<f64>,
    /// Defaults to 0 for random splits and `2 · noise_sigma` for shifted ones.
    pub domain_shift: Option<f64>,
    pub class_freqs: Option<Vec<f64>>,
    pub detectability: Option<Vec<Detectability>>,
    pub split_fractions: Option<[f64; 3]>,
    pub sar: Option<SarSynthConfig>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            preset: SynthPreset::Complementary,
            n_samples: 5000,
            feature_dim: None,
            noise_sigma: None,
            signal_scale: None,
            domain_shift: None,
            class_freqs: None,
            detectability: None,
            split_fractions: None,
            sar: None,
        }
    }
}

impl SynthSpec {
    pub fn to_config(&self, nom: &Nomenclature, regime: SplitRegime, seed: u64) -> Result<SynthConfig> {
        let n = nom.len();
        let mut cfg = match self.preset {
            SynthPreset::Uniform => SynthConfig::new(nom.clone(), self.n_samples, seed),
            SynthPreset::Complementary | SynthPreset::Imbalanced => complementary_preset(nom)?,
        };
        if self.preset == SynthPreset::Imbalanced {
            cfg.class_freqs = geometric_frequencies(n, 0.35, 0.01);
        }
        cfg.n_samples = self.n_samples;
        cfg.seed = seed;
        if let Some(v) = self.feature_dim {
            cfg.feature_dim = v;
        }
        if let Some(v) = self.noise_sigma {
            cfg.noise_sigma = v;
        }
        if let Some(v) = self.signal_scale {
            cfg.signal_scale = v;
        }
        if let Some(v) = &self.class_freqs {
            cfg.class_freqs = v.clone();
        }
        if let Some(v) = &self.detectability {
            cfg.detectability = v.clone();
        }
        if let Some(v) = self.split_fractions {
            cfg.split_fractions = v;
        }
        if let Some(v) = &self.sar {
            cfg.sar = v.clone();
        }
        cfg.domain_shift = match (regime, self.domain_shift) {
            (SplitRegime::Random, Some(s)) if s != 0.0 => {
                return Err(Error::Config("a random split cannot carry a domain shift".into()))
            }
            (SplitRegime::Random, _) => 0.0,
            (SplitRegime::Shifted, Some(s)) if s <= 0.0 => {
                return Err(Error::Config("a shifted split needs a positive domain shift".into()))
            }
            (SplitRegime::Shifted, Some(s)) => s,
            (SplitRegime::Shifted, None) => 2.0 * cfg.noise_sigma,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthSpec),
    /// Layout written by `synth::write_dataset`, optionally with a Q&A file
    /// for the test split.
    Dir {
        path: PathBuf,
        #[serde(default)]
        questions: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub step: Step,
    pub nomenclature: NomenclatureKind,
    /// Nomenclature file for `custom` nomenclatures.
    pub nomenclature_path: Option<PathBuf>,
    pub split: SplitRegime,
    pub weighted_loss: bool,
    pub sar_mode: SarMode,
    pub fusion: FusionMode,
    /// Single-modality and early-fusion heads; `weighted` and `seed` are
    /// replaced by `weighted_loss` and per-stage seeds.
    pub train: TrainConfig,
    /// Late-fusion head; defaults to `train` with hidden width `max(4N, 32)`.
    pub late_train: Option<TrainConfig>,
    pub data: DataSource,
    /// Simulate VV/VH rasters of this size for the SAR modality and use their
    /// summary statistics as features.
    pub sar_rasters: Option<usize>,
    pub questions_per_sample: usize,
    pub question_mix: QuestionMix,
    pub beta: f64,
    pub grid_step: f64,
    pub threshold_mode: ThresholdMode,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            step: Step::Custom,
            nomenclature: NomenclatureKind::Benmm19,
            nomenclature_path: None,
            split: SplitRegime::Random,
            weighted_loss: true,
            sar_mode: SarMode::ThreeChannel,
            fusion: FusionMode::Late,
            train: TrainConfig::default(),
            late_train: None,
            data: DataSource::default(),
            sar_rasters: None,
            questions_per_sample: 25,
            question_mix: QuestionMix::default(),
            beta: 2.0,
            grid_step: 0.05,
            threshold_mode: ThresholdMode::PerClass,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Step presets on the 61-class nomenclature with late fusion.
    pub fn preset(step: Step) -> Self {
        let mut cfg = ExperimentConfig {
            step,
            ..Default::default()
        };
        let (split, weighted) = match step {
            Step::A => (SplitRegime::Random, true),
            Step::B => (SplitRegime::Shifted, true),
            Step::C => (SplitRegime::Shifted, false),
            Step::Custom => return cfg,
        };
        cfg.nomenclature = NomenclatureKind::Rsvqa61;
        cfg.split = split;
        cfg.weighted_loss = weighted;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.step {
            Step::A => Some((SplitRegime::Random, true)),
            Step::B => Some((SplitRegime::Shifted, true)),
            Step::C => Some((SplitRegime::Shifted, false)),
            Step::Custom => None,
        };
        if let Some((split, weighted)) = expected {
            if self.nomenclature != NomenclatureKind::Rsvqa61
                || self.split != split
                || self.weighted_loss != weighted
            {
                return Err(Error::Config(format!(
                    "step {:?} requires the rsvqa61 nomenclature, a {:?} split and weighted_loss = {weighted}",
                    self.step, split
                )));
            }
        }
        self.train.validate()?;
        if let Some(t) = &self.late_train {
            t.validate()?;
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if self.questions_per_sample == 0 {
            return Err(Error::Config("questions_per_sample must be at least 1".into()));
        }
        self.question_mix.validate()?;
        if self.sar_rasters.is_some() && matches!(self.data, DataSource::Dir { .. }) {
            return Err(Error::Config("sar_rasters needs synthetic data".into()));
        }
        if self.nomenclature == NomenclatureKind::Custom && self.nomenclature_path.is_none() {
            return Err(Error::Config("custom nomenclature needs nomenclature_path".into()));
        }
        Ok(())
    }

    pub fn load_nomenclature(&self) -> Result<Nomenclature> {
        match &self.nomenclature_path {
            Some(p) => load_nomenclature(p, self.nomenclature),
            None => Nomenclature::bundled(self.nomenclature),
        }
    }

    fn stage_train(&self, stage: Stage, n_classes: usize) -> TrainConfig {
        let mut t = match stage {
            Stage::Late => self.late_train.clone().unwrap_or(TrainConfig {
                hidden_width: late_fusion_hidden_width(n_classes),
                ..self.train.clone()
            }),
            _ => self.train.clone(),
        };
        t.weighted = self.weighted_loss;
        t.seed = self.seed.wrapping_add(1 + stage as u64);
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    S1,
    S2,
    Early,
    Late,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::S1, Stage::S2, Stage::Early, Stage::Late];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::S1 => "s1",
            Stage::S2 => "s2",
            Stage::Early => "early",
            Stage::Late => "late",
        }
    }
}

impl FusionMode {
    pub fn stages(self) -> &'static [Stage] {
        match self {
            FusionMode::NoneS1 => &[Stage::S1],
            FusionMode::NoneS2 => &[Stage::S2],
            FusionMode::Early => &[Stage::S1, Stage::S2, Stage::Early],
            FusionMode::Late => &[Stage::S1, Stage::S2, Stage::Late],
        }
    }

    /// The stage whose output the run is about.
    pub fn final_stage(self) -> Stage {
        *self.stages().last().expect("non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub thresholds: ThresholdVector,
    /// F_beta-macro on the validation split at the chosen thresholds.
    pub validation_f_macro: f64,
    /// Test-split report at the configured β.
    pub metrics: MetricReport,
    /// Test-split report at β = 1.
    pub metrics_f1: MetricReport,
    pub vqa: VqaAccuracy,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Stages {
    pub s1: Option<StageReport>,
    pub s2: Option<StageReport>,
    pub early: Option<StageReport>,
    pub late: Option<StageReport>,
}

impl Stages {
    pub fn get(&self, s: Stage) -> Option<&StageReport> {
        match s {
            Stage::S1 => self.s1.as_ref(),
            Stage::S2 => self.s2.as_ref(),
            Stage::Early => self.early.as_ref(),
            Stage::Late => self.late.as_ref(),
        }
    }

    fn slot(&mut self, s: Stage) -> &mut Option<StageReport> {
        match s {
            Stage::S1 => &mut self.s1,
            Stage::S2 => &mut self.s2,
            Stage::Early => &mut self.early,
            Stage::Late => &mut self.late,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub classes: Vec<String>,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub stages: Stages,
    pub wall_time_s: f64,
}

pub const TABLE_COLUMNS: [&str; 6] = ["F1Micro", "HD", "MR", "GA", "Y/N A", "LC A"];

impl RunReport {
    /// JSON with sorted keys and without the wall time.
    pub fn canonical_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_time_s");
        }
        Ok(serde_json::to_string(&v)?)
    }

    pub fn final_stage(&self) -> Option<&StageReport> {
        self.stages.get(self.config.fusion.final_stage())
    }

    /// One row per present stage; rates in percent.
    pub fn table_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["stage", "F2Macro"];
        header.extend(TABLE_COLUMNS);
        w.write_record(&header)?;
        for s in Stage::ALL {
            if let Some(r) = self.stages.get(s) {
                let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
                w.write_record([
                    s.as_str().to_string(),
                    pct(Some(r.metrics.macro_f)),
                    pct(Some(r.metrics_f1.micro_f)),
                    format!("{:.4}", r.metrics.hamming_distance),
                    pct(Some(r.metrics.match_ratio)),
                    pct(Some(r.vqa.global)),
                    pct(r.vqa.yes_no),
                    pct(r.vqa.land_cover),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Per-class F1 on the test split, one column per present stage.
    pub fn per_class_csv(&self) -> Result<String> {
        let stages: Vec<(Stage, &StageReport)> = Stage::ALL
            .iter()
            .filter_map(|&s| self.stages.get(s).map(|r| (s, r)))
            .collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["class".to_string()];
        header.extend(stages.iter().map(|(s, _)| s.as_str().to_string()));
        w.write_record(&header)?;
        for (j, name) in self.classes.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(stages.iter().map(|(_, r)| format!("{:.2}", 100.0 * r.metrics_f1.per_class[j].f_beta)));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Data plus test-split questions, as fed to the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub data: Dataset,
    pub questions: Vec<Vec<QaRecord>>,
}

fn question_seed(seed: u64, sample: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ sample as u64
}

/// Questions about every sample of a split, answered from its ground truth.
pub fn split_questions(
    split: &Split,
    nom: &Nomenclature,
    count: usize,
    mix: &QuestionMix,
    seed: u64,
) -> Result<Vec<Vec<QaRecord>>> {
    split
        .ids
        .par_iter()
        .zip(&split.labels)
        .enumerate()
        .map(|(i, (id, l))| generate_questions(id, l, nom, count, mix, question_seed(seed, i)))
        .collect()
}

/// Summary features of simulated SAR rasters for every sample of `ds`,
/// with saturation bounds estimated on the training split.
fn raster_features(ds: &mut Dataset, cfg: &SynthConfig, size: usize, mode: SarMode) -> Result<SaturationBounds> {
    let [n_train, n_val, _] = [ds.train.len(), ds.val.len(), ds.test.len()];
    let offsets = [0, n_train, n_train + n_val];
    let pairs = |s: &Split, off: usize| -> Result<Vec<_>> {
        s.labels
            .par_iter()
            .enumerate()
            .map(|(i, l)| gen_sar_pair(l, cfg, size, (off + i) as u64))
            .collect()
    };
    let train_pairs = pairs(&ds.train, 0)?;
    let raw: Vec<_> = train_pairs
        .iter()
        .map(|(vv, vh)| raw_sar_stack(vv, vh))
        .collect::<Result<_>>()?;
    let bounds = compute_saturation_bounds(&raw, DEFAULT_LOWER_QUANTILE, DEFAULT_UPPER_QUANTILE)?;
    drop(raw);
    let summarize = |ps: &[(crate::sarprep::Raster, crate::sarprep::Raster)]| -> Result<Vec<FeatureVector>> {
        ps.par_iter()
            .map(|(vv, vh)| {
                let img = assemble_sar_input(vv, vh, mode, &bounds)?;
                summarize_features(&img, &RASTER_SUMMARY_QUANTILES)
            })
            .collect()
    };
    ds.train.features[Modality::Sar.index()] = summarize(&train_pairs)?;
    drop(train_pairs);
    ds.val.features[Modality::Sar.index()] = summarize(&pairs(&ds.val, offsets[1])?)?;
    ds.test.features[Modality::Sar.index()] = summarize(&pairs(&ds.test, offsets[2])?)?;
    Ok(bounds)
}

/// Generates or loads the data and the test-split questions.
pub fn prepare_data(cfg: &ExperimentConfig, nom: &Nomenclature) -> Result<PreparedData> {
    match &cfg.data {
        DataSource::Synth(spec) => {
            let sc = spec.to_config(nom, cfg.split, cfg.seed)?;
            let mut data = gen_dataset(&sc)?.data;
            if let Some(size) = cfg.sar_rasters {
                raster_features(&mut data, &sc, size, cfg.sar_mode)?;
            }
            let questions = split_questions(&data.test, nom, cfg.questions_per_sample, &cfg.question_mix, cfg.seed)?;
            Ok(PreparedData { data, questions })
        }
        DataSource::Dir { path, questions } => {
            let data = read_dataset(path, nom)?;
            let questions = match questions {
                None => split_questions(&data.test, nom, cfg.questions_per_sample, &cfg.question_mix, cfg.seed)?,
                Some(q) => group_questions(&data.test, read_jsonl(q)?)?,
            };
            Ok(PreparedData { data, questions })
        }
    }
}

/// Buckets Q&A records by sample, in split order; unknown ids are an error.
pub fn group_questions(split: &Split, records: Vec<QaRecord>) -> Result<Vec<Vec<QaRecord>>> {
    let index: HashMap<&str, usize> = split.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut out = vec![Vec::new(); split.len()];
    for r in records {
        let i = *index
            .get(r.sample_id.as_str())
            .ok_or_else(|| Error::Format(format!("question for unknown sample `{}`", r.sample_id)))?;
        out[i].push(r);
    }
    Ok(out)
}

fn predict_all(m: &MlpModel, f: &[FeatureVector]) -> Result<Vec<ProbVector>> {
    f.par_iter().map(|x| predict_probs(m, x)).collect()
}

fn early_predict_all(m: &MlpModel, a: &[FeatureVector], b: &[FeatureVector]) -> Result<Vec<ProbVector>> {
    a.par_iter().zip(b).map(|(x, y)| early_fuse_predict(m, x, y)).collect()
}

fn late_predict_all(m: &MlpModel, a: &[ProbVector], b: &[ProbVector]) -> Result<Vec<ProbVector>> {
    a.par_iter().zip(b).map(|(x, y)| late_fuse_predict(m, x, y)).collect()
}

/// Probabilities of one stage on (train, val, test).
type StageProbs = [Vec<ProbVector>; 3];

fn thresholds_for(cfg: &ExperimentConfig, probs: &[ProbVector], labels: &[LabelSet]) -> Result<ThresholdVector> {
    match cfg.threshold_mode {
        ThresholdMode::PerClass => optimize_thresholds(probs, labels, cfg.beta, cfg.grid_step),
        ThresholdMode::Global => optimize_global_threshold(probs, labels, cfg.beta, cfg.grid_step),
    }
}

fn classify(probs: &[ProbVector], t: &ThresholdVector) -> Result<Vec<LabelSet>> {
    probs.iter().map(|p| apply_thresholds(p, t)).collect()
}

fn evaluate_stage(
    cfg: &ExperimentConfig,
    nom: &Nomenclature,
    data: &PreparedData,
    probs: &StageProbs,
) -> Result<StageReport> {
    let val = &data.data.val;
    let test = &data.data.test;
    let thresholds = thresholds_for(cfg, &probs[1], &val.labels)?;
    let val_pred = classify(&probs[1], &thresholds)?;
    let validation_f_macro = MetricReport::compute(&val_pred, &val.labels, cfg.beta)?.macro_f;
    let pred = classify(&probs[2], &thresholds)?;
    let metrics = MetricReport::compute(&pred, &test.labels, cfg.beta)?.with_class_names(nom);
    let metrics_f1 = MetricReport::compute(&pred, &test.labels, 1.0)?.with_class_names(nom);
    let vqa = evaluate_vqa(&pred, &test.labels, &data.questions, nom)?.accuracy;
    Ok(StageReport {
        thresholds,
        validation_f_macro,
        metrics,
        metrics_f1,
        vqa,
    })
}

/// Loss weights from training-split frequencies.
pub fn training_weights(train: &Split) -> Result<ClassWeights> {
    inverse_frequency_weights(&class_frequencies(&train.labels)?, train.len())
}

/// Runs every stage of `cfg.fusion` on prepared data.
pub fn run_on(cfg: &ExperimentConfig, nom: &Nomenclature, data: &PreparedData) -> Result<Stages> {
    cfg.validate()?;
    let d = &data.data;
    for s in [&d.train, &d.val, &d.test] {
        if s.is_empty() {
            return Err(Error::EmptyInput("dataset split"));
        }
    }
    let w = training_weights(&d.train)?;
    let splits = [&d.train, &d.val, &d.test];
    let single = |m: Modality, stage: Stage| -> Result<StageProbs> {
        let model = train_classifier(d.train.features(m), &d.train.labels, &w, &cfg.stage_train(stage, nom.len()))?;
        Ok([
            predict_all(&model, splits[0].features(m))?,
            predict_all(&model, splits[1].features(m))?,
            predict_all(&model, splits[2].features(m))?,
        ])
    };
    let stages = cfg.fusion.stages();
    let mut probs: HashMap<Stage, StageProbs> = HashMap::new();
    if stages.contains(&Stage::S1) {
        probs.insert(Stage::S1, single(Modality::Sar, Stage::S1)?);
    }
    if stages.contains(&Stage::S2) {
        probs.insert(Stage::S2, single(Modality::Optical, Stage::S2)?);
    }
    if stages.contains(&Stage::Early) {
        let (a, b) = (Modality::Sar, Modality::Optical);
        let model = early_fuse_train(d.train.features(a), d.train.features(b), &d.train.labels, &w, &cfg.stage_train(Stage::Early, nom.len()))?;
        let p = |s: &Split| early_predict_all(&model, s.features(a), s.features(b));
        probs.insert(Stage::Early, [p(splits[0])?, p(splits[1])?, p(splits[2])?]);
    }
    if stages.contains(&Stage::Late) {
        let (p1, p2) = (&probs[&Stage::S1], &probs[&Stage::S2]);
        let t = cfg.stage_train(Stage::Late, nom.len());
        let model = late_fuse_train(&p1[0], &p2[0], &d.train.labels, &w, &t)?;
        let lp = [
            late_predict_all(&model, &p1[0], &p2[0])?,
            late_predict_all(&model, &p1[1], &p2[1])?,
            late_predict_all(&model, &p1[2], &p2[2])?,
        ];
        probs.insert(Stage::Late, lp);
    }
    let mut out = Stages::default();
    for &s in stages {
        *out.slot(s) = Some(evaluate_stage(cfg, nom, data, &probs[&s])?);
    }
    Ok(out)
}

/// Full run from a config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    cfg.validate()?;
    let nom = cfg.load_nomenclature()?;
    let data = prepare_data(cfg, &nom)?;
    let stages = run_on(cfg, &nom, &data)?;
    Ok(RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        classes: nom.classes().iter().map(|c| c.name.clone()).collect(),
        train_samples: data.data.train.len(),
        val_samples: data.data.val.len(),
        test_samples: data.data.test.len(),
        stages,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Headline metrics compared across reports.
pub const COMPARED_METRICS: [&str; 7] = ["F2Macro", "F1Micro", "HD", "MR", "GA", "Y/N A", "LC A"];

fn headline(r: &StageReport) -> [Option<f64>; 7] {
    [
        Some(r.metrics.macro_f),
        Some(r.metrics_f1.micro_f),
        Some(r.metrics.hamming_distance),
        Some(r.metrics.match_ratio),
        Some(r.vqa.global),
        r.vqa.yes_no,
        r.vqa.land_cover,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub values: Vec<Option<f64>>,
    /// `values[k] − values[0]`.
    pub deltas: Vec<Option<f64>>,
    /// Reports holding the best value (lowest for HD, highest otherwise).
    pub winners: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub metrics: Vec<MetricRow>,
    pub classes: Vec<String>,
    /// `[class][report]` test F1 of each report's final stage.
    pub per_class_f1: Vec<Vec<f64>>,
    pub per_class_winners: Vec<Vec<bool>>,
}

fn winners(values: &[Option<f64>], lower_is_better: bool) -> Vec<bool> {
    let present = values.iter().flatten().copied();
    let best = if lower_is_better {
        present.fold(f64::INFINITY, f64::min)
    } else {
        present.fold(f64::NEG_INFINITY, f64::max)
    };
    values.iter().map(|v| *v == Some(best)).collect()
}

/// Side-by-side view of the final stage of each report.
pub fn compare_reports(labels: &[String], reports: &[RunReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Config("comparison needs at least two reports".into()));
    }
    if labels.len() != reports.len() {
        return Err(Error::LengthMismatch {
            what: "report labels",
            expected: reports.len(),
            found: labels.len(),
        });
    }
    let classes = &reports[0].classes;
    if let Some(r) = reports.iter().find(|r| &r.classes != classes) {
        return Err(Error::WrongClassCount {
            kind: format!("nomenclature of a compared report ({:?})", r.config.nomenclature),
            expected: classes.len(),
            found: r.classes.len(),
        });
    }
    let finals: Vec<&StageReport> = reports
        .iter()
        .map(|r| {
            r.final_stage()
                .ok_or_else(|| Error::Format("report lacks its final stage".into()))
        })
        .collect::<Result<_>>()?;
    let heads: Vec<[Option<f64>; 7]> = finals.iter().map(|r| headline(r)).collect();
    let metrics = COMPARED_METRICS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let values: Vec<Option<f64>> = heads.iter().map(|h| h[k]).collect();
            let deltas = values
                .iter()
                .map(|v| v.zip(values[0]).map(|(a, b)| a - b))
                .collect();
            MetricRow {
                metric: name.to_string(),
                winners: winners(&values, *name == "HD"),
                values,
                deltas,
            }
        })
        .collect();
    let per_class_f1: Vec<Vec<f64>> = (0..classes.len())
        .map(|j| finals.iter().map(|r| r.metrics_f1.per_class[j].f_beta).collect())
        .collect();
    let per_class_winners = per_class_f1
        .iter()
        .map(|row| winners(&row.iter().map(|v| Some(*v)).collect::<Vec<_>>(), false))
        .collect();
    Ok(Comparison {
        labels: labels.to_vec(),
        metrics,
        classes: classes.clone(),
        per_class_f1,
        per_class_winners,
    })
}

impl Comparison {
    /// Metric rows (`value`, `delta`, `*` on winners), a blank line, then the
    /// per-class F1 table.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
        let mut header = vec!["metric".to_string()];
        for l in &self.labels {
            header.push(l.clone());
            header.push(format!("{l} delta"));
        }
        w.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
        for m in &self.metrics {
            let mut row = vec![m.metric.clone()];
            for k in 0..self.labels.len() {
                let star = if m.winners[k] { "*" } else { "" };
                row.push(format!("{}{star}", fmt(m.values[k])));
                row.push(fmt(m.deltas[k]));
            }
            w.write_record(&row)?;
        }
        w.write_record([""])?;
        let mut header = vec!["class".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (j, c) in self.classes.iter().enumerate() {
            let mut row = vec![c.clone()];
            for k in 0..self.labels.len() {
                let star = if self.per_class_winners[j][k] { "*" } else { "" };
                row.push(format!("{:.6}{star}", self.per_class_f1[j][k]));
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
