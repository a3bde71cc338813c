//! Multi-label classification and VQA scores.
//!
//! * per-class precision / recall / F_beta from confusion counts, with the
//!   convention 0/0 = 0;
//! * macro (plain mean), weighted (occurrence-weighted mean) and micro
//!   (pooled counts) aggregation;
//! * match ratio: share of samples whose whole label vector is right;
//! * Hamming distance: mean number of wrong class bits per sample;
//! * VQA accuracy: exact answer-string agreement, globally and per
//!   question type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::questions::QuestionType;
use crate::taxonomy::{LabelSet, Nomenclature};

/// Per-class confusion counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub tn: Vec<u64>,
}

impl ClassCounts {
    pub fn zeros(n: usize) -> Self {
        ClassCounts {
            tp: vec![0; n],
            fp: vec![0; n],
            fn_: vec![0; n],
            tn: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.tp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tp.is_empty()
    }

    /// Actual positives of class `j`.
    pub fn occurrences(&self, j: usize) -> u64 {
        self.tp[j] + self.fn_[j]
    }

    pub fn samples(&self) -> u64 {
        self.tp.first().map_or(0, |_| self.tp[0] + self.fp[0] + self.fn_[0] + self.tn[0])
    }
}

fn check_pairs(preds: &[LabelSet], gts: &[LabelSet]) -> Result<usize> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch {
            what: "ground truth list",
            expected: preds.len(),
            found: gts.len(),
        });
    }
    let n = gts[0].len();
    for (p, g) in preds.iter().zip(gts) {
        if p.len() != n || g.len() != n {
            return Err(Error::LengthMismatch {
                what: "label set",
                expected: n,
                found: if p.len() != n { p.len() } else { g.len() },
            });
        }
    }
    Ok(n)
}

pub fn count_stats(preds: &[LabelSet], gts: &[LabelSet]) -> Result<ClassCounts> {
    let n = check_pairs(preds, gts)?;
    let mut c = ClassCounts::zeros(n);
    for (p, g) in preds.iter().zip(gts) {
        for j in 0..n {
            match (p.get(j), g.get(j)) {
                (true, true) => c.tp[j] += 1,
                (true, false) => c.fp[j] += 1,
                (false, true) => c.fn_[j] += 1,
                (false, false) => c.tn[j] += 1,
            }
        }
    }
    Ok(c)
}

/// `(P, R)` with 0/0 mapped to 0.
pub fn precision_recall(tp: u64, fp: u64, fn_: u64) -> (f64, f64) {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    (ratio(tp, tp + fp), ratio(tp, tp + fn_))
}

/// Weighted harmonic mean `(1 + β²) P R / (β² P + R)`; 0 when the denominator is 0.
pub fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * p + r;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / den
    }
}

pub fn per_class_f_beta(c: &ClassCounts, beta: f64) -> Vec<f64> {
    (0..c.len())
        .map(|j| {
            let (p, r) = precision_recall(c.tp[j], c.fp[j], c.fn_[j]);
            f_beta(p, r, beta)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    Weighted,
    Micro,
}

/// Aggregates per-class scores.
///
/// `Micro` ignores `scores` and recomputes F_beta from counts pooled over
/// all classes; `beta` is only used there.
pub fn aggregate(scores: &[f64], counts: &ClassCounts, beta: f64, mode: Averaging) -> Result<f64> {
    match mode {
        Averaging::Macro => {
            if scores.is_empty() {
                return Err(Error::EmptyInput("per-class scores"));
            }
            Ok(scores.iter().sum::<f64>() / scores.len() as f64)
        }
        Averaging::Weighted => {
            if scores.len() != counts.len() {
                return Err(Error::LengthMismatch {
                    what: "per-class scores",
                    expected: counts.len(),
                    found: scores.len(),
                });
            }
            let total: u64 = (0..counts.len()).map(|j| counts.occurrences(j)).sum();
            if total == 0 {
                return Err(Error::InvalidParameter(
                    "weighted average needs at least one actual occurrence".into(),
                ));
            }
            let num: f64 = scores
                .iter()
                .enumerate()
                .map(|(j, s)| s * counts.occurrences(j) as f64)
                .sum();
            Ok(num / total as f64)
        }
        Averaging::Micro => {
            if counts.is_empty() {
                return Err(Error::EmptyInput("class counts"));
            }
            let (tp, fp, fn_) = (
                counts.tp.iter().sum(),
                counts.fp.iter().sum(),
                counts.fn_.iter().sum(),
            );
            let (p, r) = precision_recall(tp, fp, fn_);
            Ok(f_beta(p, r, beta))
        }
    }
}

/// Fraction of samples predicted exactly.
pub fn match_ratio(preds: &[LabelSet], gts: &[LabelSet]) -> Result<f64> {
    check_pairs(preds, gts)?;
    let hits = preds.iter().zip(gts).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean number of class bits that differ per sample.
pub fn hamming_distance(preds: &[LabelSet], gts: &[LabelSet]) -> Result<f64> {
    check_pairs(preds, gts)?;
    let wrong: usize = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| p.bits().iter().zip(g.bits()).filter(|(a, b)| a != b).count())
        .sum();
    Ok(wrong as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub support: u64,
}

/// Full classification report at one β.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub beta: f64,
    pub samples: usize,
    pub per_class: Vec<ClassScore>,
    pub macro_f: f64,
    pub micro_f: f64,
    /// Absent when no class occurs in the ground truth.
    pub weighted_f: Option<f64>,
    pub match_ratio: f64,
    pub hamming_distance: f64,
}

impl MetricReport {
    pub fn compute(preds: &[LabelSet], gts: &[LabelSet], beta: f64) -> Result<Self> {
        let counts = count_stats(preds, gts)?;
        let scores = per_class_f_beta(&counts, beta);
        let per_class = (0..counts.len())
            .map(|j| {
                let (p, r) = precision_recall(counts.tp[j], counts.fp[j], counts.fn_[j]);
                ClassScore {
                    name: format!("c{j}"),
                    precision: p,
                    recall: r,
                    f_beta: scores[j],
                    support: counts.occurrences(j),
                }
            })
            .collect();
        Ok(MetricReport {
            beta,
            samples: preds.len(),
            per_class,
            macro_f: aggregate(&scores, &counts, beta, Averaging::Macro)?,
            micro_f: aggregate(&scores, &counts, beta, Averaging::Micro)?,
            weighted_f: aggregate(&scores, &counts, beta, Averaging::Weighted).ok(),
            match_ratio: match_ratio(preds, gts)?,
            hamming_distance: hamming_distance(preds, gts)?,
        })
    }

    pub fn with_class_names(mut self, nom: &Nomenclature) -> Self {
        for (j, c) in self.per_class.iter_mut().enumerate() {
            if j < nom.len() {
                c.name = nom.name(j).to_string();
            }
        }
        self
    }

    /// One row per class, then aggregate rows with the value in `f_beta`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "precision", "recall", "f_beta", "support"])?;
        for c in &self.per_class {
            w.write_record([
                c.name.clone(),
                c.precision.to_string(),
                c.recall.to_string(),
                c.f_beta.to_string(),
                c.support.to_string(),
            ])?;
        }
        let agg = [
            ("macro", Some(self.macro_f)),
            ("micro", Some(self.micro_f)),
            ("weighted", self.weighted_f),
            ("match_ratio", Some(self.match_ratio)),
            ("hamming_distance", Some(self.hamming_distance)),
        ];
        for (name, v) in agg {
            let v = v.map_or_else(|| "n/a".to_string(), |v| v.to_string());
            w.write_record([name.to_string(), String::new(), String::new(), v, String::new()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// VQA accuracies in `[0, 1]`; a question type absent from the data is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaAccuracy {
    pub global: f64,
    pub yes_no: Option<f64>,
    pub land_cover: Option<f64>,
    pub questions: usize,
}

pub fn vqa_accuracy<S: AsRef<str>>(
    pred_answers: &[S],
    gt_answers: &[S],
    qtypes: &[QuestionType],
) -> Result<VqaAccuracy> {
    if pred_answers.is_empty() {
        return Err(Error::EmptyInput("answers"));
    }
    if pred_answers.len() != gt_answers.len() || pred_answers.len() != qtypes.len() {
        return Err(Error::LengthMismatch {
            what: "answer lists",
            expected: pred_answers.len(),
            found: gt_answers.len().min(qtypes.len()),
        });
    }
    let mut total = [0usize; 2];
    let mut right = [0usize; 2];
    for ((p, g), t) in pred_answers.iter().zip(gt_answers).zip(qtypes) {
        let k = match t {
            QuestionType::YesNo => 0,
            QuestionType::LandCover => 1,
        };
        total[k] += 1;
        if p.as_ref() == g.as_ref() {
            right[k] += 1;
        }
    }
    let share = |k: usize| (total[k] > 0).then(|| right[k] as f64 / total[k] as f64);
    Ok(VqaAccuracy {
        global: (right[0] + right[1]) as f64 / pred_answers.len() as f64,
        yes_no: share(0),
        land_cover: share(1),
        questions: pred_answers.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(bits: &[u8]) -> LabelSet {
        LabelSet::from_bits(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn counts_basics() {
        let g = vec![ls(&[1, 0, 1]), ls(&[0, 0, 1])];
        let c = count_stats(&g, &g).unwrap();
        assert!(c.fp.iter().chain(&c.fn_).all(|&v| v == 0));
        assert_eq!(c.occurrences(2), 2);
        assert_eq!(c.samples(), 2);

        let ones = vec![ls(&[1, 1]); 3];
        let zeros = vec![ls(&[0, 0]); 3];
        assert_eq!(count_stats(&ones, &zeros).unwrap().fp, vec![3, 3]);
        assert!(count_stats(&ones, &zeros[..2]).is_err());
    }

    #[test]
    fn f_beta_examples() {
        for beta in [0.5, 1.0, 2.0] {
            assert!((f_beta(0.37, 0.37, beta) - 0.37).abs() < 1e-15);
        }
        assert!((f_beta(0.5, 1.0, 2.0) - 2.5 / 3.0).abs() < 1e-12);
        assert_eq!(f_beta(0.0, 0.0, 2.0), 0.0);
    }

    #[test]
    fn aggregate_examples() {
        let c = ClassCounts {
            tp: vec![3, 0],
            fp: vec![0, 0],
            fn_: vec![0, 1],
            tn: vec![1, 3],
        };
        assert_eq!(aggregate(&[0.2, 0.8], &c, 1.0, Averaging::Macro).unwrap(), 0.5);
        assert_eq!(aggregate(&[1.0, 0.0], &c, 1.0, Averaging::Weighted).unwrap(), 0.75);

        let c = ClassCounts {
            tp: vec![1, 0],
            fp: vec![1, 0],
            fn_: vec![0, 1],
            tn: vec![0, 1],
        };
        assert!((aggregate(&[], &c, 1.0, Averaging::Micro).unwrap() - 0.5).abs() < 1e-15);

        let none = ClassCounts::zeros(2);
        assert!(aggregate(&[0.1, 0.2], &none, 1.0, Averaging::Weighted).is_err());
    }

    #[test]
    fn match_ratio_examples() {
        let g = vec![ls(&[1, 0]), ls(&[0, 1]), ls(&[1, 1]), ls(&[0, 0])];
        assert_eq!(match_ratio(&g, &g).unwrap(), 1.0);
        let mut p = g.clone();
        p[2] = ls(&[1, 0]);
        assert_eq!(match_ratio(&p, &g).unwrap(), 0.75);
        assert_eq!(match_ratio(&p[..2], &[ls(&[1, 0]), ls(&[1, 1])]).unwrap(), 0.5);
        assert!(match_ratio(&[], &[]).is_err());
    }

    #[test]
    fn hamming_examples() {
        let g = vec![ls(&[1, 0, 1])];
        assert_eq!(hamming_distance(&g, &g).unwrap(), 0.0);
        assert_eq!(hamming_distance(&[ls(&[1, 1, 1])], &g).unwrap(), 1.0);
        let all = LabelSet::from_bits(vec![true; 61]);
        let none = LabelSet::empty(61);
        assert_eq!(hamming_distance(&[all], &[none]).unwrap(), 61.0);
    }

    #[test]
    fn vqa_examples() {
        let t = vec![QuestionType::YesNo; 4];
        let gt = ["yes", "no", "no", "yes"];
        assert_eq!(vqa_accuracy(&gt, &gt, &t).unwrap().global, 1.0);
        let pred = ["yes", "no", "yes", "yes"];
        let a = vqa_accuracy(&pred, &gt, &t).unwrap();
        assert_eq!(a.yes_no, Some(0.75));
        assert_eq!(a.land_cover, None);
        assert!(vqa_accuracy::<&str>(&[], &[], &[]).is_err());
    }

    #[test]
    fn report_csv_lists_every_class() {
        let g = vec![ls(&[1, 0, 1]), ls(&[0, 1, 1])];
        let p = vec![ls(&[1, 1, 1]), ls(&[0, 1, 0])];
        let r = MetricReport::compute(&p, &g, 2.0).unwrap();
        let text = r.to_csv().unwrap();
        assert_eq!(text.lines().count(), 1 + 3 + 5);
        assert!(text.contains("hamming_distance,,,1,"));
    }
}
