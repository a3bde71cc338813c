//! Land-cover class hierarchies, label sets and class-frequency weights.
//!
//! A [`Nomenclature`] is an ordered list of classes; the order defines the
//! index of every class in label and probability vectors. Classes may form a
//! forest of at most three levels (CORINE style), where every level-2/3 class
//! points to its enclosing class one level up.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BENMM19_JSON: &str = include_str!("../data/benmm19.json");
const RSVQA61_JSON: &str = include_str!("../data/rsvqa61.json");

/// Class that must not appear in the 61-class nomenclature.
pub const EXCLUDED_RSVQA_CLASS: &str = "glaciers and perpetual snow";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: usize,
    pub name: String,
    pub level: u8,
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NomenclatureKind {
    Benmm19,
    Rsvqa61,
    Custom,
}

impl NomenclatureKind {
    pub fn expected_len(self) -> Option<usize> {
        match self {
            NomenclatureKind::Benmm19 => Some(19),
            NomenclatureKind::Rsvqa61 => Some(61),
            NomenclatureKind::Custom => None,
        }
    }
}

impl fmt::Display for NomenclatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NomenclatureKind::Benmm19 => "benmm19",
            NomenclatureKind::Rsvqa61 => "rsvqa61",
            NomenclatureKind::Custom => "custom",
        })
    }
}

impl FromStr for NomenclatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "benmm19" => Ok(NomenclatureKind::Benmm19),
            "rsvqa61" => Ok(NomenclatureKind::Rsvqa61),
            "custom" => Ok(NomenclatureKind::Custom),
            other => Err(Error::Config(format!("unknown nomenclature kind `{other}`"))),
        }
    }
}

/// One entry of a nomenclature file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub level: u8,
    pub parent_name: Option<String>,
}

/// Ordered set of land-cover classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NomenclatureRepr", into = "NomenclatureRepr")]
pub struct Nomenclature {
    kind: NomenclatureKind,
    classes: Vec<ClassDef>,
    by_name: HashMap<String, usize>,
    // ancestors[j] lists every strict ancestor of j, nearest first
    ancestors: Vec<Vec<usize>>,
}

impl PartialEq for Nomenclature {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.classes == other.classes
    }
}

#[derive(Serialize, Deserialize)]
struct NomenclatureRepr {
    kind: NomenclatureKind,
    classes: Vec<ClassEntry>,
}

impl TryFrom<NomenclatureRepr> for Nomenclature {
    type Error = Error;

    fn try_from(r: NomenclatureRepr) -> Result<Self> {
        Nomenclature::from_entries(r.classes, r.kind)
    }
}

impl From<Nomenclature> for NomenclatureRepr {
    fn from(n: Nomenclature) -> Self {
        NomenclatureRepr {
            kind: n.kind,
            classes: n.entries(),
        }
    }
}

fn canonical_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl Nomenclature {
    pub fn from_entries(entries: Vec<ClassEntry>, kind: NomenclatureKind) -> Result<Self> {
        let mut by_name = HashMap::with_capacity(entries.len());
        for (id, e) in entries.iter().enumerate() {
            let name = canonical_name(&e.name);
            if name.is_empty() {
                return Err(Error::InvalidHierarchy {
                    class: format!("#{id}"),
                    reason: "empty class name".into(),
                });
            }
            if by_name.insert(name.clone(), id).is_some() {
                return Err(Error::DuplicateName(name));
            }
        }

        let mut classes = Vec::with_capacity(entries.len());
        for (id, e) in entries.iter().enumerate() {
            let name = canonical_name(&e.name);
            if !(1..=3).contains(&e.level) {
                return Err(Error::InvalidHierarchy {
                    class: name,
                    reason: format!("level {} outside 1..=3", e.level),
                });
            }
            let parent = match &e.parent_name {
                None => None,
                Some(p) => {
                    let p = canonical_name(p);
                    match by_name.get(&p) {
                        Some(&pid) => Some(pid),
                        None => {
                            return Err(Error::DanglingParent {
                                class: name,
                                parent: p,
                            })
                        }
                    }
                }
            };
            match parent {
                None if e.level != 1 => {
                    return Err(Error::InvalidHierarchy {
                        class: name,
                        reason: format!("level {} class without parent", e.level),
                    })
                }
                Some(_) if e.level == 1 => {
                    return Err(Error::InvalidHierarchy {
                        class: name,
                        reason: "level 1 class with a parent".into(),
                    })
                }
                Some(pid) if entries[pid].level + 1 != e.level => {
                    return Err(Error::InvalidHierarchy {
                        class: name,
                        reason: format!(
                            "parent level {} is not one above level {}",
                            entries[pid].level, e.level
                        ),
                    })
                }
                _ => {}
            }
            classes.push(ClassDef {
                id,
                name,
                level: e.level,
                parent,
            });
        }

        if let Some(expected) = kind.expected_len() {
            if classes.len() != expected {
                return Err(Error::WrongClassCount {
                    kind: kind.to_string(),
                    expected,
                    found: classes.len(),
                });
            }
        }
        match kind {
            NomenclatureKind::Benmm19 => {
                if let Some(c) = classes.iter().find(|c| c.parent.is_some()) {
                    return Err(Error::InvalidHierarchy {
                        class: c.name.clone(),
                        reason: "benmm19 classes are flat".into(),
                    });
                }
            }
            NomenclatureKind::Rsvqa61 => {
                if by_name.contains_key(EXCLUDED_RSVQA_CLASS) {
                    return Err(Error::ForbiddenClass(EXCLUDED_RSVQA_CLASS.into()));
                }
            }
            NomenclatureKind::Custom => {}
        }
        if classes.is_empty() {
            return Err(Error::EmptyInput("nomenclature"));
        }

        let ancestors = classes
            .iter()
            .map(|c| {
                let mut out = Vec::new();
                let mut cur = c.parent;
                while let Some(p) = cur {
                    out.push(p);
                    cur = classes[p].parent;
                }
                out
            })
            .collect();

        Ok(Nomenclature {
            kind,
            classes,
            by_name,
            ancestors,
        })
    }

    pub fn from_json_str(s: &str, kind: NomenclatureKind) -> Result<Self> {
        let entries: Vec<ClassEntry> = serde_json::from_str(s)?;
        Self::from_entries(entries, kind)
    }

    /// Flat nomenclature (all level 1) from a list of names.
    pub fn flat<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let entries = names
            .iter()
            .map(|n| ClassEntry {
                name: n.as_ref().to_string(),
                level: 1,
                parent_name: None,
            })
            .collect();
        Self::from_entries(entries, NomenclatureKind::Custom)
    }

    /// One of the nomenclatures shipped with the crate.
    pub fn bundled(kind: NomenclatureKind) -> Result<Self> {
        match kind {
            NomenclatureKind::Benmm19 => Self::from_json_str(BENMM19_JSON, kind),
            NomenclatureKind::Rsvqa61 => Self::from_json_str(RSVQA61_JSON, kind),
            NomenclatureKind::Custom => Err(Error::Config(
                "custom nomenclatures are loaded from a file".into(),
            )),
        }
    }

    pub fn kind(&self) -> NomenclatureKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn class(&self, id: usize) -> &ClassDef {
        &self.classes[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.classes[id].name
    }

    /// Case- and whitespace-insensitive lookup.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(&canonical_name(name)).copied()
    }

    pub fn ancestors(&self, id: usize) -> &[usize] {
        &self.ancestors[id]
    }

    pub fn has_hierarchy(&self) -> bool {
        self.classes.iter().any(|c| c.parent.is_some())
    }

    pub fn entries(&self) -> Vec<ClassEntry> {
        self.classes
            .iter()
            .map(|c| ClassEntry {
                name: c.name.clone(),
                level: c.level,
                parent_name: c.parent.map(|p| self.classes[p].name.clone()),
            })
            .collect()
    }

    /// Serializes in the nomenclature file format.
    pub fn to_json(&self) -> String {
        let lines: Vec<String> = self
            .entries()
            .iter()
            .map(|e| format!("  {}", serde_json::to_string(e).expect("plain struct")))
            .collect();
        format!("[\n{}\n]\n", lines.join(",\n"))
    }

    pub fn check_labels(&self, labels: &LabelSet) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::LengthMismatch {
                what: "label set",
                expected: self.len(),
                found: labels.len(),
            });
        }
        Ok(())
    }
}

/// Reads a nomenclature file and validates it against `kind`.
pub fn load_nomenclature(path: impl AsRef<Path>, kind: NomenclatureKind) -> Result<Nomenclature> {
    let text = std::fs::read_to_string(path)?;
    Nomenclature::from_json_str(&text, kind)
}

/// Binary presence vector aligned with a nomenclature.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSet {
    bits: Vec<bool>,
}

impl LabelSet {
    pub fn empty(n: usize) -> Self {
        LabelSet {
            bits: vec![false; n],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        LabelSet { bits }
    }

    pub fn from_indices(n: usize, idx: &[usize]) -> Self {
        let mut l = Self::empty(n);
        for &i in idx {
            l.bits[i] = true;
        }
        l
    }

    pub fn from_names(nom: &Nomenclature, names: &[&str]) -> Result<Self> {
        let mut l = Self::empty(nom.len());
        for n in names {
            let i = nom
                .index_of(n)
                .ok_or_else(|| Error::UnknownClass((*n).to_string()))?;
            l.bits[i] = true;
        }
        Ok(l)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.bits[j]
    }

    pub fn set(&mut self, j: usize, v: bool) {
        self.bits[j] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Set indices in increasing order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }
}

/// Adds every ancestor of every set class.
pub fn hierarchy_closure(labels: &LabelSet, nom: &Nomenclature) -> LabelSet {
    let mut out = labels.clone();
    for j in labels.indices() {
        for &a in nom.ancestors(j) {
            out.bits[a] = true;
        }
    }
    out
}

/// Per-class fraction of samples in which the class is present.
pub fn class_frequencies(dataset: &[LabelSet]) -> Result<Vec<f64>> {
    let first = dataset.first().ok_or(Error::EmptyInput("dataset"))?;
    let n = first.len();
    let mut counts = vec![0usize; n];
    for l in dataset {
        if l.len() != n {
            return Err(Error::LengthMismatch {
                what: "label set",
                expected: n,
                found: l.len(),
            });
        }
        for j in l.indices() {
            counts[j] += 1;
        }
    }
    let q = dataset.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / q).collect())
}

/// Strictly positive per-class loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidParameter(
                "class weights must be finite and positive".into(),
            ));
        }
        Ok(ClassWeights(weights))
    }

    pub fn uniform(n: usize) -> Self {
        ClassWeights(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Inverse-frequency weights normalized to unit mean.
///
/// Zero frequencies are clamped to `1 / (2 * dataset_size)` so unseen classes
/// get the largest finite weight.
pub fn inverse_frequency_weights(freqs: &[f64], dataset_size: usize) -> Result<ClassWeights> {
    if freqs.is_empty() {
        return Err(Error::EmptyInput("frequencies"));
    }
    if dataset_size == 0 {
        return Err(Error::InvalidParameter("dataset size must be positive".into()));
    }
    if freqs.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::InvalidParameter("frequencies must lie in [0, 1]".into()));
    }
    let eps = 1.0 / (2.0 * dataset_size as f64);
    let raw: Vec<f64> = freqs.iter().map(|f| 1.0 / f.max(eps)).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    ClassWeights::new(raw.into_iter().map(|w| w / mean).collect())
}
