use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{answer, render, Expr, QaRecord, QuestionAst};
use crate::error::{Error, Result};
use crate::taxonomy::{LabelSet, Nomenclature};

/// Question-type mix: share of yes/no questions, and among those the share
/// with one and with two conjunctions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuestionMix {
    pub p_yes_no: f64,
    pub p_conj1: f64,
    pub p_conj2: f64,
}

impl Default for QuestionMix {
    fn default() -> Self {
        QuestionMix {
            p_yes_no: 0.807,
            p_conj1: 0.452,
            p_conj2: 0.271,
        }
    }
}

impl QuestionMix {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.p_yes_no) || !unit(self.p_conj1) || !unit(self.p_conj2) {
            return Err(Error::InvalidParameter("question mix probabilities must lie in [0, 1]".into()));
        }
        if self.p_conj1 + self.p_conj2 > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter("p_conj1 + p_conj2 exceeds 1".into()));
        }
        Ok(())
    }

    /// Largest number of leaves a question drawn from this mix can have.
    fn max_leaves(&self) -> usize {
        if self.p_yes_no == 0.0 {
            0
        } else if self.p_conj2 > 0.0 {
            3
        } else if self.p_conj1 > 0.0 {
            2
        } else {
            1
        }
    }
}

fn random_expr(rng: &mut ChaCha8Rng, n_classes: usize, leaves: usize) -> Expr {
    let ids = sample(rng, n_classes, leaves).into_vec();
    let mut it = ids.into_iter();
    let mut e = Expr::Present(it.next().expect("at least one leaf"));
    for id in it {
        let leaf = Box::new(Expr::Present(id));
        e = if rng.random_bool(0.5) {
            match e {
                // keep and-chains on the right operand of an or, as parsed
                Expr::Or(a, b) => Expr::Or(a, Box::new(Expr::And(b, leaf))),
                other => Expr::And(Box::new(other), leaf),
            }
        } else {
            Expr::Or(Box::new(e), leaf)
        };
    }
    e
}

/// `count` seeded questions about one sample, answered from `labels`.
pub fn generate_questions(
    sample_id: &str,
    labels: &LabelSet,
    nom: &Nomenclature,
    count: usize,
    mix: &QuestionMix,
    seed: u64,
) -> Result<Vec<QaRecord>> {
    if count == 0 {
        return Err(Error::InvalidParameter("question count must be at least 1".into()));
    }
    mix.validate()?;
    nom.check_labels(labels)?;
    let needed = mix.max_leaves();
    if nom.len() < needed {
        return Err(Error::NotEnoughClasses {
            needed,
            available: nom.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let ast = if rng.random::<f64>() < mix.p_yes_no {
            let u: f64 = rng.random();
            let leaves = if u < mix.p_conj1 {
                2
            } else if u < mix.p_conj1 + mix.p_conj2 {
                3
            } else {
                1
            };
            QuestionAst::YesNo(random_expr(&mut rng, nom.len(), leaves))
        } else {
            QuestionAst::LandCover
        };
        out.push(QaRecord {
            sample_id: sample_id.to_string(),
            question: render(&ast, nom),
            qtype: ast.qtype(),
            answer: answer(&ast, labels, nom).as_str().to_string(),
            context: None,
            predicted: None,
        });
    }
    Ok(out)
}
