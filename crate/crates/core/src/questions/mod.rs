//! Template questions over land-cover label sets.
//!
//! Questions are either boolean presence tests over class names
//! ("are there pastures and vineyards or beaches?") or a request to list the
//! classes present. A deterministic evaluator answers them from a label set;
//! the same label set can also be exported as a language-model prompt.

mod generate;
mod parser;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{vqa_accuracy, VqaAccuracy};
use crate::taxonomy::{LabelSet, Nomenclature};

pub use generate::{generate_questions, QuestionMix};
pub use parser::parse_question;

pub const LAND_COVER_QUESTION: &str = "what land cover classes are present?";
pub const PROMPT_SEPARATOR: &str = " [SEP] ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    YesNo,
    LandCover,
}

/// Boolean presence expression; leaves are class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Present(usize),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, labels: &LabelSet) -> bool {
        match self {
            Expr::Present(j) => labels.get(*j),
            Expr::And(a, b) => a.eval(labels) && b.eval(labels),
            Expr::Or(a, b) => a.eval(labels) || b.eval(labels),
        }
    }

    /// Leaf class ids, left to right.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            Expr::Present(j) => out.push(*j),
            Expr::And(a, b) | Expr::Or(a, b) => {
                a.collect_leaves(out);
                b.collect_leaves(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuestionAst {
    YesNo(Expr),
    LandCover,
}

impl QuestionAst {
    pub fn qtype(&self) -> QuestionType {
        match self {
            QuestionAst::YesNo(_) => QuestionType::YesNo,
            QuestionAst::LandCover => QuestionType::LandCover,
        }
    }
}

/// Canonical answer string: `yes`, `no`, `none`, or class names in
/// nomenclature order joined by `", "`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Answer(String);

impl Answer {
    pub fn yes_no(v: bool) -> Self {
        Answer(if v { "yes" } else { "no" }.to_string())
    }

    pub fn land_cover(labels: &LabelSet, nom: &Nomenclature) -> Self {
        Answer(class_list(labels, nom))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn class_list(labels: &LabelSet, nom: &Nomenclature) -> String {
    if labels.count() == 0 {
        return "none".to_string();
    }
    labels.indices().map(|j| nom.name(j)).collect::<Vec<_>>().join(", ")
}

pub fn answer(ast: &QuestionAst, labels: &LabelSet, nom: &Nomenclature) -> Answer {
    match ast {
        QuestionAst::YesNo(e) => Answer::yes_no(e.eval(labels)),
        QuestionAst::LandCover => Answer::land_cover(labels, nom),
    }
}

fn article(name: &str) -> &'static str {
    match name.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn render_expr(e: &Expr, nom: &Nomenclature, out: &mut Vec<String>) {
    match e {
        Expr::Present(j) => out.push(nom.name(*j).to_string()),
        Expr::And(a, b) => {
            render_expr(a, nom, out);
            out.push("and".into());
            render_expr(b, nom, out);
        }
        Expr::Or(a, b) => {
            render_expr(a, nom, out);
            out.push("or".into());
            render_expr(b, nom, out);
        }
    }
}

/// Question text for an AST.
///
/// Renders by in-order traversal, which re-parses to the same tree for
/// every shape the grammar produces (or-of-and-chains, left-associative).
pub fn render(ast: &QuestionAst, nom: &Nomenclature) -> String {
    match ast {
        QuestionAst::LandCover => LAND_COVER_QUESTION.to_string(),
        QuestionAst::YesNo(Expr::Present(j)) => {
            let name = nom.name(*j);
            format!("is there {} {}?", article(name), name)
        }
        QuestionAst::YesNo(e) => {
            let mut parts = Vec::new();
            render_expr(e, nom, &mut parts);
            format!("are there {}?", parts.join(" "))
        }
    }
}

/// `"<class list> [SEP] <question>"`.
pub fn build_prompt(labels: &LabelSet, nom: &Nomenclature, question: &str) -> String {
    format!("{}{}{}", class_list(labels, nom), PROMPT_SEPARATOR, question)
}

/// One line of a Q&A file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub sample_id: String,
    pub question: String,
    #[serde(rename = "type")]
    pub qtype: QuestionType,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<String>,
}

/// One line of a prompt export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub context: String,
    pub question: String,
    pub answer: String,
}

impl PromptRecord {
    pub fn new(labels: &LabelSet, nom: &Nomenclature, q: &QaRecord) -> Self {
        PromptRecord {
            context: class_list(labels, nom),
            question: q.question.clone(),
            answer: q.answer.clone(),
        }
    }

    /// The same line [`build_prompt`] produces.
    pub fn prompt(&self) -> String {
        format!("{}{}{}", self.context, PROMPT_SEPARATOR, self.question)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqaEvaluation {
    pub accuracy: VqaAccuracy,
    /// Input questions with `answer` recomputed from the ground truth and
    /// `predicted` filled in.
    pub records: Vec<QaRecord>,
}

/// Answers every question from both label sets and scores the agreement.
pub fn evaluate_vqa(
    pred_labels: &[LabelSet],
    gt_labels: &[LabelSet],
    questions: &[Vec<QaRecord>],
    nom: &Nomenclature,
) -> Result<VqaEvaluation> {
    if pred_labels.len() != gt_labels.len() || pred_labels.len() != questions.len() {
        return Err(Error::LengthMismatch {
            what: "VQA inputs",
            expected: gt_labels.len(),
            found: pred_labels.len().min(questions.len()),
        });
    }
    let mut records = Vec::new();
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut types = Vec::new();
    for ((p, g), qs) in pred_labels.iter().zip(gt_labels).zip(questions) {
        nom.check_labels(p)?;
        nom.check_labels(g)?;
        for q in qs {
            let ast = parse_question(&q.question, nom)?;
            let gt = answer(&ast, g, nom);
            let pr = answer(&ast, p, nom);
            types.push(ast.qtype());
            gts.push(gt.as_str().to_string());
            preds.push(pr.as_str().to_string());
            records.push(QaRecord {
                answer: gt.0,
                predicted: Some(pr.0),
                qtype: ast.qtype(),
                ..q.clone()
            });
        }
    }
    Ok(VqaEvaluation {
        accuracy: vqa_accuracy(&preds, &gts, &types)?,
        records,
    })
}
