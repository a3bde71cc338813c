//! Recursive-descent parser for the template grammar.
//!
//! ```text
//! question   := land_cover | yes_no
//! land_cover := "what land cover classes are present" "?"
//! yes_no     := ("is" | "are") "there" term (conj term){0,2} "?"
//! term       := [ "a" | "an" | "some" ] class_name
//! conj       := "and" | "or"
//! ```
//!
//! Matching is case-insensitive and word based. Class names may themselves
//! contain "and" / "or" (e.g. "moors and heathland"), so terms are matched
//! against the nomenclature longest-name-first with backtracking. "and" binds
//! tighter than "or"; equal operators associate to the left.

use super::{Expr, QuestionAst};
use crate::error::{Error, Result};
use crate::taxonomy::Nomenclature;

const LAND_COVER: [&str; 6] = ["what", "land", "cover", "classes", "are", "present"];
const ARTICLES: [&str; 3] = ["a", "an", "some"];
const MAX_LEAVES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Conj {
    And,
    Or,
}

fn conj_of(word: &str) -> Option<Conj> {
    match word {
        "and" => Some(Conj::And),
        "or" => Some(Conj::Or),
        _ => None,
    }
}

struct Matcher<'a> {
    words: &'a [String],
    nom: &'a Nomenclature,
    longest_name: usize,
}

impl Matcher<'_> {
    /// Class ids whose name spans `words[pos..pos + k]`, longest first.
    fn names_at(&self, pos: usize) -> Vec<(usize, usize)> {
        let max = self.longest_name.min(self.words.len() - pos);
        (1..=max)
            .rev()
            .filter_map(|k| {
                let phrase = self.words[pos..pos + k].join(" ");
                self.nom.index_of(&phrase).map(|id| (id, pos + k))
            })
            .collect()
    }

    /// Depth-first parse of `term (conj term)*` from `pos` to the end.
    fn terms(&self, pos: usize) -> Option<(Vec<usize>, Vec<Conj>)> {
        if pos >= self.words.len() {
            return None;
        }
        let mut starts = vec![pos];
        if ARTICLES.contains(&self.words[pos].as_str()) {
            starts.insert(0, pos + 1);
        }
        for start in starts {
            if start >= self.words.len() {
                continue;
            }
            for (id, next) in self.names_at(start) {
                if next == self.words.len() {
                    return Some((vec![id], Vec::new()));
                }
                if let Some(c) = conj_of(&self.words[next]) {
                    if let Some((mut ids, mut conjs)) = self.terms(next + 1) {
                        ids.insert(0, id);
                        conjs.insert(0, c);
                        return Some((ids, conjs));
                    }
                }
            }
        }
        None
    }

    /// Best-effort diagnosis when no parse exists.
    fn diagnose(&self, pos: usize) -> Error {
        let mut segment = Vec::new();
        let mut segments = Vec::new();
        for w in &self.words[pos..] {
            if conj_of(w).is_some() {
                segments.push(std::mem::take(&mut segment));
            } else {
                segment.push(w.as_str());
            }
        }
        segments.push(segment);
        for seg in segments {
            let seg: Vec<&str> = match seg.first() {
                Some(w) if ARTICLES.contains(w) => seg[1..].to_vec(),
                _ => seg,
            };
            if seg.is_empty() {
                return Error::MalformedQuestion("missing class name".into());
            }
            let phrase = seg.join(" ");
            if self.nom.index_of(&phrase).is_none() {
                return Error::UnknownClass(phrase);
            }
        }
        Error::MalformedQuestion("cannot split the question into class names".into())
    }
}

fn build(ids: &[usize], conjs: &[Conj]) -> Expr {
    // or-separated groups of and-chains, each folded to the left
    let mut groups: Vec<Expr> = Vec::new();
    let mut current = Expr::Present(ids[0]);
    for (c, &id) in conjs.iter().zip(&ids[1..]) {
        match c {
            Conj::And => current = Expr::And(Box::new(current), Box::new(Expr::Present(id))),
            Conj::Or => {
                groups.push(current);
                current = Expr::Present(id);
            }
        }
    }
    groups.push(current);
    let mut it = groups.into_iter();
    let first = it.next().expect("at least one group");
    it.fold(first, |acc, g| Expr::Or(Box::new(acc), Box::new(g)))
}

pub fn parse_question(text: &str, nom: &Nomenclature) -> Result<QuestionAst> {
    let lowered = text.trim().to_lowercase();
    let body = lowered
        .strip_suffix('?')
        .ok_or_else(|| Error::MalformedQuestion("question must end with `?`".into()))?;
    let words: Vec<String> = body.split_whitespace().map(str::to_string).collect();

    if words.iter().map(String::as_str).eq(LAND_COVER) {
        return Ok(QuestionAst::LandCover);
    }
    match words.as_slice() {
        [v, t, ..] if (v == "is" || v == "are") && t == "there" => {}
        _ => {
            return Err(Error::MalformedQuestion(
                "expected `is there`, `are there` or the land-cover template".into(),
            ))
        }
    }
    if words.len() == 2 {
        return Err(Error::MalformedQuestion("missing class name".into()));
    }
    if words.last().and_then(|w| conj_of(w)).is_some() {
        return Err(Error::MalformedQuestion("dangling conjunction".into()));
    }

    let matcher = Matcher {
        words: &words,
        nom,
        longest_name: nom
            .classes()
            .iter()
            .map(|c| c.name.split_whitespace().count())
            .max()
            .unwrap_or(1),
    };
    let (ids, conjs) = matcher.terms(2).ok_or_else(|| matcher.diagnose(2))?;
    if ids.len() > MAX_LEAVES {
        return Err(Error::MoreThanTwoConjunctions);
    }
    Ok(QuestionAst::YesNo(build(&ids, &conjs)))
}
