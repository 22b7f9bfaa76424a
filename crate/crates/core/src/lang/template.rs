use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};


use super::{parse_program, ParseError, Program};
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum TemplateError {
    #[error("template declares {declared} hole vocabularies but its source uses holes {found:?}")]
    HoleMismatch { declared: usize, found: Vec<usize> },
    #[error("hole {hole} appears {count} times in the template source")]
    RepeatedHole { hole: usize, count: usize },
    #[error("hole {hole} has an empty vocabulary")]
    EmptyVocabulary { hole: usize },
    #[error("expected {expected} choices, got {got}")]
    ChoiceCount { expected: usize, got: usize },
    #[error("choice {choice} is out of range for hole {hole} (vocabulary size {size})")]
    ChoiceOutOfRange {
        hole: usize,
        choice: usize,
        size: usize,
    },
    #[error("instantiated program does not parse: {0}")]
    Parse(#[from] ParseError),
}

/// MiniImp source with `__HOLE_k__` placeholders (k = 1..H) and a finite
/// vocabulary of substitution strings per hole.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleTemplate {
    #[serde(rename = "source")]
    pub template_source: String,
    #[serde(rename = "vocab")]
    pub hole_vocab: Vec<Vec<String>>,
}

fn hole_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"__HOLE_([0-9]+)__").expect("static regex"))
}

impl HoleTemplate {
    /// Validates hole numbering and that every substitution parses when the
    /// other holes take their first choice.
    pub fn new(
        template_source: impl Into<String>,
        hole_vocab: Vec<Vec<String>>,
    ) -> Result<HoleTemplate, TemplateError> {
        let t = HoleTemplate {
            template_source: template_source.into(),
            hole_vocab,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let h = self.hole_vocab.len();
        let mut counts = vec![0usize; h];
        let mut found = Vec::new();
        for cap in hole_regex().captures_iter(&self.template_source) {
            let k: usize = cap[1].parse().unwrap_or(usize::MAX);
            found.push(k);
            if k == 0 || k > h {
                continue;
            }
            counts[k - 1] += 1;
        }
        if found.iter().any(|&k| k == 0 || k > h) || counts.contains(&0) {
            found.sort_unstable();
            return Err(TemplateError::HoleMismatch { declared: h, found });
        }
        if let Some((i, &count)) = counts.iter().enumerate().find(|(_, &c)| c > 1) {
            return Err(TemplateError::RepeatedHole { hole: i + 1, count });
        }
        if let Some(i) = self.hole_vocab.iter().position(Vec::is_empty) {
            return Err(TemplateError::EmptyVocabulary { hole: i + 1 });
        }
        let mut choices = vec![0usize; h];
        for hole in 0..h {
            for choice in 0..self.hole_vocab[hole].len() {
                choices[hole] = choice;
                self.instantiate(&choices)?;
            }
            choices[hole] = 0;
        }
        Ok(())
    }

    pub fn hole_count(&self) -> usize {
        self.hole_vocab.len()
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.hole_vocab.iter().map(Vec::len).collect()
    }

    /// Substitutes the chosen vocabulary entries textually.
    pub fn render(&self, choices: &[usize]) -> Result<String, TemplateError> {
        if choices.len() != self.hole_vocab.len() {
            return Err(TemplateError::ChoiceCount {
                expected: self.hole_vocab.len(),
                got: choices.len(),
            });
        }
        for (i, (&c, vocab)) in choices.iter().zip(&self.hole_vocab).enumerate() {
            if c >= vocab.len() {
                return Err(TemplateError::ChoiceOutOfRange {
                    hole: i + 1,
                    choice: c,
                    size: vocab.len(),
                });
            }
        }
        let rendered = hole_regex().replace_all(&self.template_source, |cap: &regex::Captures| {
            let k: usize = cap[1].parse().unwrap_or(0);
            match k.checked_sub(1).and_then(|i| self.hole_vocab.get(i)) {
                Some(vocab) => vocab[choices[k - 1]].clone(),
                None => cap[0].to_string(),
            }
        });
        Ok(rendered.into_owned())
    }

    pub fn instantiate(&self, choices: &[usize]) -> Result<Program, TemplateError> {
        Ok(parse_program(&self.render(choices)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{format_program, StmtKind};

    fn ops() -> Vec<String> {
        vec!["+".into(), "-".into(), "*".into()]
    }

    #[test]
    fn direct_substitution() {
        let t = HoleTemplate::new("fn f(t, i) { t = t __HOLE_1__ i return t }", vec![ops()])
            .unwrap();
        let p = t.instantiate(&[0]).unwrap();
        let direct = parse_program("fn f(t, i) { t = t + i return t }").unwrap();
        assert_eq!(p, direct);
        assert!(matches!(p.body[0].kind, StmtKind::Assign { .. }));
    }

    #[test]
    fn out_of_range_choice() {
        let t = HoleTemplate::new("fn f(t, i) { t = t __HOLE_1__ i return t }", vec![ops()])
            .unwrap();
        assert_eq!(
            t.instantiate(&[3]),
            Err(TemplateError::ChoiceOutOfRange {
                hole: 1,
                choice: 3,
                size: 3
            })
        );
        assert!(matches!(
            t.instantiate(&[0, 0]),
            Err(TemplateError::ChoiceCount { .. })
        ));
    }

    #[test]
    fn two_holes_enumerate_nine_distinct_programs() {
        let t = HoleTemplate::new(
            "fn f(a, b) { c = a __HOLE_1__ b return c __HOLE_2__ a }",
            vec![ops(), ops()],
        )
        .unwrap();
        let mut texts = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                let p = t.instantiate(&[i, j]).unwrap();
                texts.push(format_program(&p));
            }
        }
        let n = texts.len();
        texts.sort();
        texts.dedup();
        assert_eq!((n, texts.len()), (9, 9));
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            HoleTemplate::new("fn f() { return __HOLE_2__ }", vec![vec!["1".into()]]),
            Err(TemplateError::HoleMismatch { .. })
        ));
        assert!(matches!(
            HoleTemplate::new(
                "fn f() { x = __HOLE_1__ return __HOLE_1__ }",
                vec![vec!["1".into()]]
            ),
            Err(TemplateError::RepeatedHole { hole: 1, count: 2 })
        ));
        assert!(matches!(
            HoleTemplate::new("fn f() { return __HOLE_1__ }", vec![vec!["1".into(), "=".into()]]),
            Err(TemplateError::Parse(_))
        ));
        assert!(matches!(
            HoleTemplate::new("fn f() { return __HOLE_1__ }", vec![vec![]]),
            Err(TemplateError::EmptyVocabulary { hole: 1 })
        ));
    }

    #[test]
    fn hole_ten_is_not_hole_one() {
        let mut vocab: Vec<Vec<String>> = (0..10).map(|i| vec![i.to_string()]).collect();
        vocab[0] = vec!["100".into()];
        let src = (1..=10)
            .map(|k| format!("x{k} = __HOLE_{k}__"))
            .collect::<Vec<_>>()
            .join(" ");
        let t = HoleTemplate::new(format!("fn f() {{ {src} return 0 }}"), vocab).unwrap();
        let text = t.render(&[0; 10]).unwrap();
        assert!(text.contains("x1 = 100 "));
        assert!(text.contains("x10 = 9 "));
    }
}
