//! Seeded synthetic documents for benchmarks and tests.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::doc_model::{build_tree, DocTree};

/// Nominal `sections x sentences-per-section x tokens-per-sentence`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DocShape {
    pub sections: usize,
    pub sentences: usize,
    pub tokens: usize,
}

impl DocShape {
    pub fn new(sections: usize, sentences: usize, tokens: usize) -> Self {
        Self { sections, sentences, tokens }
    }

    /// Linearized length of a document with exactly this shape.
    pub fn n_total(&self) -> usize {
        1 + self.sections * (1 + self.sentences * (1 + self.tokens))
    }

    /// Same sentence shape with the section count chosen so `n_total` is close to `n`.
    pub fn scaled_to(&self, n: usize) -> Self {
        let per_section = 1 + self.sentences * (1 + self.tokens);
        let sections = ((n.saturating_sub(1) as f64 / per_section as f64).round() as usize).max(1);
        Self { sections, ..*self }
    }
}

impl fmt::Display for DocShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.sections, self.sentences, self.tokens)
    }
}

impl FromStr for DocShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad shape {s:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [a, b, c] if a > 0 && b > 0 && c > 0 => Ok(DocShape::new(a, b, c)),
            _ => Err(format!("shape must be SECTIONSxSENTENCESxTOKENS with positive parts, got {s:?}")),
        }
    }
}

/// Exactly `shape`, with random token ids below `vocab`.
pub fn regular_doc(rng: &mut impl Rng, shape: DocShape, vocab: u32) -> DocTree {
    let sections = (0..shape.sections)
        .map(|_| {
            (0..shape.sentences)
                .map(|_| (0..shape.tokens).map(|_| rng.gen_range(0..vocab)).collect())
                .collect()
        })
        .collect();
    build_tree(sections).expect("positive shape gives a valid tree")
}

fn jitter(rng: &mut impl Rng, nominal: usize) -> usize {
    let lo = nominal.div_ceil(2).max(1);
    rng.gen_range(lo..=nominal + nominal / 2)
}

/// Sentence counts and lengths drawn uniformly within +-50% of `shape`.
pub fn jittered_doc(rng: &mut impl Rng, shape: DocShape, vocab: u32) -> DocTree {
    let sections = (0..shape.sections)
        .map(|_| {
            (0..jitter(rng, shape.sentences))
                .map(|_| (0..jitter(rng, shape.tokens)).map(|_| rng.gen_range(0..vocab)).collect())
                .collect()
        })
        .collect();
    build_tree(sections).expect("jitter keeps every count positive")
}

/// Appends jittered sections until the linearized length would pass `target_n`.
pub fn jittered_doc_near(rng: &mut impl Rng, sentences: usize, tokens: usize, target_n: usize, vocab: u32) -> DocTree {
    let mut sections: Vec<Vec<Vec<u32>>> = Vec::new();
    let mut n = 1;
    loop {
        let section: Vec<Vec<u32>> = (0..jitter(rng, sentences))
            .map(|_| (0..jitter(rng, tokens)).map(|_| rng.gen_range(0..vocab)).collect())
            .collect();
        let len = 1 + section.iter().map(|s| s.len() + 1).sum::<usize>();
        if !sections.is_empty() && n + len > target_n {
            break;
        }
        n += len;
        sections.push(section);
    }
    build_tree(sections).expect("jitter keeps every count positive")
}
