//! Nested list-operation expressions (MIN, MAX, MED, SM over digits).
//!
//! An expression is written as bracketed tokens, `[MAX 2 [MIN 5 6 ] 1 ]`.
//! For the hierarchical models the closing brackets are dropped and every
//! operator becomes the parent of its operands, giving a rooted tree whose
//! edges drive [`tree_mask`]. The dense baseline keeps the bracketed
//! sequence and attends everywhere.

mod ablation;

use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{Example, ModelInput, Positions};
use crate::mask::{tree_mask, AttnMask, EdgeToggle, MaskError};
use crate::{seeds, Error};

pub use ablation::{run_ablation, AblationConfig, AblationReport, DeskSettings, VariantResult, DESK, REFERENCE_ACCURACY};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ListOpsError {
    #[error("unknown token {0:?}")]
    BadToken(String),
    #[error("malformed brackets: {0}")]
    Malformed(String),
    #[error("line {line}: {msg}")]
    Data { line: usize, msg: String },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("unknown variant {0:?} (expected rgb, gb, b or dense)")]
    BadVariant(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Min,
    Max,
    Med,
    Sm,
}

impl Op {
    pub const ALL: [Op; 4] = [Op::Min, Op::Max, Op::Med, Op::Sm];

    pub fn name(self) -> &'static str {
        match self {
            Op::Min => "MIN",
            Op::Max => "MAX",
            Op::Med => "MED",
            Op::Sm => "SM",
        }
    }

    /// Applies the operator; the median of an even count is the lower one.
    pub fn apply(self, args: &[u8]) -> u8 {
        match self {
            Op::Min => *args.iter().min().expect("operator has operands"),
            Op::Max => *args.iter().max().expect("operator has operands"),
            Op::Med => {
                let mut v = args.to_vec();
                v.sort_unstable();
                v[(v.len() - 1) / 2]
            }
            Op::Sm => (args.iter().map(|&a| a as u32).sum::<u32>() % 10) as u8,
        }
    }
}

/// One token of the bracketed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tok {
    Open(Op),
    Digit(u8),
    Close,
}

/// Embedding ids: digits `0..=9`, then `[MIN [MAX [MED [SM ]`.
pub const VOCAB_SIZE: usize = 15;

impl Tok {
    pub fn id(self) -> u32 {
        match self {
            Tok::Digit(d) => d as u32,
            Tok::Open(op) => 10 + op as u32,
            Tok::Close => 14,
        }
    }
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Open(op) => write!(f, "[{}", op.name()),
            Tok::Digit(d) => write!(f, "{d}"),
            Tok::Close => f.write_str("]"),
        }
    }
}

impl FromStr for Tok {
    type Err = ListOpsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "]" {
            return Ok(Tok::Close);
        }
        if let Some(name) = s.strip_prefix('[') {
            return Op::ALL
                .into_iter()
                .find(|op| op.name() == name)
                .map(Tok::Open)
                .ok_or_else(|| ListOpsError::BadToken(s.into()));
        }
        match s.as_bytes() {
            [d @ b'0'..=b'9'] => Ok(Tok::Digit(d - b'0')),
            _ => Err(ListOpsError::BadToken(s.into())),
        }
    }
}

pub fn parse_tokens(s: &str) -> Result<Vec<Tok>, ListOpsError> {
    s.split_whitespace().map(str::parse).collect()
}

pub fn format_tokens(tokens: &[Tok]) -> String {
    tokens.iter().map(Tok::to_string).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Leaf(u8),
    Node(Op, Vec<Expr>),
}

impl Expr {
    /// Operator nesting depth; a bare digit has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Leaf(_) => 0,
            Expr::Node(_, args) => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    pub fn eval(&self) -> u8 {
        match self {
            Expr::Leaf(d) => *d,
            Expr::Node(op, args) => op.apply(&args.iter().map(Expr::eval).collect::<Vec<_>>()),
        }
    }

    pub fn tokens(&self) -> Vec<Tok> {
        let mut out = Vec::new();
        self.write_tokens(&mut out);
        out
    }

    fn write_tokens(&self, out: &mut Vec<Tok>) {
        match self {
            Expr::Leaf(d) => out.push(Tok::Digit(*d)),
            Expr::Node(op, args) => {
                out.push(Tok::Open(*op));
                args.iter().for_each(|a| a.write_tokens(out));
                out.push(Tok::Close);
            }
        }
    }

    /// Parses a complete bracketed expression.
    pub fn parse(tokens: &[Tok]) -> Result<Expr, ListOpsError> {
        let (expr, used) = Self::parse_at(tokens, 0)?;
        if used != tokens.len() {
            return Err(ListOpsError::Malformed(format!("trailing tokens after position {used}")));
        }
        Ok(expr)
    }

    fn parse_at(tokens: &[Tok], mut i: usize) -> Result<(Expr, usize), ListOpsError> {
        match tokens.get(i) {
            None => Err(ListOpsError::Malformed("unexpected end of input".into())),
            Some(Tok::Digit(d)) => Ok((Expr::Leaf(*d), i + 1)),
            Some(Tok::Close) => Err(ListOpsError::Malformed(format!("unmatched ] at position {i}"))),
            Some(Tok::Open(op)) => {
                i += 1;
                let mut args = Vec::new();
                loop {
                    match tokens.get(i) {
                        Some(Tok::Close) => break,
                        None => return Err(ListOpsError::Malformed("unclosed operator".into())),
                        _ => {
                            let (a, next) = Self::parse_at(tokens, i)?;
                            args.push(a);
                            i = next;
                        }
                    }
                }
                if args.is_empty() {
                    return Err(ListOpsError::Malformed(format!("operator without operands at position {i}")));
                }
                Ok((Expr::Node(*op, args), i + 1))
            }
        }
    }
}

/// Upper bound on the bracketed length of an expression of the given depth and arity.
pub fn max_token_len(max_depth: usize, max_args: usize) -> usize {
    (0..max_depth).fold(1usize, |t, _| t.saturating_mul(max_args).saturating_add(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub max_depth: usize,
    pub min_args: usize,
    pub max_args: usize,
    /// Probability that an operand below the root is a digit rather than a nested operator.
    pub leaf_prob: f64,
    /// Samples with more bracketed tokens are rejected and redrawn.
    pub max_tokens: usize,
}

impl GenConfig {
    pub fn new(max_depth: usize) -> Self {
        Self { max_depth, min_args: 2, max_args: 5, leaf_prob: 0.75, max_tokens: 512 }
    }

    pub fn validate(&self) -> Result<(), ListOpsError> {
        let bad = |m: &str| Err(ListOpsError::Config(m.into()));
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if self.min_args < 1 || self.min_args > self.max_args {
            return bad("need 1 <= min_args <= max_args");
        }
        if !(0.0..=1.0).contains(&self.leaf_prob) {
            return bad("leaf_prob must lie in [0, 1]");
        }
        if self.max_tokens < 2 + self.min_args {
            return bad("max_tokens below the smallest expression");
        }
        Ok(())
    }
}

fn gen_node(rng: &mut impl Rng, cfg: &GenConfig, depth: usize) -> Expr {
    let op = Op::ALL[rng.gen_range(0..4)];
    let arity = rng.gen_range(cfg.min_args..=cfg.max_args);
    let args = (0..arity)
        .map(|_| {
            if depth < cfg.max_depth && !rng.gen_bool(cfg.leaf_prob) {
                gen_node(rng, cfg, depth + 1)
            } else {
                Expr::Leaf(rng.gen_range(0..10))
            }
        })
        .collect();
    Expr::Node(op, args)
}

/// A labelled expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub expr: Expr,
    pub label: u8,
}

impl Sample {
    pub fn new(expr: Expr) -> Self {
        let label = expr.eval();
        Self { expr, label }
    }

    pub fn tokens(&self) -> Vec<Tok> {
        self.expr.tokens()
    }

    /// Parent of each bracketed token: operands and the closing bracket point at their operator.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let tokens = self.tokens();
        let mut stack: Vec<usize> = Vec::new();
        let mut out = Vec::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            out.push(stack.last().copied());
            match t {
                Tok::Open(_) => stack.push(i),
                Tok::Close => {
                    stack.pop();
                }
                Tok::Digit(_) => {}
            }
        }
        out
    }

    pub fn hierarchy(&self) -> Hierarchy {
        to_hierarchy(&self.tokens()).expect("generated expressions are well formed")
    }
}

/// Draws one sample, redrawing until it fits `max_tokens`. The root is always an operator.
pub fn generate(rng: &mut impl Rng, cfg: &GenConfig) -> Result<Sample, ListOpsError> {
    cfg.validate()?;
    loop {
        let expr = gen_node(rng, cfg, 1);
        if expr.tokens().len() <= cfg.max_tokens {
            return Ok(Sample::new(expr));
        }
    }
}

/// `count` samples, sample `i` drawn from its own sub-seed of `(seed, split)`.
pub fn generate_split(seed: u64, split: &str, count: usize, cfg: &GenConfig) -> Result<Vec<Sample>, ListOpsError> {
    (0..count)
        .map(|i| generate(&mut seeds::rng(seed, &format!("listops/{split}"), i as u64), cfg))
        .collect()
}

/// Operators and digits in expression order with their parent links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    pub tokens: Vec<Tok>,
    pub parent: Vec<Option<usize>>,
}

impl Hierarchy {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn to_hierarchy(tokens: &[Tok]) -> Result<Hierarchy, ListOpsError> {
    let mut out = Hierarchy { tokens: Vec::new(), parent: Vec::new() };
    let mut stack: Vec<usize> = Vec::new();
    let mut closed_root = false;
    for (pos, &t) in tokens.iter().enumerate() {
        if closed_root {
            return Err(ListOpsError::Malformed(format!("token after the root closes at position {pos}")));
        }
        match t {
            Tok::Close => {
                let op = stack.pop().ok_or_else(|| ListOpsError::Malformed(format!("unmatched ] at position {pos}")))?;
                if out.len() == op + 1 {
                    return Err(ListOpsError::Malformed(format!("operator without operands at position {pos}")));
                }
                closed_root = stack.is_empty();
            }
            _ => {
                if stack.is_empty() && !out.is_empty() {
                    return Err(ListOpsError::Malformed(format!("second root at position {pos}")));
                }
                out.parent.push(stack.last().copied());
                out.tokens.push(t);
                if let Tok::Open(_) = t {
                    stack.push(out.len() - 1);
                } else if stack.is_empty() {
                    return Err(ListOpsError::Malformed("expression must start with an operator".into()));
                }
            }
        }
    }
    if !stack.is_empty() || out.is_empty() {
        return Err(ListOpsError::Malformed("unclosed operator".into()));
    }
    Ok(out)
}

/// Rebuilds the bracketed sequence, closing each operator after its last descendant.
pub fn from_hierarchy(h: &Hierarchy) -> Result<Vec<Tok>, ListOpsError> {
    crate::mask::tree_depths(&h.parent)?;
    let mut out = Vec::with_capacity(h.len() * 2);
    let mut open: Vec<usize> = Vec::new();
    for (i, (&t, &p)) in h.tokens.iter().zip(&h.parent).enumerate() {
        while let Some(&top) = open.last() {
            if Some(top) == p {
                break;
            }
            open.pop();
            out.push(Tok::Close);
        }
        if p.is_some() && open.is_empty() {
            return Err(ListOpsError::Malformed(format!("token {i} is not in expression order")));
        }
        out.push(t);
        if let Tok::Open(_) = t {
            open.push(i);
        }
    }
    out.extend(std::iter::repeat(Tok::Close).take(open.len()));
    Ok(out)
}

/// Attention pattern families compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Operands also attend up to their operator and to their siblings.
    Rgb,
    /// Operators attend their operands; siblings attend each other.
    Gb,
    /// Operators attend their operands only.
    B,
    /// Every token attends every token.
    Dense,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Dense, Variant::Rgb, Variant::Gb, Variant::B];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rgb => "rgb",
            Variant::Gb => "gb",
            Variant::B => "b",
            Variant::Dense => "dense",
        }
    }

    pub fn toggles(self) -> Option<EdgeToggle> {
        match self {
            Variant::Rgb => Some(EdgeToggle::ALL),
            Variant::Gb => Some(EdgeToggle::DOWN_SIBLING),
            Variant::B => Some(EdgeToggle::DOWN),
            Variant::Dense => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ListOpsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rgb" => Ok(Variant::Rgb),
            "gb" => Ok(Variant::Gb),
            "b" | "blue" => Ok(Variant::B),
            "dense" => Ok(Variant::Dense),
            _ => Err(ListOpsError::BadVariant(s.into())),
        }
    }
}

/// Mask over the hierarchy tokens; `Dense` is all-true.
pub fn variant_mask(h: &Hierarchy, variant: Variant) -> Result<AttnMask, ListOpsError> {
    match variant.toggles() {
        Some(t) => Ok(tree_mask(&h.parent, t)?),
        None => Ok(AttnMask::full(h.len())),
    }
}

/// Model input for one variant. Tree variants see operators and digits under
/// their tree mask; the dense baseline sees the full bracketed sequence.
/// Positions number tokens `1..=n` and are used only if the model enables them.
pub fn model_input(sample: &Sample, variant: Variant) -> Result<ModelInput, ListOpsError> {
    let (tokens, mask) = match variant {
        Variant::Dense => {
            let t = sample.tokens();
            let n = t.len();
            (t, AttnMask::full(n))
        }
        v => {
            let h = sample.hierarchy();
            let m = variant_mask(&h, v)?;
            (h.tokens, m)
        }
    };
    Ok(ModelInput {
        ids: tokens.iter().map(|t| t.id()).collect(),
        positions: Some(Positions::sequential(tokens.len())),
        mask,
    })
}

pub fn examples(samples: &[Sample], variant: Variant) -> Result<Vec<Example>, ListOpsError> {
    samples
        .iter()
        .map(|s| Ok(Example { input: model_input(s, variant)?, label: s.label as usize }))
        .collect()
}

/// Writes `label<TAB>tokens` lines.
pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<(), Error> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        writeln!(w, "{}\t{}", s.label, format_tokens(&s.tokens())).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn parse_record(line: &str) -> Result<Sample, String> {
    let (label, body) = line.split_once('\t').ok_or("missing tab separator")?;
    let label: u8 = label.trim().parse().map_err(|_| format!("bad label {label:?}"))?;
    let tokens = parse_tokens(body).map_err(|e| e.to_string())?;
    let expr = Expr::parse(&tokens).map_err(|e| e.to_string())?;
    let value = expr.eval();
    if value != label {
        return Err(format!("label {label} but expression evaluates to {value}"));
    }
    Ok(Sample { expr, label })
}

/// Reads a dataset file; blank lines are skipped, and every label is re-checked.
pub fn read_dataset(path: &Path) -> Result<Vec<Sample>, Error> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line).map_err(|msg| ListOpsError::Data { line: i + 1, msg })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
