use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{write_json, write_text};
use super::{usage, Format, Fp, Global, Manifest};
use crate::doc_model::{linearize, parse_doc_line, DocError, LinearDoc};
use crate::engine::{skip_report, tiled_forward_with, window_tile_count, AttentionInput, DocPattern, LevelPermutation};
use crate::mask::{diameter, mask_stats as stats_of, sparse_pairs};
use crate::synth::{jittered_doc, DocShape};
use crate::{seeds, Error, Real};

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MaskStatsArgs {
    /// Documents, one JSON nested array `[[[tok,...],...],...]` per line.
    pub docs: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct DocStats {
    doc: usize,
    n: usize,
    nnz: usize,
    density: f64,
    diameter: usize,
    s_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CorpusStats {
    docs: usize,
    tokens: usize,
    nnz: usize,
    mean_density: f64,
    max_diameter: usize,
    max_s_max: usize,
}

fn read_docs(path: &Path) -> anyhow::Result<Vec<LinearDoc>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tree = parse_doc_line(&line).map_err(|e| match e {
            DocError::Parse(msg) => Error::from(DocError::Parse(format!("line {}: {msg}", i + 1))),
            other => Error::from(DocError::Parse(format!("line {}: {other}", i + 1))),
        })?;
        docs.push(linearize(&tree));
    }
    if docs.is_empty() {
        return Err(Error::from(DocError::Parse(format!("{}: no documents", path.display()))).into());
    }
    Ok(docs)
}

pub fn mask_stats(g: &Global, a: &MaskStatsArgs, out: &Path, m: &mut Manifest) -> anyhow::Result<()> {
    m.input(&a.docs)?;
    let docs = read_docs(&a.docs)?;
    let mut rows = Vec::with_capacity(docs.len());
    for (i, doc) in docs.iter().enumerate() {
        let mask = sparse_pairs(doc);
        let s = stats_of(&mask);
        rows.push(DocStats { doc: i, n: s.n, nnz: s.nnz, density: s.density, diameter: diameter(&mask).map_err(Error::from)?, s_max: doc.s_max() });
    }
    let agg = CorpusStats {
        docs: rows.len(),
        tokens: rows.iter().map(|r| r.n).sum(),
        nnz: rows.iter().map(|r| r.nnz).sum(),
        mean_density: rows.iter().map(|r| r.density).sum::<f64>() / rows.len() as f64,
        max_diameter: rows.iter().map(|r| r.diameter).max().unwrap_or(0),
        max_s_max: rows.iter().map(|r| r.s_max).max().unwrap_or(0),
    };
    match g.format_or(Format::Json) {
        Format::Json => {
            let mut text = String::new();
            for r in &rows {
                text.push_str(&serde_json::to_string(r)?);
                text.push('\n');
            }
            write_text(&out.join("mask_stats.jsonl"), &text)?;
            m.output("mask_stats.jsonl");
        }
        Format::Csv => {
            let mut text = String::from("doc,n,nnz,density,diameter,s_max\n");
            for r in &rows {
                writeln!(text, "{},{},{},{},{},{}", r.doc, r.n, r.nnz, r.density, r.diameter, r.s_max)?;
            }
            write_text(&out.join("mask_stats.csv"), &text)?;
            m.output("mask_stats.csv");
        }
    }
    write_json(&out.join("mask_stats_summary.json"), &agg)?;
    m.output("mask_stats_summary.json");
    eprintln!("{} documents, {} tokens, mean density {:.4}", agg.docs, agg.tokens, agg.mean_density);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Sequence lengths to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096])]
    pub n: Vec<usize>,
    /// Nominal sections x sentences x tokens; the section count is rescaled to each n.
    #[arg(long, default_value = "4x8x14")]
    pub shape: String,
    #[arg(long, default_value_t = crate::engine::DEFAULT_BQ)]
    pub bq: usize,
    #[arg(long, default_value_t = crate::engine::DEFAULT_BK)]
    pub bk: usize,
    /// Head width for the flop proxy and the timed kernel.
    #[arg(long, default_value_t = 64)]
    pub d_k: usize,
    /// Sliding-window width of the windowed comparator.
    #[arg(long, default_value_t = 512)]
    pub window: usize,
    /// Also time the tiled kernel; wall_ms is left empty otherwise so output stays deterministic.
    #[arg(long)]
    pub timing: bool,
}

pub const BENCH_HEADER: &str = "n,order,s_max,total_blocks,nonempty,skip_ratio,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize)]
struct BenchRow {
    n: usize,
    order: &'static str,
    s_max: usize,
    total_blocks: usize,
    nonempty: usize,
    skip_ratio: f64,
    wall_ms: Option<f64>,
}

fn time_kernel<T: Real>(doc: &LinearDoc, order: &LevelPermutation, a: &BenchArgs, rng: &mut impl Rng) -> anyhow::Result<f64> {
    let mut m = || Array2::from_shape_simple_fn((doc.len(), a.d_k), || T::lit(rng.gen_range(-1.0..1.0)));
    let inp = AttentionInput::new(m(), m(), m()).map_err(Error::from)?;
    let start = Instant::now();
    tiled_forward_with(&inp, &DocPattern::new(doc), order, a.bq, a.bk).map_err(Error::from)?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

pub fn bench_attention(g: &Global, a: &BenchArgs, out: &Path, m: &mut Manifest) -> anyhow::Result<()> {
    let shape: DocShape = a.shape.parse().map_err(|e| usage(format!("--shape: {e}")))?;
    if a.n.is_empty() || a.n.contains(&0) || a.bq == 0 || a.bk == 0 || a.d_k == 0 {
        return Err(usage("--n, --bq, --bk and --d-k must be positive"));
    }
    let mut rows = Vec::new();
    for (i, &n) in a.n.iter().enumerate() {
        let scaled = shape.scaled_to(n);
        let doc = linearize(&jittered_doc(&mut seeds::rng(g.seed, "bench/doc", i as u64), scaled, 1000));
        let rep = skip_report(&doc, a.bq, a.bk, a.d_k).map_err(Error::from)?;
        let timing = |order: &LevelPermutation| -> anyhow::Result<Option<f64>> {
            if !a.timing {
                return Ok(None);
            }
            let mut rng = seeds::rng(g.seed, "bench/qkv", i as u64);
            Ok(Some(match g.fp {
                Fp::F32 => time_kernel::<f32>(&doc, order, a, &mut rng)?,
                Fp::F64 => time_kernel::<f64>(&doc, order, a, &mut rng)?,
            }))
        };
        let sorted_ms = timing(&LevelPermutation::for_pattern(&DocPattern::new(&doc)))?;
        let unsorted_ms = timing(&LevelPermutation::identity(doc.len()))?;
        let row = |order, nonempty, skip_ratio, wall_ms| BenchRow {
            n: rep.n,
            order,
            s_max: rep.s_max,
            total_blocks: rep.total_blocks,
            nonempty,
            skip_ratio,
            wall_ms,
        };
        rows.push(row("sorted", rep.sorted.nonempty, rep.sorted.skip_ratio, sorted_ms));
        rows.push(row("unsorted", rep.unsorted.nonempty, rep.unsorted.skip_ratio, unsorted_ms));
        let w = window_tile_count(doc.len(), a.window, a.bq, a.bk).map_err(Error::from)?;
        rows.push(row("window", w, 1.0 - w as f64 / rep.total_blocks as f64, None));
    }
    match g.format_or(Format::Csv) {
        Format::Csv => {
            let mut text = format!("{BENCH_HEADER}\n");
            for r in &rows {
                let ms = r.wall_ms.map(|x| format!("{x:.3}")).unwrap_or_default();
                writeln!(text, "{},{},{},{},{},{},{}", r.n, r.order, r.s_max, r.total_blocks, r.nonempty, r.skip_ratio, ms)?;
            }
            write_text(&out.join("bench.csv"), &text)?;
            m.output("bench.csv");
        }
        Format::Json => {
            write_json(&out.join("bench.json"), &rows)?;
            m.output("bench.json");
        }
    }
    for r in &rows {
        eprintln!("n={} {:<8} nonempty={} skip={:.3}", r.n, r.order, r.nonempty, r.skip_ratio);
    }
    Ok(())
}
