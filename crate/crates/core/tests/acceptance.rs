//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion.
//!
//! `cargo test --test acceptance -- 1 3 7` runs a subset. Non-numeric
//! arguments are ignored so the usual test-runner flags pass through.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hdt_core::cli::main_with_args;
use hdt_core::doc_model::{linearize, LinearDoc};
use hdt_core::encoder::{gradient_check, EncoderParams, Example, ModelConfig, ModelInput};
use hdt_core::engine::{dense_masked_attention, skip_report, tiled_forward, AttentionInput, DEFAULT_BK, DEFAULT_BQ};
use hdt_core::hpe::{encode_position, EncodingConfig};
use hdt_core::listops::{generate_split, run_ablation, AblationConfig, GenConfig, Variant};
use hdt_core::mask::{combine, level_masks, sparse_pairs, tree_mask, DenseMask, EdgeToggle};
use hdt_core::seeds;
use hdt_core::synth::{jittered_doc, jittered_doc_near, regular_doc, DocShape};
use ndarray::Array2;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_s, format!("{s:.1}s (limit {limit_s:.0}s)"))
}

fn random_matrix(rng: &mut impl Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
}

fn max_abs_diff<T: Into<f64> + Copy>(a: &Array2<T>, b: &Array2<T>) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x.into() - y.into()).abs()).fold(0.0, f64::max)
}

fn tiled_vs_dense() -> Outcome {
    let start = Instant::now();
    let mut rng = seeds::rng(1, "acceptance/oracle", 0);
    let (mut worst64, mut worst32, mut docs, mut max_n, mut min_n) = (0.0f64, 0.0f64, 0, 0, usize::MAX);
    let mut failures = Vec::new();
    while docs < 200 {
        let target = (16.0 * 128f64.powf(rng.gen::<f64>())).round() as usize;
        let sentences = rng.gen_range(1..=10);
        let tokens = rng.gen_range(2..=30);
        let doc = linearize(&jittered_doc_near(&mut rng, sentences, tokens, target.max(16), 1000));
        let n = doc.len();
        if !(16..=2048).contains(&n) {
            continue;
        }
        docs += 1;
        (max_n, min_n) = (max_n.max(n), min_n.min(n));
        let d_k = [8, 16, 32, 64][rng.gen_range(0..4)];
        let (bq, bk) = [(DEFAULT_BQ, DEFAULT_BK), (128, 64), (32, 32), (16, 48)][rng.gen_range(0..4)];
        let (q, k, v) = (random_matrix(&mut rng, n, d_k), random_matrix(&mut rng, n, d_k), random_matrix(&mut rng, n, d_k));
        let dense_mask = sparse_pairs(&doc).to_dense().expect("n within dense cap");

        let inp = AttentionInput::new(q.clone(), k.clone(), v.clone()).unwrap();
        let want = dense_masked_attention(&inp, &dense_mask).unwrap();
        let got = tiled_forward(&inp, &doc, bq, bk).unwrap();
        let e64 = max_abs_diff(&got, &want);

        let f32s = |m: &Array2<f64>| m.mapv(|x| x as f32);
        let inp32 = AttentionInput::new(f32s(&q), f32s(&k), f32s(&v)).unwrap();
        let want32 = dense_masked_attention(&inp32, &dense_mask).unwrap();
        let got32 = tiled_forward(&inp32, &doc, bq, bk).unwrap();
        let e32 = max_abs_diff(&got32, &want32);

        worst64 = worst64.max(e64);
        worst32 = worst32.max(e32);
        if e64 > 1e-10 || e32 > 1e-5 {
            failures.push(n);
        }
    }
    let (fast, time) = within(start.elapsed(), 300.0);
    outcome(
        failures.is_empty() && fast,
        format!(
            "{docs} docs, n in [{min_n}, {max_n}]; max|diff| f64 {worst64:.2e} (<= 1e-10), f32 {worst32:.2e} (<= 1e-5); {} failing; {time}",
            failures.len()
        ),
    )
}

fn brute_iverson(doc: &LinearDoc) -> DenseMask {
    let p: Vec<[u32; 3]> = doc.positions().map(|p| p.0).collect();
    DenseMask::from_fn(p.len(), |i, j| {
        let (a, b) = (p[i], p[j]);
        (a[1] == 0 && b[1] == 0) || (a[2] == 0 && b[2] == 0 && a[0] == b[0]) || (a[0] == b[0] && a[1] == b[1])
    })
    .unwrap()
}

fn mask_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = seeds::rng(2, "acceptance/masks", 0);
    let (mut docs, mut mismatches, mut max_n) = (0, 0, 0);
    while docs < 1000 {
        let shape = DocShape::new(rng.gen_range(1..=6), rng.gen_range(1..=8), rng.gen_range(1..=16));
        let doc = linearize(&jittered_doc(&mut rng, shape, 500));
        if doc.len() > 512 {
            continue;
        }
        docs += 1;
        max_n = max_n.max(doc.len());
        let lm = level_masks(&doc).unwrap();
        let combined = combine(&lm.doc, &lm.sec, &lm.sent).unwrap();
        let tree = tree_mask(&doc.parents(), EdgeToggle::ALL).unwrap();
        let brute = brute_iverson(&doc).to_sparse();
        if combined != tree || tree != brute || sparse_pairs(&doc) != brute {
            mismatches += 1;
        }
    }
    let (fast, time) = within(start.elapsed(), 60.0);
    outcome(mismatches == 0 && fast, format!("{docs} docs (n <= {max_n}), {mismatches} mismatching; {time}"))
}

fn sorting_payoff() -> Outcome {
    let mut rng = seeds::rng(3, "acceptance/skip", 0);
    let (mut strictly_better, mut sum_diff) = (0, 0.0);
    let mut ns = Vec::new();
    for _ in 0..100 {
        let sentences = rng.gen_range(4..=12);
        let tokens = rng.gen_range(8..=24);
        let doc = linearize(&jittered_doc_near(&mut rng, sentences, tokens, 4096, 30_000));
        ns.push(doc.len());
        let r = skip_report(&doc, 128, 64, 64).unwrap();
        if r.total_blocks - r.sorted.nonempty > r.total_blocks - r.unsorted.nonempty {
            strictly_better += 1;
        }
        sum_diff += r.sorted.skip_ratio - r.unsorted.skip_ratio;
    }
    let mean = sum_diff / 100.0;
    let (lo, hi) = (ns.iter().min().unwrap(), ns.iter().max().unwrap());
    outcome(
        strictly_better >= 95 && mean >= 0.05,
        format!("n in [{lo}, {hi}]; sorted skips more on {strictly_better}/100 (>= 95); mean skip-ratio gain {mean:.4} (>= 0.05)"),
    )
}

fn linear_scaling() -> Outcome {
    let start = Instant::now();
    let base = DocShape::new(1, 8, 15);
    let mut rng = seeds::rng(4, "acceptance/scaling", 0);
    let mut counts = Vec::new();
    for n in [1024, 2048, 4096] {
        let doc = linearize(&regular_doc(&mut rng, base.scaled_to(n), 30_000));
        let r = skip_report(&doc, DEFAULT_BQ, DEFAULT_BK, 64).unwrap();
        counts.push((doc.len(), r.sorted.nonempty, r.unsorted.nonempty));
    }
    let ratios: Vec<f64> = counts.windows(2).map(|w| w[1].1 as f64 / w[0].1 as f64).collect();
    let ok = ratios.iter().all(|r| (1.8..=2.6).contains(r));
    let (fast, time) = within(start.elapsed(), 120.0);
    let table: Vec<String> = counts.iter().map(|(n, s, u)| format!("n={n}: {s} sorted / {u} unsorted")).collect();
    outcome(
        ok && fast,
        format!("{}; sorted ratios {:.3?} (in [1.8, 2.6]); {time}", table.join(", "), ratios),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 8,
        heads: 2,
        d_ff: 16,
        vocab_size: 20,
        n_classes: 3,
        dropout: 0.0,
        pe_enabled: true,
        ln_eps: 1e-5,
    };
    let mut rng = seeds::rng(5, "acceptance/grad", 0);
    let mut data = Vec::new();
    while data.len() < 4 {
        let shape = DocShape::new(rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(1..=3));
        let doc = linearize(&jittered_doc(&mut rng, shape, 16));
        if doc.len() <= 12 {
            data.push(Example { input: ModelInput::from_doc(&doc), label: rng.gen_range(0..cfg.n_classes) });
        }
    }
    let params = EncoderParams::<f64>::init(&cfg, 5);
    let checks = gradient_check(&params, &cfg, &data, 1e-4).unwrap();
    let worst = checks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let lens: Vec<usize> = data.iter().map(|e| e.input.len()).collect();
    let (fast, time) = within(start.elapsed(), 300.0);
    outcome(
        worst.max_rel_error <= 1e-4 && fast,
        format!(
            "{} tensors, docs n={lens:?}; worst rel error {:.2e} in {} (<= 1e-4); {time}",
            checks.len(),
            worst.max_rel_error,
            worst.name
        ),
    )
}

fn ablation() -> Outcome {
    let start = Instant::now();
    let cfg = AblationConfig::desk(0);
    let gen = GenConfig::new(10);
    let train = generate_split(0, "train", 20_000, &gen).unwrap();
    let val = generate_split(0, "val", 2_000, &gen).unwrap();
    let test = generate_split(0, "test", 5_000, &gen).unwrap();
    let report = run_ablation::<f64>(&cfg, &train, &val, &test, |r| {
        eprintln!(
            "  ablation {}: test {:?}, best val {:?} at step {:?}, {:.0}s",
            r.variant,
            r.test_accuracy,
            r.best_val_accuracy,
            r.best_step,
            start.elapsed().as_secs_f64()
        );
    })
    .unwrap();
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    fs::create_dir_all(&dir).unwrap();
    let curves = dir.join("listops_learning_curves.json");
    fs::write(&curves, serde_json::to_string_pretty(&report).unwrap()).unwrap();

    let acc = |v| report.accuracy(v).unwrap_or(f64::NAN);
    let (dense, rgb, gb, b) = (acc(Variant::Dense), acc(Variant::Rgb), acc(Variant::Gb), acc(Variant::B));
    let a = rgb > dense && gb > dense && b > dense;
    let ordering = b >= gb - 1.0 && gb >= rgb - 1.0;
    let margin = b >= dense + 5.0;
    let (fast, time) = within(start.elapsed(), 7200.0);
    outcome(
        a && ordering && margin && fast,
        format!(
            "test acc dense {dense:.2}, rgb {rgb:.2}, gb {gb:.2}, b {b:.2}; all beat dense: {a}; ordering: {ordering}; b-dense {:.2} (>= 5); curves {}; {time}",
            b - dense,
            curves.display()
        ),
    )
}

fn hpe_values() -> Outcome {
    let start = Instant::now();
    let d = 64;
    let cfg = EncodingConfig::document(d).unwrap();
    let zero: Vec<f64> = encode_position(&[0, 0, 0], &cfg).unwrap();
    let unit = zero.iter().enumerate().all(|(i, &x)| x == if i % 2 == 0 { 0.0 } else { 3.0 });

    let mut rng = seeds::rng(7, "acceptance/hpe", 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p: [u32; 3] = [rng.gen_range(0..512), rng.gen_range(0..512), rng.gen_range(0..512)];
        let got: Vec<f64> = encode_position(&p, &cfg).unwrap();
        for (i, &g) in got.iter().enumerate() {
            let k = (i / 2) as f64;
            let w = 1.0 / 10_000f64.powf(2.0 * k / d as f64);
            let want: f64 = p.iter().map(|&pl| if i % 2 == 0 { (pl as f64 * w).sin() } else { (pl as f64 * w).cos() }).sum();
            worst = worst.max((g - want).abs());
        }
    }
    let (fast, time) = within(start.elapsed(), 1.0);
    outcome(
        unit && worst <= 1e-12 && fast,
        format!("(0,0,0) gives even 0 / odd 3: {unit}; additivity max|diff| {worst:.2e} over 1000 positions (<= 1e-12); {time}"),
    )
}

fn cli(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("hdt").chain(args.iter().copied()))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |name: &str| root.join(name).to_str().unwrap().to_owned();
    let data = p("data");
    let docs = root.join("docs.jsonl");
    fs::write(&docs, "[[[1,2]]]\n[[[3,4,5],[6]],[[7]]]\n[[[1,2]]]\n").unwrap();
    let docs = docs.to_str().unwrap().to_owned();
    let ckpt = format!("{}/checkpoint.json", p("train"));
    let tiny = ["--layers", "1", "--d-model", "8", "--heads", "2", "--d-ff", "16"];
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("gen-listops", vec!["gen-listops", "--train", "64", "--val", "16", "--test", "16", "--depth", "4", "--seed", "3"]),
        ("mask-stats", vec!["mask-stats", &docs]),
        ("bench-attention", vec!["bench-attention", "--n", "256,512"]),
        ("train", [&["train", "--data", &data, "--variant", "gb", "--steps", "8", "--batch-size", "8", "--eval-every", "4"][..], &tiny].concat()),
        ("eval", vec!["eval", "--checkpoint", &ckpt, "--data", &format!("{data}/test.tsv"), "--variant", "gb"]),
        ("ablation", [&["ablation", "--data", &data, "--steps", "4", "--batch-size", "8", "--eval-every", "2"][..], &tiny].concat()),
    ]
    .into_iter()
    .map(|(name, args)| (name, args.into_iter().map(str::to_owned).collect()))
    .collect();

    let mut failed = Vec::new();
    for (name, args) in &runs {
        let first = if *name == "gen-listops" { data.clone() } else { p(name) };
        let mut full: Vec<&str> = args.iter().map(String::as_str).collect();
        full.extend(["--fp", "64", "--out", &first]);
        if cli(&full) != 0 {
            failed.push(format!("{name} exited nonzero"));
            continue;
        }
        let again = p(&format!("{name}-replay"));
        let manifest = format!("{first}/manifest.json");
        if cli(&["replay", &manifest, "--out", &again]) != 0 || dir_bytes(Path::new(&first)) != dir_bytes(Path::new(&again)) {
            failed.push(format!("{name} replay differs"));
        }
    }
    outcome(
        failed.is_empty(),
        format!("{} commands replayed from their manifests; differing: {failed:?}", runs.len()),
    )
}

const CRITERIA: [(&str, fn() -> Outcome); 8] = [
    ("tiled kernel matches dense oracle", tiled_vs_dense),
    ("level masks, tree mask and Iverson oracle agree", mask_equivalence),
    ("level sorting skips more tiles", sorting_payoff),
    ("nonempty tiles scale linearly", linear_scaling),
    ("finite-difference gradient check", gradients),
    ("ListOps attention ablation", ablation),
    ("positional encoding values", hpe_values),
    ("manifest replay is byte-identical", determinism),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut all_pass = true;
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let o = run();
        all_pass &= o.pass;
        println!("criterion {id}: {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if !all_pass {
        std::process::exit(1);
    }
}
