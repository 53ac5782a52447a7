use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoder::{forward, EncoderParams, ModelConfig};

fn toks(s: &str) -> Vec<Tok> {
    parse_tokens(s).unwrap()
}

fn eval_str(s: &str) -> u8 {
    Expr::parse(&toks(s)).unwrap().eval()
}

/// Independent evaluator: a value stack with operator frames, no tree.
fn stack_eval(tokens: &[Tok]) -> u8 {
    let mut frames: Vec<(Op, Vec<u8>)> = Vec::new();
    let mut result = None;
    for t in tokens {
        match *t {
            Tok::Open(op) => frames.push((op, Vec::new())),
            Tok::Digit(d) => frames.last_mut().unwrap().1.push(d),
            Tok::Close => {
                let (op, mut vals) = frames.pop().unwrap();
                vals.sort();
                let v = match op {
                    Op::Min => vals[0],
                    Op::Max => vals[vals.len() - 1],
                    Op::Med => vals[(vals.len() + 1) / 2 - 1],
                    Op::Sm => vals.iter().fold(0u8, |a, &b| (a + b) % 10),
                };
                match frames.last_mut() {
                    Some(f) => f.1.push(v),
                    None => result = Some(v),
                }
            }
        }
    }
    result.unwrap()
}

#[test]
fn eval_examples() {
    assert_eq!(eval_str("[MED 1 2 3 ]"), 2);
    assert_eq!(eval_str("[SM 9 4 ]"), 3);
    assert_eq!(eval_str("[MAX 2 [MIN 5 6 ] 1 ]"), 5);
    assert_eq!(eval_str("[MED 4 1 3 2 ]"), 2);
    assert_eq!(eval_str("[MIN 7 [SM 5 5 ] ]"), 0);
}

#[test]
fn eval_agrees_with_stack_machine() {
    let cfg = GenConfig::new(10);
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for _ in 0..10_000 {
        let s = generate(&mut rng, &cfg).unwrap();
        assert_eq!(s.label, stack_eval(&s.tokens()));
    }
}

#[test]
fn generation_respects_bounds() {
    let cfg = GenConfig::new(10);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bound = max_token_len(10, 5);
    let mut depth_hist = [0usize; 11];
    for _ in 0..10_000 {
        let s = generate(&mut rng, &cfg).unwrap();
        let d = s.expr.depth();
        assert!((1..=10).contains(&d));
        depth_hist[d] += 1;
        assert!(s.label <= 9);
        let n = s.tokens().len();
        assert!(n <= bound.min(cfg.max_tokens));
        fn arity_ok(e: &Expr) -> bool {
            match e {
                Expr::Leaf(d) => *d <= 9,
                Expr::Node(_, a) => (2..=5).contains(&a.len()) && a.iter().all(arity_ok),
            }
        }
        assert!(arity_ok(&s.expr));
    }
    assert!(depth_hist[1] > 0 && depth_hist[4] > 0);
}

#[test]
fn depth_one_has_only_digit_operands() {
    let cfg = GenConfig::new(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        match generate(&mut rng, &cfg).unwrap().expr {
            Expr::Node(_, args) => assert!(args.iter().all(|a| matches!(a, Expr::Leaf(_)))),
            Expr::Leaf(_) => panic!("root must be an operator"),
        }
    }
}

#[test]
fn generation_is_seed_deterministic() {
    let cfg = GenConfig::new(10);
    assert_eq!(generate_split(5, "train", 50, &cfg).unwrap(), generate_split(5, "train", 50, &cfg).unwrap());
    assert_ne!(generate_split(5, "train", 50, &cfg).unwrap(), generate_split(5, "val", 50, &cfg).unwrap());
}

#[test]
fn overlong_samples_are_redrawn() {
    let cfg = GenConfig { max_tokens: 12, leaf_prob: 0.3, ..GenConfig::new(6) };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        assert!(generate(&mut rng, &cfg).unwrap().tokens().len() <= 12);
    }
    assert!(generate(&mut rng, &GenConfig::new(0)).is_err());
}

#[test]
fn token_length_bound() {
    assert_eq!(max_token_len(1, 5), 7);
    assert_eq!(max_token_len(2, 5), 37);
    // the bound is reached by a full tree
    let full = |d: usize| {
        fn build(d: usize) -> Expr {
            if d == 0 {
                Expr::Leaf(1)
            } else {
                Expr::Node(Op::Sm, (0..5).map(|_| build(d - 1)).collect())
            }
        }
        build(d).tokens().len()
    };
    assert_eq!(full(3), max_token_len(3, 5));
}

#[test]
fn hierarchy_examples() {
    let h = to_hierarchy(&toks("[SM 1 2 ]")).unwrap();
    assert_eq!(h.len(), 3);
    assert_eq!(h.parent, vec![None, Some(0), Some(0)]);
    let h = to_hierarchy(&toks("[MAX 2 [MIN 5 6 ] 1 ]")).unwrap();
    assert_eq!(h.parent, vec![None, Some(0), Some(0), Some(2), Some(2), Some(0)]);
    assert_eq!(format_tokens(&h.tokens), "[MAX 2 [MIN 5 6 1");
}

#[test]
fn malformed_brackets_are_rejected() {
    for bad in ["[SM 1 2", "[SM 1 ] ]", "1 2", "[SM ]", "[SM 1 ] [MIN 2 ]", "]"] {
        assert!(to_hierarchy(&toks(bad)).is_err(), "{bad}");
        assert!(Expr::parse(&toks(bad)).is_err(), "{bad}");
    }
    assert!(matches!(parse_tokens("[SUM 1 ]"), Err(ListOpsError::BadToken(_))));
    assert!(parse_tokens("12").is_err());
}

#[test]
fn deep_sample_round_trips() {
    let cfg = GenConfig { leaf_prob: 0.7, max_tokens: 4000, ..GenConfig::new(20) };
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut deep = 0;
    for _ in 0..5000 {
        let s = generate(&mut rng, &cfg).unwrap();
        let tokens = s.tokens();
        let h = to_hierarchy(&tokens).unwrap();
        assert_eq!(from_hierarchy(&h).unwrap(), tokens);
        // parents over bracketed tokens agree with the hierarchy after index remapping
        let mut remap = vec![usize::MAX; tokens.len()];
        let kept: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i] != Tok::Close).collect();
        for (hi, &ti) in kept.iter().enumerate() {
            remap[ti] = hi;
        }
        let parents = s.parents();
        for (hi, &ti) in kept.iter().enumerate() {
            assert_eq!(parents[ti].map(|p| remap[p]), h.parent[hi]);
        }
        if s.expr.depth() == 20 {
            deep += 1;
            if deep == 5 {
                return;
            }
        }
    }
    panic!("only {deep} depth-20 samples drawn");
}

#[test]
fn blue_mask_example() {
    let h = to_hierarchy(&toks("[SM 1 2 ]")).unwrap();
    let m = variant_mask(&h, Variant::B).unwrap();
    assert_eq!(m.row(0), &[0, 1, 2]);
    assert_eq!(m.row(1), &[1]);
    assert_eq!(m.row(2), &[2]);
    assert_eq!(variant_mask(&h, Variant::Dense).unwrap(), AttnMask::full(3));
}

/// Direct pairwise construction of the rgb pattern.
fn rgb_oracle(parent: &[Option<usize>]) -> Vec<(usize, usize)> {
    let n = parent.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let related = i == j
                || parent[i] == Some(j)
                || parent[j] == Some(i)
                || (parent[i].is_some() && parent[i] == parent[j]);
            if related {
                out.push((i, j));
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn variant_masks_nest(seed in any::<u64>(), depth in 1usize..8) {
        let s = generate(&mut ChaCha8Rng::seed_from_u64(seed), &GenConfig::new(depth)).unwrap();
        let h = s.hierarchy();
        let (rgb, gb, b) = (
            variant_mask(&h, Variant::Rgb).unwrap(),
            variant_mask(&h, Variant::Gb).unwrap(),
            variant_mask(&h, Variant::B).unwrap(),
        );
        prop_assert!(b.is_subset_of(&gb) && gb.is_subset_of(&rgb));
        prop_assert!(b.nnz() < gb.nnz() && gb.nnz() < rgb.nnz());
        for m in [&rgb, &gb, &b] {
            prop_assert!(m.has_full_diagonal());
        }
        prop_assert!(rgb.is_symmetric());
        prop_assert!(!gb.is_symmetric() && !b.is_symmetric());
        prop_assert_eq!(rgb.edges().collect::<Vec<_>>(), rgb_oracle(&h.parent));
    }
}

#[test]
fn depth_two_rgb_matches_tree_mask() {
    let h = to_hierarchy(&toks("[MAX 2 [MIN 5 6 ] 1 ]")).unwrap();
    let want = crate::mask::tree_mask(&h.parent, EdgeToggle::ALL).unwrap();
    assert_eq!(variant_mask(&h, Variant::Rgb).unwrap(), want);
    assert_eq!(want.edges().collect::<Vec<_>>(), rgb_oracle(&h.parent));
}

#[test]
fn blue_digits_ignore_other_tokens() {
    let cfg = ModelConfig { n_layers: 3, d_model: 16, heads: 2, d_ff: 32, vocab_size: VOCAB_SIZE, n_classes: 10, dropout: 0.0, pe_enabled: false, ln_eps: 1e-5 };
    let p = EncoderParams::<f64>::init(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let s = generate(&mut rng, &GenConfig::new(4)).unwrap();
        let base = model_input(&s, Variant::B).unwrap();
        let mut changed = base.clone();
        let digits: Vec<usize> = (0..base.len()).filter(|&i| base.ids[i] < 10).collect();
        let keep = digits[rng.gen_range(0..digits.len())];
        for i in 0..changed.len() {
            if i != keep {
                changed.ids[i] = if changed.ids[i] < 10 { (changed.ids[i] + 3) % 10 } else { 10 + (changed.ids[i] - 9) % 4 };
            }
        }
        let a = forward(&p, &cfg, &base).unwrap().cache;
        let b = forward(&p, &cfg, &changed).unwrap().cache;
        for layer in 0..cfg.n_layers {
            assert_eq!(a.hidden(layer, 0).row(keep), b.hidden(layer, 0).row(keep));
        }
    }
}

#[test]
fn model_inputs_per_variant() {
    let s = Sample::new(Expr::parse(&toks("[MAX 2 [MIN 5 6 ] 1 ]")).unwrap());
    let dense = model_input(&s, Variant::Dense).unwrap();
    assert_eq!(dense.ids, vec![11, 2, 10, 5, 6, 14, 1, 14]);
    assert_eq!(dense.mask.nnz(), 64);
    let b = model_input(&s, Variant::B).unwrap();
    assert_eq!(b.ids, vec![11, 2, 10, 5, 6, 1]);
    assert_eq!(b.mask.nnz(), 6 + 5);
}

#[test]
fn variant_names_parse() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert_eq!("blue".parse::<Variant>().unwrap(), Variant::B);
    assert!("red".parse::<Variant>().is_err());
}

#[test]
fn dataset_file_round_trip() {
    let samples = generate_split(1, "test", 40, &GenConfig::new(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.tsv");
    write_dataset(&path, &samples).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 40);
    assert!(text.lines().next().unwrap().contains('\t'));
    assert_eq!(read_dataset(&path).unwrap(), samples);

    std::fs::write(&path, "3\t[SM 1 2 ]\n4\t[SM 1 2 ]\n").unwrap();
    let err = read_dataset(&path).unwrap_err();
    assert!(matches!(err, crate::Error::ListOps(ListOpsError::Data { line: 2, .. })), "{err}");
    assert!(read_dataset(&dir.path().join("missing.tsv")).is_err());
}
