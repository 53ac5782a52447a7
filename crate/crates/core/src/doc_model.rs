//! Document trees, anchor-token linearization and hierarchical positions.
//!
//! A [`DocTree`] is a validated `sections -> sentences -> tokens` nesting.
//! [`linearize`] emits it depth-first as a [`LinearDoc`]:
//!
//! ```text
//! [DOC] [SEC] [SENT] t t t [SENT] t t [SEC] [SENT] t ...
//! ```
//!
//! Each token carries a [`HierPos`] `(section, sentence, token)`. Real elements
//! are numbered from 1 within their parent; a 0 component marks an anchor at or
//! above that level, so `[DOC]` is `(0,0,0)`, the k-th `[SEC]` is `(k,0,0)`, its
//! j-th `[SENT]` is `(k,j,0)` and that sentence's t-th token is `(k,j,t)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of indexed hierarchy levels below the document (section, sentence, token).
pub const LEVELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DocError {
    #[error("document has no sections")]
    EmptyDocument,
    #[error("section {section} has no sentences")]
    EmptySection { section: usize },
    #[error("section {section}, sentence {sentence} has no tokens")]
    EmptySentence { section: usize, sentence: usize },
    #[error("pseudo-section group size must be at least 1")]
    ZeroGroupSize,
    #[error("no sentences to group")]
    NoSentences,
    #[error("malformed document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    DocAnchor,
    SecAnchor,
    SentAnchor,
    Regular,
}

impl NodeKind {
    pub const ALL: [NodeKind; 4] = [
        NodeKind::DocAnchor,
        NodeKind::SecAnchor,
        NodeKind::SentAnchor,
        NodeKind::Regular,
    ];

    pub fn level(self) -> u32 {
        level_of(self)
    }

    pub fn is_anchor(self) -> bool {
        self != NodeKind::Regular
    }
}

/// Hierarchy level of a node: document 0, section 1, sentence 2, regular token 3.
pub fn level_of(kind: NodeKind) -> u32 {
    match kind {
        NodeKind::DocAnchor => 0,
        NodeKind::SecAnchor => 1,
        NodeKind::SentAnchor => 2,
        NodeKind::Regular => 3,
    }
}

/// Per-level position indices `(section, sentence, token)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HierPos(pub [u32; LEVELS]);

impl HierPos {
    pub const DOC: HierPos = HierPos([0, 0, 0]);

    pub fn section(&self) -> u32 {
        self.0[0]
    }

    pub fn sentence(&self) -> u32 {
        self.0[1]
    }

    pub fn token(&self) -> u32 {
        self.0[2]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    /// The node kind implied by which trailing components are zero.
    pub fn kind(&self) -> NodeKind {
        match self.0 {
            [0, _, _] => NodeKind::DocAnchor,
            [_, 0, _] => NodeKind::SecAnchor,
            [_, _, 0] => NodeKind::SentAnchor,
            _ => NodeKind::Regular,
        }
    }
}

/// A validated document: every section has a sentence, every sentence a token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DocTree {
    sections: Vec<Vec<Vec<u32>>>,
}

impl DocTree {
    pub fn sections(&self) -> &[Vec<Vec<u32>>] {
        &self.sections
    }

    pub fn n_sections(&self) -> usize {
        self.sections.len()
    }

    pub fn n_sentences(&self) -> usize {
        self.sections.iter().map(Vec::len).sum()
    }

    pub fn n_tokens(&self) -> usize {
        self.sections.iter().flatten().map(Vec::len).sum()
    }

    pub fn into_sections(self) -> Vec<Vec<Vec<u32>>> {
        self.sections
    }
}

/// Validates a `sections -> sentences -> token ids` nesting.
pub fn build_tree(sections: Vec<Vec<Vec<u32>>>) -> Result<DocTree, DocError> {
    if sections.is_empty() {
        return Err(DocError::EmptyDocument);
    }
    for (s, section) in sections.iter().enumerate() {
        if section.is_empty() {
            return Err(DocError::EmptySection { section: s });
        }
        if let Some(j) = section.iter().position(Vec::is_empty) {
            return Err(DocError::EmptySentence { section: s, sentence: j });
        }
    }
    Ok(DocTree { sections })
}

/// Groups consecutive sentences of unstructured text into sections of `group_size`.
pub fn pseudo_sectionize(sentences: Vec<Vec<u32>>, group_size: usize) -> Result<DocTree, DocError> {
    if group_size == 0 {
        return Err(DocError::ZeroGroupSize);
    }
    if sentences.is_empty() {
        return Err(DocError::NoSentences);
    }
    let mut sections = Vec::with_capacity(sentences.len().div_ceil(group_size));
    let mut it = sentences.into_iter().peekable();
    while it.peek().is_some() {
        sections.push(it.by_ref().take(group_size).collect());
    }
    build_tree(sections)
}

/// Parses one line of the document input format: `[[[t,...],...],...]`.
pub fn parse_doc_line(line: &str) -> Result<DocTree, DocError> {
    let sections: Vec<Vec<Vec<u32>>> =
        serde_json::from_str(line.trim()).map_err(|e| DocError::Parse(e.to_string()))?;
    build_tree(sections)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DocToken {
    /// Vocabulary id for regular tokens, `None` for anchors.
    pub vocab: Option<u32>,
    pub kind: NodeKind,
    pub pos: HierPos,
}

/// A document flattened depth-first with anchor tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LinearDoc {
    tokens: Vec<DocToken>,
    s_max: usize,
    n_sections: usize,
    n_sentences: usize,
}

pub fn linearize(tree: &DocTree) -> LinearDoc {
    let n_total = tree.n_tokens() + tree.n_sentences() + tree.n_sections() + 1;
    let mut tokens = Vec::with_capacity(n_total);
    tokens.push(DocToken { vocab: None, kind: NodeKind::DocAnchor, pos: HierPos::DOC });
    let mut s_max = 0;
    for (k, section) in tree.sections.iter().enumerate() {
        let k = k as u32 + 1;
        tokens.push(DocToken { vocab: None, kind: NodeKind::SecAnchor, pos: HierPos([k, 0, 0]) });
        for (j, sentence) in section.iter().enumerate() {
            let j = j as u32 + 1;
            tokens.push(DocToken {
                vocab: None,
                kind: NodeKind::SentAnchor,
                pos: HierPos([k, j, 0]),
            });
            tokens.extend(sentence.iter().enumerate().map(|(t, &id)| DocToken {
                vocab: Some(id),
                kind: NodeKind::Regular,
                pos: HierPos([k, j, t as u32 + 1]),
            }));
            s_max = s_max.max(sentence.len() + 1);
        }
    }
    debug_assert_eq!(tokens.len(), n_total);
    LinearDoc { tokens, s_max, n_sections: tree.n_sections(), n_sentences: tree.n_sentences() }
}

impl LinearDoc {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false: a linearized document holds at least the four anchors/tokens of one sentence.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[DocToken] {
        &self.tokens
    }

    /// Length of the longest sentence including its `[SENT]` anchor.
    pub fn s_max(&self) -> usize {
        self.s_max
    }

    pub fn n_sections(&self) -> usize {
        self.n_sections
    }

    pub fn n_sentences(&self) -> usize {
        self.n_sentences
    }

    pub fn n_regular(&self) -> usize {
        self.tokens.len() - self.n_sentences - self.n_sections - 1
    }

    pub fn positions(&self) -> impl ExactSizeIterator<Item = HierPos> + '_ {
        self.tokens.iter().map(|t| t.pos)
    }

    pub fn levels(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.kind.level()).collect()
    }

    /// Parent index of every token in the anchor tree (`None` for `[DOC]`).
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = Vec::with_capacity(self.tokens.len());
        let (mut sec, mut sent) = (0, 0);
        for (i, tok) in self.tokens.iter().enumerate() {
            parents.push(match tok.kind {
                NodeKind::DocAnchor => None,
                NodeKind::SecAnchor => {
                    sec = i;
                    Some(0)
                }
                NodeKind::SentAnchor => {
                    sent = i;
                    Some(sec)
                }
                NodeKind::Regular => Some(sent),
            });
        }
        parents
    }

    /// Rebuilds the tree by grouping regular tokens on `(section, sentence)`.
    pub fn to_tree(&self) -> DocTree {
        let mut sections: Vec<Vec<Vec<u32>>> = Vec::with_capacity(self.n_sections);
        for tok in &self.tokens {
            let [k, j, _] = tok.pos.0;
            match tok.kind {
                NodeKind::DocAnchor => {}
                NodeKind::SecAnchor => sections.push(Vec::new()),
                NodeKind::SentAnchor => sections[k as usize - 1].push(Vec::new()),
                NodeKind::Regular => sections[k as usize - 1][j as usize - 1]
                    .push(tok.vocab.expect("regular token carries a vocabulary id")),
            }
        }
        DocTree { sections }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds(doc: &LinearDoc) -> Vec<NodeKind> {
        doc.tokens().iter().map(|t| t.kind).collect()
    }

    #[test]
    fn build_tree_counts() {
        let t = build_tree(vec![vec![vec![5, 6]]]).unwrap();
        assert_eq!((t.n_sections(), t.n_sentences(), t.n_tokens()), (1, 1, 2));
        let t = build_tree(vec![vec![vec![1], vec![2, 3]], vec![vec![4]]]).unwrap();
        assert_eq!((t.n_sections(), t.n_sentences(), t.n_tokens()), (2, 3, 4));
    }

    #[test]
    fn build_tree_rejects_empty_nodes() {
        assert_eq!(build_tree(vec![vec![vec![]]]), Err(DocError::EmptySentence { section: 0, sentence: 0 }));
        assert_eq!(build_tree(vec![]), Err(DocError::EmptyDocument));
        assert_eq!(
            build_tree(vec![vec![vec![1]], vec![]]),
            Err(DocError::EmptySection { section: 1 })
        );
        assert_eq!(
            build_tree(vec![vec![vec![1], vec![2], vec![]]]),
            Err(DocError::EmptySentence { section: 0, sentence: 2 })
        );
    }

    #[test]
    fn linearize_smallest_doc() {
        let doc = linearize(&build_tree(vec![vec![vec![5, 6]]]).unwrap());
        let got: Vec<_> = doc.tokens().iter().map(|t| (t.vocab, t.kind, t.pos.0)).collect();
        assert_eq!(
            got,
            vec![
                (None, NodeKind::DocAnchor, [0, 0, 0]),
                (None, NodeKind::SecAnchor, [1, 0, 0]),
                (None, NodeKind::SentAnchor, [1, 1, 0]),
                (Some(5), NodeKind::Regular, [1, 1, 1]),
                (Some(6), NodeKind::Regular, [1, 1, 2]),
            ]
        );
        assert_eq!(doc.s_max(), 3);
    }

    #[test]
    fn linearize_counts_anchors() {
        let doc = linearize(&build_tree(vec![vec![vec![1]], vec![vec![2]]]).unwrap());
        assert_eq!(doc.len(), 7);
    }

    #[test]
    fn linearize_follows_depth_first_anchor_order() {
        // Two sections, three sentences: T1 T2 | T3 || T4 T5
        let doc = linearize(&build_tree(vec![vec![vec![1, 2], vec![3]], vec![vec![4, 5]]]).unwrap());
        use NodeKind::*;
        assert_eq!(
            kinds(&doc),
            vec![DocAnchor, SecAnchor, SentAnchor, Regular, Regular, SentAnchor, Regular, SecAnchor, SentAnchor, Regular, Regular]
        );
        let ids: Vec<_> = doc.tokens().iter().filter_map(|t| t.vocab).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 5]);
        assert_eq!(doc.tokens()[6].pos, HierPos([1, 2, 1]));
        assert_eq!(doc.tokens()[10].pos, HierPos([2, 1, 2]));
    }

    #[test]
    fn pseudo_sections() {
        let sents: Vec<Vec<u32>> = (0..70).map(|i| vec![i]).collect();
        let t = pseudo_sectionize(sents, 32).unwrap();
        let sizes: Vec<_> = t.sections().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![32, 32, 6]);

        let t = pseudo_sectionize(vec![vec![1, 2]], 32).unwrap();
        assert_eq!((t.n_sections(), t.n_sentences()), (1, 1));

        let t = pseudo_sectionize((0..64).map(|i| vec![i]).collect(), 32).unwrap();
        assert_eq!(t.n_sections(), 2);

        assert_eq!(pseudo_sectionize(vec![vec![1]], 0), Err(DocError::ZeroGroupSize));
        assert_eq!(pseudo_sectionize(vec![], 4), Err(DocError::NoSentences));
    }

    #[test]
    fn levels() {
        assert_eq!(level_of(NodeKind::DocAnchor), 0);
        assert_eq!(level_of(NodeKind::SecAnchor), 1);
        assert_eq!(level_of(NodeKind::SentAnchor), 2);
        assert_eq!(level_of(NodeKind::Regular), 3);
    }

    #[test]
    fn parse_line() {
        let t = parse_doc_line("[[[1],[2,3]],[[4]]]\n").unwrap();
        assert_eq!(t.n_tokens(), 4);
        assert!(matches!(parse_doc_line("[[[1],"), Err(DocError::Parse(_))));
        assert!(matches!(parse_doc_line("[[[-1]]]"), Err(DocError::Parse(_))));
        assert_eq!(parse_doc_line("[[[]]]"), Err(DocError::EmptySentence { section: 0, sentence: 0 }));
    }

    fn arb_tree() -> impl Strategy<Value = DocTree> {
        prop::collection::vec(
            prop::collection::vec(prop::collection::vec(0u32..50, 1..6), 1..5),
            1..5,
        )
        .prop_map(|s| build_tree(s).unwrap())
    }

    proptest! {
        #[test]
        fn anchor_count_identity(tree in arb_tree()) {
            let doc = linearize(&tree);
            prop_assert_eq!(doc.len(), doc.n_regular() + tree.n_sentences() + tree.n_sections() + 1);
            prop_assert_eq!(doc.n_regular(), tree.n_tokens());
        }

        #[test]
        fn round_trip_through_positions(tree in arb_tree()) {
            prop_assert_eq!(linearize(&tree).to_tree(), tree);
        }

        #[test]
        fn positions_match_kinds_and_parents(tree in arb_tree()) {
            let doc = linearize(&tree);
            prop_assert_eq!(doc.tokens()[0].kind, NodeKind::DocAnchor);
            for (i, (tok, parent)) in doc.tokens().iter().zip(doc.parents()).enumerate() {
                prop_assert_eq!(tok.pos.kind(), tok.kind);
                match tok.kind {
                    NodeKind::DocAnchor => prop_assert!(i == 0 && parent.is_none()),
                    _ => {
                        // The parent is the unique anchor whose position is this token's
                        // position with its own level component zeroed.
                        let p = parent.unwrap();
                        let mut want = tok.pos.0;
                        want[tok.kind.level() as usize - 1] = 0;
                        prop_assert_eq!(doc.tokens()[p].pos.0, want);
                        let matches = doc.tokens().iter().filter(|t| t.pos.0 == want).count();
                        prop_assert_eq!(matches, 1);
                    }
                }
            }
        }

        #[test]
        fn distinct_trees_linearize_distinctly(a in arb_tree(), b in arb_tree()) {
            let sig = |d: &LinearDoc| d.tokens().iter().map(|t| (t.kind, t.pos, t.vocab)).collect::<Vec<_>>();
            if a != b {
                prop_assert_ne!(sig(&linearize(&a)), sig(&linearize(&b)));
            }
        }
    }
}
