//! CART-style decision trees over weighted classification datasets.
//!
//! Trees split greedily on weighted Gini impurity. Candidate thresholds are
//! midpoints between consecutive distinct sorted feature values, samples
//! with `feature <= threshold` go left, and recursion stops at the depth
//! bound, node purity, or when no split strictly reduces impurity. Leaf
//! labels are the weighted-majority action with lowest-index tie-breaking,
//! and ties in split quality break to the lowest feature index and then the
//! lowest threshold; two splits count as tied when their weighted losses
//! agree within `1e-12` of the node weight, which keeps the trained
//! structure invariant under uniform weight rescaling. Depth is the sole
//! regularizer; there is no pruning.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::game::{Policy, PolicyProvenance, TabularMarkovGame};

#[derive(Debug, Error)]
pub enum DtreeError {
    #[error("training requires at least one sample")]
    EmptyDataset,
    #[error("sample weights must be nonnegative with positive total")]
    BadWeights,
    #[error("sample {index} has {got} features, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("action {action} out of range for {n_actions} actions")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
}

/// One training example: an observation slice, the expert action, a weight.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub action: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        action: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn descend(&self, features: &[f64]) -> usize {
        match self {
            TreeNode::Leaf { action } => *action,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if features[*feature] <= *threshold {
                    left.descend(features)
                } else {
                    right.descend(features)
                }
            }
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature,
                left,
                right,
                ..
            } => [left.max_feature(), right.max_feature(), Some(*feature)]
                .into_iter()
                .flatten()
                .max(),
        }
    }

    fn max_action(&self) -> usize {
        match self {
            TreeNode::Leaf { action } => *action,
            TreeNode::Split { left, right, .. } => left.max_action().max(right.max_action()),
        }
    }
}

/// An axis-aligned depth-limited tree mapping one agent's observation
/// vector to a discrete action.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTreePolicy {
    pub agent: usize,
    pub n_actions: usize,
    pub n_features: usize,
    pub max_depth: usize,
    pub root: TreeNode,
}

impl DecisionTreePolicy {
    /// Deterministic root-to-leaf descent.
    pub fn predict(&self, features: &[f64]) -> Result<usize, DtreeError> {
        if features.len() != self.n_features {
            return Err(DtreeError::DimensionMismatch {
                index: 0,
                got: features.len(),
                expected: self.n_features,
            });
        }
        Ok(self.root.descend(features))
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Nested human-readable text form. Feature names, when given, are
    /// embedded as `f<idx>:<name>`; they are cosmetic and not part of tree
    /// identity.
    pub fn to_text(&self, feature_names: Option<&[String]>) -> String {
        let mut out = String::new();
        write_node(&self.root, feature_names, 0, &mut out);
        out.push('\n');
        out
    }

    /// Parses a tree serialized by [`DecisionTreePolicy::to_text`].
    pub fn from_text(
        text: &str,
        agent: usize,
        n_actions: usize,
        n_features: usize,
    ) -> Result<Self, DtreeError> {
        let parsed = parse_tree(text)?;
        let root = parsed.root;
        if let Some(f) = root.max_feature() {
            if f >= n_features {
                return Err(DtreeError::DimensionMismatch {
                    index: 0,
                    got: f + 1,
                    expected: n_features,
                });
            }
        }
        let max_action = root.max_action();
        if max_action >= n_actions {
            return Err(DtreeError::ActionOutOfRange {
                action: max_action,
                n_actions,
            });
        }
        Ok(Self {
            agent,
            n_actions,
            n_features,
            max_depth: root.depth(),
            root,
        })
    }
}

fn write_node(node: &TreeNode, names: Option<&[String]>, indent: usize, out: &mut String) {
    match node {
        TreeNode::Leaf { action } => {
            let _ = write!(out, "(leaf a{action})");
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let name = names
                .and_then(|n| n.get(*feature))
                .map(|n| format!(":{n}"))
                .unwrap_or_default();
            let _ = write!(out, "(split f{feature}{name} <= {threshold:?}");
            for child in [left, right] {
                out.push('\n');
                for _ in 0..indent + 1 {
                    out.push_str("  ");
                }
                write_node(child, names, indent + 1, out);
            }
            out.push(')');
        }
    }
}

/// Tree text plus any feature names found in it.
pub struct ParsedTree {
    pub root: TreeNode,
    /// `(feature index, name)` pairs in order of first appearance.
    pub feature_names: Vec<(usize, String)>,
}

struct Tokenizer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

#[derive(Debug, PartialEq)]
enum Token {
    Open,
    Close,
    Atom(String),
}

impl<'a> Tokenizer<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            chars: text.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, msg: impl Into<String>) -> DtreeError {
        DtreeError::Parse {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn next_token(&mut self) -> Result<Option<(Token, usize, usize)>, DtreeError> {
        while matches!(self.chars.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
        let (line, col) = (self.line, self.col);
        let Some(&c) = self.chars.peek() else {
            return Ok(None);
        };
        if c == '(' {
            self.bump();
            return Ok(Some((Token::Open, line, col)));
        }
        if c == ')' {
            self.bump();
            return Ok(Some((Token::Close, line, col)));
        }
        let mut atom = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_whitespace() || c == '(' || c == ')' {
                break;
            }
            atom.push(c);
            self.bump();
        }
        Ok(Some((Token::Atom(atom), line, col)))
    }

    fn expect(&mut self, what: &str) -> Result<(Token, usize, usize), DtreeError> {
        self.next_token()?
            .ok_or_else(|| self.err(format!("expected {what}, found end of input")))
    }
}

/// Parses the nested node grammar, reporting the line and column of the
/// first offending token.
pub fn parse_tree(text: &str) -> Result<ParsedTree, DtreeError> {
    let mut tok = Tokenizer::new(text);
    let mut names = Vec::new();
    let root = parse_node(&mut tok, &mut names)?;
    if let Some((_, line, col)) = tok.next_token()? {
        return Err(DtreeError::Parse {
            line,
            col,
            msg: "unexpected trailing content".into(),
        });
    }
    Ok(ParsedTree {
        root,
        feature_names: names,
    })
}

fn parse_node(
    tok: &mut Tokenizer,
    names: &mut Vec<(usize, String)>,
) -> Result<TreeNode, DtreeError> {
    match tok.expect("'('")? {
        (Token::Open, ..) => {}
        (_, line, col) => {
            return Err(DtreeError::Parse {
                line,
                col,
                msg: "expected '('".into(),
            })
        }
    }
    let (head, line, col) = tok.expect("'leaf' or 'split'")?;
    let head = match head {
        Token::Atom(a) => a,
        _ => {
            return Err(DtreeError::Parse {
                line,
                col,
                msg: "expected 'leaf' or 'split'".into(),
            })
        }
    };
    let node = match head.as_str() {
        "leaf" => {
            let (tokn, line, col) = tok.expect("action atom like 'a0'")?;
            let action = match tokn {
                Token::Atom(a) if a.starts_with('a') => {
                    a[1..].parse::<usize>().map_err(|_| DtreeError::Parse {
                        line,
                        col,
                        msg: format!("bad action atom '{a}'"),
                    })?
                }
                _ => {
                    return Err(DtreeError::Parse {
                        line,
                        col,
                        msg: "expected action atom like 'a0'".into(),
                    })
                }
            };
            TreeNode::Leaf { action }
        }
        "split" => {
            let (tokn, line, col) = tok.expect("feature atom like 'f0'")?;
            let feature = match tokn {
                Token::Atom(a) if a.starts_with('f') => {
                    let body = &a[1..];
                    let (idx, name) = match body.split_once(':') {
                        Some((idx, name)) => (idx, Some(name.to_string())),
                        None => (body, None),
                    };
                    let idx = idx.parse::<usize>().map_err(|_| DtreeError::Parse {
                        line,
                        col,
                        msg: format!("bad feature atom '{a}'"),
                    })?;
                    if let Some(name) = name {
                        if !names.iter().any(|(i, _)| *i == idx) {
                            names.push((idx, name));
                        }
                    }
                    idx
                }
                _ => {
                    return Err(DtreeError::Parse {
                        line,
                        col,
                        msg: "expected feature atom like 'f0'".into(),
                    })
                }
            };
            match tok.expect("'<='")? {
                (Token::Atom(a), ..) if a == "<=" => {}
                (_, line, col) => {
                    return Err(DtreeError::Parse {
                        line,
                        col,
                        msg: "expected '<='".into(),
                    })
                }
            }
            let (tokn, line, col) = tok.expect("threshold")?;
            let threshold = match tokn {
                Token::Atom(a) => a.parse::<f64>().map_err(|_| DtreeError::Parse {
                    line,
                    col,
                    msg: format!("bad threshold '{a}'"),
                })?,
                _ => {
                    return Err(DtreeError::Parse {
                        line,
                        col,
                        msg: "expected threshold".into(),
                    })
                }
            };
            let left = parse_node(tok, names)?;
            let right = parse_node(tok, names)?;
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
        other => {
            return Err(DtreeError::Parse {
                line,
                col,
                msg: format!("unknown node kind '{other}'"),
            })
        }
    };
    match tok.expect("')'")? {
        (Token::Close, ..) => Ok(node),
        (_, line, col) => Err(DtreeError::Parse {
            line,
            col,
            msg: "expected ')'".into(),
        }),
    }
}

/// Weighted class counts; `total` is the summed weight.
struct Counts {
    by_class: Vec<f64>,
    total: f64,
}

impl Counts {
    fn new(n_actions: usize) -> Self {
        Self {
            by_class: vec![0.0; n_actions],
            total: 0.0,
        }
    }

    fn add(&mut self, action: usize, weight: f64) {
        self.by_class[action] += weight;
        self.total += weight;
    }

    fn remove(&mut self, action: usize, weight: f64) {
        self.by_class[action] -= weight;
        self.total -= weight;
    }

    /// `W * gini = W - sum w_c^2 / W`; exactly 0 for empty and pure nodes.
    fn weighted_gini(&self) -> f64 {
        if self.total <= 0.0 || self.is_pure() {
            return 0.0;
        }
        let sq: f64 = self.by_class.iter().map(|w| w * w).sum();
        self.total - sq / self.total
    }

    fn majority(&self) -> usize {
        let mut best = 0usize;
        for (a, &w) in self.by_class.iter().enumerate() {
            if w > self.by_class[best] {
                best = a;
            }
        }
        best
    }

    fn is_pure(&self) -> bool {
        self.by_class.iter().filter(|&&w| w > 0.0).count() <= 1
    }
}

/// Trains a depth-limited tree by greedy weighted-Gini splits.
pub fn train_dt(
    samples: &[LabeledSample],
    n_actions: usize,
    max_depth: usize,
    agent: usize,
) -> Result<DecisionTreePolicy, DtreeError> {
    if samples.is_empty() {
        return Err(DtreeError::EmptyDataset);
    }
    let n_features = samples[0].features.len();
    let mut total_weight = 0.0;
    for (index, s) in samples.iter().enumerate() {
        if s.features.len() != n_features {
            return Err(DtreeError::DimensionMismatch {
                index,
                got: s.features.len(),
                expected: n_features,
            });
        }
        if s.action >= n_actions {
            return Err(DtreeError::ActionOutOfRange {
                action: s.action,
                n_actions,
            });
        }
        if s.weight < 0.0 || !s.weight.is_finite() {
            return Err(DtreeError::BadWeights);
        }
        total_weight += s.weight;
    }
    if total_weight <= 0.0 {
        return Err(DtreeError::BadWeights);
    }

    let indices: Vec<usize> = (0..samples.len()).collect();
    let root = build_node(samples, indices, n_actions, n_features, max_depth);
    Ok(DecisionTreePolicy {
        agent,
        n_actions,
        n_features,
        max_depth,
        root,
    })
}

fn build_node(
    samples: &[LabeledSample],
    indices: Vec<usize>,
    n_actions: usize,
    n_features: usize,
    depth_left: usize,
) -> TreeNode {
    let mut counts = Counts::new(n_actions);
    for &i in &indices {
        counts.add(samples[i].action, samples[i].weight);
    }
    if depth_left == 0 || counts.is_pure() {
        return TreeNode::Leaf {
            action: counts.majority(),
        };
    }

    let parent_loss = counts.weighted_gini();
    // Loss ties within this margin keep the earlier candidate, so the
    // structure is stable under uniform weight rescaling.
    let tie_margin = 1e-12 * counts.total;
    let mut best: Option<(f64, usize, f64)> = None; // (loss, feature, threshold)
    let mut order = indices.clone();
    for feature in 0..n_features {
        order.sort_by(|&a, &b| {
            samples[a].features[feature]
                .partial_cmp(&samples[b].features[feature])
                .unwrap()
        });
        let mut left = Counts::new(n_actions);
        let mut right = Counts::new(n_actions);
        for &i in &order {
            right.add(samples[i].action, samples[i].weight);
        }
        for w in 0..order.len() - 1 {
            let i = order[w];
            left.add(samples[i].action, samples[i].weight);
            right.remove(samples[i].action, samples[i].weight);
            let v = samples[i].features[feature];
            let v_next = samples[order[w + 1]].features[feature];
            if v == v_next {
                continue;
            }
            let loss = left.weighted_gini() + right.weighted_gini();
            if best.is_none_or(|(b, ..)| loss < b - tie_margin) {
                best = Some((loss, feature, 0.5 * (v + v_next)));
            }
        }
    }

    match best {
        Some((loss, feature, threshold)) if loss < parent_loss - tie_margin => {
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                .into_iter()
                .partition(|&i| samples[i].features[feature] <= threshold);
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(build_node(
                    samples,
                    left_idx,
                    n_actions,
                    n_features,
                    depth_left - 1,
                )),
                right: Box::new(build_node(
                    samples,
                    right_idx,
                    n_actions,
                    n_features,
                    depth_left - 1,
                )),
            }
        }
        _ => TreeNode::Leaf {
            action: counts.majority(),
        },
    }
}

/// Normalized weighted Gini training loss of a tree on a dataset: the sum
/// over leaves of leaf-weight times leaf Gini, divided by total weight.
pub fn weighted_gini_loss(tree: &TreeNode, samples: &[LabeledSample], n_actions: usize) -> f64 {
    fn accumulate(
        node: &TreeNode,
        samples: &[LabeledSample],
        indices: &[usize],
        n_actions: usize,
        acc: &mut f64,
    ) {
        match node {
            TreeNode::Leaf { .. } => {
                let mut counts = Counts::new(n_actions);
                for &i in indices {
                    counts.add(samples[i].action, samples[i].weight);
                }
                *acc += counts.weighted_gini();
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let (l, r): (Vec<usize>, Vec<usize>) = indices
                    .iter()
                    .partition(|&&i| samples[i].features[*feature] <= *threshold);
                accumulate(left, samples, &l, n_actions, acc);
                accumulate(right, samples, &r, n_actions, acc);
            }
        }
    }
    let indices: Vec<usize> = (0..samples.len()).collect();
    let mut acc = 0.0;
    accumulate(tree, samples, &indices, n_actions, &mut acc);
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    if total > 0.0 {
        acc / total
    } else {
        0.0
    }
}

/// A trained tree acting as one agent's policy over its observation slice.
pub struct StudentPolicy {
    pub tree: Arc<DecisionTreePolicy>,
    pub iteration: usize,
}

impl Policy for StudentPolicy {
    fn act(
        &self,
        game: &TabularMarkovGame,
        agent: usize,
        global_obs: &[f64],
    ) -> Result<usize, String> {
        let slice = game.obs_slice(agent);
        self.tree
            .predict(&global_obs[slice])
            .map_err(|e| e.to_string())
    }

    fn provenance(&self) -> PolicyProvenance {
        PolicyProvenance::Student {
            iteration: self.iteration,
        }
    }
}
