use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::scalar::Scalar;

/// Send `x[predictor] < threshold` left, everything else right.
///
/// `threshold` is `grid.cuts(predictor)[cut_index]`; it is carried on the
/// rule so a tree can be evaluated on raw rows without its grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRule<S> {
    pub predictor: usize,
    pub cut_index: usize,
    pub threshold: S,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeafPayload<S> {
    Constant(S),
    /// `intercept + slope * exposure`.
    Line { intercept: S, slope: S },
}

impl<S: Scalar> LeafPayload<S> {
    pub fn zero_like(&self) -> Self {
        match self {
            Self::Constant(_) => Self::Constant(S::zero()),
            Self::Line { .. } => Self::Line { intercept: S::zero(), slope: S::zero() },
        }
    }

    pub fn is_line(&self) -> bool {
        matches!(self, Self::Line { .. })
    }

    #[inline]
    pub fn value(&self, exposure: Option<S>) -> Result<S> {
        match (self, exposure) {
            (Self::Constant(v), None) => Ok(*v),
            (Self::Line { intercept, slope }, Some(t)) => Ok(*intercept + *slope * t),
            (Self::Constant(_), Some(_)) => input("exposure supplied to a constant-leaf tree"),
            (Self::Line { .. }, None) => input("line-leaf tree evaluated without an exposure"),
        }
    }

    /// Evaluation inside samplers, where the payload kind is known to match.
    #[inline]
    pub(crate) fn value_unchecked(&self, exposure: S) -> S {
        match self {
            Self::Constant(v) => *v,
            Self::Line { intercept, slope } => *intercept + *slope * exposure,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum NodeKind<S> {
    Leaf(LeafPayload<S>),
    Internal { rule: SplitRule<S>, left: usize, right: usize },
    Free,
}

#[derive(Debug, Clone, PartialEq)]
struct Node<S> {
    parent: Option<usize>,
    depth: u32,
    kind: NodeKind<S>,
}

/// Binary regression tree stored as an arena. Node 0 is the root; ids stay
/// stable across grow/prune so per-observation leaf ids remain meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree<S> {
    nodes: Vec<Node<S>>,
    free: Vec<usize>,
}

pub const ROOT: usize = 0;

impl<S: Scalar> RegressionTree<S> {
    pub fn leaf(payload: LeafPayload<S>) -> Self {
        Self {
            nodes: vec![Node { parent: None, depth: 0, kind: NodeKind::Leaf(payload) }],
            free: Vec::new(),
        }
    }

    pub fn constant(value: S) -> Self {
        Self::leaf(LeafPayload::Constant(value))
    }

    /// Arena size; valid node ids are below this.
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_live(&self, id: usize) -> bool {
        id < self.nodes.len() && !matches!(self.nodes[id].kind, NodeKind::Free)
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        matches!(self.nodes[id].kind, NodeKind::Leaf(_))
    }

    pub fn depth(&self, id: usize) -> usize {
        self.nodes[id].depth as usize
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.nodes[id].parent
    }

    pub fn rule(&self, id: usize) -> Option<&SplitRule<S>> {
        match &self.nodes[id].kind {
            NodeKind::Internal { rule, .. } => Some(rule),
            _ => None,
        }
    }

    pub fn children(&self, id: usize) -> Option<(usize, usize)> {
        match self.nodes[id].kind {
            NodeKind::Internal { left, right, .. } => Some((left, right)),
            _ => None,
        }
    }

    pub fn payload(&self, id: usize) -> Option<&LeafPayload<S>> {
        match &self.nodes[id].kind {
            NodeKind::Leaf(p) => Some(p),
            _ => None,
        }
    }

    pub fn set_payload(&mut self, id: usize, payload: LeafPayload<S>) {
        match &mut self.nodes[id].kind {
            NodeKind::Leaf(p) => *p = payload,
            _ => panic!("node {id} is not a leaf"),
        }
    }

    pub fn set_rule(&mut self, id: usize, new_rule: SplitRule<S>) {
        match &mut self.nodes[id].kind {
            NodeKind::Internal { rule, .. } => *rule = new_rule,
            _ => panic!("node {id} is not internal"),
        }
    }

    /// Live node ids in preorder (left before right).
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![ROOT];
        while let Some(id) = stack.pop() {
            out.push(id);
            if let Some((l, r)) = self.children(id) {
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.is_leaf(i))
    }

    pub fn internal_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| matches!(self.nodes[i].kind, NodeKind::Internal { .. }))
    }

    /// Internal nodes whose two children are both leaves (the prunable set).
    pub fn nog_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.internal_ids().filter(|&i| {
            let (l, r) = self.children(i).expect("internal");
            self.is_leaf(l) && self.is_leaf(r)
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_ids().count()
    }

    pub fn n_internal(&self) -> usize {
        self.internal_ids().count()
    }

    pub fn max_depth(&self) -> usize {
        self.leaf_ids().map(|i| self.depth(i)).max().unwrap_or(0)
    }

    fn alloc(&mut self, node: Node<S>) -> usize {
        if let Some(id) = self.free.pop() {
            self.nodes[id] = node;
            id
        } else {
            self.nodes.push(node);
            self.nodes.len() - 1
        }
    }

    /// Split a leaf; returns the `(left, right)` child ids. Children start
    /// with zero payloads of the leaf's kind.
    pub fn grow(&mut self, leaf: usize, rule: SplitRule<S>) -> (usize, usize) {
        let payload = match &self.nodes[leaf].kind {
            NodeKind::Leaf(p) => p.zero_like(),
            _ => panic!("grow on non-leaf node {leaf}"),
        };
        let depth = self.nodes[leaf].depth + 1;
        let left = self.alloc(Node { parent: Some(leaf), depth, kind: NodeKind::Leaf(payload) });
        let right = self.alloc(Node { parent: Some(leaf), depth, kind: NodeKind::Leaf(payload) });
        self.nodes[leaf].kind = NodeKind::Internal { rule, left, right };
        (left, right)
    }

    /// Collapse an internal node whose children are leaves.
    pub fn prune(&mut self, node: usize) {
        let (l, r) = self.children(node).expect("prune on leaf");
        assert!(self.is_leaf(l) && self.is_leaf(r), "prune requires leaf children");
        let payload = self.payload(l).expect("leaf").zero_like();
        self.nodes[l].kind = NodeKind::Free;
        self.nodes[r].kind = NodeKind::Free;
        self.free.push(r);
        self.free.push(l);
        self.nodes[node].kind = NodeKind::Leaf(payload);
    }

    /// Marks every node in the subtree rooted at `top` (inclusive).
    pub fn subtree_mask(&self, top: usize) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        let mut stack = vec![top];
        while let Some(id) = stack.pop() {
            mask[id] = true;
            if let Some((l, r)) = self.children(id) {
                stack.push(l);
                stack.push(r);
            }
        }
        mask
    }

    /// Leaf reached by a binned row, starting from `start`.
    #[inline]
    pub fn leaf_of_bins_from(&self, start: usize, bins: &[u16]) -> usize {
        let mut id = start;
        loop {
            match &self.nodes[id].kind {
                NodeKind::Internal { rule, left, right } => {
                    id = if (bins[rule.predictor] as usize) <= rule.cut_index { *left } else { *right };
                }
                _ => return id,
            }
        }
    }

    #[inline]
    pub fn leaf_of_bins(&self, bins: &[u16]) -> usize {
        self.leaf_of_bins_from(ROOT, bins)
    }

    pub fn leaf_of_row(&self, row: &[S]) -> Result<usize> {
        let mut id = ROOT;
        loop {
            match &self.nodes[id].kind {
                NodeKind::Internal { rule, left, right } => {
                    let v = row.get(rule.predictor).ok_or_else(|| {
                        Error::Input(format!(
                            "row has {} values but tree splits on predictor {}",
                            row.len(),
                            rule.predictor
                        ))
                    })?;
                    id = if *v < rule.threshold { *left } else { *right };
                }
                _ => return Ok(id),
            }
        }
    }

    /// Unchecked raw-row evaluation for the prediction hot path.
    #[inline]
    pub(crate) fn leaf_of_row_fast(&self, row: &[S]) -> usize {
        let mut id = ROOT;
        while let NodeKind::Internal { rule, left, right } = &self.nodes[id].kind {
            id = if row[rule.predictor] < rule.threshold { *left } else { *right };
        }
        id
    }

    pub fn has_line_leaves(&self) -> bool {
        self.leaf_ids().any(|i| self.payload(i).is_some_and(LeafPayload::is_line))
    }

    pub fn max_predictor(&self) -> Option<usize> {
        self.internal_ids().map(|i| self.rule(i).expect("internal").predictor).max()
    }

    /// Structure-only canonical key: `.` for a leaf, `(j:c L R)` for a split.
    pub fn shape_key(&self) -> String {
        fn go<S: Scalar>(t: &RegressionTree<S>, id: usize, out: &mut String) {
            match (t.rule(id), t.children(id)) {
                (Some(rule), Some((l, r))) => {
                    out.push_str(&format!("({}:{} ", rule.predictor, rule.cut_index));
                    go(t, l, out);
                    out.push(' ');
                    go(t, r, out);
                    out.push(')');
                }
                _ => out.push('.'),
            }
        }
        let mut s = String::new();
        go(self, ROOT, &mut s);
        s
    }
}

/// Payload of the unique leaf `row` reaches; line leaves need `exposure`.
pub fn evaluate_tree<S: Scalar>(tree: &RegressionTree<S>, row: &[S], exposure: Option<S>) -> Result<S> {
    let leaf = tree.leaf_of_row(row)?;
    tree.payload(leaf).expect("leaf").value(exposure)
}

// Compact serialized form: preorder node list with parent links. The first
// child listed under a parent is its left child.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum LeafRepr<S> {
    Constant(S),
    Line([S; 2]),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeRepr<S> {
    p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    j: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<S>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<LeafRepr<S>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct TreeRepr<S> {
    nodes: Vec<NodeRepr<S>>,
}

impl<S: Scalar> From<RegressionTree<S>> for TreeRepr<S> {
    fn from(tree: RegressionTree<S>) -> Self {
        let order = tree.preorder();
        let mut pos = vec![usize::MAX; tree.capacity()];
        for (k, &id) in order.iter().enumerate() {
            pos[id] = k;
        }
        let nodes = order
            .iter()
            .map(|&id| {
                let p = tree.parent(id).map(|q| pos[q]);
                match tree.rule(id) {
                    Some(rule) => NodeRepr {
                        p,
                        j: Some(rule.predictor),
                        c: Some(rule.cut_index),
                        x: Some(rule.threshold),
                        v: None,
                    },
                    None => {
                        let v = match tree.payload(id).expect("leaf") {
                            LeafPayload::Constant(v) => LeafRepr::Constant(*v),
                            LeafPayload::Line { intercept, slope } => LeafRepr::Line([*intercept, *slope]),
                        };
                        NodeRepr { p, j: None, c: None, x: None, v: Some(v) }
                    }
                }
            })
            .collect();
        TreeRepr { nodes }
    }
}

impl<S: Scalar> TryFrom<TreeRepr<S>> for RegressionTree<S> {
    type Error = Error;

    fn try_from(repr: TreeRepr<S>) -> Result<Self> {
        let bad = |m: &str| Error::Input(format!("malformed tree: {m}"));
        if repr.nodes.is_empty() {
            return Err(bad("no nodes"));
        }
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); repr.nodes.len()];
        for (k, n) in repr.nodes.iter().enumerate() {
            match (k, n.p) {
                (0, None) => {}
                (0, Some(_)) => return Err(bad("root has a parent")),
                (_, None) => return Err(bad("non-root node without parent")),
                (_, Some(p)) if p >= k => return Err(bad("parent must precede child")),
                (_, Some(p)) => kids[p].push(k),
            }
        }
        let mut nodes = Vec::with_capacity(repr.nodes.len());
        for (k, n) in repr.nodes.iter().enumerate() {
            let depth = match n.p {
                None => 0,
                Some(p) => {
                    let d: &Node<S> = &nodes[p];
                    d.depth + 1
                }
            };
            let kind = match (&n.v, n.j, n.c, n.x) {
                (Some(v), None, None, None) => {
                    if !kids[k].is_empty() {
                        return Err(bad("leaf with children"));
                    }
                    NodeKind::Leaf(match v {
                        LeafRepr::Constant(v) => LeafPayload::Constant(*v),
                        LeafRepr::Line([a, b]) => LeafPayload::Line { intercept: *a, slope: *b },
                    })
                }
                (None, Some(j), Some(c), Some(x)) => {
                    if kids[k].len() != 2 {
                        return Err(bad("internal node without exactly two children"));
                    }
                    NodeKind::Internal {
                        rule: SplitRule { predictor: j, cut_index: c, threshold: x },
                        left: kids[k][0],
                        right: kids[k][1],
                    }
                }
                _ => return Err(bad("node is neither a leaf nor a split")),
            };
            nodes.push(Node { parent: n.p, depth, kind });
        }
        Ok(Self { nodes, free: Vec::new() })
    }
}

impl<S: Scalar> Serialize for RegressionTree<S> {
    fn serialize<Z: serde::Serializer>(&self, serializer: Z) -> std::result::Result<Z::Ok, Z::Error> {
        TreeRepr::from(self.clone()).serialize(serializer)
    }
}

impl<'de, S: Scalar> Deserialize<'de> for RegressionTree<S> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = TreeRepr::<S>::deserialize(deserializer)?;
        RegressionTree::try_from(repr).map_err(serde::de::Error::custom)
    }
}
