use super::bins::BinnedData;
use super::histogram::Histogram;
use super::{GbdtError, GbdtParams};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Internal {
        feature: usize,
        bin: u16,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Nodes in preorder; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    fn leaf_index_binned(&self, data: &BinnedData, row: usize) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Internal { feature, bin, left, right, .. } => {
                    i = if data.columns[feature][row] <= bin { left } else { right }
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Split decisions in preorder, ignoring leaf values.
    pub fn structure(&self) -> Vec<(usize, u16)> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Internal { feature, bin, .. } => Some((feature, bin)),
                Node::Leaf { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeStats {
    pub count: u64,
    pub grad_sum: f64,
    pub sum_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitDecision {
    pub feature: usize,
    pub bin: u16,
    pub gain: f64,
    pub left_count: u64,
    pub left_grad: f64,
}

fn score(g: f64, n: u64, lambda: f64) -> f64 {
    g * g / (n as f64 + lambda)
}

/// Best variance-reduction split over `histograms` (`None` for features
/// outside this tree's sample). Ties go to the lowest feature, then the
/// lowest bin. Gains within rounding of zero count as no gain.
pub fn best_split(
    histograms: &[Option<Histogram>],
    stats: NodeStats,
    min_child_samples: u64,
    lambda: f64,
) -> Option<SplitDecision> {
    if stats.count < 2 * min_child_samples.max(1) {
        return None;
    }
    let parent = score(stats.grad_sum, stats.count, lambda);
    let floor = 1e-12 * stats.sum_sq.max(f64::MIN_POSITIVE);
    let mut best: Option<SplitDecision> = None;
    for (feature, h) in histograms.iter().enumerate() {
        let Some(h) = h else { continue };
        let mut nl = 0u64;
        let mut gl = 0.0;
        for b in 0..h.count.len().saturating_sub(1) {
            nl += h.count[b];
            gl += h.grad[b];
            let nr = stats.count - nl;
            if nl < min_child_samples || nr < min_child_samples || h.count[b] == 0 {
                continue;
            }
            let gain = score(gl, nl, lambda) + score(stats.grad_sum - gl, nr, lambda) - parent;
            if gain > floor && best.is_none_or(|s| gain > s.gain) {
                best = Some(SplitDecision {
                    feature,
                    bin: b as u16,
                    gain,
                    left_count: nl,
                    left_grad: gl,
                });
            }
        }
    }
    best
}

struct OpenLeaf {
    node: usize,
    depth: usize,
    rows: Vec<u32>,
    hists: Vec<Option<Histogram>>,
    split: Option<SplitDecision>,
}

fn sample_prefix(n: usize, frac: f64, rng: &mut SplitMix64) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..n as u32).collect();
    if frac < 1.0 {
        let k = ((frac * n as f64).ceil() as usize).clamp(1, n);
        rng.shuffle(&mut idx);
        idx.truncate(k);
        idx.sort_unstable();
    }
    idx
}

fn stats_of(rows: &[u32], residuals: &[f64]) -> NodeStats {
    let mut s = NodeStats {
        count: rows.len() as u64,
        grad_sum: 0.0,
        sum_sq: 0.0,
    };
    for &r in rows {
        let g = residuals[r as usize];
        s.grad_sum += g;
        s.sum_sq += g * g;
    }
    s
}

/// Leaf-wise growth on a row sample and feature sample drawn from `rng`.
/// Leaf values come from every training row that reaches the leaf.
pub fn grow_tree(
    data: &BinnedData,
    residuals: &[f64],
    params: &GbdtParams,
    rng: &mut SplitMix64,
) -> Result<Tree, GbdtError> {
    let n_features = data.map.n_features();
    let features = sample_prefix(n_features, params.colsample_bytree, rng);
    let rows = sample_prefix(data.n_rows, params.subsample, rng);
    let mcs = params.min_child_samples as u64;
    let max_depth = params.max_depth as usize;
    let max_leaves = params.num_leaves as usize;

    let build = |rows: &[u32]| -> Vec<Option<Histogram>> {
        let mut hs = vec![None; n_features];
        for &f in &features {
            let f = f as usize;
            hs[f] = Some(Histogram::build(rows, residuals, &data.columns[f], data.map.n_bins(f)));
        }
        hs
    };
    let splittable = |depth: usize| depth < max_depth;

    // arena in creation order; renumbered to preorder at the end
    let mut arena: Vec<Node> = vec![Node::Leaf { value: 0.0 }];
    let root_hists = build(&rows);
    let root_split = if splittable(0) {
        best_split(&root_hists, stats_of(&rows, residuals), mcs, params.lambda_l2)
    } else {
        None
    };
    let mut open = vec![OpenLeaf {
        node: 0,
        depth: 0,
        rows,
        hists: root_hists,
        split: root_split,
    }];
    let mut n_leaves = 1;
    while n_leaves < max_leaves {
        // highest gain first, earliest leaf on ties
        let Some(pick) = open
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.split.map(|s| (i, s.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
                Some((_, bg)) if bg >= g => acc,
                _ => Some((i, g)),
            })
            .map(|(i, _)| i)
        else {
            break;
        };
        let leaf = open.remove(pick);
        let split = leaf.split.expect("picked leaf has a split");
        let col = &data.columns[split.feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            leaf.rows.iter().partition(|&&r| col[r as usize] <= split.bin);
        debug_assert_eq!(left_rows.len() as u64, split.left_count);

        // build the smaller child directly, derive the other by subtraction
        let left_smaller = left_rows.len() <= right_rows.len();
        let small = build(if left_smaller { &left_rows } else { &right_rows });
        let mut large = vec![None; n_features];
        for f in 0..n_features {
            if let (Some(p), Some(s)) = (&leaf.hists[f], &small[f]) {
                large[f] = Some(p.subtract(s)?);
            }
        }
        let (left_h, right_h) = if left_smaller { (small, large) } else { (large, small) };

        let left_id = arena.len();
        let right_id = left_id + 1;
        arena.push(Node::Leaf { value: 0.0 });
        arena.push(Node::Leaf { value: 0.0 });
        arena[leaf.node] = Node::Internal {
            feature: split.feature,
            bin: split.bin,
            threshold: data.map.threshold(split.feature, split.bin),
            left: left_id,
            right: right_id,
        };
        n_leaves += 1;
        let depth = leaf.depth + 1;
        for (node, rows, hists) in [(left_id, left_rows, left_h), (right_id, right_rows, right_h)] {
            let split = if splittable(depth) {
                best_split(&hists, stats_of(&rows, residuals), mcs, params.lambda_l2)
            } else {
                None
            };
            open.push(OpenLeaf { node, depth, rows, hists, split });
        }
    }

    let mut tree = Tree { nodes: preorder(&arena) };
    fit_leaf_values(&mut tree, data, residuals, params.lambda_l2);
    Ok(tree)
}

fn preorder(arena: &[Node]) -> Vec<Node> {
    fn go(arena: &[Node], i: usize, out: &mut Vec<Node>) -> usize {
        let id = out.len();
        out.push(arena[i]);
        if let Node::Internal { left, right, .. } = arena[i] {
            let l = go(arena, left, out);
            let r = go(arena, right, out);
            if let Node::Internal { left, right, .. } = &mut out[id] {
                *left = l;
                *right = r;
            }
        }
        id
    }
    let mut out = Vec::with_capacity(arena.len());
    go(arena, 0, &mut out);
    out
}

fn fit_leaf_values(tree: &mut Tree, data: &BinnedData, residuals: &[f64], lambda: f64) {
    let mut sum = vec![0.0; tree.nodes.len()];
    let mut count = vec![0u64; tree.nodes.len()];
    for (row, &r) in residuals.iter().enumerate() {
        let leaf = tree.leaf_index_binned(data, row);
        sum[leaf] += r;
        count[leaf] += 1;
    }
    for (i, node) in tree.nodes.iter_mut().enumerate() {
        if let Node::Leaf { value } = node {
            *value = if count[i] == 0 { 0.0 } else { sum[i] / (count[i] as f64 + lambda) };
        }
    }
}
