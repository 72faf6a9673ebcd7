//! Versioned text model file.
//!
//! ```text
//! format_version=1
//! [params]      key=value
//! [scaler]      columns=...; <name>=<min>,<max>
//! [meta]        key=value
//! [model]       n_features, base_score, n_trees
//! [tree i]      preorder nodes: `N feat thr left right` | `L value`
//! [end]
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a reload is
//! bit-exact. Bin indices are not stored; inference uses thresholds only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{GbdtError, GbdtModel, GbdtParams, Node, Tree};
use crate::features::NormalizationParams;

pub const FORMAT_VERSION: u32 = 1;

pub fn model_to_text(m: &GbdtModel) -> String {
    let mut out = format!("format_version={FORMAT_VERSION}\n[params]\n");
    out.push_str(&m.params.to_text());
    out.push_str("[scaler]\n");
    if let Some(s) = &m.scaler {
        out.push_str(&s.to_text());
    }
    out.push_str("[meta]\n");
    for (k, v) in &m.meta {
        let _ = writeln!(out, "{k}={v}");
    }
    let _ = write!(
        out,
        "[model]\nn_features={}\nbase_score={:?}\nn_trees={}\n",
        m.n_features,
        m.base_score,
        m.trees.len()
    );
    for (i, t) in m.trees.iter().enumerate() {
        let _ = writeln!(out, "[tree {i}]");
        for n in &t.nodes {
            match *n {
                Node::Internal { feature, threshold, left, right, .. } => {
                    let _ = writeln!(out, "N {feature} {threshold:?} {left} {right}");
                }
                Node::Leaf { value } => {
                    let _ = writeln!(out, "L {value:?}");
                }
            }
        }
    }
    out.push_str("[end]\n");
    out
}

pub fn save_model(m: &GbdtModel, path: &Path) -> Result<(), GbdtError> {
    crate::io::write_atomic(path, model_to_text(m).as_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<GbdtModel, GbdtError> {
    parse_model(&std::fs::read_to_string(path)?)
}

enum Section {
    Params,
    Scaler,
    Meta,
    Model,
    Tree,
}

pub fn parse_model(text: &str) -> Result<GbdtModel, GbdtError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let corrupt = |line: usize, msg: &str| GbdtError::Corrupt { line, msg: msg.to_string() };
    match lines.next() {
        Some((_, l)) if l.starts_with("format_version=") => {
            let v = &l["format_version=".len()..];
            if v != FORMAT_VERSION.to_string() {
                return Err(GbdtError::Version { found: v.to_string() });
            }
        }
        _ => return Err(corrupt(1, "missing format_version header")),
    }

    let mut params = GbdtParams::default();
    let mut scaler_text = String::new();
    let mut meta = BTreeMap::new();
    let mut model_kv: BTreeMap<String, String> = BTreeMap::new();
    let mut trees: Vec<Vec<Node>> = Vec::new();
    let mut section: Option<Section> = None;
    let mut ended = false;
    let mut last_line = 1;

    for (no, line) in lines.by_ref() {
        last_line = no;
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = Some(match name {
                "params" => Section::Params,
                "scaler" => Section::Scaler,
                "meta" => Section::Meta,
                "model" => Section::Model,
                "end" => {
                    ended = true;
                    break;
                }
                _ => match name.strip_prefix("tree ").map(str::parse::<usize>) {
                    Some(Ok(i)) if i == trees.len() => {
                        trees.push(Vec::new());
                        Section::Tree
                    }
                    _ => return Err(corrupt(no, &format!("unexpected section [{name}]"))),
                },
            });
            continue;
        }
        let kv = || line.split_once('=').ok_or_else(|| corrupt(no, "expected key=value"));
        match section {
            None => return Err(corrupt(no, "content before first section")),
            Some(Section::Params) => {
                let (k, v) = kv()?;
                params.set(k, v).map_err(|e| corrupt(no, &e.to_string()))?;
            }
            Some(Section::Scaler) => {
                scaler_text.push_str(line);
                scaler_text.push('\n');
            }
            Some(Section::Meta) => {
                let (k, v) = kv()?;
                meta.insert(k.to_string(), v.to_string());
            }
            Some(Section::Model) => {
                let (k, v) = kv()?;
                model_kv.insert(k.to_string(), v.to_string());
            }
            Some(Section::Tree) => {
                let nodes = trees.last_mut().expect("tree section opened");
                nodes.push(parse_node(line).ok_or_else(|| corrupt(no, "bad node line"))?);
            }
        }
    }
    if !ended || lines.next().is_some_and(|(_, l)| !l.is_empty()) {
        return Err(corrupt(last_line, "missing [end] marker (truncated file?)"));
    }
    params.validate().map_err(|e| corrupt(0, &e.to_string()))?;

    let get = |k: &str| model_kv.get(k).ok_or_else(|| corrupt(0, &format!("[model] lacks {k}")));
    let n_features: usize = get("n_features")?.parse().map_err(|_| corrupt(0, "bad n_features"))?;
    let base_score: f64 = get("base_score")?.parse().map_err(|_| corrupt(0, "bad base_score"))?;
    let n_trees: usize = get("n_trees")?.parse().map_err(|_| corrupt(0, "bad n_trees"))?;
    if n_trees != trees.len() {
        return Err(corrupt(0, &format!("header says {n_trees} trees, found {}", trees.len())));
    }
    let trees = trees
        .into_iter()
        .enumerate()
        .map(|(i, nodes)| check_tree(nodes, n_features).map_err(|m| corrupt(0, &format!("tree {i}: {m}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let scaler = if scaler_text.trim().is_empty() {
        None
    } else {
        Some(NormalizationParams::from_text(&scaler_text)?)
    };
    Ok(GbdtModel {
        params,
        scaler,
        n_features,
        base_score,
        trees,
        meta,
    })
}

fn parse_node(line: &str) -> Option<Node> {
    let mut it = line.split_whitespace();
    let node = match it.next()? {
        "L" => Node::Leaf { value: it.next()?.parse().ok()? },
        "N" => Node::Internal {
            feature: it.next()?.parse().ok()?,
            bin: 0,
            threshold: it.next()?.parse().ok()?,
            left: it.next()?.parse().ok()?,
            right: it.next()?.parse().ok()?,
        },
        _ => return None,
    };
    it.next().is_none().then_some(node)
}

/// Preorder shape check: children point forward and every node is reached
/// exactly once.
fn check_tree(nodes: Vec<Node>, n_features: usize) -> Result<Tree, String> {
    if nodes.is_empty() {
        return Err("no nodes".into());
    }
    let mut seen = vec![false; nodes.len()];
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        if std::mem::replace(&mut seen[i], true) {
            return Err(format!("node {i} reached twice"));
        }
        if let Node::Internal { feature, threshold, left, right, .. } = nodes[i] {
            if feature >= n_features || !threshold.is_finite() {
                return Err(format!("node {i}: bad split"));
            }
            for c in [left, right] {
                if c <= i || c >= nodes.len() {
                    return Err(format!("node {i}: child {c} out of range"));
                }
                stack.push(c);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err("unreachable nodes".into());
    }
    Ok(Tree { nodes })
}
