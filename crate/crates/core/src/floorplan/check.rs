//! Rule checks on a flattened floorplan.

use super::{flatten, join, to_nm, to_um, FpNode, NodeKind, PlacedRect, Rect};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Rule violations, sorted and free of duplicates in `check` output.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FpViolation {
    /// Two macros share interior area. Paths are in sorted order.
    Overlap { a: String, b: String },
    /// Two disjoint macros are closer than the minimum spacing.
    Spacing { a: String, b: String, gap_nm: i64 },
    /// Siblings share an instance name, so their paths collide.
    DuplicateName { path: String, count: usize },
    /// A child's placed box leaves its parent's declared bound.
    OutOfBounds { parent: String, child: String },
}

impl std::fmt::Display for FpViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FpViolation::Overlap { a, b } => write!(f, "overlap: {a} and {b}"),
            FpViolation::Spacing { a, b, gap_nm } => {
                write!(f, "spacing: {a} and {b} are {} um apart", to_um(*gap_nm))
            }
            FpViolation::DuplicateName { path, count } => {
                write!(f, "duplicate name: {path} used {count} times")
            }
            FpViolation::OutOfBounds { parent, child } => {
                write!(f, "out of bounds: {child} escapes the bound of {parent}")
            }
        }
    }
}

impl FpViolation {
    /// Instance paths the violation refers to.
    pub fn paths(&self) -> Vec<&str> {
        match self {
            FpViolation::Overlap { a, b } | FpViolation::Spacing { a, b, .. } => vec![a, b],
            FpViolation::DuplicateName { path, .. } => vec![path],
            FpViolation::OutOfBounds { child, .. } => vec![child],
        }
    }
}

fn overlaps(a: &Rect, b: &Rect) -> bool {
    a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1
}

/// Squared Euclidean gap between two rectangles.
fn gap_sq(a: &Rect, b: &Rect) -> i128 {
    let dx = (b.x0 - a.x1).max(a.x0 - b.x1).max(0) as i128;
    let dy = (b.y0 - a.y1).max(a.y0 - b.y1).max(0) as i128;
    dx * dx + dy * dy
}

/// Overlap and spacing between macro leaves, duplicate sibling names and
/// bound escapes. An empty result means the floorplan is clean.
pub fn check(root: &FpNode, min_spacing_um: f64) -> Vec<FpViolation> {
    let spacing = to_nm(min_spacing_um).max(0);
    let flat = flatten(root);
    let mut out = Vec::new();

    let mut macros: Vec<&PlacedRect> = flat.iter().filter(|p| p.kind == NodeKind::Macro).collect();
    macros.sort_by(|a, b| (a.rect.x0, &a.path).cmp(&(b.rect.x0, &b.path)));
    for (i, a) in macros.iter().enumerate() {
        for b in &macros[i + 1..] {
            if b.rect.x0 >= a.rect.x1 + spacing {
                break;
            }
            let (pa, pb) = if a.path <= b.path { (a, b) } else { (b, a) };
            let (a_path, b_path) = (pa.path.clone(), pb.path.clone());
            if overlaps(&a.rect, &b.rect) {
                out.push(FpViolation::Overlap { a: a_path, b: b_path });
            } else {
                let g = gap_sq(&a.rect, &b.rect);
                if g < spacing as i128 * spacing as i128 {
                    let gap_nm = (g as f64).sqrt().round() as i64;
                    out.push(FpViolation::Spacing { a: a_path, b: b_path, gap_nm });
                }
            }
        }
    }

    names_and_bounds(root, "", &mut out);
    out.sort();
    out.dedup();
    out
}

fn names_and_bounds(node: &FpNode, prefix: &str, out: &mut Vec<FpViolation>) {
    let path = join(prefix, &node.name);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &node.children {
        *counts.entry(c.node.name.as_str()).or_default() += 1;
    }
    for (name, count) in &counts {
        if *count > 1 {
            out.push(FpViolation::DuplicateName { path: join(&path, name), count: *count });
        }
    }
    if let Some(b) = &node.bound {
        let bound = Rect { x0: to_nm(b.x0), y0: to_nm(b.y0), x1: to_nm(b.x1), y1: to_nm(b.y1) };
        for c in &node.children {
            let placed = c.placement().apply_rect(&c.node.local_box());
            if !bound.contains(&placed) {
                out.push(FpViolation::OutOfBounds { parent: path.clone(), child: join(&path, &c.node.name) });
            }
        }
    }
    for c in &node.children {
        if counts[c.node.name.as_str()] == 1 {
            names_and_bounds(&c.node, &path, out);
        }
    }
}
