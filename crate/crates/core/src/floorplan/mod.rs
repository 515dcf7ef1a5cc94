//! Hierarchical floorplans: construction, flattening, rule checks,
//! rendering and wire pipe-stage estimates.
//!
//! Dimensions are micrometers at the API boundary and integral nanometers
//! inside, so every geometric check is exact. A child is placed by
//! orienting its local box and moving the lower-left corner of the result
//! to the child's offset in the parent frame.

mod check;
mod orientation;
mod render;

pub use check::{check, FpViolation};
pub use orientation::{compose_table, Orientation};
pub use render::{render_svg, render_svg_with};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FloorplanError {
    #[error("invalid instance name {0:?}: must be nonempty and contain no '/'")]
    Name(String),
    #[error("{0}: macro nodes cannot have children")]
    MacroWithChildren(String),
    #[error("{0}: macro has no dimensions and no tech cell")]
    MissingDims(String),
    #[error("{path}: unknown tech cell {cell:?}")]
    UnknownCell { path: String, cell: String },
    #[error("{0}: width and height must be positive")]
    BadDims(String),
    #[error("{0}: hierarchy node has neither children nor a bound")]
    EmptyHierarchy(String),
    #[error("{0}: bound must have x0 < x1 and y0 < y1")]
    BadBound(String),
    #[error("array needs rows and cols >= 1")]
    EmptyArray,
    #[error("name pattern {pattern:?} yields {name:?} more than once")]
    NameCollision { pattern: String, name: String },
    #[error("reach must be positive")]
    Reach,
    #[error("buffer tree needs at least one sink and fanout >= 2")]
    Fanout,
    #[error("floorplan JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    #[default]
    Hierarchy,
    Macro,
}

/// Axis-aligned rectangle in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectUm {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

/// Axis-aligned rectangle in nanometers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> i128 {
        self.width() as i128 * self.height() as i128
    }

    pub fn union(&self, o: &Rect) -> Rect {
        Rect { x0: self.x0.min(o.x0), y0: self.y0.min(o.y0), x1: self.x1.max(o.x1), y1: self.y1.max(o.y1) }
    }

    pub fn contains(&self, o: &Rect) -> bool {
        self.x0 <= o.x0 && self.y0 <= o.y0 && o.x1 <= self.x1 && o.y1 <= self.y1
    }

    pub fn to_um(&self) -> RectUm {
        RectUm { x0: to_um(self.x0), y0: to_um(self.y0), x1: to_um(self.x1), y1: to_um(self.y1) }
    }
}

pub fn to_nm(um: f64) -> i64 {
    (um * 1000.0).round() as i64
}

pub fn to_um(nm: i64) -> f64 {
    nm as f64 / 1000.0
}

/// Point in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// A layout object: a named hierarchy level or a fixed-size macro.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpNode {
    pub name: String,
    #[serde(default)]
    pub kind: NodeKind,
    /// Tech-table cell supplying a macro's dimensions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    #[serde(default)]
    pub orientation: Orientation,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Child>,
    /// Placement region in the node's own frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<RectUm>,
}

/// A child node and its offset in the parent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Child {
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
    pub node: FpNode,
}

/// Macro cell dimensions `[width, height]` in micrometers.
pub type TechTable = BTreeMap<String, (f64, f64)>;

impl FpNode {
    pub fn macro_cell(name: impl Into<String>, width: f64, height: f64) -> FpNode {
        FpNode {
            name: name.into(),
            kind: NodeKind::Macro,
            cell: None,
            width: Some(width),
            height: Some(height),
            orientation: Orientation::R0,
            children: Vec::new(),
            bound: None,
        }
    }

    pub fn hierarchy(name: impl Into<String>) -> FpNode {
        FpNode {
            name: name.into(),
            kind: NodeKind::Hierarchy,
            cell: None,
            width: None,
            height: None,
            orientation: Orientation::R0,
            children: Vec::new(),
            bound: None,
        }
    }

    pub fn oriented(mut self, o: Orientation) -> Self {
        self.orientation = o;
        self
    }

    pub fn with_bound(mut self, b: RectUm) -> Self {
        self.bound = Some(b);
        self
    }

    pub fn with_child(mut self, node: FpNode, x: f64, y: f64) -> Self {
        self.children.push(Child { x, y, node });
        self
    }

    pub fn from_json(text: &str) -> Result<FpNode, FloorplanError> {
        serde_json::from_str(text).map_err(|e| FloorplanError::Json(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("floorplan serializes")
    }

    /// Fill macro dimensions from the tech table.
    pub fn apply_tech(&mut self, tech: &TechTable) -> Result<(), FloorplanError> {
        self.apply_tech_at(tech, "")
    }

    fn apply_tech_at(&mut self, tech: &TechTable, prefix: &str) -> Result<(), FloorplanError> {
        let path = join(prefix, &self.name);
        if let Some(cell) = &self.cell {
            let &(w, h) =
                tech.get(cell).ok_or_else(|| FloorplanError::UnknownCell { path: path.clone(), cell: cell.clone() })?;
            self.width = Some(w);
            self.height = Some(h);
        }
        for c in &mut self.children {
            c.node.apply_tech_at(tech, &path)?;
        }
        Ok(())
    }

    /// Structural checks that must hold before geometry is meaningful.
    pub fn validate(&self) -> Result<(), FloorplanError> {
        self.validate_at("")
    }

    fn validate_at(&self, prefix: &str) -> Result<(), FloorplanError> {
        if self.name.is_empty() || self.name.contains('/') {
            return Err(FloorplanError::Name(self.name.clone()));
        }
        let path = join(prefix, &self.name);
        if let Some(b) = &self.bound {
            if to_nm(b.x0) >= to_nm(b.x1) || to_nm(b.y0) >= to_nm(b.y1) {
                return Err(FloorplanError::BadBound(path));
            }
        }
        match self.kind {
            NodeKind::Macro => {
                if !self.children.is_empty() {
                    return Err(FloorplanError::MacroWithChildren(path));
                }
                let (Some(w), Some(h)) = (self.width, self.height) else {
                    return Err(FloorplanError::MissingDims(path));
                };
                if to_nm(w) <= 0 || to_nm(h) <= 0 {
                    return Err(FloorplanError::BadDims(path));
                }
            }
            NodeKind::Hierarchy => {
                if self.children.is_empty() && self.bound.is_none() {
                    return Err(FloorplanError::EmptyHierarchy(path));
                }
            }
        }
        for c in &self.children {
            c.node.validate_at(&path)?;
        }
        Ok(())
    }

    /// The node's box in its own frame before orientation.
    fn local_box(&self) -> Rect {
        match self.kind {
            NodeKind::Macro => {
                Rect { x0: 0, y0: 0, x1: to_nm(self.width.unwrap_or(0.0)), y1: to_nm(self.height.unwrap_or(0.0)) }
            }
            NodeKind::Hierarchy => match &self.bound {
                Some(b) => Rect { x0: to_nm(b.x0), y0: to_nm(b.y0), x1: to_nm(b.x1), y1: to_nm(b.y1) },
                None => self
                    .children
                    .iter()
                    .map(|c| c.placement().apply_rect(&c.node.local_box()))
                    .reduce(|a, b| a.union(&b))
                    .unwrap_or(Rect { x0: 0, y0: 0, x1: 0, y1: 0 }),
            },
        }
    }

    /// Extent after orientation, in nanometers.
    pub fn extent(&self) -> (i64, i64) {
        let r = Transform::rotation(self.orientation).apply_rect(&self.local_box());
        (r.width(), r.height())
    }
}

impl Child {
    /// Maps the child's frame into the parent's frame.
    fn placement(&self) -> Transform {
        place(&self.node, to_nm(self.x), to_nm(self.y))
    }
}

fn place(node: &FpNode, x: i64, y: i64) -> Transform {
    let rot = Transform::rotation(node.orientation);
    let moved = rot.apply_rect(&node.local_box());
    Transform { orientation: node.orientation, tx: x - moved.x0, ty: y - moved.y0 }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}

/// Orientation followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transform {
    pub orientation: Orientation,
    pub tx: i64,
    pub ty: i64,
}

impl Transform {
    pub const IDENTITY: Transform = Transform { orientation: Orientation::R0, tx: 0, ty: 0 };

    pub fn rotation(o: Orientation) -> Transform {
        Transform { orientation: o, tx: 0, ty: 0 }
    }

    pub fn apply(&self, x: i64, y: i64) -> (i64, i64) {
        let m = self.orientation.matrix();
        (m[0][0] * x + m[0][1] * y + self.tx, m[1][0] * x + m[1][1] * y + self.ty)
    }

    pub fn apply_rect(&self, r: &Rect) -> Rect {
        let (ax, ay) = self.apply(r.x0, r.y0);
        let (bx, by) = self.apply(r.x1, r.y1);
        Rect { x0: ax.min(bx), y0: ay.min(by), x1: ax.max(bx), y1: ay.max(by) }
    }

    /// `self` applied after `inner`.
    pub fn then_inner(&self, inner: &Transform) -> Transform {
        let (tx, ty) = self.apply(inner.tx, inner.ty);
        Transform { orientation: self.orientation.compose(inner.orientation), tx, ty }
    }
}

/// A flattened node in absolute coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedRect {
    /// Instance path joined by '/'.
    pub path: String,
    pub kind: NodeKind,
    pub depth: usize,
    pub rect: Rect,
    pub orientation: Orientation,
}

/// Every node of the tree in absolute coordinates, parents before children.
/// The root's lower-left corner sits at the origin.
pub fn flatten(root: &FpNode) -> Vec<PlacedRect> {
    let mut out = Vec::new();
    walk(root, &place(root, 0, 0), "", 0, &mut out);
    out
}

fn walk(node: &FpNode, xf: &Transform, prefix: &str, depth: usize, out: &mut Vec<PlacedRect>) {
    let path = join(prefix, &node.name);
    out.push(PlacedRect {
        path: path.clone(),
        kind: node.kind,
        depth,
        rect: xf.apply_rect(&node.local_box()),
        orientation: xf.orientation,
    });
    for c in &node.children {
        walk(&c.node, &xf.then_inner(&c.placement()), &path, depth + 1, out);
    }
}

/// Instantiate `proto` on a `rows x cols` grid. `{r}` and `{c}` in the
/// pattern are replaced by the row and column index.
pub fn array(
    proto: &FpNode,
    rows: usize,
    cols: usize,
    pitch_x: f64,
    pitch_y: f64,
    name_pattern: &str,
) -> Result<FpNode, FloorplanError> {
    if rows == 0 || cols == 0 {
        return Err(FloorplanError::EmptyArray);
    }
    let mut node = FpNode::hierarchy(proto.name.clone());
    let mut seen = std::collections::BTreeSet::new();
    for r in 0..rows {
        for c in 0..cols {
            let name = name_pattern.replace("{r}", &r.to_string()).replace("{c}", &c.to_string());
            if !seen.insert(name.clone()) {
                return Err(FloorplanError::NameCollision { pattern: name_pattern.to_string(), name });
            }
            let mut child = proto.clone();
            child.name = name;
            node.children.push(Child { x: c as f64 * pitch_x, y: r as f64 * pitch_y, node: child });
        }
    }
    Ok(node)
}

fn manhattan_nm(a: Point, b: Point) -> i64 {
    (to_nm(a.x) - to_nm(b.x)).abs() + (to_nm(a.y) - to_nm(b.y)).abs()
}

/// Registers needed to cross from `a` to `b` when a signal covers `reach`
/// micrometers per cycle. An estimate, not a timing analysis.
pub fn pipe_stages(a: Point, b: Point, reach_um_per_cycle: f64) -> Result<u64, FloorplanError> {
    let reach = to_nm(reach_um_per_cycle);
    if reach <= 0 {
        return Err(FloorplanError::Reach);
    }
    let d = manhattan_nm(a, b) as u64;
    Ok(d.div_ceil(reach as u64))
}

/// Depth of a buffer tree from `source` to every sink: the larger of the
/// farthest sink's pipe stages and the fanout levels `ceil(log_f(n))`.
pub fn buffer_tree_depth(
    source: Point,
    sinks: &[Point],
    reach_um_per_cycle: f64,
    max_fanout: u64,
) -> Result<u64, FloorplanError> {
    if sinks.is_empty() || max_fanout < 2 {
        return Err(FloorplanError::Fanout);
    }
    let mut stages = 0;
    for s in sinks {
        stages = stages.max(pipe_stages(source, *s, reach_um_per_cycle)?);
    }
    let (mut levels, mut reach) = (0u64, 1u64);
    while reach < sinks.len() as u64 {
        reach = reach.saturating_mul(max_fanout);
        levels += 1;
    }
    Ok(stages.max(levels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect_um(p: &PlacedRect) -> (f64, f64, f64, f64) {
        let r = p.rect.to_um();
        (r.x0, r.y0, r.x1, r.y1)
    }

    #[test]
    fn rotation_swaps_extent() {
        let m = FpNode::macro_cell("m", 10.0, 20.0).oriented(Orientation::R90);
        let f = flatten(&m);
        assert_eq!(rect_um(&f[0]), (0.0, 0.0, 20.0, 10.0));
        assert_eq!(m.extent(), (20_000, 10_000));
    }

    #[test]
    fn double_mirror_is_identity_placement() {
        let leaf = FpNode::macro_cell("m", 3.0, 7.0).oriented(Orientation::MX);
        let top = FpNode::hierarchy("top").oriented(Orientation::MX).with_child(leaf, 1.0, 2.0);
        let f = flatten(&top);
        assert_eq!(f[1].orientation, Orientation::R0);
        assert_eq!(rect_um(&f[1]), (0.0, 0.0, 3.0, 7.0));
    }

    #[test]
    fn nested_offsets_add() {
        let leaf = FpNode::macro_cell("m", 1.0, 1.0);
        let mid = FpNode::hierarchy("mid").with_bound(RectUm { x0: 0.0, y0: 0.0, x1: 10.0, y1: 10.0 });
        let mid = mid.with_child(leaf, 0.0, 7.0);
        let top = FpNode::hierarchy("top")
            .with_bound(RectUm { x0: 0.0, y0: 0.0, x1: 100.0, y1: 100.0 })
            .with_child(mid, 5.0, 0.0);
        let f = flatten(&top);
        assert_eq!(f[2].path, "top/mid/m");
        assert_eq!(rect_um(&f[2]), (5.0, 7.0, 6.0, 8.0));
    }

    #[test]
    fn array_names_and_offsets() {
        let proto = FpNode::macro_cell("mac", 2.0, 2.0);
        let a = array(&proto, 2, 3, 3.0, 4.0, "mac_{r}_{c}").unwrap();
        assert_eq!(a.children.len(), 6);
        assert_eq!(a.children[5].node.name, "mac_1_2");
        assert_eq!((a.children[5].x, a.children[5].y), (6.0, 4.0));
        let one = array(&proto, 1, 1, 2.0, 2.0, "m").unwrap();
        assert_eq!(flatten(&one)[1].rect, flatten(&proto)[0].rect);
        assert!(matches!(array(&proto, 2, 2, 3.0, 3.0, "m_{r}"), Err(FloorplanError::NameCollision { .. })));
    }

    #[test]
    fn pipe_stage_examples() {
        let o = Point::new(0.0, 0.0);
        assert_eq!(pipe_stages(o, Point::new(1000.0, 2000.0), 1000.0).unwrap(), 3);
        assert_eq!(pipe_stages(o, o, 1000.0).unwrap(), 0);
        assert_eq!(pipe_stages(o, Point::new(3000.0, 0.0), 1500.0).unwrap(), 2);
        assert_eq!(pipe_stages(o, Point::new(3001.0, 0.0), 1500.0).unwrap(), 3);
        assert!(pipe_stages(o, o, 0.0).is_err());
    }

    #[test]
    fn buffer_tree_examples() {
        let o = Point::new(0.0, 0.0);
        assert_eq!(buffer_tree_depth(o, &[Point::new(1.0, 0.0)], 100.0, 4).unwrap(), 1);
        assert_eq!(buffer_tree_depth(o, &[o], 100.0, 4).unwrap(), 0);
        let near = vec![Point::new(10.0, 10.0); 16];
        assert_eq!(buffer_tree_depth(o, &near, 100.0, 4).unwrap(), 2);
        let mut far = near.clone();
        far[3] = Point::new(500.0, 0.0);
        assert_eq!(buffer_tree_depth(o, &far, 100.0, 4).unwrap(), 5);
        assert_eq!(buffer_tree_depth(o, &vec![o; 17], 100.0, 4).unwrap(), 3);
    }

    #[test]
    fn tech_table_fills_macros() {
        let json = r#"{"name":"top","children":[{"x":0,"y":0,"node":{"name":"sram","kind":"macro","cell":"sp_64k"}}]}"#;
        let mut root = FpNode::from_json(json).unwrap();
        assert!(matches!(root.validate(), Err(FloorplanError::MissingDims(_))));
        let tech: TechTable = serde_json::from_str(r#"{"sp_64k":[120.5,80]}"#).unwrap();
        root.apply_tech(&tech).unwrap();
        root.validate().unwrap();
        assert_eq!(flatten(&root)[1].rect.to_um().x1, 120.5);
    }
}
