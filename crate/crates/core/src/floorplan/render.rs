//! SVG rendering of a flattened floorplan.

use super::{flatten, to_um, FpNode, FpViolation, NodeKind};
use crate::analysis::svg::Svg;
use std::collections::BTreeSet;

const DEPTH_COLORS: [&str; 6] = ["#f0f0f0", "#c6dbef", "#9ecae1", "#6baed6", "#fdd0a2", "#fdae6b"];
const MACRO_COLOR: &str = "#74c476";
const VIOLATION_COLOR: &str = "#e31a1c";

pub fn render_svg(root: &FpNode) -> String {
    render_svg_with(root, &[])
}

/// Rectangles colored by hierarchy depth with name tooltips. Macros named
/// by any violation are outlined in red.
pub fn render_svg_with(root: &FpNode, violations: &[FpViolation]) -> String {
    let flat = flatten(root);
    let flagged: BTreeSet<&str> = violations.iter().flat_map(|v| v.paths()).collect();
    let bbox = flat.iter().map(|p| p.rect).reduce(|a, b| a.union(&b));
    let (w, h) = (800.0, 800.0);
    let margin = 10.0;
    let Some(bbox) = bbox.filter(|b| b.width() > 0 && b.height() > 0) else {
        return Svg::new(w, h).finish();
    };
    let scale = ((w - 2.0 * margin) / bbox.width() as f64).min((h - 2.0 * margin) / bbox.height() as f64);
    let h = bbox.height() as f64 * scale + 2.0 * margin;
    let w = bbox.width() as f64 * scale + 2.0 * margin;
    let mut svg = Svg::new(w, h);
    for p in &flat {
        let r = &p.rect;
        let x = margin + (r.x0 - bbox.x0) as f64 * scale;
        // SVG y grows downward.
        let y = margin + (bbox.y1 - r.y1) as f64 * scale;
        let fill = match p.kind {
            NodeKind::Macro => MACRO_COLOR,
            NodeKind::Hierarchy => DEPTH_COLORS[p.depth % DEPTH_COLORS.len()],
        };
        let (stroke, width) = if flagged.contains(p.path.as_str()) { (VIOLATION_COLOR, 2.0) } else { ("#333333", 0.5) };
        let um = r.to_um();
        let title = format!(
            "{} {} ({}, {})-({}, {}) {}",
            p.path,
            if p.kind == NodeKind::Macro { "macro" } else { "hierarchy" },
            um.x0,
            um.y0,
            um.x1,
            um.y1,
            p.orientation
        );
        let style = format!(r#"fill="{fill}" fill-opacity="0.8" stroke="{stroke}" stroke-width="{width}""#);
        svg.rect_titled(x, y, r.width() as f64 * scale, r.height() as f64 * scale, &style, &title);
    }
    svg.text(margin, h - 2.0, 10, "start", &format!("{} x {} um", to_um(bbox.width()), to_um(bbox.height())));
    svg.finish()
}
