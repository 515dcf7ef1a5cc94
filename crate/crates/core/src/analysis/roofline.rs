//! Roofline points and charts.
//!
//! CSV schema: `kind,label,ops_per_byte,ops_per_cycle,peak_ops_per_cycle,bus_bytes_per_cycle`
//! where `kind` is `point`, `compute_roof` or `bandwidth_roof` and unused
//! columns are empty.

use super::svg::Svg;
use super::{AnalysisError, Chart};
use crate::codegen::InstructionStream;
use crate::config::AccelConfig;
use crate::engine::SimReport;
use crate::workload::ConvLayer;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;

const HEADER: &str = "kind,label,ops_per_byte,ops_per_cycle,peak_ops_per_cycle,bus_bytes_per_cycle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RooflinePoint {
    pub label: String,
    /// Operational intensity: ops per DRAM byte.
    pub ops_per_byte: f64,
    /// Achieved throughput.
    pub ops_per_cycle: f64,
}

/// Where the op count of a run comes from.
#[derive(Debug, Clone, Copy)]
pub enum Work<'a> {
    Layer(&'a ConvLayer),
    /// Uses the stream's layer metadata, or the executed MACs without it.
    Stream(&'a InstructionStream),
}

/// Ops per cycle the bus sustains at the given intensity.
pub fn bandwidth_roof(cfg: &AccelConfig, ops_per_byte: f64) -> f64 {
    cfg.bus_bytes() as f64 * ops_per_byte
}

/// Two ops per MAC over DRAM data bytes and over total cycles.
pub fn roofline_point(report: &SimReport, work: Work<'_>, cfg: &AccelConfig) -> Result<RooflinePoint, AnalysisError> {
    if !report.completed {
        return Err(AnalysisError::Incomplete);
    }
    let (macs, label) = match work {
        Work::Layer(l) => (l.mac_count(), l.name.clone()),
        Work::Stream(s) => match &s.meta.layer {
            Some(l) => (l.mac_count(), l.name.clone()),
            None => (report.macs, String::new()),
        },
    };
    let ops = 2 * macs;
    let bytes = report.total_dram_bytes();
    let cycles = report.total_cycles;
    if ops == 0 || bytes == 0 || cycles == 0 {
        return Err(AnalysisError::Degenerate { ops, bytes, cycles });
    }
    let label = if label.is_empty() { format!("{}x{}x{}", cfg.batch, cfg.block_in, cfg.block_out) } else { label };
    Ok(RooflinePoint { label, ops_per_byte: ops as f64 / bytes as f64, ops_per_cycle: ops as f64 / cycles as f64 })
}

fn csv_label(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            ',' => ';',
            '\n' | '\r' => ' ',
            c => c,
        })
        .collect()
}

/// Points plus one compute roof per distinct peak and one bandwidth roof
/// per distinct bus width, in sorted order.
pub fn roofline_csv(points: &[RooflinePoint], cfgs: &[AccelConfig]) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    let peaks: BTreeSet<u64> = cfgs.iter().map(|c| c.peak_ops_per_cycle()).collect();
    let buses: BTreeSet<u64> = cfgs.iter().map(|c| c.bus_bytes()).collect();
    for p in peaks {
        let _ = writeln!(s, "compute_roof,peak {p} ops/cycle,,,{p},");
    }
    for b in buses {
        let _ = writeln!(s, "bandwidth_roof,{} bits/cycle,,,,{b}", b * 8);
    }
    for p in points {
        let _ = writeln!(s, "point,{},{},{},,", csv_label(&p.label), p.ops_per_byte, p.ops_per_cycle);
    }
    s
}

pub fn roofline_chart(points: &[RooflinePoint], cfgs: &[AccelConfig]) -> Result<Chart, AnalysisError> {
    if points.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let csv = roofline_csv(points, cfgs);
    let svg = roofline_svg(&csv)?;
    Ok(Chart { csv, svg })
}

enum Row {
    Point { label: String, x: f64, y: f64 },
    Compute { label: String, peak: f64 },
    Bandwidth { label: String, bus: f64 },
}

fn num(field: &str, line: &str) -> Result<f64, AnalysisError> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v > 0.0)
        .ok_or_else(|| AnalysisError::Csv(format!("bad number {field:?} in {line:?}")))
}

fn parse(csv: &str) -> Result<Vec<Row>, AnalysisError> {
    let mut lines = csv.lines();
    if lines.next() != Some(HEADER) {
        return Err(AnalysisError::Csv("missing roofline header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(AnalysisError::Csv(format!("expected 6 fields in {line:?}")));
            }
            let label = f[1].to_string();
            Ok(match f[0] {
                "point" => Row::Point { label, x: num(f[2], line)?, y: num(f[3], line)? },
                "compute_roof" => Row::Compute { label, peak: num(f[4], line)? },
                "bandwidth_roof" => Row::Bandwidth { label, bus: num(f[5], line)? },
                k => return Err(AnalysisError::Csv(format!("unknown row kind {k:?}"))),
            })
        })
        .collect()
}

fn decade_label(k: i32) -> String {
    if (0..7).contains(&k) {
        format!("{}", 10u64.pow(k as u32))
    } else {
        format!("1e{k}")
    }
}

/// Log-log chart drawn from roofline CSV.
pub fn roofline_svg(csv: &str) -> Result<String, AnalysisError> {
    let rows = parse(csv)?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in &rows {
        match r {
            Row::Point { x, y, .. } => {
                xs.push(*x);
                ys.push(*y);
            }
            Row::Compute { peak, .. } => ys.push(*peak),
            Row::Bandwidth { bus, .. } => {
                xs.push(1.0);
                ys.push(*bus);
            }
        }
    }
    // Ridge points keep every roof corner inside the frame.
    for r in &rows {
        if let Row::Bandwidth { bus, .. } = r {
            for p in &rows {
                if let Row::Compute { peak, .. } = p {
                    xs.push(peak / bus);
                }
            }
        }
    }
    if xs.is_empty() || ys.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let lo = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min).log10().floor() as i32;
    let hi = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max).log10().ceil() as i32;
    let (x0, mut x1) = (lo(&xs) - 1, hi(&xs) + 1);
    let (y0, mut y1) = (lo(&ys) - 1, hi(&ys) + 1);
    x1 = x1.max(x0 + 1);
    y1 = y1.max(y0 + 1);

    let (w, h) = (760.0, 520.0);
    let (ml, mr, mt, mb) = (80.0, 30.0, 30.0, 60.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let sx = |x: f64| ml + (x.log10() - x0 as f64) / (x1 - x0) as f64 * pw;
    let sy = |y: f64| mt + ph - (y.log10() - y0 as f64) / (y1 - y0) as f64 * ph;

    let mut svg = Svg::new(w, h);
    for k in x0..=x1 {
        let x = sx(10f64.powi(k));
        svg.line(x, mt, x, mt + ph, "#e0e0e0", false);
        svg.text(x, mt + ph + 18.0, 11, "middle", &decade_label(k));
    }
    for k in y0..=y1 {
        let y = sy(10f64.powi(k));
        svg.line(ml, y, ml + pw, y, "#e0e0e0", false);
        svg.text(ml - 6.0, y + 4.0, 11, "end", &decade_label(k));
    }
    svg.line(ml, mt + ph, ml + pw, mt + ph, "black", false);
    svg.line(ml, mt, ml, mt + ph, "black", false);
    svg.text(ml + pw / 2.0, h - 18.0, 13, "middle", "Ops/Byte");
    svg.text(20.0, mt + ph / 2.0, 13, "middle", "Ops/Cycle");

    let (xmin, xmax) = (10f64.powi(x0), 10f64.powi(x1));
    let (ymin, ymax) = (10f64.powi(y0), 10f64.powi(y1));
    for r in &rows {
        match r {
            Row::Compute { label, peak } => {
                svg.line(sx(xmin), sy(*peak), sx(xmax), sy(*peak), "#555555", true);
                svg.text(sx(xmax) - 4.0, sy(*peak) - 4.0, 11, "end", label);
            }
            Row::Bandwidth { label, bus } => {
                let a = xmin.max(ymin / bus);
                let b = xmax.min(ymax / bus);
                if a < b {
                    svg.line(sx(a), sy(bus * a), sx(b), sy(bus * b), "#1f77b4", true);
                    svg.text(sx(a) + 4.0, sy(bus * a) - 6.0, 11, "start", label);
                }
            }
            Row::Point { .. } => {}
        }
    }
    for r in &rows {
        if let Row::Point { label, x, y } = r {
            let title = format!("{label}: {x} ops/byte, {y} ops/cycle");
            svg.circle(sx(*x), sy(*y), 4.0, "#d62728", &title);
            svg.text(sx(*x) + 6.0, sy(*y) - 6.0, 10, "start", label);
        }
    }
    Ok(svg.finish())
}
