//! Per-process utilization timelines.
//!
//! CSV schema: `cycle_start,cycle_end,process,kind`, one row per interval,
//! covering `[0, total_cycles]` for each of `load`, `compute` and `store`.

use super::svg::Svg;
use super::{AnalysisError, Chart};
use crate::codegen::Module;
use crate::engine::{Activity, SimReport};

const HEADER: &str = "cycle_start,cycle_end,process,kind";
const PROCESSES: [&str; 3] = ["load", "compute", "store"];

fn color(kind: &str) -> Option<&'static str> {
    Some(match kind {
        "GEMM" => "#d62728",
        "ALU" => "#2ca02c",
        "LOAD_INP" => "#1f77b4",
        "LOAD_WGT" => "#17becf",
        "LOAD_ACC" => "#9467bd",
        "LOAD_UOP" => "#bcbd22",
        "STORE" => "#ff7f0e",
        "BLOCKED" => "#c7c7c7",
        _ => return None,
    })
}

pub fn utilization_timeline(report: &SimReport) -> Result<Chart, AnalysisError> {
    let csv = report.intervals_csv();
    let svg = timeline_svg(&csv)?;
    Ok(Chart { csv, svg })
}

/// Fraction of the run a process spent idle or blocked.
pub fn idle_fraction(report: &SimReport, m: Module) -> f64 {
    if report.total_cycles == 0 {
        return 1.0;
    }
    report.busy_cycles(m, &[Activity::Idle, Activity::Blocked]) as f64 / report.total_cycles as f64
}

struct Row<'a> {
    start: u64,
    end: u64,
    lane: usize,
    kind: &'a str,
}

fn parse(csv: &str) -> Result<Vec<Row<'_>>, AnalysisError> {
    let mut lines = csv.lines();
    if lines.next() != Some(HEADER) {
        return Err(AnalysisError::Csv("missing timeline header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || AnalysisError::Csv(format!("bad interval row {line:?}"));
            if f.len() != 4 {
                return Err(bad());
            }
            let start = f[0].parse().map_err(|_| bad())?;
            let end: u64 = f[1].parse().map_err(|_| bad())?;
            let lane = PROCESSES.iter().position(|p| *p == f[2]).ok_or_else(bad)?;
            if end < start {
                return Err(bad());
            }
            Ok(Row { start, end, lane, kind: f[3] })
        })
        .collect()
}

/// Three horizontal bars over cycles, drawn from timeline CSV.
pub fn timeline_svg(csv: &str) -> Result<String, AnalysisError> {
    let rows = parse(csv)?;
    let total = rows.iter().map(|r| r.end).max().unwrap_or(0).max(1);
    let (w, lane_h, gap) = (1000.0, 36.0, 14.0);
    let (ml, mt) = (80.0, 20.0);
    let pw = w - ml - 20.0;
    let h = mt + 3.0 * (lane_h + gap) + 70.0;
    let sx = |c: u64| ml + c as f64 / total as f64 * pw;
    let mut svg = Svg::new(w, h);
    for (lane, name) in PROCESSES.iter().enumerate() {
        let y = mt + lane as f64 * (lane_h + gap);
        svg.rect(ml, y, pw, lane_h, "none", r##" stroke="#999999""##);
        svg.text(ml - 8.0, y + lane_h / 2.0 + 4.0, 12, "end", name);
    }
    for r in &rows {
        if let Some(fill) = color(r.kind) {
            let y = mt + r.lane as f64 * (lane_h + gap);
            let title = format!("{} {} [{}, {})", PROCESSES[r.lane], r.kind, r.start, r.end);
            let style = format!(r#"fill="{fill}""#);
            svg.rect_titled(sx(r.start), y, sx(r.end) - sx(r.start), lane_h, &style, &title);
        }
    }
    let axis_y = mt + 3.0 * (lane_h + gap);
    svg.line(ml, axis_y, ml + pw, axis_y, "black", false);
    svg.text(ml, axis_y + 16.0, 11, "start", "0");
    svg.text(ml + pw, axis_y + 16.0, 11, "end", &format!("{total} cycles"));
    let mut x = ml;
    for kind in ["GEMM", "ALU", "LOAD_INP", "LOAD_WGT", "LOAD_ACC", "LOAD_UOP", "STORE", "BLOCKED"] {
        svg.rect(x, axis_y + 30.0, 12.0, 12.0, color(kind).unwrap_or("none"), "");
        svg.text(x + 16.0, axis_y + 40.0, 11, "start", kind);
        x += 100.0;
    }
    Ok(svg.finish())
}
