//! Subcommand bodies. Library errors pass through unchanged and exit with
//! code 1; input problems are wrapped in `Usage` and exit with code 2.

use crate::inputs::{self, usage, Named, RunManifest};
use crate::{
    FloorplanArgs, GenArgs, LowerArgs, ModeArg, RenderArgs, ReportArgs, SimArgs, SourceArgs, SpaceArgs, TpsArgs,
};
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use tilelab::analysis::{
    area_proxy, design_space_table, idle_fraction, roofline_chart, roofline_point, run_workload, utilization_timeline,
    AreaCoeffs, DesignEntry, Work,
};
use tilelab::codegen::{compile_layer, eliminate_redundant_loads, sample_layer_data, GenOptions, Module};
use tilelab::engine::{run, run_functional, Activity};
use tilelab::floorplan::{check, render_svg_with, FpNode, FpViolation, TechTable};
use tilelab::tps::{fallback_schedule, rank, ranking_csv, search};
use tilelab::workload::pad_channels;
use tilelab::{AccelConfig, ConvLayer, InstructionStream, Mode, SimReport};

fn manifest(
    command: &str,
    config: Option<&Path>,
    source: Source<'_>,
    layers: &[String],
    out_dir: &Path,
    mode: &str,
    seed: u64,
) -> Result<RunManifest> {
    let (workload, stream) = match source {
        Source::Workload(p) => (Some(p.to_path_buf()), None),
        Source::Stream(p) => (None, Some(p.to_path_buf())),
    };
    let m = RunManifest {
        command: command.into(),
        config: config.map(Path::to_path_buf),
        workload,
        stream,
        layers: layers.to_vec(),
        out_dir: out_dir.to_path_buf(),
        mode: mode.into(),
        seed,
    };
    m.prepare()?;
    Ok(m)
}

#[derive(Clone, Copy)]
enum Source<'a> {
    Workload(&'a Path),
    Stream(&'a Path),
}

impl SourceArgs {
    fn source(&self) -> Source<'_> {
        match (&self.workload, &self.stream) {
            (Some(w), _) => Source::Workload(w),
            (None, Some(s)) => Source::Stream(s),
            (None, None) => unreachable!("clap requires one source"),
        }
    }
}

impl LowerArgs {
    fn options(&self) -> GenOptions {
        GenOptions { shift: self.shift, clip: self.clip }
    }
}

/// A stream ready to simulate, with the layer it computes if known.
struct Job {
    name: String,
    stream: InstructionStream,
    layer: Option<ConvLayer>,
}

fn lower(layer: &Named<ConvLayer>, cfg: &AccelConfig, lower: LowerArgs) -> Result<Job> {
    let (stream, _) =
        compile_layer(&layer.item, cfg, lower.options()).with_context(|| format!("layer {}", layer.name))?;
    let stream = if lower.no_dedup { stream } else { eliminate_redundant_loads(&stream) };
    Ok(Job { name: layer.name.clone(), stream, layer: Some(layer.item.clone()) })
}

fn jobs(
    config: Option<&Path>,
    source: Source<'_>,
    picks: &[String],
    lower_args: LowerArgs,
) -> Result<(AccelConfig, Vec<Job>)> {
    match source {
        Source::Stream(path) => {
            let stream = inputs::stream(path)?;
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.trim_end_matches(".json").trim_end_matches(".stream").to_string())
                .unwrap_or_else(|| "stream".into());
            Ok((stream.config, vec![Job { name, stream, layer: None }]))
        }
        Source::Workload(path) => {
            let cfg = inputs::config(config)?;
            let layers = inputs::layers(path, picks)?;
            let jobs = layers.iter().map(|l| lower(l, &cfg, lower_args)).collect::<Result<_>>()?;
            Ok((cfg, jobs))
        }
    }
}

fn mode_name(mode: ModeArg) -> &'static str {
    match mode {
        ModeArg::Timing => "timing",
        ModeArg::Functional => "functional",
    }
}

fn simulate(job: &Job, cfg: &AccelConfig, mode: ModeArg, seed: u64) -> Result<(SimReport, Option<String>)> {
    let ctx = || format!("simulating {}", job.name);
    match (mode, &job.layer) {
        (ModeArg::Functional, Some(layer)) => {
            let (x, w) = sample_layer_data(layer, seed);
            let dram = job.stream.prepare_dram(&x, w.as_ref()).with_context(ctx)?;
            let report = run_functional(&job.stream, cfg, seed, dram).with_context(ctx)?;
            let output = match &report.dram {
                Some(img) if report.completed => {
                    let t = job.stream.read_output(img, layer.b as usize, layer.fo as usize).with_context(ctx)?;
                    Some(serde_json::to_string(&t)?)
                }
                _ => None,
            };
            Ok((report, output))
        }
        (ModeArg::Functional, None) => Ok((run(&job.stream, cfg, Mode::Functional, seed).with_context(ctx)?, None)),
        (ModeArg::Timing, _) => Ok((run(&job.stream, cfg, Mode::Timing, seed).with_context(ctx)?, None)),
    }
}

fn deadlock(job: &Job, report: &SimReport) -> Result<()> {
    match &report.deadlock {
        Some(d) => Err(anyhow!("{}: {d}", job.name)),
        None => Ok(()),
    }
}

pub fn tps(a: TpsArgs) -> Result<()> {
    let config = a.machine.config.as_deref();
    let cfg = inputs::config(config)?;
    let m =
        manifest("tps", config, Source::Workload(&a.layers.workload), &a.layers.layers, &a.out.out_dir, "analytic", 0)?;
    for n in inputs::layers(&a.layers.workload, &a.layers.layers)? {
        let layer = pad_channels(&n.item, &cfg);
        if layer.kind.is_alu_only() {
            println!("{}: {:?} runs on the ALU and is not tiled", n.name, layer.kind);
            continue;
        }
        let ctx = || format!("layer {}", n.name);
        m.write(&format!("{}.tps.csv", n.name), ranking_csv(&rank(&layer, &cfg).with_context(ctx)?))?;
        let best = search(&layer, &cfg).with_context(ctx)?;
        let fallback = fallback_schedule(&layer, &cfg).with_context(ctx)?;
        println!(
            "{}: {} moves {} bytes; fallback {} moves {} bytes ({:.1}x)",
            n.name,
            best.params,
            best.total_cost,
            fallback.params,
            fallback.total_cost,
            fallback.total_cost as f64 / best.total_cost as f64
        );
    }
    Ok(())
}

pub fn gen(a: GenArgs) -> Result<()> {
    let config = a.machine.config.as_deref();
    let cfg = inputs::config(config)?;
    let m =
        manifest("gen", config, Source::Workload(&a.layers.workload), &a.layers.layers, &a.out.out_dir, "compile", 0)?;
    for n in inputs::layers(&a.layers.workload, &a.layers.layers)? {
        let job = lower(&n, &cfg, a.lower)?;
        let s = &job.stream;
        m.write(&format!("{}.stream.json", job.name), s.to_json())?;
        m.write(&format!("{}.jsonl", job.name), s.to_jsonl())?;
        m.write(&format!("{}.bin", job.name), s.to_binary().with_context(|| format!("encoding {}", job.name))?)?;
        m.write(
            &format!("{}.uops.bin", job.name),
            s.uops_to_binary().with_context(|| format!("encoding {}", job.name))?,
        )?;
        let tiling = s.meta.tiling.map_or_else(|| "ALU schedule".to_string(), |t| t.to_string());
        println!("{}: {} instructions, {} uops, {tiling}", job.name, s.instructions.len(), s.uops.len());
    }
    Ok(())
}

pub fn sim(a: SimArgs) -> Result<()> {
    let config = a.machine.config.as_deref();
    let source = a.source.source();
    let m = manifest("sim", config, source, &a.layers, &a.out.out_dir, mode_name(a.mode), a.seed)?;
    let (cfg, jobs) = jobs(config, source, &a.layers, a.lower)?;
    for job in &jobs {
        let (report, output) = simulate(job, &cfg, a.mode, a.seed)?;
        m.write(&format!("{}.report.json", job.name), report.to_json())?;
        m.write(&format!("{}.intervals.csv", job.name), report.intervals_csv())?;
        if let Some(out) = output {
            m.write(&format!("{}.output.json", job.name), out)?;
        }
        deadlock(job, &report)?;
        println!(
            "{}: {} cycles, {} DRAM bytes, GEMM busy {} cycles, ALU busy {} cycles",
            job.name,
            report.total_cycles,
            report.total_dram_bytes(),
            report.busy_cycles(Module::Compute, &[Activity::Gemm]),
            report.busy_cycles(Module::Compute, &[Activity::Alu])
        );
    }
    Ok(())
}

/// Completed timing runs of every selected job.
struct Timed {
    manifest: RunManifest,
    cfg: AccelConfig,
    runs: Vec<(Job, SimReport)>,
}

fn timed(a: &ReportArgs, command: &str) -> Result<Timed> {
    let config = a.machine.config.as_deref();
    let source = a.source.source();
    let m = manifest(command, config, source, &a.layers, &a.out.out_dir, "timing", a.seed)?;
    let (cfg, jobs) = jobs(config, source, &a.layers, a.lower)?;
    let mut runs = Vec::new();
    for job in jobs {
        let (report, _) = simulate(&job, &cfg, ModeArg::Timing, a.seed)?;
        deadlock(&job, &report)?;
        runs.push((job, report));
    }
    Ok(Timed { manifest: m, cfg, runs })
}

pub fn roofline(a: ReportArgs) -> Result<()> {
    let Timed { manifest: m, cfg, runs } = timed(&a, "roofline")?;
    let mut points = Vec::new();
    for (job, report) in &runs {
        let work = match &job.layer {
            Some(l) => Work::Layer(l),
            None => Work::Stream(&job.stream),
        };
        let mut p = roofline_point(report, work, &cfg).with_context(|| format!("roofline point for {}", job.name))?;
        p.label = job.name.clone();
        println!("{}: {:.3} ops/byte, {:.3} ops/cycle", p.label, p.ops_per_byte, p.ops_per_cycle);
        points.push(p);
    }
    let chart = roofline_chart(&points, &[cfg])?;
    m.write("roofline.csv", chart.csv)?;
    m.write("roofline.svg", chart.svg)
}

pub fn util(a: ReportArgs) -> Result<()> {
    let Timed { manifest: m, runs, .. } = timed(&a, "util")?;
    for (job, report) in &runs {
        let chart = utilization_timeline(report)?;
        m.write(&format!("{}.timeline.csv", job.name), chart.csv)?;
        m.write(&format!("{}.timeline.svg", job.name), chart.svg)?;
        println!(
            "{}: idle load {:.3}, compute {:.3}, store {:.3}",
            job.name,
            idle_fraction(report, Module::Load),
            idle_fraction(report, Module::Compute),
            idle_fraction(report, Module::Store)
        );
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Grid {
    #[serde(default)]
    base: serde_json::Map<String, serde_json::Value>,
    shapes: Vec<Shape>,
    axi_data_bits: Vec<u32>,
    #[serde(default = "unit_scale")]
    scratchpad_scale: Vec<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Shape {
    batch: u32,
    block_in: u32,
    block_out: u32,
}

fn unit_scale() -> Vec<u64> {
    vec![1]
}

impl Grid {
    fn configs(&self, path: &Path) -> Result<Vec<AccelConfig>> {
        let base: AccelConfig = serde_json::from_value(serde_json::Value::Object(self.base.clone()))
            .map_err(|e| usage(format!("{}: base: {e}", path.display())))?;
        let mut out = Vec::new();
        for s in &self.shapes {
            for &bits in &self.axi_data_bits {
                for &k in &self.scratchpad_scale {
                    let cfg = AccelConfig {
                        batch: s.batch,
                        block_in: s.block_in,
                        block_out: s.block_out,
                        axi_data_bits: bits,
                        c_inp: base.c_inp * k,
                        c_wgt: base.c_wgt * k,
                        c_acc: base.c_acc * k,
                        ..base
                    };
                    cfg.validate().map_err(|e| {
                        usage(format!(
                            "{}: {}x{}x{} on {bits} bits, scale {k}: {e}",
                            path.display(),
                            s.batch,
                            s.block_in,
                            s.block_out
                        ))
                    })?;
                    out.push(cfg);
                }
            }
        }
        if out.is_empty() {
            return Err(usage(format!("{}: the grid is empty", path.display())));
        }
        Ok(out)
    }
}

pub fn space(a: SpaceArgs) -> Result<()> {
    let m = manifest(
        "space",
        Some(&a.grid),
        Source::Workload(&a.layers.workload),
        &a.layers.layers,
        &a.out.out_dir,
        "timing",
        a.seed,
    )?;
    let grid: Grid =
        serde_json::from_str(&inputs::read(&a.grid)?).map_err(|e| usage(format!("{}: {e}", a.grid.display())))?;
    let configs = grid.configs(&a.grid)?;
    let layers: Vec<ConvLayer> =
        inputs::layers(&a.layers.workload, &a.layers.layers)?.into_iter().map(|n| n.item).collect();
    let coeffs = AreaCoeffs { alpha: a.alpha, beta: a.beta };
    let entries = configs
        .par_iter()
        .map(|cfg| {
            let label = || format!("{}x{}x{} on {} bits", cfg.batch, cfg.block_in, cfg.block_out, cfg.axi_data_bits);
            let area = area_proxy(cfg, coeffs).map_err(|e| usage(e.to_string()))?;
            let run = run_workload(&layers, cfg, GenOptions::default(), a.seed).with_context(label)?;
            Ok(DesignEntry { config: *cfg, total_cycles: run.total_cycles, area })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = design_space_table(&entries);
    print!("{table}");
    m.write("space.csv", table)
}

fn floorplan(a: &FloorplanArgs) -> Result<FpNode> {
    let shown = |p: &PathBuf| p.display().to_string();
    let mut root =
        FpNode::from_json(&inputs::read(&a.floorplan)?).map_err(|e| usage(format!("{}: {e}", shown(&a.floorplan))))?;
    if let Some(tech) = &a.tech {
        let table: TechTable =
            serde_json::from_str(&inputs::read(tech)?).map_err(|e| usage(format!("{}: {e}", shown(tech))))?;
        root.apply_tech(&table).map_err(|e| usage(format!("{}: {e}", shown(&a.floorplan))))?;
    }
    root.validate().map_err(|e| usage(format!("{}: {e}", shown(&a.floorplan))))?;
    if !a.min_spacing.is_finite() || a.min_spacing < 0.0 {
        return Err(usage(format!("--min-spacing must be a non-negative number, got {}", a.min_spacing)));
    }
    Ok(root)
}

pub fn fp_check(a: FloorplanArgs) -> Result<()> {
    let root = floorplan(&a)?;
    let violations = check(&root, a.min_spacing);
    for v in &violations {
        println!("{}", serde_json::to_string(v)?);
    }
    report_violations(&violations)
}

fn report_violations(violations: &[FpViolation]) -> Result<()> {
    for v in violations {
        eprintln!("{v}");
    }
    if !violations.is_empty() {
        bail!("{} floorplan rule violations", violations.len());
    }
    Ok(())
}

pub fn fp_render(a: RenderArgs) -> Result<()> {
    let root = floorplan(&a.floorplan)?;
    let violations = check(&root, a.floorplan.min_spacing);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(&a.out, render_svg_with(&root, &violations))
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{}: {} instances, {} violations highlighted",
        a.out.display(),
        tilelab::floorplan::flatten(&root).len(),
        violations.len()
    );
    Ok(())
}
