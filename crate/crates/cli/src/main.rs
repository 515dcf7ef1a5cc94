mod commands;
mod inputs;

use clap::{Args, Parser, Subcommand, ValueEnum};
use inputs::Usage;
use std::path::PathBuf;
use std::process::ExitCode;

const SCHEMAS: &str = "\
FILE FORMATS (all JSON)

  config     Machine parameters. Missing keys take defaults, unknown keys are
             rejected. Keys: batch, block_in, block_out (powers of two),
             inp_elem_bits, wgt_elem_bits, acc_elem_bits, out_elem_bits,
             uop_bits, ins_bits, c_inp, c_wgt, c_acc, c_uop (scratchpad
             bytes), axi_data_bits (64..512), dram_latency_cycles,
             vme_max_inflight, gemm_ii, alu_ii_imm, alu_ii_two,
             gemm_pipeline_depth, dep_queue_depth.

  workload   Array of layers: {name, kind: conv|depthwise|dense|maxpool|
             avgpool, b, h, w, kh, kw, fi, fo, ph, pw, sh, sw}.

  stream     Output of `gen` (<layer>.stream.json): {config, instructions,
             uops, meta}. Instructions carry op fields plus pop_prev,
             pop_next, push_prev, push_next dependency flags.

  grid       Design-space sweep for `space`: {base: config, shapes:
             [{batch, block_in, block_out}], axi_data_bits: [bits],
             scratchpad_scale: [factor]}. One design per combination.

  floorplan  Node tree: {name, kind: hierarchy|macro, cell, width, height,
             orientation: R0|R90|R180|R270|MX|MY|MX90|MY90, bound: {x0, y0,
             x1, y1}, children: [{x, y, node}]}. Lengths in micrometers.

  tech       Macro cell sizes: {\"cell\": [width_um, height_um]}.

OUTPUTS

  tps        <layer>.tps.csv ranking of every tiling candidate.
  gen        <layer>.stream.json, <layer>.jsonl, <layer>.bin, <layer>.uops.bin
  sim        <layer>.report.json and <layer>.intervals.csv
             (cycle_start,cycle_end,process,kind).
  roofline   roofline.csv (kind,label,ops_per_byte,ops_per_cycle,
             peak_ops_per_cycle,bus_bytes_per_cycle) and roofline.svg.
  util       <layer>.timeline.csv and <layer>.timeline.svg.
  space      space.csv (batch,block_in,block_out,axi_data_bits,
             scratchpad_bits,area_proxy,total_cycles).
  fp-check   One JSON violation per line on stdout.
  fp-render  SVG with violating instances outlined.

EXIT CODES
  0 success, 1 domain error (infeasible tiling, deadlock, rule
  violations), 2 usage error (bad flags or input files).";

#[derive(Parser)]
#[command(name = "tilelab", version, about = "Tiling search, code generation and cycle simulation for a load/compute/store tensor accelerator", after_long_help = SCHEMAS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank tiling candidates for each layer
    Tps(TpsArgs),
    /// Compile layers to instruction streams
    Gen(GenArgs),
    /// Simulate layers or a stream
    Sim(SimArgs),
    /// Roofline chart of simulated layers
    Roofline(ReportArgs),
    /// Per-process utilization timelines
    Util(ReportArgs),
    /// Sweep a config grid over a workload
    Space(SpaceArgs),
    /// Check floorplan rules
    FpCheck(FloorplanArgs),
    /// Render a floorplan to SVG
    FpRender(RenderArgs),
}

#[derive(Args)]
struct MachineArgs {
    /// Machine config file (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct LayerArgs {
    /// Workload file
    #[arg(long)]
    workload: PathBuf,
    /// Layer name or index to select (repeatable; all layers when omitted)
    #[arg(long = "layer")]
    layers: Vec<String>,
}

#[derive(Args, Clone, Copy)]
pub struct LowerArgs {
    /// Arithmetic right shift applied before storing
    #[arg(long)]
    shift: Option<u32>,
    /// Clip stored values to [0, CLIP]
    #[arg(long)]
    clip: Option<i32>,
    /// Keep loads of chunks already resident in the scratchpad
    #[arg(long)]
    no_dedup: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct SourceArgs {
    /// Workload file
    #[arg(long)]
    workload: Option<PathBuf>,
    /// Stream file written by `gen`; its embedded config is used
    #[arg(long, conflicts_with = "config")]
    stream: Option<PathBuf>,
}

#[derive(Args)]
struct OutArgs {
    /// Directory for output files (created if missing)
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TpsArgs {
    #[command(flatten)]
    machine: MachineArgs,
    #[command(flatten)]
    layers: LayerArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    machine: MachineArgs,
    #[command(flatten)]
    layers: LayerArgs,
    #[command(flatten)]
    lower: LowerArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Timing,
    Functional,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    machine: MachineArgs,
    #[command(flatten)]
    source: SourceArgs,
    /// Layer name or index to select (repeatable; all layers when omitted)
    #[arg(long = "layer", requires = "workload")]
    layers: Vec<String>,
    #[command(flatten)]
    lower: LowerArgs,
    /// Timing only, or also compute scratchpad contents on seeded inputs
    #[arg(long, value_enum, default_value = "timing")]
    mode: ModeArg,
    /// Memory-engine completion order and input data seed (0 = in order)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    machine: MachineArgs,
    #[command(flatten)]
    source: SourceArgs,
    /// Layer name or index to select (repeatable; all layers when omitted)
    #[arg(long = "layer", requires = "workload")]
    layers: Vec<String>,
    #[command(flatten)]
    lower: LowerArgs,
    /// Memory-engine completion order seed (0 = in order)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SpaceArgs {
    /// Design grid file
    #[arg(long)]
    grid: PathBuf,
    #[command(flatten)]
    layers: LayerArgs,
    /// Area proxy weight per MAC
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Area proxy weight per scratchpad bit
    #[arg(long, default_value_t = 0.05)]
    beta: f64,
    /// Memory-engine completion order seed (0 = in order)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct FloorplanArgs {
    /// Floorplan file
    #[arg(long)]
    floorplan: PathBuf,
    /// Tech table supplying macro cell sizes
    #[arg(long)]
    tech: Option<PathBuf>,
    /// Minimum macro spacing in micrometers
    #[arg(long, default_value_t = 0.0)]
    min_spacing: f64,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    floorplan: FloorplanArgs,
    /// SVG output path
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Tps(a) => commands::tps(a),
        Command::Gen(a) => commands::gen(a),
        Command::Sim(a) => commands::sim(a),
        Command::Roofline(a) => commands::roofline(a),
        Command::Util(a) => commands::util(a),
        Command::Space(a) => commands::space(a),
        Command::FpCheck(a) => commands::fp_check(a),
        Command::FpRender(a) => commands::fp_render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
