use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use opsched_cli::emit::{emit_trace, TraceFormat};
use opsched_cli::model::{load_model, save_graph_with_schedule, LoadedModel};
use opsched_cli::{render_error_chain, CliError};
use opsched_core::alloc::{compare_strategies, simulate_compacting, ArenaConfig, CompareOptions};
use opsched_core::sched::{
    brute_force_min_peak, min_peak_memory, working_set_trace, DpConfig, EnumConfig, Schedule,
};

/// Finds operator execution orders that minimize peak tensor memory and
/// simulates how the buffers fit into a device's RAM arena.
#[derive(Parser)]
#[command(name = "opsched", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Reject unknown fields in graph documents.
    #[arg(long, global = true)]
    strict: bool,
    /// Report id densification and extra detail on stderr.
    #[arg(long, global = true)]
    verbose: bool,
    /// Operator-count cap for the exact schedule search.
    #[arg(long, global = true, default_value_t = 62)]
    dp_limit: usize,
    /// Operator-count cap for exhaustive schedule enumeration.
    #[arg(long, global = true, default_value_t = 12)]
    enum_limit: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Working-set trace and peak for a given order.
    Analyze {
        graph: PathBuf,
        /// "embedded"/"default" (the file's operator order) or a comma list
        /// of operator ids.
        #[arg(long, default_value = "embedded")]
        schedule: String,
        /// Write the per-step trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the per-step trace as an SVG chart.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Search for the order with the smallest peak and report the savings.
    Optimize {
        graph: PathBuf,
        /// Write the model back with the optimal order embedded.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Write a JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Cross-check the schedule search against brute-force enumeration.
    Verify { graph: PathBuf },
    /// Simulate the compacting arena allocator for a given order.
    Simulate {
        graph: PathBuf,
        #[arg(long, default_value = "embedded")]
        schedule: String,
        /// Arena capacity in bytes (absent = unbounded).
        #[arg(long)]
        capacity: Option<u64>,
        /// Buffer alignment in bytes (power of two).
        #[arg(long, default_value_t = 4)]
        alignment: u64,
    },
    /// Default vs. optimal order and static vs. dynamic allocation.
    Compare {
        graph: PathBuf,
        /// Per-ram-tensor bookkeeping overhead, reported separately.
        #[arg(long, default_value_t = 0)]
        overhead_per_tensor: u64,
        /// Charge producerless read-only tensors additively into the peak.
        #[arg(long)]
        count_flash_as_ram: bool,
        /// Emit the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("{}", render_error_chain(&err));
            ExitCode::FAILURE
        }
    }
}

/// Die quietly when a downstream pipe closes (`opsched ... | head`) instead
/// of panicking on the failed write.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe { libc::signal(libc::SIGPIPE, libc::SIG_DFL) };
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn run(cli: &Cli) -> Result<ExitCode, CliError> {
    match &cli.command {
        Command::Analyze {
            graph,
            schedule,
            trace,
            plot,
        } => {
            let model = load(cli, graph)?;
            let schedule = resolve_schedule(&model, schedule)?;
            let result = working_set_trace(&model.graph, &schedule)?;
            println!(
                "graph: {} ({} operators, {} tensors)",
                describe(&model, graph),
                model.graph.op_count(),
                model.graph.tensor_count()
            );
            println!("schedule: {}", model.schedule_to_original(&schedule));
            println!(
                "per-step bytes: {}",
                result
                    .steps
                    .iter()
                    .map(|s| s.bytes.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            );
            match result.steps.get(result.peak_step) {
                Some(step) => println!(
                    "peak: {} B at step {} (operator {})",
                    result.peak_bytes,
                    result.peak_step,
                    model.original_op_id(step.operator)
                ),
                None => println!("peak: 0 B (no operators)"),
            }
            println!("flash: {} B", result.flash_bytes);
            if let Some(path) = trace {
                emit_trace(&model, &result, TraceFormat::Csv, path)?;
                println!("wrote trace to {}", path.display());
            }
            if let Some(path) = plot {
                emit_trace(&model, &result, TraceFormat::Svg, path)?;
                println!("wrote plot to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Optimize {
            graph,
            output,
            report,
        } => {
            let model = load(cli, graph)?;
            let default_peak =
                working_set_trace(&model.graph, &model.graph.default_schedule())?.peak_bytes;
            let result = min_peak_memory(&model.graph, &dp_config(cli))?;
            let savings = default_peak - result.min_peak_bytes;
            let percent = percent(savings, default_peak);
            println!("default order peak: {default_peak} B");
            println!("optimal order peak: {} B", result.min_peak_bytes);
            println!("savings: {savings} B ({percent:.1}%)");
            println!(
                "optimal schedule: {}",
                model.schedule_to_original(&result.schedule)
            );
            if cli.verbose {
                eprintln!(
                    "search: {} states explored, {} memo entries",
                    result.states_explored, result.memo_entries
                );
            }
            if let Some(path) = output {
                save_graph_with_schedule(&model, &result.schedule, path)?;
                println!("wrote reordered model to {}", path.display());
            }
            if let Some(path) = report {
                let doc = OptimizeReport {
                    default_peak_bytes: default_peak,
                    min_peak_bytes: result.min_peak_bytes,
                    savings_bytes: savings,
                    savings_percent: percent,
                    schedule: result
                        .schedule
                        .ids()
                        .iter()
                        .map(|&op| model.original_op_id(op))
                        .collect(),
                    states_explored: result.states_explored,
                    memo_entries: result.memo_entries,
                };
                let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
                text.push('\n');
                opsched_cli::model::write_atomic(path, text.as_bytes())?;
                println!("wrote report to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Verify { graph } => {
            let model = load(cli, graph)?;
            let brute = brute_force_min_peak(&model.graph, &enum_config(cli))?;
            let dp = min_peak_memory(&model.graph, &dp_config(cli))?;
            println!(
                "brute force peak: {} B ({} schedules)",
                brute.min_peak_bytes, brute.states_explored
            );
            println!("dp peak:          {} B", dp.min_peak_bytes);
            if dp.min_peak_bytes == brute.min_peak_bytes {
                println!("verdict: PASS");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("verdict: FAIL");
                Ok(ExitCode::FAILURE)
            }
        }

        Command::Simulate {
            graph,
            schedule,
            capacity,
            alignment,
        } => {
            let model = load(cli, graph)?;
            let schedule = resolve_schedule(&model, schedule)?;
            let config = ArenaConfig {
                capacity_bytes: *capacity,
                alignment_bytes: *alignment,
            };
            let report = simulate_compacting(&model.graph, &schedule, &config)?;
            println!("schedule: {}", model.schedule_to_original(&schedule));
            println!("peak address: {} B", report.peak_address_bytes);
            println!(
                "moved: {} B in {} moves",
                report.total_moved_bytes, report.move_count
            );
            if cli.verbose {
                for event in &report.events {
                    eprintln!("{event:?}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Compare {
            graph,
            overhead_per_tensor,
            count_flash_as_ram,
            json,
        } => {
            let model = load(cli, graph)?;
            let options = CompareOptions {
                overhead_per_tensor: *overhead_per_tensor,
                dp: DpConfig {
                    count_flash_as_ram: *count_flash_as_ram,
                    ..dp_config(cli)
                },
            };
            let report = compare_strategies(&model.graph, &ArenaConfig::default(), &options)?;
            if *json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                );
            } else {
                println!("graph: {}", describe(&model, graph));
                println!("peak memory usage (excl. overheads)");
                println!("  default order:  {} B", report.default_order_peak);
                println!(
                    "  optimal order:  {} B  (saves {} B, {:.1}%)",
                    report.optimal_order_peak, report.savings_bytes, report.savings_percent
                );
                println!("allocation strategies");
                println!("  static:            {} B", report.static_peak);
                println!(
                    "  dynamic (default): {} B  (moved {} B)",
                    report.dynamic_peak_default, report.moved_bytes_default
                );
                println!(
                    "  dynamic (optimal): {} B  (moved {} B)",
                    report.dynamic_peak_optimal, report.moved_bytes_optimal
                );
                println!("flash (read-only parameters): {} B", report.flash_bytes);
                if report.overhead_bytes > 0 {
                    println!(
                        "bookkeeping overhead: {} B (optimal order total {} B)",
                        report.overhead_bytes,
                        report.optimal_order_peak + report.overhead_bytes
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[derive(Serialize)]
struct OptimizeReport {
    default_peak_bytes: u64,
    min_peak_bytes: u64,
    savings_bytes: u64,
    savings_percent: f64,
    schedule: Vec<u64>,
    states_explored: u64,
    memo_entries: u64,
}

fn load(cli: &Cli, path: &Path) -> Result<LoadedModel, CliError> {
    let model = load_model(path, cli.strict)?;
    if cli.verbose {
        for (dense, original) in model.remapped_tensors() {
            eprintln!("tensor id {original} -> {dense}");
        }
        for (dense, original) in model.remapped_operators() {
            eprintln!("operator id {original} -> {dense}");
        }
    }
    Ok(model)
}

fn describe(model: &LoadedModel, path: &Path) -> String {
    model
        .graph
        .name()
        .map(str::to_string)
        .unwrap_or_else(|| path.display().to_string())
}

fn percent(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 * 100.0 / whole as f64
    }
}

fn dp_config(cli: &Cli) -> DpConfig {
    DpConfig {
        op_limit: cli.dp_limit,
        ..DpConfig::default()
    }
}

fn enum_config(cli: &Cli) -> EnumConfig {
    EnumConfig {
        op_limit: cli.enum_limit,
    }
}

/// "embedded"/"default" or a comma list of document operator ids covering
/// every operator.
fn resolve_schedule(model: &LoadedModel, arg: &str) -> Result<Schedule, CliError> {
    match arg {
        "embedded" | "default" => Ok(model.graph.default_schedule()),
        list => {
            let ids = list
                .split(',')
                .map(|item| {
                    let raw: u64 = item
                        .trim()
                        .parse()
                        .map_err(|_| CliError::Usage(format!("bad operator id `{item}`")))?;
                    model.op_from_original(raw).ok_or_else(|| {
                        CliError::Usage(format!("unknown operator id {raw} in --schedule"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Schedule::new(ids))
        }
    }
}
