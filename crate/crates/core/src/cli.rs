//! Command-line front end. [`run`] is the whole program minus process
//! plumbing so it can be driven in-process by tests.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::compiler::{lower, CompileError, CompiledProgram, LoweringConfig};
use crate::diff::{arg_grid, diff_compiled, diff_program, diff_random, DiffOptions, DiffReport, Family, DEFAULT_FUEL};
use crate::engine::{simulate, RunStatus, SimConfig, TraceRecord, DEFAULT_BIG_M, DEFAULT_MAX_STEPS};
use crate::model::{Circuit, Injection};
use crate::murec::{arity_check, eval_oracle, parse_program, EvalResult, RecExpr};

pub mod exit {
    pub const OK: i32 = 0;
    pub const PARSE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const TIMEOUT: i32 = 3;
    pub const FAULT: i32 = 4;
    pub const MISMATCH: i32 = 5;
    pub const USAGE: i32 = 64;
}

#[derive(Debug, Parser)]
#[command(name = "neurorec", version, about = "Compile mu-recursive programs to spiking circuits and run them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RasterFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and arity-check a program.
    Check { program: PathBuf },
    /// Lower a program to a circuit file.
    Compile {
        program: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, env = "MUREC_BIG_M", default_value_t = DEFAULT_BIG_M)]
        big_m: i64,
        /// Largest argument the circuit must handle; defaults to (big_m - 1) / 2.
        #[arg(long)]
        max_arg: Option<i64>,
        /// Refuse programs that need native gadgets.
        #[arg(long)]
        strict_primitive: bool,
    },
    /// Simulate a circuit file.
    Run {
        circuit: PathBuf,
        /// Input binding, repeatable: --in x1=3
        #[arg(long = "in", value_name = "NAME=VALUE", value_parser = parse_binding)]
        inputs: Vec<(String, u64)>,
        #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
        max_steps: u64,
        #[arg(long, value_enum, default_value = "csv")]
        format: RasterFormat,
        /// Also record every delivery.
        #[arg(long)]
        trace: bool,
        /// Raster destination; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Separation constant; defaults to the program's own.
        #[arg(long, env = "MUREC_BIG_M")]
        big_m: Option<i64>,
    },
    /// Evaluate a program with the reference interpreter.
    Eval {
        program: PathBuf,
        args: Vec<u64>,
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
    },
    /// Compare compiled circuits against the interpreter.
    Diff {
        program: Option<PathBuf>,
        /// Check this compiled circuit instead of compiling the program.
        #[arg(long, requires = "program")]
        circuit: Option<PathBuf>,
        /// Inclusive ranges per argument, e.g. 0..10,0..10
        #[arg(long, value_delimiter = ',', value_parser = parse_range)]
        args: Vec<(u64, u64)>,
        #[arg(long, conflicts_with = "program")]
        random: Option<usize>,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Argument samples per random program.
        #[arg(long, default_value_t = 5)]
        samples: usize,
        /// Let random programs use recursion and minimization.
        #[arg(long)]
        loops: bool,
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
        max_steps: u64,
        #[arg(long, env = "MUREC_BIG_M", default_value_t = DEFAULT_BIG_M)]
        big_m: i64,
    },
}

fn parse_binding(s: &str) -> Result<(String, u64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got {s:?}"))?;
    let value = value.parse().map_err(|e| format!("bad value for {name}: {e}"))?;
    Ok((name.to_string(), value))
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let parse = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad bound {t:?}: {e}"));
    match s.split_once("..") {
        Some((lo, hi)) => {
            let (lo, hi) = (parse(lo)?, parse(hi.trim_start_matches('='))?);
            if lo > hi {
                return Err(format!("empty range {s}"));
            }
            Ok((lo, hi))
        }
        None => parse(s).map(|v| (v, v)),
    }
}

/// A failure carrying its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Failure {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<CompileError> for Failure {
    fn from(e: CompileError) -> Failure {
        let code = match e {
            CompileError::Arity(_) => exit::PARSE,
            _ => exit::CONFIG,
        };
        Failure::new(code, e.to_string())
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(exit::USAGE, format!("{}: {e}", path.display()))
}

fn load_program(path: &Path) -> Result<(RecExpr, usize), Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let expr = parse_program(&text).map_err(|e| Failure::new(exit::PARSE, format!("{}: {e}", path.display())))?;
    let arity = arity_check(&expr).map_err(|e| Failure::new(exit::PARSE, format!("{}: {e}", path.display())))?;
    Ok((expr, arity))
}

fn write_output(path: &Option<PathBuf>, text: &str, out: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| Failure::new(exit::USAGE, e.to_string())),
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32, Failure> {
    let w = |r: std::io::Result<()>| r.map_err(|e| Failure::new(exit::USAGE, e.to_string()));
    match command {
        Command::Check { program } => {
            let (expr, arity) = load_program(&program)?;
            w(writeln!(out, "ok: arity {arity}, depth {}", expr.depth()))?;
            Ok(exit::OK)
        }
        Command::Compile {
            program,
            output,
            big_m,
            max_arg,
            strict_primitive,
        } => {
            let (expr, _) = load_program(&program)?;
            let mut config = LoweringConfig::with_big_m(big_m);
            config.strict_primitive = strict_primitive;
            if let Some(m) = max_arg {
                config.max_arg = m;
            }
            let compiled = lower(&expr, &config)?;
            let mut json = compiled.to_json();
            json.push('\n');
            let s = compiled.stats;
            let summary = format!(
                "neurons: {}, synapses: {}, native gadgets: {}, trigger cells: {}, latency: {}",
                s.neurons,
                s.synapses,
                s.native_gadgets,
                s.trigger_cells,
                s.static_latency.map_or("dynamic".to_string(), |l| l.to_string())
            );
            match &output {
                Some(_) => {
                    write_output(&output, &json, out)?;
                    w(writeln!(out, "{summary}"))?;
                }
                None => write_output(&None, &json, out)?,
            }
            Ok(exit::OK)
        }
        Command::Run {
            circuit,
            inputs,
            max_steps,
            format,
            trace,
            output,
            big_m,
        } => cmd_run(&circuit, &inputs, max_steps, format, trace, &output, big_m, out),
        Command::Eval { program, args, fuel } => {
            let (expr, arity) = load_program(&program)?;
            if args.len() != arity {
                return Err(Failure::new(
                    exit::PARSE,
                    format!("program takes {arity} arguments, got {}", args.len()),
                ));
            }
            match eval_oracle(&expr, &args, fuel) {
                Ok(EvalResult::Value(v)) => w(writeln!(out, "{v}"))?,
                Ok(EvalResult::FuelExhausted) => w(writeln!(out, "FuelExhausted"))?,
                Err(e) => return Err(Failure::new(exit::CONFIG, e.to_string())),
            }
            Ok(exit::OK)
        }
        Command::Diff {
            program,
            circuit,
            args,
            random,
            depth,
            seed,
            samples,
            loops,
            fuel,
            max_steps,
            big_m,
        } => {
            let opts = DiffOptions { fuel, max_steps, big_m };
            let report: DiffReport = match (program, random) {
                (Some(path), None) => {
                    let (expr, arity) = load_program(&path)?;
                    if args.len() != arity {
                        return Err(Failure::new(
                            exit::USAGE,
                            format!("--args needs {arity} ranges, got {}", args.len()),
                        ));
                    }
                    match circuit {
                        Some(c) => {
                            let text = fs::read_to_string(&c).map_err(|e| io_failure(&c, e))?;
                            let compiled = CompiledProgram::from_json(&text)
                                .map_err(|e| Failure::new(exit::PARSE, format!("{}: {e}", c.display())))?;
                            diff_compiled(&expr, &compiled, &arg_grid(&args), &opts)
                        }
                        None => diff_program(&expr, &arg_grid(&args), &opts)?,
                    }
                }
                (None, Some(n)) => {
                    let family = if loops { Family::WithLoops } else { Family::LoopFree };
                    diff_random(n, depth, seed, family, samples, &opts)?
                }
                _ => return Err(Failure::new(exit::USAGE, "diff needs a program file or --random N")),
            };
            w(writeln!(out, "{report}"))?;
            Ok(if report.passed() { exit::OK } else { exit::MISMATCH })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    path: &Path,
    bindings: &[(String, u64)],
    max_steps: u64,
    format: RasterFormat,
    trace: bool,
    output: &Option<PathBuf>,
    big_m: Option<i64>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let bad_file = |e: crate::model::ParseError| Failure::new(exit::PARSE, format!("{}: {e}", path.display()));
    // compiled programs carry metadata; bare circuits are accepted too
    let (circuit, meta_big_m, limit) = match CompiledProgram::from_json(&text) {
        Ok(p) => (p.circuit, p.big_m, Some(p.max_arg)),
        Err(_) => (Circuit::from_json(&text).map_err(bad_file)?, DEFAULT_BIG_M, None),
    };
    if let Err(violations) = circuit.validate() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Failure::new(exit::PARSE, format!("invalid circuit: {}", list.join("; "))));
    }
    let big_m = big_m.unwrap_or(meta_big_m);
    if big_m <= 0 {
        return Err(Failure::new(exit::CONFIG, format!("big_m must be positive, got {big_m}")));
    }
    let limit = limit.unwrap_or((big_m - 1) / 2);

    let mut injections = Vec::new();
    for (name, value) in bindings {
        let port = circuit
            .input_ports()
            .find(|p| &p.name == name)
            .ok_or_else(|| Failure::new(exit::USAGE, format!("no input port named {name:?}")))?;
        if *value as i128 > limit as i128 {
            return Err(Failure::new(
                exit::CONFIG,
                format!("value {value} for {name} exceeds the maximum argument {limit}"),
            ));
        }
        injections.push(Injection {
            neuron: port.neuron,
            value: *value as i64,
            time: 0,
        });
    }
    if let Some(unbound) = circuit.input_ports().find(|p| !bindings.iter().any(|(n, _)| n == &p.name)) {
        return Err(Failure::new(exit::USAGE, format!("input port {:?} is not bound", unbound.name)));
    }

    let config = SimConfig { max_steps, big_m, trace };
    let outcome = simulate(&circuit, &injections, config).map_err(|e| Failure::new(exit::CONFIG, e.to_string()))?;
    let w = |r: std::io::Result<()>| r.map_err(|e| Failure::new(exit::USAGE, e.to_string()));

    let mut raster = match format {
        RasterFormat::Csv => outcome.raster.to_csv(&circuit),
        RasterFormat::Jsonl => outcome.raster.to_jsonl(&circuit),
    };
    if trace {
        raster.push_str(&render_trace(&outcome.trace, format));
    }
    let mut ports: Vec<&str> = circuit.output_ports().map(|p| p.name.as_str()).collect();
    ports.dedup();
    for port in ports {
        let values = outcome.output_values(port);
        let shown: Vec<String> = values.iter().map(ToString::to_string).collect();
        w(writeln!(out, "{port}={}", shown.join(",")))?;
    }
    let (status, code) = match &outcome.status {
        RunStatus::Quiescent => ("Quiescent".to_string(), exit::OK),
        RunStatus::Timeout => ("Timeout".to_string(), exit::TIMEOUT),
        RunStatus::Fault(f) => (format!("Fault: {f}"), exit::FAULT),
    };
    w(writeln!(out, "status: {status} at t={}", outcome.final_clock))?;
    write_output(output, &raster, out)?;
    Ok(code)
}

fn render_trace(trace: &[TraceRecord], format: RasterFormat) -> String {
    let mut text = String::new();
    if matches!(format, RasterFormat::Csv) {
        text.push_str("# deliveries\ntime,target,value\n");
    }
    for record in trace {
        if let TraceRecord::Delivery { time, target, value } = record {
            match format {
                RasterFormat::Csv => text.push_str(&format!("{time},{target},{value}\n")),
                RasterFormat::Jsonl => text.push_str(&format!(
                    "{}\n",
                    serde_json::json!({"delivery": {"time": time, "target": target.to_string(), "value": value}})
                )),
            }
        }
    }
    text
}
