use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use tracelens_core::abstractor::{abstract_into, abstract_stream, model_meta, zoom};
use tracelens_core::demo::{run_scenario, symbol_manifest, FlightScenario, ScenarioName};
use tracelens_core::io::{
    export_dot, parse_config, parse_efsm, parse_model, serialize_efsm, serialize_fsm, to_json_text,
    DotOptions,
};
use tracelens_core::metrics::{diff_models, exam_report};
use tracelens_core::miners::{mine, sweep, sweep_table, LabelTrace, MinerParams, SweepGrid};
use tracelens_core::symbols::{manifest_to_string, save_manifest, scan_sources};
use tracelens_core::trace::{
    filter_trace, filtered_to_string, load_trace, parse_filtered, trace_id_for, trace_to_string, EventReader,
};
use tracelens_core::{Efsm, Error, MonitorConfig, StateId};

#[derive(Parser)]
#[command(name = "tracelens", version, about = "Interactive state-machine abstraction of execution traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan C sources for global fields and function definitions.
    ExtractSymbols {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(short)]
        output: Option<PathBuf>,
    },
    /// Run a flight-demo scenario and write its trace.
    Demo {
        #[arg(long, value_parser = parse_scenario)]
        scenario: ScenarioName,
        /// Scenario parameter as key=value; repeatable.
        #[arg(long = "param", value_name = "K=V")]
        params: Vec<String>,
        #[arg(short)]
        output: Option<PathBuf>,
        /// Also write the matching symbol manifest here.
        #[arg(long)]
        symbols: Option<PathBuf>,
    },
    /// Keep only the selected calls that change a selected field.
    Filter {
        #[arg(long)]
        config: PathBuf,
        input: PathBuf,
        #[arg(short)]
        output: Option<PathBuf>,
    },
    /// Build a model from filtered (.ftrc) or raw (.trc) traces. Raw traces
    /// are filtered on the fly without loading them.
    Abstract {
        #[arg(long)]
        config: PathBuf,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(short)]
        output: Option<PathBuf>,
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Report changes made by functions outside the selection.
        #[arg(long)]
        warn_unexplained: bool,
    },
    /// Show the raw events a state stands for.
    Zoom {
        model: PathBuf,
        #[arg(long)]
        state: String,
        /// Raw traces the model was built from.
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(short)]
        output: Option<PathBuf>,
    },
    /// Mine a plain automaton with one of the automatic strategies.
    Mine {
        #[arg(long)]
        strategy: String,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long)]
        careful_det: bool,
        #[arg(long, value_parser = parse_duration)]
        timeout: Option<Duration>,
        #[arg(long, value_parser = parse_bytes)]
        memory: Option<u64>,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(short)]
        output: Option<PathBuf>,
    },
    /// Mine every configuration of a grid, each under its own budget.
    MineSweep {
        #[arg(long, num_args = 1.., value_delimiter = ' ', default_value = "strategies=ktails,redblue,gktail_lite k=0,1,2 careful_det=on,off")]
        grid: Vec<String>,
        #[arg(long, value_parser = parse_duration)]
        timeout: Option<Duration>,
        #[arg(long, value_parser = parse_bytes)]
        memory: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long = "trace", required = true)]
        traces: Vec<PathBuf>,
    },
    /// States examined, breadth first, until the faulty one.
    Exam {
        model: PathBuf,
        #[arg(long)]
        state: String,
    },
    /// Compare two models built under the same constraints.
    Diff {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Render a model as Graphviz DOT.
    Dot {
        model: PathBuf,
        /// Comma-separated state ids to fill.
        #[arg(long, value_delimiter = ',')]
        highlight: Vec<String>,
        #[arg(long)]
        no_valuations: bool,
        #[arg(short)]
        output: Option<PathBuf>,
    },
    /// Serve the HTTP API over a workspace directory.
    Serve {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

/// A failure with the code printed to stderr.
struct Failure {
    code: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: e.code().into(), message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl From<tracelens_server::ApiError> for Failure {
    fn from(e: tracelens_server::ApiError) -> Self {
        Failure { code: e.code, message: e.message }
    }
}

type Res<T = ()> = Result<T, Failure>;

fn parse_scenario(s: &str) -> Result<ScenarioName, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// `20m`, `2s`, `500ms`, or a bare number of seconds.
fn parse_duration(s: &str) -> Result<Duration, String> {
    if let Ok(secs) = s.parse::<u64>() {
        return Ok(Duration::from_secs(secs));
    }
    humantime::parse_duration(s).map_err(|e| format!("`{s}`: {e}"))
}

/// `64MiB`, `512KB`, `2g`, or a bare byte count.
fn parse_bytes(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let split = t.find(|c: char| !c.is_ascii_digit() && c != '.').unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let num: f64 = num.parse().map_err(|_| format!("`{s}` is not a size"))?;
    let scale: u64 = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" => 1_000,
        "ki" | "kib" => 1 << 10,
        "m" | "mb" => 1_000_000,
        "mi" | "mib" => 1 << 20,
        "g" | "gb" => 1_000_000_000,
        "gi" | "gib" => 1 << 30,
        other => return Err(format!("`{s}`: unknown unit `{other}`")),
    };
    Ok((num * scale as f64) as u64)
}

fn read(path: &Path) -> Res<String> {
    std::fs::read_to_string(path).map_err(|e| Failure {
        code: "IO".into(),
        message: format!("cannot read {}: {e}", path.display()),
    })
}

fn emit(output: Option<&Path>, text: &str) -> Res {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure {
            code: "IO".into(),
            message: format!("cannot write {}: {e}", p.display()),
        }),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Res<MonitorConfig> {
    Ok(parse_config(&read(path)?)?)
}

fn state_id(s: &str) -> Res<StateId> {
    s.parse().map_err(|_| Error::UnknownState(s.to_string()).into())
}

fn is_raw(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "trc")
}

fn load_label_traces(paths: &[PathBuf]) -> Res<Vec<LabelTrace>> {
    paths
        .iter()
        .map(|p| Ok(LabelTrace::from_filtered(&parse_filtered(&read(p)?)?)))
        .collect()
}

fn abstract_files(config: &MonitorConfig, traces: &[PathBuf]) -> Res<Efsm> {
    let mut model = Efsm::new(model_meta(config));
    for path in traces {
        if is_raw(path) {
            let reader = EventReader::new(BufReader::new(File::open(path)?));
            abstract_stream(&mut model, &trace_id_for(path), reader, config)?;
        } else {
            abstract_into(&mut model, &parse_filtered(&read(path)?)?, config)?;
        }
    }
    Ok(model)
}

fn run(cli: Cli) -> Res {
    match cli.command {
        Command::ExtractSymbols { paths, output } => {
            let report = scan_sources(&paths)?;
            for s in &report.skipped {
                eprintln!("skipped {}:{}: {}", s.file, s.line, s.reason);
            }
            emit(output.as_deref(), &manifest_to_string(&report.symbols))
        }
        Command::Demo { scenario, params, output, symbols } => {
            let mut s = FlightScenario::new(scenario);
            for p in &params {
                let (k, v) = p.split_once('=').ok_or_else(|| Failure {
                    code: "SCENARIO".into(),
                    message: format!("parameter `{p}` is not key=value"),
                })?;
                s.params.set(k, v)?;
            }
            let mut trace = run_scenario(&s)?;
            if let Some(out) = &output {
                trace.id = trace_id_for(out);
            }
            if let Some(path) = symbols {
                save_manifest(&symbol_manifest(), &path)?;
            }
            emit(output.as_deref(), &trace_to_string(&trace))
        }
        Command::Filter { config, input, output } => {
            let config = load_config(&config)?;
            let ft = filter_trace(&load_trace(&input)?, &config)?;
            emit(output.as_deref(), &filtered_to_string(&ft))
        }
        Command::Abstract { config, traces, output, dot, warn_unexplained } => {
            let config = load_config(&config)?;
            let model = abstract_files(&config, &traces)?;
            if warn_unexplained {
                for w in &model.warnings {
                    eprintln!(
                        "warning: {} changed {} in trace {} ({} times) but is not selected",
                        w.function, w.field, w.trace, w.count
                    );
                }
            }
            if let Some(path) = dot {
                let opts = DotOptions { show_valuations: true, highlight: Default::default() };
                emit(Some(&path), &export_dot(&model, &opts))?;
            }
            emit(output.as_deref(), &serialize_efsm(&model))
        }
        Command::Zoom { model, state, traces, output } => {
            let model = parse_efsm(&read(&model)?)?;
            let raw = traces.iter().map(|p| load_trace(p)).collect::<Result<Vec<_>, _>>()?;
            let view = zoom(&model, state_id(&state)?, &raw)?;
            emit(output.as_deref(), &to_json_text(&view))
        }
        Command::Mine { strategy, k, careful_det, timeout, memory, traces, output } => {
            let mut params = MinerParams::new(&strategy, k, careful_det);
            params.timeout_ms = timeout.map(|t| t.as_millis() as u64);
            params.memory_budget = memory;
            let fsm = mine(&load_label_traces(&traces)?, &params)?;
            emit(output.as_deref(), &serialize_fsm(&fsm))
        }
        Command::MineSweep { grid, timeout, memory, format, traces } => {
            let grid: SweepGrid = grid.join(" ").parse()?;
            let rows = sweep(&load_label_traces(&traces)?, &grid, timeout, memory)?;
            match format {
                Format::Text => emit(None, &sweep_table(&rows)),
                Format::Json => emit(None, &to_json_text(&rows)),
            }
        }
        Command::Exam { model, state } => {
            let model = parse_model(&read(&model)?)?;
            emit(None, &to_json_text(&exam_report(&model, state_id(&state)?)?))
        }
        Command::Diff { a, b, format } => {
            let d = diff_models(&parse_efsm(&read(&a)?)?, &parse_efsm(&read(&b)?)?)?;
            match format {
                Format::Text => emit(None, &d.to_text()),
                Format::Json => emit(None, &d.to_json()),
            }
        }
        Command::Dot { model, highlight, no_valuations, output } => {
            let model = parse_model(&read(&model)?)?;
            let highlight: BTreeSet<StateId> = highlight.iter().map(|s| state_id(s)).collect::<Res<_>>()?;
            let opts = DotOptions { show_valuations: !no_valuations, highlight };
            emit(output.as_deref(), &export_dot(&model, &opts))
        }
        Command::Serve { workspace, port, host } => {
            let addr = SocketAddr::new(host, port);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tracelens_server::bind(addr).await?;
                eprintln!("serving {} on http://{addr}", workspace.display());
                tracelens_server::serve_on(listener, workspace).await
            })?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.code, f.message);
            ExitCode::FAILURE
        }
    }
}
