use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use mcsim::engine::{run_pipelined, run_sequential, EngineError, FinalState};
use mcsim::isa::{parse_located, validate, Reg, ValidatedProgram};
use mcsim::machine::{ImageError, MachineConfig, MachineState, MemoryImage};
use mcsim::registry::Registry;
use mcsim::timing::{emit_trace, simulate, utilization, CostModel};

mod demo;

#[derive(Parser)]
#[command(name = "mcsim", version, about = "Codelet-model emulator and timing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a program.
    Check {
        /// Assembly source file.
        source: PathBuf,
        /// Machine configuration JSON; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Codelet signatures (JSON: name -> kind + slots). Defaults to the demo set.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Execute a program and print its final state.
    Run {
        /// Assembly source file.
        source: PathBuf,
        /// Machine configuration JSON; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        image: ImageArgs,
        #[arg(long, value_enum, default_value_t = Mode::Pipelined)]
        mode: Mode,
        /// Write final main memory here.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Report a register's low 64 bits. Repeatable.
        #[arg(long = "print-reg", value_name = "REG")]
        print_reg: Vec<String>,
    },
    /// Timed run: makespan, utilization and an optional trace file.
    Sim {
        /// Assembly source file.
        source: PathBuf,
        /// Machine configuration JSON; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cost model JSON.
        #[arg(long)]
        costs: Option<PathBuf>,
        /// Chrome trace output; a `.summary.json` sidecar is written next to it.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        image: ImageArgs,
        /// Report a register's low 64 bits. Repeatable.
        #[arg(long = "print-reg", value_name = "REG")]
        print_reg: Vec<String>,
    },
    /// Sparse GEMM variants checked against a dense product.
    DemoSpgemm {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        size: usize,
        #[arg(long, default_value_t = 0.25)]
        density: f64,
        /// T1..T5 or `all`.
        #[arg(long, default_value = "all")]
        variant: String,
        /// Cost model JSON.
        #[arg(long)]
        costs: Option<PathBuf>,
        /// Trace file prefix; one `<prefix>.<variant>.json` per variant.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct ImageArgs {
    /// Raw little-endian memory image.
    #[arg(long = "mem-image")]
    mem_image: Option<PathBuf>,
    /// Symbol table for the image. Defaults to `<mem-image>.json`.
    #[arg(long = "mem-descriptor", requires = "mem_image")]
    mem_descriptor: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sequential,
    Pipelined,
}

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
    Deadlock(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Deadlock(_) => 4,
            Failure::Io(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) | Failure::Deadlock(m) | Failure::Io(m) => m,
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        if e.is_runtime() {
            Failure::Runtime(e.to_string())
        } else {
            Failure::Deadlock(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<MachineConfig, Failure> {
    match path {
        None => Ok(MachineConfig::default()),
        Some(p) => MachineConfig::from_json(&read_text(p)?).map_err(|e| Failure::Validation(format!("{}: {e}", p.display()))),
    }
}

fn load_costs(path: Option<&Path>) -> Result<CostModel, Failure> {
    match path {
        None => Ok(CostModel::default()),
        Some(p) => CostModel::from_json(&read_text(p)?).map_err(|e| Failure::Validation(format!("{}: {e}", p.display()))),
    }
}

/// Parses and validates `source`, locating errors as `path:line:col`.
fn load_program(source: &Path, registry: &Registry, cfg: &MachineConfig) -> Result<ValidatedProgram, Failure> {
    let text = read_text(source)?;
    let shown = source.display();
    let (program, at) =
        parse_located(&text).map_err(|e| Failure::Validation(format!("{shown}:{}:{}: {}", e.line, e.column, e.kind)))?;
    validate(&program, registry, cfg).map_err(|e| {
        let (line, col) = at[e.index];
        let instr = &program.instructions()[e.index];
        Failure::Validation(format!("{shown}:{line}:{col}: {} (in `{instr}`)", e.kind))
    })
}

fn initial_state(cfg: MachineConfig, image: &ImageArgs) -> Result<MachineState, Failure> {
    let mut state = MachineState::new(cfg);
    if let Some(blob) = &image.mem_image {
        let desc = image.mem_descriptor.clone().unwrap_or_else(|| {
            let mut p = blob.clone().into_os_string();
            p.push(".json");
            p.into()
        });
        let img = MemoryImage::read(blob, &desc).map_err(image_failure)?;
        img.install(&mut state.memory).map_err(image_failure)?;
    }
    Ok(state)
}

fn image_failure(e: ImageError) -> Failure {
    match e {
        ImageError::Io { .. } => Failure::Io(e.to_string()),
        _ => Failure::Validation(e.to_string()),
    }
}

fn registers_json(fin: &FinalState, names: &[String]) -> Result<Value, Failure> {
    let mut out = Map::new();
    for name in names {
        let reg: Reg = name.parse().map_err(|e| Failure::Validation(format!("--print-reg: {e}")))?;
        let v = fin.registers.read_u64(reg).map_err(|e| Failure::Validation(format!("--print-reg: {e}")))?;
        out.insert(name.clone(), json!(v));
    }
    Ok(Value::Object(out))
}

fn emit(v: &Value) {
    println!("{v}");
}

fn cmd_check(source: &Path, config: Option<&Path>, manifest: Option<&Path>) -> CmdResult {
    let cfg = load_config(config)?;
    let registry = match manifest {
        None => demo::registry(),
        Some(p) => Registry::from_manifest(&read_text(p)?).map_err(|e| Failure::Validation(format!("{}: {e}", p.display())))?,
    };
    let program = load_program(source, &registry, &cfg)?;
    emit(&json!({"status": "ok", "instructions": program.len()}));
    eprintln!("{}: {} instructions", source.display(), program.len());
    Ok(())
}

fn cmd_run(
    source: &Path,
    config: Option<&Path>,
    image: &ImageArgs,
    mode: Mode,
    dump: Option<&Path>,
    print_reg: &[String],
) -> CmdResult {
    let cfg = load_config(config)?;
    let program = load_program(source, &demo::registry(), &cfg)?;
    let state = initial_state(cfg, image)?;
    let fin = match mode {
        Mode::Sequential => run_sequential(&program, state)?,
        Mode::Pipelined => run_pipelined(&program, state)?.0,
    };
    if let Some(path) = dump {
        fs::write(path, fin.memory.bytes()).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    }
    emit(&json!({
        "termination": fin.termination,
        "committed": fin.committed,
        "registers": registers_json(&fin, print_reg)?,
    }));
    Ok(())
}

fn cmd_sim(
    source: &Path,
    config: Option<&Path>,
    costs: Option<&Path>,
    trace: Option<&Path>,
    image: &ImageArgs,
    print_reg: &[String],
) -> CmdResult {
    let cfg = load_config(config)?;
    let costs = load_costs(costs)?;
    let program = load_program(source, &demo::registry(), &cfg)?;
    let state = initial_state(cfg.clone(), image)?;
    let sim = simulate(&program, state, &costs)?;
    if let Some(path) = trace {
        emit_trace(&sim.trace, &cfg, sim.makespan, path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    }
    let summary = utilization(&sim.trace, &cfg, sim.makespan);
    emit(&json!({
        "termination": sim.final_state.termination,
        "committed": sim.final_state.committed,
        "makespan": sim.makespan,
        "utilization": demo::utilization_map(&summary),
        "registers": registers_json(&sim.final_state, print_reg)?,
    }));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check { source, config, manifest } => cmd_check(source, config.as_deref(), manifest.as_deref()),
        Command::Run { source, config, image, mode, dump, print_reg } => {
            cmd_run(source, config.as_deref(), image, *mode, dump.as_deref(), print_reg)
        }
        Command::Sim { source, config, costs, trace, image, print_reg } => {
            cmd_sim(source, config.as_deref(), costs.as_deref(), trace.as_deref(), image, print_reg)
        }
        Command::DemoSpgemm { seed, size, density, variant, costs, trace } => {
            load_costs(costs.as_deref()).and_then(|c| demo::spgemm(*seed, *size, *density, variant, &c, trace.as_deref()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
