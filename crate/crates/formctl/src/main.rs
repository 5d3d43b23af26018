//! `formctl synth|validate|run <scenario>...`
//!
//! Exit codes: 0 success, 1 validation or acceptance failure,
//! 2 divergence, 3 I/O. With several scenarios the largest code wins.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand};
use formctl_core::export::{artifact_path, export, ExportError, ExportOptions};
use formctl_core::scenario::{evaluate_acceptance, format_items, gains_to_overrides, ScenarioError, ScenarioFile};
use formctl_core::sim::{integrate, SimError, SimResult};
use formctl_core::synthesis::verify_gainset;

const OK: u8 = 0;
const INVALID: u8 = 1;
const DIVERGED: u8 = 2;
const IO: u8 = 3;

#[derive(Parser)]
#[command(name = "formctl", version, about = "Adaptive time-varying formation control: synthesis and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize gains and write `<name>.gains.json` with a certificate table.
    Synth {
        scenarios: Vec<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Check graph hypotheses, the formation generator and gain certificates.
    Validate {
        scenarios: Vec<PathBuf>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Integrate and export CSV, JSON summary and SVG plots.
    Run(RunArgs),
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output directory; defaults to `$FORMCTL_OUT_DIR` joined with the scenario's `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-final")]
    t_final: Option<f64>,
    /// Use the saturated unit-vector map.
    #[arg(long = "smooth-z")]
    smooth_z: bool,
    /// Linear-zone radius of the smooth map.
    #[arg(long)]
    delta: Option<f64>,
    /// Snapshot times, comma separated.
    #[arg(long, value_delimiter = ',')]
    snapshots: Option<Vec<f64>>,
    /// Run even when validation reports failures.
    #[arg(long)]
    force: bool,
    /// Scenarios integrated in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn output_dir(out: &OutArgs, file: &ScenarioFile) -> PathBuf {
    if let Some(p) = &out.out {
        return p.clone();
    }
    let root = std::env::var_os("FORMCTL_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    match &file.output.dir {
        Some(d) => root.join(d),
        None => root,
    }
}

fn load(path: &Path, log: &mut String) -> Result<ScenarioFile, u8> {
    ScenarioFile::load(path).map_err(|e| {
        log.push_str(&format!("error: {}: {e}\n", path.display()));
        scenario_code(&e)
    })
}

fn scenario_code(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::Io { .. } => IO,
        _ => INVALID,
    }
}

fn write(path: &Path, text: &str, log: &mut String) -> Result<(), u8> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| {
            log.push_str(&format!("error: cannot create {}: {e}\n", dir.display()));
            IO
        })?;
    }
    std::fs::write(path, text).map_err(|e| {
        log.push_str(&format!("error: cannot write {}: {e}\n", path.display()));
        IO
    })
}

fn synth(path: &Path, out: &OutArgs, log: &mut String) -> u8 {
    let file = match load(path, log) {
        Ok(f) => f,
        Err(code) => return code,
    };
    let built = file.model().and_then(|m| file.gains(&m).map(|g| (m, g)));
    let (model, gains) = match built {
        Ok(x) => x,
        Err(e) => {
            log.push_str(&format!("error: {}: {e}\n", file.name));
            return scenario_code(&e);
        }
    };
    let report = verify_gainset(&model, &gains, file.regime.kind, Some(file.leader_input.certified_bound()));
    let table = report.to_table();
    log.push_str(&format!("{}: {}\n{table}", file.name, file.regime.kind));
    let dir = output_dir(out, &file);
    let json = serde_json::to_string_pretty(&gains_to_overrides(&gains)).expect("gains serialize") + "\n";
    let gains_path = artifact_path(&dir, &file.name, "gains", "json");
    let cert_path = artifact_path(&dir, &file.name, "certificates", "txt");
    if let Err(code) = write(&gains_path, &json, log).and_then(|_| write(&cert_path, &table, log)) {
        return code;
    }
    log.push_str(&format!("wrote {}\n", gains_path.display()));
    if report.passed() {
        OK
    } else {
        log.push_str("error: certificates failed\n");
        INVALID
    }
}

fn validate(path: &Path, json: bool, log: &mut String) -> u8 {
    let file = match load(path, log) {
        Ok(f) => f,
        Err(code) => return code,
    };
    let report = file.validate();
    if json {
        log.push_str(&(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"));
    } else {
        log.push_str(&format!("{}\n{}", file.name, report.to_table()));
    }
    if report.passed() {
        OK
    } else {
        INVALID
    }
}

fn run(path: &Path, args: &RunArgs, log: &mut String) -> u8 {
    let mut file = match load(path, log) {
        Ok(f) => f,
        Err(code) => return code,
    };
    if let Some(seed) = args.seed {
        file.sim.seed = seed;
    }
    if let Some(dt) = args.dt {
        file.sim.dt = dt;
    }
    if let Some(t) = args.t_final {
        file.sim.t_final = t;
    }
    if args.smooth_z {
        file.regime.options.smooth_z = true;
    }
    if let Some(d) = args.delta {
        file.regime.options.delta = d;
    }
    let report = file.validate();
    if !report.passed() {
        let failures: Vec<_> = report.failures().cloned().collect();
        log.push_str(&format!("{}: validation failed\n{}", file.name, format_items(&failures)));
        if !args.force {
            return INVALID;
        }
    }
    let scenario = match file.build() {
        Ok(s) => s,
        Err(e) => {
            log.push_str(&format!("error: {}: {e}\n", file.name));
            return scenario_code(&e);
        }
    };
    let (result, mut code) = match integrate(&scenario) {
        Ok(r) => (r, OK),
        Err(SimError::Diverged { t, result }) => {
            log.push_str(&format!("error: {}: diverged at t = {t}\n", file.name));
            (*result, DIVERGED)
        }
        Err(e) => {
            log.push_str(&format!("error: {}: {e}\n", file.name));
            return INVALID;
        }
    };
    let opts = ExportOptions {
        csv: file.output.csv,
        json: file.output.json,
        plots: file.output.plots,
        snapshots: args.snapshots.clone().unwrap_or_else(|| file.output.snapshots.clone()),
    };
    let dir = output_dir(&args.out, &file);
    match export(&result, &opts, &dir) {
        Ok(paths) => {
            for p in paths {
                log.push_str(&format!("wrote {}\n", p.display()));
            }
        }
        Err(e) => {
            log.push_str(&format!("error: {}: {e}\n", file.name));
            return match e {
                ExportError::Io { .. } | ExportError::Csv(_) => IO,
                ExportError::Json(_) => INVALID,
            };
        }
    }
    log.push_str(&summary_lines(&result));
    if let Some(acc) = &file.output.acceptance {
        let items = evaluate_acceptance(acc, &result.summary);
        log.push_str(&format_items(&items));
        if code == OK && items.iter().any(|i| !i.passed) {
            code = INVALID;
        }
    }
    code
}

fn summary_lines(r: &SimResult) -> String {
    let s = &r.summary;
    let mut out = format!(
        "{}: {} steps in {:.2} s, final max error {:.3e}, tail max error {:.3e}\n",
        s.name, s.steps, s.wall_clock, s.final_max_error, s.tail_max_error
    );
    for w in s.windows.iter().filter(|w| !w.empty) {
        out.push_str(&format!(
            "  window [{}, {}): initial {:.3e}, tail max {:.3e}\n",
            w.start,
            w.end,
            w.initial_error.unwrap_or(f64::NAN),
            w.tail_max_error.unwrap_or(f64::NAN)
        ));
    }
    out.push_str(&format!(
        "  weight decreases {}, final Δc {:.3e}\n",
        s.c_decrease_violations, s.delta_c_final
    ));
    out
}

/// Runs `job` over `paths` on up to `jobs` threads; logs print in input order.
fn batch<F>(paths: &[PathBuf], jobs: usize, job: F) -> u8
where
    F: Fn(&Path, &mut String) -> u8 + Sync,
{
    let next = AtomicUsize::new(0);
    let mut slots: Vec<(u8, String)> = vec![(OK, String::new()); paths.len()];
    let workers = jobs.clamp(1, paths.len().max(1));
    let done: Vec<Vec<(usize, u8, String)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let k = next.fetch_add(1, Ordering::Relaxed);
                        let Some(p) = paths.get(k) else { break };
                        let mut log = String::new();
                        let code = job(p, &mut log);
                        out.push((k, code, log));
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    for (k, code, log) in done.into_iter().flatten() {
        slots[k] = (code, log);
    }
    let mut worst = OK;
    for (code, log) in slots {
        if code == OK {
            print!("{log}");
        } else {
            eprint!("{log}");
        }
        worst = worst.max(code);
    }
    worst
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Synth { scenarios, out } => batch(scenarios, 1, |p, log| synth(p, out, log)),
        Command::Validate { scenarios, json } => batch(scenarios, 1, |p, log| validate(p, *json, log)),
        Command::Run(args) => batch(&args.scenarios, args.jobs, |p, log| run(p, args, log)),
    };
    ExitCode::from(code)
}
