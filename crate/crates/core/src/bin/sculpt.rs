use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use sculpting::bigraph::SculptingBigraph;
use sculpting::entanglement::{classify_with_threshold, LogicalState};
use sculpting::format::fmt_sig;
use sculpting::optics::run_bell_circuit;
use sculpting::schemes::{run_scheme, scheme_by_name, SCHEME_NAMES};
use sculpting::search::{search, verify_candidate, Encoding, SearchOptions, SearchStatus, TargetSpec};
use sculpting::selftest::{selftest, SelftestOptions};
use sculpting::Error;

// Writes that fail (a closed pipe) are dropped instead of panicking.
macro_rules! println {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! print {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "sculpt", version, about = "Boson-subtraction entanglement sculpting toolkit")]
struct Cli {
    /// Emit exactly one JSON document on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Numerical tolerance override.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Built-in generation schemes.
    #[command(subcommand)]
    Schemes(SchemesCmd),
    /// Bigraph queries on a graph JSON file.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Logical-state analysis.
    #[command(subcommand)]
    State(StateCmd),
    /// Linear-optics simulations.
    #[command(subcommand)]
    Optics(OpticsCmd),
    /// Search for a sculpting bigraph that generates a target state.
    Search(SearchArgs),
    /// Run every built-in check.
    Selftest {
        /// Reweight one GHZ dot so that its check fails.
        #[arg(long)]
        perturb_ghz: bool,
    },
}

#[derive(Args, Clone)]
struct SchemeArgs {
    /// Scheme name, see `schemes list`
    name: String,
    /// Number of parties
    #[arg(long = "N")]
    n: Option<usize>,
    /// Local dimension (qudit-ghz only)
    #[arg(long = "d")]
    d: Option<usize>,
    /// W weights; both default to the success-optimal pair
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Subcommand)]
enum SchemesCmd {
    List,
    Run(SchemeArgs),
    /// Print a scheme's bigraph as JSON.
    Graph(SchemeArgs),
}

#[derive(Subcommand)]
enum GraphCmd {
    CheckEpm { file: PathBuf },
    Pm { file: PathBuf },
    ToOp { file: PathBuf },
    Dot {
        file: PathBuf,
        #[arg(long)]
        directed: bool,
    },
}

#[derive(Subcommand)]
enum StateCmd {
    Classify { file: PathBuf },
    Fidelity { a: PathBuf, b: PathBuf },
}

#[derive(Subcommand)]
enum OpticsCmd {
    Bell,
}

#[derive(Args)]
struct SearchArgs {
    /// Target file: a logical state or a full target spec.
    #[arg(long)]
    target: PathBuf,
    /// Ancilla count for the first round (default: from the target file, else 0)
    #[arg(long)]
    ancillas: Option<usize>,
    #[arg(long, default_value_t = 64)]
    starts: usize,
    /// Wall-clock budget in seconds.
    #[arg(long, default_value_t = 30.0)]
    time_limit: f64,
    /// Encode logical 0/1 with DOTTED/BLACK edges instead of RED/BLUE
    #[arg(long)]
    computational: bool,
    /// Try RED/BLUE swaps per dot when the first candidate fails.
    #[arg(long)]
    color_search: bool,
}

enum Failure {
    Usage(String),
    Domain(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            Error::NoBunching(ref v) => {
                let mut msg = e.to_string();
                for (cfg, amp) in v.iter().take(10) {
                    msg.push_str(&format!("\n  {cfg}: {}", sculpting::format::fmt_complex(*amp)));
                }
                Failure::Domain(msg)
            }
            other => Failure::Domain(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(format!("malformed input: {e}"))
    }
}

type CliResult = Result<ExitCode, Failure>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn emit<T: Serialize>(value: &T) -> Result<(), Failure> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    if let Some(t) = cli.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::Usage(format!("--tol must be positive, got {t}")));
        }
    }
    match cli.command {
        Command::Schemes(cmd) => schemes(cmd, cli.json),
        Command::Graph(cmd) => graph(cmd, cli.json),
        Command::State(cmd) => state(cmd, cli.json, cli.tol),
        Command::Optics(OpticsCmd::Bell) => optics_bell(cli.json),
        Command::Search(args) => run_search(args, cli.json, cli.seed),
        Command::Selftest { perturb_ghz } => {
            let opts = SelftestOptions { seed: cli.seed, tol: cli.tol.unwrap_or(1e-9), perturb_ghz };
            let report = selftest(&opts);
            if cli.json {
                emit(&report)?;
            } else {
                for item in &report.items {
                    println!("{} {:<20} [{}] {}", if item.passed { "PASS" } else { "FAIL" }, item.id, item.criterion, item.detail);
                }
                let failed = report.failures().count();
                println!("{} checks, {} failed", report.items.len(), failed);
            }
            Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn schemes(cmd: SchemesCmd, as_json: bool) -> CliResult {
    match cmd {
        SchemesCmd::List => {
            if as_json {
                emit(&SCHEME_NAMES)?;
            } else {
                for n in SCHEME_NAMES {
                    println!("{n}");
                }
            }
        }
        SchemesCmd::Run(a) => {
            let desc = scheme_by_name(&a.name, a.n, a.d, a.alpha, a.beta)?;
            let r = run_scheme(&desc)?;
            if as_json {
                emit(&r)?;
            } else {
                println!("scheme      {} (N={}, d={})", r.name, r.params.n, r.params.d);
                println!("success     {}", fmt_sig(r.success, 6));
                println!("expected    {}", fmt_sig(r.expected_success, 6));
                println!("fidelity    {}", fmt_sig(r.fidelity, 6));
                println!("class       {}", r.classification.kind);
                println!("state       {}", r.logical_state);
            }
        }
        SchemesCmd::Graph(a) => {
            let desc = scheme_by_name(&a.name, a.n, a.d, a.alpha, a.beta)?;
            match desc.graph {
                Some(g) => emit(&g)?,
                None => return Err(Failure::Domain(format!("scheme '{}' has no bigraph form", a.name))),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn graph(cmd: GraphCmd, as_json: bool) -> CliResult {
    match cmd {
        GraphCmd::CheckEpm { file } => {
            let g: SculptingBigraph = read_json(&file)?;
            let report = g.is_epm()?;
            let pm_count = g.enumerate_perfect_matchings().len();
            if as_json {
                if report.epm {
                    emit(&json!({"epm": true, "pm_count": pm_count}))?;
                } else {
                    emit(&json!({"epm": false, "pm_count": pm_count, "offending": report.offending}))?;
                }
            } else {
                println!("EPM: {} ({pm_count} perfect matchings)", if report.epm { "yes" } else { "no" });
                for o in &report.offending {
                    println!("  circle {}: {}", o.circle, o.reason);
                }
            }
        }
        GraphCmd::Pm { file } => {
            let g: SculptingBigraph = read_json(&file)?;
            let pms = g.enumerate_perfect_matchings();
            if as_json {
                let items: Vec<_> = pms
                    .iter()
                    .map(|pm| {
                        let w = g.pm_weight(pm);
                        json!({"edges": pm.edges, "re": w.re, "im": w.im})
                    })
                    .collect();
                emit(&items)?;
            } else {
                println!("{} perfect matchings", pms.len());
                for pm in &pms {
                    let edges: Vec<String> = pm
                        .edges
                        .iter()
                        .map(|&(d, e)| {
                            let edge = &g.dots()[d].edges[e];
                            format!("dot{d}->c{}:{:?}", edge.circle, edge.color)
                        })
                        .collect();
                    println!("  {}  weight {}", edges.join(" "), sculpting::format::fmt_complex(g.pm_weight(pm)));
                }
            }
        }
        GraphCmd::ToOp { file } => {
            let g: SculptingBigraph = read_json(&file)?;
            let op = g.to_sculpting_operator()?;
            if as_json {
                emit(&op)?;
            } else {
                println!("{}", serde_json::to_string_pretty(&op)?);
            }
        }
        GraphCmd::Dot { file, directed } => {
            let g: SculptingBigraph = read_json(&file)?;
            let dot = g.export_dot(directed);
            if as_json {
                emit(&json!({ "dot": dot }))?;
            } else {
                print!("{dot}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn state(cmd: StateCmd, as_json: bool, tol: Option<f64>) -> CliResult {
    match cmd {
        StateCmd::Classify { file } => {
            let s: LogicalState = read_json(&file)?;
            let c = classify_with_threshold(&s, tol.unwrap_or(1e-8))?;
            if as_json {
                emit(&c)?;
            } else {
                println!("{}", c.kind);
                for r in &c.ranks {
                    println!("  {}  rank {}", r.cut, r.rank);
                }
            }
        }
        StateCmd::Fidelity { a, b } => {
            let sa: LogicalState = read_json(&a)?;
            let sb: LogicalState = read_json(&b)?;
            let f = sa.fidelity_up_to_phase(&sb)?;
            if as_json {
                emit(&json!({ "fidelity": f }))?;
            } else {
                println!("{}", fmt_sig(f, 6));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn optics_bell(as_json: bool) -> CliResult {
    let r = run_bell_circuit()?;
    if as_json {
        emit(&r)?;
    } else {
        for (label, st) in &r.steps {
            println!("{label}: {}", st.describe());
        }
        for b in &r.branches {
            let clicks: Vec<String> = b
                .pattern
                .iter()
                .filter(|(_, d)| d.count > 0)
                .map(|(p, d)| format!("{p}:{:?}", d.pol.expect("clicking detector has a polarization")))
                .collect();
            println!(
                "herald {}  p={}  state (|HH> {} |VV>)/sqrt2  fidelity {}",
                clicks.join(" "),
                fmt_sig(b.probability, 6),
                if b.bell_sign > 0 { "+" } else { "-" },
                fmt_sig(b.fidelity, 6)
            );
        }
        println!("total accepted probability {}", fmt_sig(r.total_probability, 6));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_search(a: SearchArgs, as_json: bool, seed: u64) -> CliResult {
    let text = std::fs::read_to_string(&a.target).map_err(|e| Failure::Usage(format!("{}: {e}", a.target.display())))?;
    let mut spec: TargetSpec = match serde_json::from_str::<TargetSpec>(&text) {
        Ok(s) => s,
        Err(_) => TargetSpec::new(serde_json::from_str::<LogicalState>(&text)?, 0),
    };
    if let Some(k) = a.ancillas {
        spec.ancillas = k;
    }
    if a.computational {
        spec.encoding = Encoding::Computational;
    }
    if !(a.time_limit > 0.0 && a.time_limit.is_finite()) {
        return Err(Failure::Usage("--time-limit must be positive".into()));
    }
    let opts = SearchOptions {
        starts: a.starts,
        seed,
        time_limit: Duration::from_secs_f64(a.time_limit),
        color_search: a.color_search,
        ..SearchOptions::default()
    };
    let r = search(&spec, &opts)?;
    if as_json {
        emit(&r)?;
    } else {
        println!("status      {:?}", r.status);
        println!("residual    {}", fmt_sig(r.residual, 6));
        println!("fidelity    {}", fmt_sig(r.fidelity, 6));
        println!("success     {}", fmt_sig(r.success, 6));
        println!("starts      {}", r.starts_run);
        if let Some(g) = &r.graph {
            if let Ok(v) = verify_candidate(g, &spec) {
                if let Some(c) = v.classification {
                    println!("class       {}", c.kind);
                }
            }
            println!("graph       {}", serde_json::to_string(g)?);
        }
    }
    Ok(if r.status == SearchStatus::Solved { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
