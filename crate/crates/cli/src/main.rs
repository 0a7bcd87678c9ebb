use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use vpatient_core::clock::SystemClock;
use vpatient_core::scenario::{jane_ryan, parse_scenario, validate_scenario, ScenarioError, ScenarioPack};
use vpatient_core::session::{
    annotations_path, collect_metrics, load_annotations, read_record, render_timeline, reproduce, save_annotations,
    MetricsReport, ReplayError, SessionConfig, SeverityAnnotation, UsabilitySeverity,
};
use vpatient_server::{ws, LlmConfig, ResponderChoice, ServerContext};

use vpatient_cli::invariants::check_record;
use vpatient_cli::metrics_path;
use vpatient_cli::script::SimScript;
use vpatient_cli::simulate::simulate;

#[derive(Parser)]
#[command(name = "vpatient", version, about = "Virtual patient interview sessions")]
struct Cli {
    /// Scenario pack (TOML). Defaults to the built-in Jane Ryan case.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Host sessions over WebSocket at /ws.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// Directory for session records.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Use scripted replies even if an endpoint is configured.
        #[arg(long)]
        scripted: bool,
    },
    /// Check a scenario pack and list every finding.
    Validate,
    /// Run a scripted interview headlessly.
    Simulate {
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Record path; metrics go to <out>.metrics.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show a recorded session, re-run it, and store annotations.
    Replay {
        record: PathBuf,
        /// TURN=SEVERITY[:note], severity 1-4. Repeatable.
        #[arg(long = "annotate", value_parser = parse_annotation)]
        annotate: Vec<SeverityAnnotation>,
        /// Skip re-running the session.
        #[arg(long)]
        no_rerun: bool,
    },
    /// Print the metrics of a recorded session as JSON.
    Metrics { record: PathBuf },
}

fn parse_annotation(s: &str) -> Result<SeverityAnnotation, String> {
    let (turn, rest) = s.split_once('=').ok_or("expected TURN=SEVERITY[:note]")?;
    let (sev, note) = rest.split_once(':').unwrap_or((rest, ""));
    let turn_id = turn.trim().parse::<u64>().map_err(|e| format!("turn {turn:?}: {e}"))?;
    let level = sev.trim().parse::<u8>().map_err(|e| format!("severity {sev:?}: {e}"))?;
    let severity = UsabilitySeverity::new(level).ok_or_else(|| format!("severity must be 1-4, got {level}"))?;
    Ok(SeverityAnnotation { turn_id, severity, note: note.trim().to_string() })
}

enum Failure {
    Invariant(String),
    Validation(String),
    Environment(String),
}

impl Failure {
    fn exit(self) -> ExitCode {
        let (code, msg) = match self {
            Failure::Invariant(m) => (1, m),
            Failure::Validation(m) => (2, m),
            Failure::Environment(m) => (3, m),
        };
        eprintln!("error: {msg}");
        ExitCode::from(code)
    }
}

fn scenario_failure(e: ScenarioError) -> Failure {
    match e {
        ScenarioError::Io(_) => Failure::Environment(e.to_string()),
        _ => Failure::Validation(e.to_string()),
    }
}

fn replay_failure(e: ReplayError) -> Failure {
    match e {
        ReplayError::Io { .. } => Failure::Environment(e.to_string()),
        ReplayError::NotReproducible(_) => Failure::Invariant(e.to_string()),
        _ => Failure::Validation(e.to_string()),
    }
}

fn load_pack(path: Option<&Path>) -> Result<ScenarioPack, Failure> {
    let Some(path) = path else { return Ok(jane_ryan()) };
    let source = std::fs::read_to_string(path)
        .map_err(|e| Failure::Environment(format!("cannot read {}: {e}", path.display())))?;
    let pack = parse_scenario(&source).map_err(scenario_failure)?;
    let report = validate_scenario(&pack);
    if report.has_errors() {
        return Err(Failure::Validation(format!("{} is invalid:\n{report}", path.display())));
    }
    for w in report.warnings() {
        tracing::warn!("{w}");
    }
    Ok(pack)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.exit(),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let scenario = cli.scenario.as_deref();
    match cli.command {
        Command::Validate => validate(scenario),
        Command::Serve { port, bind, data_dir, scripted } => serve(load_pack(scenario)?, bind, port, data_dir, scripted),
        Command::Simulate { script, seed, out } => run_simulation(load_pack(scenario)?, script, seed, out),
        Command::Replay { record, annotate, no_rerun } => replay(load_pack(scenario)?, &record, annotate, no_rerun),
        Command::Metrics { record } => {
            let loaded = read_record(&record).map_err(replay_failure)?;
            let notes = load_annotations(&annotations_path(&record)).map_err(|e| Failure::Validation(e.to_string()))?;
            print_json(&collect_metrics(&loaded.record, &notes));
            Ok(())
        }
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

fn validate(path: Option<&Path>) -> Result<(), Failure> {
    let pack = match path {
        None => jane_ryan(),
        Some(p) => {
            let source = std::fs::read_to_string(p)
                .map_err(|e| Failure::Environment(format!("cannot read {}: {e}", p.display())))?;
            parse_scenario(&source).map_err(scenario_failure)?
        }
    };
    let report = validate_scenario(&pack);
    print!("{report}");
    let errors = report.errors().count();
    let warnings = report.warnings().count();
    println!("{} scenes, {} clips: {errors} errors, {warnings} warnings", pack.scenes.len(), pack.clips.len());
    if errors > 0 {
        return Err(Failure::Validation("scenario has errors".into()));
    }
    Ok(())
}

fn serve(pack: ScenarioPack, bind: IpAddr, port: u16, data_dir: Option<PathBuf>, scripted: bool) -> Result<(), Failure> {
    let llm = LlmConfig::from_env().map_err(|e| Failure::Environment(e.to_string()))?;
    let responder = match llm {
        Some(cfg) if !scripted => {
            tracing::info!(endpoint = %cfg.endpoint, timeout_ms = cfg.timeout_ms, "using chat endpoint");
            ResponderChoice::Llm(cfg)
        }
        _ => ResponderChoice::Scripted,
    };
    if let Some(dir) = &data_dir {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Environment(format!("data dir {}: {e}", dir.display())))?;
    }
    let ctx = ServerContext {
        pack: Arc::new(pack),
        responder,
        data_dir,
        clock: Arc::new(SystemClock),
        session: SessionConfig::default(),
    };
    ws::run(SocketAddr::new(bind, port), ctx, |addr| println!("listening on ws://{addr}/ws"))
        .map_err(|e| Failure::Environment(format!("cannot serve on {bind}:{port}: {e}")))
}

fn run_simulation(pack: ScenarioPack, script: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let script = match &script {
        Some(p) => SimScript::load(p).map_err(|e| match e {
            vpatient_cli::script::ScriptError::Io { .. } => Failure::Environment(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        })?,
        None => SimScript::parse(vpatient_cli::script::SAMPLE_INTERVIEW).expect("sample script parses"),
    };
    let pack = Arc::new(pack);
    let sim = simulate(Arc::clone(&pack), &script, seed, out.as_deref()).map_err(|e| match e {
        vpatient_cli::simulate::SimError::Refused(m) => Failure::Validation(m),
        other => Failure::Environment(other.to_string()),
    })?;
    print!("{}", sim.transcript());
    if let Some(out) = &out {
        let text = serde_json::to_string_pretty(&sim.metrics).expect("metrics serialize");
        std::fs::write(metrics_path(out), text).map_err(|e| Failure::Environment(e.to_string()))?;
        eprintln!("record written to {}", out.display());
    }
    let violations = check_record(&sim.record, &pack);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Failure::Invariant(list.join("\n")));
    }
    Ok(())
}

fn replay(pack: ScenarioPack, path: &Path, annotate: Vec<SeverityAnnotation>, no_rerun: bool) -> Result<(), Failure> {
    let loaded = read_record(path).map_err(replay_failure)?;
    if loaded.truncated_tail || loaded.dropped_partial_turn {
        eprintln!("note: record ends mid-turn; the unfinished turn is ignored");
    }
    let record = loaded.record;

    let notes_path = annotations_path(path);
    let mut notes = load_annotations(&notes_path).map_err(|e| Failure::Validation(e.to_string()))?;
    if !annotate.is_empty() {
        for a in annotate {
            if !record.patient_entries().any(|e| e.turn_id == a.turn_id) {
                return Err(Failure::Validation(format!("no patient turn {} in this record", a.turn_id)));
            }
            notes.retain(|n| n.turn_id != a.turn_id);
            notes.push(a);
        }
        notes.sort_by_key(|n| n.turn_id);
        save_annotations(&notes_path, &notes).map_err(|e| Failure::Environment(e.to_string()))?;
    }
    print!("{}", render_timeline(&record, &notes));

    let mut problems: Vec<String> = check_record(&record, &pack).iter().map(ToString::to_string).collect();
    let recomputed = collect_metrics(&record, &notes);
    let stored_path = metrics_path(path);
    if let Ok(text) = std::fs::read_to_string(&stored_path) {
        match serde_json::from_str::<MetricsReport>(&text) {
            Ok(stored) if stored.same_measurements(&recomputed) => {}
            Ok(_) => problems.push(format!("metrics in {} differ from the record", stored_path.display())),
            Err(e) => problems.push(format!("unreadable {}: {e}", stored_path.display())),
        }
    }
    if !no_rerun && record.header.responder == "scripted" {
        let mismatches = reproduce(&record, Arc::new(pack)).map_err(replay_failure)?;
        for m in &mismatches {
            problems.push(format!("turn {} {}: recorded {:?}, replayed {:?}", m.turn_id, m.field, m.recorded, m.replayed));
        }
        if mismatches.is_empty() {
            println!("re-run matches the record ({} turns)", record.patient_turns());
        }
    }
    if !problems.is_empty() {
        return Err(Failure::Invariant(problems.join("\n")));
    }
    Ok(())
}
