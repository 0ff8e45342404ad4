use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use breakage::agent::reference::AgentKind;
use breakage::experience::{EmbedderKind, ExperienceStore, RetrievalConfig, DEFAULT_DIMENSION};
use breakage::experiments::{analyze, packaged, render_report, PackagedName};
use breakage::runner::manifest::load_manifest;
use breakage::runner::{default_manifest_path, run_seed, Arm, ExperimentOutput, ExperimentPlan, RunOptions, Runner};
use breakage::scenario::{parse_scenario, validate_scenario, Finding, Vocabulary};
use breakage::sim::ClusterState;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "breakage", version, about = "Fault-injection measurement harness for operations agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario once and print its record.
    Run(RunArgs),
    /// Run an experiment grid and write its manifest.
    Experiment(ExperimentArgs),
    /// Print comparison tables and the decision for a manifest.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// List the built-in scenarios.
    Scenarios,
    /// Check scenario files against the vocabulary and baseline topology.
    Validate { files: Vec<PathBuf> },
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario id, or a path to a scenario file.
    #[arg(long)]
    scenario: String,
    /// oracle, null, imitator or noisy-oracle:<p>
    #[arg(long, default_value = "oracle")]
    agent: AgentKind,
    /// `tei` retrieves with the external embedder, `control` with the deterministic one.
    #[arg(long, default_value = "control")]
    arm: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Store file to retrieve from and append the postmortem to.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Write the transcript here as JSON lines.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Plan file (YAML or JSON).
    #[arg(long, conflicts_with = "packaged", required_unless_present = "packaged")]
    plan: Option<PathBuf>,
    #[arg(long)]
    packaged: Option<PackagedName>,
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to <tmp>/<experiment>-manifest.csv.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Discard an existing manifest instead of resuming it.
    #[arg(long)]
    fresh: bool,
    /// Write one transcript per run next to the manifest.
    #[arg(long)]
    transcripts: bool,
}

fn arm_for(name: &str) -> Result<Arm, String> {
    let embedder = match name {
        "control" => EmbedderKind::Deterministic,
        _ if name.starts_with("tei") => EmbedderKind::External,
        _ => return Err(format!("unknown arm `{name}` (tei|control)")),
    };
    let retrieval = RetrievalConfig { embedder, ..RetrievalConfig::default() }
        .with_env(|k| std::env::var(k).ok().filter(|_| k != breakage::experience::ENV_EMBEDDER))?;
    Ok(Arm::new(name, retrieval))
}

fn run(args: RunArgs) -> Result<(), String> {
    let mut runner = Runner::default();
    let spec = match runner.scenario(&args.scenario) {
        Some(s) => s.clone(),
        None => {
            let text = fs::read_to_string(&args.scenario).map_err(|e| format!("{}: {e}", args.scenario))?;
            parse_scenario(&text, runner.vocabulary()).map_err(|e| e.to_string())?
        }
    };
    let arm = arm_for(&args.arm)?;
    let mut store = match &args.store {
        Some(p) => ExperienceStore::open(p, DEFAULT_DIMENSION).map_err(|e| e.to_string())?,
        None => ExperienceStore::in_memory(DEFAULT_DIMENSION),
    };
    let seed = run_seed(args.seed, &spec.id, &arm.name, 0);
    let out = runner.run_scenario(&spec, args.agent, &arm, 0, seed, &mut store, &RunOptions::default());
    if let (Some(path), Some(t)) = (&args.transcript, &out.transcript) {
        fs::write(path, t.to_jsonl()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&out.record).map_err(|e| e.to_string())?);
    if let Some(e) = out.framework_error {
        eprintln!("framework error: {e}");
    }
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<(), String> {
    let plan: ExperimentPlan = match (&args.plan, args.packaged) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let mut plan: ExperimentPlan = serde_yaml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            if let Some(r) = args.reps {
                plan.reps = r;
            }
            plan
        }
        (None, Some(name)) => packaged(name, args.reps.unwrap_or(name.default_reps()), args.seed).plan,
        (None, None) => return Err("either --plan or --packaged is required".into()),
    };
    let manifest = args.manifest.unwrap_or_else(|| default_manifest_path(&plan.name));
    if args.fresh && manifest.exists() {
        fs::remove_file(&manifest).map_err(|e| e.to_string())?;
    }
    let out = ExperimentOutput { manifest: Some(manifest.clone()), write_transcripts: args.transcripts, limit: None };
    let result = Runner::default().run_experiment(&plan, &out).map_err(|e| e.to_string())?;
    println!("{}", render_report(&plan.name, &analyze(&result.rows)));
    println!("manifest: {} ({} rows, {} new)", manifest.display(), result.rows.len(), result.new_rows);
    println!("substrate health: {} framework-error runs", result.framework_errors);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Experiment(args) => experiment(args),
        Command::Analyze { manifest } => load_manifest(&manifest)
            .map(|rows| print!("{}", render_report(&manifest.display().to_string(), &analyze(&rows))))
            .map_err(|e| e.to_string()),
        Command::Scenarios => {
            for (id, s) in Runner::default().scenarios() {
                println!("{id}\t{}", s.ground_truth.primary_category);
            }
            Ok(())
        }
        Command::Validate { files } => validate(&files),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn validate(files: &[PathBuf]) -> Result<(), String> {
    let vocab = Vocabulary::shipped();
    let topology = ClusterState::baseline();
    let mut failed = false;
    for f in files {
        let text = fs::read_to_string(f).map_err(|e| format!("{}: {e}", f.display()))?;
        match parse_scenario(&text, &vocab) {
            Err(e) => {
                failed = true;
                println!("{}: {e}", f.display());
            }
            Ok(spec) => {
                let findings = validate_scenario(&spec, &vocab, &topology);
                failed |= findings.iter().any(|x| !matches!(x, Finding::DeprecatedCategory(_)));
                if findings.is_empty() {
                    println!("{}: ok", f.display());
                }
                for x in findings {
                    println!("{}: {x}", f.display());
                }
            }
        }
    }
    if failed {
        Err("validation failed".into())
    } else {
        Ok(())
    }
}
