//! `deepkey`: generate synthetic cohorts, train, authenticate, evaluate.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use deepkey::dataset::{read_recording, Dataset, GenSpec};
use deepkey::eval::{
    datasize_sweep, evaluate, parse_fractions, summary_text, sweep_csv, train_on_dataset, write_reports, SWEEP_REPORT,
};
use deepkey::{AuthRequest, Config, DeepKeyError, Modality, Result, System, Verdict};

const CONFIG_ENV: &str = "DEEPKEY_CONFIG";

#[derive(Parser)]
#[command(name = "deepkey", version, about = "EEG + gait two-factor authentication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort (recording CSVs plus manifest).
    Gen(GenArgs),
    /// Train the gate and both identifiers and write a bundle.
    Train(TrainArgs),
    /// Authenticate one EEG + gait pair. Exit 0 approve, 1 deny, 2 bad input.
    Auth(AuthArgs),
    /// Evaluate a bundle on a data directory and write CSV reports.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 7)]
    subjects: usize,
    #[arg(long, default_value_t = 3)]
    sessions: u32,
    #[arg(long, default_value_t = 60.0)]
    seconds: f64,
    /// Per-subject duration, e.g. `6=120`. Repeatable.
    #[arg(long = "subject-seconds", value_parser = parse_override)]
    subject_seconds: Vec<(u32, f64)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config; falls back to $DEEPKEY_CONFIG, then built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides both `eeg_iterations` and `gait_iterations`.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Enrolled subjects (comma separated); all subjects by default.
    #[arg(long, value_delimiter = ',')]
    subjects: Vec<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuthArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    eeg: PathBuf,
    #[arg(long)]
    gait: PathBuf,
    /// Claimed subject, recorded in the audit line only.
    #[arg(long)]
    claimed: Option<u32>,
    /// Append the JSON record to this file as well.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Unenrolled subjects replayed as impostors; defaults to every subject
    /// of the data directory that the bundle does not know.
    #[arg(long, value_delimiter = ',')]
    impostor_subjects: Option<Vec<u32>>,
    /// Training percentages to retrain at, e.g. `20,40,60,80,100`.
    #[arg(long)]
    datasize_sweep: Option<String>,
    #[arg(long, default_value = "reports")]
    out: PathBuf,
}

fn parse_override(s: &str) -> std::result::Result<(u32, f64), String> {
    let (subject, secs) = s.split_once('=').ok_or("expected SUBJECT=SECONDS")?;
    Ok((
        subject.trim().parse().map_err(|e| format!("{e}"))?,
        secs.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn resolve_config(args: &ConfigArgs) -> Result<Config> {
    let path = args.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut config = match path {
        Some(p) => Config::load(&p)?,
        None => Config::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.iterations {
        config.eeg_iterations = n;
        config.gait_iterations = n;
    }
    config.validate()?;
    Ok(config)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let spec = GenSpec {
        subjects: a.subjects,
        sessions: a.sessions,
        seconds: a.seconds,
        seed: a.seed,
        seconds_for: a.subject_seconds.clone(),
    };
    let data = Dataset::generate(&spec)?;
    data.write_dir(&a.out, a.seed, a.force)?;
    println!("wrote {} recordings to {}", data.entries.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = resolve_config(&a.config)?;
    let data = Dataset::read_dir(&a.data)?;
    let subjects = if a.subjects.is_empty() { data.subjects() } else { a.subjects.clone() };
    let trained = train_on_dataset(&data, &subjects, &config, 1.0)?;
    let bytes = trained.system.to_bytes()?;
    fs::write(&a.out, &bytes)?;
    println!("enrolled {subjects:?}");
    println!("eeg_accuracy={}", trained.eeg.accuracy());
    println!("gait_accuracy={}", trained.gait.accuracy());
    println!("bundle {} sha256={}", a.out.display(), sha256_hex(&bytes));
    Ok(())
}

fn load_request(a: &AuthArgs) -> Result<AuthRequest> {
    let mut req = AuthRequest::new(read_recording(&a.eeg)?, read_recording(&a.gait)?)?;
    req.claimed = a.claimed;
    Ok(req)
}

fn cmd_auth(a: &AuthArgs) -> Result<Verdict> {
    let system = System::load(&a.bundle)?;
    let req = load_request(a)?;
    let decision = system.authenticate(&req)?;
    let mut record = decision.to_json();
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    record["timestamp"] = serde_json::json!(now);
    record["claimed"] = serde_json::json!(req.claimed);
    let line = serde_json::to_string(&record).expect("json");
    println!("{} ({})", decision.verdict, decision.reason);
    println!("{line}");
    if let Some(log) = &a.log {
        let mut f = OpenOptions::new().create(true).append(true).open(log)?;
        writeln!(f, "{line}")?;
    }
    Ok(decision.verdict)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let system = System::load(&a.bundle)?;
    let data = Dataset::read_dir(&a.data)?;
    let enrolled = system.eeg.subjects.clone();
    let impostors = match &a.impostor_subjects {
        Some(list) => list.clone(),
        None => data.subjects().into_iter().filter(|s| !enrolled.contains(s)).collect(),
    };
    let report = evaluate(&system, &data, &impostors)?;
    let written = write_reports(&a.out, &report)?;
    print!("{}", summary_text(&report));
    if let Some(list) = &a.datasize_sweep {
        let fractions = parse_fractions(list)?;
        let rows = datasize_sweep(&data, &enrolled, &system.config, &fractions, &[Modality::Eeg, Modality::Gait])?;
        let path = a.out.join(SWEEP_REPORT);
        fs::write(&path, sweep_csv(&rows))?;
        print!("{}", sweep_csv(&rows));
    }
    println!("reports in {} ({} files)", a.out.display(), written.len());
    Ok(())
}

fn fail(e: &DeepKeyError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn run_checked(f: impl FnOnce() -> Result<()>) -> ExitCode {
    match f() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Gen(a) => run_checked(|| cmd_gen(a)),
        Command::Train(a) => run_checked(|| cmd_train(a)),
        Command::Eval(a) => run_checked(|| cmd_eval(a)),
        Command::Auth(a) => match cmd_auth(a) {
            Ok(Verdict::Approve) => ExitCode::SUCCESS,
            Ok(Verdict::Deny) => ExitCode::from(1),
            Err(e) => fail(&e),
        },
    }
}
