//! `pdeftl`: format simulated devices, replay traces, diff snapshots and
//! run distinguishing experiments.

mod config;
mod device;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use config::ConfigError;
use pdeftl_core::ftl::{Ftl, FtlConfig, FtlError, ModeKind, EVENT_CSV_HEADER};
use pdeftl_core::harness::features::trials_to_csv;
use pdeftl_core::harness::{
    extract_features, replay, run_experiment, RecoverKeys, RunError, Scenario, ScenarioOp, SessionKind, TraceError, FEATURE_NAMES,
};
use pdeftl_core::nand::{diff_snapshots, ChangeClass, FlashArray, NandError, SnapshotOptions};

const DECOY_ENV: &str = "PDEFTL_DECOY_PASSWORD";
const TRUE_ENV: &str = "PDEFTL_TRUE_PASSWORD";

#[derive(Parser)]
#[command(name = "pdeftl", version, about = "Deniable flash translation layer simulator")]
struct Cli {
    /// key=value device configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random choice the command makes
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Human-oriented output instead of key=value / CSV
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Keys {
    Decoy,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Create a device image, fill it with random data and set up both volumes
    Format {
        #[arg(long)]
        device: PathBuf,
    },
    /// Replay a scenario trace against a device image
    Run {
        scenario: PathBuf,
        #[arg(long)]
        device: PathBuf,
        /// Directory for SNAPSHOT files (`<name>.snap`)
        #[arg(long, default_value = ".")]
        snapshot_dir: PathBuf,
        /// Write the event log as CSV
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Write the raw flash image of a device
    Snapshot {
        out: PathBuf,
        #[arg(long)]
        device: PathBuf,
        /// Leave out wear counters and the bad-block map
        #[arg(long)]
        no_sidecar: bool,
    },
    /// Page-level differences between two snapshots
    Diff {
        a: PathBuf,
        b: PathBuf,
        /// Print the adversary feature vector instead of the page list
        #[arg(long)]
        features: bool,
    },
    /// Paired snapshot experiment and distinguisher report
    Experiment {
        #[arg(value_name = "CONFIG")]
        experiment: PathBuf,
        /// Write per-trial features as CSV
        #[arg(long)]
        trials: Option<PathBuf>,
    },
    /// Counters, write amplification, dummy overhead and wear of a device
    Metrics {
        #[arg(long)]
        device: PathBuf,
    },
    /// Rebuild state after an unclean shutdown and commit it
    Recover {
        #[arg(long)]
        device: PathBuf,
        #[arg(long, value_enum, default_value = "decoy")]
        keys: Keys,
    },
}

/// Failure classes, each with its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Other = 1,
    Config = 2,
    Trace = 3,
    Geometry = 4,
    Auth = 5,
    Io = 6,
}

impl Class {
    fn label(self) -> &'static str {
        match self {
            Class::Other => "error",
            Class::Config => "bad config",
            Class::Trace => "trace error",
            Class::Geometry => "geometry mismatch",
            Class::Auth => "unlock failed",
            Class::Io => "io error",
        }
    }
}

#[derive(Debug)]
struct PasswordUnavailable(&'static str);

impl std::fmt::Display for PasswordUnavailable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no password: set {} or run from a terminal", self.0)
    }
}

impl std::error::Error for PasswordUnavailable {}

fn classify(e: &anyhow::Error) -> Class {
    for cause in e.chain() {
        if cause.is::<ConfigError>() || cause.is::<clap::Error>() {
            return Class::Config;
        }
        if cause.is::<TraceError>() {
            return Class::Trace;
        }
        if cause.is::<PasswordUnavailable>() {
            return Class::Auth;
        }
        if let Some(f) = cause.downcast_ref::<FtlError>() {
            match f {
                FtlError::GeometryMismatch | FtlError::Nand(NandError::GeometryMismatch) => return Class::Geometry,
                FtlError::NoMatch => return Class::Auth,
                FtlError::InvalidConfig(_) | FtlError::GeometryTooSmall(_) | FtlError::SamePassword => return Class::Config,
                _ => {}
            }
        }
        if let Some(RunError::Trace(_)) = cause.downcast_ref::<RunError>() {
            return Class::Trace;
        }
        if let Some(RunError::Ftl { source: FtlError::NoMatch, .. }) = cause.downcast_ref::<RunError>() {
            return Class::Auth;
        }
        if let Some(NandError::GeometryMismatch) = cause.downcast_ref::<NandError>() {
            return Class::Geometry;
        }
        if cause.is::<std::io::Error>() {
            return Class::Io;
        }
    }
    Class::Other
}

fn password(var: &'static str, prompt: &str) -> Result<String> {
    if let Ok(p) = std::env::var(var) {
        return Ok(p);
    }
    rpassword::prompt_password(prompt).map_err(|_| PasswordUnavailable(var).into())
}

struct Ctx {
    ftl: FtlConfig,
    geometry_given: bool,
    seed: u64,
    pretty: bool,
}

impl Ctx {
    fn device_config(&self) -> FtlConfig {
        FtlConfig { master_seed: self.seed, ..self.ftl.clone() }
    }

    fn open(&self, device: &Path) -> Result<Ftl> {
        device::open(device, &self.device_config(), self.geometry_given)
    }
}

struct Out {
    pretty: bool,
    buf: String,
}

impl Out {
    fn kv(&mut self, k: &str, v: impl std::fmt::Display) {
        if self.pretty {
            self.buf.push_str(&format!("{:<24} {v}\n", format!("{}:", k.replace('_', " "))));
        } else {
            self.buf.push_str(&format!("{k}={v}\n"));
        }
    }

    fn raw(&mut self, s: &str) {
        self.buf.push_str(s);
    }

    fn kv_text(&mut self, text: &str) {
        for line in text.lines() {
            match line.split_once('=') {
                Some((k, v)) => self.kv(k, v),
                None => self.raw(line),
            }
        }
    }
}

fn geometry_kv(out: &mut Out, ftl: &Ftl) {
    let g = ftl.flash().geometry();
    out.kv("num_blocks", g.num_blocks);
    out.kv("pages_per_block", g.pages_per_block);
    out.kv("page_size", g.page_size);
    out.kv("oob_size", g.oob_size);
    out.kv("strategy", ftl.strategy().as_str());
}

fn cmd_format(ctx: &Ctx, out: &mut Out, path: &Path) -> Result<()> {
    let decoy = password(DECOY_ENV, "decoy password: ")?;
    let true_password = password(TRUE_ENV, "true password: ")?;
    let cfg = ctx.device_config();
    let flash = FlashArray::new_relaxed(cfg.geometry).map_err(FtlError::from)?;
    let ftl = Ftl::format(flash, &decoy, &true_password, cfg)?;
    device::save(path, &ftl)?;
    out.kv("device", path.display());
    geometry_kv(out, &ftl);
    out.kv("public_capacity", ftl.public_capacity());
    out.kv("hidden_capacity", ftl.hidden_capacity());
    Ok(())
}

fn needs_true_password(s: &Scenario) -> bool {
    s.ops.iter().any(|op| {
        matches!(
            op,
            ScenarioOp::Session(SessionKind::Hidden) | ScenarioOp::Recover(RecoverKeys::Both)
        )
    })
}

fn snapshot_name_ok(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !name.starts_with('.')
}

fn cmd_run(ctx: &Ctx, out: &mut Out, scenario: &Path, path: &Path, dir: &Path, events: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(scenario).with_context(|| format!("reading {}", scenario.display()))?;
    let scenario = Scenario::parse(&text)?;
    for (i, op) in scenario.ops.iter().enumerate() {
        if let ScenarioOp::Snapshot(name) = op {
            if !snapshot_name_ok(name) {
                return Err(TraceError { line: i + 1, message: format!("snapshot name `{name}` is not a plain file name") }.into());
            }
        }
    }
    let mut ftl = ctx.open(path)?;
    ftl.set_event_log(events.is_some());
    let decoy = password(DECOY_ENV, "decoy password: ")?;
    let true_password = if needs_true_password(&scenario) { password(TRUE_ENV, "true password: ")? } else { String::new() };
    let mut written = Vec::new();
    let mut io_err = None;
    let result = replay(&mut ftl, &scenario, &decoy, &true_password, |name, snap| {
        let file = dir.join(format!("{name}.snap"));
        if let Err(e) = device::write_atomic(&file, snap.as_bytes()) {
            io_err.get_or_insert(e);
        }
        written.push((name.to_string(), file));
    });
    if let Some(e) = io_err {
        return Err(e);
    }
    result?;
    device::save(path, &ftl)?;
    if let Some(p) = events {
        let mut csv = format!("{EVENT_CSV_HEADER}\n");
        for e in ftl.take_events() {
            csv.push_str(&e.to_line());
            csv.push('\n');
        }
        device::write_atomic(p, csv.as_bytes())?;
    }
    out.kv("steps", scenario.ops.len());
    out.kv("final_mode", ftl.mode().as_str());
    out.kv("snapshots", written.len());
    for (name, file) in written {
        out.kv(&format!("snapshot.{name}"), file.display());
    }
    Ok(())
}

fn cmd_snapshot(ctx: &Ctx, out: &mut Out, dest: &Path, path: &Path, no_sidecar: bool) -> Result<()> {
    let ftl = ctx.open(path)?;
    let snap = ftl.flash().take_snapshot_with(SnapshotOptions { sidecar: !no_sidecar });
    device::write_atomic(dest, snap.as_bytes())?;
    out.kv("snapshot", dest.display());
    out.kv("bytes", snap.as_bytes().len());
    out.kv("sidecar", snap.has_sidecar());
    Ok(())
}

fn cmd_diff(out: &mut Out, a: &Path, b: &Path, features: bool) -> Result<()> {
    let (sa, sb) = (device::read_snapshot(a)?, device::read_snapshot(b)?);
    let diff = diff_snapshots(&sa, &sb)?;
    if features {
        let f = extract_features(&diff, &diff.geometry);
        for (n, x) in FEATURE_NAMES.iter().zip(f.0) {
            out.kv(n, x);
        }
    } else if out.pretty {
        out.kv("changed_pages", diff.changes.len());
        for c in [ChangeClass::Programmed, ChangeClass::Erased, ChangeClass::ContentChanged] {
            out.kv(c.as_str(), diff.count(c));
        }
        out.kv("changed_blocks", diff.per_block.iter().filter(|&&n| n > 0).count());
        out.kv("wear_changed_blocks", diff.wear_changed.len());
    } else {
        out.raw(&diff.to_csv());
    }
    Ok(())
}

fn cmd_experiment(ctx: &Ctx, out: &mut Out, cfg_path: &Path, trials: Option<&Path>) -> Result<()> {
    let mut cfg = config::parse_experiment(&config::read(cfg_path)?, config::default_experiment())?;
    cfg.seed = ctx.seed;
    cfg.ftl.master_seed = ctx.seed;
    let result = run_experiment(&cfg)?;
    if let Some(p) = trials {
        device::write_atomic(p, trials_to_csv(&result.trials).as_bytes())?;
    }
    out.kv("strategy", cfg.ftl.strategy.as_str());
    out.kv("null", cfg.null);
    out.kv("pairs", cfg.pairs);
    out.kv_text(&result.report.to_kv());
    Ok(())
}

fn cmd_metrics(ctx: &Ctx, out: &mut Out, path: &Path) -> Result<()> {
    let ftl = ctx.open(path)?;
    out.kv_text(&ftl.metrics().to_kv());
    Ok(())
}

fn cmd_recover(ctx: &Ctx, out: &mut Out, path: &Path, keys: Keys) -> Result<()> {
    let mut ftl = ctx.open(path)?;
    let decoy = password(DECOY_ENV, "decoy password: ")?;
    let mode = match keys {
        Keys::Decoy => ftl.recover(&[&decoy])?,
        Keys::Both => {
            let t = password(TRUE_ENV, "true password: ")?;
            ftl.recover(&[&decoy, &t])?
        }
    };
    let used = ftl.used_pages().unwrap_or(0);
    let free = ftl.free_pages().unwrap_or(0);
    ftl.commit_shutdown()?;
    device::save(path, &ftl)?;
    out.kv("recovered_mode", mode.as_str());
    out.kv("used_pages", used);
    out.kv("free_pages", free);
    out.kv("final_mode", ModeKind::Locked.as_str());
    Ok(())
}

fn run(cli: Cli) -> Result<String> {
    let (ftl, geometry_given) = match &cli.config {
        Some(p) => {
            let text = config::read(p)?;
            (config::parse_ftl(&text, config::default_ftl())?, config::sets_geometry(&text))
        }
        None => (config::default_ftl(), false),
    };
    let ctx = Ctx { ftl, geometry_given, seed: cli.seed, pretty: cli.pretty };
    let mut out = Out { pretty: ctx.pretty, buf: String::new() };
    match &cli.command {
        Command::Format { device } => cmd_format(&ctx, &mut out, device)?,
        Command::Run { scenario, device, snapshot_dir, events } => {
            cmd_run(&ctx, &mut out, scenario, device, snapshot_dir, events.as_deref())?
        }
        Command::Snapshot { out: dest, device, no_sidecar } => cmd_snapshot(&ctx, &mut out, dest, device, *no_sidecar)?,
        Command::Diff { a, b, features } => cmd_diff(&mut out, a, b, *features)?,
        Command::Experiment { experiment, trials } => cmd_experiment(&ctx, &mut out, experiment, trials.as_deref())?,
        Command::Metrics { device } => cmd_metrics(&ctx, &mut out, device)?,
        Command::Recover { device, keys } => cmd_recover(&ctx, &mut out, device, *keys)?,
    }
    Ok(out.buf)
}

/// The error chain on one line, skipping causes the outer message
/// already spells out.
fn one_line(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for c in e.chain() {
        let s = c.to_string();
        if !parts.last().is_some_and(|p| p.ends_with(&s)) {
            parts.push(s);
        }
    }
    let msg = parts.join(": ");
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let e = anyhow!(e);
            eprintln!("pdeftl: {}: {}", Class::Config.label(), one_line(&e).trim_start_matches("error: "));
            return ExitCode::from(Class::Config as u8);
        }
    };
    match run(cli) {
        Ok(text) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(Class::Io as u8);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let class = classify(&e);
            eprintln!("pdeftl: {}: {}", class.label(), one_line(&e));
            ExitCode::from(class as u8)
        }
    }
}
