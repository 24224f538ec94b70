//! Line-oriented operation traces and their replay against an [`Ftl`].
//!
//! One operation per line; `#` starts a comment, blank lines are skipped.
//!
//! ```text
//! SESSION public|hidden   unlock with the decoy password, or both passwords
//! W <lba> <data>          public sector write
//! HW <lba> <data>         hidden sector write
//! TICK <n>                advance logical time n ticks
//! IDLE                    hidden mode: idle housekeeping; public mode: one idle period of ticks
//! GC                      explicit public garbage collection
//! DUMMY <n>               n dummy writes
//! SHUTDOWN                commit and lock
//! SNAPSHOT <name>         capture the raw flash (device must be locked)
//! CRASH                   drop volatile state
//! RECOVER decoy|both      scan-based recovery with one or both passwords
//! ```
//!
//! `<data>` is a decimal seed for a pseudo-random sector, or hex bytes
//! (optionally `0x`-prefixed) zero-padded to the sector size.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::crypto::random_page;
use crate::ftl::{Event, Ftl, FtlConfig, FtlError, ModeKind};
use crate::nand::{FlashArray, FlashSnapshot};

/// Passwords the harness formats and unlocks scenario devices with.
pub const HARNESS_DECOY_PASSWORD: &str = "harness-decoy";
pub const HARNESS_TRUE_PASSWORD: &str = "harness-true";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trace line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

impl TraceError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self { line, message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SessionKind {
    Public,
    Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecoverKeys {
    Decoy,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SectorData {
    Seed(u64),
    Bytes(Vec<u8>),
}

impl SectorData {
    pub fn materialize(&self, sector_size: usize) -> Option<Vec<u8>> {
        match self {
            SectorData::Seed(s) => Some(random_page(&mut ChaCha8Rng::seed_from_u64(*s), sector_size)),
            SectorData::Bytes(b) if b.len() <= sector_size => {
                let mut v = b.clone();
                v.resize(sector_size, 0);
                Some(v)
            }
            SectorData::Bytes(_) => None,
        }
    }
}

impl fmt::Display for SectorData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SectorData::Seed(s) => write!(f, "{s}"),
            SectorData::Bytes(b) => {
                f.write_str("0x")?;
                b.iter().try_for_each(|x| write!(f, "{x:02x}"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ScenarioOp {
    Session(SessionKind),
    Write { lba: u32, data: SectorData },
    HiddenWrite { lba: u32, data: SectorData },
    Tick(u64),
    Idle,
    Gc,
    Dummy(u32),
    Shutdown,
    Snapshot(String),
    Crash,
    Recover(RecoverKeys),
}

impl ScenarioOp {
    pub fn is_hidden_write(&self) -> bool {
        matches!(self, ScenarioOp::HiddenWrite { .. })
    }
}

impl fmt::Display for ScenarioOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioOp::Session(SessionKind::Public) => f.write_str("SESSION public"),
            ScenarioOp::Session(SessionKind::Hidden) => f.write_str("SESSION hidden"),
            ScenarioOp::Write { lba, data } => write!(f, "W {lba} {data}"),
            ScenarioOp::HiddenWrite { lba, data } => write!(f, "HW {lba} {data}"),
            ScenarioOp::Tick(n) => write!(f, "TICK {n}"),
            ScenarioOp::Idle => f.write_str("IDLE"),
            ScenarioOp::Gc => f.write_str("GC"),
            ScenarioOp::Dummy(n) => write!(f, "DUMMY {n}"),
            ScenarioOp::Shutdown => f.write_str("SHUTDOWN"),
            ScenarioOp::Snapshot(name) => write!(f, "SNAPSHOT {name}"),
            ScenarioOp::Crash => f.write_str("CRASH"),
            ScenarioOp::Recover(RecoverKeys::Decoy) => f.write_str("RECOVER decoy"),
            ScenarioOp::Recover(RecoverKeys::Both) => f.write_str("RECOVER both"),
        }
    }
}

/// Which half of a scenario pair to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    WithHidden,
    WithoutHidden,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::WithHidden => "with-hidden",
            Variant::WithoutHidden => "without-hidden",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scenario {
    pub ops: Vec<ScenarioOp>,
}

fn parse_data(line: usize, tok: &str) -> Result<SectorData, TraceError> {
    if let Some(hex) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        return parse_hex(line, hex);
    }
    match tok.parse::<u64>() {
        Ok(seed) => Ok(SectorData::Seed(seed)),
        Err(_) => parse_hex(line, tok),
    }
}

fn parse_hex(line: usize, hex: &str) -> Result<SectorData, TraceError> {
    if hex.is_empty() || hex.len() % 2 != 0 {
        return Err(TraceError::new(line, format!("bad sector data `{hex}`")));
    }
    (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
        .collect::<Result<Vec<u8>, _>>()
        .map(SectorData::Bytes)
        .map_err(|_| TraceError::new(line, format!("bad sector data `{hex}`")))
}

fn parse_num<T: FromStr>(line: usize, tok: Option<&str>, what: &str) -> Result<T, TraceError> {
    let tok = tok.ok_or_else(|| TraceError::new(line, format!("missing {what}")))?;
    tok.parse().map_err(|_| TraceError::new(line, format!("bad {what} `{tok}`")))
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut ops = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut toks = content.split_whitespace();
            let head = toks.next().unwrap();
            let op = match head.to_ascii_uppercase().as_str() {
                "SESSION" => match toks.next() {
                    Some("public") => ScenarioOp::Session(SessionKind::Public),
                    Some("hidden") => ScenarioOp::Session(SessionKind::Hidden),
                    other => return Err(TraceError::new(line, format!("bad session kind {other:?}"))),
                },
                "W" | "HW" => {
                    let lba = parse_num(line, toks.next(), "lba")?;
                    let tok = toks.next().ok_or_else(|| TraceError::new(line, "missing sector data"))?;
                    let data = parse_data(line, tok)?;
                    if head.eq_ignore_ascii_case("W") {
                        ScenarioOp::Write { lba, data }
                    } else {
                        ScenarioOp::HiddenWrite { lba, data }
                    }
                }
                "TICK" => ScenarioOp::Tick(parse_num(line, toks.next(), "tick count")?),
                "IDLE" => ScenarioOp::Idle,
                "GC" => ScenarioOp::Gc,
                "DUMMY" => ScenarioOp::Dummy(parse_num(line, toks.next(), "dummy count")?),
                "SHUTDOWN" => ScenarioOp::Shutdown,
                "SNAPSHOT" => {
                    let name = toks.next().ok_or_else(|| TraceError::new(line, "missing snapshot name"))?;
                    ScenarioOp::Snapshot(name.to_string())
                }
                "CRASH" => ScenarioOp::Crash,
                "RECOVER" => match toks.next() {
                    Some("decoy") => ScenarioOp::Recover(RecoverKeys::Decoy),
                    Some("both") => ScenarioOp::Recover(RecoverKeys::Both),
                    other => return Err(TraceError::new(line, format!("bad recover keys {other:?}"))),
                },
                other => return Err(TraceError::new(line, format!("unknown operation `{other}`"))),
            };
            if let Some(extra) = toks.next() {
                return Err(TraceError::new(line, format!("unexpected `{extra}`")));
            }
            ops.push(op);
        }
        Ok(Scenario { ops })
    }

    pub fn to_text(&self) -> String {
        self.ops.iter().map(|op| format!("{op}\n")).collect()
    }

    /// `WithoutHidden` drops hidden writes; everything else, hidden
    /// sessions included, stays.
    pub fn variant(&self, variant: Variant) -> Scenario {
        match variant {
            Variant::WithHidden => self.clone(),
            Variant::WithoutHidden => Scenario { ops: self.ops.iter().filter(|op| !op.is_hidden_write()).cloned().collect() },
        }
    }

    pub fn snapshot_names(&self) -> Vec<&str> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                ScenarioOp::Snapshot(n) => Some(n.as_str()),
                _ => None,
            })
            .collect()
    }
}

impl FromStr for Scenario {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::parse(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RunError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("step {step} (`{op}`): {source}")]
    Ftl {
        step: usize,
        op: String,
        #[source]
        source: FtlError,
    },
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub snapshots: Vec<(String, FlashSnapshot)>,
    pub events: Vec<Event>,
    pub ftl: Ftl,
}

/// Replays `scenario` on an existing device. Trace positions in errors
/// are 1-based step numbers.
pub fn replay(
    ftl: &mut Ftl,
    scenario: &Scenario,
    decoy: &str,
    true_password: &str,
    mut on_snapshot: impl FnMut(&str, FlashSnapshot),
) -> Result<(), RunError> {
    let ss = ftl.sector_size();
    for (i, op) in scenario.ops.iter().enumerate() {
        let step = i + 1;
        let fail = |source: FtlError| RunError::Ftl { step, op: op.to_string(), source };
        let bytes = |data: &SectorData| {
            data.materialize(ss).ok_or_else(|| TraceError::new(step, "sector data longer than the sector"))
        };
        match op {
            ScenarioOp::Session(SessionKind::Public) => ftl.unlock(&[decoy]).map(drop).map_err(fail)?,
            ScenarioOp::Session(SessionKind::Hidden) => ftl.unlock(&[decoy, true_password]).map(drop).map_err(fail)?,
            ScenarioOp::Write { lba, data } => ftl.write_sector(*lba, &bytes(data)?).map_err(fail)?,
            ScenarioOp::HiddenWrite { lba, data } => ftl.hidden_write_sector(*lba, &bytes(data)?).map_err(fail)?,
            ScenarioOp::Tick(n) => {
                for _ in 0..*n {
                    ftl.tick().map_err(fail)?;
                }
            }
            ScenarioOp::Idle => match ftl.mode() {
                ModeKind::Hidden => ftl.gc_hidden(true).map(drop).map_err(fail)?,
                _ => {
                    for _ in 0..ftl.config().idle_threshold.max(1) {
                        ftl.tick().map_err(fail)?;
                    }
                }
            },
            ScenarioOp::Gc => ftl.gc_public().map(drop).map_err(fail)?,
            ScenarioOp::Dummy(n) => ftl.dummy_write(*n).map_err(fail)?,
            ScenarioOp::Shutdown => ftl.commit_shutdown().map_err(fail)?,
            ScenarioOp::Snapshot(name) => {
                if ftl.mode() != ModeKind::Locked {
                    return Err(TraceError::new(step, "snapshots are only taken while locked").into());
                }
                on_snapshot(name, ftl.snapshot());
            }
            ScenarioOp::Crash => ftl.crash(),
            ScenarioOp::Recover(RecoverKeys::Decoy) => ftl.recover(&[decoy]).map(drop).map_err(fail)?,
            ScenarioOp::Recover(RecoverKeys::Both) => ftl.recover(&[decoy, true_password]).map(drop).map_err(fail)?,
        }
    }
    Ok(())
}

/// Formats a fresh device with the harness passwords and `seed`, then
/// replays `scenario` with the event log on.
pub fn run_scenario(scenario: &Scenario, config: &FtlConfig, seed: u64) -> Result<RunOutput, RunError> {
    let config = FtlConfig { master_seed: seed, event_log: true, ..config.clone() };
    let setup = |source| RunError::Ftl { step: 0, op: "format".into(), source };
    let flash = FlashArray::new_relaxed(config.geometry).map_err(|e| setup(e.into()))?;
    let mut ftl = Ftl::format(flash, HARNESS_DECOY_PASSWORD, HARNESS_TRUE_PASSWORD, config).map_err(setup)?;
    let mut snapshots = Vec::new();
    replay(&mut ftl, scenario, HARNESS_DECOY_PASSWORD, HARNESS_TRUE_PASSWORD, |n, s| snapshots.push((n.to_string(), s)))?;
    let events = ftl.take_events();
    Ok(RunOutput { snapshots, events, ftl })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let text = "SESSION public\nW 3 42\nW 4 0xdeadbeef\nTICK 10\nSHUTDOWN\nSESSION hidden\nHW 0 7\nIDLE\nSHUTDOWN\nSNAPSHOT s1\nCRASH\nRECOVER both\nGC\nDUMMY 3\n";
        let s = Scenario::parse(text).unwrap();
        assert_eq!(s.ops.len(), 14);
        assert_eq!(s.ops[2], ScenarioOp::Write { lba: 4, data: SectorData::Bytes(vec![0xde, 0xad, 0xbe, 0xef]) });
        assert_eq!(s.to_text(), text);
        assert_eq!(Scenario::parse(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn comments_and_blank_lines() {
        let s = Scenario::parse("# warmup\n\nSESSION public   # go\n  W 1 ff\n").unwrap();
        assert_eq!(s.ops.len(), 2);
        assert_eq!(s.ops[1], ScenarioOp::Write { lba: 1, data: SectorData::Bytes(vec![0xff]) });
    }

    #[test]
    fn malformed_lines_report_position() {
        for (text, line) in [
            ("SESSION public\nW x 1\n", 2),
            ("FLY\n", 1),
            ("SESSION admin\n", 1),
            ("\n\nW 1\n", 3),
            ("TICK 1 2\n", 1),
            ("W 1 0xabc\n", 1),
            ("RECOVER all\n", 1),
            ("SNAPSHOT\n", 1),
        ] {
            assert_eq!(Scenario::parse(text).unwrap_err().line, line, "{text:?}");
        }
    }

    #[test]
    fn without_hidden_drops_only_hidden_writes() {
        let s = Scenario::parse("SESSION hidden\nHW 1 1\nIDLE\nSHUTDOWN\n").unwrap();
        let w = s.variant(Variant::WithoutHidden);
        assert_eq!(w.to_text(), "SESSION hidden\nIDLE\nSHUTDOWN\n");
        assert_eq!(s.variant(Variant::WithHidden), s);
    }
}
