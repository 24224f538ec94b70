//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use pdeftl_core::crypto::KdfParams;
use pdeftl_core::ftl::{EventClass, EventOp, Ftl, FtlConfig, FtlError, ModeKind, Owner, PageStatus, Strategy, WearStats};
use pdeftl_core::harness::device_battery;
use pdeftl_core::nand::{FlashArray, FlashGeometry, NandError, PageState, PhysPageAddr};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DECOY: &str = "acceptance-decoy-pw";
const TRUE: &str = "acceptance-true-pw";

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn config(geometry: FlashGeometry, strategy: Strategy, seed: u64) -> FtlConfig {
    FtlConfig { geometry, strategy, kdf: KdfParams { iterations: 10 }, master_seed: seed, map_slots: 4, ..FtlConfig::default() }
}

fn formatted(cfg: &FtlConfig) -> Result<Ftl, String> {
    let flash = FlashArray::new_relaxed(cfg.geometry).map_err(e2s)?;
    Ftl::format(flash, DECOY, TRUE, cfg.clone()).map_err(e2s)
}

fn sector(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    let mut v = vec![0u8; len];
    rng.fill_bytes(&mut v);
    v
}

// ---------------------------------------------------------------- 1

fn flash_semantics() -> Outcome {
    let g = FlashGeometry::new(4, 4, 8, 4, 1_000_000);
    let n = g.total_pages();
    let mut checks = 0u64;
    for subset in 0u32..(1 << n) {
        let mut f = FlashArray::new_relaxed(g).map_err(e2s)?;
        for i in 0..n {
            if subset >> i & 1 == 1 {
                let a = g.addr_of(i);
                f.program_page(a, &[i as u8 + 1; 8], &[0xa0 | i as u8; 4]).map_err(e2s)?;
            }
        }
        let before = f.take_snapshot();
        let mut g2 = f.clone();
        for i in 0..n {
            let a = g.addr_of(i);
            let r = g2.program_page(a, &[0x55; 8], &[0x55; 4]);
            if subset >> i & 1 == 1 {
                ensure(r == Err(NandError::PageNotErased(a)), || format!("double program of {a} accepted"))?;
            } else {
                ensure(r.is_ok(), || format!("program of erased {a} rejected"))?;
                ensure(g2.program_page(a, &[0x66; 8], &[0x66; 4]).is_err(), || format!("second program of {a} accepted"))?;
            }
            checks += 1;
        }
        ensure(f.take_snapshot() == before, || "failed program changed the array".into())?;
        for b in 0..g.num_blocks {
            let mut e = f.clone();
            e.erase_block(b).map_err(e2s)?;
            for i in 0..n {
                let a = g.addr_of(i);
                let p = e.read_page(a).map_err(e2s)?;
                let o = f.read_page(a).map_err(e2s)?;
                if a.block == b {
                    ensure(p.state == PageState::Erased && p.data.iter().all(|&x| x == 0xff), || format!("{a} not erased"))?;
                } else {
                    ensure(p.state == o.state && p.data == o.data && p.oob == o.oob, || format!("erase of {b} touched {a}"))?;
                }
            }
            for x in 0..g.num_blocks {
                let want = f.wear()[x as usize] + u32::from(x == b);
                ensure(e.wear()[x as usize] == want, || format!("wear of block {x} after erasing {b}"))?;
            }
            checks += 1;
        }
    }
    Ok(format!("{} programmed subsets, {checks} checks", 1u32 << n))
}

// ------------------------------------------------------------- oracle

const PUB_LBAS: u32 = 600;
const HID_LBAS: u32 = 300;
/// Past either guard the session ends and a hidden idle session follows.
const GUARD_LOAD: f64 = 0.78;
const GUARD_ERASED: f64 = 0.12;

#[derive(Default, Clone)]
struct Oracle {
    public: HashMap<u32, Vec<u8>>,
    hidden: HashMap<u32, Vec<u8>>,
}

impl Oracle {
    fn volume(&self, mode: ModeKind) -> (&HashMap<u32, Vec<u8>>, u32) {
        match mode {
            ModeKind::Hidden => (&self.hidden, HID_LBAS),
            _ => (&self.public, PUB_LBAS),
        }
    }

    fn check_one(&self, ftl: &Ftl, lba: u32) -> Result<(), String> {
        let (vol, _) = self.volume(ftl.mode());
        let got = ftl.read_sector(lba).map_err(e2s)?;
        let ok = match vol.get(&lba) {
            Some(want) => &got == want,
            None => got.iter().all(|&b| b == 0),
        };
        ensure(ok, || format!("{} lba {lba} differs from the oracle", ftl.mode().as_str()))
    }

    fn check_all(&self, ftl: &Ftl) -> Result<(), String> {
        let (_, n) = self.volume(ftl.mode());
        (0..n).try_for_each(|l| self.check_one(ftl, l))
    }
}

#[derive(Default)]
struct Tally {
    ops: u64,
    sessions: u64,
    crashes: u64,
    max_load: f64,
    hidden_written: u64,
}

struct Workload {
    ftl: Ftl,
    oracle: Oracle,
    rng: ChaCha8Rng,
    tally: Tally,
    need_idle: bool,
}

impl Workload {
    fn new(seed: u64) -> Result<Self, String> {
        let cfg = config(FlashGeometry::new(128, 32, 1024, 64, 100_000), Strategy::DummyRandom, seed);
        Ok(Self {
            ftl: formatted(&cfg)?,
            oracle: Oracle::default(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
            tally: Tally::default(),
            need_idle: false,
        })
    }

    fn load(&mut self) -> Result<f64, String> {
        let l = self.ftl.load_factor().ok_or("no session")?;
        self.tally.max_load = self.tally.max_load.max(l);
        ensure(l < 0.85, || format!("load reached {l:.3}"))?;
        Ok(l)
    }

    fn unlock(&mut self, hidden: bool) -> Result<(), String> {
        let want = if hidden { ModeKind::Hidden } else { ModeKind::Public };
        let got = if hidden { self.ftl.unlock(&[DECOY, TRUE]) } else { self.ftl.unlock(&[DECOY]) }.map_err(e2s)?;
        ensure(got == want, || format!("unlock gave {}", got.as_str()))?;
        self.tally.sessions += 1;
        self.oracle.check_all(&self.ftl)
    }

    /// One op inside the open session; returns false when the session
    /// should end early.
    fn step(&mut self) -> Result<bool, String> {
        self.tally.ops += 1;
        let hidden = self.ftl.mode() == ModeKind::Hidden;
        let ss = self.ftl.sector_size();
        let r: f64 = self.rng.gen();
        if r < 0.6 {
            let data = sector(&mut self.rng, ss);
            if hidden {
                let lba = self.rng.gen_range(0..HID_LBAS);
                self.ftl.hidden_write_sector(lba, &data).map_err(e2s)?;
                self.oracle.hidden.insert(lba, data);
                self.tally.hidden_written += 1;
            } else {
                let lba = self.rng.gen_range(0..PUB_LBAS);
                self.ftl.write_sector(lba, &data).map_err(e2s)?;
                self.oracle.public.insert(lba, data);
            }
        } else if r < 0.85 {
            let lba = self.rng.gen_range(0..if hidden { HID_LBAS } else { PUB_LBAS });
            self.oracle.check_one(&self.ftl, lba)?;
        } else if r < 0.96 {
            for _ in 0..self.rng.gen_range(1..40) {
                self.ftl.tick().map_err(e2s)?;
            }
        } else if hidden {
            self.ftl.gc_hidden(true).map_err(e2s)?;
        } else {
            self.ftl.gc_public().map_err(e2s)?;
        }
        let usable = self.ftl.used_pages().unwrap() + self.ftl.free_pages().unwrap();
        let erased = self.ftl.erased_free_pages().unwrap();
        if self.load()? >= GUARD_LOAD || (erased as f64) < GUARD_ERASED * usable as f64 {
            self.need_idle = true;
            return Ok(hidden);
        }
        Ok(true)
    }

    fn idle_cleanup(&mut self) -> Result<(), String> {
        while self.ftl.gc_hidden(true).map_err(e2s)?.blocks_erased > 0 {
            self.load()?;
        }
        self.need_idle = false;
        Ok(())
    }

    /// Opens a session, runs up to `len` ops and leaves it open.
    fn session(&mut self, hidden: bool, len: u32) -> Result<(), String> {
        self.unlock(hidden)?;
        for _ in 0..len {
            if !self.step()? {
                break;
            }
        }
        if hidden && self.need_idle {
            self.idle_cleanup()?;
        }
        Ok(())
    }

    fn recover_both(&mut self) -> Result<(), String> {
        let m = self.ftl.recover(&[DECOY, TRUE]).map_err(e2s)?;
        ensure(m == ModeKind::Hidden, || format!("recovery gave {}", m.as_str()))?;
        self.oracle.check_all(&self.ftl)?;
        self.ftl.commit_shutdown().map_err(e2s)?;
        self.unlock(false)?;
        self.ftl.commit_shutdown().map_err(e2s)
    }

    fn run(&mut self, total_ops: u64, crash_p: f64) -> Result<(), String> {
        self.run_inner(total_ops, crash_p).map_err(|e| {
            let load = self.ftl.load_factor().map_or("-".into(), |l| format!("{l:.3}"));
            let free = self.ftl.free_pages().map_or("-".into(), |f| f.to_string());
            format!("{e} at op {} ({} mode, load {load}, free {free})", self.tally.ops, self.ftl.mode().as_str())
        })
    }

    fn run_inner(&mut self, total_ops: u64, crash_p: f64) -> Result<(), String> {
        while self.tally.ops < total_ops {
            let hidden = self.need_idle || self.rng.gen_bool(0.3);
            let len = self.rng.gen_range(20..300);
            self.session(hidden, len)?;
            if self.rng.gen_bool(crash_p) {
                self.tally.crashes += 1;
                self.ftl.crash();
                self.recover_both()?;
            } else {
                self.ftl.commit_shutdown().map_err(e2s)?;
            }
        }
        Ok(())
    }

    fn final_check(&mut self) -> Result<(), String> {
        for hidden in [false, true] {
            self.unlock(hidden)?;
            self.ftl.check_invariants()?;
            self.ftl.commit_shutdown().map_err(e2s)?;
        }
        let c = self.ftl.counters();
        ensure(c.hidden_entries_dropped == 0, || format!("{} hidden entries dropped", c.hidden_entries_dropped))?;
        ensure(c.hidden_risk_pages == 0, || format!("{} hidden pages at risk", c.hidden_risk_pages))
    }
}

// ---------------------------------------------------------------- 2/3a

struct OracleRuns {
    seeds: u64,
    ops: u64,
    crashes: u64,
    max_load: f64,
    hidden_written: u64,
    failures: Vec<String>,
}

fn oracle_runs() -> OracleRuns {
    let mut out = OracleRuns { seeds: 100, ops: 0, crashes: 0, max_load: 0.0, hidden_written: 0, failures: Vec::new() };
    for seed in 0..out.seeds {
        let r = Workload::new(seed).and_then(|mut w| {
            let res = w.run(10_000, 0.12).and_then(|_| w.final_check());
            out.ops += w.tally.ops;
            out.crashes += w.tally.crashes;
            out.max_load = out.max_load.max(w.tally.max_load);
            out.hidden_written += w.tally.hidden_written;
            res
        });
        if let Err(e) = r {
            out.failures.push(format!("seed {seed}: {e}"));
        }
    }
    out
}

fn read_your_writes(runs: &OracleRuns) -> Outcome {
    ensure(runs.failures.is_empty(), || format!("{} of {} seeds failed, first: {}", runs.failures.len(), runs.seeds, runs.failures[0]))?;
    Ok(format!("{} seeds, {} ops, {} crash/recover, max load {:.3}", runs.seeds, runs.ops, runs.crashes, runs.max_load))
}

// ---------------------------------------------------------------- 3b

const LOSS_SEEDS: u64 = 200;
const LOSS_HIDDEN: u32 = 64;

struct LossSample {
    /// Hidden data pages destroyed by the pass.
    pages: u64,
    expected: f64,
    /// Whether a hidden map-slot block was reclaimed too, taking the
    /// whole hidden map with it.
    map_lost: bool,
}

/// One high-load public GC pass over a device holding hidden data.
fn high_load_loss(seed: u64) -> Result<LossSample, String> {
    let cfg = config(FlashGeometry::new(128, 32, 1024, 64, 100_000), Strategy::DummyRandom, seed);
    let q = cfg.gc_reclaim_fraction;
    let mut ftl = formatted(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ss = ftl.sector_size();

    ftl.unlock(&[DECOY, TRUE]).map_err(e2s)?;
    // Spread the erased pool so hidden pages do not cluster in a few blocks.
    while ftl.gc_hidden(true).map_err(e2s)?.blocks_erased > 0 {}
    let hidden: Vec<Vec<u8>> = (0..LOSS_HIDDEN).map(|_| sector(&mut rng, ss)).collect();
    for (lba, d) in hidden.iter().enumerate() {
        ftl.hidden_write_sector(lba as u32, d).map_err(e2s)?;
    }
    let g = *ftl.flash().geometry();
    let addrs: Vec<PhysPageAddr> = (0..g.total_pages())
        .map(|i| g.addr_of(i))
        .filter(|&a| matches!(ftl.page_status(a), Some((PageStatus::Used, Owner::Hidden(_)))))
        .collect();
    ensure(addrs.len() == LOSS_HIDDEN as usize, || format!("{} hidden pages", addrs.len()))?;
    let slot_pages: Vec<PhysPageAddr> = ftl.slot_blocks().and_then(|(_, h)| h).ok_or("no hidden slots")?
        .into_iter()
        .flat_map(|b| (0..g.pages_per_block).map(move |p| PhysPageAddr::new(b, p)))
        .collect();
    ftl.commit_shutdown().map_err(e2s)?;
    let written = ftl.snapshot();

    ftl.unlock(&[DECOY]).map_err(e2s)?;
    let mut lba = 0;
    while ftl.load_factor().unwrap() < cfg.load_high {
        ftl.write_sector(lba, &sector(&mut rng, ss)).map_err(e2s)?;
        lba += 1;
    }
    let filled = ftl.snapshot();
    let same = |a: &PhysPageAddr, x: &pdeftl_core::nand::FlashSnapshot, y: &pdeftl_core::nand::FlashSnapshot| {
        x.page(*a).unwrap().data == y.page(*a).unwrap().data
    };
    let intact = addrs.iter().chain(&slot_pages).all(|a| same(a, &written, &filled));
    ensure(intact && ftl.counters().hidden_risk_pages == 0, || "hidden pages reclaimed before the explicit pass".into())?;
    let r = ftl.gc_public().map_err(e2s)?;
    ensure(r.high_load_pass, || "no high-load pass".into())?;
    let after = ftl.snapshot();
    let pages = addrs.iter().filter(|a| !same(a, &filled, &after)).count() as u64;
    let slot_hit = slot_pages.iter().any(|a| !same(a, &filled, &after));
    ftl.commit_shutdown().map_err(e2s)?;

    let unreadable = match ftl.unlock(&[DECOY, TRUE]) {
        Ok(_) => hidden.iter().enumerate().filter(|(l, d)| ftl.read_sector(*l as u32).map_or(true, |got| &got != *d)).count() as u64,
        // Every hidden map slot that authenticated is gone.
        Err(FtlError::NoMatch) if slot_hit => LOSS_HIDDEN as u64,
        Err(e) => return Err(e.to_string()),
    };
    let map_lost = unreadable == LOSS_HIDDEN as u64 && pages < unreadable;
    ensure(unreadable == pages || (slot_hit && map_lost), || format!("{unreadable} sectors unreadable but {pages} pages reclaimed"))?;
    Ok(LossSample { pages, expected: q * LOSS_HIDDEN as f64, map_lost })
}

fn hidden_isolation(runs: &OracleRuns) -> Outcome {
    ensure(runs.failures.is_empty(), || "oracle runs failed, hidden loss not established".into())?;
    let (mut lost, mut expected, mut maps) = (0u64, 0.0, 0);
    for seed in 0..LOSS_SEEDS {
        let s = high_load_loss(1000 + seed).map_err(|e| format!("seed {seed}: {e}"))?;
        lost += s.pages;
        expected += s.expected;
        maps += u32::from(s.map_lost);
    }
    let rel = lost as f64 / expected - 1.0;
    let msg = format!(
        "below threshold: 0 of {} hidden writes lost; above: {lost} hidden pages reclaimed, expected {expected:.1} ({:+.1}%) over {LOSS_SEEDS} seeds, hidden map reclaimed in {maps}",
        runs.hidden_written,
        rel * 100.0
    );
    if rel.abs() <= 0.10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 4

fn format_randomness() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut n = 0;
    for (i, (nb, ppb, ps)) in [(64, 32, 1024), (128, 32, 1024), (96, 64, 2048), (64, 16, 4096)].into_iter().enumerate() {
        for seed in 0..3 {
            let cfg = config(FlashGeometry::new(nb, ppb, ps, 64, 10_000), Strategy::DummyRandom, 100 * i as u64 + seed);
            let snap = formatted(&cfg)?.snapshot();
            let r = device_battery(&snap, 2..nb, 0.01).map_err(e2s)?;
            ensure(r.aggregate.entropy > 7.9 && r.passed(), || {
                format!("{nb}x{ppb}x{ps} seed {seed}: entropy {:.5}, {} of {} allowed failures", r.aggregate.entropy, r.failures, r.allowed_failures)
            })?;
            worst = worst.min(r.aggregate.entropy);
            n += 1;
        }
    }
    Ok(format!("{n} devices, min aggregate entropy {worst:.5} bits/byte"))
}

// ---------------------------------------------------------------- 5

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cli_experiment(cfg: &str) -> Result<HashMap<String, String>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pdeftl"))
        .args(["--seed", "2024", "experiment"])
        .arg(repo_root().join("configs").join(cfg))
        .output()
        .map_err(e2s)?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    Ok(String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn field(kv: &HashMap<String, String>, k: &str) -> Result<f64, String> {
    kv.get(k).ok_or(format!("missing {k}"))?.parse().map_err(e2s)
}

fn deniability() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, cfg) in [("dummy", "dummy.cfg"), ("null", "null.cfg")] {
        let kv = cli_experiment(cfg)?;
        ensure(kv.get("strategy").map(String::as_str) == Some("DummyRandom"), || format!("{cfg} strategy"))?;
        ensure(field(&kv, "pairs")? >= 200.0, || format!("{cfg} has too few pairs"))?;
        let adv = field(&kv, "advantage")?;
        let half = 1.96 * (0.25 / field(&kv, "test")?).sqrt();
        ok &= adv <= 0.05;
        parts.push(format!("{name} advantage {adv:.4} (95% half-width {half:.3})"));
    }
    let kv = cli_experiment("baseline.cfg")?;
    ensure(kv.get("strategy").map(String::as_str) == Some("HiddenVolumeBaseline"), || "baseline.cfg strategy".into())?;
    let acc = field(&kv, "accuracy")?;
    ok &= acc >= 0.95;
    parts.push(format!("baseline accuracy {acc:.4}"));
    let msg = parts.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 6

fn overhead_accounting() -> Outcome {
    let mut cfg = config(FlashGeometry::new(1040, 64, 2048, 64, 100_000), Strategy::DummyRandom, 6);
    cfg.public_fraction = 0.2;
    cfg.hidden_fraction = 0.05;
    cfg.event_log = true;
    let mut ftl = formatted(&cfg)?;
    let base = ftl.metrics();
    ftl.take_events();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ss = ftl.sector_size();
    ftl.unlock(&[DECOY]).map_err(e2s)?;
    let cap = ftl.public_capacity();
    for _ in 0..10_000 {
        let lba = rng.gen_range(0..cap);
        ftl.write_sector(lba, &sector(&mut rng, ss)).map_err(e2s)?;
    }
    ftl.commit_shutdown().map_err(e2s)?;
    let m = ftl.metrics();
    let c = &m.counters;
    ensure(c.public_writes == 10_000, || format!("{} public writes", c.public_writes))?;
    let ratio = m.dummy_overhead_ratio;
    ensure((ratio / cfg.dummy_mean - 1.0).abs() <= 0.05, || format!("dummy ratio {ratio:.4}"))?;
    let pages = c.data_pages + c.dummy_pages + c.relocation_pages;
    ensure(pages as f64 == m.write_amplification * c.logical_writes() as f64, || "write amplification identity".into())?;
    ensure(c.data_pages == c.logical_writes(), || "data pages differ from sector writes".into())?;
    ensure(m.flash_programs == c.programmed_total(), || format!("{} programs vs {} accounted", m.flash_programs, c.programmed_total()))?;
    let ev = ftl.take_events();
    let count = |op: EventOp, classes: &[EventClass]| ev.iter().filter(|e| e.op == op && classes.contains(&e.class)).count() as u64;
    let delta = |a: u64, b: u64| a - b;
    let bc = &base.counters;
    let by_class = [
        ("data", count(EventOp::Program, &[EventClass::PublicData, EventClass::HiddenData]), delta(c.data_pages, bc.data_pages)),
        ("dummy", count(EventOp::Program, &[EventClass::Dummy]), delta(c.dummy_pages, bc.dummy_pages)),
        ("relocation", count(EventOp::Program, &[EventClass::Relocation]), delta(c.relocation_pages, bc.relocation_pages)),
        (
            "metadata",
            count(EventOp::Program, &[EventClass::MapCommit, EventClass::SlotFill, EventClass::Superblock]),
            delta(c.metadata_pages, bc.metadata_pages),
        ),
        ("programs", ev.iter().filter(|e| e.op == EventOp::Program).count() as u64, delta(m.flash_programs, base.flash_programs)),
        ("erases", ev.iter().filter(|e| e.op == EventOp::Erase).count() as u64, delta(m.flash_erases, base.flash_erases)),
    ];
    for (name, events, counter) in by_class {
        ensure(events == counter, || format!("{name}: {events} events vs counter {counter}"))?;
    }
    Ok(format!(
        "dummy ratio {ratio:.4}, WA {:.4} = ({} data + {} dummy + {} relocation) / {}",
        m.write_amplification,
        c.data_pages,
        c.dummy_pages,
        c.relocation_pages,
        c.logical_writes()
    ))
}

// ---------------------------------------------------------------- 7

const WEAR_ROUNDS: u32 = 15;

/// Alternating public and hidden sessions over a fixed working set.
fn wear_run(strategy: Strategy, seed: u64) -> Result<WearStats, String> {
    let cfg = config(FlashGeometry::new(64, 32, 1024, 64, 100_000), strategy, seed);
    let mut ftl = formatted(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ss = ftl.sector_size();
    let lbas = ftl.public_capacity().min(500);
    for _ in 0..WEAR_ROUNDS {
        ftl.unlock(&[DECOY]).map_err(e2s)?;
        for _ in 0..250 {
            let lba = rng.gen_range(0..lbas);
            ftl.write_sector(lba, &sector(&mut rng, ss)).map_err(e2s)?;
        }
        ftl.commit_shutdown().map_err(e2s)?;
        ftl.unlock(&[DECOY, TRUE]).map_err(e2s)?;
        for _ in 0..4 {
            let lba = rng.gen_range(0..40);
            ftl.hidden_write_sector(lba, &sector(&mut rng, ss)).map_err(e2s)?;
        }
        while ftl.gc_hidden(true).map_err(e2s)?.blocks_erased > 0 {}
        ftl.commit_shutdown().map_err(e2s)?;
    }
    Ok(ftl.metrics().wear)
}

fn wear_leveling() -> Outcome {
    let dummy = wear_run(Strategy::DummyRandom, 7)?;
    let base = wear_run(Strategy::HiddenVolumeBaseline, 7)?;
    let msg = format!(
        "random placement: mean {:.2} erasures, CV {:.4}; head/tail baseline: mean {:.2}, CV {:.4}",
        dummy.mean, dummy.cv, base.mean, base.cv
    );
    if dummy.mean >= 5.0 && dummy.cv < 0.25 && base.cv > dummy.cv.max(0.25) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------- 8

fn crash_point(seed: u64) -> Result<(), String> {
    let mut w = Workload::new(seed)?;
    w.run(1500, 0.0)?;
    let hidden = w.rng.gen_bool(0.4);
    w.unlock(hidden)?;
    let k = w.rng.gen_range(1..200);
    for _ in 0..k {
        if !w.step()? {
            break;
        }
    }
    let free_before = w.ftl.free_pages().ok_or("no session")?;
    w.ftl.crash();
    let cfg = w.ftl.config().clone();

    let mut both = Ftl::open(w.ftl.flash().clone(), cfg.clone()).map_err(e2s)?;
    ensure(both.unlock(&[DECOY]) == Err(FtlError::NeedsRecovery), || "unlock after crash".into())?;
    ensure(both.recover(&[DECOY, TRUE]).map_err(e2s)? == ModeKind::Hidden, || "recover(both) mode".into())?;
    w.oracle.check_all(&both)?;
    both.check_invariants()?;
    both.commit_shutdown().map_err(e2s)?;
    both.unlock(&[DECOY]).map_err(e2s)?;
    w.oracle.check_all(&both)?;

    let mut decoy = Ftl::open(w.ftl.flash().clone(), cfg).map_err(e2s)?;
    ensure(decoy.recover(&[DECOY]).map_err(e2s)? == ModeKind::Public, || "recover(decoy) mode".into())?;
    w.oracle.check_all(&decoy)?;
    let g = *decoy.flash().geometry();
    for i in 0..g.total_pages() {
        let a = g.addr_of(i);
        if let Some((PageStatus::Used, owner)) = decoy.page_status(a) {
            ensure(matches!(owner, Owner::Public(_) | Owner::Slot), || format!("{a} still used by {owner:?}"))?;
        }
    }
    let free_after = decoy.free_pages().ok_or("no session")?;
    ensure(free_after >= free_before, || format!("free pages fell from {free_before} to {free_after}"))?;
    decoy.commit_shutdown().map_err(e2s)?;
    decoy.unlock(&[DECOY]).map_err(e2s)?;
    w.oracle.check_all(&decoy)
}

fn crash_recovery() -> Outcome {
    for seed in 0..50 {
        crash_point(500 + seed).map_err(|e| format!("scenario {seed}: {e}"))?;
    }
    Ok("50 crash points, both keys and decoy only".into())
}

// ---------------------------------------------------------------- 9

fn unlock_hygiene() -> Result<usize, String> {
    let mut n = 0;
    for strategy in [Strategy::DummyRandom, Strategy::HiddenVolumeBaseline] {
        let cfg = config(FlashGeometry::new(64, 32, 1024, 64, 100_000), strategy, 9);
        let mut ftl = formatted(&cfg)?;
        ftl.unlock(&[DECOY, TRUE]).map_err(e2s)?;
        ftl.hidden_write_sector(3, &[7; 1024]).map_err(e2s)?;
        ftl.commit_shutdown().map_err(e2s)?;
        let before = ftl.snapshot();
        let bad_decoy = format!("{DECOY}!");
        let bad_true = format!("{TRUE}!");
        let attempts: [&[&str]; 6] =
            [&["wrong"], &[TRUE], &["wrong", "worse"], &[DECOY, &bad_true], &[&bad_decoy, TRUE], &[TRUE, DECOY]];
        for a in attempts {
            ensure(ftl.unlock(a).is_err(), || "bad credentials accepted".into())?;
            ensure(ftl.snapshot().as_bytes() == before.as_bytes(), || "failed unlock mutated flash".into())?;
            n += 1;
        }
    }
    Ok(n)
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    std::fs::read_dir(dir)
        .unwrap()
        .flat_map(|e| {
            let p = e.unwrap().path();
            if p.is_dir() {
                files_under(&p)
            } else {
                vec![p]
            }
        })
        .collect()
}

fn cli_scan() -> Result<usize, String> {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let d = dir.path();
    std::fs::write(d.join("dev.cfg"), "num_blocks = 64\npage_size = 1024\nkdf_iterations = 10\nmap_slots = 4\n").map_err(e2s)?;
    std::fs::write(d.join("t.trace"), "SESSION public\nW 0 1\nSHUTDOWN\nSNAPSHOT a\nSESSION hidden\nHW 0 2\nIDLE\nSHUTDOWN\nSNAPSHOT b\nSESSION public\nCRASH\n")
        .map_err(e2s)?;
    let mut outputs = Vec::new();
    let runs: [(&[&str], &str, &str); 9] = [
        (&["--config", "dev.cfg", "format", "--device", "d.img"], DECOY, TRUE),
        (&["--config", "dev.cfg", "run", "t.trace", "--device", "d.img", "--events", "e.csv"], DECOY, TRUE),
        (&["--config", "dev.cfg", "recover", "--device", "d.img", "--keys", "both"], DECOY, TRUE),
        (&["--config", "dev.cfg", "--pretty", "metrics", "--device", "d.img"], DECOY, TRUE),
        (&["diff", "a.snap", "b.snap"], DECOY, TRUE),
        (&["--pretty", "diff", "--features", "a.snap", "b.snap"], DECOY, TRUE),
        (&["snapshot", "s.snap", "--device", "d.img"], DECOY, TRUE),
        (&["--config", "dev.cfg", "run", "t.trace", "--device", "d.img"], "not-the-decoy", "not-the-true"),
        (&["--config", "dev.cfg", "recover", "--device", "d.img"], TRUE, DECOY),
    ];
    for (args, dp, tp) in runs {
        let o = Command::new(env!("CARGO_BIN_EXE_pdeftl"))
            .current_dir(d)
            .args(args)
            .env("PDEFTL_DECOY_PASSWORD", dp)
            .env("PDEFTL_TRUE_PASSWORD", tp)
            .stdin(std::process::Stdio::null())
            .output()
            .map_err(e2s)?;
        outputs.push(o.stdout);
        outputs.push(o.stderr);
    }
    for f in files_under(d) {
        outputs.push(std::fs::read(f).map_err(e2s)?);
    }
    for secret in [DECOY, TRUE] {
        let hex: String = secret.bytes().map(|b| format!("{b:02x}")).collect();
        for needle in [secret.as_bytes(), hex.as_bytes()] {
            let leaked = outputs.iter().any(|o| o.windows(needle.len()).any(|w| w == needle));
            ensure(!leaked, || "a password appears in CLI output or files".into())?;
        }
    }
    Ok(outputs.len())
}

fn secret_hygiene() -> Outcome {
    let attempts = unlock_hygiene()?;
    let scanned = cli_scan()?;
    Ok(format!("{attempts} failed unlocks left flash byte-identical; {scanned} CLI outputs and files scanned"))
}

// ------------------------------------------------------------------ main

fn main() {
    let mut failed = 0;
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(m) => println!("criterion {n} {name}: PASS ({secs:.2}s) {m}"),
            Err(m) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({secs:.2}s) {m}");
            }
        }
    };
    report(1, "flash semantics", &mut || {
        let t = Instant::now();
        let m = flash_semantics()?;
        let s = t.elapsed().as_secs_f64();
        ensure(s < 1.0, || format!("took {s:.2}s"))?;
        Ok(m)
    });
    let t = Instant::now();
    let runs = oracle_runs();
    let oracle_secs = t.elapsed().as_secs_f64();
    report(2, "read-your-writes oracle", &mut || read_your_writes(&runs).map(|m| format!("{m} in {oracle_secs:.1}s")));
    report(3, "hidden isolation", &mut || hidden_isolation(&runs));
    report(4, "format randomness", &mut format_randomness);
    report(5, "deniability", &mut deniability);
    report(6, "overhead accounting", &mut overhead_accounting);
    report(7, "wear leveling", &mut wear_leveling);
    report(8, "crash recovery", &mut crash_recovery);
    report(9, "secret hygiene", &mut secret_hygiene);
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all 9 criteria passed");
}
