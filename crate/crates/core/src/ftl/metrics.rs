use std::fmt::Write as _;

/// Raw counters kept by one simulator instance across sessions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub public_writes: u64,
    pub hidden_writes: u64,
    /// Pages programmed for public and hidden sector writes.
    pub data_pages: u64,
    pub dummy_pages: u64,
    /// Subset of `dummy_pages` issued by idle bursts.
    pub idle_dummy_pages: u64,
    /// Dummies dropped because a write burst hit the free-page floor.
    pub dummies_truncated: u64,
    pub relocation_pages: u64,
    /// Superblock and map-commit pages.
    pub metadata_pages: u64,
    pub format_pages: u64,
    pub gc_public_runs: u64,
    pub gc_hidden_runs: u64,
    pub gc_erases: u64,
    /// Unattributed pages reclaimed by public-mode GC above the load
    /// threshold; each may have held hidden data.
    pub hidden_risk_pages: u64,
    /// Hidden map entries found pointing at overwritten pages at unlock.
    pub hidden_entries_dropped: u64,
    pub volume_collisions: u64,
    pub recoveries: u64,
}

const COUNTER_KEYS: [&str; 16] = [
    "public_writes",
    "hidden_writes",
    "data_pages",
    "dummy_pages",
    "idle_dummy_pages",
    "dummies_truncated",
    "relocation_pages",
    "metadata_pages",
    "format_pages",
    "gc_public_runs",
    "gc_hidden_runs",
    "gc_erases",
    "hidden_risk_pages",
    "hidden_entries_dropped",
    "volume_collisions",
    "recoveries",
];

impl Counters {
    fn fields(&self) -> [u64; 16] {
        [
            self.public_writes,
            self.hidden_writes,
            self.data_pages,
            self.dummy_pages,
            self.idle_dummy_pages,
            self.dummies_truncated,
            self.relocation_pages,
            self.metadata_pages,
            self.format_pages,
            self.gc_public_runs,
            self.gc_hidden_runs,
            self.gc_erases,
            self.hidden_risk_pages,
            self.hidden_entries_dropped,
            self.volume_collisions,
            self.recoveries,
        ]
    }

    fn field_mut(&mut self, key: &str) -> Option<&mut u64> {
        Some(match key {
            "public_writes" => &mut self.public_writes,
            "hidden_writes" => &mut self.hidden_writes,
            "data_pages" => &mut self.data_pages,
            "dummy_pages" => &mut self.dummy_pages,
            "idle_dummy_pages" => &mut self.idle_dummy_pages,
            "dummies_truncated" => &mut self.dummies_truncated,
            "relocation_pages" => &mut self.relocation_pages,
            "metadata_pages" => &mut self.metadata_pages,
            "format_pages" => &mut self.format_pages,
            "gc_public_runs" => &mut self.gc_public_runs,
            "gc_hidden_runs" => &mut self.gc_hidden_runs,
            "gc_erases" => &mut self.gc_erases,
            "hidden_risk_pages" => &mut self.hidden_risk_pages,
            "hidden_entries_dropped" => &mut self.hidden_entries_dropped,
            "volume_collisions" => &mut self.volume_collisions,
            "recoveries" => &mut self.recoveries,
            _ => return None,
        })
    }

    pub fn logical_writes(&self) -> u64 {
        self.public_writes + self.hidden_writes
    }

    /// Every page the FTL has programmed, by class.
    pub fn programmed_total(&self) -> u64 {
        self.format_pages + self.metadata_pages + self.data_pages + self.dummy_pages + self.relocation_pages
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in COUNTER_KEYS.iter().zip(self.fields()) {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }

    /// Reads counters written by [`to_kv`](Self::to_kv); unknown keys are
    /// ignored so a full metrics report parses too.
    pub fn from_kv(text: &str) -> Result<Self, String> {
        let mut c = Counters::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| format!("malformed line `{line}`"))?;
            if let Some(slot) = c.field_mut(k.trim()) {
                *slot = v.trim().parse().map_err(|_| format!("bad value for `{}`", k.trim()))?;
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WearStats {
    pub blocks: usize,
    pub mean: f64,
    pub stdev: f64,
    pub cv: f64,
    pub min: u32,
    pub max: u32,
}

impl WearStats {
    /// Population statistics over the given erase counts.
    pub fn from_counts(counts: &[u32]) -> Self {
        if counts.is_empty() {
            return Self::default();
        }
        let n = counts.len() as f64;
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
        let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
        let stdev = var.sqrt();
        Self {
            blocks: counts.len(),
            mean,
            stdev,
            cv: if mean > 0.0 { stdev / mean } else { 0.0 },
            min: *counts.iter().min().unwrap(),
            max: *counts.iter().max().unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub counters: Counters,
    /// (data + dummy + relocation pages) / logical sectors written.
    pub write_amplification: f64,
    pub dummy_overhead_ratio: f64,
    pub load_factor: f64,
    /// Erase counts over data blocks (superblock and map-slot blocks excluded).
    pub wear: WearStats,
    pub flash_programs: u64,
    pub flash_erases: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MetricsReport {
    pub(crate) fn new(counters: Counters, load_factor: f64, wear: WearStats, programs: u64, erases: u64) -> Self {
        Self {
            write_amplification: ratio(
                counters.data_pages + counters.dummy_pages + counters.relocation_pages,
                counters.logical_writes(),
            ),
            dummy_overhead_ratio: ratio(counters.dummy_pages, counters.public_writes),
            load_factor,
            wear,
            flash_programs: programs,
            flash_erases: erases,
            counters,
        }
    }

    fn derived(&self) -> [(&'static str, String); 12] {
        [
            ("write_amplification", format!("{:.6}", self.write_amplification)),
            ("dummy_overhead_ratio", format!("{:.6}", self.dummy_overhead_ratio)),
            ("load_factor", format!("{:.6}", self.load_factor)),
            ("wear_blocks", self.wear.blocks.to_string()),
            ("wear_mean", format!("{:.6}", self.wear.mean)),
            ("wear_stdev", format!("{:.6}", self.wear.stdev)),
            ("wear_cv", format!("{:.6}", self.wear.cv)),
            ("wear_min", self.wear.min.to_string()),
            ("wear_max", self.wear.max.to_string()),
            ("flash_programs", self.flash_programs.to_string()),
            ("flash_erases", self.flash_erases.to_string()),
            ("hidden_risk_pages", self.counters.hidden_risk_pages.to_string()),
        ]
    }

    fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .derived()
            .into_iter()
            .filter(|(k, _)| *k != "hidden_risk_pages")
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        out.extend(
            COUNTER_KEYS
                .iter()
                .zip(self.counters.fields())
                .map(|(k, v)| (k.to_string(), v.to_string())),
        );
        out
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }

    pub fn csv_header() -> String {
        let empty = MetricsReport::new(Counters::default(), 0.0, WearStats::default(), 0, 0);
        empty.pairs().into_iter().map(|(k, _)| k).collect::<Vec<_>>().join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.pairs().into_iter().map(|(_, v)| v).collect::<Vec<_>>().join(",")
    }
}
