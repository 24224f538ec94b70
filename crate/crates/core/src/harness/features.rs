//! Features an adversary computes from the difference of two raw snapshots.
//!
//! Superblock blocks are skipped: they change on every commit whatever
//! the workload, and their plaintext header reveals nothing extra.

use crate::ftl::SUPERBLOCK_BLOCKS;
use crate::nand::{diff_snapshots, ChangeClass, DiffReport, FlashGeometry, FlashSnapshot, NandError};

use super::scenario::Variant;

/// Equal-width block regions in the changed-block histogram.
pub const HISTOGRAM_BINS: usize = 8;

pub const FEATURE_NAMES: [&str; 18] = [
    "changed_pages",
    "changed_blocks",
    "programmed",
    "erased",
    "content_changed",
    "wear_changed_blocks",
    "dispersion",
    "tail_fraction",
    "tail_blocks",
    "max_block",
    "hist0",
    "hist1",
    "hist2",
    "hist3",
    "hist4",
    "hist5",
    "hist6",
    "hist7",
];

pub const FEATURE_COUNT: usize = FEATURE_NAMES.len();

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

fn counted(block: u32) -> bool {
    !SUPERBLOCK_BLOCKS.contains(&block)
}

/// Pure function of the diff. Block positions are normalized by the
/// device's block count, so `dispersion`, `tail_fraction` and `max_block`
/// lie in [0, 1].
///
/// - `dispersion`: standard deviation of the block index over changed pages.
/// - `tail_fraction`: share of changed pages in the upper half of the device.
/// - `tail_blocks`: changed blocks in the upper half.
/// - `histN`: changed blocks in the N-th eighth of the device.
pub fn extract_features(diff: &DiffReport, geometry: &FlashGeometry) -> FeatureVector {
    let nb = geometry.num_blocks as f64;
    let half = geometry.num_blocks.div_ceil(2);
    let changes: Vec<_> = diff.changes.iter().filter(|c| counted(c.addr.block)).collect();
    let mut f = [0.0; FEATURE_COUNT];
    let n = changes.len() as f64;
    f[0] = n;
    let blocks: Vec<u32> = (0..geometry.num_blocks)
        .filter(|&b| counted(b) && diff.per_block.get(b as usize).copied().unwrap_or(0) > 0)
        .collect();
    f[1] = blocks.len() as f64;
    f[2] = changes.iter().filter(|c| c.class == ChangeClass::Programmed).count() as f64;
    f[3] = changes.iter().filter(|c| c.class == ChangeClass::Erased).count() as f64;
    f[4] = changes.iter().filter(|c| c.class == ChangeClass::ContentChanged).count() as f64;
    f[5] = diff.wear_changed.iter().filter(|&&b| counted(b)).count() as f64;
    if n > 0.0 {
        let pos: Vec<f64> = changes.iter().map(|c| c.addr.block as f64 / nb).collect();
        let mean = pos.iter().sum::<f64>() / n;
        f[6] = (pos.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt();
        f[7] = changes.iter().filter(|c| c.addr.block >= half).count() as f64 / n;
    }
    f[8] = blocks.iter().filter(|&&b| b >= half).count() as f64;
    f[9] = blocks.last().map_or(0.0, |&b| b as f64 / nb);
    for &b in &blocks {
        let bin = (b as usize * HISTOGRAM_BINS) / geometry.num_blocks as usize;
        f[10 + bin] += 1.0;
    }
    FeatureVector(f)
}

/// Features of the interval between two serialized snapshots.
pub fn features_between(before: &FlashSnapshot, after: &FlashSnapshot) -> Result<FeatureVector, NandError> {
    let diff = diff_snapshots(before, after)?;
    Ok(extract_features(&diff, &diff.geometry))
}

/// One observed interval of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub variant: Variant,
    pub features: FeatureVector,
}

/// `trial,variant,<feature names...>`
pub fn trial_csv_header() -> String {
    let mut s = String::from("trial,variant");
    for n in FEATURE_NAMES {
        s.push(',');
        s.push_str(n);
    }
    s
}

impl TrialResult {
    pub fn to_csv_row(&self) -> String {
        let mut s = format!("{},{}", self.trial, self.variant.as_str());
        for x in self.features.0 {
            s.push_str(&format!(",{x}"));
        }
        s
    }
}

pub fn trials_to_csv(trials: &[TrialResult]) -> String {
    let mut out = trial_csv_header();
    out.push('\n');
    for t in trials {
        out.push_str(&t.to_csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nand::{FlashArray, PhysPageAddr};

    fn geometry() -> FlashGeometry {
        FlashGeometry::new(16, 8, 512, 64, 1000)
    }

    #[test]
    fn empty_diff_is_all_zero() {
        let flash = FlashArray::new(geometry()).unwrap();
        let s = flash.take_snapshot();
        let f = features_between(&s, &s).unwrap();
        assert!(f.is_zero());
    }

    #[test]
    fn five_pages_in_one_block() {
        let mut flash = FlashArray::new(geometry()).unwrap();
        let a = flash.take_snapshot();
        for p in 0..5 {
            flash.program_page(PhysPageAddr::new(12, p), &[0u8; 512], &[0u8; 64]).unwrap();
        }
        let f = features_between(&a, &flash.take_snapshot()).unwrap();
        assert_eq!(f.get("changed_pages"), Some(5.0));
        assert_eq!(f.get("programmed"), Some(5.0));
        assert_eq!(f.get("changed_blocks"), Some(1.0));
        assert_eq!(f.get("dispersion"), Some(0.0));
        assert_eq!(f.get("tail_fraction"), Some(1.0));
        assert_eq!(f.get("hist6"), Some(1.0));
        assert_eq!(f.get("max_block"), Some(12.0 / 16.0));
    }

    #[test]
    fn superblock_changes_are_ignored() {
        let mut flash = FlashArray::new(geometry()).unwrap();
        let a = flash.take_snapshot();
        flash.program_page(PhysPageAddr::new(0, 0), &[1u8; 512], &[1u8; 64]).unwrap();
        flash.erase_block(1).unwrap();
        assert!(features_between(&a, &flash.take_snapshot()).unwrap().is_zero());
    }

    #[test]
    fn dispersion_matches_population_stdev() {
        let mut flash = FlashArray::new(geometry()).unwrap();
        let a = flash.take_snapshot();
        for b in [4u32, 8, 12] {
            flash.program_page(PhysPageAddr::new(b, 0), &[0u8; 512], &[0u8; 64]).unwrap();
        }
        let f = features_between(&a, &flash.take_snapshot()).unwrap();
        // positions 0.25, 0.5, 0.75
        let want = ((0.0625 * 2.0) / 3.0f64).sqrt();
        assert!((f.get("dispersion").unwrap() - want).abs() < 1e-12);
        assert!((f.get("tail_fraction").unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f.get("tail_blocks"), Some(2.0));
    }

    #[test]
    fn csv_row_has_header_width() {
        let t = TrialResult { trial: 3, variant: Variant::WithHidden, features: FeatureVector([0.5; FEATURE_COUNT]) };
        let csv = trials_to_csv(&[t]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
        assert!(lines[1].starts_with("3,with-hidden,0.5"));
    }
}
