//! Byte-level randomness tests over snapshot regions.

use std::ops::Range;

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, Normal};
use thiserror::Error;

use crate::crypto::byte_entropy;
use crate::nand::{FlashSnapshot, PhysPageAddr};

pub const DEFAULT_MIN_ENTROPY: f64 = 7.9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BatteryError {
    #[error("region is empty")]
    EmptyRegion,
    #[error("region lies outside the device")]
    OutOfRange,
}

/// Pages to test; data and OOB bytes of each page are concatenated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Region {
    Blocks(Range<u32>),
    Pages(Vec<PhysPageAddr>),
}

impl Region {
    fn addrs(&self, snapshot: &FlashSnapshot) -> Result<Vec<PhysPageAddr>, BatteryError> {
        let g = snapshot.geometry();
        let addrs: Vec<PhysPageAddr> = match self {
            Region::Blocks(r) => {
                if r.end > g.num_blocks {
                    return Err(BatteryError::OutOfRange);
                }
                r.clone().flat_map(|b| g.block_pages(b)).map(|i| g.addr_of(i)).collect()
            }
            Region::Pages(p) => {
                if p.iter().any(|a| !g.contains(*a)) {
                    return Err(BatteryError::OutOfRange);
                }
                p.clone()
            }
        };
        if addrs.is_empty() {
            return Err(BatteryError::EmptyRegion);
        }
        Ok(addrs)
    }
}

pub fn region_bytes(snapshot: &FlashSnapshot, region: &Region) -> Result<Vec<u8>, BatteryError> {
    let g = snapshot.geometry();
    let mut out = Vec::new();
    for a in region.addrs(snapshot)? {
        let v = snapshot.page_at(g.index_of(a));
        out.extend_from_slice(v.data);
        out.extend_from_slice(v.oob);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryReport {
    pub bytes: usize,
    pub alpha: f64,
    /// Shannon entropy of the byte histogram, bits per byte.
    pub entropy: f64,
    pub entropy_pass: bool,
    pub chi_square: f64,
    pub chi_square_p: f64,
    pub chi_square_pass: bool,
    /// Lag-1 serial correlation coefficient of consecutive bytes.
    pub serial_correlation: f64,
    pub serial_p: f64,
    pub serial_pass: bool,
}

impl BatteryReport {
    pub fn passed(&self) -> bool {
        self.entropy_pass && self.chi_square_pass && self.serial_pass
    }

    pub fn csv_header() -> &'static str {
        "bytes,entropy,entropy_pass,chi_square,chi_square_p,chi_square_pass,serial_correlation,serial_p,serial_pass"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.6},{},{:.4},{:.6},{},{:.6},{:.6},{}",
            self.bytes,
            self.entropy,
            self.entropy_pass,
            self.chi_square,
            self.chi_square_p,
            self.chi_square_pass,
            self.serial_correlation,
            self.serial_p,
            self.serial_pass
        )
    }
}

fn histogram(data: &[u8]) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &b in data {
        h[b as usize] += 1;
    }
    h
}

/// Pearson statistic against the uniform byte distribution, df = 255.
pub fn chi_square_uniform(data: &[u8]) -> (f64, f64) {
    let e = data.len() as f64 / 256.0;
    let x: f64 = histogram(data).iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new(255.0).unwrap().cdf(x);
    (x, p)
}

/// Cyclic lag-1 correlation coefficient; `None` when the data has no
/// variance.
pub fn serial_correlation(data: &[u8]) -> Option<f64> {
    let n = data.len() as f64;
    if data.len() < 2 {
        return None;
    }
    let (mut s, mut s2, mut sxy) = (0.0, 0.0, 0.0);
    for (i, &b) in data.iter().enumerate() {
        let x = b as f64;
        let y = data[(i + 1) % data.len()] as f64;
        s += x;
        s2 += x * x;
        sxy += x * y;
    }
    let den = n * s2 - s * s;
    (den > 0.0).then(|| (n * sxy - s * s) / den)
}

fn normal_two_sided(z: f64) -> f64 {
    (2.0 * (1.0 - Normal::new(0.0, 1.0).unwrap().cdf(z.abs()))).clamp(0.0, 1.0)
}

pub fn battery_bytes(data: &[u8], alpha: f64, min_entropy: f64) -> Result<BatteryReport, BatteryError> {
    if data.is_empty() {
        return Err(BatteryError::EmptyRegion);
    }
    let entropy = byte_entropy(data);
    let (chi_square, chi_square_p) = chi_square_uniform(data);
    let (serial_correlation, serial_p) = match serial_correlation(data) {
        Some(r) => (r, normal_two_sided(r * (data.len() as f64).sqrt())),
        None => (1.0, 0.0),
    };
    Ok(BatteryReport {
        bytes: data.len(),
        alpha,
        entropy,
        entropy_pass: entropy > min_entropy,
        chi_square,
        chi_square_p,
        chi_square_pass: chi_square_p >= alpha,
        serial_correlation,
        serial_p,
        serial_pass: serial_p >= alpha,
    })
}

pub fn randomness_battery(snapshot: &FlashSnapshot, region: &Region, alpha: f64) -> Result<BatteryReport, BatteryError> {
    battery_bytes(&region_bytes(snapshot, region)?, alpha, DEFAULT_MIN_ENTROPY)
}

/// Chi-square and serial tests per block of `blocks`, plus the entropy of
/// the whole range.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceBattery {
    pub aggregate: BatteryReport,
    pub per_block: Vec<(u32, BatteryReport)>,
    /// Failed block-level tests (chi-square and serial counted separately).
    pub failures: usize,
    /// Most failures expected by chance at the 99.9% level.
    pub allowed_failures: usize,
}

impl DeviceBattery {
    pub fn passed(&self) -> bool {
        self.aggregate.passed() && self.failures <= self.allowed_failures
    }
}

/// Upper 99.9% quantile of Binomial(tests, alpha).
pub fn allowed_failures(tests: usize, alpha: f64) -> usize {
    if tests == 0 {
        return 0;
    }
    let b = Binomial::new(alpha, tests as u64).unwrap();
    (0..=tests as u64).find(|&k| b.cdf(k) >= 0.999).unwrap_or(tests as u64) as usize
}

pub fn device_battery(snapshot: &FlashSnapshot, blocks: Range<u32>, alpha: f64) -> Result<DeviceBattery, BatteryError> {
    let aggregate = randomness_battery(snapshot, &Region::Blocks(blocks.clone()), alpha)?;
    let mut per_block = Vec::new();
    for b in blocks {
        let data = region_bytes(snapshot, &Region::Blocks(b..b + 1))?;
        // Per-block entropy is biased low by the small sample; the entropy
        // bar applies to the aggregate only.
        per_block.push((b, battery_bytes(&data, alpha, 0.0)?));
    }
    let failures = per_block.iter().map(|(_, r)| (!r.chi_square_pass) as usize + (!r.serial_pass) as usize).sum();
    let allowed = allowed_failures(2 * per_block.len(), alpha);
    Ok(DeviceBattery { aggregate, per_block, failures, allowed_failures: allowed })
}

/// Two-sample comparison of byte populations.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationComparison {
    /// Chi-square test of homogeneity of the two byte histograms.
    pub frequency_chi_square: f64,
    pub frequency_p: f64,
    /// z-test on the difference of lag-1 serial correlations.
    pub serial_z: f64,
    pub serial_p: f64,
    /// Welch test on the difference of mean byte values.
    pub mean_p: f64,
}

impl PopulationComparison {
    pub fn separates(&self, alpha: f64) -> bool {
        self.frequency_p < alpha || self.serial_p < alpha || self.mean_p < alpha
    }
}

fn mean_var(data: &[u8]) -> (f64, f64) {
    let n = data.len() as f64;
    let m = data.iter().map(|&b| b as f64).sum::<f64>() / n;
    let v = data.iter().map(|&b| (b as f64 - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v)
}

pub fn compare_populations(a: &[u8], b: &[u8]) -> Result<PopulationComparison, BatteryError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(BatteryError::EmptyRegion);
    }
    let (ha, hb) = (histogram(a), histogram(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let mut x = 0.0;
    let mut bins = 0;
    for k in 0..256 {
        let col = (ha[k] + hb[k]) as f64;
        if col == 0.0 {
            continue;
        }
        bins += 1;
        for (o, rowsum) in [(ha[k] as f64, na), (hb[k] as f64, nb)] {
            let e = rowsum * col / n;
            x += (o - e).powi(2) / e;
        }
    }
    let frequency_p = if bins > 1 { 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(x) } else { 1.0 };
    let ra = serial_correlation(a).unwrap_or(1.0);
    let rb = serial_correlation(b).unwrap_or(1.0);
    let serial_z = (ra - rb) / (1.0 / na + 1.0 / nb).sqrt();
    let ((ma, va), (mb, vb)) = (mean_var(a), mean_var(b));
    let se = (va / na + vb / nb).sqrt();
    let mean_p = if se > 0.0 { normal_two_sided((ma - mb) / se) } else if ma == mb { 1.0 } else { 0.0 };
    Ok(PopulationComparison {
        frequency_chi_square: x,
        frequency_p,
        serial_z,
        serial_p: normal_two_sided(serial_z),
        mean_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::random_page;
    use crate::nand::{FlashArray, FlashGeometry};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<u8> {
        random_page(&mut ChaCha8Rng::seed_from_u64(seed), n)
    }

    #[test]
    fn erased_region_fails() {
        let flash = FlashArray::new(FlashGeometry::new(8, 4, 512, 16, 100)).unwrap();
        let r = randomness_battery(&flash.take_snapshot(), &Region::Blocks(2..4), 0.01).unwrap();
        assert!(r.entropy < 1e-9);
        assert!(!r.entropy_pass && !r.chi_square_pass && !r.serial_pass);
        assert!(!r.passed());
    }

    #[test]
    fn empty_region_is_an_error() {
        let flash = FlashArray::new(FlashGeometry::new(8, 4, 512, 16, 100)).unwrap();
        let s = flash.take_snapshot();
        assert_eq!(randomness_battery(&s, &Region::Blocks(3..3), 0.01), Err(BatteryError::EmptyRegion));
        assert_eq!(randomness_battery(&s, &Region::Pages(vec![]), 0.01), Err(BatteryError::EmptyRegion));
        assert_eq!(randomness_battery(&s, &Region::Blocks(0..9), 0.01), Err(BatteryError::OutOfRange));
    }

    #[test]
    fn random_bytes_pass() {
        let r = battery_bytes(&random(1 << 16, 1), 0.01, DEFAULT_MIN_ENTROPY).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn chi_square_reference() {
        // Each byte value exactly once: statistic 0, p = 1.
        let all: Vec<u8> = (0..=255).collect();
        let (x, p) = chi_square_uniform(&all);
        assert_eq!(x, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
        // Two values only: 254 empty bins with e = 1/128 ... statistic n*(256/2 - 1).
        let two = vec![0u8, 1u8].repeat(128);
        let (x, _) = chi_square_uniform(&two);
        assert!((x - 256.0 * 127.0).abs() < 1e-9);
    }

    #[test]
    fn serial_correlation_reference() {
        assert_eq!(serial_correlation(&[7; 100]), None);
        // Alternating 0/255 cycles perfectly anti-correlated.
        let alt = vec![0u8, 255].repeat(50);
        assert!((serial_correlation(&alt).unwrap() + 1.0).abs() < 1e-12);
        let ramp: Vec<u8> = (0..=255).collect();
        assert!(serial_correlation(&ramp).unwrap() > 0.9);
    }

    #[test]
    fn allowance_matches_binomial_tail() {
        assert_eq!(allowed_failures(0, 0.01), 0);
        // P(X <= 0) = 0.99 < 0.999, P(X <= 1) = 0.99995.
        assert_eq!(allowed_failures(1, 0.01), 1);
        let k = allowed_failures(250, 0.01);
        assert!((5..=9).contains(&k), "{k}");
    }

    #[test]
    fn same_source_populations_do_not_separate() {
        let c = compare_populations(&random(50_000, 2), &random(30_000, 3)).unwrap();
        assert!(!c.separates(0.001), "{c:?}");
        let skewed: Vec<u8> = random(30_000, 4).into_iter().map(|b| b & 0x7f).collect();
        assert!(compare_populations(&random(30_000, 5), &skewed).unwrap().separates(0.01));
    }
}
