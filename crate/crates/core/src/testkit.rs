//! Statistical checks and exporters.
//!
//! The quick battery is a desk-scale sanity check. Real certification runs go
//! through the external NIST STS and Dieharder tools on files written by
//! [`export_nist`] and [`export_dieharder`].

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::bits::BitBuf;
use crate::metrics::ByteHistogram;

pub const MIN_BATTERY_BITS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum TestkitError {
    #[error("significance level {0} must lie strictly between 0 and 1")]
    BadAlpha(f64),
    #[error("at least one stream is required")]
    NoStreams,
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("p-value {0} outside [0, 1]")]
    BadPValue(f64),
    #[error("nothing to export")]
    EmptyExport,
    #[error("unexpected character {0:?} in ASCII bit file")]
    BadAscii(char),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Weak,
    Fail,
}

impl Verdict {
    pub fn from_p_value(p: f64) -> Self {
        if p > 0.01 && p < 0.99 {
            Verdict::Pass
        } else if (1e-4..=0.9999).contains(&p) {
            Verdict::Weak
        } else {
            Verdict::Fail
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Weak => "WEAK",
            Verdict::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
    pub verdict: Verdict,
}

impl TestResult {
    fn new(name: &str, statistic: f64, p_value: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            name: name.to_string(),
            statistic,
            p_value,
            verdict: Verdict::from_p_value(p_value),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TestReport {
    pub bits: usize,
    pub results: Vec<TestResult>,
    /// KS p-value over all result p-values, when aggregated.
    pub ks_p_value: Option<f64>,
}

impl TestReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.verdict == Verdict::Pass)
    }

    pub fn any_fail(&self) -> bool {
        self.results.iter().any(|r| r.verdict == Verdict::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&TestResult> {
        self.results.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("test,statistic,p_value,verdict\n");
        for r in &self.results {
            out.push_str(&format!("{},{:.6},{:.6},{}\n", r.name, r.statistic, r.p_value, r.verdict));
        }
        if let Some(p) = self.ks_p_value {
            out.push_str(&format!("ks_aggregate,,{p:.6},{}\n", Verdict::from_p_value(p)));
        }
        out
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            out.push_str(&serde_json::to_string(r).expect("plain struct serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProportionInterval {
    pub lo: f64,
    pub hi: f64,
    /// The raw interval reached outside [0, 1] and was clamped.
    pub clamped: bool,
}

/// Acceptable range for the fraction of streams passing a test at level `alpha`.
pub fn proportion_confidence_interval(alpha: f64, n_streams: u64) -> Result<ProportionInterval, TestkitError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(TestkitError::BadAlpha(alpha));
    }
    if n_streams == 0 {
        return Err(TestkitError::NoStreams);
    }
    let p = 1.0 - alpha;
    let half = 3.0 * (alpha * (1.0 - alpha) / n_streams as f64).sqrt();
    let (lo, hi) = (p - half, p + half);
    Ok(ProportionInterval {
        lo: lo.max(0.0),
        hi: hi.min(1.0),
        clamped: lo < 0.0 || hi > 1.0,
    })
}

/// Two-sided KS distance between the empirical CDF of `values` and U(0, 1).
pub fn ks_statistic(values: &[f64]) -> Result<f64, TestkitError> {
    if values.len() < 2 {
        return Err(TestkitError::TooFew { needed: 2, got: values.len() });
    }
    if let Some(&bad) = values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(TestkitError::BadPValue(bad));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form converges quickly for small arguments.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let cdf: f64 = (1..=20)
            .map(|k| (c * ((2 * k - 1) as f64).powi(2)).exp())
            .sum::<f64>()
            * (2.0 * std::f64::consts::PI).sqrt()
            / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// KS test of the p-values against uniformity, with the usual finite-N scaling.
pub fn ks_uniformity_pvalue(values: &[f64]) -> Result<f64, TestkitError> {
    let d = ks_statistic(values)?;
    let rn = (values.len() as f64).sqrt();
    Ok(kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d))
}

/// Streaming bit counts that every battery test is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct BitCounts {
    n: u64,
    ones: u64,
    /// Adjacent pairs that differ.
    transitions: u64,
    /// Adjacent pairs that are both one.
    pair_ones: u64,
    first: bool,
    last: bool,
}

fn bit_counts(bits: &BitBuf) -> BitCounts {
    let n = bits.len();
    let bytes = bits.as_bytes();
    let mut c = BitCounts {
        n: n as u64,
        first: n > 0 && bits.get(0),
        last: n > 0 && bits.get(n - 1),
        ..BitCounts::default()
    };
    let words = n.div_ceil(64);
    let word = |k: usize| {
        let mut buf = [0u8; 8];
        let chunk = &bytes[k * 8..bytes.len().min(k * 8 + 8)];
        buf[..chunk.len()].copy_from_slice(chunk);
        u64::from_be_bytes(buf)
    };
    let mut next = if words > 0 { word(0) } else { 0 };
    for k in 0..words {
        let w = next;
        next = if k + 1 < words { word(k + 1) } else { 0 };
        c.ones += w.count_ones() as u64;
        // Stream bit 64k + j sits at word bit 63 - j; pair i is (i, i + 1).
        let base = 64 * k;
        let inner = (n - 1).saturating_sub(base).min(63) as u32;
        let mask = if inner == 0 { 0 } else { !0u64 << (64 - inner) };
        c.transitions += ((w ^ (w << 1)) & mask).count_ones() as u64;
        c.pair_ones += ((w & (w << 1)) & mask).count_ones() as u64;
        if base + 64 < n {
            let a = w & 1;
            let b = next >> 63;
            c.transitions += a ^ b;
            c.pair_ones += a & b;
        }
    }
    c
}

fn monobit(c: &BitCounts) -> TestResult {
    let s = 2.0 * c.ones as f64 - c.n as f64;
    let s_obs = s.abs() / (c.n as f64).sqrt();
    TestResult::new("monobit", s_obs, erfc(s_obs / std::f64::consts::SQRT_2))
}

fn runs(c: &BitCounts) -> TestResult {
    let n = c.n as f64;
    let pi = c.ones as f64 / n;
    let v_obs = (c.transitions + 1) as f64;
    // The runs statistic is only meaningful once the frequency test would pass.
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return TestResult::new("runs", v_obs, 0.0);
    }
    let q = pi * (1.0 - pi);
    let p = erfc((v_obs - 2.0 * n * q).abs() / (2.0 * (2.0 * n).sqrt() * q));
    TestResult::new("runs", v_obs, p)
}

fn byte_chi_square(bits: &BitBuf) -> TestResult {
    let h = ByteHistogram::from_bytes(bits.whole_bytes());
    let expected = h.total() as f64 / 256.0;
    let chi2: f64 = h
        .counts()
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    let p = ChiSquared::new(255.0).expect("positive dof").sf(chi2);
    TestResult::new("byte_chi_square", chi2, p)
}

fn serial_correlation(c: &BitCounts) -> TestResult {
    let n = c.n as f64;
    let m = c.ones as f64 / n;
    let var = n * m * (1.0 - m);
    if var == 0.0 {
        return TestResult::new("serial_correlation", 0.0, 0.0);
    }
    let s1 = (c.ones - c.last as u64) as f64;
    let s2 = (c.ones - c.first as u64) as f64;
    let cov = c.pair_ones as f64 - m * (s1 + s2) + (n - 1.0) * m * m;
    let r = cov / var;
    let z = r * n.sqrt();
    TestResult::new("serial_correlation", r, erfc(z.abs() / std::f64::consts::SQRT_2))
}

/// Monobit, runs, byte chi-square (255 dof) and lag-1 serial correlation.
pub fn quick_battery(bits: &BitBuf) -> Result<TestReport, TestkitError> {
    if bits.len() < MIN_BATTERY_BITS {
        return Err(TestkitError::TooFew {
            needed: MIN_BATTERY_BITS,
            got: bits.len(),
        });
    }
    let c = bit_counts(bits);
    Ok(TestReport {
        bits: bits.len(),
        results: vec![monobit(&c), runs(&c), byte_chi_square(bits), serial_correlation(&c)],
        ks_p_value: None,
    })
}

/// Runs the battery on consecutive chunks and KS-aggregates every test's p-values.
pub fn chunked_battery(bits: &BitBuf, chunk_bits: usize) -> Result<(Vec<TestReport>, TestReport), TestkitError> {
    let chunk_bits = chunk_bits.max(MIN_BATTERY_BITS);
    let reports = (0..bits.len() / chunk_bits)
        .map(|i| quick_battery(&bits.slice(i * chunk_bits, (i + 1) * chunk_bits)))
        .collect::<Result<Vec<_>, _>>()?;
    if reports.len() < 2 {
        return Err(TestkitError::TooFew { needed: 2, got: reports.len() });
    }
    let mut summary = TestReport {
        bits: reports.len() * chunk_bits,
        ..TestReport::default()
    };
    for (t, first) in reports[0].results.iter().enumerate() {
        let ps: Vec<f64> = reports.iter().map(|r| r.results[t].p_value).collect();
        let d = ks_statistic(&ps)?;
        summary
            .results
            .push(TestResult::new(&format!("{}_ks", first.name), d, ks_uniformity_pvalue(&ps)?));
    }
    let all: Vec<f64> = reports.iter().flat_map(|r| r.results.iter().map(|t| t.p_value)).collect();
    summary.ks_p_value = Some(ks_uniformity_pvalue(&all)?);
    Ok((reports, summary))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NistExport {
    pub ascii: PathBuf,
    pub binary: PathBuf,
}

/// The binary file sits next to the ASCII one with `.bin` appended.
pub fn nist_binary_path(ascii: &Path) -> PathBuf {
    let mut s = ascii.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

/// ASCII `'0'`/`'1'` per bit with no separators, plus whole bytes of the
/// stream in a companion binary file.
pub fn export_nist(bits: &BitBuf, path: &Path) -> Result<NistExport, TestkitError> {
    if bits.is_empty() {
        return Err(TestkitError::EmptyExport);
    }
    let ascii: Vec<u8> = bits.iter().map(|b| if b { b'1' } else { b'0' }).collect();
    fs::write(path, ascii)?;
    let binary = nist_binary_path(path);
    fs::write(&binary, bits.whole_bytes())?;
    Ok(NistExport {
        ascii: path.to_path_buf(),
        binary,
    })
}

/// Raw bytes, MSB-first. A trailing partial byte is dropped rather than padded.
pub fn export_dieharder(bits: &BitBuf, path: &Path) -> Result<u64, TestkitError> {
    let bytes = bits.whole_bytes();
    if bytes.is_empty() {
        return Err(TestkitError::EmptyExport);
    }
    fs::write(path, bytes)?;
    Ok(bytes.len() as u64)
}

pub fn import_binary(path: &Path) -> Result<BitBuf, TestkitError> {
    Ok(BitBuf::from_bytes(fs::read(path)?))
}

/// Accepts `'0'`/`'1'` and ignores whitespace.
pub fn import_ascii(path: &Path) -> Result<BitBuf, TestkitError> {
    let text = fs::read_to_string(path)?;
    let mut bits = BitBuf::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '0' => bits.push(false),
            '1' => bits.push(true),
            c if c.is_whitespace() => {}
            c => return Err(TestkitError::BadAscii(c)),
        }
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sim_rng;
    use proptest::prelude::*;
    use rand::RngCore;

    fn random_bits(seed: u64, n_bytes: usize) -> BitBuf {
        let mut bytes = vec![0u8; n_bytes];
        sim_rng(seed).fill_bytes(&mut bytes);
        BitBuf::from_bytes(bytes)
    }

    fn naive_counts(bits: &BitBuf) -> BitCounts {
        let v: Vec<bool> = bits.iter().collect();
        BitCounts {
            n: v.len() as u64,
            ones: v.iter().filter(|&&b| b).count() as u64,
            transitions: v.windows(2).filter(|w| w[0] != w[1]).count() as u64,
            pair_ones: v.windows(2).filter(|w| w[0] && w[1]).count() as u64,
            first: v.first().copied().unwrap_or(false),
            last: v.last().copied().unwrap_or(false),
        }
    }

    // Maximum gap between the empirical CDF and the identity, checked at
    // every jump from both sides.
    fn brute_force_d(values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let ecdf = |x: f64, strict: bool| {
            values.iter().filter(|&&v| if strict { v < x } else { v <= x }).count() as f64 / n
        };
        values
            .iter()
            .map(|&x| (ecdf(x, false) - x).abs().max((ecdf(x, true) - x).abs()))
            .fold(0.0, f64::max)
    }

    fn reference_sf(lambda: f64) -> f64 {
        let s: f64 = (1..=1000)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }

    #[test]
    fn proportion_interval_values() {
        let ci = proportion_confidence_interval(0.01, 1000).unwrap();
        let half = 3.0 * (0.01f64 * 0.99 / 1000.0).sqrt();
        assert!((ci.lo - (0.99 - half)).abs() < 1e-15);
        assert!((ci.lo - 0.98056).abs() < 5e-6 && (ci.hi - 0.99944).abs() < 5e-6);
        assert!(!ci.clamped);
        let wide = proportion_confidence_interval(0.01, u64::MAX).unwrap();
        assert!((wide.lo - 0.99).abs() < 1e-9 && (wide.hi - 0.99).abs() < 1e-9);
        let clamp = proportion_confidence_interval(0.5, 4).unwrap();
        assert_eq!((clamp.lo, clamp.hi, clamp.clamped), (0.0, 1.0, true));
        assert!(proportion_confidence_interval(0.0, 10).is_err());
        assert!(proportion_confidence_interval(1.0, 10).is_err());
        assert!(proportion_confidence_interval(0.1, 0).is_err());
    }

    #[test]
    fn ks_grid_is_uniform() {
        let v: Vec<f64> = (0..100).map(|i| 0.005 + 0.01 * i as f64).collect();
        let d = ks_statistic(&v).unwrap();
        assert!((d - 0.005).abs() < 1e-12);
        assert!((d - brute_force_d(&v)).abs() < 1e-12);
        assert!(ks_uniformity_pvalue(&v).unwrap() > 0.999);
    }

    #[test]
    fn ks_constant_fails() {
        let v = vec![0.5; 50];
        assert!((ks_statistic(&v).unwrap() - 0.5).abs() < 1e-15);
        assert!(ks_uniformity_pvalue(&v).unwrap() < 1e-9);
    }

    #[test]
    fn ks_two_points_by_hand() {
        // ECDF steps 0 -> 0.5 at 0.3 and 0.5 -> 1 at 0.7; the largest gap is 0.3.
        let v = [0.3, 0.7];
        assert!((ks_statistic(&v).unwrap() - 0.3).abs() < 1e-15);
        let lambda = (2f64.sqrt() + 0.12 + 0.11 / 2f64.sqrt()) * 0.3;
        assert!((ks_uniformity_pvalue(&v).unwrap() - kolmogorov_sf(lambda)).abs() < 1e-15);
    }

    #[test]
    fn ks_rejects_bad_input() {
        assert!(ks_uniformity_pvalue(&[]).is_err());
        assert!(ks_uniformity_pvalue(&[0.5]).is_err());
        assert!(ks_uniformity_pvalue(&[0.5, 1.5]).is_err());
    }

    #[test]
    fn kolmogorov_branches_agree() {
        for i in 1..400 {
            let lambda = i as f64 * 0.01;
            assert!(
                (kolmogorov_sf(lambda) - reference_sf(lambda)).abs() < 1e-10,
                "lambda {lambda}"
            );
        }
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn word_counts_match_naive() {
        for len in [1usize, 2, 7, 63, 64, 65, 127, 128, 129, 1000] {
            let bytes = random_bits(len as u64, len.div_ceil(8));
            let bits = bytes.slice(0, len);
            assert_eq!(bit_counts(&bits), naive_counts(&bits), "len {len}");
        }
    }

    #[test]
    fn degenerate_inputs_fail() {
        let zeros = BitBuf::from_bytes(vec![0u8; MIN_BATTERY_BITS / 8]);
        let r = quick_battery(&zeros).unwrap();
        assert_eq!(r.get("monobit").unwrap().verdict, Verdict::Fail);
        let alt = BitBuf::from_bytes(vec![0x55u8; MIN_BATTERY_BITS / 8]);
        let r = quick_battery(&alt).unwrap();
        assert_eq!(r.get("monobit").unwrap().statistic, 0.0);
        assert_eq!(r.get("runs").unwrap().verdict, Verdict::Fail);
        assert!(quick_battery(&BitBuf::from_bytes(vec![0u8; 1000])).is_err());
    }

    #[test]
    fn correlated_input_fails_serial() {
        // Each bit repeated twice: balanced, but strongly correlated at lag 1.
        let src = random_bits(3, MIN_BATTERY_BITS / 16);
        let bits: BitBuf = src.iter().flat_map(|b| [b, b]).collect();
        let r = quick_battery(&bits).unwrap();
        assert_eq!(r.get("serial_correlation").unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn random_input_passes() {
        let r = quick_battery(&random_bits(11, 4_000_000 / 8)).unwrap();
        assert!(!r.any_fail(), "{}", r.to_csv());
        assert_eq!(r.to_csv().lines().count(), 5);
        assert_eq!(r.to_json_lines().lines().count(), 4);
    }

    #[test]
    fn battery_p_values_are_uniform() {
        let reports: Vec<TestReport> = (0..100)
            .map(|t| quick_battery(&random_bits(1000 + t, 10_000_000 / 8)).unwrap())
            .collect();
        for test in 0..4 {
            let ps: Vec<f64> = reports.iter().map(|r| r.results[test].p_value).collect();
            let p = ks_uniformity_pvalue(&ps).unwrap();
            assert!(p > 0.01, "{} KS p = {p}", reports[0].results[test].name);
        }
    }

    #[test]
    fn chunked_battery_aggregates() {
        let bits = random_bits(21, 8_000_000 / 8);
        let (chunks, summary) = chunked_battery(&bits, 1_000_000).unwrap();
        assert_eq!(chunks.len(), 8);
        assert_eq!(summary.results.len(), 4);
        assert!(summary.ks_p_value.unwrap() > 0.0);
    }

    #[test]
    fn verdict_bands() {
        assert_eq!(Verdict::from_p_value(0.5), Verdict::Pass);
        assert_eq!(Verdict::from_p_value(0.01), Verdict::Weak);
        assert_eq!(Verdict::from_p_value(0.99), Verdict::Weak);
        assert_eq!(Verdict::from_p_value(1e-4), Verdict::Weak);
        assert_eq!(Verdict::from_p_value(0.9999), Verdict::Weak);
        assert_eq!(Verdict::from_p_value(5e-5), Verdict::Fail);
        assert_eq!(Verdict::from_p_value(0.99995), Verdict::Fail);
    }

    #[test]
    fn nist_export_format() {
        let dir = std::env::temp_dir().join(format!("sqrng-testkit-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let bits = BitBuf::from_bools(&[true, false, true, true, false, false, false, true]);
        let out = export_nist(&bits, &dir.join("eight.txt")).unwrap();
        assert_eq!(fs::read_to_string(&out.ascii).unwrap(), "10110001");
        assert_eq!(fs::read(&out.binary).unwrap(), vec![0b1011_0001]);
        assert_eq!(import_ascii(&out.ascii).unwrap(), bits);
        assert_eq!(import_binary(&out.binary).unwrap(), bits);

        let odd = BitBuf::from_bools(&[true; 12]);
        let n = export_dieharder(&odd, &dir.join("odd.bin")).unwrap();
        assert_eq!(n, 1);
        assert!(export_dieharder(&BitBuf::new(), &dir.join("none.bin")).is_err());
        fs::write(dir.join("bad.txt"), "0102").unwrap();
        assert!(matches!(import_ascii(&dir.join("bad.txt")), Err(TestkitError::BadAscii('2'))));
        fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn ks_matches_brute_force(v in proptest::collection::vec(0.0f64..=1.0, 2..200)) {
            prop_assert!((ks_statistic(&v).unwrap() - brute_force_d(&v)).abs() < 1e-12);
        }

        #[test]
        fn dieharder_roundtrip(bytes in proptest::collection::vec(any::<u8>(), 1..512)) {
            let dir = std::env::temp_dir().join(format!("sqrng-dh-{}", std::process::id()));
            fs::create_dir_all(&dir).unwrap();
            let path = dir.join("rt.bin");
            let bits = BitBuf::from_bytes(bytes);
            export_dieharder(&bits, &path).unwrap();
            prop_assert_eq!(import_binary(&path).unwrap(), bits);
        }

        #[test]
        fn interval_contains_center(alpha in 0.001f64..0.5, n in 1u64..100_000) {
            let ci = proportion_confidence_interval(alpha, n).unwrap();
            prop_assert!(ci.lo <= 1.0 - alpha && 1.0 - alpha <= ci.hi);
            prop_assert!(ci.lo >= 0.0 && ci.hi <= 1.0);
        }
    }
}
