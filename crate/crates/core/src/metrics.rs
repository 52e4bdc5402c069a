//! Plug-in entropy estimators over byte histograms, and detector visibility.

use std::ops::{Add, AddAssign};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("visibility undefined for zero counts in both bins")]
    NoCounts,
}

/// Tally of non-overlapping, byte-aligned 8-bit symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteHistogram {
    counts: [u64; 256],
    total: u64,
}

impl Default for ByteHistogram {
    fn default() -> Self {
        Self {
            counts: [0; 256],
            total: 0,
        }
    }
}

impl ByteHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut h = Self::new();
        h.update(bytes);
        h
    }

    pub fn from_counts(counts: [u64; 256]) -> Self {
        Self {
            counts,
            total: counts.iter().sum(),
        }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.counts[b as usize] += 1;
        }
        self.total += bytes.len() as u64;
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn merge(&mut self, other: &ByteHistogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
        self.total += other.total;
    }
}

impl AddAssign<&ByteHistogram> for ByteHistogram {
    fn add_assign(&mut self, rhs: &ByteHistogram) {
        self.merge(rhs);
    }
}

impl Add for ByteHistogram {
    type Output = ByteHistogram;
    fn add(mut self, rhs: ByteHistogram) -> ByteHistogram {
        self.merge(&rhs);
        self
    }
}

/// Shannon entropy in bits per byte.
pub fn shannon_entropy(h: &ByteHistogram) -> Result<f64, MetricsError> {
    if h.total == 0 {
        return Err(MetricsError::EmptyHistogram);
    }
    let total = h.total as f64;
    let entropy: f64 = h
        .counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    Ok(entropy.clamp(0.0, 8.0))
}

/// Min-entropy `-log2(max_i p_i)` in bits per byte.
pub fn min_entropy(h: &ByteHistogram) -> Result<f64, MetricsError> {
    if h.total == 0 {
        return Err(MetricsError::EmptyHistogram);
    }
    let max = *h.counts.iter().max().unwrap_or(&0) as f64;
    Ok((-(max / h.total as f64).log2()).clamp(0.0, 8.0))
}

/// `|n_early - n_late| / (n_early + n_late)`.
pub fn visibility(n_early: u64, n_late: u64) -> Result<f64, MetricsError> {
    let total = n_early + n_late;
    if total == 0 {
        return Err(MetricsError::NoCounts);
    }
    Ok(n_early.abs_diff(n_late) as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_is_eight_bits() {
        let h = ByteHistogram::from_counts([7; 256]);
        assert_eq!(shannon_entropy(&h).unwrap(), 8.0);
        assert_eq!(min_entropy(&h).unwrap(), 8.0);
    }

    #[test]
    fn degenerate_is_zero() {
        let h = ByteHistogram::from_bytes(&[42; 1000]);
        assert_eq!(shannon_entropy(&h).unwrap(), 0.0);
        assert_eq!(min_entropy(&h).unwrap(), 0.0);
    }

    #[test]
    fn fair_coin_is_one_bit() {
        let h = ByteHistogram::from_bytes(&[0, 255, 0, 255]);
        assert_eq!(shannon_entropy(&h).unwrap(), 1.0);
        assert_eq!(min_entropy(&h).unwrap(), 1.0);
    }

    #[test]
    fn half_mass_on_one_symbol() {
        let mut counts = [0u64; 256];
        counts[0] = 100;
        counts[1] = 50;
        counts[2] = 50;
        assert_eq!(min_entropy(&ByteHistogram::from_counts(counts)).unwrap(), 1.0);
    }

    #[test]
    fn empty_histogram_rejected() {
        let h = ByteHistogram::new();
        assert_eq!(shannon_entropy(&h), Err(MetricsError::EmptyHistogram));
        assert_eq!(min_entropy(&h), Err(MetricsError::EmptyHistogram));
    }

    #[test]
    fn visibility_examples() {
        assert_eq!(visibility(1000, 1000).unwrap(), 0.0);
        assert_eq!(visibility(1000, 0).unwrap(), 1.0);
        assert!((visibility(997, 3).unwrap() - 0.994).abs() < 1e-15);
        assert_eq!(visibility(0, 0), Err(MetricsError::NoCounts));
    }

    #[test]
    fn merge_equals_concatenation() {
        let a: Vec<u8> = (0..5000u32).map(|i| (i * 31 % 251) as u8).collect();
        let b: Vec<u8> = (0..3000u32).map(|i| (i * 17 % 256) as u8).collect();
        let mut merged = ByteHistogram::from_bytes(&a);
        merged += &ByteHistogram::from_bytes(&b);
        let whole = ByteHistogram::from_bytes(&[a, b].concat());
        assert_eq!(merged, whole);
    }

    fn histogram() -> impl Strategy<Value = ByteHistogram> {
        proptest::collection::vec(0u64..1000, 256).prop_filter_map("non-empty", |v| {
            let mut counts = [0u64; 256];
            counts.copy_from_slice(&v);
            let h = ByteHistogram::from_counts(counts);
            (h.total() > 0).then_some(h)
        })
    }

    proptest! {
        #[test]
        fn entropy_ordering(h in histogram()) {
            let hs = shannon_entropy(&h).unwrap();
            let hm = min_entropy(&h).unwrap();
            prop_assert!(0.0 <= hm);
            prop_assert!(hm <= hs + 1e-12);
            prop_assert!(hs <= 8.0);
        }

        #[test]
        fn entropy_permutation_invariant(h in histogram(), rot in 0usize..256) {
            let mut counts = *h.counts();
            counts.rotate_left(rot);
            counts.reverse();
            let p = ByteHistogram::from_counts(counts);
            prop_assert!((shannon_entropy(&h).unwrap() - shannon_entropy(&p).unwrap()).abs() < 1e-12);
            prop_assert_eq!(min_entropy(&h).unwrap(), min_entropy(&p).unwrap());
        }

        #[test]
        fn visibility_symmetric(a in 0u64..1_000_000, b in 0u64..1_000_000) {
            prop_assume!(a + b > 0);
            prop_assert_eq!(visibility(a, b).unwrap(), visibility(b, a).unwrap());
        }
    }
}
