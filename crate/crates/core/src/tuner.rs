//! Voltage sweeps and entropy-maximizing operating point selection.
//!
//! The optimizer runs a coarse sweep over the modulator range, then a fine
//! sweep around the coarse maximum, and returns the fine-grid argmax (lowest
//! voltage wins ties). Every sweep point is an independent simulation with a
//! seed derived from the sweep's master seed and the point index, so points
//! run in parallel without affecting the result.

use std::f64::consts::PI;

use rand::RngCore;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::metrics::{shannon_entropy, ByteHistogram};
use crate::optics::{DeviceConfig, OpticsError, PulseModel, PulseOutcome};
use crate::rng::{derive_seed, sim_rng};

pub const DEFAULT_PULSES_PER_POINT: u64 = 1 << 20;
pub const MIN_PULSES_PER_POINT: u64 = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum TunerError {
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error("invalid sweep: {0}")]
    BadSweep(String),
    #[error("splitting-law fit failed: {0}")]
    Fit(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub voltage: f64,
    /// Bits per byte of the accepted bits at this voltage.
    pub entropy: f64,
    pub early: u64,
    pub late: u64,
    pub double: u64,
    pub empty: u64,
}

impl SweepPoint {
    pub fn pulses(&self) -> u64 {
        self.early + self.late + self.double + self.empty
    }

    /// Clicks registered in the early gate, including double clicks.
    pub fn early_gate_clicks(&self) -> u64 {
        self.early + self.double
    }

    pub fn late_gate_clicks(&self) -> u64 {
        self.late + self.double
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Index of the maximum-entropy point; the first (lowest voltage) on ties.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, p) in self.points.iter().enumerate() {
            if best.is_none_or(|b| p.entropy > self.points[b].entropy) {
                best = Some(i);
            }
        }
        best
    }

    pub fn to_csv(&self, label: &str) -> String {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!(
                "{label},{:.4},{:.6},{},{},{},{}\n",
                p.voltage, p.entropy, p.early, p.late, p.double, p.empty
            ));
        }
        out
    }
}

pub const SWEEP_CSV_HEADER: &str = "sweep,voltage,entropy,early,late,double,empty\n";

/// Voltages `start, start + step, ...` up to and including `end`.
pub fn voltage_grid(v_start: f64, v_end: f64, step: f64) -> Result<Vec<f64>, TunerError> {
    if !(v_start.is_finite() && v_end.is_finite() && step.is_finite()) {
        return Err(TunerError::BadSweep("sweep bounds must be finite".into()));
    }
    if step <= 0.0 {
        return Err(TunerError::BadSweep(format!("step must be positive, got {step}")));
    }
    if v_start >= v_end {
        return Err(TunerError::BadSweep(format!(
            "start {v_start} must be below end {v_end}"
        )));
    }
    let intervals = ((v_end - v_start) / step + 1e-9).floor() as usize;
    Ok((0..=intervals).map(|i| v_start + i as f64 * step).collect())
}

fn measure_point(cfg: &DeviceConfig, v: f64, pulses: u64, seed: u64) -> Result<SweepPoint, TunerError> {
    let model = PulseModel::new(cfg, v)?;
    let mut rng = sim_rng(seed);
    let (mut early, mut late, mut double, mut empty) = (0u64, 0u64, 0u64, 0u64);
    let mut hist = ByteHistogram::new();
    let mut acc = 0u8;
    let mut nbits = 0u32;
    for _ in 0..pulses {
        let bit = match model.sample(&mut rng) {
            PulseOutcome::EarlyClick => {
                early += 1;
                0
            }
            PulseOutcome::LateClick => {
                late += 1;
                1
            }
            PulseOutcome::DoubleClick => {
                double += 1;
                continue;
            }
            PulseOutcome::NoClick => {
                empty += 1;
                continue;
            }
        };
        acc = (acc << 1) | bit;
        nbits += 1;
        if nbits == 8 {
            hist.update(&[acc]);
            acc = 0;
            nbits = 0;
        }
    }
    // No complete byte means no measurable entropy.
    let entropy = shannon_entropy(&hist).unwrap_or(0.0);
    Ok(SweepPoint {
        voltage: v,
        entropy,
        early,
        late,
        double,
        empty,
    })
}

fn sweep_grid(
    cfg: &DeviceConfig,
    grid: &[f64],
    pulses_per_point: u64,
    master_seed: u64,
) -> Result<SweepResult, TunerError> {
    if pulses_per_point < MIN_PULSES_PER_POINT {
        return Err(TunerError::BadSweep(format!(
            "pulses_per_point must be at least {MIN_PULSES_PER_POINT}, got {pulses_per_point}"
        )));
    }
    cfg.validate()?;
    let points = grid
        .par_iter()
        .enumerate()
        .map(|(i, &v)| measure_point(cfg, v, pulses_per_point, derive_seed(master_seed, i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepResult { points })
}

/// Sweeps `[v_start, v_end]` in steps of `step`. Draws one master seed from `rng`.
pub fn sweep<R: RngCore + ?Sized>(
    cfg: &DeviceConfig,
    v_start: f64,
    v_end: f64,
    step: f64,
    pulses_per_point: u64,
    rng: &mut R,
) -> Result<SweepResult, TunerError> {
    let grid = voltage_grid(v_start, v_end, step)?;
    sweep_grid(cfg, &grid, pulses_per_point, rng.next_u64())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunerSettings {
    pub coarse_start: f64,
    pub coarse_end: f64,
    pub coarse_step: f64,
    /// Half-width of the fine window around the coarse maximum.
    pub fine_half_width: f64,
    pub fine_step: f64,
    pub pulses_per_point: u64,
}

impl Default for TunerSettings {
    fn default() -> Self {
        Self {
            coarse_start: 0.0,
            coarse_end: 4.2,
            coarse_step: 0.2,
            fine_half_width: 0.15,
            fine_step: 0.02,
            pulses_per_point: DEFAULT_PULSES_PER_POINT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimization {
    pub v_opt: f64,
    pub coarse: SweepResult,
    pub fine: SweepResult,
}

impl Optimization {
    pub fn best(&self) -> &SweepPoint {
        &self.fine.points[self.fine.argmax().expect("fine sweep is never empty")]
    }

    pub fn to_csv(&self) -> String {
        format!("{SWEEP_CSV_HEADER}{}{}", self.coarse.to_csv("coarse"), self.fine.to_csv("fine"))
    }
}

/// Coarse then fine sweep; the fine window is clipped to the coarse range.
pub fn optimize<R: RngCore + ?Sized>(
    cfg: &DeviceConfig,
    settings: &TunerSettings,
    rng: &mut R,
) -> Result<Optimization, TunerError> {
    let coarse = sweep(
        cfg,
        settings.coarse_start,
        settings.coarse_end,
        settings.coarse_step,
        settings.pulses_per_point,
        rng,
    )?;
    let center = coarse.points[coarse.argmax().expect("coarse sweep is never empty")].voltage;
    let lo = (center - settings.fine_half_width).max(settings.coarse_start);
    let hi = (center + settings.fine_half_width).min(settings.coarse_end);
    let fine = sweep(cfg, lo, hi, settings.fine_step, settings.pulses_per_point, rng)?;
    let v_opt = fine.points[fine.argmax().expect("fine sweep is never empty")].voltage;
    Ok(Optimization { v_opt, coarse, fine })
}

/// Fit of the gate click counts to
/// `P(v) = 1 - (1 - dark) exp(-a cos^2(pi (v + offset) / (2 v_pi)))` for the
/// early gate, and the same with `sin^2` for the late gate.
#[derive(Debug, Clone, PartialEq)]
pub struct SplittingFit {
    pub amplitude_early: f64,
    pub amplitude_late: f64,
    pub v_pi: f64,
    pub v_offset: f64,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Per point: `(x_e / a_e + x_l / a_l - 1) / sigma`, where `x` is the mean
    /// photon number recovered from each gate's click fraction.
    pub complementarity_z: Vec<f64>,
}

impl SplittingFit {
    pub fn max_abs_complementarity_z(&self) -> f64 {
        self.complementarity_z.iter().fold(0.0, |m, z| m.max(z.abs()))
    }
}

fn gate_probability(amplitude: f64, split: f64, dark: f64) -> f64 {
    1.0 - (1.0 - dark) * (-amplitude * split).exp()
}

fn pearson_residuals(theta: &[f64; 4], points: &[SweepPoint], dark: f64, out: &mut Vec<f64>) {
    out.clear();
    let [a_e, a_l, v_pi, offset] = *theta;
    for p in points {
        let n = p.pulses() as f64;
        let c = (PI * (p.voltage + offset) / (2.0 * v_pi)).cos();
        let split_e = c * c;
        for (clicks, prob) in [
            (p.early_gate_clicks(), gate_probability(a_e, split_e, dark)),
            (p.late_gate_clicks(), gate_probability(a_l, 1.0 - split_e, dark)),
        ] {
            let prob = prob.clamp(1e-300, 1.0 - 1e-16);
            let expected = n * prob;
            out.push((clicks as f64 - expected) / (expected * (1.0 - prob)).sqrt());
        }
    }
}

/// Solves the 4x4 system `a x = b` by Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (dst, src) in a[row].iter_mut().zip(pivot_row).skip(col) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Levenberg-Marquardt fit of the splitting law to a sweep's gate counts.
/// The dark-count probability is taken from `cfg`; amplitudes, `v_pi` and the
/// offset are free, starting from the nominal configuration.
pub fn fit_splitting_law(sweep: &SweepResult, cfg: &DeviceConfig) -> Result<SplittingFit, TunerError> {
    let points = &sweep.points;
    if points.len() < 3 {
        return Err(TunerError::Fit("need at least three sweep points".into()));
    }
    let dark = cfg.dark_count_prob;
    let amplitude_guess = |clicks: fn(&SweepPoint) -> u64| {
        let f = points
            .iter()
            .map(|p| clicks(p) as f64 / p.pulses() as f64)
            .fold(0.0, f64::max)
            .min(1.0 - 1e-9);
        (-((1.0 - f) / (1.0 - dark)).ln()).max(1e-6)
    };
    let mut theta = [
        amplitude_guess(SweepPoint::early_gate_clicks),
        amplitude_guess(SweepPoint::late_gate_clicks),
        cfg.v_pi_volts,
        cfg.v_offset_volts,
    ];
    let mut r = Vec::new();
    let mut r_step = Vec::new();
    pearson_residuals(&theta, points, dark, &mut r);
    let mut chi2: f64 = r.iter().map(|x| x * x).sum();
    let mut lambda = 1e-3;
    let mut jac = vec![[0.0f64; 4]; r.len()];
    for _ in 0..500 {
        for k in 0..4 {
            let h = 1e-7 * theta[k].abs().max(1.0);
            let mut t = theta;
            t[k] += h;
            pearson_residuals(&t, points, dark, &mut r_step);
            for (row, (rs, r0)) in jac.iter_mut().zip(r_step.iter().zip(&r)) {
                row[k] = (rs - r0) / h;
            }
        }
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (row, ri) in jac.iter().zip(&r) {
            for i in 0..4 {
                jtr[i] += row[i] * ri;
                for j in 0..4 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12);
            }
            let Some(delta) = solve4(damped, jtr.map(|x| -x)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = theta;
            for k in 0..4 {
                trial[k] += delta[k];
            }
            if trial[0] <= 0.0 || trial[1] <= 0.0 || trial[2] <= 0.0 {
                lambda *= 10.0;
                continue;
            }
            pearson_residuals(&trial, points, dark, &mut r_step);
            let trial_chi2: f64 = r_step.iter().map(|x| x * x).sum();
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let gain = chi2 - trial_chi2;
                theta = trial;
                std::mem::swap(&mut r, &mut r_step);
                chi2 = trial_chi2;
                lambda = (lambda / 10.0).max(1e-12);
                improved = gain > 1e-10 * chi2.max(1.0);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let dof = 2 * points.len() - 4;
    let p_value = ChiSquared::new(dof as f64)
        .map_err(|e| TunerError::Fit(e.to_string()))?
        .sf(chi2);
    let [a_e, a_l, v_pi, v_offset] = theta;

    let recovered = |clicks: u64, n: f64| {
        let f = clicks as f64 / n;
        let x = -((1.0 - f) / (1.0 - dark)).ln();
        let var = f / (n * (1.0 - f));
        (x, var)
    };
    let complementarity_z = points
        .iter()
        .filter_map(|p| {
            let n = p.pulses() as f64;
            let (x_e, var_e) = recovered(p.early_gate_clicks(), n);
            let (x_l, var_l) = recovered(p.late_gate_clicks(), n);
            let sigma = (var_e / (a_e * a_e) + var_l / (a_l * a_l)).sqrt();
            (sigma > 0.0 && sigma.is_finite()).then(|| (x_e / a_e + x_l / a_l - 1.0) / sigma)
        })
        .collect();

    Ok(SplittingFit {
        amplitude_early: a_e,
        amplitude_late: a_l,
        v_pi,
        v_offset,
        chi2,
        dof,
        p_value,
        complementarity_z,
    })
}
