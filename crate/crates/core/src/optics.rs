//! Monte Carlo model of the optical chain.
//!
//! A weak coherent pulse enters the Sagnac loop, whose phase modulator sets the
//! splitting between output A (early time bin) and output B (late time bin).
//! Each bin is watched by a gated threshold detector with Poissonian click
//! statistics and per-gate dark counts.

use std::f64::consts::PI;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{parse_value, ConfigError, KvMap};

#[derive(Debug, Error, PartialEq)]
pub enum OpticsError {
    #[error("voltage must be finite, got {0}")]
    NonFiniteVoltage(f64),
    #[error("phase must be finite, got {0}")]
    NonFinitePhase(f64),
    #[error("invalid device configuration: {0}")]
    InvalidConfig(String),
}

/// Physical and electronic parameters of the simulated generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub pulse_rate_hz: f64,
    /// Informational only; click statistics do not depend on it.
    pub pulse_width_ns: f64,
    /// Mean photon number per pulse at the loop input.
    pub mean_photon_number: f64,
    pub v_pi_volts: f64,
    /// Additive correction applied to every commanded voltage.
    pub v_offset_volts: f64,
    /// Net transmission of the early-bin path (output A, delay line, recombiner).
    pub transmittance_early: f64,
    /// Net transmission of the late-bin path (output B, recombiner).
    pub transmittance_late: f64,
    pub detector_efficiency: f64,
    /// Dark-count probability per detector gate.
    pub dark_count_prob: f64,
    pub dead_time_ns: f64,
    pub timebin_separation_ns: f64,
    pub rng_seed: u64,
}

/// Default path transmittance.
///
/// With mu = 10 and eta = 0.1 each balanced gate sees a mean of 0.5 T photons,
/// and the single-click probability 2p(1-p) can never exceed 0.5. T = 1 is the
/// largest admissible value and gives 0.4773 single clicks per pulse, i.e.
/// about 119.3 kbit/s at 250 kHz.
pub const DEFAULT_TRANSMITTANCE: f64 = 1.0;

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            pulse_rate_hz: 250_000.0,
            pulse_width_ns: 20.0,
            mean_photon_number: 10.0,
            v_pi_volts: 4.3,
            v_offset_volts: 0.0,
            transmittance_early: DEFAULT_TRANSMITTANCE,
            transmittance_late: DEFAULT_TRANSMITTANCE,
            detector_efficiency: 0.10,
            dark_count_prob: 1e-5,
            dead_time_ns: 500.0,
            timebin_separation_ns: 750.0,
            rng_seed: 0,
        }
    }
}

impl DeviceConfig {
    pub const KEYS: [&'static str; 12] = [
        "pulse_rate_hz",
        "pulse_width_ns",
        "mean_photon_number",
        "v_pi_volts",
        "v_offset_volts",
        "transmittance_early",
        "transmittance_late",
        "detector_efficiency",
        "dark_count_prob",
        "dead_time_ns",
        "timebin_separation_ns",
        "rng_seed",
    ];

    pub fn validate(&self) -> Result<(), OpticsError> {
        let bad = |msg: String| Err(OpticsError::InvalidConfig(msg));
        let finite = [
            ("pulse_rate_hz", self.pulse_rate_hz),
            ("pulse_width_ns", self.pulse_width_ns),
            ("mean_photon_number", self.mean_photon_number),
            ("v_pi_volts", self.v_pi_volts),
            ("v_offset_volts", self.v_offset_volts),
            ("dead_time_ns", self.dead_time_ns),
            ("timebin_separation_ns", self.timebin_separation_ns),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return bad(format!("{name} must be finite, got {value}"));
            }
        }
        if self.pulse_rate_hz <= 0.0 {
            return bad(format!("pulse_rate_hz must be positive, got {}", self.pulse_rate_hz));
        }
        if self.mean_photon_number < 0.0 {
            return bad(format!(
                "mean_photon_number must be non-negative, got {}",
                self.mean_photon_number
            ));
        }
        if self.v_pi_volts <= 0.0 {
            return bad(format!("v_pi_volts must be positive, got {}", self.v_pi_volts));
        }
        let unit = [
            ("transmittance_early", self.transmittance_early),
            ("transmittance_late", self.transmittance_late),
            ("detector_efficiency", self.detector_efficiency),
            ("dark_count_prob", self.dark_count_prob),
        ];
        for (name, value) in unit {
            if !(0.0..=1.0).contains(&value) {
                return bad(format!("{name} must lie in [0, 1], got {value}"));
            }
        }
        if self.dead_time_ns < 0.0 || self.timebin_separation_ns <= 0.0 {
            return bad("dead time and time-bin separation must be non-negative".into());
        }
        // An early click must leave the late gate armed.
        if self.dead_time_ns >= self.timebin_separation_ns {
            return bad(format!(
                "dead_time_ns ({}) must be shorter than timebin_separation_ns ({})",
                self.dead_time_ns, self.timebin_separation_ns
            ));
        }
        Ok(())
    }

    /// Sets one field from its textual value. Does not validate the result.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "pulse_rate_hz" => self.pulse_rate_hz = parse_value(key, value)?,
            "pulse_width_ns" => self.pulse_width_ns = parse_value(key, value)?,
            "mean_photon_number" => self.mean_photon_number = parse_value(key, value)?,
            "v_pi_volts" => self.v_pi_volts = parse_value(key, value)?,
            "v_offset_volts" => self.v_offset_volts = parse_value(key, value)?,
            "transmittance_early" => self.transmittance_early = parse_value(key, value)?,
            "transmittance_late" => self.transmittance_late = parse_value(key, value)?,
            "detector_efficiency" => self.detector_efficiency = parse_value(key, value)?,
            "dark_count_prob" => self.dark_count_prob = parse_value(key, value)?,
            "dead_time_ns" => self.dead_time_ns = parse_value(key, value)?,
            "timebin_separation_ns" => self.timebin_separation_ns = parse_value(key, value)?,
            "rng_seed" => self.rng_seed = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies every device key present in `kv`; other keys are left alone.
    pub fn apply(&mut self, kv: &KvMap) -> Result<(), ConfigError> {
        for (key, value) in kv.iter() {
            if Self::KEYS.contains(&key) {
                self.set(key, value)?;
            }
        }
        Ok(())
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "pulse_rate_hz = {}\npulse_width_ns = {}\nmean_photon_number = {}\nv_pi_volts = {}\n\
             v_offset_volts = {}\ntransmittance_early = {}\ntransmittance_late = {}\n\
             detector_efficiency = {}\ndark_count_prob = {}\ndead_time_ns = {}\n\
             timebin_separation_ns = {}\nrng_seed = {}\n",
            self.pulse_rate_hz,
            self.pulse_width_ns,
            self.mean_photon_number,
            self.v_pi_volts,
            self.v_offset_volts,
            self.transmittance_early,
            self.transmittance_late,
            self.detector_efficiency,
            self.dark_count_prob,
            self.dead_time_ns,
            self.timebin_separation_ns,
            self.rng_seed
        )
    }
}

/// Result of one optical pulse after the two detector gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PulseOutcome {
    EarlyClick,
    LateClick,
    DoubleClick,
    NoClick,
}

impl PulseOutcome {
    /// Early click is `0`, late click is `1`; the rest carry no bit.
    pub fn bit(self) -> Option<bool> {
        match self {
            PulseOutcome::EarlyClick => Some(false),
            PulseOutcome::LateClick => Some(true),
            PulseOutcome::DoubleClick | PulseOutcome::NoClick => None,
        }
    }
}

/// Modulator phase for a commanded voltage. Not wrapped.
pub fn voltage_to_phase(v: f64, cfg: &DeviceConfig) -> Result<f64, OpticsError> {
    if !v.is_finite() {
        return Err(OpticsError::NonFiniteVoltage(v));
    }
    cfg.validate()?;
    Ok(PI * (v + cfg.v_offset_volts) / cfg.v_pi_volts)
}

/// Output probabilities `(cos^2(phi/2), sin^2(phi/2))` of the Sagnac loop.
pub fn splitting_probabilities(phase: f64) -> Result<(f64, f64), OpticsError> {
    if !phase.is_finite() {
        return Err(OpticsError::NonFinitePhase(phase));
    }
    let c = (phase / 2.0).cos();
    let p_early = c * c;
    Ok((p_early, 1.0 - p_early))
}

/// Threshold-detector click probability for Poissonian light plus dark counts.
pub fn click_probability(mean_photons_at_gate: f64, dark_count_prob: f64) -> f64 {
    1.0 - (1.0 - dark_count_prob) * (-mean_photons_at_gate).exp()
}

/// Voltage at which both gates see the same mean photon number,
/// `T_e cos^2(phi/2) = T_l sin^2(phi/2)`, on the first branch `phi in [0, pi]`.
pub fn balance_voltage(cfg: &DeviceConfig) -> Result<f64, OpticsError> {
    cfg.validate()?;
    if cfg.transmittance_late == 0.0 {
        return Err(OpticsError::InvalidConfig(
            "balance point undefined with zero late transmittance".into(),
        ));
    }
    let phase = 2.0 * (cfg.transmittance_early / cfg.transmittance_late).sqrt().atan();
    Ok(phase * cfg.v_pi_volts / PI - cfg.v_offset_volts)
}

fn probability_threshold(p: f64) -> u64 {
    (p.clamp(0.0, 1.0) * 4_294_967_296.0).round() as u64
}

/// Per-voltage sampling state: a pulse costs one 64-bit draw whose two
/// 32-bit halves decide the early and late gates independently.
#[derive(Debug, Clone, Copy)]
pub struct PulseModel {
    p_early_click: f64,
    p_late_click: f64,
    early_threshold: u64,
    late_threshold: u64,
}

impl PulseModel {
    pub fn new(cfg: &DeviceConfig, v: f64) -> Result<Self, OpticsError> {
        let phase = voltage_to_phase(v, cfg)?;
        let (split_early, split_late) = splitting_probabilities(phase)?;
        let gate = cfg.mean_photon_number * cfg.detector_efficiency;
        let mu_early = gate * cfg.transmittance_early * split_early;
        let mu_late = gate * cfg.transmittance_late * split_late;
        let p_early_click = click_probability(mu_early, cfg.dark_count_prob);
        let p_late_click = click_probability(mu_late, cfg.dark_count_prob);
        Ok(Self {
            p_early_click,
            p_late_click,
            early_threshold: probability_threshold(p_early_click),
            late_threshold: probability_threshold(p_late_click),
        })
    }

    pub fn early_click_probability(&self) -> f64 {
        self.p_early_click
    }

    pub fn late_click_probability(&self) -> f64 {
        self.p_late_click
    }

    /// Analytic probabilities of `[EarlyClick, LateClick, DoubleClick, NoClick]`.
    pub fn outcome_probabilities(&self) -> [f64; 4] {
        let (e, l) = (self.p_early_click, self.p_late_click);
        [e * (1.0 - l), l * (1.0 - e), e * l, (1.0 - e) * (1.0 - l)]
    }

    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> PulseOutcome {
        let u = rng.next_u64();
        let early = (u >> 32) < self.early_threshold;
        let late = (u & 0xffff_ffff) < self.late_threshold;
        match (early, late) {
            (true, true) => PulseOutcome::DoubleClick,
            (true, false) => PulseOutcome::EarlyClick,
            (false, true) => PulseOutcome::LateClick,
            (false, false) => PulseOutcome::NoClick,
        }
    }
}

/// Simulates a single pulse at commanded voltage `v`.
pub fn simulate_pulse<R: RngCore + ?Sized>(
    cfg: &DeviceConfig,
    v: f64,
    rng: &mut R,
) -> Result<PulseOutcome, OpticsError> {
    Ok(PulseModel::new(cfg, v)?.sample(rng))
}
