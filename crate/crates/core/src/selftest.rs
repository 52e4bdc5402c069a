//! Prepare-and-measure self-test.
//!
//! Before every block one of three states is prepared: two deterministic
//! audit states (`Psi` at 0 V, all early clicks; `Phi` at 4.2 V, all late
//! clicks) and the balanced state `Omega` used for random output. Each block's
//! visibility is recorded per state and compared against alarm thresholds over
//! a trailing window. Only `Omega` blocks are emitted; after an alarm nothing
//! more is emitted and the run ends.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::acquisition::{AcquisitionError, Acquirer, RawBlock, StateTag};
use crate::metrics::visibility;
use crate::optics::DeviceConfig;
use crate::rng::{sim_rng, SimRng};

#[derive(Debug, Error, PartialEq)]
pub enum SelftestError {
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error("invalid self-test settings: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestSettings {
    pub p_psi: f64,
    pub p_phi: f64,
    pub v_psi: f64,
    pub v_phi: f64,
    pub v_omega: f64,
    /// Alarm when the trailing mean visibility of `Psi` drops below this.
    pub psi_min_visibility: f64,
    pub phi_min_visibility: f64,
    /// Alarm when the trailing mean visibility of `Omega` exceeds this.
    pub omega_max_visibility: f64,
    /// Number of most recent blocks of a state averaged for its alarm.
    pub window: usize,
}

impl Default for SelftestSettings {
    fn default() -> Self {
        Self {
            p_psi: 0.005,
            p_phi: 0.005,
            v_psi: 0.0,
            v_phi: 4.2,
            v_omega: 2.15,
            psi_min_visibility: 0.98,
            phi_min_visibility: 0.98,
            omega_max_visibility: 0.02,
            window: 20,
        }
    }
}

impl SelftestSettings {
    pub fn p_omega(&self) -> f64 {
        1.0 - self.p_psi - self.p_phi
    }

    pub fn validate(&self) -> Result<(), SelftestError> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.p_psi) || !unit(self.p_phi) || self.p_psi + self.p_phi > 1.0 {
            return Err(SelftestError::Settings(format!(
                "state probabilities psi = {}, phi = {} must be in [0, 1] and sum to at most 1",
                self.p_psi, self.p_phi
            )));
        }
        if self.window == 0 {
            return Err(SelftestError::Settings("window must be at least 1".into()));
        }
        let voltages = [self.v_psi, self.v_phi, self.v_omega];
        if voltages.iter().any(|v| !v.is_finite()) {
            return Err(SelftestError::Settings("state voltages must be finite".into()));
        }
        Ok(())
    }

    pub fn voltage(&self, tag: StateTag) -> f64 {
        match tag {
            StateTag::Omega => self.v_omega,
            StateTag::Psi => self.v_psi,
            StateTag::Phi => self.v_phi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatePrep {
    pub tag: StateTag,
    pub voltage: f64,
}

/// Draws the state for the next block.
pub fn choose_state<R: RngCore + ?Sized>(settings: &SelftestSettings, rng: &mut R) -> StatePrep {
    let u: f64 = rng.random();
    let tag = if u < settings.p_psi {
        StateTag::Psi
    } else if u < settings.p_psi + settings.p_phi {
        StateTag::Phi
    } else {
        StateTag::Omega
    };
    StatePrep {
        tag,
        voltage: settings.voltage(tag),
    }
}

/// Ordinary least-squares line through a visibility series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendFit {
    pub slope: f64,
    pub slope_stderr: f64,
}

impl TrendFit {
    pub fn consistent_with_zero(&self, sigmas: f64) -> bool {
        self.slope.abs() <= sigmas * self.slope_stderr
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VisibilityReport {
    pub series: BTreeMap<StateTag, Vec<(u64, f64)>>,
    pub alarms: BTreeMap<StateTag, bool>,
    /// Index of the block whose visibility first raised an alarm.
    pub first_alarm_block: Option<u64>,
    pub blocks_run: u64,
}

impl VisibilityReport {
    pub fn values(&self, tag: StateTag) -> Vec<f64> {
        self.series
            .get(&tag)
            .map(|s| s.iter().map(|&(_, v)| v).collect())
            .unwrap_or_default()
    }

    pub fn count(&self, tag: StateTag) -> usize {
        self.series.get(&tag).map_or(0, Vec::len)
    }

    /// Mean and sample standard deviation.
    pub fn mean_std(&self, tag: StateTag) -> Option<(f64, f64)> {
        let v = self.values(tag);
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some((mean, var.sqrt()))
    }

    pub fn alarm(&self, tag: StateTag) -> bool {
        self.alarms.get(&tag).copied().unwrap_or(false)
    }

    pub fn any_alarm(&self) -> bool {
        self.alarms.values().any(|&a| a)
    }

    pub fn trend(&self, tag: StateTag) -> Option<TrendFit> {
        let s = self.series.get(&tag)?;
        if s.len() < 3 {
            return None;
        }
        let n = s.len() as f64;
        let mx = s.iter().map(|&(x, _)| x as f64).sum::<f64>() / n;
        let my = s.iter().map(|&(_, y)| y).sum::<f64>() / n;
        let sxx: f64 = s.iter().map(|&(x, _)| (x as f64 - mx).powi(2)).sum();
        if sxx == 0.0 {
            return None;
        }
        let sxy: f64 = s.iter().map(|&(x, y)| (x as f64 - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let rss: f64 = s
            .iter()
            .map(|&(x, y)| (y - intercept - slope * x as f64).powi(2))
            .sum();
        Some(TrendFit {
            slope,
            slope_stderr: (rss / (n - 2.0) / sxx).sqrt(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(u64, StateTag, f64)> = self
            .series
            .iter()
            .flat_map(|(&tag, s)| s.iter().map(move |&(i, v)| (i, tag, v)))
            .collect();
        rows.sort_by_key(|r| r.0);
        let mut out = String::from("block_index,state,visibility\n");
        for (i, tag, v) in rows {
            out.push_str(&format!("{i},{tag},{v:.6}\n"));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for tag in [StateTag::Psi, StateTag::Phi, StateTag::Omega] {
            match self.mean_std(tag) {
                Some((m, s)) => out.push_str(&format!(
                    "{tag}: n={} mean={m:.5} std={s:.5} alarm={}\n",
                    self.count(tag),
                    self.alarm(tag)
                )),
                None => out.push_str(&format!("{tag}: n=0\n")),
            }
        }
        out
    }
}

/// Block-by-block self-test driver around one [`Acquirer`].
pub struct SelfTester {
    acq: Acquirer,
    schedule: SimRng,
    settings: SelftestSettings,
    report: VisibilityReport,
}

impl SelfTester {
    /// The state schedule runs on its own stream seeded from the first draw of `rng`.
    pub fn new(cfg: &DeviceConfig, settings: &SelftestSettings, mut rng: SimRng) -> Result<Self, SelftestError> {
        settings.validate()?;
        let schedule = sim_rng(rng.next_u64());
        Ok(Self {
            acq: Acquirer::new(cfg, rng)?,
            schedule,
            settings: settings.clone(),
            report: VisibilityReport::default(),
        })
    }

    pub fn with_max_pulses_per_block(mut self, max: u64) -> Self {
        self.acq = self.acq.with_max_pulses_per_block(max);
        self
    }

    pub fn report(&self) -> &VisibilityReport {
        &self.report
    }

    pub fn into_report(self) -> VisibilityReport {
        self.report
    }

    pub fn alarmed(&self) -> bool {
        self.report.first_alarm_block.is_some()
    }

    pub fn pulses_elapsed(&self) -> u64 {
        self.acq.pulses_elapsed()
    }

    /// Acquires one block in a freshly chosen state and records its visibility.
    pub fn step(&mut self) -> Result<RawBlock, SelftestError> {
        let prep = choose_state(&self.settings, &mut self.schedule);
        let block = self.acq.next_block(prep.voltage, prep.tag)?;
        let nu = visibility(block.early, block.late).expect("a full block has counts");
        let series = self.report.series.entry(prep.tag).or_default();
        series.push((block.index, nu));
        let tail = &series[series.len().saturating_sub(self.settings.window)..];
        let mean = tail.iter().map(|&(_, v)| v).sum::<f64>() / tail.len() as f64;
        let tripped = match prep.tag {
            StateTag::Psi => mean < self.settings.psi_min_visibility,
            StateTag::Phi => mean < self.settings.phi_min_visibility,
            StateTag::Omega => mean > self.settings.omega_max_visibility,
        };
        if tripped {
            self.report.alarms.insert(prep.tag, true);
            self.report.first_alarm_block.get_or_insert(block.index);
        } else {
            self.report.alarms.entry(prep.tag).or_insert(false);
        }
        self.report.blocks_run += 1;
        Ok(block)
    }
}

#[derive(Debug, Clone)]
pub struct SelftestRun {
    pub omega_blocks: Vec<RawBlock>,
    pub report: VisibilityReport,
}

/// Runs up to `n_blocks` blocks, stopping at the first alarm. The block that
/// trips the alarm is not emitted.
pub fn run_selftest(
    cfg: &DeviceConfig,
    settings: &SelftestSettings,
    n_blocks: usize,
    rng: SimRng,
) -> Result<SelftestRun, SelftestError> {
    if n_blocks == 0 {
        return Err(AcquisitionError::NoBlocks.into());
    }
    let mut tester = SelfTester::new(cfg, settings, rng)?;
    let mut omega_blocks = Vec::new();
    for _ in 0..n_blocks {
        let block = tester.step()?;
        if tester.alarmed() {
            break;
        }
        if block.state_tag == StateTag::Omega {
            omega_blocks.push(block);
        }
    }
    Ok(SelftestRun {
        omega_blocks,
        report: tester.into_report(),
    })
}
