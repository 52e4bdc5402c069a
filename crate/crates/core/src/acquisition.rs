//! Pulse loop and 32 KiB block assembly.

use std::fmt;
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use thiserror::Error;

use crate::metrics::{shannon_entropy, ByteHistogram};
use crate::optics::{DeviceConfig, OpticsError, PulseModel, PulseOutcome};
use crate::rng::{sim_rng, SimRng};

pub const BLOCK_BYTES: usize = 32_768;
pub const BLOCK_BITS: usize = BLOCK_BYTES * 8;

/// Default cap on pulses spent filling one block before giving up.
pub const DEFAULT_MAX_PULSES_PER_BLOCK: u64 = 1 << 30;

#[derive(Debug, Error, PartialEq)]
pub enum AcquisitionError {
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error("block {index} still incomplete after {pulses} pulses ({bits} bits accepted)")]
    Stalled { index: u64, pulses: u64, bits: usize },
    #[error("n_blocks must be at least 1")]
    NoBlocks,
    #[error("bitrate needs at least one block")]
    EmptyInput,
    #[error("block {0} carries no pulse accounting")]
    MissingAccounting(u64),
}

/// Prepared state during a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateTag {
    Omega,
    Psi,
    Phi,
}

impl StateTag {
    pub const ALL: [StateTag; 3] = [StateTag::Omega, StateTag::Psi, StateTag::Phi];

    pub fn wire_code(self) -> u8 {
        match self {
            StateTag::Omega => 0,
            StateTag::Psi => 1,
            StateTag::Phi => 2,
        }
    }

    pub fn from_wire_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(StateTag::Omega),
            1 => Some(StateTag::Psi),
            2 => Some(StateTag::Phi),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StateTag::Omega => "omega",
            StateTag::Psi => "psi",
            StateTag::Phi => "phi",
        }
    }
}

impl fmt::Display for StateTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Producer-side bookkeeping that cannot be recovered from the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PulseAccounting {
    pub double: u64,
    pub empty: u64,
    /// First pulse index consumed by the block.
    pub start_pulse: u64,
    /// One past the last pulse index consumed by the block.
    pub end_pulse: u64,
}

#[derive(Clone, PartialEq)]
pub struct RawBlock {
    pub index: u64,
    pub state_tag: StateTag,
    /// MSB-first: the first accepted bit is the top bit of byte 0.
    pub payload: Box<[u8; BLOCK_BYTES]>,
    /// Single early clicks, i.e. zero bits in the payload.
    pub early: u64,
    /// Single late clicks, i.e. one bits in the payload.
    pub late: u64,
    pub shannon_entropy: f64,
    /// `None` for blocks reconstructed from the wire.
    pub accounting: Option<PulseAccounting>,
}

impl fmt::Debug for RawBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RawBlock")
            .field("index", &self.index)
            .field("state_tag", &self.state_tag)
            .field("early", &self.early)
            .field("late", &self.late)
            .field("shannon_entropy", &self.shannon_entropy)
            .field("accounting", &self.accounting)
            .finish_non_exhaustive()
    }
}

pub(crate) fn boxed_payload(bytes: Vec<u8>) -> Box<[u8; BLOCK_BYTES]> {
    bytes
        .into_boxed_slice()
        .try_into()
        .expect("payload must be exactly BLOCK_BYTES long")
}

impl RawBlock {
    /// Builds a block from a payload alone, deriving every statistic from it.
    pub fn from_payload(index: u64, state_tag: StateTag, payload: Box<[u8; BLOCK_BYTES]>) -> Self {
        let late: u64 = payload.iter().map(|b| b.count_ones() as u64).sum();
        let early = BLOCK_BITS as u64 - late;
        let entropy = shannon_entropy(&ByteHistogram::from_bytes(&payload[..]))
            .expect("payload is never empty");
        Self {
            index,
            state_tag,
            payload,
            early,
            late,
            shannon_entropy: entropy,
            accounting: None,
        }
    }

    /// The part of the block that survives framing.
    pub fn wire_view(&self) -> RawBlock {
        RawBlock {
            accounting: None,
            ..self.clone()
        }
    }

    pub fn histogram(&self) -> ByteHistogram {
        ByteHistogram::from_bytes(&self.payload[..])
    }

    pub fn total_pulses(&self) -> Option<u64> {
        self.accounting.map(|a| a.end_pulse - a.start_pulse)
    }

    /// Simulated-clock time of the first pulse, in seconds.
    pub fn start_time_s(&self, cfg: &DeviceConfig) -> Option<f64> {
        self.accounting
            .map(|a| a.start_pulse as f64 / cfg.pulse_rate_hz)
    }

    pub fn end_time_s(&self, cfg: &DeviceConfig) -> Option<f64> {
        self.accounting.map(|a| a.end_pulse as f64 / cfg.pulse_rate_hz)
    }
}

/// Serial pulse producer for one simulated device.
pub struct Acquirer {
    cfg: DeviceConfig,
    rng: SimRng,
    next_pulse: u64,
    next_index: u64,
    max_pulses_per_block: u64,
}

impl Acquirer {
    pub fn new(cfg: &DeviceConfig, rng: SimRng) -> Result<Self, AcquisitionError> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            rng,
            next_pulse: 0,
            next_index: 0,
            max_pulses_per_block: DEFAULT_MAX_PULSES_PER_BLOCK,
        })
    }

    pub fn with_max_pulses_per_block(mut self, max: u64) -> Self {
        self.max_pulses_per_block = max;
        self
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.cfg
    }

    pub fn rng_mut(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    pub fn pulses_elapsed(&self) -> u64 {
        self.next_pulse
    }

    pub fn next_block(&mut self, v: f64, state_tag: StateTag) -> Result<RawBlock, AcquisitionError> {
        let model = PulseModel::new(&self.cfg, v)?;
        let start_pulse = self.next_pulse;
        let mut payload = vec![0u8; BLOCK_BYTES];
        let (mut early, mut late, mut double, mut empty) = (0u64, 0u64, 0u64, 0u64);
        let mut filled = 0usize;
        let mut acc = 0u8;
        let mut pulses = 0u64;
        while filled < BLOCK_BITS {
            if pulses == self.max_pulses_per_block {
                self.next_pulse += pulses;
                return Err(AcquisitionError::Stalled {
                    index: self.next_index,
                    pulses,
                    bits: filled,
                });
            }
            pulses += 1;
            let bit = match model.sample(&mut self.rng) {
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
            filled += 1;
            if filled & 7 == 0 {
                payload[(filled >> 3) - 1] = acc;
                acc = 0;
            }
        }
        self.next_pulse += pulses;
        let index = self.next_index;
        self.next_index += 1;
        let payload = boxed_payload(payload);
        let entropy = shannon_entropy(&ByteHistogram::from_bytes(&payload[..]))
            .expect("payload is never empty");
        Ok(RawBlock {
            index,
            state_tag,
            payload,
            early,
            late,
            shannon_entropy: entropy,
            accounting: Some(PulseAccounting {
                double,
                empty,
                start_pulse,
                end_pulse: self.next_pulse,
            }),
        })
    }
}

/// Acquires `n_blocks` balanced-state blocks at a fixed voltage.
pub fn run_acquisition(
    cfg: &DeviceConfig,
    v: f64,
    n_blocks: usize,
    rng: SimRng,
) -> Result<Vec<RawBlock>, AcquisitionError> {
    if n_blocks == 0 {
        return Err(AcquisitionError::NoBlocks);
    }
    let mut acq = Acquirer::new(cfg, rng)?;
    (0..n_blocks)
        .map(|_| acq.next_block(v, StateTag::Omega))
        .collect()
}

/// Accepted bits per second of simulated time.
pub fn effective_bitrate(blocks: &[RawBlock], cfg: &DeviceConfig) -> Result<f64, AcquisitionError> {
    if blocks.is_empty() {
        return Err(AcquisitionError::EmptyInput);
    }
    let mut pulses = 0u64;
    for b in blocks {
        pulses += b
            .total_pulses()
            .ok_or(AcquisitionError::MissingAccounting(b.index))?;
    }
    let bits = (blocks.len() * BLOCK_BITS) as f64;
    Ok(bits / (pulses as f64 / cfg.pulse_rate_hz))
}

/// Receiving end of [`spawn_acquisition`].
pub type BlockReceiver = Receiver<Result<RawBlock, AcquisitionError>>;

/// Runs the producer on its own thread; completed blocks flow through a
/// bounded queue of `capacity` blocks and the producer waits when it is full.
pub fn spawn_acquisition(
    cfg: &DeviceConfig,
    v: f64,
    n_blocks: usize,
    capacity: usize,
) -> Result<(BlockReceiver, JoinHandle<()>), AcquisitionError> {
    if n_blocks == 0 {
        return Err(AcquisitionError::NoBlocks);
    }
    let mut acq = Acquirer::new(cfg, sim_rng(cfg.rng_seed))?;
    let (tx, rx) = sync_channel(capacity);
    let handle = std::thread::spawn(move || {
        for _ in 0..n_blocks {
            let block = acq.next_block(v, StateTag::Omega);
            let failed = block.is_err();
            if tx.send(block).is_err() || failed {
                break;
            }
        }
    });
    Ok((rx, handle))
}
