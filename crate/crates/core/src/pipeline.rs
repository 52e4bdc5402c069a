//! End-to-end run: tune, acquire with self-test, frame, calibrate, extract, analyze.
//!
//! Everything is derived from one master seed. Stage `s` draws its stream from
//! `derive_seed(seed, s)`, so the output does not depend on thread count.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::acquisition::{RawBlock, StateTag, BLOCK_BITS};
use crate::bits::BitBuf;
use crate::blockstream::FrameWriter;
use crate::config::{parse_value, ConfigError, KvMap};
use crate::extractor::{derive_output_length, seed_from_raw, ToeplitzExtractor, DEFAULT_EPSILON_LOG2, DEFAULT_INPUT_BITS};
use crate::metrics::{min_entropy, shannon_entropy, ByteHistogram};
use crate::optics::DeviceConfig;
use crate::rng::{derive_seed, sim_rng};
use crate::selftest::{SelfTester, SelftestSettings, VisibilityReport};
use crate::testkit::{quick_battery, TestReport, MIN_BATTERY_BITS};
use crate::tuner::{optimize, TunerSettings};

pub const DEFAULT_CALIBRATION_BLOCKS: usize = 64;
pub const DEFAULT_QUEUE_BLOCKS: usize = 8;

pub const FRAMES_FILE: &str = "blocks.sqrn";
pub const RAW_FILE: &str = "raw.bin";
pub const EXTRACTED_FILE: &str = "extracted.bin";
pub const TUNE_FILE: &str = "tune.csv";
pub const BLOCKS_FILE: &str = "blocks.csv";
pub const VISIBILITY_FILE: &str = "visibility.csv";
pub const BATTERY_FILE: &str = "battery.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Tune,
    Acquire,
    Stream,
    Calibrate,
    Extract,
    Analyze,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Tune => "tune",
            Stage::Acquire => "acquire",
            Stage::Stream => "stream",
            Stage::Calibrate => "calibrate",
            Stage::Extract => "extract",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(self.source.as_ref())
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<Box<dyn std::error::Error + Send + Sync>>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            stage,
            source: e.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub device: DeviceConfig,
    /// When false the Omega voltage from `selftest` is used as is.
    pub tune: bool,
    pub tuner: TunerSettings,
    pub selftest: SelftestSettings,
    pub blocks: usize,
    pub calibration_blocks: usize,
    pub n: usize,
    pub epsilon_log2: f64,
    /// Worker threads for extraction; 0 uses the rayon default.
    pub threads: usize,
    pub queue_blocks: usize,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            device: DeviceConfig::default(),
            tune: true,
            tuner: TunerSettings::default(),
            selftest: SelftestSettings::default(),
            blocks: 100,
            calibration_blocks: DEFAULT_CALIBRATION_BLOCKS,
            n: DEFAULT_INPUT_BITS,
            epsilon_log2: DEFAULT_EPSILON_LOG2,
            threads: 0,
            queue_blocks: DEFAULT_QUEUE_BLOCKS,
            out_dir: PathBuf::from("out"),
            seed: None,
        }
    }
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 24] = [
        "seed",
        "blocks",
        "calibration_blocks",
        "n",
        "epsilon_log2",
        "threads",
        "queue_blocks",
        "out_dir",
        "tune",
        "coarse_start",
        "coarse_end",
        "coarse_step",
        "fine_half_width",
        "fine_step",
        "pulses_per_point",
        "p_psi",
        "p_phi",
        "v_psi",
        "v_phi",
        "v_omega",
        "psi_min_visibility",
        "phi_min_visibility",
        "omega_max_visibility",
        "window",
    ];

    /// Sets a pipeline or device key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let t = &mut self.tuner;
        let s = &mut self.selftest;
        match key {
            "seed" => self.seed = Some(parse_value(key, value)?),
            "blocks" => self.blocks = parse_value(key, value)?,
            "calibration_blocks" => self.calibration_blocks = parse_value(key, value)?,
            "n" => self.n = parse_value(key, value)?,
            "epsilon_log2" => self.epsilon_log2 = parse_value(key, value)?,
            "threads" => self.threads = parse_value(key, value)?,
            "queue_blocks" => self.queue_blocks = parse_value(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "tune" => self.tune = parse_value(key, value)?,
            "coarse_start" => t.coarse_start = parse_value(key, value)?,
            "coarse_end" => t.coarse_end = parse_value(key, value)?,
            "coarse_step" => t.coarse_step = parse_value(key, value)?,
            "fine_half_width" => t.fine_half_width = parse_value(key, value)?,
            "fine_step" => t.fine_step = parse_value(key, value)?,
            "pulses_per_point" => t.pulses_per_point = parse_value(key, value)?,
            "p_psi" => s.p_psi = parse_value(key, value)?,
            "p_phi" => s.p_phi = parse_value(key, value)?,
            "v_psi" => s.v_psi = parse_value(key, value)?,
            "v_phi" => s.v_phi = parse_value(key, value)?,
            "v_omega" => s.v_omega = parse_value(key, value)?,
            "psi_min_visibility" => s.psi_min_visibility = parse_value(key, value)?,
            "phi_min_visibility" => s.phi_min_visibility = parse_value(key, value)?,
            "omega_max_visibility" => s.omega_max_visibility = parse_value(key, value)?,
            "window" => s.window = parse_value(key, value)?,
            _ => self.device.set(key, value)?,
        }
        Ok(())
    }

    /// Applies every entry; unknown keys are an error.
    pub fn apply(&mut self, kv: &KvMap) -> Result<(), ConfigError> {
        for (key, value) in kv.iter() {
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply(kv)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<u64, ConfigError> {
        self.device
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.selftest
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let seed = self
            .seed
            .ok_or_else(|| ConfigError::Invalid("a master seed is required".into()))?;
        if self.blocks == 0 || self.calibration_blocks == 0 || self.queue_blocks == 0 {
            return Err(ConfigError::Invalid(
                "blocks, calibration_blocks and queue_blocks must be positive".into(),
            ));
        }
        if self.n == 0 || !self.n.is_multiple_of(8) {
            return Err(ConfigError::Invalid(format!("n = {} must be a positive multiple of 8", self.n)));
        }
        if !self.epsilon_log2.is_finite() || self.epsilon_log2 < 0.0 {
            return Err(ConfigError::Invalid("epsilon_log2 must be finite and non-negative".into()));
        }
        Ok(seed)
    }
}

/// Per-block analysis line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockRow {
    pub index: u64,
    pub state: &'static str,
    pub shannon_entropy: f64,
    pub min_entropy: f64,
    pub early: u64,
    pub late: u64,
    pub double: u64,
    pub empty: u64,
    pub bitrate_bps: f64,
}

pub const BLOCK_ROW_HEADER: &str = "index,state,shannon_entropy,min_entropy,early,late,double,empty,bitrate_bps";

impl BlockRow {
    pub fn from_block(b: &RawBlock, cfg: &DeviceConfig) -> Self {
        let h = b.histogram();
        let acc = b.accounting.unwrap_or_default();
        let pulses = acc.end_pulse - acc.start_pulse;
        Self {
            index: b.index,
            state: b.state_tag.name(),
            shannon_entropy: b.shannon_entropy,
            min_entropy: min_entropy(&h).expect("payload is never empty"),
            early: b.early,
            late: b.late,
            double: acc.double,
            empty: acc.empty,
            bitrate_bps: if pulses == 0 {
                0.0
            } else {
                BLOCK_BITS as f64 * cfg.pulse_rate_hz / pulses as f64
            },
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{},{},{},{},{:.1}",
            self.index,
            self.state,
            self.shannon_entropy,
            self.min_entropy,
            self.early,
            self.late,
            self.double,
            self.empty,
            self.bitrate_bps
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub v_opt: f64,
    pub tuned: bool,
    pub blocks_requested: usize,
    pub blocks_run: u64,
    pub omega_blocks: usize,
    pub psi_blocks: usize,
    pub phi_blocks: usize,
    pub alarm: bool,
    pub first_alarm_block: Option<u64>,
    pub calibration_blocks: usize,
    pub h_min_calibration: f64,
    pub n: usize,
    pub m: usize,
    pub epsilon_log2: f64,
    pub efficiency: f64,
    pub seed_bits: usize,
    pub seed_sha256: String,
    pub raw_bits: usize,
    pub extracted_bits: usize,
    pub extracted_sha256: String,
    pub extracted_shannon_entropy: Option<f64>,
    pub extracted_min_entropy: Option<f64>,
    pub battery: Option<TestReport>,
    pub raw_bitrate_bps: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: PipelineReport,
    pub visibility: VisibilityReport,
    pub extracted: BitBuf,
    pub out_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Calibrated min-entropy per byte over the leading blocks.
pub fn calibrate_min_entropy(blocks: &[RawBlock]) -> Option<f64> {
    let mut h = ByteHistogram::new();
    for b in blocks {
        h.update(&b.payload[..]);
    }
    min_entropy(&h).ok()
}

/// Runs on the caller's thread, except for the acquisition producer and the
/// extraction workers.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    let seed = cfg.validate().at(Stage::Config)?;
    fs::create_dir_all(&cfg.out_dir).at(Stage::Config)?;
    let path = |name: &str| cfg.out_dir.join(name);

    let v_opt = if cfg.tune {
        let mut rng = sim_rng(derive_seed(seed, 0));
        let opt = optimize(&cfg.device, &cfg.tuner, &mut rng).at(Stage::Tune)?;
        fs::write(path(TUNE_FILE), opt.to_csv()).at(Stage::Tune)?;
        opt.v_opt
    } else {
        cfg.selftest.v_omega
    };

    let settings = SelftestSettings {
        v_omega: v_opt,
        ..cfg.selftest.clone()
    };
    let mut tester = SelfTester::new(&cfg.device, &settings, sim_rng(derive_seed(seed, 1))).at(Stage::Acquire)?;
    let (tx, rx) = sync_channel(cfg.queue_blocks);
    let n_blocks = cfg.blocks;
    let producer = std::thread::spawn(move || {
        for _ in 0..n_blocks {
            match tester.step() {
                Ok(block) => {
                    // A block that trips the alarm is framed but never emitted as output.
                    let alarmed = tester.alarmed();
                    if tx.send(Ok((block, alarmed))).is_err() || alarmed {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
        tester.into_report()
    });

    let mut frames = FrameWriter::new(BufWriter::new(File::create(path(FRAMES_FILE)).at(Stage::Stream)?));
    let mut omega: Vec<RawBlock> = Vec::new();
    let mut rows = vec![BLOCK_ROW_HEADER.to_string()];
    let mut omega_pulses = 0u64;
    for item in rx {
        let (block, alarmed) = item.at(Stage::Acquire)?;
        frames.write_block(&block).at(Stage::Stream)?;
        rows.push(BlockRow::from_block(&block, &cfg.device).csv_line());
        if block.state_tag == StateTag::Omega && !alarmed {
            omega_pulses += block.total_pulses().unwrap_or(0);
            omega.push(block);
        }
    }
    frames.flush().at(Stage::Stream)?;
    let visibility = producer.join().map_err(|_| PipelineError {
        stage: Stage::Acquire,
        source: "acquisition thread panicked".into(),
    })?;
    fs::write(path(BLOCKS_FILE), rows.join("\n") + "\n").at(Stage::Analyze)?;
    fs::write(path(VISIBILITY_FILE), visibility.to_csv()).at(Stage::Analyze)?;

    let mut raw_bytes = Vec::with_capacity(omega.len() * BLOCK_BITS / 8);
    for b in &omega {
        raw_bytes.extend_from_slice(&b.payload[..]);
    }
    fs::write(path(RAW_FILE), &raw_bytes).at(Stage::Stream)?;

    let k = cfg.calibration_blocks.min(omega.len());
    let h_min = calibrate_min_entropy(&omega[..k]).ok_or_else(|| PipelineError {
        stage: Stage::Calibrate,
        source: "no balanced blocks were emitted".into(),
    })?;
    let m = derive_output_length(cfg.n, h_min, cfg.epsilon_log2).at(Stage::Calibrate)?;

    let raw = BitBuf::from_bytes(raw_bytes);
    let (seed_bits, rest) = seed_from_raw(&raw, cfg.n, m).at(Stage::Extract)?;
    let ext = ToeplitzExtractor::build(&seed_bits, cfg.n, m).at(Stage::Extract)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .at(Stage::Extract)?;
    let extracted = pool.install(|| ext.extract_par(&rest)).at(Stage::Extract)?;
    fs::write(path(EXTRACTED_FILE), extracted.whole_bytes()).at(Stage::Extract)?;

    let hist = ByteHistogram::from_bytes(extracted.whole_bytes());
    let battery = if extracted.len() >= MIN_BATTERY_BITS {
        let report = quick_battery(&extracted).at(Stage::Analyze)?;
        fs::write(path(BATTERY_FILE), report.to_csv()).at(Stage::Analyze)?;
        Some(report)
    } else {
        None
    };

    let count = |tag| visibility.count(tag);
    let report = PipelineReport {
        seed,
        v_opt,
        tuned: cfg.tune,
        blocks_requested: cfg.blocks,
        blocks_run: visibility.blocks_run,
        omega_blocks: omega.len(),
        psi_blocks: count(StateTag::Psi),
        phi_blocks: count(StateTag::Phi),
        alarm: visibility.any_alarm(),
        first_alarm_block: visibility.first_alarm_block,
        calibration_blocks: k,
        h_min_calibration: h_min,
        n: cfg.n,
        m,
        epsilon_log2: cfg.epsilon_log2,
        efficiency: ext.efficiency(),
        seed_bits: seed_bits.len(),
        seed_sha256: sha256_hex(seed_bits.as_bytes()),
        raw_bits: raw.len(),
        extracted_bits: extracted.len(),
        extracted_sha256: sha256_hex(extracted.whole_bytes()),
        extracted_shannon_entropy: shannon_entropy(&hist).ok(),
        extracted_min_entropy: min_entropy(&hist).ok(),
        battery,
        raw_bitrate_bps: if omega_pulses == 0 {
            0.0
        } else {
            (omega.len() * BLOCK_BITS) as f64 * cfg.device.pulse_rate_hz / omega_pulses as f64
        },
    };
    write_json(&path(REPORT_FILE), &report).at(Stage::Report)?;
    Ok(PipelineOutcome {
        report,
        visibility,
        extracted,
        out_dir: cfg.out_dir.clone(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    fs::write(path, text + "\n")
}
