use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::RngCore;
use serde::Serialize;

use sqrng::acquisition::{run_acquisition, StateTag, BLOCK_BYTES};
use sqrng::bits::BitBuf;
use sqrng::blockstream::{FrameReader, FrameWriter};
use sqrng::config::KvMap;
use sqrng::extractor::{benchmark, derive_output_length, seed_from_raw, ToeplitzExtractor};
use sqrng::metrics::{min_entropy, shannon_entropy, ByteHistogram};
use sqrng::optics::balance_voltage;
use sqrng::pipeline::{run_pipeline, sha256_hex, write_json, BlockRow, PipelineConfig, BLOCK_ROW_HEADER};
use sqrng::rng::{derive_seed, sim_rng};
use sqrng::selftest::SelfTester;
use sqrng::testkit::{chunked_battery, export_dieharder, export_nist, import_ascii, import_binary, quick_battery};
use sqrng::tuner::{fit_splitting_law, optimize};

/// Exit status for a run that completed but failed a health or quality check.
const EXIT_CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "sqrng", version, about = "Simulated tunable-beamsplitter QRNG toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coarse and fine voltage sweeps; prints the optimal voltage.
    Tune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tuner: TunerArgs,
        /// CSV destination for both sweeps (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also fit the splitting law to the coarse sweep.
        #[arg(long)]
        fit: bool,
    },
    /// Acquires balanced blocks at a fixed voltage.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2.15)]
        voltage: f64,
        #[arg(long, default_value_t = 10)]
        blocks: usize,
        /// Payload-only output.
        #[arg(long)]
        out: PathBuf,
        /// Per-block CSV (stdout when omitted).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Runs the state-switching self-test and reports visibilities.
    Selftest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        selftest: SelftestArgs,
        #[arg(long, default_value_t = 200)]
        blocks: usize,
        /// CSV of the visibility series (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Acquires with self-test and writes framed blocks to a sink.
    Serve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        selftest: SelftestArgs,
        #[arg(long, default_value_t = 10)]
        blocks: usize,
        /// File path, or `-` for stdout.
        #[arg(long)]
        out: String,
    },
    /// Reads framed blocks from a source and reports them.
    Recv {
        /// File path, or `-` for stdin.
        #[arg(long = "in")]
        input: String,
        /// Writes the payloads of balanced blocks here.
        #[arg(long)]
        raw_out: Option<PathBuf>,
    },
    /// Toeplitz extraction of a raw payload file.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long = "epsilon-log2", default_value_t = 100.0)]
        epsilon_log2: f64,
        /// Min-entropy per byte used to size the output.
        #[arg(long, conflicts_with = "hmin_from")]
        hmin: Option<f64>,
        /// Raw sample whose byte min-entropy sizes the output.
        #[arg(long = "hmin-from")]
        hmin_from: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Quick statistical battery over a bit file.
    Check {
        #[arg(long = "in")]
        input: PathBuf,
        /// Input holds ASCII '0'/'1' instead of raw bytes.
        #[arg(long)]
        ascii: bool,
        /// Also run per-chunk and KS-aggregate the p-values.
        #[arg(long)]
        chunk_bits: Option<usize>,
        #[arg(long, value_parser = ["csv", "jsonl"], default_value = "csv")]
        format: String,
    },
    /// Writes input for the external NIST STS and Dieharder suites.
    Export {
        #[arg(long = "in")]
        input: PathBuf,
        /// ASCII file; a raw companion is written next to it with `.bin` appended.
        #[arg(long)]
        nist: Option<PathBuf>,
        #[arg(long)]
        dieharder: Option<PathBuf>,
        /// Truncate the exported stream to this many bits.
        #[arg(long)]
        bits: Option<usize>,
    },
    /// Per-block and aggregate statistics of a frame file.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Full pipeline from one configuration.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tuner: TunerArgs,
        #[command(flatten)]
        selftest: SelftestArgs,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long = "calibration_blocks", alias = "calibration-blocks")]
        calibration_blocks: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long = "epsilon-log2")]
        epsilon_log2: Option<f64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long = "out_dir", alias = "out-dir")]
        out_dir: Option<PathBuf>,
        /// Skip tuning and use v_omega as given.
        #[arg(long)]
        no_tune: bool,
    },
    /// Packed versus bitwise extractor throughput.
    Bench {
        #[arg(long, default_value_t = 1 << 20)]
        bits: usize,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long, default_value_t = 187)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args, Default)]
struct Common {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    device: DeviceArgs,
}

/// Generates a flag per configuration key, named exactly like the key.
macro_rules! key_args {
    ($name:ident { $($field:ident : $ty:ty),* $(,)? }) => {
        #[derive(Args, Default)]
        struct $name {
            $(
                #[arg(long = stringify!($field))]
                $field: Option<$ty>,
            )*
        }

        impl $name {
            fn overrides(&self) -> Vec<(&'static str, String)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.to_string()));
                    }
                )*
                out
            }
        }
    };
}

key_args!(DeviceArgs {
    pulse_rate_hz: f64,
    pulse_width_ns: f64,
    mean_photon_number: f64,
    v_pi_volts: f64,
    v_offset_volts: f64,
    transmittance_early: f64,
    transmittance_late: f64,
    detector_efficiency: f64,
    dark_count_prob: f64,
    dead_time_ns: f64,
    timebin_separation_ns: f64,
    rng_seed: u64,
});

key_args!(TunerArgs {
    coarse_start: f64,
    coarse_end: f64,
    coarse_step: f64,
    fine_half_width: f64,
    fine_step: f64,
    pulses_per_point: u64,
});

key_args!(SelftestArgs {
    p_psi: f64,
    p_phi: f64,
    v_psi: f64,
    v_phi: f64,
    v_omega: f64,
    psi_min_visibility: f64,
    phi_min_visibility: f64,
    omega_max_visibility: f64,
    window: usize,
});

/// Config file, then flags. With `seed_fallback`, a missing master seed
/// falls back to the device `rng_seed`.
fn load_with(common: &Common, extra: &[(&'static str, String)], seed_fallback: bool) -> Result<PipelineConfig> {
    let mut kv = match &common.config {
        Some(p) => KvMap::load(p)?,
        None => KvMap::default(),
    };
    for (k, v) in common.device.overrides().into_iter().chain(extra.iter().cloned()) {
        kv.insert(k, v);
    }
    if let Some(seed) = common.seed {
        kv.insert("seed", seed.to_string());
    }
    let mut cfg = PipelineConfig::from_kv(&kv)?;
    cfg.device.validate()?;
    cfg.selftest.validate()?;
    if cfg.seed.is_none() && seed_fallback {
        cfg.seed = Some(cfg.device.rng_seed);
    }
    Ok(cfg)
}

fn load(common: &Common, extra: &[(&'static str, String)]) -> Result<PipelineConfig> {
    load_with(common, extra, true)
}

fn open_output(target: &str) -> Result<Box<dyn Write>> {
    Ok(if target == "-" {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        Box::new(BufWriter::new(
            File::create(target).with_context(|| format!("cannot create {target}"))?,
        ))
    })
}

fn open_input(source: &str) -> Result<Box<dyn Read>> {
    Ok(if source == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(BufReader::new(
            File::open(source).with_context(|| format!("cannot open {source}"))?,
        ))
    })
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_tune(common: &Common, tuner: &TunerArgs, out: Option<&Path>, fit: bool) -> Result<ExitCode> {
    let cfg = load(common, &tuner.overrides())?;
    let mut rng = sim_rng(derive_seed(cfg.seed.unwrap_or_default(), 0));
    let opt = optimize(&cfg.device, &cfg.tuner, &mut rng)?;
    write_text(out, &opt.to_csv())?;
    let best = opt.best();
    eprintln!(
        "v_opt = {:.3} V  entropy = {:.5} bits/byte  analytic balance = {:.3} V",
        opt.v_opt,
        best.entropy,
        balance_voltage(&cfg.device)?
    );
    if fit {
        let f = fit_splitting_law(&opt.coarse, &cfg.device)?;
        eprintln!(
            "fit: a_e = {:.4} a_l = {:.4} v_pi = {:.4} offset = {:.4} chi2 = {:.2} dof = {} p = {:.4} max|z| = {:.2}",
            f.amplitude_early,
            f.amplitude_late,
            f.v_pi,
            f.v_offset,
            f.chi2,
            f.dof,
            f.p_value,
            f.max_abs_complementarity_z()
        );
    }
    println!("{:.3}", opt.v_opt);
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(common: &Common, voltage: f64, blocks: usize, out: &Path, csv: Option<&Path>) -> Result<ExitCode> {
    let cfg = load(common, &[])?;
    let rng = sim_rng(derive_seed(cfg.seed.unwrap_or_default(), 1));
    let acquired = run_acquisition(&cfg.device, voltage, blocks, rng)?;
    let mut raw = BufWriter::new(File::create(out).with_context(|| format!("cannot create {}", out.display()))?);
    let mut text = format!("{BLOCK_ROW_HEADER}\n");
    for b in &acquired {
        raw.write_all(&b.payload[..])?;
        text.push_str(&BlockRow::from_block(b, &cfg.device).csv_line());
        text.push('\n');
    }
    raw.flush()?;
    write_text(csv, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_selftest(common: &Common, args: &SelftestArgs, blocks: usize, out: Option<&Path>) -> Result<ExitCode> {
    let cfg = load(common, &args.overrides())?;
    let run = sqrng::selftest::run_selftest(
        &cfg.device,
        &cfg.selftest,
        blocks,
        sim_rng(derive_seed(cfg.seed.unwrap_or_default(), 1)),
    )?;
    write_text(out, &run.report.to_csv())?;
    eprint!("{}", run.report.summary());
    for tag in StateTag::ALL {
        if let Some(t) = run.report.trend(tag) {
            eprintln!("{tag}: slope = {:.3e} +- {:.3e} per block", t.slope, t.slope_stderr);
        }
    }
    if let Some(b) = run.report.first_alarm_block {
        eprintln!("ALARM at block {b}; emission stopped after {} blocks", run.report.blocks_run);
        return Ok(ExitCode::from(EXIT_CHECK_FAILED));
    }
    eprintln!("no alarm; {} balanced blocks emitted", run.omega_blocks.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(common: &Common, args: &SelftestArgs, blocks: usize, out: &str) -> Result<ExitCode> {
    let cfg = load(common, &args.overrides())?;
    let mut tester = SelfTester::new(
        &cfg.device,
        &cfg.selftest,
        sim_rng(derive_seed(cfg.seed.unwrap_or_default(), 1)),
    )?;
    let mut writer = FrameWriter::new(open_output(out)?);
    for _ in 0..blocks {
        let block = tester.step()?;
        writer.write_block(&block)?;
        if tester.alarmed() {
            break;
        }
    }
    writer.flush()?;
    eprintln!("{} frames written", writer.frames_written());
    if tester.alarmed() {
        eprint!("ALARM\n{}", tester.report().summary());
        return Ok(ExitCode::from(EXIT_CHECK_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_recv(input: &str, raw_out: Option<&Path>) -> Result<ExitCode> {
    let reader = FrameReader::new(open_input(input)?);
    let mut raw = match raw_out {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let mut out = io::stdout().lock();
    writeln!(out, "index,state,early,late,shannon_entropy")?;
    let (mut good, mut bad) = (0u64, 0u64);
    for item in reader {
        match item {
            Ok(b) => {
                good += 1;
                writeln!(out, "{},{},{},{},{:.6}", b.index, b.state_tag, b.early, b.late, b.shannon_entropy)?;
                if let (Some(w), StateTag::Omega) = (raw.as_mut(), b.state_tag) {
                    w.write_all(&b.payload[..])?;
                }
            }
            Err(e) => {
                bad += 1;
                eprintln!("rejected frame: {e}");
            }
        }
    }
    if let Some(w) = raw.as_mut() {
        w.flush()?;
    }
    eprintln!("{good} frames accepted, {bad} rejected");
    Ok(if bad == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    })
}

#[derive(Serialize)]
struct ExtractSidecar {
    input: String,
    n: usize,
    m: usize,
    epsilon_log2: f64,
    h_min: f64,
    seed_bits: usize,
    seed_sha256: String,
    efficiency: f64,
    input_bits: usize,
    output_bits: usize,
}

#[allow(clippy::too_many_arguments)]
fn cmd_extract(
    input: &Path,
    out: &Path,
    n: usize,
    epsilon_log2: f64,
    hmin: Option<f64>,
    hmin_from: Option<&Path>,
    threads: usize,
) -> Result<ExitCode> {
    let bytes = fs::read(input).with_context(|| format!("cannot read {}", input.display()))?;
    let h_min = match (hmin, hmin_from) {
        (Some(h), _) => h,
        (None, Some(p)) => min_entropy(&ByteHistogram::from_bytes(&fs::read(p)?))?,
        // Default calibration window: the leading 64 blocks of the input.
        (None, None) => min_entropy(&ByteHistogram::from_bytes(&bytes[..bytes.len().min(64 * BLOCK_BYTES)]))?,
    };
    let m = derive_output_length(n, h_min, epsilon_log2)?;
    let raw = BitBuf::from_bytes(bytes);
    let (seed, rest) = seed_from_raw(&raw, n, m)?;
    let ext = ToeplitzExtractor::build(&seed, n, m)?;
    let pool = rayon_pool(threads)?;
    let output = pool.install(|| ext.extract_par(&rest))?;
    fs::write(out, output.whole_bytes())?;
    let sidecar = ExtractSidecar {
        input: input.display().to_string(),
        n,
        m,
        epsilon_log2,
        h_min,
        seed_bits: seed.len(),
        seed_sha256: sha256_hex(seed.as_bytes()),
        efficiency: ext.efficiency(),
        input_bits: raw.len(),
        output_bits: output.len(),
    };
    let mut side = out.as_os_str().to_owned();
    side.push(".json");
    write_json(Path::new(&side), &sidecar)?;
    eprintln!(
        "h_min = {h_min:.4}  m = {m}  efficiency = {:.2}%  {} bits out",
        100.0 * ext.efficiency(),
        output.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn rayon_pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

fn read_bits(input: &Path, ascii: bool) -> Result<BitBuf> {
    Ok(if ascii { import_ascii(input)? } else { import_binary(input)? })
}

fn cmd_check(input: &Path, ascii: bool, chunk_bits: Option<usize>, format: &str) -> Result<ExitCode> {
    let bits = read_bits(input, ascii)?;
    let report = quick_battery(&bits)?;
    let render = |r: &sqrng::testkit::TestReport| if format == "jsonl" { r.to_json_lines() } else { r.to_csv() };
    print!("{}", render(&report));
    let mut failed = report.any_fail();
    if let Some(chunk) = chunk_bits {
        let (_, summary) = chunked_battery(&bits, chunk)?;
        print!("{}", render(&summary));
        failed |= summary.any_fail();
    }
    Ok(if failed {
        ExitCode::from(EXIT_CHECK_FAILED)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_export(input: &Path, nist: Option<&Path>, dieharder: Option<&Path>, limit: Option<usize>) -> Result<ExitCode> {
    if nist.is_none() && dieharder.is_none() {
        bail!("nothing to do: pass --nist and/or --dieharder");
    }
    let mut bits = import_binary(input)?;
    if let Some(n) = limit {
        bits = bits.slice(0, n.min(bits.len()));
    }
    if let Some(p) = nist {
        let e = export_nist(&bits, p)?;
        eprintln!("{} ({} chars), {}", e.ascii.display(), bits.len(), e.binary.display());
    }
    if let Some(p) = dieharder {
        let n = export_dieharder(&bits, p)?;
        eprintln!("{} ({n} bytes)", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(input: &Path) -> Result<ExitCode> {
    let reader = FrameReader::new(BufReader::new(File::open(input)?));
    let mut out = io::stdout().lock();
    writeln!(out, "index,state,shannon_entropy,min_entropy,early,late")?;
    let mut all = ByteHistogram::new();
    let mut entropies = Vec::new();
    let (mut early, mut late) = (0u64, 0u64);
    for item in reader {
        let b = item?;
        let h = b.histogram();
        writeln!(
            out,
            "{},{},{:.6},{:.6},{},{}",
            b.index,
            b.state_tag,
            b.shannon_entropy,
            min_entropy(&h)?,
            b.early,
            b.late
        )?;
        if b.state_tag == StateTag::Omega {
            all.merge(&h);
            entropies.push(b.shannon_entropy);
            early += b.early;
            late += b.late;
        }
    }
    if entropies.is_empty() {
        bail!("no balanced blocks in {}", input.display());
    }
    let n = entropies.len() as f64;
    let mean = entropies.iter().sum::<f64>() / n;
    let std = (entropies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    eprintln!("blocks,mean_shannon_entropy,std_shannon_entropy,shannon_entropy_all,min_entropy_all,early,late");
    eprintln!(
        "{},{mean:.6},{std:.6},{:.6},{:.6},{early},{late}",
        entropies.len(),
        shannon_entropy(&all)?,
        min_entropy(&all)?
    );
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    common: &Common,
    tuner: &TunerArgs,
    selftest: &SelftestArgs,
    blocks: Option<usize>,
    calibration_blocks: Option<usize>,
    n: Option<usize>,
    epsilon_log2: Option<f64>,
    threads: Option<usize>,
    out_dir: Option<&Path>,
    no_tune: bool,
) -> Result<ExitCode> {
    let mut extra = tuner.overrides();
    extra.extend(selftest.overrides());
    let opt = |k: &'static str, v: Option<String>| v.map(|v| (k, v));
    extra.extend(
        [
            opt("blocks", blocks.map(|v| v.to_string())),
            opt("calibration_blocks", calibration_blocks.map(|v| v.to_string())),
            opt("n", n.map(|v| v.to_string())),
            opt("epsilon_log2", epsilon_log2.map(|v| v.to_string())),
            opt("threads", threads.map(|v| v.to_string())),
            opt("out_dir", out_dir.map(|p| p.display().to_string())),
            opt("tune", no_tune.then(|| "false".to_string())),
        ]
        .into_iter()
        .flatten(),
    );
    let cfg = load_with(common, &extra, false)?;
    if cfg.seed.is_none() {
        bail!("`run` needs a master seed: pass --seed or set `seed` in the config file");
    }
    let outcome = run_pipeline(&cfg)?;
    let r = &outcome.report;
    eprintln!(
        "v_opt = {:.3} V  blocks = {} (omega {}, psi {}, phi {})  h_min = {:.4}  m = {}  extracted {} bits -> {}",
        r.v_opt,
        r.blocks_run,
        r.omega_blocks,
        r.psi_blocks,
        r.phi_blocks,
        r.h_min_calibration,
        r.m,
        r.extracted_bits,
        outcome.out_dir.display()
    );
    let battery_failed = r.battery.as_ref().is_some_and(|b| b.any_fail());
    if let Some(b) = &r.battery {
        eprint!("{}", b.to_csv());
    }
    if r.alarm {
        eprintln!("ALARM at block {:?}; emission stopped", r.first_alarm_block);
    }
    Ok(if r.alarm || battery_failed {
        ExitCode::from(EXIT_CHECK_FAILED)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_bench(bits: usize, n: usize, m: usize, seed: u64) -> Result<ExitCode> {
    let mut rng = sim_rng(seed);
    let mut bytes = vec![0u8; (bits + n + m).div_ceil(8)];
    rng.fill_bytes(&mut bytes);
    let buf = BitBuf::from_bytes(bytes);
    let (s, rest) = seed_from_raw(&buf, n, m)?;
    let ext = ToeplitzExtractor::build(&s, n, m)?;
    let r = benchmark(&ext, &rest.slice(0, bits.min(rest.len())))?;
    println!("input_bits,packed_bits_per_s,bitwise_bits_per_s,speedup");
    println!(
        "{},{:.0},{:.0},{:.1}",
        r.input_bits,
        r.packed_bits_per_s,
        r.bitwise_bits_per_s,
        r.speedup()
    );
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Tune { common, tuner, out, fit } => cmd_tune(&common, &tuner, out.as_deref(), fit),
        Command::Simulate {
            common,
            voltage,
            blocks,
            out,
            csv,
        } => cmd_simulate(&common, voltage, blocks, &out, csv.as_deref()),
        Command::Selftest {
            common,
            selftest,
            blocks,
            out,
        } => cmd_selftest(&common, &selftest, blocks, out.as_deref()),
        Command::Serve {
            common,
            selftest,
            blocks,
            out,
        } => cmd_serve(&common, &selftest, blocks, &out),
        Command::Recv { input, raw_out } => cmd_recv(&input, raw_out.as_deref()),
        Command::Extract {
            input,
            out,
            n,
            epsilon_log2,
            hmin,
            hmin_from,
            threads,
        } => cmd_extract(&input, &out, n, epsilon_log2, hmin, hmin_from.as_deref(), threads),
        Command::Check {
            input,
            ascii,
            chunk_bits,
            format,
        } => cmd_check(&input, ascii, chunk_bits, &format),
        Command::Export {
            input,
            nist,
            dieharder,
            bits,
        } => cmd_export(&input, nist.as_deref(), dieharder.as_deref(), bits),
        Command::Analyze { input } => cmd_analyze(&input),
        Command::Run {
            common,
            tuner,
            selftest,
            blocks,
            calibration_blocks,
            n,
            epsilon_log2,
            threads,
            out_dir,
            no_tune,
        } => cmd_run(
            &common,
            &tuner,
            &selftest,
            blocks,
            calibration_blocks,
            n,
            epsilon_log2,
            threads,
            out_dir.as_deref(),
            no_tune,
        ),
        Command::Bench { bits, n, m, seed } => cmd_bench(bits, n, m, seed),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
