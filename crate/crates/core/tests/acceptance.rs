//! Acceptance suite. Every criterion writes one `criterion N: PASS|FAIL` line
//! straight to stderr (visible without `--nocapture`) and then asserts.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;

use sqrng::acquisition::{effective_bitrate, run_acquisition, RawBlock, StateTag};
use sqrng::bits::BitBuf;
use sqrng::blockstream::{decode_frame, encode_frame};
use sqrng::extractor::{derive_output_length, seed_from_raw, ToeplitzExtractor};
use sqrng::metrics::{min_entropy, shannon_entropy, ByteHistogram};
use sqrng::optics::{balance_voltage, DeviceConfig, PulseModel};
use sqrng::pipeline::{calibrate_min_entropy, run_pipeline, PipelineConfig, EXTRACTED_FILE};
use sqrng::rng::sim_rng;
use sqrng::selftest::{run_selftest, SelfTester, SelftestSettings};
use sqrng::testkit::{
    export_dieharder, export_nist, import_ascii, import_binary, ks_statistic, ks_uniformity_pvalue,
    proportion_confidence_interval, quick_battery, TestReport,
};
use sqrng::tuner::{fit_splitting_law, optimize, sweep, TunerSettings, DEFAULT_PULSES_PER_POINT};

fn verdict(n: &str, pass: bool, detail: String) {
    let line = format!("criterion {n}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn block_entropies(blocks: &[RawBlock]) -> Vec<f64> {
    blocks.iter().map(|b| b.shannon_entropy).collect()
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sqrng-accept-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

/// Bit-at-a-time Toeplitz product straight from `T[r][c] = seed[r - c + n - 1]`.
fn dense_oracle(seed: &[bool], n: usize, m: usize, x: &[bool]) -> Vec<bool> {
    (0..m)
        .map(|r| (0..n).fold(false, |acc, c| acc ^ (seed[r + n - 1 - c] & x[c])))
        .collect()
}

/// Maximum gap of the empirical CDF from the identity, both sides of each jump.
fn brute_force_d(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    values
        .iter()
        .map(|&x| {
            let le = values.iter().filter(|&&v| v <= x).count() as f64 / n;
            let lt = values.iter().filter(|&&v| v < x).count() as f64 / n;
            (le - x).abs().max((lt - x).abs())
        })
        .fold(0.0, f64::max)
}

fn brute_force_ks_p(values: &[f64]) -> f64 {
    let rn = (values.len() as f64).sqrt();
    let lambda = (rn + 0.12 + 0.11 / rn) * brute_force_d(values);
    let s: f64 = (1..=2000)
        .map(|k| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

/// Statistical checks get one retry on a fresh seed.
fn battery_with_retry(mut attempt: impl FnMut(u64) -> TestReport) -> (bool, String) {
    let first = attempt(1);
    if first.all_pass() {
        return (true, summarize(&first));
    }
    let second = attempt(2);
    (
        second.all_pass(),
        format!("first attempt [{}], retry [{}]", summarize(&first), summarize(&second)),
    )
}

fn summarize(r: &TestReport) -> String {
    r.results
        .iter()
        .map(|t| format!("{} p={:.4} {}", t.name, t.p_value, t.verdict))
        .collect::<Vec<_>>()
        .join(", ")
}

fn voltage_for_zero_fraction(cfg: &DeviceConfig, target: f64) -> f64 {
    let zero_fraction = |v: f64| {
        let [e, l, _, _] = PulseModel::new(cfg, v).unwrap().outcome_probabilities();
        e / (e + l)
    };
    let (mut lo, mut hi) = (0.5, balance_voltage(cfg).unwrap());
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if zero_fraction(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_01_splitting_law() {
    let cfg = DeviceConfig::default();
    let t = Instant::now();
    let s = sweep(&cfg, 0.0, 4.2, 0.2, DEFAULT_PULSES_PER_POINT, &mut sim_rng(101)).unwrap();
    let fit = fit_splitting_law(&s, &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let z = fit.max_abs_complementarity_z();
    verdict(
        "1",
        s.points.len() == 22 && fit.p_value > 0.01 && z <= 3.0 && secs < 120.0,
        format!(
            "{} points, chi2 = {:.1} / {} dof, p = {:.4}, max |complementarity z| = {z:.2}, v_pi = {:.4}, {secs:.1} s",
            s.points.len(),
            fit.chi2,
            fit.dof,
            fit.p_value,
            fit.v_pi
        ),
    );
}

#[test]
fn criterion_02_entropy_curve() {
    let cfg = DeviceConfig::default();
    let opt = optimize(&cfg, &TunerSettings::default(), &mut sim_rng(202)).unwrap();
    let balance = balance_voltage(&cfg).unwrap();
    let best = opt.best().entropy;
    let offset = opt.v_opt - balance;
    verdict(
        "2",
        best >= 7.98 && offset.abs() <= 0.04 + 1e-9,
        format!(
            "max entropy {best:.5} bits/byte at {:.3} V, analytic balance {balance:.4} V, offset {:+.0} mV",
            opt.v_opt,
            offset * 1e3
        ),
    );
}

#[test]
fn criterion_03_loss_compensation() {
    let cfg = DeviceConfig {
        transmittance_early: 0.9,
        transmittance_late: 1.0,
        ..DeviceConfig::default()
    };
    let opt = optimize(&cfg, &TunerSettings::default(), &mut sim_rng(303)).unwrap();
    let tuned = block_entropies(&run_acquisition(&cfg, opt.v_opt, 100, sim_rng(304)).unwrap());
    // phi = pi/2 is half of V_pi once the offset is removed.
    let v_half = cfg.v_pi_volts / 2.0 - cfg.v_offset_volts;
    let untuned = block_entropies(&run_acquisition(&cfg, v_half, 100, sim_rng(305)).unwrap());
    let (mt, st) = mean_std(&tuned);
    let (mu, su) = mean_std(&untuned);
    let sigma = (st * st / 100.0 + su * su / 100.0).sqrt();
    let z = (mt - mu) / sigma;
    verdict(
        "3",
        mt >= 7.985 && mu < mt && z > 3.0,
        format!(
            "tuned {:.3} V mean {mt:.5}, untuned {v_half:.3} V mean {mu:.5}, difference {:.2e} = {z:.1} sigma",
            opt.v_opt,
            mt - mu
        ),
    );
}

#[test]
fn criterion_04_stability_and_bitrate() {
    let cfg = DeviceConfig::default();
    let blocks = run_acquisition(&cfg, balance_voltage(&cfg).unwrap(), 500, sim_rng(404)).unwrap();
    let (m, s) = mean_std(&block_entropies(&blocks));
    let rate = effective_bitrate(&blocks, &cfg).unwrap();
    let rel = rate / 131.8e3 - 1.0;
    verdict(
        "4",
        (7.985..=8.0).contains(&m) && s <= 0.01 && rel.abs() <= 0.2,
        format!(
            "500 blocks mean {m:.5} std {s:.5} bits/byte, raw bitrate {:.1} kbps ({:+.1}% vs 131.8)",
            rate / 1e3,
            rel * 100.0
        ),
    );
}

#[test]
fn criterion_05_extractor_sizing() {
    let m = derive_output_length(400, 7.7451, 100.0).unwrap();
    let eff = m as f64 / 400.0;
    verdict(
        "5",
        m == 187 && (eff - 0.4675).abs() < 1e-12 && (eff - 0.5).abs() < 0.05,
        format!("m = {m}, efficiency {:.2}%", eff * 100.0),
    );
}

#[test]
fn criterion_06_extractor_correctness() {
    let mut rng = sim_rng(606);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=32usize);
        let m = rng.random_range(1..n);
        let seed: Vec<bool> = (0..n + m - 1).map(|_| rng.random()).collect();
        let blocks = rng.random_range(1..=4usize);
        let x: Vec<bool> = (0..n * blocks).map(|_| rng.random()).collect();
        let ext = ToeplitzExtractor::build(&BitBuf::from_bools(&seed), n, m).unwrap();
        let fast = ext.extract(&BitBuf::from_bools(&x)).unwrap();
        let expect: Vec<bool> = x.chunks(n).flat_map(|c| dense_oracle(&seed, n, m, c)).collect();
        if fast != BitBuf::from_bools(&expect) {
            mismatches += 1;
        }
    }
    let mut linear_failures = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=32usize);
        let m = rng.random_range(1..n);
        let seed: BitBuf = (0..n + m - 1).map(|_| rng.random::<bool>()).collect();
        let ext = ToeplitzExtractor::build(&seed, n, m).unwrap();
        let a: BitBuf = (0..n).map(|_| rng.random::<bool>()).collect();
        let b: BitBuf = (0..n).map(|_| rng.random::<bool>()).collect();
        let lhs = ext.extract(&a.xor(&b)).unwrap();
        let rhs = ext.extract(&a).unwrap().xor(&ext.extract(&b).unwrap());
        if lhs != rhs {
            linear_failures += 1;
        }
    }
    verdict(
        "6",
        mismatches == 0 && linear_failures == 0,
        format!("oracle mismatches {mismatches}/1000, linearity failures {linear_failures}/1000"),
    );
}

#[test]
fn criterion_07_post_extraction_quality() {
    let cfg = DeviceConfig::default();
    let p_max = 2f64.powf(-7.7451 / 8.0);
    let v = voltage_for_zero_fraction(&cfg, p_max);
    // 20 MiB of raw input.
    let n_blocks = 640;
    let run = |seed: u64| {
        let blocks = run_acquisition(&cfg, v, n_blocks, sim_rng(seed)).unwrap();
        let h_raw = calibrate_min_entropy(&blocks[..64]).unwrap();
        let m = derive_output_length(400, h_raw, 100.0).unwrap();
        let mut bytes = Vec::with_capacity(n_blocks * 32768);
        for b in &blocks {
            bytes.extend_from_slice(&b.payload[..]);
        }
        let raw = BitBuf::from_bytes(bytes);
        let (s, rest) = seed_from_raw(&raw, 400, m).unwrap();
        let out = ToeplitzExtractor::build(&s, 400, m).unwrap().extract_par(&rest).unwrap();
        (h_raw, m, out)
    };
    let (h_raw, m, out) = run(707);
    let hist = ByteHistogram::from_bytes(out.whole_bytes());
    let h_min = min_entropy(&hist).unwrap();
    let h_sh = shannon_entropy(&hist).unwrap();
    let (battery_ok, battery) = battery_with_retry(|attempt| {
        if attempt == 1 {
            quick_battery(&out).unwrap()
        } else {
            quick_battery(&run(708).2).unwrap()
        }
    });
    verdict(
        "7",
        h_min >= 7.99 && battery_ok,
        format!(
            "raw H_min {h_raw:.4} at {v:.4} V, m = {m}, {} output bytes, output H_min {h_min:.4} (target 7.99), Shannon {h_sh:.5}, battery: {battery}",
            out.len() / 8
        ),
    );
}

#[test]
fn criterion_08_selftest_visibilities() {
    let cfg = DeviceConfig::default();
    // Audit probabilities raised from 0.005 so that 200+ audit blocks fit in a desk-scale run.
    let settings = SelftestSettings {
        p_psi: 0.05,
        p_phi: 0.05,
        ..SelftestSettings::default()
    };
    let run = run_selftest(&cfg, &settings, 2400, sim_rng(808)).unwrap();
    let r = &run.report;
    let audit = r.count(StateTag::Psi) + r.count(StateTag::Phi);
    let (psi, _) = r.mean_std(StateTag::Psi).unwrap();
    let (phi, _) = r.mean_std(StateTag::Phi).unwrap();
    let (omega, _) = r.mean_std(StateTag::Omega).unwrap();
    let flat = StateTag::ALL
        .iter()
        .all(|&t| r.trend(t).unwrap().consistent_with_zero(3.0));
    let slopes: Vec<String> = StateTag::ALL
        .iter()
        .map(|&t| {
            let tr = r.trend(t).unwrap();
            format!("{t} {:.1e}+-{:.1e}", tr.slope, tr.slope_stderr)
        })
        .collect();

    let broken = |cfg: DeviceConfig| {
        let mut tester = SelfTester::new(&cfg, &SelftestSettings::default(), sim_rng(809))
            .unwrap()
            .with_max_pulses_per_block(50_000_000);
        for _ in 0..20 {
            match tester.step() {
                Ok(_) if tester.alarmed() => return Some(tester.report().first_alarm_block.unwrap()),
                Ok(_) => {}
                // An audit block that can never fill is itself a device failure.
                Err(_) => return Some(tester.report().blocks_run),
            }
        }
        None
    };
    let late_dead = broken(DeviceConfig {
        transmittance_late: 0.0,
        ..DeviceConfig::default()
    });
    let early_dead = broken(DeviceConfig {
        transmittance_early: 0.0,
        ..DeviceConfig::default()
    });
    verdict(
        "8",
        audit >= 200
            && psi >= 0.99
            && phi >= 0.98
            && omega <= 0.02
            && flat
            && !r.any_alarm()
            && late_dead.is_some()
            && early_dead.is_some(),
        format!(
            "{audit} audit blocks, mean psi {psi:.5} phi {phi:.5} omega {omega:.5}, slopes [{}], broken late channel alarm at block {late_dead:?}, broken early channel at block {early_dead:?}",
            slopes.join(", ")
        ),
    );
}

#[test]
fn criterion_09_nist_proportion_bound() {
    let ci = proportion_confidence_interval(0.01, 1000).unwrap();
    let rounded = |x: f64| (x * 1e5).round() / 1e5;
    let three = |x: f64| (x * 1e3).floor() / 1e3;
    verdict(
        "9",
        rounded(ci.lo) == 0.98056 && rounded(ci.hi) == 0.99944 && three(ci.lo) == 0.980 && three(ci.hi) == 0.999,
        format!("interval ({:.5}, {:.5})", ci.lo, ci.hi),
    );
}

#[test]
fn criterion_10_ks_aggregation() {
    let mut rng = sim_rng(1010);
    let grid: Vec<f64> = (0..100).map(|i| 0.005 + 0.01 * i as f64).collect();
    let uniform: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let skewed: Vec<f64> = (0..200).map(|_| rng.random::<f64>().powi(2)).collect();
    let vectors = [
        grid.clone(),
        uniform.clone(),
        skewed.clone(),
        vec![0.5; 50],
        vec![0.3, 0.7],
        vec![0.01, 0.2, 0.21, 0.5, 0.77, 0.93],
    ];
    let mut worst = 0.0f64;
    for v in &vectors {
        worst = worst.max((ks_statistic(v).unwrap() - brute_force_d(v)).abs());
        worst = worst.max((ks_uniformity_pvalue(v).unwrap() - brute_force_ks_p(v)).abs());
    }
    let p_uniform = ks_uniformity_pvalue(&uniform).unwrap();
    let p_grid = ks_uniformity_pvalue(&grid).unwrap();
    let p_const = ks_uniformity_pvalue(&vec![0.5; 50]).unwrap();
    let p_skew = ks_uniformity_pvalue(&skewed).unwrap();
    verdict(
        "10",
        worst < 1e-10 && p_uniform > 0.01 && p_grid > 0.99 && p_const < 1e-9 && p_skew < 0.01,
        format!(
            "max deviation from brute force {worst:.1e}, uniform p {p_uniform:.3}, grid p {p_grid:.4}, constant p {p_const:.1e}, squared-uniform p {p_skew:.1e}"
        ),
    );
}

#[test]
fn criterion_11_external_suite_substitutes() {
    let dir = temp_dir("c11");
    let (battery_ok, battery) = battery_with_retry(|attempt| {
        let cfg = PipelineConfig {
            seed: Some(1100 + attempt),
            out_dir: dir.join(format!("run{attempt}")),
            ..PipelineConfig::default()
        };
        run_pipeline(&cfg).unwrap().report.battery.unwrap()
    });
    let out = import_binary(&dir.join("run1").join(EXTRACTED_FILE)).unwrap();
    let nist = export_nist(&out, &dir.join("nist.txt")).unwrap();
    let ascii_ok = import_ascii(&nist.ascii).unwrap() == out.slice(0, out.len());
    let companion_ok = import_binary(&nist.binary).unwrap() == out;
    let dh = dir.join("dieharder.bin");
    let dh_bytes = export_dieharder(&out, &dh).unwrap();
    let dh_ok = import_binary(&dh).unwrap() == out && dh_bytes as usize * 8 == out.len();
    let size_ok = fs::metadata(&nist.ascii).unwrap().len() as usize == out.len();
    let readme = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap_or_default();
    let recipe_ok = readme.contains("assess") && readme.contains("dieharder -a -g 201");
    fs::remove_dir_all(&dir).unwrap();
    verdict(
        "11",
        battery_ok && ascii_ok && companion_ok && dh_ok && size_ok && recipe_ok,
        format!(
            "roundtrips ascii {ascii_ok} binary {companion_ok} dieharder {dh_ok}, ascii size {size_ok}, README recipe {recipe_ok}, battery: {battery}"
        ),
    );
}

#[test]
fn criterion_12_determinism_and_framing() {
    let dir = temp_dir("c12");
    let base = PipelineConfig {
        seed: Some(1212),
        blocks: 80,
        ..PipelineConfig::default()
    };
    let mut outputs = Vec::new();
    for threads in [1, 2, 8] {
        let cfg = PipelineConfig {
            threads,
            out_dir: dir.join(format!("t{threads}")),
            ..base.clone()
        };
        run_pipeline(&cfg).unwrap();
        outputs.push(fs::read(cfg.out_dir.join(EXTRACTED_FILE)).unwrap());
    }
    let identical = outputs.windows(2).all(|w| w[0] == w[1]) && !outputs[0].is_empty();
    fs::remove_dir_all(&dir).unwrap();

    let block = run_acquisition(&DeviceConfig::default(), 2.15, 1, sim_rng(1213)).unwrap().remove(0);
    let frame = encode_frame(&block);
    let roundtrip = decode_frame(&frame).map(|(b, used)| b == block.wire_view() && used == frame.len()) == Ok(true);
    let mut missed = 0u64;
    let mut flipped = frame.clone();
    for bit in 0..frame.len() * 8 {
        flipped[bit / 8] ^= 1 << (bit % 8);
        if decode_frame(&flipped).is_ok() {
            missed += 1;
        }
        flipped[bit / 8] ^= 1 << (bit % 8);
    }
    verdict(
        "12",
        identical && roundtrip && missed == 0,
        format!(
            "extracted output identical across 1/2/8 threads: {identical} ({} bytes), frame roundtrip {roundtrip}, undetected single-bit flips {missed}/{}",
            outputs[0].len(),
            frame.len() * 8
        ),
    );
}

/// Twelve simulated hours of self-test blocks at the default audit probabilities.
#[test]
#[ignore = "long: about 20 000 blocks"]
fn long_visibility_trend() {
    let cfg = DeviceConfig::default();
    let blocks = (12.0 * 3600.0 * 119.3e3 / 262_144.0) as usize;
    let run = run_selftest(&cfg, &SelftestSettings::default(), blocks, sim_rng(1299)).unwrap();
    let r = &run.report;
    let flat = StateTag::ALL
        .iter()
        .all(|&t| r.trend(t).is_none_or(|tr| tr.consistent_with_zero(3.0)));
    verdict("8-long", flat && !r.any_alarm(), r.summary().replace('\n', "; "));
}
