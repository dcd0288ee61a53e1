//! Acceptance run: one PASS/FAIL line per headline criterion. Exits non-zero
//! if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nbb_core::controller::{MvmInput, WriteOptions, WriteTarget};
use nbb_core::harness::{run, ExperimentKind, ExperimentSpec};
use nbb_core::signal_chain::{CalibrationTable, SignalChain, SignalChainConfig};
use nbb_core::{BoardConfig, Controller, DeviceParams, Topology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn csv_column(csv: &str, k: usize) -> Vec<String> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').nth(k).unwrap_or_default().to_string())
        .collect()
}

fn floats(v: &[String]) -> Vec<f64> {
    v.iter().map(|s| s.parse().unwrap()).collect()
}

fn mean_sigma(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 0 {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}

fn accuracy_sweep() -> Outcome {
    let t = Instant::now();
    let refs = vec![1e3, 50e3, 100e3, 200e3, 300e3, 400e3, 500e3, 600e3, 700e3, 800e3, 1000e3];
    let spec = ExperimentSpec::new(ExperimentKind::Sweep, 2024)
        .repeats(1000)
        .samples(50)
        .refs(refs.clone());
    let out = run(&BoardConfig::default(), &spec).unwrap();
    let got_refs = floats(&csv_column(&out.csv, 0));
    let err = csv_column(&out.csv, 1);
    let sigma = csv_column(&out.csv, 2);
    let status = csv_column(&out.csv, 3);
    let all_ok = status.iter().all(|s| s == "ok") && got_refs == refs;
    let (err, sigma) = if all_ok { (floats(&err), floats(&sigma)) } else { (vec![f64::INFINITY], vec![f64::INFINITY]) };
    let worst_err = err.iter().copied().fold(0.0, f64::max);
    let worst_sigma = sigma.iter().copied().fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        pass: all_ok && worst_err < 5.0 && worst_sigma < 1.0 && secs < 120.0,
        detail: format!(
            "11 points x 1000 x 50 samples: worst error {worst_err:.4}%, worst sigma {worst_sigma:.4}%, {secs:.2} s"
        ),
    }
}

fn histogram() -> Outcome {
    let truth = 99_896.0;
    let spec = ExperimentSpec::new(ExperimentKind::Histogram, 2024).repeats(1000);
    let out = run(&BoardConfig::default(), &spec).unwrap();
    let v = floats(&csv_column(&out.csv, 1));
    let (m, s) = mean_sigma(&v);
    let in_span = v.iter().all(|r| (1e3..=1e6).contains(r));
    Outcome {
        pass: v.len() == 1000 && m >= truth * 0.95 && m <= truth * 1.05 && s / m < 0.01 && in_span,
        detail: format!(
            "{} values, mean {m:.1} ohm ({:+.4}%), sigma/mean {:.4}%, all in 1k-1M: {in_span}",
            v.len(),
            (m - truth) / truth * 100.0,
            s / m * 100.0
        ),
    }
}

fn quantization_bound() -> Outcome {
    let mut cfg = SignalChainConfig::default().noiseless();
    cfg.routing.r_path_ohm = 0.0;
    let chain = SignalChain::new(cfg).unwrap();
    let cal = CalibrationTable::identity();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (dac_lsb, adc_lsb) = (5.0 / 4095.0, 5.0 / 16383.0);
    let v_read = 0.2;
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for k in 0..25 {
        let r = 1e3 * 1000f64.powf(k as f64 / 24.0);
        let rec = chain.measure_resistance(|v| v / r, v_read, 50, &cal, &mut rng).unwrap();
        let rf = chain.stage(rec.stage).unwrap().r_feedback_ohm;
        let v_out = v_read / r * rf;
        let bound = (1.0 + 0.5 * dac_lsb / v_read) / (1.0 - 0.5 * adc_lsb / v_out) - 1.0;
        let err = (rec.resistance_ohm - r).abs() / r;
        pass &= err <= bound;
        worst = worst.max(err / bound);
    }
    Outcome {
        pass,
        detail: format!("25 log-spaced points 1k-1M, worst error/bound {worst:.3}"),
    }
}

fn nodal_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut dev, mut cons, mut volts) = (0.0f64, 0.0f64, 0.0f64);
    let (mut passive, mut zero_wire) = (0, 0);
    for _ in 0..200 {
        let (array, drive) = common::random_case(&mut rng);
        passive += (array.topology() == Topology::Passive1R) as usize;
        zero_wire += (array.r_wire_segment() == 0.0) as usize;
        let (d, c, v) = common::compare(&array, &drive);
        dev = dev.max(d);
        cons = cons.max(c);
        volts = volts.max(v);
    }
    Outcome {
        pass: dev < 1e-9 && cons < 1e-9,
        detail: format!(
            "200 arrays ({passive} 1R, {} 1T1R, {zero_wire} with zero wire R): max current deviation {dev:.2e}, max conservation residual {cons:.2e}, max node-voltage gap {volts:.2e} V",
            200 - passive
        ),
    }
}

fn endurance() -> Outcome {
    let out = run(&BoardConfig::default(), &ExperimentSpec::new(ExperimentKind::Endurance, 2024).repeats(100)).unwrap();
    let r = floats(&csv_column(&out.csv, 1));
    let ops = csv_column(&out.csv, 2);
    let pick = |op: &str| -> Vec<f64> { r.iter().zip(&ops).filter(|(_, o)| *o == op).map(|(v, _)| *v).collect() };
    let (set, reset) = (pick("SET"), pick("RESET"));
    let max_set = set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_reset = reset.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = median(&reset) / median(&set);

    // Switching stochasticity off, measurement noise off too: what remains
    // must be a deterministic two-state toggle.
    let mut cfg = BoardConfig::default();
    cfg.device.sigma_c2c = 0.0;
    cfg.device.sigma_read = 0.0;
    cfg.signal_chain = cfg.signal_chain.noiseless();
    let det = run(&cfg, &ExperimentSpec::new(ExperimentKind::Endurance, 2024).repeats(100)).unwrap();
    let mut distinct = floats(&csv_column(&det.csv, 1));
    let n_det = distinct.len();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    Outcome {
        pass: set.len() == 100 && reset.len() == 100 && max_set < min_reset && ratio >= 5.0 && n_det == 200 && distinct.len() == 2,
        detail: format!(
            "max SET {max_set:.0} < min RESET {min_reset:.0}: {}, median ratio {ratio:.2}, sigma_c2c=0 trace has {} distinct values",
            max_set < min_reset,
            distinct.len()
        ),
    }
}

fn mvm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut ok, mut worst) = (0, 0.0f64);
    for t in 0..100u64 {
        let cfg = BoardConfig::default()
            .noiseless()
            .without_parasitics()
            .with_shape(8, 4, Topology::Passive1R)
            .with_seed(t);
        let mut c = Controller::new(cfg).unwrap();
        for i in 0..8 {
            for j in 0..4 {
                c.force_state(i, j, rng.random()).unwrap();
            }
        }
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..0.5)).collect();
        let vq: Vec<f64> = v.iter().map(|x| (x / 5.0 * 4095.0).round() * 5.0 / 4095.0).collect();
        let res = c.mvm(&MvmInput::Volts(v), None, None).unwrap();
        let mut trial_ok = true;
        for col in &res.columns {
            let j = col.col;
            let expected: f64 = (0..8)
                .map(|i| {
                    let cell = c.array().cell(i, j);
                    let p = cell.params();
                    let g = 1.0 / p.r_hrs_ohm + cell.state() * (1.0 / p.r_lrs_ohm - 1.0 / p.r_hrs_ohm);
                    g * vq[i]
                })
                .sum();
            let bound: f64 = col
                .readings
                .iter()
                .map(|r| 0.5 * (5.0 / 16383.0) / c.chain().stage(r.stage).unwrap().r_feedback_ohm)
                .sum();
            match col.current_a {
                Some(i) => {
                    worst = worst.max((i - expected).abs() / bound);
                    trial_ok &= (i - expected).abs() <= bound;
                }
                None => trial_ok = false,
            }
        }
        ok += trial_ok as usize;
    }
    Outcome {
        pass: ok == 100,
        detail: format!("{ok}/100 random 8x4 trials within the ADC bound, worst error/bound {worst:.3}"),
    }
}

fn magic_nor() -> Outcome {
    let (mut correct, mut preserved, mut total) = (0, 0, 0);
    for seed in 0..50u64 {
        let mut cfg = BoardConfig::default().with_seed(1000 + seed);
        cfg.device = DeviceParams::magic_logic();
        let mut c = Controller::new(cfg).unwrap();
        c.calibrate().unwrap();
        let row = (seed as usize * 37) % c.array().rows();
        for (a, b) in [(false, false), (false, true), (true, false), (true, true)] {
            total += 1;
            for (col, bit) in [(0, a), (1, b)] {
                let t = if bit { WriteTarget::SetLrs } else { WriteTarget::ResetHrs };
                if c.write_cell(row, col, t, WriteOptions::default()).is_err() {
                    continue;
                }
            }
            let before = [c.cell_state(row, 0).unwrap(), c.cell_state(row, 1).unwrap()];
            if let Ok(out) = c.magic_nor(row, &[0, 1], 2, None) {
                correct += (out.inputs == [a, b] && out.output == !(a || b)) as usize;
            }
            let after = [c.cell_state(row, 0).unwrap(), c.cell_state(row, 1).unwrap()];
            preserved += (before == after) as usize;
        }
    }
    Outcome {
        pass: correct == total && preserved == total,
        detail: format!("{correct}/{total} correct over 4 inputs x 50 seeds, input states unchanged in {preserved}/{total}"),
    }
}

fn cli_determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("nbb-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let logic_cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/magic_logic.json");
    let logic_cfg = logic_cfg.to_str().unwrap().to_string();
    let runs: Vec<Vec<String>> = [
        vec!["histogram", "--repeats", "200"],
        vec!["sweep", "--repeats", "100"],
        vec!["endurance", "--repeats", "20"],
        vec!["mvm", "--repeats", "20"],
        vec!["logic", "--repeats", "2", "--config", &logic_cfg],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    let mut identical = 0;
    for args in &runs {
        let mut csv = Vec::new();
        for k in 0..2 {
            let out = dir.join(format!("run{k}.csv"));
            let status = Command::new(env!("CARGO_BIN_EXE_nbb"))
                .args(args)
                .args(["--seed", "77", "--out"])
                .arg(&out)
                .stderr(std::process::Stdio::null())
                .status()
                .unwrap();
            csv.push(status.success().then(|| std::fs::read(&out).unwrap()));
        }
        identical += (csv[0].is_some() && csv[0] == csv[1]) as usize;
    }
    let _ = std::fs::remove_dir_all(&dir);
    Outcome {
        pass: identical == runs.len(),
        detail: format!("{identical}/{} experiments byte-identical across two CLI runs", runs.len()),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("accuracy envelope sweep", accuracy_sweep),
        ("histogram 99896 ohm", histogram),
        ("quantization-only bound", quantization_bound),
        ("nodal solver vs dense oracle", nodal_oracle),
        ("endurance toggling", endurance),
        ("MVM correctness", mvm),
        ("NOR truth table", magic_nor),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
