//! Acceptance run: one line per criterion, non-zero exit if any fails.
//!
//! `cargo test -p otafd --test acceptance`

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use otafd::checks;
use otafd::config::{parse_config, resolve, Overrides, ResolvedConfig};
use otafd::experiment::{log_grid, prepare, replication_seed, run_simulate, run_sweep_epsilon};
use otafd::output::{read_csv, uplink_time};

const SEED: u64 = 2024;

struct Verdict {
    passed: bool,
    detail: String,
}

fn config(text: &str) -> ResolvedConfig {
    resolve(parse_config(text).expect("config parses"), Overrides::default(), PathBuf::new()).expect("config resolves")
}

fn from_check(c: checks::CheckOutcome) -> Verdict {
    Verdict {
        passed: c.passed,
        detail: format!("{} measured {:.3e} vs {:.1e}; {}", c.name, c.measured, c.tolerance, c.detail),
    }
}

fn within(v: Verdict, started: Instant, budget: Duration) -> Verdict {
    let took = started.elapsed();
    Verdict {
        passed: v.passed && took < budget,
        detail: format!("{}; {:.2}s of {}s", v.detail, took.as_secs_f64(), budget.as_secs()),
    }
}

fn alignment() -> Verdict {
    let t = Instant::now();
    within(from_check(checks::alignment(SEED, 1000)), t, Duration::from_secs(10))
}

fn dp_equality() -> Verdict {
    from_check(checks::dp_equality(SEED, 1000, None))
}

fn power() -> Verdict {
    from_check(checks::power(SEED, 1000))
}

fn horizon() -> Verdict {
    let t = Instant::now();
    within(from_check(checks::horizon_oracle(SEED, 20)), t, Duration::from_secs(5))
}

fn simplex() -> Verdict {
    from_check(checks::simplex_diameter(SEED, 100_000))
}

fn gradient() -> Verdict {
    from_check(checks::gradient_check(SEED, 50))
}

fn estimator() -> Verdict {
    from_check(checks::estimator(SEED, 200, 5, 10_000))
}

fn phi2() -> Verdict {
    from_check(checks::phi2_monte_carlo(SEED, 20, 100_000))
}

fn sweep_trend() -> Verdict {
    let t = Instant::now();
    let cfg = config(
        r#"{"seed": 11, "devices": 10, "classes": 10, "rounds": 100, "replications": 10,
            "data": {"source": "synthetic", "dims": 10, "train_per_class": 50, "test_per_class": 20, "separation": 4}}"#,
    );
    let grid = log_grid(0.001, 0.1, 5);
    let result = match run_sweep_epsilon(&cfg, &grid, 1e-11) {
        Ok(r) => r,
        Err(e) => return Verdict { passed: false, detail: e.to_string() },
    };
    let means: Vec<f64> = result.aggregates.iter().map(|a| a.mean_phi2_mean).collect();
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    let counts = result.aggregates.iter().all(|a| a.count == 10);
    within(
        Verdict {
            passed: monotone && counts,
            detail: format!("M=10, 10 seeds, mean Phi2 over eps {}: {}", sci(&grid), sci(&means)),
        },
        t,
        Duration::from_secs(300),
    )
}

fn sci(values: &[f64]) -> String {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:.6e}")).collect();
    format!("[{}]", cells.join(", "))
}

fn mean_final_accuracy(cfg: &ResolvedConfig, seeds: u32) -> Result<f64, otafd::Error> {
    let mut total = 0.0;
    for r in 0..seeds {
        let log = prepare(cfg, replication_seed(cfg.seed, r))?.sim.run()?;
        total += log.final_accuracy().unwrap_or(0.0);
    }
    Ok(total / f64::from(seeds))
}

fn learning() -> Verdict {
    let t = Instant::now();
    let base = r#""seed": 5, "devices": 5, "classes": 3, "hyper": {"gamma": 0.1}, "rounds": 200,
        "data": {"source": "synthetic", "dims": 3, "train_per_class": 100, "test_per_class": 50, "separation": 10}"#;
    let ideal = config(&format!(r#"{{{base}, "channel": {{"kind": "ideal"}}}}"#));
    let noisy = config(&format!(r#"{{{base}, "privacy": {{"epsilon": 0.001, "delta": 1e-11}}}}"#));
    let run = || -> Result<(f64, f64), otafd::Error> {
        Ok((mean_final_accuracy(&ideal, 10)?, mean_final_accuracy(&noisy, 10)?))
    };
    let v = match run() {
        Ok((a_ideal, a_noisy)) => Verdict {
            passed: a_ideal >= 1.0 / 3.0 + 0.3 && a_noisy <= a_ideal,
            detail: format!("ideal {a_ideal:.4} (need >= {:.4}), eps=0.001 {a_noisy:.4}, 10 seeds", 1.0 / 3.0 + 0.3),
        },
        Err(e) => Verdict { passed: false, detail: e.to_string() },
    };
    within(v, t, Duration::from_secs(120))
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).expect("readable dir") {
        let path = entry.expect("entry").path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg_path = dir.path().join("c.json");
    std::fs::write(
        &cfg_path,
        r#"{"seed": 9, "devices": 4, "classes": 3, "rounds": 30, "replications": 3,
            "data": {"source": "synthetic", "dims": 3, "train_per_class": 30, "test_per_class": 10, "separation": 6}}"#,
    )
    .expect("write config");
    let runs: Vec<Vec<(PathBuf, Vec<u8>)>> = ["1", "4"]
        .iter()
        .enumerate()
        .map(|(i, threads)| {
            let out = dir.path().join(format!("run{i}"));
            let status = Command::new(env!("CARGO_BIN_EXE_otafd"))
                .args(["simulate", "--config"])
                .arg(&cfg_path)
                .arg("--out")
                .arg(&out)
                .env("OTAFD_THREADS", threads)
                .output()
                .expect("binary runs")
                .status;
            assert!(status.success(), "simulate failed");
            files_under(&out)
                .into_iter()
                .map(|p| (p.strip_prefix(&out).expect("prefix").to_path_buf(), std::fs::read(&p).expect("read")))
                .collect()
        })
        .collect();
    Verdict {
        passed: runs[0].len() == 3 && runs[0] == runs[1],
        detail: format!("{} CSV files, byte-identical across reruns with 1 and 4 threads", runs[0].len()),
    }
}

fn uplink() -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = config(
        r#"{"devices": 2, "classes": 10, "rounds": 400, "channel": {"kind": "ideal"},
            "data": {"source": "synthetic", "dims": 10, "train_per_class": 5, "test_per_class": 2, "separation": 4}}"#,
    );
    let run = || -> Result<(f64, f64), otafd::Error> {
        let summary = run_simulate(&cfg, dir.path(), false)?.remove(0);
        let (_, header, rows) = read_csv(&dir.path().join("rep_000/rounds.csv"))?;
        let col = header.iter().position(|h| h == "uplink_time_s").expect("column");
        let last: f64 = rows.last().expect("rows")[col].parse().expect("float");
        Ok((summary.total_uplink_time_s, last))
    };
    match run() {
        Ok((total, last)) => Verdict {
            passed: (total - 0.144).abs() <= 1e-12 && total == last && total == uplink_time(400, 10, 3.6e-6),
            detail: format!("K=10, T=400: summary {total} s, last CSV row {last} s"),
        },
        Err(e) => Verdict { passed: false, detail: e.to_string() },
    }
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("alignment", alignment),
        ("dp equality", dp_equality),
        ("power feasibility", power),
        ("horizon oracle", horizon),
        ("simplex diameter", simplex),
        ("gradient", gradient),
        ("estimator fidelity", estimator),
        ("phi2 closed form", phi2),
        ("epsilon sweep trend", sweep_trend),
        ("end-to-end learning", learning),
        ("determinism", determinism),
        ("uplink time", uplink),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let v = f();
        failed += usize::from(!v.passed);
        println!("criterion {:>2} {:<20} {}  {}", n + 1, name, if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
