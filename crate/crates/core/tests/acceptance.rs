//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! MNIST is read from `MNIST_DIR`, defaulting to `data/mnist` at the
//! workspace root. Trained MNIST models are cached under
//! `target/acceptance/mnist` and reused while their settings match.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use vae_novelty::cli::{cmd_synth_check, reproduce_mnist, MnistReport, RunConfig, TRAIN_IMAGES};
use vae_novelty::selftest::{auc_suite, closed_form_suite, gradient_suite, oracle_suite, SuiteReport};

const SEED: u64 = 0;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }

    fn fail(detail: impl Into<String>) -> Self {
        Outcome::new(false, detail)
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR").map_or_else(|| root().join("data/mnist"), PathBuf::from)
}

fn text(s: &str) -> toml::Value {
    toml::Value::String(s.to_string())
}

fn path(p: &Path) -> toml::Value {
    text(&p.display().to_string())
}

fn config(file: &str, output: &Path, extra: &[(&str, toml::Value)]) -> vae_novelty::Result<RunConfig> {
    let mut overrides = vec![
        ("output".to_string(), path(output)),
        ("seed".to_string(), toml::Value::Integer(SEED as i64)),
        ("mnist.dir".to_string(), path(&mnist_dir())),
    ];
    overrides.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    RunConfig::resolve(Some(&root().join("configs").join(file)), &overrides)
}

fn cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn mnist_present() -> bool {
    mnist_dir().join(TRAIN_IMAGES).exists()
}

fn auc_of(report: &MnistReport, digit: i32, metric: &str) -> Option<f64> {
    report.digits.iter().find(|d| d.digit == digit).and_then(|d| d.auc(metric))
}

fn criterion_1(report: &MnistReport) -> Outcome {
    let floors = [(0, 0.87), (2, 0.91)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (digit, floor) in floors {
        match auc_of(report, digit, "latent-nn-euclid") {
            Some(a) => {
                ok &= a >= floor;
                parts.push(format!("digit {digit} AUC {a:.4} (floor {floor})"));
            }
            None => {
                ok = false;
                parts.push(format!("digit {digit} missing"));
            }
        }
    }
    let mut seconds = 0.0;
    let mut timed = true;
    for d in report.digits.iter().filter(|d| floors.iter().any(|f| f.0 == d.digit)) {
        match d.train_seconds {
            Some(t) => seconds += t + d.score_seconds,
            None => timed = false,
        }
        if d.epochs.is_some_and(|e| e < 10) {
            ok = false;
            parts.push(format!("digit {} trained only {:?} epochs", d.digit, d.epochs));
        }
    }
    if timed {
        // Measured on this machine, scaled to four cores assuming the
        // per-batch parallelism scales linearly.
        let cores = cores().min(4);
        let on_four = seconds * cores as f64 / 4.0;
        ok &= on_four <= 3600.0;
        parts.push(format!(
            "runtime {:.1} min on {cores} core(s), {:.1} min scaled to 4",
            seconds / 60.0,
            on_four / 60.0
        ));
    } else {
        ok = false;
        parts.push("training time of a cached model is unknown".into());
    }
    Outcome::new(ok, parts.join("; "))
}

fn criterion_2(report: &MnistReport) -> Outcome {
    let mean = |m: &str| report.mean_auc(m);
    let (Some(euclid), Some(bhatt), Some(reg), Some(recon)) = (
        mean("latent-nn-euclid"),
        mean("latent-nn-bhatt"),
        mean("vae-reg"),
        mean("recon-det-err"),
    ) else {
        return Outcome::fail("a required metric is missing from the MNIST run");
    };
    let digits: Vec<i32> = report.digits.iter().map(|d| d.digit).collect();
    let ok = digits == [0, 2, 3, 6] && euclid.min(bhatt) > reg.max(recon);
    Outcome::new(
        ok,
        format!(
            "mean AUC over digits {digits:?}: latent-nn-euclid {euclid:.4}, latent-nn-bhatt {bhatt:.4}, vae-reg {reg:.4}, recon-det-err {recon:.4}"
        ),
    )
}

fn criterion_3() -> vae_novelty::Result<Outcome> {
    let out = root().join("target/acceptance/synthetic");
    let cfg = config("synthetic.toml", &out, &[])?;
    let r = cmd_synth_check(&cfg)?;
    let calibrated = (r.baseline_auc - 0.85).abs() <= 0.03;
    let ok = calibrated && r.at_par.len() >= 10;
    Ok(Outcome::new(
        ok,
        format!(
            "baseline-nn AUC {:.4} (target 0.85 +/- 0.03); {} of {} metrics within 0.05 or better",
            r.baseline_auc,
            r.at_par.len(),
            r.reports.len() - 1
        ),
    ))
}

fn suite(report: vae_novelty::Result<SuiteReport>, seconds: f64, limit: Option<f64>) -> Outcome {
    match report {
        Ok(r) => {
            let failures: Vec<String> = r.failures().map(|c| format!("{}: {}", c.name, c.detail)).collect();
            let in_time = limit.is_none_or(|l| seconds <= l);
            let mut detail = format!(
                "{}/{} checks in {seconds:.1} s",
                r.checks.len() - failures.len(),
                r.checks.len()
            );
            if let Some(l) = limit {
                detail.push_str(&format!(" (limit {l} s)"));
            }
            for f in &failures {
                detail.push_str(&format!("; FAIL {f}"));
            }
            Outcome::new(failures.is_empty() && in_time, detail)
        }
        Err(e) => Outcome::fail(format!("error: {e}")),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

/// Reduced one-digit runs of the command-line tool: twice with one worker,
/// once with eight.
fn criterion_8() -> Outcome {
    let base = root().join("target/acceptance/determinism");
    let _ = std::fs::remove_dir_all(&base);
    let mnist = mnist_dir();
    let run = |name: &str, workers: &str| -> Result<PathBuf, String> {
        let out = base.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_vae-novelty"))
            .args(["--seed", "0", "--workers", workers, "-o"])
            .arg(&out)
            .args(["reproduce-mnist", "--digits", "2", "--epochs", "2", "--max-train", "2000", "--max-test", "300"])
            .arg("--mnist-dir")
            .arg(&mnist)
            .arg("--fresh")
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        Ok(out)
    };
    let read = |p: PathBuf| std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    let result = (|| -> Result<(bool, bool), String> {
        let a = run("first", "1")?;
        let b = run("second", "1")?;
        let c = run("eight_workers", "8")?;
        let same_auc = read(a.join("auc_table.tsv"))? == read(b.join("auc_table.tsv"))?;
        let same_scores = read(a.join("digit2/scores.tsv"))? == read(c.join("digit2/scores.tsv"))?;
        Ok((same_auc, same_scores))
    })();
    match result {
        Ok((auc, scores)) => Outcome::new(
            auc && scores,
            format!("repeated AUC table identical: {auc}; scores.tsv with 1 vs 8 workers identical: {scores}"),
        ),
        Err(e) => Outcome::fail(e),
    }
}

fn main() {
    let mut outcomes: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, o: Outcome| {
        println!("{} criterion {n} ({name}): {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        outcomes.push((n, name, o));
    };

    let (r, s) = timed(|| oracle_suite(SEED));
    record(4, "oracle equivalence", suite(r, s, Some(120.0)));
    let (r, s) = timed(|| closed_form_suite(SEED));
    record(5, "closed forms vs numerics", suite(r, s, None));
    let (r, s) = timed(|| gradient_suite(SEED));
    record(6, "gradients and search invariants", suite(r, s, None));
    let (r, s) = timed(|| auc_suite(SEED));
    record(7, "AUC vs pair counting", suite(r, s, None));

    record(
        3,
        "synthetic stand-in",
        criterion_3().unwrap_or_else(|e| Outcome::fail(format!("error: {e}"))),
    );

    if mnist_present() {
        let out = root().join("target/acceptance/mnist");
        let report = config("mnist.toml", &out, &[("mnist.resume", toml::Value::Boolean(true))])
            .and_then(|cfg| reproduce_mnist(&cfg));
        match report {
            Ok(r) => {
                record(1, "MNIST latent-nn-euclid floors", criterion_1(&r));
                record(2, "MNIST metric ordering", criterion_2(&r));
            }
            Err(e) => {
                record(1, "MNIST latent-nn-euclid floors", Outcome::fail(format!("error: {e}")));
                record(2, "MNIST metric ordering", Outcome::fail(format!("error: {e}")));
            }
        }
        record(8, "determinism", criterion_8());
    } else {
        let why = format!(
            "MNIST not found in {}; run scripts/fetch_mnist.sh or set MNIST_DIR",
            mnist_dir().display()
        );
        for (n, name) in [(1, "MNIST latent-nn-euclid floors"), (2, "MNIST metric ordering"), (8, "determinism")] {
            record(n, name, Outcome::fail(why.clone()));
        }
    }

    outcomes.sort_by_key(|o| o.0);
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.2.passed).map(|o| o.0).collect();
    println!("\nsummary:");
    for (n, name, o) in &outcomes {
        println!("  {} {n}. {name}", if o.passed { "PASS" } else { "FAIL" });
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
