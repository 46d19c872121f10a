//! Built-in verification suites, shared by the `selftest` command and the
//! acceptance tests.

mod gradients;
mod oracle;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::eval::{auc, auc_twice_count, LabeledScores};
use crate::gaussian::{normal_pdf, DiagonalGaussian, GaussianMixture};

pub use gradients::gradient_suite;
pub use oracle::oracle_suite;

/// One named assertion and what was measured.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ok = self.checks.iter().filter(|c| c.passed).count();
        writeln!(f, "{}: {ok}/{} checks passed", self.suite, self.checks.len())?;
        for c in self.failures() {
            writeln!(f, "  FAIL {}: {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Relative error with a tiny absolute floor so that exact zeros compare.
pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn random_gaussian(rng: &mut ChaCha8Rng, d: usize) -> DiagonalGaussian {
    let mean = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let log_var = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    DiagonalGaussian::new(mean, log_var).expect("finite parameters")
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// KL divergence against Monte Carlo, Bhattacharyya distance against
/// numerical quadrature, and normalisation of a latent mixture.
pub fn closed_form_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let (mut kl_worst, mut bh_worst): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let d = rng.random_range(2..=8);
        let q = random_gaussian(&mut rng, d);
        let std = DiagonalGaussian::standard(d);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let z = q.sample(&mut rng);
            acc += q.log_density(&z)? - std.log_density(&z)?;
        }
        kl_worst = kl_worst.max(rel_err(q.kl_to_standard_normal(), acc / n as f64));

        let p = random_gaussian(&mut rng, d);
        let mut quad = 0.0;
        for j in 0..d {
            let (pm, pv) = (p.mean()[j], p.log_var()[j].exp());
            let (qm, qv) = (q.mean()[j], q.log_var()[j].exp());
            let bc = simpson(|x| (normal_pdf(x, pm, pv) * normal_pdf(x, qm, qv)).sqrt(), -15.0, 15.0, 6000);
            quad -= bc.ln();
        }
        bh_worst = bh_worst.max((p.bhattacharyya(&q)? - quad).abs());
    }
    checks.push(Check::new(
        "KL to the standard normal matches 1e5-sample Monte Carlo within 2%",
        kl_worst < 0.02,
        format!("worst relative error {kl_worst:.4}"),
    ));
    checks.push(Check::new(
        "Bhattacharyya distance matches quadrature within 1e-3",
        bh_worst < 1e-3,
        format!("worst absolute error {bh_worst:.2e}"),
    ));

    let comps: Vec<DiagonalGaussian> = (0..5).map(|_| random_gaussian(&mut rng, 2)).collect();
    let mix = GaussianMixture::new(comps)?;
    let (lo, hi, n) = (-12.0, 12.0, 480);
    let h = (hi - lo) / n as f64;
    let mut mass = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
            mass += mix.density(&x)? * h * h;
        }
    }
    checks.push(Check::new(
        "latent mixture density integrates to one",
        (mass - 1.0).abs() < 1e-3,
        format!("mass {mass:.6}"),
    ));
    Ok(SuiteReport {
        suite: "closed forms",
        checks,
    })
}

/// AUC from tie groups against brute-force pair counting on random score
/// sets with heavy ties.
pub fn auc_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut first = String::new();
    for t in 0..1000 {
        let n = rng.random_range(2..120);
        let levels = rng.random_range(1..12);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = false;
        labels[1] = true;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.25).collect();
        let mut twice = 0u128;
        for i in 0..n {
            for j in 0..n {
                if labels[i] && !labels[j] {
                    twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        let n_novel = labels.iter().filter(|&&l| l).count() as f64;
        let want = twice as f64 / (2.0 * n_novel * (n as f64 - n_novel));
        let ls = LabeledScores::new(scores, labels)?;
        if auc_twice_count(&ls)? != twice || auc(&ls)? != want {
            mismatches += 1;
            if first.is_empty() {
                first = format!("first mismatch in set {t}");
            }
        }
    }
    Ok(SuiteReport {
        suite: "auc",
        checks: vec![Check::new(
            "AUC equals brute-force pair counting on 1000 tied score sets",
            mismatches == 0,
            if first.is_empty() { "all exact".to_string() } else { first },
        )],
    })
}

/// Every suite in order: oracles, closed forms, gradients, AUC.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        oracle_suite(seed)?,
        closed_form_suite(seed)?,
        gradient_suite(seed)?,
        auc_suite(seed)?,
    ])
}
