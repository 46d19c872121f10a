//! Limited-memory quasi-Newton minimization with optional box constraints.
//!
//! Gradient projection: variables sitting on a bound with the gradient
//! pointing outwards are frozen, the two-loop recursion runs over the free
//! ones, and every trial point is projected back into the box before a
//! sufficient-decrease test.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-coordinate search interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bounds {
    /// The same `[lower, upper]` for every coordinate.
    Uniform([f64; 2]),
    PerDim(Vec<[f64; 2]>),
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds::Uniform([-10.0, 10.0])
    }
}

impl Bounds {
    pub fn interval(&self, i: usize) -> [f64; 2] {
        match self {
            Bounds::Uniform(b) => *b,
            Bounds::PerDim(v) => v[i],
        }
    }

    fn validate(&self, dim: Option<usize>) -> Result<()> {
        let all: Vec<[f64; 2]> = match self {
            Bounds::Uniform(b) => vec![*b],
            Bounds::PerDim(v) => {
                if let Some(d) = dim.filter(|&d| d != v.len()) {
                    return Err(Error::Dimension {
                        expected: d,
                        actual: v.len(),
                    });
                }
                v.clone()
            }
        };
        for [lo, hi] in all {
            if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                return Err(Error::config(format!("search bounds [{lo}, {hi}] need lower < upper")));
            }
        }
        Ok(())
    }

    pub fn project(&self, z: &mut [f64]) {
        for (i, v) in z.iter_mut().enumerate() {
            let [lo, hi] = self.interval(i);
            *v = v.clamp(lo, hi);
        }
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter().enumerate().all(|(i, &v)| {
            let [lo, hi] = self.interval(i);
            (lo..=hi).contains(&v)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// `None` searches the whole space.
    pub bounds: Option<Bounds>,
    pub max_iterations: usize,
    /// Stop once the projected gradient's largest entry falls below this.
    pub gradient_tolerance: f64,
    pub history_size: usize,
    /// Number of starting points: the given one plus `restarts - 1` random
    /// draws, uniform in the box or standard normal around it.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            bounds: None,
            max_iterations: 200,
            gradient_tolerance: 1e-5,
            history_size: 10,
            restarts: 1,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn bounded(mut self) -> Self {
        self.bounds.get_or_insert_with(Bounds::default);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = &self.bounds {
            b.validate(None)?;
        }
        if self.gradient_tolerance.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::config("search gradient_tolerance must be positive"));
        }
        if self.history_size == 0 || self.restarts == 0 {
            return Err(Error::config("search history_size and restarts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub z: Vec<f64>,
    pub value: f64,
    /// Objective at the first starting point after projection.
    pub initial_value: f64,
    /// Accepted steps summed over all starts.
    pub iterations: usize,
    /// The kept run met the gradient tolerance.
    pub converged: bool,
    /// Some trial point produced a non-finite value or gradient.
    pub hit_non_finite: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;
const KINK_RADII: [f64; 3] = [1e-4, 1e-6, 1e-8];
const HULL_ITERATIONS: usize = 1000;
const KINK_SALT: u64 = 0x6b69_6e6b;

/// Minimizes `objective`, which returns the value and gradient at a point,
/// starting from `z0`.
pub fn minimize<F>(objective: F, z0: &[f64], cfg: &SearchConfig) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    minimize_observed(objective, z0, cfg, |_, _| {})
}

/// [`minimize`] reporting every accepted iterate and its value.
pub fn minimize_observed<F, O>(mut objective: F, z0: &[f64], cfg: &SearchConfig, mut observer: O) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    O: FnMut(&[f64], f64),
{
    cfg.validate()?;
    if let Some(b) = &cfg.bounds {
        b.validate(Some(z0.len()))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<SearchResult> = None;
    let mut iterations = 0;
    let mut hit_non_finite = false;
    let mut initial_value = f64::NAN;
    for r in 0..cfg.restarts {
        let start: Vec<f64> = if r == 0 {
            z0.to_vec()
        } else {
            match &cfg.bounds {
                Some(b) => (0..z0.len())
                    .map(|i| {
                        let [lo, hi] = b.interval(i);
                        rng.random_range(lo..hi)
                    })
                    .collect(),
                None => z0.iter().map(|&v| v + rng.sample::<f64, _>(StandardNormal)).collect(),
            }
        };
        let run = match run(&mut objective, start, cfg, &mut observer) {
            Ok(run) => run,
            Err(e) if r == 0 => return Err(e),
            Err(_) => {
                hit_non_finite = true;
                continue;
            }
        };
        if r == 0 {
            initial_value = run.initial_value;
        }
        iterations += run.iterations;
        hit_non_finite |= run.hit_non_finite;
        if best.as_ref().is_none_or(|b| run.value < b.value) {
            best = Some(run);
        }
    }
    let mut best = best.expect("first start always yields a run");
    best.iterations = iterations;
    best.hit_non_finite = hit_non_finite;
    best.initial_value = initial_value;
    Ok(best)
}

fn finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|v| v.is_finite())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn run<F, O>(objective: &mut F, mut x: Vec<f64>, cfg: &SearchConfig, observer: &mut O) -> Result<SearchResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    O: FnMut(&[f64], f64),
{
    let bounds = cfg.bounds.as_ref();
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let n = x.len();
    let (mut f, mut g) = objective(&x);
    if !finite(f, &g) {
        return Err(Error::Numerical(format!("search objective is not finite at the start (value {f})")));
    }
    if g.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: g.len(),
        });
    }
    observer(&x, f);
    let initial_value = f;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut hit_non_finite = false;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ KINK_SALT);

    // Free coordinates: inside the box, or on a bound with the gradient pointing inwards.
    let free = |x: &[f64], g: &[f64]| -> Vec<bool> {
        (0..n)
            .map(|i| match bounds {
                None => true,
                Some(b) => {
                    let [lo, hi] = b.interval(i);
                    !((x[i] <= lo && g[i] > 0.0) || (x[i] >= hi && g[i] < 0.0))
                }
            })
            .collect()
    };

    while iterations < cfg.max_iterations {
        let mask = free(&x, &g);
        let pg_norm = (0..n).map(|i| if mask[i] { g[i].abs() } else { 0.0 }).fold(0.0, f64::max);
        if pg_norm < cfg.gradient_tolerance {
            converged = true;
            break;
        }
        let steepest: Vec<f64> = (0..n).map(|i| if mask[i] { -g[i] } else { 0.0 }).collect();
        let mut candidates = Vec::with_capacity(2);
        if !history.is_empty() {
            let d = two_loop(&steepest, &history, &mask);
            if dot(&d, &g) < 0.0 {
                candidates.push((d, 1.0));
            }
        }
        candidates.push((steepest, 1.0_f64.min(1.0 / pg_norm)));

        let mut accepted = None;
        for (d, t0) in candidates {
            accepted = line_search(objective, &x, f, &g, &d, t0, bounds, &mut hit_non_finite);
            if accepted.is_some() {
                break;
            }
        }
        if accepted.is_none() {
            accepted = escape_kink(objective, &x, f, &g, &mut rng, bounds, &free, &mut hit_non_finite);
            history.clear();
        }
        let Some((trial, s, ft, gt)) = accepted else {
            break;
        };
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if history.len() == cfg.history_size {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = trial;
        f = ft;
        g = gt;
        iterations += 1;
        observer(&x, f);
    }
    if !converged && iterations == cfg.max_iterations {
        let mask = free(&x, &g);
        converged = (0..n).all(|i| !mask[i] || g[i].abs() < cfg.gradient_tolerance);
    }
    Ok(SearchResult {
        z: x,
        value: f,
        initial_value,
        iterations,
        converged,
        hit_non_finite,
    })
}

type Step = (Vec<f64>, Vec<f64>, f64, Vec<f64>);

/// Backtracking from `x` along `d`, accepting the first projected point with
/// sufficient decrease relative to the slope `g`.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    objective: &mut F,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    t0: f64,
    bounds: Option<&Bounds>,
    hit_non_finite: &mut bool,
) -> Option<Step>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut t = t0;
    for _ in 0..MAX_BACKTRACKS {
        let mut trial: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + t * di).collect();
        if let Some(b) = bounds {
            b.project(&mut trial);
        }
        let s: Vec<f64> = trial.iter().zip(x).map(|(a, b)| a - b).collect();
        let gs = dot(g, &s);
        if gs >= 0.0 || s.iter().all(|&v| v == 0.0) {
            t *= 0.5;
            continue;
        }
        let (ft, gt) = objective(&trial);
        if !finite(ft, &gt) {
            *hit_non_finite = true;
        } else if ft <= f + ARMIJO * gs && ft < f {
            return Some((trial, s, ft, gt));
        }
        t *= 0.5;
    }
    None
}

/// Next to a kink the gradient at `x` describes one side only and every
/// step along it can fail. The smallest element of the convex hull of
/// gradients sampled around `x` points along the valley floor instead.
#[allow(clippy::too_many_arguments)]
fn escape_kink<F, M>(
    objective: &mut F,
    x: &[f64],
    f: f64,
    g: &[f64],
    rng: &mut ChaCha8Rng,
    bounds: Option<&Bounds>,
    free: &M,
    hit_non_finite: &mut bool,
) -> Option<Step>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    M: Fn(&[f64], &[f64]) -> Vec<bool>,
{
    let n = x.len();
    let scale = 1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for radius in KINK_RADII {
        let mut grads = vec![g.to_vec()];
        for _ in 0..2 * n + 2 {
            let mut near: Vec<f64> = x.iter().map(|&v| v + radius * scale * rng.sample::<f64, _>(StandardNormal)).collect();
            if let Some(b) = bounds {
                b.project(&mut near);
            }
            let (fn_, gn) = objective(&near);
            if finite(fn_, &gn) {
                grads.push(gn);
            } else {
                *hit_non_finite = true;
            }
        }
        let mut v = min_norm_in_hull(&grads);
        let mask = free(x, &v);
        for (vi, m) in v.iter_mut().zip(mask) {
            if !m {
                *vi = 0.0;
            }
        }
        let norm = v.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
        if norm == 0.0 {
            continue;
        }
        let d: Vec<f64> = v.iter().map(|a| -a).collect();
        if let Some(step) = line_search(objective, x, f, &v, &d, 1.0_f64.min(1.0 / norm), bounds, hit_non_finite) {
            return Some(step);
        }
    }
    None
}

/// Frank-Wolfe for the point of smallest norm in the convex hull of `points`.
fn min_norm_in_hull(points: &[Vec<f64>]) -> Vec<f64> {
    let mut v = points
        .iter()
        .min_by(|a, b| dot(a, a).total_cmp(&dot(b, b)))
        .expect("at least one point")
        .clone();
    for _ in 0..HULL_ITERATIONS {
        let vv = dot(&v, &v);
        let (k, vk) = points
            .iter()
            .map(|p| dot(p, &v))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one point");
        if vv - vk <= 1e-12 * vv {
            break;
        }
        let u: Vec<f64> = points[k].iter().zip(&v).map(|(p, a)| p - a).collect();
        let gamma = ((vv - vk) / dot(&u, &u)).clamp(0.0, 1.0);
        for (a, b) in v.iter_mut().zip(&u) {
            *a += gamma * b;
        }
    }
    v
}

/// Applies the inverse-Hessian approximation to `q` on the free coordinates.
fn two_loop(q: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, mask: &[bool]) -> Vec<f64> {
    let masked = |v: &[f64]| -> Vec<f64> { v.iter().zip(mask).map(|(&a, &m)| if m { a } else { 0.0 }).collect() };
    let mut q = q.to_vec();
    let mut alpha = vec![0.0; history.len()];
    for (k, (s, y, rho)) in history.iter().enumerate().rev() {
        let s = masked(s);
        alpha[k] = rho * dot(&s, &q);
        for (qi, yi) in q.iter_mut().zip(y).zip(mask).filter(|(_, &m)| m).map(|(p, _)| p) {
            *qi -= alpha[k] * yi;
        }
    }
    let (s, y, _) = history.back().unwrap();
    let gamma = dot(s, y) / dot(y, y);
    for v in &mut q {
        *v *= gamma;
    }
    for (k, (s, y, rho)) in history.iter().enumerate() {
        let beta = rho * dot(&masked(y), &q);
        for ((qi, si), _) in q.iter_mut().zip(s).zip(mask).filter(|(_, &m)| m) {
            *qi += (alpha[k] - beta) * si;
        }
    }
    masked(&q)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn quadratic(a: Vec<f64>) -> impl FnMut(&[f64]) -> (f64, Vec<f64>) {
        move |z| {
            let g: Vec<f64> = z.iter().zip(&a).map(|(zi, ai)| 2.0 * (zi - ai)).collect();
            (g.iter().map(|v| v * v / 4.0).sum(), g)
        }
    }

    fn rosenbrock(z: &[f64]) -> (f64, Vec<f64>) {
        let (x, y) = (z[0], z[1]);
        let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
        let g = vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)];
        (f, g)
    }

    #[test]
    fn quadratic_minimum_inside_the_box() {
        let a = vec![1.5, -2.0, 0.25];
        for bounded in [false, true] {
            let mut cfg = SearchConfig::default();
            if bounded {
                cfg = cfg.bounded();
            }
            let r = minimize(quadratic(a.clone()), &[7.0, 3.0, -9.0], &cfg).unwrap();
            for (z, t) in r.z.iter().zip(&a) {
                assert!((z - t).abs() < 1e-6, "{:?}", r.z);
            }
            assert!(r.converged && r.value <= r.initial_value);
        }
    }

    #[test]
    fn quadratic_minimum_outside_the_box_lands_on_the_boundary() {
        let cfg = SearchConfig {
            bounds: Some(Bounds::PerDim(vec![[-1.0, 1.0], [-1.0, 1.0], [0.0, 5.0]])),
            ..Default::default()
        };
        let r = minimize(quadratic(vec![3.0, 0.5, -4.0]), &[0.0, 0.0, 2.0], &cfg).unwrap();
        assert!((r.z[0] - 1.0).abs() < 1e-6 && (r.z[1] - 0.5).abs() < 1e-6 && r.z[2].abs() < 1e-6, "{:?}", r.z);
        assert!(r.converged);
    }

    #[test]
    fn rosenbrock_from_the_classic_start() {
        let r = minimize(rosenbrock, &[-1.2, 1.0], &SearchConfig::default()).unwrap();
        assert!((r.z[0] - 1.0).abs() < 1e-4 && (r.z[1] - 1.0).abs() < 1e-4, "{r:?}");
        assert!(r.converged, "{r:?}");
    }

    #[test]
    fn non_finite_regions_are_avoided() {
        let f = |z: &[f64]| {
            if z[0] < 0.0 {
                (f64::NAN, vec![f64::NAN])
            } else {
                ((z[0] - 0.1).powi(2), vec![2.0 * (z[0] - 0.1)])
            }
        };
        let r = minimize(f, &[0.3], &SearchConfig::default()).unwrap();
        assert!(r.value.is_finite() && r.value <= r.initial_value);
        assert!(minimize(f, &[-1.0], &SearchConfig::default()).is_err());
    }

    #[test]
    fn restarts_keep_the_best_run() {
        // Two wells, the deeper one at +2.
        let f = |z: &[f64]| {
            let x = z[0];
            let v = (x * x - 4.0).powi(2) / 16.0 - 0.5 * x;
            (v, vec![x * (x * x - 4.0) / 4.0 - 0.5])
        };
        let single = minimize(f, &[-2.0], &SearchConfig::default().bounded()).unwrap();
        let cfg = SearchConfig {
            restarts: 8,
            ..SearchConfig::default().bounded()
        };
        let multi = minimize(f, &[-2.0], &cfg).unwrap();
        assert!(single.z[0] < 0.0 && multi.z[0] > 0.0 && multi.value < single.value);
        assert_eq!(multi, minimize(f, &[-2.0], &cfg).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = SearchConfig {
            bounds: Some(Bounds::Uniform([1.0, 1.0])),
            ..Default::default()
        };
        assert!(minimize(quadratic(vec![0.0]), &[0.0], &bad).is_err());
        let wrong_dim = SearchConfig {
            bounds: Some(Bounds::PerDim(vec![[0.0, 1.0]])),
            ..Default::default()
        };
        assert!(minimize(quadratic(vec![0.0, 0.0]), &[0.0, 0.0], &wrong_dim).is_err());
        let parsed: SearchConfig = toml::from_str("bounds = [-3.0, 3.0]\nrestarts = 2").unwrap();
        assert_eq!(parsed.bounds, Some(Bounds::Uniform([-3.0, 3.0])));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn iterates_are_feasible_and_monotone(seed in any::<u64>(), d in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-20.0..20.0)).collect();
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let z0: Vec<f64> = (0..d).map(|_| rng.random_range(-15.0..15.0)).collect();
            // Non-convex: quadratic bowl plus a sinusoidal ripple.
            let f = |z: &[f64]| {
                let mut v = 0.0;
                let mut g = vec![0.0; d];
                for i in 0..d {
                    v += 0.1 * (z[i] - a[i]).powi(2) + c[i] * (3.0 * z[i]).sin();
                    g[i] = 0.2 * (z[i] - a[i]) + 3.0 * c[i] * (3.0 * z[i]).cos();
                }
                (v, g)
            };
            let cfg = SearchConfig::default().bounded();
            let mut last = f64::INFINITY;
            let mut ok = true;
            let r = minimize_observed(f, &z0, &cfg, |z, v| {
                ok &= cfg.bounds.as_ref().unwrap().contains(z) && v <= last;
                last = v;
            }).unwrap();
            prop_assert!(ok);
            prop_assert!(r.value <= r.initial_value);
            prop_assert!(cfg.bounds.as_ref().unwrap().contains(&r.z));
        }
    }
}
