//! Novelty scores of test inputs against a trained VAE and a reference set
//! of normal data.
//!
//! ```no_run
//! # fn main() -> vae_novelty::Result<()> {
//! use vae_novelty::novelty::{Metric, Parts, ReferenceSet, ScoreOptions, Scorer};
//! # let (model, normal, test): (vae_novelty::vae::VaeModel, vae_novelty::data::FeatureMatrix, Vec<f64>) = unimplemented!();
//! let metric: Metric = "latent-nn-bhatt".parse()?;
//! let reference = ReferenceSet::build(Some(&model), &normal, metric.parts(), None)?;
//! let scorer = Scorer::new(Some(&model), Some(&reference), ScoreOptions::default());
//! let scores = scorer.score_batch(metric, &test, 7)?;
//! # Ok(()) }
//! ```

mod metric;
mod reference;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metric::{Aggregate, DecoderMode, DensityAt, EncoderMode, LatentDistance, Measure, Metric, OutputNn, Parts};
pub use reference::{ReferenceSet, Subsample};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{log_mean_exp, standard_normals, DiagonalGaussian};
use crate::latent_search::{minimize, SearchConfig, SearchResult};
use crate::nn::sigmoid;
use crate::nn_index::Neighbor;
use crate::vae::{nll_head_grad, DecoderDist, DecoderFamily, VaeModel};
use reference::ReconBhatt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreOptions {
    /// Draws per input for the stochastic metrics.
    pub n_samples: usize,
    /// Latent search settings. Its bounds, or `[-10, 10]` when unset, are
    /// the box of the bounded generative metrics; the unbounded ones ignore
    /// them.
    pub search: SearchConfig,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            n_samples: 32,
            search: SearchConfig::default(),
        }
    }
}

/// Extra information about how a score was obtained.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Source row of the closest reference, for nearest-neighbour metrics.
    pub nearest: Option<usize>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    /// Latent point reached by a generative search.
    pub latent: Option<Vec<f64>>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResult {
    pub score: f64,
    pub metric: Metric,
    pub diagnostics: Diagnostics,
}

/// Seed of the `index`-th input of a batch scored with `base`.
pub fn sample_seed(base: u64, index: usize) -> u64 {
    base ^ index as u64
}

/// `sum (a - b)^2` in index order.
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        acc += t * t;
    }
    acc
}

/// Scores inputs with one model and reference set.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    model: Option<&'a VaeModel>,
    reference: Option<&'a ReferenceSet>,
    options: ScoreOptions,
}

struct Prepared<'s> {
    x: &'s [f64],
    q: Option<&'s DiagonalGaussian>,
    recon: Option<&'s DecoderDist>,
    seed: u64,
}

impl<'a> Scorer<'a> {
    pub fn new(model: Option<&'a VaeModel>, reference: Option<&'a ReferenceSet>, options: ScoreOptions) -> Self {
        Scorer {
            model,
            reference,
            options,
        }
    }

    pub fn options(&self) -> &ScoreOptions {
        &self.options
    }

    /// Scores one input, drawing any randomness from `seed`.
    pub fn score(&self, metric: Metric, x: &[f64], seed: u64) -> Result<ScoreResult> {
        Ok(self.score_rows(metric, x, |_| seed)?.remove(0))
    }

    /// Scores every row of `rows`; row `i` uses [`sample_seed`]`(base_seed, i)`,
    /// so results do not depend on batch composition or worker count.
    pub fn score_batch(&self, metric: Metric, rows: &[f64], base_seed: u64) -> Result<Vec<ScoreResult>> {
        self.score_rows(metric, rows, |i| sample_seed(base_seed, i))
    }

    fn input_dim(&self) -> Result<usize> {
        match (self.model, self.reference) {
            (Some(m), _) => Ok(m.input_len()),
            (None, Some(r)) => Ok(r.dim()),
            (None, None) => Err(Error::config("scoring needs a model or a reference set")),
        }
    }

    fn check(&self, metric: Metric) -> Result<()> {
        metric.validate()?;
        if metric.needs_model() && self.model.is_none() {
            return Err(Error::config(format!("{metric} needs a trained model")));
        }
        let need = metric.parts();
        if need != Parts::default() {
            let r = self
                .reference
                .ok_or_else(|| Error::config(format!("{metric} needs a reference set")))?;
            if !r.parts().covers(need) {
                return Err(Error::config(format!("the reference set was built without the parts {metric} reads")));
            }
            if let Some(m) = self.model {
                check_dim(m.input_len(), r.dim())?;
            }
        }
        if metric.is_stochastic() && self.options.n_samples == 0 {
            return Err(Error::config("n_samples must be at least 1"));
        }
        self.options.search.validate()
    }

    fn score_rows(&self, metric: Metric, rows: &[f64], seed: impl Fn(usize) -> u64 + Sync) -> Result<Vec<ScoreResult>> {
        self.check(metric)?;
        let d = self.input_dim()?;
        if rows.is_empty() {
            return Err(Error::Empty("input batch"));
        }
        if !rows.len().is_multiple_of(d) {
            return Err(Error::Dimension {
                expected: d,
                actual: rows.len() % d,
            });
        }
        let n = rows.len() / d;
        let qs: Option<Vec<DiagonalGaussian>> = match self.model.filter(|_| metric.needs_encoding()) {
            Some(m) => Some(
                m.encoder_heads(rows)?
                    .chunks(2 * m.latent_dim())
                    .map(DiagonalGaussian::from_head)
                    .collect(),
            ),
            None => None,
        };
        let recons: Option<Vec<DecoderDist>> = match (self.model, &qs) {
            (Some(m), Some(qs)) if metric.needs_reconstruction() => {
                let means: Vec<f64> = qs.iter().flat_map(|q| q.mean().to_vec()).collect();
                Some(
                    m.decoder_heads(&means)?
                        .chunks(m.family().head_len(d))
                        .map(|h| DecoderDist::from_head(m.family(), h))
                        .collect(),
                )
            }
            _ => None,
        };
        (0..n)
            .into_par_iter()
            .map(|i| {
                let p = Prepared {
                    x: &rows[i * d..(i + 1) * d],
                    q: qs.as_ref().map(|v| &v[i]),
                    recon: recons.as_ref().map(|v| &v[i]),
                    seed: seed(i),
                };
                let (score, diagnostics) = self.score_prepared(metric, &p)?;
                if !score.is_finite() {
                    return Err(Error::Numerical(format!("{metric} is not finite for input {i} ({score})")));
                }
                Ok(ScoreResult {
                    score,
                    metric,
                    diagnostics,
                })
            })
            .collect()
    }

    fn nearest(&self, hit: Neighbor) -> (f64, Diagnostics) {
        let r = self.reference.expect("checked");
        (
            hit.dist,
            Diagnostics {
                nearest: Some(r.source_id(hit.id)),
                ..Default::default()
            },
        )
    }

    fn score_prepared(&self, metric: Metric, p: &Prepared) -> Result<(f64, Diagnostics)> {
        let reference = self.reference;
        let q = || p.q.expect("encoded");
        let recon = || p.recon.expect("reconstructed");
        let plain = |s: f64| (s, Diagnostics::default());
        Ok(match metric {
            Metric::VaeReg => plain(q().kl_to_standard_normal()),
            Metric::LatentNn(dist) => {
                let lat = reference.and_then(|r| r.latent.as_ref()).expect("checked");
                self.nearest(match dist {
                    LatentDistance::EuclidMean => lat.means.nearest_sq_dist(q().mean())?,
                    LatentDistance::Bhattacharyya => lat.bhatt.nearest(q())?,
                })
            }
            Metric::LatentDensity { log } => {
                let lat = reference.and_then(|r| r.latent.as_ref()).expect("checked");
                plain(negated_density(lat.mixture.log_density(q().mean())?, log))
            }
            Metric::Reconstruction {
                encoder,
                decoder,
                aggregate,
            } => {
                let values = self.reconstruction_terms(p, encoder, decoder)?;
                let diag = Diagnostics {
                    samples: Some(values.len()),
                    ..Default::default()
                };
                (aggregate_values(&values, aggregate), diag)
            }
            Metric::OutputNn(variant) => {
                let rec = reference.and_then(|r| r.recon.as_ref());
                match variant {
                    OutputNn::ReconVsRecon => self.nearest(rec.expect("checked").means.nearest_sq_dist(&recon().mean())?),
                    OutputNn::XVsRecon => self.nearest(rec.expect("checked").means.nearest_sq_dist(p.x)?),
                    OutputNn::ReconVsY => {
                        let inputs = reference.and_then(|r| r.inputs.as_ref()).expect("checked");
                        self.nearest(inputs.nearest_sq_dist(&recon().mean())?)
                    }
                    OutputNn::Bhattacharyya => self.nearest(match (&rec.expect("checked").bhatt, recon()) {
                        (ReconBhatt::Gaussian(idx), DecoderDist::Gaussian(g)) => idx.nearest(g)?,
                        (ReconBhatt::Bernoulli(idx), d @ DecoderDist::Bernoulli { .. }) => idx.nearest(&d.mean())?,
                        _ => return Err(Error::config("reference set was built with another decoder family")),
                    }),
                }
            }
            Metric::OutputDensity { at, log } => {
                let rec = reference.and_then(|r| r.recon.as_ref()).expect("checked");
                let v = match at {
                    DensityAt::Reconstruction => recon().mean(),
                    DensityAt::Input => p.x.to_vec(),
                };
                check_dim(rec.means.dim(), v.len())?;
                let logs: Vec<f64> = rec.dists.iter().map(|c| c.log_density_unchecked(&v)).collect();
                plain(negated_density(log_mean_exp(&logs), log))
            }
            Metric::Generated { measure, bounded } => {
                let r = self.generated(p.x, q(), measure, bounded)?;
                (
                    r.value,
                    Diagnostics {
                        iterations: Some(r.iterations),
                        converged: Some(r.converged),
                        latent: Some(r.z),
                        ..Default::default()
                    },
                )
            }
            Metric::Elbo { aggregate } => {
                let values = self.reconstruction_terms(p, EncoderMode::Sample, DecoderMode::Likelihood)?;
                let diag = Diagnostics {
                    samples: Some(values.len()),
                    ..Default::default()
                };
                (aggregate_values(&values, aggregate) + q().kl_to_standard_normal(), diag)
            }
            Metric::BaselineNn => {
                let inputs = reference.and_then(|r| r.inputs.as_ref()).expect("checked");
                self.nearest(inputs.nearest_sq_dist(p.x)?)
            }
        })
    }

    /// Per-sample reconstruction terms. Each stochastic sample draws the
    /// encoder normals first, then the decoder noise.
    fn reconstruction_terms(&self, p: &Prepared, encoder: EncoderMode, decoder: DecoderMode) -> Result<Vec<f64>> {
        let model = self.model.expect("checked");
        let term = |dist: &DecoderDist, noise: &[f64]| match decoder {
            DecoderMode::Mean => sq_dist(p.x, &dist.mean()),
            DecoderMode::Sample => sq_dist(p.x, &dist.sample_with(noise)),
            DecoderMode::Likelihood => -dist.log_density_unchecked(p.x),
        };
        let d = model.input_len();
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        match encoder {
            EncoderMode::Mean => {
                let dist = p.recon.expect("reconstructed");
                if decoder != DecoderMode::Sample {
                    return Ok(vec![term(dist, &[])]);
                }
                Ok((0..self.options.n_samples)
                    .map(|_| term(dist, &model.family().draw_noise(d, &mut rng)))
                    .collect())
            }
            EncoderMode::Sample => {
                let q = p.q.expect("encoded");
                let n = self.options.n_samples;
                let mut zs = Vec::with_capacity(n * q.dim());
                let mut noise = Vec::with_capacity(n);
                for _ in 0..n {
                    zs.extend(q.sample_with(&standard_normals(&mut rng, q.dim())));
                    if decoder == DecoderMode::Sample {
                        noise.push(model.family().draw_noise(d, &mut rng));
                    }
                }
                let width = model.family().head_len(d);
                Ok(model
                    .decoder_heads(&zs)?
                    .chunks(width)
                    .enumerate()
                    .map(|(s, h)| {
                        let dist = DecoderDist::from_head(model.family(), h);
                        term(&dist, noise.get(s).map_or(&[][..], Vec::as_slice))
                    })
                    .collect())
            }
        }
    }

    /// Latent search from the encoder mean. The unbounded search also
    /// restarts from the bounded optimum, so it never ends above it.
    fn generated(&self, x: &[f64], q: &DiagonalGaussian, measure: Measure, bounded: bool) -> Result<SearchResult> {
        let model = self.model.expect("checked");
        let family = model.family();
        let objective = |z: &[f64]| match model.decoder_pullback(z, |head| head_objective(family, head, x, measure)) {
            Ok(v) => v,
            Err(_) => (f64::NAN, vec![f64::NAN; z.len()]),
        };
        let base = &self.options.search;
        let boxed = SearchConfig {
            bounds: Some(base.bounds.clone().unwrap_or_default()),
            ..base.clone()
        };
        let b = minimize(objective, q.mean(), &boxed)?;
        if bounded {
            return Ok(b);
        }
        let free = SearchConfig {
            bounds: None,
            ..base.clone()
        };
        let mut u = minimize(objective, q.mean(), &free)?;
        if b.value < u.value {
            let again = minimize(objective, &b.z, &free)?;
            let iterations = u.iterations + again.iterations;
            if again.value < u.value {
                u = again;
            }
            u.iterations = iterations;
        }
        Ok(u)
    }
}

fn negated_density(log_density: f64, log: bool) -> f64 {
    if log {
        -log_density
    } else {
        -log_density.exp()
    }
}

fn aggregate_values(values: &[f64], aggregate: Aggregate) -> f64 {
    match aggregate {
        Aggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregate::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Search objective on a raw decoder head and its gradient.
fn head_objective(family: DecoderFamily, head: &[f64], x: &[f64], measure: Measure) -> (f64, Vec<f64>) {
    let d = x.len();
    let mut grad = vec![0.0; head.len()];
    let value = match (measure, family) {
        (Measure::NegLogLikelihood, _) => nll_head_grad(family, head, x, 1.0, &mut grad),
        (Measure::SqError, DecoderFamily::Gaussian) => {
            for j in 0..d {
                grad[j] = -2.0 * (x[j] - head[j]);
            }
            sq_dist(x, &head[..d])
        }
        (Measure::SqError, DecoderFamily::Bernoulli) => {
            let p: Vec<f64> = head.iter().map(|&l| sigmoid(l)).collect();
            for j in 0..d {
                grad[j] = -2.0 * (x[j] - p[j]) * p[j] * (1.0 - p[j]);
            }
            sq_dist(x, &p)
        }
    };
    (value, grad)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::data::FeatureMatrix;
    use crate::vae::builtin_architecture;

    fn setup(arch: &str, family: DecoderFamily, d: usize) -> (VaeModel, FeatureMatrix, Vec<f64>) {
        let model = VaeModel::new(builtin_architecture(arch, family).unwrap(), family, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut row = || -> Vec<f64> { (0..d).map(|_| rng.random::<f32>() as f64).collect() };
        let normal: Vec<Vec<f64>> = (0..12).map(|_| row()).collect();
        let test: Vec<f64> = (0..5).flat_map(|_| row()).collect();
        (model, FeatureMatrix::from_rows(&normal).unwrap(), test)
    }

    fn batch_matches_single(model: &VaeModel, normal: &FeatureMatrix, test: &[f64], metrics: &[Metric]) {
        let reference = ReferenceSet::build(Some(model), normal, Parts::for_metrics(metrics), None).unwrap();
        let opts = ScoreOptions {
            n_samples: 4,
            ..Default::default()
        };
        let scorer = Scorer::new(Some(model), Some(&reference), opts);
        let d = model.input_len();
        for &metric in metrics {
            let batch = scorer.score_batch(metric, test, 77).unwrap();
            for (i, row) in test.chunks(d).enumerate() {
                let one = scorer.score(metric, row, sample_seed(77, i)).unwrap();
                assert_eq!(one, batch[i], "{metric} row {i}");
            }
        }
    }

    #[test]
    fn dense_batches_score_like_single_rows() {
        for family in [DecoderFamily::Gaussian, DecoderFamily::Bernoulli] {
            let (model, normal, test) = setup("dense:7-5-2", family, 7);
            batch_matches_single(&model, &normal, &test, &Metric::ALL);
        }
    }

    #[test]
    fn conv_batches_score_like_single_rows() {
        let (model, normal, test) = setup("mnist_conv_z4", DecoderFamily::Bernoulli, 784);
        let metrics: Vec<Metric> = [
            "vae-reg",
            "latent-nn-bhatt",
            "latent-density-log",
            "recon-det-lik",
            "recon-full-stoch-err",
            "out-nn-bhatt",
            "out-density-x-log",
            "neg-elbo",
        ]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
        batch_matches_single(&model, &normal, &test[..2 * 784], &metrics);
    }

    #[test]
    fn worker_count_does_not_change_scores() {
        let (model, normal, test) = setup("dense:7-5-2", DecoderFamily::Gaussian, 7);
        let reference = ReferenceSet::build(Some(&model), &normal, Parts::all(), None).unwrap();
        let scorer = Scorer::new(Some(&model), Some(&reference), ScoreOptions::default());
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                Metric::ALL
                    .iter()
                    .map(|&m| scorer.score_batch(m, &test, 3).unwrap())
                    .collect::<Vec<_>>()
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn baseline_needs_no_model() {
        let (_, normal, test) = setup("dense:7-5-2", DecoderFamily::Gaussian, 7);
        let reference = ReferenceSet::build(None, &normal, Metric::BaselineNn.parts(), None).unwrap();
        let scorer = Scorer::new(None, Some(&reference), ScoreOptions::default());
        let got = scorer.score_batch(Metric::BaselineNn, &test, 0).unwrap();
        let nearest = got[0].diagnostics.nearest.unwrap();
        assert_eq!(got[0].score, sq_dist(&test[..7], &normal.row_f64(nearest)));
        assert!(scorer.score_batch(Metric::VaeReg, &test, 0).is_err());
        assert!(ReferenceSet::build(None, &normal, Parts::all(), None).is_err());
    }

    #[test]
    fn misuse_is_reported() {
        let (model, normal, test) = setup("dense:7-5-2", DecoderFamily::Gaussian, 7);
        let inputs_only = ReferenceSet::build(None, &normal, Metric::BaselineNn.parts(), None).unwrap();
        let scorer = Scorer::new(Some(&model), Some(&inputs_only), ScoreOptions::default());
        let e = scorer.score_batch("latent-nn-euclid".parse().unwrap(), &test, 0).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(scorer.score_batch(Metric::BaselineNn, &test[..6], 0).is_err());
        assert!(scorer.score_batch(Metric::BaselineNn, &[], 0).is_err());
        let none = Scorer::new(
            Some(&model),
            None,
            ScoreOptions {
                n_samples: 0,
                ..Default::default()
            },
        );
        assert!(none.score_batch("neg-elbo".parse().unwrap(), &test, 0).is_err());
        assert!(none.score_batch(Metric::VaeReg, &test, 0).is_ok());
    }

    #[test]
    fn seeds_reproduce_and_differ() {
        let (model, _, test) = setup("dense:7-5-2", DecoderFamily::Gaussian, 7);
        let scorer = Scorer::new(Some(&model), None, ScoreOptions::default());
        let m: Metric = "recon-full-stoch-err".parse().unwrap();
        let a = scorer.score_batch(m, &test, 1).unwrap();
        assert_eq!(a, scorer.score_batch(m, &test, 1).unwrap());
        assert_ne!(a, scorer.score_batch(m, &test, 2).unwrap());
        assert_eq!(a[0].diagnostics.samples, Some(32));
    }
}
