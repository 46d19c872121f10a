use serde::{Deserialize, Serialize};

use super::Parts;
use crate::data::FeatureMatrix;
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{DiagonalGaussian, GaussianMixture};
use crate::nn_index::{subsample_positions, BernoulliIndex, GaussianIndex, VectorIndex};
use crate::vae::{DecoderDist, VaeModel};

/// Uniform draw of `count` reference rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subsample {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct LatentRefs {
    pub mixture: GaussianMixture,
    pub means: VectorIndex,
    pub bhatt: GaussianIndex,
}

#[derive(Debug, Clone)]
pub(crate) enum ReconBhatt {
    Gaussian(GaussianIndex),
    Bernoulli(BernoulliIndex),
}

#[derive(Debug, Clone)]
pub(crate) struct ReconRefs {
    pub dists: Vec<DecoderDist>,
    pub means: VectorIndex,
    pub bhatt: ReconBhatt,
}

/// Normal data `Y` in the views the scorers compare against: raw inputs,
/// latent posteriors and decoder distributions at the latent means.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    ids: Vec<usize>,
    d: usize,
    parts: Parts,
    pub(crate) inputs: Option<VectorIndex>,
    pub(crate) latent: Option<LatentRefs>,
    pub(crate) recon: Option<ReconRefs>,
}

impl ReferenceSet {
    /// Builds the requested `parts` from the rows of `normal`, optionally a
    /// uniform subsample of them. Latent and reconstruction parts need a model.
    pub fn build(
        model: Option<&VaeModel>,
        normal: &FeatureMatrix,
        parts: Parts,
        subsample: Option<Subsample>,
    ) -> Result<Self> {
        if normal.n() == 0 {
            return Err(Error::Empty("reference data"));
        }
        let ids = match subsample {
            Some(s) => subsample_positions(normal.n(), s.count, s.seed)?,
            None => (0..normal.n()).collect(),
        };
        let d = normal.d();
        let rows: Vec<f64> = ids.iter().flat_map(|&i| normal.row_f64(i)).collect();
        ReferenceSet::from_rows(model, &rows, d, parts, ids)
    }

    fn from_rows(model: Option<&VaeModel>, rows: &[f64], d: usize, parts: Parts, ids: Vec<usize>) -> Result<Self> {
        let inputs = if parts.inputs { Some(VectorIndex::new(rows, d)?) } else { None };
        let (mut latent, mut recon) = (None, None);
        if parts.latent || parts.recon {
            let model = model.ok_or_else(|| Error::config("latent and reconstruction references need a model"))?;
            check_dim(model.input_len(), d)?;
            let l = model.latent_dim();
            let qs: Vec<DiagonalGaussian> = model
                .encoder_heads(rows)?
                .chunks(2 * l)
                .map(DiagonalGaussian::from_head)
                .collect();
            if parts.recon {
                let means: Vec<f64> = qs.iter().flat_map(|q| q.mean().to_vec()).collect();
                let width = model.family().head_len(d);
                let dists: Vec<DecoderDist> = model
                    .decoder_heads(&means)?
                    .chunks(width)
                    .map(|h| DecoderDist::from_head(model.family(), h))
                    .collect();
                let centers: Vec<f64> = dists.iter().flat_map(DecoderDist::mean).collect();
                let bhatt = match &dists[0] {
                    DecoderDist::Gaussian(_) => ReconBhatt::Gaussian(GaussianIndex::new(
                        &dists
                            .iter()
                            .map(|p| match p {
                                DecoderDist::Gaussian(g) => g.clone(),
                                DecoderDist::Bernoulli { .. } => unreachable!("one family per model"),
                            })
                            .collect::<Vec<_>>(),
                    )?),
                    DecoderDist::Bernoulli { .. } => ReconBhatt::Bernoulli(BernoulliIndex::new(
                        &dists.iter().map(DecoderDist::mean).collect::<Vec<_>>(),
                    )?),
                };
                recon = Some(ReconRefs {
                    means: VectorIndex::new(&centers, d)?,
                    dists,
                    bhatt,
                });
            }
            if parts.latent {
                let means: Vec<f64> = qs.iter().flat_map(|q| q.mean().to_vec()).collect();
                latent = Some(LatentRefs {
                    means: VectorIndex::new(&means, l)?,
                    bhatt: GaussianIndex::new(&qs)?,
                    mixture: GaussianMixture::new(qs)?,
                });
            }
        }
        Ok(ReferenceSet {
            ids,
            d,
            parts,
            inputs,
            latent,
            recon,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Input dimensionality.
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn parts(&self) -> Parts {
        self.parts
    }

    /// Row of the source matrix behind reference `k`.
    pub fn source_id(&self, k: usize) -> usize {
        self.ids[k]
    }

    pub fn source_ids(&self) -> &[usize] {
        &self.ids
    }

    /// `q(z|y)` for every reference, if built.
    pub fn latent_gaussians(&self) -> Option<&[DiagonalGaussian]> {
        self.latent.as_ref().map(|l| l.mixture.components())
    }

    /// `p(x | E[q(z|y)])` for every reference, if built.
    pub fn recon_distributions(&self) -> Option<&[DecoderDist]> {
        self.recon.as_ref().map(|r| r.dists.as_slice())
    }
}
