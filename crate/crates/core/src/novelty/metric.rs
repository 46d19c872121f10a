use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Distance between latent posteriors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LatentDistance {
    /// Squared Euclidean distance between posterior means.
    EuclidMean,
    Bhattacharyya,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderMode {
    Mean,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecoderMode {
    /// Squared error against the decoder mean.
    Mean,
    /// Squared error against a decoder draw.
    Sample,
    /// Negative log-likelihood of the input.
    Likelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregate {
    Mean,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutputNn {
    /// Test reconstruction against reference reconstructions.
    ReconVsRecon,
    /// Decoder distribution against reference decoder distributions.
    Bhattacharyya,
    /// Raw test input against reference reconstructions.
    XVsRecon,
    /// Test reconstruction against raw reference inputs.
    ReconVsY,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DensityAt {
    Reconstruction,
    Input,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Measure {
    SqError,
    NegLogLikelihood,
}

/// One novelty score. Larger scores always mean more novel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    /// `KL(q(z|x) || N(0, I))`.
    VaeReg,
    /// Minimum over the reference set in latent space.
    LatentNn(LatentDistance),
    /// Negated density of the latent reference mixture at the encoder mean.
    /// `log` reports the negated log-density instead.
    LatentDensity { log: bool },
    Reconstruction {
        encoder: EncoderMode,
        decoder: DecoderMode,
        aggregate: Aggregate,
    },
    OutputNn(OutputNn),
    /// Negated density of the mixture of reference decoder distributions.
    OutputDensity { at: DensityAt, log: bool },
    /// Best decoder output over a latent search started at the encoder mean.
    Generated { measure: Measure, bounded: bool },
    /// Monte Carlo negative ELBO; `Min` takes the smallest reconstruction
    /// term over the samples.
    Elbo { aggregate: Aggregate },
    /// Squared Euclidean distance to the nearest raw reference input.
    BaselineNn,
}

const fn recon(encoder: EncoderMode, decoder: DecoderMode, aggregate: Aggregate) -> Metric {
    Metric::Reconstruction {
        encoder,
        decoder,
        aggregate,
    }
}

impl Metric {
    /// Every metric, in report order.
    pub const ALL: [Metric; 30] = {
        use Aggregate::{Mean as Avg, Min};
        use DecoderMode::{Likelihood as Lik, Mean as DMean, Sample as DSample};
        use EncoderMode::{Mean as EMean, Sample as ESample};
        [
            Metric::VaeReg,
            Metric::LatentNn(LatentDistance::EuclidMean),
            Metric::LatentNn(LatentDistance::Bhattacharyya),
            Metric::LatentDensity { log: false },
            Metric::LatentDensity { log: true },
            recon(EMean, DMean, Avg),
            recon(EMean, Lik, Avg),
            recon(ESample, DMean, Avg),
            recon(ESample, DMean, Min),
            recon(ESample, Lik, Avg),
            recon(ESample, Lik, Min),
            recon(EMean, DSample, Avg),
            recon(EMean, DSample, Min),
            recon(ESample, DSample, Avg),
            recon(ESample, DSample, Min),
            Metric::OutputNn(OutputNn::ReconVsRecon),
            Metric::OutputNn(OutputNn::Bhattacharyya),
            Metric::OutputNn(OutputNn::XVsRecon),
            Metric::OutputNn(OutputNn::ReconVsY),
            Metric::OutputDensity {
                at: DensityAt::Reconstruction,
                log: false,
            },
            Metric::OutputDensity {
                at: DensityAt::Reconstruction,
                log: true,
            },
            Metric::OutputDensity {
                at: DensityAt::Input,
                log: false,
            },
            Metric::OutputDensity {
                at: DensityAt::Input,
                log: true,
            },
            Metric::Generated {
                measure: Measure::SqError,
                bounded: false,
            },
            Metric::Generated {
                measure: Measure::SqError,
                bounded: true,
            },
            Metric::Generated {
                measure: Measure::NegLogLikelihood,
                bounded: false,
            },
            Metric::Generated {
                measure: Measure::NegLogLikelihood,
                bounded: true,
            },
            Metric::Elbo { aggregate: Avg },
            Metric::Elbo { aggregate: Min },
            Metric::BaselineNn,
        ]
    };

    /// Stable string id, e.g. `latent-nn-euclid`.
    pub fn id(&self) -> &'static str {
        use Aggregate::{Mean as Avg, Min};
        use DecoderMode::{Likelihood as Lik, Mean as DMean, Sample as DSample};
        use EncoderMode::{Mean as EMean, Sample as ESample};
        match *self {
            Metric::VaeReg => "vae-reg",
            Metric::LatentNn(LatentDistance::EuclidMean) => "latent-nn-euclid",
            Metric::LatentNn(LatentDistance::Bhattacharyya) => "latent-nn-bhatt",
            Metric::LatentDensity { log: false } => "latent-density",
            Metric::LatentDensity { log: true } => "latent-density-log",
            Metric::Reconstruction {
                encoder,
                decoder,
                aggregate,
            } => match (encoder, decoder, aggregate) {
                (EMean, DMean, _) => "recon-det-err",
                (EMean, Lik, _) => "recon-det-lik",
                (ESample, DMean, Avg) => "recon-enc-stoch-err",
                (ESample, DMean, Min) => "recon-enc-stoch-err-min",
                (ESample, Lik, Avg) => "recon-enc-stoch-lik",
                (ESample, Lik, Min) => "recon-enc-stoch-lik-min",
                (EMean, DSample, Avg) => "recon-dec-stoch-err",
                (EMean, DSample, Min) => "recon-dec-stoch-err-min",
                (ESample, DSample, Avg) => "recon-full-stoch-err",
                (ESample, DSample, Min) => "recon-full-stoch-err-min",
            },
            Metric::OutputNn(OutputNn::ReconVsRecon) => "out-nn-recon",
            Metric::OutputNn(OutputNn::Bhattacharyya) => "out-nn-bhatt",
            Metric::OutputNn(OutputNn::XVsRecon) => "out-nn-x-vs-recon",
            Metric::OutputNn(OutputNn::ReconVsY) => "out-nn-recon-vs-y",
            Metric::OutputDensity { at, log } => match (at, log) {
                (DensityAt::Reconstruction, false) => "out-density-recon",
                (DensityAt::Reconstruction, true) => "out-density-recon-log",
                (DensityAt::Input, false) => "out-density-x",
                (DensityAt::Input, true) => "out-density-x-log",
            },
            Metric::Generated { measure, bounded } => match (measure, bounded) {
                (Measure::SqError, false) => "gen-err",
                (Measure::SqError, true) => "gen-err-bounded",
                (Measure::NegLogLikelihood, false) => "gen-lik",
                (Measure::NegLogLikelihood, true) => "gen-lik-bounded",
            },
            Metric::Elbo { aggregate: Avg } => "neg-elbo",
            Metric::Elbo { aggregate: Min } => "neg-elbo-min",
            Metric::BaselineNn => "baseline-nn",
        }
    }

    /// Reconstruction metric from its modes. A `Min` aggregate needs at least
    /// one stochastic stage.
    pub fn reconstruction(encoder: EncoderMode, decoder: DecoderMode, aggregate: Aggregate) -> Result<Metric> {
        let m = recon(encoder, decoder, aggregate);
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Metric::Reconstruction {
                encoder: EncoderMode::Mean,
                decoder: DecoderMode::Mean | DecoderMode::Likelihood,
                aggregate: Aggregate::Min,
            } => Err(Error::config(format!(
                "{} is deterministic, a min aggregate needs encoder or decoder sampling",
                self.id()
            ))),
            _ => Ok(()),
        }
    }

    pub fn needs_model(&self) -> bool {
        !matches!(self, Metric::BaselineNn)
    }

    /// Draws random samples per scored input.
    pub fn is_stochastic(&self) -> bool {
        match self {
            Metric::Reconstruction { encoder, decoder, .. } => {
                *encoder == EncoderMode::Sample || *decoder == DecoderMode::Sample
            }
            Metric::Elbo { .. } => true,
            _ => false,
        }
    }

    /// Reference-set contents the metric reads.
    pub fn parts(&self) -> Parts {
        let mut p = Parts::default();
        match self {
            Metric::LatentNn(_) | Metric::LatentDensity { .. } => p.latent = true,
            Metric::OutputNn(OutputNn::ReconVsY) | Metric::BaselineNn => p.inputs = true,
            Metric::OutputNn(_) | Metric::OutputDensity { .. } => p.recon = true,
            _ => {}
        }
        p
    }

    pub(crate) fn needs_encoding(&self) -> bool {
        self.needs_model()
    }

    /// Reads the decoder distribution at the encoder mean.
    pub(crate) fn needs_reconstruction(&self) -> bool {
        match self {
            Metric::Reconstruction { encoder, .. } => *encoder == EncoderMode::Mean,
            Metric::OutputNn(OutputNn::XVsRecon) => false,
            Metric::OutputNn(_) => true,
            Metric::OutputDensity { at, .. } => *at == DensityAt::Reconstruction,
            _ => false,
        }
    }
}

/// Which derived views of the normal data a reference set holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Parts {
    /// Raw inputs.
    pub inputs: bool,
    /// Latent posteriors.
    pub latent: bool,
    /// Decoder distributions at the latent means.
    pub recon: bool,
}

impl Parts {
    pub fn all() -> Self {
        Parts {
            inputs: true,
            latent: true,
            recon: true,
        }
    }

    pub fn for_metrics(metrics: &[Metric]) -> Self {
        metrics.iter().fold(Parts::default(), |a, m| a.union(m.parts()))
    }

    pub fn union(self, other: Parts) -> Self {
        Parts {
            inputs: self.inputs || other.inputs,
            latent: self.latent || other.latent,
            recon: self.recon || other.recon,
        }
    }

    /// Every part in `other` is present here.
    pub fn covers(&self, other: Parts) -> bool {
        (self.inputs || !other.inputs) && (self.latent || !other.latent) && (self.recon || !other.recon)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.id() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown metric {s:?}; valid ids: {}",
                Metric::ALL.map(|m| m.id()).join(", ")
            ))
        })
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn ids_are_unique_and_round_trip() {
        let ids: HashSet<&str> = Metric::ALL.iter().map(|m| m.id()).collect();
        assert_eq!(ids.len(), Metric::ALL.len());
        for m in Metric::ALL {
            assert_eq!(m.id().parse::<Metric>().unwrap(), m);
            assert!(m.validate().is_ok());
        }
    }

    #[test]
    fn unknown_ids_list_the_valid_ones() {
        let err = "latent-nn".parse::<Metric>().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("neg-elbo-min"), "{err}");
    }

    #[test]
    fn deterministic_min_is_rejected() {
        assert!(Metric::reconstruction(EncoderMode::Mean, DecoderMode::Likelihood, Aggregate::Min).is_err());
        assert_eq!(
            Metric::reconstruction(EncoderMode::Sample, DecoderMode::Likelihood, Aggregate::Min)
                .unwrap()
                .id(),
            "recon-enc-stoch-lik-min"
        );
    }

    #[test]
    fn parts_and_flags() {
        assert!(!Metric::BaselineNn.needs_model());
        assert_eq!(Parts::for_metrics(&[Metric::BaselineNn]), Parts { inputs: true, ..Default::default() });
        assert_eq!(Parts::for_metrics(&Metric::ALL), Parts::all());
        assert_eq!(Parts::for_metrics(&[Metric::VaeReg]), Parts::default());
        let stochastic = Metric::ALL.iter().filter(|m| m.is_stochastic()).count();
        assert_eq!(stochastic, 10);
    }
}
