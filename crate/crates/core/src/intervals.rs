//! Prediction intervals for the AUC in the next validation study.
//!
//! | model          | true AUC                       | observed AUC                           |
//! |----------------|--------------------------------|----------------------------------------|
//! | fixed effects  | `c ± z·se`                     | `c ± z·√(se² + s_next²)`               |
//! | random effects | `c ± z·√(se² + tau²)`          | `c ± z·√(se² + tau² + s_next²)`        |
//! | Bayes          | `c ± z·predictive_sd`          | `c ± z·√(predictive_sd² + s_next²)`    |
//!
//! The Bayes spread can be switched to the bare posterior sd of the CPM mean
//! ([`BayesSpread::PosteriorSd`]), which ignores between-study spread.

use serde::{Deserialize, Serialize};

use crate::bayes::PosteriorSummary;
use crate::error::{Error, Result};
use crate::model::{z_for_level, IntervalTarget, MetaResult, PredictionInterval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BayesSpread {
    /// Posterior predictive sd: posterior variance of the mean plus `E[tau^2]`.
    #[default]
    Predictive,
    /// Posterior sd of the CPM mean only.
    PosteriorSd,
}

/// Anything a prediction interval can be built from.
#[derive(Debug, Clone, Copy)]
pub enum Pooled<'a> {
    Meta(&'a MetaResult),
    Bayes(&'a PosteriorSummary, BayesSpread),
}

impl<'a> From<&'a MetaResult> for Pooled<'a> {
    fn from(r: &'a MetaResult) -> Self {
        Pooled::Meta(r)
    }
}

impl<'a> From<&'a PosteriorSummary> for Pooled<'a> {
    fn from(p: &'a PosteriorSummary) -> Self {
        Pooled::Bayes(p, BayesSpread::Predictive)
    }
}

impl Pooled<'_> {
    pub fn center(&self) -> f64 {
        match self {
            Pooled::Meta(r) => r.pooled,
            Pooled::Bayes(p, _) => p.auc_post,
        }
    }

    /// Variance of the prediction error for the next study's true AUC.
    pub fn true_auc_variance(&self) -> f64 {
        match self {
            Pooled::Meta(r) => r.pooled_se * r.pooled_se + r.tau * r.tau,
            Pooled::Bayes(p, BayesSpread::Predictive) => p.predictive_sd * p.predictive_sd,
            Pooled::Bayes(p, BayesSpread::PosteriorSd) => p.sd_post * p.sd_post,
        }
    }
}

/// Interval for the true AUC in the next setting.
pub fn pi_true_next<'a>(source: impl Into<Pooled<'a>>, level: f64) -> Result<PredictionInterval> {
    let source = source.into();
    let z = z_for_level(level)?;
    Ok(PredictionInterval::symmetric(
        source.center(),
        z * source.true_auc_variance().sqrt(),
        level,
        IntervalTarget::TrueAuc,
    ))
}

/// Interval for the AUC the next study will report, given its standard error.
pub fn pi_observed_next<'a>(
    source: impl Into<Pooled<'a>>,
    s_next: f64,
    level: f64,
) -> Result<PredictionInterval> {
    if !(s_next > 0.0 && s_next.is_finite()) {
        return Err(Error::invalid(format!("s_next {s_next} must be positive and finite")));
    }
    let source = source.into();
    let z = z_for_level(level)?;
    Ok(PredictionInterval::symmetric(
        source.center(),
        z * (source.true_auc_variance() + s_next * s_next).sqrt(),
        level,
        IntervalTarget::ObservedAuc,
    ))
}

/// Confidence interval for the pooled mean (the forest-plot diamond).
pub fn confidence_interval(result: &MetaResult, level: f64) -> Result<(f64, f64)> {
    let z = z_for_level(level)?;
    Ok((result.pooled - z * result.pooled_se, result.pooled + z * result.pooled_se))
}
