//! Domain types and the two-level normal model.
//!
//! An observed validation AUC is normal around that study's true AUC with the
//! reported standard error, and true AUCs scatter normally around the CPM's
//! mean AUC with between-study standard deviation `tau`. Integrating out the
//! study level leaves `auc_hat ~ N(auc_cpm, se^2 + tau^2)` per study, which is
//! what every estimator in this crate works with.
//!
//! Everything here is on the raw AUC scale: no logit transform, no clamping.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// One external validation of a CPM.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationStudy {
    auc_hat: f64,
    se: f64,
    study_label: String,
    sequence_index: u32,
}

impl ValidationStudy {
    pub fn new(
        study_label: impl Into<String>,
        sequence_index: u32,
        auc_hat: f64,
        se: f64,
    ) -> Result<Self> {
        if !(auc_hat > 0.0 && auc_hat < 1.0) {
            return Err(Error::invalid(format!("auc {auc_hat} outside (0, 1)")));
        }
        if !(se > 0.0 && se.is_finite()) {
            return Err(Error::invalid(format!("standard error {se} must be positive and finite")));
        }
        Ok(Self {
            auc_hat,
            se,
            study_label: study_label.into(),
            sequence_index,
        })
    }

    /// Convenience constructor for anonymous studies (label derived from the index).
    pub fn anonymous(sequence_index: u32, auc_hat: f64, se: f64) -> Result<Self> {
        Self::new(format!("s{}", sequence_index + 1), sequence_index, auc_hat, se)
    }

    pub fn auc(&self) -> f64 {
        self.auc_hat
    }

    pub fn se(&self) -> f64 {
        self.se
    }

    pub fn variance(&self) -> f64 {
        self.se * self.se
    }

    pub fn label(&self) -> &str {
        &self.study_label
    }

    pub fn sequence_index(&self) -> u32 {
        self.sequence_index
    }
}

/// The ordered validations of one CPM; the unit of a single meta-analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct CpmSeries {
    cpm_label: String,
    development_auc: Option<f64>,
    studies: Vec<ValidationStudy>,
}

impl CpmSeries {
    /// Builds a series, sorting studies by sequence index.
    ///
    /// Fails on an empty study list or on duplicate sequence indices.
    pub fn new(
        cpm_label: impl Into<String>,
        development_auc: Option<f64>,
        mut studies: Vec<ValidationStudy>,
    ) -> Result<Self> {
        let cpm_label = cpm_label.into();
        if studies.is_empty() {
            return Err(Error::invalid(format!("CPM {cpm_label} has no validations")));
        }
        studies.sort_by_key(|s| s.sequence_index);
        if let Some(w) = studies.windows(2).find(|w| w[0].sequence_index == w[1].sequence_index) {
            return Err(Error::invalid(format!(
                "CPM {cpm_label}: duplicate sequence index {}",
                w[0].sequence_index
            )));
        }
        Ok(Self {
            cpm_label,
            development_auc,
            studies,
        })
    }

    /// Series whose studies are indexed 0.. in the given order.
    pub fn from_pairs(cpm_label: impl Into<String>, pairs: &[(f64, f64)]) -> Result<Self> {
        let studies = pairs
            .iter()
            .enumerate()
            .map(|(j, &(y, s))| ValidationStudy::anonymous(j as u32, y, s))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cpm_label, None, studies)
    }

    pub fn label(&self) -> &str {
        &self.cpm_label
    }

    pub fn development_auc(&self) -> Option<f64> {
        self.development_auc
    }

    pub fn studies(&self) -> &[ValidationStudy] {
        &self.studies
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    /// The first `n` studies in sequence order (all of them if `n` exceeds the length).
    pub fn first(&self, n: usize) -> &[ValidationStudy] {
        &self.studies[..n.min(self.studies.len())]
    }
}

/// Pooling method tag carried by every result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Fe,
    ReReml,
    ReDl,
    ReSj,
    ReFixedTau,
    BayesFlat,
    BayesFull,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Fe,
        Method::ReReml,
        Method::ReDl,
        Method::ReSj,
        Method::ReFixedTau,
        Method::BayesFlat,
        Method::BayesFull,
    ];

    /// Canonical upper-case tag, e.g. `RE_REML`.
    pub fn tag(self) -> &'static str {
        match self {
            Method::Fe => "FE",
            Method::ReReml => "RE_REML",
            Method::ReDl => "RE_DL",
            Method::ReSj => "RE_SJ",
            Method::ReFixedTau => "RE_FIXED_TAU",
            Method::BayesFlat => "BAYES_FLAT",
            Method::BayesFull => "BAYES_FULL",
        }
    }

    /// Short command-line name, e.g. `reml`.
    pub fn cli_name(self) -> &'static str {
        match self {
            Method::Fe => "fe",
            Method::ReReml => "reml",
            Method::ReDl => "dl",
            Method::ReSj => "sj",
            Method::ReFixedTau => "fixed-tau",
            Method::BayesFlat => "bayes-flat",
            Method::BayesFull => "bayes-full",
        }
    }

    pub fn is_bayes(self) -> bool {
        matches!(self, Method::BayesFlat | Method::BayesFull)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.cli_name() == lower || m.tag().to_ascii_lowercase().replace('_', "-") == lower)
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

/// Why a reported `tau` is not a plain interior estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauNote {
    /// A single study: heterogeneity cannot be estimated and is set to zero.
    NotEstimable,
    /// The moment estimate of tau^2 was negative and truncated at zero.
    TruncatedAtZero,
    /// Restricted likelihood maximized on the tau = 0 boundary.
    Boundary,
    /// The estimator is undefined on this input (all estimates identical); zero used.
    Degenerate,
}

/// Output of one pooled meta-analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaResult {
    pub pooled: f64,
    pub pooled_se: f64,
    pub tau: f64,
    pub method: Method,
    pub k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_note: Option<TauNote>,
}

/// Normal prior on the CPM mean AUC and lognormal prior on tau.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub mu_auc: f64,
    pub sigma_auc: f64,
    pub mu_tau: f64,
    pub sigma_tau: f64,
}

impl HyperParams {
    pub fn new(mu_auc: f64, sigma_auc: f64, mu_tau: f64, sigma_tau: f64) -> Result<Self> {
        let hp = Self {
            mu_auc,
            sigma_auc,
            mu_tau,
            sigma_tau,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_auc.is_finite() && self.mu_tau.is_finite()) {
            return Err(Error::invalid("hyperparameter means must be finite"));
        }
        if !(self.sigma_auc > 0.0 && self.sigma_auc.is_finite()) {
            return Err(Error::invalid(format!("sigma_auc {} must be positive", self.sigma_auc)));
        }
        if !(self.sigma_tau > 0.0 && self.sigma_tau.is_finite()) {
            return Err(Error::invalid(format!("sigma_tau {} must be positive", self.sigma_tau)));
        }
        Ok(())
    }

    /// Prior mean of tau.
    pub fn tau_bar(&self) -> f64 {
        tau_bar(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntervalTarget {
    /// The true AUC in the next setting.
    TrueAuc,
    /// The AUC that the next validation study will report.
    ObservedAuc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionInterval {
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub target: IntervalTarget,
}

impl PredictionInterval {
    pub fn symmetric(center: f64, half_width: f64, level: f64, target: IntervalTarget) -> Self {
        Self {
            center,
            lower: center - half_width,
            upper: center + half_width,
            level,
            target,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    /// True when an endpoint falls outside the unit interval. Endpoints are
    /// never clipped; this is for report annotations only.
    pub fn exceeds_unit_interval(&self) -> bool {
        self.lower < 0.0 || self.upper > 1.0
    }
}

/// Mean and variance of `exp(X)` for `X ~ N(mu_tau, sigma_tau^2)`.
pub fn lognormal_mean_var(mu_tau: f64, sigma_tau: f64) -> Result<(f64, f64)> {
    if !mu_tau.is_finite() || !sigma_tau.is_finite() {
        return Err(Error::invalid("lognormal parameters must be finite"));
    }
    if sigma_tau < 0.0 {
        return Err(Error::invalid(format!("sigma_tau {sigma_tau} is negative")));
    }
    let s2 = sigma_tau * sigma_tau;
    let mean = (mu_tau + 0.5 * s2).exp();
    let variance = s2.exp_m1() * (2.0 * mu_tau + s2).exp();
    Ok((mean, variance))
}

/// Prior mean of tau implied by the lognormal hyperprior.
pub fn tau_bar(hp: &HyperParams) -> f64 {
    (hp.mu_tau + 0.5 * hp.sigma_tau * hp.sigma_tau).exp()
}

/// Log density of `N(mean, variance)` at `x`.
#[inline]
pub fn ln_normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -LN_SQRT_2PI - 0.5 * variance.ln() - 0.5 * d * d / variance
}

/// Per-CPM log-likelihood at a fixed CPM mean AUC and heterogeneity, with the
/// per-study true AUCs integrated out.
pub fn loglik_series_given_tau(series: &CpmSeries, auc_i: f64, tau: f64) -> f64 {
    loglik_studies_given_tau(series.studies(), auc_i, tau)
}

pub(crate) fn loglik_studies_given_tau(studies: &[ValidationStudy], auc_i: f64, tau: f64) -> f64 {
    let t2 = tau * tau;
    studies
        .iter()
        .map(|s| ln_normal_pdf(s.auc(), auc_i, s.variance() + t2))
        .sum()
}

/// Two-sided standard normal multiplier for a central interval at `level`.
///
/// The 95% level uses exactly 1.96; other levels use the normal quantile.
pub fn z_for_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level {level} outside (0, 1)")));
    }
    if (level - 0.95).abs() < 1e-12 {
        return Ok(1.96);
    }
    Ok(Normal::standard().inverse_cdf(0.5 * (1.0 + level)))
}

/// Standard error implied by a 95% Wald confidence interval.
pub fn se_from_ci95(lower: f64, upper: f64) -> f64 {
    (upper - lower) / (2.0 * 1.96)
}
