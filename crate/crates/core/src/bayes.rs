//! Empirical-Bayes pooling.
//!
//! Each CPM has a mean AUC drawn from `N(mu_auc, sigma_auc^2)` and a
//! heterogeneity `tau` with `log(tau) ~ N(mu_tau, sigma_tau^2)`. Given `tau`,
//! the CPM mean integrates out in closed form (the studies are jointly normal
//! with an exchangeable covariance), so every quantity here reduces to a
//! one-dimensional integral over `log(tau)`, done by Gauss-Hermite quadrature.
//!
//! The four hyperparameters are fitted by maximizing the summed marginal
//! log-likelihood over the registry; per-CPM posterior moments then feed the
//! Bayesian prediction intervals.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CpmSeries, HyperParams, ValidationStudy};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::quadrature::{log_sum_exp, GaussHermite, DEFAULT_NODES};

/// Prior mean and sd of the CPM mean AUC in the flat-AUC variant.
pub const FLAT_MU_AUC: f64 = 0.0;
pub const FLAT_SIGMA_AUC: f64 = 10.0;

fn default_rule() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(DEFAULT_NODES).expect("41-node Hermite rule"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// Essentially flat prior on the CPM mean AUC (`N(0, 10^2)`); only the
    /// tau prior is fitted.
    Flat,
    /// Both priors fitted.
    Full,
}

impl fmt::Display for PriorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorMode::Flat => "flat",
            PriorMode::Full => "full",
        })
    }
}

impl FromStr for PriorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flat" | "flat-auc" | "flat_auc" => Ok(PriorMode::Flat),
            "full" => Ok(PriorMode::Full),
            other => Err(Error::invalid(format!("unknown prior mode '{other}'"))),
        }
    }
}

/// Log density of the studies given `tau`, with the CPM mean integrated out
/// against its normal prior.
///
/// Uses the Sherman-Morrison form of `N(mu 1, diag(v) + sigma^2 J)`.
pub fn marginal_loglik_given_tau(studies: &[ValidationStudy], hp: &HyperParams, tau: f64) -> f64 {
    let t2 = tau * tau;
    let s2 = hp.sigma_auc * hp.sigma_auc;
    let (mut a, mut b, mut quad, mut logdet) = (0.0, 0.0, 0.0, 0.0);
    for s in studies {
        let v = s.variance() + t2;
        let r = s.auc() - hp.mu_auc;
        a += 1.0 / v;
        b += r / v;
        quad += r * r / v;
        logdet += v.ln();
    }
    let denom = 1.0 + s2 * a;
    logdet += denom.ln();
    quad -= s2 * b * b / denom;
    -0.5 * (studies.len() as f64 * (2.0 * PI).ln() + logdet + quad)
}

/// Per-CPM marginal log-likelihood under the hyperparameters.
pub fn marginal_loglik_cpm(series: &CpmSeries, hp: &HyperParams) -> Result<f64> {
    marginal_loglik(series.studies(), hp, default_rule())
}

/// Marginal log-likelihood of a set of studies with an explicit quadrature rule.
pub fn marginal_loglik(studies: &[ValidationStudy], hp: &HyperParams, rule: &GaussHermite) -> Result<f64> {
    let terms: Vec<f64> = rule
        .normal_points(hp.mu_tau, hp.sigma_tau)
        .map(|(log_tau, lw)| lw + marginal_loglik_given_tau(studies, hp, log_tau.exp()))
        .collect();
    let value = log_sum_exp(&terms);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numeric(
            "marginal likelihood quadrature is not finite",
            vec![format!("hp = {hp:?}, k = {}", studies.len())],
        ))
    }
}

/// Posterior moments of a CPM's mean AUC and heterogeneity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub auc_post: f64,
    pub sd_post: f64,
    pub tau_post_mean: f64,
    pub tau2_post_mean: f64,
    /// SD of the posterior predictive for the true AUC in a new study.
    pub predictive_sd: f64,
}

pub fn posterior_pooled(series: &CpmSeries, hp: &HyperParams) -> Result<PosteriorSummary> {
    posterior_from_studies(series.studies(), hp)
}

pub fn posterior_from_studies(studies: &[ValidationStudy], hp: &HyperParams) -> Result<PosteriorSummary> {
    posterior_with_rule(studies, hp, default_rule())
}

/// Nested quadrature: Gauss-Hermite over `log(tau)` outside, the
/// normal-normal conjugate update for the CPM mean inside.
pub fn posterior_with_rule(
    studies: &[ValidationStudy],
    hp: &HyperParams,
    rule: &GaussHermite,
) -> Result<PosteriorSummary> {
    if studies.is_empty() {
        return Err(Error::invalid("posterior needs at least one study"));
    }
    let prior_prec = 1.0 / (hp.sigma_auc * hp.sigma_auc);
    let mut log_w = Vec::with_capacity(rule.len());
    let mut nodes = Vec::with_capacity(rule.len());
    for (log_tau, lw) in rule.normal_points(hp.mu_tau, hp.sigma_tau) {
        let tau = log_tau.exp();
        let t2 = tau * tau;
        let (mut prec, mut num) = (prior_prec, hp.mu_auc * prior_prec);
        for s in studies {
            let w = 1.0 / (s.variance() + t2);
            prec += w;
            num += w * s.auc();
        }
        log_w.push(lw + marginal_loglik_given_tau(studies, hp, tau));
        nodes.push((tau, num / prec, 1.0 / prec));
    }
    let norm = log_sum_exp(&log_w);
    if !norm.is_finite() {
        return Err(Error::numeric(
            "posterior weights are not finite",
            vec![format!("hp = {hp:?}, k = {}", studies.len())],
        ));
    }
    let weights: Vec<f64> = log_w.iter().map(|l| (l - norm).exp()).collect();
    let (mut mean, mut tau_m, mut tau2_m) = (0.0, 0.0, 0.0);
    for (w, &(tau, m, _)) in weights.iter().zip(&nodes) {
        mean += w * m;
        tau_m += w * tau;
        tau2_m += w * tau * tau;
    }
    let var: f64 = weights
        .iter()
        .zip(&nodes)
        .map(|(w, &(_, m, v))| w * (v + (m - mean) * (m - mean)))
        .sum();
    let sd_post = var.sqrt();
    let summary = PosteriorSummary {
        auc_post: mean,
        sd_post,
        tau_post_mean: tau_m,
        tau2_post_mean: tau2_m,
        predictive_sd: (var + tau2_m).sqrt(),
    };
    if [mean, sd_post, tau_m, tau2_m].iter().all(|x| x.is_finite()) {
        Ok(summary)
    } else {
        Err(Error::numeric("posterior moments are not finite", vec![format!("{summary:?}")]))
    }
}

/// Result of a hyperparameter fit; serializes to the prior JSON document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorFit {
    pub mu_auc: f64,
    pub sigma_auc: f64,
    pub mu_tau: f64,
    pub sigma_tau: f64,
    pub mode: PriorMode,
    pub loglik: f64,
    pub n_cpms: usize,
    pub n_validations: usize,
}

impl PriorFit {
    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            mu_auc: self.mu_auc,
            sigma_auc: self.sigma_auc,
            mu_tau: self.mu_tau,
            sigma_tau: self.sigma_tau,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let fit: PriorFit = serde_json::from_str(text)?;
        fit.hyper_params().validate()?;
        Ok(fit)
    }
}

/// Summed marginal log-likelihood over a registry.
///
/// Per-CPM terms are computed in parallel and summed in registry order, so
/// the value is bit-reproducible regardless of thread count.
pub fn registry_loglik(registry: &[CpmSeries], hp: &HyperParams) -> Result<f64> {
    let rule = default_rule();
    let terms: Vec<Result<f64>> = registry
        .par_iter()
        .map(|s| marginal_loglik(s.studies(), hp, rule))
        .collect();
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    Ok(total)
}

/// Maximum-marginal-likelihood hyperparameters.
///
/// Nelder-Mead on `(mu_tau, log sigma_tau[, mu_auc, log sigma_auc])`, started
/// at `mu_tau = log 0.05`, `sigma_tau = 0.3`, `mu_auc` = mean of all
/// estimates and `sigma_auc` = sd of the per-CPM means. The simplex is
/// restarted once from the first optimum.
pub fn fit_hyperparams(registry: &[CpmSeries], mode: PriorMode) -> Result<PriorFit> {
    if registry.is_empty() {
        return Err(Error::invalid("cannot fit hyperparameters to an empty registry"));
    }
    check_identifiable(registry, mode)?;

    let all: Vec<f64> = registry
        .iter()
        .flat_map(|s| s.studies().iter().map(|st| st.auc()))
        .collect();
    let grand_mean = all.iter().sum::<f64>() / all.len() as f64;
    let cpm_means: Vec<f64> = registry
        .iter()
        .map(|s| s.studies().iter().map(|st| st.auc()).sum::<f64>() / s.len() as f64)
        .collect();
    let mm = cpm_means.iter().sum::<f64>() / cpm_means.len() as f64;
    let sd_means = if cpm_means.len() > 1 {
        (cpm_means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / (cpm_means.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let sd_start = if sd_means > 1e-3 { sd_means } else { 0.05 };

    let decode = |x: &[f64]| -> HyperParams {
        match mode {
            PriorMode::Flat => HyperParams {
                mu_auc: FLAT_MU_AUC,
                sigma_auc: FLAT_SIGMA_AUC,
                mu_tau: x[0],
                sigma_tau: x[1].exp(),
            },
            PriorMode::Full => HyperParams {
                mu_auc: x[2],
                sigma_auc: x[3].exp(),
                mu_tau: x[0],
                sigma_tau: x[1].exp(),
            },
        }
    };
    let objective = |x: &[f64]| -> f64 {
        let hp = decode(x);
        match registry_loglik(registry, &hp) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };

    let mut x0 = vec![0.05f64.ln(), 0.3f64.ln()];
    if mode == PriorMode::Full {
        x0.extend([grand_mean, sd_start.ln()]);
    }
    let opts = NelderMeadOptions {
        diameter_tol: 1e-6,
        max_iter: 2000,
        initial_step: 0.25,
    };
    let first = nelder_mead(objective, &x0, &opts)?;
    let restart = NelderMeadOptions {
        initial_step: 0.05,
        ..opts
    };
    let second = nelder_mead(objective, &first.x, &restart)?;
    let best = if second.fx <= first.fx { second } else { first };
    if !best.fx.is_finite() {
        return Err(Error::numeric("marginal likelihood not finite at optimum", vec![format!("{:?}", best.x)]));
    }
    let hp = decode(&best.x);
    Ok(PriorFit {
        mu_auc: hp.mu_auc,
        sigma_auc: hp.sigma_auc,
        mu_tau: hp.mu_tau,
        sigma_tau: hp.sigma_tau,
        mode,
        loglik: -best.fx,
        n_cpms: registry.len(),
        n_validations: registry.iter().map(CpmSeries::len).sum(),
    })
}

fn check_identifiable(registry: &[CpmSeries], mode: PriorMode) -> Result<()> {
    let all_single = registry.iter().all(|s| s.len() == 1);
    if !all_single {
        return Ok(());
    }
    let first = registry[0].studies()[0].auc();
    if registry.iter().all(|s| s.studies()[0].auc() == first) {
        return Err(Error::NonIdentifiable(
            "every CPM has a single validation with the same AUC".into(),
        ));
    }
    if mode == PriorMode::Flat {
        return Err(Error::NonIdentifiable(
            "with a flat prior on the CPM mean, single-validation CPMs carry no information about tau".into(),
        ));
    }
    Ok(())
}
