//! Synthetic registries drawn from the full generative model.
//!
//! Per CPM: `AUC_i ~ N(mu_auc, sigma_auc^2)`, `log tau_i ~ N(mu_tau, sigma_tau^2)`,
//! then for each validation a true AUC `~ N(AUC_i, tau_i^2)` and an observed
//! AUC `~ N(true, se^2)` with `se` drawn from a configurable distribution.
//!
//! Observed AUCs must lie in (0, 1); a study whose draw falls outside is
//! redrawn (true and observed value together) and the redraw is counted.
//!
//! Every CPM gets its own ChaCha stream keyed by `(seed, cpm index)`, so the
//! output does not depend on generation order or thread count.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CpmSeries, HyperParams, ValidationStudy};

const MAX_REDRAWS: usize = 1000;

/// Generating hyperparameters. Unlike [`HyperParams`], zero spreads are
/// allowed here to produce degenerate registries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratingParams {
    pub mu_auc: f64,
    pub sigma_auc: f64,
    pub mu_tau: f64,
    pub sigma_tau: f64,
}

impl From<HyperParams> for GeneratingParams {
    fn from(hp: HyperParams) -> Self {
        Self {
            mu_auc: hp.mu_auc,
            sigma_auc: hp.sigma_auc,
            mu_tau: hp.mu_tau,
            sigma_tau: hp.sigma_tau,
        }
    }
}

/// Discrete distribution of validations per CPM, as `(k, weight)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KDistribution(pub Vec<(u32, f64)>);

impl KDistribution {
    /// Median 2, quartiles 1 and 3.
    pub fn registry_like() -> Self {
        KDistribution(vec![(1, 0.4), (2, 0.2), (3, 0.2), (5, 0.2)])
    }

    pub fn uniform(lo: u32, hi: u32) -> Self {
        KDistribution((lo..=hi).map(|k| (k, 1.0)).collect())
    }

    fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::invalid("k distribution is empty"));
        }
        if self.0.iter().any(|&(k, w)| k == 0 || !(w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("k distribution needs k >= 1 and finite nonnegative weights"));
        }
        if self.0.iter().all(|&(_, w)| w == 0.0) {
            return Err(Error::invalid("k distribution has zero total weight"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeDistribution {
    LogNormal { median: f64, sigma_log: f64 },
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for SeDistribution {
    fn default() -> Self {
        SeDistribution::LogNormal {
            median: 0.03,
            sigma_log: 0.4,
        }
    }
}

impl SeDistribution {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SeDistribution::LogNormal { median, sigma_log } => {
                median > 0.0 && median.is_finite() && sigma_log >= 0.0 && sigma_log.is_finite()
            }
            SeDistribution::Fixed { value } => value > 0.0 && value.is_finite(),
            SeDistribution::Uniform { low, high } => low > 0.0 && high >= low && high.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("standard errors must be positive: {self:?}")))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            SeDistribution::LogNormal { median, sigma_log } => LogNormal::new(median.ln(), sigma_log)
                .expect("validated")
                .sample(rng),
            SeDistribution::Fixed { value } => value,
            SeDistribution::Uniform { low, high } => {
                if high > low {
                    Uniform::new(low, high).expect("validated").sample(rng)
                } else {
                    low
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub hp: GeneratingParams,
    pub n_cpms: usize,
    pub k_distribution: KDistribution,
    #[serde(default)]
    pub se_distribution: SeDistribution,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let hp = &self.hp;
        if !(hp.mu_auc.is_finite() && hp.mu_tau.is_finite()) {
            return Err(Error::invalid("generating means must be finite"));
        }
        if !(hp.sigma_auc >= 0.0 && hp.sigma_auc.is_finite() && hp.sigma_tau >= 0.0 && hp.sigma_tau.is_finite()) {
            return Err(Error::invalid("generating spreads must be finite and nonnegative"));
        }
        if self.n_cpms == 0 {
            return Err(Error::invalid("n_cpms must be positive"));
        }
        self.k_distribution.validate()?;
        self.se_distribution.validate()
    }
}

/// Latent values behind one simulated CPM.
#[derive(Debug, Clone, PartialEq)]
pub struct CpmTruth {
    pub cpm_label: String,
    pub auc: f64,
    pub tau: f64,
    /// True AUC in each validation setting, in sequence order.
    pub study_aucs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRegistry {
    pub registry: Vec<CpmSeries>,
    pub truth: Vec<CpmTruth>,
    /// Study draws discarded because the observed AUC fell outside (0, 1).
    pub rejected_draws: usize,
}

pub fn cpm_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn generate_registry(config: &SimConfig) -> Result<SimRegistry> {
    config.validate()?;
    let ks: Vec<u32> = config.k_distribution.0.iter().map(|p| p.0).collect();
    let picker = WeightedIndex::new(config.k_distribution.0.iter().map(|p| p.1))
        .map_err(|e| Error::invalid(format!("k distribution: {e}")))?;
    let hp = config.hp;
    let auc_dist = Normal::new(hp.mu_auc, hp.sigma_auc).map_err(|e| Error::invalid(e.to_string()))?;
    let tau_dist = LogNormal::new(hp.mu_tau, hp.sigma_tau).map_err(|e| Error::invalid(e.to_string()))?;

    let width = config.n_cpms.to_string().len().max(4);
    let generated: Vec<Result<(CpmSeries, CpmTruth, usize)>> = (0..config.n_cpms)
        .into_par_iter()
        .map(|i| {
            let mut rng = cpm_rng(config.seed, i as u64);
            let k = ks[picker.sample(&mut rng)];
            let auc = auc_dist.sample(&mut rng);
            let tau = tau_dist.sample(&mut rng);
            let label = format!("sim{:0width$}", i + 1);
            let mut studies = Vec::with_capacity(k as usize);
            let mut study_aucs = Vec::with_capacity(k as usize);
            let mut rejected = 0usize;
            for j in 0..k {
                let se = config.se_distribution.sample(&mut rng);
                let mut attempts = 0;
                let (true_auc, observed) = loop {
                    let z1: f64 = rng.sample(rand_distr::StandardNormal);
                    let z2: f64 = rng.sample(rand_distr::StandardNormal);
                    let true_auc = auc + tau * z1;
                    let observed = true_auc + se * z2;
                    if observed > 0.0 && observed < 1.0 {
                        break (true_auc, observed);
                    }
                    attempts += 1;
                    if attempts >= MAX_REDRAWS {
                        return Err(Error::invalid(format!(
                            "{label}: study {} kept falling outside (0, 1); CPM mean AUC {auc}",
                            j + 1
                        )));
                    }
                };
                rejected += attempts;
                study_aucs.push(true_auc);
                studies.push(ValidationStudy::anonymous(j, observed, se)?);
            }
            let series = CpmSeries::new(label.clone(), None, studies)?;
            Ok((
                series,
                CpmTruth {
                    cpm_label: label,
                    auc,
                    tau,
                    study_aucs,
                },
                rejected,
            ))
        })
        .collect();

    let mut registry = Vec::with_capacity(config.n_cpms);
    let mut truth = Vec::with_capacity(config.n_cpms);
    let mut rejected_draws = 0;
    for g in generated {
        let (s, t, r) = g?;
        registry.push(s);
        truth.push(t);
        rejected_draws += r;
    }
    Ok(SimRegistry {
        registry,
        truth,
        rejected_draws,
    })
}
