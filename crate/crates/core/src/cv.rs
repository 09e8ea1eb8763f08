//! Leave-one-study-out cross-validation of the pooling methods.
//!
//! For every CPM with at least `n + 1` validations, the method is fitted to the
//! first `n` studies and asked for the observed AUC of study `n + 1` (whose
//! standard error it is given). Records carry the point prediction, the
//! observed-AUC interval, and whether the interval covered the actual value.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::bayes::{fit_hyperparams, posterior_from_studies, PriorMode};
use crate::error::{Error, Result};
use crate::format::sig6;
use crate::freq::Estimator;
use crate::intervals::{pi_observed_next, BayesSpread, Pooled};
use crate::model::{tau_bar, CpmSeries, HyperParams, Method, PredictionInterval, ValidationStudy};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRecord {
    pub cpm_label: String,
    pub n_used: usize,
    pub method: Method,
    pub predicted: f64,
    pub interval: PredictionInterval,
    pub actual: f64,
    pub covered: bool,
    pub error: f64,
}

/// Which prefix of each series is used for prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Holdout {
    /// Exactly the first `n` studies predict study `n + 1`.
    Exact(usize),
    /// CPMs with more than `n` studies: all but the last predict the last.
    AtLeast(usize),
}

impl Holdout {
    fn split(self, series: &CpmSeries) -> Option<(&[ValidationStudy], &ValidationStudy)> {
        let k = series.len();
        match self {
            Holdout::Exact(n) if k > n => Some((series.first(n), &series.studies()[n])),
            Holdout::AtLeast(n) if k > n => Some((series.first(k - 1), &series.studies()[k - 1])),
            _ => None,
        }
    }

    pub fn n(self) -> usize {
        match self {
            Holdout::Exact(n) | Holdout::AtLeast(n) => n,
        }
    }
}

/// Where Bayes and fixed-tau methods get their hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorSource<'a> {
    /// Fitted once on the whole registry.
    Shared(&'a HyperParams),
    /// Refitted for each evaluated CPM on the registry without it.
    ExcludeEvaluated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub level: f64,
    pub spread: BayesSpread,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            level: 0.95,
            spread: BayesSpread::Predictive,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub records: Vec<CvRecord>,
    /// CPMs without enough validations for this holdout.
    pub skipped: usize,
}

/// Leave-one-study-out evaluation at a fixed `n` with a shared prior.
///
/// `hp` is required for the Bayes methods (the prior) and for
/// [`Method::ReFixedTau`] (whose tau is the prior mean of tau).
pub fn loso_eval(
    registry: &[CpmSeries],
    n: usize,
    method: Method,
    hp: Option<&HyperParams>,
) -> Result<CvOutcome> {
    let prior = hp.map(PriorSource::Shared);
    loso_eval_with(registry, Holdout::Exact(n), method, prior, &CvOptions::default())
}

pub fn loso_eval_with(
    registry: &[CpmSeries],
    holdout: Holdout,
    method: Method,
    prior: Option<PriorSource<'_>>,
    opts: &CvOptions,
) -> Result<CvOutcome> {
    if holdout.n() == 0 {
        return Err(Error::invalid("cross-validation needs n >= 1"));
    }
    let needs_prior = method.is_bayes() || method == Method::ReFixedTau;
    if needs_prior && prior.is_none() {
        return Err(Error::invalid(format!("{method} needs hyperparameters")));
    }
    let refit_mode = match method {
        Method::BayesFull => PriorMode::Full,
        _ => PriorMode::Flat,
    };

    let eligible: Vec<usize> = (0..registry.len())
        .filter(|&i| holdout.split(&registry[i]).is_some())
        .collect();
    let skipped = registry.len() - eligible.len();

    let mut records: Vec<CvRecord> = eligible
        .par_iter()
        .map(|&i| {
            let series = &registry[i];
            let (train, next) = holdout.split(series).expect("eligible");
            let refitted;
            let hp = match prior {
                Some(PriorSource::Shared(hp)) => Some(hp),
                Some(PriorSource::ExcludeEvaluated) if needs_prior => {
                    let rest: Vec<CpmSeries> = registry
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, s)| s.clone())
                        .collect();
                    refitted = fit_hyperparams(&rest, refit_mode)?.hyper_params();
                    Some(&refitted)
                }
                _ => None,
            };
            let interval = predict_next(train, next.se(), method, hp, opts)?;
            let actual = next.auc();
            Ok(CvRecord {
                cpm_label: series.label().to_string(),
                n_used: train.len(),
                method,
                predicted: interval.center,
                covered: interval.contains(actual),
                error: interval.center - actual,
                interval,
                actual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.cpm_label.cmp(&b.cpm_label));
    Ok(CvOutcome { records, skipped })
}

/// Observed-AUC interval for the next study from a training prefix.
pub fn predict_next(
    train: &[ValidationStudy],
    s_next: f64,
    method: Method,
    hp: Option<&HyperParams>,
    opts: &CvOptions,
) -> Result<PredictionInterval> {
    let need_hp = || hp.ok_or_else(|| Error::invalid(format!("{method} needs hyperparameters")));
    let estimator = match method {
        Method::Fe => Estimator::Fe,
        Method::ReReml => Estimator::Reml,
        Method::ReDl => Estimator::Dl,
        Method::ReSj => Estimator::Sj,
        Method::ReFixedTau => Estimator::FixedTau(tau_bar(need_hp()?)),
        Method::BayesFlat | Method::BayesFull => {
            let post = posterior_from_studies(train, need_hp()?)?;
            return pi_observed_next(Pooled::Bayes(&post, opts.spread), s_next, opts.level);
        }
    };
    let fit = estimator.fit(train)?;
    pi_observed_next(&fit, s_next, opts.level)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub coverage: f64,
    /// Binomial standard error `sqrt(p (1 - p) / N)`.
    pub se: f64,
    pub n: usize,
}

pub fn coverage(records: &[CvRecord]) -> Result<Coverage> {
    if records.is_empty() {
        return Err(Error::invalid("coverage of an empty record set"));
    }
    let n = records.len();
    let p = records.iter().filter(|r| r.covered).count() as f64 / n as f64;
    Ok(Coverage {
        coverage: p,
        se: (p * (1.0 - p) / n as f64).sqrt(),
        n,
    })
}

pub fn rmse(records: &[CvRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("RMSE of an empty record set"));
    }
    let mse = records.iter().map(|r| r.error * r.error).sum::<f64>() / records.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountHistogram {
    /// Number of CPMs by number of validations.
    pub counts: BTreeMap<usize, usize>,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
}

/// CPMs by validation count, with median and quartiles (linear
/// interpolation between order statistics).
pub fn validation_count_histogram(registry: &[CpmSeries]) -> CountHistogram {
    let mut counts = BTreeMap::new();
    let mut ks: Vec<usize> = registry.iter().map(CpmSeries::len).collect();
    for &k in &ks {
        *counts.entry(k).or_insert(0) += 1;
    }
    ks.sort_unstable();
    let q = |p: f64| quantile_sorted(&ks, p);
    CountHistogram {
        counts,
        median: q(0.5),
        q1: q(0.25),
        q3: q(0.75),
    }
}

fn quantile_sorted(sorted: &[usize], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] as f64 + (h - lo as f64) * (sorted[hi] as f64 - sorted[lo] as f64))
}

/// Per-(holdout, method) summary line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvSummary {
    pub holdout: Holdout,
    pub method: Method,
    pub records: usize,
    pub skipped: usize,
    pub coverage: Option<f64>,
    pub coverage_se: Option<f64>,
    pub rmse: Option<f64>,
}

pub fn summarize(holdout: Holdout, method: Method, outcome: &CvOutcome) -> CvSummary {
    let cov = coverage(&outcome.records).ok();
    CvSummary {
        holdout,
        method,
        records: outcome.records.len(),
        skipped: outcome.skipped,
        coverage: cov.map(|c| c.coverage),
        coverage_se: cov.map(|c| c.se),
        rmse: rmse(&outcome.records).ok(),
    }
}

/// Record table as CSV, numbers at six significant digits.
pub fn write_records_csv<W: Write>(writer: W, records: &[CvRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "cpm_id", "n_used", "method", "predicted", "lower", "upper", "actual", "covered", "error",
    ])?;
    for r in records {
        w.write_record([
            r.cpm_label.clone(),
            r.n_used.to_string(),
            r.method.tag().to_string(),
            sig6(r.predicted),
            sig6(r.interval.lower),
            sig6(r.interval.upper),
            sig6(r.actual),
            r.covered.to_string(),
            sig6(r.error),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
