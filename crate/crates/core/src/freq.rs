//! Inverse-variance pooling and between-study heterogeneity estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CpmSeries, MetaResult, Method, TauNote, ValidationStudy};
use crate::optim::brent_minimize;

/// Upper end of the REML search range on the AUC scale.
pub const REML_TAU_MAX: f64 = 2.0;
pub const REML_XTOL: f64 = 1e-8;
pub const REML_MAX_ITER: usize = 500;

/// Coarse scan resolution used to bracket the restricted-likelihood maximum.
const REML_SCAN_POINTS: usize = 400;

fn weighted_mean(studies: &[ValidationStudy], tau: f64) -> (f64, f64) {
    let t2 = tau * tau;
    let (mut sw, mut swy) = (0.0, 0.0);
    for s in studies {
        let w = 1.0 / (s.variance() + t2);
        sw += w;
        swy += w * s.auc();
    }
    (swy / sw, sw)
}

fn require_nonempty(studies: &[ValidationStudy]) -> Result<()> {
    if studies.is_empty() {
        Err(Error::invalid("cannot pool an empty list of studies"))
    } else {
        Ok(())
    }
}

fn require_two(studies: &[ValidationStudy], what: &str) -> Result<()> {
    if studies.len() < 2 {
        Err(Error::InsufficientData(format!(
            "{what} needs at least 2 studies, got {}",
            studies.len()
        )))
    } else {
        Ok(())
    }
}

/// Fixed-effects pooling with weights `1/se^2`.
pub fn fe_pool(studies: &[ValidationStudy]) -> Result<MetaResult> {
    require_nonempty(studies)?;
    let (pooled, sw) = weighted_mean(studies, 0.0);
    Ok(MetaResult {
        pooled,
        pooled_se: sw.sqrt().recip(),
        tau: 0.0,
        method: Method::Fe,
        k: studies.len(),
        tau_note: None,
    })
}

/// Random-effects pooling at a supplied heterogeneity `tau`.
pub fn re_pool(studies: &[ValidationStudy], tau: f64) -> Result<MetaResult> {
    require_nonempty(studies)?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("tau {tau} must be finite and nonnegative")));
    }
    let (pooled, sw) = weighted_mean(studies, tau);
    Ok(MetaResult {
        pooled,
        pooled_se: sw.sqrt().recip(),
        tau,
        method: Method::ReFixedTau,
        k: studies.len(),
        tau_note: None,
    })
}

/// DerSimonian-Laird moment estimate with its truncation flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlEstimate {
    pub tau: f64,
    pub q: f64,
    /// `true` when the raw moment estimate of tau^2 was negative.
    pub truncated: bool,
}

pub fn dl_estimate(studies: &[ValidationStudy]) -> Result<DlEstimate> {
    require_two(studies, "DerSimonian-Laird")?;
    let (mean, sw) = weighted_mean(studies, 0.0);
    let mut q = 0.0;
    let mut sw2 = 0.0;
    for s in studies {
        let w = 1.0 / s.variance();
        q += w * (s.auc() - mean).powi(2);
        sw2 += w * w;
    }
    let df = (studies.len() - 1) as f64;
    let raw = (q - df) / (sw - sw2 / sw);
    Ok(DlEstimate {
        tau: raw.max(0.0).sqrt(),
        q,
        truncated: raw <= 0.0,
    })
}

/// DerSimonian-Laird heterogeneity, truncated at zero.
pub fn dl_tau(studies: &[ValidationStudy]) -> Result<f64> {
    dl_estimate(studies).map(|e| e.tau)
}

/// Restricted log-likelihood of the random-effects model at `tau`.
pub fn reml_loglik(studies: &[ValidationStudy], tau: f64) -> f64 {
    let t2 = tau * tau;
    let (mean, sw) = weighted_mean(studies, tau);
    let mut ll = -0.5 * sw.ln();
    for s in studies {
        let v = s.variance() + t2;
        ll -= 0.5 * (v.ln() + (s.auc() - mean).powi(2) / v);
    }
    ll
}

/// REML estimate of tau on `[0, 2]`.
///
/// A coarse scan brackets the global maximum; Brent's method refines it to
/// `REML_XTOL`. The `tau = 0` boundary is accepted when it beats the interior.
pub fn reml_tau(studies: &[ValidationStudy]) -> Result<f64> {
    reml_fit(studies).map(|(tau, _)| tau)
}

fn reml_fit(studies: &[ValidationStudy]) -> Result<(f64, bool)> {
    require_two(studies, "REML")?;
    let grid = reml_scan_grid(studies);
    let values: Vec<f64> = grid.iter().map(|&t| reml_loglik(studies, t)).collect();
    let (best, _) = values
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let refined = brent_minimize(|t| -reml_loglik(studies, t), lo, hi, REML_XTOL, REML_MAX_ITER)?;
    let at_zero = reml_loglik(studies, 0.0);
    if at_zero >= -refined.fx {
        return Ok((0.0, true));
    }
    Ok((polish_reml(studies, refined.x), false))
}

/// Derivative of the restricted log-likelihood with respect to `tau^2`.
fn reml_score(studies: &[ValidationStudy], tau2: f64) -> f64 {
    let (mean, sw) = weighted_mean(studies, tau2.sqrt());
    let (mut sw_sq, mut sw_sq_r2) = (0.0, 0.0);
    for s in studies {
        let w = 1.0 / (s.variance() + tau2);
        sw_sq += w * w;
        sw_sq_r2 += w * w * (s.auc() - mean).powi(2);
    }
    0.5 * (sw_sq_r2 - sw + sw_sq / sw)
}

/// Sharpens an interior maximum by bisecting the score around it. The
/// likelihood is flat at the top, so the score root is far better
/// conditioned than the maximum itself.
fn polish_reml(studies: &[ValidationStudy], tau: f64) -> f64 {
    let delta = 10.0 * REML_XTOL;
    let mut lo = (tau - delta).max(0.0).powi(2);
    let mut hi = (tau + delta).powi(2);
    let (g_lo, g_hi) = (reml_score(studies, lo), reml_score(studies, hi));
    if !(g_lo > 0.0 && g_hi < 0.0) {
        return tau;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if reml_score(studies, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).sqrt()
}

/// Scan points: zero, then geometric from well below the smallest standard
/// error up to the search bound.
fn reml_scan_grid(studies: &[ValidationStudy]) -> Vec<f64> {
    let smin = studies.iter().map(|s| s.se()).fold(f64::INFINITY, f64::min);
    let start = (smin * 1e-3).min(1e-4);
    let ratio = (REML_TAU_MAX / start).powf(1.0 / (REML_SCAN_POINTS - 1) as f64);
    let mut grid = Vec::with_capacity(REML_SCAN_POINTS + 1);
    grid.push(0.0);
    let mut t = start;
    for _ in 0..REML_SCAN_POINTS - 1 {
        grid.push(t);
        t *= ratio;
    }
    grid.push(REML_TAU_MAX);
    grid
}

/// Sidik-Jonkman two-step estimate of tau.
pub fn sj_tau(studies: &[ValidationStudy]) -> Result<f64> {
    require_two(studies, "Sidik-Jonkman")?;
    let k = studies.len() as f64;
    let ybar = studies.iter().map(|s| s.auc()).sum::<f64>() / k;
    let tau0_sq = studies.iter().map(|s| (s.auc() - ybar).powi(2)).sum::<f64>() / k;
    if tau0_sq <= 0.0 {
        return Err(Error::DegenerateData(
            "Sidik-Jonkman is undefined when all estimates are identical".into(),
        ));
    }
    let v: Vec<f64> = studies
        .iter()
        .map(|s| 1.0 / (s.variance() / tau0_sq + 1.0))
        .collect();
    let sv: f64 = v.iter().sum();
    let mu = studies.iter().zip(&v).map(|(s, w)| w * s.auc()).sum::<f64>() / sv;
    let tau_sq = studies
        .iter()
        .zip(&v)
        .map(|(s, w)| w * (s.auc() - mu).powi(2))
        .sum::<f64>()
        / (k - 1.0);
    Ok(tau_sq.sqrt())
}

/// A pooling rule applied to a prefix of a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Fe,
    Reml,
    Dl,
    Sj,
    FixedTau(f64),
}

impl Estimator {
    pub fn method(self) -> Method {
        match self {
            Estimator::Fe => Method::Fe,
            Estimator::Reml => Method::ReReml,
            Estimator::Dl => Method::ReDl,
            Estimator::Sj => Method::ReSj,
            Estimator::FixedTau(_) => Method::ReFixedTau,
        }
    }

    /// Pools `studies`. Estimators of tau that need two studies report
    /// `tau = 0` with [`TauNote::NotEstimable`] on a single study, and
    /// Sidik-Jonkman falls back to zero with [`TauNote::Degenerate`] when all
    /// estimates coincide.
    pub fn fit(self, studies: &[ValidationStudy]) -> Result<MetaResult> {
        require_nonempty(studies)?;
        let single = studies.len() < 2;
        let (tau, note) = match self {
            Estimator::Fe => return fe_pool(studies),
            Estimator::FixedTau(t) => return re_pool(studies, t),
            _ if single => (0.0, Some(TauNote::NotEstimable)),
            Estimator::Reml => {
                let (tau, boundary) = reml_fit(studies)?;
                (tau, boundary.then_some(TauNote::Boundary))
            }
            Estimator::Dl => {
                let e = dl_estimate(studies)?;
                (e.tau, e.truncated.then_some(TauNote::TruncatedAtZero))
            }
            Estimator::Sj => match sj_tau(studies) {
                Ok(t) => (t, None),
                Err(Error::DegenerateData(_)) => (0.0, Some(TauNote::Degenerate)),
                Err(e) => return Err(e),
            },
        };
        let mut r = re_pool(studies, tau)?;
        r.method = self.method();
        r.tau_note = note;
        Ok(r)
    }
}

/// Meta-analyses of the first 1, 2, ..., k studies of a series.
pub fn cumulative_meta(series: &CpmSeries, estimator: Estimator) -> Result<Vec<MetaResult>> {
    (1..=series.len())
        .map(|m| estimator.fit(series.first(m)))
        .collect()
}
