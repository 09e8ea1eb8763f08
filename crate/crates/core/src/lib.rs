//! Meta-analysis of external-validation AUCs of clinical prediction models.
//!
//! The crate pools the validation AUCs of each model by fixed effects,
//! random effects (REML, DerSimonian-Laird, Sidik-Jonkman, or a supplied
//! heterogeneity), or empirical Bayes with registry-wide priors on the mean
//! AUC and the between-study standard deviation `tau`. It builds prediction
//! intervals for the AUC in a new setting and evaluates all methods by
//! leave-one-study-out cross-validation.
//!
//! ```
//! use aucmeta::{fe_pool, pi_true_next, CpmSeries};
//!
//! let series = CpmSeries::from_pairs("demo", &[(0.70, 0.02), (0.80, 0.04)])?;
//! let fe = fe_pool(series.studies())?;
//! assert!((fe.pooled - 0.72).abs() < 1e-12);
//! let pi = pi_true_next(&fe, 0.95)?;
//! assert!(pi.lower < 0.72 && pi.upper > 0.72);
//! # Ok::<(), aucmeta::Error>(())
//! ```

pub mod bayes;
pub mod cv;
pub mod error;
pub mod format;
pub mod freq;
pub mod intervals;
pub mod model;
pub mod optim;
pub mod quadrature;
pub mod registry;
pub mod sim;

pub use bayes::{
    fit_hyperparams, marginal_loglik_cpm, posterior_pooled, PosteriorSummary, PriorFit, PriorMode,
};
pub use cv::{coverage, loso_eval, rmse, validation_count_histogram, CvRecord};
pub use error::{Error, ErrorKind, Result};
pub use freq::{cumulative_meta, dl_tau, fe_pool, re_pool, reml_tau, sj_tau, Estimator};
pub use intervals::{pi_observed_next, pi_true_next, BayesSpread, Pooled};
pub use model::{
    lognormal_mean_var, loglik_series_given_tau, tau_bar, CpmSeries, HyperParams, IntervalTarget,
    MetaResult, Method, PredictionInterval, TauNote, ValidationStudy,
};
pub use registry::{parse_registry, read_registry, write_registry, ColumnMap, FilterReport, Registry};
pub use sim::{generate_registry, SimConfig, SimRegistry};
