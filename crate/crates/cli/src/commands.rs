use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use aucmeta::bayes::{posterior_from_studies, PosteriorSummary};
use aucmeta::cv::{
    loso_eval_with, summarize, validation_count_histogram, write_records_csv, CountHistogram, CvOptions, CvRecord,
    CvSummary, Holdout, PriorSource,
};
use aucmeta::format::sig6;
use aucmeta::intervals::confidence_interval;
use aucmeta::model::z_for_level;
use aucmeta::registry::write_truth;
use aucmeta::{
    fit_hyperparams, generate_registry, parse_registry, pi_observed_next, pi_true_next, write_registry, BayesSpread,
    ColumnMap, CpmSeries, Estimator, HyperParams, MetaResult, Method, Pooled, PredictionInterval, PriorFit, PriorMode,
    Registry, SimConfig,
};
use serde::Serialize;

use crate::forest::{self, ForestRow};
use crate::{Cmd, InputArgs, MethodArgs, UsageError};

pub fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::FitPrior { input, mode, out } => fit_prior(&input, mode, out.as_deref()),
        Cmd::Meta {
            input,
            cpm,
            method,
            s_next,
            csv,
            json,
            svg,
        } => meta(&input, &cpm, &method, s_next, csv.as_deref(), json.as_deref(), svg.as_deref()),
        Cmd::Cumulative {
            input,
            cpm,
            method,
            s_next,
            out,
        } => cumulative(&input, &cpm, &method, s_next, out.as_deref()),
        Cmd::Cv {
            input,
            n,
            methods,
            prior,
            strict_loo,
            level,
            spread,
            records,
            summary,
        } => {
            let opts = CvOptions {
                level,
                spread: spread.into(),
            };
            cv(&input, &n.0, &methods, prior.as_deref(), strict_loo, &opts, records.as_deref(), summary.as_deref())
        }
        Cmd::Simulate { config, out, truth } => simulate(&config, &out, truth.as_deref()),
        Cmd::Report { input, prior, json } => report(&input, prior.as_deref(), json.as_deref()),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load(input: &InputArgs) -> Result<Registry> {
    let columns = ColumnMap::default().with_overrides(input.columns.iter().map(String::as_str))?;
    let reg = parse_registry(&input.input, &columns).with_context(|| format!("loading {}", input.input.display()))?;
    let r = &reg.report;
    eprintln!(
        "read {} rows / {} CPMs; kept {} validations / {} CPMs (dropped {})",
        r.rows_in,
        r.cpms_in,
        r.rows_surviving,
        r.cpms_surviving,
        r.dropped.total()
    );
    Ok(reg)
}

fn read_prior(path: &Path) -> Result<PriorFit> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading prior {}", path.display()))?;
    PriorFit::from_json(&text).with_context(|| format!("parsing prior {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn find_cpm<'a>(reg: &'a Registry, id: &str) -> Result<&'a CpmSeries> {
    reg.series
        .iter()
        .find(|s| s.label() == id)
        .ok_or_else(|| usage(format!("CPM '{id}' not found in the registry")))
}

/// Prior mode fitted on the input when a method needs hyperparameters and
/// none were supplied.
fn default_mode(method: Method) -> PriorMode {
    if method == Method::BayesFull {
        PriorMode::Full
    } else {
        PriorMode::Flat
    }
}

/// Priors fitted on demand, at most once per mode.
struct Priors<'a> {
    registry: &'a [CpmSeries],
    given: Option<PriorFit>,
    fitted: HashMap<PriorMode, PriorFit>,
}

impl<'a> Priors<'a> {
    fn new(registry: &'a [CpmSeries], path: Option<&Path>) -> Result<Self> {
        Ok(Self {
            registry,
            given: path.map(read_prior).transpose()?,
            fitted: HashMap::new(),
        })
    }

    fn for_method(&mut self, method: Method) -> Result<HyperParams> {
        if let Some(p) = &self.given {
            return Ok(p.hyper_params());
        }
        self.fit(default_mode(method)).map(|f| f.hyper_params())
    }

    fn fit(&mut self, mode: PriorMode) -> Result<PriorFit> {
        if let Some(f) = self.fitted.get(&mode) {
            return Ok(*f);
        }
        eprintln!("fitting {mode} prior on the input registry");
        let f = fit_hyperparams(self.registry, mode).context("fitting prior")?;
        self.fitted.insert(mode, f);
        Ok(f)
    }
}

fn needs_prior(method: Method) -> bool {
    method.is_bayes() || method == Method::ReFixedTau
}

fn check_method_flags(m: &MethodArgs) -> Result<()> {
    if m.tau.is_some() && m.method != Method::ReFixedTau {
        return Err(usage(format!("--tau only applies to fixed-tau, not {}", m.method.cli_name())));
    }
    if let Some(t) = m.tau {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(usage(format!("--tau {t} must be finite and nonnegative")));
        }
    }
    if m.prior.is_some() && !needs_prior(m.method) {
        return Err(usage(format!("--prior does not apply to {}", m.method.cli_name())));
    }
    z_for_level(m.level)?;
    Ok(())
}

fn check_s_next(s_next: Option<f64>) -> Result<()> {
    match s_next {
        Some(s) if !(s > 0.0 && s.is_finite()) => Err(usage(format!("--s-next {s} must be positive"))),
        _ => Ok(()),
    }
}

/// Pooled result of one prefix under the chosen method.
enum Fit {
    Meta(MetaResult),
    Bayes(PosteriorSummary, BayesSpread),
}

impl Fit {
    fn pooled(&self) -> Pooled<'_> {
        match self {
            Fit::Meta(r) => Pooled::Meta(r),
            Fit::Bayes(p, s) => Pooled::Bayes(p, *s),
        }
    }

    /// Centre and standard error of the pooled mean.
    fn center_se(&self) -> (f64, f64) {
        match self {
            Fit::Meta(r) => (r.pooled, r.pooled_se),
            Fit::Bayes(p, _) => (p.auc_post, p.sd_post),
        }
    }

    fn tau(&self) -> f64 {
        match self {
            Fit::Meta(r) => r.tau,
            Fit::Bayes(p, _) => p.tau_post_mean,
        }
    }
}

/// Resolves method flags into a pooling rule for prefixes of a series.
struct Pooler {
    method: Method,
    estimator: Option<Estimator>,
    hp: Option<HyperParams>,
    spread: BayesSpread,
}

impl Pooler {
    fn new(args: &MethodArgs, registry: &[CpmSeries]) -> Result<Self> {
        check_method_flags(args)?;
        let mut priors = Priors::new(registry, args.prior.as_deref())?;
        let hp = match (args.method, args.tau) {
            (Method::ReFixedTau, Some(_)) => None,
            (m, _) if needs_prior(m) => Some(priors.for_method(m)?),
            _ => None,
        };
        let estimator = match args.method {
            Method::Fe => Some(Estimator::Fe),
            Method::ReReml => Some(Estimator::Reml),
            Method::ReDl => Some(Estimator::Dl),
            Method::ReSj => Some(Estimator::Sj),
            Method::ReFixedTau => Some(Estimator::FixedTau(match args.tau {
                Some(t) => t,
                None => hp.expect("prior resolved").tau_bar(),
            })),
            Method::BayesFlat | Method::BayesFull => None,
        };
        Ok(Self {
            method: args.method,
            estimator,
            hp,
            spread: args.spread.into(),
        })
    }

    fn fit(&self, studies: &[aucmeta::ValidationStudy]) -> Result<Fit> {
        Ok(match self.estimator {
            Some(e) => Fit::Meta(e.fit(studies)?),
            None => Fit::Bayes(posterior_from_studies(studies, self.hp.as_ref().expect("bayes prior"))?, self.spread),
        })
    }
}

fn pct(level: f64) -> String {
    format!("{}%", (level * 1e4).round() / 100.0)
}

fn interval_text(pi: &PredictionInterval) -> String {
    let note = if pi.exceeds_unit_interval() { "  (extends outside (0, 1))" } else { "" };
    format!("[{}, {}]{note}", sig6(pi.lower), sig6(pi.upper))
}

#[derive(Serialize)]
struct MetaJson<'a> {
    cpm: &'a str,
    method: Method,
    level: f64,
    k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<&'a MetaResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    posterior: Option<&'a PosteriorSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prior: Option<HyperParams>,
    ci_lower: f64,
    ci_upper: f64,
    pi_true: PredictionInterval,
    #[serde(skip_serializing_if = "Option::is_none")]
    pi_observed: Option<PredictionInterval>,
    forest: &'a [ForestRow],
}

#[allow(clippy::too_many_arguments)]
fn meta(
    input: &InputArgs,
    cpm: &str,
    args: &MethodArgs,
    s_next: Option<f64>,
    csv_out: Option<&Path>,
    json_out: Option<&Path>,
    svg_out: Option<&Path>,
) -> Result<()> {
    check_method_flags(args)?;
    check_s_next(s_next)?;
    let reg = load(input)?;
    let series = find_cpm(&reg, cpm)?;
    let pooler = Pooler::new(args, &reg.series)?;
    let fit = pooler.fit(series.studies())?;
    let level = args.level;
    let pi_true = pi_true_next(fit.pooled(), level)?;
    let pi_obs = s_next.map(|s| pi_observed_next(fit.pooled(), s, level)).transpose()?;
    let (center, se) = fit.center_se();
    let (ci_lower, ci_upper) = match &fit {
        Fit::Meta(r) => confidence_interval(r, level)?,
        Fit::Bayes(..) => {
            let z = z_for_level(level)?;
            (center - z * se, center + z * se)
        }
    };

    let mut out = std::io::stdout().lock();
    writeln!(out, "CPM {}: {} validations, method {}", series.label(), series.len(), pooler.method)?;
    writeln!(out, "pooled AUC     {}  (se {})", sig6(center), sig6(se))?;
    match &fit {
        Fit::Meta(r) => {
            let note = r.tau_note.map(|n| format!("  ({})", serde_json::to_value(n).unwrap().as_str().unwrap_or(""))).unwrap_or_default();
            writeln!(out, "tau            {}{note}", sig6(r.tau))?;
        }
        Fit::Bayes(p, _) => {
            writeln!(out, "posterior E(tau) {}  E(tau^2) {}", sig6(p.tau_post_mean), sig6(p.tau2_post_mean))?;
            writeln!(out, "predictive sd  {}", sig6(p.predictive_sd))?;
        }
    }
    let l = pct(level);
    let ci_name = if pooler.method.is_bayes() { "credible interval" } else { "CI" };
    writeln!(out, "{l} {ci_name} for the pooled AUC: [{}, {}]", sig6(ci_lower), sig6(ci_upper))?;
    writeln!(out, "{l} PI, true AUC in a new setting: {}", interval_text(&pi_true))?;
    if let (Some(pi), Some(s)) = (&pi_obs, s_next) {
        writeln!(out, "{l} PI, observed AUC with se {}: {}", sig6(s), interval_text(pi))?;
    }

    let rows = forest::rows(series, level, (center, se, ci_lower, ci_upper), &pi_true, pi_obs.as_ref())?;
    writeln!(out)?;
    forest::write_table(&mut out, &rows)?;
    if let Some(p) = csv_out {
        let mut w = create(p)?;
        forest::write_csv(&mut w, &rows)?;
        w.flush()?;
    }
    if let Some(p) = json_out {
        let doc = MetaJson {
            cpm: series.label(),
            method: pooler.method,
            level,
            k: series.len(),
            result: match &fit {
                Fit::Meta(r) => Some(r),
                _ => None,
            },
            posterior: match &fit {
                Fit::Bayes(p, _) => Some(p),
                _ => None,
            },
            prior: pooler.hp,
            ci_lower,
            ci_upper,
            pi_true,
            pi_observed: pi_obs,
            forest: &rows,
        };
        write_json(p, &doc)?;
    }
    if let Some(p) = svg_out {
        let title = format!("{} ({}, {} validations)", series.label(), pooler.method, series.len());
        std::fs::write(p, forest::svg(&title, &rows)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cumulative(input: &InputArgs, cpm: &str, args: &MethodArgs, s_next: Option<f64>, out_path: Option<&Path>) -> Result<()> {
    check_method_flags(args)?;
    check_s_next(s_next)?;
    let reg = load(input)?;
    let series = find_cpm(&reg, cpm)?;
    let pooler = Pooler::new(args, &reg.series)?;

    let mut header = vec!["k", "pooled", "se", "tau", "pi_lower", "pi_upper"];
    if s_next.is_some() {
        header.extend(["obs_lower", "obs_upper"]);
    }
    let mut table = Vec::new();
    for k in 1..=series.len() {
        let fit = pooler.fit(series.first(k))?;
        let pi = pi_true_next(fit.pooled(), args.level)?;
        let (c, se) = fit.center_se();
        let mut row = vec![k.to_string(), sig6(c), sig6(se), sig6(fit.tau()), sig6(pi.lower), sig6(pi.upper)];
        if let Some(s) = s_next {
            let obs = pi_observed_next(fit.pooled(), s, args.level)?;
            row.extend([sig6(obs.lower), sig6(obs.upper)]);
        }
        table.push(row);
    }

    let mut out = std::io::stdout().lock();
    writeln!(out, "CPM {}: cumulative {} at {}", series.label(), pooler.method, pct(args.level))?;
    write_aligned(&mut out, &header, &table)?;
    if let Some(p) = out_path {
        let mut w = csv::Writer::from_writer(create(p)?);
        w.write_record(&header)?;
        for r in &table {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn write_aligned(out: &mut impl Write, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    writeln!(out, "{}", line(header.to_vec()))?;
    for r in rows {
        writeln!(out, "{}", line(r.iter().map(String::as_str).collect()))?;
    }
    Ok(())
}

fn holdout_text(h: Holdout) -> String {
    match h {
        Holdout::Exact(n) => n.to_string(),
        Holdout::AtLeast(n) => format!("{n}+"),
    }
}

fn write_histogram(out: &mut impl Write, h: &CountHistogram) -> std::io::Result<()> {
    let q = |x: Option<f64>| x.map(sig6).unwrap_or_else(|| "NA".into());
    writeln!(out, "validations per CPM: median {}, quartiles {} to {}", q(h.median), q(h.q1), q(h.q3))?;
    let rows: Vec<Vec<String>> = h.counts.iter().map(|(k, c)| vec![k.to_string(), c.to_string()]).collect();
    write_aligned(out, &["k", "cpms"], &rows)
}

#[derive(Serialize)]
struct CvJson<'a> {
    level: f64,
    spread: BayesSpread,
    strict_loo: bool,
    histogram: &'a CountHistogram,
    priors: Vec<(Method, HyperParams)>,
    results: &'a [CvSummary],
}

/// Summaries, all records, and the shared prior used per method.
type CvRun = (Vec<CvSummary>, Vec<CvRecord>, Vec<(Method, HyperParams)>);

/// Runs every (holdout, method) pair; prior-dependent methods share one
/// prior per mode unless `strict` asks for a refit per evaluated CPM.
fn run_cv(
    registry: &[CpmSeries],
    holdouts: &[Holdout],
    methods: &[Method],
    priors: &mut Priors<'_>,
    strict: bool,
    opts: &CvOptions,
) -> Result<CvRun> {
    let mut shared = Vec::new();
    for &m in methods {
        if needs_prior(m) && !strict {
            shared.push((m, priors.for_method(m)?));
        }
    }
    let mut summaries = Vec::new();
    let mut records = Vec::new();
    for &h in holdouts {
        for &m in methods {
            let hp = shared.iter().find(|(sm, _)| *sm == m).map(|(_, hp)| hp);
            let source = match (needs_prior(m), strict) {
                (false, _) => None,
                (true, true) => Some(PriorSource::ExcludeEvaluated),
                (true, false) => hp.map(PriorSource::Shared),
            };
            let outcome = loso_eval_with(registry, h, m, source, opts)
                .with_context(|| format!("cross-validating {} at n = {}", m.cli_name(), holdout_text(h)))?;
            summaries.push(summarize(h, m, &outcome));
            records.extend(outcome.records);
        }
    }
    Ok((summaries, records, shared))
}

fn write_cv_table(out: &mut impl Write, summaries: &[CvSummary]) -> std::io::Result<()> {
    let na = |x: Option<f64>| x.map(sig6).unwrap_or_else(|| "NA".into());
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                holdout_text(s.holdout),
                s.method.tag().to_string(),
                s.records.to_string(),
                na(s.coverage),
                na(s.coverage_se),
                na(s.rmse),
            ]
        })
        .collect();
    write_aligned(out, &["n", "method", "records", "coverage", "se", "rmse"], &rows)
}

#[allow(clippy::too_many_arguments)]
fn cv(
    input: &InputArgs,
    holdouts: &[Holdout],
    methods: &[Method],
    prior: Option<&Path>,
    strict: bool,
    opts: &CvOptions,
    records_out: Option<&Path>,
    summary_out: Option<&Path>,
) -> Result<()> {
    z_for_level(opts.level)?;
    if methods.is_empty() {
        return Err(usage("--methods is empty"));
    }
    if strict && prior.is_some() {
        return Err(usage("--strict-loo refits the prior per CPM and cannot take --prior"));
    }
    let reg = load(input)?;
    let mut priors = Priors::new(&reg.series, prior)?;
    let (summaries, records, shared) = run_cv(&reg.series, holdouts, methods, &mut priors, strict, opts)?;
    let hist = validation_count_histogram(&reg.series);

    let mut out = std::io::stdout().lock();
    writeln!(out, "leave-one-study-out, {} prediction intervals for the observed AUC", pct(opts.level))?;
    write_cv_table(&mut out, &summaries)?;
    writeln!(out)?;
    write_histogram(&mut out, &hist)?;

    if let Some(p) = records_out {
        let mut w = create(p)?;
        write_records_csv(&mut w, &records)?;
        w.flush()?;
    }
    if let Some(p) = summary_out {
        let doc = CvJson {
            level: opts.level,
            spread: opts.spread,
            strict_loo: strict,
            histogram: &hist,
            priors: shared,
            results: &summaries,
        };
        write_json(p, &doc)?;
    }
    Ok(())
}

fn simulate(config: &Path, out_path: &Path, truth_path: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg: SimConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let sim = generate_registry(&cfg)?;
    let mut w = create(out_path)?;
    write_registry(&mut w, &sim.registry)?;
    w.flush()?;
    if let Some(p) = truth_path {
        let mut w = create(p)?;
        write_truth(&mut w, &sim.registry, &sim.truth)?;
        w.flush()?;
    }
    let n_val: usize = sim.registry.iter().map(CpmSeries::len).sum();
    println!(
        "simulated {} CPMs, {n_val} validations (seed {}, {} out-of-range draws redrawn)",
        sim.registry.len(),
        cfg.seed,
        sim.rejected_draws
    );
    Ok(())
}

fn write_prior(out: &mut impl Write, fit: &PriorFit) -> std::io::Result<()> {
    writeln!(
        out,
        "prior fit ({} mode): {} CPMs, {} validations",
        fit.mode, fit.n_cpms, fit.n_validations
    )?;
    let fixed = |x: f64| match fit.mode {
        PriorMode::Flat => format!("{} (fixed)", sig6(x)),
        PriorMode::Full => sig6(x),
    };
    let rows = vec![
        vec!["mu_auc".into(), fixed(fit.mu_auc)],
        vec!["sigma_auc".into(), fixed(fit.sigma_auc)],
        vec!["mu_tau".into(), sig6(fit.mu_tau)],
        vec!["sigma_tau".into(), sig6(fit.sigma_tau)],
        vec!["E(tau)".into(), sig6(fit.hyper_params().tau_bar())],
        vec!["log-likelihood".into(), sig6(fit.loglik)],
    ];
    write_aligned(out, &["parameter", "estimate"], &rows)
}

fn fit_prior(input: &InputArgs, mode: PriorMode, out_path: Option<&Path>) -> Result<()> {
    let reg = load(input)?;
    let fit = fit_hyperparams(&reg.series, mode).context("fitting prior")?;
    write_prior(&mut std::io::stdout().lock(), &fit)?;
    if let Some(p) = out_path {
        std::fs::write(p, fit.to_json()? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportJson<'a> {
    input: &'a Path,
    filter: &'a aucmeta::FilterReport,
    histogram: &'a CountHistogram,
    priors: Vec<PriorFit>,
    tau_bar: f64,
    cv: &'a [CvSummary],
}

fn report(input: &InputArgs, prior: Option<&Path>, json_out: Option<&Path>) -> Result<()> {
    let reg = load(input)?;
    let mut priors = Priors::new(&reg.series, prior)?;
    let flat = priors.fit(PriorMode::Flat)?;
    let full = priors.fit(PriorMode::Full)?;
    let tau_bar = match &priors.given {
        Some(p) => p.hyper_params().tau_bar(),
        None => flat.hyper_params().tau_bar(),
    };
    let hist = validation_count_histogram(&reg.series);
    let holdouts: Vec<Holdout> = (1..=5).map(Holdout::Exact).collect();
    let (summaries, _, _) = run_cv(&reg.series, &holdouts, &Method::ALL, &mut priors, false, &CvOptions::default())?;

    let mut out = std::io::stdout().lock();
    let r = &reg.report;
    writeln!(out, "registry {}", input.input.display())?;
    writeln!(out, "rows read {} ({} CPMs), kept {} ({} CPMs)", r.rows_in, r.cpms_in, r.rows_surviving, r.cpms_surviving)?;
    let d = &r.dropped;
    writeln!(
        out,
        "dropped: missing auc {}, missing se {}, se <= 0 {}, auc outside (0, 1) {}",
        d.missing_auc, d.missing_se, d.nonpositive_se, d.auc_out_of_range
    )?;
    writeln!(out)?;
    write_histogram(&mut out, &hist)?;
    writeln!(out)?;
    write_prior(&mut out, &flat)?;
    writeln!(out)?;
    write_prior(&mut out, &full)?;
    writeln!(out)?;
    writeln!(out, "tau_bar (fixed-tau heterogeneity) {}", sig6(tau_bar))?;
    writeln!(out)?;
    writeln!(out, "leave-one-study-out, 95% prediction intervals for the observed AUC")?;
    write_cv_table(&mut out, &summaries)?;

    if let Some(p) = json_out {
        let doc = ReportJson {
            input: &input.input,
            filter: &reg.report,
            histogram: &hist,
            priors: vec![flat, full],
            tau_bar,
            cv: &summaries,
        };
        write_json(p, &doc)?;
    }
    Ok(())
}
