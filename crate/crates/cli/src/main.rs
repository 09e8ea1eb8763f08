//! `aucmeta` command-line tool.
//!
//! Exit status: 0 success, 2 usage error, 3 data error, 4 numeric failure.

mod commands;
mod forest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use aucmeta::cv::Holdout;
use aucmeta::{ErrorKind, Method, PriorMode};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aucmeta", version, about = "Meta-analysis of external-validation AUCs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit the registry-wide priors by marginal maximum likelihood.
    FitPrior {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value = "flat", value_parser = parse_mode)]
        mode: PriorMode,
        /// Prior JSON to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pool one CPM and print its intervals and forest-plot data.
    Meta {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        cpm: String,
        #[command(flatten)]
        method: MethodArgs,
        /// Standard error of the next study; adds the observed-AUC interval.
        #[arg(long)]
        s_next: Option<f64>,
        /// Forest-plot rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Full result as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Forest plot as SVG.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Interval bounds after the first 1, 2, ..., k studies of one CPM.
    Cumulative {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        cpm: String,
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long)]
        s_next: Option<f64>,
        /// Table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-study-out cross-validation.
    Cv {
        #[command(flatten)]
        input: InputArgs,
        /// Studies used for prediction: `3`, `1..5`, `1,3`, or `5+` (all but the
        /// last study of CPMs with more than 5).
        #[arg(long, default_value = "1..5", value_parser = parse_holdouts)]
        n: HoldoutList,
        /// Comma-separated methods.
        #[arg(long, default_value = "fe,reml,fixed-tau,bayes-flat,bayes-full", value_delimiter = ',', value_parser = parse_method)]
        methods: Vec<Method>,
        /// Prior JSON shared by the methods that need one; fitted on the input when absent.
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Refit the prior without the evaluated CPM for every prediction.
        #[arg(long)]
        strict_loo: bool,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, value_enum, default_value_t = SpreadArg::Predictive)]
        spread: SpreadArg,
        /// Per-prediction records as CSV.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Summary as JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Generate a synthetic registry.
    Simulate {
        /// Simulation config JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Latent CPM and study AUCs as CSV.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// One-shot summary of a registry.
    Report {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InputArgs {
    /// Registry CSV.
    #[arg(long)]
    input: PathBuf,
    /// Column mapping, e.g. `--columns auc=c_stat --columns se=c_se`.
    #[arg(long = "columns", value_name = "KEY=HEADER")]
    columns: Vec<String>,
}

#[derive(Args)]
struct MethodArgs {
    /// fe, reml, dl, sj, fixed-tau, bayes-flat, bayes-full (`bayes` is bayes-full).
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Heterogeneity for fixed-tau; defaults to the prior mean of tau.
    #[arg(long)]
    tau: Option<f64>,
    /// Prior JSON for fixed-tau and the Bayes methods; fitted on the input when absent.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_enum, default_value_t = SpreadArg::Predictive)]
    spread: SpreadArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpreadArg {
    Predictive,
    PosteriorSd,
}

impl From<SpreadArg> for aucmeta::BayesSpread {
    fn from(s: SpreadArg) -> Self {
        match s {
            SpreadArg::Predictive => aucmeta::BayesSpread::Predictive,
            SpreadArg::PosteriorSd => aucmeta::BayesSpread::PosteriorSd,
        }
    }
}

#[derive(Clone, Debug)]
struct HoldoutList(Vec<Holdout>);

fn parse_method(s: &str) -> Result<Method, String> {
    if s.trim().eq_ignore_ascii_case("bayes") {
        return Ok(Method::BayesFull);
    }
    s.parse().map_err(|e: aucmeta::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<PriorMode, String> {
    s.parse().map_err(|e: aucmeta::Error| e.to_string())
}

fn parse_holdouts(s: &str) -> Result<HoldoutList, String> {
    let count = |t: &str| -> Result<usize, String> {
        match t.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!("'{t}' is not a positive study count")),
        }
    };
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if let Some(n) = part.strip_suffix('+') {
            out.push(Holdout::AtLeast(count(n)?));
        } else if let Some((a, b)) = part.split_once("..") {
            let (a, b) = (count(a)?, count(b.trim_start_matches('='))?);
            if a > b {
                return Err(format!("empty range {part}"));
            }
            out.extend((a..=b).map(Holdout::Exact));
        } else {
            out.push(Holdout::Exact(count(part)?));
        }
    }
    Ok(HoldoutList(out))
}

/// A bad flag combination detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<aucmeta::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(aucmeta::Error::NumericFailure { diagnostics, .. }) =
                e.chain().find_map(|c| c.downcast_ref::<aucmeta::Error>())
            {
                for d in diagnostics {
                    eprintln!("  {d}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_syntax() {
        let h = parse_holdouts("1..3").unwrap().0;
        assert_eq!(h, vec![Holdout::Exact(1), Holdout::Exact(2), Holdout::Exact(3)]);
        let h = parse_holdouts("2, 5+").unwrap().0;
        assert_eq!(h, vec![Holdout::Exact(2), Holdout::AtLeast(5)]);
        assert!(parse_holdouts("0").is_err());
        assert!(parse_holdouts("4..2").is_err());
        assert!(parse_holdouts("x").is_err());
    }

    #[test]
    fn method_aliases() {
        assert_eq!(parse_method("bayes").unwrap(), Method::BayesFull);
        assert_eq!(parse_method("fixed-tau").unwrap(), Method::ReFixedTau);
        assert_eq!(parse_method("RE_REML").unwrap(), Method::ReReml);
        assert!(parse_method("ml").is_err());
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        let usage = anyhow::Error::new(UsageError("x".into()));
        assert_eq!(exit_code(&usage), 2);
        let data = anyhow::Error::new(aucmeta::Error::NoSurvivingRows { rows_in: 0 }).context("reading");
        assert_eq!(exit_code(&data), 3);
        let num = anyhow::Error::new(aucmeta::Error::NumericFailure {
            message: "m".into(),
            diagnostics: vec![],
        });
        assert_eq!(exit_code(&num), 4);
    }
}
