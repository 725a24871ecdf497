use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "crossconf", version, about = "Cross-conformal prediction sets and experiments")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo coverage and width study on simulated linear data.
    Simulate(SimulateArgs),
    /// Repeated random train/test evaluation on a CSV dataset.
    Run(RunArgs),
    /// Prediction sets for query rows given a training CSV.
    Predict(PredictArgs),
    /// Table of the cross-conformal coverage lower bounds.
    Bounds(BoundsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PValuesArg {
    Deterministic,
    Randomized,
}

/// Options shared by every command that builds prediction sets.
#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,

    /// Number of folds.
    #[arg(long, default_value_t = 5)]
    pub k: usize,

    /// Comma separated: mod, e-mod, u-mod, eu-mod, cross, e-cross, u-cross,
    /// eu-cross, split, split-2alpha, cv+.
    #[arg(long, default_value = "mod,e-mod,u-mod,eu-mod,cross")]
    pub methods: String,

    /// Master seed; falls back to CROSSCONF_SEED.
    #[arg(long, env = "CROSSCONF_SEED")]
    pub seed: Option<u64>,

    /// Draw a fresh seed from the OS when none is given.
    #[arg(long)]
    pub entropy: bool,

    /// ols, ridge:<lambda> or knn:<k>.
    #[arg(long, default_value = "ols")]
    pub regressor: String,

    /// equal or varying.
    #[arg(long, default_value = "equal")]
    pub fold_mode: String,

    #[arg(long, value_enum, default_value_t = ScoreArg::Residual)]
    pub score: ScoreArg,

    /// Feed the combiners randomized (tie-smoothed) fold p-values.
    #[arg(long, value_enum, default_value_t = PValuesArg::Deterministic)]
    pub pvalues: PValuesArg,

    /// Report the convex hull of each set.
    #[arg(long)]
    pub hull: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,

    /// Covariate counts: `start:stop:step`, a comma list, or one value.
    #[arg(long, default_value = "5:200:5")]
    pub p: String,

    #[arg(long, default_value_t = 1000)]
    pub reps: usize,

    /// Report path; a JSON mirror is written next to it. Stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Headed numeric CSV.
    #[arg(long)]
    pub data: PathBuf,

    /// Response column name.
    #[arg(long)]
    pub target: String,

    #[arg(long)]
    pub train_size: usize,

    #[arg(long)]
    pub test_size: usize,

    #[arg(long, default_value_t = 100)]
    pub trials: usize,

    /// Append a constant feature.
    #[arg(long)]
    pub intercept: bool,

    #[arg(long)]
    pub out: Option<PathBuf>,

    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Training CSV.
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long)]
    pub target: String,

    /// CSV of query rows: the training feature columns by name, or exactly
    /// that many columns in order.
    #[arg(long)]
    pub query: PathBuf,

    #[arg(long)]
    pub intercept: bool,

    #[arg(long)]
    pub out: Option<PathBuf>,

    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,

    /// Fold counts: integers, `sqrt` (rounded √n) and `n`.
    #[arg(long, default_value = "2,5,10,sqrt,n")]
    pub k: String,

    /// Sample sizes: `start:stop:step`, a comma list, or one value.
    #[arg(long, default_value = "10:10000:10")]
    pub n: String,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `start:stop:step` (stop inclusive), `a,b,c` or a single count.
pub fn parse_counts(s: &str) -> Result<Vec<usize>, String> {
    let num = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| format!("`{t}` is not a nonnegative integer in `{s}`"))
    };
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(format!("range `{s}` must be start:stop:step"));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if step == 0 || start > stop {
            return Err(format!("range `{s}` needs step >= 1 and start <= stop"));
        }
        return Ok((start..=stop).step_by(step).collect());
    }
    let values = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(num)
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("empty list".into());
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        assert_eq!(parse_counts("5:20:5").unwrap(), vec![5, 10, 15, 20]);
        assert_eq!(parse_counts("5:22:5").unwrap(), vec![5, 10, 15, 20]);
        assert_eq!(parse_counts("7").unwrap(), vec![7]);
        assert_eq!(parse_counts("3, 9").unwrap(), vec![3, 9]);
        assert_eq!(parse_counts("5:200:5").unwrap().len(), 40);
        assert!(parse_counts("5:1:1").is_err());
        assert!(parse_counts("1:5:0").is_err());
        assert!(parse_counts("1:5").is_err());
        assert!(parse_counts("a").is_err());
    }
}
