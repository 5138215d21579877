//! Command-line surface. Every argument struct also (de)serializes, so a
//! manifest can record the resolved parameters and a replay can rebuild them.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coordination::analytics::{Channel, CoordinationScope};
use coordination::solver::Objective;
use coordination::stats::{CellAggregate, UMethod};
use serde::{Deserialize, Serialize};

pub const THREADS_ENV: &str = "COORD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "coord", version, about = "Coordination model and collaboration-log analytics")]
pub struct Cli {
    /// Worker threads; defaults to $COORD_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Monte Carlo mean of finished parts.
    Simulate(SimulateArgs),
    /// Exact distribution of finished parts by dynamic programming.
    Dp(DpArgs),
    /// Optimal coordination probability for one (N, E).
    Optimize(OptimizeArgs),
    /// Optimal coordination probability over an (N, E) grid.
    Heatmap(HeatmapArgs),
    /// x-core sizes and coordination shares per project.
    Xcore(XcoreArgs),
    /// Crowdedness profile per project.
    Crowd(CrowdArgs),
    /// Median-split quadrants of coordination with pairwise U tests.
    Quadrants(CrowdArgs),
    /// Decile heatmap of coordination over size and team size.
    Bins(BinsArgs),
    /// Two-sample Mann-Whitney U test.
    Mwu(MwuArgs),
    /// Matched featured/control cohorts.
    Cohort(CohortArgs),
    /// Validate an event log and write it in canonical form.
    Ingest(IngestArgs),
    /// Generate a synthetic corpus.
    #[command(alias = "generate")]
    Synth(SynthArgs),
    /// Re-run a manifest and check the outputs byte for byte.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Dp(_) => "dp",
            Command::Optimize(_) => "optimize",
            Command::Heatmap(_) => "heatmap",
            Command::Xcore(_) => "xcore",
            Command::Crowd(_) => "crowd",
            Command::Quadrants(_) => "quadrants",
            Command::Bins(_) => "bins",
            Command::Mwu(_) => "mwu",
            Command::Cohort(_) => "cohort",
            Command::Ingest(_) => "ingest",
            Command::Synth(_) => "synth",
            Command::Replay(_) => "replay",
        }
    }

    /// Input file paths, for digesting and rebasing.
    pub fn inputs_mut(&mut self) -> Vec<&mut PathBuf> {
        fn corpus(c: &mut CorpusArgs) -> Vec<&mut PathBuf> {
            let mut v = vec![&mut c.events];
            v.extend(c.metadata.as_mut());
            v
        }
        match self {
            Command::Xcore(a) => corpus(&mut a.corpus),
            Command::Crowd(a) | Command::Quadrants(a) => corpus(&mut a.corpus),
            Command::Bins(a) => corpus(&mut a.crowd.corpus),
            Command::Cohort(a) => corpus(&mut a.corpus),
            Command::Ingest(a) => corpus(&mut a.corpus),
            Command::Synth(a) => a.spec.iter_mut().collect(),
            _ => Vec::new(),
        }
    }

    pub fn output_mut(&mut self) -> Option<&mut OutputArgs> {
        match self {
            Command::Simulate(a) => Some(&mut a.output),
            Command::Dp(a) => Some(&mut a.output),
            Command::Optimize(a) => Some(&mut a.output),
            Command::Heatmap(a) => Some(&mut a.output),
            Command::Xcore(a) => Some(&mut a.output),
            Command::Crowd(a) | Command::Quadrants(a) => Some(&mut a.output),
            Command::Bins(a) => Some(&mut a.crowd.output),
            Command::Mwu(a) => Some(&mut a.output),
            Command::Cohort(a) => Some(&mut a.output),
            Command::Ingest(a) => Some(&mut a.output),
            Command::Synth(_) | Command::Replay(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Args, Serialize, Deserialize)]
pub struct OutputArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Number of parts.
    #[arg(long)]
    pub n: usize,
    /// Number of users.
    #[arg(long)]
    pub e: usize,
    #[arg(long, value_parser = unit_interval)]
    pub alpha: f64,
    #[arg(long, value_parser = unit_interval)]
    pub beta: f64,
    #[arg(long, default_value_t = 10_000)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DpArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub e: usize,
    #[arg(long, value_parser = unit_interval)]
    pub alpha: f64,
    #[arg(long, value_parser = unit_interval)]
    pub beta: f64,
    /// Refuse runs with N * E above this.
    #[arg(long, default_value_t = coordination::model::DEFAULT_DP_BUDGET)]
    pub dp_budget: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveArg {
    #[value(name = "closed_form", alias = "closed-form", alias = "cf")]
    ClosedForm,
    #[value(name = "exact_dp", alias = "exact-dp", alias = "dp")]
    ExactDp,
    #[value(name = "monte_carlo", alias = "monte-carlo", alias = "mc")]
    MonteCarlo,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::ClosedForm => Objective::ClosedForm,
            ObjectiveArg::ExactDp => Objective::ExactDp,
            ObjectiveArg::MonteCarlo => Objective::MonteCarlo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SearchArgs {
    #[arg(long, value_enum, default_value = "closed_form")]
    pub objective: ObjectiveArg,
    /// Runs per grid point for monte_carlo (default 10000).
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub grid_step: f64,
    /// Cap the closed form at N.
    #[arg(long)]
    pub clamp_at_n: bool,
    #[arg(long, default_value_t = coordination::model::DEFAULT_DP_BUDGET)]
    pub dp_budget: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub e: usize,
    #[arg(long, value_parser = unit_interval)]
    pub alpha: f64,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct HeatmapArgs {
    /// Part counts, e.g. `1-100` or `5,10,20`.
    #[arg(long, value_parser = int_list, default_value = "1-100")]
    pub n: IntList,
    /// User counts, same syntax as `--n`.
    #[arg(long, value_parser = int_list, default_value = "1-100")]
    pub e: IntList,
    #[arg(long, value_parser = unit_interval)]
    pub alpha: f64,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntList(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq, Eq, Args, Serialize, Deserialize)]
pub struct CorpusArgs {
    /// Event log, one JSON object per line.
    #[arg(long)]
    pub events: PathBuf,
    /// Per-project metadata CSV.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct XcoreArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Work fraction in (0, 1]; repeatable. Defaults to 0.1, 0.2, ..., 1.0.
    #[arg(long = "x", value_parser = fraction)]
    pub x: Vec<f64>,
    /// Restrict to one project.
    #[arg(long)]
    pub project: Option<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelArg {
    Discussion,
    Comment,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Discussion => Channel::Discussion,
            ChannelArg::Comment => Channel::Comment,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeArg {
    All,
    Engaged,
}

impl From<ScopeArg> for CoordinationScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::All => CoordinationScope::AllUsers,
            ScopeArg::Engaged => CoordinationScope::EngagedOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CrowdArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Engaged work events defining the early window.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, value_enum, default_value = "discussion")]
    pub channel: ChannelArg,
    /// Whose coordination counts before the threshold.
    #[arg(long, value_enum, default_value = "all")]
    pub scope: ScopeArg,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateArg {
    Mean,
    Median,
}

impl From<AggregateArg> for CellAggregate {
    fn from(a: AggregateArg) -> Self {
        match a {
            AggregateArg::Mean => CellAggregate::Mean,
            AggregateArg::Median => CellAggregate::Median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BinsArgs {
    #[command(flatten)]
    pub crowd: CrowdArgs,
    #[arg(long, value_enum, default_value = "mean")]
    pub aggregate: AggregateArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Auto,
    Exact,
    Normal,
}

impl MethodArg {
    pub fn forced(self) -> Option<UMethod> {
        match self {
            MethodArg::Auto => None,
            MethodArg::Exact => Some(UMethod::Exact),
            MethodArg::Normal => Some(UMethod::NormalApprox),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MwuArgs {
    /// First sample, comma separated.
    #[arg(long, value_parser = float_list, allow_hyphen_values = true)]
    pub a: FloatList,
    /// Second sample, comma separated.
    #[arg(long, value_parser = float_list, allow_hyphen_values = true)]
    pub b: FloatList,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: MethodArg,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FloatList(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CohortArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Controls per featured project.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, default_value_t = 0.05, value_parser = positive)]
    pub tolerance: f64,
    /// Drop the condition that controls had more prior work.
    #[arg(long)]
    pub allow_fewer_prior: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Eq, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, PartialEq, Eq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Corpus spec as JSON.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub spec: Option<PathBuf>,
    /// Built-in spec: small, crowded or cohort.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override the spec's project count.
    #[arg(long)]
    pub projects: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to `<out>/manifest.json`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Where the recorded inputs live; defaults to the manifest's directory.
    #[arg(long)]
    pub input_dir: Option<PathBuf>,
    /// Where to write the regenerated outputs.
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

/// `a-b` ranges and single values, comma separated; must end up strictly
/// ascending.
pub fn int_list(s: &str) -> Result<IntList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("'{t}': {e}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (parse(a)?, parse(b)?);
                if a > b {
                    return Err(format!("range {part} is reversed"));
                }
                out.extend(a..=b);
            }
            None => out.push(parse(part)?),
        }
    }
    if out.is_empty() || out.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("'{s}' must list strictly ascending values"));
    }
    Ok(IntList(out))
}

pub fn float_list(s: &str) -> Result<FloatList, String> {
    let values = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err("values must be finite".into());
    }
    Ok(FloatList(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_lists() {
        assert_eq!(int_list("1-3").unwrap().0, [1, 2, 3]);
        assert_eq!(int_list("5,10,20").unwrap().0, [5, 10, 20]);
        assert_eq!(int_list("1-2,7").unwrap().0, [1, 2, 7]);
        assert!(int_list("3-1").is_err());
        assert!(int_list("2,1").is_err());
        assert!(int_list("x").is_err());
    }

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from(["coord", "optimize", "--n", "5", "--e", "10", "--alpha", "1", "--objective", "dp"])
            .unwrap();
        let Command::Optimize(a) = cli.command else { panic!() };
        assert_eq!(a.search.objective, ObjectiveArg::ExactDp);
        assert!(Cli::try_parse_from(["coord", "simulate", "--n", "5", "--e", "1", "--alpha", "2", "--beta", "0"]).is_err());
        let cli = Cli::try_parse_from(["coord", "mwu", "--a", "-1,2", "--b", "3,4"]).unwrap();
        let Command::Mwu(a) = cli.command else { panic!() };
        assert_eq!(a.a.0, [-1.0, 2.0]);
    }

    #[test]
    fn commands_round_trip_through_json() {
        let cli = Cli::try_parse_from(["coord", "heatmap", "--n", "5,10", "--e", "1-3", "--alpha", "0.5"]).unwrap();
        let json = serde_json::to_value(&cli.command).unwrap();
        let back: Command = serde_json::from_value(json).unwrap();
        assert_eq!(back, cli.command);
    }
}
