//! Subcommand execution, output delivery and replay.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use coordination::analytics::{core_curve, crowdedness_profile, CrowdednessConfig};
use coordination::cohort::{build_cohorts, MatchConfig};
use coordination::model::{final_distribution, monte_carlo, RNG_SCHEME};
use coordination::solver::{approx_expectation, beta_heatmap, optimal_beta, Objective, SearchConfig};
use coordination::stats::{decile_heatmap, mann_whitney_u_with, median_split_quadrants, CrowdRecord};
use coordination::{Error, Params};

use crate::args::{
    BinsArgs, CohortArgs, Command, CrowdArgs, DpArgs, HeatmapArgs, IngestArgs, MwuArgs, ObjectiveArg,
    OptimizeArgs, OutputArgs, ReplayArgs, SearchArgs, SimulateArgs, SynthArgs, XcoreArgs,
};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest, write_events, Corpus};
use crate::manifest::{basename, FileDigest, RunManifest, TOOL};
use crate::synth;

pub const DEFAULT_RUNS: usize = 10_000;
const COHORT_RNG: &str = "chacha8:seed_from_u64(master):stream(featured_index)";
const SYNTH_RNG: &str = "chacha8:seed_from_u64(master):stream(project_index)";

/// Result of running a subcommand, before anything is written.
#[derive(Debug, Clone)]
pub struct Execution {
    /// The command with every default resolved.
    pub command: Command,
    pub seed: Option<u64>,
    pub rng: Option<String>,
    /// `(file name, bytes)`; file names are relative to the output location.
    pub outputs: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Replay(a) => replay(&a),
        other => {
            let exec = execute(&other)?;
            for w in &exec.warnings {
                eprintln!("warning: {w}");
            }
            deliver(&exec)?;
            Ok(())
        }
    }
}

pub fn execute(command: &Command) -> CliResult<Execution> {
    let mut exec = match command {
        Command::Simulate(a) => simulate(a),
        Command::Dp(a) => dp(a),
        Command::Optimize(a) => optimize(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Xcore(a) => xcore(a),
        Command::Crowd(a) => crowd(a),
        Command::Quadrants(a) => quadrants(a),
        Command::Bins(a) => bins(a),
        Command::Mwu(a) => mwu(a),
        Command::Cohort(a) => cohort(a),
        Command::Ingest(a) => ingest_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Replay(_) => Err(CliError::Usage("replay cannot be nested".into())),
    }?;
    if let Some(out) = exec.command.output_mut() {
        if out.manifest.is_some() && out.out.is_none() {
            return Err(CliError::Usage("--manifest needs --out".into()));
        }
    }
    Ok(exec)
}

fn single(command: Command, output: &OutputArgs, bytes: Vec<u8>) -> Execution {
    let name = output.out.as_deref().map_or_else(|| "stdout".to_string(), basename);
    Execution {
        command,
        seed: None,
        rng: None,
        outputs: vec![(name, bytes)],
        warnings: Vec::new(),
    }
}

/// Where outputs and the manifest go: `(output directory, manifest path)`;
/// `None` means standard output without a manifest.
fn destination(command: &Command) -> Option<(PathBuf, PathBuf)> {
    let parent = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_default();
    match command {
        Command::Synth(a) => Some((
            a.out.clone(),
            a.manifest.clone().unwrap_or_else(|| a.out.join("manifest.json")),
        )),
        other => {
            let mut other = other.clone();
            let output = other.output_mut()?;
            let out = output.out.clone()?;
            let manifest = output.manifest.clone().unwrap_or_else(|| {
                let mut name = out.clone().into_os_string();
                name.push(".manifest.json");
                PathBuf::from(name)
            });
            Some((parent(&out), manifest))
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Writes outputs and, for file outputs, the manifest.
pub fn deliver(exec: &Execution) -> CliResult<Option<RunManifest>> {
    let Some((dir, manifest_path)) = destination(&exec.command) else {
        let mut stdout = std::io::stdout().lock();
        for (_, bytes) in &exec.outputs {
            stdout.write_all(bytes)?;
        }
        return Ok(None);
    };
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir)?;
    }
    for (name, bytes) in &exec.outputs {
        write_file(&dir.join(name), bytes)?;
    }
    let manifest = manifest_for(exec)?;
    write_file(&manifest_path, manifest.to_json()?.as_bytes())?;
    Ok(Some(manifest))
}

/// Applies `f` to every input path, and `g` to every output path.
fn rebase(command: &mut Command, f: impl Fn(&Path) -> PathBuf, g: impl Fn(&Path) -> PathBuf) {
    for p in command.inputs_mut() {
        *p = f(p);
    }
    if let Command::Synth(a) = command {
        a.out = g(&a.out);
        a.manifest = a.manifest.as_deref().map(&g);
    }
    if let Some(out) = command.output_mut() {
        out.out = out.out.as_deref().map(&g);
        out.manifest = out.manifest.as_deref().map(&g);
    }
}

pub fn manifest_for(exec: &Execution) -> CliResult<RunManifest> {
    let mut original = exec.command.clone();
    let inputs = original
        .inputs_mut()
        .into_iter()
        .map(|p| FileDigest::of_file(p))
        .collect::<CliResult<Vec<_>>>()?;
    let mut canonical = exec.command.clone();
    let name = |p: &Path| PathBuf::from(basename(p));
    rebase(&mut canonical, name, name);
    let tagged = serde_json::to_value(&canonical).map_err(|e| CliError::Data(e.to_string()))?;
    let args = tagged
        .get(canonical.name())
        .cloned()
        .ok_or_else(|| CliError::Data("cannot serialize arguments".into()))?;
    Ok(RunManifest {
        tool: TOOL.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: canonical.name().to_string(),
        args,
        seed: exec.seed,
        rng: exec.rng.clone(),
        inputs,
        outputs: exec
            .outputs
            .iter()
            .map(|(n, b)| FileDigest::of_bytes(n, b))
            .collect(),
    })
}

pub fn replay(a: &ReplayArgs) -> CliResult<()> {
    let recorded = RunManifest::read(&a.manifest)?;
    if recorded.tool != TOOL {
        return Err(CliError::Data(format!("manifest is for '{}'", recorded.tool)));
    }
    if recorded.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "warning: manifest written by version {}, replaying with {}",
            recorded.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    let tagged = serde_json::json!({ recorded.subcommand.clone(): recorded.args.clone() });
    let mut command: Command =
        serde_json::from_value(tagged).map_err(|e| CliError::Data(format!("bad manifest arguments: {e}")))?;
    if matches!(command, Command::Replay(_)) {
        return Err(CliError::Data("manifest records a replay".into()));
    }
    let input_dir = a
        .input_dir
        .clone()
        .or_else(|| a.manifest.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let out_dir = a.out_dir.clone();
    rebase(&mut command, |p| input_dir.join(p), |p| out_dir.join(p));

    let inputs = command
        .inputs_mut()
        .into_iter()
        .map(|p| FileDigest::of_file(p))
        .collect::<CliResult<Vec<_>>>()?;
    if inputs != recorded.inputs {
        return Err(CliError::Data("inputs differ from the recorded digests".into()));
    }
    let exec = execute(&command)?;
    let replayed = deliver(&exec)?.ok_or_else(|| CliError::Data("manifest has no file outputs".into()))?;
    for (want, got) in recorded.outputs.iter().zip(&replayed.outputs) {
        if want != got {
            return Err(CliError::Data(format!("output {} differs from the recorded digest", want.name)));
        }
    }
    if recorded.outputs.len() != replayed.outputs.len() {
        return Err(CliError::Data("output count differs from the manifest".into()));
    }
    eprintln!("replay matches: {} output(s)", replayed.outputs.len());
    Ok(())
}

fn io<T>(r: std::io::Result<T>) -> CliResult<T> {
    r.map_err(CliError::from)
}

fn simulate(a: &SimulateArgs) -> CliResult<Execution> {
    let params = Params::new(a.n, a.e, a.alpha, a.beta)?;
    let r = monte_carlo(&params, a.runs, a.seed)?;
    let mut buf = Vec::new();
    io(writeln!(buf, "# rng={RNG_SCHEME}"))?;
    io(writeln!(buf, "n,e,alpha,beta,runs,seed,mean_finished,std_error"))?;
    io(writeln!(
        buf,
        "{},{},{:.4},{:.4},{},{},{:.6},{:.6}",
        a.n, a.e, a.alpha, a.beta, r.runs, r.seed, r.mean_finished, r.std_error
    ))?;
    let mut exec = single(Command::Simulate(a.clone()), &a.output, buf);
    exec.seed = Some(a.seed);
    exec.rng = Some(RNG_SCHEME.to_string());
    Ok(exec)
}

fn dp(a: &DpArgs) -> CliResult<Execution> {
    let params = Params::new(a.n, a.e, a.alpha, a.beta)?;
    let dist = final_distribution(&params, a.dp_budget)?;
    let closed = approx_expectation(a.n, a.e, a.alpha, a.beta)?;
    let mut buf = Vec::new();
    io(writeln!(buf, "# n={}", a.n))?;
    io(writeln!(buf, "# e={}", a.e))?;
    io(writeln!(buf, "# alpha={:.4}", a.alpha))?;
    io(writeln!(buf, "# beta={:.4}", a.beta))?;
    io(writeln!(buf, "# expected_finished={:.6}", dist.mean()))?;
    io(writeln!(buf, "# closed_form={closed:.6}"))?;
    io(writeln!(buf, "c,probability"))?;
    for (c, p) in dist.mass().iter().enumerate() {
        io(writeln!(buf, "{c},{p:.6}"))?;
    }
    Ok(single(Command::Dp(a.clone()), &a.output, buf))
}

/// Resolves defaults that depend on the objective.
fn search_config(s: &mut SearchArgs) -> CliResult<SearchConfig> {
    if !(s.grid_step > 0.0 && s.grid_step <= 1.0) {
        return Err(CliError::Usage(format!("grid step {} is outside (0, 1]", s.grid_step)));
    }
    if s.objective == ObjectiveArg::MonteCarlo {
        let runs = *s.runs.get_or_insert(DEFAULT_RUNS);
        if runs == 0 {
            return Err(CliError::Usage("runs must be at least 1".into()));
        }
    } else {
        s.runs = None;
    }
    Ok(SearchConfig {
        grid_step: s.grid_step,
        runs: s.runs,
        seed: s.seed,
        clamp_at_n: s.clamp_at_n,
        dp_budget: s.dp_budget,
        ..SearchConfig::default()
    })
}

fn search_header(buf: &mut Vec<u8>, s: &SearchArgs) -> CliResult<()> {
    let objective = Objective::from(s.objective);
    io(writeln!(buf, "# objective={objective}"))?;
    io(writeln!(buf, "# grid_step={}", s.grid_step))?;
    match s.runs {
        Some(runs) => {
            io(writeln!(buf, "# runs={runs}"))?;
            io(writeln!(buf, "# seed={}", s.seed))?;
            io(writeln!(buf, "# rng={RNG_SCHEME}"))?;
        }
        None => {
            io(writeln!(buf, "# runs=NA"))?;
            io(writeln!(buf, "# seed=NA"))?;
        }
    }
    Ok(())
}

fn stamp_search(exec: &mut Execution, s: &SearchArgs) {
    if s.runs.is_some() {
        exec.seed = Some(s.seed);
        exec.rng = Some(RNG_SCHEME.to_string());
    }
}

fn optimize(a: &OptimizeArgs) -> CliResult<Execution> {
    let mut a = a.clone();
    let cfg = search_config(&mut a.search)?;
    let r = optimal_beta(a.n, a.e, a.alpha, a.search.objective.into(), &cfg)?;
    let mut buf = Vec::new();
    search_header(&mut buf, &a.search)?;
    io(writeln!(buf, "n,e,alpha,objective,beta_star,value"))?;
    io(writeln!(
        buf,
        "{},{},{:.4},{},{:.4},{:.6}",
        a.n, a.e, a.alpha, r.objective, r.beta_star, r.value
    ))?;
    let mut exec = single(Command::Optimize(a.clone()), &a.output, buf);
    stamp_search(&mut exec, &a.search);
    Ok(exec)
}

fn heatmap(a: &HeatmapArgs) -> CliResult<Execution> {
    let mut a = a.clone();
    let cfg = search_config(&mut a.search)?;
    let grid = beta_heatmap(&a.n.0, &a.e.0, a.alpha, a.search.objective.into(), &cfg)?;
    let mut buf = Vec::new();
    io(grid.write_csv(&mut buf))?;
    let mut exec = single(Command::Heatmap(a.clone()), &a.output, buf);
    stamp_search(&mut exec, &a.search);
    if grid.failures() > 0 {
        let first = grid
            .cells
            .iter()
            .flatten()
            .find_map(|c| c.as_ref().err())
            .map(Error::to_string)
            .unwrap_or_default();
        exec.warnings.push(format!("{} cell(s) failed, e.g. {first}", grid.failures()));
    }
    Ok(exec)
}

fn load(c: &crate::args::CorpusArgs) -> CliResult<Corpus> {
    ingest(&c.events, c.metadata.as_deref())
}

fn xcore(a: &XcoreArgs) -> CliResult<Execution> {
    let mut a = a.clone();
    if a.x.is_empty() {
        a.x = (1..=10).map(|i| i as f64 / 10.0).collect();
    }
    let corpus = load(&a.corpus)?;
    let logs: Vec<_> = match &a.project {
        Some(id) => {
            let log = corpus
                .logs
                .iter()
                .find(|l| l.project_id() == id)
                .ok_or_else(|| CliError::Data(format!("project '{id}' not in the event log")))?;
            vec![log]
        }
        None => corpus.logs.iter().collect(),
    };
    let mut rows = Vec::new();
    let mut skipped = 0;
    for log in logs {
        let curve = match core_curve(log, &a.x) {
            Ok(c) => c,
            Err(Error::Domain(_)) if log.work_counts().is_empty() => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let share = |s: &Option<Vec<f64>>, i: usize| {
            s.as_ref().map_or_else(|| "NA".to_string(), |v| format!("{:.6}", v[i]))
        };
        for (i, x) in curve.xs.iter().enumerate() {
            rows.push(format!(
                "{},{x:.4},{},{:.6},{},{}",
                log.project_id(),
                curve.core_size[i],
                curve.core_fraction[i],
                share(&curve.d_share, i),
                share(&curve.c_share, i)
            ));
        }
    }
    let mut buf = Vec::new();
    io(writeln!(buf, "# skipped_without_work={skipped}"))?;
    io(writeln!(buf, "project_id,x,core_size,core_fraction,d_share,c_share"))?;
    for r in rows {
        io(writeln!(buf, "{r}"))?;
    }
    let mut exec = single(Command::Xcore(a.clone()), &a.output, buf);
    exec.warnings = corpus.warnings;
    Ok(exec)
}

struct Profiles {
    rows: Vec<(String, coordination::analytics::CrowdednessProfile)>,
    ineligible: usize,
    warnings: Vec<String>,
}

fn profiles(a: &CrowdArgs) -> CliResult<Profiles> {
    let corpus = load(&a.corpus)?;
    let cfg = CrowdednessConfig {
        k: a.k as usize,
        channel: a.channel.into(),
        scope: a.scope.into(),
    };
    let mut rows = Vec::new();
    let mut ineligible = 0;
    for log in &corpus.logs {
        match crowdedness_profile(log, &cfg) {
            Ok(p) => rows.push((log.project_id().to_string(), p)),
            Err(Error::Ineligible(_)) => ineligible += 1,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Profiles {
        rows,
        ineligible,
        warnings: corpus.warnings,
    })
}

fn crowd_header(buf: &mut Vec<u8>, a: &CrowdArgs, p: &Profiles) -> CliResult<()> {
    io(writeln!(buf, "# k={}", a.k))?;
    io(writeln!(buf, "# channel={}", coordination::analytics::Channel::from(a.channel)))?;
    io(writeln!(buf, "# scope={}", if a.scope == crate::args::ScopeArg::All { "all" } else { "engaged" }))?;
    io(writeln!(buf, "# profiles={}", p.rows.len()))?;
    io(writeln!(buf, "# ineligible={}", p.ineligible))
}

fn crowd(a: &CrowdArgs) -> CliResult<Execution> {
    let p = profiles(a)?;
    let mut buf = Vec::new();
    crowd_header(&mut buf, a, &p)?;
    io(writeln!(buf, "project_id,engaged_users,team_size,threshold_time,early_coordination,output_size"))?;
    for (id, prof) in &p.rows {
        io(writeln!(
            buf,
            "{id},{},{},{},{},{}",
            prof.engaged_users.len(),
            prof.team_size(),
            prof.threshold_time,
            prof.early_coordination,
            prof.output_size
        ))?;
    }
    let mut exec = single(Command::Crowd(a.clone()), &a.output, buf);
    exec.warnings = p.warnings;
    Ok(exec)
}

fn records(p: &Profiles) -> Vec<CrowdRecord> {
    p.rows
        .iter()
        .map(|(_, prof)| CrowdRecord {
            size: prof.output_size as f64,
            team_size: prof.team_size() as f64,
            coordination: prof.early_coordination as f64,
        })
        .collect()
}

fn quadrants(a: &CrowdArgs) -> CliResult<Execution> {
    let p = profiles(a)?;
    let summary = median_split_quadrants(&records(&p))?;
    let mut buf = Vec::new();
    crowd_header(&mut buf, a, &p)?;
    io(summary.write_csv(&mut buf))?;
    let mut exec = single(Command::Quadrants(a.clone()), &a.output, buf);
    exec.warnings = p.warnings;
    Ok(exec)
}

fn bins(a: &BinsArgs) -> CliResult<Execution> {
    let p = profiles(&a.crowd)?;
    let grid = decile_heatmap(&records(&p), a.aggregate.into())?;
    let mut buf = Vec::new();
    crowd_header(&mut buf, &a.crowd, &p)?;
    io(grid.write_csv(&mut buf))?;
    let mut exec = single(Command::Bins(a.clone()), &a.crowd.output, buf);
    exec.warnings = p.warnings;
    Ok(exec)
}

fn mwu(a: &MwuArgs) -> CliResult<Execution> {
    let r = mann_whitney_u_with(&a.a.0, &a.b.0, a.method.forced())?;
    let mut buf = Vec::new();
    io(writeln!(buf, "n_a,n_b,u_statistic,p_value,band,method"))?;
    io(writeln!(
        buf,
        "{},{},{:.1},{:.6},{},{}",
        a.a.0.len(),
        a.b.0.len(),
        r.u_statistic,
        r.p_value,
        r.band.as_str(),
        r.method.as_str()
    ))?;
    Ok(single(Command::Mwu(a.clone()), &a.output, buf))
}

fn cohort(a: &CohortArgs) -> CliResult<Execution> {
    let corpus = load(&a.corpus)?;
    let labels = corpus.featured_labels();
    let cfg = MatchConfig {
        k: a.k as usize,
        tolerance: a.tolerance,
        require_fewer_prior: !a.allow_fewer_prior,
        seed: a.seed,
    };
    let result = build_cohorts(&corpus.logs, &labels, &cfg)?;
    let mut buf = Vec::new();
    io(result.write_csv(&mut buf))?;
    let mut exec = single(Command::Cohort(a.clone()), &a.output, buf);
    exec.seed = Some(a.seed);
    exec.rng = Some(COHORT_RNG.to_string());
    exec.warnings = corpus.warnings;
    if labels.is_empty() {
        exec.warnings.push("no featured projects in the metadata".into());
    }
    Ok(exec)
}

fn ingest_cmd(a: &IngestArgs) -> CliResult<Execution> {
    let corpus = load(&a.corpus)?;
    let mut buf = Vec::new();
    write_events(&corpus.logs, &mut buf)?;
    eprintln!("ingested {} project(s), {} event(s)", corpus.logs.len(), corpus.event_count());
    let mut exec = single(Command::Ingest(a.clone()), &a.output, buf);
    exec.warnings = corpus.warnings;
    Ok(exec)
}

fn synth_cmd(a: &SynthArgs) -> CliResult<Execution> {
    let mut spec = match (&a.spec, &a.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("bad spec: {e}")))?
        }
        (None, Some(name)) => synth::preset(name)?,
        (None, None) => return Err(CliError::Usage("give --spec or --preset".into())),
    };
    if let Some(p) = a.projects {
        spec.projects = p;
    }
    let corpus = synth::generate(&spec, a.seed)?;
    Ok(Execution {
        command: Command::Synth(a.clone()),
        seed: Some(a.seed),
        rng: Some(SYNTH_RNG.to_string()),
        outputs: synth::render(&corpus)?,
        warnings: Vec::new(),
    })
}
