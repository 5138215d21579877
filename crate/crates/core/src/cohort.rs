//! Matched featured/control cohorts.
//!
//! For a project featured in year `y`, a non-featured candidate qualifies as
//! a control when its work volume before `y` and after `y` are each within a
//! relative tolerance of the featured project's, and (optionally) when it had
//! strictly more work before `y`. Controls are drawn uniformly without
//! replacement, and no candidate serves two featured projects.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analytics::{Channel, ProjectLog};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EpochCounts {
    /// Work events before Jan 1 of the year.
    pub before: u64,
    /// Work events within the year.
    pub during: u64,
    /// Work events from Jan 1 of the following year on.
    pub after: u64,
}

impl EpochCounts {
    pub fn total(&self) -> u64 {
        self.before + self.during + self.after
    }
}

/// Unix timestamp of 00:00:00 UTC on Jan 1 of `year`.
pub fn year_start(year: i32) -> Result<i64> {
    NaiveDate::from_ymd_opt(year, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
        .ok_or_else(|| Error::Domain(format!("year {year} out of range")))
}

/// Sorted work timestamps; epoch counts become two binary searches.
struct WorkTimes(Vec<i64>);

impl WorkTimes {
    fn of(project: &ProjectLog) -> Self {
        // Project logs are already time-ordered.
        WorkTimes(project.channel_events(Channel::Work).map(|e| e.timestamp).collect())
    }

    fn counts(&self, year: i32) -> Result<EpochCounts> {
        let start = year_start(year)?;
        let end = year_start(year + 1)?;
        let before = self.0.partition_point(|&t| t < start);
        let through = self.0.partition_point(|&t| t < end);
        Ok(EpochCounts {
            before: before as u64,
            during: (through - before) as u64,
            after: (self.0.len() - through) as u64,
        })
    }
}

pub fn edit_epoch_counts(project: &ProjectLog, year: i32) -> Result<EpochCounts> {
    WorkTimes::of(project).counts(year)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    /// Maximum controls per featured project.
    pub k: usize,
    /// Relative deviation bound (strict) on before/after volumes.
    pub tolerance: f64,
    /// Require the control to have strictly more work before the year.
    pub require_fewer_prior: bool,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            k: 30,
            tolerance: 0.05,
            require_fewer_prior: true,
            seed: 0,
        }
    }
}

impl MatchConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::domain("k must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Domain(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

fn relative_gap(reference: u64, other: u64) -> f64 {
    reference.abs_diff(other) as f64 / reference as f64
}

/// Featured projects need work both before and after the year, since both
/// deviations are relative to the featured volumes.
pub fn check_featured(featured: &EpochCounts) -> Result<()> {
    if featured.before == 0 || featured.after == 0 {
        return Err(Error::Ineligible(format!(
            "featured volumes before={} after={} leave a zero denominator",
            featured.before, featured.after
        )));
    }
    Ok(())
}

pub fn is_eligible_control(
    featured: &EpochCounts,
    candidate: &EpochCounts,
    tolerance: f64,
    require_fewer_prior: bool,
) -> bool {
    if featured.before == 0 || featured.after == 0 {
        return false;
    }
    relative_gap(featured.before, candidate.before) < tolerance
        && relative_gap(featured.after, candidate.after) < tolerance
        && (!require_fewer_prior || featured.before < candidate.before)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shuffles the eligible ids with `rng` and keeps the first `k`, so for a
/// fixed generator the draws for smaller `k` are prefixes of larger ones.
fn draw<T: Ord>(mut eligible: Vec<T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    eligible.sort();
    eligible.shuffle(rng);
    eligible.truncate(k);
    eligible
}

/// Up to `k` controls for one featured project drawn from `pool`.
pub fn matched_controls(
    featured: &ProjectLog,
    featured_year: i32,
    pool: &[&ProjectLog],
    cfg: &MatchConfig,
) -> Result<Vec<String>> {
    cfg.validate()?;
    let target = edit_epoch_counts(featured, featured_year)?;
    check_featured(&target)?;
    let mut eligible = Vec::new();
    for candidate in pool {
        let counts = edit_epoch_counts(candidate, featured_year)?;
        if is_eligible_control(&target, &counts, cfg.tolerance, cfg.require_fewer_prior) {
            eligible.push(candidate.project_id().to_string());
        }
    }
    Ok(draw(eligible, cfg.k, &mut stream_rng(cfg.seed, 0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    /// Featured projects that received at least one control, ascending.
    pub featured: Vec<String>,
    pub controls_by_featured: BTreeMap<String, Vec<String>>,
    /// Union of all control lists, ascending.
    pub control_union: Vec<String>,
    pub config: MatchConfig,
    /// Featured projects skipped for lack of work before or after their year.
    pub ineligible: Vec<String>,
    /// Eligible featured projects for which no control remained.
    pub unmatched: Vec<String>,
}

impl Cohort {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "# featured={} controls={} k={} tolerance={} require_fewer_prior={} seed={}",
            self.featured.len(),
            self.control_union.len(),
            self.config.k,
            self.config.tolerance,
            self.config.require_fewer_prior,
            self.config.seed
        )?;
        writeln!(
            out,
            "# ineligible={} unmatched={}",
            self.ineligible.len(),
            self.unmatched.len()
        )?;
        writeln!(out, "featured_id,control_ids")?;
        for (f, controls) in &self.controls_by_featured {
            writeln!(out, "{f},{}", controls.join(";"))?;
        }
        Ok(())
    }
}

/// Builds the cohort. Featured projects are processed by ascending id, the
/// i-th drawing from generator stream `i`; every project not in
/// `featured_labels` is a candidate control until it is taken.
pub fn build_cohorts(
    corpus: &[ProjectLog],
    featured_labels: &BTreeMap<String, i32>,
    cfg: &MatchConfig,
) -> Result<Cohort> {
    cfg.validate()?;
    let by_id: BTreeMap<&str, &ProjectLog> = corpus.iter().map(|p| (p.project_id(), p)).collect();
    if let Some(missing) = featured_labels.keys().find(|id| !by_id.contains_key(id.as_str())) {
        return Err(Error::Domain(format!(
            "featured project '{missing}' is not in the corpus"
        )));
    }
    let pool: Vec<(&str, WorkTimes)> = by_id
        .iter()
        .filter(|(id, _)| !featured_labels.contains_key(**id))
        .map(|(id, p)| (*id, WorkTimes::of(p)))
        .collect();
    let mut taken: BTreeSet<&str> = BTreeSet::new();
    let mut cohort = Cohort {
        featured: Vec::new(),
        controls_by_featured: BTreeMap::new(),
        control_union: Vec::new(),
        config: cfg.clone(),
        ineligible: Vec::new(),
        unmatched: Vec::new(),
    };
    for (stream, (fid, &year)) in featured_labels.iter().enumerate() {
        let target = WorkTimes::of(by_id[fid.as_str()]).counts(year)?;
        if check_featured(&target).is_err() {
            cohort.ineligible.push(fid.clone());
            continue;
        }
        let mut eligible = Vec::new();
        for (id, times) in &pool {
            if taken.contains(id) {
                continue;
            }
            let counts = times.counts(year)?;
            if is_eligible_control(&target, &counts, cfg.tolerance, cfg.require_fewer_prior) {
                eligible.push(*id);
            }
        }
        let chosen = draw(eligible, cfg.k, &mut stream_rng(cfg.seed, stream as u64));
        if chosen.is_empty() {
            cohort.unmatched.push(fid.clone());
            continue;
        }
        taken.extend(chosen.iter().copied());
        cohort.featured.push(fid.clone());
        cohort
            .controls_by_featured
            .insert(fid.clone(), chosen.into_iter().map(str::to_string).collect());
    }
    cohort.control_union = taken.into_iter().map(str::to_string).collect();
    Ok(cohort)
}
