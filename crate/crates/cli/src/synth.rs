//! Deterministic synthetic corpora with optional planted structure.
//!
//! Project `i` draws from ChaCha8 stream `i` of the master seed, so a corpus
//! is a pure function of `(spec, seed)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use coordination::analytics::{Channel, Event, ProjectLog};
use coordination::cohort::year_start;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::ingest::{write_events, write_metadata, ProjectMeta};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const METADATA_FILE: &str = "metadata.csv";
pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub projects: usize,
    /// Inclusive range of actor counts per project.
    pub actors: [usize; 2],
    /// Inclusive ranges of event counts per project and channel.
    pub work: [u64; 2],
    pub discussion: [u64; 2],
    pub comment: [u64; 2],
    /// First and last calendar year (inclusive) of the timeline.
    pub years: [i32; 2],
    #[serde(default)]
    pub plant: Option<Plant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Plant {
    /// Early coordination `D = round(scale * team / size)`. Each project gets
    /// exactly `k` early work events shared by `team` engaged actors; the
    /// channel ranges of the spec add further events after that window.
    Crowdedness {
        k: usize,
        team: [usize; 2],
        size: [u64; 2],
        scale: f64,
    },
    /// `featured` projects labelled with `year`, each with `matches`
    /// planted controls inside the 5% windows. `ineligible` more featured
    /// projects have no work before the year. Remaining projects are
    /// low-volume fillers that match nothing.
    Cohort {
        featured: usize,
        matches: usize,
        year: i32,
        ineligible: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericTruth {
    pub actors: usize,
    pub work: u64,
    pub discussion: u64,
    pub comment: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdTruth {
    pub team_size: usize,
    pub size: u64,
    pub coordination: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturedTruth {
    pub before: u64,
    pub after: u64,
    pub planted: Vec<String>,
    /// Every non-featured project meeting the matching conditions, from the
    /// planted volumes.
    pub eligible: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    Generic {
        projects: BTreeMap<String, GenericTruth>,
    },
    Crowdedness {
        k: usize,
        projects: BTreeMap<String, CrowdTruth>,
    },
    Cohort {
        year: i32,
        tolerance: f64,
        featured: BTreeMap<String, FeaturedTruth>,
        ineligible: Vec<String>,
    },
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub logs: Vec<ProjectLog>,
    pub metadata: BTreeMap<String, ProjectMeta>,
    pub truth: Truth,
}

/// Built-in specs: `small`, `crowded` and `cohort`.
pub fn preset(name: &str) -> CliResult<SynthSpec> {
    let base = SynthSpec {
        projects: 10,
        actors: [2, 8],
        work: [20, 60],
        discussion: [0, 20],
        comment: [0, 20],
        years: [2001, 2012],
        plant: None,
    };
    match name {
        "small" => Ok(base),
        "crowded" => Ok(SynthSpec {
            projects: 1000,
            actors: [0, 5],
            work: [0, 30],
            discussion: [0, 5],
            comment: [0, 5],
            plant: Some(Plant::Crowdedness {
                k: 100,
                team: [2, 40],
                size: [1000, 64_000],
                scale: 5000.0,
            }),
            ..base
        }),
        "cohort" => Ok(SynthSpec {
            projects: 1000,
            actors: [2, 10],
            work: [0, 0],
            discussion: [0, 3],
            comment: [0, 3],
            plant: Some(Plant::Cohort {
                featured: 40,
                matches: 3,
                year: 2006,
                ineligible: 3,
            }),
            ..base
        }),
        other => Err(CliError::Usage(format!(
            "unknown preset '{other}' (expected small, crowded or cohort)"
        ))),
    }
}

fn check_range<T: PartialOrd + std::fmt::Debug>(name: &str, r: &[T; 2]) -> CliResult<()> {
    if r[0] > r[1] {
        return Err(CliError::Data(format!("{name} range {r:?} is reversed")));
    }
    Ok(())
}

impl SynthSpec {
    pub fn validate(&self) -> CliResult<()> {
        check_range("actors", &self.actors)?;
        check_range("work", &self.work)?;
        check_range("discussion", &self.discussion)?;
        check_range("comment", &self.comment)?;
        check_range("years", &self.years)?;
        if self.actors[0] == 0 && self.plant.is_none() {
            return Err(CliError::Data("actors range must start at 1".into()));
        }
        if self.years[0] < 1970 {
            return Err(CliError::Data("years must start at 1970 or later".into()));
        }
        match &self.plant {
            None => {}
            Some(Plant::Crowdedness { k, team, size, scale }) => {
                check_range("team", team)?;
                check_range("size", size)?;
                if *k == 0 || team[0] == 0 || team[1] > *k {
                    return Err(CliError::Data("team sizes must lie in 1..=k".into()));
                }
                if size[0] == 0 || !(*scale > 0.0) {
                    return Err(CliError::Data("size and scale must be positive".into()));
                }
            }
            Some(Plant::Cohort { featured, matches, year, ineligible }) => {
                if !(self.years[0] < *year && *year < self.years[1]) {
                    return Err(CliError::Data(format!(
                        "featured year {year} must lie strictly inside {:?}",
                        self.years
                    )));
                }
                if self.actors[0] == 0 {
                    return Err(CliError::Data("actors range must start at 1".into()));
                }
                let needed = featured * (1 + matches) + ineligible;
                if needed > self.projects {
                    return Err(CliError::Data(format!(
                        "cohort plant needs {needed} projects, spec has {}",
                        self.projects
                    )));
                }
            }
        }
        Ok(())
    }
}

fn span(years: [i32; 2]) -> CliResult<(i64, i64)> {
    Ok((year_start(years[0])?, year_start(years[1] + 1)?))
}

fn push(events: &mut Vec<Event>, id: &str, actor: String, t: i64, channel: Channel) {
    events.push(Event {
        project_id: id.to_string(),
        actor_id: actor,
        timestamp: t,
        channel,
        size_delta: None,
    });
}

fn count(rng: &mut ChaCha8Rng, r: [u64; 2]) -> u64 {
    rng.random_range(r[0]..=r[1])
}

/// Adds `n` events on `channel` at uniform times in `[lo, hi)`.
fn scatter(
    events: &mut Vec<Event>,
    rng: &mut ChaCha8Rng,
    id: &str,
    n: u64,
    channel: Channel,
    (lo, hi): (i64, i64),
    actor: &mut dyn FnMut(&mut ChaCha8Rng) -> String,
) {
    for _ in 0..n {
        let t = rng.random_range(lo..hi);
        let a = actor(rng);
        push(events, id, a, t, channel);
    }
}

fn project_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn project_id(i: usize) -> String {
    format!("p{i:05}")
}

pub fn generate(spec: &SynthSpec, seed: u64) -> CliResult<SynthCorpus> {
    spec.validate()?;
    match &spec.plant {
        None => generic(spec, seed),
        Some(Plant::Crowdedness { k, team, size, scale }) => crowded(spec, seed, *k, *team, *size, *scale),
        Some(Plant::Cohort { featured, matches, year, ineligible }) => {
            cohort(spec, seed, *featured, *matches, *year, *ineligible)
        }
    }
}

fn finish(
    per_project: Vec<(String, Vec<Event>)>,
    metadata: BTreeMap<String, ProjectMeta>,
    truth: Truth,
) -> CliResult<SynthCorpus> {
    let logs = per_project
        .into_iter()
        .map(|(id, evs)| {
            let final_size = metadata.get(&id).and_then(|m| m.final_size);
            ProjectLog::new(id, evs, final_size)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SynthCorpus { logs, metadata, truth })
}

fn generic(spec: &SynthSpec, seed: u64) -> CliResult<SynthCorpus> {
    let window = span(spec.years)?;
    let mut projects = Vec::new();
    let mut truth = BTreeMap::new();
    for i in 0..spec.projects {
        let mut rng = project_rng(seed, i);
        let id = project_id(i);
        let actors = rng.random_range(spec.actors[0]..=spec.actors[1]);
        let mut pick = |r: &mut ChaCha8Rng| format!("u{}", r.random_range(0..actors));
        let mut events = Vec::new();
        let (w, d, c) = (count(&mut rng, spec.work), count(&mut rng, spec.discussion), count(&mut rng, spec.comment));
        scatter(&mut events, &mut rng, &id, w, Channel::Work, window, &mut pick);
        scatter(&mut events, &mut rng, &id, d, Channel::Discussion, window, &mut pick);
        scatter(&mut events, &mut rng, &id, c, Channel::Comment, window, &mut pick);
        truth.insert(id.clone(), GenericTruth { actors, work: w, discussion: d, comment: c });
        projects.push((id, events));
    }
    finish(projects, BTreeMap::new(), Truth::Generic { projects: truth })
}

fn crowded(
    spec: &SynthSpec,
    seed: u64,
    k: usize,
    team: [usize; 2],
    size: [u64; 2],
    scale: f64,
) -> CliResult<SynthCorpus> {
    let (start, end) = span(spec.years)?;
    let step = 3600;
    let threshold = start + step * (k as i64 - 1);
    if threshold + 1 >= end {
        return Err(CliError::Data("timeline too short for the early window".into()));
    }
    let later = (threshold + 1, end);
    let (ln_lo, ln_hi) = ((size[0] as f64).ln(), (size[1] as f64).ln());
    let mut projects = Vec::new();
    let mut metadata = BTreeMap::new();
    let mut truth = BTreeMap::new();
    for i in 0..spec.projects {
        let mut rng = project_rng(seed, i);
        let id = project_id(i);
        let t = rng.random_range(team[0]..=team[1]);
        let s = if ln_lo == ln_hi {
            size[0]
        } else {
            rng.random_range(ln_lo..ln_hi).exp().round() as u64
        };
        let d = (scale * t as f64 / s as f64).round() as u64;
        let mut events = Vec::new();
        for j in 0..k {
            push(&mut events, &id, format!("t{}", j % t), start + step * j as i64, Channel::Work);
        }
        let mut member = |r: &mut ChaCha8Rng| format!("t{}", r.random_range(0..t));
        scatter(&mut events, &mut rng, &id, d, Channel::Discussion, (start, threshold), &mut member);
        for j in 0..t {
            let at = rng.random_range(later.0..later.1);
            push(&mut events, &id, format!("t{j}"), at, Channel::Discussion);
        }
        // Outsiders only work or comment, so they never join the engaged set.
        let outsiders = rng.random_range(spec.actors[0]..=spec.actors[1]);
        let mut anyone = |r: &mut ChaCha8Rng| {
            let j = r.random_range(0..t + outsiders);
            if j < t { format!("t{j}") } else { format!("o{}", j - t) }
        };
        let (w, dd, c) = (count(&mut rng, spec.work), count(&mut rng, spec.discussion), count(&mut rng, spec.comment));
        scatter(&mut events, &mut rng, &id, w, Channel::Work, later, &mut anyone);
        scatter(&mut events, &mut rng, &id, dd, Channel::Discussion, later, &mut member);
        scatter(&mut events, &mut rng, &id, c, Channel::Comment, (start, end), &mut anyone);
        metadata.insert(
            id.clone(),
            ProjectMeta { project_id: id.clone(), featured_year: None, watchers: None, final_size: Some(s) },
        );
        truth.insert(id.clone(), CrowdTruth { team_size: t, size: s, coordination: d });
        projects.push((id, events));
    }
    finish(projects, metadata, Truth::Crowdedness { k, projects: truth })
}

/// Volume levels 100 * 1.12^i. Adjacent levels are far enough apart that a
/// value within 5% above one level is never within 5% of another.
fn level(i: usize) -> u64 {
    (100.0 * 1.12f64.powi(i as i32)).round() as u64
}

enum Role {
    Featured,
    Ineligible,
    Match(usize),
    Filler,
}

fn cohort(
    spec: &SynthSpec,
    seed: u64,
    n_featured: usize,
    matches: usize,
    year: i32,
    n_ineligible: usize,
) -> CliResult<SynthCorpus> {
    const TOLERANCE: f64 = 0.05;
    let (start, end) = span(spec.years)?;
    let (y0, y1) = (year_start(year)?, year_start(year + 1)?);

    // Global layout: which index plays which role, and the featured cells.
    let mut layout = project_rng(seed, usize::MAX >> 1);
    let mut ids: Vec<usize> = (0..spec.projects).collect();
    ids.shuffle(&mut layout);
    let side = (n_featured as f64).sqrt().ceil() as usize;
    let mut cells: Vec<(usize, usize)> = (0..side).flat_map(|p| (0..side).map(move |q| (p, q))).collect();
    cells.shuffle(&mut layout);

    let mut roles: Vec<(usize, Role)> = Vec::new();
    let mut next = ids.into_iter();
    let mut featured_idx = Vec::new();
    for _ in 0..n_featured {
        let idx = next.next().expect("validated");
        featured_idx.push(idx);
        roles.push((idx, Role::Featured));
    }
    for f in 0..n_featured {
        for _ in 0..matches {
            roles.push((next.next().expect("validated"), Role::Match(f)));
        }
    }
    for _ in 0..n_ineligible {
        roles.push((next.next().expect("validated"), Role::Ineligible));
    }
    roles.extend(next.map(|idx| (idx, Role::Filler)));
    roles.sort_by_key(|(idx, _)| *idx);

    let featured_volume = |f: usize| {
        let (p, q) = cells[f];
        (level(p), level(q))
    };
    let featured_slot: BTreeMap<usize, usize> = featured_idx.iter().enumerate().map(|(f, idx)| (*idx, f)).collect();

    let mut projects = Vec::new();
    let mut metadata = BTreeMap::new();
    let mut volumes: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut planted: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut featured_ids: Vec<String> = Vec::new();
    let mut ineligible = Vec::new();
    for (idx, role) in &roles {
        let mut rng = project_rng(seed, *idx);
        let id = project_id(*idx);
        let (before, after) = match role {
            Role::Featured => featured_volume(featured_slot[idx]),
            Role::Match(f) => {
                let (b, a) = featured_volume(*f);
                // Strictly inside the window, and strictly more prior work.
                let db = rng.random_range(1..=((TOLERANCE * b as f64).ceil() as u64 - 1).max(1));
                let reach = (TOLERANCE * a as f64).ceil() as i64 - 1;
                let da = rng.random_range(-reach..=reach);
                planted.entry(project_id(featured_idx[*f])).or_default().push(id.clone());
                (b + db, (a as i64 + da) as u64)
            }
            Role::Ineligible => (0, rng.random_range(100..=200)),
            Role::Filler => (rng.random_range(5..=60), rng.random_range(5..=60)),
        };
        let during = rng.random_range(0..=20);
        let actors = rng.random_range(spec.actors[0]..=spec.actors[1]);
        let mut pick = |r: &mut ChaCha8Rng| format!("u{}", r.random_range(0..actors));
        let mut events = Vec::new();
        scatter(&mut events, &mut rng, &id, before, Channel::Work, (start, y0), &mut pick);
        scatter(&mut events, &mut rng, &id, during, Channel::Work, (y0, y1), &mut pick);
        scatter(&mut events, &mut rng, &id, after, Channel::Work, (y1, end), &mut pick);
        let (d, c) = (count(&mut rng, spec.discussion), count(&mut rng, spec.comment));
        scatter(&mut events, &mut rng, &id, d, Channel::Discussion, (start, end), &mut pick);
        scatter(&mut events, &mut rng, &id, c, Channel::Comment, (start, end), &mut pick);
        match role {
            Role::Featured => featured_ids.push(id.clone()),
            Role::Ineligible => ineligible.push(id.clone()),
            Role::Match(_) | Role::Filler => {}
        }
        if matches!(role, Role::Featured | Role::Ineligible) {
            metadata.insert(
                id.clone(),
                ProjectMeta { project_id: id.clone(), featured_year: Some(year), watchers: None, final_size: None },
            );
        } else {
            volumes.insert(id.clone(), (before, after));
        }
        if matches!(role, Role::Featured) {
            volumes.insert(id.clone(), (before, after));
        }
        projects.push((id, events));
    }

    let mut featured = BTreeMap::new();
    for fid in &featured_ids {
        let (b, a) = volumes[fid];
        let eligible: Vec<String> = volumes
            .iter()
            .filter(|(id, _)| !featured_ids.contains(id))
            .filter(|(_, &(cb, ca))| {
                (cb as f64 - b as f64).abs() / (b as f64) < TOLERANCE
                    && (ca as f64 - a as f64).abs() / (a as f64) < TOLERANCE
                    && b < cb
            })
            .map(|(id, _)| id.clone())
            .collect();
        let mut p = planted.remove(fid).unwrap_or_default();
        p.sort();
        featured.insert(fid.clone(), FeaturedTruth { before: b, after: a, planted: p, eligible });
    }
    ineligible.sort();
    finish(
        projects,
        metadata,
        Truth::Cohort { year, tolerance: TOLERANCE, featured, ineligible },
    )
}

/// The corpus files as `(file name, bytes)`: events, metadata, truth.
pub fn render(corpus: &SynthCorpus) -> CliResult<Vec<(String, Vec<u8>)>> {
    let mut events = Vec::new();
    write_events(&corpus.logs, &mut events)?;
    let mut metadata = Vec::new();
    write_metadata(&corpus.metadata, &mut metadata)?;
    let mut truth = serde_json::to_vec_pretty(&corpus.truth).map_err(|e| CliError::Data(e.to_string()))?;
    truth.push(b'\n');
    Ok(vec![
        (EVENTS_FILE.to_string(), events),
        (METADATA_FILE.to_string(), metadata),
        (TRUTH_FILE.to_string(), truth),
    ])
}

/// Writes the corpus files into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    for (name, bytes) in render(corpus)? {
        fs::write(dir.join(&name), bytes)
            .map_err(|e| CliError::Data(format!("cannot write {name}: {e}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use coordination::analytics::{crowdedness_profile, CrowdednessConfig};
    use coordination::cohort::edit_epoch_counts;

    #[test]
    fn fixed_volumes_give_declared_counts() {
        let spec = SynthSpec {
            projects: 10,
            actors: [3, 3],
            work: [7, 7],
            discussion: [2, 2],
            comment: [0, 0],
            years: [2001, 2003],
            plant: None,
        };
        let corpus = generate(&spec, 1).unwrap();
        assert_eq!(corpus.logs.len(), 10);
        for log in &corpus.logs {
            assert_eq!(log.count(Channel::Work), 7);
            assert_eq!(log.count(Channel::Discussion), 2);
            assert_eq!(log.count(Channel::Comment), 0);
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = preset("small").unwrap();
        let a = generate(&spec, 9).unwrap();
        let b = generate(&spec, 9).unwrap();
        assert_eq!(a.logs, b.logs);
        assert_ne!(a.logs, generate(&spec, 10).unwrap().logs);
    }

    #[test]
    fn planted_crowdedness_is_measured_exactly() {
        let spec = SynthSpec { projects: 30, ..preset("crowded").unwrap() };
        let corpus = generate(&spec, 4).unwrap();
        let Truth::Crowdedness { k, projects } = &corpus.truth else { panic!() };
        let cfg = CrowdednessConfig { k: *k, ..CrowdednessConfig::default() };
        for log in &corpus.logs {
            let p = crowdedness_profile(log, &cfg).unwrap();
            let t = &projects[log.project_id()];
            assert_eq!(p.team_size(), t.team_size);
            assert_eq!(p.early_coordination, t.coordination);
            assert_eq!(p.output_size, t.size);
        }
    }

    #[test]
    fn planted_cohort_volumes() {
        let spec = SynthSpec { projects: 200, ..preset("cohort").unwrap() };
        let corpus = generate(&spec, 2).unwrap();
        let Truth::Cohort { year, featured, ineligible, .. } = &corpus.truth else { panic!() };
        assert_eq!(featured.len(), 40);
        assert_eq!(ineligible.len(), 3);
        for (fid, t) in featured {
            let log = corpus.logs.iter().find(|l| l.project_id() == fid).unwrap();
            let c = edit_epoch_counts(log, *year).unwrap();
            assert_eq!((c.before, c.after), (t.before, t.after));
            assert_eq!(t.planted.len(), 3);
            assert_eq!(t.planted, t.eligible, "{fid}");
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut spec = preset("small").unwrap();
        spec.work = [5, 1];
        assert!(generate(&spec, 0).is_err());
        let spec = SynthSpec { projects: 5, ..preset("cohort").unwrap() };
        assert!(generate(&spec, 0).is_err());
        assert!(preset("nope").is_err());
    }
}
