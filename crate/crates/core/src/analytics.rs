//! Per-project metrics over time-ordered collaboration logs: x-cores,
//! coordination-share curves, crowdedness profiles and coordination per unit
//! of work.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    /// Contribution to the work product (article edit, commit).
    Work,
    /// Discussion-page edit.
    Discussion,
    /// Comment attached to a work event.
    Comment,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Work => "work",
            Channel::Discussion => "discussion",
            Channel::Comment => "comment",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "work" => Ok(Channel::Work),
            "discussion" => Ok(Channel::Discussion),
            "comment" => Ok(Channel::Comment),
            other => Err(Error::Domain(format!("unknown channel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub project_id: String,
    pub actor_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub channel: Channel,
    pub size_delta: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectLog {
    project_id: String,
    events: Vec<Event>,
    /// Eventual output size: bytes for articles, total commits for repositories.
    pub final_size: Option<u64>,
}

impl ProjectLog {
    /// Builds a log, sorting events by timestamp (stable on ties).
    pub fn new(
        project_id: impl Into<String>,
        mut events: Vec<Event>,
        final_size: Option<u64>,
    ) -> Result<Self> {
        let project_id = project_id.into();
        if let Some(e) = events.iter().find(|e| e.project_id != project_id) {
            return Err(Error::Domain(format!(
                "event for project '{}' in log of '{project_id}'",
                e.project_id
            )));
        }
        if let Some(e) = events.iter().find(|e| e.timestamp < 0) {
            return Err(Error::Domain(format!("negative timestamp {}", e.timestamp)));
        }
        events.sort_by_key(|e| e.timestamp);
        Ok(ProjectLog {
            project_id,
            events,
            final_size,
        })
    }

    pub fn project_id(&self) -> &str {
        &self.project_id
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn channel_events(&self, channel: Channel) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.channel == channel)
    }

    pub fn count(&self, channel: Channel) -> u64 {
        self.channel_events(channel).count() as u64
    }

    /// Work events per actor.
    pub fn work_counts(&self) -> BTreeMap<String, u64> {
        let mut counts = BTreeMap::new();
        for e in self.channel_events(Channel::Work) {
            *counts.entry(e.actor_id.clone()).or_insert(0) += 1;
        }
        counts
    }
}

fn check_fraction(x: f64) -> Result<()> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(Error::Domain(format!("x must lie in (0, 1], got {x}")));
    }
    Ok(())
}

/// Actors ranked for x-core membership: count descending, id ascending.
pub fn core_order(work_counts: &BTreeMap<String, u64>) -> Vec<(&str, u64)> {
    let mut ranked: Vec<(&str, u64)> = work_counts.iter().map(|(a, c)| (a.as_str(), *c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
}

/// True when `covered` units account for at least an `x` fraction of
/// `total`. A relative slack of 1e-12 absorbs rounding in `x * total`.
pub fn covers(covered: u64, total: u64, x: f64) -> bool {
    covered as f64 >= x * total as f64 - 1e-12 * total as f64
}

/// The smallest set of actors accounting for an `x` fraction of all work,
/// in core order. Ties in work count are broken by ascending actor id.
pub fn x_core(work_counts: &BTreeMap<String, u64>, x: f64) -> Result<Vec<String>> {
    check_fraction(x)?;
    let total: u64 = work_counts.values().sum();
    if total == 0 {
        return Err(Error::domain("x-core needs at least one unit of work"));
    }
    let mut core = Vec::new();
    let mut covered = 0;
    for (actor, count) in core_order(work_counts) {
        core.push(actor.to_string());
        covered += count;
        if covers(covered, total, x) {
            break;
        }
    }
    Ok(core)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreCurve {
    pub xs: Vec<f64>,
    pub core_size: Vec<usize>,
    /// Fraction of work participants in the x-core.
    pub core_fraction: Vec<f64>,
    /// Fraction of discussion events authored by x-core members; `None` when
    /// the participants wrote no discussion events.
    pub d_share: Option<Vec<f64>>,
    /// Same as `d_share` for comments.
    pub c_share: Option<Vec<f64>>,
}

/// x-core size and coordination shares at each `x`.
///
/// Shares are taken over coordination events authored by work participants,
/// so that the 1-core accounts for all of them.
pub fn core_curve(project: &ProjectLog, xs: &[f64]) -> Result<CoreCurve> {
    let counts = project.work_counts();
    if counts.is_empty() {
        return Err(Error::Domain(format!(
            "project '{}' has no work events",
            project.project_id
        )));
    }
    let by_actor = |channel: Channel| {
        let mut m: BTreeMap<&str, u64> = BTreeMap::new();
        for e in project.channel_events(channel) {
            if counts.contains_key(&e.actor_id) {
                *m.entry(e.actor_id.as_str()).or_insert(0) += 1;
            }
        }
        m
    };
    let discussion = by_actor(Channel::Discussion);
    let comments = by_actor(Channel::Comment);
    let share = |per_actor: &BTreeMap<&str, u64>, core: &[String]| {
        let total: u64 = per_actor.values().sum();
        let inside: u64 = core.iter().filter_map(|a| per_actor.get(a.as_str())).sum();
        inside as f64 / total as f64
    };

    let mut curve = CoreCurve {
        xs: xs.to_vec(),
        core_size: Vec::with_capacity(xs.len()),
        core_fraction: Vec::with_capacity(xs.len()),
        d_share: (!discussion.is_empty()).then(Vec::new),
        c_share: (!comments.is_empty()).then(Vec::new),
    };
    for &x in xs {
        let core = x_core(&counts, x)?;
        curve.core_size.push(core.len());
        curve.core_fraction.push(core.len() as f64 / counts.len() as f64);
        if let Some(d) = curve.d_share.as_mut() {
            d.push(share(&discussion, &core));
        }
        if let Some(c) = curve.c_share.as_mut() {
            c.push(share(&comments, &core));
        }
    }
    Ok(curve)
}

/// Number of `channel` events authored by members of the x-core.
pub fn core_coordination_volume(project: &ProjectLog, x: f64, channel: Channel) -> Result<u64> {
    let counts = project.work_counts();
    if counts.is_empty() {
        return Err(Error::Domain(format!(
            "project '{}' has no work events",
            project.project_id
        )));
    }
    let core: BTreeSet<String> = x_core(&counts, x)?.into_iter().collect();
    Ok(project
        .channel_events(channel)
        .filter(|e| core.contains(&e.actor_id))
        .count() as u64)
}

/// Whose coordination events count towards the early coordination volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoordinationScope {
    #[default]
    AllUsers,
    EngagedOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrowdednessConfig {
    /// Number of initial work events by engaged users that define the window.
    pub k: usize,
    /// Explicit coordination channel: discussion for wiki-style logs, comment
    /// for repository-style logs.
    pub channel: Channel,
    pub scope: CoordinationScope,
}

impl Default for CrowdednessConfig {
    fn default() -> Self {
        CrowdednessConfig {
            k: 100,
            channel: Channel::Discussion,
            scope: CoordinationScope::AllUsers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrowdednessProfile {
    /// Actors with at least one work and one coordination event.
    pub engaged_users: BTreeSet<String>,
    /// Timestamp of the k-th work event by engaged users.
    pub threshold_time: i64,
    /// Engaged users who authored one of those first k work events.
    pub early_team: BTreeSet<String>,
    /// Coordination events strictly before the threshold time.
    pub early_coordination: u64,
    /// Final output size; the total work count when the log carries none.
    pub output_size: u64,
}

impl CrowdednessProfile {
    pub fn team_size(&self) -> usize {
        self.early_team.len()
    }
}

pub fn crowdedness_profile(
    project: &ProjectLog,
    cfg: &CrowdednessConfig,
) -> Result<CrowdednessProfile> {
    if cfg.k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if cfg.channel == Channel::Work {
        return Err(Error::domain("coordination channel cannot be work"));
    }
    let workers: BTreeSet<&str> = project
        .channel_events(Channel::Work)
        .map(|e| e.actor_id.as_str())
        .collect();
    let engaged_users: BTreeSet<String> = project
        .channel_events(cfg.channel)
        .map(|e| e.actor_id.as_str())
        .filter(|a| workers.contains(a))
        .map(str::to_string)
        .collect();
    if engaged_users.is_empty() {
        return Err(Error::Ineligible(format!(
            "project '{}' has no actor with both work and {} events",
            project.project_id, cfg.channel
        )));
    }
    let early: Vec<&Event> = project
        .channel_events(Channel::Work)
        .filter(|e| engaged_users.contains(&e.actor_id))
        .take(cfg.k)
        .collect();
    if early.len() < cfg.k {
        return Err(Error::Ineligible(format!(
            "project '{}' has {} engaged work events, needs {}",
            project.project_id,
            early.len(),
            cfg.k
        )));
    }
    let threshold_time = early[cfg.k - 1].timestamp;
    let early_team = early.iter().map(|e| e.actor_id.clone()).collect();
    let early_coordination = project
        .channel_events(cfg.channel)
        .filter(|e| e.timestamp < threshold_time)
        .filter(|e| cfg.scope == CoordinationScope::AllUsers || engaged_users.contains(&e.actor_id))
        .count() as u64;
    Ok(CrowdednessProfile {
        engaged_users,
        threshold_time,
        early_team,
        early_coordination,
        output_size: project
            .final_size
            .unwrap_or_else(|| project.count(Channel::Work)),
    })
}

/// Comment events per work event.
pub fn coordination_per_work(project: &ProjectLog) -> Result<f64> {
    let work = project.count(Channel::Work);
    if work == 0 {
        return Err(Error::Domain(format!(
            "project '{}' has no work events",
            project.project_id
        )));
    }
    Ok(project.count(Channel::Comment) as f64 / work as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(actor: &str, t: i64, channel: Channel) -> Event {
        Event {
            project_id: "p".into(),
            actor_id: actor.into(),
            timestamp: t,
            channel,
            size_delta: None,
        }
    }

    fn counts(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(a, c)| (a.to_string(), *c)).collect()
    }

    #[test]
    fn log_sorts_stably() {
        let log = ProjectLog::new(
            "p",
            vec![
                ev("b", 5, Channel::Work),
                ev("a", 1, Channel::Work),
                ev("c", 5, Channel::Discussion),
            ],
            None,
        )
        .unwrap();
        let order: Vec<&str> = log.events().iter().map(|e| e.actor_id.as_str()).collect();
        assert_eq!(order, ["a", "b", "c"]);
        assert!(ProjectLog::new("q", vec![ev("a", 1, Channel::Work)], None).is_err());
        assert!(ProjectLog::new("p", vec![ev("a", -1, Channel::Work)], None).is_err());
    }

    #[test]
    fn x_core_examples() {
        let c = counts(&[("u1", 5), ("u2", 3), ("u3", 2)]);
        assert_eq!(x_core(&c, 0.5).unwrap(), ["u1"]);
        assert_eq!(x_core(&c, 1.0).unwrap(), ["u1", "u2", "u3"]);
        let c = counts(&[("u1", 4), ("u2", 4), ("u3", 2)]);
        assert_eq!(x_core(&c, 0.5).unwrap(), ["u1", "u2"]);
    }

    #[test]
    fn x_core_breaks_ties_by_id() {
        let c = counts(&[("b", 3), ("a", 3), ("c", 3)]);
        assert_eq!(x_core(&c, 0.3).unwrap(), ["a"]);
        assert_eq!(x_core(&c, 0.5).unwrap(), ["a", "b"]);
    }

    #[test]
    fn x_core_errors() {
        assert!(x_core(&BTreeMap::new(), 0.5).is_err());
        let c = counts(&[("a", 1)]);
        assert!(x_core(&c, 0.0).is_err());
        assert!(x_core(&c, 1.01).is_err());
        assert!(x_core(&c, f64::NAN).is_err());
    }

    #[test]
    fn proportional_coordination_has_zero_excess_share() {
        let mut events = Vec::new();
        for (i, a) in ["a", "b", "c", "d"].iter().enumerate() {
            for t in 0..3 {
                events.push(ev(a, (10 * i + t) as i64, Channel::Work));
            }
            events.push(ev(a, 100 + i as i64, Channel::Discussion));
        }
        let log = ProjectLog::new("p", events, None).unwrap();
        let curve = core_curve(&log, &[0.5, 1.0]).unwrap();
        let d = curve.d_share.unwrap();
        assert_eq!(d[0] - 0.5, 0.0);
        assert_eq!(d[1] - 1.0, 0.0);
        assert!(curve.c_share.is_none());
    }

    #[test]
    fn single_actor_curve() {
        let log = ProjectLog::new(
            "p",
            vec![
                ev("a", 1, Channel::Work),
                ev("a", 2, Channel::Discussion),
                ev("a", 3, Channel::Discussion),
            ],
            None,
        )
        .unwrap();
        let curve = core_curve(&log, &[0.1, 0.3, 1.0]).unwrap();
        assert_eq!(curve.core_fraction, [1.0; 3]);
        assert_eq!(curve.d_share.unwrap(), [1.0; 3]);
        assert_eq!(core_coordination_volume(&log, 0.3, Channel::Discussion).unwrap(), 2);
    }

    fn skewed_log() -> ProjectLog {
        // Work: a=6, b=3, c=1. Discussion: a=1, b=4, c=2, outsider z=5.
        // Comments: c=3.
        let mut events = Vec::new();
        let mut t = 0;
        let mut push = |actor: &str, n: usize, ch: Channel, events: &mut Vec<Event>| {
            for _ in 0..n {
                events.push(ev(actor, t, ch));
                t += 1;
            }
        };
        push("a", 6, Channel::Work, &mut events);
        push("b", 3, Channel::Work, &mut events);
        push("c", 1, Channel::Work, &mut events);
        push("a", 1, Channel::Discussion, &mut events);
        push("b", 4, Channel::Discussion, &mut events);
        push("c", 2, Channel::Discussion, &mut events);
        push("z", 5, Channel::Discussion, &mut events);
        push("c", 3, Channel::Comment, &mut events);
        ProjectLog::new("p", events, None).unwrap()
    }

    #[test]
    fn skewed_shares_by_hand() {
        let log = skewed_log();
        let curve = core_curve(&log, &[0.5, 0.9, 1.0]).unwrap();
        // 0.5 -> {a}; 0.9 -> {a, b}; 1.0 -> {a, b, c}.
        assert_eq!(curve.core_size, [1, 2, 3]);
        let d = curve.d_share.unwrap();
        assert!((d[0] - 1.0 / 7.0).abs() < 1e-15);
        assert!((d[1] - 5.0 / 7.0).abs() < 1e-15);
        assert_eq!(d[2], 1.0);
        assert_eq!(curve.c_share.unwrap(), [0.0, 0.0, 1.0]);
        assert_eq!(core_coordination_volume(&log, 0.5, Channel::Discussion).unwrap(), 1);
        assert_eq!(core_coordination_volume(&log, 0.9, Channel::Discussion).unwrap(), 5);
        assert_eq!(core_coordination_volume(&log, 1.0, Channel::Comment).unwrap(), 3);
    }

    #[test]
    fn curve_requires_work() {
        let log = ProjectLog::new("p", vec![ev("a", 1, Channel::Comment)], None).unwrap();
        assert!(core_curve(&log, &[0.5]).is_err());
        assert!(core_coordination_volume(&log, 0.5, Channel::Comment).is_err());
        assert!(coordination_per_work(&log).is_err());
    }

    fn cfg(k: usize) -> CrowdednessConfig {
        CrowdednessConfig {
            k,
            ..CrowdednessConfig::default()
        }
    }

    #[test]
    fn crowdedness_constructed_log() {
        let k = 6;
        let mut events = vec![
            ev("a", 0, Channel::Discussion),
            ev("x", 1, Channel::Discussion),
            ev("b", 2, Channel::Discussion),
        ];
        for t in 0..k as i64 {
            events.push(ev(if t % 2 == 0 { "a" } else { "b" }, 10 + t, Channel::Work));
        }
        // Worker without coordination: not engaged, ignored by the window.
        events.push(ev("w", 12, Channel::Work));
        events.push(ev("a", 15, Channel::Discussion)); // at T: excluded
        events.push(ev("b", 30, Channel::Discussion));
        let log = ProjectLog::new("p", events, Some(1234)).unwrap();
        let prof = crowdedness_profile(&log, &cfg(k)).unwrap();
        assert_eq!(prof.threshold_time, 15);
        assert_eq!(prof.team_size(), 2);
        assert_eq!(prof.early_coordination, 3);
        assert_eq!(prof.output_size, 1234);
        let engaged = crowdedness_profile(
            &log,
            &CrowdednessConfig {
                k,
                scope: CoordinationScope::EngagedOnly,
                ..CrowdednessConfig::default()
            },
        )
        .unwrap();
        assert_eq!(engaged.early_coordination, 2);
    }

    #[test]
    fn crowdedness_without_coordination_is_ineligible() {
        let log = ProjectLog::new(
            "p",
            (0..200).map(|t| ev("a", t, Channel::Work)).collect(),
            None,
        )
        .unwrap();
        assert!(matches!(crowdedness_profile(&log, &cfg(100)), Err(Error::Ineligible(_))));
    }

    #[test]
    fn crowdedness_with_too_few_work_events_is_ineligible() {
        let log = ProjectLog::new(
            "p",
            vec![ev("a", 0, Channel::Work), ev("a", 1, Channel::Discussion)],
            None,
        )
        .unwrap();
        assert!(matches!(crowdedness_profile(&log, &cfg(2)), Err(Error::Ineligible(_))));
        assert!(crowdedness_profile(&log, &cfg(0)).is_err());
    }

    #[test]
    fn crowdedness_k_one() {
        let log = ProjectLog::new(
            "p",
            vec![
                ev("a", 3, Channel::Discussion),
                ev("b", 5, Channel::Work),
                ev("a", 7, Channel::Work),
                ev("b", 9, Channel::Discussion),
            ],
            None,
        )
        .unwrap();
        let prof = crowdedness_profile(&log, &cfg(1)).unwrap();
        assert_eq!(prof.threshold_time, 5);
        assert_eq!(prof.early_coordination, 1);
        assert_eq!(prof.early_team.iter().collect::<Vec<_>>(), ["b"]);
        assert_eq!(prof.output_size, 2);
    }

    #[test]
    fn comments_per_commit() {
        let mut events: Vec<Event> = (0..10).map(|t| ev("a", t, Channel::Work)).collect();
        let log = ProjectLog::new("p", events.clone(), None).unwrap();
        assert_eq!(coordination_per_work(&log).unwrap(), 0.0);
        events.extend((0..5).map(|t| ev("b", t, Channel::Comment)));
        let log = ProjectLog::new("p", events, None).unwrap();
        assert_eq!(coordination_per_work(&log).unwrap(), 0.5);
    }

    #[test]
    fn constant_ratio_corpus_gives_flat_curve() {
        for commits in [4u64, 12, 40, 100] {
            let mut events: Vec<Event> =
                (0..commits as i64).map(|t| ev("a", t, Channel::Work)).collect();
            events.extend((0..commits as i64 / 4).map(|t| ev("b", t, Channel::Comment)));
            let log = ProjectLog::new("p", events, None).unwrap();
            assert_eq!(coordination_per_work(&log).unwrap(), 0.25);
        }
    }
}
