use std::collections::BTreeMap;

use coordination::analytics::{
    core_curve, crowdedness_profile, x_core, Channel, CrowdednessConfig, Event, ProjectLog,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CHANNELS: [Channel; 3] = [Channel::Work, Channel::Discussion, Channel::Comment];

fn event(actor: &str, t: i64, channel: Channel) -> Event {
    Event {
        project_id: "p".into(),
        actor_id: actor.into(),
        timestamp: t,
        channel,
        size_delta: None,
    }
}

fn random_log(rng: &mut ChaCha8Rng, max_actors: usize) -> ProjectLog {
    let actors = rng.random_range(1..=max_actors);
    let n = rng.random_range(1..=80);
    let mut events: Vec<Event> = (0..n)
        .map(|_| {
            let a = format!("a{:02}", rng.random_range(0..actors));
            event(&a, rng.random_range(0..1000), CHANNELS[rng.random_range(0..3)])
        })
        .collect();
    // At least one unit of work.
    events.push(event("a00", rng.random_range(0..1000), Channel::Work));
    ProjectLog::new("p", events, None).unwrap()
}

/// Minimal covering subset by exhaustive search over subsets of increasing
/// size. `x = num / den` exactly. Among minimal subsets the one whose sorted
/// rank vector is lexicographically smallest wins, ranks being positions in
/// (count descending, id ascending) order.
fn brute_force_core(counts: &BTreeMap<String, u64>, num: u64, den: u64) -> Vec<String> {
    let mut ranked: Vec<(&String, u64)> = counts.iter().map(|(a, c)| (a, *c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let total: u64 = ranked.iter().map(|r| r.1).sum();
    let m = ranked.len();
    let mut best: Option<Vec<usize>> = None;
    for mask in 1u32..(1 << m) {
        let members: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let covered: u64 = members.iter().map(|&i| ranked[i].1).sum();
        if covered * den < num * total {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => members.len() < b.len() || (members.len() == b.len() && members < *b),
        };
        if better {
            best = Some(members);
        }
    }
    best.unwrap().into_iter().map(|i| ranked[i].0.clone()).collect()
}

#[test]
fn x_core_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let log = random_log(&mut rng, 12);
        let counts = log.work_counts();
        for num in [1u64, 5, 10, 13, 25, 50, 51, 75, 90, 99, 100] {
            let x = num as f64 / 100.0;
            assert_eq!(
                x_core(&counts, x).unwrap(),
                brute_force_core(&counts, num, 100),
                "counts={counts:?} x={x}"
            );
        }
    }
}

#[test]
fn one_core_is_everyone() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let log = random_log(&mut rng, 12);
        let curve = core_curve(&log, &[1.0]).unwrap();
        assert_eq!(curve.core_size[0], log.work_counts().len());
        assert_eq!(curve.core_fraction[0], 1.0);
        for share in [&curve.d_share, &curve.c_share].into_iter().flatten() {
            assert_eq!(share[0], 1.0);
        }
    }
}

proptest! {
    #[test]
    fn cores_nest_and_shares_grow(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let log = random_log(&mut rng, 20);
        let xs: Vec<f64> = (1..=20).map(|i| i as f64 / 20.0).collect();
        let counts = log.work_counts();
        let curve = core_curve(&log, &xs).unwrap();
        for i in 1..xs.len() {
            let small = x_core(&counts, xs[i - 1]).unwrap();
            let big = x_core(&counts, xs[i]).unwrap();
            prop_assert!(small.len() <= big.len());
            prop_assert_eq!(&big[..small.len()], &small[..]);
            for share in [&curve.d_share, &curve.c_share].into_iter().flatten() {
                prop_assert!(share[i - 1] <= share[i]);
            }
        }
    }

    #[test]
    fn crowdedness_ignores_later_events(seed in any::<u64>(), extra in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events = Vec::new();
        for i in 0..60 {
            let a = format!("a{}", rng.random_range(0..6));
            events.push(event(&a, i * 10, CHANNELS[rng.random_range(0..2)]));
        }
        let cfg = CrowdednessConfig { k: 5, ..CrowdednessConfig::default() };
        let base = ProjectLog::new("p", events.clone(), Some(500)).unwrap();
        let Ok(before) = crowdedness_profile(&base, &cfg) else {
            return Ok(());
        };
        let engaged: Vec<String> = before.engaged_users.iter().cloned().collect();
        for j in 0..extra {
            let t = before.threshold_time + 1 + rng.random_range(0..1000);
            let pick = rng.random_range(0..4);
            events.push(match pick {
                // Engaged users may act on either channel.
                0 | 1 => event(&engaged[rng.random_range(0..engaged.len())], t, CHANNELS[pick]),
                // Newcomers only work, so they never join the engaged set.
                2 => event(&format!("new{j}"), t, Channel::Work),
                // Comments are not the configured coordination channel.
                _ => event(&format!("new{j}"), t, Channel::Comment),
            });
        }
        let extended = ProjectLog::new("p", events, Some(500)).unwrap();
        prop_assert_eq!(crowdedness_profile(&extended, &cfg).unwrap(), before);
    }
}
