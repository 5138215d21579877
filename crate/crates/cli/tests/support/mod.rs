//! Brute-force references shared by the integration targets.

#![allow(dead_code)]

use std::collections::BTreeMap;

/// Distribution of the net change in finished parts for one wandering user,
/// enumerating both picks over concrete part indices.
pub fn two_pick_deltas(c: usize, n: usize, alpha: f64) -> BTreeMap<i64, f64> {
    fn work(states: Vec<(Vec<bool>, f64)>, part: usize, alpha: f64) -> Vec<(Vec<bool>, f64)> {
        let mut out = Vec::new();
        for (state, p) in states {
            if !state[part] {
                let mut s = state.clone();
                s[part] = true;
                out.push((s, p));
            } else {
                out.push((state.clone(), p * (1.0 - alpha)));
                let mut s = state;
                s[part] = false;
                out.push((s, p * alpha));
            }
        }
        out
    }
    let start: Vec<bool> = (0..n).map(|i| i < c).collect();
    let pick = 1.0 / (n * n) as f64;
    let mut dist = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            for (state, p) in work(work(vec![(start.clone(), pick)], i, alpha), j, alpha) {
                let k = state.iter().filter(|f| **f).count() as i64 - c as i64;
                *dist.entry(k).or_insert(0.0) += p;
            }
        }
    }
    dist
}

/// Minimal covering subset by exhaustive search; `x = num / den`. Among
/// minimal subsets the lexicographically smallest rank vector wins, ranks
/// following (count descending, id ascending).
pub fn brute_force_core(counts: &BTreeMap<String, u64>, num: u64, den: u64) -> Vec<String> {
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

/// Every size-`k` subset of `0..n`.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..(1 << n))
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

fn u_pairwise(a: &[f64], b: &[f64]) -> u64 {
    a.iter().map(|x| b.iter().filter(|y| x > *y).count() as u64).sum()
}

/// Two-sided Mann-Whitney p-value from every relabelling of the pooled sample.
pub fn enumerated_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mean2 = (a.len() * b.len()) as i64;
    let dev = |u: u64| (2 * u as i64 - mean2).abs();
    let observed = dev(u_pairwise(a, b));
    let splits = subsets(pooled.len(), a.len());
    let extreme = splits
        .iter()
        .filter(|idx| {
            let xa: Vec<f64> = idx.iter().map(|&i| pooled[i]).collect();
            let xb: Vec<f64> = (0..pooled.len()).filter(|i| !idx.contains(i)).map(|i| pooled[i]).collect();
            dev(u_pairwise(&xa, &xb)) >= observed
        })
        .count();
    extreme as f64 / splits.len() as f64
}

/// Days since 1970-01-01 of a proleptic Gregorian date.
pub fn days_from_civil(year: i64, month: i64, day: i64) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (month + 9) % 12;
    let doy = (153 * mp + 2) / 5 + day - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

pub fn jan_first(year: i64) -> i64 {
    days_from_civil(year, 1, 1) * 86_400
}
