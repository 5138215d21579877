//! Significance tests and corpus-level aggregation: Mann-Whitney U with
//! banded p-values, median-split quadrants and decile-binned heatmaps.

use std::fmt;
use std::io::{self, Write};

use statrs::function::erf::erfc;

use crate::{Error, Result};

/// Largest `n_a * n_b` for which tie-free samples get the exact null
/// distribution.
pub const EXACT_MAX_PRODUCT: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Band {
    /// p < 0.001
    P001,
    /// p < 0.01
    P01,
    /// p < 0.05
    P05,
    NotSignificant,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::P001 => "p001",
            Band::P01 => "p01",
            Band::P05 => "p05",
            Band::NotSignificant => "ns",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UMethod {
    Exact,
    NormalApprox,
}

impl UMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            UMethod::Exact => "exact",
            UMethod::NormalApprox => "normal_approx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UTestResult {
    /// `min(U_a, U_b)`.
    pub u_statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub band: Band,
    pub method: UMethod,
}

pub fn significance_band(p: f64) -> Result<Band> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("p-value must lie in (0, 1], got {p}")));
    }
    Ok(if p < 0.001 {
        Band::P001
    } else if p < 0.01 {
        Band::P01
    } else if p < 0.05 {
        Band::P05
    } else {
        Band::NotSignificant
    })
}

/// Midranks of `values` (1-based), plus the sizes of all tie groups.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Number of orderings of `m` and `n` items giving each value of U, for
/// U in `0..=m*n`.
fn u_counts(m: usize, n: usize) -> Vec<u64> {
    // counts[j][u] for the current i; f(i, j, u) = f(i-1, j, u-j) + f(i, j-1, u).
    let top = m * n;
    let mut prev: Vec<Vec<u64>> = (0..=n)
        .map(|_| {
            let mut v = vec![0u64; top + 1];
            v[0] = 1;
            v
        })
        .collect();
    for _ in 1..=m {
        let mut cur: Vec<Vec<u64>> = vec![vec![0u64; top + 1]; n + 1];
        cur[0][0] = 1;
        for j in 1..=n {
            for u in 0..=top {
                let from_a = if u >= j { prev[j][u - j] } else { 0 };
                cur[j][u] = from_a + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

/// Largest pooled size for which forced exact counts fit in `u64`.
pub const EXACT_MAX_POOLED: usize = 60;

/// Two-sided Mann-Whitney U test.
///
/// Tie-free samples with `n_a * n_b <= 400` use the exact null distribution;
/// otherwise the normal approximation with tie and continuity corrections.
pub fn mann_whitney_u(sample_a: &[f64], sample_b: &[f64]) -> Result<UTestResult> {
    mann_whitney_u_with(sample_a, sample_b, None)
}

/// As [`mann_whitney_u`], optionally forcing the method. Forcing the exact
/// method fails on ties or when the pooled size exceeds [`EXACT_MAX_POOLED`].
pub fn mann_whitney_u_with(
    sample_a: &[f64],
    sample_b: &[f64],
    method: Option<UMethod>,
) -> Result<UTestResult> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::domain("both samples must be non-empty"));
    }
    if sample_a.iter().chain(sample_b).any(|v| v.is_nan()) {
        return Err(Error::domain("samples must not contain NaN"));
    }
    let (na, nb) = (sample_a.len(), sample_b.len());
    let pooled: Vec<f64> = sample_a.iter().chain(sample_b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..na].iter().sum();
    let u_a = rank_sum_a - (na * (na + 1)) as f64 / 2.0;
    let u_b = (na * nb) as f64 - u_a;
    let u = u_a.min(u_b);

    let method = match method {
        Some(UMethod::Exact) if !ties.is_empty() => {
            return Err(Error::domain("exact method needs tie-free samples"))
        }
        Some(UMethod::Exact) if na + nb > EXACT_MAX_POOLED => {
            return Err(Error::Resource(format!(
                "exact method supports at most {EXACT_MAX_POOLED} pooled values"
            )))
        }
        Some(m) => m,
        None if ties.is_empty() && na * nb <= EXACT_MAX_PRODUCT => UMethod::Exact,
        None => UMethod::NormalApprox,
    };
    let p_value = match method {
        UMethod::Exact => exact_p(na, nb, u),
        UMethod::NormalApprox => normal_p(na, nb, u, &ties),
    };
    Ok(UTestResult {
        u_statistic: u,
        p_value,
        band: significance_band(p_value)?,
        method,
    })
}

fn exact_p(na: usize, nb: usize, u: f64) -> f64 {
    let counts = u_counts(na, nb);
    let total: u64 = counts.iter().sum();
    // Tie-free U is integral.
    let below: u64 = counts[..=u as usize].iter().sum();
    (2.0 * below as f64 / total as f64).min(1.0)
}

fn normal_p(na: usize, nb: usize, u: f64, ties: &[usize]) -> f64 {
    let n = (na + nb) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_term);
    let p = if var <= 0.0 {
        1.0
    } else {
        let mean = (na * nb) as f64 / 2.0;
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    // An underflowed tail still reports a positive p-value.
    p.max(f64::MIN_POSITIVE)
}

/// Median with the two middle values averaged; `None` for empty input.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// Nearest-rank percentile of sorted data, `pct` in `(0, 100]`.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// One project's crowdedness measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrowdRecord {
    /// Output size.
    pub size: f64,
    /// Early team size.
    pub team_size: f64,
    /// Early coordination volume.
    pub coordination: f64,
}

fn check_records(records: &[CrowdRecord], min: usize) -> Result<()> {
    if records.len() < min {
        return Err(Error::Domain(format!(
            "need at least {min} records, got {}",
            records.len()
        )));
    }
    if records
        .iter()
        .any(|r| r.size.is_nan() || r.team_size.is_nan() || r.coordination.is_nan())
    {
        return Err(Error::domain("records must not contain NaN"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Low,
    High,
}

impl Level {
    /// Values equal to the median go to the high side.
    fn split(value: f64, median: f64) -> Level {
        if value < median {
            Level::Low
        } else {
            Level::High
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quadrant {
    pub size: Level,
    pub team: Level,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant { size: Level::Low, team: Level::Low },
        Quadrant { size: Level::Low, team: Level::High },
        Quadrant { size: Level::High, team: Level::Low },
        Quadrant { size: Level::High, team: Level::High },
    ];

    /// Small output with a large team.
    pub const CROWDED: Quadrant = Quadrant { size: Level::Low, team: Level::High };

    fn index(self) -> usize {
        Quadrant::ALL.iter().position(|q| *q == self).expect("listed")
    }

    pub fn label(self) -> String {
        format!("size_{}/team_{}", self.size.as_str(), self.team.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrantCell {
    pub quadrant: Quadrant,
    pub count: usize,
    pub median_coordination: Option<f64>,
    /// Median of coordination divided by team size.
    pub median_per_member: Option<f64>,
    pub coordination: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTest {
    pub a: Quadrant,
    pub b: Quadrant,
    /// `None` when either cell is empty.
    pub result: Option<UTestResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadrantSummary {
    pub size_median: f64,
    pub team_median: f64,
    /// Cells in [`Quadrant::ALL`] order.
    pub cells: Vec<QuadrantCell>,
    pub comparisons: Vec<PairTest>,
}

impl QuadrantSummary {
    pub fn cell(&self, q: Quadrant) -> &QuadrantCell {
        &self.cells[q.index()]
    }

    /// Populated cell with the largest median coordination (first wins ties).
    pub fn busiest(&self) -> Option<Quadrant> {
        self.cells
            .iter()
            .filter_map(|c| c.median_coordination.map(|m| (c.quadrant, m)))
            .fold(None, |best: Option<(Quadrant, f64)>, (q, m)| match best {
                Some((_, bm)) if bm >= m => best,
                _ => Some((q, m)),
            })
            .map(|(q, _)| q)
    }

    /// Long-format cell table, then the pairwise p-value matrix.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# size_median={:.6}", self.size_median)?;
        writeln!(out, "# team_median={:.6}", self.team_median)?;
        writeln!(out, "size,team,count,median_coordination,median_coordination_per_member")?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{}",
                c.quadrant.size.as_str(),
                c.quadrant.team.as_str(),
                c.count,
                fmt_opt(c.median_coordination),
                fmt_opt(c.median_per_member)
            )?;
        }
        writeln!(out, "# pairwise Mann-Whitney U p-values on coordination")?;
        write!(out, "cell")?;
        for q in Quadrant::ALL {
            write!(out, ",{}", q.label())?;
        }
        writeln!(out)?;
        for a in Quadrant::ALL {
            write!(out, "{}", a.label())?;
            for b in Quadrant::ALL {
                let p = if a == b {
                    "NA".to_string()
                } else {
                    self.comparisons
                        .iter()
                        .find(|t| (t.a == a && t.b == b) || (t.a == b && t.b == a))
                        .and_then(|t| t.result)
                        .map_or_else(|| "NA".to_string(), |r| format!("{:.6}", r.p_value))
                };
                write!(out, ",{p}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

/// Splits records at the corpus medians of size and team size and compares
/// coordination across the four cells.
pub fn median_split_quadrants(records: &[CrowdRecord]) -> Result<QuadrantSummary> {
    check_records(records, 4)?;
    if records.iter().any(|r| r.team_size <= 0.0) {
        return Err(Error::domain("team sizes must be positive"));
    }
    let sizes: Vec<f64> = records.iter().map(|r| r.size).collect();
    let teams: Vec<f64> = records.iter().map(|r| r.team_size).collect();
    let size_median = median(&sizes).expect("non-empty");
    let team_median = median(&teams).expect("non-empty");

    let mut members: Vec<Vec<&CrowdRecord>> = vec![Vec::new(); 4];
    for r in records {
        let q = Quadrant {
            size: Level::split(r.size, size_median),
            team: Level::split(r.team_size, team_median),
        };
        members[q.index()].push(r);
    }
    let cells: Vec<QuadrantCell> = Quadrant::ALL
        .iter()
        .zip(&members)
        .map(|(&quadrant, rs)| {
            let coordination: Vec<f64> = rs.iter().map(|r| r.coordination).collect();
            let per_member: Vec<f64> = rs.iter().map(|r| r.coordination / r.team_size).collect();
            QuadrantCell {
                quadrant,
                count: rs.len(),
                median_coordination: median(&coordination),
                median_per_member: median(&per_member),
                coordination,
            }
        })
        .collect();
    let mut comparisons = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            let (a, b) = (&cells[i], &cells[j]);
            let result = if a.count > 0 && b.count > 0 {
                Some(mann_whitney_u(&a.coordination, &b.coordination)?)
            } else {
                None
            };
            comparisons.push(PairTest {
                a: a.quadrant,
                b: b.quadrant,
                result,
            });
        }
    }
    Ok(QuadrantSummary {
        size_median,
        team_median,
        cells,
        comparisons,
    })
}

/// How records in a heatmap cell are summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellAggregate {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub count: usize,
    /// Aggregate of `ln(1 + coordination)`; `None` for empty cells.
    pub value: Option<f64>,
}

pub const DECILES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedGrid {
    /// Minimum, the nine nearest-rank deciles, maximum.
    pub size_edges: Vec<f64>,
    pub team_edges: Vec<f64>,
    /// Indexed `[team_bin][size_bin]`, bin 0 lowest.
    pub cells: Vec<Vec<GridCell>>,
    pub aggregate: CellAggregate,
}

impl BinnedGrid {
    pub fn cell(&self, team_bin: usize, size_bin: usize) -> &GridCell {
        &self.cells[team_bin][size_bin]
    }

    pub fn total_count(&self) -> usize {
        self.cells.iter().flatten().map(|c| c.count).sum()
    }

    /// Edge vectors as `#` lines, then the value matrix and the count matrix,
    /// each with rows by team bin (highest first) and columns by size bin.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join(";")
        };
        let agg = match self.aggregate {
            CellAggregate::Mean => "mean",
            CellAggregate::Median => "median",
        };
        writeln!(out, "# value={agg}(log1p(coordination))")?;
        writeln!(out, "# size_edges={}", join(&self.size_edges))?;
        writeln!(out, "# team_edges={}", join(&self.team_edges))?;
        let header = (0..DECILES).map(|b| b.to_string()).collect::<Vec<_>>().join(",");
        writeln!(out, "team_bin\\size_bin,{header}")?;
        for t in (0..DECILES).rev() {
            let row: Vec<String> = self.cells[t].iter().map(|c| fmt_opt(c.value)).collect();
            writeln!(out, "{t},{}", row.join(","))?;
        }
        writeln!(out, "# counts")?;
        writeln!(out, "team_bin\\size_bin,{header}")?;
        for t in (0..DECILES).rev() {
            let row: Vec<String> = self.cells[t].iter().map(|c| c.count.to_string()).collect();
            writeln!(out, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

fn decile_edges(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut edges = Vec::with_capacity(DECILES + 1);
    edges.push(sorted[0]);
    for j in 1..DECILES {
        edges.push(nearest_rank(&sorted, (j * 100 / DECILES) as f64));
    }
    edges.push(sorted[sorted.len() - 1]);
    edges
}

/// Bin index: number of interior edges strictly below `v`.
fn bin_of(v: f64, edges: &[f64]) -> usize {
    edges[1..DECILES]
        .iter()
        .filter(|e| **e < v)
        .count()
}

/// Percentile-binned 10x10 grid of `ln(1 + coordination)` over team size and
/// output size.
pub fn decile_heatmap(records: &[CrowdRecord], aggregate: CellAggregate) -> Result<BinnedGrid> {
    check_records(records, DECILES)?;
    let sizes: Vec<f64> = records.iter().map(|r| r.size).collect();
    let teams: Vec<f64> = records.iter().map(|r| r.team_size).collect();
    let size_edges = decile_edges(&sizes);
    let team_edges = decile_edges(&teams);
    let mut members: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); DECILES]; DECILES];
    for r in records {
        members[bin_of(r.team_size, &team_edges)][bin_of(r.size, &size_edges)]
            .push(r.coordination.ln_1p());
    }
    let cells = members
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|vals| GridCell {
                    count: vals.len(),
                    value: match aggregate {
                        _ if vals.is_empty() => None,
                        CellAggregate::Mean => Some(vals.iter().sum::<f64>() / vals.len() as f64),
                        CellAggregate::Median => median(&vals),
                    },
                })
                .collect()
        })
        .collect();
    Ok(BinnedGrid {
        size_edges,
        team_edges,
        cells,
        aggregate,
    })
}
