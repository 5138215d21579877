//! Deterministic approximation of the process and the search for the
//! coordination level that maximizes finished parts.
//!
//! Replacing the random finished count by its expectation turns the
//! per-user update into the affine recurrence `P(i+1) = A * P(i) + P0`, with
//!
//! ```text
//! A  = (1 - beta) (1 + alpha)^2 / N^2 - 2 (1 - beta) (1 + alpha) / N + 1
//! P0 = -(1 - beta) (1 + alpha) / N + 2 - beta
//! ```
//!
//! whose solution from `P(0) = 0` is `P(E) = P0 (A^E - 1) / (A - 1)`, or
//! `E * P0` when `A = 1`.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use num_traits::Float;
use rayon::prelude::*;

use crate::model::{self, check_unit, ModelParams, DEFAULT_DP_BUDGET};
use crate::{Error, Probability, Result};

/// Width of the band around `A = 1` treated as exactly one.
pub const UNIT_MULTIPLIER_EPS: f64 = 1e-12;

/// Objective values closer than this are ties; ties go to the smaller beta.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecurrenceCoeffs<T> {
    /// Multiplier `A`.
    pub a: T,
    /// Constant term `P0`, equal to the expected progress of the first user.
    pub p0: T,
}

fn lift<T: Float>(v: f64) -> T {
    T::from(v).expect("f64 constant representable")
}

fn check_inputs<T: Float + Probability>(n_parts: usize, alpha: T, beta: T) -> Result<()> {
    if n_parts == 0 {
        return Err(Error::domain("n_parts must be at least 1"));
    }
    check_unit("alpha", &alpha)?;
    check_unit("beta", &beta)
}

pub fn recurrence_coeffs<T: Float + Probability>(
    n_parts: usize,
    alpha: T,
    beta: T,
) -> Result<RecurrenceCoeffs<T>> {
    check_inputs(n_parts, alpha, beta)?;
    let n = lift::<T>(n_parts as f64);
    let wander = T::one() - beta;
    let spread = T::one() + alpha;
    let two = lift::<T>(2.0);
    let a = wander * spread * spread / (n * n) - two * wander * spread / n + T::one();
    let p0 = -(wander * spread / n) + two - beta;
    Ok(RecurrenceCoeffs { a, p0 })
}

/// `(A^E - 1) / (A - 1)` without cancellation near `A = 1`.
fn geometric_sum<T: Float>(a: T, e: usize) -> T {
    let e_t = lift::<T>(e as f64);
    let gap = a - T::one();
    if gap.abs() <= lift(UNIT_MULTIPLIER_EPS) {
        e_t
    } else if a > T::zero() {
        (e_t * gap.ln_1p()).exp_m1() / gap
    } else {
        // A lies in [0, 1]; only A = 0 lands here.
        (a.powi(e as i32) - T::one()) / gap
    }
}

/// Closed-form expected finished parts after `n_users` users, unclamped.
pub fn approx_expectation<T: Float + Probability>(
    n_parts: usize,
    n_users: usize,
    alpha: T,
    beta: T,
) -> Result<T> {
    approx_expectation_clamped(n_parts, n_users, alpha, beta, false)
}

/// Closed form with optional saturation at `n_parts`. Without the clamp the
/// recurrence overshoots: at `beta = 1` it returns `n_users` even when that
/// exceeds `n_parts`.
pub fn approx_expectation_clamped<T: Float + Probability>(
    n_parts: usize,
    n_users: usize,
    alpha: T,
    beta: T,
    clamp_at_n: bool,
) -> Result<T> {
    let RecurrenceCoeffs { a, p0 } = recurrence_coeffs(n_parts, alpha, beta)?;
    let value = p0 * geometric_sum(a, n_users);
    Ok(if clamp_at_n {
        value.min(lift(n_parts as f64))
    } else {
        value
    })
}

/// Iterates `P <- A * P + P0` from zero, `n_users` times.
pub fn iterate_recurrence<T: Float + Probability>(
    n_parts: usize,
    n_users: usize,
    alpha: T,
    beta: T,
) -> Result<T> {
    let RecurrenceCoeffs { a, p0 } = recurrence_coeffs(n_parts, alpha, beta)?;
    Ok((0..n_users).fold(T::zero(), |p, _| a * p + p0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    /// Closed form of the deterministic recurrence.
    ClosedForm,
    /// Exact expectation by dynamic programming over the finished count.
    ExactDp,
    /// Sample mean over simulated runs.
    MonteCarlo,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::ClosedForm => "closed_form",
            Objective::ExactDp => "exact_dp",
            Objective::MonteCarlo => "monte_carlo",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "closed_form" | "cf" | "closed" | "analytic" => Ok(Objective::ClosedForm),
            "exact_dp" | "dp" | "exact" => Ok(Objective::ExactDp),
            "monte_carlo" | "mc" | "sim" | "simulation" => Ok(Objective::MonteCarlo),
            other => Err(Error::Config(format!("unknown objective '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Coarse grid spacing over `[0, 1]`; rounded so the grid hits both ends.
    pub grid_step: f64,
    /// Runs per grid point; required by the Monte Carlo objective.
    pub runs: Option<usize>,
    /// Master seed for the Monte Carlo objective. Every grid point reuses it.
    pub seed: u64,
    /// Saturate the closed form at `n_parts`.
    pub clamp_at_n: bool,
    pub dp_budget: u64,
    /// Bracket width at which golden-section refinement stops.
    pub refine_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            grid_step: 0.01,
            runs: None,
            seed: 0,
            clamp_at_n: false,
            dp_budget: DEFAULT_DP_BUDGET,
            refine_tol: 1e-10,
        }
    }
}

impl SearchConfig {
    fn grid_points(&self) -> Result<usize> {
        if !(self.grid_step > 0.0 && self.grid_step <= 1.0) {
            return Err(Error::Config(format!(
                "grid step must lie in (0, 1], got {}",
                self.grid_step
            )));
        }
        Ok((1.0 / self.grid_step).round().max(1.0) as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult<T> {
    pub beta_star: T,
    /// Objective at `beta_star`.
    pub value: T,
    pub objective: Objective,
    pub grid_step: f64,
    pub runs: Option<usize>,
}

/// Objective evaluator for fixed `(N, E, alpha)`.
struct Evaluator<'a, T> {
    n_parts: usize,
    n_users: usize,
    alpha: T,
    objective: Objective,
    cfg: &'a SearchConfig,
}

impl<T: Float + Probability + Send + Sync> Evaluator<'_, T> {
    fn eval(&self, beta: T) -> Result<T> {
        match self.objective {
            Objective::ClosedForm => approx_expectation_clamped(
                self.n_parts,
                self.n_users,
                self.alpha,
                beta,
                self.cfg.clamp_at_n,
            ),
            Objective::ExactDp => {
                let params = ModelParams::new(self.n_parts, self.n_users, self.alpha, beta)?;
                model::exact_expectation_with_budget(&params, self.cfg.dp_budget)
            }
            Objective::MonteCarlo => {
                let runs = self.cfg.runs.ok_or_else(|| {
                    Error::Config("monte_carlo objective requires a runs setting".into())
                })?;
                let params = ModelParams::new(self.n_parts, self.n_users, self.alpha, beta)?;
                let sim = model::monte_carlo(&params, runs, self.cfg.seed)?;
                Ok(lift(sim.mean_finished))
            }
        }
    }
}

/// Golden-section search for a maximum of `f` on `[lo, hi]`.
fn golden_section_max<T, F>(mut lo: T, mut hi: T, tol: T, f: F) -> Result<(T, T)>
where
    T: Float,
    F: Fn(T) -> Result<T>,
{
    let inv_phi = lift::<T>((5f64.sqrt() - 1.0) / 2.0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

/// Maximizes the chosen objective over `beta` in `[0, 1]`: a coarse grid,
/// then golden-section refinement on the cells around the best grid point
/// (skipped for the noisy Monte Carlo objective).
pub fn optimal_beta<T: Float + Probability + Send + Sync>(
    n_parts: usize,
    n_users: usize,
    alpha: T,
    objective: Objective,
    cfg: &SearchConfig,
) -> Result<OptResult<T>> {
    ModelParams::new(n_parts, n_users, alpha, T::zero())?;
    if objective == Objective::MonteCarlo && cfg.runs.is_none() {
        return Err(Error::Config(
            "monte_carlo objective requires a runs setting".into(),
        ));
    }
    let points = cfg.grid_points()?;
    let eval = Evaluator {
        n_parts,
        n_users,
        alpha,
        objective,
        cfg,
    };
    let denom = lift::<T>(points as f64);
    let grid = (0..=points)
        .map(|j| lift::<T>(j as f64) / denom)
        .map(|beta| eval.eval(beta).map(|v| (beta, v)))
        .collect::<Result<Vec<_>>>()?;

    let tie = lift::<T>(TIE_TOLERANCE);
    let mut best = 0;
    for (j, (_, v)) in grid.iter().enumerate() {
        if *v > grid[best].1 + tie {
            best = j;
        }
    }
    let (mut beta_star, mut value) = grid[best];

    if objective != Objective::MonteCarlo && points > 1 {
        let lo = grid[best.saturating_sub(1)].0;
        let hi = grid[(best + 1).min(points)].0;
        let (b, v) = golden_section_max(lo, hi, lift(cfg.refine_tol), |beta| eval.eval(beta))?;
        if v > value + tie {
            beta_star = b;
            value = v;
        }
    }

    // With E >= N and alpha > 0, full coordination is the strict maximizer:
    // any beta < 1 leaves an unfinished part with positive probability. For
    // N = 1 that shortfall drops below the tie tolerance (and below f64
    // resolution), so the tie rule alone would settle on beta < 1.
    let (top_beta, top_value) = grid[points];
    if objective == Objective::ExactDp
        && n_users >= n_parts
        && alpha > T::zero()
        && top_value + tie >= value
    {
        beta_star = top_beta;
        value = top_value;
    }

    let grid_max = grid.iter().fold(T::neg_infinity(), |m, (_, v)| m.max(*v));
    debug_assert!(value + tie >= grid_max);

    Ok(OptResult {
        beta_star,
        value,
        objective,
        grid_step: 1.0 / points as f64,
        runs: if objective == Objective::MonteCarlo {
            cfg.runs
        } else {
            None
        },
    })
}

/// Optimal beta over an `(E, N)` grid. Rows follow `e_values`, columns
/// follow `n_values`.
#[derive(Debug, Clone)]
pub struct BetaGrid<T> {
    pub n_values: Vec<usize>,
    pub e_values: Vec<usize>,
    pub alpha: T,
    pub objective: Objective,
    pub config: SearchConfig,
    pub cells: Vec<Vec<Result<OptResult<T>>>>,
}

fn check_axis(name: &str, values: &[usize]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Domain(format!("{name} must be non-empty")));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain(format!("{name} must be strictly ascending")));
    }
    Ok(())
}

pub fn beta_heatmap<T: Float + Probability + Send + Sync>(
    n_values: &[usize],
    e_values: &[usize],
    alpha: T,
    objective: Objective,
    cfg: &SearchConfig,
) -> Result<BetaGrid<T>> {
    check_axis("n_values", n_values)?;
    check_axis("e_values", e_values)?;
    check_unit("alpha", &alpha)?;
    let cols = n_values.len();
    let flat: Vec<Result<OptResult<T>>> = (0..e_values.len() * cols)
        .into_par_iter()
        .map(|idx| optimal_beta(n_values[idx % cols], e_values[idx / cols], alpha, objective, cfg))
        .collect();
    let mut flat = flat.into_iter();
    let cells = (0..e_values.len())
        .map(|_| flat.by_ref().take(cols).collect())
        .collect();
    Ok(BetaGrid {
        n_values: n_values.to_vec(),
        e_values: e_values.to_vec(),
        alpha,
        objective,
        config: cfg.clone(),
        cells,
    })
}

impl<T: Float + Probability> BetaGrid<T> {
    /// Mean optimal beta over successfully computed cells.
    pub fn mean_beta(&self) -> Option<f64> {
        let betas: Vec<f64> = self
            .cells
            .iter()
            .flatten()
            .filter_map(|c| c.as_ref().ok())
            .filter_map(|c| c.beta_star.to_f64())
            .collect();
        (!betas.is_empty()).then(|| betas.iter().sum::<f64>() / betas.len() as f64)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_err()).count()
    }

    /// CSV matrix: `#` metadata lines, a header row of N values, then one row
    /// per E value with beta* to four decimals (`NA` for failed cells).
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# alpha={}", fmt_param(self.alpha))?;
        writeln!(out, "# objective={}", self.objective)?;
        match (self.objective, self.config.runs) {
            (Objective::MonteCarlo, Some(runs)) => {
                writeln!(out, "# runs={runs}")?;
                writeln!(out, "# seed={}", self.config.seed)?;
                writeln!(out, "# rng={}", model::RNG_SCHEME)?;
            }
            _ => {
                writeln!(out, "# runs=NA")?;
                writeln!(out, "# seed=NA")?;
            }
        }
        writeln!(out, "# grid_step={}", self.config.grid_step)?;
        writeln!(out, "# clamp_at_n={}", self.config.clamp_at_n)?;
        writeln!(out, "# failed_cells={}", self.failures())?;
        write!(out, "e\\n")?;
        for n in &self.n_values {
            write!(out, ",{n}")?;
        }
        writeln!(out)?;
        for (e, row) in self.e_values.iter().zip(&self.cells) {
            write!(out, "{e}")?;
            for cell in row {
                match cell {
                    Ok(r) => write!(out, ",{:.4}", r.beta_star.to_f64().unwrap_or(f64::NAN))?,
                    Err(_) => write!(out, ",NA")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn fmt_param<T: Probability>(v: T) -> String {
    format!("{}", v.to_f64().unwrap_or(f64::NAN))
}
