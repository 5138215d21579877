//! Exact and sampled dynamics of the coordination process.
//!
//! A project has `n_parts` parts, all unfinished at the start. `n_users` users
//! arrive one at a time. With probability `beta` a user coordinates: they find
//! an empty part and finish it (a no-op when every part is already finished).
//! Otherwise they make two sequential uniform picks over all parts, with
//! replacement. A pick on an unfinished part finishes it; a pick on a finished
//! part clashes with probability `alpha`, returning it to unfinished, and has
//! no effect otherwise. The second pick sees the state left by the first.
//!
//! The state of the process is the number of finished parts `c`. Everything
//! exact here is generic over [`Probability`], so it can be run in rationals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{Error, Probability, Result};

/// Default ceiling on `n_parts * n_users` state-steps for the exact solver.
pub const DEFAULT_DP_BUDGET: u64 = 100_000_000;

/// Identifies the generator and stream-splitting scheme used by [`simulate`]
/// and [`monte_carlo`]. Run `i` of a batch seeded with `s` draws from ChaCha8
/// seeded with `s` (via `seed_from_u64`) on stream `i`.
pub const RNG_SCHEME: &str = "chacha8:seed_from_u64(master):stream(run_index)";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub n_parts: usize,
    pub n_users: usize,
    /// Probability that work on an already finished part undoes it.
    pub alpha: T,
    /// Probability that a user coordinates.
    pub beta: T,
}

impl<T: Probability> ModelParams<T> {
    pub fn new(n_parts: usize, n_users: usize, alpha: T, beta: T) -> Result<Self> {
        let params = ModelParams {
            n_parts,
            n_users,
            alpha,
            beta,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_parts == 0 {
            return Err(Error::domain("n_parts must be at least 1"));
        }
        if self.n_users == 0 {
            return Err(Error::domain("n_users must be at least 1"));
        }
        check_unit("alpha", &self.alpha)?;
        check_unit("beta", &self.beta)
    }

    pub fn with_beta(&self, beta: T) -> Self {
        ModelParams {
            beta,
            ..self.clone()
        }
    }
}

pub(crate) fn check_unit<T: Probability>(name: &str, value: &T) -> Result<()> {
    // `!(a <= b)` so that NaN is rejected as well.
    if !(T::zero() <= *value && *value <= T::one()) {
        return Err(Error::Domain(format!("{name} must lie in [0, 1], got {value:?}")));
    }
    Ok(())
}

fn check_count<T>(c: usize, params: &ModelParams<T>) -> Result<()> {
    if c > params.n_parts {
        return Err(Error::Domain(format!(
            "finished count {c} outside [0, {}]",
            params.n_parts
        )));
    }
    Ok(())
}

/// Distribution of the net change in finished parts caused by one
/// non-coordinating user, over `k` in `-2..=2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaDistribution<T> {
    probs: [T; 5],
}

impl<T: Probability> DeltaDistribution<T> {
    /// Probability of net change `k`; zero outside `-2..=2`.
    pub fn prob(&self, k: i32) -> T {
        if (-2..=2).contains(&k) {
            self.probs[(k + 2) as usize].clone()
        } else {
            T::zero()
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, &T)> {
        self.probs.iter().enumerate().map(|(i, p)| (i as i32 - 2, p))
    }

    pub fn total(&self) -> T {
        self.probs.iter().cloned().fold(T::zero(), |a, b| a + b)
    }

    /// `sum_k k * X_k`.
    pub fn expected_change(&self) -> T {
        self.iter().fold(T::zero(), |acc, (k, p)| {
            let term = T::from_count(k.unsigned_abs() as usize) * p.clone();
            if k < 0 {
                acc - term
            } else {
                acc + term
            }
        })
    }
}

/// Net-change distribution of a non-coordinating user arriving when `c` of
/// the parts are finished, from the closed-form collision probabilities.
pub fn collision_deltas<T: Probability>(
    c: usize,
    params: &ModelParams<T>,
) -> Result<DeltaDistribution<T>> {
    params.validate()?;
    check_count(c, params)?;
    let n = T::from_count(params.n_parts);
    let nn = n.clone() * n.clone();
    let one = T::one();
    let alpha = params.alpha.clone();
    let keep = one.clone() - alpha.clone();
    let cf = T::from_count(c);
    let free = T::from_count(params.n_parts - c);
    // c - 1 and N - c - 1 are only ever multiplied by c or N - c, so
    // saturating at zero leaves the products exact.
    let c_less = T::from_count(c.saturating_sub(1));
    let free_less = T::from_count((params.n_parts - c).saturating_sub(1));

    let plus2 = free.clone() * free_less / nn.clone();
    let plus1 = keep.clone()
        * (cf.clone() * free.clone() + free * (cf.clone() + one.clone()))
        / nn.clone();
    let minus1 = alpha.clone()
        * keep
        * (cf.clone() * c_less.clone() + cf.clone() * cf.clone())
        / nn.clone();
    let minus2 = alpha.clone() * alpha * cf * c_less / nn;
    let zero = one - plus2.clone() - plus1.clone() - minus1.clone() - minus2.clone();
    Ok(DeltaDistribution {
        probs: [minus2, minus1, zero, plus1, plus2],
    })
}

/// Effect of a single pick by a non-coordinating user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PickEffect {
    /// Landed on an unfinished part and finished it.
    Finish,
    /// Landed on a finished part without clashing.
    NoEffect,
    /// Landed on a finished part and returned it to unfinished.
    Clash,
}

impl PickEffect {
    fn delta(self) -> i32 {
        match self {
            PickEffect::Finish => 1,
            PickEffect::NoEffect => 0,
            PickEffect::Clash => -1,
        }
    }
}

/// One leaf of the two-pick outcome tree.
#[derive(Debug, Clone, PartialEq)]
pub struct PickPath<T> {
    pub first: PickEffect,
    pub second: PickEffect,
    pub prob: T,
}

impl<T> PickPath<T> {
    pub fn net(&self) -> i32 {
        self.first.delta() + self.second.delta()
    }
}

fn pick_branches<T: Probability>(
    c: usize,
    n_parts: usize,
    alpha: &T,
) -> Vec<(PickEffect, T, usize)> {
    let n = T::from_count(n_parts);
    let hit_finished = T::from_count(c) / n.clone();
    let hit_free = T::from_count(n_parts - c) / n;
    let mut out = Vec::with_capacity(3);
    out.push((PickEffect::Finish, hit_free, (c + 1).min(n_parts)));
    out.push((
        PickEffect::NoEffect,
        hit_finished.clone() * (T::one() - alpha.clone()),
        c,
    ));
    out.push((
        PickEffect::Clash,
        hit_finished * alpha.clone(),
        c.saturating_sub(1),
    ));
    out
}

/// All paths of a non-coordinator's two sequential picks, starting from `c`
/// finished parts. Paths of zero probability are included so the tree shape
/// does not depend on the parameters.
pub fn two_pick_paths<T: Probability>(
    c: usize,
    params: &ModelParams<T>,
) -> Result<Vec<PickPath<T>>> {
    params.validate()?;
    check_count(c, params)?;
    let mut paths = Vec::with_capacity(9);
    for (first, p1, after_first) in pick_branches(c, params.n_parts, &params.alpha) {
        for (second, p2, _) in pick_branches(after_first, params.n_parts, &params.alpha) {
            paths.push(PickPath {
                first,
                second,
                prob: p1.clone() * p2,
            });
        }
    }
    Ok(paths)
}

/// Probability mass over finished-part counts `0..=n_parts`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution<T> {
    mass: Vec<T>,
}

impl<T: Probability> StateDistribution<T> {
    pub fn point(n_parts: usize, c: usize) -> Self {
        let mut mass = vec![T::zero(); n_parts + 1];
        mass[c] = T::one();
        StateDistribution { mass }
    }

    pub fn mass(&self) -> &[T] {
        &self.mass
    }

    pub fn n_parts(&self) -> usize {
        self.mass.len() - 1
    }

    pub fn total(&self) -> T {
        self.mass.iter().cloned().fold(T::zero(), |a, b| a + b)
    }

    pub fn mean(&self) -> T {
        self.mass
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (c, p)| acc + T::from_count(c) * p.clone())
    }

    fn step(&self, kernel: &TransitionKernel<T>) -> Self {
        let mut next = vec![T::zero(); self.mass.len()];
        for (c, p) in self.mass.iter().enumerate() {
            if p.is_zero() {
                continue;
            }
            for (target, q) in kernel.row(c) {
                next[*target] = next[*target].clone() + p.clone() * q.clone();
            }
        }
        StateDistribution { mass: next }
    }
}

/// Sparse kernel rows: at most five reachable counts per source count.
struct TransitionKernel<T> {
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Probability> TransitionKernel<T> {
    fn new(params: &ModelParams<T>) -> Result<Self> {
        let rows = (0..=params.n_parts)
            .map(|c| sparse_row(c, params))
            .collect::<Result<_>>()?;
        Ok(TransitionKernel { rows })
    }

    fn row(&self, c: usize) -> &[(usize, T)] {
        &self.rows[c]
    }
}

fn sparse_row<T: Probability>(c: usize, params: &ModelParams<T>) -> Result<Vec<(usize, T)>> {
    let mut acc: Vec<(usize, T)> = Vec::with_capacity(5);
    let mut add = |target: usize, p: T| {
        if p.is_zero() {
            return;
        }
        match acc.iter_mut().find(|(t, _)| *t == target) {
            Some((_, q)) => *q = q.clone() + p,
            None => acc.push((target, p)),
        }
    };
    let coordinated = if c < params.n_parts { c + 1 } else { c };
    add(coordinated, params.beta.clone());
    let wander = T::one() - params.beta.clone();
    for path in two_pick_paths(c, params)? {
        let target = (c as i64 + path.net() as i64) as usize;
        add(target, wander.clone() * path.prob);
    }
    acc.sort_by_key(|(t, _)| *t);
    Ok(acc)
}

/// Distribution of the next finished count given `c` finished parts, mixing
/// the coordinate branch with the full two-pick tree.
pub fn kernel_row<T: Probability>(
    c: usize,
    params: &ModelParams<T>,
) -> Result<StateDistribution<T>> {
    params.validate()?;
    check_count(c, params)?;
    let mut mass = vec![T::zero(); params.n_parts + 1];
    for (target, p) in sparse_row(c, params)? {
        mass[target] = p;
    }
    Ok(StateDistribution { mass })
}

/// Distribution of the finished count after all users, by exact propagation.
pub fn final_distribution<T: Probability>(
    params: &ModelParams<T>,
    budget: u64,
) -> Result<StateDistribution<T>> {
    params.validate()?;
    let work = (params.n_parts as u64).saturating_mul(params.n_users as u64);
    if work > budget {
        return Err(Error::Resource(format!(
            "exact solver needs {work} state-steps (budget {budget}); use monte_carlo instead"
        )));
    }
    let kernel = TransitionKernel::new(params)?;
    let mut dist = StateDistribution::point(params.n_parts, 0);
    for _ in 0..params.n_users {
        dist = dist.step(&kernel);
    }
    Ok(dist)
}

/// Exact expected number of finished parts after every user has passed.
pub fn exact_expectation<T: Probability>(params: &ModelParams<T>) -> Result<T> {
    exact_expectation_with_budget(params, DEFAULT_DP_BUDGET)
}

pub fn exact_expectation_with_budget<T: Probability>(
    params: &ModelParams<T>,
    budget: u64,
) -> Result<T> {
    final_distribution(params, budget).map(|d| d.mean())
}

/// Explicit part states with O(1) access to a random unfinished part.
struct Parts {
    /// Position of each part in `unfinished`, or `usize::MAX` when finished.
    slot: Vec<usize>,
    unfinished: Vec<usize>,
}

impl Parts {
    fn new(n: usize) -> Self {
        Parts {
            slot: (0..n).collect(),
            unfinished: (0..n).collect(),
        }
    }

    fn finished_count(&self) -> usize {
        self.slot.len() - self.unfinished.len()
    }

    fn finish(&mut self, part: usize) {
        let at = self.slot[part];
        let last = *self.unfinished.last().expect("part is unfinished");
        self.unfinished.swap_remove(at);
        if last != part {
            self.slot[last] = at;
        }
        self.slot[part] = usize::MAX;
    }

    fn unfinish(&mut self, part: usize) {
        self.slot[part] = self.unfinished.len();
        self.unfinished.push(part);
    }

    fn work_on<R: Rng>(&mut self, part: usize, alpha: f64, rng: &mut R) {
        if self.slot[part] != usize::MAX {
            self.finish(part);
        } else if rng.random::<f64>() < alpha {
            self.unfinish(part);
        }
    }
}

fn run_rng(master_seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(run);
    rng
}

fn simulate_with<R: Rng>(n_parts: usize, n_users: usize, alpha: f64, beta: f64, rng: &mut R) -> usize {
    let mut parts = Parts::new(n_parts);
    for _ in 0..n_users {
        if rng.random::<f64>() < beta {
            if !parts.unfinished.is_empty() {
                let pick = parts.unfinished[rng.random_range(0..parts.unfinished.len())];
                parts.finish(pick);
            }
        } else {
            for _ in 0..2 {
                let part = rng.random_range(0..n_parts);
                parts.work_on(part, alpha, rng);
            }
        }
    }
    parts.finished_count()
}

fn sampling_rates<T: Probability>(params: &ModelParams<T>) -> Result<(f64, f64)> {
    params.validate()?;
    let to_f64 = |v: &T| {
        v.to_f64()
            .ok_or_else(|| Error::Domain(format!("{v:?} has no f64 representation")))
    };
    Ok((to_f64(&params.alpha)?, to_f64(&params.beta)?))
}

/// One stochastic run of the process; identical to run 0 of
/// [`monte_carlo`] with the same seed.
pub fn simulate<T: Probability>(params: &ModelParams<T>, seed: u64) -> Result<usize> {
    let (alpha, beta) = sampling_rates(params)?;
    Ok(simulate_with(
        params.n_parts,
        params.n_users,
        alpha,
        beta,
        &mut run_rng(seed, 0),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub mean_finished: f64,
    /// Standard error of the mean (sample standard deviation over sqrt(runs)).
    pub std_error: f64,
    pub runs: usize,
    pub seed: u64,
}

/// Mean and standard error of the finished count over `runs` independent
/// runs. Runs execute in parallel; the reduction is over exact integer sums,
/// so the result does not depend on scheduling or thread count.
pub fn monte_carlo<T: Probability>(
    params: &ModelParams<T>,
    runs: usize,
    seed: u64,
) -> Result<SimResult> {
    if runs == 0 {
        return Err(Error::domain("runs must be at least 1"));
    }
    let (alpha, beta) = sampling_rates(params)?;
    let (n_parts, n_users) = (params.n_parts, params.n_users);
    let (sum, sum_sq) = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let x = simulate_with(n_parts, n_users, alpha, beta, &mut run_rng(seed, i)) as u128;
            (x, x * x)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let r = runs as u128;
    let mean_finished = sum as f64 / runs as f64;
    let std_error = if runs > 1 {
        // r * sum_sq - sum^2 is exact and nonnegative.
        let spread = (r * sum_sq - sum * sum) as f64;
        (spread / (runs as f64 * (runs - 1) as f64) / runs as f64).sqrt()
    } else {
        0.0
    };
    Ok(SimResult {
        mean_finished,
        std_error,
        runs,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SmallRatio;

    fn params(n: usize, e: usize, alpha: f64, beta: f64) -> ModelParams<f64> {
        ModelParams::new(n, e, alpha, beta).unwrap()
    }

    fn ratio(n: i64, d: i64) -> SmallRatio {
        SmallRatio::new(n, d)
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ModelParams::new(0, 1, 0.5, 0.5).is_err());
        assert!(ModelParams::new(1, 0, 0.5, 0.5).is_err());
        assert!(ModelParams::new(1, 1, 1.5, 0.5).is_err());
        assert!(ModelParams::new(1, 1, 0.5, -0.1).is_err());
        assert!(ModelParams::new(1, 1, f64::NAN, 0.5).is_err());
    }

    #[test]
    fn deltas_empty_project_full_clash() {
        let d = collision_deltas(0, &params(5, 1, 1.0, 0.0)).unwrap();
        assert!((d.prob(2) - 0.8).abs() < 1e-15);
        assert!((d.prob(0) - 0.2).abs() < 1e-15);
        assert_eq!(d.prob(1), 0.0);
        assert_eq!(d.prob(-1), 0.0);
        assert_eq!(d.prob(-2), 0.0);
    }

    #[test]
    fn deltas_full_project_full_clash() {
        let d = collision_deltas(4, &params(4, 1, 1.0, 0.0)).unwrap();
        assert!((d.prob(-2) - 0.75).abs() < 1e-15);
        assert!((d.prob(0) - 0.25).abs() < 1e-15);
        assert_eq!(d.prob(1), 0.0);
        assert_eq!(d.prob(2), 0.0);
        assert_eq!(d.prob(-1), 0.0);
    }

    #[test]
    fn deltas_half_clash_exact() {
        let p = ModelParams::new(2, 1, ratio(1, 2), ratio(0, 1)).unwrap();
        let d = collision_deltas(1, &p).unwrap();
        assert_eq!(d.prob(1), ratio(3, 8));
        assert_eq!(d.prob(-1), ratio(1, 16));
        assert_eq!(d.prob(0), ratio(9, 16));
        assert_eq!(d.prob(2), ratio(0, 1));
        assert_eq!(d.prob(-2), ratio(0, 1));
    }

    #[test]
    fn deltas_reject_out_of_range_count() {
        assert!(matches!(
            collision_deltas(6, &params(5, 1, 0.5, 0.5)),
            Err(Error::Domain(_))
        ));
        assert!(kernel_row(6, &params(5, 1, 0.5, 0.5)).is_err());
    }

    #[test]
    fn kernel_rows_from_examples() {
        let row = kernel_row(0, &params(1, 1, 0.3, 1.0)).unwrap();
        assert_eq!(row.mass(), &[0.0, 1.0]);

        let p = ModelParams::new(2, 1, ratio(1, 1), ratio(0, 1)).unwrap();
        let row = kernel_row(0, &p).unwrap();
        assert_eq!(row.mass(), &[ratio(1, 2), ratio(0, 1), ratio(1, 2)]);

        let row = kernel_row(3, &params(3, 1, 0.7, 1.0)).unwrap();
        assert_eq!(row.mass(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn tree_marginal_matches_closed_form_deltas() {
        for n in 1..=12usize {
            for c in 0..=n {
                for (an, ad) in [(0, 1), (3, 10), (1, 2), (1, 1)] {
                    let p = ModelParams::new(n, 1, ratio(an, ad), ratio(0, 1)).unwrap();
                    let d = collision_deltas(c, &p).unwrap();
                    let paths = two_pick_paths(c, &p).unwrap();
                    for k in -2..=2 {
                        let from_tree = paths
                            .iter()
                            .filter(|path| path.net() == k)
                            .fold(ratio(0, 1), |a, path| a + path.prob);
                        assert_eq!(from_tree, d.prob(k), "n={n} c={c} k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn exact_expectation_examples() {
        assert_eq!(exact_expectation(&params(1, 1, 1.0, 0.0)).unwrap(), 0.0);
        assert!((exact_expectation(&params(5, 3, 0.4, 1.0)).unwrap() - 3.0).abs() < 1e-12);
        let p = ModelParams::new(2, 2, ratio(1, 1), ratio(0, 1)).unwrap();
        assert_eq!(exact_expectation(&p).unwrap(), ratio(1, 1));
    }

    #[test]
    fn exact_expectation_respects_budget() {
        let p = params(10, 10, 0.5, 0.5);
        assert!(matches!(
            exact_expectation_with_budget(&p, 99),
            Err(Error::Resource(_))
        ));
        assert!(exact_expectation_with_budget(&p, 100).is_ok());
        assert!(matches!(
            exact_expectation(&params(100_000, 100_000, 0.5, 0.5)),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn simulate_trivial_cases() {
        for seed in 0..20 {
            assert_eq!(simulate(&params(3, 3, 0.5, 1.0), seed).unwrap(), 3);
            assert_eq!(simulate(&params(1, 1, 1.0, 0.0), seed).unwrap(), 0);
        }
    }

    #[test]
    fn simulate_is_reproducible() {
        let p = params(20, 15, 0.6, 0.3);
        for seed in [0, 1, 42, u64::MAX] {
            assert_eq!(simulate(&p, seed).unwrap(), simulate(&p, seed).unwrap());
        }
    }

    #[test]
    fn simulate_matches_first_monte_carlo_run() {
        let p = params(20, 15, 0.6, 0.3);
        let single = simulate(&p, 9).unwrap() as f64;
        assert_eq!(monte_carlo(&p, 1, 9).unwrap().mean_finished, single);
    }

    #[test]
    fn monte_carlo_trivial_cases() {
        let r = monte_carlo(&params(5, 3, 0.2, 1.0), 100, 3).unwrap();
        assert_eq!(r.mean_finished, 3.0);
        assert_eq!(r.std_error, 0.0);
        assert_eq!(r.runs, 100);
        let r = monte_carlo(&params(1, 1, 1.0, 0.0), 10, 3).unwrap();
        assert_eq!(r.mean_finished, 0.0);
        assert!(matches!(
            monte_carlo(&params(1, 1, 1.0, 0.0), 0, 3),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn monte_carlo_converges_to_exact() {
        let p = params(2, 2, 1.0, 0.0);
        let r = monte_carlo(&p, 100_000, 11).unwrap();
        assert!((r.mean_finished - 1.0).abs() <= 4.0 * r.std_error);
    }

    #[test]
    fn monte_carlo_independent_of_thread_count() {
        let p = params(30, 25, 0.8, 0.2);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| monte_carlo(&p, 2_000, 5).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| monte_carlo(&p, 2_000, 5).unwrap());
        assert_eq!(one, many);
    }
}
