//! Monte Carlo and exact checks of three quantitative lemmas: overlap of a
//! random permutation with an initial segment, the mass outside the cells a
//! small set concentrates on, and the concentration of weighted sums of
//! locally dependent Bernoulli variables.

use crate::error::{invalid, LabError, Result};
use crate::rng::{derive_seed, seeded, LabRng};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `bound - 4 sqrt(bound (1 - bound) / trials)`.
fn four_sigma(bound: f64, trials: usize) -> f64 {
    4.0 * (bound.clamp(0.0, 1.0) * (1.0 - bound.clamp(0.0, 1.0)) / trials as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandompReport {
    pub gamma: f64,
    pub n: usize,
    /// `M = floor(gamma N)`.
    pub m: usize,
    /// `1 - 10 (1 - gamma) / (N gamma^2)`.
    pub bound: f64,
    pub empirical: f64,
    pub margin: f64,
    pub vacuous: bool,
    pub pass: bool,
    /// Monte Carlo `E[(M^-1 sum Y_i - rho)^2]` and its standard error.
    pub variance_mc: f64,
    pub variance_se: f64,
    /// Exact value of the same expectation.
    pub variance_exact: f64,
    /// `rho (1 - rho) / M`.
    pub variance_bound: f64,
}

impl RandompReport {
    /// The Chebyshev step: the exact variance is below the bound and the
    /// Monte Carlo estimate agrees with it within three standard errors.
    pub fn variance_ok(&self) -> bool {
        self.variance_exact < self.variance_bound
            && (self.variance_mc - self.variance_exact).abs() <= 3.0 * self.variance_se.max(1e-15)
    }
}

pub fn randomp_bound(gamma: f64, n: usize) -> f64 {
    1.0 - 10.0 * (1.0 - gamma) / (n as f64 * gamma * gamma)
}

/// Frequency of `|{i < M : pi(i) < M}| > gamma^2 N / 2` over uniform
/// permutations of `N` points.
pub fn verify_randomp(gamma: f64, n: usize, trials: usize, rng: &mut LabRng) -> Result<RandompReport> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid("gamma", "must lie in (0,1)"));
    }
    if n < 2 {
        return Err(invalid("N", "need at least two points"));
    }
    if trials == 0 {
        return Err(invalid("trials", "need at least one trial"));
    }
    let m = (gamma * n as f64).floor() as usize;
    let rho = m as f64 / n as f64;
    let need = 0.5 * gamma * gamma * n as f64;
    let mut hits = 0usize;
    let mut dev = Vec::with_capacity(trials);
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..trials {
        // the first M images of a uniform permutation
        for i in 0..m {
            let j = rng.random_range(i..n);
            perm.swap(i, j);
        }
        let count = perm[..m].iter().filter(|&&v| v < m).count();
        if count as f64 > need {
            hits += 1;
        }
        if m > 0 {
            let x = count as f64 / m as f64 - rho;
            dev.push(x * x);
        }
    }
    let bound = randomp_bound(gamma, n);
    let empirical = hits as f64 / trials as f64;
    let vacuous = bound <= 0.0;
    let margin = four_sigma(bound, trials);
    let (variance_mc, variance_se) = mean_se(&dev);
    let variance_exact = if m > 0 && n > 1 {
        rho * (1.0 - rho) * (n - m) as f64 / (m as f64 * (n - 1) as f64)
    } else {
        0.0
    };
    Ok(RandompReport {
        gamma,
        n,
        m,
        bound,
        empirical,
        margin,
        vacuous,
        pass: vacuous || empirical >= bound - margin,
        variance_mc,
        variance_se,
        variance_exact,
        variance_bound: if m > 0 { rho * (1.0 - rho) / m as f64 } else { f64::INFINITY },
    })
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelReport {
    /// Cells whose relative overlap exceeds `sqrt(delta)`.
    pub heavy: Vec<usize>,
    /// Mass outside the heavy cells.
    pub outside: BigRational,
    /// Whether `outside > 1 - sqrt(delta)`, decided exactly.
    pub holds: bool,
}

/// Exact check: with `I0 = {i : overlap_i / mass_i > sqrt(delta)}`, the
/// mass outside `I0` exceeds `1 - sqrt(delta)`.
pub fn verify_del(masses: &[BigRational], overlaps: &[BigRational], delta: &BigRational) -> Result<DelReport> {
    if masses.len() != overlaps.len() {
        return Err(invalid("overlaps", "one overlap per cell"));
    }
    let one = BigRational::one();
    if masses.iter().any(|m| !m.is_positive()) || masses.iter().sum::<BigRational>() != one {
        return Err(invalid("masses", "must be positive and sum to 1"));
    }
    if overlaps.iter().zip(masses).any(|(o, m)| o.is_negative() || o > m) {
        return Err(invalid("overlaps", "must lie between 0 and the cell mass"));
    }
    if !delta.is_positive() {
        return Err(invalid("delta", "must be positive"));
    }
    let e: BigRational = overlaps.iter().sum();
    if &e >= delta {
        return Err(LabError::Precondition("the set must have measure below delta".into()));
    }
    // o/m > sqrt(d)  <=>  o^2 > d m^2
    let heavy: Vec<usize> = (0..masses.len())
        .filter(|&i| &overlaps[i] * &overlaps[i] > delta * &masses[i] * &masses[i])
        .collect();
    let outside: BigRational = (0..masses.len())
        .filter(|i| !heavy.contains(i))
        .map(|i| masses[i].clone())
        .sum();
    // outside > 1 - sqrt(d)  <=>  1 - outside < sqrt(d)
    let gap = &one - &outside;
    let holds = gap.is_negative() || &gap * &gap < *delta;
    Ok(DelReport { heavy, outside, holds })
}

/// A random valid instance with small denominators.
pub fn random_del_instance(rng: &mut LabRng) -> (Vec<BigRational>, Vec<BigRational>, BigRational) {
    let k = rng.random_range(1..=20usize);
    let raw: Vec<i64> = (0..k).map(|_| rng.random_range(1..=50)).collect();
    let total: i64 = raw.iter().sum();
    let masses: Vec<BigRational> = raw.iter().map(|&r| ratio(r, total)).collect();
    let delta = ratio(rng.random_range(1..=999), 1000);
    // overlaps: random fractions of the masses, scaled below delta
    let fr: Vec<BigRational> = masses
        .iter()
        .map(|m| m * ratio(rng.random_range(0..=20), 20))
        .collect();
    let s: BigRational = fr.iter().sum();
    let overlaps = if s.is_zero() {
        fr
    } else {
        let target = &delta * ratio(rng.random_range(0..=99), 100);
        let scale = if s > target { &target / &s } else { BigRational::one() };
        fr.into_iter().map(|x| x * &scale).collect()
    };
    (masses, overlaps, delta)
}

fn ratio(a: i64, b: i64) -> BigRational {
    BigRational::new(BigInt::from(a), BigInt::from(b))
}

/// For reports.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

/// Dependence inside the blocks of a weighted Bernoulli sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockSpec {
    /// Every variable in a block is the same draw.
    Copies,
    /// One uniform per block, rotated by `t / size` for member `t`.
    Anticorrelated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimpleReport {
    pub p: f64,
    pub p_actual: f64,
    pub l: usize,
    pub n: usize,
    pub max_weight: f64,
    /// `1 - 4 (L + 1) w / p^2`.
    pub bound: f64,
    pub empirical: f64,
    pub margin: f64,
    pub vacuous: bool,
    pub pass: bool,
}

pub fn simple_bound(p: f64, l: usize, w: f64) -> f64 {
    1.0 - 4.0 * (l as f64 + 1.0) * w / (p * p)
}

/// Frequency of `X = sum w_j X_j >= p/2` when each `X_j` succeeds with
/// probability `p_actual >= p`, blocks of `L + 1` consecutive variables are
/// dependent, and different blocks are independent.
pub fn verify_simple(
    p: f64,
    p_actual: f64,
    l: usize,
    weights: &[f64],
    blocks: BlockSpec,
    trials: usize,
    rng: &mut LabRng,
) -> Result<SimpleReport> {
    if !(p > 0.0 && p <= 1.0) || !(p_actual >= p && p_actual <= 1.0) {
        return Err(invalid("p", "need 0 < p <= p_actual <= 1"));
    }
    if weights.is_empty() || weights.iter().any(|&w| w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid("weights", "must be nonnegative and sum to 1"));
    }
    if trials == 0 {
        return Err(invalid("trials", "need at least one trial"));
    }
    let size = l + 1;
    let w = weights.iter().copied().fold(0.0, f64::max);
    let half = p / 2.0;
    let mut hits = 0usize;
    for _ in 0..trials {
        let mut x = 0.0;
        for chunk in weights.chunks(size) {
            match blocks {
                BlockSpec::Copies => {
                    if rng.random::<f64>() < p_actual {
                        x += chunk.iter().sum::<f64>();
                    }
                }
                BlockSpec::Anticorrelated => {
                    let u: f64 = rng.random();
                    for (t, wt) in chunk.iter().enumerate() {
                        let v = (u + t as f64 / size as f64).fract();
                        if v < p_actual {
                            x += wt;
                        }
                    }
                }
            }
        }
        if x >= half - 1e-12 {
            hits += 1;
        }
    }
    let bound = simple_bound(p, l, w);
    let empirical = hits as f64 / trials as f64;
    let vacuous = bound <= 0.0;
    let margin = four_sigma(bound, trials);
    Ok(SimpleReport {
        p,
        p_actual,
        l,
        n: weights.len(),
        max_weight: w,
        bound,
        empirical,
        margin,
        vacuous,
        pass: vacuous || empirical >= bound - margin,
    })
}

/// One CSV row of the lemma grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaRow {
    pub lemma: &'static str,
    pub params: String,
    pub bound: f64,
    pub empirical: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Grid sizes for [`lemma_grid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct LemmaGrid {
    pub gammas: Vec<f64>,
    pub ns: Vec<usize>,
    pub randomp_trials: usize,
    pub del_instances: usize,
    pub ps: Vec<f64>,
    pub ls: Vec<usize>,
    pub simple_ns: Vec<usize>,
    pub simple_trials: usize,
}

impl Default for LemmaGrid {
    fn default() -> Self {
        LemmaGrid {
            gammas: vec![0.3, 0.5, 0.8],
            ns: vec![50, 200, 1000],
            randomp_trials: 10_000,
            del_instances: 10_000,
            ps: vec![0.3, 0.5],
            ls: vec![0, 1, 4],
            simple_ns: vec![500, 2000],
            simple_trials: 10_000,
        }
    }
}

/// Runs every lemma over its grid. Each grid point uses its own seed derived
/// from `seed`, so rows do not depend on scheduling.
pub fn lemma_grid(grid: &LemmaGrid, seed: u64) -> Result<Vec<LemmaRow>> {
    let mut jobs: Vec<Job> = Vec::new();
    for &g in &grid.gammas {
        for &n in &grid.ns {
            jobs.push(Job::Randomp(g, n));
        }
    }
    jobs.push(Job::Del);
    for &p in &grid.ps {
        for &l in &grid.ls {
            for &n in &grid.simple_ns {
                for spec in [BlockSpec::Copies, BlockSpec::Anticorrelated] {
                    for p2 in [p, (p + 1.0) / 2.0, 1.0] {
                        jobs.push(Job::Simple(p, p2, l, n, spec));
                    }
                }
            }
        }
    }
    let rows: Vec<Result<Vec<LemmaRow>>> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, job)| job.run(grid, &mut seeded(derive_seed(seed, i as u64))))
        .collect();
    let mut out = Vec::new();
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

enum Job {
    Randomp(f64, usize),
    Del,
    Simple(f64, f64, usize, usize, BlockSpec),
}

impl Job {
    fn run(&self, grid: &LemmaGrid, rng: &mut LabRng) -> Result<Vec<LemmaRow>> {
        match *self {
            Job::Randomp(g, n) => {
                let r = verify_randomp(g, n, grid.randomp_trials, rng)?;
                Ok(vec![
                    LemmaRow {
                        lemma: "randomp",
                        params: format!("gamma={g} N={n}{}", if r.vacuous { " vacuous" } else { "" }),
                        bound: r.bound,
                        empirical: r.empirical,
                        margin: r.margin,
                        pass: r.pass,
                    },
                    LemmaRow {
                        lemma: "randomp-variance",
                        params: format!("gamma={g} N={n}"),
                        bound: r.variance_bound,
                        empirical: r.variance_mc,
                        margin: 3.0 * r.variance_se,
                        pass: r.variance_ok(),
                    },
                ])
            }
            Job::Del => {
                let mut violations = 0usize;
                for _ in 0..grid.del_instances {
                    let (m, o, d) = random_del_instance(rng);
                    if !verify_del(&m, &o, &d)?.holds {
                        violations += 1;
                    }
                }
                Ok(vec![LemmaRow {
                    lemma: "del",
                    params: format!("instances={}", grid.del_instances),
                    bound: 0.0,
                    empirical: violations as f64,
                    margin: 0.0,
                    pass: violations == 0,
                }])
            }
            Job::Simple(p, p2, l, n, spec) => {
                let w = vec![1.0 / n as f64; n];
                let r = verify_simple(p, p2, l, &w, spec, grid.simple_trials, rng)?;
                let kind = match spec {
                    BlockSpec::Copies => "copies",
                    BlockSpec::Anticorrelated => "anti",
                };
                Ok(vec![LemmaRow {
                    lemma: "simple",
                    params: format!("p={p} p'={p2} L={l} n={n} blocks={kind}{}", if r.vacuous { " vacuous" } else { "" }),
                    bound: r.bound,
                    empirical: r.empirical,
                    margin: r.margin,
                    pass: r.pass,
                }])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn randomp_bounds() {
        assert!((randomp_bound(0.5, 100) - 0.8).abs() < 1e-12);
        assert!((randomp_bound(0.1, 10) + 89.0).abs() < 1e-9);
        let r = verify_randomp(0.1, 10, 100, &mut seeded(1)).unwrap();
        assert!(r.vacuous && r.pass);
        let r = verify_randomp(0.5, 100, 10_000, &mut seeded(2)).unwrap();
        assert!(r.pass && r.variance_ok(), "{r:?}");
    }

    #[test]
    fn del_examples() {
        let masses = vec![ratio(1, 10); 10];
        let mut over = vec![ratio(0, 1); 10];
        over[0] = ratio(1, 10);
        let r = verify_del(&masses, &over, &ratio(15, 100)).unwrap();
        assert_eq!(r.heavy, vec![0]);
        assert_eq!(r.outside, ratio(9, 10));
        assert!(r.holds);
        let r = verify_del(&masses, &vec![ratio(0, 1); 10], &ratio(1, 100)).unwrap();
        assert!(r.heavy.is_empty() && r.holds);
        assert!(verify_del(&masses, &over, &ratio(1, 10)).is_err());
    }

    #[test]
    fn simple_bounds() {
        assert!((simple_bound(0.5, 0, 1.0 / 1000.0) - 0.984).abs() < 1e-12);
        assert!((simple_bound(0.5, 1, 1.0 / 2000.0) - 0.984).abs() < 1e-12);
        assert!(simple_bound(0.9, 0, 1.0) < 0.0);
        let w = vec![1.0 / 1000.0; 1000];
        let r = verify_simple(0.5, 0.5, 0, &w, BlockSpec::Copies, 10_000, &mut seeded(4)).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
