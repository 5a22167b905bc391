//! Stochastic DP tester for aggregation primitives.
//!
//! Databases are low-discrepancy points of `[-r, r]^S` taken from the Halton
//! sequence. From each root database the tester walks the graph of subsets
//! obtained by removing one record at a time and, for every edge, compares
//! histograms of the mechanism's outputs on both ends against the DP
//! predicate `P[f(A) ∈ B_k] <= e^ε P[f(B) ∈ B_k] + δ`, in both directions.
//! Sampling error is absorbed by Wilson score intervals per bucket and by
//! tolerating up to `α·K` violating buckets.
//!
//! Only row-level DP of a single primitive is tested. Contribution bounding
//! is covered by the planner's own tests.

use std::collections::hash_map::{Entry, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::aggregates::{AggregatorKind, AggregatorSpec, AggregatorState};
use crate::noise::{self, clamp, ClampBounds, RandomSource};
use crate::{Error, Result};

/// Radical inverse of `index` in `base`.
pub fn halton(index: u64, base: u64) -> f64 {
    assert!(index >= 1, "Halton indices start at 1");
    assert!(base >= 2, "Halton base must be at least 2");
    let (mut i, mut f, mut h) = (index, 1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        h += f * (i % base) as f64;
        i /= base;
    }
    h
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut k = 2u64;
    while primes.len() < n {
        if primes.iter().all(|p| !k.is_multiple_of(*p)) {
            primes.push(k);
        }
        k += 1;
    }
    primes
}

/// The first `count` databases of `size` records in `[-r, r]`. Record `d` of
/// database `k` is the `k`-th Halton point in the `d`-th prime base, scaled.
pub fn gen_databases(size: usize, count: usize, r: f64) -> Vec<Vec<f64>> {
    let bases = first_primes(size);
    (1..=count as u64).map(|k| bases.iter().map(|&b| r * (2.0 * halton(k, b) - 1.0)).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TesterConfig {
    /// Root databases generated per size.
    pub num_databases: usize,
    pub db_sizes: Vec<usize>,
    pub value_range: f64,
    pub samples: usize,
    pub buckets: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// Fraction of buckets allowed to violate the predicate per comparison.
    pub alpha: f64,
    pub ci_level: f64,
}

impl Default for TesterConfig {
    fn default() -> Self {
        TesterConfig {
            num_databases: 16,
            db_sizes: vec![1, 2, 3, 4],
            value_range: 0.5,
            samples: 50_000,
            buckets: 50,
            epsilon: 1.0,
            delta: 0.0,
            alpha: 0.02,
            ci_level: 0.999,
        }
    }
}

impl TesterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::parameter(m));
        if self.samples < 1000 {
            return bad(format!("need at least 1000 samples per database, got {}", self.samples));
        }
        if self.buckets < 2 {
            return bad(format!("need at least 2 buckets, got {}", self.buckets));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive and finite, got {}", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1), got {}", self.delta));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return bad(format!("ci level must lie in (0, 1), got {}", self.ci_level));
        }
        if !(self.value_range.is_finite() && self.value_range > 0.0) {
            return bad(format!("value range must be positive, got {}", self.value_range));
        }
        if self.num_databases == 0 || self.db_sizes.is_empty() || self.db_sizes.iter().any(|&s| s == 0 || s > 16) {
            return bad("need at least one root database and sizes in 1..=16".into());
        }
        Ok(())
    }
}

/// A randomized function of a database, with its privacy parameters fixed.
#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    /// One of the engine's aggregates.
    Aggregate(AggregatorSpec),
    /// Known-bad average: sum noised for row presence, divided by the exact
    /// count.
    BrokenAvg(ClampBounds),
    /// Known-bad sum: noise calibrated to `U - L`, which under-noises when
    /// the bounds share a sign.
    BrokenSum(ClampBounds),
}

impl Mechanism {
    pub const BUILTIN_NAMES: [&'static str; 8] =
        ["anon_count", "anon_sum", "anon_avg", "anon_var", "anon_stddev", "anon_ntile", "broken_avg", "broken_sum"];

    /// Looks up a named mechanism; bounds default to `[-r, r]`.
    pub fn builtin(name: &str, r: f64) -> Option<Mechanism> {
        let b = ClampBounds::new(-r, r).ok()?;
        let agg = |kind| AggregatorSpec::new(kind, Some(b), None).ok().map(Mechanism::Aggregate);
        match name.to_ascii_lowercase().as_str() {
            "anon_count" => Some(Mechanism::Aggregate(AggregatorSpec::count())),
            "anon_sum" => agg(AggregatorKind::Sum),
            "anon_avg" => agg(AggregatorKind::Avg),
            "anon_var" => agg(AggregatorKind::Var),
            "anon_stddev" => agg(AggregatorKind::Stddev),
            "anon_ntile" => AggregatorSpec::ntile(0.5, b).ok().map(Mechanism::Aggregate),
            "broken_avg" => Some(Mechanism::BrokenAvg(b)),
            // With bounds straddling zero U - L overestimates the sensitivity,
            // so the fixture uses positive bounds narrower than their lower end.
            "broken_sum" => ClampBounds::new(2.0 * r, 3.0 * r).ok().map(Mechanism::BrokenSum),
            _ => None,
        }
    }

    /// One draw of the mechanism on `db` with privacy parameter `epsilon`.
    pub fn sample(&self, db: &[f64], epsilon: f64, rng: &mut RandomSource) -> Result<f64> {
        match self {
            Mechanism::Aggregate(spec) => {
                let mut state = AggregatorState::new(*spec);
                db.iter().for_each(|&x| state.accumulate(x));
                Ok(state.release(epsilon, 0.5, rng)?.value)
            }
            Mechanism::BrokenAvg(b) => {
                let sum: f64 = db.iter().map(|&x| clamp(x, *b)).sum();
                let noisy = noise::sample_release_noise(sum, b.max_magnitude() / epsilon, rng)?;
                Ok(noisy / db.len().max(1) as f64)
            }
            Mechanism::BrokenSum(b) => {
                let sum: f64 = db.iter().map(|&x| clamp(x, *b)).sum();
                noise::sample_release_noise(sum, b.width() / epsilon, rng)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    /// `P[f(D1)] <= e^ε P[f(D2)] + δ` was violated.
    FirstOverSecond,
    SecondOverFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketViolation {
    /// Index into the histogram; `buckets` is the non-finite bucket.
    pub bucket: usize,
    pub direction: Direction,
    /// Ratio of the point estimates, larger over smaller.
    pub ratio: f64,
}

/// Outcome of one histogram comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairReport {
    pub passed: bool,
    pub range: (f64, f64),
    /// Estimated bucket probabilities for each database.
    pub density_first: Vec<f64>,
    pub density_second: Vec<f64>,
    pub violations: Vec<BucketViolation>,
}

fn histogram(xs: &[f64], lo: f64, width: f64, k: usize) -> Vec<u64> {
    let mut counts = vec![0u64; k + 1];
    let inv = if width > 0.0 { 1.0 / width } else { 0.0 };
    for &x in xs {
        // Float to integer casts saturate, so values below `lo` land in 0.
        let idx = if x.is_finite() { (((x - lo) * inv) as usize).min(k - 1) } else { k };
        counts[idx] += 1;
    }
    counts
}

/// Wilson score interval for a binomial proportion.
fn wilson(successes: u64, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Compares two output samples against the DP predicate.
pub fn compare_samples(first: &[f64], second: &[f64], cfg: &TesterConfig) -> PairReport {
    let finite = first.iter().chain(second).copied().filter(|x| x.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let k = cfg.buckets;
    // A degenerate range puts every finite sample in bucket 0.
    let width = if hi > lo { (hi - lo) / k as f64 } else { 0.0 };
    let (ca, cb) = (histogram(first, lo, width, k), histogram(second, lo, width, k));
    let z = Normal::standard().inverse_cdf(0.5 + cfg.ci_level / 2.0);
    let bound = cfg.epsilon.exp();

    let mut violations = Vec::new();
    for i in 0..=k {
        let (a_lo, a_hi) = wilson(ca[i], first.len(), z);
        let (b_lo, b_hi) = wilson(cb[i], second.len(), z);
        let pa = ca[i] as f64 / first.len() as f64;
        let pb = cb[i] as f64 / second.len() as f64;
        // Only flag what the intervals cannot explain.
        if a_lo > bound * b_hi + cfg.delta {
            violations.push(BucketViolation { bucket: i, direction: Direction::FirstOverSecond, ratio: pa / pb });
        }
        if b_lo > bound * a_hi + cfg.delta {
            violations.push(BucketViolation { bucket: i, direction: Direction::SecondOverFirst, ratio: pb / pa });
        }
    }
    let allowed = cfg.alpha * k as f64;
    let count = |d| violations.iter().filter(|v| v.direction == d).count() as f64;
    let passed = count(Direction::FirstOverSecond) <= allowed && count(Direction::SecondOverFirst) <= allowed;
    PairReport {
        passed,
        range: (lo, hi),
        density_first: ca.iter().map(|&c| c as f64 / first.len() as f64).collect(),
        density_second: cb.iter().map(|&c| c as f64 / second.len() as f64).collect(),
        violations,
    }
}

fn draw(mech: &Mechanism, db: &[f64], cfg: &TesterConfig, mut rng: RandomSource) -> Result<Vec<f64>> {
    if let Mechanism::Aggregate(spec) = mech {
        // Accumulate once; every draw releases the same state afresh.
        let mut state = AggregatorState::new(*spec);
        db.iter().for_each(|&x| state.accumulate(x));
        return (0..cfg.samples).map(|_| state.release_value(cfg.epsilon, &mut rng)).collect();
    }
    (0..cfg.samples).map(|_| mech.sample(db, cfg.epsilon, &mut rng)).collect()
}

/// Samples `mech` on two neighbouring databases and compares the histograms.
pub fn dp_predicate_test(
    mech: &Mechanism,
    d1: &[f64],
    d2: &[f64],
    cfg: &TesterConfig,
    rng: &RandomSource,
) -> Result<PairReport> {
    cfg.validate()?;
    if d1.len().abs_diff(d2.len()) != 1 {
        return Err(Error::parameter("databases must differ by exactly one record"));
    }
    let a = draw(mech, d1, cfg, rng.substream("first"))?;
    let b = draw(mech, d2, cfg, rng.substream("second"))?;
    Ok(compare_samples(&a, &b, cfg))
}

/// A failing neighbouring pair, with enough context to replay it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub db_size: usize,
    /// 1-based Halton index of the root database.
    pub root_index: usize,
    /// Subsets of the root, as bit masks over its records.
    pub mask1: u32,
    pub mask2: u32,
    pub report: PairReport,
}

impl Witness {
    /// Redraws both samples exactly as the run that found this witness did.
    pub fn replay(&self, mech: &Mechanism, cfg: &TesterConfig, rng: &RandomSource) -> Result<PairReport> {
        let root = root_stream(rng, self.db_size, self.root_index);
        let a = draw(mech, &self.d1, cfg, db_stream(&root, self.mask1))?;
        let b = draw(mech, &self.d2, cfg, db_stream(&root, self.mask2))?;
        Ok(compare_samples(&a, &b, cfg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub passed: bool,
    pub pairs_tested: usize,
    /// Distinct databases sampled; every database is sampled once per run.
    pub databases_sampled: usize,
    pub witness: Option<Witness>,
}

fn root_stream(rng: &RandomSource, size: usize, index: usize) -> RandomSource {
    rng.substream(&format!("root/{size}/{index}"))
}

fn db_stream(root: &RandomSource, mask: u32) -> RandomSource {
    root.substream(&format!("db/{mask}"))
}

fn subset(db: &[f64], mask: u32) -> Vec<f64> {
    db.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &x)| x).collect()
}

struct RootOutcome {
    pairs: usize,
    sampled: usize,
    witness: Option<Witness>,
}

/// Depth-first walk of the remove-one-record graph below one root.
fn test_root(
    mech: &Mechanism,
    db: &[f64],
    index: usize,
    cfg: &TesterConfig,
    rng: &RandomSource,
) -> Result<RootOutcome> {
    let root = root_stream(rng, db.len(), index);
    let full: u32 = (1u32 << db.len()) - 1;
    let mut cache: HashMap<u32, Vec<f64>> = HashMap::new();
    let mut expanded = vec![false; full as usize + 1];
    let mut stack = vec![full];
    let mut pairs = 0;

    while let Some(a) = stack.pop() {
        if std::mem::replace(&mut expanded[a as usize], true) {
            continue;
        }
        for i in 0..db.len() {
            if a >> i & 1 == 0 {
                continue;
            }
            let b = a & !(1 << i);
            assert!((a ^ b).count_ones() == 1 && b & !a == 0, "edges must remove exactly one record");
            for m in [a, b] {
                if let Entry::Vacant(slot) = cache.entry(m) {
                    slot.insert(draw(mech, &subset(db, m), cfg, db_stream(&root, m))?);
                }
            }
            pairs += 1;
            let report = compare_samples(&cache[&a], &cache[&b], cfg);
            if !report.passed {
                let witness = Witness {
                    d1: subset(db, a),
                    d2: subset(db, b),
                    db_size: db.len(),
                    root_index: index,
                    mask1: a,
                    mask2: b,
                    report,
                };
                return Ok(RootOutcome { pairs, sampled: cache.len(), witness: Some(witness) });
            }
            stack.push(b);
        }
    }
    Ok(RootOutcome { pairs, sampled: cache.len(), witness: None })
}

/// Runs the full search. Roots are spread over worker threads; the verdict
/// reports the failure of the earliest root in (size, index) order, so it
/// does not depend on scheduling.
pub fn run(mech: &Mechanism, cfg: &TesterConfig, rng: &RandomSource) -> Result<Verdict> {
    cfg.validate()?;
    let jobs: Vec<(usize, Vec<f64>)> = cfg
        .db_sizes
        .iter()
        .flat_map(|&s| gen_databases(s, cfg.num_databases, cfg.value_range).into_iter().enumerate())
        .map(|(i, db)| (i + 1, db))
        .collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let next = AtomicUsize::new(0);
    let first_failure = AtomicUsize::new(usize::MAX);
    let results: Mutex<Vec<Option<Result<RootOutcome>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                if j >= jobs.len() || j > first_failure.load(Ordering::Relaxed) {
                    break;
                }
                let (index, db) = &jobs[j];
                let outcome = test_root(mech, db, *index, cfg, rng);
                if matches!(&outcome, Err(_) | Ok(RootOutcome { witness: Some(_), .. })) {
                    first_failure.fetch_min(j, Ordering::Relaxed);
                }
                results.lock().expect("no worker panicked")[j] = Some(outcome);
            });
        }
    });

    let mut verdict = Verdict { passed: true, pairs_tested: 0, databases_sampled: 0, witness: None };
    for outcome in results.into_inner().expect("no worker panicked").into_iter().flatten() {
        let outcome = outcome?;
        verdict.pairs_tested += outcome.pairs;
        verdict.databases_sampled += outcome.sampled;
        if let Some(w) = outcome.witness {
            verdict.passed = false;
            verdict.witness = Some(w);
            break;
        }
    }
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> TesterConfig {
        TesterConfig { num_databases: 4, db_sizes: vec![1, 2, 3], samples: 20_000, ..TesterConfig::default() }
    }

    #[test]
    fn halton_radical_inverse() {
        assert_eq!([1, 2, 3].map(|i| halton(i, 2)), [0.5, 0.25, 0.75]);
        assert!((halton(1, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((1..2000).all(|i| (0.0..1.0).contains(&halton(i, 7))));
    }

    #[test]
    fn generated_databases() {
        assert_eq!(gen_databases(1, 1, 0.5), vec![vec![0.0]]);
        assert_eq!(gen_databases(3, 5, 0.5), gen_databases(3, 5, 0.5));
        let fourth = &gen_databases(3, 4, 0.5)[3];
        assert_eq!(fourth[0], -0.375);
        assert!((fourth[1] + 0.0556).abs() < 1e-3);
        assert!((fourth[2] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn constant_mechanism_passes() {
        let spec = AggregatorSpec::sum(ClampBounds::new(0.0, 0.0).unwrap());
        let report =
            dp_predicate_test(&Mechanism::Aggregate(spec), &[0.1, 0.2], &[0.1], &quick(), &RandomSource::from_seed(1))
                .unwrap();
        assert!(report.passed);
        assert_eq!(report.density_first[0], 1.0);
    }

    #[test]
    fn pair_must_be_neighbours() {
        let m = Mechanism::builtin("anon_count", 0.5).unwrap();
        assert!(dp_predicate_test(&m, &[0.1, 0.2], &[], &quick(), &RandomSource::from_seed(1)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TesterConfig { samples: 999, ..quick() }.validate().is_err());
        assert!(TesterConfig { buckets: 1, ..quick() }.validate().is_err());
        assert!(TesterConfig { alpha: 1.0, ..quick() }.validate().is_ok());
    }

    #[test]
    fn wilson_covers_point_estimate() {
        let (lo, hi) = wilson(30, 100, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        assert_eq!(wilson(0, 100, 1.96).0, 0.0);
    }

    #[test]
    fn broken_average_caught_on_known_pair() {
        let m = Mechanism::builtin("broken_avg", 0.5).unwrap();
        let cfg = TesterConfig { samples: 50_000, ..quick() };
        let report =
            dp_predicate_test(&m, &[-0.375, -0.055, 0.3], &[-0.375, -0.055], &cfg, &RandomSource::from_seed(5))
                .unwrap();
        assert!(!report.passed, "{:?}", report.violations);
    }

    #[test]
    fn correct_count_passes_quick_run() {
        let m = Mechanism::builtin("anon_count", 0.5).unwrap();
        let v = run(&m, &quick(), &RandomSource::from_seed(2)).unwrap();
        assert!(v.passed, "{:?}", v.witness);
        // 4 roots each of sizes 1, 2, 3: 1 + 4 + 12 edges and 2 + 4 + 8 subsets.
        assert_eq!(v.pairs_tested, 4 * 17);
        assert_eq!(v.databases_sampled, 4 * 14);
    }

    #[test]
    fn broken_sum_fails_and_witness_replays() {
        let m = Mechanism::builtin("broken_sum", 0.5).unwrap();
        let rng = RandomSource::from_seed(3);
        let v = run(&m, &quick(), &rng).unwrap();
        let w = v.witness.expect("under-noised sum must fail");
        assert!(!v.passed);
        assert_eq!(w.d1.len(), w.d2.len() + 1);
        assert_eq!(w.replay(&m, &quick(), &rng).unwrap(), w.report);
    }

    #[test]
    fn full_tolerance_always_passes() {
        let m = Mechanism::builtin("broken_sum", 0.5).unwrap();
        let v = run(&m, &TesterConfig { alpha: 1.0, ..quick() }, &RandomSource::from_seed(3)).unwrap();
        assert!(v.passed);
    }

    #[test]
    fn unknown_builtin() {
        assert!(Mechanism::builtin("anon_mode", 0.5).is_none());
        assert!(Mechanism::BUILTIN_NAMES.iter().all(|n| Mechanism::builtin(n, 0.5).is_some()));
    }

    #[test]
    fn broken_average_fails_on_three_record_pair() {
        let cfg = TesterConfig::default();
        let d1 = gen_databases(3, 4, cfg.value_range).swap_remove(3);
        let want = [-0.375, -1.0 / 18.0, 0.3];
        assert!(d1.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12), "{d1:?}");
        let broken = Mechanism::builtin("broken_avg", cfg.value_range).unwrap();
        let report = dp_predicate_test(&broken, &d1, &d1[..2], &cfg, &RandomSource::from_seed(77)).unwrap();
        assert!(!report.passed);
        let correct = Mechanism::builtin("anon_avg", cfg.value_range).unwrap();
        assert!(dp_predicate_test(&correct, &d1, &d1[..2], &cfg, &RandomSource::from_seed(77)).unwrap().passed);
    }
}
