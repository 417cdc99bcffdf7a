//! Exact and asymptotic nonparametric tests, rank correlations, least
//! squares, and a unit-resampling bootstrap for regression slopes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{invalid, Error, Result};

/// Largest sample for which the signed-rank null is enumerated exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 20;
/// Largest sample for which Kendall's null is enumerated exactly.
pub const KENDALL_EXACT_MAX_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SignExact,
    WilcoxonExact,
    WilcoxonNormal,
    KendallExact,
    KendallNormal,
    SpearmanExact,
    SpearmanT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    pub alternative: Alternative,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<(f64, f64)>,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64, method: Method, alternative: Alternative, n: usize) -> Self {
        TestResult {
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            method,
            alternative,
            n,
            ci: None,
        }
    }

    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn normal_tail(z: f64, alt: Alternative) -> f64 {
    let n = std_normal();
    match alt {
        Alternative::Greater => n.sf(z),
        Alternative::Less => n.cdf(z),
        Alternative::TwoSided => (2.0 * n.sf(z.abs())).min(1.0),
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// P(X >= s) for X ~ Binomial(n, 1/2), summed in log space.
fn binomial_half_upper(s: usize, n: usize) -> f64 {
    // ln C(n, k) for k = n, n-1, ..., s
    let mut terms = Vec::with_capacity(n - s + 1);
    let mut lc = 0.0f64;
    terms.push(lc);
    for k in (s..n).rev() {
        lc += ((k + 1) as f64).ln() - ((n - k) as f64).ln();
        terms.push(lc);
    }
    (log_sum_exp(&terms) - n as f64 * std::f64::consts::LN_2).exp()
}

/// One-tailed exact sign test: P(X >= successes) for X ~ Binomial(n, 1/2).
pub fn sign_test_one_tailed(successes: usize, n: usize) -> Result<TestResult> {
    if n == 0 {
        return Err(invalid("sign test needs n >= 1"));
    }
    if successes > n {
        return Err(invalid(format!("successes {successes} exceed n {n}")));
    }
    let p = if successes == n {
        0.5f64.powi(n as i32)
    } else if successes == 0 {
        1.0
    } else if 2 * successes > n {
        binomial_half_upper(successes, n)
    } else {
        // by symmetry P(X >= s) = 1 - P(X >= n - s + 1)
        1.0 - binomial_half_upper(n - successes + 1, n)
    };
    Ok(TestResult::new(successes as f64, p, Method::SignExact, Alternative::Greater, n))
}

/// Average ranks (1-based) with ties sharing the mean rank.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of groups of equal values.
fn tie_groups(xs: &[f64]) -> Vec<usize> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        out.push(j - i + 1);
        i = j + 1;
    }
    out
}

/// Wilcoxon signed-rank test. Exact zeros are dropped; the exact null is
/// enumerated for n <= 20, otherwise a tie-corrected normal approximation
/// is used. The statistic is W+, the rank sum of positive differences.
pub fn wilcoxon_signed_rank(differences: &[f64], alt: Alternative) -> Result<TestResult> {
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(invalid("differences must be finite"));
    }
    let nz: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::Degenerate("all differences are zero".into()));
    }
    let n = nz.len();
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    if n <= WILCOXON_EXACT_MAX_N {
        // Doubled midranks are integers; count subsets by doubled rank sum.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0u64; total + 1];
        counts[0] = 1;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let obs = (2.0 * w_plus).round() as usize;
        let denom = (1u64 << n) as f64;
        let upper: u64 = counts[obs..].iter().sum();
        let lower: u64 = counts[..=obs].iter().sum();
        let p = match alt {
            Alternative::Greater => upper as f64 / denom,
            Alternative::Less => lower as f64 / denom,
            Alternative::TwoSided => (2.0 * upper.min(lower) as f64 / denom).min(1.0),
        };
        return Ok(TestResult::new(w_plus, p, Method::WilcoxonExact, alt, n));
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_adj: f64 = tie_groups(&abs).iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_adj;
    if var <= 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    let z = (w_plus - mean) / var.sqrt();
    Ok(TestResult::new(w_plus, normal_tail(z, alt), Method::WilcoxonNormal, alt, n))
}

/// One-sided (greater) signed-rank test.
pub fn wilcoxon_signed_rank_one_sided(differences: &[f64]) -> Result<TestResult> {
    wilcoxon_signed_rank(differences, Alternative::Greater)
}

fn sign(x: f64) -> i64 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Kendall's S = concordant minus discordant pairs.
fn kendall_s(x: &[f64], y: &[f64]) -> i64 {
    let mut s = 0;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            s += sign(x[j] - x[i]) * sign(y[j] - y[i]);
        }
    }
    s
}

fn pairs_tied(groups: &[usize]) -> f64 {
    groups.iter().map(|&t| (t * (t - 1) / 2) as f64).sum()
}

fn check_pairs(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(invalid("x and y differ in length"));
    }
    if x.len() < min {
        return Err(invalid(format!("need at least {min} observations")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("observations must be finite"));
    }
    Ok(())
}

/// Kendall's tau-b and its S statistic.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<(f64, i64)> {
    check_pairs(x, y, 2)?;
    let n = x.len() as f64;
    let n0 = n * (n - 1.0) / 2.0;
    let n1 = pairs_tied(&tie_groups(x));
    let n2 = pairs_tied(&tie_groups(y));
    if n0 == n1 {
        return Err(Error::Degenerate("all x values tied".into()));
    }
    if n0 == n2 {
        return Err(Error::Degenerate("all y values tied".into()));
    }
    let s = kendall_s(x, y);
    Ok((s as f64 / ((n0 - n1) * (n0 - n2)).sqrt(), s))
}

/// Null distribution of S by permutation, as (S value -> count).
fn kendall_exact_counts(x: &[f64], y: &[f64]) -> Vec<(i64, u64)> {
    let n = x.len();
    let mut counts = std::collections::BTreeMap::new();
    if tie_groups(x).len() == n && tie_groups(y).len() == n {
        // No ties: S = n(n-1)/2 - 2 * inversions, inversion counts are Mahonian.
        let max_inv = n * (n - 1) / 2;
        let mut dist = vec![0u64; max_inv + 1];
        dist[0] = 1;
        for k in 1..n {
            let mut next = vec![0u64; max_inv + 1];
            for (inv, &c) in dist.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                for add in 0..=k {
                    if inv + add <= max_inv {
                        next[inv + add] += c;
                    }
                }
            }
            dist = next;
        }
        for (inv, &c) in dist.iter().enumerate() {
            if c > 0 {
                counts.insert(max_inv as i64 - 2 * inv as i64, c);
            }
        }
    } else {
        for_each_permutation(y, |p| *counts.entry(kendall_s(x, p)).or_insert(0u64) += 1);
    }
    counts.into_iter().collect()
}

fn kendall_var_s(n: usize, xg: &[usize], yg: &[usize]) -> f64 {
    let nf = n as f64;
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = |g: &[usize]| g.iter().map(|&t| (t * (t - 1) * (2 * t + 5)) as f64).sum::<f64>();
    let t1 = |g: &[usize]| g.iter().map(|&t| (t * (t - 1)) as f64).sum::<f64>();
    let t2 = |g: &[usize]| g.iter().map(|&t| (t * (t - 1) * (t.saturating_sub(2))) as f64).sum::<f64>();
    let mut var = (v0 - vt(xg) - vt(yg)) / 18.0;
    var += t1(xg) * t1(yg) / (2.0 * nf * (nf - 1.0));
    if n > 2 {
        var += t2(xg) * t2(yg) / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    }
    var
}

/// Kendall tau-b with a permutation p-value for n <= 8 and a tie-corrected
/// normal approximation above.
pub fn kendall_tau_test(x: &[f64], y: &[f64], alt: Alternative) -> Result<TestResult> {
    check_pairs(x, y, 3)?;
    let (tau, s) = kendall_tau_b(x, y)?;
    let n = x.len();
    if n <= KENDALL_EXACT_MAX_N {
        let counts = kendall_exact_counts(x, y);
        let total: u64 = counts.iter().map(|(_, c)| c).sum();
        let tail = |pred: &dyn Fn(i64) -> bool| {
            counts.iter().filter(|(v, _)| pred(*v)).map(|(_, c)| c).sum::<u64>() as f64 / total as f64
        };
        let p = match alt {
            Alternative::Greater => tail(&|v| v >= s),
            Alternative::Less => tail(&|v| v <= s),
            Alternative::TwoSided => tail(&|v| v.abs() >= s.abs()),
        };
        return Ok(TestResult::new(tau, p, Method::KendallExact, alt, n));
    }
    let var = kendall_var_s(n, &tie_groups(x), &tie_groups(y));
    let z = s as f64 / var.sqrt();
    Ok(TestResult::new(tau, normal_tail(z, alt), Method::KendallNormal, alt, n))
}

/// One-sided test for a positive monotone trend of `y` in `x`.
pub fn kendall_tau_trend(x: &[f64], y: &[f64]) -> Result<TestResult> {
    kendall_tau_test(x, y, Alternative::Greater)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of a correlation coefficient via Student's t with
/// n - 2 degrees of freedom.
pub fn correlation_t_p(r: f64, n: usize) -> f64 {
    if n <= 2 {
        return 1.0;
    }
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive dof");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Spearman's rho (Pearson correlation of midranks) with a two-sided
/// p-value: permutation for n <= 8, Student's t above.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<TestResult> {
    check_pairs(x, y, 3)?;
    let rx = midranks(x);
    let ry = midranks(y);
    let rho = pearson(&rx, &ry)?;
    let n = x.len();
    if n <= KENDALL_EXACT_MAX_N {
        // Sum of rank products determines rho for fixed margins.
        let stat = |p: &[f64]| rx.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
        let obs = stat(&ry);
        let centre = rx.iter().sum::<f64>() * ry.iter().sum::<f64>() / n as f64;
        let dev = (obs - centre).abs() - 1e-9;
        let (mut hits, mut total) = (0u64, 0u64);
        for_each_permutation(&ry, |p| {
            total += 1;
            if (stat(p) - centre).abs() >= dev {
                hits += 1;
            }
        });
        return Ok(TestResult::new(rho, hits as f64 / total as f64, Method::SpearmanExact, Alternative::TwoSided, n));
    }
    Ok(TestResult::new(rho, correlation_t_p(rho, n), Method::SpearmanT, Alternative::TwoSided, n))
}

/// Calls `f` on every permutation of `items` (Heap's algorithm).
fn for_each_permutation(items: &[f64], mut f: impl FnMut(&[f64])) {
    let n = items.len();
    let mut perm = items.to_vec();
    let mut c = vec![0usize; n];
    f(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            f(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    LogX,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub transform: Transform,
}

impl OlsFit {
    /// Untransformed x at which the fitted line crosses y = 0.
    pub fn zero_crossing(&self) -> Option<f64> {
        if self.slope == 0.0 {
            return None;
        }
        let u = -self.intercept / self.slope;
        Some(match self.transform {
            Transform::Identity => u,
            Transform::LogX => u.exp(),
        })
    }

    pub fn predict(&self, x: f64) -> f64 {
        let u = match self.transform {
            Transform::Identity => x,
            Transform::LogX => x.ln(),
        };
        self.intercept + self.slope * u
    }
}

/// Least-squares line of `y` on `transform(x)`.
pub fn ols_fit(x: &[f64], y: &[f64], transform: Transform) -> Result<OlsFit> {
    check_pairs(x, y, 2)?;
    let u: Vec<f64> = match transform {
        Transform::Identity => x.to_vec(),
        Transform::LogX => {
            if x.iter().any(|&v| v <= 0.0) {
                return Err(invalid("log_x requires x > 0"));
            }
            x.iter().map(|v| v.ln()).collect()
        }
    };
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut suu, mut suy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(y) {
        suu += (a - mu) * (a - mu);
        suy += (a - mu) * (b - my);
        syy += (b - my) * (b - my);
    }
    if suu == 0.0 {
        return Err(Error::Degenerate("zero x variance".into()));
    }
    let slope = suy / suu;
    let intercept = my - slope * mu;
    let sse: f64 = u.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(OlsFit {
        slope,
        intercept,
        r_squared,
        transform,
    })
}

/// Linear-interpolation quantile (type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn pooled_slope(units: &[Vec<(f64, f64)>], pick: impl Iterator<Item = usize>) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in pick {
        for &(x, y) in &units[i] {
            xs.push(x);
            ys.push(y);
        }
    }
    ols_fit(&xs, &ys, Transform::Identity).ok().map(|f| f.slope)
}

/// Percentile bootstrap interval for the pooled OLS slope. Units (all dose
/// points of one item-seed pair) are resampled with replacement, so points
/// of a unit always move together. Replicate `r` draws from a ChaCha stream
/// keyed by `(seed, r)`.
pub fn bootstrap_slope_ci(units: &[Vec<(f64, f64)>], b: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    if units.len() < 2 {
        return Err(invalid("bootstrap needs at least 2 units"));
    }
    if b < 1000 {
        return Err(invalid("bootstrap needs B >= 1000"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("level must lie in (0, 1)"));
    }
    let mut doses: Vec<f64> = units.iter().flatten().map(|p| p.0).collect();
    doses.sort_by(f64::total_cmp);
    doses.dedup();
    if doses.len() < 2 {
        return Err(Error::Degenerate("fewer than 2 distinct doses".into()));
    }
    let m = units.len();
    let mut slopes: Vec<f64> = (0..b as u64)
        .into_par_iter()
        .filter_map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            let picks: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
            pooled_slope(units, picks.into_iter())
        })
        .collect();
    if slopes.is_empty() {
        return Err(Error::Degenerate("every bootstrap replicate was degenerate".into()));
    }
    slopes.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&slopes, tail), quantile_sorted(&slopes, 1.0 - tail)))
}

/// Pooled OLS slope over all unit points.
pub fn pooled_unit_slope(units: &[Vec<(f64, f64)>]) -> Result<f64> {
    pooled_slope(units, 0..units.len()).ok_or_else(|| Error::Degenerate("zero dose variance".into()))
}

/// Fraction of sequences that are strictly increasing.
pub fn strict_monotone_fraction(seqs: &[Vec<f64>]) -> Result<f64> {
    if let Some(bad) = seqs.iter().find(|s| s.len() != 4) {
        return Err(invalid(format!("dose sequence has {} values, expected 4", bad.len())));
    }
    if seqs.is_empty() {
        return Ok(0.0);
    }
    let k = seqs.iter().filter(|s| is_strictly_increasing(s)).count();
    Ok(k as f64 / seqs.len() as f64)
}

pub fn is_strictly_increasing(s: &[f64]) -> bool {
    s.windows(2).all(|w| w[0] < w[1])
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for n < 2.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn sem(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    sample_sd(xs) / (xs.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn sign_test_reference_values() {
        for (k, expected) in [(100, 7.89e-31), (99, 7.97e-29), (98, 3.98e-27), (85, 2.41e-13)] {
            let p = sign_test_one_tailed(k, 100).unwrap().p_value;
            assert!(rel(p, expected) < 0.01, "{k}: {p:e}");
        }
        assert_eq!(sign_test_one_tailed(0, 1).unwrap().p_value, 1.0);
        assert_eq!(sign_test_one_tailed(1, 1).unwrap().p_value, 0.5);
        assert_eq!(sign_test_one_tailed(100, 100).unwrap().p_value, 0.5f64.powi(100));
        assert!(sign_test_one_tailed(3, 2).is_err());
        assert!(sign_test_one_tailed(0, 0).is_err());
    }

    #[test]
    fn sign_test_decreasing_in_successes() {
        // strict below n = 53, where 1 - 2^-n still differs from 1 in f64
        for n in [1usize, 7, 40, 52] {
            let ps: Vec<f64> = (0..=n).map(|k| sign_test_one_tailed(k, n).unwrap().p_value).collect();
            assert!(ps.windows(2).all(|w| w[0] > w[1]), "n = {n}");
        }
        let ps: Vec<f64> = (0..=100).map(|k| sign_test_one_tailed(k, 100).unwrap().p_value).collect();
        assert!(ps.windows(2).all(|w| w[0] >= w[1]));
        assert!(ps[50..].windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn wilcoxon_small_cases() {
        let all_pos = wilcoxon_signed_rank_one_sided(&[0.4, 1.2, 0.3, 2.0, 0.9]).unwrap();
        assert_eq!(all_pos.p_value, 0.03125);
        assert_eq!(all_pos.method, Method::WilcoxonExact);
        let one_neg = wilcoxon_signed_rank_one_sided(&[0.4, 1.2, -0.1, 2.0, 0.9]).unwrap();
        assert_eq!(one_neg.p_value, 2.0 / 32.0);
        assert!(matches!(
            wilcoxon_signed_rank_one_sided(&[0.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
        // zeros are dropped
        assert_eq!(wilcoxon_signed_rank_one_sided(&[0.0, 1.0, 2.0]).unwrap().n, 2);
    }

    #[test]
    fn wilcoxon_large_sample_uses_normal() {
        let d: Vec<f64> = (1..=30).map(|i| i as f64 - 10.5).collect();
        let r = wilcoxon_signed_rank_one_sided(&d).unwrap();
        assert_eq!(r.method, Method::WilcoxonNormal);
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn kendall_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = kendall_tau_trend(&x, &[2.0, 3.0, 5.0, 8.0, 9.0]).unwrap();
        assert_eq!(up.statistic, 1.0);
        assert!((up.p_value - 1.0 / 120.0).abs() < 1e-15);
        let down = kendall_tau_trend(&x, &[9.0, 8.0, 5.0, 3.0, 2.0]).unwrap();
        assert_eq!(down.statistic, -1.0);
        assert_eq!(down.p_value, 1.0);
        assert!(kendall_tau_trend(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn kendall_tied_doses_large_sample() {
        // 4 doses x 25 units, the pooled layout of the dose-response track
        let x: Vec<f64> = (0..100).map(|i| (i % 4) as f64).collect();
        let y: Vec<f64> = (0..100).map(|i| (i % 4) as f64 + ((i * 37) % 11) as f64 * 0.3).collect();
        let r = kendall_tau_trend(&x, &y).unwrap();
        assert_eq!(r.method, Method::KendallNormal);
        assert!(r.statistic > 0.0 && r.p_value < 1e-3);
    }

    #[test]
    fn kendall_two_sided_normal_matches_reported_trend_p() {
        // tau-b of 0.391 / 0.241 on 100 points with four 25-point dose ties and
        // untied advantages gives the reported trend p-values when read as
        // two-sided normal tails.
        let xg = [25usize; 4];
        let n0: f64 = 4950.0;
        let n1 = 4.0 * 300.0;
        for (tau, reported) in [(0.391, 2.07e-7), (0.241, 1.36e-3), (0.480, 1.98e-10)] {
            let s = tau * ((n0 - n1) * n0).sqrt();
            let z = s / kendall_var_s(100, &xg, &[1; 100]).sqrt();
            let p = normal_tail(z, Alternative::TwoSided);
            assert!(rel(p, reported) < 0.1, "tau {tau}: {p:e} vs {reported:e}");
        }
    }

    #[test]
    fn spearman_extremes_and_errors() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman_rho(&x, &x).unwrap().statistic, 1.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(spearman_rho(&x, &neg).unwrap().statistic, -1.0);
        assert!(spearman_rho(&x, &[1.0; 4]).is_err());
        assert!(spearman_rho(&x, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn correlation_p_values_match_reported() {
        for (r, n, reported, tol) in [
            (-0.533, 45, 0.0002, 0.25),
            (0.434, 45, 0.003, 0.1),
            (0.335, 45, 0.024, 0.05),
            (0.07, 9, 0.86, 0.02),
            (-0.15, 9, 0.70, 0.02),
        ] {
            let p = correlation_t_p(r, n);
            assert!(rel(p, reported) < tol, "r={r}: {p}");
        }
    }

    #[test]
    fn ols_exact_line_and_zero_crossing() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = ols_fit(&x, &y, Transform::Identity).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.zero_crossing().unwrap() + 0.5).abs() < 1e-12);

        let px = [10.0f64, 20.0, 40.0];
        let py: Vec<f64> = px.iter().map(|v| 0.5 * v.ln() - 1.0).collect();
        let g = ols_fit(&px, &py, Transform::LogX).unwrap();
        assert!((g.zero_crossing().unwrap() - 2.0f64.exp()).abs() < 1e-9);
        assert!(ols_fit(&[0.0, 1.0], &[1.0, 2.0], Transform::LogX).is_err());
        assert!(ols_fit(&[1.0, 1.0], &[1.0, 2.0], Transform::Identity).is_err());
    }

    #[test]
    fn bootstrap_degenerate_and_deterministic() {
        let unit: Vec<(f64, f64)> = (0..4).map(|d| (d as f64, 0.5 * d as f64 + 0.1)).collect();
        let units = vec![unit; 6];
        let slope = pooled_unit_slope(&units).unwrap();
        let (lo, hi) = bootstrap_slope_ci(&units, 1000, 0.95, 1).unwrap();
        assert_eq!((lo, hi), (slope, slope));

        let noisy: Vec<Vec<(f64, f64)>> = (0..10)
            .map(|u| (0..4).map(|d| (d as f64, d as f64 * (0.5 + 0.1 * u as f64))).collect())
            .collect();
        let a = bootstrap_slope_ci(&noisy, 2000, 0.95, 9).unwrap();
        assert_eq!(a, bootstrap_slope_ci(&noisy, 2000, 0.95, 9).unwrap());
        assert!(a.0 < a.1);
        assert!(bootstrap_slope_ci(&noisy[..1], 2000, 0.95, 9).is_err());
        assert!(bootstrap_slope_ci(&noisy, 999, 0.95, 9).is_err());
    }

    #[test]
    fn monotone_fraction() {
        let up = vec![0.1, 0.5, 1.2, 2.0];
        let bump = vec![0.1, 0.5, 0.4, 2.0];
        let flat = vec![0.1, 0.5, 0.5, 2.0];
        assert_eq!(strict_monotone_fraction(&[up.clone(), up.clone()]).unwrap(), 1.0);
        let mut seqs = vec![up; 12];
        seqs.extend(std::iter::repeat_n(bump, 10));
        seqs.extend(std::iter::repeat_n(flat, 3));
        assert_eq!(strict_monotone_fraction(&seqs).unwrap(), 0.48);
        assert!(strict_monotone_fraction(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    proptest! {
        #[test]
        fn wilcoxon_p_is_multiple_of_two_pow_minus_n(d in prop::collection::vec(-100i32..100, 1..12)) {
            // distinct magnitudes, no zeros
            let mut seen = std::collections::BTreeSet::new();
            let d: Vec<f64> = d.into_iter().filter(|v| *v != 0 && seen.insert(v.abs())).map(f64::from).collect();
            prop_assume!(!d.is_empty());
            let r = wilcoxon_signed_rank_one_sided(&d).unwrap();
            let scaled = r.p_value * (1u64 << d.len()) as f64;
            prop_assert!((scaled - scaled.round()).abs() < 1e-9);
            let neg: Vec<f64> = d.iter().map(|v| -v).collect();
            let flipped = wilcoxon_signed_rank(&neg, Alternative::Greater).unwrap();
            let less = wilcoxon_signed_rank(&d, Alternative::Less).unwrap();
            prop_assert_eq!(flipped.p_value, less.p_value);
        }

        #[test]
        fn rank_statistics_invariant_to_monotone_maps(
            pts in prop::collection::vec((-50i32..50, -50i32..50), 3..9)
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1 as f64).collect();
            let fx: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
            let fy: Vec<f64> = y.iter().map(|v| v * v * v + 3.0 * v).collect();
            if let (Ok(a), Ok(b)) = (kendall_tau_trend(&x, &y), kendall_tau_trend(&fx, &fy)) {
                prop_assert!((a.statistic - b.statistic).abs() < 1e-12);
                prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
            }
            if let (Ok(a), Ok(b)) = (spearman_rho(&x, &y), spearman_rho(&fx, &fy)) {
                prop_assert!((a.statistic - b.statistic).abs() < 1e-12);
            }
        }

        #[test]
        fn ols_residuals_orthogonal(pts in prop::collection::vec((0.1f64..100.0, -50.0f64..50.0), 3..30)) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            for tr in [Transform::Identity, Transform::LogX] {
                if let Ok(f) = ols_fit(&x, &y, tr) {
                    let u: Vec<f64> = x.iter().map(|&v| if tr == Transform::LogX { v.ln() } else { v }).collect();
                    let res: Vec<f64> = u.iter().zip(&y).map(|(a, b)| b - f.intercept - f.slope * a).collect();
                    let dot: f64 = res.iter().zip(&u).map(|(r, a)| r * a).sum();
                    let scale: f64 = res.iter().map(|r| r.abs()).sum::<f64>() * u.iter().map(|a| a.abs()).fold(0.0, f64::max) + 1e-300;
                    prop_assert!(dot.abs() / scale < 1e-9);
                    prop_assert!(res.iter().sum::<f64>().abs() < 1e-9 * (1.0 + y.iter().map(|v| v.abs()).sum::<f64>()));
                }
            }
        }
    }
}
