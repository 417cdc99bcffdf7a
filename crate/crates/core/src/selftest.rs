//! Built-in oracle suite: reference sign-test and signed-rank values, and
//! the exact rank tests against brute-force enumeration for small n.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{param_count, size_preset};
use crate::stats::{kendall_tau_test, sign_test_one_tailed, spearman_rho, wilcoxon_signed_rank, Alternative};

pub const ENUMERATION_MAX_N: usize = 7;
pub const ENUMERATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub expected: f64,
    pub actual: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn relative(name: &str, expected: f64, actual: f64, tol: f64) -> Check {
    Check {
        name: name.into(),
        expected,
        actual,
        pass: ((actual - expected) / expected).abs() <= tol,
        detail: format!("relative tolerance {tol}"),
    }
}

pub fn reference_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for (s, expected) in [(100, 7.89e-31), (99, 7.97e-29), (98, 3.98e-27), (85, 2.41e-13)] {
        let p = sign_test_one_tailed(s, 100).map_or(f64::NAN, |t| t.p_value);
        out.push(relative(&format!("sign test {s}/100"), expected, p, 0.01));
    }
    let w = wilcoxon_signed_rank(&[0.4, 1.1, 0.7, 2.0, 0.9], Alternative::Greater).map_or(f64::NAN, |t| t.p_value);
    out.push(Check {
        name: "signed-rank n=5 all positive".into(),
        expected: 0.03125,
        actual: w,
        pass: w == 0.03125,
        detail: "exact".into(),
    });
    for (name, expected) in [("small", 2_862_848.0), ("medium", 8_878_080.0), ("large", 33_498_112.0)] {
        let got = size_preset(name, 8020, 128).map_or(f64::NAN, |c| param_count(&c) as f64);
        out.push(Check {
            name: format!("{name} parameter count"),
            expected,
            actual: got,
            pass: got == expected,
            detail: String::new(),
        });
    }
    out
}

fn naive_midranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let below = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn tail_p(null: &[f64], obs: f64, alt: Alternative) -> f64 {
    let eps = 1e-9;
    let frac = |pred: &dyn Fn(f64) -> bool| null.iter().filter(|&&v| pred(v)).count() as f64 / null.len() as f64;
    match alt {
        Alternative::Greater => frac(&|v| v >= obs - eps),
        Alternative::Less => frac(&|v| v <= obs + eps),
        Alternative::TwoSided => frac(&|v| v.abs() >= obs.abs() - eps),
    }
}

/// Signed-rank p by listing all 2^n sign patterns. `None` if every
/// difference is zero.
pub fn brute_wilcoxon(d: &[f64], alt: Alternative) -> Option<f64> {
    let nz: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
    if nz.is_empty() {
        return None;
    }
    let ranks = naive_midranks(&nz.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let obs: f64 = nz.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let null: Vec<f64> = (0..1u32 << nz.len())
        .map(|mask| (0..nz.len()).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum())
        .collect();
    Some(match alt {
        Alternative::TwoSided => {
            (2.0 * tail_p(&null, obs, Alternative::Greater).min(tail_p(&null, obs, Alternative::Less))).min(1.0)
        }
        a => tail_p(&null, obs, a),
    })
}

fn naive_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut c, mut d, mut tx, mut ty, mut pairs) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in 0..i {
            pairs += 1.0;
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            if dx == 0.0 {
                tx += 1.0;
            }
            if dy == 0.0 {
                ty += 1.0;
            }
            if dx * dy > 0.0 {
                c += 1.0;
            } else if dx * dy < 0.0 {
                d += 1.0;
            }
        }
    }
    let denom: f64 = (pairs - tx) * (pairs - ty);
    (denom > 0.0).then(|| (c - d) / denom.sqrt())
}

fn naive_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn permutation_p(x: &[f64], y: &[f64], stat: impl Fn(&[f64], &[f64]) -> Option<f64>, alt: Alternative) -> Option<f64> {
    let obs = stat(x, y)?;
    let null: Vec<f64> = permutations(y.len())
        .iter()
        .map(|p| {
            let py: Vec<f64> = p.iter().map(|&i| y[i]).collect();
            stat(x, &py).expect("margins unchanged")
        })
        .collect();
    Some(tail_p(&null, obs, alt))
}

pub fn brute_kendall(x: &[f64], y: &[f64], alt: Alternative) -> Option<f64> {
    permutation_p(x, y, naive_tau_b, alt)
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let rank_corr = |a: &[f64], b: &[f64]| naive_pearson(&naive_midranks(a), &naive_midranks(b));
    permutation_p(x, y, rank_corr, Alternative::TwoSided)
}

/// Draws small integer samples so ties and zeros are common.
fn sample(rng: &mut ChaCha8Rng, n: usize, span: i32) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-span..=span) as f64).collect()
}

struct Agreement {
    cases: usize,
    worst: f64,
    mismatch: Option<String>,
}

impl Agreement {
    fn new() -> Self {
        Agreement {
            cases: 0,
            worst: 0.0,
            mismatch: None,
        }
    }

    fn add(&mut self, label: impl Fn() -> String, oracle: Option<f64>, got: Option<f64>) {
        self.cases += 1;
        match (oracle, got) {
            (Some(a), Some(b)) => {
                let e = (a - b).abs();
                if e > self.worst || e.is_nan() {
                    self.worst = if e.is_nan() { f64::INFINITY } else { e };
                    if e > ENUMERATION_TOLERANCE {
                        self.mismatch = Some(format!("{}: oracle {a}, got {b}", label()));
                    }
                }
            }
            (None, None) => {}
            (a, b) => {
                self.worst = f64::INFINITY;
                self.mismatch = Some(format!("{}: oracle {a:?}, got {b:?}", label()));
            }
        }
    }

    fn check(self, name: &str) -> Check {
        Check {
            name: format!("{name} vs enumeration (n <= {ENUMERATION_MAX_N}, {} cases)", self.cases),
            expected: 0.0,
            actual: self.worst,
            pass: self.worst <= ENUMERATION_TOLERANCE,
            detail: self.mismatch.unwrap_or_default(),
        }
    }
}

pub fn enumeration_checks(cases_per_n: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alts = [Alternative::Greater, Alternative::Less, Alternative::TwoSided];
    let (mut w, mut k, mut s) = (Agreement::new(), Agreement::new(), Agreement::new());
    for n in 1..=ENUMERATION_MAX_N {
        for case in 0..cases_per_n {
            // alternate heavy ties with nearly tie-free draws
            let span = if case % 2 == 0 { 2 } else { 50 };
            let d = sample(&mut rng, n, span);
            for alt in alts {
                let got = wilcoxon_signed_rank(&d, alt).ok().map(|t| t.p_value);
                w.add(|| format!("signed-rank {d:?} {alt:?}"), brute_wilcoxon(&d, alt), got);
            }
            if n < 3 {
                continue;
            }
            let x = sample(&mut rng, n, span);
            let y = sample(&mut rng, n, span);
            for alt in alts {
                let got = kendall_tau_test(&x, &y, alt).ok().map(|t| t.p_value);
                k.add(|| format!("kendall {x:?} {y:?} {alt:?}"), brute_kendall(&x, &y, alt), got);
            }
            let got = spearman_rho(&x, &y).ok().map(|t| t.p_value);
            s.add(|| format!("spearman {x:?} {y:?}"), brute_spearman(&x, &y), got);
        }
    }
    vec![w.check("signed-rank exact p"), k.check("kendall exact p"), s.check("spearman exact p")]
}

pub fn run() -> SelftestReport {
    let t = Instant::now();
    let mut checks = reference_checks();
    checks.extend(enumeration_checks(40, 7));
    SelftestReport {
        checks,
        seconds: t.elapsed().as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_are_complete_and_distinct() {
        let mut p = permutations(4);
        assert_eq!(p.len(), 24);
        p.sort();
        p.dedup();
        assert_eq!(p.len(), 24);
    }

    #[test]
    fn brute_oracles_agree_with_hand_counts() {
        // all positive, n=3: only the full set reaches W+=6
        assert_eq!(brute_wilcoxon(&[1.0, 2.0, 3.0], Alternative::Greater), Some(0.125));
        // perfectly concordant, n=4: 1/24 permutations as extreme
        assert_eq!(brute_kendall(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0], Alternative::Greater), Some(1.0 / 24.0));
        assert_eq!(brute_spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), Some(2.0 / 6.0));
        assert_eq!(brute_kendall(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], Alternative::Greater), None);
    }

    #[test]
    fn suite_passes_quickly() {
        let r = run();
        for c in &r.checks {
            assert!(c.pass, "{c:?}");
        }
        assert!(r.seconds < 10.0);
    }
}
