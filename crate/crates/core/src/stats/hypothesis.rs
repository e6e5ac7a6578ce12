//! One-tailed significance and non-inferiority tests.

use serde::{Deserialize, Serialize};

use super::dist::{normal_cdf, normal_pdf, normal_sf, student_t_cdf, student_t_sf};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Pooled sample size at or below which the U test enumerates the exact null distribution.
pub const U_EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    MannWhitneyU,
    ProportionZ,
    WelchT,
    NonInferiorityT,
    NonInferiorityZ,
}

/// Direction of a one-tailed alternative, stated for the first sample against the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Greater,
    Less,
}

impl Alternative {
    pub fn flip(self) -> Self {
        match self {
            Alternative::Greater => Alternative::Less,
            Alternative::Less => Alternative::Greater,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
    Student,
    Convention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub alternative: Alternative,
    pub alpha: f64,
    pub significant: bool,
    pub method: PMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    /// Set when the data admit no informative test and the p-value is a convention.
    pub degenerate: bool,
    pub n: (usize, usize),
}

impl TestResult {
    fn new(test: TestKind, statistic: f64, p_value: f64, alternative: Alternative, method: PMethod, n: (usize, usize)) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self { test, statistic, p_value, alternative, alpha: DEFAULT_ALPHA, significant: p_value < DEFAULT_ALPHA, method, df: None, degenerate: false, n }
    }

    /// Re-evaluates the decision at another level.
    pub fn at_level(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self.significant = self.p_value < alpha;
        self
    }

    fn degenerate(mut self) -> Self {
        self.degenerate = true;
        self
    }
}

/// Mid-ranks (1-based) of `values`, with tied values sharing their average rank.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i + 1;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        sizes.push(j - i);
        i = j;
    }
    sizes
}

/// Mann-Whitney U test of `x` against `y`. The statistic is
/// `U_x = #{x_i > y_j} + 0.5 #{x_i = y_j}`.
///
/// Pooled samples of at most [`U_EXACT_LIMIT`] values use the exact
/// permutation distribution over mid-ranks. Larger samples use a
/// continuity-corrected normal approximation with tie-corrected variance, plus
/// an Edgeworth kurtosis term when there are no ties.
pub fn mann_whitney_u(x: &[f64], y: &[f64], alternative: Alternative) -> Result<TestResult> {
    let (n1, n2) = (x.len(), y.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Empty("U test needs two nonempty samples".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("U test input contains NaN".into()));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = mid_ranks(&pooled);
    let rank_sum_x: f64 = ranks[..n1].iter().sum();
    let u = rank_sum_x - (n1 * (n1 + 1)) as f64 / 2.0;
    let ties = tie_sizes(&pooled);
    if ties.len() == 1 {
        return Ok(TestResult::new(TestKind::MannWhitneyU, u, 0.5, alternative, PMethod::Convention, (n1, n2)).degenerate());
    }
    let n = n1 + n2;
    if n <= U_EXACT_LIMIT {
        let p = exact_u_p(&ranks, n1, rank_sum_x, alternative);
        return Ok(TestResult::new(TestKind::MannWhitneyU, u, p, alternative, PMethod::Exact, (n1, n2)));
    }
    let p = normal_u_p(u, n1, n2, &ties, alternative);
    Ok(TestResult::new(TestKind::MannWhitneyU, u, p, alternative, PMethod::Normal, (n1, n2)))
}

/// Exact permutation p-value: the share of all `C(n, n1)` rank subsets whose
/// rank sum is at least (or at most) the observed one.
fn exact_u_p(ranks: &[f64], n1: usize, observed: f64, alternative: Alternative) -> f64 {
    // doubled mid-ranks are integers, so comparisons are exact
    let doubled: Vec<i64> = ranks.iter().map(|r| (r * 2.0).round() as i64).collect();
    let obs = (observed * 2.0).round() as i64;
    let n = ranks.len();
    let mut idx: Vec<usize> = (0..n1).collect();
    let (mut hits, mut total) = (0u64, 0u64);
    loop {
        let s: i64 = idx.iter().map(|&i| doubled[i]).sum();
        total += 1;
        let hit = match alternative {
            Alternative::Greater => s >= obs,
            Alternative::Less => s <= obs,
        };
        hits += u64::from(hit);
        // next combination in lexicographic order
        let mut k = n1;
        loop {
            if k == 0 {
                return hits as f64 / total as f64;
            }
            k -= 1;
            if idx[k] < n - n1 + k {
                break;
            }
        }
        idx[k] += 1;
        for j in k + 1..n1 {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn normal_u_p(u: f64, n1: usize, n2: usize, ties: &[usize], alternative: Alternative) -> f64 {
    let (a, b) = (n1 as f64, n2 as f64);
    let n = a + b;
    let mu = a * b / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum::<f64>() / (n * (n - 1.0));
    let var = a * b / 12.0 * ((n + 1.0) - tie_term);
    let sd = var.sqrt();
    let has_ties = ties.iter().any(|&t| t > 1);
    // fourth cumulant of U under H0 without ties
    let k4 = -a * b * (n + 1.0) * (a * a + b * b + a * b + n) / 120.0;
    let cdf = |point: f64| -> f64 {
        let z = (point - mu) / sd;
        let base = normal_cdf(z);
        if has_ties {
            base
        } else {
            base - normal_pdf(z) * k4 / (24.0 * var * var) * (z.powi(3) - 3.0 * z)
        }
    };
    match alternative {
        Alternative::Greater => 1.0 - cdf(u - 0.5),
        Alternative::Less => cdf(u + 0.5),
    }
}

/// U test on ordinal data given as per-category counts (lowest category first).
/// Equivalent to [`mann_whitney_u`] on the expanded samples, computed in O(categories).
pub fn mann_whitney_u_ordinal(x_counts: &[u64], y_counts: &[u64], alternative: Alternative) -> Result<TestResult> {
    if x_counts.len() != y_counts.len() {
        return Err(Error::InvalidInput("category count vectors differ in length".into()));
    }
    let n1: u64 = x_counts.iter().sum();
    let n2: u64 = y_counts.iter().sum();
    if n1 == 0 || n2 == 0 {
        return Err(Error::Empty("U test needs two nonempty samples".into()));
    }
    if ((n1 + n2) as usize) <= U_EXACT_LIMIT {
        let expand = |c: &[u64]| -> Vec<f64> { c.iter().enumerate().flat_map(|(k, &m)| std::iter::repeat_n(k as f64, m as usize)).collect() };
        return mann_whitney_u(&expand(x_counts), &expand(y_counts), alternative);
    }
    let mut u = 0.0;
    let mut y_below = 0u64;
    for (xc, yc) in x_counts.iter().zip(y_counts) {
        u += *xc as f64 * (y_below as f64 + 0.5 * *yc as f64);
        y_below += yc;
    }
    let ties: Vec<usize> = x_counts.iter().zip(y_counts).map(|(a, b)| (a + b) as usize).filter(|&t| t > 0).collect();
    if ties.len() == 1 {
        return Ok(TestResult::new(TestKind::MannWhitneyU, u, 0.5, alternative, PMethod::Convention, (n1 as usize, n2 as usize)).degenerate());
    }
    let p = normal_u_p(u, n1 as usize, n2 as usize, &ties, alternative);
    Ok(TestResult::new(TestKind::MannWhitneyU, u, p, alternative, PMethod::Normal, (n1 as usize, n2 as usize)))
}

fn check_counts(s: u64, n: u64) -> Result<()> {
    if n == 0 || s > n {
        return Err(Error::InvalidInput(format!("need 0 <= successes <= trials and trials > 0, got {s}/{n}")));
    }
    Ok(())
}

/// Pooled two-sample proportion z test of `s1/n1` against `s2/n2`.
pub fn proportion_ztest(s1: u64, n1: u64, s2: u64, n2: u64, alternative: Alternative) -> Result<TestResult> {
    check_counts(s1, n1)?;
    check_counts(s2, n2)?;
    let (p1, p2) = (s1 as f64 / n1 as f64, s2 as f64 / n2 as f64);
    let pooled = (s1 + s2) as f64 / (n1 + n2) as f64;
    let n = (n1 as usize, n2 as usize);
    if pooled == 0.0 || pooled == 1.0 {
        return Ok(TestResult::new(TestKind::ProportionZ, 0.0, 0.5, alternative, PMethod::Convention, n).degenerate());
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let z = (p1 - p2) / se;
    let p = match alternative {
        Alternative::Greater => normal_sf(z),
        Alternative::Less => normal_cdf(z),
    };
    Ok(TestResult::new(TestKind::ProportionZ, z, p, alternative, PMethod::Normal, n))
}

/// Sample mean and unbiased variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 { x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

struct WelchParts {
    diff: f64,
    se: f64,
    df: f64,
}

fn welch_parts(x: &[f64], y: &[f64]) -> Result<WelchParts> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InvalidInput("Welch test needs at least two values per sample".into()));
    }
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    if !(vx.is_finite() && vy.is_finite()) {
        return Err(Error::InvalidInput("Welch test needs finite variances".into()));
    }
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let (ax, ay) = (vx / nx, vy / ny);
    let se2 = ax + ay;
    let df = if se2 > 0.0 { se2 * se2 / (ax * ax / (nx - 1.0) + ay * ay / (ny - 1.0)) } else { nx + ny - 2.0 };
    Ok(WelchParts { diff: mx - my, se: se2.sqrt(), df })
}

/// Welch's unequal-variance t test with Satterthwaite degrees of freedom.
pub fn welch_t(x: &[f64], y: &[f64], alternative: Alternative) -> Result<TestResult> {
    let w = welch_parts(x, y)?;
    let n = (x.len(), y.len());
    if w.se == 0.0 {
        let (t, p) = if w.diff == 0.0 {
            (0.0, 0.5)
        } else {
            let t = w.diff.signum() * f64::INFINITY;
            let greater = w.diff > 0.0;
            let p = if greater == (alternative == Alternative::Greater) { 0.0 } else { 1.0 };
            (t, p)
        };
        let mut r = TestResult::new(TestKind::WelchT, t, p, alternative, PMethod::Convention, n).degenerate();
        r.df = Some(w.df);
        return Ok(r);
    }
    let t = w.diff / w.se;
    let p = match alternative {
        Alternative::Greater => student_t_sf(t, w.df),
        Alternative::Less => student_t_cdf(t, w.df),
    };
    let mut r = TestResult::new(TestKind::WelchT, t, p, alternative, PMethod::Student, n);
    r.df = Some(w.df);
    Ok(r)
}

/// Data handed to the non-inferiority test.
#[derive(Debug, Clone, Copy)]
pub enum Scores<'a> {
    Continuous(&'a [f64]),
    Proportion { successes: u64, trials: u64 },
}

/// One-sided test of `H0: mean(y) - mean(x) >= epsilon` against
/// `H1: mean(y) - mean(x) < epsilon`. Rejecting `H0` means `y` has no
/// meaningful advantage over `x`. Uses Welch's t for continuous data and an
/// unpooled z statistic for proportions.
pub fn noninferiority_test(x: Scores<'_>, y: Scores<'_>, epsilon: f64, alpha: f64) -> Result<TestResult> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput("non-inferiority bound must be positive".into()));
    }
    match (x, y) {
        (Scores::Continuous(x), Scores::Continuous(y)) => {
            let w = welch_parts(y, x)?;
            let n = (x.len(), y.len());
            if w.se == 0.0 {
                let p = if w.diff < epsilon { 0.0 } else { 1.0 };
                let mut r =
                    TestResult::new(TestKind::NonInferiorityT, (w.diff - epsilon).signum() * f64::INFINITY, p, Alternative::Less, PMethod::Convention, n)
                        .degenerate();
                r.df = Some(w.df);
                return Ok(r.at_level(alpha));
            }
            let t = (w.diff - epsilon) / w.se;
            let mut r = TestResult::new(TestKind::NonInferiorityT, t, student_t_cdf(t, w.df), Alternative::Less, PMethod::Student, n);
            r.df = Some(w.df);
            Ok(r.at_level(alpha))
        }
        (Scores::Proportion { successes: sx, trials: nx }, Scores::Proportion { successes: sy, trials: ny }) => {
            check_counts(sx, nx)?;
            check_counts(sy, ny)?;
            let (px, py) = (sx as f64 / nx as f64, sy as f64 / ny as f64);
            let se = (px * (1.0 - px) / nx as f64 + py * (1.0 - py) / ny as f64).sqrt();
            let diff = py - px;
            let n = (nx as usize, ny as usize);
            if se == 0.0 {
                let p = if diff < epsilon { 0.0 } else { 1.0 };
                let r = TestResult::new(TestKind::NonInferiorityZ, (diff - epsilon).signum() * f64::INFINITY, p, Alternative::Less, PMethod::Convention, n)
                    .degenerate();
                return Ok(r.at_level(alpha));
            }
            let z = (diff - epsilon) / se;
            Ok(TestResult::new(TestKind::NonInferiorityZ, z, normal_cdf(z), Alternative::Less, PMethod::Normal, n).at_level(alpha))
        }
        _ => Err(Error::InvalidInput("non-inferiority samples must be the same kind".into())),
    }
}

/// Margin above which `y - x` must lie for the non-inferiority test to keep
/// `H0`; the test rejects exactly when `epsilon` exceeds it.
pub fn noninferiority_margin(x: Scores<'_>, y: Scores<'_>, alpha: f64) -> Result<f64> {
    match (x, y) {
        (Scores::Continuous(x), Scores::Continuous(y)) => {
            let w = welch_parts(y, x)?;
            Ok(w.diff + w.se * super::dist::student_t_quantile(1.0 - alpha, w.df))
        }
        (Scores::Proportion { successes: sx, trials: nx }, Scores::Proportion { successes: sy, trials: ny }) => {
            check_counts(sx, nx)?;
            check_counts(sy, ny)?;
            let (px, py) = (sx as f64 / nx as f64, sy as f64 / ny as f64);
            let se = (px * (1.0 - px) / nx as f64 + py * (1.0 - py) / ny as f64).sqrt();
            Ok(py - px + se * super::dist::normal_quantile(1.0 - alpha))
        }
        _ => Err(Error::InvalidInput("non-inferiority samples must be the same kind".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_oracle(x: &[f64], y: &[f64]) -> (f64, f64) {
        // enumerate label assignments with a bitmask; U by pairwise comparison
        let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
        let n = pooled.len();
        let u_of = |mask: u32| -> f64 {
            let mut u = 0.0;
            for i in 0..n {
                if mask & (1 << i) == 0 {
                    continue;
                }
                for j in 0..n {
                    if mask & (1 << j) != 0 {
                        continue;
                    }
                    u += if pooled[i] > pooled[j] {
                        1.0
                    } else if pooled[i] == pooled[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            u
        };
        let obs = u_of((1u32 << x.len()) - 1);
        let (mut ge, mut le, mut tot) = (0.0, 0.0, 0.0);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != x.len() {
                continue;
            }
            let u = u_of(mask);
            tot += 1.0;
            if u >= obs - 1e-9 {
                ge += 1.0;
            }
            if u <= obs + 1e-9 {
                le += 1.0;
            }
        }
        (ge / tot, le / tot)
    }

    #[test]
    fn u_test_separated_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], Alternative::Less).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.05).abs() < 1e-15);
        assert_eq!(r.method, PMethod::Exact);
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], Alternative::Greater).unwrap();
        assert!((r.p_value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn u_test_with_ties_matches_bitmask_oracle() {
        let x = [1.0, 2.0, 2.0, 3.0, 5.0];
        let y = [2.0, 3.0, 3.0, 4.0, 1.0, 6.0];
        let (ge, le) = exact_oracle(&x, &y);
        let g = mann_whitney_u(&x, &y, Alternative::Greater).unwrap();
        let l = mann_whitney_u(&x, &y, Alternative::Less).unwrap();
        assert!((g.p_value - ge).abs() < 1e-15);
        assert!((l.p_value - le).abs() < 1e-15);
    }

    #[test]
    fn u_test_identical_samples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let r = mann_whitney_u(&x, &x, Alternative::Greater).unwrap();
        assert!(r.p_value > 0.5);
        let big: Vec<f64> = (0..40).map(f64::from).collect();
        let r = mann_whitney_u(&big, &big, Alternative::Greater).unwrap();
        assert!((r.p_value - 0.5).abs() < 0.02);
        let same = [2.0; 10];
        let r = mann_whitney_u(&same, &same, Alternative::Greater).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 0.5);
    }

    #[test]
    fn ordinal_u_matches_generic() {
        let xc = [3u64, 10, 7];
        let yc = [6u64, 9, 5];
        let expand = |c: &[u64]| -> Vec<f64> { c.iter().enumerate().flat_map(|(k, &m)| std::iter::repeat_n(k as f64 + 1.0, m as usize)).collect() };
        for alt in [Alternative::Greater, Alternative::Less] {
            let a = mann_whitney_u(&expand(&xc), &expand(&yc), alt).unwrap();
            let b = mann_whitney_u_ordinal(&xc, &yc, alt).unwrap();
            assert!((a.statistic - b.statistic).abs() < 1e-9);
            assert!((a.p_value - b.p_value).abs() < 1e-12);
        }
    }

    #[test]
    fn proportion_z_reference() {
        let r = proportion_ztest(40, 50, 25, 50, Alternative::Greater).unwrap();
        let se = (0.65f64 * 0.35 * 0.04).sqrt();
        assert!((r.statistic - 0.3 / se).abs() < 1e-12);
        assert!((r.statistic - 3.1449).abs() < 1e-3);
        assert!(r.p_value < 0.001);
        let r = proportion_ztest(20, 50, 20, 50, Alternative::Greater).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.5).abs() < 1e-15);
        let a = proportion_ztest(12, 40, 20, 45, Alternative::Greater).unwrap();
        let b = proportion_ztest(20, 45, 12, 40, Alternative::Greater).unwrap();
        assert!((a.statistic + b.statistic).abs() < 1e-12);
        let d = proportion_ztest(0, 10, 0, 10, Alternative::Greater).unwrap();
        assert!(d.degenerate);
        assert!(proportion_ztest(11, 10, 0, 10, Alternative::Greater).is_err());
    }

    #[test]
    fn welch_identities() {
        let x = [1.0, 2.0, 3.5, 4.0];
        let r = welch_t(&x, &x, Alternative::Greater).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.5).abs() < 1e-12);
        assert!((r.df.unwrap() - 6.0).abs() < 1e-12);
        let d = welch_t(&[1.0, 1.0], &[1.0, 1.0], Alternative::Greater).unwrap();
        assert!(d.degenerate);
        assert!(welch_t(&[1.0], &[1.0, 2.0], Alternative::Greater).is_err());
        let g = welch_t(&[1.0, 2.0, 4.0], &[0.5, 0.7, 3.0, 2.0], Alternative::Greater).unwrap();
        let l = welch_t(&[1.0, 2.0, 4.0], &[0.5, 0.7, 3.0, 2.0], Alternative::Less).unwrap();
        assert!((g.p_value + l.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noninferiority_directions() {
        let x: Vec<f64> = (0..400).map(|i| (i % 7) as f64).collect();
        let r = noninferiority_test(Scores::Continuous(&x), Scores::Continuous(&x), 0.5, 0.05).unwrap();
        assert!(r.significant, "{r:?}");
        let better: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        let r = noninferiority_test(Scores::Continuous(&x), Scores::Continuous(&better), 0.5, 0.05).unwrap();
        assert!(!r.significant);
        let r =
            noninferiority_test(Scores::Proportion { successes: 500, trials: 1000 }, Scores::Proportion { successes: 500, trials: 1000 }, 0.05, 0.05).unwrap();
        assert!(r.significant);
        assert!(noninferiority_test(Scores::Continuous(&x), Scores::Continuous(&x), 0.0, 0.05).is_err());
    }

    #[test]
    fn margin_agrees_with_test() {
        let x = [0.2, 0.5, 0.9, 1.4, 0.3, 0.8];
        let y = [0.4, 0.6, 1.1, 1.2, 0.9, 0.7, 1.0];
        let m = noninferiority_margin(Scores::Continuous(&x), Scores::Continuous(&y), 0.05).unwrap();
        let below = noninferiority_test(Scores::Continuous(&x), Scores::Continuous(&y), m - 1e-6, 0.05).unwrap();
        let above = noninferiority_test(Scores::Continuous(&x), Scores::Continuous(&y), m + 1e-6, 0.05).unwrap();
        assert!(!below.significant && above.significant);
    }
}
