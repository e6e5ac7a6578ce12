//! Logistic and ordered-probit regression by maximum likelihood, with Wald intervals.

use serde::{Deserialize, Serialize};

use super::dist::{normal_cdf, normal_pdf, normal_quantile};
use crate::error::{Error, Result};

const Z975: f64 = 1.959_963_984_540_054;
const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    fn new(value: f64, se: f64) -> Self {
        Self { value, se, lo: value - Z975 * se, hi: value + Z975 * se }
    }

    pub fn covers(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub intercept: Estimate,
    pub coef: Option<Estimate>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbitFit {
    /// Observed outcome levels in increasing order; cutpoint `j` separates level `j` from `j + 1`.
    pub levels: Vec<i64>,
    pub cutpoints: Vec<Estimate>,
    pub coef: Option<Estimate>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn inverse_diagonal(a: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            solve(a.to_vec(), e).map(|col| col[i])
        })
        .collect()
}

fn check_covariate(x: Option<&[f64]>, n: usize) -> Result<()> {
    if let Some(x) = x {
        if x.len() != n {
            return Err(Error::InvalidInput(format!("covariate has {} values for {n} outcomes", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariate is not finite".into()));
        }
    }
    Ok(())
}

/// Logistic regression of binary `y` on an optional covariate, fit by
/// iteratively reweighted least squares.
pub fn logistic_regression(y: &[bool], x: Option<&[f64]>) -> Result<LogisticFit> {
    check_covariate(x, y.len())?;
    let ones = y.iter().filter(|v| **v).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::InvalidInput("logistic regression needs both outcome classes".into()));
    }
    if let Some(x) = x {
        let max0 = y.iter().zip(x).filter(|(v, _)| !**v).map(|(_, x)| *x).fold(f64::NEG_INFINITY, f64::max);
        let min0 = y.iter().zip(x).filter(|(v, _)| !**v).map(|(_, x)| *x).fold(f64::INFINITY, f64::min);
        let max1 = y.iter().zip(x).filter(|(v, _)| **v).map(|(_, x)| *x).fold(f64::NEG_INFINITY, f64::max);
        let min1 = y.iter().zip(x).filter(|(v, _)| **v).map(|(_, x)| *x).fold(f64::INFINITY, f64::min);
        if max0 < min1 || max1 < min0 {
            return Err(Error::Numerical(format!("complete separation: outcome 0 has x in [{min0}, {max0}], outcome 1 has x in [{min1}, {max1}]")));
        }
    }
    let p = if x.is_some() { 2 } else { 1 };
    let row = |i: usize| -> [f64; 2] { [1.0, x.map_or(0.0, |x| x[i])] };
    let mut beta = vec![0.0; p];
    beta[0] = (ones as f64 / (y.len() - ones) as f64).ln();
    for iter in 1..=MAX_ITER {
        let mut xtwx = vec![vec![0.0; p]; p];
        let mut score = vec![0.0; p];
        for (i, &yi) in y.iter().enumerate() {
            let r = row(i);
            let eta: f64 = (0..p).map(|j| r[j] * beta[j]).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            let w = mu * (1.0 - mu);
            let resid = f64::from(u8::from(yi)) - mu;
            for j in 0..p {
                score[j] += r[j] * resid;
                for k in 0..p {
                    xtwx[j][k] += r[j] * w * r[k];
                }
            }
        }
        let step = solve(xtwx.clone(), score).ok_or_else(|| Error::Numerical("singular information matrix".into()))?;
        for j in 0..p {
            beta[j] += step[j];
        }
        if step.iter().all(|s| s.abs() < 1e-10) {
            let info = logistic_information(y.len(), &row, &beta, p);
            let var = inverse_diagonal(&info).ok_or_else(|| Error::Numerical("singular information matrix".into()))?;
            let ll = y
                .iter()
                .enumerate()
                .map(|(i, &yi)| {
                    let r = row(i);
                    let eta: f64 = (0..p).map(|j| r[j] * beta[j]).sum();
                    if yi {
                        -(1.0 + (-eta).exp()).ln()
                    } else {
                        -(1.0 + eta.exp()).ln()
                    }
                })
                .sum();
            return Ok(LogisticFit {
                intercept: Estimate::new(beta[0], var[0].sqrt()),
                coef: (p == 2).then(|| Estimate::new(beta[1], var[1].sqrt())),
                log_likelihood: ll,
                iterations: iter,
            });
        }
    }
    Err(Error::Numerical(format!("logistic regression did not converge in {MAX_ITER} iterations; last state {beta:?}")))
}

fn logistic_information(n: usize, row: &dyn Fn(usize) -> [f64; 2], beta: &[f64], p: usize) -> Vec<Vec<f64>> {
    let mut info = vec![vec![0.0; p]; p];
    for i in 0..n {
        let r = row(i);
        let eta: f64 = (0..p).map(|j| r[j] * beta[j]).sum();
        let mu = 1.0 / (1.0 + (-eta).exp());
        let w = mu * (1.0 - mu);
        for j in 0..p {
            for k in 0..p {
                info[j][k] += r[j] * w * r[k];
            }
        }
    }
    info
}

struct ProbitEval {
    ll: f64,
    grad: Vec<f64>,
    /// Negative Hessian.
    info: Vec<Vec<f64>>,
}

fn probit_eval(y: &[usize], x: Option<&[f64]>, n_cut: usize, theta: &[f64]) -> Option<ProbitEval> {
    let p = theta.len();
    let b = if x.is_some() { theta[n_cut] } else { 0.0 };
    let mut ll = 0.0;
    let mut grad = vec![0.0; p];
    let mut info = vec![vec![0.0; p]; p];
    for (i, &j) in y.iter().enumerate() {
        let xi = x.map_or(0.0, |x| x[i]);
        // upper bound a uses cutpoint j, lower bound l uses cutpoint j - 1
        let a = (j < n_cut).then(|| theta[j] - b * xi);
        let l = (j > 0).then(|| theta[j - 1] - b * xi);
        let pa = a.map_or(1.0, normal_cdf);
        let pl = l.map_or(0.0, normal_cdf);
        let prob = pa - pl;
        if !(prob > 0.0) {
            return None;
        }
        ll += prob.ln();
        let ga = a.map_or(0.0, |a| normal_pdf(a) / prob);
        let gl = l.map_or(0.0, |l| normal_pdf(l) / prob);
        let haa = a.map_or(0.0, |a| -a * ga - ga * ga);
        let hll = l.map_or(0.0, |l| l * gl - gl * gl);
        let hal = ga * gl;
        let mut ja = vec![0.0; p];
        let mut jl = vec![0.0; p];
        if a.is_some() {
            ja[j] = 1.0;
            if x.is_some() {
                ja[n_cut] = -xi;
            }
        }
        if l.is_some() {
            jl[j - 1] = 1.0;
            if x.is_some() {
                jl[n_cut] = -xi;
            }
        }
        for r in 0..p {
            grad[r] += ga * ja[r] - gl * jl[r];
            for c in 0..p {
                let h = haa * ja[r] * ja[c] + hll * jl[r] * jl[c] + hal * (ja[r] * jl[c] + jl[r] * ja[c]);
                info[r][c] -= h;
            }
        }
    }
    Some(ProbitEval { ll, grad, info })
}

/// Ordered probit regression of ordinal `y` on an optional covariate, fit by
/// Newton's method with step halving. Only observed levels get cutpoints.
pub fn ordered_probit(y: &[i64], x: Option<&[f64]>) -> Result<ProbitFit> {
    check_covariate(x, y.len())?;
    let mut levels: Vec<i64> = y.to_vec();
    levels.sort_unstable();
    levels.dedup();
    if levels.len() < 2 {
        return Err(Error::InvalidInput("ordered probit needs at least two observed categories".into()));
    }
    let idx: Vec<usize> = y.iter().map(|v| levels.binary_search(v).expect("level present")).collect();
    let n_cut = levels.len() - 1;
    let p = n_cut + usize::from(x.is_some());
    let n = y.len() as f64;
    let mut theta = vec![0.0; p];
    let mut cum = 0.0;
    for j in 0..n_cut {
        cum += idx.iter().filter(|&&v| v == j).count() as f64 / n;
        theta[j] = normal_quantile(cum);
    }
    let mut cur = probit_eval(&idx, x, n_cut, &theta).ok_or_else(|| Error::Numerical("invalid starting point".into()))?;
    for iter in 1..=MAX_ITER {
        let step =
            solve(cur.info.clone(), cur.grad.clone()).ok_or_else(|| Error::Numerical(format!("singular Hessian at iteration {iter}; last state {theta:?}")))?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + scale * s).collect();
            let ordered = cand[..n_cut].windows(2).all(|w| w[0] < w[1]);
            if ordered {
                if let Some(e) = probit_eval(&idx, x, n_cut, &cand) {
                    if e.ll >= cur.ll - 1e-12 {
                        accepted = Some((cand, e));
                        break;
                    }
                }
            }
            scale *= 0.5;
        }
        let Some((cand, e)) = accepted else {
            return Err(Error::Numerical(format!("ordered probit line search failed at iteration {iter}; last state {theta:?}")));
        };
        let moved = step.iter().map(|s| (s * scale).abs()).fold(0.0, f64::max);
        theta = cand;
        cur = e;
        if moved < 1e-10 || cur.grad.iter().all(|g| g.abs() < 1e-10) {
            let var = inverse_diagonal(&cur.info).ok_or_else(|| Error::Numerical("singular information matrix".into()))?;
            return Ok(ProbitFit {
                levels,
                cutpoints: (0..n_cut).map(|j| Estimate::new(theta[j], var[j].sqrt())).collect(),
                coef: x.is_some().then(|| Estimate::new(theta[n_cut], var[n_cut].sqrt())),
                log_likelihood: cur.ll,
                iterations: iter,
            });
        }
    }
    Err(Error::Numerical(format!("ordered probit did not converge in {MAX_ITER} iterations; last state {theta:?}")))
}
