//! Cross-asset dependence: rank pseudo-observations, CCC/DCC correlation
//! dynamics, Student-t copula fitting, tail-dependence coefficients and
//! weighted portfolio aggregates (WPC / WPTD).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::optim::{bfgs, golden_section, BfgsOptions};
use crate::rng;
use crate::stats;

/// Degrees of freedom beyond which the t-copula is treated as Gaussian.
pub const NU_CAP: f64 = 50.0;
const NU_MIN: f64 = 2.05;
/// 95% quantile of chi-square with two degrees of freedom.
const DCC_LR_CRITICAL: f64 = 5.991_464_547_107_979;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccParams {
    pub a: f64,
    pub b: f64,
    #[serde(with = "matrix_serde")]
    pub rbar: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMode {
    Ccc,
    Dcc,
}

impl DccParams {
    pub fn constant(rbar: DMatrix<f64>) -> Self {
        Self { a: 0.0, b: 0.0, rbar }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0 && self.a + self.b < 1.0) {
            return Err(Error::InvalidParams(format!(
                "DCC requires a, b >= 0 and a + b < 1 (a={}, b={})",
                self.a, self.b
            )));
        }
        if !linalg::is_correlation(&self.rbar, 1e-9) {
            return Err(Error::InvalidParams("rbar is not a PD correlation matrix".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.rbar.nrows()
    }

    /// `Q_{t+1} = (1 - a - b) Qbar + a z z' + b Q_t`, in place.
    pub fn update_q(&self, q: &mut DMatrix<f64>, z: &[f64]) {
        let n = self.n();
        let c = 1.0 - self.a - self.b;
        for i in 0..n {
            for j in 0..n {
                q[(i, j)] = c * self.rbar[(i, j)] + self.a * z[i] * z[j] + self.b * q[(i, j)];
            }
        }
    }
}

/// `R = diag(Q)^{-1/2} Q diag(Q)^{-1/2}`.
pub fn q_to_r(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            q[(i, j)] / (q[(i, i)] * q[(j, j)]).sqrt()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TCopulaParams {
    #[serde(with = "matrix_serde")]
    pub corr: DMatrix<f64>,
    pub nu: f64,
}

impl TCopulaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 2.0 && self.nu <= NU_CAP) {
            return Err(Error::InvalidParams(format!("nu = {} outside (2, {NU_CAP}]", self.nu)));
        }
        if !linalg::is_correlation(&self.corr, 1e-9) {
            return Err(Error::InvalidParams("copula correlation is not a PD correlation matrix".into()));
        }
        Ok(())
    }
}

/// Output of the DCC recursion over a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DccPath {
    /// `R_t` for every observation.
    pub correlations: Vec<DMatrix<f64>>,
    /// `Q_{T+1}`, the state for the first out-of-sample day.
    pub next_q: DMatrix<f64>,
}

/// Symmetric N×N matrix with unit diagonal and entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TailDependenceMatrix {
    pub lambda: DMatrix<f64>,
}

/// Column-wise average ranks divided by `T + 1`.
pub fn pseudo_observations(residuals: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (t, n) = residuals.shape();
    if t < 2 {
        return Err(Error::too_short(2, t));
    }
    let mut out = DMatrix::zeros(t, n);
    for j in 0..n {
        let col: Vec<f64> = residuals.column(j).iter().cloned().collect();
        if col.iter().all(|v| *v == col[0]) {
            return Err(Error::ConstantColumn(j));
        }
        let ranks = average_ranks(&col);
        for i in 0..t {
            out[(i, j)] = ranks[i] / (t as f64 + 1.0);
        }
    }
    Ok(out)
}

/// One-based average ranks.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Kendall's tau-b in O(n log n) (Knight's merge-sort algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    assert_eq!(n, y.len());
    let mut pairs: Vec<(f64, f64)> = x.iter().cloned().zip(y.iter().cloned()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n0 = (n as f64) * (n as f64 - 1.0) / 2.0;
    let tie_pairs = |v: &[(f64, f64)], key: &dyn Fn(&(f64, f64), &(f64, f64)) -> bool| {
        let mut total = 0.0;
        let mut run = 1.0;
        for w in v.windows(2) {
            if key(&w[0], &w[1]) {
                run += 1.0;
            } else {
                total += run * (run - 1.0) / 2.0;
                run = 1.0;
            }
        }
        total + run * (run - 1.0) / 2.0
    };
    let n1 = tie_pairs(&pairs, &|a, b| a.0 == b.0);
    let n3 = tie_pairs(&pairs, &|a, b| a.0 == b.0 && a.1 == b.1);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let sorted_y: Vec<(f64, f64)> = ys.iter().map(|&v| (v, 0.0)).collect();
    let n2 = tie_pairs(&sorted_y, &|a, b| a.0 == b.0);
    let num = n0 - n1 - n2 + n3 - 2.0 * swaps;
    let den = ((n0 - n1) * (n0 - n2)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn merge_count(v: &mut [f64], buf: &mut [f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as f64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    while i < mid {
        buf[k] = v[i];
        i += 1;
        k += 1;
    }
    while j < n {
        buf[k] = v[j];
        j += 1;
        k += 1;
    }
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// In-place Cholesky of a row-major n×n matrix; returns log-determinant.
fn chol_logdet(m: &mut [f64], n: usize) -> Option<f64> {
    let mut logdet = 0.0;
    for j in 0..n {
        let mut d = m[j * n + j];
        for k in 0..j {
            d -= m[j * n + k] * m[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let l = d.sqrt();
        m[j * n + j] = l;
        logdet += 2.0 * l.ln();
        for i in (j + 1)..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= m[i * n + k] * m[j * n + k];
            }
            m[i * n + j] = s / l;
        }
    }
    Some(logdet)
}

/// `z' L^{-T} L^{-1} z` given the packed Cholesky factor.
fn chol_quad(l: &[f64], n: usize, z: &[f64], work: &mut [f64]) -> f64 {
    let mut q = 0.0;
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[i * n + k] * work[k];
        }
        work[i] = s / l[i * n + i];
        q += work[i] * work[i];
    }
    q
}

/// Negative Gaussian correlation log-likelihood of the DCC recursion
/// (constant terms and the `z'z` part dropped).
fn dcc_neg_loglik(a: f64, b: f64, qbar: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let (t, n) = z.shape();
    let c = 1.0 - a - b;
    let mut q: Vec<f64> = (0..n * n).map(|k| qbar[(k / n, k % n)]).collect();
    let qb = q.clone();
    let mut r = vec![0.0; n * n];
    let mut work = vec![0.0; n];
    let mut zt = vec![0.0; n];
    let mut total = 0.0;
    for s in 0..t {
        for i in 0..n {
            zt[i] = z[(s, i)];
        }
        for i in 0..n {
            for j in 0..n {
                r[i * n + j] = q[i * n + j] / (q[i * n + i] * q[j * n + j]).sqrt();
            }
        }
        let Some(logdet) = chol_logdet(&mut r, n) else {
            return f64::INFINITY;
        };
        total += logdet + chol_quad(&r, n, &zt, &mut work);
        for i in 0..n {
            for j in 0..n {
                q[i * n + j] = c * qb[i * n + j] + a * zt[i] * zt[j] + b * q[i * n + j];
            }
        }
    }
    0.5 * total
}

/// CCC: sample correlation with a = b = 0. DCC: correlation targeting plus
/// Gaussian quasi-MLE of (a, b).
pub fn fit_correlation(std_residuals: &DMatrix<f64>, mode: CorrelationMode) -> Result<DccParams> {
    let (t, n) = std_residuals.shape();
    if n < 2 {
        return Err(Error::SingularCorrelation);
    }
    if t < 250 {
        return Err(Error::too_short(250, t));
    }
    let rbar = stats::correlation_matrix(std_residuals);
    if rbar.iter().any(|v| !v.is_finite()) || linalg::cholesky(&rbar).is_err() {
        return Err(Error::SingularCorrelation);
    }
    if mode == CorrelationMode::Ccc {
        return Ok(DccParams::constant(rbar));
    }
    // (a, b, slack) = softmax(x0, x1, 0)
    let to_ab = |x: &[f64]| {
        let m = x[0].max(x[1]).max(0.0);
        let (e0, e1, e2) = ((x[0] - m).exp(), (x[1] - m).exp(), (-m).exp());
        let s = e0 + e1 + e2;
        (e0 / s, e1 / s)
    };
    let from_ab = |a: f64, b: f64| {
        let slack = 1.0 - a - b;
        vec![(a / slack).ln(), (b / slack).ln()]
    };
    let starts = [(0.02, 0.95), (0.05, 0.90), (0.01, 0.50), (0.10, 0.80)];
    let results: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|&(a, b)| {
            let m = bfgs(
                |x| {
                    let (a, b) = to_ab(x);
                    dcc_neg_loglik(a, b, &rbar, std_residuals)
                },
                &from_ab(a, b),
                BfgsOptions {
                    max_iter: 200,
                    grad_tol: 1e-5,
                    f_tol: 1e-12,
                },
            );
            (m.value, m.x)
        })
        .collect();
    let best = results
        .iter()
        .filter(|(v, _)| v.is_finite())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::NonConvergence("DCC likelihood not finite at any start".into()))?;
    let (a, b) = to_ab(&best.1);
    // With a = 0 the decay b is unidentified; collapse to CCC unless the
    // dynamics beat it at the 95% chi-square(2) level.
    let ccc = dcc_neg_loglik(0.0, 0.0, &rbar, std_residuals);
    if 2.0 * (ccc - best.0) < DCC_LR_CRITICAL {
        return Ok(DccParams::constant(rbar));
    }
    Ok(DccParams { a, b, rbar })
}

/// Run the DCC recursion with `Q_1 = rbar`.
pub fn dcc_filter(params: &DccParams, std_residuals: &DMatrix<f64>) -> Result<DccPath> {
    params.validate()?;
    let (t, n) = std_residuals.shape();
    if n != params.n() {
        return Err(Error::LengthMismatch(format!("{n} residual columns for {}-asset DCC", params.n())));
    }
    let mut q = params.rbar.clone();
    let mut correlations = Vec::with_capacity(t);
    let mut z = vec![0.0; n];
    for s in 0..t {
        correlations.push(q_to_r(&q));
        for i in 0..n {
            z[i] = std_residuals[(s, i)];
        }
        params.update_q(&mut q, &z);
    }
    Ok(DccPath {
        correlations,
        next_q: q,
    })
}

/// Whiten each row by the Cholesky factor of its `R_t`: `eta_t = L_t^{-1} z_t`.
pub fn whiten(std_residuals: &DMatrix<f64>, path: &DccPath) -> Result<DMatrix<f64>> {
    let (t, n) = std_residuals.shape();
    let mut out = DMatrix::zeros(t, n);
    for s in 0..t {
        let l = linalg::cholesky(&path.correlations[s])?.l();
        let z: Vec<f64> = std_residuals.row(s).iter().cloned().collect();
        let eta = linalg::forward_solve(&l, &z);
        for i in 0..n {
            out[(s, i)] = eta[i];
        }
    }
    Ok(out)
}

/// Copula log-likelihood of uniforms at a given correlation Cholesky factor and nu.
/// Pseudo-observations are reused across columns through a per-value cache.
fn t_copula_loglik(u: &DMatrix<f64>, chol: &[f64], logdet: f64, nu: f64) -> f64 {
    let (t, n) = u.shape();
    let mut distinct: Vec<f64> = u.iter().cloned().collect();
    distinct.sort_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    let quantiles: Vec<f64> = distinct.iter().map(|&p| stats::t_quantile(p, nu)).collect();
    let lookup = |p: f64| quantiles[distinct.binary_search_by(|v| v.total_cmp(&p)).unwrap()];
    let x = DMatrix::from_fn(t, n, |i, j| lookup(u[(i, j)]));
    let nf = n as f64;
    let c_joint = stats::ln_gamma(0.5 * (nu + nf)) - stats::ln_gamma(0.5 * nu)
        - 0.5 * nf * (nu * std::f64::consts::PI).ln()
        - 0.5 * logdet;
    let mut work = vec![0.0; n];
    let mut row = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..t {
        let mut marg = 0.0;
        for j in 0..n {
            row[j] = x[(i, j)];
            marg += stats::t_ln_pdf(row[j], nu);
        }
        let q = chol_quad(chol, n, &row, &mut work);
        total += c_joint - 0.5 * (nu + nf) * (q / nu).ln_1p() - marg;
    }
    total
}

/// Kendall-tau inversion for the copula correlation (with PD repair) and a
/// profile-likelihood search for nu, capped at [`NU_CAP`].
pub fn fit_t_copula(uniforms: &DMatrix<f64>) -> Result<TCopulaParams> {
    let (t, n) = uniforms.shape();
    if t < 250 {
        return Err(Error::too_short(250, t));
    }
    if let Some(v) = uniforms.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::OutOfRangeInput(format!("uniform value {v} outside (0, 1)")));
    }
    let cols: Vec<Vec<f64>> = (0..n).map(|j| uniforms.column(j).iter().cloned().collect()).collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let taus: Vec<f64> = pairs.par_iter().map(|&(i, j)| kendall_tau(&cols[i], &cols[j])).collect();
    let mut p = DMatrix::identity(n, n);
    for (&(i, j), tau) in pairs.iter().zip(&taus) {
        let rho = (std::f64::consts::FRAC_PI_2 * tau).sin();
        p[(i, j)] = rho;
        p[(j, i)] = rho;
    }
    let corr = linalg::repair_correlation(&p);
    let mut packed: Vec<f64> = (0..n * n).map(|k| corr[(k / n, k % n)]).collect();
    let logdet = chol_logdet(&mut packed, n).ok_or(Error::NotPd)?;

    let profile = |ln_nu: f64| -t_copula_loglik(uniforms, &packed, logdet, ln_nu.exp());
    let lo = NU_MIN.ln();
    let hi = NU_CAP.ln();
    let grid: Vec<f64> = (0..16).map(|k| lo + (hi - lo) * k as f64 / 15.0).collect();
    let vals: Vec<f64> = grid.par_iter().map(|&g| profile(g)).collect();
    if vals.iter().all(|v| !v.is_finite()) {
        return Err(Error::NonConvergence("t-copula likelihood not finite on the nu grid".into()));
    }
    let k = vals
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap();
    let nu = if k == grid.len() - 1 {
        NU_CAP
    } else {
        let a = grid[k.saturating_sub(1)];
        let b = grid[(k + 1).min(grid.len() - 1)];
        let (x, fx) = golden_section(profile, a, b, 1e-4);
        if fx <= vals[k] {
            x.exp()
        } else {
            grid[k].exp()
        }
    };
    Ok(TCopulaParams {
        corr,
        nu: nu.clamp(NU_MIN, NU_CAP),
    })
}

/// Lower-tail dependence of a bivariate t-copula:
/// `2 F_{nu+1}(-sqrt((nu+1)(1-rho)/(1+rho)))`.
pub fn t_lambda(rho: f64, nu: f64) -> f64 {
    if rho >= 1.0 {
        return 1.0;
    }
    if rho <= -1.0 {
        return 0.0;
    }
    2.0 * stats::t_cdf(-((nu + 1.0) * (1.0 - rho) / (1.0 + rho)).sqrt(), nu + 1.0)
}

pub fn t_tail_dependence(params: &TCopulaParams) -> Result<TailDependenceMatrix> {
    if !(params.nu > 2.0 && params.nu <= NU_CAP) || !linalg::is_symmetric(&params.corr, 1e-9) {
        return Err(Error::InvalidParams("t-copula parameters".into()));
    }
    let n = params.corr.nrows();
    let lambda = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            t_lambda(params.corr[(i, j)], params.nu)
        }
    });
    Ok(TailDependenceMatrix { lambda })
}

/// `P(U <= q, V <= q) / q` over paired uniform samples.
pub fn empirical_tail_dependence(u: &[f64], v: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::BadTailLevel(q));
    }
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::LengthMismatch("tail-dependence inputs".into()));
    }
    let joint = u.iter().zip(v).filter(|(a, b)| **a <= q && **b <= q).count();
    Ok(joint as f64 / u.len() as f64 / q)
}

/// Draw `n` rows of uniforms from a t-copula. Row `k` uses stream `(seed, k)`.
pub fn sample_t_copula(params: &TCopulaParams, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let l = linalg::cholesky(&params.corr)?.l();
    let d = params.corr.nrows();
    let chi = ChiSquared::new(params.nu).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(seed, k as u64);
            let x = draw_mvt(&l, &chi, params.nu, d, &mut rng);
            x.iter().map(|v| stats::t_cdf(*v, params.nu)).collect()
        })
        .collect();
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

/// Simulate standardized residuals from a DCC process with Gaussian
/// innovations: `z_t = chol(R_t) g_t`, `Q_1 = rbar`.
pub fn simulate_dcc(params: &DccParams, t: usize, seed: u64) -> Result<DMatrix<f64>> {
    params.validate()?;
    let n = params.n();
    let mut rng = rng::stream(seed, 0);
    let mut q = params.rbar.clone();
    let mut out = DMatrix::zeros(t, n);
    for s in 0..t {
        let l = linalg::cholesky(&q_to_r(&q))?.l();
        let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z: Vec<f64> = (0..n).map(|i| (0..=i).map(|k| l[(i, k)] * g[k]).sum()).collect();
        for i in 0..n {
            out[(s, i)] = z[i];
        }
        params.update_q(&mut q, &z);
    }
    Ok(out)
}

/// One multivariate-t draw `L g / sqrt(W / nu)`.
pub(crate) fn draw_mvt<R: Rng>(l: &DMatrix<f64>, chi: &ChiSquared<f64>, nu: f64, d: usize, rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let w: f64 = chi.sample(rng);
    let scale = (w / nu).sqrt();
    (0..d)
        .map(|i| (0..=i).map(|k| l[(i, k)] * g[k]).sum::<f64>() / scale)
        .collect()
}

/// Weighted pairwise aggregate
/// `sum_{i<j} w_i w_j s_i s_j m_ij / sum_{i<j} w_i w_j s_i s_j`
/// (WPC with a correlation matrix, WPTD with a tail-dependence matrix).
pub fn weighted_pairwise(weights: &[f64], vols: &[f64], pairwise: &DMatrix<f64>) -> Result<f64> {
    let n = weights.len();
    if vols.len() != n || pairwise.shape() != (n, n) {
        return Err(Error::LengthMismatch("weighted_pairwise inputs".into()));
    }
    if weights.iter().chain(vols).any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::OutOfRangeInput("weights and vols must be non-negative".into()));
    }
    let prod: Vec<f64> = weights.iter().zip(vols).map(|(w, s)| w * s).collect();
    if prod.iter().filter(|p| **p > 0.0).count() < 2 {
        return Err(Error::DegenerateWeights);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let k = prod[i] * prod[j];
            num += k * pairwise[(i, j)];
            den += k;
        }
    }
    Ok(num / den)
}

/// Combined report: Pearson correlation below the diagonal, tail
/// dependence above it, ones on the diagonal.
pub fn dependence_report(corr: &DMatrix<f64>, lambda: &TailDependenceMatrix) -> DMatrix<f64> {
    let n = corr.nrows();
    DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => corr[(i, j)],
        std::cmp::Ordering::Less => lambda.lambda[(i, j)],
    })
}

pub(crate) mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}
