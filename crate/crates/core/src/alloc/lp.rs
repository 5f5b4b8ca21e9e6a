//! Dense bounded-variable revised simplex for `min c'x  s.t.  Ax = b,
//! l <= x <= u`, intended for problems with few rows and many columns.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct Lp {
    pub m: usize,
    /// Column-major constraint matrix, `m` entries per column.
    pub a: Vec<f64>,
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl Lp {
    pub fn new(m: usize, rhs: Vec<f64>) -> Self {
        Self {
            m,
            a: Vec::new(),
            cost: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            rhs,
        }
    }

    pub fn add_column(&mut self, col: &[f64], cost: f64, lower: f64, upper: f64) -> usize {
        debug_assert_eq!(col.len(), self.m);
        self.a.extend_from_slice(col);
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.cost.len() - 1
    }

    pub fn n(&self) -> usize {
        self.cost.len()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LpSolution {
    #[cfg_attr(not(test), allow(dead_code))]
    pub x: Vec<f64>,
    /// Simplex multipliers `y` with reduced costs `c - A'y`.
    pub duals: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Basic,
    Lower,
    Upper,
    Free,
}

struct Simplex<'a> {
    m: usize,
    a: &'a [f64],
    n: usize,
    // artificial columns are +-e_r, stored as signs
    art_sign: Vec<f64>,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rhs: &'a [f64],
    x: Vec<f64>,
    status: Vec<Status>,
    basis: Vec<usize>,
    binv: DMatrix<f64>,
}

const OPT_TOL: f64 = 1e-11;
const PIV_TOL: f64 = 1e-11;
const REFACTOR_EVERY: usize = 64;

impl<'a> Simplex<'a> {
    fn total(&self) -> usize {
        self.n + self.m
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        if j < self.n {
            out.copy_from_slice(&self.a[j * self.m..(j + 1) * self.m]);
        } else {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[j - self.n] = self.art_sign[j - self.n];
        }
    }

    fn dot_column(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            self.a[j * self.m..(j + 1) * self.m].iter().zip(y).map(|(a, b)| a * b).sum()
        } else {
            self.art_sign[j - self.n] * y[j - self.n]
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut b = DMatrix::zeros(m, m);
        let mut col = vec![0.0; m];
        for (k, &j) in self.basis.iter().enumerate() {
            self.column(j, &mut col);
            for r in 0..m {
                b[(r, k)] = col[r];
            }
        }
        self.binv = b
            .try_inverse()
            .ok_or_else(|| Error::NonConvergence("singular simplex basis".into()))?;
        // recompute basic values from nonbasic ones
        let mut resid = self.rhs.to_vec();
        for j in 0..self.total() {
            if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                self.column(j, &mut col);
                for r in 0..m {
                    resid[r] -= col[r] * self.x[j];
                }
            }
        }
        for k in 0..m {
            self.x[self.basis[k]] = (0..m).map(|r| self.binv[(k, r)] * resid[r]).sum();
        }
        Ok(())
    }

    fn multipliers(&self) -> Vec<f64> {
        let m = self.m;
        (0..m)
            .map(|r| (0..m).map(|k| self.binv[(k, r)] * self.cost[self.basis[k]]).sum())
            .collect()
    }

    fn run(&mut self) -> Result<()> {
        let m = self.m;
        let mut alpha = vec![0.0; m];
        let mut col = vec![0.0; m];
        let mut degenerate = 0usize;
        let max_iter = 200 * (self.total() + m) + 1000;
        for iter in 0..max_iter {
            if iter % REFACTOR_EVERY == REFACTOR_EVERY - 1 {
                self.refactor()?;
            }
            let y = self.multipliers();
            let bland = degenerate > 50;
            let mut enter: Option<(usize, f64)> = None;
            for j in 0..self.total() {
                let st = self.status[j];
                if st == Status::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                let d = self.cost[j] - self.dot_column(j, &y);
                let eligible = match st {
                    Status::Lower => d < -OPT_TOL,
                    Status::Upper => d > OPT_TOL,
                    Status::Free => d.abs() > OPT_TOL,
                    Status::Basic => false,
                };
                if eligible {
                    if bland {
                        enter = Some((j, d));
                        break;
                    }
                    if enter.map_or(true, |(_, e)| d.abs() > e.abs()) {
                        enter = Some((j, d));
                    }
                }
            }
            let Some((j, d)) = enter else {
                return Ok(());
            };
            let sigma = if d < 0.0 { 1.0 } else { -1.0 };
            self.column(j, &mut col);
            for k in 0..m {
                alpha[k] = (0..m).map(|r| self.binv[(k, r)] * col[r]).sum();
            }
            let mut t = self.upper[j] - self.lower[j];
            let mut leave: Option<(usize, bool)> = None;
            let mut best_piv = 0.0;
            for k in 0..m {
                let bk = self.basis[k];
                let delta = sigma * alpha[k];
                let (lim, to_upper) = if delta > PIV_TOL {
                    ((self.x[bk] - self.lower[bk]) / delta, false)
                } else if delta < -PIV_TOL {
                    ((self.upper[bk] - self.x[bk]) / -delta, true)
                } else {
                    continue;
                };
                let lim = lim.max(0.0);
                // ties go to the larger pivot
                if lim < t - 1e-12 || (leave.is_some() && lim <= t + 1e-12 && delta.abs() > best_piv) {
                    t = lim;
                    best_piv = delta.abs();
                    leave = Some((k, to_upper));
                }
            }
            if !t.is_finite() {
                return Err(Error::InfeasibleLp("unbounded direction".into()));
            }
            degenerate = if t < 1e-12 { degenerate + 1 } else { 0 };
            self.x[j] += sigma * t;
            for k in 0..m {
                self.x[self.basis[k]] -= t * sigma * alpha[k];
            }
            match leave {
                None => {
                    self.status[j] = if sigma > 0.0 { Status::Upper } else { Status::Lower };
                    self.x[j] = if sigma > 0.0 { self.upper[j] } else { self.lower[j] };
                }
                Some((r, to_upper)) => {
                    let out = self.basis[r];
                    self.status[out] = if to_upper { Status::Upper } else { Status::Lower };
                    self.x[out] = if to_upper { self.upper[out] } else { self.lower[out] };
                    self.basis[r] = j;
                    self.status[j] = Status::Basic;
                    let piv = alpha[r];
                    for c in 0..m {
                        self.binv[(r, c)] /= piv;
                    }
                    for k in 0..m {
                        if k != r && alpha[k] != 0.0 {
                            let f = alpha[k];
                            for c in 0..m {
                                let v = self.binv[(r, c)];
                                self.binv[(k, c)] -= f * v;
                            }
                        }
                    }
                }
            }
        }
        Err(Error::NonConvergence("simplex iteration limit".into()))
    }
}

pub(crate) fn solve(lp: &Lp) -> Result<LpSolution> {
    let m = lp.m;
    let n = lp.n();
    let mut x = Vec::with_capacity(n + m);
    let mut status = Vec::with_capacity(n + m);
    for j in 0..n {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        if l.is_finite() {
            x.push(l);
            status.push(Status::Lower);
        } else if u.is_finite() {
            x.push(u);
            status.push(Status::Upper);
        } else {
            x.push(0.0);
            status.push(Status::Free);
        }
    }
    let mut resid = lp.rhs.clone();
    for j in 0..n {
        if x[j] != 0.0 {
            for r in 0..m {
                resid[r] -= lp.a[j * m + r] * x[j];
            }
        }
    }
    let art_sign: Vec<f64> = resid.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect();
    x.extend(resid.iter().map(|v| v.abs()));
    status.extend(std::iter::repeat(Status::Basic).take(m));
    let mut cost = vec![0.0; n];
    cost.extend(std::iter::repeat(1.0).take(m));
    let mut lower = lp.lower.clone();
    lower.extend(std::iter::repeat(0.0).take(m));
    let mut upper = lp.upper.clone();
    upper.extend(std::iter::repeat(f64::INFINITY).take(m));
    let mut s = Simplex {
        m,
        a: &lp.a,
        n,
        binv: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&art_sign)),
        art_sign,
        cost,
        lower,
        upper,
        rhs: &lp.rhs,
        x,
        status,
        basis: (n..n + m).collect(),
    };
    s.run()?;
    s.refactor()?;
    let infeas: f64 = s.x[n..].iter().sum();
    let scale = lp.rhs.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if infeas > 1e-9 * scale {
        return Err(Error::InfeasibleLp(format!("phase one residual {infeas:e}")));
    }
    for j in n..n + m {
        s.upper[j] = 0.0;
        s.cost[j] = 0.0;
        if s.status[j] != Status::Basic {
            s.x[j] = 0.0;
            s.status[j] = Status::Lower;
        }
    }
    s.cost[..n].copy_from_slice(&lp.cost);
    s.run()?;
    s.refactor()?;
    let duals = s.multipliers();
    let x: Vec<f64> = s.x[..n].to_vec();
    let objective = x.iter().zip(&lp.cost).map(|(a, b)| a * b).sum();
    Ok(LpSolution { x, duals, objective })
}
