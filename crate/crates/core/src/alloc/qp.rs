//! Primal active-set method for `min 1/2 x'Hx  s.t.  Ax = b, x >= 0` with
//! `H` positive semidefinite, started from a feasible point.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub(crate) struct QpSolution {
    pub x: Vec<f64>,

}

pub(crate) fn active_set(h: &DMatrix<f64>, a: &DMatrix<f64>, b: &[f64], x0: &[f64]) -> Result<QpSolution> {
    let n = h.nrows();
    let m = a.nrows();
    let hs = h.amax().max(f64::MIN_POSITIVE);
    let h = h / hs;
    let mut x = x0.to_vec();
    let mut working: Vec<bool> = x.iter().map(|v| *v <= 0.0).collect();
    for (xi, w) in x.iter_mut().zip(&working) {
        if *w {
            *xi = 0.0;
        }
    }
    let max_iter = 50 * (n + m) + 100;
    for _ in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| !working[i]).collect();
        let nf = free.len();
        let k = DMatrix::from_fn(nf + m, nf + m, |r, c| match (r < nf, c < nf) {
            (true, true) => h[(free[r], free[c])],
            (true, false) => a[(c - nf, free[r])],
            (false, true) => a[(r - nf, free[c])],
            (false, false) => 0.0,
        });
        let rhs = DVector::from_fn(nf + m, |r, _| if r < nf { 0.0 } else { b[r - nf] });
        let sol = linalg::lstsq(&k, &rhs).ok_or_else(|| Error::NonConvergence("singular KKT system".into()))?;
        let p: Vec<f64> = (0..nf).map(|r| sol[r] - x[free[r]]).collect();
        let pnorm = p.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if pnorm < 1e-13 {
            // bound multipliers: (Hx + A'nu)_i for i in the working set
            let hx = &h * DVector::from_column_slice(&x);
            let mut worst: Option<(usize, f64)> = None;
            for i in (0..n).filter(|&i| working[i]) {
                let mu = hx[i] + (0..m).map(|r| a[(r, i)] * sol[nf + r]).sum::<f64>();
                if mu < -1e-12 && worst.map_or(true, |(_, w)| mu < w) {
                    worst = Some((i, mu));
                }
            }
            match worst {
                None => return Ok(QpSolution { x }),
                Some((i, _)) => working[i] = false,
            }
            continue;
        }
        let mut step = 1.0;
        let mut blocking = None;
        for (r, &i) in free.iter().enumerate() {
            if p[r] < 0.0 {
                let t = -x[i] / p[r];
                if t < step {
                    step = t;
                    blocking = Some(i);
                }
            }
        }
        for (r, &i) in free.iter().enumerate() {
            x[i] += step * p[r];
        }
        if let Some(i) = blocking {
            x[i] = 0.0;
            working[i] = true;
        }
    }
    Err(Error::NonConvergence("active-set iteration limit".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_quadratic() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let a = DMatrix::from_element(1, 2, 1.0);
        let s = active_set(&h, &a, &[1.0], &[0.5, 0.5]).unwrap();
        assert!((s.x[0] - 0.8).abs() < 1e-14 && (s.x[1] - 0.2).abs() < 1e-14);
    }

    #[test]
    fn bound_becomes_active() {
        // strongly correlated pair: optimum puts all weight on the low-variance asset
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.9, 1.9, 4.0]);
        let a = DMatrix::from_element(1, 2, 1.0);
        let s = active_set(&h, &a, &[1.0], &[0.5, 0.5]).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-14 && s.x[1] == 0.0);
    }
}
