//! Exact proximal operator of `c * ||w - w0||_1` restricted to the budget
//! hyperplane (optionally the simplex) and an optional return equality.
//!
//! For fixed multipliers `nu` (budget) and `xi` (return) the problem splits
//! per coordinate into a soft-threshold around `w0_i`, clipped at zero when
//! shorting is off. The budget multiplier is found exactly from the sorted
//! breakpoints of the piecewise-linear sum; the return multiplier by
//! bisection on the (concave) dual.

use super::{OptimizerError, Result};

pub(crate) struct ProxProblem<'a> {
    pub w0: &'a [f64],
    /// L1 weight `c` (step size times cost rate).
    pub c: f64,
    pub long_only: bool,
    /// `(mu, target)` for the equality `mu . w = target`.
    pub target: Option<(&'a [f64], f64)>,
}

impl ProxProblem<'_> {
    fn coord(&self, i: usize, y: f64) -> f64 {
        let d = y - self.w0[i];
        let w = self.w0[i] + d.signum() * (d.abs() - self.c).max(0.0);
        if self.long_only {
            w.max(0.0)
        } else {
            w
        }
    }

    fn fill(&self, a: &[f64], nu: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.coord(i, a[i] - nu);
        }
    }

    fn budget_sum(&self, a: &[f64], nu: f64) -> f64 {
        (0..a.len()).map(|i| self.coord(i, a[i] - nu)).sum()
    }

    /// Budget multiplier for the shifted point `a`, so `sum coord(a - nu) = 1`.
    fn solve_nu(&self, a: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let m = a.len() as f64;
        scratch.clear();
        for (i, &ai) in a.iter().enumerate() {
            let w0 = self.w0[i];
            for yb in [w0 + self.c, w0 - self.c, self.c, -self.c] {
                scratch.push(ai - yb);
            }
        }
        scratch.sort_by(f64::total_cmp);
        let b = &scratch[..];
        let first = b[0];
        let s_first = self.budget_sum(a, first);
        if s_first <= 1.0 {
            // below every breakpoint all coordinates are on the slope -1 branch
            return first - (1.0 - s_first) / m;
        }
        let last = b[b.len() - 1];
        let s_last = self.budget_sum(a, last);
        if s_last >= 1.0 {
            return if self.long_only { last } else { last + (s_last - 1.0) / m };
        }
        // invariant: S(b[lo]) > 1 > S(b[hi])
        let (mut lo, mut hi) = (0usize, b.len() - 1);
        let (mut s_lo, mut s_hi) = (s_first, s_last);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let s = self.budget_sum(a, b[mid]);
            if s > 1.0 {
                lo = mid;
                s_lo = s;
            } else if s < 1.0 {
                hi = mid;
                s_hi = s;
            } else {
                return b[mid];
            }
        }
        if s_lo == s_hi || b[hi] == b[lo] {
            return b[lo];
        }
        b[lo] + (s_lo - 1.0) * (b[hi] - b[lo]) / (s_lo - s_hi)
    }

    /// `argmin_w 1/2 ||w - z||^2 + c ||w - w0||_1` over the feasible set.
    pub fn solve(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let mut scratch = Vec::with_capacity(4 * z.len());
        let Some((mu, target)) = self.target else {
            let nu = self.solve_nu(z, &mut scratch);
            self.fill(z, nu, out);
            return Ok(());
        };
        let mut a = vec![0.0; z.len()];
        // g(xi) = mu . w(xi) - target is continuous and nonincreasing in xi
        let mut eval = |xi: f64, out: &mut [f64]| {
            for i in 0..z.len() {
                a[i] = z[i] - xi * mu[i];
            }
            let nu = self.solve_nu(&a, &mut scratch);
            self.fill(&a, nu, out);
            out.iter().zip(mu).map(|(w, m)| w * m).sum::<f64>() - target
        };
        let scale = mu.iter().fold(0.0f64, |s, m| s.max(m.abs())).max(1e-300);
        let g0 = eval(0.0, out);
        if g0 == 0.0 {
            return Ok(());
        }
        let dir = if g0 > 0.0 { 1.0 } else { -1.0 };
        let (mut lo, mut hi) = (0.0, dir / scale);
        let mut found = false;
        for _ in 0..200 {
            let g = eval(hi, out);
            if g == 0.0 {
                return Ok(());
            }
            if g.signum() != g0.signum() {
                found = true;
                break;
            }
            lo = hi;
            hi *= 2.0;
        }
        if !found {
            return Err(OptimizerError::Infeasible(format!("return target {target} not attainable")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            let g = eval(mid, out);
            if g == 0.0 {
                return Ok(());
            }
            if g.signum() == g0.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // finish on the side with the smaller violation
        let g_lo = eval(lo, &mut vec![0.0; z.len()]);
        let g_hi = eval(hi, out);
        if g_lo.abs() < g_hi.abs() {
            eval(lo, out);
        }
        Ok(())
    }
}
