//! Thomas algorithm for complex tridiagonal systems.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Solves `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]` in place.
/// `lower[0]` and `upper[n-1]` are ignored. No pivoting: the caller must
/// supply a diagonally dominant (or otherwise safe) system.
pub fn solve_tridiagonal(
    lower: &[Complex64],
    diag: &[Complex64],
    upper: &[Complex64],
    rhs: &mut [Complex64],
) -> Result<()> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::Shape { expected: n, found: rhs.len().min(lower.len()).min(upper.len()) });
    }
    if n == 0 {
        return Ok(());
    }
    let mut c = vec![Complex64::new(0.0, 0.0); n];
    let mut denom = diag[0];
    check_pivot(denom, 0)?;
    c[0] = upper[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        check_pivot(denom, i)?;
        c[i] = upper[i] / denom;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        let next = rhs[i + 1];
        rhs[i] -= c[i] * next;
    }
    Ok(())
}

#[inline]
fn check_pivot(d: Complex64, i: usize) -> Result<()> {
    if d.norm_sqr() == 0.0 || !d.is_finite() {
        Err(Error::Numerical(format!("degenerate pivot at row {i}")))
    } else {
        Ok(())
    }
}

/// Pre-factored system with a constant off-diagonal value, as produced by a
/// uniform-grid Hamiltonian. Reusing the factorization turns each solve into
/// two sweeps of multiply-adds.
#[derive(Debug, Clone)]
pub struct ConstOffDiagonalFactor {
    off: Complex64,
    inv_pivot: Vec<Complex64>,
    upper_ratio: Vec<Complex64>,
}

impl ConstOffDiagonalFactor {
    pub fn new(off: Complex64, diag: &[Complex64]) -> Result<Self> {
        let n = diag.len();
        let mut inv_pivot = Vec::with_capacity(n);
        let mut upper_ratio = Vec::with_capacity(n);
        let mut prev = Complex64::new(0.0, 0.0);
        for (i, &d) in diag.iter().enumerate() {
            let denom = d - off * prev;
            check_pivot(denom, i)?;
            let inv = denom.inv();
            prev = off * inv;
            inv_pivot.push(inv);
            upper_ratio.push(prev);
        }
        Ok(Self { off, inv_pivot, upper_ratio })
    }

    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pivot.is_empty()
    }

    /// Overwrites `rhs` with the solution.
    pub fn solve_in_place(&self, rhs: &mut [Complex64]) {
        debug_assert_eq!(rhs.len(), self.len());
        let n = rhs.len();
        if n == 0 {
            return;
        }
        let mut prev = Complex64::new(0.0, 0.0);
        for (r, inv) in rhs.iter_mut().zip(&self.inv_pivot) {
            prev = (*r - self.off * prev) * inv;
            *r = prev;
        }
        for i in (0..n - 1).rev() {
            let next = rhs[i + 1];
            rhs[i] -= self.upper_ratio[i] * next;
        }
    }
}

impl ConstOffDiagonalFactor {
    /// Solves in place for a right-hand side that vanishes outside
    /// `support` (inclusive). The solution tails beyond the support are
    /// followed until their components drop below `cutoff`, and the rest of
    /// `rhs` is left untouched (callers treat it as zero). Returns the
    /// inclusive index range holding the solution.
    pub fn solve_supported(&self, rhs: &mut [Complex64], support: (usize, usize), cutoff: f64) -> (usize, usize) {
        let n = rhs.len();
        debug_assert_eq!(n, self.len());
        let (lo, hi) = support;
        debug_assert!(lo <= hi && hi < n);
        let small = |z: Complex64| z.re.abs() < cutoff && z.im.abs() < cutoff;
        let mut prev = Complex64::new(0.0, 0.0);
        let mut end = n - 1;
        for i in lo..n {
            let r = if i <= hi { rhs[i] } else { Complex64::new(0.0, 0.0) };
            let y = (r - self.off * prev) * self.inv_pivot[i];
            if i > hi && small(y) {
                end = i - 1;
                break;
            }
            rhs[i] = y;
            prev = y;
        }
        for i in (lo..end).rev() {
            let next = rhs[i + 1];
            rhs[i] -= self.upper_ratio[i] * next;
        }
        let mut start = lo;
        while start > 0 {
            let x = -self.upper_ratio[start - 1] * rhs[start];
            if small(x) {
                break;
            }
            start -= 1;
            rhs[start] = x;
        }
        (start, end)
    }
}
