//! Dense finite-difference reference eigenvalues: the symmetric three-point
//! discretization of −½φ'' + Vφ = λφ, V = (q² − q')/2, with Dirichlet ends,
//! solved by Sturm-sequence bisection and Richardson-extrapolated in h.

use crate::error::{domain, Result};
use crate::model::DriftModel;

/// Symmetric tridiagonal matrix with constant off-diagonal.
struct Tridiagonal {
    diag: Vec<f64>,
    off: f64,
}

impl Tridiagonal {
    /// Number of eigenvalues below `lambda` (negative pivots of T − λI).
    fn count_below(&self, lambda: f64) -> usize {
        let b2 = self.off * self.off;
        let mut count = 0;
        let mut d = 1.0;
        for (i, a) in self.diag.iter().enumerate() {
            d = if i == 0 { a - lambda } else { a - lambda - b2 / d };
            if d == 0.0 {
                d = -1e-300;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn eigenvalue(&self, k: usize, mut lo: f64, mut hi: f64) -> f64 {
        while self.count_below(hi) < k {
            hi = 2.0 * hi.abs() + 1.0;
        }
        while self.count_below(lo) >= k {
            lo = lo - 2.0 * lo.abs() - 1.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi.abs() {
                break;
            }
            if self.count_below(mid) >= k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

fn matrix(model: &DriftModel, z: f64, x_far: f64, n: usize) -> Tridiagonal {
    let h = (x_far - z) / n as f64;
    let diag = (1..n)
        .map(|i| {
            let (q, qp) = model.qq(z + i as f64 * h);
            1.0 / (h * h) + 0.5 * (q * q - qp)
        })
        .collect();
    Tridiagonal {
        diag,
        off: -0.5 / (h * h),
    }
}

/// Lowest `k` eigenvalues on [z, x_far] with n intervals, extrapolated from
/// n and 2n intervals.
pub fn fd_eigenvalues(model: &DriftModel, z: f64, x_far: f64, n: usize, k: usize) -> Result<Vec<f64>> {
    if !(x_far > z) {
        return Err(domain("x_far", x_far, "must exceed z"));
    }
    if n < 4 * k.max(1) {
        return Err(domain("n", n as f64, "too few intervals for the requested count"));
    }
    let coarse = matrix(model, z, x_far, n);
    let fine = matrix(model, z, x_far, 2 * n);
    let lo = fine.diag.iter().cloned().fold(f64::INFINITY, f64::min) - 2.0 * fine.off.abs() - 1.0;
    let mut hi = lo.abs() + 1.0;
    while fine.count_below(hi) < k {
        hi *= 2.0;
    }
    Ok((1..=k)
        .map(|j| {
            let a = coarse.eigenvalue(j, lo, hi);
            let b = fine.eigenvalue(j, lo, hi);
            (4.0 * b - a) / 3.0
        })
        .collect())
}

/// Reference eigenvalues with the far end and spacing chosen from the
/// potential: the far end lies 40 WKB decay lengths beyond the last turning
/// point of the k-th level, and h resolves both the oscillation and the well.
pub fn fd_reference(model: &DriftModel, z: f64, k: usize) -> Result<Vec<f64>> {
    let pot = |x: f64| {
        let (q, qp) = model.qq(x);
        0.5 * (q * q - qp)
    };
    // rough level from a short, coarse solve on a generous window
    let mut width = 1.0 / (1.0 + pot(z).abs()).powf(0.25);
    let mut guess;
    loop {
        guess = fd_eigenvalues(model, z, z + 8.0 * width, 400, k)?;
        let top = guess[k - 1];
        if pot(z + 8.0 * width) > 4.0 * top.abs() + 10.0 {
            break;
        }
        width *= 1.5;
    }
    let top = guess[k - 1].abs() * 1.2 + 1.0;
    let mut x = z;
    while pot(x) < top {
        x += width / 200.0;
    }
    let mut decay = 0.0;
    let dx = width / 400.0;
    while decay < 40.0 {
        decay += (2.0 * (pot(x) - top)).max(0.0).sqrt() * dx;
        x += dx;
    }
    let h_osc = 0.02 / (2.0 * top).sqrt();
    let h_well = width / 400.0;
    let n = (((x - z) / h_osc.min(h_well)).ceil() as usize).clamp(4 * k, 400_000);
    fd_eigenvalues(model, z, x, n, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_levels() {
        let m = DriftModel::exp_poly(vec![0.0]).unwrap();
        let v = fd_eigenvalues(&m, 0.0, 30.0, 3000, 3).unwrap();
        // q ≡ 1: V = 1/2, continuous spectrum above 1/2 on the half-line, so
        // on [0, 30] the levels are 1/2 + (jπ/30)²/2
        for (j, l) in v.iter().enumerate() {
            let exact = 0.5 + ((j + 1) as f64 * std::f64::consts::PI / 30.0).powi(2) / 2.0;
            assert!((l - exact).abs() < 1e-9, "{l} vs {exact}");
        }
        // q = x: V = (x² − 1)/2, and Dirichlet at 0 keeps the odd Hermite
        // levels 2j + 1
        let lin = DriftModel::custom(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]).unwrap();
        let v = fd_reference(&lin, 0.0, 3).unwrap();
        for (j, l) in v.iter().enumerate() {
            let exact = 2.0 * j as f64 + 1.0;
            assert!((l - exact).abs() < 1e-7, "{l} vs {exact}");
        }
    }
}
