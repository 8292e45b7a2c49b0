//! Hitting-time moments E_x(T_z^n) from the recursion
//! u_n(x) = 2n∫_z^x e^{γ(y)}∫_y^∞ u_{n−1} e^{−γ} dξ dy.

use crate::error::{domain, Error, Result};
use crate::hform::{cumulative_from_bottom, Panels};
use crate::numerics::{binomial, locate, moments_from_cumulants, Curve};

use super::PotentialTables;

/// All moments E_x(T_z^n), n ≤ n_max, for one target level z.
#[derive(Debug, Clone)]
pub struct MomentTable {
    z: f64,
    x_max: f64,
    n_max: usize,
    u: Vec<Curve>,
    inf: Vec<f64>,
}

/// Hermite curve of ∫_{x_0}^x of `c`, times `scale`.
fn antiderivative(c: &Curve, scale: f64) -> Curve {
    let f = cumulative_from_bottom(c).into_iter().map(|v| scale * v).collect();
    let d = c.f.iter().map(|v| scale * v).collect();
    Curve::new(c.x.clone(), f, d)
}

fn anchored_panels(tables: &PotentialTables, z: f64) -> Panels {
    let base = tables.panels();
    let mut x = vec![z];
    x.extend(base.x.iter().copied().filter(|v| *v > z * (1.0 + 1e-12) + 1e-14));
    Panels::new(tables.model(), x)
}

/// Terminal value at the last node of H with a slowly varying source f:
/// H ≈ f/(2q) + f'/(4q²) − fq'/(4q³).
fn terminal(p: &Panels, f: f64, df: f64) -> f64 {
    let last = p.len() - 1;
    let (q, qp) = (p.q[last], p.qp[last]);
    f / (2.0 * q) + df / (4.0 * q * q) - f * qp / (4.0 * q * q * q)
}

impl MomentTable {
    pub fn build(tables: &PotentialTables, z: f64, n_max: usize) -> Result<Self> {
        tables.check_z("z", z)?;
        if n_max == 0 || n_max > 40 {
            return Err(Error::DepthExceeded { n: n_max, depth: 40 });
        }
        let model = tables.model();
        let panels = anchored_panels(tables, z);
        let last = panels.len() - 1;
        let ones = vec![1.0; panels.len()];
        let mut prev = Curve::new(panels.x.clone(), ones, vec![0.0; panels.len()]);
        let mut u = Vec::with_capacity(n_max);
        for n in 1..=n_max {
            let src = &prev;
            let term = terminal(&panels, src.f[last], src.d[last]);
            let h = panels.sweep(model, |i, s| src.panel(i).eval(s), term)?;
            let next = antiderivative(&h, 2.0 * n as f64);
            u.push(next);
            prev = u[n - 1].clone();
        }

        // moments of T_{x_end} from infinity; cumulants above the table depth are
        // negligible there and dropped
        let x_end = tables.x_end();
        let depth = tables.depth();
        let kappa: Vec<f64> = (1..=n_max)
            .map(|k| {
                if k <= depth {
                    crate::numerics::factorial(k) * tables.tail_integral(k, x_end)
                } else {
                    0.0
                }
            })
            .collect();
        let mu = moments_from_cumulants(&kappa);
        let u_end = |k: usize| if k == 0 { 1.0 } else { u[k - 1].f[last] };
        let mut inf = vec![1.0];
        for n in 1..=n_max {
            inf.push((0..=n).map(|k| binomial(n, k) * mu[k] * u_end(n - k)).sum());
        }
        Ok(MomentTable {
            z,
            x_max: tables.x_max(),
            n_max,
            u,
            inf,
        })
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// E_x(T_z^n); `x = f64::INFINITY` gives the moment from infinity.
    pub fn moment(&self, x: f64, n: usize) -> Result<f64> {
        if n > self.n_max {
            return Err(Error::DepthExceeded { n, depth: self.n_max });
        }
        if n == 0 {
            return Ok(1.0);
        }
        if x == f64::INFINITY {
            return Ok(self.inf[n]);
        }
        if !(x >= self.z && x <= self.x_max) {
            return Err(domain("x", x, "need z <= x <= x_max or x = inf"));
        }
        Ok(self.u[n - 1].eval(x))
    }

    /// Var_x(T_z).
    pub fn variance(&self, x: f64) -> Result<f64> {
        let m1 = self.moment(x, 1)?;
        Ok(self.moment(x, 2)? - m1 * m1)
    }

    /// Grid of the table (z followed by the table nodes above it).
    pub fn grid(&self) -> &[f64] {
        let n = locate(&self.u[0].x, self.x_max);
        &self.u[0].x[..=n]
    }
}

/// Chain sum over n = ℓ₀ > ℓ₁ > … > ℓ_k ≥ 0 of
/// (−1)^k Π C(ℓ_{i−1}, ℓ_i) E∞T_ξ^{ℓ_{i−1}−ℓ_i} · (E∞T_z^{ℓ_k} − E∞T_ξ^{ℓ_k}).
pub(crate) fn chain_sum(mu_z: &[f64], mu_xi: &[f64], n: usize) -> f64 {
    fn walk(l: usize, prod: f64, sign: f64, mu_z: &[f64], mu_xi: &[f64]) -> f64 {
        let mut s = sign * prod * (mu_z[l] - mu_xi[l]);
        for next in 0..l {
            s += walk(next, prod * binomial(l, next) * mu_xi[l - next], -sign, mu_z, mu_xi);
        }
        s
    }
    walk(n, 1.0, 1.0, mu_z, mu_xi)
}

pub(crate) fn combinatorial(tables: &PotentialTables, xi: f64, z: f64, n: usize) -> Result<f64> {
    tables.check_z("z", z)?;
    tables.check_z("xi", xi)?;
    if xi < z {
        return Err(domain("xi", xi, "need xi >= z"));
    }
    if n > tables.depth() {
        return Err(Error::DepthExceeded {
            n,
            depth: tables.depth(),
        });
    }
    let moments = |x: f64| -> Result<Vec<f64>> {
        let kappa: Vec<f64> = (1..=n).map(|k| tables.cumulant(k, x)).collect::<Result<_>>()?;
        Ok(moments_from_cumulants(&kappa))
    };
    Ok(chain_sum(&moments(z)?, &moments(xi)?, n))
}

pub(crate) fn green_occupation<F>(tables: &PotentialTables, x: f64, z: f64, f: F) -> Result<f64>
where
    F: Fn(f64) -> f64 + Sync,
{
    tables.check_z("z", z)?;
    if !(x >= z && x <= tables.x_max()) {
        return Err(domain("x", x, "need z <= x <= x_max"));
    }
    let panels = anchored_panels(tables, z);
    let last = panels.len() - 1;
    let end = panels.x[last];
    let gamma_half = 0.5 * tables.model().gamma_increment(0.5 * end, end);
    let (fe, fh) = (f(end).abs(), f(0.5 * end).abs());
    if fe > 0.0 && (fh == 0.0 || (fe / fh).ln() > gamma_half) {
        return Err(Error::TailUnresolved(
            "occupation integrand grows faster than e^{gamma/2}".into(),
        ));
    }
    let eps = 1e-6 * end;
    let df = (f(end + eps) - f(end - eps)) / (2.0 * eps);
    let h = panels.sweep_adaptive(tables.model(), |_, s| f(s), terminal(&panels, f(end), df))?;
    Ok(antiderivative(&h, 2.0).eval(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DriftModel;
    use crate::quad::TableOptions;

    fn tables() -> PotentialTables {
        let m = DriftModel::power_law(1.0, 2.0).unwrap();
        PotentialTables::build(&m, TableOptions::default()).unwrap()
    }

    #[test]
    fn chain_sum_matches_recursion() {
        let mu_z = [1.0, 2.0, 7.0, 30.0, 160.0];
        let mu_xi = [1.0, 0.5, 0.4, 0.5, 0.8];
        let mut e = vec![0.0; 5];
        for n in 1..5 {
            let mut v = mu_z[n] - mu_xi[n];
            for r in 1..n {
                v -= binomial(n, r) * mu_xi[n - r] * e[r];
            }
            e[n] = v;
            assert!((chain_sum(&mu_z, &mu_xi, n) - v).abs() < 1e-12 * v.abs());
        }
    }

    #[test]
    fn first_moment_is_difference_of_m() {
        let t = tables();
        let mt = MomentTable::build(&t, 1.0, 4).unwrap();
        let want = t.lyapunov_m(1.0).unwrap() - t.lyapunov_m(5.0).unwrap();
        assert!((mt.moment(5.0, 1).unwrap() / want - 1.0).abs() < 1e-8);
        assert!((mt.moment(f64::INFINITY, 1).unwrap() / t.lyapunov_m(1.0).unwrap() - 1.0).abs() < 1e-8);
        assert_eq!(mt.moment(1.0, 3).unwrap(), 0.0);
        assert!(matches!(mt.moment(5.0, 5), Err(Error::DepthExceeded { .. })));
        assert!(mt.moment(0.5, 1).is_err());
    }

    #[test]
    fn moments_from_infinity_agree_with_cumulants() {
        let t = tables();
        let mt = MomentTable::build(&t, 0.7, 4).unwrap();
        for n in 1..=4 {
            let a = mt.moment(f64::INFINITY, n).unwrap();
            let b = t.moment_from_infinity(0.7, n).unwrap();
            assert!((a / b - 1.0).abs() < 1e-7, "n = {n}: {a} vs {b}");
        }
    }

    #[test]
    fn green_of_first_moment_is_half_second() {
        let t = tables();
        let mt = MomentTable::build(&t, 1.0, 2).unwrap();
        let g = t.green_occupation(3.0, 1.0, |s| {
            if s <= 1.0 {
                0.0
            } else {
                mt.moment(s.min(t.x_max()), 1).unwrap()
            }
        });
        let half = 0.5 * mt.moment(3.0, 2).unwrap();
        assert!((g.unwrap() / half - 1.0).abs() < 1e-6);
    }
}
