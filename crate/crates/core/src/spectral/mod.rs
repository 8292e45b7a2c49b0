//! Eigenpairs of the generator ½ψ'' − qψ' killed at z, on L²(μ_z) with
//! dμ_z = 2e^{−(γ−γ(z))}dx, and the quantities built from them: the
//! quasi-stationary law, survival, the Yaglom constant and the transition
//! density r(t, y, x) = Σ e^{−λ_k t}ψ_k(y)ψ_k(x).
//!
//! The problem is solved for φ = e^{−(γ−γ(z))/2}ψ on [z, X_R]. At X_R the
//! boundary condition comes from the martingale e^{λt}ψ(X_t): for y above the
//! spectrum's support, log ψ(∞) − log ψ(y) = log E∞e^{λT_y} = Σ_n λ^n∫_y^∞ r_n,
//! so ψ'/ψ = Σ_n r_n(y)λ^n with the cumulant coefficients of the tables.

mod cpm;
mod oracle;

pub use oracle::{fd_eigenvalues, fd_reference};

use std::io::{self, Write};
use std::sync::Arc;

use cpm::{propagate, Cells, State};

use crate::error::{domain, Error, Result};
use crate::hform::{cumulative_from_bottom, Panels};
use crate::model::DriftModel;
use crate::numerics::{gauss_legendre, linear_fit, locate, log_add_exp, SignedLogSum};
use crate::quad::PotentialTables;

/// One eigenpair.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub k: usize,
    pub lambda: f64,
    /// ψ(∞), with ψ normalized in L²(μ_z) and ψ(∞) > 0.
    pub psi_inf: f64,
    /// Zeros of ψ on [z, ∞), the boundary zero included.
    pub zero_count: usize,
    /// Zeros of ψ' between the boundary and the last zero of ψ.
    pub dzero_count: usize,
    /// max_j |⟨ψ_k, ψ_j⟩ − δ_kj| over the solved pairs.
    pub norm_residual: f64,
    /// log ‖ψ‖_∞ over [z, ∞).
    pub log_sup: f64,
    /// E used on the fine cells (before extrapolation).
    e_grid: f64,
    /// CPM states on the nodes up to the last turning point.
    states: Vec<State>,
    profile: Profile,
    /// Normalized φ at the quadrature nodes.
    phi: Vec<f64>,
    log_psi_inf: f64,
}

/// log ψ beyond the last turning point from u = ψ'/ψ, which solves
/// u' = 2qu − 2λ − u² and is integrated down from X_R, the stable direction.
#[derive(Debug, Clone)]
struct Profile {
    y: Vec<f64>,
    lp: Vec<f64>,
    u: Vec<f64>,
    /// Δγ and q at the nodes.
    g: Vec<f64>,
    q: Vec<f64>,
}

fn rk4_step<F: Fn(f64, &[f64; 3]) -> [f64; 3]>(f: &F, y: f64, s: &[f64; 3], h: f64) -> [f64; 3] {
    let add = |a: &[f64; 3], b: &[f64; 3], c: f64| [a[0] + c * b[0], a[1] + c * b[1], a[2] + c * b[2]];
    let k1 = f(y, s);
    let k2 = f(y + 0.5 * h, &add(s, &k1, 0.5 * h));
    let k3 = f(y + 0.5 * h, &add(s, &k2, 0.5 * h));
    let k4 = f(y + h, &add(s, &k3, h));
    let mut out = *s;
    for i in 0..3 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

struct Anchor {
    y_t: f64,
    lp_t: f64,
    g_t: f64,
}

impl Profile {
    /// Profile on [y_t, x_r] anchored at log ψ(y_t) = lp_t, Δγ(y_t) = g_t.
    fn build(model: &DriftModel, k: usize, lambda: f64, u_end: f64, x_r: f64, at: Anchor) -> Result<Self> {
        let rhs = |y: f64, s: &[f64; 3]| {
            let q = model.q(y);
            [2.0 * q * s[0] - 2.0 * lambda - s[0] * s[0], s[0], 2.0 * q]
        };
        let mut y = x_r;
        let mut s = [u_end, 0.0, 0.0];
        let mut pts = vec![(y, s)];
        while y > at.y_t {
            let q = model.q(y).abs();
            let step = (0.1 / (q + (2.0 * lambda.abs()).sqrt() + 1.0))
                .min(0.05)
                .min(y - at.y_t);
            s = rk4_step(&rhs, y, &s, -step);
            y = if y - step <= at.y_t { at.y_t } else { y - step };
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::TailNotPlateaued {
                    k,
                    reason: format!("log-derivative blew up near {y}"),
                });
            }
            pts.push((y, s));
        }
        if pts.len() == 1 {
            pts.push((at.y_t, s));
        }
        pts.reverse();
        let (l0, g0) = (pts[0].1[1], pts[0].1[2]);
        Ok(Profile {
            y: pts.iter().map(|p| p.0).collect(),
            lp: pts.iter().map(|p| p.1[1] - l0 + at.lp_t).collect(),
            u: pts.iter().map(|p| p.1[0]).collect(),
            g: pts.iter().map(|p| p.1[2] - g0 + at.g_t).collect(),
            q: pts.iter().map(|p| model.q(p.0)).collect(),
        })
    }

    /// (log ψ, Δγ) at y by cubic Hermite interpolation.
    fn eval(&self, y: f64) -> (f64, f64) {
        let i = locate(&self.y, y).min(self.y.len() - 2);
        let (a, b) = (self.y[i], self.y[i + 1]);
        let h = b - a;
        if h <= 0.0 {
            return (self.lp[i], self.g[i]);
        }
        let t = (y - a) / h;
        let (t2, t3) = (t * t, t * t * t);
        let (h00, h10, h01, h11) = (
            2.0 * t3 - 3.0 * t2 + 1.0,
            t3 - 2.0 * t2 + t,
            -2.0 * t3 + 3.0 * t2,
            t3 - t2,
        );
        let herm = |f: &[f64], d0: f64, d1: f64| h00 * f[i] + h10 * h * d0 + h01 * f[i + 1] + h11 * h * d1;
        (
            herm(&self.lp, self.u[i], self.u[i + 1]),
            herm(&self.g, 2.0 * self.q[i], 2.0 * self.q[i + 1]),
        )
    }

    fn end(&self) -> (f64, f64, f64) {
        let n = self.y.len() - 1;
        (self.lp[n], self.g[n], self.u[n])
    }
}

/// Solved spectrum at one killing level.
#[derive(Debug, Clone)]
pub struct Spectrum {
    z: f64,
    x_r: f64,
    cells: Arc<Cells>,
    tables: Arc<PotentialTables>,
    pairs: Vec<EigenPair>,
    /// ∫ψ_k dμ_z.
    masses: Vec<f64>,
    /// Δγ(x) = γ(x) − γ(z) at the cell nodes.
    dgamma: Vec<f64>,
    /// Quadrature nodes, weights of dμ_z/e^{−Δγ} and Δγ at the nodes.
    qx: Vec<f64>,
    qw: Vec<f64>,
    qdg: Vec<f64>,
    /// h and q at X_R.
    h_r: f64,
    q_r: f64,
    /// Fitted slope and intercept of log ‖ψ_k‖_∞ against λ_k.
    sup_fit: (f64, f64),
}

/// φ'/φ = ρ − q at X_R with ρ = Σ r_n λ^n.
fn robin(tables: &PotentialTables, x_r: f64, lambda: f64) -> f64 {
    let mut rho = 0.0;
    let mut pow = 1.0;
    for n in 1..=tables.depth() {
        pow *= lambda;
        rho += tables.r_at(n, x_r) * pow;
    }
    rho - tables.model().q(x_r)
}

/// log ψ(∞) − log ψ(y) = Σ λ^n ∫_y^∞ r_n, with its last term.
fn log_ascent(tables: &PotentialTables, y: f64, lambda: f64) -> (f64, f64) {
    let mut sum = 0.0;
    let mut pow = 1.0;
    let mut last = 0.0;
    for n in 1..=tables.depth() {
        pow *= lambda;
        last = tables.tail_integral(n, y) * pow;
        sum += last;
    }
    (sum, last)
}

/// Smallest node-aligned X_R ≥ z with q(X_R)² ≥ 72λ and q increasing beyond.
fn closure_point(tables: &PotentialTables, z: f64, lambda: f64) -> Result<f64> {
    let model = tables.model();
    let end = tables.x_end();
    let mut x = z.max(1e-3) * 1.05 + 0.05;
    while x < end {
        let (q, qp) = model.qq(x);
        if q > 0.0 && qp >= 0.0 && q * q >= 72.0 * lambda {
            return Ok(x);
        }
        x = x * 1.01 + 0.01;
    }
    Err(Error::TailNotPlateaued {
        k: 0,
        reason: format!("q² never reaches 72·λ = {:e} below the table end {end}", 72.0 * lambda),
    })
}

struct Solver<'a> {
    tables: &'a PotentialTables,
    x_r: f64,
    fine: Cells,
    coarse: Cells,
}

impl Solver<'_> {
    /// θ_L − θ_R at the node nearest the turning point of `e_match`.
    fn mismatch(&self, cells: &Cells, e: f64, e_match: f64) -> f64 {
        let im = cells.turning_index(e_match);
        let beta = robin(self.tables, self.x_r, 0.5 * e);
        let (tl, _) = cells.shoot_left(e, im, None);
        let (tr, _) = cells.shoot_right(e, beta, im, None);
        tl - tr
    }

    /// Number of eigenvalues (in E) strictly below e.
    fn count(&self, e: f64) -> usize {
        let d = self.mismatch(&self.fine, e, e);
        if d <= 0.0 {
            0
        } else {
            (d / std::f64::consts::PI).ceil() as usize
        }
    }

    /// Root of D(E) = (k − 1)π inside a bracket holding exactly one level.
    fn refine(&self, cells: &Cells, k: usize, mut lo: f64, mut hi: f64) -> f64 {
        let target = (k - 1) as f64 * std::f64::consts::PI;
        let e_match = 0.5 * (lo + hi);
        let f = |e: f64| self.mismatch(cells, e, e_match) - target;
        let (mut flo, mut fhi) = (f(lo), f(hi));
        let mut side = 0i32;
        for _ in 0..200 {
            if hi - lo <= 4.0 * f64::EPSILON * hi.abs() || flo == 0.0 || fhi == 0.0 {
                break;
            }
            // Illinois regula falsi with a bisection safeguard
            let mut e = (lo * fhi - hi * flo) / (fhi - flo);
            if !(e > lo && e < hi) {
                e = 0.5 * (lo + hi);
            }
            let fe = f(e);
            if fe == 0.0 {
                return e;
            }
            if (fe < 0.0) == (flo < 0.0) {
                lo = e;
                flo = fe;
                if side == -1 {
                    fhi *= 0.5;
                }
                side = -1;
            } else {
                hi = e;
                fhi = fe;
                if side == 1 {
                    flo *= 0.5;
                }
                side = 1;
            }
        }
        if flo.abs() < fhi.abs() {
            lo
        } else {
            hi
        }
    }

    /// Bracket [lo, hi] with exactly k − 1 levels below lo and k below hi.
    fn bracket(&self, k: usize, floor: f64, ceil: f64) -> Result<(f64, f64)> {
        let (mut lo, mut hi) = (floor, ceil);
        let (mut clo, mut chi) = (self.count(lo), self.count(hi));
        while !(clo == k - 1 && chi == k) {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= 1e-13 * hi.abs().max(1.0) {
                return Err(Error::EigenNotSeparated {
                    k,
                    reason: format!("levels {clo}..{chi} share [{lo}, {hi}]"),
                });
            }
            let c = self.count(mid);
            if c >= k {
                hi = mid;
                chi = c;
            } else {
                lo = mid;
                clo = c;
            }
        }
        Ok((lo, hi))
    }
}

/// Solve the first `k` eigenpairs of the generator killed at `z`.
pub fn solve_spectrum(tables: &PotentialTables, z: f64, k: usize) -> Result<Spectrum> {
    if k == 0 {
        return Err(domain("k", 0.0, "need at least one eigenpair"));
    }
    tables.check_z("z", z)?;
    let model = tables.model();
    let pot = |x: f64| {
        let (q, qp) = model.qq(x);
        q * q - qp
    };
    // lower bound for E_1 and an upper bracket for E_k from a coarse window
    let w_min = {
        let mut m = f64::INFINITY;
        let mut x = z;
        while x < tables.x_end() {
            m = m.min(pot(x));
            if pot(x) > 1e3 * (m.abs() + 1.0) {
                break;
            }
            x += 1e-3 * (1.0 + x);
        }
        m
    };
    let floor = w_min - 1.0;
    let mut e_cap = w_min.abs().max(pot(z).abs()) + 10.0;
    let mut x_r;
    let mut solver;
    loop {
        x_r = closure_point(tables, z, 0.5 * e_cap)?;
        let h = 0.015 / (e_cap + 1.0).sqrt();
        let fine = Cells::new(model, z, x_r, e_cap, h.min(0.01));
        let coarse = fine.coarsen(model);
        solver = Solver {
            tables,
            x_r,
            fine,
            coarse,
        };
        if solver.count(e_cap) >= k {
            break;
        }
        e_cap *= 2.0;
    }
    let mut levels = Vec::with_capacity(k);
    let mut lo = floor;
    for j in 1..=k {
        let (blo, bhi) = solver.bracket(j, lo, e_cap)?;
        let ef = solver.refine(&solver.fine, j, blo, bhi);
        let ec = solver.refine(&solver.coarse, j, blo.min(ef) - (bhi - blo), bhi.max(ef) + (bhi - blo));
        levels.push((ef, (4.0 * ef - ec) / 3.0));
        lo = bhi;
    }
    let cells = solver.fine;
    let dgamma: Vec<f64> = cells.x.iter().map(|&x| model.gamma_increment(z, x)).collect();
    let (nodes, weights) = gauss_legendre(8);
    let (mut qx, mut qw, mut qdg) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..cells.len() - 1 {
        let (a, b) = (cells.x[i], cells.x[i + 1]);
        let half = 0.5 * (b - a);
        for (t, w) in nodes.iter().zip(weights) {
            let x = a + half * (1.0 + t);
            qx.push(x);
            qw.push(2.0 * half * w);
            qdg.push(dgamma[i] + model.gamma_increment(a, x));
        }
    }
    let mut spec = Spectrum {
        z,
        x_r,
        tables: Arc::new(tables.clone()),
        pairs: Vec::with_capacity(k),
        masses: Vec::new(),
        dgamma,
        qx,
        qw,
        qdg,
        h_r: 0.5 * tables.r_at(1, x_r),
        q_r: model.q(x_r),
        cells: Arc::new(cells),
        sup_fit: (0.0, 0.0),
    };
    for (j, (ef, e)) in levels.into_iter().enumerate() {
        let pair = spec.reconstruct(j + 1, ef, e)?;
        spec.pairs.push(pair);
    }
    spec.finish();
    Ok(spec)
}

impl Spectrum {
    /// Normalized pair for the fine-grid level `e_grid` with extrapolated `e`
    /// (both in E = 2λ).
    fn reconstruct(&self, k: usize, e_grid: f64, e: f64) -> Result<EigenPair> {
        let cells = &*self.cells;
        let tables = &*self.tables;
        let model = tables.model();
        let lambda = 0.5 * e;
        let im = cells.turning_index(e_grid);
        let mut states = Vec::with_capacity(im + 1);
        let (_, st) = cells.shoot_left(e_grid, im, Some(&mut states));
        if st.f == 0.0 {
            return Err(Error::EigenNotSeparated {
                k,
                reason: "eigenfunction vanishes at the turning point".into(),
            });
        }
        // ψ(∞) > 0
        let sign = st.f.signum();
        for s in &mut states {
            s.f *= sign;
            s.d *= sign;
        }
        let anchor = Anchor {
            y_t: cells.x[im],
            lp_t: 0.5 * self.dgamma[im] + st.f.abs().ln() + st.log,
            g_t: self.dgamma[im],
        };
        let u_end = robin(tables, self.x_r, lambda) + self.q_r;
        let mut profile = Profile::build(model, k, lambda, u_end, self.x_r, anchor)?;

        // log |φ| and signs at the quadrature nodes
        let mut logs = Vec::with_capacity(self.qx.len());
        for (j, &x) in self.qx.iter().enumerate() {
            let i = j / 8;
            if i < im {
                let p = propagate(State { log: 0.0, ..states[i] }, e_grid - cells.w[i], x - cells.x[i]);
                logs.push((p.f.signum(), p.f.abs().ln() + p.log + states[i].log));
            } else {
                let (lp, g) = profile.eval(x);
                logs.push((1.0, lp - 0.5 * g));
            }
        }
        let (lp_r, g_r, _) = profile.end();
        let log_phi_r = lp_r - 0.5 * g_r;
        let mut log_norm = (2.0 * self.h_r + u_end / (self.q_r * self.q_r)).ln() + 2.0 * log_phi_r;
        for ((sg, l), w) in logs.iter().zip(&self.qw) {
            if *sg != 0.0 {
                log_norm = log_add_exp(log_norm, 2.0 * l + w.ln());
            }
        }
        let shift = 0.5 * log_norm;
        for s in &mut states {
            s.log -= shift;
        }
        for v in &mut profile.lp {
            *v -= shift;
        }
        let phi = logs.iter().map(|(sg, l)| sg * (l - shift).exp()).collect();
        let (ascent, last_term) = log_ascent(tables, self.x_r, lambda);
        if !ascent.is_finite() || !(last_term.abs() <= 1e-8 * ascent.abs().max(1e-300)) {
            return Err(Error::TailNotPlateaued {
                k,
                reason: format!("cumulant series for ψ(∞) not converged (last term {last_term:e})"),
            });
        }
        let log_psi_inf = lp_r - shift + ascent;
        Ok(EigenPair {
            k,
            lambda,
            psi_inf: log_psi_inf.exp(),
            zero_count: 0,
            dzero_count: 0,
            norm_residual: 0.0,
            log_sup: 0.0,
            e_grid,
            states,
            profile,
            phi,
            log_psi_inf,
        })
    }

    /// Zero counts, orthonormality residuals, masses and sup norms.
    fn finish(&mut self) {
        // zeros of ψ, and of ψ' = e^{Δγ/2}(φ' + qφ) below the last zero of ψ;
        // beyond the turning point the frozen-potential slope cannot resolve
        // φ' + qφ, and ψ is monotone there
        let model = self.tables.model().clone();
        for p in &mut self.pairs {
            let mut zeros = 1;
            let mut last_zero = 0;
            for i in 2..p.states.len() {
                if p.states[i - 1].f * p.states[i].f < 0.0 {
                    zeros += 1;
                    last_zero = i;
                }
            }
            let mut dzeros = 0;
            let mut prev = 0.0;
            for (i, st) in p.states[..last_zero.max(1)].iter().enumerate() {
                let v = st.d + model.q(self.cells.x[i]) * st.f;
                if prev * v < 0.0 {
                    dzeros += 1;
                }
                if v != 0.0 {
                    prev = v;
                }
            }
            p.zero_count = zeros;
            p.dzero_count = dzeros;
        }
        let kk = self.pairs.len();
        let mut gram = vec![vec![0.0; kk]; kk];
        for a in 0..kk {
            for b in a..kk {
                let v = self.inner(a, b);
                gram[a][b] = v;
                gram[b][a] = v;
            }
        }
        for a in 0..kk {
            self.pairs[a].norm_residual = (0..kk)
                .map(|b| (gram[a][b] - if a == b { 1.0 } else { 0.0 }).abs())
                .fold(0.0, f64::max);
        }
        self.masses = (0..kk).map(|a| self.mass(a)).collect();
        for p in &mut self.pairs {
            let mut best = p.log_psi_inf;
            for (i, st) in p.states.iter().enumerate() {
                if st.f != 0.0 {
                    best = best.max(0.5 * self.dgamma[i] + st.f.abs().ln() + st.log);
                }
            }
            p.log_sup = p.profile.lp.iter().fold(best, |m, v| m.max(*v));
        }
        self.sup_fit = if kk >= 2 {
            let l: Vec<f64> = self.pairs.iter().map(|p| p.lambda).collect();
            let s: Vec<f64> = self.pairs.iter().map(|p| p.log_sup).collect();
            let (slope, icept, _) = linear_fit(&l, &s);
            // the fit must dominate every solved pair
            let slope = slope.max(0.0);
            let lift = self
                .pairs
                .iter()
                .map(|p| p.log_sup - (icept + slope * p.lambda))
                .fold(0.0, f64::max);
            (slope, icept + lift)
        } else {
            (0.0, self.pairs[0].log_sup)
        };
    }

    /// φ(X_R) and ψ'/ψ there.
    fn closure_values(&self, a: usize) -> (f64, f64) {
        let (lp, g, u) = self.pairs[a].profile.end();
        ((lp - 0.5 * g).exp(), u)
    }

    fn inner(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (&self.pairs[a].phi, &self.pairs[b].phi);
        let body: f64 = pa.iter().zip(pb).zip(&self.qw).map(|((x, y), w)| x * y * w).sum();
        let ((fa, ua), (fb, ub)) = (self.closure_values(a), self.closure_values(b));
        body + 2.0 * fa * fb * (self.h_r + (ua + ub) / (4.0 * self.q_r * self.q_r))
    }

    /// ∫ψ dμ_z = 2∫e^{−Δγ/2}φ dx plus the tail beyond X_R.
    fn mass(&self, a: usize) -> f64 {
        let body: f64 = self.pairs[a]
            .phi
            .iter()
            .zip(&self.qw)
            .zip(&self.qdg)
            .map(|((f, w), g)| f * w * (-0.5 * g).exp())
            .sum();
        let (f, u) = self.closure_values(a);
        let g_r = self.pairs[a].profile.end().1;
        body + 2.0 * f * (-0.5 * g_r).exp() * (self.h_r + u / (4.0 * self.q_r * self.q_r))
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// Right end of the shooting interval.
    pub fn x_closure(&self) -> f64 {
        self.x_r
    }

    pub fn pairs(&self) -> &[EigenPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn lambda(&self, k: usize) -> f64 {
        self.pairs[k - 1].lambda
    }

    pub fn grid(&self) -> &[f64] {
        &self.cells.x
    }

    /// ∫ψ_k dμ_z.
    pub fn mass_of(&self, k: usize) -> f64 {
        self.masses[k - 1]
    }

    /// ⟨ψ_j, ψ_k⟩ in L²(μ_z).
    pub fn inner_product(&self, j: usize, k: usize) -> f64 {
        self.inner(j - 1, k - 1)
    }

    /// (sign, log|ψ_k(y)|) for y in [z, ∞].
    pub fn log_psi(&self, k: usize, y: f64) -> Result<(f64, f64)> {
        if !(y >= self.z) {
            return Err(domain("y", y, "below the killing level"));
        }
        let p = &self.pairs[k - 1];
        if y == f64::INFINITY {
            return Ok((1.0, p.log_psi_inf));
        }
        if y >= self.x_r {
            let (ascent, _) = log_ascent(&self.tables, y.min(self.tables.x_end()), p.lambda);
            return Ok((1.0, p.log_psi_inf - ascent));
        }
        let im = p.states.len() - 1;
        if y >= self.cells.x[im] {
            return Ok((1.0, p.profile.eval(y).0));
        }
        let i = locate(&self.cells.x, y);
        let s = p.states[i];
        let st = propagate(State { log: 0.0, ..s }, p.e_grid - self.cells.w[i], y - self.cells.x[i]);
        if st.f == 0.0 {
            return Ok((0.0, f64::NEG_INFINITY));
        }
        let g = self.dgamma[i] + self.tables.model().gamma_increment(self.cells.x[i], y);
        Ok((st.f.signum(), 0.5 * g + st.f.abs().ln() + st.log + s.log))
    }

    /// ψ_k(y) for y in [z, ∞].
    pub fn psi(&self, k: usize, y: f64) -> Result<f64> {
        let (s, l) = self.log_psi(k, y)?;
        Ok(s * l.exp())
    }

    /// Density of the quasi-stationary law ν_z with respect to dx.
    pub fn qsd_density(&self, x: f64) -> Result<f64> {
        if x < self.z {
            return Ok(0.0);
        }
        let (s, l) = self.log_psi(1, x)?;
        let g = self.tables.model().gamma_increment(self.z, x);
        Ok(s * (l - g).exp() * 2.0 / self.masses[0])
    }

    /// Tail bound Σ_{k>K} e^{−λ_k t}‖ψ_k‖²_∞ from the fitted sup-norm growth
    /// and the fitted linear lower growth of λ_k.
    pub fn truncation_bound(&self, t: f64) -> f64 {
        let kk = self.pairs.len();
        let (slope, icept) = self.sup_fit;
        let rate = t - 2.0 * slope;
        if rate <= 0.0 {
            return f64::INFINITY;
        }
        let spacing = if kk >= 2 {
            let a = (1..kk)
                .map(|j| self.pairs[j].lambda - self.pairs[j - 1].lambda)
                .fold(f64::INFINITY, f64::min);
            a.max(1e-12)
        } else {
            self.pairs[0].lambda.max(1e-12)
        };
        let next = self.pairs[kk - 1].lambda + spacing;
        (2.0 * icept - rate * next).exp() / (1.0 - (-rate * spacing).exp())
    }

    fn series<F>(&self, t: f64, term: F) -> Result<(SignedLogSum, f64)>
    where
        F: Fn(usize) -> Result<(f64, f64)>,
    {
        if !(t > 0.0) {
            return Err(domain("t", t, "must be positive"));
        }
        let mut sum = SignedLogSum::default();
        for k in 1..=self.pairs.len() {
            let (s, l) = term(k)?;
            if s != 0.0 {
                sum.add(s, l - self.pairs[k - 1].lambda * t);
            }
        }
        Ok((sum, self.truncation_bound(t)))
    }

    /// P_y(T_z > t) with its truncation estimate; the value is clipped to
    /// [0, 1] and the clipped amount reported.
    pub fn survival_probability(&self, t: f64, y: f64) -> Result<SeriesValue> {
        let (sum, bound) = self.series(t, |k| {
            let (s, l) = self.log_psi(k, y)?;
            let m = self.masses[k - 1];
            Ok((s * m.signum(), l + m.abs().ln()))
        })?;
        finish_series(sum, bound, true)
    }

    /// e^{λ₁t}P_η(T_z > t) → ψ₁(y)∫ψ₁dμ_z for η = δ_y.
    pub fn yaglom_constant(&self, y: f64) -> Result<f64> {
        Ok(self.psi(1, y)? * self.masses[0])
    }

    /// r(t, y, x), the density of X_t on {T_z > t} with respect to μ_z.
    pub fn transition_density(&self, t: f64, y: f64, x: f64) -> Result<SeriesValue> {
        let (sum, bound) = self.density_series(t, y, x)?;
        finish_series(sum, bound, false)
    }

    fn density_series(&self, t: f64, y: f64, x: f64) -> Result<(SignedLogSum, f64)> {
        self.series(t, |k| {
            let (a, la) = self.log_psi(k, y)?;
            let (b, lb) = self.log_psi(k, x)?;
            Ok((a * b, la + lb))
        })
    }

    /// ∫ r(t, y, x) dμ_z(x) from pointwise density values; equals the
    /// survival series when the expansion is resolved.
    pub fn density_integral(&self, t: f64, y: f64) -> Result<f64> {
        let mut total = 0.0;
        for ((x, w), g) in self.qx.iter().zip(&self.qw).zip(&self.qdg) {
            total += self.density_series(t, y, *x)?.0.value() * w * (-g).exp();
        }
        let g_r = self.pairs[0].profile.end().1;
        let (end, bound) = self.density_series(t, y, self.x_r)?;
        let total = total + 2.0 * end.value() * (-g_r).exp() * self.h_r;
        if bound > 0.1 * total.abs() {
            return Err(Error::TruncationDominates { value: total, bound });
        }
        Ok(total)
    }

    /// max over the nodes of |ψ_k(x) − 2λ_k∫_z^x e^{γ(y)}∫_y^∞ e^{−γ}ψ_k dξ dy|.
    pub fn eigen_integral_residual(&self, k: usize) -> Result<f64> {
        let tables = &*self.tables;
        let base = tables.panels();
        let mut x = vec![self.z];
        x.extend(base.x.iter().copied().filter(|v| *v > self.z * (1.0 + 1e-12) + 1e-14));
        let panels = Panels::new(tables.model(), x);
        let lam = self.pairs[k - 1].lambda;
        let psi = |s: f64| self.psi(k, s).unwrap_or(0.0);
        let last = panels.len() - 1;
        let (qe, qpe) = (panels.q[last], panels.qp[last]);
        let pe = psi(panels.x[last]);
        let terminal = pe / (2.0 * qe) - pe * qpe / (4.0 * qe * qe * qe);
        let h = panels.sweep(tables.model(), |_, s| psi(s), terminal)?;
        let cum = cumulative_from_bottom(&h);
        let sup = self.pairs[k - 1].log_sup.exp();
        let mut worst: f64 = 0.0;
        for (i, xv) in panels.x.iter().enumerate() {
            if *xv > tables.x_max() {
                break;
            }
            worst = worst.max((psi(*xv) - 2.0 * lam * cum[i]).abs());
        }
        Ok(worst / sup)
    }

    /// Spectrum CSV: k, lambda, psi_inf, zero_count, norm_residual.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# z: {:.16e}, closure: {:.16e}", self.z, self.x_r)?;
        writeln!(out, "k,lambda,psi_inf,zero_count,norm_residual")?;
        for p in &self.pairs {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{},{:.16e}",
                p.k, p.lambda, p.psi_inf, p.zero_count, p.norm_residual
            )?;
        }
        Ok(())
    }
}

/// A truncated eigenfunction series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    /// Estimate of the omitted terms.
    pub truncation: f64,
    /// Amount removed by clipping to [0, 1] (survival only).
    pub clipped: f64,
    /// log of the largest term against log |value|: large gaps mean cancellation.
    pub log_cancellation: f64,
}

fn finish_series(sum: SignedLogSum, bound: f64, clip: bool) -> Result<SeriesValue> {
    let value = sum.value();
    let log_cancellation = sum.log_max_term() - sum.log_abs();
    if log_cancellation > 30.0 {
        return Err(Error::Cancellation {
            log_max_term: sum.log_max_term(),
            log_value: sum.log_abs(),
        });
    }
    if bound > 0.1 * value.abs() {
        return Err(Error::TruncationDominates { value, bound });
    }
    let (v, clipped) = if clip {
        (value.clamp(0.0, 1.0), (value - value.clamp(0.0, 1.0)).abs())
    } else {
        (value, 0.0)
    };
    Ok(SeriesValue {
        value: v,
        truncation: bound,
        clipped,
        log_cancellation,
    })
}

/// Smallest K with e^{−λ_K t}‖ψ_K‖²_∞ < 1e-8, doubling up to `k_max`.
pub fn solve_for_time(tables: &PotentialTables, z: f64, t: f64, k_max: usize) -> Result<Spectrum> {
    let mut k = 4usize.min(k_max);
    let exponent = |p: &EigenPair| -p.lambda * t + 2.0 * p.log_sup;
    loop {
        let spec = solve_spectrum(tables, z, k)?;
        let last = exponent(&spec.pairs[k - 1]);
        if last < (1e-8f64).ln() {
            return Ok(spec);
        }
        // terms still growing with k: more pairs cannot close the series
        if k >= 16 && last > exponent(&spec.pairs[k / 2 - 1]) {
            return Err(Error::TermsGrowing { k, log_term: last });
        }
        if k >= k_max {
            return Err(Error::TruncationDominates {
                value: f64::NAN,
                bound: last.exp(),
            });
        }
        k = (2 * k).min(k_max);
    }
}

/// sup_x |r(t, ∞, x)/r(t, y, x) − 1| for each start y, over the spectrum's
/// nodes where r(t, y, ·) exceeds ten times the truncation bound.
pub fn ratio_uniformity(spec: &Spectrum, starts: &[f64], t: f64) -> Result<Vec<(f64, f64)>> {
    let bound = spec.truncation_bound(t);
    let xs: Vec<f64> = spec.grid().iter().copied().filter(|x| *x > spec.z).collect();
    starts
        .iter()
        .map(|&y| {
            let mut sup: f64 = 0.0;
            for &x in &xs {
                let r = spec.density_series(t, y, x)?.0.value();
                if !(r > 10.0 * bound) {
                    continue;
                }
                let ri = spec.transition_density(t, f64::INFINITY, x)?.value;
                sup = sup.max((ri / r - 1.0).abs());
            }
            Ok((y, sup))
        })
        .collect()
}

/// Density CSV: x, r for fixed (t, y).
pub fn write_density_csv<W: Write>(spec: &Spectrum, t: f64, y: f64, xs: &[f64], mut out: W) -> Result<()> {
    let io = |e: io::Error| Error::Config {
        line: 0,
        key: "out".into(),
        message: e.to_string(),
    };
    writeln!(out, "# z: {:.16e}, t: {:.16e}, y: {:.16e}", spec.z, t, y).map_err(io)?;
    writeln!(out, "x,r").map_err(io)?;
    for &x in xs {
        let r = spec.transition_density(t, y, x)?;
        writeln!(out, "{:.16e},{:.16e}", x, r.value).map_err(io)?;
    }
    Ok(())
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
    fn eigenvalues_match_the_dense_oracle() {
        let t = tables();
        let s = solve_spectrum(&t, 0.0, 5).unwrap();
        let fd = fd_reference(t.model(), 0.0, 5).unwrap();
        for k in 1..=5 {
            let rel = (s.lambda(k) / fd[k - 1] - 1.0).abs();
            assert!(rel < 1e-6, "k = {k}: {} vs {}", s.lambda(k), fd[k - 1]);
        }
    }

    #[test]
    fn pairs_are_orthonormal_with_zero_ladder() {
        let t = tables();
        let s = solve_spectrum(&t, 1.0, 4).unwrap();
        for p in s.pairs() {
            assert!(p.norm_residual < 1e-6, "{}: {}", p.k, p.norm_residual);
            assert_eq!(p.zero_count, p.k);
            assert_eq!(p.dzero_count, p.k - 1);
            assert!(p.psi_inf > 0.0);
        }
    }

    #[test]
    fn principal_level_beats_one_over_m() {
        let t = tables();
        let s = solve_spectrum(&t, 2.0, 1).unwrap();
        assert!(s.lambda(1) * t.lyapunov_m(2.0).unwrap() > 1.0);
        assert!(s.lambda(1) >= 0.5 * 16.0);
        assert!(s.qsd_density(2.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn survival_is_monotone_and_integrates_density() {
        let t = tables();
        let s = solve_for_time(&t, 0.0, 1.5, 64).unwrap();
        let a = s.survival_probability(1.5, f64::INFINITY).unwrap().value;
        let b = s.survival_probability(2.0, f64::INFINITY).unwrap().value;
        assert!(a > b && b > 0.0 && a < 1.0);
        assert_eq!(s.yaglom_constant(0.0).unwrap(), 0.0);
    }
}
