//! Mehrotra predictor–corrector interior-point method for [`ConvexProgram`].
//!
//! Inequalities (linear rows, finite bounds and convex quadratic constraints)
//! get slacks `s ≥ 0` and multipliers `λ ≥ 0`. Each Newton step eliminates
//! `(Δs, Δλ)` and solves the quasi-definite system
//!
//! ```text
//! [ H + Gᵀ W G + Σ wₖ aₖ aₖᵀ   Eᵀ ] [Δz]   [r₁]
//! [ E                         0  ] [Δy] = [r₂]
//! ```
//!
//! with `H = P + Σ λₖ Qₖ`, `W = Λ S⁻¹` and `aₖ = ∇fₖ(z)`. The sparse part is
//! factored with the envelope LDLᵀ; the dense rank-one terms contributed by
//! the quadratic constraints are applied through the Woodbury identity, and
//! iterative refinement removes the effect of the static regularization.
//!
//! When the method fails to converge, a phase-I program (minimize the largest
//! constraint violation) decides between `Infeasible` and `MaxIterations`.

use nalgebra::{DMatrix, DVector};

use super::program::{dot, ConvexProgram, QuadraticForm, SymSparse};
use super::skyline::{Skyline, Slot};
use super::{SolveResult, SolveStatus, SolverSettings};

struct Rows {
    /// `(start, end)` into `idx`/`val`.
    spans: Vec<(usize, usize)>,
    idx: Vec<usize>,
    val: Vec<f64>,
    rhs: Vec<f64>,
}

impl Rows {
    fn new() -> Self {
        Self { spans: Vec::new(), idx: Vec::new(), val: Vec::new(), rhs: Vec::new() }
    }

    fn push(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let start = self.idx.len();
        for (i, v) in coeffs {
            self.idx.push(i);
            self.val.push(v);
        }
        self.spans.push((start, self.idx.len()));
        self.rhs.push(rhs);
    }

    fn len(&self) -> usize {
        self.spans.len()
    }

    #[inline]
    fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = self.spans[r];
        (&self.idx[a..b], &self.val[a..b])
    }

    #[inline]
    fn dot(&self, r: usize, z: &[f64]) -> f64 {
        let (idx, val) = self.row(r);
        idx.iter().zip(val).map(|(&i, v)| v * z[i]).sum()
    }

    /// `out += Σ_r coef[r] · row_r`
    fn add_transpose(&self, coef: &[f64], out: &mut [f64]) {
        for (r, &c) in coef.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (idx, val) = self.row(r);
            for (&i, v) in idx.iter().zip(val) {
                out[i] += c * v;
            }
        }
    }
}

/// Standard form used by the iteration: all bounds folded into `G z ≤ h`,
/// fixed variables into `E z = e`.
struct StandardForm {
    n: usize,
    p: SymSparse,
    q: Vec<f64>,
    r: f64,
    eq: Rows,
    ineq: Rows,
    /// Number of leading `ineq` rows that come from program inequalities.
    program_ineqs: usize,
    quads: Vec<QuadraticForm>,
}

impl StandardForm {
    fn from_program(prog: &ConvexProgram) -> Self {
        let n = prog.num_vars;
        let mut p = prog.objective.hessian.clone();
        p.compress();
        let mut eq = Rows::new();
        for row in &prog.equalities {
            eq.push(row.coeffs.iter().copied(), row.rhs);
        }
        let mut ineq = Rows::new();
        for row in &prog.inequalities {
            ineq.push(row.coeffs.iter().copied(), row.rhs);
        }
        let program_ineqs = ineq.len();
        for i in 0..n {
            let (lo, hi) = (prog.lower[i], prog.upper[i]);
            if lo == hi {
                eq.push([(i, 1.0)], lo);
                continue;
            }
            if lo.is_finite() {
                ineq.push([(i, -1.0)], -lo);
            }
            if hi.is_finite() {
                ineq.push([(i, 1.0)], hi);
            }
        }
        let quads = prog
            .quadratic_inequalities
            .iter()
            .map(|f| {
                let mut f = f.clone();
                f.hessian.compress();
                f
            })
            .collect();
        Self { n, p, q: prog.objective.linear.clone(), r: prog.objective.constant, eq, ineq, program_ineqs, quads }
    }
}

/// KKT system with precomputed storage slots.
struct Kkt {
    sky: Skyline,
    p_slots: Vec<Slot>,
    q_slots: Vec<Vec<Slot>>,
    /// For each inequality row, slots of the lower-triangle outer-product pairs.
    g_slots: Vec<Vec<Slot>>,
    e_slots: Vec<Slot>,
    primal_diag: Vec<Slot>,
    dual_diag: Vec<Slot>,
}

impl Kkt {
    fn new(sf: &StandardForm) -> Self {
        let n = sf.n;
        let me = sf.eq.len();
        let mut pattern = Vec::new();
        pattern.extend(sf.p.entries.iter().map(|&(i, j, _)| (i, j)));
        for qf in &sf.quads {
            pattern.extend(qf.hessian.entries.iter().map(|&(i, j, _)| (i, j)));
        }
        for r in 0..sf.ineq.len() {
            let (idx, _) = sf.ineq.row(r);
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[..a] {
                    pattern.push((i, j));
                }
            }
        }
        for r in 0..me {
            let (idx, _) = sf.eq.row(r);
            pattern.extend(idx.iter().map(|&j| (n + r, j)));
        }
        let mut signs = vec![1.0; n];
        signs.extend(std::iter::repeat_n(-1.0, me));
        let sky = Skyline::new(n + me, &pattern, &signs);

        let p_slots = sf.p.entries.iter().map(|&(i, j, _)| sky.slot(i, j)).collect();
        let q_slots = sf.quads.iter().map(|qf| qf.hessian.entries.iter().map(|&(i, j, _)| sky.slot(i, j)).collect()).collect();
        let g_slots = (0..sf.ineq.len())
            .map(|r| {
                let (idx, _) = sf.ineq.row(r);
                let mut s = Vec::with_capacity(idx.len() * (idx.len() + 1) / 2);
                for (a, &i) in idx.iter().enumerate() {
                    for &j in &idx[..=a] {
                        s.push(sky.slot(i, j));
                    }
                }
                s
            })
            .collect();
        let mut e_slots = Vec::new();
        for r in 0..me {
            let (idx, _) = sf.eq.row(r);
            e_slots.extend(idx.iter().map(|&j| sky.slot(n + r, j)));
        }
        let primal_diag = (0..n).map(|i| sky.slot(i, i)).collect();
        let dual_diag = (0..me).map(|r| sky.slot(n + r, n + r)).collect();
        Self { sky, p_slots, q_slots, g_slots, e_slots, primal_diag, dual_diag }
    }

    fn assemble(&mut self, sf: &StandardForm, w_lin: &[f64], lambda_q: &[f64], reg: f64) -> usize {
        self.sky.clear();
        for (slot, &(_, _, v)) in self.p_slots.iter().zip(&sf.p.entries) {
            self.sky.add(*slot, v);
        }
        for (k, qf) in sf.quads.iter().enumerate() {
            let lk = lambda_q[k];
            for (slot, &(_, _, v)) in self.q_slots[k].iter().zip(&qf.hessian.entries) {
                self.sky.add(*slot, lk * v);
            }
        }
        for (r, slots) in self.g_slots.iter().enumerate() {
            let (idx, val) = sf.ineq.row(r);
            let w = w_lin[r];
            let mut it = slots.iter();
            for (a, &i) in idx.iter().enumerate() {
                for (b, &j) in idx[..=a].iter().enumerate() {
                    let slot = *it.next().expect("slot per pair");
                    let mut v = w * val[a] * val[b];
                    if i == j && a != b {
                        v *= 2.0;
                    }
                    self.sky.add(slot, v);
                }
            }
        }
        for &slot in &self.primal_diag {
            self.sky.add(slot, reg);
        }
        for (slot, v) in self.e_slots.iter().zip(&sf.eq.val) {
            self.sky.add(*slot, *v);
        }
        for &slot in &self.dual_diag {
            self.sky.add(slot, -reg);
        }
        self.sky.factor(reg * 1e-3)
    }
}

struct Workspace {
    /// `K₀⁻¹ [aₖ; 0]` per quadratic constraint.
    kinv_u: Vec<Vec<f64>>,
    /// `I + W Uᵀ K₀⁻¹ U`
    capacitance: Option<nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    scratch: Vec<f64>,
}

/// Iteration state.
#[derive(Clone)]
struct Iterate {
    z: Vec<f64>,
    y: Vec<f64>,
    /// Linear rows first, then quadratic constraints.
    s: Vec<f64>,
    lam: Vec<f64>,
}

struct Solver<'a> {
    sf: &'a StandardForm,
    kkt: Kkt,
    settings: SolverSettings,
    ws: Workspace,
}

const STEP_FRACTION: f64 = 0.99;

impl<'a> Solver<'a> {
    fn new(sf: &'a StandardForm, settings: SolverSettings) -> Self {
        Self { sf, kkt: Kkt::new(sf), settings, ws: Workspace { kinv_u: Vec::new(), capacitance: None, scratch: Vec::new() } }
    }

    fn mi(&self) -> usize {
        self.sf.ineq.len()
    }

    /// Exact (unregularized) KKT product, including rank-one quadratic terms.
    fn kkt_mul(&self, v: &[f64], w: &[f64], lambda_q: &[f64], grads: &[Vec<f64>], out: &mut [f64]) {
        let sf = self.sf;
        let n = sf.n;
        let me = sf.eq.len();
        out.iter_mut().for_each(|o| *o = 0.0);
        let (vz, vy) = v.split_at(n);
        let (oz, oy) = out.split_at_mut(n);
        sf.p.mul_add(vz, 1.0, oz);
        for (k, qf) in sf.quads.iter().enumerate() {
            qf.hessian.mul_add(vz, lambda_q[k], oz);
            let wk = w[self.mi() + k];
            let c = wk * dot(&grads[k], vz);
            for (o, g) in oz.iter_mut().zip(&grads[k]) {
                *o += c * g;
            }
        }
        for r in 0..sf.ineq.len() {
            let c = w[r] * sf.ineq.dot(r, vz);
            if c != 0.0 {
                let (idx, val) = sf.ineq.row(r);
                for (&i, a) in idx.iter().zip(val) {
                    oz[i] += c * a;
                }
            }
        }
        sf.eq.add_transpose(vy, oz);
        for r in 0..me {
            oy[r] = sf.eq.dot(r, vz);
        }
    }

    fn prepare_woodbury(&mut self, w: &[f64], grads: &[Vec<f64>]) {
        let n = self.sf.n;
        let dim = n + self.sf.eq.len();
        let nq = grads.len();
        self.ws.kinv_u.clear();
        for g in grads {
            let mut col = vec![0.0; dim];
            col[..n].copy_from_slice(g);
            self.kkt.sky.solve(&mut col, &mut self.ws.scratch);
            self.ws.kinv_u.push(col);
        }
        if nq == 0 {
            self.ws.capacitance = None;
            return;
        }
        let mi = self.mi();
        let mut m = DMatrix::<f64>::identity(nq, nq);
        for a in 0..nq {
            for b in 0..nq {
                m[(a, b)] += w[mi + a] * dot(&grads[a], &self.ws.kinv_u[b][..n]);
            }
        }
        self.ws.capacitance = Some(m.lu());
    }

    /// Applies `(K₀ + U W Uᵀ)⁻¹` to `rhs` in place.
    fn woodbury_solve(&mut self, rhs: &mut [f64], w: &[f64], grads: &[Vec<f64>]) {
        self.kkt.sky.solve(rhs, &mut self.ws.scratch);
        if let Some(lu) = &self.ws.capacitance {
            let n = self.sf.n;
            let mi = self.mi();
            let proj = DVector::from_iterator(grads.len(), grads.iter().enumerate().map(|(k, g)| w[mi + k] * dot(g, &rhs[..n])));
            if let Some(c) = lu.solve(&proj) {
                for (k, col) in self.ws.kinv_u.iter().enumerate() {
                    for (x, u) in rhs.iter_mut().zip(col) {
                        *x -= c[k] * u;
                    }
                }
            }
        }
    }

    fn linear_solve(&mut self, rhs: &[f64], w: &[f64], lambda_q: &[f64], grads: &[Vec<f64>]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.woodbury_solve(&mut x, w, grads);
        let mut kx = vec![0.0; rhs.len()];
        for _ in 0..self.settings.refinement_steps {
            self.kkt_mul(&x, w, lambda_q, grads, &mut kx);
            let mut r: Vec<f64> = rhs.iter().zip(&kx).map(|(b, k)| b - k).collect();
            let rnorm = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if rnorm <= 1e-14 * (1.0 + rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()))) {
                break;
            }
            self.woodbury_solve(&mut r, w, grads);
            for (xi, ri) in x.iter_mut().zip(&r) {
                *xi += ri;
            }
        }
        x
    }

    fn initial_iterate(&self, warm: Option<&[f64]>) -> Iterate {
        let sf = self.sf;
        let z = match warm {
            Some(w) if w.len() == sf.n && w.iter().all(|v| v.is_finite()) => w.to_vec(),
            _ => vec![0.0; sf.n],
        };
        let mut s = Vec::with_capacity(self.mi() + sf.quads.len());
        for r in 0..self.mi() {
            s.push((sf.ineq.rhs[r] - sf.ineq.dot(r, &z)).max(1.0));
        }
        for qf in &sf.quads {
            s.push((-qf.value(&z)).max(1.0));
        }
        let lam = vec![1.0; s.len()];
        Iterate { z, y: vec![0.0; sf.eq.len()], s, lam }
    }

    fn run(&mut self, warm: Option<&[f64]>) -> (SolveStatus, Iterate, usize) {
        let sf = self.sf;
        let n = sf.n;
        let me = sf.eq.len();
        let mi = self.mi();
        let nq = sf.quads.len();
        let m = mi + nq;
        let tol = self.settings.tol;
        let dual_scale = sf.q.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));

        let mut it = self.initial_iterate(warm);
        let mut best: Option<(f64, Iterate)> = None;
        let mut stalled = 0;
        let mut rd = vec![0.0; n];
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(nq);

        for iter in 0..self.settings.max_iterations {
            // residuals
            grads.clear();
            grads.extend(sf.quads.iter().map(|qf| qf.gradient(&it.z)));
            rd.copy_from_slice(&sf.q);
            sf.p.mul_add(&it.z, 1.0, &mut rd);
            sf.eq.add_transpose(&it.y, &mut rd);
            sf.ineq.add_transpose(&it.lam[..mi], &mut rd);
            for (k, g) in grads.iter().enumerate() {
                for (r, gi) in rd.iter_mut().zip(g) {
                    *r += it.lam[mi + k] * gi;
                }
            }
            let re: Vec<f64> = (0..me).map(|r| sf.eq.dot(r, &it.z) - sf.eq.rhs[r]).collect();
            let mut ri: Vec<f64> = (0..mi).map(|r| sf.ineq.dot(r, &it.z) + it.s[r] - sf.ineq.rhs[r]).collect();
            ri.extend(sf.quads.iter().enumerate().map(|(k, qf)| qf.value(&it.z) + it.s[mi + k]));

            let inf = |v: &[f64]| v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
            let pres = inf(&re).max(inf(&ri));
            let dres = inf(&rd);
            let mu = if m > 0 { dot(&it.s, &it.lam) / m as f64 } else { 0.0 };
            if !(pres.is_finite() && dres.is_finite() && mu.is_finite()) {
                return (SolveStatus::NumericFailure, best.map_or(it, |b| b.1), iter);
            }
            if pres <= tol && dres <= tol * dual_scale && mu <= tol {
                return (SolveStatus::Optimal, it, iter);
            }
            // near the solution the KKT system can lose precision and the
            // iteration drift away; an early exit reports the best point seen
            let merit = pres.max(dres / dual_scale).max(mu);
            if best.as_ref().is_none_or(|b| merit < b.0) {
                best = Some((merit, it.clone()));
            }
            let lam_max = inf(&it.lam);
            if lam_max > 1e12 || inf(&it.z) > 1e14 || stalled >= 8 {
                return (SolveStatus::MaxIterations, best.map_or(it, |b| b.1), iter);
            }

            let w: Vec<f64> = it.lam.iter().zip(&it.s).map(|(l, s)| l / s).collect();
            let lambda_q = &it.lam[mi..];
            self.kkt.assemble(sf, &w[..mi], lambda_q, self.settings.regularization);
            self.prepare_woodbury(&w, &grads);

            let lambda_q = lambda_q.to_vec();
            let direction = |solver: &mut Solver<'a>, rc: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
                // rhs
                let mut rhs = vec![0.0; n + me];
                for (o, r) in rhs[..n].iter_mut().zip(&rd) {
                    *o = -r;
                }
                let coef: Vec<f64> = (0..mi).map(|j| -(w[j] * ri[j] - rc[j] / it.s[j])).collect();
                sf.ineq.add_transpose(&coef, &mut rhs[..n]);
                for (k, g) in grads.iter().enumerate() {
                    let j = mi + k;
                    let c = -(w[j] * ri[j] - rc[j] / it.s[j]);
                    for (o, gi) in rhs[..n].iter_mut().zip(g) {
                        *o += c * gi;
                    }
                }
                for r in 0..me {
                    rhs[n + r] = -re[r];
                }
                let sol = solver.linear_solve(&rhs, &w, &lambda_q, &grads);
                let dz = &sol[..n];
                let mut gdz: Vec<f64> = (0..mi).map(|r| sf.ineq.dot(r, dz)).collect();
                gdz.extend(grads.iter().map(|g| dot(g, dz)));
                let dlam: Vec<f64> = (0..m).map(|j| w[j] * (gdz[j] + ri[j]) - rc[j] / it.s[j]).collect();
                let ds: Vec<f64> = (0..m).map(|j| -ri[j] - gdz[j]).collect();
                (sol, ds, dlam)
            };

            // predictor
            let rc_aff: Vec<f64> = it.s.iter().zip(&it.lam).map(|(s, l)| s * l).collect();
            let (sol_aff, ds_aff, dl_aff) = direction(self, &rc_aff);
            let alpha_aff = max_step(&it.s, &ds_aff).min(max_step(&it.lam, &dl_aff)).min(1.0);
            let (sol, ds, dl) = if m > 0 {
                let mu_aff =
                    (0..m).map(|j| (it.s[j] + alpha_aff * ds_aff[j]) * (it.lam[j] + alpha_aff * dl_aff[j])).sum::<f64>() / m as f64;
                let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
                let rc: Vec<f64> = (0..m).map(|j| it.s[j] * it.lam[j] + ds_aff[j] * dl_aff[j] - sigma * mu).collect();
                direction(self, &rc)
            } else {
                (sol_aff, ds_aff, dl_aff)
            };
            let alpha = (STEP_FRACTION * max_step(&it.s, &ds).min(max_step(&it.lam, &dl))).min(1.0);
            if alpha < 1e-8 {
                stalled += 1;
            } else {
                stalled = 0;
            }
            for (zi, d) in it.z.iter_mut().zip(&sol[..n]) {
                *zi += alpha * d;
            }
            for (yi, d) in it.y.iter_mut().zip(&sol[n..]) {
                *yi += alpha * d;
            }
            for j in 0..m {
                it.s[j] = (it.s[j] + alpha * ds[j]).max(1e-300);
                it.lam[j] = (it.lam[j] + alpha * dl[j]).max(1e-300);
            }
        }
        (SolveStatus::MaxIterations, best.map_or(it, |b| b.1), self.settings.max_iterations)
    }
}

/// Largest `α ∈ [0, ∞)` with `x + α dx ≥ 0`.
fn max_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter().zip(dx).filter(|(_, d)| **d < 0.0).map(|(v, d)| -v / d).fold(f64::INFINITY, f64::min)
}

/// Phase-I program: minimize `t` subject to every constraint relaxed by `t`, `t ≥ −1`.
fn phase_one(prog: &ConvexProgram) -> ConvexProgram {
    let n = prog.num_vars;
    let t = n;
    let mut p1 = ConvexProgram::new(n + 1);
    p1.objective.linear[t] = 1.0;
    for i in 0..n {
        p1.objective.hessian.add(i, i, 1e-8);
    }
    for row in &prog.inequalities {
        let mut c = row.coeffs.clone();
        c.push((t, -1.0));
        p1.add_inequality(c, row.rhs);
    }
    for row in &prog.equalities {
        let mut c = row.coeffs.clone();
        c.push((t, -1.0));
        p1.add_inequality(c, row.rhs);
        let mut c: Vec<(usize, f64)> = row.coeffs.iter().map(|&(i, v)| (i, -v)).collect();
        c.push((t, -1.0));
        p1.add_inequality(c, -row.rhs);
    }
    for i in 0..n {
        if prog.lower[i].is_finite() {
            p1.add_inequality(vec![(i, -1.0), (t, -1.0)], -prog.lower[i]);
        }
        if prog.upper[i].is_finite() {
            p1.add_inequality(vec![(i, 1.0), (t, -1.0)], prog.upper[i]);
        }
    }
    for qf in &prog.quadratic_inequalities {
        let mut f = QuadraticForm::zero(n + 1);
        f.hessian.entries = qf.hessian.entries.clone();
        f.hessian.dim = n + 1;
        f.linear[..n].copy_from_slice(&qf.linear);
        f.linear[t] = -1.0;
        f.constant = qf.constant;
        p1.quadratic_inequalities.push(f);
    }
    p1.lower[t] = -1.0;
    p1
}

pub(super) fn solve(prog: &ConvexProgram, warm: Option<&[f64]>, settings: &SolverSettings) -> SolveResult {
    let sf = StandardForm::from_program(prog);
    let mut solver = Solver::new(&sf, settings.clone());
    let (mut status, it, iterations) = solver.run(warm);

    if status == SolveStatus::MaxIterations && settings.detect_infeasibility {
        let p1 = phase_one(prog);
        let mut s1 = settings.clone();
        s1.detect_infeasibility = false;
        let sf1 = StandardForm::from_program(&p1);
        let mut solver1 = Solver::new(&sf1, s1);
        let (st1, it1, _) = solver1.run(None);
        if st1 == SolveStatus::Optimal && it1.z[prog.num_vars] > settings.tol {
            status = SolveStatus::Infeasible;
        }
    }

    let z = it.z;
    let violation = super::program::check_feasibility(prog, &z).map(|v| v.max()).unwrap_or(f64::INFINITY).max(0.0);
    if status == SolveStatus::Optimal && violation > settings.tol {
        status = SolveStatus::MaxIterations;
    }
    let mi = sf.ineq.len();
    let gap = dot(&it.s, &it.lam);
    SolveResult {
        status,
        objective: 0.5 * sf.p.quad(&z) + dot(&sf.q, &z) + sf.r,
        max_violation: violation,
        iterations,
        equality_duals: it.y[..prog.equalities.len()].to_vec(),
        inequality_duals: it.lam[..sf.program_ineqs].to_vec(),
        quadratic_duals: it.lam[mi..].to_vec(),
        duality_gap: gap,
        primal: z,
    }
}
