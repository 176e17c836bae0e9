use nalgebra::{DMatrix, DVector};
use prosocial_core::convex::{check_feasibility, solve, ConvexProgram, QuadraticForm, SolveStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(rng: &mut ChaCha8Rng, n: usize, min_eig: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    m.transpose() * m + DMatrix::identity(n, n) * min_eig
}

fn objective_from_dense(p: &DMatrix<f64>, q: &DVector<f64>) -> QuadraticForm {
    let n = q.len();
    let mut f = QuadraticForm::zero(n);
    for i in 0..n {
        for j in 0..=i {
            f.hessian.add(i, j, p[(i, j)]);
        }
        f.linear[i] = q[i];
    }
    f
}

/// Projected Gauss–Seidel on a box QP; converges for SPD `p`.
fn coordinate_descent(p: &DMatrix<f64>, q: &DVector<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let n = q.len();
    let mut z = DVector::zeros(n);
    for i in 0..n {
        z[i] = 0.0f64.clamp(lo[i], hi[i]);
    }
    for _ in 0..20_000 {
        let mut change = 0.0f64;
        for i in 0..n {
            let g = (p.row(i) * &z)[0] + q[i];
            let zi = (z[i] - g / p[(i, i)]).clamp(lo[i], hi[i]);
            change = change.max((zi - z[i]).abs());
            z[i] = zi;
        }
        if change < 1e-14 {
            break;
        }
    }
    z
}

#[test]
fn box_qp_matches_coordinate_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..10 {
        let n = 30;
        let p = random_spd(&mut rng, n, 0.5);
        let q = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..0.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.1..1.5)).collect();
        let mut prog = ConvexProgram::new(n);
        prog.objective = objective_from_dense(&p, &q);
        for i in 0..n {
            prog.set_bounds(i, lo[i], hi[i]);
        }
        let res = solve(&prog, None, 1e-8).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal, "case {case}");
        let z = coordinate_descent(&p, &q, &lo, &hi);
        let oracle = 0.5 * (z.transpose() * &p * &z)[0] + q.dot(&z);
        let rel = (res.objective - oracle).abs() / oracle.abs().max(1.0);
        assert!(rel < 1e-4, "case {case}: {} vs {oracle}", res.objective);
    }
}

/// Enumerates active sets of `min ½zᵀPz + qᵀz s.t. Gz ≤ h` and returns the
/// best KKT point.
fn active_set_oracle(p: &DMatrix<f64>, q: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> Option<f64> {
    let (n, m) = (q.len(), h.len());
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
        if active.len() > n {
            continue;
        }
        let k = active.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(p);
        for (r, &i) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = g[(i, c)];
                kkt[(c, n + r)] = g[(i, c)];
            }
            rhs[n + r] = h[i];
        }
        for c in 0..n {
            rhs[c] = -q[c];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let z = sol.rows(0, n);
        let feasible = (0..m).all(|i| (g.row(i) * z)[0] <= h[i] + 1e-9);
        let dual_ok = (0..k).all(|r| sol[n + r] >= -1e-9);
        if feasible && dual_ok {
            let obj = 0.5 * (z.transpose() * p * z)[0] + q.dot(&z);
            best = Some(best.map_or(obj, |b: f64| b.min(obj)));
        }
    }
    best
}

#[test]
fn small_programs_match_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let n = rng.random_range(2..=4);
        let m = rng.random_range(1..=6);
        let p = random_spd(&mut rng, n, 0.1);
        let q = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let g = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        // feasible by construction around a random interior point
        let z0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let h = &g * &z0 + DVector::from_fn(m, |_, _| rng.random_range(0.05..1.0));
        let mut prog = ConvexProgram::new(n);
        prog.objective = objective_from_dense(&p, &q);
        for i in 0..m {
            prog.add_inequality((0..n).map(|c| (c, g[(i, c)])).collect(), h[i]);
        }
        let res = solve(&prog, None, 1e-8).unwrap();
        assert!(res.is_optimal(), "case {case}: {:?}", res.status);
        let oracle = active_set_oracle(&p, &q, &g, &h).expect("oracle finds a KKT point");
        let rel = (res.objective - oracle).abs() / oracle.abs().max(1.0);
        assert!(rel < 1e-4, "case {case}: {} vs {oracle}", res.objective);
        assert!(check_feasibility(&prog, &res.primal).unwrap().max() <= 1e-6);
    }
}

#[test]
fn quadratic_constraint_is_enforced_natively() {
    // min −x − y  s.t.  (x − 1)² + 4y² ≤ 1: optimum on the ellipse boundary
    let mut prog = ConvexProgram::new(2);
    prog.objective.linear = vec![-1.0, -1.0];
    let mut c = QuadraticForm::zero(2);
    c.add_diag_square(0, 1.0, 1.0);
    c.add_diag_square(1, 0.0, 4.0);
    c.constant -= 1.0;
    prog.quadratic_inequalities.push(c);
    let res = solve(&prog, None, 1e-8).unwrap();
    assert!(res.is_optimal(), "{res:?}");
    // Lagrange: (1, 1) = λ (2(x−1), 8y) with the constraint tight
    let (x, y) = (1.0 + 2.0 / 5f64.sqrt(), 0.5 / 5f64.sqrt());
    assert!((res.primal[0] - x).abs() < 1e-6 && (res.primal[1] - y).abs() < 1e-6, "{:?}", res.primal);
    assert!(res.duality_gap < 1e-6);
}
