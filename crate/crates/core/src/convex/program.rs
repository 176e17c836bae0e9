use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Symmetric sparse matrix stored as lower-triangle triplets `(row ≥ col)`.
///
/// Duplicate entries are summed; an off-diagonal triplet stands for both
/// mirrored positions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SymSparse {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SymSparse {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            self.entries.push((r, c, v));
        }
    }

    /// Adds `scale · wᵀw` where `w` is a sparse row.
    pub fn add_outer(&mut self, row: &[(usize, f64)], scale: f64) {
        for (a, &(i, vi)) in row.iter().enumerate() {
            for (b, &(j, vj)) in row[..=a].iter().enumerate() {
                let v = scale * vi * vj;
                // repeated indices in `row` land on the diagonal twice
                if i == j && a != b {
                    self.add(i, j, 2.0 * v);
                } else {
                    self.add(i, j, v);
                }
            }
        }
    }

    /// Sorts and merges duplicates.
    pub fn compress(&mut self) {
        self.entries.sort_by_key(|e| (e.0, e.1));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for &(i, j, v) in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => out.push((i, j, v)),
            }
        }
        out.retain(|e| e.2 != 0.0);
        self.entries = out;
    }

    /// `y += scale · M x`
    pub fn mul_add(&self, x: &[f64], scale: f64, y: &mut [f64]) {
        for &(i, j, v) in &self.entries {
            y[i] += scale * v * x[j];
            if i != j {
                y[j] += scale * v * x[i];
            }
        }
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, j, v)| if i == j { v * x[i] * x[i] } else { 2.0 * v * x[i] * x[j] }).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim == 0 {
            return 0.0;
        }
        SymmetricEigen::new(self.to_dense()).eigenvalues.min()
    }
}

/// `½ zᵀ H z + qᵀ z + r`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    pub hessian: SymSparse,
    pub linear: Vec<f64>,
    pub constant: f64,
}

impl QuadraticForm {
    pub fn zero(dim: usize) -> Self {
        Self { hessian: SymSparse::new(dim), linear: vec![0.0; dim], constant: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// Adds `weight · (wᵀz + offset)²` for a sparse row `w`.
    pub fn add_square(&mut self, row: &[(usize, f64)], offset: f64, weight: f64) {
        if weight == 0.0 {
            return;
        }
        self.hessian.add_outer(row, 2.0 * weight);
        for &(i, v) in row {
            self.linear[i] += 2.0 * weight * offset * v;
        }
        self.constant += weight * offset * offset;
    }

    /// Adds `weight · (z_i − target)²`.
    pub fn add_diag_square(&mut self, i: usize, target: f64, weight: f64) {
        self.add_square(&[(i, 1.0)], -target, weight);
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        0.5 * self.hessian.quad(z) + dot(&self.linear, z) + self.constant
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut g = self.linear.clone();
        self.hessian.mul_add(z, 1.0, &mut g);
        g
    }
}

/// Sparse linear row `Σ coeffs · z` compared against `rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, v)| v * z[i]).sum()
    }

    /// `row · z − rhs`
    pub fn residual(&self, z: &[f64]) -> f64 {
        self.eval(z) - self.rhs
    }
}

/// Convex program
///
/// ```text
/// minimize    ½ zᵀ P z + qᵀ z + r
/// subject to  E z = e                   (equalities)
///             G z ≤ h                   (inequalities)
///             ½ zᵀ Qₖ z + qₖᵀ z + rₖ ≤ 0 (quadratic inequalities, Qₖ ⪰ 0)
///             lower ≤ z ≤ upper
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexProgram {
    pub num_vars: usize,
    pub objective: QuadraticForm,
    pub equalities: Vec<LinearRow>,
    pub inequalities: Vec<LinearRow>,
    pub quadratic_inequalities: Vec<QuadraticForm>,
    #[serde(with = "extended_reals")]
    pub lower: Vec<f64>,
    #[serde(with = "extended_reals")]
    pub upper: Vec<f64>,
}

/// JSON has no infinities; unbounded entries are written as `"inf"`/`"-inf"`.
mod extended_reals {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let reprs: Vec<Repr> = v
            .iter()
            .map(|&x| match x {
                f64::INFINITY => Repr::Named("inf".into()),
                f64::NEG_INFINITY => Repr::Named("-inf".into()),
                x => Repr::Finite(x),
            })
            .collect();
        reprs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?
            .into_iter()
            .map(|r| match r {
                Repr::Finite(x) => Ok(x),
                Repr::Named(s) if s == "inf" => Ok(f64::INFINITY),
                Repr::Named(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
                Repr::Named(s) => Err(serde::de::Error::custom(format!("bad bound {s:?}"))),
            })
            .collect()
    }
}

/// Tolerance on the smallest eigenvalue for the PSD checks in [`ConvexProgram::validate`].
pub const PSD_TOLERANCE: f64 = 1e-8;

impl ConvexProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: QuadraticForm::zero(num_vars),
            equalities: Vec::new(),
            inequalities: Vec::new(),
            quadratic_inequalities: Vec::new(),
            lower: vec![f64::NEG_INFINITY; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn add_equality(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.equalities.push(LinearRow::new(coeffs, rhs));
    }

    /// Adds `coeffs · z ≤ rhs`.
    pub fn add_inequality(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.inequalities.push(LinearRow::new(coeffs, rhs));
    }

    pub fn set_bounds(&mut self, i: usize, lower: f64, upper: f64) {
        self.lower[i] = lower;
        self.upper[i] = upper;
    }

    pub fn objective_value(&self, z: &[f64]) -> f64 {
        self.objective.value(z)
    }

    /// Dimension checks only; cheap enough to run before every solve.
    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.num_vars;
        let in_range = |row: &LinearRow| row.coeffs.iter().all(|&(i, v)| i < n && v.is_finite()) && row.rhs.is_finite();
        let form_ok = |f: &QuadraticForm| {
            f.linear.len() == n
                && f.hessian.dim == n
                && f.hessian.entries.iter().all(|&(i, j, v)| i < n && j < n && v.is_finite())
                && f.linear.iter().all(|v| v.is_finite())
                && f.constant.is_finite()
        };
        if !form_ok(&self.objective) {
            return Err(Error::Dimension("objective does not match variable count".into()));
        }
        if !self.quadratic_inequalities.iter().all(form_ok) {
            return Err(Error::Dimension("quadratic constraint does not match variable count".into()));
        }
        if !self.equalities.iter().all(in_range) || !self.inequalities.iter().all(in_range) {
            return Err(Error::Dimension("linear row references a missing variable".into()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Dimension("bounds do not match variable count".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
            return Err(Error::Dimension("inconsistent variable bounds".into()));
        }
        Ok(())
    }

    /// Full invariant check, including PSD-ness of every quadratic form.
    pub fn validate(&self) -> Result<()> {
        self.check_dimensions()?;
        let check_psd = |name: &str, m: &SymSparse| {
            let mut m = m.clone();
            m.compress();
            let ev = m.min_eigenvalue();
            if ev < -PSD_TOLERANCE {
                Err(Error::NotConvex(format!("{name}: smallest eigenvalue {ev:e}")))
            } else {
                Ok(())
            }
        };
        check_psd("objective", &self.objective.hessian)?;
        for (k, q) in self.quadratic_inequalities.iter().enumerate() {
            check_psd(&format!("quadratic constraint {k}"), &q.hessian)?;
        }
        Ok(())
    }

    /// Pretty-printed JSON dump for offline inspection.
    pub fn to_debug_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn from_debug_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Io(e.to_string()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest signed violation per constraint class. Values `≤ 0` mean satisfied;
/// for equalities the absolute residual is reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violations {
    pub equality: f64,
    pub inequality: f64,
    pub quadratic: f64,
    pub bounds: f64,
}

impl Violations {
    pub fn max(&self) -> f64 {
        self.equality.max(self.inequality).max(self.quadratic).max(self.bounds)
    }
}

pub fn check_feasibility(program: &ConvexProgram, point: &[f64]) -> Result<Violations> {
    if point.len() != program.num_vars {
        return Err(Error::Dimension(format!("point has {} entries, program has {} variables", point.len(), program.num_vars)));
    }
    let fold = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    let equality = program.equalities.iter().map(|r| r.residual(point).abs()).fold(0.0, f64::max);
    let inequality = fold(&mut program.inequalities.iter().map(|r| r.residual(point)));
    let quadratic = fold(&mut program.quadratic_inequalities.iter().map(|q| q.value(point)));
    let bounds = fold(&mut point.iter().zip(program.lower.iter().zip(&program.upper)).map(|(z, (l, u))| (l - z).max(z - u)));
    Ok(Violations { equality, inequality, quadratic, bounds })
}
