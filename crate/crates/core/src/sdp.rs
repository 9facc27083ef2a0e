//! Small dense semidefinite feasibility solver.
//!
//! Constraints are affine symmetric matrix functions
//! `F(x) = F0 + Σ_i x_i F_i` required to be negative semidefinite or
//! positive definite with a margin. Feasibility is found by a Phase-I
//! log-det barrier method on `min t s.t. G_k(x) ⪯ tI` with a box prior
//! `|x_j| ≤ B` on every variable; `G_k = F_k` for NSD constraints and
//! `G_k = εI − F_k` for PD ones, so `t ≤ 0` means every constraint holds.
//!
//! Computation is carried out in `f64` regardless of the public scalar type.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, lambda_max, lambda_min};
use crate::scalar::{lit, Real};

/// Required definiteness of a constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sense<T: Real> {
    /// `F(x) ⪯ 0`.
    NegativeSemidefinite,
    /// `F(x) ⪰ margin · I`.
    PositiveDefinite { margin: T },
}

/// `F(x) = F0 + Σ_i x_i F_i` with the required definiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrixConstraint<T: Real> {
    pub name: String,
    pub constant: DMatrix<T>,
    pub coefficients: Vec<DMatrix<T>>,
    pub sense: Sense<T>,
}

impl<T: Real> AffineMatrixConstraint<T> {
    /// Builds a constraint, symmetrizing every term.
    pub fn new(
        name: impl Into<String>,
        constant: DMatrix<T>,
        coefficients: Vec<DMatrix<T>>,
        sense: Sense<T>,
    ) -> Result<Self> {
        let d = constant.nrows();
        if !constant.is_square() {
            return Err(Error::Dimension {
                context: "constraint constant term (columns)",
                expected: d,
                actual: constant.ncols(),
            });
        }
        if let Some(bad) = coefficients.iter().find(|f| f.nrows() != d || f.ncols() != d) {
            return Err(Error::Dimension {
                context: "constraint coefficient shape",
                expected: d,
                actual: bad.nrows(),
            });
        }
        if let Sense::PositiveDefinite { margin } = sense {
            if margin < T::zero() {
                return Err(Error::param("margin", "must be non-negative"));
            }
        }
        Ok(Self {
            name: name.into(),
            constant: linalg::symmetrize(&constant),
            coefficients: coefficients.iter().map(linalg::symmetrize).collect(),
            sense,
        })
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn num_vars(&self) -> usize {
        self.coefficients.len()
    }

    /// `F(x)`.
    pub fn evaluate(&self, x: &DVector<T>) -> DMatrix<T> {
        self.coefficients
            .iter()
            .zip(x.iter())
            .fold(self.constant.clone(), |acc, (f, &xi)| acc + f * xi)
    }

    /// The relevant extreme eigenvalue of `F(x)`: largest for NSD,
    /// smallest for PD.
    pub fn extreme_eigenvalue(&self, x: &DVector<T>) -> T {
        extreme(&self.evaluate(x), self.sense)
    }

    /// Signed violation at `x`: `λ_max(F)` for NSD, `margin − λ_min(F)` for
    /// PD. Non-positive means satisfied.
    pub fn violation(&self, x: &DVector<T>) -> T {
        let e = self.extreme_eigenvalue(x);
        match self.sense {
            Sense::NegativeSemidefinite => e,
            Sense::PositiveDefinite { margin } => margin - e,
        }
    }
}

fn extreme<T: Real>(f: &DMatrix<T>, sense: Sense<T>) -> T {
    match sense {
        Sense::NegativeSemidefinite => lambda_max(f),
        Sense::PositiveDefinite { .. } => lambda_min(f),
    }
}

/// `F(x)` together with its relevant extreme eigenvalue.
pub fn eval_constraint<T: Real>(
    constraint: &AffineMatrixConstraint<T>,
    x: &DVector<T>,
) -> Result<(DMatrix<T>, T)> {
    if x.len() != constraint.num_vars() {
        return Err(Error::Dimension {
            context: "constraint variables",
            expected: constraint.num_vars(),
            actual: x.len(),
        });
    }
    let f = constraint.evaluate(x);
    let e = extreme(&f, constraint.sense);
    Ok((f, e))
}

/// Why a problem was declared infeasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfeasibilityReason {
    /// The barrier's duality bound proves the best achievable margin
    /// within the variable box is worse than the tolerance.
    DualBound,
    /// The barrier path converged without reaching the tolerance.
    MarginStagnation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Feasible,
    Infeasible(InfeasibilityReason),
    MaxIterations,
}

impl std::fmt::Display for SdpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SdpStatus::Feasible => write!(f, "Feasible"),
            SdpStatus::Infeasible(InfeasibilityReason::DualBound) => write!(f, "Infeasible (dual bound)"),
            SdpStatus::Infeasible(InfeasibilityReason::MarginStagnation) => {
                write!(f, "Infeasible (margin stagnation)")
            }
            SdpStatus::MaxIterations => write!(f, "MaxIterations"),
        }
    }
}

/// Outcome of [`solve_feasibility`].
#[derive(Debug, Clone, PartialEq)]
pub struct SdpCertificate<T: Real> {
    pub status: SdpStatus,
    /// Final iterate (best point found when not feasible).
    pub variables: DVector<T>,
    /// Per-constraint extreme eigenvalue at `variables` (max for NSD, min for PD).
    pub margins: Vec<T>,
    /// Per-constraint signed violation (non-positive means satisfied).
    pub violations: Vec<T>,
    /// Lower bound on the best achievable worst violation inside the
    /// variable box.
    pub lower_bound: f64,
    pub iterations: usize,
}

impl<T: Real> SdpCertificate<T> {
    pub fn is_feasible(&self) -> bool {
        self.status == SdpStatus::Feasible
    }

    /// Largest signed violation over all constraints.
    pub fn worst_violation(&self) -> T {
        self.violations
            .iter()
            .copied()
            .fold(lit::<T>(f64::NEG_INFINITY), |a, b| a.max(b))
    }

    pub fn to_f64(&self) -> SdpCertificate<f64> {
        SdpCertificate {
            status: self.status,
            variables: linalg::to_f64_vector(&self.variables),
            margins: self.margins.iter().map(|m| m.to_f64_lossy()).collect(),
            violations: self.violations.iter().map(|m| m.to_f64_lossy()).collect(),
            lower_bound: self.lower_bound,
            iterations: self.iterations,
        }
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpOptions {
    /// Feasibility tolerance on the signed violation.
    pub tol: f64,
    /// Box prior `|x_j| ≤ variable_bound`.
    pub variable_bound: f64,
    /// Newton-step budget.
    pub max_iterations: usize,
    /// Barrier gap (in normalized units) at which the path is considered converged.
    pub gap_tol: f64,
    /// Barrier parameter growth per outer iteration.
    pub growth: f64,
    /// When set, return as soon as a centered iterate satisfies every
    /// constraint with this much slack instead of maximizing the margin.
    pub stop_margin: Option<f64>,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            variable_bound: 1e4,
            max_iterations: 500,
            gap_tol: 1e-8,
            growth: 8.0,
            stop_margin: None,
        }
    }
}

/// Phase-I barrier block `G(x) = g0 + Σ x_i g_i`, required `⪯ tI`.
struct Block {
    g0: DMatrix<f64>,
    gi: Vec<DMatrix<f64>>,
}

impl Block {
    fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.gi
            .iter()
            .zip(x.iter())
            .fold(self.g0.clone(), |acc, (g, &xi)| acc + g * xi)
    }
}

/// Cholesky of `tI − G`; `None` when not positive definite.
fn slack_factor(block: &Block, x: &DVector<f64>, t: f64) -> Option<Cholesky<f64, Dyn>> {
    let d = block.g0.nrows();
    let s = DMatrix::identity(d, d) * t - block.eval(x);
    if !linalg::all_finite(s.as_slice()) {
        return None;
    }
    Cholesky::new(s)
}

struct Barrier<'a> {
    blocks: &'a [Block],
    bound: f64,
    nv: usize,
}

impl Barrier<'_> {
    /// `τ t − Σ log det(tI − G_k) − Σ log(B² − x_j²)`, or `None` outside
    /// the domain.
    fn value(&self, z: &DVector<f64>, tau: f64) -> Option<f64> {
        let x = z.rows(0, self.nv).into_owned();
        let t = z[self.nv];
        let mut phi = tau * t;
        for b in self.blocks {
            let chol = slack_factor(b, &x, t)?;
            phi -= 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        }
        for &xj in x.iter() {
            let s = self.bound * self.bound - xj * xj;
            if !(s > 0.0) {
                return None;
            }
            phi -= s.ln();
        }
        Some(phi)
    }

    fn grad_hess(&self, z: &DVector<f64>, tau: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let nv = self.nv;
        let nz = nv + 1;
        let x = z.rows(0, nv).into_owned();
        let t = z[nv];
        let mut g = DVector::zeros(nz);
        let mut h = DMatrix::zeros(nz, nz);
        g[nv] = tau;
        for b in self.blocks {
            let sinv = slack_factor(b, &x, t)?.inverse();
            // M_a = S⁻¹ ∂S/∂z_a with ∂S/∂x_a = −g_a and ∂S/∂t = I.
            let mut ms: Vec<DMatrix<f64>> = b.gi.iter().map(|ga| -(&sinv * ga)).collect();
            ms.push(sinv.clone());
            for a in 0..nz {
                g[a] -= ms[a].trace();
                for c in 0..=a {
                    let v = ms[a].component_mul(&ms[c].transpose()).sum();
                    h[(a, c)] += v;
                    if a != c {
                        h[(c, a)] += v;
                    }
                }
            }
        }
        for j in 0..nv {
            let (bm, bp) = (self.bound - x[j], self.bound + x[j]);
            if !(bm > 0.0 && bp > 0.0) {
                return None;
            }
            g[j] += 1.0 / bm - 1.0 / bp;
            h[(j, j)] += 1.0 / (bm * bm) + 1.0 / (bp * bp);
        }
        Some((g, h))
    }
}

fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().amax().max(1e-300);
    let mut reg = 0.0;
    for _ in 0..8 {
        let mut hr = h.clone();
        for i in 0..hr.nrows() {
            hr[(i, i)] += reg;
        }
        if let Some(ch) = Cholesky::new(hr) {
            let d = -ch.solve(g);
            if linalg::all_finite(d.as_slice()) {
                return Some(d);
            }
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}

/// Decides whether some `x` with `|x_j| ≤ variable_bound` satisfies every
/// constraint to within `tol`.
///
/// A `Feasible` verdict is always backed by a direct eigenvalue check of
/// the returned point, so it only becomes more likely as `tol` grows.
pub fn solve_feasibility<T: Real>(
    constraints: &[AffineMatrixConstraint<T>],
    num_vars: usize,
    options: &SdpOptions,
) -> Result<SdpCertificate<T>> {
    validate(constraints, num_vars, options)?;
    let cons64: Vec<AffineMatrixConstraint<f64>> = constraints.iter().map(to_f64_constraint).collect();

    // Overall normalization so the barrier gap is scale free.
    let scale = cons64
        .iter()
        .flat_map(|c| std::iter::once(&c.constant).chain(c.coefficients.iter()))
        .map(|m| m.norm())
        .chain(cons64.iter().map(|c| match c.sense {
            Sense::PositiveDefinite { margin } => margin * (c.dim() as f64).sqrt(),
            Sense::NegativeSemidefinite => 0.0,
        }))
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let blocks: Vec<Block> = cons64
        .iter()
        .map(|c| {
            let d = c.dim();
            match c.sense {
                Sense::NegativeSemidefinite => Block {
                    g0: &c.constant / scale,
                    gi: c.coefficients.iter().map(|f| f / scale).collect(),
                },
                Sense::PositiveDefinite { margin } => Block {
                    g0: (DMatrix::identity(d, d) * margin - &c.constant) / scale,
                    gi: c.coefficients.iter().map(|f| -f / scale).collect(),
                },
            }
        })
        .collect();

    let nv = num_vars;
    let bound = options.variable_bound;
    let theta = blocks.iter().map(|b| b.g0.nrows()).sum::<usize>() as f64 + 2.0 * nv as f64;
    let barrier = Barrier {
        blocks: &blocks,
        bound,
        nv,
    };
    let violations = |x: &DVector<f64>| -> Vec<f64> { cons64.iter().map(|c| c.violation(x)).collect() };
    let worst = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let x0 = DVector::<f64>::zeros(nv);
    let t0 = blocks
        .iter()
        .map(|b| lambda_max(&b.eval(&x0)))
        .fold(f64::NEG_INFINITY, f64::max);
    let t0 = if t0.is_finite() { t0 + 1.0 } else { 1.0 };
    let mut z = DVector::zeros(nv + 1);
    z[nv] = t0;

    let mut tau = 1.0;
    let mut iterations = 0usize;
    let mut lower_bound = f64::NEG_INFINITY;

    let finish = |z: &DVector<f64>, status: SdpStatus, lower_bound: f64, iterations: usize| {
        let x = z.rows(0, nv).into_owned();
        SdpCertificate {
            status,
            variables: linalg::from_f64_vector(&x),
            margins: cons64.iter().map(|c| lit::<T>(c.extreme_eigenvalue(&x))).collect(),
            violations: violations(&x).iter().map(|&m| lit::<T>(m)).collect(),
            lower_bound,
            iterations,
        }
    };

    if blocks.is_empty() {
        return Ok(finish(&z, SdpStatus::Feasible, f64::NEG_INFINITY, 0));
    }

    loop {
        // Centering.
        let mut centered = false;
        let mut stalled = false;
        let mut last_decrement = f64::INFINITY;
        loop {
            if iterations >= options.max_iterations {
                let x = z.rows(0, nv).into_owned();
                let status = if worst(&violations(&x)) <= options.tol {
                    SdpStatus::Feasible
                } else {
                    SdpStatus::MaxIterations
                };
                return Ok(finish(&z, status, lower_bound, iterations));
            }
            let Some((g, h)) = barrier.grad_hess(&z, tau) else {
                break;
            };
            let Some(dz) = newton_direction(&g, &h) else {
                break;
            };
            iterations += 1;
            let decrement = -g.dot(&dz);
            last_decrement = decrement;
            if decrement <= 1e-10 {
                centered = true;
                break;
            }
            let phi = barrier.value(&z, tau).unwrap_or(f64::INFINITY);
            let mut step = 1.0;
            let mut moved = false;
            while step > 1e-14 {
                let trial = &z + &dz * step;
                if let Some(v) = barrier.value(&trial, tau) {
                    if v <= phi - 0.25 * step * decrement {
                        z = trial;
                        moved = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                stalled = true;
                break;
            }
        }

        let t = z[nv];
        if centered {
            lower_bound = lower_bound.max((t - theta / tau) * scale);
        }
        let x = z.rows(0, nv).into_owned();
        let v = violations(&x);
        let w = worst(&v);
        log::trace!(
            "sdp: tau={tau:.3e} t={:.6e} worst={w:.6e} lb={lower_bound:.6e} centered={centered} dec={last_decrement:.2e} it={iterations}",
            t * scale
        );

        if let Some(m) = options.stop_margin {
            if w <= -m {
                return Ok(finish(&z, SdpStatus::Feasible, lower_bound, iterations));
            }
        }
        if lower_bound > options.tol {
            return Ok(finish(
                &z,
                SdpStatus::Infeasible(InfeasibilityReason::DualBound),
                lower_bound,
                iterations,
            ));
        }
        if theta / tau < options.gap_tol || (stalled && !centered) {
            let status = if w <= options.tol {
                SdpStatus::Feasible
            } else {
                SdpStatus::Infeasible(InfeasibilityReason::MarginStagnation)
            };
            return Ok(finish(&z, status, lower_bound, iterations));
        }
        tau *= options.growth;
    }
}

fn validate<T: Real>(constraints: &[AffineMatrixConstraint<T>], num_vars: usize, options: &SdpOptions) -> Result<()> {
    if let Some(c) = constraints.iter().find(|c| c.num_vars() != num_vars) {
        return Err(Error::Dimension {
            context: "constraint variable count",
            expected: num_vars,
            actual: c.num_vars(),
        });
    }
    for c in constraints {
        let finite = std::iter::once(&c.constant)
            .chain(c.coefficients.iter())
            .all(|m| linalg::all_finite(m.as_slice()));
        if !finite {
            return Err(Error::NonFinite {
                component: format!("constraint {}", c.name),
            });
        }
    }
    if !(options.tol >= 0.0) {
        return Err(Error::param("tol", "must be non-negative"));
    }
    if !(options.variable_bound > 0.0) {
        return Err(Error::param("variable_bound", "must be positive"));
    }
    if !(options.growth > 1.0) {
        return Err(Error::param("growth", "must exceed 1"));
    }
    Ok(())
}

fn to_f64_constraint<T: Real>(c: &AffineMatrixConstraint<T>) -> AffineMatrixConstraint<f64> {
    AffineMatrixConstraint {
        name: c.name.clone(),
        constant: linalg::to_f64_matrix(&c.constant),
        coefficients: c.coefficients.iter().map(linalg::to_f64_matrix).collect(),
        sense: match c.sense {
            Sense::NegativeSemidefinite => Sense::NegativeSemidefinite,
            Sense::PositiveDefinite { margin } => Sense::PositiveDefinite {
                margin: margin.to_f64_lossy(),
            },
        },
    }
}

/// Substitution of fixed values for a subset of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableRestriction<T: Real> {
    num_vars: usize,
    fixed: Vec<Option<T>>,
    free: Vec<usize>,
}

impl<T: Real> VariableRestriction<T> {
    pub fn new(num_vars: usize, pins: &[(usize, T)]) -> Result<Self> {
        let mut fixed = vec![None; num_vars];
        for &(i, v) in pins {
            if i >= num_vars {
                return Err(Error::Dimension {
                    context: "pinned variable index",
                    expected: num_vars,
                    actual: i,
                });
            }
            fixed[i] = Some(v);
        }
        let free = (0..num_vars).filter(|&i| fixed[i].is_none()).collect();
        Ok(Self { num_vars, fixed, free })
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    pub fn is_pinned(&self, i: usize) -> bool {
        self.fixed.get(i).is_some_and(|v| v.is_some())
    }

    /// The constraint in terms of the free variables only.
    pub fn restrict(&self, c: &AffineMatrixConstraint<T>) -> AffineMatrixConstraint<T> {
        let constant = self
            .fixed
            .iter()
            .zip(c.coefficients.iter())
            .filter_map(|(v, f)| v.map(|v| f * v))
            .fold(c.constant.clone(), |acc, term| acc + term);
        AffineMatrixConstraint {
            name: c.name.clone(),
            constant,
            coefficients: self.free.iter().map(|&i| c.coefficients[i].clone()).collect(),
            sense: c.sense,
        }
    }

    /// Full variable vector from a free-variable solution.
    pub fn expand(&self, free_values: &DVector<T>) -> DVector<T> {
        let mut full = DVector::zeros(self.num_vars);
        for (i, v) in self.fixed.iter().enumerate() {
            if let Some(v) = v {
                full[i] = *v;
            }
        }
        for (k, &i) in self.free.iter().enumerate() {
            full[i] = free_values[k];
        }
        full
    }
}

/// Writes one CSV file per constraint into `dir`, named after the
/// constraint. Each row is a term label (`const`, the variable index, or
/// `value` for the matrix evaluated at `x`) followed by the matrix entries in
/// row-major order.
pub fn write_constraints_csv<T: Real>(
    dir: &Path,
    constraints: &[AffineMatrixConstraint<T>],
    x: Option<&DVector<T>>,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(constraints.len());
    for c in constraints {
        let file: String = c
            .name
            .chars()
            .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '_' })
            .collect();
        let path = dir.join(format!("{file}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let d = c.dim();
        let mut header = vec!["term".to_string()];
        header.extend((0..d).flat_map(|i| (0..d).map(move |j| format!("m{i}_{j}"))));
        w.write_record(&header)?;
        let mut terms: Vec<(String, DMatrix<T>)> = vec![("const".into(), c.constant.clone())];
        terms.extend(c.coefficients.iter().enumerate().map(|(i, f)| (i.to_string(), f.clone())));
        if let Some(x) = x {
            terms.push(("value".into(), c.evaluate(x)));
        }
        for (term, m) in terms {
            let mut row = vec![term];
            row.extend((0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|ij| m[ij].to_f64_lossy().to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
