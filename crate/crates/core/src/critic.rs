//! Critic-only learning: value-function basis, saturated policy, Bellman
//! error extrapolation, least-squares critic update laws and the
//! excitation monitor.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, lambda_min, linspace, quad_form, symmetrize, tensor_grid};
use crate::model::ControlAffineModel;
use crate::scalar::{lit, Real};

/// Running cost `Q(x) + U(u)` with `Q(x) = xᵀ Q_m x` and the saturation
/// penalty `U(u) = 2 Σ_k ∫₀^{u_k} λ̄ r_k artanh(v/λ̄) dv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec<T: Real> {
    pub q: DMatrix<T>,
    /// Diagonal of the input weight.
    pub r: DVector<T>,
    pub lambda_bar: T,
}

impl<T: Real> CostSpec<T> {
    pub fn new(q: DMatrix<T>, r: DVector<T>, lambda_bar: T) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::Dimension {
                context: "state weight (columns)",
                expected: q.nrows(),
                actual: q.ncols(),
            });
        }
        if !(lambda_min(&symmetrize(&q)) > T::zero()) {
            return Err(Error::param("Q", "state weight must be positive definite"));
        }
        if r.iter().any(|&v| !(v > T::zero())) {
            return Err(Error::param("R", "input weights must be positive"));
        }
        if !(lambda_bar > T::zero()) {
            return Err(Error::param("lambdaBar", "saturation level must be positive"));
        }
        Ok(Self {
            q: symmetrize(&q),
            r,
            lambda_bar,
        })
    }

    pub fn state_cost(&self, x: &DVector<T>) -> T {
        quad_form(&self.q, x)
    }
}

/// `(1+s)ln(1+s) + (1−s)ln(1−s)` for `|s| ≤ 1`.
fn penalty_shape<T: Real>(s: T) -> T {
    let a = s.abs();
    if a < lit(1e-4) {
        // s² + s⁴/6 + s⁶/15
        let s2 = s * s;
        return s2 * (T::one() + s2 * (lit::<T>(1.0 / 6.0) + s2 * lit::<T>(1.0 / 15.0)));
    }
    let one = T::one();
    let minus = if a == one { T::zero() } else { (one - a) * (-a).ln_1p() };
    (one + a) * a.ln_1p() + minus
}

/// Closed-form saturation penalty. `|u_k| = λ̄` gives the limit
/// `2 r_k λ̄² ln 2`; `|u_k| > λ̄` is a range error.
pub fn control_penalty<T: Real>(cost: &CostSpec<T>, u: &DVector<T>) -> Result<T> {
    if u.len() != cost.r.len() {
        return Err(Error::Dimension {
            context: "penalty input",
            expected: cost.r.len(),
            actual: u.len(),
        });
    }
    let lb = cost.lambda_bar;
    let mut total = T::zero();
    for (&uk, &rk) in u.iter().zip(cost.r.iter()) {
        if !uk.is_finite() || uk.abs() > lb {
            return Err(Error::ControlRange {
                value: uk.to_f64_lossy(),
                bound: lb.to_f64_lossy(),
            });
        }
        total += rk * lb * lb * penalty_shape(uk / lb);
    }
    Ok(total)
}

/// Value-function features `σ: Rⁿ → R^L` with `σ(0) = 0`, `∇σ(0) = 0`.
pub trait Basis<T: Real>: Send + Sync + Debug {
    fn name(&self) -> String;
    fn len(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn sigma(&self, x: &DVector<T>) -> DVector<T>;
    /// `∂σ/∂x`, an `L × n` matrix.
    fn gradient(&self, x: &DVector<T>) -> DMatrix<T>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `[x₁², x₁x₂, x₂²]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Quadratic2d;

impl<T: Real> Basis<T> for Quadratic2d {
    fn name(&self) -> String {
        "quadratic2d".into()
    }

    fn len(&self) -> usize {
        3
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn sigma(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_vec(vec![x[0] * x[0], x[0] * x[1], x[1] * x[1]])
    }

    fn gradient(&self, x: &DVector<T>) -> DMatrix<T> {
        let two = lit::<T>(2.0);
        DMatrix::from_row_slice(
            3,
            2,
            &[two * x[0], T::zero(), x[1], x[0], T::zero(), two * x[1]],
        )
    }
}

/// All monomials of the given total degrees (each ≥ 2) in `n` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomials {
    n: usize,
    degrees: Vec<u32>,
    exponents: Vec<Vec<u32>>,
}

impl Monomials {
    pub fn new(n: usize, degrees: &[u32]) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("basis", "state dimension must be positive"));
        }
        if degrees.is_empty() {
            return Err(Error::param("basis", "degree set is empty"));
        }
        if let Some(d) = degrees.iter().find(|&&d| d < 2) {
            return Err(Error::param(
                "basis",
                format!("degree {d} would break σ(0) = 0 or ∇σ(0) = 0; use degrees ≥ 2"),
            ));
        }
        let mut degrees = degrees.to_vec();
        degrees.sort_unstable();
        degrees.dedup();
        let mut exponents = Vec::new();
        for &d in &degrees {
            let mut current = vec![0u32; n];
            compositions(d, 0, &mut current, &mut exponents);
        }
        Ok(Self { n, degrees, exponents })
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }
}

/// Exponent vectors of total degree `left` over positions `i..`, in
/// lexicographically decreasing order of the leading exponent.
fn compositions(left: u32, i: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if i + 1 == current.len() {
        current[i] = left;
        out.push(current.clone());
        return;
    }
    for e in (0..=left).rev() {
        current[i] = e;
        compositions(left - e, i + 1, current, out);
    }
}

fn powi<T: Real>(x: T, e: u32) -> T {
    (0..e).fold(T::one(), |acc, _| acc * x)
}

impl<T: Real> Basis<T> for Monomials {
    fn name(&self) -> String {
        let d: Vec<String> = self.degrees.iter().map(|d| d.to_string()).collect();
        format!("monomials({})", d.join(","))
    }

    fn len(&self) -> usize {
        self.exponents.len()
    }

    fn state_dim(&self) -> usize {
        self.n
    }

    fn sigma(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(
            self.exponents.len(),
            self.exponents
                .iter()
                .map(|ex| ex.iter().zip(x.iter()).fold(T::one(), |acc, (&e, &xi)| acc * powi(xi, e))),
        )
    }

    fn gradient(&self, x: &DVector<T>) -> DMatrix<T> {
        let mut g = DMatrix::zeros(self.exponents.len(), self.n);
        for (l, ex) in self.exponents.iter().enumerate() {
            for j in 0..self.n {
                if ex[j] == 0 {
                    continue;
                }
                let mut term = lit::<T>(ex[j] as f64);
                for (i, (&e, &xi)) in ex.iter().zip(x.iter()).enumerate() {
                    term *= powi(xi, if i == j { e - 1 } else { e });
                }
                g[(l, j)] = term;
            }
        }
        g
    }
}

/// Basis selection by name: `quadratic2d` or `monomials(d1,d2,...)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BasisSpec {
    Quadratic2d,
    Monomials(Vec<u32>),
}

impl BasisSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t == "quadratic2d" {
            return Ok(Self::Quadratic2d);
        }
        let inner = t
            .strip_prefix("monomials(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::Config(format!("unknown basis `{t}`")))?;
        let degrees = inner
            .split(',')
            .map(|d| d.trim().parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("basis `{t}`: {e}")))?;
        Ok(Self::Monomials(degrees))
    }

    pub fn build<T: Real>(&self, n: usize) -> Result<Box<dyn Basis<T>>> {
        match self {
            Self::Quadratic2d if n == 2 => Ok(Box::new(Quadratic2d)),
            Self::Quadratic2d => Err(Error::Config(format!(
                "basis quadratic2d needs a two-state model, got n = {n}"
            ))),
            Self::Monomials(d) => Ok(Box::new(Monomials::new(n, d)?)),
        }
    }
}

impl std::fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Quadratic2d => write!(f, "quadratic2d"),
            Self::Monomials(d) => {
                let d: Vec<String> = d.iter().map(|d| d.to_string()).collect();
                write!(f, "monomials({})", d.join(","))
            }
        }
    }
}

/// Critic weights and least-squares gain.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticState<T: Real> {
    pub wc: DVector<T>,
    pub gamma: DMatrix<T>,
}

impl<T: Real> CriticState<T> {
    pub fn new(wc: DVector<T>, gamma: DMatrix<T>) -> Result<Self> {
        if gamma.nrows() != wc.len() || gamma.ncols() != wc.len() {
            return Err(Error::Dimension {
                context: "least-squares gain",
                expected: wc.len(),
                actual: gamma.nrows(),
            });
        }
        if !(lambda_min(&symmetrize(&gamma)) > T::zero()) {
            return Err(Error::param("Gamma0", "must be positive definite"));
        }
        Ok(Self {
            wc,
            gamma: symmetrize(&gamma),
        })
    }
}

/// Update-law constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LearnerGainsDef {
    pub kc: f64,
    pub gamma_norm: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerGains<T: Real> {
    pub kc: T,
    pub gamma_norm: T,
    pub beta: T,
}

impl<T: Real> LearnerGains<T> {
    pub fn new(kc: T, gamma_norm: T, beta: T) -> Result<Self> {
        for (v, name) in [(kc, "kc"), (gamma_norm, "gammaNorm"), (beta, "beta")] {
            if !(v > T::zero()) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        Ok(Self { kc, gamma_norm, beta })
    }

    pub fn from_def(def: &LearnerGainsDef) -> Result<Self> {
        Self::new(lit(def.kc), lit(def.gamma_norm), lit(def.beta))
    }
}

/// The fixed Bellman-error extrapolation points.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationSet<T: Real> {
    pub points: Vec<DVector<T>>,
}

impl<T: Real> ExtrapolationSet<T> {
    /// Uniform tensor grid with `per_axis` points per axis, endpoints included.
    pub fn grid(lower: &[f64], upper: &[f64], per_axis: usize) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension {
                context: "extrapolation box",
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if per_axis == 0 {
            return Err(Error::param("perAxis", "must be positive"));
        }
        let axes: Vec<Vec<T>> = lower
            .iter()
            .zip(upper)
            .map(|(&l, &u)| linspace(lit::<T>(l), lit::<T>(u), per_axis))
            .collect();
        Ok(Self {
            points: tensor_grid(&axes),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Saturated policy `u = −λ̄ tanh(D̂)` with
/// `D̂ = (1/(2λ̄)) R⁻¹ g(x)ᵀ ∇σ(x)ᵀ Wc`. Every component is strictly inside
/// `(−λ̄, λ̄)`.
pub fn policy<T: Real>(
    model: &ControlAffineModel<T>,
    basis: &dyn Basis<T>,
    cost: &CostSpec<T>,
    x: &DVector<T>,
    wc: &DVector<T>,
) -> Result<DVector<T>> {
    let g = model.effectiveness(x)?;
    let grad = basis.gradient(x);
    let lb = cost.lambda_bar;
    let d = g.transpose() * (grad.transpose() * wc);
    let shrink = T::one() - lit::<T>(4.0) * T::machine_eps();
    let u = DVector::from_fn(d.len(), |k, _| {
        let dk = d[k] / (lit::<T>(2.0) * lb * cost.r[k]);
        let mut uk = -lb * dk.tanh();
        while uk.abs() >= lb {
            uk *= shrink;
        }
        uk
    });
    if let Some(k) = linalg::first_non_finite(u.as_slice()) {
        return Err(Error::NonFinite {
            component: format!("u[{k}]"),
        });
    }
    Ok(u)
}

/// One extrapolated Bellman-error sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BeSample<T: Real> {
    pub delta: T,
    pub omega: DVector<T>,
    pub rho: T,
}

/// Bellman error at `x` under the current weights:
/// `δ = Wcᵀ ω + U(û) + Q(x)` with `ω = ∇σ(x)(f(x) + g(x)û)` and
/// `ρ = 1 + γ ωᵀω`.
pub fn bellman_error<T: Real>(
    model: &ControlAffineModel<T>,
    basis: &dyn Basis<T>,
    cost: &CostSpec<T>,
    gamma_norm: T,
    x: &DVector<T>,
    wc: &DVector<T>,
) -> Result<BeSample<T>> {
    let u = policy(model, basis, cost, x, wc)?;
    let xdot = model.flow(x, &u)?;
    let omega = basis.gradient(x) * xdot;
    let delta = wc.dot(&omega) + control_penalty(cost, &u)? + cost.state_cost(x);
    let rho = T::one() + gamma_norm * omega.dot(&omega);
    Ok(BeSample { delta, omega, rho })
}

/// `(Ẇc, Γ̇)` from the extrapolated samples.
pub fn critic_derivatives<T: Real>(
    state: &CriticState<T>,
    gains: &LearnerGains<T>,
    samples: &[BeSample<T>],
) -> Result<(DVector<T>, DMatrix<T>)> {
    if samples.is_empty() {
        return Err(Error::param("samples", "at least one Bellman-error sample is required"));
    }
    let l = state.wc.len();
    if state.gamma.clone().cholesky().is_none() {
        return Err(Error::StateCorruption(format!(
            "Gamma is not positive definite (lambda_min = {:e})",
            lambda_min(&state.gamma).to_f64_lossy()
        )));
    }
    let mut drive = DVector::zeros(l);
    let mut info = DMatrix::zeros(l, l);
    for s in samples {
        drive += &s.omega * (s.delta / s.rho);
        info += &s.omega * s.omega.transpose() / (s.rho * s.rho);
    }
    let scale = gains.kc / lit::<T>(samples.len() as f64);
    let wdot = -(&state.gamma * drive) * scale;
    let gdot = &state.gamma * gains.beta - &state.gamma * info * &state.gamma * scale;
    Ok((wdot, symmetrize(&gdot)))
}

/// `λ_min((1/N) Σ ω ωᵀ/ρ²)`, clamped at zero.
pub fn pe_metric<T: Real>(samples: &[BeSample<T>]) -> T {
    let Some(first) = samples.first() else {
        return T::zero();
    };
    let l = first.omega.len();
    let info = samples
        .iter()
        .fold(DMatrix::<T>::zeros(l, l), |acc, s| acc + &s.omega * s.omega.transpose() / (s.rho * s.rho));
    let avg = info / lit::<T>(samples.len() as f64);
    lambda_min(&avg).max(T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDef;
    use proptest::prelude::*;

    fn example() -> ControlAffineModel<f64> {
        ModelDef::example_two_state().build().unwrap()
    }

    fn cost() -> CostSpec<f64> {
        CostSpec::new(DMatrix::identity(2, 2) * 5.0, DVector::from_element(1, 1.0), 3.0).unwrap()
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn policy_examples() {
        let m = example();
        let c = cost();
        assert_eq!(policy(&m, &Quadratic2d, &c, &v(&[1.0, -1.0]), &v(&[0.0, 0.0, 0.0])).unwrap()[0], 0.0);
        assert_eq!(policy(&m, &Quadratic2d, &c, &v(&[0.0, 0.0]), &v(&[0.4, 0.2, 0.8])).unwrap()[0], 0.0);
        // x = (1,1): ∇σᵀW = (2·0.4 + 0.2, 0.2 + 2·0.8) = (1.0, 1.8); g = (0, cos2+2).
        let u = policy(&m, &Quadratic2d, &c, &v(&[1.0, 1.0]), &v(&[0.4, 0.2, 0.8])).unwrap()[0];
        let d = (2.0f64.cos() + 2.0) * 1.8 / 6.0;
        assert!((u + 3.0 * d.tanh()).abs() < 1e-15);
        assert!(u.abs() < 3.0);
    }

    #[test]
    fn policy_never_reaches_bound() {
        let m = example();
        let u = policy(&m, &Quadratic2d, &cost(), &v(&[0.1, 1.0]), &v(&[0.0, 0.0, 1e6])).unwrap()[0];
        assert!(u.abs() < 3.0 && u < -2.999);
    }

    #[test]
    fn penalty_examples() {
        let c = cost();
        assert_eq!(control_penalty(&c, &v(&[0.0])).unwrap(), 0.0);
        assert!((control_penalty(&c, &v(&[3.0])).unwrap() - 18.0 * 2f64.ln()).abs() < 1e-12);
        assert!((control_penalty(&c, &v(&[-3.0])).unwrap() - 18.0 * 2f64.ln()).abs() < 1e-12);
        assert!(matches!(control_penalty(&c, &v(&[3.0001])), Err(Error::ControlRange { .. })));
        // Textbook form 2λ̄u·artanh(u/λ̄) + λ̄²ln(1 − u²/λ̄²).
        let u: f64 = 1.5;
        let direct = 2.0 * 3.0 * u * (u / 3.0).atanh() + 9.0 * (1.0 - u * u / 9.0).ln();
        assert!((control_penalty(&c, &v(&[u])).unwrap() - direct).abs() < 1e-13);
    }

    #[test]
    fn bellman_error_examples() {
        let m = example();
        let c = cost();
        let x = v(&[0.5, -0.5]);
        let s = bellman_error(&m, &Quadratic2d, &c, 0.7, &x, &v(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(s.delta, c.state_cost(&x));
        let f = m.drift(&x).unwrap();
        assert!((s.omega - Quadratic2d.gradient(&x) * f).amax() < 1e-15);
        let s0 = bellman_error(&m, &Quadratic2d, &c, 0.7, &v(&[0.0, 0.0]), &v(&[0.4, 0.2, 0.8])).unwrap();
        assert_eq!((s0.delta, s0.omega.amax(), s0.rho), (0.0, 0.0, 1.0));
    }

    #[test]
    fn bellman_error_term_by_term() {
        let (x1, x2) = (0.5f64, -0.5f64);
        let w = [0.4, 0.2, 0.8];
        let cg = (2.0 * x1).cos() + 2.0;
        let dv2 = w[1] * x1 + 2.0 * w[2] * x2;
        let dv1 = 2.0 * w[0] * x1 + w[1] * x2;
        let u = -3.0 * (cg * dv2 / 6.0).tanh();
        let f1 = -x1 + x2;
        let f2 = -x1 - 0.5 * x2 * (1.0 - cg * cg) + cg * u;
        let omega = [2.0 * x1 * f1, x2 * f1 + x1 * f2, 2.0 * x2 * f2];
        let s = u / 3.0;
        let pen = 9.0 * ((1.0 + s) * (1.0 + s).ln() + (1.0 - s) * (1.0 - s).ln());
        let delta = dv1 * f1 + dv2 * f2 + pen + 5.0 * (x1 * x1 + x2 * x2);
        let got = bellman_error(&example(), &Quadratic2d, &cost(), 0.7, &v(&[x1, x2]), &v(&w)).unwrap();
        assert!((got.delta - delta).abs() < 1e-13);
        for (g, o) in got.omega.iter().zip(omega.iter()) {
            assert!((g - o).abs() < 1e-14);
        }
        let rho = 1.0 + 0.7 * omega.iter().map(|o| o * o).sum::<f64>();
        assert!((got.rho - rho).abs() < 1e-14);
    }

    fn sample(delta: f64, omega: &[f64], rho: f64) -> BeSample<f64> {
        BeSample { delta, omega: v(omega), rho }
    }

    #[test]
    fn derivative_examples() {
        let st = CriticState::new(v(&[0.1, 0.2, 0.3]), DMatrix::identity(3, 3) * 2.0).unwrap();
        let g = LearnerGains::new(0.5, 1.0, 0.2).unwrap();
        let (wd, _) = critic_derivatives(&st, &g, &[sample(0.0, &[1.0, 2.0, 3.0], 2.0)]).unwrap();
        assert_eq!(wd, DVector::zeros(3));
        let (_, gd) = critic_derivatives(&st, &g, &[sample(1.0, &[0.0, 0.0, 0.0], 1.0)]).unwrap();
        assert_eq!(gd, &st.gamma * 0.2);

        let st = CriticState::new(v(&[0.0, 0.0, 0.0]), DMatrix::identity(3, 3)).unwrap();
        let g = LearnerGains { kc: 1.0, gamma_norm: 1.0, beta: 0.0 };
        let (wd, gd) = critic_derivatives(&st, &g, &[sample(2.0, &[1.0, 0.0, 0.0], 1.0)]).unwrap();
        assert_eq!(wd, v(&[-2.0, 0.0, 0.0]));
        let mut expected = DMatrix::zeros(3, 3);
        expected[(0, 0)] = -1.0;
        assert_eq!(gd, expected);
    }

    #[test]
    fn non_pd_gamma_is_state_corruption() {
        let st = CriticState { wc: v(&[0.0, 0.0]), gamma: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]) };
        let g = LearnerGains::new(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            critic_derivatives(&st, &g, &[sample(0.0, &[1.0, 0.0], 1.0)]),
            Err(Error::StateCorruption(_))
        ));
    }

    #[test]
    fn pe_examples() {
        let same: Vec<_> = (0..5).map(|_| sample(0.0, &[1.0, 2.0, 0.5], 1.0)).collect();
        assert!(pe_metric(&same) < 1e-14);
        let canon = vec![
            sample(0.0, &[1.0, 0.0, 0.0], 1.0),
            sample(0.0, &[0.0, 1.0, 0.0], 1.0),
            sample(0.0, &[0.0, 0.0, 1.0], 1.0),
        ];
        assert!((pe_metric(&canon) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn monomial_basis_excludes_low_degrees() {
        assert!(Monomials::new(2, &[1, 2]).is_err());
        let b = Monomials::new(2, &[2]).unwrap();
        assert_eq!(b.exponents(), &[vec![2, 0], vec![1, 1], vec![0, 2]]);
        let b = Monomials::new(3, &[2, 4]).unwrap();
        assert_eq!(<Monomials as Basis<f64>>::len(&b), 6 + 15);
        let x = DVector::<f64>::zeros(3);
        assert_eq!(b.sigma(&x).amax(), 0.0);
        assert_eq!(b.gradient(&x).amax(), 0.0);
    }

    #[test]
    fn basis_spec_parsing() {
        assert_eq!(BasisSpec::parse("quadratic2d").unwrap(), BasisSpec::Quadratic2d);
        assert_eq!(BasisSpec::parse("monomials(2, 4)").unwrap(), BasisSpec::Monomials(vec![2, 4]));
        assert!(BasisSpec::parse("cubic").is_err());
        assert_eq!(BasisSpec::Monomials(vec![2, 4]).to_string(), "monomials(2,4)");
        assert!(BasisSpec::Quadratic2d.build::<f64>(3).is_err());
    }

    #[test]
    fn extrapolation_grid_has_hundred_points() {
        let set = ExtrapolationSet::<f64>::grid(&[-1.0, -1.0], &[1.0, 1.0], 10).unwrap();
        assert_eq!(set.len(), 100);
        assert_eq!(set.points[0].as_slice(), &[-1.0, -1.0]);
        assert_eq!(set.points[99].as_slice(), &[1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn policy_is_saturated(x1 in -50.0f64..50.0, x2 in -50.0f64..50.0,
                               w0 in -1e4f64..1e4, w1 in -1e4f64..1e4, w2 in -1e4f64..1e4) {
            let u = policy(&example(), &Quadratic2d, &cost(), &v(&[x1, x2]), &v(&[w0, w1, w2])).unwrap();
            prop_assert!(u[0].abs() < 3.0);
        }

        #[test]
        fn penalty_is_positive_off_zero(u in -3.0f64..=3.0) {
            let p = control_penalty(&cost(), &v(&[u])).unwrap();
            prop_assert!(p >= 0.0);
            prop_assert!(u == 0.0 || p > 0.0);
        }

        #[test]
        fn normalized_regressor_is_bounded(o0 in -1e3f64..1e3, o1 in -1e3f64..1e3, o2 in -1e3f64..1e3, gamma in 0.01f64..10.0) {
            // ‖ω‖²/ρ² ≤ 1/(4γ) for ρ = 1 + γ‖ω‖².
            let omega = v(&[o0, o1, o2]);
            let rho = 1.0 + gamma * omega.norm_squared();
            prop_assert!(rho >= 1.0);
            let top = omega.norm_squared() / (rho * rho);
            prop_assert!(top <= 1.0 / (4.0 * gamma) * (1.0 + 1e-12));
        }

        #[test]
        fn gamma_derivative_is_symmetric(a in -2.0f64..2.0, b in -2.0f64..2.0, d in 0.0f64..3.0) {
            let st = CriticState::new(v(&[0.0, 0.0, 0.0]),
                DMatrix::from_row_slice(3, 3, &[3.0, 0.5, 0.1, 0.5, 2.0, 0.2, 0.1, 0.2, 1.0])).unwrap();
            let g = LearnerGains::new(0.3, 0.7, 0.2).unwrap();
            let samples = [sample(d, &[a, b, 1.0], 1.0 + a * a), sample(-d, &[b, 1.0, a], 2.0)];
            let (_, gd) = critic_derivatives(&st, &g, &samples).unwrap();
            prop_assert!(linalg::asymmetry(&gd) <= 1e-12);
        }
    }
}
