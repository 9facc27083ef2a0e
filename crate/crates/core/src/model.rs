//! Control-affine plant models `ẋ = f(x) + g(x)u`, `y = Cx`, together with
//! element-wise Jacobian bounds on an axis-aligned operating box and the
//! shifted dynamics `f̄(x) = f(x) − M_f1 x`, `ḡ_u(x, u) = g(x)u − (M_g1 u) x`.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, first_non_finite, linspace, tensor_grid};
use crate::scalar::{lit, Real};

/// The nonlinear part of a control-affine system.
///
/// Jacobians are optional; when absent, central finite differences are used.
pub trait Dynamics<T: Real>: Send + Sync + Debug {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;

    /// Drift `f(x)`.
    fn drift(&self, x: &DVector<T>) -> DVector<T>;

    /// Control effectiveness `g(x)`, an `n × m` matrix.
    fn effectiveness(&self, x: &DVector<T>) -> DMatrix<T>;

    /// `∂f/∂x`, when known in closed form.
    fn drift_jacobian(&self, _x: &DVector<T>) -> Option<DMatrix<T>> {
        None
    }

    /// `∂g_k/∂x` for every input channel `k`, when known in closed form.
    fn effectiveness_jacobian(&self, _x: &DVector<T>) -> Option<Vec<DMatrix<T>>> {
        None
    }

    /// Whether `f` and `g` can be evaluated at `x`.
    fn is_evaluable(&self, _x: &DVector<T>) -> bool {
        true
    }
}

/// The two-state benchmark plant
///
/// ```text
/// f(x) = [ -x1 + x2 ; -x1 - x2 (1 - (cos 2x1 + 2)^2) / 2 ]
/// g(x) = [ 0 ; cos 2x1 + 2 ]
/// ```
#[derive(Debug, Clone, Copy, Default)]
pub struct ExampleTwoState;

impl<T: Real> Dynamics<T> for ExampleTwoState {
    fn name(&self) -> &str {
        "example2state"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        let (x1, x2) = (x[0], x[1]);
        let c = (x1 + x1).cos() + lit(2.0);
        DVector::from_vec(vec![
            -x1 + x2,
            -x1 - lit::<T>(0.5) * x2 * (T::one() - c * c),
        ])
    }

    fn effectiveness(&self, x: &DVector<T>) -> DMatrix<T> {
        let c = (x[0] + x[0]).cos() + lit(2.0);
        DMatrix::from_column_slice(2, 1, &[T::zero(), c])
    }

    fn drift_jacobian(&self, x: &DVector<T>) -> Option<DMatrix<T>> {
        let (x1, x2) = (x[0], x[1]);
        let c = (x1 + x1).cos() + lit(2.0);
        let s = (x1 + x1).sin();
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[
                -T::one(),
                T::one(),
                -T::one() - lit::<T>(2.0) * x2 * c * s,
                -lit::<T>(0.5) * (T::one() - c * c),
            ],
        ))
    }

    fn effectiveness_jacobian(&self, x: &DVector<T>) -> Option<Vec<DMatrix<T>>> {
        let s = (x[0] + x[0]).sin();
        Some(vec![DMatrix::from_row_slice(
            2,
            2,
            &[T::zero(), T::zero(), -lit::<T>(2.0) * s, T::zero()],
        )])
    }
}

/// Linear plant `ẋ = Ax + Bu`.
#[derive(Debug, Clone)]
pub struct LinearDynamics<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
}

impl<T: Real> LinearDynamics<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension {
                context: "linear dynamics A (columns)",
                expected: a.nrows(),
                actual: a.ncols(),
            });
        }
        if b.nrows() != a.nrows() {
            return Err(Error::Dimension {
                context: "linear dynamics B (rows)",
                expected: a.nrows(),
                actual: b.nrows(),
            });
        }
        Ok(Self { a, b })
    }
}

impl<T: Real> Dynamics<T> for LinearDynamics<T> {
    fn name(&self) -> &str {
        "linear"
    }

    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn drift(&self, x: &DVector<T>) -> DVector<T> {
        &self.a * x
    }

    fn effectiveness(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.b.clone()
    }

    fn drift_jacobian(&self, _x: &DVector<T>) -> Option<DMatrix<T>> {
        Some(self.a.clone())
    }

    fn effectiveness_jacobian(&self, _x: &DVector<T>) -> Option<Vec<DMatrix<T>>> {
        let n = self.a.nrows();
        Some(vec![DMatrix::zeros(n, n); self.b.ncols()])
    }
}

/// Axis-aligned compact operating set.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingBox<T: Real> {
    pub lower: DVector<T>,
    pub upper: DVector<T>,
}

impl<T: Real> OperatingBox<T> {
    pub fn new(lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                context: "operating box",
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(Error::param("box", "every lower limit must be below its upper limit"));
        }
        Ok(Self { lower, upper })
    }

    /// The box `[-half, half]^n`.
    pub fn symmetric(n: usize, half: T) -> Self {
        Self {
            lower: DVector::from_element(n, -half),
            upper: DVector::from_element(n, half),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn width(&self) -> DVector<T> {
        &self.upper - &self.lower
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<T> {
        DVector::from_fn(self.dim(), |i, _| {
            let s: f64 = rng.gen();
            self.lower[i] + (self.upper[i] - self.lower[i]) * lit::<T>(s)
        })
    }
}

/// Element-wise bounds on `∂f/∂x` and on `∂g_k/∂x` for each input `k`.
///
/// The three-index arrays `M_g1`, `M_g2` are stored as `m` stacked `n × n`
/// slabs: `mg1[k][(i, j)]` bounds `∂g_{ik}/∂x_j` from below.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBounds<T: Real> {
    pub mf1: DMatrix<T>,
    pub mf2: DMatrix<T>,
    pub mg1: Vec<DMatrix<T>>,
    pub mg2: Vec<DMatrix<T>>,
}

impl<T: Real> JacobianBounds<T> {
    pub fn new(
        mf1: DMatrix<T>,
        mf2: DMatrix<T>,
        mg1: Vec<DMatrix<T>>,
        mg2: Vec<DMatrix<T>>,
    ) -> Result<Self> {
        let b = Self { mf1, mf2, mg1, mg2 };
        b.validate()?;
        Ok(b)
    }

    pub fn state_dim(&self) -> usize {
        self.mf1.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.mg1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mf1.nrows();
        let square = |m: &DMatrix<T>| m.nrows() == n && m.ncols() == n;
        if !square(&self.mf1) || !square(&self.mf2) {
            return Err(Error::Dimension {
                context: "drift Jacobian bounds",
                expected: n,
                actual: self.mf2.nrows(),
            });
        }
        if self.mg1.len() != self.mg2.len() {
            return Err(Error::Dimension {
                context: "effectiveness Jacobian bound slabs",
                expected: self.mg1.len(),
                actual: self.mg2.len(),
            });
        }
        if !self.mg1.iter().chain(self.mg2.iter()).all(square) {
            return Err(Error::Dimension {
                context: "effectiveness Jacobian bound slab shape",
                expected: n,
                actual: self.mg1.first().map_or(0, |m| m.nrows()),
            });
        }
        let ordered = |lo: &DMatrix<T>, hi: &DMatrix<T>| lo.iter().zip(hi.iter()).all(|(a, b)| a <= b);
        if !ordered(&self.mf1, &self.mf2)
            || !self.mg1.iter().zip(self.mg2.iter()).all(|(a, b)| ordered(a, b))
        {
            return Err(Error::param("bounds", "lower bounds must not exceed upper bounds"));
        }
        Ok(())
    }

    /// The contraction `Σ_k (M)_k u_k` of a stack of slabs with an input.
    pub fn contract(slabs: &[DMatrix<T>], u: &DVector<T>) -> DMatrix<T> {
        let n = slabs.first().map_or(0, |m| m.nrows());
        slabs
            .iter()
            .zip(u.iter())
            .fold(DMatrix::zeros(n, n), |acc, (m, &uk)| acc + m * uk)
    }

    /// `M_ug1 = M_g1 · u`.
    pub fn mug1(&self, u: &DVector<T>) -> DMatrix<T> {
        Self::contract(&self.mg1, u)
    }

    /// `M_ug2 = M_g2 · u`.
    pub fn mug2(&self, u: &DVector<T>) -> DMatrix<T> {
        Self::contract(&self.mg2, u)
    }

    /// Sector width of the shifted drift, `M_f2 − M_f1`.
    pub fn drift_width(&self) -> DMatrix<T> {
        &self.mf2 - &self.mf1
    }

    /// Per-channel sector widths of the shifted effectiveness, `M_g2 − M_g1`.
    pub fn effectiveness_width(&self) -> Vec<DMatrix<T>> {
        self.mg2
            .iter()
            .zip(self.mg1.iter())
            .map(|(hi, lo)| hi - lo)
            .collect()
    }

    /// `(M_g2 − M_g1) · u`, the upper sector matrix of `ḡ_u` (lower is zero).
    pub fn effectiveness_width_at(&self, u: &DVector<T>) -> DMatrix<T> {
        Self::contract(&self.effectiveness_width(), u)
    }
}

/// `f̄(x)` and `ḡ_u(x, u)` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedEvaluation<T: Real> {
    pub fbar: DVector<T>,
    pub gbar: DVector<T>,
}

/// A control-affine plant with its output map, operating box and bounds.
#[derive(Debug, Clone)]
pub struct ControlAffineModel<T: Real> {
    dynamics: Arc<dyn Dynamics<T>>,
    c: DMatrix<T>,
    bbox: OperatingBox<T>,
    bounds: JacobianBounds<T>,
}

impl<T: Real> ControlAffineModel<T> {
    pub fn new(
        dynamics: Arc<dyn Dynamics<T>>,
        c: DMatrix<T>,
        bbox: OperatingBox<T>,
        bounds: JacobianBounds<T>,
    ) -> Result<Self> {
        let n = dynamics.state_dim();
        let m = dynamics.input_dim();
        if c.ncols() != n {
            return Err(Error::Dimension {
                context: "output matrix C (columns)",
                expected: n,
                actual: c.ncols(),
            });
        }
        if bbox.dim() != n {
            return Err(Error::Dimension {
                context: "operating box",
                expected: n,
                actual: bbox.dim(),
            });
        }
        bounds.validate()?;
        if bounds.state_dim() != n || bounds.input_dim() != m {
            return Err(Error::Dimension {
                context: "Jacobian bounds vs. dynamics",
                expected: n,
                actual: bounds.state_dim(),
            });
        }
        Ok(Self {
            dynamics,
            c,
            bbox,
            bounds,
        })
    }

    /// Builds the model with bounds computed by [`derive_bounds`].
    pub fn with_derived_bounds(
        dynamics: Arc<dyn Dynamics<T>>,
        c: DMatrix<T>,
        bbox: OperatingBox<T>,
        options: &BoundsOptions,
    ) -> Result<Self> {
        let bounds = derive_bounds(dynamics.as_ref(), &bbox, options)?;
        Self::new(dynamics, c, bbox, bounds)
    }

    /// Returns a copy using different bounds (for ablations and tests).
    pub fn with_bounds(&self, bounds: JacobianBounds<T>) -> Result<Self> {
        Self::new(self.dynamics.clone(), self.c.clone(), self.bbox.clone(), bounds)
    }

    pub fn n(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn m(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn q(&self) -> usize {
        self.c.nrows()
    }

    pub fn dynamics(&self) -> &dyn Dynamics<T> {
        self.dynamics.as_ref()
    }

    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }

    pub fn operating_box(&self) -> &OperatingBox<T> {
        &self.bbox
    }

    pub fn bounds(&self) -> &JacobianBounds<T> {
        &self.bounds
    }

    pub fn output(&self, x: &DVector<T>) -> DVector<T> {
        &self.c * x
    }

    fn check_state(&self, x: &DVector<T>, what: &'static str) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::Dimension {
                context: what,
                expected: self.n(),
                actual: x.len(),
            });
        }
        if !self.dynamics.is_evaluable(x) {
            return Err(Error::Domain {
                what: format!("{} at {what}", self.dynamics.name()),
            });
        }
        Ok(())
    }

    fn check_input(&self, u: &DVector<T>) -> Result<()> {
        if u.len() != self.m() {
            return Err(Error::Dimension {
                context: "input u",
                expected: self.m(),
                actual: u.len(),
            });
        }
        if let Some(k) = first_non_finite(u.as_slice()) {
            return Err(Error::NonFinite {
                component: format!("u[{k}]"),
            });
        }
        Ok(())
    }

    /// Drift `f(x)` with finiteness checking.
    pub fn drift(&self, x: &DVector<T>) -> Result<DVector<T>> {
        self.check_state(x, "state x")?;
        let f = self.dynamics.drift(x);
        if let Some(i) = first_non_finite(f.as_slice()) {
            return Err(Error::NonFinite {
                component: format!("f(x)[{i}]"),
            });
        }
        Ok(f)
    }

    /// Control effectiveness `g(x)` with finiteness checking.
    pub fn effectiveness(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        self.check_state(x, "state x")?;
        let g = self.dynamics.effectiveness(x);
        if g.nrows() != self.n() || g.ncols() != self.m() {
            return Err(Error::Dimension {
                context: "g(x) shape",
                expected: self.n() * self.m(),
                actual: g.len(),
            });
        }
        if let Some(idx) = first_non_finite(g.as_slice()) {
            let (i, k) = (idx % self.n(), idx / self.n());
            return Err(Error::NonFinite {
                component: format!("g(x)[{i},{k}]"),
            });
        }
        Ok(g)
    }

    /// `f(x) + g(x)u` without the out-of-box warning; used by integrators.
    pub(crate) fn flow(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        self.check_input(u)?;
        let f = self.drift(x)?;
        let g = self.effectiveness(x)?;
        Ok(f + g * u)
    }

    /// `f(x) + g(x)u`. Points outside the operating box are evaluated but
    /// logged, since the Jacobian bounds only hold inside it.
    pub fn eval_dynamics(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        self.warn_outside(x);
        self.flow(x, u)
    }

    /// `f̄(x) = f(x) − M_f1 x`.
    pub fn fbar(&self, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(self.drift(x)? - &self.bounds.mf1 * x)
    }

    /// `ḡ_u(x, u) = Σ_k g_k(x) u_k − (M_g1 u) x`.
    pub fn gbar(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        self.check_input(u)?;
        let g = self.effectiveness(x)?;
        Ok(g * u - self.bounds.mug1(u) * x)
    }

    pub fn eval_shifted(&self, x: &DVector<T>, u: &DVector<T>) -> Result<ShiftedEvaluation<T>> {
        self.warn_outside(x);
        Ok(ShiftedEvaluation {
            fbar: self.fbar(x)?,
            gbar: self.gbar(x, u)?,
        })
    }

    fn warn_outside(&self, x: &DVector<T>) {
        if x.len() == self.n() && !self.bbox.contains(x) {
            log::warn!(
                "evaluating {} outside its operating box at {:?}",
                self.dynamics.name(),
                x.as_slice()
            );
        }
    }

    /// Jacobian of `f`, analytic when available.
    pub fn drift_jacobian(&self, x: &DVector<T>, step: &DVector<T>) -> DMatrix<T> {
        self.dynamics
            .drift_jacobian(x)
            .unwrap_or_else(|| fd_drift_jacobian(self.dynamics.as_ref(), x, step))
    }

    /// The dual-use helper: finite-difference check of Assumption-style bounds.
    pub fn check_jacobian_bounds(&self, options: &BoundCheckOptions) -> Result<BoundReport> {
        check_jacobian_bounds(self, options)
    }
}

/// Central finite-difference Jacobian of `f` with per-axis steps.
pub fn fd_drift_jacobian<T: Real>(
    dynamics: &dyn Dynamics<T>,
    x: &DVector<T>,
    step: &DVector<T>,
) -> DMatrix<T> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step[j];
        xm[j] -= step[j];
        let col = (dynamics.drift(&xp) - dynamics.drift(&xm)) / (step[j] + step[j]);
        jac.set_column(j, &col);
    }
    jac
}

/// Central finite-difference Jacobians `∂g_k/∂x`, one `n × n` slab per input.
pub fn fd_effectiveness_jacobian<T: Real>(
    dynamics: &dyn Dynamics<T>,
    x: &DVector<T>,
    step: &DVector<T>,
) -> Vec<DMatrix<T>> {
    let n = x.len();
    let m = dynamics.input_dim();
    let mut slabs = vec![DMatrix::zeros(n, n); m];
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step[j];
        xm[j] -= step[j];
        let diff = (dynamics.effectiveness(&xp) - dynamics.effectiveness(&xm)) / (step[j] + step[j]);
        for (k, slab) in slabs.iter_mut().enumerate() {
            for i in 0..n {
                slab[(i, j)] = diff[(i, k)];
            }
        }
    }
    slabs
}

/// Options for [`derive_bounds`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsOptions {
    /// Grid points per axis (at least 2).
    pub grid: usize,
    /// Relative inflation of every `[min, max]` interval by its width.
    pub margin: f64,
    /// Finite-difference step as a fraction of the box width per axis.
    pub fd_step: f64,
}

impl Default for BoundsOptions {
    fn default() -> Self {
        Self {
            grid: 101,
            margin: 0.05,
            fd_step: 1e-5,
        }
    }
}

/// Element-wise Jacobian bounds by dense grid sampling of the box, widened
/// by `margin` times each interval's width.
pub fn derive_bounds<T: Real>(
    dynamics: &dyn Dynamics<T>,
    bbox: &OperatingBox<T>,
    options: &BoundsOptions,
) -> Result<JacobianBounds<T>> {
    if options.grid < 2 {
        return Err(Error::param("grid", "at least 2 points per axis are required"));
    }
    if !(options.margin >= 0.0) {
        return Err(Error::param("margin", "must be non-negative"));
    }
    let n = dynamics.state_dim();
    let m = dynamics.input_dim();
    if bbox.dim() != n {
        return Err(Error::Dimension {
            context: "operating box",
            expected: n,
            actual: bbox.dim(),
        });
    }
    let step = bbox.width() * lit::<T>(options.fd_step);
    let axes: Vec<Vec<T>> = (0..n)
        .map(|i| linspace(bbox.lower[i], bbox.upper[i], options.grid))
        .collect();

    let big = lit::<T>(f64::INFINITY);
    let mut f_lo = DMatrix::from_element(n, n, big);
    let mut f_hi = DMatrix::from_element(n, n, -big);
    let mut g_lo = vec![DMatrix::from_element(n, n, big); m];
    let mut g_hi = vec![DMatrix::from_element(n, n, -big); m];
    let mut seen = 0usize;

    for x in tensor_grid(&axes) {
        if !dynamics.is_evaluable(&x) {
            continue;
        }
        let jf = dynamics
            .drift_jacobian(&x)
            .unwrap_or_else(|| fd_drift_jacobian(dynamics, &x, &step));
        let jg = dynamics
            .effectiveness_jacobian(&x)
            .unwrap_or_else(|| fd_effectiveness_jacobian(dynamics, &x, &step));
        if !linalg::all_finite(jf.as_slice()) || jg.iter().any(|s| !linalg::all_finite(s.as_slice())) {
            continue;
        }
        seen += 1;
        accumulate(&mut f_lo, &mut f_hi, &jf);
        for k in 0..m {
            accumulate(&mut g_lo[k], &mut g_hi[k], &jg[k]);
        }
    }
    if seen == 0 {
        return Err(Error::param("grid", "no evaluable grid point inside the box"));
    }

    let margin = lit::<T>(options.margin);
    inflate(&mut f_lo, &mut f_hi, margin);
    for k in 0..m {
        inflate(&mut g_lo[k], &mut g_hi[k], margin);
    }
    JacobianBounds::new(f_lo, f_hi, g_lo, g_hi)
}

fn accumulate<T: Real>(lo: &mut DMatrix<T>, hi: &mut DMatrix<T>, value: &DMatrix<T>) {
    for ((l, h), v) in lo.iter_mut().zip(hi.iter_mut()).zip(value.iter()) {
        *l = l.min(*v);
        *h = h.max(*v);
    }
}

fn inflate<T: Real>(lo: &mut DMatrix<T>, hi: &mut DMatrix<T>, margin: T) {
    for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
        let pad = (*h - *l) * margin;
        *l -= pad;
        *h += pad;
    }
}

/// Options for [`check_jacobian_bounds`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheckOptions {
    pub samples: usize,
    /// Finite-difference step as a fraction of the box width per axis.
    pub step: f64,
    /// Margin above which a sample counts as a violation.
    pub tol: f64,
    pub seed: u64,
}

impl Default for BoundCheckOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            step: 1e-5,
            tol: 1e-6,
            seed: 7,
        }
    }
}

/// Worst-case summary of a Jacobian-bound check. Margins are
/// `max(lower − J, J − upper)` over all entries, so negative means inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub samples: usize,
    pub skipped: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub drift_worst_margin: f64,
    pub effectiveness_worst_margin: f64,
    pub worst_point: Vec<f64>,
}

/// Samples the box uniformly and compares central finite-difference
/// Jacobians of `f` and every column of `g` against the model's bounds.
pub fn check_jacobian_bounds<T: Real>(
    model: &ControlAffineModel<T>,
    options: &BoundCheckOptions,
) -> Result<BoundReport> {
    use rand::SeedableRng;
    if options.samples == 0 {
        return Err(Error::param("samples", "at least one sample is required"));
    }
    if !(options.step > 0.0) {
        return Err(Error::param("step", "must be positive"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(options.seed);
    let step = model.bbox.width() * lit::<T>(options.step);
    let b = &model.bounds;
    let mut report = BoundReport {
        samples: 0,
        skipped: 0,
        violations: 0,
        worst_margin: f64::NEG_INFINITY,
        drift_worst_margin: f64::NEG_INFINITY,
        effectiveness_worst_margin: f64::NEG_INFINITY,
        worst_point: Vec::new(),
    };
    for _ in 0..options.samples {
        let x = model.bbox.sample(&mut rng);
        let probes_ok = (0..x.len()).all(|j| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step[j];
            xm[j] -= step[j];
            model.dynamics.is_evaluable(&xp) && model.dynamics.is_evaluable(&xm)
        });
        if !probes_ok {
            report.skipped += 1;
            continue;
        }
        let jf = fd_drift_jacobian(model.dynamics(), &x, &step);
        let jg = fd_effectiveness_jacobian(model.dynamics(), &x, &step);
        if !linalg::all_finite(jf.as_slice()) || jg.iter().any(|s| !linalg::all_finite(s.as_slice())) {
            report.skipped += 1;
            continue;
        }
        report.samples += 1;
        let mf = interval_margin(&jf, &b.mf1, &b.mf2);
        let mg = jg
            .iter()
            .zip(b.mg1.iter().zip(b.mg2.iter()))
            .map(|(j, (lo, hi))| interval_margin(j, lo, hi))
            .fold(f64::NEG_INFINITY, f64::max);
        let worst = mf.max(mg);
        report.drift_worst_margin = report.drift_worst_margin.max(mf);
        report.effectiveness_worst_margin = report.effectiveness_worst_margin.max(mg);
        if worst > options.tol {
            report.violations += 1;
        }
        if worst > report.worst_margin {
            report.worst_margin = worst;
            report.worst_point = linalg::to_f64_vector(&x).iter().copied().collect();
        }
    }
    Ok(report)
}

fn interval_margin<T: Real>(value: &DMatrix<T>, lo: &DMatrix<T>, hi: &DMatrix<T>) -> f64 {
    value
        .iter()
        .zip(lo.iter().zip(hi.iter()))
        .map(|(v, (l, h))| (*l - *v).max(*v - *h).to_f64_lossy())
        .fold(f64::NEG_INFINITY, f64::max)
}

// ---------------------------------------------------------------------------
// JSON model documents

/// Named built-in dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DynamicsDef {
    #[serde(rename = "example2state")]
    ExampleTwoState,
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDef {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Bound arrays; `mg1`/`mg2` are indexed `[k][i][j]` (input slab first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsDef {
    pub mf1: Vec<Vec<f64>>,
    pub mf2: Vec<Vec<f64>>,
    pub mg1: Vec<Vec<Vec<f64>>>,
    pub mg2: Vec<Vec<Vec<f64>>>,
}

/// A model document. When `bounds` is absent they are derived on the box
/// using `derive` (or the defaults).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    pub dynamics: DynamicsDef,
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "box")]
    pub bbox: BoxDef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derive: Option<BoundsOptions>,
}

impl ModelDef {
    /// The two-state benchmark on `[-2, 2]²` with `C = [0 1]`.
    pub fn example_two_state() -> Self {
        Self {
            n: Some(2),
            m: Some(1),
            q: Some(1),
            dynamics: DynamicsDef::ExampleTwoState,
            c: vec![vec![0.0, 1.0]],
            bbox: BoxDef {
                lower: vec![-2.0, -2.0],
                upper: vec![2.0, 2.0],
            },
            bounds: None,
            derive: None,
        }
    }

    /// Resolves a built-in name (`example2state`) or reads a JSON file.
    pub fn load(spec: &str) -> Result<Self> {
        match spec {
            "example2state" => Ok(Self::example_two_state()),
            path => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{path}: {e}")))
            }
        }
    }

    pub fn build<T: Real>(&self) -> Result<ControlAffineModel<T>> {
        let config = |what: &str| Error::Config(format!("model: {what}"));
        let dynamics: Arc<dyn Dynamics<T>> = match &self.dynamics {
            DynamicsDef::ExampleTwoState => Arc::new(ExampleTwoState),
            DynamicsDef::Linear { a, b } => {
                let a = linalg::matrix_from_rows(a).ok_or_else(|| config("ragged A"))?;
                let b = linalg::matrix_from_rows(b).ok_or_else(|| config("ragged B"))?;
                Arc::new(LinearDynamics::new(
                    linalg::from_f64_matrix(&a),
                    linalg::from_f64_matrix(&b),
                )?)
            }
        };
        let n = dynamics.state_dim();
        let m = dynamics.input_dim();
        let c = linalg::matrix_from_rows(&self.c).ok_or_else(|| config("ragged C"))?;
        for (declared, actual, name) in [(self.n, n, "n"), (self.m, m, "m"), (self.q, c.nrows(), "q")] {
            if let Some(d) = declared {
                if d != actual {
                    return Err(config(&format!("declared {name} = {d} but the definition has {actual}")));
                }
            }
        }
        let bbox = OperatingBox::new(
            DVector::from_iterator(self.bbox.lower.len(), self.bbox.lower.iter().map(|&v| lit::<T>(v))),
            DVector::from_iterator(self.bbox.upper.len(), self.bbox.upper.iter().map(|&v| lit::<T>(v))),
        )?;
        let c = linalg::from_f64_matrix(&c);
        match &self.bounds {
            Some(def) => {
                let mat = |rows: &Vec<Vec<f64>>| {
                    linalg::matrix_from_rows(rows)
                        .map(|m| linalg::from_f64_matrix::<T>(&m))
                        .ok_or_else(|| config("ragged bound array"))
                };
                let stack = |slabs: &Vec<Vec<Vec<f64>>>| slabs.iter().map(mat).collect::<Result<Vec<_>>>();
                let bounds = JacobianBounds::new(mat(&def.mf1)?, mat(&def.mf2)?, stack(&def.mg1)?, stack(&def.mg2)?)?;
                ControlAffineModel::new(dynamics, c, bbox, bounds)
            }
            None => ControlAffineModel::with_derived_bounds(dynamics, c, bbox, &self.derive.unwrap_or_default()),
        }
    }
}

impl<T: Real> JacobianBounds<T> {
    pub fn to_def(&self) -> BoundsDef {
        let rows = |m: &DMatrix<T>| linalg::matrix_rows(&linalg::to_f64_matrix(m));
        BoundsDef {
            mf1: rows(&self.mf1),
            mf2: rows(&self.mf2),
            mg1: self.mg1.iter().map(rows).collect(),
            mg2: self.mg2.iter().map(rows).collect(),
        }
    }
}
