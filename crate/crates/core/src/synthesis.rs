//! Observer gain synthesis from element-wise Jacobian bounds.
//!
//! For every enforced input vertex `u` the decision variables
//! `(P, R, H, K)` must satisfy
//!
//! ```text
//! [ AᵀP + PA − CᵀRᵀ − RC + 2αP    P − J₂₁ᵀ ]
//! [ P − J₂₁                       −2I      ]  ⪯ 0,     P ⪰ ε_P I,
//! ```
//!
//! with `A = M_f1 + M_g1·u` and
//! `J₂₁ = −½(M_f2 − M_f1)(I − HC) − ½(M_g2 − M_g1)u (I − KC)`.
//! The observer gain is recovered as `L = P⁻¹R`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, lambda_max, lambda_min, quad_form, spd_condition, symmetrize};
use crate::model::{ControlAffineModel, JacobianBounds};
use crate::observer::observer_rhs;
use crate::scalar::{lit, Real};
use crate::sdp::{self, AffineMatrixConstraint, SdpCertificate, SdpOptions, SdpStatus, Sense, VariableRestriction};

/// Multiplier matrices of the two sector conditions at one input.
///
/// Both are `2n × 2n` with a zero `(1,1)` block and identity `(2,2)` block.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierPair<T: Real> {
    pub jf: DMatrix<T>,
    pub jg: DMatrix<T>,
}

impl<T: Real> MultiplierPair<T> {
    /// The `(2,1)` block of `J_f`, `−(M_f2 − M_f1)/2`.
    pub fn jf21(&self) -> DMatrix<T> {
        let n = self.jf.nrows() / 2;
        self.jf.view((n, 0), (n, n)).into_owned()
    }

    /// The `(2,1)` block of `J_g`, `−(M_ug2 − M_ug1)/2`.
    pub fn jg21(&self) -> DMatrix<T> {
        let n = self.jg.nrows() / 2;
        self.jg.view((n, 0), (n, n)).into_owned()
    }
}

fn multiplier<T: Real>(width: &DMatrix<T>) -> DMatrix<T> {
    let n = width.nrows();
    let off = width * lit::<T>(-0.5);
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    j.view_mut((n, 0), (n, n)).copy_from(&off);
    j.view_mut((0, n), (n, n)).copy_from(&off.transpose());
    j.view_mut((n, n), (n, n)).fill_with_identity();
    j
}

pub fn build_multipliers<T: Real>(bounds: &JacobianBounds<T>, u: &DVector<T>) -> Result<MultiplierPair<T>> {
    if u.len() != bounds.input_dim() {
        return Err(Error::Dimension {
            context: "multiplier input vertex",
            expected: bounds.input_dim(),
            actual: u.len(),
        });
    }
    if let Some(k) = linalg::first_non_finite(u.as_slice()) {
        return Err(Error::NonFinite {
            component: format!("u[{k}]"),
        });
    }
    Ok(MultiplierPair {
        jf: multiplier(&bounds.drift_width()),
        jg: multiplier(&bounds.effectiveness_width_at(u)),
    })
}

/// All `2^m` corners of `[−bound, bound]^m`.
pub fn input_vertices<T: Real>(m: usize, bound: T) -> Vec<DVector<T>> {
    (0..1usize << m)
        .map(|mask| DVector::from_fn(m, |k, _| if mask >> k & 1 == 1 { bound } else { -bound }))
        .collect()
}

/// Index map between `(P, R, H, K)` and the flat decision vector.
///
/// `P` contributes its upper triangle row by row; `R`, `H`, `K` (each
/// `n × q`) follow in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub n: usize,
    pub q: usize,
}

impl VariableLayout {
    pub fn p_len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn len(&self) -> usize {
        self.p_len() + 3 * self.n * self.q
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn p_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + j
    }

    pub fn r_index(&self, i: usize, j: usize) -> usize {
        self.p_len() + i * self.q + j
    }

    pub fn h_index(&self, i: usize, j: usize) -> usize {
        self.p_len() + self.n * self.q + i * self.q + j
    }

    pub fn k_index(&self, i: usize, j: usize) -> usize {
        self.p_len() + 2 * self.n * self.q + i * self.q + j
    }

    /// `(P, R, H, K)` from a decision vector.
    pub fn unpack<T: Real>(&self, x: &DVector<T>) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>, DMatrix<T>) {
        let (n, q) = (self.n, self.q);
        let p = DMatrix::from_fn(n, n, |i, j| x[self.p_index(i, j)]);
        let r = DMatrix::from_fn(n, q, |i, j| x[self.r_index(i, j)]);
        let h = DMatrix::from_fn(n, q, |i, j| x[self.h_index(i, j)]);
        let k = DMatrix::from_fn(n, q, |i, j| x[self.k_index(i, j)]);
        (p, r, h, k)
    }

    pub fn pack<T: Real>(&self, p: &DMatrix<T>, r: &DMatrix<T>, h: &DMatrix<T>, k: &DMatrix<T>) -> DVector<T> {
        let mut x = DVector::zeros(self.len());
        for i in 0..self.n {
            for j in i..self.n {
                x[self.p_index(i, j)] = (p[(i, j)] + p[(j, i)]) * lit::<T>(0.5);
            }
            for j in 0..self.q {
                x[self.r_index(i, j)] = r[(i, j)];
                x[self.h_index(i, j)] = h[(i, j)];
                x[self.k_index(i, j)] = k[(i, j)];
            }
        }
        x
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param("alpha", "decay rate must be positive and finite"));
    }
    Ok(())
}

/// `J₂₁ = (J_f)₂₁ (I − HC) + (J_g)₂₁ (I − KC)`.
fn j21<T: Real>(mult: &MultiplierPair<T>, c: &DMatrix<T>, h: &DMatrix<T>, k: &DMatrix<T>) -> DMatrix<T> {
    let n = c.ncols();
    let eye = DMatrix::<T>::identity(n, n);
    mult.jf21() * (&eye - h * c) + mult.jg21() * (&eye - k * c)
}

/// Stacks `[[top, P − J₂₁ᵀ], [P − J₂₁, −2I]]`.
fn block<T: Real>(top: &DMatrix<T>, p: &DMatrix<T>, j21: &DMatrix<T>) -> DMatrix<T> {
    let n = p.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    let off = p - j21;
    m.view_mut((0, 0), (n, n)).copy_from(top);
    m.view_mut((n, 0), (n, n)).copy_from(&off);
    m.view_mut((0, n), (n, n)).copy_from(&off.transpose());
    m.view_mut((n, n), (n, n)).copy_from(&(DMatrix::<T>::identity(n, n) * lit::<T>(-2.0)));
    m
}

/// The convexified block (`R` in place of `PL`).
fn lmi_block<T: Real>(
    model: &ControlAffineModel<T>,
    alpha: T,
    u: &DVector<T>,
    mult: &MultiplierPair<T>,
    vars: (&DMatrix<T>, &DMatrix<T>, &DMatrix<T>, &DMatrix<T>),
) -> DMatrix<T> {
    let (p, r, h, k) = vars;
    let c = model.c();
    let a = &model.bounds().mf1 + model.bounds().mug1(u);
    let top = a.transpose() * p + p * &a - c.transpose() * r.transpose() - r * c + p * (alpha + alpha);
    block(&top, p, &j21(mult, c, h, k))
}

/// The matrix inequality with an explicit observer gain `L`.
pub fn gain_block<T: Real>(
    model: &ControlAffineModel<T>,
    gains: &ObserverGains<T>,
    alpha: T,
    u: &DVector<T>,
) -> Result<DMatrix<T>> {
    let mult = build_multipliers(model.bounds(), u)?;
    let a = &model.bounds().mf1 + model.bounds().mug1(u);
    let acl = a - &gains.l * model.c();
    let p = &gains.p;
    let top = acl.transpose() * p + p * &acl + p * (alpha + alpha);
    Ok(block(&top, p, &j21(&mult, model.c(), &gains.h, &gains.k)))
}

/// Decision layout plus one PD constraint on `P` and one NSD constraint per vertex.
#[derive(Debug, Clone)]
pub struct AssembledLmi<T: Real> {
    pub layout: VariableLayout,
    pub constraints: Vec<AffineMatrixConstraint<T>>,
    pub vertices: Vec<DVector<T>>,
}

pub fn assemble_lmi<T: Real>(
    model: &ControlAffineModel<T>,
    alpha: T,
    vertices: &[DVector<T>],
    eps_p: T,
) -> Result<AssembledLmi<T>> {
    check_alpha(alpha.to_f64_lossy())?;
    if vertices.is_empty() {
        return Err(Error::param("vertices", "at least one input vertex is required"));
    }
    if !(eps_p > T::zero()) {
        return Err(Error::param("eps_p", "must be positive"));
    }
    let layout = VariableLayout {
        n: model.n(),
        q: model.q(),
    };
    let nv = layout.len();
    let basis = |i: Option<usize>| {
        let mut x = DVector::<T>::zeros(nv);
        if let Some(i) = i {
            x[i] = T::one();
        }
        x
    };
    let affine = |f: &dyn Fn(&DVector<T>) -> DMatrix<T>| {
        let f0 = f(&basis(None));
        let fi: Vec<DMatrix<T>> = (0..nv).map(|i| f(&basis(Some(i))) - &f0).collect();
        (f0, fi)
    };

    let mut constraints = Vec::with_capacity(vertices.len() + 1);
    let (p0, pi) = affine(&|x| layout.unpack(x).0);
    constraints.push(AffineMatrixConstraint::new(
        "P",
        p0,
        pi,
        Sense::PositiveDefinite { margin: eps_p },
    )?);
    for u in vertices {
        let mult = build_multipliers(model.bounds(), u)?;
        let (f0, fi) = affine(&|x| {
            let (p, r, h, k) = layout.unpack(x);
            lmi_block(model, alpha, u, &mult, (&p, &r, &h, &k))
        });
        let label: Vec<String> = u.iter().map(|v| format!("{:+}", v.to_f64_lossy())).collect();
        constraints.push(AffineMatrixConstraint::new(
            format!("lmi_u{}", label.join("_")),
            f0,
            fi,
            Sense::NegativeSemidefinite,
        )?);
    }
    Ok(AssembledLmi {
        layout,
        constraints,
        vertices: vertices.to_vec(),
    })
}

/// Injection rows fixed so that every sector row acts on a one-dimensional
/// argument difference.
///
/// A row `i` of a sector width matrix with several nonzero columns gives a
/// vector sector inequality that only follows from element-wise bounds when
/// all but one of those columns of `(I − HC)` (resp. `(I − KC)`) vanish.
/// Column `j` can be cancelled exactly when `e_j` lies in the row space of
/// `C`, by setting row `j` of the injection gain to `pinv(Cᵀ) e_j`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SectorPins {
    /// `(row of H, values)`.
    pub h_rows: Vec<(usize, Vec<f64>)>,
    /// `(row of K, values)`.
    pub k_rows: Vec<(usize, Vec<f64>)>,
    /// Sector rows of the drift that keep several uncancelled columns.
    pub unsound_drift_rows: Vec<usize>,
    /// Sector rows of the input term that keep several uncancelled columns.
    pub unsound_input_rows: Vec<usize>,
}

fn plan_pins<T: Real>(width: &DMatrix<T>, c: &DMatrix<T>) -> (Vec<(usize, Vec<f64>)>, Vec<usize>) {
    let n = width.nrows();
    let c64 = linalg::to_f64_matrix(c);
    let ct = c64.transpose();
    let pinv = ct.clone().pseudo_inverse(1e-12).unwrap_or_else(|_| DMatrix::zeros(c64.nrows(), n));
    // Row j of the gain that cancels column j, when one exists.
    let cancel: Vec<Option<Vec<f64>>> = (0..n)
        .map(|j| {
            let ej = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
            let hj = &pinv * &ej;
            ((&ct * &hj - &ej).amax() <= 1e-9).then(|| hj.iter().copied().collect())
        })
        .collect();
    let mut pinned: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut unsound = Vec::new();
    for i in 0..n {
        let support: Vec<usize> = (0..n).filter(|&j| width[(i, j)].abs() > T::zero()).collect();
        if support.len() < 2 {
            continue;
        }
        let mut keep: Vec<usize> = support.iter().copied().filter(|&j| cancel[j].is_none()).collect();
        if keep.is_empty() {
            // Leave the widest column free so the row still carries the sector.
            let widest = support
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    width[(i, a)]
                        .abs()
                        .partial_cmp(&width[(i, b)].abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap();
            keep.push(widest);
        }
        for &j in &support {
            if !keep.contains(&j) {
                pinned[j] = cancel[j].clone();
            }
        }
        if keep.len() >= 2 {
            unsound.push(i);
        }
    }
    let pins = pinned
        .into_iter()
        .enumerate()
        .filter_map(|(j, v)| v.map(|v| (j, v)))
        .collect();
    (pins, unsound)
}

/// Pins for `H` (from the drift width) and `K` (from the union of the
/// input-channel widths).
pub fn sector_pins<T: Real>(model: &ControlAffineModel<T>) -> SectorPins {
    let b = model.bounds();
    let (h_rows, unsound_drift_rows) = plan_pins(&b.drift_width(), model.c());
    let union = b
        .effectiveness_width()
        .iter()
        .fold(DMatrix::<T>::zeros(model.n(), model.n()), |acc, w| acc + w.abs());
    let (k_rows, unsound_input_rows) = plan_pins(&union, model.c());
    SectorPins {
        h_rows,
        k_rows,
        unsound_drift_rows,
        unsound_input_rows,
    }
}

/// Synthesis settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub eps_p: f64,
    pub sdp: SdpOptions,
    /// Fix injection rows as described in [`SectorPins`].
    pub pin_sector_rows: bool,
    pub max_condition: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            eps_p: 1e-6,
            sdp: SdpOptions::default(),
            pin_sector_rows: true,
            max_condition: 1e12,
        }
    }
}

/// Observer gains with the data they were certified for.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGains<T: Real> {
    pub p: DMatrix<T>,
    pub l: DMatrix<T>,
    pub h: DMatrix<T>,
    pub k: DMatrix<T>,
    pub alpha: T,
    pub u_vertices: Vec<DVector<T>>,
    pub certificate: Option<SdpCertificate<T>>,
    pub pins: SectorPins,
    /// Largest eigenvalue of the explicit-gain inequality over the vertices.
    pub verified_max_eig: Option<T>,
}

impl<T: Real> ObserverGains<T> {
    /// Gains without a certificate (loaded or hand-entered).
    pub fn new(p: DMatrix<T>, l: DMatrix<T>, h: DMatrix<T>, k: DMatrix<T>, alpha: T) -> Result<Self> {
        let n = p.nrows();
        if !p.is_square() {
            return Err(Error::Dimension {
                context: "P (columns)",
                expected: n,
                actual: p.ncols(),
            });
        }
        for (m, what) in [(&l, "L rows"), (&h, "H rows"), (&k, "K rows")] {
            if m.nrows() != n {
                return Err(Error::Dimension {
                    context: what,
                    expected: n,
                    actual: m.nrows(),
                });
            }
        }
        if h.ncols() != l.ncols() || k.ncols() != l.ncols() {
            return Err(Error::Dimension {
                context: "gain output columns",
                expected: l.ncols(),
                actual: h.ncols().max(k.ncols()),
            });
        }
        Ok(Self {
            p: symmetrize(&p),
            l,
            h,
            k,
            alpha,
            u_vertices: Vec::new(),
            certificate: None,
            pins: SectorPins::default(),
            verified_max_eig: None,
        })
    }

    /// Zero correction gains with `P = I`.
    pub fn zero(n: usize, q: usize, alpha: T) -> Self {
        Self::new(
            DMatrix::identity(n, n),
            DMatrix::zeros(n, q),
            DMatrix::zeros(n, q),
            DMatrix::zeros(n, q),
            alpha,
        )
        .expect("consistent shapes")
    }

    /// Gains reported for the two-state benchmark (decay rate 2).
    pub fn benchmark_reference() -> Self {
        let m = |r, c, v: &[f64]| linalg::from_f64_matrix(&DMatrix::from_row_slice(r, c, v));
        Self::new(
            m(2, 2, &[0.75067, 0.80202, 0.80202, 1.9477]),
            m(2, 1, &[-18.8704, 10.1087]),
            m(2, 1, &[1.1779, 0.0]),
            m(2, 1, &[0.0, 0.0]),
            lit(2.0),
        )
        .expect("consistent shapes")
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn q(&self) -> usize {
        self.l.ncols()
    }

    fn check_model(&self, model: &ControlAffineModel<T>) -> Result<()> {
        if self.n() != model.n() || self.q() != model.q() {
            return Err(Error::Dimension {
                context: "gains vs. model",
                expected: model.n(),
                actual: self.n(),
            });
        }
        Ok(())
    }

    pub fn to_file(&self) -> GainsFile {
        let rows = |m: &DMatrix<T>| linalg::matrix_rows(&linalg::to_f64_matrix(m));
        GainsFile {
            p: rows(&self.p),
            l: rows(&self.l),
            h: rows(&self.h),
            k: rows(&self.k),
            alpha: self.alpha.to_f64_lossy(),
            u_vertices: self
                .u_vertices
                .iter()
                .map(|u| u.iter().map(|v| v.to_f64_lossy()).collect())
                .collect(),
            margins: self
                .certificate
                .as_ref()
                .map(|c| c.margins.iter().map(|v| v.to_f64_lossy()).collect())
                .unwrap_or_default(),
            status: self.certificate.as_ref().map(|c| c.status.to_string()),
            verified_max_eig: self.verified_max_eig.map(|v| v.to_f64_lossy()),
            pins: Some(self.pins.clone()),
        }
    }

    pub fn from_file(file: &GainsFile) -> Result<Self> {
        let mat = |rows: &Vec<Vec<f64>>, what: &str| {
            linalg::matrix_from_rows(rows)
                .map(|m| linalg::from_f64_matrix::<T>(&m))
                .ok_or_else(|| Error::Config(format!("gains: ragged or empty {what}")))
        };
        let mut g = Self::new(
            mat(&file.p, "P")?,
            mat(&file.l, "L")?,
            mat(&file.h, "H")?,
            mat(&file.k, "K")?,
            lit(file.alpha),
        )?;
        g.u_vertices = file
            .u_vertices
            .iter()
            .map(|u| DVector::from_iterator(u.len(), u.iter().map(|&v| lit::<T>(v))))
            .collect();
        g.pins = file.pins.clone().unwrap_or_default();
        g.verified_max_eig = file.verified_max_eig.map(lit);
        Ok(g)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: GainsFile =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_file(&file)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// JSON form of [`ObserverGains`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GainsFile {
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "L")]
    pub l: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub alpha: f64,
    #[serde(default)]
    pub u_vertices: Vec<Vec<f64>>,
    #[serde(default)]
    pub margins: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified_max_eig: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pins: Option<SectorPins>,
}

/// Solves the LMI at the given vertices and recovers `L = P⁻¹R`.
pub fn synthesize<T: Real>(
    model: &ControlAffineModel<T>,
    alpha: T,
    vertices: &[DVector<T>],
    options: &SynthesisOptions,
) -> Result<ObserverGains<T>> {
    let lmi = assemble_lmi(model, alpha, vertices, lit(options.eps_p))?;
    let layout = lmi.layout;
    let pins = if options.pin_sector_rows {
        sector_pins(model)
    } else {
        SectorPins::default()
    };
    let mut fixed: Vec<(usize, T)> = Vec::new();
    for (row, values) in &pins.h_rows {
        fixed.extend(values.iter().enumerate().map(|(j, &v)| (layout.h_index(*row, j), lit(v))));
    }
    for (row, values) in &pins.k_rows {
        fixed.extend(values.iter().enumerate().map(|(j, &v)| (layout.k_index(*row, j), lit(v))));
    }
    if !pins.unsound_drift_rows.is_empty() || !pins.unsound_input_rows.is_empty() {
        log::warn!(
            "sector rows {:?} (drift) / {:?} (input) keep several uncancelled columns",
            pins.unsound_drift_rows,
            pins.unsound_input_rows
        );
    }
    let restriction = VariableRestriction::new(layout.len(), &fixed)?;
    let restricted: Vec<_> = lmi.constraints.iter().map(|c| restriction.restrict(c)).collect();
    let cert = sdp::solve_feasibility(&restricted, restriction.num_free(), &options.sdp)?;
    let full = restriction.expand(&cert.variables);
    let cert = SdpCertificate {
        variables: full.clone(),
        ..cert
    };
    if cert.status != SdpStatus::Feasible {
        return Err(Error::Infeasible {
            status: cert.status.to_string(),
            margins: cert.margins.iter().map(|m| m.to_f64_lossy()).collect(),
            certificate: Box::new(cert.to_f64()),
        });
    }

    let (p, r, h, k) = layout.unpack(&full);
    let condition = spd_condition(&p).to_f64_lossy();
    if !(condition <= options.max_condition) {
        return Err(Error::Conditioning { condition });
    }
    let chol = p.clone().cholesky().ok_or(Error::Conditioning { condition })?;
    let l = chol.solve(&r);

    let mut gains = ObserverGains::new(p, l, h, k, alpha)?;
    gains.u_vertices = vertices.to_vec();
    gains.pins = pins;
    let worst = vertices
        .iter()
        .map(|u| gain_block(model, &gains, alpha, u).map(|m| lambda_max(&m)))
        .collect::<Result<Vec<T>>>()?
        .into_iter()
        .fold(lit::<T>(f64::NEG_INFINITY), |a, b| a.max(b));
    let limit = 10.0 * options.sdp.tol;
    if worst.to_f64_lossy() > limit {
        return Err(Error::Recovery {
            max_eig: worst.to_f64_lossy(),
            limit,
        });
    }
    gains.verified_max_eig = Some(worst);
    gains.certificate = Some(cert);
    Ok(gains)
}

/// Largest `b ∈ [0, upper]` for which the LMI at the vertices `±b` is
/// feasible, found by bisection to within `resolution`. With a positive
/// `min_slack` the recovered gains must also keep every vertex block at or
/// below `-min_slack`. `None` when even `b = 0` fails.
pub fn certifiable_input_bound<T: Real>(
    model: &ControlAffineModel<T>,
    alpha: T,
    upper: T,
    resolution: f64,
    min_slack: f64,
    options: &SynthesisOptions,
) -> Result<Option<T>> {
    let feasible = |b: T| -> Result<bool> {
        match synthesize(model, alpha, &input_vertices(model.m(), b), options) {
            Ok(g) => Ok(g.verified_max_eig.is_none_or(|w| w.to_f64_lossy() <= -min_slack)),
            Err(Error::Infeasible { .. } | Error::Conditioning { .. } | Error::Recovery { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    if feasible(upper)? {
        return Ok(Some(upper));
    }
    if !feasible(T::zero())? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, upper.to_f64_lossy());
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if feasible(lit(mid))? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lit(lo)))
}

/// Largest eigenvalue of the explicit-gain inequality at one vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexMargin {
    pub u: Vec<f64>,
    pub max_eig: f64,
}

/// Evaluation of given gains in the assembled constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainDiagnostic {
    pub p_eigenvalues: Vec<f64>,
    pub vertices: Vec<VertexMargin>,
}

pub fn diagnose_gains<T: Real>(
    model: &ControlAffineModel<T>,
    gains: &ObserverGains<T>,
    vertices: &[DVector<T>],
) -> Result<GainDiagnostic> {
    gains.check_model(model)?;
    let lmi = assemble_lmi(model, gains.alpha, vertices, lit(1e-12))?;
    let r = &gains.p * &gains.l;
    let x = lmi.layout.pack(&gains.p, &r, &gains.h, &gains.k);
    let margins = lmi.constraints[1..]
        .iter()
        .zip(vertices)
        .map(|(c, u)| {
            Ok(VertexMargin {
                u: u.iter().map(|v| v.to_f64_lossy()).collect(),
                max_eig: sdp::eval_constraint(c, &x)?.1.to_f64_lossy(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GainDiagnostic {
        p_eigenvalues: linalg::sym_eigenvalues(&gains.p).iter().map(|v| v.to_f64_lossy()).collect(),
        vertices: margins,
    })
}

// ---------------------------------------------------------------------------
// Sampling verification

/// Settings for [`verify_sector`] and [`verify_decay`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub samples: usize,
    /// Half-width of the sampled input range `[−u_bound, u_bound]^m`.
    pub u_bound: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            u_bound: 3.0,
            tol: 1e-9,
            seed: 11,
        }
    }
}

/// A sampled `(x, x̂, u)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Real> {
    pub x: DVector<T>,
    pub xhat: DVector<T>,
    pub u: DVector<T>,
}

/// Deterministic uniform samples from `box × box × [−u_bound, u_bound]^m`.
pub fn draw_samples<T: Real>(model: &ControlAffineModel<T>, options: &VerifyOptions) -> Vec<Sample<T>> {
    use rand::Rng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(options.seed);
    let bbox = model.operating_box();
    (0..options.samples)
        .map(|_| {
            let x = bbox.sample(&mut rng);
            let xhat = bbox.sample(&mut rng);
            let u = DVector::from_fn(model.m(), |_, _| lit::<T>(rng.gen_range(-options.u_bound..=options.u_bound)));
            Sample { x, xhat, u }
        })
        .collect()
}

/// Outcome of [`verify_sector`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorReport {
    pub samples: usize,
    pub skipped: usize,
    /// Samples whose injected arguments left the operating box (still checked).
    pub out_of_box: usize,
    pub drift_form_worst: f64,
    pub input_form_worst: f64,
    pub form_violations: usize,
    pub containment_worst: f64,
    pub containment_violations: usize,
    /// Samples passing containment but failing a quadratic form.
    pub chain_violations: usize,
}

impl SectorReport {
    pub fn passed(&self) -> bool {
        self.form_violations == 0 && self.containment_violations == 0
    }
}

/// `[Σ_j min(0, w_ij d_j), Σ_j max(0, w_ij d_j)]` for every row, where each
/// Jacobian entry ranges over `[0, w_ij]` (or `[w_ij, 0]`).
fn hull<T: Real>(lo: &DMatrix<T>, hi: &DMatrix<T>, d: &DVector<T>) -> (DVector<T>, DVector<T>) {
    let n = lo.nrows();
    let mut a = DVector::zeros(n);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        for j in 0..d.len() {
            let p = lo[(i, j)] * d[j];
            let q = hi[(i, j)] * d[j];
            a[i] += p.min(q);
            b[i] += p.max(q);
        }
    }
    (a, b)
}

fn containment_excess<T: Real>(v: &DVector<T>, lo: &DVector<T>, hi: &DVector<T>) -> f64 {
    v.iter()
        .zip(lo.iter().zip(hi.iter()))
        .map(|(x, (a, b))| {
            let scale = T::one() + a.abs().max(b.abs());
            ((*a - *x).max(*x - *b) / scale).to_f64_lossy()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// The shifted nonlinearity differences at one sample.
pub struct SectorTerms<T: Real> {
    pub phi_f: DVector<T>,
    pub phi_g: DVector<T>,
    /// `(I − HC) e`
    pub df: DVector<T>,
    /// `(I − KC) e`
    pub dg: DVector<T>,
}

pub fn sector_terms<T: Real>(
    model: &ControlAffineModel<T>,
    gains: &ObserverGains<T>,
    s: &Sample<T>,
) -> Result<SectorTerms<T>> {
    let c = model.c();
    let e = &s.x - &s.xhat;
    let innovation = c * &e;
    let zf = &s.xhat + &gains.h * &innovation;
    let zg = &s.xhat + &gains.k * &innovation;
    let phi_f = model.fbar(&s.x)? - model.fbar(&zf)?;
    let phi_g = model.gbar(&s.x, &s.u)? - model.gbar(&zg, &s.u)?;
    Ok(SectorTerms {
        phi_f,
        phi_g,
        df: &s.x - zf,
        dg: &s.x - zg,
    })
}

/// Checks the two quadratic sector forms and the interval-hull containment
/// of the shifted nonlinearity differences on random samples.
pub fn verify_sector<T: Real>(
    model: &ControlAffineModel<T>,
    gains: &ObserverGains<T>,
    options: &VerifyOptions,
) -> Result<SectorReport> {
    gains.check_model(model)?;
    verify_sector_on(model, gains, &draw_samples(model, options), options.tol)
}

pub fn verify_sector_on<T: Real>(
    model: &ControlAffineModel<T>,
    gains: &ObserverGains<T>,
    samples: &[Sample<T>],
    tol: f64,
) -> Result<SectorReport> {
    let b = model.bounds();
    let wf = b.drift_width();
    let zero = DMatrix::<T>::zeros(model.n(), model.n());
    let mut rep = SectorReport {
        samples: 0,
        skipped: 0,
        out_of_box: 0,
        drift_form_worst: f64::NEG_INFINITY,
        input_form_worst: f64::NEG_INFINITY,
        form_violations: 0,
        containment_worst: f64::NEG_INFINITY,
        containment_violations: 0,
        chain_violations: 0,
    };
    let bbox = model.operating_box();
    for s in samples {
        let terms = match sector_terms(model, gains, s) {
            Ok(t) => t,
            Err(Error::Domain { .. }) => {
                rep.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        rep.samples += 1;
        let innovation = model.c() * (&s.x - &s.xhat);
        if !bbox.contains(&(&s.xhat + &gains.h * &innovation)) || !bbox.contains(&(&s.xhat + &gains.k * &innovation)) {
            rep.out_of_box += 1;
        }
        let wg = b.effectiveness_width_at(&s.u);
        // φᵀφ − φᵀ W d ≤ 0
        let form = |phi: &DVector<T>, w: &DMatrix<T>, d: &DVector<T>| (phi.dot(phi) - phi.dot(&(w * d))).to_f64_lossy();
        let qf = form(&terms.phi_f, &wf, &terms.df);
        let qg = form(&terms.phi_g, &wg, &terms.dg);
        rep.drift_form_worst = rep.drift_form_worst.max(qf);
        rep.input_form_worst = rep.input_form_worst.max(qg);
        let form_ok = qf <= tol && qg <= tol;
        if !form_ok {
            rep.form_violations += 1;
        }

        let (flo, fhi) = hull(&zero, &wf, &terms.df);
        let (glo_m, ghi_m) = input_hull(b, &s.u);
        let (glo, ghi) = hull(&glo_m, &ghi_m, &terms.dg);
        let excess = containment_excess(&terms.phi_f, &flo, &fhi).max(containment_excess(&terms.phi_g, &glo, &ghi));
        rep.containment_worst = rep.containment_worst.max(excess);
        let contained = excess <= tol;
        if !contained {
            rep.containment_violations += 1;
        }
        if contained && !form_ok {
            rep.chain_violations += 1;
        }
    }
    Ok(rep)
}

/// Element-wise range of `∂ḡ_u/∂x` over the bounds: `Σ_k u_k [0, W_k]`.
fn input_hull<T: Real>(b: &JacobianBounds<T>, u: &DVector<T>) -> (DMatrix<T>, DMatrix<T>) {
    let n = b.state_dim();
    let mut lo = DMatrix::zeros(n, n);
    let mut hi = DMatrix::zeros(n, n);
    for (w, &uk) in b.effectiveness_width().iter().zip(u.iter()) {
        let s = w * uk;
        lo += s.map(|v| v.min(T::zero()));
        hi += s.map(|v| v.max(T::zero()));
    }
    (lo, hi)
}

/// Outcome of [`verify_decay`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub samples: usize,
    pub skipped: usize,
    pub violations: usize,
    /// Largest `2eᵀPė + 2α eᵀPe`.
    pub worst_slack: f64,
    pub worst_sample: Option<Vec<f64>>,
}

/// Checks `2eᵀPė ≤ −2α eᵀPe + tol` on random samples, with `ė` the plant
/// vector field minus the observer vector field.
pub fn verify_decay<T: Real>(
    model: &ControlAffineModel<T>,
    gains: &ObserverGains<T>,
    options: &VerifyOptions,
) -> Result<DecayReport> {
    gains.check_model(model)?;
    verify_decay_on(model, gains, &draw_samples(model, options), options.tol)
}

pub fn decay_slack<T: Real>(model: &ControlAffineModel<T>, gains: &ObserverGains<T>, s: &Sample<T>) -> Result<T> {
    let e = &s.x - &s.xhat;
    let y = model.output(&s.x);
    let xdot = model.flow(&s.x, &s.u)?;
    let xhatdot = observer_rhs(model, gains, &s.xhat, &y, &s.u)?;
    let edot = xdot - xhatdot;
    let two = lit::<T>(2.0);
    Ok(two * e.dot(&(&gains.p * edot)) + two * gains.alpha * quad_form(&gains.p, &e))
}

pub fn verify_decay_on<T: Real>(
    model: &ControlAffineModel<T>,
    gains: &ObserverGains<T>,
    samples: &[Sample<T>],
    tol: f64,
) -> Result<DecayReport> {
    let mut rep = DecayReport {
        samples: 0,
        skipped: 0,
        violations: 0,
        worst_slack: f64::NEG_INFINITY,
        worst_sample: None,
    };
    for s in samples {
        let slack = match decay_slack(model, gains, s) {
            Ok(v) => v.to_f64_lossy(),
            Err(Error::Domain { .. }) => {
                rep.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        rep.samples += 1;
        if slack > tol {
            rep.violations += 1;
        }
        if slack > rep.worst_slack {
            rep.worst_slack = slack;
            rep.worst_sample = Some(s.x.iter().chain(s.xhat.iter()).chain(s.u.iter()).map(|v| v.to_f64_lossy()).collect());
        }
    }
    Ok(rep)
}

/// `λ_min(P)`, used by callers that report gain quality.
pub fn p_min_eigenvalue<T: Real>(gains: &ObserverGains<T>) -> T {
    lambda_min(&gains.p)
}
