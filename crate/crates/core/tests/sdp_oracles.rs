use nalgebra::{DMatrix, DVector};
use ofrl::linalg::sym_eigenvalues;
use ofrl::sdp::{eval_constraint, solve_feasibility, AffineMatrixConstraint, SdpOptions, SdpStatus, Sense};
use proptest::prelude::*;

/// Symmetric 2×2 P as three variables (p11, p12, p22).
fn p_basis() -> Vec<DMatrix<f64>> {
    vec![
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
    ]
}

fn lyapunov_constraints(a: &DMatrix<f64>, eps: f64) -> Vec<AffineMatrixConstraint<f64>> {
    let basis = p_basis();
    let lyap = basis.iter().map(|e| a.transpose() * e + e * a).collect();
    vec![
        AffineMatrixConstraint::new("P", DMatrix::zeros(2, 2), basis, Sense::PositiveDefinite { margin: eps }).unwrap(),
        AffineMatrixConstraint::new("lyap", DMatrix::identity(2, 2), lyap, Sense::NegativeSemidefinite).unwrap(),
    ]
}

/// Solves `AᵀP + PA = −I` through `(I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P) = −vec(I)`.
fn lyapunov_kronecker(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(eye.as_slice());
    let v = op.lu().solve(&rhs).expect("A is Hurwitz");
    DMatrix::from_column_slice(n, n, v.as_slice())
}

#[test]
fn lyapunov_instance_matches_closed_form() {
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
    let cons = lyapunov_constraints(&a, 0.01);
    let cert = solve_feasibility(&cons, 3, &SdpOptions::default()).unwrap();
    assert!(cert.is_feasible(), "{cert:?}");
    assert!(cert.margins[0] >= 0.01 - 1e-9, "{:?}", cert.margins);
    assert!(cert.margins[1] <= 1e-7);

    let p = lyapunov_kronecker(&a);
    let residual = a.transpose() * &p + &p * &a + DMatrix::identity(2, 2);
    assert!(residual.amax() < 1e-12);
    let x = DVector::from_vec(vec![p[(0, 0)], p[(0, 1)], p[(1, 1)]]);
    let (_, pmin) = eval_constraint(&cons[0], &x).unwrap();
    let (_, lmax) = eval_constraint(&cons[1], &x).unwrap();
    assert!(pmin >= 0.01, "{pmin}");
    assert!(lmax.abs() < 1e-12, "{lmax}");
}

#[test]
fn certificate_margins_reproduce_on_reevaluation() {
    let a = DMatrix::from_row_slice(2, 2, &[-0.3, 4.0, -1.0, -0.7]);
    let cons = lyapunov_constraints(&a, 1e-3);
    let cert = solve_feasibility(&cons, 3, &SdpOptions::default()).unwrap();
    assert!(cert.is_feasible());
    for (c, &m) in cons.iter().zip(&cert.margins) {
        let (_, again) = eval_constraint(c, &cert.variables).unwrap();
        assert!((again - m).abs() <= 1e-9, "{again} vs {m}");
    }
}

#[test]
fn unstable_lyapunov_instance_is_rejected() {
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, -1.0]);
    let cert = solve_feasibility(&lyapunov_constraints(&a, 0.01), 3, &SdpOptions::default()).unwrap();
    assert!(matches!(cert.status, SdpStatus::Infeasible(_) | SdpStatus::MaxIterations), "{cert:?}");
}

// Characteristic-polynomial oracle ------------------------------------------

/// Coefficients of det(λI − A), highest degree first, by Faddeev–LeVerrier.
fn char_poly(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut coeffs = vec![1.0];
    let mut m = DMatrix::<f64>::zeros(n, n);
    let eye = DMatrix::<f64>::identity(n, n);
    let mut c_prev = 1.0;
    for k in 1..=n {
        m = a * &m + &eye * c_prev;
        let c = -(a * &m).trace() / k as f64;
        coeffs.push(c);
        c_prev = c;
    }
    coeffs
}

fn horner(p: &[f64], x: f64) -> (f64, f64) {
    let (mut v, mut d) = (0.0, 0.0);
    for &c in p {
        d = d * x + v;
        v = v * x + c;
    }
    (v, d)
}

/// Real roots of a real-rooted polynomial: Newton from above the largest
/// root converges monotonically; deflate and repeat, then polish.
fn real_roots(p: &[f64], upper: f64) -> Vec<f64> {
    let mut q = p.to_vec();
    let mut roots = Vec::new();
    let mut x = upper;
    while q.len() > 1 {
        for _ in 0..500 {
            let (v, d) = horner(&q, x);
            if d == 0.0 || v == 0.0 {
                break;
            }
            let next = x - v / d;
            if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
                x = next;
                break;
            }
            x = next;
        }
        for _ in 0..3 {
            let (v, d) = horner(p, x);
            if d != 0.0 {
                x -= v / d;
            }
        }
        roots.push(x);
        let mut deflated = Vec::with_capacity(q.len() - 1);
        let mut acc = 0.0;
        for &c in &q[..q.len() - 1] {
            acc = acc * x + c;
            deflated.push(acc);
        }
        q = deflated;
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
}

fn gershgorin_upper(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|i| a[(i, i)] + (0..a.ncols()).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
        + 1.0
}

fn sym4() -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0f64..3.0, 10).prop_map(|v| {
        let mut a = DMatrix::zeros(4, 4);
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                a[(i, j)] = v[k];
                a[(j, i)] = v[k];
                k += 1;
            }
        }
        a
    })
}

#[test]
fn char_poly_oracle_on_known_spectrum() {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, 0.5, 1.0, 3.0]));
    let r = real_roots(&char_poly(&a), gershgorin_upper(&a));
    for (x, e) in r.iter().zip([-2.0, 0.5, 1.0, 3.0]) {
        assert!((x - e).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn eigenvalues_match_char_poly_roots(a in sym4()) {
        let ours = sym_eigenvalues(&a);
        let oracle = real_roots(&char_poly(&a), gershgorin_upper(&a));
        // Nearly repeated roots are ill-conditioned for the polynomial, so
        // skip matrices whose spectrum is too tight to separate.
        let gap = ours.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        prop_assume!(gap > 1e-2);
        for (x, y) in ours.iter().zip(&oracle) {
            prop_assert!((x - y).abs() <= 1e-9, "{:?} vs {:?}", ours, oracle);
        }
    }

    #[test]
    fn eval_constraint_extreme_matches_sense(a in sym4(), scale in 0.1f64..10.0) {
        let c = AffineMatrixConstraint::new("c", a.clone(), vec![DMatrix::identity(4, 4)], Sense::NegativeSemidefinite).unwrap();
        let (_, lmax) = eval_constraint(&c, &DVector::from_element(1, scale)).unwrap();
        let ev = sym_eigenvalues(&a);
        prop_assert!((lmax - (ev[3] + scale)).abs() < 1e-12);
    }
}
