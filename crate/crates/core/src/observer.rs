//! Run-time evaluation of the three-correction-term observer
//!
//! ```text
//! x̂̇ = M_f1 x̂ + (M_g1 u) x̂ + f̄(x̂ + H(y − Cx̂)) + ḡ_u(x̂ + K(y − Cx̂), u) + L(y − Cx̂)
//! ```
//!
//! The observer only ever sees `(y, u)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{first_non_finite, quad_form};
use crate::model::ControlAffineModel;
use crate::scalar::Real;
use crate::synthesis::ObserverGains;

/// Current state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState<T: Real> {
    pub xhat: DVector<T>,
}

impl<T: Real> ObserverState<T> {
    pub fn new(xhat: DVector<T>) -> Result<Self> {
        if let Some(i) = first_non_finite(xhat.as_slice()) {
            return Err(Error::NonFinite {
                component: format!("xhat[{i}]"),
            });
        }
        Ok(Self { xhat })
    }
}

/// Observer vector field.
///
/// An injected argument outside the evaluable domain is reported as a
/// domain error; it is never clamped.
pub fn observer_rhs<T: Real>(
    model: &ControlAffineModel<T>,
    gains: &ObserverGains<T>,
    xhat: &DVector<T>,
    y: &DVector<T>,
    u: &DVector<T>,
) -> Result<DVector<T>> {
    if y.len() != model.q() {
        return Err(Error::Dimension {
            context: "measurement y",
            expected: model.q(),
            actual: y.len(),
        });
    }
    let b = model.bounds();
    let innovation = y - model.c() * xhat;
    let zf = xhat + &gains.h * &innovation;
    let zg = xhat + &gains.k * &innovation;
    Ok(&b.mf1 * xhat + b.mug1(u) * xhat + model.fbar(&zf)? + model.gbar(&zg, u)? + &gains.l * innovation)
}

/// `V_e = eᵀPe`.
pub fn error_energy<T: Real>(gains: &ObserverGains<T>, e: &DVector<T>) -> T {
    quad_form(&gains.p, e)
}
