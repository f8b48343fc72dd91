//! Scalar abstraction shared by the state, channel and metric code.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive};

/// Real scalar usable by the qubit algebra: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal, panicking only if the target type cannot represent it.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance `nominal` floored at a small multiple of machine epsilon, so
    /// that tolerances tuned for `f64` remain meaningful for `f32`.
    #[inline]
    fn tol(nominal: f64) -> Self {
        let floor = Self::epsilon() * Self::lit(64.0);
        let t = Self::lit(nominal);
        if t > floor {
            t
        } else {
            floor
        }
    }
}

impl<T> Real for T where
    T: Float + FloatConst + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
}

/// Numerical tolerances for validating states and matrices.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tolerances {
    pub herm_tol: f64,
    pub trace_tol: f64,
    pub psd_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            herm_tol: 1e-10,
            trace_tol: 1e-10,
            psd_tol: 1e-9,
        }
    }
}

impl Tolerances {
    pub(crate) fn herm<T: Real>(&self) -> T {
        T::tol(self.herm_tol)
    }
    pub(crate) fn trace<T: Real>(&self) -> T {
        T::tol(self.trace_tol)
    }
    pub(crate) fn psd<T: Real>(&self) -> T {
        T::tol(self.psd_tol)
    }
}
