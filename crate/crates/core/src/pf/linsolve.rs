use nalgebra::{DMatrix, DVector};

/// Linear solve `A x = b` used for each Newton step.
///
/// The dense backend is adequate for cases up to a few hundred buses; a
/// sparse factorization can be plugged in through this trait.
pub trait LinearSolve: Sync {
    /// Returns `None` when `a` is singular.
    fn solve(&self, a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>>;
}

/// Dense LU with partial pivoting.
#[derive(Clone, Copy, Debug, Default)]
pub struct DenseLu;

impl LinearSolve for DenseLu {
    fn solve(&self, a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
        let x = a.lu().solve(&b)?;
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}
