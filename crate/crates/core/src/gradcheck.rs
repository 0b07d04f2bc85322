//! Central finite-difference oracles for every analytic gradient in the
//! crate, plus a suite runner that produces a pass/fail table.
//!
//! The oracles only ever evaluate objective functions; they never touch the
//! analytic gradient code paths they are checking.

use crate::lattice::LatticeField;

/// Central difference of a scalar functional with respect to every cell,
/// divided by the cell measure so it is comparable with gradient densities:
/// (F(v + eps e_i) - F(v - eps e_i)) / (2 eps spacing).
pub fn central_difference_field(
    v: &LatticeField,
    eps: f64,
    mut f: impl FnMut(&LatticeField) -> f64,
) -> LatticeField {
    let h = v.lattice().spacing();
    let mut out = LatticeField::zeros(v.lattice());
    let mut work = v.clone();
    for i in 0..v.len() {
        let base = v.get(i);
        work.set(i, base + eps);
        let plus = f(&work);
        work.set(i, base - eps);
        let minus = f(&work);
        work.set(i, base);
        out.set(i, (plus - minus) / (2.0 * eps * h));
    }
    out
}

/// Maximum componentwise deviation relative to the sup norm of the reference.
pub fn sup_relative_error(candidate: &LatticeField, reference: &LatticeField) -> f64 {
    let scale = reference
        .iter()
        .fold(0.0f64, |a, x| a.max(x.abs()))
        .max(1e-12);
    (0..reference.len())
        .map(|i| (candidate.get(i) - reference.get(i)).abs() / scale)
        .fold(0.0, f64::max)
}

/// One line of the gradient-check table.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tolerance
    }
}

mod suites;
pub use suites::run_all;
