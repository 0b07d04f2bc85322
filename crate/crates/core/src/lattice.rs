//! Uniform one-dimensional grids, real fields living on them, and the dense
//! symmetric operators (Laplacians and smoothness inverse covariances) that
//! every other module builds on.
//!
//! Discrete measure convention: all inner products, quadratic forms and
//! normalizations carry one factor of the grid `spacing`, so densities
//! integrate (not sum) to 1 and results are comparable across resolutions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Boundary condition tag for grid operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Out-of-domain neighbors are dropped (wavefunctions vanish outside).
    Dirichlet,
    /// Neighbor indices wrap around; the grid is a ring.
    Periodic,
}

impl Boundary {
    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::Dirichlet => "dirichlet",
            Boundary::Periodic => "periodic",
        }
    }
}

/// Uniform 1D grid: `n_points` cells of width `spacing`, cell `i` centered at
/// `origin + i * spacing`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    n_points: usize,
    spacing: f64,
    origin: f64,
    boundary: Boundary,
}

impl Lattice {
    pub fn new(n_points: usize, spacing: f64, origin: f64, boundary: Boundary) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::InvalidParameter(format!(
                "lattice needs at least 3 points, got {n_points}"
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lattice spacing must be positive and finite, got {spacing}"
            )));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidParameter("lattice origin must be finite".into()));
        }
        Ok(Self {
            n_points,
            spacing,
            origin,
            boundary,
        })
    }

    /// Grid symmetric about x = 0 (odd `n_points` puts a cell exactly at 0).
    pub fn centered(n_points: usize, spacing: f64, boundary: Boundary) -> Result<Self> {
        let origin = -0.5 * (n_points as f64 - 1.0) * spacing;
        Self::new(n_points, spacing, origin, boundary)
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Same geometry with a different boundary tag (wavefunction boundary
    /// conditions may differ from the potential's convention).
    pub fn with_boundary(&self, boundary: Boundary) -> Self {
        Self { boundary, ..*self }
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.spacing
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.coord(i)).collect()
    }

    pub fn total_length(&self) -> f64 {
        self.n_points as f64 * self.spacing
    }

    /// Index of the mirror cell about the grid midpoint.
    pub fn mirror_index(&self, i: usize) -> usize {
        self.n_points - 1 - i
    }

    /// Nearest cell for a physical coordinate. Coordinates up to half a cell
    /// outside the first/last cell center still snap; anything further is out
    /// of domain.
    pub fn nearest_cell(&self, x: f64) -> Option<usize> {
        if !x.is_finite() {
            return None;
        }
        let t = (x - self.origin) / self.spacing;
        let i = t.round();
        if i < -0.5 || i > self.n_points as f64 - 0.5 {
            return None;
        }
        Some((i.max(0.0) as usize).min(self.n_points - 1))
    }

    fn check_same(&self, other: &Lattice) -> Result<()> {
        if self.n_points != other.n_points {
            return Err(Error::LatticeMismatch {
                expected: self.n_points,
                found: other.n_points,
            });
        }
        Ok(())
    }
}

/// Real-valued function on a lattice. Used for potentials, probability
/// densities per unit length, and gradient fields.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    values: DVector<f64>,
    lattice: Lattice,
}

impl LatticeField {
    pub fn zeros(lattice: &Lattice) -> Self {
        Self {
            values: DVector::zeros(lattice.len()),
            lattice: *lattice,
        }
    }

    pub fn from_values(lattice: &Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::LatticeMismatch {
                expected: lattice.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "field values must all be finite".into(),
            ));
        }
        Ok(Self {
            values: DVector::from_vec(values),
            lattice: *lattice,
        })
    }

    pub fn from_fn(lattice: &Lattice, mut f: impl FnMut(f64) -> f64) -> Self {
        let values = DVector::from_iterator(
            lattice.len(),
            (0..lattice.len()).map(|i| f(lattice.coord(i))),
        );
        Self {
            values,
            lattice: *lattice,
        }
    }

    pub(crate) fn from_vector(lattice: &Lattice, values: DVector<f64>) -> Self {
        debug_assert_eq!(values.len(), lattice.len());
        Self {
            values,
            lattice: *lattice,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn set(&mut self, i: usize, v: f64) {
        self.values[i] = v;
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DVector<f64> {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sum of values times the cell width (the discrete integral).
    pub fn integral(&self) -> f64 {
        self.values.sum() * self.lattice.spacing()
    }

    /// Discrete integral of |self - other|.
    pub fn l1_distance(&self, other: &LatticeField) -> f64 {
        (&self.values - &other.values).abs().sum() * self.lattice.spacing()
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self {
            values: self.values.add_scalar(c),
            lattice: self.lattice,
        }
    }

    /// Mirror about the grid midpoint: out(i) = in(n-1-i).
    pub fn mirrored(&self) -> Self {
        let n = self.len();
        Self {
            values: DVector::from_iterator(n, (0..n).map(|i| self.values[n - 1 - i])),
            lattice: self.lattice,
        }
    }

    /// Symmetric part about the grid midpoint: (f(x) + f(-x)) / 2.
    pub fn symmetrized(&self) -> Self {
        let mut out = self.mirrored();
        out.values += &self.values;
        out.values *= 0.5;
        out
    }
}

/// Dense symmetric operator acting on lattice fields by ordinary
/// matrix-vector product.
#[derive(Debug, Clone)]
pub struct LatticeOperator {
    matrix: DMatrix<f64>,
    lattice: Lattice,
    symmetric: bool,
}

impl LatticeOperator {
    /// Wraps a matrix, exactly symmetrizing it when `symmetric` is requested.
    /// Fails if the input deviates from symmetry by more than 1e-12 relative.
    pub fn new(lattice: &Lattice, matrix: DMatrix<f64>, symmetric: bool) -> Result<Self> {
        if matrix.nrows() != lattice.len() || matrix.ncols() != lattice.len() {
            return Err(Error::LatticeMismatch {
                expected: lattice.len(),
                found: matrix.nrows(),
            });
        }
        let mut matrix = matrix;
        if symmetric {
            let scale = matrix.amax().max(1.0);
            let mut worst = 0.0f64;
            for i in 0..matrix.nrows() {
                for j in (i + 1)..matrix.ncols() {
                    worst = worst.max((matrix[(i, j)] - matrix[(j, i)]).abs());
                }
            }
            if worst > 1e-12 * scale {
                return Err(Error::InvalidParameter(format!(
                    "matrix flagged symmetric deviates from symmetry by {worst:e}"
                )));
            }
            symmetrize_in_place(&mut matrix);
        }
        Ok(Self {
            matrix,
            lattice: *lattice,
            symmetric,
        })
    }

    pub fn identity(lattice: &Lattice) -> Self {
        Self {
            matrix: DMatrix::identity(lattice.len(), lattice.len()),
            lattice: *lattice,
            symmetric: true,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn apply(&self, f: &LatticeField) -> Result<LatticeField> {
        self.lattice.check_same(f.lattice())?;
        Ok(LatticeField::from_vector(&self.lattice, &self.matrix * f.values()))
    }

    pub fn apply_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    /// Eigenvalues of the symmetric matrix, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }
}

/// Exact symmetrization: both off-diagonal entries replaced by their mean.
fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Second-order central-difference Laplacian scaled by 1/spacing².
/// Dirichlet rows drop out-of-domain neighbors; periodic rows wrap.
pub fn build_laplacian(lattice: &Lattice) -> LatticeOperator {
    let n = lattice.len();
    let w = 1.0 / (lattice.spacing() * lattice.spacing());
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = -2.0 * w;
        match lattice.boundary() {
            Boundary::Dirichlet => {
                if i > 0 {
                    m[(i, i - 1)] = w;
                }
                if i + 1 < n {
                    m[(i, i + 1)] = w;
                }
            }
            Boundary::Periodic => {
                m[(i, (i + n - 1) % n)] += w;
                m[(i, (i + 1) % n)] += w;
            }
        }
    }
    LatticeOperator {
        matrix: m,
        lattice: *lattice,
        symmetric: true,
    }
}

/// k-fold matrix power of the Laplacian; k = 0 is the identity.
/// Rejected for k > 8: conditioning degrades as (1/spacing²)^k.
pub fn build_iterated_laplacian(lattice: &Lattice, k: usize) -> Result<LatticeOperator> {
    if k > 8 {
        return Err(Error::InvalidParameter(format!(
            "iterated Laplacian order {k} exceeds the supported maximum of 8"
        )));
    }
    if k == 0 {
        return Ok(LatticeOperator::identity(lattice));
    }
    let lap = build_laplacian(lattice);
    let mut m = lap.matrix.clone();
    for _ in 1..k {
        m = &m * &lap.matrix;
        symmetrize_in_place(&mut m);
    }
    Ok(LatticeOperator {
        matrix: m,
        lattice: *lattice,
        symmetric: true,
    })
}

/// Truncated radial-basis-function smoothness operator,
/// sum over k = 0..=3 of sigma^(2k) / (k! 2^k) times (-Laplacian)^k.
pub fn build_truncated_rbf(lattice: &Lattice, sigma_rbf: f64) -> Result<LatticeOperator> {
    if !(sigma_rbf > 0.0 && sigma_rbf.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma_rbf must be positive and finite, got {sigma_rbf}"
        )));
    }
    let n = lattice.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut coeff = 1.0; // sigma^(2k) / (k! 2^k)
    for k in 0..=3usize {
        if k > 0 {
            coeff *= sigma_rbf * sigma_rbf / (2.0 * k as f64);
        }
        let term = build_iterated_laplacian(lattice, k)?;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        m += term.matrix() * (coeff * sign);
    }
    symmetrize_in_place(&mut m);
    Ok(LatticeOperator {
        matrix: m,
        lattice: *lattice,
        symmetric: true,
    })
}

/// Discrete scalar product <f|K|g> = sum_ij f_i K_ij g_j * spacing.
pub fn quadratic_form(op: &LatticeOperator, f: &LatticeField, g: &LatticeField) -> Result<f64> {
    op.lattice.check_same(f.lattice())?;
    op.lattice.check_same(g.lattice())?;
    Ok(f.values().dot(&(op.apply_vector(g.values()))) * op.lattice.spacing())
}
