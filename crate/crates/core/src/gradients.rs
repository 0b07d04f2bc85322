//! Functional derivatives of eigenvalues, orbitals, the position likelihood,
//! and thermal averages with respect to the lattice potential.
//!
//! Convention: a gradient field g satisfies dF = sum_x g(x) dv(x) * spacing,
//! i.e. g is a derivative density per unit length. The matching
//! finite-difference oracle is (F(v + eps e_x) - F(v - eps e_x)) / (2 eps h).
//!
//! Sums over eigenpairs exclude terms whose energy separation falls below a
//! degeneracy threshold, fixing phase and normalization by the convention
//! that responses are orthogonal to the degenerate subspace.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lattice::{Lattice, LatticeField};
use crate::spectral::{position_cells, SpectralDecomposition, ThermalEnsemble};

/// Derivative density over the lattice, tagged with the degeneracy threshold
/// its eigenpair sums were screened with.
#[derive(Debug, Clone)]
pub struct GradientField {
    values: DVector<f64>,
    lattice: Lattice,
    degenerate_threshold: f64,
}

impl GradientField {
    pub(crate) fn new(lattice: &Lattice, values: DVector<f64>, degenerate_threshold: f64) -> Self {
        debug_assert_eq!(values.len(), lattice.len());
        Self {
            values,
            lattice: *lattice,
            degenerate_threshold,
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

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn degenerate_threshold(&self) -> f64 {
        self.degenerate_threshold
    }

    pub fn as_field(&self) -> LatticeField {
        LatticeField::from_vector(&self.lattice, self.values.clone())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.amax()
    }

    /// Discrete integral sum_x g(x) * spacing.
    pub fn integral(&self) -> f64 {
        self.values.sum() * self.lattice.spacing()
    }
}

/// Default screening threshold: 1e-8 of the spectral range, which keeps the
/// rule grid-independent.
pub fn default_degenerate_threshold(spec: &SpectralDecomposition) -> f64 {
    let range = spec.spectral_range();
    if range > 0.0 {
        1e-8 * range
    } else {
        1e-8
    }
}

/// Derivative of eigenvalue alpha: the squared orbital.
pub fn d_energy(spec: &SpectralDecomposition, alpha: usize) -> GradientField {
    let n = spec.lattice().len();
    let values = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let phi = spec.orbital_value(alpha, i);
            phi * phi
        }),
    );
    GradientField::new(spec.lattice(), values, default_degenerate_threshold(spec))
}

/// Levels excluded from response sums for level `alpha` that are separated by
/// more than the threshold but less than ten times it. A non-empty report
/// means the exclusion rule is acting on levels that are not exactly
/// degenerate, which deserves a diagnostic rather than silence.
pub fn near_degenerate_levels(
    spec: &SpectralDecomposition,
    alpha: usize,
    threshold: f64,
) -> Vec<(usize, f64)> {
    let e_alpha = spec.energy(alpha);
    spec.energies()
        .iter()
        .enumerate()
        .filter(|&(gamma, e)| {
            let gap = (e - e_alpha).abs();
            gamma != alpha && gap >= threshold && gap < 10.0 * threshold
        })
        .map(|(gamma, e)| (gamma, (e - e_alpha).abs()))
        .collect()
}

/// Derivative of orbital alpha evaluated at cell `x_eval` with respect to
/// each potential cell: the resolvent sum over non-degenerate levels.
pub fn d_orbital(
    spec: &SpectralDecomposition,
    alpha: usize,
    x_eval: usize,
    threshold: f64,
) -> GradientField {
    let n = spec.lattice().len();
    let e_alpha = spec.energy(alpha);
    let mut values = DVector::zeros(n);
    for gamma in 0..spec.level_count() {
        let gap = spec.energy(gamma) - e_alpha;
        if gap.abs() < threshold {
            continue;
        }
        let coeff = -spec.orbital_value(gamma, x_eval) / gap;
        for x in 0..n {
            values[x] += coeff * spec.orbital_value(gamma, x) * spec.orbital_value(alpha, x);
        }
    }
    GradientField::new(spec.lattice(), values, threshold)
}

/// Sum over data of d ln p(x_i) / dv(x): orbital-response term plus the
/// thermal covariance term.
pub fn d_log_likelihood(
    spec: &SpectralDecomposition,
    ens: &ThermalEnsemble,
    data: &Dataset,
) -> Result<GradientField> {
    let cells = position_cells(data, spec.lattice())?;
    d_log_likelihood_cells(spec, ens, &cells)
}

/// Same as [`d_log_likelihood`] but over pre-mapped cell indices.
pub fn d_log_likelihood_cells(
    spec: &SpectralDecomposition,
    ens: &ThermalEnsemble,
    cells: &[usize],
) -> Result<GradientField> {
    let n = spec.lattice().len();
    let levels = spec.level_count();
    let threshold = default_degenerate_threshold(spec);

    // Aggregate identical cells; the likelihood factorizes over data.
    let mut counts = vec![0usize; n];
    let mut first_index = vec![usize::MAX; n];
    for (i, &c) in cells.iter().enumerate() {
        counts[c] += 1;
        if first_index[c] == usize::MAX {
            first_index[c] = i;
        }
    }

    let p = crate::spectral::position_likelihood(spec, ens);
    let beta = ens.beta;
    let mut grad = DVector::zeros(n);

    // Antisymmetric pair coefficients (w_a - w_g) / (E_a - E_g) vanish as
    // beta -> 0, which keeps the high-temperature limit clean.
    let mut pair_coeff = Vec::new();
    for a in 0..levels {
        for g in (a + 1)..levels {
            let gap = spec.energy(a) - spec.energy(g);
            if gap.abs() < threshold {
                continue;
            }
            let c = (ens.weights[a] - ens.weights[g]) / gap;
            if c != 0.0 {
                pair_coeff.push((a, g, 2.0 * c));
            }
        }
    }

    for c in 0..n {
        if counts[c] == 0 {
            continue;
        }
        let pc = p.get(c);
        if pc <= 0.0 {
            return Err(Error::ZeroLikelihood {
                index: first_index[c],
            });
        }
        let weight = counts[c] as f64 / pc;
        // Orbital response part.
        for &(a, g, coeff) in &pair_coeff {
            let f = coeff * spec.orbital_value(a, c) * spec.orbital_value(g, c);
            if f == 0.0 {
                continue;
            }
            for x in 0..n {
                grad[x] += weight * f * spec.orbital_value(a, x) * spec.orbital_value(g, x);
            }
        }
        // Thermal covariance part.
        for x in 0..n {
            let mut corr = 0.0;
            for a in 0..levels {
                let w = ens.weights[a];
                if w == 0.0 {
                    continue;
                }
                let pa_c = spec.orbital_value(a, c) * spec.orbital_value(a, c);
                let pa_x = spec.orbital_value(a, x) * spec.orbital_value(a, x);
                corr += w * pa_c * pa_x;
            }
            grad[x] -= weight * beta * (corr - pc * p.get(x));
        }
    }
    Ok(GradientField::new(spec.lattice(), grad, threshold))
}

/// Derivative of the thermal average energy U.
pub fn d_average_energy(spec: &SpectralDecomposition, ens: &ThermalEnsemble) -> GradientField {
    let n = spec.lattice().len();
    let u = ens.average_energy;
    let beta = ens.beta;
    let mut values = DVector::zeros(n);
    for alpha in 0..spec.level_count() {
        let w = ens.weights[alpha];
        if w == 0.0 {
            continue;
        }
        let coeff = w * (1.0 - beta * (spec.energy(alpha) - u));
        for x in 0..n {
            let phi = spec.orbital_value(alpha, x);
            values[x] += coeff * phi * phi;
        }
    }
    GradientField::new(spec.lattice(), values, default_degenerate_threshold(spec))
}

/// Derivative of the average-energy penalty (mu/2)(U - kappa)^2,
/// the chain rule applied to [`d_average_energy`].
pub fn d_energy_penalty(
    spec: &SpectralDecomposition,
    ens: &ThermalEnsemble,
    mu: f64,
    kappa: f64,
) -> GradientField {
    let du = d_average_energy(spec, ens);
    let scale = mu * (ens.average_energy - kappa);
    GradientField::new(
        spec.lattice(),
        du.values * scale,
        default_degenerate_threshold(spec),
    )
}

/// Chain rule from functional to parametric gradients: row l of `sensitivity`
/// holds dv(x)/dxi_l over the lattice, and the result is the parameter
/// gradient dF/dxi_l = sum_x sensitivity[l, x] g(x) * spacing.
pub fn contract_parametric(grad: &GradientField, sensitivity: &DMatrix<f64>) -> Result<Vec<f64>> {
    if sensitivity.ncols() != grad.len() {
        return Err(Error::LatticeMismatch {
            expected: grad.len(),
            found: sensitivity.ncols(),
        });
    }
    let h = grad.lattice().spacing();
    Ok((sensitivity * &grad.values).iter().map(|x| x * h).collect())
}
