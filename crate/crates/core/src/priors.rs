//! Log-prior densities over potentials and their gradients: Gaussian
//! processes, mixtures of Gaussian processes, approximate-symmetry energies,
//! and the soft average-energy penalty.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gradients::GradientField;
use crate::lattice::{quadratic_form, Lattice, LatticeField, LatticeOperator};

fn check_positive_semidefinite(op: &LatticeOperator, what: &str) -> Result<()> {
    let ev = op.eigenvalues();
    let radius = ev.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    let min = ev.first().copied().unwrap_or(0.0);
    if min < -1e-9 * radius.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "{what} is not positive semi-definite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// Log of the pseudo-determinant of a PSD operator: sum of ln over strictly
/// positive eigenvalues, with the number of dropped zero modes.
fn log_pseudo_determinant(op: &LatticeOperator) -> (f64, usize, usize) {
    let ev = op.eigenvalues();
    let radius = ev.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    let cutoff = 1e-12 * radius.max(1.0);
    let mut logdet = 0.0;
    let mut kept = 0usize;
    for &e in &ev {
        if e > cutoff {
            logdet += e.ln();
            kept += 1;
        }
    }
    (logdet, kept, ev.len() - kept)
}

/// Gaussian process prior with mean (reference potential) v0 and inverse
/// covariance lambda K0. The value is reported without the v-independent
/// normalization constant. `scale` = 0 yields the uniform prior.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: LatticeField,
    inv_covariance: LatticeOperator,
    scale: f64,
}

impl GaussianPrior {
    pub fn new(mean: LatticeField, inv_covariance: LatticeOperator, scale: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "prior scale must be non-negative, got {scale}"
            )));
        }
        if mean.lattice().len() != inv_covariance.lattice().len() {
            return Err(Error::LatticeMismatch {
                expected: inv_covariance.lattice().len(),
                found: mean.lattice().len(),
            });
        }
        check_positive_semidefinite(&inv_covariance, "prior inverse covariance")?;
        Ok(Self {
            mean,
            inv_covariance,
            scale,
        })
    }

    pub fn mean(&self) -> &LatticeField {
        &self.mean
    }

    pub fn inv_covariance(&self) -> &LatticeOperator {
        &self.inv_covariance
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn lattice(&self) -> &Lattice {
        self.mean.lattice()
    }
}

/// Log density up to the normalization constant, and its gradient
/// -lambda K0 (v - v0).
pub fn gaussian_log_density(
    prior: &GaussianPrior,
    v: &LatticeField,
) -> Result<(f64, GradientField)> {
    let lattice = *prior.lattice();
    if v.lattice().len() != lattice.len() {
        return Err(Error::LatticeMismatch {
            expected: lattice.len(),
            found: v.lattice().len(),
        });
    }
    let diff = LatticeField::from_vector(&lattice, v.values() - prior.mean.values());
    let value = -0.5 * prior.scale * quadratic_form(&prior.inv_covariance, &diff, &diff)?;
    let grad = prior.inv_covariance.apply_vector(diff.values()) * (-prior.scale);
    Ok((value, GradientField::new(&lattice, grad, 0.0)))
}

/// One component of a mixture prior.
#[derive(Debug, Clone)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: LatticeField,
    pub inv_covariance: LatticeOperator,
}

/// Mixture of Gaussian processes with a shared scale. Relative component
/// normalizations (pseudo-determinants of the K_k) are included since they
/// weigh the responsibilities; zero modes are excluded and counted.
#[derive(Debug, Clone)]
pub struct MixturePrior {
    components: Vec<MixtureComponent>,
    scale: f64,
    half_logdets: Vec<f64>,
    kept_modes: Vec<usize>,
    zero_modes: Vec<usize>,
}

impl MixturePrior {
    pub fn new(components: Vec<MixtureComponent>, scale: f64) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter(
                "mixture prior needs at least one component".into(),
            ));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mixture scale must be positive, got {scale}"
            )));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| c.weight <= 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights must be positive and sum to 1, got total {total}"
            )));
        }
        let n = components[0].mean.len();
        let mut half_logdets = Vec::with_capacity(components.len());
        let mut kept_modes = Vec::with_capacity(components.len());
        let mut zero_modes = Vec::with_capacity(components.len());
        for c in &components {
            if c.mean.len() != n || c.inv_covariance.lattice().len() != n {
                return Err(Error::LatticeMismatch {
                    expected: n,
                    found: c.mean.len(),
                });
            }
            check_positive_semidefinite(&c.inv_covariance, "mixture component operator")?;
            let (logdet, kept, zeros) = log_pseudo_determinant(&c.inv_covariance);
            half_logdets.push(0.5 * logdet);
            kept_modes.push(kept);
            zero_modes.push(zeros);
        }
        Ok(Self {
            components,
            scale,
            half_logdets,
            kept_modes,
            zero_modes,
        })
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn lattice(&self) -> &Lattice {
        self.components[0].mean.lattice()
    }

    /// Zero-mode counts dropped from each component's pseudo-determinant.
    pub fn zero_mode_counts(&self) -> &[usize] {
        &self.zero_modes
    }

    /// Component log densities ln p(k) + ln 1/Z_k - (lambda/2) <v-v_k|K_k|v-v_k>,
    /// up to a constant shared by all components.
    fn component_log_densities(&self, v: &LatticeField) -> Result<Vec<f64>> {
        let lattice = *self.lattice();
        if v.lattice().len() != lattice.len() {
            return Err(Error::LatticeMismatch {
                expected: lattice.len(),
                found: v.lattice().len(),
            });
        }
        let half_log_scale = 0.5 * (self.scale / (2.0 * std::f64::consts::PI)).ln();
        self.components
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let diff = LatticeField::from_vector(&lattice, v.values() - c.mean.values());
                let q = quadratic_form(&c.inv_covariance, &diff, &diff)?;
                Ok(c.weight.ln()
                    + self.half_logdets[k]
                    + self.kept_modes[k] as f64 * half_log_scale
                    - 0.5 * self.scale * q)
            })
            .collect()
    }
}

pub(crate) fn softmax(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical(
            "all mixture responsibilities underflowed".into(),
        ));
    }
    let unnorm: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|w| w / total).collect())
}

/// Mixture log density (log-sum-exp over components), its gradient
/// -lambda sum_k p0(k|v) K_k (v - v_k), and the responsibilities p0(k|v).
pub fn mixture_log_density(
    prior: &MixturePrior,
    v: &LatticeField,
) -> Result<(f64, GradientField, Vec<f64>)> {
    let log_dens = prior.component_log_densities(v)?;
    let responsibilities = softmax(&log_dens)?;
    let max = log_dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let value = max
        + log_dens
            .iter()
            .map(|l| (l - max).exp())
            .sum::<f64>()
            .ln();
    let lattice = *prior.lattice();
    let mut grad = DVector::zeros(lattice.len());
    for (k, c) in prior.components.iter().enumerate() {
        let diff = v.values() - c.mean.values();
        grad += c.inv_covariance.apply_vector(&diff) * (-prior.scale * responsibilities[k]);
    }
    Ok((
        value,
        GradientField::new(&lattice, grad, 0.0),
        responsibilities,
    ))
}

/// Prior on the deviation from an approximate symmetry: a unitary lattice
/// symmetry S, a PSD weight operator K_S, and an optional reference the
/// deviation is measured from.
#[derive(Debug, Clone)]
pub struct SymmetryPrior {
    symmetry_op: LatticeOperator,
    weight_op: LatticeOperator,
    reference: Option<LatticeField>,
}

impl SymmetryPrior {
    pub fn new(
        symmetry_op: LatticeOperator,
        weight_op: LatticeOperator,
        reference: Option<LatticeField>,
    ) -> Result<Self> {
        let n = symmetry_op.lattice().len();
        if weight_op.lattice().len() != n {
            return Err(Error::LatticeMismatch {
                expected: n,
                found: weight_op.lattice().len(),
            });
        }
        let s = symmetry_op.matrix();
        let dev = (s.transpose() * s - nalgebra::DMatrix::<f64>::identity(n, n)).amax();
        if dev > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "symmetry operator is not orthogonal (|S^T S - I| = {dev:e})"
            )));
        }
        check_positive_semidefinite(&weight_op, "symmetry weight operator")?;
        Ok(Self {
            symmetry_op,
            weight_op,
            reference,
        })
    }

    /// Mirror about the grid midpoint.
    pub fn reflection(lattice: &Lattice, weight_op: LatticeOperator) -> Result<Self> {
        let n = lattice.len();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, n - 1 - i)] = 1.0;
        }
        Self::new(LatticeOperator::new(lattice, m, false)?, weight_op, None)
    }

    /// Cyclic translation by `shift` cells (periodic identification).
    pub fn translation(lattice: &Lattice, shift: usize, weight_op: LatticeOperator) -> Result<Self> {
        let n = lattice.len();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, (i + shift) % n)] = 1.0;
        }
        Self::new(LatticeOperator::new(lattice, m, false)?, weight_op, None)
    }

    /// Infinitesimal-translation error: one-cell translation weighted by
    /// I / spacing^2, the small-parameter limit of a Lie-group symmetry.
    /// Its induced operator (I-S)^T K_S (I-S) is the negative periodic
    /// Laplacian, i.e. the usual smoothness prior.
    pub fn infinitesimal_translation(lattice: &Lattice) -> Result<Self> {
        let h = lattice.spacing();
        let w = LatticeOperator::new(
            lattice,
            nalgebra::DMatrix::identity(lattice.len(), lattice.len()) / (h * h),
            true,
        )?;
        Self::translation(lattice, 1, w)
    }

    pub fn lattice(&self) -> &Lattice {
        self.symmetry_op.lattice()
    }

    pub fn symmetry_op(&self) -> &LatticeOperator {
        &self.symmetry_op
    }
}

/// Symmetry energy E_S = 1/2 <(I-S)(v-V0) | K_S | (I-S)(v-V0)> and its
/// gradient (I-S)^T K_S (I-S)(v-V0). The log-prior contribution is -E_S.
pub fn symmetry_energy(prior: &SymmetryPrior, v: &LatticeField) -> Result<(f64, GradientField)> {
    let lattice = *prior.lattice();
    if v.lattice().len() != lattice.len() {
        return Err(Error::LatticeMismatch {
            expected: lattice.len(),
            found: v.lattice().len(),
        });
    }
    let u = match &prior.reference {
        Some(v0) => v.values() - v0.values(),
        None => v.values().clone(),
    };
    let w = &u - prior.symmetry_op.apply_vector(&u);
    let kw = prior.weight_op.apply_vector(&w);
    let value = 0.5 * w.dot(&kw) * lattice.spacing();
    let grad = &kw - prior.symmetry_op.matrix().transpose() * &kw;
    Ok((value, GradientField::new(&lattice, grad, 0.0)))
}

/// Soft constraint (mu/2)(U - kappa)^2 pinning the thermal average energy.
#[derive(Debug, Clone, Copy)]
pub struct EnergyPenalty {
    pub mu: f64,
    pub kappa: f64,
}

impl EnergyPenalty {
    pub fn new(mu: f64, kappa: f64) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "penalty strength must be non-negative, got {mu}"
            )));
        }
        Ok(Self { mu, kappa })
    }
}

pub fn energy_penalty_value(pen: &EnergyPenalty, average_energy: f64) -> f64 {
    let d = average_energy - pen.kappa;
    0.5 * pen.mu * d * d
}
