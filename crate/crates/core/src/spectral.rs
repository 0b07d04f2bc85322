//! One-body Hamiltonian assembly, dense symmetric eigendecomposition,
//! canonical-ensemble weights, and the thermal position likelihood.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lattice::{build_laplacian, Boundary, Lattice, LatticeField, LatticeOperator};

/// One-body Hamiltonian H = -(1/2m) Laplacian + diag(v).
///
/// The wavefunction boundary condition may differ from the boundary tag of
/// the potential's lattice (periodic orbitals over a pinned potential are a
/// common combination).
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    pub mass: f64,
    pub potential: LatticeField,
    pub wavefn_boundary: Boundary,
}

impl HamiltonianSpec {
    pub fn new(mass: f64, potential: LatticeField, wavefn_boundary: Boundary) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mass must be positive, got {mass}"
            )));
        }
        Ok(Self {
            mass,
            potential,
            wavefn_boundary,
        })
    }
}

/// Eigenpairs of a discretized Hamiltonian. Energies ascend; orbital columns
/// are orthonormal under the discrete measure (sum phi^2 * spacing = 1) with
/// a deterministic sign convention.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    energies: Vec<f64>,
    orbitals: DMatrix<f64>,
    lattice: Lattice,
}

impl SpectralDecomposition {
    pub fn from_parts(lattice: &Lattice, energies: Vec<f64>, orbitals: DMatrix<f64>) -> Self {
        debug_assert_eq!(energies.len(), orbitals.ncols());
        debug_assert_eq!(lattice.len(), orbitals.nrows());
        Self {
            energies,
            orbitals,
            lattice: *lattice,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn level_count(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn energy(&self, alpha: usize) -> f64 {
        self.energies[alpha]
    }

    pub fn orbitals(&self) -> &DMatrix<f64> {
        &self.orbitals
    }

    /// Value of orbital `alpha` at cell `i`.
    pub fn orbital_value(&self, alpha: usize, i: usize) -> f64 {
        self.orbitals[(i, alpha)]
    }

    pub fn orbital(&self, alpha: usize) -> DVector<f64> {
        self.orbitals.column(alpha).into_owned()
    }

    /// Spread of the spectrum, used for relative degeneracy thresholds.
    pub fn spectral_range(&self) -> f64 {
        match (self.energies.first(), self.energies.last()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0.0,
        }
    }
}

/// Boltzmann weights, log partition function, and thermal average energy.
#[derive(Debug, Clone)]
pub struct ThermalEnsemble {
    pub beta: f64,
    pub weights: Vec<f64>,
    pub log_partition: f64,
    pub average_energy: f64,
}

/// H = -(1/2m) Laplacian + diag(v), with the Laplacian built under the
/// spec's wavefunction boundary condition.
pub fn assemble_hamiltonian(spec: &HamiltonianSpec) -> LatticeOperator {
    let lattice = spec.potential.lattice().with_boundary(spec.wavefn_boundary);
    let lap = build_laplacian(&lattice);
    let mut m = lap.matrix() * (-1.0 / (2.0 * spec.mass));
    for i in 0..lattice.len() {
        m[(i, i)] += spec.potential.get(i);
    }
    LatticeOperator::new(&lattice, m, true).expect("Hamiltonian assembly preserves symmetry")
}

/// Full dense symmetric eigendecomposition with ascending energies,
/// measure-normalized orbitals, and sign fixed so the first component whose
/// magnitude is appreciable is positive.
pub fn diagonalize(h: &LatticeOperator) -> Result<SpectralDecomposition> {
    if !h.is_symmetric() {
        return Err(Error::Eigensolver(
            "diagonalize requires a symmetric operator".into(),
        ));
    }
    let n = h.lattice().len();
    let eig = h
        .matrix()
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Eigensolver("symmetric QR iteration did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let inv_sqrt_h = 1.0 / h.lattice().spacing().sqrt();
    let mut energies = Vec::with_capacity(n);
    let mut orbitals = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        energies.push(eig.eigenvalues[src]);
        let col = eig.eigenvectors.column(src);
        let norm = col.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Eigensolver(format!(
                "eigenvector {src} has invalid norm {norm}"
            )));
        }
        let scale = inv_sqrt_h / norm;
        let max_abs = col.amax();
        let mut sign = 1.0;
        for v in col.iter() {
            if v.abs() > 1e-8 * max_abs {
                if *v < 0.0 {
                    sign = -1.0;
                }
                break;
            }
        }
        for i in 0..n {
            orbitals[(i, dst)] = col[i] * scale * sign;
        }
    }
    Ok(SpectralDecomposition {
        energies,
        orbitals,
        lattice: *h.lattice(),
    })
}

/// Boltzmann weights p_a = exp(-beta E_a) / Z computed with a max-energy
/// shift so large beta stays finite; also ln Z and U = <E>.
pub fn thermal_ensemble(spec: &SpectralDecomposition, beta: f64) -> Result<ThermalEnsemble> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let e0 = spec
        .energies
        .first()
        .copied()
        .ok_or_else(|| Error::Numerical("empty spectrum".into()))?;
    let mut weights: Vec<f64> = spec
        .energies
        .iter()
        .map(|e| (-beta * (e - e0)).exp())
        .collect();
    let z_shifted: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= z_shifted;
    }
    let average_energy = weights
        .iter()
        .zip(&spec.energies)
        .map(|(w, e)| w * e)
        .sum();
    Ok(ThermalEnsemble {
        beta,
        weights,
        log_partition: z_shifted.ln() - beta * e0,
        average_energy,
    })
}

/// Thermal position density p(x) = sum_a p_a |phi_a(x)|^2, per unit length.
pub fn position_likelihood(spec: &SpectralDecomposition, ens: &ThermalEnsemble) -> LatticeField {
    let n = spec.lattice.len();
    let mut p = DVector::zeros(n);
    for (alpha, &w) in ens.weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for i in 0..n {
            let phi = spec.orbitals[(i, alpha)];
            p[i] += w * phi * phi;
        }
    }
    LatticeField::from_vector(&spec.lattice, p)
}

/// Maps every datum of a single-position dataset to its lattice cell.
pub fn position_cells(data: &Dataset, lattice: &Lattice) -> Result<Vec<usize>> {
    let mut cells = Vec::with_capacity(data.len());
    for (index, sample) in data.samples().iter().enumerate() {
        if sample.len() != 1 {
            return Err(Error::InvalidParameter(format!(
                "datum {index} has {} coordinates, expected a single position",
                sample.len()
            )));
        }
        let cell = lattice
            .nearest_cell(sample[0])
            .ok_or(Error::DatumOutsideDomain {
                index,
                value: sample[0],
            })?;
        cells.push(cell);
    }
    Ok(cells)
}

/// Sum over data of ln p(x_i). Returns negative infinity when a datum sits
/// in a cell of exactly zero likelihood.
pub fn log_likelihood(
    data: &Dataset,
    spec: &SpectralDecomposition,
    ens: &ThermalEnsemble,
) -> Result<f64> {
    let p = position_likelihood(spec, ens);
    let cells = position_cells(data, &spec.lattice)?;
    Ok(cells.iter().map(|&c| p.get(c).ln()).sum())
}

/// Transforms two-body position pairs to the one-body problem in relative
/// coordinates: x_r = x1 - x2 and reduced mass m1 m2 / (m1 + m2). The
/// center-of-mass motion factorizes and is integrated out analytically, so
/// no center-of-mass data survive.
pub fn reduce_two_body(m1: f64, m2: f64, pair_data: &[(f64, f64)]) -> Result<(f64, Vec<f64>)> {
    if !(m1 > 0.0 && m2 > 0.0) {
        return Err(Error::InvalidParameter(
            "two-body reduction needs positive masses".into(),
        ));
    }
    let reduced_mass = m1 * m2 / (m1 + m2);
    let relative: Vec<f64> = pair_data.iter().map(|&(x1, x2)| x1 - x2).collect();
    Ok((reduced_mass, relative))
}
