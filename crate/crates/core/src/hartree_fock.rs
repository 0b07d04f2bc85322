//! Mean-field treatment of N spinless fermions in one dimension with a local
//! antisymmetrized two-body interaction v(|x1 - x2|): the self-consistent
//! field solver, Slater-determinant position likelihoods, the linear orbital
//! response system for the inverse problem, the zero-temperature
//! reconstruction loop, and an exact two-body diagonalization oracle.
//!
//! The interaction is optimized as a function of the inter-particle distance
//! r on a distance grid with the same spacing as the spatial grid. Boundary
//! convention: v(0) = 0 (the contact value never matters for fermions) and
//! v is constant beyond the right edge, realized by pinning the last cell.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradients::GradientField;
use crate::lattice::{Boundary, Lattice, LatticeField, LatticeOperator};
use crate::optimizer::{
    FreeCellSolver, InitialGuess, OptimizerConfig, Preconditioner, ReconstructionResult,
    RunSummary, StopReason,
};
use crate::priors::{energy_penalty_value, gaussian_log_density, EnergyPenalty, GaussianPrior};
use crate::spectral::{assemble_hamiltonian, diagonalize, HamiltonianSpec};

/// N fermions with a given one-body potential and an unknown local two-body
/// potential over inter-particle distances.
#[derive(Debug, Clone)]
pub struct TwoBodySpec {
    pub mass: f64,
    pub one_body_potential: LatticeField,
    /// v(r) sampled at r = 0, h, 2h, ...; cell 0 must hold exactly 0.
    pub two_body_potential: LatticeField,
    pub n_particles: usize,
    pub wavefn_boundary: Boundary,
}

impl TwoBodySpec {
    pub fn new(
        mass: f64,
        one_body_potential: LatticeField,
        two_body_potential: LatticeField,
        n_particles: usize,
        wavefn_boundary: Boundary,
    ) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mass must be positive, got {mass}"
            )));
        }
        let n = one_body_potential.lattice().len();
        if two_body_potential.lattice().len() != n {
            return Err(Error::LatticeMismatch {
                expected: n,
                found: two_body_potential.lattice().len(),
            });
        }
        let dh = (two_body_potential.lattice().spacing()
            - one_body_potential.lattice().spacing())
        .abs();
        if dh > 1e-12 * one_body_potential.lattice().spacing() {
            return Err(Error::InvalidParameter(
                "distance grid spacing must match the spatial grid".into(),
            ));
        }
        if two_body_potential.get(0) != 0.0 {
            return Err(Error::InvalidParameter(
                "two-body potential must vanish at zero distance".into(),
            ));
        }
        if n_particles == 0 || n_particles >= n {
            return Err(Error::InvalidParameter(format!(
                "particle count {n_particles} not supported on {n} cells"
            )));
        }
        let interacting = two_body_potential.iter().any(|x| x != 0.0);
        if interacting && n_particles < 2 {
            return Err(Error::InvalidParameter(
                "interacting runs need at least two particles".into(),
            ));
        }
        Ok(Self {
            mass,
            one_body_potential,
            two_body_potential,
            n_particles,
            wavefn_boundary,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        self.one_body_potential.lattice()
    }

    pub fn distance_lattice(&self) -> &Lattice {
        self.two_body_potential.lattice()
    }

    fn one_body_operator(&self) -> LatticeOperator {
        let spec = HamiltonianSpec::new(
            self.mass,
            self.one_body_potential.clone(),
            self.wavefn_boundary,
        )
        .expect("validated mass");
        assemble_hamiltonian(&spec)
    }

    /// Interaction value at cell distance |i - j|.
    fn u(&self, i: usize, j: usize) -> f64 {
        self.two_body_potential.get(i.abs_diff(j))
    }
}

/// Accessor for antisymmetrized two-body matrix elements
/// <z z'|V|z'' z'''> = v(|z-z'|)(d(z,z'')d(z',z''') - d(z,z''')d(z',z''))
/// with lattice deltas d(a,b) = delta_ab / spacing.
pub struct TwoBodyElements<'a> {
    spec: &'a TwoBodySpec,
}

pub fn antisymmetrized_matrix_elements(spec: &TwoBodySpec) -> TwoBodyElements<'_> {
    TwoBodyElements { spec }
}

impl TwoBodyElements<'_> {
    /// Pointwise kernel element between lattice position states.
    pub fn element(&self, z: usize, zp: usize, zpp: usize, zppp: usize) -> f64 {
        let h = self.spec.lattice().spacing();
        let d = |a: usize, b: usize| if a == b { 1.0 / h } else { 0.0 };
        self.spec.u(z, zp) * (d(z, zpp) * d(zp, zppp) - d(z, zppp) * d(zp, zpp))
    }

    /// Contraction <a b|V|c d> over four orbitals under the discrete measure.
    pub fn orbital_element(
        &self,
        a: &DVector<f64>,
        b: &DVector<f64>,
        c: &DVector<f64>,
        d: &DVector<f64>,
    ) -> f64 {
        let n = self.spec.lattice().len();
        let h = self.spec.lattice().spacing();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let u = self.spec.u(i, j);
                if u == 0.0 {
                    continue;
                }
                acc += a[i] * b[j] * u * (c[i] * d[j] - c[j] * d[i]);
            }
        }
        acc * h * h
    }
}

/// Self-consistent solution: the full spectrum of the converged mean-field
/// Hamiltonian with the N lowest orbitals occupied.
#[derive(Debug, Clone)]
pub struct HartreeFockState {
    energies: Vec<f64>,
    orbitals: DMatrix<f64>,
    n_occ: usize,
    hf_ground_energy: f64,
    scf_residual: f64,
    iterations: usize,
    lattice: Lattice,
}

impl HartreeFockState {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn n_occupied(&self) -> usize {
        self.n_occ
    }

    /// All eigenvalues of the converged mean field, ascending.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn orbital_energies(&self) -> &[f64] {
        &self.energies[..self.n_occ]
    }

    pub fn orbital_value(&self, k: usize, i: usize) -> f64 {
        self.orbitals[(i, k)]
    }

    pub fn orbital(&self, k: usize) -> DVector<f64> {
        self.orbitals.column(k).into_owned()
    }

    pub fn hf_ground_energy(&self) -> f64 {
        self.hf_ground_energy
    }

    pub fn scf_residual(&self) -> f64 {
        self.scf_residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Mean-field matrix from a pair of orbital families: direct term on the
/// diagonal, exchange off-diagonal. The physical mean field is
/// sum_k pair_mean_field(phi_k, phi_k); its linearization in the orbital
/// response uses mixed pairs.
fn pair_mean_field(spec: &TwoBodySpec, a: &DMatrix<f64>, b: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let n = spec.lattice().len();
    let h = spec.lattice().spacing();
    let mut w = DMatrix::zeros(n, n);
    // Direct: diag_i = sum_z u(|i-z|) a(z) b(z) h.
    for i in 0..n {
        let mut acc = 0.0;
        for z in 0..n {
            let u = spec.u(i, z);
            if u == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for k in 0..count {
                s += a[(z, k)] * b[(z, k)];
            }
            acc += u * s;
        }
        w[(i, i)] = acc * h;
    }
    // Exchange: w_ij -= u(|i-j|) a(i) b(j) h, symmetrized over the pair.
    for i in 0..n {
        for j in 0..=i {
            let u = spec.u(i, j);
            if u == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for k in 0..count {
                s += 0.5 * (a[(i, k)] * b[(j, k)] + b[(i, k)] * a[(j, k)]);
            }
            let x = -u * s * h;
            w[(i, j)] += x;
            if i != j {
                w[(j, i)] += x;
            }
        }
    }
    w
}

fn occupied_matrix(state_orbitals: &DMatrix<f64>, n_occ: usize) -> DMatrix<f64> {
    state_orbitals.columns(0, n_occ).into_owned()
}

#[derive(Debug, Clone, Copy)]
pub struct ScfSettings {
    /// Linear mixing weight of the new mean field, in (0, 1].
    pub mixing: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the sup-norm change of the mean field.
    pub tolerance: f64,
}

impl Default for ScfSettings {
    fn default() -> Self {
        Self {
            mixing: 0.5,
            max_iterations: 500,
            tolerance: 1e-10,
        }
    }
}

/// Self-consistent field iteration with linear mean-field mixing and a
/// residual-oscillation fallback to a conservative mixing of 0.2.
pub fn scf_solve(spec: &TwoBodySpec, settings: &ScfSettings) -> Result<HartreeFockState> {
    if !(settings.mixing > 0.0 && settings.mixing <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "SCF mixing must lie in (0, 1], got {}",
            settings.mixing
        )));
    }
    let lattice = *spec.lattice();
    let n = lattice.len();
    let n_occ = spec.n_particles;
    let h0 = spec.one_body_operator();
    let mut w = DMatrix::<f64>::zeros(n, n);
    let mut mixing = settings.mixing;
    let mut prev_residual = f64::INFINITY;
    let mut rising = 0usize;
    let mut residual_trace = Vec::new();

    for iteration in 1..=settings.max_iterations {
        let hm = LatticeOperator::new(&lattice, h0.matrix() + &w, true)
            .expect("mean field stays symmetric");
        let dec = diagonalize(&hm)?;
        let range = dec.spectral_range();
        let fermi_gap = dec.energy(n_occ) - dec.energy(n_occ - 1);
        if fermi_gap.abs() < 1e-9 * range.max(1.0) {
            return Err(Error::FermiDegeneracy { gap: fermi_gap });
        }
        let occ = occupied_matrix(dec.orbitals(), n_occ);
        let w_new = pair_mean_field(spec, &occ, &occ, n_occ);
        let residual = (&w_new - &w).amax();
        residual_trace.push(residual);

        if residual < settings.tolerance {
            let elements = antisymmetrized_matrix_elements(spec);
            let hsp = lattice.spacing();
            let mut t_sum = 0.0;
            let mut v_sum = 0.0;
            for k in 0..n_occ {
                let phi_k = occ.column(k).into_owned();
                t_sum += (h0.matrix() * &phi_k).dot(&phi_k) * hsp;
                for l in 0..n_occ {
                    let phi_l = occ.column(l).into_owned();
                    v_sum += elements.orbital_element(&phi_k, &phi_l, &phi_k, &phi_l);
                }
            }
            return Ok(HartreeFockState {
                energies: dec.energies().to_vec(),
                orbitals: dec.orbitals().clone(),
                n_occ,
                hf_ground_energy: t_sum + 0.5 * v_sum,
                scf_residual: residual,
                iterations: iteration,
                lattice,
            });
        }

        if residual > prev_residual {
            rising += 1;
            if rising >= 2 {
                mixing = mixing.min(0.2);
                rising = 0;
            }
        } else {
            rising = 0;
        }
        prev_residual = residual;
        w += (w_new - &w) * mixing;
    }

    Err(Error::ScfNonConvergence {
        iterations: settings.max_iterations,
        last_residual: prev_residual,
        residual_trace,
    })
}

/// Both closed forms of the mean-field ground energy:
/// sum_k t_kk + 1/2 sum_kl v_klkl and sum_k eps_k - 1/2 sum_kl v_klkl.
pub fn ground_energy_formulas(spec: &TwoBodySpec, state: &HartreeFockState) -> (f64, f64) {
    let elements = antisymmetrized_matrix_elements(spec);
    let h0 = spec.one_body_operator();
    let hsp = spec.lattice().spacing();
    let mut t_sum = 0.0;
    let mut v_sum = 0.0;
    let mut eps_sum = 0.0;
    for k in 0..state.n_occ {
        let phi_k = state.orbital(k);
        t_sum += (h0.matrix() * &phi_k).dot(&phi_k) * hsp;
        eps_sum += state.energies[k];
        for l in 0..state.n_occ {
            let phi_l = state.orbital(l);
            v_sum += elements.orbital_element(&phi_k, &phi_l, &phi_k, &phi_l);
        }
    }
    (t_sum + 0.5 * v_sum, eps_sum - 0.5 * v_sum)
}

/// Overlap matrix of one measured coordinate tuple with the occupied
/// orbitals: B_kl = phi_k(x_l).
#[derive(Debug, Clone)]
pub struct SlaterOverlap {
    pub matrix: DMatrix<f64>,
    pub determinant: f64,
    pub inverse: Option<DMatrix<f64>>,
}

pub fn slater_overlap(state: &HartreeFockState, cells: &[usize]) -> SlaterOverlap {
    let n = state.n_occ;
    debug_assert_eq!(cells.len(), n);
    let matrix = DMatrix::from_fn(n, n, |k, l| state.orbital_value(k, cells[l]));
    // Coincident coordinates give identical columns: the determinant is an
    // exact zero by antisymmetry, not a numerical small number.
    for a in 0..n {
        for b in (a + 1)..n {
            if cells[a] == cells[b] {
                return SlaterOverlap {
                    matrix,
                    determinant: 0.0,
                    inverse: None,
                };
            }
        }
    }
    // Evaluate the determinant in a canonical column order (coordinates
    // ascending) and track the permutation parity, so that swapping two
    // coordinates flips the sign bit-exactly.
    let mut order: Vec<usize> = (0..n).collect();
    let mut parity = 1.0f64;
    for i in 1..n {
        let mut j = i;
        while j > 0 && cells[order[j - 1]] > cells[order[j]] {
            order.swap(j - 1, j);
            parity = -parity;
            j -= 1;
        }
    }
    let sorted = DMatrix::from_fn(n, n, |k, l| state.orbital_value(k, cells[order[l]]));
    let determinant = parity * sorted.lu().determinant();
    let inverse = matrix.clone().try_inverse();
    SlaterOverlap {
        matrix,
        determinant,
        inverse,
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Zero-temperature position likelihood of an ordered N-coordinate tuple:
/// |det B|^2 / N!, a density per unit length in each coordinate.
pub fn slater_likelihood(state: &HartreeFockState, cells: &[usize]) -> Result<f64> {
    if cells.len() != state.n_occ {
        return Err(Error::InvalidParameter(format!(
            "datum has {} coordinates, state holds {} particles",
            cells.len(),
            state.n_occ
        )));
    }
    let overlap = slater_overlap(state, cells);
    Ok(overlap.determinant * overlap.determinant / factorial(state.n_occ))
}

#[derive(Debug, Clone, Copy)]
pub struct ResponseSettings {
    /// Sup-norm change between successive response sweeps at convergence.
    pub tolerance: f64,
    /// Fixed-point sweeps before falling back to the direct linear solve.
    pub max_sweeps: usize,
}

impl Default for ResponseSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_sweeps: 400,
        }
    }
}

/// Partial derivative of the mean-field matrix with respect to the
/// interaction value at cell distance r, holding the orbitals fixed.
fn mean_field_interaction_derivative(state: &HartreeFockState, r: usize) -> DMatrix<f64> {
    let n = state.lattice.len();
    let h = state.lattice.spacing();
    let mut g = DMatrix::<f64>::zeros(n, n);
    let density = |z: usize| -> f64 {
        (0..state.n_occ)
            .map(|k| state.orbital_value(k, z) * state.orbital_value(k, z))
            .sum()
    };
    let overlap = |i: usize, j: usize| -> f64 {
        (0..state.n_occ)
            .map(|k| state.orbital_value(k, i) * state.orbital_value(k, j))
            .sum()
    };
    if r == 0 {
        // Direct and exchange cancel exactly: the contact value never acts
        // on spinless fermions.
        for i in 0..n {
            g[(i, i)] = h * density(i) - h * overlap(i, i);
        }
        return g;
    }
    for i in 0..n {
        let mut acc = 0.0;
        if i >= r {
            acc += density(i - r);
        }
        if i + r < n {
            acc += density(i + r);
        }
        g[(i, i)] = h * acc;
        // Each distance-r pair is visited exactly once from its upper index,
        // and both matrix entries are written from the same product.
        if i >= r {
            let x = -h * overlap(i, i - r);
            g[(i, i - r)] = x;
            g[(i - r, i)] = x;
        }
    }
    g
}

/// Orbital responses d phi_k / d v(r) (per unit length) for every occupied
/// orbital at one distance cell, solving the self-consistent linear system
/// by fixed-point sweeps with a dense direct solve fallback.
pub fn inverse_hf_gradient(
    spec: &TwoBodySpec,
    state: &HartreeFockState,
    r: usize,
    settings: &ResponseSettings,
) -> Result<Vec<DVector<f64>>> {
    let plain = orbital_responses_plain(spec, state, r, settings)?;
    let h = state.lattice.spacing();
    Ok(plain.into_iter().map(|v| v / h).collect())
}

/// Plain partial derivatives d phi_k / d v_r (no measure factor).
fn orbital_responses_plain(
    spec: &TwoBodySpec,
    state: &HartreeFockState,
    r: usize,
    settings: &ResponseSettings,
) -> Result<Vec<DVector<f64>>> {
    let n = state.lattice.len();
    let h = state.lattice.spacing();
    let n_occ = state.n_occ;
    let threshold = {
        let range = state.energies.last().unwrap() - state.energies[0];
        1e-8 * range.max(1.0)
    };
    let g = mean_field_interaction_derivative(state, r);

    // Resolvent projection: y -> sum_l phi_l <phi_l|y> / (eps_k - eps_l)
    // over levels separated from eps_k by more than the threshold.
    let project = |k: usize, y: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(n);
        let eps_k = state.energies[k];
        for l in 0..n {
            let gap = eps_k - state.energies[l];
            if gap.abs() < threshold {
                continue;
            }
            let phi_l = state.orbitals.column(l);
            let c = h * phi_l.dot(y) / gap;
            out.axpy(c, &phi_l.into_owned(), 1.0);
        }
        out
    };

    let occ = occupied_matrix(&state.orbitals, n_occ);
    let bare: Vec<DVector<f64>> = (0..n_occ)
        .map(|k| project(k, &(&g * occ.column(k).into_owned())))
        .collect();

    // The interaction couples responses only through the mean-field
    // linearization; with a zero kernel the bare term is already exact.
    if spec.two_body_potential.iter().all(|x| x == 0.0) {
        return Ok(bare);
    }

    let apply_t = |resp: &[DVector<f64>]| -> Vec<DVector<f64>> {
        let mut resp_mat = DMatrix::zeros(n, n_occ);
        for (k, rk) in resp.iter().enumerate() {
            resp_mat.set_column(k, rk);
        }
        let dw = pair_mean_field(spec, &resp_mat, &occ, n_occ) * 2.0;
        (0..n_occ)
            .map(|k| project(k, &(&dw * occ.column(k).into_owned())))
            .collect()
    };

    let mut resp = bare.clone();
    for _ in 0..settings.max_sweeps {
        let coupled = apply_t(&resp);
        let mut next = Vec::with_capacity(n_occ);
        let mut delta = 0.0f64;
        for k in 0..n_occ {
            let nk = &bare[k] + &coupled[k];
            delta = delta.max((&nk - &resp[k]).amax());
            next.push(nk);
        }
        resp = next;
        if delta < settings.tolerance {
            return Ok(resp);
        }
    }

    // Fixed point stalled: assemble the dense linear system (I - T) x = b
    // column by column and solve it directly.
    let dim = n_occ * n;
    let mut m = DMatrix::identity(dim, dim);
    let mut basis = vec![DVector::zeros(n); n_occ];
    for col in 0..dim {
        let (k, i) = (col / n, col % n);
        basis[k][i] = 1.0;
        let t = apply_t(&basis);
        basis[k][i] = 0.0;
        for kk in 0..n_occ {
            for ii in 0..n {
                m[(kk * n + ii, col)] -= t[kk][ii];
            }
        }
    }
    let mut b = DVector::zeros(dim);
    for k in 0..n_occ {
        for i in 0..n {
            b[k * n + i] = bare[k][i];
        }
    }
    let x = m.lu().solve(&b).ok_or(Error::ResponseNonConvergence {
        iterations: settings.max_sweeps,
        last_residual: f64::NAN,
    })?;
    Ok((0..n_occ)
        .map(|k| DVector::from_iterator(n, (0..n).map(|i| x[k * n + i])))
        .collect())
}

/// Maps every datum of an N-tuple dataset to lattice cells, rejecting
/// coincident coordinates and arity mismatches.
pub fn tuple_cells(data: &Dataset, state_particles: usize, lattice: &Lattice) -> Result<Vec<Vec<usize>>> {
    let cells = data.cells(lattice)?;
    for (index, c) in cells.iter().enumerate() {
        if c.len() != state_particles {
            return Err(Error::InvalidParameter(format!(
                "datum {index} has {} coordinates, expected {state_particles}",
                c.len()
            )));
        }
        for a in 0..c.len() {
            for b in (a + 1)..c.len() {
                if c[a] == c[b] {
                    return Err(Error::CoincidentCoordinates { index });
                }
            }
        }
    }
    Ok(cells)
}

/// Gradient of the summed Slater log likelihood with respect to the
/// interaction values v(r): 2 sum_i Tr(B_i^{-1} Delta_i(r)) for real
/// orbitals.
pub fn hf_log_likelihood_gradient(
    spec: &TwoBodySpec,
    state: &HartreeFockState,
    data: &Dataset,
    settings: &ResponseSettings,
) -> Result<GradientField> {
    let cells = tuple_cells(data, state.n_occ, &state.lattice)?;
    hf_log_likelihood_gradient_cells(spec, state, &cells, settings)
}

fn hf_log_likelihood_gradient_cells(
    spec: &TwoBodySpec,
    state: &HartreeFockState,
    cells: &[Vec<usize>],
    settings: &ResponseSettings,
) -> Result<GradientField> {
    let n = state.lattice.len();
    let n_occ = state.n_occ;
    let h = state.lattice.spacing();

    let mut inverses = Vec::with_capacity(cells.len());
    for (index, tuple) in cells.iter().enumerate() {
        let overlap = slater_overlap(state, tuple);
        let inv = overlap
            .inverse
            .filter(|_| overlap.determinant != 0.0)
            .ok_or(Error::SingularOverlap { index })?;
        inverses.push(inv);
    }

    let mut grad = DVector::zeros(n);
    for r in 0..n {
        let responses = orbital_responses_plain(spec, state, r, settings)?;
        let mut acc = 0.0;
        for (tuple, inv) in cells.iter().zip(&inverses) {
            // Tr(B^{-1} Delta) with Delta_kl = d phi_k(x_l) / d v_r.
            let mut tr = 0.0;
            for l in 0..n_occ {
                for k in 0..n_occ {
                    tr += inv[(l, k)] * responses[k][tuple[l]];
                }
            }
            acc += 2.0 * tr;
        }
        grad[r] = acc / h;
    }
    Ok(GradientField::new(&state.lattice, grad, 0.0))
}

/// Exact ground energy and normalized pair density of the two-fermion
/// problem, by dense diagonalization in the antisymmetric subspace.
pub fn exact_two_body(spec: &TwoBodySpec) -> Result<(f64, DMatrix<f64>)> {
    if spec.n_particles != 2 {
        return Err(Error::InvalidParameter(
            "exact diagonalization is implemented for two particles".into(),
        ));
    }
    let n = spec.lattice().len();
    if n * n > 4096 {
        return Err(Error::InvalidParameter(format!(
            "product lattice with {} cells exceeds the dense solver guard",
            n * n
        )));
    }
    let h1 = spec.one_body_operator();
    let h1m = h1.matrix();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let index: std::collections::HashMap<(usize, usize), usize> = pairs
        .iter()
        .enumerate()
        .map(|(idx, &p)| (p, idx))
        .collect();
    let m = pairs.len();
    let mut h2 = DMatrix::<f64>::zeros(m, m);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        h2[(row, row)] +=
            spec.one_body_potential.get(i) + spec.one_body_potential.get(j) + spec.u(i, j);
        // Kinetic hops in either coordinate, with the antisymmetric sign.
        for p in 0..n {
            let t = h1m[(i, p)] - if p == i { spec.one_body_potential.get(i) } else { 0.0 };
            if t != 0.0 && p != j {
                let (a, b, sign) = if p < j { (p, j, 1.0) } else { (j, p, -1.0) };
                h2[(row, index[&(a, b)])] += sign * t;
            }
            let t = h1m[(j, p)] - if p == j { spec.one_body_potential.get(j) } else { 0.0 };
            if t != 0.0 && p != i {
                let (a, b, sign) = if i < p { (i, p, 1.0) } else { (p, i, -1.0) };
                h2[(row, index[&(a, b)])] += sign * t;
            }
        }
    }
    // The restriction of a symmetric operator to the antisymmetric subspace
    // is symmetric; enforce exactness against accumulation order.
    for i in 0..m {
        for j in (i + 1)..m {
            let s = 0.5 * (h2[(i, j)] + h2[(j, i)]);
            h2[(i, j)] = s;
            h2[(j, i)] = s;
        }
    }
    let eig = h2
        .try_symmetric_eigen(f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Eigensolver("two-body eigensolve did not converge".into()))?;
    let mut ground = 0usize;
    for idx in 1..m {
        if eig.eigenvalues[idx] < eig.eigenvalues[ground] {
            ground = idx;
        }
    }
    let energy = eig.eigenvalues[ground];
    let c = eig.eigenvectors.column(ground);
    let hsp = spec.lattice().spacing();
    let norm: f64 = 2.0 * c.iter().map(|x| x * x).sum::<f64>() * hsp * hsp;
    let mut density = DMatrix::zeros(n, n);
    for (idx, &(i, j)) in pairs.iter().enumerate() {
        let d = c[idx] * c[idx] / norm;
        density[(i, j)] = d;
        density[(j, i)] = d;
    }
    Ok((energy, density))
}

/// Distance density per unit length of an ordered-pair density.
pub fn pair_distance_density(
    pair_density: &DMatrix<f64>,
    distance_lattice: &Lattice,
) -> LatticeField {
    let n = pair_density.nrows();
    let h = distance_lattice.spacing();
    let mut f = LatticeField::zeros(distance_lattice);
    for i in 0..n {
        for j in 0..n {
            let r = i.abs_diff(j);
            f.set(r, f.get(r) + pair_density[(i, j)] * h);
        }
    }
    f
}

/// Pair density of the mean-field ground state for two particles.
pub fn hf_pair_density(state: &HartreeFockState) -> Result<DMatrix<f64>> {
    if state.n_occ != 2 {
        return Err(Error::InvalidParameter(
            "pair density is implemented for two particles".into(),
        ));
    }
    let n = state.lattice.len();
    let mut d = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let det = state.orbital_value(0, a) * state.orbital_value(1, b)
                - state.orbital_value(0, b) * state.orbital_value(1, a);
            d[(a, b)] = det * det / 2.0;
        }
    }
    Ok(d)
}

/// Inverse mean-field reconstruction problem: recover v(r) from N-particle
/// position tuples at zero temperature.
#[derive(Debug, Clone)]
pub struct HartreeFockProblem {
    pub mass: f64,
    pub one_body_potential: LatticeField,
    pub n_particles: usize,
    pub wavefn_boundary: Boundary,
    pub data: Dataset,
    /// Prior over v(r) on the distance lattice.
    pub prior: GaussianPrior,
    /// Optional soft constraint on the mean-field ground energy.
    pub penalty: Option<EnergyPenalty>,
    pub scf: ScfSettings,
    pub response: ResponseSettings,
}

impl HartreeFockProblem {
    fn spec_with(&self, v: &LatticeField) -> Result<TwoBodySpec> {
        TwoBodySpec::new(
            self.mass,
            self.one_body_potential.clone(),
            v.clone(),
            self.n_particles,
            self.wavefn_boundary,
        )
    }

    fn evaluate(
        &self,
        v: &LatticeField,
        cells: &[Vec<usize>],
    ) -> Result<Option<(f64, HartreeFockState)>> {
        let spec = self.spec_with(v)?;
        let state = match scf_solve(&spec, &self.scf) {
            Ok(s) => s,
            Err(Error::ScfNonConvergence { .. }) | Err(Error::FermiDegeneracy { .. }) => {
                return Ok(None)
            }
            Err(e) => return Err(e),
        };
        let mut lp = 0.0;
        for tuple in cells {
            let p = slater_likelihood(&state, tuple)?;
            if !(p > 1e-300) {
                return Ok(None);
            }
            lp += p.ln();
        }
        let (prior_value, _) = gaussian_log_density(&self.prior, v)?;
        lp += prior_value;
        if let Some(pen) = &self.penalty {
            lp -= energy_penalty_value(pen, state.hf_ground_energy);
        }
        Ok(Some((lp, state)))
    }

    fn gradient(
        &self,
        v: &LatticeField,
        state: &HartreeFockState,
        cells: &[Vec<usize>],
    ) -> Result<GradientField> {
        let spec = self.spec_with(v)?;
        let ll = hf_log_likelihood_gradient_cells(&spec, state, cells, &self.response)?;
        let (_, prior_grad) = gaussian_log_density(&self.prior, v)?;
        let mut g = ll.values() + prior_grad.values();
        if let Some(pen) = &self.penalty {
            let de0 = hf_energy_interaction_gradient(state);
            let scale = pen.mu * (state.hf_ground_energy - pen.kappa);
            g -= de0.values() * scale;
        }
        Ok(GradientField::new(v.lattice(), g, 0.0))
    }
}

/// Gradient of the mean-field ground energy with respect to the interaction
/// values, holding the orbitals fixed (exact at self-consistency, where the
/// orbital relaxation terms vanish variationally).
fn hf_energy_interaction_gradient(state: &HartreeFockState) -> GradientField {
    let n = state.lattice.len();
    let h = state.lattice.spacing();
    let n_occ = state.n_occ;
    let mut g = DVector::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let r = i.abs_diff(j);
            let mut acc = 0.0;
            for k in 0..n_occ {
                for l in 0..n_occ {
                    let direct = state.orbital_value(k, i) * state.orbital_value(l, j);
                    let exch = state.orbital_value(k, j) * state.orbital_value(l, i);
                    acc += direct * (direct - exch);
                }
            }
            g[r] += 0.5 * acc * h * h;
        }
    }
    GradientField::new(&state.lattice, g / h, 0.0)
}

/// Outer maximum-posterior loop over the interaction: each evaluation runs
/// the SCF solver, each gradient solves the orbital response system. SCF
/// failures inside a trial step reject the step. v(0) and the last distance
/// cell stay pinned at their initial-guess values.
pub fn hf_reconstruct(
    problem: &HartreeFockProblem,
    config: &OptimizerConfig,
) -> Result<ReconstructionResult> {
    config.validate()?;
    let lattice = *problem.prior.lattice();
    let n = lattice.len();
    let cells = tuple_cells(&problem.data, problem.n_particles, problem.one_body_potential.lattice())?;
    let free: Vec<usize> = (1..n - 1).collect();

    let mut v = match &config.initial_guess {
        InitialGuess::Reference => problem.prior.mean().clone(),
        InitialGuess::Custom(f) => f.clone(),
        InitialGuess::DeltaPeaks => {
            return Err(Error::InvalidParameter(
                "delta-peak guesses are not defined for interaction reconstruction".into(),
            ))
        }
    };
    v.set(0, 0.0);

    let solver = match &config.preconditioner {
        Preconditioner::Identity => None,
        Preconditioner::PriorOperator => Some(FreeCellSolver::new(
            &(problem.prior.inv_covariance().matrix() * problem.prior.scale()),
            &free,
        )?),
        Preconditioner::Custom(op) => Some(FreeCellSolver::new(op.matrix(), &free)?),
    };

    let (mut lp, mut state) = problem
        .evaluate(&v, &cells)?
        .ok_or_else(|| Error::Numerical("initial interaction guess is not solvable".into()))?;
    let mut trace = vec![lp];
    let mut eta = config.step_eta;
    let mut iterations_used = 0;
    let mut stop_reason = StopReason::MaxIterations;
    let mut final_gradient_norm = f64::INFINITY;

    for iteration in 0..config.max_iterations {
        let grad = problem.gradient(&v, &state, &cells)?;
        let gnorm = free
            .iter()
            .map(|&i| grad.get(i).abs())
            .fold(0.0f64, f64::max);
        final_gradient_norm = gnorm;
        if gnorm < config.gradient_tolerance {
            stop_reason = StopReason::GradientTolerance;
            break;
        }
        let direction = match &solver {
            Some(s) => s.solve(grad.values()),
            None => {
                let mut d = DVector::zeros(n);
                for &i in &free {
                    d[i] = grad.get(i);
                }
                d
            }
        };

        let mut accepted = None;
        let mut best_trial = f64::NEG_INFINITY;
        let mut eta_try = eta;
        let mut shrinks = 0;
        while shrinks <= 30 {
            let v_try = LatticeField::from_vector(&lattice, v.values() + &direction * eta_try);
            if let Some((lp_try, state_try)) = problem.evaluate(&v_try, &cells)? {
                if lp_try.is_finite() {
                    best_trial = best_trial.max(lp_try);
                }
                if lp_try.is_finite() && lp_try >= lp {
                    accepted = Some((v_try, lp_try, state_try, eta_try));
                    break;
                }
            }
            eta_try *= config.step_shrink;
            shrinks += 1;
        }
        let Some((v_new, lp_new, state_new, eta_used)) = accepted else {
            // No measurable progress left: see the quantum loop.
            let resolution = config.posterior_tolerance * lp.abs().max(1.0);
            if best_trial >= lp - resolution {
                stop_reason = StopReason::PosteriorPlateau;
                break;
            }
            return Err(Error::LineSearchStall {
                iteration,
                shrinks: 30,
                trace,
            });
        };
        v = v_new;
        lp = lp_new;
        state = state_new;
        eta = (eta_used * config.step_growth).min(1.0);
        trace.push(lp);
        iterations_used = iteration + 1;

        if trace.len() >= 4 {
            let recent = &trace[trace.len() - 4..];
            if (recent[3] - recent[0]).abs()
                < config.posterior_tolerance * recent[3].abs().max(1.0)
            {
                stop_reason = StopReason::PosteriorPlateau;
                break;
            }
        }
    }

    Ok(ReconstructionResult {
        potential: v,
        log_posterior_trace: trace,
        final_gradient_norm,
        iterations_used,
        stop_reason,
        summary: RunSummary {
            average_energy: state.hf_ground_energy,
            ground_energy: state.hf_ground_energy,
            log_partition: 0.0,
        },
        responsibilities: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Observable, Provenance};
    use crate::lattice::build_laplacian;

    fn spatial(n: usize) -> Lattice {
        Lattice::new(n, 1.0, 0.0, Boundary::Dirichlet).unwrap()
    }

    fn distance_lattice(n: usize) -> Lattice {
        Lattice::new(n, 1.0, 0.0, Boundary::Dirichlet).unwrap()
    }

    fn smooth_interaction(l: &Lattice, scale: f64) -> LatticeField {
        let mut v = LatticeField::from_fn(l, |r| scale * (1.0 - (-0.15 * r * r).exp()));
        v.set(0, 0.0);
        v
    }

    fn harmonic_one_body(l: &Lattice, a: f64) -> LatticeField {
        let mid = 0.5 * (l.coord(0) + l.coord(l.len() - 1));
        LatticeField::from_fn(l, |x| a * (x - mid) * (x - mid))
    }

    fn spec(n: usize, mass: f64, n_particles: usize, interaction_scale: f64) -> TwoBodySpec {
        let sl = spatial(n);
        let dl = distance_lattice(n);
        TwoBodySpec::new(
            mass,
            harmonic_one_body(&sl, 0.01),
            smooth_interaction(&dl, interaction_scale),
            n_particles,
            Boundary::Dirichlet,
        )
        .unwrap()
    }

    #[test]
    fn elements_vanish_for_zero_interaction() {
        let s = spec(8, 0.5, 2, 0.0);
        let e = antisymmetrized_matrix_elements(&s);
        for z in 0..8 {
            for zp in 0..8 {
                assert_eq!(e.element(z, zp, z, zp), 0.0);
            }
        }
    }

    #[test]
    fn elements_are_antisymmetric_in_the_kets() {
        let s = spec(8, 0.5, 2, 2.0);
        let e = antisymmetrized_matrix_elements(&s);
        for z in 0..8 {
            for zp in 0..8 {
                for zpp in 0..8 {
                    for zppp in 0..8 {
                        let a = e.element(z, zp, zpp, zppp);
                        let b = e.element(z, zp, zppp, zpp);
                        assert_eq!(a, -b);
                    }
                }
            }
        }
    }

    #[test]
    fn orbital_elements_match_brute_force_tensor() {
        let s = spec(8, 0.5, 2, 1.7);
        let e = antisymmetrized_matrix_elements(&s);
        let h = s.lattice().spacing();
        let n = 8;
        let mk = |f: fn(f64) -> f64| {
            DVector::from_iterator(n, (0..n).map(|i| f(i as f64 / n as f64)))
        };
        let a = mk(|t| (3.0 * t).sin() + 0.2);
        let b = mk(|t| t * t - 0.5);
        let c = mk(|t| (2.0 * t).cos());
        let d = mk(|t| 0.7 * t + 0.1);
        // Brute force over the full 4-index tensor with measure h per index.
        let mut expect = 0.0;
        for z in 0..n {
            for zp in 0..n {
                for zpp in 0..n {
                    for zppp in 0..n {
                        expect += a[z]
                            * b[zp]
                            * e.element(z, zp, zpp, zppp)
                            * c[zpp]
                            * d[zppp]
                            * h.powi(4);
                    }
                }
            }
        }
        let got = e.orbital_element(&a, &b, &c, &d);
        assert!((got - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn non_interacting_scf_reproduces_one_body_solution() {
        let s = spec(16, 0.5, 3, 0.0);
        let state = scf_solve(&s, &ScfSettings::default()).unwrap();
        assert_eq!(state.iterations, 1);
        let one_body = diagonalize(&s.one_body_operator()).unwrap();
        let expect: f64 = one_body.energies()[..3].iter().sum();
        assert!((state.hf_ground_energy - expect).abs() < 1e-10);
        for k in 0..3 {
            assert!((state.energies[k] - one_body.energy(k)).abs() < 1e-10);
            let diff = (state.orbital(k) - one_body.orbital(k)).amax();
            assert!(diff < 1e-9, "orbital {k}: {diff}");
        }
    }

    #[test]
    fn both_ground_energy_formulas_agree_at_convergence() {
        let s = spec(14, 0.4, 2, 1.2);
        let state = scf_solve(
            &s,
            &ScfSettings {
                tolerance: 1e-12,
                ..ScfSettings::default()
            },
        )
        .unwrap();
        let (ea, eb) = ground_energy_formulas(&s, &state);
        assert!((ea - eb).abs() < 1e-9, "{ea} vs {eb}");
        assert!((state.hf_ground_energy - ea).abs() < 1e-12);
    }

    #[test]
    fn scf_is_self_consistent_at_convergence() {
        let s = spec(14, 0.4, 2, 1.5);
        let settings = ScfSettings {
            tolerance: 1e-11,
            ..ScfSettings::default()
        };
        let state = scf_solve(&s, &settings).unwrap();
        let occ = occupied_matrix(&state.orbitals, 2);
        let w = pair_mean_field(&s, &occ, &occ, 2);
        let h0 = s.one_body_operator();
        let rebuilt = LatticeOperator::new(s.lattice(), h0.matrix() + w, true).unwrap();
        let dec = diagonalize(&rebuilt).unwrap();
        for k in 0..2 {
            assert!(
                (dec.energy(k) - state.energies[k]).abs() < 1e-8,
                "level {k}"
            );
        }
    }

    #[test]
    fn pauli_zero_and_swap_symmetry() {
        let s = spec(12, 0.5, 2, 1.0);
        let state = scf_solve(&s, &ScfSettings::default()).unwrap();
        assert_eq!(slater_likelihood(&state, &[5, 5]).unwrap(), 0.0);
        let a = slater_likelihood(&state, &[3, 8]).unwrap();
        let b = slater_likelihood(&state, &[8, 3]).unwrap();
        assert!((a - b).abs() < 1e-14 * a.max(1e-300));
    }

    #[test]
    fn determinant_changes_sign_under_column_swap() {
        // The canonical-order evaluation makes the sign flip bit-exact for
        // any permutation of the coordinates.
        let s = spec(12, 0.5, 3, 0.8);
        let state = scf_solve(&s, &ScfSettings::default()).unwrap();
        let base = slater_overlap(&state, &[2, 6, 9]).determinant;
        for (cells, parity) in [
            ([6usize, 2, 9], -1.0),
            ([9, 6, 2], -1.0),
            ([6, 9, 2], 1.0),
            ([2, 9, 6], -1.0),
            ([9, 2, 6], 1.0),
        ] {
            let d = slater_overlap(&state, &cells).determinant;
            assert_eq!(d, parity * base, "cells {cells:?}");
        }
    }

    #[test]
    fn fermi_level_degeneracy_is_a_typed_error() {
        // Free fermions on a ring: the first excited level is doubly
        // degenerate, so two particles cannot fill a closed shell.
        let sl = Lattice::new(12, 1.0, 0.0, Boundary::Periodic).unwrap();
        let dl = distance_lattice(12);
        let s = TwoBodySpec::new(
            0.5,
            LatticeField::zeros(&sl),
            LatticeField::zeros(&dl),
            2,
            Boundary::Periodic,
        )
        .unwrap();
        assert!(matches!(
            scf_solve(&s, &ScfSettings::default()),
            Err(Error::FermiDegeneracy { .. })
        ));
    }

    #[test]
    fn scf_non_convergence_carries_the_residual_trace() {
        let s = spec(12, 0.5, 2, 1.5);
        let starved = ScfSettings {
            max_iterations: 2,
            tolerance: 1e-14,
            ..ScfSettings::default()
        };
        match scf_solve(&s, &starved) {
            Err(Error::ScfNonConvergence {
                iterations,
                residual_trace,
                ..
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(residual_trace.len(), 2);
            }
            other => panic!("expected SCF non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn noninteracting_pair_likelihood_matches_hand_determinant() {
        let s = spec(10, 0.5, 2, 0.0);
        let state = scf_solve(&s, &ScfSettings::default()).unwrap();
        let one_body = diagonalize(&s.one_body_operator()).unwrap();
        for a in 0..10 {
            for b in 0..10 {
                let det = one_body.orbital_value(0, a) * one_body.orbital_value(1, b)
                    - one_body.orbital_value(0, b) * one_body.orbital_value(1, a);
                let expect = det * det / 2.0;
                let got = slater_likelihood(&state, &[a, b]).unwrap();
                assert!((got - expect).abs() < 1e-10 * expect.max(1e-12));
            }
        }
    }

    #[test]
    fn slater_likelihood_normalizes_over_ordered_tuples() {
        for (n, particles) in [(8usize, 2usize), (6, 3)] {
            let s = spec(n, 0.5, particles, 0.9);
            let state = scf_solve(&s, &ScfSettings::default()).unwrap();
            let h = s.lattice().spacing();
            let mut total = 0.0;
            let mut tuple = vec![0usize; particles];
            loop {
                total += slater_likelihood(&state, &tuple).unwrap() * h.powi(particles as i32);
                let mut pos = particles;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    tuple[pos] += 1;
                    if tuple[pos] < n {
                        break;
                    }
                    tuple[pos] = 0;
                }
                if tuple.iter().all(|&t| t == 0) {
                    break;
                }
            }
            assert!((total - 1.0).abs() < 1e-10, "N={particles}: {total}");
        }
    }

    #[test]
    fn zero_interaction_response_is_the_bare_term() {
        let s = spec(12, 0.5, 2, 0.0);
        let state = scf_solve(&s, &ScfSettings::default()).unwrap();
        let settings = ResponseSettings::default();
        let resp = orbital_responses_plain(&s, &state, 3, &settings).unwrap();
        // Rebuild the bare term by hand from the derivative kernel.
        let g = mean_field_interaction_derivative(&state, 3);
        let h = s.lattice().spacing();
        let range = state.energies.last().unwrap() - state.energies[0];
        for k in 0..2 {
            let mut bare = DVector::zeros(12);
            let y = &g * state.orbital(k);
            for l in 0..12 {
                let gap = state.energies[k] - state.energies[l];
                if gap.abs() < 1e-8 * range.max(1.0) {
                    continue;
                }
                bare.axpy(h * state.orbital(l).dot(&y) / gap, &state.orbital(l), 1.0);
            }
            assert!((&resp[k] - bare).amax() < 1e-14);
        }
    }

    #[test]
    fn responses_stay_orthogonal_to_their_orbitals() {
        let s = spec(12, 0.5, 2, 1.4);
        let state = scf_solve(
            &s,
            &ScfSettings {
                tolerance: 1e-12,
                ..ScfSettings::default()
            },
        )
        .unwrap();
        let h = s.lattice().spacing();
        for r in [1usize, 4, 7] {
            let resp = inverse_hf_gradient(&s, &state, r, &ResponseSettings::default()).unwrap();
            for k in 0..2 {
                let overlap = state.orbital(k).dot(&resp[k]) * h;
                assert!(overlap.abs() < 1e-8, "r {r} k {k}: {overlap}");
            }
        }
    }

    fn tuple_dataset(tuples: Vec<Vec<f64>>, n: usize) -> Dataset {
        Dataset::new(
            Observable::PositionTuple(n),
            1.0,
            tuples,
            Provenance::Ingested { path: "t".into() },
        )
        .unwrap()
    }

    fn scf_tight() -> ScfSettings {
        ScfSettings {
            tolerance: 1e-12,
            max_iterations: 2000,
            ..ScfSettings::default()
        }
    }

    fn likelihood_sum(problem_spec: &TwoBodySpec, cells: &[Vec<usize>]) -> f64 {
        let state = scf_solve(problem_spec, &scf_tight()).unwrap();
        cells
            .iter()
            .map(|t| slater_likelihood(&state, t).unwrap().ln())
            .sum()
    }

    #[test]
    fn hf_likelihood_gradient_matches_finite_differences_two_particles() {
        let s = spec(12, 0.5, 2, 1.1);
        let state = scf_solve(&s, &scf_tight()).unwrap();
        let cells = vec![vec![2usize, 7], vec![4, 9], vec![3, 5], vec![8, 2]];
        let g =
            hf_log_likelihood_gradient_cells(&s, &state, &cells, &ResponseSettings::default())
                .unwrap();
        let h = s.distance_lattice().spacing();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let mut fd_scale: f64 = 0.0;
        let mut fd = vec![0.0; 12];
        for r in 1..11 {
            let mut vp = s.two_body_potential.clone();
            vp.set(r, vp.get(r) + eps);
            let sp = TwoBodySpec::new(0.5, s.one_body_potential.clone(), vp, 2, Boundary::Dirichlet)
                .unwrap();
            let mut vm = s.two_body_potential.clone();
            vm.set(r, vm.get(r) - eps);
            let sm = TwoBodySpec::new(0.5, s.one_body_potential.clone(), vm, 2, Boundary::Dirichlet)
                .unwrap();
            fd[r] = (likelihood_sum(&sp, &cells) - likelihood_sum(&sm, &cells)) / (2.0 * eps * h);
            fd_scale = fd_scale.max(fd[r].abs());
        }
        for r in 1..11 {
            worst = worst.max((g.get(r) - fd[r]).abs());
        }
        assert!(worst < 1e-3 * fd_scale.max(1e-12), "worst {worst}, scale {fd_scale}");
    }

    #[test]
    fn hf_likelihood_gradient_matches_finite_differences_three_particles() {
        let s = spec(10, 0.5, 3, 0.9);
        let state = scf_solve(&s, &scf_tight()).unwrap();
        let cells = vec![vec![1usize, 4, 8], vec![2, 6, 9]];
        let g =
            hf_log_likelihood_gradient_cells(&s, &state, &cells, &ResponseSettings::default())
                .unwrap();
        let h = s.distance_lattice().spacing();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let mut fd_scale: f64 = 0.0;
        let mut diffs = Vec::new();
        for r in 1..9 {
            let mut vp = s.two_body_potential.clone();
            vp.set(r, vp.get(r) + eps);
            let sp = TwoBodySpec::new(0.5, s.one_body_potential.clone(), vp, 3, Boundary::Dirichlet)
                .unwrap();
            let mut vm = s.two_body_potential.clone();
            vm.set(r, vm.get(r) - eps);
            let sm = TwoBodySpec::new(0.5, s.one_body_potential.clone(), vm, 3, Boundary::Dirichlet)
                .unwrap();
            let fd = (likelihood_sum(&sp, &cells) - likelihood_sum(&sm, &cells)) / (2.0 * eps * h);
            fd_scale = fd_scale.max(fd.abs());
            diffs.push((r, fd));
        }
        for (r, fd) in diffs {
            worst = worst.max((g.get(r) - fd).abs());
        }
        assert!(worst < 1e-3 * fd_scale.max(1e-12), "worst {worst}");
    }

    #[test]
    fn zero_likelihood_tuple_is_rejected_at_ingestion() {
        let sl = spatial(10);
        let data = tuple_dataset(vec![vec![sl.coord(3), sl.coord(3)]], 2);
        assert!(matches!(
            tuple_cells(&data, 2, &sl),
            Err(Error::CoincidentCoordinates { index: 0 })
        ));
    }

    #[test]
    fn exact_two_body_noninteracting_limit() {
        let s = spec(12, 0.5, 2, 0.0);
        let (e, density) = exact_two_body(&s).unwrap();
        let one_body = diagonalize(&s.one_body_operator()).unwrap();
        let expect = one_body.energy(0) + one_body.energy(1);
        assert!((e - expect).abs() < 1e-9, "{e} vs {expect}");
        let h = s.lattice().spacing();
        let total: f64 = density.sum() * h * h;
        assert!((total - 1.0).abs() < 1e-10);
        for i in 0..12 {
            assert_eq!(density[(i, i)], 0.0);
        }
    }

    #[test]
    fn exact_two_body_guard_rejects_large_grids() {
        let sl = Lattice::new(70, 1.0, 0.0, Boundary::Dirichlet).unwrap();
        let dl = Lattice::new(70, 1.0, 0.0, Boundary::Dirichlet).unwrap();
        let s = TwoBodySpec::new(
            1.0,
            LatticeField::zeros(&sl),
            LatticeField::zeros(&dl),
            2,
            Boundary::Dirichlet,
        )
        .unwrap();
        assert!(exact_two_body(&s).is_err());
    }

    #[test]
    fn variational_bound_on_a_weak_interaction() {
        let s = spec(12, 0.5, 2, 0.6);
        let state = scf_solve(&s, &scf_tight()).unwrap();
        let (exact, _) = exact_two_body(&s).unwrap();
        assert!(
            state.hf_ground_energy >= exact - 1e-9,
            "HF {} below exact {exact}",
            state.hf_ground_energy
        );
    }

    #[test]
    fn hf_reconstruct_with_zero_data_returns_the_reference() {
        let n = 12;
        let dl = distance_lattice(n);
        let mut v0 = LatticeField::from_fn(&dl, |r| 0.4 * r / (1.0 + r));
        v0.set(0, 0.0);
        let problem = HartreeFockProblem {
            mass: 0.5,
            one_body_potential: harmonic_one_body(&spatial(n), 0.01),
            n_particles: 2,
            wavefn_boundary: Boundary::Dirichlet,
            data: tuple_dataset(vec![], 2),
            prior: GaussianPrior::new(
                v0.clone(),
                LatticeOperator::new(&dl, -build_laplacian(&dl).matrix(), true).unwrap(),
                0.01,
            )
            .unwrap(),
            penalty: None,
            scf: ScfSettings::default(),
            response: ResponseSettings::default(),
        };
        let result = hf_reconstruct(&problem, &OptimizerConfig::default()).unwrap();
        for i in 0..n {
            assert!(
                (result.potential.get(i) - v0.get(i)).abs() < 1e-8,
                "cell {i}"
            );
        }
    }

    #[test]
    fn energy_penalty_gradient_matches_finite_differences() {
        let s = spec(10, 0.5, 2, 1.3);
        let state = scf_solve(&s, &scf_tight()).unwrap();
        let g = hf_energy_interaction_gradient(&state);
        let h = s.distance_lattice().spacing();
        let eps = 1e-5;
        for r in [2usize, 5] {
            let mut vp = s.two_body_potential.clone();
            vp.set(r, vp.get(r) + eps);
            let sp = TwoBodySpec::new(0.5, s.one_body_potential.clone(), vp, 2, Boundary::Dirichlet)
                .unwrap();
            let mut vm = s.two_body_potential.clone();
            vm.set(r, vm.get(r) - eps);
            let sm = TwoBodySpec::new(0.5, s.one_body_potential.clone(), vm, 2, Boundary::Dirichlet)
                .unwrap();
            let ep = scf_solve(&sp, &scf_tight()).unwrap().hf_ground_energy;
            let em = scf_solve(&sm, &scf_tight()).unwrap().hf_ground_energy;
            let fd = (ep - em) / (2.0 * eps * h);
            assert!(
                (g.get(r) - fd).abs() < 1e-3 * fd.abs().max(1.0),
                "r {r}: {} vs {fd}",
                g.get(r)
            );
        }
    }
}
