//! Maximum-posterior reconstruction: total log posterior, its gradient
//! (stationarity residual), and the preconditioned fixed-point iteration
//! with adaptive backtracking step control.
//!
//! The iteration moves along A^{-1} grad with a step eta that shrinks until
//! the log posterior does not decrease and grows again after accepted steps.
//! With A = lambda K0 and a Gaussian prior an accepted full step (eta = 1)
//! is exactly the relaxation v_new = v0 + (lambda K0)^{-1} (likelihood and
//! penalty gradients), so the general path covers the preconditioned scheme
//! as a special case.
//!
//! Boundary handling: potentials are optimized on the free cells only.
//! Pinned cells (both endpoints of a Dirichlet lattice, the seam cell of a
//! periodic one) keep a declared constant, which also makes the restricted
//! preconditioner invertible.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradients::{
    d_energy_penalty, d_log_likelihood_cells, GradientField,
};
use crate::lattice::{Boundary, Lattice, LatticeField, LatticeOperator};
use crate::priors::{
    energy_penalty_value, gaussian_log_density, mixture_log_density, symmetry_energy,
    EnergyPenalty, GaussianPrior, MixturePrior, SymmetryPrior,
};
use crate::spectral::{
    assemble_hamiltonian, diagonalize, position_likelihood, thermal_ensemble, HamiltonianSpec,
};

/// Iteration matrix A of the update step.
#[derive(Debug, Clone)]
pub enum Preconditioner {
    /// Plain gradient ascent.
    Identity,
    /// A = lambda K0 (for mixtures the responsibility-weighted operator,
    /// rebuilt each iteration).
    PriorOperator,
    Custom(LatticeOperator),
}

/// Where the iteration starts.
#[derive(Debug, Clone)]
pub enum InitialGuess {
    /// The prior reference potential (mixtures: the weight-averaged mean).
    Reference,
    /// Negative delta peaks on the data cells.
    DeltaPeaks,
    Custom(LatticeField),
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub step_eta: f64,
    pub preconditioner: Preconditioner,
    pub max_iterations: usize,
    /// Convergence when the sup norm of the free-cell gradient drops below.
    pub gradient_tolerance: f64,
    /// Convergence when the log posterior changes relatively less than this
    /// over three consecutive accepted steps.
    pub posterior_tolerance: f64,
    pub step_growth: f64,
    pub step_shrink: f64,
    pub initial_guess: InitialGuess,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_eta: 0.5,
            preconditioner: Preconditioner::PriorOperator,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            posterior_tolerance: 1e-10,
            step_growth: 1.2,
            step_shrink: 0.5,
            initial_guess: InitialGuess::Reference,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_eta > 0.0) {
            return Err(Error::InvalidParameter("step_eta must be positive".into()));
        }
        if !(self.gradient_tolerance > 0.0 && self.posterior_tolerance > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if !(self.step_growth > 1.0) {
            return Err(Error::InvalidParameter("step_growth must exceed 1".into()));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::InvalidParameter(
                "step_shrink must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Smooth prior over the potential: one Gaussian process or a mixture.
#[derive(Debug, Clone)]
pub enum PriorModel {
    Gaussian(GaussianPrior),
    Mixture(MixturePrior),
}

impl PriorModel {
    pub fn lattice(&self) -> &Lattice {
        match self {
            PriorModel::Gaussian(p) => p.lattice(),
            PriorModel::Mixture(p) => p.lattice(),
        }
    }

    /// Log density (up to constants), gradient, and mixture responsibilities.
    pub fn log_density(&self, v: &LatticeField) -> Result<(f64, GradientField, Option<Vec<f64>>)> {
        match self {
            PriorModel::Gaussian(p) => {
                let (value, grad) = gaussian_log_density(p, v)?;
                Ok((value, grad, None))
            }
            PriorModel::Mixture(p) => {
                let (value, grad, r) = mixture_log_density(p, v)?;
                Ok((value, grad, Some(r)))
            }
        }
    }

    /// Reference potential: the mean, or the weight-averaged mixture mean.
    pub fn reference(&self) -> LatticeField {
        match self {
            PriorModel::Gaussian(p) => p.mean().clone(),
            PriorModel::Mixture(p) => {
                let lattice = *p.lattice();
                let mut acc = DVector::zeros(lattice.len());
                for c in p.components() {
                    acc += c.mean.values() * c.weight;
                }
                LatticeField::from_vector(&lattice, acc)
            }
        }
    }

    /// The iteration matrix lambda K0; for mixtures the responsibility
    /// weighted combination lambda sum_k p0(k|v) K_k.
    fn scaled_operator(&self, responsibilities: Option<&[f64]>) -> DMatrix<f64> {
        match self {
            PriorModel::Gaussian(p) => p.inv_covariance().matrix() * p.scale(),
            PriorModel::Mixture(p) => {
                let n = p.lattice().len();
                let mut acc = DMatrix::zeros(n, n);
                let uniform = vec![1.0 / p.components().len() as f64; p.components().len()];
                let r = responsibilities.unwrap_or(&uniform);
                for (c, w) in p.components().iter().zip(r) {
                    acc += c.inv_covariance.matrix() * (p.scale() * w);
                }
                acc
            }
        }
    }

    fn is_mixture(&self) -> bool {
        matches!(self, PriorModel::Mixture(_))
    }
}

/// A full single-particle reconstruction problem at inverse temperature beta.
#[derive(Debug, Clone)]
pub struct QuantumProblem {
    pub lattice: Lattice,
    pub mass: f64,
    pub beta: f64,
    pub wavefn_boundary: Boundary,
    pub data: Dataset,
    pub prior: PriorModel,
    pub symmetry: Option<SymmetryPrior>,
    pub penalty: Option<EnergyPenalty>,
    /// Pin boundary cells of the potential to this value; None leaves every
    /// cell free (the preconditioner must then be definite on the full grid).
    pub pin_value: Option<f64>,
    /// Restrict the optimization to mirror-symmetric potentials.
    pub symmetric_constraint: bool,
}

/// Thermal summary of the reconstructed potential.
#[derive(Debug, Clone, Copy)]
pub struct RunSummary {
    pub average_energy: f64,
    pub ground_energy: f64,
    pub log_partition: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    PosteriorPlateau,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub potential: LatticeField,
    /// Log posterior after the initial guess and after each accepted step.
    pub log_posterior_trace: Vec<f64>,
    pub final_gradient_norm: f64,
    pub iterations_used: usize,
    pub stop_reason: StopReason,
    pub summary: RunSummary,
    pub responsibilities: Option<Vec<f64>>,
}

impl ReconstructionResult {
    pub fn converged(&self) -> bool {
        self.stop_reason != StopReason::MaxIterations
    }
}

/// Likelihood floor: a trial step drawing any datum below this density is
/// rejected like a posterior decrease.
const LIKELIHOOD_FLOOR: f64 = 1e-300;
/// Maximum step reductions inside one backtracking line search.
const MAX_SHRINKS: usize = 30;

/// Cells held fixed by the boundary convention: both endpoints on a
/// Dirichlet lattice, the seam cell on a periodic one.
pub fn pinned_cells(lattice: &Lattice) -> Vec<usize> {
    match lattice.boundary() {
        Boundary::Dirichlet => vec![0, lattice.len() - 1],
        Boundary::Periodic => vec![0],
    }
}

/// Initial guess of negative delta peaks: -(count in cell)/spacing on free
/// cells, zero on pinned ones.
pub fn initial_guess_delta_peaks(data: &Dataset, lattice: &Lattice) -> Result<LatticeField> {
    let pinned = pinned_cells(lattice);
    let mut field = LatticeField::zeros(lattice);
    let h = lattice.spacing();
    for cells in data.cells(lattice)? {
        for c in cells {
            if !pinned.contains(&c) {
                field.set(c, field.get(c) - 1.0 / h);
            }
        }
    }
    Ok(field)
}

/// Projection onto mirror-symmetric fields: the average of v(x) and v(-x).
pub fn enforce_symmetry_constraint(v: &LatticeField) -> LatticeField {
    v.symmetrized()
}

struct Evaluation {
    log_posterior: f64,
    summary: RunSummary,
    responsibilities: Option<Vec<f64>>,
}

impl QuantumProblem {
    fn data_cells(&self) -> Result<Vec<usize>> {
        let cells = self.data.cells(&self.lattice)?;
        Ok(cells.into_iter().map(|c| c[0]).collect())
    }

    /// Log posterior and summary; None when a datum falls below the
    /// likelihood floor (the step-rejection guard, not an error).
    fn evaluate(&self, v: &LatticeField, cells: &[usize]) -> Result<Option<Evaluation>> {
        let spec = HamiltonianSpec::new(self.mass, v.clone(), self.wavefn_boundary)?;
        let dec = diagonalize(&assemble_hamiltonian(&spec))?;
        let ens = thermal_ensemble(&dec, self.beta)?;
        let p = position_likelihood(&dec, &ens);
        let mut log_likelihood = 0.0;
        for &c in cells {
            let pc = p.get(c);
            if !(pc > LIKELIHOOD_FLOOR) {
                return Ok(None);
            }
            log_likelihood += pc.ln();
        }
        let (prior_value, _, responsibilities) = self.prior.log_density(v)?;
        let mut log_posterior = log_likelihood + prior_value;
        if let Some(sym) = &self.symmetry {
            log_posterior -= symmetry_energy(sym, v)?.0;
        }
        if let Some(pen) = &self.penalty {
            log_posterior -= energy_penalty_value(pen, ens.average_energy);
        }
        Ok(Some(Evaluation {
            log_posterior,
            summary: RunSummary {
                average_energy: ens.average_energy,
                ground_energy: dec.energy(0),
                log_partition: ens.log_partition,
            },
            responsibilities,
        }))
    }

    fn gradient(&self, v: &LatticeField, cells: &[usize]) -> Result<GradientField> {
        let spec = HamiltonianSpec::new(self.mass, v.clone(), self.wavefn_boundary)?;
        let dec = diagonalize(&assemble_hamiltonian(&spec))?;
        let ens = thermal_ensemble(&dec, self.beta)?;
        let ll = d_log_likelihood_cells(&dec, &ens, cells)?;
        let (_, prior_grad, _) = self.prior.log_density(v)?;
        let mut grad = ll.values() + prior_grad.values();
        if let Some(sym) = &self.symmetry {
            grad -= symmetry_energy(sym, v)?.1.values();
        }
        if let Some(pen) = &self.penalty {
            grad -= d_energy_penalty(&dec, &ens, pen.mu, pen.kappa).values();
        }
        Ok(GradientField::new(
            &self.lattice,
            grad,
            ll.degenerate_threshold(),
        ))
    }
}

/// Log of the posterior density up to v-independent constants:
/// log likelihood + log prior - symmetry energy - average-energy penalty.
pub fn total_log_posterior(problem: &QuantumProblem, v: &LatticeField) -> Result<f64> {
    let cells = problem.data_cells()?;
    match problem.evaluate(v, &cells)? {
        Some(eval) => Ok(eval.log_posterior),
        None => Ok(f64::NEG_INFINITY),
    }
}

/// Full gradient of the log posterior; the zero field at a stationary point.
pub fn stationarity_residual(problem: &QuantumProblem, v: &LatticeField) -> Result<GradientField> {
    let cells = problem.data_cells()?;
    problem.gradient(v, &cells)
}

pub(crate) fn fold_symmetric(values: &mut DVector<f64>) {
    let n = values.len();
    for i in 0..n / 2 {
        let s = 0.5 * (values[i] + values[n - 1 - i]);
        values[i] = s;
        values[n - 1 - i] = s;
    }
}

/// Solves A s = g restricted to the free cells; pinned components stay zero.
pub(crate) struct FreeCellSolver {
    free: Vec<usize>,
    factor: Cholesky<f64, nalgebra::Dyn>,
}

impl FreeCellSolver {
    pub(crate) fn new(a_full: &DMatrix<f64>, free: &[usize]) -> Result<Self> {
        let m = free.len();
        let mut a = DMatrix::zeros(m, m);
        for (i, &fi) in free.iter().enumerate() {
            for (j, &fj) in free.iter().enumerate() {
                a[(i, j)] = a_full[(fi, fj)];
            }
        }
        let factor = Cholesky::new(a).ok_or(Error::SingularPreconditioner)?;
        Ok(Self {
            free: free.to_vec(),
            factor,
        })
    }

    pub(crate) fn solve(&self, grad: &DVector<f64>) -> DVector<f64> {
        let g = DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| grad[i]));
        let s = self.factor.solve(&g);
        let mut full = DVector::zeros(grad.len());
        for (i, &fi) in self.free.iter().enumerate() {
            full[fi] = s[i];
        }
        full
    }
}

fn prepare_initial(problem: &QuantumProblem, config: &OptimizerConfig) -> Result<LatticeField> {
    let mut v = match &config.initial_guess {
        InitialGuess::Reference => problem.prior.reference(),
        InitialGuess::DeltaPeaks => initial_guess_delta_peaks(&problem.data, &problem.lattice)?,
        InitialGuess::Custom(f) => f.clone(),
    };
    if problem.symmetric_constraint {
        v = enforce_symmetry_constraint(&v);
    }
    if let Some(pin) = problem.pin_value {
        for c in pinned_cells(&problem.lattice) {
            v.set(c, pin);
        }
    }
    Ok(v)
}

/// Runs the preconditioned maximum-posterior iteration.
pub fn iterate(problem: &QuantumProblem, config: &OptimizerConfig) -> Result<ReconstructionResult> {
    config.validate()?;
    let cells = problem.data_cells()?;
    let free: Vec<usize> = {
        let pinned = match problem.pin_value {
            Some(_) => pinned_cells(&problem.lattice),
            None => Vec::new(),
        };
        (0..problem.lattice.len())
            .filter(|i| !pinned.contains(i))
            .collect()
    };

    let mut v = prepare_initial(problem, config)?;
    let mut eval = problem
        .evaluate(&v, &cells)?
        .ok_or_else(|| Error::Numerical("initial guess has vanishing likelihood".into()))?;
    let mut trace = vec![eval.log_posterior];

    // For a fixed preconditioner the factorization is reused across
    // iterations; the mixture prior operator depends on the current
    // responsibilities and is refactored each step.
    let fixed_solver = match &config.preconditioner {
        Preconditioner::Identity => None,
        Preconditioner::Custom(op) => Some(FreeCellSolver::new(op.matrix(), &free)?),
        Preconditioner::PriorOperator => {
            if problem.prior.is_mixture() {
                None
            } else {
                Some(FreeCellSolver::new(
                    &problem.prior.scaled_operator(None),
                    &free,
                )?)
            }
        }
    };

    let mut eta = config.step_eta;
    let mut iterations_used = 0;
    let mut stop_reason = StopReason::MaxIterations;
    let mut final_gradient_norm = f64::NAN;

    for iteration in 0..config.max_iterations {
        let mut grad = problem.gradient(&v, &cells)?;
        if problem.symmetric_constraint {
            let mut g = grad.values().clone();
            fold_symmetric(&mut g);
            grad = GradientField::new(&problem.lattice, g, grad.degenerate_threshold());
        }
        let gnorm = free
            .iter()
            .map(|&i| grad.get(i).abs())
            .fold(0.0f64, f64::max);
        final_gradient_norm = gnorm;
        if gnorm < config.gradient_tolerance {
            stop_reason = StopReason::GradientTolerance;
            break;
        }

        let direction = match &config.preconditioner {
            Preconditioner::Identity => {
                let mut d = DVector::zeros(problem.lattice.len());
                for &i in &free {
                    d[i] = grad.get(i);
                }
                d
            }
            _ => {
                let solver = match &fixed_solver {
                    Some(s) => s.solve(grad.values()),
                    None => FreeCellSolver::new(
                        &problem
                            .prior
                            .scaled_operator(eval.responsibilities.as_deref()),
                        &free,
                    )?
                    .solve(grad.values()),
                };
                solver
            }
        };
        let mut direction = direction;
        if problem.symmetric_constraint {
            fold_symmetric(&mut direction);
        }

        // Backtracking: accept the first step that does not decrease the
        // log posterior, shrinking eta up to MAX_SHRINKS times and regrowing
        // after every acceptance. The plateau rule terminates the run once
        // accepted increments sink into float resolution.
        let mut accepted = None;
        let mut best_trial = f64::NEG_INFINITY;
        let mut eta_try = eta;
        let mut shrinks = 0;
        while shrinks <= MAX_SHRINKS {
            let v_try =
                LatticeField::from_vector(&problem.lattice, v.values() + &direction * eta_try);
            if let Some(eval_try) = problem.evaluate(&v_try, &cells)? {
                if eval_try.log_posterior.is_finite() {
                    best_trial = best_trial.max(eval_try.log_posterior);
                }
                if eval_try.log_posterior >= eval.log_posterior
                    && eval_try.log_posterior.is_finite()
                {
                    accepted = Some((v_try, eval_try, eta_try));
                    break;
                }
            }
            eta_try *= config.step_shrink;
            shrinks += 1;
        }
        let Some((v_new, eval_new, eta_used)) = accepted else {
            // Exhausted line search with every trial inside the band the
            // plateau rule already treats as negligible: no measurable
            // progress is left, which is convergence rather than a failure.
            let resolution =
                config.posterior_tolerance * eval.log_posterior.abs().max(1.0);
            if best_trial >= eval.log_posterior - resolution {
                stop_reason = StopReason::PosteriorPlateau;
                break;
            }
            return Err(Error::LineSearchStall {
                iteration,
                shrinks: MAX_SHRINKS,
                trace,
            });
        };
        v = v_new;
        eval = eval_new;
        eta = (eta_used * config.step_growth).min(1.0);
        trace.push(eval.log_posterior);
        iterations_used = iteration + 1;

        // Plateau rule: relative posterior change below tolerance over
        // three consecutive accepted steps.
        if trace.len() >= 4 {
            let recent = &trace[trace.len() - 4..];
            let span = recent[3] - recent[0];
            if span.abs() < config.posterior_tolerance * recent[3].abs().max(1.0) {
                stop_reason = StopReason::PosteriorPlateau;
                break;
            }
        }
    }

    if stop_reason == StopReason::MaxIterations && config.max_iterations == 0 {
        // A zero-iteration budget simply echoes the initial guess.
        final_gradient_norm = f64::INFINITY;
    }

    Ok(ReconstructionResult {
        potential: v,
        log_posterior_trace: trace,
        final_gradient_norm,
        iterations_used,
        stop_reason,
        summary: eval.summary,
        responsibilities: eval.responsibilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_dataset, Dataset, Observable, Provenance};
    use crate::gradcheck::{central_difference_field, sup_relative_error};
    use crate::lattice::build_laplacian;
    use crate::priors::MixtureComponent;

    fn neg_laplacian(l: &Lattice) -> LatticeOperator {
        LatticeOperator::new(l, -build_laplacian(l).matrix(), true).unwrap()
    }

    fn empty_dataset(beta: f64) -> Dataset {
        Dataset::new(
            Observable::Position,
            beta,
            vec![],
            Provenance::Ingested { path: "t".into() },
        )
        .unwrap()
    }

    fn dataset(xs: &[f64], beta: f64) -> Dataset {
        Dataset::new(
            Observable::Position,
            beta,
            xs.iter().map(|&x| vec![x]).collect(),
            Provenance::Ingested { path: "t".into() },
        )
        .unwrap()
    }

    fn toy_problem(data: Dataset, lambda: f64) -> QuantumProblem {
        let lat = Lattice::new(20, 0.3, -2.85, Boundary::Dirichlet).unwrap();
        // Reference compatible with the boundary pinning (vanishes at both ends).
        let v0 = LatticeField::from_fn(&lat, |x| 0.3 * (x * x - 2.85 * 2.85));
        QuantumProblem {
            lattice: lat,
            mass: 1.0,
            beta: 2.0,
            wavefn_boundary: Boundary::Dirichlet,
            data,
            prior: PriorModel::Gaussian(
                GaussianPrior::new(v0, neg_laplacian(&lat), lambda).unwrap(),
            ),
            symmetry: None,
            penalty: None,
            pin_value: Some(0.0),
            symmetric_constraint: false,
        }
    }

    #[test]
    fn zero_data_converges_to_prior_mode_quickly() {
        let problem = toy_problem(empty_dataset(2.0), 0.5);
        let config = OptimizerConfig {
            gradient_tolerance: 1e-10,
            ..OptimizerConfig::default()
        };
        let result = iterate(&problem, &config).unwrap();
        assert!(result.iterations_used <= 5);
        let mut v0 = problem.prior.reference();
        for c in pinned_cells(&problem.lattice) {
            v0.set(c, 0.0);
        }
        for i in 0..problem.lattice.len() {
            assert!((result.potential.get(i) - v0.get(i)).abs() < 1e-8);
        }
    }

    #[test]
    fn posterior_reduces_to_likelihood_without_prior_and_penalty() {
        let data = dataset(&[0.1, -0.4, 0.7], 2.0);
        let problem = toy_problem(data.clone(), 0.0);
        let v = LatticeField::from_fn(&problem.lattice, |x| 0.2 * x);
        let lp = total_log_posterior(&problem, &v).unwrap();
        let spec = HamiltonianSpec::new(1.0, v.clone(), Boundary::Dirichlet).unwrap();
        let dec = diagonalize(&assemble_hamiltonian(&spec)).unwrap();
        let ens = thermal_ensemble(&dec, 2.0).unwrap();
        let ll = crate::spectral::log_likelihood(&data, &dec, &ens).unwrap();
        assert!((lp - ll).abs() < 1e-12 * ll.abs().max(1.0));
    }

    #[test]
    fn doubling_the_dataset_doubles_the_likelihood_part() {
        let xs = [0.1, -0.4, 0.7, 1.3];
        let doubled: Vec<f64> = xs.iter().chain(xs.iter()).copied().collect();
        let single = toy_problem(dataset(&xs, 2.0), 0.0);
        let twice = toy_problem(dataset(&doubled, 2.0), 0.0);
        let v = LatticeField::from_fn(&single.lattice, |x| 0.1 * x * x - 0.3);
        let a = total_log_posterior(&single, &v).unwrap();
        let b = total_log_posterior(&twice, &v).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12 * b.abs().max(1.0));
    }

    #[test]
    fn posterior_is_the_sum_of_its_parts() {
        let data = dataset(&[0.1, -0.4, 0.7], 2.0);
        let mut problem = toy_problem(data.clone(), 0.8);
        problem.penalty = Some(EnergyPenalty::new(13.0, -0.2).unwrap());
        let v = LatticeField::from_fn(&problem.lattice, |x| 0.25 * x * x - 0.8);
        let lp = total_log_posterior(&problem, &v).unwrap();

        let spec = HamiltonianSpec::new(1.0, v.clone(), Boundary::Dirichlet).unwrap();
        let dec = diagonalize(&assemble_hamiltonian(&spec)).unwrap();
        let ens = thermal_ensemble(&dec, 2.0).unwrap();
        let ll = crate::spectral::log_likelihood(&data, &dec, &ens).unwrap();
        let (pv, _, _) = problem.prior.log_density(&v).unwrap();
        let pen = energy_penalty_value(problem.penalty.as_ref().unwrap(), ens.average_energy);
        assert!((lp - (ll + pv - pen)).abs() < 1e-12 * lp.abs().max(1.0));
    }

    #[test]
    fn residual_matches_finite_differences_of_posterior() {
        let data = dataset(&[-1.3, 0.1, 0.4, 0.4, 1.9, -0.7], 2.0);
        let mut problem = toy_problem(data, 0.6);
        problem.penalty = Some(EnergyPenalty::new(5.0, 0.1).unwrap());
        let v = LatticeField::from_fn(&problem.lattice, |x| 0.2 * (1.1 * x).sin() - 0.5);
        let g = stationarity_residual(&problem, &v).unwrap();
        let fd = central_difference_field(&v, 1e-6, |vt| total_log_posterior(&problem, vt).unwrap());
        assert!(sup_relative_error(&g.as_field(), &fd) < 1e-4);
    }

    #[test]
    fn prior_part_of_residual_vanishes_at_the_reference() {
        let data = dataset(&[0.3, -0.2], 2.0);
        let strong = toy_problem(data.clone(), 1e6);
        let free = toy_problem(data, 0.0);
        let v0 = strong.prior.reference();
        let a = stationarity_residual(&strong, &v0).unwrap();
        let b = stationarity_residual(&free, &v0).unwrap();
        for i in 0..v0.len() {
            assert!((a.get(i) - b.get(i)).abs() < 1e-9 * b.sup_norm().max(1.0));
        }
    }

    #[test]
    fn delta_peak_guess_counts_data() {
        let lat = Lattice::new(12, 0.5, 0.0, Boundary::Dirichlet).unwrap();
        let none = initial_guess_delta_peaks(&empty_dataset(1.0), &lat).unwrap();
        assert!(none.iter().all(|x| x == 0.0));

        let one = initial_guess_delta_peaks(&dataset(&[lat.coord(4)], 1.0), &lat).unwrap();
        assert_eq!(one.get(4), -1.0 / lat.spacing());
        assert_eq!(one.iter().filter(|x| *x != 0.0).count(), 1);

        let interior: Vec<f64> = (1..=10).map(|i| lat.coord(i % 9 + 1)).collect();
        let many = initial_guess_delta_peaks(&dataset(&interior, 1.0), &lat).unwrap();
        assert!((many.integral() + interior.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn symmetry_projection_behaves_like_a_projection() {
        let lat = Lattice::centered(9, 0.5, Boundary::Dirichlet).unwrap();
        let sym = LatticeField::from_fn(&lat, |x| x * x);
        let projected = enforce_symmetry_constraint(&sym);
        for i in 0..9 {
            assert_eq!(projected.get(i), sym.get(i));
        }
        let anti = LatticeField::from_fn(&lat, |x| x * x * x);
        let zero = enforce_symmetry_constraint(&anti);
        assert!(zero.iter().all(|x| x == 0.0));
        let generic = LatticeField::from_fn(&lat, |x| x * x * x + 0.3 * x * x + x);
        let once = enforce_symmetry_constraint(&generic);
        let twice = enforce_symmetry_constraint(&once);
        for i in 0..9 {
            assert_eq!(once.get(i), twice.get(i));
        }
    }

    fn sampled_problem(seed: u64, lambda: f64) -> QuantumProblem {
        let lat = Lattice::new(20, 0.3, -2.85, Boundary::Dirichlet).unwrap();
        let v_true = LatticeField::from_fn(&lat, |x| 0.5 * x * x - 1.2);
        let spec = HamiltonianSpec::new(of_mass(), v_true, Boundary::Dirichlet).unwrap();
        let dec = diagonalize(&assemble_hamiltonian(&spec)).unwrap();
        let ens = thermal_ensemble(&dec, 2.0).unwrap();
        let p = position_likelihood(&dec, &ens);
        let data = sample_dataset(&p, 60, 2.0, seed).unwrap();
        let mut problem = toy_problem(data, lambda);
        problem.mass = of_mass();
        problem
    }

    fn of_mass() -> f64 {
        1.0
    }

    #[test]
    fn accepted_steps_never_decrease_the_posterior() {
        let problem = sampled_problem(11, 0.4);
        let result = iterate(&problem, &OptimizerConfig::default()).unwrap();
        for w in result.log_posterior_trace.windows(2) {
            assert!(w[1] >= w[0], "trace decreased: {} -> {}", w[0], w[1]);
        }
        assert!(result.converged());
    }

    #[test]
    fn fixed_point_is_consistent_with_the_residual() {
        let problem = sampled_problem(5, 0.4);
        let config = OptimizerConfig {
            gradient_tolerance: 1e-5,
            posterior_tolerance: 1e-15,
            max_iterations: 2000,
            ..OptimizerConfig::default()
        };
        let result = iterate(&problem, &config).unwrap();
        assert_eq!(result.stop_reason, StopReason::GradientTolerance);
        let residual = stationarity_residual(&problem, &result.potential).unwrap();
        let free: Vec<usize> = (1..problem.lattice.len() - 1).collect();
        let gnorm = free
            .iter()
            .map(|&i| residual.get(i).abs())
            .fold(0.0f64, f64::max);
        assert!(gnorm < 1e-5, "residual {gnorm}");
    }

    #[test]
    fn preconditioners_reach_the_same_stationary_point() {
        let problem = sampled_problem(23, 0.5);
        let tight = |pre| OptimizerConfig {
            preconditioner: pre,
            gradient_tolerance: 1e-8,
            max_iterations: 20_000,
            ..OptimizerConfig::default()
        };
        let a = iterate(&problem, &tight(Preconditioner::PriorOperator)).unwrap();
        let b = iterate(&problem, &tight(Preconditioner::Identity)).unwrap();
        let like = |v: &LatticeField| {
            let spec = HamiltonianSpec::new(problem.mass, v.clone(), Boundary::Dirichlet).unwrap();
            let dec = diagonalize(&assemble_hamiltonian(&spec)).unwrap();
            let ens = thermal_ensemble(&dec, problem.beta).unwrap();
            position_likelihood(&dec, &ens)
        };
        let l1 = like(&a.potential).l1_distance(&like(&b.potential));
        assert!(l1 < 1e-3, "likelihood L1 between preconditioners {l1}");
    }

    #[test]
    fn zero_iteration_budget_echoes_the_initial_guess() {
        let problem = sampled_problem(3, 0.4);
        let config = OptimizerConfig {
            max_iterations: 0,
            ..OptimizerConfig::default()
        };
        let result = iterate(&problem, &config).unwrap();
        let mut v0 = problem.prior.reference();
        for c in pinned_cells(&problem.lattice) {
            v0.set(c, 0.0);
        }
        for i in 0..v0.len() {
            assert_eq!(result.potential.get(i), v0.get(i));
        }
        assert_eq!(result.iterations_used, 0);
        assert!(!result.converged());
    }

    #[test]
    fn hard_symmetry_mode_returns_symmetric_potentials() {
        let lat = Lattice::centered(21, 0.3, Boundary::Dirichlet).unwrap();
        let v_true = LatticeField::from_fn(&lat, |x| 0.8 * x * x - 2.0);
        let spec = HamiltonianSpec::new(0.5, v_true, Boundary::Dirichlet).unwrap();
        let dec = diagonalize(&assemble_hamiltonian(&spec)).unwrap();
        let ens = thermal_ensemble(&dec, 1.0).unwrap();
        let data = sample_dataset(&position_likelihood(&dec, &ens), 40, 1.0, 9).unwrap();
        let v0 = LatticeField::zeros(&lat);
        let problem = QuantumProblem {
            lattice: lat,
            mass: 0.5,
            beta: 1.0,
            wavefn_boundary: Boundary::Dirichlet,
            data,
            prior: PriorModel::Gaussian(
                GaussianPrior::new(v0, neg_laplacian(&lat), 0.05).unwrap(),
            ),
            symmetry: None,
            penalty: None,
            pin_value: Some(0.0),
            symmetric_constraint: true,
        };
        let result = iterate(&problem, &OptimizerConfig::default()).unwrap();
        let v = &result.potential;
        for i in 0..v.len() {
            assert_eq!(v.get(i), v.get(v.len() - 1 - i));
        }
        for w in result.log_posterior_trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn mixture_prior_reports_responsibilities() {
        let lat = Lattice::new(16, 0.3, -2.25, Boundary::Dirichlet).unwrap();
        let va = LatticeField::from_fn(&lat, |x| 0.4 * x * x - 1.5);
        let vb = LatticeField::from_fn(&lat, |x| 0.4 * x * x - 0.2);
        let spec = HamiltonianSpec::new(1.0, va.clone(), Boundary::Dirichlet).unwrap();
        let dec = diagonalize(&assemble_hamiltonian(&spec)).unwrap();
        let ens = thermal_ensemble(&dec, 2.0).unwrap();
        let data = sample_dataset(&position_likelihood(&dec, &ens), 80, 2.0, 17).unwrap();
        let mixture = MixturePrior::new(
            vec![
                MixtureComponent {
                    weight: 0.5,
                    mean: va,
                    inv_covariance: neg_laplacian(&lat),
                },
                MixtureComponent {
                    weight: 0.5,
                    mean: vb,
                    inv_covariance: neg_laplacian(&lat),
                },
            ],
            2.0,
        )
        .unwrap();
        let problem = QuantumProblem {
            lattice: lat,
            mass: 1.0,
            beta: 2.0,
            wavefn_boundary: Boundary::Dirichlet,
            data,
            prior: PriorModel::Mixture(mixture),
            symmetry: None,
            penalty: None,
            pin_value: Some(0.0),
            symmetric_constraint: false,
        };
        let result = iterate(&problem, &OptimizerConfig::default()).unwrap();
        let r = result.responsibilities.expect("mixture responsibilities");
        assert_eq!(r.len(), 2);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for w in result.log_posterior_trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn uniform_prior_with_prior_preconditioner_is_rejected() {
        let problem = toy_problem(dataset(&[0.2], 2.0), 0.0);
        let err = iterate(&problem, &OptimizerConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SingularPreconditioner));
    }

    #[test]
    fn custom_identity_preconditioner_matches_plain_gradient_ascent() {
        let problem = sampled_problem(13, 0.5);
        let config = |pre| OptimizerConfig {
            preconditioner: pre,
            max_iterations: 60,
            ..OptimizerConfig::default()
        };
        let a = iterate(
            &problem,
            &config(Preconditioner::Custom(LatticeOperator::identity(
                &problem.lattice,
            ))),
        )
        .unwrap();
        let b = iterate(&problem, &config(Preconditioner::Identity)).unwrap();
        for i in 0..problem.lattice.len() {
            assert_eq!(a.potential.get(i), b.potential.get(i));
        }
    }
}
