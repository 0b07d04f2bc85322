//! Classical limit of the reconstruction: integrating out momentum leaves a
//! mass-independent position likelihood p(x) proportional to exp(-beta v(x)),
//! so no eigenvalue problem is involved and the stationarity equation is
//! solved by the same preconditioned iteration as the quantum case.

use nalgebra::DVector;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradients::GradientField;
use crate::lattice::{Lattice, LatticeField};
use crate::optimizer::{
    enforce_symmetry_constraint, pinned_cells, FreeCellSolver, InitialGuess, OptimizerConfig,
    Preconditioner, ReconstructionResult, RunSummary, StopReason,
};
use crate::priors::{gaussian_log_density, GaussianPrior};

/// Boltzmann position density p(x) = exp(-beta v(x)) / Z_x per unit length,
/// stabilized by shifting out the minimum before exponentiation.
pub fn classical_likelihood(v: &LatticeField, beta: f64) -> Result<LatticeField> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let m = v.min();
    let h = v.lattice().spacing();
    let mut p = DVector::from_iterator(v.len(), v.iter().map(|x| (-beta * (x - m)).exp()));
    let z: f64 = p.sum() * h;
    p /= z;
    Ok(LatticeField::from_vector(v.lattice(), p))
}

/// A classical reconstruction problem.
#[derive(Debug, Clone)]
pub struct ClassicalProblem {
    pub lattice: Lattice,
    pub beta: f64,
    pub data: Dataset,
    pub prior: GaussianPrior,
    pub pin_value: Option<f64>,
    pub symmetric_constraint: bool,
}

impl ClassicalProblem {
    fn data_cells(&self) -> Result<Vec<usize>> {
        let cells = self.data.cells(&self.lattice)?;
        Ok(cells.into_iter().map(|c| c[0]).collect())
    }

    /// Per-unit-length histogram N(x) of the data.
    fn histogram(&self, cells: &[usize]) -> DVector<f64> {
        let mut n = DVector::zeros(self.lattice.len());
        let inv_h = 1.0 / self.lattice.spacing();
        for &c in cells {
            n[c] += inv_h;
        }
        n
    }
}

/// ln p(v|D) up to constants: -beta sum_i v(x_i) - (lambda/2)<v-v0|K0|v-v0>
/// - n ln Z_x.
pub fn classical_log_posterior(problem: &ClassicalProblem, v: &LatticeField) -> Result<f64> {
    let cells = problem.data_cells()?;
    classical_log_posterior_cells(problem, v, &cells)
}

fn classical_log_posterior_cells(
    problem: &ClassicalProblem,
    v: &LatticeField,
    cells: &[usize],
) -> Result<f64> {
    let beta = problem.beta;
    let m = v.min();
    let h = problem.lattice.spacing();
    let z_shifted: f64 = v.iter().map(|x| (-beta * (x - m)).exp()).sum::<f64>() * h;
    let ln_z = z_shifted.ln() - beta * m;
    let data_term: f64 = -beta * cells.iter().map(|&c| v.get(c)).sum::<f64>();
    let (prior_value, _) = gaussian_log_density(&problem.prior, v)?;
    Ok(data_term + prior_value - cells.len() as f64 * ln_z)
}

/// Gradient of the classical log posterior:
/// -beta N(x) - lambda K0 (v - v0) + n beta p(x|v).
pub fn classical_residual(problem: &ClassicalProblem, v: &LatticeField) -> Result<GradientField> {
    let cells = problem.data_cells()?;
    classical_residual_cells(problem, v, &cells)
}

fn classical_residual_cells(
    problem: &ClassicalProblem,
    v: &LatticeField,
    cells: &[usize],
) -> Result<GradientField> {
    let beta = problem.beta;
    let p = classical_likelihood(v, beta)?;
    let (_, prior_grad) = gaussian_log_density(&problem.prior, v)?;
    let n = cells.len() as f64;
    let hist = problem.histogram(cells);
    let mut g = prior_grad.values().clone();
    for i in 0..v.len() {
        g[i] += -beta * hist[i] + n * beta * p.get(i);
    }
    Ok(GradientField::new(&problem.lattice, g, 0.0))
}

/// Maximum-posterior reconstruction in the classical limit, with the same
/// backtracking step control as the quantum optimizer. The run summary holds
/// the mean potential energy, the potential minimum, and ln Z_x.
pub fn classical_map(
    problem: &ClassicalProblem,
    config: &OptimizerConfig,
) -> Result<ReconstructionResult> {
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

    let mut v = match &config.initial_guess {
        InitialGuess::Reference => problem.prior.mean().clone(),
        InitialGuess::DeltaPeaks => {
            crate::optimizer::initial_guess_delta_peaks(&problem.data, &problem.lattice)?
        }
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

    let solver = match &config.preconditioner {
        Preconditioner::Identity => None,
        Preconditioner::PriorOperator => Some(FreeCellSolver::new(
            &(problem.prior.inv_covariance().matrix() * problem.prior.scale()),
            &free,
        )?),
        Preconditioner::Custom(op) => Some(FreeCellSolver::new(op.matrix(), &free)?),
    };

    let mut lp = classical_log_posterior_cells(problem, &v, &cells)?;
    let mut trace = vec![lp];
    let mut eta = config.step_eta;
    let mut iterations_used = 0;
    let mut stop_reason = StopReason::MaxIterations;
    let mut final_gradient_norm = f64::INFINITY;

    for iteration in 0..config.max_iterations {
        let grad = classical_residual_cells(problem, &v, &cells)?;
        let mut g = grad.values().clone();
        if problem.symmetric_constraint {
            crate::optimizer::fold_symmetric(&mut g);
        }
        let gnorm = free.iter().map(|&i| g[i].abs()).fold(0.0f64, f64::max);
        final_gradient_norm = gnorm;
        if gnorm < config.gradient_tolerance {
            stop_reason = StopReason::GradientTolerance;
            break;
        }
        let mut direction = match &solver {
            Some(s) => s.solve(&g),
            None => {
                let mut d = DVector::zeros(problem.lattice.len());
                for &i in &free {
                    d[i] = g[i];
                }
                d
            }
        };
        if problem.symmetric_constraint {
            crate::optimizer::fold_symmetric(&mut direction);
        }

        let mut accepted = None;
        let mut best_trial = f64::NEG_INFINITY;
        let mut eta_try = eta;
        let mut shrinks = 0;
        while shrinks <= 30 {
            let v_try = LatticeField::from_vector(&problem.lattice, v.values() + &direction * eta_try);
            let lp_try = classical_log_posterior_cells(problem, &v_try, &cells)?;
            if lp_try.is_finite() {
                best_trial = best_trial.max(lp_try);
            }
            if lp_try.is_finite() && lp_try >= lp {
                accepted = Some((v_try, lp_try, eta_try));
                break;
            }
            eta_try *= config.step_shrink;
            shrinks += 1;
        }
        let Some((v_new, lp_new, eta_used)) = accepted else {
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

    let p = classical_likelihood(&v, problem.beta)?;
    let mean_potential: f64 =
        p.iter().zip(v.iter()).map(|(pi, vi)| pi * vi).sum::<f64>() * problem.lattice.spacing();
    let m = v.min();
    let h = problem.lattice.spacing();
    let z_shifted: f64 = v.iter().map(|x| (-problem.beta * (x - m)).exp()).sum::<f64>() * h;
    let ln_z = z_shifted.ln() - problem.beta * m;

    Ok(ReconstructionResult {
        potential: v,
        log_posterior_trace: trace,
        final_gradient_norm,
        iterations_used,
        stop_reason,
        summary: RunSummary {
            average_energy: mean_potential,
            ground_energy: m,
            log_partition: ln_z,
        },
        responsibilities: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_dataset, Dataset, Observable, Provenance};
    use crate::gradcheck::{central_difference_field, sup_relative_error};
    use crate::lattice::{build_laplacian, Boundary, LatticeOperator};

    fn lat() -> Lattice {
        Lattice::new(25, 0.25, -3.0, Boundary::Dirichlet).unwrap()
    }

    fn neg_laplacian(l: &Lattice) -> LatticeOperator {
        LatticeOperator::new(l, -build_laplacian(l).matrix(), true).unwrap()
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

    #[test]
    fn flat_potential_gives_uniform_density() {
        let l = lat();
        let v = LatticeField::from_fn(&l, |_| 1.7);
        let p = classical_likelihood(&v, 3.0).unwrap();
        let uniform = 1.0 / l.total_length();
        for i in 0..l.len() {
            assert!((p.get(i) - uniform).abs() < 1e-14);
        }
    }

    #[test]
    fn cell_ratio_is_boltzmann() {
        let l = lat();
        let v = LatticeField::from_fn(&l, |x| (x * x - 1.0) * (x * x - 1.0));
        let beta = 1.3;
        let p = classical_likelihood(&v, beta).unwrap();
        let (a, b) = (4, 17);
        let ratio = p.get(a) / p.get(b);
        let expect = (-beta * (v.get(a) - v.get(b))).exp();
        assert!((ratio - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn density_normalizes_for_extreme_beta() {
        let l = lat();
        let v = LatticeField::from_fn(&l, |x| 40.0 * x * x);
        for beta in [1e-9, 1.0, 1e6] {
            let p = classical_likelihood(&v, beta).unwrap();
            assert!((p.integral() - 1.0).abs() < 1e-12, "beta {beta}");
        }
    }

    #[test]
    fn density_is_gauge_invariant() {
        let l = lat();
        let v = LatticeField::from_fn(&l, |x| (2.0 * x).sin());
        let a = classical_likelihood(&v, 2.0).unwrap();
        let b = classical_likelihood(&v.shifted(13.5), 2.0).unwrap();
        for i in 0..l.len() {
            assert!((a.get(i) - b.get(i)).abs() < 1e-12 * a.get(i).max(1e-300));
        }
    }

    fn toy_problem(xs: &[f64], lambda: f64) -> ClassicalProblem {
        let l = lat();
        // Reference compatible with the boundary pinning (vanishes at both ends).
        let v0 = LatticeField::from_fn(&l, |x| 0.2 * (x * x - 9.0));
        ClassicalProblem {
            lattice: l,
            beta: 1.0,
            data: dataset(xs, 1.0),
            prior: GaussianPrior::new(v0, neg_laplacian(&l), lambda).unwrap(),
            pin_value: Some(0.0),
            symmetric_constraint: false,
        }
    }

    #[test]
    fn zero_data_recovers_the_reference() {
        let problem = toy_problem(&[], 0.3);
        let result = classical_map(&problem, &OptimizerConfig::default()).unwrap();
        let mut v0 = problem.prior.mean().clone();
        for c in pinned_cells(&problem.lattice) {
            v0.set(c, 0.0);
        }
        for i in 0..v0.len() {
            assert!((result.potential.get(i) - v0.get(i)).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_matches_finite_differences() {
        let problem = toy_problem(&[-1.2, 0.3, 0.3, 1.4, -0.6, 2.1], 0.45);
        let v = LatticeField::from_fn(&problem.lattice, |x| 0.3 * (1.2 * x).sin() + 0.1 * x);
        let g = classical_residual(&problem, &v).unwrap();
        let fd = central_difference_field(&v, 1e-6, |vt| {
            classical_log_posterior(&problem, vt).unwrap()
        });
        assert!(sup_relative_error(&g.as_field(), &fd) < 1e-5);
    }

    #[test]
    fn stationarity_identity_holds_at_convergence() {
        let l = lat();
        let v_true = LatticeField::from_fn(&l, |x| 0.8 * x * x - 1.0);
        let p_true = classical_likelihood(&v_true, 1.0).unwrap();
        let data = sample_dataset(&p_true, 150, 1.0, 31).unwrap();
        let mut problem = toy_problem(&[], 0.2);
        problem.data = data;
        // Posterior increments hit f64 resolution near the optimum, so the
        // reachable gradient norm scales with the data count; 5e-5 is beyond
        // the knee for 150 data on this grid.
        let config = OptimizerConfig {
            gradient_tolerance: 5e-5,
            posterior_tolerance: 1e-15,
            max_iterations: 5000,
            ..OptimizerConfig::default()
        };
        let result = classical_map(&problem, &config).unwrap();
        assert_eq!(result.stop_reason, StopReason::GradientTolerance);
        // The residual identity -beta N - lambda K0 (v - v0) + n beta p = 0
        // holds on the free cells at the reported tolerance.
        let g = classical_residual(&problem, &result.potential).unwrap();
        for i in 1..problem.lattice.len() - 1 {
            assert!(g.get(i).abs() < 5e-5, "cell {i}: {}", g.get(i));
        }
        for w in result.log_posterior_trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn symmetric_mode_yields_symmetric_classical_potentials() {
        let l = Lattice::centered(25, 0.25, Boundary::Dirichlet).unwrap();
        let v_true = LatticeField::from_fn(&l, |x| x * x - 2.0);
        let p_true = classical_likelihood(&v_true, 1.0).unwrap();
        let data = sample_dataset(&p_true, 60, 1.0, 8).unwrap();
        let problem = ClassicalProblem {
            lattice: l,
            beta: 1.0,
            data,
            prior: GaussianPrior::new(LatticeField::zeros(&l), neg_laplacian(&l), 0.05).unwrap(),
            pin_value: Some(0.0),
            symmetric_constraint: true,
        };
        let result = classical_map(&problem, &OptimizerConfig::default()).unwrap();
        let v = &result.potential;
        for i in 0..v.len() {
            assert_eq!(v.get(i), v.get(v.len() - 1 - i));
        }
    }
}
