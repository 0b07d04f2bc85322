//! The named finite-difference suites behind the `gradcheck` subcommand:
//! every analytic gradient in the crate against central differences on
//! 30-point grids, each with its own tolerance.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{central_difference_field, sup_relative_error, CheckRow};
use crate::classical::{classical_log_posterior, classical_residual, ClassicalProblem};
use crate::data::{Dataset, Observable, Provenance};
use crate::gradients::{
    d_average_energy, d_energy, d_energy_penalty, d_log_likelihood, d_orbital,
    default_degenerate_threshold,
};
use crate::hartree_fock::{
    hf_log_likelihood_gradient, scf_solve, slater_likelihood, ResponseSettings, ScfSettings,
    TwoBodySpec,
};
use crate::lattice::{
    build_laplacian, build_truncated_rbf, Boundary, Lattice, LatticeField, LatticeOperator,
};
use crate::optimizer::{stationarity_residual, PriorModel, QuantumProblem};
use crate::priors::{
    gaussian_log_density, mixture_log_density, symmetry_energy, EnergyPenalty, GaussianPrior,
    MixtureComponent, MixturePrior, SymmetryPrior,
};
use crate::spectral::{
    assemble_hamiltonian, diagonalize, log_likelihood, thermal_ensemble, HamiltonianSpec,
    SpectralDecomposition, ThermalEnsemble,
};

const TOL_ENERGY: f64 = 1e-5;
const TOL_QUANTUM: f64 = 1e-4;
const TOL_PRIOR: f64 = 1e-6;
const TOL_CLASSICAL: f64 = 1e-5;
const TOL_HF: f64 = 1e-3;

struct Setup {
    lattice: Lattice,
    potential: LatticeField,
    data: Dataset,
    rng: ChaCha12Rng,
}

fn random_smooth_potential(lattice: &Lattice, rng: &mut ChaCha12Rng) -> LatticeField {
    let length = lattice.total_length();
    let modes: Vec<(f64, f64, f64)> = (1..=4)
        .map(|m| {
            (
                rng.gen::<f64>() - 0.5,
                rng.gen::<f64>() - 0.5,
                2.0 * std::f64::consts::PI * m as f64 / length,
            )
        })
        .collect();
    LatticeField::from_fn(lattice, |x| {
        modes
            .iter()
            .map(|(a, b, w)| a * (w * x).sin() + b * (w * x).cos())
            .sum()
    })
}

fn setup(seed: u64) -> Setup {
    let lattice = Lattice::new(30, 0.2, -2.9, Boundary::Dirichlet).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let potential = random_smooth_potential(&lattice, &mut rng);
    let lo = lattice.coord(0);
    let span = lattice.coord(lattice.len() - 1) - lo;
    let samples: Vec<Vec<f64>> = (0..20)
        .map(|_| vec![lo + span * rng.gen::<f64>()])
        .collect();
    let data = Dataset::new(
        Observable::Position,
        1.0,
        samples,
        Provenance::Sampled {
            seed,
            source: "gradcheck".into(),
        },
    )
    .unwrap();
    Setup {
        lattice,
        potential,
        data,
        rng,
    }
}

fn decompose(mass: f64, v: &LatticeField) -> SpectralDecomposition {
    let spec = HamiltonianSpec::new(mass, v.clone(), Boundary::Dirichlet).unwrap();
    diagonalize(&assemble_hamiltonian(&spec)).unwrap()
}

fn ensemble(dec: &SpectralDecomposition, beta: f64) -> ThermalEnsemble {
    thermal_ensemble(dec, beta).unwrap()
}

/// Worst relative error over both probe step sizes.
fn check_both_eps(
    v: &LatticeField,
    analytic: &LatticeField,
    mut f: impl FnMut(&LatticeField) -> f64,
) -> f64 {
    [1e-5, 1e-6]
        .iter()
        .map(|&eps| sup_relative_error(analytic, &central_difference_field(v, eps, &mut f)))
        .fold(0.0, f64::max)
}

fn neg_laplacian(lattice: &Lattice) -> LatticeOperator {
    LatticeOperator::new(lattice, -build_laplacian(lattice).matrix(), true).unwrap()
}

/// Runs every finite-difference suite on seeded random smooth potentials and
/// returns one row per gradient.
pub fn run_all(seed: u64) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    let mut s = setup(seed);
    let mass = 1.0;

    // Eigenvalue derivatives, four lowest levels.
    {
        let dec = decompose(mass, &s.potential);
        let err = (0..4)
            .map(|alpha| {
                let g = d_energy(&dec, alpha).as_field();
                check_both_eps(&s.potential, &g, |vt| decompose(mass, vt).energy(alpha))
            })
            .fold(0.0, f64::max);
        rows.push(CheckRow {
            name: "eigenvalue gradient dE/dv".into(),
            max_rel_err: err,
            tolerance: TOL_ENERGY,
        });
    }

    // Orbital derivatives at a few evaluation points.
    {
        let dec = decompose(mass, &s.potential);
        let thr = default_degenerate_threshold(&dec);
        let err = [(0usize, 7usize), (1, 15), (2, 22)]
            .iter()
            .map(|&(alpha, x_eval)| {
                let g = d_orbital(&dec, alpha, x_eval, thr).as_field();
                check_both_eps(&s.potential, &g, |vt| {
                    decompose(mass, vt).orbital_value(alpha, x_eval)
                })
            })
            .fold(0.0, f64::max);
        rows.push(CheckRow {
            name: "orbital gradient dphi/dv".into(),
            max_rel_err: err,
            tolerance: TOL_QUANTUM,
        });
    }

    // Position log likelihood, both inverse temperatures.
    {
        let err = [1.0, 4.0]
            .iter()
            .map(|&beta| {
                let dec = decompose(mass, &s.potential);
                let ens = ensemble(&dec, beta);
                let g = d_log_likelihood(&dec, &ens, &s.data).unwrap().as_field();
                check_both_eps(&s.potential, &g, |vt| {
                    let d = decompose(mass, vt);
                    let e = ensemble(&d, beta);
                    log_likelihood(&s.data, &d, &e).unwrap()
                })
            })
            .fold(0.0, f64::max);
        rows.push(CheckRow {
            name: "log-likelihood gradient dlnp/dv".into(),
            max_rel_err: err,
            tolerance: TOL_QUANTUM,
        });
    }

    // Thermal average energy.
    {
        let err = [1.0, 4.0]
            .iter()
            .map(|&beta| {
                let dec = decompose(mass, &s.potential);
                let ens = ensemble(&dec, beta);
                let g = d_average_energy(&dec, &ens).as_field();
                check_both_eps(&s.potential, &g, |vt| {
                    ensemble(&decompose(mass, vt), beta).average_energy
                })
            })
            .fold(0.0, f64::max);
        rows.push(CheckRow {
            name: "average energy gradient dU/dv".into(),
            max_rel_err: err,
            tolerance: TOL_QUANTUM,
        });
    }

    // Average-energy penalty.
    {
        let beta = 1.0;
        let dec = decompose(mass, &s.potential);
        let ens = ensemble(&dec, beta);
        let (mu, kappa) = (25.0, ens.average_energy - 0.4);
        let g = d_energy_penalty(&dec, &ens, mu, kappa).as_field();
        let err = check_both_eps(&s.potential, &g, |vt| {
            let u = ensemble(&decompose(mass, vt), beta).average_energy;
            0.5 * mu * (u - kappa) * (u - kappa)
        });
        rows.push(CheckRow {
            name: "energy penalty gradient dE_U/dv".into(),
            max_rel_err: err,
            tolerance: TOL_QUANTUM,
        });
    }

    // Gaussian prior.
    let v0 = random_smooth_potential(&s.lattice, &mut s.rng);
    {
        let prior = GaussianPrior::new(v0.clone(), neg_laplacian(&s.lattice), 0.7).unwrap();
        let (_, g) = gaussian_log_density(&prior, &s.potential).unwrap();
        let err = check_both_eps(&s.potential, &g.as_field(), |vt| {
            gaussian_log_density(&prior, vt).unwrap().0
        });
        rows.push(CheckRow {
            name: "gaussian prior gradient".into(),
            max_rel_err: err,
            tolerance: TOL_PRIOR,
        });
    }

    // Mixture prior with unequal operators.
    {
        let v1 = random_smooth_potential(&s.lattice, &mut s.rng);
        let mixture = MixturePrior::new(
            vec![
                MixtureComponent {
                    weight: 0.4,
                    mean: v0.clone(),
                    inv_covariance: neg_laplacian(&s.lattice),
                },
                MixtureComponent {
                    weight: 0.6,
                    mean: v1,
                    inv_covariance: build_truncated_rbf(&s.lattice, 1.5).unwrap(),
                },
            ],
            1.3,
        )
        .unwrap();
        let (_, g, _) = mixture_log_density(&mixture, &s.potential).unwrap();
        let err = check_both_eps(&s.potential, &g.as_field(), |vt| {
            mixture_log_density(&mixture, vt).unwrap().0
        });
        rows.push(CheckRow {
            name: "mixture prior gradient".into(),
            max_rel_err: err,
            tolerance: TOL_PRIOR,
        });
    }

    // Reflection symmetry energy.
    {
        let prior = SymmetryPrior::new(
            SymmetryPrior::reflection(&s.lattice, LatticeOperator::identity(&s.lattice))
                .unwrap()
                .symmetry_op()
                .clone(),
            neg_laplacian(&s.lattice),
            Some(v0.clone()),
        )
        .unwrap();
        let (_, g) = symmetry_energy(&prior, &s.potential).unwrap();
        let err = check_both_eps(&s.potential, &g.as_field(), |vt| {
            symmetry_energy(&prior, vt).unwrap().0
        });
        rows.push(CheckRow {
            name: "symmetry energy gradient".into(),
            max_rel_err: err,
            tolerance: TOL_PRIOR,
        });
    }

    // Classical posterior gradient.
    {
        let problem = ClassicalProblem {
            lattice: s.lattice,
            beta: 1.0,
            data: s.data.clone(),
            prior: GaussianPrior::new(v0.clone(), neg_laplacian(&s.lattice), 0.4).unwrap(),
            pin_value: Some(0.0),
            symmetric_constraint: false,
        };
        let g = classical_residual(&problem, &s.potential).unwrap();
        let err = check_both_eps(&s.potential, &g.as_field(), |vt| {
            classical_log_posterior(&problem, vt).unwrap()
        });
        rows.push(CheckRow {
            name: "classical posterior gradient".into(),
            max_rel_err: err,
            tolerance: TOL_CLASSICAL,
        });
    }

    // Full quantum posterior residual.
    {
        let problem = QuantumProblem {
            lattice: s.lattice,
            mass,
            beta: 1.0,
            wavefn_boundary: Boundary::Dirichlet,
            data: s.data.clone(),
            prior: PriorModel::Gaussian(
                GaussianPrior::new(v0, neg_laplacian(&s.lattice), 0.4).unwrap(),
            ),
            symmetry: None,
            penalty: Some(EnergyPenalty::new(10.0, -0.5).unwrap()),
            pin_value: Some(0.0),
            symmetric_constraint: false,
        };
        let g = stationarity_residual(&problem, &s.potential).unwrap();
        let err = check_both_eps(&s.potential, &g.as_field(), |vt| {
            crate::optimizer::total_log_posterior(&problem, vt).unwrap()
        });
        rows.push(CheckRow {
            name: "posterior stationarity residual".into(),
            max_rel_err: err,
            tolerance: TOL_QUANTUM,
        });
    }

    // Mean-field pair likelihood over the interaction values.
    {
        let n = 30;
        let sl = Lattice::new(n, 1.0, 0.0, Boundary::Dirichlet).unwrap();
        let dl = Lattice::new(n, 1.0, 0.0, Boundary::Dirichlet).unwrap();
        let one_body = LatticeField::from_fn(&sl, |x| 1e-3 * (x / 10.0) * (x / 10.0));
        let mut v2 = LatticeField::from_fn(&dl, |r| 2.0 * (1.0 - (-0.02 * r * r).exp()));
        v2.set(0, 0.0);
        let spec = TwoBodySpec::new(0.05, one_body.clone(), v2.clone(), 2, Boundary::Dirichlet)
            .unwrap();
        let scf = ScfSettings {
            tolerance: 1e-12,
            max_iterations: 2000,
            ..ScfSettings::default()
        };
        let state = scf_solve(&spec, &scf).unwrap();
        let tuples: Vec<Vec<f64>> = vec![
            vec![sl.coord(5), sl.coord(18)],
            vec![sl.coord(10), sl.coord(24)],
            vec![sl.coord(8), sl.coord(13)],
        ];
        let data = Dataset::new(
            Observable::PositionPair,
            1.0,
            tuples,
            Provenance::Sampled {
                seed,
                source: "gradcheck".into(),
            },
        )
        .unwrap();
        let g = hf_log_likelihood_gradient(&spec, &state, &data, &ResponseSettings::default())
            .unwrap();
        let cells = data.cells(&sl).unwrap();
        let eval = |vt: &LatticeField| -> f64 {
            let sp = TwoBodySpec::new(
                0.05,
                one_body.clone(),
                vt.clone(),
                2,
                Boundary::Dirichlet,
            )
            .unwrap();
            let st = scf_solve(&sp, &scf).unwrap();
            cells
                .iter()
                .map(|t| slater_likelihood(&st, t).unwrap().ln())
                .sum()
        };
        // v(0) stays pinned at zero, so probe only positive distances.
        let h = dl.spacing();
        let eps = 1e-5;
        let mut fd = DVector::zeros(n);
        let mut work = v2.clone();
        for r in 1..n {
            let base = v2.get(r);
            work.set(r, base + eps);
            let plus = eval(&work);
            work.set(r, base - eps);
            let minus = eval(&work);
            work.set(r, base);
            fd[r] = (plus - minus) / (2.0 * eps * h);
        }
        let fd_field = LatticeField::from_vector(&dl, fd);
        let mut analytic = g.as_field();
        analytic.set(0, 0.0);
        let err = sup_relative_error(&analytic, &fd_field);
        rows.push(CheckRow {
            name: "mean-field likelihood gradient".into(),
            max_rel_err: err,
            tolerance: TOL_HF,
        });
    }

    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_under_their_tolerances() {
        for row in run_all(7) {
            assert!(
                row.passed(),
                "{}: rel err {:e} exceeds {:e}",
                row.name,
                row.max_rel_err,
                row.tolerance
            );
        }
    }
}
