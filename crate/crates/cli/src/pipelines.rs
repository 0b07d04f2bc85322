//! Builds problems out of a resolved configuration and drives the
//! reconstruction pipelines, writing datasets, curve files, a frozen copy of
//! the configuration, and a run summary into the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use potrec::classical::{classical_likelihood, classical_map, ClassicalProblem};
use potrec::data::{
    empirical_density, empirical_distance_density, gaussian_noise_blur, sample_dataset,
    sample_pair_dataset, Dataset, Observable, Provenance, PRNG_IDENTITY,
};
use potrec::hartree_fock::{
    exact_two_body, hf_pair_density, pair_distance_density, scf_solve, HartreeFockProblem,
    ResponseSettings, ScfSettings, TwoBodySpec,
};
use potrec::lattice::{Boundary, Lattice, LatticeField};
use potrec::optimizer::{
    iterate, InitialGuess, OptimizerConfig, Preconditioner, PriorModel, QuantumProblem,
    ReconstructionResult,
};
use potrec::priors::{EnergyPenalty, GaussianPrior, MixtureComponent, MixturePrior};
use potrec::spectral::{
    assemble_hamiltonian, diagonalize, position_likelihood, reduce_two_body, thermal_ensemble,
    HamiltonianSpec,
};

use crate::config::{
    ConfigError, DataSource, ExperimentConfig, Mode, ObservableKind, PenaltySpec,
};
use crate::files::{read_dataset, write_curves, write_dataset, Curves};

/// Failure with the process exit code it maps to: 2 configuration,
/// 3 numerical failure, 4 non-convergence.
#[derive(Debug)]
pub struct RunError {
    pub exit_code: i32,
    pub message: String,
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError {
            exit_code: 2,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError {
            exit_code: 3,
            message: format!("i/o error: {e}"),
        }
    }
}

fn numerical(e: potrec::Error) -> RunError {
    let exit_code = match e {
        potrec::Error::LineSearchStall { .. }
        | potrec::Error::ScfNonConvergence { .. }
        | potrec::Error::ResponseNonConvergence { .. } => 4,
        _ => 3,
    };
    RunError {
        exit_code,
        message: e.to_string(),
    }
}

type Result<T> = std::result::Result<T, RunError>;

fn quantum_likelihood(
    v: &LatticeField,
    mass: f64,
    beta: f64,
    boundary: Boundary,
) -> Result<LatticeField> {
    let spec = HamiltonianSpec::new(mass, v.clone(), boundary).map_err(numerical)?;
    let dec = diagonalize(&assemble_hamiltonian(&spec)).map_err(numerical)?;
    let ens = thermal_ensemble(&dec, beta).map_err(numerical)?;
    Ok(position_likelihood(&dec, &ens))
}

fn average_energy(v: &LatticeField, mass: f64, beta: f64, boundary: Boundary) -> Result<f64> {
    let spec = HamiltonianSpec::new(mass, v.clone(), boundary).map_err(numerical)?;
    let dec = diagonalize(&assemble_hamiltonian(&spec)).map_err(numerical)?;
    Ok(thermal_ensemble(&dec, beta).map_err(numerical)?.average_energy)
}

fn optimizer_config(cfg: &ExperimentConfig) -> OptimizerConfig {
    let o = &cfg.optimizer;
    OptimizerConfig {
        step_eta: o.eta,
        preconditioner: if o.preconditioner == "identity" {
            Preconditioner::Identity
        } else {
            Preconditioner::PriorOperator
        },
        max_iterations: o.max_iterations,
        gradient_tolerance: o.gradient_tolerance,
        posterior_tolerance: o.posterior_tolerance,
        step_growth: o.step_growth,
        step_shrink: o.step_shrink,
        initial_guess: if o.initial_guess == "delta_peaks" {
            InitialGuess::DeltaPeaks
        } else {
            InitialGuess::Reference
        },
    }
}

fn build_prior(cfg: &ExperimentConfig, lattice: &Lattice) -> Result<PriorModel> {
    let spec = &cfg.prior;
    let operator = spec.operator.build(lattice, spec.sigma_rbf)?;
    if spec.mixture.is_empty() {
        let mean = spec.reference.build(lattice)?;
        let prior = GaussianPrior::new(mean, operator, spec.lambda).map_err(numerical)?;
        Ok(PriorModel::Gaussian(prior))
    } else {
        let mut components = Vec::new();
        for c in &spec.mixture {
            components.push(MixtureComponent {
                weight: c.weight,
                mean: c.reference.build(lattice)?,
                inv_covariance: spec.operator.build(lattice, spec.sigma_rbf)?,
            });
        }
        let prior = MixturePrior::new(components, spec.lambda).map_err(numerical)?;
        Ok(PriorModel::Mixture(prior))
    }
}

/// True potential on the lattice, when the configuration declares one.
fn true_potential(cfg: &ExperimentConfig, lattice: &Lattice) -> Result<Option<LatticeField>> {
    cfg.data
        .true_potential
        .as_ref()
        .map(|e| e.build(lattice).map_err(RunError::from))
        .transpose()
}

/// Position dataset for the quantum and classical pipelines: sampled from
/// the true quantum likelihood or ingested from a file, pairs reduced to
/// relative coordinates. Returns the dataset and the effective mass.
fn position_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, f64)> {
    let mut mass = cfg.mass;
    let data = match cfg.data.source {
        DataSource::Sample => {
            let v_true = true_potential(cfg, &cfg.lattice)?.ok_or_else(|| {
                RunError::from(ConfigError("sampling requires a true potential".into()))
            })?;
            let p = quantum_likelihood(&v_true, cfg.mass, cfg.beta, cfg.wavefn_boundary)?;
            let data =
                sample_dataset(&p, cfg.data.n_samples, cfg.beta, seed).map_err(numerical)?;
            match cfg.data.blur_sigma {
                Some(sigma) => gaussian_noise_blur(&data, &cfg.lattice, sigma, seed ^ 0x5eed)
                    .map_err(numerical)?,
                None => data,
            }
        }
        DataSource::File => {
            let path = cfg.data.file.as_ref().expect("validated");
            let data = read_dataset(path)?;
            match (cfg.data.observable, data.observable()) {
                (ObservableKind::Position, Observable::Position) => data,
                (ObservableKind::PositionPair, Observable::PositionPair) => {
                    let (m1, m2) = cfg.data.pair_masses.ok_or_else(|| {
                        RunError::from(ConfigError(
                            "pair data need [data] m1 and m2 for the two-body reduction".into(),
                        ))
                    })?;
                    let pairs: Vec<(f64, f64)> = data
                        .samples()
                        .iter()
                        .map(|s| (s[0], s[1]))
                        .collect();
                    let (reduced, relative) =
                        reduce_two_body(m1, m2, &pairs).map_err(numerical)?;
                    mass = reduced;
                    Dataset::new(
                        Observable::Position,
                        data.beta(),
                        relative.into_iter().map(|x| vec![x]).collect(),
                        Provenance::Ingested {
                            path: path.display().to_string(),
                        },
                    )
                    .map_err(numerical)?
                }
                (want, got) => {
                    return Err(RunError::from(ConfigError(format!(
                        "dataset observable {} does not match configured {want:?}",
                        got.as_str()
                    ))))
                }
            }
        }
    };
    Ok((data, mass))
}

fn resolve_penalty(
    cfg: &ExperimentConfig,
    mass: f64,
    v_true: Option<&LatticeField>,
) -> Result<Option<EnergyPenalty>> {
    let Some(PenaltySpec { mu, kappa }) = &cfg.penalty else {
        return Ok(None);
    };
    let kappa = match kappa {
        Some(k) => *k,
        None => {
            let v = v_true.ok_or_else(|| {
                RunError::from(ConfigError(
                    "kappa = auto requires [data] true_potential".into(),
                ))
            })?;
            average_energy(v, mass, cfg.beta, cfg.wavefn_boundary)?
        }
    };
    Ok(Some(EnergyPenalty::new(*mu, kappa).map_err(numerical)?))
}

pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub converged: bool,
}

fn ensure_out(out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    Ok(())
}

fn write_summary(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    seed: u64,
    result: &ReconstructionResult,
) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "mode = {}", cfg.mode.as_str());
    let _ = writeln!(s, "prng = {PRNG_IDENTITY}");
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "iterations = {}", result.iterations_used);
    let _ = writeln!(s, "stop_reason = {:?}", result.stop_reason);
    let _ = writeln!(s, "converged = {}", result.converged());
    let _ = writeln!(s, "final_gradient_norm = {:.16e}", result.final_gradient_norm);
    if let (Some(first), Some(last)) = (
        result.log_posterior_trace.first(),
        result.log_posterior_trace.last(),
    ) {
        let _ = writeln!(s, "log_posterior_initial = {first:.16e}");
        let _ = writeln!(s, "log_posterior_final = {last:.16e}");
    }
    let _ = writeln!(s, "average_energy = {:.16e}", result.summary.average_energy);
    let _ = writeln!(s, "ground_energy = {:.16e}", result.summary.ground_energy);
    let _ = writeln!(s, "log_partition = {:.16e}", result.summary.log_partition);
    if let Some(r) = &result.responsibilities {
        let parts: Vec<String> = r.iter().map(|x| format!("{x:.16e}")).collect();
        let _ = writeln!(s, "responsibilities = {}", parts.join(" "));
    }
    // Operator assembly convention for the record: the prior operator is
    // built with the boundary tag of the potential lattice.
    let _ = writeln!(
        s,
        "prior_operator_boundary = {}",
        cfg.lattice.boundary().as_str()
    );
    let _ = writeln!(s, "step_control = backtracking non-decrease");
    std::fs::write(out_dir.join("summary.txt"), s)?;
    Ok(())
}

fn echo_config(out_dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::write(out_dir.join("config_resolved.ini"), cfg.echo())?;
    Ok(())
}

/// `sample`: draw a dataset and write it out.
pub fn run_sample(cfg: &ExperimentConfig, out_dir: &Path, verbose: bool) -> Result<RunArtifacts> {
    ensure_out(out_dir)?;
    let seed = cfg.data.seed;
    match cfg.mode {
        Mode::Quantum | Mode::Classical => {
            let (data, _) = position_data(cfg, seed)?;
            write_dataset(&out_dir.join("dataset.txt"), &data)?;
        }
        Mode::HartreeFock => {
            let (data, _, _) = hf_data(cfg, seed)?;
            write_dataset(&out_dir.join("dataset.txt"), &data)?;
        }
    }
    echo_config(out_dir, cfg)?;
    if verbose {
        println!("sampled dataset with seed {seed} into {}", out_dir.display());
    }
    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        converged: true,
    })
}

/// `reconstruct`: the quantum single-particle pipeline.
pub fn run_reconstruct(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    verbose: bool,
) -> Result<RunArtifacts> {
    ensure_out(out_dir)?;
    let seed = cfg.data.seed;
    let (data, mass) = position_data(cfg, seed)?;
    let v_true = true_potential(cfg, &cfg.lattice)?;
    let prior = build_prior(cfg, &cfg.lattice)?;
    let penalty = resolve_penalty(cfg, mass, v_true.as_ref())?;
    let problem = QuantumProblem {
        lattice: cfg.lattice,
        mass,
        beta: cfg.beta,
        wavefn_boundary: cfg.wavefn_boundary,
        data: data.clone(),
        prior,
        symmetry: None,
        penalty,
        pin_value: cfg.optimizer.pin_boundary,
        symmetric_constraint: cfg.optimizer.symmetric,
    };
    let result = iterate(&problem, &optimizer_config(cfg)).map_err(numerical)?;

    if matches!(cfg.data.source, DataSource::Sample) {
        write_dataset(&out_dir.join("dataset.txt"), &data)?;
    }
    let p_true = v_true
        .as_ref()
        .map(|v| quantum_likelihood(v, mass, cfg.beta, cfg.wavefn_boundary))
        .transpose()?;
    let p_rec = quantum_likelihood(&result.potential, mass, cfg.beta, cfg.wavefn_boundary)?;
    // Symmetric-constrained runs report the symmetrized histogram, the
    // natural comparison for a mirror-symmetric reconstruction.
    let p_emp = {
        let raw = empirical_density(&data, &cfg.lattice).map_err(numerical)?;
        if cfg.optimizer.symmetric {
            raw.symmetrized()
        } else {
            raw
        }
    };
    let v_ref = problem.prior.reference();
    write_curves(
        &out_dir.join("curves.csv"),
        &Curves {
            x: cfg.lattice.coords(),
            v_true: v_true.as_ref(),
            v_ref: Some(&v_ref),
            v_rec: Some(&result.potential),
            p_true: p_true.as_ref(),
            p_emp: Some(&p_emp),
            p_rec: Some(&p_rec),
        },
    )?;
    echo_config(out_dir, cfg)?;
    write_summary(out_dir, cfg, seed, &result)?;
    if verbose {
        println!(
            "reconstruction finished after {} iterations ({:?})",
            result.iterations_used, result.stop_reason
        );
    }
    finish(cfg, out_dir, &result)
}

/// `classical`: the mass-independent classical-limit pipeline.
pub fn run_classical(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    verbose: bool,
) -> Result<RunArtifacts> {
    ensure_out(out_dir)?;
    if cfg.penalty.is_some() {
        return Err(RunError::from(ConfigError(
            "the classical pipeline has no average-energy penalty".into(),
        )));
    }
    if !cfg.prior.mixture.is_empty() {
        return Err(RunError::from(ConfigError(
            "the classical pipeline supports a single Gaussian prior".into(),
        )));
    }
    let seed = cfg.data.seed;
    let (data, mass) = position_data(cfg, seed)?;
    let v_true = true_potential(cfg, &cfg.lattice)?;
    let operator = cfg.prior.operator.build(&cfg.lattice, cfg.prior.sigma_rbf)?;
    let mean = cfg.prior.reference.build(&cfg.lattice)?;
    let prior = GaussianPrior::new(mean, operator, cfg.prior.lambda).map_err(numerical)?;
    let problem = ClassicalProblem {
        lattice: cfg.lattice,
        beta: cfg.beta,
        data: data.clone(),
        prior,
        pin_value: cfg.optimizer.pin_boundary,
        symmetric_constraint: cfg.optimizer.symmetric,
    };
    let result = classical_map(&problem, &optimizer_config(cfg)).map_err(numerical)?;

    if matches!(cfg.data.source, DataSource::Sample) {
        write_dataset(&out_dir.join("dataset.txt"), &data)?;
    }
    // The reference curve for the true potential stays the quantum
    // likelihood the data were sampled from; the reconstruction curve is the
    // classical density of the recovered potential.
    let p_true = v_true
        .as_ref()
        .map(|v| quantum_likelihood(v, mass, cfg.beta, cfg.wavefn_boundary))
        .transpose()?;
    let p_rec = classical_likelihood(&result.potential, cfg.beta).map_err(numerical)?;
    let p_emp = {
        let raw = empirical_density(&data, &cfg.lattice).map_err(numerical)?;
        if cfg.optimizer.symmetric {
            raw.symmetrized()
        } else {
            raw
        }
    };
    let v_ref = problem.prior.mean().clone();
    write_curves(
        &out_dir.join("curves.csv"),
        &Curves {
            x: cfg.lattice.coords(),
            v_true: v_true.as_ref(),
            v_ref: Some(&v_ref),
            v_rec: Some(&result.potential),
            p_true: p_true.as_ref(),
            p_emp: Some(&p_emp),
            p_rec: Some(&p_rec),
        },
    )?;
    echo_config(out_dir, cfg)?;
    write_summary(out_dir, cfg, seed, &result)?;
    if verbose {
        println!(
            "classical reconstruction finished after {} iterations ({:?})",
            result.iterations_used, result.stop_reason
        );
    }
    finish(cfg, out_dir, &result)
}

/// Distance lattice of the interaction: same cell count and spacing as the
/// spatial grid, with distances starting at zero.
fn distance_lattice(cfg: &ExperimentConfig) -> Result<Lattice> {
    Lattice::new(
        cfg.lattice.len(),
        cfg.lattice.spacing(),
        0.0,
        Boundary::Dirichlet,
    )
    .map_err(numerical)
}

type HfData = (Dataset, Option<LatticeField>, LatticeField);

/// Dataset, true interaction, and one-body potential for the mean-field
/// pipeline. Pair data are sampled from the exact two-body density.
fn hf_data(cfg: &ExperimentConfig, seed: u64) -> Result<HfData> {
    let hf = cfg.hf.as_ref().expect("hf mode carries an hf section");
    let dl = distance_lattice(cfg)?;
    let one_body = hf.one_body.build(&cfg.lattice)?;
    let v_true = match &cfg.data.true_potential {
        Some(expr) => {
            let mut v = expr.build(&dl)?;
            v.set(0, 0.0);
            Some(v)
        }
        None => None,
    };
    let data = match cfg.data.source {
        DataSource::Sample => {
            let v = v_true.clone().ok_or_else(|| {
                RunError::from(ConfigError("sampling requires a true interaction".into()))
            })?;
            let spec = TwoBodySpec::new(
                cfg.mass,
                one_body.clone(),
                v,
                hf.n_particles,
                cfg.wavefn_boundary,
            )
            .map_err(numerical)?;
            let (_, density) = exact_two_body(&spec).map_err(numerical)?;
            sample_pair_dataset(&density, &cfg.lattice, cfg.data.n_samples, cfg.beta, seed)
                .map_err(numerical)?
        }
        DataSource::File => read_dataset(cfg.data.file.as_ref().expect("validated"))?,
    };
    data.reject_coincident(&cfg.lattice).map_err(numerical)?;
    Ok((data, v_true, one_body))
}

/// `hf`: the inverse mean-field pipeline over the interaction v(r).
pub fn run_hf(cfg: &ExperimentConfig, out_dir: &Path, verbose: bool) -> Result<RunArtifacts> {
    ensure_out(out_dir)?;
    let hf = cfg.hf.as_ref().ok_or_else(|| {
        RunError::from(ConfigError("hf mode requires an [hf] section".into()))
    })?;
    let seed = cfg.data.seed;
    let dl = distance_lattice(cfg)?;
    let (data, v_true, one_body) = hf_data(cfg, seed)?;
    if !cfg.prior.mixture.is_empty() {
        return Err(RunError::from(ConfigError(
            "the mean-field pipeline supports a single Gaussian prior".into(),
        )));
    }
    let operator = cfg.prior.operator.build(&dl, cfg.prior.sigma_rbf)?;
    let mut reference = cfg.prior.reference.build(&dl)?;
    reference.set(0, 0.0);
    let prior = GaussianPrior::new(reference, operator, cfg.prior.lambda).map_err(numerical)?;

    let scf = ScfSettings {
        mixing: hf.scf_mixing,
        max_iterations: hf.scf_max_iterations,
        tolerance: hf.scf_tolerance,
    };
    let penalty = match &cfg.penalty {
        None => None,
        Some(PenaltySpec { mu, kappa }) => {
            let kappa = match kappa {
                Some(k) => *k,
                None => {
                    let v = v_true.clone().ok_or_else(|| {
                        RunError::from(ConfigError(
                            "kappa = auto requires [data] true_potential".into(),
                        ))
                    })?;
                    let spec = TwoBodySpec::new(
                        cfg.mass,
                        one_body.clone(),
                        v,
                        hf.n_particles,
                        cfg.wavefn_boundary,
                    )
                    .map_err(numerical)?;
                    scf_solve(&spec, &scf).map_err(numerical)?.hf_ground_energy()
                }
            };
            Some(EnergyPenalty::new(*mu, kappa).map_err(numerical)?)
        }
    };

    let problem = HartreeFockProblem {
        mass: cfg.mass,
        one_body_potential: one_body.clone(),
        n_particles: hf.n_particles,
        wavefn_boundary: cfg.wavefn_boundary,
        data: data.clone(),
        prior,
        penalty,
        scf,
        response: ResponseSettings {
            tolerance: hf.response_tolerance,
            max_sweeps: hf.response_max_sweeps,
        },
    };
    let result =
        potrec::hartree_fock::hf_reconstruct(&problem, &optimizer_config(cfg)).map_err(numerical)?;

    if matches!(cfg.data.source, DataSource::Sample) {
        write_dataset(&out_dir.join("dataset.txt"), &data)?;
    }

    // Curves live on the distance grid; likelihood columns are densities of
    // the inter-particle distance.
    let distance_density = |v: &LatticeField| -> Result<Option<LatticeField>> {
        if hf.n_particles != 2 {
            return Ok(None);
        }
        let spec = TwoBodySpec::new(
            cfg.mass,
            one_body.clone(),
            v.clone(),
            2,
            cfg.wavefn_boundary,
        )
        .map_err(numerical)?;
        let state = scf_solve(&spec, &problem.scf).map_err(numerical)?;
        let density = hf_pair_density(&state).map_err(numerical)?;
        Ok(Some(pair_distance_density(&density, &dl)))
    };
    let p_true = match &v_true {
        Some(v) if hf.n_particles == 2 => {
            let spec =
                TwoBodySpec::new(cfg.mass, one_body.clone(), v.clone(), 2, cfg.wavefn_boundary)
                    .map_err(numerical)?;
            let (_, density) = exact_two_body(&spec).map_err(numerical)?;
            Some(pair_distance_density(&density, &dl))
        }
        _ => None,
    };
    let p_rec = distance_density(&result.potential)?;
    let p_emp = empirical_distance_density(&data, &dl).map_err(numerical)?;
    let v_ref = problem.prior.mean().clone();
    write_curves(
        &out_dir.join("curves.csv"),
        &Curves {
            x: dl.coords(),
            v_true: v_true.as_ref(),
            v_ref: Some(&v_ref),
            v_rec: Some(&result.potential),
            p_true: p_true.as_ref(),
            p_emp: Some(&p_emp),
            p_rec: p_rec.as_ref(),
        },
    )?;
    echo_config(out_dir, cfg)?;
    write_summary(out_dir, cfg, seed, &result)?;
    if verbose {
        println!(
            "mean-field reconstruction finished after {} iterations ({:?})",
            result.iterations_used, result.stop_reason
        );
    }
    finish(cfg, out_dir, &result)
}

fn finish(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    result: &ReconstructionResult,
) -> Result<RunArtifacts> {
    if cfg.optimizer.require_convergence && !result.converged() {
        return Err(RunError {
            exit_code: 4,
            message: format!(
                "did not converge within {} iterations (final gradient norm {:.3e})",
                result.iterations_used, result.final_gradient_norm
            ),
        });
    }
    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        converged: result.converged(),
    })
}

/// `gradcheck`: run every finite-difference suite and print the table.
pub fn run_gradcheck(seed: u64) -> i32 {
    let rows = potrec::gradcheck::run_all(seed);
    let mut all_pass = true;
    println!("{:<38} {:>12} {:>12} {:>6}", "gradient", "max rel err", "tolerance", "ok");
    for row in &rows {
        let ok = row.passed();
        all_pass &= ok;
        println!(
            "{:<38} {:>12.3e} {:>12.1e} {:>6}",
            row.name,
            row.max_rel_err,
            row.tolerance,
            if ok { "pass" } else { "FAIL" }
        );
    }
    if all_pass {
        0
    } else {
        3
    }
}

/// `curves`: run the configured pipeline but only write the curves file.
pub fn run_curves(cfg: &ExperimentConfig, out_dir: &Path, verbose: bool) -> Result<RunArtifacts> {
    match cfg.mode {
        Mode::Quantum => run_reconstruct(cfg, out_dir, verbose),
        Mode::Classical => run_classical(cfg, out_dir, verbose),
        Mode::HartreeFock => run_hf(cfg, out_dir, verbose),
    }
}
