//! Measurement datasets: seeded sampling from model densities, ingestion,
//! empirical densities, and optional Gaussian measurement blur.
//!
//! All sampling uses the ChaCha12 generator seeded from a 64-bit value, so a
//! (config, seed) pair reproduces datasets exactly.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::lattice::{Lattice, LatticeField};

/// Name of the pseudo-random generator, recorded in output metadata.
pub const PRNG_IDENTITY: &str = "ChaCha12";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    /// Single particle position per measurement.
    Position,
    /// Simultaneous position pair.
    PositionPair,
    /// Simultaneous N-particle coordinate vector.
    PositionTuple(usize),
}

impl Observable {
    pub fn arity(&self) -> usize {
        match self {
            Observable::Position => 1,
            Observable::PositionPair => 2,
            Observable::PositionTuple(n) => *n,
        }
    }

    pub fn as_str(&self) -> String {
        match self {
            Observable::Position => "position".into(),
            Observable::PositionPair => "position_pair".into(),
            Observable::PositionTuple(n) => format!("position_tuple({n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Sampled { seed: u64, source: String },
    Ingested { path: String },
}

/// A finite set of coordinate tuples measured at inverse temperature beta.
#[derive(Debug, Clone)]
pub struct Dataset {
    observable: Observable,
    beta: f64,
    samples: Vec<Vec<f64>>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        observable: Observable,
        beta: f64,
        samples: Vec<Vec<f64>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dataset beta must be positive, got {beta}"
            )));
        }
        let arity = observable.arity();
        for (index, s) in samples.iter().enumerate() {
            if s.len() != arity {
                return Err(Error::InvalidParameter(format!(
                    "datum {index} has {} coordinates, observable expects {arity}",
                    s.len()
                )));
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "datum {index} has non-finite coordinates"
                )));
            }
        }
        Ok(Self {
            observable,
            beta,
            samples,
            provenance,
        })
    }

    pub fn observable(&self) -> Observable {
        self.observable
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Cell-index tuples on a lattice; every coordinate must be in domain.
    pub fn cells(&self, lattice: &Lattice) -> Result<Vec<Vec<usize>>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(index, s)| {
                s.iter()
                    .map(|&x| {
                        lattice
                            .nearest_cell(x)
                            .ok_or(Error::DatumOutsideDomain { index, value: x })
                    })
                    .collect()
            })
            .collect()
    }

    /// Rejects tuples with two coordinates in the same cell (states excluded
    /// by antisymmetry are not acceptable fermionic data).
    pub fn reject_coincident(&self, lattice: &Lattice) -> Result<()> {
        for (index, cells) in self.cells(lattice)?.iter().enumerate() {
            for a in 0..cells.len() {
                for b in (a + 1)..cells.len() {
                    if cells[a] == cells[b] {
                        return Err(Error::CoincidentCoordinates { index });
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_normalized(total: f64) -> Result<()> {
    let deviation = (total - 1.0).abs();
    if deviation > 1e-8 {
        return Err(Error::UnnormalizedDensity { deviation });
    }
    Ok(())
}

/// Draws the first cell whose cumulative probability exceeds u; ties skip
/// zero-probability cells.
fn draw_cell(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Inverse-CDF sampling of single positions from a density per unit length.
pub fn sample_dataset(density: &LatticeField, n: usize, beta: f64, seed: u64) -> Result<Dataset> {
    let lattice = *density.lattice();
    let h = lattice.spacing();
    check_normalized(density.integral())?;
    if density.iter().any(|p| p < -1e-14) {
        return Err(Error::InvalidParameter("density has negative cells".into()));
    }
    let mut cdf = Vec::with_capacity(lattice.len());
    let mut acc = 0.0;
    for p in density.iter() {
        acc += p.max(0.0) * h;
        cdf.push(acc);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * acc;
            vec![lattice.coord(draw_cell(&cdf, u))]
        })
        .collect();
    Dataset::new(
        Observable::Position,
        beta,
        samples,
        Provenance::Sampled {
            seed,
            source: "position density".into(),
        },
    )
}

/// Inverse-CDF sampling of ordered coordinate pairs from a two-coordinate
/// density (cell probabilities density[(i, j)] * spacing^2).
pub fn sample_pair_dataset(
    density: &DMatrix<f64>,
    lattice: &Lattice,
    n: usize,
    beta: f64,
    seed: u64,
) -> Result<Dataset> {
    let np = lattice.len();
    if density.nrows() != np || density.ncols() != np {
        return Err(Error::LatticeMismatch {
            expected: np,
            found: density.nrows(),
        });
    }
    let cell = lattice.spacing() * lattice.spacing();
    let total: f64 = density.sum() * cell;
    check_normalized(total)?;
    let mut cdf = Vec::with_capacity(np * np);
    let mut acc = 0.0;
    for i in 0..np {
        for j in 0..np {
            acc += density[(i, j)].max(0.0) * cell;
            cdf.push(acc);
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * acc;
            let flat = draw_cell(&cdf, u);
            vec![lattice.coord(flat / np), lattice.coord(flat % np)]
        })
        .collect();
    Dataset::new(
        Observable::PositionPair,
        beta,
        samples,
        Provenance::Sampled {
            seed,
            source: "pair density".into(),
        },
    )
}

/// Normalized histogram: counts per cell / (n * spacing). Integrates to 1
/// when every datum lies in domain.
pub fn empirical_density(data: &Dataset, lattice: &Lattice) -> Result<LatticeField> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut field = LatticeField::zeros(lattice);
    let weight = 1.0 / (data.len() as f64 * lattice.spacing());
    for cells in data.cells(lattice)? {
        for c in cells {
            field.set(c, field.get(c) + weight);
        }
    }
    // Tuple observables deposit arity counts per datum; renormalize to one.
    let arity = data.observable().arity() as f64;
    if arity > 1.0 {
        for i in 0..field.len() {
            field.set(i, field.get(i) / arity);
        }
    }
    Ok(field)
}

/// Histogram of inter-particle distances |x1 - x2| of a pair dataset, as a
/// density per unit length over the distance grid.
pub fn empirical_distance_density(data: &Dataset, distance_lattice: &Lattice) -> Result<LatticeField> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut field = LatticeField::zeros(distance_lattice);
    let weight = 1.0 / (data.len() as f64 * distance_lattice.spacing());
    for (index, s) in data.samples().iter().enumerate() {
        if s.len() != 2 {
            return Err(Error::InvalidParameter(format!(
                "datum {index} is not a pair"
            )));
        }
        let r = (s[0] - s[1]).abs();
        let c = distance_lattice
            .nearest_cell(r)
            .ok_or(Error::DatumOutsideDomain { index, value: r })?;
        field.set(c, field.get(c) + weight);
    }
    Ok(field)
}

/// Adds seeded Gaussian noise (standard Box-Muller) to every coordinate,
/// modelling classical measurement error. Blurred coordinates are reflected
/// at the domain edges so they stay ingestible.
pub fn gaussian_noise_blur(
    data: &Dataset,
    lattice: &Lattice,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let lo = lattice.coord(0);
    let hi = lattice.coord(lattice.len() - 1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 {
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let samples: Vec<Vec<f64>> = data
        .samples()
        .iter()
        .map(|s| {
            s.iter()
                .map(|&x| reflect_into(x + sigma * normal(), lo, hi))
                .collect()
        })
        .collect();
    Dataset::new(
        data.observable(),
        data.beta(),
        samples,
        Provenance::Sampled {
            seed,
            source: format!("gaussian blur sigma={sigma}"),
        },
    )
}

/// Reflects a coordinate into [lo, hi] (mirror at both edges).
fn reflect_into(mut x: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    if width <= 0.0 {
        return lo;
    }
    for _ in 0..64 {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            return x;
        }
    }
    x.clamp(lo, hi)
}
