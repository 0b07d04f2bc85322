//! INI-style experiment configuration: flat sections of key = value lines
//! with an exhaustively enumerated key set. Unknown sections or keys are
//! hard errors, and the resolved configuration (defaults included) can be
//! re-serialized for the output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use potrec::lattice::{
    build_laplacian, build_truncated_rbf, Boundary, Lattice, LatticeField, LatticeOperator,
};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()))
}

/// Raw parsed sections with consumption tracking: every key must be read by
/// exactly one builder, anything left over is rejected.
struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return err(format!("line {}: malformed section header", lineno + 1));
                };
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("line {}: expected key = value", lineno + 1));
            };
            if current.is_empty() {
                return err(format!("line {}: key outside any section", lineno + 1));
            }
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let section = sections.get_mut(&current).expect("section exists");
            if section.insert(key.clone(), value).is_some() {
                return err(format!("line {}: duplicate key '{key}'", lineno + 1));
            }
        }
        Ok(Self { sections })
    }

    fn section(&mut self, name: &str) -> BTreeMap<String, String> {
        self.sections.remove(name).unwrap_or_default()
    }

    fn finish(self) -> Result<()> {
        if let Some((name, _)) = self.sections.iter().next() {
            return err(format!("unknown section '[{name}]'"));
        }
        Ok(())
    }
}

struct SectionReader {
    name: String,
    keys: BTreeMap<String, String>,
}

impl SectionReader {
    fn new(name: &str, keys: BTreeMap<String, String>) -> Self {
        Self {
            name: name.to_string(),
            keys,
        }
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.keys.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| ConfigError(format!("[{}] is missing required key '{key}'", self.name)))
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => parse_f64(&self.name, key, &v),
        }
    }

    fn f64_required(&mut self, key: &str) -> Result<f64> {
        let v = self.required(key)?;
        parse_f64(&self.name, key, &v)
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| ConfigError(format!("[{}] {key}: not a count: '{v}'", self.name))),
        }
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key).as_deref() {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => err(format!("[{}] {key}: expected true/false, got '{v}'", self.name)),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((key, _)) = self.keys.iter().next() {
            return err(format!("[{}] has unknown key '{key}'", self.name));
        }
        Ok(())
    }
}

fn parse_f64(section: &str, key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| ConfigError(format!("[{section}] {key}: not a number: '{v}'")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Quantum,
    Classical,
    HartreeFock,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Quantum => "quantum",
            Mode::Classical => "classical",
            Mode::HartreeFock => "hf",
        }
    }
}

/// Named closed-form field over a lattice, or a column file.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldExpr {
    Zero,
    /// amplitude * sin(2 pi x / period)
    Sine { amplitude: f64, period: f64 },
    /// Sine plus a localized Gaussian bump.
    SinePerturbed {
        amplitude: f64,
        period: f64,
        bump_amplitude: f64,
        bump_center: f64,
        bump_width: f64,
    },
    /// -depth * exp(-(x - center)^2 / (2 width^2))
    GaussianWell { depth: f64, width: f64, center: f64 },
    /// Two equal Gaussian wells centered at c1 and c2.
    DoubleGaussianWell { depth: f64, width: f64, c1: f64, c2: f64 },
    /// b / (1 + exp(-2 gamma (x - k/2)/k)), forced to zero in cell 0.
    Sigmoid { b: f64, gamma: f64, k: f64 },
    /// a * (x / scale)^2
    Quadratic { a: f64, scale: f64 },
    File(PathBuf),
}

impl FieldExpr {
    pub fn parse(section: &str, key: &str, value: &str) -> Result<Self> {
        let tokens: Vec<&str> = value.split_whitespace().collect();
        let num = |i: usize| -> Result<f64> {
            tokens
                .get(i)
                .ok_or_else(|| {
                    ConfigError(format!("[{section}] {key}: '{value}' is missing argument {i}"))
                })
                .and_then(|t| parse_f64(section, key, t))
        };
        let expectetc = |n: usize| -> Result<()> {
            if tokens.len() != n {
                return err(format!(
                    "[{section}] {key}: '{}' takes {} arguments, got {}",
                    tokens[0],
                    n - 1,
                    tokens.len() - 1
                ));
            }
            Ok(())
        };
        match tokens.first().copied() {
            Some("zero") => {
                expectetc(1)?;
                Ok(FieldExpr::Zero)
            }
            Some("sine") => {
                expectetc(3)?;
                Ok(FieldExpr::Sine {
                    amplitude: num(1)?,
                    period: num(2)?,
                })
            }
            Some("sine_perturbed") => {
                expectetc(6)?;
                Ok(FieldExpr::SinePerturbed {
                    amplitude: num(1)?,
                    period: num(2)?,
                    bump_amplitude: num(3)?,
                    bump_center: num(4)?,
                    bump_width: num(5)?,
                })
            }
            Some("gaussian_well") => {
                expectetc(4)?;
                Ok(FieldExpr::GaussianWell {
                    depth: num(1)?,
                    width: num(2)?,
                    center: num(3)?,
                })
            }
            Some("double_gaussian_well") => {
                expectetc(5)?;
                Ok(FieldExpr::DoubleGaussianWell {
                    depth: num(1)?,
                    width: num(2)?,
                    c1: num(3)?,
                    c2: num(4)?,
                })
            }
            Some("sigmoid") => {
                expectetc(4)?;
                Ok(FieldExpr::Sigmoid {
                    b: num(1)?,
                    gamma: num(2)?,
                    k: num(3)?,
                })
            }
            Some("quadratic") => {
                expectetc(3)?;
                Ok(FieldExpr::Quadratic {
                    a: num(1)?,
                    scale: num(2)?,
                })
            }
            Some("file") => {
                expectetc(2)?;
                Ok(FieldExpr::File(PathBuf::from(tokens[1])))
            }
            _ => err(format!(
                "[{section}] {key}: unknown field expression '{value}' \
                 (expected zero | sine | sine_perturbed | gaussian_well | double_gaussian_well | sigmoid | quadratic | file)"
            )),
        }
    }

    pub fn build(&self, lattice: &Lattice) -> Result<LatticeField> {
        let field = match self {
            FieldExpr::Zero => LatticeField::zeros(lattice),
            FieldExpr::Sine { amplitude, period } => LatticeField::from_fn(lattice, |x| {
                amplitude * (2.0 * std::f64::consts::PI * x / period).sin()
            }),
            FieldExpr::SinePerturbed {
                amplitude,
                period,
                bump_amplitude,
                bump_center,
                bump_width,
            } => LatticeField::from_fn(lattice, |x| {
                amplitude * (2.0 * std::f64::consts::PI * x / period).sin()
                    + bump_amplitude
                        * (-(x - bump_center) * (x - bump_center)
                            / (2.0 * bump_width * bump_width))
                            .exp()
            }),
            FieldExpr::GaussianWell { depth, width, center } => {
                LatticeField::from_fn(lattice, |x| {
                    -depth * (-(x - center) * (x - center) / (2.0 * width * width)).exp()
                })
            }
            FieldExpr::DoubleGaussianWell { depth, width, c1, c2 } => {
                LatticeField::from_fn(lattice, |x| {
                    -depth
                        * ((-(x - c1) * (x - c1) / (2.0 * width * width)).exp()
                            + (-(x - c2) * (x - c2) / (2.0 * width * width)).exp())
                })
            }
            FieldExpr::Sigmoid { b, gamma, k } => {
                let mut v = LatticeField::from_fn(lattice, |x| {
                    b / (1.0 + (-2.0 * gamma * (x - k / 2.0) / k).exp())
                });
                v.set(0, 0.0);
                v
            }
            FieldExpr::Quadratic { a, scale } => {
                LatticeField::from_fn(lattice, |x| a * (x / scale) * (x / scale))
            }
            FieldExpr::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    ConfigError(format!("cannot read field file {}: {e}", path.display()))
                })?;
                let values: std::result::Result<Vec<f64>, _> = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(str::parse)
                    .collect();
                let values =
                    values.map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
                LatticeField::from_values(lattice, values)
                    .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
            }
        };
        Ok(field)
    }

    pub fn echo(&self) -> String {
        match self {
            FieldExpr::Zero => "zero".into(),
            FieldExpr::Sine { amplitude, period } => format!("sine {amplitude} {period}"),
            FieldExpr::SinePerturbed {
                amplitude,
                period,
                bump_amplitude,
                bump_center,
                bump_width,
            } => format!(
                "sine_perturbed {amplitude} {period} {bump_amplitude} {bump_center} {bump_width}"
            ),
            FieldExpr::GaussianWell { depth, width, center } => {
                format!("gaussian_well {depth} {width} {center}")
            }
            FieldExpr::DoubleGaussianWell { depth, width, c1, c2 } => {
                format!("double_gaussian_well {depth} {width} {c1} {c2}")
            }
            FieldExpr::Sigmoid { b, gamma, k } => format!("sigmoid {b} {gamma} {k}"),
            FieldExpr::Quadratic { a, scale } => format!("quadratic {a} {scale}"),
            FieldExpr::File(path) => format!("file {}", path.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Laplacian,
    TruncatedRbf,
    Identity,
    /// (I - Laplacian) / 2
    IdentityMinusLaplacianHalf,
}

impl OperatorKind {
    fn parse(v: &str) -> Result<Self> {
        match v {
            "laplacian" => Ok(Self::Laplacian),
            "truncated_rbf" => Ok(Self::TruncatedRbf),
            "identity" => Ok(Self::Identity),
            "identity_minus_laplacian_half" => Ok(Self::IdentityMinusLaplacianHalf),
            _ => err(format!("unknown prior operator '{v}'")),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Self::Laplacian => "laplacian",
            Self::TruncatedRbf => "truncated_rbf",
            Self::Identity => "identity",
            Self::IdentityMinusLaplacianHalf => "identity_minus_laplacian_half",
        }
    }

    pub fn build(self, lattice: &Lattice, sigma_rbf: f64) -> Result<LatticeOperator> {
        let op = match self {
            Self::Laplacian => {
                let lap = build_laplacian(lattice);
                LatticeOperator::new(lattice, -lap.matrix(), true)
                    .map_err(|e| ConfigError(e.to_string()))?
            }
            Self::TruncatedRbf => build_truncated_rbf(lattice, sigma_rbf)
                .map_err(|e| ConfigError(e.to_string()))?,
            Self::Identity => LatticeOperator::identity(lattice),
            Self::IdentityMinusLaplacianHalf => {
                let lap = build_laplacian(lattice);
                let n = lattice.len();
                let m = (nalgebra::DMatrix::<f64>::identity(n, n) - lap.matrix()) * 0.5;
                LatticeOperator::new(lattice, m, true).map_err(|e| ConfigError(e.to_string()))?
            }
        };
        Ok(op)
    }
}

#[derive(Debug, Clone)]
pub struct MixtureComponentSpec {
    pub weight: f64,
    pub reference: FieldExpr,
}

#[derive(Debug, Clone)]
pub struct PriorSpec {
    pub operator: OperatorKind,
    pub sigma_rbf: f64,
    pub lambda: f64,
    pub reference: FieldExpr,
    /// Two or more entries turn the prior into a mixture.
    pub mixture: Vec<MixtureComponentSpec>,
}

#[derive(Debug, Clone)]
pub struct PenaltySpec {
    pub mu: f64,
    /// None means "match the average energy of the true potential".
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Sample,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservableKind {
    Position,
    PositionPair,
}

#[derive(Debug, Clone)]
pub struct DataSpec {
    pub source: DataSource,
    pub file: Option<PathBuf>,
    pub n_samples: usize,
    pub seed: u64,
    pub observable: ObservableKind,
    pub true_potential: Option<FieldExpr>,
    /// Particle masses for two-body reduction of pair data.
    pub pair_masses: Option<(f64, f64)>,
    /// Optional Gaussian measurement blur applied after sampling.
    pub blur_sigma: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OptSpec {
    pub eta: f64,
    pub step_growth: f64,
    pub step_shrink: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub posterior_tolerance: f64,
    pub preconditioner: String,
    pub initial_guess: String,
    pub symmetric: bool,
    pub pin_boundary: Option<f64>,
    pub require_convergence: bool,
}

#[derive(Debug, Clone)]
pub struct HfSpec {
    pub n_particles: usize,
    pub one_body: FieldExpr,
    pub scf_mixing: f64,
    pub scf_tolerance: f64,
    pub scf_max_iterations: usize,
    pub response_tolerance: f64,
    pub response_max_sweeps: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub lattice: Lattice,
    pub mass: f64,
    pub beta: f64,
    pub wavefn_boundary: Boundary,
    pub prior: PriorSpec,
    pub penalty: Option<PenaltySpec>,
    pub data: DataSpec,
    pub optimizer: OptSpec,
    pub hf: Option<HfSpec>,
}

fn parse_boundary(section: &str, key: &str, v: &str) -> Result<Boundary> {
    match v {
        "dirichlet" => Ok(Boundary::Dirichlet),
        "periodic" => Ok(Boundary::Periodic),
        _ => err(format!("[{section}] {key}: expected dirichlet|periodic, got '{v}'")),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;

        let mut run = SectionReader::new("run", raw.section("run"));
        let mode = match run.required("mode")?.as_str() {
            "quantum" => Mode::Quantum,
            "classical" => Mode::Classical,
            "hf" => Mode::HartreeFock,
            other => return err(format!("[run] mode: unknown mode '{other}'")),
        };
        run.finish()?;

        let mut lat = SectionReader::new("lattice", raw.section("lattice"));
        let n_points = lat.usize_or("n_points", 30)?;
        let spacing = lat.f64_or("spacing", 1.0)?;
        let boundary = parse_boundary("lattice", "boundary", &lat.take("boundary").unwrap_or_else(|| "dirichlet".into()))?;
        let origin = match lat.take("origin").as_deref() {
            None | Some("centered") => -0.5 * (n_points as f64 - 1.0) * spacing,
            Some(v) => parse_f64("lattice", "origin", v)?,
        };
        lat.finish()?;
        let lattice = Lattice::new(n_points, spacing, origin, boundary)
            .map_err(|e| ConfigError(e.to_string()))?;

        let mut phys = SectionReader::new("physics", raw.section("physics"));
        let mass = phys.f64_or("mass", 1.0)?;
        let beta = phys.f64_or("beta", 1.0)?;
        let wavefn_boundary = parse_boundary(
            "physics",
            "wavefn_boundary",
            &phys
                .take("wavefn_boundary")
                .unwrap_or_else(|| boundary.as_str().into()),
        )?;
        phys.finish()?;

        let mut prior = SectionReader::new("prior", raw.section("prior"));
        let operator = OperatorKind::parse(
            &prior.take("operator").unwrap_or_else(|| "laplacian".into()),
        )?;
        let sigma_rbf = prior.f64_or("sigma_rbf", 1.0)?;
        let lambda = prior.f64_or("lambda", 1.0)?;
        let reference = FieldExpr::parse(
            "prior",
            "reference",
            &prior.take("reference").unwrap_or_else(|| "zero".into()),
        )?;
        let components = prior.usize_or("components", 1)?;
        let mut mixture = Vec::new();
        if components > 1 {
            for k in 1..=components {
                let weight = prior.f64_required(&format!("weight_{k}"))?;
                let reference =
                    FieldExpr::parse("prior", &format!("reference_{k}"), &prior.required(&format!("reference_{k}"))?)?;
                mixture.push(MixtureComponentSpec { weight, reference });
            }
        }
        prior.finish()?;
        let prior = PriorSpec {
            operator,
            sigma_rbf,
            lambda,
            reference,
            mixture,
        };

        let mut pen = SectionReader::new("penalty", raw.section("penalty"));
        let mu = pen.f64_or("mu", 0.0)?;
        let kappa = match pen.take("kappa").as_deref() {
            None | Some("auto") => None,
            Some(v) => Some(parse_f64("penalty", "kappa", v)?),
        };
        pen.finish()?;
        let penalty = if mu > 0.0 { Some(PenaltySpec { mu, kappa }) } else { None };

        let mut data = SectionReader::new("data", raw.section("data"));
        let source = match data.take("source").as_deref() {
            None | Some("sample") => DataSource::Sample,
            Some("file") => DataSource::File,
            Some(v) => return err(format!("[data] source: expected sample|file, got '{v}'")),
        };
        let file = data.take("file").map(PathBuf::from);
        let n_samples = data.usize_or("n_samples", 100)?;
        let seed = data.usize_or("seed", 1)? as u64;
        let observable = match data.take("observable").as_deref() {
            None | Some("position") => ObservableKind::Position,
            Some("position_pair") => ObservableKind::PositionPair,
            Some(v) => {
                return err(format!(
                    "[data] observable: expected position|position_pair, got '{v}'"
                ))
            }
        };
        let true_potential = data
            .take("true_potential")
            .map(|v| FieldExpr::parse("data", "true_potential", &v))
            .transpose()?;
        let pair_masses = match (data.take("m1"), data.take("m2")) {
            (None, None) => None,
            (Some(a), Some(b)) => Some((
                parse_f64("data", "m1", &a)?,
                parse_f64("data", "m2", &b)?,
            )),
            _ => return err("[data] m1 and m2 must be given together"),
        };
        let blur_sigma = data
            .take("blur_sigma")
            .map(|v| parse_f64("data", "blur_sigma", &v))
            .transpose()?;
        data.finish()?;
        if source == DataSource::File && file.is_none() {
            return err("[data] source = file requires a 'file' key");
        }
        if source == DataSource::Sample && true_potential.is_none() && mode != Mode::HartreeFock {
            return err("[data] source = sample requires 'true_potential'");
        }
        let data = DataSpec {
            source,
            file,
            n_samples,
            seed,
            observable,
            true_potential,
            pair_masses,
            blur_sigma,
        };

        let mut opt = SectionReader::new("optimizer", raw.section("optimizer"));
        let optimizer = OptSpec {
            eta: opt.f64_or("eta", 0.5)?,
            step_growth: opt.f64_or("step_growth", 1.2)?,
            step_shrink: opt.f64_or("step_shrink", 0.5)?,
            max_iterations: opt.usize_or("max_iterations", 500)?,
            gradient_tolerance: opt.f64_or("gradient_tolerance", 1e-6)?,
            posterior_tolerance: opt.f64_or("posterior_tolerance", 1e-10)?,
            preconditioner: {
                let v = opt.take("preconditioner").unwrap_or_else(|| "prior".into());
                if v != "prior" && v != "identity" {
                    return err(format!(
                        "[optimizer] preconditioner: expected prior|identity, got '{v}'"
                    ));
                }
                v
            },
            initial_guess: {
                let v = opt.take("initial_guess").unwrap_or_else(|| "reference".into());
                if v != "reference" && v != "delta_peaks" {
                    return err(format!(
                        "[optimizer] initial_guess: expected reference|delta_peaks, got '{v}'"
                    ));
                }
                v
            },
            symmetric: opt.bool_or("symmetric", false)?,
            pin_boundary: match opt.take("pin_boundary").as_deref() {
                None => Some(0.0),
                Some("none") => None,
                Some(v) => Some(parse_f64("optimizer", "pin_boundary", v)?),
            },
            require_convergence: opt.bool_or("require_convergence", true)?,
        };
        opt.finish()?;

        let hf_section = raw.section("hf");
        let hf = if mode == Mode::HartreeFock {
            let mut hf = SectionReader::new("hf", hf_section);
            let spec = HfSpec {
                n_particles: hf.usize_or("n_particles", 2)?,
                one_body: FieldExpr::parse(
                    "hf",
                    "one_body",
                    &hf.take("one_body").unwrap_or_else(|| "zero".into()),
                )?,
                scf_mixing: hf.f64_or("scf_mixing", 0.5)?,
                scf_tolerance: hf.f64_or("scf_tolerance", 1e-10)?,
                scf_max_iterations: hf.usize_or("scf_max_iterations", 500)?,
                response_tolerance: hf.f64_or("response_tolerance", 1e-9)?,
                response_max_sweeps: hf.usize_or("response_max_sweeps", 400)?,
            };
            hf.finish()?;
            Some(spec)
        } else {
            if !hf_section.is_empty() {
                return err("[hf] section is only valid in hf mode");
            }
            None
        };

        raw.finish()?;
        Ok(Self {
            mode,
            lattice,
            mass,
            beta,
            wavefn_boundary,
            prior,
            penalty,
            data,
            optimizer,
            hf,
        })
    }

    /// Serializes the fully resolved configuration, defaults included, in a
    /// fixed order so identical configs give byte-identical echoes.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "mode = {}", self.mode.as_str());
        let _ = writeln!(s, "\n[lattice]");
        let _ = writeln!(s, "n_points = {}", self.lattice.len());
        let _ = writeln!(s, "spacing = {}", self.lattice.spacing());
        let _ = writeln!(s, "origin = {}", self.lattice.origin());
        let _ = writeln!(s, "boundary = {}", self.lattice.boundary().as_str());
        let _ = writeln!(s, "\n[physics]");
        let _ = writeln!(s, "mass = {}", self.mass);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "wavefn_boundary = {}", self.wavefn_boundary.as_str());
        let _ = writeln!(s, "\n[prior]");
        let _ = writeln!(s, "operator = {}", self.prior.operator.as_str());
        let _ = writeln!(s, "sigma_rbf = {}", self.prior.sigma_rbf);
        let _ = writeln!(s, "lambda = {}", self.prior.lambda);
        let _ = writeln!(s, "reference = {}", self.prior.reference.echo());
        if !self.prior.mixture.is_empty() {
            let _ = writeln!(s, "components = {}", self.prior.mixture.len());
            for (i, c) in self.prior.mixture.iter().enumerate() {
                let _ = writeln!(s, "weight_{} = {}", i + 1, c.weight);
                let _ = writeln!(s, "reference_{} = {}", i + 1, c.reference.echo());
            }
        }
        let _ = writeln!(s, "\n[penalty]");
        match &self.penalty {
            Some(p) => {
                let _ = writeln!(s, "mu = {}", p.mu);
                match p.kappa {
                    Some(k) => {
                        let _ = writeln!(s, "kappa = {k}");
                    }
                    None => {
                        let _ = writeln!(s, "kappa = auto");
                    }
                }
            }
            None => {
                let _ = writeln!(s, "mu = 0");
            }
        }
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(
            s,
            "source = {}",
            match self.data.source {
                DataSource::Sample => "sample",
                DataSource::File => "file",
            }
        );
        if let Some(f) = &self.data.file {
            let _ = writeln!(s, "file = {}", f.display());
        }
        let _ = writeln!(s, "n_samples = {}", self.data.n_samples);
        let _ = writeln!(s, "seed = {}", self.data.seed);
        let _ = writeln!(
            s,
            "observable = {}",
            match self.data.observable {
                ObservableKind::Position => "position",
                ObservableKind::PositionPair => "position_pair",
            }
        );
        if let Some(t) = &self.data.true_potential {
            let _ = writeln!(s, "true_potential = {}", t.echo());
        }
        if let Some((m1, m2)) = self.data.pair_masses {
            let _ = writeln!(s, "m1 = {m1}");
            let _ = writeln!(s, "m2 = {m2}");
        }
        if let Some(b) = self.data.blur_sigma {
            let _ = writeln!(s, "blur_sigma = {b}");
        }
        let _ = writeln!(s, "\n[optimizer]");
        let o = &self.optimizer;
        let _ = writeln!(s, "eta = {}", o.eta);
        let _ = writeln!(s, "step_growth = {}", o.step_growth);
        let _ = writeln!(s, "step_shrink = {}", o.step_shrink);
        let _ = writeln!(s, "max_iterations = {}", o.max_iterations);
        let _ = writeln!(s, "gradient_tolerance = {}", o.gradient_tolerance);
        let _ = writeln!(s, "posterior_tolerance = {}", o.posterior_tolerance);
        let _ = writeln!(s, "preconditioner = {}", o.preconditioner);
        let _ = writeln!(s, "initial_guess = {}", o.initial_guess);
        let _ = writeln!(s, "symmetric = {}", o.symmetric);
        match o.pin_boundary {
            Some(v) => {
                let _ = writeln!(s, "pin_boundary = {v}");
            }
            None => {
                let _ = writeln!(s, "pin_boundary = none");
            }
        }
        let _ = writeln!(s, "require_convergence = {}", o.require_convergence);
        if let Some(hf) = &self.hf {
            let _ = writeln!(s, "\n[hf]");
            let _ = writeln!(s, "n_particles = {}", hf.n_particles);
            let _ = writeln!(s, "one_body = {}", hf.one_body.echo());
            let _ = writeln!(s, "scf_mixing = {}", hf.scf_mixing);
            let _ = writeln!(s, "scf_tolerance = {}", hf.scf_tolerance);
            let _ = writeln!(s, "scf_max_iterations = {}", hf.scf_max_iterations);
            let _ = writeln!(s, "response_tolerance = {}", hf.response_tolerance);
            let _ = writeln!(s, "response_max_sweeps = {}", hf.response_max_sweeps);
        }
        s
    }
}
