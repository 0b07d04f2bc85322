//! On-disk formats: dataset text files, plot-ready curve CSVs, and run
//! summaries. All floats are written with 17 significant digits so files
//! reload bit-identically and identical runs produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use potrec::data::{Dataset, Observable, Provenance};
use potrec::lattice::LatticeField;

use crate::config::ConfigError;

type Result<T> = std::result::Result<T, ConfigError>;

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_dataset(path: &Path, data: &Dataset) -> std::io::Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# observable={}", data.observable().as_str());
    let _ = writeln!(s, "# beta={}", fmt_f64(data.beta()));
    let seed = match data.provenance() {
        Provenance::Sampled { seed, .. } => *seed,
        Provenance::Ingested { .. } => 0,
    };
    let _ = writeln!(s, "# seed={seed}");
    for sample in data.samples() {
        let line: Vec<String> = sample.iter().map(|&x| fmt_f64(x)).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    std::fs::write(path, s)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read dataset {}: {e}", path.display())))?;
    let mut observable = None;
    let mut beta = None;
    let mut samples = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let header = header.trim();
            if let Some(v) = header.strip_prefix("observable=") {
                observable = Some(match v {
                    "position" => Observable::Position,
                    "position_pair" => Observable::PositionPair,
                    other => {
                        if let Some(n) = other
                            .strip_prefix("position_tuple(")
                            .and_then(|t| t.strip_suffix(')'))
                        {
                            Observable::PositionTuple(n.parse().map_err(|_| {
                                ConfigError(format!("{}: bad tuple arity", path.display()))
                            })?)
                        } else {
                            return Err(ConfigError(format!(
                                "{}: unknown observable '{other}'",
                                path.display()
                            )));
                        }
                    }
                });
            } else if let Some(v) = header.strip_prefix("beta=") {
                beta = Some(v.parse().map_err(|_| {
                    ConfigError(format!("{}: bad beta '{v}'", path.display()))
                })?);
            }
            continue;
        }
        let coords: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse).collect();
        let coords = coords.map_err(|e| {
            ConfigError(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        samples.push(coords);
    }
    let observable = observable
        .ok_or_else(|| ConfigError(format!("{}: missing observable header", path.display())))?;
    let beta = beta
        .ok_or_else(|| ConfigError(format!("{}: missing beta header", path.display())))?;
    Dataset::new(
        observable,
        beta,
        samples,
        Provenance::Ingested {
            path: path.display().to_string(),
        },
    )
    .map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

/// One column of the curves file; None leaves the field empty.
pub struct Curves<'a> {
    pub x: Vec<f64>,
    pub v_true: Option<&'a LatticeField>,
    pub v_ref: Option<&'a LatticeField>,
    pub v_rec: Option<&'a LatticeField>,
    pub p_true: Option<&'a LatticeField>,
    pub p_emp: Option<&'a LatticeField>,
    pub p_rec: Option<&'a LatticeField>,
}

pub fn write_curves(path: &Path, curves: &Curves<'_>) -> std::io::Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "x,v_true,v_ref,v_rec,p_true,p_emp,p_rec");
    let cell = |f: Option<&LatticeField>, i: usize| -> String {
        f.map(|f| fmt_f64(f.get(i))).unwrap_or_default()
    };
    for (i, &x) in curves.x.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            fmt_f64(x),
            cell(curves.v_true, i),
            cell(curves.v_ref, i),
            cell(curves.v_rec, i),
            cell(curves.p_true, i),
            cell(curves.p_emp, i),
            cell(curves.p_rec, i),
        );
    }
    std::fs::write(path, s)
}

pub fn read_curves(path: &Path) -> Result<Vec<Vec<Option<f64>>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<Option<f64>>, ConfigError> = line
            .split(',')
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse()
                        .map(Some)
                        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))
                }
            })
            .collect();
        rows.push(row?);
    }
    Ok(rows)
}
