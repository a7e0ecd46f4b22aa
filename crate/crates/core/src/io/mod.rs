//! JSON system and realization files, control schedules, reports and CSV output.
//!
//! Rationals are stored as `"p/q"` strings so realizations round-trip exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::engine::{BilinearRealization, ConstantMode, EbifConfig, NonlinearSystem};
use crate::error::IoError;
use crate::reach::ReachSampleSet;
use crate::sim::{ControlSchedule, Trajectory};
use crate::symbolic::{parse_expr, parse_expr_with, parse_rational, Rational, VectorField};

fn path_string(path: &Path) -> String {
    path.display().to_string()
}

/// Reads and deserializes a JSON file, reporting parse errors with line and column.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path_string(path),
        source,
    })?;
    from_json_str(&text, &path_string(path))
}

pub fn from_json_str<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Json {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::Invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|source| IoError::Write {
        path: path_string(path),
        source,
    })
}

/// A parameter given either as a JSON number or as a rational string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(serde_json::Number),
    Text(String),
}

impl ParamValue {
    /// Exact rational value; numbers are read from their shortest decimal form,
    /// so `0.3` becomes `3/10`.
    pub fn to_rational(&self) -> Result<Rational, IoError> {
        let text = match self {
            ParamValue::Number(n) => n.to_string(),
            ParamValue::Text(s) => s.clone(),
        };
        parse_rational(&text).ok_or(IoError::Rational(text))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    pub name: String,
    pub state_dim: usize,
    pub drift: Vec<String>,
    #[serde(default)]
    pub controls: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<BTreeMap<String, ParamValue>>,
    /// Preferred constant handling; a command-line choice overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantMode>,
}

impl SystemFile {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        read_json(path)
    }

    pub fn params(&self) -> Result<BTreeMap<String, Rational>, IoError> {
        let mut out = BTreeMap::new();
        if let Some(p) = &self.params {
            for (k, v) in p {
                out.insert(k.clone(), v.to_rational()?);
            }
        }
        Ok(out)
    }

    fn parse_field(&self, exprs: &[String], what: &str, params: &BTreeMap<String, Rational>) -> Result<VectorField, IoError> {
        if exprs.len() != self.state_dim {
            return Err(IoError::Invalid(format!(
                "{}: {} has {} components, expected {}",
                self.name,
                what,
                exprs.len(),
                self.state_dim
            )));
        }
        let comps = exprs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                parse_expr_with(s, self.state_dim, params).map_err(|source| IoError::Expression {
                    context: format!("{}: {} component {}", self.name, what, i + 1),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VectorField::new(comps).map_err(crate::error::EngineError::from)?)
    }

    pub fn to_system(&self) -> Result<NonlinearSystem, IoError> {
        if self.state_dim == 0 {
            return Err(IoError::Invalid(format!("{}: state_dim must be positive", self.name)));
        }
        let params = self.params()?;
        let f = self.parse_field(&self.drift, "drift", &params)?;
        let g = self
            .controls
            .iter()
            .enumerate()
            .map(|(i, c)| self.parse_field(c, &format!("control {}", i + 1), &params))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(NonlinearSystem::new(self.name.clone(), f, g)?)
    }

    /// EBIF configuration from the file's seed (coordinates when absent) in the
    /// file's constant mode, or offset mode when it names none.
    pub fn default_config(&self) -> Result<EbifConfig, IoError> {
        self.config(self.constants.unwrap_or_default())
    }

    /// EBIF configuration from the file's seed (coordinates when absent).
    pub fn config(&self, mode: ConstantMode) -> Result<EbifConfig, IoError> {
        let cfg = match &self.gamma0 {
            None => EbifConfig::coordinates(self.state_dim),
            Some(gens) => {
                let params = self.params()?;
                let exprs = gens
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        parse_expr_with(s, self.state_dim, &params).map_err(|source| IoError::Expression {
                            context: format!("{}: gamma0 element {}", self.name, i + 1),
                            source,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                EbifConfig::with_seed(exprs)
            }
        };
        Ok(cfg.with_mode(mode))
    }
}

/// Serialized realization; every number is an exact rational string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationFile {
    pub n: usize,
    pub r: usize,
    pub basis: Vec<String>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<String>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<String>>>,
    #[serde(rename = "D0")]
    pub d0: Vec<String>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<String>>,
    #[serde(rename = "projRows")]
    pub proj_rows: Vec<Option<Vec<String>>>,
    #[serde(rename = "chainDims")]
    pub chain_dims: Vec<usize>,
    #[serde(rename = "kStar")]
    pub k_star: Option<usize>,
    #[serde(rename = "constantMode")]
    pub constant_mode: ConstantMode,
}

fn rat_strings(v: &[Rational]) -> Vec<String> {
    v.iter().map(|q| q.to_string()).collect()
}

fn parse_rats(v: &[String]) -> Result<Vec<Rational>, IoError> {
    v.iter()
        .map(|s| parse_rational(s).ok_or_else(|| IoError::Rational(s.clone())))
        .collect()
}

impl RealizationFile {
    pub fn from_realization(real: &BilinearRealization) -> Self {
        RealizationFile {
            n: real.n(),
            r: real.r(),
            basis: real.psi().iter().map(|p| p.to_string()).collect(),
            a: real.a_exact().iter().map(|row| rat_strings(row)).collect(),
            b: real
                .b_exact()
                .iter()
                .map(|m| m.iter().map(|row| rat_strings(row)).collect())
                .collect(),
            d0: rat_strings(real.d0_exact()),
            d: real.d_exact().iter().map(|v| rat_strings(v)).collect(),
            proj_rows: real.proj_rows().iter().map(|r| r.as_ref().map(|v| rat_strings(v))).collect(),
            chain_dims: real.chain_dims().to_vec(),
            k_star: real.k_star(),
            constant_mode: real.constant_mode(),
        }
    }

    /// Rebuilds the realization; the projection rows are recomputed and must match
    /// the stored ones.
    pub fn to_realization(&self) -> Result<BilinearRealization, IoError> {
        if self.basis.len() != self.r {
            return Err(IoError::Invalid(format!(
                "basis has {} elements, r = {}",
                self.basis.len(),
                self.r
            )));
        }
        let psi = self
            .basis
            .iter()
            .enumerate()
            .map(|(i, s)| {
                parse_expr(s, self.n).map_err(|source| IoError::Expression {
                    context: format!("basis element {}", i + 1),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mat = |m: &Vec<Vec<String>>| m.iter().map(|row| parse_rats(row)).collect::<Result<Vec<_>, _>>();
        let a = mat(&self.a)?;
        let b = self.b.iter().map(mat).collect::<Result<Vec<_>, _>>()?;
        let d0 = parse_rats(&self.d0)?;
        let d = self.d.iter().map(|v| parse_rats(v)).collect::<Result<Vec<_>, _>>()?;
        let real = BilinearRealization::from_parts(
            self.n,
            psi,
            a,
            b,
            d0,
            d,
            self.chain_dims.clone(),
            self.k_star,
            self.constant_mode,
        )?;
        let stored = self
            .proj_rows
            .iter()
            .map(|r| r.as_ref().map(|v| parse_rats(v)).transpose())
            .collect::<Result<Vec<_>, _>>()?;
        if stored != real.proj_rows() {
            return Err(IoError::Invalid("projRows disagree with the basis".into()));
        }
        Ok(real)
    }

    pub fn load(path: &Path) -> Result<BilinearRealization, IoError> {
        read_json::<RealizationFile>(path)?.to_realization()
    }

    pub fn save(real: &BilinearRealization, path: &Path) -> Result<(), IoError> {
        write_json(path, &RealizationFile::from_realization(real))
    }
}

pub fn load_schedule(path: &Path) -> Result<ControlSchedule, IoError> {
    let s: ControlSchedule = read_json(path)?;
    // re-validate through the constructor
    ControlSchedule::new(s.breakpoints, s.values).map_err(|e| IoError::Invalid(format!("{}: {}", path_string(path), e)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringReport {
    pub initial: Vec<f64>,
    pub target: Vec<f64>,
    pub achieved: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub best_start: usize,
    pub no_improvement: bool,
    /// Seconds; the only field that differs between identical runs.
    pub wall_time: f64,
}

/// Fixed-width scientific format so identical runs give byte-identical files.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, IoError> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> IoError {
    IoError::Write {
        path: path_string(path),
        source: std::io::Error::other(e.to_string()),
    }
}

fn write_rows(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<f64>>) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row.into_iter().map(fmt_f64)).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| IoError::Write {
        path: path_string(path),
        source,
    })
}

fn names(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (1..=k).map(move |i| format!("{}{}", prefix, i))
}

/// `t, x1.., xb1..`: the nonlinear trajectory next to the projected bilinear one on
/// a shared time grid.
pub fn write_trajectory_pair_csv(path: &Path, nonlinear: &Trajectory, bilinear: &Trajectory) -> Result<(), IoError> {
    if nonlinear.times.len() != bilinear.times.len() {
        return Err(IoError::Invalid("trajectories are on different grids".into()));
    }
    let n = nonlinear.states.first().map_or(0, |s| s.len());
    let header = std::iter::once("t".to_string())
        .chain(names("x", n))
        .chain(names("xb", n))
        .collect();
    let rows = (0..nonlinear.times.len()).map(|k| {
        let mut row = vec![nonlinear.times[k]];
        row.extend_from_slice(&nonlinear.states[k]);
        row.extend_from_slice(&bilinear.states[k]);
        row
    });
    write_rows(path, header, rows)
}

/// `h1.., x1..` per sample; header only when the set is empty.
pub fn write_reach_csv(path: &Path, set: &ReachSampleSet, dim_h: usize, n: usize) -> Result<(), IoError> {
    let header = names("h", dim_h).chain(names("x", n)).collect();
    let rows = set.samples.iter().map(|s| {
        let mut row = s.h.clone();
        row.extend_from_slice(&s.x);
        row
    });
    write_rows(path, header, rows)
}

/// `t, x1.., u1.., V` for a closed-loop run.
pub fn write_closed_loop_csv(path: &Path, traj: &Trajectory, controls: &[Vec<f64>], v: &[f64]) -> Result<(), IoError> {
    let n = traj.states.first().map_or(0, |s| s.len());
    let m = controls.first().map_or(0, |u| u.len());
    let header = std::iter::once("t".to_string())
        .chain(names("x", n))
        .chain(names("u", m))
        .chain(std::iter::once("V".to_string()))
        .collect();
    let rows = (0..traj.times.len()).map(|k| {
        let mut row = vec![traj.times[k]];
        row.extend_from_slice(&traj.states[k]);
        row.extend_from_slice(&controls[k]);
        row.push(v[k]);
        row
    });
    write_rows(path, header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ebif_run, extract_bilinear};
    use crate::symbolic::rat;

    fn example5_file() -> SystemFile {
        from_json_str(
            r#"{"name": "example5", "state_dim": 2, "drift": ["x1", "x2 - x1^2"],
                "controls": [["1", "0"], ["0", "1"]], "gamma0": ["x1", "x2", "x1^2"]}"#,
            "inline",
        )
        .unwrap()
    }

    #[test]
    fn params_are_exact() {
        let f: SystemFile = from_json_str(
            r#"{"name": "p", "state_dim": 1, "drift": ["l1*x1 + l2"], "params": {"l1": 0.3, "l2": "-1/7"}}"#,
            "inline",
        )
        .unwrap();
        let p = f.params().unwrap();
        assert_eq!(p["l1"], Rational::new(3.into(), 10.into()));
        assert_eq!(p["l2"], Rational::new((-1).into(), 7.into()));
        let sys = f.to_system().unwrap();
        assert_eq!(sys.f.components()[0].to_string(), "-1/7 + 3/10*x1");
    }

    #[test]
    fn json_errors_carry_position() {
        let err = from_json_str::<SystemFile>("{\n  \"name\": \"x\",\n  \"state_dim\": oops\n}", "bad.json").unwrap_err();
        match err {
            IoError::Json { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn expression_errors_name_the_component() {
        let f: SystemFile =
            from_json_str(r#"{"name": "t", "state_dim": 1, "drift": ["tan(x1)"]}"#, "inline").unwrap();
        let msg = f.to_system().unwrap_err().to_string();
        assert!(msg.contains("drift component 1"), "{}", msg);
        let f: SystemFile =
            from_json_str(r#"{"name": "t", "state_dim": 2, "drift": ["x1"]}"#, "inline").unwrap();
        assert!(f.to_system().is_err());
    }

    #[test]
    fn realization_round_trip() {
        let file = example5_file();
        let sys = file.to_system().unwrap();
        let cfg = file.config(ConstantMode::Offset).unwrap();
        let real = extract_bilinear(&sys, &ebif_run(&sys, &cfg).unwrap(), &cfg).unwrap();
        let rf = RealizationFile::from_realization(&real);
        assert_eq!(rf.a[1], vec!["0", "1", "-1"]);
        let text = serde_json::to_string(&rf).unwrap();
        let back: RealizationFile = from_json_str(&text, "inline").unwrap();
        assert_eq!(back, rf);
        let real2 = back.to_realization().unwrap();
        assert_eq!(real2.a_exact(), real.a_exact());
        assert_eq!(real2.b_exact(), real.b_exact());
        assert_eq!(real2.d_exact(), real.d_exact());
        assert_eq!(real2.d0_exact(), real.d0_exact());
        assert_eq!(real2.proj_rows(), real.proj_rows());
        assert_eq!(real2.d_exact()[0][0], rat(1));
    }

    #[test]
    fn tampered_projection_is_rejected() {
        let file = example5_file();
        let sys = file.to_system().unwrap();
        let cfg = file.config(ConstantMode::Offset).unwrap();
        let real = extract_bilinear(&sys, &ebif_run(&sys, &cfg).unwrap(), &cfg).unwrap();
        let mut rf = RealizationFile::from_realization(&real);
        rf.proj_rows[0] = Some(vec!["0".into(), "1".into(), "0".into()]);
        assert!(rf.to_realization().is_err());
        rf = RealizationFile::from_realization(&real);
        rf.a[0][0] = "1/0".into();
        assert!(matches!(rf.to_realization(), Err(IoError::Rational(_))));
    }
}
