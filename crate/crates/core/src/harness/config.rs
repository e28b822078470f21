//! Scenario and sweep-grid files: flat `key = value` text, `#` comments.
//!
//! ```text
//! problem = example
//! scheme = projected          # or saddle
//! alpha = 0.01
//! gamma = 0.5                 # saddle only
//! rho = 1                     # saddle only
//! u0 = 0, 0                   # or: u0 = grid 5
//! max_iters = 100000
//! stationarity_tol = 1e-8
//! seed = 0
//! output_dir = out
//! xi = 1                      # optional weight for the V column
//! certify = false             # estimate constants and check V-descent
//! alpha_fraction = 0.9        # optional: run at this fraction of alpha*
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::ProblemSpec;

/// Input feasibility tolerance for initial conditions.
pub const U0_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Projected,
    Saddle,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Projected => "projected",
            Scheme::Saddle => "saddle",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projected" => Ok(Scheme::Projected),
            "saddle" => Ok(Scheme::Saddle),
            other => Err(Error::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    Point(Vec<f64>),
    /// `n` equally spaced values per input coordinate over the bounding box
    /// of the input set.
    Grid(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub problem: String,
    pub scheme: Scheme,
    pub alpha: f64,
    pub gamma: Option<f64>,
    pub rho: Option<f64>,
    pub u0: InitialCondition,
    pub max_iters: usize,
    pub stationarity_tol: f64,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub xi: Option<f64>,
    pub certify: bool,
    pub alpha_fraction: Option<f64>,
}

impl ScenarioConfig {
    pub fn projected(problem: &str, alpha: f64, u0: InitialCondition) -> Self {
        Self {
            problem: problem.to_string(),
            scheme: Scheme::Projected,
            alpha,
            gamma: None,
            rho: None,
            u0,
            max_iters: 100_000,
            stationarity_tol: 1e-8,
            seed: 0,
            output_dir: None,
            xi: None,
            certify: false,
            alpha_fraction: None,
        }
    }

    pub fn saddle(problem: &str, alpha: f64, gamma: f64, rho: f64, u0: InitialCondition) -> Self {
        Self {
            scheme: Scheme::Saddle,
            gamma: Some(gamma),
            rho: Some(rho),
            ..Self::projected(problem, alpha, u0)
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        text.parse()
    }

    /// Checks that do not need the problem instance.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.stationarity_tol.is_nan() || self.stationarity_tol <= 0.0 {
            return Err(Error::Config("stationarity_tol must be positive".into()));
        }
        match self.scheme {
            Scheme::Saddle => {
                let (Some(gamma), Some(rho)) = (self.gamma, self.rho) else {
                    return Err(Error::Config("saddle scheme requires gamma and rho".into()));
                };
                if !(gamma > 0.0 && rho >= 0.0) {
                    return Err(Error::Config("saddle scheme needs gamma > 0 and rho >= 0".into()));
                }
            }
            Scheme::Projected => {
                if self.gamma.is_some() || self.rho.is_some() {
                    return Err(Error::Config("gamma and rho are only valid for scheme = saddle".into()));
                }
            }
        }
        if let Some(frac) = self.alpha_fraction {
            if frac.is_nan() || frac <= 0.0 || self.scheme != Scheme::Projected {
                return Err(Error::Config(
                    "alpha_fraction must be positive and needs scheme = projected".into(),
                ));
            }
        }
        if let InitialCondition::Grid(0) = self.u0 {
            return Err(Error::Config("u0 grid needs at least one point per axis".into()));
        }
        Ok(())
    }

    /// Expand the initial condition; every point must lie in the input set.
    pub fn initial_points(&self, problem: &ProblemSpec) -> Result<Vec<DVector<f64>>> {
        let points = match &self.u0 {
            InitialCondition::Point(x) => vec![DVector::from_column_slice(x)],
            InitialCondition::Grid(n) => {
                let (lo, hi) = problem.input_set.bounding_box()?;
                let p = problem.input_dim();
                let total = n.pow(p as u32);
                (0..total)
                    .map(|flat| {
                        let mut idx = flat;
                        DVector::from_fn(p, |j, _| {
                            let i = idx % n;
                            idx /= n;
                            if *n == 1 {
                                0.5 * (lo[j] + hi[j])
                            } else {
                                lo[j] + (hi[j] - lo[j]) * i as f64 / (*n - 1) as f64
                            }
                        })
                    })
                    .filter(|x| problem.input_set.contains(x, U0_TOL).unwrap_or(false))
                    .collect()
            }
        };
        for x in &points {
            if x.len() != problem.input_dim() {
                return Err(Error::Config(format!(
                    "u0 has {} entries, problem {:?} has {} inputs",
                    x.len(),
                    problem.name,
                    problem.input_dim()
                )));
            }
            if !problem.input_set.contains(x, U0_TOL)? {
                return Err(Error::Config(format!("u0 {:?} lies outside the input set", x.as_slice())));
            }
        }
        Ok(points)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        put("problem", self.problem.clone());
        put("scheme", self.scheme.to_string());
        put("alpha", self.alpha.to_string());
        if let Some(g) = self.gamma {
            put("gamma", g.to_string());
        }
        if let Some(r) = self.rho {
            put("rho", r.to_string());
        }
        put(
            "u0",
            match &self.u0 {
                InitialCondition::Point(x) => join(x),
                InitialCondition::Grid(n) => format!("grid {n}"),
            },
        );
        put("max_iters", self.max_iters.to_string());
        put("stationarity_tol", self.stationarity_tol.to_string());
        put("seed", self.seed.to_string());
        if let Some(dir) = &self.output_dir {
            put("output_dir", dir.display().to_string());
        }
        if let Some(xi) = self.xi {
            put("xi", xi.to_string());
        }
        put("certify", self.certify.to_string());
        if let Some(f) = self.alpha_fraction {
            put("alpha_fraction", f.to_string());
        }
        out
    }
}

fn join(x: &[f64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

/// Parse `key = value` lines into an ordered map, rejecting duplicates.
fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
        }
    }
    Ok(map)
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

impl FromStr for ScenarioConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut map = parse_pairs(text)?;
        let mut take = |k: &str| map.remove(k);
        let problem = take("problem").ok_or_else(|| Error::Config("missing key `problem`".into()))?;
        let scheme: Scheme = take("scheme").as_deref().unwrap_or("projected").parse()?;
        let alpha = parse_num("alpha", &take("alpha").ok_or_else(|| Error::Config("missing key `alpha`".into()))?)?;
        let gamma = take("gamma").map(|v| parse_num("gamma", &v)).transpose()?;
        let rho = take("rho").map(|v| parse_num("rho", &v)).transpose()?;
        let u0_text = take("u0").ok_or_else(|| Error::Config("missing key `u0`".into()))?;
        let u0 = match u0_text.strip_prefix("grid") {
            Some(rest) => InitialCondition::Grid(parse_num("u0", rest.trim())?),
            None => InitialCondition::Point(parse_list("u0", &u0_text)?),
        };
        let max_iters = take("max_iters").map(|v| parse_num("max_iters", &v)).transpose()?.unwrap_or(100_000);
        let stationarity_tol = take("stationarity_tol")
            .map(|v| parse_num("stationarity_tol", &v))
            .transpose()?
            .unwrap_or(1e-8);
        let seed = take("seed").map(|v| parse_num("seed", &v)).transpose()?.unwrap_or(0);
        let output_dir = take("output_dir").map(PathBuf::from);
        let xi = take("xi").map(|v| parse_num("xi", &v)).transpose()?;
        let certify = take("certify").map(|v| parse_num("certify", &v)).transpose()?.unwrap_or(false);
        let alpha_fraction = take("alpha_fraction").map(|v| parse_num("alpha_fraction", &v)).transpose()?;
        if let Some(key) = map.keys().next() {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        let config = Self {
            problem,
            scheme,
            alpha,
            gamma,
            rho,
            u0,
            max_iters,
            stationarity_tol,
            seed,
            output_dir,
            xi,
            certify,
            alpha_fraction,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parameter lists for a sweep; an empty list keeps the base value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub rho: Vec<f64>,
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty() && self.gamma.is_empty() && self.rho.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        text.parse()
    }
}

impl FromStr for SweepGrid {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut map = parse_pairs(text)?;
        let mut list = |k: &str| map.remove(k).map(|v| parse_list(k, &v)).transpose().map(Option::unwrap_or_default);
        let grid = Self {
            alpha: list("alpha")?,
            gamma: list("gamma")?,
            rho: list("rho")?,
        };
        if let Some(key) = map.keys().next() {
            return Err(Error::Config(format!("unknown grid key {key:?}")));
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::registry::builtin_example;

    #[test]
    fn parse_projected() {
        let cfg: ScenarioConfig = "problem = example\nalpha = 0.01\nu0 = 0, 0 # origin\n".parse().unwrap();
        assert_eq!(cfg.scheme, Scheme::Projected);
        assert_eq!(cfg.u0, InitialCondition::Point(vec![0.0, 0.0]));
        assert_eq!(cfg.max_iters, 100_000);
        assert_eq!(cfg.stationarity_tol, 1e-8);
        let again: ScenarioConfig = cfg.to_text().parse().unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn parse_saddle_grid() {
        let cfg: ScenarioConfig = "problem = example\nscheme = saddle\nalpha = 0.01\ngamma = 5\nrho = 1000\nu0 = grid 5\n"
            .parse()
            .unwrap();
        assert_eq!(cfg.u0, InitialCondition::Grid(5));
        assert_eq!(cfg.initial_points(&builtin_example()).unwrap().len(), 25);
    }

    #[test]
    fn rejects_invalid() {
        let bad = [
            "problem = example\nalpha = 0\nu0 = 0, 0",
            "problem = example\nalpha = -1\nu0 = 0, 0",
            "problem = example\nscheme = saddle\nalpha = 0.01\nu0 = 0, 0",
            "problem = example\nalpha = 0.01\ngamma = 1\nu0 = 0, 0",
            "problem = example\nalpha = 0.01\nu0 = 0, 0\ncolour = blue",
            "problem = example\nalpha = 0.01\nalpha = 0.02\nu0 = 0, 0",
            "alpha = 0.01\nu0 = 0, 0",
        ];
        for text in bad {
            assert!(text.parse::<ScenarioConfig>().is_err(), "{text}");
        }
        let outside: ScenarioConfig = "problem = example\nalpha = 0.01\nu0 = 2, 0".parse().unwrap();
        assert!(outside.initial_points(&builtin_example()).is_err());
    }

    #[test]
    fn sweep_grid() {
        let grid: SweepGrid = "alpha = 0.005, 0.01, 0.02\n".parse().unwrap();
        assert_eq!(grid.alpha, vec![0.005, 0.01, 0.02]);
        assert!(grid.gamma.is_empty());
        assert!("".parse::<SweepGrid>().unwrap().is_empty());
    }
}
