//! Flat `key = value` run configuration. `#` starts a comment; unknown keys
//! are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::amr::MAX_LEVEL;
use crate::lanes::LaneWidth;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    GaussianBlob,
    Sod,
    TwoBlob,
}

impl FromStr for Scenario {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "gaussian-blob" => Ok(Scenario::GaussianBlob),
            "sod" => Ok(Scenario::Sod),
            "two-blob" => Ok(Scenario::TwoBlob),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::GaussianBlob => "gaussian-blob",
            Scenario::Sod => "sod",
            Scenario::TwoBlob => "two-blob",
        })
    }
}

/// Shape of the gaussian-blob initial state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Sphere,
    /// Varies along x only.
    Slab,
}

impl FromStr for Profile {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "sphere" => Ok(Profile::Sphere),
            "slab" => Ok(Profile::Slab),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parcelport {
    Loopback,
    Tcp,
}

impl FromStr for Parcelport {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "loopback" => Ok(Parcelport::Loopback),
            "tcp" => Ok(Parcelport::Tcp),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub profile: Profile,
    pub steps: usize,
    pub t_end: Option<f64>,
    pub workers: usize,
    pub localities: usize,
    pub rank: Option<usize>,
    pub seed: u64,
    pub csv: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,

    pub parcelport: Parcelport,
    pub roster: Vec<String>,
    pub bundling: bool,
    pub bundle_bytes: usize,

    pub aggregation: bool,
    pub max_slices: usize,
    pub executors: usize,
    /// Keeps every executor artificially busy while a stage is submitted.
    pub saturate: bool,

    pub pool: bool,

    pub min_level: Option<u8>,
    pub max_level: Option<u8>,
    pub theta: f64,
    pub edge: usize,
    pub ghost: usize,
    pub roots: Option<[u32; 3]>,

    pub cfl: f64,
    pub lanes: LaneWidth,
    pub reflux: bool,
    pub gamma: f64,
    /// `Some(true)` for euler; must agree with the scenario when given.
    pub euler: Option<bool>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: Scenario::GaussianBlob,
            profile: Profile::Sphere,
            steps: 10,
            t_end: None,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            localities: 1,
            rank: None,
            seed: 0,
            csv: None,
            checkpoint: None,
            parcelport: Parcelport::Loopback,
            roster: Vec::new(),
            bundling: true,
            bundle_bytes: 64 * 1024,
            aggregation: true,
            max_slices: 8,
            executors: 4,
            saturate: false,
            pool: true,
            min_level: None,
            max_level: None,
            theta: crate::amr::DEFAULT_THETA,
            edge: 8,
            ghost: 2,
            roots: None,
            cfl: 0.4,
            lanes: LaneWidth::W4,
            reflux: true,
            gamma: crate::hydro::GAMMA,
            euler: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "scenario",
    "scenario.profile",
    "steps",
    "t_end",
    "workers",
    "localities",
    "rank",
    "seed",
    "csv",
    "checkpoint",
    "dist.parcelport",
    "dist.roster",
    "dist.bundling",
    "dist.bundle_bytes",
    "aggregation.enabled",
    "aggregation.max_slices",
    "aggregation.executors",
    "aggregation.saturate",
    "pool.enabled",
    "amr.min_level",
    "amr.max_level",
    "amr.theta",
    "amr.subgrid_edge",
    "amr.ghost_width",
    "amr.roots",
    "hydro.cfl",
    "hydro.lanes",
    "hydro.reflux",
    "hydro.gamma",
    "hydro.mode",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

impl RunConfig {
    /// Parses config text over the defaults, then validates.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut c = RunConfig::default();
        c.apply(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        RunConfig::parse(&text)
    }

    /// Applies config text without validating.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
        };
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "scenario" => self.scenario = value.parse().map_err(|_| bad())?,
            "scenario.profile" => self.profile = value.parse().map_err(|_| bad())?,
            "steps" => self.steps = parse(key, value)?,
            "t_end" => self.t_end = Some(parse(key, value)?),
            "workers" => self.workers = parse(key, value)?,
            "localities" => self.localities = parse(key, value)?,
            "rank" => self.rank = Some(parse(key, value)?),
            "seed" => self.seed = parse(key, value)?,
            "csv" => self.csv = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "dist.parcelport" => self.parcelport = value.parse().map_err(|_| bad())?,
            "dist.roster" => {
                self.roster = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "dist.bundling" => self.bundling = parse(key, value)?,
            "dist.bundle_bytes" => self.bundle_bytes = parse(key, value)?,
            "aggregation.enabled" => self.aggregation = parse(key, value)?,
            "aggregation.max_slices" => self.max_slices = parse(key, value)?,
            "aggregation.executors" => self.executors = parse(key, value)?,
            "aggregation.saturate" => self.saturate = parse(key, value)?,
            "pool.enabled" => self.pool = parse(key, value)?,
            "amr.min_level" => self.min_level = Some(parse(key, value)?),
            "amr.max_level" => self.max_level = Some(parse(key, value)?),
            "amr.theta" => self.theta = parse(key, value)?,
            "amr.subgrid_edge" => self.edge = parse(key, value)?,
            "amr.ghost_width" => self.ghost = parse(key, value)?,
            "amr.roots" => {
                let v: Vec<u32> = value
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?;
                self.roots = Some(v.try_into().map_err(|_| bad())?);
            }
            "hydro.cfl" => self.cfl = parse(key, value)?,
            "hydro.lanes" => {
                let w: usize = parse(key, value)?;
                self.lanes = LaneWidth::try_from(w).map_err(|_| bad())?;
            }
            "hydro.reflux" => self.reflux = parse(key, value)?,
            "hydro.gamma" => self.gamma = parse(key, value)?,
            "hydro.mode" => {
                self.euler = Some(match value {
                    "euler" => true,
                    "scalar" => false,
                    _ => return Err(bad()),
                })
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Coarsest and finest leaf level after scenario defaults.
    pub fn levels(&self) -> (u8, u8) {
        let (lo, hi) = match self.scenario {
            Scenario::GaussianBlob => (2, 2),
            Scenario::Sod => (0, 0),
            Scenario::TwoBlob => (1, 3),
        };
        let min = self.min_level.unwrap_or(lo);
        (min, self.max_level.unwrap_or(hi.max(min)))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        let (lo, hi) = self.levels();
        if lo > hi || hi > MAX_LEVEL {
            return fail(format!("levels {lo}..{hi} must satisfy min ≤ max ≤ {MAX_LEVEL}"));
        }
        if self.workers == 0 || self.localities == 0 {
            return fail("workers and localities must be positive".into());
        }
        if self.max_slices == 0 || self.executors == 0 {
            return fail("aggregation.max_slices and aggregation.executors must be positive".into());
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return fail(format!("hydro.cfl {} outside (0, 1]", self.cfl));
        }
        if !(self.gamma > 1.0) {
            return fail("hydro.gamma must exceed 1".into());
        }
        if self.theta < 0.0 {
            return fail("amr.theta must be non-negative".into());
        }
        if self.bundle_bytes == 0 {
            return fail("dist.bundle_bytes must be positive".into());
        }
        if self.ghost != 2 || self.edge < 4 || !self.edge.is_multiple_of(2) {
            return fail("amr.ghost_width must be 2 and amr.subgrid_edge even and at least 4".into());
        }
        let euler = self.scenario != Scenario::GaussianBlob;
        if self.euler.is_some_and(|e| e != euler) {
            return fail(format!(
                "scenario {} does not run in the requested hydro.mode",
                self.scenario
            ));
        }
        if let Some(t) = self.t_end {
            if !(t >= 0.0) {
                return fail("t_end must be non-negative".into());
            }
        }
        if let Some(r) = self.roots {
            if r.contains(&0) {
                return fail("amr.roots entries must be positive".into());
            }
        }
        if self.parcelport == Parcelport::Tcp {
            if self.roster.len() != self.localities {
                return fail(format!(
                    "dist.roster lists {} endpoints for {} localities",
                    self.roster.len(),
                    self.localities
                ));
            }
            match self.rank {
                Some(r) if r < self.localities => {}
                _ => return fail("tcp needs a rank below the locality count".into()),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let c = RunConfig::parse("scenario = sod # tube\nsteps=3\n\nhydro.lanes = 8\namr.roots = 4, 1, 1").unwrap();
        assert_eq!(c.scenario, Scenario::Sod);
        assert_eq!(c.steps, 3);
        assert_eq!(c.lanes, LaneWidth::W8);
        assert_eq!(c.roots, Some([4, 1, 1]));
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(
            RunConfig::parse("steps = many"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::parse("steps"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            RunConfig::parse("hydro.cfl = 2"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(RunConfig::parse("dist.parcelport = tcp\nlocalities = 2").is_err());
    }

    #[test]
    fn every_key_is_accepted() {
        let sample = |k: &str| match k {
            "scenario" => "two-blob",
            "scenario.profile" => "slab",
            "dist.parcelport" => "loopback",
            "dist.roster" => "127.0.0.1:1",
            "csv" | "checkpoint" => "out",
            "amr.roots" => "1,1,1",
            "hydro.lanes" => "2",
            "amr.theta" | "hydro.cfl" | "t_end" => "0.5",
            "hydro.gamma" => "1.4",
            "hydro.mode" => "euler",
            "amr.subgrid_edge" => "8",
            "amr.ghost_width" => "2",
            k if k.ends_with("enabled")
                || k.ends_with("bundling")
                || k.ends_with("saturate")
                || k.ends_with("reflux") =>
            {
                "true"
            }
            _ => "1",
        };
        let mut c = RunConfig::default();
        for k in KEYS {
            c.set(k, sample(k)).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }
}
