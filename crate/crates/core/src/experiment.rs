//! Resolved experiment settings: which scenario, its constants, and the
//! solver configuration, loaded from TOML with dotted-key overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::belief::Belief;
use crate::error::{Error, Result};
use crate::model::ProblemModel;
use crate::scenarios::{
    LaneChange, LaneChangeConfig, Scenario, TMaze, TMazeConfig, Terrain, TerrainConfig,
};
use crate::solver::SolverConfig;

/// Observation noise levels of the T-maze sweep.
pub fn sigma_sweep_levels() -> Vec<f64> {
    (0..13).map(|i| 0.1 + i as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Tmaze,
    Terrain,
    Lanechange,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 3] = [
        ExperimentKind::Tmaze,
        ExperimentKind::Terrain,
        ExperimentKind::Lanechange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Tmaze => "tmaze",
            ExperimentKind::Terrain => "terrain",
            ExperimentKind::Lanechange => "lanechange",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!(
                    "unknown experiment \"{s}\"; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ScenarioConfig {
    Tmaze(TMazeConfig),
    Terrain(TerrainConfig),
    Lanechange(LaneChangeConfig),
}

impl ScenarioConfig {
    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Tmaze => ScenarioConfig::Tmaze(TMazeConfig::default()),
            ExperimentKind::Terrain => ScenarioConfig::Terrain(TerrainConfig::default()),
            ExperimentKind::Lanechange => ScenarioConfig::Lanechange(LaneChangeConfig::default()),
        }
    }

    pub fn kind(&self) -> ExperimentKind {
        match self {
            ScenarioConfig::Tmaze(_) => ExperimentKind::Tmaze,
            ScenarioConfig::Terrain(_) => ExperimentKind::Terrain,
            ScenarioConfig::Lanechange(_) => ExperimentKind::Lanechange,
        }
    }

    fn from_value(kind: ExperimentKind, value: Value) -> Result<Self> {
        let err = |e: toml::de::Error| Error::Config(format!("[scenario]: {}", e.message()));
        Ok(match kind {
            ExperimentKind::Tmaze => ScenarioConfig::Tmaze(value.try_into().map_err(err)?),
            ExperimentKind::Terrain => ScenarioConfig::Terrain(value.try_into().map_err(err)?),
            ExperimentKind::Lanechange => {
                ScenarioConfig::Lanechange(value.try_into().map_err(err)?)
            }
        })
    }

    /// Sets the prior probability of the first latent value.
    pub fn set_prior(&mut self, p: f64) {
        match self {
            ScenarioConfig::Tmaze(c) => c.prior_left = p,
            ScenarioConfig::Terrain(c) => c.prior_smooth = p,
            ScenarioConfig::Lanechange(c) => c.prior_nice = p,
        }
    }

    pub fn set_sigma_level(&mut self, sigma: f64) -> Result<()> {
        match self {
            ScenarioConfig::Tmaze(c) => {
                c.sigma_level = sigma;
                Ok(())
            }
            other => Err(Error::Config(format!(
                "--sigma-level only applies to tmaze, not {}",
                other.kind()
            ))),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Scenario>> {
        Ok(match self {
            ScenarioConfig::Tmaze(c) => Box::new(TMaze::new(c.clone())?),
            ScenarioConfig::Terrain(c) => Box::new(Terrain::new(c.clone())?),
            ScenarioConfig::Lanechange(c) => Box::new(LaneChange::new(c.clone())?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub solver: SolverConfig,
    pub scenario: ScenarioConfig,
}

/// Recursively overlays `top` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key \"{key}\"")));
    }
    let mut cur = table;
    for (i, part) in parts.iter().enumerate() {
        if i + 1 == parts.len() {
            if !cur.contains_key(*part) {
                return Err(Error::Config(format!("unknown override key \"{key}\"")));
            }
            cur.insert(part.to_string(), value);
            return Ok(());
        }
        cur = match cur.get_mut(*part) {
            Some(Value::Table(t)) => t,
            _ => return Err(Error::Config(format!("unknown override key \"{key}\""))),
        };
    }
    unreachable!("split always yields at least one part")
}

impl ExperimentConfig {
    pub fn default_for(kind: ExperimentKind) -> Self {
        Self {
            experiment: kind,
            solver: SolverConfig::default(),
            scenario: ScenarioConfig::default_for(kind),
        }
    }

    fn to_table(&self) -> Result<Table> {
        Table::try_from(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    fn from_table(mut table: Table) -> Result<Self> {
        let kind: ExperimentKind = match table.remove("experiment") {
            Some(Value::String(s)) => s.parse()?,
            _ => return Err(Error::Config("missing `experiment`".into())),
        };
        let solver: SolverConfig = table
            .remove("solver")
            .unwrap_or_else(|| Value::Table(Table::new()))
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("[solver]: {}", e.message())))?;
        let scenario = ScenarioConfig::from_value(
            kind,
            table
                .remove("scenario")
                .unwrap_or_else(|| Value::Table(Table::new())),
        )?;
        if let Some(k) = table.keys().next() {
            return Err(Error::Config(format!("unknown top-level key \"{k}\"")));
        }
        let cfg = Self {
            experiment: kind,
            solver,
            scenario,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults for the experiment named in `kind` or in the file, overlaid
    /// with the file and then with `key=value` overrides.
    pub fn resolve(
        kind: Option<ExperimentKind>,
        text: Option<&str>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let file: Table = match text {
            Some(t) => t
                .parse()
                .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?,
            None => Table::new(),
        };
        let file_kind = match file.get("experiment") {
            Some(Value::String(s)) => Some(s.parse::<ExperimentKind>()?),
            Some(_) => return Err(Error::Config("`experiment` must be a string".into())),
            None => None,
        };
        let kind = match (kind, file_kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!(
                    "experiment {a} requested but the config file is for {b}"
                )));
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => {
                return Err(Error::Config(
                    "no experiment given and none named in the config file".into(),
                ))
            }
        };
        let mut table = Self::default_for(kind).to_table()?;
        merge(&mut table, file);
        for (k, v) in overrides {
            if k == "experiment" {
                return Err(Error::Config("the experiment cannot be overridden".into()));
            }
            set_dotted(&mut table, k, parse_value(v))?;
        }
        Self::from_table(table)
    }

    pub fn load(
        kind: Option<ExperimentKind>,
        path: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let text = match path {
            Some(p) => Some(
                std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            ),
            None => None,
        };
        Self::resolve(kind, text.as_deref(), overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario.kind() != self.experiment {
            return Err(Error::Config(
                "scenario settings do not match the experiment".into(),
            ));
        }
        self.solver.validate()?;
        self.scenario.build().map(|_| ())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Canonical single-line JSON of every resolved parameter.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes to JSON")
    }

    /// SHA-256 of the canonical JSON, lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn build(&self) -> Result<BuiltExperiment> {
        let model = self.scenario.build()?;
        Ok(BuiltExperiment {
            x0: model.initial_state(),
            prior: model.default_prior(),
            model,
        })
    }
}

/// A constructed scenario with its starting state and prior.
pub struct BuiltExperiment {
    pub model: Box<dyn Scenario>,
    pub x0: DVector<f64>,
    pub prior: Belief,
}

impl BuiltExperiment {
    pub fn problem(&self) -> &dyn ProblemModel {
        upcast(self.model.as_ref())
    }
}

fn upcast(s: &dyn Scenario) -> &dyn ProblemModel {
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        for kind in ExperimentKind::ALL {
            let cfg = ExperimentConfig::default_for(kind);
            let text = cfg.to_toml().unwrap();
            let back = ExperimentConfig::resolve(None, Some(&text), &[]).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn partial_nested_tables_keep_other_defaults() {
        let text = "experiment = \"lanechange\"\n[scenario.aggressive]\nmax_accel = 2.0\n";
        let cfg = ExperimentConfig::resolve(None, Some(text), &[]).unwrap();
        let ScenarioConfig::Lanechange(lc) = &cfg.scenario else {
            panic!()
        };
        assert_eq!(lc.aggressive.max_accel, 2.0);
        assert_eq!(
            lc.aggressive.desired_speed,
            LaneChangeConfig::default().aggressive.desired_speed
        );
        assert!(!lc.aggressive.yields);
    }

    #[test]
    fn overrides_apply_and_change_the_hash() {
        let base = ExperimentConfig::resolve(Some(ExperimentKind::Tmaze), None, &[]).unwrap();
        let cfg = ExperimentConfig::resolve(
            Some(ExperimentKind::Tmaze),
            None,
            &[
                ov("scenario.sigma_level", "3.5"),
                ov("solver.segments", "1"),
                ov("scenario.vehicle.wheelbase", "3"),
            ],
        )
        .unwrap();
        let ScenarioConfig::Tmaze(t) = &cfg.scenario else {
            panic!()
        };
        assert_eq!(t.sigma_level, 3.5);
        assert_eq!(t.vehicle.wheelbase, 3.0);
        assert_eq!(cfg.solver.segments, 1);
        assert_ne!(cfg.hash(), base.hash());
        assert_eq!(base.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_and_names_are_rejected() {
        let k = Some(ExperimentKind::Terrain);
        assert!(ExperimentConfig::resolve(k, None, &[ov("scenario.nonsense", "1")]).is_err());
        assert!(ExperimentConfig::resolve(k, None, &[ov("solver", "1")]).is_err());
        assert!(ExperimentConfig::resolve(k, Some("[scenario]\nbogus = 1\n"), &[]).is_err());
        assert!(ExperimentConfig::resolve(k, Some("extra = 1\n"), &[]).is_err());
        assert!(ExperimentConfig::resolve(k, Some("experiment = \"tmaze\"\n"), &[]).is_err());
        let msg = "maze".parse::<ExperimentKind>().unwrap_err().to_string();
        assert!(msg.contains("tmaze") && msg.contains("terrain") && msg.contains("lanechange"));
    }

    #[test]
    fn invalid_values_fail_validation() {
        let k = Some(ExperimentKind::Terrain);
        assert!(ExperimentConfig::resolve(k, None, &[ov("scenario.rho_rough", "-1")]).is_err());
        assert!(ExperimentConfig::resolve(k, None, &[ov("solver.horizon", "0")]).is_err());
        assert!(
            ExperimentConfig::resolve(k, None, &[ov("scenario.rho_rough", "\"high\"")]).is_err()
        );
    }

    #[test]
    fn sweep_levels() {
        let levels = sigma_sweep_levels();
        assert_eq!(levels.len(), 13);
        assert!((levels[0] - 0.1).abs() < 1e-12 && (levels[12] - 12.1).abs() < 1e-12);
        assert!(levels.iter().any(|l| (l - 9.1).abs() < 1e-12));
    }
}
