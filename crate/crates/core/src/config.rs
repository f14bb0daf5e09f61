//! TOML experiment configs: one table per scenario, each key overriding that
//! scenario's default.
//!
//! ```toml
//! [stable]
//! runs = 20
//!
//! [stable.learning]
//! tau = 0.5
//! ```

use std::collections::BTreeMap;

use thiserror::Error;
use toml::{Table, Value};

use crate::sim::{Scenario, ScenarioConfig, SimError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown scenario section `{0}`")]
    UnknownSection(String),
    #[error("section `{0}` must be a table")]
    NotATable(String),
    #[error("section `{section}` sets scenario = {found}")]
    ScenarioMismatch { section: String, found: String },
    #[error(transparent)]
    Invalid(#[from] SimError),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    sections: BTreeMap<Scenario, Table>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let top: Table = text.parse()?;
        let mut sections = BTreeMap::new();
        for (name, value) in top {
            let scenario =
                Scenario::parse(&name).ok_or_else(|| ConfigError::UnknownSection(name.clone()))?;
            let Value::Table(t) = value else {
                return Err(ConfigError::NotATable(name));
            };
            if let Some(v) = t.get("scenario") {
                if v.as_str() != Some(scenario.name()) {
                    return Err(ConfigError::ScenarioMismatch {
                        section: name,
                        found: v.to_string(),
                    });
                }
            }
            sections.insert(scenario, t);
        }
        Ok(Self { sections })
    }

    /// The scenario's defaults with this file's overrides applied, validated.
    pub fn scenario(&self, scenario: Scenario) -> Result<ScenarioConfig, ConfigError> {
        let defaults = ScenarioConfig::for_scenario(scenario);
        let Some(overrides) = self.sections.get(&scenario) else {
            return Ok(defaults);
        };
        let mut table = Table::try_from(&defaults).expect("config serialises to a table");
        merge(&mut table, overrides);
        let cfg: ScenarioConfig = Value::Table(table).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Every scenario's defaults as a config file.
pub fn default_config_text() -> String {
    let mut top = Table::new();
    for s in Scenario::ALL {
        let t = Table::try_from(ScenarioConfig::for_scenario(s)).expect("serialisable");
        top.insert(s.name().to_string(), Value::Table(t));
    }
    toml::to_string(&top).expect("serialisable")
}
