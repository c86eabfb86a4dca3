//! Scenario files: environment, vehicle, formula and truncation set.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use dubsynth_core::environment::EnvironmentSpec;
use dubsynth_core::mdp::{abstract_vehicle, Absorbing, SNAPSHOT_VERSION};
use dubsynth_core::pctl::{CompiledFormula, FormulaError};
use dubsynth_core::synthesis::BoundScope;
use dubsynth_core::vehicle::{VehicleParams, DEFAULT_NODE_CEILING};
use dubsynth_core::{Environment, ExtProp, Formula, TreeMdp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ServiceError;

pub const SCENARIO_SCHEMA: &str = "dubsynth.scenario/1";

fn scenario_schema() -> String {
    SCENARIO_SCHEMA.to_string()
}

fn default_ceiling() -> usize {
    DEFAULT_NODE_CEILING
}

/// Environment given inline or as a path relative to the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvSource {
    Path(PathBuf),
    Inline(EnvironmentSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "scenario_schema")]
    pub schema: String,
    #[serde(default)]
    pub name: String,
    pub environment: EnvSource,
    pub vehicle: VehicleParams,
    /// Formula text, `Pmax=? [ ... ]`.
    pub formula: String,
    /// Propositions whose regions end a branch of the abstraction.
    #[serde(default)]
    pub absorbing: Vec<String>,
    #[serde(default = "default_ceiling")]
    pub node_ceiling: usize,
    #[serde(default)]
    pub bound_scope: BoundScope,
}

/// A scenario checked end to end and ready to abstract.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub env: Environment,
    pub formula: Formula,
    pub compiled: CompiledFormula,
    pub absorbing: Absorbing,
}

impl Scenario {
    /// Reads a scenario file and inlines its environment.
    pub fn load(path: &Path) -> Result<Scenario, ServiceError> {
        let text = fs::read_to_string(path).map_err(ServiceError::io(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Scenario::from_json(&text, base)
    }

    /// Parses scenario JSON, resolving a relative environment path against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Scenario, ServiceError> {
        let mut sc: Scenario = serde_json::from_str(text).map_err(ServiceError::json("scenario"))?;
        sc.inline(base)?;
        Ok(sc)
    }

    pub fn inline(&mut self, base: &Path) -> Result<(), ServiceError> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(ServiceError::Scenario(format!(
                "unsupported schema `{}`, expected `{SCENARIO_SCHEMA}`",
                self.schema
            )));
        }
        if let EnvSource::Path(p) = &self.environment {
            let full = base.join(p);
            let text = fs::read_to_string(&full).map_err(ServiceError::io(&full))?;
            let spec: EnvironmentSpec = serde_json::from_str(&text).map_err(ServiceError::json(full.display().to_string()))?;
            self.environment = EnvSource::Inline(spec);
        }
        Ok(())
    }

    pub fn environment_spec(&self) -> Result<&EnvironmentSpec, ServiceError> {
        match &self.environment {
            EnvSource::Inline(spec) => Ok(spec),
            EnvSource::Path(p) => Err(ServiceError::Scenario(format!(
                "environment `{}` was not resolved",
                p.display()
            ))),
        }
    }

    /// Checks every stage short of building the MDP.
    pub fn prepare(&self) -> Result<Prepared, ServiceError> {
        let env = Environment::from_spec(self.environment_spec()?)?;
        self.vehicle.validate()?;
        let formula = Formula::parse(&self.formula)?;
        formula
            .validate(Some(env.propositions()))
            .map_err(FormulaError::Invalid)?;
        let mut avoid = BTreeSet::new();
        for name in &self.absorbing {
            let idx = env
                .prop_index(name)
                .ok_or_else(|| ServiceError::Scenario(format!("absorbing proposition `{name}` is not in the environment")))?;
            avoid.insert(idx);
        }
        check_guards(&formula, &self.absorbing).map_err(ServiceError::Scenario)?;
        let compiled = formula.compile(env.propositions())?;
        Ok(Prepared {
            scenario: self.clone(),
            env,
            formula,
            compiled,
            absorbing: Absorbing { avoid },
        })
    }

    /// Digest of everything the MDP depends on.
    pub fn mdp_key(&self) -> Result<String, ServiceError> {
        #[derive(Serialize)]
        struct Key<'a> {
            version: u32,
            environment: &'a EnvironmentSpec,
            vehicle: &'a VehicleParams,
            absorbing: BTreeSet<&'a str>,
            node_ceiling: usize,
        }
        let key = Key {
            version: SNAPSHOT_VERSION,
            environment: self.environment_spec()?,
            vehicle: &self.vehicle,
            absorbing: self.absorbing.iter().map(String::as_str).collect(),
            node_ceiling: self.node_ceiling,
        };
        let bytes = serde_json::to_vec(&key).map_err(ServiceError::json("scenario key"))?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

impl Prepared {
    pub fn build_mdp(&self) -> Result<TreeMdp, ServiceError> {
        Ok(abstract_vehicle(
            &self.scenario.vehicle,
            &self.env,
            &self.absorbing,
            self.scenario.node_ceiling,
        )?)
    }
}

/// Absorbing truncation is exact only when every block keeps `!a` as a
/// constraint of its own and in every goal disjunct, for each absorbing `a`.
pub fn check_guards(f: &Formula, absorbing: &[String]) -> Result<(), String> {
    for (k, b) in f.blocks.iter().enumerate() {
        for a in absorbing {
            let neg = ExtProp::neg(a.clone());
            if !b.phi.iter().any(|c| c.literals == [neg.clone()]) {
                return Err(format!("block {}: `!{a}` must be a constraint of its own", k + 1));
            }
            if !b.psi.iter().all(|c| c.literals.contains(&neg)) {
                return Err(format!("block {}: every goal disjunct must require `!{a}`", k + 1));
            }
        }
    }
    Ok(())
}
