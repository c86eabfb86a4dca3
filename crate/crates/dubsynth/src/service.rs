//! Session operations shared by the CLI and the HTTP server. Operations on
//! one session are serialized; distinct sessions run in parallel.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use dubsynth_core::UpdateRule;
use serde::{Deserialize, Serialize};

use crate::candidates::CandidateList;
use crate::error::ServiceError;
use crate::scenario::Scenario;
use crate::session::{Choice, Live, Phase, Session, StageReport};
use crate::store::Store;

#[derive(Debug)]
pub struct Service {
    store: Store,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

/// Body of an accept request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptRequest {
    /// Candidate id; absent keeps the current formula.
    #[serde(default)]
    pub candidate: Option<String>,
    /// Start or resume the deployment with this seed.
    #[serde(default)]
    pub deploy: Option<u64>,
}

/// Body of a step request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    /// Noise of the stage; drawn from the session seed when absent.
    #[serde(default)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub phase: Phase,
    pub report: StageReport,
    pub verdict: Option<bool>,
}

impl Service {
    pub fn new(store: Store) -> Service {
        Service {
            store,
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap();
        Arc::clone(locks.entry(id.to_string()).or_default())
    }

    /// Loads, mutates and saves one session under its lock.
    fn with<T>(&self, id: &str, op: impl FnOnce(&mut Live, &Store) -> Result<T, ServiceError>) -> Result<T, ServiceError> {
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let session = self.store.load(id)?;
        let mut live = Live::restore(&self.store, session)?;
        let out = op(&mut live, &self.store)?;
        self.store.save(&live.session)?;
        Ok(out)
    }

    pub fn create(&self, scenario: Scenario) -> Result<Session, ServiceError> {
        let live = Live::create(&self.store, scenario)?;
        self.store.save(&live.session)?;
        Ok(live.session)
    }

    pub fn get(&self, id: &str) -> Result<Session, ServiceError> {
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.store.load(id)
    }

    pub fn candidates(&self, id: &str, limit: usize) -> Result<CandidateList, ServiceError> {
        self.with(id, |live, _| live.relax(limit))
    }

    pub fn accept(&self, id: &str, req: &AcceptRequest) -> Result<Session, ServiceError> {
        let choice = req.candidate.as_deref().map_or(Choice::Keep, Choice::parse);
        self.with(id, |live, _| {
            live.accept(&choice, req.deploy)?;
            Ok(live.session.clone())
        })
    }

    pub fn deploy(&self, id: &str, seed: u64) -> Result<Session, ServiceError> {
        self.with(id, |live, _| {
            live.deploy(seed)?;
            Ok(live.session.clone())
        })
    }

    pub fn step(&self, id: &str, req: &StepRequest) -> Result<StepOutcome, ServiceError> {
        self.with(id, |live, _| {
            let report = live.step(req.eps)?;
            Ok(StepOutcome {
                phase: live.session.phase,
                report,
                verdict: live.session.deployment.as_ref().and_then(|d| d.verdict),
            })
        })
    }

    /// Steps until the session closes or leaves the deployed phase.
    pub fn run(&self, id: &str) -> Result<Vec<StageReport>, ServiceError> {
        self.with(id, |live, _| {
            let mut out = Vec::new();
            while live.session.phase == Phase::Deployed {
                out.push(live.step(None)?);
            }
            Ok(out)
        })
    }

    pub fn event(&self, id: &str, rule: &UpdateRule) -> Result<Session, ServiceError> {
        self.with(id, |live, store| {
            live.environment(store, rule)?;
            Ok(live.session.clone())
        })
    }
}
