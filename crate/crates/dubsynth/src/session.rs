//! Negotiation sessions and their protocol operations.

use std::fmt;
use std::sync::Arc;

use dubsynth_core::environment::LabelSet;
use dubsynth_core::pctl::{direction, CompiledFormula, Direction};
use dubsynth_core::strategy::{check_word, draw_noise, stage_samples, trial_rng, Strategy};
use dubsynth_core::synthesis::{bounds_at, solve, solve_incremental};
use dubsynth_core::vehicle::{integrate_arc, VehicleParams};
use dubsynth_core::environment::Word;
use dubsynth_core::{Environment, Formula, Pose, Solution, StateId, TreeMdp, UpdateRule};
use serde::{Deserialize, Serialize};

use crate::candidates::{enumerate, id_revision, CandidateList};
use crate::error::ServiceError;
use crate::scenario::{check_guards, Scenario};
use crate::store::{MdpRef, Store};

pub const SESSION_SCHEMA: &str = "dubsynth.session/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Negotiating,
    Deployed,
    Renegotiating,
    Closed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Negotiating => "negotiating",
            Phase::Deployed => "deployed",
            Phase::Renegotiating => "renegotiating",
            Phase::Closed => "closed",
        })
    }
}

/// Where the current MDP root sits in the mission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub stage: usize,
    pub pose: Pose,
    /// Blocks of the original formula discharged before this root.
    pub discharged: usize,
}

/// One executed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    /// Mission stage just completed, 1-based.
    pub stage: usize,
    /// Control index chosen by the strategy; `None` past a leaf.
    pub control: Option<usize>,
    pub nominal: f64,
    pub eps: f64,
    pub applied: f64,
    pub cell: usize,
    pub pose: Pose,
    /// Cursor on the current MDP after the stage.
    pub state: StateId,
    pub satisfied_up_to: usize,
    /// Bounds of the remaining chain from the cursor.
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub seed: u64,
    /// Noise values drawn so far from the seeded stream.
    pub draws: u64,
    pub stage: usize,
    pub pose: Pose,
    /// Visited states of the current MDP, root first.
    pub path: Vec<StateId>,
    /// Letters observed since the current MDP root.
    pub word: Vec<LabelSet>,
    pub verdict: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Created {
        formula: String,
        states: usize,
        lower: f64,
        upper: f64,
    },
    Offered {
        candidates: Vec<Offer>,
    },
    Accepted {
        candidate: Option<String>,
        rule: Option<UpdateRule>,
        formula: String,
        lower: f64,
        upper: f64,
    },
    Deployed {
        seed: u64,
        resumed: bool,
    },
    Stepped {
        report: StageReport,
    },
    Environment {
        rule: UpdateRule,
        direction: Direction,
        formula: String,
        states: usize,
        before: (f64, f64),
        lower: f64,
        upper: f64,
    },
    Closed {
        verdict: bool,
        satisfied_up_to: usize,
    },
}

/// Candidate summary kept in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offer {
    pub id: String,
    pub rule: UpdateRule,
    pub lower: f64,
    pub delta: f64,
}

/// Log entry stamped with the mission time `stage · Δt` and the revision it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub revision: u64,
    pub stage: usize,
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Persistent session document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub schema: String,
    pub id: String,
    pub scenario: Scenario,
    /// MDP of the whole mission.
    pub base_mdp: MdpRef,
    /// MDP the current solution lives on.
    pub mdp: MdpRef,
    pub origin: Origin,
    pub formula: String,
    pub lower: f64,
    pub upper: f64,
    pub phase: Phase,
    pub revision: u64,
    pub candidates: Option<CandidateList>,
    pub deployment: Option<Deployment>,
    pub events: Vec<Event>,
}

/// Supervisor choice in `accept`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Choice {
    Keep,
    Candidate(String),
}

impl Choice {
    /// `keep` or a candidate id.
    pub fn parse(s: &str) -> Choice {
        if s == "keep" {
            Choice::Keep
        } else {
            Choice::Candidate(s.to_string())
        }
    }
}

/// A session with its MDP, formula and solution in memory.
#[derive(Debug, Clone)]
pub struct Live {
    pub session: Session,
    pub env: Environment,
    pub mdp: Arc<TreeMdp>,
    pub formula: Formula,
    pub compiled: CompiledFormula,
    pub solution: Solution,
}

fn require(phase: Phase, op: &'static str, allowed: &[Phase]) -> Result<(), ServiceError> {
    if allowed.contains(&phase) {
        Ok(())
    } else {
        Err(ServiceError::Phase { op, phase })
    }
}

impl Live {
    /// Builds (or reuses) the MDP, solves the formula and opens a session.
    pub fn create(store: &Store, scenario: Scenario) -> Result<Live, ServiceError> {
        let prepared = scenario.prepare()?;
        let key = scenario.mdp_key()?;
        let (mdp, mref) = match store.lookup(&key)? {
            Some(r) => (store.get_mdp(&r)?, r),
            None => {
                let m = Arc::new(prepared.build_mdp()?);
                let r = store.put_mdp(Arc::clone(&m))?;
                store.remember(&key, &r)?;
                (m, r)
            }
        };
        let solution = solve(&mdp, &prepared.compiled, scenario.bound_scope);
        let id = store.allocate_id()?;
        let formula = prepared.formula.to_string();
        let session = Session {
            schema: SESSION_SCHEMA.to_string(),
            id,
            origin: Origin {
                stage: 0,
                pose: scenario.vehicle.q_init,
                discharged: 0,
            },
            scenario,
            base_mdp: mref.clone(),
            mdp: mref.clone(),
            formula: formula.clone(),
            lower: solution.lower,
            upper: solution.upper,
            phase: Phase::Negotiating,
            revision: 0,
            candidates: None,
            deployment: None,
            events: Vec::new(),
        };
        let mut live = Live {
            session,
            env: prepared.env,
            mdp,
            formula: prepared.formula,
            compiled: prepared.compiled,
            solution,
        };
        live.log(EventKind::Created {
            formula,
            states: mref.states,
            lower: live.solution.lower,
            upper: live.solution.upper,
        });
        Ok(live)
    }

    /// Restores a stored session, solving its formula again.
    pub fn restore(store: &Store, session: Session) -> Result<Live, ServiceError> {
        let env = Environment::from_spec(session.scenario.environment_spec()?)?;
        let mdp = store.get_mdp(&session.mdp)?;
        let formula = Formula::parse(&session.formula)?;
        let compiled = formula.compile(mdp.propositions())?;
        let solution = solve(&mdp, &compiled, session.scenario.bound_scope);
        if solution.bounds() != (session.lower, session.upper) {
            return Err(ServiceError::Corrupt(format!(
                "session {}: stored bounds disagree with the solution",
                session.id
            )));
        }
        Ok(Live {
            session,
            env,
            mdp,
            formula,
            compiled,
            solution,
        })
    }

    fn params(&self) -> &VehicleParams {
        &self.session.scenario.vehicle
    }

    fn log(&mut self, kind: EventKind) {
        let s = &mut self.session;
        let stage = s.deployment.as_ref().map_or(0, |d| d.stage);
        s.events.push(Event {
            seq: s.events.len() as u64 + 1,
            revision: s.revision,
            stage,
            time: stage as f64 * s.scenario.vehicle.dt,
            kind,
        });
    }

    fn bump(&mut self) {
        self.session.revision += 1;
        self.session.candidates = None;
    }

    fn strategy(&self) -> Result<Strategy<'_>, ServiceError> {
        let d = self
            .session
            .deployment
            .as_ref()
            .ok_or(ServiceError::Phase {
                op: "step",
                phase: self.session.phase,
            })?;
        Ok(Strategy::resume(&self.mdp, &self.solution, self.params().noise()?, &d.path))
    }

    /// Computes candidates for the current formula, keeps them for `accept`
    /// and returns the best `limit`.
    pub fn relax(&mut self, limit: usize) -> Result<CandidateList, ServiceError> {
        require(self.session.phase, "relax", &[Phase::Negotiating, Phase::Renegotiating])?;
        let list = match &self.session.candidates {
            Some(list) if list.revision == self.session.revision => list.clone(),
            _ => self.offer()?,
        };
        Ok(CandidateList {
            revision: list.revision,
            items: list.items.into_iter().take(limit).collect(),
        })
    }

    fn offer(&mut self) -> Result<CandidateList, ServiceError> {
        let list = enumerate(
            &self.mdp,
            &self.formula,
            &self.solution,
            &self.session.scenario.absorbing,
            self.session.revision,
        )?;
        self.session.candidates = Some(list.clone());
        self.log(EventKind::Offered {
            candidates: list
                .items
                .iter()
                .map(|c| Offer {
                    id: c.id.clone(),
                    rule: c.rule.clone(),
                    lower: c.lower,
                    delta: c.delta,
                })
                .collect(),
        });
        Ok(list)
    }

    /// Adopts a candidate or keeps the current formula; with `deploy` the
    /// vehicle starts (or resumes) right away.
    pub fn accept(&mut self, choice: &Choice, deploy: Option<u64>) -> Result<(), ServiceError> {
        require(self.session.phase, "accept", &[Phase::Negotiating, Phase::Renegotiating])?;
        let (candidate, rule) = match choice {
            Choice::Keep => (None, None),
            Choice::Candidate(id) => {
                if id_revision(id).is_some_and(|r| r != self.session.revision) {
                    return Err(ServiceError::Stale(id.clone()));
                }
                let list = self
                    .session
                    .candidates
                    .as_ref()
                    .ok_or_else(|| ServiceError::UnknownCandidate(id.clone()))?;
                if list.revision != self.session.revision {
                    return Err(ServiceError::Stale(id.clone()));
                }
                let c = list
                    .items
                    .iter()
                    .find(|c| &c.id == id)
                    .ok_or_else(|| ServiceError::UnknownCandidate(id.clone()))?;
                (Some(c.id.clone()), Some(c.rule.clone()))
            }
        };
        if let Some(rule) = &rule {
            let inc = solve_incremental(&self.mdp, &self.formula, &self.solution, StateId::ROOT, rule)?;
            self.compiled = inc.formula.compile(self.mdp.propositions())?;
            self.formula = inc.formula;
            self.solution = inc.solution;
            self.session.formula = self.formula.to_string();
            self.session.lower = self.solution.lower;
            self.session.upper = self.solution.upper;
        }
        self.bump();
        self.log(EventKind::Accepted {
            candidate,
            rule,
            formula: self.session.formula.clone(),
            lower: self.session.lower,
            upper: self.session.upper,
        });
        if let Some(seed) = deploy {
            self.deploy(seed)?;
        }
        Ok(())
    }

    /// Starts the vehicle, or resumes it after renegotiation (the seed is
    /// then ignored and the original noise stream continues).
    pub fn deploy(&mut self, seed: u64) -> Result<(), ServiceError> {
        require(self.session.phase, "deploy", &[Phase::Negotiating, Phase::Renegotiating])?;
        let resumed = self.session.phase == Phase::Renegotiating;
        if !resumed {
            let q = self.params().q_init;
            self.session.deployment = Some(Deployment {
                seed,
                draws: 0,
                stage: 0,
                pose: q,
                path: vec![StateId::ROOT],
                word: vec![self.env.label_point(q.position())],
                verdict: None,
            });
        }
        self.session.phase = Phase::Deployed;
        self.bump();
        let seed = self.session.deployment.as_ref().map_or(seed, |d| d.seed);
        self.log(EventKind::Deployed { seed, resumed });
        Ok(())
    }

    /// Runs one stage with the given noise, or the next draw of the seeded
    /// stream. Closes the session after the last stage.
    pub fn step(&mut self, eps: Option<f64>) -> Result<StageReport, ServiceError> {
        require(self.session.phase, "step", &[Phase::Deployed])?;
        let params = *self.params();
        let noise = params.noise()?;
        let mut strategy = self.strategy()?;
        let control = strategy.next_control()?;
        let straight = self.mdp.controls().iter().position(|&u| u == 0.0).unwrap_or(0);
        let nominal = self.mdp.controls()[control.unwrap_or(straight)];
        let d = self.session.deployment.clone().expect("deployed session has a deployment");
        let (eps, draws) = match eps {
            Some(e) => {
                if !e.is_finite() || e.abs() > noise.eps_max() {
                    return Err(ServiceError::Noise {
                        eps: e,
                        eps_max: noise.eps_max(),
                    });
                }
                (e, d.draws)
            }
            None => {
                let mut rng = trial_rng(d.seed, 0);
                for _ in 0..d.draws {
                    draw_noise(&mut rng, noise.eps_max());
                }
                (draw_noise(&mut rng, noise.eps_max()), d.draws + 1)
            }
        };
        let cell = noise.cell_of(eps);
        let arc = integrate_arc(d.pose, nominal + eps, params.dt)?;
        let mut word = d.word.clone();
        for p in stage_samples(&arc, params.dt) {
            let l = self.env.label_point(p);
            if word.last() != Some(&l) {
                word.push(l);
            }
        }
        if let Some(u) = control {
            strategy.observe_cell(u, cell)?;
        }
        let state = strategy.cursor();
        let satisfied = strategy.satisfied_up_to();
        let path = strategy.path().to_vec();
        let (lower, upper) = bounds_at(&self.mdp, &self.solution, state, satisfied)?;
        let stage = d.stage + 1;
        let report = StageReport {
            stage,
            control,
            nominal,
            eps,
            applied: nominal + eps,
            cell,
            pose: arc.end,
            state,
            satisfied_up_to: satisfied,
            lower,
            upper,
        };
        let closing = stage >= params.depth;
        let verdict = closing.then(|| check_word(&Word { letters: word.clone() }, &self.compiled));
        self.session.deployment = Some(Deployment {
            seed: d.seed,
            draws,
            stage,
            pose: arc.end,
            path,
            word,
            verdict,
        });
        self.bump();
        self.log(EventKind::Stepped { report: report.clone() });
        if let Some(verdict) = verdict {
            self.session.phase = Phase::Closed;
            self.log(EventKind::Closed {
                verdict,
                satisfied_up_to: satisfied,
            });
        }
        Ok(report)
    }

    /// Applies an environment change at the cursor: the vehicle halts, the
    /// formula is re-solved on the sub-MDP ahead of it, and for restricting
    /// changes relaxations are listed straight away.
    pub fn environment(&mut self, store: &Store, rule: &UpdateRule) -> Result<(), ServiceError> {
        require(self.session.phase, "event", &[Phase::Deployed])?;
        let strategy = self.strategy()?;
        let cursor = strategy.cursor();
        let actual = strategy.satisfied_up_to();
        if rule.satisfied_up_to != 0 && rule.satisfied_up_to != actual {
            return Err(ServiceError::Prefix {
                claimed: rule.satisfied_up_to,
                actual,
            });
        }
        let rule = UpdateRule::new(rule.kind.clone(), actual);
        let before = bounds_at(&self.mdp, &self.solution, cursor, actual)?;
        let inc = solve_incremental(&self.mdp, &self.formula, &self.solution, cursor, &rule)?;
        check_guards(&inc.formula, &self.session.scenario.absorbing).map_err(ServiceError::Scenario)?;
        let mdp = Arc::new(inc.mdp);
        let mref = store.put_mdp(Arc::clone(&mdp))?;
        self.compiled = inc.formula.compile(mdp.propositions())?;
        self.formula = inc.formula;
        self.solution = inc.solution;
        self.mdp = mdp;
        let d = self.session.deployment.as_mut().expect("deployed session has a deployment");
        d.path = vec![StateId::ROOT];
        d.word = vec![self.env.label_point(d.pose.position())];
        self.session.origin = Origin {
            stage: d.stage,
            pose: d.pose,
            discharged: self.session.origin.discharged + actual,
        };
        self.session.mdp = mref.clone();
        self.session.formula = self.formula.to_string();
        self.session.lower = self.solution.lower;
        self.session.upper = self.solution.upper;
        self.session.phase = Phase::Renegotiating;
        self.bump();
        let dir = direction(&rule);
        self.log(EventKind::Environment {
            rule,
            direction: dir,
            formula: self.session.formula.clone(),
            states: mref.states,
            before,
            lower: self.session.lower,
            upper: self.session.upper,
        });
        if dir == Direction::Decrease {
            self.offer()?;
        }
        Ok(())
    }
}
