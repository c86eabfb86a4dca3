//! Running a synthesized policy on the continuous vehicle.
//!
//! A [`Strategy`] tracks the MDP state matching the measured noise cells so
//! far and returns the nominal control the composed policy prescribes there.
//! [`simulate`] drives the real (unquantized) dynamics with it and checks the
//! resulting word against the formula.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{Environment, Point, Word};
use crate::mdp::{Action, Enabled, StateId, TreeMdp};
use crate::pctl::CompiledFormula;
use crate::synthesis::Solution;
use crate::vehicle::{integrate_arc, ArcSegment, NoiseModel, Pose, VehicleError, VehicleParams, SAMPLES_PER_STAGE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrategyError {
    #[error("state {0} is inside a nu-chain; advance it first")]
    MidChain(StateId),
    #[error("control {control} is not enabled at {state}")]
    NotEnabled { state: StateId, control: usize },
    #[error("measured interval [{0}, {1}] does not match a noise cell")]
    Misaligned(f64, f64),
    #[error("noise cell {0} out of range")]
    BadCell(usize),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
}

/// Cursor over the MDP driven by measured noise cells.
#[derive(Debug, Clone)]
pub struct Strategy<'a> {
    mdp: &'a TreeMdp,
    solution: &'a Solution,
    noise: NoiseModel,
    cursor: StateId,
    satisfied: usize,
    path: Vec<StateId>,
}

impl<'a> Strategy<'a> {
    pub fn new(mdp: &'a TreeMdp, solution: &'a Solution, noise: NoiseModel) -> Self {
        Self::resume(mdp, solution, noise, &[mdp.root()])
    }

    /// Rebuilds a strategy that has already visited `path` (a root path).
    pub fn resume(mdp: &'a TreeMdp, solution: &'a Solution, noise: NoiseModel, path: &[StateId]) -> Self {
        let mut st = Strategy {
            mdp,
            solution,
            noise,
            cursor: mdp.root(),
            satisfied: 0,
            path: Vec::new(),
        };
        for &s in path {
            st.enter(s);
        }
        st.follow_chain();
        st
    }

    fn enter(&mut self, s: StateId) {
        self.cursor = s;
        self.path.push(s);
        self.satisfied = self.solution.advance(self.satisfied, s);
    }

    fn follow_chain(&mut self) {
        while let Some(next) = self.mdp.nu_successor(self.cursor) {
            self.enter(next);
        }
    }

    pub fn cursor(&self) -> StateId {
        self.cursor
    }

    /// Number of blocks whose goal has been reached in order.
    pub fn satisfied_up_to(&self) -> usize {
        self.satisfied
    }

    /// Every state visited so far, root first.
    pub fn path(&self) -> &[StateId] {
        &self.path
    }

    pub fn is_done(&self) -> bool {
        self.mdp.state(self.cursor).leaf
    }

    /// The control index to apply next, or `None` at a leaf.
    pub fn next_control(&self) -> Result<Option<usize>, StrategyError> {
        let st = self.mdp.state(self.cursor);
        if st.leaf {
            return Ok(None);
        }
        if st.enabled == Enabled::Nu {
            return Err(StrategyError::MidChain(self.cursor));
        }
        match self.solution.action(self.satisfied, self.cursor) {
            Action::Control(u) => Ok(Some(u as usize)),
            Action::Nu => Err(StrategyError::MidChain(self.cursor)),
        }
    }

    /// Moves to the child under control `u` and the cell containing the
    /// measured interval, then through its `ν`-chain.
    pub fn observe(&mut self, u: usize, measured: (f64, f64)) -> Result<StateId, StrategyError> {
        let w = self.mdp.controls().get(u).copied().ok_or(StrategyError::NotEnabled {
            state: self.cursor,
            control: u,
        })?;
        let cell = self
            .noise
            .cell_for_measurement(w, measured)
            .ok_or(StrategyError::Misaligned(measured.0, measured.1))?;
        self.observe_cell(u, cell)
    }

    pub fn observe_cell(&mut self, u: usize, cell: usize) -> Result<StateId, StrategyError> {
        if cell >= self.mdp.noise_cells() {
            return Err(StrategyError::BadCell(cell));
        }
        if self.mdp.state(self.cursor).enabled == Enabled::Nu && !self.is_done() {
            return Err(StrategyError::MidChain(self.cursor));
        }
        let next = self.mdp.successor(self.cursor, u, cell).ok_or(StrategyError::NotEnabled {
            state: self.cursor,
            control: u,
        })?;
        self.enter(next);
        self.follow_chain();
        Ok(self.cursor)
    }
}

/// Outcome of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub seed: u64,
    pub trial: u64,
    /// Nominal control per stage (rad/s).
    pub nominal: Vec<f64>,
    /// Applied control per stage, nominal plus noise (rad/s).
    pub applied: Vec<f64>,
    /// Measured noise cell per stage.
    pub cells: Vec<usize>,
    /// MDP state after each stage while the strategy was running.
    pub states: Vec<StateId>,
    /// Stage at which the strategy reached a leaf, if before the last one.
    pub done_at: Option<usize>,
    /// Dense position samples; empty unless requested.
    pub positions: Vec<Point>,
    pub word: Word,
    pub satisfied: bool,
    pub satisfied_up_to: usize,
}

/// Everything needed to run trials of one synthesized policy.
#[derive(Debug, Clone, Copy)]
pub struct SimSetup<'a> {
    pub env: &'a Environment,
    pub params: &'a VehicleParams,
    pub mdp: &'a TreeMdp,
    pub solution: &'a Solution,
    pub formula: &'a CompiledFormula,
    /// Pose at the MDP root; differs from `params.q_init` for re-rooted MDPs.
    pub start: Pose,
    /// Stages left to run from `start`.
    pub stages: usize,
}

impl<'a> SimSetup<'a> {
    pub fn new(
        env: &'a Environment,
        params: &'a VehicleParams,
        mdp: &'a TreeMdp,
        solution: &'a Solution,
        formula: &'a CompiledFormula,
    ) -> Self {
        SimSetup {
            env,
            params,
            mdp,
            solution,
            formula,
            start: params.q_init,
            stages: params.depth,
        }
    }
}

/// Positions along `arc` at `dt / SAMPLES_PER_STAGE` spacing, excluding its start.
pub fn stage_samples(arc: &ArcSegment, dt: f64) -> impl Iterator<Item = Point> + '_ {
    (1..=SAMPLES_PER_STAGE).map(move |k| arc.position_at(dt * k as f64 / SAMPLES_PER_STAGE as f64))
}

/// Random generator of trial `trial` under `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Draws `ε ~ U[-eps_max, eps_max]`.
pub fn draw_noise(rng: &mut ChaCha8Rng, eps_max: f64) -> f64 {
    let x: f64 = rng.gen();
    eps_max * (2.0 * x - 1.0)
}

/// Runs one trial from the MDP root. When the policy reaches a leaf early the
/// vehicle keeps going straight so that the word covers all stages.
pub fn simulate(setup: &SimSetup<'_>, seed: u64, trial: u64, keep_positions: bool) -> Result<SimTrace, StrategyError> {
    let noise = setup.params.noise()?;
    let straight = setup
        .mdp
        .controls()
        .iter()
        .position(|&u| u == 0.0)
        .unwrap_or(0);
    let mut rng = trial_rng(seed, trial);
    let mut strategy = Strategy::new(setup.mdp, setup.solution, noise.clone());
    let mut pose = setup.start;
    let mut trace = SimTrace {
        seed,
        trial,
        nominal: Vec::new(),
        applied: Vec::new(),
        cells: Vec::new(),
        states: Vec::new(),
        done_at: None,
        positions: Vec::new(),
        word: Word { letters: Vec::new() },
        satisfied: false,
        satisfied_up_to: 0,
    };
    let mut samples = vec![pose.position()];
    for stage in 1..=setup.stages {
        let u = match strategy.next_control()? {
            Some(u) => Some(u),
            None => {
                trace.done_at.get_or_insert(stage - 1);
                None
            }
        };
        let w_nom = setup.mdp.controls()[u.unwrap_or(straight)];
        let eps = draw_noise(&mut rng, noise.eps_max());
        let arc = integrate_arc(pose, w_nom + eps, setup.params.dt)?;
        samples.extend(stage_samples(&arc, setup.params.dt));
        let cell = noise.cell_of(eps);
        trace.nominal.push(w_nom);
        trace.applied.push(w_nom + eps);
        trace.cells.push(cell);
        if let Some(u) = u {
            strategy.observe_cell(u, cell)?;
            trace.states.push(strategy.cursor());
        }
        pose = arc.end;
    }
    trace.word = setup.env.word_of_trace(&samples);
    trace.satisfied = check_word(&trace.word, setup.formula);
    trace.satisfied_up_to = strategy.satisfied_up_to();
    if keep_positions {
        trace.positions = samples;
    }
    Ok(trace)
}

/// Whether a single word satisfies the until chain. Thresholds are read on
/// the one path, where the probability is either 0 or 1.
pub fn check_word(word: &Word, f: &CompiledFormula) -> bool {
    let len = word.letters.len();
    if len == 0 || f.blocks.is_empty() {
        return false;
    }
    let mut next = vec![true; len];
    for block in f.blocks.iter().rev() {
        let mut sat = vec![false; len];
        for k in (0..len).rev() {
            let o = word.letters[k];
            sat[k] = (block.psi_holds(o) && next[k]) || (block.phi_holds(o) && k + 1 < len && sat[k + 1]);
        }
        next = sat;
    }
    next[0]
}

/// Frequency of satisfying runs with its Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub successes: u64,
    pub trials: u64,
}

impl Estimate {
    pub fn frequency(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    /// Wilson score interval at `z` standard errors.
    pub fn wilson(&self, z: f64) -> (f64, f64) {
        if self.trials == 0 {
            return (0.0, 1.0);
        }
        let n = self.trials as f64;
        let p = self.frequency();
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = z * libm::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
        ((center - half).max(0.0), (center + half).min(1.0))
    }

    /// The 95% interval.
    pub fn interval95(&self) -> (f64, f64) {
        self.wilson(1.959_963_984_540_054)
    }
}

/// Runs `trials` independent simulations; trial `k` uses stream `k` of `seed`.
pub fn estimate(setup: &SimSetup<'_>, trials: u64, seed: u64) -> Result<Estimate, StrategyError> {
    let mut successes = 0;
    for trial in 0..trials {
        if simulate(setup, seed, trial, false)?.satisfied {
            successes += 1;
        }
    }
    Ok(Estimate { successes, trials })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{EnvironmentSpec, LabelSet, Literal};
    use crate::mdp::{abstract_vehicle, Absorbing};
    use crate::pctl::Formula;
    use crate::synthesis::{solve, BoundScope};
    use crate::vehicle::DEFAULT_NODE_CEILING;
    use alloc::string::{String, ToString};

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    }

    struct World {
        env: Environment,
        params: VehicleParams,
        mdp: TreeMdp,
        formula: CompiledFormula,
        solution: Solution,
    }

    fn world(eps_max: f64, text: &str) -> World {
        let env = Environment::from_spec(&EnvironmentSpec {
            bounds: [0.0, 0.0, 20.0, 20.0],
            regions: [
                ("g".to_string(), vec![rect(12.5, 8.0, 16.0, 12.0)]),
                ("u".to_string(), vec![rect(10.0, 13.0, 20.0, 14.0), rect(10.0, 6.0, 20.0, 7.0)]),
            ]
            .into_iter()
            .collect(),
        })
        .unwrap();
        let params = VehicleParams {
            rho: 3.0,
            dt: 1.2,
            depth: 3,
            eps_max,
            n: 3,
            q_init: Pose::new(10.0, 10.0, 0.0),
        };
        let mdp = abstract_vehicle(&params, &env, &Absorbing::none(), DEFAULT_NODE_CEILING).unwrap();
        let formula = Formula::parse(text).unwrap().compile(env.propositions()).unwrap();
        let solution = solve(&mdp, &formula, BoundScope::Reachable);
        World {
            env,
            params,
            mdp,
            formula,
            solution,
        }
    }

    const REACH: &str = "Pmax=? [ P>0 [ !u U g & !u ] ]";

    #[test]
    fn next_control_follows_policy() {
        let w = world(0.06, REACH);
        let st = Strategy::new(&w.mdp, &w.solution, w.params.noise().unwrap());
        let Action::Control(u) = w.solution.block(1).mu[0] else { panic!() };
        assert_eq!(st.next_control().unwrap(), Some(u as usize));
    }

    #[test]
    fn measurement_maps_to_cell() {
        let w = world(0.06, REACH);
        let mut st = Strategy::new(&w.mdp, &w.solution, w.params.noise().unwrap());
        let u = st.next_control().unwrap().unwrap();
        let w0 = w.mdp.controls()[u];
        let s = st.observe(u, (w0 - 0.06, w0 - 0.02)).unwrap();
        let first = w.mdp.successor(w.mdp.root(), u, 0).unwrap();
        assert_eq!(w.mdp.path_to(s)[1], first);
        assert_eq!(w.mdp.state(s).cell, Some(0));
        assert!(st.observe(u, (w0 - 0.05, w0 - 0.01)).is_err());
        let v = st.next_control().unwrap().unwrap();
        st.observe_cell(v, 2).unwrap();
        assert_eq!(w.mdp.state(st.cursor()).stage, 2);
        assert!(matches!(st.observe_cell(v, 3), Err(StrategyError::BadCell(3))));
    }

    #[test]
    fn leaves_report_done() {
        let w = world(0.06, REACH);
        let mut st = Strategy::new(&w.mdp, &w.solution, w.params.noise().unwrap());
        for _ in 0..3 {
            let u = st.next_control().unwrap().unwrap();
            st.observe_cell(u, 1).unwrap();
        }
        assert!(st.is_done());
        assert_eq!(st.next_control().unwrap(), None);
    }

    #[test]
    fn advancement_matches_partition() {
        let w = world(0.06, "Pmax=? [ P>0 [ !u U g & !u & P>0 [ !u U !g ] ] ]");
        for cells in [[0, 1, 2], [1, 1, 1], [2, 0, 0]] {
            let mut st = Strategy::new(&w.mdp, &w.solution, w.params.noise().unwrap());
            let mut expect = 0;
            for c in cells {
                if let Some(u) = st.next_control().unwrap() {
                    st.observe_cell(u, c).unwrap();
                }
            }
            for &s in st.path() {
                while expect < 2 && w.solution.block(expect + 1).yes[s.index()] {
                    expect += 1;
                }
            }
            assert_eq!(st.satisfied_up_to(), expect);
            let path = st.path().to_vec();
            assert_eq!(w.solution.satisfied_up_to(&w.mdp, &path).unwrap(), expect);
        }
    }

    #[test]
    fn noiseless_run_follows_representative_path() {
        let w = world(0.0, REACH);
        let setup = SimSetup::new(&w.env, &w.params, &w.mdp, &w.solution, &w.formula);
        let tr = simulate(&setup, 1, 0, true).unwrap();
        assert_eq!(tr.applied, tr.nominal);
        assert_eq!(tr.cells.len(), 3);
        let last = *tr.states.last().unwrap();
        let seg = w.mdp.state(last).segment.unwrap();
        let end = tr.positions.last().unwrap();
        assert!(end.distance(&seg.arc.end.position()) < 1e-12);
        assert_eq!(tr.satisfied, w.solution.lower == 1.0);
    }

    #[test]
    fn seeds_are_reproducible() {
        let w = world(0.06, REACH);
        let setup = SimSetup::new(&w.env, &w.params, &w.mdp, &w.solution, &w.formula);
        let a = simulate(&setup, 42, 3, true).unwrap();
        let b = simulate(&setup, 42, 3, true).unwrap();
        assert_eq!(a, b);
        let c = simulate(&setup, 42, 4, true).unwrap();
        assert_ne!(a.applied, c.applied);
        for (k, (&w_app, &w_nom)) in a.applied.iter().zip(&a.nominal).enumerate() {
            let eps = w_app - w_nom;
            assert!(eps.abs() <= 0.06);
            assert!(w.params.noise().unwrap().cells()[a.cells[k]].contains(eps));
        }
    }

    #[test]
    fn measured_cells_match_cursor() {
        let w = world(0.06, REACH);
        let setup = SimSetup::new(&w.env, &w.params, &w.mdp, &w.solution, &w.formula);
        for trial in 0..20 {
            let tr = simulate(&setup, 7, trial, false).unwrap();
            for (k, &s) in tr.states.iter().enumerate() {
                let stage_cells: Vec<usize> = w
                    .mdp
                    .path_to(s)
                    .iter()
                    .filter(|&&x| w.mdp.state(x).parent.map(|p| p.1) != Some(Action::Nu))
                    .filter_map(|&x| w.mdp.state(x).cell)
                    .collect();
                assert_eq!(stage_cells, tr.cells[..=k]);
            }
        }
    }

    #[test]
    fn always_satisfied_scenario() {
        let w = world(0.06, "Pmax=? [ P>0 [ true U !g ] ]");
        let setup = SimSetup::new(&w.env, &w.params, &w.mdp, &w.solution, &w.formula);
        let est = estimate(&setup, 50, 9).unwrap();
        assert_eq!(est.frequency(), 1.0);
        assert_eq!(w.solution.lower, 1.0);
    }

    #[test]
    fn frequency_respects_lower_bound() {
        let w = world(0.06, REACH);
        let setup = SimSetup::new(&w.env, &w.params, &w.mdp, &w.solution, &w.formula);
        let est = estimate(&setup, 400, 11).unwrap();
        assert!(w.solution.lower > 0.0);
        assert!(est.wilson(3.0).1 >= w.solution.lower, "{est:?} vs {}", w.solution.lower);
    }

    #[test]
    fn wilson_interval() {
        let e = Estimate {
            successes: 80,
            trials: 100,
        };
        let (lo, hi) = e.interval95();
        assert!((lo - 0.711_1).abs() < 1e-3 && (hi - 0.866_6).abs() < 1e-3, "{lo} {hi}");
        let all = Estimate {
            successes: 10,
            trials: 10,
        };
        assert_eq!(all.wilson(3.0).1, 1.0);
    }

    fn letter(bits: &[(usize, bool)]) -> LabelSet {
        let mut s = LabelSet::EMPTY;
        for &(prop, positive) in bits {
            s.insert(Literal { prop, positive });
        }
        s
    }

    fn alphabet() -> Vec<String> {
        vec!["p".to_string(), "u".to_string()]
    }

    #[test]
    fn word_examples() {
        let f = Formula::parse("Pmax=? [ P>0 [ !u U p ] ]").unwrap().compile(&alphabet()).unwrap();
        let empty = letter(&[(0, false), (1, false)]);
        let p = letter(&[(0, true), (1, false)]);
        let u = letter(&[(0, false), (1, true)]);
        assert!(check_word(&Word { letters: vec![empty, p] }, &f));
        assert!(!check_word(&Word { letters: vec![u, p] }, &f));
        assert!(!check_word(&Word { letters: vec![empty] }, &f));
    }

    /// Literal reading of the until chain, recursing over goal positions.
    fn naive(word: &[LabelSet], f: &CompiledFormula, j: usize, k: usize) -> bool {
        if j == f.blocks.len() {
            return true;
        }
        let b = &f.blocks[j];
        (k..word.len()).any(|m| {
            b.psi_holds(word[m]) && naive(word, f, j + 1, m) && (k..m).all(|l| b.phi_holds(word[l]))
        })
    }

    #[test]
    fn word_checker_matches_recursive_semantics() {
        let texts = [
            "Pmax=? [ P>0 [ !u U p ] ]",
            "Pmax=? [ P>0 [ !u U p & P>0 [ !p U u ] ] ]",
            "Pmax=? [ P>0.5 [ (p | !u) U p & !u & P>0 [ true U ((u & p) | (!u & !p)) & P>=1 [ !u U p ] ] ] ]",
        ];
        let compiled: Vec<CompiledFormula> = texts
            .iter()
            .map(|t| Formula::parse(t).unwrap().compile(&alphabet()).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..10_000 {
            let len = rng.gen_range(1..8);
            let word: Vec<LabelSet> = (0..len)
                .map(|_| letter(&[(0, rng.gen_bool(0.5)), (1, rng.gen_bool(0.3))]))
                .collect();
            for f in &compiled {
                let w = Word { letters: word.clone() };
                assert_eq!(check_word(&w, f), naive(&word, f, 0, 0), "{word:?}");
            }
        }
    }
}
