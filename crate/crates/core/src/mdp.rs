//! Tree-structured MDPs.
//!
//! Every arc of the reachability tree is cut into a chain of states, one per
//! run of constant disc labels, linked by the silent action `ν`. The last
//! state of a chain offers the nominal controls; control `u` leads with
//! probability `1/n` to the first state of each of the `n` child arcs.
//! Leaves carry a `ν` self-loop.
//!
//! State ids are dense and every parent has a smaller id than its children,
//! so iterating ids in reverse is a valid backward-induction order.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{Environment, LabelSeq, LabelSet, Literal};
use crate::vehicle::{build_reach_tree, ArcSegment, NodeId, ReachNode, ReachTree, VehicleError, VehicleParams};

/// Version of the serialized [`TreeMdp`] layout.
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub u32);

impl StateId {
    pub const ROOT: StateId = StateId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn from_index(i: usize) -> Self {
        StateId(u32::try_from(i).expect("state id overflow"))
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Nominal control (index into the control set) or the silent action `ν`.
///
/// The derived order puts controls first, ascending, then `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Control(u8),
    Nu,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Control(u) => write!(f, "u{u}"),
            Action::Nu => f.write_str("nu"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enabled {
    Controls,
    Nu,
}

/// The part `[t_lo, t_hi]` of an arc covered by one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubSegment {
    pub arc: ArcSegment,
    pub t_lo: f64,
    pub t_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpState {
    pub stage: usize,
    /// `None` for the root.
    pub segment: Option<SubSegment>,
    pub radius: f64,
    /// Noise cell of the arc; `None` for the root.
    pub cell: Option<usize>,
    pub labels: LabelSet,
    pub parent: Option<(StateId, Action)>,
    pub enabled: Enabled,
    pub leaf: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub action: Action,
    pub successors: Vec<(StateId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeMdp {
    props: Vec<String>,
    controls: Vec<f64>,
    noise_cells: usize,
    states: Vec<MdpState>,
    transitions: Vec<Vec<Transition>>,
}

impl TreeMdp {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn root(&self) -> StateId {
        StateId::ROOT
    }

    pub fn propositions(&self) -> &[String] {
        &self.props
    }

    /// Nominal control values, ascending.
    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn noise_cells(&self) -> usize {
        self.noise_cells
    }

    pub fn state(&self, s: StateId) -> &MdpState {
        &self.states[s.index()]
    }

    pub fn states(&self) -> &[MdpState] {
        &self.states
    }

    pub fn ids(&self) -> impl DoubleEndedIterator<Item = StateId> + ExactSizeIterator {
        (0..self.states.len()).map(StateId::from_index)
    }

    /// Enabled actions at `s` in ascending action order.
    pub fn transitions(&self, s: StateId) -> &[Transition] {
        &self.transitions[s.index()]
    }

    pub fn successors(&self, s: StateId, a: Action) -> Option<&[(StateId, f64)]> {
        self.transitions(s)
            .iter()
            .find(|t| t.action == a)
            .map(|t| t.successors.as_slice())
    }

    /// Child reached from `s` under control `u` and noise cell `cell`.
    pub fn successor(&self, s: StateId, u: usize, cell: usize) -> Option<StateId> {
        let a = Action::Control(u8::try_from(u).ok()?);
        self.successors(s, a)?.get(cell).map(|(c, _)| *c)
    }

    /// The next state of a `ν` chain, if `s` is an intermediate state.
    pub fn nu_successor(&self, s: StateId) -> Option<StateId> {
        let st = self.state(s);
        if st.leaf || st.enabled != Enabled::Nu {
            return None;
        }
        self.successors(s, Action::Nu).map(|v| v[0].0)
    }

    pub fn leaf_count(&self) -> usize {
        self.states.iter().filter(|s| s.leaf).count()
    }

    /// All child ids, excluding leaf self-loops.
    pub fn children(&self, s: StateId) -> impl Iterator<Item = StateId> + '_ {
        let leaf = self.state(s).leaf;
        self.transitions(s)
            .iter()
            .filter(move |_| !leaf)
            .flat_map(|t| t.successors.iter().map(|(c, _)| *c))
    }

    /// The states from the root down to `s`, inclusive.
    pub fn path_to(&self, s: StateId) -> Vec<StateId> {
        let mut path = vec![s];
        let mut cur = s;
        while let Some((p, _)) = self.state(cur).parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Sub-MDP of the states reachable from `s`, re-rooted at `s`, with ids
    /// renumbered in depth-first order. Also returns, for every new id, the
    /// old id it came from.
    pub fn subtree(&self, s: StateId) -> Option<(TreeMdp, Vec<StateId>)> {
        if s.index() >= self.len() {
            return None;
        }
        if s == self.root() {
            return Some((self.clone(), self.ids().collect()));
        }
        let mut old_of_new = Vec::new();
        let mut new_of_old = vec![u32::MAX; self.len()];
        let mut stack = vec![s];
        while let Some(cur) = stack.pop() {
            new_of_old[cur.index()] = old_of_new.len() as u32;
            old_of_new.push(cur);
            let kids: Vec<StateId> = self.children(cur).collect();
            stack.extend(kids.into_iter().rev());
        }
        let map = |old: StateId| StateId(new_of_old[old.index()]);
        let mut states = Vec::with_capacity(old_of_new.len());
        let mut transitions = Vec::with_capacity(old_of_new.len());
        for (k, &old) in old_of_new.iter().enumerate() {
            let mut st = self.state(old).clone();
            st.parent = if k == 0 {
                None
            } else {
                st.parent.map(|(p, a)| (map(p), a))
            };
            states.push(st);
            transitions.push(
                self.transitions(old)
                    .iter()
                    .map(|t| Transition {
                        action: t.action,
                        successors: t.successors.iter().map(|&(c, p)| (map(c), p)).collect(),
                    })
                    .collect(),
            );
        }
        Some((
            TreeMdp {
                props: self.props.clone(),
                controls: self.controls.clone(),
                noise_cells: self.noise_cells,
                states,
                transitions,
            },
            old_of_new,
        ))
    }
}

/// A violated tree-MDP condition, located at a state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub state: StateId,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.state, self.message)
    }
}

const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// Checks every structural condition of a tree-structured MDP.
pub fn validate(m: &TreeMdp) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut bad = |s: StateId, message: String| out.push(Violation { state: s, message });
    if m.is_empty() {
        bad(StateId::ROOT, "no states".into());
        return Err(out);
    }
    let n = m.noise_cells;
    let mut incoming: Vec<Vec<(StateId, Action)>> = vec![Vec::new(); m.len()];
    for s in m.ids() {
        let st = m.state(s);
        if st.labels.is_contradictory() {
            bad(s, "label set holds both polarities of a proposition".into());
        }
        let ts = m.transitions(s);
        if ts.is_empty() {
            bad(s, "no enabled action".into());
        }
        let actions: Vec<Action> = ts.iter().map(|t| t.action).collect();
        if actions.windows(2).any(|w| w[0] >= w[1]) {
            bad(s, "actions not strictly ascending".into());
        }
        for t in ts {
            let sum: f64 = t.successors.iter().map(|(_, p)| p).sum();
            if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
                bad(s, format!("probabilities under {} sum to {sum}", t.action));
            }
            if t.successors.iter().any(|&(_, p)| !(p > 0.0)) {
                bad(s, format!("non-positive probability under {}", t.action));
            }
            match t.action {
                Action::Control(u) => {
                    if st.enabled != Enabled::Controls || st.leaf {
                        bad(s, format!("control {u} offered by a state that only enables nu"));
                    }
                    if u as usize >= m.controls.len() {
                        bad(s, format!("unknown control {u}"));
                    }
                    if t.successors.len() != n || t.successors.iter().any(|&(_, p)| p != 1.0 / n as f64) {
                        bad(s, format!("control {u} must have {n} successors of probability 1/{n}"));
                    }
                }
                Action::Nu => {
                    if st.enabled != Enabled::Nu {
                        bad(s, "nu offered at a control state".into());
                    }
                    if t.successors.len() != 1 {
                        bad(s, "nu must have exactly one successor".into());
                    } else if st.leaf && t.successors[0].0 != s {
                        bad(s, "leaf nu must be a self-loop".into());
                    } else if !st.leaf && t.successors[0].0 == s {
                        bad(s, "self-loop on a non-leaf state".into());
                    }
                }
            }
            for &(c, _) in &t.successors {
                if c.index() >= m.len() {
                    bad(s, format!("successor {c} out of range"));
                } else if c != s {
                    if c <= s {
                        bad(s, format!("successor {c} does not have a larger id"));
                    }
                    incoming[c.index()].push((s, t.action));
                }
            }
        }
    }
    for s in m.ids() {
        let st = m.state(s);
        let inc = &incoming[s.index()];
        if s == StateId::ROOT {
            if !inc.is_empty() || st.parent.is_some() {
                bad(s, "root has a parent".into());
            }
            continue;
        }
        if inc.len() != 1 {
            bad(s, format!("{} incoming edges", inc.len()));
        } else if st.parent != Some(inc[0]) {
            bad(s, "recorded parent does not match the incoming edge".into());
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Incremental construction of a [`TreeMdp`] by hand.
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    mdp: TreeMdp,
}

impl MdpBuilder {
    /// Starts a tree with a root labelled `root_labels`.
    pub fn new(props: Vec<String>, controls: Vec<f64>, noise_cells: usize, root_labels: LabelSet) -> Self {
        let mut b = MdpBuilder {
            mdp: TreeMdp {
                props,
                controls,
                noise_cells,
                states: Vec::new(),
                transitions: Vec::new(),
            },
        };
        b.push(root_labels, None, 0, None);
        b
    }

    fn push(&mut self, labels: LabelSet, parent: Option<(StateId, Action)>, stage: usize, cell: Option<usize>) -> StateId {
        let id = StateId::from_index(self.mdp.states.len());
        self.mdp.states.push(MdpState {
            stage,
            segment: None,
            radius: 0.0,
            cell,
            labels,
            parent,
            enabled: Enabled::Controls,
            leaf: true,
        });
        self.mdp.transitions.push(Vec::new());
        id
    }

    /// Adds the `n` children of `parent` under control `u`, one per label set.
    pub fn expand(&mut self, parent: StateId, u: u8, labels: &[LabelSet]) -> Vec<StateId> {
        assert_eq!(labels.len(), self.mdp.noise_cells, "one label set per noise cell");
        let stage = self.mdp.states[parent.index()].stage + 1;
        let p = 1.0 / self.mdp.noise_cells as f64;
        let kids: Vec<StateId> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| self.push(*l, Some((parent, Action::Control(u))), stage, Some(i)))
            .collect();
        let ts = &mut self.mdp.transitions[parent.index()];
        ts.push(Transition {
            action: Action::Control(u),
            successors: kids.iter().map(|&k| (k, p)).collect(),
        });
        ts.sort_by_key(|t| t.action);
        kids
    }

    /// Appends a `ν` successor to `parent`.
    pub fn chain(&mut self, parent: StateId, labels: LabelSet) -> StateId {
        let st = &self.mdp.states[parent.index()];
        let (stage, cell) = (st.stage, st.cell);
        let id = self.push(labels, Some((parent, Action::Nu)), stage, cell);
        self.mdp.states[parent.index()].enabled = Enabled::Nu;
        self.mdp.transitions[parent.index()] = vec![Transition {
            action: Action::Nu,
            successors: vec![(id, 1.0)],
        }];
        id
    }

    pub fn build(mut self) -> TreeMdp {
        for (k, st) in self.mdp.states.iter_mut().enumerate() {
            let ts = &mut self.mdp.transitions[k];
            st.leaf = ts.is_empty();
            if st.leaf {
                st.enabled = Enabled::Nu;
                ts.push(Transition {
                    action: Action::Nu,
                    successors: vec![(StateId::from_index(k), 1.0)],
                });
            }
        }
        self.mdp
    }
}

#[derive(Debug, Error)]
pub enum MdpError {
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error("absorbing proposition index {0} is not in the alphabet")]
    UnknownAbsorbing(usize),
}

/// Truncation rule: a state whose disc may touch any `avoid` region ends its
/// branch. Sound whenever every block requires the negation of each avoided
/// proposition both before and at its goal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Absorbing {
    pub avoid: BTreeSet<usize>,
}

impl Absorbing {
    pub fn none() -> Self {
        Absorbing::default()
    }

    pub fn is_absorbing(&self, labels: LabelSet) -> bool {
        self.avoid.iter().any(|&prop| {
            !labels.contains(Literal {
                prop,
                positive: false,
            })
        })
    }
}

/// Labels every arc of `tree`, with no truncation beyond what the tree carries.
pub fn build_mdp(tree: &ReachTree, env: &Environment) -> TreeMdp {
    let seqs: Vec<LabelSeq> = tree
        .nodes
        .iter()
        .map(|n| env.trace_labels(&n.segment, n.radius))
        .collect();
    assemble(tree, env, &seqs, &Absorbing::none())
}

/// Builds the reachability tree and its MDP in one pass, ending branches at
/// absorbing states.
pub fn abstract_vehicle(
    params: &VehicleParams,
    env: &Environment,
    absorbing: &Absorbing,
    node_ceiling: usize,
) -> Result<TreeMdp, MdpError> {
    params.validate()?;
    if let Some(&bad) = absorbing.avoid.iter().find(|&&p| p >= env.propositions().len()) {
        return Err(MdpError::UnknownAbsorbing(bad));
    }
    let controls = params.controls()?;
    let noise = params.noise()?;
    let root_labels = env.label_point(params.q_init.position());
    let depth = if absorbing.is_absorbing(root_labels) {
        0
    } else {
        params.depth
    };
    let mut seqs: Vec<LabelSeq> = Vec::new();
    let mut pred = |_: NodeId, node: &ReachNode| {
        let seq = env.trace_labels(&node.segment, node.radius);
        let hit = seq.entries.iter().any(|e| absorbing.is_absorbing(e.labels));
        seqs.push(seq);
        hit
    };
    let tree = build_reach_tree(
        params.q_init,
        &controls,
        &noise,
        params.dt,
        depth,
        Some(&mut pred),
        node_ceiling,
    )?;
    Ok(assemble(&tree, env, &seqs, absorbing))
}

fn assemble(tree: &ReachTree, env: &Environment, seqs: &[LabelSeq], absorbing: &Absorbing) -> TreeMdp {
    let n = tree.noise.len();
    let p = 1.0 / n as f64;
    let mut states = Vec::new();
    let mut transitions: Vec<Vec<Transition>> = Vec::new();
    states.push(MdpState {
        stage: 0,
        segment: None,
        radius: 0.0,
        cell: None,
        labels: env.label_point(tree.root.position()),
        parent: None,
        enabled: Enabled::Controls,
        leaf: tree.root_children.is_empty(),
    });
    transitions.push(Vec::new());
    let mut first = vec![StateId::ROOT; tree.nodes.len()];
    let mut last = vec![StateId::ROOT; tree.nodes.len()];
    for (id, node) in tree.nodes.iter().enumerate() {
        let entries = &seqs[id].entries;
        let cut = entries
            .iter()
            .position(|e| absorbing.is_absorbing(e.labels))
            .map_or(entries.len(), |k| k + 1);
        let parent_state = node.parent.map_or(StateId::ROOT, |p| last[p]);
        let mut prev = (parent_state, Action::Control(node.control as u8));
        for (k, e) in entries[..cut].iter().enumerate() {
            let s = StateId::from_index(states.len());
            if k == 0 {
                first[id] = s;
            } else {
                states[prev.0.index()].enabled = Enabled::Nu;
                transitions[prev.0.index()].push(Transition {
                    action: Action::Nu,
                    successors: vec![(s, 1.0)],
                });
            }
            let end_of_chain = k + 1 == cut;
            states.push(MdpState {
                stage: node.stage,
                segment: Some(SubSegment {
                    arc: node.segment,
                    t_lo: e.t_lo,
                    t_hi: e.t_hi,
                }),
                radius: node.radius,
                cell: Some(node.cell),
                labels: e.labels,
                parent: Some(prev),
                enabled: Enabled::Controls,
                leaf: end_of_chain && node.children.is_empty(),
            });
            transitions.push(Vec::new());
            prev = (s, Action::Nu);
        }
        last[id] = prev.0;
    }
    let mut link = |from: StateId, kids: &[NodeId]| {
        for chunk in kids.chunks(n) {
            let u = tree.nodes[chunk[0]].control as u8;
            transitions[from.index()].push(Transition {
                action: Action::Control(u),
                successors: chunk.iter().map(|&c| (first[c], p)).collect(),
            });
        }
    };
    link(StateId::ROOT, &tree.root_children);
    for (id, node) in tree.nodes.iter().enumerate() {
        link(last[id], &node.children);
    }
    for (k, st) in states.iter_mut().enumerate() {
        if st.leaf {
            st.enabled = Enabled::Nu;
            transitions[k] = vec![Transition {
                action: Action::Nu,
                successors: vec![(StateId::from_index(k), 1.0)],
            }];
        }
    }
    TreeMdp {
        props: env.propositions().to_vec(),
        controls: tree.controls.inputs().to_vec(),
        noise_cells: n,
        states,
        transitions,
    }
}
