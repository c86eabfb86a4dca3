//! Maximal-probability synthesis for the until chain.
//!
//! Blocks are solved from last to first. For block `j` the states are split
//! into `yes` (goal reached with the rest of the chain still achievable),
//! `no` (left the safe set) and the rest, whose values come from a single
//! backward pass in reverse id order. Values below the block threshold are
//! zeroed, and the states with positive value become the entry condition of
//! block `j-1`'s goal.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Action, StateId, TreeMdp};
use crate::pctl::{apply_update, CompiledBlock, CompiledFormula, Formula, FormulaError, Threshold, UpdateError, UpdateRule};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub yes: Vec<bool>,
    pub no: Vec<bool>,
}

impl Partition {
    pub fn is_maybe(&self, s: StateId) -> bool {
        !self.yes[s.index()] && !self.no[s.index()]
    }
}

/// `yes = Sat(ψ) ∩ next_init`, `no = S ∖ (Sat(φ) ∪ yes)`. `next_init = None`
/// stands for all states (last block).
pub fn partition(m: &TreeMdp, block: &CompiledBlock, next_init: Option<&[bool]>) -> Partition {
    let mut yes = vec![false; m.len()];
    let mut no = vec![false; m.len()];
    for (k, st) in m.states().iter().enumerate() {
        yes[k] = block.psi_holds(st.labels) && next_init.map_or(true, |init| init[k]);
        no[k] = !yes[k] && !block.phi_holds(st.labels);
    }
    Partition { yes, no }
}

/// One backward pass: `V'(s)` is 1 on yes, 0 on no and on undecided leaves,
/// else the best expected successor value. Returns values and the maximizing
/// action per state (ties to the lowest action; `ν` at leaves).
pub fn backward_values(m: &TreeMdp, part: &Partition) -> (Vec<f64>, Vec<Action>) {
    let mut v = vec![0.0; m.len()];
    let mut mu = vec![Action::Nu; m.len()];
    for s in m.ids().rev() {
        let k = s.index();
        let st = m.state(s);
        if !st.leaf {
            let mut best = f64::NEG_INFINITY;
            for t in m.transitions(s) {
                let q: f64 = t.successors.iter().map(|&(c, p)| p * v[c.index()]).sum();
                if q > best {
                    best = q;
                    mu[k] = t.action;
                }
            }
            v[k] = best;
        }
        if part.yes[k] {
            v[k] = 1.0;
        } else if part.no[k] || st.leaf {
            v[k] = 0.0;
        }
    }
    (v, mu)
}

/// Zeroes values not admitted by `t`; returns the thresholded values and the
/// set of states with positive value.
pub fn threshold(vprime: &[f64], t: Threshold) -> (Vec<f64>, Vec<bool>) {
    let v: Vec<f64> = vprime
        .iter()
        .map(|&x| if t.admits(x) { x } else { 0.0 })
        .collect();
    let init = v.iter().map(|&x| x > 0.0).collect();
    (v, init)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSolution {
    pub threshold: Threshold,
    pub vprime: Vec<f64>,
    pub v: Vec<f64>,
    pub mu: Vec<Action>,
    pub yes: Vec<bool>,
    pub no: Vec<bool>,
    pub init: Vec<bool>,
}

impl BlockSolution {
    fn restricted(&self, map: &[StateId]) -> BlockSolution {
        let pick = |src: &[bool]| map.iter().map(|s| src[s.index()]).collect();
        BlockSolution {
            threshold: self.threshold,
            vprime: map.iter().map(|s| self.vprime[s.index()]).collect(),
            v: map.iter().map(|s| self.v[s.index()]).collect(),
            mu: map.iter().map(|s| self.mu[s.index()]).collect(),
            yes: pick(&self.yes),
            no: pick(&self.no),
            init: pick(&self.init),
        }
    }
}

/// Which goal states the probability bounds range over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundScope {
    /// Goal states reachable under the composed policy.
    #[default]
    Reachable,
    /// Every goal state of the previous block.
    AllYes,
}

/// Per-block values and policies plus bounds on the chain probability
/// from the root under the composed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub blocks: Vec<BlockSolution>,
    pub lower: f64,
    pub upper: f64,
    pub scope: BoundScope,
}

impl Solution {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Block `j`, 1-based.
    pub fn block(&self, j: usize) -> &BlockSolution {
        &self.blocks[j - 1]
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    /// Action of the composed policy at `s` while `satisfied` blocks are done.
    pub fn action(&self, satisfied: usize, s: StateId) -> Action {
        let b = satisfied.min(self.len() - 1);
        self.blocks[b].mu[s.index()]
    }

    /// Number of blocks satisfied after visiting `s` with `satisfied` done before.
    pub fn advance(&self, mut satisfied: usize, s: StateId) -> usize {
        while satisfied < self.len() && self.blocks[satisfied].yes[s.index()] {
            satisfied += 1;
        }
        satisfied
    }

    /// True if the chain can no longer be completed from `s`.
    pub fn failed(&self, satisfied: usize, s: StateId) -> bool {
        satisfied < self.len() && self.blocks[satisfied].no[s.index()]
    }

    /// Largest `i` such that the goal of block `i` was reached along `path`
    /// while blocks `1..i` were already satisfied.
    pub fn satisfied_up_to(&self, m: &TreeMdp, path: &[StateId]) -> Result<usize, SynthesisError> {
        if let Some(&first) = path.first() {
            if first != m.root() {
                return Err(SynthesisError::BadPath(0));
            }
        }
        for (k, w) in path.windows(2).enumerate() {
            if w[1].index() >= m.len() || m.state(w[1]).parent.map(|p| p.0) != Some(w[0]) {
                return Err(SynthesisError::BadPath(k + 1));
            }
        }
        Ok(path.iter().fold(0, |i, &s| self.advance(i, s)))
    }
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error("state {0} is not in the MDP")]
    UnknownState(StateId),
    #[error("path is not a root path of the MDP (position {0})")]
    BadPath(usize),
    #[error("previous solution has {got} blocks, formula has {want}")]
    Mismatch { got: usize, want: usize },
}

fn solve_block(m: &TreeMdp, block: &CompiledBlock, next_init: Option<&[bool]>) -> BlockSolution {
    let part = partition(m, block, next_init);
    let (vprime, mu) = backward_values(m, &part);
    let (v, init) = threshold(&vprime, block.threshold);
    BlockSolution {
        threshold: block.threshold,
        vprime,
        v,
        mu,
        yes: part.yes,
        no: part.no,
        init,
    }
}

/// Solves every block of `f`, last to first, and computes the bounds.
pub fn solve(m: &TreeMdp, f: &CompiledFormula, scope: BoundScope) -> Solution {
    let mut blocks: Vec<BlockSolution> = Vec::with_capacity(f.blocks.len());
    for block in f.blocks.iter().rev() {
        let next = blocks.last().map(|b| b.init.as_slice());
        let sol = solve_block(m, block, next);
        blocks.push(sol);
    }
    blocks.reverse();
    finish(m, blocks, scope)
}

fn finish(m: &TreeMdp, blocks: Vec<BlockSolution>, scope: BoundScope) -> Solution {
    let mut sol = Solution {
        blocks,
        lower: 0.0,
        upper: 0.0,
        scope,
    };
    let (lower, upper) = compute_bounds(m, &sol, scope);
    sol.lower = lower;
    sol.upper = upper;
    sol
}

/// Goal states of each block at which the composed policy hands over to
/// the next block, in id order. Entry `j-1` lists the goal states of block `j`.
pub fn handover_states(m: &TreeMdp, sol: &Solution) -> Vec<Vec<StateId>> {
    let f = sol.len();
    let mut entries = vec![Vec::new(); f];
    let mut stack = vec![(m.root(), 0usize)];
    while let Some((s, before)) = stack.pop() {
        let mut b = before;
        while b < f && sol.blocks[b].yes[s.index()] {
            entries[b].push(s);
            b += 1;
        }
        if b == f || sol.failed(b, s) || m.state(s).leaf {
            continue;
        }
        let a = sol.blocks[b].mu[s.index()];
        if let Some(next) = m.successors(s, a) {
            stack.extend(next.iter().map(|&(c, _)| (c, b)));
        }
    }
    for e in &mut entries {
        e.sort();
    }
    entries
}

/// `V_1(s_0) · Π_{j≥2} min/max V_j` over the goal states of block `j-1`.
pub fn compute_bounds(m: &TreeMdp, sol: &Solution, scope: BoundScope) -> (f64, f64) {
    let root = sol.blocks[0].v[m.root().index()];
    if root == 0.0 {
        return (0.0, 0.0);
    }
    let entries: Vec<Vec<StateId>> = match scope {
        BoundScope::Reachable => handover_states(m, sol),
        BoundScope::AllYes => sol
            .blocks
            .iter()
            .map(|b| m.ids().filter(|s| b.yes[s.index()]).collect())
            .collect(),
    };
    let (mut lower, mut upper) = (root, root);
    for j in 1..sol.len() {
        let vals = entries[j - 1].iter().map(|s| sol.blocks[j].v[s.index()]);
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        if lo > hi {
            return (0.0, 0.0);
        }
        lower *= lo;
        upper *= hi;
    }
    (lower, upper)
}

/// Bounds of the remaining chain at `s` once `satisfied` blocks are done,
/// read on the sub-MDP rooted at `s`.
pub fn bounds_at(m: &TreeMdp, sol: &Solution, s: StateId, satisfied: usize) -> Result<(f64, f64), SynthesisError> {
    if satisfied >= sol.len() {
        return Ok((1.0, 1.0));
    }
    let (pruned, map) = prune_from(m, s)?;
    let blocks = restrict(sol, &map, satisfied);
    Ok(finish(&pruned, blocks, sol.scope).bounds())
}

/// Sub-MDP rooted at `s`, with the old id of every new state.
pub fn prune_from(m: &TreeMdp, s: StateId) -> Result<(TreeMdp, Vec<StateId>), SynthesisError> {
    m.subtree(s).ok_or(SynthesisError::UnknownState(s))
}

/// Copies blocks `from..` (0-based) of `prev` onto a pruned MDP.
pub fn restrict(prev: &Solution, map: &[StateId], from: usize) -> Vec<BlockSolution> {
    prev.blocks[from..].iter().map(|b| b.restricted(map)).collect()
}

/// Result of re-solving after a formula update.
#[derive(Debug, Clone)]
pub struct Incremental {
    /// The sub-MDP rooted at the current state.
    pub mdp: TreeMdp,
    /// Old id of every state of `mdp`.
    pub map: Vec<StateId>,
    pub formula: Formula,
    pub solution: Solution,
}

/// Applies `rule` to `f` at state `s_c`, reusing the untouched tail of `prev`.
///
/// Blocks after the edited one keep their values on the surviving states;
/// the edited block and the ones before it, down to the first unsatisfied
/// one, are solved again on the pruned MDP.
pub fn solve_incremental(
    m: &TreeMdp,
    f: &Formula,
    prev: &Solution,
    s_c: StateId,
    rule: &UpdateRule,
) -> Result<Incremental, SynthesisError> {
    if prev.len() != f.len() {
        return Err(SynthesisError::Mismatch {
            got: prev.len(),
            want: f.len(),
        });
    }
    let updated = apply_update(f, rule)?;
    let compiled = updated.compile(m.propositions())?;
    let (pruned, map) = prune_from(m, s_c)?;
    let i = rule.satisfied_up_to;
    let j = rule.kind.block();
    let mut tail = restrict(prev, &map, j);
    let mut head: Vec<BlockSolution> = Vec::with_capacity(j - i);
    for k in (0..j - i).rev() {
        let next = head.last().or(tail.first()).map(|b| b.init.as_slice());
        let sol = solve_block(&pruned, &compiled.blocks[k], next);
        head.push(sol);
    }
    head.reverse();
    head.append(&mut tail);
    let solution = finish(&pruned, head, prev.scope);
    Ok(Incremental {
        mdp: pruned,
        map,
        formula: updated,
        solution,
    })
}
