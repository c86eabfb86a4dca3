use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Clause, ClauseKind, Diagnostic, Formula, Threshold};
use crate::environment::ExtProp;

/// One of the six monotone edits. Block and clause indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateKind {
    AddPsiClause { block: usize, clause: Vec<ExtProp> },
    RemovePsiClause { block: usize, index: usize },
    RemovePhiClause { block: usize, index: usize },
    AddPhiClause { block: usize, clause: Vec<ExtProp> },
    LowerThreshold { block: usize, threshold: Threshold },
    RaiseThreshold { block: usize, threshold: Threshold },
}

impl UpdateKind {
    pub fn block(&self) -> usize {
        match self {
            UpdateKind::AddPsiClause { block, .. }
            | UpdateKind::RemovePsiClause { block, .. }
            | UpdateKind::RemovePhiClause { block, .. }
            | UpdateKind::AddPhiClause { block, .. }
            | UpdateKind::LowerThreshold { block, .. }
            | UpdateKind::RaiseThreshold { block, .. } => *block,
        }
    }

    /// Rule number 1 to 6.
    pub fn number(&self) -> u8 {
        match self {
            UpdateKind::AddPsiClause { .. } => 1,
            UpdateKind::RemovePsiClause { .. } => 2,
            UpdateKind::RemovePhiClause { .. } => 3,
            UpdateKind::AddPhiClause { .. } => 4,
            UpdateKind::LowerThreshold { .. } => 5,
            UpdateKind::RaiseThreshold { .. } => 6,
        }
    }
}

/// An edit applied after the first `satisfied_up_to` blocks have been met.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRule {
    #[serde(flatten)]
    pub kind: UpdateKind,
    #[serde(default)]
    pub satisfied_up_to: usize,
}

impl UpdateRule {
    pub fn new(kind: UpdateKind, satisfied_up_to: usize) -> Self {
        UpdateRule {
            kind,
            satisfied_up_to,
        }
    }

    /// Human-readable summary against the formula the rule targets.
    pub fn describe(&self, f: &Formula) -> String {
        let lits = |c: &[ExtProp], op: &str| {
            c.iter()
                .map(|l| format!("{l}"))
                .collect::<Vec<_>>()
                .join(op)
        };
        let clause = |side: &str, j: usize, m: usize| {
            f.block(j)
                .and_then(|b| if side == "phi" { b.phi.get(m.wrapping_sub(1)) } else { b.psi.get(m.wrapping_sub(1)) })
                .map(|c| format!("{c}"))
                .unwrap_or_else(|| "?".into())
        };
        let old = |j: usize| f.block(j).map(|b| format!("{}", b.threshold)).unwrap_or_default();
        match &self.kind {
            UpdateKind::AddPsiClause { block, clause: c } => {
                format!("block {block}: also accept `{}` as the goal", lits(c, " & "))
            }
            UpdateKind::RemovePsiClause { block, index } => {
                format!("block {block}: no longer accept `{}` as the goal", clause("psi", *block, *index))
            }
            UpdateKind::RemovePhiClause { block, index } => {
                format!("block {block}: drop the constraint `{}`", clause("phi", *block, *index))
            }
            UpdateKind::AddPhiClause { block, clause: c } => {
                format!("block {block}: add the constraint `{}`", lits(c, " | "))
            }
            UpdateKind::LowerThreshold { block, threshold } => {
                format!("block {block}: lower the bound from {} to {threshold}", old(*block))
            }
            UpdateKind::RaiseThreshold { block, threshold } => {
                format!("block {block}: raise the bound from {} to {threshold}", old(*block))
            }
        }
    }
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, detail) = match &self.kind {
            UpdateKind::AddPsiClause { clause, .. } => ("add-psi", format!("{}", Clause::conjunction(clause.iter().cloned()))),
            UpdateKind::RemovePsiClause { index, .. } => ("remove-psi", format!("#{index}")),
            UpdateKind::RemovePhiClause { index, .. } => ("remove-phi", format!("#{index}")),
            UpdateKind::AddPhiClause { clause, .. } => ("add-phi", format!("{}", Clause::disjunction(clause.iter().cloned()))),
            UpdateKind::LowerThreshold { threshold, .. } => ("lower", format!("{threshold}")),
            UpdateKind::RaiseThreshold { threshold, .. } => ("raise", format!("{threshold}")),
        };
        write!(
            f,
            "{name}[{}] {detail} (after {})",
            self.kind.block(),
            self.satisfied_up_to
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Values can only grow.
    Increase,
    /// Values can only shrink.
    Decrease,
}

pub fn direction(rule: &UpdateRule) -> Direction {
    match rule.kind {
        UpdateKind::AddPsiClause { .. }
        | UpdateKind::RemovePhiClause { .. }
        | UpdateKind::LowerThreshold { .. } => Direction::Increase,
        UpdateKind::RemovePsiClause { .. }
        | UpdateKind::AddPhiClause { .. }
        | UpdateKind::RaiseThreshold { .. } => Direction::Decrease,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UpdateError {
    #[error("block {block} is out of range for satisfied-up-to {satisfied} and {blocks} blocks")]
    BlockRange {
        block: usize,
        satisfied: usize,
        blocks: usize,
    },
    #[error("clause index {index} out of range (block has {len})")]
    ClauseRange { index: usize, len: usize },
    #[error("removing the only psi clause would leave an unsatisfiable goal (need at least two clauses)")]
    LastPsiClause,
    #[error("clause is empty")]
    EmptyClause,
    #[error("clause already present")]
    DuplicateClause,
    #[error("new threshold {new} is not {dir} than the current {old}")]
    ThresholdDirection {
        new: Threshold,
        old: Threshold,
        dir: &'static str,
    },
    #[error("updated formula is invalid: {0:?}")]
    Invalid(Vec<Diagnostic>),
}

/// Strips the satisfied prefix and applies the edit. The edited block is
/// `rule.kind.block()` in the numbering of the input formula.
pub fn apply_update(f: &Formula, rule: &UpdateRule) -> Result<Formula, UpdateError> {
    let i = rule.satisfied_up_to;
    let j = rule.kind.block();
    if !(i < j && j <= f.len()) {
        return Err(UpdateError::BlockRange {
            block: j,
            satisfied: i,
            blocks: f.len(),
        });
    }
    let mut out = Formula {
        blocks: f.blocks[i..].to_vec(),
    };
    let b = &mut out.blocks[j - i - 1];
    let range = |index: usize, len: usize| {
        if index == 0 || index > len {
            Err(UpdateError::ClauseRange { index, len })
        } else {
            Ok(index - 1)
        }
    };
    let add = |clauses: &mut Vec<Clause>, lits: &[ExtProp], kind: ClauseKind| {
        if lits.is_empty() {
            return Err(UpdateError::EmptyClause);
        }
        let c = Clause {
            kind,
            literals: lits.to_vec(),
        };
        if clauses.iter().any(|o| o.same_literals(&c)) {
            return Err(UpdateError::DuplicateClause);
        }
        clauses.push(c);
        Ok(())
    };
    match &rule.kind {
        UpdateKind::AddPsiClause { clause, .. } => add(&mut b.psi, clause, ClauseKind::Conjunction)?,
        UpdateKind::AddPhiClause { clause, .. } => add(&mut b.phi, clause, ClauseKind::Disjunction)?,
        UpdateKind::RemovePsiClause { index, .. } => {
            let k = range(*index, b.psi.len())?;
            if b.psi.len() < 2 {
                return Err(UpdateError::LastPsiClause);
            }
            b.psi.remove(k);
        }
        UpdateKind::RemovePhiClause { index, .. } => {
            let k = range(*index, b.phi.len())?;
            b.phi.remove(k);
        }
        UpdateKind::LowerThreshold { threshold, .. } => {
            let t = Threshold::new(threshold.p, threshold.strict);
            if !t.weaker_than(&b.threshold) {
                return Err(UpdateError::ThresholdDirection {
                    new: t,
                    old: b.threshold,
                    dir: "lower",
                });
            }
            b.threshold = t;
        }
        UpdateKind::RaiseThreshold { threshold, .. } => {
            let t = Threshold::new(threshold.p, threshold.strict);
            if !b.threshold.weaker_than(&t) {
                return Err(UpdateError::ThresholdDirection {
                    new: t,
                    old: b.threshold,
                    dir: "higher",
                });
            }
            b.threshold = t;
        }
    }
    out.validate(None).map_err(UpdateError::Invalid)?;
    Ok(out)
}
