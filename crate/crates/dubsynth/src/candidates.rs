//! Relaxation candidates offered to the supervisor.

use dubsynth_core::pctl::{apply_update, direction, Direction, Threshold, UpdateKind};
use dubsynth_core::synthesis::solve_incremental;
use dubsynth_core::{ExtProp, Formula, Solution, StateId, TreeMdp, UpdateRule};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::scenario::check_guards;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// `r<revision>c<rank>`.
    pub id: String,
    pub rule: UpdateRule,
    pub direction: Direction,
    pub description: String,
    /// Formula after the edit.
    pub formula: String,
    pub lower: f64,
    pub upper: f64,
    /// Change of the lower bound.
    pub delta: f64,
}

/// Candidates computed against one session revision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub revision: u64,
    pub items: Vec<Candidate>,
}

pub fn candidate_id(revision: u64, rank: usize) -> String {
    format!("r{revision}c{rank}")
}

/// Revision encoded in a candidate id.
pub fn id_revision(id: &str) -> Option<u64> {
    id.strip_prefix('r')?.split_once('c')?.0.parse().ok()
}

/// The bounded pool of Increase-class edits: every constraint removal, the
/// bound lowered to half and to `>0`, and each unused proposition added as
/// a goal of its own. Edits that would drop an absorbing guard are left out.
pub fn pool(f: &Formula, props: &[String], absorbing: &[String]) -> Vec<UpdateRule> {
    let mut out = Vec::new();
    for (k, b) in f.blocks.iter().enumerate() {
        let block = k + 1;
        for index in 1..=b.phi.len() {
            out.push(UpdateKind::RemovePhiClause { block, index });
        }
        let mut lowered = Vec::new();
        if b.threshold.p > 0.0 {
            lowered.push(Threshold::new(b.threshold.p / 2.0, b.threshold.strict));
        }
        lowered.push(Threshold::POSITIVE);
        for t in lowered {
            if t.weaker_than(&b.threshold) && !out.contains(&UpdateKind::LowerThreshold { block, threshold: t }) {
                out.push(UpdateKind::LowerThreshold { block, threshold: t });
            }
        }
        for p in props {
            if absorbing.contains(p) {
                continue;
            }
            let used = b.psi.iter().any(|c| c.literals.contains(&ExtProp::pos(p.clone())));
            if used {
                continue;
            }
            let mut clause = vec![ExtProp::pos(p.clone())];
            clause.extend(absorbing.iter().map(|a| ExtProp::neg(a.clone())));
            out.push(UpdateKind::AddPsiClause { block, clause });
        }
    }
    out.into_iter()
        .map(|kind| UpdateRule::new(kind, 0))
        .filter(|r| {
            apply_update(f, r)
                .map(|g| check_guards(&g, absorbing).is_ok())
                .unwrap_or(false)
        })
        .collect()
}

/// Solves every pool edit at the root of `m` and returns those that do not
/// lower the bound, best first.
pub fn enumerate(
    m: &TreeMdp,
    f: &Formula,
    sol: &Solution,
    absorbing: &[String],
    revision: u64,
) -> Result<CandidateList, ServiceError> {
    let rules = pool(f, m.propositions(), absorbing);
    let solved: Vec<Result<(UpdateRule, Formula, f64, f64), ServiceError>> = rules
        .into_par_iter()
        .map(|rule| {
            let inc = solve_incremental(m, f, sol, StateId::ROOT, &rule)?;
            let (lo, hi) = inc.solution.bounds();
            Ok((rule, inc.formula, lo, hi))
        })
        .collect();
    let mut items = Vec::new();
    for r in solved {
        let (rule, formula, lower, upper) = r?;
        let delta = lower - sol.lower;
        if delta < 0.0 {
            continue;
        }
        items.push(Candidate {
            id: String::new(),
            direction: direction(&rule),
            description: rule.describe(f),
            formula: formula.to_string(),
            rule,
            lower,
            upper,
            delta,
        });
    }
    items.sort_by(|a, b| b.delta.total_cmp(&a.delta));
    for (rank, c) in items.iter_mut().enumerate() {
        c.id = candidate_id(revision, rank);
    }
    Ok(CandidateList { revision, items })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        assert_eq!(id_revision(&candidate_id(12, 3)), Some(12));
        assert_eq!(id_revision("keep"), None);
        assert_eq!(id_revision("rxc1"), None);
    }

    #[test]
    fn pool_shape() {
        let f = Formula::parse("Pmax=? [ P>=0.5 [ !u & !a U !u & b ] ]").unwrap();
        let props: Vec<String> = ["a", "b", "c", "u"].iter().map(|s| s.to_string()).collect();
        let u = vec!["u".to_string()];
        let rules: Vec<String> = pool(&f, &props, &u).iter().map(|r| r.to_string()).collect();
        assert_eq!(
            rules,
            [
                "remove-phi[1] #2 (after 0)",
                "lower[1] P>=0.25 (after 0)",
                "lower[1] P>0 (after 0)",
                "add-psi[1] a & !u (after 0)",
                "add-psi[1] c & !u (after 0)",
            ]
        );
        let bare = pool(&f, &props, &[]);
        assert_eq!(bare.len(), 7);
    }
}
