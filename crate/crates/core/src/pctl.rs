//! The nested probabilistic-until fragment.
//!
//! A [`Formula`] is a chain of blocks `(φ_j, ψ_j, p_j)` read as
//!
//! ```text
//! Pmax=? [ P>=p1 [ φ1 U (ψ1 & P>=p2 [ φ2 U (ψ2 & ...) ]) ] ]
//! ```
//!
//! with `φ_j` in CNF and `ψ_j` in DNF over extended propositions. Text is
//! parsed by [`Formula::parse`] and printed canonically by `Display`; the two
//! are inverse to each other.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{pos_translate, EnvError, ExtProp, LabelSet, Literal};

mod parse;
mod update;

pub use parse::parse_expr;
pub use update::{apply_update, direction, Direction, UpdateError, UpdateKind, UpdateRule};

/// Probability bound `>= p` or, when `strict`, `> p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub p: f64,
    pub strict: bool,
}

impl Threshold {
    /// `P>0`, the weakest satisfiable bound.
    pub const POSITIVE: Threshold = Threshold {
        p: 0.0,
        strict: true,
    };

    /// Builds a threshold, reading `>= 0` as `> 0`.
    pub fn new(p: f64, strict: bool) -> Self {
        Threshold {
            p,
            strict: strict || p == 0.0,
        }
    }

    pub fn admits(&self, v: f64) -> bool {
        if self.strict {
            v > self.p
        } else {
            v >= self.p
        }
    }

    /// True if every value admitted by `other` is admitted by `self` and
    /// the two differ.
    pub fn weaker_than(&self, other: &Threshold) -> bool {
        self.p < other.p || (self.p == other.p && !self.strict && other.strict)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cmp = if self.strict { ">" } else { ">=" };
        write!(f, "P{}{}", cmp, self.p)
    }
}

/// Untyped formula tree produced by the parser.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    True,
    Prop(String),
    Lit(ExtProp),
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Prob {
        threshold: Threshold,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, items: &[Expr], op: &str| {
            f.write_str("(")?;
            for (k, e) in items.iter().enumerate() {
                if k > 0 {
                    f.write_str(op)?;
                }
                write!(f, "{e}")?;
            }
            f.write_str(")")
        };
        match self {
            Expr::True => f.write_str("true"),
            Expr::Prop(n) => f.write_str(n),
            Expr::Lit(e) => write!(f, "{e}"),
            Expr::Not(e) => write!(f, "!{e}"),
            Expr::And(items) => join(f, items, " & "),
            Expr::Or(items) => join(f, items, " | "),
            Expr::Prob {
                threshold,
                lhs,
                rhs,
            } => write!(f, "{threshold} [ {lhs} U {rhs} ]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClauseKind {
    /// `ψ` clause: all literals must hold.
    Conjunction,
    /// `φ` clause: some literal must hold.
    Disjunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub kind: ClauseKind,
    pub literals: Vec<ExtProp>,
}

impl Clause {
    pub fn conjunction(literals: impl IntoIterator<Item = ExtProp>) -> Self {
        Clause {
            kind: ClauseKind::Conjunction,
            literals: literals.into_iter().collect(),
        }
    }

    pub fn disjunction(literals: impl IntoIterator<Item = ExtProp>) -> Self {
        Clause {
            kind: ClauseKind::Disjunction,
            literals: literals.into_iter().collect(),
        }
    }

    /// Equality of literal sets, ignoring order.
    pub fn same_literals(&self, other: &Clause) -> bool {
        self.literals.len() == other.literals.len()
            && self.literals.iter().all(|l| other.literals.contains(l))
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, bracket: bool) -> fmt::Result {
        let op = match self.kind {
            ClauseKind::Conjunction => " & ",
            ClauseKind::Disjunction => " | ",
        };
        let paren = bracket && self.literals.len() > 1;
        if paren {
            f.write_str("(")?;
        }
        for (k, l) in self.literals.iter().enumerate() {
            if k > 0 {
                f.write_str(op)?;
            }
            write!(f, "{l}")?;
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// CNF; empty means `true`.
    pub phi: Vec<Clause>,
    /// DNF; never empty.
    pub psi: Vec<Clause>,
    pub threshold: Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Formula {
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormulaError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("outside the fragment: {message} in `{node}`")]
    Fragment { node: String, message: &'static str },
    #[error(transparent)]
    Negation(#[from] EnvError),
    #[error("invalid formula: {}", join_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

fn join_diagnostics(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| format!("{d}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// One validation finding, located by 1-based block index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub block: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block {}: {}", self.block, self.message)
    }
}

impl Formula {
    /// Parses and converts to the block form. Does not check proposition names.
    pub fn parse(text: &str) -> Result<Formula, FormulaError> {
        let expr = parse_expr(text)?;
        let expr = pos_translate(&expr)?;
        let f = Formula::from_expr(&expr)?;
        f.validate(None).map_err(FormulaError::Invalid)?;
        Ok(f)
    }

    /// Converts a negation-free expression `P~p [ lhs U rhs ]` into blocks.
    pub fn from_expr(expr: &Expr) -> Result<Formula, FormulaError> {
        let mut blocks = Vec::new();
        let mut cur = expr;
        loop {
            let Expr::Prob {
                threshold,
                lhs,
                rhs,
            } = cur
            else {
                return Err(fragment(cur, "expected a probabilistic until"));
            };
            let phi = cnf(lhs)?;
            let (psi, next) = dnf_and_next(rhs)?;
            blocks.push(Block {
                phi,
                psi,
                threshold: *threshold,
            });
            match next {
                Some(n) => cur = n,
                None => break,
            }
        }
        Ok(Formula { blocks })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// The chain left after the first `i` blocks are satisfied.
    pub fn suffix(&self, i: usize) -> Formula {
        Formula {
            blocks: self.blocks[i.min(self.blocks.len())..].to_vec(),
        }
    }

    /// Block `j`, 1-based.
    pub fn block(&self, j: usize) -> Option<&Block> {
        j.checked_sub(1).and_then(|k| self.blocks.get(k))
    }

    /// Proposition names used anywhere, sorted and deduplicated.
    pub fn propositions(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .blocks
            .iter()
            .flat_map(|b| b.phi.iter().chain(&b.psi))
            .flat_map(|c| c.literals.iter().map(|l| l.base.clone()))
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Checks the fragment's shape constraints, and proposition names when
    /// an alphabet is given. Returns every violation found.
    pub fn validate(&self, props: Option<&[String]>) -> Result<(), Vec<Diagnostic>> {
        let mut out = Vec::new();
        if self.blocks.is_empty() {
            out.push(Diagnostic {
                block: 0,
                message: "formula has no blocks".into(),
            });
        }
        for (k, b) in self.blocks.iter().enumerate() {
            let mut diag = |message: String| {
                out.push(Diagnostic {
                    block: k + 1,
                    message,
                })
            };
            let t = b.threshold;
            if !(t.p.is_finite() && (0.0..=1.0).contains(&t.p)) {
                diag(format!("threshold {} outside [0, 1]", t.p));
            } else if t.strict && t.p == 1.0 {
                diag("threshold P>1 is unsatisfiable".into());
            }
            if b.psi.is_empty() {
                diag("psi is empty (an empty disjunction is unsatisfiable)".into());
            }
            for (side, clauses, kind) in [
                ("phi", &b.phi, ClauseKind::Disjunction),
                ("psi", &b.psi, ClauseKind::Conjunction),
            ] {
                for (m, c) in clauses.iter().enumerate() {
                    let at = format!("{side} clause {}", m + 1);
                    if c.kind != kind {
                        diag(format!("{at}: wrong clause kind"));
                    }
                    if c.literals.is_empty() {
                        diag(format!("{at}: empty clause"));
                    }
                    for (x, l) in c.literals.iter().enumerate() {
                        if c.literals[..x].contains(l) {
                            diag(format!("{at}: duplicate literal {l}"));
                        }
                        if l.positive && c.literals.contains(&l.negated()) {
                            let what = match kind {
                                ClauseKind::Conjunction => "unsatisfiable",
                                ClauseKind::Disjunction => "a tautology",
                            };
                            diag(format!("{at}: both polarities of {} make it {what}", l.base));
                        }
                        if let Some(props) = props {
                            if !props.iter().any(|p| *p == l.base) {
                                diag(format!("{at}: unknown proposition {}", l.base));
                            }
                        }
                    }
                    if clauses[..m].iter().any(|o| o.same_literals(c)) {
                        diag(format!("{at}: duplicate clause"));
                    }
                }
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Resolves literals against an alphabet into bit masks.
    pub fn compile(&self, props: &[String]) -> Result<CompiledFormula, FormulaError> {
        self.validate(Some(props)).map_err(FormulaError::Invalid)?;
        let lit = |e: &ExtProp| {
            let prop = props.iter().position(|p| *p == e.base).unwrap_or(0);
            Literal {
                prop,
                positive: e.positive,
            }
            .bit()
        };
        let mask = |c: &Clause| c.literals.iter().fold(0u64, |m, l| m | lit(l));
        Ok(CompiledFormula {
            blocks: self
                .blocks
                .iter()
                .map(|b| CompiledBlock {
                    phi: b.phi.iter().map(mask).collect(),
                    psi: b.psi.iter().map(mask).collect(),
                    threshold: b.threshold,
                })
                .collect(),
        })
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Pmax=? [ ")?;
        for (k, b) in self.blocks.iter().enumerate() {
            write!(f, "{} [ ", b.threshold)?;
            if b.phi.is_empty() {
                f.write_str("true")?;
            }
            for (m, c) in b.phi.iter().enumerate() {
                if m > 0 {
                    f.write_str(" & ")?;
                }
                c.write(f, true)?;
            }
            f.write_str(" U ")?;
            let has_next = k + 1 < self.blocks.len();
            let wrap = has_next && b.psi.len() > 1;
            if wrap {
                f.write_str("(")?;
            }
            for (m, c) in b.psi.iter().enumerate() {
                if m > 0 {
                    f.write_str(" | ")?;
                }
                c.write(f, b.psi.len() > 1)?;
            }
            if wrap {
                f.write_str(")")?;
            }
            if has_next {
                f.write_str(" & ")?;
            }
        }
        for _ in &self.blocks {
            f.write_str(" ]")?;
        }
        f.write_str(" ]")
    }
}

fn fragment(node: &Expr, message: &'static str) -> FormulaError {
    FormulaError::Fragment {
        node: format!("{node}"),
        message,
    }
}

fn flatten<'a>(e: &'a Expr, and: bool, out: &mut Vec<&'a Expr>) {
    match e {
        Expr::And(items) if and => items.iter().for_each(|i| flatten(i, and, out)),
        Expr::Or(items) if !and => items.iter().for_each(|i| flatten(i, and, out)),
        other => out.push(other),
    }
}

fn literal(e: &Expr) -> Option<ExtProp> {
    match e {
        Expr::Lit(l) => Some(l.clone()),
        _ => None,
    }
}

fn cnf(e: &Expr) -> Result<Vec<Clause>, FormulaError> {
    let mut conjuncts = Vec::new();
    flatten(e, true, &mut conjuncts);
    let mut clauses = Vec::new();
    for c in conjuncts {
        match c {
            Expr::True => {}
            Expr::Lit(l) => clauses.push(Clause::disjunction([l.clone()])),
            Expr::Or(_) => {
                let mut items = Vec::new();
                flatten(c, false, &mut items);
                let lits = items
                    .iter()
                    .map(|i| literal(i).ok_or_else(|| fragment(c, "phi clause must be a disjunction of literals")))
                    .collect::<Result<Vec<_>, _>>()?;
                clauses.push(Clause::disjunction(lits));
            }
            Expr::Prob { .. } => return Err(fragment(c, "nested until on the left of U")),
            _ => return Err(fragment(c, "phi must be in CNF")),
        }
    }
    Ok(clauses)
}

fn dnf_and_next(e: &Expr) -> Result<(Vec<Clause>, Option<&Expr>), FormulaError> {
    let mut conjuncts = Vec::new();
    flatten(e, true, &mut conjuncts);
    let mut next = None;
    let mut rest = Vec::new();
    for c in conjuncts {
        if let Expr::Prob { .. } = c {
            if next.replace(c).is_some() {
                return Err(fragment(e, "more than one nested until"));
            }
        } else {
            rest.push(c);
        }
    }
    if rest.is_empty() {
        return Err(fragment(e, "psi is empty"));
    }
    if rest.iter().all(|c| matches!(c, Expr::Lit(_))) {
        let lits = rest.iter().filter_map(|c| literal(c));
        return Ok((Vec::from([Clause::conjunction(lits)]), next));
    }
    let [Expr::Or(_)] = rest.as_slice() else {
        return Err(fragment(e, "psi must be in DNF"));
    };
    let mut disjuncts = Vec::new();
    flatten(rest[0], false, &mut disjuncts);
    let mut clauses = Vec::new();
    for d in disjuncts {
        let mut lits = Vec::new();
        flatten(d, true, &mut lits);
        let lits = lits
            .iter()
            .map(|l| match l {
                Expr::Prob { .. } => Err(fragment(d, "nested until inside a disjunction")),
                _ => literal(l).ok_or_else(|| fragment(d, "psi clause must be a conjunction of literals")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        clauses.push(Clause::conjunction(lits));
    }
    Ok((clauses, next))
}

/// A block resolved to label masks.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledBlock {
    /// One mask per disjunction clause; satisfied when it meets the label set.
    pub phi: Vec<u64>,
    /// One mask per conjunction clause; satisfied when contained in the label set.
    pub psi: Vec<u64>,
    pub threshold: Threshold,
}

impl CompiledBlock {
    pub fn phi_holds(&self, labels: LabelSet) -> bool {
        self.phi.iter().all(|m| labels.0 & m != 0)
    }

    pub fn psi_holds(&self, labels: LabelSet) -> bool {
        self.psi.iter().any(|m| labels.0 & m == *m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledFormula {
    pub blocks: Vec<CompiledBlock>,
}
