//! Region maps and labelling.
//!
//! Every proposition `π` is interpreted as a union of convex polygons. The
//! labelling works over the doubled alphabet: `ξ_π` holds on `[π]` and `ξ_¬π`
//! on its complement, so a formula in negation normal form can be rewritten
//! without negation (see [`pos_translate`]).
//!
//! An uncertainty disc is labelled conservatively: `ξ_π` only if the whole
//! disc lies in one polygon of `π`, `ξ_¬π` only if the disc misses every
//! polygon of `π`. A disc straddling a boundary gets neither.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pctl::Expr;
use crate::vehicle::{ArcSegment, SAMPLES_PER_STAGE};

/// Maximum number of propositions; labels are packed two bits per proposition.
pub const MAX_PROPOSITIONS: usize = 32;

/// Resolution of the bisection that locates label changes along an arc (s).
pub const EVENT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("bounds must satisfy xmin < xmax and ymin < ymax")]
    BadBounds,
    #[error("region `{name}` polygon {index}: {reason}")]
    BadPolygon {
        name: String,
        index: usize,
        reason: &'static str,
    },
    #[error("too many propositions ({0}, at most {MAX_PROPOSITIONS})")]
    TooManyPropositions(usize),
    #[error("proposition name `{0}` is not a valid identifier")]
    BadName(String),
    #[error("formula is not in negation normal form: negation applied to `{0}`")]
    NotNnf(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }
}

/// Axis-aligned rectangle `[xmin, xmax] × [ymin, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        self.xmin <= p.x && p.x <= self.xmax && self.ymin <= p.y && p.y <= self.ymax
    }

    fn outside_by_more_than(&self, p: Point, r: f64) -> bool {
        p.x < self.xmin - r || p.x > self.xmax + r || p.y < self.ymin - r || p.y > self.ymax + r
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point>,
    bbox: Rect,
}

impl ConvexPolygon {
    fn new(mut vertices: Vec<Point>) -> Result<Self, &'static str> {
        if vertices.len() < 3 {
            return Err("needs at least three vertices");
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err("non-finite vertex");
        }
        let area2: f64 = (0..vertices.len())
            .map(|i| {
                let a = vertices[i];
                let b = vertices[(i + 1) % vertices.len()];
                a.x * b.y - b.x * a.y
            })
            .sum();
        if libm::fabs(area2) <= 1e-12 {
            return Err("degenerate (zero area)");
        }
        if area2 < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
            if cross < -1e-12 {
                return Err("not convex");
            }
        }
        let bbox = vertices.iter().fold(
            Rect {
                xmin: f64::INFINITY,
                ymin: f64::INFINITY,
                xmax: f64::NEG_INFINITY,
                ymax: f64::NEG_INFINITY,
            },
            |r, v| Rect {
                xmin: r.xmin.min(v.x),
                ymin: r.ymin.min(v.y),
                xmax: r.xmax.max(v.x),
                ymax: r.ymax.max(v.y),
            },
        );
        Ok(ConvexPolygon { vertices, bbox })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Smallest signed distance from `p` to the edge lines, positive inside.
    pub fn inner_distance(&self, p: Point) -> f64 {
        self.edges()
            .map(|(a, b)| {
                let (ex, ey) = (b.x - a.x, b.y - a.y);
                ((p.y - a.y) * ex - (p.x - a.x) * ey) / libm::hypot(ex, ey)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: Point) -> bool {
        self.bbox.contains(p) && self.inner_distance(p) >= 0.0
    }

    /// Euclidean distance from `p` to the polygon, zero inside.
    pub fn distance(&self, p: Point) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        self.edges()
            .map(|(a, b)| segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    fn contains_disc(&self, c: Point, r: f64) -> bool {
        !self.bbox.outside_by_more_than(c, 0.0) && self.inner_distance(c) >= r
    }

    fn misses_disc(&self, c: Point, r: f64) -> bool {
        self.bbox.outside_by_more_than(c, r) || self.distance(c) > r
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (ex, ey) = (b.x - a.x, b.y - a.y);
    let len2 = ex * ex + ey * ey;
    let t = (((p.x - a.x) * ex + (p.y - a.y) * ey) / len2).clamp(0.0, 1.0);
    p.distance(&Point::new(a.x + t * ex, a.y + t * ey))
}

/// Element of the doubled alphabet: `ξ_π` (positive) or `ξ_¬π` (negative).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExtProp {
    pub base: String,
    pub positive: bool,
}

impl ExtProp {
    pub fn pos(base: impl Into<String>) -> Self {
        ExtProp {
            base: base.into(),
            positive: true,
        }
    }

    pub fn neg(base: impl Into<String>) -> Self {
        ExtProp {
            base: base.into(),
            positive: false,
        }
    }

    pub fn negated(&self) -> Self {
        ExtProp {
            base: self.base.clone(),
            positive: !self.positive,
        }
    }
}

impl fmt::Display for ExtProp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.positive {
            write!(f, "{}", self.base)
        } else {
            write!(f, "!{}", self.base)
        }
    }
}

/// An [`ExtProp`] resolved against an alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub prop: usize,
    pub positive: bool,
}

impl Literal {
    pub fn bit(&self) -> u64 {
        1u64 << (2 * self.prop + usize::from(!self.positive))
    }
}

/// Set of [`Literal`]s over an alphabet of at most 32 propositions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(pub u64);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);

    pub fn insert(&mut self, lit: Literal) {
        self.0 |= lit.bit();
    }

    pub fn contains(&self, lit: Literal) -> bool {
        self.0 & lit.bit() != 0
    }

    pub fn is_subset(&self, other: &LabelSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn literals(&self) -> impl Iterator<Item = Literal> + '_ {
        (0..64usize)
            .filter(move |b| self.0 & (1u64 << b) != 0)
            .map(|b| Literal {
                prop: b / 2,
                positive: b % 2 == 0,
            })
    }

    /// True if some proposition carries both polarities.
    pub fn is_contradictory(&self) -> bool {
        let pos = self.0 & 0x5555_5555_5555_5555;
        let neg = (self.0 >> 1) & 0x5555_5555_5555_5555;
        pos & neg != 0
    }

    pub fn names(&self, props: &[String]) -> Vec<String> {
        self.literals()
            .map(|l| {
                if l.positive {
                    props[l.prop].clone()
                } else {
                    format!("!{}", props[l.prop])
                }
            })
            .collect()
    }

    /// Positive propositions only, by name.
    pub fn positive_names(&self, props: &[String]) -> Vec<String> {
        self.literals()
            .filter(|l| l.positive)
            .map(|l| props[l.prop].clone())
            .collect()
    }
}

/// Serialized form of an [`Environment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    /// `[xmin, ymin, xmax, ymax]`.
    pub bounds: [f64; 4],
    /// Proposition name to polygon vertex lists.
    pub regions: BTreeMap<String, Vec<Vec<[f64; 2]>>>,
}

/// Static environment: bounds plus the interpretation of every proposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    bounds: Rect,
    names: Vec<String>,
    regions: Vec<Vec<ConvexPolygon>>,
}

pub(crate) fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !matches!(name, "U" | "P" | "true" | "Pmax")
}

impl Environment {
    pub fn from_spec(spec: &EnvironmentSpec) -> Result<Self, EnvError> {
        let [xmin, ymin, xmax, ymax] = spec.bounds;
        if !(xmin < xmax && ymin < ymax) {
            return Err(EnvError::BadBounds);
        }
        let bounds = Rect {
            xmin,
            ymin,
            xmax,
            ymax,
        };
        if spec.regions.len() > MAX_PROPOSITIONS {
            return Err(EnvError::TooManyPropositions(spec.regions.len()));
        }
        let mut names = Vec::new();
        let mut regions = Vec::new();
        for (name, polys) in &spec.regions {
            if !is_identifier(name) {
                return Err(EnvError::BadName(name.clone()));
            }
            let mut converted = Vec::new();
            for (index, verts) in polys.iter().enumerate() {
                let bad = |reason| EnvError::BadPolygon {
                    name: name.clone(),
                    index,
                    reason,
                };
                let pts: Vec<Point> = verts.iter().map(|v| Point::new(v[0], v[1])).collect();
                let poly = ConvexPolygon::new(pts).map_err(bad)?;
                if poly.vertices.iter().any(|v| !bounds.contains(*v)) {
                    return Err(bad("vertex outside the environment bounds"));
                }
                converted.push(poly);
            }
            names.push(name.clone());
            regions.push(converted);
        }
        Ok(Environment {
            bounds,
            names,
            regions,
        })
    }

    pub fn to_spec(&self) -> EnvironmentSpec {
        EnvironmentSpec {
            bounds: [
                self.bounds.xmin,
                self.bounds.ymin,
                self.bounds.xmax,
                self.bounds.ymax,
            ],
            regions: self
                .names
                .iter()
                .zip(&self.regions)
                .map(|(n, polys)| {
                    let lists = polys
                        .iter()
                        .map(|p| p.vertices.iter().map(|v| [v.x, v.y]).collect())
                        .collect();
                    (n.clone(), lists)
                })
                .collect(),
        }
    }

    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    /// Proposition names, in alphabet order.
    pub fn propositions(&self) -> &[String] {
        &self.names
    }

    pub fn polygons(&self, prop: usize) -> &[ConvexPolygon] {
        &self.regions[prop]
    }

    pub fn prop_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn resolve(&self, e: &ExtProp) -> Option<Literal> {
        self.prop_index(&e.base).map(|prop| Literal {
            prop,
            positive: e.positive,
        })
    }

    /// Point membership in `[ξ]`. Points outside the bounds lie in no region,
    /// so every negative literal holds there.
    pub fn holds(&self, lit: Literal, p: Point) -> bool {
        let inside = self.regions[lit.prop].iter().any(|poly| poly.contains(p));
        inside == lit.positive
    }

    /// Total labelling of a single point: exactly one polarity per proposition.
    pub fn label_point(&self, p: Point) -> LabelSet {
        self.label_disc(p, 0.0)
    }

    /// Literals that hold at every point of the closed disc `D(center, r)`.
    pub fn label_disc(&self, center: Point, r: f64) -> LabelSet {
        let mut set = LabelSet::EMPTY;
        for (prop, polys) in self.regions.iter().enumerate() {
            let mut clear = true;
            let mut inside = false;
            for poly in polys {
                if poly.contains_disc(center, r) {
                    inside = true;
                    clear = false;
                    break;
                }
                if clear && !poly.misses_disc(center, r) {
                    clear = false;
                }
            }
            if inside {
                set.insert(Literal {
                    prop,
                    positive: true,
                });
            } else if clear {
                set.insert(Literal {
                    prop,
                    positive: false,
                });
            }
        }
        set
    }

    /// Splits an arc into maximal runs of constant disc label.
    pub fn trace_labels(&self, seg: &ArcSegment, r: f64) -> LabelSeq {
        let label_at = |t: f64| self.label_disc(seg.position_at(t), r);
        let dt = seg.dt;
        let mut entries = Vec::new();
        let mut current = label_at(0.0);
        let mut start = 0.0;
        let mut prev_t = 0.0;
        for k in 1..=SAMPLES_PER_STAGE {
            let t = if k == SAMPLES_PER_STAGE {
                dt
            } else {
                dt * k as f64 / SAMPLES_PER_STAGE as f64
            };
            let next = label_at(t);
            if next != current {
                let mut changes = Vec::new();
                refine_change(&label_at, prev_t, current, t, next, &mut changes);
                for (tc, labels) in changes {
                    entries.push(LabelSpan {
                        labels: current,
                        t_lo: start,
                        t_hi: tc,
                    });
                    current = labels;
                    start = tc;
                }
            }
            prev_t = t;
        }
        entries.push(LabelSpan {
            labels: current,
            t_lo: start,
            t_hi: dt,
        });
        LabelSeq { entries }
    }

    /// Word over `2^Π` of a densely sampled position trace. Letters are
    /// total label sets; consecutive duplicates are merged and the last
    /// letter is understood to repeat forever.
    pub fn word_of_trace(&self, positions: &[Point]) -> Word {
        let mut letters: Vec<LabelSet> = Vec::new();
        for p in positions {
            let l = self.label_point(*p);
            if letters.last() != Some(&l) {
                letters.push(l);
            }
        }
        Word { letters }
    }
}

fn refine_change(
    label_at: &dyn Fn(f64) -> LabelSet,
    ta: f64,
    a: LabelSet,
    tb: f64,
    b: LabelSet,
    out: &mut Vec<(f64, LabelSet)>,
) {
    if tb - ta <= EVENT_TOLERANCE {
        out.push((tb, b));
        return;
    }
    let tm = 0.5 * (ta + tb);
    let m = label_at(tm);
    if m == a {
        refine_change(label_at, tm, a, tb, b, out);
    } else if m == b {
        refine_change(label_at, ta, a, tm, b, out);
    } else {
        refine_change(label_at, ta, a, tm, m, out);
        refine_change(label_at, tm, m, tb, b, out);
    }
}

/// One run `(Θ, [t_lo, t_hi])` of constant labels, times relative to the arc start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSpan {
    pub labels: LabelSet,
    pub t_lo: f64,
    pub t_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSeq {
    pub entries: Vec<LabelSpan>,
}

/// Finite word with an implicit stutter-forever tail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub letters: Vec<LabelSet>,
}

/// Replaces every `π` by `ξ_π` and every `¬π` by `ξ_¬π`.
///
/// Fails on any negation that is not directly applied to a proposition.
pub fn pos_translate(expr: &Expr) -> Result<Expr, EnvError> {
    Ok(match expr {
        Expr::True => Expr::True,
        Expr::Prop(name) => Expr::Lit(ExtProp::pos(name.clone())),
        Expr::Lit(e) => Expr::Lit(e.clone()),
        Expr::Not(inner) => match inner.as_ref() {
            Expr::Prop(name) => Expr::Lit(ExtProp::neg(name.clone())),
            other => return Err(EnvError::NotNnf(other.to_string())),
        },
        Expr::And(items) => Expr::And(items.iter().map(pos_translate).collect::<Result<_, _>>()?),
        Expr::Or(items) => Expr::Or(items.iter().map(pos_translate).collect::<Result<_, _>>()?),
        Expr::Prob {
            threshold,
            lhs,
            rhs,
        } => Expr::Prob {
            threshold: *threshold,
            lhs: Box::new(pos_translate(lhs)?),
            rhs: Box::new(pos_translate(rhs)?),
        },
    })
}

/// Inverse of [`pos_translate`]: `ξ_π ↦ π`, `ξ_¬π ↦ ¬π`.
pub fn pos_inverse(expr: &Expr) -> Expr {
    match expr {
        Expr::Lit(e) if e.positive => Expr::Prop(e.base.clone()),
        Expr::Lit(e) => Expr::Not(Box::new(Expr::Prop(e.base.clone()))),
        Expr::True => Expr::True,
        Expr::Prop(n) => Expr::Prop(n.clone()),
        Expr::Not(inner) => Expr::Not(Box::new(pos_inverse(inner))),
        Expr::And(items) => Expr::And(items.iter().map(pos_inverse).collect()),
        Expr::Or(items) => Expr::Or(items.iter().map(pos_inverse).collect()),
        Expr::Prob {
            threshold,
            lhs,
            rhs,
        } => Expr::Prob {
            threshold: *threshold,
            lhs: Box::new(pos_inverse(lhs)),
            rhs: Box::new(pos_inverse(rhs)),
        },
    }
}
