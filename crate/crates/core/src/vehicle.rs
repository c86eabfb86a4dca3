//! Dubins kinematics with piecewise-constant actuator noise.
//!
//! The vehicle moves at unit forward speed and is steered by an angular rate
//! `u` drawn from a three-element control set. The actuator adds a noise term
//! that is constant over each stage of length `dt`; the gyroscope only reports
//! which of `n` equal noise cells the applied rate fell into. The quantized
//! system replaces each cell by its midpoint, which yields the reachability
//! tree built by [`build_reach_tree`].

use alloc::vec::Vec;
use core::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::Point;

/// Below this rate (rad/s) an arc is integrated as a straight line.
pub const STRAIGHT_TOLERANCE: f64 = 1e-9;

/// Number of sub-steps per stage used for uncertainty and label scans.
pub const SAMPLES_PER_STAGE: usize = 1024;

/// Default ceiling on the number of reachability-tree nodes.
pub const DEFAULT_NODE_CEILING: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VehicleError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("stage duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("noise bound must be non-negative, got {0}")]
    NegativeNoise(f64),
    #[error("noise model needs at least one cell")]
    ZeroCells,
    #[error("minimum turn radius must be positive, got {0}")]
    InvalidTurnRadius(f64),
    #[error("uncertainty radius must be non-negative, got {0}")]
    NegativeRadius(f64),
    #[error("reachability tree for K={depth} exceeds the node ceiling of {ceiling} (reached while expanding stage {stage})")]
    NodeCeiling {
        ceiling: usize,
        depth: usize,
        stage: usize,
    },
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = theta - TAU * libm::floor(theta / TAU);
    // floor can leave `TAU` behind for inputs just below a multiple of 2π
    if wrapped >= TAU || wrapped < 0.0 {
        0.0
    } else {
        wrapped
    }
}

/// Vehicle configuration in SE(2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading in `[0, 2π)`.
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// One stage of motion under a constant applied rate `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcSegment {
    pub start: Pose,
    /// Applied angular rate (rad/s), nominal control plus noise.
    pub w: f64,
    pub dt: f64,
    pub end: Pose,
}

impl ArcSegment {
    /// Pose after `t` seconds, `t` clamped to `[0, dt]`.
    pub fn pose_at(&self, t: f64) -> Pose {
        let t = t.clamp(0.0, self.dt);
        advance(&self.start, self.w, t)
    }

    pub fn position_at(&self, t: f64) -> Point {
        self.pose_at(t).position()
    }
}

fn advance(start: &Pose, w: f64, t: f64) -> Pose {
    let (s0, c0) = libm::sincos(start.theta);
    if libm::fabs(w) < STRAIGHT_TOLERANCE {
        return Pose::new(start.x + t * c0, start.y + t * s0, start.theta);
    }
    let heading = start.theta + w * t;
    let (s1, c1) = libm::sincos(heading);
    Pose::new(
        start.x + (s1 - s0) / w,
        start.y - (c1 - c0) / w,
        heading,
    )
}

/// Integrates the kinematics from `start` for `dt` seconds at constant rate `w`.
pub fn integrate_arc(start: Pose, w: f64, dt: f64) -> Result<ArcSegment, VehicleError> {
    if !start.is_finite() {
        return Err(VehicleError::NonFinite("start pose"));
    }
    if !w.is_finite() {
        return Err(VehicleError::NonFinite("angular rate"));
    }
    if !dt.is_finite() {
        return Err(VehicleError::NonFinite("stage duration"));
    }
    if dt <= 0.0 {
        return Err(VehicleError::NonPositiveDuration(dt));
    }
    let start = Pose::new(start.x, start.y, start.theta);
    Ok(ArcSegment {
        start,
        w,
        dt,
        end: advance(&start, w, dt),
    })
}

/// One gyroscope resolution cell `[lo, hi]` of the noise interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCell {
    pub lo: f64,
    pub hi: f64,
}

impl NoiseCell {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, eps: f64) -> bool {
        self.lo <= eps && eps <= self.hi
    }
}

/// Uniform actuator noise on `[-eps_max, eps_max]` split into `n` equal cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    eps_max: f64,
    cells: Vec<NoiseCell>,
    reps: Vec<f64>,
}

impl NoiseModel {
    pub fn new(eps_max: f64, n: usize) -> Result<Self, VehicleError> {
        if !eps_max.is_finite() {
            return Err(VehicleError::NonFinite("noise bound"));
        }
        if eps_max < 0.0 {
            return Err(VehicleError::NegativeNoise(eps_max));
        }
        if n == 0 {
            return Err(VehicleError::ZeroCells);
        }
        let width = 2.0 * eps_max / n as f64;
        let cells: Vec<NoiseCell> = (0..n)
            .map(|i| NoiseCell {
                lo: -eps_max + width * i as f64,
                // pin the last edge so the cells cover the interval exactly
                hi: if i + 1 == n {
                    eps_max
                } else {
                    -eps_max + width * (i + 1) as f64
                },
            })
            .collect();
        let reps = cells.iter().map(NoiseCell::midpoint).collect();
        Ok(NoiseModel {
            eps_max,
            cells,
            reps,
        })
    }

    pub fn eps_max(&self) -> f64 {
        self.eps_max
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cell width `Δε = 2·eps_max / n`.
    pub fn resolution(&self) -> f64 {
        2.0 * self.eps_max / self.cells.len() as f64
    }

    pub fn cells(&self) -> &[NoiseCell] {
        &self.cells
    }

    /// Representative (midpoint) noise value of every cell.
    pub fn reps(&self) -> &[f64] {
        &self.reps
    }

    /// Probability mass of each cell under the uniform distribution.
    pub fn cell_probability(&self) -> f64 {
        1.0 / self.cells.len() as f64
    }

    /// Index of the cell that contains `eps`; the shared edge of two cells
    /// belongs to the upper one. Values outside the support are clamped.
    pub fn cell_of(&self, eps: f64) -> usize {
        let width = self.resolution();
        if width <= 0.0 {
            return 0;
        }
        let idx = libm::floor((eps + self.eps_max) / width);
        if idx <= 0.0 {
            0
        } else {
            (idx as usize).min(self.cells.len() - 1)
        }
    }

    /// Cell whose measured interval `[u + lo, u + hi]` matches `measured`.
    pub fn cell_for_measurement(&self, u: f64, measured: (f64, f64)) -> Option<usize> {
        const TOL: f64 = 1e-9;
        self.cells.iter().position(|c| {
            libm::fabs(u + c.lo - measured.0) <= TOL && libm::fabs(u + c.hi - measured.1) <= TOL
        })
    }
}

/// The three steering rates `{-1/ρ, 0, 1/ρ}`, ascending.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    rho: f64,
    inputs: [f64; 3],
}

impl ControlSet {
    pub fn new(rho: f64) -> Result<Self, VehicleError> {
        if !rho.is_finite() || rho <= 0.0 {
            return Err(VehicleError::InvalidTurnRadius(rho));
        }
        let rate = 1.0 / rho;
        Ok(ControlSet {
            rho,
            inputs: [-rate, 0.0, rate],
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn inputs(&self) -> &[f64; 3] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, u: f64) -> Option<usize> {
        self.inputs
            .iter()
            .position(|&v| libm::fabs(v - u) <= 1e-12)
    }
}

/// Worst-case growth of the position uncertainty over one stage.
///
/// The quantized system drives the arc with `u + rep`; the true system may have
/// used either cell edge. The radius grows by the largest distance, over the
/// stage, between the representative arc and either edge arc.
pub fn propagate_uncertainty(
    r_prev: f64,
    start: Pose,
    u: f64,
    cell: NoiseCell,
    dt: f64,
) -> Result<f64, VehicleError> {
    if !r_prev.is_finite() {
        return Err(VehicleError::NonFinite("uncertainty radius"));
    }
    if r_prev < 0.0 {
        return Err(VehicleError::NegativeRadius(r_prev));
    }
    let nominal = integrate_arc(start, u + cell.midpoint(), dt)?;
    let mut growth = 0.0f64;
    for edge in [u + cell.lo, u + cell.hi] {
        let bound = integrate_arc(start, edge, dt)?;
        for step in 0..=SAMPLES_PER_STAGE {
            let t = dt * step as f64 / SAMPLES_PER_STAGE as f64;
            let d = nominal.position_at(t).distance(&bound.position_at(t));
            growth = growth.max(d);
        }
    }
    Ok(r_prev + growth)
}

/// Vehicle and noise parameters of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Minimum turn radius (m).
    pub rho: f64,
    /// Stage length (s).
    pub dt: f64,
    /// Number of stages `K`.
    #[serde(rename = "K")]
    pub depth: usize,
    pub eps_max: f64,
    /// Number of gyroscope cells `n`.
    pub n: usize,
    pub q_init: Pose,
}

impl VehicleParams {
    pub fn controls(&self) -> Result<ControlSet, VehicleError> {
        ControlSet::new(self.rho)
    }

    pub fn noise(&self) -> Result<NoiseModel, VehicleError> {
        NoiseModel::new(self.eps_max, self.n)
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        self.controls()?;
        self.noise()?;
        if !self.dt.is_finite() {
            return Err(VehicleError::NonFinite("stage duration"));
        }
        if self.dt <= 0.0 {
            return Err(VehicleError::NonPositiveDuration(self.dt));
        }
        if !self.q_init.is_finite() {
            return Err(VehicleError::NonFinite("initial pose"));
        }
        Ok(())
    }
}

pub type NodeId = usize;

/// One arc of the reachability tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachNode {
    pub segment: ArcSegment,
    /// Stage `k` in `1..=K` that this arc covers.
    pub stage: usize,
    /// Index into [`ControlSet::inputs`].
    pub control: usize,
    /// Index into [`NoiseModel::cells`].
    pub cell: usize,
    pub parent: Option<NodeId>,
    /// Uncertainty radius carried along the whole arc.
    pub radius: f64,
    /// Children in `(control, cell)` order, i.e. child `u·n + i`.
    pub children: Vec<NodeId>,
    pub truncated: bool,
}

/// Tree of all positive-probability arcs of the quantized system up to depth `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachTree {
    pub root: Pose,
    pub depth: usize,
    pub controls: ControlSet,
    pub noise: NoiseModel,
    pub dt: f64,
    /// Arcs in depth-first preorder.
    pub nodes: Vec<ReachNode>,
    pub root_children: Vec<NodeId>,
}

impl ReachTree {
    pub fn children_of(&self, node: Option<NodeId>) -> &[NodeId] {
        match node {
            None => &self.root_children,
            Some(id) => &self.nodes[id].children,
        }
    }

    pub fn stage_count(&self, stage: usize) -> usize {
        self.nodes.iter().filter(|n| n.stage == stage).count()
    }
}

struct Frame {
    parent: Option<NodeId>,
    pose: Pose,
    radius: f64,
    /// Bound on the heading error accumulated before this frame.
    heading: f64,
    stage: usize,
    next_combo: usize,
}

/// Grows the depth-`depth` reachability tree from `q_init`.
///
/// `truncate` is consulted once per new node; nodes for which it returns true
/// are kept but not expanded.
pub fn build_reach_tree(
    q_init: Pose,
    controls: &ControlSet,
    noise: &NoiseModel,
    dt: f64,
    depth: usize,
    mut truncate: Option<&mut dyn FnMut(NodeId, &ReachNode) -> bool>,
    node_ceiling: usize,
) -> Result<ReachTree, VehicleError> {
    if !q_init.is_finite() {
        return Err(VehicleError::NonFinite("initial pose"));
    }
    if !dt.is_finite() {
        return Err(VehicleError::NonFinite("stage duration"));
    }
    if dt <= 0.0 {
        return Err(VehicleError::NonPositiveDuration(dt));
    }
    let q_init = Pose::new(q_init.x, q_init.y, q_init.theta);
    let n = noise.len();
    let combos = controls.len() * n;
    let mut tree = ReachTree {
        root: q_init,
        depth,
        controls: *controls,
        noise: noise.clone(),
        dt,
        nodes: Vec::new(),
        root_children: Vec::new(),
    };
    let mut stack = Vec::new();
    if depth > 0 {
        stack.push(Frame {
            parent: None,
            pose: q_init,
            radius: 0.0,
            heading: 0.0,
            stage: 0,
            next_combo: 0,
        });
    }
    while let Some(frame) = stack.last_mut() {
        if frame.next_combo == combos {
            stack.pop();
            continue;
        }
        let combo = frame.next_combo;
        frame.next_combo += 1;
        let (control, cell) = (combo / n, combo % n);
        let u = controls.inputs()[control];
        let noise_cell = noise.cells()[cell];
        let segment = integrate_arc(frame.pose, u + noise.reps()[cell], dt)?;
        // A start heading off by δ moves every point of the stage by at most δ·dt.
        let radius = propagate_uncertainty(frame.radius + frame.heading * dt, frame.pose, u, noise_cell, dt)?;
        let heading = frame.heading + 0.5 * (noise_cell.hi - noise_cell.lo) * dt;
        let stage = frame.stage + 1;
        let parent = frame.parent;
        if tree.nodes.len() >= node_ceiling {
            return Err(VehicleError::NodeCeiling {
                ceiling: node_ceiling,
                depth,
                stage,
            });
        }
        let id = tree.nodes.len();
        let mut node = ReachNode {
            segment,
            stage,
            control,
            cell,
            parent,
            radius,
            children: Vec::new(),
            truncated: false,
        };
        if let Some(pred) = truncate.as_mut() {
            node.truncated = pred(id, &node);
        }
        let expand = !node.truncated && stage < depth;
        tree.nodes.push(node);
        match parent {
            None => tree.root_children.push(id),
            Some(p) => tree.nodes[p].children.push(id),
        }
        if expand {
            stack.push(Frame {
                parent: Some(id),
                pose: segment.end,
                radius,
                heading,
                stage,
                next_combo: 0,
            });
        }
    }
    Ok(tree)
}
