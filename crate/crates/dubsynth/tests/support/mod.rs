//! Generators and exact oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use dubsynth_core::environment::{EnvironmentSpec, Literal};
use dubsynth_core::mdp::{Enabled, MdpBuilder};
use dubsynth_core::pctl::{Block, Clause, Threshold, UpdateKind};
use dubsynth_core::synthesis::Partition;
use dubsynth_core::vehicle::VehicleParams;
use dubsynth_core::{Action, ExtProp, Formula, LabelSet, Pose, StateId, TreeMdp, UpdateRule};
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Q = Ratio<i64>;

pub const NAMES: [&str; 3] = ["a", "b", "g"];

pub fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

pub fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

/// Each proposition is known true, known false, or undecided (disc on a boundary).
pub fn random_labels(rng: &mut ChaCha8Rng, nprops: usize) -> LabelSet {
    let mut l = LabelSet::EMPTY;
    for prop in 0..nprops {
        let x: f64 = rng.gen();
        if x < 0.3 {
            l.insert(Literal { prop, positive: true });
        } else if x < 0.85 {
            l.insert(Literal { prop, positive: false });
        }
    }
    l
}

/// Random tree MDP over [`NAMES`] with `n` cells, at most `depth` control
/// stages and roughly `max_states` states. Each control state enables a
/// random non-empty subset of the three controls; arcs may carry `ν`-chains.
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize, depth: usize, max_states: usize) -> TreeMdp {
    let root = random_labels(rng, NAMES.len());
    let mut b = MdpBuilder::new(names(&NAMES), vec![-1.0, 0.0, 1.0], n, root);
    let mut frontier = vec![(StateId::ROOT, 0usize)];
    let mut count = 1;
    while let Some((s, stage)) = frontier.pop() {
        if stage == depth || count + 3 * n > max_states || rng.gen_bool(0.15) {
            continue;
        }
        let mut controls: Vec<u8> = (0..3).filter(|_| rng.gen_bool(0.55)).collect();
        if controls.is_empty() {
            controls.push(rng.gen_range(0..3));
        }
        for u in controls {
            let labels: Vec<LabelSet> = (0..n).map(|_| random_labels(rng, NAMES.len())).collect();
            for mut k in b.expand(s, u, &labels) {
                count += 1;
                while rng.gen_bool(0.25) && count < max_states {
                    k = b.chain(k, random_labels(rng, NAMES.len()));
                    count += 1;
                }
                frontier.push((k, stage + 1));
            }
        }
    }
    b.build()
}

/// Number of deterministic policies, counted on the states each policy can reach.
pub fn policy_count(m: &TreeMdp) -> f64 {
    let mut count = vec![1.0f64; m.len()];
    for s in m.ids().rev() {
        let st = m.state(s);
        if st.leaf {
            continue;
        }
        let per_action = m
            .transitions(s)
            .iter()
            .map(|t| t.successors.iter().map(|&(c, _)| count[c.index()]).product::<f64>());
        let total = match st.enabled {
            Enabled::Nu => per_action.product(),
            Enabled::Controls => per_action.sum(),
        };
        count[s.index()] = total;
    }
    count[0]
}

/// Probability of `φ U ψ` from every state, one entry per deterministic
/// policy, evaluated exactly. Policies are enumerated as every choice of
/// action at every state the policy reaches.
fn policy_values(m: &TreeMdp, part: &Partition, s: StateId) -> Vec<Q> {
    let k = s.index();
    if part.yes[k] {
        return vec![Q::from_integer(1)];
    }
    if part.no[k] || m.state(s).leaf {
        return vec![Q::from_integer(0)];
    }
    let mut out = Vec::new();
    for t in m.transitions(s) {
        let mut combos = vec![Q::from_integer(0)];
        for &(c, _) in &t.successors {
            let p = Q::new(1, if t.action == Action::Nu { 1 } else { m.noise_cells() as i64 });
            let child = policy_values(m, part, c);
            combos = combos
                .iter()
                .flat_map(|acc| child.iter().map(move |v| acc + p * v))
                .collect();
        }
        out.extend(combos);
    }
    out
}

/// Exact maximum over all deterministic policies from `s`.
pub fn exhaustive_max(m: &TreeMdp, part: &Partition, s: StateId) -> Q {
    policy_values(m, part, s).into_iter().max().unwrap()
}

pub fn to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

fn random_clause(rng: &mut ChaCha8Rng, conj: bool) -> Clause {
    let k = rng.gen_range(1..=2);
    let bases: Vec<&str> = NAMES.choose_multiple(rng, k).copied().collect();
    let lits = bases.into_iter().map(|b| ExtProp {
        base: b.to_string(),
        positive: rng.gen_bool(0.5),
    });
    if conj {
        Clause::conjunction(lits.collect::<Vec<_>>())
    } else {
        Clause::disjunction(lits.collect::<Vec<_>>())
    }
}

fn push_unique(v: &mut Vec<Clause>, c: Clause) {
    if !v.iter().any(|x| x.same_literals(&c)) {
        v.push(c);
    }
}

pub fn random_threshold(rng: &mut ChaCha8Rng) -> Threshold {
    *[
        Threshold::POSITIVE,
        Threshold::new(0.3, false),
        Threshold::new(0.5, true),
        Threshold::new(0.8, false),
    ]
    .choose(rng)
    .unwrap()
}

pub fn random_block(rng: &mut ChaCha8Rng, min_psi: usize) -> Block {
    let mut phi = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        push_unique(&mut phi, random_clause(rng, false));
    }
    let mut psi = Vec::new();
    while psi.len() < min_psi.max(1) || (psi.len() < 3 && rng.gen_bool(0.4)) {
        push_unique(&mut psi, random_clause(rng, true));
    }
    Block {
        phi,
        psi,
        threshold: random_threshold(rng),
    }
}

pub fn random_formula(rng: &mut ChaCha8Rng, blocks: usize) -> Formula {
    Formula {
        blocks: (0..blocks).map(|_| random_block(rng, 2)).collect(),
    }
}

/// A rule of the given number (1 to 6) valid for `f`, editing block `j`
/// after `i` satisfied blocks.
pub fn random_rule(rng: &mut ChaCha8Rng, f: &Formula, number: u8, i: usize, j: usize) -> Option<UpdateRule> {
    let b = f.block(j)?;
    let kind = match number {
        1 => UpdateKind::AddPsiClause {
            block: j,
            clause: random_clause(rng, true).literals,
        },
        2 => UpdateKind::RemovePsiClause {
            block: j,
            index: rng.gen_range(1..=b.psi.len()),
        },
        3 => {
            if b.phi.is_empty() {
                return None;
            }
            UpdateKind::RemovePhiClause {
                block: j,
                index: rng.gen_range(1..=b.phi.len()),
            }
        }
        4 => UpdateKind::AddPhiClause {
            block: j,
            clause: random_clause(rng, false).literals,
        },
        5 => UpdateKind::LowerThreshold {
            block: j,
            threshold: random_threshold(rng),
        },
        _ => UpdateKind::RaiseThreshold {
            block: j,
            threshold: random_threshold(rng),
        },
    };
    Some(UpdateRule::new(kind, i))
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

/// Small world with a goal `g`, a hazard `a`, a second goal `b` and walls `u`.
pub fn random_desk(rng: &mut ChaCha8Rng, depth: usize) -> (EnvironmentSpec, VehicleParams) {
    let mut regions = BTreeMap::new();
    let boxes = |rng: &mut ChaCha8Rng, count: usize, w: f64| -> Vec<Vec<[f64; 2]>> {
        (0..count)
            .map(|_| {
                let x = rng.gen_range(1.0..5.0);
                let y = rng.gen_range(0.5..3.5 - w);
                rect(x, y, x + rng.gen_range(0.3..w), y + rng.gen_range(0.3..w))
            })
            .collect()
    };
    regions.insert("g".to_string(), boxes(rng, 2, 1.2));
    regions.insert("a".to_string(), boxes(rng, 1, 0.8));
    regions.insert("b".to_string(), boxes(rng, 1, 1.0));
    let gap = rng.gen_range(0.5..0.9);
    regions.insert(
        "u".to_string(),
        vec![rect(0.0, 0.0, 6.0, 2.0 - gap), rect(0.0, 2.0 + gap, 6.0, 4.0)],
    );
    let env = EnvironmentSpec {
        bounds: [0.0, 0.0, 6.0, 4.0],
        regions,
    };
    let params = VehicleParams {
        rho: 3.0 / std::f64::consts::PI,
        dt: rng.gen_range(0.8..1.2),
        depth,
        eps_max: 0.06,
        n: 3,
        q_init: Pose::new(0.3, 2.0 + rng.gen_range(-0.2..0.2), rng.gen_range(-0.2f64..0.2).rem_euclid(std::f64::consts::TAU)),
    };
    (env, params)
}

/// Runs the CLI against `data`; returns the exit code and parsed stdout.
pub fn cli(data: &Path, args: &[&str]) -> (i32, serde_json::Value, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dubsynth"))
        .arg("--data")
        .arg(data)
        .args(args)
        .output()
        .expect("run dubsynth");
    let code = out.status.code().unwrap_or(-1);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let value = serde_json::from_str(&stdout).unwrap_or(serde_json::Value::Null);
    (code, value, String::from_utf8_lossy(&out.stderr).into_owned())
}
