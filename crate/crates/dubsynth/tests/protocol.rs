mod support;

use dubsynth::candidates::candidate_id;
use dubsynth::scenario::Scenario;
use dubsynth::service::{AcceptRequest, Service, StepRequest};
use dubsynth::session::{EventKind, Live, Phase};
use dubsynth::store::Store;
use dubsynth::ServiceError;
use dubsynth_core::pctl::UpdateKind;
use dubsynth_core::synthesis::{prune_from, solve};
use dubsynth_core::{ExtProp, Formula, UpdateRule};
use support::scenarios_dir;
use tempfile::TempDir;

fn service() -> (TempDir, Service) {
    let dir = tempfile::tempdir().unwrap();
    let svc = Service::new(Store::open(dir.path().join("data")).unwrap());
    (dir, svc)
}

fn desk() -> Scenario {
    Scenario::load(&scenarios_dir().join("desk.json")).unwrap()
}

fn keep(deploy: Option<u64>) -> AcceptRequest {
    AcceptRequest { candidate: None, deploy }
}

fn pick(id: &str) -> AcceptRequest {
    AcceptRequest {
        candidate: Some(id.to_string()),
        deploy: None,
    }
}

fn rule(kind: UpdateKind) -> UpdateRule {
    UpdateRule::new(kind, 0)
}

#[test]
fn create_solves_and_logs() {
    let (_dir, svc) = service();
    let s = svc.create(desk()).unwrap();
    assert_eq!(s.phase, Phase::Negotiating);
    assert_eq!(s.revision, 0);
    assert!(0.0 <= s.lower && s.lower <= s.upper && s.upper <= 1.0);
    assert_eq!(s.events.len(), 1);
    match &s.events[0].kind {
        EventKind::Created { lower, upper, states, .. } => {
            assert_eq!((*lower, *upper), (s.lower, s.upper));
            assert_eq!(*states, s.mdp.states);
        }
        other => panic!("unexpected {other:?}"),
    }
    let again = svc.create(desk()).unwrap();
    assert_ne!(again.id, s.id);
    assert_eq!(again.mdp, s.mdp);
    assert_eq!(svc.get(&s.id).unwrap(), s);
}

#[test]
fn bad_scenarios_name_their_stage() {
    let (_dir, svc) = service();
    let cases = [
        ("Pmax=? [ P>0 [ !u U ]", None, "formula"),
        ("Pmax=? [ P>0 [ !u U !u & zz ] ]", None, "formula"),
        ("Pmax=? [ P>0 [ true U p ] ]", None, "scenario"),
        ("Pmax=? [ P>0 [ !u U !u & p ] ]", Some("wall"), "scenario"),
    ];
    for (text, absorbing, stage) in cases {
        let mut sc = desk();
        sc.formula = text.to_string();
        if let Some(a) = absorbing {
            sc.absorbing = vec![a.to_string()];
        }
        let err = svc.create(sc).unwrap_err();
        assert_eq!(err.stage(), stage, "{text}: {err}");
    }
    let mut sc = desk();
    sc.vehicle.dt = -1.0;
    assert_eq!(svc.create(sc).unwrap_err().stage(), "vehicle");
    assert!(matches!(svc.get("s9999"), Err(ServiceError::NotFound(_))));
}

#[test]
fn unreachable_goal_has_zero_bounds() {
    let (_dir, svc) = service();
    let mut sc = desk();
    sc.formula = "Pmax=? [ P>0 [ !u U !u & d1 & d2 ] ]".into();
    let s = svc.create(sc).unwrap();
    assert_eq!((s.lower, s.upper), (0.0, 0.0));
}

#[test]
fn candidates_are_ranked_and_limited() {
    let (_dir, svc) = service();
    let s = svc.create(desk()).unwrap();
    assert!(svc.candidates(&s.id, 0).unwrap().items.is_empty());
    let all = svc.candidates(&s.id, usize::MAX).unwrap();
    assert_eq!(all.revision, 0);
    assert!(!all.items.is_empty());
    for (k, c) in all.items.iter().enumerate() {
        assert_eq!(c.id, candidate_id(0, k));
        assert!(c.delta >= 0.0);
        assert_eq!(c.delta, c.lower - s.lower);
        assert!(c.lower <= c.upper);
    }
    assert!(all.items.windows(2).all(|w| w[0].delta >= w[1].delta));
    let two = svc.candidates(&s.id, 2).unwrap();
    assert_eq!(two.items, all.items[..2.min(all.items.len())]);
    let offered = svc
        .get(&s.id)
        .unwrap()
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Offered { .. }))
        .count();
    assert_eq!(offered, 1, "the list is computed once per revision");
}

#[test]
fn accepting_adopts_the_predicted_bounds() {
    let (_dir, svc) = service();
    let s = svc.create(desk()).unwrap();
    let list = svc.candidates(&s.id, 10).unwrap();
    let best = &list.items[0];
    let after = svc.accept(&s.id, &pick(&best.id)).unwrap();
    assert_eq!((after.lower, after.upper), (best.lower, best.upper));
    assert_eq!(after.formula, best.formula);
    assert_eq!(after.revision, 1);
    assert!(after.candidates.is_none());
    assert!(Formula::parse(&after.formula).is_ok());
}

#[test]
fn stale_and_unknown_candidates_are_refused() {
    let (_dir, svc) = service();
    let s = svc.create(desk()).unwrap();
    let old = svc.candidates(&s.id, 1).unwrap().items[0].id.clone();
    svc.accept(&s.id, &keep(None)).unwrap();
    assert!(matches!(svc.accept(&s.id, &pick(&old)), Err(ServiceError::Stale(_))));
    assert!(matches!(svc.accept(&s.id, &pick("r1c0")), Err(ServiceError::UnknownCandidate(_))));
    svc.candidates(&s.id, 10).unwrap();
    assert!(matches!(svc.accept(&s.id, &pick("r1c999")), Err(ServiceError::UnknownCandidate(_))));
    assert!(matches!(svc.accept(&s.id, &pick("bogus")), Err(ServiceError::UnknownCandidate(_))));
}

fn phase_error<T: std::fmt::Debug>(r: Result<T, ServiceError>) -> bool {
    matches!(r, Err(ServiceError::Phase { .. }))
}

#[test]
fn operations_respect_the_phase() {
    let (_dir, svc) = service();
    let s = svc.create(desk()).unwrap();
    let id = s.id.as_str();
    let ev = rule(UpdateKind::RemovePsiClause { block: 3, index: 2 });
    assert!(phase_error(svc.step(id, &StepRequest::default())));
    assert!(phase_error(svc.event(id, &ev)));

    svc.accept(id, &keep(Some(5))).unwrap();
    assert_eq!(svc.get(id).unwrap().phase, Phase::Deployed);
    assert!(phase_error(svc.candidates(id, 3)));
    assert!(phase_error(svc.accept(id, &keep(None))));
    assert!(phase_error(svc.deploy(id, 5)));

    svc.run(id).unwrap();
    assert_eq!(svc.get(id).unwrap().phase, Phase::Closed);
    assert!(phase_error(svc.step(id, &StepRequest::default())));
    assert!(phase_error(svc.candidates(id, 3)));
    assert!(phase_error(svc.accept(id, &keep(None))));
    assert!(phase_error(svc.deploy(id, 5)));
    assert!(phase_error(svc.event(id, &ev)));
}

#[test]
fn deployment_runs_k_stages_and_closes() {
    let (_dir, svc) = service();
    let sc = desk();
    let k = sc.vehicle.depth;
    let s = svc.create(sc).unwrap();
    svc.accept(&s.id, &keep(Some(3))).unwrap();
    let reports = svc.run(&s.id).unwrap();
    assert_eq!(reports.len(), k);
    assert!(reports.iter().enumerate().all(|(i, r)| r.stage == i + 1));
    let done = svc.get(&s.id).unwrap();
    let d = done.deployment.unwrap();
    assert_eq!(d.stage, k);
    assert_eq!(d.draws, k as u64);
    assert!(d.verdict.is_some());
    match &done.events.last().unwrap().kind {
        EventKind::Closed { verdict, .. } => assert_eq!(Some(*verdict), d.verdict),
        other => panic!("unexpected {other:?}"),
    }
    let seqs: Vec<u64> = done.events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=done.events.len() as u64).collect::<Vec<_>>());
}

#[test]
fn explicit_noise_is_validated_and_used() {
    let (_dir, svc) = service();
    let s = svc.create(desk()).unwrap();
    svc.accept(&s.id, &keep(Some(1))).unwrap();
    let err = svc.step(&s.id, &StepRequest { eps: Some(0.5) }).unwrap_err();
    assert!(matches!(err, ServiceError::Noise { .. }));
    let out = svc.step(&s.id, &StepRequest { eps: Some(-0.05) }).unwrap();
    assert_eq!(out.report.eps, -0.05);
    assert_eq!(out.report.cell, 0);
    assert_eq!(svc.get(&s.id).unwrap().deployment.unwrap().draws, 0);
}

#[test]
fn cursor_bounds_equal_a_fresh_solve_ahead() {
    let (_dir, svc) = service();
    let s = svc.create(desk()).unwrap();
    let mdp = svc.store().get_mdp(&s.mdp).unwrap();
    let f = Formula::parse(&s.formula).unwrap();
    for seed in 0..6 {
        let s = svc.create(desk()).unwrap();
        svc.accept(&s.id, &keep(Some(seed))).unwrap();
        for r in svc.run(&s.id).unwrap() {
            let want = if r.satisfied_up_to >= f.len() {
                (1.0, 1.0)
            } else {
                let (pruned, _) = prune_from(&mdp, r.state).unwrap();
                let c = f.suffix(r.satisfied_up_to).compile(mdp.propositions()).unwrap();
                solve(&pruned, &c, s.scenario.bound_scope).bounds()
            };
            assert_eq!((r.lower, r.upper), want, "seed {seed} stage {}", r.stage);
        }
    }
}

fn script(svc: &Service) -> dubsynth::Session {
    let s = svc.create(desk()).unwrap();
    let c = svc.candidates(&s.id, 1).unwrap().items[0].id.clone();
    svc.accept(&s.id, &pick(&c)).unwrap();
    svc.deploy(&s.id, 11).unwrap();
    svc.step(&s.id, &StepRequest::default()).unwrap();
    svc.event(&s.id, &rule(UpdateKind::RemovePsiClause { block: 3, index: 2 })).unwrap();
    svc.accept(&s.id, &keep(Some(99))).unwrap();
    svc.run(&s.id).unwrap();
    svc.get(&s.id).unwrap()
}

#[test]
fn sessions_replay_deterministically() {
    let (_a, one) = service();
    let (_b, two) = service();
    let x = script(&one);
    let y = script(&two);
    assert_eq!(x, y);
    assert_eq!(serde_json::to_string(&x).unwrap(), serde_json::to_string(&y).unwrap());
}

#[test]
fn snapshots_restore_and_detect_tampering() {
    let (_dir, svc) = service();
    let s = script(&svc);
    let text = serde_json::to_string(&s).unwrap();
    let back: dubsynth::Session = serde_json::from_str(&text).unwrap();
    assert_eq!(back, s);
    assert!(Live::restore(svc.store(), back.clone()).is_ok());
    let mut bad = back;
    bad.lower = (bad.lower + 0.5).min(1.0) - 1e-9;
    assert!(matches!(Live::restore(svc.store(), bad), Err(ServiceError::Corrupt(_))));
    let path = svc.store().root().join("sessions").join(format!("{}.json", s.id));
    std::fs::write(&path, "{ not json").unwrap();
    assert!(svc.get(&s.id).is_err());
}

#[test]
fn restricting_event_offers_candidates_and_resumes() {
    let (_dir, svc) = service();
    let s = svc.create(desk()).unwrap();
    svc.accept(&s.id, &keep(Some(2))).unwrap();
    svc.step(&s.id, &StepRequest::default()).unwrap();
    let after = svc.event(&s.id, &rule(UpdateKind::RemovePsiClause { block: 3, index: 2 })).unwrap();
    assert_eq!(after.phase, Phase::Renegotiating);
    assert_eq!(after.origin.stage, 1);
    assert!(after.candidates.is_some());
    let last = &after.events[after.events.len() - 1].kind;
    assert!(matches!(last, EventKind::Offered { .. }));
    match &after.events[after.events.len() - 2].kind {
        EventKind::Environment { before, lower, .. } => assert!(lower <= &before.0),
        other => panic!("unexpected {other:?}"),
    }
    let resumed = svc.accept(&s.id, &keep(Some(77))).unwrap();
    assert_eq!(resumed.phase, Phase::Deployed);
    let d = resumed.deployment.as_ref().unwrap();
    assert_eq!(d.seed, 2);
    assert_eq!(d.stage, 1);
    assert!(matches!(
        resumed.events.last().unwrap().kind,
        EventKind::Deployed { seed: 2, resumed: true }
    ));
    let reports = svc.run(&s.id).unwrap();
    assert_eq!(reports.last().unwrap().stage, s.scenario.vehicle.depth);
    assert_eq!(svc.get(&s.id).unwrap().phase, Phase::Closed);
}

#[test]
fn relaxing_event_skips_candidates() {
    let (_dir, svc) = service();
    let s = svc.create(desk()).unwrap();
    svc.accept(&s.id, &keep(Some(2))).unwrap();
    svc.step(&s.id, &StepRequest::default()).unwrap();
    let add = rule(UpdateKind::AddPsiClause {
        block: 3,
        clause: vec![ExtProp::neg("u"), ExtProp::pos("p")],
    });
    let after = svc.event(&s.id, &add).unwrap();
    assert_eq!(after.phase, Phase::Renegotiating);
    assert!(after.candidates.is_none());
    match &after.events.last().unwrap().kind {
        EventKind::Environment { before, lower, .. } => assert!(lower >= &before.0),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn events_check_the_claimed_prefix_and_guards() {
    let (_dir, svc) = service();
    let s = svc.create(desk()).unwrap();
    svc.accept(&s.id, &keep(Some(2))).unwrap();
    let out = svc.step(&s.id, &StepRequest::default()).unwrap();
    let actual = out.report.satisfied_up_to;
    let claimed = UpdateRule::new(UpdateKind::RemovePsiClause { block: 3, index: 2 }, actual + 1);
    assert!(matches!(svc.event(&s.id, &claimed), Err(ServiceError::Prefix { .. })));
    let unguarded = rule(UpdateKind::AddPsiClause {
        block: 3,
        clause: vec![ExtProp::pos("p")],
    });
    assert_eq!(svc.event(&s.id, &unguarded).unwrap_err().stage(), "scenario");
    assert_eq!(svc.get(&s.id).unwrap().phase, Phase::Deployed);
}
