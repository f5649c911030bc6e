use super::*;
use crate::loops::{NewCategoryDecision, ScriptedOracle, SimulatedOracle};
use crate::synth::{self, SyntheticDataset};

fn fixed_clock() -> DateTime<Utc> {
    DateTime::from_timestamp(1_700_000_000, 0).unwrap()
}

fn small() -> SyntheticDataset {
    synth::table1_dataset(&[2, 2, 1, 1, 1, 1, 1, 1, 1], 3)
}

fn config(d: &SyntheticDataset) -> SessionConfig {
    SessionConfig::new("s1", d.manifest.feature_dim, "memory://manifest")
}

fn seeded(d: &SyntheticDataset) -> Session<MemoryLog> {
    let mut s = Session::new(config(d), MemoryLog::new()).unwrap().with_clock(fixed_clock);
    s.load(&d.manifest, Some(&d.reference)).unwrap();
    s
}

fn oracle(d: &SyntheticDataset, flip_p: f64, seed: u64) -> SimulatedOracle {
    SimulatedOracle::new(&d.reference, d.ground_truth.clone(), flip_p, seed).unwrap()
}

#[test]
fn empty_log_is_a_fresh_session() {
    let d = small();
    let s = SessionState::replay(config(&d), &[]).unwrap();
    assert!(s.pending().is_none());
    assert!(!s.is_done());
    assert_eq!(s.hierarchy().len(), 1);
    assert_eq!(s.last_seq(), 0);
}

#[test]
fn config_is_validated() {
    let mut c = SessionConfig::new("../x", 3, "m");
    assert!(matches!(c.validate(), Err(SessionError::Config(_))));
    c.session_id = "ok-1.a_b".into();
    assert!(c.validate().is_ok());
    c.oracle = OracleMode::Simulated { flip_p: 1.5, seed: 0 };
    assert!(c.validate().is_err());
    let json = r#"{"session_id":"a","feature_dim":4,"manifest_uri":"m","oracle":{"mode":"simulated","flip_p":0.1,"seed":7}}"#;
    let parsed: SessionConfig = serde_json::from_str(json).unwrap();
    assert_eq!(parsed.oracle, OracleMode::Simulated { flip_p: 0.1, seed: 7 });
    assert_eq!(parsed.tie_break, TieBreak::AscendingId);
}

#[test]
fn load_seeds_and_issues_first_prompt() {
    let d = small();
    let s = seeded(&d);
    let kinds: Vec<_> = s.log().events.iter().map(|e| e.kind.name()).collect();
    assert_eq!(kinds[..9], ["CategoryCreated"; 9]);
    assert_eq!(kinds[9], "ManifestLoaded");
    assert_eq!(kinds[10], "QuestionIssued");
    assert_eq!(kinds.len(), 11);
    assert!(s.log().events.iter().enumerate().all(|(i, e)| e.seq == i as u64 + 1));
    assert_eq!(s.pending().unwrap().seq(), 1);
    assert_eq!(s.state().hierarchy().skeleton().to_canonical_json(), d.reference.skeleton().to_canonical_json());
}

#[test]
fn sequence_gap_leaves_state_unchanged() {
    let d = small();
    let mut s = seeded(&d);
    let before = s.state().last_seq();
    let prompt = s.pending().unwrap().clone();
    let event = SessionEvent {
        seq: before + 2,
        timestamp: fixed_clock(),
        kind: EventKind::AnswerReceived {
            answer: Answer {
                seq: prompt.seq(),
                response: Response::Verdict(true),
            },
        },
    };
    let err = s.append_and_apply(event).unwrap_err();
    assert!(matches!(err, SessionError::SequenceGap { expected, found } if expected == before + 1 && found == before + 2));
    assert_eq!(s.state().last_seq(), before);
    assert_eq!(s.pending(), Some(&prompt));
    assert_eq!(s.log().events.len() as u64, before);
}

#[test]
fn persist_failure_leaves_state_unchanged() {
    let d = small();
    let s = seeded(&d);
    let n = s.log().events.len();
    let (state, mut log) = s.into_parts();
    log.fail_after = Some(n);
    let mut s = Session {
        state,
        log,
        clock: fixed_clock,
    };
    let prompt = s.pending().unwrap().clone();
    let err = s
        .answer(Answer {
            seq: prompt.seq(),
            response: Response::Verdict(true),
        })
        .unwrap_err();
    assert!(matches!(err, SessionError::PersistFailure(_)));
    assert_eq!(s.pending(), Some(&prompt));
    assert_eq!(s.state().stats().questions_answered, 0);
}

#[test]
fn stale_and_duplicate_answers() {
    let d = small();
    let mut s = seeded(&d);
    let first = s.pending().unwrap().clone();
    let answer = Answer {
        seq: first.seq(),
        response: Response::Verdict(false),
    };
    assert_eq!(s.answer(answer.clone()).unwrap(), AnswerStatus::Applied);
    let events = s.log().events.len();
    let second = s.pending().unwrap().clone();
    assert!(second.seq() > first.seq());

    // retrying the same answer is harmless
    assert_eq!(s.answer(answer).unwrap(), AnswerStatus::Duplicate);
    assert_eq!(s.log().events.len(), events);

    // a different answer to an old prompt is stale and echoes the pending one
    let err = s
        .answer(Answer {
            seq: first.seq(),
            response: Response::Verdict(true),
        })
        .unwrap_err();
    match err {
        SessionError::StaleQuestion { submitted, pending } => {
            assert_eq!(submitted, first.seq());
            assert_eq!(pending.as_deref(), Some(&second));
        }
        other => panic!("{other:?}"),
    }

    // wrong response kind for a question
    let err = s
        .answer(Answer {
            seq: second.seq(),
            response: Response::NewCategory(NewCategoryDecision::KeepAtParent),
        })
        .unwrap_err();
    assert!(matches!(err, SessionError::InvalidAnswer(_)));
    assert_eq!(s.log().events.len(), events);
    assert_eq!(s.pending(), Some(&second));
}

#[test]
fn simulated_run_recovers_ground_truth() {
    let d = small();
    let mut s = seeded(&d);
    s.run_with(&mut oracle(&d, 0.0, 1)).unwrap();
    assert!(s.is_done());
    assert!(s.pending().is_none());
    assert_eq!(s.state().labels(), d.ground_truth);
    let stats = s.state().stats();
    assert_eq!(stats.assigned, 11);
    assert_eq!(stats.remaining, 0);
    assert_eq!(stats.categories, 9);
    assert_eq!(stats.max_depth, 4);
    let export = s.export();
    let hist: Vec<usize> = export.histogram().values().copied().collect();
    assert_eq!(hist, [2, 2, 1, 1, 1, 1, 1, 1, 1]);
    assert!(export.unassigned.is_empty());
    let view = s.state().next_view();
    assert!(view.done);
    assert_eq!(serde_json::to_value(&view).unwrap(), serde_json::json!({"done": true}));
}

#[test]
fn replay_reproduces_live_state() {
    let d = small();
    let mut s = seeded(&d);
    s.run_with(&mut oracle(&d, 0.2, 5)).unwrap();
    let replayed = SessionState::replay(config(&d), &s.log().events).unwrap();
    assert_eq!(
        replayed.hierarchy().to_canonical_json(),
        s.state().hierarchy().to_canonical_json()
    );
    assert_eq!(replayed.stats(), s.state().stats());
    assert_eq!(DatasetExport::from_state(&replayed), s.export());
}

#[test]
fn resume_after_every_prefix() {
    let d = synth::table1_dataset(&[1, 1, 1, 1, 1, 0, 0, 1, 0], 8);
    let mut live = Session::create(config(&d), &d.manifest, Some(&d.reference), MemoryLog::new())
        .unwrap()
        .with_clock(fixed_clock);
    live.run_with(&mut oracle(&d, 0.3, 2)).unwrap();
    let events = live.log().events.clone();
    let expected = live.state().hierarchy().to_canonical_json();
    let loaded = events.iter().position(|e| e.kind.name() == "ManifestLoaded").unwrap();
    for cut in loaded + 1..events.len() {
        let prefix = &events[..cut];
        let log = MemoryLog {
            events: prefix.to_vec(),
            fail_after: None,
        };
        let mut resumed = Session::resume(config(&d), prefix, log).unwrap();
        resumed.run_with(&mut oracle(&d, 0.3, 2)).unwrap();
        assert_eq!(resumed.state().hierarchy().to_canonical_json(), expected, "cut at {cut}");
        let kinds = |es: &[SessionEvent]| es.iter().map(|e| e.kind.clone()).collect::<Vec<_>>();
        assert_eq!(kinds(&resumed.log().events), kinds(&events), "cut at {cut}");
    }
}

#[test]
fn crash_between_create_and_assign() {
    // bootstrap session: the first object creates a category
    let d = small();
    let mut s = Session::create(config(&d), &d.manifest, None, MemoryLog::new()).unwrap();
    let mut oracle = oracle(&d, 0.0, 0);
    let prompt = s.pending().unwrap().clone();
    let Prompt::NewCategory(req) = &prompt else { panic!("{prompt:?}") };
    let decision = oracle.describe_new(req).unwrap();
    s.answer(Answer {
        seq: prompt.seq(),
        response: Response::NewCategory(decision),
    })
    .unwrap();
    let events = s.log().events.clone();
    let created = events
        .iter()
        .position(|e| matches!(e.kind, EventKind::CategoryCreated { .. }))
        .unwrap();
    assert!(matches!(events[created + 1].kind, EventKind::ObjectAssigned { .. }));
    let prefix = &events[..=created];
    let resumed = Session::resume(config(&d), prefix, MemoryLog::new()).unwrap();
    assert_eq!(resumed.state().transcripts().len(), 1);
    assert_eq!(
        resumed.state().transcripts()[0].outcome,
        s.state().transcripts()[0].outcome
    );
    assert_eq!(resumed.state().hierarchy().len(), 2);
}

#[test]
fn tampered_events_are_rejected() {
    let d = small();
    let mut s = seeded(&d);
    s.run_with(&mut oracle(&d, 0.0, 0)).unwrap();
    let mut events = s.log().events.clone();
    let i = events
        .iter()
        .position(|e| matches!(e.kind, EventKind::ObjectAssigned { .. }))
        .unwrap();
    if let EventKind::ObjectAssigned { category, .. } = &mut events[i].kind {
        *category = CategoryId(category.0 % 9 + 1);
    }
    assert!(matches!(
        SessionState::replay(config(&d), &events),
        Err(SessionError::InvalidEvent { .. })
    ));
}

#[test]
fn unavailable_oracle_aborts_episode() {
    let d = small();
    let mut s = seeded(&d);
    // one answer, then the script runs dry for every later prompt
    s.run_with(&mut ScriptedOracle::new([false])).unwrap();
    assert!(s.is_done());
    let stats = s.state().stats();
    assert_eq!(stats.assigned, 0);
    assert_eq!(stats.aborted, 11);
    let export = s.export();
    assert!(export.rows.is_empty());
    assert_eq!(export.unassigned.len(), 11);
    assert!(export.unassigned.iter().all(|u| u.status == "aborted"));
    assert_eq!(
        s.state().hierarchy().to_canonical_json(),
        d.reference.skeleton().to_canonical_json()
    );
}

#[test]
fn next_view_shows_candidate_and_exemplars() {
    let d = small();
    let mut s = seeded(&d);
    let mut o = oracle(&d, 0.0, 0);
    // label a few objects, then inspect the pending prompt
    for _ in 0..12 {
        let Some(p) = s.pending().cloned() else { break };
        let response = match &p {
            Prompt::Question(q) => Response::Verdict(o.answer(q).unwrap()),
            Prompt::NewCategory(r) => Response::NewCategory(o.describe_new(r).unwrap()),
        };
        s.answer(Answer { seq: p.seq(), response }).unwrap();
    }
    let view = s.state().next_view();
    assert!(!view.done);
    let prompt = view.prompt.clone().unwrap();
    assert_eq!(view.object.as_ref().unwrap().object_id, *prompt.object_id());
    let cat = view.category.unwrap();
    assert!(cat.exemplars.len() <= MAX_EXEMPLARS);
    let subtree = s.state().hierarchy().subtree(cat.category);
    for e in &cat.exemplars {
        let c = s.state().hierarchy().category_of(&e.object_id).unwrap();
        assert!(subtree.contains(&c));
    }
    // newest first
    let order: Vec<_> = s.state().transcripts().iter().map(|t| t.object_id.clone()).collect();
    let pos: Vec<_> = cat
        .exemplars
        .iter()
        .map(|e| order.iter().position(|o| *o == e.object_id).unwrap())
        .collect();
    assert!(pos.windows(2).all(|w| w[0] > w[1]));
}

#[test]
fn empty_session_exports_headers_only() {
    let d = small();
    let s = Session::new(config(&d), MemoryLog::new()).unwrap();
    let export = s.export();
    for (name, text) in export.to_files() {
        if name.ends_with(".jsonl") {
            assert_eq!(text.lines().count(), 1, "{name}");
        }
    }
    let dir = tempfile::tempdir().unwrap();
    export.write_dir(dir.path()).unwrap();
    assert_eq!(DatasetExport::read_dir(dir.path()).unwrap(), export);
}

#[test]
fn export_round_trip_is_byte_identical() {
    let d = small();
    let mut s = seeded(&d);
    s.run_with(&mut oracle(&d, 0.1, 4)).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    s.export().write_dir(a.path()).unwrap();
    DatasetExport::read_dir(a.path()).unwrap().write_dir(b.path()).unwrap();
    for (name, text) in s.export().to_files() {
        assert_eq!(std::fs::read_to_string(b.path().join(name)).unwrap(), text, "{name}");
    }
    let transcript: serde_json::Value =
        serde_json::from_str(s.export().to_files()[2].1.lines().nth(1).unwrap()).unwrap();
    let keys: Vec<_> = transcript.as_object().unwrap().keys().cloned().collect();
    assert_eq!(keys, ["object_id", "outcome", "steps"]);
    let step = &transcript["steps"][0];
    for k in ["seq", "kind", "category", "verdict"] {
        assert!(step.get(k).is_some(), "{k}");
    }
    for k in ["type", "category", "path"] {
        assert!(transcript["outcome"].get(k).is_some(), "{k}");
    }
}

#[test]
fn file_log_round_trip_and_torn_tail() {
    let d = small();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s1/events.jsonl");
    let log = FileLog::create(&path, &config(&d)).unwrap();
    let mut s = Session::create(config(&d), &d.manifest, Some(&d.reference), log).unwrap();
    s.run_with(&mut oracle(&d, 0.1, 9)).unwrap();
    let live = s.state().hierarchy().to_canonical_json();
    drop(s);

    let (_, cfg, events) = FileLog::open(&path).unwrap();
    assert_eq!(cfg, config(&d));
    let first: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&path).unwrap().lines().nth(1).unwrap()).unwrap();
    assert_eq!(first["seq"], 1);
    assert_eq!(first["kind"], "CategoryCreated");
    assert_eq!(first["payload"]["descriptors"]["name"], "category 1");
    let manifest: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&path).unwrap().lines().nth(10).unwrap()).unwrap();
    assert_eq!(manifest["kind"], "ManifestLoaded");
    assert!(manifest["payload"]["records"].is_array());
    assert_eq!(SessionState::replay(cfg.clone(), &events).unwrap().hierarchy().to_canonical_json(), live);

    // simulate a crash mid-write of one more line
    let full = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("{full}{{\"seq\":99,\"times")).unwrap();
    let (log, _, again) = FileLog::open(&path).unwrap();
    assert_eq!(again, events);
    drop(log);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), full);

    assert!(matches!(FileLog::create(&path, &cfg), Err(LogError::Exists(_))));
}
