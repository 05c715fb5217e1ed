use vcoach_core::clips::{ClipError, ClipStore};
use vcoach_core::metrics::{segment_arcs, segment_metrics};
use vcoach_core::session::event_records;
use vcoach_core::synth::{synth_participant, SESSION_LABELS};
use vcoach_core::{
    default_task_config, replay, synth_session, CoachingMode, Engine, SessionLog, StudyPlan, SynthProfile,
};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn experts_never_deviate_from_protocol() {
    let cfg = default_task_config();
    let p = SynthProfile::expert();
    for seed in 1..=100 {
        let log = synth_session(&p, &cfg, CoachingMode::None, seed).unwrap();
        let devs: Vec<_> = log.events().filter(|e| e.kind == "Deviation").collect();
        assert!(devs.is_empty(), "seed {seed}: {devs:?}");
        assert!(log.events().any(|e| e.kind == "TaskComplete"));
        assert_eq!(log.footer.metrics.excess_needle_pierces, 0);
    }
}

#[test]
fn novice_deficits_dominate_expert_deficits() {
    let cfg = default_task_config();
    let pull = |p: &SynthProfile| -> Vec<[f64; 4]> {
        (1..=20)
            .map(|s| {
                let m = synth_session(p, &cfg, CoachingMode::None, s).unwrap().footer.metrics;
                [m.grasp_position_dev, m.grasp_orientation_dev, m.in_plane_dev, m.out_plane_dev].map(Option::unwrap)
            })
            .collect()
    };
    let (ex, nov) = (pull(&SynthProfile::expert()), pull(&SynthProfile::novice()));
    for k in 0..4 {
        let mut e: Vec<f64> = ex.iter().map(|r| r[k]).collect();
        let mut n: Vec<f64> = nov.iter().map(|r| r[k]).collect();
        e.sort_by(f64::total_cmp);
        n.sort_by(f64::total_cmp);
        // First-order dominance of the empirical distributions: every quantile is larger.
        assert!(e.iter().zip(&n).all(|(a, b)| b > a), "metric {k}: {e:?} vs {n:?}");
    }
    let go = |rows: &[[f64; 4]]| mean(&rows.iter().map(|r| r[1]).collect::<Vec<_>>());
    assert!(go(&ex) < 5.0);
    assert!(go(&nov) > 15.0);
}

#[test]
fn generation_is_deterministic_per_seed() {
    let cfg = default_task_config();
    let a = synth_session(&SynthProfile::expert(), &cfg, CoachingMode::Teach, 7).unwrap();
    let b = synth_session(&SynthProfile::expert(), &cfg, CoachingMode::Teach, 7).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let c = synth_session(&SynthProfile::expert(), &cfg, CoachingMode::Teach, 8).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn study_plan_sessions_replay_faithfully() {
    let cfg = default_task_config();
    let plan = StudyPlan::Study.sessions();
    let logs = synth_participant(&SynthProfile::novice(), &cfg, &plan, "novice-3", 3).unwrap();
    assert_eq!(logs.len(), 5);
    for (log, label) in logs.iter().zip(SESSION_LABELS) {
        assert_eq!(log.header.label, label);
        let text = log.to_bytes();
        let parsed = SessionLog::parse(std::str::from_utf8(&text).unwrap()).unwrap();
        assert_eq!(parsed.to_bytes(), text);
        let r = replay(&parsed).unwrap();
        assert!(r.is_faithful(), "{label}: {r:?}");
        assert_eq!(r.metrics, log.footer.metrics);
        assert_eq!(log.recompute_metrics().unwrap(), log.footer.metrics);
    }
}

#[test]
fn online_segment_metrics_match_offline_recomputation() {
    let cfg = default_task_config();
    let log = synth_session(&SynthProfile::novice(), &cfg, CoachingMode::Metrics, 4).unwrap();
    let mut engine = Engine::new(cfg.clone(), log.header.engine_options()).unwrap();
    let mut tpm = Vec::new();
    for t in log.ticks() {
        let out = engine.tick(&t.input()).unwrap();
        let _ = event_records(&out);
        tpm.extend(out.tpm_events);
    }
    let offline = segment_metrics(engine.samples(), &tpm, &segment_arcs(&cfg), cfg.tick_rate);
    assert_eq!(offline.len(), cfg.n_pairs);
    assert_eq!(engine.segments(), offline.as_slice());
    assert_eq!(engine.segments(), log.footer.segments.as_slice());
}

#[test]
fn summary_reader_matches_full_parse() {
    let cfg = default_task_config();
    let log = synth_session(&SynthProfile::expert(), &cfg, CoachingMode::None, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.vcs");
    log.save(&path).unwrap();
    let (header, footer) = SessionLog::read_summary(&path).unwrap();
    assert_eq!(header, log.header);
    assert_eq!(footer, log.footer);
    assert_eq!(SessionLog::load(&path).unwrap(), log);

    let text = std::fs::read_to_string(&path).unwrap();
    let cut: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
    std::fs::write(&path, cut).unwrap();
    assert!(SessionLog::read_summary(&path).is_err());
}

#[test]
fn clip_store_serves_validated_expert_segments() {
    let cfg = default_task_config();
    let log = synth_session(&SynthProfile::expert(), &cfg, CoachingMode::None, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = ClipStore::build(dir.path(), &log).unwrap();
    let reopened = ClipStore::open(dir.path()).unwrap();
    assert_eq!(reopened.index(), store.index());
    let mut total = 0;
    for seg in 0..cfg.n_pairs {
        let clip = reopened.expert_clip(seg).unwrap();
        assert_eq!(clip.segment, seg);
        assert!(clip.duration_s() > 1.0);
        total += clip.frames.len();
    }
    let completed_at = log.events().filter(|e| e.kind == "SegmentComplete").last().unwrap().t;
    assert_eq!(total as u64, completed_at);
    for seg in &log.footer.segments {
        assert!(seg.grasp_orientation_dev.unwrap() < 5.0 && seg.grasp_position_dev.unwrap() < 5.0);
        assert!(seg.in_plane_dev.unwrap() < 0.3 && seg.out_plane_dev.unwrap() < 0.3);
    }
    assert!(matches!(reopened.expert_clip(8), Err(ClipError::OutOfRange { segment: 8, count: 8 })));

    let novice = synth_session(&SynthProfile::novice(), &cfg, CoachingMode::None, 1).unwrap();
    let other = tempfile::tempdir().unwrap();
    assert!(matches!(ClipStore::build(other.path(), &novice), Err(ClipError::Rejected(_))));
}
