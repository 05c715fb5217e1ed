//! Task progress manager: needle/tissue topology graph plus the clockwise
//! eight-pair protocol.
//!
//! Topology states: `S0` through no target, `S1` through the entry only,
//! `S2` through both, `S3` through the exit only. Forward edges walk
//! S0→S1→S2→S3→S0, retraction edges walk back one step, and protocol
//! deviations are self-loops that only get logged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{chord_arc, ArcPath, GeometryError, Vec3};
use crate::task::{SimEvent, SimEventKind, Site, TargetPair, TaskConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TpmError {
    #[error("event at tick {tick} references unknown target {index}")]
    UnknownTarget { tick: u64, index: usize },
    #[error("task complete: no active segment")]
    NoActiveSegment,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NeedleTopoState {
    S0,
    S1,
    S2,
    S3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Setup,
    Driving,
    Withdrawn,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Forward,
    Retraction,
}

/// Every topology edge the manager may take.
pub const DECLARED_EDGES: [(NeedleTopoState, NeedleTopoState, EdgeKind); 7] = {
    use EdgeKind::*;
    use NeedleTopoState::*;
    [
        (S0, S1, Forward),
        (S1, S2, Forward),
        (S2, S3, Forward),
        (S3, S0, Forward),
        (S1, S0, Retraction),
        (S2, S1, Retraction),
        (S3, S2, Retraction),
    ]
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviationKind {
    OffTargetPierce,
    WrongOrderTarget,
    ReverseDirection,
    TipGrasp,
    OutOfRangeGrasp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolDeviation {
    pub kind: DeviationKind,
    pub tick: u64,
    pub detail: String,
}

/// Grasp-quality limits for setup grasps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpmRules {
    /// Grasps closer to the tip than this count as tip grasps.
    pub tip_grasp_limit: f64,
    pub grasp_range: (f64, f64),
    /// Allowed distance outside `grasp_range` before a grasp is out of range.
    pub grasp_slack: f64,
}

impl Default for TpmRules {
    fn default() -> Self {
        TpmRules { tip_grasp_limit: 15.0, grasp_range: (135.0, 165.0), grasp_slack: 30.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetupGrasp {
    pub theta: f64,
    pub orientation_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProgress {
    pub segment_index: usize,
    pub topo: NeedleTopoState,
    pub phase: Phase,
    pub deviations: Vec<ProtocolDeviation>,
    pub retractions: u32,
    pub rules: TpmRules,
    /// Grasp taken during setup and still held; becomes the drive-initiating grasp.
    pub setup_grasp: Option<SetupGrasp>,
    /// The active entry has already been pierced in this segment.
    pub entry_pierced: bool,
}

impl Default for TaskProgress {
    fn default() -> Self {
        TaskProgress::new(TpmRules::default())
    }
}

impl TaskProgress {
    pub fn new(rules: TpmRules) -> Self {
        TaskProgress::starting_at(0, rules)
    }

    /// Fresh progress positioned at the start of `segment`.
    pub fn starting_at(segment: usize, rules: TpmRules) -> Self {
        TaskProgress {
            segment_index: segment,
            topo: NeedleTopoState::S0,
            phase: Phase::Setup,
            deviations: Vec::new(),
            retractions: 0,
            rules,
            setup_grasp: None,
            entry_pierced: false,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.phase == Phase::Complete
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum TpmEventKind {
    Transition { from: NeedleTopoState, to: NeedleTopoState, edge: EdgeKind },
    Deviation { deviation: DeviationKind, detail: String },
    RePierce { target: usize },
    DriveStart { segment: usize, grasp: Option<SetupGrasp> },
    SegmentComplete { segment: usize },
    TaskComplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpmEvent {
    pub tick: u64,
    pub kind: TpmEventKind,
}

fn check_site(site: Site, tick: u64, config: &TaskConfig) -> Result<(), TpmError> {
    match site.target_index() {
        Some(index) if index >= config.n_pairs => Err(TpmError::UnknownTarget { tick, index }),
        _ => Ok(()),
    }
}

/// Folds one tick's simulation events into the progress state.
pub fn advance(
    progress: &TaskProgress,
    events: &[SimEvent],
    config: &TaskConfig,
) -> Result<(TaskProgress, Vec<TpmEvent>), TpmError> {
    use NeedleTopoState::*;

    let mut p = progress.clone();
    let mut out = Vec::new();
    for ev in events {
        if p.is_complete() {
            break;
        }
        let tick = ev.tick;
        let cur = p.segment_index;
        let transition = |p: &mut TaskProgress, out: &mut Vec<TpmEvent>, to: NeedleTopoState, edge: EdgeKind| {
            out.push(TpmEvent { tick, kind: TpmEventKind::Transition { from: p.topo, to, edge } });
            if edge == EdgeKind::Retraction {
                p.retractions += 1;
            }
            p.topo = to;
            p.phase = match (to, edge) {
                (S0, EdgeKind::Retraction) => Phase::Withdrawn,
                (S0, EdgeKind::Forward) => Phase::Setup,
                _ => Phase::Driving,
            };
        };
        let deviate = |p: &mut TaskProgress, out: &mut Vec<TpmEvent>, kind: DeviationKind, detail: String| {
            p.deviations.push(ProtocolDeviation { kind, tick, detail: detail.clone() });
            out.push(TpmEvent { tick, kind: TpmEventKind::Deviation { deviation: kind, detail } });
        };

        match &ev.kind {
            SimEventKind::GraspStart { theta, orientation_dev, .. } => {
                if p.topo != S0 {
                    continue;
                }
                p.setup_grasp = Some(SetupGrasp { theta: *theta, orientation_dev: *orientation_dev });
                let (lo, hi) = p.rules.grasp_range;
                if *theta < p.rules.tip_grasp_limit {
                    deviate(&mut p, &mut out, DeviationKind::TipGrasp, format!("grasp at {theta:.1}°"));
                } else if *theta < lo - p.rules.grasp_slack || *theta > hi + p.rules.grasp_slack {
                    deviate(&mut p, &mut out, DeviationKind::OutOfRangeGrasp, format!("grasp at {theta:.1}°"));
                }
            }
            SimEventKind::GraspEnd { .. } => {
                if p.topo == S0 {
                    p.setup_grasp = None;
                }
            }
            SimEventKind::Pierce { site, .. } => {
                check_site(*site, tick, config)?;
                match (p.topo, *site) {
                    (S0, Site::Entry(i)) if i == cur => {
                        if p.entry_pierced {
                            out.push(TpmEvent { tick, kind: TpmEventKind::RePierce { target: i } });
                        }
                        p.entry_pierced = true;
                        transition(&mut p, &mut out, S1, EdgeKind::Forward);
                        out.push(TpmEvent {
                            tick,
                            kind: TpmEventKind::DriveStart { segment: cur, grasp: p.setup_grasp },
                        });
                    }
                    (S0, Site::Exit(i)) if i == cur => {
                        deviate(&mut p, &mut out, DeviationKind::ReverseDirection, format!("pierced exit {i} first"));
                    }
                    (S0, Site::Entry(i) | Site::Exit(i)) => {
                        deviate(
                            &mut p,
                            &mut out,
                            DeviationKind::WrongOrderTarget,
                            format!("target {i} while segment {cur} active"),
                        );
                    }
                    (S0, Site::Off) => {
                        deviate(&mut p, &mut out, DeviationKind::OffTargetPierce, "pierce away from targets".into());
                    }
                    (S2, Site::Exit(i)) if i == cur => {
                        transition(&mut p, &mut out, S1, EdgeKind::Retraction);
                    }
                    _ => {}
                }
            }
            SimEventKind::TipExit { site, .. } => {
                check_site(*site, tick, config)?;
                if p.topo != S1 {
                    continue;
                }
                match *site {
                    Site::Exit(i) if i == cur => transition(&mut p, &mut out, S2, EdgeKind::Forward),
                    Site::Entry(i) if i == cur => transition(&mut p, &mut out, S0, EdgeKind::Retraction),
                    _ => deviate(&mut p, &mut out, DeviationKind::OffTargetPierce, "tip exited away from target".into()),
                }
            }
            SimEventKind::TailExit { .. } => {
                if p.topo == S2 {
                    transition(&mut p, &mut out, S3, EdgeKind::Forward);
                }
            }
            SimEventKind::TailReenter { .. } => {
                if p.topo == S3 {
                    transition(&mut p, &mut out, S2, EdgeKind::Retraction);
                }
            }
            SimEventKind::NeedleFree => match p.topo {
                S3 => {
                    transition(&mut p, &mut out, S0, EdgeKind::Forward);
                    out.push(TpmEvent { tick, kind: TpmEventKind::SegmentComplete { segment: cur } });
                    p.segment_index += 1;
                    p.setup_grasp = None;
                    p.entry_pierced = false;
                    if p.segment_index >= config.n_pairs {
                        p.phase = Phase::Complete;
                        out.push(TpmEvent { tick, kind: TpmEventKind::TaskComplete });
                    }
                }
                // Pulled straight back out of the entry.
                S1 => transition(&mut p, &mut out, S0, EdgeKind::Retraction),
                _ => {}
            },
            SimEventKind::IconActivated { .. }
            | SimEventKind::ForceExceedStart { .. }
            | SimEventKind::ForceExceedEnd { .. } => {}
        }
    }
    Ok((p, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentContext {
    pub pair: TargetPair,
    pub ideal_arc: ArcPath,
    /// Unit vector from entry toward exit.
    pub drive_direction: Vec3,
    pub phase: Phase,
}

pub fn segment_context(index: usize, phase: Phase, config: &TaskConfig) -> Result<SegmentContext, TpmError> {
    if index >= config.n_pairs {
        return Err(TpmError::NoActiveSegment);
    }
    let pair = config.target(index);
    let ideal_arc = chord_arc(pair.entry, pair.exit, config.needle.radius, config.surface_normal)?;
    let drive_direction = (pair.exit - pair.entry).normalized()?;
    Ok(SegmentContext { pair, ideal_arc, drive_direction, phase })
}

pub fn current_context(progress: &TaskProgress, config: &TaskConfig) -> Result<SegmentContext, TpmError> {
    if progress.is_complete() {
        return Err(TpmError::NoActiveSegment);
    }
    segment_context(progress.segment_index, progress.phase, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{default_task_config, Side};
    use NeedleTopoState::*;

    fn ev(tick: u64, kind: SimEventKind) -> SimEvent {
        SimEvent { tick, kind }
    }

    fn pierce(site: Site) -> SimEventKind {
        SimEventKind::Pierce { site, location: Vec3::ZERO }
    }

    fn tip_exit(site: Site) -> SimEventKind {
        SimEventKind::TipExit { site, location: Vec3::ZERO }
    }

    #[test]
    fn forward_pass_completes_segment() {
        let c = default_task_config();
        let p = TaskProgress::default();
        let (p, out) = advance(&p, &[ev(1, pierce(Site::Entry(0)))], &c).unwrap();
        assert_eq!((p.topo, p.phase), (S1, Phase::Driving));
        assert!(out.iter().any(|e| matches!(e.kind, TpmEventKind::DriveStart { segment: 0, .. })));
        let (p, _) = advance(&p, &[ev(2, tip_exit(Site::Exit(0)))], &c).unwrap();
        assert_eq!(p.topo, S2);
        let (p, _) = advance(&p, &[ev(3, SimEventKind::TailExit { location: Vec3::ZERO })], &c).unwrap();
        assert_eq!(p.topo, S3);
        let (p, out) = advance(&p, &[ev(4, SimEventKind::NeedleFree)], &c).unwrap();
        assert_eq!((p.topo, p.phase, p.segment_index), (S0, Phase::Setup, 1));
        assert!(out.iter().any(|e| e.kind == TpmEventKind::SegmentComplete { segment: 0 }));
        assert_eq!(p.retractions, 0);
        assert!(p.deviations.is_empty());
    }

    #[test]
    fn tip_backing_out_of_entry_is_a_retraction() {
        let c = default_task_config();
        let (p, _) = advance(&TaskProgress::default(), &[ev(1, pierce(Site::Entry(0)))], &c).unwrap();
        let (p, _) = advance(&p, &[ev(2, tip_exit(Site::Entry(0)))], &c).unwrap();
        assert_eq!((p.topo, p.phase, p.retractions), (S0, Phase::Withdrawn, 1));
        let (p, out) = advance(&p, &[ev(3, pierce(Site::Entry(0)))], &c).unwrap();
        assert_eq!(p.topo, S1);
        assert!(out.iter().any(|e| e.kind == TpmEventKind::RePierce { target: 0 }));
    }

    #[test]
    fn deviation_edges() {
        let c = default_task_config();
        let p0 = TaskProgress::default();
        let (p, out) = advance(&p0, &[ev(1, pierce(Site::Entry(3)))], &c).unwrap();
        assert_eq!(p.topo, S0);
        assert_eq!(p.deviations[0].kind, DeviationKind::WrongOrderTarget);
        assert_eq!(p.deviations[0].tick, 1);
        assert_eq!(out.len(), 1);
        let (p, _) = advance(&p0, &[ev(1, pierce(Site::Exit(0)))], &c).unwrap();
        assert_eq!(p.deviations[0].kind, DeviationKind::ReverseDirection);
        let (p, _) = advance(&p0, &[ev(1, pierce(Site::Off))], &c).unwrap();
        assert_eq!(p.deviations[0].kind, DeviationKind::OffTargetPierce);
        let grasp = |theta| SimEventKind::GraspStart { side: Side::Right, theta, orientation_dev: 0.0 };
        let (p, _) = advance(&p0, &[ev(1, grasp(10.0))], &c).unwrap();
        assert_eq!(p.deviations[0].kind, DeviationKind::TipGrasp);
        let (p, _) = advance(&p0, &[ev(1, grasp(100.0))], &c).unwrap();
        assert_eq!(p.deviations[0].kind, DeviationKind::OutOfRangeGrasp);
        let (p, _) = advance(&p0, &[ev(1, grasp(110.0))], &c).unwrap();
        assert!(p.deviations.is_empty());
        assert_eq!(p.setup_grasp.unwrap().theta, 110.0);
    }

    #[test]
    fn unknown_target_is_an_error() {
        let c = default_task_config();
        let r = advance(&TaskProgress::default(), &[ev(9, pierce(Site::Entry(8)))], &c);
        assert_eq!(r, Err(TpmError::UnknownTarget { tick: 9, index: 8 }));
    }

    #[test]
    fn context_for_segments() {
        let c = default_task_config();
        let ctx = current_context(&TaskProgress::default(), &c).unwrap();
        assert_eq!(ctx.pair.index, 0);
        assert_eq!(ctx.phase, Phase::Setup);
        // normalize((0,25,0) − (0,15,0))
        assert!(ctx.drive_direction.distance(Vec3::new(0.0, 1.0, 0.0)) < 1e-12);
        assert!(ctx.ideal_arc.center.distance(Vec3::new(0.0, 20.0, 11f64.sqrt())) < 1e-12);
        let mut done = TaskProgress::default();
        done.phase = Phase::Complete;
        done.segment_index = 8;
        assert_eq!(current_context(&done, &c), Err(TpmError::NoActiveSegment));
    }
}
