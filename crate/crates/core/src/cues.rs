//! The six teaching cues: geometry payloads and the show/hide lifecycle.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coach::Intervention;
use crate::geometry::{needle_normal, needle_point, orientation_deviation, ArcPath, NeedleModel, Pose, UnitQuat, Vec3};
use crate::task::{ideal_grasp_pose, Icon, Instrument, Side};
use crate::tpm::{EdgeKind, NeedleTopoState, SegmentContext, TpmEvent, TpmEventKind};

/// Lower and upper grasp-position markers, degrees from the tip.
pub const GRASP_RANGE: (f64, f64) = (135.0, 165.0);
/// Centre of the grasp range, where the ghost gripper sits.
pub const IDEAL_GRASP_ANGLE: f64 = 150.0;
pub const FLASH_PERIOD_S: f64 = 0.5;
pub const PLAYBACK_SECONDS: f64 = 10.0;
pub const PLAYBACK_LIFT_MM: f64 = 30.0;
/// Score gap below which the ideal-instrument choice falls back to handedness.
pub const INSTRUMENT_TIE_DEG: f64 = 10.0;

const ALPHA_FULL_ANGLE: f64 = 30.0;
const ALPHA_FULL_DISTANCE: f64 = 10.0;
const HIDE_ANGLE: f64 = 3.0;
const HIDE_DISTANCE: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CueError {
    #[error("no trajectory to play back")]
    EmptyTrajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CueKind {
    IdealInstrument,
    GraspPosition,
    GraspOrientation,
    IdealDrivePath,
    TrajectoryPlayback,
    VideoDemo,
}

impl CueKind {
    pub const ALL: [CueKind; 6] = [
        CueKind::IdealInstrument,
        CueKind::GraspPosition,
        CueKind::GraspOrientation,
        CueKind::IdealDrivePath,
        CueKind::TrajectoryPlayback,
        CueKind::VideoDemo,
    ];

    /// Cues shown while setting up a pass; hidden on pierce.
    pub const SETUP: [CueKind; 3] = [CueKind::IdealInstrument, CueKind::GraspPosition, CueKind::GraspOrientation];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoPlacement {
    SideView,
    InSitu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhostCue {
    pub ghost: Pose,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackCue {
    pub polyline: Vec<Vec3>,
    /// Seconds from the first sample, one per polyline point.
    pub schedule: Vec<f64>,
    pub ideal: ArcPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CuePayload {
    IdealInstrument { side: Side, sphere: Vec3 },
    GraspPosition { spheres: [Vec3; 2], flash_period: f64 },
    GraspOrientation { ghost: Pose, alpha: f64 },
    IdealDrivePath { arc: ArcPath },
    TrajectoryPlayback { polyline: Vec<Vec3>, schedule: Vec<f64>, ideal: ArcPath },
    VideoDemo { segment: usize, placement: VideoPlacement },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueDescriptor {
    pub kind: CueKind,
    pub visible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub payload: CuePayload,
}

/// Per-side alignment score (degrees) between each arm's base direction and
/// the approach direction required at this pair.
pub fn instrument_scores(context: &SegmentContext, instruments: &[Instrument; 2]) -> [f64; 2] {
    let approach = context.ideal_arc.plane_normal;
    instruments.map(|i| {
        let b = i.base_direction.normalized().unwrap_or(Vec3::Z);
        b.dot(approach).clamp(-1.0, 1.0).acos().to_degrees()
    })
}

pub fn ideal_instrument(context: &SegmentContext, instruments: &[Instrument; 2], handedness: Side) -> Side {
    let [left, right] = instrument_scores(context, instruments);
    if (left - right).abs() < INSTRUMENT_TIE_DEG {
        handedness
    } else if left < right {
        Side::Left
    } else {
        Side::Right
    }
}

pub fn grasp_position_cue(needle_pose: &Pose, model: &NeedleModel) -> [Vec3; 2] {
    // Both markers lie inside any valid span (span ≥ 165°).
    [GRASP_RANGE.0, GRASP_RANGE.1].map(|a| needle_point(needle_pose, model, a).expect("marker within span"))
}

pub fn grasp_orientation_cue(needle_pose: &Pose, model: &NeedleModel, gripper: &Pose) -> GhostCue {
    let ghost = ideal_grasp_pose(needle_pose, model, IDEAL_GRASP_ANGLE).expect("ideal angle within span");
    let angular = orientation_deviation(gripper.axis_z(), needle_normal(needle_pose)).unwrap_or(90.0);
    let positional = gripper.position.distance(ghost.position);
    let alpha = if angular < HIDE_ANGLE && positional < HIDE_DISTANCE {
        0.0
    } else {
        (angular / ALPHA_FULL_ANGLE).max(positional / ALPHA_FULL_DISTANCE).clamp(0.0, 1.0)
    };
    GhostCue { ghost, alpha }
}

pub fn ideal_path_cue(context: &SegmentContext) -> ArcPath {
    context.ideal_arc
}

/// Lifts the recorded tip trajectory above the surface and turns it to face
/// the camera, carrying the ideal arc along under the same transform.
pub fn playback_cue(
    trajectory: &[(u64, Vec3)],
    ideal: &ArcPath,
    camera_forward: Vec3,
    surface_normal: Vec3,
    tick_rate: f64,
) -> Result<PlaybackCue, CueError> {
    let Some(&(t0, _)) = trajectory.first() else {
        return Err(CueError::EmptyTrajectory);
    };
    let lift = surface_normal * PLAYBACK_LIFT_MM;
    let lifted: Vec<Vec3> = trajectory.iter().map(|(_, p)| *p + lift).collect();
    let centroid = lifted.iter().fold(Vec3::ZERO, |a, p| a + *p) * (1.0 / lifted.len() as f64);
    let facing = match camera_forward.normalized() {
        Ok(f) if ideal.plane_normal.dot(f) > 0.0 => f,
        Ok(f) => -f,
        Err(_) => ideal.plane_normal,
    };
    let rot = UnitQuat::rotation_between(ideal.plane_normal, facing);
    let polyline = lifted.iter().map(|p| centroid + rot.rotate(*p - centroid)).collect();
    let schedule = trajectory.iter().map(|(t, _)| (t - t0) as f64 / tick_rate).collect();
    let lifted_arc = ArcPath { center: ideal.center + lift, ..*ideal };
    Ok(PlaybackCue { polyline, schedule, ideal: lifted_arc.transformed(rot, centroid, Vec3::ZERO) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueChange {
    pub kind: CueKind,
    pub shown: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueLifecycle {
    pub active: BTreeSet<CueKind>,
    /// Setup cues wanted: from segment start until the first pierce.
    pub setup_window: bool,
    /// Drive-path cue wanted: from segment start until the needle comes free.
    pub path_window: bool,
    /// First tick at which playback is no longer shown.
    pub playback_deadline: Option<u64>,
    pub video_placement: VideoPlacement,
}

impl Default for CueLifecycle {
    fn default() -> Self {
        CueLifecycle {
            active: BTreeSet::new(),
            setup_window: true,
            path_window: true,
            playback_deadline: None,
            video_placement: VideoPlacement::SideView,
        }
    }
}

/// Applies one tick of TPM events, icon activations and coach authorization.
pub fn update_cues(
    lifecycle: &CueLifecycle,
    tpm_events: &[TpmEvent],
    decisions: &Intervention,
    icon_events: &[Icon],
    tick: u64,
    tick_rate: f64,
) -> (CueLifecycle, Vec<CueChange>) {
    let mut lc = lifecycle.clone();
    for ev in tpm_events {
        match ev.kind {
            TpmEventKind::Transition { from: NeedleTopoState::S0, to: NeedleTopoState::S1, edge: EdgeKind::Forward } => {
                lc.setup_window = false;
            }
            TpmEventKind::SegmentComplete { .. } => {
                lc.playback_deadline = Some(ev.tick + (PLAYBACK_SECONDS * tick_rate).round() as u64);
                lc.setup_window = true;
                lc.path_window = true;
            }
            TpmEventKind::TaskComplete => {
                lc.setup_window = false;
                lc.path_window = false;
            }
            _ => {}
        }
    }
    for icon in icon_events {
        match icon {
            Icon::Dismiss => lc.playback_deadline = None,
            Icon::Video => {
                lc.video_placement = match lc.video_placement {
                    VideoPlacement::SideView => VideoPlacement::InSitu,
                    VideoPlacement::InSitu => VideoPlacement::SideView,
                }
            }
            Icon::Help => {}
        }
    }
    if lc.playback_deadline.is_some_and(|d| tick >= d) {
        lc.playback_deadline = None;
    }

    let authorized = |k: CueKind| decisions.authorized.contains(&k);
    let playback = lc.playback_deadline.is_some() && authorized(CueKind::TrajectoryPlayback);
    let mut active = BTreeSet::new();
    for kind in CueKind::ALL {
        let wanted = match kind {
            CueKind::IdealInstrument | CueKind::GraspPosition | CueKind::GraspOrientation => {
                lc.setup_window && !playback
            }
            CueKind::IdealDrivePath => lc.path_window && !playback,
            CueKind::TrajectoryPlayback => playback,
            CueKind::VideoDemo => true,
        };
        if wanted && authorized(kind) {
            active.insert(kind);
        }
    }
    let mut changes = Vec::new();
    for kind in CueKind::ALL {
        let (was, is) = (lc.active.contains(&kind), active.contains(&kind));
        if was != is {
            changes.push(CueChange { kind, shown: is });
        }
    }
    lc.active = active;
    (lc, changes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::default_task_config;
    use crate::tpm::{segment_context, Phase};

    fn ctx() -> SegmentContext {
        segment_context(0, Phase::Setup, &default_task_config()).unwrap()
    }

    fn instruments_at(left_deg: f64, right_deg: f64, c: &SegmentContext) -> [Instrument; 2] {
        // Base directions tilted away from the approach axis by the requested angles.
        let a = c.ideal_arc.plane_normal;
        let perp = a.any_perpendicular();
        let mk = |side, deg: f64| Instrument {
            side,
            tip_pose: Pose::IDENTITY,
            jaw: 1.0,
            base_direction: UnitQuat::from_axis_angle(perp, deg).rotate(a),
        };
        [mk(Side::Left, left_deg), mk(Side::Right, right_deg)]
    }

    #[test]
    fn ideal_instrument_scoring() {
        let c = ctx();
        let inst = instruments_at(40.0, 15.0, &c);
        let s = instrument_scores(&c, &inst);
        assert!((s[0] - 40.0).abs() < 1e-9 && (s[1] - 15.0).abs() < 1e-9);
        assert_eq!(ideal_instrument(&c, &inst, Side::Left), Side::Right);
        let inst = instruments_at(20.0, 22.0, &c);
        assert_eq!(ideal_instrument(&c, &inst, Side::Left), Side::Left);
        let inst = instruments_at(30.0, 30.0, &c);
        assert_eq!(ideal_instrument(&c, &inst, Side::Right), Side::Right);
    }

    #[test]
    fn default_setup_prefers_right_arm_at_the_top_pair() {
        let cfg = default_task_config();
        let world = crate::task::WorldState::initial(&cfg);
        assert_eq!(ideal_instrument(&ctx(), &world.instruments, Side::Left), Side::Right);
    }

    #[test]
    fn grasp_markers_on_needle() {
        let m = NeedleModel::new(6.0, 180.0).unwrap();
        let [a, b] = grasp_position_cue(&Pose::IDENTITY, &m);
        let at = |deg: f64| Vec3::new(6.0 * deg.to_radians().cos(), 6.0 * deg.to_radians().sin(), 0.0);
        assert!(a.distance(at(135.0)) < 1e-12 && b.distance(at(165.0)) < 1e-12);
        let pose = Pose::new(Vec3::new(1.0, 2.0, 3.0), UnitQuat::from_axis_angle(Vec3::new(1.0, 0.0, 1.0), 50.0));
        let [ta, tb] = grasp_position_cue(&pose, &m);
        assert!(ta.distance(pose.transform_point(a)) < 1e-12);
        assert!(tb.distance(pose.transform_point(b)) < 1e-12);
        let short = NeedleModel::new(6.0, 170.0).unwrap();
        assert_eq!(grasp_position_cue(&Pose::IDENTITY, &short), [a, b]);
    }

    #[test]
    fn ghost_alpha_ramp() {
        let m = NeedleModel::new(6.0, 180.0).unwrap();
        let needle = Pose::IDENTITY;
        let ghost = ideal_grasp_pose(&needle, &m, 150.0).unwrap();
        let g = grasp_orientation_cue(&needle, &m, &ghost);
        assert_eq!(g.alpha, 0.0);
        assert!(g.ghost.position.distance(needle_point(&needle, &m, 150.0).unwrap()) < 1e-12);
        let tilt = |deg| Pose::new(ghost.position, ghost.orientation.compose(UnitQuat::from_axis_angle(Vec3::X, deg)));
        assert!((grasp_orientation_cue(&needle, &m, &tilt(30.0)).alpha - 1.0).abs() < 1e-9);
        assert!((grasp_orientation_cue(&needle, &m, &tilt(15.0)).alpha - 0.5).abs() < 1e-9);
        let far = Pose::new(ghost.position + Vec3::new(0.0, 0.0, 5.0), ghost.orientation);
        assert!((grasp_orientation_cue(&needle, &m, &far).alpha - 0.5).abs() < 1e-9);
    }

    #[test]
    fn path_cue_is_the_chord_arc() {
        let arc = ideal_path_cue(&ctx());
        assert!(arc.center.distance(Vec3::new(0.0, 20.0, 3.3166)) < 1e-4);
        assert_eq!(arc.radius, 6.0);
        assert!(arc.start_point().distance(Vec3::new(0.0, 15.0, 0.0)) < 1e-9);
        assert!(arc.end_point().distance(Vec3::new(0.0, 25.0, 0.0)) < 1e-9);
        // Drive direction: start (inner) toward end (outer).
        let ahead = arc.point_at(arc.start_angle + f64::from(arc.drive_direction) * 1.0);
        assert!(ahead.y > 15.0);
    }

    #[test]
    fn playback_geometry() {
        let c = ctx();
        let arc = c.ideal_arc;
        assert_eq!(
            playback_cue(&[], &arc, Vec3::new(0.0, 0.0, -1.0), Vec3::Z, 50.0),
            Err(CueError::EmptyTrajectory)
        );
        let n = 101;
        let traj: Vec<(u64, Vec3)> = (0..n)
            .map(|i| (10 + i as u64, arc.point_at(arc.start_angle + arc.sweep() * i as f64 / (n - 1) as f64)))
            .collect();
        let cue = playback_cue(&traj, &arc, Vec3::new(0.0, 0.0, -1.0), Vec3::Z, 50.0).unwrap();
        assert!((cue.schedule.last().unwrap() - 2.0).abs() < 1e-12);
        for p in &cue.polyline {
            let d = crate::geometry::arc_deviation(*p, &cue.ideal);
            assert!(d.in_plane < 1e-9 && d.out_plane < 1e-9);
        }
        // Camera straight down: arc plane now orthogonal to the view direction.
        assert!((cue.ideal.plane_normal.dot(Vec3::Z).abs() - 1.0).abs() < 1e-9);
        let mean_z = cue.polyline.iter().map(|p| p.z).sum::<f64>() / n as f64;
        let orig_z = traj.iter().map(|(_, p)| p.z).sum::<f64>() / n as f64;
        assert!((mean_z - orig_z - 30.0).abs() < 1e-9);
    }

    fn teach() -> Intervention {
        Intervention { authorized: CueKind::ALL.into_iter().collect(), ..Default::default() }
    }

    #[test]
    fn lifecycle_setup_then_pierce_then_playback() {
        let lc = CueLifecycle::default();
        let (lc, ch) = update_cues(&lc, &[], &teach(), &[], 1, 50.0);
        assert_eq!(ch.len(), 5);
        assert!(!lc.active.contains(&CueKind::TrajectoryPlayback));
        let pierce = TpmEvent {
            tick: 2,
            kind: TpmEventKind::Transition { from: NeedleTopoState::S0, to: NeedleTopoState::S1, edge: EdgeKind::Forward },
        };
        let (lc, ch) = update_cues(&lc, &[pierce], &teach(), &[], 2, 50.0);
        assert_eq!(ch.len(), 3);
        assert!(ch.iter().all(|c| !c.shown && CueKind::SETUP.contains(&c.kind)));
        assert!(lc.active.contains(&CueKind::IdealDrivePath));
        let done = TpmEvent { tick: 3, kind: TpmEventKind::SegmentComplete { segment: 0 } };
        let (lc, _) = update_cues(&lc, &[done], &teach(), &[], 3, 50.0);
        assert_eq!(lc.active, [CueKind::TrajectoryPlayback, CueKind::VideoDemo].into_iter().collect());
        let (lc2, _) = update_cues(&lc, &[], &teach(), &[], 502, 50.0);
        assert!(lc2.active.contains(&CueKind::TrajectoryPlayback));
        let (lc3, _) = update_cues(&lc2, &[], &teach(), &[], 503, 50.0);
        assert!(!lc3.active.contains(&CueKind::TrajectoryPlayback));
        assert_eq!(lc3.active.len(), 5);
        // Dismiss icon ends playback early.
        let (lc4, _) = update_cues(&lc, &[], &teach(), &[Icon::Dismiss], 10, 50.0);
        assert!(!lc4.active.contains(&CueKind::TrajectoryPlayback));
    }

    #[test]
    fn video_icon_toggles_placement() {
        let lc = CueLifecycle::default();
        let (lc, _) = update_cues(&lc, &[], &teach(), &[Icon::Video], 1, 50.0);
        assert_eq!(lc.video_placement, VideoPlacement::InSitu);
        let (lc, _) = update_cues(&lc, &[], &teach(), &[Icon::Video], 2, 50.0);
        assert_eq!(lc.video_placement, VideoPlacement::SideView);
        assert!(lc.active.contains(&CueKind::VideoDemo));
    }

    #[test]
    fn unauthorized_cues_stay_hidden() {
        let (lc, ch) = update_cues(&CueLifecycle::default(), &[], &Intervention::default(), &[], 1, 50.0);
        assert!(lc.active.is_empty() && ch.is_empty());
    }
}
