//! Scripted synthetic participants.
//!
//! A participant drives both instruments through the simulator one pass at a
//! time: grasp, carry the needle to the entry, rotate it along the ideal arc
//! with profile-specific errors, hand over, pull through. Phase durations are
//! fixed per participant and session, so timing does not depend on coaching.
//! Biases shrink after every pass in which the matching cue was on screen.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coach::{CoachingMode, ThresholdTable};
use crate::cues::{ideal_instrument, CueKind, IDEAL_GRASP_ANGLE};
use crate::engine::EngineOptions;
use crate::geometry::{ArcPath, Pose, UnitQuat, Vec3};
use crate::session::{SessionError, SessionHeader, SessionLog, SessionRecorder};
use crate::task::{ideal_grasp_pose, Icon, InputTick, Side, TaskConfig};
use crate::tpm::{segment_context, Phase, TpmError};

/// Master-side motion is this many times the instrument motion.
const MASTER_GAIN: f64 = 2.0;
const HOVER_MM: f64 = 12.0;
const PRE_ENTRY_DEG: f64 = 8.0;
const DRIVE_PAST_EXIT_DEG: f64 = 30.0;
const PULL_PAST_EXIT_DEG: f64 = 195.0;
const HANDOVER_THETA: f64 = 12.0;
const EDGE_RAMP: f64 = 0.1;
const MAX_ATTEMPTS: usize = 3;
const FALSE_START_OFFSET_MM: f64 = 3.5;
const POKE_DEPTH_MM: f64 = 1.5;
const SEGMENT_TIMEOUT_S: f64 = 120.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Tpm(#[from] TpmError),
    #[error("segment {segment}: {side:?} instrument failed to grasp the needle")]
    GraspFailed { segment: usize, side: Side },
    #[error("segment {segment} did not complete")]
    Stalled { segment: usize },
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub name: String,
    /// Degrees from the ideal grasp point, signed per participant.
    pub grasp_position_bias: f64,
    pub grasp_position_noise: f64,
    /// Gripper tilt away from the needle normal, degrees.
    pub grasp_orientation_bias: f64,
    pub grasp_orientation_noise: f64,
    /// Lateral drift off the arc plane while driving, mm.
    pub out_plane_bias: f64,
    /// Depth error while driving, mm.
    pub in_plane_bias: f64,
    pub path_noise: f64,
    /// Speed relative to the base script (1 = expert).
    pub pace: f64,
    pub pause_s: f64,
    pub false_start_rate: f64,
    pub poke_rate: f64,
    pub hesitation_rate: f64,
    /// Per-pass probability of pressing help when coaching is on demand.
    pub help_rate: f64,
    /// Relative between-participant spread of biases and pace.
    pub spread: f64,
    /// Bias factor after a pass with the matching cue visible.
    pub coaching_gain: f64,
    /// Bias factor after any pass.
    pub practice_gain: f64,
}

impl SynthProfile {
    pub fn expert() -> Self {
        SynthProfile {
            name: "expert".into(),
            grasp_position_bias: 2.0,
            grasp_position_noise: 1.0,
            grasp_orientation_bias: 2.0,
            grasp_orientation_noise: 1.0,
            out_plane_bias: 0.15,
            in_plane_bias: 0.1,
            path_noise: 0.02,
            pace: 1.0,
            pause_s: 0.15,
            false_start_rate: 0.0,
            poke_rate: 0.0,
            hesitation_rate: 0.0,
            help_rate: 0.0,
            spread: 0.1,
            coaching_gain: 1.0,
            practice_gain: 1.0,
        }
    }

    pub fn novice() -> Self {
        SynthProfile {
            name: "novice".into(),
            grasp_position_bias: 20.0,
            grasp_position_noise: 6.0,
            grasp_orientation_bias: 20.0,
            grasp_orientation_noise: 5.0,
            out_plane_bias: 1.2,
            in_plane_bias: 0.8,
            path_noise: 0.15,
            pace: 0.7,
            pause_s: 0.3,
            false_start_rate: 0.12,
            poke_rate: 0.15,
            hesitation_rate: 0.3,
            help_rate: 0.6,
            spread: 0.15,
            coaching_gain: 0.95,
            practice_gain: 0.995,
        }
    }

    pub fn by_name(name: &str) -> Result<Self, SynthError> {
        match name {
            "expert" => Ok(Self::expert()),
            "novice" => Ok(Self::novice()),
            other => Err(SynthError::UnknownProfile(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyPlan {
    /// Uncoached baseline, TEACH, METRICS, USER, uncoached final.
    Study,
    /// Five uncoached repetitions.
    Control,
}

pub const SESSION_LABELS: [&str; 5] = ["baseline", "rep2", "rep3", "rep4", "final"];

impl StudyPlan {
    pub fn sessions(self) -> [(&'static str, CoachingMode); 5] {
        let modes = match self {
            StudyPlan::Study => [
                CoachingMode::None,
                CoachingMode::Teach,
                CoachingMode::Metrics,
                CoachingMode::User,
                CoachingMode::None,
            ],
            StudyPlan::Control => [CoachingMode::None; 5],
        };
        [0, 1, 2, 3, 4].map(|i| (SESSION_LABELS[i], modes[i]))
    }
}

impl std::str::FromStr for StudyPlan {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "study" => Ok(StudyPlan::Study),
            "control" => Ok(StudyPlan::Control),
            other => Err(format!("unknown plan `{other}`")),
        }
    }
}

/// One participant's current skill, carried across sessions.
#[derive(Debug, Clone)]
struct Traits {
    handedness: Side,
    position_bias: f64,
    position_sign: f64,
    orientation_bias: f64,
    out_plane: f64,
    out_sign: f64,
    in_plane: f64,
    in_sign: f64,
    pace: f64,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

impl Traits {
    fn draw(p: &SynthProfile, rng: &mut ChaCha8Rng) -> Traits {
        let vary = |v: f64, rng: &mut ChaCha8Rng| v * (1.0 + p.spread * gauss(rng)).max(0.2);
        Traits {
            handedness: if rng.random::<f64>() < 0.9 { Side::Right } else { Side::Left },
            position_bias: vary(p.grasp_position_bias, rng),
            position_sign: sign(rng),
            orientation_bias: vary(p.grasp_orientation_bias, rng),
            out_plane: vary(p.out_plane_bias, rng),
            out_sign: sign(rng),
            in_plane: vary(p.in_plane_bias, rng),
            in_sign: sign(rng),
            pace: vary(p.pace, rng),
        }
    }

    fn learn(&mut self, exposed: &BTreeSet<CueKind>, p: &SynthProfile) {
        let g = p.practice_gain;
        let c = |k: CueKind| if exposed.contains(&k) { p.coaching_gain } else { 1.0 };
        self.position_bias *= g * c(CueKind::GraspPosition);
        self.orientation_bias *= g * c(CueKind::GraspOrientation);
        self.out_plane *= g * c(CueKind::IdealDrivePath);
        self.in_plane *= g * c(CueKind::IdealDrivePath);
    }
}

fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

fn lerp_pose(a: &Pose, b: &Pose, s: f64) -> Pose {
    Pose::new(a.position.lerp(b.position, s), a.orientation.slerp(b.orientation, s))
}

fn shifted(p: &Pose, by: Vec3) -> Pose {
    Pose::new(p.position + by, p.orientation)
}

/// Needle pose with the tip at `phi` on the arc circle and the body trailing
/// backwards along it.
pub fn arc_pose(arc: &ArcPath, phi: f64) -> Pose {
    let (s, c) = phi.to_radians().sin_cos();
    let u = arc.ref_axis;
    let v = arc.plane_normal.cross(u);
    let x = u * c + v * s;
    let y = u * s - v * c;
    Pose::new(arc.center, UnitQuat::from_basis(x, y, -arc.plane_normal))
}

fn polyline_at(points: &[Vec3], s: f64) -> Vec3 {
    let legs = points.len() - 1;
    if legs == 0 {
        return points[0];
    }
    let x = s.clamp(0.0, 1.0) * legs as f64;
    let i = (x.floor() as usize).min(legs - 1);
    points[i].lerp(points[i + 1], min_jerk(x - i as f64))
}

fn command_mut(input: &mut InputTick, side: Side) -> &mut crate::task::InstrumentCommand {
    match side {
        Side::Left => &mut input.left,
        Side::Right => &mut input.right,
    }
}

struct Driver<'a> {
    rec: SessionRecorder,
    config: &'a TaskConfig,
    cmd: InputTick,
    time_scale: f64,
    exposed: BTreeSet<CueKind>,
}

impl<'a> Driver<'a> {
    fn ticks(&self, secs: f64) -> usize {
        ((secs * self.time_scale * self.config.tick_rate).round() as usize).max(1)
    }

    fn up(&self) -> Vec3 {
        self.config.surface_normal
    }

    fn rest(&self, side: Side) -> Vec3 {
        self.config.instrument_start[side.index()]
    }

    /// Advances `secs` of scripted time; `f` edits the held command at progress s.
    fn run(&mut self, secs: f64, mut f: impl FnMut(f64, &mut InputTick)) -> Result<(), SynthError> {
        let n = self.ticks(secs);
        let base = self.cmd;
        for k in 1..=n {
            if self.rec.engine().is_complete() {
                break;
            }
            let mut input = base;
            f(k as f64 / n as f64, &mut input);
            input.tick = self.cmd.tick + 1;
            input.master = [input.left.pose.position * MASTER_GAIN, input.right.pose.position * MASTER_GAIN];
            let out = self.rec.tick(&input)?;
            if out.segment_metrics.is_none() {
                self.exposed.extend(out.cue_changes.iter().filter(|c| c.shown).map(|c| c.kind));
            }
            self.cmd = input;
        }
        Ok(())
    }

    fn pause(&mut self, secs: f64) -> Result<(), SynthError> {
        self.run(secs, |_, _| {})
    }

    fn move_tip(&mut self, side: Side, target: Pose, secs: f64) -> Result<(), SynthError> {
        let from = self.cmd.command(side).pose;
        self.run(secs, |s, i| command_mut(i, side).pose = lerp_pose(&from, &target, min_jerk(s)))
    }

    /// Moves `side` to `target` while `other` travels through `via`.
    fn move_pair(&mut self, side: Side, target: Pose, other_via: &[Vec3], secs: f64) -> Result<(), SynthError> {
        let from = self.cmd.command(side).pose;
        let mut path = vec![self.cmd.command(side.other()).pose.position];
        path.extend_from_slice(other_via);
        let other = side.other();
        self.run(secs, |s, i| {
            command_mut(i, side).pose = lerp_pose(&from, &target, min_jerk(s));
            command_mut(i, other).pose.position = polyline_at(&path, s);
        })
    }

    fn set_jaw(&mut self, side: Side, to: f64, secs: f64) -> Result<(), SynthError> {
        let from = self.cmd.command(side).jaw;
        self.run(secs, |s, i| command_mut(i, side).jaw = from + (to - from) * s)
    }

    fn grasp_frame(&self, side: Side, segment: usize) -> Result<Pose, SynthError> {
        match self.rec.engine().world().grasp {
            Some(g) if g.side == side => Ok(g.needle_in_gripper.inverse()),
            _ => Err(SynthError::GraspFailed { segment, side }),
        }
    }

    /// Moves the held needle along `path(s)` by commanding the holder.
    fn carry(&mut self, holder: Side, frame: Pose, secs: f64, path: impl Fn(f64) -> Pose) -> Result<(), SynthError> {
        self.run(secs, |s, i| command_mut(i, holder).pose = path(s).compose(&frame))
    }
}

struct PassPlan {
    theta: f64,
    tilt: f64,
    out_plane: f64,
    in_plane: f64,
    wobble_phase: f64,
    false_start: bool,
    poke: bool,
    hesitate: bool,
    help: bool,
}

fn drive_pose(arc: &ArcPath, phi: f64, plan: &PassPlan) -> Pose {
    let base = arc_pose(arc, phi);
    let s = ((phi - arc.start_angle) / arc.sweep()).clamp(0.0, 1.0);
    let env = (s / EDGE_RAMP).min((1.0 - s) / EDGE_RAMP).clamp(0.0, 1.0);
    let wobble = 1.0 + 0.15 * (4.0 * std::f64::consts::PI * s + plan.wobble_phase).sin();
    let (sn, cs) = phi.to_radians().sin_cos();
    let radial = arc.ref_axis * cs + arc.plane_normal.cross(arc.ref_axis) * sn;
    shifted(&base, arc.plane_normal * (plan.out_plane * env * wobble) + radial * (plan.in_plane * env))
}

fn run_pass(
    d: &mut Driver,
    segment: usize,
    traits: &Traits,
    profile: &SynthProfile,
    mode: CoachingMode,
    rng: &mut ChaCha8Rng,
) -> Result<(), SynthError> {
    let config = d.config;
    let up = d.up();
    let arc = segment_context(segment, Phase::Setup, config)?.ideal_arc;
    let span = config.needle.span;
    let plan = PassPlan {
        theta: (IDEAL_GRASP_ANGLE
            + traits.position_sign * traits.position_bias
            + profile.grasp_position_noise * gauss(rng))
        .clamp(20.0, span - 2.0),
        tilt: traits.orientation_bias + profile.grasp_orientation_noise * gauss(rng),
        out_plane: traits.out_sign * (traits.out_plane + profile.path_noise * gauss(rng)),
        in_plane: traits.in_sign * (traits.in_plane + profile.path_noise * gauss(rng)),
        wobble_phase: rng.random::<f64>() * std::f64::consts::TAU,
        false_start: rng.random::<f64>() < profile.false_start_rate,
        poke: rng.random::<f64>() < profile.poke_rate,
        hesitate: rng.random::<f64>() < profile.hesitation_rate,
        help: mode == CoachingMode::User && rng.random::<f64>() < profile.help_rate,
    };
    let tilt_axis_sign = sign(rng);
    let pause = profile.pause_s;

    // Setup: free the needle, choose the instrument, approach and grasp.
    let world = d.rec.engine().world().clone();
    let context = segment_context(segment, Phase::Setup, config)?;
    let side = ideal_instrument(&context, &world.instruments, traits.handedness);
    let other = side.other();
    if let Some(g) = world.grasp {
        d.set_jaw(g.side, 1.0, 0.3)?;
    }
    let needle = d.rec.engine().world().needle_pose;
    let ideal = ideal_grasp_pose(&needle, &config.needle, plan.theta).expect("grasp angle within span");
    let target = Pose::new(
        ideal.position,
        ideal.orientation.compose(UnitQuat::from_axis_angle(Vec3::X, tilt_axis_sign * plan.tilt)),
    );
    let hover = shifted(&target, up * HOVER_MM);
    let mut via = Vec::new();
    if plan.help {
        via.push(config.icon_position(Icon::Help));
    }
    if d.rec.engine().cue_lifecycle().playback_deadline.is_some() {
        via.push(config.icon_position(Icon::Dismiss));
    }
    via.push(d.rest(other));
    d.move_pair(side, hover, &via, 1.0)?;
    d.pause(pause)?;
    if plan.hesitate {
        let off = Vec3::new(gauss(rng), gauss(rng), 0.0) * 2.0;
        d.move_tip(side, shifted(&hover, off), 0.4)?;
        d.move_tip(side, hover, 0.4)?;
        d.pause(pause)?;
    }
    if plan.poke {
        let h = config.height(hover.position);
        d.move_tip(side, shifted(&hover, up * -(h + POKE_DEPTH_MM)), 0.5)?;
        d.pause(0.3)?;
        d.move_tip(side, hover, 0.5)?;
    }
    d.move_tip(side, target, 0.6)?;
    d.set_jaw(side, 0.0, 0.3)?;
    let frame = d.grasp_frame(side, segment)?;
    d.pause(pause)?;

    // Carry the needle to the entry.
    let start = d.rec.engine().world().needle_pose;
    let phi0 = arc.start_angle - PRE_ENTRY_DEG;
    let pre = arc_pose(&arc, phi0);
    let lift = up * HOVER_MM;
    d.carry(side, frame, 0.5, |s| lerp_pose(&start, &shifted(&start, lift), min_jerk(s)))?;
    d.carry(side, frame, 1.2, |s| lerp_pose(&shifted(&start, lift), &shifted(&pre, lift), min_jerk(s)))?;
    d.carry(side, frame, 0.6, |s| lerp_pose(&shifted(&pre, lift), &pre, min_jerk(s)))?;
    d.pause(pause)?;

    if plan.false_start {
        let off = arc.plane_normal * FALSE_START_OFFSET_MM;
        let wrong = arc.start_angle + 10.0;
        d.carry(side, frame, 0.3, |s| lerp_pose(&pre, &shifted(&pre, off), min_jerk(s)))?;
        d.carry(side, frame, 0.6, |s| shifted(&arc_pose(&arc, phi0 + (wrong - phi0) * min_jerk(s)), off))?;
        d.carry(side, frame, 0.6, |s| shifted(&arc_pose(&arc, wrong + (phi0 - wrong) * min_jerk(s)), off))?;
        d.carry(side, frame, 0.3, |s| lerp_pose(&shifted(&pre, off), &pre, min_jerk(s)))?;
        d.pause(pause)?;
    }

    // Drive along the arc until the tip is well clear of the exit.
    let mid = arc.end_angle + DRIVE_PAST_EXIT_DEG;
    d.carry(side, frame, 1.7, |s| drive_pose(&arc, phi0 + (mid - phi0) * min_jerk(s), &plan))?;
    d.pause(pause)?;

    // Hand over to the other instrument near the tip.
    d.set_jaw(side, 1.0, 0.3)?;
    let needle = d.rec.engine().world().needle_pose;
    let handover = ideal_grasp_pose(&needle, &config.needle, HANDOVER_THETA).expect("handover angle within span");
    let other_hover = shifted(&handover, up * HOVER_MM);
    d.move_pair(other, other_hover, &[d.rest(side)], 1.0)?;
    d.move_tip(other, handover, 0.5)?;
    d.set_jaw(other, 0.0, 0.3)?;
    let frame = d.grasp_frame(other, segment)?;
    d.pause(pause)?;

    // Pull the needle through and lift it clear.
    let end = arc.end_angle + PULL_PAST_EXIT_DEG;
    let here = d.rec.engine().world().needle_pose;
    let from = here.position - arc_pose(&arc, mid).position;
    d.carry(other, frame, 1.8, |s| shifted(&arc_pose(&arc, mid + (end - mid) * min_jerk(s)), from * (1.0 - s)))?;
    let placed = d.rec.engine().world().needle_pose;
    d.carry(other, frame, 0.5, |s| lerp_pose(&placed, &shifted(&placed, up * 10.0), min_jerk(s)))?;
    d.pause(pause)?;
    Ok(())
}

fn run_session(
    profile: &SynthProfile,
    config: &TaskConfig,
    traits: &mut Traits,
    mode: CoachingMode,
    participant: &str,
    label: &str,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<SessionLog, SynthError> {
    let options = EngineOptions { mode, handedness: traits.handedness, thresholds: ThresholdTable::default() };
    let header = SessionHeader::new(config.clone(), &options, participant, label, seed);
    let rec = SessionRecorder::new(header)?;
    let cmd = InputTick::hold(rec.engine().world(), 0);
    let jitter = (1.0 + 0.05 * gauss(rng)).max(0.5);
    let mut d = Driver { rec, config, cmd, time_scale: jitter / traits.pace, exposed: BTreeSet::new() };
    for segment in 0..config.n_pairs {
        let start = d.cmd.tick;
        d.exposed = d.rec.engine().cue_lifecycle().active.clone();
        for _ in 0..MAX_ATTEMPTS {
            run_pass(&mut d, segment, traits, profile, mode, rng)?;
            if d.rec.engine().progress().segment_index > segment {
                break;
            }
        }
        let elapsed = (d.cmd.tick - start) as f64 / config.tick_rate;
        if d.rec.engine().progress().segment_index != segment + 1 || elapsed > SEGMENT_TIMEOUT_S {
            return Err(SynthError::Stalled { segment });
        }
        traits.learn(&d.exposed, profile);
    }
    Ok(d.rec.finish()?)
}

/// All sessions of one participant, in plan order.
pub fn synth_participant(
    profile: &SynthProfile,
    config: &TaskConfig,
    plan: &[(&str, CoachingMode)],
    participant: &str,
    seed: u64,
) -> Result<Vec<SessionLog>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traits = Traits::draw(profile, &mut rng);
    plan.iter()
        .map(|(label, mode)| run_session(profile, config, &mut traits, *mode, participant, label, seed, &mut rng))
        .collect()
}

/// A single session from a fresh participant.
pub fn synth_session(
    profile: &SynthProfile,
    config: &TaskConfig,
    mode: CoachingMode,
    seed: u64,
) -> Result<SessionLog, SynthError> {
    let id = format!("{}-{seed}", profile.name);
    let mut logs = synth_participant(profile, config, &[("single", mode)], &id, seed)?;
    Ok(logs.remove(0))
}
