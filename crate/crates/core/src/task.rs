//! Fixed-tick kinematic world for the needle-passing task.
//!
//! Instruments teleport to commanded poses. The tissue is the rigid plane
//! through the origin with normal `surface_normal`; "below" means strictly
//! negative signed height.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    angle_on_needle, needle_normal, needle_point, orientation_deviation, GeometryError, NeedleModel, Pose,
    UnitQuat, Vec3,
};

/// Jaw opening below which a closing jaw grasps.
pub const JAW_CLOSE: f64 = 0.2;
/// Jaw opening above which a held grasp releases.
pub const JAW_OPEN: f64 = 0.4;
/// Body samples per needle used for tissue contact.
const BODY_SAMPLES: usize = 181;
/// Margin above the needle's bounding sphere for the clear-of-surface shortcut.
const CLEARANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("tick {got} does not follow tick {last}")]
    NonMonotoneTick { last: u64, got: u64 },
    #[error("non-finite {0} in input")]
    NonFiniteInput(&'static str),
    #[error("invalid task config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Icon {
    Help,
    Video,
    Dismiss,
}

impl Icon {
    pub const ALL: [Icon; 3] = [Icon::Help, Icon::Video, Icon::Dismiss];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceSource {
    Instrument(Side),
    NeedleTissue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub needle: NeedleModel,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub n_pairs: usize,
    pub surface_normal: Vec3,
    pub tick_rate: f64,
    pub pierce_tolerance: f64,
    pub force_threshold: f64,
    pub stiffness_tissue: f64,
    pub stiffness_contact: f64,
    pub help_icon: Vec3,
    pub video_icon: Vec3,
    pub dismiss_icon: Vec3,
    pub icon_proximity: f64,
    /// Direction from the workspace toward each arm's base, `[left, right]`.
    pub instrument_bases: [Vec3; 2],
    pub instrument_start: [Vec3; 2],
    pub needle_start: Pose,
    pub camera_forward: Vec3,
    /// Tip-to-shaft distance of the point used for ribbon area.
    pub shaft_offset: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        default_task_config()
    }
}

pub fn default_task_config() -> TaskConfig {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    TaskConfig {
        needle: NeedleModel { radius: 6.0, span: 180.0 },
        inner_radius: 15.0,
        outer_radius: 25.0,
        n_pairs: 8,
        surface_normal: Vec3::Z,
        tick_rate: 50.0,
        pierce_tolerance: 2.0,
        force_threshold: 1.5,
        stiffness_tissue: 0.5,
        stiffness_contact: 2.0,
        help_icon: Vec3::new(-40.0, 40.0, 5.0),
        video_icon: Vec3::new(40.0, 40.0, 5.0),
        dismiss_icon: Vec3::new(40.0, -40.0, 5.0),
        icon_proximity: 5.0,
        instrument_bases: [Vec3::new(-s, 0.0, s), Vec3::new(s, 0.0, s)],
        instrument_start: [Vec3::new(-35.0, 0.0, 20.0), Vec3::new(35.0, 0.0, 20.0)],
        needle_start: Pose::from_position(Vec3::new(0.0, 0.0, 2.0)),
        camera_forward: Vec3::new(0.0, 0.5, -0.8660254037844386),
        shaft_offset: 10.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPair {
    pub index: usize,
    pub entry: Vec3,
    pub exit: Vec3,
    pub azimuth: f64,
}

impl TaskConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        self.needle.validate()?;
        let bad = |m: &str| Err(TaskError::InvalidConfig(m.to_string()));
        if !(self.inner_radius > 0.0 && self.outer_radius > self.inner_radius) {
            return bad("need outer_radius > inner_radius > 0");
        }
        if self.n_pairs == 0 {
            return bad("n_pairs must be at least 1");
        }
        if self.outer_radius - self.inner_radius > 2.0 * self.needle.radius {
            return bad("target spacing exceeds needle diameter");
        }
        if !(self.tick_rate > 0.0 && self.tick_rate.is_finite()) {
            return bad("tick_rate must be positive");
        }
        if (self.surface_normal.norm() - 1.0).abs() > 1e-9 {
            return bad("surface_normal must be unit length");
        }
        for v in [self.pierce_tolerance, self.force_threshold, self.icon_proximity, self.shaft_offset] {
            if !(v > 0.0) {
                return bad("tolerances and thresholds must be positive");
            }
        }
        if self.stiffness_tissue < 0.0 || self.stiffness_contact < 0.0 {
            return bad("stiffness must be non-negative");
        }
        Ok(())
    }

    /// Orthonormal in-surface basis used to lay out the target circles.
    pub fn surface_basis(&self) -> (Vec3, Vec3) {
        let n = self.surface_normal;
        let e1 = (Vec3::X - n * Vec3::X.dot(n))
            .normalized()
            .or_else(|_| (Vec3::Y - n * Vec3::Y.dot(n)).normalized())
            .unwrap_or(Vec3::X);
        (e1, n.cross(e1))
    }

    pub fn height(&self, p: Vec3) -> f64 {
        p.dot(self.surface_normal)
    }

    /// Target pairs in clockwise order starting from the top.
    pub fn targets(&self) -> Vec<TargetPair> {
        (0..self.n_pairs).map(|k| self.target(k)).collect()
    }

    pub fn target(&self, index: usize) -> TargetPair {
        let (e1, e2) = self.surface_basis();
        let azimuth = 90.0 - index as f64 * 360.0 / self.n_pairs as f64;
        let (s, c) = azimuth.to_radians().sin_cos();
        let dir = e1 * c + e2 * s;
        TargetPair { index, entry: dir * self.inner_radius, exit: dir * self.outer_radius, azimuth }
    }

    pub fn icon_position(&self, icon: Icon) -> Vec3 {
        match icon {
            Icon::Help => self.help_icon,
            Icon::Video => self.video_icon,
            Icon::Dismiss => self.dismiss_icon,
        }
    }

    pub fn tick_seconds(&self, ticks: u64) -> f64 {
        ticks as f64 / self.tick_rate
    }
}

/// Where a surface crossing happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    Entry(usize),
    Exit(usize),
    Off,
}

impl Site {
    pub fn target_index(self) -> Option<usize> {
        match self {
            Site::Entry(i) | Site::Exit(i) => Some(i),
            Site::Off => None,
        }
    }
}

/// Classifies a surface point against every target within `pierce_tolerance`.
pub fn classify_site(location: Vec3, config: &TaskConfig) -> Site {
    let mut best: Option<(f64, Site)> = None;
    for pair in config.targets() {
        for (p, site) in [(pair.entry, Site::Entry(pair.index)), (pair.exit, Site::Exit(pair.index))] {
            let d = p.distance(location);
            if d <= config.pierce_tolerance && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, site));
            }
        }
    }
    best.map_or(Site::Off, |(_, s)| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Instrument {
    pub side: Side,
    pub tip_pose: Pose,
    pub jaw: f64,
    pub base_direction: Vec3,
}

impl Instrument {
    /// Gripper approach axis (local +Z, pointing from the tip up the shaft).
    pub fn gripper_axis(&self) -> Vec3 {
        self.tip_pose.axis_z()
    }

    pub fn shaft_point(&self, offset: f64) -> Vec3 {
        self.tip_pose.transform_point(Vec3::new(0.0, 0.0, offset))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grasp {
    pub side: Side,
    pub theta: f64,
    pub orientation_dev: f64,
    /// Needle pose expressed in the gripper frame.
    pub needle_in_gripper: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PierceRecord {
    pub site: Site,
    pub location: Vec3,
}

/// Vertical plane through a pierce point containing the needle's drive plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertionPlane {
    pub point: Vec3,
    pub normal: Vec3,
}

/// Needle/tissue topology measured from the sampled body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleContact {
    pub tip: Vec3,
    pub tip_below: bool,
    pub any_below: bool,
    /// Surface crossing points ordered from tip to tail.
    pub crossings: Vec<Vec3>,
}

impl NeedleContact {
    /// The returned body samples are empty when the whole needle is clear
    /// of the surface, since nothing downstream needs them then.
    pub fn measure(pose: &Pose, config: &TaskConfig) -> (NeedleContact, Vec<Vec3>) {
        if config.height(pose.position) > config.needle.radius + CLEARANCE {
            let tip = pose.position + pose.orientation.rotate(Vec3::X) * config.needle.radius;
            let contact = NeedleContact { tip, tip_below: false, any_below: false, crossings: Vec::new() };
            return (contact, Vec::new());
        }
        let body = body_samples(pose, &config.needle);
        let heights: Vec<f64> = body.iter().map(|p| config.height(*p)).collect();
        let mut crossings = Vec::new();
        for i in 1..body.len() {
            let (h0, h1) = (heights[i - 1], heights[i]);
            if (h0 < 0.0) != (h1 < 0.0) {
                let t = h0 / (h0 - h1);
                crossings.push(body[i - 1].lerp(body[i], t));
            }
        }
        let contact = NeedleContact {
            tip: body[0],
            tip_below: heights[0] < 0.0,
            any_below: heights.iter().any(|h| *h < 0.0),
            crossings,
        };
        (contact, body)
    }
}

fn body_samples(pose: &Pose, model: &NeedleModel) -> Vec<Vec3> {
    crate::geometry::needle_samples(pose, model, BODY_SAMPLES)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub instruments: [Instrument; 2],
    pub needle_pose: Pose,
    pub grasp: Option<Grasp>,
    pub pierce_set: Vec<PierceRecord>,
    pub master_positions: [Vec3; 2],
    pub contact: NeedleContact,
    pub insertion_plane: Option<InsertionPlane>,
    pub force_exceeded: [bool; 3],
    pub icon_near: [[bool; 3]; 2],
}

impl WorldState {
    pub fn initial(config: &TaskConfig) -> WorldState {
        let instruments = [Side::Left, Side::Right].map(|side| Instrument {
            side,
            tip_pose: Pose::from_position(config.instrument_start[side.index()]),
            jaw: 1.0,
            base_direction: config.instrument_bases[side.index()],
        });
        let (contact, _) = NeedleContact::measure(&config.needle_start, config);
        WorldState {
            tick: 0,
            instruments,
            needle_pose: config.needle_start,
            grasp: None,
            pierce_set: Vec::new(),
            master_positions: config.instrument_start,
            contact,
            insertion_plane: None,
            force_exceeded: [false; 3],
            icon_near: [[false; 3]; 2],
        }
    }

    pub fn instrument(&self, side: Side) -> &Instrument {
        &self.instruments[side.index()]
    }

    pub fn needle_tip(&self) -> Vec3 {
        self.contact.tip
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstrumentCommand {
    #[serde(flatten)]
    pub pose: Pose,
    pub jaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputTick {
    #[serde(rename = "t")]
    pub tick: u64,
    #[serde(rename = "L")]
    pub left: InstrumentCommand,
    #[serde(rename = "R")]
    pub right: InstrumentCommand,
    pub master: [Vec3; 2],
}

impl InputTick {
    pub fn command(&self, side: Side) -> &InstrumentCommand {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// Input that keeps everything where `world` has it.
    pub fn hold(world: &WorldState, tick: u64) -> InputTick {
        let cmd = |s: Side| InstrumentCommand {
            pose: world.instrument(s).tip_pose,
            jaw: world.instrument(s).jaw,
        };
        InputTick { tick, left: cmd(Side::Left), right: cmd(Side::Right), master: world.master_positions }
    }

    fn validate(&self) -> Result<(), TaskError> {
        for s in Side::BOTH {
            let c = self.command(s);
            if !c.pose.is_finite() {
                return Err(TaskError::NonFiniteInput("pose"));
            }
            if !c.jaw.is_finite() {
                return Err(TaskError::NonFiniteInput("jaw"));
            }
        }
        if !self.master.iter().all(|m| m.is_finite()) {
            return Err(TaskError::NonFiniteInput("master position"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum SimEventKind {
    GraspStart { side: Side, theta: f64, orientation_dev: f64 },
    GraspEnd { side: Side },
    Pierce { site: Site, location: Vec3 },
    TipExit { site: Site, location: Vec3 },
    TailExit { location: Vec3 },
    TailReenter { location: Vec3 },
    NeedleFree,
    IconActivated { icon: Icon, side: Side },
    ForceExceedStart { source: ForceSource, force: f64 },
    ForceExceedEnd { source: ForceSource },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub tick: u64,
    pub kind: SimEventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactForces {
    pub instrument_object: [f64; 2],
    pub needle_tissue: f64,
}

impl ContactForces {
    pub fn by_source(&self) -> [(ForceSource, f64); 3] {
        [
            (ForceSource::Instrument(Side::Left), self.instrument_object[0]),
            (ForceSource::Instrument(Side::Right), self.instrument_object[1]),
            (ForceSource::NeedleTissue, self.needle_tissue),
        ]
    }
}

/// Linear-spring contact forces for the current world.
pub fn compute_forces(world: &WorldState, config: &TaskConfig) -> ContactForces {
    let (_, body) = NeedleContact::measure(&world.needle_pose, config);
    forces_with_body(world, config, &body)
}

fn forces_with_body(world: &WorldState, config: &TaskConfig, body: &[Vec3]) -> ContactForces {
    let mut out = ContactForces::default();
    for side in Side::BOTH {
        let driving = world.grasp.is_some_and(|g| g.side == side) && world.contact.any_below;
        if driving {
            continue;
        }
        let depth = -config.height(world.instrument(side).tip_pose.position);
        out.instrument_object[side.index()] = (config.stiffness_contact * depth).max(0.0);
    }
    if let Some(plane) = world.insertion_plane {
        let (sum, n) = body
            .iter()
            .filter(|p| config.height(**p) < 0.0)
            .fold((0.0, 0usize), |(s, n), p| (s + (*p - plane.point).dot(plane.normal).abs(), n + 1));
        if n > 0 {
            out.needle_tissue = (config.stiffness_tissue * sum / n as f64).max(0.0);
        }
    }
    out
}

/// Advances the world by one input tick.
pub fn step(world: &WorldState, input: &InputTick, config: &TaskConfig) -> Result<(WorldState, Vec<SimEvent>), TaskError> {
    if input.tick <= world.tick {
        return Err(TaskError::NonMonotoneTick { last: world.tick, got: input.tick });
    }
    input.validate()?;
    let tick = input.tick;
    let mut events = Vec::new();
    let mut emit = |kind: SimEventKind| events.push(SimEvent { tick, kind });
    let mut next = world.clone();
    next.tick = tick;
    next.master_positions = input.master;

    let prev_jaw = [world.instruments[0].jaw, world.instruments[1].jaw];
    for side in Side::BOTH {
        let cmd = input.command(side);
        let inst = &mut next.instruments[side.index()];
        inst.tip_pose = Pose::new(cmd.pose.position, UnitQuat::from_components(
            cmd.pose.orientation.w,
            cmd.pose.orientation.x,
            cmd.pose.orientation.y,
            cmd.pose.orientation.z,
        ));
        inst.jaw = cmd.jaw.clamp(0.0, 1.0);
    }

    if let Some(g) = next.grasp {
        if next.instrument(g.side).jaw > JAW_OPEN {
            next.grasp = None;
            emit(SimEventKind::GraspEnd { side: g.side });
        }
    }
    if next.grasp.is_none() {
        for side in Side::BOTH {
            let inst = *next.instrument(side);
            let closing = prev_jaw[side.index()] >= JAW_CLOSE && inst.jaw < JAW_CLOSE;
            if !closing {
                continue;
            }
            let Ok(theta) = angle_on_needle(inst.tip_pose.position, &next.needle_pose, &config.needle) else {
                continue;
            };
            let orientation_dev = orientation_deviation(inst.gripper_axis(), needle_normal(&next.needle_pose))?;
            next.grasp = Some(Grasp {
                side,
                theta,
                orientation_dev,
                needle_in_gripper: inst.tip_pose.inverse().compose(&next.needle_pose),
            });
            emit(SimEventKind::GraspStart { side, theta, orientation_dev });
            break;
        }
    }
    if let Some(g) = next.grasp {
        next.needle_pose = next.instrument(g.side).tip_pose.compose(&g.needle_in_gripper);
    }

    let (contact, body) = NeedleContact::measure(&next.needle_pose, config);
    let prev = &world.contact;
    let tip_crossing = |a: Vec3, b: Vec3| {
        let (ha, hb) = (config.height(a), config.height(b));
        let t = if (ha - hb).abs() < 1e-15 { 0.0 } else { ha / (ha - hb) };
        let p = a.lerp(b, t.clamp(0.0, 1.0));
        p - config.surface_normal * config.height(p)
    };
    if !prev.tip_below && contact.tip_below {
        let location = tip_crossing(prev.tip, contact.tip);
        let site = classify_site(location, config);
        let known = next.pierce_set.iter().any(|r| r.site == site && r.location.distance(location) <= config.pierce_tolerance);
        if !known {
            next.pierce_set.push(PierceRecord { site, location });
        }
        if next.insertion_plane.is_none() {
            let n = needle_normal(&next.needle_pose);
            let horizontal = (n - config.surface_normal * n.dot(config.surface_normal)).normalized();
            if let Ok(normal) = horizontal {
                next.insertion_plane = Some(InsertionPlane { point: location, normal });
            }
        }
        emit(SimEventKind::Pierce { site, location });
    } else if prev.tip_below && !contact.tip_below {
        let location = tip_crossing(prev.tip, contact.tip);
        emit(SimEventKind::TipExit { site: classify_site(location, config), location });
    } else if !prev.tip_below && !contact.tip_below && prev.any_below {
        if contact.crossings.len() < prev.crossings.len() && prev.crossings.len() >= 2 {
            let location = *prev.crossings.last().unwrap();
            emit(SimEventKind::TailExit { location: location - config.surface_normal * config.height(location) });
        } else if contact.crossings.len() > prev.crossings.len() && !prev.crossings.is_empty() {
            let location = *contact.crossings.last().unwrap();
            emit(SimEventKind::TailReenter { location: location - config.surface_normal * config.height(location) });
        }
    }
    if prev.any_below && !contact.any_below {
        next.insertion_plane = None;
        emit(SimEventKind::NeedleFree);
    }
    next.contact = contact;

    for side in Side::BOTH {
        let tip = next.instrument(side).tip_pose.position;
        for (k, icon) in Icon::ALL.iter().enumerate() {
            let near = tip.distance(config.icon_position(*icon)) <= config.icon_proximity;
            if near && !world.icon_near[side.index()][k] {
                emit(SimEventKind::IconActivated { icon: *icon, side });
            }
            next.icon_near[side.index()][k] = near;
        }
    }

    let forces = forces_with_body(&next, config, &body);
    for (k, (source, f)) in forces.by_source().into_iter().enumerate() {
        let over = f > config.force_threshold;
        if over && !world.force_exceeded[k] {
            emit(SimEventKind::ForceExceedStart { source, force: f });
        } else if !over && world.force_exceeded[k] {
            emit(SimEventKind::ForceExceedEnd { source });
        }
        next.force_exceeded[k] = over;
    }

    Ok((next, events))
}

/// Instruments and needle pose for a world where `side` grasps the needle at `theta`,
/// gripper axis on the needle normal and jaws closing along the tangent.
pub fn ideal_grasp_pose(needle_pose: &Pose, model: &NeedleModel, theta: f64) -> Result<Pose, GeometryError> {
    let p = needle_point(needle_pose, model, theta)?;
    let rot = needle_pose.orientation.compose(UnitQuat::from_axis_angle(Vec3::Z, theta + 90.0));
    Ok(Pose::new(p, rot))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TaskConfig {
        default_task_config()
    }

    fn hold(world: &WorldState, tick: u64) -> InputTick {
        InputTick::hold(world, tick)
    }

    #[test]
    fn default_layout() {
        let c = cfg();
        c.validate().unwrap();
        let t = c.targets();
        assert_eq!(t.len(), 8);
        // polar (15, 90°) → (0, 15, 0)
        let (s, co) = 90f64.to_radians().sin_cos();
        assert!(t[0].entry.distance(Vec3::new(15.0 * co, 15.0 * s, 0.0)) < 1e-12);
        assert!(t[0].entry.distance(Vec3::new(0.0, 15.0, 0.0)) < 1e-12);
        assert_eq!(t[2].azimuth, 0.0);
        for p in &t {
            assert!((p.exit.distance(p.entry) - 10.0).abs() < 1e-12);
        }
        // clockwise: pair 1 sits to the right of the top
        assert!(t[1].entry.x > 0.0 && t[1].entry.y > 0.0);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.outer_radius = 30.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.n_pairs = 0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.tick_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.inner_radius = 26.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn identical_inputs_are_a_fixpoint() {
        let c = cfg();
        let w0 = WorldState::initial(&c);
        let (w1, e1) = step(&w0, &hold(&w0, 1), &c).unwrap();
        assert!(e1.is_empty());
        let (w2, e2) = step(&w1, &hold(&w1, 2), &c).unwrap();
        assert!(e2.is_empty());
        let mut expected = w1.clone();
        expected.tick = 2;
        assert_eq!(w2, expected);
    }

    #[test]
    fn non_monotone_and_non_finite_inputs_rejected() {
        let c = cfg();
        let w0 = WorldState::initial(&c);
        let (w1, _) = step(&w0, &hold(&w0, 5), &c).unwrap();
        assert!(matches!(step(&w1, &hold(&w1, 5), &c), Err(TaskError::NonMonotoneTick { .. })));
        let mut bad = hold(&w1, 6);
        bad.left.pose.position.x = f64::NAN;
        assert_eq!(step(&w1, &bad, &c), Err(TaskError::NonFiniteInput("pose")));
    }

    #[test]
    fn closing_jaw_near_needle_grasps_at_theta() {
        let c = cfg();
        let w0 = WorldState::initial(&c);
        // 1 mm radially outward from the 150° body point, still inside the tube.
        let body = needle_point(&w0.needle_pose, &c.needle, 150.0).unwrap();
        let radial = (body - w0.needle_pose.position).normalized().unwrap();
        let gp = body + radial * 0.999;
        let mut inp = hold(&w0, 1);
        inp.right.pose = Pose::from_position(gp);
        let (w1, _) = step(&w0, &inp, &c).unwrap();
        let mut inp = hold(&w1, 2);
        inp.right.jaw = 0.1;
        let (w2, ev) = step(&w1, &inp, &c).unwrap();
        assert_eq!(ev.len(), 1);
        match ev[0].kind {
            SimEventKind::GraspStart { side, theta, .. } => {
                assert_eq!(side, Side::Right);
                assert!((theta - 150.0).abs() < 1e-9);
            }
            ref k => panic!("unexpected {k:?}"),
        }
        assert!(w2.grasp.is_some());
        // Needle follows the gripper rigidly.
        let mut inp = hold(&w2, 3);
        inp.right.pose.position += Vec3::new(0.0, 5.0, 3.0);
        let (w3, _) = step(&w2, &inp, &c).unwrap();
        assert!(w3.needle_pose.position.distance(w2.needle_pose.position + Vec3::new(0.0, 5.0, 3.0)) < 1e-9);
    }

    #[test]
    fn jaw_hysteresis_band_emits_nothing() {
        let c = cfg();
        let w0 = WorldState::initial(&c);
        let gp = needle_point(&w0.needle_pose, &c.needle, 150.0).unwrap();
        let mut w = w0;
        let mut t = 1;
        let mut inp = hold(&w, t);
        inp.left.pose = Pose::from_position(gp);
        inp.left.jaw = 0.1;
        let (nw, ev) = step(&w, &inp, &c).unwrap();
        assert!(matches!(ev[0].kind, SimEventKind::GraspStart { .. }));
        w = nw;
        for k in 0..40 {
            t += 1;
            let mut inp = hold(&w, t);
            inp.left.jaw = if k % 2 == 0 { 0.39 } else { 0.21 };
            let (nw, ev) = step(&w, &inp, &c).unwrap();
            assert!(ev.is_empty(), "{ev:?}");
            w = nw;
        }
        assert!(w.grasp.is_some());
    }

    #[test]
    fn pierce_classified_against_targets() {
        let c = cfg();
        let mut w = WorldState::initial(&c);
        // Place the free needle vertically so its tip hovers near pair-0 entry.
        let entry = c.target(0).entry;
        let offset = Vec3::new(1.2, 0.0, 0.0);
        let orient = UnitQuat::from_axis_angle(Vec3::X, 90.0);
        // Tip at local (6,0,0); put tip just above the surface.
        w.needle_pose = Pose::new(entry + offset + Vec3::new(-6.0, 0.0, 0.5), orient);
        w.contact = NeedleContact::measure(&w.needle_pose, &c).0;
        assert!(!w.contact.tip_below);
        // grasp by fiat so the needle moves with the right instrument
        let grip = Pose::from_position(w.needle_pose.position);
        w.instruments[1].tip_pose = grip;
        w.instruments[1].jaw = 0.0;
        w.grasp = Some(Grasp { side: Side::Right, theta: 150.0, orientation_dev: 0.0, needle_in_gripper: grip.inverse().compose(&w.needle_pose) });
        let mut inp = hold(&w, 1);
        inp.right.pose.position += Vec3::new(0.0, 0.0, -1.0);
        let (w1, ev) = step(&w, &inp, &c).unwrap();
        let pierce = ev.iter().find(|e| matches!(e.kind, SimEventKind::Pierce { .. })).unwrap();
        match pierce.kind {
            SimEventKind::Pierce { site, location } => {
                assert_eq!(site, Site::Entry(0));
                assert!((location.distance(entry) - 1.2).abs() < 1e-9);
                assert!(location.z.abs() < 1e-12);
            }
            _ => unreachable!(),
        }
        assert_eq!(w1.pierce_set.len(), 1);
        assert!(w1.insertion_plane.is_some());

        // Far from any target → off-target
        assert_eq!(classify_site(Vec3::new(0.0, 0.0, 0.0), &c), Site::Off);
        assert_eq!(classify_site(c.target(3).exit + Vec3::new(0.0, 1.9, 0.0), &c), Site::Exit(3));
    }

    #[test]
    fn forces_follow_linear_springs() {
        let c = cfg();
        let w0 = WorldState::initial(&c);
        let f = compute_forces(&w0, &c);
        assert_eq!(f, ContactForces::default());

        // Free tip pushed 0.5 mm below the surface.
        let mut w = w0.clone();
        w.instruments[0].tip_pose.position = Vec3::new(-30.0, 0.0, -0.5);
        let f = compute_forces(&w, &c);
        assert!((f.instrument_object[0] - 1.0).abs() < 1e-12);

        // Needle lying in a vertical plane, partially below, dragged 2 mm off its insertion plane.
        let mut w = w0.clone();
        let orient = UnitQuat::from_axis_angle(Vec3::X, 90.0); // needle plane normal → −Y
        w.needle_pose = Pose::new(Vec3::new(0.0, 0.0, -2.0), orient);
        let n = needle_normal(&w.needle_pose);
        w.insertion_plane = Some(InsertionPlane { point: Vec3::new(6.0, 0.0, 0.0), normal: n });
        let base = compute_forces(&w, &c).needle_tissue;
        assert!(base.abs() < 1e-12);
        w.needle_pose.position += n * 2.0;
        let f = compute_forces(&w, &c);
        assert!((f.needle_tissue - 1.0).abs() < 1e-12);
    }

    #[test]
    fn icon_activation_is_edge_triggered() {
        let c = cfg();
        let w0 = WorldState::initial(&c);
        let mut inp = hold(&w0, 1);
        inp.left.pose.position = c.help_icon + Vec3::new(1.0, 0.0, 0.0);
        let (w1, ev) = step(&w0, &inp, &c).unwrap();
        assert_eq!(ev.len(), 1);
        assert!(matches!(ev[0].kind, SimEventKind::IconActivated { icon: Icon::Help, side: Side::Left }));
        let (_, ev) = step(&w1, &hold(&w1, 2), &c).unwrap();
        assert!(ev.is_empty());
    }
}
