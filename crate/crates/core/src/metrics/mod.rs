//! Motion, error and deficit metrics, online and from recorded logs.

pub mod hull;

pub use hull::convex_hull_volume;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cues::IDEAL_GRASP_ANGLE;
use crate::geometry::{arc_deviation, ArcPath, Vec3};
use crate::task::{ForceSource, SimEvent, SimEventKind, TaskConfig};
use crate::tpm::{segment_context, DeviationKind, NeedleTopoState, Phase, SetupGrasp, TpmEvent, TpmEventKind};

/// Smoothed speed (mm/s) that starts a movement.
pub const MOVEMENT_ONSET_SPEED: f64 = 5.0;
/// Smoothed speed (mm/s) below which a new movement may start.
pub const MOVEMENT_REARM_SPEED: f64 = 2.0;
/// Trailing window (samples) of the speed moving average.
pub const SPEED_WINDOW: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no motion samples recorded")]
    Empty,
    #[error("sample ticks must increase (tick {got} after {last})")]
    NonMonotone { last: u64, got: u64 },
}

/// Kinematic snapshot for one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    pub tick: u64,
    pub tips: [Vec3; 2],
    pub shafts: [Vec3; 2],
    pub masters: [Vec3; 2],
    pub needle_tip: Vec3,
    pub tip_below: bool,
    /// Segment active when the tick started.
    pub segment: usize,
    /// Topology after the tick.
    pub topo: NeedleTopoState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub segment: usize,
    pub time: f64,
    pub grasp_position_dev: Option<f64>,
    pub grasp_orientation_dev: Option<f64>,
    pub in_plane_dev: Option<f64>,
    pub out_plane_dev: Option<f64>,
    pub excess_pierces: u32,
    pub path_length: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricId {
    CompletionTime,
    PathLength,
    Movements,
    RibbonArea,
    MasterPathLength,
    MasterWorkspaceVolume,
    ExcessNeedlePierces,
    ExcessInstrumentForceCount,
    ExcessInstrumentForceTime,
    ExcessNeedleTissueForceCount,
    ExcessNeedleTissueForceTime,
    GraspPositionDev,
    GraspOrientationDev,
    InPlaneDev,
    OutPlaneDev,
}

impl MetricId {
    pub const ALL: [MetricId; 15] = [
        MetricId::CompletionTime,
        MetricId::PathLength,
        MetricId::Movements,
        MetricId::RibbonArea,
        MetricId::MasterPathLength,
        MetricId::MasterWorkspaceVolume,
        MetricId::ExcessNeedlePierces,
        MetricId::ExcessInstrumentForceCount,
        MetricId::ExcessInstrumentForceTime,
        MetricId::ExcessNeedleTissueForceCount,
        MetricId::ExcessNeedleTissueForceTime,
        MetricId::GraspPositionDev,
        MetricId::GraspOrientationDev,
        MetricId::InPlaneDev,
        MetricId::OutPlaneDev,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::CompletionTime => "Completion Time (s)",
            MetricId::PathLength => "Path Length (mm)",
            MetricId::Movements => "Movements (count/s)",
            MetricId::RibbonArea => "Ribbon Area (mm²)",
            MetricId::MasterPathLength => "Master Path Length (mm)",
            MetricId::MasterWorkspaceVolume => "Master Workspace Volume (mm³)",
            MetricId::ExcessNeedlePierces => "Exc. Needle Pierces",
            MetricId::ExcessInstrumentForceCount => "Exc. Instrument Force (Count)",
            MetricId::ExcessInstrumentForceTime => "Exc. Instrument Force (Time) (s)",
            MetricId::ExcessNeedleTissueForceCount => "Exc. Needle Tissue Force (Count)",
            MetricId::ExcessNeedleTissueForceTime => "Exc. Needle Tissue Force (Time) (s)",
            MetricId::GraspPositionDev => "Grasp Position Dev. (degree)",
            MetricId::GraspOrientationDev => "Grasp Orientation Dev. (degree)",
            MetricId::InPlaneDev => "Ideal Drive Path Dev. (In) (mm)",
            MetricId::OutPlaneDev => "Ideal Drive Path Dev. (Out) (mm)",
        }
    }

    /// Count metrics are imputed with the median, the rest with the mean.
    pub fn is_count(self) -> bool {
        matches!(
            self,
            MetricId::ExcessNeedlePierces | MetricId::ExcessInstrumentForceCount | MetricId::ExcessNeedleTissueForceCount
        )
    }

    pub fn lower_is_better(self) -> bool {
        self != MetricId::Movements
    }
}

/// Whole-session metrics. Serialized with the report row names as keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    #[serde(rename = "Completion Time (s)")]
    pub completion_time: f64,
    #[serde(rename = "Path Length (mm)")]
    pub path_length: f64,
    #[serde(rename = "Movements (count/s)")]
    pub movements: f64,
    #[serde(rename = "Ribbon Area (mm²)")]
    pub ribbon_area: f64,
    #[serde(rename = "Master Path Length (mm)")]
    pub master_path_length: f64,
    #[serde(rename = "Master Workspace Volume (mm³)")]
    pub master_workspace_volume: f64,
    #[serde(rename = "Exc. Needle Pierces")]
    pub excess_needle_pierces: u32,
    #[serde(rename = "Exc. Instrument Force (Count)")]
    pub excess_instrument_force_count: u32,
    #[serde(rename = "Exc. Instrument Force (Time) (s)")]
    pub excess_instrument_force_time: f64,
    #[serde(rename = "Exc. Needle Tissue Force (Count)")]
    pub excess_needle_tissue_force_count: u32,
    #[serde(rename = "Exc. Needle Tissue Force (Time) (s)")]
    pub excess_needle_tissue_force_time: f64,
    #[serde(rename = "Grasp Position Dev. (degree)")]
    pub grasp_position_dev: Option<f64>,
    #[serde(rename = "Grasp Orientation Dev. (degree)")]
    pub grasp_orientation_dev: Option<f64>,
    #[serde(rename = "Ideal Drive Path Dev. (In) (mm)")]
    pub in_plane_dev: Option<f64>,
    #[serde(rename = "Ideal Drive Path Dev. (Out) (mm)")]
    pub out_plane_dev: Option<f64>,
}

impl TaskMetrics {
    pub fn get(&self, id: MetricId) -> Option<f64> {
        Some(match id {
            MetricId::CompletionTime => self.completion_time,
            MetricId::PathLength => self.path_length,
            MetricId::Movements => self.movements,
            MetricId::RibbonArea => self.ribbon_area,
            MetricId::MasterPathLength => self.master_path_length,
            MetricId::MasterWorkspaceVolume => self.master_workspace_volume,
            MetricId::ExcessNeedlePierces => self.excess_needle_pierces as f64,
            MetricId::ExcessInstrumentForceCount => self.excess_instrument_force_count as f64,
            MetricId::ExcessInstrumentForceTime => self.excess_instrument_force_time,
            MetricId::ExcessNeedleTissueForceCount => self.excess_needle_tissue_force_count as f64,
            MetricId::ExcessNeedleTissueForceTime => self.excess_needle_tissue_force_time,
            MetricId::GraspPositionDev => return self.grasp_position_dev,
            MetricId::GraspOrientationDev => return self.grasp_orientation_dev,
            MetricId::InPlaneDev => return self.in_plane_dev,
            MetricId::OutPlaneDev => return self.out_plane_dev,
        })
    }

    pub fn values(&self) -> [Option<f64>; 15] {
        MetricId::ALL.map(|id| self.get(id))
    }
}

pub fn polyline_length(points: &[Vec3]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

fn check_ticks(samples: &[MotionSample]) -> Result<(), MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    for w in samples.windows(2) {
        if w[1].tick <= w[0].tick {
            return Err(MetricsError::NonMonotone { last: w[0].tick, got: w[1].tick });
        }
    }
    Ok(())
}

/// Summed tool-tip path length of both instruments.
pub fn path_length(samples: &[MotionSample]) -> f64 {
    (0..2).map(|s| samples.windows(2).map(|w| w[0].tips[s].distance(w[1].tips[s])).sum::<f64>()).sum()
}

pub fn master_path_length(samples: &[MotionSample]) -> f64 {
    (0..2).map(|s| samples.windows(2).map(|w| w[0].masters[s].distance(w[1].masters[s])).sum::<f64>()).sum()
}

/// Number of movement onsets in one timed polyline.
///
/// Speed is a trailing moving average over [`SPEED_WINDOW`] finite
/// differences; an onset fires when the armed speed exceeds `onset` and the
/// detector re-arms once speed falls under `rearm`.
pub fn count_movements(ticks: &[u64], points: &[Vec3], tick_rate: f64, onset: f64, rearm: f64) -> u32 {
    let n = ticks.len().min(points.len());
    let mut raw = Vec::with_capacity(n.saturating_sub(1));
    for k in 1..n {
        let dt = ticks[k].saturating_sub(ticks[k - 1]) as f64 / tick_rate;
        raw.push(if dt > 0.0 { points[k].distance(points[k - 1]) / dt } else { 0.0 });
    }
    let mut armed = true;
    let mut count = 0;
    for k in 0..raw.len() {
        let lo = (k + 1).saturating_sub(SPEED_WINDOW);
        let window = &raw[lo..=k];
        let v = window.iter().sum::<f64>() / window.len() as f64;
        if armed && v > onset {
            count += 1;
            armed = false;
        } else if !armed && v < rearm {
            armed = true;
        }
    }
    count
}

/// Movement onsets of both instruments per second of session time.
pub fn movements_rate(samples: &[MotionSample], tick_rate: f64) -> f64 {
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else { return 0.0 };
    let duration = (last.tick - first.tick) as f64 / tick_rate;
    if duration <= 0.0 {
        return 0.0;
    }
    let ticks: Vec<u64> = samples.iter().map(|s| s.tick).collect();
    let count: u32 = (0..2)
        .map(|side| {
            let pts: Vec<Vec3> = samples.iter().map(|s| s.tips[side]).collect();
            count_movements(&ticks, &pts, tick_rate, MOVEMENT_ONSET_SPEED, MOVEMENT_REARM_SPEED)
        })
        .sum();
    count as f64 / duration
}

fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * (b - a).cross(c - a).norm()
}

/// Area of the strip swept by the tip-to-shaft segment of one instrument.
pub fn ribbon_strip_area(tips: &[Vec3], shafts: &[Vec3]) -> f64 {
    let n = tips.len().min(shafts.len());
    (1..n)
        .map(|k| {
            let (t0, s0, t1, s1) = (tips[k - 1], shafts[k - 1], tips[k], shafts[k]);
            triangle_area(t0, s0, s1) + triangle_area(t0, s1, t1)
        })
        .sum()
}

pub fn ribbon_area(samples: &[MotionSample]) -> f64 {
    (0..2)
        .map(|side| {
            let tips: Vec<Vec3> = samples.iter().map(|s| s.tips[side]).collect();
            let shafts: Vec<Vec3> = samples.iter().map(|s| s.shafts[side]).collect();
            ribbon_strip_area(&tips, &shafts)
        })
        .sum()
}

pub fn master_workspace_volume(samples: &[MotionSample]) -> f64 {
    let pts: Vec<Vec3> = samples.iter().flat_map(|s| s.masters).collect();
    convex_hull_volume(&pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub excess_needle_pierces: u32,
    pub instrument_force_count: u32,
    pub instrument_force_time: f64,
    pub needle_tissue_force_count: u32,
    pub needle_tissue_force_time: f64,
}

fn is_excess_pierce(kind: &TpmEventKind) -> bool {
    matches!(
        kind,
        TpmEventKind::RePierce { .. } | TpmEventKind::Deviation { deviation: DeviationKind::OffTargetPierce, .. }
    )
}

/// Pierce and force-threshold errors; open force episodes close at `final_tick`.
pub fn error_metrics(sim_events: &[SimEvent], tpm_events: &[TpmEvent], final_tick: u64, tick_rate: f64) -> ErrorMetrics {
    let mut out = ErrorMetrics {
        excess_needle_pierces: tpm_events.iter().filter(|e| is_excess_pierce(&e.kind)).count() as u32,
        ..Default::default()
    };
    let slot = |s: ForceSource| match s {
        ForceSource::Instrument(side) => side.index(),
        ForceSource::NeedleTissue => 2,
    };
    let mut open: [Option<u64>; 3] = [None; 3];
    let mut ticks = [0u64; 3];
    let mut counts = [0u32; 3];
    for e in sim_events {
        match e.kind {
            SimEventKind::ForceExceedStart { source, .. } => {
                let i = slot(source);
                counts[i] += 1;
                open[i].get_or_insert(e.tick);
            }
            SimEventKind::ForceExceedEnd { source } => {
                let i = slot(source);
                if let Some(start) = open[i].take() {
                    ticks[i] += e.tick.saturating_sub(start);
                }
            }
            _ => {}
        }
    }
    for i in 0..3 {
        if let Some(start) = open[i] {
            ticks[i] += final_tick.saturating_sub(start);
        }
    }
    out.instrument_force_count = counts[0] + counts[1];
    out.instrument_force_time = (ticks[0] + ticks[1]) as f64 / tick_rate;
    out.needle_tissue_force_count = counts[2];
    out.needle_tissue_force_time = ticks[2] as f64 / tick_rate;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeficitMetrics {
    pub grasp_position_dev: Option<f64>,
    pub grasp_orientation_dev: Option<f64>,
    pub in_plane_dev: Option<f64>,
    pub out_plane_dev: Option<f64>,
    pub grasps: u32,
    pub path_samples: u64,
}

/// Running sums behind the deficit means.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeficitAccumulator {
    grasp_position: f64,
    grasp_orientation: f64,
    grasps: u32,
    in_plane: f64,
    out_plane: f64,
    path_samples: u64,
}

impl DeficitAccumulator {
    pub fn add_grasp(&mut self, grasp: &SetupGrasp) {
        self.grasp_position += (grasp.theta - IDEAL_GRASP_ANGLE).abs();
        self.grasp_orientation += grasp.orientation_dev;
        self.grasps += 1;
    }

    /// Counts the sample only while the tip is being driven under the surface.
    pub fn add_sample(&mut self, sample: &MotionSample, arcs: &[ArcPath]) {
        if sample.topo != NeedleTopoState::S1 || !sample.tip_below {
            return;
        }
        let Some(arc) = arcs.get(sample.segment) else { return };
        let d = arc_deviation(sample.needle_tip, arc);
        self.in_plane += d.in_plane;
        self.out_plane += d.out_plane;
        self.path_samples += 1;
    }

    pub fn means(&self) -> DeficitMetrics {
        let mean = |sum: f64, n: f64| (n > 0.0).then(|| sum / n);
        DeficitMetrics {
            grasp_position_dev: mean(self.grasp_position, self.grasps as f64),
            grasp_orientation_dev: mean(self.grasp_orientation, self.grasps as f64),
            in_plane_dev: mean(self.in_plane, self.path_samples as f64),
            out_plane_dev: mean(self.out_plane, self.path_samples as f64),
            grasps: self.grasps,
            path_samples: self.path_samples,
        }
    }
}

/// Ideal arcs for every segment of the task, indexed by segment.
pub fn segment_arcs(config: &TaskConfig) -> Vec<ArcPath> {
    (0..config.n_pairs)
        .filter_map(|k| segment_context(k, Phase::Setup, config).ok().map(|c| c.ideal_arc))
        .collect()
}

/// Pooled deficit means over a whole log.
pub fn deficit_metrics(samples: &[MotionSample], tpm_events: &[TpmEvent], arcs: &[ArcPath]) -> DeficitMetrics {
    let mut acc = DeficitAccumulator::default();
    for e in tpm_events {
        if let TpmEventKind::DriveStart { grasp: Some(g), .. } = &e.kind {
            acc.add_grasp(g);
        }
    }
    for s in samples {
        acc.add_sample(s, arcs);
    }
    acc.means()
}

/// Per-segment metrics of every completed segment in a log.
pub fn segment_metrics(
    samples: &[MotionSample],
    tpm_events: &[TpmEvent],
    arcs: &[ArcPath],
    tick_rate: f64,
) -> Vec<SegmentMetrics> {
    let Some(first) = samples.first() else { return Vec::new() };
    let completions: Vec<(usize, u64)> = tpm_events
        .iter()
        .filter_map(|e| match e.kind {
            TpmEventKind::SegmentComplete { segment } => Some((segment, e.tick)),
            _ => None,
        })
        .collect();
    let mut out = Vec::new();
    let mut start = first.tick;
    let mut lower = None::<u64>;
    for (segment, end) in completions {
        let in_range = |t: u64| lower.is_none_or(|l| t > l) && t <= end;
        let mut acc = DeficitAccumulator::default();
        let mut path = 0.0;
        let mut count = 0;
        for (i, s) in samples.iter().enumerate() {
            if !in_range(s.tick) {
                continue;
            }
            if i > 0 {
                path += (0..2).map(|k| samples[i - 1].tips[k].distance(s.tips[k])).sum::<f64>();
            }
            acc.add_sample(s, arcs);
            count += 1;
        }
        let mut excess = 0;
        for e in tpm_events.iter().filter(|e| in_range(e.tick)) {
            match &e.kind {
                TpmEventKind::DriveStart { grasp: Some(g), .. } => acc.add_grasp(g),
                k if is_excess_pierce(k) => excess += 1,
                _ => {}
            }
        }
        let d = acc.means();
        out.push(SegmentMetrics {
            segment,
            time: (end - start) as f64 / tick_rate,
            grasp_position_dev: d.grasp_position_dev,
            grasp_orientation_dev: d.grasp_orientation_dev,
            in_plane_dev: d.in_plane_dev,
            out_plane_dev: d.out_plane_dev,
            excess_pierces: excess,
            path_length: path,
            samples: count,
        });
        start = end;
        lower = Some(end);
    }
    out
}

/// All report metrics of one session log.
pub fn aggregate(
    samples: &[MotionSample],
    sim_events: &[SimEvent],
    tpm_events: &[TpmEvent],
    arcs: &[ArcPath],
    tick_rate: f64,
) -> Result<TaskMetrics, MetricsError> {
    check_ticks(samples)?;
    let first = samples[0].tick;
    let last = samples[samples.len() - 1].tick;
    let end = tpm_events
        .iter()
        .find(|e| e.kind == TpmEventKind::TaskComplete)
        .map_or(last, |e| e.tick);
    let errors = error_metrics(sim_events, tpm_events, last, tick_rate);
    let deficits = deficit_metrics(samples, tpm_events, arcs);
    Ok(TaskMetrics {
        completion_time: (end.saturating_sub(first)) as f64 / tick_rate,
        path_length: path_length(samples),
        movements: movements_rate(samples, tick_rate),
        ribbon_area: ribbon_area(samples),
        master_path_length: master_path_length(samples),
        master_workspace_volume: master_workspace_volume(samples),
        excess_needle_pierces: errors.excess_needle_pierces,
        excess_instrument_force_count: errors.instrument_force_count,
        excess_instrument_force_time: errors.instrument_force_time,
        excess_needle_tissue_force_count: errors.needle_tissue_force_count,
        excess_needle_tissue_force_time: errors.needle_tissue_force_time,
        grasp_position_dev: deficits.grasp_position_dev,
        grasp_orientation_dev: deficits.grasp_orientation_dev,
        in_plane_dev: deficits.in_plane_dev,
        out_plane_dev: deficits.out_plane_dev,
    })
}

#[derive(Debug, Clone, Default)]
struct SegmentAccumulator {
    start_tick: u64,
    path: f64,
    excess: u32,
    samples: usize,
    deficits: DeficitAccumulator,
}

/// Accumulates metrics tick by tick during a live or replayed session.
#[derive(Debug, Clone)]
pub struct MetricsRecorder {
    tick_rate: f64,
    arcs: Vec<ArcPath>,
    samples: Vec<MotionSample>,
    sim_events: Vec<SimEvent>,
    tpm_events: Vec<TpmEvent>,
    current: SegmentAccumulator,
    segments: Vec<SegmentMetrics>,
    deficits: DeficitAccumulator,
}

impl MetricsRecorder {
    pub fn new(config: &TaskConfig) -> Self {
        MetricsRecorder {
            tick_rate: config.tick_rate,
            arcs: segment_arcs(config),
            samples: Vec::new(),
            sim_events: Vec::new(),
            tpm_events: Vec::new(),
            current: SegmentAccumulator::default(),
            segments: Vec::new(),
            deficits: DeficitAccumulator::default(),
        }
    }

    /// Adds one tick; returns the segment's metrics when it completed this tick.
    pub fn record(&mut self, sample: MotionSample, sim: &[SimEvent], tpm: &[TpmEvent]) -> Option<SegmentMetrics> {
        match self.samples.last() {
            Some(prev) => {
                self.current.path += (0..2).map(|k| prev.tips[k].distance(sample.tips[k])).sum::<f64>();
            }
            None => self.current.start_tick = sample.tick,
        }
        self.current.samples += 1;
        self.current.deficits.add_sample(&sample, &self.arcs);
        self.deficits.add_sample(&sample, &self.arcs);
        self.samples.push(sample);
        self.sim_events.extend_from_slice(sim);
        let mut done = None;
        for e in tpm {
            self.tpm_events.push(e.clone());
            match &e.kind {
                TpmEventKind::DriveStart { grasp: Some(g), .. } => {
                    self.current.deficits.add_grasp(g);
                    self.deficits.add_grasp(g);
                }
                TpmEventKind::SegmentComplete { segment } => {
                    let c = std::mem::take(&mut self.current);
                    let d = c.deficits.means();
                    let m = SegmentMetrics {
                        segment: *segment,
                        time: (e.tick - c.start_tick) as f64 / self.tick_rate,
                        grasp_position_dev: d.grasp_position_dev,
                        grasp_orientation_dev: d.grasp_orientation_dev,
                        in_plane_dev: d.in_plane_dev,
                        out_plane_dev: d.out_plane_dev,
                        excess_pierces: c.excess,
                        path_length: c.path,
                        samples: c.samples,
                    };
                    self.current.start_tick = e.tick;
                    self.segments.push(m.clone());
                    done = Some(m);
                }
                k if is_excess_pierce(k) => self.current.excess += 1,
                _ => {}
            }
        }
        done
    }

    pub fn segments(&self) -> &[SegmentMetrics] {
        &self.segments
    }

    pub fn last_segment(&self) -> Option<&SegmentMetrics> {
        self.segments.last()
    }

    /// Deficit means accumulated so far.
    pub fn live_deficits(&self) -> DeficitMetrics {
        self.deficits.means()
    }

    pub fn samples(&self) -> &[MotionSample] {
        &self.samples
    }

    pub fn arcs(&self) -> &[ArcPath] {
        &self.arcs
    }

    pub fn finish(&self) -> Result<TaskMetrics, MetricsError> {
        aggregate(&self.samples, &self.sim_events, &self.tpm_events, &self.arcs, self.tick_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{default_task_config, Side};

    fn still(tick: u64) -> MotionSample {
        MotionSample {
            tick,
            tips: [Vec3::new(-10.0, 0.0, 10.0), Vec3::new(10.0, 0.0, 10.0)],
            shafts: [Vec3::new(-10.0, 0.0, 20.0), Vec3::new(10.0, 0.0, 20.0)],
            masters: [Vec3::ZERO; 2],
            needle_tip: Vec3::ZERO,
            tip_below: false,
            segment: 0,
            topo: NeedleTopoState::S0,
        }
    }

    #[test]
    fn one_sustained_move_in_ten_seconds() {
        // 50 Hz, 10 s; left tip moves at 10 mm/s between 2 s and 5 s.
        let samples: Vec<MotionSample> = (0..=500)
            .map(|k| {
                let mut s = still(k);
                let t = (k as f64 / 50.0).clamp(2.0, 5.0) - 2.0;
                s.tips[0].x += 10.0 * t;
                s
            })
            .collect();
        assert!((movements_rate(&samples, 50.0) - 0.1).abs() < 1e-12);
        assert!((path_length(&samples) - 30.0).abs() < 1e-9);
    }

    #[test]
    fn hysteresis_prevents_double_counting() {
        // Speed dips to 3 mm/s (above re-arm) between two fast phases.
        let mut x = 0.0;
        let mut pts = vec![Vec3::ZERO];
        for k in 1..400 {
            let v = match k {
                0..=99 => 10.0,
                100..=199 => 3.0,
                200..=299 => 10.0,
                _ => 0.0,
            };
            x += v / 50.0;
            pts.push(Vec3::new(x, 0.0, 0.0));
        }
        let ticks: Vec<u64> = (0..400).collect();
        assert_eq!(count_movements(&ticks, &pts, 50.0, 5.0, 2.0), 1);
        assert_eq!(count_movements(&ticks, &pts, 50.0, 5.0, 4.0), 2);
    }

    #[test]
    fn ribbon_of_translated_segment_is_rectangle() {
        let tips = [Vec3::ZERO, Vec3::new(5.0, 0.0, 0.0)];
        let shafts = [Vec3::new(0.0, 0.0, 10.0), Vec3::new(5.0, 0.0, 10.0)];
        assert!((ribbon_strip_area(&tips, &shafts) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn force_episodes_pair_and_close_at_end() {
        let ev = |tick, kind| SimEvent { tick, kind };
        let sim = vec![
            ev(10, SimEventKind::ForceExceedStart { source: ForceSource::Instrument(Side::Left), force: 3.0 }),
            ev(60, SimEventKind::ForceExceedEnd { source: ForceSource::Instrument(Side::Left) }),
            ev(100, SimEventKind::ForceExceedStart { source: ForceSource::NeedleTissue, force: 3.0 }),
            ev(120, SimEventKind::ForceExceedStart { source: ForceSource::Instrument(Side::Right), force: 3.0 }),
        ];
        let tpm = vec![
            TpmEvent { tick: 5, kind: TpmEventKind::RePierce { target: 0 } },
            TpmEvent {
                tick: 6,
                kind: TpmEventKind::Deviation { deviation: DeviationKind::OffTargetPierce, detail: String::new() },
            },
            TpmEvent {
                tick: 7,
                kind: TpmEventKind::Deviation { deviation: DeviationKind::TipGrasp, detail: String::new() },
            },
        ];
        let m = error_metrics(&sim, &tpm, 150, 50.0);
        assert_eq!(m.excess_needle_pierces, 2);
        assert_eq!(m.instrument_force_count, 2);
        assert!((m.instrument_force_time - (50.0 + 30.0) / 50.0).abs() < 1e-12);
        assert_eq!(m.needle_tissue_force_count, 1);
        assert!((m.needle_tissue_force_time - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deficits_missing_without_data() {
        let d = deficit_metrics(&[still(0), still(1)], &[], &[]);
        assert_eq!(d.grasp_position_dev, None);
        assert_eq!(d.in_plane_dev, None);
    }

    #[test]
    fn tip_on_ideal_arc_has_zero_path_deviation() {
        let config = default_task_config();
        let arcs = segment_arcs(&config);
        let arc = &arcs[0];
        let samples: Vec<MotionSample> = (0..20)
            .map(|k| {
                let mut s = still(k);
                s.topo = NeedleTopoState::S1;
                s.tip_below = true;
                s.needle_tip = arc.point_at(arc.start_angle + arc.sweep() * k as f64 / 19.0);
                s
            })
            .collect();
        let grasp = SetupGrasp { theta: 140.0, orientation_dev: 4.0 };
        let tpm = vec![TpmEvent { tick: 0, kind: TpmEventKind::DriveStart { segment: 0, grasp: Some(grasp) } }];
        let d = deficit_metrics(&samples, &tpm, &arcs);
        assert!(d.in_plane_dev.unwrap() < 1e-9 && d.out_plane_dev.unwrap() < 1e-9);
        assert_eq!(d.grasp_position_dev, Some(10.0));
        assert_eq!(d.grasp_orientation_dev, Some(4.0));
    }

    #[test]
    fn metric_names_and_serialization() {
        let m = TaskMetrics {
            completion_time: 1.5,
            path_length: 2.0,
            movements: 0.1,
            ribbon_area: 3.0,
            master_path_length: 4.0,
            master_workspace_volume: 5.0,
            excess_needle_pierces: 1,
            excess_instrument_force_count: 2,
            excess_instrument_force_time: 0.5,
            excess_needle_tissue_force_count: 0,
            excess_needle_tissue_force_time: 0.0,
            grasp_position_dev: None,
            grasp_orientation_dev: Some(7.0),
            in_plane_dev: None,
            out_plane_dev: Some(0.2),
        };
        let v = serde_json::to_value(&m).unwrap();
        for id in MetricId::ALL {
            assert!(v.get(id.name()).is_some(), "{}", id.name());
        }
        assert!(v["Grasp Position Dev. (degree)"].is_null());
        let back: TaskMetrics = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.get(MetricId::ExcessInstrumentForceCount), Some(2.0));
    }

    #[test]
    fn empty_or_unordered_logs_are_rejected() {
        assert_eq!(aggregate(&[], &[], &[], &[], 50.0), Err(MetricsError::Empty));
        assert_eq!(
            aggregate(&[still(3), still(3)], &[], &[], &[], 50.0),
            Err(MetricsError::NonMonotone { last: 3, got: 3 })
        );
    }
}
