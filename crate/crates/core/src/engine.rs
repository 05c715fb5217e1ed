//! Per-tick orchestration: simulation step, progress, coaching, cues, metrics.

use thiserror::Error;

use crate::coach::{decide, CoachingMode, Intervention, ThresholdTable};
use crate::cues::{
    grasp_orientation_cue, grasp_position_cue, ideal_instrument, ideal_path_cue, playback_cue, update_cues,
    CueChange, CueDescriptor, CueKind, CueLifecycle, CuePayload, PlaybackCue, FLASH_PERIOD_S,
};
use crate::geometry::Vec3;
use crate::metrics::{DeficitMetrics, MetricsError, MetricsRecorder, MotionSample, SegmentMetrics, TaskMetrics};
use crate::task::{step, Icon, InputTick, Side, SimEvent, SimEventKind, TaskConfig, TaskError, WorldState};
use crate::tpm::{advance, current_context, segment_context, Phase, TaskProgress, TpmError, TpmEvent, TpmEventKind};

/// Longest playback polyline kept for display.
const PLAYBACK_MAX_POINTS: usize = 240;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Tpm(#[from] TpmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineOptions {
    pub mode: CoachingMode,
    pub handedness: Side,
    pub thresholds: ThresholdTable,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions { mode: CoachingMode::None, handedness: Side::Right, thresholds: ThresholdTable::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickOutput {
    pub tick: u64,
    pub sim_events: Vec<SimEvent>,
    pub tpm_events: Vec<TpmEvent>,
    pub cue_changes: Vec<CueChange>,
    pub segment_metrics: Option<SegmentMetrics>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: TaskConfig,
    options: EngineOptions,
    world: WorldState,
    progress: TaskProgress,
    cues: CueLifecycle,
    intervention: Intervention,
    help: bool,
    recorder: MetricsRecorder,
    trajectory: Vec<(u64, Vec3)>,
    playback: Option<PlaybackCue>,
}

impl Engine {
    pub fn new(config: TaskConfig, options: EngineOptions) -> Result<Self, EngineError> {
        config.validate()?;
        let world = WorldState::initial(&config);
        let progress = TaskProgress::default();
        let intervention = decide(options.mode, &progress, None, false, &options.thresholds);
        let mut cues = CueLifecycle::default();
        let (lc, _) = update_cues(&cues, &[], &intervention, &[], 0, config.tick_rate);
        cues = lc;
        Ok(Engine {
            recorder: MetricsRecorder::new(&config),
            config,
            options,
            world,
            progress,
            cues,
            intervention,
            help: false,
            trajectory: Vec::new(),
            playback: None,
        })
    }

    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn options(&self) -> &EngineOptions {
        &self.options
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn progress(&self) -> &TaskProgress {
        &self.progress
    }

    pub fn cue_lifecycle(&self) -> &CueLifecycle {
        &self.cues
    }

    pub fn intervention(&self) -> &Intervention {
        &self.intervention
    }

    pub fn help_requested(&self) -> bool {
        self.help
    }

    pub fn segments(&self) -> &[SegmentMetrics] {
        self.recorder.segments()
    }

    pub fn samples(&self) -> &[MotionSample] {
        self.recorder.samples()
    }

    pub fn live_deficits(&self) -> DeficitMetrics {
        self.recorder.live_deficits()
    }

    pub fn is_complete(&self) -> bool {
        self.progress.is_complete()
    }

    pub fn tick(&mut self, input: &InputTick) -> Result<TickOutput, EngineError> {
        let (world, sim_events) = step(&self.world, input, &self.config)?;
        let segment_before = self.progress.segment_index;
        let (progress, tpm_events) = advance(&self.progress, &sim_events, &self.config)?;
        self.world = world;
        self.progress = progress;
        let tick = input.tick;

        let mut icons = Vec::new();
        for e in &sim_events {
            if let SimEventKind::IconActivated { icon, .. } = e.kind {
                icons.push(icon);
                if icon == Icon::Help {
                    self.help = true;
                }
            }
        }

        if segment_before < self.config.n_pairs {
            self.trajectory.push((tick, self.world.needle_tip()));
        }
        let sample = MotionSample {
            tick,
            tips: self.world.instruments.map(|i| i.tip_pose.position),
            shafts: self.world.instruments.map(|i| i.shaft_point(self.config.shaft_offset)),
            masters: self.world.master_positions,
            needle_tip: self.world.needle_tip(),
            tip_below: self.world.contact.tip_below,
            segment: segment_before,
            topo: self.progress.topo,
        };
        let segment_metrics = self.recorder.record(sample, &sim_events, &tpm_events);
        if let Some(m) = &segment_metrics {
            self.help = false;
            let trajectory = std::mem::take(&mut self.trajectory);
            let arc = segment_context(m.segment, Phase::Driving, &self.config)?.ideal_arc;
            let stride = trajectory.len().div_ceil(PLAYBACK_MAX_POINTS).max(1);
            let thinned: Vec<(u64, Vec3)> = trajectory.iter().copied().step_by(stride).collect();
            self.playback =
                playback_cue(&thinned, &arc, self.config.camera_forward, self.config.surface_normal, self.config.tick_rate)
                    .ok();
        }

        self.intervention = decide(
            self.options.mode,
            &self.progress,
            self.recorder.last_segment(),
            self.help,
            &self.options.thresholds,
        );
        let (cues, cue_changes) =
            update_cues(&self.cues, &tpm_events, &self.intervention, &icons, tick, self.config.tick_rate);
        self.cues = cues;
        Ok(TickOutput { tick, sim_events, tpm_events, cue_changes, segment_metrics })
    }

    fn prompt_for(&self, kind: CueKind) -> Option<String> {
        let rendered: Vec<&str> = self
            .intervention
            .causes
            .iter()
            .zip(&self.intervention.prompts)
            .filter(|(c, _)| self.options.thresholds.lookup(c.metric).cue == kind)
            .map(|(_, p)| p.as_str())
            .collect();
        if !rendered.is_empty() {
            return Some(rendered.join(" "));
        }
        if self.options.mode == CoachingMode::Metrics {
            return None;
        }
        Some(
            match kind {
                CueKind::IdealInstrument => "Use the highlighted instrument for this pass.",
                CueKind::GraspPosition => "Grasp the needle between the flashing markers.",
                CueKind::GraspOrientation => "Align your gripper with the ghost gripper.",
                CueKind::IdealDrivePath => "Rotate the needle along the arc from entry to exit.",
                CueKind::TrajectoryPlayback => "Compare your last pass with the ideal arc.",
                CueKind::VideoDemo => "Watch how an expert performs this pass.",
            }
            .to_string(),
        )
    }

    /// Render descriptors for every cue currently shown.
    pub fn descriptors(&self) -> Vec<CueDescriptor> {
        let Ok(context) = current_context(&self.progress, &self.config) else {
            return self
                .playback
                .iter()
                .filter(|_| self.cues.active.contains(&CueKind::TrajectoryPlayback))
                .map(|p| self.playback_descriptor(p))
                .collect();
        };
        let side = ideal_instrument(&context, &self.world.instruments, self.options.handedness);
        let mut out = Vec::new();
        for kind in self.cues.active.iter().copied() {
            let payload = match kind {
                CueKind::IdealInstrument => {
                    CuePayload::IdealInstrument { side, sphere: self.world.instrument(side).tip_pose.position }
                }
                CueKind::GraspPosition => CuePayload::GraspPosition {
                    spheres: grasp_position_cue(&self.world.needle_pose, &self.config.needle),
                    flash_period: FLASH_PERIOD_S,
                },
                CueKind::GraspOrientation => {
                    let gripper = self.world.grasp.map_or(side, |g| g.side);
                    let g = grasp_orientation_cue(
                        &self.world.needle_pose,
                        &self.config.needle,
                        &self.world.instrument(gripper).tip_pose,
                    );
                    CuePayload::GraspOrientation { ghost: g.ghost, alpha: g.alpha }
                }
                CueKind::IdealDrivePath => CuePayload::IdealDrivePath { arc: ideal_path_cue(&context) },
                CueKind::TrajectoryPlayback => match &self.playback {
                    Some(p) => {
                        out.push(self.playback_descriptor(p));
                        continue;
                    }
                    None => continue,
                },
                CueKind::VideoDemo => CuePayload::VideoDemo {
                    segment: self.progress.segment_index,
                    placement: self.cues.video_placement,
                },
            };
            out.push(CueDescriptor { kind, visible: true, prompt: self.prompt_for(kind), payload });
        }
        out
    }

    fn playback_descriptor(&self, p: &PlaybackCue) -> CueDescriptor {
        CueDescriptor {
            kind: CueKind::TrajectoryPlayback,
            visible: true,
            prompt: self.prompt_for(CueKind::TrajectoryPlayback),
            payload: CuePayload::TrajectoryPlayback {
                polyline: p.polyline.clone(),
                schedule: p.schedule.clone(),
                ideal: p.ideal,
            },
        }
    }

    pub fn finish(&self) -> Result<TaskMetrics, EngineError> {
        Ok(self.recorder.finish()?)
    }
}

/// True when a tick's TPM events include task completion.
pub fn completes_task(events: &[TpmEvent]) -> bool {
    events.iter().any(|e| e.kind == TpmEventKind::TaskComplete)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::default_task_config;

    #[test]
    fn idle_ticks_produce_no_events() {
        let mut e = Engine::new(default_task_config(), EngineOptions::default()).unwrap();
        for t in 1..50 {
            let input = InputTick::hold(e.world(), t);
            let out = e.tick(&input).unwrap();
            assert!(out.sim_events.is_empty() && out.tpm_events.is_empty());
        }
        assert!(e.descriptors().is_empty());
        let m = e.finish().unwrap();
        assert_eq!(m.path_length, 0.0);
        assert_eq!(m.grasp_position_dev, None);
    }

    #[test]
    fn teach_mode_shows_setup_cues_from_the_start() {
        let opts = EngineOptions { mode: CoachingMode::Teach, ..Default::default() };
        let e = Engine::new(default_task_config(), opts).unwrap();
        let kinds: Vec<CueKind> = e.descriptors().iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&CueKind::IdealInstrument));
        assert!(kinds.contains(&CueKind::GraspOrientation));
        assert!(kinds.contains(&CueKind::IdealDrivePath));
        assert!(!kinds.contains(&CueKind::TrajectoryPlayback));
    }

    #[test]
    fn help_icon_latches_in_user_mode() {
        let cfg = default_task_config();
        let opts = EngineOptions { mode: CoachingMode::User, ..Default::default() };
        let mut e = Engine::new(cfg.clone(), opts).unwrap();
        let mut input = InputTick::hold(e.world(), 1);
        e.tick(&input).unwrap();
        assert!(e.cue_lifecycle().active.is_empty());
        input.tick = 2;
        input.left.pose.position = cfg.help_icon;
        let out = e.tick(&input).unwrap();
        assert!(e.help_requested());
        assert!(out.cue_changes.iter().any(|c| c.kind == CueKind::IdealInstrument && c.shown));
    }
}
