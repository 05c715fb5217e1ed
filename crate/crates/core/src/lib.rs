//! Needle-passing simulator core: geometry, task world, progress tracking,
//! cues, coaching, metrics, session logs and study analytics.

pub mod analytics;
pub mod clips;
pub mod coach;
pub mod cues;
pub mod engine;
pub mod geometry;
pub mod metrics;
pub mod session;
pub mod synth;
pub mod task;
pub mod tpm;

pub use analytics::{cohens_d, impute, mann_whitney_u, report, Arm, ParticipantSeries, Report};
pub use clips::{ClipStore, ExpertClip};
pub use coach::{decide, default_thresholds, CoachingMode, Intervention, ThresholdTable};
pub use cues::{CueDescriptor, CueKind, CueLifecycle};
pub use geometry::{ArcPath, NeedleModel, Pose, UnitQuat, Vec3};
pub use metrics::{MetricId, MotionSample, SegmentMetrics, TaskMetrics};
pub use task::{default_task_config, InputTick, Side, SimEvent, TaskConfig, WorldState};
pub use tpm::{NeedleTopoState, Phase, TaskProgress, TpmEvent};
pub use engine::{Engine, EngineOptions, TickOutput};
pub use session::{replay, SessionHeader, SessionLog, SessionRecorder};
pub use synth::{synth_participant, synth_session, StudyPlan, SynthProfile};
