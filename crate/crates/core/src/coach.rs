//! Coaching-mode policies: which cues are authorized, and why.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cues::CueKind;
use crate::metrics::SegmentMetrics;
use crate::tpm::TaskProgress;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoachingMode {
    Teach,
    Metrics,
    User,
    None,
}

impl CoachingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CoachingMode::Teach => "teach",
            CoachingMode::Metrics => "metrics",
            CoachingMode::User => "user",
            CoachingMode::None => "none",
        }
    }
}

impl std::str::FromStr for CoachingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "teach" => Ok(CoachingMode::Teach),
            "metrics" => Ok(CoachingMode::Metrics),
            "user" => Ok(CoachingMode::User),
            "none" => Ok(CoachingMode::None),
            other => Err(format!("unknown coaching mode `{other}`")),
        }
    }
}

impl std::fmt::Display for CoachingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-segment metrics the METRICS mode watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatchedMetric {
    GraspPosition,
    GraspOrientation,
    InPlane,
    OutPlane,
    SegmentTime,
    ExcessPierces,
}

impl WatchedMetric {
    pub const ALL: [WatchedMetric; 6] = [
        WatchedMetric::GraspPosition,
        WatchedMetric::GraspOrientation,
        WatchedMetric::InPlane,
        WatchedMetric::OutPlane,
        WatchedMetric::SegmentTime,
        WatchedMetric::ExcessPierces,
    ];

    fn value(self, m: &SegmentMetrics) -> Option<f64> {
        match self {
            WatchedMetric::GraspPosition => m.grasp_position_dev,
            WatchedMetric::GraspOrientation => m.grasp_orientation_dev,
            WatchedMetric::InPlane => m.in_plane_dev,
            WatchedMetric::OutPlane => m.out_plane_dev,
            WatchedMetric::SegmentTime => Some(m.time),
            WatchedMetric::ExcessPierces => Some(m.excess_pierces as f64),
        }
    }
}

#[derive(Debug, Error)]
pub enum CoachError {
    #[error("threshold for {0:?} must be positive")]
    NonPositiveThreshold(WatchedMetric),
    #[error("reading thresholds: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing thresholds: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub threshold: f64,
    pub cue: CueKind,
    /// `{value}` and `{threshold}` are substituted with one decimal.
    pub prompt: String,
}

impl ThresholdRule {
    fn new(threshold: f64, cue: CueKind, prompt: &str) -> Self {
        ThresholdRule { threshold, cue, prompt: prompt.to_string() }
    }

    fn render(&self, value: f64) -> String {
        self.prompt
            .replace("{value}", &format!("{value:.1}"))
            .replace("{threshold}", &format!("{:.1}", self.threshold))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub grasp_position_dev: ThresholdRule,
    pub grasp_orientation_dev: ThresholdRule,
    pub in_plane_dev: ThresholdRule,
    pub out_plane_dev: ThresholdRule,
    pub segment_time: ThresholdRule,
    pub excess_pierces: ThresholdRule,
}

impl Default for ThresholdTable {
    fn default() -> Self {
        default_thresholds()
    }
}

pub fn default_thresholds() -> ThresholdTable {
    ThresholdTable {
        grasp_position_dev: ThresholdRule::new(
            10.0,
            CueKind::GraspPosition,
            "Grasp was {value}° from the ideal spot (limit {threshold}°). Grasp between the yellow markers.",
        ),
        grasp_orientation_dev: ThresholdRule::new(
            15.0,
            CueKind::GraspOrientation,
            "Grasp orientation was off by {value}° (limit {threshold}°). Match the green ghost gripper.",
        ),
        in_plane_dev: ThresholdRule::new(
            1.0,
            CueKind::IdealDrivePath,
            "Drive depth strayed {value} mm from the ideal arc (limit {threshold} mm). Rotate along the cyan arc.",
        ),
        out_plane_dev: ThresholdRule::new(
            1.0,
            CueKind::IdealDrivePath,
            "Drive drifted sideways {value} mm (limit {threshold} mm). Keep the needle in the arc plane.",
        ),
        segment_time: ThresholdRule::new(
            30.0,
            CueKind::VideoDemo,
            "Last pass took {value} s (limit {threshold} s). Watch the expert demonstration.",
        ),
        excess_pierces: ThresholdRule::new(
            1.0,
            CueKind::TrajectoryPlayback,
            "{value} extra pierces last pass (limit {threshold}). Review your needle path.",
        ),
    }
}

impl ThresholdTable {
    pub fn lookup(&self, metric: WatchedMetric) -> &ThresholdRule {
        match metric {
            WatchedMetric::GraspPosition => &self.grasp_position_dev,
            WatchedMetric::GraspOrientation => &self.grasp_orientation_dev,
            WatchedMetric::InPlane => &self.in_plane_dev,
            WatchedMetric::OutPlane => &self.out_plane_dev,
            WatchedMetric::SegmentTime => &self.segment_time,
            WatchedMetric::ExcessPierces => &self.excess_pierces,
        }
    }

    pub fn validate(&self) -> Result<(), CoachError> {
        for m in WatchedMetric::ALL {
            let t = self.lookup(m).threshold;
            if !(t > 0.0 && t.is_finite()) {
                return Err(CoachError::NonPositiveThreshold(m));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CoachError> {
        let table: ThresholdTable = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        table.validate()?;
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cause {
    pub metric: WatchedMetric,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Intervention {
    pub authorized: BTreeSet<CueKind>,
    pub prompts: Vec<String>,
    pub causes: Vec<Cause>,
}

/// Which cues the coach authorizes right now.
///
/// METRICS looks only at the segment completed just before the active one;
/// USER authorizes everything while the help latch is set.
pub fn decide(
    mode: CoachingMode,
    progress: &TaskProgress,
    last_segment_metrics: Option<&SegmentMetrics>,
    help_requested: bool,
    thresholds: &ThresholdTable,
) -> Intervention {
    let all = || CueKind::ALL.into_iter().collect();
    match mode {
        CoachingMode::Teach => Intervention { authorized: all(), ..Default::default() },
        CoachingMode::User if help_requested => Intervention { authorized: all(), ..Default::default() },
        CoachingMode::User | CoachingMode::None => Intervention::default(),
        CoachingMode::Metrics => {
            let mut out = Intervention::default();
            let Some(m) = last_segment_metrics.filter(|_| progress.segment_index >= 1) else {
                return out;
            };
            for metric in WatchedMetric::ALL {
                let rule = thresholds.lookup(metric);
                let Some(value) = metric.value(m) else { continue };
                if value > rule.threshold {
                    out.authorized.insert(rule.cue);
                    out.prompts.push(rule.render(value));
                    out.causes.push(Cause { metric, value, threshold: rule.threshold });
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(orient: f64) -> SegmentMetrics {
        SegmentMetrics {
            segment: 0,
            time: 12.0,
            grasp_position_dev: Some(3.0),
            grasp_orientation_dev: Some(orient),
            in_plane_dev: Some(0.1),
            out_plane_dev: Some(0.1),
            excess_pierces: 0,
            path_length: 100.0,
            samples: 10,
        }
    }

    fn at_segment(k: usize) -> TaskProgress {
        TaskProgress { segment_index: k, ..Default::default() }
    }

    #[test]
    fn teach_authorizes_everything() {
        let t = default_thresholds();
        for k in 0..8 {
            let i = decide(CoachingMode::Teach, &at_segment(k), None, false, &t);
            assert_eq!(i.authorized.len(), 6);
        }
    }

    #[test]
    fn metrics_mode_cites_the_breached_threshold() {
        let t = default_thresholds();
        let m = seg(20.0);
        let i = decide(CoachingMode::Metrics, &at_segment(1), Some(&m), false, &t);
        assert_eq!(i.authorized, [CueKind::GraspOrientation].into_iter().collect());
        assert_eq!(i.causes, vec![Cause { metric: WatchedMetric::GraspOrientation, value: 20.0, threshold: 15.0 }]);
        assert!(i.prompts[0].contains("20.0") && i.prompts[0].contains("15.0"));
        let quiet = decide(CoachingMode::Metrics, &at_segment(1), Some(&seg(5.0)), false, &t);
        assert!(quiet.authorized.is_empty());
        // No previous segment yet.
        assert!(decide(CoachingMode::Metrics, &at_segment(0), Some(&m), false, &t).authorized.is_empty());
    }

    #[test]
    fn user_mode_follows_the_help_latch() {
        let t = default_thresholds();
        assert_eq!(decide(CoachingMode::User, &at_segment(2), None, false, &t), Intervention::default());
        assert_eq!(decide(CoachingMode::User, &at_segment(2), None, true, &t).authorized.len(), 6);
        assert!(decide(CoachingMode::None, &at_segment(2), None, true, &t).authorized.is_empty());
    }

    #[test]
    fn default_table() {
        let t = default_thresholds();
        assert_eq!(t.lookup(WatchedMetric::GraspOrientation).threshold, 15.0);
        assert!(WatchedMetric::ALL.iter().all(|m| t.lookup(*m).threshold > 0.0));
        t.validate().unwrap();
        let s = serde_json::to_string(&t).unwrap();
        let back: ThresholdTable = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        let mut bad = t.clone();
        bad.segment_time.threshold = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("TEACH".parse::<CoachingMode>().unwrap(), CoachingMode::Teach);
        assert!("coach".parse::<CoachingMode>().is_err());
    }
}
