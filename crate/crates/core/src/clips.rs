//! Expert clip store: one validated trajectory file per segment, cut from a
//! clean expert session. The video cue plays these back.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::session::{replay, SessionError, SessionLog};
use crate::task::InstrumentCommand;

const INDEX_FILE: &str = "index.json";

#[derive(Debug, Error)]
pub enum ClipError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("clip file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("source session rejected: {0}")]
    Rejected(String),
    #[error("segment {segment} out of range (store has {count})")]
    OutOfRange { segment: usize, count: usize },
    #[error("no clip stored for segment {0}")]
    Missing(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipIndex {
    pub segments: usize,
    pub tick_rate: f64,
    pub participant: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFrame {
    pub t: u64,
    #[serde(rename = "L")]
    pub left: InstrumentCommand,
    #[serde(rename = "R")]
    pub right: InstrumentCommand,
    pub needle: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertClip {
    pub segment: usize,
    pub tick_rate: f64,
    pub frames: Vec<ClipFrame>,
}

impl ExpertClip {
    pub fn duration_s(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => (b.t - a.t) as f64 / self.tick_rate,
            _ => 0.0,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", serde_json::json!({ "segment": self.segment, "tick_rate": self.tick_rate }))?;
        for f in &self.frames {
            writeln!(w, "{}", serde_json::to_string(f).expect("frame serializes"))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    fn read(path: &Path) -> Result<ExpertClip, ClipError> {
        let bad = |message: String| ClipError::Format { path: path.to_path_buf(), message };
        let mut lines = std::io::BufReader::new(std::fs::File::open(path)?).lines();
        let head: serde_json::Value =
            serde_json::from_str(&lines.next().ok_or_else(|| bad("empty".into()))??).map_err(|e| bad(e.to_string()))?;
        let segment = head["segment"].as_u64().ok_or_else(|| bad("missing segment".into()))? as usize;
        let tick_rate = head["tick_rate"].as_f64().ok_or_else(|| bad("missing tick_rate".into()))?;
        let mut frames = Vec::new();
        for line in lines {
            let line = line?;
            if !line.trim().is_empty() {
                frames.push(serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?);
            }
        }
        Ok(ExpertClip { segment, tick_rate, frames })
    }
}

/// Check that a session is a clean, complete, faithfully replaying run.
pub fn validate_source(log: &SessionLog) -> Result<(), ClipError> {
    if let Some(e) = log.events().find(|e| e.kind == "Deviation") {
        return Err(ClipError::Rejected(format!("deviation at tick {}: {}", e.t, e.payload)));
    }
    if !log.events().any(|e| e.kind == "TaskComplete") {
        return Err(ClipError::Rejected("task not completed".into()));
    }
    let report = replay(log)?;
    if !report.is_faithful() {
        return Err(ClipError::Rejected(format!("replay diverges at tick {:?}", report.first_mismatch)));
    }
    Ok(())
}

/// Split a validated session into per-segment clips.
pub fn cut_clips(log: &SessionLog) -> Result<Vec<ExpertClip>, ClipError> {
    validate_source(log)?;
    let n = log.header.config.n_pairs;
    let mut ends = vec![None; n];
    for e in log.events().filter(|e| e.kind == "SegmentComplete") {
        if let Some(s) = e.payload.get("segment").and_then(|v| v.as_u64()) {
            if (s as usize) < n {
                ends[s as usize] = Some(e.t);
            }
        }
    }
    let mut clips = Vec::with_capacity(n);
    let mut from = 0;
    for (segment, end) in ends.into_iter().enumerate() {
        let end = end.ok_or_else(|| ClipError::Rejected(format!("segment {segment} never completed")))?;
        let frames = log
            .ticks()
            .filter(|t| t.t > from && t.t <= end)
            .map(|t| ClipFrame { t: t.t, left: t.left, right: t.right, needle: t.needle })
            .collect();
        clips.push(ExpertClip { segment, tick_rate: log.header.config.tick_rate, frames });
        from = end;
    }
    Ok(clips)
}

#[derive(Debug, Clone)]
pub struct ClipStore {
    dir: PathBuf,
    index: ClipIndex,
}

impl ClipStore {
    fn clip_path(dir: &Path, segment: usize) -> PathBuf {
        dir.join(format!("segment_{segment}.clip"))
    }

    /// Validate `log` and write one clip per segment into `dir`.
    pub fn build(dir: &Path, log: &SessionLog) -> Result<ClipStore, ClipError> {
        let clips = cut_clips(log)?;
        std::fs::create_dir_all(dir)?;
        for c in &clips {
            let mut f = std::io::BufWriter::new(std::fs::File::create(Self::clip_path(dir, c.segment))?);
            c.write_to(&mut f)?;
            f.flush()?;
        }
        let index = ClipIndex {
            segments: clips.len(),
            tick_rate: log.header.config.tick_rate,
            participant: log.header.participant.clone(),
            seed: log.header.seed,
        };
        std::fs::write(dir.join(INDEX_FILE), serde_json::to_vec_pretty(&index).expect("index serializes"))?;
        Ok(ClipStore { dir: dir.to_path_buf(), index })
    }

    pub fn open(dir: &Path) -> Result<ClipStore, ClipError> {
        let path = dir.join(INDEX_FILE);
        let index = serde_json::from_slice(&std::fs::read(&path)?)
            .map_err(|e| ClipError::Format { path, message: e.to_string() })?;
        Ok(ClipStore { dir: dir.to_path_buf(), index })
    }

    pub fn index(&self) -> &ClipIndex {
        &self.index
    }

    pub fn expert_clip(&self, segment: usize) -> Result<ExpertClip, ClipError> {
        if segment >= self.index.segments {
            return Err(ClipError::OutOfRange { segment, count: self.index.segments });
        }
        let path = Self::clip_path(&self.dir, segment);
        if !path.exists() {
            return Err(ClipError::Missing(segment));
        }
        let clip = ExpertClip::read(&path)?;
        if clip.segment != segment {
            return Err(ClipError::Format { path, message: format!("holds segment {}", clip.segment) });
        }
        Ok(clip)
    }
}
