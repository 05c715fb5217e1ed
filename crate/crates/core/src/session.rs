//! Session logs: JSON-lines files with a header, per-tick input and state,
//! timestamped events, and a metrics footer.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::coach::{CoachingMode, ThresholdTable};
use crate::cues::{CueChange, CueKind};
use crate::engine::{Engine, EngineError, EngineOptions, TickOutput};
use crate::geometry::{Pose, UnitQuat, Vec3};
use crate::metrics::{aggregate, segment_arcs, MetricsError, MotionSample, SegmentMetrics, TaskMetrics};
use crate::task::{InputTick, InstrumentCommand, NeedleContact, Side, SimEvent, TaskConfig};
use crate::tpm::{NeedleTopoState, TpmEvent, TpmEventKind};

pub const SESSION_VERSION: u32 = 1;
pub const SESSION_EXTENSION: &str = "vcs";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported session version {found} (expected {SESSION_VERSION})")]
    Version { found: u32 },
    #[error("session log is truncated: {0}")]
    Truncated(&'static str),
    #[error("tick {got} does not follow tick {last}")]
    NonMonotone { last: u64, got: u64 },
    #[error("event at tick {got} outside current tick {current}")]
    EventOutOfOrder { current: u64, got: u64 },
    #[error("session already finished")]
    Finished,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub version: u32,
    pub config: TaskConfig,
    pub mode: CoachingMode,
    pub participant: String,
    pub label: String,
    pub handedness: Side,
    pub seed: u64,
    pub thresholds: ThresholdTable,
}

impl SessionHeader {
    pub fn new(config: TaskConfig, options: &EngineOptions, participant: &str, label: &str, seed: u64) -> Self {
        SessionHeader {
            version: SESSION_VERSION,
            config,
            mode: options.mode,
            participant: participant.to_string(),
            label: label.to_string(),
            handedness: options.handedness,
            seed,
            thresholds: options.thresholds.clone(),
        }
    }

    pub fn engine_options(&self) -> EngineOptions {
        EngineOptions { mode: self.mode, handedness: self.handedness, thresholds: self.thresholds.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: u64,
    #[serde(rename = "L")]
    pub left: InstrumentCommand,
    #[serde(rename = "R")]
    pub right: InstrumentCommand,
    pub master: [Vec3; 2],
    pub needle: Pose,
    pub cues: Vec<CueKind>,
}

impl TickRecord {
    pub fn input(&self) -> InputTick {
        InputTick { tick: self.t, left: self.left, right: self.right, master: self.master }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: u64,
    pub kind: String,
    #[serde(default)]
    pub payload: Value,
}

impl EventRecord {
    fn from_tagged(t: u64, tagged: Value) -> EventRecord {
        let kind = tagged.get("kind").and_then(Value::as_str).unwrap_or_default().to_string();
        let payload = tagged.get("payload").cloned().unwrap_or(Value::Null);
        EventRecord { t, kind, payload }
    }

    pub fn sim(e: &SimEvent) -> EventRecord {
        Self::from_tagged(e.tick, serde_json::to_value(&e.kind).expect("event serializes"))
    }

    pub fn tpm(e: &TpmEvent) -> EventRecord {
        Self::from_tagged(e.tick, serde_json::to_value(&e.kind).expect("event serializes"))
    }

    pub fn cue(t: u64, c: &CueChange) -> EventRecord {
        let kind = if c.shown { "CueShown" } else { "CueHidden" };
        EventRecord { t, kind: kind.to_string(), payload: serde_json::json!({ "cue": c.kind }) }
    }

    pub fn segment(t: u64, m: &SegmentMetrics) -> EventRecord {
        EventRecord { t, kind: "SegmentMetrics".to_string(), payload: serde_json::to_value(m).expect("serializes") }
    }

    /// Back to a TPM event, if this record is one.
    pub fn as_tpm(&self) -> Option<TpmEvent> {
        let v = serde_json::json!({ "kind": self.kind, "payload": self.payload });
        let v = if self.payload.is_null() { serde_json::json!({ "kind": self.kind }) } else { v };
        serde_json::from_value(v).ok().map(|kind| TpmEvent { tick: self.t, kind })
    }

    pub fn as_sim(&self) -> Option<SimEvent> {
        let v = if self.payload.is_null() {
            serde_json::json!({ "kind": self.kind })
        } else {
            serde_json::json!({ "kind": self.kind, "payload": self.payload })
        };
        serde_json::from_value(v).ok().map(|kind| SimEvent { tick: self.t, kind })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFooter {
    pub metrics: TaskMetrics,
    pub segments: Vec<SegmentMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionLine {
    Tick(TickRecord),
    Event(EventRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: SessionHeader,
    pub lines: Vec<SessionLine>,
    pub footer: SessionFooter,
}

fn to_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("session records serialize")
}

impl SessionLog {
    pub fn ticks(&self) -> impl Iterator<Item = &TickRecord> {
        self.lines.iter().filter_map(|l| match l {
            SessionLine::Tick(t) => Some(t),
            SessionLine::Event(_) => None,
        })
    }

    pub fn events(&self) -> impl Iterator<Item = &EventRecord> {
        self.lines.iter().filter_map(|l| match l {
            SessionLine::Event(e) => Some(e),
            SessionLine::Tick(_) => None,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), SessionError> {
        writeln!(w, "{}", to_line(&self.header))?;
        for line in &self.lines {
            match line {
                SessionLine::Tick(t) => writeln!(w, "{}", to_line(t))?,
                SessionLine::Event(e) => writeln!(w, "{}", to_line(e))?,
            }
        }
        writeln!(w, "{}", to_line(&self.footer))?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), SessionError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SessionLog, SessionError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Header and footer only, skipping the tick body. Used for cohort reports.
    pub fn read_summary(path: &Path) -> Result<(SessionHeader, SessionFooter), SessionError> {
        use std::io::{Read, Seek, SeekFrom};
        let mut f = std::fs::File::open(path)?;
        let mut first = String::new();
        std::io::BufReader::new(&mut f).read_line(&mut first)?;
        let value: Value = serde_json::from_str(first.trim_end())
            .map_err(|e| SessionError::Parse { line: 1, message: e.to_string() })?;
        let found = value.get("version").and_then(Value::as_u64).ok_or(SessionError::Parse {
            line: 1,
            message: "first line is not a session header".into(),
        })?;
        if found != SESSION_VERSION as u64 {
            return Err(SessionError::Version { found: found as u32 });
        }
        let header: SessionHeader = serde_json::from_value(value)
            .map_err(|e| SessionError::Parse { line: 1, message: e.to_string() })?;

        let len = f.seek(SeekFrom::End(0))?;
        let mut window = 64 * 1024u64;
        loop {
            let start = len.saturating_sub(window);
            f.seek(SeekFrom::Start(start))?;
            let mut buf = Vec::new();
            f.read_to_end(&mut buf)?;
            let body = String::from_utf8_lossy(&buf);
            let trimmed = body.trim_end();
            match trimmed.rfind('\n') {
                Some(i) => {
                    let last = &trimmed[i + 1..];
                    let v: Value = serde_json::from_str(last)
                        .map_err(|_| SessionError::Truncated("missing metrics footer"))?;
                    if v.get("metrics").is_none() {
                        return Err(SessionError::Truncated("missing metrics footer"));
                    }
                    let footer = serde_json::from_value(v)
                        .map_err(|e| SessionError::Parse { line: 0, message: e.to_string() })?;
                    return Ok((header, footer));
                }
                None if start == 0 => return Err(SessionError::Truncated("missing metrics footer")),
                None => window *= 4,
            }
        }
    }

    pub fn parse(text: &str) -> Result<SessionLog, SessionError> {
        Self::read(text.as_bytes())
    }

    pub fn read(r: impl BufRead) -> Result<SessionLog, SessionError> {
        let mut header = None;
        let mut lines = Vec::new();
        let mut footer = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if footer.is_some() {
                return Err(SessionError::Parse { line: n, message: "content after footer".into() });
            }
            let bad = |e: serde_json::Error| SessionError::Parse { line: n, message: e.to_string() };
            let value: Value = serde_json::from_str(&line).map_err(bad)?;
            if header.is_none() {
                let found = value.get("version").and_then(Value::as_u64).ok_or(SessionError::Parse {
                    line: n,
                    message: "first line is not a session header".into(),
                })?;
                if found != SESSION_VERSION as u64 {
                    return Err(SessionError::Version { found: found as u32 });
                }
                header = Some(serde_json::from_value::<SessionHeader>(value).map_err(bad)?);
            } else if value.get("metrics").is_some() {
                footer = Some(serde_json::from_value::<SessionFooter>(value).map_err(bad)?);
            } else if value.get("kind").is_some() {
                lines.push(SessionLine::Event(serde_json::from_value(value).map_err(bad)?));
            } else {
                lines.push(SessionLine::Tick(serde_json::from_value(value).map_err(bad)?));
            }
        }
        let header = header.ok_or(SessionError::Truncated("missing header"))?;
        let footer = footer.ok_or(SessionError::Truncated("missing metrics footer"))?;
        Ok(SessionLog { header, lines, footer })
    }

    /// Metrics recomputed from the logged ticks and events alone.
    pub fn recompute_metrics(&self) -> Result<TaskMetrics, SessionError> {
        let config = &self.header.config;
        let mut samples = Vec::new();
        let mut sim = Vec::new();
        let mut tpm = Vec::new();
        let mut topo = NeedleTopoState::S0;
        let mut segment = 0;
        let mut pending: Option<MotionSample> = None;
        let flush = |s: Option<MotionSample>, topo, samples: &mut Vec<MotionSample>| {
            if let Some(mut s) = s {
                s.topo = topo;
                samples.push(s);
            }
        };
        for line in &self.lines {
            match line {
                SessionLine::Tick(t) => {
                    flush(pending.take(), topo, &mut samples);
                    let (contact, _) = NeedleContact::measure(&t.needle, config);
                    let shaft = |c: &InstrumentCommand| {
                        let q = c.pose.orientation;
                        Pose::new(c.pose.position, UnitQuat::from_components(q.w, q.x, q.y, q.z))
                            .transform_point(Vec3::new(0.0, 0.0, config.shaft_offset))
                    };
                    pending = Some(MotionSample {
                        tick: t.t,
                        tips: [t.left.pose.position, t.right.pose.position],
                        shafts: [shaft(&t.left), shaft(&t.right)],
                        masters: t.master,
                        needle_tip: contact.tip,
                        tip_below: contact.tip_below,
                        segment,
                        topo,
                    });
                }
                SessionLine::Event(e) => {
                    if let Some(s) = e.as_sim() {
                        sim.push(s);
                    } else if let Some(ev) = e.as_tpm() {
                        match ev.kind {
                            TpmEventKind::Transition { to, .. } => topo = to,
                            TpmEventKind::SegmentComplete { .. } => segment += 1,
                            _ => {}
                        }
                        tpm.push(ev);
                    }
                }
            }
        }
        flush(pending.take(), topo, &mut samples);
        Ok(aggregate(&samples, &sim, &tpm, &segment_arcs(config), config.tick_rate)?)
    }
}

/// Drives an engine and records every tick into a session log.
#[derive(Debug, Clone)]
pub struct SessionRecorder {
    engine: Engine,
    header: SessionHeader,
    lines: Vec<SessionLine>,
    last_tick: Option<u64>,
}

impl SessionRecorder {
    pub fn new(header: SessionHeader) -> Result<Self, SessionError> {
        let engine = Engine::new(header.config.clone(), header.engine_options())?;
        Ok(SessionRecorder { engine, header, lines: Vec::new(), last_tick: None })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn header(&self) -> &SessionHeader {
        &self.header
    }

    pub fn tick(&mut self, input: &InputTick) -> Result<TickOutput, SessionError> {
        let out = self.engine.tick(input)?;
        self.append_tick(TickRecord {
            t: input.tick,
            left: input.left,
            right: input.right,
            master: input.master,
            needle: self.engine.world().needle_pose,
            cues: self.engine.cue_lifecycle().active.iter().copied().collect(),
        })?;
        for e in event_records(&out) {
            self.append_event(e)?;
        }
        Ok(out)
    }

    pub fn append_tick(&mut self, record: TickRecord) -> Result<(), SessionError> {
        if let Some(last) = self.last_tick {
            if record.t <= last {
                return Err(SessionError::NonMonotone { last, got: record.t });
            }
        }
        self.last_tick = Some(record.t);
        self.lines.push(SessionLine::Tick(record));
        Ok(())
    }

    pub fn append_event(&mut self, record: EventRecord) -> Result<(), SessionError> {
        match self.last_tick {
            Some(current) if record.t == current => {
                self.lines.push(SessionLine::Event(record));
                Ok(())
            }
            current => Err(SessionError::EventOutOfOrder { current: current.unwrap_or(0), got: record.t }),
        }
    }

    pub fn finish(self) -> Result<SessionLog, SessionError> {
        let metrics = self.engine.finish()?;
        let footer = SessionFooter { metrics, segments: self.engine.segments().to_vec() };
        Ok(SessionLog { header: self.header, lines: self.lines, footer })
    }
}

/// Log records for one tick's output, in file order.
pub fn event_records(out: &TickOutput) -> Vec<EventRecord> {
    let mut v: Vec<EventRecord> = out.sim_events.iter().map(EventRecord::sim).collect();
    v.extend(out.tpm_events.iter().map(EventRecord::tpm));
    if let Some(m) = &out.segment_metrics {
        v.push(EventRecord::segment(out.tick, m));
    }
    v.extend(out.cue_changes.iter().map(|c| EventRecord::cue(out.tick, c)));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub ticks: usize,
    pub events_match: bool,
    pub metrics_match: bool,
    pub first_mismatch: Option<usize>,
    pub metrics: TaskMetrics,
}

impl ReplayReport {
    pub fn is_faithful(&self) -> bool {
        self.events_match && self.metrics_match
    }
}

/// Re-runs the logged inputs through a fresh engine and compares the result.
pub fn replay(log: &SessionLog) -> Result<ReplayReport, SessionError> {
    let mut rec = SessionRecorder::new(log.header.clone())?;
    for t in log.ticks() {
        rec.tick(&t.input())?;
    }
    let regenerated = rec.finish()?;
    let first_mismatch = log.lines.iter().zip(&regenerated.lines).position(|(a, b)| a != b).or_else(|| {
        (log.lines.len() != regenerated.lines.len()).then(|| log.lines.len().min(regenerated.lines.len()))
    });
    let metrics_match = to_line(&log.footer) == to_line(&regenerated.footer);
    Ok(ReplayReport {
        ticks: log.ticks().count(),
        events_match: first_mismatch.is_none(),
        metrics_match,
        first_mismatch,
        metrics: regenerated.footer.metrics,
    })
}
