//! One live session: last-writer-wins input sampling on a fixed tick.

use serde::{Deserialize, Serialize};
use vcoach_core::metrics::DeficitMetrics;
use vcoach_core::session::{event_records, EventRecord, SessionError, SessionHeader, SessionRecorder};
use vcoach_core::task::InstrumentCommand;
use vcoach_core::tpm::Phase;
use vcoach_core::{CueDescriptor, EngineOptions, InputTick, NeedleTopoState, Pose, SessionLog, TaskConfig, Vec3};

/// Instrument input from a client. `seq` must increase per connection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientInput {
    pub seq: u64,
    /// Client clock, milliseconds.
    pub t: f64,
    #[serde(rename = "L")]
    pub left: InstrumentCommand,
    #[serde(rename = "R")]
    pub right: InstrumentCommand,
    pub master: [Vec3; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveMetrics {
    pub deficits: DeficitMetrics,
    pub segments_completed: usize,
    pub elapsed_s: f64,
}

/// Pushed to the client once per engine tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub tick: u64,
    pub needle: Pose,
    pub topo: NeedleTopoState,
    pub seg: usize,
    pub phase: Phase,
    pub cues: Vec<CueDescriptor>,
    pub metrics: LiveMetrics,
    pub events: Vec<EventRecord>,
    pub prompts: Vec<String>,
}

pub struct LiveSession {
    recorder: SessionRecorder,
    latest: Option<ClientInput>,
    last_seq: Option<u64>,
    pending: Vec<EventRecord>,
    tick: u64,
}

impl LiveSession {
    pub fn new(config: TaskConfig, options: EngineOptions, participant: &str, label: &str) -> Result<Self, SessionError> {
        let header = SessionHeader::new(config, &options, participant, label, 0);
        Ok(LiveSession { recorder: SessionRecorder::new(header)?, latest: None, last_seq: None, pending: Vec::new(), tick: 0 })
    }

    pub fn header(&self) -> &SessionHeader {
        self.recorder.header()
    }

    /// Store the newest input. A sequence regression is dropped and reported in the next state.
    pub fn submit(&mut self, input: ClientInput) -> bool {
        if self.last_seq.is_some_and(|s| input.seq <= s) {
            self.pending.push(EventRecord {
                t: self.tick,
                kind: "InputIgnored".into(),
                payload: serde_json::json!({ "seq": input.seq, "last": self.last_seq }),
            });
            return false;
        }
        self.last_seq = Some(input.seq);
        self.latest = Some(input);
        true
    }

    /// Advance one tick with the latest input, or hold the previous commands.
    pub fn step(&mut self) -> Result<ServerState, SessionError> {
        self.tick += 1;
        let engine = self.recorder.engine();
        let input = match self.latest {
            Some(c) => InputTick { tick: self.tick, left: c.left, right: c.right, master: c.master },
            None => InputTick::hold(engine.world(), self.tick),
        };
        let out = self.recorder.tick(&input)?;
        let mut events: Vec<EventRecord> = std::mem::take(&mut self.pending);
        events.iter_mut().for_each(|e| e.t = self.tick);
        events.extend(event_records(&out));
        let engine = self.recorder.engine();
        let cues = engine.descriptors();
        let prompts = cues.iter().filter_map(|c| c.prompt.clone()).collect();
        let progress = engine.progress();
        Ok(ServerState {
            tick: self.tick,
            needle: engine.world().needle_pose,
            topo: progress.topo,
            seg: progress.segment_index,
            phase: progress.phase,
            cues,
            metrics: LiveMetrics {
                deficits: engine.live_deficits(),
                segments_completed: engine.segments().len(),
                elapsed_s: engine.config().tick_seconds(self.tick),
            },
            events,
            prompts,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.recorder.engine().is_complete()
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    /// Final log with footer metrics; `None` when no tick ran.
    pub fn finish(self) -> Result<Option<SessionLog>, SessionError> {
        if self.tick == 0 {
            return Ok(None);
        }
        self.recorder.finish().map(Some)
    }
}
