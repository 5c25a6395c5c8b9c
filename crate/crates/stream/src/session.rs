//! A session runs one two-arm comparison over an event stream: it maps
//! variant ids to arms (or relabels them randomly for A/A checks), feeds the
//! engine, emits a checkpoint record every `batch` events, and can be
//! snapshotted to a versioned, checksummed state blob and resumed with
//! byte-identical continuation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seqscore_core::family::FamilySpec;
use seqscore_core::msprt::{MsprtConfig, MsprtEngine};
use seqscore_core::score::{Arm, Observation};
use seqscore_core::seeding::{derive_seed, splitmix64};
use seqscore_core::sst::{CheckpointRecord, PriorSpec, SstEngine, SstTrace, StopInfo, TestConfig};

use crate::error::{Result, StreamError};
use crate::event::EventRecord;

/// Which engine the session drives. Both share the trace protocol and the
/// checkpoint schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Sst,
    Msprt,
}

/// Session configuration. The prior center for the score test is the zero
/// vector (no-effect null); its scale is `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub family: FamilySpec,
    pub engine: EngineKind,
    pub alpha: f64,
    pub tau: f64,
    /// Events per checkpoint, counted across both arms.
    pub batch: usize,
    /// Per-arm cap; reaching it on both arms accepts the null.
    pub cap_n: usize,
    /// Covariate count excluding the intercept.
    pub covariate_dim: usize,
    /// Variant treated as control; the first id seen when absent.
    pub control_variant: Option<String>,
    /// When set, variant ids are ignored and arms are assigned by a seeded
    /// per-event coin flip (A/A mode).
    pub aa_seed: Option<u64>,
    pub stop_early: bool,
}

impl SessionConfig {
    /// Canonical hash binding state files to the configuration that wrote
    /// them.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        sha256_hex(canonical.as_bytes())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum EngineState {
    Sst(SstEngine),
    Msprt(MsprtEngine),
}

/// Running session state; serializable in full so a restored session
/// continues exactly where the snapshot left off.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Session {
    config: SessionConfig,
    engine: EngineState,
    control_id: Option<String>,
    treatment_id: Option<String>,
    /// Input records consumed, including skipped ones; a resumed replay
    /// skips this many records.
    records_seen: usize,
    /// Events accepted by the engine; indexes the A/A relabeling stream.
    events_used: usize,
    skipped: usize,
    last_timestamp: Option<String>,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self> {
        let dim = config.covariate_dim + 1;
        let engine = match config.engine {
            EngineKind::Sst => {
                let prior = PriorSpec::centered(dim, config.tau)?;
                let mut test = TestConfig::new(
                    config.family,
                    prior,
                    config.alpha,
                    config.batch,
                    config.cap_n,
                )?;
                test.stop_early = config.stop_early;
                EngineState::Sst(SstEngine::new(test)?)
            }
            EngineKind::Msprt => {
                let mut test = MsprtConfig::new(
                    config.family,
                    config.tau,
                    config.alpha,
                    config.batch,
                    config.cap_n,
                )?;
                test.stop_early = config.stop_early;
                EngineState::Msprt(MsprtEngine::new(test)?)
            }
        };
        let control_id = config.control_variant.clone();
        Ok(Session {
            config,
            engine,
            control_id,
            treatment_id: None,
            records_seen: 0,
            events_used: 0,
            skipped: 0,
            last_timestamp: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn trace(&self) -> &SstTrace {
        match &self.engine {
            EngineState::Sst(e) => e.trace(),
            EngineState::Msprt(e) => e.trace(),
        }
    }

    pub fn finished(&self) -> bool {
        match &self.engine {
            EngineState::Sst(e) => e.finished(),
            EngineState::Msprt(e) => e.finished(),
        }
    }

    pub fn counts(&self) -> (usize, usize) {
        match &self.engine {
            EngineState::Sst(e) => e.counts(),
            EngineState::Msprt(e) => e.counts(),
        }
    }

    pub fn records_seen(&self) -> usize {
        self.records_seen
    }

    pub fn events_used(&self) -> usize {
        self.events_used
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn p_value(&self) -> f64 {
        self.trace().p_value()
    }

    /// Note a record that was consumed from the input but not usable
    /// (lenient mode).
    pub fn note_skipped(&mut self) {
        self.records_seen += 1;
        self.skipped += 1;
    }

    /// Feed one event. Returns the checkpoint record when this event closed
    /// a batch. Errors leave the session unchanged except that the caller
    /// must decide whether to `note_skipped` (lenient) or abort (strict).
    pub fn advance(&mut self, event: &EventRecord, line: usize) -> Result<Option<CheckpointRecord>> {
        if event.covariates.len() != self.config.covariate_dim {
            return Err(StreamError::Parse {
                line,
                reason: format!(
                    "expected {} covariates, got {}",
                    self.config.covariate_dim,
                    event.covariates.len()
                ),
            });
        }
        if let Some(last) = &self.last_timestamp {
            if event.timestamp < *last {
                return Err(StreamError::Parse {
                    line,
                    reason: format!(
                        "timestamp '{}' breaks the stream order (last was '{last}')",
                        event.timestamp
                    ),
                });
            }
        }
        let (arm, pending_assignment) = self.resolve_arm(event, line)?;

        let mut x = Vec::with_capacity(event.covariates.len() + 1);
        x.push(1.0);
        x.extend_from_slice(&event.covariates);
        let obs = Observation::new(arm, event.response, x);

        let checkpoint = match &mut self.engine {
            EngineState::Sst(e) => e.push(&obs, line),
            EngineState::Msprt(e) => e.push(&obs, line),
        }
        .map_err(|e| StreamError::Parse {
            line,
            reason: e.to_string(),
        })?;

        if let Some((slot, id)) = pending_assignment {
            match slot {
                Arm::Control => self.control_id = Some(id),
                Arm::Treatment => self.treatment_id = Some(id),
            }
        }
        self.records_seen += 1;
        self.events_used += 1;
        self.last_timestamp = Some(event.timestamp.clone());
        Ok(checkpoint.map(|c| record_of(&c)))
    }

    /// Close a partial batch at end of stream.
    pub fn finish(&mut self) -> Result<Option<CheckpointRecord>> {
        let checkpoint = match &mut self.engine {
            EngineState::Sst(e) => e.flush()?,
            EngineState::Msprt(e) => Ok::<_, StreamError>(e.flush())?,
        };
        Ok(checkpoint.map(|c| record_of(&c)))
    }

    fn resolve_arm(
        &self,
        event: &EventRecord,
        line: usize,
    ) -> Result<(Arm, Option<(Arm, String)>)> {
        if let Some(seed) = self.config.aa_seed {
            let bit = splitmix64(derive_seed(seed, self.events_used as u64)) & 1;
            let arm = if bit == 1 { Arm::Treatment } else { Arm::Control };
            return Ok((arm, None));
        }
        let id = &event.variant_id;
        if self.control_id.as_deref() == Some(id) {
            return Ok((Arm::Control, None));
        }
        if self.treatment_id.as_deref() == Some(id) {
            return Ok((Arm::Treatment, None));
        }
        if self.control_id.is_none() {
            return Ok((Arm::Control, Some((Arm::Control, id.clone()))));
        }
        if self.treatment_id.is_none() {
            return Ok((Arm::Treatment, Some((Arm::Treatment, id.clone()))));
        }
        Err(StreamError::UnknownVariant {
            line,
            variant: id.clone(),
        })
    }
}

fn record_of(c: &seqscore_core::sst::TraceCheckpoint) -> CheckpointRecord {
    CheckpointRecord {
        n1: c.n1 as u64,
        n0: c.n0 as u64,
        log_lambda_mix: c.log_lambda,
        p_value: c.p_value,
        deferred: c.deferred,
        decided: c.decided,
    }
}

/// Outcome of replaying a finite stream through a session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayReport {
    pub checkpoints: Vec<CheckpointRecord>,
    pub records_seen: usize,
    pub events_used: usize,
    pub skipped: usize,
    /// Whether the last checkpoint covered a partial batch at end of stream.
    pub partial_final: bool,
    pub decided: Option<StopInfo>,
}

/// Drive parsed events through a session until it finishes or the stream
/// ends. In strict mode the first malformed record aborts; in lenient mode
/// it is counted and skipped.
pub fn replay<I>(session: &mut Session, events: I, strict: bool) -> Result<ReplayReport>
where
    I: IntoIterator<Item = (usize, Result<EventRecord>)>,
{
    let mut checkpoints = Vec::new();
    let mut ended_mid_batch = false;
    for (line, parsed) in events {
        if session.finished() {
            ended_mid_batch = false;
            break;
        }
        let event = match parsed {
            Ok(e) => e,
            Err(e) => {
                if strict {
                    return Err(e);
                }
                session.note_skipped();
                continue;
            }
        };
        match session.advance(&event, line) {
            Ok(Some(record)) => {
                checkpoints.push(record);
                ended_mid_batch = false;
            }
            Ok(None) => {
                ended_mid_batch = true;
            }
            Err(e) => {
                if strict {
                    return Err(e);
                }
                session.note_skipped();
            }
        }
    }
    let mut partial_final = false;
    if ended_mid_batch && !session.finished() {
        if let Some(record) = session.finish()? {
            checkpoints.push(record);
            partial_final = true;
        }
    }
    Ok(ReplayReport {
        checkpoints,
        records_seen: session.records_seen(),
        events_used: session.events_used(),
        skipped: session.skipped(),
        partial_final,
        decided: session.trace().decided().copied(),
    })
}

const STATE_FORMAT: &str = "seqscore-session-state";
const STATE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct StateHeader {
    format: String,
    version: u32,
    config_sha256: String,
    payload_sha256: String,
}

/// Serialize a session to a two-line state blob: a header carrying the
/// version, the config hash, and the payload checksum, then the payload.
pub fn snapshot_state(session: &Session) -> Vec<u8> {
    let payload = serde_json::to_string(session).expect("session serializes");
    let header = StateHeader {
        format: STATE_FORMAT.into(),
        version: STATE_VERSION,
        config_sha256: session.config().config_hash(),
        payload_sha256: sha256_hex(payload.as_bytes()),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    out.push_str(&payload);
    out.push('\n');
    out.into_bytes()
}

/// Restore a session, verifying the format version, the payload checksum,
/// and that the state was written under `expected` configuration.
pub fn restore_state(bytes: &[u8], expected: &SessionConfig) -> Result<Session> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| StreamError::State("state file is not valid UTF-8".into()))?;
    let (header_line, payload) = text
        .split_once('\n')
        .ok_or_else(|| StreamError::State("state file is truncated".into()))?;
    let payload = payload.strip_suffix('\n').unwrap_or(payload);
    let header: StateHeader = serde_json::from_str(header_line)
        .map_err(|e| StreamError::State(format!("bad state header: {e}")))?;
    if header.format != STATE_FORMAT {
        return Err(StreamError::State(format!(
            "not a session state file (format '{}')",
            header.format
        )));
    }
    if header.version != STATE_VERSION {
        return Err(StreamError::State(format!(
            "unsupported state version {} (this build reads {STATE_VERSION})",
            header.version
        )));
    }
    if sha256_hex(payload.as_bytes()) != header.payload_sha256 {
        return Err(StreamError::State("payload checksum mismatch".into()));
    }
    if header.config_sha256 != expected.config_hash() {
        return Err(StreamError::State(
            "state was written under a different configuration".into(),
        ));
    }
    let session: Session = serde_json::from_str(payload)
        .map_err(|e| StreamError::State(format!("bad state payload: {e}")))?;
    Ok(session)
}

/// A/A relabeling report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AaReport {
    pub runs: usize,
    pub rejections: usize,
    pub per_run_rejected: Vec<bool>,
}

/// Run `relabelings` A/A passes over the same events, each with an
/// independently seeded fake arm assignment, and count rejections.
pub fn aa_check(
    events: &[EventRecord],
    base: &SessionConfig,
    relabelings: usize,
    seed: u64,
) -> Result<AaReport> {
    use rayon::prelude::*;
    let outcomes: Vec<Result<bool>> = (0..relabelings)
        .into_par_iter()
        .map(|r| {
            let mut config = base.clone();
            config.aa_seed = Some(derive_seed(seed, r as u64));
            let mut session = Session::new(config)?;
            let report = replay(&mut session, session_events(events), true)?;
            Ok(report.decided.is_some())
        })
        .collect();
    let mut per_run_rejected = Vec::with_capacity(relabelings);
    for out in outcomes {
        per_run_rejected.push(out?);
    }
    let rejections = per_run_rejected.iter().filter(|r| **r).count();
    Ok(AaReport {
        runs: relabelings,
        rejections,
        per_run_rejected,
    })
}

fn session_events(
    events: &[EventRecord],
) -> impl Iterator<Item = (usize, Result<EventRecord>)> + '_ {
    events
        .iter()
        .enumerate()
        .map(|(i, e)| (i + 1, Ok(e.clone())))
}
