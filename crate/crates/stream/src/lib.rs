//! Event-log replay and live monitoring for sequential tests: parsers,
//! two-variant sessions with resumable state, A/A relabeling checks, and
//! pairwise multiple comparisons across variants.

pub mod error;
pub mod event;
pub mod pairwise;
pub mod session;
pub mod synth;

pub use error::{Result, StreamError};
pub use event::{to_csv_string, EventReader, EventRecord, LogFormat};
pub use pairwise::{pairwise_compare, PairOutcome, PairwiseReport};
pub use session::{
    aa_check, replay, restore_state, snapshot_state, AaReport, EngineKind, ReplayReport, Session,
    SessionConfig,
};
pub use synth::{generate_log, SynthConfig};
