//! Piano transcription pipeline toolkit.
//!
//! Everything downstream of an acoustic model (and upstream of one, on the
//! label side): MIDI parsing with sustain-pedal translation, log-mel
//! spectrogram frontend, frame/onset/velocity training targets, the
//! transcription losses with analytic gradients, onset-gated decoding of
//! posteriorgrams into note events, and note-matching evaluation metrics
//! including the velocity-aware family.
//!
//! The crate consumes and produces plain files: WAV audio, Standard MIDI
//! Files, and `MAT1` matrix containers (see [`mat1`]). Posteriorgrams are
//! expected from files; no model inference happens here.

pub mod decoder;
pub mod frontend;
pub mod labels;
pub mod losses;
pub mod mat1;
pub mod metrics;
pub mod midi;
pub mod types;
pub mod wav;

pub use decoder::{decode, decode_frames_only, DecoderConfig};
pub use labels::LabelSet;
pub use losses::LossBreakdown;
pub use metrics::{aggregate, evaluate_piece, EvalReport, MatchingConfig};
pub use types::{BinaryRoll, FrameGrid, NoteEvent, NoteSequence, Pitch, Posteriorgram};
