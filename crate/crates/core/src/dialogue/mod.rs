//! Turn-taking, the push-to-talk input gate and repetition suppression.

mod repetition;
mod turn;

pub use repetition::{
    pair_similarity, repetition_score, suppress_repetition, RepetitionConfig, SuppressionOutcome,
    DO_NOT_REPEAT_DIRECTIVE,
};
pub use turn::{
    encode_text_chunk, is_legal_transition, ChunkVerdict, DialogueManager, DiscardReason, GateCloseOutcome,
    GateOpenOutcome, InputChunk, InputSource, RejectReason, TextChunkTranscriber, TranscribeError, Transcriber,
    Transition, TurnPhase, TurnState, UtteranceBuffer, DEFAULT_GATE_COOLDOWN_MS,
};
