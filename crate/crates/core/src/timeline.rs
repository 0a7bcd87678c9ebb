//! Playback planning: fits a selected clip to the reply's audio window so the
//! avatar never keeps moving after the speech ends.

use serde::{Deserialize, Serialize};

use crate::scenario::AnimationClipMeta;
use crate::text::{normalize_text, tokens};

/// Maximum allowed |play duration - audio duration|.
pub const DESYNC_TOLERANCE_MS: u64 = 250;

/// Floor for estimated speech duration.
pub const MIN_AUDIO_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechRate(f64);

impl SpeechRate {
    pub const DEFAULT_WPM: f64 = 165.0;

    pub fn new(words_per_minute: f64) -> Option<Self> {
        (words_per_minute.is_finite() && words_per_minute > 0.0).then_some(SpeechRate(words_per_minute))
    }

    pub fn words_per_minute(self) -> f64 {
        self.0
    }
}

impl Default for SpeechRate {
    fn default() -> Self {
        SpeechRate(Self::DEFAULT_WPM)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TimelineError {
    #[error("clip {clip_id:?} still has {lead_in_frames} lead-in frames; trim it before planning")]
    UntrimmedClip { clip_id: String, lead_in_frames: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaybackPlan {
    pub clip_id: String,
    pub start_offset_ms: u64,
    pub play_duration_ms: u64,
    /// Number of clip passes, at least 1. The last one may be cut short.
    pub loop_count: u32,
    /// Length of the final pass.
    pub last_loop_ms: u64,
    /// Time spent holding the final frame of a short, non-loopable clip.
    pub hold_last_frame_ms: u64,
    /// Lip movement window relative to response start: `(0, audio_ms)`.
    pub lip_sync_window_ms: (u64, u64),
}

/// Drops lead-in frames; the playable part of the clip is unchanged.
pub fn trim_lead_in(clip: &AnimationClipMeta) -> AnimationClipMeta {
    AnimationClipMeta {
        total_frames: clip.total_frames - clip.lead_in_frames.min(clip.total_frames),
        lead_in_frames: 0,
        ..clip.clone()
    }
}

/// Speech length estimate used when no audio adapter reports real timing.
pub fn estimate_audio_duration(reply: &str, rate: SpeechRate) -> u64 {
    let normalized = normalize_text(reply);
    let words = tokens(&normalized).len() as f64;
    let ms = (words / (rate.words_per_minute() / 60.0) * 1000.0).round() as u64;
    ms.max(MIN_AUDIO_MS)
}

/// Fits a trimmed clip to `audio_ms`.
///
/// Longer clips are truncated. Shorter loopable clips repeat with the final
/// pass truncated. Shorter one-shot clips hold their last frame. In every case
/// the play duration equals the audio duration (clamped to at least 1 ms).
pub fn plan_playback(clip: &AnimationClipMeta, audio_ms: u64) -> Result<PlaybackPlan, TimelineError> {
    if clip.lead_in_frames > 0 {
        return Err(TimelineError::UntrimmedClip {
            clip_id: clip.id.clone(),
            lead_in_frames: clip.lead_in_frames,
        });
    }
    let play = audio_ms.max(1);
    let clip_ms = clip.effective_duration_ms();
    let play_f = play as f64;

    let (loop_count, last_loop_ms, hold_last_frame_ms) = if clip_ms >= play_f || !clip_ms.is_finite() {
        (1, play, 0)
    } else if clip.loopable {
        let loops = (play_f / clip_ms).ceil().max(1.0) as u32;
        let consumed = f64::from(loops - 1) * clip_ms;
        let last = (play_f - consumed).round().max(0.0) as u64;
        (loops, last, 0)
    } else {
        let shown = clip_ms.round() as u64;
        (1, shown, play.saturating_sub(shown))
    };

    Ok(PlaybackPlan {
        clip_id: clip.id.clone(),
        start_offset_ms: 0,
        play_duration_ms: play,
        loop_count,
        last_loop_ms,
        hold_last_frame_ms,
        lip_sync_window_ms: (0, audio_ms),
    })
}

/// The pre-repair behaviour: the whole clip, lead-in included, plays once no
/// matter how long the speech is. Kept to reproduce the desync defect.
pub fn full_clip_plan(clip: &AnimationClipMeta, audio_ms: u64) -> PlaybackPlan {
    let full = clip.full_duration_ms().round() as u64;
    PlaybackPlan {
        clip_id: clip.id.clone(),
        start_offset_ms: 0,
        play_duration_ms: full,
        loop_count: 1,
        last_loop_ms: full,
        hold_last_frame_ms: 0,
        lip_sync_window_ms: (0, audio_ms),
    }
}

pub fn measure_desync(plan: &PlaybackPlan, audio_ms: u64) -> u64 {
    plan.play_duration_ms.abs_diff(audio_ms)
}
