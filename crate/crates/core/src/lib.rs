//! Domain core of the virtual patient: scenario packs, trigger rules,
//! playback planning, the push-to-talk turn machine, responders, and the
//! session pipeline that ties them together.

pub mod clock;
pub mod dialogue;
pub mod responder;
pub mod scenario;
pub mod session;
pub mod text;
pub mod timeline;
pub mod trigger;
