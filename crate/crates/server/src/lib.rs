//! Session server: the JSON wire protocol, a synchronous driver that maps
//! frames onto core sessions, the HTTP chat-completion transport, and the
//! WebSocket host.

pub mod driver;
pub mod llm;
pub mod protocol;
pub mod ws;

pub use driver::{ResponderChoice, ResponderFactory, ServerContext, SessionDriver};
pub use llm::{HttpChatTransport, LlmConfig};
pub use protocol::{parse_client, ClientEnvelope, ClientMessage, ProtocolError, ServerEnvelope, ServerMessage};
