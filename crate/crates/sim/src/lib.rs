//! Client/server deployment simulator: a packet codec for variable-size
//! measurements, a bandwidth trace, a rate controller and throughput accounting.

pub mod channel;
pub mod controller;
pub mod error;
pub mod packet;
pub mod session;
pub mod trace;

pub use controller::{choose_dims, rate_controller};
pub use error::{Result, SimError};
pub use packet::{decode_packet, encode_packet, packet_bytes};
pub use session::{run_session, RatePolicy, ServerModel, SessionConfig, SessionReport, Transport};
pub use trace::ChannelTrace;
