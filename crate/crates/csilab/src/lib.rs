//! csilab: a desk-scale laboratory for learned massive MIMO CSI compression
//! and feedback.
//!
//! The crate covers the full loop: synthetic multipath MIMO-OFDM channel
//! generation ([`channel`]), pilot observation and coarse LS estimation
//! ([`pilot`]), a convolutional rate-distortion CSI codec with adaptive
//! binary arithmetic coding ([`codec`]), digital and analog uplink feedback
//! links ([`feedback`]), and metrics plus sweep drivers ([`eval`]).

pub mod channel;
pub mod codec;
pub mod error;
pub mod eval;
pub mod feedback;
pub mod parallel;
pub mod pilot;
pub mod plot;

pub use error::{CsiError, Result};
