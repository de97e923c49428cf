//! Non-parallel voice conversion built from three frame-synchronous networks.
//!
//! A phone recognizer maps MFCCs to phonetic posteriorgrams (PPGs); a
//! speaker-dependent mapper turns PPGs into a log-magnitude spectrogram
//! modelled by a Gaussian mixture density network; a third network is
//! distilled from that cascade and maps source MFCCs straight to the target
//! spectrogram, skipping the PPG stage at conversion time.

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod mdn;
pub mod neural;
pub mod pipeline;
mod seed;

pub use error::{Error, Result};
