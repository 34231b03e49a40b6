//! Style-preserving translation of facial expression sequences between two
//! actors, learned from unpaired data with a recurrent cycle-consistent
//! adversarial model, plus the soft-mask compositor that pastes a rendered
//! face back over its background frame.

pub mod autodiff;
pub mod compositor;
pub mod error;
pub mod losses;
pub mod nets;
pub mod params;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
