//! Baseband signal synthesis for the ten modulation classes, a simple
//! channel model, and generation of labeled frame datasets.

pub mod audio;
pub mod bits;
pub mod channel;
pub mod dataset;
pub mod modulate;
pub mod scheme;

pub use audio::{synthesize_audio, AudioConfig};
pub use bits::generate_bits;
pub use channel::{apply_channel, measure_power, ChannelConfig};
pub use dataset::{build_dataset, GenConfig, Profile};
pub use modulate::{modulate, synthesize, BasebandSignal, Payload, SynthConfig};
pub use scheme::ModulationScheme;
