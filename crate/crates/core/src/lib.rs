//! Generative sound engine core: a patch-VQ spectrogram codec, a masked
//! token transformer with dual text/audio guidance, and a continuous
//! eight-channel outpainting streamer.

pub mod dsp;
pub mod codec;
pub mod conditioning;
pub mod generator;
pub mod streamer;
