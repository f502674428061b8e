//! Signal processing: STFT, filters, resampling, degradation and WAV I/O.

mod degrade;
pub(crate) mod fft;
mod filter;
mod resample;
mod stft;
mod wav;
mod weighting;

pub use degrade::{brickwall_lowpass, degrade, DegradationSpec, FilterFamily, MAX_INPUT_RATE, MIN_INPUT_RATE};
pub use filter::{Biquad, BiquadCascade};
pub use resample::resample;
pub use stft::{hann_window, istft, num_frames, stft, Spectrogram, StftConfig};
pub use wav::{read_wav, read_wav_bytes, write_wav, write_wav_bytes, AudioBuffer, Encoding};
pub use weighting::{a_weighting_db, a_weighting_fir};

pub(crate) use stft::{reflect_pad, reflect_pad_adjoint};
