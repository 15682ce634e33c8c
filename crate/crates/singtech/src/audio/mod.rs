//! WAV decoding, clip segmentation, and the spectrogram front-end.

pub mod clip;
pub mod stft;
pub mod wav;

pub use clip::{clip_count, segment_clips, AudioClip, CLIP_SAMPLES, SAMPLE_RATE};
pub use stft::{
    multi_res_spectrogram, read_spec_cache, spectrogram_channel, write_spec_cache, NormStats,
    StatsAccum, CHANNELS, FFT_LEN, FRAMES, FREQ_BINS, HOP, STACK_SHAPE, WINDOW_SIZES,
};
pub use wav::{load_wav, wav_len, write_wav_pcm16, write_wav_pcm16_channels, WavData};
