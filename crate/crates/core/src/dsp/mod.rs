//! Audio preprocessing and feature-file I/O.

pub mod features;
pub mod fft;
pub mod spectrogram;

pub use features::{
    load_features, read_embedding_text, read_feature_file, read_manifest, save_features, write_manifest,
    FeatureShape, LabeledSample, Spectrogram, WordEmbeddingSequence,
};
pub use fft::{fft, N_FFT};
pub use spectrogram::{make_spectrograms, stft, Waveform, SAMPLE_RATE_HZ, SEGMENT_SAMPLES};
