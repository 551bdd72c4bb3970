use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;

use super::fft::{fft_in_place, N_FFT};
use super::features::Spectrogram;
use crate::error::{Error, Result};

pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const HOP: usize = N_FFT / 2;
/// Frames per spectrogram segment, and frequency rows kept per frame.
pub const SEGMENT_FRAMES: usize = 128;
pub const SEGMENT_BINS: usize = 128;
/// 256 + 127 * 128: the shortest span that yields exactly 128 frames.
pub const SEGMENT_SAMPLES: usize = N_FFT + (SEGMENT_FRAMES - 1) * HOP;
/// Magnitudes are clamped here before the logarithm.
pub const MAGNITUDE_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("empty waveform".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Input("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Reads a mono PCM (integer or float) WAV file, scaling integer
    /// samples into [-1, 1].
    pub fn read_wav(path: &Path) -> Result<Self> {
        let fmt_err = |msg: String| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg,
        };
        let mut reader = hound::WavReader::open(path).map_err(|e| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => fmt_err(other.to_string()),
        })?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::Input(format!(
                "{}: expected mono audio, found {} channels",
                path.display(),
                spec.channels
            )));
        }
        let samples: Vec<f64> = match spec.sample_format {
            hound::SampleFormat::Float => reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>(),
            hound::SampleFormat::Int => {
                let scale = f64::from(1u32 << (spec.bits_per_sample - 1));
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| f64::from(v) / scale))
                    .collect::<std::result::Result<_, _>>()
            }
        }
        .map_err(|e| fmt_err(e.to_string()))?;
        Self::new(samples, spec.sample_rate)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }
}

/// Symmetric Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Magnitudes of the one-sided spectrum (bins `0..=128`) of every
/// Hann-windowed 256-sample frame at hop 128.
pub fn stft(w: &Waveform) -> Result<Vec<Vec<f64>>> {
    stft_samples(w.samples())
}

fn stft_samples(x: &[f64]) -> Result<Vec<Vec<f64>>> {
    if x.len() < N_FFT {
        return Err(Error::Input(format!(
            "waveform has {} samples; at least {N_FFT} needed for one frame",
            x.len()
        )));
    }
    let window = hann(N_FFT);
    let frames = (x.len() - N_FFT) / HOP + 1;
    let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let frame = &x[f * HOP..f * HOP + N_FFT];
        for ((b, &s), &wv) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex64::new(s * wv, 0.0);
        }
        fft_in_place(&mut buf);
        out.push(buf[..=N_FFT / 2].iter().map(|c| c.norm()).collect());
    }
    Ok(out)
}

/// Cuts the waveform into consecutive non-overlapping segments of
/// [`SEGMENT_SAMPLES`] and turns each into a 128x128 log-magnitude
/// spectrogram (rows are frequency bins 1..=128, columns are frames). A
/// trailing remainder shorter than a segment is dropped; a waveform shorter
/// than one segment yields nothing.
pub fn make_spectrograms(w: &Waveform) -> Result<Vec<Spectrogram>> {
    if w.sample_rate_hz() != SAMPLE_RATE_HZ {
        return Err(Error::Input(format!(
            "expected {SAMPLE_RATE_HZ} Hz audio, got {} Hz",
            w.sample_rate_hz()
        )));
    }
    let x = w.samples();
    let n_segments = x.len() / SEGMENT_SAMPLES;
    let mut out = Vec::with_capacity(n_segments);
    for s in 0..n_segments {
        let frames = stft_samples(&x[s * SEGMENT_SAMPLES..(s + 1) * SEGMENT_SAMPLES])?;
        debug_assert_eq!(frames.len(), SEGMENT_FRAMES);
        let mut values = vec![0f32; SEGMENT_BINS * SEGMENT_FRAMES];
        for (t, frame) in frames.iter().enumerate() {
            for bin in 1..=SEGMENT_BINS {
                values[(bin - 1) * SEGMENT_FRAMES + t] = frame[bin].max(MAGNITUDE_FLOOR).ln() as f32;
            }
        }
        out.push(Spectrogram::new(SEGMENT_BINS, SEGMENT_FRAMES, values, s as u32)?);
    }
    Ok(out)
}
