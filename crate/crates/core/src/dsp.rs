//! Radix-2 FFT, fast convolution, and the log-magnitude STFT fed to the
//! audio networks. All signal math is double precision.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::acoustics::BinauralWaveform;
use crate::error::{Error, Result};

/// In-place iterative radix-2 transform. `inverse` applies the 1/n scaling.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) -> Result<()> {
    let n = buf.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Signal(format!("fft length {n} is not a power of two")));
    }
    let bits = n.trailing_zeros();
    if bits > 0 {
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let step = Complex64::from_polar(1.0, sign * 2.0 * PI / len as f64);
        let half = len / 2;
        for start in (0..n).step_by(len) {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
                w *= step;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        buf.iter_mut().for_each(|z| *z *= scale);
    }
    Ok(())
}

pub fn fft(input: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut out = input.to_vec();
    fft_in_place(&mut out, false)?;
    Ok(out)
}

pub fn ifft(input: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut out = input.to_vec();
    fft_in_place(&mut out, true)?;
    Ok(out)
}

/// Full linear convolution by the textbook double loop.
pub fn convolve_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Full linear convolution through one zero-padded FFT of both inputs.
pub fn convolve_fft(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let len = a.len() + b.len() - 1;
    let n = len.next_power_of_two();
    let pad = |x: &[f64]| {
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        for (d, &s) in v.iter_mut().zip(x) {
            d.re = s;
        }
        v
    };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fft_in_place(&mut fa, false).expect("power of two");
    fft_in_place(&mut fb, false).expect("power of two");
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    fft_in_place(&mut fa, true).expect("power of two");
    fa.iter().take(len).map(|z| z.re).collect()
}

/// Periodic Hann window, `w[k] = 0.5 - 0.5 cos(2 pi k / n)`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftParams {
    pub win: usize,
    pub hop: usize,
    pub nfft: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams { win: 64, hop: 16, nfft: 512 }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if self.win == 0 || self.hop == 0 || self.nfft < self.win || !self.nfft.is_power_of_two() {
            return Err(Error::Config(format!(
                "STFT needs win > 0, hop > 0, power-of-two nfft >= win; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn frames(&self, samples: usize) -> usize {
        if samples < self.win {
            0
        } else {
            (samples - self.win) / self.hop + 1
        }
    }

    pub fn bins(&self) -> usize {
        self.nfft / 2 + 1
    }
}

/// Raw STFT magnitudes, laid out `[bin][frame]`.
pub fn stft_magnitude(x: &[f64], params: &StftParams) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    if x.len() < params.win {
        return Err(Error::Signal(format!(
            "signal of {} samples is shorter than one {}-sample window",
            x.len(),
            params.win
        )));
    }
    let frames = params.frames(x.len());
    let bins = params.bins();
    let window = hann_periodic(params.win);
    let mut out = vec![vec![0.0; frames]; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); params.nfft];
    for f in 0..frames {
        let start = f * params.hop;
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        for (k, w) in window.iter().enumerate() {
            buf[k].re = x[start + k] * w;
        }
        fft_in_place(&mut buf, false)?;
        for (b, row) in out.iter_mut().enumerate() {
            row[f] = buf[b].norm();
        }
    }
    Ok(out)
}

/// Per-channel `log(1 + |STFT|)`, shape channels x bins x frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub channels: usize,
    pub freq_bins: usize,
    pub time_frames: usize,
    pub data: Vec<f32>,
}

impl Spectrogram {
    pub fn at(&self, ch: usize, bin: usize, frame: usize) -> f32 {
        self.data[(ch * self.freq_bins + bin) * self.time_frames + frame]
    }
}

pub fn stft_log_magnitude(wave: &BinauralWaveform, params: &StftParams) -> Result<Spectrogram> {
    let mut data = Vec::new();
    let mut shape = (0, 0);
    for channel in [&wave.left, &wave.right] {
        let mag = stft_magnitude(channel, params)?;
        shape = (mag.len(), mag[0].len());
        data.extend(mag.iter().flatten().map(|&m| m.ln_1p() as f32));
    }
    Ok(Spectrogram {
        channels: 2,
        freq_bins: shape.0,
        time_frames: shape.1,
        data,
    })
}
