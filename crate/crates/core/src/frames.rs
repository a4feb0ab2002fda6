use crate::error::{Error, Result};

/// A video-like sequence: `frames × channels × height × width`, row-major,
/// sampled at `sample_rate_hz`. A 1-D series is a `1 × 1 × 1` canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeq {
    data: Vec<f64>,
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    sample_rate_hz: f64,
}

impl FrameSeq {
    pub fn new(
        data: Vec<f64>,
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        sample_rate_hz: f64,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension("frame dimensions must be non-zero".into()));
        }
        if data.len() != frames * channels * height * width {
            return Err(Error::Dimension(format!(
                "{} values cannot form {frames} frames of {channels}×{height}×{width}",
                data.len()
            )));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Contract(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            data,
            frames,
            channels,
            height,
            width,
            sample_rate_hz,
        })
    }

    pub fn from_series(values: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        let n = values.len();
        Self::new(values, n, 1, 1, 1, sample_rate_hz)
    }

    /// Same geometry and rate as `self`, new frame data.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        let frames = data.len() / self.frame_dim().max(1);
        Self::new(
            data,
            frames,
            self.channels,
            self.height,
            self.width,
            self.sample_rate_hz,
        )
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn frame_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let d = self.frame_dim();
        &self.data[t * d..(t + 1) * d]
    }

    /// Time series of one pixel.
    pub fn pixel_series(&self, channel: usize, y: usize, x: usize) -> Vec<f64> {
        let offset = (channel * self.height + y) * self.width + x;
        (0..self.frames)
            .map(|t| self.data[t * self.frame_dim() + offset])
            .collect()
    }

    /// Channel-mean single-channel copy.
    pub fn luminance(&self) -> FrameSeq {
        if self.channels == 1 {
            return self.clone();
        }
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(self.frames * plane);
        for t in 0..self.frames {
            let f = self.frame(t);
            for p in 0..plane {
                let s: f64 = (0..self.channels).map(|c| f[c * plane + p]).sum();
                out.push(s / self.channels as f64);
            }
        }
        FrameSeq {
            data: out,
            frames: self.frames,
            channels: 1,
            height: self.height,
            width: self.width,
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Frames `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<FrameSeq> {
        if start + len > self.frames {
            return Err(Error::InsufficientLength {
                needed: start + len,
                available: self.frames,
            });
        }
        let d = self.frame_dim();
        self.with_data(self.data[start * d..(start + len) * d].to_vec())
    }

    /// Per-frame spatial mean, a quick 1-D summary used by tests and checks.
    pub fn frame_means(&self) -> Vec<f64> {
        let d = self.frame_dim() as f64;
        (0..self.frames)
            .map(|t| self.frame(t).iter().sum::<f64>() / d)
            .collect()
    }
}
