use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ByteReader;
use crate::tensor::Mat;

pub const SVHS_MAGIC: &[u8; 4] = b"SVHS";
pub const SVHS_VERSION: u32 = 1;

/// Hidden states `H_0 … H_L` of one utterance, `(L+1) × T × D`, stored as
/// f32 in layer-major, frame-major, channel-minor order. Layer 0 is the input
/// of the first transformer layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    n_layers_plus_1: usize,
    frames: usize,
    dim: usize,
    frame_rate_hz: f32,
    data: Vec<f32>,
}

impl LayerStack {
    pub fn new(n_layers_plus_1: usize, frames: usize, dim: usize, frame_rate_hz: f32, data: Vec<f32>) -> Result<Self> {
        if n_layers_plus_1 < 2 {
            return Err(Error::invalid("layer stack needs L >= 1 (at least two hidden states)"));
        }
        if frames == 0 || dim == 0 {
            return Err(Error::invalid("layer stack needs T >= 1 and D >= 1"));
        }
        if data.len() != n_layers_plus_1 * frames * dim {
            return Err(Error::invalid("layer stack data length does not match (L+1)·T·D"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::degenerate("layer stack contains non-finite values"));
        }
        Ok(Self {
            n_layers_plus_1,
            frames,
            dim,
            frame_rate_hz,
            data,
        })
    }

    /// Builds a stack from per-layer `T × D` matrices, rounding to f32.
    pub fn from_layers(layers: &[Mat], frame_rate_hz: f32) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::invalid("no layers"))?;
        let (t, d) = first.shape();
        if layers.iter().any(|l| l.shape() != (t, d)) {
            return Err(Error::invalid("all layers must share T and D"));
        }
        let data = layers.iter().flat_map(|l| l.data().iter().map(|&v| v as f32)).collect();
        Self::new(layers.len(), t, d, frame_rate_hz, data)
    }

    pub fn n_layers_plus_1(&self) -> usize {
        self.n_layers_plus_1
    }

    /// `L`, the number of transformer layers.
    pub fn n_layers(&self) -> usize {
        self.n_layers_plus_1 - 1
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_rate_hz(&self) -> f32 {
        self.frame_rate_hz
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn layer_slice(&self, l: usize) -> &[f32] {
        let n = self.frames * self.dim;
        &self.data[l * n..(l + 1) * n]
    }

    pub fn layer_slice_mut(&mut self, l: usize) -> &mut [f32] {
        let n = self.frames * self.dim;
        &mut self.data[l * n..(l + 1) * n]
    }

    pub fn layer(&self, l: usize) -> Mat {
        Mat::from_vec(
            self.frames,
            self.dim,
            self.layer_slice(l).iter().map(|&v| f64::from(v)).collect(),
        )
    }

    pub fn layers(&self) -> Vec<Mat> {
        (0..self.n_layers_plus_1).map(|l| self.layer(l)).collect()
    }

    /// Frames `[start, start + len)` with wrap-around past the end.
    pub fn crop_frames(&self, start: usize, len: usize) -> LayerStack {
        let mut data = Vec::with_capacity(self.n_layers_plus_1 * len * self.dim);
        for l in 0..self.n_layers_plus_1 {
            let src = self.layer_slice(l);
            for i in 0..len {
                let t = (start + i) % self.frames;
                data.extend_from_slice(&src[t * self.dim..(t + 1) * self.dim]);
            }
        }
        LayerStack {
            frames: len,
            data,
            ..*self
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.data.len() * 4);
        out.extend_from_slice(SVHS_MAGIC);
        out.extend_from_slice(&SVHS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_layers_plus_1 as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_rate_hz.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], context: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, context);
        if r.take(4)? != SVHS_MAGIC {
            return Err(Error::format(context, "bad magic"));
        }
        let version = r.u32()?;
        if version != SVHS_VERSION {
            return Err(Error::format(context, format!("unsupported version {version}")));
        }
        let layers = r.u32()? as usize;
        let frames = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let frame_rate = r.f32()?;
        let count = layers
            .checked_mul(frames)
            .and_then(|n| n.checked_mul(dim))
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| Error::format(context, "dimension overflow"))?;
        if r.remaining() < count * 4 {
            return Err(Error::format(context, "truncated"));
        }
        let raw = r.take(count * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(layers, frames, dim, frame_rate, data).map_err(|e| Error::format(context, e.to_string()))
    }
}

pub fn save_stack(stack: &LayerStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, stack.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_stack(path: impl AsRef<Path>) -> Result<LayerStack> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    LayerStack::from_bytes(&bytes, &path.display().to_string())
}
