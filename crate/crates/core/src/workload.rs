//! DNN layer shapes and the quantities derived from them.

use crate::config::AccelConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Depthwise,
    Dense,
    Maxpool,
    Avgpool,
}

impl LayerKind {
    /// Kinds that run on the ALU alone (no GEMM).
    pub fn is_alu_only(self) -> bool {
        matches!(self, LayerKind::Depthwise | LayerKind::Maxpool | LayerKind::Avgpool)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("workload parse error: {0}")]
    Parse(String),
    #[error("layer `{layer}`: {reason}")]
    Invalid { layer: String, reason: String },
}

/// A convolution-like layer. All sizes are element counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub kind: LayerKind,
    pub b: u64,
    pub h: u64,
    pub w: u64,
    pub kh: u64,
    pub kw: u64,
    pub fi: u64,
    pub fo: u64,
    pub ph: u64,
    pub pw: u64,
    pub sh: u64,
    pub sw: u64,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(b: u64, h: u64, w: u64, fi: u64, fo: u64, k: u64, pad: u64, stride: u64) -> Self {
        ConvLayer {
            name: String::new(),
            kind: LayerKind::Conv,
            b,
            h,
            w,
            kh: k,
            kw: k,
            fi,
            fo,
            ph: pad,
            pw: pad,
            sh: stride,
            sw: stride,
        }
    }

    pub fn with_kind(mut self, kind: LayerKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn dense(b: u64, fi: u64, fo: u64) -> Self {
        let mut l = ConvLayer::conv(b, 1, 1, fi, fo, 1, 0, 1);
        l.kind = LayerKind::Dense;
        l
    }

    fn label(&self) -> String {
        if self.name.is_empty() {
            format!("{:?}", self.kind).to_lowercase()
        } else {
            self.name.clone()
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |reason: &str| Err(WorkloadError::Invalid { layer: self.label(), reason: reason.to_string() });
        if self.b == 0 || self.h == 0 || self.w == 0 || self.fi == 0 || self.fo == 0 {
            return bad("b, h, w, fi, fo must be positive");
        }
        if self.kh == 0 || self.kw == 0 {
            return bad("kernel dims must be positive");
        }
        if self.sh == 0 || self.sw == 0 {
            return bad("strides must be >= 1");
        }
        if self.h + 2 * self.ph < self.kh || self.w + 2 * self.pw < self.kw {
            return bad("kernel larger than padded input");
        }
        match self.kind {
            LayerKind::Depthwise | LayerKind::Maxpool | LayerKind::Avgpool if self.fi != self.fo => {
                bad("depthwise and pooling layers need fi == fo")
            }
            LayerKind::Dense
                if self.h != 1 || self.w != 1 || self.kh != 1 || self.kw != 1 || self.ph != 0 || self.pw != 0 =>
            {
                bad("dense layers need h=w=kh=kw=1 and no padding")
            }
            _ => Ok(()),
        }
    }

    /// Output height and width.
    pub fn output_dims(&self) -> (u64, u64) {
        let oh = (self.h + 2 * self.ph - self.kh) / self.sh + 1;
        let ow = (self.w + 2 * self.pw - self.kw) / self.sw + 1;
        (oh, ow)
    }

    /// Multiply-accumulates (element operations for pooling layers).
    pub fn mac_count(&self) -> u64 {
        let (oh, ow) = self.output_dims();
        match self.kind {
            LayerKind::Conv => self.b * oh * ow * self.fo * self.fi * self.kh * self.kw,
            LayerKind::Depthwise | LayerKind::Maxpool | LayerKind::Avgpool => {
                self.b * oh * ow * self.fo * self.kh * self.kw
            }
            LayerKind::Dense => self.b * self.fo * self.fi,
        }
    }

    /// Round channels (and batch) up to the machine's lane counts. The extra
    /// channels hold zeros and do not change the result.
    pub fn pad_channels(&self, cfg: &AccelConfig) -> ConvLayer {
        let up = |n: u64, m: u64| n.div_ceil(m) * m;
        let mut l = self.clone();
        l.b = up(self.b, cfg.batch as u64);
        if self.kind.is_alu_only() {
            // ALU layers keep channels on the output lanes
            l.fi = up(self.fi, cfg.block_out as u64);
            l.fo = l.fi;
        } else {
            l.fi = up(self.fi, cfg.block_in as u64);
            l.fo = up(self.fo, cfg.block_out as u64);
        }
        l
    }

    pub fn is_channel_padded(&self, cfg: &AccelConfig) -> bool {
        &self.pad_channels(cfg) == self
    }
}

pub fn output_dims(layer: &ConvLayer) -> (u64, u64) {
    layer.output_dims()
}

pub fn mac_count(layer: &ConvLayer) -> u64 {
    layer.mac_count()
}

pub fn pad_channels(layer: &ConvLayer, cfg: &AccelConfig) -> ConvLayer {
    layer.pad_channels(cfg)
}

/// Parse a workload file: a JSON array of layer objects.
pub fn load_workload(text: &str) -> Result<Vec<ConvLayer>, WorkloadError> {
    let layers: Vec<ConvLayer> = serde_json::from_str(text).map_err(|e| WorkloadError::Parse(e.to_string()))?;
    for l in &layers {
        l.validate()?;
    }
    Ok(layers)
}

pub const RESNET18_JSON: &str = include_str!("../workloads/resnet18.json");
pub const MOBILENET1_JSON: &str = include_str!("../workloads/mobilenet1.0.json");

/// ResNet-18 convolution layers C2..C11 at batch 1.
pub fn resnet18_c2_c11() -> Vec<ConvLayer> {
    load_workload(RESNET18_JSON).expect("bundled workload parses").into_iter().filter(|l| l.name != "C1").collect()
}
