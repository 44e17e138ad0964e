//! Layer-level descriptions of training workloads.
//!
//! A model is an ordered list of layers. Each layer carries the bytes of
//! gradient it contributes to synchronization and its per-sample compute cost.
//! Layers with a non-zero gradient are synchronization points; residual joins
//! carry no parameters and therefore never synchronize.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

mod presets;

pub use presets::{preset, preset_info, PresetInfo, PRESETS};

/// Bytes of gradient per trainable parameter (fp32).
pub const BYTES_PER_PARAM: u64 = 4;

/// Default size of one ImageNet-style training sample on disk.
pub const IMAGE_SAMPLE_BYTES: u64 = 110_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub gradient_bytes: u64,
    #[serde(rename = "backward_s_per_sample")]
    pub backward_compute_per_sample: f64,
    #[serde(rename = "forward_s_per_sample")]
    pub forward_compute_per_sample: f64,
    #[serde(rename = "batch_norm", default)]
    pub is_batch_norm: bool,
    #[serde(rename = "residual_join", default)]
    pub is_residual_join: bool,
}

impl LayerSpec {
    pub fn weight(gradient_bytes: u64, forward: f64, backward: f64) -> Self {
        LayerSpec {
            gradient_bytes,
            backward_compute_per_sample: backward,
            forward_compute_per_sample: forward,
            is_batch_norm: false,
            is_residual_join: false,
        }
    }

    pub fn batch_norm(gradient_bytes: u64) -> Self {
        LayerSpec {
            is_batch_norm: true,
            ..LayerSpec::weight(gradient_bytes, 0.0, 0.0)
        }
    }

    pub fn residual_join() -> Self {
        LayerSpec {
            is_residual_join: true,
            ..LayerSpec::weight(0, 0.0, 0.0)
        }
    }

    pub fn is_sync_point(&self) -> bool {
        self.gradient_bytes > 0
    }

    fn validate(&self, i: usize) -> Result<()> {
        for (name, v) in [
            ("backward_s_per_sample", self.backward_compute_per_sample),
            ("forward_s_per_sample", self.forward_compute_per_sample),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(
                    format!("layers[{i}].{name}"),
                    format!("must be non-negative and finite, got {v}"),
                ));
            }
        }
        if self.is_residual_join && self.gradient_bytes != 0 {
            return Err(Error::validation(
                format!("layers[{i}].gradient_bytes"),
                "residual joins carry no parameters",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct ModelDescriptor {
    name: String,
    sample_bytes: u64,
    layers: Vec<LayerSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    sample_bytes: u64,
    layers: Vec<LayerSpec>,
}

impl TryFrom<RawModel> for ModelDescriptor {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        ModelDescriptor::new(raw.name, raw.layers, raw.sample_bytes)
    }
}

impl ModelDescriptor {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>, sample_bytes: u64) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::validation("name", "must not be empty"));
        }
        if layers.is_empty() {
            return Err(Error::validation("layers", "a model needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate(i)?;
        }
        if layers.iter().map(|l| u128::from(l.gradient_bytes)).sum::<u128>() > u128::from(u64::MAX) {
            return Err(Error::validation("layers", "total gradient bytes overflow"));
        }
        Ok(ModelDescriptor {
            name,
            sample_bytes,
            layers,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ModelDescriptor::from_json_str(&Error::read_file(path.as_ref())?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn sample_bytes(&self) -> u64 {
        self.sample_bytes
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn sync_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.is_sync_point())
    }

    /// Forward plus backward compute for one sample, seconds.
    pub fn compute_per_sample(&self) -> (f64, f64) {
        self.layers.iter().fold((0.0, 0.0), |(f, b), l| {
            (f + l.forward_compute_per_sample, b + l.backward_compute_per_sample)
        })
    }

    fn filtered(&self, keep: impl Fn(&LayerSpec) -> bool) -> Result<Self> {
        let layers: Vec<_> = self.layers.iter().filter(|l| keep(l)).cloned().collect();
        if layers.is_empty() {
            return Err(Error::domain(format!(
                "removing layers from {} would leave an empty model",
                self.name
            )));
        }
        Ok(ModelDescriptor {
            name: self.name.clone(),
            sample_bytes: self.sample_bytes,
            layers,
        })
    }
}

pub fn total_gradient_bytes(m: &ModelDescriptor) -> u64 {
    m.layers.iter().map(|l| l.gradient_bytes).sum()
}

pub fn sync_layer_count(m: &ModelDescriptor) -> u32 {
    m.sync_layers().count() as u32
}

/// Builds `layer_count` identical layers sharing `total_gradient_bytes`.
///
/// Any remainder of the division goes one byte at a time to the leading
/// layers, so the total is exact. Forward compute is half the backward compute.
pub fn make_synthetic(layer_count: u32, total_gradient_bytes: u64, per_layer_backward: f64) -> Result<ModelDescriptor> {
    if layer_count == 0 {
        return Err(Error::domain("a synthetic model needs at least one layer"));
    }
    if !(per_layer_backward.is_finite() && per_layer_backward >= 0.0) {
        return Err(Error::domain(format!(
            "per-layer backward time {per_layer_backward} must be finite and non-negative"
        )));
    }
    let n = u64::from(layer_count);
    let base = total_gradient_bytes / n;
    let extra = total_gradient_bytes % n;
    if base == 0 && total_gradient_bytes > 0 {
        return Err(Error::domain(format!(
            "{total_gradient_bytes} bytes cannot give each of {layer_count} layers a gradient"
        )));
    }
    let layers = (0..n)
        .map(|i| {
            let bytes = base + u64::from(i < extra);
            LayerSpec::weight(bytes, per_layer_backward / 2.0, per_layer_backward)
        })
        .collect();
    ModelDescriptor::new(
        format!("synthetic-{layer_count}x{total_gradient_bytes}"),
        layers,
        IMAGE_SAMPLE_BYTES,
    )
}

/// Drops every batch-normalization layer together with its gradient.
pub fn remove_batch_norm(m: &ModelDescriptor) -> Result<ModelDescriptor> {
    m.filtered(|l| !l.is_batch_norm)
}

/// Drops residual joins; they carry no gradient, so communication is unchanged.
pub fn remove_residual(m: &ModelDescriptor) -> Result<ModelDescriptor> {
    m.filtered(|l| !l.is_residual_join)
}

/// Inserts a batch-norm layer after each of the first `count` non-BN,
/// non-residual layers.
pub fn insert_batch_norm(m: &ModelDescriptor, count: usize, bytes_each: u64) -> Result<ModelDescriptor> {
    let weights = m
        .layers
        .iter()
        .filter(|l| !l.is_batch_norm && !l.is_residual_join)
        .count();
    if count > weights {
        return Err(Error::domain(format!(
            "cannot add {count} batch-norm layers to a model with {weights} weight layers"
        )));
    }
    let mut layers = Vec::with_capacity(m.layers.len() + count);
    let mut added = 0;
    for l in &m.layers {
        let is_weight = !l.is_batch_norm && !l.is_residual_join;
        layers.push(l.clone());
        if is_weight && added < count {
            layers.push(LayerSpec::batch_norm(bytes_each));
            added += 1;
        }
    }
    ModelDescriptor::new(m.name.clone(), layers, m.sample_bytes)
}

/// Inserts a residual join after every `every`-th layer.
pub fn insert_residual_joins(m: &ModelDescriptor, every: usize) -> Result<ModelDescriptor> {
    if every == 0 {
        return Err(Error::domain("residual spacing must be positive"));
    }
    let mut layers = Vec::with_capacity(m.layers.len() + m.layers.len() / every);
    for (i, l) in m.layers.iter().enumerate() {
        layers.push(l.clone());
        if (i + 1) % every == 0 {
            layers.push(LayerSpec::residual_join());
        }
    }
    ModelDescriptor::new(m.name.clone(), layers, m.sample_bytes)
}
