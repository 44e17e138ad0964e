//! Named workload presets.
//!
//! Parameter totals are exact. The split of parameters across layers follows
//! each architecture's shape (relative weights below) and is apportioned with
//! largest remainders so the total is preserved. Per-sample compute times are
//! calibration constants for a V100-class GPU at fp32, spread evenly across
//! weight layers with a 1:2 forward/backward split. VGG presets carry no
//! batch-norm layers; ResNet and MobileNet presets carry residual joins.

use super::{LayerSpec, ModelDescriptor, BYTES_PER_PARAM, IMAGE_SAMPLE_BYTES};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PresetInfo {
    pub name: &'static str,
    pub parameters: u64,
    pub dataset: &'static str,
    pub dataset_samples: u64,
    pub sample_bytes: u64,
    /// Forward plus backward time per sample, nanoseconds.
    pub compute_ns_per_sample: u64,
}

const IMAGENET: &str = "imagenet-1k";
const IMAGENET_SAMPLES: u64 = 1_281_167;
const SQUAD: &str = "squad-2.0";
const SQUAD_SAMPLES: u64 = 130_319;

const fn image(name: &'static str, parameters: u64, compute_ns_per_sample: u64) -> PresetInfo {
    PresetInfo {
        name,
        parameters,
        dataset: IMAGENET,
        dataset_samples: IMAGENET_SAMPLES,
        sample_bytes: IMAGE_SAMPLE_BYTES,
        compute_ns_per_sample,
    }
}

pub const PRESETS: &[PresetInfo] = &[
    image("alexnet", 9_630_000, 400_000),
    image("mobilenet_v2", 3_400_000, 900_000),
    image("squeezenet", 730_000, 550_000),
    image("shufflenet", 1_800_000, 670_000),
    image("resnet18", 11_180_000, 830_000),
    image("resnet50", 23_590_000, 2_600_000),
    image("vgg11", 132_800_000, 3_300_000),
    PresetInfo {
        name: "bert_large",
        parameters: 345_000_000,
        dataset: SQUAD,
        dataset_samples: SQUAD_SAMPLES,
        sample_bytes: 1_000,
        compute_ns_per_sample: 80_000_000,
    },
    image("vgg16", 134_700_000, 5_500_000),
    image("resnet152", 58_500_000, 7_000_000),
];

pub fn preset_info(name: &str) -> Option<&'static PresetInfo> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn preset(name: &str) -> Option<ModelDescriptor> {
    let info = preset_info(name)?;
    let shape = match name {
        "alexnet" => Shape::plain(ALEXNET.to_vec()),
        "vgg11" => Shape::plain(VGG11.to_vec()),
        "vgg16" => Shape::plain(VGG16.to_vec()),
        "resnet18" => resnet_basic(&[2, 2, 2, 2]),
        "resnet50" => resnet_bottleneck(&[3, 4, 6, 3]),
        "resnet152" => resnet_bottleneck(&[3, 8, 36, 3]),
        "mobilenet_v2" => {
            let mut s = Shape::plain(ramp(52, 3_000, 1_281_000));
            s.residual_after = (1..=10).map(|j| 5 * j - 1).collect();
            s
        }
        "squeezenet" => Shape::plain(ramp(25, 1_000, 512_000)),
        "shufflenet" => Shape::plain(ramp(56, 500, 1_024_000)),
        "bert_large" => Shape::plain(bert_large()),
        _ => unreachable!("every preset has a shape"),
    };
    Some(shape.build(info))
}

struct Shape {
    weights: Vec<u64>,
    /// Indices of weight layers followed by a residual join.
    residual_after: Vec<usize>,
}

impl Shape {
    fn plain(weights: Vec<u64>) -> Self {
        Shape {
            weights,
            residual_after: Vec::new(),
        }
    }

    fn build(self, info: &PresetInfo) -> ModelDescriptor {
        let params = apportion(info.parameters, &self.weights);
        let n = params.len() as f64;
        let per_layer = info.compute_ns_per_sample as f64 * 1e-9 / n;
        let (fwd, bwd) = (per_layer / 3.0, per_layer * 2.0 / 3.0);
        let mut layers = Vec::with_capacity(params.len() + self.residual_after.len());
        for (i, p) in params.into_iter().enumerate() {
            layers.push(LayerSpec::weight(p * BYTES_PER_PARAM, fwd, bwd));
            if self.residual_after.contains(&i) {
                layers.push(LayerSpec::residual_join());
            }
        }
        ModelDescriptor::new(info.name, layers, info.sample_bytes).expect("presets are valid")
    }
}

/// Splits `total` proportionally to `weights` using largest remainders.
fn apportion(total: u64, weights: &[u64]) -> Vec<u64> {
    let sum: u128 = weights.iter().map(|&w| u128::from(w)).sum();
    let mut parts: Vec<(u64, u128, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let exact = u128::from(total) * u128::from(w);
            ((exact / sum) as u64, exact % sum, i)
        })
        .collect();
    let assigned: u64 = parts.iter().map(|p| p.0).sum();
    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by(|&a, &b| parts[b].1.cmp(&parts[a].1).then(a.cmp(&b)));
    for &i in order.iter().take((total - assigned) as usize) {
        parts[i].0 += 1;
    }
    parts.into_iter().map(|p| p.0).collect()
}

/// `convs` layers with linearly growing size, then one classifier layer.
fn ramp(convs: u64, step: u64, classifier: u64) -> Vec<u64> {
    (1..=convs).map(|k| k * step).chain([classifier]).collect()
}

fn resnet_basic(blocks: &[usize]) -> Shape {
    let mut weights = vec![9_408];
    let mut residual_after = Vec::new();
    for (stage, &n) in blocks.iter().enumerate() {
        let c = 64u64 << stage;
        for _ in 0..n {
            weights.extend([9 * c * c, 9 * c * c]);
            residual_after.push(weights.len() - 1);
        }
    }
    weights.push(512 * 1000);
    Shape {
        weights,
        residual_after,
    }
}

fn resnet_bottleneck(blocks: &[usize]) -> Shape {
    let mut weights = vec![9_408];
    let mut residual_after = Vec::new();
    for (stage, &n) in blocks.iter().enumerate() {
        let c = 64u64 << stage;
        for _ in 0..n {
            weights.extend([4 * c * c, 9 * c * c, 4 * c * c]);
            residual_after.push(weights.len() - 1);
        }
    }
    weights.push(2048 * 1000);
    Shape {
        weights,
        residual_after,
    }
}

fn bert_large() -> Vec<u64> {
    let hidden = 1024u64;
    let embeddings = 30_522 * hidden + 512 * hidden + 2 * hidden;
    let attention = hidden * hidden + hidden;
    let ffn_in = hidden * 4 * hidden + 4 * hidden;
    let ffn_out = 4 * hidden * hidden + hidden;
    let mut w = vec![embeddings];
    for _ in 0..24 {
        w.extend([attention, attention, attention, attention, ffn_in, ffn_out]);
    }
    w.push(2 * hidden + 2);
    w
}

const ALEXNET: [u64; 8] = [
    34_848, 307_200, 663_552, 884_736, 589_824, 37_748_736, 16_777_216, 4_096_000,
];

const VGG11: [u64; 11] = [
    1_728,
    73_728,
    294_912,
    589_824,
    1_179_648,
    2_359_296,
    2_359_296,
    2_359_296,
    102_760_448,
    16_777_216,
    4_096_000,
];

const VGG16: [u64; 16] = [
    1_728,
    36_864,
    73_728,
    147_456,
    294_912,
    589_824,
    589_824,
    1_179_648,
    2_359_296,
    2_359_296,
    2_359_296,
    2_359_296,
    2_359_296,
    102_760_448,
    16_777_216,
    4_096_000,
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnnmodel::{sync_layer_count, total_gradient_bytes};

    #[test]
    fn parameter_counts_match_the_model_table() {
        let expected = [
            ("alexnet", 9_630_000u64),
            ("mobilenet_v2", 3_400_000),
            ("squeezenet", 730_000),
            ("shufflenet", 1_800_000),
            ("resnet18", 11_180_000),
            ("resnet50", 23_590_000),
            ("vgg11", 132_800_000),
            ("bert_large", 345_000_000),
            ("vgg16", 134_700_000),
            ("resnet152", 58_500_000),
        ];
        for (name, params) in expected {
            let m = preset(name).unwrap();
            assert_eq!(total_gradient_bytes(&m), params * 4, "{name}");
            assert_eq!(m.name(), name);
        }
    }

    #[test]
    fn every_listed_preset_builds() {
        for p in PRESETS {
            let m = preset(p.name).unwrap();
            assert!(sync_layer_count(&m) > 0);
            let (f, b) = m.compute_per_sample();
            let total = (f + b) * 1e9;
            assert!((total - p.compute_ns_per_sample as f64).abs() < 1.0, "{}", p.name);
        }
        assert!(preset("lenet").is_none());
    }

    #[test]
    fn layer_counts() {
        let layers = |n: &str| sync_layer_count(&preset(n).unwrap());
        assert_eq!(layers("alexnet"), 8);
        assert_eq!(layers("squeezenet"), 26);
        assert_eq!(layers("mobilenet_v2"), 53);
        assert_eq!(layers("shufflenet"), 57);
        assert_eq!(layers("bert_large"), 146);
    }

    #[test]
    fn residual_joins_per_block() {
        let joins = |n: &str| {
            preset(n)
                .unwrap()
                .layers()
                .iter()
                .filter(|l| l.is_residual_join)
                .count()
        };
        assert_eq!(joins("resnet18"), 8);
        assert_eq!(joins("resnet50"), 16);
        assert_eq!(joins("resnet152"), 50);
        assert_eq!(joins("mobilenet_v2"), 10);
        assert_eq!(joins("vgg16"), 0);
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(10, &[1, 1, 1]), vec![4, 3, 3]);
        assert_eq!(apportion(7, &[0, 5]), vec![0, 7]);
        let parts = apportion(58_500_000, &resnet_bottleneck(&[3, 8, 36, 3]).weights);
        assert_eq!(parts.iter().sum::<u64>(), 58_500_000);
    }
}
