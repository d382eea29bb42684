use super::{Head, ModelError, ModelResult, ModelSpec, Normalization, StemSpec};
use crate::blocks::BlockSpec;

pub const MODEL_NAMES: [&str; 6] = [
    "mini-vgg",
    "mini-inception",
    "mini-resnet",
    "mini-xception",
    "mini-densenet",
    "mini-mobilenetv2",
];

/// The 24 static fingerspelling letters: A-Y without J (Z is also dynamic).
pub fn asl_letters() -> Vec<String> {
    ('A'..='Y').filter(|&c| c != 'J').map(String::from).collect()
}

fn stem16() -> Option<StemSpec> {
    Some(StemSpec {
        channels: 16,
        kernel: 3,
        stride: 2,
    })
}

fn spec(name: &str, stem: Option<StemSpec>, stages: Vec<BlockSpec>, head: Head) -> ModelSpec {
    ModelSpec {
        name: name.to_owned(),
        input: [3, 32, 32],
        num_classes: 24,
        stem,
        stages,
        head,
        classes: asl_letters(),
        normalization: Normalization::default(),
    }
}

/// Desk-scale members of each architecture family, at 32x32x3 input and 24 classes.
pub fn registry() -> Vec<ModelSpec> {
    use BlockSpec::*;
    vec![
        spec(
            "mini-vgg",
            None,
            vec![
                Vgg { convs: 1, channels: 8 },
                Vgg { convs: 1, channels: 16 },
                Vgg { convs: 2, channels: 32 },
            ],
            Head::Flatten,
        ),
        spec(
            "mini-inception",
            stem16(),
            vec![
                Inception {
                    b1: 8,
                    reduce3: 8,
                    b3: 16,
                    reduce5: 4,
                    b5: 8,
                    bpool: 8,
                },
                MaxPool { window: 2, stride: 2 },
                Inception {
                    b1: 16,
                    reduce3: 16,
                    b3: 24,
                    reduce5: 8,
                    b5: 12,
                    bpool: 12,
                },
            ],
            Head::Flatten,
        ),
        spec(
            "mini-resnet",
            stem16(),
            vec![
                ResidualBasic { channels: 16, stride: 1 },
                ResidualBottleneck { channels: 32, stride: 2 },
                ResidualBasic { channels: 64, stride: 2 },
            ],
            Head::Flatten,
        ),
        spec(
            "mini-xception",
            Some(StemSpec {
                channels: 32,
                kernel: 3,
                stride: 2,
            }),
            vec![
                Separable { channels: 64, stride: 1, repeat: 1 },
                Separable { channels: 64, stride: 2, repeat: 1 },
                Separable { channels: 64, stride: 1, repeat: 1 },
            ],
            Head::Flatten,
        ),
        spec(
            "mini-densenet",
            stem16(),
            vec![
                DenseBlock { layers: 2, growth: 16 },
                Transition { compression: 0.5 },
                DenseBlock { layers: 2, growth: 16 },
            ],
            Head::Flatten,
        ),
        spec(
            "mini-mobilenetv2",
            stem16(),
            vec![
                InvertedResidual {
                    channels: 16,
                    stride: 1,
                    expansion: 2,
                },
                InvertedResidual {
                    channels: 24,
                    stride: 2,
                    expansion: 4,
                },
                InvertedResidual {
                    channels: 32,
                    stride: 2,
                    expansion: 4,
                },
            ],
            Head::Flatten,
        ),
    ]
}

pub fn registry_spec(name: &str) -> ModelResult<ModelSpec> {
    registry()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| ModelError::UnknownModel(name.to_owned()))
}
