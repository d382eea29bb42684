//! Hand-weighted model for exercising the service without training.

use signforge_core::layers::Parameters;
use signforge_core::models::{asl_letters, Head, Model, ModelSpec, Normalization};

/// Color classifier over the 24 letters: mostly-red frames score `A`, mostly-green score `B`.
/// No stages, global average pooling, one linear layer set by hand.
pub fn color_model() -> Model {
    let spec = ModelSpec {
        name: "color-probe".into(),
        input: [3, 8, 8],
        num_classes: 24,
        stem: None,
        stages: vec![],
        head: Head::GlobalAvgPool,
        classes: asl_letters(),
        normalization: Normalization::default(),
    };
    let mut m = Model::build(spec, 0).expect("color model spec is valid");
    m.visit_mut(&mut |name, t, _| {
        let d = t.data_mut();
        d.iter_mut().for_each(|v| *v = 0.0);
        if name.ends_with(".weight") {
            // [inputs = 3, outputs = 24], row-major.
            d[0] = 10.0;
            d[1] = -10.0;
            d[24] = -10.0;
            d[24 + 1] = 10.0;
        }
    });
    m
}
