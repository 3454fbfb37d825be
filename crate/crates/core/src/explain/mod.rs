//! Attribution methods. Gradient, integrated-gradient and LRP maps explain
//! the target logit; occlusion, LIME and Kernel SHAP explain the target
//! probability.

pub mod gradient;
pub mod lrp;
pub mod occlusion;
pub mod surrogate;

use serde::{Deserialize, Serialize};

pub use lrp::{Composite, LrpParams};
pub use surrogate::{LimeParams, SegmentSamples};

use crate::data::foreground_of;
use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::method::MethodId;
use crate::nn::{Model, ReluMode};
use crate::segment::SegmentMap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainParams {
    pub ig_steps: usize,
    /// Perturbation samples shared by LIME and Kernel SHAP.
    pub samples: usize,
    pub lime: LimeParams,
    pub lrp: LrpParams,
}

impl Default for ExplainParams {
    fn default() -> Self {
        Self {
            ig_steps: 64,
            samples: 1000,
            lime: LimeParams::default(),
            lrp: LrpParams::default(),
        }
    }
}

impl ExplainParams {
    pub fn validate(&self) -> Result<()> {
        let l = &self.lrp;
        let ok = (1..=4096).contains(&self.ig_steps)
            && (1..=100_000).contains(&self.samples)
            && self.lime.kernel_width > 0.0
            && self.lime.ridge > 0.0
            && l.epsilon > 0.0
            && l.epsilon < 1.0
            && l.gamma >= 0.0
            && l.low < l.high;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("explainer hyperparameters out of range: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub id: MethodId,
    pub params: ExplainParams,
}

impl MethodSpec {
    pub fn new(id: MethodId) -> Self {
        Self {
            id,
            params: ExplainParams::default(),
        }
    }
}

fn composite(id: MethodId) -> Option<Composite> {
    match id {
        MethodId::LrpEpsilonPlusFlat => Some(Composite::EpsilonPlusFlat),
        MethodId::LrpEpsilonGammaBox => Some(Composite::EpsilonGammaBox),
        MethodId::LrpEpsilonAlpha2Beta1Flat => Some(Composite::EpsilonAlpha2Beta1Flat),
        _ => None,
    }
}

/// Raw 3×H×W attribution, before background masking.
fn attribute(
    spec: &MethodSpec,
    model: &Model,
    image: &Tensor,
    foreground: &[bool],
    target: usize,
    segments: Option<&SegmentMap>,
    seed: u64,
) -> Result<Tensor> {
    let p = &spec.params;
    match spec.id {
        MethodId::Gradients => gradient::gradient(model, image, target, ReluMode::Standard),
        MethodId::InputXGradients => gradient::input_x_gradient(model, image, target),
        MethodId::IntegratedGradients => gradient::integrated_gradients(model, image, target, p.ig_steps),
        MethodId::Deconvolution => gradient::gradient(model, image, target, ReluMode::Deconv),
        MethodId::GuidedBackprop => gradient::gradient(model, image, target, ReluMode::Guided),
        MethodId::GuidedGradcam => gradient::guided_gradcam(model, image, target),
        MethodId::Occlusion => occlusion::occlusion_model(model, image, foreground, target),
        MethodId::Lime | MethodId::KernelShap => {
            let seg = segments.ok_or_else(|| Error::invalid(format!("{} needs a segment map", spec.id)))?;
            let samples = surrogate::sample_segments(model, image, foreground, seg, p.samples, seed)?;
            if spec.id == MethodId::Lime {
                surrogate::lime(&samples, target, p.lime)
            } else {
                surrogate::kernel_shap(&samples, target)
            }
        }
        MethodId::LrpEpsilonPlusFlat | MethodId::LrpEpsilonGammaBox | MethodId::LrpEpsilonAlpha2Beta1Flat => {
            lrp::lrp(model, image, target, composite(spec.id).expect("lrp id"), p.lrp)
        }
        MethodId::MeanAggregate => Err(Error::invalid(
            "mean-aggregate is built from pooled maps of the other methods, see heatmap::aggregate",
        )),
    }
}

/// Heatmap of `spec.id` for `target`. `segments` is required by LIME and
/// Kernel SHAP; LRP requires a canonized model.
pub fn explain(
    spec: &MethodSpec,
    model: &Model,
    image: &Tensor,
    target: usize,
    segments: Option<&SegmentMap>,
    seed: u64,
) -> Result<Heatmap> {
    explain_masked(spec, model, image, &foreground_of(image), target, segments, seed)
}

/// [`explain`] with an explicit foreground, for perturbed copies of an image
/// whose own zero pattern no longer marks the grain.
pub fn explain_masked(
    spec: &MethodSpec,
    model: &Model,
    image: &Tensor,
    foreground: &[bool],
    target: usize,
    segments: Option<&SegmentMap>,
    seed: u64,
) -> Result<Heatmap> {
    spec.params.validate()?;
    if target >= model.num_classes() {
        return Err(Error::invalid(format!("target class {target} out of range")));
    }
    let raw = attribute(spec, model, image, foreground, target, segments, seed)?;
    Heatmap::new(raw, spec.id, target, foreground)
}

/// LIME and Kernel SHAP heatmaps from one shared set of perturbations.
pub fn explain_surrogates(
    params: &ExplainParams,
    model: &Model,
    image: &Tensor,
    target: usize,
    segments: &SegmentMap,
    seed: u64,
) -> Result<(Heatmap, Heatmap)> {
    explain_surrogates_masked(params, model, image, &foreground_of(image), target, segments, seed)
}

pub fn explain_surrogates_masked(
    params: &ExplainParams,
    model: &Model,
    image: &Tensor,
    foreground: &[bool],
    target: usize,
    segments: &SegmentMap,
    seed: u64,
) -> Result<(Heatmap, Heatmap)> {
    params.validate()?;
    let samples = surrogate::sample_segments(model, image, foreground, segments, params.samples, seed)?;
    Ok((
        Heatmap::new(surrogate::lime(&samples, target, params.lime)?, MethodId::Lime, target, foreground)?,
        Heatmap::new(surrogate::kernel_shap(&samples, target)?, MethodId::KernelShap, target, foreground)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_kernel_with, DefectKind, SynthParams};
    use crate::nn::merge_batchnorm;
    use crate::segment::{quickshift, QuickshiftParams};

    fn setup() -> (Model, crate::data::SyntheticKernel) {
        let params = SynthParams { height: 32, width: 32, ..Default::default() };
        let k = generate_kernel_with(11, DefectKind::Discolor, 0.8, &params);
        (merge_batchnorm(&Model::micro_cnn(32, 32, 2, 2)).unwrap(), k)
    }

    #[test]
    fn every_method_is_finite_with_zero_background() {
        let (m, k) = setup();
        let seg = quickshift(&k.image, &k.foreground, &QuickshiftParams::default()).unwrap();
        for id in MethodId::ALL.into_iter().filter(|m| *m != MethodId::MeanAggregate) {
            let mut spec = MethodSpec::new(id);
            spec.params.samples = 50;
            spec.params.ig_steps = 8;
            let h = explain(&spec, &m, &k.image, 1, Some(&seg), 3).unwrap();
            let n = k.foreground.len();
            for (i, v) in h.values.data().iter().enumerate() {
                assert!(v.is_finite());
                if !k.foreground[i % n] {
                    assert_eq!(*v, 0.0, "{id}");
                }
            }
        }
    }

    #[test]
    fn segment_methods_need_segments() {
        let (m, k) = setup();
        for id in [MethodId::Lime, MethodId::KernelShap] {
            assert!(explain(&MethodSpec::new(id), &m, &k.image, 0, None, 0).is_err());
        }
    }

    #[test]
    fn ig_completeness_on_micro_cnn() {
        let (m, k) = setup();
        let mut spec = MethodSpec::new(MethodId::IntegratedGradients);
        spec.params.ig_steps = 256;
        let raw = attribute(&spec, &m, &k.image, &k.foreground, 1, None, 0).unwrap();
        let diff = m.logits(&k.image).unwrap()[1] - m.logits(&Tensor::zeros(&[3, 32, 32])).unwrap()[1];
        assert!(((raw.sum() - diff) / diff).abs() < 1e-2, "{} vs {diff}", raw.sum());
    }

    #[test]
    fn surrogates_are_deterministic_per_seed() {
        let (m, k) = setup();
        let seg = quickshift(&k.image, &k.foreground, &QuickshiftParams::default()).unwrap();
        let mut p = ExplainParams::default();
        p.samples = 100;
        let a = explain_surrogates(&p, &m, &k.image, 1, &seg, 5).unwrap();
        let b = explain_surrogates(&p, &m, &k.image, 1, &seg, 5).unwrap();
        assert_eq!(a, b);
    }
}
