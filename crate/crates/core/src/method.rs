//! Attribution method identifiers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodId {
    Gradients,
    InputXGradients,
    IntegratedGradients,
    Deconvolution,
    GuidedBackprop,
    GuidedGradcam,
    Occlusion,
    Lime,
    KernelShap,
    LrpEpsilonPlusFlat,
    LrpEpsilonGammaBox,
    #[serde(rename = "lrp-epsilon-alpha2beta1-flat")]
    LrpEpsilonAlpha2Beta1Flat,
    MeanAggregate,
}

impl MethodId {
    pub const ALL: [MethodId; 13] = [
        MethodId::Gradients,
        MethodId::InputXGradients,
        MethodId::IntegratedGradients,
        MethodId::Deconvolution,
        MethodId::GuidedBackprop,
        MethodId::GuidedGradcam,
        MethodId::Occlusion,
        MethodId::Lime,
        MethodId::KernelShap,
        MethodId::LrpEpsilonPlusFlat,
        MethodId::LrpEpsilonGammaBox,
        MethodId::LrpEpsilonAlpha2Beta1Flat,
        MethodId::MeanAggregate,
    ];

    pub fn id(self) -> &'static str {
        match self {
            MethodId::Gradients => "gradients",
            MethodId::InputXGradients => "input-x-gradients",
            MethodId::IntegratedGradients => "integrated-gradients",
            MethodId::Deconvolution => "deconvolution",
            MethodId::GuidedBackprop => "guided-backprop",
            MethodId::GuidedGradcam => "guided-gradcam",
            MethodId::Occlusion => "occlusion",
            MethodId::Lime => "lime",
            MethodId::KernelShap => "kernel-shap",
            MethodId::LrpEpsilonPlusFlat => "lrp-epsilon-plus-flat",
            MethodId::LrpEpsilonGammaBox => "lrp-epsilon-gamma-box",
            MethodId::LrpEpsilonAlpha2Beta1Flat => "lrp-epsilon-alpha2beta1-flat",
            MethodId::MeanAggregate => "mean-aggregate",
        }
    }

    /// Row label used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            MethodId::Gradients => "Gradients",
            MethodId::InputXGradients => "Input x Gradients",
            MethodId::IntegratedGradients => "Integrated Gradients",
            MethodId::Deconvolution => "Deconvolution",
            MethodId::GuidedBackprop => "Guided Backprop",
            MethodId::GuidedGradcam => "Guided Grad-CAM",
            MethodId::Occlusion => "Occlusion",
            MethodId::Lime => "LIME",
            MethodId::KernelShap => "Kernel SHAP",
            MethodId::LrpEpsilonPlusFlat => "LRP: EpsilonPlusFlat",
            MethodId::LrpEpsilonGammaBox => "LRP: EpsilonGammaBox",
            MethodId::LrpEpsilonAlpha2Beta1Flat => "LRP: EpsilonAlpha2Beta1Flat",
            MethodId::MeanAggregate => "mean",
        }
    }

    pub fn is_lrp(self) -> bool {
        matches!(
            self,
            MethodId::LrpEpsilonPlusFlat | MethodId::LrpEpsilonGammaBox | MethodId::LrpEpsilonAlpha2Beta1Flat
        )
    }

    pub fn needs_segments(self) -> bool {
        matches!(self, MethodId::Lime | MethodId::KernelShap)
    }

    /// Methods whose heatmaps come from perturbing the input and reading
    /// class probabilities; each call costs many forward passes.
    pub fn is_perturbation(self) -> bool {
        matches!(self, MethodId::Occlusion | MethodId::Lime | MethodId::KernelShap)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method id `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip_through_str_and_serde() {
        for m in MethodId::ALL {
            assert_eq!(m.id().parse::<MethodId>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.id()));
        }
        assert!("deeplift".parse::<MethodId>().is_err());
    }
}
