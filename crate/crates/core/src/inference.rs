//! Prediction schemes behind one interface.

use std::fmt;
use std::str::FromStr;

use ckm_nn::{Shape4, Tensor4, UNet};
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_padded, nearest_records, AssemblyConfig, InputStack};
use crate::baselines::{pathloss_infer, weighted_infer, LosMode, PathLossConfig, WeightedConfig};
use crate::error::{CkmError, Result};
use crate::grid::{Coord, GridMap, Scenario};

/// Something that can produce a channel-gain map for a target location.
///
/// `exclude` names the record sitting at `target` in leave-one-out use; with
/// `None` the target is a new AP and every record is available.
pub trait CgmPredictor {
    fn predict(&self, scenario: &Scenario, target: Coord, exclude: Option<usize>) -> Result<GridMap>;
}

/// Reported inference schemes, in report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// The trained UNet.
    Model,
    /// Distance-softmax blend of existing maps.
    Weighted,
    /// UMi path loss with mask-based LOS classification when a mask exists.
    Pathloss,
    /// UMi path loss, every cell treated as LOS.
    PathlossLos,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Model, Scheme::Weighted, Scheme::Pathloss, Scheme::PathlossLos];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Model => "model",
            Scheme::Weighted => "weighted",
            Scheme::Pathloss => "pathloss",
            Scheme::PathlossLos => "pathloss-los",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Model => "Proposed cross-AP CKM inference",
            Scheme::Weighted => "Benchmark 1: weighted CKM inference",
            Scheme::Pathloss => "Benchmark 2: model-based CKM inference",
            Scheme::PathlossLos => "Benchmark 2 (always LOS)",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = CkmError;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CkmError::InvalidScenario(format!("unknown scheme `{s}`")))
    }
}

/// UNet wrapped with its input-assembly settings.
#[derive(Clone, Debug)]
pub struct ModelPredictor {
    pub net: UNet<f32>,
    pub assembly: AssemblyConfig,
}

impl ModelPredictor {
    pub fn new(net: UNet<f32>, assembly: AssemblyConfig) -> Self {
        Self { net, assembly }
    }

    pub fn in_channels(&self) -> usize {
        self.net.config().in_channels
    }

    /// Input stack for a target, restricted to the nearest existing APs when
    /// a new-AP query has more of them than the model has feature channels.
    pub fn stack(&self, scenario: &Scenario, target: Coord, exclude: Option<usize>) -> Result<InputStack> {
        let c = self.in_channels();
        match exclude {
            Some(k) => assemble_padded(scenario, target, &self.assembly, Some(k), c),
            None => {
                let view = nearest_records(scenario, target, c - 1);
                assemble_padded(&view, target, &self.assembly, None, c)
            }
        }
    }

    /// Raw network output for several stacks at once, `(B, 1, W, W)`.
    pub fn forward_stacks(&self, stacks: &[InputStack]) -> Result<Tensor4<f32>> {
        let first = stacks
            .first()
            .ok_or_else(|| CkmError::Training("empty batch".into()))?;
        let w = first.width();
        let shape = Shape4::new(stacks.len(), self.in_channels(), w, w);
        let mut data = Vec::with_capacity(shape.len());
        for s in stacks {
            data.extend_from_slice(s.data());
        }
        Ok(self.net.forward(&Tensor4::from_vec(shape, data)?)?)
    }
}

/// Network output clamped to the physical range.
pub fn output_to_map(scenario: &Scenario, values: &[f32]) -> Result<GridMap> {
    let v = values.iter().map(|&x| (x as f64).clamp(0.0, 1.0)).collect();
    GridMap::new(scenario.spec, v)
}

impl CgmPredictor for ModelPredictor {
    fn predict(&self, scenario: &Scenario, target: Coord, exclude: Option<usize>) -> Result<GridMap> {
        scenario.spec.check(target)?;
        let stack = self.stack(scenario, target, exclude)?;
        let y = self.forward_stacks(std::slice::from_ref(&stack))?;
        output_to_map(scenario, y.data())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub weighted: WeightedConfig,
    pub pathloss: PathLossConfig,
}

/// Baseline prediction for one scheme. `Scheme::Model` is not a baseline.
pub fn predict_baseline(
    scheme: Scheme,
    config: &BaselineConfig,
    scenario: &Scenario,
    target: Coord,
    exclude: Option<usize>,
) -> Result<GridMap> {
    let view;
    let existing = match exclude {
        Some(k) => {
            view = scenario.without(k);
            &view
        }
        None => scenario,
    };
    match scheme {
        Scheme::Weighted => weighted_infer(existing, target, &config.weighted),
        Scheme::Pathloss => pathloss_infer(target, &scenario.spec, &config.pathloss, scenario.obstacles.as_ref()),
        Scheme::PathlossLos => pathloss_infer(
            target,
            &scenario.spec,
            &PathLossConfig {
                los_mode: LosMode::AlwaysLos,
                ..config.pathloss
            },
            None,
        ),
        Scheme::Model => Err(CkmError::InvalidScenario("model is not a baseline scheme".into())),
    }
}

/// Every scheme as a [`CgmPredictor`]; `model` is required only for `Scheme::Model`.
pub struct SchemePredictor<'a> {
    pub scheme: Scheme,
    pub model: Option<&'a dyn CgmPredictor>,
    pub baselines: BaselineConfig,
}

impl CgmPredictor for SchemePredictor<'_> {
    fn predict(&self, scenario: &Scenario, target: Coord, exclude: Option<usize>) -> Result<GridMap> {
        match (self.scheme, self.model) {
            (Scheme::Model, Some(m)) => m.predict(scenario, target, exclude),
            (Scheme::Model, None) => Err(CkmError::InvalidScenario("no model loaded".into())),
            (s, _) => predict_baseline(s, &self.baselines, scenario, target, exclude),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        assert!("radio-unet".parse::<Scheme>().is_err());
    }
}
