//! Multimodal supervision: the losses comparing render outputs against
//! refined references (Eqs. 18-27) and the pseudo-view synthesis feeding
//! them. All losses are pure reductions; per-pixel work runs in parallel but
//! partial sums combine in raster order, so values are bit-stable across
//! thread counts.

mod consistency;
mod depth;
mod normal;
mod photometric;
mod pseudo;

pub use consistency::{
    cycle_loss, ndc_loss, nearest_view_index, select_cycle_partner, CyclePartner,
};
pub use depth::depth_loss;
pub use normal::{normal_consistency_weights, normal_loss};
pub use photometric::photometric_loss;
pub use pseudo::{synthesize_pseudo_views, PseudoView};

use serde::{Deserialize, Serialize};

use crate::error::{GbrError, Result};

/// Tunables of the supervision suite.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisionConfig {
    /// Sharpness beta of the confidence weight in the depth loss (Eq. 18).
    pub beta: f64,
    /// Odd window size of the local normal-consistency statistic (Eq. 20).
    pub normal_window: usize,
    /// Pseudo views synthesized per adjacent real-view pair.
    pub pseudo_view_count: usize,
    /// Relative depth-agreement threshold excluding warped neighbour depths
    /// that disagree with the cloud projection (Eq. 23).
    pub pseudo_epsilon: f64,
    /// SSIM share lambda of the photometric loss (Eq. 26).
    pub lambda_pho: f64,
    /// Weight on the normal loss in the combined objective (Eq. 27).
    pub lambda1: f64,
    /// Weight on the depth loss.
    pub lambda2: f64,
    /// Weight on the normal-depth consistency loss.
    pub lambda3: f64,
    /// Weight on the multi-view cycle loss.
    pub lambda4: f64,
    /// Multiplier in (0, 1] applied to pseudo-view losses; real views weigh 1.
    pub pseudo_weight: f64,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        SupervisionConfig {
            beta: 0.1,
            normal_window: 3,
            pseudo_view_count: 2,
            pseudo_epsilon: 0.02,
            lambda_pho: 0.2,
            lambda1: 0.005,
            lambda2: 0.005,
            lambda3: 0.1,
            lambda4: 0.1,
            pseudo_weight: 0.5,
        }
    }
}

impl SupervisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(GbrError::Config(format!(
                "depth-weight beta {} must be finite and non-negative",
                self.beta
            )));
        }
        if self.normal_window % 2 == 0 || self.normal_window == 0 {
            return Err(GbrError::Config(format!(
                "normal window {} must be odd",
                self.normal_window
            )));
        }
        if !(self.pseudo_epsilon.is_finite() && self.pseudo_epsilon > 0.0) {
            return Err(GbrError::Config(format!(
                "pseudo-view agreement epsilon {} must be positive",
                self.pseudo_epsilon
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_pho) {
            return Err(GbrError::Config(format!(
                "photometric lambda {} outside [0, 1]",
                self.lambda_pho
            )));
        }
        for (name, value) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(GbrError::Config(format!(
                    "{name} = {value} must be finite and non-negative"
                )));
            }
        }
        if !(self.pseudo_weight > 0.0 && self.pseudo_weight <= 1.0) {
            return Err(GbrError::Config(format!(
                "pseudo-view weight {} outside (0, 1]",
                self.pseudo_weight
            )));
        }
        Ok(())
    }
}

/// Raw values of the five loss terms for one view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub normal: f64,
    pub depth: f64,
    pub ndc: f64,
    pub cycle: f64,
    pub photometric: f64,
}

/// One view's combined objective with its weighted term breakdown.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// The raw loss values that went in.
    pub components: LossComponents,
    /// Each term after its lambda weight and the pseudo-view multiplier.
    pub weighted: LossComponents,
    /// Whether the pseudo-view multiplier was applied.
    pub is_pseudo: bool,
    /// lambda1*normal + lambda2*depth + lambda3*ndc + lambda4*cycle
    /// + photometric, evaluated left to right, times the pseudo multiplier.
    pub total: f64,
}

/// Combined objective of Eq. 27. Pseudo views scale every term (and the
/// total) by `pseudo_weight`; the total for a pseudo view is therefore
/// exactly `pseudo_weight` times the real-view total of the same components.
pub fn total_loss(
    components: &LossComponents,
    config: &SupervisionConfig,
    is_pseudo: bool,
) -> LossBreakdown {
    let scale = if is_pseudo { config.pseudo_weight } else { 1.0 };
    let weighted = LossComponents {
        normal: scale * (config.lambda1 * components.normal),
        depth: scale * (config.lambda2 * components.depth),
        ndc: scale * (config.lambda3 * components.ndc),
        cycle: scale * (config.lambda4 * components.cycle),
        photometric: scale * components.photometric,
    };
    let total = scale
        * (config.lambda1 * components.normal
            + config.lambda2 * components.depth
            + config.lambda3 * components.ndc
            + config.lambda4 * components.cycle
            + components.photometric);
    LossBreakdown {
        components: *components,
        weighted,
        is_pseudo,
        total,
    }
}

/// Evaluate `f` once per row in parallel and return results in row order;
/// folding them serially afterwards is deterministic for any thread count.
pub(crate) fn par_rows<T, F>(height: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    use rayon::prelude::*;
    (0..height).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_components_give_zero_total() {
        let breakdown = total_loss(
            &LossComponents::default(),
            &SupervisionConfig::default(),
            false,
        );
        assert_eq!(breakdown.total, 0.0);
        assert_eq!(breakdown.weighted, LossComponents::default());
    }

    #[test]
    fn unit_components_reproduce_the_weighted_sum() {
        let components = LossComponents {
            normal: 1.0,
            depth: 1.0,
            ndc: 1.0,
            cycle: 1.0,
            photometric: 1.0,
        };
        let config = SupervisionConfig::default();
        let breakdown = total_loss(&components, &config, false);
        assert_eq!(breakdown.total, 0.005 + 0.005 + 0.1 + 0.1 + 1.0);
        approx::assert_relative_eq!(breakdown.total, 1.21, epsilon = 1e-12);
        assert_eq!(breakdown.weighted.normal, 0.005);
        assert_eq!(breakdown.weighted.photometric, 1.0);
    }

    #[test]
    fn pseudo_views_scale_by_the_configured_weight() {
        let components = LossComponents {
            normal: 0.3,
            depth: 0.7,
            ndc: 0.2,
            cycle: 0.9,
            photometric: 0.4,
        };
        let config = SupervisionConfig::default();
        let real = total_loss(&components, &config, false);
        let pseudo = total_loss(&components, &config, true);
        assert!(pseudo.is_pseudo);
        assert_eq!(pseudo.total, 0.5 * real.total);
        assert_eq!(pseudo.weighted.depth, 0.5 * real.weighted.depth);
        assert_eq!(pseudo.components, components);
    }

    #[test]
    fn validation_rejects_bad_settings() {
        let ok = SupervisionConfig::default();
        assert!(ok.validate().is_ok());
        for broken in [
            SupervisionConfig { beta: -0.1, ..ok },
            SupervisionConfig {
                normal_window: 4,
                ..ok
            },
            SupervisionConfig {
                pseudo_epsilon: 0.0,
                ..ok
            },
            SupervisionConfig {
                lambda_pho: 1.5,
                ..ok
            },
            SupervisionConfig {
                lambda3: f64::NAN,
                ..ok
            },
            SupervisionConfig {
                pseudo_weight: 0.0,
                ..ok
            },
        ] {
            assert_eq!(broken.validate().unwrap_err().exit_code(), 2);
        }
    }
}
