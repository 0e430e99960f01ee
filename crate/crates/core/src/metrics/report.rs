//! Aggregated evaluation report.

use serde::{Deserialize, Serialize};

use crate::error::{GbrError, Result};

/// Scores produced by the `eval` stage.
///
/// `psnr` may be positive infinity (images exact to within the MSE floor);
/// JSON serialization writes that sentinel as the string `"exact"` since
/// JSON has no infinity literal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Chamfer distance in scene units.
    pub chamfer: f64,
    /// Fraction of predicted points within the F1 threshold of ground truth.
    pub precision: f64,
    /// Fraction of ground-truth points within the threshold of the prediction.
    pub recall: f64,
    /// Harmonic mean of precision and recall (0 when both vanish).
    pub f1: f64,
    /// Trajectory RMSE after similarity alignment, scene units.
    pub ate_rmse: f64,
    /// Peak signal-to-noise ratio in dB.
    #[serde(with = "psnr_sentinel")]
    pub psnr: f64,
    /// Mean structural similarity in [0, 1].
    pub ssim: f64,
}

impl EvalReport {
    /// Check the stored scores are mutually consistent and in range.
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.chamfer >= 0.0 && self.chamfer.is_finite()) {
            return Err(GbrError::Invalid(format!(
                "chamfer must be a non-negative finite value, got {}",
                self.chamfer
            )));
        }
        if !(in_unit(self.precision) && in_unit(self.recall) && in_unit(self.f1)) {
            return Err(GbrError::Invalid(format!(
                "precision/recall/f1 must lie in [0,1], got {}/{}/{}",
                self.precision, self.recall, self.f1
            )));
        }
        let expected = if self.precision + self.recall > 0.0 {
            2.0 * self.precision * self.recall / (self.precision + self.recall)
        } else {
            0.0
        };
        if (self.f1 - expected).abs() > 1e-12 {
            return Err(GbrError::Invalid(format!(
                "f1 {} is not the harmonic mean of {} and {}",
                self.f1, self.precision, self.recall
            )));
        }
        if !(self.ate_rmse >= 0.0 && self.ate_rmse.is_finite()) {
            return Err(GbrError::Invalid(format!(
                "ate_rmse must be a non-negative finite value, got {}",
                self.ate_rmse
            )));
        }
        if self.psnr.is_nan() || self.psnr == f64::NEG_INFINITY {
            return Err(GbrError::Invalid(format!("psnr {} is invalid", self.psnr)));
        }
        if !in_unit(self.ssim) {
            return Err(GbrError::Invalid(format!(
                "ssim must lie in [0,1], got {}",
                self.ssim
            )));
        }
        Ok(())
    }
}

/// Writes finite PSNR as a number and +inf as `"exact"`.
mod psnr_sentinel {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_infinite() && *value > 0.0 {
            s.serialize_str("exact")
        } else {
            s.serialize_f64(*value)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Sentinel(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Sentinel(s) if s == "exact" => Ok(f64::INFINITY),
            Repr::Sentinel(s) => Err(D::Error::custom(format!(
                "psnr must be a number or \"exact\", got \"{s}\""
            ))),
        }
    }
}
