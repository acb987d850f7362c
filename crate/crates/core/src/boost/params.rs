use alloc::format;
use alloc::string::String;
use core::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Weight applied to positive-class gradients and hessians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalePosWeight {
    Value(f64),
    /// `N_neg / N_pos` of the training labels.
    Balanced,
}

impl ScalePosWeight {
    pub fn resolve(self, n_pos: usize, n_neg: usize) -> f64 {
        match self {
            ScalePosWeight::Value(v) => v,
            ScalePosWeight::Balanced => n_neg as f64 / n_pos as f64,
        }
    }
}

impl fmt::Display for ScalePosWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalePosWeight::Value(v) => write!(f, "{v}"),
            ScalePosWeight::Balanced => f.write_str("balanced"),
        }
    }
}

impl Serialize for ScalePosWeight {
    fn serialize<S: Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        match self {
            ScalePosWeight::Value(v) => s.serialize_f64(*v),
            ScalePosWeight::Balanced => s.serialize_str("balanced"),
        }
    }
}

impl<'de> Deserialize<'de> for ScalePosWeight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = ScalePosWeight;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or \"balanced\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> core::result::Result<Self::Value, E> {
                Ok(ScalePosWeight::Value(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> core::result::Result<Self::Value, E> {
                Ok(ScalePosWeight::Value(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> core::result::Result<Self::Value, E> {
                Ok(ScalePosWeight::Value(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> core::result::Result<Self::Value, E> {
                if v == "balanced" {
                    Ok(ScalePosWeight::Balanced)
                } else {
                    v.parse::<f64>()
                        .map(ScalePosWeight::Value)
                        .map_err(|_| E::custom(format!("invalid scale_pos_weight `{v}`")))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Split enumeration strategy. Only exact greedy enumeration is implemented;
/// `auto` resolves to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeMethod {
    Auto,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub eta: f64,
    pub gamma: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    /// 0 disables leaf clipping.
    pub max_delta_step: f64,
    pub subsample: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub tree_method: TreeMethod,
    pub scale_pos_weight: ScalePosWeight,
    pub n_rounds: usize,
    /// 0 disables early stopping.
    pub early_stopping_rounds: usize,
    pub seed: u64,
    pub base_score: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self::published_final()
    }
}

impl BoostParams {
    /// Parameters selected by the first tuning pass of the published model.
    pub fn published_initial() -> Self {
        Self {
            max_depth: 2,
            min_child_weight: 1.0,
            subsample: 0.5,
            alpha: 3.0,
            ..Self::published_final()
        }
    }

    /// Parameters of the published final model.
    pub fn published_final() -> Self {
        Self {
            eta: 0.2,
            gamma: 0.0,
            max_depth: 1,
            min_child_weight: 0.0,
            max_delta_step: 0.0,
            subsample: 1.0,
            lambda: 0.0,
            alpha: 4.0,
            tree_method: TreeMethod::Auto,
            scale_pos_weight: ScalePosWeight::Value(1.0),
            n_rounds: 100,
            early_stopping_rounds: 10,
            seed: 0,
            base_score: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad(format!(
                "subsample must lie in (0, 1], got {}",
                self.subsample
            ));
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1".into());
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("min_child_weight", self.min_child_weight),
            ("max_delta_step", self.max_delta_step),
            ("lambda", self.lambda),
            ("alpha", self.alpha),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if let ScalePosWeight::Value(v) = self.scale_pos_weight {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("scale_pos_weight must be positive, got {v}"));
            }
        }
        if !self.base_score.is_finite() {
            return bad("base_score must be finite".into());
        }
        Ok(())
    }
}
