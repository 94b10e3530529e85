use serde::{Deserialize, Serialize};

use crate::effort::{BASELINE, N_METRICS};
use crate::error::{Error, Result};

/// How effort metrics enter the metric-attention sublayer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditioningMode {
    /// One key/value token per region with a learned region-identity
    /// embedding.
    Region,
    /// All metrics flattened into a single token.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Latent channels per region token (D).
    pub latent_dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Anatomical regions (N_g).
    pub regions: usize,
    /// Metrics per region (N_p).
    pub metrics_per_region: usize,
    /// Feed-forward hidden width as a multiple of `latent_dim`.
    pub ffn_mult: usize,
    pub conditioning_mode: ConditioningMode,
    /// Dropout on the metric-attention weights during training.
    pub attention_dropout: f64,
    /// Prompts known to the text table; one extra row holds the null prompt.
    pub vocab_size: usize,
    /// Reference values the peak and collective columns are divided by
    /// before projection.
    pub metric_scale: [f64; N_METRICS],
}

impl DenoiserConfig {
    /// Desk-scale configuration: D = 32, H = 4, L = 2.
    pub fn desk() -> Self {
        let n = BASELINE.len() as f64;
        Self {
            latent_dim: 32,
            heads: 4,
            layers: 2,
            regions: 7,
            metrics_per_region: N_METRICS,
            ffn_mult: 4,
            conditioning_mode: ConditioningMode::Region,
            attention_dropout: 0.1,
            vocab_size: 14,
            metric_scale: [
                BASELINE.iter().map(|r| r[0]).sum::<f64>() / n,
                BASELINE.iter().map(|r| r[1]).sum::<f64>() / n,
            ],
        }
    }

    /// Full-size configuration: D = 256, H = 8, L = 5.
    pub fn full_scale() -> Self {
        Self {
            latent_dim: 256,
            heads: 8,
            layers: 5,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.latent_dim.is_multiple_of(self.heads) {
            return Err(Error::Validation(format!(
                "latent_dim {} must be divisible by heads {}",
                self.latent_dim, self.heads
            )));
        }
        if !self.latent_dim.is_multiple_of(2) {
            return Err(Error::Validation(
                "latent_dim must be even for sinusoidal encodings".into(),
            ));
        }
        if self.metrics_per_region != N_METRICS {
            return Err(Error::Validation(format!(
                "metrics_per_region must be {N_METRICS}, got {}",
                self.metrics_per_region
            )));
        }
        if self.regions == 0 || self.layers == 0 || self.ffn_mult == 0 {
            return Err(Error::Validation(
                "regions, layers and ffn_mult must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.attention_dropout) {
            return Err(Error::Validation("attention_dropout must lie in [0, 1)".into()));
        }
        if self.metric_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Validation("metric_scale entries must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        DenoiserConfig::desk().validate().unwrap();
        let p = DenoiserConfig::full_scale();
        p.validate().unwrap();
        assert_eq!((p.latent_dim, p.heads, p.layers), (256, 8, 5));
    }

    #[test]
    fn rejects_indivisible_heads_and_wrong_metric_count() {
        let mut c = DenoiserConfig::desk();
        c.heads = 5;
        assert!(c.validate().is_err());
        let mut c = DenoiserConfig::desk();
        c.metrics_per_region = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = DenoiserConfig::desk();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"conditioning_mode\":\"region\""));
        assert_eq!(serde_json::from_str::<DenoiserConfig>(&text).unwrap(), c);
    }
}
