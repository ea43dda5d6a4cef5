use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// How the predicate classifiers are organized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierMode {
    /// One linear head over all predicates.
    SingleHead,
    /// Separate heads per predicate type group, outputs concatenated.
    ThreeHead,
}

/// How the first frame, which has no preceding frame, enters the temporal
/// layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstFrameMode {
    /// A one-frame window holding only the first frame.
    Solo,
    /// The first frame duplicated as its own predecessor.
    Duplicate,
}

/// How the coarse prediction selects a transition-matrix row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalRowMode {
    /// Row of the argmax predicate.
    Argmax,
    /// Confidence-weighted mixture of rows.
    Expected,
}

/// All model hyperparameters. The transformer width is derived:
/// `d = 3·proj_dim + 2·semantic_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Object classes including person.
    pub num_object_classes: usize,
    /// Predicate classes C.
    pub num_predicates: usize,
    /// Predicate type partition (attention/spatial/contact); may be empty.
    pub predicate_type_sizes: Vec<usize>,

    /// Backbone feature width fed to f_s / f_o.
    pub visual_dim: usize,
    /// Width each of the three projected feature slots.
    pub proj_dim: usize,
    /// Semantic embedding width.
    pub semantic_dim: usize,
    /// Channels of the union feature map.
    pub union_channels: usize,
    /// Side of the union feature grid.
    pub union_grid: usize,

    pub heads: usize,
    pub dropout: f64,
    pub ffn_width: usize,
    /// Stacked spatial layers N_s.
    pub num_spatial_layers: usize,
    /// Stacked temporal layers N_t.
    pub num_temporal_layers: usize,
    /// Aggregation sliding window τ.
    pub window: usize,

    /// Hidden widths of the two four-layer knowledge embedders.
    pub knowledge_hidden: [usize; 3],
    /// When false, knowledge embeddings are replaced by zero vectors
    /// (the no-knowledge ablation).
    pub knowledge_enabled: bool,

    pub classifier_mode: ClassifierMode,
    pub tkel_first_frame: FirstFrameMode,
    pub temporal_row_mode: TemporalRowMode,
    /// Restrict temporal-window attention so earlier-frame rows cannot
    /// attend to later-frame rows.
    pub tkel_causal: bool,
}

impl Default for ModelConfig {
    /// Full-scale defaults: d = 1936, 8 heads, FFN 2048, windows of 4, and
    /// the 3/6/17 predicate partition of 26 relationship classes.
    fn default() -> Self {
        ModelConfig {
            num_object_classes: 36,
            num_predicates: 26,
            predicate_type_sizes: vec![3, 6, 17],
            visual_dim: 2048,
            proj_dim: 512,
            semantic_dim: 200,
            union_channels: 256,
            union_grid: 7,
            heads: 8,
            dropout: 0.1,
            ffn_width: 2048,
            num_spatial_layers: 2,
            num_temporal_layers: 2,
            window: 4,
            knowledge_hidden: [256, 512, 1024],
            knowledge_enabled: true,
            classifier_mode: ClassifierMode::ThreeHead,
            tkel_first_frame: FirstFrameMode::Solo,
            temporal_row_mode: TemporalRowMode::Argmax,
            tkel_causal: false,
        }
    }
}

impl ModelConfig {
    /// Transformer width: three projected feature slots plus two semantic
    /// embeddings.
    pub fn d(&self) -> usize {
        3 * self.proj_dim + 2 * self.semantic_dim
    }

    /// Flattened union feature length.
    pub fn union_flat(&self) -> usize {
        self.union_channels * self.union_grid * self.union_grid
    }

    /// Small configuration for fast CPU experiments; d = 128.
    pub fn desk(num_object_classes: usize, num_predicates: usize, type_sizes: Vec<usize>) -> Self {
        ModelConfig {
            num_object_classes,
            num_predicates,
            classifier_mode: if type_sizes.is_empty() {
                ClassifierMode::SingleHead
            } else {
                ClassifierMode::ThreeHead
            },
            predicate_type_sizes: type_sizes,
            visual_dim: 64,
            proj_dim: 32,
            semantic_dim: 16,
            union_channels: 4,
            union_grid: 7,
            heads: 8,
            dropout: 0.1,
            ffn_width: 160,
            knowledge_hidden: [32, 64, 96],
            ..ModelConfig::default()
        }
    }

    /// Minimal configuration for gradient checking; d = 8, everything tiny.
    pub fn toy(num_object_classes: usize, num_predicates: usize) -> Self {
        ModelConfig {
            num_object_classes,
            num_predicates,
            predicate_type_sizes: vec![],
            visual_dim: 5,
            proj_dim: 2,
            semantic_dim: 1,
            union_channels: 1,
            union_grid: 3,
            heads: 2,
            dropout: 0.0,
            ffn_width: 12,
            num_spatial_layers: 2,
            num_temporal_layers: 2,
            window: 4,
            knowledge_hidden: [4, 5, 6],
            knowledge_enabled: true,
            classifier_mode: ClassifierMode::SingleHead,
            tkel_first_frame: FirstFrameMode::Solo,
            temporal_row_mode: TemporalRowMode::Argmax,
            tkel_causal: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d() % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "model width {} not divisible by {} heads",
                self.d(),
                self.heads
            )));
        }
        if 2 * self.d() % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "aggregation width {} not divisible by {} heads",
                2 * self.d(),
                self.heads
            )));
        }
        if self.window < 1 {
            return Err(CoreError::Config("window must be >= 1".into()));
        }
        if self.num_spatial_layers < 1 || self.num_temporal_layers < 1 {
            return Err(CoreError::Config("layer counts must be >= 1".into()));
        }
        if self.num_predicates == 0 || self.num_object_classes == 0 {
            return Err(CoreError::Config("label spaces must be non-empty".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        match self.classifier_mode {
            ClassifierMode::ThreeHead => {
                if self.predicate_type_sizes.is_empty()
                    || self.predicate_type_sizes.iter().sum::<usize>() != self.num_predicates
                {
                    return Err(CoreError::Config(format!(
                        "three-head mode needs predicate_type_sizes summing to {}, got {:?}",
                        self.num_predicates, self.predicate_type_sizes
                    )));
                }
            }
            ClassifierMode::SingleHead => {}
        }
        Ok(())
    }

    /// Check that a dataset's label spaces match this configuration.
    pub fn check_dataset(&self, num_classes: usize, num_predicates: usize) -> Result<()> {
        if num_classes != self.num_object_classes || num_predicates != self.num_predicates {
            return Err(CoreError::Config(format!(
                "dataset has {num_classes} classes / {num_predicates} predicates, model expects {} / {}",
                self.num_object_classes, self.num_predicates
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_dimension_contracts() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.d(), 1936);
        assert_eq!(cfg.union_flat(), 12544);
        assert_eq!(cfg.predicate_type_sizes.iter().sum::<usize>(), 26);
        cfg.validate().unwrap();
    }

    #[test]
    fn three_head_requires_partition() {
        let cfg = ModelConfig {
            predicate_type_sizes: vec![3, 6],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ModelConfig::desk(6, 26, vec![3, 6, 17]);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
