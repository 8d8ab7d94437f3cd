use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionKind, Prototypes};
use crate::error::{Error, Result};

/// Spatial reduction of the deepest stage relative to the input.
pub const TOTAL_STRIDE: usize = 32;
pub const PATCH_SIZE: usize = 4;
pub const NUM_STAGES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    /// One logit per pixel.
    Binary,
    /// `classes` logits per pixel.
    Multiclass { classes: usize },
    /// One nonnegative density value per pixel.
    Density,
}

impl TaskKind {
    pub fn out_channels(self) -> usize {
        match self {
            TaskKind::Binary | TaskKind::Density => 1,
            TaskKind::Multiclass { classes } => classes,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Binary => "binary",
            TaskKind::Multiclass { .. } => "multiclass",
            TaskKind::Density => "density",
        }
    }
}

/// A removable model component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Ceb,
    Dab,
    CompOps,
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ceb" => Ok(Component::Ceb),
            "dab" => Ok(Component::Dab),
            "compops" | "comp_ops" | "comp-ops" => Ok(Component::CompOps),
            other => Err(Error::invalid(format!("unknown component {other:?} (expected ceb, dab or compops)"))),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Ceb => "ceb",
            Component::Dab => "dab",
            Component::CompOps => "compops",
        })
    }
}

/// Which optional components are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub ceb: bool,
    pub dab: bool,
    pub comp_ops: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            ceb: true,
            dab: true,
            comp_ops: true,
        }
    }
}

impl Ablation {
    pub fn without(mut self, drop: &BTreeSet<Component>) -> Self {
        for c in drop {
            match c {
                Component::Ceb => self.ceb = false,
                Component::Dab => self.dab = false,
                Component::CompOps => self.comp_ops = false,
            }
        }
        self
    }

    pub fn dropped(&self) -> BTreeSet<Component> {
        let mut out = BTreeSet::new();
        if !self.ceb {
            out.insert(Component::Ceb);
        }
        if !self.dab {
            out.insert(Component::Dab);
        }
        if !self.comp_ops {
            out.insert(Component::CompOps);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    /// Width of the first stage; stages double it.
    pub base_channels: usize,
    pub attention: AttentionKind,
    pub ffn_expansion: usize,
    pub task: TaskKind,
    pub ablation: Ablation,
    /// Weight of the absolute count error in the density loss.
    pub count_loss_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            in_channels: 1,
            base_channels: 16,
            attention: AttentionKind::Ada(Prototypes::Fixed(4)),
            ffn_expansion: 2,
            task: TaskKind::Binary,
            ablation: Ablation::default(),
            count_loss_weight: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("height", self.height), ("width", self.width)] {
            if v == 0 || v % TOTAL_STRIDE != 0 {
                return Err(Error::invalid(format!(
                    "input {name} {v} must be a positive multiple of {TOTAL_STRIDE} (patch size 4 × three 2× merges)"
                )));
            }
        }
        if self.in_channels == 0 || self.base_channels == 0 || self.ffn_expansion == 0 {
            return Err(Error::invalid("channel counts and ffn expansion must be >= 1"));
        }
        if let TaskKind::Multiclass { classes } = self.task {
            if classes < 2 {
                return Err(Error::invalid("multiclass task needs at least 2 classes"));
            }
        }
        if !(self.count_loss_weight >= 0.0) {
            return Err(Error::invalid("count_loss_weight must be >= 0"));
        }
        Ok(())
    }

    /// Channels of stage `i` (0-based).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << i
    }

    /// `(h, w)` token grid of stage `i` (0-based).
    pub fn stage_grid(&self, i: usize) -> (usize, usize) {
        let stride = PATCH_SIZE << i;
        (self.height / stride, self.width / stride)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_schedule_for_default_input() {
        let cfg = ModelConfig::default();
        let grids: Vec<_> = (0..4).map(|i| cfg.stage_grid(i)).collect();
        assert_eq!(grids, vec![(16, 16), (8, 8), (4, 4), (2, 2)]);
        let chans: Vec<_> = (0..4).map(|i| cfg.stage_channels(i)).collect();
        assert_eq!(chans, vec![16, 32, 64, 128]);
    }

    #[test]
    fn rejects_indivisible_inputs() {
        let cfg = ModelConfig {
            height: 48,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("multiple of 32"), "{err}");
    }

    #[test]
    fn config_json_roundtrip_and_defaults() {
        let cfg = ModelConfig {
            task: TaskKind::Multiclass { classes: 5 },
            attention: AttentionKind::Ada(Prototypes::PerToken),
            ..Default::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), cfg);
        let partial: ModelConfig = serde_json::from_str(r#"{"base_channels": 8}"#).unwrap();
        assert_eq!(partial.base_channels, 8);
        assert_eq!(partial.height, 64);
    }

    #[test]
    fn ablation_sets() {
        let drop: BTreeSet<_> = ["ceb", "dab"].iter().map(|s| s.parse().unwrap()).collect();
        let a = Ablation::default().without(&drop);
        assert!(!a.ceb && !a.dab && a.comp_ops);
        assert_eq!(a.dropped(), drop);
        assert!("nope".parse::<Component>().is_err());
    }
}
