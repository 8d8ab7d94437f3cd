use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

/// Number of proxy prototypes of an aggregation-diffusion unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prototypes {
    Fixed(usize),
    /// One prototype per source token (`K = L`), resolved when weights are built.
    PerToken,
}

impl Prototypes {
    pub fn resolve(self, source_tokens: usize) -> usize {
        match self {
            Prototypes::Fixed(k) => k,
            Prototypes::PerToken => source_tokens,
        }
    }
}

impl fmt::Display for Prototypes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prototypes::Fixed(k) => write!(f, "{k}"),
            Prototypes::PerToken => f.write_str("inf"),
        }
    }
}

impl FromStr for Prototypes {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "∞" | "per-token" => Ok(Prototypes::PerToken),
            other => match other.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(Prototypes::Fixed(k)),
                _ => Err(Error::invalid(format!("prototype count must be >= 1 or 'inf', got {other:?}"))),
            },
        }
    }
}

/// Front-end that turns the two source streams into keys and values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompOp {
    /// Multi-scale element-wise products.
    Consistency,
    /// Multi-scale absolute differences.
    Difference,
    /// Source-1 tokens used directly as keys and values.
    Identity,
}

/// Attention flavour used inside a block: prototype-mediated or dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Ada(Prototypes),
    Standard,
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionKind::Ada(p) => write!(f, "ada-k{p}"),
            AttentionKind::Standard => f.write_str("std"),
        }
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    /// Accepts `std` or a prototype count (`4`, `inf`).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "std" | "standard" => Ok(AttentionKind::Standard),
            other => Ok(AttentionKind::Ada(other.parse()?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaConfig {
    pub prototypes: Prototypes,
    pub proto_dim: usize,
    pub feat_dim: usize,
    pub ffn_expansion: usize,
    pub comp_op: CompOp,
}

impl AdaConfig {
    /// `K = 4`, `D = C = dim`, FFN expansion 2.
    pub fn new(dim: usize, comp_op: CompOp) -> Self {
        Self {
            prototypes: Prototypes::Fixed(4),
            proto_dim: dim,
            feat_dim: dim,
            ffn_expansion: 2,
            comp_op,
        }
    }

    pub fn with_prototypes(mut self, prototypes: Prototypes) -> Self {
        self.prototypes = prototypes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.prototypes == Prototypes::Fixed(0) {
            return Err(Error::invalid("K must be >= 1"));
        }
        if self.proto_dim == 0 || self.feat_dim == 0 {
            return Err(Error::invalid("D and C must be >= 1"));
        }
        if self.comp_op == CompOp::Identity && self.proto_dim != self.feat_dim {
            return Err(Error::invalid("identity CompOps needs D == C"));
        }
        Ok(())
    }
}

/// The two source streams `[L × C]` of one spatial level, `L = h·w`.
#[derive(Debug, Clone)]
pub struct SourcePair<T: Scalar> {
    pub f1: Var<T>,
    pub f2: Var<T>,
    pub h: usize,
    pub w: usize,
}

impl<T: Scalar> SourcePair<T> {
    pub fn new(f1: Var<T>, f2: Var<T>, h: usize, w: usize) -> Result<Self> {
        if f1.shape() != f2.shape() {
            return Err(Error::ShapeMismatch {
                op: "source_pair",
                left: f1.shape().to_vec(),
                right: f2.shape().to_vec(),
            });
        }
        match f1.shape() {
            &[l, _] if l == h * w => Ok(Self { f1, f2, h, w }),
            shape => Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("expected [{}×C] tokens for a {h}×{w} grid", h * w),
            }),
        }
    }

    pub fn tokens(&self) -> usize {
        self.h * self.w
    }

    pub fn channels(&self) -> usize {
        self.f1.shape()[1]
    }

    pub fn swapped(&self) -> Self {
        Self {
            f1: self.f2.clone(),
            f2: self.f1.clone(),
            h: self.h,
            w: self.w,
        }
    }
}
