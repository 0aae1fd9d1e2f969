use crate::deform::DeformConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    DenseWindow,
    Deformable,
}

impl AttentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::DenseWindow => "dense",
            AttentionKind::Deformable => "deform",
        }
    }
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" | "dense-window" => Ok(AttentionKind::DenseWindow),
            "deform" | "deformable" => Ok(AttentionKind::Deformable),
            other => Err(Error::Config(format!("unknown attention kind {other:?}"))),
        }
    }
}

/// Backbone hyperparameters. Defaults are the desk-scale configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SwinConfig {
    /// `(t, h, w)` patch extent.
    pub patch_size: [usize; 3],
    pub in_chans: usize,
    pub embed_dim: usize,
    pub depths: Vec<usize>,
    pub num_heads: Vec<usize>,
    /// `(t, h, w)` window extent.
    pub window_size: [usize; 3],
    pub mlp_ratio: usize,
    pub attention_kind: AttentionKind,
    pub deform: DeformConfig,
}

impl Default for SwinConfig {
    fn default() -> Self {
        Self {
            patch_size: [2, 4, 4],
            in_chans: 1,
            embed_dim: 16,
            depths: vec![2, 2],
            num_heads: vec![2, 4],
            window_size: [2, 4, 4],
            mlp_ratio: 4,
            attention_kind: AttentionKind::DenseWindow,
            deform: DeformConfig::default(),
        }
    }
}

impl SwinConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.patch_size.contains(&0) || self.window_size.contains(&0) {
            return bad("patch and window sizes must be >= 1".into());
        }
        if self.in_chans == 0 || self.embed_dim == 0 || self.mlp_ratio == 0 {
            return bad("in_chans, embed_dim and mlp_ratio must be >= 1".into());
        }
        if self.depths.is_empty() || self.depths.len() != self.num_heads.len() {
            return bad(format!(
                "depths {:?} and num_heads {:?} must be non-empty and the same length",
                self.depths, self.num_heads
            ));
        }
        for (stage, &heads) in self.num_heads.iter().enumerate() {
            if heads == 0 || self.stage_dim(stage) % heads != 0 {
                return bad(format!(
                    "stage {stage} width {} is not divisible by {heads} heads",
                    self.stage_dim(stage)
                ));
            }
        }
        self.deform.validate()
    }

    /// Channel width of `stage`: each merge doubles it.
    pub fn stage_dim(&self, stage: usize) -> usize {
        self.embed_dim << stage
    }

    pub fn num_stages(&self) -> usize {
        self.depths.len()
    }

    pub fn shift_size(&self) -> [usize; 3] {
        self.window_size.map(|w| w / 2)
    }
}
