use serde::{Deserialize, Serialize};

use crate::autodiff::check_dropout_rate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    /// Discretization points per channel (sequence extent before patching).
    pub l_v: usize,
    /// Input channels before padding.
    pub f: usize,
    pub s_patch: usize,
    pub f_patch: usize,
    pub d_embed: usize,
    pub heads: usize,
    pub d_head: usize,
    pub mlp_hidden: usize,
    pub depth: usize,
    pub fc_hidden: usize,
    pub dropout: f64,
}

impl ViTConfig {
    /// Laptop-sized default.
    pub fn desk(l_v: usize, f: usize) -> Self {
        Self {
            l_v,
            f,
            s_patch: 20,
            f_patch: 2,
            d_embed: 64,
            heads: 4,
            d_head: 16,
            mlp_hidden: 128,
            depth: 2,
            fc_hidden: 32,
            dropout: 0.1,
        }
    }

    /// Full-size configuration.
    pub fn paper(l_v: usize, f: usize) -> Self {
        Self {
            d_embed: 512,
            heads: 8,
            d_head: 64,
            mlp_hidden: 512,
            depth: 4,
            ..Self::desk(l_v, f)
        }
    }

    /// Channel count after zero-padding to a multiple of `f_patch`.
    pub fn f_pad(&self) -> usize {
        self.f.div_ceil(self.f_patch) * self.f_patch
    }

    /// Token count `L`.
    pub fn tokens(&self) -> usize {
        (self.l_v / self.s_patch) * (self.f_pad() / self.f_patch)
    }

    pub fn patch_len(&self) -> usize {
        self.s_patch * self.f_patch
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l_v", self.l_v),
            ("f", self.f),
            ("s_patch", self.s_patch),
            ("f_patch", self.f_patch),
            ("d_embed", self.d_embed),
            ("heads", self.heads),
            ("d_head", self.d_head),
            ("mlp_hidden", self.mlp_hidden),
            ("depth", self.depth),
            ("fc_hidden", self.fc_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Dimension(format!("{name} must be at least 1")));
        }
        if self.l_v % self.s_patch != 0 {
            return Err(Error::Dimension(format!(
                "L_V = {} is not a multiple of S_patch = {}",
                self.l_v, self.s_patch
            )));
        }
        if self.heads * self.d_head != self.d_embed {
            return Err(Error::Dimension(format!(
                "{} heads of width {} do not make d_embed = {}",
                self.heads, self.d_head, self.d_embed
            )));
        }
        check_dropout_rate(self.dropout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts() {
        assert_eq!(ViTConfig::paper(200, 2).tokens(), 10);
        let raw = ViTConfig::desk(100, 3);
        assert_eq!((raw.f_pad(), raw.tokens(), raw.patch_len()), (4, 10, 40));
        assert_eq!(ViTConfig::desk(100, 5).f_pad(), 6);
        assert!(ViTConfig::paper(200, 3).validate().is_ok());
    }

    #[test]
    fn invalid_configs() {
        let base = ViTConfig::desk(100, 3);
        for bad in [
            ViTConfig { l_v: 90, ..base.clone() },
            ViTConfig { d_head: 15, ..base.clone() },
            ViTConfig { depth: 0, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Dimension(_))));
        }
        assert!(matches!(
            ViTConfig { dropout: 1.0, ..base }.validate(),
            Err(Error::Config(_))
        ));
    }
}
