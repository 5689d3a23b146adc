use crate::error::{Error, Result};

/// Architecture hyperparameters of a SiT encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SiTConfig {
    pub variant: String,
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub mlp_size: usize,
    /// Flattened token length `V * C`.
    pub patch_dim: usize,
    /// Number of patch tokens `N`.
    pub seq_len: usize,
    pub dropout: f64,
    /// Adds the learnable confound projection used for deconfounding.
    pub confound: bool,
}

/// Default token length: 153 vertices x 4 channels.
pub const DEFAULT_PATCH_DIM: usize = 612;
/// Default patch count: faces of the order-2 icosphere.
pub const DEFAULT_SEQ_LEN: usize = 320;

/// `(name, layers, heads, hidden, mlp_size)` of the predefined variants.
pub const VARIANTS: [(&str, usize, usize, usize, usize); 5] = [
    ("tiny", 12, 3, 192, 768),
    ("small", 12, 6, 384, 1536),
    ("base", 12, 12, 768, 3072),
    ("mini", 4, 3, 192, 768),
    ("micro", 2, 2, 32, 64),
];

impl SiTConfig {
    pub fn variant(name: &str, patch_dim: usize, seq_len: usize) -> Result<SiTConfig> {
        let &(variant, layers, heads, hidden, mlp_size) = VARIANTS
            .iter()
            .find(|v| v.0 == name)
            .ok_or_else(|| {
                let names: Vec<_> = VARIANTS.iter().map(|v| v.0).collect();
                Error::Config(format!("unknown variant {name:?} (expected one of {names:?})"))
            })?;
        let cfg = SiTConfig {
            variant: variant.to_owned(),
            layers,
            heads,
            hidden,
            mlp_size,
            patch_dim,
            seq_len,
            dropout: 0.0,
            confound: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tiny() -> SiTConfig {
        Self::variant("tiny", DEFAULT_PATCH_DIM, DEFAULT_SEQ_LEN).unwrap()
    }

    pub fn small() -> SiTConfig {
        Self::variant("small", DEFAULT_PATCH_DIM, DEFAULT_SEQ_LEN).unwrap()
    }

    pub fn base() -> SiTConfig {
        Self::variant("base", DEFAULT_PATCH_DIM, DEFAULT_SEQ_LEN).unwrap()
    }

    pub fn mini() -> SiTConfig {
        Self::variant("mini", DEFAULT_PATCH_DIM, DEFAULT_SEQ_LEN).unwrap()
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Sequence length seen by the encoder: patches, regression token and
    /// the optional confound token.
    pub fn sequence_len(&self) -> usize {
        self.seq_len + 1 + usize::from(self.confound)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("mlp_size", self.mlp_size),
            ("patch_dim", self.patch_dim),
            ("seq_len", self.seq_len),
        ];
        if let Some((name, _)) = fields.iter().find(|f| f.1 == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.hidden < 2 {
            return Err(Error::Config("hidden size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Learnable scalars of the regression model: patch embedding, tokens,
    /// positional embedding, encoder blocks, final norm and regression head.
    /// The pretraining-only mask token and reconstruction head, and the
    /// optional confound projection, are excluded.
    pub fn param_count(&self) -> usize {
        let (d, m, p, n) = (self.hidden, self.mlp_size, self.patch_dim, self.seq_len);
        let embed = p * d + d + d + (n + 1) * d;
        let block = 2 * 2 * d + 4 * (d * d + d) + (d * m + m) + (m * d + d);
        let head = 2 * d + (d * (d / 2) + d / 2) + (d / 2 + 1);
        embed + self.layers * block + 2 * d + head
    }

    pub fn to_record(&self) -> Vec<(String, String)> {
        [
            ("variant", self.variant.clone()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("hidden", self.hidden.to_string()),
            ("mlp_size", self.mlp_size.to_string()),
            ("patch_dim", self.patch_dim.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("dropout", self.dropout.to_string()),
            ("confound", self.confound.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }

    pub fn from_record(record: &[(String, String)]) -> Result<SiTConfig> {
        let get = |key: &str| {
            record
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Data(format!("model config lacks `{key}`")))
        };
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Data(format!("model config `{key}` has bad value {v:?}")))
        }
        let cfg = SiTConfig {
            variant: get("variant")?.to_owned(),
            layers: parse("layers", get("layers")?)?,
            heads: parse("heads", get("heads")?)?,
            hidden: parse("hidden", get("hidden")?)?,
            mlp_size: parse("mlp_size", get("mlp_size")?)?,
            patch_dim: parse("patch_dim", get("patch_dim")?)?,
            seq_len: parse("seq_len", get("seq_len")?)?,
            dropout: parse("dropout", get("dropout")?)?,
            confound: parse("confound", get("confound")?)?,
        };
        cfg.validate().map_err(|e| Error::Data(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_variants_follow_head_width_rule() {
        for cfg in [SiTConfig::tiny(), SiTConfig::small(), SiTConfig::base()] {
            assert_eq!(cfg.hidden, 64 * cfg.heads);
            assert_eq!(cfg.mlp_size, 4 * cfg.hidden);
            assert_eq!(cfg.head_dim(), 64);
        }
    }

    #[test]
    fn record_round_trip() {
        let mut cfg = SiTConfig::mini();
        cfg.dropout = 0.1;
        cfg.confound = true;
        assert_eq!(SiTConfig::from_record(&cfg.to_record()).unwrap(), cfg);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut cfg = SiTConfig::mini();
        cfg.heads = 5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(SiTConfig::variant("huge", 6, 4).is_err());
    }

    #[test]
    fn sequence_len_counts_special_tokens() {
        let mut cfg = SiTConfig::tiny();
        assert_eq!(cfg.sequence_len(), 321);
        cfg.confound = true;
        assert_eq!(cfg.sequence_len(), 322);
    }
}
