use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::SiTConfig;
use super::params::{trunc_normal, ParamId, ParamStore};
use super::record::AttentionRecord;
use crate::autodiff::{Array, Axis, Checkpoint, Scalar, Tape, Var};
use crate::error::{Error, Result};

/// Standard deviation of the truncated-normal weight init.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockIds {
    ln1: (ParamId, ParamId),
    q: (ParamId, ParamId),
    k: (ParamId, ParamId),
    v: (ParamId, ParamId),
    o: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

/// Handles to every tensor of the model, as `(weight, bias)` pairs where
/// applicable. Layer norms are `(gamma, beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelIds {
    pub patch_proj: (ParamId, ParamId),
    pub reg_token: ParamId,
    pub pos_embed: ParamId,
    pub(crate) blocks: Vec<BlockIds>,
    pub norm: (ParamId, ParamId),
    pub head_ln: (ParamId, ParamId),
    pub head_fc1: (ParamId, ParamId),
    pub head_fc2: (ParamId, ParamId),
    pub mask_token: ParamId,
    pub mpp_head: (ParamId, ParamId),
    pub confound: Option<(ParamId, ParamId)>,
}

/// The SiT encoder with regression and reconstruction heads.
#[derive(Debug, Clone, PartialEq)]
pub struct SiTModel<T> {
    config: SiTConfig,
    pub params: ParamStore<T>,
    ids: ModelIds,
}

/// Name prefix of the regression head tensors.
pub const HEAD_PREFIX: &str = "head.";
/// Name prefix of the confound projection tensors.
pub const CONFOUND_PREFIX: &str = "confound.";

impl<T: Scalar> SiTModel<T> {
    /// Fresh model: truncated-normal weights and tokens, zero biases, unit
    /// layer-norm scales.
    pub fn new(config: SiTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut p = ParamStore::new();
        let (d, m, pd, n) = (config.hidden, config.mlp_size, config.patch_dim, config.seq_len);

        let linear = |p: &mut ParamStore<T>, name: &str, i: usize, o: usize, rng: &mut ChaCha8Rng| {
            (
                p.add(format!("{name}.weight"), trunc_normal(i, o, INIT_STD, rng)),
                p.add(format!("{name}.bias"), Array::zeros(1, o)),
            )
        };
        let norm = |p: &mut ParamStore<T>, name: &str| {
            (
                p.add(format!("{name}.gamma"), Array::filled(1, d, T::one())),
                p.add(format!("{name}.beta"), Array::zeros(1, d)),
            )
        };

        let patch_proj = linear(&mut p, "patch_proj", pd, d, rng);
        let reg_token = p.add("reg_token", trunc_normal(1, d, INIT_STD, rng));
        let pos_embed = p.add("pos_embed", trunc_normal(n + 1, d, INIT_STD, rng));
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let b = format!("blocks.{l}");
            blocks.push(BlockIds {
                ln1: norm(&mut p, &format!("{b}.ln1")),
                q: linear(&mut p, &format!("{b}.attn.q"), d, d, rng),
                k: linear(&mut p, &format!("{b}.attn.k"), d, d, rng),
                v: linear(&mut p, &format!("{b}.attn.v"), d, d, rng),
                o: linear(&mut p, &format!("{b}.attn.o"), d, d, rng),
                ln2: norm(&mut p, &format!("{b}.ln2")),
                fc1: linear(&mut p, &format!("{b}.ffn.fc1"), d, m, rng),
                fc2: linear(&mut p, &format!("{b}.ffn.fc2"), m, d, rng),
            });
        }
        let norm_ids = norm(&mut p, "norm");
        let head_ln = norm(&mut p, "head.ln");
        let head_fc1 = linear(&mut p, "head.fc1", d, d / 2, rng);
        let head_fc2 = linear(&mut p, "head.fc2", d / 2, 1, rng);
        let mask_token = p.add("mask_token", trunc_normal(1, d, INIT_STD, rng));
        let mpp_head = linear(&mut p, "mpp_head", d, pd, rng);
        let confound = config
            .confound
            .then(|| linear(&mut p, "confound", 1, d, rng));

        Ok(SiTModel {
            config,
            params: p,
            ids: ModelIds {
                patch_proj,
                reg_token,
                pos_embed,
                blocks,
                norm: norm_ids,
                head_ln,
                head_fc1,
                head_fc2,
                mask_token,
                mpp_head,
                confound,
            },
        })
    }

    pub fn config(&self) -> &SiTConfig {
        &self.config
    }

    pub fn ids(&self) -> &ModelIds {
        &self.ids
    }

    pub fn cast<U: Scalar>(&self) -> SiTModel<U> {
        SiTModel {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    /// Freezes every tensor except the regression head (and the confound
    /// projection, which feeds the head and has no pretrained value).
    pub fn freeze_backbone(&mut self) {
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            let name = self.params.name(id);
            let keep = name.starts_with(HEAD_PREFIX) || name.starts_with(CONFOUND_PREFIX);
            self.params.set_frozen(id, !keep);
        }
    }

    pub fn unfreeze_all(&mut self) {
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            self.params.set_frozen(id, false);
        }
    }

    /// Scalars in the tensors that make up the regression model; agrees with
    /// [`SiTConfig::param_count`].
    pub fn regression_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(_, p)| {
                !(p.name == "mask_token"
                    || p.name.starts_with("mpp_head.")
                    || p.name.starts_with(CONFOUND_PREFIX))
            })
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.to_record(),
            tensors: self
                .params
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.cast::<f32>()))
                .collect(),
        }
    }

    /// Rebuilds a model from a checkpoint. Every model tensor must be present
    /// with a matching shape; extra tensors are ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = SiTConfig::from_record(&ck.config)?;
        let mut model = SiTModel::new(config, 0)?;
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id).to_owned();
            let value = ck
                .tensor(&name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor {name}")))?;
            model.params.assign(&name, value.cast())?;
        }
        Ok(model)
    }

    /// Copies every checkpoint tensor whose name and shape match a model
    /// tensor. Returns the names that were loaded.
    pub fn load_matching(&mut self, ck: &Checkpoint) -> Vec<String> {
        let mut loaded = Vec::new();
        for (name, value) in &ck.tensors {
            if let Some(id) = self.params.id(name) {
                if self.params.value(id).shape() == value.shape() {
                    *self.params.value_mut(id) = value.cast();
                    loaded.push(name.clone());
                }
            }
        }
        loaded
    }
}

/// Per-parameter gradients, `None` for frozen or unused tensors.
pub struct ParamGrads<T> {
    pub grads: Vec<Option<Array<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&Array<T>> {
        self.grads[id.0].as_ref()
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &ParamGrads<T>) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => {
                    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
                (None, Some(b)) => *mine = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// One forward (and optionally backward) pass: a tape with the model
/// parameters bound as leaves.
pub struct Session<'m, T: Scalar> {
    pub tape: Tape<T>,
    model: &'m SiTModel<T>,
    vars: Vec<Var>,
    training: bool,
    rng: ChaCha8Rng,
    record: Option<AttentionRecord>,
}

impl<'m, T: Scalar> Session<'m, T> {
    /// Binds the parameters. With `training` set, dropout is active and draws
    /// from a stream seeded by `seed`.
    pub fn new(model: &'m SiTModel<T>, training: bool, seed: u64) -> Self {
        let mut tape = Tape::new();
        let vars = model
            .params
            .iter()
            .map(|(_, p)| {
                if p.frozen {
                    tape.constant(p.value.clone())
                } else {
                    tape.leaf(p.value.clone())
                }
            })
            .collect();
        Session {
            tape,
            model,
            vars,
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            record: None,
        }
    }

    /// Captures attention matrices during the next encoder pass.
    pub fn record_attention(&mut self) {
        let c = &self.model.config;
        self.record = Some(AttentionRecord::new(c.layers, c.heads));
    }

    pub fn take_record(&mut self) -> Option<AttentionRecord> {
        self.record.take()
    }

    pub fn model(&self) -> &SiTModel<T> {
        self.model
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        self.tape.value(v)
    }

    fn linear(&mut self, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
        let y = self.tape.matmul(x, self.vars[w.0])?;
        self.tape.add(y, self.vars[b.0])
    }

    fn layernorm(&mut self, x: Var, (g, b): (ParamId, ParamId)) -> Result<Var> {
        self.tape.layernorm_rows(x, self.vars[g.0], self.vars[b.0])
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let p = self.model.config.dropout;
        self.tape.dropout(x, p, self.training, &mut self.rng)
    }

    /// Linear projection of the `N x patch_dim` tokens to `N x D`.
    pub fn project_patches(&mut self, tokens: &Array<T>) -> Result<Var> {
        let c = &self.model.config;
        if tokens.shape() != [c.seq_len, c.patch_dim] {
            return Err(Error::Shape {
                op: "project_patches",
                left: [c.seq_len, c.patch_dim],
                right: tokens.shape(),
            });
        }
        let x = self.tape.constant(tokens.clone());
        self.linear(x, self.model.ids.patch_proj)
    }

    /// Prepends the regression token, adds positional embeddings to the first
    /// `N + 1` rows and appends position-less extra tokens.
    pub fn assemble(&mut self, projected: Var, extras: &[Var]) -> Result<Var> {
        let ids = &self.model.ids;
        let (reg, pos) = (self.vars[ids.reg_token.0], self.vars[ids.pos_embed.0]);
        let seq = self.tape.concat(&[reg, projected], Axis::Rows)?;
        let seq = self.tape.add(seq, pos)?;
        if extras.is_empty() {
            return Ok(seq);
        }
        let mut parts = vec![seq];
        parts.extend_from_slice(extras);
        self.tape.concat(&parts, Axis::Rows)
    }

    /// `S x D` input sequence of the encoder.
    pub fn embed_sequence(&mut self, tokens: &Array<T>, extras: &[Var]) -> Result<Var> {
        let projected = self.project_patches(tokens)?;
        self.assemble(projected, extras)
    }

    /// `Softmax(q k^T / sqrt(D_h)) v` for one head's `S x D_h` slices.
    pub fn self_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let dh = self.tape.shape(q)[1];
        let q = self.tape.scale(q, T::of(1.0 / (dh as f64).sqrt()));
        let kt = self.tape.transpose(k);
        let logits = self.tape.matmul(q, kt)?;
        let a = self.tape.softmax_rows(logits);
        if let Some(rec) = self.record.as_mut() {
            rec.push(self.tape.value(a).cast())?;
        }
        self.tape.matmul(a, v)
    }

    /// Multi-head self-attention of block `layer`.
    pub fn msa(&mut self, x: Var, layer: usize) -> Result<Var> {
        let ids = self.model.ids.blocks[layer].clone();
        let (h, dh) = (self.model.config.heads, self.model.config.head_dim());
        let q = self.linear(x, ids.q)?;
        let k = self.linear(x, ids.k)?;
        let v = self.linear(x, ids.v)?;
        let mut outs = Vec::with_capacity(h);
        for head in 0..h {
            let cols = (head * dh, (head + 1) * dh);
            let qh = self.tape.slice(q, Axis::Cols, cols.0, cols.1)?;
            let kh = self.tape.slice(k, Axis::Cols, cols.0, cols.1)?;
            let vh = self.tape.slice(v, Axis::Cols, cols.0, cols.1)?;
            outs.push(self.self_attention(qh, kh, vh)?);
        }
        let joined = if h == 1 {
            outs[0]
        } else {
            self.tape.concat(&outs, Axis::Cols)?
        };
        self.linear(joined, ids.o)
    }

    /// Pre-norm block: `z = MSA(LN(x)) + x`, `out = FFN(LN(z)) + z`.
    pub fn transformer_block(&mut self, x: Var, layer: usize) -> Result<Var> {
        let ids = self.model.ids.blocks[layer].clone();
        let n1 = self.layernorm(x, ids.ln1)?;
        let attn = self.msa(n1, layer)?;
        let z = self.tape.add(attn, x)?;
        let n2 = self.layernorm(z, ids.ln2)?;
        let hidden = self.linear(n2, ids.fc1)?;
        let hidden = self.tape.gelu(hidden);
        let hidden = self.dropout(hidden)?;
        let out = self.linear(hidden, ids.fc2)?;
        let out = self.dropout(out)?;
        self.tape.add(out, z)
    }

    /// All blocks followed by the final layer norm.
    pub fn encode(&mut self, x: Var) -> Result<Var> {
        let mut x = x;
        for layer in 0..self.model.config.layers {
            x = self.transformer_block(x, layer)?;
        }
        self.layernorm(x, self.model.ids.norm)
    }

    /// Regression head applied to the regression token of an encoded
    /// sequence. Returns a `1 x 1` value.
    pub fn regression_head(&mut self, encoded: Var) -> Result<Var> {
        let ids = self.model.ids.clone();
        let token = self.tape.slice(encoded, Axis::Rows, 0, 1)?;
        let x = self.layernorm(token, ids.head_ln)?;
        let x = self.linear(x, ids.head_fc1)?;
        let x = self.tape.gelu(x);
        self.linear(x, ids.head_fc2)
    }

    /// Full regression forward pass.
    pub fn forward_regress(&mut self, tokens: &Array<T>, extras: &[Var]) -> Result<Var> {
        let x = self.embed_sequence(tokens, extras)?;
        let encoded = self.encode(x)?;
        self.regression_head(encoded)
    }

    /// Reconstructs the `N x patch_dim` tokens from an already corrupted
    /// `N x D` embedding.
    pub fn forward_mpp(&mut self, corrupted: Var) -> Result<Var> {
        let x = self.assemble(corrupted, &[])?;
        let encoded = self.encode(x)?;
        let n = self.model.config.seq_len;
        let patches = self.tape.slice(encoded, Axis::Rows, 1, n + 1)?;
        self.linear(patches, self.model.ids.mpp_head)
    }

    /// `1 x D` confound token from an already normalized confound value.
    pub fn confound_token(&mut self, normalized: f64) -> Result<Var> {
        let ids = self.model.ids.confound.ok_or_else(|| {
            Error::Config("model was built without a confound projection".into())
        })?;
        let z = self.tape.constant(Array::scalar(T::of(normalized)));
        self.linear(z, ids)
    }

    /// Per-parameter gradients of a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads<T>> {
        let mut g = self.tape.backward(loss)?;
        Ok(ParamGrads {
            grads: self.vars.iter().map(|&v| g.take(v)).collect(),
        })
    }
}

/// Eval-mode prediction for one example.
pub fn predict<T: Scalar>(
    model: &SiTModel<T>,
    tokens: &Array<T>,
    confound: Option<f64>,
) -> Result<f64> {
    let mut s = Session::new(model, false, 0);
    let extras = match confound {
        Some(z) => vec![s.confound_token(z)?],
        None => vec![],
    };
    let y = s.forward_regress(tokens, &extras)?;
    Ok(s.value(y).data()[0].to_f64().unwrap_or(f64::NAN))
}

/// Eval-mode prediction that also returns the attention record.
pub fn predict_with_attention<T: Scalar>(
    model: &SiTModel<T>,
    tokens: &Array<T>,
    confound: Option<f64>,
) -> Result<(f64, AttentionRecord)> {
    let mut s = Session::new(model, false, 0);
    s.record_attention();
    let extras = match confound {
        Some(z) => vec![s.confound_token(z)?],
        None => vec![],
    };
    let y = s.forward_regress(tokens, &extras)?;
    let value = s.value(y).data()[0].to_f64().unwrap_or(f64::NAN);
    let record = s.take_record().expect("recording was enabled");
    Ok((value, record))
}
