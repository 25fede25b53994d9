//! The trainable tagger: embeddings, inter-attention fusion, character
//! self-attention, and a CRF over the projected emissions.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::batch::{Batch, SentenceInput};
use crate::config::{Ablation, ModelConfig};
use crate::context::{SelfAttention, SelfAttnConfig};
use crate::crf::{Crf, LabelSchema};
use crate::data::Sentence;
use crate::error::{Error, Result};
use crate::interformer::{InterFormer, InterFormerConfig};
use crate::lexicon::{append_non_word, build_trie, match_words, EmbeddingTable, LexiconTrie, Vocab};
use crate::nn::{Ctx, Linear};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Everything needed to rebuild the parameter layout, apart from the values.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub config: ModelConfig,
    pub schema: LabelSchema,
    pub char_tokens: Vec<String>,
    pub lexicon: Vec<String>,
    pub char_dim: usize,
    pub word_dim: usize,
}

#[derive(Clone, Debug)]
pub struct Layers {
    pub char_emb: ParamId,
    pub word_emb: ParamId,
    pub char_proj: Option<Linear>,
    pub word_proj: Option<Linear>,
    pub inter: InterFormer,
    pub context: SelfAttention,
    pub output: Linear,
    pub crf: Crf,
}

/// Optional pre-trained vectors used to initialise the embedding matrices.
pub struct Pretrained<'a, T> {
    pub chars: Option<&'a EmbeddingTable<T>>,
    pub words: Option<&'a EmbeddingTable<T>>,
}

impl<T> Default for Pretrained<'_, T> {
    fn default() -> Self {
        Pretrained { chars: None, words: None }
    }
}

#[derive(Clone, Debug)]
pub struct Nflat<T> {
    spec: ModelSpec,
    char_vocab: Vocab,
    /// Word rows follow lexicon word ids; `<non_word>` is the vocab's special row.
    word_vocab: Vocab,
    trie: LexiconTrie,
    pub store: ParamStore<T>,
    pub layers: Layers,
}

/// Embedding matrix whose rows come from `pretrained` where the token is
/// known and from a scaled normal otherwise. The `<non_word>` row starts at zero.
fn init_embedding<T: Scalar, R: Rng + ?Sized>(
    vocab: &Vocab,
    dim: usize,
    pretrained: Option<&EmbeddingTable<T>>,
    rng: &mut R,
) -> Tensor<T> {
    let mut m = Tensor::<T>::randn(vec![vocab.rows(), dim], 1.0 / (dim as f64).sqrt(), rng);
    if let Some(p) = pretrained {
        for (i, tok) in vocab.tokens().iter().enumerate() {
            if p.vocab().get(tok).is_some() {
                m.row_mut(i).copy_from_slice(p.vector(tok));
            }
        }
        m.row_mut(vocab.unknown_row()).copy_from_slice(p.matrix().row(p.unknown_row()));
    }
    m.row_mut(vocab.non_word_row()).fill(T::zero());
    m
}

impl<T: Scalar> Nflat<T> {
    /// Fresh model. `char_tokens` is the character vocabulary, `lexicon` the
    /// word list used for matching; `pretrained` fixes embedding widths when given.
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        schema: LabelSchema,
        char_tokens: Vec<String>,
        lexicon: &[String],
        pretrained: Pretrained<'_, T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let width = |p: Option<&EmbeddingTable<T>>| -> Result<usize> {
            match (p, config.embed_dim) {
                (Some(t), Some(e)) if t.dim() != e => Err(Error::Config(format!(
                    "embed_dim {e} disagrees with pre-trained width {}",
                    t.dim()
                ))),
                (Some(t), _) => Ok(t.dim()),
                (None, _) => Ok(config.embed_dim()),
            }
        };
        let spec = ModelSpec {
            char_dim: width(pretrained.chars)?,
            word_dim: width(pretrained.words)?,
            config,
            schema,
            char_tokens,
            lexicon: lexicon.to_vec(),
        };
        Self::build(spec, pretrained, rng)
    }

    /// Rebuilds the parameter layout of `spec` with freshly initialised values.
    pub fn from_spec<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        Self::build(spec, Pretrained::default(), rng)
    }

    fn build<R: Rng + ?Sized>(spec: ModelSpec, pretrained: Pretrained<'_, T>, rng: &mut R) -> Result<Self> {
        let cfg = &spec.config;
        cfg.validate()?;
        if spec.schema.is_empty() {
            return Err(Error::Config("label schema is empty".into()));
        }
        let trie = build_trie(&spec.lexicon)?;
        let char_vocab = Vocab::new(spec.char_tokens.clone());
        let word_vocab = Vocab::new(trie.words().to_vec());
        let d = cfg.d_model;
        let mut store = ParamStore::new();
        let char_emb = store.add(
            "char_embedding",
            init_embedding(&char_vocab, spec.char_dim, pretrained.chars, rng),
        );
        let word_emb = store.add(
            "word_embedding",
            init_embedding(&word_vocab, spec.word_dim, pretrained.words, rng),
        );
        let char_proj = (spec.char_dim != d).then(|| Linear::new(&mut store, "char_proj", spec.char_dim, d, rng));
        let word_proj = (spec.word_dim != d).then(|| Linear::new(&mut store, "word_proj", spec.word_dim, d, rng));
        let inter = InterFormer::new(
            &mut store,
            "inter",
            InterFormerConfig {
                d_model: d,
                heads: cfg.heads,
                d_ff: cfg.d_ff(),
                attn_dropout: cfg.attn_dropout,
                fc_dropout: cfg.fc_dropout1,
                relative_positions: cfg.ablation != Ablation::NoRpe,
                empty_row_fallback: cfg.empty_row_fallback,
            },
            rng,
        )?;
        let context = SelfAttention::new(
            &mut store,
            "context",
            SelfAttnConfig {
                d_model: d,
                heads: cfg.self_heads(),
                d_ff: cfg.d_ff(),
                attn_dropout: cfg.attn_dropout,
                fc_dropout: cfg.fc_dropout1,
            },
            rng,
        )?;
        let labels = spec.schema.len();
        let output = Linear::new(&mut store, "output", d, labels, rng);
        let crf = Crf::new(&mut store, "crf", labels, rng);
        Ok(Nflat {
            spec,
            char_vocab,
            word_vocab,
            trie,
            store,
            layers: Layers {
                char_emb,
                word_emb,
                char_proj,
                word_proj,
                inter,
                context,
                output,
                crf,
            },
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn config(&self) -> &ModelConfig {
        &self.spec.config
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.spec.schema
    }

    pub fn trie(&self) -> &LexiconTrie {
        &self.trie
    }

    pub fn char_vocab(&self) -> &Vocab {
        &self.char_vocab
    }

    pub fn word_vocab(&self) -> &Vocab {
        &self.word_vocab
    }

    /// Vocabulary lookup and lexicon matching for one sentence. Gold labels
    /// are encoded when present.
    pub fn encode(&self, sentence: &Sentence) -> Result<SentenceInput> {
        if sentence.is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut buf = [0u8; 4];
        let char_rows = sentence
            .chars
            .iter()
            .map(|c| self.char_vocab.row_of(c.encode_utf8(&mut buf)))
            .collect();
        let mut words = match_words(&self.trie, &sentence.chars, self.spec.config.max_match_len);
        if self.spec.config.ablation != Ablation::NoTag {
            words = append_non_word(words, sentence.len());
        }
        let word_rows = words
            .iter()
            .map(|w| w.word_id.unwrap_or(self.word_vocab.non_word_row()))
            .collect();
        let gold = match &sentence.labels {
            Some(tags) => Some(self.spec.schema.encode(tags)?),
            None => None,
        };
        Ok(SentenceInput {
            char_rows,
            words,
            word_rows,
            gold,
        })
    }

    pub fn batch(&self, inputs: &[&SentenceInput]) -> Result<Batch> {
        Batch::new(inputs, self.char_vocab.non_word_row(), self.word_vocab.non_word_row())
    }

    fn embed(
        &self,
        tape: &mut Tape<'_, T>,
        table: ParamId,
        rows: &[usize],
        shape: [usize; 2],
        proj: Option<&Linear>,
        dropout: f64,
        ctx: &mut Ctx<'_>,
    ) -> Result<Var> {
        let t = tape.param(table);
        let dim = tape.shape(t)[1];
        let x = tape.gather_rows(t, rows)?;
        let x = tape.reshape(x, vec![shape[0], shape[1], dim])?;
        let x = ctx.dropout(tape, x, dropout)?;
        match proj {
            Some(p) => p.forward(tape, x),
            None => Ok(x),
        }
    }

    /// Emission scores `[B, N, labels]`.
    pub fn forward(&self, tape: &mut Tape<'_, T>, batch: &Batch, ctx: &mut Ctx<'_>) -> Result<Var> {
        let cfg = &self.spec.config;
        let l = &self.layers;
        let chars = self.embed(
            tape,
            l.char_emb,
            &batch.char_rows,
            [batch.size, batch.n],
            l.char_proj.as_ref(),
            cfg.char_embed_dropout,
            ctx,
        )?;
        let words = self.embed(
            tape,
            l.word_emb,
            &batch.word_rows,
            [batch.size, batch.m],
            l.word_proj.as_ref(),
            cfg.word_embed_dropout,
            ctx,
        )?;
        let fused = l.inter.forward(tape, chars, words, batch, ctx)?;
        let h = l.context.forward(tape, fused, batch, ctx)?;
        let h = ctx.dropout(tape, h, cfg.fc_dropout2)?;
        l.output.forward(tape, h)
    }

    /// Mean per-sentence CRF negative log-likelihood of a labelled batch.
    pub fn loss(&self, tape: &mut Tape<'_, T>, batch: &Batch, ctx: &mut Ctx<'_>) -> Result<Var> {
        let gold = batch
            .gold
            .as_ref()
            .ok_or_else(|| Error::Config("loss needs gold labels for every sentence".into()))?;
        let em = self.forward(tape, batch, ctx)?;
        let total = self.layers.crf.batch_nll(tape, em, &batch.char_lens, gold)?;
        Ok(tape.scale(total, T::of(1.0 / batch.size as f64)))
    }

    /// Emissions of one sentence as `[n * labels]` row-major `f64`.
    pub fn emissions(&self, input: &SentenceInput) -> Result<Vec<f64>> {
        let batch = self.batch(&[input])?;
        let mut tape = Tape::new(&self.store);
        let em = self.forward(&mut tape, &batch, &mut Ctx::eval())?;
        Ok(tape.value(em).to_f64())
    }

    /// Viterbi label indices for one sentence.
    pub fn predict_indices(&self, input: &SentenceInput) -> Result<Vec<usize>> {
        let em = self.emissions(input)?;
        Ok(self.layers.crf.decode(&self.store, &em))
    }

    pub fn predict(&self, sentence: &Sentence) -> Result<Vec<String>> {
        let input = self.encode(sentence)?;
        Ok(self.spec.schema.decode(&self.predict_indices(&input)?))
    }

    /// Overwrites every parameter from `(name, tensor)` pairs; names and
    /// shapes must match the layout exactly.
    pub fn load_params(&mut self, params: Vec<(String, Tensor<T>)>) -> Result<()> {
        if params.len() != self.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.store.len(),
                params.len()
            )));
        }
        for (name, value) in params {
            let id = self
                .store
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {name:?}")))?;
            if self.store.get(id).shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    value.shape(),
                    self.store.get(id).shape()
                )));
            }
            *self.store.get_mut(id) = value;
        }
        Ok(())
    }
}

/// Sorted distinct characters of a corpus, as vocabulary tokens.
pub fn char_vocabulary(corpora: &[&[Sentence]]) -> Vec<String> {
    let mut chars: Vec<char> = corpora
        .iter()
        .flat_map(|c| c.iter().flat_map(|s| s.chars.iter().copied()))
        .collect();
    chars.sort_unstable();
    chars.dedup();
    chars.into_iter().map(String::from).collect()
}
