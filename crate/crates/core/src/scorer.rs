//! The relevance model R(q, a).
//!
//! Each side is mean-pooled over token embeddings, the two vectors are fused
//! as `[u; v; u⊙v; |u−v|]` and passed through a one-hidden-layer ReLU MLP:
//!
//! ```text
//! score = w2 · relu(W1 · f + b1) + b2
//! ```
//!
//! [`Model::score_with_grad`] returns exact partial derivatives of that
//! formula. Embedding gradients are sparse: only rows of tokens present in
//! the pair appear.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::Text;

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_INDEX: usize = 0;
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CRNK1";

pub const DEFAULT_EMBED_DIM: usize = 32;
pub const DEFAULT_HIDDEN_DIM: usize = 32;
pub const DEFAULT_INIT_SEED: u64 = 17;
const EMBED_INIT_RANGE: f64 = 0.1;

/// Token to index map. Index 0 is the shared out-of-vocabulary row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from texts in corpus order. Tokens seen at least
    /// `min_freq` times get indices in order of first occurrence.
    pub fn build<'a, I>(texts: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a Text>,
    {
        let mut order: Vec<&'a str> = Vec::new();
        let mut counts: HashMap<&'a str, usize> = HashMap::new();
        for text in texts {
            for tok in text.tokens() {
                let c = counts.entry(tok.as_str()).or_insert_with(|| {
                    order.push(tok.as_str());
                    0
                });
                *c += 1;
            }
        }
        let kept = order
            .into_iter()
            .filter(|t| *t != UNK_TOKEN && counts[t] >= min_freq.max(1));
        Vocab::from_tokens(std::iter::once(UNK_TOKEN).chain(kept).map(str::to_owned).collect())
            .expect("built vocabulary is well formed")
    }

    /// Rebuilds a vocabulary from its index-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Checkpoint(format!(
                "vocabulary must start with {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn indices(&self, text: &Text) -> Vec<usize> {
        text.tokens().iter().map(|t| self.get(t)).collect()
    }
}

/// All trainable parameters. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    /// `vocab_size × embed_dim`
    pub embeddings: Vec<f64>,
    /// `hidden_dim × 4·embed_dim`
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ModelParams {
    pub fn zeros(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        ModelParams {
            embed_dim,
            hidden_dim,
            vocab_size,
            embeddings: vec![0.0; vocab_size * embed_dim],
            w1: vec![0.0; hidden_dim * 4 * embed_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim],
            b2: 0.0,
        }
    }

    /// Embeddings uniform in ±0.1, W1 uniform in ±1/√(4d), w2 uniform in
    /// ±1/√h, biases zero.
    pub fn init(vocab_size: usize, embed_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::zeros(vocab_size, embed_dim, hidden_dim);
        for x in &mut p.embeddings {
            *x = rng.gen_range(-EMBED_INIT_RANGE..=EMBED_INIT_RANGE);
        }
        let w1_scale = 1.0 / ((4 * embed_dim) as f64).sqrt();
        for x in &mut p.w1 {
            *x = rng.gen_range(-w1_scale..=w1_scale);
        }
        let w2_scale = 1.0 / (hidden_dim as f64).sqrt();
        for x in &mut p.w2 {
            *x = rng.gen_range(-w2_scale..=w2_scale);
        }
        p
    }

    pub fn fused_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn embedding_row(&self, index: usize) -> &[f64] {
        &self.embeddings[index * self.embed_dim..(index + 1) * self.embed_dim]
    }

    pub fn embedding_row_mut(&mut self, index: usize) -> &mut [f64] {
        let d = self.embed_dim;
        &mut self.embeddings[index * d..(index + 1) * d]
    }

    fn check_dims(&self) -> Result<()> {
        let (d, h, v) = (self.embed_dim, self.hidden_dim, self.vocab_size);
        if d == 0 || h == 0 || v == 0 {
            return Err(Error::Config(format!("zero dimension: d={d} h={h} |V|={v}")));
        }
        let ok = self.embeddings.len() == v * d
            && self.w1.len() == h * 4 * d
            && self.b1.len() == h
            && self.w2.len() == h;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "parameter shapes inconsistent with d={d} h={h} |V|={v}"
            )))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.embeddings
            .iter()
            .chain(&self.w1)
            .chain(&self.b1)
            .chain(&self.w2)
            .all(|x| x.is_finite())
            && self.b2.is_finite()
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.embeddings.len() + self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat view used by finite-difference checks: embeddings, W1, b1, w2, b2.
    pub fn get_flat(&self, i: usize) -> f64 {
        let mut i = i;
        for block in [&self.embeddings, &self.w1, &self.b1, &self.w2] {
            if i < block.len() {
                return block[i];
            }
            i -= block.len();
        }
        assert_eq!(i, 0, "flat parameter index out of range");
        self.b2
    }

    pub fn set_flat(&mut self, i: usize, value: f64) {
        let mut i = i;
        for block in [
            &mut self.embeddings,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
        ] {
            if i < block.len() {
                block[i] = value;
                return;
            }
            i -= block.len();
        }
        assert_eq!(i, 0, "flat parameter index out of range");
        self.b2 = value;
    }
}

/// ∂score/∂θ (or ∂loss/∂θ after accumulation), mirroring [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: BTreeMap<usize, Vec<f64>>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    embed_dim: usize,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            embeddings: BTreeMap::new(),
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: 0.0,
            embed_dim: params.embed_dim,
        }
    }

    pub fn embedding_row(&self, index: usize) -> Option<&[f64]> {
        self.embeddings.get(&index).map(Vec::as_slice)
    }

    /// `self += coef · other`
    pub fn add_scaled(&mut self, coef: f64, other: &Gradients) {
        for (&row, g) in &other.embeddings {
            let dst = self
                .embeddings
                .entry(row)
                .or_insert_with(|| vec![0.0; self.embed_dim]);
            for (d, s) in dst.iter_mut().zip(g) {
                *d += coef * s;
            }
        }
        axpy(&mut self.w1, coef, &other.w1);
        axpy(&mut self.b1, coef, &other.b1);
        axpy(&mut self.w2, coef, &other.w2);
        self.b2 += coef * other.b2;
    }

    /// Gradient entry at a flat parameter index (see [`ModelParams::get_flat`]).
    pub fn get_flat(&self, params: &ModelParams, i: usize) -> f64 {
        let n_embed = params.embeddings.len();
        if i < n_embed {
            let (row, col) = (i / self.embed_dim, i % self.embed_dim);
            return self.embeddings.get(&row).map_or(0.0, |r| r[col]);
        }
        let mut i = i - n_embed;
        for block in [&self.w1, &self.b1, &self.w2] {
            if i < block.len() {
                return block[i];
            }
            i -= block.len();
        }
        self.b2
    }
}

fn axpy(dst: &mut [f64], coef: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += coef * s;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreWithGrad {
    pub score: f64,
    pub grads: Gradients,
}

/// Extension point for relevance models driven by the trainer.
pub trait Scorer {
    type Gradient: Clone;

    fn score(&self, question: &Text, answer: &Text) -> Result<f64>;

    fn score_with_grad(&self, question: &Text, answer: &Text) -> Result<(f64, Self::Gradient)>;

    fn zero_gradient(&self) -> Self::Gradient;

    /// `acc += coef · grad`
    fn accumulate(&self, acc: &mut Self::Gradient, coef: f64, grad: &Self::Gradient);

    /// `θ ← θ − lr · grad`
    fn apply_gradient(&mut self, grad: &Self::Gradient, learning_rate: f64);
}

/// Vocabulary plus parameters: everything needed to score a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub vocab: Vocab,
    pub params: ModelParams,
}

struct Forward {
    q_idx: Vec<usize>,
    a_idx: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
    fused: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    score: f64,
}

/// Mean of the embedding rows of `text`'s tokens (UNK row for unknown tokens).
pub fn embed_mean(text: &Text, params: &ModelParams, vocab: &Vocab) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Err(Error::Empty("cannot embed a text with no tokens"));
    }
    params.check_dims()?;
    check_vocab(params, vocab)?;
    Ok(mean_rows(params, &vocab.indices(text)))
}

fn check_vocab(params: &ModelParams, vocab: &Vocab) -> Result<()> {
    if params.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens but embeddings have {} rows",
            vocab.len(),
            params.vocab_size
        )));
    }
    Ok(())
}

fn mean_rows(params: &ModelParams, rows: &[usize]) -> Vec<f64> {
    let d = params.embed_dim;
    let mut out = vec![0.0; d];
    for &r in rows {
        for (o, e) in out.iter_mut().zip(params.embedding_row(r)) {
            *o += e;
        }
    }
    let n = rows.len() as f64;
    for o in &mut out {
        *o /= n;
    }
    out
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Model {
    pub fn new(vocab: Vocab, params: ModelParams) -> Result<Self> {
        params.check_dims()?;
        check_vocab(&params, &vocab)?;
        Ok(Model { vocab, params })
    }

    /// A freshly initialized model over `vocab`.
    pub fn init(vocab: Vocab, embed_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        let params = ModelParams::init(vocab.len(), embed_dim, hidden_dim, seed);
        Model::new(vocab, params)
    }

    fn forward(&self, question: &Text, answer: &Text) -> Result<Forward> {
        if question.is_empty() || answer.is_empty() {
            return Err(Error::Empty("cannot score a pair with an empty side"));
        }
        let p = &self.params;
        p.check_dims()?;
        check_vocab(p, &self.vocab)?;
        let d = p.embed_dim;
        let q_idx = self.vocab.indices(question);
        let a_idx = self.vocab.indices(answer);
        let u = mean_rows(p, &q_idx);
        let v = mean_rows(p, &a_idx);

        let mut fused = Vec::with_capacity(4 * d);
        fused.extend_from_slice(&u);
        fused.extend_from_slice(&v);
        fused.extend(u.iter().zip(&v).map(|(x, y)| x * y));
        fused.extend(u.iter().zip(&v).map(|(x, y)| (x - y).abs()));

        let fd = 4 * d;
        let pre: Vec<f64> = p
            .w1
            .chunks_exact(fd)
            .zip(&p.b1)
            .map(|(row, b)| row.iter().zip(&fused).map(|(w, f)| w * f).sum::<f64>() + b)
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let score = hidden.iter().zip(&p.w2).map(|(a, w)| a * w).sum::<f64>() + p.b2;
        Ok(Forward {
            q_idx,
            a_idx,
            u,
            v,
            fused,
            pre,
            hidden,
            score,
        })
    }

    fn backward(&self, fwd: &Forward) -> Gradients {
        let p = &self.params;
        let d = p.embed_dim;
        let fd = 4 * d;
        let mut g = Gradients::zeros_like(p);
        g.b2 = 1.0;
        g.w2.copy_from_slice(&fwd.hidden);

        let dpre: Vec<f64> = fwd
            .pre
            .iter()
            .zip(&p.w2)
            .map(|(&z, &w)| if z > 0.0 { w } else { 0.0 })
            .collect();
        g.b1.copy_from_slice(&dpre);
        let mut dfused = vec![0.0; fd];
        for (j, &dz) in dpre.iter().enumerate() {
            if dz == 0.0 {
                continue;
            }
            let row = &p.w1[j * fd..(j + 1) * fd];
            let grow = &mut g.w1[j * fd..(j + 1) * fd];
            for k in 0..fd {
                grow[k] = dz * fwd.fused[k];
                dfused[k] += dz * row[k];
            }
        }

        let mut du = vec![0.0; d];
        let mut dv = vec![0.0; d];
        for k in 0..d {
            let s = sign(fwd.u[k] - fwd.v[k]);
            du[k] = dfused[k] + dfused[2 * d + k] * fwd.v[k] + dfused[3 * d + k] * s;
            dv[k] = dfused[d + k] + dfused[2 * d + k] * fwd.u[k] - dfused[3 * d + k] * s;
        }
        scatter_mean(&mut g.embeddings, &fwd.q_idx, &du);
        scatter_mean(&mut g.embeddings, &fwd.a_idx, &dv);
        g
    }
}

fn scatter_mean(rows: &mut BTreeMap<usize, Vec<f64>>, indices: &[usize], grad: &[f64]) {
    let n = indices.len() as f64;
    for &i in indices {
        let row = rows.entry(i).or_insert_with(|| vec![0.0; grad.len()]);
        for (r, g) in row.iter_mut().zip(grad) {
            *r += g / n;
        }
    }
}

impl Scorer for Model {
    type Gradient = Gradients;

    fn score(&self, question: &Text, answer: &Text) -> Result<f64> {
        Ok(self.forward(question, answer)?.score)
    }

    fn score_with_grad(&self, question: &Text, answer: &Text) -> Result<(f64, Gradients)> {
        let fwd = self.forward(question, answer)?;
        Ok((fwd.score, self.backward(&fwd)))
    }

    fn zero_gradient(&self) -> Gradients {
        Gradients::zeros_like(&self.params)
    }

    fn accumulate(&self, acc: &mut Gradients, coef: f64, grad: &Gradients) {
        acc.add_scaled(coef, grad);
    }

    fn apply_gradient(&mut self, grad: &Gradients, learning_rate: f64) {
        let p = &mut self.params;
        for (&row, g) in &grad.embeddings {
            for (x, gx) in p.embedding_row_mut(row).iter_mut().zip(g) {
                *x -= learning_rate * gx;
            }
        }
        for (x, gx) in p.w1.iter_mut().zip(&grad.w1) {
            *x -= learning_rate * gx;
        }
        for (x, gx) in p.b1.iter_mut().zip(&grad.b1) {
            *x -= learning_rate * gx;
        }
        for (x, gx) in p.w2.iter_mut().zip(&grad.w2) {
            *x -= learning_rate * gx;
        }
        p.b2 -= learning_rate * grad.b2;
    }
}

/// Free-function form of [`Scorer::score`].
pub fn score(q: &Text, a: &Text, params: &ModelParams, vocab: &Vocab) -> Result<f64> {
    let model = Model::new(vocab.clone(), params.clone())?;
    model.score(q, a)
}

/// Free-function form of [`Scorer::score_with_grad`].
pub fn score_with_grad(
    q: &Text,
    a: &Text,
    params: &ModelParams,
    vocab: &Vocab,
) -> Result<ScoreWithGrad> {
    let model = Model::new(vocab.clone(), params.clone())?;
    let (score, grads) = model.score_with_grad(q, a)?;
    Ok(ScoreWithGrad { score, grads })
}

// Checkpoint layout: magic, then d, h, |V| as u64 LE, then f64 LE blocks
// E, W1, b1, w2, b2, then |V| tokens each as u32 LE byte length + UTF-8.
impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(5 + 24 + 8 * p.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for dim in [p.embed_dim, p.hidden_dim, p.vocab_size] {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for x in p
            .embeddings
            .iter()
            .chain(&p.w1)
            .chain(&p.b1)
            .chain(&p.w2)
            .chain(std::iter::once(&p.b2))
        {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for tok in self.vocab.tokens() {
            out.extend_from_slice(&(tok.len() as u32).to_le_bytes());
            out.extend_from_slice(tok.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(CHECKPOINT_MAGIC.len())?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "unsupported format tag {:?}, expected {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(CHECKPOINT_MAGIC)
            )));
        }
        let d = r.u64()? as usize;
        let h = r.u64()? as usize;
        let v = r.u64()? as usize;
        let mut p = ModelParams::zeros(v, d, h);
        for block in [&mut p.embeddings, &mut p.w1, &mut p.b1, &mut p.w2] {
            for x in block.iter_mut() {
                *x = r.f64()?;
            }
        }
        p.b2 = r.f64()?;
        let mut tokens = Vec::with_capacity(v);
        for _ in 0..v {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let tok = std::str::from_utf8(raw)
                .map_err(|e| Error::Checkpoint(format!("vocabulary token not UTF-8: {e}")))?;
            tokens.push(tok.to_owned());
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Model::new(Vocab::from_tokens(tokens)?, p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Model::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
