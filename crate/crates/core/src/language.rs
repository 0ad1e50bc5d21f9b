//! Encoded referring expressions and the text-encoder interface.

use mrsnet_autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Token features `(B, l_in, N_l)` plus a validity mask `(B, N_l)` holding
/// 1.0 for real tokens and 0.0 for padding.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSequence {
    pub features: Tensor,
    pub mask: Tensor,
}

impl LanguageSequence {
    pub fn new(features: Tensor, mask: Tensor) -> Result<Self> {
        let fs = features.shape();
        if fs.len() != 3 || mask.shape() != [fs[0], fs[2]] {
            return Err(Error::Shape(format!(
                "language features {fs:?} and mask {:?} disagree",
                mask.shape()
            )));
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::InvalidInput("language mask must be 0 or 1".into()));
        }
        let seq = Self { features, mask };
        for b in 0..seq.batch() {
            if seq.valid_tokens(b) == 0 {
                return Err(Error::InvalidInput(format!(
                    "expression {b} has no tokens; at least one is required"
                )));
            }
        }
        Ok(seq)
    }

    pub fn batch(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn num_tokens(&self) -> usize {
        self.features.shape()[2]
    }

    pub fn valid_tokens(&self, b: usize) -> usize {
        let n = self.num_tokens();
        self.mask.data()[b * n..(b + 1) * n]
            .iter()
            .filter(|&&m| m == 1.0)
            .count()
    }

    /// Appends `extra` padding positions to every expression.
    pub fn padded(&self, extra: usize) -> Result<Self> {
        let (b, d, n) = (self.batch(), self.embed_dim(), self.num_tokens());
        let features = Tensor::concat(&[&self.features, &Tensor::zeros([b, d, extra])], 2)?;
        let mask = Tensor::concat(&[&self.mask, &Tensor::zeros([b, extra])], 1)?;
        debug_assert_eq!(mask.shape(), [b, n + extra]);
        Self::new(features, mask)
    }

    /// Concatenates single expressions along the batch axis. All inputs must
    /// share embedding width and token count.
    pub fn stack(items: &[&LanguageSequence]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidInput("cannot stack zero expressions".into()));
        }
        let features: Vec<&Tensor> = items.iter().map(|s| &s.features).collect();
        let masks: Vec<&Tensor> = items.iter().map(|s| &s.mask).collect();
        Self::new(Tensor::concat(&features, 0)?, Tensor::concat(&masks, 0)?)
    }
}

/// Maps expression text to token features. Implementations must be
/// deterministic for fixed text.
pub trait TextEncoder: std::fmt::Debug + Send + Sync {
    fn embed_dim(&self) -> usize;
    fn max_tokens(&self) -> usize;
    fn encode(&self, texts: &[&str]) -> Result<LanguageSequence>;
}

/// Splits text into lowercase ASCII-alphanumeric words; every other
/// alphanumeric character (e.g. CJK) is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() {
            word.push(ch.to_ascii_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if ch.is_alphanumeric() {
            tokens.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Deterministic, parameter-free text encoder: every token maps to a fixed
/// Gaussian vector seeded by its hash, plus a sinusoidal position code.
#[derive(Debug, Clone)]
pub struct HashingTextEncoder {
    embed_dim: usize,
    max_tokens: usize,
}

impl HashingTextEncoder {
    pub fn new(embed_dim: usize, max_tokens: usize) -> Result<Self> {
        if embed_dim == 0 || max_tokens == 0 {
            return Err(Error::Config(
                "text encoder needs positive embed_dim and max_tokens".into(),
            ));
        }
        Ok(Self {
            embed_dim,
            max_tokens,
        })
    }

    fn token_vector(&self, token: &str, position: usize, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()));
        let scale = 1.0 / (self.embed_dim as f64).sqrt();
        for (d, slot) in out.iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let freq = 1.0 / 100f64.powf((d / 2 * 2) as f64 / self.embed_dim as f64);
            let angle = position as f64 * freq;
            let pos = if d % 2 == 0 { angle.sin() } else { angle.cos() };
            *slot = noise * scale + 0.1 * pos;
        }
    }
}

impl TextEncoder for HashingTextEncoder {
    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    fn encode(&self, texts: &[&str]) -> Result<LanguageSequence> {
        let (b, d, n) = (texts.len(), self.embed_dim, self.max_tokens);
        let mut features = vec![0.0; b * d * n];
        let mut mask = vec![0.0; b * n];
        let mut column = vec![0.0; d];
        for (i, text) in texts.iter().enumerate() {
            let tokens = tokenize(text);
            if tokens.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "expression {text:?} contains no tokens"
                )));
            }
            for (t, token) in tokens.iter().take(n).enumerate() {
                self.token_vector(token, t, &mut column);
                for (k, &v) in column.iter().enumerate() {
                    features[(i * d + k) * n + t] = v;
                }
                mask[i * n + t] = 1.0;
            }
        }
        LanguageSequence::new(Tensor::new([b, d, n], features)?, Tensor::new([b, n], mask)?)
    }
}
