//! Tokenization, stable token hashing and training-time input corruption.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MASK_SYMBOL: &str = "__mask__";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Ordered lowercase word tokens. Never contains an empty token.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Wraps pre-split tokens, dropping empty ones.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenSeq(
            tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    /// Bucket ids of every token, in order.
    pub fn hashed(&self, buckets: usize) -> Vec<u32> {
        self.0.iter().map(|t| hash_token(t, buckets)).collect()
    }
}

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|piece| !piece.is_empty())
            .map(str::to_lowercase)
            .collect(),
    )
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

/// Continues an FNV-1a state over more bytes.
pub fn fnv1a64_extend(mut state: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

/// Stable bucket id of a token: FNV-1a-64 of its UTF-8 bytes modulo `buckets`.
pub fn hash_token(token: &str, buckets: usize) -> u32 {
    assert!(buckets >= 1, "bucket count must be positive");
    (fnv1a64(token.as_bytes()) % buckets as u64) as u32
}

/// Derives a child seed from a master seed and a string key.
pub fn derive_seed(master: u64, key: &str) -> u64 {
    let state = fnv1a64_extend(FNV_OFFSET, &master.to_le_bytes());
    fnv1a64_extend(state, key.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub rate: f64,
    pub mask_symbol: String,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            rate: 0.1,
            mask_symbol: DEFAULT_MASK_SYMBOL.to_string(),
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        NoiseConfig {
            rate: 0.0,
            ..Default::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        NoiseConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(crate::Error::InvalidArgument(format!(
                "noise rate {} outside [0, 1]",
                self.rate
            )));
        }
        Ok(())
    }
}

/// ⌈rate·len⌉, with products within rounding distance of an integer snapped to it
/// (0.1 · 30 evaluates to 3.0000000000000004 in binary floating point).
pub fn perturb_count(rate: f64, len: usize) -> usize {
    if len == 0 || rate <= 0.0 {
        return 0;
    }
    let x = rate * len as f64;
    let nearest = x.round();
    let count = if (x - nearest).abs() <= 1e-9 * (len as f64).max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (count as usize).min(len)
}

/// Applies shuffle, deletion, then masking, each to ⌈rate·current length⌉
/// positions chosen uniformly without replacement.
pub fn corrupt(tokens: &TokenSeq, cfg: &NoiseConfig) -> TokenSeq {
    corrupt_staged(tokens, cfg).masked
}

/// Output of each corruption stage, in application order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionStages {
    pub shuffled: TokenSeq,
    pub deleted: TokenSeq,
    pub masked: TokenSeq,
}

pub fn corrupt_staged(tokens: &TokenSeq, cfg: &NoiseConfig) -> CorruptionStages {
    if tokens.is_empty() || cfg.rate <= 0.0 {
        return CorruptionStages {
            shuffled: tokens.clone(),
            deleted: tokens.clone(),
            masked: tokens.clone(),
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = tokens.0.clone();

    let picked = sorted_sample(&mut rng, out.len(), perturb_count(cfg.rate, out.len()));
    let mut moved: Vec<String> = picked.iter().map(|&i| out[i].clone()).collect();
    moved.shuffle(&mut rng);
    for (&i, tok) in picked.iter().zip(moved) {
        out[i] = tok;
    }
    let shuffled = TokenSeq(out.clone());

    let doomed = sorted_sample(&mut rng, out.len(), perturb_count(cfg.rate, out.len()));
    let mut doomed = doomed.into_iter().peekable();
    out = out
        .into_iter()
        .enumerate()
        .filter_map(|(i, tok)| {
            if doomed.peek() == Some(&i) {
                doomed.next();
                None
            } else {
                Some(tok)
            }
        })
        .collect();
    let deleted = TokenSeq(out.clone());

    for i in sorted_sample(&mut rng, out.len(), perturb_count(cfg.rate, out.len())) {
        out[i] = cfg.mask_symbol.clone();
    }
    CorruptionStages {
        shuffled,
        deleted,
        masked: TokenSeq(out),
    }
}

fn sorted_sample(rng: &mut ChaCha8Rng, len: usize, amount: usize) -> Vec<usize> {
    if amount == 0 {
        return Vec::new();
    }
    let mut picked = index::sample(rng, len, amount).into_vec();
    picked.sort_unstable();
    picked
}
