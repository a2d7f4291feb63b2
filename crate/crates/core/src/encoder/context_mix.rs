//! A small, self-contained contextual encoder.
//!
//! Tokens are hashed into a fixed number of buckets. Every token row is the
//! concatenation of its own embedding and a context vector summarising the
//! instances that precede its segment: the bag of context embeddings of
//! each earlier segment, discounted by `decay` per segment of distance.
//! The nearest ancestor therefore weighs most. Rows for `[SEP]` are zero and
//! `[MASK]` contributes nothing, so masking a word removes it from both the
//! token rows and every later segment's context.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{artifact_path, Encoder, EncoderDescriptor, EncoderError, Token, TokenId, MASK_ID, PAD_ID, SEP_ID};

const SPECIAL: TokenId = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextMixConfig {
    pub hidden_size: usize,
    pub vocab_buckets: usize,
    pub decay: f64,
    pub seed: u64,
    /// Std-dev of the initial own-token embeddings.
    pub own_scale: f64,
    /// Std-dev of the initial context embeddings.
    pub context_scale: f64,
    /// Optional pretrained weights, resolved against the artifact cache.
    pub artifact: Option<String>,
}

impl Default for ContextMixConfig {
    fn default() -> Self {
        ContextMixConfig {
            hidden_size: 32,
            vocab_buckets: 8192,
            decay: 0.5,
            seed: 17,
            own_scale: 1.0,
            context_scale: 1.0,
            artifact: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContextMixEncoder {
    cfg: ContextMixConfig,
    half: usize,
    own: Vec<f64>,
    ctx: Vec<f64>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl ContextMixEncoder {
    pub const NAME: &'static str = "context-mix";

    pub fn new(cfg: ContextMixConfig) -> Result<ContextMixEncoder, EncoderError> {
        if cfg.hidden_size < 2 || !cfg.hidden_size.is_multiple_of(2) {
            return Err(EncoderError::BadConfig("hidden_size must be even and at least 2".into()));
        }
        if cfg.vocab_buckets <= SPECIAL as usize {
            return Err(EncoderError::BadConfig("vocab_buckets too small".into()));
        }
        if !(0.0..=1.0).contains(&cfg.decay) {
            return Err(EncoderError::BadConfig("decay must lie in [0, 1]".into()));
        }
        let half = cfg.hidden_size / 2;
        let n = cfg.vocab_buckets * half;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut draw = |scale: f64| -> Vec<f64> {
            let normal = Normal::new(0.0, scale.max(1e-12)).expect("valid std-dev");
            let mut v: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            v[..SPECIAL as usize * half].iter_mut().for_each(|x| *x = 0.0);
            v
        };
        let own = draw(cfg.own_scale);
        let ctx = draw(cfg.context_scale);
        let mut enc = ContextMixEncoder { cfg, half, own, ctx };
        if let Some(name) = enc.cfg.artifact.clone() {
            enc.load_weights(&artifact_path(&name))?;
        }
        Ok(enc)
    }

    pub fn config(&self) -> &ContextMixConfig {
        &self.cfg
    }

    pub fn token_id(&self, token: &str) -> TokenId {
        let buckets = self.cfg.vocab_buckets as u64 - SPECIAL as u64;
        SPECIAL + (fnv1a(token) % buckets) as TokenId
    }

    /// Raw little-endian `f64` weights: own table then context table.
    pub fn save_weights(&self, path: &Path) -> std::io::Result<()> {
        let mut bytes = Vec::with_capacity((self.own.len() + self.ctx.len()) * 8);
        for x in self.own.iter().chain(self.ctx.iter()) {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        std::fs::write(path, bytes)
    }

    pub fn load_weights(&mut self, path: &Path) -> Result<(), EncoderError> {
        let bytes = std::fs::read(path).map_err(|e| EncoderError::BadConfig(format!("{}: {e}", path.display())))?;
        let n = self.own.len();
        if bytes.len() != 2 * n * 8 {
            return Err(EncoderError::BadConfig(format!(
                "{}: expected {} bytes of weights, found {}",
                path.display(),
                2 * n * 8,
                bytes.len()
            )));
        }
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            let x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if i < n {
                self.own[i] = x;
            } else {
                self.ctx[i - n] = x;
            }
        }
        Ok(())
    }

    fn row(table: &[f64], id: TokenId, half: usize) -> &[f64] {
        let i = id as usize * half;
        &table[i..i + half]
    }

    /// Segment index of every position; `None` for separators.
    fn segments(ids: &[TokenId]) -> (Vec<Option<usize>>, usize) {
        let mut seg = 0;
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            if id == SEP_ID {
                out.push(None);
                seg += 1;
            } else {
                out.push(Some(seg));
            }
        }
        (out, seg + 1)
    }

    fn is_special(id: TokenId) -> bool {
        id < SPECIAL
    }
}

impl Encoder for ContextMixEncoder {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn hidden_size(&self) -> usize {
        self.cfg.hidden_size
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>, EncoderError> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            if c.is_ascii_alphanumeric() {
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
            } else {
                i += 1;
            }
            let surface: String = chars[start..i].iter().collect::<String>().to_lowercase();
            out.push(Token { id: self.token_id(&surface), start, end: i });
        }
        Ok(out)
    }

    fn encode(&self, ids: &[TokenId]) -> Result<Array2<f64>, EncoderError> {
        let h = self.cfg.hidden_size;
        let half = self.half;
        let vocab = self.cfg.vocab_buckets as TokenId;
        if let Some(bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(EncoderError::EncoderFailure(format!("token id {bad} outside vocabulary")));
        }
        let (seg_of, n_seg) = Self::segments(ids);

        let mut bags = Array2::<f64>::zeros((n_seg, half));
        for (&id, seg) in ids.iter().zip(&seg_of) {
            if let (Some(s), false) = (seg, Self::is_special(id)) {
                let row = Self::row(&self.ctx, id, half);
                bags.row_mut(*s).iter_mut().zip(row).for_each(|(b, x)| *b += x);
            }
        }
        // context of segment s: sum over v < s of decay^(s-1-v) * bag_v
        let mut ctx = Array2::<f64>::zeros((n_seg, half));
        let mut running = Array1::<f64>::zeros(half);
        for s in 1..n_seg {
            running = running * self.cfg.decay + bags.row(s - 1);
            ctx.row_mut(s).assign(&running);
        }

        let mut out = Array2::<f64>::zeros((ids.len(), h));
        for (j, (&id, seg)) in ids.iter().zip(&seg_of).enumerate() {
            let Some(s) = seg else { continue };
            if id != PAD_ID && id != MASK_ID {
                let own = Self::row(&self.own, id, half);
                out.slice_mut(s![j, ..half]).iter_mut().zip(own).for_each(|(o, x)| *o = *x);
            }
            if id != PAD_ID {
                out.slice_mut(s![j, half..]).assign(&ctx.row(*s));
            }
        }
        Ok(out)
    }

    fn descriptor(&self) -> EncoderDescriptor {
        EncoderDescriptor {
            name: Self::NAME.to_string(),
            config: serde_json::to_value(&self.cfg).expect("config serializes"),
        }
    }

    fn parameters(&self) -> Vec<&[f64]> {
        vec![&self.own, &self.ctx]
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.own, &mut self.ctx]
    }

    fn backward(
        &self,
        ids: &[TokenId],
        grad_hidden: ArrayView2<'_, f64>,
        grads: &mut [Vec<f64>],
    ) -> Result<(), EncoderError> {
        let half = self.half;
        if grad_hidden.dim() != (ids.len(), self.cfg.hidden_size) || grads.len() != 2 {
            return Err(EncoderError::ShapeMismatch("encoder backward".into()));
        }
        let (seg_of, n_seg) = Self::segments(ids);
        // dL/dctx_s summed over the rows of segment s
        let mut gctx = Array2::<f64>::zeros((n_seg, half));
        for (j, (&id, seg)) in ids.iter().zip(&seg_of).enumerate() {
            let Some(s) = seg else { continue };
            if id == PAD_ID {
                continue;
            }
            if !Self::is_special(id) {
                let base = id as usize * half;
                let g = grad_hidden.slice(s![j, ..half]);
                grads[0][base..base + half].iter_mut().zip(g.iter()).for_each(|(a, b)| *a += b);
            }
            let mut row = gctx.row_mut(*s);
            row += &grad_hidden.slice(s![j, half..]);
        }
        // dL/dbag_v = sum over s > v of decay^(s-1-v) * dL/dctx_s
        let mut gbag = Array2::<f64>::zeros((n_seg, half));
        let mut running = Array1::<f64>::zeros(half);
        for v in (0..n_seg.saturating_sub(1)).rev() {
            running = running * self.cfg.decay + gctx.row(v + 1);
            gbag.row_mut(v).assign(&running);
        }
        for (&id, seg) in ids.iter().zip(&seg_of) {
            if let (Some(s), false) = (seg, Self::is_special(id)) {
                let base = id as usize * half;
                grads[1][base..base + half].iter_mut().zip(gbag.row(*s).iter()).for_each(|(a, b)| *a += b);
            }
        }
        Ok(())
    }

    fn clone_box(&self) -> Box<dyn Encoder> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ContextMixEncoder {
        ContextMixEncoder::new(ContextMixConfig { hidden_size: 4, vocab_buckets: 64, ..Default::default() }).unwrap()
    }

    #[test]
    fn tokenizes_cjk_chars_and_ascii_words() {
        let e = small();
        let toks = e.tokenize("打 Pfizer針!").unwrap();
        let spans: Vec<_> = toks.iter().map(|t| (t.start, t.end)).collect();
        assert_eq!(spans, [(0, 1), (2, 8), (8, 9), (9, 10)]);
        assert_eq!(toks[1].id, e.token_id("pfizer"));
    }

    #[test]
    fn context_reaches_later_segments_only() {
        let e = small();
        let a = e.token_id("a");
        let b = e.token_id("b");
        let h1 = e.encode(&[a, SEP_ID, b]).unwrap();
        let h2 = e.encode(&[b]).unwrap();
        // target row sees the ancestor through its context half
        assert_ne!(h1.row(2), h2.row(0));
        assert_eq!(h1.slice(s![2, ..2]), h2.slice(s![0, ..2]));
        // first segment has no context
        assert!(h1.slice(s![0, 2..]).iter().all(|x| *x == 0.0));
        assert!(h1.row(1).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn masking_removes_token_from_context() {
        let e = small();
        let a = e.token_id("a");
        let b = e.token_id("b");
        let masked = e.encode(&[MASK_ID, SEP_ID, b]).unwrap();
        let alone = e.encode(&[b]).unwrap();
        assert_eq!(masked.row(2), alone.row(0));
        assert_ne!(e.encode(&[a, SEP_ID, b]).unwrap().row(2), masked.row(2));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut e = small();
        let ids: Vec<TokenId> = ["x", "y"]
            .iter()
            .map(|t| e.token_id(t))
            .chain([SEP_ID, e.token_id("z"), SEP_ID, e.token_id("w"), e.token_id("x")])
            .collect();
        let weights = Array2::from_shape_fn((ids.len(), 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let loss = |enc: &ContextMixEncoder| (enc.encode(&ids).unwrap() * &weights).sum();
        let mut grads = vec![vec![0.0; e.own.len()], vec![0.0; e.ctx.len()]];
        e.backward(&ids, weights.view(), &mut grads).unwrap();
        let eps = 1e-6;
        for (table, idx) in [
            (0usize, e.token_id("x") as usize * 2 + 1),
            (1, e.token_id("x") as usize * 2),
            (1, e.token_id("z") as usize * 2 + 1),
        ] {
            let orig = e.parameters()[table][idx];
            e.parameters_mut()[table][idx] = orig + eps;
            let up = loss(&e);
            e.parameters_mut()[table][idx] = orig - eps;
            let down = loss(&e);
            e.parameters_mut()[table][idx] = orig;
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - grads[table][idx]).abs() < 1e-6, "table {table}: {fd} vs {}", grads[table][idx]);
        }
    }
}
