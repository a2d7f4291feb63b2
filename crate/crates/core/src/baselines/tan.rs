use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use super::embeddings::StaticEmbeddings;
use super::segment::Segmenter;
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::model::{cross_entropy, ModelError};
use crate::stance::{Stance, StanceDistribution, NUM_CLASSES};
use crate::thread::SubBranch;
use crate::train::{ParamGroup, StancePredictor, Trainable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TanConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Longer inputs are cut to this many words.
    pub max_words: usize,
    /// Phrase whose mean embedding drives the attention.
    pub target_phrase: String,
    pub init_seed: u64,
    /// Adam step size; these models train from scratch and use a larger one.
    pub learning_rate: f64,
}

impl Default for TanConfig {
    fn default() -> Self {
        TanConfig {
            hidden: 256,
            layers: 2,
            max_words: 64,
            target_phrase: "接种新冠疫苗".into(),
            init_seed: 0,
            learning_rate: 5e-4,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM direction. Gate rows are ordered input, forget, cell, output;
/// columns are `[x; h_prev]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> LstmParams {
        LstmParams { w: Array2::zeros((4 * hidden, input + hidden)), b: Array1::zeros(4 * hidden) }
    }

    fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> LstmParams {
        let a = 1.0 / (hidden as f64).sqrt();
        let u = Uniform::new_inclusive(-a, a);
        let mut p = LstmParams::zeros(input, hidden);
        p.w.mapv_inplace(|_| rng.sample(u));
        // forget gate starts open
        p.b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        p
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }

    pub fn input(&self) -> usize {
        self.w.ncols() - self.hidden()
    }
}

struct LstmStep {
    t: usize,
    xh: Array1<f64>,
    i: Array1<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    o: Array1<f64>,
    c_prev: Array1<f64>,
    tanh_c: Array1<f64>,
}

struct LstmCache {
    steps: Vec<LstmStep>,
}

/// Run over the rows of `xs`; `reverse` walks from the last row. Outputs are
/// returned in original row order.
fn lstm_forward(p: &LstmParams, xs: ArrayView2<'_, f64>, reverse: bool) -> (Array2<f64>, LstmCache) {
    let (n, hd, inp) = (xs.nrows(), p.hidden(), p.input());
    let mut out = Array2::zeros((n, hd));
    let mut h = Array1::<f64>::zeros(hd);
    let mut c = Array1::<f64>::zeros(hd);
    let mut steps = Vec::with_capacity(n);
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        let mut xh = Array1::zeros(inp + hd);
        xh.slice_mut(s![..inp]).assign(&xs.row(t));
        xh.slice_mut(s![inp..]).assign(&h);
        let z = p.w.dot(&xh) + &p.b;
        let i = z.slice(s![..hd]).mapv(sigmoid);
        let f = z.slice(s![hd..2 * hd]).mapv(sigmoid);
        let g = z.slice(s![2 * hd..3 * hd]).mapv(f64::tanh);
        let o = z.slice(s![3 * hd..]).mapv(sigmoid);
        let c_prev = c;
        c = &f * &c_prev + &i * &g;
        let tanh_c = c.mapv(f64::tanh);
        h = &o * &tanh_c;
        out.row_mut(t).assign(&h);
        steps.push(LstmStep { t, xh, i, f, g, o, c_prev, tanh_c });
    }
    (out, LstmCache { steps })
}

/// Backpropagation through time; accumulates into `grad` and returns `dL/dxs`.
fn lstm_backward(p: &LstmParams, cache: &LstmCache, dhs: ArrayView2<'_, f64>, grad: &mut LstmParams) -> Array2<f64> {
    let (hd, inp) = (p.hidden(), p.input());
    let mut dxs = Array2::zeros((dhs.nrows(), inp));
    let mut dh_next = Array1::<f64>::zeros(hd);
    let mut dc_next = Array1::<f64>::zeros(hd);
    for st in cache.steps.iter().rev() {
        let dh = &dhs.row(st.t) + &dh_next;
        let d_o = &dh * &st.tanh_c;
        let dc = &dh * &st.o * &st.tanh_c.mapv(|v| 1.0 - v * v) + &dc_next;
        let di = &dc * &st.g;
        let dg = &dc * &st.i;
        let df = &dc * &st.c_prev;
        dc_next = &dc * &st.f;
        let mut dz = Array1::zeros(4 * hd);
        dz.slice_mut(s![..hd]).assign(&(&di * &st.i.mapv(|v| v * (1.0 - v))));
        dz.slice_mut(s![hd..2 * hd]).assign(&(&df * &st.f.mapv(|v| v * (1.0 - v))));
        dz.slice_mut(s![2 * hd..3 * hd]).assign(&(&dg * &st.g.mapv(|v| 1.0 - v * v)));
        dz.slice_mut(s![3 * hd..]).assign(&(&d_o * &st.o.mapv(|v| v * (1.0 - v))));
        let dzc = dz.view().insert_axis(ndarray::Axis(1));
        let xhr = st.xh.view().insert_axis(ndarray::Axis(0));
        grad.w += &dzc.dot(&xhr);
        grad.b += &dz;
        let dxh = p.w.t().dot(&dz);
        dxs.row_mut(st.t).assign(&dxh.slice(s![..inp]));
        dh_next = dxh.slice(s![inp..]).to_owned();
    }
    dxs
}

/// Stacked bidirectional LSTM; each layer outputs `[forward; backward]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TanParams {
    /// `(forward, backward)` per layer
    pub layers: Vec<(LstmParams, LstmParams)>,
    /// Bilinear attention matrix, `2·hidden × dim`.
    pub attention: Array2<f64>,
    /// `3 × 2·hidden`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl TanParams {
    pub fn zeros(dim: usize, hidden: usize, layers: usize) -> TanParams {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { dim } else { 2 * hidden };
                (LstmParams::zeros(inp, hidden), LstmParams::zeros(inp, hidden))
            })
            .collect();
        TanParams {
            layers,
            attention: Array2::zeros((2 * hidden, dim)),
            w: Array2::zeros((NUM_CLASSES, 2 * hidden)),
            b: Array1::zeros(NUM_CLASSES),
        }
    }

    fn init(dim: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> TanParams {
        let mut p = TanParams::zeros(dim, hidden, layers);
        for (l, (f, b)) in p.layers.iter_mut().enumerate() {
            let inp = if l == 0 { dim } else { 2 * hidden };
            *f = LstmParams::init(inp, hidden, rng);
            *b = LstmParams::init(inp, hidden, rng);
        }
        let glorot = |r: usize, c: usize| (6.0 / (r + c) as f64).sqrt();
        let a = glorot(2 * hidden, dim);
        p.attention.mapv_inplace(|_| rng.sample(Uniform::new_inclusive(-a, a)));
        let a = glorot(NUM_CLASSES, 2 * hidden);
        p.w.mapv_inplace(|_| rng.sample(Uniform::new_inclusive(-a, a)));
        p
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        for (f, b) in &self.layers {
            for d in [f, b] {
                v.push(d.w.as_slice().expect("standard layout"));
                v.push(d.b.as_slice().expect("standard layout"));
            }
        }
        v.push(self.attention.as_slice().expect("standard layout"));
        v.push(self.w.as_slice().expect("standard layout"));
        v.push(self.b.as_slice().expect("standard layout"));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        for (f, b) in &mut self.layers {
            for d in [f, b] {
                v.push(d.w.as_slice_mut().expect("standard layout"));
                v.push(d.b.as_slice_mut().expect("standard layout"));
            }
        }
        v.push(self.attention.as_slice_mut().expect("standard layout"));
        v.push(self.w.as_slice_mut().expect("standard layout"));
        v.push(self.b.as_slice_mut().expect("standard layout"));
        v
    }

    pub fn names(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        for (l, (f, b)) in self.layers.iter().enumerate() {
            for (dir, d) in [("fwd", f), ("bwd", b)] {
                v.push((format!("lstm{l}.{dir}.weight"), d.w.shape().to_vec()));
                v.push((format!("lstm{l}.{dir}.bias"), d.b.shape().to_vec()));
            }
        }
        v.push(("attention".into(), self.attention.shape().to_vec()));
        v.push(("classifier.weight".into(), self.w.shape().to_vec()));
        v.push(("classifier.bias".into(), self.b.shape().to_vec()));
        v
    }
}

struct TanForward {
    caches: Vec<(LstmCache, LstmCache)>,
    hs: Array2<f64>,
    /// `M e`
    me: Array1<f64>,
    alpha: Array1<f64>,
    pooled: Array1<f64>,
    probs: StanceDistribution,
}

fn tan_forward(p: &TanParams, xs: ArrayView2<'_, f64>, target: ArrayView1<'_, f64>) -> TanForward {
    let hidden = p.layers.first().map_or(0, |(f, _)| f.hidden());
    let mut caches = Vec::with_capacity(p.layers.len());
    let mut cur = xs.to_owned();
    for (f, b) in &p.layers {
        let (hf, cf) = lstm_forward(f, cur.view(), false);
        let (hb, cb) = lstm_forward(b, cur.view(), true);
        caches.push((cf, cb));
        cur = ndarray::concatenate![ndarray::Axis(1), hf, hb];
    }
    let hs = cur;
    let me = p.attention.dot(&target);
    let n = hs.nrows();
    let (alpha, pooled) = if n == 0 {
        (Array1::zeros(0), Array1::zeros(2 * hidden))
    } else {
        let scores = hs.dot(&me);
        let m = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let e = scores.mapv(|v| (v - m).exp());
        let alpha = &e / e.sum();
        let pooled = hs.t().dot(&alpha);
        (alpha, pooled)
    };
    let logits = p.w.dot(&pooled) + &p.b;
    let probs = StanceDistribution::from_logits([logits[0], logits[1], logits[2]]);
    TanForward { caches, hs, me, alpha, pooled, probs }
}

fn tan_backward(p: &TanParams, fwd: &TanForward, target: ArrayView1<'_, f64>, gold: Stance, grad: &mut TanParams) {
    let mut dlogits = Array1::from(fwd.probs.probs.to_vec());
    dlogits[gold.index()] -= 1.0;
    grad.w += &dlogits.view().insert_axis(ndarray::Axis(1)).dot(&fwd.pooled.view().insert_axis(ndarray::Axis(0)));
    grad.b += &dlogits;
    if fwd.hs.nrows() == 0 {
        return;
    }
    let dpooled = p.w.t().dot(&dlogits);
    let dalpha = fwd.hs.dot(&dpooled);
    let dscore = &fwd.alpha * &(&dalpha - fwd.alpha.dot(&dalpha));
    // dh_t = α_t dpooled + dscore_t (M e)
    let mut dhs = fwd.alpha.view().insert_axis(ndarray::Axis(1)).dot(&dpooled.view().insert_axis(ndarray::Axis(0)));
    dhs += &dscore.view().insert_axis(ndarray::Axis(1)).dot(&fwd.me.view().insert_axis(ndarray::Axis(0)));
    let dme = fwd.hs.t().dot(&dscore);
    grad.attention += &dme.view().insert_axis(ndarray::Axis(1)).dot(&target.insert_axis(ndarray::Axis(0)));
    for l in (0..p.layers.len()).rev() {
        let (f, b) = &p.layers[l];
        let hd = f.hidden();
        let (gf, gb) = &mut grad.layers[l];
        let (cf, cb) = &fwd.caches[l];
        let dxf = lstm_backward(f, cf, dhs.slice(s![.., ..hd]), gf);
        let dxb = lstm_backward(b, cb, dhs.slice(s![.., hd..]), gb);
        dhs = dxf + dxb;
    }
}

/// BiLSTM with target-conditioned attention over the target instance's words.
#[derive(Clone)]
pub struct Tan {
    pub config: TanConfig,
    pub params: TanParams,
    embeddings: Arc<StaticEmbeddings>,
    segmenter: Arc<dyn Segmenter>,
    target: Array1<f64>,
}

pub const TAN_FAMILY: &str = "tan";

impl Tan {
    pub fn new(
        config: TanConfig,
        embeddings: Arc<StaticEmbeddings>,
        segmenter: Arc<dyn Segmenter>,
    ) -> Result<Tan, ModelError> {
        if config.hidden == 0 || config.layers == 0 || config.max_words == 0 {
            return Err(ModelError::Config("tan: hidden, layers and max_words must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let params = TanParams::init(embeddings.dim, config.hidden, config.layers, &mut rng);
        let mut m = Tan { config, params, embeddings, segmenter, target: Array1::zeros(0) };
        m.target = m.target_vector()?;
        Ok(m)
    }

    fn target_vector(&self) -> Result<Array1<f64>, ModelError> {
        let words = self.segmenter.segment(&self.config.target_phrase).map_err(|e| ModelError::Other(e.to_string()))?;
        let known: Vec<&str> =
            words.iter().map(|w| w.text.as_str()).filter(|w| self.embeddings.lookup(w).is_some()).collect();
        if known.is_empty() {
            log::warn!(
                "tan: no word of target phrase {:?} has an embedding; attention is uniform",
                self.config.target_phrase
            );
            return Ok(Array1::zeros(self.embeddings.dim));
        }
        let rows = self.embeddings.rows(known.iter().copied());
        Ok(rows.mean_axis(ndarray::Axis(0)).expect("non-empty"))
    }

    pub fn target(&self) -> ArrayView1<'_, f64> {
        self.target.view()
    }

    pub fn represent(&self, text: &str) -> Result<Array2<f64>, ModelError> {
        let words = self.segmenter.segment(text).map_err(|e| ModelError::Other(e.to_string()))?;
        Ok(self.embeddings.rows(words.iter().take(self.config.max_words).map(|w| w.text.as_str())))
    }

    pub fn predict_text(&self, text: &str) -> Result<StanceDistribution, ModelError> {
        self.predict_input(&self.represent(text)?)
    }

    /// Attention weights over the (cut) words of `text`.
    pub fn attention(&self, text: &str) -> Result<Vec<f64>, ModelError> {
        Ok(tan_forward(&self.params, self.represent(text)?.view(), self.target.view()).alpha.to_vec())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(TAN_FAMILY, serde_json::to_value(&self.config).expect("serializes"));
        c.header.hidden_size = Some(self.embeddings.dim);
        c.header.extra = serde_json::json!({ "words": self.embeddings.words(), "segmenter": self.segmenter.name(), "segmenter_spec": self.segmenter.spec() });
        for ((name, shape), data) in self.params.names().into_iter().zip(self.params.tensors()) {
            c.push(&name, &shape, data);
        }
        let v = &self.embeddings.vectors;
        c.push("embeddings", &[v.nrows(), v.ncols()], v.as_slice().expect("standard layout"));
        c
    }

    pub fn from_checkpoint(c: &Checkpoint, segmenter: Arc<dyn Segmenter>) -> Result<Tan, ModelError> {
        c.expect_family(TAN_FAMILY)?;
        let corrupt = |e: serde_json::Error| CheckpointError::Corrupt(e.to_string());
        let config: TanConfig = serde_json::from_value(c.header.config.clone()).map_err(corrupt)?;
        let words: Vec<String> = serde_json::from_value(c.header.extra["words"].clone()).map_err(corrupt)?;
        let (shape, data) = c.tensor("embeddings")?;
        if shape.len() != 2 || shape[0] != words.len() {
            return Err(CheckpointError::Corrupt("embedding table shape".into()).into());
        }
        let vectors = Array2::from_shape_vec((shape[0], shape[1]), data.to_vec()).expect("shape checked");
        let emb = StaticEmbeddings::new(words, vectors).map_err(|e| ModelError::Other(e.to_string()))?;
        let mut m = Tan::new(config, Arc::new(emb), segmenter)?;
        let names = m.params.names();
        for ((name, shape), dst) in names.into_iter().zip(m.params.tensors_mut()) {
            dst.copy_from_slice(c.tensor_shaped(&name, &shape)?);
        }
        Ok(m)
    }
}

impl StancePredictor for Tan {
    fn predict_branch(&self, b: &SubBranch) -> Result<StanceDistribution, ModelError> {
        self.predict_text(&b.target().text)
    }
}

impl Trainable for Tan {
    type Input = Array2<f64>;

    fn prepare(&self, b: &SubBranch) -> Result<Array2<f64>, ModelError> {
        self.represent(&b.target().text)
    }

    fn predict_input(&self, x: &Array2<f64>) -> Result<StanceDistribution, ModelError> {
        Ok(tan_forward(&self.params, x.view(), self.target.view()).probs)
    }

    fn param_groups(&self) -> Vec<ParamGroup> {
        vec![ParamGroup::Head; self.params.tensors().len()]
    }

    fn parameters(&self) -> Vec<&[f64]> {
        self.params.tensors()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.params.tensors_mut()
    }

    fn gradient(
        &self,
        x: &Array2<f64>,
        gold: Stance,
        _rng: &mut dyn RngCore,
        grads: &mut [Vec<f64>],
    ) -> Result<f64, ModelError> {
        let fwd = tan_forward(&self.params, x.view(), self.target.view());
        let h = self.config.hidden;
        let mut g = TanParams::zeros(self.embeddings.dim, h, self.config.layers);
        tan_backward(&self.params, &fwd, self.target.view(), gold, &mut g);
        for (dst, src) in grads.iter_mut().zip(g.tensors()) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
        Ok(cross_entropy(&fwd.probs, gold))
    }
}
