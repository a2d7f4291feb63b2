use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis, NdFloat};
use rand::{Rng, RngCore};

use super::ModelError;
use crate::stance::{Stance, StanceDistribution, NUM_CLASSES};

/// `n` filters of window size `k` over `h`-dimensional rows.
///
/// Weights are stored `(n, k, h)`: `weights[[f, r, c]]` multiplies column
/// `c` of the `r`-th row inside a window.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBank<T = f64> {
    pub weights: Array3<T>,
    pub bias: Array1<T>,
}

impl<T: NdFloat> ConvBank<T> {
    pub fn zeros(n: usize, k: usize, h: usize) -> ConvBank<T> {
        ConvBank { weights: Array3::zeros((n, k, h)), bias: Array1::zeros(n) }
    }

    pub fn n(&self) -> usize {
        self.weights.dim().0
    }

    pub fn k(&self) -> usize {
        self.weights.dim().1
    }

    pub fn h(&self) -> usize {
        self.weights.dim().2
    }
}

/// Which window won the max-pool for each feature, and whether it was
/// past the ReLU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvTrace {
    pub argmax: Vec<usize>,
    pub active: Vec<bool>,
}

/// Windowed filters, ReLU and max-pool over time.
///
/// Features are laid out bank by bank, filter by filter.
pub fn conv_features<T: NdFloat>(rep: ArrayView2<'_, T>, banks: &[ConvBank<T>]) -> Result<Array1<T>, ModelError> {
    conv_forward(rep, banks).map(|(z, _)| z)
}

pub fn conv_forward<T: NdFloat>(
    rep: ArrayView2<'_, T>,
    banks: &[ConvBank<T>],
) -> Result<(Array1<T>, ConvTrace), ModelError> {
    let (d, h) = rep.dim();
    let p: usize = banks.iter().map(ConvBank::n).sum();
    let mut z = Array1::zeros(p);
    let mut trace = ConvTrace { argmax: Vec::with_capacity(p), active: Vec::with_capacity(p) };
    let mut j = 0;
    for bank in banks {
        let (n, k) = (bank.n(), bank.k());
        if bank.h() != h || k == 0 || k > d || bank.bias.len() != n {
            return Err(ModelError::ShapeMismatch(format!(
                "filter bank (n={n}, k={k}, h={}) against representation {d}x{h}",
                bank.h()
            )));
        }
        let windows = d - k + 1;
        let mut pre = Array2::from_shape_fn((windows, n), |(_, f)| bank.bias[f]);
        for r in 0..k {
            let wr = bank.weights.index_axis(Axis(1), r);
            pre += &rep.slice(s![r..r + windows, ..]).dot(&wr.t());
        }
        for f in 0..n {
            let col = pre.column(f);
            let mut best = 0;
            for t in 1..windows {
                if col[t] > col[best] {
                    best = t;
                }
            }
            let v = col[best];
            z[j] = if v > T::zero() { v } else { T::zero() };
            trace.argmax.push(best);
            trace.active.push(v > T::zero());
            j += 1;
        }
    }
    Ok((z, trace))
}

/// Accumulate filter gradients and, optionally, `dL/drep` from `dL/dz`.
pub fn conv_backward<T: NdFloat>(
    rep: ArrayView2<'_, T>,
    banks: &[ConvBank<T>],
    trace: &ConvTrace,
    dz: ArrayView1<'_, T>,
    grads: &mut [ConvBank<T>],
    mut drep: Option<&mut Array2<T>>,
) {
    let mut j = 0;
    for (bank, g) in banks.iter().zip(grads.iter_mut()) {
        for f in 0..bank.n() {
            if trace.active[j] {
                let t0 = trace.argmax[j];
                let dzj = dz[j];
                g.bias[f] += dzj;
                for r in 0..bank.k() {
                    let row = rep.row(t0 + r);
                    g.weights.slice_mut(s![f, r, ..]).scaled_add(dzj, &row);
                    if let Some(dr) = drep.as_deref_mut() {
                        dr.row_mut(t0 + r).scaled_add(dzj, &bank.weights.slice(s![f, r, ..]));
                    }
                }
            }
            j += 1;
        }
    }
}

/// Mean of the first `valid_rows` rows; zeros when there are none.
pub fn global_average_pool<T: NdFloat>(rep: ArrayView2<'_, T>, valid_rows: usize) -> Array1<T> {
    let valid = valid_rows.min(rep.nrows());
    if valid == 0 {
        return Array1::zeros(rep.ncols());
    }
    rep.slice(s![..valid, ..]).sum_axis(Axis(0)) / T::from(valid).expect("count fits")
}

/// Fully connected layer onto the three classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T = f64> {
    /// `3 × p`
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: NdFloat> Classifier<T> {
    pub fn zeros(p: usize) -> Classifier<T> {
        Classifier { w: Array2::zeros((NUM_CLASSES, p)), b: Array1::zeros(NUM_CLASSES) }
    }

    pub fn input_len(&self) -> usize {
        self.w.ncols()
    }
}

/// Inverted dropout: each unit kept with probability `1 - rate` and scaled
/// by `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut dyn RngCore) -> Array1<f64> {
    if rate <= 0.0 {
        return Array1::ones(len);
    }
    let keep = 1.0 - rate;
    Array1::from_shape_fn(len, |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

/// Forward pass of the classifier. Returns the distribution and the
/// (possibly dropped-out) features that produced it.
pub fn classify_forward(
    features: ArrayView1<'_, f64>,
    cls: &Classifier,
    mask: Option<&Array1<f64>>,
) -> Result<(StanceDistribution, Array1<f64>), ModelError> {
    if features.len() != cls.input_len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} features against a classifier over {}",
            features.len(),
            cls.input_len()
        )));
    }
    let zhat = match mask {
        Some(m) => &features * m,
        None => features.to_owned(),
    };
    let logits = cls.w.dot(&zhat) + &cls.b;
    Ok((StanceDistribution::from_logits([logits[0], logits[1], logits[2]]), zhat))
}

/// Softmax classifier; dropout is applied only when `training` carries a
/// rate and a random source.
pub fn classify(
    features: ArrayView1<'_, f64>,
    cls: &Classifier,
    training: Option<(f64, &mut dyn RngCore)>,
) -> Result<StanceDistribution, ModelError> {
    let mask = training.map(|(rate, rng)| dropout_mask(features.len(), rate, rng));
    classify_forward(features, cls, mask.as_ref()).map(|(p, _)| p)
}

/// Cross-entropy gradient through softmax and the linear layer. Returns
/// `dL/dfeatures` (before dropout).
pub fn classify_backward(
    zhat: &Array1<f64>,
    mask: Option<&Array1<f64>>,
    probs: &StanceDistribution,
    gold: Stance,
    cls: &Classifier,
    grad: &mut Classifier,
) -> Array1<f64> {
    let mut dlogits = Array1::from(probs.probs.to_vec());
    dlogits[gold.index()] -= 1.0;
    for c in 0..NUM_CLASSES {
        grad.w.row_mut(c).scaled_add(dlogits[c], zhat);
    }
    grad.b += &dlogits;
    let dzhat = cls.w.t().dot(&dlogits);
    match mask {
        Some(m) => dzhat * m,
        None => dzhat,
    }
}

/// Negative log-likelihood of the gold class.
pub fn cross_entropy(probs: &StanceDistribution, gold: Stance) -> f64 {
    -probs.prob(gold).max(f64::MIN_POSITIVE).ln()
}
