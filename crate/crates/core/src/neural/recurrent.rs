//! GRU / LSTM layers over time-major sequence batches, and the three
//! aggregations (last hidden state, attention, max pooling).
//!
//! GRU, gate order `r, z, n`:
//! `r = σ(x W_r + b_xr + h U_r + b_hr)`, `z` likewise,
//! `n = tanh(x W_n + b_xn + r ⊙ (h U_n + b_hn))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
//!
//! LSTM, gate order `i, f, g, o`, one bias per gate:
//! `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`.

use ndarray::{s, Array2, ArrayView2};

use super::dense::{add_bias, column_sums, dropout_mask};
use super::model::{Aggregation, CellKind, RnnConfig};
use super::{sigmoid, Params};
use crate::error::{ensure_dim, Result};
use crate::rng::Stream;
use crate::Real;

pub struct GruWeights<'a, F> {
    /// `in × 3H`
    pub wx: &'a Array2<F>,
    /// `H × 3H`
    pub wh: &'a Array2<F>,
    pub bx: &'a Array2<F>,
    pub bh: &'a Array2<F>,
}

pub struct LstmWeights<'a, F> {
    /// `in × 4H`
    pub wx: &'a Array2<F>,
    /// `H × 4H`
    pub wh: &'a Array2<F>,
    pub b: &'a Array2<F>,
}

/// Gate activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
struct StepTape<F> {
    h_prev: Array2<F>,
    /// GRU `[r z n]`, LSTM `[i f g o]`.
    gates: Array2<F>,
    /// GRU: `h U_n + b_hn`. LSTM: previous cell state.
    aux: Array2<F>,
    /// LSTM only: `tanh(c')`.
    tanh_c: Option<Array2<F>>,
}

fn gru_step<F: Real>(
    xw: ArrayView2<F>,
    h_prev: &Array2<F>,
    wh: &Array2<F>,
    bh: &Array2<F>,
) -> (Array2<F>, StepTape<F>) {
    let (b, hd) = h_prev.dim();
    let mut hw = h_prev.dot(wh);
    add_bias(&mut hw, bh);
    let mut gates = Array2::zeros((b, 3 * hd));
    let mut hn = Array2::zeros((b, hd));
    let mut h = Array2::zeros((b, hd));
    for i in 0..b {
        for j in 0..hd {
            let r = sigmoid(xw[[i, j]] + hw[[i, j]]);
            let z = sigmoid(xw[[i, hd + j]] + hw[[i, hd + j]]);
            let hnv = hw[[i, 2 * hd + j]];
            let n = (xw[[i, 2 * hd + j]] + r * hnv).tanh();
            gates[[i, j]] = r;
            gates[[i, hd + j]] = z;
            gates[[i, 2 * hd + j]] = n;
            hn[[i, j]] = hnv;
            h[[i, j]] = (F::one() - z) * n + z * h_prev[[i, j]];
        }
    }
    let tape = StepTape {
        h_prev: h_prev.clone(),
        gates,
        aux: hn,
        tanh_c: None,
    };
    (h, tape)
}

fn lstm_step<F: Real>(
    xw: ArrayView2<F>,
    h_prev: &Array2<F>,
    c_prev: &Array2<F>,
    wh: &Array2<F>,
) -> (Array2<F>, Array2<F>, StepTape<F>) {
    let (b, hd) = h_prev.dim();
    let mut a = h_prev.dot(wh);
    a += &xw;
    let mut gates = Array2::zeros((b, 4 * hd));
    let mut c = Array2::zeros((b, hd));
    let mut tc = Array2::zeros((b, hd));
    let mut h = Array2::zeros((b, hd));
    for i in 0..b {
        for j in 0..hd {
            let ig = sigmoid(a[[i, j]]);
            let fg = sigmoid(a[[i, hd + j]]);
            let gg = a[[i, 2 * hd + j]].tanh();
            let og = sigmoid(a[[i, 3 * hd + j]]);
            gates[[i, j]] = ig;
            gates[[i, hd + j]] = fg;
            gates[[i, 2 * hd + j]] = gg;
            gates[[i, 3 * hd + j]] = og;
            let cv = fg * c_prev[[i, j]] + ig * gg;
            let t = cv.tanh();
            c[[i, j]] = cv;
            tc[[i, j]] = t;
            h[[i, j]] = og * t;
        }
    }
    let tape = StepTape {
        h_prev: h_prev.clone(),
        gates,
        aux: c_prev.clone(),
        tanh_c: Some(tc),
    };
    (h, c, tape)
}

/// One GRU step on a batch: `x_t` is `B × in`, `h` is `B × H`.
pub fn gru_cell<F: Real>(
    x_t: ArrayView2<F>,
    h: ArrayView2<F>,
    w: &GruWeights<F>,
) -> Result<Array2<F>> {
    ensure_dim(w.wx.nrows(), x_t.ncols())?;
    ensure_dim(w.wh.nrows(), h.ncols())?;
    let mut xw = x_t.dot(w.wx);
    add_bias(&mut xw, w.bx);
    Ok(gru_step(xw.view(), &h.to_owned(), w.wh, w.bh).0)
}

/// One LSTM step on a batch; returns `(h', c')`.
pub fn lstm_cell<F: Real>(
    x_t: ArrayView2<F>,
    h: ArrayView2<F>,
    c: ArrayView2<F>,
    w: &LstmWeights<F>,
) -> Result<(Array2<F>, Array2<F>)> {
    ensure_dim(w.wx.nrows(), x_t.ncols())?;
    ensure_dim(w.wh.nrows(), h.ncols())?;
    ensure_dim(h.len(), c.len())?;
    let mut xw = x_t.dot(w.wx);
    add_bias(&mut xw, w.b);
    let (h, c, _) = lstm_step(xw.view(), &h.to_owned(), &c.to_owned(), w.wh);
    Ok((h, c))
}

#[derive(Debug, Clone)]
struct DirTape<F> {
    /// In processing order.
    steps: Vec<StepTape<F>>,
}

fn rows<F>(a: &Array2<F>, t: usize, b: usize) -> ArrayView2<'_, F> {
    a.slice(s![t * b..(t + 1) * b, ..])
}

fn order(tau: usize, reverse: bool) -> impl DoubleEndedIterator<Item = usize> + ExactSizeIterator {
    (0..tau).map(move |k| if reverse { tau - 1 - k } else { k })
}

fn dir_forward<F: Real>(
    cell: CellKind,
    p: &[Array2<F>],
    x: &Array2<F>,
    tau: usize,
    b: usize,
    reverse: bool,
) -> (Array2<F>, DirTape<F>) {
    let hd = p[1].nrows();
    let mut xw = x.dot(&p[0]);
    add_bias(&mut xw, &p[2]);
    let mut out = Array2::zeros((tau * b, hd));
    let mut h = Array2::zeros((b, hd));
    let mut c = Array2::zeros((b, hd));
    let mut steps = Vec::with_capacity(tau);
    for t in order(tau, reverse) {
        let tape = match cell {
            CellKind::Gru => {
                let (hn, tape) = gru_step(rows(&xw, t, b), &h, &p[1], &p[3]);
                h = hn;
                tape
            }
            CellKind::Lstm => {
                let (hn, cn, tape) = lstm_step(rows(&xw, t, b), &h, &c, &p[1]);
                h = hn;
                c = cn;
                tape
            }
        };
        out.slice_mut(s![t * b..(t + 1) * b, ..]).assign(&h);
        steps.push(tape);
    }
    (out, DirTape { steps })
}

/// Accumulates into `g` (same layout as `p`) and returns `∂/∂x`.
#[allow(clippy::too_many_arguments)]
fn dir_backward<F: Real>(
    cell: CellKind,
    p: &[Array2<F>],
    g: &mut [Array2<F>],
    tape: &DirTape<F>,
    x: &Array2<F>,
    dout: ArrayView2<F>,
    tau: usize,
    b: usize,
    reverse: bool,
) -> Array2<F> {
    let hd = p[1].nrows();
    let width = p[1].ncols();
    let mut dxw = Array2::<F>::zeros((tau * b, width));
    let mut dh = Array2::<F>::zeros((b, hd));
    let mut dc = Array2::<F>::zeros((b, hd));
    let one = F::one();
    for (k, t) in order(tau, reverse).enumerate().rev() {
        let st = &tape.steps[k];
        dh += &dout.slice(s![t * b..(t + 1) * b, ..]);
        let mut dhw = Array2::<F>::zeros((b, width));
        let mut direct = Array2::<F>::zeros((b, hd));
        {
            let mut dx_t = dxw.slice_mut(s![t * b..(t + 1) * b, ..]);
            match cell {
                CellKind::Gru => {
                    for i in 0..b {
                        for j in 0..hd {
                            let r = st.gates[[i, j]];
                            let z = st.gates[[i, hd + j]];
                            let n = st.gates[[i, 2 * hd + j]];
                            let dhv = dh[[i, j]];
                            let dn = dhv * (one - z);
                            let dz = dhv * (st.h_prev[[i, j]] - n);
                            direct[[i, j]] = dhv * z;
                            let dan = dn * (one - n * n);
                            let dar = dan * st.aux[[i, j]] * r * (one - r);
                            let daz = dz * z * (one - z);
                            dx_t[[i, j]] = dar;
                            dx_t[[i, hd + j]] = daz;
                            dx_t[[i, 2 * hd + j]] = dan;
                            dhw[[i, j]] = dar;
                            dhw[[i, hd + j]] = daz;
                            dhw[[i, 2 * hd + j]] = dan * r;
                        }
                    }
                }
                CellKind::Lstm => {
                    let tc = st.tanh_c.as_ref().expect("lstm tape");
                    for i in 0..b {
                        for j in 0..hd {
                            let ig = st.gates[[i, j]];
                            let fg = st.gates[[i, hd + j]];
                            let gg = st.gates[[i, 2 * hd + j]];
                            let og = st.gates[[i, 3 * hd + j]];
                            let t_c = tc[[i, j]];
                            let dhv = dh[[i, j]];
                            let dct = dc[[i, j]] + dhv * og * (one - t_c * t_c);
                            let d_o = dhv * t_c;
                            let di = dct * gg;
                            let df = dct * st.aux[[i, j]];
                            let dg = dct * ig;
                            dc[[i, j]] = dct * fg;
                            let vals = [
                                di * ig * (one - ig),
                                df * fg * (one - fg),
                                dg * (one - gg * gg),
                                d_o * og * (one - og),
                            ];
                            for (q, v) in vals.into_iter().enumerate() {
                                dx_t[[i, q * hd + j]] = v;
                                dhw[[i, q * hd + j]] = v;
                            }
                        }
                    }
                }
            }
        }
        g[1] += &st.h_prev.t().dot(&dhw);
        if cell == CellKind::Gru {
            g[3] += &column_sums(&dhw);
        }
        dh = dhw.dot(&p[1].t());
        if cell == CellKind::Gru {
            dh += &direct;
        }
    }
    g[0] += &x.t().dot(&dxw);
    g[2] += &column_sums(&dxw);
    dxw.dot(&p[0].t())
}

#[derive(Debug, Clone)]
struct LayerTape<F> {
    input: Array2<F>,
    mask: Option<Array2<F>>,
    dirs: Vec<DirTape<F>>,
}

#[derive(Debug, Clone)]
pub(crate) struct RnnTape<F> {
    layers: Vec<LayerTape<F>>,
    tau: usize,
    batch: usize,
}

pub(crate) fn tensors_per_direction(cell: CellKind) -> usize {
    match cell {
        CellKind::Gru => 4,
        CellKind::Lstm => 3,
    }
}

/// Stacked (optionally bidirectional) recurrent layers. `tensors` holds the
/// recurrent parameters only. Returns the top layer's `(τB) × (H·dirs)`
/// output, forward direction in the first `H` columns.
pub(crate) fn rnn_forward<F: Real>(
    cfg: &RnnConfig,
    tensors: &[Array2<F>],
    x: Array2<F>,
    batch: usize,
    mut rng: Option<&mut Stream>,
) -> (Array2<F>, RnnTape<F>) {
    let tau = x.nrows() / batch;
    let dirs = cfg.directions();
    let per = tensors_per_direction(cfg.cell);
    let mut tape = RnnTape {
        layers: Vec::with_capacity(cfg.layers),
        tau,
        batch,
    };
    let mut input = x;
    for l in 0..cfg.layers {
        let mask = match rng.as_deref_mut() {
            Some(r) if l > 0 && cfg.dropout > 0.0 => {
                Some(dropout_mask(input.dim(), cfg.dropout, r))
            }
            _ => None,
        };
        if let Some(m) = &mask {
            input *= m;
        }
        let mut out = Array2::zeros((tau * batch, cfg.hidden_dim * dirs));
        let mut dtapes = Vec::with_capacity(dirs);
        for d in 0..dirs {
            let p = &tensors[(l * dirs + d) * per..(l * dirs + d + 1) * per];
            let (o, dt) = dir_forward(cfg.cell, p, &input, tau, batch, d == 1);
            out.slice_mut(s![.., d * cfg.hidden_dim..(d + 1) * cfg.hidden_dim])
                .assign(&o);
            dtapes.push(dt);
        }
        tape.layers.push(LayerTape {
            input,
            mask,
            dirs: dtapes,
        });
        input = out;
    }
    (input, tape)
}

pub(crate) fn rnn_backward<F: Real>(
    cfg: &RnnConfig,
    tensors: &[Array2<F>],
    grads: &mut [Array2<F>],
    tape: &RnnTape<F>,
    dout: Array2<F>,
) {
    let dirs = cfg.directions();
    let per = tensors_per_direction(cfg.cell);
    let hd = cfg.hidden_dim;
    let mut d = dout;
    for l in (0..cfg.layers).rev() {
        let lt = &tape.layers[l];
        let mut dx = Array2::<F>::zeros(lt.input.dim());
        for dir in 0..dirs {
            let range = (l * dirs + dir) * per..(l * dirs + dir + 1) * per;
            let dx_dir = dir_backward(
                cfg.cell,
                &tensors[range.clone()],
                &mut grads[range],
                &lt.dirs[dir],
                &lt.input,
                d.slice(s![.., dir * hd..(dir + 1) * hd]),
                tape.tau,
                tape.batch,
                dir == 1,
            );
            dx += &dx_dir;
        }
        if l == 0 {
            return;
        }
        if let Some(m) = &lt.mask {
            dx *= m;
        }
        d = dx;
    }
}

#[derive(Debug, Clone)]
pub(crate) enum AggTape<F> {
    Last,
    Max { arg: Vec<usize> },
    Attention { alpha: Array2<F>, v: Array2<F> },
}

/// Aggregates `(τB) × D` hidden reps into `B × D`. `att` is
/// `[W (D × A), b (1 × A), c (A × 1)]` for attention, empty otherwise.
pub(crate) fn aggregate_forward<F: Real>(
    aggregation: Aggregation,
    bidirectional: bool,
    u: &Array2<F>,
    tau: usize,
    batch: usize,
    att: &[Array2<F>],
) -> (Array2<F>, AggTape<F>) {
    let dim = u.ncols();
    match aggregation {
        Aggregation::LastHidden => {
            let mut a = Array2::zeros((batch, dim));
            let hd = if bidirectional { dim / 2 } else { dim };
            a.slice_mut(s![.., ..hd])
                .assign(&u.slice(s![(tau - 1) * batch..tau * batch, ..hd]));
            if bidirectional {
                a.slice_mut(s![.., hd..])
                    .assign(&u.slice(s![..batch, hd..]));
            }
            (a, AggTape::Last)
        }
        Aggregation::MaxPool => {
            let mut a = u.slice(s![..batch, ..]).to_owned();
            let mut arg = vec![0usize; batch * dim];
            for t in 1..tau {
                for i in 0..batch {
                    for j in 0..dim {
                        let v = u[[t * batch + i, j]];
                        if v > a[[i, j]] {
                            a[[i, j]] = v;
                            arg[i * dim + j] = t;
                        }
                    }
                }
            }
            (a, AggTape::Max { arg })
        }
        Aggregation::Attention { .. } => {
            let mut v = u.dot(&att[0]);
            add_bias(&mut v, &att[1]);
            v.mapv_inplace(|z| z.tanh());
            let scores = v.dot(&att[2]);
            let mut alpha = Array2::zeros((tau, batch));
            for i in 0..batch {
                let m = (0..tau)
                    .map(|t| scores[[t * batch + i, 0]])
                    .fold(F::neg_infinity(), F::max);
                let mut total = F::zero();
                for t in 0..tau {
                    let e = (scores[[t * batch + i, 0]] - m).exp();
                    alpha[[t, i]] = e;
                    total += e;
                }
                for t in 0..tau {
                    alpha[[t, i]] /= total;
                }
            }
            let mut a = Array2::zeros((batch, dim));
            for t in 0..tau {
                for i in 0..batch {
                    let w = alpha[[t, i]];
                    let src = u.row(t * batch + i);
                    a.row_mut(i).scaled_add(w, &src);
                }
            }
            (a, AggTape::Attention { alpha, v })
        }
    }
}

pub(crate) fn aggregate_backward<F: Real>(
    bidirectional: bool,
    u: &Array2<F>,
    tau: usize,
    batch: usize,
    att: &[Array2<F>],
    att_grads: &mut [Array2<F>],
    tape: &AggTape<F>,
    da: &Array2<F>,
) -> Array2<F> {
    let dim = u.ncols();
    let mut du = Array2::<F>::zeros(u.dim());
    match tape {
        AggTape::Last => {
            let hd = if bidirectional { dim / 2 } else { dim };
            du.slice_mut(s![(tau - 1) * batch..tau * batch, ..hd])
                .assign(&da.slice(s![.., ..hd]));
            if bidirectional {
                du.slice_mut(s![..batch, hd..])
                    .assign(&da.slice(s![.., hd..]));
            }
        }
        AggTape::Max { arg } => {
            for i in 0..batch {
                for j in 0..dim {
                    du[[arg[i * dim + j] * batch + i, j]] = da[[i, j]];
                }
            }
        }
        AggTape::Attention { alpha, v } => {
            let mut dalpha = Array2::<F>::zeros((tau, batch));
            for t in 0..tau {
                for i in 0..batch {
                    let r = t * batch + i;
                    dalpha[[t, i]] = u.row(r).dot(&da.row(i));
                    du.row_mut(r).scaled_add(alpha[[t, i]], &da.row(i));
                }
            }
            let mut ds = Array2::<F>::zeros((tau * batch, 1));
            for i in 0..batch {
                let mean: F = (0..tau).map(|t| alpha[[t, i]] * dalpha[[t, i]]).sum();
                for t in 0..tau {
                    ds[[t * batch + i, 0]] = alpha[[t, i]] * (dalpha[[t, i]] - mean);
                }
            }
            att_grads[2] += &v.t().dot(&ds);
            let mut dz = ds.dot(&att[2].t());
            ndarray::Zip::from(&mut dz)
                .and(v)
                .for_each(|g, &vv| *g *= F::one() - vv * vv);
            att_grads[0] += &u.t().dot(&dz);
            att_grads[1] += &column_sums(&dz);
            du += &dz.dot(&att[0].t());
        }
    }
    du
}

/// Top-layer hidden representations of a sequence batch.
#[derive(Debug, Clone)]
pub struct RnnOutput<F> {
    /// `(τB) × (H·dirs)`, forward direction first.
    pub hidden: Array2<F>,
    pub steps: usize,
    pub batch: usize,
}

impl<F: Real> RnnOutput<F> {
    /// `u_t` of sample `i`.
    pub fn at(&self, t: usize, i: usize) -> ndarray::ArrayView1<'_, F> {
        self.hidden.row(t * self.batch + i)
    }
}

/// Runs the recurrent stack of a network on a `(τB) × d` batch.
pub fn run_rnn<F: Real>(
    cfg: &RnnConfig,
    params: &Params<F>,
    seq: ArrayView2<F>,
    batch: usize,
    rng: Option<&mut Stream>,
) -> Result<RnnOutput<F>> {
    cfg.validate()?;
    ensure_dim(cfg.input_dim, seq.ncols())?;
    if batch == 0 || seq.nrows() % batch != 0 || seq.nrows() == 0 {
        return Err(crate::Error::validation(
            "sequence rows must be a positive multiple of the batch",
        ));
    }
    let n = cfg.recurrent_tensor_count();
    let (hidden, _) = rnn_forward(cfg, &params.tensors[..n], seq.to_owned(), batch, rng);
    Ok(RnnOutput {
        steps: seq.nrows() / batch,
        batch,
        hidden,
    })
}

/// Aggregation vector `𝒂` for each sample of an [`RnnOutput`].
pub fn aggregate<F: Real>(cfg: &RnnConfig, params: &Params<F>, reps: &RnnOutput<F>) -> Array2<F> {
    let n = cfg.recurrent_tensor_count();
    let att = &params.tensors[n..n + cfg.aggregation_tensor_count()];
    aggregate_forward(
        cfg.aggregation,
        cfg.bidirectional,
        &reps.hidden,
        reps.steps,
        reps.batch,
        att,
    )
    .0
}

/// Attention weights `α_t` (`τ × B`) for an [`RnnOutput`].
pub fn attention_weights<F: Real>(
    cfg: &RnnConfig,
    params: &Params<F>,
    reps: &RnnOutput<F>,
) -> Option<Array2<F>> {
    let n = cfg.recurrent_tensor_count();
    let att = &params.tensors[n..n + cfg.aggregation_tensor_count()];
    match aggregate_forward(
        cfg.aggregation,
        cfg.bidirectional,
        &reps.hidden,
        reps.steps,
        reps.batch,
        att,
    )
    .1
    {
        AggTape::Attention { alpha, .. } => Some(alpha),
        _ => None,
    }
}
