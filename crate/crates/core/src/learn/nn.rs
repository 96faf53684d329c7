//! Recurrent conv/MLP network with hand-written backward pass.
//!
//! Architecture: `k x k` valid convolutions (stride 1, ReLU) over an NHWC
//! spatial block, flatten, concatenate the vector features, fully connected
//! ReLU layers, a recurrent cell, then a linear projection to the outputs.
//! All parameters live in one flat `Vec<f64>` so optimizers, clipping,
//! checkpoints and finite-difference checks treat the network uniformly.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Lstm,
    Gru,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Spatial input `[height, width, channels]`; zero channels disables the
    /// convolutional stack.
    pub spatial: [usize; 3],
    pub vector: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub fc: Vec<usize>,
    pub cell: CellKind,
    pub hidden: usize,
    /// Output width; split into heads by the caller.
    pub outputs: usize,
    /// Scale of the uniform initialization of the output layer.
    pub output_init: f64,
}

impl NetSpec {
    pub fn spatial_len(&self) -> usize {
        self.spatial.iter().product()
    }

    /// Recurrent state per actor: `[h, c]` for the LSTM, `[h]` for the GRU.
    pub fn state_len(&self) -> usize {
        match self.cell {
            CellKind::Lstm => 2 * self.hidden,
            CellKind::Gru => self.hidden,
        }
    }

    fn gates(&self) -> usize {
        match self.cell {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    w: usize,
    b: usize,
    cin: usize,
    cout: usize,
    hin: usize,
    win: usize,
    hout: usize,
    wout: usize,
}

#[derive(Clone, Debug)]
struct Dense {
    w: usize,
    b: usize,
    nin: usize,
    nout: usize,
}

#[derive(Clone, Debug)]
struct Cell {
    wx: usize,
    wh: usize,
    bx: usize,
    /// GRU only: the recurrent bias kept separate inside the reset gate.
    bh: usize,
    nin: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    convs: Vec<ConvLayer>,
    fcs: Vec<Dense>,
    cell: Cell,
    head: Dense,
    total: usize,
}

fn build_layout(spec: &NetSpec) -> Layout {
    let mut off = 0;
    let mut take = |n: usize| {
        let o = off;
        off += n;
        o
    };
    let k = spec.kernel;
    let mut convs = Vec::new();
    let [mut h, mut w, mut c] = spec.spatial;
    let mut flat = if c == 0 { 0 } else { h * w * c };
    if c > 0 {
        for &cout in &spec.conv_channels {
            assert!(h >= k && w >= k, "spatial input smaller than the kernel");
            let layer = ConvLayer {
                w: take(k * k * c * cout),
                b: take(cout),
                cin: c,
                cout,
                hin: h,
                win: w,
                hout: h - k + 1,
                wout: w - k + 1,
            };
            h = layer.hout;
            w = layer.wout;
            c = cout;
            convs.push(layer);
        }
        flat = h * w * c;
    }
    let mut nin = flat + spec.vector;
    let mut fcs = Vec::new();
    for &nout in &spec.fc {
        fcs.push(Dense {
            w: take(nin * nout),
            b: take(nout),
            nin,
            nout,
        });
        nin = nout;
    }
    let g = spec.gates() * spec.hidden;
    let cell = Cell {
        wx: take(nin * g),
        wh: take(spec.hidden * g),
        bx: take(g),
        bh: if spec.cell == CellKind::Gru { take(g) } else { usize::MAX },
        nin,
    };
    let head = Dense {
        w: take(spec.hidden * spec.outputs),
        b: take(spec.outputs),
        nin: spec.hidden,
        nout: spec.outputs,
    };
    Layout {
        convs,
        fcs,
        cell,
        head,
        total: off,
    }
}

fn view(p: &[f64], off: usize, r: usize, c: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((r, c), &p[off..off + r * c]).expect("layout")
}

fn view_mut(p: &mut [f64], off: usize, r: usize, c: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((r, c), &mut p[off..off + r * c]).expect("layout")
}

fn add_bias(x: &mut Array2<f64>, b: &[f64]) {
    for mut row in x.rows_mut() {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn add_col_sums(g: &mut [f64], d: &Array2<f64>) {
    for row in d.rows() {
        for (gg, v) in g.iter_mut().zip(row) {
            *gg += v;
        }
    }
}

fn relu(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zero the gradient wherever the (post-ReLU) activation is zero.
fn relu_back(d: &mut Array2<f64>, out: &Array2<f64>) {
    ndarray::Zip::from(d).and(out).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `[frames * hout * wout, k * k * cin]` patch matrix of an NHWC batch.
fn im2col(input: &[f64], frames: usize, l: &ConvLayer, k: usize) -> Array2<f64> {
    let row_len = k * k * l.cin;
    let mut out = Array2::zeros((frames * l.hout * l.wout, row_len));
    let buf = out.as_slice_mut().expect("contiguous");
    let span = k * l.cin;
    let mut r = 0;
    for f in 0..frames {
        for i in 0..l.hout {
            for j in 0..l.wout {
                let dst = &mut buf[r * row_len..(r + 1) * row_len];
                for ki in 0..k {
                    let src = ((f * l.hin + i + ki) * l.win + j) * l.cin;
                    dst[ki * span..(ki + 1) * span].copy_from_slice(&input[src..src + span]);
                }
                r += 1;
            }
        }
    }
    out
}

fn col2im(d_patches: &Array2<f64>, frames: usize, l: &ConvLayer, k: usize) -> Vec<f64> {
    let row_len = k * k * l.cin;
    let mut out = vec![0.0; frames * l.hin * l.win * l.cin];
    let buf = d_patches.as_slice().expect("contiguous");
    let span = k * l.cin;
    let mut r = 0;
    for f in 0..frames {
        for i in 0..l.hout {
            for j in 0..l.wout {
                let src = &buf[r * row_len..(r + 1) * row_len];
                for ki in 0..k {
                    let dst = ((f * l.hin + i + ki) * l.win + j) * l.cin;
                    for (o, v) in out[dst..dst + span].iter_mut().zip(&src[ki * span..(ki + 1) * span]) {
                        *o += v;
                    }
                }
                r += 1;
            }
        }
    }
    out
}

/// A batch of `batch` sequences of `steps` frames. Frame rows are ordered
/// `b * steps + t`.
#[derive(Clone, Copy, Debug)]
pub struct SeqInput<'a> {
    pub batch: usize,
    pub steps: usize,
    pub spatial: &'a [f64],
    pub vector: &'a [f64],
    /// Initial recurrent state, `batch * state_len`.
    pub state: &'a [f64],
}

struct StepCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// LSTM: activated gates `[i, f, g, o]`; GRU: activated `[r, z, n]`.
    gates: Array2<f64>,
    /// LSTM: new cell state; GRU: `h W_hn + b_hn`.
    aux: Array2<f64>,
}

pub struct Forward {
    /// `[batch * steps, outputs]`.
    pub out: Array2<f64>,
    /// Recurrent state after the last step, `batch * state_len`.
    pub final_state: Vec<f64>,
    batch: usize,
    steps: usize,
    patches: Vec<Array2<f64>>,
    conv_out: Vec<Array2<f64>>,
    fc_in: Vec<Array2<f64>>,
    fc_out: Vec<Array2<f64>>,
    cells: Vec<StepCache>,
    hs: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub spec: NetSpec,
    pub params: Vec<f64>,
}

impl Net {
    pub fn new(spec: NetSpec, seed: u64) -> Self {
        let layout = build_layout(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        let mut uniform = |p: &mut [f64], off: usize, n: usize, a: f64| {
            for v in &mut p[off..off + n] {
                *v = rng.random_range(-a..=a);
            }
        };
        let k = spec.kernel;
        for l in &layout.convs {
            let fan_in = (k * k * l.cin) as f64;
            uniform(&mut params, l.w, k * k * l.cin * l.cout, (6.0 / fan_in).sqrt());
        }
        for l in &layout.fcs {
            uniform(&mut params, l.w, l.nin * l.nout, (6.0 / l.nin as f64).sqrt());
        }
        let g = spec.gates() * spec.hidden;
        let a = 1.0 / (spec.hidden as f64).sqrt();
        uniform(&mut params, layout.cell.wx, layout.cell.nin * g, a);
        uniform(&mut params, layout.cell.wh, spec.hidden * g, a);
        if spec.cell == CellKind::Lstm {
            // forget-gate bias 1
            let hsz = spec.hidden;
            params[layout.cell.bx + hsz..layout.cell.bx + 2 * hsz].fill(1.0);
        }
        uniform(&mut params, layout.head.w, spec.hidden * spec.outputs, spec.output_init);
        Self { spec, params }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layout(&self) -> Layout {
        build_layout(&self.spec)
    }

    pub fn zero_state(&self, batch: usize) -> Vec<f64> {
        vec![0.0; batch * self.spec.state_len()]
    }

    pub fn forward(&self, input: SeqInput<'_>) -> Forward {
        let spec = &self.spec;
        let lay = self.layout();
        let p = &self.params;
        let (bsz, steps) = (input.batch, input.steps);
        let n = bsz * steps;
        assert_eq!(input.vector.len(), n * spec.vector, "vector input size");
        assert_eq!(input.state.len(), bsz * spec.state_len(), "state size");

        let mut patches = Vec::new();
        let mut conv_out: Vec<Array2<f64>> = Vec::new();
        let mut flat: Option<Array2<f64>> = None;
        if spec.spatial[2] > 0 {
            assert_eq!(input.spatial.len(), n * spec.spatial_len(), "spatial input size");
            let mut cur: Vec<f64> = Vec::new();
            for (li, l) in lay.convs.iter().enumerate() {
                let src: &[f64] = if li == 0 { input.spatial } else { &cur };
                let cols = im2col(src, n, l, spec.kernel);
                let mut y = cols.dot(&view(p, l.w, spec.kernel * spec.kernel * l.cin, l.cout));
                add_bias(&mut y, &p[l.b..l.b + l.cout]);
                relu(&mut y);
                cur = y.as_slice().expect("contiguous").to_vec();
                patches.push(cols);
                conv_out.push(y);
            }
            let width = if lay.convs.is_empty() { spec.spatial_len() } else { cur.len() / n };
            let data = if lay.convs.is_empty() { input.spatial.to_vec() } else { cur };
            flat = Some(Array2::from_shape_vec((n, width), data).expect("flatten"));
        }
        let vec_in = ArrayView2::from_shape((n, spec.vector), input.vector).expect("vector");
        let mut x = match flat {
            Some(f) => ndarray::concatenate(Axis(1), &[f.view(), vec_in]).expect("concat"),
            None => vec_in.to_owned(),
        };

        let mut fc_in = Vec::new();
        let mut fc_out = Vec::new();
        for l in &lay.fcs {
            let mut y = x.dot(&view(p, l.w, l.nin, l.nout));
            add_bias(&mut y, &p[l.b..l.b + l.nout]);
            relu(&mut y);
            fc_in.push(x);
            x = y.clone();
            fc_out.push(y);
        }

        // recurrent cell over time
        let hsz = spec.hidden;
        let g = spec.gates() * hsz;
        let d = lay.cell.nin;
        let x3 = x.into_shape_with_order((bsz, steps, d)).expect("seq");
        let sl = spec.state_len();
        let state = ArrayView2::from_shape((bsz, sl), input.state).expect("state");
        let mut h = state.slice(s![.., 0..hsz]).to_owned();
        let mut c = match spec.cell {
            CellKind::Lstm => state.slice(s![.., hsz..2 * hsz]).to_owned(),
            CellKind::Gru => Array2::zeros((bsz, 0)),
        };
        let wx = view(p, lay.cell.wx, d, g);
        let wh = view(p, lay.cell.wh, hsz, g);
        let bx = &p[lay.cell.bx..lay.cell.bx + g];
        let mut hs = Array2::zeros((n, hsz));
        let mut cells = Vec::with_capacity(steps);
        for t in 0..steps {
            let xt = x3.slice(s![.., t, ..]).to_owned();
            let mut gx = xt.dot(&wx);
            add_bias(&mut gx, bx);
            let gh = h.dot(&wh);
            let (gates, aux, h_new, c_new) = match spec.cell {
                CellKind::Lstm => {
                    let mut z = gx + &gh;
                    for mut row in z.rows_mut() {
                        for j in 0..hsz {
                            row[j] = sigmoid(row[j]);
                            row[hsz + j] = sigmoid(row[hsz + j]);
                            row[2 * hsz + j] = row[2 * hsz + j].tanh();
                            row[3 * hsz + j] = sigmoid(row[3 * hsz + j]);
                        }
                    }
                    let mut cn = Array2::zeros((bsz, hsz));
                    let mut hn = Array2::zeros((bsz, hsz));
                    for b in 0..bsz {
                        for j in 0..hsz {
                            let (i_, f_, g_, o_) = (z[[b, j]], z[[b, hsz + j]], z[[b, 2 * hsz + j]], z[[b, 3 * hsz + j]]);
                            let cv = f_ * c[[b, j]] + i_ * g_;
                            cn[[b, j]] = cv;
                            hn[[b, j]] = o_ * cv.tanh();
                        }
                    }
                    (z, cn.clone(), hn, cn)
                }
                CellKind::Gru => {
                    let mut ghb = gh;
                    add_bias(&mut ghb, &p[lay.cell.bh..lay.cell.bh + g]);
                    let mut act = Array2::zeros((bsz, g));
                    let mut hn = Array2::zeros((bsz, hsz));
                    for b in 0..bsz {
                        for j in 0..hsz {
                            let r = sigmoid(gx[[b, j]] + ghb[[b, j]]);
                            let z = sigmoid(gx[[b, hsz + j]] + ghb[[b, hsz + j]]);
                            let nn = (gx[[b, 2 * hsz + j]] + r * ghb[[b, 2 * hsz + j]]).tanh();
                            act[[b, j]] = r;
                            act[[b, hsz + j]] = z;
                            act[[b, 2 * hsz + j]] = nn;
                            hn[[b, j]] = (1.0 - z) * nn + z * h[[b, j]];
                        }
                    }
                    (act, ghb, hn, Array2::zeros((bsz, 0)))
                }
            };
            for b in 0..bsz {
                hs.row_mut(b * steps + t).assign(&h_new.row(b));
            }
            cells.push(StepCache {
                x: xt,
                h_prev: std::mem::replace(&mut h, h_new),
                c_prev: std::mem::replace(&mut c, c_new),
                gates,
                aux,
            });
        }

        let mut out = hs.dot(&view(p, lay.head.w, hsz, spec.outputs));
        add_bias(&mut out, &p[lay.head.b..lay.head.b + spec.outputs]);

        let mut final_state = vec![0.0; bsz * sl];
        for b in 0..bsz {
            for j in 0..hsz {
                final_state[b * sl + j] = h[[b, j]];
                if spec.cell == CellKind::Lstm {
                    final_state[b * sl + hsz + j] = c[[b, j]];
                }
            }
        }
        Forward {
            out,
            final_state,
            batch: bsz,
            steps,
            patches,
            conv_out,
            fc_in,
            fc_out,
            cells,
            hs,
        }
    }

    /// Accumulate `d loss / d params` into `grad` given `d loss / d out`.
    /// The gradient with respect to the initial state is not propagated
    /// (stored states are treated as constants).
    pub fn backward(&self, fw: &Forward, d_out: &Array2<f64>, grad: &mut [f64]) {
        let spec = &self.spec;
        let lay = self.layout();
        let p = &self.params;
        assert_eq!(grad.len(), p.len());
        let (bsz, steps) = (fw.batch, fw.steps);
        let n = bsz * steps;
        let hsz = spec.hidden;
        let g = spec.gates() * hsz;
        let d = lay.cell.nin;

        // head
        general_mat_mul(1.0, &fw.hs.t(), d_out, 1.0, &mut view_mut(grad, lay.head.w, hsz, spec.outputs));
        add_col_sums(&mut grad[lay.head.b..lay.head.b + spec.outputs], d_out);
        let d_hs = d_out.dot(&view(p, lay.head.w, hsz, spec.outputs).t());

        // recurrent cell, backwards in time
        let wx = view(p, lay.cell.wx, d, g);
        let wh = view(p, lay.cell.wh, hsz, g);
        let mut d_x = Array2::<f64>::zeros((n, d));
        let mut dh_next = Array2::<f64>::zeros((bsz, hsz));
        let mut dc_next = Array2::<f64>::zeros((bsz, hsz));
        let mut gwx = Array2::<f64>::zeros((d, g));
        let mut gwh = Array2::<f64>::zeros((hsz, g));
        let mut gbx = vec![0.0; g];
        let mut gbh = vec![0.0; g];
        for t in (0..steps).rev() {
            let sc = &fw.cells[t];
            let mut dh = dh_next.clone();
            for b in 0..bsz {
                let row = d_hs.row(b * steps + t);
                for j in 0..hsz {
                    dh[[b, j]] += row[j];
                }
            }
            let mut dgx = Array2::<f64>::zeros((bsz, g));
            let dgh;
            match spec.cell {
                CellKind::Lstm => {
                    let z = &sc.gates;
                    for b in 0..bsz {
                        for j in 0..hsz {
                            let (i_, f_, g_, o_) = (z[[b, j]], z[[b, hsz + j]], z[[b, 2 * hsz + j]], z[[b, 3 * hsz + j]]);
                            let tc = sc.aux[[b, j]].tanh();
                            let dhv = dh[[b, j]];
                            let dc = dc_next[[b, j]] + dhv * o_ * (1.0 - tc * tc);
                            dgx[[b, j]] = dc * g_ * i_ * (1.0 - i_);
                            dgx[[b, hsz + j]] = dc * sc.c_prev[[b, j]] * f_ * (1.0 - f_);
                            dgx[[b, 2 * hsz + j]] = dc * i_ * (1.0 - g_ * g_);
                            dgx[[b, 3 * hsz + j]] = dhv * tc * o_ * (1.0 - o_);
                            dc_next[[b, j]] = dc * f_;
                        }
                    }
                    dgh = dgx.clone();
                    dh_next = dgh.dot(&wh.t());
                }
                CellKind::Gru => {
                    let a = &sc.gates;
                    let mut dghm = Array2::<f64>::zeros((bsz, g));
                    let mut direct = Array2::<f64>::zeros((bsz, hsz));
                    for b in 0..bsz {
                        for j in 0..hsz {
                            let (r, z, nn) = (a[[b, j]], a[[b, hsz + j]], a[[b, 2 * hsz + j]]);
                            let dhv = dh[[b, j]];
                            let dn = dhv * (1.0 - z) * (1.0 - nn * nn);
                            let dz = dhv * (sc.h_prev[[b, j]] - nn) * z * (1.0 - z);
                            let dr = dn * sc.aux[[b, 2 * hsz + j]] * r * (1.0 - r);
                            dgx[[b, j]] = dr;
                            dgx[[b, hsz + j]] = dz;
                            dgx[[b, 2 * hsz + j]] = dn;
                            dghm[[b, j]] = dr;
                            dghm[[b, hsz + j]] = dz;
                            dghm[[b, 2 * hsz + j]] = dn * r;
                            direct[[b, j]] = dhv * z;
                        }
                    }
                    dh_next = direct + &dghm.dot(&wh.t());
                    dgh = dghm;
                }
            }
            general_mat_mul(1.0, &sc.x.t(), &dgx, 1.0, &mut gwx);
            general_mat_mul(1.0, &sc.h_prev.t(), &dgh, 1.0, &mut gwh);
            add_col_sums(&mut gbx, &dgx);
            add_col_sums(&mut gbh, &dgh);
            let dxt = dgx.dot(&wx.t());
            for b in 0..bsz {
                d_x.row_mut(b * steps + t).assign(&dxt.row(b));
            }
        }
        let add = |grad: &mut [f64], off: usize, src: &[f64]| {
            for (gg, v) in grad[off..off + src.len()].iter_mut().zip(src) {
                *gg += v;
            }
        };
        add(grad, lay.cell.wx, gwx.as_slice().expect("contiguous"));
        add(grad, lay.cell.wh, gwh.as_slice().expect("contiguous"));
        add(grad, lay.cell.bx, &gbx);
        match spec.cell {
            CellKind::Gru => add(grad, lay.cell.bh, &gbh),
            // the LSTM has a single bias shared by both input paths
            CellKind::Lstm => {}
        }

        // fully connected stack
        let mut dx = d_x;
        for (li, l) in lay.fcs.iter().enumerate().rev() {
            relu_back(&mut dx, &fw.fc_out[li]);
            general_mat_mul(1.0, &fw.fc_in[li].t(), &dx, 1.0, &mut view_mut(grad, l.w, l.nin, l.nout));
            add_col_sums(&mut grad[l.b..l.b + l.nout], &dx);
            dx = dx.dot(&view(p, l.w, l.nin, l.nout).t());
        }

        // convolutions (no gradient needed for the raw input)
        if lay.convs.is_empty() {
            return;
        }
        let last = lay.convs.last().expect("nonempty");
        let flat = last.hout * last.wout * last.cout;
        let mut dy = dx
            .slice(s![.., 0..flat])
            .to_owned()
            .into_shape_with_order((n * last.hout * last.wout, last.cout))
            .expect("unflatten");
        let k = spec.kernel;
        for (li, l) in lay.convs.iter().enumerate().rev() {
            relu_back(&mut dy, &fw.conv_out[li]);
            let kk = k * k * l.cin;
            general_mat_mul(1.0, &fw.patches[li].t(), &dy, 1.0, &mut view_mut(grad, l.w, kk, l.cout));
            add_col_sums(&mut grad[l.b..l.b + l.cout], &dy);
            if li == 0 {
                break;
            }
            let d_patches = dy.dot(&view(p, l.w, kk, l.cout).t());
            let d_in = col2im(&d_patches, n, l, k);
            dy = Array2::from_shape_vec((n * l.hin * l.win, l.cin), d_in).expect("conv grad");
        }
    }
}
