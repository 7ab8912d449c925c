//! A small static-graph neural network engine: forward, backward, SGD.
//!
//! Graphs are DAGs of nodes added in topological order. Feature maps are CHW
//! f32 tensors; convolutions run as im2col + GEMM. Batch normalization uses
//! its stored statistics in both modes (they stay frozen during fine-tuning);
//! gamma/beta remain trainable.

pub mod ops;
pub mod weights;
pub mod winograd;

use crate::tensor::{gemm_nn, gemm_nt, gemm_strided, gemm_tn, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BN_EPS: f32 = 1e-3;

thread_local! {
    // Reusable convolution lowering buffers. Convolutions dominate
    // allocation traffic, and every lowering path fully writes the region
    // it asks for, so stale contents never leak into a later call.
    static CONV_SCRATCH: std::cell::RefCell<(Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>)> =
        std::cell::RefCell::new((Vec::new(), Vec::new(), Vec::new(), Vec::new()));
}

// TEMP PROFILING — remove before release
thread_local! {
    static PROF: std::cell::RefCell<std::collections::BTreeMap<String, f64>> =
        std::cell::RefCell::new(std::collections::BTreeMap::new());
}

pub fn profile_dump() {
    PROF.with(|p| {
        let p = p.borrow();
        let mut v: Vec<_> = p.iter().collect();
        v.sort_by(|a, b| b.1.total_cmp(a.1));
        for (k, t) in v {
            println!("{k:>16}: {t:.3}s");
        }
    });
}

fn prof_add(key: String, secs: f64) {
    PROF.with(|p| *p.borrow_mut().entry(key).or_insert(0.0) += secs);
}
// END TEMP PROFILING

fn with_conv_scratch<R>(
    sizes: [usize; 4],
    f: impl FnOnce(&mut [f32], &mut [f32], &mut [f32], &mut [f32]) -> R,
) -> R {
    CONV_SCRATCH.with(|s| {
        let (a, b, c, d) = &mut *s.borrow_mut();
        if a.len() < sizes[0] {
            a.resize(sizes[0], 0.0);
        }
        if b.len() < sizes[1] {
            b.resize(sizes[1], 0.0);
        }
        if c.len() < sizes[2] {
            c.resize(sizes[2], 0.0);
        }
        if d.len() < sizes[3] {
            d.resize(sizes[3], 0.0);
        }
        f(&mut a[..sizes[0]], &mut b[..sizes[1]], &mut c[..sizes[2]], &mut d[..sizes[3]])
    })
}

/// Copy a CHW tensor into a zero-padded per-channel plane layout
/// (`ph` × `pw`). The destination may carry extra zeroed slack floats at the
/// end; shifted-GEMM anchor windows read or write slightly past the last
/// plane and the slack absorbs that tail.
#[allow(clippy::too_many_arguments)]
fn embed_padded(
    src: &[f32], cin: usize, h: usize, w: usize,
    pt: usize, pl: usize, ph: usize, pw: usize, dst: &mut [f32],
) {
    dst.fill(0.0);
    for ci in 0..cin {
        for iy in 0..h {
            let o = ci * ph * pw + (iy + pt) * pw + pl;
            dst[o..o + w].copy_from_slice(&src[ci * h * w + iy * w..][..w]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    Same,
    Valid,
}

#[derive(Debug, Clone)]
pub struct ConvCfg {
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad: Pad,
    pub bias: bool,
}

#[derive(Debug, Clone)]
pub struct WindowCfg {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad: Pad,
}

#[derive(Debug, Clone)]
pub enum Op {
    Input,
    Conv(ConvCfg),
    /// Depthwise convolution: one kh x kw filter per channel, no bias.
    DwConv(WindowCfg),
    Dense { units: usize, bias: bool },
    /// `scale = false` omits gamma (Keras InceptionV3 convention).
    BatchNorm { scale: bool },
    Relu,
    MaxPool(WindowCfg),
    /// Average pooling; padded cells are excluded from the mean.
    AvgPool(WindowCfg),
    GlobalAvgPool,
    GlobalMaxPool,
    ZeroPad { t: usize, b: usize, l: usize, r: usize },
    Concat,
    Add,
    Flatten,
    Dropout { rate: f32 },
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub data: Tensor,
    pub trainable: bool,
}

pub struct Node {
    pub op: Op,
    pub inputs: Vec<usize>,
    pub name: String,
    pub params: Vec<Param>,
    pub out_shape: Vec<usize>,
}

/// Per-node scratch kept from forward for the backward pass.
enum Aux {
    None,
    ArgMax(Vec<u32>),
    DropMask(Vec<f32>),
}

pub struct Activations {
    outs: Vec<Tensor>,
    aux: Vec<Aux>,
}

impl Activations {
    pub fn output(&self) -> &Tensor {
        self.outs.last().unwrap()
    }
    pub fn node_output(&self, idx: usize) -> &Tensor {
        &self.outs[idx]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Eval,
    /// Dropout active; masks derive from this seed and the node index so a
    /// sample's pass is reproducible regardless of scheduling.
    Train { seed: u64 },
}

/// Flat gradient accumulator matching a graph's trainable-parameter layout.
pub struct GradBuf {
    pub data: Vec<f32>,
}

impl GradBuf {
    pub fn add_assign(&mut self, other: &GradBuf) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

pub struct Graph {
    pub nodes: Vec<Node>,
    pub input_shape: Vec<usize>,
    /// (offset, len) per node per param into a GradBuf.
    layout: Vec<Vec<(usize, usize)>>,
    grad_len: usize,
}

impl Graph {
    pub fn new(input_shape: &[usize]) -> Self {
        let mut g = Graph {
            nodes: Vec::new(),
            input_shape: input_shape.to_vec(),
            layout: Vec::new(),
            grad_len: 0,
        };
        g.nodes.push(Node {
            op: Op::Input,
            inputs: vec![],
            name: "input".into(),
            params: vec![],
            out_shape: input_shape.to_vec(),
        });
        g.layout.push(vec![]);
        g
    }

    pub fn output_node(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Append a node; panics on shape mismatches (construction bugs).
    pub fn add(&mut self, op: Op, inputs: &[usize]) -> usize {
        let idx = self.nodes.len();
        for &i in inputs {
            assert!(i < idx, "inputs must precede the node");
        }
        let in_shapes: Vec<Vec<usize>> = inputs.iter().map(|&i| self.nodes[i].out_shape.clone()).collect();
        let (out_shape, params) = self.infer(&op, &in_shapes, idx);
        let mut offsets = Vec::new();
        for p in &params {
            offsets.push((self.grad_len, p.data.len()));
            self.grad_len += p.data.len();
        }
        self.layout.push(offsets);
        self.nodes.push(Node {
            name: format!("{}_{}", op_tag(&op), idx),
            op,
            inputs: inputs.to_vec(),
            params,
            out_shape,
        });
        idx
    }

    fn infer(&self, op: &Op, ins: &[Vec<usize>], idx: usize) -> (Vec<usize>, Vec<Param>) {
        let chw = |s: &Vec<usize>| -> (usize, usize, usize) {
            assert_eq!(s.len(), 3, "node {idx}: expected a CHW input, got {s:?}");
            (s[0], s[1], s[2])
        };
        match op {
            Op::Input => unreachable!(),
            Op::Conv(c) => {
                let (cin, h, w) = chw(&ins[0]);
                let (oh, _) = ops::axis_out(h, c.kh, c.sh, c.pad == Pad::Same);
                let (ow, _) = ops::axis_out(w, c.kw, c.sw, c.pad == Pad::Same);
                let mut params = vec![Param {
                    name: "w".into(),
                    data: Tensor::zeros(&[c.cout, cin * c.kh * c.kw]),
                    trainable: true,
                }];
                if c.bias {
                    params.push(Param {
                        name: "b".into(),
                        data: Tensor::zeros(&[c.cout]),
                        trainable: true,
                    });
                }
                (vec![c.cout, oh, ow], params)
            }
            Op::DwConv(c) => {
                let (cin, h, w) = chw(&ins[0]);
                let (oh, _) = ops::axis_out(h, c.kh, c.sh, c.pad == Pad::Same);
                let (ow, _) = ops::axis_out(w, c.kw, c.sw, c.pad == Pad::Same);
                let params = vec![Param {
                    name: "w".into(),
                    data: Tensor::zeros(&[cin, c.kh * c.kw]),
                    trainable: true,
                }];
                (vec![cin, oh, ow], params)
            }
            Op::Dense { units, bias } => {
                assert_eq!(ins[0].len(), 1, "node {idx}: Dense expects a flat input");
                let nin = ins[0][0];
                let mut params = vec![Param {
                    name: "w".into(),
                    data: Tensor::zeros(&[*units, nin]),
                    trainable: true,
                }];
                if *bias {
                    params.push(Param {
                        name: "b".into(),
                        data: Tensor::zeros(&[*units]),
                        trainable: true,
                    });
                }
                (vec![*units], params)
            }
            Op::BatchNorm { scale } => {
                let c = ins[0][0];
                let mut params = Vec::new();
                if *scale {
                    params.push(Param {
                        name: "gamma".into(),
                        data: Tensor::from_vec(&[c], vec![1.0; c]),
                        trainable: true,
                    });
                }
                params.push(Param {
                    name: "beta".into(),
                    data: Tensor::zeros(&[c]),
                    trainable: true,
                });
                params.push(Param {
                    name: "moving_mean".into(),
                    data: Tensor::zeros(&[c]),
                    trainable: false,
                });
                params.push(Param {
                    name: "moving_var".into(),
                    data: Tensor::from_vec(&[c], vec![1.0; c]),
                    trainable: false,
                });
                (ins[0].clone(), params)
            }
            Op::Relu | Op::Dropout { .. } => (ins[0].clone(), vec![]),
            Op::MaxPool(c) | Op::AvgPool(c) => {
                let (cin, h, w) = chw(&ins[0]);
                let (oh, _) = ops::axis_out(h, c.kh, c.sh, c.pad == Pad::Same);
                let (ow, _) = ops::axis_out(w, c.kw, c.sw, c.pad == Pad::Same);
                (vec![cin, oh, ow], vec![])
            }
            Op::GlobalAvgPool | Op::GlobalMaxPool => {
                let (cin, _, _) = chw(&ins[0]);
                (vec![cin], vec![])
            }
            Op::ZeroPad { t, b, l, r } => {
                let (cin, h, w) = chw(&ins[0]);
                (vec![cin, h + t + b, w + l + r], vec![])
            }
            Op::Concat => {
                if ins.iter().all(|s| s.len() == 1) {
                    // Rank-1 inputs concatenate into one flat vector.
                    (vec![ins.iter().map(|s| s[0]).sum()], vec![])
                } else {
                    let (_, h, w) = chw(&ins[0]);
                    let mut ctot = 0;
                    for s in ins {
                        let (c, hh, ww) = chw(s);
                        assert_eq!((hh, ww), (h, w), "node {idx}: concat spatial mismatch");
                        ctot += c;
                    }
                    (vec![ctot, h, w], vec![])
                }
            }
            Op::Add => {
                for s in ins {
                    assert_eq!(s, &ins[0], "node {idx}: add shape mismatch");
                }
                (ins[0].clone(), vec![])
            }
            Op::Flatten => (vec![ins[0].iter().product()], vec![]),
        }
    }

    pub fn trainable_param_count(&self) -> u64 {
        self.nodes
            .iter()
            .flat_map(|n| &n.params)
            .filter(|p| p.trainable)
            .map(|p| p.data.len() as u64)
            .sum()
    }

    pub fn total_param_count(&self) -> u64 {
        self.nodes
            .iter()
            .flat_map(|n| &n.params)
            .map(|p| p.data.len() as u64)
            .sum()
    }

    pub fn grad_len(&self) -> usize {
        self.grad_len
    }

    pub fn zero_grad(&self) -> GradBuf {
        GradBuf {
            data: vec![0.0; self.grad_len],
        }
    }

    /// He-normal initialization for conv/dense weights. The final node, when
    /// it is a Dense classifier, starts at zero so an untrained model emits
    /// probability 0.5 for everything.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = self.nodes.len() - 1;
        for idx in 0..self.nodes.len() {
            let zero_out = idx == last && matches!(self.nodes[idx].op, Op::Dense { .. });
            let fan_in = match &self.nodes[idx].op {
                Op::Conv(c) => {
                    let cin_k = self.nodes[idx].params[0].data.shape[1];
                    let _ = c;
                    cin_k
                }
                Op::DwConv(c) => c.kh * c.kw,
                Op::Dense { .. } => self.nodes[idx].params[0].data.shape[1],
                _ => continue,
            };
            let std = (2.0 / fan_in as f32).sqrt();
            let node = &mut self.nodes[idx];
            for p in &mut node.params {
                if p.name != "w" {
                    continue;
                }
                if zero_out {
                    p.data.data.fill(0.0);
                } else {
                    for v in p.data.data.iter_mut() {
                        // Box-Muller normal
                        let u1: f32 = rng.gen_range(1e-7f32..1.0);
                        let u2: f32 = rng.gen::<f32>();
                        *v = std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f32::consts::PI * u2).cos();
                    }
                }
            }
        }
    }

    /// Mark every parameter strictly before `head_start` as frozen.
    pub fn freeze_below(&mut self, head_start: usize) {
        for node in &mut self.nodes[..head_start] {
            for p in &mut node.params {
                if p.name == "w" || p.name == "b" || p.name == "gamma" || p.name == "beta" {
                    p.trainable = false;
                }
            }
        }
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Activations {
        self.forward_to(self.nodes.len() - 1, input, mode)
    }

    /// Run nodes `0..=upto`; later nodes are left as empty tensors.
    pub fn forward_to(&self, upto: usize, input: &Tensor, mode: Mode) -> Activations {
        assert_eq!(input.shape, self.input_shape, "input shape mismatch");
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut aux: Vec<Aux> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            if idx > upto {
                outs.push(Tensor::zeros(&[0]));
                aux.push(Aux::None);
                continue;
            }
            let t0 = std::time::Instant::now();
            let (out, a) = self.eval_node(idx, node, &outs, input, mode);
            prof_add(format!("fwd.{}", op_tag(&node.op)), t0.elapsed().as_secs_f64());
            outs.push(out);
            aux.push(a);
        }
        Activations { outs, aux }
    }

    /// Evaluate nodes `start+1..=upto` given a cached output for node
    /// `start`, returning node `upto`'s output. Every evaluated node must
    /// draw its inputs from within the replayed span, so this is only valid
    /// on chain-shaped graph suffixes (e.g. classifier heads).
    pub fn forward_from(&self, start: usize, upto: usize, cached: &Tensor, mode: Mode) -> Tensor {
        assert!(start <= upto && upto < self.nodes.len());
        let mut outs: Vec<Tensor> = (0..=upto).map(|_| Tensor::zeros(&[0])).collect();
        outs[start] = cached.clone();
        let empty = Tensor::zeros(&[0]);
        for idx in start + 1..=upto {
            let node = &self.nodes[idx];
            for &inp in &node.inputs {
                assert!(inp >= start, "node {idx} reads outside the replayed span");
            }
            let (out, _) = self.eval_node(idx, node, &outs, &empty, mode);
            outs[idx] = out;
        }
        outs.swap_remove(upto)
    }

    fn eval_node(&self, idx: usize, node: &Node, outs: &[Tensor], input: &Tensor, mode: Mode) -> (Tensor, Aux) {
        let x = |i: usize| -> &Tensor { &outs[node.inputs[i]] };
        match &node.op {
            Op::Input => (input.clone(), Aux::None),
            Op::Conv(c) => {
                let (cin, h, w) = x(0).chw();
                let (oh, pt) = ops::axis_out(h, c.kh, c.sh, c.pad == Pad::Same);
                let (ow, pl) = ops::axis_out(w, c.kw, c.sw, c.pad == Pad::Same);
                let p = oh * ow;
                let k = cin * c.kh * c.kw;
                let wmat = &node.params[0].data.data;
                let mut y = Tensor::zeros(&[c.cout, oh, ow]);
                if c.kh == 1 && c.kw == 1 && c.sh == 1 && c.sw == 1 {
                    let t0 = std::time::Instant::now();
                    gemm_nn(c.cout, k, p, 1.0, wmat, &x(0).data, 0.0, &mut y.data);
                    prof_add("fwd.conv/gemm1x1".into(), t0.elapsed().as_secs_f64());
                } else if c.sh == 1 && c.sw == 1 && c.kh == 3 && c.kw == 3 {
                    let t0 = std::time::Instant::now();
                    let (sx, sv, sm, su) = winograd::scratch_sizes(cin, c.cout, oh, ow);
                    with_conv_scratch([sx, sv, sm, su], |xpad, v, mbuf, u| {
                        winograd::conv3x3(
                            &x(0).data, cin, h, w, pt, pl,
                            wmat, winograd::KernelView::Forward, c.cout,
                            oh, ow, &mut y.data, false,
                            xpad, v, mbuf, u,
                        );
                    });
                    prof_add("fwd.conv/winograd".into(), t0.elapsed().as_secs_f64());
                } else if c.sh == 1 && c.sw == 1 {
                    // Stride-1 kernels run as kh·kw shifted GEMMs over a
                    // zero-padded input copy; this skips the im2col matrix
                    // entirely. Anchors cover `oh` padded rows, so crop
                    // columns ow..pw of each output row afterwards.
                    let t0 = std::time::Instant::now();
                    let (ph, pw) = (oh + c.kh - 1, ow + c.kw - 1);
                    let anchors = oh * pw;
                    with_conv_scratch([cin * ph * pw + c.kw, c.cout * anchors, 0, 0], |xpad, ybuf, _, _| {
                        embed_padded(&x(0).data, cin, h, w, pt, pl, ph, pw, xpad);
                        for ky in 0..c.kh {
                            for kx in 0..c.kw {
                                unsafe {
                                    gemm_strided(
                                        c.cout, anchors, cin,
                                        ybuf.as_mut_ptr(), 1, anchors as isize, ky + kx > 0,
                                        wmat.as_ptr().add(ky * c.kw + kx),
                                        (c.kh * c.kw) as isize, (cin * c.kh * c.kw) as isize,
                                        xpad.as_ptr().add(ky * pw + kx), 1, (ph * pw) as isize,
                                    );
                                }
                            }
                        }
                        for co in 0..c.cout {
                            for oy in 0..oh {
                                y.data[co * p + oy * ow..][..ow]
                                    .copy_from_slice(&ybuf[co * anchors + oy * pw..][..ow]);
                            }
                        }
                    });
                    prof_add("fwd.conv/shifted".into(), t0.elapsed().as_secs_f64());
                } else {
                    with_conv_scratch([k * p, 0, 0, 0], |col, _, _, _| {
                        let t0 = std::time::Instant::now();
                        ops::im2col(&x(0).data, cin, h, w, c.kh, c.kw, c.sh, c.sw, pt, pl, oh, ow, col);
                        prof_add("fwd.conv/im2col".into(), t0.elapsed().as_secs_f64());
                        let t0 = std::time::Instant::now();
                        gemm_nn(c.cout, k, p, 1.0, wmat, col, 0.0, &mut y.data);
                        prof_add(format!("fwd.conv/gemm.k{}", c.kh), t0.elapsed().as_secs_f64());
                    });
                }
                if c.bias {
                    let b = &node.params[1].data.data;
                    for co in 0..c.cout {
                        let bias = b[co];
                        for v in &mut y.data[co * p..(co + 1) * p] {
                            *v += bias;
                        }
                    }
                }
                (y, Aux::None)
            }
            Op::DwConv(c) => {
                let (cin, h, w) = x(0).chw();
                let (oh, pt) = ops::axis_out(h, c.kh, c.sh, c.pad == Pad::Same);
                let (ow, pl) = ops::axis_out(w, c.kw, c.sw, c.pad == Pad::Same);
                let mut y = Tensor::zeros(&[cin, oh, ow]);
                ops::dwconv_forward(
                    &x(0).data, cin, h, w, &node.params[0].data.data,
                    c.kh, c.kw, c.sh, c.sw, pt, pl, oh, ow, &mut y.data,
                );
                (y, Aux::None)
            }
            Op::Dense { units, bias } => {
                let xin = &x(0).data;
                let nin = xin.len();
                let w = &node.params[0].data.data;
                let mut y = Tensor::zeros(&[*units]);
                gemm_nn(*units, nin, 1, 1.0, w, xin, 0.0, &mut y.data);
                if *bias {
                    for (v, b) in y.data.iter_mut().zip(&node.params[1].data.data) {
                        *v += b;
                    }
                }
                (y, Aux::None)
            }
            Op::BatchNorm { scale } => {
                let (c, h, w) = x(0).chw();
                let plane = h * w;
                let (gamma, beta, mean, var) = bn_params(node, *scale);
                let mut y = Tensor::zeros(&x(0).shape);
                for ch in 0..c {
                    let g = gamma.map_or(1.0, |g| g[ch]);
                    let inv = (var[ch] + BN_EPS).sqrt().recip();
                    let a = g * inv;
                    let b = beta[ch] - mean[ch] * a;
                    for (yo, xo) in y.data[ch * plane..(ch + 1) * plane]
                        .iter_mut()
                        .zip(&x(0).data[ch * plane..(ch + 1) * plane])
                    {
                        *yo = a * xo + b;
                    }
                }
                (y, Aux::None)
            }
            Op::Relu => {
                let mut y = x(0).clone();
                for v in &mut y.data {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                (y, Aux::None)
            }
            Op::MaxPool(c) => {
                let (cin, h, w) = x(0).chw();
                let (oh, pt) = ops::axis_out(h, c.kh, c.sh, c.pad == Pad::Same);
                let (ow, pl) = ops::axis_out(w, c.kw, c.sw, c.pad == Pad::Same);
                let mut y = Tensor::zeros(&[cin, oh, ow]);
                let mut arg = vec![0u32; cin * oh * ow];
                for ch in 0..cin {
                    let plane = &x(0).data[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f32::NEG_INFINITY;
                            let mut bidx = 0usize;
                            for ky in 0..c.kh {
                                let iy = (oy * c.sh + ky) as isize - pt as isize;
                                if iy < 0 || iy as usize >= h {
                                    continue;
                                }
                                for kx in 0..c.kw {
                                    let ix = (ox * c.sw + kx) as isize - pl as isize;
                                    if ix < 0 || ix as usize >= w {
                                        continue;
                                    }
                                    let i = iy as usize * w + ix as usize;
                                    if plane[i] > best {
                                        best = plane[i];
                                        bidx = i;
                                    }
                                }
                            }
                            y.data[(ch * oh + oy) * ow + ox] = best;
                            arg[(ch * oh + oy) * ow + ox] = bidx as u32;
                        }
                    }
                }
                (y, Aux::ArgMax(arg))
            }
            Op::AvgPool(c) => {
                let (cin, h, w) = x(0).chw();
                let (oh, pt) = ops::axis_out(h, c.kh, c.sh, c.pad == Pad::Same);
                let (ow, pl) = ops::axis_out(w, c.kw, c.sw, c.pad == Pad::Same);
                let mut y = Tensor::zeros(&[cin, oh, ow]);
                for ch in 0..cin {
                    let plane = &x(0).data[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0f32;
                            let mut n = 0u32;
                            for ky in 0..c.kh {
                                let iy = (oy * c.sh + ky) as isize - pt as isize;
                                if iy < 0 || iy as usize >= h {
                                    continue;
                                }
                                for kx in 0..c.kw {
                                    let ix = (ox * c.sw + kx) as isize - pl as isize;
                                    if ix < 0 || ix as usize >= w {
                                        continue;
                                    }
                                    acc += plane[iy as usize * w + ix as usize];
                                    n += 1;
                                }
                            }
                            y.data[(ch * oh + oy) * ow + ox] = acc / n as f32;
                        }
                    }
                }
                (y, Aux::None)
            }
            Op::GlobalAvgPool => {
                let (c, h, w) = x(0).chw();
                let plane = (h * w) as f32;
                let mut y = Tensor::zeros(&[c]);
                for ch in 0..c {
                    y.data[ch] = x(0).data[ch * h * w..(ch + 1) * h * w].iter().sum::<f32>() / plane;
                }
                (y, Aux::None)
            }
            Op::GlobalMaxPool => {
                let (c, h, w) = x(0).chw();
                let mut y = Tensor::zeros(&[c]);
                let mut arg = vec![0u32; c];
                for ch in 0..c {
                    let plane = &x(0).data[ch * h * w..(ch + 1) * h * w];
                    let (mut best, mut bi) = (f32::NEG_INFINITY, 0usize);
                    for (i, &v) in plane.iter().enumerate() {
                        if v > best {
                            best = v;
                            bi = i;
                        }
                    }
                    y.data[ch] = best;
                    arg[ch] = bi as u32;
                }
                (y, Aux::ArgMax(arg))
            }
            Op::ZeroPad { t, l, .. } => {
                let (c, h, w) = x(0).chw();
                let (oc, oh, ow) = (node.out_shape[0], node.out_shape[1], node.out_shape[2]);
                debug_assert_eq!(c, oc);
                let mut y = Tensor::zeros(&[oc, oh, ow]);
                for ch in 0..c {
                    for iy in 0..h {
                        let src = &x(0).data[(ch * h + iy) * w..(ch * h + iy + 1) * w];
                        let dst_off = (ch * oh + iy + t) * ow + l;
                        y.data[dst_off..dst_off + w].copy_from_slice(src);
                    }
                }
                (y, Aux::None)
            }
            Op::Concat => {
                let mut data = Vec::with_capacity(node.out_shape.iter().product());
                for &i in &node.inputs {
                    data.extend_from_slice(&outs[i].data);
                }
                (Tensor::from_vec(&node.out_shape, data), Aux::None)
            }
            Op::Add => {
                let mut y = x(0).clone();
                for &i in &node.inputs[1..] {
                    for (a, b) in y.data.iter_mut().zip(&outs[i].data) {
                        *a += b;
                    }
                }
                (y, Aux::None)
            }
            Op::Flatten => (Tensor::from_vec(&node.out_shape, x(0).data.clone()), Aux::None),
            Op::Dropout { rate } => match mode {
                Mode::Eval => (x(0).clone(), Aux::None),
                Mode::Train { seed } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E3779B97F4A7C15));
                    let keep = 1.0 - rate;
                    let mut mask = vec![0.0f32; x(0).len()];
                    let mut y = x(0).clone();
                    for (m, v) in mask.iter_mut().zip(&mut y.data) {
                        if rng.gen::<f32>() < keep {
                            *m = 1.0 / keep;
                            *v *= *m;
                        } else {
                            *v = 0.0;
                        }
                    }
                    (y, Aux::DropMask(mask))
                }
            },
        }
    }

    /// Backpropagate from a scalar output logit. `dlogit` is dLoss/dLogit.
    /// Parameter gradients accumulate into `gbuf`.
    pub fn backward(&self, acts: &Activations, dlogit: f32, gbuf: &mut GradBuf) {
        let n = self.nodes.len();
        let mut dx: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let out = self.output_node();
        assert_eq!(acts.outs[out].len(), 1, "backward expects a scalar output");
        dx[out] = Some(Tensor::from_vec(&[1], vec![dlogit]));

        for idx in (1..n).rev() {
            let Some(dy) = dx[idx].take() else { continue };
            let node = &self.nodes[idx];
            let t0 = std::time::Instant::now();
            self.backprop_node(idx, node, acts, &dy, &mut dx, gbuf);
            prof_add(format!("bwd.{}", op_tag(&node.op)), t0.elapsed().as_secs_f64());
        }
    }

    fn backprop_node(
        &self,
        idx: usize,
        node: &Node,
        acts: &Activations,
        dy: &Tensor,
        dx: &mut [Option<Tensor>],
        gbuf: &mut GradBuf,
    ) {
        let xin = |i: usize| -> &Tensor { &acts.outs[node.inputs[i]] };
        fn grab_into(dx: &mut [Option<Tensor>], tgt: usize, shape: &[usize]) {
            if dx[tgt].is_none() {
                dx[tgt] = Some(Tensor::zeros(shape));
            }
        }
        // whether the upstream node needs an input gradient at all
        let need_dx = |g: &Graph, slot: usize| -> bool { !matches!(g.nodes[node.inputs[slot]].op, Op::Input) };

        match &node.op {
            Op::Input => {}
            Op::Conv(c) => {
                let (cin, h, w) = xin(0).chw();
                let (oh, pt) = ops::axis_out(h, c.kh, c.sh, c.pad == Pad::Same);
                let (ow, pl) = ops::axis_out(w, c.kw, c.sw, c.pad == Pad::Same);
                let p = oh * ow;
                let k = cin * c.kh * c.kw;
                let (woff, wlen) = self.layout[idx][0];
                let one_by_one = c.kh == 1 && c.kw == 1 && c.sh == 1 && c.sw == 1;
                let stride_one = c.sh == 1 && c.sw == 1 && !one_by_one;
                if one_by_one {
                    let t0 = std::time::Instant::now();
                    gemm_nt(c.cout, p, k, 1.0, &dy.data, &xin(0).data, 1.0, &mut gbuf.data[woff..woff + wlen]);
                    prof_add("bwd.conv/gemm_dw1x1".into(), t0.elapsed().as_secs_f64());
                } else if stride_one {
                    // Shifted-GEMM weight gradient: embed dy into padded-row
                    // layout (zeros in the cropped columns contribute
                    // nothing) and contract it against each shifted view of
                    // the padded input.
                    let t0 = std::time::Instant::now();
                    let (ph, pw) = (oh + c.kh - 1, ow + c.kw - 1);
                    let anchors = oh * pw;
                    with_conv_scratch(
                        [cin * ph * pw + c.kw, c.cout * anchors, 0, 0],
                        |xpad, dyemb, _, _| {
                            embed_padded(&xin(0).data, cin, h, w, pt, pl, ph, pw, xpad);
                            embed_padded(&dy.data, c.cout, oh, ow, 0, 0, oh, pw, dyemb);
                            let g = &mut gbuf.data[woff..woff + wlen];
                            for ky in 0..c.kh {
                                for kx in 0..c.kw {
                                    unsafe {
                                        gemm_strided(
                                            c.cout, cin, anchors,
                                            g.as_mut_ptr().add(ky * c.kw + kx),
                                            (c.kh * c.kw) as isize, (cin * c.kh * c.kw) as isize,
                                            true,
                                            dyemb.as_ptr(), 1, anchors as isize,
                                            xpad.as_ptr().add(ky * pw + kx), (ph * pw) as isize, 1,
                                        );
                                    }
                                }
                            }
                        },
                    );
                    prof_add("bwd.conv/shifted_dw".into(), t0.elapsed().as_secs_f64());
                } else {
                    with_conv_scratch([k * p, 0, 0, 0], |col, _, _, _| {
                        let t0 = std::time::Instant::now();
                        ops::im2col(&xin(0).data, cin, h, w, c.kh, c.kw, c.sh, c.sw, pt, pl, oh, ow, col);
                        prof_add("bwd.conv/im2col".into(), t0.elapsed().as_secs_f64());
                        let t0 = std::time::Instant::now();
                        gemm_nt(c.cout, p, k, 1.0, &dy.data, col, 1.0, &mut gbuf.data[woff..woff + wlen]);
                        prof_add("bwd.conv/gemm_dw".into(), t0.elapsed().as_secs_f64());
                    });
                }
                if c.bias {
                    let (boff, _) = self.layout[idx][1];
                    for co in 0..c.cout {
                        gbuf.data[boff + co] += dy.data[co * p..(co + 1) * p].iter().sum::<f32>();
                    }
                }
                if need_dx(self, 0) {
                    let wmat = &node.params[0].data.data;
                    let tgt = node.inputs[0];
                    grab_into(dx, tgt, &[cin, h, w]);
                    if one_by_one {
                        let t0 = std::time::Instant::now();
                        gemm_tn(k, c.cout, p, 1.0, wmat, &dy.data, 1.0, &mut dx[tgt].as_mut().unwrap().data);
                        prof_add("bwd.conv/gemm_dx1x1".into(), t0.elapsed().as_secs_f64());
                    } else if stride_one && c.kh == 3 && c.kw == 3 {
                        // Input gradient is itself a stride-1 3x3
                        // convolution of dy with the channel-transposed,
                        // tap-rotated kernel.
                        let t0 = std::time::Instant::now();
                        let (sx, sv, sm, su) = winograd::scratch_sizes(c.cout, cin, h, w);
                        with_conv_scratch([sx, sv, sm, su], |xpad, v, mbuf, u| {
                            winograd::conv3x3(
                                &dy.data, c.cout, oh, ow, c.kh - 1 - pt, c.kw - 1 - pl,
                                wmat, winograd::KernelView::FlippedTransposed, cin,
                                h, w, &mut dx[tgt].as_mut().unwrap().data, true,
                                xpad, v, mbuf, u,
                            );
                        });
                        prof_add("bwd.conv/winograd_dx".into(), t0.elapsed().as_secs_f64());
                    } else if stride_one {
                        // Shifted-GEMM input gradient, accumulated into a
                        // padded buffer and then cropped back. Anchor tails
                        // past each plane only ever receive contributions
                        // from zeroed dyemb columns, so the slack region
                        // stays inert.
                        let t0 = std::time::Instant::now();
                        let (ph, pw) = (oh + c.kh - 1, ow + c.kw - 1);
                        let anchors = oh * pw;
                        with_conv_scratch(
                            [cin * ph * pw + c.kw, c.cout * anchors, cin * ph * pw + c.kw, 0],
                            |_, dyemb, dxpad, _| {
                                embed_padded(&dy.data, c.cout, oh, ow, 0, 0, oh, pw, dyemb);
                                dxpad.fill(0.0);
                                for ky in 0..c.kh {
                                    for kx in 0..c.kw {
                                        unsafe {
                                            gemm_strided(
                                                cin, anchors, c.cout,
                                                dxpad.as_mut_ptr().add(ky * pw + kx),
                                                1, (ph * pw) as isize, true,
                                                wmat.as_ptr().add(ky * c.kw + kx),
                                                (cin * c.kh * c.kw) as isize, (c.kh * c.kw) as isize,
                                                dyemb.as_ptr(), 1, anchors as isize,
                                            );
                                        }
                                    }
                                }
                                let dxt = dx[tgt].as_mut().unwrap();
                                for ci in 0..cin {
                                    for iy in 0..h {
                                        let src = &dxpad[ci * ph * pw + (iy + pt) * pw + pl..][..w];
                                        for (o, v) in
                                            dxt.data[ci * h * w + iy * w..][..w].iter_mut().zip(src)
                                        {
                                            *o += v;
                                        }
                                    }
                                }
                            },
                        );
                        prof_add("bwd.conv/shifted_dx".into(), t0.elapsed().as_secs_f64());
                    } else {
                        with_conv_scratch([k * p, k * p, 0, 0], |_, dcol, _, _| {
                            let t0 = std::time::Instant::now();
                            gemm_tn(k, c.cout, p, 1.0, wmat, &dy.data, 0.0, dcol);
                            prof_add("bwd.conv/gemm_dx".into(), t0.elapsed().as_secs_f64());
                            let t0 = std::time::Instant::now();
                            ops::col2im(
                                dcol, cin, h, w, c.kh, c.kw, c.sh, c.sw, pt, pl, oh, ow,
                                &mut dx[tgt].as_mut().unwrap().data,
                            );
                            prof_add("bwd.conv/col2im".into(), t0.elapsed().as_secs_f64());
                        });
                    }
                }
            }
            Op::DwConv(c) => {
                let (cin, h, w) = xin(0).chw();
                let (oh, pt) = ops::axis_out(h, c.kh, c.sh, c.pad == Pad::Same);
                let (ow, pl) = ops::axis_out(w, c.kw, c.sw, c.pad == Pad::Same);
                let (woff, wlen) = self.layout[idx][0];
                let tgt = node.inputs[0];
                grab_into(dx, tgt, &[cin, h, w]);
                let wdata = &node.params[0].data.data;
                // split borrow: gbuf slice vs dx tensor
                let dxt = dx[tgt].as_mut().unwrap();
                ops::dwconv_backward(
                    &xin(0).data, cin, h, w, wdata, c.kh, c.kw, c.sh, c.sw, pt, pl, oh, ow,
                    &dy.data, &mut gbuf.data[woff..woff + wlen], &mut dxt.data,
                );
            }
            Op::Dense { units, bias } => {
                let nin = xin(0).len();
                let (woff, wlen) = self.layout[idx][0];
                // dW += dy (units x 1) * x^T (1 x nin)
                gemm_nn(*units, 1, nin, 1.0, &dy.data, &xin(0).data, 1.0, &mut gbuf.data[woff..woff + wlen]);
                if *bias {
                    let (boff, _) = self.layout[idx][1];
                    for (g, d) in gbuf.data[boff..boff + units].iter_mut().zip(&dy.data) {
                        *g += d;
                    }
                }
                if need_dx(self, 0) {
                    let tgt = node.inputs[0];
                grab_into(dx, tgt, &[nin]);
                    gemm_tn(nin, *units, 1, 1.0, &node.params[0].data.data, &dy.data, 1.0, &mut dx[tgt].as_mut().unwrap().data);
                }
            }
            Op::BatchNorm { scale } => {
                let (c, h, w) = xin(0).chw();
                let plane = h * w;
                let (gamma, _, mean, var) = bn_params(node, *scale);
                let mut pslot = 0;
                let goff = if *scale {
                    let o = self.layout[idx][0];
                    pslot = 1;
                    Some(o)
                } else {
                    None
                };
                let (boff, _) = self.layout[idx][pslot];
                let tgt = node.inputs[0];
                grab_into(dx, tgt, &xin(0).shape.clone());
                for ch in 0..c {
                    let inv = (var[ch] + BN_EPS).sqrt().recip();
                    let g = gamma.map_or(1.0, |g| g[ch]);
                    let dys = &dy.data[ch * plane..(ch + 1) * plane];
                    let xs = &xin(0).data[ch * plane..(ch + 1) * plane];
                    if let Some((go, _)) = goff {
                        let mut dg = 0.0f32;
                        for (d, x) in dys.iter().zip(xs) {
                            dg += d * (x - mean[ch]) * inv;
                        }
                        gbuf.data[go + ch] += dg;
                    }
                    gbuf.data[boff + ch] += dys.iter().sum::<f32>();
                    let a = g * inv;
                    let dxs = &mut dx[tgt].as_mut().unwrap().data[ch * plane..(ch + 1) * plane];
                    for (o, d) in dxs.iter_mut().zip(dys) {
                        *o += a * d;
                    }
                }
            }
            Op::Relu => {
                let tgt = node.inputs[0];
                grab_into(dx, tgt, &xin(0).shape.clone());
                let y = &acts.outs[idx];
                let dxs = &mut dx[tgt].as_mut().unwrap().data;
                for i in 0..y.len() {
                    if y.data[i] > 0.0 {
                        dxs[i] += dy.data[i];
                    }
                }
            }
            Op::MaxPool(c) => {
                let (cin, h, w) = xin(0).chw();
                let (oh, ow) = (node.out_shape[1], node.out_shape[2]);
                let _ = c;
                let Aux::ArgMax(arg) = &acts.aux[idx] else { panic!("missing maxpool aux") };
                let tgt = node.inputs[0];
                grab_into(dx, tgt, &[cin, h, w]);
                let dxs = &mut dx[tgt].as_mut().unwrap().data;
                for ch in 0..cin {
                    for o in 0..oh * ow {
                        let i = arg[ch * oh * ow + o] as usize;
                        dxs[ch * h * w + i] += dy.data[ch * oh * ow + o];
                    }
                }
            }
            Op::AvgPool(c) => {
                let (cin, h, w) = xin(0).chw();
                let (oh, pt) = ops::axis_out(h, c.kh, c.sh, c.pad == Pad::Same);
                let (ow, pl) = ops::axis_out(w, c.kw, c.sw, c.pad == Pad::Same);
                let tgt = node.inputs[0];
                grab_into(dx, tgt, &[cin, h, w]);
                let dxs = &mut dx[tgt].as_mut().unwrap().data;
                for ch in 0..cin {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            // recompute the window's live cell count
                            let mut cells = Vec::with_capacity(c.kh * c.kw);
                            for ky in 0..c.kh {
                                let iy = (oy * c.sh + ky) as isize - pt as isize;
                                if iy < 0 || iy as usize >= h {
                                    continue;
                                }
                                for kx in 0..c.kw {
                                    let ix = (ox * c.sw + kx) as isize - pl as isize;
                                    if ix < 0 || ix as usize >= w {
                                        continue;
                                    }
                                    cells.push(iy as usize * w + ix as usize);
                                }
                            }
                            let share = dy.data[(ch * oh + oy) * ow + ox] / cells.len() as f32;
                            for i in cells {
                                dxs[ch * h * w + i] += share;
                            }
                        }
                    }
                }
            }
            Op::GlobalAvgPool => {
                let (c, h, w) = xin(0).chw();
                let tgt = node.inputs[0];
                grab_into(dx, tgt, &[c, h, w]);
                let dxs = &mut dx[tgt].as_mut().unwrap().data;
                let inv = 1.0 / (h * w) as f32;
                for ch in 0..c {
                    let share = dy.data[ch] * inv;
                    for v in &mut dxs[ch * h * w..(ch + 1) * h * w] {
                        *v += share;
                    }
                }
            }
            Op::GlobalMaxPool => {
                let (c, h, w) = xin(0).chw();
                let Aux::ArgMax(arg) = &acts.aux[idx] else { panic!("missing gmp aux") };
                let tgt = node.inputs[0];
                grab_into(dx, tgt, &[c, h, w]);
                let dxs = &mut dx[tgt].as_mut().unwrap().data;
                for ch in 0..c {
                    dxs[ch * h * w + arg[ch] as usize] += dy.data[ch];
                }
            }
            Op::ZeroPad { t, l, .. } => {
                let (c, h, w) = xin(0).chw();
                let (oh, ow) = (node.out_shape[1], node.out_shape[2]);
                let tgt = node.inputs[0];
                grab_into(dx, tgt, &[c, h, w]);
                let dxs = &mut dx[tgt].as_mut().unwrap().data;
                for ch in 0..c {
                    for iy in 0..h {
                        let src_off = (ch * oh + iy + t) * ow + l;
                        for ix in 0..w {
                            dxs[(ch * h + iy) * w + ix] += dy.data[src_off + ix];
                        }
                    }
                }
            }
            Op::Concat => {
                let mut off = 0;
                for (slot, &inp) in node.inputs.iter().enumerate() {
                    let len = acts.outs[inp].len();
                    if need_dx(self, slot) {
                        let tgt = inp;
                        grab_into(dx, tgt, &acts.outs[inp].shape.clone());
                        let dxs = &mut dx[tgt].as_mut().unwrap().data;
                        for (o, d) in dxs.iter_mut().zip(&dy.data[off..off + len]) {
                            *o += d;
                        }
                    }
                    off += len;
                }
            }
            Op::Add => {
                for (slot, &inp) in node.inputs.iter().enumerate() {
                    if need_dx(self, slot) {
                        let tgt = inp;
                        grab_into(dx, tgt, &acts.outs[inp].shape.clone());
                        let dxs = &mut dx[tgt].as_mut().unwrap().data;
                        for (o, d) in dxs.iter_mut().zip(&dy.data) {
                            *o += d;
                        }
                    }
                }
            }
            Op::Flatten => {
                let tgt = node.inputs[0];
                grab_into(dx, tgt, &xin(0).shape.clone());
                let dxs = &mut dx[tgt].as_mut().unwrap().data;
                for (o, d) in dxs.iter_mut().zip(&dy.data) {
                    *o += d;
                }
            }
            Op::Dropout { .. } => {
                let tgt = node.inputs[0];
                grab_into(dx, tgt, &xin(0).shape.clone());
                let dxs = &mut dx[tgt].as_mut().unwrap().data;
                match &acts.aux[idx] {
                    Aux::DropMask(mask) => {
                        for i in 0..dy.len() {
                            dxs[i] += dy.data[i] * mask[i];
                        }
                    }
                    _ => {
                        for (o, d) in dxs.iter_mut().zip(&dy.data) {
                            *o += d;
                        }
                    }
                }
            }
        }
    }

    /// One SGD step: p -= lr * (g * grad_scale), optional classical momentum.
    pub fn sgd_step(&mut self, gbuf: &GradBuf, lr: f32, grad_scale: f32, momentum: f32, velocity: &mut Vec<f32>) {
        if momentum != 0.0 && velocity.len() != self.grad_len {
            velocity.resize(self.grad_len, 0.0);
        }
        for idx in 0..self.nodes.len() {
            for (pi, p) in self.nodes[idx].params.iter_mut().enumerate() {
                if !p.trainable {
                    continue;
                }
                let (off, len) = self.layout[idx][pi];
                let g = &gbuf.data[off..off + len];
                if momentum != 0.0 {
                    let v = &mut velocity[off..off + len];
                    for i in 0..len {
                        v[i] = momentum * v[i] + g[i] * grad_scale;
                        p.data.data[i] -= lr * v[i];
                    }
                } else {
                    for i in 0..len {
                        p.data.data[i] -= lr * g[i] * grad_scale;
                    }
                }
            }
        }
    }
}

fn bn_params<'a>(node: &'a Node, scale: bool) -> (Option<&'a [f32]>, &'a [f32], &'a [f32], &'a [f32]) {
    if scale {
        (
            Some(&node.params[0].data.data),
            &node.params[1].data.data,
            &node.params[2].data.data,
            &node.params[3].data.data,
        )
    } else {
        (None, &node.params[0].data.data, &node.params[1].data.data, &node.params[2].data.data)
    }
}

fn op_tag(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Conv(_) => "conv",
        Op::DwConv(_) => "dwconv",
        Op::Dense { .. } => "dense",
        Op::BatchNorm { .. } => "bn",
        Op::Relu => "relu",
        Op::MaxPool(_) => "maxpool",
        Op::AvgPool(_) => "avgpool",
        Op::GlobalAvgPool => "gap",
        Op::GlobalMaxPool => "gmp",
        Op::ZeroPad { .. } => "pad",
        Op::Concat => "concat",
        Op::Add => "add",
        Op::Flatten => "flatten",
        Op::Dropout { .. } => "dropout",
    }
}
