//! MobileNet v1 (alpha = 1): a strided stem conv followed by thirteen
//! depthwise-separable blocks. All convs are bias-free with batch norm.

use crate::nn::{ConvCfg, Graph, Op, Pad, WindowCfg};

fn bn_relu(g: &mut Graph, prev: usize) -> usize {
    let b = g.add(Op::BatchNorm { scale: true }, &[prev]);
    g.add(Op::Relu, &[b])
}

fn separable(g: &mut Graph, prev: usize, cout: usize, stride: usize) -> usize {
    let dw = g.add(
        Op::DwConv(WindowCfg { kh: 3, kw: 3, sh: stride, sw: stride, pad: Pad::Same }),
        &[prev],
    );
    let x = bn_relu(g, dw);
    let pw = g.add(
        Op::Conv(ConvCfg { cout, kh: 1, kw: 1, sh: 1, sw: 1, pad: Pad::Same, bias: false }),
        &[x],
    );
    bn_relu(g, pw)
}

pub fn build(g: &mut Graph) -> usize {
    let stem = g.add(
        Op::Conv(ConvCfg { cout: 32, kh: 3, kw: 3, sh: 2, sw: 2, pad: Pad::Same, bias: false }),
        &[0],
    );
    let mut x = bn_relu(g, stem);
    for &(cout, stride) in &[
        (64, 1),
        (128, 2),
        (128, 1),
        (256, 2),
        (256, 1),
        (512, 2),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (512, 1),
        (1024, 2),
        (1024, 1),
    ] {
        x = separable(g, x, cout, stride);
    }
    x // 1024 x 7 x 7
}
