//! ResNet-50 v1: 7x7 stem then bottleneck stages [3, 4, 6, 3].
//! Convolutions carry biases and every conv is followed by batch norm with
//! learned scale, matching the reference implementation's totals.

use crate::nn::{ConvCfg, Graph, Op, Pad, WindowCfg};

fn conv(g: &mut Graph, prev: usize, cout: usize, k: usize, stride: usize, pad: Pad) -> usize {
    g.add(
        Op::Conv(ConvCfg { cout, kh: k, kw: k, sh: stride, sw: stride, pad, bias: true }),
        &[prev],
    )
}

fn conv_bn(g: &mut Graph, prev: usize, cout: usize, k: usize, stride: usize, pad: Pad) -> usize {
    let c = conv(g, prev, cout, k, stride, pad);
    g.add(Op::BatchNorm { scale: true }, &[c])
}

fn bottleneck(g: &mut Graph, x: usize, filters: usize, stride: usize, conv_shortcut: bool) -> usize {
    let shortcut = if conv_shortcut {
        conv_bn(g, x, 4 * filters, 1, stride, Pad::Valid)
    } else {
        x
    };
    let y = conv_bn(g, x, filters, 1, stride, Pad::Valid);
    let y = g.add(Op::Relu, &[y]);
    let y = conv_bn(g, y, filters, 3, 1, Pad::Same);
    let y = g.add(Op::Relu, &[y]);
    let y = conv_bn(g, y, 4 * filters, 1, 1, Pad::Valid);
    let sum = g.add(Op::Add, &[shortcut, y]);
    g.add(Op::Relu, &[sum])
}

pub fn build(g: &mut Graph) -> usize {
    let p = g.add(Op::ZeroPad { t: 3, b: 3, l: 3, r: 3 }, &[0]);
    let x = conv_bn(g, p, 64, 7, 2, Pad::Valid);
    let x = g.add(Op::Relu, &[x]);
    let x = g.add(Op::ZeroPad { t: 1, b: 1, l: 1, r: 1 }, &[x]);
    let mut x = g.add(
        Op::MaxPool(WindowCfg { kh: 3, kw: 3, sh: 2, sw: 2, pad: Pad::Valid }),
        &[x],
    );
    for &(filters, blocks, stride) in &[(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)] {
        x = bottleneck(g, x, filters, stride, true);
        for _ in 1..blocks {
            x = bottleneck(g, x, filters, 1, false);
        }
    }
    x // 2048 x 7 x 7
}
