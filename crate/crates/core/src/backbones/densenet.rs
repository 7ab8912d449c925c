//! DenseNet-121: growth rate 32, block configuration [6, 12, 24, 16],
//! BN-ReLU-Conv ordering, halving transitions, final batch norm.

use crate::nn::{ConvCfg, Graph, Op, Pad, WindowCfg};

const GROWTH: usize = 32;

fn bn_relu(g: &mut Graph, prev: usize) -> usize {
    let b = g.add(Op::BatchNorm { scale: true }, &[prev]);
    g.add(Op::Relu, &[b])
}

fn conv(g: &mut Graph, prev: usize, cout: usize, k: usize, stride: usize, pad: Pad) -> usize {
    g.add(
        Op::Conv(ConvCfg { cout, kh: k, kw: k, sh: stride, sw: stride, pad, bias: false }),
        &[prev],
    )
}

/// One dense layer: bottleneck 1x1 to 4*growth, then 3x3 to growth channels,
/// concatenated onto the running feature map.
fn dense_layer(g: &mut Graph, x: usize) -> usize {
    let y = bn_relu(g, x);
    let y = conv(g, y, 4 * GROWTH, 1, 1, Pad::Valid);
    let y = bn_relu(g, y);
    let y = conv(g, y, GROWTH, 3, 1, Pad::Same);
    g.add(Op::Concat, &[x, y])
}

fn transition(g: &mut Graph, x: usize, channels: usize) -> usize {
    let y = bn_relu(g, x);
    let y = conv(g, y, channels / 2, 1, 1, Pad::Valid);
    g.add(
        Op::AvgPool(WindowCfg { kh: 2, kw: 2, sh: 2, sw: 2, pad: Pad::Valid }),
        &[y],
    )
}

pub fn build(g: &mut Graph) -> usize {
    let p = g.add(Op::ZeroPad { t: 3, b: 3, l: 3, r: 3 }, &[0]);
    let x = conv(g, p, 64, 7, 2, Pad::Valid);
    let x = bn_relu(g, x);
    let x = g.add(Op::ZeroPad { t: 1, b: 1, l: 1, r: 1 }, &[x]);
    let mut x = g.add(
        Op::MaxPool(WindowCfg { kh: 3, kw: 3, sh: 2, sw: 2, pad: Pad::Valid }),
        &[x],
    );
    let mut channels = 64;
    for (bi, &layers) in [6usize, 12, 24, 16].iter().enumerate() {
        for _ in 0..layers {
            x = dense_layer(g, x);
            channels += GROWTH;
        }
        if bi < 3 {
            x = transition(g, x, channels);
            channels /= 2;
        }
    }
    bn_relu(g, x) // 1024 x 7 x 7
}
