//! VGG16 convolutional base: five blocks of 3x3 same-padded convolutions
//! (with biases, no batch norm), each followed by 2x2 max pooling.

use crate::nn::{ConvCfg, Graph, Op, Pad, WindowCfg};

fn conv_relu(g: &mut Graph, prev: usize, cout: usize) -> usize {
    let c = g.add(
        Op::Conv(ConvCfg { cout, kh: 3, kw: 3, sh: 1, sw: 1, pad: Pad::Same, bias: true }),
        &[prev],
    );
    g.add(Op::Relu, &[c])
}

fn pool(g: &mut Graph, prev: usize) -> usize {
    g.add(
        Op::MaxPool(WindowCfg { kh: 2, kw: 2, sh: 2, sw: 2, pad: Pad::Valid }),
        &[prev],
    )
}

pub fn build(g: &mut Graph) -> usize {
    let mut x = 0;
    for &(convs, width) in &[(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)] {
        for _ in 0..convs {
            x = conv_relu(g, x, width);
        }
        x = pool(g, x);
    }
    x // 512 x 7 x 7
}
