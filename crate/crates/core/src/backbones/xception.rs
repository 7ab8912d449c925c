//! Xception: depthwise-separable convolutions with residual connections in
//! entry / middle / exit flows. Separable convs are bias-free; batch norm
//! (learned scale) follows each conv and separable conv.

use crate::nn::{ConvCfg, Graph, Op, Pad, WindowCfg};

fn bn(g: &mut Graph, prev: usize) -> usize {
    g.add(Op::BatchNorm { scale: true }, &[prev])
}

/// SeparableConv2D: depthwise 3x3 + pointwise 1x1, both bias-free.
fn sepconv(g: &mut Graph, prev: usize, cout: usize) -> usize {
    let dw = g.add(
        Op::DwConv(WindowCfg { kh: 3, kw: 3, sh: 1, sw: 1, pad: Pad::Same }),
        &[prev],
    );
    g.add(
        Op::Conv(ConvCfg { cout, kh: 1, kw: 1, sh: 1, sw: 1, pad: Pad::Same, bias: false }),
        &[dw],
    )
}

/// Entry-flow downsampling block with a strided 1x1 residual projection.
fn entry_block(g: &mut Graph, x: usize, cout: usize, leading_relu: bool) -> usize {
    let res = g.add(
        Op::Conv(ConvCfg { cout, kh: 1, kw: 1, sh: 2, sw: 2, pad: Pad::Same, bias: false }),
        &[x],
    );
    let res = bn(g, res);
    let mut y = x;
    if leading_relu {
        y = g.add(Op::Relu, &[y]);
    }
    let y = sepconv(g, y, cout);
    let y = bn(g, y);
    let y = g.add(Op::Relu, &[y]);
    let y = sepconv(g, y, cout);
    let y = bn(g, y);
    let y = g.add(
        Op::MaxPool(WindowCfg { kh: 3, kw: 3, sh: 2, sw: 2, pad: Pad::Same }),
        &[y],
    );
    g.add(Op::Add, &[res, y])
}

fn middle_block(g: &mut Graph, x: usize) -> usize {
    let mut y = x;
    for _ in 0..3 {
        y = g.add(Op::Relu, &[y]);
        y = sepconv(g, y, 728);
        y = bn(g, y);
    }
    g.add(Op::Add, &[x, y])
}

pub fn build(g: &mut Graph) -> usize {
    let c1 = g.add(
        Op::Conv(ConvCfg { cout: 32, kh: 3, kw: 3, sh: 2, sw: 2, pad: Pad::Valid, bias: false }),
        &[0],
    );
    let x = bn(g, c1);
    let x = g.add(Op::Relu, &[x]);
    let c2 = g.add(
        Op::Conv(ConvCfg { cout: 64, kh: 3, kw: 3, sh: 1, sw: 1, pad: Pad::Valid, bias: false }),
        &[x],
    );
    let x = bn(g, c2);
    let x = g.add(Op::Relu, &[x]);

    let x = entry_block(g, x, 128, false);
    let x = entry_block(g, x, 256, true);
    let mut x = entry_block(g, x, 728, true);

    for _ in 0..8 {
        x = middle_block(g, x);
    }

    // exit flow
    let res = g.add(
        Op::Conv(ConvCfg { cout: 1024, kh: 1, kw: 1, sh: 2, sw: 2, pad: Pad::Same, bias: false }),
        &[x],
    );
    let res = bn(g, res);
    let y = g.add(Op::Relu, &[x]);
    let y = sepconv(g, y, 728);
    let y = bn(g, y);
    let y = g.add(Op::Relu, &[y]);
    let y = sepconv(g, y, 1024);
    let y = bn(g, y);
    let y = g.add(
        Op::MaxPool(WindowCfg { kh: 3, kw: 3, sh: 2, sw: 2, pad: Pad::Same }),
        &[y],
    );
    let x = g.add(Op::Add, &[res, y]);

    let y = sepconv(g, x, 1536);
    let y = bn(g, y);
    let y = g.add(Op::Relu, &[y]);
    let y = sepconv(g, y, 2048);
    let y = bn(g, y);
    g.add(Op::Relu, &[y]) // 2048 x 7 x 7
}
