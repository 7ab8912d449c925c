//! Inception v3: factorized-convolution stem plus eleven mixed blocks.
//! Every conv is bias-free and followed by batch norm without a learned
//! scale (beta only), then ReLU.

use crate::nn::{ConvCfg, Graph, Op, Pad, WindowCfg};

/// conv + BN(scale=false) + relu
fn cb(g: &mut Graph, prev: usize, cout: usize, kh: usize, kw: usize, stride: usize, pad: Pad) -> usize {
    let c = g.add(
        Op::Conv(ConvCfg { cout, kh, kw, sh: stride, sw: stride, pad, bias: false }),
        &[prev],
    );
    let b = g.add(Op::BatchNorm { scale: false }, &[c]);
    g.add(Op::Relu, &[b])
}

fn avg3(g: &mut Graph, prev: usize) -> usize {
    g.add(
        Op::AvgPool(WindowCfg { kh: 3, kw: 3, sh: 1, sw: 1, pad: Pad::Same }),
        &[prev],
    )
}

fn max3s2(g: &mut Graph, prev: usize) -> usize {
    g.add(
        Op::MaxPool(WindowCfg { kh: 3, kw: 3, sh: 2, sw: 2, pad: Pad::Valid }),
        &[prev],
    )
}

/// 35x35-style block: 1x1 / 5x5 / double-3x3 / pooled branches.
fn block_a(g: &mut Graph, x: usize, pool_features: usize) -> usize {
    let b0 = cb(g, x, 64, 1, 1, 1, Pad::Same);
    let b1 = cb(g, x, 48, 1, 1, 1, Pad::Same);
    let b1 = cb(g, b1, 64, 5, 5, 1, Pad::Same);
    let b2 = cb(g, x, 64, 1, 1, 1, Pad::Same);
    let b2 = cb(g, b2, 96, 3, 3, 1, Pad::Same);
    let b2 = cb(g, b2, 96, 3, 3, 1, Pad::Same);
    let b3 = avg3(g, x);
    let b3 = cb(g, b3, pool_features, 1, 1, 1, Pad::Same);
    g.add(Op::Concat, &[b0, b1, b2, b3])
}

/// 17x17-style block with factorized 7x7 branches of width `f`.
fn block_b(g: &mut Graph, x: usize, f: usize) -> usize {
    let b0 = cb(g, x, 192, 1, 1, 1, Pad::Same);
    let b1 = cb(g, x, f, 1, 1, 1, Pad::Same);
    let b1 = cb(g, b1, f, 1, 7, 1, Pad::Same);
    let b1 = cb(g, b1, 192, 7, 1, 1, Pad::Same);
    let b2 = cb(g, x, f, 1, 1, 1, Pad::Same);
    let b2 = cb(g, b2, f, 7, 1, 1, Pad::Same);
    let b2 = cb(g, b2, f, 1, 7, 1, Pad::Same);
    let b2 = cb(g, b2, f, 7, 1, 1, Pad::Same);
    let b2 = cb(g, b2, 192, 1, 7, 1, Pad::Same);
    let b3 = avg3(g, x);
    let b3 = cb(g, b3, 192, 1, 1, 1, Pad::Same);
    g.add(Op::Concat, &[b0, b1, b2, b3])
}

/// 8x8-style block with split 1x3 / 3x1 branch pairs.
fn block_c(g: &mut Graph, x: usize) -> usize {
    let b0 = cb(g, x, 320, 1, 1, 1, Pad::Same);
    let b1 = cb(g, x, 384, 1, 1, 1, Pad::Same);
    let b1a = cb(g, b1, 384, 1, 3, 1, Pad::Same);
    let b1b = cb(g, b1, 384, 3, 1, 1, Pad::Same);
    let b1 = g.add(Op::Concat, &[b1a, b1b]);
    let b2 = cb(g, x, 448, 1, 1, 1, Pad::Same);
    let b2 = cb(g, b2, 384, 3, 3, 1, Pad::Same);
    let b2a = cb(g, b2, 384, 1, 3, 1, Pad::Same);
    let b2b = cb(g, b2, 384, 3, 1, 1, Pad::Same);
    let b2 = g.add(Op::Concat, &[b2a, b2b]);
    let b3 = avg3(g, x);
    let b3 = cb(g, b3, 192, 1, 1, 1, Pad::Same);
    g.add(Op::Concat, &[b0, b1, b2, b3])
}

pub fn build(g: &mut Graph) -> usize {
    let x = cb(g, 0, 32, 3, 3, 2, Pad::Valid);
    let x = cb(g, x, 32, 3, 3, 1, Pad::Valid);
    let x = cb(g, x, 64, 3, 3, 1, Pad::Same);
    let x = max3s2(g, x);
    let x = cb(g, x, 80, 1, 1, 1, Pad::Valid);
    let x = cb(g, x, 192, 3, 3, 1, Pad::Valid);
    let x = max3s2(g, x);

    let x = block_a(g, x, 32); // mixed0: 256
    let x = block_a(g, x, 64); // mixed1: 288
    let x = block_a(g, x, 64); // mixed2: 288

    // mixed3: downsample to 768
    let b0 = cb(g, x, 384, 3, 3, 2, Pad::Valid);
    let b1 = cb(g, x, 64, 1, 1, 1, Pad::Same);
    let b1 = cb(g, b1, 96, 3, 3, 1, Pad::Same);
    let b1 = cb(g, b1, 96, 3, 3, 2, Pad::Valid);
    let b2 = max3s2(g, x);
    let x = g.add(Op::Concat, &[b0, b1, b2]);

    let x = block_b(g, x, 128); // mixed4
    let x = block_b(g, x, 160); // mixed5
    let x = block_b(g, x, 160); // mixed6
    let x = block_b(g, x, 192); // mixed7

    // mixed8: downsample to 1280
    let b0 = cb(g, x, 192, 1, 1, 1, Pad::Same);
    let b0 = cb(g, b0, 320, 3, 3, 2, Pad::Valid);
    let b1 = cb(g, x, 192, 1, 1, 1, Pad::Same);
    let b1 = cb(g, b1, 192, 1, 7, 1, Pad::Same);
    let b1 = cb(g, b1, 192, 7, 1, 1, Pad::Same);
    let b1 = cb(g, b1, 192, 3, 3, 2, Pad::Valid);
    let b2 = max3s2(g, x);
    let x = g.add(Op::Concat, &[b0, b1, b2]);

    let x = block_c(g, x); // mixed9: 2048
    block_c(g, x) // mixed10: 2048
}
