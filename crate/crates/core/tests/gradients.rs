use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wildfire_core::autonet::ops::{conv2d, conv2d_transpose};
use wildfire_core::autonet::{grad_check, grad_check_with, GraphBuilder, Head, Mode, ModelGraph, NodeId, Padding, Tensor};
use wildfire_core::train::{l2_penalty, weighted_bce};

const TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn check(model: &mut ModelGraph, input: &Tensor, eps: f64, tol: f64) {
    let r = grad_check(model, input, eps).unwrap();
    assert!(r.max_rel_error < tol, "{r:?}");
    assert!(r.checked > r.skipped, "{r:?}");
}

fn single(channels: usize, spatial: Option<(usize, usize)>, layer: impl FnOnce(&mut GraphBuilder, NodeId) -> NodeId, head: Head) -> ModelGraph {
    let mut g = GraphBuilder::new(channels, spatial, 21);
    layer(&mut g, GraphBuilder::INPUT);
    g.finish(head)
}

#[test]
fn conv_same_stride_one() {
    let mut m = single(2, None, |g, x| g.conv2d("c", x, 3, 3, 1, Padding::Same).unwrap(), Head::PixelMask);
    check(&mut m, &random(&[2, 5, 6, 2], 1), 1e-6, TOL);
}

#[test]
fn conv_same_stride_two_uneven() {
    let mut m = single(2, None, |g, x| g.conv2d("c", x, 2, 3, 2, Padding::Same).unwrap(), Head::PixelMask);
    check(&mut m, &random(&[1, 6, 5, 2], 2), 1e-6, TOL);
}

#[test]
fn conv_valid() {
    let mut m = single(3, None, |g, x| g.conv2d("c", x, 2, 2, 1, Padding::Valid).unwrap(), Head::PixelMask);
    check(&mut m, &random(&[2, 4, 4, 3], 3), 1e-6, TOL);
}

#[test]
fn conv_transpose() {
    let mut m = single(3, None, |g, x| g.conv2d_transpose("u", x, 2, 2, 2).unwrap(), Head::PixelMask);
    check(&mut m, &random(&[2, 3, 3, 3], 4), 1e-6, TOL);
    let mut m = single(2, None, |g, x| g.conv2d_transpose("u", x, 2, 3, 1).unwrap(), Head::PixelMask);
    check(&mut m, &random(&[1, 3, 2, 2], 5), 1e-6, TOL);
}

#[test]
fn maxpool() {
    let mut m = single(2, None, |g, x| g.maxpool2("p", x).unwrap(), Head::PixelMask);
    check(&mut m, &random(&[2, 4, 6, 2], 6), 1e-6, TOL);
}

#[test]
fn relu_and_sigmoid() {
    let mut m = single(2, None, |g, x| g.relu("r", x), Head::PixelMask);
    check(&mut m, &random(&[2, 3, 3, 2], 7), 1e-6, TOL);
    let mut m = single(2, None, |g, x| g.sigmoid("s", x), Head::PixelMask);
    check(&mut m, &random(&[2, 3, 3, 2], 8), 1e-6, TOL);
}

#[test]
fn batchnorm() {
    let mut m = single(3, None, |g, x| g.batchnorm("bn", x), Head::PixelMask);
    // non-trivial gain and shift
    for p in m.params.iter_mut().filter(|p| p.trainable) {
        let seed = p.name.len() as u64;
        p.value = random(p.value.shape(), seed).map(|v| v + 1.5);
    }
    check(&mut m, &random(&[2, 3, 4, 3], 9), 1e-6, TOL);
}

#[test]
fn dropout_with_fixed_mask() {
    let mut m = single(2, None, |g, x| g.dropout("d", x, 0.3).unwrap(), Head::PixelMask);
    m.set_step(17);
    check(&mut m, &random(&[2, 4, 4, 2], 10), 1e-6, TOL);
}

#[test]
fn concat_and_flatten() {
    let mut m = single(
        2,
        None,
        |g, x| {
            let c = g.conv2d("c", x, 3, 1, 1, Padding::Same).unwrap();
            g.concat("cat", c, x).unwrap()
        },
        Head::PixelMask,
    );
    check(&mut m, &random(&[1, 3, 3, 2], 11), 1e-6, TOL);
    let mut m = single(2, Some((3, 3)), |g, x| g.flatten("f", x).unwrap(), Head::Classifier);
    check(&mut m, &random(&[2, 3, 3, 2], 12), 1e-6, TOL);
}

#[test]
fn dense_is_exact_to_1e9() {
    let mut g = GraphBuilder::new(2, Some((2, 3)), 5);
    let f = g.flatten("f", GraphBuilder::INPUT).unwrap();
    g.dense("d", f, 4).unwrap();
    let mut m = g.finish(Head::Classifier);
    // linear in every single coordinate: central differences carry rounding error only
    check(&mut m, &random(&[3, 2, 3, 2], 13), 1e-4, 1e-9);
}

#[test]
fn desk_fcn_end_to_end() {
    let (mut m, _) = wildfire_core::models::build_fcn(&wildfire_core::FcnConfig { base_width: 2, depth: 2, input_channels: 2 }, 3).unwrap();
    check(&mut m, &random(&[2, 4, 4, 2], 14), 1e-6, TOL);
}

#[test]
fn weighted_bce_plus_l2_through_two_layers() {
    let mut g = GraphBuilder::new(2, None, 8);
    let c1 = g.conv2d("c1", GraphBuilder::INPUT, 4, 3, 1, Padding::Same).unwrap();
    g.set_l2(c1, 3e-3).unwrap();
    let r = g.relu("r", c1);
    let c2 = g.conv2d("c2", r, 1, 3, 1, Padding::Same).unwrap();
    g.set_l2(c2, 3e-3).unwrap();
    g.sigmoid("s", c2);
    let mut m = g.finish(Head::PixelMask);
    let x = random(&[2, 5, 5, 2], 15);
    let y = Tensor::from_fn(&[2, 5, 5, 1], |i| f64::from(u8::from(i % 7 == 0)));
    let r = grad_check_with(&mut m, &x, 1e-6, |m, x, with_grad| {
        let out = m.forward(x, Mode::Train)?;
        let (loss, g) = weighted_bce(&out, &y, 6.0)?;
        let total = loss + l2_penalty(m, with_grad);
        let gx = if with_grad { Some(m.backward(&g)?) } else { None };
        Ok((total, gx))
    })
    .unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}

/// Swaps the two channel axes of a `[kh, kw, a, b]` kernel.
fn swap_channels(k: &Tensor) -> Tensor {
    let s = k.shape();
    let (kh, kw, a, b) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[kh, kw, b, a]);
    for y in 0..kh {
        for x in 0..kw {
            for i in 0..a {
                for j in 0..b {
                    out.data_mut()[((y * kw + x) * b + j) * a + i] = k.data()[((y * kw + x) * a + i) * b + j];
                }
            }
        }
    }
    out
}

#[test]
fn transpose_conv_is_the_adjoint_of_valid_conv() {
    for (stride, size, h, w) in [(1, 3, 5, 6), (2, 2, 6, 8), (2, 3, 7, 5)] {
        let (a, b) = (3, 2);
        let k = random(&[size, size, a, b], 16 + stride as u64);
        let z = random(&[2, h, w, a], 17);
        let y = conv2d(&z, &k, &Tensor::zeros(&[b]), stride, Padding::Valid).unwrap();
        let x = random(y.shape(), 18);
        let back = conv2d_transpose(&x, &swap_channels(&k), &Tensor::zeros(&[a]), stride).unwrap();
        assert_eq!(back.shape(), z.shape());
        let lhs = y.dot(&x);
        let rhs = z.dot(&back);
        assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
