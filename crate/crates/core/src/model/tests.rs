use super::flops::{forward_flops, rin_flops};
use super::*;
use crate::geometry::EncodingConfig;
use grin_autodiff::GradCheckOptions;

fn tiny() -> ModelConfig {
    ModelConfig {
        latent_count: 4,
        latent_width: 8,
        token_width: 6,
        blocks: 1,
        block_depth: 1,
        read_write_heads: 2,
        latent_heads: 2,
        ff_mult: 2,
        local_kernel: 3,
        local_channels: 3,
        global_scales: 1,
        global_channels: 2,
        global_downsample: 2,
        encoding: EncodingConfig { bands_origin: 1, bands_ray: 2, ..Default::default() },
        ..ModelConfig::desk()
    }
}

fn image(h: usize, w: usize, seed: u64) -> Array {
    let data = (0..h * w * 3).map(|i| ((i as f64 + seed as f64 * 13.0) * 0.731).sin() * 0.5 + 0.5).collect();
    Array::new([h, w, 3], data).unwrap()
}

fn camera(h: usize, w: usize) -> Camera {
    Camera::new(w as f64 * 0.9, w as f64 * 0.9, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h).unwrap()
}

fn column(values: &[f64]) -> Array {
    Array::new([values.len(), 1], values.to_vec()).unwrap()
}

/// Full forward on `pixels` with the given noisy depths.
fn run<'t>(
    model: &GrinModel,
    p: &Bound<'t>,
    img: &Array,
    cam: &Camera,
    pixels: &[usize],
    depth: &[f64],
    t: f64,
) -> Var<'t> {
    let tape = p[model.latents].tape();
    let img_v = tape.constant(img.clone());
    let feats = model.local_features(p, &img_v, pixels).unwrap();
    let geom = model.local_geometry(cam, pixels).unwrap().map(|g| tape.constant(g));
    let d = tape.constant(column(depth));
    let local = model.local_tokens(p, &d, feats.as_ref(), geom.as_ref()).unwrap();
    let global = model.global_tokens(p, img, cam, None).unwrap();
    model.denoise(p, &local, global.as_ref(), t).unwrap()
}

#[test]
fn local_width_matches_formula() {
    let cfg = ModelConfig { local_channels: 128, ..ModelConfig::desk() };
    assert_eq!(cfg.local_in_width(), 333);
    let no_img = ModelConfig { local_image: false, ..cfg.clone() };
    assert_eq!(no_img.local_in_width(), 205);
    let no_geo = ModelConfig { local_geometry: false, ..cfg };
    assert_eq!(no_geo.local_in_width(), 129);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(ModelConfig { local_kernel: 4, ..tiny() }.validate().is_err());
    assert!(ModelConfig { latent_heads: 3, ..tiny() }.validate().is_err());
    assert!(ModelConfig { global_downsample: 3, ..tiny() }.validate().is_err());
    assert!(ModelConfig { self_condition: true, ..tiny() }.validate().is_err());
    assert!(ModelConfig::large().validate().is_ok());
}

#[test]
fn zero_image_gives_zero_features() {
    let mut model = GrinModel::new(tiny(), 1).unwrap();
    let conv = model.local_conv.clone().unwrap();
    let bias = &mut model.store.iter_mut().nth(conv.b.0).unwrap().value;
    *bias = Array::zeros(bias.shape().to_vec());
    let tape = Tape::no_grad();
    let p = model.bind(&tape);
    let f = model.local_features_dense(&p, &tape.constant(Array::zeros([4, 5, 3]))).unwrap().unwrap();
    assert_eq!(f.shape(), &[20, 3]);
    assert!(f.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn local_feature_equals_hand_convolution() {
    let model = GrinModel::new(tiny(), 2).unwrap();
    let conv = model.local_conv.as_ref().unwrap();
    let img = image(4, 5, 0);
    let tape = Tape::no_grad();
    let p = model.bind(&tape);
    let dense = model.local_features_dense(&p, &tape.constant(img.clone())).unwrap().unwrap();
    let w = model.store.get(conv.w).value.clone();
    let b = model.store.get(conv.b).value.clone();
    // Centre pixel (u=2, v=1): interior, so no padding is involved.
    let (u, v) = (2usize, 1usize);
    for c in 0..3 {
        let mut acc = b.data()[c];
        for ky in 0..3 {
            for kx in 0..3 {
                for ch in 0..3 {
                    let px = img.data()[((v + ky - 1) * 5 + (u + kx - 1)) * 3 + ch];
                    acc += px * w.data()[((ky * 3 + kx) * 3 + ch) * 3 + c];
                }
            }
        }
        assert!((dense.value().data()[(v * 5 + u) * 3 + c] - acc).abs() < 1e-12);
    }
}

#[test]
fn sparse_local_tokens_equal_gathered_dense_tokens() {
    let model = GrinModel::new(tiny(), 3).unwrap();
    let (h, w) = (6, 7);
    let img = image(h, w, 1);
    let cam = camera(h, w);
    let pixels = [0usize, 8, 13, 20, 41];
    let depth_grid: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.37).cos()).collect();
    let tape = Tape::no_grad();
    let p = model.bind(&tape);
    let iv = tape.constant(img);

    let sel: Vec<f64> = pixels.iter().map(|&i| depth_grid[i]).collect();
    let f = model.local_features(&p, &iv, &pixels).unwrap();
    let g = model.local_geometry(&cam, &pixels).unwrap().map(|g| tape.constant(g));
    let sparse = model.local_tokens(&p, &tape.constant(column(&sel)), f.as_ref(), g.as_ref()).unwrap();

    let fd = model.local_features_dense(&p, &iv).unwrap();
    let gd = model.local_geometry_dense(&cam).unwrap().map(|g| tape.constant(g));
    let dense = model.local_tokens(&p, &tape.constant(column(&depth_grid)), fd.as_ref(), gd.as_ref()).unwrap();
    let gathered = dense.gather(&pixels).unwrap();
    let bits = |v: &Var| v.value().data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&sparse), bits(&gathered));
}

#[test]
fn local_tokens_are_per_pixel() {
    let model = GrinModel::new(tiny(), 4).unwrap();
    let (h, w) = (5, 5);
    let img = image(h, w, 2);
    let cam = camera(h, w);
    let tape = Tape::no_grad();
    let p = model.bind(&tape);
    let iv = tape.constant(img);
    let tokens = |pixels: &[usize]| {
        let d: Vec<f64> = pixels.iter().map(|&i| i as f64 / 25.0).collect();
        let f = model.local_features(&p, &iv, pixels).unwrap();
        let g = model.local_geometry(&cam, pixels).unwrap().map(|g| tape.constant(g));
        model.local_tokens(&p, &tape.constant(column(&d)), f.as_ref(), g.as_ref()).unwrap().value().clone()
    };
    let all = tokens(&[3, 17, 9]);
    let single = tokens(&[17]);
    let perm = tokens(&[9, 3, 17]);
    let row = |a: &Array, r: usize| a.data()[r * 6..(r + 1) * 6].to_vec();
    assert_eq!(row(&all, 1), row(&single, 0));
    assert_eq!(row(&perm, 0), row(&all, 2));
    assert_eq!(row(&perm, 1), row(&all, 0));
    assert_eq!(row(&perm, 2), row(&all, 1));
}

#[test]
fn global_token_count_and_padding() {
    let cfg = tiny();
    let model = GrinModel::new(cfg.clone(), 5).unwrap();
    let tape = Tape::no_grad();
    let p = model.bind(&tape);
    // 8×8 with d=2: 4×4 cells.
    let g = model.global_tokens(&p, &image(8, 8, 0), &camera(8, 8), None).unwrap().unwrap();
    assert_eq!(g.shape(), &[16, 6]);
    // 7×9 pads to 8×12 and drops the cells that are only padding.
    let g = model.global_tokens(&p, &image(7, 9, 0), &camera(7, 9), None).unwrap().unwrap();
    assert_eq!(g.shape()[0], 4 * 5);
    assert_eq!(cfg.global_token_count(7, 9), 20);
    let single = ModelConfig { global_scales: 0, ..tiny() };
    let m0 = GrinModel::new(single, 5).unwrap();
    let p0 = m0.bind(&tape);
    let f = m0.global_features(&p0, &image(8, 8, 0)).unwrap().unwrap();
    assert_eq!(f.shape(), &[16, 2]);
}

#[test]
fn coarse_scale_sees_distant_corner() {
    let cfg = ModelConfig { global_scales: 2, global_downsample: 4, ..tiny() };
    let model = GrinModel::new(cfg, 6).unwrap();
    let tape = Tape::no_grad();
    let p = model.bind(&tape);
    let img = image(16, 16, 3);
    let mut moved = img.clone();
    let n = moved.len();
    for c in 0..3 {
        moved.data_mut()[n - 3 + c] += 0.5;
    }
    let a = model.global_features(&p, &img).unwrap().unwrap();
    let b = model.global_features(&p, &moved).unwrap().unwrap();
    let width = a.shape()[1];
    assert_ne!(a.value().data()[..width], b.value().data()[..width]);
}

#[test]
fn zeroed_block_is_identity() {
    let mut model = GrinModel::new(tiny(), 7).unwrap();
    for p in model.store.iter_mut() {
        if p.name.starts_with("block") && !p.name.ends_with("gain") {
            p.value = Array::zeros(p.value.shape().to_vec());
        }
    }
    let tape = Tape::no_grad();
    let p = model.bind(&tape);
    let x = tape.constant(image(5, 2, 0).reshaped([5, 6]).unwrap());
    let z = tape.constant(Array::new([4, 8], (0..32).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap());
    let t0 = tape.constant(Array::zeros([1, 8]));
    let (x2, z2) = model.blocks[0].forward(&p, &x, &z, &t0).unwrap();
    assert_eq!(x2.value(), x.value());
    assert_eq!(z2.value(), z.value());
}

#[test]
fn block_is_permutation_equivariant_in_tokens() {
    let model = GrinModel::new(tiny(), 8).unwrap();
    let tape = Tape::no_grad();
    let p = model.bind(&tape);
    let x = tape.constant(image(5, 2, 4).reshaped([5, 6]).unwrap());
    let z = p[model.latents].clone();
    let te = model.time_embedding(&p, 0.3).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let (xa, za) = model.blocks[0].forward(&p, &x, &z, &te).unwrap();
    let (xb, zb) = model.blocks[0].forward(&p, &x.gather(&perm).unwrap(), &z, &te).unwrap();
    let xa_perm = xa.gather(&perm).unwrap();
    for (a, b) in xa_perm.value().data().iter().zip(xb.value().data()) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in za.value().data().iter().zip(zb.value().data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn output_length_follows_local_tokens() {
    let model = GrinModel::new(tiny(), 9).unwrap();
    let (h, w) = (8, 8);
    let (img, cam) = (image(h, w, 5), camera(h, w));
    let tape = Tape::no_grad();
    let p = model.bind(&tape);
    let out = run(&model, &p, &img, &cam, &[1, 5, 60], &[0.1, 0.5, -0.3], 0.4);
    assert_eq!(out.shape(), &[3, 1]);
    let again = run(&model, &p, &img, &cam, &[1, 5, 60], &[0.1, 0.5, -0.3], 0.4);
    assert_eq!(out.value(), again.value());

    let iv = tape.constant(img.clone());
    let f = model.local_features(&p, &iv, &[2]).unwrap();
    let g = model.local_geometry(&cam, &[2]).unwrap().map(|g| tape.constant(g));
    let local = model.local_tokens(&p, &tape.constant(column(&[0.2])), f.as_ref(), g.as_ref()).unwrap();
    let no_global = model.denoise(&p, &local, None, 0.9).unwrap();
    assert_eq!(no_global.shape(), &[1, 1]);
    assert!(no_global.value().is_finite());
}

#[test]
fn global_token_order_does_not_matter() {
    let model = GrinModel::new(tiny(), 10).unwrap();
    let (h, w) = (8, 8);
    let (img, cam) = (image(h, w, 6), camera(h, w));
    let tape = Tape::no_grad();
    let p = model.bind(&tape);
    let iv = tape.constant(img.clone());
    let pixels = [4, 30, 33];
    let f = model.local_features(&p, &iv, &pixels).unwrap();
    let g = model.local_geometry(&cam, &pixels).unwrap().map(|g| tape.constant(g));
    let local = model.local_tokens(&p, &tape.constant(column(&[0.3, 0.6, 0.9])), f.as_ref(), g.as_ref()).unwrap();
    let a = model.global_tokens(&p, &img, &cam, Some(&[0, 5, 9, 14])).unwrap().unwrap();
    let b = model.global_tokens(&p, &img, &cam, Some(&[14, 0, 9, 5])).unwrap().unwrap();
    let ya = model.denoise(&p, &local, Some(&a), 0.5).unwrap();
    let yb = model.denoise(&p, &local, Some(&b), 0.5).unwrap();
    for (x, y) in ya.value().data().iter().zip(yb.value().data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn unselected_depth_inputs_get_zero_gradient() {
    let model = GrinModel::new(tiny(), 11).unwrap();
    let (h, w) = (6, 6);
    let (img, cam) = (image(h, w, 7), camera(h, w));
    let tape = Tape::new();
    let p = model.bind(&tape);
    let depth = tape.param(column(&(0..h * w).map(|i| i as f64 / 36.0).collect::<Vec<_>>()));
    let iv = tape.constant(img.clone());
    let fd = model.local_features_dense(&p, &iv).unwrap();
    let gd = model.local_geometry_dense(&cam).unwrap().map(|g| tape.constant(g));
    let tokens = model.local_tokens(&p, &depth, fd.as_ref(), gd.as_ref()).unwrap();
    let selected = [2usize, 7, 19, 33];
    let local = tokens.gather(&selected).unwrap();
    let global = model.global_tokens(&p, &img, &cam, None).unwrap();
    let loss = model.denoise(&p, &local, global.as_ref(), 0.7).unwrap().square().unwrap().mean().unwrap();
    let g = tape.backward(&loss).unwrap().wrt(&depth);
    for (i, v) in g.data().iter().enumerate() {
        if selected.contains(&i) {
            assert_ne!(*v, 0.0);
        } else {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn instrumented_flops_match_closed_form() {
    let cfg = ModelConfig { global_scales: 2, global_downsample: 4, ..tiny() };
    let model = GrinModel::new(cfg.clone(), 12).unwrap();
    let (h, w) = (16, 12);
    let (img, cam) = (image(h, w, 8), camera(h, w));
    for pixels in [vec![0usize, 7, 100], (0..40).collect::<Vec<_>>()] {
        let tape = Tape::no_grad();
        let p = model.bind(&tape);
        let depth = vec![0.5; pixels.len()];
        run(&model, &p, &img, &cam, &pixels, &depth, 0.2);
        let expected = forward_flops(&cfg, pixels.len(), cfg.global_token_count(h, w), h, w);
        assert_eq!(tape.flops(), expected.as_map());
    }
}

#[test]
fn compute_stage_is_independent_of_token_count() {
    let cfg = ModelConfig::desk();
    assert_eq!(rin_flops(&cfg, 100).compute, rin_flops(&cfg, 10_000).compute);
    let (small, large) = (rin_flops(&cfg, 100), rin_flops(&cfg, 10_000));
    assert_eq!(large.read, 100 * small.read);
    assert_eq!(large.write, 100 * small.write);
}

#[test]
fn full_loss_matches_finite_differences() {
    let model = GrinModel::new(tiny(), 13).unwrap();
    let (h, w) = (6, 6);
    let (img, cam) = (image(h, w, 9), camera(h, w));
    let pixels = [3usize, 14, 22, 35];
    let noise = [0.4, -1.2, 0.7, 0.1];
    let params: Vec<Array> = model.store.iter().map(|p| p.value.clone()).collect();
    let report = grin_autodiff::grad_check(
        |tape, vars| {
            let mut m = model.clone();
            for (dst, v) in m.store.iter_mut().zip(vars) {
                dst.value = v.value().clone();
            }
            let p = Bound::from_vars(vars.to_vec());
            let out = run(&m, &p, &img, &cam, &pixels, &[0.2, 0.5, 0.8, 0.3], 0.6);
            let _ = tape;
            crate::diffusion::training_loss_var(&out, &noise, &noise, 0.3, crate::diffusion::LossMode::Epsilon).map_err(
                |e| match e {
                    crate::Error::Tensor(t) => t,
                    other => grin_autodiff::Error::InvalidArgument { op: "loss", msg: other.to_string() },
                },
            )
        },
        &params,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "max rel error {:.3e}", report.max_rel_error());
}
