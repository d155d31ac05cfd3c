use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::Camera;

fn desk_scene(seed: u64) -> Scene {
    generate_scene(seed, &CameraProfile::desk().camera(40.0), 3, 200.0)
}

#[test]
fn ppm_roundtrip_is_exact() {
    let s = desk_scene(1);
    let back = Image::from_ppm(&s.image.to_ppm()).unwrap();
    assert_eq!(back, s.image);
    let with_comment = b"P6\n# made by hand\n1 1\n255\n\x00\x80\xff";
    let px = Image::from_ppm(with_comment).unwrap();
    assert_eq!(px.pixel(0, 0), [0.0, 128.0 / 255.0, 1.0]);
    assert!(Image::from_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
    assert!(Image::from_ppm(b"P6\n2 2\n255\n\x00").is_err());
}

#[test]
fn depth_file_roundtrip_and_header() {
    let s = desk_scene(2);
    let bytes = s.depth.to_bytes();
    assert!(bytes.starts_with(b"DEPTHMAP v1 64 48\n"));
    assert_eq!(bytes.len(), "DEPTHMAP v1 64 48\n".len() + 64 * 48 * 4);
    assert_eq!(DepthMap::from_bytes(&bytes).unwrap(), s.depth);
    assert!(DepthMap::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn sparse_text_roundtrip_and_errors() {
    let s = desk_scene(3);
    let sp = sparsify(&s.depth, SparsityPattern::Uniform, 0.1, 9).unwrap();
    assert_eq!(SparseDepthMap::from_text(&sp.to_text()).unwrap(), sp);
    assert!(SparseDepthMap::from_text("SPARSE v1 4 4 1\n5 0 1.0\n").is_err());
    assert!(SparseDepthMap::from_text("SPARSE v1 4 4 2\n1 1 1.0\n1 1 2.0\n").is_err());
    assert!(SparseDepthMap::from_text("SPARSE v1 4 4 2\n1 1 1.0\n").is_err());
    assert!(SparseDepthMap::from_text("SPARSE v1 4 4 1\n1 1 -1.0\n").is_err());
}

#[test]
fn sparse_records_match_dense_exactly() {
    let s = desk_scene(4);
    for pattern in [SparsityPattern::Uniform, SparsityPattern::Scanlines] {
        let sp = sparsify(&s.depth, pattern, 0.3, 4).unwrap();
        sp.validate().unwrap();
        assert!(sp.records.iter().all(|r| r.depth == s.depth.get(r.u, r.v)));
    }
}

#[test]
fn full_keep_and_scanline_rows() {
    let s = desk_scene(5);
    let all = sparsify(&s.depth, SparsityPattern::Uniform, 1.0, 0).unwrap();
    assert_eq!(all.records.len(), 64 * 48);
    let d = DepthMap::new(5, 8, vec![1.0; 40]).unwrap();
    let lines = sparsify(&d, SparsityPattern::Scanlines, 0.25, 0).unwrap();
    let mut rows: Vec<usize> = lines.records.iter().map(|r| r.v).collect();
    rows.dedup();
    assert_eq!(rows, vec![0, 4]);
    assert!(sparsify(&d, SparsityPattern::Uniform, 0.0, 0).is_err());
}

#[test]
fn uniform_sparsity_is_reproducible_and_near_expectation() {
    let s = desk_scene(6);
    let a = sparsify(&s.depth, SparsityPattern::Uniform, 0.1, 77).unwrap();
    assert_eq!(a, sparsify(&s.depth, SparsityPattern::Uniform, 0.1, 77).unwrap());
    let n = (64 * 48) as f64;
    let sigma = (n * 0.1 * 0.9).sqrt();
    assert!((a.records.len() as f64 - 0.1 * n).abs() <= 3.0 * sigma);
}

#[test]
fn supervision_sampling_edges() {
    let d = DepthMap::new(4, 3, vec![2.0; 12]).unwrap();
    let sp = sparsify(&d, SparsityPattern::Uniform, 1.0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(sample_supervision(&sp, 100, &mut rng).unwrap(), sp.pixel_ids());
    let one = sample_supervision(&sp, 1, &mut rng).unwrap();
    assert_eq!(one.len(), 1);
    assert!(sp.pixel_ids().contains(&one[0]));
    let empty = SparseDepthMap { width: 4, height: 3, records: vec![] };
    assert!(sample_supervision(&empty, 4, &mut rng).is_err());
    assert!(sample_supervision(&sp, 0, &mut rng).is_err());
    assert_eq!(sample_global(6, 10, &mut rng).unwrap(), vec![0, 1, 2, 3, 4, 5]);
    assert_eq!(sample_global(6, 1, &mut rng).unwrap().len(), 1);
}

/// Each item of `n` is drawn with probability `k/n`; counts over `trials`
/// draws must stay within three binomial standard deviations.
fn check_frequencies(counts: &[usize], k: usize, trials: usize) {
    let n = counts.len() as f64;
    let p = k as f64 / n;
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        let dev = (c as f64 - trials as f64 * p).abs();
        assert!(dev <= 3.0 * sigma + 1.0, "item {i}: {c} vs {}", trials as f64 * p);
    }
}

#[test]
fn supervision_frequencies_are_binomial() {
    let d = DepthMap::new(5, 4, vec![3.0; 20]).unwrap();
    let sp = sparsify(&d, SparsityPattern::Uniform, 0.5, 3).unwrap();
    let ids = sp.pixel_ids();
    let mut counts = [0; 20];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let s = sample_supervision(&sp, 3, &mut rng).unwrap();
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        for id in s {
            counts[id] += 1;
        }
    }
    let kept: Vec<usize> = ids.iter().map(|&i| counts[i]).collect();
    assert_eq!(kept.iter().sum::<usize>(), 30_000);
    check_frequencies(&kept, 3, 10_000);
}

#[test]
fn global_frequencies_are_binomial() {
    let mut counts = vec![0; 24];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        for id in sample_global(24, 6, &mut rng).unwrap() {
            counts[id] += 1;
        }
    }
    check_frequencies(&counts, 6, 10_000);
}

#[test]
fn identity_augmentation_changes_nothing() {
    let s = desk_scene(7);
    let sp = sparsify(&s.depth, SparsityPattern::Uniform, 0.2, 7).unwrap();
    let a = augment(&s, &sp, &AugmentSpec::identity(), 3).unwrap();
    assert_eq!(a.scene, s);
    assert_eq!(a.sparse, sp);
    assert!(a.valid.iter().all(|&v| v));
}

fn flip_only() -> AugmentSpec {
    AugmentSpec { flip_prob: 1.0, ..AugmentSpec::identity() }
}

#[test]
fn double_flip_restores_records() {
    let s = desk_scene(8);
    let sp = sparsify(&s.depth, SparsityPattern::Uniform, 0.2, 8).unwrap();
    let once = augment(&s, &sp, &flip_only(), 1).unwrap();
    assert_eq!(once.scene.camera.cx, 63.0 - s.camera.cx);
    assert_ne!(once.sparse, sp);
    let twice = augment(&once.scene, &once.sparse, &flip_only(), 2).unwrap();
    let sorted = |m: &SparseDepthMap| {
        let mut r: Vec<_> = m.records.iter().map(|r| (r.v, r.u, r.depth.to_bits())).collect();
        r.sort_unstable();
        r
    };
    assert_eq!(sorted(&twice.sparse), sorted(&sp));
    assert_eq!(twice.scene, s);
}

#[test]
fn half_resize_preserves_rays() {
    let s = desk_scene(9);
    let spec = AugmentSpec { scale: (0.5, 0.5), ..AugmentSpec::identity() };
    let a = augment(&s, &s.depth.to_sparse(), &spec, 4).unwrap();
    assert_eq!((a.scene.camera.width, a.scene.camera.height), (32, 24));
    for (u, v) in [(0.0, 0.0), (10.0, 7.0), (63.0, 47.0), (31.5, 20.25)] {
        let (x, y) = a.map.map_point(u, v);
        let r0 = s.camera.ray_unchecked(u, v);
        let r1 = a.scene.camera.ray_unchecked(x, y);
        assert!(r0.iter().zip(&r1).all(|(p, q)| (p - q).abs() < 1e-10));
    }
    // Four source pixels land on each output pixel; every one collides.
    assert!(a.sparse.records.len() < 32 * 24);
}

#[test]
fn collisions_drop_every_colliding_record() {
    let d = DepthMap::new(4, 2, (1..=8).map(f64::from).collect()).unwrap();
    let s = Scene { camera: CameraProfile::tiny().camera(10.0), depth: d.clone(), image: Image::filled(4, 2, 0.5) };
    let s = Scene { camera: Camera { width: 4, height: 2, ..s.camera }, ..s };
    let sp = SparseDepthMap {
        width: 4,
        height: 2,
        records: vec![SparseRecord { u: 0, v: 0, depth: 1.0 }, SparseRecord { u: 3, v: 1, depth: 8.0 }],
    };
    // ×0.5: (0,0)→(0,0) alone; (3,1)→(1.5,0.5) rounds to (2,1), outside 2×1.
    let spec = AugmentSpec { scale: (0.5, 0.5), ..AugmentSpec::identity() };
    let a = augment(&s, &sp, &spec, 0).unwrap();
    assert_eq!(a.sparse.records, vec![SparseRecord { u: 0, v: 0, depth: 1.0 }]);
    // Dense input: columns 1 and 2 both round to column 1 and are dropped,
    // row 1 rounds outside the image.
    let a = augment(&s, &d.to_sparse(), &spec, 0).unwrap();
    assert_eq!(a.sparse.records, vec![SparseRecord { u: 0, v: 0, depth: 1.0 }]);
}

#[test]
fn padding_is_masked() {
    let s = desk_scene(10);
    let spec = AugmentSpec { scale: (0.5, 0.5), crop: Some((40, 30)), ..AugmentSpec::identity() };
    let a = augment(&s, &s.depth.to_sparse(), &spec, 11).unwrap();
    assert_eq!(a.valid.iter().filter(|&&v| v).count(), 32 * 24);
    for (i, &ok) in a.valid.iter().enumerate() {
        if !ok {
            assert_eq!(a.scene.depth.data[i], 0.0);
        }
    }
    assert!(a.sparse.records.iter().all(|r| a.valid[r.v * 40 + r.u]));
}

#[test]
fn dataset_roundtrip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GenSpec { val_scenes: 1, ..GenSpec::new(2, 4, CameraProfile::tiny()) };
    let entries = spec.generate().unwrap();
    assert_eq!(entries.iter().filter(|e| e.split == Split::Val).count(), 1);
    let held = CameraProfile::tiny().held_out_focals;
    assert!(held.contains(&entries[2].scene.camera.fx));
    assert!(!held.contains(&entries[0].scene.camera.fx));
    write_dataset(dir.path(), &entries).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), entries);
    std::fs::write(dir.path().join("train_00001.depth"), b"DEPTHMAP v1 3 3\n").unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("train_00001.depth"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn augmentation_commutes_with_rays(seed in 0u64..1000, lo in 0.5f64..1.5, span in 0.0f64..0.5, flip in any::<bool>(), crop in any::<bool>()) {
        let s = generate_scene(seed, &CameraProfile::tiny().camera(18.0), 2, 200.0);
        let spec = AugmentSpec {
            scale: (lo, lo + span),
            crop: crop.then_some((24, 20)),
            flip_prob: if flip { 1.0 } else { 0.0 },
            brightness: 0.2,
            contrast: 0.2,
        };
        let a = augment(&s, &s.depth.to_sparse(), &spec, seed).unwrap();
        a.sparse.validate().unwrap();
        prop_assert!(a.scene.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
        for (u, v) in [(0.0, 0.0), (5.0, 17.0), (31.0, 23.0)] {
            let (x, y) = a.map.map_point(u, v);
            let r0 = s.camera.ray_unchecked(u, v);
            let r1 = a.scene.camera.ray_unchecked(x, y);
            let sx = if flip { -1.0 } else { 1.0 };
            prop_assert!((r0[0] * sx - r1[0]).abs() < 1e-10);
            prop_assert!((r0[1] - r1[1]).abs() < 1e-10);
        }
        // Surviving records keep the depth of the pixel they came from.
        for r in &a.sparse.records {
            prop_assert!(s.depth.data.contains(&r.depth));
        }
    }
}
