use std::path::Path;

use leanstereo::data::kitti::decode_kitti;
use leanstereo::data::pfm::{encode_pfm, parse_pfm};
use leanstereo::data::preprocess::{pad, unpad, Padding};
use leanstereo::data::{
    generate_synthetic_pair, preprocess, read_kitti_disparity, read_pfm_disparity,
    write_kitti_disparity, write_pfm_disparity, write_synthetic_dataset, Dataset, DatasetKind,
    DatasetSpec, PfmImage, Split, StereoSample, SynthParams,
};
use leanstereo::evaluate::evaluate_with;
use leanstereo::{Error, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params(h: usize, w: usize) -> SynthParams {
    SynthParams {
        height: h,
        width: w,
        num_shapes: 4,
        d_range: (1, 31),
    }
}

/// Fraction of valid pixels with `left(x, y) == right(x - d, y)` in every channel.
fn warp_agreement(s: &StereoSample) -> (usize, usize) {
    let (h, w) = s.hw();
    let (mut ok, mut n) = (0, 0);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !s.valid[i] {
                continue;
            }
            let d = s.gt.data()[i];
            assert_eq!(d, d.round(), "disparity must be integer");
            n += 1;
            let xs = x - d as usize;
            ok += (0..3).all(|c| s.left.at(&[c, y, x]) == s.right.at(&[c, y, xs])) as usize;
        }
    }
    (ok, n)
}

#[test]
fn synthetic_warp_identity_on_ten_seeds() {
    for seed in 0..10 {
        let s = generate_synthetic_pair(seed, &params(64, 128)).unwrap();
        let (ok, n) = warp_agreement(&s);
        assert!(n > 0);
        assert_eq!(ok, n, "seed {}", seed);
        for (i, &v) in s.valid.iter().enumerate() {
            assert_eq!(v, (i % 128) as f32 >= s.gt.data()[i]);
        }
    }
}

#[test]
fn synthetic_is_deterministic_and_in_range() {
    let p = params(64, 96);
    let a = generate_synthetic_pair(3, &p).unwrap();
    assert_eq!(a, generate_synthetic_pair(3, &p).unwrap());
    assert_ne!(a, generate_synthetic_pair(4, &p).unwrap());
    assert!(a.gt.data().iter().all(|&d| (1.0..=31.0).contains(&d)));
    assert!(a
        .left
        .data()
        .iter()
        .chain(a.right.data())
        .all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn zero_disparity_scene_is_identical_views() {
    let s = generate_synthetic_pair(
        1,
        &SynthParams {
            d_range: (0, 0),
            ..params(32, 64)
        },
    )
    .unwrap();
    assert_eq!(s.left, s.right);
    assert!(s.valid.iter().all(|&v| v));
}

#[test]
fn synthetic_rejects_bad_parameters() {
    assert!(generate_synthetic_pair(0, &params(60, 128)).is_err());
    assert!(generate_synthetic_pair(
        0,
        &SynthParams {
            d_range: (0, 128),
            ..params(64, 128)
        }
    )
    .is_err());
    assert!(generate_synthetic_pair(
        0,
        &SynthParams {
            d_range: (9, 3),
            ..params(64, 128)
        }
    )
    .is_err());
}

#[test]
fn random_crop_keeps_warp_consistency() {
    let s = generate_synthetic_pair(5, &params(64, 128)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let c = leanstereo::data::preprocess::random_crop(&s, (32, 96), &mut rng).unwrap();
        let (h, w) = c.hw();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let d = c.gt.data()[i] as usize;
                if c.valid[i] && x >= d {
                    assert_eq!(c.left.at(&[0, y, x]), c.right.at(&[0, y, x - d]));
                }
            }
        }
    }
    assert!(matches!(
        leanstereo::data::preprocess::random_crop(&s, (96, 128), &mut rng),
        Err(Error::Dataset(_))
    ));
}

#[test]
fn kitti_decode_cases() {
    let (d, m) = decode_kitti(&[0, 256, 25600, 1, 65535], 1, 5).unwrap();
    assert_eq!(d.data(), [0.0, 1.0, 100.0, 1.0 / 256.0, 65535.0 / 256.0]);
    assert_eq!(m, [false, true, true, true, true]);
}

#[test]
fn kitti_png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.png");
    let d = Tensor::from_vec(&[2, 3], vec![0.0, 1.5, 100.25, 3.0, 0.0, 255.99609375]).unwrap();
    write_kitti_disparity(&p, &d).unwrap();
    let (back, mask) = read_kitti_disparity(&p).unwrap();
    assert_eq!(back, d);
    assert_eq!(mask, [false, true, true, true, false, true]);
}

#[test]
fn pfm_reference_layout_and_errors() {
    let img = PfmImage {
        width: 2,
        height: 2,
        channels: 1,
        data: vec![1.0, 2.0, 3.0, 4.0],
        scale: 1.0,
        little_endian: true,
    };
    let bytes = encode_pfm(&img).unwrap();
    let header = b"Pf\n2 2\n-1\n";
    assert_eq!(&bytes[..header.len()], header);
    // bottom row first
    assert_eq!(
        &bytes[header.len()..header.len() + 4],
        &3.0f32.to_le_bytes()
    );
    let path = Path::new("x.pfm");
    for bad in [
        &b"P6\n2 2\n-1\n"[..],
        b"Pf\n2\n",
        b"Pf\n2 2\n0\n",
        &bytes[..bytes.len() - 1],
    ] {
        assert!(matches!(parse_pfm(bad, path), Err(Error::Parse { .. })));
    }
    let dir = tempfile::tempdir().unwrap();
    let color = dir.path().join("c.pfm");
    let rgb = PfmImage {
        channels: 3,
        data: vec![0.5; 12],
        ..img
    };
    leanstereo::data::write_pfm(&color, &rgb).unwrap();
    assert!(matches!(
        read_pfm_disparity(&color),
        Err(Error::Format { .. })
    ));
}

#[test]
fn padding_examples() {
    let p = Padding::for_size((375, 1242), 32);
    assert_eq!(p.padded_hw(), (384, 1248));
    assert_eq!((p.bottom, p.right), (9, 6));
    assert_eq!(Padding::for_size((544, 960), 32).padded_hw(), (544, 960));
    let x = Tensor::from_vec(&[1, 2, 3], (1..=6).map(|v| v as f32).collect()).unwrap();
    let q = Padding::for_size((2, 3), 4);
    let padded = pad(&x, &q).unwrap();
    assert_eq!(padded.shape(), [1, 4, 4]);
    assert_eq!(padded.at(&[0, 0, 0]), 1.0);
    assert_eq!(padded.at(&[0, 1, 2]), 6.0);
    assert_eq!(padded.at(&[0, 3, 3]), 0.0);
    assert_eq!(unpad(&padded, &q).unwrap(), x);
}

#[test]
fn eval_preprocess_pads_and_standardizes() {
    let s = generate_synthetic_pair(1, &params(64, 128)).unwrap();
    let crop = |s: &StereoSample| {
        leanstereo::data::preprocess::random_crop(s, (40, 100), &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap()
    };
    let small = crop(&s);
    let p = preprocess(&small, (40, 100), false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(p.left.data().shape(), [1, 3, 64, 128]);
    assert_eq!(p.left.orig_hw, (40, 100));
    assert_eq!(p.gt.shape(), [1, 40, 100]);
    assert_eq!(p.left.data().at(&[0, 0, 63, 127]), 0.0);
    let want = (small.left.at(&[1, 0, 0]) - 0.456) / 0.224;
    assert!((p.left.data().at(&[0, 1, 0, 0]) - want).abs() < 1e-6);
}

#[test]
fn synthetic_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = params(64, 128);
    write_synthetic_dataset(dir.path(), Split::Train, 3, 7, &p).unwrap();
    let spec = DatasetSpec {
        root: dir.path().to_path_buf(),
        split: Split::Train,
        kind: DatasetKind::Synthetic,
        crop: (64, 128),
    };
    let ds = Dataset::open(&spec, 64.0).unwrap();
    assert_eq!(ds.len(), 3);
    let s = ds.load(0).unwrap();
    let direct = generate_synthetic_pair(leanstereo::data::sample_seed(7, 0), &p).unwrap();
    assert_eq!(s.left, direct.left);
    assert_eq!(s.valid, direct.valid);
    let (ok, n) = warp_agreement(&s);
    assert_eq!(ok, n);
    let zeros = evaluate_with(&ds, |s| Ok(s.gt.clone())).unwrap().pooled;
    assert_eq!(
        [zeros.epe, zeros.d1, zeros.px3, zeros.px2, zeros.px1],
        [0.0; 5]
    );
    let missing = DatasetSpec {
        split: Split::Val,
        ..spec
    };
    assert!(matches!(
        Dataset::open(&missing, 64.0),
        Err(Error::Dataset(_))
    ));
}

#[test]
fn dataset_masks_out_of_range_disparities() {
    let mut s = generate_synthetic_pair(2, &params(32, 64)).unwrap();
    s.gt.data_mut()[0] = 50.0;
    s.gt.data_mut()[1] = 0.0;
    let ds = Dataset::in_memory(vec![s], 40.0);
    let l = ds.load(0).unwrap();
    assert!(!l.valid[0] && !l.valid[1]);
    assert!(ds.load(1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pfm_round_trip_is_bit_exact(
        h in 1usize..6,
        w in 1usize..6,
        three in any::<bool>(),
        little in any::<bool>(),
        bits in proptest::collection::vec(any::<u32>(), 75),
    ) {
        let c = if three { 3 } else { 1 };
        let data: Vec<f32> = bits[..h * w * c].iter().map(|b| f32::from_bits(*b)).collect();
        let img = PfmImage { width: w, height: h, channels: c, data, scale: 1.0, little_endian: little };
        let back = parse_pfm(&encode_pfm(&img).unwrap(), Path::new("mem")).unwrap();
        prop_assert_eq!(back.width, w);
        prop_assert_eq!(back.channels, c);
        prop_assert_eq!(back.little_endian, little);
        let same = back.data.iter().zip(&img.data).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn pfm_file_round_trip(vals in proptest::collection::vec(-1e6f32..1e6, 12)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let d = Tensor::from_vec(&[3, 4], vals).unwrap();
        write_pfm_disparity(&p, &d).unwrap();
        prop_assert_eq!(read_pfm_disparity(&p).unwrap(), d);
    }
}
