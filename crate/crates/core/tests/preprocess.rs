use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suad_core::preprocess::{
    apply_rigid, extract_subvolume, flip_coronal, normalize01, resample_trilinear, resize_to_input,
    Step,
};
use suad_core::{CropSize, CropSpec, Error, Pipeline, RigidTransform, Side, Volume};

fn random_volume(dims: [usize; 3], seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_fn(dims, |_, _, _| rng.random_range(0.0..1.0))
}

fn indexed(dims: [usize; 3]) -> Volume {
    Volume::from_fn(dims, |d, h, w| ((d * dims[1] + h) * dims[2] + w) as f32)
}

#[test]
fn identity_transform_is_bit_exact() {
    let v = random_volume([6, 5, 7], 1);
    assert_eq!(apply_rigid(&v, &RigidTransform::identity()).unwrap(), v);
}

#[test]
fn one_voxel_translation_shifts_content() {
    let mut v = random_volume([5, 4, 3], 2);
    v.spacing = [0.5, 0.75, 0.75];
    let out = apply_rigid(&v, &RigidTransform::translation([0.5, 0.0, 0.0])).unwrap();
    for d in 0..5 {
        for h in 0..4 {
            for w in 0..3 {
                let want = if d == 0 { 0.0 } else { v.get(d - 1, h, w) };
                assert_eq!(out.get(d, h, w), want, "({d},{h},{w})");
            }
        }
    }
}

/// Forward-maps every input voxel through the integer rotation matrix about
/// the center of a cubic grid: `out[c + R(p − c)] = in[p]`.
fn forward_permutation(v: &Volume, r: &[[f64; 3]; 3]) -> Volume {
    let n = v.dims[0] as i64;
    let c2 = n - 1;
    let ri = r.map(|row| row.map(|x| x as i64));
    let mut out = Volume::filled(v.dims, f32::NAN);
    for d in 0..n {
        for h in 0..n {
            for w in 0..n {
                let p2 = [2 * d - c2, 2 * h - c2, 2 * w - c2];
                let q2: Vec<i64> = (0..3)
                    .map(|a| (0..3).map(|k| ri[a][k] * p2[k]).sum::<i64>())
                    .collect();
                let q: Vec<usize> = q2.iter().map(|&x| ((x + c2) / 2) as usize).collect();
                let i = out.index(q[0], q[1], q[2]);
                out.data[i] = v.get(d as usize, h as usize, w as usize);
            }
        }
    }
    out
}

#[test]
fn quarter_turns_match_permutation_oracle() {
    let marker = Volume::from_fn([5, 5, 5], |d, h, w| {
        if (d, h, w) == (0, 1, 2) {
            9.0
        } else {
            (d * 3 + h * 5 + w * 7) as f32 / 100.0
        }
    });
    for axis in 0..3 {
        for degrees in [90.0, 180.0, 270.0] {
            let t = RigidTransform::rotation_about(axis, degrees);
            assert!(t.rotation.iter().flatten().all(|x| x.fract() == 0.0));
            let got = apply_rigid(&marker, &t).unwrap();
            let want = forward_permutation(&marker, &t.rotation);
            assert!(want.data.iter().all(|x| !x.is_nan()));
            assert_eq!(got.data, want.data, "axis {axis}, {degrees} degrees");
        }
    }
}

#[test]
fn invalid_rotations_are_transform_errors() {
    let mut t = RigidTransform::identity();
    t.rotation[0][0] = 2.0;
    assert!(matches!(
        apply_rigid(&indexed([2, 2, 2]), &t),
        Err(Error::Transform(_))
    ));
    let mut mirror = RigidTransform::identity();
    mirror.rotation[2][2] = -1.0;
    assert!(matches!(mirror.validate(), Err(Error::Transform(_))));
}

#[test]
fn resample_to_same_dims_is_identity() {
    let v = random_volume([4, 5, 6], 3);
    assert_eq!(resample_trilinear(&v, [4, 5, 6]).unwrap(), v);
    assert_eq!(resize_to_input(&v, [4, 5, 6]).unwrap(), v);
}

#[test]
fn resample_keeps_constants() {
    let v = Volume::filled([3, 5, 4], 0.37);
    let out = resample_trilinear(&v, [7, 2, 9]).unwrap();
    assert_eq!(out.dims, [7, 2, 9]);
    assert!(out.data.iter().all(|&x| x == 0.37));
}

#[test]
fn ramp_upsampling_matches_coordinate_oracle() {
    let v = Volume::from_fn([4, 2, 3], |d, _, _| 2.0 * d as f32 + 1.0);
    let out = resample_trilinear(&v, [8, 2, 3]).unwrap();
    assert_eq!(out.spacing, [0.5, 1.0, 1.0]);
    for i in 0..8 {
        let src = ((i as f64 + 0.5) * 4.0 / 8.0 - 0.5).clamp(0.0, 3.0);
        let want = 2.0 * src + 1.0;
        for h in 0..2 {
            for w in 0..3 {
                assert!(
                    (out.get(i, h, w) as f64 - want).abs() < 1e-6,
                    "{i}: {} vs {want}",
                    out.get(i, h, w)
                );
            }
        }
    }
}

#[test]
fn resample_never_overshoots() {
    let v = random_volume([5, 6, 7], 4);
    let (lo, hi) = v.min_max();
    for target in [[9, 3, 11], [2, 2, 2], [10, 12, 14]] {
        let (a, b) = resample_trilinear(&v, target).unwrap().min_max();
        assert!(a >= lo && b <= hi, "{target:?}");
    }
}

#[test]
fn full_volume_crop_is_identity() {
    let v = random_volume([6, 8, 10], 5);
    let spec = CropSpec {
        extent: [6, 8, 10],
        center_left: [3, 4, 5],
        ..CropSpec::default()
    };
    let out = extract_subvolume(&v, &spec, Side::Left).unwrap();
    assert_eq!(out.data, v.data);
    assert_eq!(out.meta.side, Side::Left);
}

#[test]
fn origin_crop_reads_expected_voxels() {
    let v = indexed([4, 5, 6]);
    let spec = CropSpec {
        extent: [2, 2, 2],
        center_left: [1, 1, 1],
        ..CropSpec::default()
    };
    let out = extract_subvolume(&v, &spec, Side::Left).unwrap();
    assert_eq!(out.data, [0.0, 1.0, 6.0, 7.0, 30.0, 31.0, 36.0, 37.0]);
}

#[test]
fn crop_sizes_nest_on_the_full_grid() {
    let v = random_volume([128, 128, 128], 6);
    for side in [Side::Left, Side::Right] {
        let [small, medium, large] =
            [CropSize::Small, CropSize::Medium, CropSize::Large].map(CropSpec::new);
        for (inner, outer) in [(&small, &medium), (&medium, &large)] {
            let (si, so) = (
                inner.start(side, v.dims).unwrap(),
                outer.start(side, v.dims).unwrap(),
            );
            let direct = extract_subvolume(&v, inner, side).unwrap();
            let outer_vol = extract_subvolume(&v, outer, side).unwrap();
            let offset: [usize; 3] = [0, 1, 2].map(|a| si[a] - so[a]);
            let recrop = CropSpec {
                extent: inner.extent,
                center_left: [0, 1, 2].map(|a| offset[a] + inner.extent[a] / 2),
                ..inner.clone()
            };
            let again = extract_subvolume(&outer_vol, &recrop, Side::Left).unwrap();
            assert_eq!(
                again.data, direct.data,
                "{:?} in {:?}",
                inner.name, outer.name
            );
        }
    }
}

#[test]
fn out_of_bounds_crop_names_the_axis() {
    let v = indexed([128, 40, 128]);
    let err = extract_subvolume(&v, &CropSpec::new(CropSize::Large), Side::Left).unwrap_err();
    assert!(matches!(err, Error::Geometry(_)));
    assert!(err.to_string().contains("axis 1"), "{err}");
}

#[test]
fn crop_size_names_parse() {
    for s in [CropSize::Small, CropSize::Medium, CropSize::Large] {
        assert_eq!(CropSize::parse(s.as_str()).unwrap(), s);
    }
    assert!(matches!(CropSize::parse("huge"), Err(Error::Config(_))));
    assert_eq!(CropSize::Small.extent(), [33, 47, 45]);
    assert_eq!(CropSize::Large.extent(), [53, 67, 65]);
}

#[test]
fn flip_of_one_hot_mirrors_w() {
    let dims = [3, 4, 5];
    let v = Volume::from_fn(
        dims,
        |d, h, w| if (d, h, w) == (1, 2, 1) { 1.0 } else { 0.0 },
    );
    let f = flip_coronal(&v);
    for d in 0..3 {
        for h in 0..4 {
            for w in 0..5 {
                let want = if (d, h, w) == (1, 2, dims[2] - 1 - 1) {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(f.get(d, h, w), want);
            }
        }
    }
}

#[test]
fn flip_leaves_symmetric_volumes_and_tags_sides() {
    let sym = Volume::from_fn([2, 3, 6], |d, h, w| (d + h) as f32 + (w as f32 - 2.5).abs());
    assert_eq!(flip_coronal(&sym).data, sym.data);
    let mut right = sym.clone();
    right.meta.side = Side::Right;
    assert_eq!(flip_coronal(&right).meta.side, Side::RightFlipped);
    assert_eq!(flip_coronal(&flip_coronal(&right)).meta.side, Side::Right);
}

#[test]
fn normalize_examples() {
    let v = Volume::new([1, 1, 2], [1.0; 3], vec![2.0, 4.0], Default::default()).unwrap();
    assert_eq!(normalize01(&v).data, [0.0, 1.0]);
    let unit = Volume::new(
        [1, 1, 3],
        [1.0; 3],
        vec![0.0, 0.25, 1.0],
        Default::default(),
    )
    .unwrap();
    assert_eq!(normalize01(&unit), unit);
    assert!(normalize01(&Volume::filled([2, 2, 2], 7.0))
        .data
        .iter()
        .all(|&x| x == 0.0));
}

#[test]
fn pipeline_rejects_out_of_order_steps() {
    assert!(matches!(
        Pipeline::new(vec![Step::Normalize, Step::Flip]),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        Pipeline::new(vec![Step::Flip, Step::Flip]),
        Err(Error::Config(_))
    ));
    let full = Pipeline::full(CropSpec::default(), [64, 64, 64]);
    let names: Vec<&str> = full.steps().iter().map(Step::name).collect();
    assert_eq!(
        names,
        ["rigid", "resample", "crop", "flip", "resize", "normalize"]
    );
}

#[test]
fn pipeline_flips_right_sides_only() {
    let p = Pipeline::cropped([4, 4, 4]);
    let left = random_volume([4, 4, 4], 7);
    let mut right = left.clone();
    right.meta.side = Side::Right;
    let (l, r) = (p.run(&left).unwrap(), p.run(&right).unwrap());
    assert_eq!(l.data, normalize01(&left).data);
    assert_eq!(r.data, normalize01(&flip_coronal(&left)).data);
    assert_eq!(r.meta.side, Side::RightFlipped);
}

#[test]
fn full_pipeline_reaches_input_size() {
    let v = random_volume([40, 40, 40], 8);
    let out = Pipeline::full(CropSpec::new(CropSize::Small), [16, 16, 16])
        .run(&v)
        .unwrap();
    assert_eq!(out.dims, [16, 16, 16]);
    assert_eq!(out.min_max(), (0.0, 1.0));
}

proptest! {
    #[test]
    fn flip_is_an_involution(data in prop::collection::vec(-10.0f32..10.0, 60)) {
        let v = Volume::new([3, 4, 5], [1.0; 3], data, Default::default()).unwrap();
        prop_assert_eq!(flip_coronal(&flip_coronal(&v)), v);
    }

    #[test]
    fn normalize_is_bounded_and_idempotent(data in prop::collection::vec(-100.0f32..100.0, 24)) {
        let v = Volume::new([2, 3, 4], [1.0; 3], data, Default::default()).unwrap();
        let n = normalize01(&v);
        prop_assert!(n.data.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert_eq!(normalize01(&n), n);
    }
}
