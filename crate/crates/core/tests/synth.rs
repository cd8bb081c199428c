use std::fs;

use pmcnet::synth::pnm::{read_image_ppm, read_mask_pgm, write_image_ppm, write_mask_pgm};
use pmcnet::synth::{
    generate_dataset, generate_sample, load_split, onehot, DatasetManifest, LesionSpec, Mask, Split, SynthSpec, EX,
    HE, MA, SE,
};
use pmcnet::{Shape, Tensor};
use proptest::prelude::*;

/// Areas of the 4-connected components of `class` in `mask`.
fn component_areas(mask: &Mask, class: u8) -> Vec<usize> {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut areas = Vec::new();
    for start in 0..h * w {
        if seen[start] || mask.data()[start] != class {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut area = 0;
        while let Some(i) = stack.pop() {
            area += 1;
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && mask.data()[j] == class {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        areas.push(area);
    }
    areas
}

fn median(mut v: Vec<usize>) -> f64 {
    assert!(!v.is_empty());
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

#[test]
fn component_sizes_ordered_by_class() {
    let spec = SynthSpec { n_images: 100, hw: (64, 64), ..SynthSpec::default() };
    let mut areas = [Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for i in 0..spec.n_images {
        let s = generate_sample(&spec, 8, i);
        for c in [EX, HE, MA, SE] {
            areas[c as usize].extend(component_areas(&s.mask, c));
        }
    }
    let m = |c: u8| median(areas[c as usize].clone());
    assert!(m(MA) < m(EX), "MA {} EX {}", m(MA), m(EX));
    assert!(m(EX) < m(HE), "EX {} HE {}", m(EX), m(HE));
    assert!(m(HE) < m(SE), "HE {} SE {}", m(HE), m(SE));
}

#[test]
fn lesions_contrast_with_background() {
    let spec = SynthSpec { n_images: 40, ..SynthSpec::default() };
    for i in 0..spec.n_images {
        let s = generate_sample(&spec, 2, i);
        let mean_rgb = |class: u8| {
            let mut acc = [0.0; 3];
            let mut n = 0.0;
            for y in 0..32 {
                for x in 0..32 {
                    if s.mask.get(y, x) == class {
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a += s.image.at(0, c, y, x);
                        }
                        n += 1.0;
                    }
                }
            }
            (n > 0.0).then(|| acc.map(|a| a / n))
        };
        let bg = mean_rgb(0).unwrap();
        for class in [EX, HE, MA, SE] {
            if let Some(rgb) = mean_rgb(class) {
                let diff = (0..3).map(|c| (rgb[c] - bg[c]).abs()).sum::<f64>() / 3.0;
                assert!(diff > 0.05, "image {i} class {class}: {diff}");
            }
        }
    }
}

#[test]
fn dataset_bytes_are_deterministic() {
    let spec = SynthSpec { n_images: 5, ..SynthSpec::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&spec, 17, (3, 1, 1), a.path()).unwrap();
    generate_dataset(&spec, 17, (3, 1, 1), b.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 11);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap());
    }
    let c = tempfile::tempdir().unwrap();
    generate_dataset(&spec, 18, (3, 1, 1), c.path()).unwrap();
    assert_ne!(
        fs::read(a.path().join("img_00000.ppm")).unwrap(),
        fs::read(c.path().join("img_00000.ppm")).unwrap()
    );
}

#[test]
fn empty_spec_is_all_background() {
    let base = SynthSpec::default();
    let none = |l: LesionSpec| LesionSpec { count: (0, 0), ..l };
    let spec = SynthSpec { ex: none(base.ex), he: none(base.he), ma: none(base.ma), se: none(base.se), ..base.clone() };
    for i in 0..5 {
        assert!(generate_sample(&spec, 1, i).mask.data().iter().all(|&v| v == 0));
    }
}

#[test]
fn manifest_and_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { n_images: 4, ..SynthSpec::default() };
    let m = generate_dataset(&spec, 2, (2, 1, 1), dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(DatasetManifest::parse(&text).unwrap().to_text(), text);
    assert_eq!(m.spec_hash, spec.hash_hex());
    for e in &m.entries {
        let img = fs::read(dir.path().join(&e.image)).unwrap();
        let msk = fs::read(dir.path().join(&e.mask)).unwrap();
        assert_eq!(write_image_ppm(&read_image_ppm(&img).unwrap()).unwrap(), img);
        assert_eq!(write_mask_pgm(&read_mask_pgm(&msk).unwrap()), msk);
    }
    assert_eq!(load_split(dir.path(), Split::Test).unwrap().len(), 1);
    assert!(load_split(&dir.path().join("missing"), Split::Test).is_err());
}

#[test]
fn white_ppm_bytes() {
    let bytes = write_image_ppm(&Tensor::ones(Shape::new(1, 3, 2, 2))).unwrap();
    let mut want = b"P6\n2 2\n255\n".to_vec();
    want.extend([0xFF; 12]);
    assert_eq!(bytes, want);
}

#[test]
fn malformed_pnm_rejected() {
    assert!(read_image_ppm(b"P5\n2 2\n255\n").is_err());
    assert!(read_image_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
    assert!(read_image_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00").is_err());
    assert!(read_mask_pgm(b"P5\n2 2\n255\n\x00").is_err());
}

#[test]
fn onehot_examples() {
    let bg = onehot(&Mask::background(3, 3), 5).unwrap();
    assert!(bg.slice_channels(0, 1).unwrap().data().iter().all(|&v| v == 1.0));
    assert_eq!(bg.sum(), 9.0);
    assert!(onehot(&Mask::from_fn(2, 2, |_, _| 5), 5).is_err());
}

fn mask_strategy() -> impl Strategy<Value = Mask> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u8..5, h * w).prop_map(move |d| Mask::new(h, w, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_pgm_round_trip(m in mask_strategy()) {
        prop_assert_eq!(read_mask_pgm(&write_mask_pgm(&m)).unwrap(), m);
    }

    #[test]
    fn grid_images_round_trip(h in 1usize..8, w in 1usize..8, seed in any::<u64>()) {
        let mut r = pmcnet::rng::stream(seed, "t", &[]);
        let img = Tensor::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rand::Rng::gen_range(&mut r, 0u8..=255) as f64 / 255.0);
        prop_assert_eq!(read_image_ppm(&write_image_ppm(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn onehot_partitions_and_inverts(m in mask_strategy()) {
        let t = onehot(&m, 5).unwrap();
        let back: Vec<u8> = t.argmax_channels().into_iter().map(|c| c as u8).collect();
        prop_assert_eq!(back.as_slice(), m.data());
        let plane = m.height() * m.width();
        for i in 0..plane {
            let s: f64 = (0..5).map(|c| t.data()[c * plane + i]).sum();
            prop_assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn samples_are_valid(seed in any::<u64>(), idx in 0usize..1000) {
        let s = generate_sample(&SynthSpec::default(), seed, idx);
        prop_assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(s.mask.data().iter().all(|&v| v < 5));
        prop_assert_eq!(s.clone(), generate_sample(&SynthSpec::default(), seed, idx));
    }
}
