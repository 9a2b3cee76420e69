use std::fs;

use image::{GrayImage, ImageBuffer, Luma};
use tempfile::tempdir;
use tomoprior::{build_prior, AngleSet, Image, PatchDictionary, Sinogram, TemplateSet};
use tomoprior_harness::io::*;
use tomoprior_harness::HarnessError;

fn ramp(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |x, y| (x as f64 * 0.1 - y as f64 * 0.07).sin() * 1e-3 + 0.5).unwrap()
}

#[test]
fn raw_image_round_trip_is_exact() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("a.f64");
    let x = ramp(7, 5);
    save_raw_image(&p, &x).unwrap();
    assert_eq!(load_image(&p).unwrap(), x);
    assert_eq!(fs::read_to_string(sidecar(&p, "dims")).unwrap(), "width 7\nheight 5\n");
}

#[test]
fn missing_sidecar_is_io_error() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("b.f64");
    fs::write(&p, [0u8; 32]).unwrap();
    let e = load_image(&p).unwrap_err();
    assert!(matches!(e, HarnessError::Io(_)));
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn eight_bit_png_and_pgm_scale_to_unit_range() {
    let dir = tempdir().unwrap();
    let img: GrayImage = ImageBuffer::from_fn(3, 2, |x, y| Luma([(x * 100 + y * 55) as u8]));
    let png = dir.path().join("g.png");
    img.save(&png).unwrap();
    let x = load_image(&png).unwrap();
    assert_eq!(x.dims(), (3, 2));
    assert_eq!(x.get(2, 1), 255.0 / 255.0);
    assert_eq!(x.get(1, 0), 100.0 / 255.0);

    // Binary PGM written by hand.
    let pgm = dir.path().join("g.pgm");
    let mut bytes = b"P5\n2 2\n255\n".to_vec();
    bytes.extend([0u8, 51, 102, 255]);
    fs::write(&pgm, bytes).unwrap();
    let y = load_image(&pgm).unwrap();
    assert_eq!(y.data(), &[0.0, 0.2, 0.4, 1.0]);
}

#[test]
fn sixteen_bit_png_round_trip_within_quantisation() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("r.png");
    let x = ramp(9, 4);
    save_png(&p, &x).unwrap();
    let y = load_image(&p).unwrap();
    for (a, b) in x.data().iter().zip(y.data()) {
        assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
    }
}

#[test]
fn color_and_unknown_formats_rejected() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("c.png");
    image::RgbImage::new(2, 2).save(&p).unwrap();
    assert!(matches!(load_image(&p), Err(HarnessError::Io(_))));
    assert!(matches!(load_image(&dir.path().join("x.tiff")), Err(HarnessError::Invalid(_))));
}

#[test]
fn sinogram_round_trip_is_exact() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("s.f64");
    let angles = AngleSet::explicit(vec![0.0, 1.0 / 3.0, 97.25]).unwrap();
    let s = Sinogram::new(angles, 5, (0..15).map(|i| (i as f64).sqrt()).collect()).unwrap();
    save_sinogram(&p, &s).unwrap();
    assert_eq!(load_sinogram(&p).unwrap(), s);
}

#[test]
fn prior_round_trip_and_corruption() {
    let ts = TemplateSet::new((0..4).map(|k| Image::from_fn(6, 5, |x, y| ((x * y + k) as f64).cos()).unwrap()).collect())
        .unwrap();
    let prior = build_prior(&ts, None).unwrap();
    let bytes = prior_to_bytes(&prior);
    assert_eq!(prior_from_bytes(&bytes).unwrap(), prior);
    let dir = tempdir().unwrap();
    let p = dir.path().join("p.epri");
    save_prior(&p, &prior).unwrap();
    assert_eq!(load_prior(&p).unwrap(), prior);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(prior_from_bytes(&bad), Err(HarnessError::Io(_))));
    assert!(prior_from_bytes(&bytes[..bytes.len() - 8]).is_err());
}

#[test]
fn dictionary_round_trip() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("d.pdct");
    let mut atoms = vec![0.0; 4 * 5];
    for j in 0..4 {
        atoms[j * 4 + j] = 1.0;
    }
    atoms[16..].copy_from_slice(&[0.5; 4]);
    let d = PatchDictionary::new(2, 5, atoms).unwrap();
    save_dictionary(&p, &d).unwrap();
    assert_eq!(load_dictionary(&p).unwrap(), d);
}

#[test]
fn templates_load_in_name_order_skipping_sidecars() {
    let dir = tempdir().unwrap();
    for (name, v) in [("b.f64", 2.0), ("a.f64", 1.0), ("c.f64", 3.0)] {
        save_raw_image(&dir.path().join(name), &Image::new(2, 2, vec![v; 4]).unwrap()).unwrap();
    }
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let t = load_templates(dir.path()).unwrap();
    let firsts: Vec<f64> = t.iter().map(|x| x.get(0, 0)).collect();
    assert_eq!(firsts, vec![1.0, 2.0, 3.0]);
    let empty = tempdir().unwrap();
    assert!(matches!(load_templates(empty.path()), Err(HarnessError::Io(_))));
}

#[test]
fn atomic_write_leaves_only_target() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("nested").join("out.txt");
    write_atomic(&p, b"one").unwrap();
    write_atomic(&p, b"two").unwrap();
    assert_eq!(fs::read(&p).unwrap(), b"two");
    let names: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 1);
}
