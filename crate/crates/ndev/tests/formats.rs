//! Byte-level contracts of the on-disk formats: exact NDEV/NDCK layouts,
//! PGM quantization, CSV headers, and corruption behavior.

use std::fs;

use ndev::ablation::{MetricReport, REPORT_HEADER};
use ndev::data::VideoTensor;
use ndev::error::Error;
use ndev::io::{read_ndck, read_ndev, write_ndck, write_ndev, write_pgm};

fn tiny_video() -> VideoTensor {
    // 2 frames of 2x3; values exercise both f32-exact and inexact pixels.
    let data = vec![0.0, 1.0, 0.5, 0.25, 1.0 / 3.0, 0.9, 0.125, 0.75, 0.2, 0.6, 0.1, 0.8];
    VideoTensor::new(2, 2, 3, data).unwrap()
}

#[test]
fn ndev_layout_is_magic_version_dims_then_f32_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.ndev");
    let video = tiny_video();
    write_ndev(&path, &video).unwrap();
    let bytes = fs::read(&path).unwrap();

    let mut expected = Vec::new();
    expected.extend_from_slice(b"NDEV");
    expected.push(1u8);
    for dim in [2u32, 1, 2, 3] {
        expected.extend_from_slice(&dim.to_le_bytes());
    }
    for &p in video.data() {
        expected.extend_from_slice(&(p as f32).to_le_bytes());
    }
    assert_eq!(bytes, expected);
    assert_eq!(bytes.len(), 4 + 1 + 4 * 4 + 4 * 12);
}

#[test]
fn ndev_round_trip_is_exact_at_storage_precision() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.ndev");
    let second = dir.path().join("b.ndev");
    let video = tiny_video();

    write_ndev(&first, &video).unwrap();
    let back = read_ndev(&first).unwrap();
    assert_eq!((back.frames(), back.height(), back.width()), (2, 2, 3));
    // Reading returns exactly the f32-quantized pixels, so a second write
    // reproduces the file byte for byte.
    for (&orig, &read) in video.data().iter().zip(back.data()) {
        assert_eq!(orig as f32, read as f32);
        assert_eq!(read, (orig as f32) as f64);
    }
    write_ndev(&second, &back).unwrap();
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn ndev_corruption_maps_to_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.ndev");
    write_ndev(&path, &tiny_video()).unwrap();
    let good = fs::read(&path).unwrap();

    for (mutation, expect) in [
        (0usize, "bad magic"),
        (4, "unsupported format version"),
    ] {
        let mut bad = good.clone();
        bad[mutation] ^= 0x5a;
        fs::write(&path, &bad).unwrap();
        match read_ndev(&path) {
            Err(Error::Io(msg)) => assert!(msg.contains(expect), "{msg}"),
            other => panic!("expected Io for byte {mutation}, got {other:?}"),
        }
    }

    fs::write(&path, &good[..good.len() - 1]).unwrap();
    assert!(matches!(read_ndev(&path), Err(Error::Io(_))));

    let mut padded = good.clone();
    padded.push(0);
    fs::write(&path, &padded).unwrap();
    match read_ndev(&path) {
        Err(Error::Io(msg)) => assert!(msg.contains("trailing"), "{msg}"),
        other => panic!("expected Io for trailing byte, got {other:?}"),
    }
}

#[test]
fn ndck_layout_is_magic_version_then_named_f64_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ndck");
    let blocks = vec![
        ("gt/f.w".to_string(), vec![1.5f64, -0.25]),
        ("meta/step".to_string(), vec![7.0]),
    ];
    write_ndck(&path, &blocks).unwrap();
    let bytes = fs::read(&path).unwrap();

    let mut expected = Vec::new();
    expected.extend_from_slice(b"NDCK");
    expected.push(1u8);
    for (name, values) in &blocks {
        expected.extend_from_slice(&(name.len() as u16).to_le_bytes());
        expected.extend_from_slice(name.as_bytes());
        expected.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for &v in values {
            expected.extend_from_slice(&v.to_le_bytes());
        }
    }
    assert_eq!(bytes, expected);
}

#[test]
fn ndck_round_trips_f64_bit_patterns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ndck");
    let blocks = vec![(
        "extremes".to_string(),
        vec![
            0.0,
            -0.0,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            f64::MAX,
            f64::from_bits(0x0123_4567_89ab_cdef),
        ],
    )];
    write_ndck(&path, &blocks).unwrap();
    let back = read_ndck(&path).unwrap();
    assert_eq!(back.len(), 1);
    for (a, b) in blocks[0].1.iter().zip(&back[0].1) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn pgm_is_p5_with_rounded_byte_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.pgm");
    // Includes out-of-range values, which clamp before quantization.
    write_pgm(&path, &[0.0, 1.0, 0.5, 0.998, -0.3, 1.7], 2, 3).unwrap();
    let bytes = fs::read(&path).unwrap();
    let expected = [b"P5\n3 2\n255\n".as_slice(), &[0u8, 255, 128, 254, 0, 255]].concat();
    assert_eq!(bytes, expected);
}

#[test]
fn report_csv_has_the_documented_header_and_field_order() {
    assert_eq!(
        REPORT_HEADER,
        "family,order,fx_shape,param_count,is_mean,is_std,fid,seconds_per_step"
    );
    let row = MetricReport {
        family: "ode2".into(),
        order: 2,
        fx_shape: "single_layer".into(),
        param_count: 72,
        is_mean: 1.25,
        is_std: 0.01,
        fid: 3.5,
        seconds_per_step: 0.002,
    };
    let line = row.to_csv();
    assert_eq!(line.split(',').count(), REPORT_HEADER.split(',').count());
    assert!(line.starts_with("ode2,2,single_layer,72,"));
    let back = MetricReport::from_csv(&line).unwrap();
    assert_eq!(back.family, "ode2");
    assert_eq!(back.param_count, 72);
    assert_eq!(back.fid, 3.5);
}
