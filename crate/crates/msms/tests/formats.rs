use std::path::Path;

use msms::checkpoint::{self, decode, encode, MAGIC};
use msms::{fsutil, wav, Error};
use msms_core::{ParamStore, Tensor};
use proptest::prelude::*;

fn tensors() -> impl Strategy<Value = Vec<(String, Tensor<f32>)>> {
    let one = ("[a-z.]{0,12}", prop::collection::vec(1usize..4, 0..4)).prop_flat_map(|(name, shape)| {
        let n: usize = shape.iter().product();
        prop::collection::vec(any::<f32>(), n).prop_map(move |data| (name.clone(), Tensor::new(&shape, data).unwrap()))
    });
    prop::collection::vec(one, 0..5)
}

proptest! {
    #[test]
    fn container_round_trips_bit_exactly(ts in tensors()) {
        let bytes = encode(ts.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
        let back = decode(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(back.len(), ts.len());
        for ((n0, t0), (n1, t1)) in ts.iter().zip(&back) {
            prop_assert_eq!(n0, n1);
            prop_assert_eq!(t0.shape(), t1.shape());
            let a: Vec<u32> = t0.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn truncation_never_yields_a_partial_tensor(ts in tensors(), cut in 1usize..64) {
        let bytes = encode(ts.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
        prop_assume!(bytes.len() > MAGIC.len());
        let keep = bytes.len().saturating_sub(cut).max(MAGIC.len());
        // A cut on a record boundary is a shorter valid container; anywhere
        // else it is an error.
        if let Ok(back) = decode(&bytes[..keep], Path::new("mem")) {
            prop_assert!(back.len() < ts.len());
            for ((n0, t0), (n1, t1)) in ts.iter().zip(&back) {
                prop_assert_eq!(n0, n1);
                prop_assert_eq!(t0.shape(), t1.shape());
            }
            let re = encode(back.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
            prop_assert_eq!(re.len(), keep);
        }
    }
}

#[test]
fn byte_layout_is_little_endian() {
    let t = Tensor::new(&[2, 1], vec![1.0f32, -2.5]).unwrap();
    let bytes = encode([("ab", &t)]).unwrap();
    let mut want = b"MSMS1".to_vec();
    want.extend_from_slice(&2u32.to_le_bytes());
    want.extend_from_slice(b"ab");
    want.extend_from_slice(&2u32.to_le_bytes());
    want.extend_from_slice(&2u32.to_le_bytes());
    want.extend_from_slice(&1u32.to_le_bytes());
    want.extend_from_slice(&1.0f32.to_le_bytes());
    want.extend_from_slice(&(-2.5f32).to_le_bytes());
    assert_eq!(bytes, want);
}

#[test]
fn rejects_bad_magic() {
    let err = decode(b"MSMS2", Path::new("x")).unwrap_err();
    assert_eq!(err.category(), "format");
}

#[test]
fn store_layout_must_match() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.msms");
    let mut a = ParamStore::<f32>::new();
    a.add("w", Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    checkpoint::save_store(&path, &a).unwrap();
    let mut b = ParamStore::<f32>::new();
    b.add("w", Tensor::zeros(&[2]));
    checkpoint::load_store(&path, &mut b).unwrap();
    assert_eq!(b.iter().next().unwrap().1.data(), &[1.0, 2.0]);
    let mut c = ParamStore::<f32>::new();
    c.add("w", Tensor::zeros(&[3]));
    assert!(matches!(checkpoint::load_store(&path, &mut c), Err(Error::Core(_))));
    assert!(matches!(checkpoint::read_tensors(&dir.path().join("none")), Err(Error::Missing { .. })));
}

#[test]
fn wav_is_16_bit_mono_24k() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let x: Vec<f32> = (0..480).map(|i| (i as f32 * 0.05).sin() * 0.8).collect();
    wav::write(&path, &x).unwrap();
    let spec = hound::WavReader::open(&path).unwrap().spec();
    assert_eq!((spec.channels, spec.bits_per_sample, spec.sample_rate), (1, 16, 24_000));
    let y = wav::read(&path).unwrap();
    assert_eq!(y.len(), x.len());
    for (a, b) in x.iter().zip(&y) {
        assert!((a - b).abs() <= 0.5 / 32767.0 + 1e-7);
    }
    assert_eq!(wav::quantize(2.0), i16::MAX);
    assert_eq!(wav::quantize(-1.0), -i16::MAX);
}

#[test]
fn wav_rejects_other_formats() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.wav");
    let spec = hound::WavSpec { channels: 2, sample_rate: 16_000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    w.write_sample(0i16).unwrap();
    w.write_sample(0i16).unwrap();
    w.finalize().unwrap();
    assert_eq!(wav::read(&path).unwrap_err().category(), "format");
}

#[test]
fn jsonl_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.jsonl");
    std::fs::write(&path, "{\"a\":1}\n\n{oops\n").unwrap();
    let err = fsutil::read_jsonl::<serde_json::Value>(&path).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}
