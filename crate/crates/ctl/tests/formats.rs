use ctl::checkpoint_io::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError};
use ctl::dataset::{read_manifest, write_corpus, Dataset};
use ctl::pnm::{decode_pgm, decode_ppm, encode_pgm16_unit, encode_pgm8, encode_ppm};
use ctl::tables::{read_matrix_csv, read_predictions_csv, read_truth_csv, write_matrix_csv, write_predictions_csv, write_truth_csv};
use ctl_core::checkpoint::{Blob, ModelCheckpoint, CHECKPOINT_FORMAT_VERSION};
use ctl_core::classifier::ClassProbabilities;
use ctl_core::data::ClassLabel;
use ctl_core::image::{GrayImage, RgbImage};
use ctl_core::synth::{generate_corpus, CorpusConfig};
use ctl_core::vote::PatchPredictionMatrix;
use proptest::prelude::*;

fn blobs() -> impl Strategy<Value = ModelCheckpoint> {
    prop::collection::vec(("[a-z.]{1,12}", prop::collection::vec(1usize..4, 1..3), any::<u32>()), 1..5).prop_map(|v| {
        let blobs = v
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape, bits))| {
                let n: usize = shape.iter().product();
                let data = (0..n as u32).map(|k| f32::from_bits(bits.wrapping_add(k.wrapping_mul(0x9e37_79b9)))).collect();
                Blob::new(format!("{name}{i}"), &shape, data).unwrap()
            })
            .collect();
        ModelCheckpoint { format_version: CHECKPOINT_FORMAT_VERSION, blobs }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoint_bytes_round_trip(ck in blobs()) {
        let bytes = encode_checkpoint(&ck);
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn any_single_bit_flip_is_rejected(ck in blobs(), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let mut bytes = encode_checkpoint(&ck);
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        prop_assert!(decode_checkpoint(&bytes).is_err());
    }

    #[test]
    fn any_truncation_is_rejected(ck in blobs(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_checkpoint(&ck);
        let len = cut.index(bytes.len());
        prop_assert!(decode_checkpoint(&bytes[..len]).is_err());
    }

    #[test]
    fn pgm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let img = GrayImage::from_fn(w, h, |r, c| ((r * 31 + c * 17 + seed as usize) % 256) as f32);
        let (back, maxval) = decode_pgm(&encode_pgm8(&img)).unwrap();
        prop_assert_eq!(maxval, 255);
        prop_assert_eq!(back, img.clone());
        let unit = img.map(|v| v / 255.0);
        let (wide, maxval) = decode_pgm(&encode_pgm16_unit(&unit)).unwrap();
        prop_assert_eq!(maxval, 65535);
        for (a, b) in wide.pixels().iter().zip(unit.pixels()) {
            prop_assert!((a / 65535.0 - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
        let rgb = RgbImage { width: w, height: h, data: (0..3 * w * h).map(|i| (i % 251) as u8).collect() };
        prop_assert_eq!(decode_ppm(&encode_ppm(&rgb)).unwrap(), rgb);
    }
}

#[test]
fn structured_corruptions_name_the_failure() {
    let ck = ModelCheckpoint { format_version: CHECKPOINT_FORMAT_VERSION, blobs: vec![Blob::new("w", &[2, 2], vec![1.0, -2.0, 0.5, 3.25]).unwrap()] };
    let bytes = encode_checkpoint(&ck);
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert_eq!(decode_checkpoint(&magic), Err(CheckpointError::BadMagic));
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(decode_checkpoint(&version), Err(CheckpointError::UnsupportedVersion { found: 9, .. })));
    assert_eq!(decode_checkpoint(&bytes[..bytes.len() - 2]), Err(CheckpointError::Truncated));
    let mut payload = bytes.clone();
    let n = payload.len();
    payload[n - 6] ^= 0x40;
    assert!(matches!(decode_checkpoint(&payload), Err(CheckpointError::ChecksumMismatch { .. })));
    let mut longer = bytes.clone();
    longer.push(7);
    assert!(decode_checkpoint(&longer).is_err());
}

#[test]
fn pgm_header_comments_and_errors() {
    let bytes = b"P5\n# comment\n2 1\n# another\n255\n\x05\x07".to_vec();
    let (img, _) = decode_pgm(&bytes).unwrap();
    assert_eq!(img.pixels(), &[5.0, 7.0]);
    assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    assert!(decode_pgm(b"P5\n2 2\n255\n\x01").is_err());
}

#[test]
fn tables_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = PatchPredictionMatrix::new("V007", 2, 3, vec![0.1, 0.25, 0.9, 1.0, 0.0, 0.123456789]).unwrap();
    let path = dir.path().join("V007.csv");
    write_matrix_csv(&path, &m).unwrap();
    assert_eq!(read_matrix_csv(&path).unwrap(), m);

    let preds = vec![
        ("a".to_string(), ClassProbabilities::new([0.1, 0.2, 0.3, 0.15, 0.25]).unwrap()),
        ("b".to_string(), ClassProbabilities::new([0.6, 0.1, 0.1, 0.1, 0.1]).unwrap()),
    ];
    let p = dir.path().join("pred.csv");
    write_predictions_csv(&p, &preds).unwrap();
    assert_eq!(read_predictions_csv(&p).unwrap(), preds);

    let t = dir.path().join("truth.csv");
    write_truth_csv(&t, &[("a".into(), ClassLabel::HSIL), ("b".into(), ClassLabel::MI)]).unwrap();
    let truth = read_truth_csv(&t).unwrap();
    assert_eq!(truth["a"], ClassLabel::HSIL);
    assert_eq!(truth["b"], ClassLabel::MI);
}

#[test]
fn corpus_files_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusConfig { patients_per_class: 1, frames_per_volume: 2, ..CorpusConfig::default() }).unwrap();
    write_corpus(dir.path(), &corpus).unwrap();
    let manifest = read_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest, corpus.manifest);
    let ds = Dataset::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(ds.images, corpus.patches);
    let ck_path = dir.path().join("c.ckpt");
    let ck = ModelCheckpoint { format_version: CHECKPOINT_FORMAT_VERSION, blobs: vec![Blob::new("x", &[1], vec![f32::NAN]).unwrap()] };
    save_checkpoint(&ck_path, &ck).unwrap();
    assert_eq!(load_checkpoint(&ck_path).unwrap(), ck);
}
