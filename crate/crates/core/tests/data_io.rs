use std::path::PathBuf;

use mp3dcnn::data_io::nifti::{decode_nifti1, Endianness};
use mp3dcnn::data_io::{
    generate_synthetic_dataset, load_dataset, read_checkpoint, read_manifest, read_nifti1, read_nifti1_header,
    write_checkpoint, write_dataset, write_nifti1, NiftiWriteOptions, Stimulus, SyntheticConfig,
};
use mp3dcnn::model::{ArchConfig, ModelKind, Mp3dcnnParams};
use mp3dcnn::{Error, Rng, Tensor};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/nifti").join(name)
}

fn expected(key: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(fixture("expected.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v[key].clone()
}

fn expected_tensor(key: &str) -> Tensor<f64> {
    let e = expected(key);
    let shape: Vec<usize> = serde_json::from_value(e["shape"].clone()).unwrap();
    let data: Vec<f64> = serde_json::from_value(e["data"].clone()).unwrap();
    Tensor::from_vec(&shape, data).unwrap()
}

#[test]
fn little_endian_float32_fixture() {
    let (h, t) = read_nifti1(fixture("le_f32.nii")).unwrap();
    assert_eq!(h.endianness, Endianness::Little);
    assert_eq!(h.sizeof_hdr, 348);
    assert_eq!((h.datatype, h.bitpix), (16, 32));
    assert_eq!(t, expected_tensor("le_f32"));
    assert!(t.get(&[1, 2, 0]).is_sign_negative());
}

#[test]
fn big_endian_scaled_int16_fixture_matches_its_twin() {
    let (h, be) = read_nifti1(fixture("be_i16_scaled.nii")).unwrap();
    assert_eq!(h.endianness, Endianness::Big);
    assert_eq!((h.scl_slope, h.scl_inter), (0.5, -3.0));
    assert_eq!(be, expected_tensor("i16_scaled"));
    let (h_le, le) = read_nifti1(fixture("le_i16_scaled.nii")).unwrap();
    assert_eq!(h_le.endianness, Endianness::Little);
    assert_eq!(be, le);
}

#[test]
fn truncated_and_bad_magic_fixtures() {
    let e = expected("truncated");
    match read_nifti1(fixture("truncated.nii")) {
        Err(Error::TruncatedFile { needed, found }) => {
            assert_eq!(needed, e["needed"].as_u64().unwrap());
            assert_eq!(found, e["found"].as_u64().unwrap());
        }
        other => panic!("expected TruncatedFile, got {other:?}"),
    }
    assert!(matches!(read_nifti1(fixture("bad_magic.nii")), Err(Error::BadMagic(m)) if &m == b"n+2\0"));
    assert!(matches!(read_nifti1(fixture("pair_ni1.nii")), Err(Error::HeaderPairUnsupported)));
    assert!(matches!(
        read_nifti1(fixture("uint8.nii")),
        Err(Error::UnsupportedDatatype { datatype: 2, bitpix: 8 })
    ));
    assert!(matches!(read_nifti1(fixture("missing.nii")), Err(Error::Io { .. })));
}

#[test]
fn header_only_read() {
    let h = read_nifti1_header(fixture("be_i16_scaled.nii")).unwrap();
    assert_eq!(h.shape(), vec![5, 4, 3]);
    assert_eq!(h.dim[0], 3);
}

#[test]
fn writer_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(2);
    let x = Tensor::<f32>::random_uniform(&[6, 7, 8], -2.0, 2.0, &mut rng).unwrap().cast::<f64>();
    let path = dir.path().join("v.nii");
    write_nifti1(&path, &x, &NiftiWriteOptions::default()).unwrap();
    assert_eq!(read_nifti1(&path).unwrap().1, x);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(decode_nifti1(&bytes).unwrap().1, x);
}

fn small_cfg() -> SyntheticConfig {
    SyntheticConfig {
        n_subjects: 3,
        volumes_per_class: 2,
        shape: [8, 8, 8],
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn manifest_round_trip_preserves_order_and_voxels() {
    let dir = tempfile::tempdir().unwrap();
    let records = generate_synthetic_dataset(&small_cfg()).unwrap();
    let path = dir.path().join("data.json");
    let manifest = write_dataset(&path, &records, None).unwrap();
    assert_eq!(manifest.records.len(), 24);
    assert_eq!(read_manifest(&path).unwrap(), manifest);
    let (_, loaded) = load_dataset(&path).unwrap();
    assert_eq!(loaded, records);
    let counts = manifest.group_counts();
    assert_eq!(counts.len(), 12);
    assert!(counts.values().all(|&c| c == 2));
}

#[test]
fn manifest_with_nifti_records() {
    let dir = tempfile::tempdir().unwrap();
    let vol = Tensor::<f64>::full(&[8, 8, 8], 0.5);
    write_nifti1(dir.path().join("a.nii"), &vol, &NiftiWriteOptions::default()).unwrap();
    let text = r#"{"format": "mp3dcnn-manifest", "version": 1, "shape": [8, 8, 8],
        "records": [{"id": "a", "path": "a.nii", "encoding": "nifti1", "subject": "p1", "stimulus": "female_face"}]}"#;
    std::fs::write(dir.path().join("m.json"), text).unwrap();
    let (m, recs) = load_dataset(dir.path().join("m.json")).unwrap();
    assert_eq!(m.records[0].averaged_from, 1);
    assert_eq!(recs[0].stimulus, Stimulus::FemaleFace);
    assert_eq!(recs[0].volume, vol.cast::<f32>());

    // referenced file must exist; shape must match
    std::fs::write(dir.path().join("m2.json"), text.replace("a.nii", "b.nii")).unwrap();
    assert!(matches!(load_dataset(dir.path().join("m2.json")), Err(Error::Io { .. })));
    std::fs::write(dir.path().join("m3.json"), text.replace("[8, 8, 8]", "[8, 8, 9]")).unwrap();
    assert!(matches!(load_dataset(dir.path().join("m3.json")), Err(Error::ShapeMismatch { .. })));
    std::fs::write(dir.path().join("m4.json"), text.replace("\"version\": 1", "\"version\": 7")).unwrap();
    assert!(matches!(load_dataset(dir.path().join("m4.json")), Err(Error::BadManifest(_))));
}

#[test]
fn checkpoint_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = Mp3dcnnParams::<f32>::init(ModelKind::Mp3dcnn, &ArchConfig::reduced(), &Rng::new(1)).unwrap();
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&path, &p, serde_json::json!({"fold": 2})).unwrap();
    let (q, h) = read_checkpoint::<f32>(&path, Some(ModelKind::Mp3dcnn)).unwrap();
    assert_eq!(q, p);
    assert_eq!(h.meta["fold"], 2);
    // widening to double is exact
    let (d, _) = read_checkpoint::<f64>(&path, None).unwrap();
    assert_eq!(d, p.cast::<f64>());

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        read_checkpoint::<f32>(&path, None),
        Err(Error::ChecksumMismatch { .. })
    ));
}

/// Linear probe built from voxel means: the weight vector is the
/// difference of the two class-mean volumes and the threshold sits midway
/// between the class means of the projected training scores.
fn mean_template_probe(train: &[(&[f32], bool)], test: &[(&[f32], bool)]) -> f64 {
    let dim = train[0].0.len();
    let mut sums = [vec![0.0f64; dim], vec![0.0f64; dim]];
    let mut counts = [0usize; 2];
    for (x, y) in train {
        let c = usize::from(*y);
        counts[c] += 1;
        for (s, &v) in sums[c].iter_mut().zip(x.iter()) {
            *s += v as f64;
        }
    }
    let w: Vec<f64> = (0..dim)
        .map(|j| sums[1][j] / counts[1] as f64 - sums[0][j] / counts[0] as f64)
        .collect();
    let score = |x: &[f32]| -> f64 { x.iter().zip(&w).map(|(&v, c)| v as f64 * c).sum() };
    let mut class_score = [0.0f64; 2];
    for (x, y) in train {
        class_score[usize::from(*y)] += score(x) / counts[usize::from(*y)] as f64;
    }
    let threshold = 0.5 * (class_score[0] + class_score[1]);
    let correct = test.iter().filter(|(x, y)| (score(x) > threshold) == *y).count();
    correct as f64 / test.len() as f64
}

/// Means over 4×4×4 cells of a 24³ volume.
fn cell_means(v: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; 216];
    for z in 0..24 {
        for y in 0..24 {
            for x in 0..24 {
                out[(z / 4 * 6 + y / 4) * 6 + x / 4] += v[(z * 24 + y) * 24 + x] / 64.0;
            }
        }
    }
    out
}

#[test]
fn synthetic_data_is_linearly_separable_at_unit_noise() {
    for seed in [5, 6, 7] {
        let cfg = SyntheticConfig {
            n_subjects: 10,
            volumes_per_class: 20,
            shape: [24, 24, 24],
            amplitude: 0.5,
            noise_sigma: 1.0,
            seed,
            ..Default::default()
        };
        let recs = generate_synthetic_dataset(&cfg).unwrap();
        let feats: Vec<(Vec<f32>, bool, bool)> = recs
            .iter()
            .map(|r| (cell_means(r.volume.data()), r.stimulus.is_face(), r.subject.as_str() < "s08"))
            .collect();
        let split = |is_train: bool| -> Vec<(&[f32], bool)> {
            feats
                .iter()
                .filter(|f| f.2 == is_train)
                .map(|(x, y, _)| (x.as_slice(), *y))
                .collect()
        };
        let acc = mean_template_probe(&split(true), &split(false));
        assert!(acc > 0.95, "seed {seed}: probe accuracy {acc}");
    }
}
