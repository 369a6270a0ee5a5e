use std::fs;

use hloc_core::classifier::SoftmaxModel;
use hloc_core::descriptor::{self, Descriptor, DescriptorSet, Method};
use hloc_core::Error;

fn sample() -> DescriptorSet {
    let rows = (0..4)
        .map(|i| {
            Descriptor::new(
                format!("r/{i}"),
                vec![i as f32, -0.5, f32::MIN_POSITIVE, 1e30],
            )
        })
        .collect();
    DescriptorSet::new(Method::Hog, 4, rows).unwrap()
}

#[test]
fn descriptor_file_layout_is_little_endian() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    descriptor::export(&sample(), &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"HLOC");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
    assert_eq!(bytes.len(), 16 + 16 * 4);
    assert_eq!(
        f32::from_le_bytes(bytes[16 + 4 * 4..16 + 5 * 4].try_into().unwrap()),
        1.0
    );
    let sidecar: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("d.json")).unwrap()).unwrap();
    assert_eq!(sidecar["ids"][3], "r/3");
    assert_eq!(sidecar["method"], "hog");
    let back = descriptor::load(&path).unwrap();
    assert_eq!(back.rows(), sample().rows());
}

#[test]
fn damaged_descriptor_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    descriptor::export(&sample(), &path).unwrap();
    let good = fs::read(&path).unwrap();
    let cases: Vec<Vec<u8>> = vec![
        {
            let mut b = good.clone();
            b[0] = b'X';
            b
        },
        {
            let mut b = good.clone();
            b[4] = 2;
            b
        },
        good[..good.len() - 3].to_vec(),
        {
            let mut b = good.clone();
            b.push(0);
            b
        },
        good[..10].to_vec(),
    ];
    for bad in cases {
        fs::write(&path, &bad).unwrap();
        assert!(matches!(descriptor::load(&path), Err(Error::Format { .. })));
    }
}

#[test]
fn model_file_round_trips_and_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.hlcm");
    let model = SoftmaxModel::new(
        vec!["a".into(), "bé".into()],
        2,
        vec![0.5, -1.0, 2.0, 0.25],
        vec![0.0, 1.5],
    )
    .unwrap();
    model.save(&path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"HLCM");
    let back = SoftmaxModel::load(&path).unwrap();
    assert_eq!(back.rooms(), model.rooms());
    assert_eq!(back.weights(), model.weights());
    fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
    assert!(SoftmaxModel::load(&path).is_err());
}
