use std::fs;
use std::path::Path;

use ssal::cifar::{load_cifar, CifarVariant, SIDE};
use ssal::config::{DataConfig, DatasetKind};
use ssal::Error;
use ssal_core::datasets::Split;

const PLANE: usize = SIDE * SIDE;

/// Record `r` of a fabricated batch: red plane 2r, green 2r+1, blue 255, and
/// the label bytes in front.
fn record(header: &[u8], r: usize) -> Vec<u8> {
    let mut out = header.to_vec();
    out.extend(std::iter::repeat_n((2 * r) as u8, PLANE));
    out.extend(std::iter::repeat_n((2 * r + 1) as u8, PLANE));
    out.extend(std::iter::repeat_n(255u8, PLANE));
    out
}

fn write_batch(path: &Path, headers: &[Vec<u8>]) {
    let bytes: Vec<u8> = headers.iter().enumerate().flat_map(|(r, h)| record(h, r)).collect();
    fs::write(path, bytes).unwrap();
}

fn fake_cifar10(dir: &Path, per_file: usize) {
    for (f, name) in CifarVariant::Cifar10.files(Split::Train).iter().enumerate() {
        let headers: Vec<Vec<u8>> = (0..per_file).map(|r| vec![((f + r) % 10) as u8]).collect();
        write_batch(&dir.join(name), &headers);
    }
    write_batch(&dir.join("test_batch.bin"), &[vec![3], vec![9]]);
}

#[test]
fn cifar10_layout_and_values() {
    let dir = tempfile::tempdir().unwrap();
    fake_cifar10(dir.path(), 3);
    let train = load_cifar(dir.path(), CifarVariant::Cifar10, Split::Train).unwrap();
    assert_eq!(train.len(), 15);
    assert_eq!(train.num_classes(), 10);
    assert_eq!(train.image_shape(), Some((32, 32, 3)));
    assert_eq!(train.hidden_label(0), Some(0));
    assert_eq!(train.hidden_label(4), Some(2));
    let img = train.image(1);
    assert_eq!(img.get(0, 0, 0), 2.0 / 255.0);
    assert_eq!(img.get(31, 17, 1), 3.0 / 255.0);
    assert_eq!(img.get(5, 5, 2), 1.0);
    assert_eq!(train.class_names()[7], "class-7");

    let test = load_cifar(dir.path(), CifarVariant::Cifar10, Split::Test).unwrap();
    assert_eq!(test.hidden_labels(), &[3, 9]);
}

#[test]
fn nested_archive_directory_and_class_names() {
    let dir = tempfile::tempdir().unwrap();
    let nested = dir.path().join("cifar-10-batches-bin");
    fs::create_dir(&nested).unwrap();
    fake_cifar10(&nested, 1);
    let names = ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];
    fs::write(nested.join("batches.meta.txt"), names.join("\n") + "\n\n").unwrap();
    let ds = load_cifar(dir.path(), CifarVariant::Cifar10, Split::Test).unwrap();
    assert_eq!(ds.class_names(), names);
}

#[test]
fn cifar100_uses_fine_labels() {
    let dir = tempfile::tempdir().unwrap();
    write_batch(&dir.path().join("train.bin"), &[vec![4, 77], vec![19, 99]]);
    write_batch(&dir.path().join("test.bin"), &[vec![0, 0]]);
    let ds = load_cifar(dir.path(), CifarVariant::Cifar100, Split::Train).unwrap();
    assert_eq!(ds.num_classes(), 100);
    assert_eq!(ds.hidden_labels(), &[77, 99]);
}

#[test]
fn missing_files_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_cifar(dir.path(), CifarVariant::Cifar10, Split::Train).unwrap_err();
    assert!(matches!(err, Error::Ingest { .. }), "{err}");
    assert!(err.to_string().contains("data_batch_1.bin"), "{err}");

    fake_cifar10(dir.path(), 1);
    fs::remove_file(dir.path().join("data_batch_4.bin")).unwrap();
    let err = load_cifar(dir.path(), CifarVariant::Cifar10, Split::Train).unwrap_err();
    assert!(err.to_string().contains("data_batch_4.bin"), "{err}");
}

#[test]
fn truncated_and_empty_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    fake_cifar10(dir.path(), 2);
    let path = dir.path().join("test_batch.bin");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    let err = load_cifar(dir.path(), CifarVariant::Cifar10, Split::Test).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");

    fs::write(&path, b"").unwrap();
    let err = load_cifar(dir.path(), CifarVariant::Cifar10, Split::Test).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");

    write_batch(&path, &[vec![10]]);
    let err = load_cifar(dir.path(), CifarVariant::Cifar10, Split::Test).unwrap_err();
    assert!(err.to_string().contains("label 10"), "{err}");
}

#[test]
fn data_config_applies_limits() {
    let dir = tempfile::tempdir().unwrap();
    fake_cifar10(dir.path(), 4);
    let cfg = DataConfig {
        dataset: DatasetKind::Cifar10,
        dir: Some(dir.path().to_path_buf()),
        train_limit: Some(7),
        test_limit: Some(1),
        ..DataConfig::default()
    };
    let (train, test) = cfg.load().unwrap();
    assert_eq!((train.len(), test.len()), (7, 1));

    let err = DataConfig { dir: None, ..cfg }.load().unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err}");
}
