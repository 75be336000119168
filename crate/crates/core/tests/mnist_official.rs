// Runs only when MNIST_DIR points at the four official IDX files.

use airfl::harness::ingest_mnist;

#[test]
fn official_training_files() {
    let Some(dir) = std::env::var_os("MNIST_DIR").map(std::path::PathBuf::from) else {
        eprintln!("MNIST_DIR not set; skipping");
        return;
    };
    let train = ingest_mnist(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        None,
    )
    .unwrap();
    assert_eq!(train.len(), 60_000);
    assert_eq!(train.feature_dim, 784);
    assert!(train.labels.iter().all(|&y| y <= 9));
    assert!(train.features.iter().all(|&x| (0.0..=1.0).contains(&x)));

    let test = ingest_mnist(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"), Some(500)).unwrap();
    assert_eq!(test.len(), 500);
}
