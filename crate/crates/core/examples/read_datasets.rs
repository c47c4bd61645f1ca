//! Write one-record IDX and CIFAR-10 files and parse them back.

use archdoor::data::{encode_idx_images, encode_idx_labels, load_cifar_binary, load_idx, Split, CIFAR_RECORD};

fn main() -> archdoor::Result<()> {
    let dir = std::env::temp_dir().join(format!("archdoor-datasets-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| archdoor::Error::io(&dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| archdoor::Error::io(&p, e)).map(|_| p)
    };

    let pixels: Vec<u8> = (0..16).map(|i| (i * 17) as u8).collect();
    let images = write("images-idx3-ubyte", &encode_idx_images(&[pixels], 4, 4))?;
    let labels = write("labels-idx1-ubyte", &encode_idx_labels(&[3]))?;
    let idx = load_idx(&images, &labels, Split::Test)?;
    println!("idx: {} image(s) of {:?}, label {}, first row {:?}", idx.len(), idx.images[0].shape(), idx.labels[0], &idx.images[0].data()[..4]);

    let mut rec = vec![128u8; CIFAR_RECORD];
    rec[0] = 9;
    let batch = write("data_batch.bin", &rec)?;
    let cifar = load_cifar_binary(&[batch], Split::Train)?;
    println!("cifar: {} image(s) of {:?}, label {}", cifar.len(), cifar.images[0].shape(), cifar.labels[0]);
    std::fs::remove_dir_all(&dir).map_err(|e| archdoor::Error::io(&dir, e))?;
    Ok(())
}
