//! Dataset ingestion, model persistence and image export.

mod idx;
mod model_file;
mod pgm;

pub use idx::{
    load_mnist, load_mnist_dir, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, DatasetSplit,
    Split, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use model_file::{load_model, model_from_json, model_to_json, save_model, FORMAT_VERSION};
pub use pgm::{decode_pgm, encode_pgm, export_image_pgm, import_image_pgm};
