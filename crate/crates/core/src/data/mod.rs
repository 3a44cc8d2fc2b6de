//! Phantom generation, slice preprocessing, codecs and dataset manifests.

pub mod codec;
pub mod manifest;
pub mod phantom;
pub mod preprocess;

pub use codec::{
    decode_image, encode_image, encode_pgm, read_image, read_mask, write_image, write_mask, write_pgm, ModelFile,
    ModelKind,
};
pub use manifest::{
    load_split, read_manifest, split_sizes, write_dataset, LoadedSample, Manifest, ManifestEntry, Split,
};
pub use phantom::{
    generate_phantom, generate_set, GeneratedSet, LesionMeta, PhantomMeta, PhantomParams, PhantomSample,
    GENERATOR_VERSION,
};
pub use preprocess::{center_crop_on_mask, keep_slice, normalize_intensity, CropWindow};
