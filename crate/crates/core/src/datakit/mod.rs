//! WAV I/O, SNR-controlled mixing, manifests and a synthetic corpus.

pub mod manifest;
pub mod mix;
pub mod synth;
pub mod wav;

pub use manifest::{
    build_manifest, entry_id, BuildConfig, Manifest, ManifestEntry, NoiseCatalog, Partition, Split,
    TEST_SNRS, TRAIN_SNRS,
};
pub use mix::{measured_snr, mix_at_snr, Mixture};
pub use synth::{generate_corpus, CorpusConfig, CorpusLayout, TEST_NOISE_TYPES, TRAIN_NOISE_TYPES};
pub use wav::{read_wav, write_wav};
