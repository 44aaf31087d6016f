//! Shared fixtures for the criterion benches.

use topret::augment::index_corpus;
use topret::embedding::HashedEmbedder;
use topret::synth::{generate, SynthConfig};
use topret::vindex::VectorIndex;
use topret::Corpus;

pub fn fixture(train_size: usize, test_size: usize) -> (Corpus, Corpus, VectorIndex, HashedEmbedder) {
    let (train, test) = generate(&SynthConfig { train_size, test_size, ..SynthConfig::default() })
        .expect("synthetic corpus is well formed");
    let embedder = HashedEmbedder::default();
    let ix = index_corpus(&train, &embedder).expect("nonempty index");
    (train, test, ix, embedder)
}
