//! Dialogue corpora: tokenization, vocabulary, on-disk format, embeddings.

pub mod dialogue;
pub mod embedding;
pub mod minicorpus;
pub mod tokenize;
pub mod vocab;

pub use dialogue::{load_dialogues, read_dialogues, write_dialogues, Dialogue, Speaker, System, Utterance};
pub use embedding::EmbeddingTable;
pub use tokenize::{detokenize, tokenize};
pub use vocab::{UnkStats, Vocab, EOS, PAD, SOS, UNK};
