//! Corpus loading, split construction and the synthetic dialogue generator.

pub mod corpus;
pub mod splits;
pub mod synth;

pub use corpus::{
    load_star_format, Corpus, CorpusEntry, IntentInventory, LoadOptions, SplitTag, DEFAULT_GREETINGS,
    DEFAULT_OOD_INTENTS, OOD_NAME,
};
pub use splits::{make_splits, truncate_contexts, HiddenLabels, SplitBundle, SplitManifest, UnlabeledPool};
pub use synth::{generate_synthetic, Lexicon, SynthSpec};
