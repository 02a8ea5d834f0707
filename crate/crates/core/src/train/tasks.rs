//! Toy sequence tasks: character-level language modelling and symbol copying.

use std::sync::OnceLock;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::compress::rng_from_seed;
use crate::error::{Error, Result};

/// Length of the built-in corpus in bytes.
pub const BUNDLED_CORPUS_LEN: usize = 1 << 20;

const DETERMINERS: &[&str] = &["the", "a", "every", "one", "that", "this", "some"];
const ADJECTIVES: &[&str] = &[
    "quick", "lazy", "small", "bright", "quiet", "heavy", "green", "ancient", "narrow", "gentle",
    "bitter", "curious", "silver", "hollow", "wooden", "frozen", "crooked", "patient", "restless",
    "golden", "dusty", "tiny", "vast", "clever", "humble",
];
const NOUNS: &[(&str, &str)] = &[
    ("fox", "foxes"),
    ("dog", "dogs"),
    ("river", "rivers"),
    ("tower", "towers"),
    ("merchant", "merchants"),
    ("garden", "gardens"),
    ("lantern", "lanterns"),
    ("child", "children"),
    ("engine", "engines"),
    ("valley", "valleys"),
    ("sailor", "sailors"),
    ("window", "windows"),
    ("bridge", "bridges"),
    ("teacher", "teachers"),
    ("letter", "letters"),
    ("forest", "forests"),
    ("machine", "machines"),
    ("village", "villages"),
    ("mirror", "mirrors"),
    ("painter", "painters"),
    ("island", "islands"),
    ("signal", "signals"),
    ("harbor", "harbors"),
    ("kettle", "kettles"),
    ("compass", "compasses"),
    ("farmer", "farmers"),
    ("storm", "storms"),
    ("candle", "candles"),
];
const VERBS: &[(&str, &str)] = &[
    ("watches", "watch"),
    ("follows", "follow"),
    ("carries", "carry"),
    ("builds", "build"),
    ("finds", "find"),
    ("crosses", "cross"),
    ("remembers", "remember"),
    ("paints", "paint"),
    ("guards", "guard"),
    ("opens", "open"),
    ("repairs", "repair"),
    ("counts", "count"),
    ("visits", "visit"),
    ("hides", "hide"),
    ("measures", "measure"),
    ("answers", "answer"),
    ("lifts", "lift"),
    ("signals", "signal"),
];
const INTRANSITIVE: &[(&str, &str)] = &[
    ("sleeps", "sleep"),
    ("waits", "wait"),
    ("wanders", "wander"),
    ("listens", "listen"),
    ("shines", "shine"),
    ("trembles", "tremble"),
    ("returns", "return"),
    ("sings", "sing"),
];
const ADVERBS: &[&str] = &[
    "slowly", "quietly", "often", "rarely", "gladly", "again", "nearly", "softly", "today",
    "always", "never", "briskly",
];
const PREPOSITIONS: &[&str] = &[
    "over", "under", "near", "beyond", "behind", "across", "beside", "through", "toward",
];
const CONJUNCTIONS: &[&str] = &["and", "but", "while", "because", "so"];

fn noun_phrase<R: Rng>(rng: &mut R, out: &mut String) -> bool {
    let plural = rng.random_bool(0.3);
    let (sg, pl) = *NOUNS.choose(rng).expect("non-empty");
    if plural {
        out.push_str(["the", "some", "many", "few", "these"].choose(rng).expect("non-empty"));
    } else {
        out.push_str(DETERMINERS.choose(rng).expect("non-empty"));
    }
    out.push(' ');
    if rng.random_bool(0.5) {
        out.push_str(ADJECTIVES.choose(rng).expect("non-empty"));
        out.push(' ');
    }
    out.push_str(if plural { pl } else { sg });
    plural
}

fn clause<R: Rng>(rng: &mut R, out: &mut String) {
    let plural = noun_phrase(rng, out);
    out.push(' ');
    if rng.random_bool(0.2) {
        out.push_str(ADVERBS.choose(rng).expect("non-empty"));
        out.push(' ');
    }
    if rng.random_bool(0.7) {
        let (s, p) = *VERBS.choose(rng).expect("non-empty");
        out.push_str(if plural { p } else { s });
        out.push(' ');
        noun_phrase(rng, out);
    } else {
        let (s, p) = *INTRANSITIVE.choose(rng).expect("non-empty");
        out.push_str(if plural { p } else { s });
    }
    if rng.random_bool(0.4) {
        out.push(' ');
        out.push_str(PREPOSITIONS.choose(rng).expect("non-empty"));
        out.push(' ');
        noun_phrase(rng, out);
    }
}

/// Generates `len` bytes of seeded pseudo-English: agreeing subject/verb
/// clauses over a fixed word list, joined by conjunctions and punctuation.
pub fn generate_corpus(len: usize, seed: u64) -> String {
    let mut rng = rng_from_seed(seed);
    let mut out = String::with_capacity(len + 256);
    while out.len() < len {
        clause(&mut rng, &mut out);
        while rng.random_bool(0.3) {
            out.push_str(if rng.random_bool(0.5) { ", " } else { " " });
            out.push_str(CONJUNCTIONS.choose(&mut rng).expect("non-empty"));
            out.push(' ');
            clause(&mut rng, &mut out);
        }
        out.push_str(". ");
    }
    out.truncate(len);
    out
}

/// The built-in training text, generated once per process.
pub fn bundled_corpus() -> &'static str {
    static CORPUS: OnceLock<String> = OnceLock::new();
    CORPUS.get_or_init(|| generate_corpus(BUNDLED_CORPUS_LEN, 0x5EED))
}

/// Character vocabulary and the tokenized text.
#[derive(Debug, Clone, PartialEq)]
pub struct CharCorpus {
    pub vocab: Vec<char>,
    pub tokens: Vec<usize>,
}

impl CharCorpus {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut vocab: Vec<char> = text.chars().collect();
        vocab.sort_unstable();
        vocab.dedup();
        if vocab.len() < 2 {
            return Err(Error::Invalid("corpus needs at least two distinct characters".into()));
        }
        let tokens = text
            .chars()
            .map(|c| vocab.binary_search(&c).expect("char from vocab"))
            .collect();
        Ok(Self { vocab, tokens })
    }
}

/// One training example: an input token per step and an optional target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<usize>,
    pub targets: Vec<Option<usize>>,
}

/// Copy task layout: `s_1 .. s_L, DELIM, BLANK x (L - 1)` as input, with
/// `s_1 .. s_L` as targets from the delimiter onward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopyTask {
    pub alphabet: usize,
    pub length: usize,
}

impl CopyTask {
    pub fn vocab_size(&self) -> usize {
        self.alphabet + 2
    }

    pub fn delimiter(&self) -> usize {
        self.alphabet
    }

    pub fn blank(&self) -> usize {
        self.alphabet + 1
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Sequence {
        let symbols: Vec<usize> = (0..self.length).map(|_| rng.random_range(0..self.alphabet)).collect();
        let mut inputs = symbols.clone();
        inputs.push(self.delimiter());
        inputs.extend(std::iter::repeat_n(self.blank(), self.length - 1));
        let mut targets = vec![None; self.length];
        targets.extend(symbols.into_iter().map(Some));
        Sequence { inputs, targets }
    }

    pub fn dataset(&self, count: usize, seed: u64) -> Vec<Sequence> {
        let mut rng = rng_from_seed(seed);
        (0..count).map(|_| self.sample(&mut rng)).collect()
    }
}
