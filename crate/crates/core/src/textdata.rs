//! Tokenization, vocabularies, id-space encoding and the JSONL readers.
//!
//! Text is split on whitespace, and punctuation is split off into its own
//! tokens (runs of the same punctuation character stay together, so `...`
//! is one token). Word-vocabulary lookups are lowercased; character
//! vocabularies keep case.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::errorgen::CorruptedSentence;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error)]
pub enum TextDataError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary size must be at least 3, got {0}")]
    VocabTooSmall(usize),
    #[error("malformed vocabulary: {0}")]
    VocabFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {message}")]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl TextDataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        TextDataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Punctuation characters that become standalone tokens.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '“' | '”' | '‘' | '’' | '…' | '«' | '»' | '–' | '—' | '„' | '‹' | '›' | '¿' | '¡' | '·'
        )
}

/// True for tokens made only of punctuation.
pub fn is_punctuation_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punctuation)
}

/// Tokens that end a sentence.
pub fn is_sentence_final(token: &str) -> bool {
    is_punctuation_token(token) && token.chars().all(|c| matches!(c, '.' | '!' | '?' | '…'))
}

/// Byte range of a token inside the text it came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Run {
    None,
    Word,
    Punct(char),
}

pub fn tokenize_spans(text: &str) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    let mut run = Run::None;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        let next = if c.is_whitespace() {
            Run::None
        } else if is_punctuation(c) {
            Run::Punct(c)
        } else {
            Run::Word
        };
        if next != run {
            if run != Run::None {
                spans.push(TokenSpan { start, end: i });
            }
            start = i;
            run = next;
        }
    }
    if run != Run::None {
        spans.push(TokenSpan {
            start,
            end: text.len(),
        });
    }
    spans
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text)
        .into_iter()
        .map(|s| text[s.start..s.end].to_string())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabLevel {
    Word,
    Char,
}

/// Dense token↔id map with `PAD = 0` and `UNK = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    level: VocabLevel,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from tokens ordered by id. The first two entries
    /// must be the PAD and UNK markers.
    pub fn from_tokens(level: VocabLevel, tokens: Vec<String>) -> Result<Vocab, TextDataError> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(TextDataError::VocabFormat(format!(
                "expected {PAD_TOKEN} and {UNK_TOKEN} as the first two entries"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(TextDataError::VocabFormat(format!("duplicate entry {t:?}")));
            }
            if level == VocabLevel::Char && i >= 2 && t.chars().count() != 1 {
                return Err(TextDataError::VocabFormat(format!("char entry {t:?} is not one character")));
            }
        }
        Ok(Vocab {
            level,
            tokens,
            index,
        })
    }

    pub fn level(&self) -> VocabLevel {
        self.level
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn key(&self, token: &str) -> String {
        match self.level {
            VocabLevel::Word => token.to_lowercase(),
            VocabLevel::Char => token.to_string(),
        }
    }

    /// Id of `token`, or `None` when out of vocabulary.
    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(&self.key(token)).copied()
    }

    /// Id of `token`, falling back to `UNK`.
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }

    pub fn char_id(&self, c: char) -> u32 {
        let mut buf = [0u8; 4];
        self.index.get(c.encode_utf8(&mut buf) as &str).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.get(token).is_some()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        id == PAD || id == UNK
    }

    /// Writes one token per line, ordered by id.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), TextDataError> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| TextDataError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>, level: VocabLevel) -> Result<Vocab, TextDataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TextDataError::io(path, e))?;
        Vocab::from_tokens(level, text.lines().map(str::to_string).collect())
    }
}

/// Frequency counter feeding [`VocabBuilder::build`].
#[derive(Clone, Debug)]
pub struct VocabBuilder {
    level: VocabLevel,
    counts: HashMap<String, u64>,
}

impl VocabBuilder {
    pub fn new(level: VocabLevel) -> Self {
        VocabBuilder {
            level,
            counts: HashMap::new(),
        }
    }

    pub fn add_token(&mut self, token: &str) {
        match self.level {
            VocabLevel::Word => *self.counts.entry(token.to_lowercase()).or_default() += 1,
            VocabLevel::Char => {
                for c in token.chars() {
                    *self.counts.entry(c.to_string()).or_default() += 1;
                }
            }
        }
    }

    pub fn add_text(&mut self, text: &str) {
        for token in tokenize(text) {
            self.add_token(&token);
        }
    }

    /// Keeps the `max_size - 2` most frequent entries; ties go to the
    /// lexicographically smaller entry.
    pub fn build(self, max_size: usize) -> Result<Vocab, TextDataError> {
        if max_size < 3 {
            return Err(TextDataError::VocabTooSmall(max_size));
        }
        if self.counts.is_empty() {
            return Err(TextDataError::EmptyCorpus);
        }
        let mut entries: Vec<(String, u64)> = self
            .counts
            .into_iter()
            .filter(|(t, _)| t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
            .into_iter()
            .chain(entries.into_iter().take(max_size - 2).map(|(t, _)| t))
            .collect();
        Vocab::from_tokens(self.level, tokens)
    }
}

/// Builds a word or character vocabulary from raw texts.
pub fn build_vocab<I, S>(texts: I, max_size: usize, level: VocabLevel) -> Result<Vocab, TextDataError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut builder = VocabBuilder::new(level);
    for t in texts {
        builder.add_text(t.as_ref());
    }
    builder.build(max_size)
}

/// A sentence in id space, padded to `n_max` words of `l_max` characters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub n_max: usize,
    pub l_max: usize,
    pub word_ids: Vec<u32>,
    /// Row-major `n_max × l_max`.
    pub char_ids: Vec<u32>,
    pub detect_labels: Vec<u8>,
    pub correct_labels: Vec<u32>,
    pub attn_mask: Vec<u8>,
}

impl EncodedExample {
    pub fn char_row(&self, i: usize) -> &[u32] {
        &self.char_ids[i * self.l_max..(i + 1) * self.l_max]
    }

    /// Number of unmasked positions.
    pub fn len(&self) -> usize {
        self.attn_mask.iter().filter(|m| **m == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of gold errors among unmasked positions.
    pub fn error_count(&self) -> usize {
        self.attn_mask
            .iter()
            .zip(&self.detect_labels)
            .filter(|(m, d)| **m == 1 && **d == 1)
            .count()
    }
}

fn encode_inner<S: AsRef<str>>(
    noisy: &[S],
    clean: Option<(&[S], &[u8])>,
    wv: &Vocab,
    cv: &Vocab,
    n_max: usize,
    l_max: usize,
) -> EncodedExample {
    let mut ex = EncodedExample {
        n_max,
        l_max,
        word_ids: vec![PAD; n_max],
        char_ids: vec![PAD; n_max * l_max],
        detect_labels: vec![0; n_max],
        correct_labels: vec![PAD; n_max],
        attn_mask: vec![0; n_max],
    };
    for (i, tok) in noisy.iter().take(n_max).enumerate() {
        let tok = tok.as_ref();
        ex.word_ids[i] = wv.id(tok);
        for (j, c) in tok.chars().take(l_max).enumerate() {
            ex.char_ids[i * l_max + j] = cv.char_id(c);
        }
        ex.attn_mask[i] = 1;
        match clean {
            Some((clean, mask)) => {
                ex.correct_labels[i] = wv.id(clean[i].as_ref());
                ex.detect_labels[i] = mask[i];
            }
            None => ex.correct_labels[i] = ex.word_ids[i],
        }
    }
    ex
}

/// Encodes a training triple. Out-of-vocabulary noisy tokens become `UNK`
/// while their characters are kept; a clean token outside the vocabulary
/// yields an `UNK` correction label.
pub fn encode(sent: &CorruptedSentence, wv: &Vocab, cv: &Vocab, n_max: usize, l_max: usize) -> EncodedExample {
    encode_inner(&sent.noisy, Some((&sent.clean, &sent.mask)), wv, cv, n_max, l_max)
}

/// Encodes unlabeled tokens for prediction.
pub fn encode_tokens<S: AsRef<str>>(tokens: &[S], wv: &Vocab, cv: &Vocab, n_max: usize, l_max: usize) -> EncodedExample {
    encode_inner(tokens, None, wv, cv, n_max, l_max)
}

/// Reads a corrupted-corpus JSONL file (`{"noisy":…, "clean":…, "mask":…}`).
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorruptedSentence>, TextDataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TextDataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TextDataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sent: CorruptedSentence = serde_json::from_str(&line).map_err(|source| TextDataError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        sent.validate().map_err(|message| TextDataError::InvalidRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        out.push(sent);
    }
    Ok(out)
}

pub fn write_corpus<'a>(
    path: impl AsRef<Path>,
    sentences: impl IntoIterator<Item = &'a CorruptedSentence>,
) -> Result<(), TextDataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| TextDataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sentences {
        writeln!(w, "{}", s.to_json_line()).map_err(|e| TextDataError::io(path, e))?;
    }
    w.flush().map_err(|e| TextDataError::io(path, e))
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(serde_json::Number),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikiMistake {
    /// Index into the whitespace/punctuation tokenization of the text.
    pub token_index: usize,
    pub wrong: String,
    pub suggestions: Vec<String>,
}

/// One document of the Wikipedia spelling test set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WikiTestDocument {
    #[serde(deserialize_with = "string_or_number")]
    pub id: String,
    pub text: String,
    #[serde(deserialize_with = "string_or_number")]
    pub current_revision_id: String,
    #[serde(deserialize_with = "string_or_number")]
    pub previous_revision_id: String,
    #[serde(deserialize_with = "string_or_number")]
    pub page_id: String,
    pub mistakes: Vec<WikiMistake>,
}

impl WikiTestDocument {
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }

    pub fn validate(&self) -> Result<(), String> {
        let tokens = self.tokens();
        for m in &self.mistakes {
            let Some(tok) = tokens.get(m.token_index) else {
                return Err(format!(
                    "mistake {:?} has token_index {} but the text has {} tokens",
                    m.wrong,
                    m.token_index,
                    tokens.len()
                ));
            };
            if *tok != m.wrong {
                return Err(format!(
                    "mistake at token {} says {:?} but the text has {:?}",
                    m.token_index, m.wrong, tok
                ));
            }
            if m.suggestions.is_empty() {
                return Err(format!("mistake {:?} has no suggestions", m.wrong));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct WikiTestSet {
    pub documents: Vec<WikiTestDocument>,
    /// Records skipped in lenient mode.
    pub skipped: Vec<RecordIssue>,
}

/// Reads the test-set JSONL. With `strict`, the first invalid record is an
/// error; otherwise invalid records are skipped and reported.
pub fn read_wiki_testset(path: impl AsRef<Path>, strict: bool) -> Result<WikiTestSet, TextDataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| TextDataError::io(path, e))?;
    let mut set = WikiTestSet::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| TextDataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<WikiTestDocument>(&line);
        let issue = match parsed {
            Ok(doc) => match doc.validate() {
                Ok(()) => {
                    set.documents.push(doc);
                    continue;
                }
                Err(message) if strict => {
                    return Err(TextDataError::InvalidRecord {
                        path: path.to_path_buf(),
                        line: line_no,
                        message,
                    })
                }
                Err(message) => message,
            },
            Err(source) if strict => {
                return Err(TextDataError::Json {
                    path: path.to_path_buf(),
                    line: line_no,
                    source,
                })
            }
            Err(e) => format!("malformed JSON: {e}"),
        };
        set.skipped.push(RecordIssue {
            line: line_no,
            message: issue,
        });
    }
    Ok(set)
}

pub fn write_wiki_testset<'a>(
    path: impl AsRef<Path>,
    docs: impl IntoIterator<Item = &'a WikiTestDocument>,
) -> Result<(), TextDataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| TextDataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        let line = serde_json::to_string(d).expect("document serializes");
        writeln!(w, "{line}").map_err(|e| TextDataError::io(path, e))?;
    }
    w.flush().map_err(|e| TextDataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent reference for the tokenization rule: classify every
    /// character, then cut wherever the class changes or a space occurs.
    fn reference_tokenize(text: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut prev: Option<(bool, char)> = None;
        for c in text.chars() {
            if c.is_whitespace() {
                prev = None;
                continue;
            }
            let punct = is_punctuation(c);
            let same = match prev {
                Some((true, p)) => punct && p == c,
                Some((false, _)) => !punct,
                None => false,
            };
            if same {
                out.last_mut().unwrap().push(c);
            } else {
                out.push(c.to_string());
            }
            prev = Some((punct, c));
        }
        out
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("hà nội"), vec!["hà", "nội"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a,b"), vec!["a", ",", "b"]);
        assert_eq!(reference_tokenize("a,b"), vec!["a", ",", "b"]);
        assert_eq!(tokenize("  Chờ đã... thật sao?! "), vec!["Chờ", "đã", "...", "thật", "sao", "?", "!"]);
        assert_eq!(tokenize("TA-50\tbay"), vec!["TA", "-", "50", "bay"]);
    }

    proptest! {
        #[test]
        fn tokenize_matches_reference(text in "[ a-zđôơư.,!?\\-\\t\\n]{0,40}") {
            prop_assert_eq!(tokenize(&text), reference_tokenize(&text));
        }

        #[test]
        fn spans_cover_tokens(text in "\\PC{0,40}") {
            let spans = tokenize_spans(&text);
            for w in spans.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for s in &spans {
                prop_assert!(s.start < s.end);
                prop_assert!(!text[s.start..s.end].chars().any(char::is_whitespace));
            }
        }
    }

    #[test]
    fn vocab_examples() {
        let v = build_vocab(["a a b"], 4, VocabLevel::Word).unwrap();
        assert_eq!(v.tokens(), [PAD_TOKEN, UNK_TOKEN, "a", "b"]);
        let tie = build_vocab(["a a b b"], 3, VocabLevel::Word).unwrap();
        assert_eq!(tie.tokens(), [PAD_TOKEN, UNK_TOKEN, "a"]);
        assert!(matches!(
            build_vocab(Vec::<&str>::new(), 10, VocabLevel::Word),
            Err(TextDataError::EmptyCorpus)
        ));
        assert!(matches!(build_vocab(["a"], 2, VocabLevel::Word), Err(TextDataError::VocabTooSmall(2))));
    }

    #[test]
    fn vocab_lookup_and_bijection() {
        let v = build_vocab(["Hà Nội hà nội là thủ đô"], 100, VocabLevel::Word).unwrap();
        assert_eq!(v.id("HÀ"), v.id("hà"));
        assert_eq!(v.id("nooij"), UNK);
        for id in 0..v.len() as u32 {
            assert_eq!(v.id(v.token(id).unwrap()), id);
        }
        let c = build_vocab(["Hà hà"], 100, VocabLevel::Char).unwrap();
        assert_ne!(c.char_id('H'), c.char_id('h'));
        assert_eq!(c.char_id('z'), UNK);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = build_vocab(["một hai ba hai"], 10, VocabLevel::Word).unwrap();
        let p = dir.path().join("words.txt");
        v.write(&p).unwrap();
        assert_eq!(Vocab::read(&p, VocabLevel::Word).unwrap(), v);
    }

    fn sentence(noisy: &[&str], clean: &[&str]) -> CorruptedSentence {
        CorruptedSentence::new(
            noisy.iter().map(|s| s.to_string()).collect(),
            clean.iter().map(|s| s.to_string()).collect(),
        )
    }

    #[test]
    fn encode_examples() {
        let wv = build_vocab(["hà nội là thủ đô"], 100, VocabLevel::Word).unwrap();
        let cv = build_vocab(["hà nội là thủ đô nooij"], 100, VocabLevel::Char).unwrap();

        let same = sentence(&["hà", "nội"], &["hà", "nội"]);
        let ex = encode(&same, &wv, &cv, 4, 5);
        assert_eq!(ex.detect_labels, [0, 0, 0, 0]);
        assert_eq!(ex.word_ids, ex.correct_labels);
        assert_eq!(ex.attn_mask, [1, 1, 0, 0]);

        let leak = sentence(&["hà", "nooij"], &["hà", "nội"]);
        let ex = encode(&leak, &wv, &cv, 4, 5);
        assert_eq!(ex.word_ids[1], UNK);
        assert_eq!(ex.detect_labels[1], 1);
        assert_eq!(ex.correct_labels[1], wv.id("nội"));
        let chars: Vec<u32> = "nooij".chars().map(|c| cv.char_id(c)).collect();
        assert_eq!(ex.char_row(1), chars.as_slice());
        assert!(chars.iter().all(|c| *c != UNK));

        let long = sentence(&["thủđôhànội"], &["thủđôhànội"]);
        let ex = encode(&long, &wv, &cv, 2, 4);
        assert_eq!(ex.char_row(0).len(), 4);
        assert!(ex.char_row(0).iter().all(|c| *c != PAD));
        assert_eq!(ex.char_row(1), [PAD; 4]);
    }

    #[test]
    fn encode_truncates_and_pads() {
        let wv = build_vocab(["a b c"], 10, VocabLevel::Word).unwrap();
        let cv = build_vocab(["a b c"], 10, VocabLevel::Char).unwrap();
        for n in 0..6 {
            let toks: Vec<&str> = ["a", "b", "c", "a", "b"][..n].to_vec();
            let ex = encode(&sentence(&toks, &toks), &wv, &cv, 3, 2);
            assert_eq!(ex.len(), n.min(3));
            for i in ex.len()..3 {
                assert_eq!(ex.word_ids[i], PAD);
                assert_eq!(ex.char_row(i), [PAD, PAD]);
            }
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn wiki_reader() {
        let good = r#"{"id":"1","text":"... không đơn thuần là một chuếc máy bay","current_revision_id":"11","previous_revision_id":"10","page_id":7,"mistakes":[{"token_index":6,"wrong":"chuếc","suggestions":["chiếc"]}]}"#;
        let f = write_lines(&[good]);
        let set = read_wiki_testset(f.path(), true).unwrap();
        assert_eq!(set.documents.len(), 1);
        assert_eq!(set.documents[0].page_id, "7");
        assert_eq!(set.documents[0].mistakes[0].suggestions, ["chiếc"]);

        let empty = write_lines(&[]);
        assert!(read_wiki_testset(empty.path(), true).unwrap().documents.is_empty());

        let bad = good.replace("\"token_index\":6", "\"token_index\":60");
        let f = write_lines(&[good, &bad]);
        match read_wiki_testset(f.path(), true) {
            Err(TextDataError::InvalidRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected invalid record, got {other:?}"),
        }
        let lenient = read_wiki_testset(f.path(), false).unwrap();
        assert_eq!(lenient.documents.len(), 1);
        assert_eq!(lenient.skipped[0].line, 2);

        let f = write_lines(&["{not json"]);
        assert!(matches!(read_wiki_testset(f.path(), true), Err(TextDataError::Json { line: 1, .. })));
    }

    #[test]
    fn wiki_writer_round_trip() {
        let doc = WikiTestDocument {
            id: "a".into(),
            text: "Hà lội".into(),
            current_revision_id: "2".into(),
            previous_revision_id: "1".into(),
            page_id: "9".into(),
            mistakes: vec![WikiMistake {
                token_index: 1,
                wrong: "lội".into(),
                suggestions: vec!["Nội".into(), "nội".into()],
            }],
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_wiki_testset(f.path(), [&doc]).unwrap();
        assert_eq!(read_wiki_testset(f.path(), true).unwrap().documents, vec![doc]);
    }
}
