//! Rule-based corruption of clean text into (noisy, clean, mask) triples.
//!
//! Three families of mistakes are generated: typing slips, which are edits
//! applied to the keystroke sequence the typist would press and then
//! composed the way an input method would; regional spelling confusions
//! (d/r/gi, tr/ch, s/x, n/l and hook/tilde tones); and missing diacritics.
//! Every token receives at most one error class.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::syllable::{
    compose_lenient, parse_syllable, strip_diacritics, to_keystrokes, KeystrokeScheme, Syllable, Tone,
};
use crate::textdata::{is_sentence_final, tokenize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    TypoInsertion,
    TypoOmission,
    TypoSubstitution,
    TypoTransposition,
    /// Several keystroke edits in one token.
    TypoCompound,
    TypoDiacritic,
    /// Raw Telex/VNI keys typed with the input method switched off.
    KeystrokeLeak,
    RegionalConfusion,
    DiacriticStrip,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 9] = [
        ErrorClass::TypoInsertion,
        ErrorClass::TypoOmission,
        ErrorClass::TypoSubstitution,
        ErrorClass::TypoTransposition,
        ErrorClass::TypoCompound,
        ErrorClass::TypoDiacritic,
        ErrorClass::KeystrokeLeak,
        ErrorClass::RegionalConfusion,
        ErrorClass::DiacriticStrip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::TypoInsertion => "typo_insertion",
            ErrorClass::TypoOmission => "typo_omission",
            ErrorClass::TypoSubstitution => "typo_substitution",
            ErrorClass::TypoTransposition => "typo_transposition",
            ErrorClass::TypoCompound => "typo_compound",
            ErrorClass::TypoDiacritic => "typo_diacritic",
            ErrorClass::KeystrokeLeak => "keystroke_leak",
            ErrorClass::RegionalConfusion => "regional_confusion",
            ErrorClass::DiacriticStrip => "diacritic_strip",
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum ErrorGenError {
    #[error("invalid corruption spec: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Table { path: String, message: String },
}

/// Error types and rates for synthetic data generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    pub per_token_error_rate: f64,
    pub clean_sentence_rate: f64,
    pub full_strip_sentence_rate: f64,
    pub class_weights: BTreeMap<ErrorClass, f64>,
    /// Probability of Telex (vs VNI) for keystroke-level errors.
    pub scheme_mix: f64,
    pub rng_seed: u64,
    /// Sentences longer than this many tokens are skipped by the stream.
    pub max_tokens: usize,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            per_token_error_rate: 0.15,
            clean_sentence_rate: 0.2,
            full_strip_sentence_rate: 0.1,
            class_weights: ErrorClass::ALL.into_iter().map(|c| (c, 1.0)).collect(),
            scheme_mix: 0.7,
            rng_seed: 0,
            max_tokens: 64,
        }
    }
}

impl CorruptionSpec {
    /// Only whole-sentence diacritic stripping, as in diacritic restoration.
    pub fn full_strip_only(seed: u64) -> Self {
        CorruptionSpec {
            clean_sentence_rate: 0.0,
            full_strip_sentence_rate: 1.0,
            rng_seed: seed,
            ..CorruptionSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), ErrorGenError> {
        let probs = [
            ("per_token_error_rate", self.per_token_error_rate),
            ("clean_sentence_rate", self.clean_sentence_rate),
            ("full_strip_sentence_rate", self.full_strip_sentence_rate),
            ("scheme_mix", self.scheme_mix),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(ErrorGenError::InvalidSpec(format!("{name} = {p} is not in [0, 1]")));
            }
        }
        if self.clean_sentence_rate + self.full_strip_sentence_rate > 1.0 + 1e-12 {
            return Err(ErrorGenError::InvalidSpec(
                "clean_sentence_rate + full_strip_sentence_rate exceeds 1".into(),
            ));
        }
        if self.class_weights.values().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(ErrorGenError::InvalidSpec("class weights must be non-negative".into()));
        }
        if self.class_weights.values().sum::<f64>() <= 0.0 {
            return Err(ErrorGenError::InvalidSpec("class weights must have a positive sum".into()));
        }
        if self.max_tokens == 0 {
            return Err(ErrorGenError::InvalidSpec("max_tokens must be positive".into()));
        }
        Ok(())
    }

    fn weight(&self, class: ErrorClass) -> f64 {
        self.class_weights.get(&class).copied().unwrap_or(0.0)
    }
}

/// A training pair; `mask[i] == 1` exactly where `noisy[i] != clean[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptedSentence {
    pub noisy: Vec<String>,
    pub clean: Vec<String>,
    pub mask: Vec<u8>,
    /// Error class applied at each position; not part of the JSONL format.
    #[serde(skip)]
    pub classes: Vec<Option<ErrorClass>>,
}

impl CorruptedSentence {
    /// Pairs noisy and clean tokens, deriving the mask.
    pub fn new(noisy: Vec<String>, clean: Vec<String>) -> Self {
        let mask = noisy.iter().zip(&clean).map(|(n, c)| u8::from(n != c)).collect();
        let classes = vec![None; noisy.len()];
        CorruptedSentence {
            noisy,
            clean,
            mask,
            classes,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.noisy.len() != self.clean.len() || self.noisy.len() != self.mask.len() {
            return Err(format!(
                "length mismatch: noisy {}, clean {}, mask {}",
                self.noisy.len(),
                self.clean.len(),
                self.mask.len()
            ));
        }
        for (i, ((n, c), m)) in self.noisy.iter().zip(&self.clean).zip(&self.mask).enumerate() {
            if (*m == 1) != (n != c) || *m > 1 {
                return Err(format!("mask[{i}] = {m} disagrees with {n:?} / {c:?}"));
            }
        }
        Ok(())
    }

    pub fn error_count(&self) -> usize {
        self.mask.iter().filter(|m| **m == 1).count()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sentence serializes")
    }
}

/// Interchangeable onsets and tones for regional confusions.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionTable {
    pub onset_groups: Vec<Vec<String>>,
    pub tone_groups: Vec<Vec<Tone>>,
}

fn parse_tone_name(name: &str) -> Option<Tone> {
    Some(match name {
        "level" => Tone::Level,
        "acute" => Tone::Acute,
        "grave" => Tone::Grave,
        "hook" => Tone::Hook,
        "tilde" => Tone::Tilde,
        "dot" => Tone::Dot,
        _ => return None,
    })
}

impl ConfusionTable {
    pub fn builtin() -> &'static ConfusionTable {
        static TABLE: OnceLock<ConfusionTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            ConfusionTable::parse(include_str!("../data/confusions.txt")).expect("builtin confusion table")
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<ConfusionTable, ErrorGenError> {
        let path = path.as_ref();
        let table_err = |message: String| ErrorGenError::Table {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| table_err(e.to_string()))?;
        ConfusionTable::parse(&text).map_err(table_err)
    }

    pub fn parse(text: &str) -> Result<ConfusionTable, String> {
        let mut table = ConfusionTable {
            onset_groups: Vec::new(),
            tone_groups: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let kind = fields.next().unwrap_or_default();
            let members: Vec<&str> = fields.collect();
            if members.len() < 2 {
                return Err(format!("line {}: a group needs at least two members", i + 1));
            }
            match kind {
                "onset" => table.onset_groups.push(members.iter().map(|s| s.to_string()).collect()),
                "tone" => table.tone_groups.push(
                    members
                        .iter()
                        .map(|m| parse_tone_name(m).ok_or_else(|| format!("line {}: unknown tone {m:?}", i + 1)))
                        .collect::<Result<_, _>>()?,
                ),
                other => return Err(format!("line {}: unknown group kind {other:?}", i + 1)),
            }
        }
        Ok(table)
    }
}

/// Physical key adjacency used for insertion and substitution slips.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyboardLayout {
    neighbours: HashMap<char, Vec<char>>,
}

impl KeyboardLayout {
    pub fn builtin() -> &'static KeyboardLayout {
        static LAYOUT: OnceLock<KeyboardLayout> = OnceLock::new();
        LAYOUT.get_or_init(|| KeyboardLayout::parse(include_str!("../data/qwerty.txt")).expect("builtin layout"))
    }

    pub fn parse(text: &str) -> Result<KeyboardLayout, String> {
        let mut neighbours = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let keys: Vec<char> = line
                .split_whitespace()
                .map(|f| {
                    let mut cs = f.chars();
                    match (cs.next(), cs.next()) {
                        (Some(c), None) => Ok(c),
                        _ => Err(format!("line {}: {f:?} is not a single key", i + 1)),
                    }
                })
                .collect::<Result<_, _>>()?;
            if keys.len() < 2 {
                return Err(format!("line {}: key without neighbours", i + 1));
            }
            neighbours.insert(keys[0], keys[1..].to_vec());
        }
        Ok(KeyboardLayout { neighbours })
    }

    pub fn neighbours(&self, key: char) -> &[char] {
        self.neighbours
            .get(&key.to_ascii_lowercase())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Edit {
    Insert,
    Omit,
    Substitute,
    Transpose,
}

const EDITS: [Edit; 4] = [Edit::Insert, Edit::Omit, Edit::Substitute, Edit::Transpose];

fn match_case(key: char, like: char) -> char {
    if like.is_uppercase() {
        key.to_ascii_uppercase()
    } else {
        key
    }
}

/// Tokens that can carry a spelling error: anything with a letter in it.
pub fn is_corruptible(token: &str) -> bool {
    token.chars().any(char::is_alphabetic)
}

/// Applies error classes to tokens and sentences.
#[derive(Clone, Debug)]
pub struct Corruptor {
    spec: CorruptionSpec,
    confusions: ConfusionTable,
    keyboard: KeyboardLayout,
}

impl Corruptor {
    pub fn new(spec: CorruptionSpec) -> Result<Corruptor, ErrorGenError> {
        Corruptor::with_tables(spec, ConfusionTable::builtin().clone(), KeyboardLayout::builtin().clone())
    }

    pub fn with_tables(
        spec: CorruptionSpec,
        confusions: ConfusionTable,
        keyboard: KeyboardLayout,
    ) -> Result<Corruptor, ErrorGenError> {
        spec.validate()?;
        Ok(Corruptor {
            spec,
            confusions,
            keyboard,
        })
    }

    pub fn spec(&self) -> &CorruptionSpec {
        &self.spec
    }

    fn sample_scheme<R: Rng + ?Sized>(&self, rng: &mut R) -> KeystrokeScheme {
        if rng.gen_bool(self.spec.scheme_mix) {
            KeystrokeScheme::Telex
        } else {
            KeystrokeScheme::Vni
        }
    }

    /// Applies one error class to `token`. Returns the token unchanged when
    /// the class does not apply to it.
    pub fn corrupt_token<R: Rng + ?Sized>(&self, token: &str, class: ErrorClass, rng: &mut R) -> String {
        if !is_corruptible(token) {
            return token.to_string();
        }
        match class {
            ErrorClass::TypoInsertion => self.keystroke_typo(token, Some(Edit::Insert), 1, rng),
            ErrorClass::TypoOmission => self.keystroke_typo(token, Some(Edit::Omit), 1, rng),
            ErrorClass::TypoSubstitution => self.keystroke_typo(token, Some(Edit::Substitute), 1, rng),
            ErrorClass::TypoTransposition => self.keystroke_typo(token, Some(Edit::Transpose), 1, rng),
            ErrorClass::TypoCompound => {
                let edits = rng.gen_range(2..=3);
                self.keystroke_typo(token, None, edits, rng)
            }
            ErrorClass::TypoDiacritic => diacritic_typo(token, rng),
            ErrorClass::KeystrokeLeak => {
                let scheme = self.sample_scheme(rng);
                leak_keystrokes(token, scheme)
            }
            ErrorClass::RegionalConfusion => self.regional_confusion(token, rng),
            ErrorClass::DiacriticStrip => strip_diacritics(token),
        }
    }

    fn apply_edit<R: Rng + ?Sized>(&self, keys: &mut Vec<char>, edit: Edit, rng: &mut R) {
        let n = keys.len();
        match edit {
            Edit::Insert => {
                let at = rng.gen_range(0..=n);
                let anchor = keys[at.min(n - 1)];
                let near = self.keyboard.neighbours(anchor);
                let key = if near.is_empty() {
                    rng.gen_range(b'a'..=b'z') as char
                } else {
                    near[rng.gen_range(0..near.len())]
                };
                keys.insert(at, match_case(key, anchor));
            }
            Edit::Omit => {
                if n > 1 {
                    keys.remove(rng.gen_range(0..n));
                }
            }
            Edit::Substitute => {
                let at = rng.gen_range(0..n);
                let near = self.keyboard.neighbours(keys[at]);
                if !near.is_empty() {
                    keys[at] = match_case(near[rng.gen_range(0..near.len())], keys[at]);
                }
            }
            Edit::Transpose => {
                let spots: Vec<usize> = (0..n.saturating_sub(1)).filter(|i| keys[*i] != keys[i + 1]).collect();
                if !spots.is_empty() {
                    let i = spots[rng.gen_range(0..spots.len())];
                    keys.swap(i, i + 1);
                }
            }
        }
    }

    /// Edits the key sequence of `token` and recomposes it. `edit = None`
    /// draws a random edit kind for each of the `edits` edits.
    fn keystroke_typo<R: Rng + ?Sized>(&self, token: &str, edit: Option<Edit>, edits: usize, rng: &mut R) -> String {
        let scheme = self.sample_scheme(rng);
        let syl = parse_syllable(token).ok();
        let keys: Vec<char> = match &syl {
            Some(s) => to_keystrokes(s, scheme).chars().collect(),
            None => token.chars().collect(),
        };
        for _ in 0..8 {
            let mut k = keys.clone();
            for _ in 0..edits {
                let e = edit.unwrap_or_else(|| EDITS[rng.gen_range(0..EDITS.len())]);
                self.apply_edit(&mut k, e, rng);
            }
            let raw: String = k.into_iter().collect();
            let out = if syl.is_some() { compose_lenient(&raw, scheme) } else { raw };
            if out != token && !out.is_empty() {
                return out;
            }
        }
        token.to_string()
    }

    fn regional_confusion<R: Rng + ?Sized>(&self, token: &str, rng: &mut R) -> String {
        let Ok(syl) = parse_syllable(token) else {
            return token.to_string();
        };
        let mut options: Vec<Syllable> = Vec::new();
        // `g` + `i…` is the contracted spelling of the gi onset
        let contracted_gi = syl.onset == "g" && syl.nucleus.starts_with('i');
        let sounded = if contracted_gi { "gi" } else { syl.onset.as_str() };
        for group in &self.confusions.onset_groups {
            if !group.iter().any(|o| o == sounded) {
                continue;
            }
            for other in group.iter().filter(|o| *o != sounded) {
                let onset = if other == "gi" && syl.nucleus.starts_with('i') { "g" } else { other.as_str() };
                let candidate = Syllable {
                    onset: onset.to_string(),
                    ..syl.clone()
                };
                if let Ok(valid) = parse_syllable(&candidate.render()) {
                    options.push(valid);
                }
            }
        }
        for group in &self.confusions.tone_groups {
            if !group.contains(&syl.tone) {
                continue;
            }
            for tone in group.iter().filter(|t| **t != syl.tone) {
                if let Some(s) = syl.with_tone(*tone) {
                    options.push(s);
                }
            }
        }
        options.retain(|s| s.render() != token);
        if options.is_empty() {
            return token.to_string();
        }
        options[rng.gen_range(0..options.len())].render()
    }

    /// Corrupts `token` with a class drawn from the class weights, falling
    /// back to other classes when the drawn one does not apply.
    fn corrupt_weighted<R: Rng + ?Sized>(&self, token: &str, rng: &mut R) -> (String, Option<ErrorClass>) {
        let mut weights: Vec<f64> = ErrorClass::ALL.iter().map(|c| self.spec.weight(*c)).collect();
        loop {
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                return (token.to_string(), None);
            }
            let mut r = rng.gen::<f64>() * total;
            let mut pick = weights.iter().rposition(|w| *w > 0.0).unwrap();
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 && r < *w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            let class = ErrorClass::ALL[pick];
            let out = self.corrupt_token(token, class, rng);
            if out != token {
                return (out, Some(class));
            }
            weights[pick] = 0.0;
        }
    }

    /// Draws one of three branches: untouched sentence, every token
    /// stripped of diacritics, or independent per-token corruption.
    pub fn corrupt_sentence<R: Rng + ?Sized>(&self, clean: &[String], rng: &mut R) -> CorruptedSentence {
        let branch: f64 = rng.gen();
        let n = clean.len();
        let mut noisy = clean.to_vec();
        let mut classes = vec![None; n];
        if branch < self.spec.clean_sentence_rate {
            // untouched
        } else if branch < self.spec.clean_sentence_rate + self.spec.full_strip_sentence_rate {
            for (tok, class) in noisy.iter_mut().zip(classes.iter_mut()) {
                let stripped = strip_diacritics(tok);
                if stripped != *tok {
                    *tok = stripped;
                    *class = Some(ErrorClass::DiacriticStrip);
                }
            }
        } else {
            for (tok, class) in noisy.iter_mut().zip(classes.iter_mut()) {
                if is_corruptible(tok) && rng.gen_bool(self.spec.per_token_error_rate) {
                    let (out, c) = self.corrupt_weighted(tok, rng);
                    *tok = out;
                    *class = c;
                }
            }
        }
        let mut sent = CorruptedSentence::new(noisy, clean.to_vec());
        sent.classes = classes;
        sent
    }

    /// Streams corrupted sentences from UTF-8 text, one or more sentences
    /// per line.
    pub fn stream<B: BufRead>(&self, source: B) -> CorpusStream<'_, B> {
        CorpusStream {
            corruptor: self,
            lines: source.lines(),
            rng: ChaCha8Rng::seed_from_u64(self.spec.rng_seed),
            line_no: 0,
            pending: VecDeque::new(),
        }
    }
}

/// Raw keys for `token` under `scheme`, or the token itself when typing it
/// needs no modifier keys.
pub fn leak_keystrokes(token: &str, scheme: KeystrokeScheme) -> String {
    match parse_syllable(token) {
        Ok(s) => to_keystrokes(&s, scheme),
        Err(_) => token.to_string(),
    }
}

fn sibling_vowels(base: char) -> &'static [char] {
    match base {
        'a' => &['ă', 'â'],
        'ă' => &['a', 'â'],
        'â' => &['a', 'ă'],
        'e' => &['ê'],
        'ê' => &['e'],
        'o' => &['ô', 'ơ'],
        'ô' => &['o', 'ơ'],
        'ơ' => &['o', 'ô'],
        'u' => &['ư'],
        'ư' => &['u'],
        'd' => &['đ'],
        'đ' => &['d'],
        _ => &[],
    }
}

/// Wrong tone, or a wrong letter modification (ô for o, d for đ, …).
fn diacritic_typo<R: Rng + ?Sized>(token: &str, rng: &mut R) -> String {
    let Ok(syl) = parse_syllable(token) else {
        return token.to_string();
    };
    for _ in 0..8 {
        let candidate = if rng.gen_bool(0.5) {
            let tones: Vec<Tone> = Tone::ALL.into_iter().filter(|t| *t != syl.tone).collect();
            let tone = tones[rng.gen_range(0..tones.len())];
            Syllable { tone, ..syl.clone() }.render()
        } else {
            let lower: Vec<char> = syl.render().to_lowercase().chars().collect();
            let spots: Vec<usize> = (0..lower.len())
                .filter(|i| !sibling_vowels(base_of(lower[*i]).0).is_empty())
                .collect();
            if spots.is_empty() {
                continue;
            }
            let at = spots[rng.gen_range(0..spots.len())];
            let (base, tone) = base_of(lower[at]);
            let sibs = sibling_vowels(base);
            let new_base = sibs[rng.gen_range(0..sibs.len())];
            let mut chars = lower.clone();
            chars[at] = retone(new_base, tone);
            syl.case.apply(&chars.into_iter().collect::<String>())
        };
        if candidate != token {
            return candidate;
        }
    }
    token.to_string()
}

fn base_of(c: char) -> (char, Tone) {
    for tone in Tone::ALL {
        for base in ['a', 'ă', 'â', 'e', 'ê', 'i', 'o', 'ô', 'ơ', 'u', 'ư', 'y'] {
            if retone(base, tone) == c {
                return (base, tone);
            }
        }
    }
    (c, Tone::Level)
}

fn retone(base: char, tone: Tone) -> char {
    match Syllable::new("", &base.to_string(), "", tone) {
        Ok(s) => s.render().chars().next().unwrap_or(base),
        Err(_) => base,
    }
}

/// Iterator returned by [`Corruptor::stream`].
pub struct CorpusStream<'a, B> {
    corruptor: &'a Corruptor,
    lines: std::io::Lines<B>,
    rng: ChaCha8Rng,
    line_no: usize,
    pending: VecDeque<CorruptedSentence>,
}

/// Splits a token list after sentence-final punctuation.
pub fn split_sentences(tokens: Vec<String>) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for tok in tokens {
        let end = is_sentence_final(&tok);
        cur.push(tok);
        if end {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

impl<B: BufRead> Iterator for CorpusStream<'_, B> {
    type Item = Result<CorruptedSentence, ErrorGenError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(s) = self.pending.pop_front() {
                return Some(Ok(s));
            }
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(source) => {
                    return Some(Err(ErrorGenError::Io {
                        line: self.line_no,
                        source,
                    }))
                }
            };
            for sent in split_sentences(tokenize(&line)) {
                if sent.len() > self.corruptor.spec.max_tokens {
                    continue;
                }
                let triple = self.corruptor.corrupt_sentence(&sent, &mut self.rng);
                self.pending.push_back(triple);
            }
        }
    }
}

/// Free-function form of [`Corruptor::corrupt_sentence`] with the built-in
/// tables.
pub fn corrupt_sentence<R: Rng + ?Sized>(
    clean: &[String],
    spec: &CorruptionSpec,
    rng: &mut R,
) -> Result<CorruptedSentence, ErrorGenError> {
    Ok(Corruptor::new(spec.clone())?.corrupt_sentence(clean, rng))
}

/// Per-class counts over a set of sentences.
pub fn class_counts<'a>(sentences: impl IntoIterator<Item = &'a CorruptedSentence>) -> BTreeMap<ErrorClass, u64> {
    let mut counts: BTreeMap<ErrorClass, u64> = ErrorClass::ALL.into_iter().map(|c| (c, 0)).collect();
    for s in sentences {
        for c in s.classes.iter().flatten() {
            *counts.entry(*c).or_default() += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syllable::has_diacritics;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn documented_token_examples() {
        let c = Corruptor::new(CorruptionSpec::default()).unwrap();
        let mut r = rng(1);
        assert_eq!(leak_keystrokes("nội", KeystrokeScheme::Telex), "nooij");
        assert_eq!(leak_keystrokes("hà", KeystrokeScheme::Telex), "haf");
        assert_eq!(c.corrupt_token("nội", ErrorClass::RegionalConfusion, &mut r), "lội");
        assert_eq!(c.corrupt_token("nội", ErrorClass::DiacriticStrip, &mut r), strip_diacritics("nội"));
        let telex_only = Corruptor::new(CorruptionSpec {
            scheme_mix: 1.0,
            ..CorruptionSpec::default()
        })
        .unwrap();
        assert_eq!(telex_only.corrupt_token("nội", ErrorClass::KeystrokeLeak, &mut r), "nooij");
    }

    #[test]
    fn regional_confusion_groups() {
        let c = Corruptor::new(CorruptionSpec::default()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for seed in 0..200 {
            seen.insert(c.corrupt_token("giá", ErrorClass::RegionalConfusion, &mut rng(seed)));
        }
        assert!(seen.contains("dá") && seen.contains("rá"), "{seen:?}");
        // contracted gi spelling
        let out = c.corrupt_token("gì", ErrorClass::RegionalConfusion, &mut rng(3));
        assert!(out == "dì" || out == "rì", "{out}");
        assert_eq!(c.corrupt_token("Trời", ErrorClass::RegionalConfusion, &mut rng(0)), "Chời");
        // hook and tilde swap
        assert_eq!(c.corrupt_token("bảo", ErrorClass::RegionalConfusion, &mut rng(0)), "bão");
        // nothing to confuse
        assert_eq!(c.corrupt_token("ba", ErrorClass::RegionalConfusion, &mut rng(0)), "ba");
    }

    #[test]
    fn inapplicable_classes_leave_token() {
        let c = Corruptor::new(CorruptionSpec::default()).unwrap();
        let mut r = rng(5);
        assert_eq!(c.corrupt_token("ba", ErrorClass::DiacriticStrip, &mut r), "ba");
        assert_eq!(c.corrupt_token("ba", ErrorClass::KeystrokeLeak, &mut r), "ba");
        assert_eq!(c.corrupt_token(",", ErrorClass::TypoInsertion, &mut r), ",");
        assert_eq!(c.corrupt_token("2021", ErrorClass::TypoOmission, &mut r), "2021");
        assert_eq!(c.corrupt_token("internet", ErrorClass::TypoDiacritic, &mut r), "internet");
    }

    #[test]
    fn typos_change_the_token() {
        let c = Corruptor::new(CorruptionSpec::default()).unwrap();
        for class in [
            ErrorClass::TypoInsertion,
            ErrorClass::TypoOmission,
            ErrorClass::TypoSubstitution,
            ErrorClass::TypoTransposition,
            ErrorClass::TypoCompound,
            ErrorClass::TypoDiacritic,
        ] {
            for seed in 0..50 {
                for word in ["người", "chiếc", "Hà", "internet", "ương"] {
                    if class == ErrorClass::TypoDiacritic && word == "internet" {
                        continue;
                    }
                    let out = c.corrupt_token(word, class, &mut rng(seed));
                    assert_ne!(out, word, "{class} on {word}");
                    assert!(!out.chars().any(char::is_whitespace));
                }
            }
        }
    }

    #[test]
    fn sentence_branches() {
        let clean = toks("hà nội mùa thu");
        let always_clean = Corruptor::new(CorruptionSpec {
            clean_sentence_rate: 1.0,
            full_strip_sentence_rate: 0.0,
            ..CorruptionSpec::default()
        })
        .unwrap();
        let s = always_clean.corrupt_sentence(&clean, &mut rng(0));
        assert_eq!(s.noisy, clean);
        assert!(s.mask.iter().all(|m| *m == 0));

        let strip = Corruptor::new(CorruptionSpec::full_strip_only(0)).unwrap();
        let s = strip.corrupt_sentence(&toks("hà nội"), &mut rng(0));
        assert_eq!(s.noisy, ["ha", "noi"]);
        assert_eq!(s.mask, [1, 1]);

        let c = Corruptor::new(CorruptionSpec::default()).unwrap();
        let a = c.corrupt_sentence(&clean, &mut rng(42));
        let b = c.corrupt_sentence(&clean, &mut rng(42));
        assert_eq!(a, b);
    }

    #[test]
    fn stream_behaviour() {
        let c = Corruptor::new(CorruptionSpec {
            rng_seed: 9,
            ..CorruptionSpec::default()
        })
        .unwrap();
        assert_eq!(c.stream(&b""[..]).count(), 0);

        let line = "Tôi đi học ở trường mỗi ngày";
        let streamed: Vec<_> = c.stream(line.as_bytes()).map(Result::unwrap).collect();
        let direct = c.corrupt_sentence(&toks(line), &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(streamed, vec![direct]);

        let zero = Corruptor::new(CorruptionSpec {
            per_token_error_rate: 0.0,
            full_strip_sentence_rate: 0.0,
            ..CorruptionSpec::default()
        })
        .unwrap();
        let text: String = (0..100).map(|i| format!("câu thứ {i} trong tệp\n")).collect();
        let out: Vec<_> = zero.stream(text.as_bytes()).map(Result::unwrap).collect();
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|s| s.error_count() == 0));

        let two = "Câu một. Câu hai!";
        assert_eq!(zero.stream(two.as_bytes()).count(), 2);

        let short = Corruptor::new(CorruptionSpec {
            max_tokens: 3,
            ..CorruptionSpec::default()
        })
        .unwrap();
        assert_eq!(short.stream("một hai ba bốn\nmột hai".as_bytes()).count(), 1);
    }

    #[test]
    fn stream_reports_io_errors_with_line() {
        let c = Corruptor::new(CorruptionSpec::default()).unwrap();
        let bytes: &[u8] = b"ok line\n\xff\xfe bad\n";
        let results: Vec<_> = c.stream(bytes).collect();
        assert!(results[0].is_ok());
        match &results[1] {
            Err(ErrorGenError::Io { line, .. }) => assert_eq!(*line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_settings_are_rejected() {
        assert!(CorruptionSpec::default().validate().is_ok());
        let bad = CorruptionSpec {
            per_token_error_rate: 1.5,
            ..CorruptionSpec::default()
        };
        assert!(bad.validate().is_err());
        let zero_weights = CorruptionSpec {
            class_weights: ErrorClass::ALL.into_iter().map(|c| (c, 0.0)).collect(),
            ..CorruptionSpec::default()
        };
        assert!(zero_weights.validate().is_err());
        let parsed: CorruptionSpec = serde_json::from_str(r#"{"class_weights":{"keystroke_leak":2.0}}"#).unwrap();
        assert_eq!(parsed.weight(ErrorClass::KeystrokeLeak), 2.0);
        assert_eq!(parsed.weight(ErrorClass::TypoOmission), 0.0);
    }

    #[test]
    fn tables_parse() {
        let t = ConfusionTable::builtin();
        assert_eq!(t.onset_groups.len(), 4);
        assert_eq!(t.tone_groups, vec![vec![Tone::Hook, Tone::Tilde]]);
        assert!(ConfusionTable::parse("onset d").is_err());
        assert!(ConfusionTable::parse("tone hook nope").is_err());
        assert_eq!(KeyboardLayout::builtin().neighbours('A'), ['q', 'w', 's', 'z']);
    }

    #[test]
    fn strip_only_marks_diacritic_tokens() {
        let strip = Corruptor::new(CorruptionSpec::full_strip_only(1)).unwrap();
        let clean = toks("Tôi có ba con mèo.");
        let s = strip.corrupt_sentence(&clean, &mut rng(0));
        for (c, m) in clean.iter().zip(&s.mask) {
            assert_eq!(*m == 1, has_diacritics(c));
        }
    }

    proptest! {
        #[test]
        fn mask_consistency(seed in 0u64..10_000, words in proptest::collection::vec("[a-zàáạảãâầấậẩẫăđêềếệôồốộơờớợưừứựý]{1,6}", 1..12)) {
            let c = Corruptor::new(CorruptionSpec { per_token_error_rate: 0.5, ..CorruptionSpec::default() }).unwrap();
            let s = c.corrupt_sentence(&words, &mut rng(seed));
            prop_assert!(s.validate().is_ok());
            prop_assert_eq!(&s.clean, &words);
            for (i, cls) in s.classes.iter().enumerate() {
                prop_assert_eq!(cls.is_some(), s.mask[i] == 1);
            }
        }
    }
}
