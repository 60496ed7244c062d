//! Vietnamese syllable engine.
//!
//! A written syllable decomposes into an onset (initial consonant cluster,
//! possibly empty), a nucleus (vowel cluster carrying the letter
//! modifications such as `ô` or `ươ`), a coda (final consonant or semivowel,
//! possibly empty) and one of six tones. Decomposition works on the
//! lowercased form; the original casing is kept as a [`CasePattern`] and
//! reapplied on [`Syllable::render`].
//!
//! The module also implements the two keystroke schemes people use to type
//! Vietnamese (Telex and VNI), both as an encoder (what a typist presses) and
//! as a strict decoder, plus a lenient IME emulation used to compose
//! keystroke sequences that contain typing mistakes.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

/// The six Vietnamese tones. `Level` carries no mark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tone {
    Level,
    Acute,
    Grave,
    Hook,
    Tilde,
    Dot,
}

impl Tone {
    pub const ALL: [Tone; 6] = [
        Tone::Level,
        Tone::Acute,
        Tone::Grave,
        Tone::Hook,
        Tone::Tilde,
        Tone::Dot,
    ];

    fn mark_index(self) -> Option<usize> {
        match self {
            Tone::Level => None,
            Tone::Acute => Some(0),
            Tone::Grave => Some(1),
            Tone::Hook => Some(2),
            Tone::Tilde => Some(3),
            Tone::Dot => Some(4),
        }
    }

    fn from_mark_index(i: usize) -> Tone {
        [Tone::Acute, Tone::Grave, Tone::Hook, Tone::Tilde, Tone::Dot][i]
    }

    /// Only sharp tones may combine with the stop codas c, ch, p, t.
    pub fn allowed_with_coda(self, coda: &str) -> bool {
        !is_stop_coda(coda) || matches!(self, Tone::Acute | Tone::Dot)
    }

    fn telex_key(self) -> Option<char> {
        match self {
            Tone::Level => None,
            Tone::Acute => Some('s'),
            Tone::Grave => Some('f'),
            Tone::Hook => Some('r'),
            Tone::Tilde => Some('x'),
            Tone::Dot => Some('j'),
        }
    }

    fn vni_key(self) -> Option<char> {
        self.mark_index()
            .map(|i| char::from_digit(i as u32 + 1, 10).unwrap())
    }

    fn from_telex_key(c: char) -> Option<Tone> {
        match c.to_ascii_lowercase() {
            's' => Some(Tone::Acute),
            'f' => Some(Tone::Grave),
            'r' => Some(Tone::Hook),
            'x' => Some(Tone::Tilde),
            'j' => Some(Tone::Dot),
            _ => None,
        }
    }

    fn from_vni_key(c: char) -> Option<Tone> {
        match c {
            '1'..='5' => Some(Tone::from_mark_index(c as usize - '1' as usize)),
            _ => None,
        }
    }
}

/// Input method used to type Vietnamese on a Latin keyboard.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeystrokeScheme {
    Telex,
    #[serde(rename = "VNI")]
    Vni,
}

/// Casing of a surface string, recorded so it can be reapplied after the
/// lowercase form has been manipulated.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CasePattern {
    Lower,
    Upper,
    Title,
    /// Per-character uppercase flags.
    Mixed(Vec<bool>),
}

impl CasePattern {
    pub fn detect(s: &str) -> CasePattern {
        let flags: Vec<bool> = s.chars().map(char::is_uppercase).collect();
        if flags.iter().all(|u| !u) {
            CasePattern::Lower
        } else if flags.len() > 1 && flags.iter().all(|u| *u) {
            CasePattern::Upper
        } else if flags[0] && flags[1..].iter().all(|u| !u) {
            CasePattern::Title
        } else {
            CasePattern::Mixed(flags)
        }
    }

    /// Whether the character at `index` is uppercase under this pattern.
    pub fn is_upper_at(&self, index: usize) -> bool {
        match self {
            CasePattern::Lower => false,
            CasePattern::Upper => true,
            CasePattern::Title => index == 0,
            CasePattern::Mixed(flags) => flags.get(index).copied().unwrap_or(false),
        }
    }

    pub fn apply(&self, lower: &str) -> String {
        lower
            .chars()
            .enumerate()
            .map(|(i, c)| if self.is_upper_at(i) { to_upper(c) } else { c })
            .collect()
    }
}

/// Where the tone mark goes on the open rimes `oa`, `oe` and `uy`:
/// `hòa`/`thủy` (classic) or `hoà`/`thuỷ` (modern). Both are in use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TonePlacement {
    #[default]
    Classic,
    Modern,
}

/// A decomposed Vietnamese syllable.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Syllable {
    pub onset: String,
    pub nucleus: String,
    pub coda: String,
    pub tone: Tone,
    pub case: CasePattern,
    pub placement: TonePlacement,
}

/// Returned by [`parse_syllable`] for tokens that are not well-formed
/// Vietnamese syllables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NotASyllable;

impl fmt::Display for NotASyllable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("not a Vietnamese syllable")
    }
}

impl std::error::Error for NotASyllable {}

/// A keystroke sequence that does not decode to a valid syllable. Carries the
/// raw input unchanged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ambiguous(pub String);

impl fmt::Display for Ambiguous {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "keystrokes {:?} do not compose a syllable", self.0)
    }
}

impl std::error::Error for Ambiguous {}

// Base vowels and their five marked forms: acute, grave, hook, tilde, dot.
const VOWEL_TABLE: [(char, [char; 5]); 12] = [
    ('a', ['á', 'à', 'ả', 'ã', 'ạ']),
    ('ă', ['ắ', 'ằ', 'ẳ', 'ẵ', 'ặ']),
    ('â', ['ấ', 'ầ', 'ẩ', 'ẫ', 'ậ']),
    ('e', ['é', 'è', 'ẻ', 'ẽ', 'ẹ']),
    ('ê', ['ế', 'ề', 'ể', 'ễ', 'ệ']),
    ('i', ['í', 'ì', 'ỉ', 'ĩ', 'ị']),
    ('o', ['ó', 'ò', 'ỏ', 'õ', 'ọ']),
    ('ô', ['ố', 'ồ', 'ổ', 'ỗ', 'ộ']),
    ('ơ', ['ớ', 'ờ', 'ở', 'ỡ', 'ợ']),
    ('u', ['ú', 'ù', 'ủ', 'ũ', 'ụ']),
    ('ư', ['ứ', 'ừ', 'ử', 'ữ', 'ự']),
    ('y', ['ý', 'ỳ', 'ỷ', 'ỹ', 'ỵ']),
];

// Longest first so that prefix matching prefers "ngh" over "ng" over "n".
const ONSETS: [&str; 28] = [
    "ngh", "ch", "gh", "gi", "kh", "ng", "nh", "ph", "qu", "th", "tr", "b", "c", "d", "đ", "g",
    "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "x", "",
];

const CODAS: [&str; 13] = [
    "ch", "ng", "nh", "c", "i", "m", "n", "o", "p", "t", "u", "y", "",
];

// Nucleus followed by the codas it accepts.
const RIMES: [(&str, &[&str]); 28] = [
    ("a", &["", "c", "ch", "i", "m", "n", "ng", "nh", "o", "p", "t", "u", "y"]),
    ("ă", &["c", "m", "n", "ng", "p", "t"]),
    ("â", &["c", "m", "n", "ng", "p", "t", "u", "y"]),
    ("e", &["", "c", "m", "n", "ng", "o", "p", "t"]),
    ("ê", &["", "ch", "m", "n", "nh", "p", "t", "u"]),
    ("i", &["", "ch", "m", "n", "nh", "p", "t", "u"]),
    ("y", &["", "ch", "nh", "t"]),
    ("o", &["", "c", "i", "m", "n", "ng", "p", "t"]),
    ("ô", &["", "c", "i", "m", "n", "ng", "p", "t"]),
    ("ơ", &["", "i", "m", "n", "p", "t"]),
    ("u", &["", "c", "i", "m", "n", "ng", "p", "t"]),
    ("ư", &["", "c", "i", "n", "ng", "t", "u"]),
    ("ia", &[""]),
    ("iê", &["c", "m", "n", "ng", "p", "t", "u"]),
    ("yê", &["m", "n", "t", "u"]),
    ("ua", &[""]),
    ("uô", &["c", "i", "m", "n", "ng", "t"]),
    ("ưa", &[""]),
    ("ươ", &["c", "i", "m", "n", "ng", "p", "t", "u"]),
    ("oa", &["", "c", "ch", "i", "m", "n", "ng", "nh", "t", "y"]),
    ("oă", &["c", "m", "n", "ng", "t"]),
    ("oe", &["", "n", "o", "t"]),
    ("uâ", &["n", "ng", "t", "y"]),
    ("uê", &["", "ch", "nh"]),
    ("uy", &["", "ch", "n", "nh", "t", "u"]),
    ("uyê", &["n", "t"]),
    ("uya", &[""]),
    ("uơ", &[""]),
];

// Nuclei that begin with the rounding glide (written o or u).
const MEDIAL_NUCLEI: [&str; 9] = ["oa", "oă", "oe", "uâ", "uê", "uy", "uyê", "uya", "uơ"];

// Onsets that may precede a bare `y` nucleus.
const Y_ONSETS: [&str; 11] = ["", "qu", "k", "l", "m", "t", "s", "h", "v", "đ", "n"];

fn is_stop_coda(coda: &str) -> bool {
    matches!(coda, "c" | "ch" | "p" | "t")
}

fn is_modified_vowel(c: char) -> bool {
    matches!(c, 'ă' | 'â' | 'ê' | 'ô' | 'ơ' | 'ư')
}

fn is_base_vowel(c: char) -> bool {
    VOWEL_TABLE.iter().any(|(b, _)| *b == c)
}

fn to_upper(c: char) -> char {
    c.to_uppercase().next().unwrap_or(c)
}

fn to_lower(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

fn tone_lookup() -> &'static HashMap<char, (char, Tone)> {
    static TABLE: OnceLock<HashMap<char, (char, Tone)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut m = HashMap::new();
        for (base, marks) in VOWEL_TABLE {
            m.insert(base, (base, Tone::Level));
            for (i, marked) in marks.into_iter().enumerate() {
                m.insert(marked, (base, Tone::from_mark_index(i)));
            }
        }
        m
    })
}

/// Splits a lowercase vowel into its base (modified) vowel and tone.
fn split_tone(c: char) -> Option<(char, Tone)> {
    tone_lookup().get(&c).copied()
}

fn with_tone(base: char, tone: Tone) -> char {
    match tone.mark_index() {
        None => base,
        Some(i) => VOWEL_TABLE
            .iter()
            .find(|(b, _)| *b == base)
            .map(|(_, marks)| marks[i])
            .unwrap_or(base),
    }
}

fn plain_letter(c: char) -> char {
    match c {
        'ă' | 'â' => 'a',
        'ê' => 'e',
        'ô' | 'ơ' => 'o',
        'ư' => 'u',
        'đ' => 'd',
        other => other,
    }
}

fn strip_table() -> &'static HashMap<char, char> {
    static TABLE: OnceLock<HashMap<char, char>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut m = HashMap::new();
        for (base, marks) in VOWEL_TABLE {
            let plain = plain_letter(base);
            for c in std::iter::once(base).chain(marks) {
                m.insert(c, plain);
                m.insert(to_upper(c), to_upper(plain));
            }
        }
        m.insert('đ', 'd');
        m.insert('Đ', 'D');
        m
    })
}

// Combining marks used by decomposed (NFD) Vietnamese text.
fn is_vietnamese_combining_mark(c: char) -> bool {
    matches!(
        c,
        '\u{0300}' | '\u{0301}' | '\u{0302}' | '\u{0303}' | '\u{0306}' | '\u{0309}' | '\u{031B}'
            | '\u{0323}'
    )
}

/// Removes tone marks and letter modifications (`ô`→`o`, `ư`→`u`, `đ`→`d`).
/// Everything else passes through unchanged.
pub fn strip_diacritics(s: &str) -> String {
    let table = strip_table();
    s.chars()
        .filter(|c| !is_vietnamese_combining_mark(*c))
        .map(|c| table.get(&c).copied().unwrap_or(c))
        .collect()
}

/// True when `s` contains any Vietnamese diacritic.
pub fn has_diacritics(s: &str) -> bool {
    let table = strip_table();
    s.chars().any(|c| {
        is_vietnamese_combining_mark(c) || table.get(&c).is_some_and(|plain| *plain != c)
    })
}

fn onset_allows(onset: &str, nucleus: &str, coda: &str) -> bool {
    let first = nucleus.chars().next().unwrap_or('a');
    let front = matches!(first, 'i' | 'e' | 'ê' | 'y');
    let medial = MEDIAL_NUCLEI.contains(&nucleus);
    if nucleus == "yê" && !matches!(onset, "" | "qu") {
        return false;
    }
    if nucleus == "iê" && matches!(onset, "" | "qu") {
        return false;
    }
    if nucleus == "y" && (!Y_ONSETS.contains(&onset) || (!coda.is_empty() && onset != "qu")) {
        return false;
    }
    match onset {
        "k" | "gh" | "ngh" => front,
        "c" => !front && !medial,
        "ng" => !front,
        // `g` before `i` is the contracted spelling of the gi onset (gì, gìn),
        // used only where no gi + rime reading exists.
        "g" => {
            if nucleus == "i" || nucleus == "iê" {
                let rest = format!("{}{}", &nucleus[1..], coda);
                !CODAS.iter().any(|c| {
                    rest.strip_suffix(c).is_some_and(|n| {
                        !n.is_empty() && rime_allows(n, c) && onset_allows("gi", n, c)
                    })
                })
            } else {
                !front
            }
        }
        "qu" => !medial && !matches!(first, 'u' | 'ư' | 'o'),
        "gi" => !medial && !matches!(first, 'i' | 'y'),
        "b" | "m" | "p" | "v" | "ph" => !medial,
        _ => true,
    }
}

fn rime_allows(nucleus: &str, coda: &str) -> bool {
    RIMES
        .iter()
        .any(|(n, codas)| *n == nucleus && codas.contains(&coda))
}

fn is_valid_combination(onset: &str, nucleus: &str, coda: &str, tone: Tone) -> bool {
    rime_allows(nucleus, coda) && onset_allows(onset, nucleus, coda) && tone.allowed_with_coda(coda)
}

/// Index within the nucleus of the vowel that carries the tone mark.
fn tone_slot(nucleus: &[char], coda_empty: bool, placement: TonePlacement) -> usize {
    if let Some(i) = nucleus.iter().rposition(|c| is_modified_vowel(*c)) {
        return i;
    }
    if nucleus.len() <= 1 {
        return 0;
    }
    if !coda_empty {
        return nucleus.len() - 1;
    }
    let s: String = nucleus.iter().collect();
    match s.as_str() {
        "oa" | "oe" | "uy" => match placement {
            TonePlacement::Classic => 0,
            TonePlacement::Modern => 1,
        },
        "uya" => 1,
        _ => 0,
    }
}

impl Syllable {
    /// Builds a lowercase syllable, checking it against the onset/rime rules.
    pub fn new(onset: &str, nucleus: &str, coda: &str, tone: Tone) -> Result<Syllable, NotASyllable> {
        if !is_valid_combination(onset, nucleus, coda, tone) {
            return Err(NotASyllable);
        }
        Ok(Syllable {
            onset: onset.to_string(),
            nucleus: nucleus.to_string(),
            coda: coda.to_string(),
            tone,
            case: CasePattern::Lower,
            placement: TonePlacement::Classic,
        })
    }

    fn tone_char_index(&self) -> usize {
        let nucleus: Vec<char> = self.nucleus.chars().collect();
        self.onset.chars().count() + tone_slot(&nucleus, self.coda.is_empty(), self.placement)
    }

    fn render_lower(&self) -> String {
        let nucleus: Vec<char> = self.nucleus.chars().collect();
        let slot = tone_slot(&nucleus, self.coda.is_empty(), self.placement);
        let mut out = String::with_capacity(self.onset.len() + self.nucleus.len() + self.coda.len() + 2);
        out.push_str(&self.onset);
        for (i, c) in nucleus.iter().enumerate() {
            out.push(if i == slot { with_tone(*c, self.tone) } else { *c });
        }
        out.push_str(&self.coda);
        out
    }

    /// The surface form, with tone mark and original casing.
    pub fn render(&self) -> String {
        self.case.apply(&self.render_lower())
    }

    /// Same syllable with a different tone; `None` when the coda forbids it.
    pub fn with_tone(&self, tone: Tone) -> Option<Syllable> {
        tone.allowed_with_coda(&self.coda).then(|| Syllable {
            tone,
            ..self.clone()
        })
    }
}

impl fmt::Display for Syllable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Decomposes a whitespace-free token into a [`Syllable`].
pub fn parse_syllable(s: &str) -> Result<Syllable, NotASyllable> {
    if s.is_empty() || !s.chars().all(char::is_alphabetic) {
        return Err(NotASyllable);
    }
    let lower: Vec<char> = s.chars().map(to_lower).collect();
    if lower.len() != s.chars().count() {
        return Err(NotASyllable);
    }
    let case = CasePattern::detect(s);

    let mut bare = Vec::with_capacity(lower.len());
    let mut tone = Tone::Level;
    let mut tone_at = None;
    for (i, c) in lower.iter().enumerate() {
        match split_tone(*c) {
            Some((base, t)) if t != Tone::Level => {
                if tone_at.is_some() {
                    return Err(NotASyllable);
                }
                tone = t;
                tone_at = Some(i);
                bare.push(base);
            }
            _ => bare.push(*c),
        }
    }
    let bare: String = bare.into_iter().collect();
    decompose(&bare, tone, tone_at, case)
}

/// Splits a lowercase, tone-free letter string into onset, nucleus and coda.
/// `tone_at` is the character index where the mark was found, if any.
fn decompose(
    bare: &str,
    tone: Tone,
    tone_at: Option<usize>,
    case: CasePattern,
) -> Result<Syllable, NotASyllable> {
    for onset in ONSETS {
        let Some(rest) = bare.strip_prefix(onset) else {
            continue;
        };
        for coda in CODAS {
            let Some(nucleus) = rest.strip_suffix(coda) else {
                continue;
            };
            if nucleus.is_empty() || !is_valid_combination(onset, nucleus, coda, tone) {
                continue;
            }
            let mut syl = Syllable {
                onset: onset.to_string(),
                nucleus: nucleus.to_string(),
                coda: coda.to_string(),
                tone,
                case: case.clone(),
                placement: TonePlacement::Classic,
            };
            if let Some(at) = tone_at {
                if syl.tone_char_index() != at {
                    syl.placement = TonePlacement::Modern;
                    if syl.tone_char_index() != at {
                        continue;
                    }
                }
            }
            return Ok(syl);
        }
    }
    Err(NotASyllable)
}

fn telex_letter(c: char) -> &'static str {
    match c {
        'ă' => "aw",
        'â' => "aa",
        'ê' => "ee",
        'ô' => "oo",
        'ơ' => "ow",
        'ư' => "uw",
        'đ' => "dd",
        _ => "",
    }
}

fn vni_letter(c: char) -> &'static str {
    match c {
        'ă' => "a8",
        'â' => "a6",
        'ê' => "e6",
        'ô' => "o6",
        'ơ' => "o7",
        'ư' => "u7",
        'đ' => "d9",
        _ => "",
    }
}

/// The keys a typist presses for `syl` under `scheme` with the input method
/// switched off: letter modifiers directly after their letter, tone key last.
pub fn to_keystrokes(syl: &Syllable, scheme: KeystrokeScheme) -> String {
    let bare: String = format!("{}{}{}", syl.onset, syl.nucleus, syl.coda);
    let mut out = String::with_capacity(bare.len() + 4);
    for (i, c) in bare.chars().enumerate() {
        let keys = match scheme {
            KeystrokeScheme::Telex => telex_letter(c),
            KeystrokeScheme::Vni => vni_letter(c),
        };
        let upper = syl.case.is_upper_at(i);
        if keys.is_empty() {
            out.push(if upper { to_upper(c) } else { c });
        } else {
            for k in keys.chars() {
                out.push(if upper { k.to_ascii_uppercase() } else { k });
            }
        }
    }
    let tone_key = match scheme {
        KeystrokeScheme::Telex => syl.tone.telex_key(),
        KeystrokeScheme::Vni => syl.tone.vni_key(),
    };
    if let Some(k) = tone_key {
        out.push(if syl.case == CasePattern::Upper { k.to_ascii_uppercase() } else { k });
    }
    out
}

/// Convenience wrapper: keystrokes for a surface token, if it is a syllable.
pub fn token_keystrokes(token: &str, scheme: KeystrokeScheme) -> Option<String> {
    parse_syllable(token).ok().map(|s| to_keystrokes(&s, scheme))
}

fn apply_modifier(prev: char, key: char, scheme: KeystrokeScheme) -> Option<char> {
    let upper = prev.is_uppercase();
    let p = to_lower(prev);
    let k = key.to_ascii_lowercase();
    let m = match scheme {
        KeystrokeScheme::Telex => match (p, k) {
            ('a', 'a') => 'â',
            ('e', 'e') => 'ê',
            ('o', 'o') => 'ô',
            ('d', 'd') => 'đ',
            ('a', 'w') => 'ă',
            ('o', 'w') => 'ơ',
            ('u', 'w') => 'ư',
            _ => return None,
        },
        KeystrokeScheme::Vni => match (p, k) {
            ('a', '6') => 'â',
            ('e', '6') => 'ê',
            ('o', '6') => 'ô',
            ('a', '8') => 'ă',
            ('o', '7') => 'ơ',
            ('u', '7') => 'ư',
            ('d', '9') => 'đ',
            _ => return None,
        },
    };
    Some(if upper { to_upper(m) } else { m })
}

fn tone_from_key(c: char, scheme: KeystrokeScheme) -> Option<Tone> {
    match scheme {
        KeystrokeScheme::Telex => Tone::from_telex_key(c),
        KeystrokeScheme::Vni => Tone::from_vni_key(c),
    }
}

/// Strict inverse of [`to_keystrokes`]: composes `raw` when it is a canonical
/// keystroke sequence for a valid syllable.
pub fn from_keystrokes(raw: &str, scheme: KeystrokeScheme) -> Result<String, Ambiguous> {
    let ambiguous = || Ambiguous(raw.to_string());
    let mut keys: Vec<char> = raw.chars().collect();
    let tone = match keys.last() {
        Some(&k) if keys.len() > 1 => match tone_from_key(k, scheme) {
            Some(t) => {
                keys.pop();
                t
            }
            None => Tone::Level,
        },
        _ => Tone::Level,
    };

    let mut letters: Vec<char> = Vec::with_capacity(keys.len());
    for k in keys {
        if let Some(m) = letters.last().and_then(|p| apply_modifier(*p, k, scheme)) {
            *letters.last_mut().unwrap() = m;
        } else {
            letters.push(k);
        }
    }
    let composed: String = letters.iter().collect();
    if !letters.iter().all(|c| c.is_alphabetic() && split_tone(to_lower(*c)).is_none_or(|(_, t)| t == Tone::Level)) {
        return Err(ambiguous());
    }
    let bare: String = letters.iter().map(|c| to_lower(*c)).collect();
    let syl = decompose(&bare, tone, None, CasePattern::detect(&composed)).map_err(|_| ambiguous())?;
    Ok(syl.render())
}

/// Composes an arbitrary key sequence the way a permissive input method
/// would: modifiers apply to the preceding letter, a tone key after the first
/// vowel marks the vowel cluster. Never fails; unknown keys are kept as typed.
pub fn compose_lenient(raw: &str, scheme: KeystrokeScheme) -> String {
    if let Ok(s) = from_keystrokes(raw, scheme) {
        return s;
    }
    let mut out: Vec<char> = Vec::with_capacity(raw.len());
    let mut tone = None;
    for k in raw.chars() {
        if let Some(m) = out.last().and_then(|p| apply_modifier(*p, k, scheme)) {
            *out.last_mut().unwrap() = m;
            continue;
        }
        let has_vowel = out.iter().any(|c| is_base_vowel(to_lower(*c)));
        if tone.is_none() && has_vowel {
            if let Some(t) = tone_from_key(k, scheme) {
                tone = Some(t);
                continue;
            }
        }
        out.push(k);
    }
    if let Some(t) = tone {
        let is_v = |c: &char| is_base_vowel(to_lower(*c));
        if let Some(start) = out.iter().position(is_v) {
            let end = out[start..]
                .iter()
                .position(|c| !is_v(c))
                .map_or(out.len(), |p| start + p);
            let cluster: Vec<char> = out[start..end].iter().map(|c| to_lower(*c)).collect();
            let slot = start + tone_slot(&cluster, end == out.len(), TonePlacement::Classic);
            let c = out[slot];
            let marked = with_tone(to_lower(c), t);
            out[slot] = if c.is_uppercase() { to_upper(marked) } else { marked };
        }
    }
    out.into_iter().collect()
}

/// Every syllable producible from the onset/rime/tone rules, rendered in
/// lowercase with classic tone placement, sorted and deduplicated.
pub fn generate_inventory() -> Vec<String> {
    let mut set = HashSet::new();
    for onset in ONSETS {
        for (nucleus, codas) in RIMES {
            for coda in codas {
                for tone in Tone::ALL {
                    if let Ok(syl) = Syllable::new(onset, nucleus, coda, tone) {
                        let surface = syl.render();
                        if parse_syllable(&surface).is_ok() {
                            set.insert(surface);
                        }
                    }
                }
            }
        }
    }
    let mut list: Vec<String> = set.into_iter().collect();
    list.sort();
    list
}

/// The valid-syllable list, one lowercase syllable per line.
#[derive(Clone, Debug)]
pub struct SyllableInventory {
    list: Vec<String>,
    set: HashSet<String>,
}

const BUILTIN_INVENTORY: &str = include_str!("../data/syllables.txt");

impl SyllableInventory {
    pub fn builtin() -> &'static SyllableInventory {
        static INV: OnceLock<SyllableInventory> = OnceLock::new();
        INV.get_or_init(|| SyllableInventory::parse(BUILTIN_INVENTORY))
    }

    pub fn from_path(path: impl AsRef<Path>) -> std::io::Result<SyllableInventory> {
        Ok(SyllableInventory::parse(&std::fs::read_to_string(path)?))
    }

    fn parse(text: &str) -> SyllableInventory {
        let list: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        let set = list.iter().cloned().collect();
        SyllableInventory { list, set }
    }

    pub fn contains(&self, syllable: &str) -> bool {
        let lower: String = syllable.chars().map(to_lower).collect();
        self.set.contains(&lower)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.list.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }
}
