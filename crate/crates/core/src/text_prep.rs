//! Deterministic title normalization.
//!
//! The pipeline runs in a fixed order: strip non-ASCII code points, remove
//! possessive `'s`, turn every remaining ASCII punctuation or control
//! character into a separator, lowercase, split on whitespace, lemmatize with
//! a rule table, then drop stop words and tokens shorter than the configured
//! minimum length.
//!
//! The lemmatizer is applied to a fixpoint, which makes the whole pipeline
//! idempotent: normalizing the space-joined output yields the same tokens.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const BUNDLED_LEMMA_RULES: &str = include_str!("../data/lemma_rules.txt");

/// Upper bound on lemmatizer passes. Every suffix rule shortens the word, so
/// the fixpoint is reached well before this.
const MAX_LEMMA_PASSES: usize = 16;

/// A title reduced to its normalized terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedTitle {
    pub title_id: String,
    pub tokens: Vec<String>,
}

/// File-level configuration, loadable from TOML. Missing paths fall back to
/// the bundled tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub stopwords_path: Option<PathBuf>,
    pub lemma_rules_path: Option<PathBuf>,
    pub min_token_len: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            stopwords_path: None,
            lemma_rules_path: None,
            min_token_len: 2,
        }
    }
}

impl PrepConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::parse("prep config", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// Anything that maps a lowercase ASCII word to its lemma.
pub trait Lemmatizer: Send + Sync {
    fn lemma(&self, word: &str) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StemFix {
    None,
    Restore,
}

#[derive(Debug, Clone)]
struct SuffixRule {
    suffix: String,
    replacement: String,
    min_stem: usize,
    fix: StemFix,
}

#[derive(Debug, Clone)]
struct DoubleRule {
    suffix: String,
    stem_len: usize,
}

/// Table-driven suffix lemmatizer.
#[derive(Debug, Clone, Default)]
pub struct RuleLemmatizer {
    keep: HashSet<String>,
    exceptions: HashMap<String, String>,
    doubles: Vec<DoubleRule>,
    suffixes: Vec<SuffixRule>,
    e_endings: Vec<String>,
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

fn has_vowel(s: &str) -> bool {
    s.bytes().any(|c| is_vowel(c) || c == b'y')
}

fn ends_in_double_consonant(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2] && !is_vowel(b[b.len() - 1])
}

/// Unquote a rule-table field; `""` denotes the empty string.
fn field(s: &str) -> String {
    s.trim_matches('"').to_string()
}

impl RuleLemmatizer {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEMMA_RULES).expect("bundled lemma table is well-formed")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = RuleLemmatizer::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::parse("lemma rule", format!("line {}: {raw}", lineno + 1));
            match parts[0] {
                "keep" => out.keep.extend(parts[1..].iter().map(|w| w.to_string())),
                "except" if parts.len() == 3 => {
                    out.exceptions
                        .insert(parts[1].to_string(), parts[2].to_string());
                }
                "double" if parts.len() == 3 => out.doubles.push(DoubleRule {
                    suffix: field(parts[1]),
                    stem_len: parts[2].parse().map_err(|_| bad())?,
                }),
                "suffix" if parts.len() == 4 || parts.len() == 5 => {
                    let fix = match parts.get(4) {
                        None => StemFix::None,
                        Some(&"restore") => StemFix::Restore,
                        Some(_) => return Err(bad()),
                    };
                    out.suffixes.push(SuffixRule {
                        suffix: field(parts[1]),
                        replacement: field(parts[2]),
                        min_stem: parts[3].parse().map_err(|_| bad())?,
                        fix,
                    });
                }
                "erestore" if parts.len() == 2 => out.e_endings.push(field(parts[1])),
                _ => return Err(bad()),
            }
        }
        Ok(out)
    }

    fn restore(&self, stem: &str) -> String {
        let b = stem.as_bytes();
        // runn -> run, but add/egg/inn keep their letters
        if b.len() >= 4 && ends_in_double_consonant(stem) && !matches!(b[b.len() - 1], b'l' | b's' | b'z' | b'f') {
            return stem[..stem.len() - 1].to_string();
        }
        if self.e_endings.iter().any(|e| stem.ends_with(e.as_str())) {
            return format!("{stem}e");
        }
        // consonant-vowel-consonant three-letter stems: vot -> vote
        if b.len() == 3 && !is_vowel(b[0]) && is_vowel(b[1]) && !is_vowel(b[2]) && !matches!(b[2], b'w' | b'x' | b'y') {
            return format!("{stem}e");
        }
        stem.to_string()
    }

    fn step(&self, word: &str) -> String {
        if self.keep.contains(word) {
            return word.to_string();
        }
        if let Some(lemma) = self.exceptions.get(word) {
            return lemma.clone();
        }
        for rule in &self.doubles {
            if let Some(stem) = word.strip_suffix(rule.suffix.as_str()) {
                if stem.len() == rule.stem_len + 1 && ends_in_double_consonant(stem) {
                    return stem[..stem.len() - 1].to_string();
                }
            }
        }
        for rule in &self.suffixes {
            let Some(stem) = word.strip_suffix(rule.suffix.as_str()) else {
                continue;
            };
            if rule.suffix == rule.replacement {
                return word.to_string();
            }
            if stem.len() < rule.min_stem || !has_vowel(stem) {
                continue;
            }
            let stem = match rule.fix {
                StemFix::None => stem.to_string(),
                StemFix::Restore => self.restore(stem),
            };
            return stem + &rule.replacement;
        }
        word.to_string()
    }
}

impl Lemmatizer for RuleLemmatizer {
    fn lemma(&self, word: &str) -> String {
        let mut current = word.to_string();
        for _ in 0..MAX_LEMMA_PASSES {
            let next = self.step(&current);
            if next == current {
                break;
            }
            current = next;
        }
        current
    }
}

/// Parse a stop-word list: one word per line, `#` comments.
pub fn parse_word_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// A ready-to-use normalization pipeline.
#[derive(Clone)]
pub struct Normalizer {
    stopwords: HashSet<String>,
    lemmatizer: Arc<dyn Lemmatizer>,
    min_token_len: usize,
}

impl std::fmt::Debug for Normalizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Normalizer")
            .field("stopwords", &self.stopwords.len())
            .field("min_token_len", &self.min_token_len)
            .finish()
    }
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            stopwords: parse_word_list(BUNDLED_STOPWORDS),
            lemmatizer: Arc::new(RuleLemmatizer::bundled()),
            min_token_len: 2,
        }
    }
}

impl Normalizer {
    pub fn from_config(config: &PrepConfig) -> Result<Self> {
        let stopwords = match &config.stopwords_path {
            Some(p) => parse_word_list(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => parse_word_list(BUNDLED_STOPWORDS),
        };
        let lemmatizer = match &config.lemma_rules_path {
            Some(p) => RuleLemmatizer::load(p)?,
            None => RuleLemmatizer::bundled(),
        };
        Ok(Self {
            stopwords,
            lemmatizer: Arc::new(lemmatizer),
            min_token_len: config.min_token_len,
        })
    }

    pub fn with_lemmatizer(mut self, lemmatizer: Arc<dyn Lemmatizer>) -> Self {
        self.lemmatizer = lemmatizer;
        self
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(word)
    }

    pub fn normalize(&self, text: &str) -> Vec<String> {
        let ascii: String = text.chars().filter(char::is_ascii).collect();
        let cleaned = strip_punctuation(&ascii);
        cleaned
            .split_whitespace()
            // stop words are their own lemma, so they skip the lemmatizer
            .filter(|word| !self.stopwords.contains(*word))
            .map(|word| self.lemmatizer.lemma(word))
            .filter(|lemma| lemma.len() >= self.min_token_len && !self.stopwords.contains(lemma))
            .collect()
    }

    pub fn tokenize_title(&self, title_id: &str, text: &str) -> TokenizedTitle {
        TokenizedTitle {
            title_id: title_id.to_string(),
            tokens: self.normalize(text),
        }
    }
}

/// Remove possessive `'s`, map every non-alphanumeric ASCII character to a
/// space and lowercase the rest. Input must already be ASCII.
fn strip_punctuation(ascii: &str) -> String {
    let bytes = ascii.as_bytes();
    let mut out = String::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\''
            && i > 0
            && bytes[i - 1].is_ascii_alphanumeric()
            && matches!(bytes.get(i + 1), Some(b's' | b'S'))
            && !bytes.get(i + 2).is_some_and(u8::is_ascii_alphanumeric)
        {
            out.push(' ');
            i += 2;
            continue;
        }
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase() as char);
        } else {
            out.push(' ');
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(s: &str) -> Vec<String> {
        Normalizer::default().normalize(s)
    }

    #[test]
    fn possessive_quotes_and_plural() {
        assert_eq!(norm("Trump's \"Deal\" Fails!"), ["trump", "deal", "fail"]);
    }

    #[test]
    fn non_ascii_is_deleted_not_split() {
        assert_eq!(norm("The \u{2014} café ☕"), ["caf"]);
    }

    #[test]
    fn empty_input() {
        assert!(norm("").is_empty());
        assert!(norm("the and of").is_empty());
    }

    #[test]
    fn hyphens_and_apostrophes_separate() {
        assert_eq!(norm("pro-gun rally"), ["pro", "gun", "rally"]);
        assert_eq!(norm("voters' anger"), ["voter", "anger"]);
    }

    #[test]
    fn bundled_stop_list_has_179_words() {
        assert_eq!(parse_word_list(BUNDLED_STOPWORDS).len(), 179);
    }

    #[test]
    fn lemma_rules() {
        let l = RuleLemmatizer::bundled();
        for (w, want) in [
            ("fails", "fail"),
            ("studies", "study"),
            ("taxes", "tax"),
            ("running", "run"),
            ("making", "make"),
            ("voted", "vote"),
            ("voting", "vote"),
            ("killing", "kill"),
            ("bigger", "big"),
            ("biggest", "big"),
            ("happier", "happy"),
            ("power", "power"),
            ("gas", "gas"),
            ("news", "news"),
            ("coronavirus", "coronavirus"),
            ("elected", "elect"),
            ("children", "child"),
            ("string", "string"),
            ("regulated", "regulate"),
            ("approved", "approve"),
            ("approves", "approve"),
            ("moving", "move"),
        ] {
            assert_eq!(l.lemma(w), want, "lemma of {w}");
        }
    }

    #[test]
    fn custom_rule_table() {
        let l = RuleLemmatizer::parse("suffix s \"\" 1\nkeep bus\n").unwrap();
        assert_eq!(l.lemma("cats"), "cat");
        assert_eq!(l.lemma("bus"), "bus");
        assert!(RuleLemmatizer::parse("bogus line").is_err());
    }

    #[test]
    fn config_from_toml() {
        let c = PrepConfig::from_toml_str("min_token_len = 3\n").unwrap();
        assert_eq!(c.min_token_len, 3);
        assert!(c.stopwords_path.is_none());
        let n = Normalizer::from_config(&c).unwrap();
        assert_eq!(n.normalize("go gun ban"), ["gun", "ban"]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn output_alphabet_and_idempotence(s in "\\PC{0,40}") {
            let n = Normalizer::default();
            let once = n.normalize(&s);
            for t in &once {
                prop_assert!(t.len() >= 2);
                prop_assert!(t.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit()), "token {t:?}");
                prop_assert!(!n.is_stopword(t));
            }
            let twice = n.normalize(&once.join(" "));
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once, n.normalize(&s));
        }

        #[test]
        fn idempotent_on_wordlike_input(words in proptest::collection::vec("[A-Za-z']{1,12}", 0..8)) {
            let n = Normalizer::default();
            let s = words.join(" ");
            let once = n.normalize(&s);
            prop_assert_eq!(n.normalize(&once.join(" ")), once);
        }
    }
}
