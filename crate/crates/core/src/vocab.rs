//! Ordered word vocabularies and the edit-distance lexicon corrector.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctc::Alphabet;
use crate::error::{Error, Result};
use crate::metrics::dl_distance;

/// Maintenance-log terms; none contains the letter Z.
const TERMS: &[&str] = &[
    "INSPECTED", "REPLACED", "REMOVED", "INSTALLED", "CHECKED", "LEAK", "HYDRAULIC", "ENGINE",
    "VALVE", "PUMP", "FILTER", "SEAL", "BOLT", "PANEL", "DOOR", "GEAR", "BRAKE", "TIRE", "WHEEL",
    "FUEL", "OIL", "LINE", "HOSE", "CLAMP", "WIRE", "CABLE", "SENSOR", "LIGHT", "SWITCH", "CRACK",
    "DENT", "CORROSION", "LEFT", "RIGHT", "MAIN", "NOSE", "FLAP", "SLAT", "RUDDER", "AILERON",
    "PITOT", "STATIC", "TANK", "CAP", "NUT", "SCREW", "WASHER", "SPRING", "BEARING", "SHAFT",
    "BLADE", "FAN", "DUCT", "VENT", "SEAT", "BELT", "CARGO", "CABIN", "GALLEY", "LAVATORY",
    "OXYGEN", "MASK", "BATTERY", "RADIO", "ANTENNA", "STRUT", "TORQUE", "ADJUSTED", "SERVICED",
    "CLEANED", "TESTED", "NORMAL", "FAULT", "DEFERRED", "PART", "SERIAL", "CHANGED", "SECURED",
    "WORN", "LOOSE", "MISSING", "BROKEN", "DAMAGED", "APU", "WING", "TAIL", "PROBE", "HATCH",
    "LATCH", "HINGE", "RIVET", "SKIN", "FRAME", "SPAR", "RIB", "PYLON", "COWL", "INLET", "EXHAUST",
    "TRIM", "TAB", "SPOILER", "ACTUATOR", "MOTOR", "RELAY", "FUSE", "BREAKER", "DISPLAY",
    "GAUGE", "INDICATOR", "WARNING", "CAUTION", "PRESSURE", "LOW", "HIGH", "OK", "DONE", "ITEM",
    "TASK", "CARD", "REF", "STEP", "TEST", "OPS", "CHECK", "SHIFT", "CREW", "PILOT", "LOG",
];

/// Ordered list of unique words over an alphabet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Invalid("vocabulary is empty".into()));
        }
        let alphabet = Alphabet::default();
        let mut seen = HashSet::new();
        for w in &words {
            if w.is_empty() {
                return Err(Error::Invalid("vocabulary contains an empty word".into()));
            }
            if let Some(c) = w.chars().find(|c| !alphabet.contains(*c)) {
                return Err(Error::Alphabet(c));
            }
            if !seen.insert(w.as_str()) {
                return Err(Error::Invalid(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Vocabulary { words })
    }

    /// `size` words: shuffled maintenance terms first, then random
    /// alphanumeric part codes once the term list runs out.
    pub fn synthetic(size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Invalid("vocabulary size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms: Vec<&str> = TERMS.to_vec();
        terms.shuffle(&mut rng);
        let mut words: Vec<String> = terms.into_iter().take(size).map(String::from).collect();
        let mut seen: HashSet<String> = words.iter().cloned().collect();
        let chars = Alphabet::default().chars().to_vec();
        while words.len() < size {
            let len = rng.gen_range(3..=7);
            let w: String = (0..len).map(|_| chars[rng.gen_range(0..chars.len())]).collect();
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        Vocabulary::new(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index_of(word).is_some()
    }

    pub fn max_len(&self) -> usize {
        self.words.iter().map(|w| w.chars().count()).max().unwrap_or(0)
    }

    /// Plain text, one word per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Vocabulary::new(words).map_err(|e| Error::dataset(path, "words", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.words.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Snap an out-of-vocabulary word to the nearest vocabulary word when its
/// Damerau-Levenshtein distance is at most 2. Ties go to the
/// lexicographically smallest word.
pub fn lexicon_correct(word: &str, vocab: &Vocabulary) -> String {
    if vocab.contains(word) {
        return word.to_string();
    }
    let mut best: Option<(usize, &str)> = None;
    for w in vocab.words() {
        let d = dl_distance(word, w);
        if d <= 2 && best.is_none_or(|(bd, bw)| (d, w.as_str()) < (bd, bw)) {
            best = Some((d, w));
        }
    }
    best.map_or_else(|| word.to_string(), |(_, w)| w.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::new(words.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn terms_are_valid() {
        let v = Vocabulary::new(TERMS.iter().map(|s| s.to_string()).collect()).unwrap();
        assert!(v.len() >= 50);
    }

    #[test]
    fn rejects_bad_vocabularies() {
        assert!(Vocabulary::new(vec![]).is_err());
        assert!(Vocabulary::new(vec!["AB".into(), "AB".into()]).is_err());
        assert!(matches!(
            Vocabulary::new(vec!["JAZZ".into()]),
            Err(Error::Alphabet('Z'))
        ));
    }

    #[test]
    fn synthetic_sizes_and_determinism() {
        let a = Vocabulary::synthetic(30, 4).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!(a, Vocabulary::synthetic(30, 4).unwrap());
        assert_eq!(Vocabulary::synthetic(998, 1).unwrap().len(), 998);
    }

    #[test]
    fn correction_examples() {
        let v = vocab(&["INSPECTED", "LEAK", "VALVE"]);
        assert_eq!(lexicon_correct("INSPECTED", &v), "INSPECTED");
        assert_eq!(lexicon_correct("INSPECTEO", &v), "INSPECTED");
        assert_eq!(lexicon_correct("XQ7PW", &v), "XQ7PW");
    }

    #[test]
    fn correction_tie_break() {
        let v = vocab(&["CAT", "BAT"]);
        // Both at distance 1: lexicographic winner.
        assert_eq!(lexicon_correct("HAT", &v), "BAT");
        // Nearer word beats lexicographic order.
        let v = vocab(&["AAAA", "BAT"]);
        assert_eq!(lexicon_correct("BAR", &v), "BAT");
    }
}
