//! Porter stemmer (the original 1980 algorithm), used to build topic-model
//! documents. Operates on lowercase ASCII words; anything else is returned
//! unchanged.

/// Stem one word. Words of length <= 2 are returned as-is, per Porter.
pub fn stem(word: &str) -> String {
    let w: Vec<u8> = word.bytes().collect();
    if w.len() <= 2 || !w.iter().all(|b| b.is_ascii_lowercase()) {
        return word.to_string();
    }
    let mut s = Stemmer { b: w };
    s.step1a();
    s.step1b();
    s.step1c();
    s.step2();
    s.step3();
    s.step4();
    s.step5a();
    s.step5b();
    String::from_utf8(s.b).unwrap()
}

struct Stemmer {
    b: Vec<u8>,
}

impl Stemmer {
    fn is_consonant(&self, i: usize) -> bool {
        match self.b[i] {
            b'a' | b'e' | b'i' | b'o' | b'u' => false,
            b'y' => i == 0 || !self.is_consonant(i - 1),
            _ => true,
        }
    }

    /// The measure m of b[..len]: the number of VC sequences.
    fn measure(&self, len: usize) -> usize {
        let mut m = 0;
        let mut i = 0;
        // Skip the optional initial consonant run.
        while i < len && self.is_consonant(i) {
            i += 1;
        }
        loop {
            while i < len && !self.is_consonant(i) {
                i += 1;
            }
            if i == len {
                return m;
            }
            m += 1;
            while i < len && self.is_consonant(i) {
                i += 1;
            }
            if i == len {
                return m;
            }
        }
    }

    fn has_vowel(&self, len: usize) -> bool {
        (0..len).any(|i| !self.is_consonant(i))
    }

    /// *d: b[..len] ends with a double consonant.
    fn double_consonant(&self, len: usize) -> bool {
        len >= 2 && self.b[len - 1] == self.b[len - 2] && self.is_consonant(len - 1)
    }

    /// *o: b[..len] ends consonant-vowel-consonant, final not w, x or y.
    fn cvc(&self, len: usize) -> bool {
        if len < 3 {
            return false;
        }
        self.is_consonant(len - 3)
            && !self.is_consonant(len - 2)
            && self.is_consonant(len - 1)
            && !matches!(self.b[len - 1], b'w' | b'x' | b'y')
    }

    fn ends(&self, suffix: &str) -> Option<usize> {
        let s = suffix.as_bytes();
        if self.b.len() >= s.len() && self.b.ends_with(s) {
            Some(self.b.len() - s.len())
        } else {
            None
        }
    }

    fn set_suffix(&mut self, stem_len: usize, suffix: &str) {
        self.b.truncate(stem_len);
        self.b.extend_from_slice(suffix.as_bytes());
    }

    /// Apply the first matching (suffix, replacement) rule whose stem
    /// measure exceeds `min_m`.
    fn replace_first(&mut self, rules: &[(&str, &str)], min_m: usize) {
        for &(suf, rep) in rules {
            if let Some(len) = self.ends(suf) {
                if self.measure(len) > min_m {
                    self.set_suffix(len, rep);
                }
                return;
            }
        }
    }

    fn step1a(&mut self) {
        if let Some(len) = self.ends("sses") {
            self.set_suffix(len, "ss");
        } else if let Some(len) = self.ends("ies") {
            self.set_suffix(len, "i");
        } else if self.ends("ss").is_some() {
            // keep
        } else if let Some(len) = self.ends("s") {
            self.b.truncate(len);
        }
    }

    fn step1b(&mut self) {
        if let Some(len) = self.ends("eed") {
            if self.measure(len) > 0 {
                self.b.truncate(len + 2);
            }
            return;
        }
        let stripped = if let Some(len) = self.ends("ed") {
            if self.has_vowel(len) {
                self.b.truncate(len);
                true
            } else {
                false
            }
        } else if let Some(len) = self.ends("ing") {
            if self.has_vowel(len) {
                self.b.truncate(len);
                true
            } else {
                false
            }
        } else {
            false
        };
        if !stripped {
            return;
        }
        let len = self.b.len();
        if self.ends("at").is_some() || self.ends("bl").is_some() || self.ends("iz").is_some() {
            self.b.push(b'e');
        } else if self.double_consonant(len) && !matches!(self.b[len - 1], b'l' | b's' | b'z') {
            self.b.truncate(len - 1);
        } else if self.measure(len) == 1 && self.cvc(len) {
            self.b.push(b'e');
        }
    }

    fn step1c(&mut self) {
        if let Some(len) = self.ends("y") {
            if self.has_vowel(len) {
                self.b[len] = b'i';
            }
        }
    }

    fn step2(&mut self) {
        self.replace_first(
            &[
                ("ational", "ate"),
                ("tional", "tion"),
                ("enci", "ence"),
                ("anci", "ance"),
                ("izer", "ize"),
                ("abli", "able"),
                ("alli", "al"),
                ("entli", "ent"),
                ("eli", "e"),
                ("ousli", "ous"),
                ("ization", "ize"),
                ("ation", "ate"),
                ("ator", "ate"),
                ("alism", "al"),
                ("iveness", "ive"),
                ("fulness", "ful"),
                ("ousness", "ous"),
                ("aliti", "al"),
                ("iviti", "ive"),
                ("biliti", "ble"),
            ],
            0,
        );
    }

    fn step3(&mut self) {
        self.replace_first(
            &[
                ("icate", "ic"),
                ("ative", ""),
                ("alize", "al"),
                ("iciti", "ic"),
                ("ical", "ic"),
                ("ful", ""),
                ("ness", ""),
            ],
            0,
        );
    }

    fn step4(&mut self) {
        let rules: &[&str] = &[
            "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent",
            "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
        ];
        for &suf in rules {
            if let Some(len) = self.ends(suf) {
                if self.measure(len) > 1
                    && (suf != "ion" || (len > 0 && matches!(self.b[len - 1], b's' | b't')))
                {
                    self.b.truncate(len);
                }
                return;
            }
        }
    }

    fn step5a(&mut self) {
        if let Some(len) = self.ends("e") {
            let m = self.measure(len);
            if m > 1 || (m == 1 && !self.cvc(len)) {
                self.b.truncate(len);
            }
        }
    }

    fn step5b(&mut self) {
        let len = self.b.len();
        if self.measure(len) > 1 && self.double_consonant(len) && self.b[len - 1] == b'l' {
            self.b.truncate(len - 1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_porter_forms() {
        assert_eq!(stem("caresses"), "caress");
        assert_eq!(stem("ponies"), "poni");
        assert_eq!(stem("cats"), "cat");
        assert_eq!(stem("feed"), "feed");
        assert_eq!(stem("agreed"), "agre");
        assert_eq!(stem("plastered"), "plaster");
        assert_eq!(stem("motoring"), "motor");
        assert_eq!(stem("conflated"), "conflat");
        assert_eq!(stem("sized"), "size");
        assert_eq!(stem("hopping"), "hop");
        assert_eq!(stem("relational"), "relat");
        assert_eq!(stem("conditional"), "condit");
        assert_eq!(stem("triplicate"), "triplic");
        assert_eq!(stem("formative"), "form");
        assert_eq!(stem("revival"), "reviv");
        assert_eq!(stem("adjustment"), "adjust");
        assert_eq!(stem("probate"), "probat");
        assert_eq!(stem("controll"), "control");
        assert_eq!(stem("roll"), "roll");
    }

    #[test]
    fn dialogue_corpus_forms() {
        assert_eq!(stem("reinstalled"), "reinstal");
        assert_eq!(stem("reinstall"), "reinstal");
        assert_eq!(stem("moderately"), "moder");
        assert_eq!(stem("moderate"), "moder");
        assert_eq!(stem("houses"), "hous");
        assert_eq!(stem("house"), "hous");
        assert_eq!(stem("housing"), "hous");
        assert_eq!(stem("mode"), "mode");
        assert_eq!(stem("postcode"), "postcod");
        assert_eq!(stem("gastropub"), "gastropub");
        assert_eq!(stem("turkish"), "turkish");
        assert_eq!(stem("cheap"), "cheap");
        assert_eq!(stem("princes"), "princ");
        assert_eq!(stem("connected"), "connect");
        assert_eq!(stem("failing"), "fail");
    }

    #[test]
    fn short_and_non_ascii_words_untouched() {
        assert_eq!(stem("is"), "is");
        assert_eq!(stem("a"), "a");
        assert_eq!(stem("naïve"), "naïve");
        assert_eq!(stem("13.04"), "13.04");
    }
}
