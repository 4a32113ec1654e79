use super::Family;

/// A known upstream representation and its pooled embedding width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Representation {
    pub name: &'static str,
    /// Short tag used in result tables (`W2`, `SS`, ...).
    pub short: &'static str,
    pub family: Family,
    pub dim: usize,
}

pub const REGISTRY: [Representation; 8] = [
    Representation { name: "WavLM", short: "W", family: Family::Rlr, dim: 768 },
    Representation { name: "Wav2vec2", short: "W2", family: Family::Rlr, dim: 768 },
    Representation { name: "HuBERT", short: "H", family: Family::Rlr, dim: 768 },
    Representation { name: "x-vector", short: "XE", family: Family::Rlr, dim: 512 },
    Representation { name: "EnCodec", short: "E", family: Family::Cbr, dim: 375 },
    Representation { name: "DAC", short: "D", family: Family::Cbr, dim: 251 },
    Representation { name: "SpeechTokenizer", short: "ST", family: Family::Cbr, dim: 250 },
    Representation { name: "Soundstream", short: "SS", family: Family::Cbr, dim: 256 },
];

fn canonical(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Case- and punctuation-insensitive lookup by full name or short tag.
pub fn lookup_representation(name: &str) -> Option<&'static Representation> {
    let key = canonical(name);
    REGISTRY
        .iter()
        .find(|r| canonical(r.name) == key || canonical(r.short) == key)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_dims() {
        assert_eq!(lookup_representation("wavlm").unwrap().dim, 768);
        assert_eq!(lookup_representation("X-Vector").unwrap().dim, 512);
        assert_eq!(lookup_representation("SS").unwrap().name, "Soundstream");
        assert_eq!(lookup_representation("speech_tokenizer").unwrap().dim, 250);
        assert_eq!(lookup_representation("encodec").unwrap().family, Family::Cbr);
        assert!(lookup_representation("whisper").is_none());
    }
}
