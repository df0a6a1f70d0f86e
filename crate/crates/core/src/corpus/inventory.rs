//! Token inventory: 40 phonemes, 4 punctuation marks and a word boundary.

/// Articulatory class of a token, which decides how it is rendered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenClass {
    Vowel,
    VoicedConsonant,
    Unvoiced,
    Punctuation,
    WordBoundary,
}

pub const NUM_PHONEMES: usize = 40;
pub const COMMA: u8 = 40;
pub const PERIOD: u8 = 41;
pub const QUESTION: u8 = 42;
pub const EXCLAMATION: u8 = 43;
pub const WORD_BOUNDARY: u8 = 44;
pub const VOCAB_SIZE: usize = 45;

pub(crate) struct Phone {
    pub symbol: &'static str,
    pub class: TokenClass,
    /// Formant frequencies (Hz) and relative gains for voiced sounds; for
    /// unvoiced sounds the first entry is the noise band center.
    pub formants: [(f64, f64); 3],
    pub gain: f64,
}

const fn v(symbol: &'static str, f1: f64, f2: f64, f3: f64) -> Phone {
    Phone { symbol, class: TokenClass::Vowel, formants: [(f1, 1.0), (f2, 0.6), (f3, 0.3)], gain: 1.0 }
}

const fn c(symbol: &'static str, f1: f64, f2: f64, f3: f64, gain: f64) -> Phone {
    Phone {
        symbol,
        class: TokenClass::VoicedConsonant,
        formants: [(f1, 1.0), (f2, 0.4), (f3, 0.2)],
        gain,
    }
}

const fn u(symbol: &'static str, center: f64, width: f64, gain: f64) -> Phone {
    Phone { symbol, class: TokenClass::Unvoiced, formants: [(center, width), (0.0, 0.0), (0.0, 0.0)], gain }
}

pub(crate) const PHONES: [Phone; NUM_PHONEMES] = [
    v("AA", 730.0, 1090.0, 2440.0),
    v("AE", 660.0, 1720.0, 2410.0),
    v("AH", 640.0, 1190.0, 2390.0),
    v("AO", 570.0, 840.0, 2410.0),
    v("AW", 680.0, 1060.0, 2380.0),
    v("AX", 500.0, 1500.0, 2500.0),
    v("AY", 660.0, 1500.0, 2500.0),
    v("EH", 530.0, 1840.0, 2480.0),
    v("ER", 490.0, 1350.0, 1690.0),
    v("EY", 480.0, 2000.0, 2600.0),
    v("IH", 390.0, 1990.0, 2550.0),
    v("IY", 270.0, 2290.0, 3010.0),
    v("OW", 450.0, 900.0, 2400.0),
    v("OY", 550.0, 960.0, 2400.0),
    v("UH", 440.0, 1020.0, 2240.0),
    v("UW", 300.0, 870.0, 2240.0),
    c("B", 250.0, 800.0, 2200.0, 0.35),
    c("D", 250.0, 1700.0, 2600.0, 0.35),
    c("G", 250.0, 1500.0, 2300.0, 0.35),
    c("JH", 280.0, 1900.0, 2700.0, 0.4),
    c("DH", 300.0, 1400.0, 2600.0, 0.4),
    c("V", 280.0, 1100.0, 2300.0, 0.4),
    c("Z", 300.0, 1800.0, 2700.0, 0.4),
    c("ZH", 300.0, 1900.0, 2500.0, 0.4),
    c("M", 280.0, 1000.0, 2200.0, 0.5),
    c("N", 280.0, 1500.0, 2600.0, 0.5),
    c("NG", 280.0, 2000.0, 2700.0, 0.5),
    c("L", 360.0, 1100.0, 2700.0, 0.6),
    c("R", 350.0, 1200.0, 1600.0, 0.6),
    c("W", 300.0, 700.0, 2200.0, 0.6),
    c("Y", 280.0, 2200.0, 3000.0, 0.6),
    u("P", 1200.0, 800.0, 0.12),
    u("T", 4000.0, 1500.0, 0.15),
    u("K", 2500.0, 1000.0, 0.15),
    u("CH", 3500.0, 1200.0, 0.2),
    u("TH", 6000.0, 3000.0, 0.1),
    u("F", 5000.0, 3000.0, 0.1),
    u("S", 6500.0, 1500.0, 0.22),
    u("SH", 3200.0, 1000.0, 0.22),
    u("HH", 1500.0, 1500.0, 0.1),
];

pub fn token_class(id: u8) -> Option<TokenClass> {
    match id as usize {
        i if i < NUM_PHONEMES => Some(PHONES[i].class),
        40..=43 => Some(TokenClass::Punctuation),
        44 => Some(TokenClass::WordBoundary),
        _ => None,
    }
}

pub fn token_symbol(id: u8) -> Option<&'static str> {
    match id as usize {
        i if i < NUM_PHONEMES => Some(PHONES[i].symbol),
        40 => Some(","),
        41 => Some("."),
        42 => Some("?"),
        43 => Some("!"),
        44 => Some("|"),
        _ => None,
    }
}

/// Whether the token is rendered with a periodic source.
pub fn is_voiced(id: u8) -> bool {
    matches!(token_class(id), Some(TokenClass::Vowel | TokenClass::VoicedConsonant))
}

pub fn is_phoneme(id: u8) -> bool {
    (id as usize) < NUM_PHONEMES
}

pub fn ids_by_class(class: TokenClass) -> impl Iterator<Item = u8> {
    (0..VOCAB_SIZE as u8).filter(move |&i| token_class(i) == Some(class))
}
