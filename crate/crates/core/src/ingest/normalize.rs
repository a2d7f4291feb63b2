use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const EMOJI_TABLE: &str = include_str!("../../data/emoji_words.tsv");

/// Converts between Chinese scripts; plugged into the normalizer.
pub trait ScriptConverter: Send + Sync {
    fn name(&self) -> &str;
    fn convert(&self, text: &str) -> String;
}

/// Simplified to Hong Kong traditional characters.
#[derive(Debug, Default, Clone, Copy)]
pub struct HongKongConverter;

impl ScriptConverter for HongKongConverter {
    fn name(&self) -> &str {
        "zh-hk"
    }

    fn convert(&self, text: &str) -> String {
        zhconv::zhconv(text, zhconv::Variant::ZhHK)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityConverter;

impl ScriptConverter for IdentityConverter {
    fn name(&self) -> &str {
        "identity"
    }

    fn convert(&self, text: &str) -> String {
        text.to_string()
    }
}

/// Emoji sequence to replacement words.
#[derive(Debug, Clone)]
pub struct EmojiTable {
    words: HashMap<String, String>,
    longest: usize,
}

impl EmojiTable {
    /// Table shipped with the crate.
    pub fn bundled() -> &'static EmojiTable {
        static TABLE: OnceLock<EmojiTable> = OnceLock::new();
        TABLE.get_or_init(|| EmojiTable::parse(EMOJI_TABLE))
    }

    /// Parse `emoji<TAB>words` lines; `#` starts a comment line.
    pub fn parse(src: &str) -> EmojiTable {
        let mut words = HashMap::new();
        for line in src.lines() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((emoji, word)) = line.split_once('\t') {
                let key: String = emoji.chars().filter(|c| *c != '\u{FE0F}').collect();
                words.insert(key, word.trim().to_lowercase());
            }
        }
        let longest = words.keys().map(|k| k.chars().count()).max().unwrap_or(1);
        EmojiTable { words, longest }
    }

    pub fn get(&self, emoji: &str) -> Option<&str> {
        let key: String = emoji.chars().filter(|c| *c != '\u{FE0F}').collect();
        self.words.get(&key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Replace known emoji with their words and drop the rest.
    pub fn replace(&self, text: &str) -> String {
        let chars: Vec<char> = text.chars().filter(|c| *c != '\u{FE0F}').collect();
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        'outer: while i < chars.len() {
            if is_emoji_char(chars[i]) {
                let max = self.longest.min(chars.len() - i);
                for len in (1..=max).rev() {
                    let cand: String = chars[i..i + len].iter().collect();
                    if let Some(w) = self.words.get(&cand) {
                        out.push(' ');
                        out.push_str(w);
                        out.push(' ');
                        i += len;
                        continue 'outer;
                    }
                }
                if !is_emoji_modifier(chars[i]) {
                    log::warn!("dropping unknown emoji U+{:04X}", chars[i] as u32);
                }
                out.push(' ');
            } else {
                out.push(chars[i]);
            }
            i += 1;
        }
        out
    }
}

fn is_emoji_modifier(c: char) -> bool {
    matches!(c as u32,
        0x200D | 0xFE0E | 0xFE0F | 0x20E3 | 0x1F3FB..=0x1F3FF | 0xE0020..=0xE007F)
}

fn is_emoji_char(c: char) -> bool {
    is_emoji_modifier(c)
        || matches!(c as u32,
            0x1F000..=0x1FAFF | 0x2600..=0x27BF | 0x2B00..=0x2BFF | 0x2300..=0x23FF)
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32,
            0x00A1..=0x00BF
            | 0x2010..=0x2027
            | 0x2030..=0x205E
            | 0x3001..=0x3003
            | 0x3008..=0x3011
            | 0x3014..=0x301F
            | 0x30FB
            | 0xFE10..=0xFE19
            | 0xFE30..=0xFE6B
            | 0xFF01..=0xFF0F
            | 0xFF1A..=0xFF20
            | 0xFF3B..=0xFF40
            | 0xFF5B..=0xFF65)
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[^<>]*>").unwrap())
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:https?://|www\.)[^\s<>]+").unwrap())
}

fn entity_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"&(#[0-9]{1,7}|#[xX][0-9a-fA-F]{1,6}|[a-zA-Z]{2,6});").unwrap())
}

fn decode_entities(text: &str) -> String {
    entity_re()
        .replace_all(text, |caps: &regex::Captures| {
            let body = &caps[1];
            let decoded = if let Some(hex) = body.strip_prefix("#x").or_else(|| body.strip_prefix("#X")) {
                u32::from_str_radix(hex, 16).ok().and_then(char::from_u32)
            } else if let Some(dec) = body.strip_prefix('#') {
                dec.parse::<u32>().ok().and_then(char::from_u32)
            } else {
                match body {
                    "amp" => Some('&'),
                    "lt" => Some('<'),
                    "gt" => Some('>'),
                    "quot" => Some('"'),
                    "apos" => Some('\''),
                    "nbsp" => Some(' '),
                    _ => None,
                }
            };
            decoded.map(String::from).unwrap_or_else(|| caps[0].to_string())
        })
        .into_owned()
}

fn until_fixpoint(mut text: String, f: impl Fn(&str) -> String) -> String {
    loop {
        let next = f(&text);
        if next == text {
            return next;
        }
        text = next;
    }
}

/// Which instances lose their punctuation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PunctuationPolicy {
    All,
    #[default]
    CommentsOnly,
    None,
}

/// Dataset-level cleaning options, recorded in provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    pub punctuation: PunctuationPolicy,
    pub replace_emoji: bool,
    /// Name of the script converter, or `None` to keep characters as is.
    pub script: Option<String>,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions {
            punctuation: PunctuationPolicy::CommentsOnly,
            replace_emoji: true,
            script: Some("zh-hk".to_string()),
        }
    }
}

impl NormalizeOptions {
    pub fn text_options(&self, is_post: bool) -> TextOptions {
        TextOptions {
            strip_punctuation: match self.punctuation {
                PunctuationPolicy::All => true,
                PunctuationPolicy::CommentsOnly => !is_post,
                PunctuationPolicy::None => false,
            },
            replace_emoji: self.replace_emoji,
            convert_script: self.script.is_some(),
        }
    }
}

/// Per-text cleaning switches. HTML tags and links are always removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextOptions {
    pub strip_punctuation: bool,
    pub replace_emoji: bool,
    pub convert_script: bool,
}

impl Default for TextOptions {
    fn default() -> Self {
        TextOptions { strip_punctuation: true, replace_emoji: true, convert_script: true }
    }
}

/// Clean one text with the bundled emoji table and the Hong Kong converter.
pub fn normalize_text(raw: &str, opts: &TextOptions) -> String {
    clean(raw, opts, EmojiTable::bundled(), &HongKongConverter)
}

fn clean(raw: &str, opts: &TextOptions, emoji: &EmojiTable, conv: &dyn ScriptConverter) -> String {
    until_fixpoint(raw.to_string(), |text| {
        let mut t = if opts.replace_emoji { emoji.replace(text) } else { text.to_string() };
        t = until_fixpoint(t, decode_entities);
        t = until_fixpoint(t, |s| tag_re().replace_all(s, " ").into_owned());
        t = url_re().replace_all(&t, " ").into_owned();
        if opts.convert_script {
            t = conv.convert(&t);
        }
        if opts.strip_punctuation {
            t = t.chars().map(|c| if is_punctuation(c) { ' ' } else { c }).collect();
        }
        t.split_whitespace().collect::<Vec<_>>().join(" ")
    })
}

/// Cleaning pipeline with pluggable script conversion.
pub struct Normalizer {
    options: NormalizeOptions,
    emoji: EmojiTable,
    converter: Box<dyn ScriptConverter>,
}

impl Normalizer {
    pub fn new(options: NormalizeOptions) -> Normalizer {
        let converter: Box<dyn ScriptConverter> = match options.script.as_deref() {
            Some("zh-hk") => Box::new(HongKongConverter),
            Some(other) => {
                log::warn!("unknown script converter `{other}`, leaving text unconverted");
                Box::new(IdentityConverter)
            }
            None => Box::new(IdentityConverter),
        };
        Normalizer { options, emoji: EmojiTable::bundled().clone(), converter }
    }

    pub fn with_converter(mut self, converter: Box<dyn ScriptConverter>) -> Normalizer {
        self.options.script = Some(converter.name().to_string());
        self.converter = converter;
        self
    }

    pub fn with_emoji_table(mut self, table: EmojiTable) -> Normalizer {
        self.emoji = table;
        self
    }

    pub fn options(&self) -> &NormalizeOptions {
        &self.options
    }

    pub fn normalize(&self, raw: &str, is_post: bool) -> String {
        self.normalize_with(raw, &self.options.text_options(is_post))
    }

    pub fn normalize_with(&self, raw: &str, opts: &TextOptions) -> String {
        clean(raw, opts, &self.emoji, self.converter.as_ref())
    }
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer::new(NormalizeOptions::default())
    }
}
