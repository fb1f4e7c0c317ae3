//! Sentence tokenizers for the text tower.
//!
//! [`HashTokenizer`] is a word-level hashing tokenizer used with seeded toy
//! weights. [`ClipBpeTokenizer`] reproduces the byte-level BPE used by the
//! pretrained dual encoder and needs its merges file
//! (`bpe_simple_vocab_16e6.txt`, uncompressed).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::fnv1a64;

pub trait Tokenizer: Send + Sync {
    /// Token ids of `text` without start/end markers.
    fn encode(&self, text: &str) -> Vec<u32>;
    fn sot(&self) -> u32;
    fn eot(&self) -> u32;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[derive(Default)]
pub enum TokenizerConfig {
    #[default]
    Hash,
    Bpe { merges: PathBuf },
}


impl TokenizerConfig {
    pub fn build(&self, vocab: usize) -> Result<Box<dyn Tokenizer>> {
        match self {
            TokenizerConfig::Hash => Ok(Box::new(HashTokenizer::new(vocab)?)),
            TokenizerConfig::Bpe { merges } => {
                let t = ClipBpeTokenizer::from_file(merges)?;
                if t.vocab_size() > vocab {
                    return Err(Error::Config(format!(
                        "BPE vocabulary has {} entries but the text tower has {vocab}",
                        t.vocab_size()
                    )));
                }
                Ok(Box::new(t))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedText {
    /// Exactly `context` ids, zero padded after the end marker.
    pub ids: Vec<u32>,
    pub eot_index: usize,
    pub truncated: bool,
}

/// `[sot] body [eot]`, truncating the body (with a warning) to fit `context`.
pub fn tokenize(tok: &dyn Tokenizer, text: &str, context: usize) -> TokenizedText {
    let mut body = tok.encode(text);
    let truncated = body.len() + 2 > context;
    if truncated {
        log::warn!("prompt truncated to {context} tokens: {text:?}");
        body.truncate(context.saturating_sub(2));
    }
    let mut ids = Vec::with_capacity(context);
    ids.push(tok.sot());
    ids.extend(body);
    ids.push(tok.eot());
    let eot_index = ids.len() - 1;
    ids.resize(context, 0);
    TokenizedText {
        ids,
        eot_index,
        truncated,
    }
}

/// Lower-cased alphanumeric words hashed into `vocab - 2` buckets; the last
/// two ids are the start and end markers.
#[derive(Clone, Debug)]
pub struct HashTokenizer {
    vocab: u32,
}

impl HashTokenizer {
    pub fn new(vocab: usize) -> Result<Self> {
        if vocab < 3 {
            return Err(Error::Config(format!("vocabulary of {vocab} is too small")));
        }
        Ok(Self { vocab: vocab as u32 })
    }
}

impl Tokenizer for HashTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| (fnv1a64(w.as_bytes()) % u64::from(self.vocab - 2)) as u32)
            .collect()
    }

    fn sot(&self) -> u32 {
        self.vocab - 2
    }

    fn eot(&self) -> u32 {
        self.vocab - 1
    }
}

fn bytes_to_unicode() -> [char; 256] {
    let mut printable: Vec<u32> = (u32::from('!')..=u32::from('~')).collect();
    printable.extend(0xA1..=0xAC);
    printable.extend(0xAE..=0xFF);
    let mut table = ['\0'; 256];
    let mut extra = 0;
    for b in 0..256u32 {
        let c = if printable.contains(&b) {
            b
        } else {
            extra += 1;
            255 + extra
        };
        table[b as usize] = char::from_u32(c).expect("valid code point");
    }
    table
}

const SOT_TOKEN: &str = "<|startoftext|>";
const EOT_TOKEN: &str = "<|endoftext|>";
/// Merges used by the reference vocabulary (49152 - 256 - 2).
const MERGE_COUNT: usize = 48_894;

pub struct ClipBpeTokenizer {
    encoder: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    byte_encoder: [char; 256],
    pattern: Regex,
    cache: Mutex<HashMap<String, Vec<String>>>,
}

impl ClipBpeTokenizer {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_merges(&text)
    }

    /// Build from merges-file contents: a header line, then one
    /// space-separated pair per line.
    pub fn from_merges(text: &str) -> Result<Self> {
        let merges: Vec<(String, String)> = text
            .lines()
            .skip(1)
            .take(MERGE_COUNT)
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let mut it = l.split_whitespace();
                match (it.next(), it.next()) {
                    (Some(a), Some(b)) => Ok((a.to_string(), b.to_string())),
                    _ => Err(Error::Config(format!("malformed merge line {l:?}"))),
                }
            })
            .collect::<Result<_>>()?;
        let byte_encoder = bytes_to_unicode();
        let mut vocab: Vec<String> = byte_encoder.iter().map(|c| c.to_string()).collect();
        vocab.extend(byte_encoder.iter().map(|c| format!("{c}</w>")));
        vocab.extend(merges.iter().map(|(a, b)| format!("{a}{b}")));
        vocab.push(SOT_TOKEN.to_string());
        vocab.push(EOT_TOKEN.to_string());
        let encoder = vocab.into_iter().enumerate().map(|(i, v)| (v, i as u32)).collect();
        let ranks = merges.into_iter().enumerate().map(|(i, m)| (m, i)).collect();
        let pattern = Regex::new(
            r"(?i)<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+",
        )
        .expect("valid pattern");
        Ok(Self {
            encoder,
            ranks,
            byte_encoder,
            pattern,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.encoder.len()
    }

    fn bpe(&self, token: &str) -> Vec<String> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(token) {
            return hit.clone();
        }
        let chars: Vec<char> = token.chars().collect();
        let mut word: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
        if let Some(last) = word.last_mut() {
            last.push_str("</w>");
        }
        loop {
            let best = word
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((_, _)) = best else { break };
            let (first, second) = {
                let i = best.unwrap().1;
                (word[i].clone(), word[i + 1].clone())
            };
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == first && word[i + 1] == second {
                    merged.push(format!("{first}{second}"));
                    i += 2;
                } else {
                    merged.push(word[i].clone());
                    i += 1;
                }
            }
            word = merged;
            if word.len() == 1 {
                break;
            }
        }
        self.cache
            .lock()
            .expect("cache lock")
            .insert(token.to_string(), word.clone());
        word
    }
}

impl Tokenizer for ClipBpeTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        let cleaned = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let mut ids = Vec::new();
        for m in self.pattern.find_iter(&cleaned) {
            let mapped: String = m.as_str().bytes().map(|b| self.byte_encoder[b as usize]).collect();
            for piece in self.bpe(&mapped) {
                if let Some(&id) = self.encoder.get(&piece) {
                    ids.push(id);
                }
            }
        }
        ids
    }

    fn sot(&self) -> u32 {
        self.encoder[SOT_TOKEN]
    }

    fn eot(&self) -> u32 {
        self.encoder[EOT_TOKEN]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tokenizer_is_deterministic_and_case_folded() {
        let t = HashTokenizer::new(1000).unwrap();
        assert_eq!(t.encode("Red HAT"), t.encode("red hat"));
        assert_eq!(t.encode("a, b"), t.encode("a b"));
        assert!(t.encode("some words here").iter().all(|&i| i < 998));
    }

    #[test]
    fn tokenize_pads_and_marks_eot() {
        let t = HashTokenizer::new(100).unwrap();
        let tt = tokenize(&t, "one two three", 8);
        assert_eq!(tt.ids.len(), 8);
        assert_eq!(tt.ids[0], 98);
        assert_eq!(tt.eot_index, 4);
        assert_eq!(tt.ids[4], 99);
        assert!(!tt.truncated);
    }

    #[test]
    fn long_prompts_truncate() {
        let t = HashTokenizer::new(100).unwrap();
        let text = vec!["word"; 100].join(" ");
        let tt = tokenize(&t, &text, 77);
        assert!(tt.truncated);
        assert_eq!(tt.eot_index, 76);
        assert_eq!(tt.ids[76], 99);
    }

    #[test]
    fn byte_table_is_a_bijection() {
        let table = bytes_to_unicode();
        let mut chars: Vec<char> = table.to_vec();
        chars.sort();
        chars.dedup();
        assert_eq!(chars.len(), 256);
        assert_eq!(table[b'a' as usize], 'a');
        assert_eq!(table[b' ' as usize], 'Ġ');
    }

    #[test]
    fn bpe_applies_merges_by_rank() {
        let merges = "#version: 0.2\nh a\nt </w>\nha t</w>\n";
        let t = ClipBpeTokenizer::from_merges(merges).unwrap();
        let ids = t.encode("hat");
        assert_eq!(ids, vec![t.encoder["hat</w>"]]);
        let ids = t.encode("ah");
        assert_eq!(ids, vec![t.encoder["a"], t.encoder["h</w>"]]);
        assert_eq!(t.eot(), t.sot() + 1);
    }
}
