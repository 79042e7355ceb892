use std::io::Read;

use super::greedy::expanded_len;
use super::{corrupt, decode_words, CondenseError, Token};

pub const MAGIC: [u8; 4] = *b"RCFA";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compressor {
    Store,
    Zstd,
}

impl Compressor {
    pub fn id(self) -> u8 {
        match self {
            Compressor::Store => 0,
            Compressor::Zstd => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self, CondenseError> {
        match id {
            0 => Ok(Compressor::Store),
            1 => Ok(Compressor::Zstd),
            other => Err(CondenseError::UnknownCompressor(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportHeader {
    pub version: u16,
    pub compressor: Compressor,
    pub bound: u8,
    pub event_count_folded: u64,
    pub word_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub header: ReportHeader,
    pub words: Vec<u64>,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, Copy)]
pub struct UnsealLimits {
    pub max_words: u64,
    pub max_events: u64,
}

impl Default for UnsealLimits {
    fn default() -> Self {
        UnsealLimits { max_words: 1 << 28, max_events: 1 << 32 }
    }
}

pub fn seal(words: &[u64], compressor: Compressor, bound: u8, event_count_folded: u64) -> Vec<u8> {
    let mut raw = Vec::with_capacity(words.len() * 8);
    for w in words {
        raw.extend_from_slice(&w.to_le_bytes());
    }
    let payload = match compressor {
        Compressor::Store => raw,
        Compressor::Zstd => zstd::stream::encode_all(&raw[..], 3).expect("in-memory zstd encoding"),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(compressor.id());
    out.push(bound);
    out.extend_from_slice(&event_count_folded.to_le_bytes());
    out.extend_from_slice(&(words.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Parses and checks a report. The declared folded event count must match
/// the knots, so a later [`super::knot_expand`] cannot blow up.
pub fn unseal(bytes: &[u8], limits: &UnsealLimits) -> Result<Report, CondenseError> {
    if bytes.len() < HEADER_LEN {
        return Err(corrupt("truncated header"));
    }
    if bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let compressor = Compressor::from_id(bytes[6])?;
    let bound = bytes[7];
    let event_count_folded = u64_at(8);
    let word_count = u64_at(16);
    if word_count > limits.max_words {
        return Err(CondenseError::TooLarge(format!("{word_count} words")));
    }
    if event_count_folded > limits.max_events {
        return Err(CondenseError::TooLarge(format!("{event_count_folded} events")));
    }
    let want = word_count.saturating_mul(8) as usize;
    let payload = &bytes[HEADER_LEN..];
    let raw: Vec<u8> = match compressor {
        Compressor::Store => {
            if payload.len() != want {
                return Err(corrupt(format!("payload is {} bytes, header says {want}", payload.len())));
            }
            payload.to_vec()
        }
        Compressor::Zstd => {
            let dec = zstd::stream::read::Decoder::new(payload).map_err(|e| corrupt(e.to_string()))?;
            let mut buf = Vec::with_capacity(want.min(1 << 24));
            dec.take(want as u64 + 1).read_to_end(&mut buf).map_err(|e| corrupt(e.to_string()))?;
            if buf.len() != want {
                return Err(corrupt(format!("payload inflates to {} bytes, header says {want}", buf.len())));
            }
            buf
        }
    };
    let words: Vec<u64> = raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    let tokens = decode_words(&words)?;
    let n = expanded_len(&tokens)?;
    if n != event_count_folded {
        return Err(corrupt(format!("knots expand to {n} events, header says {event_count_folded}")));
    }
    Ok(Report {
        header: ReportHeader { version, compressor, bound, event_count_folded, word_count },
        words,
        tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::addr;
    use crate::condenser::encode_tokens;
    use crate::event::WireEvent;

    fn sample() -> (Vec<Token>, Vec<u64>) {
        let t = vec![
            Token::Knot { n_rep: 4, sz_w: 1 },
            Token::Event(WireEvent::Pair(addr(0x10), addr(0x20))),
            Token::Event(WireEvent::Call(addr(0x30))),
        ];
        let w = encode_tokens(&t);
        (t, w)
    }

    #[test]
    fn round_trip_both_compressors() {
        let (t, w) = sample();
        for c in [Compressor::Store, Compressor::Zstd] {
            let bytes = seal(&w, c, 4, 5);
            let r = unseal(&bytes, &UnsealLimits::default()).unwrap();
            assert_eq!(r.words, w);
            assert_eq!(r.tokens, t);
            assert_eq!(r.header.bound, 4);
            assert_eq!(r.header.compressor, c);
        }
    }

    #[test]
    fn empty_report() {
        let bytes = seal(&[], Compressor::Store, 4, 0);
        assert_eq!(bytes.len(), HEADER_LEN);
        let r = unseal(&bytes, &UnsealLimits::default()).unwrap();
        assert_eq!(r.header.word_count, 0);
        assert!(r.words.is_empty());
    }

    #[test]
    fn rejects_corruption() {
        let (_, w) = sample();
        let good = seal(&w, Compressor::Store, 4, 5);
        let lim = UnsealLimits::default();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(unseal(&bad, &lim).is_err());
        let mut bad = good.clone();
        bad[6] = 9;
        assert_eq!(unseal(&bad, &lim).unwrap_err(), CondenseError::UnknownCompressor(9));
        assert!(unseal(&good[..good.len() - 1], &lim).is_err());
        assert!(unseal(&seal(&w, Compressor::Store, 4, 6), &lim).is_err());
        let mut bad = good.clone();
        bad[16] = 0xff;
        assert!(unseal(&bad, &lim).is_err());
        assert!(unseal(&good, &UnsealLimits { max_words: 10, max_events: 4 }).is_err());
    }
}
