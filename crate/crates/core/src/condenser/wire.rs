use crate::address::Address;
use crate::event::WireEvent;

use super::{corrupt, CondenseError, Token};

pub const TAG_SRC: u8 = 0x00;
pub const TAG_DST: u8 = 0x01;
pub const TAG_CALL: u8 = 0x02;
pub const TAG_KNOT: u8 = 0x03;

const ADDR_MASK: u64 = (1 << 48) - 1;

fn tagged(tag: u8, v: u64) -> u64 {
    ((tag as u64) << 56) | v
}

pub fn encode_tokens(tokens: &[Token]) -> Vec<u64> {
    let mut w = Vec::with_capacity(tokens.len() * 2);
    for t in tokens {
        match *t {
            Token::Event(WireEvent::Pair(s, d)) => {
                w.push(tagged(TAG_SRC, s.get()));
                w.push(tagged(TAG_DST, d.get()));
            }
            Token::Event(WireEvent::Call(s)) => w.push(tagged(TAG_CALL, s.get())),
            Token::Knot { n_rep, sz_w } => w.push(tagged(TAG_KNOT, ((n_rep as u64) << 32) | sz_w as u64)),
        }
    }
    w
}

fn address(word: u64, at: usize) -> Result<Address, CondenseError> {
    if (word >> 48) & 0xff != 0 {
        return Err(corrupt(format!("word {at}: reserved bits set")));
    }
    Address::new(word & ADDR_MASK).map_err(|e| corrupt(format!("word {at}: {e}")))
}

pub fn decode_words(words: &[u64]) -> Result<Vec<Token>, CondenseError> {
    let mut out = Vec::with_capacity(words.len());
    let mut i = 0;
    while i < words.len() {
        let w = words[i];
        match (w >> 56) as u8 {
            TAG_SRC => {
                let Some(&d) = words.get(i + 1) else {
                    return Err(corrupt(format!("word {i}: source without destination")));
                };
                if (d >> 56) as u8 != TAG_DST {
                    return Err(corrupt(format!("word {}: expected destination", i + 1)));
                }
                out.push(Token::Event(WireEvent::Pair(address(w, i)?, address(d, i + 1)?)));
                i += 2;
            }
            TAG_CALL => {
                out.push(Token::Event(WireEvent::Call(address(w, i)?)));
                i += 1;
            }
            TAG_KNOT => {
                let n_rep = ((w >> 32) & 0xff_ffff) as u32;
                let sz_w = w as u32;
                out.push(Token::Knot { n_rep, sz_w });
                i += 1;
            }
            tag => return Err(corrupt(format!("word {i}: unknown tag {tag:#04x}"))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::addr;

    #[test]
    fn round_trip_and_layout() {
        let t = vec![
            Token::Knot { n_rep: 3, sz_w: 2 },
            Token::Event(WireEvent::Pair(addr(0x10), addr(0x20))),
            Token::Event(WireEvent::Call(addr(0x406416))),
        ];
        let w = encode_tokens(&t);
        assert_eq!(w, vec![0x0300_0003_0000_0002, 0x10, 0x0100_0000_0000_0020, 0x0200_0000_0040_6416]);
        assert_eq!(decode_words(&w).unwrap(), t);
    }

    #[test]
    fn rejects_bad_words() {
        assert!(decode_words(&[0x10]).is_err());
        assert!(decode_words(&[0x10, 0x20]).is_err());
        assert!(decode_words(&[0x0100_0000_0000_0020]).is_err());
        assert!(decode_words(&[0x0400_0000_0000_0001]).is_err());
        assert!(decode_words(&[0x0200_0000_0000_0000]).is_err());
        assert!(decode_words(&[0x0201_0000_0000_0001]).is_err());
    }
}
