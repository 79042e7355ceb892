use crate::event::WireEvent;

use super::{corrupt, CondenseError};

pub const DEFAULT_BOUND: u32 = 4;
/// Largest repetition count a single knot word can hold.
pub const MAX_KNOT_REPS: u64 = (1 << 24) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Event(WireEvent),
    /// The next `sz_w` events are repeated `n_rep` times.
    Knot { n_rep: u32, sz_w: u32 },
}

pub fn greedy_compress(p: &[WireEvent], bound: u32) -> Result<Vec<Token>, CondenseError> {
    greedy_compress_counted(p, bound).map(|(r, _)| r)
}

/// Also returns the number of element comparisons performed.
pub fn greedy_compress_counted(p: &[WireEvent], bound: u32) -> Result<(Vec<Token>, u64), CondenseError> {
    if !(2..=255).contains(&bound) {
        return Err(CondenseError::BadBound(bound));
    }
    let bound = bound as usize;
    let n = p.len();
    let mut r = Vec::with_capacity(n);
    let mut steps = 0u64;
    let mut pos_w = 0usize;
    while pos_w < n {
        let mut n_rep = 0usize;
        let mut sz_w = 1usize;
        while sz_w < bound {
            let pos_chk = pos_w + sz_w * (n_rep + 1);
            if pos_chk + sz_w > n && n_rep == 0 {
                break;
            }
            let mut j = 0;
            while j < sz_w && pos_chk + j < n {
                steps += 1;
                if p[pos_w + j] != p[pos_chk + j] {
                    break;
                }
                j += 1;
            }
            steps += 1;
            if j == sz_w && (n_rep as u64 + 2) <= MAX_KNOT_REPS {
                n_rep += 1;
            } else if n_rep == 0 {
                sz_w += 1;
            } else {
                r.push(Token::Knot { n_rep: (n_rep + 1) as u32, sz_w: sz_w as u32 });
                r.extend(p[pos_w..pos_w + sz_w].iter().map(|e| Token::Event(*e)));
                pos_w += sz_w * (n_rep + 1);
                n_rep = 0;
                sz_w = 1;
            }
        }
        if pos_w < n {
            r.push(Token::Event(p[pos_w]));
            pos_w += 1;
        }
    }
    Ok((r, steps))
}

/// Inverse of [`greedy_compress`]. Fails rather than exceeding `max_events`.
pub fn knot_expand(tokens: &[Token], max_events: u64) -> Result<Vec<WireEvent>, CondenseError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match tokens[i] {
            Token::Event(e) => {
                if out.len() as u64 >= max_events {
                    return Err(CondenseError::TooLarge(format!("more than {max_events} events")));
                }
                out.push(e);
                i += 1;
            }
            Token::Knot { n_rep, sz_w } => {
                if n_rep < 2 || sz_w == 0 {
                    return Err(corrupt(format!("degenerate knot <{n_rep},{sz_w}> at token {i}")));
                }
                let sz = sz_w as usize;
                let end = i.checked_add(1 + sz).filter(|&e| e <= tokens.len());
                let Some(end) = end else {
                    return Err(corrupt(format!("knot at token {i} runs past the end")));
                };
                let total = out.len() as u64 + n_rep as u64 * sz_w as u64;
                if total > max_events {
                    return Err(CondenseError::TooLarge(format!("more than {max_events} events")));
                }
                let start = out.len();
                for t in &tokens[i + 1..end] {
                    match t {
                        Token::Event(e) => out.push(*e),
                        Token::Knot { .. } => return Err(corrupt(format!("nested knot inside token {i}"))),
                    }
                }
                for _ in 1..n_rep {
                    out.extend_from_within(start..start + sz);
                }
                i = end;
            }
        }
    }
    Ok(out)
}

/// Expanded length without materialising the events.
pub(crate) fn expanded_len(tokens: &[Token]) -> Result<u64, CondenseError> {
    let mut n = 0u64;
    let mut i = 0;
    while i < tokens.len() {
        match tokens[i] {
            Token::Event(_) => {
                n += 1;
                i += 1;
            }
            Token::Knot { n_rep, sz_w } => {
                if n_rep < 2 || sz_w == 0 {
                    return Err(corrupt(format!("degenerate knot <{n_rep},{sz_w}> at token {i}")));
                }
                let end = i + 1 + sz_w as usize;
                if end > tokens.len() || tokens[i + 1..end].iter().any(|t| matches!(t, Token::Knot { .. })) {
                    return Err(corrupt(format!("bad knot span at token {i}")));
                }
                n += n_rep as u64 * sz_w as u64;
                i = end;
            }
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::addr;

    fn e(i: u64) -> WireEvent {
        WireEvent::Call(addr(i))
    }
    fn evs(v: &[u64]) -> Vec<WireEvent> {
        v.iter().map(|&i| e(i)).collect()
    }
    fn toks(spec: &[(u64, u64)]) -> Vec<Token> {
        // (0, x) = event x; (n, s) = knot
        spec.iter()
            .map(|&(a, b)| if a == 0 { Token::Event(e(b)) } else { Token::Knot { n_rep: a as u32, sz_w: b as u32 } })
            .collect()
    }

    #[test]
    fn first_example() {
        let p = evs(&[1, 2, 3, 4, 2, 3, 4, 5]);
        let r = greedy_compress(&p, 4).unwrap();
        assert_eq!(r, toks(&[(0, 1), (2, 3), (0, 2), (0, 3), (0, 4), (0, 5)]));
        assert_eq!(knot_expand(&r, u64::MAX).unwrap(), p);
    }

    #[test]
    fn greedy_prefers_short_windows() {
        let p = evs(&[1, 2, 1, 2, 3, 1, 2, 1, 2, 3]);
        let r = greedy_compress(&p, 4).unwrap();
        assert_eq!(r, toks(&[(2, 2), (0, 1), (0, 2), (0, 3), (2, 2), (0, 1), (0, 2), (0, 3)]));
        assert_eq!(knot_expand(&r, u64::MAX).unwrap(), p);
    }

    #[test]
    fn no_repetition_is_identity() {
        let p = evs(&[1, 2, 3, 4, 5, 6]);
        let r = greedy_compress(&p, 4).unwrap();
        assert!(r.iter().all(|t| matches!(t, Token::Event(_))));
        assert_eq!(r.len(), p.len());
        assert!(greedy_compress(&[], 4).unwrap().is_empty());
    }

    #[test]
    fn run_at_end_of_input_is_flushed() {
        let p = evs(&[7, 7, 7, 7, 7]);
        let r = greedy_compress(&p, 2).unwrap();
        assert_eq!(r, toks(&[(5, 1), (0, 7)]));
    }

    #[test]
    fn bound_range() {
        assert!(greedy_compress(&[], 1).is_err());
        assert!(greedy_compress(&[], 256).is_err());
    }

    #[test]
    fn malformed_knots() {
        assert!(knot_expand(&toks(&[(2, 3), (0, 1)]), u64::MAX).is_err());
        assert!(knot_expand(&toks(&[(1, 1), (0, 1)]), u64::MAX).is_err());
        assert!(knot_expand(&toks(&[(2, 2), (2, 1), (0, 1)]), u64::MAX).is_err());
        assert!(knot_expand(&toks(&[(1000, 1), (0, 1)]), 10).is_err());
    }
}
