use std::collections::BTreeMap;

use thiserror::Error;

/// Per-BOUND (compression rate R, compression time in seconds) for one program.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramMeasurements {
    pub program: String,
    pub by_bound: BTreeMap<u32, (f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundChoice {
    pub bound: u32,
    /// Average per-time-unit compression gain for every candidate.
    pub averages: BTreeMap<u32, f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuneError {
    #[error("no programs")]
    NoPrograms,
    #[error("need at least two candidate BOUNDs")]
    TooFewCandidates,
    #[error("{program}: candidates differ from the first program")]
    MismatchedCandidates { program: String },
    #[error("{program}, BOUND {bound}: compression time must be positive")]
    ZeroTime { program: String, bound: u32 },
    #[error("{program}, BOUND {bound}: compression rate {r} is below 1")]
    BadRate { program: String, bound: u32, r: f64 },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

/// Reads lines of `<program> (<bound> <R> <T>)+`; `#` starts a comment.
pub fn parse_measurements(text: &str) -> Result<Vec<ProgramMeasurements>, TuneError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let mut toks = line.split_whitespace();
        let Some(program) = toks.next() else { continue };
        let rest: Vec<&str> = toks.collect();
        let err = |msg: String| TuneError::Syntax { line: i + 1, msg };
        if rest.is_empty() || rest.len() % 3 != 0 {
            return Err(err("expected groups of `bound R T`".into()));
        }
        let mut by_bound = BTreeMap::new();
        for g in rest.chunks(3) {
            let b: u32 = g[0].parse().map_err(|_| err(format!("bad bound `{}`", g[0])))?;
            let r: f64 = g[1].parse().map_err(|_| err(format!("bad rate `{}`", g[1])))?;
            let t: f64 = g[2].parse().map_err(|_| err(format!("bad time `{}`", g[2])))?;
            if by_bound.insert(b, (r, t)).is_some() {
                return Err(err(format!("bound {b} listed twice")));
            }
        }
        out.push(ProgramMeasurements { program: program.to_string(), by_bound });
    }
    Ok(out)
}

/// Picks the BOUND maximising the mean of (1 - 1/R) / T over the programs.
/// Ties go to the smaller BOUND.
pub fn tune_bound(data: &[ProgramMeasurements]) -> Result<BoundChoice, TuneError> {
    let first = data.first().ok_or(TuneError::NoPrograms)?;
    let candidates: Vec<u32> = first.by_bound.keys().copied().collect();
    if candidates.len() < 2 {
        return Err(TuneError::TooFewCandidates);
    }
    let mut sums: BTreeMap<u32, f64> = candidates.iter().map(|&b| (b, 0.0)).collect();
    for p in data {
        if !p.by_bound.keys().copied().eq(candidates.iter().copied()) {
            return Err(TuneError::MismatchedCandidates { program: p.program.clone() });
        }
        for (&b, &(r, t)) in &p.by_bound {
            if !(t > 0.0) {
                return Err(TuneError::ZeroTime { program: p.program.clone(), bound: b });
            }
            if !(r >= 1.0) {
                return Err(TuneError::BadRate { program: p.program.clone(), bound: b, r });
            }
            *sums.get_mut(&b).unwrap() += (1.0 - 1.0 / r) / t;
        }
    }
    let averages: BTreeMap<u32, f64> = sums.into_iter().map(|(b, s)| (b, s / data.len() as f64)).collect();
    let mut best = candidates[0];
    for &b in &candidates[1..] {
        if averages[&b] > averages[&best] {
            best = b;
        }
    }
    Ok(BoundChoice { bound: best, averages })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prog(name: &str, rows: &[(u32, f64, f64)]) -> ProgramMeasurements {
        ProgramMeasurements { program: name.into(), by_bound: rows.iter().map(|&(b, r, t)| (b, (r, t))).collect() }
    }

    #[test]
    fn no_gain_ties_to_smallest() {
        let c = tune_bound(&[prog("a", &[(4, 1.0, 1.0), (8, 1.0, 2.0), (16, 1.0, 3.0)])]).unwrap();
        assert_eq!(c.bound, 4);
        assert!(c.averages.values().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(tune_bound(&[]).unwrap_err(), TuneError::NoPrograms);
        assert_eq!(tune_bound(&[prog("a", &[(4, 1.0, 1.0)])]).unwrap_err(), TuneError::TooFewCandidates);
        assert!(matches!(
            tune_bound(&[prog("a", &[(4, 1.5, 0.0), (8, 1.0, 1.0)])]),
            Err(TuneError::ZeroTime { .. })
        ));
        assert!(matches!(
            tune_bound(&[prog("a", &[(4, 1.5, 1.0), (8, 1.0, 1.0)]), prog("b", &[(4, 1.5, 1.0)])]),
            Err(TuneError::MismatchedCandidates { .. })
        ));
    }
}
