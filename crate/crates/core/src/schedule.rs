//! Execution schedules: the branch decisions that stand in for program input.
//!
//! Text form, whitespace separated, `#` starts a comment:
//!
//! ```text
//! take 110 120
//! repeat 100 { take 110 120 take 120 130 }
//! take 110 160
//! ```

use std::fmt;

use thiserror::Error;

use crate::address::Address;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleItem {
    /// At `src`, continue with `dst`.
    Take(Address, Address),
    Repeat(u64, Vec<ScheduleItem>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schedule {
    pub items: Vec<ScheduleItem>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("schedule token {index}: {msg}")]
    Syntax { index: usize, msg: String },
}

impl Schedule {
    pub fn new() -> Self {
        Schedule::default()
    }

    pub fn take(&mut self, src: Address, dst: Address) -> &mut Self {
        self.items.push(ScheduleItem::Take(src, dst));
        self
    }

    pub fn repeat(&mut self, n: u64, body: Schedule) -> &mut Self {
        self.items.push(ScheduleItem::Repeat(n, body.items));
        self
    }

    /// Number of decisions after expanding repetitions (saturating).
    pub fn decision_count(&self) -> u64 {
        fn count(items: &[ScheduleItem]) -> u64 {
            items.iter().fold(0u64, |acc, it| {
                acc.saturating_add(match it {
                    ScheduleItem::Take(..) => 1,
                    ScheduleItem::Repeat(n, body) => n.saturating_mul(count(body)),
                })
            })
        }
        count(&self.items)
    }

    pub fn cursor(&self) -> ScheduleCursor<'_> {
        ScheduleCursor { stack: vec![(&self.items, 0, 1)] }
    }

    pub fn parse(text: &str) -> Result<Schedule, ScheduleError> {
        let mut cleaned = String::with_capacity(text.len());
        for line in text.lines() {
            cleaned.push_str(line.split('#').next().unwrap_or(""));
            cleaned.push('\n');
        }
        let cleaned = cleaned.replace('{', " { ").replace('}', " } ");
        let toks: Vec<&str> = cleaned.split_whitespace().collect();
        let mut pos = 0;
        let items = parse_items(&toks, &mut pos, false)?;
        Ok(Schedule { items })
    }
}

fn parse_items(toks: &[&str], pos: &mut usize, nested: bool) -> Result<Vec<ScheduleItem>, ScheduleError> {
    let mut items = Vec::new();
    let err = |index: usize, msg: &str| ScheduleError::Syntax { index, msg: msg.to_string() };
    let hex = |index: usize, s: Option<&&str>| -> Result<Address, ScheduleError> {
        let s = s.ok_or_else(|| err(index, "missing address"))?;
        Address::parse_hex(s).map_err(|e| err(index, &e.to_string()))
    };
    while *pos < toks.len() {
        match toks[*pos] {
            "take" => {
                let src = hex(*pos + 1, toks.get(*pos + 1))?;
                let dst = hex(*pos + 2, toks.get(*pos + 2))?;
                items.push(ScheduleItem::Take(src, dst));
                *pos += 3;
            }
            "repeat" => {
                let n: u64 = toks
                    .get(*pos + 1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(*pos + 1, "expected repetition count"))?;
                if toks.get(*pos + 2) != Some(&"{") {
                    return Err(err(*pos + 2, "expected `{`"));
                }
                *pos += 3;
                let body = parse_items(toks, pos, true)?;
                items.push(ScheduleItem::Repeat(n, body));
            }
            "}" if nested => {
                *pos += 1;
                return Ok(items);
            }
            other => return Err(err(*pos, &format!("unexpected `{other}`"))),
        }
    }
    if nested {
        return Err(err(*pos, "unclosed `{`"));
    }
    Ok(items)
}

fn write_items(f: &mut fmt::Formatter<'_>, items: &[ScheduleItem], indent: usize) -> fmt::Result {
    for it in items {
        match it {
            ScheduleItem::Take(s, d) => writeln!(f, "{:indent$}take {s} {d}", "")?,
            ScheduleItem::Repeat(n, body) => {
                writeln!(f, "{:indent$}repeat {n} {{", "")?;
                write_items(f, body, indent + 2)?;
                writeln!(f, "{:indent$}}}", "")?;
            }
        }
    }
    Ok(())
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_items(f, &self.items, 0)
    }
}

/// Lazily expands repetitions.
pub struct ScheduleCursor<'a> {
    /// (items, next index, remaining passes including the current one)
    stack: Vec<(&'a [ScheduleItem], usize, u64)>,
}

impl Iterator for ScheduleCursor<'_> {
    type Item = (Address, Address);

    fn next(&mut self) -> Option<(Address, Address)> {
        loop {
            let (items, idx, left) = self.stack.last_mut()?;
            if *idx >= items.len() {
                *left -= 1;
                if *left == 0 {
                    self.stack.pop();
                } else {
                    *idx = 0;
                }
                continue;
            }
            let it = &items[*idx];
            *idx += 1;
            match it {
                ScheduleItem::Take(s, d) => return Some((*s, *d)),
                ScheduleItem::Repeat(n, body) => {
                    if *n > 0 && !body.is_empty() {
                        self.stack.push((body, 0, *n));
                    }
                }
            }
        }
    }
}
