//! The program model: a CFG with typed edges standing in for a disassembled
//! binary, plus the model file format.
//!
//! ```text
//! # comment
//! func main entry 1000
//! node 1004
//! edge 1000 1004 fallthrough
//! edge 1004 2000 direct-call callafter 1008
//! itargets 100c 2000 3000
//! libfunc memcpy
//! ```
//!
//! `node` lines belong to the most recent `func`; the entry is implicitly a node.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::address::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    DirectCall,
    IndirectCall,
    IndirectJump,
    Return,
    DirectJump,
    CondBranch,
    Fallthrough,
    SetjmpCall,
    LongjmpCall,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 9] = [
        EdgeKind::DirectCall,
        EdgeKind::IndirectCall,
        EdgeKind::IndirectJump,
        EdgeKind::Return,
        EdgeKind::DirectJump,
        EdgeKind::CondBranch,
        EdgeKind::Fallthrough,
        EdgeKind::SetjmpCall,
        EdgeKind::LongjmpCall,
    ];

    pub fn is_call(self) -> bool {
        matches!(
            self,
            EdgeKind::DirectCall | EdgeKind::IndirectCall | EdgeKind::SetjmpCall | EdgeKind::LongjmpCall
        )
    }

    /// Edges that stay inside a function and carry no runtime event.
    pub fn is_intra(self) -> bool {
        matches!(self, EdgeKind::DirectJump | EdgeKind::CondBranch | EdgeKind::Fallthrough)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::DirectCall => "direct-call",
            EdgeKind::IndirectCall => "indirect-call",
            EdgeKind::IndirectJump => "indirect-jump",
            EdgeKind::Return => "return",
            EdgeKind::DirectJump => "direct-jump",
            EdgeKind::CondBranch => "cond-branch",
            EdgeKind::Fallthrough => "fallthrough",
            EdgeKind::SetjmpCall => "setjmp-call",
            EdgeKind::LongjmpCall => "longjmp-call",
        }
    }
}

impl FromStr for EdgeKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        EdgeKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfgEdge {
    pub src: Address,
    pub dst: Address,
    pub kind: EdgeKind,
    /// The instruction after the call site; present iff `kind` is a call kind.
    pub call_after: Option<Address>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub entry: Address,
    pub nodes: BTreeSet<Address>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProgramModel {
    pub functions: Vec<Function>,
    pub edges: Vec<CfgEdge>,
    pub indirect_targets: BTreeMap<Address, BTreeSet<Address>>,
    pub library_functions: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid model: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::Invalid(msg.into())
}

/// Parses and validates a model file.
pub fn load_model(text: &str) -> Result<ProgramModel, ModelError> {
    let mut m = ProgramModel::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        let perr = |msg: String| ModelError::Parse { line, msg };
        let hex = |s: &str| Address::parse_hex(s).map_err(|e| ModelError::Parse { line, msg: e.to_string() });
        match toks[0] {
            "func" => {
                if toks.len() != 4 || toks[2] != "entry" {
                    return Err(perr("expected `func <name> entry <hex>`".into()));
                }
                let entry = hex(toks[3])?;
                m.functions.push(Function {
                    name: toks[1].to_string(),
                    entry,
                    nodes: BTreeSet::from([entry]),
                });
            }
            "node" => {
                if toks.len() != 2 {
                    return Err(perr("expected `node <hex>`".into()));
                }
                let a = hex(toks[1])?;
                let f = m.functions.last_mut().ok_or_else(|| perr("`node` before any `func`".into()))?;
                if !f.nodes.insert(a) {
                    return Err(perr(format!("node {a} declared twice")));
                }
            }
            "edge" => {
                let kind = toks
                    .get(3)
                    .and_then(|k| k.parse::<EdgeKind>().ok())
                    .ok_or_else(|| perr("expected `edge <hex> <hex> <kind> [callafter <hex>]`".into()))?;
                let call_after = match toks.len() {
                    4 => None,
                    6 if toks[4] == "callafter" => Some(hex(toks[5])?),
                    _ => return Err(perr("malformed edge line".into())),
                };
                m.edges.push(CfgEdge { src: hex(toks[1])?, dst: hex(toks[2])?, kind, call_after });
            }
            "itargets" => {
                if toks.len() < 2 {
                    return Err(perr("expected `itargets <site> <hex>...`".into()));
                }
                let site = hex(toks[1])?;
                let set = m.indirect_targets.entry(site).or_default();
                for t in &toks[2..] {
                    set.insert(hex(t)?);
                }
            }
            "libfunc" => {
                if toks.len() != 2 {
                    return Err(perr("expected `libfunc <name>`".into()));
                }
                m.library_functions.insert(toks[1].to_string());
            }
            other => return Err(perr(format!("unknown directive `{other}`"))),
        }
    }
    m.validate()?;
    Ok(m)
}

/// Canonical text form; `load_model(&serialize_model(m)) == m` for valid models.
pub fn serialize_model(m: &ProgramModel) -> String {
    let mut out = String::new();
    for name in &m.library_functions {
        out.push_str(&format!("libfunc {name}\n"));
    }
    for f in &m.functions {
        out.push_str(&format!("func {} entry {}\n", f.name, f.entry));
        for n in f.nodes.iter().filter(|n| **n != f.entry) {
            out.push_str(&format!("node {n}\n"));
        }
    }
    for e in &m.edges {
        match e.call_after {
            Some(ca) => out.push_str(&format!("edge {} {} {} callafter {}\n", e.src, e.dst, e.kind, ca)),
            None => out.push_str(&format!("edge {} {} {}\n", e.src, e.dst, e.kind)),
        }
    }
    for (site, tgts) in &m.indirect_targets {
        out.push_str(&format!("itargets {site}"));
        for t in tgts {
            out.push_str(&format!(" {t}"));
        }
        out.push('\n');
    }
    out
}

impl ProgramModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.functions.is_empty() {
            return Err(invalid("no functions"));
        }
        let mut owner: HashMap<Address, usize> = HashMap::new();
        let mut entries = HashSet::new();
        let mut names = HashSet::new();
        for (i, f) in self.functions.iter().enumerate() {
            if !entries.insert(f.entry) {
                return Err(invalid(format!("duplicate entry {}", f.entry)));
            }
            if !names.insert(f.name.as_str()) {
                return Err(invalid(format!("duplicate function name {}", f.name)));
            }
            for n in &f.nodes {
                if owner.insert(*n, i).is_some() {
                    return Err(invalid(format!("node {n} belongs to two functions")));
                }
            }
        }
        for lib in &self.library_functions {
            if !names.contains(lib.as_str()) {
                return Err(invalid(format!("library function {lib} is not declared")));
            }
        }

        let mut seen = HashSet::new();
        // Per source node: which class of terminator it has.
        let mut class: HashMap<Address, &'static str> = HashMap::new();
        let mut call_after: HashMap<Address, Address> = HashMap::new();
        for e in &self.edges {
            for end in [e.src, e.dst] {
                if !owner.contains_key(&end) {
                    return Err(invalid(format!("dangling edge {} -> {}: {end} is not a node", e.src, e.dst)));
                }
            }
            if !seen.insert((e.src, e.dst, e.kind)) {
                return Err(invalid(format!("duplicate edge {} -> {} {}", e.src, e.dst, e.kind)));
            }
            if e.kind.is_call() != e.call_after.is_some() {
                return Err(invalid(format!("edge {} -> {}: callafter present iff call kind", e.src, e.dst)));
            }
            if let Some(ca) = e.call_after {
                if owner.get(&ca) != owner.get(&e.src) {
                    return Err(invalid(format!("call-after {ca} of site {} is not in the caller", e.src)));
                }
                if let Some(prev) = call_after.insert(e.src, ca) {
                    if prev != ca {
                        return Err(invalid(format!("call site {} has two call-after points", e.src)));
                    }
                }
            }
            if e.kind.is_intra() && owner[&e.src] != owner[&e.dst] {
                return Err(invalid(format!("{} edge {} -> {} leaves its function", e.kind, e.src, e.dst)));
            }
            let c = match e.kind {
                EdgeKind::DirectCall | EdgeKind::SetjmpCall | EdgeKind::LongjmpCall => e.kind.as_str(),
                EdgeKind::IndirectCall => "indirect-call",
                EdgeKind::IndirectJump => "indirect-jump",
                EdgeKind::Return => "return",
                _ => "intra",
            };
            if let Some(prev) = class.insert(e.src, c) {
                if prev != c {
                    return Err(invalid(format!("node {} mixes {prev} and {c} edges", e.src)));
                }
                if matches!(e.kind, EdgeKind::DirectCall | EdgeKind::SetjmpCall | EdgeKind::LongjmpCall) {
                    return Err(invalid(format!("direct call site {} has two targets", e.src)));
                }
            }
            if matches!(e.kind, EdgeKind::DirectCall | EdgeKind::SetjmpCall | EdgeKind::LongjmpCall)
                && !entries.contains(&e.dst)
            {
                return Err(invalid(format!("call at {} targets {} which is not a function entry", e.src, e.dst)));
            }
        }
        for (site, c) in &class {
            if matches!(*c, "indirect-call" | "indirect-jump") {
                match self.indirect_targets.get(site) {
                    None => return Err(invalid(format!("missing target set for indirect site {site}"))),
                    Some(t) if t.is_empty() => {
                        return Err(invalid(format!("empty target set for indirect site {site}")))
                    }
                    Some(_) => {}
                }
            }
        }
        for (site, tgts) in &self.indirect_targets {
            match class.get(site) {
                Some(&"indirect-call") | Some(&"indirect-jump") => {}
                _ => return Err(invalid(format!("target set given for non-indirect site {site}"))),
            }
            for t in tgts {
                if !owner.contains_key(t) {
                    return Err(invalid(format!("indirect target {t} of site {site} is not a node")));
                }
            }
        }
        for e in &self.edges {
            if matches!(e.kind, EdgeKind::IndirectCall | EdgeKind::IndirectJump)
                && !self.indirect_targets[&e.src].contains(&e.dst)
            {
                return Err(invalid(format!("edge {} -> {} is outside the site's target set", e.src, e.dst)));
            }
        }
        Ok(())
    }

    pub fn function_by_entry(&self, entry: Address) -> Option<&Function> {
        self.functions.iter().find(|f| f.entry == entry)
    }

    pub fn function_of(&self, node: Address) -> Option<&Function> {
        self.functions.iter().find(|f| f.nodes.contains(&node))
    }

    pub fn is_library_entry(&self, entry: Address) -> bool {
        self.function_by_entry(entry)
            .map(|f| self.library_functions.contains(&f.name))
            .unwrap_or(false)
    }

    /// The function execution starts in: `main` if present, else the first declared.
    pub fn main_function(&self) -> &Function {
        self.functions.iter().find(|f| f.name == "main").unwrap_or(&self.functions[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
func main entry 100
node 104
node 108
edge 100 200 indirect-call callafter 104
edge 104 108 fallthrough
func f entry 200
edge 200 104 return
itargets 100 200
";

    #[test]
    fn rejects_empty() {
        assert_eq!(load_model("# nothing\n"), Err(invalid("no functions")));
    }

    #[test]
    fn rejects_missing_target_set() {
        let text = "func main entry 100\nnode 104\nnode 108\nedge 100 104 indirect-call callafter 108\n";
        let err = load_model(text).unwrap_err();
        assert!(err.to_string().contains("missing target set"), "{err}");
    }

    #[test]
    fn rejects_dangling_and_duplicates() {
        let err = load_model("func main entry 100\nedge 100 999 fallthrough\n").unwrap_err();
        assert!(err.to_string().contains("dangling"), "{err}");
        let err = load_model("func a entry 100\nfunc b entry 100\n").unwrap_err();
        assert!(err.to_string().contains("duplicate entry"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = load_model("func main entry 100\n\nbogus 1\n").unwrap_err();
        assert_eq!(err, ModelError::Parse { line: 3, msg: "unknown directive `bogus`".into() });
        let err = load_model("node 100\n").unwrap_err();
        assert!(matches!(err, ModelError::Parse { line: 1, .. }));
        let err = load_model("func main entry 0x100\n").unwrap_err();
        assert!(matches!(err, ModelError::Parse { line: 1, .. }));
    }

    #[test]
    fn callafter_only_on_calls() {
        let err = load_model("func main entry 100\nnode 104\nedge 100 104 fallthrough callafter 104\n").unwrap_err();
        assert!(err.to_string().contains("callafter"), "{err}");
    }

    #[test]
    fn serialize_round_trip() {
        let m = load_model(SMALL).unwrap();
        assert_eq!(load_model(&serialize_model(&m)).unwrap(), m);
        assert_eq!(m.functions.len(), 2);
        assert_eq!(m.main_function().name, "main");
    }
}
