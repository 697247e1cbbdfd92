//! Reference configurations shipped with the crate (`corpus/*.json`).

use crate::error::Result;
use crate::io::{parse_config, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusEntry {
    pub name: &'static str,
    pub text: &'static str,
}

impl CorpusEntry {
    pub fn config(&self) -> Result<RunConfig> {
        parse_config(self.text)
    }
}

macro_rules! corpus {
    ($($name:literal),* $(,)?) => {
        &[$(CorpusEntry { name: $name, text: include_str!(concat!("../corpus/", $name, ".json")) }),*]
    };
}

pub const ENTRIES: &[CorpusEntry] = corpus![
    "rp_single",
    "inviscid_single",
    "inviscid_symmetric_pair",
    "inviscid_far_pair",
    "inviscid_three",
    "viscous_single",
    "viscous_symmetric_pair",
    "viscous_three_rotlet",
    "basis_pair",
    "basis_three",
    "ale_three",
];

pub fn entry(name: &str) -> Option<CorpusEntry> {
    ENTRIES.iter().find(|e| e.name == name).copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_entry_parses() {
        for e in ENTRIES {
            let c = e.config().unwrap_or_else(|err| panic!("{}: {err}", e.name));
            c.bubble_config().unwrap();
        }
        assert!(entry("inviscid_three").is_some());
        assert!(entry("missing").is_none());
    }
}
