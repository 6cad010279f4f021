//! Shipped grammars for the four benchmark classification tasks.

use crate::error::{Error, Result};
use crate::grammar::ComponentSet;

pub const NAMES: [&str; 4] = ["sst2", "dbpedia", "agnews", "trec"];

pub fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "sst2" | "sst-2" => include_str!("../presets/sst2.json"),
        "dbpedia" => include_str!("../presets/dbpedia.json"),
        "agnews" => include_str!("../presets/agnews.json"),
        "trec" => include_str!("../presets/trec.json"),
        _ => return None,
    })
}

pub fn load(name: &str) -> Result<ComponentSet> {
    let doc = source(&name.to_ascii_lowercase())
        .ok_or_else(|| Error::invalid(format!("unknown preset {name:?}; known: {NAMES:?}")))?;
    ComponentSet::from_json(doc)
}
