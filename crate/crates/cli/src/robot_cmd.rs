//! `ks robot validate`: per-invariant report for a robot description.

use std::path::Path;

use anyhow::{Context, Result};
use ks_core::robot::document::RobotDocument;
use ks_core::{ModelError, RobotModel};

/// Invariants in the order the loader checks them.
const INVARIANTS: [&str; 9] = [
    "schema",
    "unique names",
    "joints reference declared links",
    "one parent per link",
    "tree with a single root and no cycles",
    "link and joint values",
    "mimic joints",
    "tool links",
    "named configurations",
];

fn failed_invariant(e: &ModelError) -> usize {
    match e {
        ModelError::Parse(_) => 0,
        ModelError::Duplicate { .. } => 1,
        ModelError::DanglingLink { .. } => 2,
        ModelError::MultipleParents { .. } => 3,
        ModelError::RootCount { .. } | ModelError::Cycle { .. } => 4,
        ModelError::InvalidMimic { .. } => 6,
        ModelError::UnknownLink(_) => 7,
        ModelError::Invalid { element, .. } if element.starts_with("configuration") => 8,
        ModelError::MissingConfiguration(_) => 8,
        _ => 5,
    }
}

/// Prints one line per invariant and returns whether all hold.
pub fn validate(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let result = serde_json::from_str::<RobotDocument>(&text)
        .map_err(ModelError::from)
        .and_then(RobotModel::from_document);
    match result {
        Ok(model) => {
            for name in INVARIANTS {
                println!("PASS  {name}");
            }
            println!(
                "robot: {} links, {} joints, {} actuated, {} collision spheres",
                model.links().len(),
                model.joints().len(),
                model.dof(),
                model.sphere_count(),
            );
            Ok(true)
        }
        Err(e) => {
            let at = failed_invariant(&e);
            for (i, name) in INVARIANTS.iter().enumerate() {
                match i.cmp(&at) {
                    std::cmp::Ordering::Less => println!("PASS  {name}"),
                    std::cmp::Ordering::Equal => println!("FAIL  {name}: {e}"),
                    std::cmp::Ordering::Greater => println!("SKIP  {name}"),
                }
            }
            Ok(false)
        }
    }
}
