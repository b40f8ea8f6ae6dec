//! Output directory helpers.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::Serialize;

use crate::scenario::{problem_name, ProblemDoc};

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Problem names, checked to be unique and usable as file stems.
pub fn problem_names(problems: &[ProblemDoc]) -> Result<Vec<String>> {
    let names: Vec<String> = problems.iter().enumerate().map(|(i, p)| problem_name(p, i)).collect();
    let mut seen = HashSet::new();
    for n in &names {
        ensure!(
            !n.is_empty() && n.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) && !n.starts_with('.'),
            "problem name `{n}` must use only letters, digits, `_`, `-` and `.`"
        );
        ensure!(n != "summary", "problem name `summary` is reserved");
        ensure!(seen.insert(n.as_str()), "duplicate problem name `{n}`");
    }
    Ok(names)
}

/// Median of a non-empty sample.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
