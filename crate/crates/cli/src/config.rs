//! Sectioned key = value configuration files.
//!
//! ```text
//! [graph]
//! kind = half_line
//! radius = 400
//!
//! [params]
//! q = 0.98
//! t_grid = 20, 40, 60, 80
//! ```
//!
//! Lines starting with `#` or `;` are comments. Section and key names are
//! case-sensitive.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use fa1f_core::graph::{build_window, GraphView, WindowKind};

#[derive(Debug, Default, Clone)]
pub struct Config {
    sections: HashMap<String, HashMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut sections: HashMap<String, HashMap<String, String>> = HashMap::new();
        let mut current = String::from("");
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", lineno + 1))?;
            sections
                .entry(current.clone())
                .or_default()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { sections })
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Config::parse(&text)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key)
            .ok_or_else(|| anyhow!("missing `{key}` in section [{section}]"))
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<f64> {
        self.require(section, key)?
            .parse()
            .with_context(|| format!("[{section}] {key} must be a number"))
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .with_context(|| format!("[{section}] {key} must be a number")),
        }
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<usize> {
        self.require(section, key)?
            .parse()
            .with_context(|| format!("[{section}] {key} must be a nonnegative integer"))
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .with_context(|| format!("[{section}] {key} must be a nonnegative integer")),
        }
    }

    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .with_context(|| format!("[{section}] {key} must be an unsigned integer")),
        }
    }

    /// Comma-separated list of numbers.
    pub fn f64_list(&self, section: &str, key: &str) -> Result<Vec<f64>> {
        let raw = self.require(section, key)?;
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .with_context(|| format!("[{section}] {key}: bad entry `{s}`"))
            })
            .collect()
    }

    /// The `[graph]` section: `kind` plus `radius` (and `degree` for trees).
    pub fn graph(&self) -> Result<GraphView> {
        let kind = match self.require("graph", "kind")? {
            "path" => WindowKind::Path,
            "half_line" => WindowKind::HalfLine,
            "grid2d" => WindowKind::Grid2d,
            "regular_tree" => WindowKind::RegularTree {
                degree: self.usize("graph", "degree")?,
            },
            other => bail!("unknown graph kind `{other}`"),
        };
        let radius = self.usize("graph", "radius")?;
        Ok(build_window(kind, radius)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_lists() {
        let cfg = Config::parse(
            "# comment\n[graph]\nkind = half_line\nradius = 10\n\n[params]\nq = 0.9\nt_grid = 1, 2.5, 4\n",
        )
        .unwrap();
        assert_eq!(cfg.get("graph", "kind"), Some("half_line"));
        assert_eq!(cfg.usize("graph", "radius").unwrap(), 10);
        assert_eq!(cfg.f64("params", "q").unwrap(), 0.9);
        assert_eq!(cfg.f64_list("params", "t_grid").unwrap(), vec![1.0, 2.5, 4.0]);
        assert!(cfg.require("params", "missing").is_err());
        let g = cfg.graph().unwrap();
        assert_eq!(g.len(), 11);
    }
}
