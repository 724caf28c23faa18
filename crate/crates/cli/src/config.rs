//! Run configuration: a line-oriented `key = value` file with `[section]`
//! headers, `#` comments, and a fixed schema. Errors cite the offending
//! line so a bad run is diagnosable from the message alone.

use std::fmt;
use std::path::{Path, PathBuf};

/// Known sections and their keys. Parsing rejects anything else, which
/// turns silent typos into line-numbered errors.
const SCHEMA: &[(&str, &[&str])] = &[
    ("model", &["preset", "mu", "sigma", "kappa", "theta", "x0", "mu_expr", "sigma_expr"]),
    ("surface", &["v", "fixture"]),
    ("grid", &["t", "n"]),
    ("ensemble", &["npaths", "master_seed"]),
    (
        "estimator",
        &[
            "kind",
            "level",
            "epsilon",
            "side",
            "z",
            "horizon",
            "rect",
            "n_seed_times",
            "nx",
            "tolerance",
            "trace_step",
            "newton_iters",
        ],
    ),
    (
        "exposure",
        &[
            "times",
            "ntimes",
            "method",
            "density",
            "density_times",
            "default",
            "lambda",
            "alpha",
            "allow_non_martingale",
            "cdf_file",
        ],
    ),
    ("output", &["dir", "csv"]),
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    At { path: PathBuf, line: usize, message: String },
    #[error("{path}: missing required key `{key}` in section [{section}]")]
    Missing { path: PathBuf, section: String, key: String },
}

#[derive(Debug, Clone)]
struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

/// A parsed, schema-checked configuration file.
#[derive(Debug, Clone)]
pub struct Config {
    pub path: PathBuf,
    hash: u64,
    entries: Vec<Entry>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Config::parse(path, &text)
    }

    fn parse(path: &Path, text: &str) -> Result<Config, ConfigError> {
        let at = |line: usize, message: String| ConfigError::At {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut entries: Vec<Entry> = Vec::new();
        let mut section: Option<(String, &[&str])> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return Err(at(line, format!("unterminated section header `{trimmed}`")));
                };
                let name = name.trim();
                let Some(&(known, keys)) = SCHEMA.iter().find(|&&(s, _)| s == name) else {
                    return Err(at(line, format!("unknown section `[{name}]`")));
                };
                section = Some((known.to_string(), keys));
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(at(line, format!("expected `key = value`, found `{trimmed}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            let Some((ref sec_name, keys)) = section else {
                return Err(at(line, format!("`{key}` appears before any [section] header")));
            };
            if !keys.contains(&key) {
                return Err(at(line, format!("unknown key `{key}` in section [{sec_name}]")));
            }
            if let Some(dup) = entries.iter().find(|e| e.section == *sec_name && e.key == key) {
                return Err(at(line, format!("`{key}` already set on line {}", dup.line)));
            }
            entries.push(Entry {
                section: sec_name.clone(),
                key: key.to_string(),
                value: value.to_string(),
                line,
            });
        }
        Ok(Config { path: path.to_path_buf(), hash: fnv1a(text.as_bytes()), entries })
    }

    /// FNV-1a hash of the raw file bytes; recorded in every manifest.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.section == section && e.key == key)
    }

    pub fn str_val(&self, section: &str, key: &str) -> Option<&str> {
        self.entry(section, key).map(|e| e.value.as_str())
    }

    fn parsed<T>(&self, section: &str, key: &str, what: &str) -> Result<Option<T>, ConfigError>
    where
        T: std::str::FromStr,
        T::Err: fmt::Display,
    {
        let Some(e) = self.entry(section, key) else { return Ok(None) };
        e.value.parse::<T>().map(Some).map_err(|err| ConfigError::At {
            path: self.path.clone(),
            line: e.line,
            message: format!("`{key}` is not {what}: {err}"),
        })
    }

    pub fn f64_val(&self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        self.parsed(section, key, "a number")
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.f64_val(section, key)?.unwrap_or(default))
    }

    pub fn usize_val(&self, section: &str, key: &str) -> Result<Option<usize>, ConfigError> {
        self.parsed(section, key, "a nonnegative integer")
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.usize_val(section, key)?.unwrap_or(default))
    }

    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        Ok(self.parsed(section, key, "a 64-bit unsigned integer")?.unwrap_or(default))
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        Ok(self.parsed(section, key, "`true` or `false`")?.unwrap_or(default))
    }

    /// Comma or whitespace separated list of numbers.
    pub fn f64_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(e) = self.entry(section, key) else { return Ok(None) };
        let mut out = Vec::new();
        for tok in e.value.split(|c: char| c == ',' || c.is_whitespace()) {
            if tok.is_empty() {
                continue;
            }
            out.push(tok.parse::<f64>().map_err(|err| ConfigError::At {
                path: self.path.clone(),
                line: e.line,
                message: format!("`{key}` entry `{tok}` is not a number: {err}"),
            })?);
        }
        Ok(Some(out))
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.str_val(section, key).ok_or_else(|| ConfigError::Missing {
            path: self.path.clone(),
            section: section.to_string(),
            key: key.to_string(),
        })
    }

    /// Line number of a key, for error messages that outlive the lookup.
    pub fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.entry(section, key).map(|e| e.line)
    }

    /// Wraps a downstream error (expression parse, range check) with the
    /// file location of the value that caused it.
    pub fn error_at(&self, section: &str, key: &str, message: String) -> ConfigError {
        match self.line_of(section, key) {
            Some(line) => ConfigError::At { path: self.path.clone(), line, message },
            None => ConfigError::Missing {
                path: self.path.clone(),
                section: section.to_string(),
                key: key.to_string(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, ConfigError> {
        Config::parse(Path::new("test.ini"), text)
    }

    #[test]
    fn parses_sections_and_values() {
        let cfg = parse("[grid]\nt = 2.0\nn = 128\n\n# comment\n[ensemble]\nnpaths = 4\n").unwrap();
        assert_eq!(cfg.f64_val("grid", "t").unwrap(), Some(2.0));
        assert_eq!(cfg.usize_or("grid", "n", 0).unwrap(), 128);
        assert_eq!(cfg.usize_or("ensemble", "npaths", 0).unwrap(), 4);
        assert_eq!(cfg.str_val("grid", "missing"), None);
    }

    #[test]
    fn rejects_unknown_keys_with_line_numbers() {
        let err = parse("[grid]\nt = 1\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::At { line: 3, .. }), "{err}");
    }

    #[test]
    fn rejects_bare_keys_sections_and_duplicates() {
        assert!(parse("t = 1\n").is_err());
        assert!(parse("[nope]\n").is_err());
        assert!(parse("[grid]\nt = 1\nt = 2\n").is_err());
        assert!(parse("[grid\nt = 1\n").is_err());
    }

    #[test]
    fn bad_numbers_cite_the_line() {
        let cfg = parse("[grid]\nn = twelve\n").unwrap();
        let err = cfg.usize_val("grid", "n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("test.ini:2"), "{text}");
        assert!(text.contains("nonnegative integer"), "{text}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse("[grid]\nt = 1\n").unwrap();
        let b = parse("[grid]\nt = 1\n").unwrap();
        let c = parse("[grid]\nt = 2\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn lists_split_on_commas_and_spaces() {
        let cfg = parse("[exposure]\ntimes = 0.25, 0.5 0.75,1\n").unwrap();
        assert_eq!(cfg.f64_list("exposure", "times").unwrap().unwrap(), vec![0.25, 0.5, 0.75, 1.0]);
    }
}
