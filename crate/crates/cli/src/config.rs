//! Flag/config-file merging. Every flag struct is also a JSON object whose
//! keys are the flag names with `-` spelled `_`; values given on the command
//! line win over the file. Keys that match no flag are rejected.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub fn merge<T: Serialize + DeserializeOwned>(cli: &T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(serde_json::from_value(serde_json::to_value(cli)?)?);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut file: Map<String, Value> =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let Value::Object(flags) = serde_json::to_value(cli)? else {
        bail!("flag set is not an object");
    };
    if let Some(k) = file.keys().find(|k| !flags.contains_key(*k)) {
        bail!("config {}: unknown key `{k}`", path.display());
    }
    for (k, v) in flags {
        if !v.is_null() && v != Value::Bool(false) {
            file.insert(k, v);
        } else {
            file.entry(k).or_insert(v);
        }
    }
    serde_json::from_value(Value::Object(file)).with_context(|| format!("config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Flags {
        #[serde(skip)]
        config: Option<std::path::PathBuf>,
        seed: Option<u64>,
        alpha: Option<f64>,
        quiet: bool,
    }

    fn file(body: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), body).unwrap();
        f
    }

    #[test]
    fn command_line_wins() {
        let f = file(r#"{"seed": 3, "alpha": 0.5, "quiet": true}"#);
        let cli = Flags {
            config: None,
            seed: Some(9),
            alpha: None,
            quiet: false,
        };
        let m = merge(&cli, Some(f.path())).unwrap();
        assert_eq!(m.seed, Some(9));
        assert_eq!(m.alpha, Some(0.5));
        assert!(m.quiet);
    }

    #[test]
    fn unknown_keys_rejected() {
        for body in [r#"{"sede": 3}"#, r#"{"config": "x.json"}"#] {
        let f = file(body);
        let cli = Flags {
            config: None,
            seed: None,
            alpha: None,
            quiet: false,
        };
        let err = merge(&cli, Some(f.path())).unwrap_err();
        assert!(format!("{err:#}").contains("unknown key"));
        }
    }
}
