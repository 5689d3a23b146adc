//! `SITCKPT` parameter files.
//!
//! ```text
//! SITCKPT 1
//! config <key>=<value> <key>=<value> ...
//! tensors <k>
//! tensor <name> <rows> <cols>        (k lines)
//! end_header
//! <f32 LE payloads, in header order>
//! ```

use std::path::Path;

use super::array::Array;
use crate::error::{Error, Result};
use crate::format::{read_file, write_file, Reader, END_HEADER};

pub const SITCKPT_VERSION: u32 = 1;

/// Named tensors plus a flat config record that makes the file
/// self-describing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config: Vec<(String, String)>,
    pub tensors: Vec<(String, Array<f32>)>,
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == '=') {
        return Err(Error::Data(format!(
            "checkpoint {kind} {s:?} must be non-empty without whitespace or '='"
        )));
    }
    Ok(())
}

impl Checkpoint {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Array<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut header = format!("SITCKPT {SITCKPT_VERSION}\nconfig");
        for (k, v) in &self.config {
            check_token("config key", k)?;
            if v.is_empty() || v.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("config value {v:?} for {k} has whitespace")));
            }
            header.push_str(&format!(" {k}={v}"));
        }
        header.push_str(&format!("\ntensors {}\n", self.tensors.len()));
        for (name, a) in &self.tensors {
            check_token("tensor name", name)?;
            header.push_str(&format!("tensor {name} {} {}\n", a.rows(), a.cols()));
        }
        header.push_str(END_HEADER);
        header.push('\n');
        let mut out = header.into_bytes();
        for (_, a) in &self.tensors {
            for x in a.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader::new(bytes);
        r.magic("SITCKPT", SITCKPT_VERSION)?;
        let (at, record) = r.field("config")?;
        let mut config = Vec::new();
        for pair in record.split_whitespace() {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| r.error(at, format!("config entry {pair:?} lacks '='")))?;
            config.push((k.to_owned(), v.to_owned()));
        }
        let count: usize = r.number("tensors")?;
        let mut shapes = Vec::new();
        for _ in 0..count {
            let (at, spec) = r.field("tensor")?;
            let parts: Vec<&str> = spec.split_whitespace().collect();
            let parsed = match parts.as_slice() {
                [name, rows, cols] => rows
                    .parse::<usize>()
                    .ok()
                    .zip(cols.parse::<usize>().ok())
                    .map(|(r, c)| (name.to_string(), r, c)),
                _ => None,
            };
            shapes.push(parsed.ok_or_else(|| r.error(at, format!("bad tensor record {spec:?}")))?);
        }
        r.end_header()?;
        let mut tensors = Vec::with_capacity(count);
        for (name, rows, cols) in shapes {
            let at = r.offset();
            let values = r.f32s(rows.saturating_mul(cols), &format!("tensor {name}"))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    offset: at,
                    message: format!("tensor {name} holds non-finite values"),
                });
            }
            tensors.push((name, Array::from_vec(rows, cols, values)?));
        }
        r.finish()?;
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::decode(&read_file(path.as_ref())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: vec![("variant".into(), "micro".into()), ("layers".into(), "2".into())],
            tensors: vec![
                ("w".into(), Array::from_fn(2, 3, |r, c| (r * 3 + c) as f32 * 0.5)),
                ("b".into(), Array::filled(1, 3, -1.5)),
            ],
        }
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.config_value("layers"), Some("2"));
    }

    #[test]
    fn rejects_whitespace_names() {
        let mut ck = sample();
        ck.tensors[0].0 = "bad name".into();
        assert!(ck.encode().is_err());
    }

    #[test]
    fn truncation_and_trailing_bytes_are_parse_errors() {
        let bytes = sample().encode().unwrap();
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 1]),
            Err(Error::Parse { .. })
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(Checkpoint::decode(&longer), Err(Error::Parse { .. })));
    }
}
