//! Helpers shared by the versioned text file formats.

use std::str::FromStr;

use crate::error::{Error, Result};

/// Shortest decimal that parses back to the same `f64` bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

pub fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok()
}

/// Cursor over the non-blank lines of a text file, tracking 1-based line
/// numbers for error messages. All errors are [`Error::Format`].
pub struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    pub fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
        }
    }

    pub fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            let line = line.trim();
            if !line.is_empty() {
                return Ok((i + 1, line));
            }
        }
        Err(Error::Format("unexpected end of file".into()))
    }

    pub fn expect(&mut self, exact: &str) -> Result<()> {
        let (n, line) = self.next_line()?;
        if line != exact {
            return Err(Error::Format(format!(
                "line {n}: expected {exact:?}, found {line:?}"
            )));
        }
        Ok(())
    }

    /// Parses a `key value` line.
    pub fn keyed<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, line) = self.next_line()?;
        let mut it = line.split_whitespace();
        match (it.next(), it.next(), it.next()) {
            (Some(k), Some(v), None) if k == key => v
                .parse()
                .map_err(|_| Error::Format(format!("line {n}: bad value for {key}: {v:?}"))),
            _ => Err(Error::Format(format!(
                "line {n}: expected `{key} <value>`, found {line:?}"
            ))),
        }
    }

    /// Parses a line holding exactly `count` floats.
    pub fn values(&mut self, count: usize) -> Result<Vec<f64>> {
        let (n, line) = self.next_line()?;
        let vals = line
            .split_whitespace()
            .map(|s| parse_f64(s).ok_or_else(|| Error::Format(format!("line {n}: bad number {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != count {
            return Err(Error::Format(format!(
                "line {n}: expected {count} values, found {}",
                vals.len()
            )));
        }
        Ok(vals)
    }

    pub fn finish(&mut self) -> Result<()> {
        match self.next_line() {
            Ok((n, line)) => Err(Error::Format(format!("line {n}: trailing content {line:?}"))),
            Err(_) => Ok(()),
        }
    }
}

/// Scalar types that can appear as values in flat `key value` configs.
pub(crate) trait ConfigValue: Sized {
    fn render(&self) -> String;
    fn parse_value(s: &str) -> Option<Self>;
}

macro_rules! int_config_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn render(&self) -> String {
                self.to_string()
            }
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
        }
    )*};
}
int_config_value!(usize, u64);

impl ConfigValue for f64 {
    fn render(&self) -> String {
        fmt_f64(*self)
    }
    fn parse_value(s: &str) -> Option<Self> {
        parse_f64(s).filter(|v| v.is_finite())
    }
}

impl ConfigValue for bool {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "true" | "1" => Some(true),
            "false" | "0" => Some(false),
            _ => None,
        }
    }
}

/// Implements `KEYS`, `set`, `entries`, `write_section` and `read_section`
/// for a struct of [`ConfigValue`] fields.
macro_rules! flat_config {
    ($ty:ident, $section:literal, [$($k:ident),* $(,)?]) => {
        impl $ty {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($k)),*];

            /// Sets one field from its textual value. Unknown keys and
            /// unparsable values are argument errors.
            pub fn set(&mut self, key: &str, value: &str) -> $crate::error::Result<()> {
                use $crate::textio::ConfigValue;
                match key {
                    $(stringify!($k) => {
                        self.$k = ConfigValue::parse_value(value).ok_or_else(|| {
                            $crate::error::Error::Argument(format!("bad value {value:?} for {key}"))
                        })?;
                    })*
                    _ => {
                        return Err($crate::error::Error::Argument(format!(
                            "unknown {} key {key:?}",
                            $section
                        )))
                    }
                }
                Ok(())
            }

            /// `(key, value)` pairs in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                use $crate::textio::ConfigValue;
                vec![$((stringify!($k), self.$k.render())),*]
            }

            pub fn write_section(&self, out: &mut String) {
                out.push_str($section);
                out.push('\n');
                for (k, v) in self.entries() {
                    out.push_str(k);
                    out.push(' ');
                    out.push_str(&v);
                    out.push('\n');
                }
            }

            pub(crate) fn read_section(lines: &mut $crate::textio::Lines) -> $crate::error::Result<Self> {
                lines.expect($section)?;
                let mut cfg = Self::default();
                for key in Self::KEYS {
                    let (n, line) = lines.next_line()?;
                    let (k, v) = line.split_once(' ').unwrap_or((line, ""));
                    if k != *key {
                        return Err($crate::error::Error::Format(format!(
                            "line {n}: expected key {key}, found {line:?}"
                        )));
                    }
                    cfg.set(k, v.trim())
                        .map_err(|e| $crate::error::Error::Format(format!("line {n}: {e}")))?;
                }
                Ok(cfg)
            }
        }
    };
}
pub(crate) use flat_config;
