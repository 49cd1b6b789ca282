//! Versioned text container for model parameters.
//!
//! ```text
//! VFNET-CHECKPOINT 1
//! kind vfnet
//! scalar f64
//! tensor voice_fc1.weight 256 512
//! <row 0: 512 space-separated values>
//! ...
//! tensor voice_fc1.bias 256 1
//! ...
//! end
//! ```
//!
//! Each `tensor` line gives a name, a row count and a column count and is
//! followed by exactly `rows` lines of `cols` values (row-major). Values use the
//! shortest decimal form that parses back to the same bits.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::{read_to_string, write_string};

pub const MAGIC: &str = "VFNET-CHECKPOINT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub kind: String,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(kind: impl Into<String>) -> Self {
        Checkpoint {
            kind: kind.into(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<T>) {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data");
        self.tensors.push(Tensor {
            name: name.into(),
            rows,
            cols,
            data,
        });
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, value: T) {
        self.push(name, 1, 1, vec![value]);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    /// Tensor data, checking the stored shape.
    pub fn get_shaped(&self, name: &str, rows: usize, cols: usize) -> Result<&[T]> {
        let t = self.get(name)?;
        if (t.rows, t.cols) != (rows, cols) {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {}x{}, expected {rows}x{cols}",
                t.rows, t.cols
            )));
        }
        Ok(&t.data)
    }

    pub fn get_scalar(&self, name: &str) -> Result<T> {
        Ok(self.get_shaped(name, 1, 1)?[0])
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\nkind {}\nscalar {}\n", self.kind, T::NAME);
        for t in &self.tensors {
            out.push_str(&format!("tensor {} {} {}\n", t.name, t.rows, t.cols));
            for r in 0..t.rows {
                let row = &t.data[r * t.cols..(r + 1) * t.cols];
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("unexpected end of file, expected {what}")))
        };

        let (n, header) = next("header")?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::parse(n, "not a checkpoint file (bad magic)"))?;
        if version != VERSION.to_string() {
            return Err(Error::parse(n, format!("unsupported checkpoint version `{version}`")));
        }
        let (n, kind) = next("kind")?;
        let kind = kind
            .strip_prefix("kind ")
            .ok_or_else(|| Error::parse(n, "expected `kind <name>`"))?;
        let (n, scalar) = next("scalar")?;
        let scalar = scalar
            .strip_prefix("scalar ")
            .ok_or_else(|| Error::parse(n, "expected `scalar <type>`"))?;
        if scalar != T::NAME {
            return Err(Error::parse(
                n,
                format!("checkpoint holds {scalar} values, reader expects {}", T::NAME),
            ));
        }

        let mut ckpt = Checkpoint::new(kind);
        loop {
            let (n, line) = next("`tensor` or `end`")?;
            if line == "end" {
                break;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let ["tensor", name, rows, cols] = parts.as_slice() else {
                return Err(Error::parse(n, "expected `tensor <name> <rows> <cols>`"));
            };
            let rows: usize = rows.parse().map_err(|_| Error::parse(n, "bad row count"))?;
            let cols: usize = cols.parse().map_err(|_| Error::parse(n, "bad column count"))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (n, row) = next("tensor row")?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    data.push(crate::store::text_scalar::<T>(tok, n)?);
                }
                if data.len() - before != cols {
                    return Err(Error::parse(
                        n,
                        format!("expected {cols} values, found {}", data.len() - before),
                    ));
                }
            }
            ckpt.push(*name, rows, cols, data);
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_string(path.as_ref(), &self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_to_string(path.as_ref())?)
    }
}
