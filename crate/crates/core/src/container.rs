//! Binary tensor container shared by feature files, checkpoints, training
//! state and attention dumps.
//!
//! ```text
//! EENDTENSORS 1
//! kind features
//! frame_shift_ms 100
//! tensor features 10x345
//! data f64le
//! <raw little-endian f64 values of every tensor, in declaration order>
//! ```
//!
//! Metadata lines are `key value` (the value may contain spaces, never
//! newlines). Tensor names are unique. Values round-trip bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: &str = "EENDTENSORS 1";
const DATA_LINE: &str = "data f64le";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    meta: Vec<(String, String)>,
    tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        let mut c = Self::default();
        c.set_meta("kind", kind);
        c
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        assert!(
            !key.is_empty() && !key.contains(char::is_whitespace) && !value.contains('\n'),
            "bad metadata entry {key:?}"
        );
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn meta_entries(&self) -> &[(String, String)] {
        &self.meta
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Input(format!("container is missing metadata `{key}`")))
    }

    pub fn kind(&self) -> Option<&str> {
        self.meta("kind")
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        assert!(
            !name.contains(char::is_whitespace),
            "tensor names cannot contain whitespace"
        );
        assert!(self.tensor(&name).is_none(), "duplicate tensor {name}");
        self.tensors.push((name, t));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require_tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensor(name)
            .ok_or_else(|| Error::Input(format!("container is missing tensor `{name}`")))
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        for (k, v) in &self.meta {
            writeln!(w, "{k} {v}")?;
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(w, "tensor {name} {}", dims.join("x"))?;
        }
        writeln!(w, "{DATA_LINE}")?;
        for (_, t) in &self.tensors {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl BufRead, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut line = String::new();
        let mut lineno = 0;
        let mut next_line = |line: &mut String, lineno: &mut usize| -> Result<bool> {
            line.clear();
            *lineno += 1;
            Ok(r.read_line(line)? > 0)
        };

        if !next_line(&mut line, &mut lineno)? || line.trim_end() != MAGIC {
            return Err(parse_err(1, format!("expected `{MAGIC}`")));
        }
        let mut out = Container::default();
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        loop {
            if !next_line(&mut line, &mut lineno)? {
                return Err(parse_err(lineno, format!("missing `{DATA_LINE}`")));
            }
            let text = line.trim_end_matches('\n');
            if text == DATA_LINE {
                break;
            }
            let (key, rest) = text
                .split_once(' ')
                .ok_or_else(|| parse_err(lineno, format!("malformed header line {text:?}")))?;
            if key == "tensor" {
                let mut parts = rest.split(' ');
                let (Some(name), Some(dims), None) = (parts.next(), parts.next(), parts.next())
                else {
                    return Err(parse_err(lineno, format!("malformed tensor line {text:?}")));
                };
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| parse_err(lineno, format!("bad dims {dims:?}: {e}")))?;
                shapes.push((name.to_string(), shape));
            } else {
                out.meta.push((key.to_string(), rest.to_string()));
            }
        }

        let mut buf = [0u8; 8];
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(|e| {
                    Error::Input(format!(
                        "{}: truncated data for tensor `{name}`: {e}",
                        origin.display()
                    ))
                })?;
                data.push(f64::from_le_bytes(buf));
            }
            out.tensors.push((name, Tensor::new(shape, data)?));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Input(format!(
                "{}: {} trailing bytes after tensor data",
                origin.display(),
                rest.len()
            )));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r, path)
    }

    /// True when the file starts with the container magic line.
    pub fn sniff(path: impl AsRef<Path>) -> bool {
        let mut head = [0u8; MAGIC.len()];
        File::open(path)
            .and_then(|mut f| f.read_exact(&mut head))
            .map(|_| head == *MAGIC.as_bytes())
            .unwrap_or(false)
    }
}
