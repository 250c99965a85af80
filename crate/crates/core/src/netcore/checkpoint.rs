//! Text checkpoint holding one or more models (several for ensembles).
//!
//! ```text
//! scc-lab-checkpoint v1
//! regularizer <tag>
//! members <E>
//! model <index>
//! shape <d> <h> <C>
//! dropout <p>
//! hidden.weight <h*d values, row-major>
//! hidden.bias <h values>
//! output.weight <C*h values, row-major>
//! output.bias <C values>
//! ```
//!
//! Values use 17 significant digits, so loading is lossless.

use std::path::Path;

use super::model::MlpModel;
use crate::error::{Error, Result};
use crate::util::{self, fmt_f64, parse_field};

pub const CHECKPOINT_MAGIC: &str = "scc-lab-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Name of the regularizer the members were trained with.
    pub regularizer: String,
    pub members: Vec<MlpModel>,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{CHECKPOINT_MAGIC}\nregularizer {}\nmembers {}\n",
            self.regularizer,
            self.members.len()
        );
        for (i, m) in self.members.iter().enumerate() {
            out.push_str(&format!("model {i}\n"));
            out.push_str(&format!("shape {} {} {}\n", m.input_dim, m.hidden_dim, m.num_classes));
            out.push_str(&format!("dropout {}\n", fmt_f64(m.dropout_rate)));
            for (name, values) in ["hidden.weight", "hidden.bias", "output.weight", "output.bias"]
                .iter()
                .zip(m.params())
            {
                out.push_str(name);
                for v in values {
                    out.push(' ');
                    out.push_str(&fmt_f64(*v));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&util::read_to_string(path)?, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::schema(path, 0, format!("unexpected end of file, expected {what}")))
        };
        let (lineno, magic) = next("header")?;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err(Error::schema(path, lineno, format!("expected `{CHECKPOINT_MAGIC}`")));
        }
        let regularizer = keyed(path, next("regularizer")?, "regularizer")?[0].to_string();
        let count_line = next("members")?;
        let members_n: usize = parse_field(path, count_line.0, keyed(path, count_line, "members")?[0], "member count")?;
        let mut members = Vec::with_capacity(members_n);
        for i in 0..members_n {
            let l = next("model")?;
            let idx: usize = parse_field(path, l.0, keyed(path, l, "model")?[0], "model index")?;
            if idx != i {
                return Err(Error::schema(path, l.0, format!("expected model {i}, found {idx}")));
            }
            let l = next("shape")?;
            let dims = keyed(path, l, "shape")?;
            if dims.len() != 3 {
                return Err(Error::schema(path, l.0, "shape needs three sizes"));
            }
            let d: usize = parse_field(path, l.0, dims[0], "input size")?;
            let h: usize = parse_field(path, l.0, dims[1], "hidden size")?;
            let c: usize = parse_field(path, l.0, dims[2], "class count")?;
            let l = next("dropout")?;
            let dropout: f64 = parse_field(path, l.0, keyed(path, l, "dropout")?[0], "dropout")?;
            let mut m = MlpModel::zeros(d, h, c).with_dropout(dropout)?;
            let expected = [h * d, h, c * h, c];
            for (t, name) in ["hidden.weight", "hidden.bias", "output.weight", "output.bias"].iter().enumerate() {
                let l = next(name)?;
                let fields = keyed_allow_empty(path, l, name)?;
                if fields.len() != expected[t] {
                    return Err(Error::schema(
                        path,
                        l.0,
                        format!("{name} expects {} values, found {}", expected[t], fields.len()),
                    ));
                }
                let values = fields
                    .iter()
                    .map(|f| parse_field::<f64>(path, l.0, f, "parameter"))
                    .collect::<Result<Vec<_>>>()?;
                *m.params_mut()[t] = values;
            }
            members.push(m);
        }
        if members.is_empty() {
            return Err(Error::schema(path, 3, "checkpoint holds no models"));
        }
        Ok(Self { regularizer, members })
    }
}

fn keyed_allow_empty<'a>(path: &Path, (lineno, line): (usize, &'a str), key: &str) -> Result<Vec<&'a str>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::schema(path, lineno, format!("expected `{key}`")));
    }
    Ok(parts.collect())
}

fn keyed<'a>(path: &Path, l: (usize, &'a str), key: &str) -> Result<Vec<&'a str>> {
    let v = keyed_allow_empty(path, l, key)?;
    if v.is_empty() {
        return Err(Error::schema(path, l.0, format!("`{key}` needs a value")));
    }
    Ok(v)
}
