//! Text container for [`BlendshapeModel`].
//!
//! ```text
//! prdl-model 1
//! n 600
//! k_id 8
//! k_exp 6
//! mean            # n lines: x y z
//! id_basis        # 3n lines of k_id values, row 3i+c is coordinate c of vertex i
//! exp_basis       # 3n lines of k_exp values
//! part 1 0 1 2 .. # one line per annotated part: code then vertex indices
//! landmarks 4 17 ..
//! end
//! ```
//!
//! Floats are written in shortest round-trip form, so write/read is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{BlendshapeModel, Vec3};
use crate::error::{format_err, Result};
use crate::part::PartLabel;

const MAGIC: &str = "prdl-model 1";

pub fn write_model(model: &BlendshapeModel) -> String {
    let n = model.n_vertices();
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}\nn {n}\nk_id {}\nk_exp {}", model.k_id(), model.k_exp());
    s.push_str("mean\n");
    for v in model.mean() {
        let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
    }
    for (name, basis, k) in [("id_basis", model.id_basis(), model.k_id()), ("exp_basis", model.exp_basis(), model.k_exp())] {
        s.push_str(name);
        s.push('\n');
        if k > 0 {
            for row in basis.chunks(k) {
                let line: Vec<String> = row.iter().map(f64::to_string).collect();
                s.push_str(&line.join(" "));
                s.push('\n');
            }
        }
    }
    for (part, idx) in model.parts() {
        let _ = write!(s, "part {}", part.code());
        for i in idx {
            let _ = write!(s, " {i}");
        }
        s.push('\n');
    }
    s.push_str("landmarks");
    for l in model.landmarks() {
        let _ = write!(s, " {l}");
    }
    s.push_str("\nend\n");
    s
}

pub fn save_model(model: &BlendshapeModel, path: &Path) -> Result<()> {
    std::fs::write(path, write_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<BlendshapeModel> {
    read_model(&std::fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        for (no, raw) in self.inner.by_ref() {
            self.last = no + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                return Ok(line);
            }
        }
        Err(format_err("model file truncated"))
    }

    fn err(&self, msg: impl std::fmt::Display) -> crate::error::Error {
        format_err(format!("model line {}: {msg}", self.last))
    }

    fn header(&mut self, key: &str) -> Result<usize> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => v.trim().parse().map_err(|_| self.err(format!("bad value for {key}"))),
            _ => Err(self.err(format!("expected '{key} <count>'"))),
        }
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        let line = self.next()?;
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| self.err("bad number"))?;
        if vals.len() != count {
            return Err(self.err(format!("expected {count} values, got {}", vals.len())));
        }
        Ok(vals)
    }

    fn keyword(&mut self, key: &str) -> Result<()> {
        if self.next()? != key {
            return Err(self.err(format!("expected '{key}'")));
        }
        Ok(())
    }
}

fn parse_indices(tokens: std::str::SplitWhitespace<'_>) -> Option<Vec<usize>> {
    tokens.map(|t| t.parse().ok()).collect()
}

pub fn read_model(text: &str) -> Result<BlendshapeModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err("not a prdl model file"));
    }
    let n = lines.header("n")?;
    let k_id = lines.header("k_id")?;
    let k_exp = lines.header("k_exp")?;
    lines.keyword("mean")?;
    let mut mean: Vec<Vec3> = Vec::with_capacity(n);
    for _ in 0..n {
        let v = lines.floats(3)?;
        mean.push([v[0], v[1], v[2]]);
    }
    let mut bases = Vec::new();
    for (name, k) in [("id_basis", k_id), ("exp_basis", k_exp)] {
        lines.keyword(name)?;
        let mut b = Vec::with_capacity(3 * n * k);
        if k > 0 {
            for _ in 0..3 * n {
                b.extend(lines.floats(k)?);
            }
        }
        bases.push(b);
    }
    let mut parts = BTreeMap::new();
    let landmarks;
    loop {
        let line = lines.next()?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("part") => {
                let part: PartLabel = tokens.next().ok_or_else(|| lines.err("missing part code"))?.parse()?;
                let idx = parse_indices(tokens).ok_or_else(|| lines.err("bad vertex index"))?;
                if parts.insert(part, idx).is_some() {
                    return Err(lines.err(format!("part {part} listed twice")));
                }
            }
            Some("landmarks") => {
                landmarks = parse_indices(tokens).ok_or_else(|| lines.err("bad landmark index"))?;
                break;
            }
            _ => return Err(lines.err("expected 'part' or 'landmarks'")),
        }
    }
    lines.keyword("end")?;
    let id = bases.remove(0);
    let exp = bases.remove(0);
    BlendshapeModel::new(mean, id, k_id, exp, k_exp, parts, landmarks).map_err(|e| format_err(format!("invalid model: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gen_toy_model;

    #[test]
    fn round_trip_is_lossless() {
        let t = gen_toy_model(5, 200, 4, 3).unwrap();
        let text = write_model(&t.model);
        assert_eq!(read_model(&text).unwrap(), t.model);
        assert_eq!(write_model(&read_model(&text).unwrap()), text);
    }

    #[test]
    fn malformed_files_are_format_errors() {
        use crate::error::Error;
        let t = gen_toy_model(5, 20, 1, 1).unwrap();
        let text = write_model(&t.model);
        for bad in [
            text.replace("prdl-model 1", "obj"),
            text.replace("k_id 1", "k_id x"),
            text.replace("\nend\n", "\n"),
            text.replace("landmarks", "landmarks -3"),
            text.replacen("part 1", "part 1 999", 1),
        ] {
            assert!(matches!(read_model(&bad), Err(Error::Format(_))), "accepted:\n{}", &bad[..60]);
        }
    }
}
