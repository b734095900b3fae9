//! Text dataset format.
//!
//! ```text
//! #xmodal-dataset v1 N=2 dim=32 labels=8
//! <tuple_id>\t<modality>\t<f1,f2,...>\t<l1,l2,...>
//! ```
//!
//! `dim` is a single width or one width per modality. Features are written
//! with 17 significant digits so a save/load round trip is bit-exact.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{default_vocabulary, LabelSet, Tuple, TupleDataset};
use crate::error::{Error, Result};

pub const HEADER_TAG: &str = "#xmodal-dataset v1";

pub fn write_dataset<W: Write>(ds: &TupleDataset, mut out: W) -> std::io::Result<()> {
    let dims = ds.dims();
    let dim_field = if dims.iter().all(|&d| d == dims[0]) {
        dims[0].to_string()
    } else {
        crate::config::join_list(dims)
    };
    writeln!(
        out,
        "{HEADER_TAG} N={} dim={dim_field} labels={}",
        ds.num_modalities(),
        ds.label_vocabulary().len()
    )?;
    let mut line = String::new();
    for rec in ds.records() {
        line.clear();
        write!(line, "{}\t{}\t", rec.tuple_id, rec.modality).unwrap();
        for (i, x) in rec.features.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            write!(line, "{x:.16e}").unwrap();
        }
        line.push('\t');
        line.push_str(&crate::config::join_list(
            &rec.labels.iter().copied().collect::<Vec<_>>(),
        ));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_dataset(ds: &TupleDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_dataset(ds, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<TupleDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

struct Header {
    n: usize,
    dims: Vec<usize>,
    labels: usize,
}

fn parse_header(line: &str, path: &Path) -> Result<Header> {
    let err = |detail: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        detail,
    };
    let rest = line
        .strip_prefix(HEADER_TAG)
        .ok_or_else(|| err(format!("expected header starting with `{HEADER_TAG}`")))?;
    let (mut n, mut dims, mut labels) = (None, None, None);
    for field in rest.split_whitespace() {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| err(format!("malformed header field `{field}`")))?;
        let bad = |_| err(format!("cannot parse header field `{field}`"));
        match k {
            "N" => n = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "dim" => dims = Some(crate::config::parse_list::<usize>(v).map_err(&bad)?),
            "labels" => labels = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            _ => return Err(err(format!("unknown header field `{k}`"))),
        }
    }
    let (Some(n), Some(mut dims), Some(labels)) = (n, dims, labels) else {
        return Err(err("header needs N, dim and labels".into()));
    };
    if n < 2 {
        return Err(err(format!("N must be at least 2, got {n}")));
    }
    if dims.len() == 1 {
        dims = vec![dims[0]; n];
    }
    if dims.len() != n || dims.contains(&0) {
        return Err(err(format!(
            "dim must be one positive width or {n} of them"
        )));
    }
    Ok(Header { n, dims, labels })
}

struct Pending {
    id: u64,
    labels: LabelSet,
    label_line: usize,
    views: Vec<Option<Vec<f64>>>,
}

/// Parses the text format; `path` is only used in error messages.
pub fn parse_dataset(text: &str, path: &Path) -> Result<TupleDataset> {
    let path: PathBuf = path.to_path_buf();
    let parse_err = |line: usize, detail: String| Error::Parse {
        path: path.clone(),
        line,
        detail,
    };

    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let Some(first) = lines.first() else {
        return Err(parse_err(1, "empty file".into()));
    };
    let header = parse_header(first.trim_end_matches(['\n', '\r']), &path)?;
    if let Some(last) = lines.last().filter(|l| !l.ends_with('\n')) {
        let n = lines.len();
        return Err(parse_err(
            n,
            format!(
                "line is incomplete (file truncated?): `{}`; last complete line is {}",
                last.chars().take(40).collect::<String>(),
                n - 1
            ),
        ));
    }

    let mut pending: Vec<Pending> = Vec::new();
    let mut slot: HashMap<u64, usize> = HashMap::new();
    for (i, raw) in lines.iter().enumerate().skip(1) {
        let line_no = i + 1;
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                line_no,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|e| parse_err(line_no, format!("tuple id `{}`: {e}", fields[0])))?;
        let modality: usize = fields[1]
            .parse()
            .map_err(|e| parse_err(line_no, format!("modality `{}`: {e}", fields[1])))?;
        if modality >= header.n {
            return Err(parse_err(
                line_no,
                format!("modality {modality} out of range for N={}", header.n),
            ));
        }
        let features: Vec<f64> = crate::config::parse_list(fields[2])
            .map_err(|e| parse_err(line_no, format!("features: {e}")))?;
        if features.len() != header.dims[modality] {
            return Err(parse_err(
                line_no,
                format!(
                    "expected {} features for modality {modality}, got {}",
                    header.dims[modality],
                    features.len()
                ),
            ));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(line_no, "non-finite feature".into()));
        }
        let labels: LabelSet = crate::config::parse_list::<u32>(fields[3])
            .map_err(|e| parse_err(line_no, format!("labels: {e}")))?
            .into_iter()
            .collect();
        if let Some(l) = labels.iter().find(|&&l| l as usize >= header.labels) {
            return Err(parse_err(
                line_no,
                format!("label {l} outside vocabulary of {}", header.labels),
            ));
        }

        let k = *slot.entry(id).or_insert_with(|| {
            pending.push(Pending {
                id,
                labels: labels.clone(),
                label_line: line_no,
                views: vec![None; header.n],
            });
            pending.len() - 1
        });
        let p = &mut pending[k];
        if p.labels != labels {
            return Err(Error::Validation(format!(
                "{}: tuple {id} has labels {:?} on line {line_no} but {:?} on line {}",
                path.display(),
                labels,
                p.labels,
                p.label_line
            )));
        }
        if p.views[modality].is_some() {
            return Err(parse_err(
                line_no,
                format!("duplicate record for tuple {id} modality {modality}"),
            ));
        }
        p.views[modality] = Some(features);
    }

    let mut tuples = Vec::with_capacity(pending.len());
    for p in pending {
        let present: Vec<usize> = (0..header.n).filter(|&j| p.views[j].is_some()).collect();
        if present.len() != header.n {
            return Err(Error::Validation(format!(
                "{}: tuple {} has records for modalities {present:?}, expected all of 0..{}",
                path.display(),
                p.id,
                header.n
            )));
        }
        tuples.push(Tuple {
            id: p.id,
            labels: p.labels,
            views: p.views.into_iter().map(Option::unwrap).collect(),
        });
    }
    TupleDataset::new(header.dims, default_vocabulary(header.labels), tuples)
}
