use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, GapSample, Result};

pub const GAP_HEADER: [&str; 11] = [
    "ID",
    "Text",
    "Pronoun",
    "Pronoun-offset",
    "A",
    "A-offset",
    "A-coref",
    "B",
    "B-offset",
    "B-coref",
    "URL",
];

pub fn parse_tsv(path: &Path) -> Result<Vec<GapSample>> {
    let raw = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_tsv_str(&raw)
}

/// Parse GAP TSV content. Row numbers in errors are 1-based file lines.
///
/// Fields are split on tabs only; GAP text contains unescaped quotes, so no
/// CSV quoting rules apply.
pub fn parse_tsv_str(raw: &str) -> Result<Vec<GapSample>> {
    let mut lines = raw.lines().enumerate();
    let (_, header) = lines.next().ok_or(DataError::Malformed {
        row: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    if cols != GAP_HEADER {
        return Err(DataError::Malformed {
            row: 1,
            msg: format!("header {cols:?} does not match the GAP column set"),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != GAP_HEADER.len() {
            return Err(DataError::Malformed {
                row,
                msg: format!("expected {} fields, found {}", GAP_HEADER.len(), f.len()),
            });
        }
        let offset = |s: &str, col: &str| {
            s.trim().parse::<usize>().map_err(|_| DataError::Malformed {
                row,
                msg: format!("{col}: {s:?} is not an offset"),
            })
        };
        let flag = |s: &str, col: &str| match s.trim().to_ascii_lowercase().as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(DataError::Malformed {
                row,
                msg: format!("{col}: {s:?} is not a boolean"),
            }),
        };
        out.push(GapSample::new(
            f[0],
            f[1],
            (f[2], offset(f[3], "Pronoun-offset")?),
            (f[4], offset(f[5], "A-offset")?),
            (f[7], offset(f[8], "B-offset")?),
            flag(f[6], "A-coref")?,
            flag(f[9], "B-coref")?,
            f[10],
        )?);
    }
    Ok(out)
}

fn flag_str(b: bool) -> &'static str {
    if b {
        "TRUE"
    } else {
        "FALSE"
    }
}

pub fn write_tsv(path: &Path, samples: &[GapSample]) -> Result<()> {
    let mut buf = GAP_HEADER.join("\t");
    buf.push('\n');
    for s in samples {
        let row = [
            s.id.clone(),
            s.text.clone(),
            s.pronoun.surface.clone(),
            s.pronoun.offset.to_string(),
            s.a.surface.clone(),
            s.a.offset.to_string(),
            flag_str(s.a_coref).to_string(),
            s.b.surface.clone(),
            s.b.offset.to_string(),
            flag_str(s.b_coref).to_string(),
            s.url.clone(),
        ];
        buf.push_str(&row.join("\t"));
        buf.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(buf.as_bytes()).map_err(|e| DataError::io(path, e))
}
