use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{on_likert_grid, AttributeName, Dataset, Rating, MEAN_LISTENER};
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 4] = ["utterance_id", "system_id", "listener_id", "group_key"];

fn csv_line(err: &csv::Error) -> u64 {
    err.position().map(|p| p.line()).unwrap_or(0)
}

fn csv_err(err: csv::Error) -> Error {
    Error::Parse {
        line: csv_line(&err),
        message: err.to_string(),
    }
}

/// Reads a ratings table. An empty `attributes` list adopts the attribute
/// columns found in the header.
pub fn read_ratings<R: Read>(
    reader: R,
    attributes: &[AttributeName],
    likert_levels: u32,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < FIXED_COLUMNS.len() + 1
        || header.iter().take(4).ne(FIXED_COLUMNS.iter().copied())
    {
        return Err(Error::Schema(format!(
            "header must start with {} followed by attribute columns, got {:?}",
            FIXED_COLUMNS.join(","),
            header.iter().collect::<Vec<_>>()
        )));
    }
    let header_attrs = header
        .iter()
        .skip(4)
        .map(AttributeName::new)
        .collect::<Result<Vec<_>>>()?;
    let attributes = if attributes.is_empty() {
        header_attrs.clone()
    } else {
        attributes.to_vec()
    };
    if let Some(unknown) = header_attrs.iter().find(|a| !attributes.contains(a)) {
        return Err(Error::Schema(format!("unknown attribute column {unknown}")));
    }
    let mut column_of = Vec::with_capacity(attributes.len());
    for a in &attributes {
        let pos = header_attrs
            .iter()
            .position(|h| h == a)
            .ok_or_else(|| Error::Schema(format!("missing attribute column {a}")))?;
        column_of.push(4 + pos);
    }

    let mut ratings = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| -> Result<String> {
            let v = &rec[i];
            if v.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: format!("empty {} field", header.get(i).unwrap_or("?")),
                });
            }
            Ok(v.to_string())
        };
        let listener_id = field(2)?;
        if listener_id == MEAN_LISTENER {
            return Err(Error::Parse {
                line,
                message: format!("listener id {MEAN_LISTENER} is reserved"),
            });
        }
        let mut scores = Vec::with_capacity(column_of.len());
        for &c in &column_of {
            let raw = &rec[c];
            let s: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid score {raw:?} in column {}", &header[c]),
            })?;
            if !on_likert_grid(s, likert_levels) {
                return Err(Error::Parse {
                    line,
                    message: format!("score {raw} off Likert grid 1..={likert_levels}"),
                });
            }
            scores.push(s);
        }
        let rating = Rating {
            utterance_id: field(0)?,
            system_id: field(1)?,
            listener_id,
            group_key: field(3)?,
            scores,
        };
        if !seen.insert((rating.utterance_id.clone(), rating.listener_id.clone())) {
            return Err(Error::Duplicate {
                utterance_id: rating.utterance_id,
                listener_id: rating.listener_id,
                line,
            });
        }
        ratings.push(rating);
    }
    Dataset::new(attributes, likert_levels, ratings, BTreeMap::new())
}

pub fn load_ratings_csv(
    path: impl AsRef<Path>,
    attributes: &[AttributeName],
    likert_levels: u32,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ratings(file, attributes, likert_levels)
}

pub fn write_ratings<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let ctx = |source| Error::Csv {
        context: "writing ratings".into(),
        source,
    };
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(ds.attributes().iter().map(AttributeName::as_str));
    w.write_record(&header).map_err(ctx)?;
    for r in ds.ratings() {
        let mut row = vec![
            r.utterance_id.clone(),
            r.system_id.clone(),
            r.listener_id.clone(),
            r.group_key.clone(),
        ];
        row.extend(r.scores.iter().map(|s| s.to_string()));
        w.write_record(&row).map_err(ctx)?;
    }
    w.flush().map_err(|e| Error::io("<ratings>", e))
}

pub fn write_ratings_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ratings(ds, file)
}

/// Reads a feature table `utterance_id,f0,...,f{d-1}`.
pub fn read_features<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let expected = (0..header.len().saturating_sub(1)).map(|i| format!("f{i}"));
    if header.len() < 2
        || &header[0] != "utterance_id"
        || header
            .iter()
            .skip(1)
            .ne(expected.collect::<Vec<_>>().iter().map(String::as_str))
    {
        return Err(Error::Schema(
            "features header must be utterance_id,f0,f1,...".into(),
        ));
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let v = rec
            .iter()
            .skip(1)
            .map(|x| {
                x.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid feature value {x:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if out.insert(rec[0].to_string(), v).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate feature row for {:?}", &rec[0]),
            });
        }
    }
    Ok(out)
}

pub fn load_features_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<f64>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(file)
}

pub fn write_features<W: Write>(features: &BTreeMap<String, Vec<f64>>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let ctx = |source| Error::Csv {
        context: "writing features".into(),
        source,
    };
    let dim = features.values().next().map_or(0, Vec::len);
    let mut header = vec!["utterance_id".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(ctx)?;
    for (k, v) in features {
        let mut row = vec![k.clone()];
        row.extend(v.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(ctx)?;
    }
    w.flush().map_err(|e| Error::io("<features>", e))
}

pub fn write_features_csv(
    features: &BTreeMap<String, Vec<f64>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_features(features, file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quality() -> Vec<AttributeName> {
        vec![AttributeName::new("quality").unwrap()]
    }

    #[test]
    fn reads_three_rows() {
        let csv = "utterance_id,system_id,listener_id,group_key,quality\n\
                   u1,A,l1,A,3\nu2,A,l1,A,4\nu3,B,l2,B,1\n";
        let ds = read_ratings(csv.as_bytes(), &quality(), 5).unwrap();
        assert_eq!(ds.ratings().len(), 3);
        assert_eq!(ds.attributes().len(), 1);
        assert_eq!(ds.ratings()[1].scores, vec![4.0]);
    }

    #[test]
    fn header_only_is_valid() {
        let csv = "utterance_id,system_id,listener_id,group_key,quality\n";
        let ds = read_ratings(csv.as_bytes(), &quality(), 5).unwrap();
        assert!(ds.ratings().is_empty());
    }

    #[test]
    fn off_grid_score_names_line() {
        let csv =
            "utterance_id,system_id,listener_id,group_key,quality\nu1,A,l1,A,3\nu2,A,l1,A,6\n";
        let err = read_ratings(csv.as_bytes(), &quality(), 5).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("off Likert grid"), "{message}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn malformed_row_names_line() {
        let csv = "utterance_id,system_id,listener_id,group_key,quality\nu1,A,l1\n";
        let err = read_ratings(csv.as_bytes(), &quality(), 5).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let csv = "utterance_id,system_id,listener_id,group_key,quality\nu1,A,l1,A,x\n";
        let err = read_ratings(csv.as_bytes(), &quality(), 5).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn unknown_attribute_column() {
        let csv = "utterance_id,system_id,listener_id,group_key,quality,mood\nu1,A,l1,A,3,2\n";
        let err = read_ratings(csv.as_bytes(), &quality(), 5).unwrap_err();
        assert!(matches!(err, Error::Schema(m) if m.contains("mood")));
        let csv = "utt,system_id,listener_id,group_key,quality\n";
        assert!(matches!(
            read_ratings(csv.as_bytes(), &quality(), 5),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn duplicate_pair_rejected() {
        let csv =
            "utterance_id,system_id,listener_id,group_key,quality\nu1,A,l1,A,3\nu1,A,l1,A,4\n";
        let err = read_ratings(csv.as_bytes(), &quality(), 5).unwrap_err();
        assert!(matches!(err, Error::Duplicate { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn reserved_listener_rejected() {
        let csv = "utterance_id,system_id,listener_id,group_key,quality\nu1,A,__MEAN__,A,3\n";
        assert!(read_ratings(csv.as_bytes(), &quality(), 5).is_err());
    }

    #[test]
    fn features_round_trip() {
        let mut f = BTreeMap::new();
        f.insert("u1".to_string(), vec![0.1, -2.5e-7]);
        f.insert("u2".to_string(), vec![1.0 / 3.0, 4.0]);
        let mut buf = Vec::new();
        write_features(&f, &mut buf).unwrap();
        assert_eq!(read_features(buf.as_slice()).unwrap(), f);
        assert!(read_features("utterance_id,g0\nu1,1\n".as_bytes()).is_err());
    }
}
