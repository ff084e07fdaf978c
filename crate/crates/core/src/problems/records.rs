//! Comma-delimited polling records.

use std::io;

use crate::error::{Error, Result};

/// One poll response. `state` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteRecord {
    pub gender: u8,
    pub ethnicity: u8,
    pub state: usize,
    pub vote: u8,
}

const COLUMNS: [&str; 4] = ["gender", "ethnicity", "state", "vote"];

fn ingestion(row: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        row,
        message: message.into(),
    }
}

fn binary(field: &str, column: &str, row: usize) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(ingestion(row, format!("column {column} must be 0 or 1, got {other:?}"))),
    }
}

/// Reads records from text with a header row naming the four required
/// columns; other columns are ignored. Rows are numbered by line, header = 1.
pub fn read_vote_records<R: io::Read>(reader: R) -> Result<Vec<VoteRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| ingestion(1, e.to_string()))?.clone();
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| ingestion(1, format!("missing column {name}")))?;
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| ingestion(row, e.to_string()))?;
        let get = |k: usize| rec.get(idx[k]).unwrap_or("");
        let state_field = get(2).trim();
        let state: usize = state_field
            .parse()
            .map_err(|_| ingestion(row, format!("column state must be a positive integer, got {state_field:?}")))?;
        if state == 0 {
            return Err(ingestion(row, "column state is 1-based, got 0"));
        }
        out.push(VoteRecord {
            gender: binary(get(0), "gender", row)?,
            ethnicity: binary(get(1), "ethnicity", row)?,
            state,
            vote: binary(get(3), "vote", row)?,
        });
    }
    Ok(out)
}

pub fn write_vote_records<W: io::Write>(writer: W, records: &[VoteRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::Domain(format!("writing records: {e}"));
    w.write_record(COLUMNS).map_err(io_err)?;
    for r in records {
        w.write_record([
            r.gender.to_string(),
            r.ethnicity.to_string(),
            r.state.to_string(),
            r.vote.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Domain(format!("writing records: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_with_extra_columns_in_any_order() {
        let text = "vote,age,state,gender,ethnicity\n1,30,2,0,1\n0,55,1,1,0\n";
        let recs = read_vote_records(text.as_bytes()).unwrap();
        assert_eq!(
            recs,
            vec![
                VoteRecord { gender: 0, ethnicity: 1, state: 2, vote: 1 },
                VoteRecord { gender: 1, ethnicity: 0, state: 1, vote: 0 },
            ]
        );
    }

    #[test]
    fn malformed_rows_name_the_row() {
        let bad_vote = "gender,ethnicity,state,vote\n0,0,1,1\n0,0,1,2\n";
        match read_vote_records(bad_vote.as_bytes()) {
            Err(Error::Ingestion { row, message }) => {
                assert_eq!(row, 3);
                assert!(message.contains("vote"));
            }
            other => panic!("{other:?}"),
        }
        let bad_state = "gender,ethnicity,state,vote\n0,0,x,1\n";
        assert!(matches!(read_vote_records(bad_state.as_bytes()), Err(Error::Ingestion { row: 2, .. })));
        let missing = "gender,ethnicity,vote\n0,0,1\n";
        assert!(matches!(read_vote_records(missing.as_bytes()), Err(Error::Ingestion { row: 1, .. })));
        let short = "gender,ethnicity,state,vote\n0,0,1\n";
        assert!(matches!(read_vote_records(short.as_bytes()), Err(Error::Ingestion { row: 2, .. })));
    }

    #[test]
    fn round_trip() {
        let recs = vec![
            VoteRecord { gender: 1, ethnicity: 0, state: 7, vote: 1 },
            VoteRecord { gender: 0, ethnicity: 1, state: 3, vote: 0 },
        ];
        let mut buf = Vec::new();
        write_vote_records(&mut buf, &recs).unwrap();
        assert_eq!(read_vote_records(buf.as_slice()).unwrap(), recs);
    }
}
