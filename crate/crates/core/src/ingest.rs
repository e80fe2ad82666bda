//! Normalisation of external wide-CSV KPI exports into training matrices.
//!
//! The input is a CSV whose header names map onto graph node names — exactly,
//! or through an explicit header → node mapping. Output columns follow graph
//! node order. Rows with missing (blank) cells are dropped and counted.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::fitting::SampleMatrix;
use crate::floats;
use crate::graph::Dag;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("duplicate header {0:?}")]
    DuplicateHeader(String),
    #[error("graph nodes not found in the CSV header: {}", .0.join(", "))]
    UnmappedNodes(Vec<String>),
    #[error("cannot parse cell at row {row}, column {name:?}: {value:?}")]
    BadCell {
        row: usize,
        name: String,
        value: String,
    },
    #[error("csv: {0}")]
    Csv(String),
}

/// Result of an ingestion pass.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestOutcome {
    pub matrix: SampleMatrix,
    /// Rows dropped because at least one mapped cell was blank.
    pub dropped_rows: usize,
}

/// Reorders and filters a wide KPI CSV into a node-ordered matrix.
///
/// `mapping`, when given, translates CSV header names to graph node names;
/// headers without a mapping entry fall back to their own name. Unmapped
/// extra columns are ignored.
pub fn ingest(
    csv_text: &str,
    dag: &Dag,
    mapping: Option<&BTreeMap<String, String>>,
) -> Result<IngestOutcome, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(csv_text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| IngestError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();

    // Header → node name, honouring the explicit mapping.
    let mut node_for_header: Vec<String> = Vec::with_capacity(headers.len());
    for h in &headers {
        let node = mapping
            .and_then(|m| m.get(h))
            .cloned()
            .unwrap_or_else(|| h.clone());
        node_for_header.push(node);
    }
    let mut column_of_node: BTreeMap<&str, usize> = BTreeMap::new();
    for (idx, node) in node_for_header.iter().enumerate() {
        if dag.names().iter().any(|n| n == node)
            && column_of_node.insert(node.as_str(), idx).is_some()
        {
            return Err(IngestError::DuplicateHeader(headers[idx].clone()));
        }
    }
    let missing: Vec<String> = dag
        .names()
        .iter()
        .filter(|n| !column_of_node.contains_key(n.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::UnmappedNodes(missing));
    }
    let order: Vec<usize> = dag
        .names()
        .iter()
        .map(|n| column_of_node[n.as_str()])
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    'rows: for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        let mut row = Vec::with_capacity(order.len());
        for &col in &order {
            let cell = record.get(col).unwrap_or("");
            if cell.is_empty() {
                dropped += 1;
                continue 'rows;
            }
            let value = floats::from_decimal(cell).map_err(|_| IngestError::BadCell {
                row: r,
                name: headers[col].clone(),
                value: cell.to_string(),
            })?;
            row.push(value);
        }
        rows.push(row);
    }
    let matrix = SampleMatrix::from_rows(rows)
        .map_err(|e| IngestError::Csv(e.to_string()))?;
    Ok(IngestOutcome {
        matrix,
        dropped_rows: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dag3() -> Dag {
        Dag::with_names(
            3,
            &[(0, 1), (1, 2)],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap()
    }

    #[test]
    fn header_permutation_is_reordered() {
        let out = ingest("c,a,b\n3,1,2\n30,10,20\n", &dag3(), None).unwrap();
        assert_eq!(out.dropped_rows, 0);
        assert_eq!(out.matrix.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(out.matrix.row(1), &[10.0, 20.0, 30.0]);
    }

    #[test]
    fn blank_cells_drop_rows_and_count() {
        let text = "a,b,c\n1,2,3\n,2,3\n1,,3\n1,2,\n4,5,6\n";
        let out = ingest(text, &dag3(), None).unwrap();
        assert_eq!(out.dropped_rows, 3);
        assert_eq!(out.matrix.rows(), 2);
    }

    #[test]
    fn duplicate_header_is_named() {
        let err = ingest("a,a,b,c\n1,1,2,3\n", &dag3(), None).unwrap_err();
        match err {
            IngestError::DuplicateHeader(name) => assert_eq!(name, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unmapped_nodes_are_listed() {
        let err = ingest("a,b\n1,2\n", &dag3(), None).unwrap_err();
        match err {
            IngestError::UnmappedNodes(names) => assert_eq!(names, vec!["c".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mapping_translates_headers_and_extras_are_ignored() {
        let mut map = BTreeMap::new();
        map.insert("latency_a".to_string(), "a".to_string());
        map.insert("latency_b".to_string(), "b".to_string());
        map.insert("latency_c".to_string(), "c".to_string());
        let text = "latency_a,unrelated,latency_b,latency_c\n1,x,2,3\n";
        let out = ingest(text, &dag3(), Some(&map)).unwrap();
        assert_eq!(out.matrix.row(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn bad_cell_is_reported_with_row_and_column() {
        let err = ingest("a,b,c\n1,2,3\n1,oops,3\n", &dag3(), None).unwrap_err();
        match err {
            IngestError::BadCell { row, name, value } => {
                assert_eq!(row, 1);
                assert_eq!(name, "b");
                assert_eq!(value, "oops");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
