//! Edge-list text format for user graphs: one JSON header line, then one
//! `src,dst,weight` line per directed edge.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{KgError, UserSpecificGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeListHeader {
    pub owner: usize,
    /// Embedding dimension the weights were scored with.
    pub d: usize,
    pub n_items: usize,
    pub n_edges: usize,
    pub nodes: Vec<usize>,
}

pub fn write_edge_list<W: Write>(mut out: W, g: &UserSpecificGraph, d: usize) -> Result<(), KgError> {
    let header =
        EdgeListHeader { owner: g.owner(), d, n_items: g.n_items(), n_edges: g.n_edges(), nodes: g.nodes().to_vec() };
    serde_json::to_writer(&mut out, &header)?;
    writeln!(out)?;
    for &i in g.nodes() {
        for &(j, w) in g.neighbours(i) {
            writeln!(out, "{},{},{:?}", i, j, w)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_edge_list<R: BufRead>(input: R) -> Result<(EdgeListHeader, UserSpecificGraph), KgError> {
    let mut lines = input.lines();
    let first = lines.next().ok_or(KgError::Parse { line: 1, message: "missing header".into() })??;
    let header: EdgeListHeader =
        serde_json::from_str(&first).map_err(|e| KgError::Parse { line: 1, message: e.to_string() })?;
    let mut rows = vec![Vec::new(); header.n_items];
    let mut n_edges = 0;
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |message: String| KgError::Parse { line: lineno, message };
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        }
        let src: usize = fields[0].parse().map_err(|_| bad(format!("bad src {:?}", fields[0])))?;
        let dst: usize = fields[1].parse().map_err(|_| bad(format!("bad dst {:?}", fields[1])))?;
        let w: f64 = fields[2].parse().map_err(|_| bad(format!("bad weight {:?}", fields[2])))?;
        rows.get_mut(src).ok_or_else(|| bad(format!("src {} out of range", src)))?.push((dst, w));
        n_edges += 1;
    }
    if n_edges != header.n_edges {
        return Err(KgError::Parse {
            line: 1,
            message: format!("header promises {} edges, file has {}", header.n_edges, n_edges),
        });
    }
    let g = UserSpecificGraph::from_rows(header.owner, header.n_items, &header.nodes, rows)?;
    Ok((header, g))
}
