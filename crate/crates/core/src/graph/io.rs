//! Text edge-list format.
//!
//! One `u v` or `u v w` per line, 0-based vertex ids, `#` starts a
//! comment. An optional first line `n m` declares the vertex count and
//! the number of edge lines that follow; a two-token first line is
//! treated as that header only when the rest of the file is consistent
//! with it (`m` matching edge lines, all ids below `n`), otherwise it is
//! read as an edge.

use std::io::Write as IoWrite;

use super::{Edge, GraphError};

#[derive(Debug)]
pub struct ParsedGraph {
    pub edges: Vec<Edge>,
    /// Vertex count: declared by the header, or max id + 1.
    pub n: usize,
}

pub fn parse_edge_list(text: &str) -> Result<ParsedGraph, GraphError> {
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut nums = Vec::with_capacity(3);
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| GraphError::Parse {
                line: lineno + 1,
                reason: format!("not a number: {tok:?}"),
            })?;
            nums.push(v);
        }
        if nums.len() < 2 || nums.len() > 3 {
            return Err(GraphError::Parse {
                line: lineno + 1,
                reason: format!("expected 2 or 3 fields, found {}", nums.len()),
            });
        }
        rows.push((lineno + 1, nums));
    }
    if rows.is_empty() {
        return Err(GraphError::Empty);
    }

    // Header probe: a 2-field first row (a, b) is a header iff b equals
    // the number of remaining rows and every id stays below a.
    let mut start = 0usize;
    let mut declared_n: Option<usize> = None;
    if rows[0].1.len() == 2 {
        let (a, b) = (rows[0].1[0], rows[0].1[1]);
        let header_ok = a >= 0.0
            && b >= 0.0
            && a.fract() == 0.0
            && b.fract() == 0.0
            && (b as usize) == rows.len() - 1
            && rows[1..].iter().all(|(_, nums)| {
                nums[0].fract() == 0.0
                    && nums[1].fract() == 0.0
                    && nums[0] >= 0.0
                    && nums[1] >= 0.0
                    && (nums[0] as usize) < a as usize
                    && (nums[1] as usize) < a as usize
            });
        if header_ok {
            declared_n = Some(a as usize);
            start = 1;
        }
    }

    let mut edges = Vec::with_capacity(rows.len() - start);
    let mut max_id = 0u32;
    for (lineno, nums) in &rows[start..] {
        let check = |x: f64| -> Result<u32, GraphError> {
            if x < 0.0 || x.fract() != 0.0 || x > u32::MAX as f64 {
                Err(GraphError::Parse {
                    line: *lineno,
                    reason: format!("bad vertex id {x}"),
                })
            } else {
                Ok(x as u32)
            }
        };
        let u = check(nums[0])?;
        let v = check(nums[1])?;
        let w = nums.get(2).copied().unwrap_or(1.0);
        max_id = max_id.max(u).max(v);
        edges.push(Edge::new(u, v, w));
    }
    let n = match declared_n {
        Some(n) => {
            if let Some(e) = edges.iter().find(|e| e.src as usize >= n || e.dst as usize >= n) {
                return Err(GraphError::VertexOutOfRange {
                    id: e.src.max(e.dst),
                    n,
                });
            }
            n
        }
        None => {
            if edges.is_empty() {
                return Err(GraphError::Empty);
            }
            max_id as usize + 1
        }
    };
    Ok(ParsedGraph { edges, n })
}

pub fn read_edge_list(path: &std::path::Path) -> Result<ParsedGraph, GraphError> {
    let file = std::fs::File::open(path)?;
    let mut text = String::new();
    std::io::BufReader::new(file).read_to_string(&mut text)?;
    parse_edge_list(&text)
}

use std::io::Read;

/// Write undirected pairs with a header line, one pair per line.
pub fn write_edge_list(
    out: &mut dyn IoWrite,
    n: u32,
    pairs: &[(u32, u32)],
) -> std::io::Result<()> {
    writeln!(out, "{} {}", n, pairs.len())?;
    for &(a, b) in pairs {
        writeln!(out, "{a} {b}")?;
    }
    Ok(())
}

/// Double undirected pairs into directed edges (both orientations).
pub fn doubled(pairs: &[(u32, u32)]) -> Vec<Edge> {
    let mut edges = Vec::with_capacity(pairs.len() * 2);
    for &(a, b) in pairs {
        edges.push(Edge::new(a, b, 1.0));
        edges.push(Edge::new(b, a, 1.0));
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_edges_with_comments() {
        let g = parse_edge_list("# a comment\n0 1\n1 2 2.5\n").unwrap();
        assert_eq!(g.n, 3);
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.edges[1].weight, 2.5);
    }

    #[test]
    fn header_is_recognized_when_consistent() {
        let g = parse_edge_list("5 2\n0 1\n3 4\n").unwrap();
        assert_eq!(g.n, 5);
        assert_eq!(g.edges.len(), 2);
    }

    #[test]
    fn inconsistent_header_is_an_edge() {
        // "7 3" cannot be a header (3 != 1 remaining line), so it is the
        // edge 7 -> 3.
        let g = parse_edge_list("7 3\n0 1\n").unwrap();
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.n, 8);
    }

    #[test]
    fn header_bounds_are_enforced() {
        assert!(matches!(
            parse_edge_list("2 1\n0 5\n"),
            // "2 1" is not a valid header for an edge touching 5, so it
            // parses as two edges with n = 6.
            Ok(ParsedGraph { n: 6, .. })
        ));
    }

    #[test]
    fn bad_tokens_error_with_line() {
        match parse_edge_list("0 1\nx y\n") {
            Err(GraphError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn roundtrip_through_writer() {
        let pairs = vec![(0u32, 1u32), (1, 2), (2, 3)];
        let mut buf = Vec::new();
        write_edge_list(&mut buf, 4, &pairs).unwrap();
        let g = parse_edge_list(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(g.n, 4);
        assert_eq!(g.edges.len(), 3);
    }
}
