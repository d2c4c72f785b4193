use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::{GaussianNetwork, NodeSpec};
use crate::cone::SymMatrix;
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    nodes: Vec<NodeFile>,
    edges: Vec<[usize; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct NodeFile {
    id: usize,
    dim: usize,
    W: Vec<Vec<f64>>,
    R: Vec<Vec<f64>>,
    y: Vec<f64>,
    A: BTreeMap<String, Vec<Vec<f64>>>,
}

fn rect(rows: &[Vec<f64>], at: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::Parse(format!("{at}: empty matrix")));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Parse(format!("{at}: ragged rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn sym(rows: &[Vec<f64>], at: &str) -> Result<SymMatrix> {
    SymMatrix::from_rows(rows).map_err(|e| Error::Parse(format!("{at}: {e}")))
}

/// Parses an instance document, then validates it.
pub fn parse(text: &str) -> Result<GaussianNetwork> {
    let file: InstanceFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut nodes = Vec::with_capacity(file.nodes.len());
    for (k, n) in file.nodes.into_iter().enumerate() {
        let at = format!("nodes[{k}]");
        let mut coeff = BTreeMap::new();
        for (key, rows) in &n.A {
            let j: usize = key
                .parse()
                .map_err(|_| Error::Parse(format!("{at}.A: key {key:?} is not a node id")))?;
            coeff.insert(j, rect(rows, &format!("{at}.A[{key}]"))?);
        }
        nodes.push(NodeSpec {
            id: n.id,
            dim: n.dim,
            prior_cov: sym(&n.W, &format!("{at}.W"))?,
            noise_cov: sym(&n.R, &format!("{at}.R"))?,
            obs: DVector::from_vec(n.y),
            coeff,
        });
    }
    GaussianNetwork::checked(nodes, file.edges.into_iter().map(|[a, b]| (a, b)))
}

pub fn load(path: impl AsRef<Path>) -> Result<GaussianNetwork> {
    parse(&std::fs::read_to_string(path)?)
}

pub fn save(net: &GaussianNetwork, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json_string(net))?;
    Ok(())
}

/// 17 significant digits: every f64 survives the text round trip.
fn real(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").unwrap();
}

fn vector(out: &mut String, v: impl IntoIterator<Item = f64>) {
    out.push('[');
    for (k, x) in v.into_iter().enumerate() {
        if k > 0 {
            out.push_str(", ");
        }
        real(out, x);
    }
    out.push(']');
}

fn matrix(out: &mut String, m: &DMatrix<f64>) {
    out.push('[');
    for r in 0..m.nrows() {
        if r > 0 {
            out.push_str(", ");
        }
        vector(out, m.row(r).iter().copied());
    }
    out.push(']');
}

/// Canonical text form of an instance. Deterministic, so it doubles as the
/// input of content hashes.
pub fn to_json_string(net: &GaussianNetwork) -> String {
    let mut s = String::from("{\n  \"nodes\": [\n");
    for (k, n) in net.nodes().iter().enumerate() {
        write!(
            s,
            "    {{\n      \"id\": {},\n      \"dim\": {},\n      \"W\": ",
            n.id, n.dim
        )
        .unwrap();
        matrix(&mut s, n.prior_cov.as_matrix());
        s.push_str(",\n      \"R\": ");
        matrix(&mut s, n.noise_cov.as_matrix());
        s.push_str(",\n      \"y\": ");
        vector(&mut s, n.obs.iter().copied());
        s.push_str(",\n      \"A\": {");
        for (q, (j, a)) in n.coeff.iter().enumerate() {
            if q > 0 {
                s.push_str(", ");
            }
            write!(s, "\"{j}\": ").unwrap();
            matrix(&mut s, a);
        }
        s.push_str("}\n    }");
        s.push_str(if k + 1 < net.len() { ",\n" } else { "\n" });
    }
    s.push_str("  ],\n  \"edges\": [");
    for (k, (a, b)) in net.edges().iter().enumerate() {
        if k > 0 {
            s.push_str(", ");
        }
        write!(s, "[{a}, {b}]").unwrap();
    }
    s.push_str("]\n}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::fixtures::golden;
    use crate::network::Rule;

    #[test]
    fn round_trip_golden() {
        let net = golden(0.3, 1.0 / 3.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.json");
        save(&net, &p).unwrap();
        assert_eq!(load(&p).unwrap(), net);
    }

    #[test]
    fn missing_edges_key_is_named() {
        let text = to_json_string(&golden(0.0, 0.0));
        let cut = text.find(",\n  \"edges\"").unwrap();
        let broken = format!("{}\n}}", &text[..cut]);
        match parse(&broken) {
            Err(Error::Parse(msg)) => assert!(msg.contains("edges"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn edge_to_missing_node_is_semantic() {
        let text = to_json_string(&golden(0.0, 0.0)).replace("[1, 2]]", "[1, 2], [1, 9]]");
        match parse(&text) {
            Err(Error::InvalidNetwork(v)) => assert_eq!(v[0].rule, Rule::UnknownNode),
            other => panic!("expected semantic error, got {other:?}"),
        }
    }

    #[test]
    fn spec_layout_parses() {
        let text = r#"{
          "nodes": [
            { "id": 1, "dim": 1, "W": [[1.0]], "R": [[1.0]], "y": [0.3],
              "A": { "1": [[1.0]], "2": [[1.0]] } },
            { "id": 2, "dim": 1, "W": [[1.0]], "R": [[1.0]], "y": [0.5],
              "A": { "1": [[1.0]], "2": [[1.0]] } }
          ],
          "edges": [ [1,2] ]
        }"#;
        assert_eq!(parse(text).unwrap(), golden(0.3, 0.5));
    }

    #[test]
    fn ragged_matrix_is_parse_error() {
        let text = to_json_string(&golden(0.0, 0.0)).replacen("\"W\": [[", "\"W\": [[1.0, ", 1);
        assert!(matches!(parse(&text), Err(Error::Parse(m)) if m.contains("nodes[0].W")));
    }
}
