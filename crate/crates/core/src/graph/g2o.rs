//! g2o text for the pose portion of a graph.
//!
//! g2o orders the tangent as translation then rotation, so information
//! matrices are permuted on the way in and out. Floats use the shortest
//! representation that round-trips.

use nalgebra::Matrix6;

use super::{Factor, FactorGraph, Values};
use crate::geometry::Pose3;
use crate::io::{fmt_f64, parse_floats, parse_index, FormatError};

const PERM: [usize; 6] = [3, 4, 5, 0, 1, 2];

fn push_pose(fields: &mut Vec<String>, pose: &Pose3) {
    fields.extend(pose.to_tum().iter().map(|v| fmt_f64(*v)));
}

fn push_information(fields: &mut Vec<String>, info: &Matrix6<f64>) {
    for r in 0..6 {
        for c in r..6 {
            fields.push(fmt_f64(info[(PERM[r], PERM[c])]));
        }
    }
}

fn parse_information(values: &[f64]) -> Matrix6<f64> {
    let mut info = Matrix6::zeros();
    let mut k = 0;
    for r in 0..6 {
        for c in r..6 {
            info[(PERM[r], PERM[c])] = values[k];
            info[(PERM[c], PERM[r])] = values[k];
            k += 1;
        }
    }
    info
}

fn parse_pose(values: &[f64]) -> Pose3 {
    Pose3::from_tum([values[0], values[1], values[2], values[3], values[4], values[5], values[6]])
}

/// Vertices for every pose, then prior and between factors in graph order.
/// Other factor kinds are not written.
pub fn export_g2o(graph: &FactorGraph) -> String {
    let mut lines = Vec::new();
    for (k, pose) in graph.initial.poses.iter().enumerate() {
        let mut fields = vec!["VERTEX_SE3:QUAT".to_string(), k.to_string()];
        push_pose(&mut fields, pose);
        lines.push(fields.join(" "));
    }
    for f in graph.factors() {
        let mut fields = Vec::new();
        match f {
            Factor::BetweenPose { i, j, measured, information } => {
                fields.extend(["EDGE_SE3:QUAT".to_string(), i.to_string(), j.to_string()]);
                push_pose(&mut fields, measured);
                push_information(&mut fields, information);
            }
            Factor::PriorPose { pose, measured, information } => {
                fields.extend(["EDGE_SE3_PRIOR".to_string(), pose.to_string(), "0".to_string()]);
                push_pose(&mut fields, measured);
                push_information(&mut fields, information);
            }
            _ => continue,
        }
        lines.push(fields.join(" "));
    }
    let mut out = lines.join("\n");
    if !out.is_empty() {
        out.push('\n');
    }
    out
}

/// Parses vertices, between edges and priors. Vertex ids must be exactly
/// `0..n` in any order; blank lines and `#` comments are skipped.
pub fn import_g2o(text: &str) -> Result<FactorGraph, FormatError> {
    let mut vertices: Vec<Option<Pose3>> = Vec::new();
    let mut edges: Vec<(usize, Factor)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let expect = |count: usize| {
            if tokens.len() == count {
                Ok(())
            } else {
                Err(FormatError::parse(
                    line,
                    format!("{} expects {} fields, got {}", tokens[0], count - 1, tokens.len() - 1),
                ))
            }
        };
        match tokens[0] {
            "VERTEX_SE3:QUAT" => {
                expect(9)?;
                let id = parse_index(tokens[1], line)?;
                let v = parse_floats(&tokens[2..], line)?;
                if vertices.len() <= id {
                    vertices.resize(id + 1, None);
                }
                if vertices[id].replace(parse_pose(&v)).is_some() {
                    return Err(FormatError::parse(line, format!("duplicate vertex {id}")));
                }
            }
            "EDGE_SE3:QUAT" => {
                expect(31)?;
                let i = parse_index(tokens[1], line)?;
                let j = parse_index(tokens[2], line)?;
                let v = parse_floats(&tokens[3..], line)?;
                edges.push((
                    line,
                    Factor::BetweenPose {
                        i,
                        j,
                        measured: parse_pose(&v[..7]),
                        information: parse_information(&v[7..]),
                    },
                ));
            }
            "EDGE_SE3_PRIOR" => {
                expect(31)?;
                let pose = parse_index(tokens[1], line)?;
                parse_index(tokens[2], line)?;
                let v = parse_floats(&tokens[3..], line)?;
                edges.push((
                    line,
                    Factor::PriorPose {
                        pose,
                        measured: parse_pose(&v[..7]),
                        information: parse_information(&v[7..]),
                    },
                ));
            }
            other => return Err(FormatError::parse(line, format!("unknown record `{other}`"))),
        }
    }
    if let Some(missing) = vertices.iter().position(Option::is_none) {
        return Err(FormatError::parse(text.lines().count(), format!("vertex {missing} is missing")));
    }
    let poses = vertices.into_iter().flatten().collect();
    let mut graph = FactorGraph::new(Values::from_poses(poses));
    for (line, factor) in edges {
        graph
            .add(factor)
            .map_err(|e| FormatError::parse(line, e.to_string()))?;
    }
    Ok(graph)
}
