//! Landmark annotation files.
//!
//! One record per line, tab separated:
//!
//! ```text
//! <image path>\t<schema name>\t<x0> <y0> <x1> <y1> ...
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. A canonical template
//! uses the same record with the pseudo path `<template:WIDTHxHEIGHT>`.

use std::path::Path;

use super::landmarks::{LandmarkSet, Point};
use super::template::CanonicalTemplate;
use crate::error::{GestaltError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image: String,
    pub landmarks: LandmarkSet,
}

pub fn parse_annotations(text: &str, origin: &str) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| GestaltError::Parse {
            path: origin.to_owned(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        if fields[0].is_empty() {
            return Err(err("empty image path".into()));
        }
        let coords: Vec<f64> = fields[2]
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| err(format!("bad coordinate `{v}`"))))
            .collect::<Result<_>>()?;
        if coords.len() % 2 != 0 {
            return Err(err("odd number of coordinates".into()));
        }
        let points = coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
        let landmarks = LandmarkSet::new(fields[1], points).map_err(|e| err(e.to_string()))?;
        out.push(AnnotationRecord {
            image: fields[0].to_owned(),
            landmarks,
        });
    }
    Ok(out)
}

pub fn format_annotation(image: &str, landmarks: &LandmarkSet) -> String {
    format!("{image}\t{}\t{landmarks}\n", landmarks.schema_name())
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| GestaltError::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

pub fn format_template(t: &CanonicalTemplate) -> String {
    format_annotation(&format!("<template:{}x{}>", t.width, t.height), &t.landmarks)
}

pub fn parse_template(text: &str, origin: &str) -> Result<CanonicalTemplate> {
    let records = parse_annotations(text, origin)?;
    let bad = |msg: &str| GestaltError::Parse {
        path: origin.to_owned(),
        line: 1,
        msg: msg.to_owned(),
    };
    let [rec] = records.as_slice() else {
        return Err(bad("template file must hold exactly one record"));
    };
    let dims = rec
        .image
        .strip_prefix("<template:")
        .and_then(|s| s.strip_suffix('>'))
        .and_then(|s| s.split_once('x'))
        .and_then(|(w, h)| Some((w.parse::<usize>().ok()?, h.parse::<usize>().ok()?)))
        .filter(|&(w, h)| w > 0 && h > 0)
        .ok_or_else(|| bad("template record needs a `<template:WxH>` path"))?;
    Ok(CanonicalTemplate {
        landmarks: rec.landmarks.clone(),
        width: dims.0,
        height: dims.1,
    })
}
