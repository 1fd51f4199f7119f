//! Binary point clouds and JSON-lines persistence.

use std::io::{BufRead, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::decomposition::{Decomposition, Split};
use crate::equilibrium::{EmpiricalMeasure, MeasureKind};
use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::segments::{OrbitSegment, Provenance, SegmentCollection};

pub const TFPC_MAGIC: &[u8; 4] = b"TFPC";
pub const TFPC_VERSION: u32 = 1;

/// Writes `data` (row-major, `dim` values per point) with the 16-byte TFPC header.
pub fn write_tfpc<W: Write>(mut w: W, dim: u32, data: &[f64]) -> Result<()> {
    if dim == 0 || !data.len().is_multiple_of(dim as usize) {
        return Err(Error::Io(
            "point data is not a whole number of points".into(),
        ));
    }
    w.write_all(TFPC_MAGIC)?;
    w.write_u32::<LittleEndian>(TFPC_VERSION)?;
    w.write_u32::<LittleEndian>(dim)?;
    w.write_u32::<LittleEndian>((data.len() / dim as usize) as u32)?;
    for &v in data {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

/// Reads a TFPC stream into `(dim, row-major data)`.
pub fn read_tfpc<R: Read>(mut r: R) -> Result<(u32, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TFPC_MAGIC {
        return Err(Error::Io("not a TFPC point cloud".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != TFPC_VERSION {
        return Err(Error::Io(format!("unsupported TFPC version {version}")));
    }
    let dim = r.read_u32::<LittleEndian>()?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut data = vec![0.0; count * dim as usize];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    Ok((dim, data))
}

pub fn write_cloud<W: Write>(w: W, points: &[[f64; 3]]) -> Result<()> {
    let flat: Vec<f64> = points.iter().flatten().copied().collect();
    write_tfpc(w, 3, &flat)
}

pub fn read_cloud<R: Read>(r: R) -> Result<Vec<[f64; 3]>> {
    let (dim, data) = read_tfpc(r)?;
    if dim != 3 {
        return Err(Error::Io(format!(
            "expected a 3-dimensional cloud, found dimension {dim}"
        )));
    }
    Ok(data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

fn lines<R: BufRead>(r: R) -> impl Iterator<Item = Result<serde_json::Value>> {
    r.lines().filter_map(|line| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(serde_json::from_str(&l).map_err(Error::from)),
        Err(e) => Some(Err(e.into())),
    })
}

pub fn write_segments<F: Flow, W: Write>(
    flow: &F,
    mut w: W,
    c: &SegmentCollection<F::Point>,
) -> Result<()> {
    for (id, seg) in c.segments.iter().enumerate() {
        let rec = json!({
            "id": id,
            "point": flow.point_to_json(&seg.start),
            "t": seg.t,
            "label": c.label,
        });
        writeln!(w, "{rec}")?;
    }
    Ok(())
}

pub fn read_segments<F: Flow, R: BufRead>(flow: &F, r: R) -> Result<SegmentCollection<F::Point>> {
    let mut segments = Vec::new();
    let mut label = Provenance::Derived;
    for v in lines(r) {
        let v = v?;
        let t = v
            .get("t")
            .and_then(|t| t.as_f64())
            .ok_or_else(|| Error::Io("segment without t".into()))?;
        let point = v
            .get("point")
            .ok_or_else(|| Error::Io("segment without point".into()))?;
        if let Some(l) = v.get("label") {
            label = serde_json::from_value(l.clone())?;
        }
        segments.push(OrbitSegment::new(flow.point_from_json(point)?, t));
    }
    Ok(SegmentCollection::new(segments, label))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SplitRecord {
    segment_id: usize,
    p: f64,
    g: f64,
    s: f64,
}

pub fn write_decomposition<P, W: Write>(mut w: W, d: &Decomposition<P>) -> Result<()> {
    for (segment_id, sp) in d.splits.iter().enumerate() {
        let rec = SplitRecord {
            segment_id,
            p: sp.p,
            g: sp.g,
            s: sp.s,
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

pub fn read_splits<R: BufRead>(r: R) -> Result<Vec<(usize, Split)>> {
    lines(r)
        .map(|v| {
            let rec: SplitRecord = serde_json::from_value(v?)?;
            Ok((
                rec.segment_id,
                Split {
                    p: rec.p,
                    g: rec.g,
                    s: rec.s,
                },
            ))
        })
        .collect()
}

/// One `{coords, weight}` line per atom; floats round-trip exactly.
pub fn write_measure<F: Flow, W: Write>(
    flow: &F,
    mut w: W,
    mu: &EmpiricalMeasure<F::Point>,
) -> Result<()> {
    for (x, wt) in mu.atoms.iter().zip(&mu.weights) {
        let rec = json!({ "coords": flow.point_to_json(x), "weight": wt });
        writeln!(w, "{rec}")?;
    }
    Ok(())
}

pub fn read_measure<F: Flow, R: BufRead>(
    flow: &F,
    r: R,
    kind: MeasureKind,
    t: f64,
) -> Result<EmpiricalMeasure<F::Point>> {
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for v in lines(r) {
        let v = v?;
        let coords = v
            .get("coords")
            .ok_or_else(|| Error::Io("atom without coords".into()))?;
        let weight = v
            .get("weight")
            .and_then(|w| w.as_f64())
            .ok_or_else(|| Error::Io("atom without weight".into()))?;
        atoms.push(flow.point_from_json(coords)?);
        weights.push(weight);
    }
    Ok(EmpiricalMeasure {
        atoms,
        weights,
        kind,
        t,
    })
}
