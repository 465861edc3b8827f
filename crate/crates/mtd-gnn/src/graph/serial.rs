//! Sequence files: one JSON document per dynamic graph. Field names and
//! structure are stable; floats round-trip at full 64-bit precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::DynamicGraph;
use crate::error::{Error, Result};

/// Writes one sequence as compact JSON. Output is byte-identical for equal
/// inputs: field order is fixed and floats use shortest round-trip form.
pub fn save_sequence(path: impl AsRef<Path>, graph: &DynamicGraph) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, graph).map_err(|e| Error::json(path, e))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads and structurally validates one sequence.
pub fn load_sequence(path: impl AsRef<Path>) -> Result<DynamicGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let graph: DynamicGraph =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))?;
    graph.validate()?;
    Ok(graph)
}
