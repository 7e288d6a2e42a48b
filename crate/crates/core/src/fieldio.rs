//! Binary field format shared by snapshots and eigenfunction dumps.
//!
//! A 32-byte ASCII header followed by row-major little-endian `f64` data:
//!
//! ```text
//! GBUF <d:1> <nx:5 hex> <ny:5 hex> <t bits:16 hex> '\n'
//! ```
//!
//! (no separators; `ny` is 1 for interval grids). The time stamp is stored
//! as the hex image of its IEEE bits so that round trips are bit-exact.

use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::grid::GridDomain;
use crate::pde::SolutionState;

pub const HEADER_LEN: usize = 32;
const MAGIC: &[u8; 4] = b"GBUF";

#[derive(Debug, Clone, PartialEq)]
pub struct FieldHeader {
    pub dim: usize,
    pub nx: usize,
    pub ny: usize,
    pub t: f64,
}

pub fn encode_field(grid: &GridDomain, data: &[f64], t: f64) -> Vec<u8> {
    assert_eq!(data.len(), grid.len());
    let header = format!(
        "GBUF{}{:05x}{:05x}{:016x}\n",
        grid.dim(),
        grid.nx(),
        grid.ny(),
        t.to_bits()
    );
    debug_assert_eq!(header.len(), HEADER_LEN);
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * data.len());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_header(bytes: &[u8]) -> Result<FieldHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(LabError::Snapshot(format!(
            "need {HEADER_LEN} header bytes, got {}",
            bytes.len()
        )));
    }
    let h = &bytes[..HEADER_LEN];
    if &h[..4] != MAGIC || h[HEADER_LEN - 1] != b'\n' {
        return Err(LabError::Snapshot("bad magic or terminator".into()));
    }
    let text = std::str::from_utf8(&h[4..HEADER_LEN - 1])
        .map_err(|_| LabError::Snapshot("header is not ASCII".into()))?;
    let dim = match &text[..1] {
        "1" => 1,
        "2" => 2,
        other => return Err(LabError::Snapshot(format!("bad dimension '{other}'"))),
    };
    let hex = |s: &str, what: &str| {
        u64::from_str_radix(s, 16).map_err(|_| LabError::Snapshot(format!("bad {what} field '{s}'")))
    };
    let nx = hex(&text[1..6], "nx")? as usize;
    let ny = hex(&text[6..11], "ny")? as usize;
    let t = f64::from_bits(hex(&text[11..27], "time")?);
    if dim == 1 && ny != 1 {
        return Err(LabError::Snapshot(format!("1D header with ny = {ny}")));
    }
    Ok(FieldHeader { dim, nx, ny, t })
}

/// Decodes header and payload, checking the payload length.
pub fn decode_field(bytes: &[u8]) -> Result<(FieldHeader, Vec<f64>)> {
    let header = decode_header(bytes)?;
    let count = header.nx * header.ny;
    let expected = HEADER_LEN + 8 * count;
    if bytes.len() != expected {
        return Err(LabError::Snapshot(format!(
            "expected {expected} bytes for {}x{} field, got {}",
            header.nx,
            header.ny,
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, data))
}

pub fn snapshot(state: &SolutionState) -> Vec<u8> {
    encode_field(state.grid(), state.u(), state.t())
}

/// Restores a state on `grid`, checking shape and Dirichlet pinning to `g`.
pub fn restore(bytes: &[u8], grid: Arc<GridDomain>, g: &[f64]) -> Result<SolutionState> {
    let (header, data) = decode_field(bytes)?;
    if header.dim != grid.dim() || header.nx != grid.nx() || header.ny != grid.ny() {
        return Err(LabError::GridMismatch(format!(
            "snapshot is {}D {}x{}, grid is {}D {}x{}",
            header.dim,
            header.nx,
            header.ny,
            grid.dim(),
            grid.nx(),
            grid.ny()
        )));
    }
    let state = SolutionState::new(grid, data, header.t);
    let mismatch = state.boundary_mismatch(g);
    if mismatch != 0.0 {
        return Err(LabError::Snapshot(format!(
            "boundary values differ from g by {mismatch:e}"
        )));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_32_bytes() {
        let g = GridDomain::unit_square(4).unwrap();
        let bytes = encode_field(&g, &vec![0.0; 16], 0.25);
        assert_eq!(&bytes[..HEADER_LEN], b"GBUF200004000043fd0000000000000\n");
        assert_eq!(bytes.len(), 32 + 16 * 8);
    }

    #[test]
    fn truncated_and_mismatched_inputs_fail() {
        let g = Arc::new(GridDomain::unit_interval(9).unwrap());
        let st = SolutionState::new(g.clone(), vec![0.0; 9], 1.0);
        let bytes = snapshot(&st);
        assert!(restore(&bytes[..bytes.len() - 3], g.clone(), &vec![0.0; 9]).is_err());
        assert!(restore(&bytes[..20], g.clone(), &vec![0.0; 9]).is_err());
        let other = Arc::new(GridDomain::unit_interval(11).unwrap());
        assert!(matches!(
            restore(&bytes, other, &vec![0.0; 11]),
            Err(LabError::GridMismatch(_))
        ));
        let mut g_shift = vec![0.0; 9];
        g_shift[0] = 1.0;
        assert!(restore(&bytes, g.clone(), &g_shift).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(restore(&bad, g, &vec![0.0; 9]).is_err());
    }

    proptest! {
        #[test]
        fn snapshot_round_trip_is_bit_exact(
            vals in proptest::collection::vec(-1e6f64..1e6, 7 * 5),
            t in 0.0f64..1e3,
        ) {
            let g = Arc::new(GridDomain::rectangle(
                crate::grid::Extent::unit(), crate::grid::Extent::unit(), 7, 5).unwrap());
            let mut u = vals.clone();
            for k in g.boundary_indices() { u[k] = 0.0; }
            let st = SolutionState::new(g.clone(), u.clone(), t);
            let back = restore(&snapshot(&st), g.clone(), &vec![0.0; 35]).unwrap();
            prop_assert_eq!(back.t().to_bits(), t.to_bits());
            for (a, b) in back.u().iter().zip(&u) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
