//! `SMESH` and `SSIG` files.
//!
//! ```text
//! SMESH 1                      SSIG 1
//! order <k>                    vertices <n>
//! vertices <n>                 channels <c>
//! faces <f>                    names <name_0> ... <name_c-1>
//! end_header                   end_header
//! <n*3 f64 LE coordinates>     <n*c f32 LE values, row-major>
//! <f*3 u32 LE vertex indices>
//! ```

use std::path::Path;

use super::icosphere::Icosphere;
use super::signal::SurfaceSignal;
use crate::error::{Error, Result};
use crate::format::{read_file, write_file, Reader, END_HEADER};

pub const SMESH_VERSION: u32 = 1;
pub const SSIG_VERSION: u32 = 1;

pub fn encode_mesh(mesh: &Icosphere) -> Vec<u8> {
    let mut out = format!(
        "SMESH {SMESH_VERSION}\norder {}\nvertices {}\nfaces {}\n{END_HEADER}\n",
        mesh.order(),
        mesh.vertex_count(),
        mesh.face_count()
    )
    .into_bytes();
    out.reserve(mesh.vertex_count() * 24 + mesh.face_count() * 12);
    for v in mesh.vertices() {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    for f in mesh.faces() {
        for i in f {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

pub fn decode_mesh(bytes: &[u8]) -> Result<Icosphere> {
    let mut r = Reader::new(bytes);
    r.magic("SMESH", SMESH_VERSION)?;
    let order: u32 = r.number("order")?;
    let nv: usize = r.number("vertices")?;
    let nf: usize = r.number("faces")?;
    r.end_header()?;
    let body_at = r.offset();
    let coords = r.f64s(nv.saturating_mul(3), "vertex coordinates")?;
    let idx = r.u32s(nf.saturating_mul(3), "face indices")?;
    r.finish()?;
    let vertices = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let faces = idx.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Icosphere::from_parts(order, vertices, faces).map_err(|e| match e {
        Error::Data(message) | Error::Bounds { detail: message, .. } => Error::Parse {
            offset: body_at,
            message,
        },
        other => other,
    })
}

pub fn write_mesh(path: impl AsRef<Path>, mesh: &Icosphere) -> Result<()> {
    write_file(path.as_ref(), &encode_mesh(mesh))
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<Icosphere> {
    decode_mesh(&read_file(path.as_ref())?)
}

pub fn encode_signal(signal: &SurfaceSignal) -> Result<Vec<u8>> {
    if let Some(bad) = signal
        .channel_names()
        .iter()
        .find(|n| n.is_empty() || n.chars().any(char::is_whitespace))
    {
        return Err(Error::Data(format!(
            "channel name {bad:?} must be non-empty without whitespace"
        )));
    }
    let mut out = format!(
        "SSIG {SSIG_VERSION}\nvertices {}\nchannels {}\nnames {}\n{END_HEADER}\n",
        signal.vertex_count(),
        signal.channels(),
        signal.channel_names().join(" ")
    )
    .into_bytes();
    out.reserve(signal.values().len() * 4);
    for &x in signal.values() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_signal(bytes: &[u8]) -> Result<SurfaceSignal> {
    let mut r = Reader::new(bytes);
    r.magic("SSIG", SSIG_VERSION)?;
    let nv: usize = r.number("vertices")?;
    let nc: usize = r.number("channels")?;
    let (at, names) = r.field("names")?;
    let names: Vec<String> = names.split_whitespace().map(str::to_owned).collect();
    if names.len() != nc || nc == 0 {
        return Err(r.error(at, format!("{} channel names for {nc} channels", names.len())));
    }
    r.end_header()?;
    let body_at = r.offset();
    let values = r.f32s(nv.saturating_mul(nc), "signal values")?;
    r.finish()?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parse {
            offset: body_at + 4 * i as u64,
            message: "non-finite signal value".into(),
        });
    }
    SurfaceSignal::new(names, values.into_iter().map(f64::from).collect())
}

pub fn write_signal(path: impl AsRef<Path>, signal: &SurfaceSignal) -> Result<()> {
    write_file(path.as_ref(), &encode_signal(signal)?)
}

pub fn read_signal(path: impl AsRef<Path>) -> Result<SurfaceSignal> {
    decode_signal(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere::build_icosphere;

    #[test]
    fn mesh_round_trip() {
        let mesh = build_icosphere(3).unwrap();
        let bytes = encode_mesh(&mesh);
        assert!(bytes.starts_with(b"SMESH 1\norder 3\nvertices 642\nfaces 1280\n"));
        assert_eq!(decode_mesh(&bytes).unwrap(), mesh);
    }

    #[test]
    fn signal_round_trip_is_f32_exact() {
        let sig = SurfaceSignal::new(
            vec!["myelin".into(), "sulc".into()],
            vec![0.5, -1.25, 3.0, 1e-3f32 as f64],
        )
        .unwrap();
        assert_eq!(decode_signal(&encode_signal(&sig).unwrap()).unwrap(), sig);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = encode_mesh(&build_icosphere(0).unwrap());
        bytes[6] = b'2';
        let err = decode_mesh(&bytes).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncated_body_reports_offset() {
        let sig = SurfaceSignal::new(vec!["a".into()], vec![1.0; 8]).unwrap();
        let bytes = encode_signal(&sig).unwrap();
        let header_len = bytes.len() - 32;
        match decode_signal(&bytes[..bytes.len() - 3]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset as usize, header_len),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_counts_are_parse_errors() {
        let text = b"SMESH 1\norder 1\nvertices 12\nfaces 20\nend_header\n";
        let mut bytes = text.to_vec();
        bytes.extend(vec![0u8; 12 * 24 + 20 * 12]);
        assert!(matches!(decode_mesh(&bytes), Err(Error::Parse { .. })));
    }
}
