//! Node dumps of [`GridField`]s.
//!
//! Two encodings carry the same header (box origin, spacing, node counts,
//! time slices, component count, outside policy):
//!
//! * CSV: `#`-prefixed `key=value` header lines, a column header, then one
//!   row `slice,i,j,k,v0,v1,v2` per node. Floats are written in Rust's
//!   shortest round-trip form, so reading back is bit-exact.
//! * Binary: little-endian, magic `VMCGRID\0`, `u32` version, `u32`
//!   components, `u8` outside policy, origin (3×`f64`), spacing (`f64`),
//!   dims (3×`u64`), slice count (`u64`), times, then values in storage
//!   order.

use std::io::{BufRead, Read, Write};

use super::{GridField, GridGeometry, OutsidePolicy};
use crate::{Error, Result, Vec3};

const MAGIC: &[u8; 8] = b"VMCGRID\0";
const VERSION: u32 = 1;
const COMPONENTS: usize = 3;

fn policy_name(p: OutsidePolicy) -> &'static str {
    match p {
        OutsidePolicy::ZeroExtend => "zero",
        OutsidePolicy::Clamp => "clamp",
    }
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn write_csv<W: Write>(field: &GridField, mut w: W) -> Result<()> {
    let g = field.geometry();
    writeln!(w, "# vortmc grid field v{VERSION}")?;
    writeln!(w, "# origin={},{},{}", g.origin[0], g.origin[1], g.origin[2])?;
    writeln!(w, "# spacing={}", g.spacing)?;
    writeln!(w, "# dims={},{},{}", g.dims[0], g.dims[1], g.dims[2])?;
    let times: Vec<String> = field.times().iter().map(|t| t.to_string()).collect();
    writeln!(w, "# times={}", times.join(";"))?;
    writeln!(w, "# components={COMPONENTS}")?;
    writeln!(w, "# outside={}", policy_name(field.outside()))?;
    writeln!(w, "slice,i,j,k,v0,v1,v2")?;
    let n = g.n_nodes();
    for m in 0..field.times().len() {
        for idx in 0..n {
            let [i, j, k] = g.coords(idx);
            let v = field.node_value(m, idx);
            writeln!(w, "{m},{i},{j},{k},{},{},{}", v[0], v[1], v[2])?;
        }
    }
    Ok(())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| fmt_err(format!("bad number `{s}`")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| fmt_err(format!("bad integer `{s}`")))
}

pub fn read_csv<R: BufRead>(r: R) -> Result<GridField> {
    let mut origin = None;
    let mut spacing = None;
    let mut dims = None;
    let mut times: Option<Vec<f64>> = None;
    let mut outside = None;
    let mut rows = Vec::new();
    let mut seen_columns = false;
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            let Some((key, val)) = h.trim().split_once('=') else {
                continue;
            };
            match key.trim() {
                "origin" => {
                    let v = val.split(',').map(parse_f64).collect::<Result<Vec<_>>>()?;
                    if v.len() != 3 {
                        return Err(fmt_err("origin needs three coordinates"));
                    }
                    origin = Some(Vec3::new(v[0], v[1], v[2]));
                }
                "spacing" => spacing = Some(parse_f64(val)?),
                "dims" => {
                    let v = val.split(',').map(parse_usize).collect::<Result<Vec<_>>>()?;
                    if v.len() != 3 {
                        return Err(fmt_err("dims needs three counts"));
                    }
                    dims = Some([v[0], v[1], v[2]]);
                }
                "times" => times = Some(val.split(';').map(parse_f64).collect::<Result<Vec<_>>>()?),
                "components" => {
                    if parse_usize(val)? != COMPONENTS {
                        return Err(fmt_err("only 3-component fields are supported"));
                    }
                }
                "outside" => {
                    outside = Some(match val.trim() {
                        "zero" => OutsidePolicy::ZeroExtend,
                        "clamp" => OutsidePolicy::Clamp,
                        other => return Err(fmt_err(format!("unknown outside policy `{other}`"))),
                    })
                }
                other => return Err(fmt_err(format!("line {}: unknown header key `{other}`", lineno + 1))),
            }
            continue;
        }
        if !seen_columns {
            seen_columns = true;
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 + COMPONENTS {
            return Err(fmt_err(format!("line {}: expected 7 columns", lineno + 1)));
        }
        let idx = [parse_usize(cols[0])?, parse_usize(cols[1])?, parse_usize(cols[2])?, parse_usize(cols[3])?];
        let v = Vec3::new(parse_f64(cols[4])?, parse_f64(cols[5])?, parse_f64(cols[6])?);
        rows.push((idx, v));
    }
    let missing = |what: &str| fmt_err(format!("missing header `{what}`"));
    let geometry = GridGeometry::new(
        origin.ok_or_else(|| missing("origin"))?,
        spacing.ok_or_else(|| missing("spacing"))?,
        dims.ok_or_else(|| missing("dims"))?,
    )?;
    let times = times.ok_or_else(|| missing("times"))?;
    let outside = outside.ok_or_else(|| missing("outside"))?;
    let n = geometry.n_nodes();
    if rows.len() != n * times.len() {
        return Err(fmt_err(format!("expected {} rows, found {}", n * times.len(), rows.len())));
    }
    let mut values = vec![Vec3::zeros(); rows.len()];
    let mut filled = vec![false; rows.len()];
    for ([m, i, j, k], v) in rows {
        if m >= times.len() || i >= geometry.dims[0] || j >= geometry.dims[1] || k >= geometry.dims[2] {
            return Err(fmt_err("node index out of range"));
        }
        let slot = m * n + geometry.index(i, j, k);
        if filled[slot] {
            return Err(fmt_err("duplicate node row"));
        }
        filled[slot] = true;
        values[slot] = v;
    }
    GridField::from_values(geometry, times, values, outside)
}

pub fn write_binary<W: Write>(field: &GridField, mut w: W) -> Result<()> {
    let g = field.geometry();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(COMPONENTS as u32).to_le_bytes())?;
    w.write_all(&[match field.outside() {
        OutsidePolicy::ZeroExtend => 0u8,
        OutsidePolicy::Clamp => 1u8,
    }])?;
    for a in 0..3 {
        w.write_all(&g.origin[a].to_le_bytes())?;
    }
    w.write_all(&g.spacing.to_le_bytes())?;
    for a in 0..3 {
        w.write_all(&(g.dims[a] as u64).to_le_bytes())?;
    }
    w.write_all(&(field.times().len() as u64).to_le_bytes())?;
    for t in field.times() {
        w.write_all(&t.to_le_bytes())?;
    }
    for v in field.values() {
        for c in v.iter() {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<R: Read>(R);

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|_| fmt_err("truncated binary dump"))?;
        Ok(b)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes()?)).map_err(|_| fmt_err("count overflow"))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
}

pub fn read_binary<R: Read>(r: R) -> Result<GridField> {
    let mut c = Cursor(r);
    if &c.bytes::<8>()? != MAGIC {
        return Err(fmt_err("bad magic"));
    }
    if c.u32()? != VERSION {
        return Err(fmt_err("unsupported version"));
    }
    if c.u32()? as usize != COMPONENTS {
        return Err(fmt_err("only 3-component fields are supported"));
    }
    let outside = match c.bytes::<1>()?[0] {
        0 => OutsidePolicy::ZeroExtend,
        1 => OutsidePolicy::Clamp,
        _ => return Err(fmt_err("bad outside policy")),
    };
    let origin = Vec3::new(c.f64()?, c.f64()?, c.f64()?);
    let spacing = c.f64()?;
    let dims = [c.u64()?, c.u64()?, c.u64()?];
    let geometry = GridGeometry::new(origin, spacing, dims)?;
    let n_t = c.u64()?;
    let times = (0..n_t).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let values = (0..n_t * geometry.n_nodes())
        .map(|_| Ok(Vec3::new(c.f64()?, c.f64()?, c.f64()?)))
        .collect::<Result<Vec<_>>>()?;
    if c.0.read(&mut [0u8; 1])? != 0 {
        return Err(fmt_err("trailing bytes after field values"));
    }
    GridField::from_values(geometry, times, values, outside)
}
