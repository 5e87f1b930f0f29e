//! Binary snapshots: little-endian, magic + header + per-mode complex arrays.
//!
//! Layout: `STRATBL\0`, u32 version, u8 kind (0 bulk, 1 layer), u32 Nx, u32
//! Ny, u32 vertical points, f64 L_eta, f64 dealias fraction, f64 eps, f64 t,
//! u32 mode count, the modes as i32 pairs, then each field as
//! `modes × points` pairs of f64 (re, im), fields in the order v1, v2, w, θ
//! (bulk) or v1, v2, θ (layer).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use num_complex::Complex64;
use stratbl::linear_bl::BLState;
use stratbl::linear_bulk::BulkState;
use stratbl::GridSpec;

use crate::CliError;

const MAGIC: &[u8; 8] = b"STRATBL\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Snapshot {
    Bulk(BulkState),
    Layer(BLState),
}

struct Header {
    kind: u8,
    nx: u32,
    ny: u32,
    points: u32,
    l_eta: f64,
    dealias: f64,
    eps: f64,
    t: f64,
    modes: Vec<[i32; 2]>,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn write_array(w: &mut impl Write, a: &Array2<Complex64>) -> std::io::Result<()> {
    for c in a.iter() {
        w.write_f64::<LittleEndian>(c.re)?;
        w.write_f64::<LittleEndian>(c.im)?;
    }
    Ok(())
}

fn read_array(r: &mut impl Read, rows: usize, cols: usize) -> std::io::Result<Array2<Complex64>> {
    let mut v = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let re = r.read_f64::<LittleEndian>()?;
        let im = r.read_f64::<LittleEndian>()?;
        v.push(Complex64::new(re, im));
    }
    Ok(Array2::from_shape_vec((rows, cols), v).expect("length matches shape"))
}

pub fn save_snapshot(snap: &Snapshot, path: &Path) -> Result<(), CliError> {
    let (kind, grid, points, eps, t, modes, arrays): (u8, &GridSpec, usize, f64, f64, &Vec<[i32; 2]>, Vec<&Array2<Complex64>>) =
        match snap {
            Snapshot::Bulk(s) => (0, &s.grid, s.grid.nz, s.eps, s.t, &s.modes, vec![&s.v1, &s.v2, &s.w, &s.theta]),
            Snapshot::Layer(s) => (1, &s.grid, s.grid.neta, 0.0, s.t, &s.modes, vec![&s.v1, &s.v2, &s.theta]),
        };
    let f = File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(f);
    let res: std::io::Result<()> = (|| {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u8(kind)?;
        w.write_u32::<LittleEndian>(grid.nx as u32)?;
        w.write_u32::<LittleEndian>(grid.ny as u32)?;
        w.write_u32::<LittleEndian>(points as u32)?;
        w.write_f64::<LittleEndian>(grid.l_eta)?;
        w.write_f64::<LittleEndian>(grid.dealias_fraction)?;
        w.write_f64::<LittleEndian>(eps)?;
        w.write_f64::<LittleEndian>(t)?;
        w.write_u32::<LittleEndian>(modes.len() as u32)?;
        for k in modes {
            w.write_i32::<LittleEndian>(k[0])?;
            w.write_i32::<LittleEndian>(k[1])?;
        }
        for a in arrays {
            write_array(&mut w, a)?;
        }
        w.flush()
    })();
    res.map_err(io(path))
}

fn read_header(r: &mut impl Read) -> std::io::Result<Result<Header, String>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Ok(Err("not a snapshot file (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Ok(Err(format!("unsupported snapshot version {version}")));
    }
    let kind = r.read_u8()?;
    let nx = r.read_u32::<LittleEndian>()?;
    let ny = r.read_u32::<LittleEndian>()?;
    let points = r.read_u32::<LittleEndian>()?;
    let l_eta = r.read_f64::<LittleEndian>()?;
    let dealias = r.read_f64::<LittleEndian>()?;
    let eps = r.read_f64::<LittleEndian>()?;
    let t = r.read_f64::<LittleEndian>()?;
    let nmodes = r.read_u32::<LittleEndian>()? as usize;
    if nmodes > 1 << 24 {
        return Ok(Err(format!("implausible mode count {nmodes}")));
    }
    let mut modes = Vec::with_capacity(nmodes);
    for _ in 0..nmodes {
        let a = r.read_i32::<LittleEndian>()?;
        let b = r.read_i32::<LittleEndian>()?;
        modes.push([a, b]);
    }
    Ok(Ok(Header { kind, nx, ny, points, l_eta, dealias, eps, t, modes }))
}

/// Loads a snapshot and checks it against the expected grid; a mismatch is
/// reported by field name.
pub fn load_snapshot(path: &Path, grid: &GridSpec) -> Result<Snapshot, CliError> {
    let f = File::open(path).map_err(io(path))?;
    let mut r = BufReader::new(f);
    let corrupt = |e: std::io::Error| CliError::Io(format!("{}: truncated or corrupt snapshot ({e})", path.display()));
    let h = read_header(&mut r).map_err(corrupt)?.map_err(|m| CliError::Io(format!("{}: {m}", path.display())))?;
    let mismatch = |field: &str, found: String, want: String| {
        CliError::Config(format!("snapshot {}: {field} is {found}, expected {want}", path.display()))
    };
    if h.nx as usize != grid.nx {
        return Err(mismatch("Nx", h.nx.to_string(), grid.nx.to_string()));
    }
    if h.ny as usize != grid.ny {
        return Err(mismatch("Ny", h.ny.to_string(), grid.ny.to_string()));
    }
    if h.dealias != grid.dealias_fraction {
        return Err(mismatch("dealias_fraction", h.dealias.to_string(), grid.dealias_fraction.to_string()));
    }
    let modes = grid.retained_modes();
    if h.modes != modes {
        return Err(mismatch("modes", format!("{} modes", h.modes.len()), format!("{} modes", modes.len())));
    }
    let n = modes.len();
    let pts = h.points as usize;
    match h.kind {
        0 => {
            if pts != grid.nz {
                return Err(mismatch("Nz", pts.to_string(), grid.nz.to_string()));
            }
            let mut s = BulkState::zeros(grid, h.eps);
            s.t = h.t;
            let mut read = || read_array(&mut r, n, pts).map_err(corrupt);
            s.v1 = read()?;
            s.v2 = read()?;
            s.w = read()?;
            s.theta = read()?;
            Ok(Snapshot::Bulk(s))
        }
        1 => {
            if pts != grid.neta {
                return Err(mismatch("Neta", pts.to_string(), grid.neta.to_string()));
            }
            if h.l_eta != grid.l_eta {
                return Err(mismatch("L_eta", h.l_eta.to_string(), grid.l_eta.to_string()));
            }
            let mut s = BLState::zeros(grid);
            s.t = h.t;
            let mut read = || read_array(&mut r, n, pts).map_err(corrupt);
            s.v1 = read()?;
            s.v2 = read()?;
            s.theta = read()?;
            Ok(Snapshot::Layer(s))
        }
        k => Err(CliError::Io(format!("{}: unknown snapshot kind {k}", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(grid: &GridSpec) -> BLState {
        let mut s = BLState::zeros(grid);
        s.t = 0.375;
        for (i, c) in s.theta.iter_mut().enumerate() {
            *c = Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos() * 1e-300);
        }
        for (i, c) in s.v2.iter_mut().enumerate() {
            *c = Complex64::new(-(i as f64).sqrt(), f64::MIN_POSITIVE);
        }
        s
    }

    #[test]
    fn layer_round_trip_is_bitwise() {
        let g = GridSpec { nx: 8, ny: 8, neta: 32, l_eta: 6.0, ..GridSpec::default() };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let s = layer(&g);
        save_snapshot(&Snapshot::Layer(s.clone()), &p).unwrap();
        match load_snapshot(&p, &g).unwrap() {
            Snapshot::Layer(r) => {
                assert_eq!(r.t.to_bits(), s.t.to_bits());
                for (a, b) in r.theta.iter().zip(s.theta.iter()).chain(r.v2.iter().zip(s.v2.iter())) {
                    assert_eq!(a.re.to_bits(), b.re.to_bits());
                    assert_eq!(a.im.to_bits(), b.im.to_bits());
                }
                assert_eq!(r, s);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn bulk_round_trip() {
        let g = GridSpec { nx: 8, ny: 8, nz: 12, ..GridSpec::default() };
        let mut s = BulkState::zeros(&g, 0.05);
        s.t = 2.5;
        for (i, c) in s.w.iter_mut().enumerate() {
            *c = Complex64::new(i as f64, -(i as f64));
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        save_snapshot(&Snapshot::Bulk(s.clone()), &p).unwrap();
        assert_eq!(load_snapshot(&p, &g).unwrap(), Snapshot::Bulk(s));
    }

    #[test]
    fn grid_mismatch_names_the_field() {
        let g = GridSpec { nx: 8, ny: 8, neta: 32, l_eta: 6.0, ..GridSpec::default() };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        save_snapshot(&Snapshot::Layer(layer(&g)), &p).unwrap();
        let e = load_snapshot(&p, &GridSpec { neta: 33, ..g.clone() }).unwrap_err();
        assert!(e.to_string().contains("Neta"), "{e}");
        let e = load_snapshot(&p, &GridSpec { nx: 10, ..g.clone() }).unwrap_err();
        assert!(e.to_string().contains("Nx"), "{e}");
        let e = load_snapshot(&p, &GridSpec { l_eta: 7.0, ..g.clone() }).unwrap_err();
        assert!(e.to_string().contains("L_eta"), "{e}");
    }

    #[test]
    fn corrupt_files_are_refused() {
        let g = GridSpec { nx: 8, ny: 8, neta: 32, l_eta: 6.0, ..GridSpec::default() };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        save_snapshot(&Snapshot::Layer(layer(&g)), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_snapshot(&p, &g), Err(CliError::Io(_))));
        std::fs::write(&p, b"garbage!garbage!").unwrap();
        let e = load_snapshot(&p, &g).unwrap_err();
        assert!(e.to_string().contains("magic"));
    }
}
