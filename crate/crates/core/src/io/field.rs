//! One CSV per time level plus `manifest.txt` holding the grid metadata and
//! a SHA-256 of the values (little-endian `f64` bytes, level-major).
//! Floats are written in shortest round-trip form, so reading back is
//! bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fp::DensityPath;
use crate::grid::{CflData, GridSpec, TimeField};

pub const MANIFEST: &str = "manifest.txt";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Hex SHA-256 of the field values.
pub fn field_checksum(field: &TimeField) -> String {
    let mut h = Sha256::new();
    for v in field.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn level_file(n: usize) -> String {
    format!("level_{n:06}.csv")
}

fn write_with_kind(field: &TimeField, dir: &Path, kind: &str) -> Result<String> {
    let g = field.grid();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let axes = ["x", "y"];
    for n in 0..g.levels() {
        let path = dir.join(level_file(n));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let mut header: Vec<&str> = axes[..g.dim()].to_vec();
        header.push("value");
        w.write_record(&header).map_err(|e| csv_err(&path, e))?;
        for (i, v) in field.level(n).iter().enumerate() {
            let x = g.coords(i);
            let mut rec: Vec<String> = x[..g.dim()].iter().map(|c| format!("{c:e}")).collect();
            rec.push(format!("{v:e}"));
            w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    let sum = field_checksum(field);
    let cfl = g.cfl();
    let manifest = format!(
        "kind = {kind}\ndim = {}\nbox_length = {:e}\nnx = {}\nnt = {}\nhorizon = {:e}\n\
         diffusion_max = {:e}\ndrift_max = {:e}\nsha256 = {sum}\n",
        g.dim(),
        g.box_length(),
        g.nx(),
        g.nt(),
        g.horizon(),
        cfl.diffusion_max,
        cfl.drift_max,
    );
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(io_err(&path))?;
    Ok(sum)
}

/// Writes `field` into directory `dir`; returns the checksum.
pub fn write_field(field: &TimeField, dir: &Path) -> Result<String> {
    write_with_kind(field, dir, "field")
}

pub fn write_density(m: &DensityPath, dir: &Path) -> Result<String> {
    write_with_kind(m.field(), dir, "density")
}

fn parse_manifest(dir: &Path) -> Result<(BTreeMap<String, String>, PathBuf)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
            path: path.clone(),
            reason: format!("malformed line `{line}`"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok((map, path))
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T> {
    map.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: format!("missing or malformed `{key}`"),
        })
}

/// Reads a directory written by [`write_field`] or [`write_density`] and
/// verifies the checksum.
pub fn read_field(dir: &Path) -> Result<TimeField> {
    let (map, mpath) = parse_manifest(dir)?;
    let cfl = CflData {
        diffusion_max: get(&map, "diffusion_max", &mpath)?,
        drift_max: get(&map, "drift_max", &mpath)?,
    };
    let grid = GridSpec::new(
        get(&map, "dim", &mpath)?,
        get(&map, "box_length", &mpath)?,
        get(&map, "nx", &mpath)?,
        get(&map, "nt", &mpath)?,
        get(&map, "horizon", &mpath)?,
        cfl,
    )?;
    let mut values = Vec::with_capacity(grid.levels() * grid.nodes());
    for n in 0..grid.levels() {
        let path = dir.join(level_file(n));
        let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let mut count = 0;
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(&path, e))?;
            let v: f64 = rec
                .get(grid.dim())
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format {
                    path: path.clone(),
                    reason: format!("bad value in row {}", count + 1),
                })?;
            values.push(v);
            count += 1;
        }
        if count != grid.nodes() {
            return Err(Error::Format {
                path,
                reason: format!("expected {} rows, found {count}", grid.nodes()),
            });
        }
    }
    let field = TimeField::from_values(&grid, values)?;
    let want: String = get(&map, "sha256", &mpath)?;
    let have = field_checksum(&field);
    if want != have {
        return Err(Error::Format {
            path: mpath,
            reason: format!("checksum mismatch: manifest {want}, data {have}"),
        });
    }
    Ok(field)
}

pub fn read_density(dir: &Path) -> Result<DensityPath> {
    DensityPath::new(read_field(dir)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::InitialDensity;

    fn grid() -> GridSpec {
        let cfl = CflData { diffusion_max: 2.0, drift_max: 1.0 };
        GridSpec::new(2, 3.0, 8, 40, 0.1, cfl).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let g = grid();
        let f = TimeField::from_fn(&g, |t, x| (x[0] * 1.7 + t).sin() / 3.0 + x[1] * 1e-300 + 0.1);
        let dir = tempfile::tempdir().unwrap();
        let sum = write_field(&f, dir.path()).unwrap();
        let back = read_field(dir.path()).unwrap();
        assert_eq!(back.grid(), f.grid());
        for (a, b) in back.values().iter().zip(f.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(field_checksum(&back), sum);
    }

    #[test]
    fn checksum_tracks_every_value() {
        let g = grid();
        let f = TimeField::constant(&g, 1.0);
        let base = field_checksum(&f);
        assert_eq!(base, field_checksum(&f.clone()));
        let mut h = f.clone();
        let last = h.values().len() - 1;
        h.values_mut()[last] = f64::from_bits(1.0f64.to_bits() + 1);
        assert_ne!(base, field_checksum(&h));
    }

    #[test]
    fn tampering_is_detected() {
        let g = grid();
        let f = TimeField::constant(&g, 0.5);
        let dir = tempfile::tempdir().unwrap();
        write_field(&f, dir.path()).unwrap();
        let p = dir.path().join(level_file(3));
        let text = fs::read_to_string(&p).unwrap().replacen("5e-1", "5.000001e-1", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(read_field(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn density_columns_sum_to_inverse_cell_volume() {
        let g = grid();
        let m0 = InitialDensity::Gaussian { center: None, std: 0.4 }.discretize(&g).unwrap();
        let m = DensityPath::stationary(&g, &m0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_density(&m, dir.path()).unwrap();
        let back = read_density(dir.path()).unwrap();
        for n in 0..g.levels() {
            let s: f64 = back.level(n).iter().sum();
            assert!((s * g.cell_volume() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_directory_is_an_io_error() {
        let e = read_field(Path::new("/nonexistent/field")).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
        assert!(e.to_string().contains("/nonexistent/field"));
    }
}
