//! File formats: training-set CSV, binary trajectory snapshots, CSV tables,
//! PPM rasters and plain-text meshes.
//!
//! # Trajectory file
//!
//! All numbers little-endian.
//!
//! | field | type |
//! |---|---|
//! | magic `HBLTRAJ1` | 8 bytes |
//! | version (= 1) | u32 |
//! | N | u32 |
//! | K (0 without provenance) | u32 |
//! | flags: bit 0 states present, bit 1 provenance present, bit 2 training-set seed present | u32 |
//! | sample count | u64 |
//! | sample_dt | f64 |
//! | training-set seed, IC seed | u64, u64 |
//! | g, A, B, λ, t_s, T_train | 6 × f64 |
//! | integrator tag (0 adaptive, 1 fixed RK4), p₁, p₂ (rtol, atol or dt, 0) | u32, f64, f64 |
//! | training vectors, K rows of N | i8 |
//! | per sample: t, x (N, when present), ω (N(N−1)/2, upper triangle row by row) | f64 |

use crate::basins::{palette_color, AttractorCatalog, BasinRaster, UNRESOLVED_RGB};
use crate::error::{Error, Result};
use crate::integrate::Integrator;
use crate::manifolds::{ManifoldSection, Mesh};
use crate::model::{NetworkConfig, TrainingSet, WeightMatrix};
use crate::scalar::Scalar;
use crate::simulate::{Provenance, WeightTrajectory};
use std::io::{BufRead, Read, Write};

const MAGIC: &[u8; 8] = b"HBLTRAJ1";
const VERSION: u32 = 1;

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Writes one pattern per row after a `# N=.. K=.. seed=..` header line.
pub fn write_training_set<W: Write>(set: &TrainingSet, mut out: W) -> Result<()> {
    let seed = set.seed().map_or("none".to_string(), |s| s.to_string());
    writeln!(out, "# N={} K={} seed={}", set.n(), set.k(), seed)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for v in set.vectors() {
        w.write_record(v.iter().map(|x| x.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training_set<R: BufRead>(mut input: R) -> Result<TrainingSet> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let mut n = None;
    let mut k = None;
    let mut seed = None;
    for tok in header.trim_start_matches('#').split_whitespace() {
        match tok.split_once('=') {
            Some(("N", v)) => n = v.parse::<usize>().ok(),
            Some(("K", v)) => k = v.parse::<usize>().ok(),
            Some(("seed", v)) => seed = v.parse::<u64>().ok(),
            _ => {}
        }
    }
    let (Some(n), Some(k)) = (n, k) else {
        return Err(Error::Format("training-set header must carry N and K".into()));
    };
    let mut rows = Vec::new();
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|f| match f.trim() {
                "1" | "+1" => Ok(1i8),
                "-1" => Ok(-1i8),
                other => Err(Error::Format(format!("pattern entry {other:?} is not ±1"))),
            })
            .collect::<Result<Vec<i8>>>()?;
        rows.push(row);
    }
    if rows.len() != k || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Format(format!("expected {k} rows of {n} entries")));
    }
    TrainingSet::from_vectors(rows, seed)
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn get<const L: usize, R: Read>(r: &mut R) -> Result<[u8; L]> {
    let mut b = [0u8; L];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(get(r)?))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(get(r)?))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(get(r)?))
}

pub fn write_trajectory<T: Scalar, W: Write>(traj: &WeightTrajectory<T>, mut out: W) -> Result<()> {
    let n = traj.n();
    let prov = traj.provenance.as_ref();
    let k = prov.map_or(0, |p| p.training_set.k());
    let set_seed = prov.and_then(|p| p.training_set.seed());
    let flags =
        u32::from(traj.x_samples.is_some()) | (u32::from(prov.is_some()) << 1) | (u32::from(set_seed.is_some()) << 2);
    out.write_all(MAGIC)?;
    put_u32(&mut out, VERSION)?;
    put_u32(&mut out, n as u32)?;
    put_u32(&mut out, k as u32)?;
    put_u32(&mut out, flags)?;
    put_u64(&mut out, traj.len() as u64)?;
    put_f64(&mut out, traj.sample_dt.f64())?;
    put_u64(&mut out, set_seed.unwrap_or(0))?;
    put_u64(&mut out, prov.map_or(0, |p| p.ic_seed))?;
    let cfg = prov.map(|p| &p.cfg);
    for v in cfg.map_or([0.0; 6], |c| {
        [c.g, c.a, c.b, c.lambda, c.t_s, c.t_train].map(|x| x.f64())
    }) {
        put_f64(&mut out, v)?;
    }
    let (tag, p1, p2) = match prov.map(|p| p.integrator) {
        Some(Integrator::FixedRk4 { dt }) => (1, dt, 0.0),
        Some(Integrator::Adaptive { rtol, atol }) => (0, rtol, atol),
        None => (0, 0.0, 0.0),
    };
    put_u32(&mut out, tag)?;
    put_f64(&mut out, p1)?;
    put_f64(&mut out, p2)?;
    if let Some(p) = prov {
        for v in p.training_set.vectors() {
            out.write_all(&v.iter().map(|&s| s as u8).collect::<Vec<u8>>())?;
        }
    }
    for i in 0..traj.len() {
        put_f64(&mut out, traj.sample_times[i].f64())?;
        if let Some(xs) = &traj.x_samples {
            for &x in &xs[i] {
                put_f64(&mut out, x.f64())?;
            }
        }
        for &w in traj.snapshots[i].entries() {
            put_f64(&mut out, w.f64())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory<T: Scalar, R: Read>(mut input: R) -> Result<WeightTrajectory<T>> {
    let magic: [u8; 8] = get(&mut input)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a trajectory file".into()));
    }
    let version = get_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported trajectory version {version}")));
    }
    let n = get_u32(&mut input)? as usize;
    let k = get_u32(&mut input)? as usize;
    let flags = get_u32(&mut input)?;
    let count = get_u64(&mut input)? as usize;
    let sample_dt = get_f64(&mut input)?;
    let set_seed = get_u64(&mut input)?;
    let ic_seed = get_u64(&mut input)?;
    let mut c = [0.0; 6];
    for v in &mut c {
        *v = get_f64(&mut input)?;
    }
    let tag = get_u32(&mut input)?;
    let (p1, p2) = (get_f64(&mut input)?, get_f64(&mut input)?);
    let has_x = flags & 1 != 0;
    let has_prov = flags & 2 != 0;
    let mut vectors = Vec::with_capacity(k);
    for _ in 0..k {
        let mut row = vec![0u8; n];
        input.read_exact(&mut row)?;
        vectors.push(row.into_iter().map(|b| b as i8).collect());
    }
    let m = n * n.saturating_sub(1) / 2;
    let mut times = Vec::with_capacity(count);
    let mut snaps = Vec::with_capacity(count);
    let mut xs = Vec::new();
    for _ in 0..count {
        times.push(T::of(get_f64(&mut input)?));
        if has_x {
            xs.push(
                (0..n)
                    .map(|_| get_f64(&mut input).map(T::of))
                    .collect::<Result<Vec<T>>>()?,
            );
        }
        let entries = (0..m)
            .map(|_| get_f64(&mut input).map(T::of))
            .collect::<Result<Vec<T>>>()?;
        snaps.push(WeightMatrix::from_entries(n, entries)?);
    }
    let mut traj = WeightTrajectory::from_snapshots(times, snaps)?;
    traj.sample_dt = T::of(sample_dt);
    traj.x_samples = has_x.then_some(xs);
    if has_prov {
        let cfg = NetworkConfig {
            n,
            g: T::of(c[0]),
            a: T::of(c[1]),
            b: T::of(c[2]),
            lambda: T::of(c[3]),
            t_s: T::of(c[4]),
            t_train: T::of(c[5]),
        };
        let integrator = match tag {
            0 => Integrator::Adaptive { rtol: p1, atol: p2 },
            1 => Integrator::FixedRk4 { dt: p1 },
            t => return Err(Error::Format(format!("unknown integrator tag {t}"))),
        };
        traj.provenance = Some(Provenance {
            cfg,
            training_set: TrainingSet::from_vectors(vectors, (flags & 4 != 0).then_some(set_seed))?,
            ic_seed,
            integrator,
        });
    }
    Ok(traj)
}

/// RFC 4180 table writer over any sink.
pub struct Table<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> Table<W> {
    pub fn new(out: W, header: &[&str]) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        inner.write_record(header).map_err(csv_err)?;
        Ok(Self { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Joins vector components with `;` so a point fits in one CSV field.
pub fn join<T: Scalar>(v: &[T]) -> String {
    v.iter().map(|x| format!("{}", x.f64())).collect::<Vec<_>>().join(";")
}

/// Per-sample `t, max|ω|, mean|ω|`.
pub fn write_weight_summary<T: Scalar, W: Write>(traj: &WeightTrajectory<T>, out: W) -> Result<()> {
    let mut t = Table::new(out, &["t", "max_abs_w", "mean_abs_w"])?;
    for (time, w) in traj.sample_times.iter().zip(&traj.snapshots) {
        t.row([time.to_string(), w.max_abs().to_string(), w.mean_abs().to_string()])?;
    }
    t.finish()
}

/// Raster as binary PPM (P6). The top image row is the high end of the
/// second free axis.
pub fn write_ppm<T: Scalar, W: Write>(raster: &BasinRaster<T>, mut out: W) -> Result<()> {
    let r = raster.resolution();
    write!(out, "P6\n{r} {r}\n255\n")?;
    let mut buf = Vec::with_capacity(3 * r * r);
    for row in (0..r).rev() {
        for col in 0..r {
            buf.extend_from_slice(&raster.cell(row, col).map_or(UNRESOLVED_RGB, palette_color));
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

/// `row, col, attractor` with an empty attractor for unresolved nodes.
pub fn write_raster_csv<T: Scalar, W: Write>(raster: &BasinRaster<T>, out: W) -> Result<()> {
    let mut t = Table::new(out, &["row", "col", "attractor"])?;
    let r = raster.resolution();
    for row in 0..r {
        for col in 0..r {
            t.row([
                row.to_string(),
                col.to_string(),
                raster.cell(row, col).map_or(String::new(), |id| id.to_string()),
            ])?;
        }
    }
    t.finish()
}

/// `attractor, r, g, b, location`; the unresolved colour is listed as `-`.
pub fn write_palette<T: Scalar, W: Write>(catalog: &AttractorCatalog<T>, out: W) -> Result<()> {
    let mut t = Table::new(out, &["attractor", "r", "g", "b", "location"])?;
    let [r, g, b] = UNRESOLVED_RGB;
    t.row([
        "-".to_string(),
        r.to_string(),
        g.to_string(),
        b.to_string(),
        String::new(),
    ])?;
    for (id, a) in catalog.attractors.iter().enumerate() {
        let [r, g, b] = palette_color(id);
        t.row([id.to_string(), r.to_string(), g.to_string(), b.to_string(), join(a)])?;
    }
    t.finish()
}

/// `slice, vertex, w1, w2, residual, closed, stalled` per vertex.
pub fn write_section_csv<T: Scalar, W: Write>(section: &ManifoldSection<T>, out: W) -> Result<()> {
    let mut t = Table::new(out, &["slice", "vertex", "w1", "w2", "residual", "closed", "stalled"])?;
    for c in &section.curves {
        for (i, (v, r)) in c.vertices.iter().zip(&c.residuals).enumerate() {
            t.row([
                c.slice.to_string(),
                i.to_string(),
                v[0].to_string(),
                v[1].to_string(),
                format!("{:e}", r.f64()),
                c.closed.to_string(),
                c.stalled.to_string(),
            ])?;
        }
    }
    t.finish()
}

/// Wavefront-style mesh: `v x y z` lines, then `f a b c` lines with
/// one-based vertex indices.
pub fn write_mesh<W: Write>(mesh: &Mesh, mut out: W) -> Result<()> {
    writeln!(out, "# axes: w1 w2 slice")?;
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StimulusSchedule;
    use crate::simulate::{integrate_learning, make_initial_conditions};

    #[test]
    fn training_set_round_trip() {
        let set = TrainingSet::generate(7, 3, 99);
        let mut buf = Vec::new();
        write_training_set(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# N=7 K=3 seed=99\n"));
        assert_eq!(read_training_set(&buf[..]).unwrap(), set);
        assert!(read_training_set(&b"# N=2 K=1\n1,0\n"[..]).is_err());
        assert!(read_training_set(&b"1,1\n"[..]).is_err());
    }

    #[test]
    fn trajectory_round_trip_is_exact() {
        let cfg = NetworkConfig {
            t_train: 2.4,
            ..NetworkConfig::<f64>::with_n(5)
        };
        let set = TrainingSet::generate(5, 2, 4);
        let traj = integrate_learning(
            &cfg,
            &StimulusSchedule::new(set, cfg.t_s),
            &make_initial_conditions(&cfg, 8),
            0.1,
            Integrator::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trajectory(&traj, &mut buf).unwrap();
        let back: WeightTrajectory<f64> = read_trajectory(&buf[..]).unwrap();
        assert_eq!(back, traj);
        let mut again = Vec::new();
        write_trajectory(&back, &mut again).unwrap();
        assert_eq!(buf, again);
        buf[0] = b'X';
        assert!(matches!(read_trajectory::<f64, _>(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn bare_trajectory_round_trip() {
        let times = vec![0.0, 0.5, 1.0];
        let snaps = times
            .iter()
            .map(|&t| WeightMatrix::from_fn(3, |i, j| t * (i + j) as f64))
            .collect();
        let traj = WeightTrajectory::from_snapshots(times, snaps).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&traj, &mut buf).unwrap();
        assert_eq!(read_trajectory::<f64, _>(&buf[..]).unwrap(), traj);
    }

    #[test]
    fn ppm_layout() {
        let plane = crate::basins::PlaneSpec {
            resolution: 2,
            ..crate::basins::PlaneSpec::standard(vec![0.0f64; 2])
        };
        let raster = BasinRaster {
            plane,
            cells: vec![Some(0), Some(1), None, Some(0)],
        };
        let mut buf = Vec::new();
        write_ppm(&raster, &mut buf).unwrap();
        let header = b"P6\n2 2\n255\n";
        assert_eq!(&buf[..header.len()], header);
        let px = &buf[header.len()..];
        assert_eq!(px.len(), 12);
        // Top-left pixel is row 1, col 0: unresolved.
        assert_eq!(&px[0..3], &UNRESOLVED_RGB);
        assert_eq!(&px[6..9], &palette_color(0));
        assert_eq!(&px[9..12], &palette_color(1));
    }

    #[test]
    fn tables_quote_fields() {
        let mut buf = Vec::new();
        let mut t = Table::new(&mut buf, &["a", "b"]).unwrap();
        t.row(["x,y", "plain"]).unwrap();
        t.finish().unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n\"x,y\",plain\n");
    }

    #[test]
    fn mesh_text_uses_one_based_faces() {
        let mesh = Mesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.5]],
            faces: vec![[0, 1, 2]],
        };
        let mut buf = Vec::new();
        write_mesh(&mesh, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("v 0 1 0.5\n"));
        assert!(s.ends_with("f 1 2 3\n"));
    }
}
