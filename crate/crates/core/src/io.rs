//! File formats: network checkpoints, sample sets, CSV tables and VTK export.
//!
//! Binary layouts share one framing: a five-byte magic, a little-endian `u32`
//! byte count, a UTF-8 JSON header of that length, then little-endian `f64`
//! payloads whose sizes the header determines.
//!
//! Checkpoint (`NINF1`): header `{"config", "epoch", "n_values", "optimizer_step"}`,
//! then the `n_values` parameters (synthesizer layers as `W` column-major then
//! `b`, followed by modulator layers the same way), then, when
//! `optimizer_step` is present, the Adam first and second moments.
//!
//! Sample set (`NINS1`): header `{"mesh", "count"}`, then per record a `u64`
//! id, a `u32` length and JSON echo of the control, and one `f64` per node.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ifol::{Adam, EpochStats};
use crate::mesh::{MeshSpec, StructuredMesh};
use crate::neural_field::{ModelParams, SirenConfig};
use crate::newton::NewtonReport;
use crate::nin::{BenchRow, Control, SummaryRow};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"NINF1";
pub const SAMPLES_MAGIC: &[u8; 5] = b"NINS1";

fn write_header<W: Write, H: Serialize>(w: &mut W, magic: &[u8; 5], header: &H) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

fn read_header<R: Read, H: for<'de> Deserialize<'de>>(r: &mut R, magic: &[u8; 5]) -> Result<H> {
    let mut m = [0u8; 5];
    r.read_exact(&mut m).map_err(|_| Error::Format("file too short for magic".into()))?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let n = read_u32(r)? as usize;
    let mut json = vec![0u8; n];
    r.read_exact(&mut json).map_err(|_| Error::Format("truncated header".into()))?;
    Ok(serde_json::from_slice(&json)?)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated length field".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|_| Error::Format(format!("expected {n} float values")))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: SirenConfig,
    epoch: usize,
    n_values: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer_step: Option<u64>,
}

/// Parameters plus the bookkeeping needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Number of epochs trained so far.
    pub epoch: usize,
    pub optimizer: Option<Adam>,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = CheckpointHeader {
        config: ckpt.params.config().clone(),
        epoch: ckpt.epoch,
        n_values: ckpt.params.len(),
        optimizer_step: ckpt.optimizer.as_ref().map(|a| a.t),
    };
    write_header(&mut w, CHECKPOINT_MAGIC, &header)?;
    write_f64s(&mut w, ckpt.params.values())?;
    if let Some(a) = &ckpt.optimizer {
        write_f64s(&mut w, &a.m)?;
        write_f64s(&mut w, &a.v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let h: CheckpointHeader = read_header(&mut r, CHECKPOINT_MAGIC)?;
    let values = read_f64s(&mut r, h.n_values)?;
    let params = ModelParams::from_values(&h.config, values)?;
    let optimizer = match h.optimizer_step {
        Some(t) => Some(Adam { m: read_f64s(&mut r, h.n_values)?, v: read_f64s(&mut r, h.n_values)?, t }),
        None => None,
    };
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", rest.len())));
    }
    Ok(Checkpoint { params, epoch: h.epoch, optimizer })
}

/// One stored sample: its control echo and nodal phase values.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: u64,
    pub control: Control,
    pub phase: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SamplesHeader {
    mesh: MeshSpec,
    count: usize,
}

/// Writes the binary sample file and a plain-text manifest next to it
/// (`<path>.manifest.txt`).
pub fn write_samples(path: &Path, mesh: &StructuredMesh, records: &[SampleRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, SAMPLES_MAGIC, &SamplesHeader { mesh: mesh.spec(), count: records.len() })?;
    let mut manifest = format!(
        "# sample set {}\n# mesh {}\n# count {}\n# id\tkind\tphi_min\tphi_max\n",
        path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        crate::nin::resolution_label(mesh),
        records.len()
    );
    for rec in records {
        if rec.phase.len() != mesh.n_nodes() {
            return Err(Error::Shape(format!("sample {} has {} values for {} nodes", rec.id, rec.phase.len(), mesh.n_nodes())));
        }
        w.write_all(&rec.id.to_le_bytes())?;
        let echo = serde_json::to_vec(&rec.control)?;
        w.write_all(&(echo.len() as u32).to_le_bytes())?;
        w.write_all(&echo)?;
        write_f64s(&mut w, &rec.phase)?;
        let kind = match rec.control {
            Control::Fourier { .. } => "fourier",
            Control::Boundary { .. } => "boundary",
        };
        let lo = rec.phase.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rec.phase.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        manifest += &format!("{}\t{kind}\t{lo}\t{hi}\n", rec.id);
    }
    w.flush()?;
    std::fs::write(manifest_path(path), manifest)?;
    Ok(())
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.txt");
    s.into()
}

pub fn read_samples(path: &Path) -> Result<(MeshSpec, Vec<SampleRecord>)> {
    let mut r = BufReader::new(File::open(path)?);
    let h: SamplesHeader = read_header(&mut r, SAMPLES_MAGIC)?;
    let n_nodes: usize = h.mesh.nodes_per_axis.iter().product();
    let mut records = Vec::with_capacity(h.count);
    for _ in 0..h.count {
        let mut id = [0u8; 8];
        r.read_exact(&mut id).map_err(|_| Error::Format("truncated sample record".into()))?;
        let n = read_u32(&mut r)? as usize;
        let mut echo = vec![0u8; n];
        r.read_exact(&mut echo).map_err(|_| Error::Format("truncated sample echo".into()))?;
        records.push(SampleRecord {
            id: u64::from_le_bytes(id),
            control: serde_json::from_slice(&echo)?,
            phase: read_f64s(&mut r, n_nodes)?,
        });
    }
    Ok((h.mesh, records))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// `epoch, mean_loss, grad_norm, seconds`, then the remaining statistics.
pub fn write_training_log(path: &Path, log: &[EpochStats], append: bool) -> Result<()> {
    let file = std::fs::OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path)?;
    let header = append && file.metadata()?.len() > 0;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if !header {
        w.write_record(["epoch", "mean_loss", "grad_norm", "seconds", "mean_abs_loss", "descent_fraction", "inverted_points"])
            .map_err(csv_err)?;
    }
    for s in log {
        w.write_record([
            s.epoch.to_string(),
            s.mean_loss.to_string(),
            s.grad_norm.to_string(),
            s.seconds.to_string(),
            s.mean_abs_loss.to_string(),
            s.descent_fraction.to_string(),
            s.inverted_points.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Benchmark rows. Metric columns follow the component names of the first
/// row (`mae_ux, mae_uy, …, errmax_ux, …`).
pub fn write_bench_csv(path: &Path, rows: &[BenchRow], components: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut head: Vec<String> =
        ["sample_id", "resolution", "method", "iters_total", "increments", "wall_s"].iter().map(|s| s.to_string()).collect();
    head.extend(components.iter().map(|c| format!("mae_{c}")));
    head.extend(components.iter().map(|c| format!("errmax_{c}")));
    head.push("converged".into());
    head.push("rel_linf".into());
    w.write_record(&head).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.sample_id.to_string(),
            r.resolution.clone(),
            r.method.as_str().to_string(),
            r.iters_total.to_string(),
            r.increments.to_string(),
            r.wall_s.to_string(),
        ];
        rec.extend(r.mae.iter().map(|v| v.to_string()));
        rec.extend(r.errmax.iter().map(|v| v.to_string()));
        rec.push(r.converged.to_string());
        rec.push(r.rel_linf.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "resolution",
        "method",
        "n",
        "n_converged",
        "iters_q1",
        "iters_median",
        "iters_q3",
        "mae_q1",
        "mae_median",
        "mae_q3",
        "wall_median",
    ])
    .map_err(csv_err)?;
    let q = |v: &Option<[f64; 3]>, i: usize| v.map_or(String::new(), |q| q[i].to_string());
    for r in rows {
        w.write_record([
            r.resolution.clone(),
            r.method.as_str().to_string(),
            r.n.to_string(),
            r.n_converged.to_string(),
            q(&r.iters, 0),
            q(&r.iters, 1),
            q(&r.iters, 2),
            q(&r.mae, 0),
            q(&r.mae, 1),
            q(&r.mae, 2),
            q(&r.wall_s, 1),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `increment, load_scale, iteration, residual_norm, converged` per recorded norm.
pub fn write_newton_csv(path: &Path, report: &NewtonReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["increment", "load_scale", "iteration", "residual_norm", "converged"]).map_err(csv_err)?;
    for (n, inc) in report.increments.iter().enumerate() {
        for (k, r) in inc.residual_norms.iter().enumerate() {
            w.write_record([n.to_string(), inc.load_scale.to_string(), k.to_string(), r.to_string(), inc.converged.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A nodal field for VTK export: `components` values per node, interleaved.
pub struct VtkField<'a> {
    pub name: &'a str,
    pub components: usize,
    pub values: &'a [f64],
}

fn vtk_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Legacy ASCII `STRUCTURED_POINTS` file. Two- or three-component fields
/// are written as `VECTORS` (padded to three), others as `SCALARS`; every
/// number carries 17 significant digits.
pub fn write_vtk(path: &Path, mesh: &StructuredMesh, title: &str, fields: &[VtkField]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = mesh.n_nodes();
    let mut dims = [1usize; 3];
    let mut spacing = [1.0f64; 3];
    for a in 0..mesh.dim() {
        dims[a] = mesh.nodes_per_axis()[a];
        spacing[a] = mesh.extents()[a] / (dims[a] - 1) as f64;
    }
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.replace('\n', " "))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2])?;
    writeln!(w, "ORIGIN 0 0 0")?;
    writeln!(w, "SPACING {} {} {}", vtk_num(spacing[0]), vtk_num(spacing[1]), vtk_num(spacing[2]))?;
    writeln!(w, "POINT_DATA {n}")?;
    for f in fields {
        if f.values.len() != n * f.components {
            return Err(Error::Shape(format!("field {} has {} values for {n} nodes", f.name, f.values.len())));
        }
        if f.components == 2 || f.components == 3 {
            writeln!(w, "VECTORS {} double", f.name)?;
            for i in 0..n {
                let mut v = [0.0; 3];
                v[..f.components].copy_from_slice(&f.values[i * f.components..(i + 1) * f.components]);
                writeln!(w, "{} {} {}", vtk_num(v[0]), vtk_num(v[1]), vtk_num(v[2]))?;
            }
        } else {
            writeln!(w, "SCALARS {} double {}", f.name, f.components)?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for i in 0..n {
                let row: Vec<String> = f.values[i * f.components..(i + 1) * f.components].iter().map(|&v| vtk_num(v)).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
