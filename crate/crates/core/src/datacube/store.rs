//! Chunked-array cube directory in the Zarr v2 layout with consolidated
//! metadata, as used by the public SeasFire cube.
//!
//! Supported: `C` order, no filters, compressor `null`, `zlib` or `gzip`,
//! and little-endian numeric or boolean dtypes. Dense variables have
//! dimensions `(time, latitude, longitude)`, static ones
//! `(latitude, longitude)`, index series `(time,)`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use indexmap::IndexMap;
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CubeStore, Field, Grid, TimeAxis, STEPS_PER_YEAR, STEP_DAYS};
use crate::error::{Error, Result};

pub const LAT: &str = "latitude";
pub const LON: &str = "longitude";
pub const TIME: &str = "time";

/// Names of the arrays to read from (or write to) a cube directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoreSchema {
    pub drivers: Vec<String>,
    pub indices: Vec<String>,
    pub target: String,
    pub land_mask: String,
    pub region_mask: Option<String>,
}

impl Default for StoreSchema {
    fn default() -> Self {
        StoreSchema {
            drivers: Vec::new(),
            indices: Vec::new(),
            target: "gwis_ba".into(),
            land_mask: "lsm".into(),
            region_mask: Some("gfed_region".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    Bool,
    I8,
    U8,
    I16,
    I32,
    I64,
    F32,
    F64,
}

impl Dtype {
    fn parse(s: &str, path: &Path) -> Result<Self> {
        let (order, kind) = s.split_at(1);
        if order == ">" {
            return Err(Error::format(
                path,
                format!("big-endian dtype {s} unsupported"),
            ));
        }
        Ok(match kind {
            "b1" => Dtype::Bool,
            "i1" => Dtype::I8,
            "u1" => Dtype::U8,
            "i2" => Dtype::I16,
            "i4" => Dtype::I32,
            "i8" => Dtype::I64,
            "f4" => Dtype::F32,
            "f8" => Dtype::F64,
            _ => return Err(Error::format(path, format!("unsupported dtype {s}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Dtype::Bool | Dtype::I8 | Dtype::U8 => 1,
            Dtype::I16 => 2,
            Dtype::I32 | Dtype::F32 => 4,
            Dtype::I64 | Dtype::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Dtype::Bool => (b[0] != 0) as u8 as f64,
            Dtype::I8 => b[0] as i8 as f64,
            Dtype::U8 => b[0] as f64,
            Dtype::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Dtype::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Dtype::I64 => i64::from_le_bytes(b.try_into().unwrap()) as f64,
            Dtype::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Dtype::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Codec {
    Raw,
    Zlib,
    Gzip,
}

/// Parsed `.zarray` plus the dimension names from `.zattrs`.
#[derive(Debug, Clone)]
struct ArrayMeta {
    shape: Vec<usize>,
    chunks: Vec<usize>,
    dtype: Dtype,
    codec: Codec,
    fill: f64,
    separator: String,
    dims: Vec<String>,
    attrs: Value,
}

/// Read-side view of a cube directory.
struct ZarrGroup {
    root: PathBuf,
    meta: BTreeMap<String, Value>,
}

impl ZarrGroup {
    fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::io(
                root,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "cube directory does not exist",
                ),
            ));
        }
        let consolidated = root.join(".zmetadata");
        let meta = if consolidated.exists() {
            let doc: Value = read_json(&consolidated)?;
            let entries = doc
                .get("metadata")
                .and_then(Value::as_object)
                .ok_or_else(|| Error::format(&consolidated, "missing \"metadata\" object"))?;
            entries
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect()
        } else {
            // Unconsolidated store: walk one level of array directories.
            let mut meta = BTreeMap::new();
            let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
            for entry in entries {
                let entry = entry.map_err(|e| Error::io(root, e))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                for file in [".zarray", ".zattrs"] {
                    let p = entry.path().join(file);
                    if p.exists() {
                        meta.insert(format!("{name}/{file}"), read_json(&p)?);
                    }
                }
            }
            meta
        };
        Ok(ZarrGroup {
            root: root.to_path_buf(),
            meta,
        })
    }

    fn has(&self, name: &str) -> bool {
        self.meta.contains_key(&format!("{name}/.zarray"))
    }

    fn array_meta(&self, name: &str) -> Result<ArrayMeta> {
        let path = self.root.join(name);
        let za = self
            .meta
            .get(&format!("{name}/.zarray"))
            .ok_or_else(|| Error::format(&path, "array not found in cube"))?;
        let attrs = self
            .meta
            .get(&format!("{name}/.zattrs"))
            .cloned()
            .unwrap_or(Value::Object(Default::default()));
        let usizes = |key: &str| -> Result<Vec<usize>> {
            za.get(key)
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(|v| v.as_u64().map(|x| x as usize)).collect())
                .ok_or_else(|| Error::format(&path, format!("bad or missing \"{key}\"")))
        };
        let shape = usizes("shape")?;
        let chunks = usizes("chunks")?;
        let dtype = Dtype::parse(
            za.get("dtype")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::format(&path, "missing dtype"))?,
            &path,
        )?;
        if za.get("order").and_then(Value::as_str).unwrap_or("C") != "C" {
            return Err(Error::format(&path, "only C order is supported"));
        }
        if !za.get("filters").is_none_or(Value::is_null) {
            return Err(Error::format(&path, "array filters are not supported"));
        }
        let codec = match za.get("compressor") {
            None | Some(Value::Null) => Codec::Raw,
            Some(c) => match c.get("id").and_then(Value::as_str) {
                Some("zlib") => Codec::Zlib,
                Some("gzip") => Codec::Gzip,
                other => {
                    return Err(Error::format(
                        &path,
                        format!("unsupported compressor {other:?}"),
                    ))
                }
            },
        };
        let fill = match za.get("fill_value") {
            Some(Value::Number(n)) => n.as_f64().unwrap_or(0.0),
            Some(Value::String(s)) if s == "NaN" => f64::NAN,
            Some(Value::Bool(b)) => *b as u8 as f64,
            _ => 0.0,
        };
        let separator = za
            .get("dimension_separator")
            .and_then(Value::as_str)
            .unwrap_or(".")
            .to_string();
        let dims = attrs
            .get("_ARRAY_DIMENSIONS")
            .and_then(Value::as_array)
            .map(|a| {
                a.iter()
                    .filter_map(|v| v.as_str().map(String::from))
                    .collect()
            })
            .unwrap_or_default();
        if shape.len() != chunks.len() {
            return Err(Error::format(&path, "shape and chunks rank differ"));
        }
        Ok(ArrayMeta {
            shape,
            chunks,
            dtype,
            codec,
            fill,
            separator,
            dims,
            attrs,
        })
    }

    /// Reads a whole array in C order, converting every element with `conv`.
    fn read<T: Copy>(&self, name: &str, conv: impl Fn(f64) -> T) -> Result<(ArrayMeta, Vec<T>)> {
        let meta = self.array_meta(name)?;
        let dir = self.root.join(name);
        let rank = meta.shape.len();
        let total: usize = meta.shape.iter().product();
        let fill = conv(meta.fill);
        let mut out = vec![fill; total];
        if rank == 0 || total == 0 {
            return Ok((meta, out));
        }
        let grid: Vec<usize> = meta
            .shape
            .iter()
            .zip(&meta.chunks)
            .map(|(s, c)| s.div_ceil(*c))
            .collect();
        let chunk_len: usize = meta.chunks.iter().product();
        let esize = meta.dtype.size();
        let out_strides = c_strides(&meta.shape);
        let chunk_strides = c_strides(&meta.chunks);
        let inner = *meta.chunks.last().unwrap();

        for cidx in multi_indices(&grid) {
            let key = cidx
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(&meta.separator);
            let path = dir.join(&key);
            if !path.exists() {
                continue;
            }
            let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let bytes = decompress(raw, meta.codec, &path)?;
            if bytes.len() != chunk_len * esize {
                return Err(Error::format(
                    &path,
                    format!(
                        "chunk has {} bytes, expected {}",
                        bytes.len(),
                        chunk_len * esize
                    ),
                ));
            }
            // Copy row by row along the last axis, clipping edge chunks.
            let outer = &meta.chunks[..rank - 1];
            for oidx in multi_indices(outer) {
                let mut in_bounds = true;
                let mut dst = 0usize;
                let mut src = 0usize;
                for d in 0..rank - 1 {
                    let g = cidx[d] * meta.chunks[d] + oidx[d];
                    if g >= meta.shape[d] {
                        in_bounds = false;
                        break;
                    }
                    dst += g * out_strides[d];
                    src += oidx[d] * chunk_strides[d];
                }
                if !in_bounds {
                    continue;
                }
                let start = cidx[rank - 1] * inner;
                let n = inner.min(meta.shape[rank - 1].saturating_sub(start));
                dst += start;
                for k in 0..n {
                    let off = (src + k) * esize;
                    out[dst + k] = conv(meta.dtype.decode(&bytes[off..off + esize]));
                }
            }
        }
        Ok((meta, out))
    }
}

fn c_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

fn multi_indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in shape {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..n).map(move |i| {
                    let mut p = prefix.clone();
                    p.push(i);
                    p
                })
            })
            .collect();
    }
    out
}

fn decompress(raw: Vec<u8>, codec: Codec, path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match codec {
        Codec::Raw => return Ok(raw),
        Codec::Zlib => flate2::read::ZlibDecoder::new(&raw[..]).read_to_end(&mut out),
        Codec::Gzip => flate2::read::GzDecoder::new(&raw[..]).read_to_end(&mut out),
    }
    .map_err(|e| Error::format(path, format!("corrupt chunk: {e}")))?;
    Ok(out)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn parse_time_units(units: &str, path: &Path) -> Result<(i64, NaiveDateTime)> {
    let bad = || Error::format(path, format!("unsupported time units {units:?}"));
    let (unit, base) = units.split_once(" since ").ok_or_else(bad)?;
    let seconds = match unit.trim() {
        "days" => 86_400,
        "hours" => 3_600,
        "minutes" => 60,
        "seconds" => 1,
        _ => return Err(bad()),
    };
    let base = base.trim();
    let date_part = base.split([' ', 'T']).next().unwrap_or(base);
    let date = NaiveDate::parse_from_str(date_part, "%Y-%m-%d").map_err(|_| bad())?;
    Ok((seconds, date.and_hms_opt(0, 0, 0).unwrap()))
}

/// Loads the variables named by `schema` from a cube directory.
pub fn open_cube(path: &Path, schema: &StoreSchema) -> Result<CubeStore> {
    let group = ZarrGroup::open(path)?;
    let (_, lat) = group.read(LAT, |v| v)?;
    let (_, lon) = group.read(LON, |v| v)?;
    // Some stores use [0, 360) longitudes; fold them onto [-180, 180).
    let lon: Vec<f64> = lon
        .into_iter()
        .map(|x| if x >= 180.0 { x - 360.0 } else { x })
        .collect();
    let grid = Grid { lat, lon };
    let (n_lat, n_lon) = grid.shape();

    let (tmeta, tvals) = group.read(TIME, |v| v)?;
    let units = tmeta
        .attrs
        .get("units")
        .and_then(Value::as_str)
        .unwrap_or("days since 1970-01-01");
    let (unit_seconds, base) = parse_time_units(units, &path.join(TIME))?;
    let first = tvals
        .first()
        .ok_or_else(|| Error::format(path.join(TIME), "empty time axis"))?;
    let first_date = (base + Duration::seconds((*first as i64) * unit_seconds)).date();
    if first_date.ordinal0() != 0 {
        log::warn!("cube time axis starts on {first_date}, not on 1 January");
    }
    if let Some(second) = tvals.get(1) {
        let step_days = ((second - first) * unit_seconds as f64 / 86_400.0).round() as i64;
        if step_days != STEP_DAYS {
            return Err(Error::format(
                path.join(TIME),
                format!("time step is {step_days} days, expected {STEP_DAYS}"),
            ));
        }
    }
    let time = TimeAxis::new(first_date.year(), tvals.len())?;

    let mut drivers = IndexMap::new();
    for name in &schema.drivers {
        drivers.insert(
            name.clone(),
            read_field(&group, name, time.len, n_lat, n_lon)?,
        );
    }
    let mut indices = IndexMap::new();
    for name in &schema.indices {
        let (meta, vals) = group.read(name, |v| v as f32)?;
        if meta.shape != [time.len] {
            return Err(Error::format(
                path.join(name),
                format!(
                    "index series has shape {:?}, expected [{}]",
                    meta.shape, time.len
                ),
            ));
        }
        indices.insert(name.clone(), Array1::from(vals));
    }
    let burned = read_field(&group, &schema.target, time.len, n_lat, n_lon)?;
    let land = read_static(&group, &schema.land_mask, n_lat, n_lon)?.mapv(|v| v > 0.5);
    let regions = match &schema.region_mask {
        Some(name) if group.has(name) => Some(read_static(&group, name, n_lat, n_lon)?.mapv(|v| {
            if v.is_nan() {
                0
            } else {
                v as i32
            }
        })),
        Some(name) => {
            log::warn!("region mask {name} not present in cube; regional reports disabled");
            None
        }
        None => None,
    };
    CubeStore::new(grid, time, drivers, indices, burned, land, regions)
}

fn read_static(group: &ZarrGroup, name: &str, n_lat: usize, n_lon: usize) -> Result<Array2<f32>> {
    let (meta, vals) = group.read(name, |v| v as f32)?;
    if meta.shape != [n_lat, n_lon] {
        return Err(Error::format(
            group.root.join(name),
            format!("expected shape [{n_lat}, {n_lon}], found {:?}", meta.shape),
        ));
    }
    Ok(Array2::from_shape_vec((n_lat, n_lon), vals).expect("shape checked"))
}

fn read_field(
    group: &ZarrGroup,
    name: &str,
    n_time: usize,
    n_lat: usize,
    n_lon: usize,
) -> Result<Field> {
    let meta = group.array_meta(name)?;
    let path = group.root.join(name);
    match meta.shape.len() {
        2 => Ok(Field::Static(read_static(group, name, n_lat, n_lon)?)),
        3 => {
            if !meta.dims.is_empty() && meta.dims != [TIME, LAT, LON] {
                return Err(Error::format(
                    &path,
                    format!(
                        "dimensions {:?}, expected [time, latitude, longitude]",
                        meta.dims
                    ),
                ));
            }
            if meta.shape != [n_time, n_lat, n_lon] {
                return Err(Error::format(
                    &path,
                    format!(
                        "expected shape [{n_time}, {n_lat}, {n_lon}], found {:?}",
                        meta.shape
                    ),
                ));
            }
            let (_, vals) = group.read(name, |v| v as f32)?;
            Ok(Field::Dense(
                Array3::from_shape_vec((n_time, n_lat, n_lon), vals).expect("shape checked"),
            ))
        }
        _ => Err(Error::format(
            &path,
            "expected a 2-D or 3-D spatial variable",
        )),
    }
}

/// Write side: collects metadata so `.zmetadata` can be consolidated.
struct ZarrWriter {
    root: PathBuf,
    meta: BTreeMap<String, Value>,
}

impl ZarrWriter {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let mut w = ZarrWriter {
            root: root.to_path_buf(),
            meta: BTreeMap::new(),
        };
        w.put_json(".zgroup", json!({ "zarr_format": 2 }))?;
        w.put_json(
            ".zattrs",
            json!({ "steps_per_year": STEPS_PER_YEAR, "step_days": STEP_DAYS }),
        )?;
        Ok(w)
    }

    fn put_json(&mut self, rel: &str, v: Value) -> Result<()> {
        let path = self.root.join(rel);
        let text = serde_json::to_string_pretty(&v).expect("json serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.meta.insert(rel.to_string(), v);
        Ok(())
    }

    /// Writes a little-endian array chunked along its first axis.
    #[allow(clippy::too_many_arguments)]
    fn write<T: Copy>(
        &mut self,
        name: &str,
        dims: &[&str],
        shape: &[usize],
        data: &[T],
        dtype: &str,
        encode: impl Fn(T, &mut Vec<u8>),
        extra_attrs: Value,
    ) -> Result<()> {
        let dir = self.root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut chunks = shape.to_vec();
        if shape.len() == 3 {
            chunks[0] = 1;
        }
        let fill = if dtype.contains('f') {
            json!("NaN")
        } else {
            json!(0)
        };
        self.put_json(
            &format!("{name}/.zarray"),
            json!({
                "zarr_format": 2,
                "shape": shape,
                "chunks": chunks,
                "dtype": dtype,
                "compressor": { "id": "zlib", "level": 6 },
                "fill_value": fill,
                "order": "C",
                "filters": null,
                "dimension_separator": ".",
            }),
        )?;
        let mut attrs = json!({ "_ARRAY_DIMENSIONS": dims });
        if let (Some(a), Value::Object(extra)) = (attrs.as_object_mut(), extra_attrs) {
            a.extend(extra);
        }
        self.put_json(&format!("{name}/.zattrs"), attrs)?;

        let chunk_len: usize = chunks.iter().product();
        let n_chunks = if shape.len() == 3 { shape[0] } else { 1 };
        for c in 0..n_chunks {
            let mut bytes = Vec::with_capacity(chunk_len * 8);
            for v in &data[c * chunk_len..(c + 1) * chunk_len] {
                encode(*v, &mut bytes);
            }
            let mut key = vec![c.to_string()];
            key.extend(std::iter::repeat_n("0".to_string(), shape.len() - 1));
            let path = dir.join(key.join("."));
            let mut enc = flate2::write::ZlibEncoder::new(Vec::new(), flate2::Compression::new(6));
            enc.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
            let compressed = enc.finish().map_err(|e| Error::io(&path, e))?;
            fs::write(&path, compressed).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn write_f32(
        &mut self,
        name: &str,
        dims: &[&str],
        shape: &[usize],
        data: &[f32],
    ) -> Result<()> {
        self.write(
            name,
            dims,
            shape,
            data,
            "<f4",
            |v, b| b.extend(v.to_le_bytes()),
            json!({}),
        )
    }

    fn finish(mut self) -> Result<()> {
        let metadata: serde_json::Map<String, Value> =
            std::mem::take(&mut self.meta).into_iter().collect();
        let doc = json!({ "zarr_consolidated_format": 1, "metadata": metadata });
        let path = self.root.join(".zmetadata");
        let text = serde_json::to_string_pretty(&doc).expect("json serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Writes `cube` as a consolidated Zarr directory that [`open_cube`] reads
/// back. The target, land mask and region mask use the schema's names.
pub fn write_cube(cube: &CubeStore, path: &Path, schema: &StoreSchema) -> Result<()> {
    let mut w = ZarrWriter::create(path)?;
    let grid = cube.grid();
    let (n_lat, n_lon) = grid.shape();
    let time = cube.time();
    w.write(
        LAT,
        &[LAT],
        &[n_lat],
        &grid.lat,
        "<f8",
        |v, b| b.extend(v.to_le_bytes()),
        json!({"units": "degrees_north"}),
    )?;
    w.write(
        LON,
        &[LON],
        &[n_lon],
        &grid.lon,
        "<f8",
        |v, b| b.extend(v.to_le_bytes()),
        json!({"units": "degrees_east"}),
    )?;
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
    let days: Vec<i64> = (0..time.len)
        .map(|t| (time.date(t) - epoch).num_days())
        .collect();
    w.write(
        TIME,
        &[TIME],
        &[time.len],
        &days,
        "<i8",
        |v, b| b.extend(v.to_le_bytes()),
        json!({ "units": "days since 1970-01-01", "calendar": "proleptic_gregorian" }),
    )?;

    let write_field = |w: &mut ZarrWriter, name: &str, field: &Field| -> Result<()> {
        match field {
            Field::Dense(a) => w.write_f32(
                name,
                &[TIME, LAT, LON],
                a.shape(),
                a.as_standard_layout().as_slice().unwrap(),
            ),
            Field::Static(a) => w.write_f32(
                name,
                &[LAT, LON],
                a.shape(),
                a.as_standard_layout().as_slice().unwrap(),
            ),
        }
    };
    for (name, field) in cube.drivers() {
        write_field(&mut w, name, field)?;
    }
    for (name, series) in cube.indices() {
        w.write_f32(name, &[TIME], &[time.len], series.as_slice().unwrap())?;
    }
    write_field(&mut w, &schema.target, cube.burned())?;
    let land: Vec<f32> = cube.land().iter().map(|&l| l as u8 as f32).collect();
    w.write_f32(&schema.land_mask, &[LAT, LON], &[n_lat, n_lon], &land)?;
    if let (Some(name), Some(regions)) = (&schema.region_mask, cube.regions()) {
        let r: Vec<i32> = regions.iter().copied().collect();
        w.write(
            name,
            &[LAT, LON],
            &[n_lat, n_lon],
            &r,
            "<i4",
            |v, b| b.extend(v.to_le_bytes()),
            json!({}),
        )?;
    }
    w.finish()
}

/// SHA-256 over every file of a cube directory, in sorted path order.
pub fn cube_checksum(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let p = entry.map_err(|e| Error::io(&dir, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut hasher = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(path).unwrap_or(&f);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update(fs::read(&f).map_err(|e| Error::io(&f, e))?);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// Names and dimensions of every array in a cube directory.
pub fn list_arrays(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let group = ZarrGroup::open(path)?;
    let names: Vec<String> = group
        .meta
        .keys()
        .filter_map(|k| k.strip_suffix("/.zarray").map(String::from))
        .collect();
    names
        .into_iter()
        .map(|n| {
            let dims = group.array_meta(&n)?.dims;
            Ok((n, dims))
        })
        .collect()
}
