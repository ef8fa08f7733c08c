//! The `EPTIKIT1` binary container.
//!
//! Layout: 8-byte magic `EPTIKIT1`, a little-endian `u32` header length,
//! a UTF-8 header of `key=value` lines, then a little-endian `f32` payload.
//! Complex values are interleaved `(re, im)`. `dims` lists axis lengths
//! fastest-first. An optional auxiliary section (`aux_dtype`, `aux_dims`)
//! follows the main payload directly.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use super::{
    B0Map, CoefficientMaps, CoilSet, EchoTrain, Grid, ImageSeries, KtData, Layout,
    PatternFamily, Resolution, SamplingPattern, ShotVariation, SubspaceBasis, TissuePhantom,
    TrainKind, C64, POLY_TERMS,
};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EPTIKIT1";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic: not an EPTIKIT1 container")]
    BadMagic,
    #[error("truncated payload: header declares {expected} floats, file holds {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dim/dtype mismatch: {0}")]
    DimMismatch(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("non-finite value in payload")]
    NonFinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    C32,
}

impl Dtype {
    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::C32 => "c32",
        }
    }

    fn parse(s: &str) -> std::result::Result<Self, ContainerError> {
        match s {
            "f32" => Ok(Dtype::F32),
            "c32" => Ok(Dtype::C32),
            other => Err(ContainerError::DimMismatch(format!("unknown dtype '{other}'"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 1,
            Dtype::C32 => 2,
        }
    }
}

/// One typed array section of a container.
#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub dtype: Dtype,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Section {
    pub fn real(dims: Vec<usize>, values: impl IntoIterator<Item = f64>) -> Self {
        Section { dtype: Dtype::F32, dims, data: values.into_iter().map(|v| v as f32).collect() }
    }

    pub fn complex<'a>(dims: Vec<usize>, values: impl IntoIterator<Item = &'a C64>) -> Self {
        let mut data = Vec::new();
        for v in values {
            data.push(v.re as f32);
            data.push(v.im as f32);
        }
        Section { dtype: Dtype::C32, dims, data }
    }

    fn float_count(&self) -> usize {
        self.dims.iter().product::<usize>() * self.dtype.width()
    }

    pub fn reals(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn complexes(&self) -> Vec<C64> {
        self.data.chunks_exact(2).map(|p| C64::new(p[0] as f64, p[1] as f64)).collect()
    }
}

/// Parsed container: ordered header fields plus one or two sections.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub fields: Vec<(String, String)>,
    pub main: Section,
    pub aux: Option<Section>,
}

impl Container {
    pub fn new(kind: &str, main: Section) -> Self {
        Container { fields: vec![("kind".into(), kind.into())], main, aux: None }
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        let value = value.to_string();
        if let Some(slot) = self.fields.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value;
        } else {
            self.fields.push((key.to_string(), value));
        }
        self
    }

    pub fn get_str(&self, key: &str) -> std::result::Result<&str, ContainerError> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| ContainerError::Header(format!("missing key '{key}'")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> std::result::Result<T, ContainerError> {
        let raw = self.get_str(key)?;
        raw.parse()
            .map_err(|_| ContainerError::Header(format!("cannot parse '{key}={raw}'")))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> std::result::Result<Vec<T>, ContainerError> {
        let raw = self.get_str(key)?;
        raw.split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| ContainerError::Header(format!("cannot parse '{key}={raw}'")))
            })
            .collect()
    }

    pub fn kind(&self) -> std::result::Result<&str, ContainerError> {
        self.get_str("kind")
    }

    fn header_text(&self) -> String {
        let mut text = String::new();
        for (k, v) in &self.fields {
            if matches!(k.as_str(), "dtype" | "dims" | "aux_dtype" | "aux_dims") {
                continue;
            }
            text.push_str(&format!("{k}={v}\n"));
        }
        text.push_str(&format!("dtype={}\n", self.main.dtype.name()));
        text.push_str(&format!("dims={}\n", join(&self.main.dims)));
        if let Some(aux) = &self.aux {
            text.push_str(&format!("aux_dtype={}\n", aux.dtype.name()));
            text.push_str(&format!("aux_dims={}\n", join(&aux.dims)));
        }
        text
    }

    pub fn to_bytes(&self) -> std::result::Result<Vec<u8>, ContainerError> {
        let sections = std::iter::once(&self.main).chain(self.aux.as_ref());
        for s in sections.clone() {
            if s.data.len() != s.float_count() {
                return Err(ContainerError::DimMismatch(format!(
                    "section holds {} floats, dims imply {}",
                    s.data.len(),
                    s.float_count()
                )));
            }
            if s.data.iter().any(|v| !v.is_finite()) {
                return Err(ContainerError::NonFinite);
            }
        }
        let header = self.header_text();
        if header.lines().any(|l| l.matches('=').count() == 0) {
            return Err(ContainerError::Header("header line without '='".into()));
        }
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.main.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for s in sections {
            for v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, ContainerError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        if bytes.len() < 12 {
            return Err(ContainerError::Header("missing header length".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() < hlen {
            return Err(ContainerError::Header("header extends past end of file".into()));
        }
        let header = std::str::from_utf8(&body[..hlen])
            .map_err(|_| ContainerError::Header("header is not UTF-8".into()))?;
        let mut fields = Vec::new();
        for line in header.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ContainerError::Header(format!("bad line '{line}'")))?;
            fields.push((k.to_string(), v.to_string()));
        }
        let lookup = |key: &str| fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
        let parse_dims = |raw: String| -> std::result::Result<Vec<usize>, ContainerError> {
            raw.split_whitespace()
                .map(|t| t.parse().map_err(|_| ContainerError::Header(format!("bad dims '{raw}'"))))
                .collect()
        };
        let main_dtype =
            Dtype::parse(&lookup("dtype").ok_or_else(|| ContainerError::Header("no dtype".into()))?)?;
        let main_dims =
            parse_dims(lookup("dims").ok_or_else(|| ContainerError::Header("no dims".into()))?)?;
        let aux_spec = match (lookup("aux_dtype"), lookup("aux_dims")) {
            (Some(t), Some(d)) => Some((Dtype::parse(&t)?, parse_dims(d)?)),
            (None, None) => None,
            _ => return Err(ContainerError::Header("aux section half-declared".into())),
        };

        let payload = &body[hlen..];
        if payload.len() % 4 != 0 {
            return Err(ContainerError::Truncated {
                expected: payload.len() / 4 + 1,
                found: payload.len() / 4,
            });
        }
        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let main_len = main_dims.iter().product::<usize>() * main_dtype.width();
        let aux_len = aux_spec
            .as_ref()
            .map(|(t, d)| d.iter().product::<usize>() * t.width())
            .unwrap_or(0);
        let expected = main_len + aux_len;
        if floats.len() < expected {
            return Err(ContainerError::Truncated { expected, found: floats.len() });
        }
        if floats.len() > expected {
            return Err(ContainerError::DimMismatch(format!(
                "payload holds {} floats, header declares {expected}",
                floats.len()
            )));
        }
        if floats.iter().any(|v| !v.is_finite()) {
            return Err(ContainerError::NonFinite);
        }
        let main = Section { dtype: main_dtype, dims: main_dims, data: floats[..main_len].to_vec() };
        let aux = aux_spec.map(|(dtype, dims)| Section {
            dtype,
            dims,
            data: floats[main_len..].to_vec(),
        });
        fields.retain(|(k, _)| !matches!(k.as_str(), "dtype" | "dims" | "aux_dtype" | "aux_dims"));
        Ok(Container { fields, main, aux })
    }

    pub fn write(&self, path: &Path) -> std::result::Result<(), ContainerError> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)
    }

    pub fn read(path: &Path) -> std::result::Result<Self, ContainerError> {
        let bytes = fs::read(path)
            .map_err(|source| ContainerError::Io { path: path.to_path_buf(), source })?;
        Container::from_bytes(&bytes)
    }

    fn expect(&self, kind: &str, dtype: Dtype, rank: usize) -> std::result::Result<(), ContainerError> {
        let found = self.kind()?;
        if found != kind {
            return Err(ContainerError::DimMismatch(format!("expected kind {kind}, found {found}")));
        }
        if self.main.dtype != dtype {
            return Err(ContainerError::DimMismatch(format!(
                "{kind} needs dtype {}, found {}",
                dtype.name(),
                self.main.dtype.name()
            )));
        }
        if self.main.dims.len() != rank {
            return Err(ContainerError::DimMismatch(format!(
                "{kind} needs {rank} dims, found {}",
                self.main.dims.len()
            )));
        }
        Ok(())
    }

    fn aux(&self, dtype: Dtype, rank: usize) -> std::result::Result<&Section, ContainerError> {
        let aux = self
            .aux
            .as_ref()
            .ok_or_else(|| ContainerError::DimMismatch("missing auxiliary section".into()))?;
        if aux.dtype != dtype || aux.dims.len() != rank {
            return Err(ContainerError::DimMismatch("auxiliary section has the wrong shape".into()));
        }
        Ok(aux)
    }
}

fn join(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
}

fn join_f64(values: &[f64]) -> String {
    values.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
}

/// Write `bytes` to a sibling temp file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::result::Result<(), ContainerError> {
    let io = |source| ContainerError::Io { path: path.to_path_buf(), source };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}

/// Types that have a container representation.
pub trait Persist: Sized {
    const KIND: &'static str;
    fn to_container(&self) -> Result<Container>;
    fn from_container(c: &Container) -> Result<Self>;
}

pub fn write_container<T: Persist>(object: &T, path: &Path) -> Result<()> {
    object.to_container()?.write(path)?;
    Ok(())
}

pub fn read_container<T: Persist>(path: &Path) -> Result<T> {
    let c = Container::read(path)?;
    T::from_container(&c)
}

fn set_grid(c: &mut Container, g: &Grid) {
    c.set("spacing_mm", format!("{} {} {}", g.dx, g.dy, g.dz));
}

fn grid_from(c: &Container, nx: usize, ny: usize, nz: usize) -> Result<Grid> {
    let sp: Vec<f64> = c.get_list("spacing_mm")?;
    if sp.len() != 3 {
        return Err(ContainerError::Header("spacing_mm needs 3 values".into()).into());
    }
    let g = Grid { nx, ny, nz, dx: sp[0], dy: sp[1], dz: sp[2] };
    g.validate()?;
    Ok(g)
}

fn set_train(c: &mut Container, t: &EchoTrain) {
    c.set("train_kind", t.kind.name())
        .set("esp_ms", t.esp)
        .set("te_se_ms", t.te_se)
        .set("n_ge", t.n_ge)
        .set("n_se", t.n_se)
        .set("echo_times_ms", join_f64(&t.echo_times));
}

fn train_from(c: &Container) -> Result<EchoTrain> {
    let t = EchoTrain {
        kind: TrainKind::parse(c.get_str("train_kind")?)?,
        esp: c.get("esp_ms")?,
        echo_times: c.get_list("echo_times_ms")?,
        te_se: c.get("te_se_ms")?,
        n_ge: c.get("n_ge")?,
        n_se: c.get("n_se")?,
    };
    t.validate()?;
    Ok(t)
}

fn set_pattern_fields(c: &mut Container, p: &SamplingPattern) {
    c.set("layout", p.layout.name())
        .set("family", p.family.name())
        .set("ny", p.ny)
        .set("nz", p.nz)
        .set("block", format!("{} {}", p.block.0, p.block.1))
        .set("shift", format!("{} {}", p.shift.0, p.shift.1))
        .set("seed", p.seed)
        .set("r_pe", p.r_pe)
        .set("ellipse", p.ellipse);
    if let Some((cy, cz)) = p.center_block {
        c.set("center_block", format!("{cy} {cz}"));
    }
}

fn pair(c: &Container, key: &str) -> Result<(usize, usize)> {
    let v: Vec<usize> = c.get_list(key)?;
    match v.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(ContainerError::Header(format!("'{key}' needs two values")).into()),
    }
}

fn pattern_from(c: &Container, entries: &Section) -> Result<SamplingPattern> {
    if entries.dims.len() != 3 || entries.dims[0] != 2 {
        return Err(ContainerError::DimMismatch("pattern entries must be 2 x T x shots".into()).into());
    }
    let n_echoes = entries.dims[1];
    let pairs: Vec<(u32, u32)> =
        entries.data.chunks_exact(2).map(|p| (p[0] as u32, p[1] as u32)).collect();
    if entries.data.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
        return Err(Error::invalid("pattern entries must be nonnegative integers"));
    }
    let mut p = SamplingPattern::from_entries(
        Layout::parse(c.get_str("layout")?)?,
        PatternFamily::parse(c.get_str("family")?)?,
        c.get("ny")?,
        c.get("nz")?,
        pair(c, "block")?,
        n_echoes,
        pairs,
    )?;
    p.shift = pair(c, "shift")?;
    p.seed = c.get("seed")?;
    p.r_pe = c.get("r_pe")?;
    p.ellipse = c.get("ellipse")?;
    p.center_block = if c.get_str("center_block").is_ok() { Some(pair(c, "center_block")?) } else { None };
    p.validate()?;
    Ok(p)
}

fn pattern_section(p: &SamplingPattern) -> Section {
    Section::real(
        vec![2, p.n_echoes, p.n_shots],
        p.entries().iter().flat_map(|&(y, z)| [y as f64, z as f64]),
    )
}

impl Persist for SamplingPattern {
    const KIND: &'static str = "SamplingPattern";

    fn to_container(&self) -> Result<Container> {
        self.validate()?;
        let mut c = Container::new(Self::KIND, pattern_section(self));
        set_pattern_fields(&mut c, self);
        Ok(c)
    }

    fn from_container(c: &Container) -> Result<Self> {
        c.expect(Self::KIND, Dtype::F32, 3)?;
        pattern_from(c, &c.main)
    }
}

impl Persist for ImageSeries {
    const KIND: &'static str = "ImageSeries";

    fn to_container(&self) -> Result<Container> {
        let g = self.grid;
        if self.images.iter().any(|m| m.len() != g.len()) {
            return Err(Error::dim("image does not match the grid"));
        }
        let mut c = Container::new(
            Self::KIND,
            Section::complex(vec![g.nx, g.ny, g.nz, self.images.len()], self.images.iter().flatten()),
        );
        set_grid(&mut c, &g);
        c.set("units", "a.u.");
        Ok(c)
    }

    fn from_container(c: &Container) -> Result<Self> {
        c.expect(Self::KIND, Dtype::C32, 4)?;
        let d = &c.main.dims;
        let grid = grid_from(c, d[0], d[1], d[2])?;
        let all = c.main.complexes();
        let images = all.chunks(grid.len().max(1)).take(d[3]).map(|m| m.to_vec()).collect();
        Ok(ImageSeries { grid, images })
    }
}

impl Persist for CoefficientMaps {
    const KIND: &'static str = "CoefficientMaps";

    fn to_container(&self) -> Result<Container> {
        let g = self.grid;
        if self.maps.iter().any(|m| m.len() != g.len()) {
            return Err(Error::dim("coefficient map does not match the grid"));
        }
        let mut c = Container::new(
            Self::KIND,
            Section::complex(vec![g.nx, g.ny, g.nz, self.maps.len()], self.maps.iter().flatten()),
        );
        set_grid(&mut c, &g);
        c.set("units", "a.u.");
        Ok(c)
    }

    fn from_container(c: &Container) -> Result<Self> {
        c.expect(Self::KIND, Dtype::C32, 4)?;
        let d = &c.main.dims;
        let grid = grid_from(c, d[0], d[1], d[2])?;
        let all = c.main.complexes();
        let maps: Vec<Vec<C64>> =
            all.chunks(grid.len().max(1)).take(d[3]).map(|m| m.to_vec()).collect();
        let out = CoefficientMaps { grid, maps };
        if !out.is_finite() {
            return Err(ContainerError::NonFinite.into());
        }
        Ok(out)
    }
}

impl Persist for B0Map {
    const KIND: &'static str = "B0Map";

    fn to_container(&self) -> Result<Container> {
        self.validate()?;
        let g = self.grid;
        let mut c = Container::new(Self::KIND, Section::real(vec![g.nx, g.ny, g.nz], self.hz.iter().copied()));
        set_grid(&mut c, &g);
        c.set("units", "Hz").set("resolution", self.resolution.name());
        Ok(c)
    }

    fn from_container(c: &Container) -> Result<Self> {
        c.expect(Self::KIND, Dtype::F32, 3)?;
        let d = &c.main.dims;
        let m = B0Map {
            grid: grid_from(c, d[0], d[1], d[2])?,
            hz: c.main.reals(),
            resolution: Resolution::parse(c.get_str("resolution")?)?,
        };
        m.validate()?;
        Ok(m)
    }
}

const PHANTOM_MAPS: usize = 7;

impl Persist for TissuePhantom {
    const KIND: &'static str = "TissuePhantom";

    fn to_container(&self) -> Result<Container> {
        self.validate()?;
        let g = self.grid;
        let values = self
            .pd
            .iter()
            .chain(&self.t2)
            .chain(&self.t2s)
            .chain(&self.b0)
            .chain(&self.phase0)
            .chain(&self.se_scale)
            .copied()
            .chain(self.labels.iter().map(|&l| l as f64));
        let mut c = Container::new(Self::KIND, Section::real(vec![g.nx, g.ny, g.nz, PHANTOM_MAPS], values));
        set_grid(&mut c, &g);
        c.set("maps", "pd t2 t2s b0 phase0 se_scale labels")
            .set("units", "a.u. ms ms Hz rad 1 1");
        Ok(c)
    }

    fn from_container(c: &Container) -> Result<Self> {
        c.expect(Self::KIND, Dtype::F32, 4)?;
        let d = &c.main.dims;
        if d[3] != PHANTOM_MAPS {
            return Err(ContainerError::DimMismatch("phantom needs 7 maps".into()).into());
        }
        let grid = grid_from(c, d[0], d[1], d[2])?;
        let all = c.main.reals();
        let mut maps = all.chunks(grid.len()).map(|m| m.to_vec());
        let mut next = || maps.next().expect("seven maps");
        let p = TissuePhantom {
            grid,
            pd: next(),
            t2: next(),
            t2s: next(),
            b0: next(),
            phase0: next(),
            se_scale: next(),
            labels: next().into_iter().map(|v| v as u32).collect(),
        };
        p.validate()?;
        Ok(p)
    }
}

impl Persist for CoilSet {
    const KIND: &'static str = "CoilSet";

    fn to_container(&self) -> Result<Container> {
        self.validate()?;
        let g = self.grid;
        let mut c = Container::new(
            Self::KIND,
            Section::complex(vec![g.nx, g.ny, g.nz, self.sens.len()], self.sens.iter().flatten()),
        );
        set_grid(&mut c, &g);
        c.set("units", "1");
        Ok(c)
    }

    fn from_container(c: &Container) -> Result<Self> {
        c.expect(Self::KIND, Dtype::C32, 4)?;
        let d = &c.main.dims;
        let grid = grid_from(c, d[0], d[1], d[2])?;
        let sens = c.main.complexes().chunks(grid.len()).map(|m| m.to_vec()).collect();
        let s = CoilSet { grid, sens };
        s.validate()?;
        Ok(s)
    }
}

impl Persist for SubspaceBasis {
    const KIND: &'static str = "SubspaceBasis";

    fn to_container(&self) -> Result<Container> {
        if self.phi.len() != self.n_echoes * self.k {
            return Err(Error::dim("basis matrix has the wrong size"));
        }
        let mut c = Container::new(Self::KIND, Section::complex(vec![self.k, self.n_echoes], &self.phi));
        c.set("descriptor", self.descriptor.replace('\n', " "));
        Ok(c)
    }

    /// Orthonormality is checked at f32 precision, since the payload is f32.
    fn from_container(c: &Container) -> Result<Self> {
        c.expect(Self::KIND, Dtype::C32, 2)?;
        let b = SubspaceBasis {
            k: c.main.dims[0],
            n_echoes: c.main.dims[1],
            phi: c.main.complexes(),
            descriptor: c.get_str("descriptor")?.to_string(),
        };
        if b.k == 0 || b.k > b.n_echoes {
            return Err(Error::invalid("basis size must satisfy 1 <= k <= T"));
        }
        if b.orthonormality_error() > 1e-5 {
            return Err(Error::invalid("stored basis is not orthonormal"));
        }
        Ok(b)
    }
}

impl Persist for KtData {
    const KIND: &'static str = "KtData";

    fn to_container(&self) -> Result<Container> {
        self.validate()?;
        let p = &self.pattern;
        let mut c = Container::new(
            Self::KIND,
            Section::complex(vec![self.nx, p.n_echoes, self.n_coils, p.n_shots], &self.samples),
        );
        set_pattern_fields(&mut c, p);
        set_train(&mut c, &self.train);
        c.set("units", "a.u.");
        c.aux = Some(pattern_section(p));
        Ok(c)
    }

    fn from_container(c: &Container) -> Result<Self> {
        c.expect(Self::KIND, Dtype::C32, 4)?;
        let pattern = pattern_from(c, c.aux(Dtype::F32, 3)?)?;
        let d = &c.main.dims;
        if d[1] != pattern.n_echoes || d[3] != pattern.n_shots {
            return Err(ContainerError::DimMismatch("samples disagree with the pattern".into()).into());
        }
        let k = KtData {
            nx: d[0],
            n_coils: d[2],
            pattern: Arc::new(pattern),
            train: Arc::new(train_from(c)?),
            samples: c.main.complexes(),
        };
        k.validate()?;
        Ok(k)
    }
}

impl Persist for ShotVariation {
    const KIND: &'static str = "ShotVariation";

    fn to_container(&self) -> Result<Container> {
        self.validate()?;
        let mut c = Container::new(
            Self::KIND,
            Section::real(vec![POLY_TERMS, self.coeffs.len()], self.coeffs.iter().flatten().copied()),
        );
        c.set("basis", "1 x y x^2 xy y^2").set("units", "Hz");
        if !self.b_var.is_empty() {
            let nc = self.b_var[0].len();
            c.aux = Some(Section::real(vec![nc, self.b_var.len()], self.b_var.iter().flatten().copied()));
        }
        Ok(c)
    }

    fn from_container(c: &Container) -> Result<Self> {
        c.expect(Self::KIND, Dtype::F32, 2)?;
        if c.main.dims[0] != POLY_TERMS {
            return Err(ContainerError::DimMismatch("variation needs 6 coefficients per shot".into()).into());
        }
        let coeffs = c
            .main
            .reals()
            .chunks_exact(POLY_TERMS)
            .map(|ch| ch.try_into().expect("6 terms"))
            .collect();
        let b_var = match &c.aux {
            None => Vec::new(),
            Some(_) => {
                let aux = c.aux(Dtype::F32, 2)?;
                aux.reals().chunks(aux.dims[0].max(1)).map(|r| r.to_vec()).collect()
            }
        };
        let v = ShotVariation { coeffs, b_var };
        v.validate()?;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn f32_complex(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.random::<f32>() as f64 - 0.5, rng.random::<f32>() as f64 - 0.5)
    }

    fn roundtrip<T: Persist + PartialEq + std::fmt::Debug>(x: &T) -> T {
        let bytes = x.to_container().unwrap().to_bytes().unwrap();
        T::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap()
    }

    #[test]
    fn complex_map_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Grid::new(4, 4, 1).unwrap();
        let img = ImageSeries { grid, images: vec![(0..16).map(|_| f32_complex(&mut rng)).collect()] };
        let back = roundtrip(&img);
        for (a, b) in img.images[0].iter().zip(&back.images[0]) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn zero_volume_has_zero_payload() {
        let grid = Grid::new(3, 2, 2).unwrap();
        let b0 = B0Map::zeros(grid);
        let bytes = b0.to_container().unwrap().to_bytes().unwrap();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[12 + hlen..];
        assert_eq!(payload.len(), 12 * 4);
        assert!(payload.iter().all(|&b| b == 0));
    }

    #[test]
    fn full_scale_matrix_header_dims() {
        // Header only; building the full payload is unnecessary for the dims line.
        let c = Container {
            fields: vec![("kind".into(), "ImageSeries".into())],
            main: Section { dtype: Dtype::C32, dims: vec![200, 200, 96, 50], data: vec![] },
            aux: None,
        };
        assert!(c.header_text().contains("dims=200 200 96 50\n"));
    }

    #[test]
    fn hand_written_little_endian_fixture() {
        let header = "kind=B0Map\nspacing_mm=1 1 1\nunits=Hz\nresolution=high\ndtype=f32\ndims=2 1 1\n";
        let mut bytes = b"EPTIKIT1".to_vec();
        bytes.extend_from_slice(&[header.len() as u8, 0, 0, 0]);
        bytes.extend_from_slice(header.as_bytes());
        // 1.0f32 = 0x3f800000, -2.5f32 = 0xc0200000, little-endian
        bytes.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0]);
        let map = B0Map::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(map.hz, vec![1.0, -2.5]);
        assert_eq!(map.to_container().unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupted_magic_is_bad_magic() {
        let grid = Grid::new(2, 2, 1).unwrap();
        let mut bytes = B0Map::zeros(grid).to_container().unwrap().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Container::from_bytes(&bytes), Err(ContainerError::BadMagic)));
    }

    #[test]
    fn short_payload_is_truncated() {
        let grid = Grid::new(2, 2, 1).unwrap();
        let bytes = B0Map::zeros(grid).to_container().unwrap().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 4];
        assert!(matches!(Container::from_bytes(cut), Err(ContainerError::Truncated { .. })));
    }

    #[test]
    fn long_payload_is_dim_mismatch() {
        let grid = Grid::new(2, 2, 1).unwrap();
        let mut bytes = B0Map::zeros(grid).to_container().unwrap().to_bytes().unwrap();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(Container::from_bytes(&bytes), Err(ContainerError::DimMismatch(_))));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let grid = Grid::new(2, 2, 1).unwrap();
        let c = B0Map::zeros(grid).to_container().unwrap();
        assert!(CoilSet::from_container(&c).is_err());
    }

    #[test]
    fn non_finite_is_rejected_on_write() {
        let c = Container::new("B0Map", Section::real(vec![2, 1, 1], [1.0, f64::NAN]));
        assert!(matches!(c.to_bytes(), Err(ContainerError::NonFinite)));
    }

    #[test]
    fn write_to_missing_directory_fails() {
        let grid = Grid::new(2, 2, 1).unwrap();
        let err = write_container(&B0Map::zeros(grid), Path::new("/nonexistent/dir/b0.ek"));
        assert!(err.is_err());
    }

    #[test]
    fn file_roundtrip_and_no_leftover_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("var.ek");
        let v = ShotVariation {
            coeffs: vec![[0.5, -1.0, 0.25, 0.0, 2.0, -0.125]; 3],
            b_var: vec![vec![0.5, 1.5], vec![-0.25, 0.0], vec![1.0, 2.0]],
        };
        write_container(&v, &path).unwrap();
        let back: ShotVariation = read_container(&path).unwrap();
        assert_eq!(back, v);
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn every_core_type_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = Grid::new(3, 4, 2).unwrap().with_spacing(1.5, 1.5, 2.0);
        let n = grid.len();
        let r = |rng: &mut ChaCha8Rng| rng.random::<f32>() as f64;

        let phantom = TissuePhantom {
            grid,
            pd: (0..n).map(|_| r(&mut rng)).collect(),
            t2: vec![80.0; n],
            t2s: (0..n).map(|_| ((10.0 + 50.0 * r(&mut rng)) as f32) as f64).collect(),
            b0: (0..n).map(|_| r(&mut rng) - 0.5).collect(),
            phase0: vec![0.25; n],
            se_scale: vec![1.0; n],
            labels: (0..n as u32).collect(),
        };
        assert_eq!(roundtrip(&phantom), phantom);

        let coils = CoilSet { grid, sens: (0..2).map(|_| (0..n).map(|_| f32_complex(&mut rng)).collect()).collect() };
        assert_eq!(roundtrip(&coils), coils);

        let cm = CoefficientMaps { grid, maps: (0..3).map(|_| (0..n).map(|_| f32_complex(&mut rng)).collect()).collect() };
        assert_eq!(roundtrip(&cm), cm);

        let b0 = B0Map { grid, hz: (0..n).map(|_| r(&mut rng)).collect(), resolution: Resolution::Low };
        assert_eq!(roundtrip(&b0), b0);

        let basis = SubspaceBasis {
            n_echoes: 2,
            k: 2,
            phi: vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 1.0)],
            descriptor: "t2 1..600 log".into(),
        };
        assert_eq!(roundtrip(&basis), basis);

        let pattern = Arc::new(crate::encoding::tv_caipi_3d_pattern(4, 2, 2, 2, 5, 1, 1).unwrap());
        assert_eq!(&roundtrip(pattern.as_ref()), pattern.as_ref());

        let train = Arc::new(EchoTrain::gradient_echo(5, 9.1, 2.4).unwrap());
        let mut kt = KtData::zeros(3, 2, pattern, train);
        for v in kt.samples.iter_mut() {
            *v = f32_complex(&mut rng);
        }
        assert_eq!(roundtrip(&kt), kt);

        let var = ShotVariation::zeros(4);
        assert_eq!(roundtrip(&var), var);
    }
}
