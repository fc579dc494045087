//! `PGM1` model files.
//!
//! ```text
//! "PGM1"
//! u32 input count, then per input a length-prefixed record:
//!     name, rank, extents
//! u32 node count, then per node a length-prefixed record:
//!     u8 kind id, name, operand list, kind parameters, parameter shapes
//! u32 output count, u32 node index per output
//! parameters as little-endian f32, in declaration order
//! batch-norm running mean then variance as little-endian f32, in node order
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8; every integer is a
//! little-endian u32 unless noted.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::graph::{assemble, ModelGraph, NodeId, Source};
use crate::layer::LayerSpec;
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 4] = b"PGM1";

struct Record(Vec<u8>);

impl Record {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn shape(&mut self, s: &[usize]) {
        self.u32(s.len());
        s.iter().for_each(|&d| self.u32(d));
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(TensorError::Format("record truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| TensorError::Format("invalid UTF-8 name".into()))
    }
    fn shape(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 8 {
            return Err(TensorError::Format(format!("implausible rank {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

fn write_record<W: Write>(w: &mut W, r: Record) -> Result<()> {
    w.write_all(&(r.0.len() as u32).to_le_bytes())?;
    w.write_all(&r.0)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_record<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let n = read_u32(r)?;
    if n > 1 << 20 {
        return Err(TensorError::Format(format!("record length {n} too large")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn write_model<S: Scalar, W: Write>(graph: &ModelGraph<S>, mut w: W) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(graph.input_shapes.len() as u32).to_le_bytes())?;
    for (name, shape) in graph.input_names.iter().zip(&graph.input_shapes) {
        let mut r = Record(Vec::new());
        r.str(name);
        r.shape(shape);
        write_record(&mut w, r)?;
    }
    w.write_all(&(graph.nodes.len() as u32).to_le_bytes())?;
    for node in &graph.nodes {
        let mut r = Record(Vec::new());
        r.u8(node.spec.kind_id());
        r.str(&node.name);
        r.u32(node.inputs.len());
        for s in &node.inputs {
            match *s {
                Source::Input(k) => {
                    r.u8(0);
                    r.u32(k);
                }
                Source::Node(id) => {
                    r.u8(1);
                    r.u32(id.0);
                }
            }
        }
        match &node.spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => {
                r.u32(*in_channels);
                r.u32(*out_channels);
                r.u32(*kernel);
            }
            LayerSpec::BatchNorm { features } => r.u32(*features),
            LayerSpec::MaxPool1d { window } => r.u32(*window),
            LayerSpec::Spp { windows } => r.shape(windows),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                r.u32(*in_features);
                r.u32(*out_features);
            }
            LayerSpec::Dropout { rate } => r.f64(*rate),
            LayerSpec::Upsample1d { factor } => r.u32(*factor),
            LayerSpec::Relu
            | LayerSpec::Sigmoid
            | LayerSpec::Softmax
            | LayerSpec::Concat
            | LayerSpec::Add => {}
        }
        r.u32(node.params.len());
        for &p in &node.params {
            r.shape(graph.params[p].shape());
        }
        write_record(&mut w, r)?;
    }
    w.write_all(&(graph.outputs.len() as u32).to_le_bytes())?;
    for o in &graph.outputs {
        w.write_all(&(o.0 as u32).to_le_bytes())?;
    }
    let mut floats = Vec::new();
    for p in &graph.params {
        for v in p.data() {
            floats.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
    }
    for node in &graph.nodes {
        if let Some(k) = node.stats {
            let r = &graph.running[k];
            for v in r.mean.iter().chain(&r.var) {
                floats.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
            }
        }
    }
    w.write_all(&floats)?;
    w.flush()?;
    Ok(())
}

pub fn read_model<S: Scalar, R: Read>(mut r: R) -> Result<ModelGraph<S>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(TensorError::Format(format!(
            "bad magic {magic:?}, expected PGM1"
        )));
    }
    let n_inputs = read_u32(&mut r)?;
    let mut input_names = Vec::new();
    let mut input_shapes = Vec::new();
    for _ in 0..n_inputs {
        let buf = read_record(&mut r)?;
        let mut c = Cursor { buf: &buf, pos: 0 };
        input_names.push(c.str()?);
        input_shapes.push(c.shape()?);
    }
    let n_nodes = read_u32(&mut r)?;
    let mut nodes = Vec::new();
    let mut declared_shapes = Vec::new();
    for _ in 0..n_nodes {
        let buf = read_record(&mut r)?;
        let mut c = Cursor { buf: &buf, pos: 0 };
        let kind = c.u8()?;
        let name = c.str()?;
        let n_in = c.u32()?;
        let mut inputs = Vec::new();
        for _ in 0..n_in {
            let tag = c.u8()?;
            let idx = c.u32()?;
            inputs.push(match tag {
                0 => Source::Input(idx),
                1 => Source::Node(NodeId(idx)),
                t => return Err(TensorError::Format(format!("unknown operand tag {t}"))),
            });
        }
        let spec = match kind {
            1 => LayerSpec::Conv1d {
                in_channels: c.u32()?,
                out_channels: c.u32()?,
                kernel: c.u32()?,
            },
            2 => LayerSpec::BatchNorm { features: c.u32()? },
            3 => LayerSpec::Relu,
            4 => LayerSpec::Sigmoid,
            5 => LayerSpec::MaxPool1d { window: c.u32()? },
            6 => LayerSpec::Spp {
                windows: c.shape()?,
            },
            7 => LayerSpec::Dense {
                in_features: c.u32()?,
                out_features: c.u32()?,
            },
            8 => LayerSpec::Dropout { rate: c.f64()? },
            9 => LayerSpec::Softmax,
            10 => LayerSpec::Concat,
            11 => LayerSpec::Add,
            12 => LayerSpec::Upsample1d { factor: c.u32()? },
            k => return Err(TensorError::Format(format!("unknown layer kind id {k}"))),
        };
        let n_params = c.u32()?;
        let shapes = (0..n_params)
            .map(|_| c.shape())
            .collect::<Result<Vec<_>>>()?;
        if shapes != spec.param_shapes() {
            return Err(TensorError::Format(format!(
                "node `{name}` declares parameter shapes {shapes:?}, layer implies {:?}",
                spec.param_shapes()
            )));
        }
        declared_shapes.push(shapes);
        nodes.push((name, spec, inputs));
    }
    let n_out = read_u32(&mut r)?;
    let outputs = (0..n_out)
        .map(|_| read_u32(&mut r).map(NodeId))
        .collect::<Result<Vec<_>>>()?;

    let mut graph: ModelGraph<S> = assemble(input_names, input_shapes, nodes, outputs)?;
    let mut read_f32s = |out: &mut [S]| -> Result<()> {
        let mut buf = vec![0u8; out.len() * 4];
        r.read_exact(&mut buf)
            .map_err(|_| TensorError::Format("parameter data truncated".into()))?;
        for (o, b) in out.iter_mut().zip(buf.chunks_exact(4)) {
            *o = S::from_f32(f32::from_le_bytes(b.try_into().unwrap())).unwrap();
        }
        Ok(())
    };
    for p in graph.params.iter_mut() {
        read_f32s(p.data_mut())?;
    }
    for node in &graph.nodes {
        if let Some(k) = node.stats {
            let run = &mut graph.running[k];
            read_f32s(&mut run.mean)?;
            read_f32s(&mut run.var)?;
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(TensorError::Format(format!(
            "{} trailing bytes",
            rest.len()
        )));
    }
    Ok(graph)
}

impl<S: Scalar> ModelGraph<S> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_model(self, BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_model(BufReader::new(File::open(path)?))
    }
}
