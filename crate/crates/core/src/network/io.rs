//! `BVNET1` container: a text header describing the spec, then every parameter
//! tensor in declaration order as `u32 rank, u64 dims..., f64 data...`, all
//! little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LayerSpec, Network, NetworkSpec};
use crate::error::{Error, Result};

const MAGIC: &str = "BVNET1";

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        format: "BVNET1",
        detail: detail.into(),
    }
}

pub fn write_network<W: Write>(net: &Network, mut w: W) -> Result<()> {
    let spec = net.spec();
    writeln!(w, "{MAGIC}")?;
    let dims: Vec<String> = spec.input.iter().map(ToString::to_string).collect();
    writeln!(w, "input {}", dims.join(" "))?;
    writeln!(w, "bias {}", u8::from(spec.bias))?;
    for layer in &spec.layers {
        writeln!(w, "{layer}")?;
    }
    writeln!(w, "end")?;
    for t in net.params() {
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_network<R: Read>(r: R) -> Result<Network> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<R>| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(format_err("unexpected end of header"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };

    if next_line(&mut r)? != MAGIC {
        return Err(format_err("bad magic"));
    }
    let input_line = next_line(&mut r)?;
    let input = input_line
        .strip_prefix("input ")
        .ok_or_else(|| format_err("missing input line"))?
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| format_err(format!("bad input dim {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let bias = match next_line(&mut r)?.as_str() {
        "bias 0" => false,
        "bias 1" => true,
        other => return Err(format_err(format!("bad bias line {other:?}"))),
    };
    let mut layers = Vec::new();
    loop {
        let l = next_line(&mut r)?;
        if l == "end" {
            break;
        }
        layers.push(l.parse::<LayerSpec>()?);
    }
    let spec = NetworkSpec { input, layers, bias };

    let mut net = Network::build(&spec, &crate::tensor::RngSpec::gaussian(0, 0.0, 1.0))?;
    for t in net.params_mut() {
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        if shape != t.shape() {
            return Err(format_err(format!(
                "parameter shape {shape:?} does not match spec shape {:?}",
                t.shape()
            )));
        }
        let mut buf = [0u8; 8];
        for v in t.data_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| format_err("truncated parameter data"))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(format_err("trailing bytes after parameters"));
    }
    Ok(net)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| format_err("truncated tensor header"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| format_err("truncated tensor header"))?;
    Ok(u64::from_le_bytes(b))
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    write_network(net, BufWriter::new(f))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    read_network(f)
}
