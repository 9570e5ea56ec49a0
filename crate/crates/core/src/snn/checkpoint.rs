//! Plain-text checkpoint of a [`NetworkState`].
//!
//! ```text
//! spikefolio-checkpoint 1
//! n_assets <A>
//! population_size <P>
//! time_ms <f64>
//! step <u64>
//! seed <u64>
//! v <A·P floats>
//! v_th <A·P floats>
//! last_spike <A·P floats, "-" for never>
//! w_syn <A·P floats>
//! asset_spiked <A values of 0 or 1>
//! w_lat <A·A floats, row-major>
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so reading a checkpoint
//! back reproduces the state bit for bit.

use std::io::{BufRead, Write};

use ndarray::Array2;

use super::{NetworkState, PopulationLayout};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "spikefolio-checkpoint 1";

fn join<T: std::fmt::Display>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint(mut w: impl Write, state: &NetworkState, layout: &PopulationLayout) -> Result<()> {
    if state.n_neurons() != layout.n_neurons() {
        return Err(Error::DimensionMismatch {
            expected: layout.n_neurons(),
            got: state.n_neurons(),
        });
    }
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(w, "n_assets {}", layout.n_assets)?;
    writeln!(w, "population_size {}", layout.size)?;
    writeln!(w, "time_ms {}", state.time_ms)?;
    writeln!(w, "step {}", state.step)?;
    writeln!(w, "seed {}", state.seed)?;
    writeln!(w, "v {}", join(&state.v))?;
    writeln!(w, "v_th {}", join(&state.v_th))?;
    let last = state.last_spike.iter().map(|t| t.map_or_else(|| "-".to_string(), |t| t.to_string()));
    writeln!(w, "last_spike {}", join(last))?;
    writeln!(w, "w_syn {}", join(&state.w_syn))?;
    writeln!(w, "asset_spiked {}", join(state.asset_spiked.iter().map(|&b| b as u8)))?;
    writeln!(w, "w_lat {}", join(state.w_lat.iter()))?;
    Ok(())
}

struct Lines<R> {
    inner: R,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn bad(&self, message: impl Into<String>) -> Error {
        Error::Validation {
            line: self.line,
            message: message.into(),
        }
    }

    /// Next line, which must start with `key`; returns the remaining tokens.
    fn field(&mut self, key: &str) -> Result<Vec<String>> {
        let mut buf = String::new();
        self.line += 1;
        if self.inner.read_line(&mut buf)? == 0 {
            return Err(self.bad(format!("unexpected end of checkpoint, expected '{key}'")));
        }
        let mut tokens = buf.split_whitespace();
        match tokens.next() {
            Some(k) if k == key => Ok(tokens.map(str::to_string).collect()),
            other => Err(self.bad(format!("expected '{key}', found '{}'", other.unwrap_or("")))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, tok: &str) -> Result<T> {
        tok.parse().map_err(|_| self.bad(format!("cannot parse '{tok}'")))
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let toks = self.field(key)?;
        if toks.len() != 1 {
            return Err(self.bad(format!("'{key}' takes one value")));
        }
        self.parse(&toks[0])
    }

    fn vector<T: std::str::FromStr>(&mut self, key: &str, len: usize) -> Result<Vec<T>> {
        let toks = self.field(key)?;
        if toks.len() != len {
            return Err(self.bad(format!("'{key}' has {} values, expected {len}", toks.len())));
        }
        toks.iter().map(|t| self.parse(t)).collect()
    }
}

pub fn read_checkpoint(r: impl BufRead) -> Result<(PopulationLayout, NetworkState)> {
    let mut lines = Lines { inner: r, line: 1 };
    let mut magic = String::new();
    lines.inner.read_line(&mut magic)?;
    if magic.trim_end() != CHECKPOINT_MAGIC {
        return Err(lines.bad(format!("not a checkpoint (header '{}')", magic.trim_end())));
    }
    let n_assets: usize = lines.scalar("n_assets")?;
    let size: usize = lines.scalar("population_size")?;
    let layout = PopulationLayout { n_assets, size };
    let n = layout.n_neurons();
    let time_ms = lines.scalar("time_ms")?;
    let step = lines.scalar("step")?;
    let seed = lines.scalar("seed")?;
    let v = lines.vector("v", n)?;
    let v_th = lines.vector("v_th", n)?;
    let last_spike = lines
        .field("last_spike")?
        .iter()
        .map(|t| if t == "-" { Ok(None) } else { lines.parse(t).map(Some) })
        .collect::<Result<Vec<Option<f64>>>>()?;
    if last_spike.len() != n {
        return Err(lines.bad(format!("'last_spike' has {} values, expected {n}", last_spike.len())));
    }
    let w_syn = lines.vector("w_syn", n)?;
    let asset_spiked = lines
        .vector::<u8>("asset_spiked", n_assets)?
        .into_iter()
        .map(|b| b != 0)
        .collect();
    let w_lat = Array2::from_shape_vec((n_assets, n_assets), lines.vector("w_lat", n_assets * n_assets)?)
        .expect("length checked");
    Ok((
        layout,
        NetworkState {
            v,
            v_th,
            last_spike,
            w_lat,
            w_syn,
            asset_spiked,
            time_ms,
            step,
            seed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::NeuronParams;

    #[test]
    fn round_trip_is_exact() {
        let layout = PopulationLayout { n_assets: 2, size: 3 };
        let p = NeuronParams::default();
        let w_lat = ndarray::array![[0.0, 0.1 + 0.2], [1.0 / 3.0, 0.0]];
        let mut s = NetworkState::new(layout, &p, w_lat, vec![0.7, 1e-300, 2.5, 0.0, 1.0, std::f64::consts::PI], 99).unwrap();
        s.v[2] = -0.123456789012345;
        s.last_spike[4] = Some(12.3);
        s.asset_spiked[1] = true;
        s.time_ms = 17.1;
        s.step = 171;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s, &layout).unwrap();
        let (l2, s2) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(l2, layout);
        assert_eq!(s2, s);
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        assert!(read_checkpoint("hello\n".as_bytes()).is_err());
        let layout = PopulationLayout { n_assets: 1, size: 2 };
        let s = NetworkState::uncoupled(layout, &NeuronParams::default());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s, &layout).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(7).map(|l| format!("{l}\n")).collect();
        let err = read_checkpoint(cut.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("v_th"), "{err}");
    }
}
