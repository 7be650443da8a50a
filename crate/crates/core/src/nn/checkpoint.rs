//! Versioned text checkpoints.
//!
//! ```text
//! pdectrl-network 1
//! input flat 36 | input grid C H W
//! aux 2
//! layers 3
//! concat 2
//! dense 38 32 relu 0
//! dense 32 1 tanh 0
//! params
//! <one line per tensor, row-major>
//! ```
//!
//! Values use the shortest decimal that parses back to the same `f64`, so a
//! save/load round trip is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{Activation, Conv2d, Dense, Layer, Network, Shape};
use crate::error::{Error, Result};

const MAGIC: &str = "pdectrl-network";
const VERSION: u32 = 1;

impl Network {
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {VERSION}");
        match self.input {
            Shape::Flat(n) => {
                let _ = writeln!(s, "input flat {n}");
            }
            Shape::Grid {
                channels,
                height,
                width,
            } => {
                let _ = writeln!(s, "input grid {channels} {height} {width}");
            }
        }
        let _ = writeln!(s, "aux {}", self.aux_width);
        let _ = writeln!(s, "layers {}", self.layers.len());
        for layer in &self.layers {
            let _ = match layer {
                Layer::Dense(d) => writeln!(
                    s,
                    "dense {} {} {} {}",
                    d.inputs,
                    d.outputs,
                    d.activation.name(),
                    u8::from(d.decay)
                ),
                Layer::Conv2d(c) => writeln!(
                    s,
                    "conv2d {} {} {} {} {} {} {} {}",
                    c.in_channels,
                    c.out_channels,
                    c.kernel_h,
                    c.kernel_w,
                    c.in_h,
                    c.in_w,
                    c.activation.name(),
                    u8::from(c.decay)
                ),
                Layer::Flatten => writeln!(s, "flatten"),
                Layer::ConcatInput { width } => writeln!(s, "concat {width}"),
            };
        }
        let _ = writeln!(s, "params");
        self.for_each_param(|p| {
            let line: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        });
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("checkpoint truncated before {what}")))
        };
        let header: Vec<&str> = next("header")?.split_whitespace().collect();
        if header != [MAGIC, &VERSION.to_string()] {
            return Err(Error::Parse(format!("unsupported checkpoint header {header:?}")));
        }
        let input_line: Vec<&str> = next("input")?.split_whitespace().collect();
        let input = match input_line.as_slice() {
            ["input", "flat", n] => Shape::Flat(num(n)?),
            ["input", "grid", c, h, w] => Shape::Grid {
                channels: num(c)?,
                height: num(h)?,
                width: num(w)?,
            },
            other => return Err(Error::Parse(format!("bad input line {other:?}"))),
        };
        let aux_width = match next("aux")?.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["aux", n] => num(n)?,
            other => return Err(Error::Parse(format!("bad aux line {other:?}"))),
        };
        let count: usize = match next("layers")?.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["layers", n] => num(n)?,
            other => return Err(Error::Parse(format!("bad layers line {other:?}"))),
        };
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let toks: Vec<&str> = next("layer")?.split_whitespace().collect();
            let layer = match toks.as_slice() {
                ["dense", i, o, act, decay] => {
                    let (inputs, outputs) = (num(i)?, num(o)?);
                    Layer::Dense(Dense {
                        inputs,
                        outputs,
                        weights: vec![0.0; inputs * outputs],
                        bias: vec![0.0; outputs],
                        activation: Activation::from_name(act)?,
                        decay: *decay == "1",
                    })
                }
                ["conv2d", ic, oc, kh, kw, ih, iw, act, decay] => {
                    let (ic, oc, kh, kw) = (num(ic)?, num(oc)?, num(kh)?, num(kw)?);
                    Layer::Conv2d(Conv2d {
                        in_channels: ic,
                        out_channels: oc,
                        kernel_h: kh,
                        kernel_w: kw,
                        in_h: num(ih)?,
                        in_w: num(iw)?,
                        weights: vec![0.0; oc * ic * kh * kw],
                        bias: vec![0.0; oc],
                        activation: Activation::from_name(act)?,
                        decay: *decay == "1",
                    })
                }
                ["flatten"] => Layer::Flatten,
                ["concat", w] => Layer::ConcatInput { width: num(w)? },
                other => return Err(Error::Parse(format!("bad layer line {other:?}"))),
            };
            layers.push(layer);
        }
        if next("params")?.trim() != "params" {
            return Err(Error::Parse("missing params marker".into()));
        }
        let mut values = Vec::new();
        for _ in 0..layers.iter().filter(|l| l.params().is_some()).count() * 2 {
            for tok in next("parameter tensor")?.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad parameter {tok:?}")))?,
                );
            }
        }
        let mut net = Network::new(input, aux_width, layers)?;
        net.set_flat_params(&values)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}

fn num(tok: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::Parse(format!("expected an integer, got {tok:?}")))
}
