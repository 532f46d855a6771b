//! `TSRL-NET v1` text checkpoints.
//!
//! ```text
//! TSRL-NET v1
//! layers <count>
//! layer <input_dim> <output_dim> <activation>
//! <weights, row-major, space separated>
//! <bias, space separated>
//! ...
//! ```
//!
//! Values are written in shortest round-trip decimal form, so a save/load
//! cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, TsrlError};
use crate::nn::{Activation, DenseNet, Layer};

pub const NET_HEADER: &str = "TSRL-NET v1";

fn bad(detail: impl Into<String>) -> TsrlError {
    TsrlError::Format {
        what: "TSRL-NET checkpoint",
        detail: detail.into(),
    }
}

fn join(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").expect("writing to a String");
    }
    s
}

pub fn net_to_string(net: &DenseNet) -> String {
    let mut out = format!("{NET_HEADER}\nlayers {}\n", net.layers().len());
    for l in net.layers() {
        out.push_str(&format!(
            "layer {} {} {}\n{}\n{}\n",
            l.input_dim,
            l.output_dim,
            l.activation.name(),
            join(&l.weights),
            join(&l.bias)
        ));
    }
    out
}

fn parse_values(line: Option<&str>, expected: usize, what: &str) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| bad(format!("missing {what} line")))?;
    let values = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| bad(format!("bad number {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(bad(format!(
            "{what}: expected {expected} values, found {}",
            values.len()
        )));
    }
    Ok(values)
}

pub fn net_from_str(text: &str) -> Result<DenseNet> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(NET_HEADER) {
        return Err(bad(format!("first line must be {NET_HEADER:?}")));
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("layers "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| bad("expected `layers <count>`"))?;
    let mut layers = Vec::with_capacity(count);
    for k in 0..count {
        let spec = lines
            .next()
            .ok_or_else(|| bad(format!("missing layer {k}")))?;
        let parts: Vec<&str> = spec.split_whitespace().collect();
        let (input_dim, output_dim, activation) = match parts.as_slice() {
            ["layer", i, o, a] => (
                i.parse::<usize>().map_err(|_| bad("bad input dim"))?,
                o.parse::<usize>().map_err(|_| bad("bad output dim"))?,
                Activation::from_name(a).ok_or_else(|| bad(format!("unknown activation {a}")))?,
            ),
            _ => return Err(bad(format!("bad layer line {spec:?}"))),
        };
        let weights = parse_values(lines.next(), input_dim * output_dim, "weights")?;
        let bias = parse_values(lines.next(), output_dim, "bias")?;
        layers.push(Layer {
            input_dim,
            output_dim,
            weights,
            bias,
            activation,
        });
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing content after last layer"));
    }
    DenseNet::new(layers)
}

pub fn save_net(net: &DenseNet, path: &Path) -> Result<()> {
    std::fs::write(path, net_to_string(net)).map_err(|e| TsrlError::io(path, e))
}

pub fn load_net(path: &Path) -> Result<DenseNet> {
    let text = std::fs::read_to_string(path).map_err(|e| TsrlError::io(path, e))?;
    net_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), hidden in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = DenseNet::glorot(&[3, hidden, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
            net.layers_mut()[1].bias[0] = 1e-300 * (seed as f64);
            let back = net_from_str(&net_to_string(&net)).unwrap();
            prop_assert_eq!(back, net);
        }
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(net_from_str("TSRL-NET v2\nlayers 0\n").is_err());
    }

    #[test]
    fn rejects_short_weight_line() {
        let text = format!("{NET_HEADER}\nlayers 1\nlayer 2 1 identity\n0.5\n0\n");
        assert!(matches!(net_from_str(&text), Err(TsrlError::Format { .. })));
    }
}
