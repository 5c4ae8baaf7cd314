//! Binary checkpoint format.
//!
//! ```text
//! magic        8 bytes   "TPGEN\0\0" followed by the format version byte
//! header_len   u32 LE
//! header       UTF-8 `key = value` lines: metadata, one `tensor = name dims`
//!              line per tensor, then an optional `[config]` section
//! payload      f64 LE values of every tensor, in header order
//! crc          u32 LE CRC-32 of the payload
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::model::{GaussianPrior, LayerMap, LayerPair, NetworkParams};
use crate::scalar::Scalar;

pub const MAGIC_PREFIX: &[u8; 7] = b"TPGEN\0\0";
pub const FORMAT_VERSION: u8 = 1;

const CONFIG_MARKER: &str = "[config]";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: NetworkParams<T>,
    /// Run configuration dump stored alongside the parameters.
    pub config: Option<String>,
}

struct Tensor<'a, T> {
    name: String,
    dims: Vec<usize>,
    values: Box<dyn Iterator<Item = T> + 'a>,
}

fn tensors<T: Scalar>(params: &NetworkParams<T>) -> Vec<Tensor<'_, T>> {
    let mut out = Vec::new();
    for (i, pair) in params.layers.iter().enumerate() {
        for (role, map) in [("feedforward", &pair.feedforward), ("feedback", &pair.feedback)] {
            out.push(Tensor {
                name: format!("layer.{}.{role}.weight", i + 1),
                dims: vec![map.weight.nrows(), map.weight.ncols()],
                values: Box::new(map.weight.iter().copied()),
            });
            out.push(Tensor {
                name: format!("layer.{}.{role}.bias", i + 1),
                dims: vec![map.bias.len()],
                values: Box::new(map.bias.iter().copied()),
            });
        }
    }
    if let Some(prior) = &params.prior {
        out.push(Tensor {
            name: "prior.mean".into(),
            dims: vec![prior.dim()],
            values: Box::new(prior.mean.iter().copied()),
        });
        out.push(Tensor {
            name: "prior.variance".into(),
            dims: vec![prior.dim()],
            values: Box::new(prior.variance.iter().copied()),
        });
    }
    out
}

pub fn encode_checkpoint<T: Scalar>(params: &NetworkParams<T>, config: Option<&str>) -> Vec<u8> {
    let mut header = String::new();
    header.push_str(&format!("version = {FORMAT_VERSION}\n"));
    header.push_str(&format!("scalar = {}\n", T::NAME));
    header.push_str(&format!("seed = {}\n", params.seed));
    header.push_str(&format!("depth = {}\n", params.depth()));
    let widths: Vec<String> = params.widths().iter().map(ToString::to_string).collect();
    header.push_str(&format!("widths = {}\n", widths.join(",")));
    for (i, pair) in params.layers.iter().enumerate() {
        header.push_str(&format!("layer.{}.feedforward.activation = {}\n", i + 1, pair.feedforward.activation));
        header.push_str(&format!("layer.{}.feedback.activation = {}\n", i + 1, pair.feedback.activation));
    }
    header.push_str(&format!("prior = {}\n", params.prior.is_some()));

    let mut payload = Vec::new();
    for t in tensors(params) {
        let dims: Vec<String> = t.dims.iter().map(ToString::to_string).collect();
        header.push_str(&format!("tensor = {} {}\n", t.name, dims.join("x")));
        for v in t.values {
            payload.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    if let Some(config) = config {
        header.push_str(CONFIG_MARKER);
        header.push('\n');
        header.push_str(config);
    }

    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC_PREFIX);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

struct Header {
    seed: u64,
    widths: Vec<usize>,
    feedforward: Vec<Activation>,
    feedback: Vec<Activation>,
    prior: bool,
    tensors: Vec<(String, Vec<usize>)>,
    config: Option<String>,
}

fn field<'a>(entries: &'a [(String, String)], key: &str) -> Result<&'a str> {
    entries
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::parse(key, "missing from checkpoint header"))
}

fn parse_field<V: std::str::FromStr>(entries: &[(String, String)], key: &str) -> Result<V> {
    let raw = field(entries, key)?;
    raw.parse()
        .map_err(|_| Error::parse(key, format!("cannot parse `{raw}`")))
}

fn parse_header(text: &str) -> Result<Header> {
    let (meta, config) = match text.split_once(&format!("{CONFIG_MARKER}\n")) {
        Some((meta, config)) => (meta, Some(config.to_string())),
        None => (text, None),
    };
    let mut entries = Vec::new();
    let mut tensors = Vec::new();
    for line in meta.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse("header", format!("malformed line `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "tensor" {
            let (name, dims) = v
                .split_once(' ')
                .ok_or_else(|| Error::parse("tensor", format!("malformed entry `{v}`")))?;
            let dims = dims
                .split('x')
                .map(|d| d.parse().map_err(|_| Error::parse(name, format!("bad dimensions `{dims}`"))))
                .collect::<Result<Vec<usize>>>()?;
            tensors.push((name.to_string(), dims));
        } else {
            entries.push((k.to_string(), v.to_string()));
        }
    }
    let depth: usize = parse_field(&entries, "depth")?;
    let widths = field(&entries, "widths")?
        .split(',')
        .map(|w| w.trim().parse().map_err(|_| Error::parse("widths", format!("bad width `{w}`"))))
        .collect::<Result<Vec<usize>>>()?;
    if widths.len() != depth + 1 {
        return Err(Error::parse("widths", format!("expected {} entries for depth {depth}", depth + 1)));
    }
    let mut feedforward = Vec::with_capacity(depth);
    let mut feedback = Vec::with_capacity(depth);
    for k in 1..=depth {
        feedforward.push(parse_field(&entries, &format!("layer.{k}.feedforward.activation"))?);
        feedback.push(parse_field(&entries, &format!("layer.{k}.feedback.activation"))?);
    }
    Ok(Header {
        seed: parse_field(&entries, "seed")?,
        widths,
        feedforward,
        feedback,
        prior: parse_field(&entries, "prior")?,
        tensors,
        config,
    })
}

struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PayloadReader<'_> {
    fn take<T: Scalar>(&mut self, name: &str, count: usize) -> Result<Vec<T>> {
        let end = self.pos + 8 * count;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::Length {
            what: format!("checkpoint tensor `{name}`"),
            expected: end,
            found: self.bytes.len(),
        })?;
        self.pos = end;
        Ok(chunk
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < 12 {
        return Err(Error::Length {
            what: "checkpoint preamble".into(),
            expected: 12,
            found: bytes.len(),
        });
    }
    if &bytes[..7] != MAGIC_PREFIX {
        return Err(Error::parse("magic", "not a checkpoint file"));
    }
    if bytes[7] != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: bytes[7],
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_bytes = bytes.get(12..12 + header_len).ok_or_else(|| Error::Length {
        what: "checkpoint header".into(),
        expected: 12 + header_len,
        found: bytes.len(),
    })?;
    let text = std::str::from_utf8(header_bytes).map_err(|_| Error::parse("header", "not valid UTF-8"))?;
    let header = parse_header(text)?;

    let rest = &bytes[12 + header_len..];
    let expected_values: usize = header.tensors.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
    if rest.len() != 8 * expected_values + 4 {
        return Err(Error::Length {
            what: "checkpoint payload".into(),
            expected: 8 * expected_values + 4,
            found: rest.len(),
        });
    }
    let (payload, crc) = rest.split_at(rest.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored {
        return Err(Error::parse("crc", "payload checksum mismatch"));
    }

    let mut reader = PayloadReader { bytes: payload, pos: 0 };
    let mut table = header.tensors.iter();
    let mut next = |expected_name: &str, expected_dims: &[usize]| -> Result<Vec<T>> {
        let (name, dims) = table
            .next()
            .ok_or_else(|| Error::parse(expected_name, "tensor missing from table"))?;
        if name != expected_name || dims != expected_dims {
            return Err(Error::parse(
                expected_name,
                format!("table has `{name}` {dims:?}, expected {expected_dims:?}"),
            ));
        }
        reader.take(name, dims.iter().product())
    };

    let mut layers = Vec::with_capacity(header.feedforward.len());
    for k in 1..=header.feedforward.len() {
        let (below, here) = (header.widths[k - 1], header.widths[k]);
        let mut read_map = |role: &str, out: usize, inp: usize, act: Activation| -> Result<LayerMap<T>> {
            let w = next(&format!("layer.{k}.{role}.weight"), &[out, inp])?;
            let b = next(&format!("layer.{k}.{role}.bias"), &[out])?;
            let weight = Array2::from_shape_vec((out, inp), w).map_err(|e| Error::parse(role, e.to_string()))?;
            LayerMap::new(weight, Array1::from(b), act)
        };
        let f = read_map("feedforward", here, below, header.feedforward[k - 1])?;
        let g = read_map("feedback", below, here, header.feedback[k - 1])?;
        layers.push(LayerPair::new(f, g)?);
    }
    let prior = if header.prior {
        let d = *header.widths.last().expect("depth >= 1");
        let mean = next("prior.mean", &[d])?;
        let variance = next("prior.variance", &[d])?;
        // Stored values were floored when fitted; keep them bit-exact.
        Some(GaussianPrior {
            mean: Array1::from(mean),
            variance: Array1::from(variance),
        })
    } else {
        None
    };
    if let Some((name, _)) = table.next() {
        return Err(Error::parse(name.as_str(), "unexpected extra tensor"));
    }
    Ok(Checkpoint {
        params: NetworkParams::new(layers, prior, header.seed)?,
        config: header.config,
    })
}

pub fn save_checkpoint<T: Scalar>(params: &NetworkParams<T>, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint_with_config(params, None, path)
}

pub fn save_checkpoint_with_config<T: Scalar>(
    params: &NetworkParams<T>,
    config: Option<&str>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params, config)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<NetworkParams<T>> {
    Ok(load_checkpoint_full(path)?.params)
}

pub fn load_checkpoint_full<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::{generate_batch, GenerateConfig};
    use crate::model::Architecture;
    use crate::rng::RandomSource;

    fn params(with_prior: bool) -> NetworkParams<f64> {
        let arch = Architecture {
            widths: vec![9, 6, 3],
            feedforward: vec![Activation::Softplus, Activation::Sigmoid],
            feedback: vec![Activation::Sigmoid, Activation::Softplus],
        };
        let mut p = NetworkParams::init(&arch, 77).unwrap();
        if with_prior {
            p.prior = Some(GaussianPrior::new(Array1::from(vec![0.1, 0.5, 0.9]), Array1::from(vec![0.2, 1e-9, 3.0])).unwrap());
        }
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for with_prior in [false, true] {
            let p = params(with_prior);
            let bytes = encode_checkpoint(&p, Some("seed = 3\ntrain.epochs = 5\n"));
            let back: Checkpoint<f64> = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back.params, p);
            assert_eq!(back.config.as_deref(), Some("seed = 3\ntrain.epochs = 5\n"));
            assert_eq!(encode_checkpoint(&back.params, back.config.as_deref()), bytes);
        }
        let bytes = encode_checkpoint(&params(false), None);
        assert_eq!(decode_checkpoint::<f64>(&bytes).unwrap().config, None);
    }

    #[test]
    fn f32_checkpoints_load() {
        let p = params(true);
        let p32 = NetworkParams::<f32>::new(
            p.layers
                .iter()
                .map(|l| {
                    let conv = |m: &LayerMap<f64>| {
                        LayerMap::new(m.weight.mapv(|v| v as f32), m.bias.mapv(|v| v as f32), m.activation).unwrap()
                    };
                    LayerPair::new(conv(&l.feedforward), conv(&l.feedback)).unwrap()
                })
                .collect(),
            None,
            p.seed,
        )
        .unwrap();
        let back: NetworkParams<f32> = decode_checkpoint(&encode_checkpoint(&p32, None)).unwrap().params;
        assert_eq!(back, p32);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode_checkpoint(&params(true), Some("a = 1\n"));
        for len in (0..bytes.len()).step_by(7).chain([bytes.len() - 1]) {
            let err = decode_checkpoint::<f64>(&bytes[..len]).unwrap_err();
            assert!(
                matches!(err, Error::Length { .. } | Error::Parse { .. }),
                "length {len}: {err}"
            );
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_checkpoint(&params(true), None);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint::<f64>(&bad), Err(Error::Parse { ref field, .. }) if field == "magic"));

        let mut bad = bytes.clone();
        bad[7] = FORMAT_VERSION + 1;
        assert!(matches!(
            decode_checkpoint::<f64>(&bad),
            Err(Error::Version { expected: FORMAT_VERSION, .. })
        ));

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 20] ^= 0x01;
        assert!(matches!(decode_checkpoint::<f64>(&bad), Err(Error::Parse { ref field, .. }) if field == "crc"));
    }

    #[test]
    fn header_errors_name_the_field() {
        let bytes = encode_checkpoint(&params(false), None);
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[12..12 + header_len]).unwrap();
        let edited = text.replace("layer.1.feedback.activation = sigmoid", "layer.1.feedback.activation = tanh");
        assert_eq!(edited.len(), text.len() - 3);
        let mut bad = bytes[..8].to_vec();
        bad.extend_from_slice(&(edited.len() as u32).to_le_bytes());
        bad.extend_from_slice(edited.as_bytes());
        bad.extend_from_slice(&bytes[12 + header_len..]);
        let err = decode_checkpoint::<f64>(&bad).unwrap_err();
        assert!(err.to_string().contains("layer.1.feedback.activation"), "{err}");
    }

    #[test]
    fn files_and_samples_survive_reload() {
        let p = params(true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint_with_config(&p, Some("seed = 1\n"), &path).unwrap();
        let full = load_checkpoint_full::<f64>(&path).unwrap();
        assert_eq!(full.config.as_deref(), Some("seed = 1\n"));
        let loaded: NetworkParams<f64> = load_checkpoint(&path).unwrap();
        let rng = RandomSource::new(5);
        let cfg = GenerateConfig::default();
        assert_eq!(
            generate_batch(&p, 4, &cfg, &rng).unwrap(),
            generate_batch(&loaded, 4, &cfg, &rng).unwrap()
        );
        assert!(matches!(load_checkpoint::<f64>(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
