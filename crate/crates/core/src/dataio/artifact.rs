//! Directory artifact: `manifest.txt` with `key = value` records plus one
//! `<tensor>.txt` per integer tensor, one signed decimal per line.
//!
//! Reals are written with 17 significant digits, which reproduces every
//! `f64` exactly, so save→load→save is byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::MinMaxScaler;
use crate::error::{Error, Result};
use crate::kernels::{
    BatchNormParams, DenominatorRange, ExpArgument, LinearParams, PETable, SoftmaxOptions, SoftmaxTables,
};
use crate::model::{AddScales, Edge, ModelConfig, QuantizedModel};
use crate::qcore::{FixedScale, IntTensor, QParams, DEFAULT_MULTIPLIER_BITS};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.txt";

/// A quantized model together with the scaler its inputs were normalized by.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub model: QuantizedModel,
    pub scaler: Option<MinMaxScaler>,
}

const LINEAR_WIRING: [(&str, Edge, Edge); 8] = [
    ("l_input", Edge::Input, Edge::LInput),
    ("l_q", Edge::AddPe, Edge::Q),
    ("l_k", Edge::AddPe, Edge::K),
    ("l_v", Edge::AddPe, Edge::V),
    ("l_o", Edge::Attn, Edge::LO),
    ("l_ffn1", Edge::BnMha, Edge::Ffn1),
    ("l_ffn2", Edge::Relu, Edge::Ffn2),
    ("l_output", Edge::Gap, Edge::Output),
];

const BN_WIRING: [(&str, Edge, Edge); 2] = [
    ("bn_mha", Edge::AddMha, Edge::BnMha),
    ("bn_ffn", Edge::AddFfn, Edge::BnFfn),
];

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn qp_fields(qp: QParams) -> String {
    format!("{} {}", real(qp.scale()), qp.zero_point())
}

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

struct Writer {
    manifest: String,
    tensors: Vec<(String, String)>,
}

impl Writer {
    fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        writeln!(self.manifest, "{key} = {value}").unwrap();
    }

    fn tensor(&mut self, name: &str, header: String, values: &[i64]) {
        self.kv(&format!("tensor.{name}"), header);
        let mut body = String::with_capacity(values.len() * 4);
        for v in values {
            writeln!(body, "{v}").unwrap();
        }
        self.tensors.push((name.to_string(), body));
    }
}

pub fn save_model(dir: impl AsRef<Path>, model: &QuantizedModel, scaler: Option<&MinMaxScaler>) -> Result<()> {
    let dir = dir.as_ref();
    let cfg = &model.config;
    let mut w = Writer {
        manifest: String::new(),
        tensors: Vec::new(),
    };
    w.kv("format_version", FORMAT_VERSION);
    w.kv("config.n", cfg.n);
    w.kv("config.m", cfg.m);
    w.kv("config.d_model", cfg.d_model);
    w.kv("config.bits", cfg.bits);
    w.kv("config.heads", cfg.h());
    w.kv(
        "config.softmax.exp_argument",
        match cfg.softmax.exp_argument {
            ExpArgument::Scaled => "scaled",
            ExpArgument::Raw => "raw",
        },
    );
    w.kv(
        "config.softmax.denominator_range",
        match cfg.softmax.denominator_range {
            DenominatorRange::SquaredLength => "squared_length",
            DenominatorRange::RowLength => "row_length",
        },
    );
    w.kv("requant.width", DEFAULT_MULTIPLIER_BITS);
    for edge in Edge::ALL {
        w.kv(&format!("edge.{edge}"), qp_fields(model.edge(edge)));
    }
    for (name, fs) in model.requant_sites() {
        w.kv(
            &format!("requant.{name}"),
            format!("{} {} {}", fs.multiplier(), fs.shift(), real(fs.ratio())),
        );
    }
    for (name, l) in model.linear_layers() {
        let wq = l.weights.qparams();
        let header = format!("{} {}", shape_str(l.weights.shape()), qp_fields(wq));
        w.tensor(&format!("{name}.weight"), header, l.weights.data());
        w.tensor(&format!("{name}.bias"), l.bias.len().to_string(), &l.bias);
    }
    for (name, p) in model.batchnorms() {
        let header = format!("{} {}", p.gamma_hat.len(), qp_fields(p.gamma_hat.qparams()));
        w.tensor(&format!("{name}.gamma_hat"), header, p.gamma_hat.data());
        w.tensor(&format!("{name}.beta_star"), p.beta_star.len().to_string(), &p.beta_star);
    }
    let pe = &model.pe.table;
    w.tensor("pe", format!("{} {}", shape_str(pe.shape()), qp_fields(pe.qparams())), pe.data());
    let sm = &model.softmax;
    w.kv("softmax.z_e", sm.z_e);
    w.kv("softmax.s_e", real(sm.s_e));
    w.tensor("softmax.nlut", sm.nlut.len().to_string(), &sm.nlut);
    w.tensor("softmax.dlut", sm.dlut.len().to_string(), &sm.dlut);
    if let Some(s) = scaler {
        for (j, (lo, hi)) in s.feature_ranges()?.iter().enumerate() {
            w.kv(&format!("scaler.feature.{j}"), format!("{} {}", real(*lo), real(*hi)));
        }
        let (lo, hi) = s.target_range()?;
        w.kv("scaler.target", format!("{} {}", real(lo), real(hi)));
    }

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in &w.tensors {
        let path = dir.join(format!("{name}.txt"));
        fs::write(&path, body).map_err(|e| Error::io(path, e))?;
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, &w.manifest).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    dir: &'a Path,
    kv: BTreeMap<String, String>,
}

fn bad(key: &str, value: &str) -> Error {
    Error::Artifact(format!("cannot parse `{key} = {value}`"))
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Result<&str> {
        self.kv
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Artifact(format!("manifest is missing `{key}`")))
    }

    fn fields(&self, key: &str) -> Result<Vec<&str>> {
        Ok(self.raw(key)?.split_whitespace().collect())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| bad(key, v))
    }

    fn field<T: std::str::FromStr>(&self, key: &str, i: usize) -> Result<T> {
        let f = self.fields(key)?;
        f.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad(key, self.kv[key].as_str()))
    }

    fn qparams(&self, key: &str, offset: usize, bits: u32) -> Result<QParams> {
        QParams::new(self.field(key, offset)?, self.field(key, offset + 1)?, bits)
    }

    fn shape(&self, key: &str) -> Result<Vec<usize>> {
        let first: String = self.field(key, 0)?;
        first
            .split('x')
            .map(|d| d.parse().map_err(|_| bad(key, &first)))
            .collect()
    }

    fn values(&self, name: &str, expected: usize) -> Result<Vec<i64>> {
        let path = self.dir.join(format!("{name}.txt"));
        if !path.is_file() {
            return Err(Error::Artifact(format!("missing tensor file `{}`", path.display())));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let values = text
            .lines()
            .enumerate()
            .map(|(i, l)| {
                l.trim().parse().map_err(|_| {
                    Error::Artifact(format!("tensor `{name}` line {}: bad integer {l:?}", i + 1))
                })
            })
            .collect::<Result<Vec<i64>>>()?;
        if values.len() != expected {
            return Err(Error::TensorLength {
                name: name.to_string(),
                expected,
                found: values.len(),
            });
        }
        Ok(values)
    }

    fn int_tensor(&self, name: &str, bits: u32) -> Result<IntTensor> {
        let key = format!("tensor.{name}");
        let shape = self.shape(&key)?;
        let qp = self.qparams(&key, 1, bits)?;
        let data = self.values(name, shape.iter().product())?;
        IntTensor::new(shape, data, qp).map_err(|e| e.in_layer(name))
    }

    fn vector(&self, name: &str) -> Result<Vec<i64>> {
        let len = self.field(&format!("tensor.{name}"), 0)?;
        self.values(name, len)
    }

    fn fixed_scale(&self, site: &str, width: u32) -> Result<FixedScale> {
        let key = format!("requant.{site}");
        FixedScale::from_parts(self.field(&key, 0)?, self.field(&key, 1)?, self.field(&key, 2)?, width)
    }

    fn range(&self, key: &str) -> Result<(f64, f64)> {
        Ok((self.field(key, 0)?, self.field(key, 1)?))
    }
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<ModelArtifact> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut kv = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Artifact(format!("manifest line without `=`: {line:?}")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let r = Reader { dir, kv };

    let version = r.raw("format_version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version.to_string(),
        });
    }
    if r.parse::<usize>("config.heads")? != ModelConfig::HEADS {
        return Err(Error::Artifact("only single-head models are supported".into()));
    }
    let softmax = SoftmaxOptions {
        exp_argument: match r.raw("config.softmax.exp_argument")? {
            "scaled" => ExpArgument::Scaled,
            "raw" => ExpArgument::Raw,
            other => return Err(bad("config.softmax.exp_argument", other)),
        },
        denominator_range: match r.raw("config.softmax.denominator_range")? {
            "squared_length" => DenominatorRange::SquaredLength,
            "row_length" => DenominatorRange::RowLength,
            other => return Err(bad("config.softmax.denominator_range", other)),
        },
    };
    let config = ModelConfig::new(
        r.parse("config.n")?,
        r.parse("config.m")?,
        r.parse("config.d_model")?,
        r.parse("config.bits")?,
    )?
    .with_softmax(softmax);
    let b = config.bits;
    let width: u32 = r.parse("requant.width")?;

    let mut edges = BTreeMap::new();
    for edge in Edge::ALL {
        edges.insert(edge, r.qparams(&format!("edge.{edge}"), 0, b)?);
    }
    let linear = |(name, src, dst): (&str, Edge, Edge)| -> Result<LinearParams> {
        Ok(LinearParams {
            weights: r.int_tensor(&format!("{name}.weight"), b)?,
            bias: r.vector(&format!("{name}.bias"))?,
            requant: r.fixed_scale(name, width)?,
            in_qp: edges[&src],
            out_qp: edges[&dst],
        })
    };
    let [l_input, l_q, l_k, l_v, l_o, ffn1, ffn2, l_output] = LINEAR_WIRING.map(linear);
    let bn = |(name, src, dst): (&str, Edge, Edge)| -> Result<BatchNormParams> {
        Ok(BatchNormParams {
            gamma_hat: r.int_tensor(&format!("{name}.gamma_hat"), b)?,
            beta_star: r.vector(&format!("{name}.beta_star"))?,
            requant: r.fixed_scale(name, width)?,
            in_qp: edges[&src],
            out_qp: edges[&dst],
        })
    };
    let [bn_mha, bn_ffn] = BN_WIRING.map(bn);
    let add = |name: &str| -> Result<AddScales> {
        Ok(AddScales {
            lhs: r.fixed_scale(&format!("{name}.lhs"), width)?,
            rhs: r.fixed_scale(&format!("{name}.rhs"), width)?,
        })
    };
    let softmax = SoftmaxTables {
        nlut: r.vector("softmax.nlut")?,
        dlut: r.vector("softmax.dlut")?,
        z_e: r.parse("softmax.z_e")?,
        s_e: r.parse("softmax.s_e")?,
        n: config.n,
        in_qp: edges[&Edge::Score],
        out_qp: edges[&Edge::Softmax],
    };

    let model = QuantizedModel {
        config,
        input_linear: l_input?,
        q_linear: l_q?,
        k_linear: l_k?,
        v_linear: l_v?,
        o_linear: l_o?,
        ffn1: ffn1?,
        ffn2: ffn2?,
        output_linear: l_output?,
        bn_mha: bn_mha?,
        bn_ffn: bn_ffn?,
        pe: PETable {
            table: r.int_tensor("pe", b)?,
        },
        softmax,
        add_pe: add("add_pe")?,
        add_mha: add("add_mha")?,
        add_ffn: add("add_ffn")?,
        score_scale: r.fixed_scale("matmul_score", width)?,
        attn_scale: r.fixed_scale("matmul_attn", width)?,
        gap_scale: r.fixed_scale("gap", width)?,
        edges,
    };
    model.validate()?;

    let scaler = if r.kv.contains_key("scaler.target") {
        let features = (0..config.m)
            .map(|j| r.range(&format!("scaler.feature.{j}")))
            .collect::<Result<Vec<_>>>()?;
        Some(MinMaxScaler::from_ranges(features, r.range("scaler.target")?))
    } else {
        None
    };
    Ok(ModelArtifact { model, scaler })
}

impl ModelArtifact {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        save_model(dir, &self.model, self.scaler.as_ref())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        load_model(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Instance;

    fn saved(bits: u32) -> (tempfile::TempDir, Instance) {
        let inst = Instance::generate(&ModelConfig::new(6, 2, 8, bits).unwrap(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &inst.model, None).unwrap();
        (dir, inst)
    }

    #[test]
    fn roundtrip_preserves_model() {
        let (dir, inst) = saved(6);
        let loaded = load_model(dir.path()).unwrap();
        assert_eq!(loaded.model, inst.model);
        assert!(loaded.scaler.is_none());
    }

    #[test]
    fn version_and_length_are_checked() {
        let (dir, _) = saved(4);
        let manifest = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&manifest).unwrap();
        fs::write(&manifest, text.replace("format_version = 1", "format_version = 7")).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::VersionMismatch { .. })));
        fs::write(&manifest, &text).unwrap();

        let bias = dir.path().join("l_q.bias.txt");
        let body = fs::read_to_string(&bias).unwrap();
        fs::write(&bias, format!("{body}0\n")).unwrap();
        match load_model(dir.path()) {
            Err(Error::TensorLength { name, .. }) => assert_eq!(name, "l_q.bias"),
            other => panic!("{other:?}"),
        }
        fs::remove_file(&bias).unwrap();
        let err = load_model(dir.path()).unwrap_err().to_string();
        assert!(err.contains("l_q.bias.txt"), "{err}");
    }
}
