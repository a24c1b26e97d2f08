//! Memory initialization files for an FPGA build: one two's-complement hex
//! word per line, zero-padded to the memory width.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Edge, QuantizedModel};

pub const HW_MANIFEST: &str = "hw_manifest.txt";
const BIAS_WIDTH: u32 = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryInfo {
    pub name: String,
    pub depth: usize,
    pub width: u32,
    pub path: PathBuf,
}

pub fn hex_digits(width: u32) -> usize {
    width.div_ceil(4) as usize
}

fn fits(v: i64, width: u32) -> bool {
    let half = 1i64 << (width - 1);
    (-half..half).contains(&v)
}

/// Two's-complement hex word of `v` in `width` bits.
pub fn to_hex_word(v: i64, width: u32) -> Result<String> {
    if !(1..=63).contains(&width) || !fits(v, width) {
        return Err(Error::Artifact(format!("{v} does not fit in {width} bits")));
    }
    let mask = (1u64 << width) - 1;
    Ok(format!("{:0w$x}", v as u64 & mask, w = hex_digits(width)))
}

pub fn parse_hex_word(word: &str, width: u32) -> Result<i64> {
    let bad = || Error::Artifact(format!("bad {width}-bit hex word {word:?}"));
    if word.len() != hex_digits(width) || !(1..=63).contains(&width) {
        return Err(bad());
    }
    let raw = u64::from_str_radix(word, 16).map_err(|_| bad())?;
    if raw >> width != 0 {
        return Err(bad());
    }
    let sign = 1u64 << (width - 1);
    Ok((raw ^ sign) as i64 - sign as i64)
}

pub fn write_hex_mem(path: impl AsRef<Path>, values: &[i64], width: u32) -> Result<()> {
    let path = path.as_ref();
    let mut body = String::with_capacity(values.len() * (hex_digits(width) + 1));
    for &v in values {
        let word = to_hex_word(v, width)
            .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
        body.push_str(&word);
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn read_hex_mem(path: impl AsRef<Path>, width: u32) -> Result<Vec<i64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().map(|l| parse_hex_word(l.trim(), width)).collect()
}

/// Writes every weight, bias, folded BatchNorm, PE and softmax table memory
/// to `out_dir`, plus `hw_manifest.txt` listing each memory and every
/// requantization constant.
pub fn export_hw_mem(model: &QuantizedModel, out_dir: impl AsRef<Path>) -> Result<Vec<MemoryInfo>> {
    let out_dir = out_dir.as_ref();
    let b = model.config.bits;
    let mut mems: Vec<(String, &[i64], u32)> = Vec::new();
    for (name, l) in model.linear_layers() {
        mems.push((format!("{name}_weight"), l.weights.data(), b));
        mems.push((format!("{name}_bias"), &l.bias, BIAS_WIDTH));
    }
    for (name, p) in model.batchnorms() {
        mems.push((format!("{name}_gamma"), p.gamma_hat.data(), b));
        mems.push((format!("{name}_beta"), &p.beta_star, BIAS_WIDTH));
    }
    mems.push(("pe".into(), model.pe.table.data(), b));
    mems.push(("softmax_nlut".into(), &model.softmax.nlut, model.softmax.nlut_width()));
    mems.push(("softmax_dlut".into(), &model.softmax.dlut, model.softmax.dlut_width()));

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = String::new();
    let mut infos = Vec::with_capacity(mems.len());
    for (name, values, width) in mems {
        let path = out_dir.join(format!("{name}.hex"));
        write_hex_mem(&path, values, width)?;
        writeln!(manifest, "memory {name} depth={} width={width}", values.len()).unwrap();
        infos.push(MemoryInfo {
            name,
            depth: values.len(),
            width,
            path,
        });
    }
    for (site, fs) in model.requant_sites() {
        writeln!(manifest, "requant {site} M={} n={}", fs.multiplier(), fs.shift()).unwrap();
    }
    for edge in Edge::ALL {
        writeln!(manifest, "zero_point {edge} {}", model.edge(edge).zero_point()).unwrap();
    }
    writeln!(manifest, "softmax_z_e {}", model.softmax.z_e).unwrap();
    let path = out_dir.join(HW_MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))?;
    Ok(infos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_words() {
        assert_eq!(to_hex_word(-1, 4).unwrap(), "f");
        assert_eq!(to_hex_word(-8, 4).unwrap(), "8");
        assert_eq!(to_hex_word(5, 6).unwrap(), "05");
        assert_eq!(to_hex_word(-32, 6).unwrap(), "20");
        assert_eq!(to_hex_word(-2, 12).unwrap(), "ffe");
        assert_eq!(to_hex_word(i32::MIN as i64, 32).unwrap(), "80000000");
        assert!(to_hex_word(8, 4).is_err());
        for width in [4, 6, 8, 12, 16, 18, 24, 32] {
            let half = 1i64 << (width - 1);
            for v in [-half, -1, 0, 1, half - 1] {
                assert_eq!(parse_hex_word(&to_hex_word(v, width).unwrap(), width).unwrap(), v);
            }
        }
        // A 6-bit word must not carry bits above the width.
        assert!(parse_hex_word("40", 6).is_err());
        assert!(parse_hex_word("0f", 4).is_err());
    }
}
