//! On-disk twin artifacts.
//!
//! A twin is saved as a directory: a `manifest.json` describing the version,
//! encoder, architecture and training provenance, plus one binary weight file
//! per module. Weight files are named by module index (rule ids are free-form
//! text and unsafe as file names); the manifest maps rule ids to files.
//!
//! Weight file layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "RTWN"
//! version u16      1
//! count   u32      number of tensors
//! per tensor:
//!   name_len u16, name bytes (UTF-8)
//!   ndim     u8,  ndim x u32 dims
//!   data     prod(dims) x f32
//! ```
//!
//! Tensors appear in the module's canonical order and round-trip bit-exactly.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::module::{ModuleArch, ModuleParams};
use crate::model::{Twin, TwinMeta, TwinModule};

const MAGIC: &[u8; 4] = b"RTWN";
const FORMAT_VERSION: u16 = 1;
const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestModule {
    rule_id: String,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    format_version: u16,
    version: String,
    encoder: EncoderConfig,
    arch: ModuleArch,
    meta: TwinMeta,
    modules: Vec<ManifestModule>,
}

/// Write `twin` to `dir`, creating the directory if needed.
pub fn save_twin(twin: &Twin, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest_modules = Vec::with_capacity(twin.modules.len());
    for (idx, module) in twin.modules.iter().enumerate() {
        let file = format!("module-{idx:03}.bin");
        write_module(&dir.join(&file), &module.params)?;
        manifest_modules.push(ManifestModule {
            rule_id: module.rule_id.clone(),
            file,
        });
    }
    let manifest = Manifest {
        format: "twin".to_string(),
        format_version: FORMAT_VERSION,
        version: twin.version.clone(),
        encoder: twin.encoder.clone(),
        arch: twin.arch,
        meta: twin.meta.clone(),
        modules: manifest_modules,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_NAME), json + "\n")?;
    Ok(())
}

/// Read a twin previously written by [`save_twin`].
pub fn load_twin(dir: &Path) -> Result<Twin> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        Error::Artifact(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != "twin" {
        return Err(Error::Artifact(format!(
            "unexpected artifact format {:?}",
            manifest.format
        )));
    }
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Artifact(format!(
            "unsupported format version {} (this build reads {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.modules.is_empty() {
        return Err(Error::Artifact("artifact has no modules".into()));
    }
    let mut modules = Vec::with_capacity(manifest.modules.len());
    for entry in &manifest.modules {
        let params = read_module(
            &dir.join(&entry.file),
            &manifest.arch,
            manifest.encoder.branch1_len,
            manifest.encoder.branch2_len,
        )?;
        modules.push(TwinModule {
            rule_id: entry.rule_id.clone(),
            params,
        });
    }
    Ok(Twin {
        version: manifest.version,
        encoder: manifest.encoder,
        arch: manifest.arch,
        modules,
        meta: manifest.meta,
    })
}

fn write_module(path: &Path, params: &ModuleParams<f32>) -> Result<()> {
    let names = params.tensor_names();
    let views = params.flat_views();
    debug_assert_eq!(names.len(), views.len());
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(names.len()).expect("tensor count fits u32").to_le_bytes())?;
    for ((name, dims), data) in names.iter().zip(&views) {
        let name_bytes = name.as_bytes();
        w.write_all(&u16::try_from(name_bytes.len()).expect("name fits u16").to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&u8::try_from(dims.len()).expect("ndim fits u8").to_le_bytes())?;
        for &d in dims {
            w.write_all(&u32::try_from(d).expect("dim fits u32").to_le_bytes())?;
        }
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        for &v in data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_module(
    path: &Path,
    arch: &ModuleArch,
    branch1_len: usize,
    branch2_len: usize,
) -> Result<ModuleParams<f32>> {
    let bad = |msg: String| Error::Artifact(format!("{}: {msg}", path.display()));
    let mut r = BufReader::new(
        fs::File::open(path).map_err(|e| bad(format!("cannot open: {e}")))?,
    );

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| bad(format!("truncated header: {e}")))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut u16buf = [0u8; 2];
    r.read_exact(&mut u16buf).map_err(|e| bad(format!("truncated header: {e}")))?;
    let file_version = u16::from_le_bytes(u16buf);
    if file_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported weight format version {file_version}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| bad(format!("truncated header: {e}")))?;
    let count = u32::from_le_bytes(u32buf) as usize;

    let mut params = ModuleParams::<f32>::zeros(arch, branch1_len, branch2_len)?;
    let expected = params.tensor_names();
    if count != expected.len() {
        return Err(bad(format!(
            "expected {} tensors for this architecture, found {count}",
            expected.len()
        )));
    }
    let mut views = params.flat_views_mut();
    for ((name, dims), dest) in expected.iter().zip(views.iter_mut()) {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf).map_err(|e| bad(format!("truncated tensor header: {e}")))?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(|e| bad(format!("truncated tensor name: {e}")))?;
        let found_name = String::from_utf8(name_bytes)
            .map_err(|_| bad("tensor name is not UTF-8".into()))?;
        if &found_name != name {
            return Err(bad(format!("expected tensor {name:?}, found {found_name:?}")));
        }
        let mut ndim_buf = [0u8; 1];
        r.read_exact(&mut ndim_buf).map_err(|e| bad(format!("truncated dims: {e}")))?;
        let ndim = ndim_buf[0] as usize;
        if ndim != dims.len() {
            return Err(bad(format!(
                "tensor {name:?}: expected {} dims, found {ndim}",
                dims.len()
            )));
        }
        for &want in dims {
            r.read_exact(&mut u32buf).map_err(|e| bad(format!("truncated dims: {e}")))?;
            let got = u32::from_le_bytes(u32buf) as usize;
            if got != want {
                return Err(bad(format!(
                    "tensor {name:?}: dimension mismatch (expected {want}, found {got})"
                )));
            }
        }
        let mut data = vec![0u8; dest.len() * 4];
        r.read_exact(&mut data)
            .map_err(|e| bad(format!("truncated data for tensor {name:?}: {e}")))?;
        for (slot, chunk) in dest.iter_mut().zip(data.chunks_exact(4)) {
            *slot = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| bad(format!("read failure: {e}")))? != 0 {
        return Err(bad("trailing bytes after last tensor".into()));
    }
    Ok(params)
}
