//! Checkpoint directory: `manifest.json` (format version, encoder config,
//! head configs, tensor names, shapes and element offsets, metadata) plus
//! `params.bin`, the concatenated tensors as little-endian `f32`.
//!
//! Tensor name prefixes: `encoder.`, `head.behavior.`, `head.genotype.`,
//! `recon.`, `norm.`, `projection.`, `clusters.`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pheno_numerics::{ParamStore, Tensor};

use super::{ClassifierHead, EncoderConfig, EncoderModel, HeadTask, ReconHead};
use crate::dataio::{NormStats, WindowConfig};
use crate::evaluation::Projection2d;
use crate::fsutil::atomic_write;
use crate::{CoreError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

/// Free-form provenance stored with a bundle.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    #[serde(default)]
    pub cohorts: Vec<String>,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Everything needed for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub encoder: EncoderModel,
    pub behavior_head: Option<ClassifierHead>,
    pub genotype_head: Option<ClassifierHead>,
    pub recon: Option<ReconHead>,
    pub norm: Option<NormStats>,
    pub projection: Option<Projection2d>,
    /// `k×d_model` cluster centroids in embedding space.
    pub centroids: Option<Tensor<f32>>,
    pub meta: BundleMeta,
}

#[derive(Serialize, Deserialize)]
struct HeadEntry {
    name: String,
    task: HeadTask,
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// In `f32` elements from the start of `params.bin`.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    encoder: EncoderConfig,
    heads: Vec<HeadEntry>,
    meta: BundleMeta,
    tensors: Vec<TensorEntry>,
}

fn err(m: impl Into<String>) -> CoreError {
    CoreError::Checkpoint(m.into())
}

impl ModelBundle {
    pub fn new(encoder: EncoderModel) -> Self {
        Self {
            encoder,
            behavior_head: None,
            genotype_head: None,
            recon: None,
            norm: None,
            projection: None,
            centroids: None,
            meta: BundleMeta::default(),
        }
    }

    fn named_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::new();
        let mut add = |prefix: &str, store: &ParamStore| {
            for (n, t) in store.iter() {
                out.push((format!("{prefix}{n}"), t.clone()));
            }
        };
        add("encoder.", &self.encoder.params);
        if let Some(h) = &self.behavior_head {
            add("head.behavior.", &h.params);
        }
        if let Some(h) = &self.genotype_head {
            add("head.genotype.", &h.params);
        }
        if let Some(r) = &self.recon {
            add("recon.", &r.params);
        }
        if let Some(n) = &self.norm {
            out.push(("norm.mean".into(), Tensor::row_vector(n.mean.clone())));
            out.push(("norm.std".into(), Tensor::row_vector(n.std.clone())));
        }
        if let Some(p) = &self.projection {
            out.push(("projection.mean".into(), Tensor::row_vector(p.mean.clone())));
            out.push((
                "projection.components".into(),
                Tensor::matrix(2, p.mean.len(), p.components.clone()).expect("2×d"),
            ));
        }
        if let Some(c) = &self.centroids {
            out.push(("clusters.centroids".into(), c.clone()));
        }
        out
    }

    /// Serialized `(manifest.json, params.bin)` bytes.
    pub fn to_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let mut heads = Vec::new();
        for (name, h) in [("behavior", &self.behavior_head), ("genotype", &self.genotype_head)] {
            if let Some(h) = h {
                heads.push(HeadEntry {
                    name: name.into(),
                    task: h.task,
                    classes: h.classes.clone(),
                });
            }
        }
        let mut tensors = Vec::new();
        let mut blob = Vec::new();
        let mut offset = 0;
        for (name, t) in self.named_tensors() {
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
                len: t.len(),
            });
            offset += t.len();
        }
        let manifest = Manifest {
            format_version: CHECKPOINT_VERSION,
            encoder: self.encoder.config,
            heads,
            meta: self.meta.clone(),
            tensors,
        };
        let mut json = serde_json::to_vec_pretty(&manifest).map_err(|e| err(e.to_string()))?;
        json.push(b'\n');
        Ok((json, blob))
    }

    /// SHA-256 of the serialized manifest and tensor blob.
    pub fn hash(&self) -> Result<String> {
        let (m, b) = self.to_bytes()?;
        Ok(hash_bytes(&m, &b))
    }

    pub fn from_bytes(manifest: &[u8], blob: &[u8]) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(manifest).map_err(|e| err(e.to_string()))?;
        if m.format_version != CHECKPOINT_VERSION {
            return Err(err(format!(
                "unsupported format version {} (expected {CHECKPOINT_VERSION})",
                m.format_version
            )));
        }
        if blob.len() % 4 != 0 {
            return Err(err("params.bin length is not a multiple of 4"));
        }
        let values: Vec<f32> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut by_name: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        for e in &m.tensors {
            let n: usize = e.shape.iter().product();
            if n != e.len || e.offset + e.len > values.len() {
                return Err(err(format!("tensor {} does not fit params.bin", e.name)));
            }
            let t = Tensor::new(e.shape.clone(), values[e.offset..e.offset + e.len].to_vec())?;
            if by_name.insert(e.name.clone(), t).is_some() {
                return Err(err(format!("duplicate tensor {}", e.name)));
            }
        }
        let total: usize = m.tensors.iter().map(|e| e.len).sum();
        if total != values.len() {
            return Err(err("params.bin holds data not listed in the manifest"));
        }

        let mut take = |name: &str| by_name.remove(name);
        let mut store_of = |prefix: &str, names: &[String]| -> Result<ParamStore> {
            let mut s = ParamStore::new();
            for n in names {
                let full = format!("{prefix}{n}");
                let t = take(&full).ok_or_else(|| err(format!("missing tensor {full}")))?;
                s.push(n.clone(), t);
            }
            Ok(s)
        };

        let names = EncoderModel::<f32>::param_names(&m.encoder);
        let encoder = EncoderModel::from_params(m.encoder, store_of("encoder.", &names)?)?;
        let head_names = ["weight".to_string(), "bias".to_string()];
        let mut behavior_head = None;
        let mut genotype_head = None;
        for h in m.heads {
            let store = store_of(&format!("head.{}.", h.name), &head_names)?;
            let head = ClassifierHead::from_params(h.task, h.classes, store)?;
            if head.d_model() != m.encoder.d_model {
                return Err(err(format!("{} head width differs from d_model", h.name)));
            }
            match h.name.as_str() {
                "behavior" => behavior_head = Some(head),
                "genotype" => genotype_head = Some(head),
                other => return Err(err(format!("unknown head '{other}'"))),
            }
        }
        let recon = if by_name.contains_key("recon.weight") {
            let names: Vec<String> = ["weight", "bias", "mask_token"].map(String::from).to_vec();
            let mut s = ParamStore::new();
            for n in &names {
                let t = by_name
                    .remove(&format!("recon.{n}"))
                    .ok_or_else(|| err(format!("missing tensor recon.{n}")))?;
                s.push(n.clone(), t);
            }
            Some(ReconHead::from_params(&m.encoder, s)?)
        } else {
            None
        };
        let d_in = m.encoder.channels;
        let norm = match (by_name.remove("norm.mean"), by_name.remove("norm.std")) {
            (Some(mean), Some(std)) => {
                if mean.len() != d_in || std.len() != d_in {
                    return Err(err("norm statistics do not match the input channels"));
                }
                Some(NormStats {
                    mean: mean.into_data(),
                    std: std.into_data(),
                })
            }
            (None, None) => None,
            _ => return Err(err("norm.mean and norm.std must appear together")),
        };
        let d = m.encoder.d_model;
        let projection = match (
            by_name.remove("projection.mean"),
            by_name.remove("projection.components"),
        ) {
            (Some(mean), Some(comp)) => {
                if mean.len() != d || comp.shape() != [2, d] {
                    return Err(err("projection basis does not match d_model"));
                }
                Some(Projection2d {
                    mean: mean.into_data(),
                    components: comp.into_data(),
                })
            }
            (None, None) => None,
            _ => return Err(err("projection tensors must appear together")),
        };
        let centroids = by_name.remove("clusters.centroids");
        if let Some(c) = &centroids {
            if c.cols() != d {
                return Err(err("cluster centroids do not match d_model"));
            }
        }
        if let Some(name) = by_name.keys().next() {
            return Err(err(format!("unexpected tensor {name}")));
        }
        Ok(Self {
            encoder,
            behavior_head,
            genotype_head,
            recon,
            norm,
            projection,
            centroids,
            meta: m.meta,
        })
    }
}

fn hash_bytes(manifest: &[u8], blob: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(manifest);
    h.update(blob);
    hex::encode(h.finalize())
}

/// Writes `dir/manifest.json` and `dir/params.bin`; returns the bundle hash.
pub fn save_bundle(dir: &Path, bundle: &ModelBundle) -> Result<String> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let (m, b) = bundle.to_bytes()?;
    atomic_write(&dir.join(BLOB), &b)?;
    atomic_write(&dir.join(MANIFEST), &m)?;
    Ok(hash_bytes(&m, &b))
}

/// Loads a bundle and its hash, validating every shape against the manifest.
pub fn load_bundle(dir: &Path) -> Result<(ModelBundle, String)> {
    let mp = dir.join(MANIFEST);
    let bp = dir.join(BLOB);
    let m = std::fs::read(&mp).map_err(|e| CoreError::io(&mp, e))?;
    let b = std::fs::read(&bp).map_err(|e| CoreError::io(&bp, e))?;
    let bundle = ModelBundle::from_bytes(&m, &b)?;
    Ok((bundle, hash_bytes(&m, &b)))
}
