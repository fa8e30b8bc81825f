//! Self-contained render packages: OBJ/MTL mesh, feature planes as RGBA
//! PNGs and a JSON manifest with everything the shader needs.
//!
//! Layout of a package directory:
//!
//! ```text
//! mesh.obj  mesh.mtl  feat_0.png … feat_{P-1}.png  manifest.json
//! ```

pub mod quantize;

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use quantize::{plane_count, quantize_texture, ChannelRange, QuantizedTexture};

use crate::appearance::{AppearanceModel, ViewEncoding};
use crate::diffmath::{Activation, MlpSpec};
use crate::error::{Error, Result};
use crate::raster::{mtl_string, obj_string, parse_obj, TriangleMesh, UvAtlas};

pub const FORMAT_VERSION: &str = "1";
pub const MANIFEST: &str = "manifest.json";
pub const MESH_OBJ: &str = "mesh.obj";
pub const MESH_MTL: &str = "mesh.mtl";
const MATERIAL: &str = "surface";

pub fn plane_name(p: usize) -> String {
    format!("feat_{p}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingManifest {
    pub alpha: f64,
    /// Channel centres.
    pub t: Vec<f64>,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerManifest {
    /// Row-major `[out][in]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShaderManifest {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub layers: Vec<LayerManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    /// Texture channel count K.
    pub channels: usize,
    /// Side of the square texture and UV atlas, in texels.
    pub resolution: usize,
    pub planes: Vec<String>,
    /// Per-channel dequantization ranges, `[min, max]`.
    pub quantization: Vec<[f64; 2]>,
    pub encoding: EncodingManifest,
    pub shader: ShaderManifest,
    pub background: [f64; 3],
    pub mesh: String,
    pub material: String,
    /// Packing cell of the atlas, in texels.
    pub atlas_cell: f64,
}

/// Bytes written per file, in write order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeReport {
    pub components: Vec<(String, u64)>,
}

impl SizeReport {
    pub fn total(&self) -> u64 {
        self.components.iter().map(|(_, b)| b).sum()
    }
}

impl fmt::Display for SizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, bytes) in &self.components {
            writeln!(f, "{name:<16} {bytes:>12} B")?;
        }
        let total = self.total();
        write!(f, "{:<16} {total:>12} B ({:.3} MB)", "total", total as f64 / 1e6)
    }
}

/// An imported package, ready for `render_view`.
#[derive(Debug, Clone)]
pub struct RenderPackage {
    pub manifest: Manifest,
    pub mesh: TriangleMesh,
    pub atlas: UvAtlas,
    pub model: AppearanceModel,
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], report: &mut SizeReport) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    let len = fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
    report.components.push((name.to_string(), len));
    Ok(())
}

fn encode_png(bytes: &[u8], resolution: usize, name: &str) -> Result<Vec<u8>> {
    let img = image::RgbaImage::from_raw(resolution as u32, resolution as u32, bytes.to_vec())
        .ok_or_else(|| Error::validation(format!("{name}: plane size does not match the resolution")))?;
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::format(name, e.to_string()))?;
    Ok(out.into_inner())
}

/// Manifest describing `model` with the given quantization.
pub fn build_manifest(atlas: &UvAtlas, model: &AppearanceModel, q: &QuantizedTexture) -> Manifest {
    let spec = &model.shader.spec;
    Manifest {
        version: FORMAT_VERSION.to_string(),
        channels: model.channels(),
        resolution: model.resolution(),
        planes: (0..q.planes.len()).map(plane_name).collect(),
        quantization: q.ranges.iter().map(|r| [r.min, r.max]).collect(),
        encoding: EncodingManifest {
            alpha: model.encoding.alpha,
            t: model.encoding.centers.clone(),
            enabled: model.encoding.enabled,
        },
        shader: ShaderManifest {
            widths: spec.widths.clone(),
            activations: spec.activations.clone(),
            layers: model
                .shader_layers()
                .into_iter()
                .map(|(weights, biases)| LayerManifest { weights, biases })
                .collect(),
        },
        background: model.background,
        mesh: MESH_OBJ.to_string(),
        material: MESH_MTL.to_string(),
        atlas_cell: atlas.cell,
    }
}

/// Write a package into `dir` (created if missing). Identical inputs give
/// byte-identical files.
pub fn export_package(mesh: &TriangleMesh, atlas: &UvAtlas, model: &AppearanceModel, dir: &Path) -> Result<SizeReport> {
    mesh.validate()?;
    atlas.validate_for(mesh)?;
    if atlas.resolution != model.resolution() {
        return Err(Error::validation(format!(
            "atlas is {}² but the texture is {}²",
            atlas.resolution,
            model.resolution()
        )));
    }
    let q = quantize_texture(model.texels(), model.resolution(), model.channels())?;
    let manifest = build_manifest(atlas, model, &q);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut report = SizeReport { components: Vec::new() };
    let obj = obj_string(mesh, Some(atlas), Some((MESH_MTL, MATERIAL)));
    write_file(dir, MESH_OBJ, obj.as_bytes(), &mut report)?;
    write_file(dir, MESH_MTL, mtl_string(MATERIAL, &manifest.planes).as_bytes(), &mut report)?;
    for (p, plane) in q.planes.iter().enumerate() {
        let name = plane_name(p);
        write_file(dir, &name, &encode_png(plane, q.resolution, &name)?, &mut report)?;
    }
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(dir, MANIFEST, json.as_bytes(), &mut report)?;
    Ok(report)
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| Error::io(&path, e))
}

/// File names inside the package must not escape its directory.
fn check_local(name: &str) -> Result<()> {
    let p = Path::new(name);
    if p.components().count() != 1 || p.is_absolute() || name == ".." || name == "." {
        return Err(Error::format(MANIFEST, format!("{name:?} is not a file inside the package")));
    }
    Ok(())
}

fn parse_manifest(bytes: &[u8]) -> Result<Manifest> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| Error::format(MANIFEST, e.to_string()))?;
    match value.get("version") {
        Some(serde_json::Value::String(v)) if v == FORMAT_VERSION => {}
        Some(other) => {
            return Err(Error::Version {
                component: MANIFEST.to_string(),
                found: other.as_str().map(str::to_string).unwrap_or_else(|| other.to_string()),
                expected: FORMAT_VERSION.to_string(),
            })
        }
        None => return Err(Error::format(MANIFEST, "missing format version")),
    }
    serde_json::from_value(value).map_err(|e| Error::format(MANIFEST, e.to_string()))
}

fn check_manifest(m: &Manifest) -> Result<()> {
    let bad = |msg: String| Err(Error::format(MANIFEST, msg));
    if m.channels == 0 || m.resolution == 0 {
        return bad("channel count and resolution must be positive".into());
    }
    if m.planes.len() != plane_count(m.channels) {
        return bad(format!(
            "{} channels need {} planes, found {}",
            m.channels,
            plane_count(m.channels),
            m.planes.len()
        ));
    }
    if m.quantization.len() != m.channels {
        return bad(format!("{} quantization ranges for {} channels", m.quantization.len(), m.channels));
    }
    if m.quantization.iter().any(|[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return bad("quantization ranges must be finite with min ≤ max".into());
    }
    if m.encoding.t.len() != m.channels {
        return bad(format!("{} encoding centres for {} channels", m.encoding.t.len(), m.channels));
    }
    if m.shader.widths.first() != Some(&m.channels) {
        return bad("shader input width differs from the channel count".into());
    }
    if m.shader.layers.len() + 1 != m.shader.widths.len() {
        return bad("shader layer count does not match its widths".into());
    }
    for (l, (layer, w)) in m.shader.layers.iter().zip(m.shader.widths.windows(2)).enumerate() {
        if layer.weights.len() != w[0] * w[1] || layer.biases.len() != w[1] {
            return bad(format!("shader layer {l} has the wrong number of parameters"));
        }
    }
    for name in m.planes.iter().chain([&m.mesh, &m.material]) {
        check_local(name)?;
    }
    Ok(())
}

fn decode_plane(bytes: &[u8], name: &str, resolution: usize) -> Result<Vec<u8>> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(name, e.to_string()))?;
    let image::DynamicImage::ImageRgba8(rgba) = img else {
        return Err(Error::format(name, "feature planes must be 8-bit RGBA"));
    };
    if rgba.width() as usize != resolution || rgba.height() as usize != resolution {
        return Err(Error::format(
            name,
            format!("plane is {}×{}, manifest says {resolution}²", rgba.width(), rgba.height()),
        ));
    }
    Ok(rgba.into_raw())
}

/// Load a package written by [`export_package`]. Only files inside `dir` are read.
pub fn import_package(dir: &Path) -> Result<RenderPackage> {
    let manifest = parse_manifest(&read(dir, MANIFEST)?)?;
    check_manifest(&manifest)?;

    let planes = manifest
        .planes
        .iter()
        .map(|name| decode_plane(&read(dir, name)?, name, manifest.resolution))
        .collect::<Result<Vec<_>>>()?;
    let q = QuantizedTexture {
        resolution: manifest.resolution,
        channels: manifest.channels,
        ranges: manifest.quantization.iter().map(|&[min, max]| ChannelRange { min, max }).collect(),
        planes,
    };

    let obj_text = String::from_utf8(read(dir, &manifest.mesh)?).map_err(|_| Error::format(&manifest.mesh, "not UTF-8 text"))?;
    let obj = parse_obj(&obj_text).map_err(|e| match e {
        Error::Format { message, .. } => Error::format(&manifest.mesh, message),
        other => other,
    })?;
    let uvs = obj
        .face_uvs
        .ok_or_else(|| Error::format(&manifest.mesh, "faces lack texture coordinates"))?;
    let mesh = obj.mesh;
    mesh.validate().map_err(|e| Error::format(&manifest.mesh, e.to_string()))?;
    let atlas = UvAtlas {
        resolution: manifest.resolution,
        chart: (0..uvs.len() as u32).collect(),
        uvs,
        cell: manifest.atlas_cell,
    };
    atlas
        .validate_for(&mesh)
        .map_err(|e| Error::format(&manifest.mesh, e.to_string()))?;

    let encoding = ViewEncoding {
        alpha: manifest.encoding.alpha,
        centers: manifest.encoding.t.clone(),
        enabled: manifest.encoding.enabled,
    };
    let spec = MlpSpec::new(manifest.shader.widths.clone(), manifest.shader.activations.clone())
        .map_err(|e| Error::format(MANIFEST, e.to_string()))?;
    let layers = manifest
        .shader
        .layers
        .iter()
        .map(|l| (l.weights.clone(), l.biases.clone()))
        .collect();
    let model = AppearanceModel::from_parts(manifest.resolution, q.dequantize(), encoding, spec, layers, manifest.background)
        .map_err(|e| Error::format(MANIFEST, e.to_string()))?;
    Ok(RenderPackage {
        manifest,
        mesh,
        atlas,
        model,
    })
}
