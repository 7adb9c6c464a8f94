//! Binary tensor files and the JSON schemas for rigs, scenes, detections
//! and BEV objects.
//!
//! Tensor layout: `"BEVT"`, u16 LE version, u8 dtype, u8 ndim, ndim u32 LE
//! dims, then row-major f32 LE values.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{CameraExtrinsics, CameraIntrinsics, CameraModel, CameraRig, Quaternion, Vec3};
use crate::object_bev::{BevObject, Detection2D};
use crate::scene::{Road, Scene, SceneObject};

pub const TENSOR_MAGIC: [u8; 4] = *b"BEVT";
pub const TENSOR_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

fn format_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn encode_tensor(array: &ArrayD<f32>) -> Result<Vec<u8>> {
    let ndim = u8::try_from(array.ndim()).map_err(|_| Error::InvalidArgument("too many dimensions".into()))?;
    let mut out = Vec::with_capacity(8 + 4 * array.ndim() + 4 * array.len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.write_u16::<LittleEndian>(TENSOR_VERSION)?;
    out.write_u8(DTYPE_F32)?;
    out.write_u8(ndim)?;
    for &d in array.shape() {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        out.write_u32::<LittleEndian>(d)?;
    }
    // iter() walks logical row-major order regardless of memory layout
    for &v in array.iter() {
        out.write_f32::<LittleEndian>(v)?;
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<ArrayD<f32>> {
    let mut cur = bytes;
    let mut offset = 0usize;
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| format_error(offset, "truncated magic"))?;
    if magic != TENSOR_MAGIC {
        return Err(format_error(offset, format!("bad magic {magic:?}")));
    }
    offset += 4;
    let version = cur.read_u16::<LittleEndian>().map_err(|_| format_error(offset, "truncated version"))?;
    if version != TENSOR_VERSION {
        return Err(format_error(offset, format!("unsupported version {version}")));
    }
    offset += 2;
    let dtype = cur.read_u8().map_err(|_| format_error(offset, "truncated dtype"))?;
    if dtype != DTYPE_F32 {
        return Err(format_error(offset, format!("unsupported dtype {dtype}")));
    }
    offset += 1;
    let ndim = cur.read_u8().map_err(|_| format_error(offset, "truncated ndim"))? as usize;
    offset += 1;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = cur.read_u32::<LittleEndian>().map_err(|_| format_error(offset, "truncated dims"))?;
        dims.push(d as usize);
        offset += 4;
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_error(offset, "element count overflows"))?;
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| format_error(offset, "payload size overflows"))?;
    if cur.len() < expected {
        return Err(format_error(
            offset + cur.len(),
            format!("truncated payload: expected {expected} bytes, found {}", cur.len()),
        ));
    }
    if cur.len() > expected {
        return Err(format_error(offset + expected, "trailing bytes after payload"));
    }
    let mut values = vec![0f32; count];
    cur.read_f32_into::<LittleEndian>(&mut values)?;
    ArrayD::from_shape_vec(IxDyn(&dims), values).map_err(|e| format_error(offset, e.to_string()))
}

pub fn write_tensor(path: impl AsRef<Path>, array: &ArrayD<f32>) -> Result<()> {
    let bytes = encode_tensor(array)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<ArrayD<f32>> {
    decode_tensor(&fs::read(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraJson {
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// `[w, x, y, z]`
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigJson {
    pub cameras: Vec<CameraJson>,
}

impl From<&CameraRig> for RigJson {
    fn from(rig: &CameraRig) -> Self {
        let cameras = rig
            .cameras()
            .iter()
            .map(|c| {
                let k = &c.intrinsics;
                let t = c.extrinsics.translation();
                CameraJson {
                    name: c.name.clone(),
                    fx: k.fx,
                    fy: k.fy,
                    cx: k.cx,
                    cy: k.cy,
                    width: k.width,
                    height: k.height,
                    rotation: c.extrinsics.rotation().to_array(),
                    translation: [t.x, t.y, t.z],
                }
            })
            .collect();
        RigJson { cameras }
    }
}

impl RigJson {
    pub fn to_rig(&self) -> Result<CameraRig> {
        let cameras = self
            .cameras
            .iter()
            .map(|c| {
                let k = CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height)?;
                let [w, x, y, z] = c.rotation;
                let ext = CameraExtrinsics::new(Quaternion::new(w, x, y, z)?, Vec3::from(c.translation))?;
                CameraModel::new(&c.name, k, ext)
            })
            .collect::<Result<Vec<_>>>()?;
        CameraRig::new(cameras)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneJson {
    pub seed: u64,
    pub objects: Vec<SceneObject>,
    pub road: Road,
    pub rig: RigJson,
}

impl From<&Scene> for SceneJson {
    fn from(s: &Scene) -> Self {
        SceneJson {
            seed: s.seed,
            objects: s.objects.clone(),
            road: s.road,
            rig: RigJson::from(&s.rig),
        }
    }
}

impl SceneJson {
    pub fn to_scene(&self) -> Result<Scene> {
        for o in &self.objects {
            if !o.dims.iter().all(|&d| d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!("object dims must be positive: {:?}", o.dims)));
            }
        }
        Ok(Scene {
            seed: self.seed,
            objects: self.objects.clone(),
            road: self.road,
            rig: self.rig.to_rig()?,
        })
    }
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn rig_to_json(rig: &CameraRig) -> Result<String> {
    to_json(&RigJson::from(rig))
}

pub fn rig_from_json(text: &str) -> Result<CameraRig> {
    serde_json::from_str::<RigJson>(text)?.to_rig()
}

pub fn scene_to_json(scene: &Scene) -> Result<String> {
    to_json(&SceneJson::from(scene))
}

pub fn scene_from_json(text: &str) -> Result<Scene> {
    serde_json::from_str::<SceneJson>(text)?.to_scene()
}

pub fn detections_to_json(dets: &[Detection2D]) -> Result<String> {
    to_json(dets)
}

pub fn detections_from_json(text: &str) -> Result<Vec<Detection2D>> {
    Ok(serde_json::from_str(text)?)
}

pub fn objects_to_json(objs: &[BevObject]) -> Result<String> {
    to_json(objs)
}

pub fn objects_from_json(text: &str) -> Result<Vec<BevObject>> {
    let objs: Vec<BevObject> = serde_json::from_str(text)?;
    for o in &objs {
        o.validate()?;
    }
    Ok(objs)
}
