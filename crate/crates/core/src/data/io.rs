//! Persistence for synthetic datasets.
//!
//! Classification CSV:
//!
//! ```text
//! # classes=<K>
//! label,x0,x1,…,x<D−1>
//! <label>,<f64>,…
//! ```
//!
//! Reals are written in shortest round-trip form, so reading back is exact.
//!
//! Scene container (little-endian):
//!
//! ```text
//! magic "TCPSCN01"
//! count u32, height u32, width u32, channels u32, classes u32
//! count × ( height·width·channels f64 (pixel-major), height·width u32 labels )
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::{GridScene, LabeledDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const SCENE_MAGIC: &[u8; 8] = b"TCPSCN01";

pub fn dataset_to_csv<T: Scalar>(ds: &LabeledDataset<T>) -> String {
    let mut out = format!("# classes={}\nlabel", ds.classes());
    for j in 0..ds.width() {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for (row, label) in ds.inputs().rows().into_iter().zip(ds.labels()) {
        let _ = write!(out, "{label}");
        for v in row {
            let _ = write!(out, ",{}", v.to_f64_lossy());
        }
        out.push('\n');
    }
    out
}

pub fn dataset_from_csv<T: Scalar>(text: &str) -> Result<LabeledDataset<T>> {
    let bad = |line: usize, reason: String| Error::Format {
        what: "dataset csv",
        reason: format!("line {line}: {reason}"),
    };
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let classes: usize = first
        .strip_prefix("# classes=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| bad(1, "expected `# classes=<K>`".into()))?;
    let (_, header) = lines
        .next()
        .ok_or_else(|| bad(2, "missing header".into()))?;
    let width = header.split(',').count() - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(i + 1, "bad label".into()))?;
        let row: Vec<f64> = fields
            .map(|s| s.parse::<f64>().map_err(|e| bad(i + 1, e.to_string())))
            .collect::<Result<_>>()?;
        if row.len() != width {
            return Err(bad(
                i + 1,
                format!("{} values, header has {width}", row.len()),
            ));
        }
        labels.push(label);
        values.extend(row.into_iter().map(T::lit));
    }
    let inputs = Array2::from_shape_vec((labels.len(), width), values).expect("rows checked");
    LabeledDataset::new(inputs, labels, classes)
}

pub fn scenes_to_bytes<T: Scalar>(scenes: &[GridScene<T>]) -> Result<Vec<u8>> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::invalid("scenes", "cannot persist an empty scene list"))?;
    let dims = (first.height, first.width, first.channels(), first.classes);
    let mut out = Vec::new();
    out.extend_from_slice(SCENE_MAGIC);
    for v in [scenes.len(), dims.0, dims.1, dims.2, dims.3] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for s in scenes {
        if (s.height, s.width, s.channels(), s.classes) != dims {
            return Err(Error::shape("scenes", "all scenes must share dimensions"));
        }
        for v in s.features.iter() {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        for &l in &s.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn scenes_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Vec<GridScene<T>>> {
    let bad = |reason: &str| Error::Format {
        what: "scene container",
        reason: reason.to_string(),
    };
    if bytes.len() < 28 || &bytes[..8] != SCENE_MAGIC {
        return Err(bad("missing magic or header"));
    }
    let u32_at =
        |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let (count, h, w, ch, k) = (u32_at(8), u32_at(12), u32_at(16), u32_at(20), u32_at(24));
    let per_scene = h * w * ch * 8 + h * w * 4;
    if bytes.len() != 28 + count * per_scene {
        return Err(bad("payload length does not match header"));
    }
    let mut scenes = Vec::with_capacity(count);
    let mut pos = 28;
    for _ in 0..count {
        let feats: Vec<T> = bytes[pos..pos + h * w * ch * 8]
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        pos += h * w * ch * 8;
        let labels: Vec<usize> = bytes[pos..pos + h * w * 4]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        pos += h * w * 4;
        let features = Array2::from_shape_vec((h * w, ch), feats).expect("length checked");
        scenes.push(GridScene::new(h, w, k, features, labels)?);
    }
    Ok(scenes)
}

pub fn save_scenes<T: Scalar>(path: &Path, scenes: &[GridScene<T>]) -> Result<()> {
    std::fs::write(path, scenes_to_bytes(scenes)?).map_err(|e| Error::io(path, e))
}

pub fn load_scenes<T: Scalar>(path: &Path) -> Result<Vec<GridScene<T>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    scenes_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{
        circle_centers, gen_blobs, gen_grid_scenes, BlobSpec, DomainShift, SceneStyle,
    };

    #[test]
    fn csv_round_trip_is_exact() {
        let ds: LabeledDataset<f64> = gen_blobs(&BlobSpec {
            per_class: 5,
            centers: circle_centers(3, 1.5, 3),
            sigma: 0.3,
            seed: 1,
        })
        .unwrap();
        let text = dataset_to_csv(&ds);
        let back: LabeledDataset<f64> = dataset_from_csv(&text).unwrap();
        assert_eq!(back.inputs(), ds.inputs());
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.classes(), 3);
        assert!(dataset_from_csv::<f64>("label,x0\n0,1\n").is_err());
    }

    #[test]
    fn scene_round_trip_is_exact() {
        let scenes: Vec<GridScene<f64>> = gen_grid_scenes(
            2,
            8,
            9,
            &SceneStyle::default(),
            &DomainShift::with_theta(0.5),
            3,
        )
        .unwrap();
        let bytes = scenes_to_bytes(&scenes).unwrap();
        assert_eq!(scenes_from_bytes::<f64>(&bytes).unwrap(), scenes);
        assert!(scenes_from_bytes::<f64>(&bytes[..bytes.len() - 1]).is_err());
    }
}
