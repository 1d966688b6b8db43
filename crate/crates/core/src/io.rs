//! Canonical JSON-lines track format, shared by tracker output and ground
//! truth: `{"frame": k, "tracks": [{"label": L, "box": [cx, cy, w, h], "cov_diag": [...]}]}`.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub label: u64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cov_diag: Vec<f64>,
}

impl TrackRecord {
    pub fn bbox(&self) -> Result<BBox> {
        let [cx, cy, w, h] = self.bbox;
        BBox::new(cx, cy, w, h).map_err(|e| Error::Data(format!("track {}: {e}", self.label)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackFrame {
    pub frame: usize,
    pub tracks: Vec<TrackRecord>,
}

pub fn write_frames<W: Write>(out: &mut W, frames: &[TrackFrame]) -> Result<()> {
    for f in frames {
        serde_json::to_writer(&mut *out, f)?;
        out.write_all(b"\n").map_err(|e| Error::io("<tracks>", e))?;
    }
    Ok(())
}

pub fn read_frames<R: BufRead>(reader: R) -> Result<Vec<TrackFrame>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<tracks>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: TrackFrame = serde_json::from_str(&line).map_err(|e| Error::Data(format!("track line {}: {e}", n + 1)))?;
        let mut labels: Vec<u64> = f.tracks.iter().map(|t| t.label).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("frame {}: duplicate labels", f.frame)));
        }
        out.push(f);
    }
    Ok(out)
}

pub fn read_frames_file(path: &Path) -> Result<Vec<TrackFrame>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_frames(std::io::BufReader::new(file))
}

pub fn write_frames_file(path: &Path, frames: &[TrackFrame]) -> Result<()> {
    let mut buf = Vec::new();
    write_frames(&mut buf, frames)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        let frames = vec![
            TrackFrame { frame: 0, tracks: vec![TrackRecord { label: 3, bbox: [1.0, 2.0, 3.0, 4.0], cov_diag: vec![0.5; 6] }] },
            TrackFrame { frame: 1, tracks: vec![] },
        ];
        let mut buf = Vec::new();
        write_frames(&mut buf, &frames).unwrap();
        assert_eq!(read_frames(buf.as_slice()).unwrap(), frames);
    }

    #[test]
    fn truth_lines_without_covariance() {
        let f = read_frames("{\"frame\":2,\"tracks\":[{\"label\":1,\"box\":[5,5,10,10]}]}\n".as_bytes()).unwrap();
        assert!(f[0].tracks[0].cov_diag.is_empty());
    }

    #[test]
    fn duplicate_labels_rejected() {
        let line = "{\"frame\":0,\"tracks\":[{\"label\":1,\"box\":[5,5,1,1]},{\"label\":1,\"box\":[9,9,1,1]}]}";
        assert!(read_frames(line.as_bytes()).is_err());
    }
}
