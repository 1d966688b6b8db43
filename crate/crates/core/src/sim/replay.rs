//! JSON-lines replay logs of detector outputs.
//!
//! Box mode: `{"frame": k, "detections": [{"box": [cx, cy, w, h], "conf": c}]}`
//! Grid mode: `{"frame": k, "p_map": "<base64 of row-major little-endian f32>"}`

use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ProbabilityMap, RawDetection};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    conf: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ReplayLine {
    Boxes { frame: usize, detections: Vec<DetectionRecord> },
    Grid { frame: usize, p_map: String },
}

/// One frame of a replay log.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplayFrame {
    Boxes { frame: usize, detections: Vec<RawDetection> },
    Grid { frame: usize, p_map: Vec<f32> },
}

impl ReplayFrame {
    pub fn frame(&self) -> usize {
        match self {
            ReplayFrame::Boxes { frame, .. } | ReplayFrame::Grid { frame, .. } => *frame,
        }
    }
}

pub fn encode_p_map(p: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(p.len() * 4);
    for v in p {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_p_map(text: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD.decode(text).map_err(|e| Error::Data(format!("p_map base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Data("p_map byte length is not a multiple of 4".into()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn write_box_frame<W: Write>(out: &mut W, frame: usize, detections: &[RawDetection]) -> Result<()> {
    let line = ReplayLine::Boxes {
        frame,
        detections: detections.iter().map(|d| DetectionRecord { bbox: d.bbox.to_array(), conf: d.confidence }).collect(),
    };
    serde_json::to_writer(&mut *out, &line)?;
    out.write_all(b"\n").map_err(|e| Error::io("<replay>", e))
}

pub fn write_grid_frame<W: Write>(out: &mut W, frame: usize, map: &ProbabilityMap) -> Result<()> {
    let line = ReplayLine::Grid { frame, p_map: encode_p_map(&map.p) };
    serde_json::to_writer(&mut *out, &line)?;
    out.write_all(b"\n").map_err(|e| Error::io("<replay>", e))
}

pub fn parse_line(line: &str) -> Result<ReplayFrame> {
    let rec: ReplayLine = serde_json::from_str(line).map_err(|e| Error::Data(format!("replay line: {e}")))?;
    Ok(match rec {
        ReplayLine::Boxes { frame, detections } => {
            let mut out = Vec::with_capacity(detections.len());
            for d in detections {
                let [cx, cy, w, h] = d.bbox;
                let bbox = BBox::new(cx, cy, w, h).map_err(|e| Error::Data(format!("frame {frame}: {e}")))?;
                if !(0.0..=1.0).contains(&d.conf) {
                    return Err(Error::Data(format!("frame {frame}: confidence {} outside [0, 1]", d.conf)));
                }
                out.push(RawDetection { bbox, confidence: d.conf });
            }
            ReplayFrame::Boxes { frame, detections: out }
        }
        ReplayLine::Grid { frame, p_map } => ReplayFrame::Grid { frame, p_map: decode_p_map(&p_map)? },
    })
}

/// Reads a whole replay log. Blank lines are skipped.
pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<ReplayFrame>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<replay>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line).map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_lines_round_trip() {
        let dets = vec![RawDetection { bbox: BBox::new(1.5, 2.0, 3.0, 4.0).unwrap(), confidence: 0.71 }];
        let mut buf = Vec::new();
        write_box_frame(&mut buf, 4, &dets).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "{\"frame\":4,\"detections\":[{\"box\":[1.5,2.0,3.0,4.0],\"conf\":0.71}]}\n");
        let back = read_log(text.as_bytes()).unwrap();
        assert_eq!(back, vec![ReplayFrame::Boxes { frame: 4, detections: dets }]);
    }

    #[test]
    fn grid_lines_round_trip() {
        let map = ProbabilityMap { width: 3, height: 1, cell_size: 4.0, p: vec![0.05, 0.6, 1.0] };
        let mut buf = Vec::new();
        write_grid_frame(&mut buf, 0, &map).unwrap();
        let back = read_log(buf.as_slice()).unwrap();
        assert_eq!(back, vec![ReplayFrame::Grid { frame: 0, p_map: map.p.clone() }]);
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(parse_line("{\"frame\": 1}").is_err());
        assert!(parse_line("{\"frame\": 1, \"detections\": [{\"box\": [0,0,0,1], \"conf\": 0.5}]}").is_err());
        assert!(parse_line("{\"frame\": 1, \"detections\": [{\"box\": [0,0,1,1], \"conf\": 1.5}]}").is_err());
        assert!(parse_line("{\"frame\": 1, \"p_map\": \"AAA\"}").is_err());
    }
}
