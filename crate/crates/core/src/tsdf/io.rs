//! Depth frame files: the 8-byte magic `KSDEPTH1`, a little-endian `u32`
//! header length, a JSON header, then row-major little-endian `f32` depths.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, DepthFrame};
use crate::pose::Pose;

pub const DEPTH_MAGIC: &[u8; 8] = b"KSDEPTH1";

#[derive(Debug, thiserror::Error)]
pub enum FrameIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("not a depth frame file")]
    Magic,
    #[error("expected {expected} depth values, found {found}")]
    Truncated { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseDoc {
    pub xyz: [f64; 3],
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthHeader {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub pose: PoseDoc,
}

pub fn write_depth_frame<W: Write>(mut w: W, frame: &DepthFrame) -> Result<(), FrameIoError> {
    let c = &frame.intrinsics;
    let (xyz, rpy) = frame.pose.to_xyz_rpy();
    let header = serde_json::to_vec(&DepthHeader {
        width: c.width,
        height: c.height,
        fx: c.fx,
        fy: c.fy,
        cx: c.cx,
        cy: c.cy,
        pose: PoseDoc { xyz, rpy },
    })?;
    w.write_all(DEPTH_MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(frame.depth.len() * 4);
    for d in &frame.depth {
        body.extend_from_slice(&d.to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

pub fn read_depth_frame<R: Read>(mut r: R) -> Result<DepthFrame, FrameIoError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DEPTH_MAGIC {
        return Err(FrameIoError::Magic);
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let h: DepthHeader = serde_json::from_slice(&header)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let expected = h.width * h.height;
    if body.len() != expected * 4 {
        return Err(FrameIoError::Truncated {
            expected,
            found: body.len() / 4,
        });
    }
    let depth = body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Ok(DepthFrame {
        intrinsics: CameraIntrinsics {
            width: h.width,
            height: h.height,
            fx: h.fx,
            fy: h.fy,
            cx: h.cx,
            cy: h.cy,
        },
        pose: Pose::from_xyz_rpy(h.pose.xyz, h.pose.rpy),
        depth,
    })
}
