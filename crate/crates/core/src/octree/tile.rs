//! Node tile encoding: 18 little-endian bytes per point.
//!
//! `[x y z: f32 relative to the node min][r g b: u8][intensity: u16][classification: u8]`

use crate::point::PointRecord;

pub const RECORD_SIZE: usize = 18;

#[inline]
pub fn encode_into(out: &mut Vec<u8>, p: &PointRecord, origin: [f64; 3]) {
    out.extend_from_slice(&((p.x - origin[0]) as f32).to_le_bytes());
    out.extend_from_slice(&((p.y - origin[1]) as f32).to_le_bytes());
    out.extend_from_slice(&((p.z - origin[2]) as f32).to_le_bytes());
    out.extend_from_slice(&[p.r, p.g, p.b]);
    out.extend_from_slice(&p.intensity.to_le_bytes());
    out.push(p.classification);
}

#[inline]
pub fn decode(rec: &[u8], origin: [f64; 3]) -> PointRecord {
    let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
    PointRecord {
        x: origin[0] + f(0),
        y: origin[1] + f(4),
        z: origin[2] + f(8),
        r: rec[12],
        g: rec[13],
        b: rec[14],
        intensity: u16::from_le_bytes([rec[15], rec[16]]),
        classification: rec[17],
    }
}

/// Round-trips a point through the tile encoding.
pub fn quantize(p: &PointRecord, origin: [f64; 3]) -> PointRecord {
    let mut buf = Vec::with_capacity(RECORD_SIZE);
    encode_into(&mut buf, p, origin);
    decode(&buf, origin)
}

pub fn decode_all(bytes: &[u8], origin: [f64; 3]) -> Vec<PointRecord> {
    bytes
        .chunks_exact(RECORD_SIZE)
        .map(|r| decode(r, origin))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let mut p = PointRecord::new(1.5, 2.0, -0.25).with_color(1, 2, 3);
        p.intensity = 0x0102;
        p.classification = 9;
        let mut out = Vec::new();
        encode_into(&mut out, &p, [1.0, 0.0, -1.0]);
        assert_eq!(out.len(), RECORD_SIZE);
        assert_eq!(&out[0..4], &0.5f32.to_le_bytes());
        assert_eq!(&out[12..18], &[1, 2, 3, 0x02, 0x01, 9]);
        assert_eq!(decode(&out, [1.0, 0.0, -1.0]), p);
    }
}
