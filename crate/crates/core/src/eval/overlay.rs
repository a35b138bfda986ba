//! Agreement overlays: true positives yellow, missed cell pixels green, false
//! positives red, everything else the phase image in grayscale.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::metrics::Confusion;

pub const TP: [u8; 3] = [255, 255, 0];
pub const FN: [u8; 3] = [0, 255, 0];
pub const FP: [u8; 3] = [255, 0, 0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

/// `background` is `[H,W]` or `[1,H,W]` with values in `[0,1]` (clamped).
pub fn overlay(pred: &Tensor<u8>, gt: &Tensor<u8>, background: &Tensor<f32>) -> Result<RgbImage> {
    let s = gt.shape();
    if s.len() != 2 || pred.shape() != s || background.len() != gt.len() {
        return Err(Error::data(format!(
            "overlay: prediction {:?}, truth {:?} and background {:?} disagree",
            pred.shape(),
            s,
            background.shape()
        )));
    }
    let pixels = pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(background.data())
        .map(|((&p, &g), &b)| match (p != 0, g != 0) {
            (true, true) => TP,
            (false, true) => FN,
            (true, false) => FP,
            (false, false) => {
                let v = (b.clamp(0.0, 1.0) * 255.0).round() as u8;
                [v, v, v]
            }
        })
        .collect();
    Ok(RgbImage {
        width: s[1],
        height: s[0],
        pixels,
    })
}

/// Counts of TP, FN and FP colored pixels.
pub fn color_counts(img: &RgbImage) -> (usize, usize, usize) {
    let count = |c: [u8; 3]| img.pixels.iter().filter(|&&p| p == c).count();
    (count(TP), count(FN), count(FP))
}

/// Sidecar text for one overlay.
pub fn annotation(id: &str, c: &Confusion) -> String {
    format!("id = {id}\ndice = {}\niou = {}\n", c.dice(), c.iou())
}

impl RgbImage {
    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::data("not a binary PPM written by this tool");
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
        }
        pos += 1;
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
        if fields[0] != "P6" || num(fields[3])? != 255 {
            return Err(bad());
        }
        let (width, height) = (num(fields[1])?, num(fields[2])?);
        let body = bytes.get(pos..).ok_or_else(bad)?;
        if body.len() != width * height * 3 {
            return Err(bad());
        }
        Ok(Self {
            width,
            height,
            pixels: body.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }
}
