//! Per-pixel color-space encodings for 3-channel inputs.
//!
//! Inputs are rows of interleaved `(r, g, b)` triples in `[0, 1]`. Each
//! encoding's raw channels are mapped back into `[0, 1]` with a fixed affine
//! range that depends only on the encoding, never on the data.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// BT.601-derived YIQ matrix.
pub const YIQ_FROM_RGB: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [0.59590059, -0.27455667, -0.32134392],
    [0.21153661, -0.52273617, 0.31119955],
];

/// BT.601-derived YUV matrix.
pub const YUV_FROM_RGB: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.14714119, -0.28886916, 0.43601035],
    [0.61497538, -0.51496512, -0.10001026],
];

/// Ruifrok-Johnston hematoxylin / eosin / DAB stain vectors (rows).
pub const RGB_FROM_HED: [[f64; 3]; 3] = [[0.65, 0.70, 0.29], [0.07, 0.99, 0.11], [0.27, 0.57, 0.78]];

const HED_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSpace {
    Rgb,
    Yiq,
    Yuv,
    Hsv,
    Hed,
}

impl ColorSpace {
    pub const ALL: [ColorSpace; 5] = [
        ColorSpace::Rgb,
        ColorSpace::Yiq,
        ColorSpace::Yuv,
        ColorSpace::Hsv,
        ColorSpace::Hed,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ColorSpace::Rgb => "rgb",
            ColorSpace::Yiq => "yiq",
            ColorSpace::Yuv => "yuv",
            ColorSpace::Hsv => "hsv",
            ColorSpace::Hed => "hed",
        }
    }

    /// Raw encoding of one pixel, before rescaling.
    pub fn convert(&self, rgb: [f64; 3]) -> [f64; 3] {
        match self {
            ColorSpace::Rgb => rgb,
            ColorSpace::Yiq => mat_vec(&YIQ_FROM_RGB, rgb),
            ColorSpace::Yuv => mat_vec(&YUV_FROM_RGB, rgb),
            ColorSpace::Hsv => rgb_to_hsv(rgb),
            ColorSpace::Hed => rgb_to_hed(rgb),
        }
    }

    /// Theoretical `(lo, hi)` of each raw channel over the RGB unit cube.
    pub fn channel_ranges(&self) -> [(f64, f64); 3] {
        match self {
            ColorSpace::Rgb | ColorSpace::Hsv => [(0.0, 1.0); 3],
            ColorSpace::Yiq => linear_ranges(&YIQ_FROM_RGB),
            ColorSpace::Yuv => linear_ranges(&YUV_FROM_RGB),
            ColorSpace::Hed => {
                // stains_c = sum_i od_i H[i][c] with od in [0,1]^3, clamped at 0.
                let h = invert3(&RGB_FROM_HED);
                let mut out = [(0.0, 0.0); 3];
                for (c, r) in out.iter_mut().enumerate() {
                    r.1 = (0..3).map(|i| h[i][c].max(0.0)).sum();
                }
                out
            }
        }
    }

    /// Encoding of one pixel rescaled into `[0, 1]`.
    pub fn encode(&self, rgb: [f64; 3]) -> [f64; 3] {
        let raw = self.convert(rgb);
        let ranges = self.channel_ranges();
        let mut out = [0.0; 3];
        for c in 0..3 {
            let (lo, hi) = ranges[c];
            out[c] = ((raw[c] - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
        out
    }
}

impl fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ColorSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ColorSpace::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown color space '{s}' (expected rgb, yiq, yuv, hsv or hed)")))
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn linear_ranges(m: &[[f64; 3]; 3]) -> [(f64, f64); 3] {
    [0, 1, 2].map(|r| {
        let lo = m[r].iter().map(|v| v.min(0.0)).sum();
        let hi = m[r].iter().map(|v| v.max(0.0)).sum();
        (lo, hi)
    })
}

/// Inverse of a 3x3 matrix via the adjugate.
pub fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r: usize, k: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (k1, k2) = ((k + 1) % 3, (k + 2) % 3);
        m[r1][k1] * m[r2][k2] - m[r1][k2] * m[r2][k1]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = c(j, i) / det;
        }
    }
    inv
}

/// Hexcone HSV with hue scaled to `[0, 1)`.
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    [(h / 6.0).rem_euclid(1.0), s, max]
}

/// Stain densities by Beer-Lambert optical density and color deconvolution.
pub fn rgb_to_hed(rgb: [f64; 3]) -> [f64; 3] {
    let h = invert3(&RGB_FROM_HED);
    let od = rgb.map(|v| v.max(HED_FLOOR).ln() / HED_FLOOR.ln());
    [0, 1, 2].map(|c| (0..3).map(|i| od[i] * h[i][c]).sum::<f64>().max(0.0))
}

/// Re-encodes every pixel of an interleaved-RGB dataset.
pub fn color_space_task(ds: &LabeledDataset, space: ColorSpace) -> Result<LabeledDataset> {
    if ds.dim() % 3 != 0 {
        return Err(Error::shape("color_space_task input width (multiple of 3)", "3k", ds.dim()));
    }
    if !ds.in_unit_range() {
        return Err(Error::invalid("color_space_task expects inputs in [0,1]"));
    }
    let provenance = format!("{}|color_space({})", ds.provenance, space.name());
    if space == ColorSpace::Rgb {
        return Ok(LabeledDataset {
            provenance,
            ..ds.clone()
        });
    }
    let data: Vec<f32> = ds
        .inputs
        .data()
        .chunks_exact(3)
        .flat_map(|p| {
            space
                .encode([f64::from(p[0]), f64::from(p[1]), f64::from(p[2])])
                .map(|v| v as f32)
        })
        .collect();
    Ok(LabeledDataset {
        inputs: Tensor::matrix(ds.len(), ds.dim(), data)?,
        labels: ds.labels.clone(),
        class_count: ds.class_count,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values produced by scikit-image's rgb2yiq / rgb2yuv /
    // rgb2hsv / rgb2hed on the same pixels.
    const PIXELS: [[f64; 3]; 4] = [[0.2, 0.5, 0.9], [1.0, 1.0, 1.0], [0.7, 0.1, 0.3], [0.0, 0.0, 0.0]];
    const YIQ: [[f64; 3]; 4] = [
        [0.4559, -0.307307745, 0.061018832],
        [1.0, 0.0, 0.0],
        [0.3022, 0.29327157, 0.189161875],
        [0.0, 0.0, 0.0],
    ];
    const YUV: [[f64; 3]; 4] = [
        [0.4559, 0.218546497, -0.224496718],
        [1.0, 0.0, 0.0],
        [0.3022, -0.001082644, 0.348983176],
        [0.0, 0.0, 0.0],
    ];
    const HSV: [[f64; 3]; 4] = [
        [0.5952380952380952, 0.7777777777777777, 0.9],
        [0.0, 0.0, 1.0],
        [0.9444444444444444, 0.8571428571428572, 0.7],
        [0.0, 0.0, 0.0],
    ];
    const HED: [[f64; 3]; 4] = [
        [0.21087858792235847, 0.0, 0.0],
        [0.0, 0.0, 0.0],
        [0.0, 0.1212401001436594, 0.10018842130169574],
        [1.2101673111892832, 0.0, 0.8819504551361967],
    ];

    #[test]
    fn raw_encodings_match_reference_library() {
        for (space, expect) in [
            (ColorSpace::Yiq, YIQ),
            (ColorSpace::Yuv, YUV),
            (ColorSpace::Hsv, HSV),
            (ColorSpace::Hed, HED),
        ] {
            for (px, want) in PIXELS.iter().zip(expect) {
                let got = space.convert(*px);
                for c in 0..3 {
                    assert!((got[c] - want[c]).abs() < 1e-7, "{space} {px:?} ch{c}: {} vs {}", got[c], want[c]);
                }
            }
        }
    }

    #[test]
    fn white_maps_to_unit_luma() {
        let yiq = ColorSpace::Yiq.convert([1.0, 1.0, 1.0]);
        assert!((yiq[0] - 1.0).abs() < 1e-12);
        assert!(yiq[1].abs() < 1e-7 && yiq[2].abs() < 1e-7);
    }

    #[test]
    fn encodings_stay_in_unit_interval() {
        let mut v = 0.0;
        for space in ColorSpace::ALL {
            for i in 0..200 {
                v = (v + 0.61803398875f64 * (i as f64 + 1.0)) % 1.0;
                let px = [v, (v * 7.3) % 1.0, (v * 3.1 + 0.4) % 1.0];
                let e = space.encode(px);
                assert!(e.iter().all(|c| (0.0..=1.0).contains(c)), "{space} {px:?}");
            }
        }
    }

    #[test]
    fn unknown_space_is_rejected() {
        assert!("lab".parse::<ColorSpace>().is_err());
        assert_eq!("HSV".parse::<ColorSpace>().unwrap(), ColorSpace::Hsv);
    }
}
