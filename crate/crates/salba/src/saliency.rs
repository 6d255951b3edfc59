//! Saliency maps and the operations derived from them: the `(p + b)/255`
//! observation weight, the inter-frame correlation coefficient lambda, an
//! adaptive EMA temporal filter, BCE loss, procedural map synthesis, and
//! binary PGM I/O.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default constant factor `b` of the weight rule, an omega floor of 0.2.
pub const DEFAULT_WEIGHT_BIAS: f64 = 51.0;

/// Default minimum EMA update gain.
pub const DEFAULT_GAIN_FLOOR: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("pixel ({x:.3}, {y:.3}) outside {width}x{height} map")]
    OutOfBounds { x: f64, y: f64, width: u32, height: u32 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: String, right: String },
    #[error("{}: malformed PGM header at byte {offset}: {reason}", path.display())]
    MalformedHeader { path: PathBuf, offset: usize, reason: String },
    #[error("{}: unsupported maxval {maxval} at byte {offset}; only binary 8-bit (maxval 255) PGM is handled", path.display())]
    UnsupportedMaxval { path: PathBuf, offset: usize, maxval: u64 },
    #[error("{}: truncated pixel data at byte {offset}: expected {expected} bytes, found {found}", path.display())]
    TruncatedData { path: PathBuf, offset: usize, expected: usize, found: usize },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// 8-bit grayscale attention image, row-major; 0 = ignored, 255 = maximally
/// salient. Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaliencyMap {
    width: u32,
    height: u32,
    values: Vec<u8>,
}

impl SaliencyMap {
    /// Panics if `values.len() != width * height` or either dimension is 0;
    /// map shapes are programmer-controlled, not input-controlled.
    pub fn new(width: u32, height: u32, values: Vec<u8>) -> Self {
        assert!(width >= 1 && height >= 1, "map dimensions must be at least 1x1");
        assert_eq!(values.len(), width as usize * height as usize, "value buffer does not match dimensions");
        Self { width, height, values }
    }

    pub fn constant(width: u32, height: u32, value: u8) -> Self {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Bilinearly interpolated intensity at a subpixel position. Edge
    /// neighborhoods clamp to the border pixel. Implemented as two nested
    /// lerps so constant maps interpolate to their value exactly.
    pub fn sample_bilinear(&self, pixel: &Vector2<f64>) -> Result<f64, SaliencyError> {
        if !(pixel.x >= 0.0 && pixel.x < self.width as f64 && pixel.y >= 0.0 && pixel.y < self.height as f64) {
            return Err(SaliencyError::OutOfBounds { x: pixel.x, y: pixel.y, width: self.width, height: self.height });
        }
        let x0 = pixel.x.floor();
        let y0 = pixel.y.floor();
        let fx = pixel.x - x0;
        let fy = pixel.y - y0;
        let x0 = x0 as u32;
        let y0 = y0 as u32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
        let top = lerp(self.get(x0, y0) as f64, self.get(x1, y0) as f64, fx);
        let bottom = lerp(self.get(x0, y1) as f64, self.get(x1, y1) as f64, fx);
        Ok(lerp(top, bottom, fy))
    }

    /// Intensities as reals in [0, 1], row-major.
    pub fn normalized(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64 / 255.0).collect()
    }

    fn dims_label(&self) -> String {
        format!("{}x{}", self.width, self.height)
    }
}

/// Observation weight `omega = (p + b)/255` with `p` the bilinearly
/// interpolated map intensity at `pixel`. No clamping: `omega` may exceed 1
/// when `p + b > 255`.
pub fn weight_at(map: &SaliencyMap, pixel: &Vector2<f64>, b: f64) -> Result<f64, SaliencyError> {
    debug_assert!(b >= 0.0, "weight bias must be non-negative");
    Ok((map.sample_bilinear(pixel)? + b) / 255.0)
}

/// Inter-frame correlation coefficient `lambda = (NCC + 1)/2` in [0, 1].
///
/// NCC is the zero-mean normalized cross-correlation over all pixels,
/// accumulated in exact integer arithmetic so that identical maps give
/// exactly 1 and an intensity inversion exactly 0. When either map has zero
/// variance NCC is undefined and lambda falls back to
/// `1 - mean(|a - b|)/255`.
pub fn correlation_coefficient(current: &SaliencyMap, previous: &SaliencyMap) -> Result<f64, SaliencyError> {
    if current.width != previous.width || current.height != previous.height {
        return Err(SaliencyError::DimensionMismatch { left: current.dims_label(), right: previous.dims_label() });
    }
    let n = current.values.len() as i128;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for (&a, &b) in current.values.iter().zip(&previous.values) {
        let (a, b) = (a as i128, b as i128);
        sa += a;
        sb += b;
        saa += a * a;
        sbb += b * b;
        sab += a * b;
    }
    let var_a = n * saa - sa * sa;
    let var_b = n * sbb - sb * sb;
    if var_a == 0 || var_b == 0 {
        let abs_diff: u64 = current
            .values
            .iter()
            .zip(&previous.values)
            .map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs() as u64)
            .sum();
        let mad = abs_diff as f64 / n as f64;
        return Ok(1.0 - mad / 255.0);
    }
    let cov = n * sab - sa * sb;
    // |cov| <= sqrt(var_a * var_b) by Cauchy-Schwarz; equality means the maps
    // are affinely related and NCC is exactly +/-1.
    let ncc = if (cov.unsigned_abs()).pow(2) == var_a as u128 * var_b as u128 {
        if cov >= 0 {
            1.0
        } else {
            -1.0
        }
    } else {
        let raw = cov as f64 / ((var_a as f64).sqrt() * (var_b as f64).sqrt());
        raw.clamp(-1.0, 1.0)
    };
    Ok((ncc + 1.0) / 2.0)
}

/// Recurrent state of the adaptive EMA filter: a real-valued map in
/// [0, 255] plus the minimum update gain. Empty until the first frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub state: Vec<f64>,
    pub gain_floor: f64,
    width: u32,
    height: u32,
}

impl EmaState {
    pub fn new(gain_floor: f64) -> Self {
        Self { state: Vec::new(), gain_floor, width: 0, height: 0 }
    }

    pub fn is_initialized(&self) -> bool {
        !self.state.is_empty()
    }

    /// Current state rounded to an 8-bit map; `None` before the first frame.
    pub fn rounded(&self) -> Option<SaliencyMap> {
        if self.state.is_empty() {
            return None;
        }
        let values = self.state.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
        Some(SaliencyMap::new(self.width, self.height, values))
    }
}

impl Default for EmaState {
    fn default() -> Self {
        Self::new(DEFAULT_GAIN_FLOOR)
    }
}

/// One step of the adaptive EMA filter.
///
/// The first frame initializes the state and passes through unchanged.
/// Afterwards `lambda = correlation_coefficient(current, round(state))`,
/// the gain is `g = max(lambda, gain_floor)`, and the state updates as
/// `(1 - g) * state + g * current` per pixel. A large scene change (low
/// lambda) therefore yields a small gain and suppresses rapid attention
/// shifts; the floor keeps the filter from freezing permanently.
pub fn adaptive_ema(mut state: EmaState, current: &SaliencyMap) -> Result<(EmaState, SaliencyMap), SaliencyError> {
    if !state.is_initialized() {
        state.state = current.values.iter().map(|&v| v as f64).collect();
        state.width = current.width;
        state.height = current.height;
        return Ok((state, current.clone()));
    }
    if state.width != current.width || state.height != current.height {
        return Err(SaliencyError::DimensionMismatch {
            left: format!("{}x{}", state.width, state.height),
            right: current.dims_label(),
        });
    }
    let rounded = state.rounded().expect("state is initialized");
    let lambda = correlation_coefficient(current, &rounded)?;
    let g = lambda.max(state.gain_floor);
    for (s, &c) in state.state.iter_mut().zip(&current.values) {
        *s = (1.0 - g) * *s + g * c as f64;
    }
    let filtered = state.rounded().expect("state is initialized");
    Ok((state, filtered))
}

/// Mean binary cross-entropy between a predicted map in (0, 1) and a ground
/// truth map in [0, 1], both row-major. Predictions are clamped to
/// [1e-7, 1 - 1e-7] before evaluation.
pub fn bce_loss(pred: &[f64], gt: &[f64]) -> Result<f64, SaliencyError> {
    if pred.len() != gt.len() {
        return Err(SaliencyError::DimensionMismatch {
            left: format!("{} px", pred.len()),
            right: format!("{} px", gt.len()),
        });
    }
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / n)
}

/// A synthetic Gaussian attention blob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyBlobSpec {
    pub center: Vector2<f64>,
    /// Spread in pixels; must be positive.
    pub sigma: f64,
    /// Peak intensity in [0, 255].
    pub peak: f64,
}

/// Renders Gaussian blobs over a uniform background:
/// `clamp(background + sum_blobs peak * exp(-d^2 / (2 sigma^2)), 0, 255)`
/// rounded to the nearest integer, per pixel.
pub fn synthesize_map(width: u32, height: u32, blobs: &[SaliencyBlobSpec], background: u8) -> SaliencyMap {
    let mut values = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        for x in 0..width {
            let mut acc = background as f64;
            for blob in blobs {
                let dx = x as f64 - blob.center.x;
                let dy = y as f64 - blob.center.y;
                acc += blob.peak * (-(dx * dx + dy * dy) / (2.0 * blob.sigma * blob.sigma)).exp();
            }
            values.push(acc.round().clamp(0.0, 255.0) as u8);
        }
    }
    SaliencyMap::new(width, height, values)
}

/// Writes a map as binary PGM (P5, maxval 255).
pub fn write_pgm(map: &SaliencyMap, path: &Path) -> Result<(), SaliencyError> {
    let mut header = String::new();
    write!(header, "P5\n{} {}\n255\n", map.width, map.height).expect("infallible");
    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&map.values);
    std::fs::write(path, bytes).map_err(|source| SaliencyError::Io { path: path.to_owned(), source })
}

/// Reads a binary PGM (P5, maxval 255) file. `#` comments are allowed
/// between header tokens; exactly one whitespace byte separates the maxval
/// from the pixel bytes.
pub fn read_pgm(path: &Path) -> Result<SaliencyMap, SaliencyError> {
    let bytes = std::fs::read(path).map_err(|source| SaliencyError::Io { path: path.to_owned(), source })?;
    let malformed = |offset: usize, reason: &str| SaliencyError::MalformedHeader {
        path: path.to_owned(),
        offset,
        reason: reason.into(),
    };
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(malformed(0, "expected magic \"P5\""));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    let mut field_offsets = [0usize; 3];
    for i in 0..3 {
        skip_whitespace_and_comments(&bytes, &mut pos);
        field_offsets[i] = pos;
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            fields[i] = fields[i] * 10 + (bytes[pos] - b'0') as u64;
            pos += 1;
            if fields[i] > u32::MAX as u64 {
                return Err(malformed(start, "header field out of range"));
            }
        }
        if pos == start {
            return Err(malformed(pos, "expected an unsigned decimal header field"));
        }
    }
    let (width, height, maxval) = (fields[0], fields[1], fields[2]);
    if width == 0 || height == 0 {
        return Err(malformed(field_offsets[0], "zero image dimension"));
    }
    if maxval != 255 {
        return Err(SaliencyError::UnsupportedMaxval { path: path.to_owned(), offset: field_offsets[2], maxval });
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(malformed(pos, "expected single whitespace after maxval"));
    }
    pos += 1;
    let expected = width as usize * height as usize;
    let found = bytes.len() - pos;
    if found < expected {
        return Err(SaliencyError::TruncatedData { path: path.to_owned(), offset: bytes.len(), expected, found });
    }
    Ok(SaliencyMap::new(width as u32, height as u32, bytes[pos..pos + expected].to_vec()))
}

fn skip_whitespace_and_comments(bytes: &[u8], pos: &mut usize) {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn weight_goldens() {
        let center = Vector2::new(4.0, 4.0);
        let w = |value: u8, b: f64| weight_at(&SaliencyMap::constant(9, 9, value), &center, b).unwrap();
        assert_relative_eq!(w(0, 51.0), 0.2, epsilon = 1e-15);
        assert_relative_eq!(w(255, 0.0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(w(204, 51.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn weight_zero_at_zero_map_and_bias() {
        let map = SaliencyMap::constant(3, 3, 0);
        assert_eq!(weight_at(&map, &Vector2::new(1.0, 1.0), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn weight_rejects_out_of_bounds_pixels() {
        let map = SaliencyMap::constant(4, 4, 10);
        for pixel in [Vector2::new(-0.1, 1.0), Vector2::new(1.0, 4.0), Vector2::new(4.0, 1.0)] {
            assert!(matches!(weight_at(&map, &pixel, 0.0), Err(SaliencyError::OutOfBounds { .. })));
        }
    }

    #[test]
    fn bilinear_interpolates_between_pixel_centers() {
        let map = SaliencyMap::new(2, 2, vec![0, 10, 20, 30]);
        assert_relative_eq!(map.sample_bilinear(&Vector2::new(0.5, 0.5)).unwrap(), 15.0, epsilon = 1e-12);
        assert_relative_eq!(map.sample_bilinear(&Vector2::new(1.0, 0.0)).unwrap(), 10.0, epsilon = 1e-12);
        // Past the last pixel center the border value replicates.
        assert_relative_eq!(map.sample_bilinear(&Vector2::new(1.75, 1.75)).unwrap(), 30.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_map_interpolates_exactly() {
        let map = SaliencyMap::constant(7, 5, 255);
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..500 {
            let p = Vector2::new(rng.random_range(0.0..7.0), rng.random_range(0.0..5.0));
            assert_eq!(map.sample_bilinear(&p).unwrap().to_bits(), 255.0f64.to_bits());
        }
    }

    #[test]
    fn correlation_of_identical_maps_is_one() {
        let mut rng = StdRng::seed_from_u64(5);
        let values: Vec<u8> = (0..64).map(|_| rng.random()).collect();
        let map = SaliencyMap::new(8, 8, values);
        assert_eq!(correlation_coefficient(&map, &map.clone()).unwrap(), 1.0);
    }

    #[test]
    fn correlation_of_inverted_map_is_zero() {
        let mut rng = StdRng::seed_from_u64(6);
        let values: Vec<u8> = (0..64).map(|_| rng.random()).collect();
        let inverted: Vec<u8> = values.iter().map(|&v| 255 - v).collect();
        let a = SaliencyMap::new(8, 8, values);
        let b = SaliencyMap::new(8, 8, inverted);
        assert_eq!(correlation_coefficient(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn correlation_zero_variance_fallback() {
        let a = SaliencyMap::constant(4, 4, 100);
        let b = SaliencyMap::constant(4, 4, 151);
        assert_relative_eq!(correlation_coefficient(&a, &b).unwrap(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn correlation_is_symmetric_and_shift_invariant() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..50 {
            let a: Vec<u8> = (0..48).map(|_| rng.random_range(0..200)).collect();
            let b: Vec<u8> = (0..48).map(|_| rng.random_range(0..200)).collect();
            let ma = SaliencyMap::new(8, 6, a.clone());
            let mb = SaliencyMap::new(8, 6, b.clone());
            let lam = correlation_coefficient(&ma, &mb).unwrap();
            assert_eq!(lam, correlation_coefficient(&mb, &ma).unwrap());
            let shift = 40u8;
            let ma_s = SaliencyMap::new(8, 6, a.iter().map(|&v| v + shift).collect());
            let mb_s = SaliencyMap::new(8, 6, b.iter().map(|&v| v + shift).collect());
            assert_relative_eq!(lam, correlation_coefficient(&ma_s, &mb_s).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn correlation_rejects_mismatched_dimensions() {
        let a = SaliencyMap::constant(4, 4, 0);
        let b = SaliencyMap::constant(4, 5, 0);
        assert!(matches!(correlation_coefficient(&a, &b), Err(SaliencyError::DimensionMismatch { .. })));
    }

    #[test]
    fn ema_first_frame_passes_through() {
        let current = SaliencyMap::new(2, 2, vec![9, 18, 27, 36]);
        let (state, filtered) = adaptive_ema(EmaState::default(), &current).unwrap();
        assert_eq!(filtered, current);
        assert!(state.is_initialized());
    }

    #[test]
    fn ema_uniform_step_golden() {
        let (state, _) = adaptive_ema(EmaState::default(), &SaliencyMap::constant(3, 3, 100)).unwrap();
        let (state, filtered) = adaptive_ema(state, &SaliencyMap::constant(3, 3, 200)).unwrap();
        // lambda = 1 - 100/255 = 0.607843..., new state = 100 + 100 * lambda.
        let g = 1.0 - 100.0 / 255.0;
        assert_relative_eq!(g, 0.6078431372549019, epsilon = 1e-12);
        for &s in &state.state {
            assert_relative_eq!(s, 100.0 + 100.0 * g, epsilon = 1e-12);
        }
        assert!(filtered.values().iter().all(|&v| v == 161));
    }

    #[test]
    fn ema_fixed_point_when_current_equals_state() {
        let map = SaliencyMap::new(2, 2, vec![10, 120, 200, 255]);
        let (state, _) = adaptive_ema(EmaState::default(), &map).unwrap();
        let (state, filtered) = adaptive_ema(state, &map).unwrap();
        assert_eq!(filtered, map);
        for (s, &c) in state.state.iter().zip(map.values()) {
            assert_eq!(*s, c as f64);
        }
    }

    #[test]
    fn ema_output_stays_between_state_and_current() {
        let mut rng = StdRng::seed_from_u64(21);
        let mut state = EmaState::default();
        let mut prev: Option<Vec<f64>> = None;
        for _ in 0..30 {
            let current = SaliencyMap::new(6, 4, (0..24).map(|_| rng.random()).collect());
            let (next, _) = adaptive_ema(state, &current).unwrap();
            if let Some(prev) = prev {
                for ((next_v, prev_v), &cur) in next.state.iter().zip(&prev).zip(current.values()) {
                    let lo = prev_v.min(cur as f64);
                    let hi = prev_v.max(cur as f64);
                    assert!(*next_v >= lo - 1e-12 && *next_v <= hi + 1e-12);
                }
            }
            prev = Some(next.state.clone());
            state = next;
        }
    }

    #[test]
    fn bce_symmetric_case() {
        let pred = vec![0.5; 16];
        let gt: Vec<f64> = (0..16).map(|i| (i % 2) as f64).collect();
        assert_relative_eq!(bce_loss(&pred, &gt).unwrap(), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn bce_single_pixel() {
        assert_relative_eq!(bce_loss(&[0.9], &[1.0]).unwrap(), -(0.9f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn bce_matches_naive_summation() {
        let mut rng = StdRng::seed_from_u64(31);
        let pred: Vec<f64> = (0..64).map(|_| rng.random_range(0.001..0.999)).collect();
        let gt: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut naive = 0.0;
        for i in 0..64 {
            let p: f64 = pred[i].clamp(1e-7, 1.0 - 1e-7);
            naive += -(gt[i] * p.ln() + (1.0 - gt[i]) * (1.0 - p).ln());
        }
        naive /= 64.0;
        assert_relative_eq!(bce_loss(&pred, &gt).unwrap(), naive, epsilon = 1e-12);
        assert!(naive >= 0.0);
    }

    #[test]
    fn synthesize_background_only() {
        let map = synthesize_map(5, 4, &[], 0);
        assert!(map.values().iter().all(|&v| v == 0));
    }

    #[test]
    fn synthesize_blob_peak_and_falloff() {
        let sigma = 5.0;
        let blob = SaliencyBlobSpec { center: Vector2::new(10.0, 10.0), sigma, peak: 255.0 };
        let map = synthesize_map(21, 21, &[blob], 0);
        assert_eq!(map.get(10, 10), 255);
        assert_eq!(map.get(15, 10), (255.0 * (-0.5f64).exp()).round() as u8);
        assert_eq!(map.get(15, 10), 155);
    }

    #[test]
    fn pgm_round_trip_small() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let map = SaliencyMap::new(2, 2, vec![0, 128, 255, 7]);
        write_pgm(&map, &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), map);
    }

    #[test]
    fn pgm_rejects_ascii_variant() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ascii.pgm");
        std::fs::write(&path, b"P2\n2 2\n255\n0 1 2 3\n").unwrap();
        assert!(matches!(read_pgm(&path), Err(SaliencyError::MalformedHeader { offset: 0, .. })));
    }

    #[test]
    fn pgm_rejects_wide_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.pgm");
        std::fs::write(&path, b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_pgm(&path), Err(SaliencyError::UnsupportedMaxval { maxval: 65535, .. })));
    }

    #[test]
    fn pgm_rejects_truncated_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.pgm");
        std::fs::write(&path, b"P5\n4 4\n255\nabc").unwrap();
        let err = read_pgm(&path);
        assert!(matches!(err, Err(SaliencyError::TruncatedData { expected: 16, found: 3, .. })));
    }

    #[test]
    fn pgm_accepts_header_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("comment.pgm");
        std::fs::write(&path, b"P5\n# synthetic\n2 1\n255\n\x05\x09").unwrap();
        let map = read_pgm(&path).unwrap();
        assert_eq!(map.values(), &[5, 9]);
    }

    proptest! {
        #[test]
        fn pgm_round_trip_is_identity(width in 1u32..48, height in 1u32..48, seed in 0u64..1000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let values: Vec<u8> = (0..width as usize * height as usize).map(|_| rng.random()).collect();
            let map = SaliencyMap::new(width, height, values);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.pgm");
            write_pgm(&map, &path).unwrap();
            prop_assert_eq!(read_pgm(&path).unwrap(), map);
        }

        #[test]
        fn weight_is_monotone_in_p_and_b(b0 in 0.0f64..200.0, b1 in 0.0f64..200.0, v0 in 0u8..255, v1 in 0u8..255) {
            let (lo, hi) = if v0 <= v1 { (v0, v1) } else { (v1, v0) };
            let (blo, bhi) = if b0 <= b1 { (b0, b1) } else { (b1, b0) };
            let p = Vector2::new(0.0, 0.0);
            let w_lo = weight_at(&SaliencyMap::constant(1, 1, lo), &p, blo).unwrap();
            let w_hi_p = weight_at(&SaliencyMap::constant(1, 1, hi), &p, blo).unwrap();
            let w_hi_b = weight_at(&SaliencyMap::constant(1, 1, lo), &p, bhi).unwrap();
            prop_assert!(w_hi_p >= w_lo);
            prop_assert!(w_hi_b >= w_lo);
        }
    }
}
