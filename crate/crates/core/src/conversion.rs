//! Classical modality switches between sensor variants: marker detection,
//! marker removal (fused image to vision-only) and tactile extraction (fused
//! image to marker-only), plus image similarity metrics.

use serde::{Deserialize, Serialize};

use crate::camera::FisheyeCamera;
use crate::error::Result;
use crate::frame::Frame;
use crate::mechanics::DeformationState;
use crate::optics::{marker_disk, render, VisualScene};
use crate::sensor::{build_sensor, SensorMode, SensorSpec};

/// PSNR reported for identical frames.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MarkerSet {
    pub centroids: Vec<(f64, f64)>,
    pub radii: Vec<f64>,
}

impl MarkerSet {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub ssim: f64,
    pub psnr: f64,
    pub marker_recall: Option<f64>,
}

/// Which variant a converter produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    ToViTac,
    ToTacTip,
}

impl Direction {
    pub fn source(self) -> SensorMode {
        SensorMode::ViTacTip
    }

    pub fn target(self) -> SensorMode {
        match self {
            Direction::ToViTac => SensorMode::ViTac,
            Direction::ToTacTip => SensorMode::TacTip,
        }
    }
}

/// Spec-derived constants for detection and conversion.
#[derive(Debug, Clone)]
pub struct Converter {
    /// Expected marker radius in pixels at rest.
    pub marker_radius_px: f64,
    /// Expected marker area A0 in pixels.
    pub marker_area_px: f64,
    /// Marker-free TacTip rendering of the undeformed skin.
    pub tactip_base: Frame,
}

impl Converter {
    pub fn new(spec: &SensorSpec) -> Result<Self> {
        let tactip = SensorMode::TacTip.apply_to(spec, 0.0);
        let plain = SensorSpec { has_pins: false, ..tactip };
        let model = build_sensor(&plain)?;
        let rest = DeformationState::rest(&model);
        let tactip_base = render(&model, &rest, &VisualScene::default(), &plain)?;

        let camera = FisheyeCamera::from_spec(spec);
        let depth = spec.dome_radius_mm - spec.skin_thickness_mm - spec.pin_length_mm;
        let tip = crate::sensor::Vec3::new(0.0, 0.0, depth);
        let (_, _, r) = marker_disk(&camera, &tip, spec.marker_radius_mm).unwrap_or((0.0, 0.0, 1.0));
        Ok(Converter {
            marker_radius_px: r,
            marker_area_px: std::f64::consts::PI * r * r,
            tactip_base,
        })
    }

    /// Dark-blob detection: adaptive threshold against the local mean
    /// luminance, 8-connected components of near-black cores grown by one
    /// pixel into the surrounding dark rim, area filter `[A0 / 4, 4 A0]`, and
    /// darkness-weighted centroids.
    pub fn detect_markers(&self, frame: &Frame) -> MarkerSet {
        let (w, h) = (frame.width as usize, frame.height as usize);
        let lum = frame.luminance();
        let window = (3.0 * self.marker_radius_px).ceil().max(2.0) as usize;
        let local = box_mean(&lum, w, h, window);

        let dark: Vec<bool> = lum
            .iter()
            .zip(&local)
            .map(|(&l, &m)| m > 8.0 && l < 0.75 * m && l < m - 8.0)
            .collect();
        // cores split markers that touch and leave out shadows next to them
        let core: Vec<bool> = lum
            .iter()
            .zip(&dark)
            .zip(&local)
            .map(|((&l, &d), &m)| d && l < 0.4 * m)
            .collect();

        let neighbours = |i: usize| {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            (-1..=1isize)
                .flat_map(move |dy| (-1..=1isize).map(move |dx| (x + dx, y + dy)))
                .filter(move |&(nx, ny)| nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize)
                .map(move |(nx, ny)| ny as usize * w + nx as usize)
        };

        let mut label = vec![u32::MAX; w * h];
        let mut components = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if !core[start] || label[start] != u32::MAX {
                continue;
            }
            let id = components.len() as u32;
            label[start] = id;
            stack.push(start);
            let mut members = Vec::new();
            while let Some(i) = stack.pop() {
                members.push(i);
                for j in neighbours(i) {
                    if core[j] && label[j] == u32::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
            components.push(members);
        }
        for (id, members) in components.iter_mut().enumerate() {
            let n = members.len();
            for k in 0..n {
                for j in neighbours(members[k]) {
                    if dark[j] && label[j] == u32::MAX {
                        label[j] = id as u32;
                        members.push(j);
                    }
                }
            }
        }

        // markers near a contact edge bunch up and touch; split by expected area
        let mut groups = Vec::with_capacity(components.len());
        for members in components {
            let k = (members.len() as f64 / (1.6 * self.marker_area_px)).floor() as usize + 1;
            if k == 1 || k > 4 {
                groups.push(members);
            } else {
                groups.extend(split_blob(&members, k, w, &|i| (local[i] - lum[i]).max(0.0)));
            }
        }

        let mut set = MarkerSet::default();
        for members in &groups {
            let area = members.len() as f64;
            if area < 0.25 * self.marker_area_px || area > 4.0 * self.marker_area_px {
                continue;
            }
            let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
            let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
            for &i in members {
                let wgt = (local[i] - lum[i]).max(0.0);
                let (x, y) = (i % w, i / w);
                sx += wgt * (x as f64 + 0.5);
                sy += wgt * (y as f64 + 0.5);
                sw += wgt;
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
            let (bw, bh) = ((x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
            if bw > 2.0 * bh + 1.0 || bh > 2.0 * bw + 1.0 || sw <= 0.0 {
                continue;
            }
            set.centroids.push((sx / sw, sy / sw));
            set.radii.push((area / std::f64::consts::PI).sqrt());
        }
        set
    }

    /// Replaces every marker disk (radius x1.5) by isotropic diffusion from
    /// the surrounding pixels. Pixels outside the masks are untouched.
    pub fn remove_markers(&self, frame: &Frame, markers: &MarkerSet) -> Frame {
        let (w, h) = (frame.width as usize, frame.height as usize);
        let mask = disk_mask(w, h, markers, 1.5);
        inpaint(frame, &mask)
    }

    /// Maps a fused frame to the marker-only appearance: removes markers,
    /// divides out the low-frequency illumination and background field, keeps
    /// the residual as shading on the TacTip base, and redraws the markers as
    /// black disks.
    pub fn extract_tactile(&self, frame: &Frame) -> Frame {
        let (w, h) = (frame.width as usize, frame.height as usize);
        let markers = self.detect_markers(frame);
        let clean = self.remove_markers(frame, &markers);
        let lum = clean.luminance();
        let window = (6.0 * self.marker_radius_px).ceil().max(4.0) as usize;
        let field = box_mean(&lum, w, h, window);

        let base = if self.tactip_base.width == frame.width && self.tactip_base.height == frame.height {
            self.tactip_base.luminance()
        } else {
            vec![0.0; w * h]
        };
        const RESIDUAL_GAIN: f64 = 0.25;
        let mut out_lum = vec![0.0; w * h];
        for i in 0..w * h {
            if base[i] <= 0.0 {
                continue;
            }
            let ratio = if field[i] > 1.0 { lum[i] / field[i] } else { 1.0 };
            out_lum[i] = base[i] * (1.0 + RESIDUAL_GAIN * (ratio - 1.0));
        }

        let camera_cover = cover_disks(w, h, &markers, 1.0);
        let mut out = Frame::new(frame.width, frame.height);
        for (i, px) in out.pixels.chunks_exact_mut(3).enumerate() {
            let v = (out_lum[i] * (1.0 - camera_cover[i])).clamp(0.0, 255.0).round() as u8;
            px.copy_from_slice(&[v, v, v]);
        }
        out
    }
}

/// Box mean over a `(2 r + 1)^2` window, clipped at the borders, via a
/// summed-area table.
/// Weighted k-means on pixel coordinates, seeded by farthest-point picks.
fn split_blob(members: &[usize], k: usize, w: usize, weight: &dyn Fn(usize) -> f64) -> Vec<Vec<usize>> {
    let xy: Vec<(f64, f64)> = members.iter().map(|&i| ((i % w) as f64, (i / w) as f64)).collect();
    let wt: Vec<f64> = members.iter().map(|&i| weight(i) + 1e-9).collect();
    let total: f64 = wt.iter().sum();
    let mean = xy.iter().zip(&wt).fold((0.0, 0.0), |a, (p, &q)| (a.0 + p.0 * q / total, a.1 + p.1 * q / total));
    let d2 = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    let farthest = |from: &dyn Fn((f64, f64)) -> f64| {
        let mut best = 0;
        for j in 1..xy.len() {
            if from(xy[j]) > from(xy[best]) {
                best = j;
            }
        }
        xy[best]
    };
    let mut centres = vec![farthest(&|p| d2(p, mean))];
    while centres.len() < k {
        let c = centres.clone();
        centres.push(farthest(&|p| c.iter().map(|&q| d2(p, q)).fold(f64::INFINITY, f64::min)));
    }
    let mut assign = vec![0usize; xy.len()];
    for _ in 0..20 {
        for (a, &p) in assign.iter_mut().zip(&xy) {
            *a = (0..k).min_by(|&x, &y| d2(p, centres[x]).total_cmp(&d2(p, centres[y]))).unwrap();
        }
        let mut acc = vec![(0.0, 0.0, 0.0); k];
        for ((&a, p), &q) in assign.iter().zip(&xy).zip(&wt) {
            acc[a].0 += p.0 * q;
            acc[a].1 += p.1 * q;
            acc[a].2 += q;
        }
        for (c, a) in centres.iter_mut().zip(&acc) {
            if a.2 > 0.0 {
                *c = (a.0 / a.2, a.1 / a.2);
            }
        }
    }
    let mut out = vec![Vec::new(); k];
    for (&a, &i) in assign.iter().zip(members) {
        out[a].push(i);
    }
    out.retain(|g| !g.is_empty());
    out
}

pub fn box_mean(values: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut sat = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += values[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let ya = y.saturating_sub(r);
        let yb = (y + r + 1).min(h);
        for x in 0..w {
            let xa = x.saturating_sub(r);
            let xb = (x + r + 1).min(w);
            let s = sat[yb * (w + 1) + xb] - sat[ya * (w + 1) + xb] - sat[yb * (w + 1) + xa]
                + sat[ya * (w + 1) + xa];
            out[y * w + x] = s / ((yb - ya) * (xb - xa)) as f64;
        }
    }
    out
}

pub fn disk_mask(w: usize, h: usize, markers: &MarkerSet, scale: f64) -> Vec<bool> {
    let mut mask = vec![false; w * h];
    for (&(u, v), &r) in markers.centroids.iter().zip(&markers.radii) {
        let rr = r * scale;
        let x0 = (u - rr).floor().max(0.0) as usize;
        let x1 = ((u + rr).ceil() as isize).min(w as isize - 1);
        let y0 = (v - rr).floor().max(0.0) as usize;
        let y1 = ((v + rr).ceil() as isize).min(h as isize - 1);
        for y in y0 as isize..=y1 {
            for x in x0 as isize..=x1 {
                let dx = x as f64 + 0.5 - u;
                let dy = y as f64 + 0.5 - v;
                if dx * dx + dy * dy <= rr * rr {
                    mask[y as usize * w + x as usize] = true;
                }
            }
        }
    }
    mask
}

/// Antialiased disk coverage (4x4 supersampling), radius scaled by `scale`.
fn cover_disks(w: usize, h: usize, markers: &MarkerSet, scale: f64) -> Vec<f64> {
    let mut cover = vec![0.0f64; w * h];
    for (&(u, v), &r) in markers.centroids.iter().zip(&markers.radii) {
        let rr = r * scale;
        let x0 = (u - rr).floor().max(0.0) as usize;
        let x1 = ((u + rr).ceil() as isize).min(w as isize - 1);
        let y0 = (v - rr).floor().max(0.0) as usize;
        let y1 = ((v + rr).ceil() as isize).min(h as isize - 1);
        for y in y0 as isize..=y1 {
            for x in x0 as isize..=x1 {
                let mut hits = 0;
                for sy in 0..4 {
                    let py = y as f64 + (sy as f64 + 0.5) / 4.0 - v;
                    for sx in 0..4 {
                        let px = x as f64 + (sx as f64 + 0.5) / 4.0 - u;
                        if px * px + py * py <= rr * rr {
                            hits += 1;
                        }
                    }
                }
                let i = y as usize * w + x as usize;
                cover[i] = cover[i].max(hits as f64 / 16.0);
            }
        }
    }
    cover
}

/// Fills masked pixels by Gauss-Seidel diffusion (4-neighbour average) until
/// the largest per-pixel change drops below 0.5 intensity levels. Masked
/// pixels start at the mean of the unmasked pixels bordering their region.
pub fn inpaint(frame: &Frame, mask: &[bool]) -> Frame {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let masked: Vec<usize> = (0..w * h).filter(|&i| mask[i]).collect();
    if masked.is_empty() {
        return frame.clone();
    }
    let mut img: Vec<[f64; 3]> = frame
        .pixels
        .chunks_exact(3)
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();

    let neighbours = |i: usize| {
        let (x, y) = (i % w, i / w);
        let mut n = [usize::MAX; 4];
        if x > 0 {
            n[0] = i - 1;
        }
        if x + 1 < w {
            n[1] = i + 1;
        }
        if y > 0 {
            n[2] = i - w;
        }
        if y + 1 < h {
            n[3] = i + w;
        }
        n
    };

    // seed each masked pixel with the mean of the unmasked border it touches,
    // spreading inward by breadth-first rings
    let mut known: Vec<bool> = mask.iter().map(|m| !m).collect();
    let mut frontier: Vec<usize> = masked.clone();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        let mut fills = Vec::new();
        for &i in &frontier {
            let mut acc = [0.0; 3];
            let mut count = 0;
            for j in neighbours(i) {
                if j != usize::MAX && known[j] {
                    for c in 0..3 {
                        acc[c] += img[j][c];
                    }
                    count += 1;
                }
            }
            if count > 0 {
                fills.push((i, [acc[0] / count as f64, acc[1] / count as f64, acc[2] / count as f64]));
            } else {
                next.push(i);
            }
        }
        if fills.is_empty() {
            break;
        }
        for (i, v) in fills {
            img[i] = v;
            known[i] = true;
        }
        frontier = next;
    }

    for _ in 0..10_000 {
        let mut change: f64 = 0.0;
        for &i in &masked {
            let mut acc = [0.0; 3];
            let mut count = 0.0;
            for j in neighbours(i) {
                if j != usize::MAX {
                    for c in 0..3 {
                        acc[c] += img[j][c];
                    }
                    count += 1.0;
                }
            }
            for c in 0..3 {
                let v = acc[c] / count;
                change = change.max((v - img[i][c]).abs());
                img[i][c] = v;
            }
        }
        if change < 0.5 {
            break;
        }
    }

    let mut out = frame.clone();
    for &i in &masked {
        for c in 0..3 {
            out.pixels[i * 3 + c] = img[i][c].round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Mean SSIM over all 8x8 windows of the luminance, and PSNR over all channels
/// (capped at [`PSNR_CAP_DB`]).
pub fn image_similarity(a: &Frame, b: &Frame) -> Result<(f64, f64)> {
    a.same_size(b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    let la = a.luminance();
    let lb = b.luminance();
    let ssim = ssim_luma(&la, &lb, w, h);

    let mse = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.pixels.len().max(1) as f64;
    let psnr = if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB)
    };
    Ok((ssim, psnr))
}

fn ssim_luma(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    const WIN: usize = 8;
    const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
    const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
    if w < WIN || h < WIN {
        return if a == b { 1.0 } else { 0.0 };
    }
    // summed-area tables of a, b, a^2, b^2, ab
    let stride = w + 1;
    let mut sat = vec![[0.0f64; 5]; stride * (h + 1)];
    for y in 0..h {
        let mut row = [0.0; 5];
        for x in 0..w {
            let (p, q) = (a[y * w + x], b[y * w + x]);
            let v = [p, q, p * p, q * q, p * q];
            for k in 0..5 {
                row[k] += v[k];
                sat[(y + 1) * stride + x + 1][k] = sat[y * stride + x + 1][k] + row[k];
            }
        }
    }
    let n = (WIN * WIN) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - WIN {
        for x in 0..=w - WIN {
            let mut s = [0.0; 5];
            for (k, sk) in s.iter_mut().enumerate() {
                *sk = sat[(y + WIN) * stride + x + WIN][k] - sat[y * stride + x + WIN][k]
                    - sat[(y + WIN) * stride + x][k]
                    + sat[y * stride + x][k];
            }
            let (ma, mb) = (s[0] / n, s[1] / n);
            let va = s[2] / n - ma * ma;
            let vb = s[3] / n - mb * mb;
            let cov = s[4] / n - ma * mb;
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            count += 1;
        }
    }
    total / count as f64
}
