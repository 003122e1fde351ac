use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use super::{Domain, PairedSample};
use crate::{Error, Image, Result};

/// Crop window in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub y: usize,
    pub x: usize,
    pub height: usize,
    pub width: usize,
}

/// One object instance cut out of a colour/depth frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceCrop {
    pub instance: u32,
    pub window: CropWindow,
    /// The padded square did not fit in the frame and was cut to its bounds.
    pub clamped: bool,
    pub color: Image,
    pub depth: Image,
}

impl InstanceCrop {
    pub fn into_sample(self, prefix: &str, label: Option<usize>, domain: Domain) -> Result<PairedSample> {
        PairedSample::new(format!("{prefix}#{}", self.instance), self.color, self.depth, label, domain)
    }
}

/// Place a window of length `len` around `[lo, hi]` inside `[0, limit)`,
/// shifting it inward when it sticks out and cutting it when it cannot fit.
fn place(lo: usize, hi: usize, len: usize, limit: usize) -> (usize, usize, bool) {
    if len >= limit {
        return (0, limit, len > limit);
    }
    let extent = hi - lo + 1;
    let before = (len - extent) / 2;
    let start = (lo as isize - before as isize).clamp(0, (limit - len) as isize) as usize;
    (start, len, false)
}

/// One square crop per instance id (`mask` values `>= 1`), the tight bounding
/// box grown to a square on its shorter side and then by `padding` times its
/// side. Colour and depth share the window.
pub fn extract_crops(color: &Image, depth: &Image, mask: &[u32], padding: f32) -> Result<Vec<InstanceCrop>> {
    let (h, w) = (color.height(), color.width());
    if (depth.height(), depth.width()) != (h, w) || mask.len() != h * w {
        return Err(Error::Shape(format!(
            "colour {h}x{w}, depth {}x{} and mask of {} pixels disagree",
            depth.height(),
            depth.width(),
            mask.len()
        )));
    }
    if !(padding >= 0.0 && padding.is_finite()) {
        return Err(Error::InvalidArgument(format!("padding ratio {padding}")));
    }
    // id -> (min y, max y, min x, max x)
    let mut boxes: BTreeMap<u32, (usize, usize, usize, usize)> = BTreeMap::new();
    for (i, &id) in mask.iter().enumerate() {
        if id == 0 {
            continue;
        }
        let (y, x) = (i / w, i % w);
        let b = boxes.entry(id).or_insert((y, y, x, x));
        b.0 = b.0.min(y);
        b.1 = b.1.max(y);
        b.2 = b.2.min(x);
        b.3 = b.3.max(x);
    }
    let mut out = Vec::with_capacity(boxes.len());
    for (id, (y0, y1, x0, x1)) in boxes {
        let side = (y1 - y0 + 1).max(x1 - x0 + 1);
        let side = libm::ceilf(side as f32 * (1.0 + padding)) as usize;
        let (wy, hh, cut_y) = place(y0, y1, side, h);
        let (wx, ww, cut_x) = place(x0, x1, side, w);
        let window = CropWindow {
            y: wy,
            x: wx,
            height: hh,
            width: ww,
        };
        out.push(InstanceCrop {
            instance: id,
            window,
            clamped: cut_y || cut_x,
            color: color.crop(wy, wx, hh, ww),
            depth: depth.crop(wy, wx, hh, ww),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn frame(h: usize, w: usize) -> (Image, Image) {
        (
            Image::from_fn(h, w, 3, |y, x, c| (y * 1000 + x * 10 + c) as f32),
            Image::from_fn(h, w, 1, |y, x, _| (y * 1000 + x) as f32),
        )
    }

    fn blob(mask: &mut [u32], w: usize, id: u32, y0: usize, x0: usize, hh: usize, ww: usize) {
        for y in y0..y0 + hh {
            for x in x0..x0 + ww {
                mask[y * w + x] = id;
            }
        }
    }

    #[test]
    fn centred_blob_without_padding() {
        let (c, d) = frame(30, 30);
        let mut mask = vec![0; 900];
        blob(&mut mask, 30, 1, 10, 10, 10, 10);
        let crops = extract_crops(&c, &d, &mask, 0.0).unwrap();
        assert_eq!(crops.len(), 1);
        assert_eq!(crops[0].window, CropWindow { y: 10, x: 10, height: 10, width: 10 });
        assert!(!crops[0].clamped);
        assert_eq!(crops[0].color.height(), 10);
    }

    #[test]
    fn disjoint_blobs_keep_their_ids() {
        let (c, d) = frame(30, 30);
        let mut mask = vec![0; 900];
        blob(&mut mask, 30, 3, 1, 1, 4, 6);
        blob(&mut mask, 30, 7, 20, 20, 5, 5);
        let crops = extract_crops(&c, &d, &mask, 0.1).unwrap();
        let ids: Vec<u32> = crops.iter().map(|c| c.instance).collect();
        assert_eq!(ids, vec![3, 7]);
        assert!(crops.iter().all(|c| c.window.height == c.window.width));
    }

    #[test]
    fn empty_mask_gives_no_crops() {
        let (c, d) = frame(5, 5);
        assert!(extract_crops(&c, &d, &[0; 25], 0.5).unwrap().is_empty());
    }

    #[test]
    fn colour_and_depth_windows_coincide() {
        let (c, d) = frame(20, 20);
        let mut mask = vec![0; 400];
        blob(&mut mask, 20, 2, 3, 4, 5, 9);
        let crop = &extract_crops(&c, &d, &mask, 0.3).unwrap()[0];
        for y in 0..crop.window.height {
            for x in 0..crop.window.width {
                let (gy, gx) = (crop.window.y + y, crop.window.x + x);
                assert_eq!(crop.color.get(y, x, 1), c.get(gy, gx, 1));
                assert_eq!(crop.depth.get(y, x, 0), d.get(gy, gx, 0));
            }
        }
    }

    // Brute-force oracle: scan the mask for the bounding box, then check the
    // window contains it, lies inside the frame, and is square unless cut.
    #[test]
    fn border_blobs_against_bounding_box_oracle() {
        let cases = [(0, 0, 6, 4), (14, 3, 6, 6), (5, 16, 4, 4), (0, 0, 20, 8)];
        for &(y0, x0, hh, ww) in &cases {
            let (c, d) = frame(20, 20);
            let mut mask = vec![0; 400];
            blob(&mut mask, 20, 1, y0, x0, hh, ww);
            let crop = &extract_crops(&c, &d, &mask, 0.2).unwrap()[0];
            let pts: Vec<(usize, usize)> = (0..400).filter(|&i| mask[i] == 1).map(|i| (i / 20, i % 20)).collect();
            let by0 = pts.iter().map(|p| p.0).min().unwrap();
            let by1 = pts.iter().map(|p| p.0).max().unwrap();
            let bx0 = pts.iter().map(|p| p.1).min().unwrap();
            let bx1 = pts.iter().map(|p| p.1).max().unwrap();
            let wdw = crop.window;
            assert!(wdw.y <= by0 && by1 < wdw.y + wdw.height);
            assert!(wdw.x <= bx0 && bx1 < wdw.x + wdw.width);
            assert!(wdw.y + wdw.height <= 20 && wdw.x + wdw.width <= 20);
            let side = ((by1 - by0 + 1).max(bx1 - bx0 + 1) as f32 * 1.2).ceil() as usize;
            if side <= 20 {
                assert!(!crop.clamped);
                assert_eq!((wdw.height, wdw.width), (side, side));
            } else {
                assert!(crop.clamped);
                assert_eq!((wdw.height, wdw.width), (20, 20));
            }
        }
    }
}
