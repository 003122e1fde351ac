use alloc::collections::VecDeque;
use alloc::vec;

use crate::{Error, Image, Result};

/// Replace missing (zero) depth by the value of the nearest valid pixel in
/// city-block distance; ties go to the first pixel reached in breadth-first
/// order. Fails when no pixel carries a measurement.
pub fn fill_missing_depth(depth: &Image) -> Result<Image> {
    if depth.channels() != 1 {
        return Err(Error::InvalidArgument("raw depth must have one channel".into()));
    }
    let (h, w) = (depth.height(), depth.width());
    let mut out = depth.clone();
    let mut seen = vec![false; h * w];
    let mut queue = VecDeque::new();
    for (i, &v) in depth.data().iter().enumerate() {
        if v > 0.0 && v.is_finite() {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    if queue.is_empty() {
        return Err(Error::NoValidDepth);
    }
    let data = out.data_mut();
    while let Some(i) = queue.pop_front() {
        let (y, x) = (i / w, i % w);
        let v = data[i];
        let mut visit = |j: usize| {
            if !seen[j] {
                seen[j] = true;
                data[j] = v;
                queue.push_back(j);
            }
        };
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
    }
    Ok(out)
}

/// Surface-normal colourisation of a raw depth map.
///
/// Gradients are central differences in pixel units (one-sided on the image
/// border); the unit normal `normalize(-dz/dx, -dz/dy, 1)` is mapped to
/// `[0, 1]^3` by `(n + 1) / 2`. Channel 0 follows the column axis, channel 1
/// the row axis.
pub fn colorize_depth(depth: &Image) -> Result<Image> {
    let z = fill_missing_depth(depth)?;
    let (h, w) = (z.height(), z.width());
    let at = |y: usize, x: usize| z.get(y, x, 0);
    let mut out = Image::new(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let dx = match (x > 0, x + 1 < w) {
                (true, true) => (at(y, x + 1) - at(y, x - 1)) * 0.5,
                (false, true) => at(y, x + 1) - at(y, x),
                (true, false) => at(y, x) - at(y, x - 1),
                (false, false) => 0.0,
            };
            let dy = match (y > 0, y + 1 < h) {
                (true, true) => (at(y + 1, x) - at(y - 1, x)) * 0.5,
                (false, true) => at(y + 1, x) - at(y, x),
                (true, false) => at(y, x) - at(y - 1, x),
                (false, false) => 0.0,
            };
            let inv = 1.0 / libm::sqrtf(dx * dx + dy * dy + 1.0);
            out.set(y, x, 0, (-dx * inv + 1.0) * 0.5);
            out.set(y, x, 1, (-dy * inv + 1.0) * 0.5);
            out.set(y, x, 2, (inv + 1.0) * 0.5);
        }
    }
    Ok(out)
}
