//! Quarter-turn transforms and the relative-rotation pretext labels.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::data::{Domain, PairedSample};
use crate::rng::Rng;
use crate::{Error, Image, Result};

/// Rotate a square image clockwise by `turns` quarter-turns: pixel `(r, c)`
/// moves to `(c, n - 1 - r)` per turn.
pub fn rot90_image(img: &Image, turns: usize) -> Result<Image> {
    if turns > 3 {
        return Err(Error::InvalidArgument(format!("rotation index {turns} outside [0, 3]")));
    }
    if !img.is_square() {
        return Err(Error::NonSquare {
            height: img.height(),
            width: img.width(),
        });
    }
    let n = img.height();
    let ch = img.channels();
    if turns == 0 {
        return Ok(img.clone());
    }
    let mut out = Image::new(n, n, ch);
    let src = img.data();
    let dst = out.data_mut();
    for r in 0..n {
        for c in 0..n {
            let (nr, nc) = match turns {
                1 => (c, n - 1 - r),
                2 => (n - 1 - r, n - 1 - c),
                _ => (n - 1 - c, r),
            };
            let s = (r * n + c) * ch;
            let d = (nr * n + nc) * ch;
            dst[d..d + ch].copy_from_slice(&src[s..s + ch]);
        }
    }
    Ok(out)
}

/// Relative rotation label `(k - j) mod 4` between a colour image turned `j`
/// times and a depth image turned `k` times.
///
/// # Panics
/// When `j` or `k` is outside `[0, 3]`.
pub fn relative_label(j: usize, k: usize) -> usize {
    assert!(j < 4 && k < 4, "rotation indices ({j}, {k}) outside [0, 3]");
    (k + 4 - j) % 4
}

/// Transformed pairs with their rotation labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationBatch {
    pub ids: Vec<String>,
    pub color: Vec<Image>,
    pub depth: Vec<Image>,
    /// Pretext labels in `[0, 3]`.
    pub z: Vec<usize>,
    /// Turns applied to the colour image.
    pub j: Vec<usize>,
    /// Turns applied to the depth image.
    pub k: Vec<usize>,
    pub domain: Vec<Domain>,
}

impl RotationBatch {
    fn with_capacity(n: usize) -> Self {
        RotationBatch {
            ids: Vec::with_capacity(n),
            color: Vec::with_capacity(n),
            depth: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            j: Vec::with_capacity(n),
            k: Vec::with_capacity(n),
            domain: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

fn check_batch(samples: &[&PairedSample]) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty rotation batch".into()))?;
    let size = first.size();
    for s in samples {
        if s.size() != size {
            return Err(Error::Shape(format!("sample {} is {:?}, batch is {size:?}", s.id, s.size())));
        }
        if !s.color.is_square() {
            return Err(Error::NonSquare {
                height: size.0,
                width: size.1,
            });
        }
    }
    Ok(())
}

/// Per sample draw `j` and `z` uniformly, set `k = (j + z) mod 4` and turn the
/// colour image by `j` and the depth image by `k`.
pub fn make_rotation_batch(samples: &[&PairedSample], rng: &mut Rng) -> Result<RotationBatch> {
    check_batch(samples)?;
    let mut batch = RotationBatch::with_capacity(samples.len());
    for s in samples {
        let j = rng.random_range(0..4);
        let z = rng.random_range(0..4);
        let k = (j + z) % 4;
        debug_assert_eq!(relative_label(j, k), z);
        batch.ids.push(s.id.clone());
        batch.color.push(rot90_image(&s.color, j)?);
        batch.depth.push(rot90_image(&s.depth, k)?);
        batch.z.push(z);
        batch.j.push(j);
        batch.k.push(k);
        batch.domain.push(s.domain);
    }
    Ok(batch)
}

/// Absolute-rotation pretext: only the colour image is turned, by a uniform
/// `i`, and the label is `i`. Depth passes through untouched.
pub fn make_absolute_rotation_batch(samples: &[&PairedSample], rng: &mut Rng) -> Result<RotationBatch> {
    check_batch(samples)?;
    let mut batch = RotationBatch::with_capacity(samples.len());
    for s in samples {
        let i = rng.random_range(0..4);
        batch.ids.push(s.id.clone());
        batch.color.push(rot90_image(&s.color, i)?);
        batch.depth.push(s.depth.clone());
        batch.z.push(i);
        batch.j.push(i);
        batch.k.push(0);
        batch.domain.push(s.domain);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;
    use proptest::prelude::*;

    fn numbered(n: usize, ch: usize) -> Image {
        Image::from_fn(n, n, ch, |y, x, c| (100 * (y * n + x) + c) as f32)
    }

    fn sample(id: &str, n: usize, seed: f32) -> PairedSample {
        PairedSample::new(
            id,
            Image::from_fn(n, n, 3, |y, x, c| seed + (y * 31 + x * 7 + c) as f32),
            Image::from_fn(n, n, 3, |y, x, c| -seed - (y * 5 + x * 13 + c) as f32),
            Some(0),
            Domain::Source,
        )
        .unwrap()
    }

    #[test]
    fn quarter_turn_permutes_indices_like_brute_force_oracle() {
        let img = numbered(3, 1);
        let out = rot90_image(&img, 1).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(out.get(c, 3 - 1 - r, 0), img.get(r, c, 0));
            }
        }
        // first row of the original becomes the last column
        assert_eq!(out.data(), &[600.0, 300.0, 0.0, 700.0, 400.0, 100.0, 800.0, 500.0, 200.0]);
    }

    #[test]
    fn rotation_group_laws() {
        let img = numbered(4, 2);
        assert_eq!(rot90_image(&img, 0).unwrap(), img);
        let twice = rot90_image(&rot90_image(&img, 1).unwrap(), 1).unwrap();
        assert_eq!(twice, rot90_image(&img, 2).unwrap());
        let full = rot90_image(&rot90_image(&img, 3).unwrap(), 1).unwrap();
        assert_eq!(full, img);
    }

    #[test]
    fn rot90_rejects_bad_input() {
        assert!(matches!(rot90_image(&Image::new(2, 3, 1), 1), Err(Error::NonSquare { .. })));
        assert!(rot90_image(&Image::new(2, 2, 1), 4).is_err());
    }

    #[test]
    fn label_matches_figure_example_and_cancels() {
        assert_eq!(relative_label(0, 1), 1);
        assert_eq!(relative_label(2, 2), 0);
        assert_eq!(relative_label(3, 0), 1);
    }

    #[test]
    fn label_table_enumeration() {
        let mut counts = [0; 4];
        for j in 0..4 {
            for k in 0..4 {
                let want = ((k as i32 - j as i32).rem_euclid(4)) as usize;
                assert_eq!(relative_label(j, k), want);
                counts[want] += 1;
            }
        }
        assert_eq!(counts, [4; 4]);
    }

    #[test]
    #[should_panic]
    fn label_out_of_range_panics() {
        relative_label(4, 0);
    }

    #[test]
    fn rotation_batch_labels_are_balanced() {
        let s = sample("a", 2, 0.0);
        let refs = vec![&s; 4096];
        let batch = make_rotation_batch(&refs, &mut rng::stream(7, 0)).unwrap();
        let mut counts = [0usize; 4];
        let mut jc = [0usize; 4];
        for i in 0..batch.len() {
            assert_eq!(batch.z[i], relative_label(batch.j[i], batch.k[i]));
            counts[batch.z[i]] += 1;
            jc[batch.j[i]] += 1;
        }
        for c in counts.iter().chain(&jc) {
            let f = *c as f64 / 4096.0;
            assert!((0.22..=0.28).contains(&f), "{counts:?} {jc:?}");
        }
    }

    #[test]
    fn rotation_batch_is_deterministic_and_invertible() {
        let samples: Vec<PairedSample> = (0..16).map(|i| sample("s", 5, i as f32)).collect();
        let refs: Vec<&PairedSample> = samples.iter().collect();
        let a = make_rotation_batch(&refs, &mut rng::stream(1, 2)).unwrap();
        let b = make_rotation_batch(&refs, &mut rng::stream(1, 2)).unwrap();
        assert_eq!(a, b);
        for (i, s) in samples.iter().enumerate() {
            let c = rot90_image(&a.color[i], (4 - a.j[i]) % 4).unwrap();
            let d = rot90_image(&a.depth[i], (4 - a.k[i]) % 4).unwrap();
            assert_eq!(c, s.color);
            assert_eq!(d, s.depth);
        }
    }

    #[test]
    fn absolute_batch_rotates_colour_only() {
        let s = sample("a", 3, 1.0);
        let refs = vec![&s; 4096];
        let batch = make_absolute_rotation_batch(&refs, &mut rng::stream(3, 0)).unwrap();
        let mut counts = [0usize; 4];
        for i in 0..batch.len() {
            counts[batch.z[i]] += 1;
            assert_eq!(batch.depth[i], s.depth);
            assert_eq!(batch.color[i], rot90_image(&s.color, batch.z[i]).unwrap());
            if batch.z[i] == 0 {
                assert_eq!(batch.color[i], s.color);
            }
        }
        for c in counts {
            assert!((0.22..=0.28).contains(&(c as f64 / 4096.0)));
        }
        let again = make_absolute_rotation_batch(&refs[..8], &mut rng::stream(3, 0)).unwrap();
        assert_eq!(again.z[..], batch.z[..8]);
    }

    proptest! {
        #[test]
        fn joint_rotation_never_changes_the_label(j in 0usize..4, k in 0usize..4, m in 0usize..4) {
            prop_assert_eq!(relative_label((j + m) % 4, (k + m) % 4), relative_label(j, k));
        }

        #[test]
        fn rot90_is_a_pixel_permutation(n in 1usize..7, turns in 0usize..4, seed in 0u32..1000) {
            let img = Image::from_fn(n, n, 2, |y, x, c| ((y * 7919 + x * 104729 + c * 13 + seed as usize) % 997) as f32);
            let out = rot90_image(&img, turns).unwrap();
            let mut a = img.data().to_vec();
            let mut b = out.data().to_vec();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
        }
    }
}
