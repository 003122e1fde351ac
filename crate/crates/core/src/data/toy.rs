//! Procedural two-domain dataset of chiral block shapes.
//!
//! Each class is a fixed polyomino without rotational symmetry. A sample shows
//! one shape at a random quarter-turn pose and a small random offset; the colour
//! modality is the filled shape over a background, the depth modality is the
//! shape's clipped inside-distance field rendered as raw depth and then
//! colourised. Source and target differ only by their [`Appearance`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{colorize_depth, Domain, PairedSample};
use crate::rng::{self, Rng};
use crate::{Error, Image, Result};

const GRID: usize = 5;
const CELLS: usize = 7;
const SHAPE_SEED: u64 = 0x5EED_0F5A_A9E5;
/// Fraction of the image side covered by the shape grid.
const SPAN: f32 = 0.6;
const BASE_DEPTH: f32 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Appearance {
    /// Shape colours; one is drawn per sample.
    pub foreground: Vec<[f32; 3]>,
    /// Background colours; one is drawn per sample.
    pub background: Vec<[f32; 3]>,
    /// Standard deviation of i.i.d. per-pixel colour noise.
    pub texture_noise: f32,
    /// Box-blur radius applied to the clean colour rendering.
    pub blur_radius: usize,
    /// Standard deviation of i.i.d. raw depth noise, in pixel units.
    pub depth_noise: f32,
}

impl Default for Appearance {
    fn default() -> Self {
        Appearance::synthetic()
    }
}

impl Appearance {
    /// Clean, saturated renderings.
    pub fn synthetic() -> Self {
        Appearance {
            foreground: vec![[0.95, 0.25, 0.2], [0.95, 0.75, 0.1], [0.9, 0.45, 0.1]],
            background: vec![[0.1, 0.1, 0.12], [0.2, 0.15, 0.1]],
            texture_noise: 0.02,
            blur_radius: 0,
            depth_noise: 0.02,
        }
    }

    /// Dim, low-contrast, noisy and blurred renderings.
    pub fn real() -> Self {
        Appearance {
            foreground: vec![[0.25, 0.45, 0.7], [0.3, 0.6, 0.55], [0.45, 0.4, 0.65]],
            background: vec![[0.55, 0.55, 0.5], [0.45, 0.5, 0.55]],
            texture_noise: 0.12,
            blur_radius: 1,
            depth_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ToyShiftSpec {
    pub num_classes: usize,
    pub samples_per_domain: usize,
    pub image_size: usize,
    pub source: Appearance,
    pub target: Appearance,
    /// Draw every sample's pose uniformly over the four quarter-turns;
    /// otherwise every shape is upright.
    pub randomize_pose: bool,
    pub seed: u64,
}

impl Default for ToyShiftSpec {
    fn default() -> Self {
        ToyShiftSpec {
            num_classes: 4,
            samples_per_domain: 2000,
            image_size: 64,
            source: Appearance::synthetic(),
            target: Appearance::real(),
            randomize_pose: true,
            seed: 0,
        }
    }
}

/// Latent variables of one generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLatent {
    pub class: usize,
    /// Clockwise quarter-turns applied to the upright shape.
    pub pose: usize,
    /// Top-left corner of the shape grid, in pixels.
    pub offset: (f32, f32),
    pub foreground: [f32; 3],
    pub background: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub source: Vec<PairedSample>,
    pub target: Vec<PairedSample>,
    pub source_latents: Vec<ToyLatent>,
    pub target_latents: Vec<ToyLatent>,
}

impl ToyDataset {
    pub fn latents(&self, domain: Domain) -> &[ToyLatent] {
        match domain {
            Domain::Source => &self.source_latents,
            Domain::Target => &self.target_latents,
        }
    }
}

type Cells = Vec<(usize, usize)>;

fn normalized(cells: &[(usize, usize)]) -> Cells {
    let r0 = cells.iter().map(|c| c.0).min().unwrap_or(0);
    let c0 = cells.iter().map(|c| c.1).min().unwrap_or(0);
    let mut v: Cells = cells.iter().map(|&(r, c)| (r - r0, c - c0)).collect();
    v.sort_unstable();
    v
}

/// Clockwise quarter-turn of grid cells about the grid centre.
fn turn(cells: &[(usize, usize)]) -> Cells {
    cells.iter().map(|&(r, c)| (c, GRID - 1 - r)).collect()
}

fn rotations(cells: &[(usize, usize)]) -> [Cells; 4] {
    let r1 = turn(cells);
    let r2 = turn(&r1);
    let r3 = turn(&r2);
    [cells.to_vec(), r1, r2, r3]
}

fn random_polyomino(rng: &mut Rng) -> Cells {
    let mut cells = vec![(GRID / 2, GRID / 2)];
    while cells.len() < CELLS {
        let (r, c) = cells[rng.random_range(0..cells.len())];
        let (dr, dc) = [(0i32, 1i32), (1, 0), (0, -1), (-1, 0)][rng.random_range(0..4)];
        let (nr, nc) = (r as i32 + dr, c as i32 + dc);
        if nr < 0 || nc < 0 || nr >= GRID as i32 || nc >= GRID as i32 {
            continue;
        }
        let cell = (nr as usize, nc as usize);
        if !cells.contains(&cell) {
            cells.push(cell);
        }
    }
    cells
}

/// Upright cell sets of the first `n` classes: no two share a shape under
/// rotation and translation, and no shape is invariant under a non-trivial
/// quarter-turn. The sets are recentred in the grid so rotation keeps them inside.
pub fn class_shapes(n: usize) -> Vec<Cells> {
    let mut rng = rng::stream(SHAPE_SEED, 0);
    let mut shapes: Vec<Cells> = Vec::with_capacity(n);
    let mut seen: Vec<Cells> = Vec::new();
    while shapes.len() < n {
        let cells = random_polyomino(&mut rng);
        let forms: Vec<Cells> = rotations(&cells).iter().map(|c| normalized(c)).collect();
        let symmetric = forms[1..].iter().any(|f| *f == forms[0]);
        let duplicate = forms.iter().any(|f| seen.contains(f));
        if symmetric || duplicate {
            continue;
        }
        seen.extend(forms);
        let norm = normalized(&cells);
        let hr = norm.iter().map(|c| c.0).max().unwrap_or(0) + 1;
        let wc = norm.iter().map(|c| c.1).max().unwrap_or(0) + 1;
        let (dr, dc) = ((GRID - hr) / 2, (GRID - wc) / 2);
        shapes.push(norm.into_iter().map(|(r, c)| (r + dr, c + dc)).collect());
    }
    shapes
}

fn box_blur(img: &Image, radius: usize) -> Image {
    if radius == 0 {
        return img.clone();
    }
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let r = radius as isize;
    let pass = |src: &Image, horizontal: bool| {
        Image::from_fn(h, w, ch, |y, x, c| {
            let mut s = 0.0;
            let mut k = 0.0;
            for d in -r..=r {
                let (yy, xx) = if horizontal {
                    (y as isize, x as isize + d)
                } else {
                    (y as isize + d, x as isize)
                };
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    s += src.get(yy as usize, xx as usize, c);
                    k += 1.0;
                }
            }
            s / k
        })
    };
    pass(&pass(img, true), false)
}

/// Two-pass chamfer distance from each object pixel to the nearest background pixel.
fn inside_distance(mask: &[bool], size: usize) -> Vec<f32> {
    const DIAG: f32 = core::f32::consts::SQRT_2;
    let big = (2 * size) as f32;
    let mut d: Vec<f32> = mask.iter().map(|&m| if m { big } else { 0.0 }).collect();
    let get = |d: &[f32], y: isize, x: isize| {
        if y < 0 || x < 0 || y >= size as isize || x >= size as isize {
            0.0
        } else {
            d[y as usize * size + x as usize]
        }
    };
    for y in 0..size as isize {
        for x in 0..size as isize {
            let i = y as usize * size + x as usize;
            if d[i] == 0.0 {
                continue;
            }
            let v = d[i]
                .min(get(&d, y, x - 1) + 1.0)
                .min(get(&d, y - 1, x) + 1.0)
                .min(get(&d, y - 1, x - 1) + DIAG)
                .min(get(&d, y - 1, x + 1) + DIAG);
            d[i] = v;
        }
    }
    for y in (0..size as isize).rev() {
        for x in (0..size as isize).rev() {
            let i = y as usize * size + x as usize;
            if d[i] == 0.0 {
                continue;
            }
            let v = d[i]
                .min(get(&d, y, x + 1) + 1.0)
                .min(get(&d, y + 1, x) + 1.0)
                .min(get(&d, y + 1, x + 1) + DIAG)
                .min(get(&d, y + 1, x - 1) + DIAG);
            d[i] = v;
        }
    }
    d
}

/// Object mask of a latent configuration at `size x size`.
pub fn shape_mask(shapes: &[Cells], latent: &ToyLatent, size: usize) -> Vec<bool> {
    let mut cells = shapes[latent.class].clone();
    for _ in 0..latent.pose {
        cells = turn(&cells);
    }
    let mut grid = [[false; GRID]; GRID];
    for &(r, c) in &cells {
        grid[r][c] = true;
    }
    let cell = SPAN * size as f32 / GRID as f32;
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let gy = (y as f32 + 0.5 - latent.offset.0) / cell;
            let gx = (x as f32 + 0.5 - latent.offset.1) / cell;
            if gy >= 0.0 && gx >= 0.0 && (gy as usize) < GRID && (gx as usize) < GRID {
                mask[y * size + x] = grid[gy as usize][gx as usize];
            }
        }
    }
    mask
}

fn draw_latent(spec: &ToyShiftSpec, appearance: &Appearance, index: usize, rng: &mut Rng) -> ToyLatent {
    let size = spec.image_size as f32;
    let margin = (1.0 - SPAN) * 0.5 * size;
    let jitter = 0.5 * margin;
    let pose = if spec.randomize_pose { rng.random_range(0..4) } else { 0 };
    let offset = (
        margin + rng.random_range(-jitter..=jitter),
        margin + rng.random_range(-jitter..=jitter),
    );
    let pick = |rng: &mut Rng, palette: &[[f32; 3]]| {
        if palette.is_empty() {
            [0.5; 3]
        } else {
            palette[rng.random_range(0..palette.len())]
        }
    };
    let foreground = pick(rng, &appearance.foreground);
    let background = pick(rng, &appearance.background);
    ToyLatent {
        class: index % spec.num_classes,
        pose,
        offset,
        foreground,
        background,
    }
}

/// Render both modalities of a latent configuration. `rng` supplies the pixel noise.
pub fn render(
    shapes: &[Cells],
    latent: &ToyLatent,
    appearance: &Appearance,
    size: usize,
    rng: &mut Rng,
) -> Result<(Image, Image, Vec<bool>)> {
    let mask = shape_mask(shapes, latent, size);
    let clean = Image::from_fn(size, size, 3, |y, x, c| {
        if mask[y * size + x] {
            latent.foreground[c]
        } else {
            latent.background[c]
        }
    });
    let mut color = box_blur(&clean, appearance.blur_radius);
    if appearance.texture_noise > 0.0 {
        let noise = Normal::new(0.0f32, appearance.texture_noise)
            .map_err(|e| Error::InvalidArgument(format!("texture noise: {e}")))?;
        for v in color.data_mut() {
            *v += noise.sample(rng);
        }
    }
    for v in color.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    let cell = SPAN * size as f32 / GRID as f32;
    let plateau = 0.5 * cell;
    let dist = inside_distance(&mask, size);
    let mut raw: Vec<f32> = dist.iter().map(|&d| BASE_DEPTH - d.min(plateau)).collect();
    if appearance.depth_noise > 0.0 {
        let noise = Normal::new(0.0f32, appearance.depth_noise)
            .map_err(|e| Error::InvalidArgument(format!("depth noise: {e}")))?;
        for v in raw.iter_mut() {
            *v = (*v + noise.sample(rng)).max(1.0);
        }
    }
    let depth = colorize_depth(&Image::from_vec(size, size, 1, raw)?)?;
    Ok((color, depth, mask))
}

fn domain_stream(domain: Domain) -> u64 {
    match domain {
        Domain::Source => 11,
        Domain::Target => 12,
    }
}

/// Generate both domains. Every sample draws from its own substream of
/// `spec.seed`, so the output is a pure function of the spec.
pub fn generate_toy_shift(spec: &ToyShiftSpec) -> Result<ToyDataset> {
    if spec.num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "toy shift needs at least 2 classes, got {}",
            spec.num_classes
        )));
    }
    if spec.image_size < 8 {
        return Err(Error::InvalidArgument(format!("image size {} is too small", spec.image_size)));
    }
    let shapes = class_shapes(spec.num_classes);
    let mut out = ToyDataset {
        source: Vec::with_capacity(spec.samples_per_domain),
        target: Vec::with_capacity(spec.samples_per_domain),
        source_latents: Vec::with_capacity(spec.samples_per_domain),
        target_latents: Vec::with_capacity(spec.samples_per_domain),
    };
    for domain in [Domain::Source, Domain::Target] {
        let appearance = match domain {
            Domain::Source => &spec.source,
            Domain::Target => &spec.target,
        };
        let tag = match domain {
            Domain::Source => "src",
            Domain::Target => "tgt",
        };
        for i in 0..spec.samples_per_domain {
            let mut r = rng::substream(spec.seed, domain_stream(domain), i as u64);
            let latent = draw_latent(spec, appearance, i, &mut r);
            let (color, depth, _) = render(&shapes, &latent, appearance, spec.image_size, &mut r)?;
            let sample = PairedSample::new(format!("{tag}-{i:06}"), color, depth, Some(latent.class), domain)?;
            match domain {
                Domain::Source => {
                    out.source.push(sample);
                    out.source_latents.push(latent);
                }
                Domain::Target => {
                    out.target.push(sample);
                    out.target_latents.push(latent);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, n: usize) -> ToyShiftSpec {
        ToyShiftSpec {
            samples_per_domain: n,
            image_size: 32,
            seed,
            ..ToyShiftSpec::default()
        }
    }

    #[test]
    fn shapes_are_distinct_and_chiral_under_rotation() {
        let shapes = class_shapes(8);
        for (i, s) in shapes.iter().enumerate() {
            let forms: Vec<Cells> = rotations(s).iter().map(|c| normalized(c)).collect();
            for k in 1..4 {
                assert_ne!(forms[0], forms[k], "class {i} symmetric under {k} turns");
            }
            for other in &shapes[i + 1..] {
                assert!(!forms.contains(&normalized(other)));
            }
            assert!(s.iter().all(|&(r, c)| r < GRID && c < GRID));
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let a = generate_toy_shift(&small(3, 20)).unwrap();
        let b = generate_toy_shift(&small(3, 20)).unwrap();
        assert_eq!(a, b);
        let c = generate_toy_shift(&small(4, 20)).unwrap();
        assert_ne!(a.source, c.source);
    }

    #[test]
    fn modalities_share_the_pose() {
        let mut spec = small(5, 12);
        spec.source.depth_noise = 0.0;
        let data = generate_toy_shift(&spec).unwrap();
        let shapes = class_shapes(spec.num_classes);
        for (s, lat) in data.source.iter().zip(&data.source_latents) {
            let mask = shape_mask(&shapes, lat, spec.image_size);
            // flat background has the camera-facing normal; the object rim does not
            let mut rim_in_mask = 0;
            let mut rim_total = 0;
            for y in 0..spec.image_size {
                for x in 0..spec.image_size {
                    if (s.depth.get(y, x, 2) - 1.0).abs() > 0.02 {
                        rim_total += 1;
                        // central differences reach one pixel past the silhouette
                        let n = spec.image_size;
                        let near = (y.saturating_sub(1)..(y + 2).min(n))
                            .any(|yy| (x.saturating_sub(1)..(x + 2).min(n)).any(|xx| mask[yy * n + xx]));
                        rim_in_mask += near as usize;
                    }
                }
            }
            assert!(rim_total > 0 && rim_in_mask * 10 >= rim_total * 9);
        }
    }

    #[test]
    fn identical_appearance_makes_domains_exchangeable() {
        let mut spec = small(8, 400);
        spec.source.texture_noise = 0.0;
        spec.source.depth_noise = 0.0;
        spec.target = spec.source.clone();
        let data = generate_toy_shift(&spec).unwrap();
        let shapes = class_shapes(spec.num_classes);
        // every target sample is exactly what the source generator renders for its latents
        for (t, lat) in data.target.iter().zip(&data.target_latents) {
            let mut r = rng::stream(0, 0);
            let (c, d, _) = render(&shapes, lat, &spec.source, spec.image_size, &mut r).unwrap();
            assert_eq!((&c, &d), (&t.color, &t.depth));
        }
        // and the latent marginals agree
        for pose in 0..4 {
            let ps = data.source_latents.iter().filter(|l| l.pose == pose).count() as f64 / 400.0;
            let pt = data.target_latents.iter().filter(|l| l.pose == pose).count() as f64 / 400.0;
            assert!((ps - pt).abs() < 0.1);
        }
    }

    #[test]
    fn pose_histogram_is_uniform() {
        let spec = ToyShiftSpec {
            samples_per_domain: 2000,
            image_size: 16,
            ..ToyShiftSpec::default()
        };
        let data = generate_toy_shift(&spec).unwrap();
        let mut hist = [0usize; 4];
        for l in data.source_latents.iter().chain(&data.target_latents) {
            hist[l.pose] += 1;
        }
        for h in hist {
            let f = h as f64 / 4000.0;
            assert!((0.22..=0.28).contains(&f), "{hist:?}");
        }
    }

    // Pearson chi-square independence of pose against class and domain.
    #[test]
    fn pose_is_independent_of_class_and_domain() {
        let spec = ToyShiftSpec {
            samples_per_domain: 2000,
            image_size: 16,
            ..ToyShiftSpec::default()
        };
        let data = generate_toy_shift(&spec).unwrap();
        fn chi2(table: &[Vec<f64>]) -> f64 {
            let total: f64 = table.iter().flatten().sum();
            let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
            let cols: Vec<f64> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
            let mut s = 0.0;
            for (i, r) in table.iter().enumerate() {
                for (j, &o) in r.iter().enumerate() {
                    let e = rows[i] * cols[j] / total;
                    s += (o - e) * (o - e) / e;
                }
            }
            s
        }
        let mut by_class = vec![vec![0.0; 4]; spec.num_classes];
        let mut by_domain = vec![vec![0.0; 4]; 2];
        for (d, lats) in [&data.source_latents, &data.target_latents].iter().enumerate() {
            for l in lats.iter() {
                by_class[l.class][l.pose] += 1.0;
                by_domain[d][l.pose] += 1.0;
            }
        }
        // 0.1% critical values: 9 and 3 degrees of freedom
        assert!(chi2(&by_class) < 27.88);
        assert!(chi2(&by_domain) < 16.27);
    }

    #[test]
    fn upright_when_pose_randomization_is_off() {
        let mut spec = small(1, 40);
        spec.randomize_pose = false;
        let data = generate_toy_shift(&spec).unwrap();
        assert!(data.source_latents.iter().all(|l| l.pose == 0));
    }

    #[test]
    fn fewer_than_two_classes_is_rejected() {
        let spec = ToyShiftSpec {
            num_classes: 1,
            ..small(0, 2)
        };
        assert!(generate_toy_shift(&spec).is_err());
    }
}
