//! Synthetic segmentation scenes with a controllable domain shift.
//!
//! A scene is a background (class 0) with a few rectangles and disks of
//! classes `1..K`. Each class has a fixed prototype intensity vector over the
//! channels; a pixel's features are its class prototype plus Gaussian noise.
//!
//! The target domain applies, with strength `θ`, a per-channel additive bias
//! `θ·b`, a contrast factor `max(0.1, 1 − a·θ)` around zero, and extra noise
//! of standard deviation `c·θ·σ`. `θ = 0` leaves scenes bit-identical.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::{seeded_rng, Rng64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Rect {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        class: usize,
    },
    Disk {
        row: usize,
        col: usize,
        radius: usize,
        class: usize,
    },
}

impl Region {
    fn contains(&self, r: usize, c: usize) -> bool {
        match *self {
            Region::Rect {
                top,
                left,
                height,
                width,
                ..
            } => r >= top && r < top + height && c >= left && c < left + width,
            Region::Disk {
                row, col, radius, ..
            } => {
                let dr = r as isize - row as isize;
                let dc = c as isize - col as isize;
                dr * dr + dc * dc <= (radius * radius) as isize
            }
        }
    }

    fn class(&self) -> usize {
        match *self {
            Region::Rect { class, .. } | Region::Disk { class, .. } => class,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneStyle {
    pub classes: usize,
    pub channels: usize,
    pub min_regions: usize,
    pub max_regions: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Distance scale of class prototypes.
    pub separation: f64,
    /// Per-pixel noise standard deviation in the source domain.
    pub noise: f64,
}

impl Default for SceneStyle {
    fn default() -> Self {
        Self {
            classes: 4,
            channels: 3,
            min_regions: 2,
            max_regions: 4,
            min_size: 3,
            max_size: 7,
            separation: 1.0,
            noise: 0.9,
        }
    }
}

impl SceneStyle {
    /// Prototype of class `k`: evenly spaced phases projected onto the channels.
    pub fn prototype(&self, class: usize) -> Vec<f64> {
        let phase = 2.0 * std::f64::consts::PI * class as f64 / self.classes as f64;
        (0..self.channels)
            .map(|c| {
                let offset = 2.0 * std::f64::consts::PI * c as f64 / self.channels.max(3) as f64;
                self.separation * (phase - offset).cos()
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("classes", "need at least two classes"));
        }
        if self.channels == 0 {
            return Err(Error::invalid("channels", "need at least one channel"));
        }
        if self.min_regions > self.max_regions
            || self.min_size == 0
            || self.min_size > self.max_size
        {
            return Err(Error::invalid(
                "regions",
                "inconsistent region count or size bounds",
            ));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::invalid("noise", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainShift {
    pub theta: f64,
    pub bias: Vec<f64>,
    pub contrast_slope: f64,
    pub noise_slope: f64,
}

impl DomainShift {
    pub fn none() -> Self {
        Self::with_theta(0.0)
    }

    pub fn with_theta(theta: f64) -> Self {
        Self {
            theta,
            bias: vec![0.5, -0.3, 0.15],
            contrast_slope: 0.3,
            noise_slope: 0.5,
        }
    }

    pub fn contrast(&self) -> f64 {
        (1.0 - self.contrast_slope * self.theta).max(0.1)
    }
}

/// An `H × W` scene; features are stored one pixel per row in row-major pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridScene<T> {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub features: Array2<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> GridScene<T> {
    pub fn new(
        height: usize,
        width: usize,
        classes: usize,
        features: Array2<T>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let pixels = height * width;
        if features.nrows() != pixels || labels.len() != pixels {
            return Err(Error::shape(
                "scene",
                format!(
                    "{height}x{width} scene with {} feature rows and {} labels",
                    features.nrows(),
                    labels.len()
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(Self {
            height,
            width,
            classes,
            features,
            labels,
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn channels(&self) -> usize {
        self.features.ncols()
    }

    pub fn label_at(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }
}

/// Class map for the given regions; later regions paint over earlier ones.
pub fn render_labels(height: usize, width: usize, regions: &[Region]) -> Vec<usize> {
    let mut labels = vec![0; height * width];
    for region in regions {
        for r in 0..height {
            for c in 0..width {
                if region.contains(r, c) {
                    labels[r * width + c] = region.class();
                }
            }
        }
    }
    labels
}

/// Scene with a fixed layout and noisy prototype features.
pub fn render_scene<T: Scalar>(
    height: usize,
    width: usize,
    regions: &[Region],
    style: &SceneStyle,
    rng: &mut Rng64,
) -> Result<GridScene<T>> {
    style.validate()?;
    let labels = render_labels(height, width, regions);
    let protos: Vec<Vec<f64>> = (0..style.classes).map(|k| style.prototype(k)).collect();
    let noise =
        Normal::new(0.0, style.noise).map_err(|e| Error::invalid("noise", e.to_string()))?;
    let mut features = Array2::zeros((height * width, style.channels));
    for (p, &label) in labels.iter().enumerate() {
        let proto = protos.get(label).ok_or(Error::LabelOutOfRange {
            label,
            classes: style.classes,
        })?;
        for (c, mu) in proto.iter().enumerate() {
            features[[p, c]] = T::lit(mu + noise.sample(rng));
        }
    }
    GridScene::new(height, width, style.classes, features, labels)
}

fn random_regions(height: usize, width: usize, style: &SceneStyle, rng: &mut Rng64) -> Vec<Region> {
    let count = rng.random_range(style.min_regions..=style.max_regions);
    (0..count)
        .map(|_| {
            let class = rng.random_range(1..style.classes);
            let size = rng.random_range(style.min_size..=style.max_size);
            if rng.random_bool(0.5) {
                let h = size.min(height);
                let w = rng.random_range(style.min_size..=style.max_size).min(width);
                Region::Rect {
                    top: rng.random_range(0..=height - h),
                    left: rng.random_range(0..=width - w),
                    height: h,
                    width: w,
                    class,
                }
            } else {
                let radius = (size / 2).max(1);
                Region::Disk {
                    row: rng.random_range(0..height),
                    col: rng.random_range(0..width),
                    radius,
                    class,
                }
            }
        })
        .collect()
}

/// Applies a domain shift in place; draws noise only when it is nonzero.
pub fn apply_shift<T: Scalar>(
    scene: &mut GridScene<T>,
    shift: &DomainShift,
    style: &SceneStyle,
    rng: &mut Rng64,
) {
    if shift.theta == 0.0 {
        return;
    }
    let contrast = T::lit(shift.contrast());
    let extra = shift.noise_slope * shift.theta * style.noise;
    let noise = (extra > 0.0).then(|| Normal::new(0.0, extra).expect("finite positive sd"));
    let channels = scene.channels();
    for mut row in scene.features.rows_mut() {
        for c in 0..channels {
            let b = shift
                .bias
                .get(c % shift.bias.len().max(1))
                .copied()
                .unwrap_or(0.0);
            let mut v = row[c] * contrast + T::lit(shift.theta * b);
            if let Some(n) = &noise {
                v += T::lit(n.sample(rng));
            }
            row[c] = v;
        }
    }
}

/// `count` random scenes; deterministic in `seed`. With `θ = 0` the output
/// equals the unshifted generator for the same seed.
pub fn gen_grid_scenes<T: Scalar>(
    count: usize,
    height: usize,
    width: usize,
    style: &SceneStyle,
    shift: &DomainShift,
    seed: u64,
) -> Result<Vec<GridScene<T>>> {
    if height < 8 || width < 8 {
        return Err(Error::invalid(
            "size",
            format!("{height}x{width} is below 8x8"),
        ));
    }
    if shift.theta < 0.0 || !shift.theta.is_finite() {
        return Err(Error::invalid(
            "theta",
            "domain shift must be finite and nonnegative",
        ));
    }
    style.validate()?;
    let mut rng = seeded_rng(seed);
    let mut shift_rng = seeded_rng(seed ^ 0x5348_4946_5400_0000);
    (0..count)
        .map(|_| {
            let regions = random_regions(height, width, style, &mut rng);
            let mut scene = render_scene(height, width, &regions, style, &mut rng)?;
            apply_shift(&mut scene, shift, style, &mut shift_rng);
            Ok(scene)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shift_is_identity() {
        let style = SceneStyle::default();
        let a: Vec<GridScene<f64>> =
            gen_grid_scenes(3, 10, 12, &style, &DomainShift::none(), 5).unwrap();
        let b: Vec<GridScene<f64>> =
            gen_grid_scenes(3, 10, 12, &style, &DomainShift::with_theta(0.0), 5).unwrap();
        assert_eq!(a, b);
        let c: Vec<GridScene<f64>> =
            gen_grid_scenes(3, 10, 12, &style, &DomainShift::with_theta(1.0), 5).unwrap();
        assert_ne!(a[0].features, c[0].features);
        assert_eq!(a[0].labels, c[0].labels);
    }

    #[test]
    fn centered_square_labels() {
        let style = SceneStyle {
            classes: 2,
            ..SceneStyle::default()
        };
        let square = Region::Rect {
            top: 3,
            left: 3,
            height: 4,
            width: 4,
            class: 1,
        };
        let scene: GridScene<f64> =
            render_scene(10, 10, &[square], &style, &mut seeded_rng(0)).unwrap();
        for r in 0..10 {
            for c in 0..10 {
                let inside = (3..7).contains(&r) && (3..7).contains(&c);
                assert_eq!(scene.label_at(r, c), usize::from(inside));
            }
        }
    }

    #[test]
    fn validation() {
        let style = SceneStyle::default();
        assert!(gen_grid_scenes::<f64>(1, 7, 10, &style, &DomainShift::none(), 0).is_err());
        let bad = SceneStyle {
            classes: 1,
            ..SceneStyle::default()
        };
        assert!(gen_grid_scenes::<f64>(1, 8, 8, &bad, &DomainShift::none(), 0).is_err());
    }

    #[test]
    fn prototypes_are_distinct() {
        let style = SceneStyle::default();
        let protos: Vec<_> = (0..style.classes).map(|k| style.prototype(k)).collect();
        for i in 0..protos.len() {
            for j in i + 1..protos.len() {
                let d: f64 = protos[i]
                    .iter()
                    .zip(&protos[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                assert!(d > 0.1);
            }
        }
    }
}
