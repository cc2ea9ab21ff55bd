//! Small synthetic image datasets.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::haar::{ImageShape, Pixels};
use crate::oracle::PointMixture;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// One fixed image.
    SinglePoint,
    /// Two constant images `-a` and `+a`, with weight `mixture_weight` on `+a`.
    /// All their content sits in the low band, along a single direction.
    PointMixture,
    /// Checkerboards at two phases and two scales plus small noise.
    CheckerTexture,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::SinglePoint => "single_point",
            DatasetKind::PointMixture => "point_mixture",
            DatasetKind::CheckerTexture => "checker_texture",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "single_point" => Some(DatasetKind::SinglePoint),
            "point_mixture" => Some(DatasetKind::PointMixture),
            "checker_texture" => Some(DatasetKind::CheckerTexture),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub shape: ImageShape,
    pub atom_scale: f64,
    pub mixture_weight: f64,
    pub texture_noise: f64,
    /// Attach one class label per atom.
    pub labels: bool,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, shape: ImageShape) -> Self {
        Self {
            kind,
            shape,
            atom_scale: 0.5,
            mixture_weight: 0.5,
            texture_noise: 0.05,
            labels: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (_, h, w) = self.shape.dims();
        if h > 8 || w > 8 {
            return Err(Error::Config(format!(
                "dataset images are at most 8x8, got {}",
                self.shape
            )));
        }
        if !(self.atom_scale > 0.0 && self.atom_scale <= 1.0) {
            return Err(Error::Config(format!(
                "atom_scale must lie in (0, 1], got {}",
                self.atom_scale
            )));
        }
        if !(self.mixture_weight > 0.0 && self.mixture_weight < 1.0) {
            return Err(Error::Config(format!(
                "mixture_weight must lie in (0, 1), got {}",
                self.mixture_weight
            )));
        }
        if !(self.texture_noise >= 0.0 && self.texture_noise <= 0.5) {
            return Err(Error::Config(format!(
                "texture_noise must lie in [0, 0.5], got {}",
                self.texture_noise
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Dataset> {
        self.validate()?;
        let shape = self.shape;
        let (atoms, weights) = match self.kind {
            DatasetKind::SinglePoint => {
                let values = (0..shape.len()).map(|i| 0.8 * (1.3 * i as f64 + 0.4).sin()).collect();
                (vec![Pixels::from_vec(shape, values)?], vec![1.0])
            }
            DatasetKind::PointMixture => (
                vec![
                    Pixels::constant(shape, -self.atom_scale),
                    Pixels::constant(shape, self.atom_scale),
                ],
                vec![1.0 - self.mixture_weight, self.mixture_weight],
            ),
            DatasetKind::CheckerTexture => {
                let mut atoms = Vec::new();
                for cell in [1, 2] {
                    for phase in [0, 1] {
                        atoms.push(checkerboard(shape, cell, phase, 0.8)?);
                    }
                }
                (atoms, vec![0.25; 4])
            }
        };
        Ok(Dataset {
            spec: self.clone(),
            atoms,
            weights,
        })
    }
}

/// `+-amp` checkerboard with square cells of side `cell`.
pub fn checkerboard(shape: ImageShape, cell: usize, phase: usize, amp: f64) -> Result<Pixels> {
    let (c, h, w) = shape.dims();
    let mut v = Vec::with_capacity(shape.len());
    for _ in 0..c {
        for i in 0..h {
            for j in 0..w {
                let odd = (i / cell + j / cell + phase) % 2 == 1;
                v.push(if odd { amp } else { -amp });
            }
        }
    }
    Pixels::from_vec(shape, v)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    spec: DatasetSpec,
    atoms: Vec<Pixels>,
    weights: Vec<f64>,
}

impl Dataset {
    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn atoms(&self) -> &[Pixels] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_classes(&self) -> usize {
        if self.spec.labels {
            self.atoms.len()
        } else {
            0
        }
    }

    /// The exact data distribution, when it has finite support.
    pub fn mixture(&self) -> Option<PointMixture> {
        match self.spec.kind {
            DatasetKind::CheckerTexture => None,
            _ => PointMixture::from_images(&self.atoms, self.weights.clone()).ok(),
        }
    }

    /// One draw and its atom index.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (Pixels, usize) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.atoms.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let atom = &self.atoms[k];
        if self.spec.kind != DatasetKind::CheckerTexture || self.spec.texture_noise == 0.0 {
            return (atom.clone(), k);
        }
        let noisy = atom
            .array()
            .mapv(|v| (v + self.spec.texture_noise * rng.sample::<f64, _>(StandardNormal)).clamp(-1.0, 1.0));
        (Pixels::from_raw(noisy), k)
    }

    pub fn label_of(&self, atom: usize) -> Option<usize> {
        self.spec.labels.then_some(atom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::dwt2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(h: usize) -> ImageShape {
        ImageShape::new(1, h, h).unwrap()
    }

    #[test]
    fn values_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in [
            DatasetKind::SinglePoint,
            DatasetKind::PointMixture,
            DatasetKind::CheckerTexture,
        ] {
            let mut spec = DatasetSpec::new(kind, shape(8));
            spec.texture_noise = 0.5;
            let ds = spec.build().unwrap();
            for _ in 0..50 {
                let (x, _) = ds.draw(&mut rng);
                assert!(x.as_slice().iter().all(|v| v.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn mixture_frequencies() {
        let mut spec = DatasetSpec::new(DatasetKind::PointMixture, shape(2));
        spec.mixture_weight = 0.3;
        let ds = spec.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let plus = (0..n).filter(|_| ds.draw(&mut rng).1 == 1).count() as f64 / n as f64;
        assert!((plus - 0.3).abs() < 0.015, "{plus}");
    }

    #[test]
    fn mixture_lives_in_one_low_coordinate() {
        let ds = DatasetSpec::new(DatasetKind::PointMixture, shape(2)).build().unwrap();
        let b = dwt2(&ds.atoms()[1]);
        assert_eq!(b.low_slice(), &[1.0]);
        assert!(b.high_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checker_scales_split_the_bands() {
        let fine = dwt2(&checkerboard(shape(8), 1, 0, 0.8).unwrap());
        let coarse = dwt2(&checkerboard(shape(8), 2, 0, 0.8).unwrap());
        assert!(fine.low_norm_sq() < 1e-24);
        assert!(coarse.high_norm_sq() < 1e-24);
    }

    #[test]
    fn rejects_large_images_and_bad_weights() {
        assert!(DatasetSpec::new(DatasetKind::SinglePoint, shape(10)).build().is_err());
        let mut spec = DatasetSpec::new(DatasetKind::PointMixture, shape(2));
        spec.mixture_weight = 1.0;
        assert!(spec.build().is_err());
    }
}
