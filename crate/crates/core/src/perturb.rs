//! Input-perturbation baseline: publish every sample with independent
//! spherical-Laplace noise at rate `ε/2`. Labels are published as-is and the
//! output is not renormalized.

use rand::Rng;

use crate::dataset::{LabeledDataset, LabeledSample};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::noise::NoiseRate;
use crate::rng;

pub fn input_perturbation<R: Rng + ?Sized>(ds: &LabeledDataset, epsilon: f64, rng: &mut R) -> Result<LabeledDataset> {
    input_perturbation_with(ds, epsilon, rng, Execution::default())
}

/// Sample `k` draws its noise from substream `k` of one value taken from
/// `rng`, so the output is the same for every execution strategy.
pub fn input_perturbation_with<R: Rng + ?Sized>(
    ds: &LabeledDataset,
    epsilon: f64,
    rng: &mut R,
    exec: Execution,
) -> Result<LabeledDataset> {
    if !ds.norm_bounded() {
        return Err(Error::NotNormBounded { max_norm: ds.max_norm() });
    }
    let rate = NoiseRate::for_input(epsilon, ds.dim())?;
    let base: u64 = rng.random();
    let samples = map_indexed(ds.len(), exec, |k| {
        let s = &ds.samples()[k];
        let eta = rate.sample(&mut rng::stream(base, &[k as u64]));
        LabeledSample::new(s.x.iter().zip(&eta).map(|(a, b)| a + b).collect(), s.y)
    });
    Ok(LabeledDataset::new(samples, ds.classes())?.with_unbounded())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MixtureSpec;
    use crate::linalg::distance;

    fn toy() -> LabeledDataset {
        MixtureSpec::toy().generate(3).unwrap().normalize_max_norm().unwrap().0
    }

    #[test]
    fn labels_kept_and_flag_cleared() {
        let ds = toy();
        let out = input_perturbation(&ds, 1.0, &mut rng::seeded(1)).unwrap();
        assert_eq!(out.labels(), ds.labels());
        assert!(!out.norm_bounded());
    }

    #[test]
    fn huge_epsilon_is_identity() {
        let ds = toy();
        let out = input_perturbation(&ds, 1e9, &mut rng::seeded(1)).unwrap();
        for (a, b) in ds.samples().iter().zip(out.samples()) {
            for (u, v) in a.x.iter().zip(&b.x) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mean_displacement_is_two_d_over_epsilon() {
        let ds = MixtureSpec::toy_sized(20_000).generate(3).unwrap().normalize_max_norm().unwrap().0;
        let out = input_perturbation(&ds, 1.0, &mut rng::seeded(2)).unwrap();
        let mean =
            ds.samples().iter().zip(out.samples()).map(|(a, b)| distance(&a.x, &b.x)).sum::<f64>() / ds.len() as f64;
        assert!((mean / 4.0 - 1.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn execution_strategy_does_not_change_output() {
        let ds = toy();
        let a = input_perturbation_with(&ds, 0.5, &mut rng::seeded(4), Execution::Sequential).unwrap();
        let b = input_perturbation_with(&ds, 0.5, &mut rng::seeded(4), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn requires_norm_bound() {
        let ds = MixtureSpec::toy().generate(3).unwrap();
        assert!(matches!(input_perturbation(&ds, 1.0, &mut rng::seeded(1)), Err(Error::NotNormBounded { .. })));
    }
}
