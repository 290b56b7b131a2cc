//! Seeded random probe fields for the sampled certificates.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fragcoag_core::grid::{MassGrid, NormMode, SpatialGrid, StateField};

/// Nonnegative fields: three Gaussian bumps in `m` times a smooth positive
/// spatial factor. Identical seeds give identical fields.
pub fn random_probes(
    mg: &Arc<MassGrid>,
    sg: &Arc<SpatialGrid>,
    mode: NormMode,
    count: usize,
    seed: u64,
) -> Vec<StateField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m_max = mg.m_max();
    let (x0, x1) = (sg.lower(0), sg.upper(0));
    (0..count)
        .map(|_| {
            let bumps: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..m_max),
                        rng.gen_range(0.05..0.3) * m_max,
                    )
                })
                .collect();
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            StateField::from_fn(mg.clone(), sg.clone(), mode, move |x, m| {
                let s = (x[0] - x0) / (x1 - x0);
                let spatial = 1.0 + 0.5 * (std::f64::consts::TAU * s + phase).sin();
                spatial * bumps.iter().map(|(c, mu, w)| c * (-((m - mu) / w).powi(2)).exp()).sum::<f64>()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probes_are_reproducible_and_nonnegative() {
        let mg = Arc::new(MassGrid::uniform(5.0, 16).unwrap());
        let sg = Arc::new(SpatialGrid::unit_interval());
        let a = random_probes(&mg, &sg, NormMode::Integral, 4, 3);
        let b = random_probes(&mg, &sg, NormMode::Integral, 4, 3);
        let c = random_probes(&mg, &sg, NormMode::Integral, 4, 4);
        assert!(a.iter().zip(&b).all(|(f, g)| f.values() == g.values()));
        assert!(a[0].values() != c[0].values());
        assert!(a.iter().all(|f| f.is_nonnegative()));
    }
}
