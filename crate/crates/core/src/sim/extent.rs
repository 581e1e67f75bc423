//! Synthetic class-conditional vessel size model.
//!
//! The numbers below are invented for testing; they are loosely shaped after
//! typical hull proportions but carry no statistical provenance. Categories
//! sharing a [`SizeGroup`] have identical size distributions, so only the
//! six groups are separable from extent alone.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::category::VesselCategory;
use crate::classifier::FeatureVector;
use crate::io::Extent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeGroup {
    LargeMerchant,
    Passenger,
    MidSize,
    FastCraft,
    Workboat,
    SmallCraft,
}

impl SizeGroup {
    pub const ALL: [SizeGroup; 6] = [
        SizeGroup::LargeMerchant,
        SizeGroup::Passenger,
        SizeGroup::MidSize,
        SizeGroup::FastCraft,
        SizeGroup::Workboat,
        SizeGroup::SmallCraft,
    ];

    pub fn of(c: VesselCategory) -> Self {
        use VesselCategory::*;
        match c {
            Cargo | Tanker => SizeGroup::LargeMerchant,
            Passenger | MedicalNonConflict => SizeGroup::Passenger,
            Fishing | OtherUnknownReserved => SizeGroup::MidSize,
            HighSpeedCraft | WingInGround => SizeGroup::FastCraft,
            TugTowing | PilotBoat | SearchAndRescue | AntiPollutionLaw | DredgingMilitarySailboat => {
                SizeGroup::Workboat
            }
            Pleasure => SizeGroup::SmallCraft,
        }
    }

    /// Median length (m) and median length/width ratio.
    fn medians(self) -> (f64, f64) {
        match self {
            SizeGroup::LargeMerchant => (200.0, 6.5),
            SizeGroup::Passenger => (110.0, 4.2),
            SizeGroup::MidSize => (35.0, 4.0),
            SizeGroup::FastCraft => (45.0, 7.0),
            SizeGroup::Workboat => (25.0, 2.6),
            SizeGroup::SmallCraft => (10.0, 3.0),
        }
    }
}

/// Log-normal spread of both length and aspect.
pub const LOG_SIZE_SIGMA: f64 = 0.12;

/// Draws a hull extent for category `c`. Aspect is floored at 1.
pub fn sample_extent<R: Rng + ?Sized>(c: VesselCategory, rng: &mut R) -> Extent {
    let (len, aspect) = SizeGroup::of(c).medians();
    let n = Normal::new(0.0, LOG_SIZE_SIGMA).expect("valid sigma");
    let length = len * n.sample(rng).exp();
    let aspect = (aspect * n.sample(rng).exp()).max(1.0);
    Extent {
        length,
        width: length / aspect,
    }
}

/// `n` labelled feature vectors with categories drawn uniformly.
pub fn feature_dataset<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(FeatureVector, VesselCategory)> {
    (0..n)
        .map(|_| {
            let c = VesselCategory::ALL[rng.random_range(0..VesselCategory::ALL.len())];
            let e = sample_extent(c, rng);
            let f = FeatureVector::from_extent(e.length, e.width).expect("positive extent");
            (f, c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn medians_match_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut logs: Vec<f64> = (0..4001)
            .map(|_| sample_extent(VesselCategory::Cargo, &mut rng).length.ln())
            .collect();
        logs.sort_by(f64::total_cmp);
        assert!((logs[2000].exp() / 200.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn every_group_is_populated() {
        for g in SizeGroup::ALL {
            assert!(VesselCategory::ALL.iter().any(|c| SizeGroup::of(*c) == g));
        }
    }
}
