//! The fixed 14-way vessel category set and distributions over it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CATEGORIES: usize = 14;

/// Vessel categories derived from the AIS ship type, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VesselCategory {
    AntiPollutionLaw,
    MedicalNonConflict,
    Cargo,
    DredgingMilitarySailboat,
    Fishing,
    HighSpeedCraft,
    OtherUnknownReserved,
    Passenger,
    PilotBoat,
    Pleasure,
    SearchAndRescue,
    Tanker,
    TugTowing,
    WingInGround,
}

impl VesselCategory {
    pub const ALL: [VesselCategory; NUM_CATEGORIES] = [
        VesselCategory::AntiPollutionLaw,
        VesselCategory::MedicalNonConflict,
        VesselCategory::Cargo,
        VesselCategory::DredgingMilitarySailboat,
        VesselCategory::Fishing,
        VesselCategory::HighSpeedCraft,
        VesselCategory::OtherUnknownReserved,
        VesselCategory::Passenger,
        VesselCategory::PilotBoat,
        VesselCategory::Pleasure,
        VesselCategory::SearchAndRescue,
        VesselCategory::Tanker,
        VesselCategory::TugTowing,
        VesselCategory::WingInGround,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            VesselCategory::AntiPollutionLaw => "anti_pollution_law",
            VesselCategory::MedicalNonConflict => "medical_non_conflict",
            VesselCategory::Cargo => "cargo",
            VesselCategory::DredgingMilitarySailboat => "dredging_military_sailboat",
            VesselCategory::Fishing => "fishing",
            VesselCategory::HighSpeedCraft => "high_speed_craft",
            VesselCategory::OtherUnknownReserved => "other_unknown_reserved",
            VesselCategory::Passenger => "passenger",
            VesselCategory::PilotBoat => "pilot_boat",
            VesselCategory::Pleasure => "pleasure",
            VesselCategory::SearchAndRescue => "search_and_rescue",
            VesselCategory::Tanker => "tanker",
            VesselCategory::TugTowing => "tug_towing",
            VesselCategory::WingInGround => "wing_in_ground",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Maps a raw AIS "type of ship and cargo" code onto a category.
    ///
    /// This table is a toolkit convention. Codes outside the defined blocks
    /// fall into `OtherUnknownReserved`.
    pub fn from_ais_ship_type(code: u16) -> Self {
        use VesselCategory::*;
        match code {
            20..=29 => WingInGround,
            30 => Fishing,
            31 | 32 | 52 => TugTowing,
            33 | 35 | 36 => DredgingMilitarySailboat,
            37 => Pleasure,
            40..=49 => HighSpeedCraft,
            50 => PilotBoat,
            51 => SearchAndRescue,
            54 | 55 => AntiPollutionLaw,
            58 | 59 => MedicalNonConflict,
            60..=69 => Passenger,
            70..=79 => Cargo,
            80..=89 => Tanker,
            _ => OtherUnknownReserved,
        }
    }
}

impl std::fmt::Display for VesselCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Probabilities over the 14 categories in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ClassDistribution([f64; NUM_CATEGORIES]);

impl ClassDistribution {
    pub const TOLERANCE: f64 = 1e-9;

    /// Validates nonnegativity and unit sum.
    pub fn new(p: [f64; NUM_CATEGORIES]) -> Result<Self> {
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::validation("class scores must be finite and nonnegative"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::validation(format!(
                "class scores sum to {sum}, expected 1"
            )));
        }
        Ok(Self(p))
    }

    pub fn from_slice(p: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_CATEGORIES] = p.try_into().map_err(|_| {
            Error::validation(format!(
                "expected {NUM_CATEGORIES} class scores, got {}",
                p.len()
            ))
        })?;
        Self::new(arr)
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_CATEGORIES as f64; NUM_CATEGORIES])
    }

    pub fn one_hot(c: VesselCategory) -> Self {
        let mut p = [0.0; NUM_CATEGORIES];
        p[c.index()] = 1.0;
        Self(p)
    }

    /// Normalizes arbitrary nonnegative weights; `None` if they sum to zero.
    pub fn normalized(w: [f64; NUM_CATEGORIES]) -> Option<Self> {
        let sum: f64 = w.iter().sum();
        (sum > 0.0 && sum.is_finite()).then(|| Self(w.map(|v| v / sum)))
    }

    pub fn probs(&self) -> &[f64; NUM_CATEGORIES] {
        &self.0
    }

    pub fn get(&self, c: VesselCategory) -> f64 {
        self.0[c.index()]
    }

    pub fn argmax(&self) -> VesselCategory {
        let mut best = 0;
        for i in 1..NUM_CATEGORIES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        VesselCategory::ALL[best]
    }
}

impl<'de> Deserialize<'de> for ClassDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        ClassDistribution::from_slice(&v).map_err(serde::de::Error::custom)
    }
}

/// Row-stochastic 14×14 confusion matrix: `row[c][j]` is the probability of
/// reporting category `j` when the true category is `c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ConfusionMatrix(Vec<[f64; NUM_CATEGORIES]>);

impl ConfusionMatrix {
    pub fn new(rows: Vec<[f64; NUM_CATEGORIES]>) -> Result<Self> {
        if rows.len() != NUM_CATEGORIES {
            return Err(Error::validation("confusion matrix must have 14 rows"));
        }
        for (i, r) in rows.iter().enumerate() {
            if ClassDistribution::new(*r).is_err() {
                return Err(Error::validation(format!(
                    "confusion row {i} is not a probability vector"
                )));
            }
        }
        Ok(Self(rows))
    }

    /// `accuracy` on the diagonal, the remainder spread uniformly.
    pub fn symmetric(accuracy: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::validation("accuracy must lie in [0, 1]"));
        }
        let off = (1.0 - accuracy) / (NUM_CATEGORIES - 1) as f64;
        let rows = (0..NUM_CATEGORIES)
            .map(|i| {
                let mut r = [off; NUM_CATEGORIES];
                r[i] = accuracy;
                r
            })
            .collect();
        Ok(Self(rows))
    }

    pub fn row(&self, c: usize) -> &[f64; NUM_CATEGORIES] {
        &self.0[c]
    }

    /// Likelihood of a reported score vector given true category `c`:
    /// `Σ_j C[c][j]·s_j`.
    pub fn likelihood(&self, c: usize, scores: &ClassDistribution) -> f64 {
        self.0[c]
            .iter()
            .zip(scores.probs())
            .map(|(a, b)| a * b)
            .sum()
    }
}

impl<'de> Deserialize<'de> for ConfusionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let rows = rows
            .into_iter()
            .map(|r| {
                <[f64; NUM_CATEGORIES]>::try_from(r.as_slice())
                    .map_err(|_| serde::de::Error::custom("confusion rows need 14 entries"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        ConfusionMatrix::new(rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for c in VesselCategory::ALL {
            assert_eq!(VesselCategory::from_name(c.name()), Some(c));
            assert_eq!(VesselCategory::from_index(c.index()), Some(c));
        }
    }

    #[test]
    fn ship_type_table() {
        assert_eq!(VesselCategory::from_ais_ship_type(70), VesselCategory::Cargo);
        assert_eq!(VesselCategory::from_ais_ship_type(84), VesselCategory::Tanker);
        assert_eq!(VesselCategory::from_ais_ship_type(0), VesselCategory::OtherUnknownReserved);
        assert_eq!(VesselCategory::from_ais_ship_type(52), VesselCategory::TugTowing);
    }

    #[test]
    fn distribution_validation() {
        let mut p = [0.0; NUM_CATEGORIES];
        p[0] = 0.9;
        assert!(ClassDistribution::new(p).is_err());
        p[1] = 0.1;
        assert!(ClassDistribution::new(p).is_ok());
        assert!(ClassDistribution::from_slice(&[1.0]).is_err());
        assert_eq!(ClassDistribution::one_hot(VesselCategory::Tanker).argmax(), VesselCategory::Tanker);
    }

    #[test]
    fn symmetric_confusion_rows_sum_to_one() {
        let c = ConfusionMatrix::symmetric(0.8).unwrap();
        for i in 0..NUM_CATEGORIES {
            assert!((c.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let s = ClassDistribution::one_hot(VesselCategory::Cargo);
        assert!((c.likelihood(2, &s) - 0.8).abs() < 1e-12);
    }
}
