use std::collections::BTreeMap;

use super::{AisRecord, Mmsi};
use crate::error::{Error, Result};

/// Time-ordered reports from one vessel with no gap above the assembly
/// threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub mmsi: Mmsi,
    pub points: Vec<AisRecord>,
}

impl Track {
    /// Builds a track, checking the single-mmsi and strictly-increasing-time
    /// invariants.
    pub fn new(mmsi: Mmsi, points: Vec<AisRecord>) -> Result<Self> {
        if points.iter().any(|p| p.mmsi != Some(mmsi)) {
            return Err(Error::validation("track points must all carry the track mmsi"));
        }
        if points.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::validation("track timestamps must strictly increase"));
        }
        Ok(Self { mmsi, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start_time(&self) -> Option<f64> {
        self.points.first().map(|p| p.t)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.points.last().map(|p| p.t)
    }
}

/// Output of [`assemble_tracks`]. Every input record lands in exactly one of
/// the three places.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackAssembly {
    pub tracks: Vec<Track>,
    /// Records without an MMSI; the tracker consumes them as anonymous
    /// measurements.
    pub unlabeled: Vec<AisRecord>,
    /// Later copies of a report whose (mmsi, t) was already seen.
    pub duplicates: Vec<AisRecord>,
}

/// Groups records by MMSI, orders them in time and splits wherever two
/// consecutive reports are more than `gap_threshold` seconds apart.
///
/// Tracks are returned ordered by MMSI, then start time.
pub fn assemble_tracks(records: &[AisRecord], gap_threshold: f64) -> Result<TrackAssembly> {
    if !(gap_threshold > 0.0) {
        return Err(Error::validation("gap threshold must be positive"));
    }
    let mut out = TrackAssembly::default();
    let mut by_mmsi: BTreeMap<Mmsi, Vec<&AisRecord>> = BTreeMap::new();
    for r in records {
        match r.mmsi {
            Some(m) => by_mmsi.entry(m).or_default().push(r),
            None => out.unlabeled.push(r.clone()),
        }
    }
    for (mmsi, mut group) in by_mmsi {
        // stable: of several reports at one instant the first one read wins
        group.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut current: Vec<AisRecord> = Vec::new();
        for r in group {
            match current.last() {
                Some(last) if r.t == last.t => {
                    out.duplicates.push(r.clone());
                    continue;
                }
                Some(last) if r.t - last.t > gap_threshold => {
                    out.tracks.push(Track {
                        mmsi,
                        points: std::mem::take(&mut current),
                    });
                }
                _ => {}
            }
            current.push(r.clone());
        }
        if !current.is_empty() {
            out.tracks.push(Track {
                mmsi,
                points: current,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPosition;
    use proptest::prelude::*;

    fn rec(t: f64, mmsi: Option<u64>) -> AisRecord {
        AisRecord {
            t,
            mmsi: mmsi.map(|m| Mmsi::new(m).unwrap()),
            pos: GeoPosition::new(36.0, 14.0).unwrap(),
            sog: Some(5.0),
            cog: Some(0.0),
            ship_type: None,
            length: None,
            width: None,
        }
    }

    const HOUR: f64 = 3600.0;

    #[test]
    fn small_gaps_make_one_track() {
        let recs: Vec<_> = (0..10).map(|i| rec(i as f64 * 600.0, Some(1))).collect();
        let a = assemble_tracks(&recs, 5.0 * HOUR).unwrap();
        assert_eq!(a.tracks.len(), 1);
        assert_eq!(a.tracks[0].len(), 10);
    }

    #[test]
    fn six_hour_gap_splits() {
        let recs = vec![rec(0.0, Some(1)), rec(600.0, Some(1)), rec(600.0 + 6.0 * HOUR, Some(1))];
        let a = assemble_tracks(&recs, 5.0 * HOUR).unwrap();
        assert_eq!(a.tracks.len(), 2);
        assert_eq!(a.tracks[0].len(), 2);
        assert_eq!(a.tracks[1].len(), 1);
    }

    #[test]
    fn interleaved_vessels() {
        let recs = vec![
            rec(30.0, Some(2)),
            rec(0.0, Some(1)),
            rec(10.0, Some(2)),
            rec(20.0, Some(1)),
            rec(5.0, None),
        ];
        let a = assemble_tracks(&recs, HOUR).unwrap();
        assert_eq!(a.tracks.len(), 2);
        for t in &a.tracks {
            assert!(Track::new(t.mmsi, t.points.clone()).is_ok());
        }
        assert_eq!(a.tracks[0].points.iter().map(|p| p.t).collect::<Vec<_>>(), [0.0, 20.0]);
        assert_eq!(a.tracks[1].points.iter().map(|p| p.t).collect::<Vec<_>>(), [10.0, 30.0]);
        assert_eq!(a.unlabeled.len(), 1);
    }

    #[test]
    fn rejects_nonpositive_threshold() {
        assert!(assemble_tracks(&[], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn covers_labeled_records_exactly_once(
            raw in proptest::collection::vec((0u32..2000, proptest::option::of(0u64..4)), 0..80),
            gap in 1.0f64..500.0,
        ) {
            let recs: Vec<_> = raw.iter().map(|&(t, m)| rec(t as f64, m)).collect();
            let a = assemble_tracks(&recs, gap).unwrap();
            let in_tracks: usize = a.tracks.iter().map(Track::len).sum();
            let labeled = recs.iter().filter(|r| r.mmsi.is_some()).count();
            prop_assert_eq!(in_tracks + a.duplicates.len(), labeled);
            prop_assert_eq!(a.unlabeled.len(), recs.len() - labeled);
            for t in &a.tracks {
                prop_assert!(Track::new(t.mmsi, t.points.clone()).is_ok());
                prop_assert!(t.points.windows(2).all(|w| w[1].t - w[0].t <= gap));
            }
        }
    }
}
