use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{parse_lines, Parsed};
use crate::error::{Error, Result};
use crate::geo::GeoPosition;

/// Meters per second in one knot.
pub const KNOT_MPS: f64 = 1852.0 / 3600.0;

/// Maritime Mobile Service Identity: nine decimal digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Mmsi(u32);

impl Mmsi {
    pub fn new(value: u64) -> Result<Self> {
        if value <= 999_999_999 {
            Ok(Self(value as u32))
        } else {
            Err(Error::validation(format!("mmsi {value} has more than 9 digits")))
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.len() != 9 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::validation(format!("mmsi {s:?} is not 9 decimal digits")));
        }
        Self::new(s.parse::<u64>().expect("nine ascii digits"))
    }

    pub fn value(self) -> u32 {
        self.0
    }
}

impl std::fmt::Display for Mmsi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:09}", self.0)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MmsiWire {
    Num(u64),
    Str(String),
}

impl<'de> Deserialize<'de> for Mmsi {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match MmsiWire::deserialize(d)? {
            MmsiWire::Num(n) => Mmsi::new(n),
            MmsiWire::Str(s) => Mmsi::parse(&s),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// One decoded AIS position report.
#[derive(Debug, Clone, PartialEq)]
pub struct AisRecord {
    pub t: f64,
    pub mmsi: Option<Mmsi>,
    pub pos: GeoPosition,
    /// Speed over ground, m/s.
    pub sog: Option<f64>,
    /// Course over ground, radians clockwise from north in `[0, 2π)`.
    pub cog: Option<f64>,
    pub ship_type: Option<u16>,
    pub length: Option<f64>,
    pub width: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AisLine {
    t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mmsi: Option<Mmsi>,
    lat: f64,
    lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sog: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sog_unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cog_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ship_type: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
}

fn positive_dimension(name: &str, v: Option<f64>) -> Result<Option<f64>> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => {
            Err(Error::validation(format!("{name} must be positive, got {x}")))
        }
        other => Ok(other),
    }
}

impl TryFrom<AisLine> for AisRecord {
    type Error = Error;

    fn try_from(l: AisLine) -> Result<Self> {
        if !l.t.is_finite() {
            return Err(Error::validation("timestamp is not finite"));
        }
        if !(-90.0..=90.0).contains(&l.lat) {
            return Err(Error::validation("latitude out of range"));
        }
        if !(-180.0..=180.0).contains(&l.lon) {
            return Err(Error::validation("longitude out of range"));
        }
        let pos = GeoPosition::new(l.lat, l.lon)?;
        let scale = match l.sog_unit.as_deref() {
            None | Some("mps") => 1.0,
            Some("kn") => KNOT_MPS,
            Some(other) => return Err(Error::validation(format!("unknown sog_unit {other:?}"))),
        };
        let sog = match l.sog {
            Some(s) if !(s >= 0.0 && s.is_finite()) => {
                return Err(Error::validation(format!("speed over ground must be >= 0, got {s}")))
            }
            Some(s) => Some(s * scale),
            None => None,
        };
        let cog = match l.cog_deg {
            Some(c) if !c.is_finite() => return Err(Error::validation("course is not finite")),
            Some(c) => Some(c.to_radians().rem_euclid(std::f64::consts::TAU)),
            None => None,
        };
        Ok(AisRecord {
            t: l.t,
            mmsi: l.mmsi,
            pos,
            sog,
            cog,
            ship_type: l.ship_type,
            length: positive_dimension("length", l.length)?,
            width: positive_dimension("width", l.width)?,
        })
    }
}

impl From<&AisRecord> for AisLine {
    fn from(r: &AisRecord) -> Self {
        AisLine {
            t: r.t,
            mmsi: r.mmsi,
            lat: r.pos.lat(),
            lon: r.pos.lon(),
            sog: r.sog,
            sog_unit: r.sog.map(|_| "mps".to_string()),
            cog_deg: r.cog.map(f64::to_degrees),
            ship_type: r.ship_type,
            length: r.length,
            width: r.width,
        }
    }
}

/// Parses an AIS JSON Lines stream.
pub fn parse_ais<R: BufRead>(reader: R) -> Result<Parsed<AisRecord>> {
    parse_lines(reader, |l: AisLine| AisRecord::try_from(l))
}

/// Writes records in the canonical AIS JSON Lines format (speeds in m/s).
pub fn write_ais<'a, W: Write>(w: W, records: impl IntoIterator<Item = &'a AisRecord>) -> Result<()> {
    super::write_jsonl(w, records.into_iter().map(AisLine::from))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_input() {
        let p = parse_ais("".as_bytes()).unwrap();
        assert!(p.records.is_empty() && p.diagnostics.is_empty());
    }

    #[test]
    fn latitude_diagnostic() {
        let p = parse_ais(r#"{"t":0,"lat":95,"lon":0,"sog":1,"cog_deg":0}"#.as_bytes()).unwrap();
        assert!(p.records.is_empty());
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].line, 1);
        assert!(p.diagnostics[0].reason.contains("latitude out of range"));
    }

    #[test]
    fn mixed_valid_and_malformed() {
        let input = r#"{"t":0,"mmsi":247000001,"lat":36.0,"lon":14.5,"sog":5,"sog_unit":"kn","cog_deg":90}
{"t":10,"mmsi":"247000001","lat":36.0,"lon":14.6,"sog":2.5,"cog_deg":-90}
{"t":20,"lat":36.0
{"t":30,"lat":36.1,"lon":14.7}
"#;
        let p = parse_ais(input.as_bytes()).unwrap();
        assert_eq!(p.records.len(), 3);
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].line, 3);
        assert!((p.records[0].sog.unwrap() - 5.0 * KNOT_MPS).abs() < 1e-12);
        assert!((p.records[1].cog.unwrap() - 1.5 * std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(p.records[1].mmsi, Some(Mmsi::new(247000001).unwrap()));
        assert_eq!(p.records[2].mmsi, None);
    }

    #[test]
    fn rejects_bad_fields() {
        for line in [
            r#"{"t":0,"mmsi":1234567890,"lat":0,"lon":0}"#,
            r#"{"t":0,"mmsi":"12345","lat":0,"lon":0}"#,
            r#"{"t":0,"lat":0,"lon":0,"sog":-1}"#,
            r#"{"t":0,"lat":0,"lon":0,"sog":1,"sog_unit":"mph"}"#,
            r#"{"t":0,"lat":0,"lon":0,"length":0}"#,
        ] {
            let p = parse_ais(line.as_bytes()).unwrap();
            assert_eq!(p.diagnostics.len(), 1, "{line}");
        }
    }

    #[test]
    fn mmsi_keeps_leading_zeros() {
        let m = Mmsi::parse("002470001").unwrap();
        assert_eq!(m.to_string(), "002470001");
    }

    fn arb_record() -> impl Strategy<Value = AisRecord> {
        (
            0.0f64..1e7,
            proptest::option::of(0u64..=999_999_999),
            -90.0f64..=90.0,
            -180.0f64..180.0,
            proptest::option::of(0.0f64..30.0),
            proptest::option::of(0.0f64..359.99),
            proptest::option::of(0u16..100),
            proptest::option::of((1.0f64..400.0, 1.0f64..60.0)),
        )
            .prop_map(|(t, mmsi, lat, lon, sog, cog, ship_type, dims)| AisRecord {
                t,
                mmsi: mmsi.map(|m| Mmsi::new(m).unwrap()),
                pos: GeoPosition::new(lat, lon).unwrap(),
                sog,
                cog: cog.map(f64::to_radians),
                ship_type,
                length: dims.map(|d| d.0),
                width: dims.map(|d| d.1),
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(records in proptest::collection::vec(arb_record(), 0..20)) {
            let mut buf = Vec::new();
            write_ais(&mut buf, &records).unwrap();
            let back = parse_ais(buf.as_slice()).unwrap();
            prop_assert!(back.diagnostics.is_empty());
            prop_assert_eq!(back.records.len(), records.len());
            for (a, b) in records.iter().zip(&back.records) {
                prop_assert_eq!(a.t, b.t);
                prop_assert_eq!(a.mmsi, b.mmsi);
                prop_assert_eq!(a.pos, b.pos);
                prop_assert_eq!(a.sog, b.sog);
                prop_assert_eq!(a.ship_type, b.ship_type);
                prop_assert_eq!(a.length, b.length);
                prop_assert_eq!(a.width, b.width);
                match (a.cog, b.cog) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                    (x, y) => prop_assert_eq!(x, y),
                }
            }
        }
    }
}
