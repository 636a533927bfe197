//! Location-token codec: quantizes normalized coordinates into discrete bins
//! and renders/parses the `<loc_K>` token text grounding models consume and
//! produce.
//!
//! 1000 bins per axis, floor quantization clamped to the top bin, midpoint
//! dequantization. Boxes are four tokens in x1,y1,x2,y2 order; points are two
//! tokens in x,y order. The `loc_` prefix is configurable for other model
//! families.

use regex::Regex;

use crate::error::{Error, Result};
use crate::model::{BBox, Point};

/// Bins per normalized axis.
pub const BINS: u32 = 1000;

/// One quantized coordinate bin in `[0, BINS-1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocToken(u16);

impl LocToken {
    pub fn new(index: u32) -> Result<Self> {
        if index >= BINS {
            return Err(Error::Geometry(format!(
                "location token index {index} outside [0, {}]",
                BINS - 1
            )));
        }
        Ok(Self(index as u16))
    }

    pub fn index(self) -> u32 {
        u32::from(self.0)
    }
}

/// Quantize a normalized coordinate: `min(floor(v * 1000), 999)`.
pub fn quantize(v: f64) -> Result<LocToken> {
    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
        return Err(Error::OutOfRange {
            what: "coordinate",
            value: v,
        });
    }
    let index = ((v * f64::from(BINS)).floor() as u32).min(BINS - 1);
    Ok(LocToken(index as u16))
}

/// Bin midpoint: `(index + 0.5) / 1000`. Round-trip error is at most half a
/// bin width (0.0005).
pub fn dequantize(t: LocToken) -> f64 {
    (f64::from(t.0) + 0.5) / f64::from(BINS)
}

/// Tokens recovered from model text plus the text with valid tokens removed.
///
/// Malformed `<loc_…>` fragments (non-numeric, index >= 1000) are kept in the
/// residual and reported as warnings rather than silently dropped.
#[derive(Debug, Clone, Default)]
pub struct ParsedLocations {
    pub tokens: Vec<LocToken>,
    pub residual: String,
    pub warnings: Vec<String>,
}

impl ParsedLocations {
    /// Interpret exactly four tokens as a box, if they form a valid one.
    pub fn as_box(&self) -> Option<BBox> {
        if self.tokens.len() != 4 {
            return None;
        }
        let v: Vec<f64> = self.tokens.iter().map(|t| dequantize(*t)).collect();
        BBox::new(v[0], v[1], v[2], v[3]).ok()
    }

    /// Interpret exactly two tokens as a point.
    pub fn as_point(&self) -> Option<Point> {
        if self.tokens.len() != 2 {
            return None;
        }
        Point::new(dequantize(self.tokens[0]), dequantize(self.tokens[1])).ok()
    }

    /// Interpret consecutive groups of four tokens as boxes; trailing tokens
    /// and invalid groups are skipped.
    pub fn boxes(&self) -> Vec<BBox> {
        self.tokens
            .chunks_exact(4)
            .filter_map(|c| {
                BBox::new(
                    dequantize(c[0]),
                    dequantize(c[1]),
                    dequantize(c[2]),
                    dequantize(c[3]),
                )
                .ok()
            })
            .collect()
    }
}

/// Textual token format, `<loc_K>` by default.
#[derive(Debug, Clone)]
pub struct TokenFormat {
    prefix: String,
    pattern: Regex,
}

impl TokenFormat {
    pub fn new(prefix: impl Into<String>) -> Self {
        let prefix = prefix.into();
        let pattern = Regex::new(&format!("<{}([^<>]*)>", regex::escape(&prefix)))
            .expect("token pattern is valid");
        Self { prefix, pattern }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn render(&self, t: LocToken) -> String {
        format!("<{}{}>", self.prefix, t.index())
    }

    /// Four tokens, x1 y1 x2 y2, no separators.
    pub fn encode_box(&self, b: &BBox) -> Result<String> {
        let toks = [
            quantize(b.x1)?,
            quantize(b.y1)?,
            quantize(b.x2)?,
            quantize(b.y2)?,
        ];
        Ok(toks.iter().map(|t| self.render(*t)).collect())
    }

    /// Two tokens, x y.
    pub fn encode_point(&self, p: Point) -> Result<String> {
        Ok(format!(
            "{}{}",
            self.render(quantize(p.x)?),
            self.render(quantize(p.y)?)
        ))
    }

    /// Extract every maximal valid token occurrence in order. Valid tokens
    /// are removed from the residual; malformed fragments stay and warn.
    pub fn parse_locations(&self, text: &str) -> ParsedLocations {
        let mut parsed = ParsedLocations::default();
        let mut cursor = 0usize;
        for caps in self.pattern.captures_iter(text) {
            let whole = caps.get(0).expect("group 0 always present");
            let body = &caps[1];
            let valid = !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit());
            let token = if valid {
                match body.parse::<u32>().ok().and_then(|k| LocToken::new(k).ok()) {
                    Some(t) => Some(t),
                    None => {
                        parsed.warnings.push(format!(
                            "out-of-range location token {}",
                            whole.as_str()
                        ));
                        None
                    }
                }
            } else {
                parsed
                    .warnings
                    .push(format!("malformed location token {}", whole.as_str()));
                None
            };
            parsed.residual.push_str(&text[cursor..whole.start()]);
            match token {
                Some(t) => parsed.tokens.push(t),
                None => parsed.residual.push_str(whole.as_str()),
            }
            cursor = whole.end();
        }
        parsed.residual.push_str(&text[cursor..]);
        parsed
    }
}

impl Default for TokenFormat {
    fn default() -> Self {
        Self::new("loc_")
    }
}

/// Encode with the default `<loc_K>` format.
pub fn encode_box(b: &BBox) -> Result<String> {
    TokenFormat::default().encode_box(b)
}

/// Encode a point with the default `<loc_K>` format.
pub fn encode_point(p: Point) -> Result<String> {
    TokenFormat::default().encode_point(p)
}

/// Parse with the default `<loc_K>` format.
pub fn parse_locations(text: &str) -> ParsedLocations {
    TokenFormat::default().parse_locations(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0).unwrap().index(), 0);
        assert_eq!(quantize(1.0).unwrap().index(), 999);
        assert_eq!(quantize(0.7385).unwrap().index(), 738);
        assert!(quantize(1.2).is_err());
        assert!(quantize(-0.1).is_err());
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(LocToken::new(0).unwrap()), 0.0005);
        assert_eq!(dequantize(LocToken::new(999).unwrap()), 0.9995);
        assert_eq!(dequantize(LocToken::new(738).unwrap()), 0.7385);
    }

    #[test]
    fn encode_box_examples() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(encode_box(&b).unwrap(), "<loc_0><loc_0><loc_999><loc_999>");
        let b = BBox::new(0.25, 0.25, 0.75, 0.75).unwrap();
        assert_eq!(
            encode_box(&b).unwrap(),
            "<loc_250><loc_250><loc_750><loc_750>"
        );
        let b = BBox::new(0.5, 0.5, 0.5, 0.5).unwrap();
        assert_eq!(
            encode_box(&b).unwrap(),
            "<loc_500><loc_500><loc_500><loc_500>"
        );
    }

    #[test]
    fn parse_extracts_tokens_and_residual() {
        let p = parse_locations("click<loc_10><loc_20>");
        assert_eq!(
            p.tokens.iter().map(|t| t.index()).collect::<Vec<_>>(),
            vec![10, 20]
        );
        assert_eq!(p.residual, "click");
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn parse_without_tokens_keeps_text() {
        let p = parse_locations("no tokens here");
        assert!(p.tokens.is_empty());
        assert_eq!(p.residual, "no tokens here");
    }

    #[test]
    fn parse_flags_out_of_range() {
        let p = parse_locations("<loc_1000>");
        assert!(p.tokens.is_empty());
        assert_eq!(p.warnings.len(), 1);
        assert!(p.warnings[0].contains("out-of-range"));
    }

    #[test]
    fn parse_flags_non_numeric() {
        let p = parse_locations("a<loc_x7>b<loc_>c");
        assert!(p.tokens.is_empty());
        assert_eq!(p.warnings.len(), 2);
        assert_eq!(p.residual, "a<loc_x7>b<loc_>c");
    }

    #[test]
    fn custom_prefix_round_trip() {
        let fmt = TokenFormat::new("bin");
        let b = BBox::new(0.1, 0.2, 0.3, 0.4).unwrap();
        let text = fmt.encode_box(&b).unwrap();
        assert_eq!(text, "<bin100><bin200><bin300><bin400>");
        let parsed = fmt.parse_locations(&text);
        assert_eq!(parsed.tokens.len(), 4);
        assert!(parsed.as_box().is_some());
    }

    #[test]
    fn point_groups_parse() {
        let p = Point::new(0.5, 0.25).unwrap();
        let text = encode_point(p).unwrap();
        assert_eq!(text, "<loc_500><loc_250>");
        let parsed = parse_locations(&text);
        let q = parsed.as_point().unwrap();
        assert_eq!((q.x, q.y), (0.5005, 0.2505));
    }

    proptest! {
        #[test]
        fn round_trip_within_half_bin(v in 0.0f64..=1.0) {
            let back = dequantize(quantize(v).unwrap());
            prop_assert!((back - v).abs() <= 0.0005);
        }

        #[test]
        fn quantize_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(lo).unwrap() <= quantize(hi).unwrap());
        }

        #[test]
        fn parse_recovers_encoded_box(
            x1 in 0.0f64..=1.0, y1 in 0.0f64..=1.0,
            dx in 0.0f64..=1.0, dy in 0.0f64..=1.0,
        ) {
            let b = BBox::new(x1 * (1.0 - dx), y1 * (1.0 - dy),
                              x1 * (1.0 - dx) + dx, y1 * (1.0 - dy) + dy).unwrap();
            let parsed = parse_locations(&encode_box(&b).unwrap());
            prop_assert!(parsed.warnings.is_empty());
            prop_assert_eq!(parsed.residual.as_str(), "");
            let idx: Vec<u32> = parsed.tokens.iter().map(|t| t.index()).collect();
            let expect = vec![
                quantize(b.x1).unwrap().index(),
                quantize(b.y1).unwrap().index(),
                quantize(b.x2).unwrap().index(),
                quantize(b.y2).unwrap().index(),
            ];
            prop_assert_eq!(idx, expect);
        }

        #[test]
        fn decoded_center_stays_inside_wide_boxes(
            x1 in 0.0f64..0.9, y1 in 0.0f64..0.9,
            w in 0.002f64..0.1, h in 0.002f64..0.1,
        ) {
            // holds whenever the box is wider/taller than one bin
            let b = BBox::new(x1, y1, (x1 + w).min(1.0), (y1 + h).min(1.0)).unwrap();
            let parsed = parse_locations(&encode_box(&b).unwrap());
            let decoded = parsed.as_box().expect("encoded box parses back");
            prop_assert!(b.contains(decoded.center()));
        }
    }
}
