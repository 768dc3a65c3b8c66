use std::sync::OnceLock;

use super::CalibError;

const BUILTIN: &str = include_str!("../../data/aruco_4x4_50.v1.txt");

/// Fixed 4x4-bit marker dictionary.
///
/// A payload holds the inner 4x4 cells row-major from the marker's top-left
/// cell, most significant bit first, with 1 meaning a white cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerDictionary {
    pub name: String,
    pub bits_per_side: usize,
    pub codes: Vec<u16>,
}

/// Minimum Hamming distance any two ids (and any id with its own rotations)
/// must keep for single-bit correction to be unambiguous.
pub const MIN_ROTATIONAL_DISTANCE: u32 = 4;

/// Rotate a 4x4 payload a quarter turn clockwise.
pub fn rotate_cw(code: u16) -> u16 {
    let mut out = 0u16;
    for r in 0..4 {
        for c in 0..4 {
            // new[r][c] = old[3 - c][r]
            let bit = (code >> (15 - ((3 - c) * 4 + r))) & 1;
            out |= bit << (15 - (r * 4 + c));
        }
    }
    out
}

pub fn rotations(code: u16) -> [u16; 4] {
    let r1 = rotate_cw(code);
    let r2 = rotate_cw(r1);
    [code, r1, r2, rotate_cw(r2)]
}

pub fn hamming(a: u16, b: u16) -> u32 {
    (a ^ b).count_ones()
}

impl MarkerDictionary {
    /// The shipped 50-id dictionary, parsed and checked once per process.
    pub fn builtin() -> &'static MarkerDictionary {
        static DICT: OnceLock<MarkerDictionary> = OnceLock::new();
        DICT.get_or_init(|| {
            let d = MarkerDictionary::parse(BUILTIN).expect("builtin dictionary parses");
            let dist = d.min_rotational_distance();
            assert!(
                dist >= MIN_ROTATIONAL_DISTANCE,
                "builtin dictionary distance {dist} < {MIN_ROTATIONAL_DISTANCE}"
            );
            d
        })
    }

    /// Parse the line format: `# key: value` headers, then `id code` records
    /// with ids dense from zero.
    pub fn parse(text: &str) -> Result<Self, CalibError> {
        let bad = |line: usize, msg: &str| CalibError::Dictionary(format!("line {line}: {msg}"));
        let mut name = String::from("unnamed");
        let mut bits = 4usize;
        let mut codes = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                if let Some((k, v)) = h.split_once(':') {
                    match k.trim() {
                        "name" => name = v.trim().to_owned(),
                        "bits_per_side" => {
                            bits = v.trim().parse().map_err(|_| bad(n + 1, "bits_per_side"))?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(id), Some(code), None) = (it.next(), it.next(), it.next()) else {
                return Err(bad(n + 1, "expected `id code`"));
            };
            let id: usize = id.parse().map_err(|_| bad(n + 1, "id"))?;
            if id != codes.len() {
                return Err(bad(n + 1, "ids must be dense and ascending"));
            }
            let hex = code.trim_start_matches("0x").trim_start_matches("0X");
            codes.push(u16::from_str_radix(hex, 16).map_err(|_| bad(n + 1, "code"))?);
        }
        if bits != 4 {
            return Err(CalibError::Dictionary(format!(
                "only 4x4 dictionaries are supported, got {bits}"
            )));
        }
        if codes.is_empty() {
            return Err(CalibError::Dictionary("no codes".into()));
        }
        Ok(Self {
            name,
            bits_per_side: bits,
            codes,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Exhaustive minimum distance over all id pairs and all rotations,
    /// including each code against its own non-trivial rotations.
    pub fn min_rotational_distance(&self) -> u32 {
        let mut best = u32::MAX;
        for (i, &a) in self.codes.iter().enumerate() {
            let rots = rotations(a);
            for &r in &rots[1..] {
                best = best.min(hamming(a, r));
            }
            for &b in &self.codes[i + 1..] {
                for r in rotations(b) {
                    best = best.min(hamming(a, r));
                }
            }
        }
        best
    }

    /// Best `(id, distance)` for an observed payload read in one fixed
    /// orientation.
    pub fn nearest(&self, observed: u16) -> (usize, u32) {
        self.codes
            .iter()
            .enumerate()
            .map(|(id, &c)| (id, hamming(observed, c)))
            .min_by_key(|&(id, d)| (d, id))
            .expect("non-empty dictionary")
    }
}
