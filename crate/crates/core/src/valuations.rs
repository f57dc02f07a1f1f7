//! Bid and valuation profiles over additive valuations.
//!
//! The learner treats the reported bids as valuations, so a single
//! [`BidProfile`] type serves both roles. Values live in the unit box by
//! default; misreports are enumerated over a discrete [`ValuationGrid`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default refusal threshold for `|grid|^m`.
pub const DEFAULT_MISREPORT_CAP: usize = 4096;

/// An `n x m` matrix of nonnegative per-item values, one row per bidder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileRepr", into = "ProfileRepr")]
pub struct BidProfile {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProfileRepr {
    n: usize,
    m: usize,
    values: Vec<Vec<f64>>,
}

impl TryFrom<ProfileRepr> for BidProfile {
    type Error = Error;

    fn try_from(repr: ProfileRepr) -> Result<Self> {
        let profile = BidProfile::from_rows(&repr.values)?;
        if profile.n != repr.n {
            return Err(Error::Dimension {
                what: "profile bidder count",
                expected: repr.n,
                got: profile.n,
            });
        }
        if profile.m != repr.m {
            return Err(Error::Dimension {
                what: "profile item count",
                expected: repr.m,
                got: profile.m,
            });
        }
        Ok(profile)
    }
}

impl From<BidProfile> for ProfileRepr {
    fn from(p: BidProfile) -> Self {
        ProfileRepr {
            n: p.n,
            m: p.m,
            values: p.rows().map(<[f64]>::to_vec).collect(),
        }
    }
}

impl BidProfile {
    /// Builds a profile from a row-major value buffer.
    pub fn new(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidValue(format!(
                "profile must have at least one bidder and one item (got {n}x{m})"
            )));
        }
        if values.len() != n * m {
            return Err(Error::Dimension {
                what: "profile values",
                expected: n * m,
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidValue(format!(
                "profile entries must be finite and nonnegative (found {bad})"
            )));
        }
        Ok(Self { n, m, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(n * m);
        for row in rows {
            let row = row.as_ref();
            if row.len() != m {
                return Err(Error::Dimension {
                    what: "profile row length",
                    expected: m,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(n, m, values)
    }

    pub fn zeros(n: usize, m: usize) -> Result<Self> {
        Self::new(n, m, vec![0.0; n * m])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Row-major values, bidder-major.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, bidder: usize, item: usize) -> f64 {
        self.values[bidder * self.m + item]
    }

    pub fn row(&self, bidder: usize) -> &[f64] {
        &self.values[bidder * self.m..(bidder + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.m)
    }

    /// Returns a copy with bidder `i`'s row replaced by `bid`.
    pub fn replace_bidder(&self, i: usize, bid: &[f64]) -> Result<Self> {
        if i >= self.n {
            return Err(Error::Index {
                what: "bidder",
                index: i,
                len: self.n,
            });
        }
        if bid.len() != self.m {
            return Err(Error::Dimension {
                what: "replacement bid",
                expected: self.m,
                got: bid.len(),
            });
        }
        let mut values = self.values.clone();
        values[i * self.m..(i + 1) * self.m].copy_from_slice(bid);
        Self::new(self.n, self.m, values)
    }

    /// Sum of all entries; an upper bound on any IR auction's revenue.
    pub fn total_value(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Ordered, strictly increasing set of permitted per-item values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ValuationGrid {
    levels: Vec<f64>,
}

impl TryFrom<Vec<f64>> for ValuationGrid {
    type Error = Error;

    fn try_from(levels: Vec<f64>) -> Result<Self> {
        Self::new(levels)
    }
}

impl From<ValuationGrid> for Vec<f64> {
    fn from(g: ValuationGrid) -> Self {
        g.levels
    }
}

impl Default for ValuationGrid {
    fn default() -> Self {
        Self::binary()
    }
}

impl ValuationGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidValue(
                "valuation grid must be nonempty".into(),
            ));
        }
        if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidValue(format!(
                "valuation grid levels must lie in [0, 1] (got {levels:?})"
            )));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidValue(format!(
                "valuation grid must be strictly increasing (got {levels:?})"
            )));
        }
        Ok(Self { levels })
    }

    /// The `{0, 1}` grid.
    pub fn binary() -> Self {
        Self {
            levels: vec![0.0, 1.0],
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn contains(&self, value: f64) -> bool {
        self.levels.contains(&value)
    }

    /// Number of misreports `|grid|^m`, saturating in `u128`.
    pub fn misreport_count(&self, m: usize) -> u128 {
        let base = self.levels.len() as u128;
        (0..m).fold(1u128, |acc, _| acc.saturating_mul(base))
    }
}

/// Value of an allocation under additive valuations: `sum_j bid[j] * alloc[j]`.
pub fn additive_value(bid_row: &[f64], allocation_row: &[f64]) -> Result<f64> {
    if bid_row.len() != allocation_row.len() {
        return Err(Error::Dimension {
            what: "allocation row",
            expected: bid_row.len(),
            got: allocation_row.len(),
        });
    }
    if bid_row.iter().chain(allocation_row).any(|x| !x.is_finite()) {
        return Err(Error::InvalidValue(
            "additive_value inputs must be finite".into(),
        ));
    }
    if allocation_row.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidValue(format!(
            "allocation probabilities must lie in [0, 1] (got {allocation_row:?})"
        )));
    }
    Ok(bid_row.iter().zip(allocation_row).map(|(b, a)| b * a).sum())
}

/// All `|grid|^m` bid vectors in lexicographic order over grid indices
/// (last item varies fastest).
pub fn enumerate_misreports(grid: &ValuationGrid, m: usize, cap: usize) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(Error::InvalidValue("item count must be at least 1".into()));
    }
    let requested = grid.misreport_count(m);
    if requested > cap as u128 {
        return Err(Error::MisreportCap { requested, cap });
    }
    let k = grid.len();
    let total = requested as usize;
    let out = (0..total)
        .map(|mut code| {
            let mut bid = vec![0.0; m];
            for slot in bid.iter_mut().rev() {
                *slot = grid.levels[code % k];
                code /= k;
            }
            bid
        })
        .collect();
    Ok(out)
}

/// Draws every entry independently and uniformly from the grid levels.
pub fn sample_profile(grid: &ValuationGrid, n: usize, m: usize, seed: u64) -> Result<BidProfile> {
    let mut rng = rng::stream(seed, &[rng::TAG_PROFILE]);
    let values = (0..n * m)
        .map(|_| grid.levels[rng.random_range(0..grid.len())])
        .collect();
    BidProfile::new(n, m, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn additive_value_examples() {
        assert_eq!(
            additive_value(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]).unwrap(),
            0.0
        );
        assert_eq!(additive_value(&[1.0, 0.0], &[0.5, 0.9]).unwrap(), 0.5);
        let v = additive_value(&[0.3, 0.7, 0.2], &[1.0, 0.5, 0.0]).unwrap();
        // 0.3*1 + 0.7*0.5 + 0.2*0
        assert!((v - 0.65).abs() < 1e-15);
    }

    #[test]
    fn additive_value_rejects_mismatch() {
        assert!(matches!(
            additive_value(&[1.0], &[0.5, 0.5]),
            Err(Error::Dimension { .. })
        ));
        assert!(additive_value(&[1.0], &[1.5]).is_err());
        assert!(additive_value(&[f64::NAN], &[0.5]).is_err());
    }

    #[test]
    fn enumerate_examples() {
        let g = ValuationGrid::binary();
        assert_eq!(
            enumerate_misreports(&g, 1, 4096).unwrap(),
            vec![vec![0.0], vec![1.0]]
        );

        let all = enumerate_misreports(&g, 3, 4096).unwrap();
        assert_eq!(all.len(), 8);
        assert_eq!(all[0], vec![0.0, 0.0, 0.0]);
        assert_eq!(all[1], vec![0.0, 0.0, 1.0]);
        assert_eq!(all[7], vec![1.0, 1.0, 1.0]);

        let g3 = ValuationGrid::new(vec![0.0, 0.5, 1.0]).unwrap();
        let all = enumerate_misreports(&g3, 2, 4096).unwrap();
        assert_eq!(all.len(), 9);
        assert_eq!(all[0], vec![0.0, 0.0]);
        assert_eq!(all[8], vec![1.0, 1.0]);
    }

    #[test]
    fn enumerate_refuses_over_cap() {
        let g = ValuationGrid::binary();
        let err = enumerate_misreports(&g, 13, 4096).unwrap_err();
        assert!(err.to_string().contains("4096"), "{err}");
        assert!(enumerate_misreports(&g, 12, 4096).is_ok());
    }

    #[test]
    fn replace_bidder_examples() {
        let p = BidProfile::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(p.replace_bidder(0, p.row(0)).unwrap(), p);

        let q = p.replace_bidder(0, &[0.0, 0.0]).unwrap();
        assert_eq!(q, BidProfile::from_rows(&[[0.0, 0.0], [0.0, 1.0]]).unwrap());
        assert_eq!(p.row(0), &[1.0, 0.0]);

        let a = p
            .replace_bidder(0, &[0.5, 0.5])
            .unwrap()
            .replace_bidder(1, &[0.2, 0.3])
            .unwrap();
        let b = p
            .replace_bidder(1, &[0.2, 0.3])
            .unwrap()
            .replace_bidder(0, &[0.5, 0.5])
            .unwrap();
        assert_eq!(a, b);

        assert!(matches!(
            p.replace_bidder(2, &[0.0, 0.0]),
            Err(Error::Index { .. })
        ));
        assert!(p.replace_bidder(0, &[0.0]).is_err());
    }

    #[test]
    fn sample_profile_examples() {
        let zero = ValuationGrid::new(vec![0.0]).unwrap();
        assert_eq!(
            sample_profile(&zero, 4, 2, 9).unwrap(),
            BidProfile::zeros(4, 2).unwrap()
        );

        let g = ValuationGrid::binary();
        let a = sample_profile(&g, 5, 3, 42).unwrap();
        assert_eq!(a, sample_profile(&g, 5, 3, 42).unwrap());
        assert!(a.values().iter().all(|v| g.contains(*v)));
    }

    #[test]
    fn sample_profile_mean_matches_uniform_grid() {
        // Uniform over {0, 1} has mean 1/2.
        let g = ValuationGrid::binary();
        let total: f64 = (0..10_000u64)
            .map(|s| sample_profile(&g, 1, 1, s).unwrap().get(0, 0))
            .sum();
        let mean = total / 10_000.0;
        assert!((0.48..=0.52).contains(&mean), "mean {mean}");
    }

    #[test]
    fn grid_validation() {
        assert!(ValuationGrid::new(vec![]).is_err());
        assert!(ValuationGrid::new(vec![1.0, 0.0]).is_err());
        assert!(ValuationGrid::new(vec![0.0, 0.0]).is_err());
        assert!(ValuationGrid::new(vec![0.0, 1.5]).is_err());
    }

    #[test]
    fn profile_json_round_trip() {
        let p = BidProfile::from_rows(&[[1.0, 0.25], [0.0, 0.5]]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"n":2,"m":2,"values":[[1.0,0.25],[0.0,0.5]]}"#);
        assert_eq!(serde_json::from_str::<BidProfile>(&s).unwrap(), p);
        assert!(
            serde_json::from_str::<BidProfile>(r#"{"n":3,"m":2,"values":[[1,0],[0,1]]}"#).is_err()
        );
        assert!(serde_json::from_str::<BidProfile>(r#"{"n":1,"m":1,"values":[[-1]]}"#).is_err());
    }

    proptest! {
        #[test]
        fn enumeration_is_distinct_and_complete(k in 1usize..4, m in 1usize..5) {
            let levels: Vec<f64> = (0..k).map(|i| i as f64 / k as f64).collect();
            let g = ValuationGrid::new(levels).unwrap();
            let all = enumerate_misreports(&g, m, 4096).unwrap();
            prop_assert_eq!(all.len(), k.pow(m as u32));
            let mut keys: Vec<String> = all.iter().map(|v| format!("{v:?}")).collect();
            keys.sort();
            keys.dedup();
            prop_assert_eq!(keys.len(), all.len());
        }

        #[test]
        fn replace_own_row_is_identity(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), 1..5)) {
            let p = BidProfile::from_rows(&rows).unwrap();
            for i in 0..p.n() {
                prop_assert_eq!(p.replace_bidder(i, p.row(i)).unwrap(), p.clone());
            }
        }

        #[test]
        fn additive_value_superposition(
            a in proptest::collection::vec(0.0f64..1.0, 4),
            b in proptest::collection::vec(0.0f64..1.0, 4),
            z in proptest::collection::vec(0.0f64..1.0, 4),
            s in 0.0f64..1.0,
        ) {
            // Linear in the bid row: v(s*a + (1-s)*b, z) = s*v(a, z) + (1-s)*v(b, z).
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| s * x + (1.0 - s) * y).collect();
            let lhs = additive_value(&mix, &z).unwrap();
            let rhs = s * additive_value(&a, &z).unwrap() + (1.0 - s) * additive_value(&b, &z).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
            // And in the allocation row.
            let zmix: Vec<f64> = z.iter().zip(&b).map(|(x, y)| s * x + (1.0 - s) * y).collect();
            let lhs = additive_value(&a, &zmix).unwrap();
            let rhs = s * additive_value(&a, &z).unwrap() + (1.0 - s) * additive_value(&a, &b).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
