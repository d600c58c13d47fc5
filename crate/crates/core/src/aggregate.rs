//! Convex weighting schemes over (group, pre-period, post-period) triples and
//! the weighted distribution functions they induce.

use crate::data::{DesignInfo, Group, PanelDataset, TreatmentDesign};
use crate::ecdf::StepDf;
use crate::error::{Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;

/// How a weighting scheme was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    EqualPerGroup,
    EqualAllTriples,
    EventStudy(u32),
    Explicit,
}

/// Nonnegative weights on (group, pre, post) triples summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightScheme {
    weights: BTreeMap<(Group, i32, i32), f64>,
    provenance: Provenance,
}

impl WeightScheme {
    fn from_raw(
        mut weights: BTreeMap<(Group, i32, i32), f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        weights.retain(|_, w| *w != 0.0);
        if weights.is_empty() {
            return Err(Error::NoValidTriples("all weights are zero".into()));
        }
        if let Some((k, &w)) = weights.iter().find(|(_, w)| **w < 0.0 || !w.is_finite()) {
            return Err(Error::Config(format!(
                "weight {w} on triple (g={}, t'={}, t={}) is not a nonnegative real",
                k.0, k.1, k.2
            )));
        }
        let total: f64 = weights.values().sum();
        for w in weights.values_mut() {
            *w /= total;
        }
        Ok(WeightScheme {
            weights,
            provenance,
        })
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn iter(&self) -> impl Iterator<Item = (Group, i32, i32, f64)> + '_ {
        self.weights.iter().map(|(&(g, p, t), &w)| (g, p, t, w))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.values().sum()
    }

    pub fn weight(&self, group: Group, pre: i32, post: i32) -> f64 {
        self.weights.get(&(group, pre, post)).copied().unwrap_or(0.0)
    }

    /// Check that every keyed triple is a valid (group, pre, post)
    /// combination under the design.
    pub fn validate_against(&self, design: &DesignInfo) -> Result<()> {
        for (&(g, pre, post), _) in &self.weights {
            let adoption = g.adoption_period(design.design).ok_or_else(|| {
                Error::Config(format!("weights reference non-treated group {g}"))
            })?;
            if pre >= adoption || pre == 0 {
                return Err(Error::InvalidPrePeriod { pre, group: g });
            }
            if post < adoption {
                return Err(Error::InvalidPostPeriod { post, group: g });
            }
        }
        Ok(())
    }
}

/// Valid pre-treatment periods for a group with the given adoption period:
/// all observed periods strictly before adoption, excluding the reserved 0.
fn valid_pre_periods(design: &DesignInfo, adoption: i32) -> Vec<i32> {
    let mut pre: Vec<i32> = design
        .pre_periods
        .iter()
        .chain(design.post_periods.iter())
        .copied()
        .filter(|&t| t < adoption && t != 0)
        .collect();
    // two-period designs keep their conventional labels {0, 1}
    if design.design == TreatmentDesign::TwoPeriod {
        pre = vec![0];
    }
    pre.sort_unstable();
    pre
}

fn valid_post_periods(design: &DesignInfo, adoption: i32) -> Vec<i32> {
    design
        .post_periods
        .iter()
        .copied()
        .filter(|&t| t >= adoption)
        .collect()
}

fn adoption_of(design: &DesignInfo, group: Group) -> Result<i32> {
    group
        .adoption_period(design.design)
        .ok_or_else(|| Error::NoValidTriples(format!("group {g} is never treated", g = group)))
}

/// Equal weights over every valid (pre, post) pair of one treated group.
pub fn equal_group_weights(design: &DesignInfo, group: Group) -> Result<WeightScheme> {
    if !design.groups.contains(&group) {
        return Err(Error::NoValidTriples(format!(
            "group {group} not present in the data"
        )));
    }
    let adoption = adoption_of(design, group)?;
    let pre = valid_pre_periods(design, adoption);
    let post = valid_post_periods(design, adoption);
    if pre.is_empty() || post.is_empty() {
        return Err(Error::NoValidTriples(format!(
            "group {group} has no valid (pre, post) period pair"
        )));
    }
    let w = 1.0 / (pre.len() * post.len()) as f64;
    let mut weights = BTreeMap::new();
    for &p in &pre {
        for &t in &post {
            weights.insert((group, p, t), w);
        }
    }
    WeightScheme::from_raw(weights, Provenance::EqualPerGroup)
}

/// Equal weights over every valid triple of every treated group.
pub fn equal_weights_all(design: &DesignInfo) -> Result<WeightScheme> {
    let mut weights = BTreeMap::new();
    for &g in &design.groups {
        let Some(adoption) = g.adoption_period(design.design) else {
            continue;
        };
        for p in valid_pre_periods(design, adoption) {
            for t in valid_post_periods(design, adoption) {
                weights.insert((g, p, t), 1.0);
            }
        }
    }
    if weights.is_empty() {
        return Err(Error::NoValidTriples("no treated group".into()));
    }
    let n = weights.len() as f64;
    for w in weights.values_mut() {
        *w = 1.0 / n;
    }
    WeightScheme::from_raw(weights, Provenance::EqualAllTriples)
}

/// Event-study weights: mass on post period g + e for every group observed at
/// least e periods after adoption, spread equally over the common
/// pre-treatment periods, with group masses proportional to the empirical
/// unit-level group frequencies among eligible groups.
pub fn event_study_weights(data: &PanelDataset, horizon: u32) -> Result<WeightScheme> {
    let design = data.detect_design();
    event_study_weights_with(&design, horizon, |g| {
        unit_count(data, g, None) as f64
    })
}

/// Same as `event_study_weights` with unit frequencies re-estimated under
/// bootstrap unit weights.
pub(crate) fn event_study_weights_weighted(
    data: &PanelDataset,
    horizon: u32,
    unit_weights: &[f64],
) -> Result<WeightScheme> {
    let design = data.detect_design();
    event_study_weights_with(&design, horizon, |g| {
        weighted_unit_mass(data, g, unit_weights)
    })
}

fn event_study_weights_with(
    design: &DesignInfo,
    horizon: u32,
    group_mass: impl Fn(Group) -> f64,
) -> Result<WeightScheme> {
    let t_max = design
        .post_periods
        .last()
        .copied()
        .ok_or_else(|| Error::NoValidTriples("no post-treatment period".into()))?;
    let common_pre: Vec<i32> = if design.design == TreatmentDesign::TwoPeriod {
        vec![0]
    } else {
        design.pre_periods.clone()
    };
    if common_pre.is_empty() {
        return Err(Error::NoValidTriples("no pre-treatment period".into()));
    }
    let e = horizon as i32;

    // eligible groups: adoption + e still observed
    let mut eligible: Vec<(Group, i32, f64)> = Vec::new();
    let mut total_mass = 0.0;
    for &g in &design.groups {
        let Some(adoption) = g.adoption_period(design.design) else {
            continue;
        };
        if adoption + e > t_max || !design.post_periods.contains(&(adoption + e)) {
            continue;
        }
        let m = group_mass(g);
        if m > 0.0 {
            eligible.push((g, adoption, m));
            total_mass += m;
        }
    }
    if eligible.is_empty() || total_mass <= 0.0 {
        return Err(Error::NoValidTriples(format!(
            "no group is observed {horizon} periods after adoption"
        )));
    }

    let mut weights = BTreeMap::new();
    for &(g, adoption, mass) in &eligible {
        let share = mass / total_mass;
        // number of pre periods available to the group per the formula
        let denom = (common_pre.len() as i32 + adoption - 1).max(1) as f64;
        for &p in &common_pre {
            weights.insert((g, p, adoption + e), share / denom);
        }
    }
    WeightScheme::from_raw(weights, Provenance::EventStudy(horizon))
}

fn unit_count(data: &PanelDataset, group: Group, _w: Option<()>) -> usize {
    let mut seen = vec![false; data.n_units()];
    let mut count = 0usize;
    for r in data.rows() {
        if r.group == group && !seen[r.unit as usize] {
            seen[r.unit as usize] = true;
            count += 1;
        }
    }
    count
}

fn weighted_unit_mass(data: &PanelDataset, group: Group, w: &[f64]) -> f64 {
    let mut seen = vec![false; data.n_units()];
    let mut mass = 0.0;
    for r in data.rows() {
        if r.group == group && !seen[r.unit as usize] {
            seen[r.unit as usize] = true;
            mass += w[r.unit as usize];
        }
    }
    mass
}

/// A user-supplied weighting scheme. Weights must be nonnegative and sum to
/// one up to rounding; sums within [0.999, 1.001] are renormalized, anything
/// else is rejected.
pub fn explicit_weights(
    entries: impl IntoIterator<Item = (Group, i32, i32, f64)>,
) -> Result<WeightScheme> {
    let mut weights = BTreeMap::new();
    for (g, pre, post, w) in entries {
        if w < 0.0 || !w.is_finite() {
            return Err(Error::Config(format!(
                "weight {w} on (g={g}, t'={pre}, t={post}) is not a nonnegative real"
            )));
        }
        if weights.insert((g, pre, post), w).is_some() {
            return Err(Error::Config(format!(
                "duplicate weight entry for (g={g}, t'={pre}, t={post})"
            )));
        }
    }
    let total: f64 = weights.values().sum();
    if !(0.999..=1.001).contains(&total) {
        return Err(Error::NonConvexWeights(total));
    }
    WeightScheme::from_raw(weights, Provenance::Explicit)
}

/// Pointwise convex combination of per-triple DFs.
pub fn weighted_df(
    dfs: &BTreeMap<(Group, i32, i32), StepDf>,
    scheme: &WeightScheme,
    label: impl Into<String>,
) -> Result<StepDf> {
    let mut iter = scheme.iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::NoValidTriples("empty scheme".into()))?;
    let first_df = dfs
        .get(&(first.0, first.1, first.2))
        .ok_or(Error::MissingTripleDf {
            group: first.0,
            pre: first.1,
            post: first.2,
        })?;
    let grid = first_df.grid().clone();
    let mut acc = vec![0.0; grid.len()];
    for (g, pre, post, w) in scheme.iter() {
        let df = dfs.get(&(g, pre, post)).ok_or(Error::MissingTripleDf {
            group: g,
            pre,
            post,
        })?;
        if !df.same_grid(first_df) {
            return Err(Error::GridMismatch);
        }
        for (a, v) in acc.iter_mut().zip(df.values()) {
            *a += w * v;
        }
    }
    let monotone = acc.windows(2).all(|w| w[0] <= w[1]);
    StepDf::new(grid, acc, label, monotone)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DesignRequest, Observation, SamplingScheme};
    use crate::ecdf::Grid;
    use std::sync::Arc;

    fn design(
        design: TreatmentDesign,
        pre: &[i32],
        post: &[i32],
        groups: &[Group],
    ) -> DesignInfo {
        DesignInfo {
            kind: SamplingScheme::RepeatedCrossSection,
            design,
            pre_periods: pre.to_vec(),
            post_periods: post.to_vec(),
            groups: groups.to_vec(),
        }
    }

    #[test]
    fn equal_weights_single_pair() {
        let d = design(
            TreatmentDesign::TwoPeriod,
            &[0],
            &[1],
            &[Group::CONTROL, Group::TREATED],
        );
        let s = equal_group_weights(&d, Group::TREATED).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s.weight(Group::TREATED, 0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_fifteen_pairs() {
        let d = design(
            TreatmentDesign::Nsmp,
            &[-3, -2, -1],
            &[1, 2, 3, 4, 5],
            &[Group::CONTROL, Group::TREATED],
        );
        let s = equal_group_weights(&d, Group::TREATED).unwrap();
        assert_eq!(s.len(), 15);
        for (_, _, _, w) in s.iter() {
            assert!((w - 1.0 / 15.0).abs() < 1e-15);
        }
        assert!((s.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_staggered_group_two() {
        // T = 1 pre period, T = 2 post periods, group adopting at 2:
        // valid pre {-1, 1}, valid post {2}
        let d = design(
            TreatmentDesign::Staggered,
            &[-1],
            &[1, 2],
            &[Group::Label(1), Group::Label(2), Group::Never],
        );
        let s = equal_group_weights(&d, Group::Label(2)).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.weight(Group::Label(2), -1, 2) - 0.5).abs() < 1e-15);
        assert!((s.weight(Group::Label(2), 1, 2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn equal_weights_no_valid_pair_errors() {
        let d = design(
            TreatmentDesign::Staggered,
            &[],
            &[1, 2],
            &[Group::Label(1), Group::Never],
        );
        assert!(matches!(
            equal_group_weights(&d, Group::Label(1)),
            Err(Error::NoValidTriples(_))
        ));
    }

    fn staggered_units(spec: &[(Group, usize)]) -> PanelDataset {
        // every unit observed at periods {-1, 1, 2}
        let mut observations = Vec::new();
        let mut unit = 0usize;
        for &(g, count) in spec {
            for _ in 0..count {
                for t in [-1, 1, 2] {
                    observations.push(Observation {
                        unit_id: format!("u{unit}"),
                        period: t,
                        group: g,
                        outcome: unit as f64,
                        covariates: None,
                    });
                }
                unit += 1;
            }
        }
        PanelDataset::from_observations(observations, vec![], DesignRequest::Staggered).unwrap()
    }

    #[test]
    fn event_study_single_group_all_mass() {
        let data = staggered_units(&[(Group::Label(1), 4), (Group::Never, 4)]);
        let s = event_study_weights(&data, 0).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s.weight(Group::Label(1), -1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn event_study_two_groups_ratio() {
        // equal unit frequencies in groups 1 and 2, e = 0, one common pre
        // period: raw masses (1/2)/1 on (1,-1,1) and (1/2)/2 on (2,-1,2),
        // normalized 2/3 and 1/3
        let data = staggered_units(&[
            (Group::Label(1), 5),
            (Group::Label(2), 5),
            (Group::Never, 5),
        ]);
        let s = event_study_weights(&data, 0).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.weight(Group::Label(1), -1, 1) - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.weight(Group::Label(2), -1, 2) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn event_study_horizon_too_large_errors() {
        let data = staggered_units(&[(Group::Label(1), 3), (Group::Never, 3)]);
        assert!(matches!(
            event_study_weights(&data, 9),
            Err(Error::NoValidTriples(_))
        ));
    }

    #[test]
    fn explicit_weights_renormalize_or_reject() {
        let s = explicit_weights([
            (Group::TREATED, 0, 1, 0.5005),
            (Group::TREATED, 0, 1, 0.0), // duplicate triple
        ]);
        assert!(s.is_err());
        let s = explicit_weights([(Group::TREATED, 0, 1, 0.9995)]).unwrap();
        assert!((s.weight(Group::TREATED, 0, 1) - 1.0).abs() < 1e-12);
        assert!(matches!(
            explicit_weights([(Group::TREATED, 0, 1, 0.90)]),
            Err(Error::NonConvexWeights(_))
        ));
    }

    fn step(grid: &Arc<Grid>, values: Vec<f64>) -> StepDf {
        StepDf::new(grid.clone(), values, "F", true).unwrap()
    }

    #[test]
    fn weighted_df_examples() {
        let grid = Arc::new(Grid::new(vec![0.0, 1.0], 1.0).unwrap());
        let mut dfs = BTreeMap::new();
        dfs.insert((Group::TREATED, -1, 1), step(&grid, vec![0.2, 0.4]));
        dfs.insert((Group::TREATED, -1, 2), step(&grid, vec![0.4, 0.6]));
        let s = explicit_weights([
            (Group::TREATED, -1, 1, 0.5),
            (Group::TREATED, -1, 2, 0.5),
        ])
        .unwrap();
        let avg = weighted_df(&dfs, &s, "avg").unwrap();
        assert!((avg.values()[0] - 0.3).abs() < 1e-15);
        assert!((avg.values()[1] - 0.5).abs() < 1e-15);

        let single = explicit_weights([(Group::TREATED, -1, 1, 1.0)]).unwrap();
        let same = weighted_df(&dfs, &single, "one").unwrap();
        assert_eq!(same.values(), dfs[&(Group::TREATED, -1, 1)].values());
    }

    #[test]
    fn weighted_df_three_way_mean() {
        let grid = Arc::new(Grid::new(vec![0.0], 0.0).unwrap());
        let mut dfs = BTreeMap::new();
        dfs.insert((Group::TREATED, -1, 1), step(&grid, vec![0.1]));
        dfs.insert((Group::TREATED, -1, 2), step(&grid, vec![0.5]));
        dfs.insert((Group::TREATED, -1, 3), step(&grid, vec![0.6]));
        let s = explicit_weights([
            (Group::TREATED, -1, 1, 1.0 / 3.0),
            (Group::TREATED, -1, 2, 1.0 / 3.0),
            (Group::TREATED, -1, 3, 1.0 / 3.0),
        ])
        .unwrap();
        let avg = weighted_df(&dfs, &s, "avg").unwrap();
        assert!((avg.values()[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn weighted_df_missing_triple_errors() {
        let grid = Arc::new(Grid::new(vec![0.0], 0.0).unwrap());
        let mut dfs = BTreeMap::new();
        dfs.insert((Group::TREATED, -1, 1), step(&grid, vec![0.1]));
        let s = explicit_weights([
            (Group::TREATED, -1, 1, 0.5),
            (Group::TREATED, -1, 2, 0.5),
        ])
        .unwrap();
        assert!(matches!(
            weighted_df(&dfs, &s, "avg"),
            Err(Error::MissingTripleDf { .. })
        ));
    }

    #[test]
    fn schemes_sum_to_one_and_support_valid_triples() {
        let d = design(
            TreatmentDesign::Staggered,
            &[-2, -1],
            &[1, 2, 3],
            &[Group::Label(1), Group::Label(2), Group::Never],
        );
        for g in [Group::Label(1), Group::Label(2)] {
            let s = equal_group_weights(&d, g).unwrap();
            assert!((s.sum() - 1.0).abs() < 1e-12);
            s.validate_against(&d).unwrap();
        }
        let all = equal_weights_all(&d).unwrap();
        assert!((all.sum() - 1.0).abs() < 1e-12);
        all.validate_against(&d).unwrap();
        // group 1: pre {-2,-1} x post {1,2,3}; group 2: pre {-2,-1,1} x post {2,3}
        assert_eq!(all.len(), 6 + 6);
    }

    #[test]
    fn weighted_df_is_linear_in_the_scheme() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let grid = Arc::new(Grid::new(vec![0.0, 1.0, 2.0], 2.0).unwrap());
        let keys = [
            (Group::TREATED, -1, 1),
            (Group::TREATED, -1, 2),
            (Group::TREATED, -2, 1),
        ];
        let mut dfs = BTreeMap::new();
        for k in keys {
            let mut v: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            v.sort_by(f64::total_cmp);
            dfs.insert(k, step(&grid, v));
        }
        let s1 = explicit_weights([(keys[0].0, keys[0].1, keys[0].2, 1.0)]).unwrap();
        let s2 = explicit_weights([
            (keys[1].0, keys[1].1, keys[1].2, 0.5),
            (keys[2].0, keys[2].1, keys[2].2, 0.5),
        ])
        .unwrap();
        let lambda = 0.3;
        let mixed = explicit_weights([
            (keys[0].0, keys[0].1, keys[0].2, lambda),
            (keys[1].0, keys[1].1, keys[1].2, 0.5 * (1.0 - lambda)),
            (keys[2].0, keys[2].1, keys[2].2, 0.5 * (1.0 - lambda)),
        ])
        .unwrap();
        let w1 = weighted_df(&dfs, &s1, "a").unwrap();
        let w2 = weighted_df(&dfs, &s2, "b").unwrap();
        let wm = weighted_df(&dfs, &mixed, "m").unwrap();
        for i in 0..3 {
            let expect = lambda * w1.values()[i] + (1.0 - lambda) * w2.values()[i];
            assert!((wm.values()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_dtt_distributes_over_triples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let grid = Arc::new(Grid::new(vec![0.0, 1.0], 1.0).unwrap());
        let keys = [(Group::TREATED, -1, 1), (Group::TREATED, -1, 2)];
        let mut treated = BTreeMap::new();
        let mut cf = BTreeMap::new();
        for k in keys {
            treated.insert(k, step(&grid, vec![rng.gen(), rng.gen()]));
            cf.insert(k, step(&grid, vec![rng.gen(), rng.gen()]));
        }
        let s = explicit_weights([
            (keys[0].0, keys[0].1, keys[0].2, 0.25),
            (keys[1].0, keys[1].1, keys[1].2, 0.75),
        ])
        .unwrap();
        let wt = weighted_df(&treated, &s, "t").unwrap();
        let wc = weighted_df(&cf, &s, "c").unwrap();
        for i in 0..2 {
            let lhs = wt.values()[i] - wc.values()[i];
            let rhs: f64 = s
                .iter()
                .map(|(g, p, t, w)| {
                    w * (treated[&(g, p, t)].values()[i] - cf[&(g, p, t)].values()[i])
                })
                .sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
