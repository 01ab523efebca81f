//! Census of richness, sufficiency and exceptional flags over Liouville
//! samples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, StopCondition};
use crate::error::{Error, Result};
use crate::model::{rng_for, sample_liouville_with, ModelParams};
use crate::neutral::{exceptional_flags, neutral_space};
use crate::symbolic::{is_rich, symbolic_sequence};

/// Default number of ball collisions per census segment.
pub const DEFAULT_CENSUS_COLLISIONS: usize = 50;
/// Time after which a census run stops even without enough collisions.
pub const CENSUS_TIME_GUARD: f64 = 1e4;
/// Smallest spectral gap accepted as a clean rank decision.
pub const SUFFICIENCY_GAP: f64 = 10.0;

/// Where one sample ended up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensusCategory {
    Discarded,
    NotRich,
    RichFlagged,
    RichCleanSufficient,
    RichCleanInsufficient,
}

/// Outcome of one census sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusSample {
    pub index: usize,
    pub category: CensusCategory,
    pub ball_collisions: usize,
    pub rich: bool,
    pub flagged: bool,
    /// Neutral dimension; `None` when discarded or the rank was indeterminate.
    pub dim: Option<usize>,
    pub spectral_gap: Option<f64>,
    pub sufficient: bool,
    pub rank_indeterminate: bool,
    /// Reason for a discard.
    pub reason: Option<String>,
}

/// Aggregated census.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusReport {
    pub params: ModelParams,
    pub seed: u64,
    pub n_ball_collisions: usize,
    pub n_samples: usize,
    pub n_rich: usize,
    pub n_sufficient: usize,
    pub n_exceptional_flagged: usize,
    pub n_discarded: usize,
    pub n_not_rich: usize,
    pub n_rich_flagged: usize,
    pub n_rich_clean_sufficient: usize,
    pub n_rich_clean_insufficient: usize,
    /// Accepted samples whose rank decision fell inside the ambiguity band.
    pub n_rank_indeterminate: usize,
    /// Accepted samples stopped by the time guard before enough collisions.
    pub n_time_guarded: usize,
    /// `(index, reason)` of every discarded sample.
    pub discards: Vec<(usize, String)>,
}

impl CensusReport {
    pub fn n_accepted(&self) -> usize {
        self.n_samples - self.n_discarded
    }

    /// Rich samples among accepted ones.
    pub fn rich_fraction(&self) -> f64 {
        self.n_rich as f64 / self.n_accepted() as f64
    }

    /// Sufficient samples among rich samples without an exceptional flag.
    pub fn clean_sufficient_fraction(&self) -> f64 {
        let clean = self.n_rich_clean_sufficient + self.n_rich_clean_insufficient;
        self.n_rich_clean_sufficient as f64 / clean as f64
    }

    /// Whether the five categories partition the samples.
    pub fn is_partition(&self) -> bool {
        self.n_discarded
            + self.n_not_rich
            + self.n_rich_flagged
            + self.n_rich_clean_sufficient
            + self.n_rich_clean_insufficient
            == self.n_samples
            && self.n_rich == self.n_rich_flagged + self.n_rich_clean_sufficient + self.n_rich_clean_insufficient
    }
}

fn discard(index: usize, e: &Error) -> CensusSample {
    let reason = match e {
        Error::GrazingImpact { .. } | Error::GrazingJacobian(_) => format!("grazing: {e}"),
        Error::BranchAmbiguity { .. } | Error::BranchWarningsPresent(_) => format!("branch: {e}"),
        _ => e.to_string(),
    };
    CensusSample {
        index,
        category: CensusCategory::Discarded,
        ball_collisions: 0,
        rich: false,
        flagged: false,
        dim: None,
        spectral_gap: None,
        sufficient: false,
        rank_indeterminate: false,
        reason: Some(reason),
    }
}

/// Census of sample `index`.
pub fn census_sample(params: &ModelParams, n_ball_collisions: usize, seed: u64, index: usize) -> CensusSample {
    let run = || -> Result<CensusSample> {
        let mut rng = rng_for(seed, index as u64);
        let x = sample_liouville_with(params, &mut rng)?;
        let stop = StopCondition {
            max_ball_collisions: Some(n_ball_collisions),
            t_max: Some(CENSUS_TIME_GUARD),
            ..Default::default()
        };
        let seg = simulate(&x, &stop, params)?;
        if !seg.branch_warnings.is_empty() {
            return Err(Error::BranchWarningsPresent(seg.branch_warnings.len()));
        }
        let sigma = symbolic_sequence(&seg)?;
        let rich = is_rich(&sigma, params).rich;
        let flagged = exceptional_flags(&seg, &sigma).iter().any(|&f| f);
        let (dim, gap, indeterminate) = match neutral_space(&seg) {
            Ok(r) => (Some(r.dim), Some(r.spectral_gap), false),
            Err(Error::RankIndeterminate { .. }) => (None, None, true),
            Err(e) => return Err(e),
        };
        let sufficient = dim == Some(1) && gap.is_some_and(|g| g >= SUFFICIENCY_GAP);
        let category = match (rich, flagged, sufficient) {
            (false, _, _) => CensusCategory::NotRich,
            (true, true, _) => CensusCategory::RichFlagged,
            (true, false, true) => CensusCategory::RichCleanSufficient,
            (true, false, false) => CensusCategory::RichCleanInsufficient,
        };
        Ok(CensusSample {
            index,
            category,
            ball_collisions: seg.ball_collision_count(),
            rich,
            flagged,
            dim,
            spectral_gap: gap,
            sufficient,
            rank_indeterminate: indeterminate,
            reason: None,
        })
    };
    run().unwrap_or_else(|e| discard(index, &e))
}

/// Per-sample census records in index order.
pub fn census_samples(
    params: &ModelParams,
    n_samples: usize,
    n_ball_collisions: usize,
    seed: u64,
) -> Result<Vec<CensusSample>> {
    params.check()?;
    if params.k == 0 {
        return Err(Error::InvalidParams("richness needs at least one box axis (k >= 1)".into()));
    }
    Ok((0..n_samples).into_par_iter().map(|i| census_sample(params, n_ball_collisions, seed, i)).collect())
}

/// Tally richness, sufficiency and exceptional flags over `n_samples`
/// Liouville samples, each simulated for `n_ball_collisions` ball
/// collisions.
pub fn richness_census(
    params: &ModelParams,
    n_samples: usize,
    n_ball_collisions: usize,
    seed: u64,
) -> Result<CensusReport> {
    let samples = census_samples(params, n_samples, n_ball_collisions, seed)?;
    Ok(tally(params, seed, n_ball_collisions, &samples))
}

/// Aggregate per-sample records.
pub fn tally(params: &ModelParams, seed: u64, n_ball_collisions: usize, samples: &[CensusSample]) -> CensusReport {
    let count = |c: CensusCategory| samples.iter().filter(|s| s.category == c).count();
    let accepted = || samples.iter().filter(|s| s.category != CensusCategory::Discarded);
    CensusReport {
        params: *params,
        seed,
        n_ball_collisions,
        n_samples: samples.len(),
        n_rich: accepted().filter(|s| s.rich).count(),
        n_sufficient: accepted().filter(|s| s.sufficient).count(),
        n_exceptional_flagged: accepted().filter(|s| s.flagged).count(),
        n_discarded: count(CensusCategory::Discarded),
        n_not_rich: count(CensusCategory::NotRich),
        n_rich_flagged: count(CensusCategory::RichFlagged),
        n_rich_clean_sufficient: count(CensusCategory::RichCleanSufficient),
        n_rich_clean_insufficient: count(CensusCategory::RichCleanInsufficient),
        n_rank_indeterminate: accepted().filter(|s| s.rank_indeterminate).count(),
        n_time_guarded: accepted().filter(|s| s.ball_collisions < n_ball_collisions).count(),
        discards: samples.iter().filter_map(|s| s.reason.as_ref().map(|r| (s.index, r.clone()))).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_census() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let r = richness_census(&p, 0, 50, 1).unwrap();
        assert_eq!(r.n_samples, 0);
        assert!(r.is_partition());
    }

    #[test]
    fn torus_is_rejected() {
        let p = ModelParams::new(2, 0, 0.1).unwrap();
        assert!(matches!(richness_census(&p, 3, 5, 1), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn small_census_partitions() {
        let p = ModelParams::new(2, 2, 0.1).unwrap();
        let r = richness_census(&p, 20, 20, 3).unwrap();
        assert!(r.is_partition());
        assert_eq!(r, richness_census(&p, 20, 20, 3).unwrap());
    }
}
