//! Flat parameter vectors and their mapping onto per-time global parameters.
//!
//! An un-segmented model has five free global parameters. A change-point
//! model duplicates the attractor coefficients (and optionally alpha and
//! delta) per time segment. The optimizer and uncertainty machinery operate
//! on the flat vector; `ParamLayout` translates between the flat vector and
//! the `GlobalParams` in effect at a given time step.

use crate::error::{ClsnaError, Result};
use crate::model::GlobalParams;

/// Role of one scalar in the global parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Alpha,
    Delta,
    GammaW1,
    GammaW2,
    GammaB,
}

impl ParamRole {
    pub const ALL: [ParamRole; 5] =
        [ParamRole::Alpha, ParamRole::Delta, ParamRole::GammaW1, ParamRole::GammaW2, ParamRole::GammaB];

    /// Position in the [alpha, delta, gamma_w1, gamma_w2, gamma_b] order.
    pub fn slot(self) -> usize {
        match self {
            ParamRole::Alpha => 0,
            ParamRole::Delta => 1,
            ParamRole::GammaW1 => 2,
            ParamRole::GammaW2 => 3,
            ParamRole::GammaB => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamRole::Alpha => "alpha",
            ParamRole::Delta => "delta",
            ParamRole::GammaW1 => "gamma_w1",
            ParamRole::GammaW2 => "gamma_w2",
            ParamRole::GammaB => "gamma_b",
        }
    }
}

/// Maps between the flat free-parameter vector and per-time global
/// parameters, for un-segmented and single-change-point models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    t_len: usize,
    /// 1-based change-point t*: segment 0 covers times < t*, segment 1
    /// covers times >= t*.
    changepoint: Option<usize>,
    /// When segmented, whether alpha and delta split too (gammas always do).
    split_baseline: bool,
}

impl ParamLayout {
    pub fn unsegmented(t_len: usize) -> ParamLayout {
        ParamLayout { t_len, changepoint: None, split_baseline: false }
    }

    pub fn segmented(t_len: usize, changepoint: usize, split_baseline: bool) -> Result<ParamLayout> {
        if t_len < 3 || changepoint < 2 || changepoint > t_len - 1 {
            return Err(ClsnaError::input(format!(
                "change-point {changepoint} out of range [2, {}] for T={t_len}",
                t_len.saturating_sub(1)
            )));
        }
        Ok(ParamLayout { t_len, changepoint: Some(changepoint), split_baseline })
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn changepoint(&self) -> Option<usize> {
        self.changepoint
    }

    pub fn segment_count(&self) -> usize {
        if self.changepoint.is_some() {
            2
        } else {
            1
        }
    }

    /// Segment of the (0-based) time index.
    pub fn segment_of(&self, t0: usize) -> usize {
        match self.changepoint {
            Some(cp) if t0 + 1 >= cp => 1,
            _ => 0,
        }
    }

    fn role_is_split(&self, role: ParamRole) -> bool {
        self.changepoint.is_some()
            && (self.split_baseline || !matches!(role, ParamRole::Alpha | ParamRole::Delta))
    }

    /// Number of flat copies a role has in this layout (1 or 2). Split
    /// roles carry a 1/copies tempering weight on their prior so that a
    /// segmented model with equal segments has exactly the un-segmented
    /// model's log posterior.
    pub fn copies_of(&self, role: ParamRole) -> usize {
        if self.role_is_split(role) {
            2
        } else {
            1
        }
    }

    pub fn n_free(&self) -> usize {
        match (self.changepoint.is_some(), self.split_baseline) {
            (false, _) => 5,
            (true, false) => 8,
            (true, true) => 10,
        }
    }

    /// Flat index of a role in a segment. Roles that do not split ignore the
    /// segment argument.
    pub fn index(&self, role: ParamRole, segment: usize) -> usize {
        let seg = if self.role_is_split(role) { segment } else { 0 };
        match (self.changepoint.is_some(), self.split_baseline) {
            (false, _) => role.slot(),
            (true, false) => match role {
                ParamRole::Alpha => 0,
                ParamRole::Delta => 1,
                ParamRole::GammaW1 => 2 + 3 * seg,
                ParamRole::GammaW2 => 3 + 3 * seg,
                ParamRole::GammaB => 4 + 3 * seg,
            },
            (true, true) => 5 * seg + role.slot(),
        }
    }

    /// Role and segment of a flat index.
    pub fn role_of(&self, index: usize) -> (ParamRole, usize) {
        match (self.changepoint.is_some(), self.split_baseline) {
            (false, _) => (ParamRole::ALL[index], 0),
            (true, false) => match index {
                0 => (ParamRole::Alpha, 0),
                1 => (ParamRole::Delta, 0),
                i => {
                    let seg = (i - 2) / 3;
                    (ParamRole::ALL[2 + (i - 2) % 3], seg)
                }
            },
            (true, true) => (ParamRole::ALL[index % 5], index / 5),
        }
    }

    /// Human-readable names of the flat entries, in flat order. Segmented
    /// entries carry a `_seg1` / `_seg2` suffix.
    pub fn names(&self) -> Vec<String> {
        (0..self.n_free())
            .map(|i| {
                let (role, seg) = self.role_of(i);
                if self.role_is_split(role) {
                    format!("{}_seg{}", role.name(), seg + 1)
                } else {
                    role.name().to_string()
                }
            })
            .collect()
    }

    /// Flat index for a parameter name produced by `names`.
    pub fn index_of_name(&self, name: &str) -> Result<usize> {
        self.names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ClsnaError::input(format!("unknown parameter name '{name}'")))
    }

    /// Global parameters in effect at (0-based) time `t0`.
    pub fn params_at(&self, flat: &[f64], t0: usize) -> GlobalParams {
        let seg = self.segment_of(t0);
        GlobalParams::new(
            flat[self.index(ParamRole::Alpha, seg)],
            flat[self.index(ParamRole::Delta, seg)],
            flat[self.index(ParamRole::GammaW1, seg)],
            flat[self.index(ParamRole::GammaW2, seg)],
            flat[self.index(ParamRole::GammaB, seg)],
        )
    }

    /// Flat vector holding the same global parameters in every segment.
    pub fn broadcast(&self, params: &GlobalParams) -> Vec<f64> {
        let arr = params.as_array();
        (0..self.n_free())
            .map(|i| {
                let (role, _) = self.role_of(i);
                arr[role.slot()]
            })
            .collect()
    }

    /// Global parameters per segment.
    pub fn per_segment(&self, flat: &[f64]) -> Vec<GlobalParams> {
        (0..self.segment_count())
            .map(|seg| {
                GlobalParams::new(
                    flat[self.index(ParamRole::Alpha, seg)],
                    flat[self.index(ParamRole::Delta, seg)],
                    flat[self.index(ParamRole::GammaW1, seg)],
                    flat[self.index(ParamRole::GammaW2, seg)],
                    flat[self.index(ParamRole::GammaB, seg)],
                )
            })
            .collect()
    }
}
