//! Margin-gated reordering of a primary ranked list using a secondary one.
//!
//! A pair at primary positions `i < i + j` is swapped when the secondary list
//! ranks them the other way round by more than `alpha + j` places. Passes
//! over the pairs repeat until one makes no swap. Objects missing from the
//! secondary list take secondary rank `eta + 1`.

use std::collections::HashMap;

use crate::error::FusionError;
use crate::matcher::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionParams {
    alpha: usize,
    eta: usize,
}

impl FusionParams {
    pub fn new(alpha: usize, eta: usize) -> Result<Self, FusionError> {
        if eta == 0 {
            return Err(FusionError::InvalidEta);
        }
        if alpha > eta {
            return Err(FusionError::AlphaOutOfRange { alpha, eta });
        }
        Ok(Self { alpha, eta })
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn eta(&self) -> usize {
        self.eta
    }
}

pub fn fuse(
    v_pri: &RankedList,
    v_sec: &RankedList,
    params: &FusionParams,
) -> Result<RankedList, FusionError> {
    let eta = params.eta;
    let alpha = params.alpha;
    // 1-based secondary ranks
    let secondary: HashMap<&str, usize> = v_sec
        .objects()
        .enumerate()
        .map(|(pos, obj)| (obj, pos + 1))
        .collect();
    let rank_of = |obj: &str| secondary.get(obj).copied().unwrap_or(eta + 1);

    let mut entries = v_pri.entries.clone();
    let len = entries.len();
    for _ in 0..eta * eta {
        let mut swapped = false;
        // 1-based i with 2i < eta; partner i + j stays inside the list
        let mut i = 1;
        while 2 * i < eta {
            let mut j = 1;
            while j <= eta - i && i + j <= len {
                let a = rank_of(&entries[i - 1].object_id);
                let b = rank_of(&entries[i + j - 1].object_id);
                if a > b + alpha + j {
                    entries.swap(i - 1, i + j - 1);
                    swapped = true;
                }
                j += 1;
            }
            i += 1;
        }
        if !swapped {
            break;
        }
    }
    Ok(RankedList {
        entries,
        eta: v_pri.eta,
    })
}
