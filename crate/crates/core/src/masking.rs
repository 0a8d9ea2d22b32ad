//! Mask sampling over the patch grid: local square windows with a fixed masked
//! fraction inside each, or a single window spanning the whole grid.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch_side: usize,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize, patch_side: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || patch_side == 0 {
            return Err(Error::config("patch grid needs rows, cols and patch_side >= 1"));
        }
        Ok(Self {
            rows,
            cols,
            patch_side,
        })
    }

    /// Grid for an image whose sides are multiples of `patch_side`.
    pub fn for_image(height: usize, width: usize, patch_side: usize) -> Result<Self> {
        if patch_side == 0 || height % patch_side != 0 || width % patch_side != 0 {
            return Err(Error::shape(format!(
                "image {height}x{width} is not divisible into {patch_side}x{patch_side} patches"
            )));
        }
        Self::new(height / patch_side, width / patch_side, patch_side)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Local,
    Global,
}

impl MaskMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(MaskMode::Local),
            "global" => Ok(MaskMode::Global),
            _ => Err(Error::config(format!("unknown mask mode '{s}' (expected local or global)"))),
        }
    }
}

/// Square window of `side x side` patches with top-left patch `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    pub side: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    /// Grid index of the window-relative patch `k` (row-major inside the window).
    pub fn grid_index(&self, k: usize, grid: &PatchGrid) -> usize {
        (self.row + k / self.side) * grid.cols + self.col + k % self.side
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub mode: MaskMode,
    pub windows: Vec<Window>,
    /// Sorted window-relative masked indices, one list per window.
    pub masked: Vec<Vec<usize>>,
    pub mask_ratio: f64,
    pub seed: u64,
}

impl MaskPlan {
    /// Window-relative indices not in the masked list.
    pub fn visible(&self, window: usize) -> Vec<usize> {
        let masked = &self.masked[window];
        (0..self.windows[window].len())
            .filter(|k| masked.binary_search(k).is_err())
            .collect()
    }

    /// Per-position mask flags for one window.
    pub fn mask_flags(&self, window: usize) -> Vec<bool> {
        let mut flags = vec![false; self.windows[window].len()];
        for &k in &self.masked[window] {
            flags[k] = true;
        }
        flags
    }

    pub fn total_masked(&self) -> usize {
        self.masked.iter().map(Vec::len).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// `round(ratio * n)` with halves rounded up.
pub fn masked_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 0.5).floor().min(n as f64) as usize
}

fn check_ratio(mask_ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::config(format!("mask_ratio {mask_ratio} outside [0, 1]")));
    }
    Ok(())
}

/// `k` windows of side `w`, top-left positions uniform over all valid
/// placements, drawn independently (overlap allowed).
pub fn sample_local_windows(grid: &PatchGrid, k: usize, w: usize, seed: u64) -> Result<Vec<Window>> {
    if w == 0 || w > grid.rows.min(grid.cols) {
        return Err(Error::config(format!(
            "window side {w} does not fit a {}x{} patch grid",
            grid.rows, grid.cols
        )));
    }
    if k == 0 {
        return Err(Error::config("window count must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..k)
        .map(|_| Window {
            row: rng.random_range(0..=grid.rows - w),
            col: rng.random_range(0..=grid.cols - w),
            side: w,
        })
        .collect())
}

/// Masks exactly `round(mask_ratio * w^2)` uniformly chosen patches per window.
pub fn mask_plan(windows: &[Window], mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    check_ratio(mask_ratio)?;
    let mut rng = rng_from_seed(seed);
    let masked = windows
        .iter()
        .map(|win| {
            let n = win.len();
            let mut picked = index::sample(&mut rng, n, masked_count(mask_ratio, n)).into_vec();
            picked.sort_unstable();
            picked
        })
        .collect();
    Ok(MaskPlan {
        mode: MaskMode::Local,
        windows: windows.to_vec(),
        masked,
        mask_ratio,
        seed,
    })
}

/// One window covering the full (square) grid.
pub fn global_mask_plan(grid: &PatchGrid, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    if grid.rows != grid.cols {
        return Err(Error::config("global masking expects a square patch grid"));
    }
    let win = Window {
        row: 0,
        col: 0,
        side: grid.rows,
    };
    let mut plan = mask_plan(&[win], mask_ratio, seed)?;
    plan.mode = MaskMode::Global;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid8() -> PatchGrid {
        PatchGrid::new(8, 8, 8).unwrap()
    }

    fn assert_partition(plan: &MaskPlan) {
        for (i, win) in plan.windows.iter().enumerate() {
            let masked = &plan.masked[i];
            let visible = plan.visible(i);
            assert_eq!(masked.len() + visible.len(), win.len());
            let mut all: Vec<usize> = masked.iter().chain(&visible).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..win.len()).collect::<Vec<_>>());
            assert!(masked.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn full_size_window_is_forced() {
        let wins = sample_local_windows(&grid8(), 5, 8, 3).unwrap();
        assert!(wins.iter().all(|w| w.row == 0 && w.col == 0 && w.side == 8));
    }

    #[test]
    fn windows_deterministic_and_inside() {
        let a = sample_local_windows(&grid8(), 4, 4, 11).unwrap();
        assert_eq!(a, sample_local_windows(&grid8(), 4, 4, 11).unwrap());
        assert!(a.iter().all(|w| w.row + 4 <= 8 && w.col + 4 <= 8));
    }

    #[test]
    fn oversize_window_errors() {
        assert!(sample_local_windows(&grid8(), 1, 9, 0).is_err());
        assert!(sample_local_windows(&grid8(), 0, 4, 0).is_err());
    }

    #[test]
    fn counts_follow_rounding() {
        let wins = sample_local_windows(&grid8(), 4, 4, 1).unwrap();
        let plan = mask_plan(&wins, 0.75, 2).unwrap();
        assert!(plan.masked.iter().all(|m| m.len() == 12));
        assert_partition(&plan);
        let empty = mask_plan(&wins, 0.0, 2).unwrap();
        assert_eq!(empty.total_masked(), 0);
        assert_eq!(masked_count(0.5, 9), 5);
        assert_eq!(masked_count(0.25, 2), 1);
    }

    #[test]
    fn count_sweep_and_partition() {
        for w in 2..=8 {
            for ratio in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let wins = sample_local_windows(&grid8(), 3, w, w as u64).unwrap();
                let plan = mask_plan(&wins, ratio, 9).unwrap();
                let expect = (ratio * (w * w) as f64 + 0.5).floor() as usize;
                assert!(plan.masked.iter().all(|m| m.len() == expect));
                assert_partition(&plan);
            }
        }
    }

    #[test]
    fn global_plan_counts() {
        let plan = global_mask_plan(&grid8(), 0.75, 4).unwrap();
        assert_eq!(plan.mode, MaskMode::Global);
        assert_eq!(plan.windows.len(), 1);
        assert_eq!(plan.masked[0].len(), 48);
        let all = global_mask_plan(&grid8(), 1.0, 4).unwrap();
        assert_eq!(all.masked[0].len(), 64);
    }

    #[test]
    fn bad_ratio_errors() {
        assert!(global_mask_plan(&grid8(), 1.5, 0).is_err());
        assert!(global_mask_plan(&grid8(), -0.1, 0).is_err());
    }

    #[test]
    fn seeds_change_plans() {
        let wins = sample_local_windows(&grid8(), 4, 4, 1).unwrap();
        let a = mask_plan(&wins, 0.5, 1).unwrap();
        let b = mask_plan(&wins, 0.5, 2).unwrap();
        assert_ne!(a.masked, b.masked);
    }

    #[test]
    fn json_record_roundtrip() {
        let wins = sample_local_windows(&grid8(), 2, 4, 1).unwrap();
        let plan = mask_plan(&wins, 0.75, 5).unwrap();
        let back: MaskPlan = serde_json::from_str(&plan.to_json().unwrap()).unwrap();
        assert_eq!(back, plan);
        assert!(plan.to_json().unwrap().contains("\"mode\":\"local\""));
    }
}
