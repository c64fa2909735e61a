//! Single-member transfers between cells, tried once a start settles.
//!
//! A Lloyd fixed point can still be improved by moving one member to another
//! cell and re-optimizing both cells' levels. On small populations that move
//! is often worth a lot; passes repeat until no transfer gains anything.

use crate::cells::{CellTable, UpdateRule};
use crate::granular::Problem;
use crate::model::FeasibleTreatment;

const MAX_PASSES: usize = 100;

/// Relative gain a transfer must clear, so rounding noise never counts.
const MIN_GAIN: f64 = 1e-10;

/// Runs transfer passes from `assignment` (the argmax assignment for
/// `treatments`). Returns the re-optimized treatments if any member moved.
pub(crate) fn refine(
    problem: &Problem<'_>,
    treatments: &[FeasibleTreatment],
    assignment: &[usize],
    holdout: bool,
    bounds: &[f64],
    step: f64,
) -> Option<Vec<FeasibleTreatment>> {
    let l = treatments.len();
    let cells = l + usize::from(holdout);
    let mut table = CellTable::from_assignment(problem, assignment, cells);
    let mut values: Vec<f64> = (0..cells)
        .map(|c| {
            if c == l {
                0.0
            } else {
                table.cell(c).best_profit(bounds, step)
            }
        })
        .collect();
    let mut cell_of = assignment.to_vec();
    let (mut out_row, mut in_row) = (Vec::new(), Vec::new());
    let mut moved = false;

    for _ in 0..MAX_PASSES {
        let mut any = false;
        #[allow(clippy::needless_range_loop)]
        for i in 0..problem.len() {
            let from = cell_of[i];
            // Cells keep at least one member.
            if from < l && table.counts()[from] < 2 {
                continue;
            }
            let without = if from == l {
                0.0
            } else {
                table
                    .cell_with(problem, from, i, -1.0, &mut out_row)
                    .best_profit(bounds, step)
            };
            let mut pick: Option<(f64, usize, f64)> = None;
            for to in (0..cells).filter(|&c| c != from) {
                let with = if to == l {
                    0.0
                } else {
                    table
                        .cell_with(problem, to, i, 1.0, &mut in_row)
                        .best_profit(bounds, step)
                };
                let gain = (without + with) - (values[from] + values[to]);
                let floor = MIN_GAIN * (1.0 + values[from].abs() + values[to].abs());
                if gain > floor && pick.is_none_or(|(g, _, _)| gain > g) {
                    pick = Some((gain, to, with));
                }
            }
            if let Some((_, to, with)) = pick {
                table.move_member(problem, i, from, to);
                values[from] = without;
                values[to] = with;
                cell_of[i] = to;
                any = true;
            }
        }
        if !any {
            break;
        }
        moved = true;
    }
    moved.then(|| {
        (0..l)
            .map(|c| {
                table
                    .cell(c)
                    .reduce(Some(&[]), UpdateRule::Exact, bounds, step)
            })
            .collect()
    })
}
