//! Top-down stack-pointer transition system, independent of scoring.
//!
//! At each step the stack top points at one of `n + 1` positions: an
//! unattached token becomes its child and is pushed, pointing at itself
//! pops. Masks keep every reachable configuration completable into a
//! single-root tree.

use crate::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub top: usize,
    pub choice: usize,
}

impl Step {
    pub fn is_pop(&self) -> bool {
        self.top == self.choice
    }
}

#[derive(Clone, Debug)]
pub struct StackPtrState {
    stack: Vec<usize>,
    heads: Vec<Option<usize>>,
    unattached: usize,
    root_has_child: bool,
}

impl StackPtrState {
    pub fn new(n: usize) -> Self {
        StackPtrState {
            stack: vec![0],
            heads: vec![None; n],
            unattached: n,
            root_has_child: false,
        }
    }

    pub fn n(&self) -> usize {
        self.heads.len()
    }

    pub fn stack(&self) -> &[usize] {
        &self.stack
    }

    pub fn top(&self) -> Option<usize> {
        self.stack.last().copied()
    }

    pub fn is_done(&self) -> bool {
        self.stack.is_empty()
    }

    pub fn is_valid(&self, choice: usize) -> bool {
        let Some(top) = self.top() else {
            return false;
        };
        if choice > self.n() {
            return false;
        }
        if choice == top {
            return if top == 0 {
                self.root_has_child
            } else {
                // the root's only child must stay until everything is attached
                !(self.stack.len() == 2 && self.unattached > 0)
            };
        }
        choice != 0 && self.heads[choice - 1].is_none() && (top != 0 || !self.root_has_child)
    }

    /// Validity of each of the `n + 1` pointer outcomes.
    pub fn valid_mask(&self) -> Vec<bool> {
        (0..=self.n()).map(|c| self.is_valid(c)).collect()
    }

    pub fn apply(&mut self, choice: usize) -> Result<(), NnError> {
        if !self.is_valid(choice) {
            return Err(NnError::Config(format!(
                "invalid transition {choice} with stack {:?}",
                self.stack
            )));
        }
        let top = self.top().expect("valid move implies non-empty stack");
        if choice == top {
            self.stack.pop();
        } else {
            self.heads[choice - 1] = Some(top);
            self.unattached -= 1;
            if top == 0 {
                self.root_has_child = true;
            }
            self.stack.push(choice);
        }
        Ok(())
    }

    /// Head sequence once every token is attached.
    pub fn heads(&self) -> Option<Vec<usize>> {
        self.heads.iter().copied().collect()
    }
}

/// Greedy decoding: `scores` returns `n + 1` pointer scores for the current
/// state; the best valid outcome is taken, smaller index on ties.
pub fn run_transitions<F>(n: usize, mut scores: F) -> Result<(Vec<usize>, Vec<Step>), NnError>
where
    F: FnMut(&StackPtrState) -> Result<Vec<f64>, NnError>,
{
    if n == 0 {
        return Err(NnError::EmptySequence);
    }
    let mut state = StackPtrState::new(n);
    let mut steps = Vec::with_capacity(2 * n + 1);
    while let Some(top) = state.top() {
        let s = scores(&state)?;
        let mut best: Option<(usize, f64)> = None;
        for (c, &v) in s.iter().enumerate().take(n + 1) {
            if state.is_valid(c) && best.map_or(true, |(_, b)| v > b || b.is_nan()) {
                best = Some((c, v));
            }
        }
        let (choice, _) = best.expect("some move is always valid");
        state.apply(choice)?;
        steps.push(Step { top, choice });
    }
    Ok((state.heads().expect("all tokens attached"), steps))
}

/// Children of `head` closest first, left before right on equal distance.
fn inside_out_children(heads: &[usize], head: usize) -> Vec<usize> {
    let mut children: Vec<usize> = (1..=heads.len()).filter(|&c| heads[c - 1] == head).collect();
    children.sort_by_key(|&c| (c.abs_diff(head), c));
    children
}

/// Depth-first derivation of a gold tree with inside-out child order.
pub fn gold_derivation(heads: &[usize]) -> Vec<Step> {
    let n = heads.len();
    let children: Vec<Vec<usize>> = (0..=n).map(|h| inside_out_children(heads, h)).collect();
    let mut next = vec![0usize; n + 1];
    let mut stack = vec![0usize];
    let mut steps = Vec::with_capacity(2 * n + 1);
    while let Some(&top) = stack.last() {
        if let Some(&child) = children[top].get(next[top]) {
            next[top] += 1;
            steps.push(Step { top, choice: child });
            stack.push(child);
        } else {
            steps.push(Step { top, choice: top });
            stack.pop();
        }
    }
    steps
}
