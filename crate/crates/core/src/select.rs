//! Exact selection as a resumable computation.
//!
//! [`Selector`] finds the element of a given rank in a vector, doing at most a
//! caller-chosen number of element touches per call and keeping the rest of
//! its recursion on an explicit stack. The strategy is quickselect with a
//! median-of-three pivot and three-way partitioning. Whenever two consecutive
//! quick steps fail to halve the range, the next step uses a median-of-medians
//! pivot (groups of five), which bounds the total work by a linear function of
//! the input length regardless of the input order.

use std::cmp::Ordering;

/// Largest number of touches a single internal step may perform.
pub const MAX_STEP_TOUCHES: u64 = 5;

#[derive(Debug, Clone)]
enum Frame<T> {
    Select {
        lo: usize,
        hi: usize,
        target: usize,
        window: Window,
    },
    Medians {
        lo: usize,
        hi: usize,
        target: usize,
        group: usize,
    },
    AwaitPivot {
        lo: usize,
        hi: usize,
        target: usize,
        at: usize,
        window: Window,
    },
    Partition {
        lo: usize,
        hi: usize,
        target: usize,
        pivot: T,
        lt: usize,
        i: usize,
        gt: usize,
        window: Window,
    },
}

/// Progress tracking for the fallback rule: `anchor` is the range length at
/// the start of the current two-step window, `steps` the quick steps taken in
/// it, and `careful` forces a median-of-medians pivot for the next step.
#[derive(Debug, Clone, Copy)]
struct Window {
    anchor: usize,
    steps: u8,
    careful: bool,
}

impl Window {
    fn fresh(len: usize) -> Self {
        Self {
            anchor: len,
            steps: 0,
            careful: false,
        }
    }

    fn after(self, new_len: usize) -> Self {
        if self.careful {
            return Self::fresh(new_len);
        }
        if self.steps + 1 == 2 {
            Self {
                anchor: new_len,
                steps: 0,
                careful: 2 * new_len > self.anchor,
            }
        } else {
            Self {
                steps: self.steps + 1,
                ..self
            }
        }
    }
}

/// Resumable exact selection over an owned vector.
#[derive(Debug, Clone)]
pub struct Selector<T> {
    data: Vec<T>,
    target: usize,
    stack: Vec<Frame<T>>,
    touches: u64,
}

impl<T: Ord + Clone> Selector<T> {
    /// Prepare to find the element that would sit at index `target` of
    /// `data` once sorted.
    ///
    /// Panics if `target >= data.len()`.
    pub fn new(data: Vec<T>, target: usize) -> Self {
        assert!(target < data.len(), "selection target out of range");
        let hi = data.len();
        Self {
            data,
            target,
            stack: vec![Frame::Select {
                lo: 0,
                hi,
                target,
                window: Window::fresh(hi),
            }],
            touches: 0,
        }
    }

    pub fn is_done(&self) -> bool {
        self.stack.is_empty()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Total element touches so far.
    pub fn touches(&self) -> u64 {
        self.touches
    }

    pub fn result(&self) -> Option<&T> {
        self.is_done().then(|| &self.data[self.target])
    }

    pub fn into_result(mut self) -> Option<T> {
        if self.is_done() {
            Some(self.data.swap_remove(self.target))
        } else {
            None
        }
    }

    /// Run until done or until at least `budget` touches were spent. May
    /// overshoot by less than [`MAX_STEP_TOUCHES`]. Returns touches spent.
    pub fn step(&mut self, budget: u64) -> u64 {
        let mut used = 0;
        while used < budget && !self.is_done() {
            used += self.advance();
        }
        self.touches += used;
        used
    }

    /// Run to completion.
    pub fn finish(&mut self) -> u64 {
        self.step(u64::MAX)
    }

    fn advance(&mut self) -> u64 {
        let frame = self.stack.pop().expect("advance on a finished selector");
        match frame {
            Frame::Select {
                lo,
                hi,
                target,
                window,
            } => {
                let len = hi - lo;
                if len <= MAX_STEP_TOUCHES as usize {
                    insertion_sort(&mut self.data[lo..hi]);
                    len as u64
                } else if window.careful {
                    self.stack.push(Frame::Medians {
                        lo,
                        hi,
                        target,
                        group: 0,
                    });
                    0
                } else {
                    let mid = lo + len / 2;
                    let pivot =
                        median_of_three(&self.data[lo], &self.data[mid], &self.data[hi - 1]);
                    self.stack.push(Frame::Partition {
                        lo,
                        hi,
                        target,
                        pivot: pivot.clone(),
                        lt: lo,
                        i: lo,
                        gt: hi,
                        window,
                    });
                    3
                }
            }
            Frame::Medians {
                lo,
                hi,
                target,
                group,
            } => {
                let glo = lo + 5 * group;
                let ghi = (glo + 5).min(hi);
                insertion_sort(&mut self.data[glo..ghi]);
                self.data.swap(lo + group, glo + (ghi - glo - 1) / 2);
                let groups = group + 1;
                if ghi == hi {
                    let at = lo + (groups - 1) / 2;
                    let window = Window {
                        anchor: hi - lo,
                        steps: 0,
                        careful: true,
                    };
                    self.stack.push(Frame::AwaitPivot {
                        lo,
                        hi,
                        target,
                        at,
                        window,
                    });
                    self.stack.push(Frame::Select {
                        lo,
                        hi: lo + groups,
                        target: at,
                        window: Window::fresh(groups),
                    });
                } else {
                    self.stack.push(Frame::Medians {
                        lo,
                        hi,
                        target,
                        group: groups,
                    });
                }
                (ghi - glo) as u64
            }
            Frame::AwaitPivot {
                lo,
                hi,
                target,
                at,
                window,
            } => {
                self.stack.push(Frame::Partition {
                    lo,
                    hi,
                    target,
                    pivot: self.data[at].clone(),
                    lt: lo,
                    i: lo,
                    gt: hi,
                    window,
                });
                1
            }
            Frame::Partition {
                lo,
                hi,
                target,
                pivot,
                mut lt,
                mut i,
                mut gt,
                window,
            } => {
                if i < gt {
                    match self.data[i].cmp(&pivot) {
                        Ordering::Less => {
                            self.data.swap(lt, i);
                            lt += 1;
                            i += 1;
                        }
                        Ordering::Greater => {
                            gt -= 1;
                            self.data.swap(i, gt);
                        }
                        Ordering::Equal => i += 1,
                    }
                    self.stack.push(Frame::Partition {
                        lo,
                        hi,
                        target,
                        pivot,
                        lt,
                        i,
                        gt,
                        window,
                    });
                    return 1;
                }
                // [lo, lt) < pivot, [lt, gt) == pivot, [gt, hi) > pivot
                let (nlo, nhi) = if target < lt {
                    (lo, lt)
                } else if target >= gt {
                    (gt, hi)
                } else {
                    return 0;
                };
                self.stack.push(Frame::Select {
                    lo: nlo,
                    hi: nhi,
                    target,
                    window: window.after(nhi - nlo),
                });
                0
            }
        }
    }
}

fn median_of_three<'a, T: Ord>(a: &'a T, b: &'a T, c: &'a T) -> &'a T {
    if a <= b {
        if b <= c {
            b
        } else if a <= c {
            c
        } else {
            a
        }
    } else if a <= c {
        a
    } else if b <= c {
        c
    } else {
        b
    }
}

fn insertion_sort<T: Ord>(v: &mut [T]) {
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
}
