//! Per-node read access with optional logging for locality audits.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

/// What a follower read, and about whom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Item {
    /// Relative output `y_i − y_j` (`j = 0` is the leader).
    RelativeOutput,
    /// Relative state `x_i − x_j`.
    RelativeState,
    /// The reader's own output `y_i`.
    OwnOutput,
    /// The reader's own state `x_i`.
    OwnState,
    /// Distributed observer `v_j`.
    Observer,
    /// Local observer `w_j`.
    LocalObserver,
    /// Leader observer `w_0`.
    LeaderObserver,
    /// Formation offset `h_j`.
    Offset,
    /// Absolute state read by the simulator on the node's behalf, used
    /// only where the protocol defines `ρ_i` from unmeasured errors.
    Omniscient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Access {
    /// Agent index of the reader (followers are `1..=N`).
    pub reader: usize,
    pub item: Item,
    /// Agent index of the source.
    pub source: usize,
}

pub trait AccessLog {
    fn note(&self, access: Access);
}

/// Discards everything; the default for simulation.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoLog;

impl AccessLog for NoLog {
    #[inline(always)]
    fn note(&self, _: Access) {}
}

/// Keeps every access for inspection.
#[derive(Debug, Default)]
pub struct RecordingLog {
    entries: RefCell<Vec<Access>>,
}

impl RecordingLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> Vec<Access> {
        self.entries.borrow().clone()
    }

    pub fn clear(&self) {
        self.entries.borrow_mut().clear();
    }
}

impl AccessLog for RecordingLog {
    fn note(&self, access: Access) {
        self.entries.borrow_mut().push(access);
    }
}

/// Agent-indexed snapshot of everything the network holds at one instant.
pub(crate) struct Snapshot<'a> {
    pub n: usize,
    pub q: usize,
    /// `(N+1)·n`, leader first.
    pub x: &'a [f64],
    /// `(N+1)·q`.
    pub y: &'a [f64],
    /// `N·n`, followers only.
    pub v: &'a [f64],
    pub w: &'a [f64],
    pub w0: &'a [f64],
    /// `N·n`.
    pub h: &'a [f64],
}

/// A follower's window onto a [`Snapshot`]; every read is logged.
pub(crate) struct NodeView<'a, L: AccessLog> {
    pub me: usize,
    pub snap: &'a Snapshot<'a>,
    pub log: &'a L,
}

impl<'a, L: AccessLog> NodeView<'a, L> {
    #[inline]
    fn note(&self, item: Item, source: usize) {
        self.log.note(Access {
            reader: self.me,
            item,
            source,
        });
    }

    #[inline]
    fn follower_block(&self, data: &'a [f64], j: usize) -> &'a [f64] {
        let n = self.snap.n;
        &data[(j - 1) * n..j * n]
    }

    /// `(y_i, y_j)`, to be used only as a difference.
    #[inline]
    pub fn rel_output(&self, j: usize) -> (&'a [f64], &'a [f64]) {
        self.note(Item::RelativeOutput, j);
        let q = self.snap.q;
        (
            &self.snap.y[self.me * q..(self.me + 1) * q],
            &self.snap.y[j * q..(j + 1) * q],
        )
    }

    /// `(x_i, x_j)`, to be used only as a difference.
    #[inline]
    pub fn rel_state(&self, j: usize) -> (&'a [f64], &'a [f64]) {
        self.note(Item::RelativeState, j);
        let n = self.snap.n;
        (
            &self.snap.x[self.me * n..(self.me + 1) * n],
            &self.snap.x[j * n..(j + 1) * n],
        )
    }

    #[inline]
    pub fn own_output(&self) -> &'a [f64] {
        self.note(Item::OwnOutput, self.me);
        let q = self.snap.q;
        &self.snap.y[self.me * q..(self.me + 1) * q]
    }

    #[inline]
    pub fn own_state(&self) -> &'a [f64] {
        self.note(Item::OwnState, self.me);
        let n = self.snap.n;
        &self.snap.x[self.me * n..(self.me + 1) * n]
    }

    #[inline]
    pub fn v(&self, j: usize) -> &'a [f64] {
        self.note(Item::Observer, j);
        self.follower_block(self.snap.v, j)
    }

    #[inline]
    pub fn w(&self, j: usize) -> &'a [f64] {
        self.note(Item::LocalObserver, j);
        self.follower_block(self.snap.w, j)
    }

    #[inline]
    pub fn w0(&self) -> &'a [f64] {
        self.note(Item::LeaderObserver, 0);
        self.snap.w0
    }

    #[inline]
    pub fn h(&self, j: usize) -> &'a [f64] {
        self.note(Item::Offset, j);
        self.follower_block(self.snap.h, j)
    }

    #[inline]
    pub fn omniscient_state(&self, j: usize) -> &'a [f64] {
        self.note(Item::Omniscient, j);
        let n = self.snap.n;
        &self.snap.x[j * n..(j + 1) * n]
    }
}
