//! Per-thread counters used to audit what a code path constructs.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub image_passes: u64,
    pub text_passes: u64,
    pub masks: u64,
    pub triplets: u64,
}

thread_local! {
    static COUNTS: Cell<Counts> = Cell::new(Counts::default());
}

pub fn snapshot() -> Counts {
    COUNTS.with(Cell::get)
}

pub fn reset() {
    COUNTS.with(|c| c.set(Counts::default()));
}

fn bump(f: impl FnOnce(&mut Counts)) {
    COUNTS.with(|c| {
        let mut v = c.get();
        f(&mut v);
        c.set(v);
    });
}

pub(crate) fn image_passes(n: usize) {
    bump(|c| c.image_passes += n as u64);
}

pub(crate) fn text_passes(n: usize) {
    bump(|c| c.text_passes += n as u64);
}

pub(crate) fn mask_built() {
    bump(|c| c.masks += 1);
}

pub(crate) fn triplet_built() {
    bump(|c| c.triplets += 1);
}

impl Counts {
    /// Counter increments since `earlier`.
    pub fn since(&self, earlier: &Counts) -> Counts {
        Counts {
            image_passes: self.image_passes - earlier.image_passes,
            text_passes: self.text_passes - earlier.text_passes,
            masks: self.masks - earlier.masks,
            triplets: self.triplets - earlier.triplets,
        }
    }
}
