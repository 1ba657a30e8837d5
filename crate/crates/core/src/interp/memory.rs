//! Array storage backends for the engine.
//!
//! Arrays are addressed by `(element type, id)`: `f64` and `i64` arrays are
//! numbered separately. [`PlainMemory`] borrows caller buffers and is used
//! for ordinary interpretation. [`SharedMemory`] keeps elements in relaxed
//! atomics so that worker threads can store into disjoint cells of the same
//! array; the dependence proof guarantees disjointness, the atomics only make
//! the sharing expressible without `unsafe`.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicI64, AtomicU64, Ordering};

pub trait Memory {
    fn load_f(&self, arr: usize, at: usize) -> f64;
    fn load_i(&self, arr: usize, at: usize) -> i64;
    fn store_f(&mut self, arr: usize, at: usize, v: f64);
    fn store_i(&mut self, arr: usize, at: usize, v: i64);

    fn read_f(&self, arr: usize) -> Vec<f64>;
    fn read_i(&self, arr: usize) -> Vec<i64>;
    fn write_f(&mut self, arr: usize, data: &[f64]);
    fn write_i(&mut self, arr: usize, data: &[i64]);

    /// Shared backing store, if this memory can be used from several
    /// workers at once.
    fn shared(&self) -> Option<&SharedMemory> {
        None
    }
}

pub struct PlainMemory<'a> {
    pub(crate) f: Vec<&'a mut [f64]>,
    pub(crate) i: Vec<&'a mut [i64]>,
}

impl Memory for PlainMemory<'_> {
    #[inline]
    fn load_f(&self, arr: usize, at: usize) -> f64 {
        self.f[arr][at]
    }
    #[inline]
    fn load_i(&self, arr: usize, at: usize) -> i64 {
        self.i[arr][at]
    }
    #[inline]
    fn store_f(&mut self, arr: usize, at: usize, v: f64) {
        self.f[arr][at] = v;
    }
    #[inline]
    fn store_i(&mut self, arr: usize, at: usize, v: i64) {
        self.i[arr][at] = v;
    }
    fn read_f(&self, arr: usize) -> Vec<f64> {
        self.f[arr].to_vec()
    }
    fn read_i(&self, arr: usize) -> Vec<i64> {
        self.i[arr].to_vec()
    }
    fn write_f(&mut self, arr: usize, data: &[f64]) {
        self.f[arr].copy_from_slice(data);
    }
    fn write_i(&mut self, arr: usize, data: &[i64]) {
        self.i[arr].copy_from_slice(data);
    }
}

#[derive(Default)]
pub struct SharedMemory {
    f: Vec<Box<[AtomicU64]>>,
    i: Vec<Box<[AtomicI64]>>,
}

impl SharedMemory {
    pub fn push_f(&mut self, data: &[f64]) -> usize {
        self.f.push(data.iter().map(|v| AtomicU64::new(v.to_bits())).collect());
        self.f.len() - 1
    }

    pub fn push_i(&mut self, data: &[i64]) -> usize {
        self.i.push(data.iter().map(|&v| AtomicI64::new(v)).collect());
        self.i.len() - 1
    }

    pub fn view(&self) -> SharedView<'_> {
        SharedView(self)
    }

    pub fn take_f(&self, arr: usize) -> Vec<f64> {
        self.f[arr].iter().map(|a| f64::from_bits(a.load(Ordering::Relaxed))).collect()
    }

    pub fn take_i(&self, arr: usize) -> Vec<i64> {
        self.i[arr].iter().map(|a| a.load(Ordering::Relaxed)).collect()
    }
}

/// A handle onto [`SharedMemory`]; cheap to copy into every worker.
#[derive(Clone, Copy)]
pub struct SharedView<'a>(&'a SharedMemory);

impl Memory for SharedView<'_> {
    #[inline]
    fn load_f(&self, arr: usize, at: usize) -> f64 {
        f64::from_bits(self.0.f[arr][at].load(Ordering::Relaxed))
    }
    #[inline]
    fn load_i(&self, arr: usize, at: usize) -> i64 {
        self.0.i[arr][at].load(Ordering::Relaxed)
    }
    #[inline]
    fn store_f(&mut self, arr: usize, at: usize, v: f64) {
        self.0.f[arr][at].store(v.to_bits(), Ordering::Relaxed)
    }
    #[inline]
    fn store_i(&mut self, arr: usize, at: usize, v: i64) {
        self.0.i[arr][at].store(v, Ordering::Relaxed)
    }
    fn read_f(&self, arr: usize) -> Vec<f64> {
        self.0.take_f(arr)
    }
    fn read_i(&self, arr: usize) -> Vec<i64> {
        self.0.take_i(arr)
    }
    fn write_f(&mut self, arr: usize, data: &[f64]) {
        for (a, v) in self.0.f[arr].iter().zip(data) {
            a.store(v.to_bits(), Ordering::Relaxed);
        }
    }
    fn write_i(&mut self, arr: usize, data: &[i64]) {
        for (a, v) in self.0.i[arr].iter().zip(data) {
            a.store(*v, Ordering::Relaxed);
        }
    }
    fn shared(&self) -> Option<&SharedMemory> {
        Some(self.0)
    }
}
