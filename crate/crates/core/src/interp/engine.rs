use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::compile::{ArraySlot, CArg, CFunc, CLoad, CLoop, CStmt, CompiledProgram, Dest, FExpr, IExpr, ParamSlot};
use super::{Array, ArgSlot, CallHook, ExecStats, Intercept, Memory, ParallelRunner, RuntimeError, Value, MAX_LANES};
use crate::ir::{BinOp, ScalarType};

#[derive(Debug, Clone, Copy)]
enum Scalar {
    I(i64),
    F(f64),
}

impl Scalar {
    fn into_value(self) -> Value {
        match self {
            Scalar::I(v) => Value::I64(v),
            Scalar::F(v) => Value::F64(v),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Frame {
    ints: Vec<i64>,
    floats: Vec<f64>,
    /// Memory id for each of the function's array slots.
    arrays: Vec<usize>,
}

impl Frame {
    fn new(f: &CFunc) -> Self {
        Frame {
            ints: alloc::vec![0; f.n_int],
            floats: alloc::vec![0.0; f.n_float],
            arrays: alloc::vec![0; f.arrays.len()],
        }
    }
}

/// Counters accumulated while executing; merged across worker chunks.
#[derive(Debug, Clone, Default)]
pub(crate) struct Tally {
    calls: Vec<u64>,
    iters: Vec<Vec<u64>>,
}

impl Tally {
    fn new(code: &CompiledProgram) -> Self {
        Tally {
            calls: alloc::vec![0; code.funcs.len()],
            iters: code.funcs.iter().map(|f| alloc::vec![0; f.loop_count]).collect(),
        }
    }

    fn merge(&mut self, other: &Tally) {
        for (a, b) in self.calls.iter_mut().zip(&other.calls) {
            *a += b;
        }
        for (a, b) in self.iters.iter_mut().zip(&other.iters) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Outcome of one chunk of a parallel loop.
pub struct ChunkResult(pub(crate) Result<Tally, RuntimeError>);

pub(crate) fn into_stats(code: &CompiledProgram, t: &Tally) -> ExecStats {
    let mut stats = ExecStats::default();
    for (fi, f) in code.funcs.iter().enumerate() {
        if t.calls[fi] == 0 {
            continue;
        }
        stats.calls.insert(f.name.clone(), t.calls[fi]);
        for (id, n) in t.iters[fi].iter().enumerate() {
            stats.loop_iterations.insert((f.name.clone(), id), *n);
        }
    }
    stats
}

/// The view of a call a [`CallHook`] gets at call entry.
pub struct CallSite<'a> {
    func: &'a CFunc,
    frame: &'a Frame,
    mem: &'a mut dyn Memory,
    depth: usize,
}

impl CallSite<'_> {
    pub fn callee(&self) -> &str {
        &self.func.name
    }

    /// 0 for the top-level call.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn param_types(&self) -> &[crate::ir::ValueType] {
        &self.func.param_types
    }

    /// Snapshot of the current argument values, arrays included.
    pub fn args(&self) -> Vec<Value> {
        self.func
            .params
            .iter()
            .map(|p| match *p {
                ParamSlot::Int(s) => Value::I64(self.frame.ints[s as usize]),
                ParamSlot::Float(s) => Value::F64(self.frame.floats[s as usize]),
                ParamSlot::Array(s) => {
                    let slot = &self.func.arrays[s as usize];
                    let id = self.frame.arrays[s as usize];
                    match slot.elem {
                        ScalarType::F64 => Value::F64Array(Array { shape: slot.shape.clone(), data: self.mem.read_f(id) }),
                        ScalarType::I64 => Value::I64Array(Array { shape: slot.shape.clone(), data: self.mem.read_i(id) }),
                    }
                }
            })
            .collect()
    }

    /// Replaces the contents of the array arguments, given in argument order.
    pub fn write_back(&mut self, arrays: &[Value]) -> Result<(), RuntimeError> {
        let slots: Vec<(usize, &ArraySlot)> = self
            .func
            .params
            .iter()
            .filter_map(|p| match *p {
                ParamSlot::Array(s) => Some((self.frame.arrays[s as usize], &self.func.arrays[s as usize])),
                _ => None,
            })
            .collect();
        if slots.len() != arrays.len() {
            return Err(self.bad(alloc::format!("{} arrays written back, expected {}", arrays.len(), slots.len())));
        }
        for ((id, slot), v) in slots.into_iter().zip(arrays) {
            match v {
                Value::F64Array(a) if slot.elem == ScalarType::F64 && a.shape == slot.shape => self.mem.write_f(id, &a.data),
                Value::I64Array(a) if slot.elem == ScalarType::I64 && a.shape == slot.shape => self.mem.write_i(id, &a.data),
                other => return Err(self.bad(alloc::format!("written-back value of type {} for `{}`", other.ty(), slot.name))),
            }
        }
        Ok(())
    }

    fn bad(&self, message: String) -> RuntimeError {
        RuntimeError::BadArguments { function: self.func.name.clone(), message }
    }
}

struct Exec<'p, 'h> {
    code: &'p CompiledProgram,
    hook: Option<&'h mut dyn CallHook>,
    runner: Option<&'p dyn ParallelRunner>,
    tally: Tally,
    rechecks: BTreeMap<(usize, Vec<i64>), bool>,
    depth: usize,
}

pub(crate) fn invoke<M: Memory>(
    code: &CompiledProgram,
    fi: usize,
    args: &[ArgSlot],
    mem: &mut M,
    hook: Option<&mut dyn CallHook>,
    runner: Option<&dyn ParallelRunner>,
) -> Result<(Option<Value>, Tally), RuntimeError> {
    let f = &code.funcs[fi];
    let mut frame = Frame::new(f);
    for (p, a) in f.params.iter().zip(args) {
        match (*p, *a) {
            (ParamSlot::Int(s), ArgSlot::I(v)) => frame.ints[s as usize] = v,
            (ParamSlot::Float(s), ArgSlot::F(v)) => frame.floats[s as usize] = v,
            (ParamSlot::Array(s), ArgSlot::Array(id)) => frame.arrays[s as usize] = id,
            _ => unreachable!("arguments checked by caller"),
        }
    }
    let mut ex = Exec { code, hook, runner, tally: Tally::new(code), rechecks: BTreeMap::new(), depth: 0 };
    let r = ex.call(fi, frame, mem)?;
    Ok((r.map(Scalar::into_value), ex.tally))
}

impl<'p> Exec<'p, '_> {
    fn call<M: Memory>(&mut self, fi: usize, mut frame: Frame, mem: &mut M) -> Result<Option<Scalar>, RuntimeError> {
        let f = &self.code.funcs[fi];
        self.tally.calls[fi] += 1;
        if let Some(hook) = self.hook.as_deref_mut() {
            let mut site = CallSite { func: f, frame: &frame, mem: &mut *mem, depth: self.depth };
            if let Intercept::Handled(v) = hook.before_call(&mut site)? {
                return match (v, f.result) {
                    (None, None) => Ok(None),
                    (Some(Value::I64(v)), Some(ScalarType::I64)) => Ok(Some(Scalar::I(v))),
                    (Some(Value::F64(v)), Some(ScalarType::F64)) => Ok(Some(Scalar::F(v))),
                    _ => Err(RuntimeError::Hook(alloc::format!("intercepted call to `{}` returned a value of the wrong type", f.name))),
                };
            }
        }
        self.depth += 1;
        let mut ret = None;
        let r = self.block(fi, &f.body, &mut frame, mem, &mut ret);
        self.depth -= 1;
        r?;
        if let Some(hook) = self.hook.as_deref_mut() {
            hook.after_call(&f.name);
        }
        Ok(ret)
    }

    fn block<M: Memory>(
        &mut self,
        fi: usize,
        body: &[CStmt],
        fr: &mut Frame,
        mem: &mut M,
        ret: &mut Option<Scalar>,
    ) -> Result<(), RuntimeError> {
        let f = &self.code.funcs[fi];
        for stmt in body {
            match stmt {
                CStmt::SetI(s, e) => fr.ints[*s as usize] = eval_i(f, e, fr, mem)?,
                CStmt::SetF(s, e) => fr.floats[*s as usize] = eval_f(f, e, fr, mem)?,
                CStmt::StoreF { target, value } => {
                    let v = eval_f(f, value, fr, mem)?;
                    let (id, at) = address(f, target, fr, mem)?;
                    mem.store_f(id, at, v);
                }
                CStmt::StoreI { target, value } => {
                    let v = eval_i(f, value, fr, mem)?;
                    let (id, at) = address(f, target, fr, mem)?;
                    mem.store_i(id, at, v);
                }
                CStmt::Loop(lp) => self.run_loop(fi, lp, fr, mem)?,
                CStmt::Call(c) => {
                    let callee = &self.code.funcs[c.callee];
                    let mut nf = Frame::new(callee);
                    for (p, a) in callee.params.iter().zip(&c.args) {
                        match (*p, a) {
                            (ParamSlot::Int(s), CArg::Int(e)) => nf.ints[s as usize] = eval_i(f, e, fr, mem)?,
                            (ParamSlot::Float(s), CArg::Float(e)) => nf.floats[s as usize] = eval_f(f, e, fr, mem)?,
                            (ParamSlot::Array(s), CArg::Array(src)) => nf.arrays[s as usize] = fr.arrays[*src as usize],
                            _ => unreachable!("argument kinds checked by validation"),
                        }
                    }
                    let r = self.call(c.callee, nf, mem)?;
                    match (&c.dest, r) {
                        (Some(Dest::Int(s)), Some(Scalar::I(v))) => fr.ints[*s as usize] = v,
                        (Some(Dest::Float(s)), Some(Scalar::F(v))) => fr.floats[*s as usize] = v,
                        (None, _) => {}
                        _ => unreachable!("result kind checked by validation"),
                    }
                }
                CStmt::ReturnI(e) => *ret = Some(Scalar::I(eval_i(f, e, fr, mem)?)),
                CStmt::ReturnF(e) => *ret = Some(Scalar::F(eval_f(f, e, fr, mem)?)),
            }
        }
        Ok(())
    }

    fn run_loop<M: Memory>(&mut self, fi: usize, lp: &CLoop, fr: &mut Frame, mem: &mut M) -> Result<(), RuntimeError> {
        let f = &self.code.funcs[fi];
        let lo = eval_i(f, &lp.lower, fr, mem)?;
        let hi = eval_i(f, &lp.upper, fr, mem)?;
        let trips = trip_count(lo, hi, lp.step);
        if trips == 0 {
            return Ok(());
        }
        if lp.plan.parallel && trips > 1 && self.try_parallel(fi, lp, fr, mem, lo, trips)? {
            self.tally.iters[fi][lp.id] += trips;
            return Ok(());
        }
        self.iterate(fi, lp, fr, mem, lo, 0..trips)?;
        self.tally.iters[fi][lp.id] += trips;
        Ok(())
    }

    /// Runs iterations `range` (counted from 0) of `lp`.
    fn iterate<M: Memory>(
        &mut self,
        fi: usize,
        lp: &CLoop,
        fr: &mut Frame,
        mem: &mut M,
        lo: i64,
        range: core::ops::Range<u64>,
    ) -> Result<(), RuntimeError> {
        let idx = lp.index as usize;
        let width = lp.plan.vector_width.min(MAX_LANES);
        if width > 1 {
            return vector_iterate(&self.code.funcs[fi], lp, fr, mem, lo, range, width);
        }
        let mut ret = None;
        for k in range {
            fr.ints[idx] = iteration_value(lo, lp.step, k);
            self.block(fi, &lp.body, fr, mem, &mut ret)?;
        }
        Ok(())
    }

    /// Splits the loop across the runner if the memory can be shared.
    /// Returns false when the loop must run sequentially instead.
    fn try_parallel<M: Memory>(
        &mut self,
        fi: usize,
        lp: &CLoop,
        fr: &mut Frame,
        mem: &M,
        lo: i64,
        trips: u64,
    ) -> Result<bool, RuntimeError> {
        let (Some(runner), Some(shared)) = (self.runner, mem.shared()) else {
            return Ok(false);
        };
        if let Some(r) = lp.plan.recheck {
            if !self.recheck(r, fr) {
                return Ok(false);
            }
        }
        let chunks = (runner.workers() as u64).min(trips);
        if chunks <= 1 {
            return Ok(false);
        }
        let code = self.code;
        let frame: &Frame = fr;
        let task = move |k: usize| {
            let k = k as u64;
            let start = trips * k / chunks;
            let end = trips * (k + 1) / chunks;
            let mut wf = frame.clone();
            let mut view = shared.view();
            let mut w = Exec { code, hook: None, runner: None, tally: Tally::new(code), rechecks: BTreeMap::new(), depth: 1 };
            ChunkResult(w.iterate(fi, lp, &mut wf, &mut view, lo, start..end).map(|_| w.tally))
        };
        let outs = runner.run(chunks as usize, &task);
        // Chunks are contiguous and ordered, so the first failing chunk holds
        // the error a sequential run would have hit first.
        for out in outs {
            self.tally.merge(&out.0?);
        }
        Ok(true)
    }

    fn recheck(&mut self, r: usize, fr: &Frame) -> bool {
        let rc = &self.code.rechecks[r];
        let values: Vec<i64> = rc.inputs.iter().map(|(_, s)| fr.ints[*s as usize]).collect();
        *self.rechecks.entry((r, values.clone())).or_insert_with(|| {
            let bindings: Vec<(&str, i64)> = rc.inputs.iter().map(|(n, _)| n.as_str()).zip(values).collect();
            crate::server::holds_independent(&rc.function, rc.loop_id, &bindings)
        })
    }
}

/// Evaluates independent iterations in lane groups: each store statement
/// is evaluated for every lane of the group, then its values are stored.
fn vector_iterate<M: Memory>(
    f: &CFunc,
    lp: &CLoop,
    fr: &mut Frame,
    mem: &mut M,
    lo: i64,
    range: core::ops::Range<u64>,
    width: usize,
) -> Result<(), RuntimeError> {
    let idx = lp.index as usize;
    let mut fv = [0.0f64; MAX_LANES];
    let mut iv = [0i64; MAX_LANES];
    let mut at = [(0usize, 0usize); MAX_LANES];
    let mut k = range.start;
    while k < range.end {
        let n = ((range.end - k) as usize).min(width);
        for stmt in &lp.body {
            match stmt {
                CStmt::StoreF { target, value } => {
                    for lane in 0..n {
                        fr.ints[idx] = iteration_value(lo, lp.step, k + lane as u64);
                        fv[lane] = eval_f(f, value, fr, mem)?;
                        at[lane] = address(f, target, fr, mem)?;
                    }
                    for lane in 0..n {
                        mem.store_f(at[lane].0, at[lane].1, fv[lane]);
                    }
                }
                CStmt::StoreI { target, value } => {
                    for lane in 0..n {
                        fr.ints[idx] = iteration_value(lo, lp.step, k + lane as u64);
                        iv[lane] = eval_i(f, value, fr, mem)?;
                        at[lane] = address(f, target, fr, mem)?;
                    }
                    for lane in 0..n {
                        mem.store_i(at[lane].0, at[lane].1, iv[lane]);
                    }
                }
                _ => unreachable!("vector plans cover store-only bodies"),
            }
        }
        k += n as u64;
    }
    Ok(())
}

pub(crate) fn trip_count(lo: i64, hi: i64, step: i64) -> u64 {
    if hi <= lo {
        return 0;
    }
    let span = hi as i128 - lo as i128;
    ((span + step as i128 - 1) / step as i128) as u64
}

#[inline]
fn iteration_value(lo: i64, step: i64, k: u64) -> i64 {
    (lo as i128 + k as i128 * step as i128) as i64
}

#[inline]
fn address<M: Memory>(f: &CFunc, ld: &CLoad, fr: &Frame, mem: &M) -> Result<(usize, usize), RuntimeError> {
    let slot = &f.arrays[ld.arr as usize];
    let mut at = 0usize;
    for (d, ix) in ld.idx.iter().enumerate() {
        let v = eval_i(f, ix, fr, mem)?;
        let extent = slot.shape[d];
        if v < 0 || v as u64 >= extent as u64 {
            return Err(RuntimeError::OutOfBounds {
                function: f.name.clone(),
                access: ld.text.as_ref().into(),
                dim: d,
                index: v,
                extent,
                span: ld.span,
            });
        }
        at += v as usize * slot.strides[d];
    }
    Ok((fr.arrays[ld.arr as usize], at))
}

fn eval_i<M: Memory>(f: &CFunc, e: &IExpr, fr: &Frame, mem: &M) -> Result<i64, RuntimeError> {
    Ok(match e {
        IExpr::Const(v) => *v,
        IExpr::Slot(s) => fr.ints[*s as usize],
        IExpr::Load(ld) => {
            let (id, at) = address(f, ld, fr, mem)?;
            mem.load_i(id, at)
        }
        IExpr::Neg(a) => eval_i(f, a, fr, mem)?.wrapping_neg(),
        IExpr::Bin(op, a, b, span) => {
            let x = eval_i(f, a, fr, mem)?;
            let y = eval_i(f, b, fr, mem)?;
            match op {
                BinOp::Add => x.wrapping_add(y),
                BinOp::Sub => x.wrapping_sub(y),
                BinOp::Mul => x.wrapping_mul(y),
                BinOp::Div => {
                    if y == 0 {
                        return Err(RuntimeError::DivisionByZero { function: f.name.clone(), span: *span });
                    }
                    x.wrapping_div(y)
                }
            }
        }
        IExpr::FromF(a) => eval_f(f, a, fr, mem)? as i64,
    })
}

fn eval_f<M: Memory>(f: &CFunc, e: &FExpr, fr: &Frame, mem: &M) -> Result<f64, RuntimeError> {
    Ok(match e {
        FExpr::Const(v) => *v,
        FExpr::Slot(s) => fr.floats[*s as usize],
        FExpr::Load(ld) => {
            let (id, at) = address(f, ld, fr, mem)?;
            mem.load_f(id, at)
        }
        FExpr::Neg(a) => -eval_f(f, a, fr, mem)?,
        FExpr::Bin(op, a, b) => {
            let x = eval_f(f, a, fr, mem)?;
            let y = eval_f(f, b, fr, mem)?;
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
            }
        }
        FExpr::FromI(a) => eval_i(f, a, fr, mem)? as f64,
    })
}
