//! Random well-formed programs for conservativeness fuzzing.
//!
//! Programs are emitted as text. `main(%a, %b)` calls helpers
//! `f1(%p: ptr, %n: i64)`..; a helper only calls higher-numbered helpers, so
//! every program terminates. Loops are do-while shaped with a bounded trip
//! count. All stack memory is initialised before it is read and integers
//! derived from addresses never reach outputs, returns or branches, so a run
//! without memory errors behaves the same under any frame layout.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenConfig {
    pub max_functions: usize,
    /// Per function.
    pub max_loops: usize,
    /// Per function.
    pub max_allocas: usize,
    pub max_stmts: usize,
    /// Percentage of accesses aimed off the end of their object.
    pub oob_percent: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_functions: 4,
            max_loops: 3,
            max_allocas: 6,
            max_stmts: 8,
            oob_percent: 12,
        }
    }
}

const SIZES: [i64; 9] = [1, 4, 8, 12, 16, 24, 32, 40, 64];
const WIDTHS: [(i64, &str); 4] = [(1, "i8"), (2, "i16"), (4, "i32"), (8, "i64")];

#[derive(Clone, Debug)]
struct Ptr {
    name: String,
    /// Bytes known to be valid from this pointer, if any.
    extent: Option<i64>,
    /// Carries provenance. Pointers rebuilt from integers do not, so the
    /// oracle cannot judge accesses through them and they must stay in
    /// bounds.
    tracked: bool,
}

struct FnGen<'a> {
    rng: &'a mut ChaCha8Rng,
    cfg: &'a GenConfig,
    out: String,
    label: String,
    next: usize,
    ints: Vec<String>,
    ptrs: Vec<Ptr>,
    /// Pointer-only slots: (pointer, size).
    holders: Vec<(String, i64)>,
    loops_left: usize,
    allocas_left: usize,
    callees: Vec<String>,
    depth: usize,
    is_main: bool,
}

impl FnGen<'_> {
    fn fresh(&mut self) -> String {
        self.next += 1;
        format!("%v{}", self.next)
    }

    fn fresh_label(&mut self) -> String {
        self.next += 1;
        format!("b{}", self.next)
    }

    fn emit(&mut self, s: impl AsRef<str>) {
        self.out += "  ";
        self.out += s.as_ref();
        self.out.push('\n');
    }

    fn start_block(&mut self, l: String) {
        let _ = writeln!(self.out, "{l}:");
        self.label = l;
    }

    fn chance(&mut self, percent: u32) -> bool {
        self.rng.gen_range(0..100) < percent
    }

    fn int(&mut self) -> String {
        if !self.ints.is_empty() && self.chance(70) {
            self.ints.choose(self.rng).unwrap().clone()
        } else {
            self.rng.gen_range(-4..64).to_string()
        }
    }

    fn ptr(&mut self) -> Option<Ptr> {
        self.ptrs.choose(self.rng).cloned()
    }

    fn tracked_ptr(&mut self) -> Option<Ptr> {
        let t: Vec<&Ptr> = self.ptrs.iter().filter(|p| p.tracked).collect();
        t.choose(self.rng).map(|p| (*p).clone())
    }

    fn alloca(&mut self, size: i64) -> String {
        let v = self.fresh();
        self.emit(format!("{v} = alloca {size}"));
        self.allocas_left -= 1;
        // Zero it so that no run depends on stale frame contents.
        let mut off = 0;
        while off + 8 <= size {
            self.emit(format!("store.i64 [{v} + {off}] = 0"));
            off += 8;
        }
        while off < size {
            self.emit(format!("store.i8 [{v} + {off}] = 0"));
            off += 1;
        }
        v
    }

    fn holder(&mut self) {
        let size = *[8, 16, 24].choose(self.rng).unwrap();
        let v = self.alloca(size);
        self.holders.push((v, size));
    }

    fn data_alloca(&mut self) {
        let size = *SIZES.choose(self.rng).unwrap();
        let v = self.alloca(size);
        self.ptrs.push(Ptr {
            name: v,
            extent: Some(size),
            tracked: true,
        });
    }

    /// Offset and width for an access through a pointer of `extent` bytes.
    fn place(&mut self, extent: Option<i64>, tracked: bool) -> (i64, i64, &'static str) {
        let e = extent.unwrap_or(8);
        let fits: Vec<_> = WIDTHS.iter().filter(|(w, _)| tracked || *w <= e).collect();
        let (w, ty) = **fits.choose(self.rng).unwrap();
        let oob = tracked && self.chance(self.cfg.oob_percent);
        let off = if oob || e < w {
            *[-w, -1, e, e - w + 1, e + 8].choose(self.rng).unwrap()
        } else {
            self.rng.gen_range(0..=(e - w) / w) * w
        };
        (off, w, ty)
    }

    fn access(&mut self, base: &str, extent: Option<i64>, tracked: bool) {
        let (off, _, ty) = self.place(extent, tracked);
        let at = if off < 0 {
            format!("[{base} - {}]", -off)
        } else {
            format!("[{base} + {off}]")
        };
        if self.chance(50) {
            let v = self.int();
            self.emit(format!("store.{ty} {at} = {v}"));
        } else {
            let r = self.fresh();
            self.emit(format!("{r} = load.{ty} {at}"));
            self.ints.push(r);
        }
    }

    fn arith(&mut self) {
        let op = *["add", "sub", "mul", "and", "xor", "or"].choose(self.rng).unwrap();
        let (a, b) = (self.int(), self.int());
        let r = self.fresh();
        self.emit(format!("{r} = {op} {a}, {b}"));
        self.ints.push(r);
    }

    fn const_access(&mut self) {
        if let Some(p) = self.ptr() {
            self.access(&p.name, p.extent, p.tracked);
        }
    }

    fn data_index(&mut self) {
        let Some(p) = self.tracked_ptr() else { return };
        let (w, ty) = *WIDTHS.choose(self.rng).unwrap();
        let i = self.int();
        let mask = *[1, 3, 7, 15].choose(self.rng).unwrap();
        let k = self.fresh();
        self.emit(format!("{k} = and {i}, {mask}"));
        let g = self.fresh();
        self.emit(format!("{g} = gep {}, {k}, scale {w}, off 0", p.name));
        if self.chance(50) {
            let v = self.int();
            self.emit(format!("store.{ty} [{g} + 0] = {v}"));
        } else {
            let r = self.fresh();
            self.emit(format!("{r} = load.{ty} [{g} + 0]"));
            self.ints.push(r);
        }
    }

    fn lp(&mut self) {
        let Some(p) = self.tracked_ptr() else { return };
        self.loops_left -= 1;
        let (scale, ty) = *WIDTHS.choose(self.rng).unwrap();
        let scale = if self.chance(20) { scale * 2 } else { scale };
        let e = p.extent.unwrap_or(16);
        let n_in = (e / scale).max(1);
        let up = self.chance(75);
        let fuzz = if self.chance(self.cfg.oob_percent) { 1 } else { 0 };
        let (start, step, cont) = if up {
            let bound = if self.chance(15) && !self.ints.is_empty() {
                let b = self.fresh();
                let src = self.int();
                self.emit(format!("{b} = and {src}, 31"));
                b
            } else {
                (n_in + fuzz).to_string()
            };
            let step = if self.chance(20) { 2 } else { 1 };
            ("0".to_string(), step, format!("slt %I2, {bound}"))
        } else {
            ((n_in - 1).to_string(), -1, format!("sge %I2, {}", -fuzz))
        };
        let pre = self.label.clone();
        let head = self.fresh_label();
        let exit = self.fresh_label();
        let i = self.fresh();
        let i2 = self.fresh();
        self.emit(format!("br {head}"));
        self.start_block(head.clone());
        let marker = format!("@@latch{}@@", self.next);
        self.emit(format!("{i} = phi i64 [{start}, {pre}], [{i2}, {marker}]"));
        let saved_ints = self.ints.len();
        self.depth += 1;
        let idx = match self.rng.gen_range(0..10) {
            0 => {
                let r = self.fresh();
                self.emit(format!("{r} = mul {i}, {i}"));
                r
            }
            1 => {
                let a = self.int();
                let x = self.fresh();
                self.emit(format!("{x} = xor {i}, {a}"));
                let r = self.fresh();
                self.emit(format!("{r} = and {x}, 7"));
                r
            }
            2 => {
                let r = self.fresh();
                self.emit(format!("{r} = add {i}, 1"));
                r
            }
            _ => i.clone(),
        };
        let g = self.fresh();
        self.emit(format!("{g} = gep {}, {idx}, scale {scale}, off 0", p.name));
        let w = scale.min(8);
        let ty = WIDTHS.iter().find(|(x, _)| *x == w).map_or(ty, |(_, t)| t);
        if self.chance(60) {
            self.emit(format!("store.{ty} [{g} + 0] = {i}"));
        } else {
            let r = self.fresh();
            self.emit(format!("{r} = load.{ty} [{g} + 0]"));
            self.ints.push(r);
        }
        let extra = self.rng.gen_range(0..=1);
        for _ in 0..extra {
            self.stmt();
        }
        self.depth -= 1;
        self.ints.truncate(saved_ints);
        self.ints.push(i.clone());
        self.emit(format!("{i2} = add {i}, {step}"));
        let c = self.fresh();
        self.emit(format!("{c} = cmp {}", cont.replace("%I2", &i2)));
        self.emit(format!("br {c}, {head}, {exit}"));
        self.out = self.out.replace(&marker, &self.label.clone());
        self.start_block(exit);
    }

    fn call(&mut self) {
        if self.callees.is_empty() {
            return;
        }
        let Some(p) = self.tracked_ptr() else { return };
        let callee = self.callees.choose(self.rng).unwrap().clone();
        let arg = match p.extent {
            Some(e) if e > 8 && self.chance(30) => {
                let g = self.fresh();
                self.emit(format!("{g} = gep {}, 1, scale 8, off 0", p.name));
                g
            }
            _ => p.name.clone(),
        };
        let n = self.int();
        let r = self.fresh();
        self.emit(format!("{r} = call @{callee}({arg}, {n})"));
        self.ints.push(r);
    }

    fn ptr_store(&mut self) {
        let Some(p) = self.tracked_ptr() else { return };
        let (h, size) = if !self.holders.is_empty() && self.chance(80) {
            self.holders.choose(self.rng).unwrap().clone()
        } else {
            ("@gp".to_string(), 8)
        };
        let off = self.rng.gen_range(0..size / 8) * 8;
        self.emit(format!("store.ptr [{h} + {off}] = {}", p.name));
    }

    /// Loads a pointer back and uses it only when it is not NULL.
    fn ptr_load(&mut self) {
        let (h, size) = if !self.holders.is_empty() && self.chance(70) {
            self.holders.choose(self.rng).unwrap().clone()
        } else {
            ("@gp".to_string(), 8)
        };
        let off = self.rng.gen_range(0..size / 8) * 8;
        let q = self.fresh();
        self.emit(format!("{q} = load.ptr [{h} + {off}]"));
        let c = self.fresh();
        self.emit(format!("{c} = cmp eq {q}, null"));
        let then = self.fresh_label();
        let join = self.fresh_label();
        self.emit(format!("br {c}, {join}, {then}"));
        self.start_block(then);
        let saved = (self.ints.len(), self.ptrs.len());
        self.access(&q, Some(4), true);
        self.ints.truncate(saved.0);
        self.ptrs.truncate(saved.1);
        self.emit(format!("br {join}"));
        self.start_block(join);
    }

    fn int_cast(&mut self) {
        let Some(p) = self.ptr() else { return };
        let e = p.extent.unwrap_or(8);
        let off = self.rng.gen_range(0..=e.max(1) / 2);
        let t = self.fresh();
        self.emit(format!("{t} = ptrtoint {}", p.name));
        let t2 = self.fresh();
        self.emit(format!("{t2} = add {t}, {off}"));
        let q = self.fresh();
        self.emit(format!("{q} = inttoptr {t2}"));
        self.ptrs.push(Ptr {
            name: q,
            extent: Some(e - off),
            tracked: false,
        });
    }

    fn branch(&mut self) {
        let (a, b) = (self.int(), self.int());
        let pred = *["eq", "ne", "slt", "sgt"].choose(self.rng).unwrap();
        let c = self.fresh();
        self.emit(format!("{c} = cmp {pred} {a}, {b}"));
        let then = self.fresh_label();
        let join = self.fresh_label();
        self.emit(format!("br {c}, {then}, {join}"));
        self.start_block(then);
        let saved = (self.ints.len(), self.ptrs.len());
        self.depth += 1;
        self.stmt();
        self.depth -= 1;
        self.ints.truncate(saved.0);
        self.ptrs.truncate(saved.1);
        self.emit(format!("br {join}"));
        self.start_block(join);
    }

    fn late_alloca(&mut self) {
        if self.allocas_left == 0 {
            return;
        }
        if self.chance(50) {
            self.data_alloca();
            return;
        }
        // Dynamic: 1..=8 elements of 8 bytes, zeroed by a loop.
        let src = self.int();
        let k = self.fresh();
        self.emit(format!("{k} = and {src}, 7"));
        let n = self.fresh();
        self.emit(format!("{n} = add {k}, 1"));
        let v = self.fresh();
        self.emit(format!("{v} = alloca {n}, elem 8"));
        self.allocas_left -= 1;
        let pre = self.label.clone();
        let head = self.fresh_label();
        let exit = self.fresh_label();
        let (i, i2, g, c) = (self.fresh(), self.fresh(), self.fresh(), self.fresh());
        self.emit(format!("br {head}"));
        self.start_block(head.clone());
        self.emit(format!("{i} = phi i64 [0, {pre}], [{i2}, {head}]"));
        self.emit(format!("{g} = gep {v}, {i}, scale 8, off 0"));
        self.emit(format!("store.i64 [{g} + 0] = 0"));
        self.emit(format!("{i2} = add {i}, 1"));
        self.emit(format!("{c} = cmp slt {i2}, {n}"));
        self.emit(format!("br {c}, {head}, {exit}"));
        self.start_block(exit);
        self.ptrs.push(Ptr {
            name: v,
            extent: Some(8),
            tracked: true,
        });
    }

    fn leak(&mut self) {
        if let Some(p) = self.ptrs.iter().rfind(|p| p.tracked && p.name.starts_with("%v")).cloned() {
            self.emit(format!("store.ptr [@gp + 0] = {}", p.name));
        }
    }

    fn stmt(&mut self) {
        let nested = self.depth > 0;
        loop {
            match self.rng.gen_range(0..15) {
                0..=2 => self.const_access(),
                3 => self.arith(),
                4 => self.data_index(),
                5 | 6 if self.loops_left > 0 && self.depth < 2 => self.lp(),
                7 if !nested || self.depth < 2 => self.call(),
                8 => self.ptr_store(),
                9 => self.ptr_load(),
                10 => self.int_cast(),
                11 if self.depth < 2 => self.branch(),
                12 if !nested => self.late_alloca(),
                13 if !self.is_main && self.chance(30) => self.leak(),
                14 => {
                    let v = self.int();
                    self.emit(format!("output {v}"));
                }
                _ => continue,
            }
            return;
        }
    }
}

/// Generates one program from `rng`.
pub fn generate(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> String {
    let nfun = rng.gen_range(1..=cfg.max_functions.max(1));
    let mut text = String::from("global @g0 : 32\nglobal @gp : 8\n\n");
    for fi in 0..nfun {
        let is_main = fi == 0;
        let name = if is_main { "main".to_string() } else { format!("f{fi}") };
        let mut g = FnGen {
            rng: &mut *rng,
            cfg,
            out: String::new(),
            label: "entry".into(),
            next: 0,
            ints: Vec::new(),
            ptrs: vec![Ptr {
                name: "@g0".into(),
                extent: Some(32),
                tracked: true,
            }],
            holders: Vec::new(),
            loops_left: cfg.max_loops,
            allocas_left: cfg.max_allocas.max(1),
            callees: (fi + 1..nfun).map(|j| format!("f{j}")).collect(),
            depth: 0,
            is_main,
        };
        if is_main {
            g.ints = vec!["%a".into(), "%b".into()];
            let _ = writeln!(text, "func @main(%a: i64, %b: i64) {{");
        } else {
            g.ints = vec!["%n".into()];
            g.ptrs.push(Ptr {
                name: "%p".into(),
                extent: None,
                tracked: true,
            });
            let _ = writeln!(text, "func @{name}(%p: ptr, %n: i64) {{");
        }
        g.start_block("entry".into());
        let nalloca = g.rng.gen_range(1..=cfg.max_allocas.clamp(1, 4));
        for _ in 0..nalloca {
            if g.allocas_left > 1 && g.chance(20) {
                g.holder();
            } else {
                g.data_alloca();
            }
        }
        let nstmt = g.rng.gen_range(2..=cfg.max_stmts.max(2));
        for _ in 0..nstmt {
            g.stmt();
        }
        if is_main && nfun > 1 && g.chance(50) {
            // Read back whatever a helper may have parked in @gp.
            g.ptr_load();
        }
        let r = g.int();
        g.emit(format!("ret {r}"));
        text += &g.out;
        text += "}\n\n";
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use tagguard_core::ir::parse_program;

    #[test]
    fn generated_programs_validate() {
        for seed in 0..300 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = generate(&mut rng, &GenConfig::default());
            if let Err(d) = parse_program(&src) {
                panic!("seed {seed}: {d}\n{src}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&mut ChaCha8Rng::seed_from_u64(9), &GenConfig::default());
        let b = generate(&mut ChaCha8Rng::seed_from_u64(9), &GenConfig::default());
        assert_eq!(a, b);
    }
}
