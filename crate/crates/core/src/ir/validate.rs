use super::*;
use std::collections::{HashMap, HashSet};

/// Checks every structural invariant of a program. An empty result means the
/// program is well formed.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for g in &p.globals {
        if !seen.insert(g.name.as_str()) {
            out.push(Diagnostic::error(format!("duplicate definition of @{}", g.name)));
        }
        if g.size == 0 {
            out.push(Diagnostic::error(format!("global @{} has size 0", g.name)));
        }
        if g.init.as_ref().is_some_and(|i| i.len() as u64 > g.size) {
            out.push(Diagnostic::error(format!(
                "initializer of @{} is longer than its size",
                g.name
            )));
        }
        if g.tag.is_some_and(|t| t > 15) {
            out.push(Diagnostic::error(format!("tag of @{} exceeds 4 bits", g.name)));
        }
    }
    let mut callees = HashSet::new();
    for name in p
        .functions
        .iter()
        .map(|f| &f.name)
        .chain(p.externs.iter().map(|e| &e.name))
    {
        if !callees.insert(name.as_str()) {
            out.push(Diagnostic::error(format!("duplicate definition of @{name}")));
        }
    }
    match p.function(&p.entry) {
        None => out.push(Diagnostic::error(format!(
            "entry function @{} is not defined",
            p.entry
        ))),
        Some(f) => {
            if f.params.iter().any(|&v| f.value(v).kind != Kind::I64) {
                out.push(
                    Diagnostic::error("entry function parameters must be i64").at(&f.name, None, None),
                );
            }
        }
    }
    for f in &p.functions {
        FnValidator::new(p, f, &mut out).run();
    }
    out
}

struct FnValidator<'a> {
    p: &'a Program,
    f: &'a Function,
    out: &'a mut Vec<Diagnostic>,
}

/// Where a value is defined: block and position (0 = phi, i + 1 = body
/// instruction i). Parameters sit before everything.
#[derive(Clone, Copy)]
enum Def {
    Param,
    At(BlockId, usize),
}

impl<'a> FnValidator<'a> {
    fn new(p: &'a Program, f: &'a Function, out: &'a mut Vec<Diagnostic>) -> Self {
        FnValidator { p, f, out }
    }

    fn err(&mut self, block: Option<usize>, index: Option<usize>, msg: String) {
        let label = block.and_then(|b| self.f.blocks.get(b)).map(|b| b.label.as_str());
        self.out
            .push(Diagnostic::error(msg).at(&self.f.name, label, index.map(|i| i as u32)));
    }

    fn run(&mut self) {
        let f = self.f;
        if f.blocks.is_empty() {
            self.err(None, None, "function has no blocks".into());
            return;
        }
        let mut names = HashSet::new();
        for v in &f.values {
            if !names.insert(v.name.as_str()) {
                self.err(None, None, format!("duplicate value name %{}", v.name));
            }
        }
        let mut labels = HashSet::new();
        for (bi, b) in f.blocks.iter().enumerate() {
            if !labels.insert(b.label.as_str()) {
                self.err(Some(bi), None, format!("duplicate label '{}'", b.label));
            }
        }
        let nblocks = f.blocks.len();
        let mut bad_target = false;
        for (bi, b) in f.blocks.iter().enumerate() {
            match &b.term {
                None => self.err(Some(bi), None, format!("block '{}' has no terminator", b.label)),
                Some(t) => {
                    for s in t.successors() {
                        if s.index() >= nblocks {
                            bad_target = true;
                            self.err(Some(bi), Some(b.insts.len()), "branch to missing block".into());
                        }
                    }
                }
            }
        }
        if bad_target {
            return;
        }

        // Definitions.
        let mut defs: Vec<Option<Def>> = vec![None; f.values.len()];
        let mut define = |this: &mut Self, v: ValueId, d: Def, bi: Option<usize>, idx: Option<usize>| {
            if v.index() >= defs.len() {
                this.err(bi, idx, format!("value id {} out of range", v.0));
            } else if defs[v.index()].is_some() {
                this.err(bi, idx, format!("%{} defined more than once", f.value_name(v)));
            } else {
                defs[v.index()] = Some(d);
            }
        };
        for &p in &f.params {
            define(self, p, Def::Param, None, None);
        }
        for (bi, b) in f.blocks.iter().enumerate() {
            let bid = BlockId(bi as u32);
            for phi in &b.phis {
                define(self, phi.result, Def::At(bid, 0), Some(bi), None);
            }
            for (i, inst) in b.insts.iter().enumerate() {
                if let Some(r) = inst.result() {
                    define(self, r, Def::At(bid, i + 1), Some(bi), Some(i));
                }
            }
        }

        let cfg = Cfg::new(f);
        let dom = DomTree::new(&cfg);

        for (bi, b) in f.blocks.iter().enumerate() {
            let bid = BlockId(bi as u32);
            let reachable = dom.is_reachable(bid);

            // Phi edges must match predecessors exactly.
            let mut preds: HashMap<BlockId, usize> = HashMap::new();
            for &pr in &cfg.preds[bi] {
                *preds.entry(pr).or_default() += 1;
            }
            for phi in &b.phis {
                let mut got: HashMap<BlockId, usize> = HashMap::new();
                for (_, pb) in &phi.incoming {
                    *got.entry(*pb).or_default() += 1;
                }
                if got.keys().any(|k| k.index() >= nblocks) || got != preds {
                    self.err(
                        Some(bi),
                        None,
                        format!(
                            "phi %{} incoming edges do not match predecessors",
                            f.value_name(phi.result)
                        ),
                    );
                }
                if f.value(phi.result).kind != phi.kind {
                    self.err(Some(bi), None, "phi kind disagrees with its value".into());
                }
                for (v, pb) in &phi.incoming {
                    self.kind_is(v, phi.kind, Some(bi), None, "phi incoming");
                    if reachable && pb.index() < nblocks && dom.is_reachable(*pb) {
                        // Must be available at the end of the predecessor.
                        let end = f.blocks[pb.index()].insts.len() + 1;
                        self.check_use(v, *pb, end, &defs, &dom, bi, None);
                    }
                }
            }
            for (i, inst) in b.insts.iter().enumerate() {
                if reachable {
                    for o in inst.operands() {
                        self.check_use(o, bid, i + 1, &defs, &dom, bi, Some(i));
                    }
                }
                self.check_inst(inst, bi, i);
            }
            if let Some(t) = &b.term {
                let ti = b.insts.len();
                if reachable {
                    for o in t.operands() {
                        self.check_use(o, bid, ti + 1, &defs, &dom, bi, Some(ti));
                    }
                }
                match t {
                    Terminator::CondBr { cond, .. } => {
                        self.kind_is(cond, Kind::I64, Some(bi), Some(ti), "branch condition")
                    }
                    Terminator::Ret(Some(v)) => {
                        self.kind_is(v, f.ret_kind, Some(bi), Some(ti), "return value")
                    }
                    _ => {}
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn check_use(
        &mut self,
        o: &Operand,
        bid: BlockId,
        pos: usize,
        defs: &[Option<Def>],
        dom: &DomTree,
        bi: usize,
        idx: Option<usize>,
    ) {
        match o {
            Operand::Global(g) => {
                if self.p.global(g).is_none() {
                    self.err(Some(bi), idx, format!("unknown identifier @{g}"));
                }
            }
            Operand::Value(v) => {
                let Some(def) = defs.get(v.index()) else {
                    self.err(Some(bi), idx, format!("value id {} out of range", v.0));
                    return;
                };
                let ok = match def {
                    None => {
                        self.err(
                            Some(bi),
                            idx,
                            format!("unknown identifier %{}", self.f.value_name(*v)),
                        );
                        return;
                    }
                    Some(Def::Param) => true,
                    Some(Def::At(db, dpos)) => {
                        if *db == bid {
                            *dpos < pos
                        } else {
                            dom.dominates(*db, bid)
                        }
                    }
                };
                if !ok {
                    self.err(
                        Some(bi),
                        idx,
                        format!("use before def of %{}", self.f.value_name(*v)),
                    );
                }
            }
            Operand::Imm(_) | Operand::Null => {}
        }
    }

    fn kind_is(&mut self, o: &Operand, want: Kind, bi: Option<usize>, idx: Option<usize>, what: &str) {
        if let Operand::Value(v) = o {
            if v.index() >= self.f.values.len() {
                return;
            }
        }
        let got = self.f.operand_kind(o);
        if got != want {
            self.err(bi, idx, format!("{what} must be {want}, found {got}"));
        }
    }

    fn result_is(&mut self, r: ValueId, want: Kind, bi: usize, i: usize) {
        if let Some(v) = self.f.values.get(r.index()) {
            if v.kind != want {
                self.err(
                    Some(bi),
                    Some(i),
                    format!("%{} must be {want}, found {}", v.name, v.kind),
                );
            }
        }
    }

    fn check_inst(&mut self, inst: &Inst, bi: usize, i: usize) {
        let (b, x) = (Some(bi), Some(i));
        match inst {
            Inst::Alloca { result, size, .. } => {
                if let AllocaSize::Dynamic { count, .. } = size {
                    self.kind_is(count, Kind::I64, b, x, "alloca count");
                }
                self.result_is(*result, Kind::Ptr, bi, i);
            }
            Inst::Load {
                result, ty, addr, ..
            } => {
                self.kind_is(addr, Kind::Ptr, b, x, "load address");
                self.result_is(*result, ty.kind(), bi, i);
            }
            Inst::Store {
                ty, addr, value, ..
            } => {
                self.kind_is(addr, Kind::Ptr, b, x, "store address");
                self.kind_is(value, ty.kind(), b, x, "stored value");
            }
            Inst::Gep {
                result,
                base,
                index,
                ..
            } => {
                self.kind_is(base, Kind::Ptr, b, x, "gep base");
                self.kind_is(index, Kind::I64, b, x, "gep index");
                self.result_is(*result, Kind::Ptr, bi, i);
            }
            Inst::Call {
                result,
                callee,
                args,
            } => {
                if let Some(cf) = self.p.function(callee) {
                    if cf.params.len() != args.len() {
                        self.err(
                            b,
                            x,
                            format!(
                                "@{callee} takes {} arguments, {} given",
                                cf.params.len(),
                                args.len()
                            ),
                        );
                    } else {
                        for (k, (a, &pv)) in args.iter().zip(&cf.params).enumerate() {
                            let want = cf.value(pv).kind;
                            self.kind_is(a, want, b, x, &format!("argument {k}"));
                        }
                    }
                } else if self.p.extern_decl(callee).is_none() {
                    self.err(b, x, format!("unknown identifier @{callee}"));
                }
                if let (Some(r), Some(k)) = (result, self.p.callee_ret_kind(callee)) {
                    self.result_is(*r, k, bi, i);
                }
            }
            Inst::IntToPtr { result, value } => {
                self.kind_is(value, Kind::I64, b, x, "inttoptr operand");
                self.result_is(*result, Kind::Ptr, bi, i);
            }
            Inst::PtrToInt { result, value } => {
                self.kind_is(value, Kind::Ptr, b, x, "ptrtoint operand");
                self.result_is(*result, Kind::I64, bi, i);
            }
            Inst::Bin {
                result, lhs, rhs, ..
            } => {
                self.kind_is(lhs, Kind::I64, b, x, "arithmetic operand");
                self.kind_is(rhs, Kind::I64, b, x, "arithmetic operand");
                self.result_is(*result, Kind::I64, bi, i);
            }
            Inst::Cmp {
                result, lhs, rhs, ..
            } => {
                let k = self.f.operand_kind(lhs);
                self.kind_is(rhs, k, b, x, "comparison operand");
                self.result_is(*result, Kind::I64, bi, i);
            }
            Inst::Const { result, value } => match value {
                Operand::Imm(_) => self.result_is(*result, Kind::I64, bi, i),
                Operand::Null => self.result_is(*result, Kind::Ptr, bi, i),
                _ => self.err(b, x, "const takes an integer or null".into()),
            },
            Inst::Output { .. } | Inst::RetagFrame => {}
            Inst::Guard { result, .. } => self.result_is(*result, Kind::Ptr, bi, i),
            Inst::SetTag { addr, size } => {
                self.kind_is(addr, Kind::Ptr, b, x, "settag address");
                self.kind_is(size, Kind::I64, b, x, "settag size");
            }
            Inst::TagPtr { result, base, tag } => {
                self.kind_is(base, Kind::Ptr, b, x, "tagptr base");
                if *tag > 15 {
                    self.err(b, x, "tag exceeds 4 bits".into());
                }
                self.result_is(*result, Kind::Ptr, bi, i);
            }
            Inst::ClearTopTagBit { result, ptr } => {
                self.kind_is(ptr, Kind::Ptr, b, x, "cleartag operand");
                self.result_is(*result, Kind::Ptr, bi, i);
            }
            Inst::TfpLoad {
                result,
                loaded,
                addr,
                ..
            } => {
                self.kind_is(loaded, Kind::Ptr, b, x, "tfp operand");
                self.kind_is(addr, Kind::Ptr, b, x, "tfp address");
                self.result_is(*result, Kind::Ptr, bi, i);
            }
            Inst::KeepTag { result, ptr, from } => {
                self.kind_is(ptr, Kind::Ptr, b, x, "keeptag operand");
                self.kind_is(from, Kind::Ptr, b, x, "keeptag source");
                self.result_is(*result, Kind::Ptr, bi, i);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_unvalidated;
    use super::*;

    #[test]
    fn block_without_terminator() {
        let mut p = parse_program("func @main() {\nentry:\n  br next\nnext:\n  ret\n}\n").unwrap();
        p.functions[0].blocks[1].term = None;
        let d = validate(&p);
        assert_eq!(d.len(), 1, "{d:?}");
        assert!(d[0].message.contains("no terminator"));
    }

    #[test]
    fn phi_missing_predecessor() {
        let p = parse_unvalidated(
            "func @main(%c: i64) {\nentry:\n  br %c, a, b\na:\n  br j\nb:\n  br j\nj:\n  %x = phi i64 [1, a]\n  ret %x\n}\n",
        )
        .unwrap();
        let d = validate(&p);
        assert_eq!(d.len(), 1, "{d:?}");
        assert!(d[0].message.contains("predecessors"));
    }

    #[test]
    fn kind_mismatch() {
        let p = parse_unvalidated("func @main() {\nentry:\n  %a = alloca 8\n  %b = add %a, 1\n  ret %b\n}\n")
            .unwrap();
        let d = validate(&p);
        assert_eq!(d.len(), 1, "{d:?}");
        assert!(d[0].message.contains("must be i64"));
        assert_eq!(d[0].location.as_ref().unwrap().index, Some(1));
    }

    #[test]
    fn def_in_sibling_branch_does_not_dominate() {
        let p = parse_unvalidated(
            "func @main(%c: i64) {\nentry:\n  br %c, a, b\na:\n  %x = const 1\n  br j\nb:\n  br j\nj:\n  ret %x\n}\n",
        )
        .unwrap();
        let d = validate(&p);
        assert!(d.iter().any(|d| d.message.contains("use before def")), "{d:?}");
    }

    #[test]
    fn entry_must_exist_and_calls_must_match() {
        let p = parse_unvalidated(
            "func @f(%p: ptr) {\nentry:\n  ret\n}\nfunc @g() {\nentry:\n  call @f(1)\n  call @f()\n  ret\n}\n",
        )
        .unwrap();
        let d = validate(&p);
        assert!(d.iter().any(|d| d.message.contains("entry function")));
        assert!(d.iter().any(|d| d.message.contains("argument 0")));
        assert!(d.iter().any(|d| d.message.contains("takes 1 arguments")));
    }
}
