use super::*;
use std::fmt::Write;

/// Renders a program in canonical text form.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for g in &p.globals {
        write!(out, "global @{} : {}", g.name, g.size).unwrap();
        if let Some(init) = &g.init {
            out.push_str(" = \"");
            for b in init {
                write!(out, "{b:02x}").unwrap();
            }
            out.push('"');
        }
        if let Some(t) = g.tag {
            write!(out, " tag {t}").unwrap();
        }
        out.push('\n');
    }
    for e in &p.externs {
        write!(out, "extern @{}", e.name).unwrap();
        if e.ret_kind == Kind::Ptr {
            out.push_str(" -> ptr");
        }
        out.push('\n');
    }
    if p.entry != "main" {
        writeln!(out, "entry @{}", p.entry).unwrap();
    }
    for (i, f) in p.functions.iter().enumerate() {
        if i > 0 || !p.globals.is_empty() || !p.externs.is_empty() || p.entry != "main" {
            out.push('\n');
        }
        print_function(&mut out, f);
    }
    out
}

fn print_function(out: &mut String, f: &Function) {
    let params: Vec<String> = f
        .params
        .iter()
        .map(|&v| format!("%{}: {}", f.value_name(v), f.value(v).kind))
        .collect();
    write!(out, "func @{}({})", f.name, params.join(", ")).unwrap();
    if f.ret_kind == Kind::Ptr {
        out.push_str(" -> ptr");
    }
    if f.attrs.reset_tags {
        out.push_str(" [reset-tags]");
    }
    out.push_str(" {\n");
    for b in &f.blocks {
        writeln!(out, "{}:", b.label).unwrap();
        for phi in &b.phis {
            let inc: Vec<String> = phi
                .incoming
                .iter()
                .map(|(v, bb)| format!("[{}, {}]", op(f, v), label(f, *bb)))
                .collect();
            writeln!(
                out,
                "  %{} = phi {} {}",
                f.value_name(phi.result),
                phi.kind,
                inc.join(", ")
            )
            .unwrap();
        }
        for inst in &b.insts {
            writeln!(out, "  {}", inst_text(f, inst)).unwrap();
        }
        if let Some(t) = &b.term {
            let s = match t {
                Terminator::Br(bb) => format!("br {}", label(f, *bb)),
                Terminator::CondBr {
                    cond,
                    then_bb,
                    else_bb,
                } => format!(
                    "br {}, {}, {}",
                    op(f, cond),
                    label(f, *then_bb),
                    label(f, *else_bb)
                ),
                Terminator::Ret(None) => "ret".to_string(),
                Terminator::Ret(Some(v)) => format!("ret {}", op(f, v)),
            };
            writeln!(out, "  {s}").unwrap();
        }
    }
    out.push_str("}\n");
}

fn label(f: &Function, b: BlockId) -> &str {
    f.blocks.get(b.index()).map(|b| b.label.as_str()).unwrap_or("?")
}

fn op(f: &Function, o: &Operand) -> String {
    match o {
        Operand::Value(v) => format!("%{}", f.value_name(*v)),
        Operand::Imm(i) => i.to_string(),
        Operand::Null => "null".to_string(),
        Operand::Global(g) => format!("@{g}"),
    }
}

fn addr(f: &Function, base: &Operand, off: i64) -> String {
    if off < 0 {
        format!("[{} - {}]", op(f, base), off.unsigned_abs())
    } else {
        format!("[{} + {}]", op(f, base), off)
    }
}

/// Text of a single body instruction, without indentation.
pub(crate) fn inst_text(f: &Function, inst: &Inst) -> String {
    let res = |v: &ValueId| format!("%{} = ", f.value_name(*v));
    match inst {
        Inst::Alloca { result, size, attr } => {
            let mut s = res(result) + "alloca ";
            match size {
                AllocaSize::Static(n) => s += &n.to_string(),
                AllocaSize::Dynamic { count, elem } => {
                    s += &format!("{}, elem {}", op(f, count), elem)
                }
            }
            match attr {
                SlotAttr::Plain => {}
                SlotAttr::Implicit => s += " implicit",
                SlotAttr::Tagged { high_end: false } => s += " tagged",
                SlotAttr::Tagged { high_end: true } => s += " tagged end",
            }
            s
        }
        Inst::Load {
            result,
            ty,
            addr: a,
            offset,
        } => format!("{}load.{} {}", res(result), ty.name(), addr(f, a, *offset)),
        Inst::Store {
            ty,
            addr: a,
            offset,
            value,
        } => format!("store.{} {} = {}", ty.name(), addr(f, a, *offset), op(f, value)),
        Inst::Gep {
            result,
            base,
            index,
            scale,
            offset,
        } => format!(
            "{}gep {}, {}, scale {}, off {}",
            res(result),
            op(f, base),
            op(f, index),
            scale,
            offset
        ),
        Inst::Call {
            result,
            callee,
            args,
        } => {
            let args: Vec<String> = args.iter().map(|a| op(f, a)).collect();
            let r = result.as_ref().map(res).unwrap_or_default();
            format!("{r}call @{callee}({})", args.join(", "))
        }
        Inst::IntToPtr { result, value } => format!("{}inttoptr {}", res(result), op(f, value)),
        Inst::PtrToInt { result, value } => format!("{}ptrtoint {}", res(result), op(f, value)),
        Inst::Bin {
            result,
            op: o,
            lhs,
            rhs,
        } => format!("{}{} {}, {}", res(result), o.name(), op(f, lhs), op(f, rhs)),
        Inst::Cmp {
            result,
            pred,
            lhs,
            rhs,
        } => format!(
            "{}cmp {} {}, {}",
            res(result),
            pred.name(),
            op(f, lhs),
            op(f, rhs)
        ),
        Inst::Const { result, value } => format!("{}const {}", res(result), op(f, value)),
        Inst::Output { value } => format!("output {}", op(f, value)),
        Inst::Guard { result, size } => format!("{}guard {}", res(result), size),
        Inst::SetTag { addr: a, size } => format!("settag {}, {}", op(f, a), op(f, size)),
        Inst::TagPtr { result, base, tag } => {
            format!("{}tagptr {}, {}", res(result), op(f, base), tag)
        }
        Inst::ClearTopTagBit { result, ptr } => format!("{}cleartag {}", res(result), op(f, ptr)),
        Inst::TfpLoad {
            result,
            loaded,
            addr: a,
            offset,
        } => format!(
            "{}tfp {}, {}",
            res(result),
            op(f, loaded),
            addr(f, a, *offset)
        ),
        Inst::KeepTag { result, ptr, from } => {
            format!("{}keeptag {}, {}", res(result), op(f, ptr), op(f, from))
        }
        Inst::RetagFrame => "retagframe".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_entry_prints_one_ret() {
        let mut f = Function::new("main");
        let mut b = Block::new("entry");
        b.term = Some(Terminator::Ret(None));
        f.blocks.push(b);
        let p = Program {
            globals: vec![],
            externs: vec![],
            functions: vec![f],
            entry: "main".into(),
        };
        assert_eq!(print_program(&p), "func @main() {\nentry:\n  ret\n}\n");
    }

    #[test]
    fn every_instruction_kind_round_trips() {
        let src = "\
global @g : 8 = \"0102\" tag 7
extern @ext -> ptr

func @callee(%p: ptr, %n: i64) -> ptr [reset-tags] {
entry:
  %a = alloca 16
  %d = alloca %n, elem 4
  %t = alloca 32 tagged end
  %s = alloca 16 tagged
  %im = alloca 8 implicit
  %v = load.i32 [%p - 4]
  store.ptr [%a + 8] = %p
  store.i8 [@g + 1] = -3
  %q = gep %p, %n, scale -4, off 12
  %x = inttoptr %n
  %y = ptrtoint %q
  %b = xor %y, 16
  %c = cmp ult %b, %v
  %k = const -9223372036854775808
  %z = const null
  %e = call @ext(%p, 3)
  call @callee(%z, %k)
  output %c
  %gd = guard 16
  settag %t, 32
  settag %d, %n
  %tp = tagptr %s, 5
  %ct = cleartag %e
  %tf = tfp %e, [%a + 8]
  %kt = keeptag %q, %p
  retagframe
  br %c, loop, done
loop:
  %i = phi i64 [0, entry], [%i2, loop]
  %i2 = add %i, 1
  %lt = cmp slt %i2, 10
  br %lt, loop, done
done:
  ret %x
}

func @main() {
entry:
  ret
}
";
        let p1 = parse_program(src).unwrap();
        let text = print_program(&p1);
        let p2 = parse_program(&text).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(print_program(&p2), text);
        assert_eq!(text, src);
    }
}
