use super::*;
use crate::analysis::{analyze, AnalysisConfig, TfpAction};
use crate::ir::*;
use crate::mte::{GUARD_TAG, UNSAFE_TAGS};

const GUARDED_ALONE: &str = "\
func @main() {
entry:
  %buf = alloca 64
  br loop
loop:
  %i = phi i64 [0, entry], [%i2, loop]
  %p = gep %buf, %i, scale 4, off 0
  store.i32 [%p + 0] = %i
  %i2 = add %i, 1
  %c = cmp slt %i2, 16
  br %c, loop, done
done:
  ret 0
}
";

const GUARDED_NEXT_TO_UNSAFE: &str = "\
func @f(%n: i64) {
entry:
  %buf = alloca 64
  %bad = alloca 16
  br loop
loop:
  %i = phi i64 [0, entry], [%i2, loop]
  %p = gep %buf, %i, scale 4, off 0
  store.i32 [%p + 0] = %i
  %i2 = add %i, 1
  %c = cmp slt %i2, 16
  br %c, loop, done
done:
  %q = gep %bad, %n, scale 1, off 0
  store.i8 [%q + 0] = 1
  ret 0
}

func @main() {
entry:
  %r = call @f(3)
  ret %r
}
";

const THREE_UNSAFE: &str = "\
func @f(%n: i64) {
entry:
  %a = alloca 8
  %b = alloca 8
  %c = alloca 1
  %pa = gep %a, %n, scale 1, off 0
  store.i8 [%pa + 0] = 1
  %pb = gep %b, %n, scale 1, off 0
  store.i8 [%pb + 0] = 1
  %pc = gep %c, %n, scale 1, off 0
  store.i8 [%pc + 0] = 1
  ret 0
}

func @main() {
entry:
  %r = call @f(0)
  ret %r
}
";

fn build(src: &str) -> (Program, AnalysisResult, Instrumented) {
    let p = parse_program(src).unwrap();
    let r = analyze(&p, &AnalysisConfig::default());
    let i = instrument(&p, &r, &InstrumentConfig::default()).unwrap();
    (p, r, i)
}

fn statics(l: &FrameLayout) -> Vec<&FrameSlot> {
    l.slots.iter().filter(|s| s.offset.is_some()).collect()
}

#[test]
fn lone_guarded_buffer_gets_a_guard_on_each_side() {
    let (_, _, i) = build(GUARDED_ALONE);
    let l = i.plan.frame("main").unwrap();
    let s = statics(l);
    let names: Vec<&str> = s.iter().map(|s| s.slot.name()).collect();
    assert_eq!(names, ["guard0", "buf", "guard1"]);
    assert!(s[0].slot.is_guard() && s[2].slot.is_guard());
    assert_eq!(s[1].tag, SAFE_DEFAULT);
    assert_eq!(s[0].tag, GUARD_TAG);
    assert_ne!(s[0].tag, s[1].tag);
    assert_eq!(s[1].attr, SlotAttr::Tagged { high_end: true });
    assert!(validate_plan(&i.plan).is_empty(), "{:?}", validate_plan(&i.plan));
}

#[test]
fn unsafe_neighbour_replaces_a_guard() {
    let (_, r, i) = build(GUARDED_NEXT_TO_UNSAFE);
    assert_eq!(r.alloca_by_name("f", "buf").unwrap().class, Class::Guarded);
    assert_eq!(r.alloca_by_name("f", "bad").unwrap().class, Class::Unsafe);
    let l = i.plan.frame("f").unwrap();
    let names: Vec<&str> = statics(l).iter().map(|s| s.slot.name()).collect();
    assert_eq!(names, ["guard0", "buf", "bad"]);
    assert!(validate_plan(&i.plan).is_empty());
}

#[test]
fn one_byte_unsafe_slot_is_padded_to_a_granule() {
    let (p, _, i) = build(THREE_UNSAFE);
    let c = i.plan.frame("f").unwrap().slot("c").unwrap();
    assert_eq!(c.padded_size, Some(16));
    assert_eq!(c.offset.unwrap() % 16, 0);
    assert_eq!(plain_frame_bytes(&p.functions[0]), 17);
    assert_eq!(i.plan.frame("f").unwrap().frame_bytes, 48);
}

#[test]
fn adjacent_unsafe_slots_alternate() {
    let (_, _, i) = build(THREE_UNSAFE);
    let tags: Vec<u8> = ["a", "b", "c"]
        .iter()
        .map(|n| i.plan.tag_of("f", n).unwrap().tag)
        .collect();
    assert_eq!(tags, [0b0001, 0b0010, 0b0001]);
    for t in tags {
        assert!(UNSAFE_TAGS.contains(&t));
    }
}

#[test]
fn provable_tags_follow_pointer_safety() {
    let src = "func @main() {\nentry:\n  %s = alloca 24\n  %x = alloca 8\n  store.ptr [%s + 0] = %x\n  %b = gep %s, -1, scale 1, off 8\n  store.i8 [%b + 0] = 1\n  %y = alloca 8\n  %z = gep %y, 0, scale 1, off 4\n  store.i32 [%z + 0] = 2\n  ret 0\n}\n";
    let (_, r, i) = build(src);
    let s = r.alloca_by_name("main", "s").unwrap().safety();
    assert_eq!((s.class, s.pointer_safe), (Class::Provable, false));
    assert_eq!(i.plan.tag_of("main", "s").unwrap().tag, 0b1000);
    let y = r.alloca_by_name("main", "y").unwrap().safety();
    assert_eq!((y.class, y.pointer_safe), (Class::Provable, true));
    assert_eq!(i.plan.tag_of("main", "y").unwrap().tag, 0b1100);
}

fn count(f: &Function, pred: impl Fn(&Inst) -> bool) -> usize {
    f.blocks.iter().flat_map(|b| &b.insts).filter(|i| pred(i)).count()
}

#[test]
fn one_unsafe_slot_is_tagged_once_and_reset_once() {
    let src = "func @f(%n: i64) {\nentry:\n  %a = alloca 8\n  %p = gep %a, %n, scale 1, off 0\n  store.i8 [%p + 0] = 1\n  ret 0\n}\n\nfunc @main() {\nentry:\n  %r = call @f(1)\n  ret %r\n}\n";
    let (_, _, i) = build(src);
    let f = i.program.function("f").unwrap();
    let entry = &f.blocks[0].insts;
    assert!(matches!(entry[0], Inst::Alloca { attr: SlotAttr::Tagged { .. }, .. }));
    assert!(matches!(entry[1], Inst::TagPtr { tag: 0b0001, .. }));
    assert!(matches!(entry[2], Inst::SetTag { .. }));
    assert_eq!(count(f, |i| matches!(i, Inst::SetTag { .. })), 2);
    assert!(matches!(entry.last(), Some(Inst::SetTag { .. })));
    assert!(!f.attrs.reset_tags);
    // Uses of the slot go through the tagged pointer.
    let tagged = f.values.iter().position(|v| v.name == "a.tag").unwrap();
    assert!(f.blocks[0].insts.iter().any(|i| matches!(i,
        Inst::Gep { base: Operand::Value(v), .. } if v.index() == tagged)));
}

#[test]
fn dynamic_alloca_retags_the_frame() {
    let src = "func @f(%n: i64) {\nentry:\n  %a = alloca %n, elem 4\n  store.i32 [%a + 0] = 1\n  ret 0\n}\n\nfunc @main() {\nentry:\n  %r = call @f(2)\n  ret %r\n}\n";
    let (_, _, i) = build(src);
    let f = i.program.function("f").unwrap();
    assert!(f.attrs.reset_tags);
    assert_eq!(count(f, |i| matches!(i, Inst::RetagFrame)), 1);
    assert!(matches!(f.blocks[0].insts.last(), Some(Inst::RetagFrame)));
    assert_eq!(count(f, |i| matches!(i, Inst::Bin { op: BinOp::Mul, .. })), 1);
    assert_eq!(count(f, |i| matches!(i, Inst::TagPtr { tag: crate::mte::DYNAMIC_TAG, .. })), 1);
}

const NULL_CHECK: &str = "\
global @gp : 8

func @main() {
entry:
  %x = alloca 8
  %p = load.ptr [@gp + 0]
  %c = cmp eq %p, null
  br %c, none, some
some:
  %v = load.i64 [%p + 0]
  output %v
  br none
none:
  ret 0
}
";

#[test]
fn loaded_pointer_keeps_its_original_value_in_comparisons() {
    let (_, r, i) = build(NULL_CHECK);
    let site = r.tfp.iter().find(|s| s.kind == crate::analysis::TfpSiteKind::PtrLoad).unwrap();
    assert_eq!(site.action, TfpAction::ClearTop);
    let f = i.program.function("main").unwrap();
    let p = f.values.iter().position(|v| v.name == "p").unwrap() as u32;
    let ptfp = f.values.iter().position(|v| v.name == "p.tfp").unwrap() as u32;
    for b in &f.blocks {
        for inst in &b.insts {
            match inst {
                Inst::Cmp { lhs, .. } => assert_eq!(lhs, &Operand::Value(ValueId(p))),
                Inst::Load { addr, .. } if addr != &Operand::Global("gp".into()) => {
                    assert_eq!(addr, &Operand::Value(ValueId(ptfp)))
                }
                _ => {}
            }
        }
    }
}

#[test]
fn runtime_tfp_without_elision() {
    let p = parse_program(NULL_CHECK).unwrap();
    let r = analyze(
        &p,
        &AnalysisConfig {
            static_elision: false,
            ..Default::default()
        },
    );
    let i = instrument(&p, &r, &InstrumentConfig::default()).unwrap();
    let f = i.program.function("main").unwrap();
    assert_eq!(count(f, |i| matches!(i, Inst::TfpLoad { .. })), 1);
    assert_eq!(count(f, |i| matches!(i, Inst::ClearTopTagBit { .. })), 0);
}

#[test]
fn gep_and_inttoptr_are_hardened() {
    let src = "func @main(%k: i64) {\nentry:\n  %a = alloca 16\n  %p = gep %a, %k, scale 8, off 0\n  store.i64 [%p + 0] = 1\n  %q = inttoptr %k\n  %v = load.i64 [%q + 0]\n  ret %v\n}\n";
    let (_, _, i) = build(src);
    let f = i.program.function("main").unwrap();
    assert_eq!(count(f, |i| matches!(i, Inst::KeepTag { .. })), 1);
    assert_eq!(count(f, |i| matches!(i, Inst::ClearTopTagBit { .. })), 1);
    let kt = f.values.iter().position(|v| v.name == "p.kt").unwrap() as u32;
    assert!(f.blocks[0].insts.iter().any(|i| matches!(i,
        Inst::Store { addr: Operand::Value(ValueId(v)), .. } if *v == kt)));
}

#[test]
fn instrumenting_twice_is_rejected() {
    let (_, _, i) = build(THREE_UNSAFE);
    let r = analyze(&i.program, &AnalysisConfig::default());
    assert!(matches!(
        instrument(&i.program, &r, &InstrumentConfig::default()),
        Err(InstrumentError::AlreadyInstrumented)
    ));
    // Also after a trip through text.
    let again = parse_program(&print_program(&i.program)).unwrap();
    let r = analyze(&again, &AnalysisConfig::default());
    assert!(instrument(&again, &r, &InstrumentConfig::default()).is_err());
}

#[test]
fn instrumented_text_round_trips() {
    for src in [GUARDED_ALONE, GUARDED_NEXT_TO_UNSAFE, THREE_UNSAFE, NULL_CHECK] {
        let (_, _, i) = build(src);
        let text = print_program(&i.program);
        let once = parse_program(&text).unwrap();
        assert_eq!(print_program(&once), text);
        assert_eq!(parse_program(&print_program(&once)).unwrap(), once);
    }
}

#[test]
fn overhead_is_monotone() {
    for src in [GUARDED_ALONE, GUARDED_NEXT_TO_UNSAFE, THREE_UNSAFE, NULL_CHECK] {
        let (p, _, i) = build(src);
        assert!(i.program.instruction_count() >= p.instruction_count());
        for (f, l) in p.functions.iter().zip(&i.plan.frames) {
            assert!(l.frame_bytes >= plain_frame_bytes(f));
        }
    }
}

#[test]
fn validator_catches_broken_plans() {
    let (_, _, i) = build(GUARDED_ALONE);
    let mut bad = i.plan.clone();
    bad.frames[0].slots.retain(|s| !s.slot.is_guard() || s.slot.name() != "guard1");
    assert_eq!(validate_plan(&bad).len(), 1);
    let mut bad = i.plan.clone();
    bad.frames[0].slots[0].tag = 0;
    assert!(!validate_plan(&bad).is_empty());
    let mut bad = i.plan.clone();
    let buf = bad.frames[0].slots.iter_mut().find(|s| s.slot.name() == "buf").unwrap();
    buf.tag = 0b0001;
    assert!(!validate_plan(&bad).is_empty());
}
