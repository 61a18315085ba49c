use super::*;

pub(crate) const FUNC12: &str = "\
func @func_1() {
entry:
  %A = alloca 40
  %B = alloca 4
  %ptr = alloca 8
  %a3 = gep %A, 3, scale 4, off 0
  store.i32 [%a3 + 0] = 7
  store.i32 [%B + 0] = 1
  store.ptr [%ptr + 0] = %B
  call @func_2(%ptr)
  %x = load.i32 [%a3 + 0]
  %y = load.i32 [%B + 0]
  %s = add %x, %y
  ret %s
}

func @func_2(%pp: ptr) {
entry:
  %q = load.ptr [%pp + 0]
  %v = load.i32 [%q + 0]
  %w = add %v, 1
  store.i32 [%q + 0] = %w
  ret 0
}

func @main() {
entry:
  %r = call @func_1()
  output %r
  ret %r
}
";

const LISTING1: &str = "\
global @g_ptr : 8

func @listing1(%end: i64) {
entry:
  %buf_lin = alloca 40
  %buf_bad = alloca 40
  %leaked = alloca 16
  br loop
loop:
  %i = phi i64 [0, entry], [%i2, loop]
  %p = gep %buf_lin, %i, scale 4, off 0
  store.i32 [%p + 0] = %i
  %i2 = add %i, 1
  %c = cmp slt %i2, 10
  br %c, loop, after
after:
  %q = gep %buf_bad, %end, scale 4, off 0
  store.i32 [%q + 0] = 1
  store.ptr [@g_ptr + 0] = %leaked
  %r = load.i32 [%buf_lin + 8]
  ret %r
}

func @main() {
entry:
  %r = call @listing1(3)
  ret %r
}
";

const RECURSIVE: &str = "\
func @f(%p: ptr, %n: i64) {
entry:
  %c = cmp sgt %n, 0
  br %c, rec, done
rec:
  %q = gep %p, 1, scale 8, off 0
  %m = sub %n, 1
  call @g(%q, %m)
  br done
done:
  store.i64 [%p + 0] = %n
  ret 0
}

func @g(%p: ptr, %n: i64) {
entry:
  %q = gep %p, 1, scale 8, off 0
  call @f(%q, %n)
  ret 0
}

func @main() {
entry:
  %buf = alloca 64
  call @f(%buf, 3)
  ret 0
}
";

fn run(src: &str) -> AnalysisResult {
    analyze(&parse_program(src).unwrap(), &AnalysisConfig::default())
}

fn class(r: &AnalysisResult, f: &str, a: &str) -> SafetyClass {
    r.alloca_by_name(f, a).unwrap().safety()
}

#[test]
fn func1_a_is_provable_and_pointer_safe() {
    let r = run(FUNC12);
    assert_eq!(
        class(&r, "func_1", "A"),
        SafetyClass {
            class: Class::Provable,
            pointer_safe: true
        }
    );
}

#[test]
fn func1_b_needs_the_module_pass() {
    let p = parse_program(FUNC12).unwrap();
    let local = analyze(
        &p,
        &AnalysisConfig {
            module_pass: false,
            ..Default::default()
        },
    );
    assert_eq!(class(&local, "func_1", "B").class, Class::Unsafe);
    assert_eq!(class(&local, "func_1", "ptr").class, Class::Unsafe);

    let full = analyze(&p, &AnalysisConfig::default());
    assert_eq!(class(&full, "func_1", "B").class, Class::Provable);
    assert_eq!(class(&full, "func_1", "ptr").class, Class::Provable);
    assert!(class(&full, "func_1", "ptr").pointer_safe);
}

#[test]
fn func1_use_info_shape() {
    let p = parse_program(FUNC12).unwrap();
    let facts = Facts::compute(&p.functions[0]);
    let t = run_function_pass(&p, 0, &facts, &AnalysisConfig::default());
    let by = |n: &str| t.uses.iter().find(|u| u.name == n).unwrap();
    assert!(by("A").calls.is_empty() && by("A").stored_in.is_empty());
    assert_eq!(by("A").range, ByteRange::span(12, 16));
    assert_eq!(by("B").stored_in.len(), 1);
    assert_eq!(
        by("ptr").calls.iter().next().unwrap(),
        &CallEntry {
            callee: "func_2".into(),
            param: 0,
            offset: 0
        }
    );

    // After the fixpoint B carries func_2's dereference.
    let r = run(FUNC12);
    let b = r.alloca_by_name("func_1", "B").unwrap();
    assert_eq!(b.range, ByteRange::span(0, 4));
}

#[test]
fn listing1_golden() {
    let r = run(LISTING1);
    let lin = r.alloca_by_name("listing1", "buf_lin").unwrap();
    assert_eq!(lin.class, Class::Guarded);
    let l = lin.linear.as_ref().unwrap();
    assert_eq!(l.max_step, Some(4));
    assert_eq!(l.start_range, ByteRange::span(0, 4));
    assert_eq!(class(&r, "listing1", "buf_bad").class, Class::Unsafe);
    assert_eq!(class(&r, "listing1", "leaked").class, Class::Unsafe);
}

#[test]
fn ptrtoint_escapes() {
    let r = run("func @main() {\nentry:\n  %a = alloca 8\n  %i = ptrtoint %a\n  ret %i\n}\n");
    assert_eq!(class(&r, "main", "a").class, Class::Unsafe);
}

#[test]
fn single_in_bounds_load_is_implicit() {
    let p = parse_program("func @main() {\nentry:\n  %a = alloca 16\n  %v = load.i64 [%a + 0]\n  ret %v\n}\n").unwrap();
    let facts = Facts::compute(&p.functions[0]);
    let t = run_function_pass(&p, 0, &facts, &AnalysisConfig::default());
    assert_eq!(t.uses[0].range, ByteRange::span(0, 8));
    assert!(!t.uses[0].unsafe_);
    let r = analyze(&p, &AnalysisConfig::default());
    assert_eq!(class(&r, "main", "a").class, Class::Implicit);
}

#[test]
fn out_of_bounds_constant_is_unsafe_unless_weakened() {
    let src = "func @main() {\nentry:\n  %a = alloca 8\n  %p = gep %a, 2, scale 4, off 0\n  store.i32 [%p + 0] = 1\n  ret 0\n}\n";
    let p = parse_program(src).unwrap();
    assert_eq!(class(&run(src), "main", "a").class, Class::Unsafe);
    let weak = analyze(
        &p,
        &AnalysisConfig {
            weaken_bounds: true,
            ..Default::default()
        },
    );
    assert_eq!(class(&weak, "main", "a").class, Class::Provable);
}

#[test]
fn struct_model_pointer_safety() {
    // { ptr at 0, buffer at 8..24 }
    let inside = "func @main() {\nentry:\n  %s = alloca 24\n  %x = alloca 8\n  store.ptr [%s + 0] = %x\n  %b = gep %s, 1, scale 1, off 8\n  store.i8 [%b + 0] = 1\n  ret 0\n}\n";
    let r = run(inside);
    assert!(class(&r, "main", "s").pointer_safe);
    let overlap = "func @main() {\nentry:\n  %s = alloca 24\n  %x = alloca 8\n  store.ptr [%s + 0] = %x\n  %b = gep %s, -1, scale 1, off 8\n  store.i8 [%b + 0] = 1\n  ret 0\n}\n";
    let r = run(overlap);
    let s = class(&r, "main", "s");
    assert_eq!(s.class, Class::Provable);
    assert!(!s.pointer_safe);
    // The pointer kept there is now untrustworthy.
    assert_eq!(class(&r, "main", "x").class, Class::Unsafe);
}

#[test]
fn pointer_stored_to_global_is_unsafe() {
    let r = run("global @g : 8\nfunc @main() {\nentry:\n  %a = alloca 8\n  store.ptr [@g + 0] = %a\n  ret 0\n}\n");
    assert_eq!(class(&r, "main", "a").class, Class::Unsafe);
}

#[test]
fn no_calls_converges_in_one_sweep() {
    let r = run("func @main() {\nentry:\n  %a = alloca 8\n  store.i64 [%a + 0] = 1\n  ret 0\n}\n");
    assert_eq!(r.stats.iterations, 1);
    assert_eq!(r.stats.limit_hits, 0);
}

#[test]
fn mutual_recursion_hits_limit() {
    let p = parse_program(RECURSIVE).unwrap();
    for limit in [1, 4, 32] {
        let r = analyze(
            &p,
            &AnalysisConfig {
                limit,
                ..Default::default()
            },
        );
        assert!(r.stats.limit_hits >= 1);
        // One function gives up; the other inherits unsafety through the merge.
        assert!(r.stats.marked_unsafe_by_limit >= 1);
        // Each function is popped at most `limit` times plus the final
        // give-up visits.
        assert!(r.stats.iterations <= (limit as u64 + 2) * p.functions.len() as u64 * 2);
        assert_eq!(class(&r, "main", "buf").class, Class::Unsafe);
        for t in &r.tables[..2] {
            assert!(t.uses.iter().all(|u| u.unsafe_));
        }
    }
}

#[test]
fn tfp_actions() {
    let r = run(FUNC12);
    let load = r
        .tfp
        .iter()
        .find(|s| s.function == "func_2" && s.kind == TfpSiteKind::PtrLoad)
        .unwrap();
    assert_eq!(load.action, TfpAction::Runtime);

    let src = "func @main() {\nentry:\n  %s = alloca 8\n  %u = alloca 8\n  %x = alloca 8\n  store.ptr [%s + 0] = %x\n  %a = load.ptr [%s + 0]\n  %i = ptrtoint %u\n  %b = load.ptr [%u + 0]\n  %c = inttoptr 5\n  ret %i\n}\n";
    let r = run(src);
    let actions: Vec<_> = r.tfp.iter().map(|s| (s.kind, s.action)).collect();
    assert_eq!(
        actions,
        vec![
            (TfpSiteKind::PtrLoad, TfpAction::Elide),
            (TfpSiteKind::PtrLoad, TfpAction::ClearTop),
            (TfpSiteKind::IntToPtr, TfpAction::ClearTop),
        ]
    );
    let off = analyze(
        &parse_program(src).unwrap(),
        &AnalysisConfig {
            static_elision: false,
            ..Default::default()
        },
    );
    assert!(off
        .tfp
        .iter()
        .filter(|s| s.kind == TfpSiteKind::PtrLoad)
        .all(|s| s.action == TfpAction::Runtime));
}

#[test]
fn guarded_step_must_stay_below_guard() {
    let src = |scale: i64| {
        format!(
            "func @main() {{\nentry:\n  %buf = alloca 64\n  br loop\nloop:\n  %i = phi i64 [0, entry], [%i2, loop]\n  %p = gep %buf, %i, scale {scale}, off 0\n  store.i8 [%p + 0] = 1\n  %i2 = add %i, 1\n  %c = cmp slt %i2, 2\n  br %c, loop, done\ndone:\n  ret 0\n}}\n"
        )
    };
    assert_eq!(class(&run(&src(15)), "main", "buf").class, Class::Guarded);
    assert_eq!(class(&run(&src(16)), "main", "buf").class, Class::Unsafe);
    let wide = analyze(
        &parse_program(&src(16)).unwrap(),
        &AnalysisConfig {
            guard_width: 2,
            ..Default::default()
        },
    );
    assert_eq!(class(&wide, "main", "buf").class, Class::Guarded);
}

#[test]
fn conditional_linear_access_is_not_guarded() {
    // The access is skipped on some iterations, so consecutive addresses
    // may differ by more than one step.
    let src = "func @main() {\nentry:\n  %buf = alloca 64\n  br loop\nloop:\n  %i = phi i64 [0, entry], [%i2, latch]\n  %odd = and %i, 1\n  br %odd, body, latch\nbody:\n  %p = gep %buf, %i, scale 4, off 0\n  store.i32 [%p + 0] = 1\n  br latch\nlatch:\n  %i2 = add %i, 1\n  %c = cmp slt %i2, 8\n  br %c, loop, done\ndone:\n  ret 0\n}\n";
    assert_eq!(class(&run(src), "main", "buf").class, Class::Unsafe);
}

#[test]
fn classification_is_deterministic() {
    let p = parse_program(FUNC12).unwrap();
    let a = analyze(&p, &AnalysisConfig::default());
    let mut q = p.clone();
    q.functions.reverse();
    let b = analyze(&q, &AnalysisConfig::default());
    for x in &a.allocas {
        let y = b.alloca_by_name(&x.function, &x.name).unwrap();
        assert_eq!(x.safety(), y.safety());
    }
}


