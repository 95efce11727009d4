use nondiff_svi::frontend::{parse, validate, BinOp, CmpOp, Cond, Dist, Expr, Span, Stmt, StmtKind};
use nondiff_svi::{compile_program, DataTable, Model, SourceProgram};
use proptest::prelude::*;

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.0..10.0f64).prop_map(|x| Expr::Num((x * 100.0).round() / 100.0)),
        prop_oneof![Just("a"), Just("b")].prop_map(Expr::var),
        (0usize..3).prop_map(|index| Expr::Data { key: "y".into(), index }),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        let op = prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div)];
        prop_oneof![
            // the parser reads `-2.5` as a literal
            inner.clone().prop_map(|e| match e {
                Expr::Num(x) => Expr::Num(-x),
                e => Expr::Neg(Box::new(e)),
            }),
            inner.clone().prop_map(|e| Expr::Exp(Box::new(e))),
            inner.clone().prop_map(|e| Expr::Log(Box::new(e))),
            (op, inner.clone(), inner).prop_map(|(op, a, b)| Expr::bin(op, a, b)),
        ]
    })
}

fn stmt(kind: StmtKind) -> Stmt {
    Stmt {
        kind,
        span: Span::default(),
    }
}

fn dist() -> impl Strategy<Value = Dist> {
    prop_oneof![
        (expr(), expr()).prop_map(|(mean, sd)| Dist::Normal { mean, sd }),
        expr().prop_map(|rate| Dist::Poisson { rate }),
    ]
}

fn body() -> impl Strategy<Value = Vec<Stmt>> {
    let simple = prop_oneof![
        (dist(), expr()).prop_map(|(dist, value)| stmt(StmtKind::Observe { dist, value })),
        expr().prop_map(|expr| stmt(StmtKind::Let { name: "c".into(), expr })),
    ];
    let block = prop::collection::vec(simple, 0..3);
    block.prop_recursive(3, 12, 3, |inner| {
        let op = prop_oneof![Just(CmpOp::Gt), Just(CmpOp::Le)];
        (expr(), op, expr(), inner.clone(), inner.clone(), inner).prop_map(|(lhs, op, rhs, t, e, mut rest)| {
            rest.insert(
                0,
                stmt(StmtKind::If {
                    cond: Cond { lhs, op, rhs },
                    then_block: t,
                    else_block: e,
                }),
            );
            rest
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn printing_then_parsing_is_the_identity(prior in expr(), rest in body()) {
        let mut statements = vec![
            stmt(StmtKind::Sample { name: "a".into(), dist: Dist::Normal { mean: Expr::Num(0.0), sd: Expr::Num(1.0) } }),
            stmt(StmtKind::Sample { name: "b".into(), dist: Dist::Normal { mean: prior, sd: Expr::Num(2.0) } }),
        ];
        statements.extend(rest);
        let ast = nondiff_svi::frontend::Ast { statements };
        let text = ast.to_string();
        let reparsed = parse(&SourceProgram::inline(text.clone())).unwrap();
        prop_assert_eq!(&reparsed, &ast, "{}", text);
        prop_assert_eq!(reparsed.to_string(), text);
    }
}

fn compile(src: &str) -> Model {
    compile_program(&SourceProgram::inline(src), &DataTable::new()).unwrap()
}

#[test]
fn formatting_does_not_change_the_model() {
    let dense = "a~sample normal(0,1);b~sample normal(a,2);if(a+2*b>1){observe normal(b,1)=0.5;}else{}";
    let spaced = "a ~ sample normal(0, 1);\n\nb ~ sample normal(a, 2);\nif (a + 2 * b > 1) {\n  observe normal(b, 1) = 0.5;\n} else {\n}\n";
    let (m1, m2) = (compile(dense), compile(spaced));
    assert_eq!(parse(&SourceProgram::inline(dense)).unwrap(), parse(&SourceProgram::inline(spaced)).unwrap());
    for z in [[0.3, -0.2], [1.5, 0.9], [-2.0, 3.0]] {
        assert_eq!(m1.log_density(&z).unwrap(), m2.log_density(&z).unwrap());
    }
}

#[test]
fn conditions_normalize_to_affine_form() {
    let ast = parse(&SourceProgram::inline(
        "a ~ sample normal(0, 1); b ~ sample normal(0, 1); let c = 2 * a - b;
         if (c + 1 <= b / 2) { observe normal(a, 1) = 0; } else {}",
    ))
    .unwrap();
    let v = validate(&ast).unwrap();
    assert_eq!((v.latent_dim(), v.branch_count()), (2, 1));
    let m = compile("a ~ sample normal(0, 1); b ~ sample normal(0, 1); let c = 2 * a - b;
         if (c + 1 <= b / 2) { observe normal(a, 1) = 0; } else {}");
    // c + 1 − b/2 = 2a − 1.5b + 1; the then-branch is its non-positive side
    let cond = m.condition(0);
    let scale = cond.coeffs[0] / 2.0;
    assert!((cond.coeffs[1] / scale + 1.5).abs() < 1e-12);
    assert!((cond.offset / scale - 1.0).abs() < 1e-12);
}

#[test]
fn syntax_errors_point_at_the_offending_token() {
    let err = parse(&SourceProgram::new("a ~ sample normal(0, 1);\nobserve normal(a 1) = 0;", "bad.ppl")).unwrap_err();
    assert_eq!((err.line, err.col), (2, 18));
    assert!(err.to_string().starts_with("bad.ppl:2:18:"), "{err}");
}

#[test]
fn invalid_programs_are_rejected() {
    for src in [
        "a ~ sample normal(0, 1); a ~ sample normal(0, 1);",
        "a ~ sample poisson(3);",
        "a ~ sample normal(0, 1); if (a * a > 1) { observe normal(a, 1) = 0; } else {}",
        "a ~ sample normal(0, 1); if (a > 0) { b ~ sample normal(0, 1); } else {}",
        "observe normal(x, 1) = 0;",
    ] {
        let ast = parse(&SourceProgram::inline(src)).unwrap();
        assert!(validate(&ast).is_err(), "{src}");
    }
}
