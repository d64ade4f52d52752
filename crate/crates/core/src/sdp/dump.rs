use std::fmt::Write;

use super::{SdpProblem, Strictness, VarKind};

/// Plain-text sparse dump of an assembled problem.
///
/// ```text
/// var <name> <sym|rect|scalar> <rows> <cols> <offset>
/// lmi <name> <size> <strict|nonstrict>
/// <j> <row> <col> <value>        (j = 0 constant, j = i + 1 for scalar i; upper triangle)
/// eq <name> <constant>
/// <i> <value>
/// ```
///
/// Indices are zero based; floats use Rust's shortest round-trip format.
pub fn dump_triplets(problem: &SdpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scalars {}", problem.scalar_count());
    for decl in problem.vars() {
        let (r, c) = decl.var.shape();
        let kind = match decl.var.kind() {
            VarKind::Symmetric(_) => "sym",
            VarKind::Rect(..) => "rect",
            VarKind::Scalar => "scalar",
        };
        let _ = writeln!(out, "var {} {kind} {r} {c} {}", decl.name, decl.var.offset());
    }
    for block in problem.lmis() {
        let strict = match block.strictness {
            Strictness::Strict => "strict",
            Strictness::NonStrict => "nonstrict",
        };
        let _ = writeln!(out, "lmi {} {} {strict}", block.name, block.size);
        for r in 0..block.size {
            for c in r..block.size {
                let v = block.constant[(r, c)];
                if v != 0.0 {
                    let _ = writeln!(out, "0 {r} {c} {v:?}");
                }
            }
        }
        for (i, entries) in &block.coeffs {
            let mut upper: Vec<_> = entries.iter().filter(|(r, c, _)| r <= c).collect();
            upper.sort_by_key(|&&(r, c, _)| (r, c));
            for &(r, c, v) in upper {
                let _ = writeln!(out, "{} {r} {c} {v:?}", i + 1);
            }
        }
    }
    for eq in problem.equalities() {
        let _ = writeln!(out, "eq {} {:?}", eq.name, eq.constant);
        for &(i, v) in &eq.coeffs {
            let _ = writeln!(out, "{i} {v:?}");
        }
    }
    out
}
